//! The staged pipeline behind the subcommands. Each stage reads the
//! artifacts of earlier stages from the output directory and writes its
//! own; stages never modify their inputs.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use bsynth_core::downstream::{run_scenario_with, Executor, ScenarioId, ScenarioReport, UserJobResult};
use bsynth_core::fidelity::fidelity_report_with;
use bsynth_core::privacy::{
    epsilon_audit, membership_overlap_samples, mia_attack, mia_features, uniqueness_audit, ClassifierId,
    MIN_CLASS_SAMPLES,
};
use bsynth_core::prompt::{generate_user, pass_at_1, AttemptTranscript, BackendError, GenerationRecord, Generator};
use bsynth_core::sim::{fixture_profiles, simulate_population};
use bsynth_core::split::{segment_weekly, split_population_individual};
use bsynth_core::{rng, BehaviorSequence, Dataset, Provenance, SplitTag, Vocabularies};

use crate::backend::{build_backend, BackendKind, ReplayRecord};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats::{
    append_jsonl, load_dataset, profile_file, read_json, save_dataset, write_atomic, write_events, write_json,
    write_jsonl, DatasetPaths, Format, VocabFile,
};
use crate::report::{self, FidelityDocument, MiaSummary, PrivacyDocument, UniquenessSummary};

/// Writes the effective configuration next to the outputs.
pub fn archive_config(cfg: &RunConfig) -> Result<()> {
    match cfg.to_toml() {
        Ok(text) => write_atomic(&cfg.output_dir.join("run_config.toml"), text.as_bytes()),
        Err(e) => {
            log::warn!("effective configuration not archived: {e}");
            Ok(())
        }
    }
}

/// Where `simulate` writes; never the configured input files.
pub fn simulated_paths(cfg: &RunConfig) -> DatasetPaths {
    let dir = cfg.output_dir.join("real");
    DatasetPaths {
        events: dir.join("events.csv"),
        profiles: dir.join("profiles.json"),
        vocab: Some(dir.join("vocab.json")),
    }
}

pub fn simulate(cfg: &RunConfig) -> Result<Dataset> {
    let v = Vocabularies::default_fixture();
    let sim = cfg.sim_config();
    let profiles = fixture_profiles(cfg.simulation.users, &v, &sim.archetype_table, cfg.seed)?;
    let d = simulate_population(&profiles, &v, &sim)?;
    if !cfg.uses_simulated_data() {
        log::warn!("data.events is set; the simulated dataset will not be used by later stages");
    }
    save_dataset(&simulated_paths(cfg), &d)?;
    Ok(d)
}

pub fn load_real(cfg: &RunConfig) -> Result<Dataset> {
    let paths = cfg.real_paths();
    if !paths.events.exists() {
        return Err(Error::data(
            &paths.events,
            "real dataset not found; run `simulate` or set data.events",
        ));
    }
    load_dataset(&paths, cfg.data.format, cfg.data.strict, Provenance::Real)
}

/// User-level roles for one run.
#[derive(Debug, Clone)]
pub struct Partition {
    pub population: Dataset,
    pub individual: Dataset,
    /// Population users withheld from generation.
    pub holdout: BTreeSet<String>,
}

impl Partition {
    /// Population users minus the holdout, then individual users.
    pub fn generated(&self) -> Vec<&BehaviorSequence> {
        self.population
            .sequences()
            .iter()
            .filter(|s| !self.holdout.contains(s.user_id()))
            .chain(self.individual.sequences())
            .collect()
    }

    pub fn is_generated(&self, user_id: &str) -> bool {
        !self.holdout.contains(user_id)
    }
}

pub fn partition(cfg: &RunConfig, real: &Dataset) -> Result<Partition> {
    let (population, individual) = split_population_individual(real, &cfg.split, cfg.seed)?;
    let mut ids: Vec<&str> = population.sequences().iter().map(BehaviorSequence::user_id).collect();
    ids.sort_unstable();
    let mut r = rng::seeded(rng::mix(cfg.seed, rng::fnv1a("holdout")));
    rng::shuffle(&mut r, &mut ids);
    let holdout = ids[..cfg.privacy.holdout_users].iter().map(|s| s.to_string()).collect();
    Ok(Partition {
        population,
        individual,
        holdout,
    })
}

fn subset(d: &Dataset, keep: impl Fn(&str) -> bool) -> Result<Dataset> {
    let seqs = d.sequences().iter().filter(|s| keep(s.user_id())).cloned().collect();
    Ok(Dataset::new(d.vocabularies().clone(), seqs, d.split_tag())?)
}

/// Per-user outcome of one generation run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub user_id: String,
    pub run_index: u32,
    pub attempts: u32,
    pub first_attempt_valid: bool,
    pub failed_segments: Vec<u32>,
    pub dropped_duplicates: usize,
    pub events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationIndex {
    pub backend: BackendKind,
    pub runs: u32,
    /// Pass@1 of each run.
    pub pass1: Vec<f64>,
    pub users: Vec<GenerationSummary>,
}

impl GenerationIndex {
    /// Records of one run in the shape the core metrics expect.
    pub fn records(&self, run: u32) -> Vec<GenerationRecord> {
        self.users
            .iter()
            .filter(|u| u.run_index == run)
            .map(|u| GenerationRecord {
                user_id: u.user_id.clone(),
                attempts: u.attempts,
                first_attempt_valid: u.first_attempt_valid,
                final_sequence: None,
                reports: Vec::new(),
                failed_segments: u.failed_segments.clone(),
                dropped_duplicates: u.dropped_duplicates,
            })
            .collect()
    }
}

#[derive(Serialize)]
struct AuditEntry<'a> {
    backend: BackendKind,
    #[serde(flatten)]
    transcript: &'a AttemptTranscript,
}

type JobOutput = std::result::Result<(GenerationRecord, Vec<AttemptTranscript>), BackendError>;

/// Runs `f` for every index on up to `workers` threads; results come back
/// in index order. Once `f` reports failure no new indices are started.
fn parallel_map<T: Send>(n: usize, workers: usize, f: impl Fn(usize) -> (T, bool) + Sync) -> Vec<Option<T>> {
    let slots: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let (out, failed) = f(i);
                if failed {
                    stop.store(true, Ordering::SeqCst);
                }
                *slots[i].lock().expect("result slot") = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("result slot"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutcome {
    pub index: GenerationIndex,
    pub runs: Vec<Dataset>,
}

/// Generates every non-holdout user `privacy.runs` times with the
/// configured backend.
pub fn generate(cfg: &RunConfig, record_replay: Option<&Path>) -> Result<GenerationOutcome> {
    let real = load_real(cfg)?;
    let backend = build_backend(&cfg.backend, cfg.seed, real.vocabularies())?;
    generate_with(cfg, &real, &*backend, record_replay)
}

/// [`generate`] with an explicit backend and real dataset.
pub fn generate_with(
    cfg: &RunConfig,
    real: &Dataset,
    backend: &(dyn Generator + Sync),
    record_replay: Option<&Path>,
) -> Result<GenerationOutcome> {
    let part = partition(cfg, real)?;
    let users = part.generated();
    let vocab = real.vocabularies();
    let policy = &cfg.generation;
    let runs = cfg.privacy.runs;
    let jobs: Vec<(u32, &BehaviorSequence)> = (0..runs).flat_map(|r| users.iter().map(move |u| (r, *u))).collect();
    log::info!(
        "generating {} users x {runs} run(s) with {:?}",
        users.len(),
        cfg.backend.kind
    );

    let outputs: Vec<Option<JobOutput>> = parallel_map(jobs.len(), cfg.backend.max_inflight, |i| {
        let (run, seq) = jobs[i];
        let Some(seed) = segment_weekly(seq).into_iter().next() else {
            let rec = GenerationRecord {
                user_id: seq.user_id().into(),
                attempts: 0,
                first_attempt_valid: false,
                final_sequence: None,
                reports: Vec::new(),
                failed_segments: (0..policy.target_weeks).collect(),
                dropped_duplicates: 0,
            };
            return (Ok((rec, Vec::new())), false);
        };
        let mut transcripts = Vec::new();
        let out = generate_user(
            backend,
            seq.user_id(),
            seq.profile(),
            &seed,
            vocab,
            policy,
            run,
            &mut |t| transcripts.push(t),
        );
        let failed = out.is_err();
        (out.map(|r| (r, transcripts)), failed)
    });

    let mut audit: Vec<AttemptTranscript> = Vec::new();
    let mut records: Vec<(u32, GenerationRecord)> = Vec::new();
    let mut first_error = None;
    for (job, out) in jobs.iter().zip(outputs) {
        match out {
            Some(Ok((rec, ts))) => {
                audit.extend(ts);
                records.push((job.0, rec));
            }
            Some(Err(e)) => {
                first_error.get_or_insert((job.1.user_id().to_string(), e));
            }
            None => {}
        }
    }
    let entries: Vec<AuditEntry<'_>> = audit
        .iter()
        .map(|t| AuditEntry {
            backend: cfg.backend.kind,
            transcript: t,
        })
        .collect();
    append_jsonl(&cfg.audit_log_path(), &entries)?;
    if let Some((user, e)) = first_error {
        log::error!("generation for user {user} failed: {e}");
        return Err(e.into());
    }
    if let Some(path) = record_replay {
        let replay: Vec<ReplayRecord> = audit
            .iter()
            .map(|t| ReplayRecord {
                run_index: t.run_index,
                user_id: t.user_id.clone(),
                segment_index: t.segment_index,
                response: t.response.clone(),
            })
            .collect();
        write_jsonl(path, &replay)?;
    }

    let mut datasets = Vec::with_capacity(runs as usize);
    let mut pass1 = Vec::with_capacity(runs as usize);
    for run in 0..runs {
        let run_records: Vec<GenerationRecord> = records
            .iter()
            .filter(|(r, _)| *r == run)
            .map(|(_, rec)| rec.clone())
            .collect();
        pass1.push(pass_at_1(&run_records)?);
        let seqs: Vec<BehaviorSequence> = run_records.iter().filter_map(|r| r.final_sequence.clone()).collect();
        for r in run_records.iter().filter(|r| r.final_sequence.is_none()) {
            log::warn!("run {run}: no valid output for user {}", r.user_id);
        }
        datasets.push(Dataset::new(vocab.clone(), seqs, SplitTag::Unsplit)?);
    }
    let index = GenerationIndex {
        backend: cfg.backend.kind,
        runs,
        pass1,
        users: records
            .iter()
            .map(|(run, r)| GenerationSummary {
                user_id: r.user_id.clone(),
                run_index: *run,
                attempts: r.attempts,
                first_attempt_valid: r.first_attempt_valid,
                failed_segments: r.failed_segments.clone(),
                dropped_duplicates: r.dropped_duplicates,
                events: r.final_sequence.as_ref().map_or(0, BehaviorSequence::len),
            })
            .collect(),
    };

    let profiles = profile_file(&subset(real, |id| part.is_generated(id))?);
    for (run, d) in datasets.iter().enumerate() {
        write_events(&cfg.synth_paths(run as u32).events, d)?;
    }
    let paths = cfg.synth_paths(0);
    write_json(&paths.profiles, &profiles)?;
    write_json(
        paths.vocab.as_ref().expect("synthetic vocab path"),
        &VocabFile::new(vocab),
    )?;
    write_json(&cfg.generation_records_path(), &index)?;
    Ok(GenerationOutcome { index, runs: datasets })
}

pub fn load_generation_index(cfg: &RunConfig) -> Result<GenerationIndex> {
    let path = cfg.generation_records_path();
    if !path.exists() {
        return Err(Error::data(&path, "generation records not found; run `generate` first"));
    }
    read_json(&path)
}

/// Loads one synthetic run against the real vocabulary.
pub fn load_synth(cfg: &RunConfig, run: u32, real: &Dataset) -> Result<Dataset> {
    let paths = cfg.synth_paths(run);
    if !paths.events.exists() {
        return Err(Error::data(
            &paths.events,
            "synthetic run not found; run `generate` first",
        ));
    }
    let d = load_dataset(&paths, Format::Csv, true, Provenance::Synthetic)?;
    if d.vocabularies() != real.vocabularies() {
        return Err(Error::data(
            &paths.events,
            "synthetic vocabulary differs from the real one",
        ));
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileSummary {
    pub path: PathBuf,
    pub users: usize,
    pub events: usize,
}

/// Strictly reloads the real dataset and every synthetic run present.
pub fn validate(cfg: &RunConfig) -> Result<Vec<FileSummary>> {
    let real = load_real(cfg)?;
    let mut out = vec![FileSummary {
        path: cfg.real_paths().events,
        users: real.user_count(),
        events: real.event_count(),
    }];
    let strict_real = load_dataset(&cfg.real_paths(), cfg.data.format, true, Provenance::Real)?;
    debug_assert_eq!(strict_real.user_count(), real.user_count());
    for run in 0..cfg.privacy.runs {
        let paths = cfg.synth_paths(run);
        if !paths.events.exists() {
            continue;
        }
        let d = load_synth(cfg, run, &real)?;
        out.push(FileSummary {
            path: paths.events,
            users: d.user_count(),
            events: d.event_count(),
        });
    }
    write_json(&cfg.reports_dir().join("validation.json"), &out)?;
    Ok(out)
}

fn write_report(cfg: &RunConfig, name: &str, text: &str) -> Result<PathBuf> {
    let path = cfg.reports_dir().join(name);
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

/// Fidelity of run 0 against the real sequences of the generated users.
pub fn fidelity(cfg: &RunConfig) -> Result<FidelityDocument> {
    let real = load_real(cfg)?;
    let part = partition(cfg, &real)?;
    let synth = load_synth(cfg, 0, &real)?;
    let index = load_generation_index(cfg)?;
    let members = subset(&real, |id| part.is_generated(id))?;
    let metrics = fidelity_report_with(&members, &synth, &index.records(0), cfg.fidelity.ks_mode)?;
    let doc = FidelityDocument {
        synthetic_users: synth.user_count(),
        real_users: members.user_count(),
        metrics,
    };
    write_report(cfg, report::FIDELITY_FILE, &report::render_fidelity(&doc))?;
    Ok(doc)
}

/// Uniqueness, membership inference and ε over all generation runs.
pub fn privacy(cfg: &RunConfig) -> Result<PrivacyDocument> {
    let real = load_real(cfg)?;
    let part = partition(cfg, &real)?;
    let runs = (0..cfg.privacy.runs)
        .map(|r| load_synth(cfg, r, &real))
        .collect::<Result<Vec<_>>>()?;
    let pc = &cfg.privacy;
    let mut notes = Vec::new();

    let audit = uniqueness_audit(&runs[0], &real, &pc.k_list)?;
    let uniqueness = UniquenessSummary {
        threshold: pc.overlap_threshold,
        fraction_below_threshold: audit.fraction_below(pc.overlap_threshold),
        mean_top_k: pc.k_list.iter().map(|&k| (k, audit.mean_top(k))).collect(),
        audit,
    };

    let run_slices: Vec<&[BehaviorSequence]> = runs.iter().map(Dataset::sequences).collect();
    let (mut members, mut nonmembers) = (Vec::new(), Vec::new());
    for x in real.sequences() {
        let feats = mia_features(&run_slices, std::slice::from_ref(x), &pc.k_list)?;
        if part.is_generated(x.user_id()) {
            members.push(feats);
        } else {
            nonmembers.push(feats);
        }
    }
    let mia = if members.len() < MIN_CLASS_SAMPLES || nonmembers.len() < MIN_CLASS_SAMPLES {
        notes.push(format!(
            "membership inference skipped: {} members and {} non-members, need {MIN_CLASS_SAMPLES} of each",
            members.len(),
            nonmembers.len()
        ));
        None
    } else {
        let mut out = Vec::new();
        for id in ClassifierId::ALL {
            let trials = (0..pc.mia_trials.max(1))
                .map(|t| mia_attack(&members, &nonmembers, id, rng::mix(cfg.seed, u64::from(t))))
                .collect::<bsynth_core::Result<Vec<_>>>()?;
            let mean = trials.iter().map(|m| m.success_rate).sum::<f64>() / trials.len() as f64;
            out.push(MiaSummary {
                classifier: id.as_str().into(),
                mean_success_rate: mean,
                trials,
            });
        }
        Some(out)
    };

    let generated = subset(&real, |id| part.is_generated(id))?;
    let epsilon = if runs.len() < 2 {
        notes.push("privacy budget skipped: needs at least 2 generation runs".into());
        None
    } else {
        let samples = membership_overlap_samples(&runs, &generated)?;
        if samples.is_empty() {
            notes.push("privacy budget skipped: no user was generated in every run".into());
            None
        } else {
            let report = epsilon_audit(&samples, pc.delta)?;
            Some(report::EpsilonSummary {
                below_4_at_cdf_0_9: report.below_at_quantile(4.0, 0.9),
                report,
            })
        }
    };

    let doc = PrivacyDocument {
        runs: pc.runs,
        members: members.len(),
        nonmembers: nonmembers.len(),
        uniqueness,
        mia,
        epsilon,
        notes,
    };
    write_report(cfg, report::PRIVACY_FILE, &report::render_privacy(&doc))?;
    Ok(doc)
}

/// Runs per-user jobs on a fixed pool of scoped threads.
#[derive(Debug, Clone, Copy)]
pub struct ThreadExecutor {
    pub threads: usize,
}

impl Default for ThreadExecutor {
    fn default() -> Self {
        Self {
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

impl Executor for ThreadExecutor {
    fn map(&self, jobs: usize, job: &(dyn Fn(usize) -> UserJobResult + Sync)) -> Vec<UserJobResult> {
        parallel_map(jobs, self.threads, |i| (job(i), false))
            .into_iter()
            .map(|r| r.expect("every job runs"))
            .collect()
    }
}

/// Evaluates the given scenarios on run 0. Pretraining augmentation adds
/// the generated population users; the finetuning scenarios use each
/// individual user's own synthetic sequence.
pub fn evaluate(cfg: &RunConfig, ids: &[ScenarioId]) -> Result<Vec<ScenarioReport>> {
    let real = load_real(cfg)?;
    let part = partition(cfg, &real)?;
    let synth = load_synth(cfg, 0, &real)?;
    let pcfg = cfg.predictor_config();
    let opts = cfg.scenario_options();
    let exec = ThreadExecutor::default();
    let mut out = Vec::new();
    for &id in ids {
        let synth_part = match id {
            ScenarioId::PretrainAug => subset(&synth, |u| part.population.get(u).is_some() && part.is_generated(u))?,
            _ => subset(&synth, |u| part.individual.get(u).is_some())?,
        };
        let r = run_scenario_with(id, &part.population, &part.individual, &synth_part, &pcfg, &opts, &exec)?;
        write_report(cfg, &report::scenario_file(id), &report::render_scenario(&r))?;
        out.push(r);
    }
    Ok(out)
}

/// Merges the stage reports present in the output directory into one
/// document. With `full`, runs every stage first.
pub fn report(cfg: &RunConfig, full: bool) -> Result<PathBuf> {
    if full {
        if cfg.uses_simulated_data() {
            simulate(cfg)?;
        }
        let outcome = generate(cfg, None)?;
        log::info!("Pass@1 per run: {:?}", outcome.index.pass1);
        validate(cfg)?;
        fidelity(cfg)?;
        privacy(cfg)?;
        evaluate(cfg, &ScenarioId::ALL)?;
    }
    let dir = cfg.reports_dir();
    let mut names: Vec<(String, String)> = vec![
        ("fidelity".into(), report::FIDELITY_FILE.into()),
        ("privacy".into(), report::PRIVACY_FILE.into()),
    ];
    names.extend(
        ScenarioId::ALL
            .iter()
            .map(|id| (id.as_str().to_string(), report::scenario_file(*id))),
    );
    let mut sections = Vec::new();
    for (name, file) in names {
        let path = dir.join(&file);
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            sections.push((name, text));
        }
    }
    if sections.is_empty() {
        return Err(Error::data(
            &dir,
            "no stage reports to merge; run the audits first or pass --full",
        ));
    }
    let merged = report::merge(&format!("Run report (seed {})", cfg.seed), &sections);
    write_report(cfg, report::SUMMARY_FILE, &merged)
}
