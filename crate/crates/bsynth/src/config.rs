//! The run configuration: one TOML document plus command-line overrides.
//!
//! `seed` is the only mandatory key. Every other section falls back to its
//! defaults. Relative paths are resolved against the directory holding the
//! config file. The global seed is copied into the simulator, predictor and
//! backend so a run is reproducible from the document alone.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use bsynth_core::downstream::{PredictorConfig, ScenarioOptions};
use bsynth_core::fidelity::KsMode;
use bsynth_core::prompt::GenerationPolicy;
use bsynth_core::sim::{ArchetypeTable, SimConfig};
use bsynth_core::split::SplitSpec;

use crate::backend::BackendConfig;
use crate::error::{Error, Result};
use crate::formats::{DatasetPaths, Format};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Event CSV; defaults to the simulator's output under `output_dir/real`.
    pub events: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub format: Format,
    pub strict: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            events: None,
            profiles: None,
            vocab: None,
            format: Format::Csv,
            strict: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub users: usize,
    pub weeks: u32,
    pub routine_strength: f64,
    pub events_per_day_range: (u8, u8),
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            users: 30,
            weeks: d.weeks,
            routine_strength: d.routine_strength,
            events_per_day_range: d.events_per_day_range,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FidelityConfig {
    pub ks_mode: KsMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacyConfig {
    /// Independent generation runs per user.
    pub runs: u32,
    pub delta: f64,
    pub k_list: Vec<usize>,
    /// Population users withheld from generation; they are the non-members
    /// of the membership-inference attack.
    pub holdout_users: usize,
    /// Seeded train/test splits per attack classifier.
    pub mia_trials: u32,
    /// Threshold for the "top-1 overlap below" summary.
    pub overlap_threshold: f64,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        Self {
            runs: 3,
            delta: 1e-5,
            k_list: vec![1, 3, 5],
            holdout_users: 0,
            mia_trials: 10,
            overlap_threshold: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub generation: GenerationPolicy,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub predictor: PredictorConfig,
    #[serde(default)]
    pub scenario: ScenarioOptions,
    #[serde(default)]
    pub fidelity: FidelityConfig,
    #[serde(default)]
    pub privacy: PrivacyConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Command-line values that replace config entries when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub backend: Option<crate::backend::BackendKind>,
    pub replay_path: Option<PathBuf>,
    pub max_inflight: Option<usize>,
    pub events: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub users: Option<usize>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    /// Reads, resolves paths against the file's directory, applies
    /// overrides and validates.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.output_dir);
        for p in [
            &mut self.data.events,
            &mut self.data.profiles,
            &mut self.data.vocab,
            &mut self.backend.replay_path,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
        if let Some(k) = o.backend {
            self.backend.kind = k;
        }
        if let Some(p) = &o.replay_path {
            self.backend.replay_path = Some(p.clone());
        }
        if let Some(n) = o.max_inflight {
            self.backend.max_inflight = n;
        }
        if let Some(p) = &o.events {
            self.data.events = Some(p.clone());
        }
        if let Some(p) = &o.profiles {
            self.data.profiles = Some(p.clone());
        }
        if let Some(p) = &o.vocab {
            self.data.vocab = Some(p.clone());
        }
        if let Some(n) = o.users {
            self.simulation.users = n;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backend.validate().map_err(Error::Config)?;
        self.generation.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.split
            .validate_fractions()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.scenario
            .split
            .validate_fractions()
            .map_err(|e| Error::Config(format!("scenario.{e}")))?;
        if self.simulation.users == 0 {
            return Err(Error::Config("simulation.users must be at least 1".into()));
        }
        if self.split.population_user_count == 0 {
            return Err(Error::Config("split.population_user_count is required".into()));
        }
        if self.privacy.holdout_users >= self.split.population_user_count {
            return Err(Error::Config(format!(
                "privacy.holdout_users {} must be below split.population_user_count {}",
                self.privacy.holdout_users, self.split.population_user_count
            )));
        }
        if self.privacy.runs == 0 {
            return Err(Error::Config("privacy.runs must be at least 1".into()));
        }
        if !(self.privacy.delta > 0.0 && self.privacy.delta < 1.0) {
            return Err(Error::Config(format!(
                "privacy.delta {} outside (0,1)",
                self.privacy.delta
            )));
        }
        if self.privacy.k_list.is_empty() || self.privacy.k_list.contains(&0) {
            return Err(Error::Config("privacy.k_list needs positive entries".into()));
        }
        if self.data.events.is_some() != self.data.profiles.is_some() {
            return Err(Error::Config(
                "data.events and data.profiles must be given together".into(),
            ));
        }
        for p in [&self.data.events, &self.data.profiles, &self.data.vocab]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return Err(Error::Config(format!("{}: no such file", p.display())));
            }
        }
        if let Some(p) = &self.backend.replay_path {
            if self.backend.kind == crate::backend::BackendKind::Replay && !p.exists() {
                return Err(Error::Config(format!("{}: no such file", p.display())));
            }
        }
        Ok(())
    }

    /// Simulator settings with the global seed.
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            seed: self.seed,
            weeks: self.simulation.weeks,
            routine_strength: self.simulation.routine_strength,
            events_per_day_range: self.simulation.events_per_day_range,
            archetype_table: ArchetypeTable::default_table(),
        }
    }

    /// Predictor settings with the global seed.
    pub fn predictor_config(&self) -> PredictorConfig {
        PredictorConfig {
            seed: self.seed,
            ..self.predictor.clone()
        }
    }

    /// Scenario options sharing the run's chronological split.
    pub fn scenario_options(&self) -> ScenarioOptions {
        ScenarioOptions {
            split: SplitSpec {
                population_user_count: self.split.population_user_count,
                ..self.scenario.split
            },
            ..self.scenario.clone()
        }
    }

    /// Whether the real data comes from `simulate` rather than user files.
    pub fn uses_simulated_data(&self) -> bool {
        self.data.events.is_none()
    }

    pub fn real_paths(&self) -> DatasetPaths {
        let dir = self.output_dir.join("real");
        match (&self.data.events, &self.data.profiles) {
            (Some(e), Some(p)) => DatasetPaths {
                events: e.clone(),
                profiles: p.clone(),
                vocab: self.data.vocab.clone(),
            },
            _ => DatasetPaths {
                events: dir.join("events.csv"),
                profiles: dir.join("profiles.json"),
                vocab: Some(dir.join("vocab.json")),
            },
        }
    }

    pub fn synth_dir(&self) -> PathBuf {
        self.output_dir.join("synth")
    }

    pub fn synth_paths(&self, run: u32) -> DatasetPaths {
        let dir = self.synth_dir();
        DatasetPaths {
            events: dir.join(format!("run{run}.csv")),
            profiles: dir.join("profiles.json"),
            vocab: Some(dir.join("vocab.json")),
        }
    }

    pub fn generation_records_path(&self) -> PathBuf {
        self.output_dir.join("generation").join("records.json")
    }

    pub fn audit_log_path(&self) -> PathBuf {
        self.output_dir.join("generation").join("audit.jsonl")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.output_dir.join("reports")
    }

    /// TOML rendering of the effective configuration.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}
