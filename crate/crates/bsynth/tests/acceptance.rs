//! Acceptance criteria 1-6, one PASS/FAIL line each with its runtime
//! against the stated limit. Runs without the libtest harness so the lines
//! are always printed.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use bsynth::backend::{Replay, ReplayRecord};
use bsynth::core::downstream::{
    improvement, loss_and_gradient, ndcg_at_k, replacement_rate, run_scenario, samples_from_sequence, summed_loss,
    train, Arm, PredictorConfig, PredictorModel, Sample, ScenarioId, ScenarioOptions,
};
use bsynth::core::fidelity::{bhattacharyya_distance, bleu, corpus_bleu, jsd, ks_two_sample, CategoricalDistribution};
use bsynth::core::privacy::{
    epsilon_estimate, gaussian_mechanism_delta, mia_attack, overlap_ratio, uniqueness_audit, ClassifierId, Gaussian,
};
use bsynth::core::prompt::{
    generate_user, parse_generated, pass_at_1, serialize_lines, GenerationPolicy, LineViolation, SimulatorGenerator,
};
use bsynth::core::sim::{fixture_profiles, simulate_population, SimConfig};
use bsynth::core::split::{segment_weekly, split_population_individual, SplitSpec};
use bsynth::core::{math, rng, sort_and_dedupe, BehaviorEvent, BehaviorSequence, Dataset, Provenance, SplitTag};
use bsynth::core::{UserProfile, Vocabularies};

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn vocab() -> Vocabularies {
    Vocabularies::default_fixture()
}

fn random_week(r: &mut rng::Rng, max_len: u32) -> Vec<BehaviorEvent> {
    let n = rng::between(r, 1, max_len);
    let evs: Vec<BehaviorEvent> = (0..n)
        .map(|_| {
            BehaviorEvent::new(
                0,
                rng::below(r, 7) as u8,
                rng::below(r, 96) as u8,
                rng::below(r, 10),
                rng::below(r, 18),
            )
        })
        .collect();
    sort_and_dedupe(&evs).0
}

fn seq(id: &str, events: Vec<BehaviorEvent>) -> BehaviorSequence {
    let p = UserProfile::from_codes(vocab().profile(), [0, 0, 0, 0, 0]).unwrap();
    BehaviorSequence::normalized(id, p, &events, Provenance::Real).0
}

fn criterion_1() -> Outcome {
    let rr = replacement_rate(0.540, 0.447, 0.597).ok_or("replacement rate undefined")?;
    let imp = improvement(0.447, 0.436).ok_or("improvement undefined")?;
    check(
        ((rr * 100.0) - 62.0).abs() < 0.05,
        format!("replacement rate {:.3}%", rr * 100.0),
    )?;
    check(
        ((imp * 100.0) - 2.5).abs() < 0.05,
        format!("improvement {:.3}%", imp * 100.0),
    )?;
    Ok(format!(
        "replacement {:.1}%, improvement {:.1}%",
        rr * 100.0,
        imp * 100.0
    ))
}

fn criterion_2() -> Outcome {
    let v = vocab();
    let policy = GenerationPolicy {
        min_lines: 1,
        ..GenerationPolicy::default()
    };
    let mut r = rng::seeded(2024);
    for i in 0..1000 {
        let week = random_week(&mut r, 150);
        let rep = parse_generated(&serialize_lines(&week), &v, &policy);
        check(
            rep.violations.is_empty() && rep.valid_events == week,
            format!("round trip failed on case {i}"),
        )?;
    }
    let day = parse_generated("7,10,1,1\n", &v, &policy);
    check(
        day.violations == vec![(1, LineViolation::WeekdayRange)],
        format!("weekday=7: {:?}", day.violations),
    )?;
    let slot = parse_generated("3,96,1,1\n", &v, &policy);
    check(
        slot.violations == vec![(1, LineViolation::TimeslotRange)],
        format!("timeslot=96: {:?}", slot.violations),
    )?;

    // replay corpus: 8 users answer validly first, 2 need a second response
    let real = population(10, 0.9, 1);
    let gen_policy = GenerationPolicy {
        target_weeks: 1,
        ..GenerationPolicy::default()
    };
    let mut corpus = Vec::new();
    for (i, s) in real.sequences().iter().enumerate() {
        let good = serialize_lines(segment_weekly(s)[0].events());
        let rec = |response: String| ReplayRecord {
            run_index: 0,
            user_id: s.user_id().into(),
            segment_index: 0,
            response,
        };
        if i >= 8 {
            corpus.push(rec("Here is the schedule:\n7,1,1,1".into()));
        }
        corpus.push(rec(good));
    }
    let backend = Replay::new(corpus);
    let mut records = Vec::new();
    for s in real.sequences() {
        let week0 = &segment_weekly(s)[0];
        let rec = generate_user(
            &backend,
            s.user_id(),
            s.profile(),
            week0,
            &v,
            &gen_policy,
            0,
            &mut |_| {},
        )
        .map_err(|e| e.to_string())?;
        records.push(rec);
    }
    let p = pass_at_1(&records).map_err(|e| e.to_string())?;
    check(p == 0.8, format!("Pass@1 = {p}"))?;
    Ok("1000 round trips, range categories, Pass@1 = 0.8".into())
}

fn brute_force_bleu(refs: &[Vec<Vec<u32>>], cands: &[Vec<u32>], max_n: usize) -> f64 {
    let count = |hay: &[u32], g: &[u32]| hay.windows(g.len()).filter(|w| *w == g).count() as u64;
    let mut matched = vec![0u64; max_n];
    let mut total = vec![0u64; max_n];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (rs, c) in refs.iter().zip(cands) {
        c_len += c.len();
        let mut best = rs[0].len();
        for r in rs {
            let (d, bd) = (r.len().abs_diff(c.len()), best.abs_diff(c.len()));
            if d < bd || (d == bd && r.len() < best) {
                best = r.len();
            }
        }
        r_len += best;
        for n in 1..=max_n {
            let mut seen: Vec<&[u32]> = Vec::new();
            for g in c.windows(n) {
                total[n - 1] += 1;
                if seen.contains(&g) {
                    continue;
                }
                seen.push(g);
                let max_ref = rs.iter().map(|r| count(r, g)).max().unwrap();
                matched[n - 1] += count(c, g).min(max_ref);
            }
        }
    }
    if c_len == 0 || matched.contains(&0) {
        return 0.0;
    }
    let log_p = (0..max_n)
        .map(|n| math::log(matched[n] as f64 / total[n] as f64))
        .sum::<f64>()
        / max_n as f64;
    let bp = if c_len > r_len {
        1.0
    } else {
        math::exp(1.0 - r_len as f64 / c_len as f64)
    };
    (bp * math::exp(log_p)).clamp(0.0, 1.0)
}

fn criterion_3() -> Outcome {
    let dist = |p: &[f64]| CategoricalDistribution::new(p.to_vec()).unwrap();
    let p = dist(&[0.1, 0.2, 0.3, 0.4]);
    check(jsd(&p, &p).unwrap() == 0.0, "JSD(p,p) != 0")?;
    check(bhattacharyya_distance(&p, &p).unwrap().abs() < 1e-15, "BD(p,p) != 0")?;
    let xs = [1.0, 4.0, 2.0, 8.0, 5.0];
    let ks = ks_two_sample(&xs, &xs).unwrap();
    check(ks.statistic == 0.0 && ks.p_value == 1.0, format!("KS copy {ks:?}"))?;
    let toks = vec![vec![1u32, 2, 3, 4, 5, 6]];
    check(bleu(&toks, &toks, 4).unwrap() == 1.0, "BLEU copy != 1")?;

    let (a, b) = ([0.5, 0.5], [0.25, 0.75]);
    let kl = |x: &[f64], y: &[f64]| -> f64 { x.iter().zip(y).map(|(p, q)| p * (p / q).log2()).sum() };
    let m: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
    let jsd_oracle = 0.5 * kl(&a, &m) + 0.5 * kl(&b, &m);
    let bd_oracle = -a.iter().zip(&b).map(|(x, y)| (x * y).sqrt()).sum::<f64>().ln();
    let j = jsd(&dist(&a), &dist(&b)).unwrap();
    let d = bhattacharyya_distance(&dist(&a), &dist(&b)).unwrap();
    check(
        (j - 0.0488).abs() < 1e-4 && (j - jsd_oracle).abs() < 1e-12,
        format!("JSD {j} oracle {jsd_oracle}"),
    )?;
    check(
        (d - 0.0347).abs() < 1e-4 && (d - bd_oracle).abs() < 1e-12,
        format!("BD {d} oracle {bd_oracle}"),
    )?;

    let mut r = rng::seeded(33);
    for case in 0..500 {
        let mut gen = |len_max: u32| -> Vec<u32> {
            let n = rng::between(&mut r, 0, len_max);
            (0..n).map(|_| rng::below(&mut r, 4)).collect()
        };
        let users = 1 + case % 3;
        let cands: Vec<Vec<u32>> = (0..users).map(|_| gen(20)).collect();
        let refs: Vec<Vec<Vec<u32>>> = (0..users)
            .map(|_| (0..2).map(|_| gen(20)).filter(|v| !v.is_empty()).collect())
            .collect();
        if refs.iter().any(Vec::is_empty) {
            continue;
        }
        let got = corpus_bleu(&refs, &cands, 4).unwrap_or(0.0);
        let want = brute_force_bleu(&refs, &cands, 4);
        check(got == want, format!("BLEU case {case}: {got} vs oracle {want}"))?;
    }
    let n = ndcg_at_k(&[7, 3, 1, 0], 3, 3);
    check((n - 0.6309).abs() < 1e-4, format!("NDCG@3 rank 2 = {n}"))?;
    Ok(format!(
        "JSD {j:.4}, BD {d:.4}, NDCG {n:.4}, BLEU oracle exact on 500 corpora"
    ))
}

fn features(seed: u64, n: usize, shift: f64) -> Vec<Vec<f64>> {
    let mut r = rng::seeded(seed);
    (0..n)
        .map(|_| (0..3).map(|_| rng::unit(&mut r) + shift).collect())
        .collect()
}

fn delta_by_integration(eps: f64, delta_mu: f64, sigma: f64) -> f64 {
    let pdf = |x: f64, mu: f64| {
        (-(x - mu) * (x - mu) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
    };
    let (lo, hi) = (-12.0 * sigma, delta_mu + 12.0 * sigma);
    let n = 200_000;
    let h = (hi - lo) / n as f64;
    let f = |x: f64| (pdf(x, delta_mu) - eps.exp() * pdf(x, 0.0)).max(0.0);
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

fn criterion_4() -> Outcome {
    let mut r = rng::seeded(4);
    for i in 0..100 {
        let s = seq("u", random_week(&mut r, 120));
        check(
            overlap_ratio(&s, &s).unwrap() == 1.0,
            format!("self overlap on case {i}"),
        )?;
    }
    let real = population(12, 0.9, 5);
    let audit = uniqueness_audit(&real, &real, &[1, 3, 5]).map_err(|e| e.to_string())?;
    check(
        audit.fraction_below(0.99) == 0.0,
        "copy attack fraction_below(0.99) != 0",
    )?;

    let mut summary = Vec::new();
    for id in ClassifierId::ALL {
        let mean = (0..20u64)
            .map(|seed| {
                let m = features(2 * seed, 60, 0.0);
                let n = features(2 * seed + 1, 60, 0.0);
                mia_attack(&m, &n, id, seed).unwrap().success_rate
            })
            .sum::<f64>()
            / 20.0;
        check(
            (mean - 0.5).abs() <= 0.07,
            format!("{} chance-level mean {mean}", id.as_str()),
        )?;
        let sep = mia_attack(&features(1, 60, 2.0), &features(2, 60, 0.0), id, 3)
            .unwrap()
            .success_rate;
        check(sep >= 0.95, format!("{} separated {sep}", id.as_str()))?;
        summary.push(format!("{} {mean:.2}/{sep:.2}", id.as_str()));
    }

    let g = Gaussian { mu: 0.3, sigma: 0.1 };
    check(
        epsilon_estimate(g, g, 1e-5).unwrap() == 0.0,
        "ε != 0 for coinciding Gaussians",
    )?;
    let mut grid = BTreeMap::new();
    for i in 1..=10 {
        for j in 1..=10 {
            let sigma = 0.5 / f64::from(j);
            let eps = epsilon_estimate(
                Gaussian {
                    mu: 0.05 * f64::from(i),
                    sigma,
                },
                Gaussian { mu: 0.0, sigma },
                1e-5,
            )
            .unwrap();
            grid.insert((i, j), eps);
        }
    }
    for i in 1..=10 {
        for j in 1..=10 {
            if i < 10 {
                check(
                    grid[&(i + 1, j)] >= grid[&(i, j)],
                    format!("ε not monotone in Δ at {i},{j}"),
                )?;
            }
            if j < 10 {
                check(
                    grid[&(i, j + 1)] >= grid[&(i, j)],
                    format!("ε not monotone in Δ/σ at {i},{j}"),
                )?;
            }
        }
    }
    let eps = epsilon_estimate(Gaussian { mu: 1.0, sigma: 1.0 }, Gaussian { mu: 0.0, sigma: 1.0 }, 1e-5).unwrap();
    let (mut lo, mut hi) = (0.0, 20.0);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if delta_by_integration(mid, 1.0, 1.0) <= 1e-5 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    check((eps - hi).abs() < 1e-3, format!("ε {eps} vs integration oracle {hi}"))?;
    check(
        (gaussian_mechanism_delta(eps, 1.0, 1.0) - 1e-5).abs() < 1e-6,
        "closed-form δ at the estimate is off target",
    )?;
    Ok(format!(
        "MIA chance/separated {}; ε(Δ/σ=1) = {eps:.4} vs oracle {hi:.4}",
        summary.join(", ")
    ))
}

fn population(users: usize, routine: f64, seed: u64) -> Dataset {
    let v = vocab();
    let cfg = SimConfig {
        seed,
        routine_strength: routine,
        ..SimConfig::default()
    };
    let profiles = fixture_profiles(users, &v, &cfg.archetype_table, seed).unwrap();
    simulate_population(&profiles, &v, &cfg).unwrap()
}

fn twins(real: &Dataset, seed: u64) -> Dataset {
    let v = real.vocabularies();
    let backend = SimulatorGenerator::new(seed, 0.9, v);
    let policy = GenerationPolicy::default();
    let seqs = real
        .sequences()
        .iter()
        .map(|s| {
            let week0 = &segment_weekly(s)[0];
            generate_user(&backend, s.user_id(), s.profile(), week0, v, &policy, 0, &mut |_| {})
                .unwrap()
                .final_sequence
                .unwrap()
        })
        .collect();
    Dataset::new(v.clone(), seqs, SplitTag::Unsplit).unwrap()
}

fn criterion_5() -> Outcome {
    let real = population(2, 0.9, 3);
    let layout = PredictorConfig::default().layout(real.vocabularies()).unwrap();
    let samples: Vec<Sample> = samples_from_sequence(&real.sequences()[0], &layout)
        .into_iter()
        .take(20)
        .collect();
    let mut model = PredictorModel::zeros(layout);
    let mut r = rng::seeded(9);
    for w in model.weights_mut() {
        *w = rng::unit(&mut r) - 0.5;
    }
    let (_, grad) = loss_and_gradient(&model, &samples);
    let mut worst = 0.0f64;
    for i in (0..grad.len()).step_by(5) {
        let h = 1e-5;
        let (mut plus, mut minus) = (model.clone(), model.clone());
        plus.weights_mut()[i] += h;
        minus.weights_mut()[i] -= h;
        let numeric = (summed_loss(&plus, &samples) - summed_loss(&minus, &samples)) / (2.0 * h);
        let scale = grad[i].abs().max(numeric.abs());
        if scale > 1e-6 {
            worst = worst.max((grad[i] - numeric).abs() / scale);
        }
    }
    check(worst < 1e-4, format!("gradient relative error {worst:e}"))?;

    let pop = population(20, 0.9, 7);
    let out = train(&[&pop], &PredictorConfig::default(), None).map_err(|e| e.to_string())?;
    for (k, w) in out.epoch_losses.windows(2).enumerate() {
        check(
            w[1] <= w[0] + 1e-9,
            format!("loss rose at epoch {}: {} -> {}", k + 1, w[0], w[1]),
        )?;
    }

    let (mut rates, mut gains) = (Vec::new(), Vec::new());
    for seed in 0..5u64 {
        let real = population(30, 0.9, seed * 1000);
        let spec = SplitSpec {
            population_user_count: 20,
            ..SplitSpec::default()
        };
        let (pop, ind) = split_population_individual(&real, &spec, seed).unwrap();
        let synth = twins(&ind, seed);
        let cfg = PredictorConfig {
            seed,
            ..PredictorConfig::default()
        };
        let rep = run_scenario(
            ScenarioId::FinetuneReplace,
            &pop,
            &ind,
            &synth,
            &cfg,
            &ScenarioOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        gains.push(
            rep.mean_user_precision(Arm::FinetunedReal).unwrap() - rep.mean_user_precision(Arm::Pretrained).unwrap(),
        );
        rates.push(
            rep.replacement_rate
                .and_then(|m| m.precision)
                .ok_or("replacement rate undefined")?,
        );
    }
    let mean_gain = gains.iter().sum::<f64>() / 5.0;
    let mean_rate = rates.iter().sum::<f64>() / 5.0;
    check(
        mean_gain > 0.0,
        format!("finetune-on-real gain {mean_gain:.4} over pretrained"),
    )?;
    check(
        mean_rate >= 0.5,
        format!("mean replacement rate {mean_rate:.3} from {rates:?}"),
    )?;
    Ok(format!(
        "grad err {worst:.1e}, finetune gain {:+.4}, replacement {:.1}% (5 seeds)",
        mean_gain,
        mean_rate * 100.0
    ))
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn full_report(out: &Path) -> Result<String, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_bsynth"))
        .arg("--config")
        .arg(fixture_dir().join("run.toml"))
        .arg("--output-dir")
        .arg(out)
        .args(["report", "--full"])
        .output()
        .map_err(|e| e.to_string())?;
    check(
        status.status.success(),
        format!("report --full failed: {}", String::from_utf8_lossy(&status.stderr)),
    )?;
    std::fs::read_to_string(out.join("reports").join("report.md")).map_err(|e| e.to_string())
}

fn criterion_6() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = full_report(dir.path())?;
    let second = full_report(dir.path())?;
    let value = |doc: &str| bsynth::report::extract_json(&doc[doc.find("## Combined").unwrap_or(0)..]);
    let (a, b) = (
        value(&first).ok_or("no JSON block")?,
        value(&second).ok_or("no JSON block")?,
    );
    check(a == b, "report values differ between runs")?;
    check(first == second, "report documents differ between runs")?;
    let sections = a.as_object().map_or(0, |m| m.len());
    check(sections == 5, format!("{sections} report sections, expected 5"))?;
    Ok(format!("{} bytes, {sections} sections identical", first.len()))
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 6] = [
        ("table arithmetic fixtures", Duration::from_secs(1), criterion_1),
        ("parser and grammar suite", Duration::from_secs(5), criterion_2),
        ("metric oracle suite", Duration::from_secs(10), criterion_3),
        ("privacy property suite", Duration::from_secs(60), criterion_4),
        ("downstream training suite", Duration::from_secs(300), criterion_5),
        ("end-to-end reproducibility", Duration::from_secs(120), criterion_6),
    ];
    let mut failed = 0;
    for (i, (name, limit, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let result = result.and_then(|msg| {
            if took <= *limit {
                Ok(msg)
            } else {
                Err(format!("took {took:.2?}, limit {limit:?}"))
            }
        });
        match result {
            Ok(msg) => println!("criterion {}: PASS ({name}; {took:.2?} <= {limit:?}) {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {}: FAIL ({name}; {took:.2?}) {msg}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
