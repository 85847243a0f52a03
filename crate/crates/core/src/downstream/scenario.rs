//! The three data-usage scenarios and their report arithmetic.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use super::features::{samples_from_sequence, samples_in_range, FeatureLayout, Sample};
use super::metrics::{EvalReport, Predictions};
use super::model::{train_samples, PredictorConfig};
use crate::error::{Error, Result};
use crate::rng;
use crate::split::{chronological_counts, SplitSpec, MIN_SPLIT_LEN};
use crate::types::{BehaviorSequence, Dataset};

/// `(ours − base) / base`; `None` when `base` is 0.
pub fn improvement(ours: f64, base: f64) -> Option<f64> {
    (base != 0.0).then(|| (ours - base) / base)
}

/// `(synthetic − pretrained) / (real − pretrained)`: the share of the
/// real-data finetuning gain recovered with synthetic data. `None` when
/// real finetuning gained nothing.
pub fn replacement_rate(synthetic: f64, pretrained: f64, real: f64) -> Option<f64> {
    let gain = real - pretrained;
    (gain != 0.0).then(|| (synthetic - pretrained) / gain)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ScenarioId {
    PretrainAug,
    FinetuneReplace,
    FinetuneAug,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 3] = [Self::PretrainAug, Self::FinetuneReplace, Self::FinetuneAug];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::PretrainAug => "pretrain_aug",
            Self::FinetuneReplace => "finetune_replace",
            Self::FinetuneAug => "finetune_aug",
        }
    }

    pub fn arms(self) -> &'static [Arm] {
        match self {
            Self::PretrainAug => &[Arm::Pretrained, Arm::Augmented],
            Self::FinetuneReplace => &[Arm::Pretrained, Arm::FinetunedReal, Arm::FinetunedSynthetic],
            Self::FinetuneAug => &[Arm::Pretrained, Arm::FinetunedLimitedReal, Arm::FinetunedAugmented],
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(alloc::format!("unknown scenario {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Arm {
    Pretrained,
    Augmented,
    FinetunedReal,
    FinetunedSynthetic,
    FinetunedLimitedReal,
    FinetunedAugmented,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pretrained => "pretrained",
            Self::Augmented => "pretrained+synthetic",
            Self::FinetunedReal => "finetuned-real",
            Self::FinetunedSynthetic => "finetuned-synthetic",
            Self::FinetunedLimitedReal => "finetuned-limited-real",
            Self::FinetunedAugmented => "finetuned-limited+synthetic",
        }
    }
}

/// One value per reported metric, in column order Pre, Rec, N@3, N@5.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct MetricRow {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub ndcg_at_3: Option<f64>,
    pub ndcg_at_5: Option<f64>,
}

impl MetricRow {
    fn zip(a: &EvalReport, b: &EvalReport, f: impl Fn(f64, f64) -> Option<f64>) -> Self {
        Self {
            precision: f(a.precision, b.precision),
            recall: f(a.recall, b.recall),
            ndcg_at_3: f(a.ndcg_at_3, b.ndcg_at_3),
            ndcg_at_5: f(a.ndcg_at_5, b.ndcg_at_5),
        }
    }

    pub fn values(&self) -> [Option<f64>; 4] {
        [self.precision, self.recall, self.ndcg_at_3, self.ndcg_at_5]
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct UserEval {
    pub user_id: String,
    pub arms: Vec<(Arm, EvalReport)>,
}

impl UserEval {
    pub fn arm(&self, arm: Arm) -> Option<&EvalReport> {
        self.arms.iter().find(|(a, _)| *a == arm).map(|(_, r)| r)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ScenarioReport {
    pub scenario: ScenarioId,
    /// Pooled over all evaluated users' test events.
    pub arms: Vec<(Arm, EvalReport)>,
    pub per_user: Vec<UserEval>,
    pub improvement: Option<MetricRow>,
    pub replacement_rate: Option<MetricRow>,
}

impl ScenarioReport {
    pub fn arm(&self, arm: Arm) -> Option<&EvalReport> {
        self.arms.iter().find(|(a, _)| *a == arm).map(|(_, r)| r)
    }

    /// Mean over users of one arm's macro precision.
    pub fn mean_user_precision(&self, arm: Arm) -> Option<f64> {
        let xs: Vec<f64> = self
            .per_user
            .iter()
            .filter_map(|u| u.arm(arm))
            .map(|r| r.precision)
            .collect();
        crate::math::mean(&xs)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ScenarioOptions {
    pub split: SplitSpec,
    /// Real events available in the limited-data arm.
    pub limited_real_events: usize,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            split: SplitSpec::default(),
            limited_real_events: 105,
        }
    }
}

struct UserData<'a> {
    real: &'a BehaviorSequence,
    train_end: usize,
    test_start: usize,
}

impl UserData<'_> {
    fn test_samples(&self, layout: &FeatureLayout) -> Vec<Sample> {
        samples_in_range(self.real.events(), self.test_start..self.real.len(), layout)
    }

    fn train_samples(&self, layout: &FeatureLayout, limit: usize) -> Vec<Sample> {
        samples_in_range(self.real.events(), 0..self.train_end.min(limit), layout)
    }
}

fn pooled(seqs: &[BehaviorSequence], layout: &FeatureLayout) -> Vec<Sample> {
    seqs.iter().flat_map(|s| samples_from_sequence(s, layout)).collect()
}

fn user_seed(base: u64, user: &str) -> u64 {
    rng::mix(base, rng::fnv1a(user))
}

/// Runs one scenario.
///
/// * `pretrain_aug`: train on `real_pop` (arm A) and on `real_pop` plus
///   `synth` (arm B); evaluate both on every individual user's real test
///   split.
/// * `finetune_replace`: pretrain on `real_pop`, then per individual user
///   finetune on the real train split (arm A) or on that user's synthetic
///   sequence alone (arm B); evaluate on the real test split.
/// * `finetune_aug`: pretrain, then per user finetune on the first
///   `limited_real_events` real training events (arm A) or on those plus
///   the synthetic sequence (arm B).
///
/// Individual users are reported in ascending id order; each finetuning
/// job starts from its own copy of the pretrained weights.
pub fn run_scenario(
    id: ScenarioId,
    real_pop: &Dataset,
    real_ind: &Dataset,
    synth: &Dataset,
    cfg: &PredictorConfig,
    opts: &ScenarioOptions,
) -> Result<ScenarioReport> {
    run_scenario_with(id, real_pop, real_ind, synth, cfg, opts, &Sequential)
}

/// Per-user job output: one prediction set per scenario arm.
pub type UserJobResult = Result<Vec<Predictions>>;

/// Runs the per-user jobs of a scenario. Implementations may run jobs in
/// any order or concurrently but must return results indexed by job.
pub trait Executor {
    fn map(&self, jobs: usize, job: &(dyn Fn(usize) -> UserJobResult + Sync)) -> Vec<UserJobResult>;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map(&self, jobs: usize, job: &(dyn Fn(usize) -> UserJobResult + Sync)) -> Vec<UserJobResult> {
        (0..jobs).map(job).collect()
    }
}

/// [`run_scenario`] with per-user jobs dispatched through `exec`.
pub fn run_scenario_with(
    id: ScenarioId,
    real_pop: &Dataset,
    real_ind: &Dataset,
    synth: &Dataset,
    cfg: &PredictorConfig,
    opts: &ScenarioOptions,
    exec: &dyn Executor,
) -> Result<ScenarioReport> {
    let v = real_pop.vocabularies();
    if real_ind.vocabularies() != v || synth.vocabularies() != v {
        return Err(Error::VocabularyMismatch);
    }
    opts.split.validate_fractions()?;
    let layout = cfg.layout(v)?;
    let classes = layout.intent_count;

    let mut users: Vec<UserData<'_>> = Vec::new();
    let mut ind: Vec<&BehaviorSequence> = real_ind.sequences().iter().collect();
    ind.sort_by(|a, b| a.user_id().cmp(b.user_id()));
    for s in ind {
        if s.len() < MIN_SPLIT_LEN {
            continue;
        }
        let (train, valid, _) = chronological_counts(s.len(), &opts.split);
        users.push(UserData {
            real: s,
            train_end: train,
            test_start: train + valid,
        });
    }
    if users.is_empty() {
        return Err(Error::Empty("individual users with enough events"));
    }

    let pop_samples = pooled(real_pop.sequences(), &layout);
    let pretrained = train_samples(&pop_samples, layout, cfg, None, cfg.seed)?.model;

    let arm_ids = id.arms();
    let augmented = if id == ScenarioId::PretrainAug {
        if synth.user_count() == 0 {
            return Err(Error::Empty("synthetic dataset"));
        }
        let mut samples = pop_samples.clone();
        samples.extend(pooled(synth.sequences(), &layout));
        Some(train_samples(&samples, layout, cfg, None, cfg.seed)?.model)
    } else {
        if let Some(u) = users.iter().find(|u| synth.get(u.real.user_id()).is_none()) {
            return Err(Error::MissingSynthetic(u.real.user_id().into()));
        }
        None
    };

    // one job per individual user: predictions of every arm on its test split
    let job = |k: usize| -> Result<Vec<Predictions>> {
        let u = &users[k];
        let test = u.test_samples(&layout);
        let mut out = alloc::vec![Predictions::collect(&pretrained, &test)];
        match (id, &augmented) {
            (ScenarioId::PretrainAug, Some(m)) => out.push(Predictions::collect(m, &test)),
            _ => {
                let uid = u.real.user_id();
                let syn = synth.get(uid).ok_or_else(|| Error::MissingSynthetic(uid.into()))?;
                let seed = user_seed(cfg.seed, uid);
                let syn_samples = samples_from_sequence(syn, &layout);
                let (a, b) = if id == ScenarioId::FinetuneReplace {
                    (u.train_samples(&layout, usize::MAX), syn_samples)
                } else {
                    let limited = u.train_samples(&layout, opts.limited_real_events);
                    let mut both = limited.clone();
                    both.extend(syn_samples);
                    (limited, both)
                };
                for s in [a, b] {
                    let m = if s.is_empty() {
                        pretrained.clone()
                    } else {
                        train_samples(&s, layout, cfg, Some(&pretrained), seed)?.model
                    };
                    out.push(Predictions::collect(&m, &test));
                }
            }
        }
        Ok(out)
    };
    let outcomes = exec.map(users.len(), &job);
    if outcomes.len() != users.len() {
        return Err(Error::InvalidArgument(
            "executor returned the wrong number of results".into(),
        ));
    }

    let mut per_user = Vec::with_capacity(users.len());
    let mut pooled_preds: Vec<Predictions> = arm_ids.iter().map(|_| Predictions::default()).collect();
    for (u, outcome) in users.iter().zip(outcomes) {
        let preds = outcome?;
        let mut arms = Vec::with_capacity(preds.len());
        for (k, (p, arm)) in preds.iter().zip(arm_ids).enumerate() {
            if p.preds.is_empty() {
                continue;
            }
            arms.push((*arm, p.report(classes)?));
            pooled_preds[k].extend(p);
        }
        if !arms.is_empty() {
            per_user.push(UserEval {
                user_id: u.real.user_id().into(),
                arms,
            });
        }
    }

    let mut arms = Vec::with_capacity(arm_ids.len());
    for (arm, p) in arm_ids.iter().zip(&pooled_preds) {
        arms.push((*arm, p.report(classes)?));
    }
    let (improvement_row, replacement_row) = match id {
        ScenarioId::PretrainAug => (
            Some(MetricRow::zip(&arms[0].1, &arms[1].1, |a, b| improvement(b, a))),
            None,
        ),
        ScenarioId::FinetuneAug => (
            Some(MetricRow::zip(&arms[1].1, &arms[2].1, |a, b| improvement(b, a))),
            None,
        ),
        ScenarioId::FinetuneReplace => {
            let (pre, real, syn) = (&arms[0].1, &arms[1].1, &arms[2].1);
            let row = MetricRow {
                precision: replacement_rate(syn.precision, pre.precision, real.precision),
                recall: replacement_rate(syn.recall, pre.recall, real.recall),
                ndcg_at_3: replacement_rate(syn.ndcg_at_3, pre.ndcg_at_3, real.ndcg_at_3),
                ndcg_at_5: replacement_rate(syn.ndcg_at_5, pre.ndcg_at_5, real.ndcg_at_5),
            };
            (None, Some(row))
        }
    };
    Ok(ScenarioReport {
        scenario: id,
        arms,
        per_user,
        improvement: improvement_row,
        replacement_rate: replacement_row,
    })
}
