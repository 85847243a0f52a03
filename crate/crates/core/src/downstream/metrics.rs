use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use super::features::Sample;
use super::model::{rank_features, PredictorModel};
use crate::error::{Error, Result};
use crate::math;

fn confusion_counts(preds: &[u32], truths: &[u32], n_classes: usize) -> Result<(Vec<u64>, Vec<u64>, Vec<u64>)> {
    if preds.len() != truths.len() {
        return Err(Error::InvalidArgument(alloc::format!(
            "{} predictions for {} truths",
            preds.len(),
            truths.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (
        alloc::vec![0u64; n_classes],
        alloc::vec![0u64; n_classes],
        alloc::vec![0u64; n_classes],
    );
    for (&p, &t) in preds.iter().zip(truths) {
        if p == t {
            tp[p as usize] += 1;
        } else {
            fp[p as usize] += 1;
            fn_[t as usize] += 1;
        }
    }
    Ok((tp, fp, fn_))
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class `TP/(TP+FP)` averaged over all `n_classes`; classes never
/// predicted contribute 0.
pub fn macro_precision(preds: &[u32], truths: &[u32], n_classes: usize) -> Result<f64> {
    let (tp, fp, _) = confusion_counts(preds, truths, n_classes)?;
    Ok((0..n_classes).map(|c| ratio(tp[c], tp[c] + fp[c])).sum::<f64>() / n_classes as f64)
}

/// Per-class `TP/(TP+FN)` averaged over all `n_classes`; classes never
/// observed contribute 0.
pub fn macro_recall(preds: &[u32], truths: &[u32], n_classes: usize) -> Result<f64> {
    let (tp, _, fn_) = confusion_counts(preds, truths, n_classes)?;
    Ok((0..n_classes).map(|c| ratio(tp[c], tp[c] + fn_[c])).sum::<f64>() / n_classes as f64)
}

/// NDCG@k for a single relevant item: `1/log2(rank+1)` when the true intent
/// sits at 1-based `rank ≤ k`, else 0. The ideal DCG is 1.
pub fn ndcg_at_k(ranking: &[u32], true_intent: u32, k: usize) -> f64 {
    match ranking.iter().take(k).position(|&i| i == true_intent) {
        Some(pos) => 1.0 / math::log2(pos as f64 + 2.0),
        None => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub ndcg_at_3: f64,
    pub ndcg_at_5: f64,
    pub samples: usize,
}

impl EvalReport {
    pub fn values(&self) -> [f64; 4] {
        [self.precision, self.recall, self.ndcg_at_3, self.ndcg_at_5]
    }
}

/// Top-1 predictions and rankings of `model` on `samples`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Predictions {
    pub preds: Vec<u32>,
    pub truths: Vec<u32>,
    pub ndcg3: Vec<f64>,
    pub ndcg5: Vec<f64>,
}

impl Predictions {
    pub fn collect(model: &PredictorModel, samples: &[Sample]) -> Self {
        let mut out = Self::default();
        for s in samples {
            let ids: Vec<u32> = rank_features(model, &s.features).into_iter().map(|(i, _)| i).collect();
            out.preds.push(ids[0]);
            out.truths.push(s.target);
            out.ndcg3.push(ndcg_at_k(&ids, s.target, 3));
            out.ndcg5.push(ndcg_at_k(&ids, s.target, 5));
        }
        out
    }

    pub fn extend(&mut self, other: &Predictions) {
        self.preds.extend_from_slice(&other.preds);
        self.truths.extend_from_slice(&other.truths);
        self.ndcg3.extend_from_slice(&other.ndcg3);
        self.ndcg5.extend_from_slice(&other.ndcg5);
    }

    pub fn report(&self, n_classes: usize) -> Result<EvalReport> {
        if self.preds.is_empty() {
            return Err(Error::Empty("evaluation samples"));
        }
        Ok(EvalReport {
            precision: macro_precision(&self.preds, &self.truths, n_classes)?,
            recall: macro_recall(&self.preds, &self.truths, n_classes)?,
            ndcg_at_3: math::mean(&self.ndcg3).unwrap_or(0.0),
            ndcg_at_5: math::mean(&self.ndcg5).unwrap_or(0.0),
            samples: self.preds.len(),
        })
    }
}

pub fn evaluate(model: &PredictorModel, samples: &[Sample]) -> Result<EvalReport> {
    Predictions::collect(model, samples).report(model.layout().intent_count)
}
