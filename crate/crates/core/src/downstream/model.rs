use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use super::features::{featurize, samples_from_sequence, Context, FeatureLayout, Sample};
use crate::error::{Error, Result};
use crate::math;
use crate::rng;
use crate::types::{Dataset, Vocabularies};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PredictorConfig {
    pub history_length: usize,
    pub timeslot_buckets: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub finetune_learning_rate: f64,
    pub finetune_epochs: usize,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            history_length: 2,
            timeslot_buckets: 8,
            learning_rate: 0.2,
            epochs: 30,
            batch_size: 64,
            finetune_learning_rate: 0.1,
            finetune_epochs: 20,
            seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn layout(&self, v: &Vocabularies) -> Result<FeatureLayout> {
        FeatureLayout::new(
            self.history_length,
            self.timeslot_buckets,
            v.intent_count(),
            v.location_count(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TrainingProvenance {
    Pretrained,
    Finetuned,
}

/// Multinomial log-linear model: `softmax(θᵀx)` over all intents.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct PredictorModel {
    layout: FeatureLayout,
    /// Row-major `dim × N_B`.
    weights: Vec<f64>,
    provenance: TrainingProvenance,
}

impl PredictorModel {
    pub fn zeros(layout: FeatureLayout) -> Self {
        Self {
            weights: alloc::vec![0.0; layout.dim() * layout.intent_count],
            layout,
            provenance: TrainingProvenance::Pretrained,
        }
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn provenance(&self) -> TrainingProvenance {
        self.provenance
    }

    fn classes(&self) -> usize {
        self.layout.intent_count
    }

    /// Softmax probabilities for one feature vector.
    pub fn probabilities(&self, features: &[u32]) -> Vec<f64> {
        let c = self.classes();
        let mut logits = alloc::vec![0.0; c];
        for &i in features {
            let row = &self.weights[i as usize * c..(i as usize + 1) * c];
            for (l, w) in logits.iter_mut().zip(row) {
                *l += w;
            }
        }
        softmax_in_place(&mut logits);
        logits
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = math::exp(*v - max);
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Summed cross-entropy over `samples` and its gradient with respect to
/// the weights.
pub fn loss_and_gradient(model: &PredictorModel, samples: &[Sample]) -> (f64, Vec<f64>) {
    let c = model.classes();
    let mut grad = alloc::vec![0.0; model.weights.len()];
    let mut loss = 0.0;
    for s in samples {
        let p = model.probabilities(&s.features);
        loss -= math::log(p[s.target as usize].max(f64::MIN_POSITIVE));
        for &i in &s.features {
            let row = &mut grad[i as usize * c..(i as usize + 1) * c];
            for (k, g) in row.iter_mut().enumerate() {
                *g += p[k] - if k == s.target as usize { 1.0 } else { 0.0 };
            }
        }
    }
    (loss, grad)
}

/// Summed cross-entropy of the model on `samples`.
pub fn summed_loss(model: &PredictorModel, samples: &[Sample]) -> f64 {
    samples
        .iter()
        .map(|s| -math::log(model.probabilities(&s.features)[s.target as usize].max(f64::MIN_POSITIVE)))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: PredictorModel,
    /// Mean training cross-entropy before the first epoch and after each one.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch gradient descent on the summed cross-entropy of `samples`.
/// Each epoch visits a fresh seeded permutation; a step subtracts
/// `rate × (batch gradient / batch size)`. With `init` the weights are
/// warm-started and the finetuning rate and epoch count are used.
pub fn train_samples(
    samples: &[Sample],
    layout: FeatureLayout,
    cfg: &PredictorConfig,
    init: Option<&PredictorModel>,
    seed: u64,
) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(Error::Empty("training samples"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let (mut model, rate, epochs) = match init {
        Some(m) => {
            if m.layout != layout {
                return Err(Error::InvalidArgument(
                    "warm-start model has a different feature layout".into(),
                ));
            }
            let mut m = m.clone();
            m.provenance = TrainingProvenance::Finetuned;
            (m, cfg.finetune_learning_rate, cfg.finetune_epochs)
        }
        None => (PredictorModel::zeros(layout), cfg.learning_rate, cfg.epochs),
    };
    let n = samples.len() as f64;
    let mut losses = Vec::with_capacity(epochs + 1);
    losses.push(summed_loss(&model, samples) / n);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut r = rng::seeded(seed);
    let mut batch: Vec<Sample> = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..epochs {
        rng::shuffle(&mut r, &mut order);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i].clone()));
            let (_, grad) = loss_and_gradient(&model, &batch);
            let step = rate / batch.len() as f64;
            for (w, g) in model.weights.iter_mut().zip(&grad) {
                *w -= step * g;
            }
        }
        let loss = summed_loss(&model, samples) / n;
        if !loss.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Diverged { epoch: epoch + 1 });
        }
        losses.push(loss);
    }
    Ok(TrainOutcome {
        model,
        epoch_losses: losses,
    })
}

/// Trains on the union of all sequences of `sources`. With two sources the
/// objective is the unweighted sum of both datasets' losses.
pub fn train(sources: &[&Dataset], cfg: &PredictorConfig, init: Option<&PredictorModel>) -> Result<TrainOutcome> {
    let first = sources.first().ok_or(Error::Empty("training datasets"))?;
    if sources.iter().any(|d| d.vocabularies() != first.vocabularies()) {
        return Err(Error::VocabularyMismatch);
    }
    let layout = cfg.layout(first.vocabularies())?;
    let mut samples = Vec::new();
    for d in sources {
        let before = samples.len();
        for s in d.sequences() {
            samples.extend(samples_from_sequence(s, &layout));
        }
        if samples.len() == before {
            return Err(Error::Empty("trainable contexts in a training dataset"));
        }
    }
    train_samples(&samples, layout, cfg, init, cfg.seed)
}

/// Intents ranked by descending softmax score; equal scores keep
/// ascending intent order.
pub fn predict_ranking(model: &PredictorModel, ctx: &Context<'_>) -> Result<Vec<(u32, f64)>> {
    let f = featurize(ctx, &model.layout)?;
    Ok(rank_features(model, &f))
}

pub fn rank_features(model: &PredictorModel, features: &[u32]) -> Vec<(u32, f64)> {
    let p = model.probabilities(features);
    let mut ranked: Vec<(u32, f64)> = p.into_iter().enumerate().map(|(i, s)| (i as u32, s)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}
