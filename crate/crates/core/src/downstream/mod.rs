//! Next-intent prediction: features, a softmax model, ranking metrics and
//! the data-usage scenarios built on them.

mod features;
mod metrics;
mod model;
mod scenario;

pub use features::{featurize, samples_from_sequence, samples_in_range, Context, FeatureLayout, Sample};
pub use metrics::{evaluate, macro_precision, macro_recall, ndcg_at_k, EvalReport, Predictions};
pub use model::{
    loss_and_gradient, predict_ranking, rank_features, summed_loss, train, train_samples, PredictorConfig,
    PredictorModel, TrainOutcome, TrainingProvenance,
};
pub use scenario::{
    improvement, replacement_rate, run_scenario, run_scenario_with, Arm, Executor, MetricRow, ScenarioId,
    ScenarioOptions, ScenarioReport, Sequential, UserEval, UserJobResult,
};
