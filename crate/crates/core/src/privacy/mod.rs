//! Privacy audit: time-aligned overlap uniqueness, membership inference and
//! per-user ε estimation from fitted Gaussians.

mod classifiers;
mod dp;
mod overlap;

pub use classifiers::{
    mia_attack, BinaryClassifier, ClassifierId, KnnClassifier, LinearSvm, LogisticRegression, MiaResult, RandomForest,
    MIN_CLASS_SAMPLES,
};
pub use dp::{
    epsilon_audit, epsilon_estimate, fit_gaussian, gaussian_mechanism_delta, EpsilonReport, Gaussian,
    UserOverlapSamples, EPSILON_CAP, SIGMA_FLOOR,
};
pub use overlap::{
    membership_feature_sets, membership_overlap_samples, mia_features, overlap_ratio, uniqueness_audit, FeatureSets,
    OverlapProfile, UniquenessAudit,
};
