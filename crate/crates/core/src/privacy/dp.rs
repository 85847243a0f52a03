//! ε estimation from Gaussians fitted to member and non-member overlap
//! ratios, read as a Gaussian mechanism.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use super::overlap::cdf_points;
use crate::error::{Error, Result};
use crate::math;

pub const SIGMA_FLOOR: f64 = 1e-6;
/// Upper end of the ε search interval.
pub const EPSILON_CAP: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Gaussian {
    pub mu: f64,
    pub sigma: f64,
}

/// Sample mean and unbiased standard deviation, floored at [`SIGMA_FLOOR`].
pub fn fit_gaussian(samples: &[f64]) -> Result<Gaussian> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples to fit a Gaussian, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mu = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1.0);
    Ok(Gaussian {
        mu,
        sigma: math::sqrt(var).max(SIGMA_FLOOR),
    })
}

/// Smallest δ for which a Gaussian mechanism with sensitivity `delta_mu`
/// and noise `sigma` is (ε, δ)-DP:
/// `Φ(Δ/2σ − εσ/Δ) − e^ε Φ(−Δ/2σ − εσ/Δ)`.
pub fn gaussian_mechanism_delta(epsilon: f64, delta_mu: f64, sigma: f64) -> f64 {
    if delta_mu <= 0.0 {
        return 0.0;
    }
    let a = delta_mu / (2.0 * sigma);
    let b = epsilon * sigma / delta_mu;
    let d = math::normal_cdf(a - b) - math::exp(epsilon) * math::normal_cdf(-a - b);
    d.max(0.0)
}

/// Smallest ε in `[0, 64]` whose mechanism δ does not exceed `delta`, by
/// bisection. Coinciding means give 0; if even ε = 64 is insufficient the
/// cap is returned.
pub fn epsilon_estimate(member: Gaussian, nonmember: Gaussian, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta {delta} outside (0,1)")));
    }
    let delta_mu = (member.mu - nonmember.mu).abs();
    if delta_mu == 0.0 {
        return Ok(0.0);
    }
    let sigma = math::sqrt(0.5 * (member.sigma * member.sigma + nonmember.sigma * nonmember.sigma)).max(SIGMA_FLOOR);
    let f = |eps: f64| gaussian_mechanism_delta(eps, delta_mu, sigma);
    if f(0.0) <= delta {
        return Ok(0.0);
    }
    if f(EPSILON_CAP) > delta {
        return Ok(EPSILON_CAP);
    }
    let (mut lo, mut hi) = (0.0, EPSILON_CAP);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= delta {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok(hi)
}

/// One user's overlap ratios with and without the user in the generator's
/// input, one value per run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct UserOverlapSamples {
    pub user_id: String,
    pub member: Vec<f64>,
    pub nonmember: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EpsilonReport {
    pub delta: f64,
    pub per_user_epsilon: Vec<(String, f64)>,
    /// `(ε, cumulative fraction)`, ascending in ε, ending at 1.
    pub cdf_points: Vec<(f64, f64)>,
}

impl EpsilonReport {
    /// Smallest ε whose cumulative fraction reaches `q`.
    pub fn quantile(&self, q: f64) -> Option<f64> {
        self.cdf_points.iter().find(|(_, c)| *c >= q - 1e-12).map(|(e, _)| *e)
    }

    /// Whether ε stays below `limit` up to the `q` quantile.
    pub fn below_at_quantile(&self, limit: f64, q: f64) -> bool {
        self.quantile(q).is_some_and(|e| e < limit)
    }
}

pub fn epsilon_audit(samples: &[UserOverlapSamples], delta: f64) -> Result<EpsilonReport> {
    if samples.is_empty() {
        return Err(Error::Empty("per-user overlap samples"));
    }
    let mut per_user = Vec::with_capacity(samples.len());
    for s in samples {
        let eps = epsilon_estimate(fit_gaussian(&s.member)?, fit_gaussian(&s.nonmember)?, delta)?;
        per_user.push((s.user_id.clone(), eps));
    }
    let eps: Vec<f64> = per_user.iter().map(|(_, e)| *e).collect();
    Ok(EpsilonReport {
        delta,
        cdf_points: cdf_points(&eps),
        per_user_epsilon: per_user,
    })
}
