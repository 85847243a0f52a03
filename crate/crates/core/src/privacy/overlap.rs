use alloc::string::String;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use super::dp::UserOverlapSamples;
use crate::error::{Error, Result};
use crate::types::{BehaviorSequence, Dataset};

/// Share of the generated sequence's events whose time key also occurs in
/// `real` with the same location. Both sequences are key-sorted, so this is
/// a single merge pass.
pub fn overlap_ratio(gen: &BehaviorSequence, real: &BehaviorSequence) -> Result<f64> {
    if gen.is_empty() {
        return Err(Error::Empty("generated sequence"));
    }
    let (g, r) = (gen.events(), real.events());
    let (mut i, mut j, mut hits) = (0, 0, 0usize);
    while i < g.len() && j < r.len() {
        match g[i].key().cmp(&r[j].key()) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                if g[i].location_id == r[j].location_id {
                    hits += 1;
                }
                i += 1;
                j += 1;
            }
        }
    }
    Ok(hits as f64 / g.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct OverlapProfile {
    pub gen_user_id: String,
    /// Highest overlap ratios against the real set, descending.
    pub top_k_ratios: Vec<f64>,
}

impl OverlapProfile {
    pub fn top1(&self) -> f64 {
        self.top_k_ratios.first().copied().unwrap_or(0.0)
    }

    /// Mean of the best `k` ratios, or of all of them when fewer exist.
    pub fn mean_top(&self, k: usize) -> f64 {
        mean_top(&self.top_k_ratios, k)
    }
}

fn mean_top(desc: &[f64], k: usize) -> f64 {
    let take = k.min(desc.len());
    if take == 0 {
        return 0.0;
    }
    desc[..take].iter().sum::<f64>() / take as f64
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct UniquenessAudit {
    pub profiles: Vec<OverlapProfile>,
    /// `(top-1 ratio, cumulative fraction)`, ascending in ratio.
    pub top1_cdf: Vec<(f64, f64)>,
}

impl UniquenessAudit {
    /// Fraction of generated trajectories whose best match is below `threshold`.
    pub fn fraction_below(&self, threshold: f64) -> f64 {
        if self.profiles.is_empty() {
            return 0.0;
        }
        let n = self.profiles.iter().filter(|p| p.top1() < threshold).count();
        n as f64 / self.profiles.len() as f64
    }

    pub fn mean_top(&self, k: usize) -> f64 {
        if self.profiles.is_empty() {
            return 0.0;
        }
        self.profiles.iter().map(|p| p.mean_top(k)).sum::<f64>() / self.profiles.len() as f64
    }
}

fn sorted_desc(mut xs: Vec<f64>) -> Vec<f64> {
    xs.sort_by(|a, b| b.total_cmp(a));
    xs
}

/// Empirical CDF points of `values`, merging equal values.
pub(crate) fn cdf_points(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = frac,
            _ => out.push((*x, frac)),
        }
    }
    out
}

/// Compares every synthetic trajectory against every real one, keeping the
/// best `max(k_list)` ratios per synthetic trajectory.
pub fn uniqueness_audit(synth: &Dataset, real: &Dataset, k_list: &[usize]) -> Result<UniquenessAudit> {
    if synth.user_count() == 0 || real.user_count() == 0 {
        return Err(Error::Empty("uniqueness audit dataset"));
    }
    let keep = k_list.iter().copied().max().unwrap_or(1).max(1);
    let mut profiles = Vec::with_capacity(synth.user_count());
    for g in synth.sequences() {
        let ratios = real
            .sequences()
            .iter()
            .map(|r| overlap_ratio(g, r))
            .collect::<Result<Vec<_>>>()?;
        let mut top = sorted_desc(ratios);
        top.truncate(keep);
        profiles.push(OverlapProfile {
            gen_user_id: g.user_id().into(),
            top_k_ratios: top,
        });
    }
    let top1: Vec<f64> = profiles.iter().map(OverlapProfile::top1).collect();
    Ok(UniquenessAudit {
        top1_cdf: cdf_points(&top1),
        profiles,
    })
}

/// Membership-inference features from repeated generation runs: for each
/// run, the overlap ratios of every (generated, real) pair are ranked and
/// the mean of the best `k` is emitted for each `k` in `ks`.
pub fn mia_features(runs: &[&[BehaviorSequence]], real_set: &[BehaviorSequence], ks: &[usize]) -> Result<Vec<f64>> {
    if runs.is_empty() {
        return Err(Error::Empty("generation runs"));
    }
    if real_set.is_empty() {
        return Err(Error::Empty("real set"));
    }
    let mut out = Vec::with_capacity(runs.len() * ks.len());
    for run in runs {
        if run.is_empty() {
            return Err(Error::Empty("generation run"));
        }
        let mut ratios = Vec::with_capacity(run.len() * real_set.len());
        for g in run.iter() {
            for r in real_set {
                ratios.push(overlap_ratio(g, r)?);
            }
        }
        let ratios = sorted_desc(ratios);
        out.extend(ks.iter().map(|&k| mean_top(&ratios, k)));
    }
    Ok(out)
}

/// Member and non-member feature vectors.
pub type FeatureSets = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Attack features for every real user: users with a synthetic twin in the
/// runs are members, the rest non-members. Each user's feature vector is
/// [`mia_features`] of all runs against that user's real trajectory.
pub fn membership_feature_sets(runs: &[Dataset], real: &Dataset, ks: &[usize]) -> Result<FeatureSets> {
    if runs.is_empty() {
        return Err(Error::Empty("generation runs"));
    }
    let run_slices: Vec<&[BehaviorSequence]> = runs.iter().map(|d| d.sequences()).collect();
    let (mut members, mut nonmembers) = (Vec::new(), Vec::new());
    for x in real.sequences() {
        let feats = mia_features(&run_slices, core::slice::from_ref(x), ks)?;
        if runs[0].get(x.user_id()).is_some() {
            members.push(feats);
        } else {
            nonmembers.push(feats);
        }
    }
    Ok((members, nonmembers))
}

/// Per-user overlap samples with and without the user's own synthetic
/// twin: for each run, the best overlap between any synthetic trajectory
/// and the user's real one, first over the whole run (member) and then with
/// the twin removed (non-member).
pub fn membership_overlap_samples(runs: &[Dataset], real: &Dataset) -> Result<Vec<UserOverlapSamples>> {
    if runs.is_empty() {
        return Err(Error::Empty("generation runs"));
    }
    let mut out = Vec::new();
    for x in real.sequences() {
        if runs.iter().any(|r| r.get(x.user_id()).is_none()) {
            continue;
        }
        let mut member = Vec::with_capacity(runs.len());
        let mut nonmember = Vec::with_capacity(runs.len());
        for run in runs {
            let (mut with, mut without) = (0.0f64, 0.0f64);
            for g in run.sequences() {
                let r = overlap_ratio(g, x)?;
                with = with.max(r);
                if g.user_id() != x.user_id() {
                    without = without.max(r);
                }
            }
            member.push(with);
            nonmember.push(without);
        }
        out.push(UserOverlapSamples {
            user_id: x.user_id().into(),
            member,
            nonmember,
        });
    }
    Ok(out)
}
