//! Distributional fidelity of synthetic against real data: two-sample KS,
//! corpus BLEU over tokenized event streams, Bhattacharyya distance and
//! Jensen-Shannon divergence over intent marginals.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::prompt::{pass_at_1, GenerationRecord};
use crate::types::{BehaviorEvent, BehaviorSequence, Dataset, Vocabularies};

/// Floor applied to the Bhattacharyya coefficient before taking the log.
pub const BC_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct CategoricalDistribution {
    probabilities: Vec<f64>,
}

impl CategoricalDistribution {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::Distribution("empty support".into()));
        }
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Distribution(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Distribution(format!("probabilities sum to {sum}")));
        }
        Ok(Self { probabilities })
    }

    /// Normalizes non-negative counts.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::Empty("histogram counts"));
        }
        Self::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    pub fn support_size(&self) -> usize {
        self.probabilities.len()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }
}

/// Empirical intent distribution over `[0, N_B)` pooled across sequences.
pub fn intent_histogram(seqs: &[BehaviorSequence], v: &Vocabularies) -> Result<CategoricalDistribution> {
    let mut counts = alloc::vec![0u64; v.intent_count()];
    for e in seqs.iter().flat_map(|s| s.events()) {
        counts[e.intent_id as usize] += 1;
    }
    CategoricalDistribution::from_counts(&counts)
}

fn check_support(p: &CategoricalDistribution, q: &CategoricalDistribution) -> Result<()> {
    if p.support_size() != q.support_size() {
        return Err(Error::SupportMismatch {
            left: p.support_size(),
            right: q.support_size(),
        });
    }
    Ok(())
}

/// `-ln(max(Σ √(p_i q_i), 1e-12))`.
pub fn bhattacharyya_distance(p: &CategoricalDistribution, q: &CategoricalDistribution) -> Result<f64> {
    check_support(p, q)?;
    let bc: f64 = p
        .probabilities
        .iter()
        .zip(&q.probabilities)
        .map(|(a, b)| math::sqrt(a * b))
        .sum();
    Ok(-math::log(bc.clamp(BC_FLOOR, 1.0)))
}

fn kl_to_mixture(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, mi)| pi * math::log2(pi / mi))
        .sum()
}

/// Jensen-Shannon divergence in bits, so it lies in `[0, 1]`.
pub fn jsd(p: &CategoricalDistribution, q: &CategoricalDistribution) -> Result<f64> {
    check_support(p, q)?;
    let m: Vec<f64> = p
        .probabilities
        .iter()
        .zip(&q.probabilities)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let d = 0.5 * (kl_to_mixture(&p.probabilities, &m) + kl_to_mixture(&q.probabilities, &m));
    Ok(d.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Survival function of the Kolmogorov distribution, `P(K > λ)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // small λ: the Jacobi-transformed series converges much faster
        let x = core::f64::consts::PI * core::f64::consts::PI / (8.0 * lambda * lambda);
        let mut cdf = 0.0;
        for k in 1..=8u32 {
            let j = f64::from(2 * k - 1);
            cdf += math::exp(-j * j * x);
        }
        let cdf = cdf * math::sqrt(2.0 * core::f64::consts::PI) / lambda;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let mut sum = 0.0;
        for k in 1..=100u32 {
            let kf = f64::from(k);
            let term = math::exp(-2.0 * kf * kf * lambda * lambda);
            sum += if k % 2 == 1 { term } else { -term };
            if term < 1e-17 {
                break;
            }
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

/// Two-sample Kolmogorov-Smirnov test. The p-value uses the asymptotic
/// Kolmogorov distribution at `λ = D √(nm/(n+m))`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("KS sample"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        let diff = (i as f64 / n as f64 - j as f64 / m as f64).abs();
        d = d.max(diff);
    }
    let effective = (n * m) as f64 / (n + m) as f64;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival(d * math::sqrt(effective)),
    })
}

fn ngram_counts<T: Ord>(tokens: &[T], n: usize) -> BTreeMap<&[T], u64> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU with uniform weights over `1..=max_n`, clipped counts against
/// the maximum count across each candidate's references, and the standard
/// brevity penalty using the closest reference length (shorter on ties).
/// Any zero n-gram precision gives 0.
pub fn corpus_bleu<T: Ord>(references: &[Vec<Vec<T>>], candidates: &[Vec<T>], max_n: usize) -> Result<f64> {
    if candidates.is_empty() || references.is_empty() {
        return Err(Error::Empty("BLEU corpus"));
    }
    if references.len() != candidates.len() {
        return Err(Error::InvalidArgument(format!(
            "{} reference sets for {} candidates",
            references.len(),
            candidates.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::InvalidArgument("max_n must be at least 1".into()));
    }
    if references.iter().any(Vec::is_empty) {
        return Err(Error::Empty("reference set"));
    }
    let mut matched = alloc::vec![0u64; max_n];
    let mut total = alloc::vec![0u64; max_n];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (refs, cand) in references.iter().zip(candidates) {
        cand_len += cand.len();
        let closest = refs
            .iter()
            .map(Vec::len)
            .min_by_key(|&r| (r.abs_diff(cand.len()), r))
            .unwrap_or(0);
        ref_len += closest;
        for n in 1..=max_n {
            let cand_counts = ngram_counts(cand, n);
            let mut max_ref: BTreeMap<&[T], u64> = BTreeMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let slot = max_ref.entry(g).or_insert(0);
                    *slot = (*slot).max(c);
                }
            }
            for (g, c) in &cand_counts {
                total[n - 1] += c;
                matched[n - 1] += (*c).min(max_ref.get(g).copied().unwrap_or(0));
            }
        }
    }
    if cand_len == 0 || matched.contains(&0) {
        return Ok(0.0);
    }
    let log_p: f64 = matched
        .iter()
        .zip(&total)
        .map(|(&m, &t)| math::log(m as f64 / t as f64))
        .sum::<f64>()
        / max_n as f64;
    let bp = if cand_len > ref_len {
        1.0
    } else {
        math::exp(1.0 - ref_len as f64 / cand_len as f64)
    };
    Ok((bp * math::exp(log_p)).clamp(0.0, 1.0))
}

/// Corpus BLEU with exactly one reference per candidate.
pub fn bleu<T: Ord + Clone>(references: &[Vec<T>], candidates: &[Vec<T>], max_n: usize) -> Result<f64> {
    let refs: Vec<Vec<Vec<T>>> = references.iter().map(|r| alloc::vec![r.clone()]).collect();
    corpus_bleu(&refs, candidates, max_n)
}

/// BLEU token: a tagged field value. Timeslots are coarsened to hours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventToken {
    Day(u8),
    Hour(u8),
    Loc(u32),
    Intent(u32),
}

impl core::fmt::Display for EventToken {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::Day(d) => write!(f, "d={d}"),
            Self::Hour(h) => write!(f, "t={h}"),
            Self::Loc(l) => write!(f, "l={l}"),
            Self::Intent(b) => write!(f, "b={b}"),
        }
    }
}

/// Four tokens per event: day, hour (slot / 4), location, intent.
pub fn tokenize_events(events: &[BehaviorEvent]) -> Vec<EventToken> {
    events
        .iter()
        .flat_map(|e| {
            [
                EventToken::Day(e.weekday),
                EventToken::Hour(e.timeslot / 4),
                EventToken::Loc(e.location_id),
                EventToken::Intent(e.intent_id),
            ]
        })
        .collect()
}

/// How the timeslot KS test treats users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum KsMode {
    /// One test over all events of each dataset.
    #[default]
    Pooled,
    /// Mean statistic and p-value over users present in both datasets.
    PerUserMean,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct FidelityReport {
    pub ks_mode: KsMode,
    pub ks_statistic: f64,
    pub ks_p: f64,
    /// Weekday KS, a secondary diagnostic.
    pub weekday_ks_statistic: f64,
    pub weekday_ks_p: f64,
    pub bleu: f64,
    pub bd: f64,
    pub jsd: f64,
    /// `None` when no generation records were supplied.
    pub pass1: Option<f64>,
    /// Synthetic users scored against their own real sequence.
    pub bleu_paired_users: usize,
    /// Synthetic users scored against the pooled real corpus.
    pub bleu_pooled_users: usize,
}

/// Timeslot KS, intent BD/JSD and event-token BLEU of `synth` against
/// `real`. BLEU pairs each synthetic user with the real user of the same id
/// when present, otherwise with all real sequences as references.
pub fn fidelity_report(real: &Dataset, synth: &Dataset, records: &[GenerationRecord]) -> Result<FidelityReport> {
    fidelity_report_with(real, synth, records, KsMode::Pooled)
}

fn per_user_ks(real: &Dataset, synth: &Dataset) -> Result<KsResult> {
    let slots = |s: &BehaviorSequence| -> Vec<f64> { s.events().iter().map(|e| f64::from(e.timeslot)).collect() };
    let mut results = Vec::new();
    for g in synth.sequences().iter().filter(|s| !s.is_empty()) {
        if let Some(r) = real.get(g.user_id()).filter(|r| !r.is_empty()) {
            results.push(ks_two_sample(&slots(r), &slots(g))?);
        }
    }
    if results.is_empty() {
        return Err(Error::Empty("users present in both datasets"));
    }
    let n = results.len() as f64;
    Ok(KsResult {
        statistic: results.iter().map(|k| k.statistic).sum::<f64>() / n,
        p_value: results.iter().map(|k| k.p_value).sum::<f64>() / n,
    })
}

/// [`fidelity_report`] with a choice of KS pooling.
pub fn fidelity_report_with(
    real: &Dataset,
    synth: &Dataset,
    records: &[GenerationRecord],
    ks_mode: KsMode,
) -> Result<FidelityReport> {
    if real.vocabularies() != synth.vocabularies() {
        return Err(Error::VocabularyMismatch);
    }
    let v = real.vocabularies();
    let slots = |d: &Dataset| -> Vec<f64> {
        d.sequences()
            .iter()
            .flat_map(|s| s.events())
            .map(|e| f64::from(e.timeslot))
            .collect()
    };
    let days = |d: &Dataset| -> Vec<f64> {
        d.sequences()
            .iter()
            .flat_map(|s| s.events())
            .map(|e| f64::from(e.weekday))
            .collect()
    };
    let ks = match ks_mode {
        KsMode::Pooled => ks_two_sample(&slots(real), &slots(synth))?,
        KsMode::PerUserMean => per_user_ks(real, synth)?,
    };
    let ks_day = ks_two_sample(&days(real), &days(synth))?;

    let p = intent_histogram(real.sequences(), v)?;
    let q = intent_histogram(synth.sequences(), v)?;

    let real_tokens: Vec<(&str, Vec<EventToken>)> = real
        .sequences()
        .iter()
        .map(|s| (s.user_id(), tokenize_events(s.events())))
        .collect();
    let mut refs = Vec::new();
    let mut cands = Vec::new();
    let (mut paired, mut pooled) = (0, 0);
    for s in synth.sequences().iter().filter(|s| !s.is_empty()) {
        cands.push(tokenize_events(s.events()));
        match real_tokens.iter().find(|(id, _)| *id == s.user_id()) {
            Some((_, toks)) => {
                refs.push(alloc::vec![toks.clone()]);
                paired += 1;
            }
            None => {
                refs.push(real_tokens.iter().map(|(_, t)| t.clone()).collect());
                pooled += 1;
            }
        }
    }
    let bleu_score = corpus_bleu(&refs, &cands, 4)?;

    let pass1 = if records.is_empty() {
        None
    } else {
        Some(pass_at_1(records)?)
    };
    Ok(FidelityReport {
        ks_mode,
        ks_statistic: ks.statistic,
        ks_p: ks.p_value,
        weekday_ks_statistic: ks_day.statistic,
        weekday_ks_p: ks_day.p_value,
        bleu: bleu_score,
        bd: bhattacharyya_distance(&p, &q)?,
        jsd: jsd(&p, &q)?,
        pass1,
        bleu_paired_users: paired,
        bleu_pooled_users: pooled,
    })
}

/// Column headers in report order.
pub const REPORT_COLUMNS: [&str; 5] = ["KS_P", "BLEU", "BD", "JSD", "Pass@1"];

impl FidelityReport {
    /// True when `self` is at least as good as `other` on KS_P, BLEU, BD
    /// and JSD, and strictly better on one of them.
    pub fn dominates(&self, other: &FidelityReport) -> bool {
        let ge = self.ks_p >= other.ks_p && self.bleu >= other.bleu && self.bd <= other.bd && self.jsd <= other.jsd;
        let gt = self.ks_p > other.ks_p || self.bleu > other.bleu || self.bd < other.bd || self.jsd < other.jsd;
        ge && gt
    }

    pub fn row(&self) -> [String; 5] {
        [
            format!("{:.3}", self.ks_p),
            format!("{:.3}", self.bleu),
            format!("{:.3}", self.bd),
            format!("{:.3}", self.jsd),
            match self.pass1 {
                Some(p) => format!("{:.1}%", p * 100.0),
                None => String::from("n/a"),
            },
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn dist(p: &[f64]) -> CategoricalDistribution {
        CategoricalDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn distribution_validation() {
        assert!(CategoricalDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(CategoricalDistribution::new(vec![-0.1, 1.1]).is_err());
        assert!(CategoricalDistribution::new(vec![]).is_err());
        assert!(CategoricalDistribution::from_counts(&[0, 0]).is_err());
    }

    #[test]
    fn bd_cases() {
        let p = dist(&[0.5, 0.5]);
        assert_eq!(bhattacharyya_distance(&p, &p).unwrap(), 0.0);
        let disjoint = bhattacharyya_distance(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0])).unwrap();
        assert!((disjoint - 27.631021115928547).abs() < 1e-9);
        let d = bhattacharyya_distance(&p, &dist(&[0.25, 0.75])).unwrap();
        assert!((d - 0.0347).abs() < 1e-4, "{d}");
    }

    #[test]
    fn jsd_cases() {
        let p = dist(&[0.5, 0.5]);
        assert_eq!(jsd(&p, &p).unwrap(), 0.0);
        assert_eq!(jsd(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0])).unwrap(), 1.0);
        let d = jsd(&p, &dist(&[0.25, 0.75])).unwrap();
        assert!((d - 0.0488).abs() < 1e-4, "{d}");
    }

    #[test]
    fn support_mismatch() {
        let p = dist(&[0.5, 0.5]);
        let q = dist(&[0.2, 0.3, 0.5]);
        assert!(matches!(jsd(&p, &q), Err(Error::SupportMismatch { left: 2, right: 3 })));
        assert!(bhattacharyya_distance(&p, &q).is_err());
    }

    #[test]
    fn ks_cases() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        let r = ks_two_sample(&[0.0; 5], &[1.0; 7]).unwrap();
        assert_eq!(r.statistic, 1.0);
        let r = ks_two_sample(&a, &[1.0, 2.0, 3.0, 5.0]).unwrap();
        assert!((r.statistic - 0.25).abs() < 1e-15);
        assert!(ks_two_sample(&[], &a).is_err());
    }

    #[test]
    fn kolmogorov_survival_known_values() {
        // reference values of 1 - K(λ)
        assert!((kolmogorov_survival(1.0) - 0.26999967).abs() < 1e-6);
        assert!((kolmogorov_survival(1.36) - 0.04946).abs() < 1e-4);
        assert!((kolmogorov_survival(0.5) - 0.96394).abs() < 1e-4);
        // both series agree at the switch point
        let lo = kolmogorov_survival(1.18 - 1e-12);
        let hi = kolmogorov_survival(1.18);
        assert!((lo - hi).abs() < 1e-9);
    }

    #[test]
    fn bleu_identity_and_disjoint() {
        let r = vec![vec![1, 2, 3, 4, 5]];
        assert!((bleu(&r, &r, 4).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(bleu(&r, &[vec![6, 7, 8, 9, 10]], 4).unwrap(), 0.0);
    }

    #[test]
    fn bleu_last_token_changed() {
        let r: Vec<u32> = (0..8).collect();
        let mut c = r.clone();
        c[7] = 99;
        // p1 = 7/8, p2 = 6/7, no brevity penalty
        let expected = math::sqrt(7.0 / 8.0 * 6.0 / 7.0);
        assert!((bleu(&[r], &[c], 2).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn bleu_brevity_penalty() {
        let r: Vec<u32> = (0..10).collect();
        let c: Vec<u32> = (0..5).collect();
        let got = bleu(&[r], &[c], 1).unwrap();
        assert!((got - math::exp(1.0 - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn tokens_coarsen_slots() {
        let t = tokenize_events(&[BehaviorEvent::new(0, 2, 47, 3, 9)]);
        let s: Vec<String> = t.iter().map(|t| format!("{t}")).collect();
        assert_eq!(s, vec!["d=2", "t=11", "l=3", "b=9"]);
    }

    #[test]
    fn report_dominance_on_table_rows() {
        let row = |ks_p, bleu, bd, jsd| FidelityReport {
            ks_mode: KsMode::Pooled,
            ks_statistic: 0.0,
            ks_p,
            weekday_ks_statistic: 0.0,
            weekday_ks_p: 0.0,
            bleu,
            bd,
            jsd,
            pass1: Some(1.0),
            bleu_paired_users: 0,
            bleu_pooled_users: 0,
        };
        let ours = row(0.327, 0.512, 0.050, 0.029);
        let no_profile = row(0.231, 0.444, 0.068, 0.053);
        assert!(ours.dominates(&no_profile));
        assert!(!no_profile.dominates(&ours));
        assert_eq!(ours.row()[4], "100.0%");
    }

    #[test]
    fn per_user_ks_on_copy() {
        let v = Vocabularies::default_fixture();
        let p = crate::types::UserProfile::from_codes(v.profile(), [0, 0, 0, 0, 0]).unwrap();
        let evs = |off: u8| {
            (0..12)
                .map(|i| BehaviorEvent::new(0, 1, i * 3 + off, 0, 1))
                .collect::<Vec<_>>()
        };
        let mk = |off| {
            let s = BehaviorSequence::new("u", p.clone(), evs(off), crate::types::Provenance::Real).unwrap();
            Dataset::new(v.clone(), vec![s], crate::types::SplitTag::Unsplit).unwrap()
        };
        let r = fidelity_report_with(&mk(0), &mk(0), &[], KsMode::PerUserMean).unwrap();
        assert_eq!((r.ks_statistic, r.ks_p), (0.0, 1.0));
        let shifted = fidelity_report_with(&mk(0), &mk(50), &[], KsMode::PerUserMean).unwrap();
        assert!(shifted.ks_statistic > 0.5);
    }
}
