//! Population/individual partition, chronological splits and weekly
//! segmentation.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng;
use crate::types::{BehaviorEvent, BehaviorSequence, Dataset, SplitTag};

/// Minimum sequence length accepted by [`split_chronological`].
pub const MIN_SPLIT_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub population_user_count: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            valid_fraction: 0.1,
            test_fraction: 0.2,
            population_user_count: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate_fractions(&self) -> Result<()> {
        let fr = [self.train_fraction, self.valid_fraction, self.test_fraction];
        if fr.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::Split(format!("fractions must lie in (0,1): {fr:?}")));
        }
        let sum: f64 = fr.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Split(format!("fractions sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Seeded user-level partition into a population set (the first
/// `population_user_count` users of a Fisher-Yates shuffle) and an
/// individual set (the rest). Each side keeps the input's user order.
pub fn split_population_individual(d: &Dataset, spec: &SplitSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = d.user_count();
    let count = spec.population_user_count;
    if count == 0 || count >= n {
        return Err(Error::Split(format!(
            "population_user_count must be in [1, {}), got {count}",
            n
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::seeded(seed);
    rng::shuffle(&mut r, &mut order);
    let mut in_pop = alloc::vec![false; n];
    for &i in &order[..count] {
        in_pop[i] = true;
    }
    let (mut pop, mut ind) = (Vec::with_capacity(count), Vec::with_capacity(n - count));
    for (seq, &p) in d.sequences().iter().zip(&in_pop) {
        if p {
            pop.push(seq.clone());
        } else {
            ind.push(seq.clone());
        }
    }
    Ok((
        Dataset::new(d.vocabularies().clone(), pop, SplitTag::Population)?,
        Dataset::new(d.vocabularies().clone(), ind, SplitTag::Individual)?,
    ))
}

/// Event counts for a chronological split of `n` events: validation and
/// test get the floored fraction, train takes the remainder.
pub fn chronological_counts(n: usize, spec: &SplitSpec) -> (usize, usize, usize) {
    // the epsilon absorbs representation error such as 0.7 * 10 = 6.999...
    let valid = crate::math::floor(n as f64 * spec.valid_fraction + 1e-9) as usize;
    let test = crate::math::floor(n as f64 * spec.test_fraction + 1e-9) as usize;
    (n - valid - test, valid, test)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChronoSplit {
    pub train: BehaviorSequence,
    pub valid: BehaviorSequence,
    pub test: BehaviorSequence,
}

/// Contiguous prefix/middle/suffix split of one user's events.
pub fn split_chronological(seq: &BehaviorSequence, spec: &SplitSpec) -> Result<ChronoSplit> {
    spec.validate_fractions()?;
    let n = seq.len();
    if n < MIN_SPLIT_LEN {
        return Err(Error::TooShort {
            len: n,
            min: MIN_SPLIT_LEN,
        });
    }
    let (train, valid, _) = chronological_counts(n, spec);
    let ev = seq.events();
    Ok(ChronoSplit {
        train: seq.with_events(ev[..train].to_vec())?,
        valid: seq.with_events(ev[train..train + valid].to_vec())?,
        test: seq.with_events(ev[train + valid..].to_vec())?,
    })
}

/// Events of one week, in order. Never empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeekSegment {
    week_index: u32,
    events: Vec<BehaviorEvent>,
}

impl WeekSegment {
    pub fn new(week_index: u32, events: Vec<BehaviorEvent>) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::Empty("week segment"));
        }
        if events.iter().any(|e| e.week_index != week_index) {
            return Err(Error::InvalidArgument(format!(
                "segment events must all belong to week {week_index}"
            )));
        }
        Ok(Self { week_index, events })
    }

    pub fn week_index(&self) -> u32 {
        self.week_index
    }

    pub fn events(&self) -> &[BehaviorEvent] {
        &self.events
    }
}

/// One segment per distinct week, in order; weeks without events are absent.
pub fn segment_weekly(seq: &BehaviorSequence) -> Vec<WeekSegment> {
    seq.events()
        .chunk_by(|a, b| a.week_index == b.week_index)
        .map(|chunk| WeekSegment {
            week_index: chunk[0].week_index,
            events: chunk.to_vec(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Provenance, UserProfile, Vocabularies};
    use alloc::string::ToString;
    use alloc::vec;

    fn seq_with(events: Vec<BehaviorEvent>) -> BehaviorSequence {
        let v = Vocabularies::default_fixture();
        let p = UserProfile::from_codes(v.profile(), [0, 0, 0, 0, 0]).unwrap();
        BehaviorSequence::new("u", p, events, Provenance::Real).unwrap()
    }

    fn linear(n: usize) -> BehaviorSequence {
        let evs = (0..n)
            .map(|i| {
                let day = i / 96;
                BehaviorEvent::new((day / 7) as u32, (day % 7) as u8, (i % 96) as u8, 0, 0)
            })
            .collect();
        seq_with(evs)
    }

    fn dataset(users: usize) -> Dataset {
        let v = Vocabularies::default_fixture();
        let p = UserProfile::from_codes(v.profile(), [0, 0, 0, 0, 0]).unwrap();
        let seqs = (0..users)
            .map(|i| BehaviorSequence::new(i.to_string(), p.clone(), vec![], Provenance::Real).unwrap())
            .collect();
        Dataset::new(v, seqs, SplitTag::Unsplit).unwrap()
    }

    #[test]
    fn chronological_exact_fractions() {
        let s = split_chronological(&linear(100), &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (70, 10, 20));
    }

    #[test]
    fn chronological_remainder_goes_to_train() {
        // floor(10.1) = 10, floor(20.2) = 20, train = 101 - 30 = 71
        let s = split_chronological(&linear(101), &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (71, 10, 20));
        let joined: Vec<_> = [s.train.events(), s.valid.events(), s.test.events()].concat();
        assert_eq!(joined, linear(101).events());
    }

    #[test]
    fn chronological_rejects_short() {
        assert!(matches!(
            split_chronological(&linear(5), &SplitSpec::default()),
            Err(Error::TooShort { len: 5, .. })
        ));
    }

    #[test]
    fn fractions_validated() {
        let bad = SplitSpec {
            train_fraction: 0.7,
            valid_fraction: 0.2,
            test_fraction: 0.2,
            population_user_count: 0,
        };
        assert!(split_chronological(&linear(50), &bad).is_err());
    }

    #[test]
    fn population_split_667() {
        let d = dataset(667);
        let spec = SplitSpec {
            population_user_count: 466,
            ..SplitSpec::default()
        };
        let (pop, ind) = split_population_individual(&d, &spec, 42).unwrap();
        assert_eq!((pop.user_count(), ind.user_count()), (466, 201));
        let mut ids: Vec<_> = pop
            .sequences()
            .iter()
            .chain(ind.sequences())
            .map(|s| s.user_id().to_string())
            .collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 667);
        let (pop2, _) = split_population_individual(&d, &spec, 42).unwrap();
        assert_eq!(pop, pop2);
    }

    #[test]
    fn population_split_count_checked() {
        let d = dataset(10);
        for count in [0, 10, 11] {
            let spec = SplitSpec {
                population_user_count: count,
                ..SplitSpec::default()
            };
            assert!(split_population_individual(&d, &spec, 1).is_err());
        }
    }

    #[test]
    fn weekly_segments() {
        let evs = vec![
            BehaviorEvent::new(0, 0, 1, 0, 0),
            BehaviorEvent::new(0, 3, 1, 0, 0),
            BehaviorEvent::new(1, 0, 1, 0, 0),
            BehaviorEvent::new(2, 6, 95, 0, 0),
        ];
        let segs = segment_weekly(&seq_with(evs.clone()));
        assert_eq!(segs.len(), 3);
        assert_eq!(segs.iter().map(|s| s.week_index()).collect::<Vec<_>>(), vec![0, 1, 2]);
        let flat: Vec<_> = segs.iter().flat_map(|s| s.events().iter().copied()).collect();
        assert_eq!(flat, evs);
    }

    #[test]
    fn single_week_and_gaps() {
        let one = vec![BehaviorEvent::new(3, 0, 1, 0, 0), BehaviorEvent::new(3, 2, 1, 0, 0)];
        let segs = segment_weekly(&seq_with(one.clone()));
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].events(), &one[..]);
        let gap = vec![BehaviorEvent::new(0, 0, 1, 0, 0), BehaviorEvent::new(5, 0, 1, 0, 0)];
        let segs = segment_weekly(&seq_with(gap));
        assert_eq!(segs.len(), 2);
        assert!(segs.iter().all(|s| !s.events().is_empty()));
    }
}
