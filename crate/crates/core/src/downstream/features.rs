use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BehaviorEvent, BehaviorSequence, DAYS_PER_WEEK, SLOTS_PER_DAY};

/// Block layout of the one-hot feature vector:
/// `[weekday (7) | timeslot bucket (B) | previous intent (N_B) × I | last location (N_L) | bias]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct FeatureLayout {
    pub history_length: usize,
    pub timeslot_buckets: usize,
    pub intent_count: usize,
    pub location_count: usize,
}

impl FeatureLayout {
    pub fn new(
        history_length: usize,
        timeslot_buckets: usize,
        intent_count: usize,
        location_count: usize,
    ) -> Result<Self> {
        if history_length < 1 {
            return Err(Error::InvalidArgument("history length must be at least 1".into()));
        }
        if timeslot_buckets == 0 || !SLOTS_PER_DAY.is_multiple_of(timeslot_buckets) {
            return Err(Error::InvalidArgument(alloc::format!(
                "timeslot buckets {timeslot_buckets} must divide {SLOTS_PER_DAY}"
            )));
        }
        if intent_count == 0 || location_count == 0 {
            return Err(Error::InvalidArgument("empty intent or location set".into()));
        }
        Ok(Self {
            history_length,
            timeslot_buckets,
            intent_count,
            location_count,
        })
    }

    fn bucket_offset(&self) -> usize {
        DAYS_PER_WEEK
    }

    fn intent_offset(&self) -> usize {
        DAYS_PER_WEEK + self.timeslot_buckets
    }

    fn location_offset(&self) -> usize {
        self.intent_offset() + self.history_length * self.intent_count
    }

    pub fn bias_index(&self) -> usize {
        self.location_offset() + self.location_count
    }

    /// Total dimension `7 + B + I·N_B + N_L + 1`.
    pub fn dim(&self) -> usize {
        self.bias_index() + 1
    }

    /// Ones per vector: weekday, bucket, I intents, location, bias.
    pub fn active_count(&self) -> usize {
        self.history_length + 4
    }
}

/// What the predictor conditions on: the previous `I` events and the time
/// of the event being predicted.
#[derive(Debug, Clone, Copy)]
pub struct Context<'a> {
    pub history: &'a [BehaviorEvent],
    pub weekday: u8,
    pub timeslot: u8,
}

/// Indices of the one-valued coordinates, ascending.
pub fn featurize(ctx: &Context<'_>, layout: &FeatureLayout) -> Result<Vec<u32>> {
    let i = layout.history_length;
    if ctx.history.len() != i {
        return Err(Error::InvalidArgument(alloc::format!(
            "context has {} events, expected {i}",
            ctx.history.len()
        )));
    }
    let slots_per_bucket = SLOTS_PER_DAY / layout.timeslot_buckets;
    let mut out = Vec::with_capacity(layout.active_count());
    out.push(u32::from(ctx.weekday) % DAYS_PER_WEEK as u32);
    out.push((layout.bucket_offset() + usize::from(ctx.timeslot) / slots_per_bucket) as u32);
    // position 0 is the most recent event
    for (pos, e) in ctx.history.iter().rev().enumerate() {
        out.push((layout.intent_offset() + pos * layout.intent_count + e.intent_id as usize) as u32);
    }
    let last = ctx.history[i - 1];
    out.push((layout.location_offset() + last.location_id as usize) as u32);
    out.push(layout.bias_index() as u32);
    Ok(out)
}

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub features: Vec<u32>,
    pub target: u32,
}

/// Samples whose targets are the events at positions `range` of `events`;
/// the history may reach before the range. Positions with fewer than `I`
/// predecessors are skipped.
pub fn samples_in_range(
    events: &[BehaviorEvent],
    range: core::ops::Range<usize>,
    layout: &FeatureLayout,
) -> Vec<Sample> {
    let i = layout.history_length;
    let start = range.start.max(i);
    (start..range.end.min(events.len()))
        .map(|t| {
            let target = events[t];
            let ctx = Context {
                history: &events[t - i..t],
                weekday: target.weekday,
                timeslot: target.timeslot,
            };
            Sample {
                features: featurize(&ctx, layout).expect("history length matches layout"),
                target: target.intent_id,
            }
        })
        .collect()
}

pub fn samples_from_sequence(seq: &BehaviorSequence, layout: &FeatureLayout) -> Vec<Sample> {
    samples_in_range(seq.events(), 0..seq.len(), layout)
}
