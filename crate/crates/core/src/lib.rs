//! Core algorithms for profile-conditioned synthetic behavior data.
//!
//! Everything here is pure computation over in-memory data: the event schema
//! and its validation, dataset splitting and weekly segmentation, a seeded
//! behavior simulator, generator prompt assembly and strict output parsing,
//! fidelity metrics, the privacy audit and a log-linear next-intent predictor
//! with its scenario harness.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, network
//! backends and the command line live in the `bsynth` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod downstream;
pub mod error;
pub mod fidelity;
pub mod math;
pub mod privacy;
pub mod prompt;
pub mod rng;
pub mod sim;
pub mod split;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    sort_and_dedupe, validate_event, BehaviorEvent, BehaviorSequence, Dataset, EventViolation, ProfileAttr,
    ProfileAttribute, ProfileSchema, Provenance, SplitTag, TimeKey, UserProfile, Vocabularies, DAYS_PER_WEEK,
    SLOTS_PER_DAY,
};
