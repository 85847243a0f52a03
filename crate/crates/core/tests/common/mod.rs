#![allow(dead_code)]

use bsynth_core::prompt::{generate_user, GenerationPolicy, SimulatorGenerator};
use bsynth_core::sim::{fixture_profiles, simulate_population, SimConfig};
use bsynth_core::split::{segment_weekly, split_population_individual, SplitSpec};
use bsynth_core::{BehaviorEvent, BehaviorSequence, Dataset, Provenance, SplitTag, UserProfile, Vocabularies};

pub fn vocab() -> Vocabularies {
    Vocabularies::default_fixture()
}

pub fn profile() -> UserProfile {
    UserProfile::from_codes(vocab().profile(), [0, 0, 0, 0, 0]).unwrap()
}

pub fn seq(id: &str, events: Vec<BehaviorEvent>) -> BehaviorSequence {
    BehaviorSequence::normalized(id, profile(), &events, Provenance::Real).0
}

pub fn population(users: usize, routine: f64, seed: u64) -> Dataset {
    let v = vocab();
    let cfg = SimConfig {
        seed,
        routine_strength: routine,
        ..SimConfig::default()
    };
    let profiles = fixture_profiles(users, &v, &cfg.archetype_table, seed).unwrap();
    simulate_population(&profiles, &v, &cfg).unwrap()
}

/// Synthetic twins of every user, generated by the simulator backend from
/// each user's first week.
pub fn synthetic_twins(real: &Dataset, seed: u64, run: u32) -> Dataset {
    let v = real.vocabularies();
    let backend = SimulatorGenerator::new(seed, 0.9, v);
    let policy = GenerationPolicy::default();
    let seqs = real
        .sequences()
        .iter()
        .map(|s| {
            let week0 = &segment_weekly(s)[0];
            generate_user(&backend, s.user_id(), s.profile(), week0, v, &policy, run, &mut |_| {})
                .unwrap()
                .final_sequence
                .unwrap()
        })
        .collect();
    Dataset::new(v.clone(), seqs, SplitTag::Unsplit).unwrap()
}

/// 30 simulated users split 20 population / 10 individual.
pub fn scenario_data(seed: u64) -> (Dataset, Dataset, Dataset) {
    let real = population(30, 0.9, seed * 1000);
    let spec = SplitSpec {
        population_user_count: 20,
        ..SplitSpec::default()
    };
    let (pop, ind) = split_population_individual(&real, &spec, seed).unwrap();
    let synth = synthetic_twins(&ind, seed, 0);
    (pop, ind, synth)
}
