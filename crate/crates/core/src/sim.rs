//! Seeded, profile-conditioned behavior simulator.
//!
//! A user is simulated in two stages. First a weekly *routine template* is
//! drawn from the occupation archetype: for each weekday a set of distinct
//! slots, filled inside the duty window on duty days from the archetype's
//! weighted duty intents, and elsewhere by a first-order Markov chain over
//! its leisure intents. Then every
//! week is rendered from the template: each templated event is kept with
//! probability `routine_strength`, otherwise its intent and location are
//! redrawn uniformly from the vocabulary.
//!
//! All random decisions use integer sampling from [`crate::rng`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::types::{
    BehaviorEvent, BehaviorSequence, Dataset, Provenance, SplitTag, UserProfile, Vocabularies, DAYS_PER_WEEK,
    SLOTS_PER_DAY,
};

/// Waking-hours slot range `[28, 92)` (07:00-23:00) used for leisure events.
pub const WAKING_SLOTS: (u8, u8) = (28, 92);

const NOISE_STREAM: u64 = 0x6e6f_6973_6500_0000;
const STAY_PERMILLE: u32 = 300;
const PRIMARY_WEIGHT: u32 = 85;
const DUTY_LOCATION_PERMILLE: u32 = 900;

/// Routine parameters for one occupation.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Archetype {
    pub occupation: u16,
    pub name: String,
    /// Weekdays (0-6) on which the duty window applies.
    pub duty_days: Vec<u8>,
    /// Duty window `[start, end)` in slots.
    pub duty_window: (u8, u8),
    pub duty_location: u32,
    /// Duty intents; the first one is the archetype's dominant intent.
    pub duty_intents: Vec<u32>,
    pub leisure_intents: Vec<u32>,
    pub leisure_locations: Vec<u32>,
}

impl Archetype {
    pub fn dominant_intent(&self) -> u32 {
        self.duty_intents[0]
    }

    fn validate(&self, v: &Vocabularies) -> Result<()> {
        let bad = |m: String| Err(Error::SimConfig(format!("archetype {:?}: {m}", self.name)));
        let (s, e) = self.duty_window;
        if s >= e || usize::from(e) > SLOTS_PER_DAY {
            return bad(format!("duty window {s}..{e} is not a slot range"));
        }
        if self.duty_days.iter().any(|&d| usize::from(d) >= DAYS_PER_WEEK) {
            return bad("duty day out of [0,6]".into());
        }
        if self.duty_intents.is_empty() || self.leisure_intents.is_empty() {
            return bad("duty and leisure intents must be non-empty".into());
        }
        if self.leisure_locations.is_empty() {
            return bad("leisure locations must be non-empty".into());
        }
        let n_b = v.intent_count() as u32;
        let n_l = v.location_count() as u32;
        if self.duty_intents.iter().chain(&self.leisure_intents).any(|&i| i >= n_b) {
            return bad("intent id outside vocabulary".into());
        }
        if core::iter::once(&self.duty_location)
            .chain(&self.leisure_locations)
            .any(|&l| l >= n_l)
        {
            return bad("location id outside vocabulary".into());
        }
        Ok(())
    }
}

/// Archetypes keyed by occupation code.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ArchetypeTable {
    pub archetypes: Vec<Archetype>,
}

impl ArchetypeTable {
    pub fn get(&self, occupation: u16) -> Option<&Archetype> {
        self.archetypes.iter().find(|a| a.occupation == occupation)
    }

    /// Six archetypes over [`Vocabularies::default_fixture`] ids.
    pub fn default_table() -> Self {
        let a = |occupation: u16,
                 name: &str,
                 duty_days: &[u8],
                 duty_window: (u8, u8),
                 duty_location: u32,
                 duty_intents: &[u32],
                 leisure_intents: &[u32],
                 leisure_locations: &[u32]| Archetype {
            occupation,
            name: name.into(),
            duty_days: duty_days.to_vec(),
            duty_window,
            duty_location,
            duty_intents: duty_intents.to_vec(),
            leisure_intents: leisure_intents.to_vec(),
            leisure_locations: leisure_locations.to_vec(),
        };
        let weekdays = [0, 1, 2, 3, 4];
        let all = [0, 1, 2, 3, 4, 5, 6];
        Self {
            archetypes: alloc::vec![
                a(
                    0,
                    "student",
                    &weekdays,
                    (32, 64),
                    2,
                    &[1, 11],
                    &[14, 13, 7, 6, 12, 3],
                    &[0, 4, 5, 6, 3]
                ),
                a(
                    1,
                    "office worker",
                    &weekdays,
                    (36, 72),
                    1,
                    &[0, 15],
                    &[3, 4, 5, 8, 13, 6],
                    &[0, 3, 4, 5, 8]
                ),
                a(
                    2,
                    "service worker",
                    &[2, 3, 4, 5, 6],
                    (40, 80),
                    3,
                    &[0, 3],
                    &[8, 13, 4, 7, 14, 12],
                    &[0, 4, 6, 8]
                ),
                a(
                    3,
                    "freelancer",
                    &all,
                    (40, 68),
                    0,
                    &[0, 16],
                    &[10, 5, 11, 6, 7, 3],
                    &[0, 3, 5, 6, 9]
                ),
                a(
                    4,
                    "retiree",
                    &all,
                    (28, 60),
                    6,
                    &[9, 8],
                    &[15, 11, 17, 12, 7, 4],
                    &[0, 6, 7, 4]
                ),
                a(
                    5,
                    "homemaker",
                    &all,
                    (32, 68),
                    0,
                    &[17, 4],
                    &[3, 13, 7, 9, 12, 8],
                    &[0, 4, 3, 6]
                ),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SimConfig {
    pub seed: u64,
    pub weeks: u32,
    /// Probability that a templated event is kept rather than replaced by noise.
    pub routine_strength: f64,
    /// Inclusive range of events per day.
    pub events_per_day_range: (u8, u8),
    pub archetype_table: ArchetypeTable,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            weeks: 4,
            routine_strength: 0.9,
            events_per_day_range: (14, 18),
            archetype_table: ArchetypeTable::default_table(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self, v: &Vocabularies) -> Result<()> {
        if self.weeks == 0 {
            return Err(Error::SimConfig("weeks must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.routine_strength) {
            return Err(Error::SimConfig(format!(
                "routine_strength {} outside [0,1]",
                self.routine_strength
            )));
        }
        let (lo, hi) = self.events_per_day_range;
        if lo < 1 || hi < lo || usize::from(hi) > SLOTS_PER_DAY {
            return Err(Error::SimConfig(format!(
                "events_per_day_range ({lo},{hi}) must satisfy 1 <= lo <= hi <= 96"
            )));
        }
        for a in &self.archetype_table.archetypes {
            a.validate(v)?;
        }
        Ok(())
    }

    pub fn routine_ppm(&self) -> u32 {
        routine_ppm(self.routine_strength)
    }
}

/// `routine_strength` as an integer probability in parts per million.
pub fn routine_ppm(strength: f64) -> u32 {
    let clamped = strength.clamp(0.0, 1.0);
    crate::math::floor(clamped * 1_000_000.0 + 0.5) as u32
}

/// One templated event within a day.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemplateEvent {
    pub timeslot: u8,
    pub location_id: u32,
    pub intent_id: u32,
}

/// A user's routine week: per-weekday ordered events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeekTemplate {
    days: [Vec<TemplateEvent>; DAYS_PER_WEEK],
}

impl WeekTemplate {
    /// Draws a routine from an archetype.
    pub fn from_archetype(arch: &Archetype, events_per_day: (u8, u8), seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let days = core::array::from_fn(|d| draw_day(&mut r, arch, d as u8, events_per_day));
        Self { days }
    }

    /// Uses observed events as the routine, keyed by weekday; the week
    /// index is ignored and repeated slots keep their first event.
    pub fn from_events(events: &[BehaviorEvent]) -> Self {
        let mut days: [Vec<TemplateEvent>; DAYS_PER_WEEK] = Default::default();
        for e in events {
            let Some(day) = days.get_mut(usize::from(e.weekday)) else {
                continue;
            };
            if day.iter().all(|t| t.timeslot != e.timeslot) {
                day.push(TemplateEvent {
                    timeslot: e.timeslot,
                    location_id: e.location_id,
                    intent_id: e.intent_id,
                });
            }
        }
        for day in &mut days {
            day.sort_by_key(|t| t.timeslot);
        }
        Self { days }
    }

    pub fn day(&self, weekday: usize) -> &[TemplateEvent] {
        &self.days[weekday]
    }

    pub fn event_count(&self) -> usize {
        self.days.iter().map(Vec::len).sum()
    }

    /// Renders one week. Each templated event survives with probability
    /// `routine_ppm / 1e6`; otherwise intent and location are drawn
    /// uniformly from `[0, intent_count)` and `[0, location_count)`.
    pub fn render_week(
        &self,
        week_index: u32,
        routine_ppm: u32,
        noise_seed: u64,
        location_count: u32,
        intent_count: u32,
    ) -> Vec<BehaviorEvent> {
        let mut r = rng::seeded(rng::mix(noise_seed ^ NOISE_STREAM, u64::from(week_index)));
        let mut out = Vec::with_capacity(self.event_count());
        for (d, day) in self.days.iter().enumerate() {
            for t in day {
                let (loc, intent) = if rng::chance_ppm(&mut r, routine_ppm) {
                    (t.location_id, t.intent_id)
                } else {
                    let intent = rng::below(&mut r, intent_count);
                    let loc = rng::below(&mut r, location_count);
                    (loc, intent)
                };
                out.push(BehaviorEvent::new(week_index, d as u8, t.timeslot, loc, intent));
            }
        }
        out
    }
}

fn draw_day(r: &mut Rng, arch: &Archetype, weekday: u8, (lo, hi): (u8, u8)) -> Vec<TemplateEvent> {
    let n = rng::between(r, u32::from(lo), u32::from(hi)) as usize;
    let duty_day = arch.duty_days.contains(&weekday);
    let (ws, we) = arch.duty_window;
    let in_window = |s: u8| duty_day && s >= ws && s < we;

    let duty_slots: Vec<u8> = if duty_day { (ws..we).collect() } else { Vec::new() };
    let other_slots: Vec<u8> = (WAKING_SLOTS.0..WAKING_SLOTS.1).filter(|&s| !in_window(s)).collect();
    let n_duty = if duty_day { (2 * n / 3).min(duty_slots.len()) } else { 0 };
    let mut slots = pick_distinct(r, &duty_slots, n_duty);
    slots.extend(pick_distinct(r, &other_slots, n - n_duty));
    if slots.len() < n {
        // small windows: top up from whatever slots remain in the day
        let rest: Vec<u8> = (0..SLOTS_PER_DAY as u8).filter(|s| !slots.contains(s)).collect();
        let missing = n - slots.len();
        slots.extend(pick_distinct(r, &rest, missing));
    }
    slots.sort_unstable();

    let duty_weights: Vec<u32> = (0..arch.duty_intents.len())
        .map(|i| {
            if i == 0 {
                PRIMARY_WEIGHT
            } else {
                (100 - PRIMARY_WEIGHT) / (arch.duty_intents.len() as u32 - 1)
            }
        })
        .collect();

    let mut prev: Option<u32> = None;
    let mut out = Vec::with_capacity(n);
    for s in slots {
        let duty = in_window(s);
        let candidates: &[u32] = if duty {
            &arch.duty_intents
        } else {
            &arch.leisure_intents
        };
        let stay = prev.filter(|p| !duty && candidates.contains(p) && rng::below(r, 1000) < STAY_PERMILLE);
        let intent = match stay {
            Some(p) => p,
            None if duty => candidates[rng::weighted(r, &duty_weights)],
            None => candidates[rng::below(r, candidates.len() as u32) as usize],
        };
        let location = if duty && rng::below(r, 1000) < DUTY_LOCATION_PERMILLE {
            arch.duty_location
        } else if duty {
            arch.leisure_locations[0]
        } else {
            let locs = &arch.leisure_locations;
            locs[rng::below(r, locs.len() as u32) as usize]
        };
        out.push(TemplateEvent {
            timeslot: s,
            location_id: location,
            intent_id: intent,
        });
        prev = Some(intent);
    }
    out
}

fn pick_distinct(r: &mut Rng, pool: &[u8], k: usize) -> Vec<u8> {
    let mut pool = pool.to_vec();
    let k = k.min(pool.len());
    for i in 0..k {
        let j = i + rng::below(r, (pool.len() - i) as u32) as usize;
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Simulates one user for `cfg.weeks` weeks. The routine is drawn from
/// `cfg.seed`; the weekly noise uses an independent stream of the same seed.
pub fn simulate_user(
    user_id: &str,
    profile: &UserProfile,
    v: &Vocabularies,
    cfg: &SimConfig,
) -> Result<BehaviorSequence> {
    cfg.validate(v)?;
    let arch = cfg
        .archetype_table
        .get(profile.occupation.code)
        .ok_or(Error::UnknownOccupation(profile.occupation.code))?;
    let template = WeekTemplate::from_archetype(arch, cfg.events_per_day_range, cfg.seed);
    let mut events = Vec::new();
    for w in 0..cfg.weeks {
        events.extend(template.render_week(
            w,
            cfg.routine_ppm(),
            cfg.seed,
            v.location_count() as u32,
            v.intent_count() as u32,
        ));
    }
    BehaviorSequence::new(user_id, profile.clone(), events, Provenance::Real)
}

/// Id given to the `ordinal`-th simulated user.
pub fn user_id_for(ordinal: usize) -> String {
    format!("user{ordinal:04}")
}

/// One sequence per profile; user `i` is seeded with `cfg.seed + i`.
pub fn simulate_population(profiles: &[UserProfile], v: &Vocabularies, cfg: &SimConfig) -> Result<Dataset> {
    if profiles.is_empty() {
        return Err(Error::Empty("profile list"));
    }
    let mut seqs = Vec::with_capacity(profiles.len());
    for (i, p) in profiles.iter().enumerate() {
        let user_cfg = SimConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            ..cfg.clone()
        };
        seqs.push(simulate_user(&user_id_for(i), p, v, &user_cfg)?);
    }
    Dataset::new(v.clone(), seqs, SplitTag::Unsplit)
}

/// Profiles cycling through the archetype table's occupations, with the
/// other four attributes drawn from `seed`.
pub fn fixture_profiles(n: usize, v: &Vocabularies, table: &ArchetypeTable, seed: u64) -> Result<Vec<UserProfile>> {
    if table.archetypes.is_empty() {
        return Err(Error::SimConfig("archetype table is empty".into()));
    }
    let schema = v.profile();
    let mut r = rng::seeded(seed);
    let mut pick = |len: usize| rng::below(&mut r, len as u32) as u16;
    (0..n)
        .map(|i| {
            let occ = table.archetypes[i % table.archetypes.len()].occupation;
            let codes = [
                pick(schema.age_group.len()),
                pick(schema.education.len()),
                pick(schema.gender.len()),
                pick(schema.consumption_level.len()),
                occ,
            ];
            UserProfile::from_codes(schema, codes)
        })
        .collect()
}
