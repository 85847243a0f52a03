//! Event schema, vocabularies and event-level validation.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Size of the weekday set (0 = first day of the week).
pub const DAYS_PER_WEEK: usize = 7;
/// Number of 15-minute slots in a day.
pub const SLOTS_PER_DAY: usize = 96;

/// One timestamped activity record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct BehaviorEvent {
    pub week_index: u32,
    pub weekday: u8,
    pub timeslot: u8,
    pub location_id: u32,
    pub intent_id: u32,
}

impl BehaviorEvent {
    pub fn new(week_index: u32, weekday: u8, timeslot: u8, location_id: u32, intent_id: u32) -> Self {
        Self {
            week_index,
            weekday,
            timeslot,
            location_id,
            intent_id,
        }
    }

    pub fn key(&self) -> TimeKey {
        TimeKey {
            week_index: self.week_index,
            weekday: self.weekday,
            timeslot: self.timeslot,
        }
    }

    /// Absolute day counted from the start of the observation window.
    pub fn day_number(&self) -> u64 {
        u64::from(self.week_index) * DAYS_PER_WEEK as u64 + u64::from(self.weekday)
    }
}

/// Position of an event on the time axis; events are ordered and aligned by it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeKey {
    pub week_index: u32,
    pub weekday: u8,
    pub timeslot: u8,
}

/// A single way an event can fail validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventViolation {
    WeekdayRange(u8),
    TimeslotRange(u8),
    UnknownLocation(u32),
    UnknownIntent(u32),
}

impl fmt::Display for EventViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::WeekdayRange(v) => write!(f, "weekday out of [0,6]: {v}"),
            Self::TimeslotRange(v) => write!(f, "timeslot out of [0,95]: {v}"),
            Self::UnknownLocation(v) => write!(f, "unknown location id {v}"),
            Self::UnknownIntent(v) => write!(f, "unknown intent id {v}"),
        }
    }
}

/// Checks an event against the fixed day/slot ranges and the vocabulary
/// sizes. An empty result means the event is valid.
pub fn validate_event(e: &BehaviorEvent, v: &Vocabularies) -> Vec<EventViolation> {
    let mut out = Vec::new();
    if usize::from(e.weekday) >= DAYS_PER_WEEK {
        out.push(EventViolation::WeekdayRange(e.weekday));
    }
    if usize::from(e.timeslot) >= SLOTS_PER_DAY {
        out.push(EventViolation::TimeslotRange(e.timeslot));
    }
    if e.location_id as usize >= v.location_count() {
        out.push(EventViolation::UnknownLocation(e.location_id));
    }
    if e.intent_id as usize >= v.intent_count() {
        out.push(EventViolation::UnknownIntent(e.intent_id));
    }
    out
}

/// Sorts events by time key and collapses duplicate keys, keeping the first
/// occurrence in input order. Returns the normalized events and the number
/// dropped.
pub fn sort_and_dedupe(events: &[BehaviorEvent]) -> (Vec<BehaviorEvent>, usize) {
    let mut sorted = events.to_vec();
    // stable: equal keys keep input order, so dedup keeps the first
    sorted.sort_by_key(BehaviorEvent::key);
    let before = sorted.len();
    sorted.dedup_by_key(|e| e.key());
    let dropped = before - sorted.len();
    (sorted, dropped)
}

/// The five categorical profile attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProfileAttribute {
    AgeGroup,
    Education,
    Gender,
    ConsumptionLevel,
    Occupation,
}

impl ProfileAttribute {
    pub const ALL: [ProfileAttribute; 5] = [
        Self::AgeGroup,
        Self::Education,
        Self::Gender,
        Self::ConsumptionLevel,
        Self::Occupation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::AgeGroup => "age_group",
            Self::Education => "education",
            Self::Gender => "gender",
            Self::ConsumptionLevel => "consumption_level",
            Self::Occupation => "occupation",
        }
    }
}

/// A categorical code with its human-readable label.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ProfileAttr {
    pub code: u16,
    pub label: String,
}

impl ProfileAttr {
    pub fn new(code: u16, label: impl Into<String>) -> Self {
        Self {
            code,
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct UserProfile {
    pub age_group: ProfileAttr,
    pub education: ProfileAttr,
    pub gender: ProfileAttr,
    pub consumption_level: ProfileAttr,
    pub occupation: ProfileAttr,
}

impl UserProfile {
    pub fn get(&self, attr: ProfileAttribute) -> &ProfileAttr {
        match attr {
            ProfileAttribute::AgeGroup => &self.age_group,
            ProfileAttribute::Education => &self.education,
            ProfileAttribute::Gender => &self.gender,
            ProfileAttribute::ConsumptionLevel => &self.consumption_level,
            ProfileAttribute::Occupation => &self.occupation,
        }
    }

    /// Builds a profile from codes, taking labels from the schema.
    pub fn from_codes(schema: &ProfileSchema, codes: [u16; 5]) -> Result<Self> {
        let attr = |a: ProfileAttribute, code: u16| -> Result<ProfileAttr> {
            let label = schema
                .table(a)
                .get(usize::from(code))
                .ok_or_else(|| Error::Profile(format!("{} code {code} not in vocabulary", a.name())))?;
            Ok(ProfileAttr::new(code, label.clone()))
        };
        Ok(Self {
            age_group: attr(ProfileAttribute::AgeGroup, codes[0])?,
            education: attr(ProfileAttribute::Education, codes[1])?,
            gender: attr(ProfileAttribute::Gender, codes[2])?,
            consumption_level: attr(ProfileAttribute::ConsumptionLevel, codes[3])?,
            occupation: attr(ProfileAttribute::Occupation, codes[4])?,
        })
    }

    pub fn validate(&self, schema: &ProfileSchema) -> Result<()> {
        for a in ProfileAttribute::ALL {
            let code = usize::from(self.get(a).code);
            if code >= schema.table(a).len() {
                return Err(Error::Profile(format!("{} code {code} not in vocabulary", a.name())));
            }
        }
        Ok(())
    }
}

/// Label tables for the five profile attributes, indexed by code.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ProfileSchema {
    pub age_group: Vec<String>,
    pub education: Vec<String>,
    pub gender: Vec<String>,
    pub consumption_level: Vec<String>,
    pub occupation: Vec<String>,
}

impl ProfileSchema {
    pub fn table(&self, attr: ProfileAttribute) -> &[String] {
        match attr {
            ProfileAttribute::AgeGroup => &self.age_group,
            ProfileAttribute::Education => &self.education,
            ProfileAttribute::Gender => &self.gender,
            ProfileAttribute::ConsumptionLevel => &self.consumption_level,
            ProfileAttribute::Occupation => &self.occupation,
        }
    }
}

/// Label tables for locations, intents and profile attributes. Weekdays and
/// timeslots are fixed at 7 and 96.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Vocabularies {
    locations: Vec<String>,
    intents: Vec<String>,
    profile: ProfileSchema,
}

impl Vocabularies {
    pub fn new(locations: Vec<String>, intents: Vec<String>, profile: ProfileSchema) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::Vocabulary("location set is empty".into()));
        }
        if intents.is_empty() {
            return Err(Error::Vocabulary("intent set is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for label in &intents {
            if !seen.insert(label.as_str()) {
                return Err(Error::Vocabulary(format!("duplicate intent label {label:?}")));
            }
        }
        for a in ProfileAttribute::ALL {
            if profile.table(a).is_empty() {
                return Err(Error::Vocabulary(format!("{} table is empty", a.name())));
            }
        }
        Ok(Self {
            locations,
            intents,
            profile,
        })
    }

    /// Bundled fixture vocabulary: 10 locations, 18 intents and six
    /// occupations matching the simulator's default archetypes.
    pub fn default_fixture() -> Self {
        let s = |xs: &[&str]| xs.iter().map(|x| String::from(*x)).collect::<Vec<_>>();
        Self::new(
            s(&[
                "home",
                "office",
                "school",
                "restaurant",
                "mall",
                "gym",
                "park",
                "hospital",
                "transit",
                "other",
            ]),
            s(&[
                "work",
                "study",
                "commute",
                "dining",
                "shopping",
                "entertainment",
                "sports",
                "social",
                "rest",
                "health",
                "travel",
                "reading",
                "music",
                "video",
                "gaming",
                "news",
                "finance",
                "household",
            ]),
            ProfileSchema {
                age_group: s(&["18-24", "25-34", "35-44", "45-54", "55-64", "65+"]),
                education: s(&["secondary", "bachelor", "master", "doctorate"]),
                gender: s(&["female", "male"]),
                consumption_level: s(&["low", "medium", "high"]),
                occupation: s(&[
                    "student",
                    "office worker",
                    "service worker",
                    "freelancer",
                    "retiree",
                    "homemaker",
                ]),
            },
        )
        .expect("fixture vocabulary is valid")
    }

    pub fn weekday_count(&self) -> usize {
        DAYS_PER_WEEK
    }

    pub fn timeslot_count(&self) -> usize {
        SLOTS_PER_DAY
    }

    pub fn location_count(&self) -> usize {
        self.locations.len()
    }

    pub fn intent_count(&self) -> usize {
        self.intents.len()
    }

    pub fn locations(&self) -> &[String] {
        &self.locations
    }

    pub fn intents(&self) -> &[String] {
        &self.intents
    }

    pub fn profile(&self) -> &ProfileSchema {
        &self.profile
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Provenance {
    Real,
    Synthetic,
    Mixed,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Real => "real",
            Self::Synthetic => "synthetic",
            Self::Mixed => "mixed",
        }
    }
}

/// Ordered event series for one user. Events are strictly ascending by
/// [`TimeKey`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorSequence {
    user_id: String,
    profile: UserProfile,
    events: Vec<BehaviorEvent>,
    provenance: Provenance,
}

impl BehaviorSequence {
    /// Fails unless events are strictly ascending by time key.
    pub fn new(
        user_id: impl Into<String>,
        profile: UserProfile,
        events: Vec<BehaviorEvent>,
        provenance: Provenance,
    ) -> Result<Self> {
        let user_id = user_id.into();
        if let Some(w) = events.windows(2).find(|w| w[0].key() >= w[1].key()) {
            let reason = if w[0].key() == w[1].key() {
                format!("two events share slot {:?}", w[1].key())
            } else {
                format!("events out of order at {:?}", w[1].key())
            };
            return Err(Error::Sequence { user: user_id, reason });
        }
        Ok(Self {
            user_id,
            profile,
            events,
            provenance,
        })
    }

    /// Sorts and dedupes first; returns the sequence and the dropped count.
    pub fn normalized(
        user_id: impl Into<String>,
        profile: UserProfile,
        events: &[BehaviorEvent],
        provenance: Provenance,
    ) -> (Self, usize) {
        let (events, dropped) = sort_and_dedupe(events);
        let seq = Self {
            user_id: user_id.into(),
            profile,
            events,
            provenance,
        };
        (seq, dropped)
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn profile(&self) -> &UserProfile {
        &self.profile
    }

    pub fn events(&self) -> &[BehaviorEvent] {
        &self.events
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Same user and profile with a different (already ordered) event list.
    pub fn with_events(&self, events: Vec<BehaviorEvent>) -> Result<Self> {
        Self::new(self.user_id.clone(), self.profile.clone(), events, self.provenance)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SplitTag {
    Population,
    Individual,
    Unsplit,
}

/// Sequences sharing one vocabulary, with unique user ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    vocabularies: Vocabularies,
    sequences: Vec<BehaviorSequence>,
    split_tag: SplitTag,
}

impl Dataset {
    pub fn new(vocabularies: Vocabularies, sequences: Vec<BehaviorSequence>, split_tag: SplitTag) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for seq in &sequences {
            if !ids.insert(seq.user_id()) {
                return Err(Error::Dataset(format!("duplicate user id {:?}", seq.user_id())));
            }
            seq.profile().validate(vocabularies.profile())?;
            for e in seq.events() {
                if let Some(v) = validate_event(e, &vocabularies).first() {
                    return Err(Error::Sequence {
                        user: seq.user_id().into(),
                        reason: format!("{v}"),
                    });
                }
            }
        }
        Ok(Self {
            vocabularies,
            sequences,
            split_tag,
        })
    }

    pub fn vocabularies(&self) -> &Vocabularies {
        &self.vocabularies
    }

    pub fn sequences(&self) -> &[BehaviorSequence] {
        &self.sequences
    }

    pub fn split_tag(&self) -> SplitTag {
        self.split_tag
    }

    pub fn user_count(&self) -> usize {
        self.sequences.len()
    }

    pub fn event_count(&self) -> usize {
        self.sequences.iter().map(BehaviorSequence::len).sum()
    }

    pub fn get(&self, user_id: &str) -> Option<&BehaviorSequence> {
        self.sequences.iter().find(|s| s.user_id() == user_id)
    }

    pub fn into_sequences(self) -> Vec<BehaviorSequence> {
        self.sequences
    }

    /// Concatenates the sequences of two datasets sharing a vocabulary.
    pub fn union(&self, other: &Dataset) -> Result<Dataset> {
        if self.vocabularies != other.vocabularies {
            return Err(Error::VocabularyMismatch);
        }
        let mut seqs = self.sequences.clone();
        seqs.extend(other.sequences.iter().cloned());
        Dataset::new(self.vocabularies.clone(), seqs, SplitTag::Unsplit)
    }
}
