//! Generator prompt assembly, strict parsing of generated lines, the
//! segmented retry loop and Pass@1.
//!
//! Generated output uses one event per line, `weekday,timestamp,loc,intent`,
//! with no week field; each accepted segment's events are assigned the week
//! index of the segment they were requested for.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::{self, Write as _};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::sim::WeekTemplate;
use crate::split::WeekSegment;
use crate::types::{
    sort_and_dedupe, BehaviorEvent, BehaviorSequence, ProfileAttribute, Provenance, UserProfile, Vocabularies,
    DAYS_PER_WEEK, SLOTS_PER_DAY,
};

/// The exact line format requested from the generator.
pub const LINE_FORMAT: &str = "weekday,timestamp,loc,intent";

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct GenerationPolicy {
    pub seed_window_days: u32,
    /// Valid lines a response needs to pass.
    pub min_lines: u32,
    /// Line count requested in the closing prompt rule.
    pub requested_lines: u32,
    pub max_attempts_per_segment: u32,
    /// Number of weekly segments to generate per user.
    pub target_weeks: u32,
    /// Include the previously accepted week in each later prompt.
    pub condition_on_previous: bool,
}

impl Default for GenerationPolicy {
    fn default() -> Self {
        Self {
            seed_window_days: 7,
            min_lines: 90,
            requested_lines: 100,
            max_attempts_per_segment: 3,
            target_weeks: 4,
            condition_on_previous: false,
        }
    }
}

impl GenerationPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.seed_window_days < 1 {
            return Err(Error::Policy("seed_window_days must be at least 1".into()));
        }
        if self.min_lines < 1 {
            return Err(Error::Policy("min_lines must be at least 1".into()));
        }
        if self.max_attempts_per_segment < 1 {
            return Err(Error::Policy("max_attempts_per_segment must be at least 1".into()));
        }
        if self.target_weeks < 1 {
            return Err(Error::Policy("target_weeks must be at least 1".into()));
        }
        Ok(())
    }
}

/// Serializes events in the generator line grammar, one per line with a
/// trailing newline.
pub fn serialize_lines(events: &[BehaviorEvent]) -> String {
    let mut out = String::with_capacity(events.len() * 12);
    for e in events {
        let _ = writeln!(out, "{},{},{},{}", e.weekday, e.timeslot, e.location_id, e.intent_id);
    }
    out
}

fn push_json_str(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

/// Profile as a flat JSON object of attribute labels, in fixed key order.
pub fn profile_json(profile: &UserProfile) -> String {
    let mut out = String::from("{");
    for (i, a) in ProfileAttribute::ALL.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        push_json_str(&mut out, a.name());
        out.push_str(": ");
        push_json_str(&mut out, &profile.get(*a).label);
    }
    out.push('}');
    out
}

/// Seed events restricted to the policy's window. Windows shorter than a
/// week keep the first `seed_window_days` weekdays.
pub fn seed_window<'a>(seed: &'a WeekSegment, policy: &GenerationPolicy) -> &'a [BehaviorEvent] {
    let days = policy.seed_window_days as usize;
    let events = seed.events();
    if days >= DAYS_PER_WEEK {
        return events;
    }
    let end = events.partition_point(|e| usize::from(e.weekday) < days);
    &events[..end]
}

/// Builds the system and user messages for one weekly segment.
pub fn build_generation_prompt(
    profile: &UserProfile,
    seed: &WeekSegment,
    vocab: &Vocabularies,
    policy: &GenerationPolicy,
) -> PromptBundle {
    build_prompt_with_context(profile, seed_window(seed, policy), None, vocab, policy)
}

/// As [`build_generation_prompt`], optionally appending the previously
/// accepted week as extra context.
pub fn build_prompt_with_context(
    profile: &UserProfile,
    seed_events: &[BehaviorEvent],
    previous: Option<&[BehaviorEvent]>,
    vocab: &Vocabularies,
    policy: &GenerationPolicy,
) -> PromptBundle {
    let mut system_text = String::new();
    let _ = write!(
        system_text,
        "You are an assistant generating behavioral data based on given user behavior and profile data. \
I will provide you with a subset of real behavioral data in the format [weekday, timestamp, loc, intent].\n\
\n\
Your task:\n\
1. Generate behavioral data for one week (minimum {min} lines) in the exact format: \"{LINE_FORMAT}\".\n\
2. Make sure to mimic realistic patterns of the given person, such as daily routines, work hours, and leisure activities, \
while ensuring diversity in location (loc) and intent. Don't have repetitive generation.\n\
3. Ensure the weekdays values are within the range of 0-{max_day}, and timestamp values are within the range of 0-{max_slot}. \
Ensure the loc values are within the range of 0-{max_loc}, and intent values are within the range of 0-{max_intent}.\n\
4. Ensure that generated data has more than {requested} lines and is in the correct format.\n",
        min = policy.min_lines,
        max_day = DAYS_PER_WEEK - 1,
        max_slot = SLOTS_PER_DAY - 1,
        max_loc = vocab.location_count() - 1,
        max_intent = vocab.intent_count() - 1,
        requested = policy.requested_lines,
    );

    let mut user_text = String::from("Profile:\n");
    user_text.push_str(&profile_json(profile));
    user_text.push_str("\nBehavior data:\n");
    user_text.push_str(&serialize_lines(seed_events));
    if let Some(prev) = previous {
        user_text.push_str("Previously generated week:\n");
        user_text.push_str(&serialize_lines(prev));
    }
    PromptBundle { system_text, user_text }
}

/// Why a generated line was rejected. One category per line: the first
/// failing check in field order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LineViolation {
    FieldCount,
    NonInteger,
    WeekdayRange,
    TimeslotRange,
    UnknownLocation,
    UnknownIntent,
}

impl LineViolation {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::FieldCount => "field_count",
            Self::NonInteger => "non_integer",
            Self::WeekdayRange => "weekday_range",
            Self::TimeslotRange => "timeslot_range",
            Self::UnknownLocation => "unknown_location",
            Self::UnknownIntent => "unknown_intent",
        }
    }
}

impl fmt::Display for LineViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ParseReport {
    /// Non-blank lines, excluding code-fence markers.
    pub total_lines: usize,
    pub valid_events: Vec<BehaviorEvent>,
    /// `(1-based line number, category)`.
    pub violations: Vec<(usize, LineViolation)>,
    pub met_min_lines: bool,
}

impl ParseReport {
    /// No violations and enough valid lines.
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty() && self.met_min_lines
    }
}

fn is_fence(line: &str) -> bool {
    line.starts_with("```")
}

fn parse_line(line: &str, vocab: &Vocabularies, week: u32) -> core::result::Result<BehaviorEvent, LineViolation> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(LineViolation::FieldCount);
    }
    let mut vals = [0i64; 4];
    for (slot, f) in vals.iter_mut().zip(&fields) {
        *slot = f.parse::<i64>().map_err(|_| LineViolation::NonInteger)?;
    }
    let [d, t, l, b] = vals;
    if !(0..DAYS_PER_WEEK as i64).contains(&d) {
        return Err(LineViolation::WeekdayRange);
    }
    if !(0..SLOTS_PER_DAY as i64).contains(&t) {
        return Err(LineViolation::TimeslotRange);
    }
    if !(0..vocab.location_count() as i64).contains(&l) {
        return Err(LineViolation::UnknownLocation);
    }
    if !(0..vocab.intent_count() as i64).contains(&b) {
        return Err(LineViolation::UnknownIntent);
    }
    Ok(BehaviorEvent::new(week, d as u8, t as u8, l as u32, b as u32))
}

/// Classifies every line of a generator response. Events get week index 0.
pub fn parse_generated(text: &str, vocab: &Vocabularies, policy: &GenerationPolicy) -> ParseReport {
    parse_generated_for_week(text, vocab, policy, 0)
}

/// Classifies every line of a generator response, assigning `week` to the
/// valid events. Surrounding whitespace and lines starting with a code
/// fence are tolerated; anything else that is not a valid line is a
/// violation.
pub fn parse_generated_for_week(text: &str, vocab: &Vocabularies, policy: &GenerationPolicy, week: u32) -> ParseReport {
    let mut report = ParseReport {
        total_lines: 0,
        valid_events: Vec::new(),
        violations: Vec::new(),
        met_min_lines: false,
    };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || is_fence(line) {
            continue;
        }
        report.total_lines += 1;
        match parse_line(line, vocab, week) {
            Ok(e) => report.valid_events.push(e),
            Err(v) => report.violations.push((i + 1, v)),
        }
    }
    report.met_min_lines = report.valid_events.len() >= policy.min_lines as usize;
    report
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum BackendError {
    Config { message: String },
    Transport { message: String },
    Timeout,
    Status { code: u16, body: String },
    ReplayExhausted { user_id: String, segment_index: u32 },
}

impl fmt::Display for BackendError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config { message } => write!(f, "backend configuration error: {message}"),
            Self::Transport { message } => write!(f, "transport error: {message}"),
            Self::Timeout => f.write_str("request timed out"),
            Self::Status { code, body } => write!(f, "endpoint returned status {code}: {body}"),
            Self::ReplayExhausted { user_id, segment_index } => {
                write!(f, "replay exhausted for user {user_id} segment {segment_index}")
            }
        }
    }
}

impl core::error::Error for BackendError {}

/// Everything a backend may need to answer one generation call.
#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub user_id: &'a str,
    pub profile: &'a UserProfile,
    /// Target week being generated (0-based).
    pub segment_index: u32,
    /// 0-based attempt within the segment.
    pub attempt: u32,
    /// Independent repetition of the whole generation (privacy audits).
    pub run_index: u32,
    pub seed_events: &'a [BehaviorEvent],
    pub bundle: &'a PromptBundle,
}

/// A source of raw generator text.
pub trait Generator {
    fn complete(&self, request: &GenerationRequest<'_>) -> core::result::Result<String, BackendError>;
}

impl<G: Generator + ?Sized> Generator for &G {
    fn complete(&self, request: &GenerationRequest<'_>) -> core::result::Result<String, BackendError> {
        (**self).complete(request)
    }
}

/// Offline generator: treats the seed events as the user's routine and
/// re-renders it with fresh noise from a seed derived from
/// `(seed, user, run, segment, attempt)`.
#[derive(Debug, Clone)]
pub struct SimulatorGenerator {
    pub seed: u64,
    pub routine_ppm: u32,
    pub location_count: u32,
    pub intent_count: u32,
}

impl SimulatorGenerator {
    pub fn new(seed: u64, routine_strength: f64, vocab: &Vocabularies) -> Self {
        Self {
            seed,
            routine_ppm: crate::sim::routine_ppm(routine_strength),
            location_count: vocab.location_count() as u32,
            intent_count: vocab.intent_count() as u32,
        }
    }
}

impl Generator for SimulatorGenerator {
    fn complete(&self, req: &GenerationRequest<'_>) -> core::result::Result<String, BackendError> {
        let template = WeekTemplate::from_events(req.seed_events);
        let call = (u64::from(req.run_index) << 40) | (u64::from(req.segment_index) << 20) | u64::from(req.attempt);
        let noise_seed = rng::mix(rng::mix(self.seed, rng::fnv1a(req.user_id)), call);
        let events = template.render_week(0, self.routine_ppm, noise_seed, self.location_count, self.intent_count);
        Ok(serialize_lines(&events))
    }
}

/// One backend call as seen by the pipeline, for the audit log.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct AttemptTranscript {
    pub user_id: String,
    pub run_index: u32,
    pub segment_index: u32,
    pub attempt: u32,
    pub prompt: PromptBundle,
    pub response: String,
    pub report: ParseReport,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationRecord {
    pub user_id: String,
    /// Backend calls made for this user.
    pub attempts: u32,
    pub first_attempt_valid: bool,
    pub final_sequence: Option<BehaviorSequence>,
    pub reports: Vec<ParseReport>,
    pub failed_segments: Vec<u32>,
    /// Accepted lines dropped because they repeated a slot.
    pub dropped_duplicates: usize,
}

/// Runs segmented generation for one user: for each target week, build the
/// prompt, call the backend and parse; a response with any violation or too
/// few lines is retried up to `max_attempts_per_segment` times.
///
/// Backend errors abort the user and are returned as-is; a user whose
/// segments all fail yields a record with no final sequence.
#[allow(clippy::too_many_arguments)]
pub fn generate_user<G: Generator + ?Sized>(
    backend: &G,
    user_id: &str,
    profile: &UserProfile,
    seed: &WeekSegment,
    vocab: &Vocabularies,
    policy: &GenerationPolicy,
    run_index: u32,
    observer: &mut dyn FnMut(AttemptTranscript),
) -> core::result::Result<GenerationRecord, BackendError> {
    let seed_events = seed_window(seed, policy);
    let mut record = GenerationRecord {
        user_id: user_id.into(),
        attempts: 0,
        first_attempt_valid: false,
        final_sequence: None,
        reports: Vec::new(),
        failed_segments: Vec::new(),
        dropped_duplicates: 0,
    };
    let mut accepted: Vec<BehaviorEvent> = Vec::new();
    let mut previous: Option<Vec<BehaviorEvent>> = None;

    for week in 0..policy.target_weeks {
        let context = if policy.condition_on_previous {
            previous.as_deref()
        } else {
            None
        };
        let bundle = build_prompt_with_context(profile, seed_events, context, vocab, policy);
        let mut week_ok = false;
        for attempt in 0..policy.max_attempts_per_segment {
            let request = GenerationRequest {
                user_id,
                profile,
                segment_index: week,
                attempt,
                run_index,
                seed_events,
                bundle: &bundle,
            };
            let response = backend.complete(&request)?;
            let report = parse_generated_for_week(&response, vocab, policy, week);
            let valid = report.is_valid();
            if record.attempts == 0 {
                record.first_attempt_valid = valid;
            }
            record.attempts += 1;
            observer(AttemptTranscript {
                user_id: user_id.into(),
                run_index,
                segment_index: week,
                attempt,
                prompt: bundle.clone(),
                response,
                report: report.clone(),
            });
            if valid {
                let (events, dropped) = sort_and_dedupe(&report.valid_events);
                record.dropped_duplicates += dropped;
                previous = Some(events.clone());
                accepted.extend(events);
                record.reports.push(report);
                week_ok = true;
                break;
            }
            record.reports.push(report);
        }
        if !week_ok {
            record.failed_segments.push(week);
        }
    }

    if !accepted.is_empty() {
        let seq = BehaviorSequence::new(user_id, profile.clone(), accepted, Provenance::Synthetic)
            .expect("weeks are appended in ascending order");
        record.final_sequence = Some(seq);
    }
    Ok(record)
}

/// Fraction of records whose very first backend call was valid.
pub fn pass_at_1(records: &[GenerationRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("generation records"));
    }
    let ok = records.iter().filter(|r| r.first_attempt_valid).count();
    Ok(ok as f64 / records.len() as f64)
}

/// Human-readable counts of violation categories, e.g. for logs.
pub fn violation_summary(report: &ParseReport) -> String {
    let mut counts: alloc::collections::BTreeMap<LineViolation, usize> = Default::default();
    for (_, v) in &report.violations {
        *counts.entry(*v).or_default() += 1;
    }
    let parts: Vec<String> = counts.iter().map(|(k, n)| format!("{k}={n}")).collect();
    parts.join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::cell::RefCell;

    fn vocab() -> Vocabularies {
        Vocabularies::default_fixture()
    }

    fn profile() -> UserProfile {
        UserProfile::from_codes(vocab().profile(), [1, 2, 0, 1, 1]).unwrap()
    }

    fn week(n: usize) -> WeekSegment {
        let evs = (0..n)
            .map(|i| {
                BehaviorEvent::new(
                    0,
                    (i / 16) as u8,
                    (20 + i % 16 * 4) as u8,
                    (i % 10) as u32,
                    (i % 18) as u32,
                )
            })
            .collect();
        WeekSegment::new(0, evs).unwrap()
    }

    struct Scripted {
        responses: RefCell<Vec<String>>,
    }

    impl Scripted {
        fn new(rs: Vec<String>) -> Self {
            let mut rs = rs;
            rs.reverse();
            Self {
                responses: RefCell::new(rs),
            }
        }
    }

    impl Generator for Scripted {
        fn complete(&self, req: &GenerationRequest<'_>) -> core::result::Result<String, BackendError> {
            self.responses.borrow_mut().pop().ok_or(BackendError::ReplayExhausted {
                user_id: req.user_id.into(),
                segment_index: req.segment_index,
            })
        }
    }

    #[test]
    fn system_text_carries_format_and_ranges() {
        let b = build_generation_prompt(&profile(), &week(100), &vocab(), &GenerationPolicy::default());
        assert!(b.system_text.contains("\"weekday,timestamp,loc,intent\""));
        assert!(b.system_text.contains("minimum 90 lines"));
        assert!(b.system_text.contains("more than 100 lines"));
        assert!(b.system_text.contains("weekdays values are within the range of 0-6"));
        assert!(b.system_text.contains("timestamp values are within the range of 0-95"));
        for rule in ["\n1. ", "\n2. ", "\n3. ", "\n4. "] {
            assert!(b.system_text.contains(rule));
        }
    }

    #[test]
    fn user_text_has_one_line_per_seed_event() {
        let b = build_generation_prompt(&profile(), &week(105), &vocab(), &GenerationPolicy::default());
        let n = b
            .user_text
            .lines()
            .filter(|l| parse_line(l, &vocab(), 0).is_ok())
            .count();
        assert_eq!(n, 105);
        assert!(b.user_text.starts_with("Profile:\n{\"age_group\": \"25-34\""));
        assert!(b.user_text.contains("\"occupation\": \"office worker\"}"));
    }

    #[test]
    fn seed_window_keeps_first_days() {
        let policy = GenerationPolicy {
            seed_window_days: 3,
            ..GenerationPolicy::default()
        };
        let seg = week(100);
        let w = seed_window(&seg, &policy);
        assert_eq!(w.len(), 48);
        assert!(w.iter().all(|e| e.weekday < 3));
    }

    #[test]
    fn json_escaping() {
        let mut p = profile();
        p.occupation.label = "a\"b\\c".into();
        assert!(profile_json(&p).contains("\"a\\\"b\\\\c\""));
    }

    #[test]
    fn parse_counts_and_threshold() {
        let text = serialize_lines(week(95).events());
        let r = parse_generated(&text, &vocab(), &GenerationPolicy::default());
        assert_eq!(r.valid_events.len(), 95);
        assert!(r.met_min_lines && r.is_valid());
        let r = parse_generated(
            &serialize_lines(week(89).events()),
            &vocab(),
            &GenerationPolicy::default(),
        );
        assert!(!r.met_min_lines && !r.is_valid());
    }

    #[test]
    fn parse_categories() {
        let v = vocab();
        let p = GenerationPolicy::default();
        let cases = [
            ("3,48,12", LineViolation::FieldCount),
            ("3,48,1,2,5", LineViolation::FieldCount),
            ("a,48,1,2", LineViolation::NonInteger),
            ("3,4.5,1,2", LineViolation::NonInteger),
            ("7,48,1,2", LineViolation::WeekdayRange),
            ("-1,48,1,2", LineViolation::WeekdayRange),
            ("2,100,4,7", LineViolation::TimeslotRange),
            ("2,96,4,7", LineViolation::TimeslotRange),
            ("2,10,10,7", LineViolation::UnknownLocation),
            ("2,10,4,18", LineViolation::UnknownIntent),
            ("weekday,timestamp,loc,intent", LineViolation::NonInteger),
            ("[3,48,1,2]", LineViolation::NonInteger),
        ];
        for (line, cat) in cases {
            let r = parse_generated(line, &v, &p);
            assert_eq!(r.violations, vec![(1, cat)], "{line}");
            assert_eq!(r.total_lines, 1);
        }
    }

    #[test]
    fn parse_tolerates_fences_and_whitespace() {
        let text = "```text\n  3,48,2,5  \n\n 1 , 2 , 3 , 4\n```\n";
        let r = parse_generated(text, &vocab(), &GenerationPolicy::default());
        assert_eq!(r.total_lines, 2);
        assert_eq!(
            r.valid_events,
            vec![BehaviorEvent::new(0, 3, 48, 2, 5), BehaviorEvent::new(0, 1, 2, 3, 4)]
        );
        assert!(r.violations.is_empty());
    }

    #[test]
    fn violation_line_numbers_are_raw_lines() {
        let text = "```\n3,48,2,5\n\n9,1,1,1\n";
        let r = parse_generated(text, &vocab(), &GenerationPolicy::default());
        assert_eq!(r.violations, vec![(4, LineViolation::WeekdayRange)]);
        assert_eq!(r.valid_events.len() + r.violations.len(), r.total_lines);
    }

    fn policy(weeks: u32) -> GenerationPolicy {
        GenerationPolicy {
            target_weeks: weeks,
            ..GenerationPolicy::default()
        }
    }

    #[test]
    fn happy_path_one_call_per_week() {
        let good = serialize_lines(week(100).events());
        let backend = Scripted::new(vec![good.clone(); 4]);
        let mut log = Vec::new();
        let r = generate_user(
            &backend,
            "u",
            &profile(),
            &week(100),
            &vocab(),
            &policy(4),
            0,
            &mut |t| log.push(t),
        )
        .unwrap();
        assert_eq!(r.attempts, 4);
        assert!(r.first_attempt_valid);
        let seq = r.final_sequence.unwrap();
        assert_eq!(seq.len(), 400);
        assert_eq!(seq.provenance(), Provenance::Synthetic);
        assert_eq!(seq.events().last().unwrap().week_index, 3);
        assert_eq!(log.len(), 4);
    }

    #[test]
    fn retry_after_malformed_first_response() {
        let good = serialize_lines(week(100).events());
        let backend = Scripted::new(vec!["oops".into(), good]);
        let r = generate_user(
            &backend,
            "u",
            &profile(),
            &week(100),
            &vocab(),
            &policy(1),
            0,
            &mut |_| {},
        )
        .unwrap();
        assert!(!r.first_attempt_valid);
        assert_eq!(r.attempts, 2);
        assert!(r.final_sequence.is_some());
    }

    #[test]
    fn exhaustion_leaves_no_sequence() {
        let backend = Scripted::new(vec!["3,48,12".into(); 6]);
        let r = generate_user(
            &backend,
            "u",
            &profile(),
            &week(100),
            &vocab(),
            &policy(2),
            0,
            &mut |_| {},
        )
        .unwrap();
        assert_eq!(r.attempts, 6);
        assert!(r.final_sequence.is_none());
        assert_eq!(r.failed_segments, vec![0, 1]);
    }

    #[test]
    fn backend_error_propagates() {
        let backend = Scripted::new(vec![]);
        let r = generate_user(
            &backend,
            "u",
            &profile(),
            &week(100),
            &vocab(),
            &policy(1),
            0,
            &mut |_| {},
        );
        assert!(matches!(r, Err(BackendError::ReplayExhausted { .. })));
    }

    #[test]
    fn simulator_backend_output_parses_cleanly() {
        let g = SimulatorGenerator::new(5, 0.9, &vocab());
        let seg = week(100);
        let bundle = build_generation_prompt(&profile(), &seg, &vocab(), &GenerationPolicy::default());
        let req = GenerationRequest {
            user_id: "u",
            profile: &profile(),
            segment_index: 0,
            attempt: 0,
            run_index: 0,
            seed_events: seg.events(),
            bundle: &bundle,
        };
        let text = g.complete(&req).unwrap();
        let r = parse_generated(&text, &vocab(), &GenerationPolicy::default());
        assert!(r.violations.is_empty());
        assert_eq!(r.valid_events.len(), 100);
        let again = g.complete(&req).unwrap();
        assert_eq!(text, again);
        let other_run = g.complete(&GenerationRequest { run_index: 1, ..req }).unwrap();
        assert_ne!(text, other_run);
    }

    #[test]
    fn pass_at_1_counts() {
        let rec = |ok| GenerationRecord {
            user_id: "u".into(),
            attempts: 1,
            first_attempt_valid: ok,
            final_sequence: None,
            reports: vec![],
            failed_segments: vec![],
            dropped_duplicates: 0,
        };
        let mut rs: Vec<_> = (0..10).map(|i| rec(i < 8)).collect();
        assert_eq!(pass_at_1(&rs).unwrap(), 0.8);
        rs.reverse();
        assert_eq!(pass_at_1(&rs).unwrap(), 0.8);
        assert_eq!(pass_at_1(&[rec(true), rec(true)]).unwrap(), 1.0);
        assert!(pass_at_1(&[]).is_err());
    }
}
