//! On-disk formats: the event CSV plus profile and vocabulary sidecars.
//!
//! * Events: UTF-8 CSV with header `user_id,week,weekday,timeslot,location,intent`,
//!   one event per line. Users appear in order of first occurrence.
//! * Profiles: JSON `{"users": [{"user_id", "age_group": {"code", "label"}, ...}]}`
//!   with the five attributes `age_group`, `education`, `gender`,
//!   `consumption_level`, `occupation`.
//! * Vocabulary: JSON `{"locations": [...], "intents": [...], "profile": {...}}`
//!   where `profile` maps each attribute to its label table. When present it
//!   is authoritative; otherwise location and intent counts are inferred from
//!   the largest ids seen and profile tables from the profile sidecar.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use bsynth_core::{
    validate_event, BehaviorEvent, BehaviorSequence, Dataset, ProfileAttr, ProfileSchema, Provenance, SplitTag,
    UserProfile, Vocabularies,
};

use crate::error::{Error, Result};

pub const EVENT_HEADER: [&str; 6] = ["user_id", "week", "weekday", "timeslot", "location", "intent"];

/// Supported event file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            other => Err(Error::Config(format!("unknown dataset format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub user_id: String,
    pub age_group: ProfileAttr,
    pub education: ProfileAttr,
    pub gender: ProfileAttr,
    pub consumption_level: ProfileAttr,
    pub occupation: ProfileAttr,
}

impl ProfileRecord {
    pub fn new(user_id: &str, p: &UserProfile) -> Self {
        Self {
            user_id: user_id.into(),
            age_group: p.age_group.clone(),
            education: p.education.clone(),
            gender: p.gender.clone(),
            consumption_level: p.consumption_level.clone(),
            occupation: p.occupation.clone(),
        }
    }

    pub fn profile(&self) -> UserProfile {
        UserProfile {
            age_group: self.age_group.clone(),
            education: self.education.clone(),
            gender: self.gender.clone(),
            consumption_level: self.consumption_level.clone(),
            occupation: self.occupation.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileFile {
    pub users: Vec<ProfileRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabFile {
    pub locations: Vec<String>,
    pub intents: Vec<String>,
    pub profile: ProfileSchema,
}

impl VocabFile {
    pub fn new(v: &Vocabularies) -> Self {
        Self {
            locations: v.locations().to_vec(),
            intents: v.intents().to_vec(),
            profile: v.profile().clone(),
        }
    }

    pub fn into_vocabularies(self) -> bsynth_core::Result<Vocabularies> {
        Vocabularies::new(self.locations, self.intents, self.profile)
    }
}

/// Paths making up one dataset on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub events: PathBuf,
    pub profiles: PathBuf,
    pub vocab: Option<PathBuf>,
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(path, format!("malformed JSON: {e}")))
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_profiles(path: &Path) -> Result<ProfileFile> {
    read_json(path)
}

pub fn read_vocab(path: &Path) -> Result<Vocabularies> {
    let f: VocabFile = read_json(path)?;
    f.into_vocabularies().map_err(|e| Error::data(path, e.to_string()))
}

/// One parsed CSV row with its 1-based line number.
struct Row {
    line: u64,
    user_id: String,
    event: BehaviorEvent,
}

fn read_rows(path: &Path) -> Result<Vec<Row>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::data(path, e.to_string()))?;
    let header = rdr
        .headers()
        .map_err(|e| Error::data(path, format!("line 1: {e}")))?
        .clone();
    if header.is_empty() {
        return Ok(Vec::new());
    }
    if header.iter().ne(EVENT_HEADER) {
        return Err(Error::data(
            path,
            format!(
                "line 1: malformed header {:?}, expected {:?}",
                header.iter().collect::<Vec<_>>(),
                EVENT_HEADER.join(",")
            ),
        ));
    }
    let mut rows = Vec::new();
    let mut problems = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::data(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 6 {
            problems.push(format!("line {line}: expected 6 fields, found {}", rec.len()));
            continue;
        }
        let num = |i: usize| rec[i].parse::<u64>();
        match (num(1), num(2), num(3), num(4), num(5)) {
            (Ok(w), Ok(d), Ok(t), Ok(l), Ok(b))
                if w <= u64::from(u32::MAX) && l <= u64::from(u32::MAX) && b <= u64::from(u32::MAX) =>
            {
                rows.push(Row {
                    line,
                    user_id: rec[0].to_string(),
                    // out-of-range day/slot values are kept saturated so validation reports them
                    event: BehaviorEvent::new(w as u32, d.min(255) as u8, t.min(255) as u8, l as u32, b as u32),
                })
            }
            _ => problems.push(format!("line {line}: non-integer or out-of-range field")),
        }
    }
    if !problems.is_empty() {
        return Err(Error::InvalidRecords {
            path: path.into(),
            count: problems.len(),
            details: problems.join("\n"),
        });
    }
    Ok(rows)
}

fn infer_vocab(rows: &[Row], profiles: &ProfileFile) -> Result<Vocabularies> {
    let max_loc = rows.iter().map(|r| r.event.location_id).max().unwrap_or(0);
    let max_int = rows.iter().map(|r| r.event.intent_id).max().unwrap_or(0);
    let table = |pick: fn(&ProfileRecord) -> &ProfileAttr| -> Vec<String> {
        let mut labels: BTreeMap<u16, String> = BTreeMap::new();
        for u in &profiles.users {
            let a = pick(u);
            labels.entry(a.code).or_insert_with(|| a.label.clone());
        }
        let n = labels.keys().next_back().map_or(0, |c| usize::from(*c) + 1);
        (0..n)
            .map(|c| labels.get(&(c as u16)).cloned().unwrap_or_else(|| format!("code{c}")))
            .collect()
    };
    let schema = ProfileSchema {
        age_group: table(|u| &u.age_group),
        education: table(|u| &u.education),
        gender: table(|u| &u.gender),
        consumption_level: table(|u| &u.consumption_level),
        occupation: table(|u| &u.occupation),
    };
    let locations = (0..=max_loc).map(|i| format!("location{i}")).collect();
    let intents = (0..=max_int).map(|i| format!("intent{i}")).collect();
    Ok(Vocabularies::new(locations, intents, schema)?)
}

/// Loads a dataset. In strict mode any invalid record aborts the load with
/// line-numbered diagnostics; otherwise invalid records are skipped with a
/// warning. Duplicate `(week, weekday, timeslot)` keys within a user keep
/// the first occurrence.
pub fn load_dataset(paths: &DatasetPaths, format: Format, strict: bool, provenance: Provenance) -> Result<Dataset> {
    let Format::Csv = format;
    let rows = read_rows(&paths.events)?;
    if rows.is_empty() {
        return Err(Error::data(&paths.events, "no sequences"));
    }
    let profiles = read_profiles(&paths.profiles)?;
    let vocab = match &paths.vocab {
        Some(p) => read_vocab(p)?,
        None => infer_vocab(&rows, &profiles)?,
    };

    let mut problems = Vec::new();
    let mut order: Vec<String> = Vec::new();
    let mut per_user: BTreeMap<String, Vec<BehaviorEvent>> = BTreeMap::new();
    for row in &rows {
        let v = validate_event(&row.event, &vocab);
        if !v.is_empty() {
            let msg: Vec<String> = v.iter().map(ToString::to_string).collect();
            problems.push(format!("line {}: {}", row.line, msg.join("; ")));
            continue;
        }
        let entry = per_user.entry(row.user_id.clone()).or_insert_with(|| {
            order.push(row.user_id.clone());
            Vec::new()
        });
        entry.push(row.event);
    }
    if !problems.is_empty() {
        if strict {
            return Err(Error::InvalidRecords {
                path: paths.events.clone(),
                count: problems.len(),
                details: problems.join("\n"),
            });
        }
        for p in &problems {
            log::warn!("{}: skipping {p}", paths.events.display());
        }
    }
    let by_id: BTreeMap<&str, &ProfileRecord> = profiles.users.iter().map(|u| (u.user_id.as_str(), u)).collect();
    let mut seqs = Vec::with_capacity(order.len());
    for id in &order {
        let rec = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::data(&paths.profiles, format!("no profile for user {id:?}")))?;
        let (seq, dropped) = BehaviorSequence::normalized(id.clone(), rec.profile(), &per_user[id], provenance);
        if dropped > 0 {
            log::warn!(
                "{}: user {id}: dropped {dropped} duplicate slot(s)",
                paths.events.display()
            );
        }
        seqs.push(seq);
    }
    if seqs.is_empty() {
        return Err(Error::data(&paths.events, "no sequences"));
    }
    Dataset::new(vocab, seqs, SplitTag::Unsplit).map_err(|e| Error::data(&paths.events, e.to_string()))
}

/// Writes the event CSV only.
pub fn write_events(path: &Path, d: &Dataset) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(EVENT_HEADER).expect("in-memory write");
        for s in d.sequences() {
            for e in s.events() {
                w.write_record([
                    s.user_id().to_string(),
                    e.week_index.to_string(),
                    e.weekday.to_string(),
                    e.timeslot.to_string(),
                    e.location_id.to_string(),
                    e.intent_id.to_string(),
                ])
                .expect("in-memory write");
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    write_atomic(path, &buf)
}

pub fn profile_file(d: &Dataset) -> ProfileFile {
    ProfileFile {
        users: d
            .sequences()
            .iter()
            .map(|s| ProfileRecord::new(s.user_id(), s.profile()))
            .collect(),
    }
}

/// Writes events plus both sidecars.
pub fn save_dataset(paths: &DatasetPaths, d: &Dataset) -> Result<()> {
    write_events(&paths.events, d)?;
    write_json(&paths.profiles, &profile_file(d))?;
    if let Some(v) = &paths.vocab {
        write_json(v, &VocabFile::new(d.vocabularies()))?;
    }
    Ok(())
}

/// Appends one JSON value per line, creating the file if needed.
pub fn append_jsonl<T: Serialize>(path: &Path, values: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    for v in values {
        serde_json::to_writer(&mut buf, v).expect("serializable value");
        buf.push(b'\n');
    }
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Writes one JSON value per line, replacing the file.
pub fn write_jsonl<T: Serialize>(path: &Path, values: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for v in values {
        serde_json::to_writer(&mut buf, v).expect("serializable value");
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}
