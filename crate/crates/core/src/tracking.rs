//! Smell instance tracking: per-version occurrence sets become lifetimes.
//!
//! An instance is identified by `(rule, file, entity_path, ordinal)`, so line
//! shifts keep identity while file renames do not (unless the rename
//! heuristic is enabled). The censoring flag keeps the convention used by
//! the upstream data set: `censored = true` means the smell disappeared.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::ingest::History;
use crate::rules::{RuleId, Scope, SmellOccurrence};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceKey {
    pub rule: RuleId,
    pub file: String,
    pub entity_path: String,
    pub ordinal: u32,
}

impl InstanceKey {
    pub fn new(occurrence: &SmellOccurrence, ordinal: u32) -> Self {
        InstanceKey {
            rule: occurrence.rule,
            file: occurrence.file.clone(),
            entity_path: occurrence.entity_path.clone(),
            ordinal,
        }
    }
}

/// `file|entity_path|ordinal`; the rule is reported in its own column.
impl fmt::Display for InstanceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}|{}", self.file, self.entity_path, self.ordinal)
    }
}

/// Keys for one version's occurrences, in input order.
///
/// Occurrences sharing `(rule, file, entity_path)` get ordinals by ascending
/// `begin_line` (missing lines sort first, ties keep input order).
pub fn assign_keys(occurrences: &[SmellOccurrence]) -> Vec<InstanceKey> {
    let mut groups: BTreeMap<(RuleId, &str, &str), Vec<usize>> = BTreeMap::new();
    for (i, o) in occurrences.iter().enumerate() {
        groups
            .entry((o.rule, o.file.as_str(), o.entity_path.as_str()))
            .or_default()
            .push(i);
    }
    let mut ordinals = vec![0u32; occurrences.len()];
    for idx in groups.values_mut() {
        idx.sort_by_key(|&i| (occurrences[i].begin_line, occurrences[i].end_line));
        for (ord, &i) in idx.iter().enumerate() {
            ordinals[i] = ord as u32;
        }
    }
    occurrences
        .iter()
        .zip(ordinals)
        .map(|(o, ord)| InstanceKey::new(o, ord))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Timeframe {
    First,
    Second,
}

impl Timeframe {
    pub fn number(self) -> u8 {
        match self {
            Timeframe::First => 1,
            Timeframe::Second => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    /// Key under which the instance was first seen.
    pub key: InstanceKey,
    pub scope: Scope,
    pub first_version: String,
    pub first_date: DateTime<Utc>,
    pub last_present_version: String,
    /// Date of the first version in which the instance is absent.
    pub end_date: Option<DateTime<Utc>>,
    /// `true` when the smell disappeared, `false` when still present at the
    /// end of the observation period.
    pub censored: bool,
    pub duration_days: f64,
    pub timeframe: Timeframe,
}

impl SurvivalRecord {
    pub fn rule(&self) -> RuleId {
        self.key.rule
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrackingOptions {
    /// Absences of up to this many consecutive versions do not end an instance.
    pub gap_tolerance: usize,
    pub rename_heuristic: bool,
}

pub fn days_between(from: DateTime<Utc>, to: DateTime<Utc>) -> f64 {
    (to - from).num_milliseconds() as f64 / 86_400_000.0
}

/// The instant halfway through the observation period.
pub fn timeframe_split(history: &History) -> Option<DateTime<Utc>> {
    let first = history.first_timestamp()?;
    let last = history.last_timestamp()?;
    let half_ms = (last - first).num_milliseconds() / 2;
    Some(first + Duration::milliseconds(half_ms))
}

/// Greedy rename matching for one version transition.
///
/// A removed and an added key pair up when rule and non-empty entity path are
/// equal and the file differs. Added keys are visited in key order, and each
/// takes the lexicographically smallest unmatched removed key.
pub fn apply_rename_heuristic(
    removed: &[InstanceKey],
    added: &[InstanceKey],
) -> Vec<(InstanceKey, InstanceKey)> {
    let removed: BTreeSet<&InstanceKey> = removed.iter().collect();
    let added: BTreeSet<&InstanceKey> = added.iter().collect();
    let mut used: HashSet<&InstanceKey> = HashSet::new();
    let mut pairs = Vec::new();
    for a in added {
        if a.entity_path.is_empty() {
            continue;
        }
        let candidate = removed.iter().copied().find(|r| {
            !used.contains(r) && r.rule == a.rule && r.entity_path == a.entity_path && r.file != a.file
        });
        if let Some(r) = candidate {
            used.insert(r);
            pairs.push((r.clone(), a.clone()));
        }
    }
    pairs
}

struct Track {
    origin: InstanceKey,
    first: usize,
    last_present: usize,
}

/// Decomposes each key's presence across the history into runs and emits one
/// record per run. Runs separated by at most `gap_tolerance` absent versions
/// are merged.
pub fn build_survival_records(history: &History, options: &TrackingOptions) -> Vec<SurvivalRecord> {
    let snaps = history.snapshots();
    if snaps.is_empty() {
        return Vec::new();
    }
    let last_index = snaps.len() - 1;
    let split = timeframe_split(history).expect("non-empty history");

    let mut open: BTreeMap<InstanceKey, Track> = BTreeMap::new();
    let mut closed: Vec<(Track, usize)> = Vec::new();

    for (k, snap) in snaps.iter().enumerate() {
        let present: BTreeSet<InstanceKey> = assign_keys(&snap.occurrences).into_iter().collect();

        if options.rename_heuristic && k > 0 {
            let removed: Vec<InstanceKey> = open
                .iter()
                .filter(|(key, t)| t.last_present == k - 1 && !present.contains(*key))
                .map(|(key, _)| key.clone())
                .collect();
            let added: Vec<InstanceKey> = present
                .iter()
                .filter(|key| !open.contains_key(*key))
                .cloned()
                .collect();
            for (old, new) in apply_rename_heuristic(&removed, &added) {
                let track = open.remove(&old).expect("removed key is open");
                open.insert(new, track);
            }
        }

        for key in present {
            open.entry(key.clone())
                .and_modify(|t| t.last_present = k)
                .or_insert(Track {
                    origin: key,
                    first: k,
                    last_present: k,
                });
        }

        let expired: Vec<InstanceKey> = open
            .iter()
            .filter(|(_, t)| k - t.last_present > options.gap_tolerance)
            .map(|(key, _)| key.clone())
            .collect();
        for key in expired {
            let t = open.remove(&key).expect("expired key is open");
            let end = t.last_present + 1;
            closed.push((t, end));
        }
    }

    let mut records: Vec<SurvivalRecord> = Vec::with_capacity(closed.len() + open.len());
    let study_end = snaps[last_index].timestamp;
    let make = |t: &Track, end: Option<usize>| {
        let first_date = snaps[t.first].timestamp;
        let end_date = end.map(|e| snaps[e].timestamp);
        SurvivalRecord {
            key: t.origin.clone(),
            scope: t.origin.rule.scope(),
            first_version: snaps[t.first].version_id.clone(),
            first_date,
            last_present_version: snaps[t.last_present].version_id.clone(),
            end_date,
            censored: end.is_some(),
            duration_days: days_between(first_date, end_date.unwrap_or(study_end)),
            timeframe: if first_date < split {
                Timeframe::First
            } else {
                Timeframe::Second
            },
        }
    };
    for (t, end) in &closed {
        records.push(make(t, Some(*end)));
    }
    for t in open.values() {
        if t.last_present == last_index {
            records.push(make(t, None));
        } else {
            records.push(make(t, Some(t.last_present + 1)));
        }
    }
    records.sort_by(|a, b| (a.first_date, &a.key).cmp(&(b.first_date, &b.key)));
    records
}

/// Splits records into the two halves of the observation period.
///
/// Records born before the split form the first view, truncated as a
/// sub-study ending at the split: instances still alive at the split become
/// right-censored there. Records born at or after the split form the second
/// view unchanged.
pub fn assign_timeframes(
    records: &[SurvivalRecord],
    history: &History,
) -> (Vec<SurvivalRecord>, Vec<SurvivalRecord>) {
    match timeframe_split(history) {
        Some(split) => assign_timeframes_at(records, split),
        None => (Vec::new(), Vec::new()),
    }
}

pub fn assign_timeframes_at(
    records: &[SurvivalRecord],
    split: DateTime<Utc>,
) -> (Vec<SurvivalRecord>, Vec<SurvivalRecord>) {
    let mut first = Vec::new();
    let mut second = Vec::new();
    for r in records {
        if r.first_date < split {
            let mut r = r.clone();
            r.timeframe = Timeframe::First;
            if r.end_date.is_none_or(|e| e > split) {
                r.censored = false;
                r.end_date = None;
                r.duration_days = days_between(r.first_date, split);
            }
            first.push(r);
        } else {
            let mut r = r.clone();
            r.timeframe = Timeframe::Second;
            second.push(r);
        }
    }
    (first, second)
}
