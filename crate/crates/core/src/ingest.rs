//! Version timeline ingestion: PMD-format XML reports, code-model files and
//! the manifest that ties versions, dates and size metrics together.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rules::{evaluate_rules, CodeModel, RuleError, RuleId, RuleSet, SmellOccurrence};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed XML at byte {offset}: {message}")]
    Xml { offset: u64, message: String },
    #[error("manifest row {row}: {message}")]
    Row { row: u64, message: String },
    #[error("manifest row {row}: duplicate version id `{version}` for app `{app}`")]
    DuplicateVersion { row: u64, app: String, version: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("history `{app}`: {message}")]
    InvalidHistory { app: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Logical lines are the density denominator, so `lloc` is at least one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeMetrics {
    pub lloc: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loc: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionSnapshot {
    pub version_id: String,
    pub timestamp: DateTime<Utc>,
    pub occurrences: Vec<SmellOccurrence>,
    pub size: SizeMetrics,
}

/// An application's versions ordered by strictly increasing timestamp.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawHistory")]
pub struct History {
    app_name: String,
    snapshots: Vec<VersionSnapshot>,
}

#[derive(Deserialize)]
struct RawHistory {
    app_name: String,
    snapshots: Vec<VersionSnapshot>,
}

impl TryFrom<RawHistory> for History {
    type Error = IngestError;

    fn try_from(raw: RawHistory) -> Result<Self, Self::Error> {
        History::new(raw.app_name, raw.snapshots)
    }
}

impl History {
    /// Sorts the snapshots by timestamp and checks the history invariants.
    pub fn new(app_name: impl Into<String>, mut snapshots: Vec<VersionSnapshot>) -> Result<Self, IngestError> {
        let app_name = app_name.into();
        let invalid = |message: String| IngestError::InvalidHistory {
            app: app_name.clone(),
            message,
        };
        snapshots.sort_by_key(|s| s.timestamp);
        let mut ids = HashSet::new();
        for (i, snap) in snapshots.iter().enumerate() {
            if !ids.insert(snap.version_id.as_str()) {
                return Err(invalid(format!("duplicate version id `{}`", snap.version_id)));
            }
            if i > 0 && snapshots[i - 1].timestamp == snap.timestamp {
                return Err(invalid(format!(
                    "versions `{}` and `{}` share timestamp {}",
                    snapshots[i - 1].version_id,
                    snap.version_id,
                    snap.timestamp.to_rfc3339()
                )));
            }
            if snap.size.lloc == 0 {
                return Err(invalid(format!("version `{}` has lloc = 0", snap.version_id)));
            }
            if let Some(o) = snap.occurrences.iter().find(|o| o.version_id != snap.version_id) {
                return Err(invalid(format!(
                    "occurrence tagged `{}` inside version `{}`",
                    o.version_id, snap.version_id
                )));
            }
        }
        Ok(History { app_name, snapshots })
    }

    pub fn app_name(&self) -> &str {
        &self.app_name
    }

    pub fn snapshots(&self) -> &[VersionSnapshot] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn first_timestamp(&self) -> Option<DateTime<Utc>> {
        self.snapshots.first().map(|s| s.timestamp)
    }

    pub fn last_timestamp(&self) -> Option<DateTime<Utc>> {
        self.snapshots.last().map(|s| s.timestamp)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("history serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        serde_json::from_str(text).map_err(|e| IngestError::Manifest(e.to_string()))
    }
}

/// Path handling applied to every report.
#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Leading path removed from report file names (after separator normalization).
    pub strip_prefix: Option<String>,
    /// Occurrences whose normalized file starts with one of these are dropped.
    pub exclude_prefixes: Vec<String>,
    pub rules: RuleSet,
}

impl IngestOptions {
    pub fn normalize_path(&self, raw: &str) -> String {
        let mut path = raw.replace('\\', "/");
        if let Some(prefix) = &self.strip_prefix {
            let prefix = prefix.replace('\\', "/");
            let prefix = prefix.trim_end_matches('/');
            if !prefix.is_empty() {
                if let Some(rest) = path.strip_prefix(prefix) {
                    if rest.is_empty() || rest.starts_with('/') {
                        path = rest.to_string();
                    }
                }
            }
        }
        while let Some(rest) = path.strip_prefix("./") {
            path = rest.to_string();
        }
        path.trim_start_matches('/').to_string()
    }

    fn excluded(&self, file: &str) -> bool {
        self.exclude_prefixes.iter().any(|p| {
            let p = p.replace('\\', "/");
            let p = p.trim_matches('/');
            !p.is_empty() && (file == p || file.starts_with(&format!("{p}/")))
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PmdReport {
    pub occurrences: Vec<SmellOccurrence>,
    /// Violations of rules outside the six tracked ones.
    pub skipped: usize,
    /// Violations dropped by the path exclusion filters.
    pub excluded: usize,
}

fn attr(start: &BytesStart<'_>, name: &[u8], reader_pos: u64) -> Result<Option<String>, IngestError> {
    for a in start.attributes() {
        let a = a.map_err(|e| IngestError::Xml {
            offset: reader_pos,
            message: e.to_string(),
        })?;
        if a.key.as_ref() == name {
            let v = a.unescape_value().map_err(|e| IngestError::Xml {
                offset: reader_pos,
                message: e.to_string(),
            })?;
            return Ok(Some(v.trim().to_string()));
        }
    }
    Ok(None)
}

fn line_attr(start: &BytesStart<'_>, name: &[u8], pos: u64) -> Result<Option<u32>, IngestError> {
    match attr(start, name, pos)? {
        None => Ok(None),
        Some(v) if v.is_empty() => Ok(None),
        Some(v) => v.parse::<u32>().map(Some).map_err(|_| IngestError::Xml {
            offset: pos,
            message: format!("attribute `{}` is not a line number: `{v}`", String::from_utf8_lossy(name)),
        }),
    }
}

/// Parses a PMD-format XML report (`pmd` > `file name=..` > `violation`).
///
/// Violations of rules outside the tracked six are counted in
/// [`PmdReport::skipped`]. The result is sorted by (file, begin_line).
pub fn parse_pmd_report(
    document: &[u8],
    version_id: &str,
    options: &IngestOptions,
) -> Result<PmdReport, IngestError> {
    let mut report = PmdReport::default();
    if document.iter().all(|b| b.is_ascii_whitespace()) {
        return Ok(report);
    }
    let mut reader = Reader::from_reader(document);
    let mut buf = Vec::new();
    let mut depth = 0usize;
    let mut saw_root = false;
    let mut current_file: Option<String> = None;

    loop {
        let event = reader.read_event_into(&mut buf).map_err(|e| IngestError::Xml {
            offset: reader.error_position(),
            message: e.to_string(),
        })?;
        let pos = reader.buffer_position();
        match event {
            Event::Start(ref e) | Event::Empty(ref e) => {
                let is_empty = matches!(event, Event::Empty(_));
                let name = e.name();
                let name = name.as_ref();
                if depth == 0 {
                    if name != b"pmd" {
                        return Err(IngestError::Xml {
                            offset: pos,
                            message: format!("root element is `{}`, expected `pmd`", String::from_utf8_lossy(name)),
                        });
                    }
                    saw_root = true;
                } else if depth == 1 && name == b"file" {
                    let file = attr(e, b"name", pos)?.ok_or_else(|| IngestError::Xml {
                        offset: pos,
                        message: "`file` element without `name`".into(),
                    })?;
                    current_file = Some(options.normalize_path(&file));
                } else if depth == 2 && name == b"violation" {
                    if let Some(file) = &current_file {
                        handle_violation(e, file, version_id, options, pos, &mut report)?;
                    }
                }
                if !is_empty {
                    depth += 1;
                }
            }
            Event::End(ref e) => {
                depth = depth.saturating_sub(1);
                if depth == 1 && e.name().as_ref() == b"file" {
                    current_file = None;
                }
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if !saw_root {
        return Err(IngestError::Xml {
            offset: reader.buffer_position(),
            message: "no `pmd` root element".into(),
        });
    }
    if depth != 0 {
        return Err(IngestError::Xml {
            offset: reader.buffer_position(),
            message: "unexpected end of document".into(),
        });
    }
    report.occurrences.sort_by(|a, b| {
        (&a.file, a.begin_line, a.end_line, a.rule, &a.entity_path).cmp(&(
            &b.file,
            b.begin_line,
            b.end_line,
            b.rule,
            &b.entity_path,
        ))
    });
    Ok(report)
}

fn handle_violation(
    e: &BytesStart<'_>,
    file: &str,
    version_id: &str,
    options: &IngestOptions,
    pos: u64,
    report: &mut PmdReport,
) -> Result<(), IngestError> {
    let rule = attr(e, b"rule", pos)?.unwrap_or_default();
    let Ok(rule) = rule.parse::<RuleId>() else {
        report.skipped += 1;
        return Ok(());
    };
    if options.excluded(file) {
        report.excluded += 1;
        return Ok(());
    }
    let begin_line = line_attr(e, b"beginline", pos)?;
    let end_line = line_attr(e, b"endline", pos)?;
    if let (Some(b), Some(end)) = (begin_line, end_line) {
        if b > end {
            return Err(IngestError::Xml {
                offset: pos,
                message: format!("beginline {b} > endline {end}"),
            });
        }
    }
    let mut parts = Vec::new();
    for key in [&b"package"[..], b"class", b"method", b"function"] {
        if let Some(v) = attr(e, key, pos)? {
            if !v.is_empty() {
                parts.push(v);
            }
        }
    }
    report.occurrences.push(SmellOccurrence {
        rule,
        file: file.to_string(),
        entity_path: parts.join("/"),
        begin_line,
        end_line,
        version_id: version_id.to_string(),
    });
    Ok(())
}

/// Loads one version's occurrences from either a PMD XML report or, for a
/// `.json` path, a code model evaluated against `options.rules`.
pub fn load_report(path: &Path, version_id: &str, options: &IngestOptions) -> Result<Vec<SmellOccurrence>, IngestError> {
    let io = |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    };
    if is_code_model(path) {
        let model = CodeModel::load(path).map_err(|e| match e {
            RuleError::Io { path, source } => IngestError::Io { path, source },
            other => IngestError::Manifest(other.to_string()),
        })?;
        let mut entities = model.entities;
        for e in &mut entities {
            e.file = options.normalize_path(&e.file);
        }
        entities.retain(|e| !options.excluded(&e.file));
        Ok(evaluate_rules(&entities, &options.rules, version_id))
    } else {
        let bytes = std::fs::read(path).map_err(io)?;
        parse_pmd_report(&bytes, version_id, options)
            .map(|r| r.occurrences)
            .map_err(|e| match e {
                IngestError::Xml { offset, message } => IngestError::Manifest(format!(
                    "{}: malformed XML at byte {offset}: {message}",
                    path.display()
                )),
                other => other,
            })
    }
}

fn is_code_model(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Accepts RFC 3339, `YYYY-MM-DDTHH:MM:SS` (taken as UTC) and plain dates.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc())
}

const REQUIRED_COLUMNS: [&str; 5] = ["app", "version", "timestamp", "report_path", "lloc"];
const OPTIONAL_COLUMNS: [&str; 2] = ["loc", "classes"];

/// Reads a manifest table and returns one [`History`] per app, ordered by app
/// name. Report paths are resolved relative to `base_dir`.
///
/// Columns after `classes` are accepted and ignored.
pub fn load_manifest(table: &str, base_dir: &Path, options: &IngestOptions) -> Result<Vec<History>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(table.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| IngestError::Manifest(e.to_string()))?
        .clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if names.len() < REQUIRED_COLUMNS.len() || names[..5] != REQUIRED_COLUMNS {
        return Err(IngestError::Manifest(format!(
            "header must start with `{}`, found `{}`",
            REQUIRED_COLUMNS.join(","),
            names.join(",")
        )));
    }
    for (i, opt) in OPTIONAL_COLUMNS.iter().enumerate() {
        if let Some(n) = names.get(5 + i) {
            if n != opt && names[5..].contains(opt) {
                return Err(IngestError::Manifest(format!("column `{opt}` out of order")));
            }
        }
    }
    let has_loc = names.get(5) == Some(&"loc");
    let has_classes = has_loc && names.get(6) == Some(&"classes");

    let mut per_app: BTreeMap<String, Vec<(u64, VersionSnapshot)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Manifest(e.to_string()))?;
        let row = record.position().map(|p| p.line()).unwrap_or(0);
        let err = |message: String| IngestError::Row { row, message };
        let field = |i: usize| record.get(i).map(str::trim).unwrap_or("");

        let app = field(0).to_string();
        let version = field(1).to_string();
        if app.is_empty() || version.is_empty() {
            return Err(err("app and version must be non-empty".into()));
        }
        let timestamp = parse_timestamp(field(2))
            .ok_or_else(|| err(format!("unparseable timestamp `{}`", field(2))))?;
        let lloc: u64 = field(4)
            .parse()
            .map_err(|_| err(format!("lloc `{}` is not a non-negative integer", field(4))))?;
        if lloc == 0 {
            return Err(err("lloc must be positive (density undefined)".into()));
        }
        let optional = |i: usize, present: bool, name: &str| -> Result<Option<u64>, IngestError> {
            if !present || field(i).is_empty() {
                return Ok(None);
            }
            field(i)
                .parse()
                .map(Some)
                .map_err(|_| err(format!("{name} `{}` is not a non-negative integer", field(i))))
        };
        let loc = optional(5, has_loc, "loc")?;
        let classes = optional(6, has_classes, "classes")?;

        let versions = per_app.entry(app.clone()).or_default();
        if versions.iter().any(|(_, s)| s.version_id == version) {
            return Err(IngestError::DuplicateVersion { row, app, version });
        }

        let report_path = resolve(base_dir, field(3));
        let occurrences = load_report(&report_path, &version, options).map_err(|e| err(e.to_string()))?;
        versions.push((
            row,
            VersionSnapshot {
                version_id: version,
                timestamp,
                occurrences,
                size: SizeMetrics { lloc, loc, classes },
            },
        ));
    }

    per_app
        .into_iter()
        .map(|(app, rows)| {
            let mut seen = BTreeMap::new();
            for (row, snap) in &rows {
                if let Some(prev) = seen.insert(snap.timestamp, &snap.version_id) {
                    return Err(IngestError::Row {
                        row: *row,
                        message: format!(
                            "version `{}` has the same timestamp as `{prev}` in app `{app}`",
                            snap.version_id
                        ),
                    });
                }
            }
            History::new(app, rows.into_iter().map(|(_, s)| s).collect())
        })
        .collect()
}

pub fn load_manifest_file(path: &Path, options: &IngestOptions) -> Result<Vec<History>, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    load_manifest(&text, base, options)
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
