//! Report bundle: CSV tables, one-line JSON test results and SVG charts.
//!
//! Every output is a pure function of the records and density series, and
//! numbers are printed with fixed precision (six significant digits for
//! probabilities and rates, two decimals for day values) so that identical
//! inputs give byte-identical files.

pub mod svg;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde_json::{json, Value};
use thiserror::Error;

use crate::anomaly::{density_series, flag_anomalies, metric_change_rates, AnomalyError, DensityPoint, Thresholds};
use crate::ingest::History;
use crate::rules::{RuleId, Scope};
use crate::survival::{
    kaplan_meier, log_rank, observations, partition_records, summarize, GroupSummary, Observation, Partition,
    SurvivalCurve, SurvivalError,
};
use crate::tracking::{build_survival_records, timeframe_split, SurvivalRecord, TrackingOptions};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("app `{app}`: insufficient history ({versions} version(s), need at least 2)")]
    InsufficientHistory { app: String, versions: usize },
    #[error(transparent)]
    Anomaly(#[from] AnomalyError),
    #[error(transparent)]
    Survival(#[from] SurvivalError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown output format `{0}` (expected csv, json or svg)")]
    UnknownFormat(String),
    #[error("at least one output format must be selected")]
    NoFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Formats {
    pub csv: bool,
    pub json: bool,
    pub svg: bool,
}

impl Default for Formats {
    fn default() -> Self {
        Formats {
            csv: true,
            json: true,
            svg: false,
        }
    }
}

impl std::str::FromStr for Formats {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut f = Formats {
            csv: false,
            json: false,
            svg: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "csv" => f.csv = true,
                "json" => f.json = true,
                "svg" => f.svg = true,
                _ => return Err(ReportError::UnknownFormat(part.to_string())),
            }
        }
        if !(f.csv || f.json || f.svg) {
            return Err(ReportError::NoFormat);
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, Default)]
pub struct AnalyzeConfig {
    pub tracking: TrackingOptions,
    pub thresholds: Thresholds,
    pub formats: Formats,
}

/// Six significant digits; scientific notation below 1e-4.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x.is_nan() {
        return "NaN".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if mag < -4 {
        format!("{x:.5e}")
    } else {
        let decimals = (5 - mag).max(0) as usize;
        format!("{x:.decimals$}")
    }
}

pub fn fmt_days(x: f64) -> String {
    // Adding zero turns -0.0 into 0.0.
    let x = x + 0.0;
    format!("{x:.2}")
}

fn fmt_opt_days(x: Option<f64>) -> String {
    x.map(fmt_days).unwrap_or_else(|| "NA".into())
}

fn fmt_opt_sig(x: Option<f64>) -> String {
    x.map(fmt_sig).unwrap_or_default()
}

/// Rounds to the precision `fmt_sig` prints, for JSON output.
pub fn round_sig(x: f64) -> Value {
    if x.is_finite() {
        json!(fmt_sig(x).parse::<f64>().expect("formatted float parses"))
    } else {
        json!(fmt_sig(x))
    }
}

pub fn fmt_date(d: DateTime<Utc>) -> String {
    d.to_rfc3339_opts(SecondsFormat::Secs, true)
}

struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        Table { writer }
    }

    fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("in-memory write");
    }

    fn finish(self) -> String {
        String::from_utf8(self.writer.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}

pub const RECORDS_HEADER: [&str; 11] = [
    "app",
    "rule",
    "scope",
    "key",
    "first_version",
    "first_date",
    "last_present_version",
    "end_date",
    "censored",
    "duration_days",
    "timeframe",
];

pub fn records_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a SurvivalRecord)>) -> String {
    let mut t = Table::new(&RECORDS_HEADER);
    for (app, r) in rows {
        t.row([
            app.to_string(),
            r.rule().to_string(),
            r.scope.to_string(),
            r.key.to_string(),
            r.first_version.clone(),
            fmt_date(r.first_date),
            r.last_present_version.clone(),
            r.end_date.map(fmt_date).unwrap_or_default(),
            u8::from(r.censored).to_string(),
            fmt_days(r.duration_days),
            r.timeframe.number().to_string(),
        ]);
    }
    t.finish()
}

pub fn curve_csv(groups: &[(&str, &SurvivalCurve)]) -> String {
    let grouped = groups.len() > 1;
    let mut header = vec![];
    if grouped {
        header.push("group");
    }
    header.extend(["time_days", "n_at_risk", "n_events", "survival"]);
    let mut t = Table::new(&header);
    for (label, curve) in groups {
        for p in &curve.points {
            let mut row = vec![];
            if grouped {
                row.push(label.to_string());
            }
            row.extend([
                fmt_days(p.time),
                p.n_at_risk.to_string(),
                p.n_events.to_string(),
                fmt_sig(p.survival),
            ]);
            t.row(row);
        }
    }
    t.finish()
}

const SUMMARY_HEADER: [&str; 8] = [
    "group",
    "found",
    "removed",
    "pct_removed",
    "median_days",
    "rmean_days",
    "se_rmean",
    "note",
];

fn summary_row(label: &str, s: Option<&GroupSummary>) -> Vec<String> {
    match s {
        Some(s) => vec![
            label.to_string(),
            s.found.to_string(),
            s.removed.to_string(),
            fmt_sig(s.pct_removed),
            fmt_opt_days(s.median_days),
            fmt_days(s.rmean_days),
            fmt_days(s.se_rmean),
            String::new(),
        ],
        None => vec![
            label.to_string(),
            "0".into(),
            "0".into(),
            "NA".into(),
            "NA".into(),
            "NA".into(),
            "NA".into(),
            "no data".into(),
        ],
    }
}

/// Outcome of a two-group comparison, tolerant of empty groups.
struct Comparison {
    labels: [String; 2],
    summaries: [Option<GroupSummary>; 2],
    curves: [Option<SurvivalCurve>; 2],
    test: Value,
}

fn compare(labels: [String; 2], groups: [Vec<Observation>; 2]) -> Comparison {
    let summaries = [
        summarize(&groups[0]).ok(),
        summarize(&groups[1]).ok(),
    ];
    let curves = [kaplan_meier(&groups[0]).ok(), kaplan_meier(&groups[1]).ok()];
    let test = if let Some(i) = groups.iter().position(Vec::is_empty) {
        json!({"groups": labels, "statistic": null, "p_value": null, "warning": format!("group `{}` is empty", labels[i])})
    } else {
        match log_rank(&groups[0], &groups[1]) {
            Ok(r) => {
                let warning = r.warning.map(|w| {
                    w.replace("group 1", &format!("group `{}`", labels[0]))
                        .replace("group 2", &format!("group `{}`", labels[1]))
                });
                let mut v = json!({
                    "groups": labels,
                    "statistic": round_sig(r.statistic),
                    "p_value": round_sig(r.p_value),
                    "observed": r.observed,
                    "expected": [round_sig(r.expected[0]), round_sig(r.expected[1])],
                });
                if let Some(w) = warning {
                    v["warning"] = json!(w);
                }
                v
            }
            Err(e) => json!({"groups": labels, "statistic": null, "p_value": null, "warning": e.to_string()}),
        }
    };
    Comparison {
        labels,
        summaries,
        curves,
        test,
    }
}

impl Comparison {
    fn summary_csv(&self) -> String {
        let mut t = Table::new(&SUMMARY_HEADER);
        for (label, s) in self.labels.iter().zip(&self.summaries) {
            t.row(summary_row(label, s.as_ref()));
        }
        t.finish()
    }

    fn present_curves(&self) -> Vec<(&str, &SurvivalCurve)> {
        self.labels
            .iter()
            .zip(&self.curves)
            .filter_map(|(l, c)| c.as_ref().map(|c| (l.as_str(), c)))
            .collect()
    }
}

fn json_line(v: &Value) -> String {
    let mut s = serde_json::to_string(v).expect("json value serializes");
    s.push('\n');
    s
}

fn json_pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

/// Per-version count of each rule plus the total.
pub fn counts_csv(history: &History) -> String {
    let mut header = vec!["version", "timestamp"];
    header.extend(RuleId::ALL.iter().map(|r| r.as_str()));
    header.push("total");
    let mut t = Table::new(&header);
    for snap in history.snapshots() {
        let mut row = vec![snap.version_id.clone(), fmt_date(snap.timestamp)];
        for rule in RuleId::ALL {
            row.push(snap.occurrences.iter().filter(|o| o.rule == rule).count().to_string());
        }
        row.push(snap.occurrences.len().to_string());
        t.row(row);
    }
    t.finish()
}

pub fn lifelines_csv(records: &[SurvivalRecord]) -> String {
    let mut t = Table::new(&["rule", "scope", "key", "first_date", "end_date", "censored"]);
    for r in records {
        t.row([
            r.rule().to_string(),
            r.scope.to_string(),
            r.key.to_string(),
            fmt_date(r.first_date),
            r.end_date.map(fmt_date).unwrap_or_default(),
            u8::from(r.censored).to_string(),
        ]);
    }
    t.finish()
}

pub fn density_csv(points: &[DensityPoint], thresholds: &Thresholds) -> String {
    let mut t = Table::new(&[
        "version",
        "timestamp",
        "cs_count",
        "lloc",
        "rho",
        "delta_cs",
        "delta_lloc",
        "delta_rho",
        "flag",
    ]);
    for p in points {
        let flag = p
            .delta_rho
            .and_then(|d| crate::anomaly::classify(d, thresholds))
            .map(|k| k.as_str())
            .unwrap_or("");
        t.row([
            p.version_id.clone(),
            fmt_date(p.timestamp),
            p.cs_count.to_string(),
            p.lloc.to_string(),
            fmt_sig(p.rho),
            fmt_opt_sig(p.delta_cs),
            fmt_opt_sig(p.delta_lloc),
            fmt_opt_sig(p.delta_rho),
            flag.to_string(),
        ]);
    }
    t.finish()
}

fn rate_value(x: Option<f64>) -> Value {
    x.map(round_sig).unwrap_or(Value::Null)
}

/// Directory-safe form of an app name.
pub fn app_dir(app: &str) -> String {
    app.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

/// In-memory set of output files keyed by relative path.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bundle {
    pub files: BTreeMap<PathBuf, String>,
}

impl Bundle {
    fn add(&mut self, path: impl Into<PathBuf>, contents: String) {
        self.files.insert(path.into(), contents);
    }

    pub fn get(&self, path: &str) -> Option<&str> {
        self.files.get(Path::new(path)).map(String::as_str)
    }

    /// Writes every file through a temporary sibling and a rename.
    pub fn write_to(&self, out: &Path) -> Result<(), ReportError> {
        for (rel, contents) in &self.files {
            write_atomic(&out.join(rel), contents.as_bytes())?;
        }
        Ok(())
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    let io = |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp).map_err(io)?;
        f.write_all(bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    std::fs::rename(&tmp, path).map_err(io)
}

struct AppResult {
    app: String,
    records: Vec<SurvivalRecord>,
}

/// Runs tracking, survival comparisons and density analysis for every
/// history and assembles the output bundle.
pub fn analyze(histories: &[History], config: &AnalyzeConfig) -> Result<Bundle, ReportError> {
    config.thresholds.validate()?;
    let f = config.formats;
    let mut bundle = Bundle::default();
    let mut results = Vec::new();

    for history in histories {
        if history.len() < 2 {
            return Err(ReportError::InsufficientHistory {
                app: history.app_name().to_string(),
                versions: history.len(),
            });
        }
        let app = history.app_name();
        let dir = PathBuf::from(app_dir(app));
        let records = build_survival_records(history, &config.tracking);
        let split = timeframe_split(history).expect("history has versions");

        let all = kaplan_meier(&observations(&records)).ok();
        let (labels, groups) = partition_records(&records, Partition::Scope);
        let by_scope = compare(labels, groups);
        let (labels, groups) = partition_records(&records, Partition::Timeframe { split });
        let by_time = compare(labels, groups);

        let series = density_series(history);
        let flags = flag_anomalies(&series, &config.thresholds)?;
        let rates = metric_change_rates(history, split)?;

        if f.csv {
            bundle.add(dir.join("lifelines.csv"), lifelines_csv(&records));
            bundle.add(dir.join("counts_per_version.csv"), counts_csv(history));
            if let Some(c) = &all {
                bundle.add(dir.join("km_all.csv"), curve_csv(&[("all", c)]));
            }
            bundle.add(dir.join("km_scope.csv"), curve_csv(&by_scope.present_curves()));
            bundle.add(dir.join("km_timeframe.csv"), curve_csv(&by_time.present_curves()));
            bundle.add(dir.join("summary_scope.csv"), by_scope.summary_csv());
            bundle.add(dir.join("summary_timeframe.csv"), by_time.summary_csv());
            bundle.add(dir.join("density.csv"), density_csv(&series, &config.thresholds));
            let mut t = Table::new(&["start_version", "end_version", "d_loc", "d_lloc", "d_classes"]);
            t.row([
                rates.start_version.clone(),
                rates.end_version.clone(),
                fmt_opt_sig(rates.d_loc),
                fmt_opt_sig(rates.d_lloc),
                fmt_opt_sig(rates.d_classes),
            ]);
            bundle.add(dir.join("change_rates.csv"), t.finish());
        }
        if f.json {
            bundle.add(dir.join("logrank_scope.json"), json_line(&by_scope.test));
            bundle.add(dir.join("logrank_timeframe.json"), json_line(&by_time.test));
            let points: Vec<Value> = series
                .iter()
                .map(|p| {
                    json!({
                        "version_id": p.version_id,
                        "timestamp": fmt_date(p.timestamp),
                        "cs_count": p.cs_count,
                        "lloc": p.lloc,
                        "rho": round_sig(p.rho),
                        "delta_cs": rate_value(p.delta_cs),
                        "delta_lloc": rate_value(p.delta_lloc),
                        "delta_rho": rate_value(p.delta_rho),
                    })
                })
                .collect();
            let flags: Vec<Value> = flags
                .iter()
                .map(|fl| json!({"version_id": fl.version_id, "kind": fl.kind.as_str(), "delta_rho": round_sig(fl.delta_rho)}))
                .collect();
            let t = &config.thresholds;
            bundle.add(
                dir.join("anomaly.json"),
                json_pretty(&json!({
                    "app": app,
                    "thresholds": {"up": t.up, "up2": t.up2, "down": t.down},
                    "points": points,
                    "flags": flags,
                })),
            );
            bundle.add(
                dir.join("change_rates.json"),
                json_line(&json!({
                    "start_version": rates.start_version,
                    "end_version": rates.end_version,
                    "d_loc": rate_value(rates.d_loc),
                    "d_lloc": rate_value(rates.d_lloc),
                    "d_classes": rate_value(rates.d_classes),
                })),
            );
        }
        if f.svg {
            bundle.add(
                dir.join("km_scope.svg"),
                svg::survival_plot(&format!("{app}: survival by scope"), &by_scope.present_curves()),
            );
            bundle.add(
                dir.join("km_timeframe.svg"),
                svg::survival_plot(&format!("{app}: survival by timeframe"), &by_time.present_curves()),
            );
            bundle.add(
                dir.join("lifelines.svg"),
                svg::lifeline_plot(
                    &format!("{app}: smell lifelines"),
                    &records,
                    history.first_timestamp().expect("non-empty"),
                    history.last_timestamp().expect("non-empty"),
                ),
            );
            bundle.add(
                dir.join("density.svg"),
                svg::density_plot(&format!("{app}: smell density change"), &series, &config.thresholds),
            );
        }
        results.push(AppResult {
            app: app.to_string(),
            records,
        });
    }

    pooled_outputs(&mut bundle, &results, f);
    Ok(bundle)
}

fn pooled_outputs(bundle: &mut Bundle, results: &[AppResult], f: Formats) {
    let all: Vec<&SurvivalRecord> = results.iter().flat_map(|r| &r.records).collect();
    let obs_where = |pred: &dyn Fn(&SurvivalRecord) -> bool| -> Vec<Observation> {
        all.iter().copied().filter(|r| pred(r)).map(Observation::from).collect()
    };
    let pooled = obs_where(&|_| true);
    let localized = obs_where(&|r| r.scope == Scope::Localized);
    let scattered = obs_where(&|r| r.scope == Scope::Scattered);
    let by_scope = compare(
        [Scope::Localized.to_string(), Scope::Scattered.to_string()],
        [localized, scattered],
    );

    if f.csv {
        bundle.add(
            "survival_records.csv",
            records_csv(results.iter().flat_map(|r| r.records.iter().map(move |rec| (r.app.as_str(), rec)))),
        );
        let mut t = Table::new(&SUMMARY_HEADER);
        t.row(summary_row("total", summarize(&pooled).ok().as_ref()));
        for (label, s) in by_scope.labels.iter().zip(&by_scope.summaries) {
            t.row(summary_row(label, s.as_ref()));
        }
        bundle.add("summary_pooled.csv", t.finish());

        let mut t = Table::new(&["app", "n", "events", "median_days"]);
        for r in results {
            let obs = observations(&r.records);
            let events = obs.iter().filter(|o| o.event).count();
            let median = kaplan_meier(&obs).ok().and_then(|c| crate::survival::median_survival(&c));
            t.row([r.app.clone(), obs.len().to_string(), events.to_string(), fmt_opt_days(median)]);
        }
        bundle.add("app_medians.csv", t.finish());
    }
    if f.json {
        bundle.add("logrank_scope_pooled.json", json_line(&by_scope.test));
    }
    if f.svg {
        bundle.add(
            "km_pooled_scope.svg",
            svg::survival_plot("all apps: survival by scope", &by_scope.present_curves()),
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(fmt_sig(2.0 / 3.0), "0.666667");
        assert_eq!(fmt_sig(1.0), "1.00000");
        assert_eq!(fmt_sig(0.05), "0.0500000");
        assert_eq!(fmt_sig(1234.5678), "1234.57");
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(1.234e-7), "1.23400e-7");
        assert_eq!(fmt_sig(f64::INFINITY), "inf");
        assert_eq!(fmt_days(6.5), "6.50");
    }

    #[test]
    fn formats_parse() {
        let f: Formats = "csv,svg".parse().unwrap();
        assert!(f.csv && f.svg && !f.json);
        assert!("".parse::<Formats>().is_err());
        assert!("png".parse::<Formats>().is_err());
    }

    #[test]
    fn app_dir_sanitized() {
        assert_eq!(app_dir("php My/Admin"), "php_My_Admin");
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert!(!dir.path().join("sub/x.txt.tmp").exists());
    }
}
