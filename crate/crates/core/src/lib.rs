//! Code smell evolution analytics.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`rules`] detects threshold smells on a code model (or [`ingest`] reads
//!    PMD-format reports produced upstream).
//! 2. [`ingest`] assembles a per-application [`ingest::History`] from a manifest.
//! 3. [`tracking`] turns per-version occurrences into censored lifetimes.
//! 4. [`survival`] fits Kaplan-Meier curves, restricted means and log-rank tests.
//! 5. [`anomaly`] follows smell density across versions and flags jumps.
//!
//! [`report`] and [`cli`] write the resulting tables, JSON and SVG charts.

pub mod anomaly;
pub mod cli;
pub mod ingest;
pub mod report;
pub mod rules;
pub mod survival;
pub mod tracking;

pub use anomaly::{change_rate, density_series, flag_anomalies, AnomalyFlag, AnomalyKind, DensityPoint, Thresholds};
pub use ingest::{load_manifest, parse_pmd_report, History, IngestOptions, SizeMetrics, VersionSnapshot};
pub use rules::{evaluate_rules, scope_of, CodeEntity, EntityKind, RuleId, RuleSet, Scope, SmellOccurrence};
pub use survival::{kaplan_meier, log_rank, median_survival, restricted_mean, summarize, GroupSummary, LogRankResult, Observation, SurvivalCurve};
pub use tracking::{assign_timeframes, build_survival_records, InstanceKey, SurvivalRecord, TrackingOptions};
