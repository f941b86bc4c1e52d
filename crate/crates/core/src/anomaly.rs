//! Smell density across versions and threshold-based anomaly flags.
//!
//! Density is the total smell count divided by logical lines of code. The
//! relative change between consecutive versions, `cur / prev - 1`, is
//! flagged when it reaches +50 % / +100 % or falls to -50 %.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::ingest::History;

#[derive(Debug, Error, PartialEq)]
pub enum AnomalyError {
    #[error("change rate undefined for negative or non-finite input (prev={prev}, cur={cur})")]
    InvalidInput { prev: f64, cur: f64 },
    #[error("thresholds must satisfy down < 0 < up <= up2 (down={down}, up={up}, up2={up2})")]
    InvalidThresholds { down: f64, up: f64, up2: f64 },
    #[error("need at least two versions, have {0}")]
    InsufficientHistory(usize),
}

/// Relative change `cur / prev - 1`.
///
/// From zero, a zero value gives 0 and any positive value gives
/// `f64::INFINITY`, which classifies as the strongest increase.
pub fn change_rate(prev: f64, cur: f64) -> Result<f64, AnomalyError> {
    if !(prev >= 0.0 && cur >= 0.0) || !prev.is_finite() || !cur.is_finite() {
        return Err(AnomalyError::InvalidInput { prev, cur });
    }
    Ok(if prev > 0.0 {
        cur / prev - 1.0
    } else if cur == 0.0 {
        0.0
    } else {
        f64::INFINITY
    })
}

fn rate_json<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) if x.is_infinite() => s.serialize_str(if *x > 0.0 { "+inf" } else { "-inf" }),
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityPoint {
    pub version_id: String,
    pub timestamp: DateTime<Utc>,
    pub cs_count: usize,
    pub lloc: u64,
    pub rho: f64,
    #[serde(serialize_with = "rate_json")]
    pub delta_cs: Option<f64>,
    #[serde(serialize_with = "rate_json")]
    pub delta_lloc: Option<f64>,
    #[serde(serialize_with = "rate_json")]
    pub delta_rho: Option<f64>,
}

pub fn density_series(history: &History) -> Vec<DensityPoint> {
    let mut out: Vec<DensityPoint> = Vec::with_capacity(history.len());
    for snap in history.snapshots() {
        let cs_count = snap.occurrences.len();
        let lloc = snap.size.lloc;
        let rho = cs_count as f64 / lloc as f64;
        let (delta_cs, delta_lloc, delta_rho) = match out.last() {
            None => (None, None, None),
            // Inputs are non-negative and finite by construction.
            Some(prev) => (
                change_rate(prev.cs_count as f64, cs_count as f64).ok(),
                change_rate(prev.lloc as f64, lloc as f64).ok(),
                // rho_i / rho_{i-1} as CS_i * LLOC_{i-1} / (CS_{i-1} * LLOC_i), exact in
                // integers so that boundary ratios such as 1.5 are not perturbed.
                change_rate(
                    (prev.cs_count as u128 * lloc as u128) as f64,
                    (cs_count as u128 * prev.lloc as u128) as f64,
                )
                .ok(),
            ),
        };
        out.push(DensityPoint {
            version_id: snap.version_id.clone(),
            timestamp: snap.timestamp,
            cs_count,
            lloc,
            rho,
            delta_cs,
            delta_lloc,
            delta_rho,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub up: f64,
    pub up2: f64,
    pub down: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            up: 0.5,
            up2: 1.0,
            down: -0.5,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), AnomalyError> {
        if self.down < 0.0 && 0.0 < self.up && self.up <= self.up2 {
            Ok(())
        } else {
            Err(AnomalyError::InvalidThresholds {
                down: self.down,
                up: self.up,
                up2: self.up2,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    Increase50,
    Increase100,
    Decrease50,
}

impl AnomalyKind {
    pub fn is_increase(self) -> bool {
        matches!(self, AnomalyKind::Increase50 | AnomalyKind::Increase100)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyKind::Increase50 => "increase_50",
            AnomalyKind::Increase100 => "increase_100",
            AnomalyKind::Decrease50 => "decrease_50",
        }
    }
}

/// Increases use `>=`, decreases `<=`.
pub fn classify(delta_rho: f64, t: &Thresholds) -> Option<AnomalyKind> {
    if delta_rho >= t.up2 {
        Some(AnomalyKind::Increase100)
    } else if delta_rho >= t.up {
        Some(AnomalyKind::Increase50)
    } else if delta_rho <= t.down {
        Some(AnomalyKind::Decrease50)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnomalyFlag {
    pub version_id: String,
    pub kind: AnomalyKind,
    #[serde(serialize_with = "rate_json_plain")]
    pub delta_rho: f64,
}

fn rate_json_plain<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    rate_json(&Some(*v), s)
}

pub fn flag_anomalies(series: &[DensityPoint], thresholds: &Thresholds) -> Result<Vec<AnomalyFlag>, AnomalyError> {
    thresholds.validate()?;
    Ok(series
        .iter()
        .filter_map(|p| {
            let d = p.delta_rho?;
            classify(d, thresholds).map(|kind| AnomalyFlag {
                version_id: p.version_id.clone(),
                kind,
                delta_rho: d,
            })
        })
        .collect())
}

/// Flags on the latest version transition only.
pub fn latest_transition_flags(history: &History, thresholds: &Thresholds) -> Result<Vec<AnomalyFlag>, AnomalyError> {
    if history.len() < 2 {
        return Err(AnomalyError::InsufficientHistory(history.len()));
    }
    let series = density_series(history);
    flag_anomalies(&series[series.len() - 1..], thresholds)
}

/// Relative change of size metrics between the end of the first timeframe
/// and the last version. `None` marks a metric missing at either end.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangeRates {
    pub start_version: String,
    pub end_version: String,
    #[serde(serialize_with = "rate_json")]
    pub d_loc: Option<f64>,
    #[serde(serialize_with = "rate_json")]
    pub d_lloc: Option<f64>,
    #[serde(serialize_with = "rate_json")]
    pub d_classes: Option<f64>,
}

/// Compares the last version before `split` with the last version overall.
pub fn metric_change_rates(history: &History, split: DateTime<Utc>) -> Result<ChangeRates, AnomalyError> {
    let snaps = history.snapshots();
    if snaps.len() < 2 {
        return Err(AnomalyError::InsufficientHistory(snaps.len()));
    }
    let start = snaps
        .iter()
        .rev()
        .find(|s| s.timestamp < split)
        .unwrap_or(&snaps[0]);
    let end = &snaps[snaps.len() - 1];
    let rate = |a: Option<u64>, b: Option<u64>| match (a, b) {
        (Some(a), Some(b)) => change_rate(a as f64, b as f64).ok(),
        _ => None,
    };
    Ok(ChangeRates {
        start_version: start.version_id.clone(),
        end_version: end.version_id.clone(),
        d_loc: rate(start.size.loc, end.size.loc),
        d_lloc: rate(Some(start.size.lloc), Some(end.size.lloc)),
        d_classes: rate(start.size.classes, end.size.classes),
    })
}
