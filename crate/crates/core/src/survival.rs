//! Kaplan-Meier estimation, median and restricted mean survival, and the
//! two-sample log-rank test.
//!
//! Ties: at a shared time, events are processed before censorings, i.e. an
//! observation censored at `t` is still at risk for events at `t`.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rules::Scope;
use crate::tracking::{assign_timeframes_at, SurvivalRecord};

#[derive(Debug, Error, PartialEq)]
pub enum SurvivalError {
    #[error("no records")]
    NoRecords,
    #[error("invalid duration {0}")]
    InvalidTime(f64),
    #[error("restricted mean horizon must be positive, got {0}")]
    NonPositiveTau(f64),
    #[error("restricted mean horizon {tau} exceeds the largest observed time {max}")]
    TauBeyondData { tau: f64, max: f64 },
    #[error("group `{0}` is empty")]
    EmptyGroup(String),
    #[error("test undefined: no events in pooled data")]
    TestUndefined,
}

/// A single (duration, event) pair. `event` is true when the removal was
/// observed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: f64,
    pub event: bool,
}

impl Observation {
    pub fn new(time: f64, event: bool) -> Self {
        Observation { time, event }
    }
}

impl From<&SurvivalRecord> for Observation {
    fn from(r: &SurvivalRecord) -> Self {
        Observation {
            time: r.duration_days,
            event: r.censored,
        }
    }
}

pub fn observations(records: &[SurvivalRecord]) -> Vec<Observation> {
    records.iter().map(Observation::from).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub time: f64,
    pub n_at_risk: usize,
    pub n_events: usize,
    pub n_censored: usize,
    pub survival: f64,
}

/// Product-limit estimate. One point per distinct observed time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub points: Vec<CurvePoint>,
    pub tau: f64,
}

impl SurvivalCurve {
    /// S(t), right-continuous; 1 before the first point.
    pub fn survival_at(&self, t: f64) -> f64 {
        let idx = self.points.partition_point(|p| p.time <= t);
        if idx == 0 {
            1.0
        } else {
            self.points[idx - 1].survival
        }
    }

    /// Integral of S over `[from, to]`.
    fn area_between(&self, from: f64, to: f64) -> f64 {
        if to <= from {
            return 0.0;
        }
        let mut area = 0.0;
        let mut left = from;
        let mut level = self.survival_at(from);
        for p in self.points.iter().filter(|p| p.time > from && p.time < to) {
            area += (p.time - left) * level;
            left = p.time;
            level = p.survival;
        }
        area + (to - left) * level
    }

    pub fn n_events(&self) -> usize {
        self.points.iter().map(|p| p.n_events).sum()
    }
}

fn sorted_checked(obs: &[Observation]) -> Result<Vec<Observation>, SurvivalError> {
    if let Some(o) = obs.iter().find(|o| !o.time.is_finite() || o.time < 0.0) {
        return Err(SurvivalError::InvalidTime(o.time));
    }
    let mut v = obs.to_vec();
    v.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(v)
}

pub fn kaplan_meier(obs: &[Observation]) -> Result<SurvivalCurve, SurvivalError> {
    if obs.is_empty() {
        return Err(SurvivalError::NoRecords);
    }
    let sorted = sorted_checked(obs)?;
    let mut points = Vec::new();
    let mut at_risk = sorted.len();
    let mut survival = 1.0;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].time;
        let j = i + sorted[i..].iter().take_while(|o| o.time == t).count();
        let events = sorted[i..j].iter().filter(|o| o.event).count();
        if events > 0 {
            survival *= 1.0 - events as f64 / at_risk as f64;
        }
        points.push(CurvePoint {
            time: t,
            n_at_risk: at_risk,
            n_events: events,
            n_censored: (j - i) - events,
            survival,
        });
        at_risk -= j - i;
        i = j;
    }
    let tau = sorted.last().map(|o| o.time).unwrap_or(0.0);
    Ok(SurvivalCurve { points, tau })
}

/// Smallest event time at which S(t) ≤ 0.5, or `None` (NA) if never reached.
pub fn median_survival(curve: &SurvivalCurve) -> Option<f64> {
    // Products such as (1 - 1/2) can land a hair above 0.5.
    const FUZZ: f64 = 1e-12;
    curve
        .points
        .iter()
        .find(|p| p.n_events > 0 && p.survival <= 0.5 + FUZZ)
        .map(|p| p.time)
}

/// Area under S on `[0, tau]` and its standard error.
///
/// The variance is `Σ A_i² d_i / (n_i (n_i − d_i))` over event times up to
/// `tau`, where `A_i` is the area under S from `t_i` to `tau`. Terms with
/// `n_i = d_i` are skipped.
pub fn restricted_mean(curve: &SurvivalCurve, tau: f64) -> Result<(f64, f64), SurvivalError> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(SurvivalError::NonPositiveTau(tau));
    }
    if tau > curve.tau {
        return Err(SurvivalError::TauBeyondData { tau, max: curve.tau });
    }
    let rmean = curve.area_between(0.0, tau);
    let variance: f64 = curve
        .points
        .iter()
        .filter(|p| p.n_events > 0 && p.time <= tau && p.n_at_risk > p.n_events)
        .map(|p| {
            let a = curve.area_between(p.time, tau);
            let (n, d) = (p.n_at_risk as f64, p.n_events as f64);
            a * a * d / (n * (n - d))
        })
        .fold(0.0, |acc, term| acc + term);
    Ok((rmean, variance.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRankResult {
    pub statistic: f64,
    pub p_value: f64,
    pub observed: [usize; 2],
    pub expected: [f64; 2],
    pub variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi_square_1_sf(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        libm::erfc((x / 2.0).sqrt()).clamp(0.0, 1.0)
    }
}

pub fn log_rank(a: &[Observation], b: &[Observation]) -> Result<LogRankResult, SurvivalError> {
    if a.is_empty() || b.is_empty() {
        return Err(SurvivalError::NoRecords);
    }
    let mut pooled: Vec<(Observation, usize)> = sorted_checked(a)?
        .into_iter()
        .map(|o| (o, 0))
        .chain(sorted_checked(b)?.into_iter().map(|o| (o, 1)))
        .collect();
    pooled.sort_by(|x, y| x.0.time.total_cmp(&y.0.time));

    let mut at_risk = [a.len(), b.len()];
    let mut observed = [0usize; 2];
    let mut expected = [0.0f64; 2];
    let mut variance = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let t = pooled[i].0.time;
        let j = i + pooled[i..].iter().take_while(|(o, _)| o.time == t).count();
        let mut deaths = [0usize; 2];
        let mut leaving = [0usize; 2];
        for (o, g) in &pooled[i..j] {
            leaving[*g] += 1;
            if o.event {
                deaths[*g] += 1;
            }
        }
        let d = (deaths[0] + deaths[1]) as f64;
        if d > 0.0 {
            let n = (at_risk[0] + at_risk[1]) as f64;
            let na = at_risk[0] as f64;
            let nb = at_risk[1] as f64;
            observed[0] += deaths[0];
            observed[1] += deaths[1];
            expected[0] += na * d / n;
            expected[1] += nb * d / n;
            if n > 1.0 {
                variance += d * (na / n) * (1.0 - na / n) * (n - d) / (n - 1.0);
            }
        }
        at_risk[0] -= leaving[0];
        at_risk[1] -= leaving[1];
        i = j;
    }
    if observed[0] + observed[1] == 0 {
        return Err(SurvivalError::TestUndefined);
    }
    let diff = observed[0] as f64 - expected[0];
    let statistic = if variance > 0.0 { diff * diff / variance } else { 0.0 };
    let warning = match observed {
        [0, _] => Some("group 1 has no events; the test is unreliable".to_string()),
        [_, 0] => Some("group 2 has no events; the test is unreliable".to_string()),
        _ => None,
    };
    Ok(LogRankResult {
        statistic,
        p_value: chi_square_1_sf(statistic),
        observed,
        expected,
        variance,
        warning,
    })
}

/// One row of a found/removed/median/rmean table. Days throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub found: usize,
    pub removed: usize,
    pub pct_removed: f64,
    pub median_days: Option<f64>,
    pub rmean_days: f64,
    pub se_rmean: f64,
}

pub fn summarize(obs: &[Observation]) -> Result<GroupSummary, SurvivalError> {
    let curve = kaplan_meier(obs)?;
    let removed = obs.iter().filter(|o| o.event).count();
    let (rmean_days, se_rmean) = if curve.tau > 0.0 {
        restricted_mean(&curve, curve.tau)?
    } else {
        (0.0, 0.0)
    };
    Ok(GroupSummary {
        found: obs.len(),
        removed,
        pct_removed: removed as f64 / obs.len() as f64,
        median_days: median_survival(&curve),
        rmean_days,
        se_rmean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Partition {
    Scope,
    /// Timeframe halves around `split`; the first half is truncated at it.
    Timeframe { split: DateTime<Utc> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupComparison {
    pub labels: [String; 2],
    pub groups: [Vec<Observation>; 2],
    pub summaries: [GroupSummary; 2],
    pub test: LogRankResult,
}

/// Splits records in two groups and compares them.
pub fn partition_records(records: &[SurvivalRecord], partition: Partition) -> ([String; 2], [Vec<Observation>; 2]) {
    match partition {
        Partition::Scope => {
            let (loc, sca): (Vec<&SurvivalRecord>, Vec<&SurvivalRecord>) =
                records.iter().partition(|r| r.scope == Scope::Localized);
            (
                [Scope::Localized.to_string(), Scope::Scattered.to_string()],
                [
                    loc.into_iter().map(Observation::from).collect(),
                    sca.into_iter().map(Observation::from).collect(),
                ],
            )
        }
        Partition::Timeframe { split } => {
            let (first, second) = assign_timeframes_at(records, split);
            (
                ["1".to_string(), "2".to_string()],
                [observations(&first), observations(&second)],
            )
        }
    }
}

pub fn compare_groups(records: &[SurvivalRecord], partition: Partition) -> Result<GroupComparison, SurvivalError> {
    let (labels, groups) = partition_records(records, partition);
    for (label, group) in labels.iter().zip(&groups) {
        if group.is_empty() {
            return Err(SurvivalError::EmptyGroup(label.clone()));
        }
    }
    let mut test = log_rank(&groups[0], &groups[1])?;
    if let Some(w) = &mut test.warning {
        for (i, label) in labels.iter().enumerate() {
            *w = w.replace(&format!("group {}", i + 1), &format!("group `{label}`"));
        }
    }
    let summaries = [summarize(&groups[0])?, summarize(&groups[1])?];
    Ok(GroupComparison {
        labels,
        groups,
        summaries,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(v: &[(f64, bool)]) -> Vec<Observation> {
        v.iter().map(|&(t, e)| Observation::new(t, e)).collect()
    }

    #[test]
    fn no_events_flat_curve() {
        let c = kaplan_meier(&obs(&[(3.0, false), (7.0, false)])).unwrap();
        assert!(c.points.iter().all(|p| p.survival == 1.0));
        assert_eq!(c.tau, 7.0);
        assert_eq!(median_survival(&c), None);
    }

    #[test]
    fn one_event_one_censored() {
        let c = kaplan_meier(&obs(&[(5.0, true), (8.0, false)])).unwrap();
        assert_eq!(c.survival_at(4.999), 1.0);
        assert_eq!(c.survival_at(5.0), 0.5);
        assert_eq!(c.survival_at(8.0), 0.5);
        let (rmean, _) = restricted_mean(&c, 8.0).unwrap();
        assert!((rmean - 6.5).abs() < 1e-12);
        assert_eq!(median_survival(&c), Some(5.0));
    }

    #[test]
    fn tie_events_before_censorings() {
        // At t=2 all three are at risk (the censored one counts), d=1 -> 2/3.
        // At t=4 only one remains and it fails -> 0.
        let c = kaplan_meier(&obs(&[(2.0, true), (2.0, false), (4.0, true)])).unwrap();
        assert!((c.survival_at(2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.points[0].n_at_risk, 3);
        assert_eq!(c.points[1].n_at_risk, 1);
        assert_eq!(c.survival_at(4.0), 0.0);
    }

    #[test]
    fn empty_input_errors() {
        assert_eq!(kaplan_meier(&[]).unwrap_err(), SurvivalError::NoRecords);
        assert!(kaplan_meier(&obs(&[(-1.0, true)])).is_err());
        assert!(kaplan_meier(&obs(&[(f64::NAN, true)])).is_err());
    }

    #[test]
    fn median_cases() {
        let c = kaplan_meier(&obs(&[(5.0, true)])).unwrap();
        assert_eq!(median_survival(&c), Some(5.0));
        // S reaches exactly 0.5 at 1418.
        let c = kaplan_meier(&obs(&[(1418.0, true), (2000.0, false)])).unwrap();
        assert_eq!(median_survival(&c), Some(1418.0));
        // Floor above one half -> NA.
        let mut v = vec![(10.0, true), (20.0, true)];
        v.extend(std::iter::repeat_n((100.0, false), 4));
        let c = kaplan_meier(&obs(&v)).unwrap();
        assert!((c.points.last().unwrap().survival - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!(median_survival(&c), None);
    }

    #[test]
    fn rmean_equals_mean_without_censoring() {
        let d = [3.0, 7.0, 7.0, 12.0, 20.0];
        let c = kaplan_meier(&obs(&d.map(|t| (t, true)))).unwrap();
        let (rmean, _) = restricted_mean(&c, c.tau).unwrap();
        assert!((rmean - d.iter().sum::<f64>() / 5.0).abs() < 1e-12);
    }

    #[test]
    fn rmean_degenerate_variance() {
        let c = kaplan_meier(&obs(&[(5.0, true)])).unwrap();
        assert_eq!(restricted_mean(&c, 5.0).unwrap(), (5.0, 0.0));
        assert!(matches!(restricted_mean(&c, 0.0), Err(SurvivalError::NonPositiveTau(_))));
        assert!(matches!(restricted_mean(&c, 6.0), Err(SurvivalError::TauBeyondData { .. })));
    }

    #[test]
    fn rmean_se_hand_computed() {
        // Times 1,2,3 all events, tau = 3. S: 1 on [0,1), 2/3 on [1,2), 1/3 on [2,3).
        // A(1) = 2/3 + 1/3 = 1, A(2) = 1/3; terms: 1 * 1/(3*2) + (1/9) * 1/(2*1).
        let c = kaplan_meier(&obs(&[(1.0, true), (2.0, true), (3.0, true)])).unwrap();
        let (rmean, se) = restricted_mean(&c, 3.0).unwrap();
        assert!((rmean - 2.0).abs() < 1e-12);
        let var: f64 = 1.0 / 6.0 + 1.0 / 18.0;
        assert!((se - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn identical_groups_p_one() {
        let g = obs(&[(1.0, true), (3.0, false), (4.0, true)]);
        let r = log_rank(&g, &g).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!((r.observed[0] as f64 - r.expected[0]).abs() < 1e-12);
    }

    #[test]
    fn swapping_groups_is_symmetric() {
        let a = obs(&[(1.0, true), (2.0, true), (3.0, true)]);
        let b = obs(&[(4.0, true), (5.0, true), (6.0, true)]);
        let ab = log_rank(&a, &b).unwrap();
        let ba = log_rank(&b, &a).unwrap();
        assert!((ab.statistic - ba.statistic).abs() < 1e-12);
        assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        // Hand computation: O_A = 3, E_A = 3/6 + 2/5 + 1/4 = 1.15.
        assert!((ab.expected[0] - 1.15).abs() < 1e-12);
        let total_o = (ab.observed[0] + ab.observed[1]) as f64;
        assert!((total_o - ab.expected[0] - ab.expected[1]).abs() < 1e-9);
    }

    #[test]
    fn no_events_undefined() {
        let a = obs(&[(1.0, false)]);
        assert_eq!(log_rank(&a, &a).unwrap_err(), SurvivalError::TestUndefined);
    }

    #[test]
    fn eventless_group_warns() {
        let a = obs(&[(1.0, true), (2.0, true)]);
        let b = obs(&[(5.0, false), (6.0, false)]);
        let r = log_rank(&a, &b).unwrap();
        assert!(r.warning.is_some());
    }

    #[test]
    fn chi_square_tail() {
        // Known quantile: P(X > 3.841459) = 0.05 for one degree of freedom.
        assert!((chi_square_1_sf(3.841_458_820_694_124) - 0.05).abs() < 1e-12);
        assert_eq!(chi_square_1_sf(0.0), 1.0);
    }

    #[test]
    fn summarize_counts() {
        let mut v: Vec<(f64, bool)> = (0..6).map(|i| (10.0 + i as f64, true)).collect();
        v.extend((0..4).map(|i| (50.0 + i as f64, false)));
        let s = summarize(&obs(&v)).unwrap();
        assert_eq!((s.found, s.removed), (10, 6));
        assert!((s.pct_removed - 0.6).abs() < 1e-15);
        assert_eq!(summarize(&[]).unwrap_err(), SurvivalError::NoRecords);
        let zero = summarize(&obs(&[(0.0, false)])).unwrap();
        assert_eq!(zero.rmean_days, 0.0);
    }
}
