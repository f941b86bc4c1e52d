//! Independent oracles and generators shared by the integration suites.
//!
//! Nothing here calls into the estimators under test: the Kaplan-Meier and
//! log-rank oracles recount the risk sets from scratch at every time point,
//! the chi-square tail comes from `statrs` rather than `erfc`, and tracking is
//! checked against run-length decomposition of presence bitstrings.

#![allow(dead_code)]

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::Rng;
use smellscope::ingest::{History, SizeMetrics, VersionSnapshot};
use smellscope::rules::{RuleId, SmellOccurrence};
use smellscope::survival::Observation;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// (time, survival) at every distinct observed time, by brute force.
pub fn km_oracle(obs: &[(f64, bool)]) -> Vec<(f64, f64)> {
    let mut times: Vec<f64> = obs.iter().map(|o| o.0).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut s = 1.0;
    let mut out = Vec::new();
    for &t in &times {
        let at_risk = obs.iter().filter(|o| o.0 >= t).count() as f64;
        let deaths = obs.iter().filter(|o| o.0 == t && o.1).count() as f64;
        if deaths > 0.0 {
            s *= 1.0 - deaths / at_risk;
        }
        out.push((t, s));
    }
    out
}

pub struct LogRankOracle {
    pub statistic: f64,
    pub p_value: f64,
    pub observed_a: f64,
    pub expected_a: f64,
}

/// Log-rank straight from the textbook formulas; `None` when no events.
pub fn logrank_oracle(a: &[(f64, bool)], b: &[(f64, bool)]) -> Option<LogRankOracle> {
    let mut event_times: Vec<f64> = a.iter().chain(b).filter(|o| o.1).map(|o| o.0).collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    if event_times.is_empty() {
        return None;
    }
    let (mut o_a, mut e_a, mut v) = (0.0, 0.0, 0.0);
    for &t in &event_times {
        let n_a = a.iter().filter(|o| o.0 >= t).count() as f64;
        let n_b = b.iter().filter(|o| o.0 >= t).count() as f64;
        let d_a = a.iter().filter(|o| o.0 == t && o.1).count() as f64;
        let d_b = b.iter().filter(|o| o.0 == t && o.1).count() as f64;
        let n = n_a + n_b;
        let d = d_a + d_b;
        o_a += d_a;
        e_a += n_a * d / n;
        if n > 1.0 {
            v += d * (n_a / n) * (1.0 - n_a / n) * (n - d) / (n - 1.0);
        }
    }
    let statistic = if v > 0.0 { (o_a - e_a).powi(2) / v } else { 0.0 };
    let p_value = if statistic > 0.0 {
        ChiSquared::new(1.0).unwrap().sf(statistic)
    } else {
        1.0
    };
    Some(LogRankOracle {
        statistic,
        p_value,
        observed_a: o_a,
        expected_a: e_a,
    })
}

pub fn to_obs(v: &[(f64, bool)]) -> Vec<Observation> {
    v.iter().map(|&(t, e)| Observation::new(t, e)).collect()
}

/// Durations in [0, 100]; about half are whole numbers so ties are common.
pub fn random_dataset<R: Rng>(rng: &mut R, max_n: usize) -> Vec<(f64, bool)> {
    let n = rng.gen_range(1..=max_n);
    (0..n)
        .map(|_| {
            let t = if rng.gen_bool(0.5) {
                rng.gen_range(0..=100) as f64
            } else {
                (rng.gen_range(0.0..100.0f64) * 10.0).round() / 10.0
            };
            (t, rng.gen_bool(0.6))
        })
        .collect()
}

/// One run of presence: (first index, last present index, first absent index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Run {
    pub first: usize,
    pub last_present: usize,
    pub end: Option<usize>,
}

/// Maximal runs of `true`, merging runs separated by at most `gap` falses.
pub fn runs_oracle(bits: &[bool], gap: usize) -> Vec<Run> {
    let mut raw: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < bits.len() {
        if bits[i] {
            let start = i;
            while i + 1 < bits.len() && bits[i + 1] {
                i += 1;
            }
            raw.push((start, i));
        }
        i += 1;
    }
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for (s, e) in raw {
        match merged.last_mut() {
            Some(last) if s - last.1 - 1 <= gap => last.1 = e,
            _ => merged.push((s, e)),
        }
    }
    merged
        .into_iter()
        .map(|(first, last_present)| Run {
            first,
            last_present,
            end: (last_present + 1 < bits.len()).then_some(last_present + 1),
        })
        .collect()
}

pub struct SyntheticHistory {
    pub history: History,
    /// presence[key][version]
    pub presence: Vec<Vec<bool>>,
    pub dates: Vec<DateTime<Utc>>,
}

pub fn key_file(key: usize) -> String {
    format!("src/f{key:05}.php")
}

pub fn key_index(file: &str) -> usize {
    file.trim_start_matches("src/f").trim_end_matches(".php").parse().unwrap()
}

/// Random insert/remove process over `keys` smell identities; whole-day,
/// irregular release dates.
pub fn synthetic_history<R: Rng>(rng: &mut R, versions: usize, keys: usize) -> SyntheticHistory {
    let base = Utc.with_ymd_and_hms(2008, 9, 1, 0, 0, 0).unwrap();
    let mut dates = Vec::with_capacity(versions);
    let mut day = 0i64;
    for _ in 0..versions {
        dates.push(base + Duration::days(day));
        day += rng.gen_range(1..=90);
    }
    let mut presence = vec![vec![false; versions]; keys];
    for bits in presence.iter_mut() {
        let mut on = rng.gen_bool(0.3);
        let p_on = rng.gen_range(0.02..0.3);
        let p_off = rng.gen_range(0.02..0.4);
        for b in bits.iter_mut() {
            *b = on;
            on = if on { !rng.gen_bool(p_off) } else { rng.gen_bool(p_on) };
        }
    }
    let snapshots = (0..versions)
        .map(|v| {
            let version_id = format!("v{v}");
            let occurrences = (0..keys)
                .filter(|&k| presence[k][v])
                .map(|k| SmellOccurrence {
                    rule: RuleId::ALL[k % 6],
                    file: key_file(k),
                    entity_path: format!("C{k}"),
                    begin_line: Some(rng.gen_range(1..500)),
                    end_line: None,
                    version_id: version_id.clone(),
                })
                .collect();
            VersionSnapshot {
                version_id,
                timestamp: dates[v],
                occurrences,
                size: SizeMetrics {
                    lloc: 10_000 + v as u64,
                    loc: None,
                    classes: None,
                },
            }
        })
        .collect();
    SyntheticHistory {
        history: History::new("synthetic", snapshots).unwrap(),
        presence,
        dates,
    }
}

/// Expected records as (key, first, last_present, end, duration_days).
pub fn expected_records(s: &SyntheticHistory, gap: usize) -> Vec<(usize, usize, usize, Option<usize>, f64)> {
    let last = s.dates.len() - 1;
    let mut out = Vec::new();
    for (k, bits) in s.presence.iter().enumerate() {
        for run in runs_oracle(bits, gap) {
            let end_date = s.dates[run.end.unwrap_or(last)];
            let days = (end_date - s.dates[run.first]).num_days() as f64;
            out.push((k, run.first, run.last_present, run.end, days));
        }
    }
    out.sort_by_key(|r| (r.0, r.1));
    out
}

pub fn version_index(id: &str) -> usize {
    id.trim_start_matches('v').parse().unwrap()
}

pub fn fixture(path: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(path)
}

/// Implementation records projected onto the tuple shape of [`expected_records`].
pub fn actual_records(
    s: &SyntheticHistory,
    records: &[smellscope::tracking::SurvivalRecord],
) -> Vec<(usize, usize, usize, Option<usize>, f64)> {
    let mut out: Vec<_> = records
        .iter()
        .map(|r| {
            let end = r.end_date.map(|d| s.dates.iter().position(|x| *x == d).expect("end date is a release date"));
            (
                key_index(&r.key.file),
                version_index(&r.first_version),
                version_index(&r.last_present_version),
                end,
                r.duration_days,
            )
        })
        .collect();
    out.sort_by_key(|r| (r.0, r.1));
    out
}
