//! Minimal, dependency-free SVG charts.

use std::fmt::Write;

use chrono::{DateTime, Utc};

use crate::anomaly::{DensityPoint, Thresholds};
use crate::survival::SurvivalCurve;
use crate::tracking::SurvivalRecord;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        let span = (self.x_max - self.x_min).max(f64::EPSILON);
        LEFT + (v - self.x_min) / span * (WIDTH - LEFT - RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        let span = (self.y_max - self.y_min).max(f64::EPSILON);
        HEIGHT - BOTTOM - (v - self.y_min) / span * (HEIGHT - TOP - BOTTOM)
    }
}

fn open(out: &mut String, title: &str, x_label: &str, y_label: &str, frame: &Frame) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (x0, y0) = (LEFT, HEIGHT - BOTTOM);
    let _ = writeln!(
        out,
        r#"<g class="axes" stroke="black" fill="none"><line x1="{x0:.2}" y1="{y0:.2}" x2="{:.2}" y2="{y0:.2}"/><line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{TOP:.2}"/></g>"#,
        WIDTH - RIGHT
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
        (TOP + HEIGHT - BOTTOM) / 2.0,
        (TOP + HEIGHT - BOTTOM) / 2.0,
        escape(y_label)
    );
    for i in 0..=4 {
        let xv = frame.x_min + (frame.x_max - frame.x_min) * i as f64 / 4.0;
        let yv = frame.y_min + (frame.y_max - frame.y_min) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            frame.x(xv),
            HEIGHT - BOTTOM + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            frame.y(yv) + 4.0,
            tick(yv)
        );
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn legend(out: &mut String, labels: &[&str]) {
    for (i, label) in labels.iter().enumerate() {
        let y = TOP + 14.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<g class="legend"><line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text></g>"#,
            WIDTH - RIGHT - 150.0,
            WIDTH - RIGHT - 130.0,
            PALETTE[i % PALETTE.len()],
            WIDTH - RIGHT - 125.0,
            y + 4.0,
            escape(label)
        );
    }
}

/// Kaplan-Meier step plot; one polyline per curve, horizontal segment then
/// vertical drop at each event time.
pub fn survival_plot(title: &str, curves: &[(&str, &SurvivalCurve)]) -> String {
    let x_max = curves.iter().map(|(_, c)| c.tau).fold(0.0, f64::max).max(1.0);
    let frame = Frame {
        x_min: 0.0,
        x_max,
        y_min: 0.0,
        y_max: 1.0,
    };
    let mut out = String::new();
    open(&mut out, title, "days", "survival probability", &frame);
    for (i, (label, curve)) in curves.iter().enumerate() {
        let mut pts = vec![(0.0, 1.0)];
        let mut level = 1.0;
        for p in &curve.points {
            pts.push((p.time, level));
            level = p.survival;
            pts.push((p.time, level));
        }
        pts.push((curve.tau, level));
        let coords: Vec<String> = pts
            .iter()
            .map(|&(t, s)| format!("{:.2},{:.2}", frame.x(t), frame.y(s)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="km" data-group="{}" fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            escape(label),
            PALETTE[i % PALETTE.len()],
            coords.join(" ")
        );
        for p in curve.points.iter().filter(|p| p.n_censored > 0) {
            let (x, y) = (frame.x(p.time), frame.y(p.survival));
            let _ = writeln!(
                out,
                r#"<line class="censor" x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{}"/>"#,
                y - 3.0,
                y + 3.0,
                PALETTE[i % PALETTE.len()]
            );
        }
    }
    let labels: Vec<&str> = curves.iter().map(|(l, _)| *l).collect();
    legend(&mut out, &labels);
    out.push_str("</svg>\n");
    out
}

/// One horizontal segment per instance, from birth to removal (or study end).
pub fn lifeline_plot(title: &str, records: &[SurvivalRecord], start: DateTime<Utc>, end: DateTime<Utc>) -> String {
    let span = crate::tracking::days_between(start, end).max(1.0);
    let frame = Frame {
        x_min: 0.0,
        x_max: span,
        y_min: 0.0,
        y_max: records.len().max(1) as f64,
    };
    let mut out = String::new();
    open(&mut out, title, "days since first version", "instance", &frame);
    for (i, r) in records.iter().enumerate() {
        let x1 = crate::tracking::days_between(start, r.first_date);
        let x2 = crate::tracking::days_between(start, r.end_date.unwrap_or(end));
        let y = frame.y(i as f64 + 0.5);
        let color = if r.censored { PALETTE[1] } else { PALETTE[0] };
        let _ = writeln!(
            out,
            r#"<line class="lifeline" x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}"/>"#,
            frame.x(x1),
            frame.x(x2)
        );
    }
    legend(&mut out, &["alive at end", "removed"]);
    out.push_str("</svg>\n");
    out
}

/// Density change per version with the three threshold guides.
pub fn density_plot(title: &str, points: &[DensityPoint], thresholds: &Thresholds) -> String {
    let values: Vec<(usize, f64)> = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.delta_rho.filter(|d| d.is_finite()).map(|d| (i, d)))
        .collect();
    let lo = values.iter().map(|v| v.1).fold(thresholds.down, f64::min) - 0.1;
    let hi = values.iter().map(|v| v.1).fold(thresholds.up2, f64::max) + 0.1;
    let frame = Frame {
        x_min: 0.0,
        x_max: (points.len().max(2) - 1) as f64,
        y_min: lo,
        y_max: hi,
    };
    let mut out = String::new();
    open(&mut out, title, "version index", "relative change of smell density", &frame);
    for (label, t) in [("+50%", thresholds.up), ("+100%", thresholds.up2), ("-50%", thresholds.down)] {
        let y = frame.y(t);
        let _ = writeln!(
            out,
            r#"<g class="threshold"><line x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="gray" stroke-dasharray="4 3"/><text x="{:.2}" y="{:.2}" fill="gray">{label}</text></g>"#,
            WIDTH - RIGHT,
            LEFT + 4.0,
            y - 3.0
        );
    }
    let coords: Vec<String> = values
        .iter()
        .map(|&(i, d)| format!("{:.2},{:.2}", frame.x(i as f64), frame.y(d)))
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline class="delta-rho" fill="none" stroke="black" stroke-width="1.2" points="{}"/>"#,
        coords.join(" ")
    );
    for &(i, d) in &values {
        if crate::anomaly::classify(d, thresholds).is_some() {
            let _ = writeln!(
                out,
                r#"<text class="flag" x="{:.2}" y="{:.2}" fill="{}">{}</text>"#,
                frame.x(i as f64) + 3.0,
                frame.y(d) - 3.0,
                PALETTE[1],
                escape(&points[i].version_id)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
