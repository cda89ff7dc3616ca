//! Aggregation of run records into per-series summaries, rate fits and a
//! log-log SVG plot.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use brier_align::eval::{rate_fit, RunRecord};
use brier_align::mechanisms::Epsilon;
use brier_align::stats::{mean, quantile, stderr};
use serde::Serialize;

use crate::criteria::{self, Verdict};
use crate::error::HarnessError;
use crate::harness::record_order;
use crate::persist;

pub const SUMMARY_FILE: &str = "summary.json";
pub const PLOT_FILE: &str = "plot.svg";
pub const VERDICTS_FILE: &str = "verdicts.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Point {
    pub n: usize,
    pub count: usize,
    pub mean: f64,
    pub stderr: Option<f64>,
    /// Empirical `1 − ζ` quantile.
    pub q_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub algorithm: String,
    pub setting: String,
    pub epsilon: Epsilon,
    pub alpha: f64,
    pub beta: Option<f64>,
    pub metric: &'static str,
    pub points: Vec<Point>,
    /// Log-log slope of the mean against `n`; `None` below three sizes or
    /// with a non-positive mean.
    pub slope: Option<f64>,
}

impl Series {
    pub fn label(&self) -> String {
        let mut s = format!("{} {}", self.algorithm, self.setting);
        if self.setting != "clean" {
            let _ = write!(s, " eps={}", self.epsilon);
        }
        if self.alpha > 0.0 {
            let _ = write!(s, " alpha={}", self.alpha);
        }
        if let Some(b) = self.beta {
            let _ = write!(s, " beta={b}");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub zeta: f64,
    pub rows: usize,
    pub series: Vec<Series>,
}

fn metric(r: &RunRecord) -> Option<(&'static str, f64)> {
    r.sg.map(|v| ("sg", v)).or(r.dg.map(|v| ("dg", v))).or(r.err2_gen.map(|v| ("err2_gen", v)))
}

type SeriesKey = (String, String, String, u64);

fn series_key(r: &RunRecord) -> SeriesKey {
    (r.algorithm.clone(), r.setting.clone(), r.epsilon.to_string(), r.alpha.to_bits())
}

/// Removes repeated cells, keeping the first occurrence, and sorts.
pub fn dedupe(records: Vec<RunRecord>) -> Vec<RunRecord> {
    let mut seen = BTreeSet::new();
    let mut out: Vec<RunRecord> = records
        .into_iter()
        .filter(|r| {
            seen.insert((
                series_key(r),
                r.beta.map(f64::to_bits),
                r.n,
                r.m,
                r.t,
                r.seed,
            ))
        })
        .collect();
    out.sort_by(record_order);
    out
}

/// Groups records by algorithm, setting, `ε` and `α`. A group is split by
/// `β` only when it holds several `β` values at one `n`.
pub fn summarize(records: &[RunRecord], zeta: f64) -> Summary {
    let mut groups: BTreeMap<SeriesKey, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(series_key(r)).or_default().push(r);
    }
    let mut series = Vec::new();
    for rows in groups.into_values() {
        let mut betas_at_n: BTreeMap<usize, BTreeSet<u64>> = BTreeMap::new();
        for r in &rows {
            betas_at_n.entry(r.n).or_default().insert(r.beta.map_or(0, f64::to_bits));
        }
        let split = betas_at_n.values().any(|b| b.len() > 1);
        let mut parts: BTreeMap<Option<u64>, Vec<&RunRecord>> = BTreeMap::new();
        for r in rows {
            let k = if split { r.beta.map(f64::to_bits) } else { None };
            parts.entry(k).or_default().push(r);
        }
        for (beta, rows) in parts {
            if let Some(s) = build_series(&rows, beta.map(f64::from_bits), zeta) {
                series.push(s);
            }
        }
    }
    Summary { zeta, rows: records.len(), series }
}

fn build_series(rows: &[&RunRecord], beta: Option<f64>, zeta: f64) -> Option<Series> {
    let first = rows.first()?;
    let mut name = None;
    let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows {
        if let Some((m, v)) = metric(r) {
            name.get_or_insert(m);
            by_n.entry(r.n).or_default().push(v);
        }
    }
    let points: Vec<Point> = by_n
        .into_iter()
        .map(|(n, v)| Point {
            n,
            count: v.len(),
            mean: mean(&v).expect("non-empty"),
            stderr: stderr(&v),
            q_hi: quantile(&v, 1.0 - zeta).expect("non-empty"),
        })
        .collect();
    let fit: Vec<(f64, f64)> = points.iter().map(|p| (p.n as f64, p.mean)).collect();
    Some(Series {
        algorithm: first.algorithm.clone(),
        setting: first.setting.clone(),
        epsilon: first.epsilon,
        alpha: first.alpha,
        beta,
        metric: name?,
        slope: rate_fit(&fit).ok().map(|f| f.slope),
        points,
    })
}

const W: f64 = 720.0;
const H: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 230.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#7f7f7f"];

/// Log-log plot of mean ± stderr per series. Non-positive means are skipped.
pub fn svg(summary: &Summary) -> String {
    let pts: Vec<(f64, f64)> = summary
        .series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|p| p.mean > 0.0)
        .flat_map(|p| {
            let e = p.stderr.unwrap_or(0.0);
            let lo = if p.mean - e > 0.0 { p.mean - e } else { p.mean };
            [(p.n as f64, lo), (p.n as f64, p.mean + e)]
        })
        .collect();
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    if pts.is_empty() {
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">no positive values</text>"#, W / 2.0, H / 2.0);
        out.push_str("</svg>\n");
        return out;
    }
    let bounds = |f: fn(&(f64, f64)) -> f64| {
        let lo = pts.iter().map(f).fold(f64::INFINITY, f64::min).log10();
        let hi = pts.iter().map(f).fold(f64::NEG_INFINITY, f64::max).log10();
        if hi - lo < 1e-9 { (lo - 0.5, hi + 0.5) } else { (lo, hi) }
    };
    let (x0, x1) = bounds(|p| p.0);
    let (y0, y1) = bounds(|p| p.1);
    let (y0, y1) = (y0 - 0.05 * (y1 - y0), y1 + 0.05 * (y1 - y0));
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let sx = |x: f64| LEFT + (x.log10() - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (1.0 - (y.log10() - y0) / (y1 - y0)) * ph;

    let _ = writeln!(out, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for d in (x0.floor() as i32)..=(x1.ceil() as i32) {
        let v = 10f64.powi(d);
        for k in 1..10 {
            let x = v * k as f64;
            if x.log10() < x0 - 1e-9 || x.log10() > x1 + 1e-9 {
                continue;
            }
            let px = sx(x);
            let _ = writeln!(out, r#"<line x1="{px:.1}" y1="{}" x2="{px:.1}" y2="{}" stroke="black"/>"#, TOP + ph, TOP + ph + if k == 1 { 6.0 } else { 3.0 });
            if k == 1 {
                let _ = writeln!(out, r#"<text x="{px:.1}" y="{}" text-anchor="middle">1e{d}</text>"#, TOP + ph + 18.0);
            }
        }
    }
    for d in (y0.floor() as i32)..=(y1.ceil() as i32) {
        let v = 10f64.powi(d);
        if v.log10() < y0 || v.log10() > y1 {
            continue;
        }
        let py = sy(v);
        let _ = writeln!(out, r##"<line x1="{LEFT}" y1="{py:.1}" x2="{}" y2="{py:.1}" stroke="#ddd"/>"##, LEFT + pw);
        let _ = writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end">1e{d}</text>"#, LEFT - 6.0, py + 4.0);
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">n</text>"#, LEFT + pw / 2.0, H - 10.0);

    for (i, s) in summary.series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let shown: Vec<&Point> = s.points.iter().filter(|p| p.mean > 0.0).collect();
        let path: Vec<String> = shown.iter().map(|p| format!("{:.1},{:.1}", sx(p.n as f64), sy(p.mean))).collect();
        if path.len() > 1 {
            let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#, path.join(" "));
        }
        for p in shown {
            let (px, py) = (sx(p.n as f64), sy(p.mean));
            if let Some(e) = p.stderr.filter(|e| *e > 0.0) {
                let hi = sy(p.mean + e);
                let lo = if p.mean - e > 0.0 { sy(p.mean - e) } else { TOP + ph };
                let _ = writeln!(out, r#"<line x1="{px:.1}" y1="{lo:.1}" x2="{px:.1}" y2="{hi:.1}" stroke="{c}"/>"#);
            }
            let _ = writeln!(out, r#"<circle cx="{px:.1}" cy="{py:.1}" r="2.5" fill="{c}"/>"#);
        }
        let ly = TOP + 14.0 * (i as f64 + 1.0);
        let lx = LEFT + pw + 12.0;
        let slope = s.slope.map(|v| format!(" ({v:.2})")).unwrap_or_default();
        let _ = writeln!(out, r#"<line x1="{lx}" y1="{}" x2="{}" y2="{}" stroke="{c}" stroke-width="2"/>"#, ly - 4.0, lx + 14.0, ly - 4.0);
        let _ = writeln!(out, r#"<text x="{}" y="{ly}">{} {}{}</text>"#, lx + 18.0, escape(&s.label()), s.metric, slope);
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `summary.json` and `plot.svg` into `out`.
pub fn write_summary(records: &[RunRecord], zeta: f64, out: &Path) -> Result<Summary, HarnessError> {
    let summary = summarize(records, zeta);
    persist::write_json(&out.join(SUMMARY_FILE), &summary)?;
    persist::write_bytes(&out.join(PLOT_FILE), svg(&summary).as_bytes())?;
    Ok(summary)
}

/// The `report` verb: reads run CSVs, writes summary, plot and verdicts.
pub fn report(paths: &[impl AsRef<Path>], zeta: f64, out: &Path) -> Result<(Summary, Vec<Verdict>), HarnessError> {
    let mut records = Vec::new();
    for p in paths {
        records.extend(persist::read_runs(p.as_ref())?);
    }
    let records = dedupe(records);
    let summary = write_summary(&records, zeta, out)?;
    let verdicts = criteria::verdicts_from_records(&records);
    persist::write_json(&out.join(VERDICTS_FILE), &verdicts)?;
    Ok((summary, verdicts))
}

/// One line per series, for terminal output.
pub fn table(summary: &Summary) -> String {
    let mut s = String::new();
    for series in &summary.series {
        let slope = series.slope.map_or("-".to_string(), |v| format!("{v:.3}"));
        let last = series.points.last();
        let _ = writeln!(
            s,
            "{:<48} {:>8} slope {:>7}  last n {:>6} mean {:.4e}",
            series.label(),
            series.metric,
            slope,
            last.map_or(0, |p| p.n),
            last.map_or(f64::NAN, |p| p.mean)
        );
    }
    s
}
