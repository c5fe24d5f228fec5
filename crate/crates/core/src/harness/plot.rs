//! Success-rate learning curves as standalone SVG.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{mean_std, read_file, write_file};
use crate::{Error, Result};

/// Trailing moving-average window, in evaluation points.
pub const SMOOTHING_WINDOW: usize = 5;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Deserialize)]
struct EvalLine {
    event: String,
    step: usize,
    #[serde(default)]
    success_rate: f64,
}

/// `(step, success_rate)` pairs from a run's `metrics.jsonl`.
pub fn read_eval_series(run_dir: &Path) -> Result<Vec<(usize, f64)>> {
    let text = read_file(&run_dir.join("metrics.jsonl"))?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let rec: EvalLine = serde_json::from_str(line)?;
        if rec.event == "eval" {
            out.push((rec.step, rec.success_rate));
        }
    }
    Ok(out)
}

/// Trailing moving average with a shrinking window at the start.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window.max(1));
            let slice = &values[lo..=i];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

/// A labelled curve: mean over seeds and, with more than one seed, the
/// per-point standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    pub steps: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Option<Vec<f64>>,
}

fn run_dirs_under(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join("metrics.jsonl").is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut runs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("metrics.jsonl").is_file())
        .collect();
    runs.sort();
    Ok(runs)
}

/// One curve from a run directory, or from a directory of seed runs.
pub fn load_curve(dir: &Path) -> Result<Curve> {
    let runs = run_dirs_under(dir)?;
    if runs.is_empty() {
        return Err(Error::Analysis(format!("no metrics under {}", dir.display())));
    }
    let mut series = Vec::new();
    for run in &runs {
        let s = read_eval_series(run)?;
        if s.is_empty() {
            return Err(Error::Analysis(format!("{} has no evaluations", run.display())));
        }
        series.push(s);
    }
    let len = series.iter().map(Vec::len).min().unwrap_or(0);
    let steps: Vec<usize> = series[0][..len].iter().map(|p| p.0).collect();
    if series.iter().any(|s| s[..len].iter().map(|p| p.0).ne(steps.iter().copied())) {
        return Err(Error::Analysis(format!("runs under {} evaluate at different steps", dir.display())));
    }
    let smoothed: Vec<Vec<f64>> = series
        .iter()
        .map(|s| smooth(&s[..len].iter().map(|p| p.1).collect::<Vec<_>>(), SMOOTHING_WINDOW))
        .collect();
    let mut mean = Vec::with_capacity(len);
    let mut std = Vec::with_capacity(len);
    for i in 0..len {
        let column: Vec<f64> = smoothed.iter().map(|s| s[i]).collect();
        let (m, s) = mean_std(&column);
        mean.push(m);
        std.push(s);
    }
    let label = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Ok(Curve {
        label,
        steps,
        mean,
        std: (smoothed.len() > 1).then_some(std),
    })
}

/// Renders curves to SVG text.
pub fn render_svg(curves: &[Curve], title: &str) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (60.0, 20.0, 40.0, 70.0);
    let max_step = curves.iter().flat_map(|c| c.steps.iter().copied()).max().unwrap_or(1).max(1) as f64;
    let px = |step: usize| left + (w - left - right) * step as f64 / max_step;
    let py = |v: f64| top + (h - top - bottom) * (1.0 - v.clamp(0.0, 1.0));

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - left - right,
        h - top - bottom
    );
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{v:.2}</text>"#, left - 6.0, py(v) + 4.0);
        let s = (max_step * v).round() as usize;
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{s}</text>"#, px(s), h - bottom + 16.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">environment steps</text>"#, w / 2.0, h - bottom + 34.0);
    let _ = writeln!(svg, r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">success rate</text>"#, h / 2.0, h / 2.0);

    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if let Some(std) = &c.std {
            let upper = c.steps.iter().zip(&c.mean).zip(std).map(|((&s, m), d)| format!("{:.2},{:.2}", px(s), py(m + d)));
            let lower = c.steps.iter().zip(&c.mean).zip(std).rev().map(|((&s, m), d)| format!("{:.2},{:.2}", px(s), py(m - d)));
            let pts: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(svg, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, pts.join(" "));
        }
        let pts: Vec<String> = c.steps.iter().zip(&c.mean).map(|(&s, &m)| format!("{:.2},{:.2}", px(s), py(m))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        let ly = top + 16.0 * (i as f64 + 1.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#, left + 8.0, escape(&c.label));
    }
    let _ = writeln!(
        svg,
        r#"<text x="{left}" y="{}" font-size="10">All curves are smoothed with a trailing {SMOOTHING_WINDOW}-evaluation window; bands show ±1 std across seeds.</text>"#,
        h - 10.0
    );
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One curve per input directory, written to `out`. Nothing is written
/// unless every input yields a curve.
pub fn plot_runs(dirs: &[PathBuf], out: &Path, title: &str) -> Result<Vec<Curve>> {
    if dirs.is_empty() {
        return Err(Error::Analysis("no run directories given".into()));
    }
    let curves = dirs.iter().map(|d| load_curve(d)).collect::<Result<Vec<_>>>()?;
    write_file(out, render_svg(&curves, title))?;
    Ok(curves)
}
