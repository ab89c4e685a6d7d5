//! Learning curves: mean ± std across seeds, one series per run directory.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::experiment::{read_metrics, MetricsRow, METRICS_HEADER};
use crate::error::{Error, Result};

/// One curve: per evaluation index, mean x (env steps) and mean/std of the
/// metric over the seeds that report a finite value there.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub seeds: usize,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn metric_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(format!("reading {}", dir.display()), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("metrics_seed") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Aggregates the seeds of one run directory. Rows are aligned by
/// evaluation index and truncated to the shortest seed.
pub fn series_from_runs(label: &str, runs: &[Vec<MetricsRow>], metric: &str) -> Result<Series> {
    if !METRICS_HEADER.contains(&metric) {
        return Err(Error::Config(format!("unknown metric `{metric}`; expected one of {}", METRICS_HEADER.join(", "))));
    }
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    let mut s = Series {
        label: label.to_string(),
        seeds: runs.len(),
        x: Vec::new(),
        mean: Vec::new(),
        std: Vec::new(),
    };
    for k in 0..len {
        let vals: Vec<f64> = runs.iter().filter_map(|r| r[k].get(metric)).filter(|v| v.is_finite()).collect();
        if vals.is_empty() {
            continue;
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        s.x.push(runs.iter().map(|r| r[k].env_steps as f64).sum::<f64>() / runs.len() as f64);
        s.mean.push(mean);
        s.std.push(var.sqrt());
    }
    Ok(s)
}

/// Series for `dir` itself (if it holds metrics files) and for each
/// immediate subdirectory that does, sorted by name.
pub fn collect_series(dir: &Path, metric: &str) -> Result<Vec<Series>> {
    let mut dirs = vec![dir.to_path_buf()];
    let mut subs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(format!("reading {}", dir.display()), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subs.sort();
    dirs.extend(subs);
    let mut out = Vec::new();
    for d in dirs {
        let files = metric_files(&d)?;
        if files.is_empty() {
            continue;
        }
        let runs = files.iter().map(|f| read_metrics(f)).collect::<Result<Vec<_>>>()?;
        let label = d.file_name().and_then(|n| n.to_str()).unwrap_or("run").to_string();
        out.push(series_from_runs(&label, &runs, metric)?);
    }
    if out.is_empty() {
        return Err(Error::Config(format!("no metrics_seed*.csv files under {}", dir.display())));
    }
    Ok(out)
}

/// Renders the series as an SVG line chart with shaded ±1 std bands.
pub fn render_svg(series: &[Series], metric: &str, out: &Path) -> Result<()> {
    let plot_err = |e: &dyn std::fmt::Display| Error::Plot(e.to_string());
    let points = series.iter().flat_map(|s| {
        s.x.iter()
            .zip(s.mean.iter().zip(&s.std))
            .map(|(&x, (&m, &d))| (x, m - d, m + d))
    });
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, lo, hi) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(lo);
        y1 = y1.max(hi);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let pad = ((y1 - y0) * 0.05).max(1e-6);
    let (y0, y1) = (y0 - pad, y1 + pad);

    let root = SVGBackend::new(out, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(metric, ("sans-serif", 22))
        .margin(12)
        .margin_right(36)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| plot_err(&e))?;
    chart
        .configure_mesh()
        .x_desc("env steps")
        .x_label_formatter(&|x| format!("{x:.0}"))
        .y_desc(metric)
        .draw()
        .map_err(|e| plot_err(&e))?;
    for (idx, s) in series.iter().enumerate() {
        let color = Palette99::pick(idx).to_rgba();
        let mut band: Vec<(f64, f64)> = s.x.iter().zip(s.mean.iter().zip(&s.std)).map(|(&x, (&m, &d))| (x, m + d)).collect();
        band.extend(s.x.iter().zip(s.mean.iter().zip(&s.std)).rev().map(|(&x, (&m, &d))| (x, m - d)));
        chart
            .draw_series(std::iter::once(Polygon::new(band, color.mix(0.2).filled())))
            .map_err(|e| plot_err(&e))?;
        chart
            .draw_series(LineSeries::new(s.x.iter().copied().zip(s.mean.iter().copied()), color.stroke_width(2)))
            .map_err(|e| plot_err(&e))?
            .label(format!("{} (n={})", s.label, s.seeds))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(&e))?;
    root.present().map_err(|e| plot_err(&e))?;
    Ok(())
}

/// `plot --runs DIR --metric NAME --out FILE`.
pub fn plot_runs(runs: &Path, metric: &str, out: &Path) -> Result<Vec<Series>> {
    let series = collect_series(runs, metric)?;
    render_svg(&series, metric, out)?;
    Ok(series)
}
