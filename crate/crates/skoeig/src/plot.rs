//! Long-format CSV bundles for external plotting.

use crate::config::{ExperimentConfig, Stage};
use crate::formats::{field_table, fmt, principal_arg, Table};
use crate::pipeline::RunDir;
use anyhow::{bail, Result};
use skoeig_core::pinn::evaluate_grid;
use skoeig_core::Complex64;
use std::path::{Path, PathBuf};

pub const FIGURES: [&str; 3] = ["trace", "heatmap", "phase"];

/// `n` equally spaced nodes from `low` to `high`, both included.
pub fn linspace(low: f64, high: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (low + high)];
    }
    (0..n)
        .map(|i| {
            if i == n - 1 {
                high
            } else {
                low + (high - low) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Heatmap nodes over the configured plane, first plane coordinate fastest.
pub fn plane_grid(cfg: &ExperimentConfig) -> Vec<Vec<f64>> {
    let [a, b] = cfg.plot.plane;
    let base: Vec<f64> = if cfg.plot.slice.is_empty() {
        cfg.domain.low.iter().zip(&cfg.domain.high).map(|(l, h)| 0.5 * (l + h)).collect()
    } else {
        cfg.plot.slice.clone()
    };
    let n = cfg.plot.grid_n;
    let xs = linspace(cfg.domain.low[a], cfg.domain.high[a], n);
    let ys = linspace(cfg.domain.low[b], cfg.domain.high[b], n);
    let mut out = Vec::with_capacity(n * n);
    for &y in &ys {
        for &x in &xs {
            let mut p = base.clone();
            p[a] = x;
            p[b] = y;
            out.push(p);
        }
    }
    out
}

fn trace_bundle(run: &RunDir<'_>, out: &Path) -> Result<PathBuf> {
    let d = run.density()?;
    let ev = run.eigenvalues()?;
    let ids = if ev.fits.iter().any(|(n, _)| n != "reference") {
        run.collocation()?.ids
    } else {
        Vec::new()
    };
    let mut t = Table::new(&run.hash(Stage::Eigenvalue), &["trace", "t", "rho", "fit"]);
    for (name, fit) in &ev.fits {
        let rho = if name == "reference" {
            d.reference_mass.clone()
        } else {
            let id: u64 = name.parse()?;
            match ids.binary_search(&id) {
                Ok(i) => d.column(i),
                Err(_) => bail!("trace box {id} is not in the training set"),
            }
        };
        for (k, &tt) in d.times.iter().enumerate() {
            t.rows.push(vec![name.clone(), fmt(tt), fmt(rho[k]), fmt(fit.params.eval(tt))]);
        }
    }
    let path = out.join("trace.csv");
    t.write(&path)?;
    Ok(path)
}

fn field(run: &RunDir<'_>) -> Result<(Vec<Vec<f64>>, Vec<Complex64>)> {
    let net = run.network()?;
    let pts = plane_grid(run.cfg);
    let vals = evaluate_grid(&net, &pts);
    Ok((pts, vals))
}

fn plane_names(cfg: &ExperimentConfig) -> [String; 2] {
    cfg.plot.plane.map(|k| format!("x{k}"))
}

fn heatmap_bundle(run: &RunDir<'_>, out: &Path) -> Result<PathBuf> {
    let (pts, vals) = field(run)?;
    let [a, b] = run.cfg.plot.plane;
    let names = plane_names(run.cfg);
    let coords: Vec<Vec<f64>> = pts.iter().map(|p| vec![p[a], p[b]]).collect();
    let t = field_table(&run.hash(Stage::Pinn), &[&names[0], &names[1]], &coords, &vals);
    let path = out.join("heatmap.csv");
    t.write(&path)?;
    Ok(path)
}

/// Phase grid; nodes where `|U| / max |U|` falls below the configured
/// threshold are dropped.
fn phase_bundle(run: &RunDir<'_>, out: &Path) -> Result<PathBuf> {
    let (pts, vals) = field(run)?;
    let [a, b] = run.cfg.plot.plane;
    let names = plane_names(run.cfg);
    let max = vals.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut t = Table::new(&run.hash(Stage::Pinn), &[&names[0], &names[1], "phase"]);
    t.meta.insert("threshold".into(), fmt(run.cfg.plot.threshold));
    for (p, v) in pts.iter().zip(&vals) {
        if v.norm() < run.cfg.plot.threshold * max {
            continue;
        }
        t.rows.push(vec![fmt(p[a]), fmt(p[b]), fmt(principal_arg(*v))]);
    }
    let path = out.join("phase.csv");
    t.write(&path)?;
    Ok(path)
}

/// Writes one figure bundle (`trace`, `heatmap`, `phase`) or `all` of them
/// into `out`.
pub fn emit(cfg: &ExperimentConfig, dir: &Path, figure: &str, out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let run = RunDir::new(cfg, dir);
    let figures: Vec<&str> = match figure {
        "all" => FIGURES.to_vec(),
        f if FIGURES.contains(&f) => vec![f],
        f => bail!("unknown figure `{f}`; expected one of trace, heatmap, phase, all"),
    };
    figures
        .into_iter()
        .map(|f| match f {
            "trace" => trace_bundle(&run, out),
            "heatmap" => heatmap_bundle(&run, out),
            _ => phase_bundle(&run, out),
        })
        .collect()
}
