//! Comparison of a pipeline run against a reference run (usually the
//! finite-difference stage of a run on the same model and domain).

use crate::config::{ExperimentConfig, Stage};
use crate::formats::{self, Table};
use crate::pipeline::{load_run_config, read_summary, sha256_hex, summary_eigenvalue, RunDir};
use crate::plot::plane_grid;
use anyhow::{anyhow, bail, Result};
use serde::Serialize;
use serde_json::json;
use skoeig_core::pinn::Mlp;
use skoeig_core::Complex64;
use std::path::Path;

/// Hash of what two runs must share to be comparable: model, domain bounds
/// and operator kind.
pub fn problem_hash(cfg: &ExperimentConfig) -> String {
    let v = json!({
        "model": cfg.model,
        "low": cfg.domain.low,
        "high": cfg.domain.high,
        "kind": cfg.kind,
    });
    sha256_hex(&serde_json::to_vec(&v).expect("json"))
}

/// Relative L2 distance `min_c ||c u - v|| / ||v||` over complex `c`, which
/// removes both the arbitrary scale and the global phase of `u`.
pub fn aligned_error(u: &[Complex64], v: &[Complex64]) -> f64 {
    let uu: f64 = u.iter().map(|z| z.norm_sqr()).sum();
    let vv: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    if uu == 0.0 || vv == 0.0 {
        return if uu == vv { 0.0 } else { 1.0 };
    }
    let uv: Complex64 = u.iter().zip(v).map(|(a, b)| a.conj() * b).sum();
    let c = uv / uu;
    let err: f64 = u.iter().zip(v).map(|(a, b)| (c * a - b).norm_sqr()).sum();
    (err / vv).sqrt()
}

/// An eigenfunction either as a network or as point samples.
pub enum Field {
    Network(Mlp),
    Samples { points: Vec<Vec<f64>>, values: Vec<Complex64> },
}

impl Field {
    fn at(&self, p: &[f64]) -> Complex64 {
        match self {
            Field::Network(net) => {
                let v = net.eval(p);
                Complex64::new(v[0], v[1])
            }
            Field::Samples { points, values } => values[nearest(points, p)],
        }
    }

    fn points(&self) -> Option<&[Vec<f64>]> {
        match self {
            Field::Samples { points, .. } => Some(points),
            Field::Network(_) => None,
        }
    }
}

fn nearest(points: &[Vec<f64>], p: &[f64]) -> usize {
    let d2 = |q: &Vec<f64>| q.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    (0..points.len())
        .min_by(|&a, &b| d2(&points[a]).total_cmp(&d2(&points[b])))
        .expect("non-empty sample set")
}

/// The best field a run directory holds: FD eigenvector, then trained
/// network, then least-squares values.
fn load_field(cfg: &ExperimentConfig, dir: &Path, prefer_fd: bool) -> Result<(Field, &'static str)> {
    let run = RunDir::new(cfg, dir);
    if prefer_fd && cfg.stages.contains(&Stage::Fd) {
        if let Ok((h, est, _, pts)) = formats::read_eigen(&dir.join("fd_eigenfunction.csv")) {
            if h == run.hash(Stage::Fd) {
                return Ok((
                    Field::Samples {
                        points: pts,
                        values: est.mode(0),
                    },
                    "fd",
                ));
            }
        }
    }
    if let Ok(net) = run.network() {
        return Ok((Field::Network(net), "pinn"));
    }
    if let Ok((est, _, pts)) = run.eigenfunction() {
        return Ok((
            Field::Samples {
                points: pts,
                values: est.mode(0),
            },
            "lsq",
        ));
    }
    bail!("{} holds no eigenfunction; run stage `pinn`, `eigenfunction` or `fd`", dir.display())
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub eigenvalue: [f64; 2],
    pub reference_eigenvalue: [f64; 2],
    pub eigenvalue_relative_error: f64,
    pub eigenfunction_relative_error: Option<f64>,
    pub field_source: Option<String>,
    pub reference_source: Option<String>,
    pub compared_points: usize,
    pub problem_hash_match: bool,
}

/// Compares `run_dir` with `reference_dir`. Mismatched model/domain/kind is
/// an error unless `force` is set.
pub fn compare(run_dir: &Path, reference_dir: &Path, density_floor: f64, force: bool) -> Result<Report> {
    let cfg = load_run_config(run_dir)?;
    let rcfg = load_run_config(reference_dir)?;
    let matched = problem_hash(&cfg) == problem_hash(&rcfg);
    if !matched && !force {
        bail!(
            "runs are not comparable: model, domain or kind differ ({} vs {}); pass --force to compare anyway",
            run_dir.display(),
            reference_dir.display()
        );
    }
    let s = read_summary(run_dir)?;
    let rs = read_summary(reference_dir)?;
    let lambda = summary_eigenvalue(&s, "eigenvalue")
        .or_else(|| summary_eigenvalue(&s, "fd_eigenvalue"))
        .ok_or_else(|| anyhow!("{} reports no eigenvalue", run_dir.display()))?;
    let same = run_dir.canonicalize().ok() == reference_dir.canonicalize().ok();
    let reference = if same {
        lambda
    } else {
        summary_eigenvalue(&rs, "fd_eigenvalue")
            .or_else(|| summary_eigenvalue(&rs, "eigenvalue"))
            .ok_or_else(|| anyhow!("{} reports no eigenvalue", reference_dir.display()))?
    };

    let mut report = Report {
        eigenvalue: [lambda.re, lambda.im],
        reference_eigenvalue: [reference.re, reference.im],
        eigenvalue_relative_error: (lambda - reference).norm() / reference.norm(),
        eigenfunction_relative_error: None,
        field_source: None,
        reference_source: None,
        compared_points: 0,
        problem_hash_match: matched,
    };
    let (Ok((field, src)), Ok((rfield, rsrc))) = (load_field(&cfg, run_dir, false), load_field(&rcfg, reference_dir, !same))
    else {
        return Ok(report);
    };
    // compare on the run's samples, else on the reference samples, else on the plot grid
    let (points, on_reference) = match (field.points(), rfield.points()) {
        (Some(p), _) => (p.to_vec(), false),
        (None, Some(p)) => (p.to_vec(), true),
        (None, None) => (plane_grid(&cfg), false),
    };
    let ref_index = |i: usize, p: &[f64]| -> usize {
        match rfield.points() {
            Some(_) if on_reference => i,
            Some(cells) => nearest(cells, p),
            None => i,
        }
    };
    // restrict to where the reference stationary density is appreciable
    let fd_p0 = Table::read(&reference_dir.join("fd_stationary.csv"))
        .ok()
        .filter(|t| t.hash() == Some(&RunDir::new(&rcfg, reference_dir).hash(Stage::Fd)))
        .and_then(|t| t.f64_column("density").ok())
        .filter(|p0| rfield.points().is_some_and(|c| c.len() == p0.len()));
    let keep: Vec<usize> = match &fd_p0 {
        Some(p0) if density_floor > 0.0 => {
            let max = p0.iter().copied().fold(0.0, f64::max);
            (0..points.len())
                .filter(|&i| p0[ref_index(i, &points[i])] >= density_floor * max)
                .collect()
        }
        _ => (0..points.len()).collect(),
    };
    let u: Vec<Complex64> = keep.iter().map(|&i| field.at(&points[i])).collect();
    let v: Vec<Complex64> = keep
        .iter()
        .map(|&i| match &rfield {
            Field::Samples { values, .. } => values[ref_index(i, &points[i])],
            net => net.at(&points[i]),
        })
        .collect();
    report.eigenfunction_relative_error = Some(aligned_error(&u, &v));
    report.field_source = Some(src.into());
    report.reference_source = Some(rsrc.into());
    report.compared_points = keep.len();
    Ok(report)
}
