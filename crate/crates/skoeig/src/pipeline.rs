//! Stage orchestration. Each stage writes its artifacts and then a
//! `<stage>.json` report; the report is written last and names the stage
//! hash, so a stage whose report matches the current hash is skipped.

use crate::config::{ExperimentConfig, Stage, TraceSource};
use crate::formats::{self, fmt, Table};
use crate::parallel::{self, Rayon};
use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use skoeig_core::collocation::{generate_reference_set, generate_training_set};
use skoeig_core::density::{BackwardJob, DensityMatrix, ForwardJob, StationaryJob};
use skoeig_core::fd::{self, EvolveConfig, FdGrid};
use skoeig_core::pinn::{default_hidden, train_problem, LossProblem, Mlp, TrainConfig};
use skoeig_core::rng::{derive_seed, purpose};
use skoeig_core::spectral::{
    aggregate_eigenvalue, fit_eigenvalue, parabolic_spectrum, solve_eigenfunction_lsq, Baseline, DecayFit,
    DecayFitOptions, EigenEstimate, LsqOptions, SliceWindow,
};
use skoeig_core::{Complex64, Kind};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const SUMMARY: &str = "summary.json";
pub const TIMINGS: &str = "timings.json";
pub const CONFIG: &str = "config.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn pair(c: Complex64) -> [f64; 2] {
    [c.re, c.im]
}

/// Config sections a stage reads, in a fixed JSON form.
fn stage_inputs(cfg: &ExperimentConfig, stage: Stage) -> Value {
    let base = json!({
        "model": cfg.model,
        "domain": cfg.domain,
        "kind": cfg.kind,
        "seed": cfg.seed,
    });
    let extra = match stage {
        Stage::Collocation => json!({ "sim": cfg.sim, "collocation": cfg.collocation }),
        Stage::Density => json!({ "sim": cfg.sim, "density": cfg.density }),
        Stage::Stationary => json!({
            "dt": cfg.sim.dt,
            "stationary": cfg.stationary,
            "reference": cfg.density.as_ref().and_then(|d| d.reference.clone()),
        }),
        Stage::Eigenvalue => json!({
            "eig_window": cfg.spectral.as_ref().map(|s| s.eig_window),
            "modes": cfg.spectral.as_ref().map(|s| s.modes),
            "traces": cfg.spectral.as_ref().map(|s| s.trace_source(cfg.kind)),
            "fit_traces": cfg.spectral.as_ref().map(|s| s.fit_traces),
            "averaging": cfg.spectral.as_ref().map(|s| s.averaging),
        }),
        Stage::Eigenfunction => json!({
            "fn_window": cfg.spectral.as_ref().map(|s| s.fn_window),
            "row_weighted": cfg.spectral.as_ref().map(|s| s.row_weighted),
        }),
        Stage::Pinn => json!({ "pinn": cfg.pinn }),
        Stage::Fd => json!({
            "fd": cfg.fd,
            "start_point": cfg.density.as_ref().and_then(|d| d.start_point.clone()),
            "reference": cfg.density.as_ref().and_then(|d| d.reference.clone()),
        }),
    };
    json!({ "stage": stage.name(), "base": base, "inputs": extra })
}

/// Stage hash over its inputs and the hashes of the stages it reads.
pub fn stage_hash(cfg: &ExperimentConfig, stage: Stage) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&stage_inputs(cfg, stage)).expect("json"));
    for &d in stage.dependencies() {
        h.update(stage_hash(cfg, d).as_bytes());
    }
    format!("{:x}", h.finalize())
}

/// Hash of the whole effective configuration.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    sha256_hex(&serde_json::to_vec(cfg).expect("json"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ran,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub status: Status,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: Value,
    pub timings: BTreeMap<Stage, Timing>,
    /// SHA-256 of the written summary file.
    pub summary_hash: String,
}

/// A failed stage; partial artifacts stay on disk.
#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}` failed: {source:#}")]
pub struct StageFailure {
    pub stage: Stage,
    pub source: anyhow::Error,
    pub summary_path: PathBuf,
}

/// Artifacts of a run directory, read on demand and checked against the
/// hashes the current config expects.
pub struct RunDir<'a> {
    pub cfg: &'a ExperimentConfig,
    pub dir: PathBuf,
}

fn stale(stage: Stage, path: &Path) -> anyhow::Error {
    anyhow!(
        "{} is missing or was produced by a different configuration; run stage `{stage}` first",
        path.display()
    )
}

pub struct Collocation {
    pub ids: Vec<u64>,
    pub training: Vec<Vec<f64>>,
    pub reference: Vec<Vec<f64>>,
    pub holdout: Vec<Vec<f64>>,
}

pub struct Stationary {
    /// `P0` at each training box.
    pub density: Vec<f64>,
    pub reference_mass: f64,
}

pub struct Eigenvalues {
    pub lambda1: Complex64,
    pub spectrum: Vec<Complex64>,
    pub fits: Vec<(String, DecayFit)>,
}

impl<'a> RunDir<'a> {
    pub fn new(cfg: &'a ExperimentConfig, dir: impl Into<PathBuf>) -> Self {
        Self { cfg, dir: dir.into() }
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn hash(&self, stage: Stage) -> String {
        stage_hash(self.cfg, stage)
    }

    fn check(&self, stage: Stage, file: &str, found: &str) -> Result<()> {
        if found != self.hash(stage) {
            return Err(stale(stage, &self.path(file)));
        }
        Ok(())
    }

    fn table(&self, stage: Stage, file: &str) -> Result<Table> {
        let path = self.path(file);
        let t = Table::read(&path).map_err(|_| stale(stage, &path))?;
        self.check(stage, file, t.hash().unwrap_or_default())?;
        Ok(t)
    }

    /// Report of a completed stage, if it matches the current hash.
    pub fn report(&self, stage: Stage) -> Option<Value> {
        let text = std::fs::read_to_string(self.path(&format!("{stage}.json"))).ok()?;
        let v: Value = serde_json::from_str(&text).ok()?;
        (v.get("hash")?.as_str()? == self.hash(stage)).then_some(v)
    }

    pub fn collocation(&self) -> Result<Collocation> {
        let st = Stage::Collocation;
        let wrap = |f: &str| self.path(f);
        let (h, ids, training) = formats::read_training(&wrap("training.csv")).map_err(|_| stale(st, &wrap("training.csv")))?;
        self.check(st, "training.csv", &h)?;
        let (h, reference) = formats::read_points(&wrap("reference.csv")).map_err(|_| stale(st, &wrap("reference.csv")))?;
        self.check(st, "reference.csv", &h)?;
        let (h, holdout) = formats::read_points(&wrap("holdout.csv")).map_err(|_| stale(st, &wrap("holdout.csv")))?;
        self.check(st, "holdout.csv", &h)?;
        Ok(Collocation {
            ids,
            training,
            reference,
            holdout,
        })
    }

    pub fn density(&self) -> Result<DensityMatrix> {
        let path = self.path("density.bin");
        let (h, d) = formats::read_density(&path).map_err(|_| stale(Stage::Density, &path))?;
        self.check(Stage::Density, "density.bin", &h)?;
        Ok(d)
    }

    pub fn stationary(&self) -> Result<Stationary> {
        let t = self.table(Stage::Stationary, "stationary.csv")?;
        Ok(Stationary {
            density: t.f64_column("density")?,
            reference_mass: t.meta_f64("reference_mass")?,
        })
    }

    pub fn eigenvalues(&self) -> Result<Eigenvalues> {
        let t = self.table(Stage::Eigenvalue, "eigenvalue.csv")?;
        let mut spectrum = Vec::new();
        while let Some(v) = t.meta.get(&format!("eigenvalue_{}", spectrum.len() + 1)) {
            let (re, im) = v.split_once(' ').ok_or_else(|| anyhow!("bad eigenvalue {v:?}"))?;
            spectrum.push(Complex64::new(re.parse()?, im.parse()?));
        }
        let lambda1 = *spectrum.first().ok_or_else(|| anyhow!("eigenvalue.csv lists no eigenvalue"))?;
        let col = |n: &str| t.column(n);
        let (cb, cr, cf) = (col("b1")?, col("residual")?, col("failure")?);
        let mut fits = Vec::new();
        for r in &t.rows {
            let p = |k: usize| r[cb + k].parse::<f64>();
            let failure = match r[cf].as_str() {
                "" => None,
                s => Some(serde_json::from_value(Value::String(s.to_string()))?),
            };
            fits.push((
                r[0].clone(),
                DecayFit {
                    params: skoeig_core::spectral::DecayFitParams {
                        b1: p(0)?,
                        b2: p(1)?,
                        b3: p(2)?,
                        b4: p(3)?,
                        b5: p(4)?,
                    },
                    residual: r[cr].parse()?,
                    failure,
                },
            ));
        }
        Ok(Eigenvalues {
            lambda1,
            spectrum,
            fits,
        })
    }

    pub fn eigenfunction(&self) -> Result<(EigenEstimate, Vec<u64>, Vec<Vec<f64>>)> {
        let path = self.path("eigenfunction.csv");
        let (h, est, ids, pts) = formats::read_eigen(&path).map_err(|_| stale(Stage::Eigenfunction, &path))?;
        self.check(Stage::Eigenfunction, "eigenfunction.csv", &h)?;
        Ok((est, ids, pts))
    }

    pub fn network(&self) -> Result<Mlp> {
        let path = self.path("network.bin");
        let (h, net) = formats::read_params(&path).map_err(|_| stale(Stage::Pinn, &path))?;
        self.check(Stage::Pinn, "network.bin", &h)?;
        Ok(net)
    }
}

fn start_box(cfg: &ExperimentConfig) -> Result<u64> {
    let p = cfg
        .density
        .as_ref()
        .and_then(|d| d.start_point.as_ref())
        .ok_or_else(|| anyhow!("density.start_point is required"))?;
    cfg.grid().locate(p).ok_or_else(|| anyhow!("start point lies outside the domain"))
}

fn core(e: skoeig_core::Error) -> anyhow::Error {
    anyhow!(e)
}

fn run_collocation(run: &RunDir<'_>) -> Result<Value> {
    let cfg = run.cfg;
    let c = cfg.collocation.as_ref().expect("validated");
    let h = run.hash(Stage::Collocation);
    let grid = cfg.grid();
    let sim = cfg.sim_config();
    let sets = generate_training_set(&cfg.model, &grid, c.n_x, c.alpha, &sim, cfg.seed).map_err(core)?;
    let reference = generate_reference_set(&grid, c.n_y, c.alpha, &cfg.model, &sim, cfg.seed).map_err(core)?;
    let holdout = generate_reference_set(
        &grid,
        c.n_holdout,
        c.alpha,
        &cfg.model,
        &sim,
        derive_seed(cfg.seed, purpose::HELD_OUT),
    )
    .map_err(core)?;
    let traj = ((c.alpha * c.n_x as f64) - 1e-9).ceil().max(0.0) as usize;
    formats::write_training(&run.path("training.csv"), &h, &sets, traj)?;
    formats::write_points(&run.path("reference.csv"), &h, &reference)?;
    formats::write_points(&run.path("holdout.csv"), &h, &holdout)?;
    Ok(json!({
        "n_x": sets.box_ids.len(),
        "n_y": reference.len(),
        "n_holdout": holdout.len(),
        "trajectory_boxes": traj,
    }))
}

fn run_density(run: &RunDir<'_>) -> Result<Value> {
    let cfg = run.cfg;
    let ds = cfg.density.as_ref().expect("validated");
    let col = run.collocation()?;
    let grid = cfg.grid();
    let sim = cfg.sim_config();
    let reference = ds.reference.as_ref().map(|r| r.reference_box());
    let d = match cfg.kind {
        Kind::Forward => {
            let job = ForwardJob {
                model: &cfg.model,
                grid: &grid,
                ids: &col.ids,
                sim: &sim,
                start_box: start_box(cfg)?,
                reference: reference.as_ref(),
            };
            parallel::forward(&job, ds.k)
        }
        Kind::Backward => {
            let job = BackwardJob {
                model: &cfg.model,
                grid: &grid,
                ids: &col.ids,
                sim: &sim,
                reference: reference.as_ref().expect("validated"),
                k: ds.k,
            };
            parallel::backward(&job)
        }
    }
    .map_err(core)?;
    formats::write_density(&run.path("density.bin"), &run.hash(Stage::Density), &d)?;
    Ok(json!({
        "n_t": d.n_t,
        "n_x": d.n_x,
        "k": d.k,
        "trajectories": d.tally.total,
        "diverged": d.tally.diverged,
        "invariant_excess": d.invariant_excess(),
    }))
}

fn run_stationary(run: &RunDir<'_>) -> Result<Value> {
    let cfg = run.cfg;
    let st = cfg.stationary.as_ref().expect("validated");
    let col = run.collocation()?;
    let grid = cfg.grid();
    let sim = cfg.stationary_sim_config().expect("validated");
    let reference = cfg
        .density
        .as_ref()
        .and_then(|d| d.reference.as_ref())
        .map(|r| r.reference_box());
    let job = StationaryJob {
        model: &cfg.model,
        grid: &grid,
        sim: &sim,
        t_long: st.t_long,
        reference: reference.as_ref(),
    };
    let est = parallel::stationary(&job, st.k).map_err(core)?;
    let mut t = Table::new(&run.hash(Stage::Stationary), &["box_id", "density"]);
    t.meta.insert("reference_mass".into(), fmt(est.reference_mass()));
    t.meta.insert("mass_in_grid".into(), fmt(est.mass_in_grid()));
    t.meta.insert("samples".into(), est.total.to_string());
    for &id in &col.ids {
        t.rows.push(vec![id.to_string(), fmt(est.density(id))]);
    }
    t.write(&run.path("stationary.csv"))?;
    Ok(json!({
        "samples": est.total,
        "trajectories": est.tally.total,
        "diverged": est.tally.diverged,
        "reference_mass": est.reference_mass(),
        "mass_in_grid": est.mass_in_grid(),
    }))
}

/// Positions of the `n` columns with the largest standard deviation over the
/// window, in ascending order.
pub fn top_columns(d: &DensityMatrix, window: SliceWindow, n: usize) -> Vec<usize> {
    let spread = |i: usize| {
        let v: Vec<f64> = (window.start..window.end).map(|k| d.get(k, i)).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>()
    };
    let mut order: Vec<(f64, usize)> = (0..d.n_x).map(|i| (spread(i), i)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut pick: Vec<usize> = order.into_iter().take(n).map(|(_, i)| i).collect();
    pick.sort_unstable();
    pick
}

fn run_eigenvalue(run: &RunDir<'_>) -> Result<Value> {
    let cfg = run.cfg;
    let s = cfg.spectral.as_ref().expect("validated");
    let d = run.density()?;
    let window = s.eig_window();
    let opts = DecayFitOptions::default();
    let traces: Vec<(String, Vec<f64>)> = match s.trace_source(cfg.kind) {
        TraceSource::Reference => {
            if d.reference_mass.is_empty() {
                bail!("the density matrix carries no reference-box trace");
            }
            vec![("reference".to_string(), d.reference_mass.clone())]
        }
        TraceSource::Columns => {
            let ids = run.collocation()?.ids;
            top_columns(&d, window, s.fit_traces)
                .into_iter()
                .map(|i| (ids[i].to_string(), d.column(i)))
                .collect()
        }
    };
    let fits: Vec<DecayFit> = traces
        .par_iter()
        .map(|(_, tr)| fit_eigenvalue(tr, &d.times, window, &opts))
        .collect::<skoeig_core::Result<_>>()
        .map_err(core)?;
    let lambda1 = aggregate_eigenvalue(&fits, s.averaging).map_err(core)?;
    let spectrum = parabolic_spectrum(lambda1, s.modes);

    let mut t = Table::new(
        &run.hash(Stage::Eigenvalue),
        &["trace", "b1", "b2", "b3", "b4", "b5", "residual", "failure", "re", "im"],
    );
    for (m, l) in spectrum.iter().enumerate() {
        t.meta.insert(format!("eigenvalue_{}", m + 1), format!("{} {}", fmt(l.re), fmt(l.im)));
    }
    let mut failures: BTreeMap<String, usize> = BTreeMap::new();
    for ((name, _), f) in traces.iter().zip(&fits) {
        let failure = match f.failure {
            Some(x) => {
                let s = serde_json::to_value(x)?.as_str().unwrap_or_default().to_string();
                *failures.entry(s.clone()).or_default() += 1;
                s
            }
            None => String::new(),
        };
        let p = f.params;
        let l = f.eigenvalue();
        t.rows.push(vec![
            name.clone(),
            fmt(p.b1),
            fmt(p.b2),
            fmt(p.b3),
            fmt(p.b4),
            fmt(p.b5),
            fmt(f.residual),
            failure,
            fmt(l.re),
            fmt(l.im),
        ]);
    }
    t.write(&run.path("eigenvalue.csv"))?;
    let failed: usize = failures.values().sum();
    Ok(json!({
        "eigenvalue": pair(lambda1),
        "spectrum": spectrum.iter().map(|&c| pair(c)).collect::<Vec<_>>(),
        "traces": fits.len(),
        "failed": failed,
        "failure_fraction": failed as f64 / fits.len() as f64,
        "failures": failures,
    }))
}

fn run_eigenfunction(run: &RunDir<'_>) -> Result<Value> {
    let cfg = run.cfg;
    let s = cfg.spectral.as_ref().expect("validated");
    let d = run.density()?;
    let st = run.stationary()?;
    let ev = run.eigenvalues()?;
    let col = run.collocation()?;
    let baseline = match cfg.kind {
        Kind::Forward => Baseline::PerPoint(&st.density),
        Kind::Backward => Baseline::Shared(st.reference_mass),
    };
    let est = solve_eigenfunction_lsq(
        &d,
        baseline,
        &ev.spectrum,
        s.fn_window(),
        &LsqOptions {
            row_weighted: s.row_weighted,
        },
    )
    .map_err(core)?;
    formats::write_eigen(
        &run.path("eigenfunction.csv"),
        &run.hash(Stage::Eigenfunction),
        &est,
        &col.ids,
        &col.training,
    )?;
    let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    let amp: Vec<f64> = est.mode(0).iter().map(|c| c.norm()).collect();
    Ok(json!({
        "modes": est.modes(),
        "window": [est.window.0, est.window.1],
        "rms_residual": rms(&est.residuals),
        "rms_amplitude": rms(&amp),
    }))
}

fn rms_misfit(net: &Mlp, x: &[Vec<f64>], targets: &[Complex64]) -> f64 {
    let s: f64 = x
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            let v = net.eval(p);
            (v[0] - t.re).powi(2) + (v[1] - t.im).powi(2)
        })
        .sum();
    (s / x.len() as f64).sqrt()
}

/// Multiplies the network output by `s` (last-layer weights and biases).
fn scale_output(net: &mut Mlp, s: f64) {
    let w = &net.widths;
    let last = w[w.len() - 2] * 2 + 2;
    let n = net.params.len();
    net.params[n - last..].iter_mut().for_each(|p| *p *= s);
}

fn run_pinn(run: &RunDir<'_>) -> Result<Value> {
    let cfg = run.cfg;
    let ps = cfg.pinn.as_ref().expect("validated");
    let col = run.collocation()?;
    let ev = run.eigenvalues()?;
    let (est, _, _) = run.eigenfunction()?;
    let raw = est.mode(0);
    // targets are fitted at unit RMS; the saved network is scaled back
    let scale = (raw.iter().map(|c| c.norm_sqr()).sum::<f64>() / raw.len() as f64).sqrt();
    if !(scale > 0.0 && scale.is_finite()) {
        bail!("least-squares targets vanish");
    }
    let targets: Vec<Complex64> = raw.iter().map(|c| c / scale).collect();
    let dim = cfg.dim();
    let hidden = if ps.hidden.is_empty() {
        default_hidden(dim)
    } else {
        ps.hidden.clone()
    };
    let mut widths = vec![dim];
    widths.extend(&hidden);
    widths.push(2);
    let net = Mlp::init(widths, cfg.domain.low.clone(), cfg.domain.high.clone(), cfg.seed).map_err(core)?;
    let problem = LossProblem::new(&cfg.model, cfg.kind, ev.lambda1, &net, &col.training, &targets, &col.reference)
        .map_err(core)?;
    let held = LossProblem::new(&cfg.model, cfg.kind, ev.lambda1, &net, &col.training, &targets, &col.holdout)
        .map_err(core)?;
    let base = TrainConfig {
        epochs: ps.pretrain_epochs,
        batch_x: ps.batch_x.min(col.training.len()),
        batch_y: ps.batch_y.min(col.reference.len()),
        learning_rate: ps.learning_rate,
        seed: cfg.seed,
        kind: cfg.kind,
        eigenvalue: ev.lambda1,
        alternate: ps.alternate,
        data_only: true,
        track_full_loss: true,
        ..TrainConfig::default()
    };
    let pre = train_problem(&Rayon, &problem, net, &base).map_err(|e| anyhow!("data-only fit: {e}"))?;
    let main_cfg = TrainConfig {
        epochs: ps.epochs,
        data_only: false,
        seed: cfg.seed.wrapping_add(1),
        ..base
    };
    let trained = train_problem(&Rayon, &problem, pre.net.clone(), &main_cfg).map_err(|e| anyhow!("training: {e}"))?;

    let baseline_residual = held.mean_residual(&pre.net);
    let final_residual = held.mean_residual(&trained.net);
    let baseline_misfit = rms_misfit(&pre.net, &col.training, &targets);
    let final_misfit = rms_misfit(&trained.net, &col.training, &targets);
    let h = run.hash(Stage::Pinn);
    formats::write_history(
        &run.path("loss_history.csv"),
        &h,
        &[("pretrain", &pre.history), ("train", &trained.history)],
    )?;
    let mut base_net = pre.net;
    scale_output(&mut base_net, scale);
    formats::write_params(&run.path("network_data_only.bin"), &h, &base_net)?;
    let mut net = trained.net;
    scale_output(&mut net, scale);
    formats::write_params(&run.path("network.bin"), &h, &net)?;
    let last = trained.history.last().map(|e| e.full.unwrap_or(e.batch)).unwrap_or_default();
    Ok(json!({
        "widths": net.widths,
        "eigenvalue": pair(ev.lambda1),
        "output_scale": scale,
        "baseline_residual": baseline_residual,
        "final_residual": final_residual,
        "residual_reduction": baseline_residual / final_residual,
        "baseline_misfit": baseline_misfit,
        "final_misfit": final_misfit,
        "final_loss": {
            "residual_re": last.residual_re,
            "residual_im": last.residual_im,
            "data_re": last.data_re,
            "data_im": last.data_im,
        },
    }))
}

/// Normalized Gaussian bump on the grid.
fn gaussian(grid: &FdGrid, center: &[f64], var: f64) -> Vec<f64> {
    let mut rho: Vec<f64> = grid
        .centers()
        .iter()
        .map(|x| (-x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (2.0 * var)).exp())
        .collect();
    let mass = rho.iter().sum::<f64>() * grid.cell_volume();
    rho.iter_mut().for_each(|v| *v /= mass);
    rho
}

fn run_fd(run: &RunDir<'_>) -> Result<Value> {
    let cfg = run.cfg;
    let fs = cfg.fd.as_ref().expect("validated");
    let grid = FdGrid::new(cfg.domain.low.clone(), cfg.domain.high.clone(), fs.n).map_err(core)?;
    let h = run.hash(Stage::Fd);
    let forward = fd::assemble(&cfg.model, &grid, Kind::Forward).map_err(core)?;
    let op = match cfg.kind {
        Kind::Forward => forward.clone(),
        Kind::Backward => fd::assemble(&cfg.model, &grid, Kind::Backward).map_err(core)?,
    };
    let arnoldi = fd::leading_eigs(&op, fs.count);
    let mut warning = None;
    if let Err(e) = &arnoldi {
        let msg = format!("Arnoldi failed ({e}); falling back to evolve-and-fit");
        warn!("{msg}");
        warning = Some(msg);
    }
    let evolve = if fs.cross_check || arnoldi.is_err() {
        let ds = cfg.density.as_ref();
        let mid: Vec<f64> = cfg.domain.low.iter().zip(&cfg.domain.high).map(|(l, h)| 0.5 * (l + h)).collect();
        let start = ds.and_then(|d| d.start_point.clone()).unwrap_or_else(|| {
            cfg.domain.high.iter().zip(&mid).map(|(h, m)| 0.5 * (h + m)).collect()
        });
        let (region_low, region_high) = match ds.and_then(|d| d.reference.as_ref()) {
            Some(r) => (r.low.clone(), r.high.clone()),
            None => (cfg.domain.low.clone(), mid),
        };
        let e = &fs.evolve;
        let ecfg = EvolveConfig {
            dt: e.dt,
            t_gap: e.t_gap,
            n_t: e.n_t,
            region_low,
            region_high,
            window: Some(SliceWindow::new(e.window[0], e.window[1])),
            ..EvolveConfig::default()
        };
        let res = fd::evolve_and_fit(&forward, &gaussian(&grid, &start, 0.02), &ecfg).map_err(core)?;
        if !res.fit.ok() {
            bail!("evolve-and-fit trace fit failed: {:?}", res.fit.failure);
        }
        let mut t = Table::new(&h, &["t", "mass", "fit"]);
        for (&tt, &m) in res.times.iter().zip(&res.trace) {
            t.rows.push(vec![fmt(tt), fmt(m), fmt(res.fit.params.eval(tt))]);
        }
        t.write(&run.path("fd_evolve.csv"))?;
        Some(res)
    } else {
        None
    };

    let p0 = fd::stationary_vector(&forward).map_err(core)?;
    let centers = grid.centers();
    let mut st = Table::new(&h, &["cell", "density"]);
    for (i, v) in p0.iter().enumerate() {
        st.rows.push(vec![i.to_string(), fmt(*v)]);
    }
    st.write(&run.path("fd_stationary.csv"))?;

    let mut report = json!({ "n": fs.n, "kind": cfg.kind });
    match &arnoldi {
        Ok(eig) => {
            let m = eig.eigenvalues.len();
            let est = EigenEstimate {
                kind: cfg.kind,
                eigenvalues: eig.eigenvalues.clone(),
                values: (0..grid.len())
                    .flat_map(|i| eig.vectors.iter().map(move |v| v[i]))
                    .collect(),
                window: (0.0, 0.0),
                residuals: vec![0.0; grid.len()],
            };
            let cells: Vec<u64> = (0..grid.len() as u64).collect();
            formats::write_eigen(&run.path("fd_eigenfunction.csv"), &h, &est, &cells, &centers)?;
            report["method"] = json!("arnoldi");
            report["eigenvalues"] = json!(eig.eigenvalues.iter().map(|&c| pair(c)).collect::<Vec<_>>());
            report["eigenvalue"] = json!(pair(eig.eigenvalues[0]));
            report["modes"] = json!(m);
        }
        Err(_) => {
            let l = evolve.as_ref().expect("fallback ran").fit.eigenvalue();
            report["method"] = json!("evolve");
            report["eigenvalues"] = json!([pair(l)]);
            report["eigenvalue"] = json!(pair(l));
        }
    }
    if let Some(res) = &evolve {
        let l = res.fit.eigenvalue();
        report["evolve_eigenvalue"] = json!(pair(l));
        report["evolve_dt"] = json!(res.dt);
        report["mass_drift_rate"] = json!(res.mass_drift_rate);
        if let Ok(eig) = &arnoldi {
            report["arnoldi_evolve_relative_difference"] = json!((l - eig.eigenvalues[0]).norm() / eig.eigenvalues[0].norm());
        }
    }
    if let Some(w) = warning {
        report["warning"] = json!(w);
    }
    Ok(report)
}

fn run_stage(run: &RunDir<'_>, stage: Stage) -> Result<Value> {
    match stage {
        Stage::Collocation => run_collocation(run),
        Stage::Density => run_density(run),
        Stage::Stationary => run_stationary(run),
        Stage::Eigenvalue => run_eigenvalue(run),
        Stage::Eigenfunction => run_eigenfunction(run),
        Stage::Pinn => run_pinn(run),
        Stage::Fd => run_fd(run),
    }
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    formats::write_atomic(path, |w| {
        use std::io::Write;
        w.write_all(text.as_bytes())?;
        Ok(())
    })
}

fn summary(cfg: &ExperimentConfig, run: &RunDir<'_>, failed: Option<(Stage, String)>) -> Value {
    let mut stages = serde_json::Map::new();
    for &st in &cfg.stages {
        if let Some(r) = run.report(st) {
            stages.insert(st.name().into(), r);
        }
    }
    if let Some((st, msg)) = &failed {
        stages.insert(
            st.name().into(),
            json!({ "hash": run.hash(*st), "status": "failed", "error": msg }),
        );
    }
    let lambda = stages.get("eigenvalue").and_then(|r| r.get("eigenvalue")).cloned();
    let fd_lambda = stages.get("fd").and_then(|r| r.get("eigenvalue")).cloned();
    let mut s = json!({
        "name": cfg.name,
        "model": cfg.model.name(),
        "kind": cfg.kind,
        "seed": cfg.seed,
        "config_hash": config_hash(cfg),
        "status": if failed.is_some() { "failed" } else { "ok" },
        "stages": stages,
    });
    if let Some(l) = lambda {
        s["eigenvalue"] = l;
    }
    if let Some(l) = fd_lambda {
        s["fd_eigenvalue"] = l;
    }
    s
}

/// Runs the requested stages (all configured ones when `only` is `None`).
pub fn run(cfg: &ExperimentConfig, dir: &Path, only: Option<&[Stage]>) -> std::result::Result<RunOutcome, StageFailure> {
    let setup = |e: anyhow::Error| StageFailure {
        stage: cfg.stages[0],
        source: e,
        summary_path: dir.join(SUMMARY),
    };
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(setup)?;
    write_json(&dir.join(CONFIG), cfg).map_err(setup)?;
    let run = RunDir::new(cfg, dir);
    let wanted: Vec<Stage> = match only {
        Some(list) => Stage::ALL.into_iter().filter(|s| list.contains(s)).collect(),
        None => cfg.stages.clone(),
    };
    let pool = parallel::thread_pool();
    let mut timings = BTreeMap::new();
    let mut failed = None;
    for stage in wanted {
        let t0 = Instant::now();
        if run.report(stage).is_some() {
            info!("stage {stage}: up to date, skipped");
            timings.insert(
                stage,
                Timing {
                    status: Status::Skipped,
                    seconds: 0.0,
                },
            );
            continue;
        }
        info!("stage {stage}: running");
        let res = pool.install(|| run_stage(&run, stage));
        let secs = t0.elapsed().as_secs_f64();
        match res.and_then(|mut report| {
            report["hash"] = json!(run.hash(stage));
            report["status"] = json!("ok");
            write_json(&run.path(&format!("{stage}.json")), &report)
        }) {
            Ok(()) => {
                info!("stage {stage}: done in {secs:.1} s");
                timings.insert(
                    stage,
                    Timing {
                        status: Status::Ran,
                        seconds: secs,
                    },
                );
            }
            Err(e) => {
                let _ = std::fs::remove_file(run.path(&format!("{stage}.json")));
                timings.insert(
                    stage,
                    Timing {
                        status: Status::Failed,
                        seconds: secs,
                    },
                );
                failed = Some((stage, e));
                break;
            }
        }
    }
    let s = summary(cfg, &run, failed.as_ref().map(|(st, e)| (*st, format!("{e:#}"))));
    let summary_path = dir.join(SUMMARY);
    let write = write_json(&summary_path, &s).and_then(|_| write_json(&dir.join(TIMINGS), &timings));
    if let Some((stage, source)) = failed {
        return Err(StageFailure {
            stage,
            source,
            summary_path,
        });
    }
    write.map_err(setup)?;
    let bytes = std::fs::read(&summary_path).unwrap_or_default();
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        summary: s,
        timings,
        summary_hash: sha256_hex(&bytes),
    })
}

/// Effective config saved in a run directory.
pub fn load_run_config(dir: &Path) -> Result<ExperimentConfig> {
    let path = dir.join(CONFIG);
    ExperimentConfig::load(&path).with_context(|| format!("{} is not a run directory", dir.display()))
}

/// The eigenvalue a summary reports, from the pipeline or the FD stage.
pub fn summary_eigenvalue(summary: &Value, key: &str) -> Option<Complex64> {
    let v = summary.get(key)?.as_array()?;
    Some(Complex64::new(v.first()?.as_f64()?, v.get(1)?.as_f64()?))
}

pub fn read_summary(dir: &Path) -> Result<Value> {
    let path = dir.join(SUMMARY);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}
