use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use skoeig::config::{ExperimentConfig, Stage};
use skoeig::pipeline::{self, summary_eigenvalue};
use skoeig::{plot, presets, validate};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "skoeig", version, about = "Koopman and Fokker-Planck eigenpairs of stochastic oscillators")]
#[command(after_help = "Worker threads: set SKOEIG_WORKERS (defaults to the available cores).")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured pipeline stages.
    Run {
        /// Config file or bundled preset name.
        #[arg(long)]
        config: String,
        /// Run only these stages (repeatable); others must already be up to date.
        #[arg(long = "stage", value_parser = parse_stage)]
        stages: Vec<Stage>,
        /// Override the run seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Use the full trajectory counts of the config's `paper_scale` section.
        #[arg(long)]
        paper_scale: bool,
        /// Run directory (default `runs/<name>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write plot-ready CSV bundles from a finished run.
    EmitPlotData {
        /// Run directory.
        run: PathBuf,
        /// `trace`, `heatmap`, `phase` or `all`.
        #[arg(long, default_value = "all")]
        figure: String,
        /// Output directory (default `<run>/plots`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a run with a reference run, typically a finite-difference one.
    Validate {
        /// Run directory.
        run: PathBuf,
        /// Reference run directory.
        reference: PathBuf,
        /// Compare only where the reference stationary density exceeds this
        /// fraction of its maximum.
        #[arg(long, default_value_t = 0.1)]
        density_floor: f64,
        /// Compare runs on different models, domains or kinds.
        #[arg(long)]
        force: bool,
        /// Report file (default `<run>/validation.json`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the bundled presets.
    ListPresets,
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    Stage::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
        format!("unknown stage `{s}`; expected one of {}", names.join(", "))
    })
}

fn load(spec: &str, seed: Option<u64>, paper_scale: bool) -> Result<ExperimentConfig> {
    let mut cfg = presets::resolve(spec)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if paper_scale {
        cfg.apply_paper_scale();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_lambda(label: &str, s: &serde_json::Value, key: &str) {
    if let Some(l) = summary_eigenvalue(s, key) {
        println!("{label}: {:.6} {:+.6}i", l.re, l.im);
    }
}

fn run(spec: &str, stages: &[Stage], seed: Option<u64>, paper_scale: bool, out: Option<&Path>) -> Result<ExitCode> {
    let cfg = load(spec, seed, paper_scale)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| Path::new("runs").join(&cfg.name));
    let only = (!stages.is_empty()).then_some(stages);
    match pipeline::run(&cfg, &dir, only) {
        Ok(o) => {
            for (stage, t) in &o.timings {
                println!("{:<14} {:<8} {:>9.2} s", stage.name(), format!("{:?}", t.status).to_lowercase(), t.seconds);
            }
            print_lambda("eigenvalue", &o.summary, "eigenvalue");
            print_lambda("fd eigenvalue", &o.summary, "fd_eigenvalue");
            println!("summary: {} (sha256 {})", o.dir.join(pipeline::SUMMARY).display(), o.summary_hash);
            Ok(ExitCode::SUCCESS)
        }
        Err(f) => {
            eprintln!("error: {f}");
            eprintln!("summary: {}", f.summary_path.display());
            // exit codes 10.. name the failing stage
            Ok(ExitCode::from(10 + Stage::ALL.iter().position(|&s| s == f.stage).unwrap_or(0) as u8))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run {
            config,
            stages,
            seed,
            paper_scale,
            out,
        } => run(&config, &stages, seed, paper_scale, out.as_deref()),
        Command::EmitPlotData { run, figure, out } => (|| {
            let cfg = pipeline::load_run_config(&run)?;
            let out = out.unwrap_or_else(|| run.join("plots"));
            for p in plot::emit(&cfg, &run, &figure, &out)? {
                println!("{}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        })(),
        Command::Validate {
            run,
            reference,
            density_floor,
            force,
            out,
        } => (|| {
            if !(0.0..1.0).contains(&density_floor) {
                bail!("--density-floor must lie in [0, 1)");
            }
            let report = validate::compare(&run, &reference, density_floor, force)?;
            let text = serde_json::to_string_pretty(&report)? + "\n";
            let out = out.unwrap_or_else(|| run.join("validation.json"));
            std::fs::write(&out, &text).with_context(|| format!("writing {}", out.display()))?;
            print!("{text}");
            Ok(ExitCode::SUCCESS)
        })(),
        Command::ListPresets => {
            for (name, _) in presets::PRESETS {
                let desc = presets::preset(name)
                    .and_then(|c| c.ok())
                    .map(|c| c.description)
                    .unwrap_or_default();
                println!("{name:<24} {desc}");
            }
            Ok(ExitCode::SUCCESS)
        }
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
