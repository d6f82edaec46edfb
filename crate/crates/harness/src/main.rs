use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use wrongline::bounds::bound_report;
use wrongline::estimators::margin_cdf;
use wrongline::rng::derive_seed;
use wrongline::sample_dataset;
use wrongline_harness::plots::{emit_margin_cdf, emit_plots, PlotKind};
use wrongline_harness::prop_a1::{prop_a1_experiment, TargetNoise};
use wrongline_harness::sweep::{read_rows, run_sweep, train, ResultRow, RunPoint};
use wrongline_harness::verify::verify_bounds;
use wrongline_harness::{HarnessError, Result, SweepConfig};

const SALT_CDF: u64 = 0x6364_6600_0000;

#[derive(Parser)]
#[command(name = "wrongline", version, about = "Label noise, interpolation and out-of-distribution accuracy in linear models")]
struct Cli {
    /// JSON sweep configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Restricts every command to this seed (default: the configured seeds;
    /// single-run commands use the first one).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (overrides the configuration).
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// Picks one grid point; each value defaults to the first entry of its grid.
#[derive(clap::Args, Clone, Copy)]
struct PointArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Angle of the shift mean from `-w` in degrees; sign-aligned when omitted.
    #[arg(long)]
    angle: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a training set.
    Gen(PointArgs),
    /// Fit a model and write it as JSON.
    Train(PointArgs),
    /// Fit, build the shift and report the nuisance conditions.
    Diagnose(PointArgs),
    /// Like `diagnose`, plus the flip-probability bounds.
    Bound(PointArgs),
    /// Run the full grid and write one row per run.
    Sweep,
    /// Check the per-point bound against exact and Monte Carlo values.
    VerifyBounds,
    /// Largest nuisance weight of the minimum-norm interpolator, with and
    /// without sign noise on the targets.
    PropA1 {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 300)]
        d: usize,
        #[arg(long, default_value_t = 50)]
        seeds: u64,
        #[arg(long, default_value_t = 1.0)]
        signal_center: f64,
    },
    /// Low-margin mass against measured OOD error for one run.
    MarginCdf(PointArgs),
    /// Render figures from a sweep CSV.
    Plot {
        /// Sweep CSV; defaults to `<out>/results.csv`.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_parser = parse_kind)]
        kind: Vec<PlotKind>,
    },
}

fn parse_kind(s: &str) -> std::result::Result<PlotKind, String> {
    s.parse().map_err(|e: HarnessError| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(create(path)?, value).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    println!("{}", path.display());
    Ok(())
}

fn point(cfg: &SweepConfig, seed: Option<u64>, a: &PointArgs) -> RunPoint {
    RunPoint {
        seed: seed.unwrap_or(cfg.seeds[0]),
        n: a.n.unwrap_or(cfg.n_train_grid[0]),
        eta: a.eta.unwrap_or(cfg.noise_grid[0]),
        lambda: a.lambda.unwrap_or(cfg.lambda_grid[0]),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => SweepConfig::load(path)?,
        None => SweepConfig::default(),
    };
    if let Some(p) = cli.parallelism {
        cfg.parallelism = p;
    }
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cli.out).map_err(|e| HarnessError::Io(format!("{}: {e}", cli.out.display())))?;
    let out = |name: &str| cli.out.join(name);
    let json = cli.format == Format::Json;

    match &cli.command {
        Command::Gen(a) => {
            let p = point(&cfg, cli.seed, a);
            let data = sample_dataset(&cfg.base.with_noise_rate(p.eta), p.n, p.train_seed())?;
            if json {
                let rows: Vec<Vec<f64>> = data.features.outer_iter().map(|r| r.to_vec()).collect();
                let doc = serde_json::json!({
                    "seed": p.seed, "features": rows, "labels": data.labels,
                    "clean_labels": data.clean_labels, "noise_mask": data.noise_mask,
                });
                write_json(&out("train.json"), &doc)?;
            } else {
                data.write_csv(create(&out("train.csv"))?)?;
                println!("{}", out("train.csv").display());
            }
        }
        Command::Train(a) => {
            let run = train(&cfg, &point(&cfg, cli.seed, a))?;
            write_json(&out("model.json"), &run.model)?;
        }
        Command::Diagnose(a) | Command::Bound(a) => {
            let run = train(&cfg, &point(&cfg, cli.seed, a))?;
            let shift = run.shift(&cfg, a.angle)?;
            let report = run.conditions(&cfg, &shift)?;
            if matches!(cli.command, Command::Diagnose(_)) {
                write_json(&out("conditions.json"), &report)?;
            } else {
                write_json(&out("bounds.json"), &bound_report(&report, shift.sigma))?;
            }
        }
        Command::Sweep => {
            if json {
                let outcomes = run_sweep(&cfg, cfg.parallelism, None)?;
                write_json(&out("results.json"), &outcomes)?;
            } else {
                let path = out("results.csv");
                run_sweep(&cfg, cfg.parallelism, Some(&path))?;
                println!("{}", path.display());
            }
        }
        Command::VerifyBounds => {
            let report = verify_bounds(&cfg)?;
            eprintln!(
                "{} runs, {} triplets, {} inapplicable, {} violations",
                report.runs,
                report.triplets.len(),
                report.inapplicable.len(),
                report.violations
            );
            if json {
                write_json(&out("verify.json"), &report)?;
            } else {
                let mut w = csv::Writer::from_writer(create(&out("verify.csv"))?);
                for t in &report.triplets {
                    w.serialize(t)?;
                }
                w.flush()?;
                println!("{}", out("verify.csv").display());
            }
        }
        Command::PropA1 { n, d, seeds, signal_center } => {
            let base = cli.seed.unwrap_or(0);
            let seeds: Vec<u64> = (base..base + seeds).collect();
            let noisy = prop_a1_experiment(*n, *d, &seeds, TargetNoise::Rademacher, *signal_center)?;
            let clean = prop_a1_experiment(*n, *d, &seeds, TargetNoise::None, *signal_center)?;
            let ratio = match (noisy.median, clean.median) {
                (Some(a), Some(b)) if b > 0.0 => Some(a / b),
                _ => None,
            };
            let doc = serde_json::json!({ "noisy": noisy, "noiseless": clean, "median_ratio": ratio });
            write_json(&out("prop_a1.json"), &doc)?;
        }
        Command::MarginCdf(a) => {
            let p = point(&cfg, cli.seed, a);
            let run = train(&cfg, &p)?;
            let shift = run.shift(&cfg, a.angle)?;
            let report = run.conditions(&cfg, &shift)?;
            let cdf = margin_cdf(&run.model, &run.spec, &shift, &report, cfg.n_eval, derive_seed(p.seed, SALT_CDF))?;
            if json {
                write_json(&out("margin_cdf.json"), &cdf)?;
            } else {
                cdf.write_csv(create(&out("margin_cdf.csv"))?)?;
                write_json(&out("margin_cdf.meta.json"), &cdf.sidecar())?;
            }
            emit_margin_cdf(&cdf, &out("margin_cdf.svg"))?;
            println!("{}", out("margin_cdf.svg").display());
        }
        Command::Plot { input, kind } => {
            let path = input.clone().unwrap_or_else(|| out("results.csv"));
            let file = File::open(&path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
            let rows: Vec<ResultRow> = read_rows(file)?;
            let kinds = if kind.is_empty() {
                vec![PlotKind::IdVsOod, PlotKind::AccVsN, PlotKind::SensitivityVsN]
            } else {
                kind.clone()
            };
            for k in kinds {
                for f in emit_plots(&rows, k, &cli.out)? {
                    println!("{}", f.display());
                }
            }
        }
    }
    Ok(())
}
