//! One pipeline run per grid point, and the parallel sweep over the grid.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wrongline::bounds::bound_report;
use wrongline::diagnostics::{check_conditions, ConditionReport};
use wrongline::estimators::mc_accuracy;
use wrongline::rng::derive_seed;
use wrongline::shift::ShiftFamily;
use wrongline::trainers::{fit_l1_logistic, fit_min_l2};
use wrongline::{make_angled_shift, make_paper_shift, sample_dataset, Dataset, Error, LinearModel, ProblemSpec, ShiftSpec};

use crate::config::{SweepConfig, Trainer};
use crate::error::{HarnessError, Result};

// Salts separating the random streams of one run.
const SALT_TRAIN: u64 = 0x7472_6169_6e00;
const SALT_EVAL: u64 = 0x6576_616c_0000;
const SALT_CONDITIONS: u64 = 0x636f_6e64_0000;
const SALT_ANGLE: u64 = 0x616e_676c_6500;

/// One grid point: everything that identifies a trained model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunPoint {
    pub seed: u64,
    pub n: usize,
    pub eta: f64,
    pub lambda: f64,
}

impl RunPoint {
    /// Training data depend on the seed only, so runs that differ in `n`
    /// or `eta` share their points (smaller sets are prefixes) and their
    /// noise draws.
    pub fn train_seed(&self) -> u64 {
        derive_seed(self.seed, SALT_TRAIN)
    }

    /// Every model of the same seed is evaluated on the same points.
    pub fn eval_seed(&self) -> u64 {
        derive_seed(self.seed, SALT_EVAL)
    }

    pub fn conditions_seed(&self) -> u64 {
        derive_seed(self.seed, SALT_CONDITIONS)
    }

    pub fn angle_seed(&self) -> u64 {
        derive_seed(self.seed, SALT_ANGLE)
    }
}

/// One line of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub seed: u64,
    pub n: usize,
    pub eta: f64,
    pub lambda: f64,
    pub angle: Option<f64>,
    pub train_error: Option<f64>,
    pub interpolating: Option<bool>,
    pub id_acc: Option<f64>,
    pub ood_acc: Option<f64>,
    pub tau: Option<f64>,
    pub big_m: Option<f64>,
    pub mean_sensitivity: Option<f64>,
    pub gamma: Option<f64>,
    pub c_max: Option<f64>,
    pub rho: Option<f64>,
    pub k_eff: Option<usize>,
    #[serde(rename = "Gamma")]
    pub gamma_exponent: Option<f64>,
    pub thm1_lower: Option<f64>,
    pub corollary_lower: Option<f64>,
    pub c1_ok: Option<bool>,
    pub c2_ok: Option<bool>,
    pub c3_ok: Option<bool>,
}

pub const CSV_HEADER: &str = "seed,n,eta,lambda,angle,train_error,interpolating,id_acc,ood_acc,tau,big_m,mean_sensitivity,gamma,c_max,rho,k_eff,Gamma,thm1_lower,corollary_lower,c1_ok,c2_ok,c3_ok";

impl ResultRow {
    fn empty(point: &RunPoint, angle: Option<f64>) -> Self {
        Self {
            seed: point.seed,
            n: point.n,
            eta: point.eta,
            lambda: point.lambda,
            angle,
            train_error: None,
            interpolating: None,
            id_acc: None,
            ood_acc: None,
            tau: None,
            big_m: None,
            mean_sensitivity: None,
            gamma: None,
            c_max: None,
            rho: None,
            k_eff: None,
            gamma_exponent: None,
            thm1_lower: None,
            corollary_lower: None,
            c1_ok: None,
            c2_ok: None,
            c3_ok: None,
        }
    }

    fn sort_key(&self) -> (f64, usize, f64, f64, u64) {
        (self.eta, self.n, self.lambda, self.angle.unwrap_or(-1.0), self.seed)
    }
}

/// A row plus the reasons any of its cells are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub row: ResultRow,
    pub notes: Vec<String>,
}

/// A fitted model with the data it was fitted on.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub point: RunPoint,
    pub spec: ProblemSpec,
    pub train: Dataset,
    pub model: LinearModel,
}

pub fn train(cfg: &SweepConfig, point: &RunPoint) -> Result<TrainedRun> {
    let spec = cfg.base.with_noise_rate(point.eta);
    let train = sample_dataset(&spec, point.n, point.train_seed())?;
    let model = match cfg.trainer {
        Trainer::L1Logistic => fit_l1_logistic(
            train.features.view(),
            &train.labels,
            cfg.effective_lambda(point.lambda, point.n),
            &cfg.solver,
        )?,
        Trainer::MinL2 => fit_min_l2(train.features.view(), &train.labels_f64())?,
    };
    Ok(TrainedRun {
        point: *point,
        spec,
        train,
        model,
    })
}

impl TrainedRun {
    /// The shift for `angle` (`None`: sign-aligned). A model without
    /// nuisance support gets the zero-mean shift, which is what the
    /// sign-aligned construction yields with `sgn(0) = 0`.
    pub fn shift(&self, cfg: &SweepConfig, angle: Option<f64>) -> std::result::Result<ShiftSpec, Error> {
        let made = match angle {
            None => make_paper_shift(&self.model, cfg.shift_magnitude, cfg.shift_variance, &self.spec),
            Some(theta) => {
                let k = self.model.support_within(self.spec.nuisance_indices()).len();
                let norm = cfg.angle_norm.unwrap_or(cfg.shift_magnitude * (k as f64).sqrt());
                make_angled_shift(&self.model, theta, norm, cfg.shift_variance, &self.spec, self.point.angle_seed())
            }
        };
        match made {
            Err(Error::Certificate(_)) => Ok(ShiftSpec {
                mean: vec![0.0; self.spec.total_dim],
                sigma: cfg.shift_variance.sqrt(),
                family: ShiftFamily::Gaussian,
                signal_support: self.spec.signal_indices().collect(),
            }),
            other => other,
        }
    }

    pub fn conditions(&self, cfg: &SweepConfig, shift: &ShiftSpec) -> std::result::Result<ConditionReport, Error> {
        let clean = self.spec.with_noise_rate(0.0);
        let sample = sample_dataset(&clean, cfg.condition_sample, self.point.conditions_seed())?;
        check_conditions(&self.model, shift, &sample, &self.spec)
    }
}

/// Runs the full pipeline for one grid point, one row per angle. Only
/// configuration errors are returned as errors; numerical failures leave
/// empty cells and a note.
pub fn run_single(cfg: &SweepConfig, point: &RunPoint) -> Result<Vec<RunOutcome>> {
    let angles = cfg.angles();
    let run = match train(cfg, point) {
        Ok(run) => run,
        Err(HarnessError::Numerical(msg)) => {
            return Ok(angles
                .into_iter()
                .map(|a| RunOutcome {
                    row: ResultRow::empty(point, a),
                    notes: vec![format!("fit failed: {msg}")],
                })
                .collect());
        }
        Err(e) => return Err(e),
    };
    let id = mc_accuracy(&run.model, &run.spec, None, cfg.n_eval, point.eval_seed())?;

    let mut out = Vec::with_capacity(angles.len());
    for angle in angles {
        let mut row = ResultRow::empty(point, angle);
        let mut notes = Vec::new();
        row.train_error = Some(run.model.train_error);
        row.interpolating = Some(run.model.interpolating);
        row.id_acc = Some(id.value);
        if run.model.solver_meta.get("converged") == Some(&serde_json::Value::Bool(false)) {
            notes.push("solver did not reach its tolerance".into());
        }
        match run.shift(cfg, angle) {
            Ok(shift) => {
                row.ood_acc = Some(mc_accuracy(&run.model, &run.spec, Some(&shift), cfg.n_eval, point.eval_seed())?.value);
                match run.conditions(cfg, &shift) {
                    Ok(rep) => fill_conditions(&mut row, &mut notes, &rep, shift.sigma),
                    Err(e) => notes.push(format!("conditions: {e}")),
                }
            }
            Err(e) => notes.push(format!("shift: {e}")),
        }
        out.push(RunOutcome { row, notes });
    }
    Ok(out)
}

fn fill_conditions(row: &mut ResultRow, notes: &mut Vec<String>, rep: &ConditionReport, sigma: f64) {
    let flags = rep.conditions_ok;
    row.k_eff = Some(rep.nuisance_support_size);
    row.c1_ok = Some(flags.c1);
    row.c2_ok = Some(flags.c2);
    row.c3_ok = Some(flags.c3);
    row.c_max = Some(rep.c_max);
    if flags.c1 {
        row.tau = Some(rep.tau);
        row.big_m = Some(rep.big_m);
        row.mean_sensitivity = Some(rep.mean_sensitivity);
        row.gamma = Some(rep.gamma);
        row.rho = Some(rep.rho);
    }
    let bounds = bound_report(rep, sigma);
    row.gamma_exponent = bounds.gamma_exponent;
    row.thm1_lower = bounds.theorem1_lower;
    row.corollary_lower = bounds.corollary_lower;
    if let Some(reason) = bounds.reason {
        notes.push(format!("bounds: {reason}"));
    }
}

pub fn grid_points(cfg: &SweepConfig) -> Vec<RunPoint> {
    let mut points = Vec::new();
    for &eta in &cfg.noise_grid {
        for &n in &cfg.n_train_grid {
            for &lambda in &cfg.lambda_grid {
                for &seed in &cfg.seeds {
                    points.push(RunPoint { seed, n, eta, lambda });
                }
            }
        }
    }
    points
}

/// Runs every grid point on `parallelism` threads and returns the outcomes
/// sorted by `(eta, n, lambda, angle, seed)`. When `out` is given the CSV
/// is written there; the file is created before any computation starts.
pub fn run_sweep(cfg: &SweepConfig, parallelism: usize, out: Option<&Path>) -> Result<Vec<RunOutcome>> {
    cfg.validate()?;
    let file = match out {
        Some(path) => Some(File::create(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?),
        None => None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let points = grid_points(cfg);
    let nested: Vec<Result<Vec<RunOutcome>>> = pool.install(|| points.par_iter().map(|p| run_single(cfg, p)).collect());
    let mut outcomes = Vec::new();
    for r in nested {
        outcomes.extend(r?);
    }
    outcomes.sort_by(|a, b| a.row.sort_key().partial_cmp(&b.row.sort_key()).expect("finite keys"));
    for o in outcomes.iter().filter(|o| !o.notes.is_empty()) {
        log::info!("seed={} n={} eta={} angle={:?}: {}", o.row.seed, o.row.n, o.row.eta, o.row.angle, o.notes.join("; "));
    }
    if let Some(f) = file {
        let rows: Vec<&ResultRow> = outcomes.iter().map(|o| &o.row).collect();
        write_rows(f, rows)?;
    }
    Ok(outcomes)
}

pub fn write_rows<'a, W: Write>(writer: W, rows: impl IntoIterator<Item = &'a ResultRow>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(CSV_HEADER.split(','))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(reader: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    for col in CSV_HEADER.split(',') {
        if !headers.iter().any(|h| h == col) {
            return Err(HarnessError::Schema(format!("missing column `{col}`")));
        }
    }
    r.deserialize().map(|row| row.map_err(HarnessError::from)).collect()
}
