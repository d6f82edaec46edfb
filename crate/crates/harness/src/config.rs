use std::path::Path;

use serde::{Deserialize, Serialize};
use wrongline::trainers::L1Options;
use wrongline::ProblemSpec;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trainer {
    L1Logistic,
    MinL2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    /// Mean `-magnitude * sgn(w_i)` on the nuisance support.
    SignAligned,
    /// Fixed-norm mean at each angle of `angle_grid_deg` from `-w`.
    Angled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub base: ProblemSpec,
    pub n_train_grid: Vec<usize>,
    pub noise_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    /// The penalty actually used is `lambda * (lambda_reference_n / n)^lambda_exponent`;
    /// an exponent of 0 keeps it constant across training-set sizes.
    pub lambda_reference_n: usize,
    pub lambda_exponent: f64,
    pub angle_grid_deg: Vec<f64>,
    pub seeds: Vec<u64>,
    pub shift_kind: ShiftKind,
    pub shift_magnitude: f64,
    pub shift_variance: f64,
    /// Norm of the angled shift mean; defaults to `shift_magnitude * sqrt(k)`,
    /// the norm of the sign-aligned shift for the same model.
    pub angle_norm: Option<f64>,
    pub trainer: Trainer,
    pub solver: L1Options,
    /// Points per ID / OOD accuracy estimate.
    pub n_eval: usize,
    /// Points used for the margin and low-margin mass.
    pub condition_sample: usize,
    /// Shift draws per Monte Carlo flip probability.
    pub mc_samples: usize,
    /// Low-margin test points checked per run by `verify-bounds`.
    pub panel_size: usize,
    pub parallelism: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            base: ProblemSpec::default(),
            n_train_grid: (1..=10).map(|i| i * 100).collect(),
            noise_grid: vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.25],
            lambda_grid: vec![0.0125],
            lambda_reference_n: 300,
            lambda_exponent: 0.65,
            angle_grid_deg: vec![0.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0],
            seeds: (0..10).collect(),
            shift_kind: ShiftKind::SignAligned,
            shift_magnitude: 0.25,
            shift_variance: 1e-3,
            angle_norm: None,
            trainer: Trainer::L1Logistic,
            solver: L1Options::default(),
            n_eval: 10_000,
            condition_sample: 10_000,
            mc_samples: 100_000,
            panel_size: 20,
            parallelism: 1,
        }
    }
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.base.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.n_train_grid.is_empty() || self.noise_grid.is_empty() || self.lambda_grid.is_empty() || self.seeds.is_empty() {
            return bad("n_train_grid, noise_grid, lambda_grid and seeds must be non-empty".into());
        }
        if self.shift_kind == ShiftKind::Angled && self.angle_grid_deg.is_empty() {
            return bad("angle_grid_deg must be non-empty for angled shifts".into());
        }
        if let Some(eta) = self.noise_grid.iter().find(|e| !(0.0..=0.5).contains(*e)) {
            return bad(format!("noise rate {eta} outside [0, 0.5]"));
        }
        if self.n_train_grid.contains(&0) {
            return bad("training sizes must be positive".into());
        }
        if let Some(l) = self.lambda_grid.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return bad(format!("lambda {l} must be positive"));
        }
        if let Some(a) = self.angle_grid_deg.iter().find(|a| !(0.0..=90.0).contains(*a)) {
            return bad(format!("angle {a} outside [0, 90]"));
        }
        if self.lambda_reference_n == 0 || !self.lambda_exponent.is_finite() {
            return bad("lambda_reference_n must be positive and lambda_exponent finite".into());
        }
        if !(self.shift_variance >= 0.0) || !self.shift_magnitude.is_finite() {
            return bad("shift_variance must be >= 0 and shift_magnitude finite".into());
        }
        if self.n_eval == 0 || self.condition_sample == 0 || self.mc_samples == 0 || self.parallelism == 0 {
            return bad("n_eval, condition_sample, mc_samples and parallelism must be positive".into());
        }
        Ok(())
    }

    /// Penalty used for a training set of size `n`.
    pub fn effective_lambda(&self, lambda: f64, n: usize) -> f64 {
        lambda * (self.lambda_reference_n as f64 / n as f64).powf(self.lambda_exponent)
    }

    /// Angles to evaluate per trained model; `None` stands for the
    /// sign-aligned shift.
    pub fn angles(&self) -> Vec<Option<f64>> {
        match self.shift_kind {
            ShiftKind::SignAligned => vec![None],
            ShiftKind::Angled => self.angle_grid_deg.iter().copied().map(Some).collect(),
        }
    }
}
