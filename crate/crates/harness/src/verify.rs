//! Checks the per-point flip-probability bound against the exact Gaussian
//! value and a Monte Carlo estimate on every run of a sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wrongline::bounds::{exact_gaussian_flip_prob, gamma_exponent, theorem1_bound};
use wrongline::data::sample_dataset;
use wrongline::estimators::mc_flip_prob;
use wrongline::model::margins;
use wrongline::rng::derive_seed;
use wrongline::shift::ShiftFamily;

use crate::config::SweepConfig;
use crate::error::{HarnessError, Result};
use crate::sweep::{grid_points, train, RunPoint};

const SALT_PANEL: u64 = 0x7061_6e65_6c00;
const SALT_MC: u64 = 0x6d63_0000_0000;

/// Slack allowed between the bound and the exact probability.
pub const EXACT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub seed: u64,
    pub n: usize,
    pub eta: f64,
    pub lambda: f64,
    pub angle: Option<f64>,
    pub margin: f64,
    pub thm1_lower: f64,
    pub exact: f64,
    pub mc: f64,
    pub mc_std_error: f64,
    pub violation: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub runs: usize,
    /// Runs where the bound could not be evaluated, with the reason.
    pub inapplicable: Vec<String>,
    pub triplets: Vec<Triplet>,
    pub violations: usize,
    pub no_violation: bool,
}

/// Whether a triplet breaks the bound beyond numerical and sampling slack.
pub fn is_violation(thm1: f64, exact: f64, mc: f64, mc_se: f64) -> bool {
    thm1 > exact + EXACT_SLACK || thm1 > mc + 3.0 * mc_se
}

/// For each run of `cfg`, takes the `panel_size` positively classified
/// fresh points with the smallest margins, sets `C` to the largest of
/// their margins, and compares the resulting bound with the exact and
/// Monte Carlo flip probabilities of each panel point.
pub fn verify_bounds(cfg: &SweepConfig) -> Result<VerifyReport> {
    cfg.validate()?;
    let jobs: Vec<(RunPoint, Option<f64>)> = grid_points(cfg)
        .into_iter()
        .flat_map(|p| cfg.angles().into_iter().map(move |a| (p, a)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let parts: Vec<Result<(Vec<Triplet>, Option<String>)>> =
        pool.install(|| jobs.par_iter().map(|(p, a)| verify_run(cfg, p, *a)).collect());

    let mut report = VerifyReport {
        runs: jobs.len(),
        ..VerifyReport::default()
    };
    for part in parts {
        let (triplets, skipped) = part?;
        report.triplets.extend(triplets);
        report.inapplicable.extend(skipped);
    }
    report.violations = report.triplets.iter().filter(|t| t.violation).count();
    report.no_violation = report.violations == 0;
    Ok(report)
}

fn verify_run(cfg: &SweepConfig, point: &RunPoint, angle: Option<f64>) -> Result<(Vec<Triplet>, Option<String>)> {
    let label = format!("seed={} n={} eta={} lambda={} angle={angle:?}", point.seed, point.n, point.eta, point.lambda);
    let skip = |why: String| Ok((Vec::new(), Some(format!("{label}: {why}"))));
    let run = match train(cfg, point) {
        Ok(r) => r,
        Err(HarnessError::Numerical(e)) => return skip(format!("fit failed: {e}")),
        Err(e) => return Err(e),
    };
    let shift = match run.shift(cfg, angle) {
        Ok(s) if s.family == ShiftFamily::Gaussian && s.sigma > 0.0 => s,
        Ok(_) => return skip("the exact oracle needs a Gaussian shift with sigma > 0".into()),
        Err(e) => return skip(format!("shift: {e}")),
    };
    let report = match run.conditions(cfg, &shift) {
        Ok(r) => r,
        Err(e) => return skip(format!("conditions: {e}")),
    };
    if !(report.conditions_ok.c1 && report.conditions_ok.c2) {
        return skip("no nuisance support with positive alignment".into());
    }

    let clean = run.spec.with_noise_rate(0.0);
    let panel_n = (cfg.panel_size * 50).max(1000);
    let sample = sample_dataset(&clean, panel_n, derive_seed(point.seed, SALT_PANEL))?;
    let ms = margins(&run.model, sample.features.view());
    let mut order: Vec<usize> = (0..ms.len()).filter(|&i| ms[i] >= 0.0).collect();
    order.sort_by(|&a, &b| ms[a].total_cmp(&ms[b]));
    order.truncate(cfg.panel_size);
    let Some(&last) = order.last() else {
        return skip("no positively classified panel points".into());
    };
    let c_panel = ms[last];
    let k = report.nuisance_support_size;
    let g = match gamma_exponent(report.tau, report.gamma, k, c_panel, shift.sigma, report.big_m) {
        Ok(g) => g,
        Err(e) => return skip(e.to_string()),
    };
    let thm1 = theorem1_bound(g)?;

    let mut triplets = Vec::with_capacity(order.len());
    for (j, &i) in order.iter().enumerate() {
        let x = sample.features.row(i).to_vec();
        let exact = exact_gaussian_flip_prob(&run.model, &x, &shift)?;
        let mc = mc_flip_prob(&run.model, &x, &shift, cfg.mc_samples, derive_seed(point.seed ^ SALT_MC, j as u64))?;
        triplets.push(Triplet {
            seed: point.seed,
            n: point.n,
            eta: point.eta,
            lambda: point.lambda,
            angle,
            margin: ms[i],
            thm1_lower: thm1,
            exact,
            mc: mc.value,
            mc_std_error: mc.std_error,
            violation: is_violation(thm1, exact, mc.value, mc.std_error),
        });
    }
    Ok((triplets, None))
}
