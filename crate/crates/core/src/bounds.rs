//! Closed-form lower bounds on the probability that a nuisance shift flips
//! a prediction, and the exact Gaussian flip probability used to check them.

use serde::{Deserialize, Serialize};

use crate::diagnostics::ConditionReport;
use crate::error::{Error, Result};
use crate::model::{margin, LinearModel};
use crate::shift::{ShiftFamily, ShiftSpec};
use crate::stats::normal_cdf;

fn positive_finite(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Chernoff exponent `k (tau gamma - C / k)^2 / (2 sigma^2 M^2)`.
///
/// Requires `tau * gamma * k >= C`; equality gives 0.
pub fn gamma_exponent(tau: f64, gamma: f64, k_eff: usize, c_max: f64, sigma: f64, big_m: f64) -> Result<f64> {
    positive_finite("sigma", sigma)?;
    positive_finite("M", big_m)?;
    if k_eff == 0 {
        return Err(Error::Parameter("k_eff must be at least 1".into()));
    }
    let k = k_eff as f64;
    let gap = tau * gamma * k - c_max;
    if !(gap >= 0.0) {
        return Err(Error::BoundInapplicable(format!(
            "need tau*gamma*k >= C, got {:.6e} < {c_max:.6e}",
            tau * gamma * k
        )));
    }
    // k (tau gamma - C/k)^2 == gap^2 / k
    Ok(gap * gap / (k * 2.0 * sigma * sigma * big_m * big_m))
}

/// `1 - exp(-Gamma)`.
pub fn theorem1_bound(gamma_exponent: f64) -> Result<f64> {
    if !(gamma_exponent >= 0.0) {
        return Err(Error::Input(format!("exponent must be >= 0, got {gamma_exponent}")));
    }
    Ok(-(-gamma_exponent).exp_m1())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorollaryInputs {
    pub rho: f64,
    /// Mixture weights `(c_+, c_-)`.
    pub weights: (f64, f64),
    /// Per-class alignments `(gamma_+, gamma_-)`.
    pub gammas: (f64, f64),
    pub tau: f64,
    pub k_eff: usize,
    pub sigma: f64,
    pub big_m: f64,
    /// Fraction of the margin threshold defining the low-margin mass.
    pub c: f64,
}

/// `rho * sum_i c_i (1 - exp(-k tau^2 gamma_i^2 (1 - c)^2 / (2 sigma^2 M^2)))`.
pub fn corollary_bound(inp: &CorollaryInputs) -> Result<f64> {
    let (cp, cn) = inp.weights;
    if !(cp >= 0.0 && cn >= 0.0) || (cp + cn - 1.0).abs() > 1e-12 {
        return Err(Error::Input(format!("mixture weights must be non-negative and sum to 1, got ({cp}, {cn})")));
    }
    if !(0.0..=1.0).contains(&inp.rho) {
        return Err(Error::Input(format!("rho must lie in [0, 1], got {}", inp.rho)));
    }
    if !(0.0..=1.0).contains(&inp.c) {
        return Err(Error::Input(format!("c must lie in [0, 1], got {}", inp.c)));
    }
    positive_finite("sigma", inp.sigma)?;
    positive_finite("M", inp.big_m)?;
    let scale = inp.k_eff as f64 * inp.tau * inp.tau * (1.0 - inp.c).powi(2) / (2.0 * inp.sigma * inp.sigma * inp.big_m * inp.big_m);
    let term = |g: f64| -(-scale * g * g).exp_m1();
    Ok((inp.rho * (cp * term(inp.gammas.0) + cn * term(inp.gammas.1))).clamp(0.0, inp.rho))
}

/// Probability that `<w, x + delta> <= 0` for a single Gaussian shift draw:
/// `Phi((-<w,x> - <w,nu>) / (sigma ||w_free||_2))`, with `w_free` the
/// weights on the coordinates the shift can move.
pub fn exact_gaussian_flip_prob(model: &LinearModel, x: &[f64], shift: &ShiftSpec) -> Result<f64> {
    if shift.family != ShiftFamily::Gaussian {
        return Err(Error::Parameter("the exact flip probability needs a Gaussian shift".into()));
    }
    shift.validate()?;
    if shift.dim() != model.dim() {
        return Err(Error::Input("shift and model dimensions differ".into()));
    }
    let m = margin(model, x)?;
    let free = shift.free_coordinates();
    let norm = free.iter().map(|&i| model.weights[i].powi(2)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::DegenerateDistribution("model has zero weight on shiftable coordinates".into()));
    }
    let drift: f64 = free.iter().map(|&i| model.weights[i] * shift.mean[i]).sum();
    let centre = -m - drift;
    if shift.sigma == 0.0 {
        return Ok(if centre >= 0.0 { 1.0 } else { 0.0 });
    }
    Ok(normal_cdf(centre / (shift.sigma * norm)))
}

/// The printed lower bound on the nuisance sup-norm of the min-norm
/// interpolator,
/// `0.1 (1 - 2 ln(n/b1) / ((d-1)(1 - sqrt(6 b2 ln(b1/(d-1)))))) C`.
///
/// For every `b1 in (0,1)` and `d > 2` the radicand is negative, so the
/// expression is undefined on its whole stated domain and a domain error is
/// returned. `b2 = 0` is accepted so the remaining algebra stays testable.
pub fn prop_a1_bound(n: usize, d: usize, c: f64, beta1: f64, beta2: f64) -> Result<f64> {
    if d < 3 || n == 0 {
        return Err(Error::Parameter(format!("need d >= 3 and n >= 1, got d={d} n={n}")));
    }
    positive_finite("C", c)?;
    if !(beta1 > 0.0 && beta1 < 1.0) {
        return Err(Error::Parameter(format!("beta1 must lie in (0,1), got {beta1}")));
    }
    if !(0.0..1.0).contains(&beta2) {
        return Err(Error::Parameter(format!("beta2 must lie in [0,1), got {beta2}")));
    }
    let dm1 = (d - 1) as f64;
    let radicand = 6.0 * beta2 * (beta1 / dm1).ln();
    if radicand < 0.0 {
        return Err(Error::Domain(format!(
            "6*beta2*ln(beta1/(d-1)) = {radicand:.6} is negative; its square root is undefined"
        )));
    }
    let denom = dm1 * (1.0 - radicand.sqrt());
    if denom == 0.0 {
        return Err(Error::Domain("denominator (d-1)(1 - sqrt(...)) vanishes".into()));
    }
    Ok(0.1 * (1.0 - 2.0 * (n as f64 / beta1).ln() / denom) * c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundPreconditions {
    pub c1: bool,
    pub c2: bool,
    pub c3: bool,
    /// `tau * gamma * k == C` exactly, so the exponent is 0.
    pub boundary: bool,
    pub sigma_positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub tau: f64,
    pub gamma: f64,
    pub k_eff: usize,
    pub c_max: f64,
    pub sigma: f64,
    pub big_m: f64,
    pub rho: f64,
    pub c: f64,
    pub mixture_weights: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub gamma_exponent: Option<f64>,
    pub theorem1_lower: Option<f64>,
    pub corollary_lower: Option<f64>,
    pub preconditions_met: BoundPreconditions,
    pub inputs_echo: BoundInputs,
    /// Why a bound is missing, if one is.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Evaluates both bounds from a condition report. With a single shift the
/// whole mixture weight sits on the positively classified side, where the
/// shift pushes towards the boundary.
pub fn bound_report(report: &ConditionReport, sigma: f64) -> BoundReport {
    let flags = report.conditions_ok;
    let k = report.nuisance_support_size;
    let weights = (1.0, 0.0);
    let inputs_echo = BoundInputs {
        tau: report.tau,
        gamma: report.gamma,
        k_eff: k,
        c_max: report.c_max,
        sigma,
        big_m: report.big_m,
        rho: report.rho,
        c: report.rho_fraction,
        mixture_weights: weights,
    };
    let mut pre = BoundPreconditions {
        c1: flags.c1,
        c2: flags.c2,
        c3: flags.c3,
        boundary: false,
        sigma_positive: sigma > 0.0,
    };
    let mut reason = None;
    let mut note = |r: String| {
        if reason.is_none() {
            reason = Some(r);
        }
    };

    let mut gamma_exp = None;
    let mut thm1 = None;
    if !(flags.c1 && flags.c2) {
        note("no nuisance support with positive alignment".into());
    } else {
        match gamma_exponent(report.tau, report.gamma, k, report.c_max, sigma, report.big_m) {
            Ok(g) => {
                pre.boundary = report.tau * report.gamma * k as f64 == report.c_max;
                gamma_exp = Some(g);
                thm1 = theorem1_bound(g).ok();
            }
            Err(e) => note(e.to_string()),
        }
    }

    let corollary = if flags.c1 && flags.c2 {
        corollary_bound(&CorollaryInputs {
            rho: report.rho,
            weights,
            gammas: (report.gamma, -report.gamma),
            tau: report.tau,
            k_eff: k,
            sigma,
            big_m: report.big_m,
            c: report.rho_fraction,
        })
        .map_err(|e| note(e.to_string()))
        .ok()
    } else {
        None
    };

    BoundReport {
        gamma_exponent: gamma_exp,
        theorem1_lower: thm1,
        corollary_lower: corollary,
        preconditions_met: pre,
        inputs_echo,
        reason,
    }
}
