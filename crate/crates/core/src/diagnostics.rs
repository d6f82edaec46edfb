//! Nuisance statistics of a learned model: sensitivity, alignment with a
//! shift, margin and low-margin mass.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ProblemSpec};
use crate::error::{Error, Result};
use crate::model::{margins, LinearModel};
use crate::shift::ShiftSpec;

/// Default fraction of the vulnerability threshold used for the low-margin mass.
pub const DEFAULT_RHO_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceStats {
    pub tau: f64,
    pub big_m: f64,
    pub size: usize,
    pub mean_sensitivity: f64,
}

impl NuisanceStats {
    /// The model touches at least one nuisance coordinate.
    pub fn c1_ok(&self) -> bool {
        self.size >= 1
    }
}

/// Min, max and mean of `|w_i|` over the supported coordinates of
/// `nuisance_indices`. All zero when that set is empty.
pub fn nuisance_stats(model: &LinearModel, nuisance_indices: impl IntoIterator<Item = usize>) -> NuisanceStats {
    let mags: Vec<f64> = model
        .support_within(nuisance_indices.into_iter().filter(|&i| i < model.dim()))
        .into_iter()
        .map(|i| model.weights[i].abs())
        .collect();
    if mags.is_empty() {
        return NuisanceStats {
            tau: 0.0,
            big_m: 0.0,
            size: 0,
            mean_sensitivity: 0.0,
        };
    }
    let tau = mags.iter().copied().fold(f64::INFINITY, f64::min);
    let big_m = mags.iter().copied().fold(0.0, f64::max);
    // Clamp guards the ordering against rounding in the mean.
    let mean = (mags.iter().sum::<f64>() / mags.len() as f64).clamp(tau, big_m);
    NuisanceStats {
        tau,
        big_m,
        size: mags.len(),
        mean_sensitivity: mean,
    }
}

/// Tightest admissible alignment `-sum_i w_i nu_i / sum_i |w_i|` over the
/// supported nuisance coordinates.
pub fn alignment_gamma(
    model: &LinearModel,
    shift: &ShiftSpec,
    nuisance_indices: impl IntoIterator<Item = usize>,
) -> Result<f64> {
    if shift.dim() != model.dim() {
        return Err(Error::Input("shift and model dimensions differ".into()));
    }
    let support = model.support_within(nuisance_indices.into_iter().filter(|&i| i < model.dim()));
    if support.is_empty() {
        return Err(Error::Certificate("model has no nuisance support".into()));
    }
    let dot: f64 = support.iter().map(|&i| model.weights[i] * shift.mean[i]).sum();
    let l1: f64 = support.iter().map(|&i| model.weights[i].abs()).sum();
    Ok(-dot / l1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxMargin {
    pub value: f64,
    /// False when no point had a non-negative margin; `value` is then 0.
    pub any_positive: bool,
}

/// Largest margin among points with `<w, x> >= 0`.
pub fn max_positive_margin(model: &LinearModel, sample: &Dataset) -> Result<MaxMargin> {
    check_sample(model, sample)?;
    Ok(max_positive_of(&margins(model, sample.features.view())))
}

pub(crate) fn max_positive_of(ms: &[f64]) -> MaxMargin {
    let best = ms.iter().copied().filter(|&m| m >= 0.0).fold(None, |acc: Option<f64>, m| {
        Some(acc.map_or(m, |a| a.max(m)))
    });
    MaxMargin {
        value: best.unwrap_or(0.0),
        any_positive: best.is_some(),
    }
}

/// Largest, over predicted classes `s`, of the fraction of margins with
/// `0 <= s m <= c * tau * gamma_s * k_eff`.
pub fn rho_c_from_margins(ms: &[f64], c: f64, tau: f64, gamma_pos: f64, gamma_neg: f64, k_eff: usize) -> f64 {
    if ms.is_empty() {
        return 0.0;
    }
    let k = k_eff as f64;
    let frac = |s: f64, gamma: f64| {
        let cap = c * tau * gamma * k;
        ms.iter().filter(|&&m| s * m >= 0.0 && s * m <= cap).count() as f64 / ms.len() as f64
    };
    frac(1.0, gamma_pos).max(frac(-1.0, gamma_neg))
}

pub fn rho_c(
    model: &LinearModel,
    sample: &Dataset,
    c: f64,
    tau: f64,
    gamma_pos: f64,
    gamma_neg: f64,
    k_eff: usize,
) -> Result<f64> {
    check_sample(model, sample)?;
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::Parameter(format!("c must lie in [0, 1], got {c}")));
    }
    if k_eff == 0 {
        return Err(Error::Parameter("k_eff must be at least 1".into()));
    }
    Ok(rho_c_from_margins(&margins(model, sample.features.view()), c, tau, gamma_pos, gamma_neg, k_eff))
}

fn check_sample(model: &LinearModel, sample: &Dataset) -> Result<()> {
    if sample.is_empty() {
        return Err(Error::Input("empty sample".into()));
    }
    if sample.dim() != model.dim() {
        return Err(Error::Input(format!(
            "sample has {} columns, model has {}",
            sample.dim(),
            model.dim()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionFlags {
    /// Non-empty nuisance support.
    pub c1: bool,
    /// Strictly positive alignment.
    pub c2: bool,
    /// Largest positive margin at most `tau * gamma * k`.
    pub c3: bool,
}

impl ConditionFlags {
    pub fn all(&self) -> bool {
        self.c1 && self.c2 && self.c3
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub nuisance_support_size: usize,
    pub tau: f64,
    pub big_m: f64,
    pub mean_sensitivity: f64,
    /// Zero when the nuisance support is empty.
    pub gamma: f64,
    pub c_max: f64,
    pub rho: f64,
    /// Threshold fraction used for `rho`.
    pub rho_fraction: f64,
    pub sample_size: usize,
    pub any_positive: bool,
    pub conditions_ok: ConditionFlags,
}

impl ConditionReport {
    pub fn k_eff(&self) -> usize {
        self.nuisance_support_size
    }

    /// `tau * gamma * k`, the margin below which the flip bounds
    /// guarantee vulnerability.
    pub fn vulnerability_threshold(&self) -> f64 {
        self.tau * self.gamma * self.nuisance_support_size as f64
    }
}

/// Assembles all condition quantities on `sample` (normally a fresh,
/// noiseless ID sample). With a single shift the negative class sees
/// alignment `-gamma`.
pub fn check_conditions(
    model: &LinearModel,
    shift: &ShiftSpec,
    sample: &Dataset,
    spec: &ProblemSpec,
) -> Result<ConditionReport> {
    check_conditions_at(model, shift, sample, spec, DEFAULT_RHO_FRACTION)
}

pub fn check_conditions_at(
    model: &LinearModel,
    shift: &ShiftSpec,
    sample: &Dataset,
    spec: &ProblemSpec,
    c: f64,
) -> Result<ConditionReport> {
    spec.validate()?;
    check_sample(model, sample)?;
    if model.dim() != spec.total_dim || shift.dim() != spec.total_dim {
        return Err(Error::Input("model, shift and problem dimensions differ".into()));
    }
    let stats = nuisance_stats(model, spec.nuisance_indices());
    let gamma = if stats.c1_ok() {
        alignment_gamma(model, shift, spec.nuisance_indices())?
    } else {
        0.0
    };
    let ms = margins(model, sample.features.view());
    let mm = max_positive_of(&ms);
    let c1 = stats.c1_ok();
    let c2 = c1 && gamma > 0.0;
    let c3 = c2 && mm.value <= stats.tau * gamma * stats.size as f64;
    let rho = if c2 {
        rho_c_from_margins(&ms, c, stats.tau, gamma, -gamma, stats.size)
    } else {
        0.0
    };
    Ok(ConditionReport {
        nuisance_support_size: stats.size,
        tau: stats.tau,
        big_m: stats.big_m,
        mean_sensitivity: stats.mean_sensitivity,
        gamma,
        c_max: mm.value,
        rho,
        rho_fraction: c,
        sample_size: sample.len(),
        any_positive: mm.any_positive,
        conditions_ok: ConditionFlags { c1, c2, c3 },
    })
}
