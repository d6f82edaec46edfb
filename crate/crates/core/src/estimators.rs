//! Monte Carlo estimates of accuracy and flip probabilities, and the
//! margin CDF comparison.
//!
//! All loops run over fixed-size chunks whose random streams are derived
//! from the master seed and the chunk index, and only integer counts are
//! combined, so results do not depend on the number of worker threads.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_points, ProblemSpec};
use crate::diagnostics::ConditionReport;
use crate::error::{Error, Result};
use crate::model::{margin, margins, sign, LinearModel};
use crate::rng::{block_stream, Purpose, BLOCK_ROWS};
use crate::shift::ShiftSpec;

/// Rows per parallel work item.
const CHUNK_ROWS: usize = 4 * BLOCK_ROWS;
/// Shift draws per parallel work item.
const CHUNK_DRAWS: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyEstimate {
    pub value: f64,
    pub n_samples: usize,
    /// `sqrt(p (1 - p) / n)`.
    pub std_error: f64,
    pub seed: u64,
}

impl AccuracyEstimate {
    pub fn from_count(hits: usize, n: usize, seed: u64) -> Self {
        let p = hits as f64 / n as f64;
        Self {
            value: p,
            n_samples: n,
            std_error: (p * (1.0 - p) / n as f64).sqrt(),
            seed,
        }
    }
}

fn chunks(n: usize, size: usize) -> impl IndexedParallelIterator<Item = std::ops::Range<usize>> {
    (0..n.div_ceil(size)).into_par_iter().map(move |c| c * size..((c + 1) * size).min(n))
}

fn check_model(model: &LinearModel, spec: &ProblemSpec, shift: Option<&ShiftSpec>) -> Result<()> {
    spec.validate()?;
    if model.dim() != spec.total_dim {
        return Err(Error::Input(format!(
            "model has {} weights, problem has {} coordinates",
            model.dim(),
            spec.total_dim
        )));
    }
    if let Some(s) = shift {
        s.validate()?;
        if s.dim() != spec.total_dim {
            return Err(Error::Input("shift and problem dimensions differ".into()));
        }
    }
    Ok(())
}

/// Accuracy against clean labels on `n` fresh noiseless points, each
/// perturbed by an independent shift draw when `shift` is given.
pub fn mc_accuracy(
    model: &LinearModel,
    spec: &ProblemSpec,
    shift: Option<&ShiftSpec>,
    n: usize,
    seed: u64,
) -> Result<AccuracyEstimate> {
    check_model(model, spec, shift)?;
    if n == 0 {
        return Err(Error::Parameter("n must be at least 1".into()));
    }
    let hits: usize = chunks(n, CHUNK_ROWS)
        .map(|rows| {
            let (mut x, y) = sample_points(spec, seed, rows.clone());
            if let Some(s) = shift {
                s.perturb_rows(&mut x, seed, rows);
            }
            margins(model, x.view())
                .iter()
                .zip(&y)
                .filter(|(&m, &yi)| sign(m) == yi)
                .count()
        })
        .sum();
    Ok(AccuracyEstimate::from_count(hits, n, seed))
}

/// Fraction of fresh ID points whose predicted label changes once a shift
/// draw is added.
pub fn mc_prediction_change(
    model: &LinearModel,
    spec: &ProblemSpec,
    shift: &ShiftSpec,
    n: usize,
    seed: u64,
) -> Result<AccuracyEstimate> {
    check_model(model, spec, Some(shift))?;
    if n == 0 {
        return Err(Error::Parameter("n must be at least 1".into()));
    }
    let hits: usize = chunks(n, CHUNK_ROWS)
        .map(|rows| {
            let (mut x, _) = sample_points(spec, seed, rows.clone());
            let before = margins(model, x.view());
            shift.perturb_rows(&mut x, seed, rows);
            let after = margins(model, x.view());
            before.iter().zip(&after).filter(|(&a, &b)| sign(a) != sign(b)).count()
        })
        .sum();
    Ok(AccuracyEstimate::from_count(hits, n, seed))
}

/// Fraction of `m` shift draws with `<w, x + delta> <= 0`, for a point `x`
/// the model classifies positively. Only coordinates that carry weight are
/// drawn, which leaves the distribution of `<w, delta>` unchanged.
pub fn mc_flip_prob(model: &LinearModel, x: &[f64], shift: &ShiftSpec, m: usize, seed: u64) -> Result<AccuracyEstimate> {
    shift.validate()?;
    if shift.dim() != model.dim() {
        return Err(Error::Input("shift and model dimensions differ".into()));
    }
    if m == 0 {
        return Err(Error::Parameter("m must be at least 1".into()));
    }
    let base = margin(model, x)?;
    if base < 0.0 {
        return Err(Error::Precondition(format!("point is classified negatively (margin {base})")));
    }
    let active: Vec<(usize, f64)> = shift
        .free_coordinates()
        .into_iter()
        .filter(|&i| model.weights[i] != 0.0)
        .map(|i| (i, model.weights[i]))
        .collect();
    let hits: usize = chunks(m, CHUNK_DRAWS)
        .map(|draws| {
            let mut rng = block_stream(seed, Purpose::FlipProbability, (draws.start / CHUNK_DRAWS) as u64);
            draws
                .filter(|_| {
                    let moved: f64 = active.iter().map(|&(i, w)| w * shift.draw_coordinate(i, &mut rng)).sum();
                    base + moved <= 0.0
                })
                .count()
        })
        .sum();
    Ok(AccuracyEstimate::from_count(hits, m, seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginCdf {
    /// Margins of positively classified points, ascending.
    pub sorted_margins: Vec<f64>,
    /// `tau * gamma * k`.
    pub threshold: f64,
    /// Empirical CDF of `sorted_margins` at `threshold`.
    pub predicted_vulnerable_fraction: f64,
    /// `mean_sensitivity * gamma * k`, i.e. the mean drift `-<w, nu>`.
    pub mean_threshold: f64,
    pub mean_predicted_fraction: f64,
    /// OOD error against clean labels over all points.
    pub empirical_ood_error: f64,
    /// OOD error restricted to points the model classifies positively
    /// before the shift.
    pub positive_ood_error: f64,
    pub n_samples: usize,
}

impl MarginCdf {
    pub fn cdf_at(&self, t: f64) -> f64 {
        if self.sorted_margins.is_empty() {
            return 0.0;
        }
        self.sorted_margins.partition_point(|&m| m <= t) as f64 / self.sorted_margins.len() as f64
    }

    /// Writes `margin,cumulative_fraction` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["margin", "cumulative_fraction"])?;
        let len = self.sorted_margins.len() as f64;
        for (i, m) in self.sorted_margins.iter().enumerate() {
            w.write_record([m.to_string(), ((i + 1) as f64 / len).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Summary without the margins, for a JSON sidecar.
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "threshold": self.threshold,
            "predicted_vulnerable_fraction": self.predicted_vulnerable_fraction,
            "mean_threshold": self.mean_threshold,
            "mean_predicted_fraction": self.mean_predicted_fraction,
            "empirical_ood_error": self.empirical_ood_error,
            "positive_ood_error": self.positive_ood_error,
            "n_samples": self.n_samples,
            "n_positive": self.sorted_margins.len(),
        })
    }
}

/// Compares the mass of low-margin positively classified points with the
/// OOD error actually incurred under `shift`, on `n` fresh points.
pub fn margin_cdf(
    model: &LinearModel,
    spec: &ProblemSpec,
    shift: &ShiftSpec,
    report: &ConditionReport,
    n: usize,
    seed: u64,
) -> Result<MarginCdf> {
    check_model(model, spec, Some(shift))?;
    if !(report.conditions_ok.c1 && report.conditions_ok.c2) {
        return Err(Error::Precondition("margin CDF needs nuisance support with positive alignment".into()));
    }
    if n == 0 {
        return Err(Error::Parameter("n must be at least 1".into()));
    }
    // Per chunk: positive margins, total errors, errors among positives.
    let parts: Vec<(Vec<f64>, usize, usize)> = chunks(n, CHUNK_ROWS)
        .map(|rows| {
            let (mut x, y) = sample_points(spec, seed, rows.clone());
            let before = margins(model, x.view());
            shift.perturb_rows(&mut x, seed, rows);
            let after = margins(model, x.view());
            let mut pos = Vec::new();
            let (mut wrong, mut wrong_pos) = (0, 0);
            for ((&b, &a), &yi) in before.iter().zip(&after).zip(&y) {
                let miss = sign(a) != yi;
                wrong += usize::from(miss);
                if b >= 0.0 {
                    pos.push(b);
                    wrong_pos += usize::from(miss);
                }
            }
            (pos, wrong, wrong_pos)
        })
        .collect();
    let mut sorted = Vec::new();
    let (mut wrong, mut wrong_pos) = (0, 0);
    for (p, w, wp) in parts {
        sorted.extend(p);
        wrong += w;
        wrong_pos += wp;
    }
    if sorted.is_empty() {
        return Err(Error::DegenerateSample("no positively classified points".into()));
    }
    sorted.sort_by(f64::total_cmp);
    let k = report.nuisance_support_size as f64;
    let mut out = MarginCdf {
        threshold: report.tau * report.gamma * k,
        mean_threshold: report.mean_sensitivity * report.gamma * k,
        empirical_ood_error: wrong as f64 / n as f64,
        positive_ood_error: wrong_pos as f64 / sorted.len() as f64,
        n_samples: n,
        sorted_margins: sorted,
        predicted_vulnerable_fraction: 0.0,
        mean_predicted_fraction: 0.0,
    };
    out.predicted_vulnerable_fraction = out.cdf_at(out.threshold);
    out.mean_predicted_fraction = out.cdf_at(out.mean_threshold);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::exact_gaussian_flip_prob;
    use crate::shift::ShiftFamily;
    use crate::stats::normal_cdf;

    fn e1(p: usize) -> LinearModel {
        let mut w = vec![0.0; p];
        w[0] = 1.0;
        LinearModel::from_weights(w)
    }

    /// Accuracy of `sgn(x1)` under the signal mixture, by direct integration.
    fn e1_accuracy(spec: &ProblemSpec) -> f64 {
        let s = spec.signal_variance.sqrt();
        let (u, q) = (spec.signal_center, spec.signal_major_weight);
        // y = +1: centres u (q) and 0 (1-q); correct iff x1 >= 0.
        let pos = q * normal_cdf(u / s) + (1.0 - q) * 0.5;
        // y = -1: centres -u (q) and 2u (1-q); correct iff x1 < 0.
        let neg = q * normal_cdf(u / s) + (1.0 - q) * normal_cdf(-2.0 * u / s);
        0.5 * (pos + neg)
    }

    #[test]
    fn signal_direction_matches_integral() {
        let spec = ProblemSpec {
            total_dim: 20,
            ..ProblemSpec::default()
        };
        let exact = e1_accuracy(&spec);
        for seed in [1, 2, 3] {
            let est = mc_accuracy(&e1(20), &spec, None, 200_000, seed).unwrap();
            assert!((est.value - exact).abs() <= 3.0 * est.std_error, "{} vs {exact}", est.value);
        }
    }

    #[test]
    fn constant_predictor_is_a_coin() {
        let spec = ProblemSpec {
            total_dim: 5,
            ..ProblemSpec::default()
        };
        let est = mc_accuracy(&LinearModel::from_weights(vec![0.0; 5]), &spec, None, 50_000, 4).unwrap();
        assert!((est.value - 0.5).abs() <= 3.0 * est.std_error);
    }

    #[test]
    fn null_shift_changes_nothing() {
        let spec = ProblemSpec {
            total_dim: 30,
            ..ProblemSpec::default()
        };
        let mut w = vec![0.05; 30];
        w[0] = 1.0;
        let m = LinearModel::from_weights(w);
        let null = ShiftSpec::null(30, vec![0]);
        assert_eq!(
            mc_accuracy(&m, &spec, Some(&null), 3000, 8).unwrap(),
            mc_accuracy(&m, &spec, None, 3000, 8).unwrap()
        );
    }

    #[test]
    fn std_error_formula() {
        let a = AccuracyEstimate::from_count(300, 1000, 0);
        let b = AccuracyEstimate::from_count(600, 2000, 0);
        assert!((a.std_error.powi(2) - 2.0 * b.std_error.powi(2)).abs() < 1e-15);
    }

    fn unit_nuisance() -> (LinearModel, ShiftSpec) {
        let m = LinearModel::from_weights(vec![0.0, 1.0]);
        let s = ShiftSpec {
            mean: vec![0.0, -0.5],
            sigma: 1.0,
            family: ShiftFamily::Gaussian,
            signal_support: vec![0],
        };
        (m, s)
    }

    #[test]
    fn flip_probability_matches_phi_half() {
        let (m, s) = unit_nuisance();
        let est = mc_flip_prob(&m, &[1.0, 0.0], &s, 1_000_000, 17).unwrap();
        let exact = exact_gaussian_flip_prob(&m, &[1.0, 0.0], &s).unwrap();
        assert!((est.value - exact).abs() <= 3.0 * est.std_error);
        assert!(est.std_error < 0.0005);
    }

    #[test]
    fn flip_probability_degenerate_cases() {
        let (m, _) = unit_nuisance();
        let still = ShiftSpec {
            mean: vec![0.0, 0.0],
            sigma: 0.0,
            family: ShiftFamily::Gaussian,
            signal_support: vec![0],
        };
        assert_eq!(mc_flip_prob(&m, &[0.0, 1.0], &still, 1000, 1).unwrap().value, 0.0);
        let push = ShiftSpec {
            mean: vec![0.0, -2.0],
            ..still.clone()
        };
        assert_eq!(mc_flip_prob(&m, &[0.0, 1.0], &push, 1000, 1).unwrap().value, 1.0);
        assert!(matches!(mc_flip_prob(&m, &[0.0, -1.0], &still, 10, 1), Err(Error::Precondition(_))));
    }

    #[test]
    fn cdf_counts_exactly() {
        let cdf = MarginCdf {
            sorted_margins: vec![0.1, 0.2, 0.2, 0.5],
            threshold: 0.2,
            predicted_vulnerable_fraction: 0.0,
            mean_threshold: 0.0,
            mean_predicted_fraction: 0.0,
            empirical_ood_error: 0.0,
            positive_ood_error: 0.0,
            n_samples: 4,
        };
        assert_eq!(cdf.cdf_at(0.2), 0.75);
        assert_eq!(cdf.cdf_at(0.05), 0.0);
        assert_eq!(cdf.cdf_at(9.0), 1.0);
        let mut buf = Vec::new();
        cdf.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("margin,cumulative_fraction\n0.1,0.25\n"));
    }
}
