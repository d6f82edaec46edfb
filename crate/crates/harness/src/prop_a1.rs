//! Nuisance sup-norm of the minimum-norm interpolator with and without
//! multiplicative sign noise on the targets.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use wrongline::rng::{stream, Purpose};
use wrongline::stats::median;
use wrongline::trainers::fit_min_l2;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetNoise {
    /// Independent random signs `xi_i`.
    Rademacher,
    /// `xi = 1`.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropA1Summary {
    pub n: usize,
    pub d: usize,
    pub noise: TargetNoise,
    pub signal_center: f64,
    /// `||w_{2:d}||_inf` per seed; `None` where the fit failed.
    pub per_seed: Vec<Option<f64>>,
    pub failures: Vec<String>,
    pub median: Option<f64>,
}

/// Draws `X` with a first column `N(signal_center, 1)` and remaining
/// columns `N(0, 1)`, sets `Y = xi * X_1`, fits the minimum-norm
/// interpolator and records the largest nuisance weight. The design depends
/// only on the seed, so the two noise settings see the same `X`.
pub fn prop_a1_experiment(n: usize, d: usize, seeds: &[u64], noise: TargetNoise, signal_center: f64) -> Result<PropA1Summary> {
    if d < 2 || n == 0 {
        return Err(HarnessError::Config(format!("need d >= 2 and n >= 1, got n={n} d={d}")));
    }
    if seeds.is_empty() {
        return Err(HarnessError::Config("no seeds".into()));
    }
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut failures = Vec::new();
    for &seed in seeds {
        let mut rng = stream(seed, Purpose::PropA1Design);
        let x = Array2::from_shape_fn((n, d), |(_, j)| {
            let z: f64 = rng.sample(StandardNormal);
            if j == 0 {
                signal_center + z
            } else {
                z
            }
        });
        let mut signs = stream(seed, Purpose::PropA1Noise);
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let xi = match noise {
                    TargetNoise::Rademacher => {
                        if signs.random::<bool>() {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                    TargetNoise::None => 1.0,
                };
                xi * x[[i, 0]]
            })
            .collect();
        match fit_min_l2(x.view(), &y) {
            Ok(model) => per_seed.push(Some(model.weights[1..].iter().fold(0.0f64, |a, w| a.max(w.abs())))),
            Err(e) => {
                failures.push(format!("seed {seed}: {e}"));
                per_seed.push(None);
            }
        }
    }
    let ok: Vec<f64> = per_seed.iter().flatten().copied().collect();
    Ok(PropA1Summary {
        n,
        d,
        noise,
        signal_center,
        median: median(&ok),
        per_seed,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_constraint_is_finite() {
        let s = prop_a1_experiment(1, 10, &[3], TargetNoise::None, 1.0).unwrap();
        let v = s.per_seed[0].unwrap();
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn reruns_agree() {
        let a = prop_a1_experiment(10, 40, &[1, 2, 3], TargetNoise::Rademacher, 1.0).unwrap();
        let b = prop_a1_experiment(10, 40, &[1, 2, 3], TargetNoise::Rademacher, 1.0).unwrap();
        assert_eq!(a, b);
        assert!(a.failures.is_empty());
    }

    #[test]
    fn rejects_tiny_dimension() {
        assert!(prop_a1_experiment(1, 1, &[0], TargetNoise::None, 1.0).is_err());
    }
}
