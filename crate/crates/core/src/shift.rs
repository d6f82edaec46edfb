//! Shift distributions that leave the signal block untouched.

use std::ops::Range;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{sample_points, Dataset, ProblemSpec};
use crate::error::{Error, Result};
use crate::model::LinearModel;
use crate::rng::{block_stream, stream, Purpose, BLOCK_ROWS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftFamily {
    /// `delta_i ~ N(nu_i, sigma^2)`.
    Gaussian,
    /// `delta_i = nu_i + U(-sqrt(3) sigma, sqrt(3) sigma)`.
    Bounded,
}

/// Coordinate-wise independent additive shift with mean `mean` and scale
/// `sigma`. Coordinates in `signal_support` are never shifted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    pub mean: Vec<f64>,
    pub sigma: f64,
    pub family: ShiftFamily,
    pub signal_support: Vec<usize>,
}

impl ShiftSpec {
    /// The shift that does nothing.
    pub fn null(dim: usize, signal_support: Vec<usize>) -> Self {
        Self {
            mean: vec![0.0; dim],
            sigma: 0.0,
            family: ShiftFamily::Gaussian,
            signal_support,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Parameter(format!("shift sigma must be finite and >= 0, got {}", self.sigma)));
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("shift mean has non-finite entries".into()));
        }
        for &i in &self.signal_support {
            if i >= self.dim() {
                return Err(Error::Parameter(format!("signal index {i} out of range")));
            }
            if self.mean[i] != 0.0 {
                return Err(Error::Parameter(format!(
                    "shift mean must vanish on the signal block, coordinate {i} is {}",
                    self.mean[i]
                )));
            }
        }
        Ok(())
    }

    /// Coordinates the shift may move.
    pub fn free_coordinates(&self) -> Vec<usize> {
        let mut signal = vec![false; self.dim()];
        for &i in &self.signal_support {
            signal[i] = true;
        }
        (0..self.dim()).filter(|&i| !signal[i]).collect()
    }

    /// One draw of coordinate `i`.
    #[inline]
    pub(crate) fn draw_coordinate<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> f64 {
        match self.family {
            ShiftFamily::Gaussian => {
                let z: f64 = rng.sample(StandardNormal);
                self.mean[i] + self.sigma * z
            }
            ShiftFamily::Bounded => {
                let half_width = 3f64.sqrt() * self.sigma;
                let u: f64 = rng.random_range(-1.0..=1.0);
                self.mean[i] + half_width * u
            }
        }
    }

    /// Adds an independent draw to each of `features`' rows, which are rows
    /// `rows` of the sample addressed by `seed`.
    pub(crate) fn perturb_rows(&self, features: &mut Array2<f64>, seed: u64, rows: Range<usize>) {
        let free = self.free_coordinates();
        let mut i = rows.start;
        while i < rows.end {
            let block = i / BLOCK_ROWS;
            let offset = i % BLOCK_ROWS;
            let take = (BLOCK_ROWS - offset).min(rows.end - i);
            let mut rng = block_stream(seed, Purpose::ShiftDraw, block as u64);
            for k in 0..offset + take {
                if k < offset {
                    for &j in &free {
                        self.draw_coordinate(j, &mut rng);
                    }
                    continue;
                }
                let local = i - rows.start + (k - offset);
                let mut row = features.index_axis_mut(Axis(0), local);
                for &j in &free {
                    row[j] += self.draw_coordinate(j, &mut rng);
                }
            }
            i += take;
        }
    }
}

/// Shift mean `-magnitude * sgn(w_i)` on the model's nuisance support, with
/// per-coordinate variance `variance`.
pub fn make_paper_shift(
    model: &LinearModel,
    magnitude: f64,
    variance: f64,
    spec: &ProblemSpec,
) -> Result<ShiftSpec> {
    spec.validate()?;
    check_dims(model, spec)?;
    if !(variance >= 0.0) {
        return Err(Error::Parameter(format!("shift variance must be >= 0, got {variance}")));
    }
    let support = model.support_within(spec.nuisance_indices());
    if support.is_empty() {
        return Err(Error::Certificate("model has no nuisance support; the shift is undefined".into()));
    }
    let mut mean = vec![0.0; spec.total_dim];
    for i in support {
        mean[i] = -magnitude * model.weights[i].signum();
    }
    Ok(ShiftSpec {
        mean,
        sigma: variance.sqrt(),
        family: ShiftFamily::Gaussian,
        signal_support: spec.signal_indices().collect(),
    })
}

/// Shift mean of Euclidean norm `norm` at angle `angle_deg` from `-w`,
/// living on the model's nuisance support. The orthogonal component points
/// along a seeded random direction.
pub fn make_angled_shift(
    model: &LinearModel,
    angle_deg: f64,
    norm: f64,
    variance: f64,
    spec: &ProblemSpec,
    seed: u64,
) -> Result<ShiftSpec> {
    spec.validate()?;
    check_dims(model, spec)?;
    if !(0.0..=90.0).contains(&angle_deg) {
        return Err(Error::Parameter(format!("angle must lie in [0, 90] degrees, got {angle_deg}")));
    }
    if !(norm >= 0.0) || !(variance >= 0.0) {
        return Err(Error::Parameter("norm and variance must be >= 0".into()));
    }
    let support = model.support_within(spec.nuisance_indices());
    if support.is_empty() {
        return Err(Error::Certificate("model has no nuisance support; the shift is undefined".into()));
    }
    if support.len() == 1 && angle_deg > 0.0 {
        return Err(Error::Dimension(
            "a single supported nuisance coordinate admits no orthogonal direction".into(),
        ));
    }

    let w_norm = support.iter().map(|&i| model.weights[i].powi(2)).sum::<f64>().sqrt();
    let along: Vec<f64> = support.iter().map(|&i| -model.weights[i] / w_norm).collect();

    let theta = angle_deg.to_radians();
    let (sin, cos) = if angle_deg == 90.0 { (1.0, 0.0) } else { theta.sin_cos() };

    let mut direction: Vec<f64> = along.iter().map(|a| cos * a).collect();
    if sin > 0.0 {
        let ortho = random_orthogonal_unit(&along, seed)?;
        for (d, o) in direction.iter_mut().zip(&ortho) {
            *d += sin * o;
        }
    }

    let mut mean = vec![0.0; spec.total_dim];
    for (k, &i) in support.iter().enumerate() {
        mean[i] = norm * direction[k];
    }
    Ok(ShiftSpec {
        mean,
        sigma: variance.sqrt(),
        family: ShiftFamily::Gaussian,
        signal_support: spec.signal_indices().collect(),
    })
}

/// A seeded unit vector orthogonal to the unit vector `u`.
fn random_orthogonal_unit(u: &[f64], seed: u64) -> Result<Vec<f64>> {
    let mut rng = stream(seed, Purpose::AngleDirection);
    for _ in 0..16 {
        let mut v: Vec<f64> = (0..u.len()).map(|_| rng.sample(StandardNormal)).collect();
        // Two Gram-Schmidt passes keep the residual dot product at rounding level.
        for _ in 0..2 {
            let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(u) {
                *a -= proj * b;
            }
        }
        let len = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if len > 1e-8 {
            v.iter_mut().for_each(|a| *a /= len);
            return Ok(v);
        }
    }
    Err(Error::Dimension("could not draw a direction orthogonal to -w".into()))
}

fn check_dims(model: &LinearModel, spec: &ProblemSpec) -> Result<()> {
    if model.dim() != spec.total_dim {
        return Err(Error::Input(format!(
            "model has {} weights, problem has {} coordinates",
            model.dim(),
            spec.total_dim
        )));
    }
    Ok(())
}

/// One draw `delta ~ shift`.
pub fn sample_shift(shift: &ShiftSpec, seed: u64) -> Result<Vec<f64>> {
    shift.validate()?;
    let mut rng = stream(seed, Purpose::ShiftDraw);
    let mut delta = vec![0.0; shift.dim()];
    for j in shift.free_coordinates() {
        delta[j] = shift.draw_coordinate(j, &mut rng);
    }
    Ok(delta)
}

/// Fresh noiseless points `(z + delta, y)` with an independent shift draw
/// per point. The unshifted points coincide with the clean points of
/// [`crate::data::sample_dataset`] for the same seed.
pub fn sample_ood_testset(spec: &ProblemSpec, shift: &ShiftSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    shift.validate()?;
    if n == 0 {
        return Err(Error::Parameter("test set size must be at least 1".into()));
    }
    if shift.dim() != spec.total_dim {
        return Err(Error::Input("shift and problem dimensions differ".into()));
    }
    let (mut features, labels) = sample_points(spec, seed, 0..n);
    shift.perturb_rows(&mut features, seed, 0..n);
    Ok(Dataset {
        features,
        clean_labels: labels.clone(),
        labels,
        noise_mask: vec![false; n],
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample_dataset;

    fn nuisance_model(spec: &ProblemSpec, entries: &[(usize, f64)]) -> LinearModel {
        let mut w = vec![0.0; spec.total_dim];
        w[0] = 1.0;
        for &(i, v) in entries {
            w[i] = v;
        }
        let mut m = LinearModel::from_weights(w);
        m.support_tol = 1e-8;
        m
    }

    fn small_spec() -> ProblemSpec {
        ProblemSpec {
            total_dim: 6,
            ..ProblemSpec::default()
        }
    }

    #[test]
    fn paper_shift_signs() {
        let spec = small_spec();
        let m = nuisance_model(&spec, &[(1, 0.2), (2, -0.3)]);
        let s = make_paper_shift(&m, 0.25, 1e-3, &spec).unwrap();
        assert_eq!(&s.mean[..4], &[0.0, -0.25, 0.25, 0.0]);
        assert!((s.sigma - 1e-3f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.signal_support, vec![0]);
    }

    #[test]
    fn paper_shift_requires_nuisance_support() {
        let spec = small_spec();
        let m = nuisance_model(&spec, &[]);
        assert!(matches!(make_paper_shift(&m, 0.25, 1e-3, &spec), Err(Error::Certificate(_))));
    }

    #[test]
    fn angled_shift_geometry() {
        let spec = small_spec();
        let m = nuisance_model(&spec, &[(1, 0.2), (2, -0.3), (4, 0.7)]);
        let w_n: Vec<f64> = (1..6).map(|i| m.weights[i]).collect();
        let w_norm = w_n.iter().map(|v| v * v).sum::<f64>().sqrt();
        for angle in [0.0, 15.0, 60.0, 90.0] {
            let s = make_angled_shift(&m, angle, 1.0, 1e-3, &spec, 4).unwrap();
            let nu: Vec<f64> = (1..6).map(|i| s.mean[i]).collect();
            let nu_norm = nu.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((nu_norm - 1.0).abs() < 1e-12);
            let cos = -w_n.iter().zip(&nu).map(|(a, b)| a * b).sum::<f64>() / w_norm;
            assert!((cos - angle.to_radians().cos()).abs() < 1e-9, "angle {angle}: {cos}");
            assert_eq!(s.mean[0], 0.0);
            assert_eq!(s.mean[3], 0.0, "shift stays on the support");
        }
    }

    #[test]
    fn angled_shift_needs_two_coordinates() {
        let spec = small_spec();
        let m = nuisance_model(&spec, &[(3, 0.5)]);
        assert!(make_angled_shift(&m, 0.0, 1.0, 0.0, &spec, 1).is_ok());
        assert!(matches!(make_angled_shift(&m, 30.0, 1.0, 0.0, &spec, 1), Err(Error::Dimension(_))));
        assert!(make_angled_shift(&m, 91.0, 1.0, 0.0, &spec, 1).is_err());
    }

    #[test]
    fn zero_scale_shift_is_its_mean() {
        let s = ShiftSpec {
            mean: vec![0.0, 0.3, -0.1],
            sigma: 0.0,
            family: ShiftFamily::Gaussian,
            signal_support: vec![0],
        };
        assert_eq!(sample_shift(&s, 9).unwrap(), s.mean);
        let b = ShiftSpec {
            family: ShiftFamily::Bounded,
            ..s.clone()
        };
        assert_eq!(sample_shift(&b, 9).unwrap(), s.mean);
    }

    #[test]
    fn gaussian_shift_mean_converges() {
        let nu = vec![0.0, 0.4, -0.2, 0.0];
        let sigma = 0.5;
        let s = ShiftSpec {
            mean: nu.clone(),
            sigma,
            family: ShiftFamily::Gaussian,
            signal_support: vec![0],
        };
        let draws = 100_000;
        let mut sums = vec![0.0; 4];
        for seed in 0..draws {
            let d = sample_shift(&s, seed).unwrap();
            assert_eq!(d[0], 0.0);
            for (acc, v) in sums.iter_mut().zip(&d) {
                *acc += v;
            }
        }
        for i in 1..4 {
            let mean = sums[i] / draws as f64;
            assert!((mean - nu[i]).abs() <= 4.0 * sigma / (draws as f64).sqrt(), "coord {i}: {mean}");
        }
    }

    #[test]
    fn bounded_shift_stays_in_its_box() {
        let s = ShiftSpec {
            mean: vec![0.0, 1.0, -1.0],
            sigma: 0.2,
            family: ShiftFamily::Bounded,
            signal_support: vec![0],
        };
        let half = 3f64.sqrt() * 0.2;
        let mut sq = 0.0;
        let draws = 20_000;
        for seed in 0..draws {
            let d = sample_shift(&s, seed).unwrap();
            assert_eq!(d[0], 0.0);
            assert!((d[1] - 1.0).abs() <= half + 1e-15);
            assert!((d[2] + 1.0).abs() <= half + 1e-15);
            sq += (d[1] - 1.0).powi(2);
        }
        // Uniform on [-sqrt3 s, sqrt3 s] has variance s^2.
        assert!((sq / draws as f64 - 0.04).abs() < 0.002);
    }

    #[test]
    fn signal_block_mean_is_rejected() {
        let s = ShiftSpec {
            mean: vec![0.1, 0.0],
            sigma: 0.0,
            family: ShiftFamily::Gaussian,
            signal_support: vec![0],
        };
        assert!(sample_shift(&s, 0).is_err());
    }

    #[test]
    fn null_shift_reproduces_clean_points() {
        let spec = ProblemSpec::default();
        let null = ShiftSpec::null(spec.total_dim, vec![0]);
        let ood = sample_ood_testset(&spec, &null, 300, 12).unwrap();
        let id = sample_dataset(&spec.with_noise_rate(0.0), 300, 12).unwrap();
        assert_eq!(ood.features, id.features);
        assert_eq!(ood.labels, id.clean_labels);
        assert!(ood.noise_mask.iter().all(|&b| !b));
    }

    #[test]
    fn ood_testset_is_seeded_and_leaves_signal_alone() {
        let spec = small_spec();
        let m = nuisance_model(&spec, &[(1, 0.2), (2, -0.3)]);
        let s = make_paper_shift(&m, 0.25, 1e-3, &spec).unwrap();
        let a = sample_ood_testset(&spec, &s, 600, 5).unwrap();
        let b = sample_ood_testset(&spec, &s, 600, 5).unwrap();
        assert_eq!(a, b);
        let id = sample_dataset(&spec.with_noise_rate(0.0), 600, 5).unwrap();
        for i in 0..600 {
            assert_eq!(a.features[[i, 0]], id.features[[i, 0]]);
        }
        let prefix = sample_ood_testset(&spec, &s, 300, 5).unwrap();
        assert_eq!(prefix.features, a.features.slice(ndarray::s![..300, ..]));
    }

    #[test]
    fn json_field_names() {
        let s = ShiftSpec::null(3, vec![0]);
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["family"], "gaussian");
        for key in ["mean", "sigma", "family", "signal_support"] {
            assert!(v.get(key).is_some());
        }
        let back: ShiftSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
    }
}
