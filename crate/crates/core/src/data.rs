//! In-distribution data: a low-dimensional signal block mixed with isotropic
//! Gaussian nuisance coordinates, plus symmetric label noise.

use std::io::{Read, Write};
use std::ops::Range;

use ndarray::{Array2, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{block_stream, Purpose, BLOCK_ROWS};

/// Parameters of the signal/nuisance distribution.
///
/// Coordinates `0..signal_dim` form the signal block; every signal
/// coordinate is drawn from a two-component Gaussian mixture whose major
/// component is centred at `signal_center * y` and whose minor component is
/// centred at `signal_center * (1 - y)`. The remaining coordinates are
/// zero-mean Gaussian with variance `nuisance_variance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSpec {
    pub total_dim: usize,
    pub signal_dim: usize,
    pub signal_center: f64,
    pub signal_variance: f64,
    pub signal_major_weight: f64,
    pub nuisance_variance: f64,
    pub noise_rate: f64,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self {
            total_dim: 300,
            signal_dim: 1,
            signal_center: 1.0,
            signal_variance: 0.15,
            signal_major_weight: 0.9,
            nuisance_variance: 0.1,
            noise_rate: 0.2,
        }
    }
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.signal_dim == 0 || self.signal_dim >= self.total_dim {
            return Err(Error::Parameter(format!(
                "need 0 < signal_dim < total_dim, got signal_dim={} total_dim={}",
                self.signal_dim, self.total_dim
            )));
        }
        if !(self.signal_variance > 0.0 && self.nuisance_variance > 0.0) {
            return Err(Error::Parameter("variances must be positive".into()));
        }
        if !(self.signal_major_weight > 0.0 && self.signal_major_weight < 1.0) {
            return Err(Error::Parameter(format!(
                "signal_major_weight must lie in (0,1), got {}",
                self.signal_major_weight
            )));
        }
        if !(0.0..=0.5).contains(&self.noise_rate) {
            return Err(Error::Parameter(format!(
                "noise_rate must lie in [0, 0.5], got {}",
                self.noise_rate
            )));
        }
        if !self.signal_center.is_finite() {
            return Err(Error::Parameter("signal_center must be finite".into()));
        }
        Ok(())
    }

    pub fn signal_indices(&self) -> Range<usize> {
        0..self.signal_dim
    }

    pub fn nuisance_indices(&self) -> Range<usize> {
        self.signal_dim..self.total_dim
    }

    pub fn with_noise_rate(&self, noise_rate: f64) -> Self {
        Self {
            noise_rate,
            ..self.clone()
        }
    }
}

/// A labelled sample. `labels` are the (possibly corrupted) training
/// targets; `clean_labels` are the labels drawn from the distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<i8>,
    pub clean_labels: Vec<i8>,
    pub noise_mask: Vec<bool>,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn flip_count(&self) -> usize {
        self.noise_mask.iter().filter(|&&b| b).count()
    }

    /// Noisy labels as reals, for regression-style trainers.
    pub fn labels_f64(&self) -> Vec<f64> {
        self.labels.iter().map(|&y| f64::from(y)).collect()
    }

    /// Writes `x1..x{p},label,clean_label,noisy` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.dim()).map(|j| format!("x{j}")).collect();
        header.extend(["label", "clean_label", "noisy"].map(String::from));
        w.write_record(&header)?;
        for (i, row) in self.features.axis_iter(Axis(0)).enumerate() {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[i].to_string());
            rec.push(self.clean_labels[i].to_string());
            rec.push(u8::from(self.noise_mask[i]).to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format produced by [`Dataset::write_csv`]. The seed is not
    /// stored in the file and is set to 0.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let ncols = headers.len();
        if ncols < 4 || &headers[ncols - 3] != "label" || &headers[ncols - 2] != "clean_label" || &headers[ncols - 1] != "noisy" {
            return Err(Error::Input("dataset CSV must end with label,clean_label,noisy".into()));
        }
        let p = ncols - 3;
        let mut values = Vec::new();
        let mut labels = Vec::new();
        let mut clean_labels = Vec::new();
        let mut noise_mask = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            for j in 0..p {
                values.push(parse_field::<f64>(&rec[j])?);
            }
            labels.push(parse_label(&rec[p])?);
            clean_labels.push(parse_label(&rec[p + 1])?);
            noise_mask.push(parse_field::<u8>(&rec[p + 2])? != 0);
        }
        let n = labels.len();
        let features = Array2::from_shape_vec((n, p), values)
            .map_err(|e| Error::Input(format!("ragged dataset CSV: {e}")))?;
        Ok(Self {
            features,
            labels,
            clean_labels,
            noise_mask,
            seed: 0,
        })
    }
}

fn parse_field<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Input(format!("unparsable CSV field {s:?}")))
}

fn parse_label(s: &str) -> Result<i8> {
    match parse_field::<i8>(s)? {
        y @ (-1 | 1) => Ok(y),
        other => Err(Error::Input(format!("label must be -1 or +1, got {other}"))),
    }
}

/// Fills `out` (at most [`BLOCK_ROWS`] rows) with the leading rows of block
/// `block` and writes their clean labels. A shorter `out` yields a prefix of
/// a longer one.
pub(crate) fn fill_block(
    spec: &ProblemSpec,
    seed: u64,
    block: u64,
    mut out: ArrayViewMut2<f64>,
    labels: &mut [i8],
) {
    debug_assert!(out.nrows() <= BLOCK_ROWS);
    let mut rng = block_stream(seed, Purpose::Points, block);
    let sd_signal = spec.signal_variance.sqrt();
    let sd_nuisance = spec.nuisance_variance.sqrt();
    for (mut row, label) in out.axis_iter_mut(Axis(0)).zip(labels.iter_mut()) {
        let y: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 };
        *label = y as i8;
        for j in 0..spec.signal_dim {
            let center = if rng.random::<f64>() < spec.signal_major_weight {
                spec.signal_center * y
            } else {
                spec.signal_center * (1.0 - y)
            };
            let z: f64 = rng.sample(StandardNormal);
            row[j] = center + sd_signal * z;
        }
        for j in spec.signal_dim..spec.total_dim {
            let z: f64 = rng.sample(StandardNormal);
            row[j] = sd_nuisance * z;
        }
    }
}

/// Clean points `rows` of the stream addressed by `seed`.
pub(crate) fn sample_points(spec: &ProblemSpec, seed: u64, rows: Range<usize>) -> (Array2<f64>, Vec<i8>) {
    let n = rows.len();
    let mut features = Array2::zeros((n, spec.total_dim));
    let mut labels = vec![0i8; n];
    let mut i = rows.start;
    while i < rows.end {
        let block = i / BLOCK_ROWS;
        let offset = i % BLOCK_ROWS;
        let take = (BLOCK_ROWS - offset).min(rows.end - i);
        let local = i - rows.start;
        if offset == 0 {
            fill_block(
                spec,
                seed,
                block as u64,
                features.slice_mut(ndarray::s![local..local + take, ..]),
                &mut labels[local..local + take],
            );
        } else {
            let mut tmp = Array2::zeros((offset + take, spec.total_dim));
            let mut tmp_labels = vec![0i8; offset + take];
            fill_block(spec, seed, block as u64, tmp.view_mut(), &mut tmp_labels);
            features
                .slice_mut(ndarray::s![local..local + take, ..])
                .assign(&tmp.slice(ndarray::s![offset.., ..]));
            labels[local..local + take].copy_from_slice(&tmp_labels[offset..]);
        }
        i += take;
    }
    (features, labels)
}

/// Bernoulli(`rate`) flips for rows `rows`. Uses common random numbers, so
/// the flip set at a higher rate contains the flip set at a lower one.
pub(crate) fn noise_flips(rate: f64, seed: u64, rows: Range<usize>) -> Vec<bool> {
    let mut out = Vec::with_capacity(rows.len());
    let mut i = rows.start;
    while i < rows.end {
        let block = i / BLOCK_ROWS;
        let offset = i % BLOCK_ROWS;
        let take = (BLOCK_ROWS - offset).min(rows.end - i);
        let mut rng = block_stream(seed, Purpose::LabelNoise, block as u64);
        for k in 0..offset + take {
            let u: f64 = rng.random();
            if k >= offset {
                out.push(u < rate);
            }
        }
        i += take;
    }
    out
}

/// Draws `n` labelled points and corrupts each label independently with
/// probability `spec.noise_rate`.
pub fn sample_dataset(spec: &ProblemSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Parameter("dataset size must be at least 1".into()));
    }
    let (features, clean_labels) = sample_points(spec, seed, 0..n);
    let noise_mask = noise_flips(spec.noise_rate, seed, 0..n);
    let labels = clean_labels
        .iter()
        .zip(&noise_mask)
        .map(|(&y, &flip)| if flip { -y } else { y })
        .collect();
    Ok(Dataset {
        features,
        labels,
        clean_labels,
        noise_mask,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dataset_shape_and_flip_count() {
        let spec = ProblemSpec::default();
        let ds = sample_dataset(&spec, 300, 7).unwrap();
        assert_eq!(ds.features.dim(), (300, 300));
        assert!(ds.labels.iter().all(|&y| y == 1 || y == -1));
        let band = 4.0 * (0.2f64 * 0.8 * 300.0).sqrt();
        assert!((ds.flip_count() as f64 - 60.0).abs() <= band, "flips {}", ds.flip_count());
        for i in 0..ds.len() {
            assert_eq!(ds.labels[i] == -ds.clean_labels[i], ds.noise_mask[i]);
            assert_eq!(ds.labels[i] == ds.clean_labels[i], !ds.noise_mask[i]);
        }
    }

    #[test]
    fn zero_noise_rate_flips_nothing() {
        let spec = ProblemSpec::default().with_noise_rate(0.0);
        let ds = sample_dataset(&spec, 50, 1).unwrap();
        assert!(ds.noise_mask.iter().all(|&b| !b));
        assert_eq!(ds.labels, ds.clean_labels);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let spec = ProblemSpec::default();
        let a = sample_dataset(&spec, 300, 7).unwrap();
        let b = sample_dataset(&spec, 300, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_dataset(&spec, 300, 8).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn smaller_sample_is_a_prefix() {
        let spec = ProblemSpec::default();
        let big = sample_dataset(&spec, 700, 3).unwrap();
        let small = sample_dataset(&spec, 300, 3).unwrap();
        assert_eq!(big.features.slice(ndarray::s![..300, ..]), small.features);
        assert_eq!(&big.labels[..300], &small.labels[..]);
        let (mid, mid_labels) = sample_points(&spec, 3, 250..520);
        assert_eq!(big.features.slice(ndarray::s![250..520, ..]), mid);
        assert_eq!(&big.clean_labels[250..520], &mid_labels[..]);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(sample_dataset(&ProblemSpec::default(), 0, 1).is_err());
        let bad = ProblemSpec {
            noise_rate: 0.6,
            ..ProblemSpec::default()
        };
        assert!(matches!(sample_dataset(&bad, 10, 1), Err(Error::Parameter(_))));
        let bad = ProblemSpec {
            signal_dim: 300,
            ..ProblemSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mixture_centres_follow_the_label() {
        // Minor component for y = -1 sits at 1 - y = 2.
        let spec = ProblemSpec {
            total_dim: 2,
            noise_rate: 0.0,
            ..ProblemSpec::default()
        };
        let ds = sample_dataset(&spec, 20_000, 11).unwrap();
        let mean_for = |label: i8| {
            let xs: Vec<f64> = (0..ds.len())
                .filter(|&i| ds.clean_labels[i] == label)
                .map(|i| ds.features[[i, 0]])
                .collect();
            xs.iter().sum::<f64>() / xs.len() as f64
        };
        // E[x1 | y=+1] = 0.9, E[x1 | y=-1] = -0.9 + 0.2 = -0.7
        assert!((mean_for(1) - 0.9).abs() < 0.03);
        assert!((mean_for(-1) + 0.7).abs() < 0.03);
    }

    #[test]
    fn csv_round_trip() {
        let spec = ProblemSpec {
            total_dim: 4,
            ..ProblemSpec::default()
        };
        let ds = sample_dataset(&spec, 17, 5).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let header = String::from_utf8(buf.clone()).unwrap();
        assert!(header.starts_with("x1,x2,x3,x4,label,clean_label,noisy\n"));
        let back = Dataset::read_csv(&buf[..]).unwrap();
        assert_eq!(back.features, ds.features);
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.noise_mask, ds.noise_mask);
    }

    #[test]
    fn spec_json_uses_declared_field_names() {
        let json = serde_json::to_value(ProblemSpec::default()).unwrap();
        for key in [
            "total_dim",
            "signal_dim",
            "signal_center",
            "signal_variance",
            "signal_major_weight",
            "nuisance_variance",
            "noise_rate",
        ] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert!(serde_json::from_str::<ProblemSpec>(r#"{"bogus": 1}"#).is_err());
        let partial: ProblemSpec = serde_json::from_str(r#"{"noise_rate": 0.1}"#).unwrap();
        assert_eq!(partial.total_dim, 300);
    }
}
