use std::collections::BTreeMap;

use ndarray::{ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// A homogeneous linear classifier `x -> sgn(<w, x>)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    /// Coordinates with `|w_i| > support_tol` form the support.
    pub support_tol: f64,
    pub train_error: f64,
    pub interpolating: bool,
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
    #[serde(default)]
    pub solver_meta: BTreeMap<String, serde_json::Value>,
}

impl LinearModel {
    /// A model with no training record, e.g. a hand-built direction.
    pub fn from_weights(weights: Vec<f64>) -> Self {
        Self {
            weights,
            support_tol: 0.0,
            train_error: 0.0,
            interpolating: false,
            objective_trace: Vec::new(),
            solver_meta: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn support(&self) -> Vec<usize> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| w.abs() > self.support_tol)
            .map(|(i, _)| i)
            .collect()
    }

    /// Support restricted to `indices`.
    pub fn support_within(&self, indices: impl IntoIterator<Item = usize>) -> Vec<usize> {
        indices
            .into_iter()
            .filter(|&i| self.weights[i].abs() > self.support_tol)
            .collect()
    }

    pub fn weights_view(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.weights[..])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Records the training error on `(features, labels)`.
    pub(crate) fn record_fit(&mut self, features: ArrayView2<f64>, labels: &[i8]) {
        let wrong = margins(self, features)
            .iter()
            .zip(labels)
            .filter(|(&m, &y)| sign(m) != y)
            .count();
        self.train_error = wrong as f64 / labels.len().max(1) as f64;
        self.interpolating = wrong == 0;
    }
}

/// `sgn` with the tie broken towards +1.
#[inline]
pub fn sign(margin: f64) -> i8 {
    if margin >= 0.0 {
        1
    } else {
        -1
    }
}

pub fn margin(model: &LinearModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.dim() {
        return Err(Error::Input(format!(
            "point has {} coordinates, model has {}",
            x.len(),
            model.dim()
        )));
    }
    Ok(model.weights.iter().zip(x).map(|(w, v)| w * v).sum())
}

pub fn predict(model: &LinearModel, x: &[f64]) -> Result<i8> {
    margin(model, x).map(sign)
}

/// Margins of every row of `features`.
pub fn margins(model: &LinearModel, features: ArrayView2<f64>) -> Vec<f64> {
    let w = model.weights_view();
    features.axis_iter(Axis(0)).map(|row| row.dot(&w)).collect()
}

/// Fraction of points whose prediction disagrees with the (noisy) label.
pub fn training_error(model: &LinearModel, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Input("empty dataset".into()));
    }
    if dataset.dim() != model.dim() {
        return Err(Error::Input(format!(
            "dataset has {} columns, model has {}",
            dataset.dim(),
            model.dim()
        )));
    }
    let wrong = margins(model, dataset.features.view())
        .iter()
        .zip(&dataset.labels)
        .filter(|(&m, &y)| sign(m) != y)
        .count();
    Ok(wrong as f64 / dataset.len() as f64)
}
