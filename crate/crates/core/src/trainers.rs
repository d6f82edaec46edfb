//! The two model families: the minimum-norm interpolator and
//! ℓ1-penalised logistic regression.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::linalg::PivotedCholesky;
use crate::model::{sign, LinearModel};

/// Support threshold of the closed-form interpolator.
pub const MIN_L2_SUPPORT_TOL: f64 = 1e-8;

/// `sgn(v) * max(|v| - t, 0)`.
#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn check_design(x: ArrayView2<f64>, rows: usize) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::Input("design matrix is empty".into()));
    }
    if x.nrows() != rows {
        return Err(Error::Input(format!("{} rows but {} targets", x.nrows(), rows)));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("design matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Minimum Euclidean-norm solution of `X w = Y`, i.e. `X^T (X X^T)^{-1} Y`,
/// with one step of iterative refinement on the dual variable.
pub fn fit_min_l2(x: ArrayView2<f64>, y: &[f64]) -> Result<LinearModel> {
    check_design(x, y.len())?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("targets have non-finite entries".into()));
    }
    let (n, p) = x.dim();
    if n > p {
        return Err(Error::Precondition(format!(
            "interpolation needs n <= p, got n={n} p={p}"
        )));
    }
    let gram = x.dot(&x.t());
    let chol = PivotedCholesky::factor(gram.view())?;
    let targets = ArrayView1::from(y);

    let mut alpha = Array1::from(chol.solve(y));
    let mut w = x.t().dot(&alpha);
    let residual = &targets - &x.dot(&w);
    alpha += &Array1::from(chol.solve(residual.as_slice().expect("contiguous")));
    w = x.t().dot(&alpha);

    let residual = &targets - &x.dot(&w);
    let y_norm = targets.dot(&targets).sqrt();
    let relative = residual.dot(&residual).sqrt() / if y_norm > 0.0 { y_norm } else { 1.0 };
    if relative > 1e-8 {
        log::warn!("min-norm interpolator relative residual {relative:.3e} exceeds 1e-8");
    }

    let mut model = LinearModel::from_weights(w.to_vec());
    model.support_tol = MIN_L2_SUPPORT_TOL;
    let labels: Vec<i8> = y.iter().map(|&v| sign(v)).collect();
    model.record_fit(x, &labels);
    model.solver_meta.insert("solver".into(), json!("pivoted_cholesky"));
    model.solver_meta.insert("condition_estimate".into(), json!(chol.condition_estimate()));
    model.solver_meta.insert("relative_residual".into(), json!(relative));
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct L1Options {
    /// Target stationarity residual.
    pub tol: f64,
    pub max_iters: usize,
    /// Use the accelerated (restarted, monotone) variant.
    pub accelerate: bool,
    /// Iterations between stationarity checks.
    pub check_every: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<Vec<f64>>,
}

impl Default for L1Options {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 50_000,
            accelerate: true,
            check_every: 5,
            warm_start: None,
        }
    }
}

/// `log(1 + exp(-m))` without overflow.
#[inline]
fn softplus_neg(m: f64) -> f64 {
    if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

/// `1 / (1 + exp(m))`.
#[inline]
fn sigmoid_neg(m: f64) -> f64 {
    if m > 0.0 {
        let e = (-m).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + m.exp())
    }
}

fn signed_rows(x: ArrayView2<f64>, y: &[i8]) -> Array2<f64> {
    let mut a = x.to_owned();
    for (mut row, &yi) in a.axis_iter_mut(Axis(0)).zip(y) {
        if yi < 0 {
            row.mapv_inplace(|v| -v);
        }
    }
    a
}

fn mean_loss(margins: &Array1<f64>) -> f64 {
    margins.iter().map(|&m| softplus_neg(m)).sum::<f64>() / margins.len() as f64
}

fn gradient_from_margins(a: &Array2<f64>, margins: &Array1<f64>) -> Array1<f64> {
    let n = margins.len() as f64;
    let s = margins.mapv(|m| -sigmoid_neg(m) / n);
    a.t().dot(&s)
}

fn check_labels(y: &[i8]) -> Result<()> {
    if y.iter().any(|&v| v != 1 && v != -1) {
        return Err(Error::Input("labels must be -1 or +1".into()));
    }
    Ok(())
}

/// `(1/n) sum log(1 + exp(-y_i <w, x_i>))`.
pub fn logistic_loss(x: ArrayView2<f64>, y: &[i8], w: &[f64]) -> Result<f64> {
    check_design(x, y.len())?;
    check_labels(y)?;
    let a = signed_rows(x, y);
    Ok(mean_loss(&a.dot(&ArrayView1::from(w))))
}

/// Gradient of [`logistic_loss`].
pub fn logistic_gradient(x: ArrayView2<f64>, y: &[i8], w: &[f64]) -> Result<Vec<f64>> {
    check_design(x, y.len())?;
    check_labels(y)?;
    let a = signed_rows(x, y);
    let m = a.dot(&ArrayView1::from(w));
    Ok(gradient_from_margins(&a, &m).to_vec())
}

/// Largest violation of the optimality conditions of the penalised problem:
/// `|g_i + lambda sgn(w_i)|` on the support and `max(|g_i| - lambda, 0)` off it.
pub fn stationarity_residual(gradient: &[f64], w: &[f64], lambda: f64) -> f64 {
    gradient
        .iter()
        .zip(w)
        .map(|(&g, &wi)| {
            if wi != 0.0 {
                (g + lambda * wi.signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

fn l1(w: &Array1<f64>) -> f64 {
    w.iter().map(|v| v.abs()).sum()
}

/// Minimises `(1/n) sum log(1 + exp(-y_i <w, x_i>)) + lambda ||w||_1` by
/// proximal gradient with backtracking. The accelerated variant restarts
/// its momentum whenever a step would increase the objective, so the
/// recorded objective trace never goes up.
pub fn fit_l1_logistic(x: ArrayView2<f64>, y: &[i8], lambda: f64, opts: &L1Options) -> Result<LinearModel> {
    check_design(x, y.len())?;
    check_labels(y)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Parameter(format!("lambda must be positive, got {lambda}")));
    }
    if !(opts.tol > 0.0) || opts.max_iters == 0 || opts.check_every == 0 {
        return Err(Error::Parameter("tol, max_iters and check_every must be positive".into()));
    }
    let (n, p) = x.dim();
    let a = signed_rows(x, y);

    let mut w = match &opts.warm_start {
        Some(w0) if w0.len() == p => Array1::from(w0.clone()),
        Some(w0) => {
            return Err(Error::Input(format!("warm start has {} entries, expected {p}", w0.len())));
        }
        None => Array1::zeros(p),
    };
    let mut m_w = a.dot(&w);
    let mut f_w = mean_loss(&m_w) + lambda * l1(&w);

    // Average eigenvalue of the loss Hessian bound; backtracking corrects it.
    let frob2: f64 = a.iter().map(|v| v * v).sum();
    let mut lip = (frob2 / (4.0 * n as f64 * n.min(p) as f64)).max(1e-12);

    let mut v = w.clone();
    let mut m_v = m_w.clone();
    let mut t = 1.0f64;
    let mut trace = vec![f_w];
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut restarts = 0usize;
    let mut stalled = false;
    let mut iters = 0usize;
    let mut rejected_in_row = 0usize;

    while iters < opts.max_iters {
        iters += 1;
        let g = gradient_from_margins(&a, &m_v);
        let f_v = mean_loss(&m_v);
        let (z, m_z, f_z) = loop {
            let step = 1.0 / lip;
            let mut z = Array1::zeros(p);
            Zip::from(&mut z)
                .and(&v)
                .and(&g)
                .for_each(|zi, &vi, &gi| *zi = soft_threshold(vi - step * gi, lambda * step));
            let m_z = a.dot(&z);
            let f_z = mean_loss(&m_z);
            let d = &z - &v;
            let model = f_v + g.dot(&d) + 0.5 * lip * d.dot(&d);
            if f_z <= model + 1e-14 * f_v.abs() {
                break (z, m_z, f_z);
            }
            lip *= 2.0;
            if !lip.is_finite() {
                return Err(Error::Input("line search diverged".into()));
            }
        };
        let obj_z = f_z + lambda * l1(&z);

        if obj_z <= f_w {
            rejected_in_row = 0;
            let w_old = std::mem::replace(&mut w, z);
            let m_old = std::mem::replace(&mut m_w, m_z);
            f_w = obj_z;
            if opts.accelerate {
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                let beta = (t - 1.0) / t_next;
                v = &w + &((&w - &w_old) * beta);
                m_v = &m_w + &((&m_w - &m_old) * beta);
                t = t_next;
            } else {
                v.assign(&w);
                m_v.assign(&m_w);
            }
            lip = (lip * 0.9).max(1e-12);
        } else {
            // Momentum overshot: restart from the last accepted iterate.
            restarts += 1;
            rejected_in_row += 1;
            t = 1.0;
            v.assign(&w);
            m_v.assign(&m_w);
            if rejected_in_row > 2 {
                stalled = true;
            }
        }
        trace.push(f_w);

        if iters % opts.check_every == 0 || stalled || iters == opts.max_iters {
            let gw = gradient_from_margins(&a, &m_w);
            residual = stationarity_residual(gw.as_slice().expect("contiguous"), w.as_slice().expect("contiguous"), lambda);
            if residual <= opts.tol {
                converged = true;
                break;
            }
            if stalled {
                break;
            }
        }
    }

    if !converged {
        log::warn!(
            "l1 logistic solver stopped after {iters} iterations with stationarity residual {residual:.3e} (tol {:.1e}){}",
            opts.tol,
            if stalled { ", no further descent possible" } else { "" }
        );
    }

    let w_inf = w.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut model = LinearModel::from_weights(w.to_vec());
    model.support_tol = 1e-10 * w_inf;
    model.record_fit(x, y);
    model.objective_trace = trace;
    let meta = &mut model.solver_meta;
    meta.insert("solver".into(), json!(if opts.accelerate { "restarted_fista" } else { "ista" }));
    meta.insert("lambda".into(), json!(lambda));
    meta.insert("iterations".into(), json!(iters));
    meta.insert("converged".into(), json!(converged));
    meta.insert("stationarity_residual".into(), json!(residual));
    meta.insert("restarts".into(), json!(restarts));
    meta.insert("final_step".into(), json!(1.0 / lip));
    Ok(model)
}
