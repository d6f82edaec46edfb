//! Dense symmetric positive definite solves.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Largest accepted ratio between the largest and smallest pivot.
pub const CONDITION_THRESHOLD: f64 = 1e12;

/// `P^T A P = L L^T` with diagonal pivoting.
#[derive(Debug, Clone)]
pub struct PivotedCholesky {
    l: Array2<f64>,
    perm: Vec<usize>,
    condition_estimate: f64,
}

impl PivotedCholesky {
    /// Factorises a symmetric matrix, choosing the largest remaining
    /// diagonal entry as the next pivot. Fails when the pivot ratio (a
    /// cheap lower estimate of the 2-norm condition number) exceeds
    /// [`CONDITION_THRESHOLD`].
    pub fn factor(a: ArrayView2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Input(format!("matrix is {}x{}, expected square", n, a.ncols())));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("matrix has non-finite entries".into()));
        }
        let mut work = a.to_owned();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut max_pivot: f64 = 0.0;
        let mut min_pivot = f64::INFINITY;

        for j in 0..n {
            let (p, &d) = (j..n)
                .map(|i| (i, &work[[i, i]]))
                .max_by(|a, b| a.1.total_cmp(b.1))
                .expect("non-empty range");
            if p != j {
                swap_sym(&mut work, j, p);
                perm.swap(j, p);
            }
            max_pivot = max_pivot.max(d);
            min_pivot = min_pivot.min(d);
            if !(d > 0.0) || max_pivot / d > CONDITION_THRESHOLD {
                return Err(Error::RankDeficient {
                    condition_estimate: if d > 0.0 { max_pivot / d } else { f64::INFINITY },
                    threshold: CONDITION_THRESHOLD,
                });
            }
            let root = d.sqrt();
            work[[j, j]] = root;
            for i in j + 1..n {
                work[[i, j]] /= root;
            }
            // Schur complement update; both triangles are kept current
            // because later pivots swap rows and columns symmetrically.
            for c in j + 1..n {
                let lcj = work[[c, j]];
                for r in j + 1..n {
                    work[[r, c]] -= work[[r, j]] * lcj;
                }
            }
        }
        for r in 0..n {
            for c in r + 1..n {
                work[[r, c]] = 0.0;
            }
        }
        Ok(Self {
            l: work,
            perm,
            condition_estimate: if n == 0 { 1.0 } else { max_pivot / min_pivot },
        })
    }

    pub fn condition_estimate(&self) -> f64 {
        self.condition_estimate
    }

    pub fn lower(&self) -> &Array2<f64> {
        &self.l
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.perm.len();
        assert_eq!(b.len(), n, "right-hand side length");
        let mut z: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= self.l[[i, k]] * z[k];
            }
            z[i] = s / self.l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in i + 1..n {
                s -= self.l[[k, i]] * z[k];
            }
            z[i] = s / self.l[[i, i]];
        }
        let mut x = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = z[i];
        }
        x
    }
}

fn swap_sym(a: &mut Array2<f64>, i: usize, j: usize) {
    let n = a.nrows();
    for k in 0..n {
        a.swap([i, k], [j, k]);
    }
    for k in 0..n {
        a.swap([k, i], [k, j]);
    }
}
