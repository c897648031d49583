//! Least-squares Monte Carlo conditional expectations.
//!
//! `E[target | F_t]` is approximated by projecting the pathwise target onto
//! a polynomial basis in two scalar features (by default the current and
//! delayed state). Features are standardized, constant columns are dropped,
//! and a ridge fallback with a declared weight handles rank deficiency.
//! Gram accumulation runs over fixed-size path chunks combined in order, so
//! fits are bit-identical for any worker count.

use crate::error::{Error, Result};
use crate::stats;
use rayon::prelude::*;

/// Declared ridge weight (relative to the per-column Gram scale) used when
/// the plain normal equations are rank deficient.
pub const RIDGE_FALLBACK_WEIGHT: f64 = 1e-8;

/// Features with sample standard deviation below this (relative) floor are
/// treated as constants and folded into the intercept.
const CONSTANT_FEATURE_TOL: f64 = 1e-12;

/// Path chunk size for deterministic parallel Gram accumulation.
const GRAM_CHUNK: usize = 8192;

/// Regression settings shared by the adjoint solvers and the
/// maximum-principle checks.
#[derive(Debug, Clone, Copy)]
pub struct RegressionConfig {
    /// Total polynomial degree of the basis in the two features.
    pub basis_degree: usize,
    /// Fits with R^2 below this floor are flagged (never fatal).
    pub r2_floor: f64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            basis_degree: 2,
            r2_floor: 0.0,
        }
    }
}

/// Fit quality diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct FitDiagnostics {
    /// 1 - SSR/SST, defined as 1 for a constant target.
    pub r2: f64,
    /// Whether the ridge fallback was engaged.
    pub ridge_used: bool,
    /// Basis columns dropped because a feature was constant.
    pub dropped_columns: usize,
}

/// A fitted conditional-expectation predictor.
#[derive(Debug, Clone)]
pub struct FittedPredictor {
    /// Monomial exponents (i, j) for the two standardized features.
    monomials: Vec<(u32, u32)>,
    /// Coefficients aligned with `monomials`; index 0 is the intercept.
    coefs: Vec<f64>,
    f1_mean: f64,
    f1_scale: f64,
    f2_mean: f64,
    f2_scale: f64,
    pub diagnostics: FitDiagnostics,
}

impl FittedPredictor {
    /// Predict at a single feature pair.
    #[inline]
    pub fn predict(&self, f1: f64, f2: f64) -> f64 {
        let g1 = if self.f1_scale > 0.0 {
            (f1 - self.f1_mean) / self.f1_scale
        } else {
            0.0
        };
        let g2 = if self.f2_scale > 0.0 {
            (f2 - self.f2_mean) / self.f2_scale
        } else {
            0.0
        };
        let mut acc = self.coefs[0];
        for (k, &(i, j)) in self.monomials.iter().enumerate() {
            acc += self.coefs[k + 1] * g1.powi(i as i32) * g2.powi(j as i32);
        }
        acc
    }

    /// In-sample predictions for whole feature columns.
    pub fn predict_all(&self, f1: &[f64], f2: &[f64]) -> Vec<f64> {
        f1.par_iter()
            .zip(f2.par_iter())
            .map(|(&a, &b)| self.predict(a, b))
            .collect()
    }
}

fn monomial_exponents(degree: usize, use_f1: bool, use_f2: bool) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for total in 1..=degree as u32 {
        for i in (0..=total).rev() {
            let j = total - i;
            if (i == 0 || use_f1) && (j == 0 || use_f2) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Cholesky solve of a symmetric positive-definite system, in place.
/// Returns None when the matrix is not numerically positive definite.
fn cholesky_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= a[i][k] * a[j][k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                a[i][i] = sum.sqrt();
            } else {
                a[i][j] = sum / a[j][j];
            }
        }
    }
    // forward substitution L y = b
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= a[i][k] * b[k];
        }
        b[i] = sum / a[i][i];
    }
    // back substitution L^T x = y
    for i in (0..n).rev() {
        let mut sum = b[i];
        for k in i + 1..n {
            sum -= a[k][i] * b[k];
        }
        b[i] = sum / a[i][i];
    }
    Some(b)
}

/// Least-squares projection of `targets` onto the polynomial basis in
/// `(f1, f2)`.
///
/// Requires at least `10 x` the basis dimension in paths. Rank-deficient
/// normal equations fall back to a ridge with weight
/// [`RIDGE_FALLBACK_WEIGHT`] and set the `ridge_used` flag.
pub fn condexp_regress(
    f1: &[f64],
    f2: &[f64],
    targets: &[f64],
    cfg: &RegressionConfig,
) -> Result<FittedPredictor> {
    let n = targets.len();
    assert_eq!(f1.len(), n, "feature/target length mismatch");
    assert_eq!(f2.len(), n, "feature/target length mismatch");
    if !(1..=4).contains(&cfg.basis_degree) {
        return Err(Error::UnsupportedBasisDegree(cfg.basis_degree));
    }

    let (f1_mean, f1_sd_of_mean) = stats::mean_and_stderr(f1);
    let (f2_mean, f2_sd_of_mean) = stats::mean_and_stderr(f2);
    let f1_sd = f1_sd_of_mean * (n as f64).sqrt();
    let f2_sd = f2_sd_of_mean * (n as f64).sqrt();
    let use_f1 = f1_sd > CONSTANT_FEATURE_TOL * (1.0 + f1_mean.abs());
    let use_f2 = f2_sd > CONSTANT_FEATURE_TOL * (1.0 + f2_mean.abs());

    let full_dim = monomial_exponents(cfg.basis_degree, true, true).len() + 1;
    let monomials = monomial_exponents(cfg.basis_degree, use_f1, use_f2);
    let dropped = full_dim - 1 - monomials.len();
    let m = monomials.len() + 1; // + intercept
    let need = 10 * full_dim;
    if n < need {
        return Err(Error::TooFewPathsForBasis {
            need,
            dim: full_dim,
            got: n,
        });
    }

    let f1_scale = if use_f1 { f1_sd } else { 0.0 };
    let f2_scale = if use_f2 { f2_sd } else { 0.0 };

    // Deterministic chunked accumulation of the augmented Gram matrix
    // [X 1]^T [X 1] and right-hand side [X 1]^T y.
    #[derive(Clone)]
    struct Acc {
        gram: Vec<f64>, // m x m, row-major, lower triangle used
        rhs: Vec<f64>,
    }
    let zero = Acc {
        gram: vec![0.0; monomialsq_len(m)],
        rhs: vec![0.0; m],
    };
    fn monomialsq_len(m: usize) -> usize {
        m * (m + 1) / 2
    }

    let idx = |i: usize, j: usize| i * (i + 1) / 2 + j; // j <= i

    let chunk_accs: Vec<Acc> = (0..n)
        .into_par_iter()
        .chunks(GRAM_CHUNK)
        .map(|chunk| {
            let mut acc = zero.clone();
            let mut phi = vec![0.0; m];
            for p in chunk {
                let g1 = if use_f1 { (f1[p] - f1_mean) / f1_scale } else { 0.0 };
                let g2 = if use_f2 { (f2[p] - f2_mean) / f2_scale } else { 0.0 };
                phi[0] = 1.0;
                for (k, &(i, j)) in monomials.iter().enumerate() {
                    phi[k + 1] = g1.powi(i as i32) * g2.powi(j as i32);
                }
                let y = targets[p];
                for i in 0..m {
                    for j in 0..=i {
                        acc.gram[idx(i, j)] += phi[i] * phi[j];
                    }
                    acc.rhs[i] += phi[i] * y;
                }
            }
            acc
        })
        .collect();
    let mut total = zero;
    for acc in &chunk_accs {
        for (t, v) in total.gram.iter_mut().zip(&acc.gram) {
            *t += v;
        }
        for (t, v) in total.rhs.iter_mut().zip(&acc.rhs) {
            *t += v;
        }
    }

    let dense = |ridge: f64| -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in 0..=i {
                let v = total.gram[idx(i, j)];
                a[i][j] = v;
                a[j][i] = v;
            }
            if i > 0 {
                a[i][i] += ridge;
            }
        }
        a
    };

    let (coefs, ridge_used) = match cholesky_solve(dense(0.0), total.rhs.clone()) {
        Some(c) if c.iter().all(|v| v.is_finite()) => (c, false),
        _ => {
            let ridge = RIDGE_FALLBACK_WEIGHT * n as f64;
            let c = cholesky_solve(dense(ridge), total.rhs.clone()).ok_or_else(|| {
                Error::ParseError("ridge-regularized normal equations still singular".into())
            })?;
            (c, true)
        }
    };

    let mut predictor = FittedPredictor {
        monomials,
        coefs,
        f1_mean,
        f1_scale,
        f2_mean,
        f2_scale,
        diagnostics: FitDiagnostics {
            r2: 1.0,
            ridge_used,
            dropped_columns: dropped,
        },
    };

    // R^2 over the sample; defined as 1 for a constant target.
    let (y_mean, y_se) = stats::mean_and_stderr(targets);
    let sst = y_se * y_se * n as f64 * (n as f64 - 1.0).max(1.0);
    if sst > (1e-12 * (1.0 + y_mean.abs())).powi(2) * n as f64 {
        let ssr: f64 = (0..n)
            .into_par_iter()
            .chunks(GRAM_CHUNK)
            .map(|chunk| {
                let mut s = 0.0;
                for p in chunk {
                    let r = targets[p] - predictor.predict(f1[p], f2[p]);
                    s += r * r;
                }
                s
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum();
        predictor.diagnostics.r2 = 1.0 - ssr / sst;
    }
    Ok(predictor)
}
