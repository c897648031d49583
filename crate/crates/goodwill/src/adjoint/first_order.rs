//! First-order anticipated adjoint equation.
//!
//! The adjoint pair `(p, q)` solves, in integral form,
//!
//! ```text
//! p(t) = r_x(x(T)) + int_t^T [l_x(x) - a0 p - ad E^{F_s} p(s+d) - s1 q1(s)] ds
//!        + int_t^T q1 dW1 + int_t^T q2 dW2,
//! p = q1 = q2 = 0 on (T, T+d].
//! ```
//!
//! The `-s1 q1(s)` driver term is what makes the first duality relation
//! close. Because the horizon pushes the anticipated terms to zero on the
//! last delay interval, the solution is an explicit backward recursion over
//! the intervals `[(T-(k+1)d) v 0, T-kd]`; numerically we realize it as the
//! exact discrete dual of the Euler forward scheme, one step at a time:
//!
//! ```text
//! q^l_j = -E^{F_j}[ p_{j+1} dW^l_j ] / dt,
//! p_j   = (1 - a0 dt) E^{F_j}[p_{j+1}] + l_x(x_j) dt - s1 q1_j dt
//!         - ad dt E^{F_j}[p_{j+d+1}]          (zero past the horizon),
//! p_N   = r_x(x_N) pathwise.
//! ```
//!
//! The `(1 - a0 dt)` discount and the right-node anticipated index make the
//! discrete summation-by-parts identity against the Euler variations exact,
//! so the duality checks are limited only by Monte Carlo noise and the
//! regression basis, not by an O(dt) scheme mismatch. Conditional
//! expectations are least-squares projections on polynomials in
//! `(x(t), x(t-d))`.

use super::regression::{condexp_regress, FittedPredictor, RegressionConfig};
use crate::error::Result;
use crate::model::ValidatedModel;
use crate::paths::{BrownianBatch, PathMatrix, StateBatch};
use crate::stats;
use rayon::prelude::*;

/// Per-node regression diagnostics of the backward solve.
#[derive(Debug, Clone, Copy)]
pub struct NodeDiagnostics {
    pub node: usize,
    pub r2_p: f64,
    pub ridge_used: bool,
    /// Set when `r2_p` fell below the configured floor.
    pub below_floor: bool,
}

/// The fitted conditional-expectation functions at one node; together with
/// the analytic `l_x` term they define the adjoint as a function of the
/// state features, so the solution can be evaluated on an independent
/// ensemble.
#[derive(Debug)]
pub struct NodeFits {
    /// `E_j[p_{j+1}]`
    pub p_next: FittedPredictor,
    /// `q1(t_j)`
    pub q1: FittedPredictor,
    /// `q2(t_j)`
    pub q2: FittedPredictor,
    /// `E_j[p_{j+d+1}]` (absent once past the horizon or when ad = 0)
    pub anticipated: Option<FittedPredictor>,
}

/// Pathwise adjoint estimates on `[0, T]`, extended by zero on `(T, T+d]`.
#[derive(Debug)]
pub struct AdjointBatch {
    n_steps: usize,
    /// p at nodes `0..=n_steps`; `p(T) = r_x(x(T))` pathwise.
    pub p: PathMatrix,
    /// q1, q2 at steps `0..n_steps`.
    pub q1: PathMatrix,
    pub q2: PathMatrix,
    /// Fitted regressions per step, index 0..n_steps.
    pub fits: Vec<NodeFits>,
    pub diagnostics: Vec<NodeDiagnostics>,
}

impl AdjointBatch {
    /// `p` with the future-time condition: zero strictly past the horizon.
    #[inline]
    pub fn p_at(&self, path: usize, node: usize) -> f64 {
        if node > self.n_steps {
            0.0
        } else {
            self.p.at(path, node)
        }
    }

    /// `q1` with the future-time condition (steps run to `n_steps - 1`).
    #[inline]
    pub fn q1_at(&self, path: usize, step: usize) -> f64 {
        if step >= self.n_steps {
            0.0
        } else {
            self.q1.at(path, step)
        }
    }

    /// `q2` with the future-time condition.
    #[inline]
    pub fn q2_at(&self, path: usize, step: usize) -> f64 {
        if step >= self.n_steps {
            0.0
        } else {
            self.q2.at(path, step)
        }
    }

    /// Nodes whose p-regression quality fell below the configured floor.
    pub fn flagged_nodes(&self) -> Vec<usize> {
        self.diagnostics
            .iter()
            .filter(|d| d.below_floor)
            .map(|d| d.node)
            .collect()
    }

    /// Evaluate the solved `p` at a node as a function of the state, on an
    /// arbitrary batch (node `n_steps` is the exact terminal condition;
    /// past the horizon it is zero).
    pub fn predict_p(
        &self,
        model: &ValidatedModel,
        batch: &StateBatch,
        node: usize,
    ) -> Vec<f64> {
        let n_paths = batch.x.n_paths();
        if node > self.n_steps {
            return vec![0.0; n_paths];
        }
        if node == self.n_steps {
            let cost = model.cost();
            return (0..n_paths)
                .map(|path| cost.r_x(batch.x.at(path, node)))
                .collect();
        }
        let p_par = model.params();
        let dt = model.grid().dt();
        let (f1, f2) = features_at(model, batch, node);
        let fits = &self.fits[node];
        let p_hat = fits.p_next.predict_all(&f1, &f2);
        let q1 = fits.q1.predict_all(&f1, &f2);
        let ahead = fits.anticipated.as_ref().map(|f| f.predict_all(&f1, &f2));
        (0..n_paths)
            .map(|path| {
                (1.0 - p_par.a0 * dt) * p_hat[path]
                    + model.cost().l_x(batch.x.at(path, node)) * dt
                    - p_par.sigma1 * q1[path] * dt
                    - p_par.ad * dt * ahead.as_ref().map_or(0.0, |a| a[path])
            })
            .collect()
    }
}

/// Feature columns `(x(t_i), x(t_i - d))` at a node.
pub(crate) fn features_at(
    model: &ValidatedModel,
    batch: &StateBatch,
    node: usize,
) -> (Vec<f64>, Vec<f64>) {
    let n_paths = batch.x.n_paths();
    let f1 = batch.x.column(node);
    let lag = model.grid().delay_steps();
    let f2 = if node >= lag {
        batch.x.column(node - lag)
    } else {
        vec![model.history()[node]; n_paths]
    };
    (f1, f2)
}

/// Solve the first-order adjoint equation backward on the paths of
/// `batch`.
pub fn solve_first_adjoint(
    model: &ValidatedModel,
    batch: &StateBatch,
    cfg: &RegressionConfig,
) -> Result<AdjointBatch> {
    let grid = model.grid();
    let p_par = model.params();
    let cost = model.cost();
    let n = grid.n_steps();
    let lag = grid.delay_steps();
    let dt = grid.dt();
    let n_paths = batch.x.n_paths();
    let driver = &batch.driver;

    let mut p = PathMatrix::zeros(n_paths, n + 1);
    let mut q1 = PathMatrix::zeros(n_paths, n);
    let mut q2 = PathMatrix::zeros(n_paths, n);
    let mut diagnostics = Vec::with_capacity(n);

    // Terminal condition, exact pathwise.
    let x_terminal = batch.x.column(n);
    for path in 0..n_paths {
        p.row_mut(path)[n] = cost.r_x(x_terminal[path]);
    }

    let mut fits: Vec<NodeFits> = Vec::with_capacity(n);
    for j in (0..n).rev() {
        let (f1, f2) = features_at(model, batch, j);
        let p_next = p.column(j + 1);

        // E_j[p_{j+1}]
        let fit_p = condexp_regress(&f1, &f2, &p_next, cfg)?;
        let p_hat = fit_p.predict_all(&f1, &f2);

        // q^l_j = -E_j[(p_{j+1} - E_j p_{j+1}) dW^l]/dt; centering with the
        // fitted conditional mean only reduces variance.
        let t1: Vec<f64> = (0..n_paths)
            .into_par_iter()
            .map(|path| -(p_next[path] - p_hat[path]) * driver.dw1(path, j) / dt)
            .collect();
        let t2: Vec<f64> = (0..n_paths)
            .into_par_iter()
            .map(|path| -(p_next[path] - p_hat[path]) * driver.dw2(path, j) / dt)
            .collect();
        let fit_q1 = condexp_regress(&f1, &f2, &t1, cfg)?;
        let fit_q2 = condexp_regress(&f1, &f2, &t2, cfg)?;
        let q1_fit = fit_q1.predict_all(&f1, &f2);
        let q2_fit = fit_q2.predict_all(&f1, &f2);

        // Anticipated term at the right node of the delayed pairing,
        // dropped once it passes the horizon (the final delay interval).
        let fit_anticipated: Option<FittedPredictor> = if p_par.ad != 0.0 && j + lag + 1 <= n {
            let target = p.column(j + lag + 1);
            Some(condexp_regress(&f1, &f2, &target, cfg)?)
        } else {
            None
        };
        let anticipated: Option<Vec<f64>> = fit_anticipated
            .as_ref()
            .map(|fit| fit.predict_all(&f1, &f2));

        for path in 0..n_paths {
            let ahead = anticipated.as_ref().map_or(0.0, |a| a[path]);
            let value = (1.0 - p_par.a0 * dt) * p_hat[path] + cost.l_x(batch.x.at(path, j)) * dt
                - p_par.sigma1 * q1_fit[path] * dt
                - p_par.ad * dt * ahead;
            p.row_mut(path)[j] = value;
            q1.row_mut(path)[j] = q1_fit[path];
            q2.row_mut(path)[j] = q2_fit[path];
        }
        diagnostics.push(NodeDiagnostics {
            node: j,
            r2_p: fit_p.diagnostics.r2,
            ridge_used: fit_p.diagnostics.ridge_used,
            below_floor: fit_p.diagnostics.r2 < cfg.r2_floor,
        });
        fits.push(NodeFits {
            p_next: fit_p,
            q1: fit_q1,
            q2: fit_q2,
            anticipated: fit_anticipated,
        });
    }
    diagnostics.sort_by_key(|d| d.node);
    fits.reverse();

    Ok(AdjointBatch {
        n_steps: n,
        p,
        q1,
        q2,
        fits,
        diagnostics,
    })
}

/// Per-step statistics of the discrete backward-equation residual.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    /// `(node, mean, stderr)` of the one-step residual per grid step.
    pub per_step: Vec<(usize, f64, f64)>,
}

impl ResidualReport {
    /// Fraction of steps whose residual mean sits within
    /// `sigma * stderr` of zero.
    pub fn fraction_within(&self, sigma: f64) -> f64 {
        if self.per_step.is_empty() {
            return 1.0;
        }
        let ok = self
            .per_step
            .iter()
            .filter(|(_, m, se)| m.abs() <= sigma * se.max(1e-300))
            .count();
        ok as f64 / self.per_step.len() as f64
    }
}

/// One-step residual of the solved adjoint against the discrete backward
/// identity,
///
/// ```text
/// R_j = (1 - a0 dt) p_{j+1} + l_x(x_j) dt - s1 q1_j dt
///       - ad dt p_{j+d+1} - p_j,
/// ```
///
/// whose conditional mean vanishes when `(p, q)` solve the discrete
/// equation.
///
/// The residual must be evaluated on an ensemble *independent* of the one
/// the adjoint was fitted on: in-sample, least squares forces every
/// per-step residual mean to zero identically, which certifies nothing.
/// Here the stored per-node regressions are applied to the paths of
/// `eval`, so the reported means carry the genuine fit and basis error at
/// the natural Monte Carlo scale.
pub fn bsde_residuals(
    model: &ValidatedModel,
    adjoint: &AdjointBatch,
    eval: &StateBatch,
) -> ResidualReport {
    let grid = model.grid();
    let p_par = model.params();
    let cost = model.cost();
    let n = grid.n_steps();
    let lag = grid.delay_steps();
    let dt = grid.dt();
    let n_paths = eval.x.n_paths();

    // Functional values of p at every node on the evaluation paths.
    let p_eval: Vec<Vec<f64>> = (0..=n)
        .map(|node| adjoint.predict_p(model, eval, node))
        .collect();

    let per_step = (0..n)
        .map(|j| {
            let (f1, f2) = features_at(model, eval, j);
            let q1_eval = adjoint.fits[j].q1.predict_all(&f1, &f2);
            let vals: Vec<f64> = (0..n_paths)
                .into_par_iter()
                .map(|path| {
                    let anticipated = if j + lag + 1 <= n {
                        p_eval[j + lag + 1][path]
                    } else {
                        0.0
                    };
                    (1.0 - p_par.a0 * dt) * p_eval[j + 1][path]
                        + cost.l_x(eval.x.at(path, j)) * dt
                        - p_par.sigma1 * q1_eval[path] * dt
                        - p_par.ad * dt * anticipated
                        - p_eval[j][path]
                })
                .collect();
            let (m, se) = stats::mean_and_stderr(&vals);
            (j, m, se)
        })
        .collect();
    ResidualReport { per_step }
}

/// Unconditional mean and standard error of the raw increment targets
/// `-(p_{j+1} - E_j p_{j+1}-proxy) dW^l / dt` at one step; the honest
/// statistic for "q is zero within Monte Carlo error".
pub fn q_increment_stats(
    batch: &StateBatch,
    adjoint: &AdjointBatch,
    step: usize,
) -> ((f64, f64), (f64, f64)) {
    let dt = batch.driver.grid().dt();
    let n_paths = batch.x.n_paths();
    let raw = |component: usize| -> (f64, f64) {
        let vals: Vec<f64> = (0..n_paths)
            .map(|path| {
                let dw = if component == 1 {
                    batch.driver.dw1(path, step)
                } else {
                    batch.driver.dw2(path, step)
                };
                -(adjoint.p.at(path, step + 1) - adjoint.p.at(path, step)) * dw / dt
            })
            .collect();
        stats::mean_and_stderr(&vals)
    };
    (raw(1), raw(2))
}

/// Martingale-representation integrands of a terminal target over a time
/// window: `E^{F_t}[Y] = E[Y] + int L1 dW1 + int L2 dW2`.
///
/// Realized with the Brownian pair `(W1(t), W2(t))` as regression features:
/// `M(t)` is the fitted conditional expectation of the target and
/// `L_i(t) = E^{F_t}[(M(t+dt) - M(t)) dW_i] / dt`. The same construction
/// applied to a running target `l_x(x(s))` over `[t0, s]` yields the
/// kernel coefficients `K_i(s, .)`.
#[derive(Debug)]
pub struct ReprCoeffs {
    pub start_node: usize,
    /// L1, L2 at steps `start_node..end_node`.
    pub l1: PathMatrix,
    pub l2: PathMatrix,
}

pub fn estimate_martingale_repr(
    driver: &BrownianBatch,
    target: &[f64],
    window: (f64, f64),
    cfg: &RegressionConfig,
) -> Result<ReprCoeffs> {
    let grid = driver.grid();
    let i0 = grid
        .node_of(window.0)
        .ok_or(crate::error::Error::StartOffGrid(window.0))?;
    let i1 = grid
        .node_of(window.1)
        .ok_or(crate::error::Error::StartOffGrid(window.1))?;
    assert!(i1 > i0, "window must span at least one step");
    let n_paths = driver.n_paths();
    let dt = grid.dt();

    // Cumulative Brownian values at nodes i0..=i1.
    let mut w1 = PathMatrix::zeros(n_paths, i1 - i0 + 1);
    let mut w2 = PathMatrix::zeros(n_paths, i1 - i0 + 1);
    w1.par_rows_mut()
        .zip(w2.par_rows_mut())
        .enumerate()
        .for_each(|(path, (r1, r2))| {
            let (dw1, dw2) = driver.rows(path);
            let mut a = 0.0;
            let mut b = 0.0;
            for step in 0..i1 {
                a += dw1[step];
                b += dw2[step];
                if step + 1 >= i0 {
                    r1[step + 1 - i0] = a;
                    r2[step + 1 - i0] = b;
                }
            }
        });

    // Conditional-expectation process M at each node in the window.
    let mut m_prev: Vec<f64> = {
        let f1 = w1.column(0);
        let f2 = w2.column(0);
        condexp_regress(&f1, &f2, target, cfg)?.predict_all(&f1, &f2)
    };
    let mut l1 = PathMatrix::zeros(n_paths, i1 - i0);
    let mut l2 = PathMatrix::zeros(n_paths, i1 - i0);
    for rel in 0..(i1 - i0) {
        let node = i0 + rel;
        let f1_next = w1.column(rel + 1);
        let f2_next = w2.column(rel + 1);
        let m_next = condexp_regress(&f1_next, &f2_next, target, cfg)?
            .predict_all(&f1_next, &f2_next);
        let f1 = w1.column(rel);
        let f2 = w2.column(rel);
        let t1: Vec<f64> = (0..n_paths)
            .map(|p| (m_next[p] - m_prev[p]) * driver.dw1(p, node) / dt)
            .collect();
        let t2: Vec<f64> = (0..n_paths)
            .map(|p| (m_next[p] - m_prev[p]) * driver.dw2(p, node) / dt)
            .collect();
        let pred1 = condexp_regress(&f1, &f2, &t1, cfg)?.predict_all(&f1, &f2);
        let pred2 = condexp_regress(&f1, &f2, &t2, cfg)?.predict_all(&f1, &f2);
        for p in 0..n_paths {
            l1.row_mut(p)[rel] = pred1[p];
            l2.row_mut(p)[rel] = pred2[p];
        }
        m_prev = m_next;
    }
    Ok(ReprCoeffs {
        start_node: i0,
        l1,
        l2,
    })
}
