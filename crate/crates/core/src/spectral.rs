//! Exact oracle layer: the Perron eigenpair of the exponentiated kernel,
//! the risk-sensitive cost `Lambda = ln lambda`, the relative value function
//! `h`, the twisted kernel and its stationary law, and the exact gradient of
//! `Lambda` with a finite-difference cross-check.

use crate::linalg::{norm_inf, Matrix};
use crate::model::{ModelError, RiskModel, Snapshot};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("power iteration did not converge after {iters} iterations (bracket gap {gap:e})")]
    NoConvergence { iters: usize, gap: f64 },
    #[error("matrix must be square and nonempty")]
    Shape,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = SpectralError> = std::result::Result<T, E>;

/// Power-iteration controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerronOptions {
    /// Relative Collatz-Wielandt gap at which the iteration stops.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PerronOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iters: 1_000_000,
        }
    }
}

/// Step used by [`fd_gradient`] unless told otherwise.
pub const FD_STEP: f64 = 1e-5;

/// `P_hat(x, y) = exp(alpha C(x)) P(x, y)`.
pub fn hat_kernel(p: &Matrix, cost: &[f64], alpha: f64) -> Matrix {
    assert_eq!(p.rows(), cost.len());
    let mut out = p.clone();
    for (x, c) in cost.iter().enumerate() {
        let w = (alpha * c).exp();
        for v in out.row_mut(x) {
            *v *= w;
        }
    }
    out
}

/// Perron root and right eigenvector (normalized so `h[anchor] = 1`) of a
/// nonnegative primitive matrix.
///
/// Power iteration with per-step renormalization; the min and max of the
/// Collatz-Wielandt ratios `(A v)_x / v_x` bracket the root and stop the
/// iteration once their relative gap is at most `opts.tol`.
pub fn perron(a: &Matrix, anchor: usize, opts: PerronOptions) -> Result<(f64, Vec<f64>)> {
    let n = a.rows();
    if n == 0 || !a.is_square() || anchor >= n {
        return Err(SpectralError::Shape);
    }
    let mut v = vec![1.0; n];
    let mut gap = f64::INFINITY;
    for _ in 0..opts.max_iters {
        let w = a.mul_vec(&v);
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for (wx, vx) in w.iter().zip(&v) {
            let r = wx / vx;
            lo = lo.min(r);
            hi = hi.max(r);
        }
        if !(lo > 0.0) || !hi.is_finite() {
            // A row of zeros or an exhausted entry: not primitive.
            return Err(SpectralError::NoConvergence { iters: 0, gap });
        }
        gap = (hi - lo) / lo;
        if gap <= opts.tol {
            let lambda = 0.5 * (lo + hi);
            let s = v[anchor];
            let h = v.iter().map(|x| x / s).collect();
            return Ok((lambda, h));
        }
        let s = norm_inf(&w);
        v = w.into_iter().map(|x| x / s).collect();
    }
    Err(SpectralError::NoConvergence {
        iters: opts.max_iters,
        gap,
    })
}

/// Stationary distribution of a primitive stochastic matrix by power
/// iteration on its transpose; stops when `||pi P - pi||_1 <= tol`.
pub fn stationary_distribution(p: &Matrix, tol: f64, max_iters: usize) -> Result<Vec<f64>> {
    let n = p.rows();
    if n == 0 || !p.is_square() {
        return Err(SpectralError::Shape);
    }
    let mut pi = vec![1.0 / n as f64; n];
    let mut diff = f64::INFINITY;
    for _ in 0..max_iters {
        let mut next = p.vec_mul(&pi);
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= s);
        diff = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if diff <= tol {
            return Ok(pi);
        }
    }
    Err(SpectralError::NoConvergence {
        iters: max_iters,
        gap: diff,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralSolution {
    /// Perron root of the exponentiated kernel.
    pub lambda: f64,
    /// Risk-sensitive cost `ln lambda`.
    #[serde(rename = "Lambda")]
    pub log_lambda: f64,
    /// Relative value function, `h[x*] = 1`.
    pub h: Vec<f64>,
    pub twisted: Matrix,
    pub pi_check: Vec<f64>,
    /// `max_x |h(x) - (1/lambda) sum_y P_hat(x, y) h(y)|`.
    pub residual: f64,
}

impl SpectralSolution {
    /// Expected return time to `x*` under the twisted kernel.
    pub fn twisted_return_time(&self, x_star: usize) -> f64 {
        1.0 / self.pi_check[x_star]
    }
}

/// Solves the multiplicative Poisson equation for an evaluated model.
pub fn solve_snapshot(snap: &Snapshot, alpha: f64, opts: PerronOptions) -> Result<SpectralSolution> {
    let ph = snap.hat_kernel(alpha);
    solve_hat(&ph, snap.recurrent_state(), opts)
}

/// Eigen-solution from an exponentiated kernel directly.
pub fn solve_hat(ph: &Matrix, x_star: usize, opts: PerronOptions) -> Result<SpectralSolution> {
    let (lambda, h) = perron(ph, x_star, opts)?;
    let n = ph.rows();
    let mut twisted = Matrix::zeros(n, n);
    let mut residual: f64 = 0.0;
    for x in 0..n {
        let mut row_sum = 0.0;
        for y in 0..n {
            let v = ph[(x, y)] * h[y] / (lambda * h[x]);
            twisted[(x, y)] = v;
            row_sum += v;
        }
        residual = residual.max((h[x] - row_sum * h[x]).abs());
        for v in twisted.row_mut(x) {
            *v /= row_sum;
        }
    }
    let pi_check = stationary_distribution(&twisted, (opts.tol * 1e-2).max(1e-14), opts.max_iters)?;
    Ok(SpectralSolution {
        lambda,
        log_lambda: lambda.ln(),
        h,
        twisted,
        pi_check,
        residual,
    })
}

/// Spectral solution of `model` at `theta` with default options.
pub fn solve(model: &dyn RiskModel, theta: &[f64], alpha: f64) -> Result<SpectralSolution> {
    solve_snapshot(&model.snapshot(theta)?, alpha, PerronOptions::default())
}

/// Exact `grad_theta Lambda_theta` from the twisted stationary law:
/// `sum_e pi_check(from) P_check_e (alpha grad c_e + L_e)`, where
/// `P_check_e = p_e exp(alpha c_e) h(to) / (lambda h(from))`.
pub fn grad_from_solution(snap: &Snapshot, sol: &SpectralSolution, alpha: f64) -> Vec<f64> {
    let l = snap.n_params();
    let mut g = vec![0.0; l];
    for (i, e) in snap.edges().iter().enumerate() {
        let w = sol.pi_check[e.from] * e.prob * (alpha * e.cost).exp() * sol.h[e.to]
            / (sol.lambda * sol.h[e.from]);
        let s = snap.edge_score(i);
        let c = snap.edge_cost_grad(i);
        for j in 0..l {
            g[j] += w * (alpha * c[j] + s[j]);
        }
    }
    g
}

pub fn grad_risk_cost(model: &dyn RiskModel, theta: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let snap = model.snapshot(theta)?;
    let sol = solve_snapshot(&snap, alpha, PerronOptions::default())?;
    Ok(grad_from_solution(&snap, &sol, alpha))
}

/// Central finite difference of `Lambda_theta`, component-wise.
pub fn fd_gradient(model: &dyn RiskModel, theta: &[f64], alpha: f64, step: f64) -> Result<Vec<f64>> {
    let opts = PerronOptions {
        tol: 1e-14,
        ..PerronOptions::default()
    };
    let lam = |t: &[f64]| -> Result<f64> {
        Ok(solve_snapshot(&model.snapshot(t)?, alpha, opts)?.log_lambda)
    };
    (0..theta.len())
        .map(|j| {
            let mut tp = theta.to_vec();
            tp[j] += step;
            let mut tm = theta.to_vec();
            tm[j] -= step;
            Ok((lam(&tp)? - lam(&tm)?) / (2.0 * step))
        })
        .collect()
}
