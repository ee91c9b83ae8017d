//! Entropic and coherent risk views of `Lambda`.
//!
//! `e(alpha) = Lambda(alpha) / alpha` has the variational form
//!
//! ```text
//! e(alpha) = sup_Q  E_{pi_Q}[C] - (1/alpha) E_{pi_Q}[KL(Q(x, .) || P(x, .))]
//! ```
//!
//! and the supremum is attained by the twisted kernel. Kernels are handled
//! edge by edge, so for MDPs `Q` ranges over joint (action, next state)
//! laws per state and the cost of an edge is `C(s, a)`.

use crate::linalg::{solve_vec, Matrix};
use crate::model::{irreducible, support, ModelError, RiskModel, Snapshot};
use crate::spectral::{self, PerronOptions, SpectralError};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

/// Row-sum tolerance for supplied kernels and distributions.
const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RobustError {
    #[error("alternative law puts mass {mass} where the reference has none (index {index})")]
    SupportMismatch { index: usize, mass: f64 },
    #[error("alternative kernel is not irreducible")]
    NotIrreducible,
    #[error("state-level kernels need state costs; use the edge form for models with actions")]
    ActionModel,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("stationary system is singular")]
    Singular,
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = RobustError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskPoint {
    pub alpha: f64,
    pub e_alpha: f64,
    /// KL budget `E_pi_check[KL(P_check || P)]` spent by the tilt.
    pub beta_alpha: f64,
    /// `E_pi_check[C]`, the coherent risk attained at that budget.
    pub rho_at_beta: f64,
    /// `|e_alpha - (rho_at_beta - beta_alpha / alpha)|`.
    pub residual: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(RobustError::Invalid(format!("alpha must be positive, got {alpha}")))
    }
}

/// `Lambda_theta(alpha) / alpha`.
pub fn entropic_risk(model: &dyn RiskModel, theta: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(spectral::solve(model, theta, alpha)?.log_lambda / alpha)
}

/// `(pi_P C, max C)`: the `alpha -> 0` limit of `e(alpha)` and an upper
/// bound for it.
///
/// The `alpha -> inf` limit is the largest mean cost over cycles of the
/// support graph, which equals `max C` when a maximal-cost state can
/// return to itself in one step.
pub fn risk_limits(model: &dyn RiskModel, theta: &[f64]) -> Result<(f64, f64)> {
    let snap = model.snapshot(theta)?;
    let pi = stationary(&snap.kernel())?;
    let avg = pi.iter().zip(snap.mean_cost()).map(|(p, c)| p * c).sum();
    let max = snap.edges().iter().map(|e| e.cost).fold(f64::NEG_INFINITY, f64::max);
    Ok((avg, max))
}

/// Stationary law of an irreducible stochastic matrix by a linear solve
/// (valid for periodic kernels too).
pub fn stationary(q: &Matrix) -> Result<Vec<f64>> {
    let n = q.rows();
    if n == 0 || !q.is_square() {
        return Err(RobustError::Invalid("kernel must be square and nonempty".into()));
    }
    // pi (I - Q) = 0 with the last equation replaced by sum(pi) = 1
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = if i == n - 1 {
                1.0
            } else {
                (if i == j { 1.0 } else { 0.0 }) - q[(j, i)]
            };
        }
    }
    let mut rhs = vec![0.0; n];
    rhs[n - 1] = 1.0;
    let pi = solve_vec(&a, &rhs).ok_or(RobustError::Singular)?;
    Ok(pi.into_iter().map(|x| x.max(0.0)).collect())
}

fn kl(q: &[f64], p: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for (i, (&qi, &pi)) in q.iter().zip(p).enumerate() {
        if qi > 0.0 {
            if !(pi > 0.0) {
                return Err(RobustError::SupportMismatch { index: i, mass: qi });
            }
            s += qi * (qi / pi).ln();
        }
    }
    Ok(s)
}

fn check_distribution(v: &[f64], what: &str) -> Result<()> {
    let s: f64 = v.iter().sum();
    if v.iter().any(|&x| !(x >= 0.0)) || (s - 1.0).abs() > STOCHASTIC_TOL {
        return Err(RobustError::Invalid(format!("{what} is not a probability vector")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DvCheck {
    /// `(1/alpha) ln E_p[exp(alpha phi)]`.
    pub lhs: f64,
    /// `q*(x) ∝ p(x) exp(alpha phi(x))`.
    pub optimizer: Vec<f64>,
    /// `|lhs - (E_q*[phi] - KL(q* || p) / alpha)|`.
    pub identity_residual: f64,
    /// `E_q[phi] - KL(q || p) / alpha` for the supplied `q`.
    pub q_value: Option<f64>,
    /// `KL(q || q*) / alpha`, which equals `lhs - q_value`.
    pub q_slack: Option<f64>,
}

/// Donsker-Varadhan formula on a finite space.
pub fn dv_scalar(p: &[f64], phi: &[f64], alpha: f64, q: Option<&[f64]>) -> Result<DvCheck> {
    check_alpha(alpha)?;
    if p.len() != phi.len() || q.is_some_and(|q| q.len() != p.len()) {
        return Err(RobustError::Invalid("length mismatch".into()));
    }
    check_distribution(p, "p")?;
    let shift = p
        .iter()
        .zip(phi)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(_, &f)| alpha * f)
        .fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = p.iter().zip(phi).map(|(&pi, &f)| pi * (alpha * f - shift).exp()).collect();
    let z: f64 = w.iter().sum();
    let lhs = (shift + z.ln()) / alpha;
    let optimizer: Vec<f64> = w.iter().map(|x| x / z).collect();
    let value = |q: &[f64]| -> Result<f64> {
        let mean: f64 = q.iter().zip(phi).map(|(a, b)| a * b).sum();
        Ok(mean - kl(q, p)? / alpha)
    };
    let identity_residual = (lhs - value(&optimizer)?).abs();
    let (q_value, q_slack) = match q {
        Some(q) => {
            check_distribution(q, "q")?;
            (Some(value(q)?), Some(kl(q, &optimizer)? / alpha))
        }
        None => (None, None),
    };
    Ok(DvCheck {
        lhs,
        optimizer,
        identity_residual,
        q_value,
        q_slack,
    })
}

/// Aggregates edge probabilities `q_e` into a state kernel.
fn state_kernel(snap: &Snapshot, q: &[f64]) -> Matrix {
    let n = snap.n_states();
    let mut m = Matrix::zeros(n, n);
    for (e, &qe) in snap.edges().iter().zip(q) {
        m[(e.from, e.to)] += qe;
    }
    m
}

/// `E_{pi_Q}[C] - (1/alpha) E_{pi_Q}[KL(Q || P)]` for an edge law `q`
/// (one probability per snapshot edge, summing to one per state).
pub fn kl_lower_bound_edges(snap: &Snapshot, alpha: f64, q: &[f64]) -> Result<f64> {
    check_alpha(alpha)?;
    let edges = snap.edges();
    if q.len() != edges.len() {
        return Err(RobustError::Invalid(format!(
            "expected {} edge probabilities, got {}",
            edges.len(),
            q.len()
        )));
    }
    let n = snap.n_states();
    let mut sums = vec![0.0; n];
    for (e, &qe) in edges.iter().zip(q) {
        if !(qe >= 0.0) {
            return Err(RobustError::Invalid("edge probabilities must be nonnegative".into()));
        }
        sums[e.from] += qe;
    }
    if let Some(x) = sums.iter().position(|s| (s - 1.0).abs() > STOCHASTIC_TOL) {
        return Err(RobustError::Invalid(format!("edge law of state {x} sums to {}", sums[x])));
    }
    let qs = state_kernel(snap, q);
    if !irreducible(&support(&qs)) {
        return Err(RobustError::NotIrreducible);
    }
    let pi = stationary(&qs)?;
    let mut value = 0.0;
    for (i, (e, &qe)) in edges.iter().zip(q).enumerate() {
        if qe > 0.0 {
            if !(e.prob > 0.0) {
                return Err(RobustError::SupportMismatch { index: i, mass: qe });
            }
            value += pi[e.from] * qe * (e.cost - (qe / e.prob).ln() / alpha);
        }
    }
    Ok(value)
}

/// State-kernel form of [`kl_lower_bound_edges`] for chains.
pub fn kl_lower_bound(model: &dyn RiskModel, theta: &[f64], alpha: f64, q: &Matrix) -> Result<f64> {
    let snap = model.snapshot(theta)?;
    if snap.has_actions() {
        return Err(RobustError::ActionModel);
    }
    let n = snap.n_states();
    if q.rows() != n || q.cols() != n {
        return Err(RobustError::Invalid(format!("Q must be {n}x{n}")));
    }
    let p = snap.kernel();
    for x in 0..n {
        for y in 0..n {
            if q[(x, y)] > 0.0 && !(p[(x, y)] > 0.0) {
                return Err(RobustError::SupportMismatch {
                    index: x * n + y,
                    mass: q[(x, y)],
                });
            }
        }
    }
    let qe: Vec<f64> = snap.edges().iter().map(|e| q[(e.from, e.to)]).collect();
    kl_lower_bound_edges(&snap, alpha, &qe)
}

/// Twisted edge law `p_e exp(alpha c_e) h(to) / (lambda h(from))`.
pub fn twisted_edges(snap: &Snapshot, sol: &spectral::SpectralSolution, alpha: f64) -> Vec<f64> {
    let mut q: Vec<f64> = snap
        .edges()
        .iter()
        .map(|e| e.prob * (alpha * e.cost).exp() * sol.h[e.to] / (sol.lambda * sol.h[e.from]))
        .collect();
    let mut sums = vec![0.0; snap.n_states()];
    for (e, &v) in snap.edges().iter().zip(&q) {
        sums[e.from] += v;
    }
    for (e, v) in snap.edges().iter().zip(q.iter_mut()) {
        *v /= sums[e.from];
    }
    q
}

/// Risk point attained by the twisted kernel at `alpha`.
pub fn optimal_tilt(model: &dyn RiskModel, theta: &[f64], alpha: f64) -> Result<RiskPoint> {
    check_alpha(alpha)?;
    let snap = model.snapshot(theta)?;
    let sol = spectral::solve_snapshot(&snap, alpha, PerronOptions::default())?;
    let q = twisted_edges(&snap, &sol, alpha);
    let mut rho = 0.0;
    let mut beta = 0.0;
    for (e, &qe) in snap.edges().iter().zip(&q) {
        if qe > 0.0 {
            let w = sol.pi_check[e.from] * qe;
            rho += w * e.cost;
            beta += w * (qe / e.prob).ln();
        }
    }
    let e_alpha = sol.log_lambda / alpha;
    Ok(RiskPoint {
        alpha,
        e_alpha,
        beta_alpha: beta,
        rho_at_beta: rho,
        residual: (e_alpha - (rho - beta / alpha)).abs(),
    })
}

/// Random edge law on the support of `snap`: a flat Dirichlet draw per
/// state, mixed half and half with the reference law so that the support
/// (and hence irreducibility) is preserved.
pub fn random_edge_law<R: Rng>(snap: &Snapshot, rng: &mut R) -> Vec<f64> {
    let edges = snap.edges();
    let draws: Vec<f64> = edges.iter().map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let mut sums = vec![0.0; snap.n_states()];
    for (e, d) in edges.iter().zip(&draws) {
        sums[e.from] += d;
    }
    edges
        .iter()
        .zip(&draws)
        .map(|(e, d)| 0.5 * e.prob + 0.5 * d / sums[e.from])
        .collect()
}

/// State-kernel analogue of [`random_edge_law`].
pub fn random_kernel<R: Rng>(p: &Matrix, rng: &mut R) -> Matrix {
    let n = p.rows();
    let mut q = Matrix::zeros(n, n);
    for x in 0..n {
        let d: Vec<f64> = (0..n)
            .map(|y| if p[(x, y)] > 0.0 { -(1.0 - rng.gen::<f64>()).ln() } else { 0.0 })
            .collect();
        let s: f64 = d.iter().sum();
        for y in 0..n {
            q[(x, y)] = 0.5 * p[(x, y)] + 0.5 * d[y] / s;
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn entropic_risk_examples() {
        let one = fixtures::one_state(0.7);
        for a in [0.1, 1.0, 7.0] {
            assert!((entropic_risk(&one, &[], a).unwrap() - 0.7).abs() < 1e-12);
        }
        let a = fixtures::chain_a();
        assert!((entropic_risk(&a, &[], 1.0).unwrap() - 2.5f64.ln()).abs() < 1e-10);
        assert!((entropic_risk(&a, &[], 1e-4).unwrap() - 2f64.ln()).abs() < 1e-3);
        assert!((entropic_risk(&a, &[], 50.0).unwrap() - 4f64.ln()).abs() < 0.05);
        let (avg, max) = risk_limits(&a, &[]).unwrap();
        assert!((avg - 2f64.ln()).abs() < 1e-12 && (max - 4f64.ln()).abs() < 1e-15);
        assert!(entropic_risk(&a, &[], 0.0).is_err());
    }

    #[test]
    fn dv_examples() {
        let r = dv_scalar(&[0.3, 0.7], &[0.0, 0.0], 2.0, None).unwrap();
        assert!(r.lhs.abs() < 1e-15);
        assert!((r.optimizer[0] - 0.3).abs() < 1e-15);
        let r = dv_scalar(&[0.5, 0.5], &[0.0, 4f64.ln()], 1.0, Some(&[0.5, 0.5])).unwrap();
        assert!((r.lhs - 2.5f64.ln()).abs() < 1e-14);
        assert!((r.optimizer[0] - 0.2).abs() < 1e-14 && (r.optimizer[1] - 0.8).abs() < 1e-14);
        assert!(r.identity_residual < 1e-12);
        assert!((r.lhs - r.q_value.unwrap() - r.q_slack.unwrap()).abs() < 1e-12);
        assert!(matches!(
            dv_scalar(&[1.0, 0.0], &[0.0, 1.0], 1.0, Some(&[0.5, 0.5])),
            Err(RobustError::SupportMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn chain_a_tilt() {
        let a = fixtures::chain_a();
        let r = optimal_tilt(&a, &[], 1.0).unwrap();
        assert!((r.e_alpha - 0.91629).abs() < 1e-4);
        assert!((r.beta_alpha - 0.19274).abs() < 1e-4);
        assert!((r.rho_at_beta - 1.10904).abs() < 1e-4);
        assert!(r.residual < 1e-8);
        // the twisted kernel is itself a feasible Q
        let snap = a.snapshot(&[]).unwrap();
        let sol = spectral::solve_snapshot(&snap, 1.0, Default::default()).unwrap();
        let v = kl_lower_bound(&a, &[], 1.0, &sol.twisted).unwrap();
        assert!((v - r.e_alpha).abs() < 1e-8);
        let v = kl_lower_bound(&a, &[], 1.0, &snap.kernel()).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn constant_cost_tilt_is_trivial() {
        let p = fixtures::random_stochastic(&mut crate::rng::stream(2, 0), 4);
        let m = crate::model::LogitMixtureChain::fixed(p, vec![0.3; 4], 0).unwrap();
        let r = optimal_tilt(&m, &[], 2.0).unwrap();
        assert!(r.beta_alpha.abs() < 1e-10);
        assert!((r.rho_at_beta - 0.3).abs() < 1e-10 && (r.e_alpha - 0.3).abs() < 1e-10);
    }

    #[test]
    fn mdp_edge_bounds() {
        let m = fixtures::mdp_2x2();
        let theta = [0.3, -0.2, 0.1, 0.5];
        let snap = m.snapshot(&theta).unwrap();
        let e = entropic_risk(&m, &theta, 1.5).unwrap();
        let mut rng = crate::rng::stream(8, 0);
        for _ in 0..20 {
            let q = random_edge_law(&snap, &mut rng);
            assert!(kl_lower_bound_edges(&snap, 1.5, &q).unwrap() <= e + 1e-10);
        }
        let r = optimal_tilt(&m, &theta, 1.5).unwrap();
        assert!(r.residual < 1e-8);
        assert!(matches!(kl_lower_bound(&m, &theta, 1.5, &snap.kernel()), Err(RobustError::ActionModel)));
    }

    #[test]
    fn rejects_inadmissible_kernels() {
        let a = fixtures::chain_a();
        let id = Matrix::identity(2);
        assert!(matches!(kl_lower_bound(&a, &[], 1.0, &id), Err(RobustError::NotIrreducible)));
        let p = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.5, 0.5]]).unwrap();
        let m = crate::model::LogitMixtureChain::fixed(p, vec![0.0, 1.0], 0).unwrap();
        let q = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert!(matches!(kl_lower_bound(&m, &[], 1.0, &q), Err(RobustError::SupportMismatch { .. })));
    }

    #[test]
    fn stationary_handles_periodic_kernels() {
        let q = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let pi = stationary(&q).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-15);
    }
}
