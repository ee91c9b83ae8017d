//! Regeneration-cycle machinery.
//!
//! With `A_L(x, y) = exp(alpha C(x) - L) P(x, y)` (edge-aggregated for MDPs),
//! split off the recurrent state `x*`:
//!
//! ```text
//! a0 = A_L(x*, x*)      r = A_L(x*, others)
//! b  = A_L(others, x*)  B = A_L(others, others)
//! ```
//!
//! The first-passage weights `u = (I - B)^{-1} b` give
//! `g(L) = a0 + r u`, `h(x) = u(x)` off `x*`, and
//! `dg/dL = -g - r (I - B)^{-1} u`. `g` is finite iff `rho(B) < 1`.

use crate::linalg::{solve_vec, spectral_radius_below, Matrix};
use crate::model::{ModelError, Snapshot};
use crate::rng::CycleRng;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

/// Margin below 1 required of `rho(B)` before solving.
pub const RADIUS_GUARD: f64 = 1e-10;
/// Shift applied to `Lambda_theta` when the guard trips from rounding.
pub const GUARD_SHIFT: f64 = 1e-9;
pub const DEFAULT_CYCLE_CAP: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegenError {
    #[error("first-passage system is singular despite passing the radius guard")]
    SingularSystem,
    #[error("g(theta, Lambda) diverges at Lambda = {0}")]
    Divergent(f64),
    #[error("cycle exceeded {cap} steps without returning to the recurrent state")]
    CycleCapExceeded { cap: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = RegenError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum GValue {
    Finite(f64),
    Divergent,
}

impl GValue {
    pub fn value(self) -> f64 {
        match self {
            GValue::Finite(v) => v,
            GValue::Divergent => f64::INFINITY,
        }
    }
    pub fn is_finite(self) -> bool {
        matches!(self, GValue::Finite(_))
    }
}

struct Blocks {
    others: Vec<usize>,
    a0: f64,
    r: Vec<f64>,
    b: Vec<f64>,
    i_minus_b: Matrix,
    big_b: Matrix,
}

fn blocks(snap: &Snapshot, alpha: f64, lambda: f64) -> Blocks {
    let a = snap.hat_kernel(alpha).scale((-lambda).exp());
    let xs = snap.recurrent_state();
    let others: Vec<usize> = (0..snap.n_states()).filter(|&x| x != xs).collect();
    let big_b = a.principal(&others);
    let mut i_minus_b = big_b.scale(-1.0);
    for i in 0..others.len() {
        i_minus_b[(i, i)] += 1.0;
    }
    Blocks {
        a0: a[(xs, xs)],
        r: others.iter().map(|&y| a[(xs, y)]).collect(),
        b: others.iter().map(|&x| a[(x, xs)]).collect(),
        others,
        i_minus_b,
        big_b,
    }
}

fn first_passage(bl: &Blocks) -> Result<Option<Vec<f64>>> {
    if bl.others.is_empty() {
        return Ok(Some(Vec::new()));
    }
    if !spectral_radius_below(&bl.big_b, 1.0 - RADIUS_GUARD) {
        return Ok(None);
    }
    solve_vec(&bl.i_minus_b, &bl.b)
        .map(Some)
        .ok_or(RegenError::SingularSystem)
}

/// `g(theta, Lambda) = E_{x*}[exp(sum_{i<tau} (alpha C(Phi_i) - Lambda))]`.
pub fn g_exact(snap: &Snapshot, alpha: f64, lambda: f64) -> Result<GValue> {
    let bl = blocks(snap, alpha, lambda);
    Ok(match first_passage(&bl)? {
        Some(u) => GValue::Finite(bl.a0 + crate::linalg::dot(&bl.r, &u)),
        None => GValue::Divergent,
    })
}

/// `dg/dLambda` at a point where `g` is finite; strictly negative.
pub fn dg_dlambda_exact(snap: &Snapshot, alpha: f64, lambda: f64) -> Result<f64> {
    let bl = blocks(snap, alpha, lambda);
    let u = first_passage(&bl)?.ok_or(RegenError::Divergent(lambda))?;
    let g = bl.a0 + crate::linalg::dot(&bl.r, &u);
    if u.is_empty() {
        return Ok(-g);
    }
    let z = solve_vec(&bl.i_minus_b, &u).ok_or(RegenError::SingularSystem)?;
    Ok(-g - crate::linalg::dot(&bl.r, &z))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirstPassage {
    /// `h(x) = E_x[exp(sum_{i<tau} (alpha C - Lambda))]`; at `x*` this is `g`.
    pub h: Vec<f64>,
    /// Shift added to `Lambda` when the radius guard tripped from rounding.
    pub shift: f64,
}

/// Relative value function as a first-passage expectation at `Lambda_theta`.
pub fn h_via_first_passage(snap: &Snapshot, alpha: f64, lambda_theta: f64) -> Result<FirstPassage> {
    for shift in [0.0, GUARD_SHIFT] {
        let bl = blocks(snap, alpha, lambda_theta + shift);
        if let Some(u) = first_passage(&bl)? {
            let mut h = vec![0.0; snap.n_states()];
            h[snap.recurrent_state()] = bl.a0 + crate::linalg::dot(&bl.r, &u);
            for (k, &x) in bl.others.iter().enumerate() {
                h[x] = u[k];
            }
            if shift != 0.0 {
                log::warn!("radius guard tripped at Lambda_theta; retried with shift {shift:e}");
            }
            return Ok(FirstPassage { h, shift });
        }
    }
    Err(RegenError::Divergent(lambda_theta))
}

/// One excursion from the recurrent state back to it.
///
/// Per-step scores and cost gradients are stored flat with stride
/// `n_params`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cycle {
    pub states: Vec<usize>,
    pub actions: Option<Vec<usize>>,
    pub costs: Vec<f64>,
    pub scores: Vec<f64>,
    pub cost_grads: Vec<f64>,
    pub n_params: usize,
}

impl Cycle {
    pub fn tau(&self) -> usize {
        self.states.len()
    }

    pub fn score(&self, i: usize) -> &[f64] {
        &self.scores[i * self.n_params..(i + 1) * self.n_params]
    }

    pub fn cost_grad(&self, i: usize) -> &[f64] {
        &self.cost_grads[i * self.n_params..(i + 1) * self.n_params]
    }

    pub fn score_sum(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n_params];
        for i in 0..self.tau() {
            crate::linalg::axpy(&mut s, 1.0, self.score(i));
        }
        s
    }

    pub fn cost_grad_sum(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n_params];
        for i in 0..self.tau() {
            crate::linalg::axpy(&mut s, 1.0, self.cost_grad(i));
        }
        s
    }

    pub fn cost_sum(&self) -> f64 {
        self.costs.iter().sum()
    }
}

fn pick<'a, I: Iterator<Item = (usize, f64)>>(mut items: I, u: f64) -> Option<usize> {
    let mut acc = 0.0;
    let mut last = None;
    for (i, p) in items.by_ref() {
        acc += p;
        last = Some(i);
        if u < acc {
            return last;
        }
    }
    last
}

/// Simulates from `x*` until the first return, recording per-step costs,
/// scores and cost gradients.
pub fn sample_cycle(snap: &Snapshot, rng: &mut CycleRng, cap: usize) -> Result<Cycle> {
    let xs = snap.recurrent_state();
    let l = snap.n_params();
    let with_actions = snap.has_actions();
    let mut cyc = Cycle {
        states: Vec::new(),
        actions: with_actions.then(Vec::new),
        costs: Vec::new(),
        scores: Vec::new(),
        cost_grads: Vec::new(),
        n_params: l,
    };
    let mut x = xs;
    loop {
        if cyc.states.len() >= cap {
            return Err(RegenError::CycleCapExceeded { cap });
        }
        let groups = snap.groups_of(x);
        let group = if with_actions {
            let u: f64 = rng.gen();
            let gi = pick(groups.iter().map(|g| g.prob).enumerate(), u).expect("state has actions");
            &groups[gi]
        } else {
            &groups[0]
        };
        let u: f64 = rng.gen();
        let edges = &snap.edges()[group.edges.clone()];
        let k = pick(edges.iter().map(|e| e.cond).enumerate(), u).expect("state has successors");
        let ei = group.edges.start + k;
        let e = &snap.edges()[ei];
        cyc.states.push(x);
        if let (Some(acts), Some(a)) = (cyc.actions.as_mut(), group.action) {
            acts.push(a);
        }
        cyc.costs.push(e.cost);
        cyc.scores.extend_from_slice(snap.edge_score(ei));
        cyc.cost_grads.extend_from_slice(snap.edge_cost_grad(ei));
        x = e.to;
        if x == xs {
            return Ok(cyc);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::RiskModel;

    fn chain_a() -> Snapshot {
        fixtures::chain_a().snapshot(&[]).unwrap()
    }

    #[test]
    fn one_state_g() {
        let s = fixtures::one_state(0.7).snapshot(&[]).unwrap();
        let g = g_exact(&s, 2.0, 1.4).unwrap().value();
        assert!((g - 1.0).abs() < 1e-15);
        let g = g_exact(&s, 2.0, 0.4).unwrap().value();
        assert!((g - 1f64.exp()).abs() < 1e-14);
        let d = dg_dlambda_exact(&s, 2.0, 0.4).unwrap();
        assert!((d + 1f64.exp()).abs() < 1e-14);
        let fp = h_via_first_passage(&s, 2.0, 1.4).unwrap();
        assert!((fp.h[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn chain_a_geometric_series() {
        let s = chain_a();
        // g(L) = 0.5 e^{-L} / (1 - 2 e^{-L})
        let g = g_exact(&s, 1.0, 2.5f64.ln()).unwrap().value();
        assert!((g - 1.0).abs() < 1e-14);
        let g = g_exact(&s, 1.0, 3f64.ln()).unwrap().value();
        assert!((g - 0.5).abs() < 1e-14);
        assert_eq!(g_exact(&s, 1.0, 2f64.ln() - 0.01).unwrap(), GValue::Divergent);
        assert!(matches!(
            dg_dlambda_exact(&s, 1.0, 2f64.ln() - 0.01),
            Err(RegenError::Divergent(_))
        ));
    }

    #[test]
    fn chain_a_derivative_and_h() {
        let s = chain_a();
        let d = dg_dlambda_exact(&s, 1.0, 2.5f64.ln()).unwrap();
        assert!((d + 5.0).abs() < 1e-12, "{d}");
        let fp = h_via_first_passage(&s, 1.0, 2.5f64.ln()).unwrap();
        assert_eq!(fp.shift, 0.0);
        assert!((fp.h[0] - 1.0).abs() < 1e-14 && (fp.h[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn one_state_cycles_have_length_one() {
        let s = fixtures::one_state(0.2).snapshot(&[]).unwrap();
        let mut rng = crate::rng::stream(1, 0);
        for _ in 0..10 {
            let c = sample_cycle(&s, &mut rng, 10).unwrap();
            assert_eq!(c.tau(), 1);
            assert_eq!(c.states, vec![0]);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let p = Matrix::from_rows(&[vec![0.001, 0.999], vec![0.001, 0.999]]).unwrap();
        let c = crate::model::LogitMixtureChain::fixed(p, vec![0.0, 0.0], 0).unwrap();
        let s = c.snapshot(&[]).unwrap();
        let mut rng = crate::rng::stream(5, 0);
        let mut hit = false;
        for _ in 0..50 {
            if let Err(RegenError::CycleCapExceeded { cap: 3 }) = sample_cycle(&s, &mut rng, 3) {
                hit = true;
            }
        }
        assert!(hit);
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = fixtures::mdp_2x2().snapshot(&[0.1, 0.2, -0.3, 0.4]).unwrap();
        let mut a = crate::rng::stream(9, 2);
        let mut b = crate::rng::stream(9, 2);
        for _ in 0..100 {
            assert_eq!(
                sample_cycle(&s, &mut a, 1000).unwrap(),
                sample_cycle(&s, &mut b, 1000).unwrap()
            );
        }
    }

    #[test]
    fn single_action_mdp_samples_like_chain() {
        let mdp = crate::model::MdpModel::new(
            vec![vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]],
            vec![vec![0.0], vec![4f64.ln()]],
            0,
        )
        .unwrap();
        let s = mdp.snapshot(&[0.0, 0.0]).unwrap();
        assert!(s.has_actions());
        let mut rng = crate::rng::stream(4, 0);
        let c = sample_cycle(&s, &mut rng, 100).unwrap();
        assert_eq!(c.actions.as_ref().unwrap().len(), c.tau());
        assert!(c.actions.unwrap().iter().all(|&a| a == 0));
        // one-action scores are identically zero
        assert!(c.scores.iter().all(|&v| v == 0.0));
    }
}
