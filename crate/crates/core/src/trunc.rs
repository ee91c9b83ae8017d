//! Truncated cycle estimators and truncated fixed points.
//!
//! Everything is evaluated from `ln H = sum_i (alpha c_i - Lambda)`; the
//! comparison `H > M` is made as `ln H > ln M`, so `H` itself is only
//! exponentiated where it is reported.

use crate::linalg::{axpy, Matrix};
use crate::model::{ModelError, RiskModel, Snapshot};
use crate::regen::{sample_cycle, Cycle, RegenError, DEFAULT_CYCLE_CAP};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

/// Above this `ln H` the raw weight is reported as `+inf`.
pub const LN_OVERFLOW: f64 = 700.0;
/// Largest chain the cycle-law enumerator accepts.
pub const ENUMERATE_MAX_STATES: usize = 8;
pub const DEFAULT_LAMBDA_TOL: f64 = 1e-10;
/// Bisection never runs more than this many halvings.
const MAX_BISECTIONS: usize = 200;
const MAX_DOUBLINGS: usize = 60;
/// Bin width for merging partial cost sums in the enumerator.
const COST_QUANTUM: f64 = 1e-9;
pub const DEFAULT_MAX_DEPTH: usize = 1 << 15;
const MAX_ALIVE_BINS: usize = 4_000_000;
const TAIL_MAX_STEPS: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TruncError {
    #[error("cycle carries {got} score entries, expected {expected}")]
    MissingScores { expected: usize, got: usize },
    #[error("enumeration depth {depth} leaves a tail bound of {bound:e}, above the tolerance {tol:e}")]
    DepthTooSmall { depth: usize, bound: f64, tol: f64 },
    #[error("enumeration needs at most {max} states, got {got}")]
    TooManyStates { max: usize, got: usize },
    #[error("enumeration exceeded {0} live partial paths")]
    TooManyPaths(usize),
    #[error("no sign change of g - 1 found within {0} doublings")]
    BracketFailure(usize),
    #[error("no power of two below 2^40 meets the grid gap {target:e} for rung {rung}")]
    LadderExhausted { rung: usize, target: f64 },
    #[error("invalid truncation: {0}")]
    Invalid(String),
    #[error(transparent)]
    Regen(#[from] RegenError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Spectral(#[from] crate::spectral::SpectralError),
}

pub type Result<T, E = TruncError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruncationMode {
    Hard,
    Smooth,
}

/// `ln H` for a cycle.
pub fn ln_cycle_weight(cycle: &Cycle, alpha: f64, lambda: f64) -> f64 {
    cycle.costs.iter().map(|&c| alpha * c - lambda).sum()
}

/// `H`, or `+inf` once `ln H` exceeds [`LN_OVERFLOW`].
pub fn cycle_weight(cycle: &Cycle, alpha: f64, lambda: f64) -> f64 {
    weight_from_ln(ln_cycle_weight(cycle, alpha, lambda))
}

pub fn weight_from_ln(ln_h: f64) -> f64 {
    if ln_h > LN_OVERFLOW {
        f64::INFINITY
    } else {
        ln_h.exp()
    }
}

pub fn hard_trunc(h: f64, m: f64) -> f64 {
    h.min(m)
}

pub fn hard_trunc_ln(ln_h: f64, ln_m: f64) -> f64 {
    if ln_h > ln_m {
        ln_m.exp()
    } else {
        ln_h.exp()
    }
}

fn taylor(u: f64, terms: usize) -> f64 {
    let mut s = 0.0;
    let mut t = 1.0;
    for i in 0..terms {
        s += t;
        t *= u / (i + 1) as f64;
    }
    s
}

/// `G^(M)` from `ln H` and `ln M`.
pub fn smooth_trunc_ln(ln_h: f64, ln_m: f64) -> f64 {
    if ln_h > ln_m {
        ln_m.exp() * taylor(ln_h - ln_m, 5)
    } else {
        ln_h.exp()
    }
}

/// `W^(M)` from `ln H` and `ln M`.
pub fn smooth_trunc_deriv_weight_ln(ln_h: f64, ln_m: f64) -> f64 {
    if ln_h > ln_m {
        ln_m.exp() * taylor(ln_h - ln_m, 4)
    } else {
        ln_h.exp()
    }
}

pub fn smooth_trunc(h: f64, m: f64) -> f64 {
    smooth_trunc_ln(h.ln(), m.ln())
}

pub fn smooth_trunc_deriv_weight(h: f64, m: f64) -> f64 {
    smooth_trunc_deriv_weight_ln(h.ln(), m.ln())
}

/// Truncated weight for `mode`; `ln_m = +inf` disables truncation.
pub fn truncate_ln(mode: TruncationMode, ln_h: f64, ln_m: f64) -> f64 {
    match mode {
        TruncationMode::Hard => hard_trunc_ln(ln_h, ln_m),
        TruncationMode::Smooth => smooth_trunc_ln(ln_h, ln_m),
    }
}

/// `G^(M)` evaluated on a cycle.
pub fn cycle_trunc(cycle: &Cycle, alpha: f64, lambda: f64, m: f64, mode: TruncationMode) -> f64 {
    truncate_ln(mode, ln_cycle_weight(cycle, alpha, lambda), m.ln())
}

/// `F^(M) = G^(M) sum_i L_i + W^(M) alpha sum_i grad C_i`.
pub fn grad_estimate(cycle: &Cycle, alpha: f64, lambda: f64, m: f64) -> Result<Vec<f64>> {
    let expected = cycle.tau() * cycle.n_params;
    if cycle.scores.len() != expected || cycle.cost_grads.len() != expected {
        return Err(TruncError::MissingScores {
            expected,
            got: cycle.scores.len().min(cycle.cost_grads.len()),
        });
    }
    let ln_h = ln_cycle_weight(cycle, alpha, lambda);
    let ln_m = m.ln();
    let g = smooth_trunc_ln(ln_h, ln_m);
    let w = smooth_trunc_deriv_weight_ln(ln_h, ln_m);
    let mut f = vec![0.0; cycle.n_params];
    axpy(&mut f, g, &cycle.score_sum());
    axpy(&mut f, w * alpha, &cycle.cost_grad_sum());
    Ok(f)
}

/// A value with an absolute error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub error_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GMethod {
    Enumerate { depth: usize, tol: f64 },
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy)]
struct Bin {
    prob: f64,
    /// Probability-weighted mean cost sum, kept as a running mean so that
    /// subnormal probabilities do not corrupt it.
    cost: f64,
    lo: f64,
    hi: f64,
}

impl Bin {
    fn merge(&mut self, prob: f64, cost: f64, lo: f64, hi: f64) {
        let total = self.prob + prob;
        self.cost = (self.cost + (cost - self.cost) * (prob / total)).clamp(self.lo.min(lo), self.hi.max(hi));
        self.prob = total;
        self.lo = self.lo.min(lo);
        self.hi = self.hi.max(hi);
    }
    fn cost(&self) -> f64 {
        self.cost
    }
}

/// Law of `(tau, sum of costs)` over excursions from the recurrent state,
/// enumerated exactly up to a depth.
///
/// Paths are merged when they sit in the same state with cost sums in the
/// same `1e-9` bin; the spread of merged sums is tracked and charged to the
/// error bound. Because the law does not depend on `Lambda`, `M` or the
/// truncation mode, one enumeration serves every evaluation at a fixed
/// parameter.
#[derive(Debug, Clone)]
pub struct CycleLaw {
    x_star: usize,
    edges: Vec<(usize, usize, f64, f64)>,
    out_edges: Vec<Vec<usize>>,
    restricted: Matrix,
    into_star: Vec<f64>,
    others: Vec<usize>,
    max_cost: f64,
    depth: usize,
    /// `(tau, cost sum, probability)` of completed excursions.
    outcomes: Vec<(usize, f64, f64)>,
    alive: HashMap<(usize, i64), Bin>,
    spread: f64,
}

impl CycleLaw {
    pub fn new(snap: &Snapshot) -> Result<Self> {
        let n = snap.n_states();
        if n > ENUMERATE_MAX_STATES {
            return Err(TruncError::TooManyStates {
                max: ENUMERATE_MAX_STATES,
                got: n,
            });
        }
        let x_star = snap.recurrent_state();
        let edges: Vec<_> = snap
            .edges()
            .iter()
            .filter(|e| e.prob > 0.0)
            .map(|e| (e.from, e.to, e.prob, e.cost))
            .collect();
        let mut out_edges = vec![Vec::new(); n];
        for (i, e) in edges.iter().enumerate() {
            out_edges[e.0].push(i);
        }
        let p = snap.kernel();
        let others: Vec<usize> = (0..n).filter(|&x| x != x_star).collect();
        let max_cost = edges.iter().map(|e| e.3).fold(f64::NEG_INFINITY, f64::max);
        let mut alive = HashMap::new();
        alive.insert(
            (x_star, 0),
            Bin {
                prob: 1.0,
                cost: 0.0,
                lo: 0.0,
                hi: 0.0,
            },
        );
        let mut law = Self {
            x_star,
            restricted: p.principal(&others),
            into_star: others.iter().map(|&x| p[(x, x_star)]).collect(),
            others,
            edges,
            out_edges,
            max_cost,
            depth: 0,
            outcomes: Vec::new(),
            alive,
            spread: 0.0,
        };
        law.extend_to(1)?;
        Ok(law)
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Probability that the excursion is longer than the current depth.
    pub fn survival(&self) -> f64 {
        self.alive.values().map(|b| b.prob).sum()
    }

    /// Extends the enumeration to excursions of length `depth`.
    pub fn extend_to(&mut self, depth: usize) -> Result<()> {
        while self.depth < depth && !self.alive.is_empty() {
            let mut next: HashMap<(usize, i64), Bin> = HashMap::with_capacity(self.alive.len() * 2);
            let mut done: HashMap<(usize, i64), Bin> = HashMap::new();
            for (&(x, _), bin) in &self.alive {
                let s = bin.cost();
                for &ei in &self.out_edges[x] {
                    let (_, to, p, c) = self.edges[ei];
                    let prob = bin.prob * p;
                    if prob == 0.0 {
                        continue;
                    }
                    let cost = s + c;
                    let (lo, hi) = (bin.lo + c, bin.hi + c);
                    let key = (cost / COST_QUANTUM).round() as i64;
                    let fresh = Bin {
                        prob,
                        cost,
                        lo,
                        hi,
                    };
                    let slot = if to == self.x_star {
                        done.entry((to, key))
                    } else {
                        next.entry((to, key))
                    };
                    use std::collections::hash_map::Entry;
                    match slot {
                        Entry::Occupied(mut o) => o.get_mut().merge(prob, cost, lo, hi),
                        Entry::Vacant(v) => {
                            v.insert(fresh);
                        }
                    }
                }
            }
            if next.len() > MAX_ALIVE_BINS {
                return Err(TruncError::TooManyPaths(MAX_ALIVE_BINS));
            }
            self.depth += 1;
            let tau = self.depth;
            let mut done: Vec<_> = done.into_iter().collect();
            done.sort_by_key(|(k, _)| *k);
            for (_, b) in done {
                self.spread = self.spread.max(b.hi - b.lo);
                self.outcomes.push((tau, b.cost(), b.prob));
            }
            for b in next.values() {
                self.spread = self.spread.max(b.hi - b.lo);
            }
            self.alive = next;
        }
        Ok(())
    }

    /// Bound on the contribution of excursions longer than the depth.
    ///
    /// An excursion alive at depth `T` that returns at `T + k` has
    /// `ln H <= l_T + k (alpha c_max - Lambda)` with `l_T` the largest live
    /// `alpha S - T Lambda`; the return-time law past `T` follows from the
    /// live mass propagated through the restricted kernel.
    fn tail(&self, alpha: f64, lambda: f64, ln_m: f64, mode: TruncationMode) -> f64 {
        if self.alive.is_empty() {
            return 0.0;
        }
        let t = self.depth as f64;
        let lead = self
            .alive
            .values()
            .map(|b| alpha * b.hi - t * lambda)
            .fold(f64::NEG_INFINITY, f64::max);
        let step = alpha * self.max_cost - lambda;
        let pos: HashMap<usize, usize> = self.others.iter().enumerate().map(|(i, &x)| (x, i)).collect();
        let mut mass = vec![0.0; self.others.len()];
        for (&(x, _), b) in &self.alive {
            mass[pos[&x]] += b.prob;
        }
        let bound_at = |k: usize| truncate_ln(mode, lead + k as f64 * step, ln_m);
        let mut total = 0.0;
        for k in 1..=TAIL_MAX_STEPS {
            let ret: f64 = crate::linalg::dot(&mass, &self.into_star);
            let live: f64 = mass.iter().sum();
            total += ret * bound_at(k);
            mass = self.restricted.vec_mul(&mass);
            let rest: f64 = mass.iter().sum();
            if rest == 0.0 {
                return total;
            }
            // the remaining mass times the current bound; once this is
            // negligible the geometric decay of the mass dominates, and
            // mass stuck at subnormal values is treated as gone
            let negligible = rest * bound_at(k + 1) <= 1e-18 * total.max(1e-6);
            if k > 8 && negligible && (rest < live || rest < 1e-300) {
                return total + rest * bound_at(k + 1);
            }
            if !total.is_finite() {
                return f64::INFINITY;
            }
        }
        f64::INFINITY
    }

    /// `g^(M)(Lambda)` over the enumerated excursions with its error bound.
    ///
    /// `m = +inf` gives the untruncated `g`. The true value lies in
    /// `[value - binning, value + tail + binning]`.
    pub fn g(&self, alpha: f64, lambda: f64, m: f64, mode: TruncationMode) -> Estimate {
        let ln_m = m.ln();
        let value: f64 = self
            .outcomes
            .iter()
            .map(|&(tau, s, p)| p * truncate_ln(mode, alpha * s - tau as f64 * lambda, ln_m))
            .sum();
        let binning = value * ((alpha.abs() * self.spread).exp() - 1.0);
        Estimate {
            value,
            error_bound: self.tail(alpha, lambda, ln_m, mode) + binning,
        }
    }

    /// Sign of `g^(M)(Lambda) - 1`, deepening the enumeration until it is
    /// certain or `max_depth` is reached.
    fn above_one(&mut self, alpha: f64, lambda: f64, m: f64, mode: TruncationMode, max_depth: usize) -> Result<Option<bool>> {
        loop {
            let est = self.g(alpha, lambda, m, mode);
            let binning = est.value * ((alpha.abs() * self.spread).exp() - 1.0);
            if est.value - binning > 1.0 {
                return Ok(Some(true));
            }
            if est.value + est.error_bound < 1.0 {
                return Ok(Some(false));
            }
            if self.depth >= max_depth || self.alive.is_empty() {
                return Ok(None);
            }
            let next = (self.depth * 2).max(16).min(max_depth);
            self.extend_to(next)?;
        }
    }

    /// Root of `g^(M)(Lambda) = 1` by bisection.
    ///
    /// The upper bracket is `alpha c_max`, where every cycle weight is at
    /// most one. The lower bracket steps down by doubling distances until
    /// `g^(M)` provably exceeds one.
    pub fn lambda(&mut self, alpha: f64, m: f64, mode: TruncationMode, tol: f64) -> Result<f64> {
        let hi0 = alpha * self.max_cost;
        let mut hi = hi0;
        let mut lo = None;
        let mut d = 1.0;
        for _ in 0..MAX_DOUBLINGS {
            let cand = hi0 - d;
            match self.above_one(alpha, cand, m, mode, DEFAULT_MAX_DEPTH)? {
                Some(true) => {
                    lo = Some(cand);
                    break;
                }
                Some(false) => {
                    hi = cand;
                    d *= 2.0;
                }
                None => d *= 2.0,
            }
        }
        let mut lo = lo.ok_or(TruncError::BracketFailure(MAX_DOUBLINGS))?;
        for _ in 0..MAX_BISECTIONS {
            if hi - lo <= tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            match self.above_one(alpha, mid, m, mode, DEFAULT_MAX_DEPTH)? {
                Some(true) => lo = mid,
                Some(false) => hi = mid,
                None => {
                    let est = self.g(alpha, mid, m, mode);
                    log::warn!(
                        "g^(M) - 1 undecided at Lambda = {mid} (value {}, bound {:e}); stopping bisection",
                        est.value,
                        est.error_bound
                    );
                    // |dg/dLambda| >= g, so the root lies within this distance of mid
                    return if (est.value - 1.0).abs() + est.error_bound <= tol {
                        Ok(mid)
                    } else {
                        Err(TruncError::DepthTooSmall {
                            depth: self.depth,
                            bound: est.error_bound,
                            tol,
                        })
                    };
                }
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// `g^(M)(theta, Lambda)` by exact enumeration or Monte Carlo.
pub fn g_trunc(
    model: &dyn RiskModel,
    theta: &[f64],
    alpha: f64,
    lambda: f64,
    m: f64,
    mode: TruncationMode,
    method: GMethod,
) -> Result<Estimate> {
    let snap = model.snapshot(theta)?;
    match method {
        GMethod::Enumerate { depth, tol } => {
            if depth == 0 {
                return Err(TruncError::Invalid("enumeration depth must be at least 1".into()));
            }
            let mut law = CycleLaw::new(&snap)?;
            law.extend_to(depth)?;
            let est = law.g(alpha, lambda, m, mode);
            if !(est.error_bound <= tol) {
                return Err(TruncError::DepthTooSmall {
                    depth,
                    bound: est.error_bound,
                    tol,
                });
            }
            Ok(est)
        }
        GMethod::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(TruncError::Invalid("sample count must be at least 1".into()));
            }
            let mut rng = crate::rng::stream(seed, 0);
            let mut mean = 0.0;
            let mut m2 = 0.0;
            for i in 0..samples {
                let c = sample_cycle(&snap, &mut rng, DEFAULT_CYCLE_CAP)?;
                let x = cycle_trunc(&c, alpha, lambda, m, mode);
                let delta = x - mean;
                mean += delta / (i + 1) as f64;
                m2 += delta * (x - mean);
            }
            let se = if samples > 1 {
                (m2 / (samples - 1) as f64 / samples as f64).sqrt()
            } else {
                f64::INFINITY
            };
            Ok(Estimate {
                value: mean,
                error_bound: se,
            })
        }
    }
}

/// Truncated fixed point `Lambda^(M)_theta`.
pub fn lambda_trunc(
    model: &dyn RiskModel,
    theta: &[f64],
    alpha: f64,
    m: f64,
    mode: TruncationMode,
    tol: f64,
) -> Result<f64> {
    if !(m > 1.0) {
        return Err(TruncError::Invalid(format!("truncation level must exceed 1, got {m}")));
    }
    let snap = model.snapshot(theta)?;
    CycleLaw::new(&snap)?.lambda(alpha, m, mode, tol)
}

/// Central-difference gradient of `Lambda^(M)_theta`.
pub fn grad_lambda_trunc(
    model: &dyn RiskModel,
    theta: &[f64],
    alpha: f64,
    m: f64,
    mode: TruncationMode,
    step: f64,
) -> Result<Vec<f64>> {
    let tol = (step * 1e-5).max(1e-12);
    let mut th = theta.to_vec();
    let mut g = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        th[i] = theta[i] + step;
        let up = lambda_trunc(model, &th, alpha, m, mode, tol)?;
        th[i] = theta[i] - step;
        let down = lambda_trunc(model, &th, alpha, m, mode, tol)?;
        th[i] = theta[i];
        g[i] = (up - down) / (2.0 * step);
    }
    Ok(g)
}

/// How `M_m` is chosen along a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TruncationSchedule {
    Fixed { m: f64 },
    Power { beta: f64 },
    Ladder { rungs: Vec<f64>, beta: f64 },
}

impl TruncationSchedule {
    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| b > 0.0 && b < 0.5;
        match self {
            Self::Fixed { m } if !(*m > 1.0) => Err(Self::bad(format!("fixed M must exceed 1, got {m}"))),
            Self::Power { beta } if !beta_ok(*beta) => Err(Self::bad(format!("beta must lie in (0, 0.5), got {beta}"))),
            Self::Ladder { rungs, beta } => {
                if !beta_ok(*beta) {
                    return Err(Self::bad(format!("beta must lie in (0, 0.5), got {beta}")));
                }
                if rungs.is_empty() || !(rungs[0] > 1.0) || rungs.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Self::bad("ladder rungs must be strictly increasing and above 1".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn bad(msg: String) -> TruncError {
        TruncError::Invalid(msg)
    }

    pub fn beta(&self) -> Option<f64> {
        match self {
            Self::Fixed { .. } => None,
            Self::Power { beta } | Self::Ladder { beta, .. } => Some(*beta),
        }
    }

    /// `M_m` for step size `gamma`.
    pub fn value(&self, gamma: f64) -> f64 {
        match self {
            Self::Fixed { m } => *m,
            Self::Power { beta } => gamma.powf(-beta),
            Self::Ladder { rungs, beta } => {
                let cap = gamma.powf(-beta);
                match rungs.iter().rev().find(|&&n| n <= cap) {
                    Some(&n) => n,
                    None => {
                        log::warn!("no ladder rung below {cap}; using the first rung {}", rungs[0]);
                        rungs[0]
                    }
                }
            }
        }
    }
}

/// `M_m` for each `m` in `range`, with `gamma(m)` the step size.
pub fn schedule_values(
    schedule: &TruncationSchedule,
    gamma: impl Fn(usize) -> f64,
    range: std::ops::Range<usize>,
) -> Vec<f64> {
    range.map(|m| schedule.value(gamma(m))).collect()
}

fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// `count` Halton points in `[lo, hi]^dim` (skipping the origin point).
pub fn halton_grid(count: usize, dim: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    const PRIMES: [usize; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];
    (1..=count)
        .map(|i| {
            (0..dim)
                .map(|d| {
                    let base = PRIMES.get(d).copied().unwrap_or_else(|| nth_prime(d));
                    lo + (hi - lo) * radical_inverse(i, base)
                })
                .collect()
        })
        .collect()
}

fn nth_prime(n: usize) -> usize {
    let mut found = 0;
    let mut k = 1;
    loop {
        k += 1;
        if (2..k).take_while(|d| d * d <= k).all(|d| k % d != 0) {
            if found == n {
                return k;
            }
            found += 1;
        }
    }
}

/// Ladder rungs `N_0 < N_1 < ..`: `N_i` is the smallest power of two (above
/// the previous rung) whose worst gap `Lambda_theta - Lambda_theta^(N_i)`
/// over `grid` is below `(i + 1)^-2`.
pub fn build_ladder(
    model: &dyn RiskModel,
    grid: &[Vec<f64>],
    alpha: f64,
    mode: TruncationMode,
    rungs: usize,
) -> Result<Vec<f64>> {
    let mut points = Vec::with_capacity(grid.len());
    for theta in grid {
        let snap = model.snapshot(theta)?;
        let exact = crate::spectral::solve_snapshot(&snap, alpha, Default::default())?.log_lambda;
        points.push((exact, CycleLaw::new(&snap)?));
    }
    let mut out: Vec<f64> = Vec::with_capacity(rungs);
    let mut k = 1u32;
    for i in 0..rungs {
        let target = ((i + 1) as f64).powi(-2);
        loop {
            if k > 40 {
                return Err(TruncError::LadderExhausted { rung: i, target });
            }
            let m = 2f64.powi(k as i32);
            let mut worst = 0.0f64;
            for (exact, law) in points.iter_mut() {
                let lt = law.lambda(alpha, m, mode, DEFAULT_LAMBDA_TOL)?;
                worst = worst.max(*exact - lt);
                if worst >= target {
                    break;
                }
            }
            k += 1;
            if worst < target {
                out.push(m);
                break;
            }
        }
    }
    Ok(out)
}
