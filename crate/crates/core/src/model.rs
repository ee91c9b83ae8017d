//! Parameterized finite Markov chains and MDPs.
//!
//! Every model is immutable and maps a parameter vector `theta` to a
//! [`Snapshot`]: a flat list of weighted transition edges, each carrying the
//! one-step cost paid when the edge is taken, the score (gradient of the log
//! transition probability) and the cost gradient. Chains contribute one edge
//! per `(x, y)` in the support with cost `C(x)`; MDPs contribute one edge per
//! `(s, a, s')` with probability `mu(s, a) P(s, a, s')` and cost `C(s, a)`.
//! The exact layer, the cycle sampler and the enumerator all work on this
//! representation, so chain and MDP code paths share one implementation.

use crate::linalg::Matrix;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

/// Tolerance for row sums when a model is constructed.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Fatal row-sum deviation reported by [`validate_chain`].
pub const ROW_SUM_FATAL: f64 = 1e-9;
/// Central finite-difference step used by [`validate_chain`].
pub const SCORE_FD_STEP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("row {row} sums to {sum} (expected 1)")]
    RowSumViolation { row: usize, sum: f64 },
    #[error("negative transition probability {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("expected {expected} parameters, got {got}")]
    ParamLength { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("model has no states")]
    Empty,
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// One transition of the chain evaluated at a fixed parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub action: Option<usize>,
    /// Unconditional one-step probability `P_theta(from, to)` contribution.
    pub prob: f64,
    /// Probability of `to` given `(from, action)`; equals `prob` for chains.
    pub cond: f64,
    /// One-step cost charged when leaving `from` along this edge.
    pub cost: f64,
}

/// Edges leaving one state under one action (chains have a single group per
/// state with `action == None` and `prob == 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct ActionGroup {
    pub state: usize,
    pub action: Option<usize>,
    pub prob: f64,
    pub edges: Range<usize>,
}

/// A model evaluated at one parameter vector.
#[derive(Debug, Clone)]
pub struct Snapshot {
    n_states: usize,
    x_star: usize,
    n_params: usize,
    c_lower: f64,
    c_upper: f64,
    edges: Vec<Edge>,
    scores: Vec<f64>,
    cost_grads: Vec<f64>,
    groups: Vec<ActionGroup>,
    state_groups: Vec<Range<usize>>,
    state_costs: Option<Vec<f64>>,
}

impl Snapshot {
    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn recurrent_state(&self) -> usize {
        self.x_star
    }
    pub fn n_params(&self) -> usize {
        self.n_params
    }
    pub fn cost_bounds(&self) -> (f64, f64) {
        (self.c_lower, self.c_upper)
    }
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }
    pub fn edge_score(&self, e: usize) -> &[f64] {
        &self.scores[e * self.n_params..(e + 1) * self.n_params]
    }
    pub fn edge_cost_grad(&self, e: usize) -> &[f64] {
        &self.cost_grads[e * self.n_params..(e + 1) * self.n_params]
    }
    pub fn groups_of(&self, state: usize) -> &[ActionGroup] {
        &self.groups[self.state_groups[state].clone()]
    }
    /// Per-state costs for chain models; `None` for MDPs, whose costs depend
    /// on the action.
    pub fn state_costs(&self) -> Option<&[f64]> {
        self.state_costs.as_deref()
    }
    /// True when the snapshot came from an MDP (action-level sampling).
    pub fn has_actions(&self) -> bool {
        self.groups.iter().any(|g| g.action.is_some())
    }

    /// Transition matrix `P_theta`.
    pub fn kernel(&self) -> Matrix {
        let mut p = Matrix::zeros(self.n_states, self.n_states);
        for e in &self.edges {
            p[(e.from, e.to)] += e.prob;
        }
        p
    }

    /// Exponentiated kernel `sum_e exp(alpha c_e) p_e` aggregated on `(from, to)`.
    pub fn hat_kernel(&self, alpha: f64) -> Matrix {
        let mut p = Matrix::zeros(self.n_states, self.n_states);
        for e in &self.edges {
            p[(e.from, e.to)] += (alpha * e.cost).exp() * e.prob;
        }
        p
    }

    /// `sum_e p_e L_e` on each `(from, to)`, i.e. the analytic `grad P_theta`.
    pub fn kernel_gradient(&self) -> Vec<Matrix> {
        let mut g = vec![Matrix::zeros(self.n_states, self.n_states); self.n_params];
        for (i, e) in self.edges.iter().enumerate() {
            for (j, s) in self.edge_score(i).iter().enumerate() {
                g[j][(e.from, e.to)] += e.prob * s;
            }
        }
        g
    }

    /// Expected one-step cost from each state under `P_theta`.
    pub fn mean_cost(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.n_states];
        for e in &self.edges {
            c[e.from] += e.prob * e.cost;
        }
        c
    }

    fn build(
        n_states: usize,
        x_star: usize,
        n_params: usize,
        (c_lower, c_upper): (f64, f64),
        raw: Vec<(ActionGroup, Vec<(Edge, Vec<f64>, Vec<f64>)>)>,
        state_costs: Option<Vec<f64>>,
    ) -> Self {
        let mut edges = Vec::new();
        let mut scores = Vec::new();
        let mut cost_grads = Vec::new();
        let mut groups = Vec::new();
        let mut state_groups = vec![0..0; n_states];
        for (mut g, es) in raw {
            let start = edges.len();
            for (e, s, c) in es {
                debug_assert_eq!(s.len(), n_params);
                edges.push(e);
                scores.extend(s);
                cost_grads.extend(c);
            }
            g.edges = start..edges.len();
            let gi = groups.len();
            let r = &mut state_groups[g.state];
            if r.start == r.end {
                *r = gi..gi + 1;
            } else {
                r.end = gi + 1;
            }
            groups.push(g);
        }
        Self {
            n_states,
            x_star,
            n_params,
            c_lower,
            c_upper,
            edges,
            scores,
            cost_grads,
            groups,
            state_groups,
            state_costs,
        }
    }
}

/// A parameterized finite chain `theta -> (P_theta, C_theta, L_theta)`.
pub trait ChainModel: Send + Sync {
    fn n_states(&self) -> usize;
    fn n_params(&self) -> usize;
    /// The common recurrent state `x*`.
    fn recurrent_state(&self) -> usize;
    /// Bounds `(C_lower, C_upper)` valid for every `theta`.
    fn cost_bounds(&self) -> (f64, f64);
    fn kernel(&self, theta: &[f64]) -> Matrix;
    fn cost(&self, theta: &[f64]) -> Vec<f64>;
    /// `L_theta(x, y)` on the support of `P_theta`, `None` elsewhere.
    fn score(&self, theta: &[f64]) -> Vec<Vec<Option<Vec<f64>>>>;
    /// `grad_theta C_theta(x)`, one vector per state.
    fn cost_grad(&self, theta: &[f64]) -> Vec<Vec<f64>>;
}

/// Anything the exact and stochastic layers can evaluate.
pub trait RiskModel: Send + Sync {
    fn n_states(&self) -> usize;
    fn n_params(&self) -> usize;
    fn recurrent_state(&self) -> usize;
    fn cost_bounds(&self) -> (f64, f64);
    fn snapshot(&self, theta: &[f64]) -> Result<Snapshot>;
}

fn check_theta(expected: usize, theta: &[f64]) -> Result<()> {
    if theta.len() != expected {
        return Err(ModelError::ParamLength {
            expected,
            got: theta.len(),
        });
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(ModelError::NonFinite("theta"));
    }
    Ok(())
}

impl<T: ChainModel> RiskModel for T {
    fn n_states(&self) -> usize {
        ChainModel::n_states(self)
    }
    fn n_params(&self) -> usize {
        ChainModel::n_params(self)
    }
    fn recurrent_state(&self) -> usize {
        ChainModel::recurrent_state(self)
    }
    fn cost_bounds(&self) -> (f64, f64) {
        ChainModel::cost_bounds(self)
    }
    fn snapshot(&self, theta: &[f64]) -> Result<Snapshot> {
        let l = ChainModel::n_params(self);
        check_theta(l, theta)?;
        let n = ChainModel::n_states(self);
        let p = self.kernel(theta);
        let c = self.cost(theta);
        let scores = self.score(theta);
        let cgrad = self.cost_grad(theta);
        let mut raw = Vec::with_capacity(n);
        for x in 0..n {
            let mut es = Vec::new();
            for y in 0..n {
                let pr = p[(x, y)];
                if pr > 0.0 {
                    let s = scores[x][y].clone().unwrap_or_else(|| vec![0.0; l]);
                    es.push((
                        Edge {
                            from: x,
                            to: y,
                            action: None,
                            prob: pr,
                            cond: pr,
                            cost: c[x],
                        },
                        s,
                        cgrad[x].clone(),
                    ));
                }
            }
            raw.push((
                ActionGroup {
                    state: x,
                    action: None,
                    prob: 1.0,
                    edges: 0..0,
                },
                es,
            ));
        }
        Ok(Snapshot::build(
            n,
            ChainModel::recurrent_state(self),
            l,
            ChainModel::cost_bounds(self),
            raw,
            Some(c),
        ))
    }
}

fn validate_stochastic(p: &Matrix) -> Result<()> {
    if !p.is_square() {
        return Err(ModelError::Shape(format!(
            "transition matrix is {}x{}",
            p.rows(),
            p.cols()
        )));
    }
    for i in 0..p.rows() {
        let row = p.row(i);
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(ModelError::NonFinite("transition matrix"));
            }
            if v < 0.0 {
                return Err(ModelError::NegativeEntry {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(ModelError::RowSumViolation { row: i, sum: s });
        }
    }
    Ok(())
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `P_theta = sum_k w_k(theta) P^(k)` and `C_theta = sum_k w_k(theta) c^(k)`
/// with softmax weights over the logits `(theta_0, .., theta_{K-2}, 0)`.
///
/// The last component is the reference with its logit pinned at zero, so a
/// mixture of `K` components has `K - 1` parameters. A single cost vector is
/// shared by every component and makes the cost parameter-free.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMixtureChain {
    components: Vec<Matrix>,
    costs: Vec<Vec<f64>>,
    x_star: usize,
    bounds: (f64, f64),
}

impl LogitMixtureChain {
    pub fn new(components: Vec<Matrix>, costs: Vec<Vec<f64>>, x_star: usize) -> Result<Self> {
        let first = components.first().ok_or(ModelError::Empty)?;
        let n = first.rows();
        if n == 0 {
            return Err(ModelError::Empty);
        }
        for p in &components {
            if p.rows() != n || p.cols() != n {
                return Err(ModelError::Shape(format!(
                    "mixture component is {}x{}, expected {n}x{n}",
                    p.rows(),
                    p.cols()
                )));
            }
            validate_stochastic(p)?;
        }
        if costs.len() != 1 && costs.len() != components.len() {
            return Err(ModelError::Shape(format!(
                "{} cost vectors for {} components",
                costs.len(),
                components.len()
            )));
        }
        if costs.iter().any(|c| c.len() != n) {
            return Err(ModelError::Shape("cost vector length".into()));
        }
        if costs.iter().flatten().any(|c| !c.is_finite()) {
            return Err(ModelError::NonFinite("cost"));
        }
        if x_star >= n {
            return Err(ModelError::IndexOutOfRange(format!(
                "recurrent state {x_star} with {n} states"
            )));
        }
        let lo = costs.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let hi = costs
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            components,
            costs,
            x_star,
            bounds: (lo, hi),
        })
    }

    /// A parameter-free chain.
    pub fn fixed(p: Matrix, cost: Vec<f64>, x_star: usize) -> Result<Self> {
        Self::new(vec![p], vec![cost], x_star)
    }

    pub fn components(&self) -> &[Matrix] {
        &self.components
    }

    pub fn costs(&self) -> &[Vec<f64>] {
        &self.costs
    }

    pub fn weights(&self, theta: &[f64]) -> Vec<f64> {
        let mut z = theta.to_vec();
        z.push(0.0);
        softmax(&z)
    }
}

impl ChainModel for LogitMixtureChain {
    fn n_states(&self) -> usize {
        self.components[0].rows()
    }
    fn n_params(&self) -> usize {
        self.components.len() - 1
    }
    fn recurrent_state(&self) -> usize {
        self.x_star
    }
    fn cost_bounds(&self) -> (f64, f64) {
        self.bounds
    }
    fn kernel(&self, theta: &[f64]) -> Matrix {
        let w = self.weights(theta);
        let n = ChainModel::n_states(self);
        let mut p = Matrix::zeros(n, n);
        for (wk, pk) in w.iter().zip(&self.components) {
            for x in 0..n {
                for y in 0..n {
                    p[(x, y)] += wk * pk[(x, y)];
                }
            }
        }
        p
    }
    fn cost(&self, theta: &[f64]) -> Vec<f64> {
        if self.costs.len() == 1 {
            return self.costs[0].clone();
        }
        let w = self.weights(theta);
        let n = ChainModel::n_states(self);
        (0..n)
            .map(|x| w.iter().zip(&self.costs).map(|(wk, c)| wk * c[x]).sum())
            .collect()
    }
    fn score(&self, theta: &[f64]) -> Vec<Vec<Option<Vec<f64>>>> {
        let w = self.weights(theta);
        let p = self.kernel(theta);
        let n = ChainModel::n_states(self);
        let l = ChainModel::n_params(self);
        (0..n)
            .map(|x| {
                (0..n)
                    .map(|y| {
                        let pxy = p[(x, y)];
                        (pxy > 0.0).then(|| {
                            (0..l)
                                .map(|j| w[j] * (self.components[j][(x, y)] / pxy - 1.0))
                                .collect()
                        })
                    })
                    .collect()
            })
            .collect()
    }
    fn cost_grad(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        let n = ChainModel::n_states(self);
        let l = ChainModel::n_params(self);
        if self.costs.len() == 1 {
            return vec![vec![0.0; l]; n];
        }
        let w = self.weights(theta);
        let c = self.cost(theta);
        (0..n)
            .map(|x| (0..l).map(|j| w[j] * (self.costs[j][x] - c[x])).collect())
            .collect()
    }
}

/// Finite MDP with fixed dynamics `P(s, a, s')` and costs `C(s, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpModel {
    n_states: usize,
    n_actions: usize,
    s_star: usize,
    /// Flattened `[s][a][s']`.
    transition: Vec<f64>,
    /// Flattened `[s][a]`.
    cost: Vec<f64>,
    c_lower: f64,
    c_upper: f64,
}

impl MdpModel {
    /// `transition[s][a]` is the next-state distribution, `cost[s][a]` the
    /// one-step cost.
    pub fn new(transition: Vec<Vec<Vec<f64>>>, cost: Vec<Vec<f64>>, s_star: usize) -> Result<Self> {
        let n = transition.len();
        if n == 0 {
            return Err(ModelError::Empty);
        }
        let a = transition[0].len();
        if a == 0 {
            return Err(ModelError::Shape("no actions".into()));
        }
        if s_star >= n {
            return Err(ModelError::IndexOutOfRange(format!(
                "recurrent state {s_star} with {n} states"
            )));
        }
        if cost.len() != n || cost.iter().any(|r| r.len() != a) {
            return Err(ModelError::Shape(format!("cost must be {n}x{a}")));
        }
        let mut flat = Vec::with_capacity(n * a * n);
        for (s, rows) in transition.iter().enumerate() {
            if rows.len() != a {
                return Err(ModelError::Shape(format!("state {s} has {} actions", rows.len())));
            }
            for (ai, row) in rows.iter().enumerate() {
                if row.len() != n {
                    return Err(ModelError::Shape(format!("P({s},{ai},.) has length {}", row.len())));
                }
                for (t, &v) in row.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(ModelError::NonFinite("transition tensor"));
                    }
                    if v < 0.0 {
                        return Err(ModelError::NegativeEntry {
                            row: s * a + ai,
                            col: t,
                            value: v,
                        });
                    }
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(ModelError::RowSumViolation {
                        row: s * a + ai,
                        sum,
                    });
                }
                flat.extend_from_slice(row);
            }
        }
        let cflat: Vec<f64> = cost.into_iter().flatten().collect();
        if cflat.iter().any(|c| !c.is_finite()) {
            return Err(ModelError::NonFinite("cost"));
        }
        let c_lower = cflat.iter().copied().fold(f64::INFINITY, f64::min);
        let c_upper = cflat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            n_states: n,
            n_actions: a,
            s_star,
            transition: flat,
            cost: cflat,
            c_lower,
            c_upper,
        })
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn transition(&self, s: usize, a: usize, t: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + t]
    }

    pub fn cost(&self, s: usize, a: usize) -> f64 {
        self.cost[s * self.n_actions + a]
    }

    pub fn transition_rows(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| (0..self.n_states).map(|t| self.transition(s, a, t)).collect())
                    .collect()
            })
            .collect()
    }

    pub fn cost_rows(&self) -> Vec<Vec<f64>> {
        self.cost.chunks(self.n_actions).map(<[f64]>::to_vec).collect()
    }

    pub fn policy(&self, logits: Vec<f64>) -> Result<SoftmaxPolicy> {
        SoftmaxPolicy::new(self.n_states, self.n_actions, logits)
    }
}

/// Tabular softmax policy `mu_theta(s, a)`, logits flattened by state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    n_states: usize,
    n_actions: usize,
    logits: Vec<f64>,
}

impl SoftmaxPolicy {
    pub fn new(n_states: usize, n_actions: usize, logits: Vec<f64>) -> Result<Self> {
        check_theta(n_states * n_actions, &logits)?;
        Ok(Self {
            n_states,
            n_actions,
            logits,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            logits: vec![0.0; n_states * n_actions],
        }
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// `mu_theta(s, .)`.
    pub fn probs(&self, s: usize) -> Vec<f64> {
        softmax(&self.logits[s * self.n_actions..(s + 1) * self.n_actions])
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs(s)[a]
    }
}

/// `L_theta(s, a) = grad_theta ln mu_theta(s, a)`: on the block of state `s`,
/// component `a'` is `1{a' = a} - mu_theta(s, a')`; zero elsewhere.
pub fn policy_score(policy: &SoftmaxPolicy, s: usize, a: usize) -> Result<Vec<f64>> {
    if s >= policy.n_states || a >= policy.n_actions {
        return Err(ModelError::IndexOutOfRange(format!(
            "(s, a) = ({s}, {a}) with {} states and {} actions",
            policy.n_states, policy.n_actions
        )));
    }
    let mut g = vec![0.0; policy.n_states * policy.n_actions];
    let mu = policy.probs(s);
    let base = s * policy.n_actions;
    for (b, m) in mu.iter().enumerate() {
        g[base + b] = if b == a { 1.0 } else { 0.0 } - m;
    }
    Ok(g)
}

/// `(P_theta, P_hat_theta)` with `P_theta(s,s') = sum_a mu P` and
/// `P_hat_theta(s,s') = sum_a exp(alpha C(s,a)) mu P`.
pub fn induced_kernels(mdp: &MdpModel, policy: &SoftmaxPolicy, alpha: f64) -> (Matrix, Matrix) {
    let n = mdp.n_states;
    let mut p = Matrix::zeros(n, n);
    let mut ph = Matrix::zeros(n, n);
    for s in 0..n {
        let mu = policy.probs(s);
        for (a, m) in mu.iter().enumerate() {
            let w = (alpha * mdp.cost(s, a)).exp();
            for t in 0..n {
                let q = m * mdp.transition(s, a, t);
                p[(s, t)] += q;
                ph[(s, t)] += w * q;
            }
        }
    }
    (p, ph)
}

impl RiskModel for MdpModel {
    fn n_states(&self) -> usize {
        self.n_states
    }
    fn n_params(&self) -> usize {
        self.n_states * self.n_actions
    }
    fn recurrent_state(&self) -> usize {
        self.s_star
    }
    fn cost_bounds(&self) -> (f64, f64) {
        (self.c_lower, self.c_upper)
    }
    fn snapshot(&self, theta: &[f64]) -> Result<Snapshot> {
        let policy = SoftmaxPolicy::new(self.n_states, self.n_actions, theta.to_vec())?;
        let l = self.n_states * self.n_actions;
        let mut raw = Vec::new();
        for s in 0..self.n_states {
            let mu = policy.probs(s);
            for (a, &m) in mu.iter().enumerate() {
                let score = policy_score(&policy, s, a)?;
                let es = (0..self.n_states)
                    .filter_map(|t| {
                        let q = self.transition(s, a, t);
                        (q > 0.0).then(|| {
                            (
                                Edge {
                                    from: s,
                                    to: t,
                                    action: Some(a),
                                    prob: m * q,
                                    cond: q,
                                    cost: self.cost(s, a),
                                },
                                score.clone(),
                                vec![0.0; l],
                            )
                        })
                    })
                    .collect();
                raw.push((
                    ActionGroup {
                        state: s,
                        action: Some(a),
                        prob: m,
                        edges: 0..0,
                    },
                    es,
                ));
            }
        }
        Ok(Snapshot::build(
            self.n_states,
            self.s_star,
            l,
            (self.c_lower, self.c_upper),
            raw,
            None,
        ))
    }
}

/// Structural checks on a concrete instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub irreducible: bool,
    pub aperiodic: bool,
    /// Period of `x*` on the support digraph (0 if `x*` has no return path).
    pub period: usize,
    pub row_sum_residual: f64,
    pub score_residual: f64,
    pub cost_bounds_ok: bool,
}

pub(crate) fn support(p: &Matrix) -> Vec<Vec<usize>> {
    (0..p.rows())
        .map(|i| (0..p.cols()).filter(|&j| p[(i, j)] > 0.0).collect())
        .collect()
}

/// `(I + P)^(n-1) > 0` on the boolean support.
pub(crate) fn irreducible(adj: &[Vec<usize>]) -> bool {
    let n = adj.len();
    // Boolean reachability by repeated squaring of (I + A).
    let mut reach: Vec<Vec<bool>> = (0..n)
        .map(|i| {
            let mut r = vec![false; n];
            r[i] = true;
            for &j in &adj[i] {
                r[j] = true;
            }
            r
        })
        .collect();
    let mut len = 1;
    while len < n.saturating_sub(1) {
        let prev = reach.clone();
        for row in reach.iter_mut() {
            let cur = row.clone();
            for (k, &on) in cur.iter().enumerate() {
                if on {
                    for (j, &v) in prev[k].iter().enumerate() {
                        if v {
                            row[j] = true;
                        }
                    }
                }
            }
        }
        len *= 2;
    }
    reach.iter().all(|r| r.iter().all(|&b| b))
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Period of `root` from BFS levels: gcd over reachable edges `u -> v` of
/// `level(u) + 1 - level(v)`. This equals the gcd of all return-cycle lengths
/// through `root` within its strongly connected class.
fn period_of(adj: &[Vec<usize>], root: usize) -> usize {
    let n = adj.len();
    let mut level = vec![usize::MAX; n];
    level[root] = 0;
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut d = 0;
    for u in 0..n {
        if level[u] == usize::MAX {
            continue;
        }
        for &v in &adj[u] {
            let diff = (level[u] + 1).abs_diff(level[v]);
            d = gcd(d, diff);
        }
    }
    d
}

/// Validates Assumptions-level structure of `model` at `theta`: row sums,
/// irreducibility, aperiodicity and the score identity
/// `grad P = P L` (central differences with step [`SCORE_FD_STEP`]).
///
/// A row deviating by more than [`ROW_SUM_FATAL`] is an error; reducibility
/// and periodicity are reported as flags.
pub fn validate_chain(model: &dyn RiskModel, theta: &[f64]) -> Result<DiagnosticsReport> {
    let snap = model.snapshot(theta)?;
    let p = snap.kernel();
    let mut row_res: f64 = 0.0;
    for i in 0..p.rows() {
        let dev = (p.row(i).iter().sum::<f64>() - 1.0).abs();
        if dev > ROW_SUM_FATAL {
            return Err(ModelError::RowSumViolation {
                row: i,
                sum: p.row(i).iter().sum(),
            });
        }
        row_res = row_res.max(dev);
    }
    let adj = support(&p);
    let irreducible = irreducible(&adj);
    let period = period_of(&adj, snap.recurrent_state());

    let analytic = snap.kernel_gradient();
    let mut score_res: f64 = 0.0;
    for (j, grad) in analytic.iter().enumerate() {
        let mut tp = theta.to_vec();
        tp[j] += SCORE_FD_STEP;
        let mut tm = theta.to_vec();
        tm[j] -= SCORE_FD_STEP;
        let pp = model.snapshot(&tp)?.kernel();
        let pm = model.snapshot(&tm)?.kernel();
        let fd = Matrix::zeros(p.rows(), p.cols());
        let mut fd = fd;
        for x in 0..p.rows() {
            for y in 0..p.cols() {
                fd[(x, y)] = (pp[(x, y)] - pm[(x, y)]) / (2.0 * SCORE_FD_STEP);
            }
        }
        score_res = score_res.max(fd.max_abs_diff(grad));
    }

    let (lo, hi) = snap.cost_bounds();
    let cost_bounds_ok = snap.edges().iter().all(|e| lo <= e.cost && e.cost <= hi);

    Ok(DiagnosticsReport {
        irreducible,
        aperiodic: period == 1,
        period,
        row_sum_residual: row_res,
        score_residual: score_res,
        cost_bounds_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn one_state_chain_is_trivially_valid() {
        let c = LogitMixtureChain::fixed(m(&[&[1.0]]), vec![0.3], 0).unwrap();
        let r = validate_chain(&c, &[]).unwrap();
        assert!(r.irreducible && r.aperiodic);
        assert_eq!(r.row_sum_residual, 0.0);
        assert_eq!(r.score_residual, 0.0);
    }

    #[test]
    fn positive_two_state_chain_is_primitive() {
        let c = LogitMixtureChain::fixed(m(&[&[0.5, 0.5], &[0.5, 0.5]]), vec![0.0, 1.0], 0).unwrap();
        let r = validate_chain(&c, &[]).unwrap();
        assert!(r.irreducible && r.aperiodic);
    }

    #[test]
    fn swap_chain_is_periodic() {
        let c = LogitMixtureChain::fixed(m(&[&[0.0, 1.0], &[1.0, 0.0]]), vec![0.0, 1.0], 0).unwrap();
        let r = validate_chain(&c, &[]).unwrap();
        assert!(r.irreducible);
        assert!(!r.aperiodic);
        assert_eq!(r.period, 2);
    }

    #[test]
    fn reducible_chain_is_flagged() {
        let c = LogitMixtureChain::fixed(m(&[&[1.0, 0.0], &[0.5, 0.5]]), vec![0.0, 1.0], 0).unwrap();
        let r = validate_chain(&c, &[]).unwrap();
        assert!(!r.irreducible);
    }

    #[test]
    fn bad_rows_are_rejected_at_construction() {
        let err = LogitMixtureChain::fixed(m(&[&[0.5, 0.4], &[0.5, 0.5]]), vec![0.0, 1.0], 0).unwrap_err();
        assert!(matches!(err, ModelError::RowSumViolation { row: 0, .. }));
        let err = LogitMixtureChain::fixed(m(&[&[1.5, -0.5], &[0.5, 0.5]]), vec![0.0, 1.0], 0).unwrap_err();
        assert!(matches!(err, ModelError::NegativeEntry { row: 0, col: 1, .. }));
    }

    #[test]
    fn uniform_softmax_score() {
        let p = SoftmaxPolicy::uniform(2, 2);
        let g = policy_score(&p, 1, 0).unwrap();
        assert_eq!(g, vec![0.0, 0.0, 0.5, -0.5]);
    }

    #[test]
    fn softmax_score_by_hand() {
        let p = SoftmaxPolicy::new(1, 2, vec![3f64.ln(), 0.0]).unwrap();
        let mu = p.probs(0);
        assert!((mu[0] - 0.75).abs() < 1e-15 && (mu[1] - 0.25).abs() < 1e-15);
        let g = policy_score(&p, 0, 1).unwrap();
        assert!((g[0] + 0.75).abs() < 1e-15 && (g[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn score_index_out_of_range() {
        let p = SoftmaxPolicy::uniform(2, 2);
        assert!(policy_score(&p, 2, 0).is_err());
        assert!(policy_score(&p, 0, 2).is_err());
    }

    #[test]
    fn softmax_score_identity() {
        let p = SoftmaxPolicy::new(2, 3, vec![0.3, -1.2, 2.0, 0.0, 0.7, -0.4]).unwrap();
        for s in 0..2 {
            let mu = p.probs(s);
            let mut acc = vec![0.0; 6];
            for (a, m) in mu.iter().enumerate() {
                crate::linalg::axpy(&mut acc, *m, &policy_score(&p, s, a).unwrap());
            }
            assert!(acc.iter().all(|v| v.abs() < 1e-15));
            assert!((mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(mu.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn single_action_mdp_reduces_to_chain() {
        let mdp = MdpModel::new(
            vec![vec![vec![0.3, 0.7]], vec![vec![0.6, 0.4]]],
            vec![vec![0.5], vec![-1.0]],
            0,
        )
        .unwrap();
        let pol = SoftmaxPolicy::uniform(2, 1);
        let alpha = 0.7;
        let (p, ph) = induced_kernels(&mdp, &pol, alpha);
        let base = m(&[&[0.3, 0.7], &[0.6, 0.4]]);
        assert!(p.max_abs_diff(&base) < 1e-15);
        let expect = m(&[
            &[0.3 * (0.35f64).exp(), 0.7 * (0.35f64).exp()],
            &[0.6 * (-0.7f64).exp(), 0.4 * (-0.7f64).exp()],
        ]);
        assert!(ph.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn duplicated_actions_match_single_action() {
        let one = MdpModel::new(
            vec![vec![vec![0.3, 0.7]], vec![vec![0.6, 0.4]]],
            vec![vec![0.5], vec![1.0]],
            0,
        )
        .unwrap();
        let two = MdpModel::new(
            vec![
                vec![vec![0.3, 0.7], vec![0.3, 0.7]],
                vec![vec![0.6, 0.4], vec![0.6, 0.4]],
            ],
            vec![vec![0.5, 0.5], vec![1.0, 1.0]],
            0,
        )
        .unwrap();
        let (p1, h1) = induced_kernels(&one, &SoftmaxPolicy::uniform(2, 1), 1.3);
        let (p2, h2) = induced_kernels(&two, &SoftmaxPolicy::uniform(2, 2), 1.3);
        assert!(p1.max_abs_diff(&p2) < 1e-15 && h1.max_abs_diff(&h2) < 1e-14);
    }

    #[test]
    fn induced_kernels_hand_expansion() {
        // Two states, two actions, distinct costs; logits give mu(0,.) = (0.75, 0.25)
        // and mu(1,.) = (0.5, 0.5).
        let mdp = MdpModel::new(
            vec![
                vec![vec![0.9, 0.1], vec![0.2, 0.8]],
                vec![vec![0.7, 0.3], vec![0.4, 0.6]],
            ],
            vec![vec![0.0, 1.0], vec![2.0, 0.5]],
            0,
        )
        .unwrap();
        let pol = SoftmaxPolicy::new(2, 2, vec![3f64.ln(), 0.0, 0.0, 0.0]).unwrap();
        let (p, ph) = induced_kernels(&mdp, &pol, 1.0);
        let e = std::f64::consts::E;
        let p_expect = m(&[
            &[0.75 * 0.9 + 0.25 * 0.2, 0.75 * 0.1 + 0.25 * 0.8],
            &[0.5 * 0.7 + 0.5 * 0.4, 0.5 * 0.3 + 0.5 * 0.6],
        ]);
        let ph_expect = m(&[
            &[0.75 * 0.9 + e * 0.25 * 0.2, 0.75 * 0.1 + e * 0.25 * 0.8],
            &[
                e * e * 0.5 * 0.7 + e.sqrt() * 0.5 * 0.4,
                e * e * 0.5 * 0.3 + e.sqrt() * 0.5 * 0.6,
            ],
        ]);
        assert!(p.max_abs_diff(&p_expect) < 1e-15);
        assert!(ph.max_abs_diff(&ph_expect) < 1e-14);
        let snap = mdp.snapshot(pol.logits()).unwrap();
        assert!(snap.kernel().max_abs_diff(&p) < 1e-15);
        assert!(snap.hat_kernel(1.0).max_abs_diff(&ph) < 1e-14);
    }

    #[test]
    fn zero_cost_hat_kernel_is_kernel() {
        let mdp = MdpModel::new(
            vec![
                vec![vec![0.9, 0.1], vec![0.2, 0.8]],
                vec![vec![0.7, 0.3], vec![0.4, 0.6]],
            ],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            0,
        )
        .unwrap();
        let pol = SoftmaxPolicy::new(2, 2, vec![0.4, -0.1, 1.0, 0.2]).unwrap();
        let (p, ph) = induced_kernels(&mdp, &pol, 2.0);
        assert_eq!(p, ph);
    }

    #[test]
    fn mixture_score_matches_finite_differences() {
        let c = LogitMixtureChain::new(
            vec![
                m(&[&[0.2, 0.8], &[0.6, 0.4]]),
                m(&[&[0.9, 0.1], &[0.3, 0.7]]),
                m(&[&[0.5, 0.5], &[0.5, 0.5]]),
            ],
            vec![vec![0.0, 1.0], vec![0.5, 0.2], vec![1.0, 0.0]],
            0,
        )
        .unwrap();
        let r = validate_chain(&c, &[0.4, -0.9]).unwrap();
        assert!(r.score_residual < 1e-8, "{}", r.score_residual);
        assert!(r.cost_bounds_ok);
    }

    #[test]
    fn wrong_parameter_length() {
        let c = LogitMixtureChain::fixed(m(&[&[1.0]]), vec![0.0], 0).unwrap();
        assert!(matches!(
            c.snapshot(&[1.0]),
            Err(ModelError::ParamLength { expected: 0, got: 1 })
        ));
    }
}
