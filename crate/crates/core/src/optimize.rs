//! Stochastic recursions driven by regeneration cycles: policy evaluation
//! of `Lambda` and the joint `(theta, Lambda~)` policy-gradient iteration.

use crate::linalg::norm2;
use crate::model::{ModelError, RiskModel};
use crate::regen::{sample_cycle, RegenError, DEFAULT_CYCLE_CAP};
use crate::spectral::{self, SpectralError};
use crate::trunc::{
    grad_estimate, grad_lambda_trunc, hard_trunc_ln, lambda_trunc, ln_cycle_weight, smooth_trunc_ln,
    TruncError, TruncationMode, TruncationSchedule,
};
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

/// Slack allowed on the deterministic `Lambda~` lower bound for rounding.
pub const LOWER_BOUND_SLACK: f64 = 1e-9;
/// Iterations above the upper envelope after which a warning is logged.
const UPPER_PERSISTENCE: usize = 1000;
const TRUNC_FD_STEP: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("Lambda~ = {value} fell below its lower bound {bound} at iteration {m}")]
    LowerBoundViolated { m: usize, value: f64, bound: f64 },
    #[error(transparent)]
    Regen(#[from] RegenError),
    #[error(transparent)]
    Trunc(#[from] TruncError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = OptimizeError> = std::result::Result<T, E>;

fn invalid(msg: impl Into<String>) -> OptimizeError {
    OptimizeError::InvalidConfig(msg.into())
}

/// `gamma_m = gamma0 (1 + m + offset)^-exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepSchedule {
    pub gamma0: f64,
    pub exponent: f64,
    pub offset: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            gamma0: 0.5,
            exponent: 0.8,
            offset: 10.0,
        }
    }
}

impl StepSchedule {
    pub fn gamma(&self, m: usize) -> f64 {
        self.gamma0 * (1.0 + m as f64 + self.offset).powf(-self.exponent)
    }

    pub fn gamma_max(&self) -> f64 {
        self.gamma(0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma0 > 0.0) {
            return Err(invalid(format!("gamma0 must be positive, got {}", self.gamma0)));
        }
        if !(self.exponent > 0.5 && self.exponent <= 1.0) {
            return Err(invalid(format!(
                "step exponent must lie in (0.5, 1], got {}",
                self.exponent
            )));
        }
        if !(self.offset >= 0.0) {
            return Err(invalid(format!("step offset must be nonnegative, got {}", self.offset)));
        }
        if !(self.gamma_max() < 1.0) {
            return Err(invalid(format!("largest step {} must be below 1", self.gamma_max())));
        }
        Ok(())
    }

    /// Checks `sum_m gamma_m^(2(1 - beta)) < inf`.
    pub fn validate_with(&self, truncation: &TruncationSchedule) -> Result<()> {
        self.validate()?;
        truncation.validate()?;
        if let Some(beta) = truncation.beta() {
            let p = 2.0 * self.exponent * (1.0 - beta);
            if !(p > 1.0) {
                return Err(invalid(format!(
                    "2 a (1 - beta) = {p} must exceed 1 for a = {}, beta = {beta}",
                    self.exponent
                )));
            }
        }
        Ok(())
    }
}

/// Element-wise clamps for the `theta` and `Lambda~` increments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Projection {
    pub theta_thresh: f64,
    pub lambda_thresh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Initial `Lambda~`; defaults to `alpha * C_upper`.
    #[serde(default)]
    pub lambda0: Option<f64>,
    /// Initial parameters; defaults to zeros.
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    pub steps: usize,
    #[serde(default)]
    pub step: StepSchedule,
    #[serde(default = "default_truncation")]
    pub truncation: TruncationSchedule,
    #[serde(default)]
    pub projection: Option<Projection>,
    #[serde(default)]
    pub seed: u64,
    /// Independent rng stream for this run (replications use distinct streams).
    #[serde(default)]
    pub stream: u64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    /// Also record `Lambda^(M_m)` and its gradient at checkpoints.
    #[serde(default)]
    pub trunc_checkpoints: bool,
    #[serde(default = "default_cycle_cap")]
    pub cycle_cap: usize,
}

fn default_eta() -> f64 {
    1.0
}
fn default_truncation() -> TruncationSchedule {
    TruncationSchedule::Power { beta: 0.2 }
}
fn default_checkpoint_every() -> usize {
    500
}
fn default_cycle_cap() -> usize {
    DEFAULT_CYCLE_CAP
}

impl RunConfig {
    pub fn new(steps: usize) -> Self {
        Self {
            eta: default_eta(),
            lambda0: None,
            theta0: None,
            steps,
            step: StepSchedule::default(),
            truncation: default_truncation(),
            projection: None,
            seed: 0,
            stream: 0,
            checkpoint_every: default_checkpoint_every(),
            trunc_checkpoints: false,
            cycle_cap: default_cycle_cap(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(invalid(format!("eta must be positive, got {}", self.eta)));
        }
        if self.steps == 0 {
            return Err(invalid("steps must be at least 1"));
        }
        if self.checkpoint_every == 0 {
            return Err(invalid("checkpoint_every must be at least 1"));
        }
        if self.cycle_cap == 0 {
            return Err(invalid("cycle_cap must be at least 1"));
        }
        if let Some(p) = &self.projection {
            if !(p.theta_thresh > 0.0 && p.lambda_thresh > 0.0) {
                return Err(invalid("projection thresholds must be positive"));
            }
        }
        if let Some(l) = self.lambda0 {
            if !l.is_finite() {
                return Err(invalid("lambda0 must be finite"));
            }
        }
        self.step.validate_with(&self.truncation)
    }

    fn start(&self, model: &dyn RiskModel, alpha: f64) -> Result<(Vec<f64>, f64)> {
        self.validate()?;
        if !(alpha > 0.0) {
            return Err(invalid(format!("alpha must be positive, got {alpha}")));
        }
        let theta = self.theta0.clone().unwrap_or_else(|| vec![0.0; model.n_params()]);
        if theta.len() != model.n_params() {
            return Err(ModelError::ParamLength {
                expected: model.n_params(),
                got: theta.len(),
            }
            .into());
        }
        let lambda = self.lambda0.unwrap_or(alpha * model.cost_bounds().1);
        Ok((theta, lambda))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub m: usize,
    /// Environment steps before this cycle.
    pub t_m: u64,
    pub gamma_m: f64,
    #[serde(rename = "M_m")]
    pub truncation_m: f64,
    pub tau_m: usize,
    /// `Lambda~_m`, the estimate the cycle was evaluated at.
    pub lambda_tilde: f64,
    pub update_norm_theta: f64,
    /// Largest per-coordinate `|theta_{m+1} - theta_m|`.
    pub update_max_theta: f64,
    pub update_norm_lambda: f64,
    pub trunc_active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointRecord {
    pub m: usize,
    #[serde(rename = "Lambda_exact")]
    pub lambda_exact: f64,
    pub grad_norm_exact: f64,
    pub lambda_tilde: f64,
    #[serde(rename = "Lambda_trunc")]
    pub lambda_trunc: Option<f64>,
    pub grad_norm_trunc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trace {
    pub iterations: Vec<IterationRecord>,
    pub checkpoints: Vec<CheckpointRecord>,
    pub theta_final: Vec<f64>,
    pub lambda_tilde_final: f64,
    /// `min(Lambda~_0, alpha C_lower - eta gamma_max)`.
    pub lower_bound: f64,
    /// Iterates at or above `2 alpha C_upper + 2`.
    pub upper_excursions: usize,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, Copy)]
enum Recursion {
    Evaluate,
    Train,
}

struct Runner<'a> {
    model: &'a dyn RiskModel,
    alpha: f64,
    cfg: &'a RunConfig,
    kind: Recursion,
}

impl Runner<'_> {
    fn checkpoint(&self, m: usize, theta: &[f64], lambda_tilde: f64, m_trunc: f64) -> Result<CheckpointRecord> {
        let sol = spectral::solve(self.model, theta, self.alpha)?;
        let grad = match self.kind {
            Recursion::Train => norm2(&spectral::grad_risk_cost(self.model, theta, self.alpha)?),
            Recursion::Evaluate => 0.0,
        };
        let (lt, gt) = if self.cfg.trunc_checkpoints {
            let mode = match self.kind {
                Recursion::Train => TruncationMode::Smooth,
                Recursion::Evaluate => TruncationMode::Hard,
            };
            let lt = lambda_trunc(self.model, theta, self.alpha, m_trunc, mode, 1e-12)?;
            let gt = match self.kind {
                Recursion::Train => Some(norm2(&grad_lambda_trunc(
                    self.model,
                    theta,
                    self.alpha,
                    m_trunc,
                    mode,
                    TRUNC_FD_STEP,
                )?)),
                Recursion::Evaluate => None,
            };
            (Some(lt), gt)
        } else {
            (None, None)
        };
        Ok(CheckpointRecord {
            m,
            lambda_exact: sol.log_lambda,
            grad_norm_exact: grad,
            lambda_tilde,
            lambda_trunc: lt,
            grad_norm_trunc: gt,
        })
    }

    fn run(&self) -> Result<Trace> {
        let started = Instant::now();
        let cfg = self.cfg;
        let (mut theta, lambda0) = cfg.start(self.model, self.alpha)?;
        let eta = match self.kind {
            Recursion::Train => cfg.eta,
            Recursion::Evaluate => 1.0,
        };
        let (c_lo, c_hi) = self.model.cost_bounds();
        let lower_bound = lambda0.min(self.alpha * c_lo - eta * cfg.step.gamma_max());
        let upper = 2.0 * self.alpha * c_hi + 2.0;
        let mut rng = crate::rng::stream(cfg.seed, cfg.stream);
        let mut lambda = lambda0;
        let mut t: u64 = 0;
        let mut iterations = Vec::with_capacity(cfg.steps);
        let mut checkpoints = Vec::new();
        let mut upper_excursions = 0;
        let mut upper_run = 0;
        let mut snap = self.model.snapshot(&theta)?;
        for m in 0..cfg.steps {
            let gamma = cfg.step.gamma(m);
            let m_trunc = cfg.truncation.value(gamma);
            if m % cfg.checkpoint_every == 0 {
                checkpoints.push(self.checkpoint(m, &theta, lambda, m_trunc)?);
            }
            let cycle = sample_cycle(&snap, &mut rng, cfg.cycle_cap)?;
            let ln_h = ln_cycle_weight(&cycle, self.alpha, lambda);
            let ln_m = m_trunc.ln();
            let (mut d_lambda, mut d_theta) = match self.kind {
                Recursion::Evaluate => (gamma * (hard_trunc_ln(ln_h, ln_m) - 1.0), Vec::new()),
                Recursion::Train => {
                    let g = smooth_trunc_ln(ln_h, ln_m);
                    let f = grad_estimate(&cycle, self.alpha, lambda, m_trunc)?;
                    (eta * gamma * (g - 1.0), f.iter().map(|x| -gamma * x).collect())
                }
            };
            if let Some(p) = &cfg.projection {
                d_lambda = d_lambda.clamp(-p.lambda_thresh, p.lambda_thresh);
                for d in &mut d_theta {
                    *d = d.clamp(-p.theta_thresh, p.theta_thresh);
                }
            }
            iterations.push(IterationRecord {
                m,
                t_m: t,
                gamma_m: gamma,
                truncation_m: m_trunc,
                tau_m: cycle.tau(),
                lambda_tilde: lambda,
                update_norm_theta: norm2(&d_theta),
                update_max_theta: crate::linalg::norm_inf(&d_theta),
                update_norm_lambda: d_lambda.abs(),
                trunc_active: ln_h > ln_m,
            });
            t += cycle.tau() as u64;
            lambda += d_lambda;
            if lambda < lower_bound - LOWER_BOUND_SLACK {
                return Err(OptimizeError::LowerBoundViolated {
                    m: m + 1,
                    value: lambda,
                    bound: lower_bound,
                });
            }
            if lambda >= upper {
                upper_excursions += 1;
                upper_run += 1;
                if upper_run == UPPER_PERSISTENCE {
                    log::warn!("Lambda~ has stayed above {upper} for {UPPER_PERSISTENCE} iterations");
                }
            } else {
                upper_run = 0;
            }
            if !d_theta.is_empty() && d_theta.iter().any(|&d| d != 0.0) {
                for (th, d) in theta.iter_mut().zip(&d_theta) {
                    *th += d;
                }
                snap = self.model.snapshot(&theta)?;
            }
        }
        let last = cfg.truncation.value(cfg.step.gamma(cfg.steps));
        checkpoints.push(self.checkpoint(cfg.steps, &theta, lambda, last)?);
        Ok(Trace {
            iterations,
            checkpoints,
            theta_final: theta,
            lambda_tilde_final: lambda,
            lower_bound,
            upper_excursions,
            wall_time_secs: started.elapsed().as_secs_f64(),
        })
    }
}

/// Estimates `Lambda_theta` at fixed `theta` with the recursion
/// `Lambda~ += gamma_m (min(H_m, M_m) - 1)`.
///
/// A fixed truncation level targets the hard-truncated root; a power or
/// ladder schedule targets `Lambda_theta` itself.
pub fn policy_evaluate(model: &dyn RiskModel, theta: &[f64], alpha: f64, cfg: &RunConfig) -> Result<Trace> {
    let mut cfg = cfg.clone();
    cfg.theta0 = Some(theta.to_vec());
    Runner {
        model,
        alpha,
        cfg: &cfg,
        kind: Recursion::Evaluate,
    }
    .run()
}

/// Joint recursion `theta -= gamma_m F_m`, `Lambda~ += eta gamma_m (G_m - 1)`.
pub fn train(model: &dyn RiskModel, alpha: f64, cfg: &RunConfig) -> Result<Trace> {
    Runner {
        model,
        alpha,
        cfg,
        kind: Recursion::Train,
    }
    .run()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryReport {
    pub cycles: usize,
    pub total_steps: u64,
    pub initial_lambda_exact: f64,
    pub final_lambda_exact: f64,
    pub final_lambda_tilde: f64,
    pub min_lambda_tilde: f64,
    pub max_lambda_tilde: f64,
    pub final_grad_norm: f64,
    pub final_lambda_trunc: Option<f64>,
    pub final_grad_norm_trunc: Option<f64>,
    pub truncation_activations: usize,
    pub lower_bound: f64,
    pub lower_bound_violations: usize,
    pub upper_excursions: usize,
    pub tau_mean: f64,
    pub tau_max: usize,
    pub theta_final: Vec<f64>,
    pub wall_time_secs: f64,
}

/// Summary statistics of a finished run.
pub fn diagnostics(trace: &Trace) -> SummaryReport {
    let it = &trace.iterations;
    let first = trace.checkpoints.first();
    let last = trace.checkpoints.last();
    let lambdas = it.iter().map(|r| r.lambda_tilde).chain([trace.lambda_tilde_final]);
    let (min_l, max_l) = lambdas.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let total: u64 = it.iter().map(|r| r.tau_m as u64).sum();
    SummaryReport {
        cycles: it.len(),
        total_steps: total,
        initial_lambda_exact: first.map_or(f64::NAN, |c| c.lambda_exact),
        final_lambda_exact: last.map_or(f64::NAN, |c| c.lambda_exact),
        final_lambda_tilde: trace.lambda_tilde_final,
        min_lambda_tilde: min_l,
        max_lambda_tilde: max_l,
        final_grad_norm: last.map_or(f64::NAN, |c| c.grad_norm_exact),
        final_lambda_trunc: last.and_then(|c| c.lambda_trunc),
        final_grad_norm_trunc: last.and_then(|c| c.grad_norm_trunc),
        truncation_activations: it.iter().filter(|r| r.trunc_active).count(),
        lower_bound: trace.lower_bound,
        lower_bound_violations: it
            .iter()
            .map(|r| r.lambda_tilde)
            .chain([trace.lambda_tilde_final])
            .filter(|&l| l < trace.lower_bound - LOWER_BOUND_SLACK)
            .count(),
        upper_excursions: trace.upper_excursions,
        tau_mean: if it.is_empty() { 0.0 } else { total as f64 / it.len() as f64 },
        tau_max: it.iter().map(|r| r.tau_m).max().unwrap_or(0),
        theta_final: trace.theta_final.clone(),
        wall_time_secs: trace.wall_time_secs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn cfg(steps: usize, truncation: TruncationSchedule) -> RunConfig {
        RunConfig {
            truncation,
            ..RunConfig::new(steps)
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(StepSchedule::default().validate().is_ok());
        assert!((StepSchedule::default().gamma_max() - 0.5 * 11f64.powf(-0.8)).abs() < 1e-15);
        let s = StepSchedule {
            exponent: 0.5,
            ..Default::default()
        };
        assert!(s.validate().is_err());
        let s = StepSchedule {
            gamma0: 2.0,
            offset: 0.0,
            ..Default::default()
        };
        assert!(s.validate().is_err());
        // 2 * 0.6 * (1 - 0.2) = 0.96
        let s = StepSchedule {
            exponent: 0.6,
            ..Default::default()
        };
        assert!(s.validate_with(&TruncationSchedule::Power { beta: 0.2 }).is_err());
        assert!(s.validate_with(&TruncationSchedule::Fixed { m: 4.0 }).is_ok());
    }

    #[test]
    fn one_state_evaluation_is_stationary() {
        let m = fixtures::one_state(0.7);
        let mut c = cfg(200, TruncationSchedule::Fixed { m: 4.0 });
        c.lambda0 = Some(1.4);
        let tr = policy_evaluate(&m, &[], 2.0, &c).unwrap();
        assert!(tr.iterations.iter().all(|r| (r.lambda_tilde - 1.4).abs() < 1e-12));
        let rep = diagnostics(&tr);
        assert_eq!(rep.truncation_activations, 0);
        assert_eq!(rep.final_grad_norm, 0.0);
        assert_eq!(rep.cycles, 200);
        assert_eq!(rep.total_steps, 200);
    }

    #[test]
    fn gradient_free_training_keeps_theta() {
        let m = fixtures::chain_a();
        let tr = train(&m, 1.0, &cfg(500, TruncationSchedule::Fixed { m: 16.0 })).unwrap();
        assert!(tr.theta_final.is_empty());
        assert!(tr.iterations.iter().all(|r| r.update_norm_theta == 0.0));
    }

    #[test]
    fn trace_bookkeeping() {
        let m = fixtures::chain_a_theta();
        let tr = train(&m, 1.0, &cfg(1200, TruncationSchedule::Power { beta: 0.2 })).unwrap();
        for w in tr.iterations.windows(2) {
            assert_eq!(w[1].t_m, w[0].t_m + w[0].tau_m as u64);
        }
        let ms: Vec<usize> = tr.checkpoints.iter().map(|c| c.m).collect();
        assert_eq!(ms, vec![0, 500, 1000, 1200]);
        assert!(tr.iterations.iter().all(|r| r.lambda_tilde >= tr.lower_bound - LOWER_BOUND_SLACK));
    }

    #[test]
    fn small_truncation_activates() {
        let m = fixtures::chain_a();
        let mut c = cfg(2000, TruncationSchedule::Fixed { m: 1.5 });
        c.lambda0 = Some(0.5);
        let rep = diagnostics(&policy_evaluate(&m, &[], 1.0, &c).unwrap());
        assert!(rep.truncation_activations > 0);
    }

    #[test]
    fn projection_clamps_increments() {
        let m = fixtures::mixture_3();
        let mut c = cfg(2000, TruncationSchedule::Fixed { m: 8.0 });
        c.projection = Some(Projection {
            theta_thresh: 0.01,
            lambda_thresh: 0.02,
        });
        let tr = train(&m, 1.0, &c).unwrap();
        assert!(tr.iterations.iter().all(|r| r.update_norm_lambda <= 0.02));
        assert!(tr.iterations.iter().all(|r| r.update_max_theta <= 0.01));
    }

    #[test]
    fn runs_are_deterministic() {
        let m = fixtures::mdp_2x2();
        let c = cfg(800, TruncationSchedule::Power { beta: 0.2 });
        let a = train(&m, 0.5, &c).unwrap();
        let b = train(&m, 0.5, &c).unwrap();
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.theta_final, b.theta_final);
    }

    #[test]
    fn rejects_bad_configs() {
        let m = fixtures::chain_a_theta();
        let mut c = cfg(10, TruncationSchedule::Fixed { m: 4.0 });
        c.eta = 0.0;
        assert!(matches!(train(&m, 1.0, &c), Err(OptimizeError::InvalidConfig(_))));
        let mut c = cfg(10, TruncationSchedule::Fixed { m: 4.0 });
        c.theta0 = Some(vec![0.0, 1.0]);
        assert!(matches!(train(&m, 1.0, &c), Err(OptimizeError::Model(_))));
        assert!(train(&m, 0.0, &cfg(10, TruncationSchedule::Fixed { m: 4.0 })).is_err());
    }
}
