//! Experiment harness: JSON configs, subcommands and output files.
//!
//! Every command writes `summary.json` holding the resolved config, final
//! values, assertion counters and timing. Stochastic commands also write
//! `trace.csv` and `checkpoints.csv`; the CSV files depend only on the
//! config and seed.

use crate::fixtures;
use crate::linalg::Matrix;
use crate::model::{validate_chain, LogitMixtureChain, MdpModel, ModelError, RiskModel};
use crate::optimize::{self, diagnostics, OptimizeError, RunConfig, Trace};
use crate::regen::{self, GValue, RegenError};
use crate::robust::{self, RobustError};
use crate::spectral::{self, SpectralError};
use crate::trunc::{self, TruncError, TruncationMode};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io { .. } => 1,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Validation(e.to_string())
    }
}
impl From<SpectralError> for CliError {
    fn from(e: SpectralError) -> Self {
        match e {
            SpectralError::Model(m) => m.into(),
            e => CliError::Numerical(e.to_string()),
        }
    }
}
impl From<RegenError> for CliError {
    fn from(e: RegenError) -> Self {
        match e {
            RegenError::Model(m) => m.into(),
            e => CliError::Numerical(e.to_string()),
        }
    }
}
impl From<TruncError> for CliError {
    fn from(e: TruncError) -> Self {
        match e {
            TruncError::Invalid(_) | TruncError::TooManyStates { .. } => CliError::Validation(e.to_string()),
            TruncError::Model(m) => m.into(),
            e => CliError::Numerical(e.to_string()),
        }
    }
}
impl From<OptimizeError> for CliError {
    fn from(e: OptimizeError) -> Self {
        match e {
            OptimizeError::InvalidConfig(_) => CliError::Validation(e.to_string()),
            OptimizeError::Model(m) => m.into(),
            OptimizeError::Trunc(t) => t.into(),
            e => CliError::Numerical(e.to_string()),
        }
    }
}
impl From<RobustError> for CliError {
    fn from(e: RobustError) -> Self {
        match e {
            RobustError::Spectral(s) => s.into(),
            RobustError::Singular => CliError::Numerical(e.to_string()),
            RobustError::Model(m) => m.into(),
            e => CliError::Validation(e.to_string()),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Where the model comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Builtin {
        name: String,
    },
    /// A fixed chain: one transition matrix and one cost per state.
    Chain {
        transition: Vec<Vec<f64>>,
        cost: Vec<f64>,
        #[serde(default)]
        recurrent_state: usize,
    },
    /// Softmax mixture of component kernels; parameters are the logits of
    /// all components but the last.
    LogitMixture {
        components: Vec<Vec<Vec<f64>>>,
        costs: Vec<Vec<f64>>,
        #[serde(default)]
        recurrent_state: usize,
    },
    /// Transition tensor `[s][a][s']` and costs `[s][a]` under a softmax
    /// policy whose logits are the parameters.
    Mdp {
        transition: Vec<Vec<Vec<f64>>>,
        cost: Vec<Vec<f64>>,
        #[serde(default)]
        recurrent_state: usize,
    },
}

fn matrix(rows: &[Vec<f64>], field: &str) -> Result<Matrix> {
    Matrix::from_rows(rows).ok_or_else(|| CliError::Validation(format!("{field}: rows have unequal lengths")))
}

impl ModelSpec {
    pub fn build(&self) -> Result<Box<dyn RiskModel>> {
        Ok(match self {
            ModelSpec::Builtin { name } => fixtures::builtin(name).ok_or_else(|| {
                CliError::Validation(format!(
                    "model.name: unknown builtin {name:?} (known: {})",
                    fixtures::BUILTIN_NAMES.join(", ")
                ))
            })?,
            ModelSpec::Chain {
                transition,
                cost,
                recurrent_state,
            } => Box::new(LogitMixtureChain::fixed(
                matrix(transition, "model.transition")?,
                cost.clone(),
                *recurrent_state,
            )?),
            ModelSpec::LogitMixture {
                components,
                costs,
                recurrent_state,
            } => Box::new(LogitMixtureChain::new(
                components
                    .iter()
                    .enumerate()
                    .map(|(i, c)| matrix(c, &format!("model.components[{i}]")))
                    .collect::<Result<_>>()?,
                costs.clone(),
                *recurrent_state,
            )?),
            ModelSpec::Mdp {
                transition,
                cost,
                recurrent_state,
            } => Box::new(MdpModel::new(transition.clone(), cost.clone(), *recurrent_state)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactBlock {
    /// Offsets from `Lambda_theta` at which `g` is tabulated.
    #[serde(default = "default_lambda_offsets")]
    pub lambda_offsets: Vec<f64>,
    /// Truncation levels for the truncated fixed points.
    #[serde(default = "default_m_list")]
    pub m_list: Vec<f64>,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
}

fn default_lambda_offsets() -> Vec<f64> {
    vec![-0.2, -0.1, 0.0, 0.1, 0.2, 0.5, 1.0]
}
fn default_m_list() -> Vec<f64> {
    vec![2.0, 4.0, 16.0, 64.0, 256.0, 1024.0, 4096.0]
}
fn default_fd_step() -> f64 {
    spectral::FD_STEP
}

impl Default for ExactBlock {
    fn default() -> Self {
        Self {
            lambda_offsets: default_lambda_offsets(),
            m_list: default_m_list(),
            fd_step: default_fd_step(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustBlock {
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    /// Random alternative kernels checked against the KL lower bound.
    #[serde(default = "default_random_q")]
    pub random_q: usize,
}

fn default_alphas() -> Vec<f64> {
    vec![0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 20.0, 50.0]
}
fn default_random_q() -> usize {
    100
}

impl Default for RobustBlock {
    fn default() -> Self {
        Self {
            alphas: default_alphas(),
            random_q: default_random_q(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Parameters for `exact`, `eval` and `robust`; defaults to zeros.
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
    #[serde(default)]
    pub exact: Option<ExactBlock>,
    #[serde(default)]
    pub eval: Option<RunConfig>,
    #[serde(default)]
    pub train: Option<RunConfig>,
    #[serde(default)]
    pub robust: Option<RobustBlock>,
}

fn default_alpha() -> f64 {
    1.0
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    fn check_alpha(&self) -> Result<()> {
        if self.alpha > 0.0 && self.alpha.is_finite() {
            Ok(())
        } else {
            Err(CliError::Validation(format!("alpha: must be positive, got {}", self.alpha)))
        }
    }

    fn theta(&self, model: &dyn RiskModel) -> Result<Vec<f64>> {
        let theta = self.theta.clone().unwrap_or_else(|| vec![0.0; model.n_params()]);
        if theta.len() != model.n_params() {
            return Err(CliError::Validation(format!(
                "theta: expected {} parameters, got {}",
                model.n_params(),
                theta.len()
            )));
        }
        Ok(theta)
    }
}

#[derive(Debug, Parser)]
#[command(name = "riskpg", version, about = "Risk-sensitive exponential-cost evaluation and policy gradient")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact eigen-solution, gradients, cycle identities and truncated roots.
    Exact(CommonArgs),
    /// Policy evaluation of Lambda at fixed parameters.
    Eval(RunArgs),
    /// Policy-gradient training.
    Train(RunArgs),
    /// Entropic risk curve, optimal tilts and KL lower bounds.
    Robust(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Overrides the run seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Independent runs on distinct rng streams, one subdirectory each.
    #[arg(long, default_value_t = 1)]
    pub replications: u64,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    write(path, &s)
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub const TRACE_HEADER: &str =
    "m,t_m,gamma_m,M_m,tau_m,lambda_tilde,update_norm_theta,update_norm_lambda,trunc_active";
pub const CHECKPOINT_HEADER: &str = "m,Lambda_exact,grad_norm_exact,Lambda_trunc";

/// Trace CSV with shortest round-trip number formatting.
pub fn trace_csv(trace: &Trace) -> String {
    let mut s = String::with_capacity(trace.iterations.len() * 96);
    s.push_str(TRACE_HEADER);
    s.push('\n');
    for r in &trace.iterations {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.m,
            r.t_m,
            r.gamma_m,
            r.truncation_m,
            r.tau_m,
            r.lambda_tilde,
            r.update_norm_theta,
            r.update_norm_lambda,
            u8::from(r.trunc_active)
        );
    }
    s
}

pub fn checkpoint_csv(trace: &Trace) -> String {
    let mut s = String::from(CHECKPOINT_HEADER);
    s.push('\n');
    for c in &trace.checkpoints {
        let _ = writeln!(s, "{},{},{},{}", c.m, c.lambda_exact, c.grad_norm_exact, opt(c.lambda_trunc));
    }
    s
}

fn validated_model(cfg: &ExperimentConfig, theta: Option<&[f64]>) -> Result<Box<dyn RiskModel>> {
    cfg.check_alpha()?;
    let model = cfg.model.build()?;
    let th = match theta {
        Some(t) => t.to_vec(),
        None => cfg.theta(model.as_ref())?,
    };
    let report = validate_chain(model.as_ref(), &th)?;
    if !report.irreducible {
        return Err(CliError::Validation("model: kernel is not irreducible".into()));
    }
    if !report.aperiodic {
        log::warn!("kernel has period {}; power iteration may not converge", report.period);
    }
    Ok(model)
}

fn timing(started: Instant) -> Value {
    json!({ "wall_time_secs": started.elapsed().as_secs_f64() })
}

fn summary(command: &str, config: &ExperimentConfig, fin: Value, assertions: Value, started: Instant) -> Value {
    json!({
        "command": command,
        "config": config,
        "final": fin,
        "assertions": assertions,
        "timing": timing(started),
    })
}

pub fn cmd_exact(cfg: &ExperimentConfig, out: &Path) -> Result<Value> {
    let started = Instant::now();
    let mut cfg = cfg.clone();
    let model = validated_model(&cfg, None)?;
    let theta = cfg.theta(model.as_ref())?;
    cfg.theta = Some(theta.clone());
    let block = cfg.exact.get_or_insert_with(ExactBlock::default).clone();
    let alpha = cfg.alpha;
    let snap = model.snapshot(&theta)?;
    let sol = spectral::solve_snapshot(&snap, alpha, Default::default())?;
    let grad = spectral::grad_from_solution(&snap, &sol, alpha);
    let fd = spectral::fd_gradient(model.as_ref(), &theta, alpha, block.fd_step)?;
    let g_at_root = regen::g_exact(&snap, alpha, sol.log_lambda)?;
    let fp = regen::h_via_first_passage(&snap, alpha, sol.log_lambda)?;
    let dg = regen::dg_dlambda_exact(&snap, alpha, sol.log_lambda + fp.shift)?;
    let x_star = snap.recurrent_state();

    let mut grid_csv = String::from("Lambda,g\n");
    let mut grid = Vec::new();
    for off in &block.lambda_offsets {
        let l = sol.log_lambda + off;
        let g = regen::g_exact(&snap, alpha, l)?;
        let _ = writeln!(grid_csv, "{},{}", l, g.value());
        grid.push(json!({ "Lambda": l, "g": match g { GValue::Finite(v) => json!(v), GValue::Divergent => json!("divergent") } }));
    }
    let mut trunc_csv = String::from("M,Lambda_hard,Lambda_smooth\n");
    let mut truncated = Vec::new();
    if snap.n_states() <= trunc::ENUMERATE_MAX_STATES {
        let mut law = trunc::CycleLaw::new(&snap)?;
        for &m in &block.m_list {
            if !(m > 1.0) {
                return Err(CliError::Validation(format!("exact.m_list: levels must exceed 1, got {m}")));
            }
            let hard = law.lambda(alpha, m, TruncationMode::Hard, trunc::DEFAULT_LAMBDA_TOL)?;
            let smooth = law.lambda(alpha, m, TruncationMode::Smooth, trunc::DEFAULT_LAMBDA_TOL)?;
            let _ = writeln!(trunc_csv, "{m},{hard},{smooth}");
            truncated.push(json!({ "M": m, "Lambda_hard": hard, "Lambda_smooth": smooth }));
        }
    } else {
        log::warn!("skipping truncated roots: enumeration needs at most {} states", trunc::ENUMERATE_MAX_STATES);
    }
    let h_gap = sol.h.iter().zip(&fp.h).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let grad_gap = grad.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let fin = json!({
        "Lambda": sol.log_lambda,
        "lambda": sol.lambda,
        "h": sol.h,
        "pi_check": sol.pi_check,
        "twisted": sol.twisted.to_rows(),
        "grad": grad,
        "grad_fd": fd,
        "h_first_passage": fp.h,
        "guard_shift": fp.shift,
        "dg_dLambda": dg,
        "g_grid": grid,
        "truncated": truncated,
    });
    let assertions = json!({
        "poisson_residual": sol.residual,
        "fixed_point_residual": (g_at_root.value() - 1.0).abs(),
        "h_gap": h_gap,
        "return_time_gap": (dg + 1.0 / sol.pi_check[x_star]).abs(),
        "grad_fd_gap": grad_gap,
    });
    mkdir(out)?;
    write(&out.join("g_grid.csv"), &grid_csv)?;
    write(&out.join("truncated.csv"), &trunc_csv)?;
    let s = summary("exact", &cfg, fin, assertions, started);
    write_json(&out.join("summary.json"), &s)?;
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RunKind {
    Eval,
    Train,
}

fn resolve_run(cfg: &ExperimentConfig, model: &dyn RiskModel, kind: RunKind, seed: Option<u64>) -> Result<RunConfig> {
    let block = match kind {
        RunKind::Eval => &cfg.eval,
        RunKind::Train => &cfg.train,
    };
    let mut run = block.clone().ok_or_else(|| {
        CliError::Validation(format!(
            "{}: block is required for this command",
            if kind == RunKind::Eval { "eval" } else { "train" }
        ))
    })?;
    if let Some(s) = seed {
        run.seed = s;
    }
    let theta = match kind {
        RunKind::Eval => cfg.theta(model)?,
        RunKind::Train => run.theta0.clone().unwrap_or_else(|| vec![0.0; model.n_params()]),
    };
    if theta.len() != model.n_params() {
        return Err(CliError::Validation(format!(
            "train.theta0: expected {} parameters, got {}",
            model.n_params(),
            theta.len()
        )));
    }
    run.theta0 = Some(theta);
    run.lambda0 = Some(run.lambda0.unwrap_or(cfg.alpha * model.cost_bounds().1));
    run.validate()?;
    Ok(run)
}

fn run_one(cfg: &ExperimentConfig, kind: RunKind, seed: Option<u64>, stream: u64, out: &Path) -> Result<Value> {
    let started = Instant::now();
    let mut cfg = cfg.clone();
    let model = validated_model(&cfg, None)?;
    let mut run = resolve_run(&cfg, model.as_ref(), kind, seed)?;
    run.stream = stream;
    let theta = run.theta0.clone().expect("resolved");
    let trace = match kind {
        RunKind::Eval => {
            cfg.theta = Some(theta.clone());
            cfg.eval = Some(run.clone());
            optimize::policy_evaluate(model.as_ref(), &theta, cfg.alpha, &run)?
        }
        RunKind::Train => {
            cfg.train = Some(run.clone());
            optimize::train(model.as_ref(), cfg.alpha, &run)?
        }
    };
    let report = diagnostics(&trace);
    mkdir(out)?;
    write(&out.join("trace.csv"), &trace_csv(&trace))?;
    write(&out.join("checkpoints.csv"), &checkpoint_csv(&trace))?;
    let fin = json!({
        "lambda_tilde": report.final_lambda_tilde,
        "Lambda_exact": report.final_lambda_exact,
        "initial_Lambda_exact": report.initial_lambda_exact,
        "final_grad_norm": report.final_grad_norm,
        "Lambda_trunc": report.final_lambda_trunc,
        "grad_norm_trunc": report.final_grad_norm_trunc,
        "theta": report.theta_final,
        "min_lambda_tilde": report.min_lambda_tilde,
        "max_lambda_tilde": report.max_lambda_tilde,
        "cycles": report.cycles,
        "total_steps": report.total_steps,
        "tau_mean": report.tau_mean,
        "tau_max": report.tau_max,
        "truncation_activations": report.truncation_activations,
    });
    let assertions = json!({
        "lower_bound": report.lower_bound,
        "lower_bound_violations": report.lower_bound_violations,
        "upper_excursions": report.upper_excursions,
    });
    let name = if kind == RunKind::Eval { "eval" } else { "train" };
    let s = summary(name, &cfg, fin, assertions, started);
    write_json(&out.join("summary.json"), &s)?;
    Ok(s)
}

fn run_replicated(cfg: &ExperimentConfig, kind: RunKind, args: &RunArgs) -> Result<Vec<Value>> {
    if args.replications == 0 {
        return Err(CliError::Validation("--replications must be at least 1".into()));
    }
    let out = &args.common.out;
    if args.replications == 1 {
        return Ok(vec![run_one(cfg, kind, args.seed, 0, out)?]);
    }
    (0..args.replications)
        .into_par_iter()
        .map(|k| run_one(cfg, kind, args.seed, k, &out.join(format!("rep-{k}"))))
        .collect()
}

pub fn cmd_eval(cfg: &ExperimentConfig, out: &Path, seed: Option<u64>) -> Result<Value> {
    run_one(cfg, RunKind::Eval, seed, 0, out)
}

pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, seed: Option<u64>) -> Result<Value> {
    run_one(cfg, RunKind::Train, seed, 0, out)
}

pub fn cmd_robust(cfg: &ExperimentConfig, out: &Path) -> Result<Value> {
    let started = Instant::now();
    let mut cfg = cfg.clone();
    let model = validated_model(&cfg, None)?;
    let theta = cfg.theta(model.as_ref())?;
    cfg.theta = Some(theta.clone());
    let block = cfg.robust.get_or_insert_with(RobustBlock::default).clone();
    let (avg, max) = robust::risk_limits(model.as_ref(), &theta)?;
    let snap = model.snapshot(&theta)?;
    let mut curve_csv = String::from("alpha,e_alpha,beta_alpha,rho_at_beta,residual,kl_bound_max\n");
    let mut curve = Vec::new();
    let mut monotone_violations = 0;
    let mut sandwich_violations = 0;
    let mut kl_violations = 0;
    let mut max_residual: f64 = 0.0;
    let mut prev = f64::NEG_INFINITY;
    for (i, &alpha) in block.alphas.iter().enumerate() {
        let point = robust::optimal_tilt(model.as_ref(), &theta, alpha)?;
        if point.e_alpha < prev - 1e-10 {
            monotone_violations += 1;
        }
        prev = point.e_alpha;
        if point.e_alpha < avg - 1e-10 || point.e_alpha > max + 1e-10 {
            sandwich_violations += 1;
        }
        max_residual = max_residual.max(point.residual);
        let mut rng = crate::rng::stream(i as u64, 0);
        let mut best = f64::NEG_INFINITY;
        for _ in 0..block.random_q {
            let q = robust::random_edge_law(&snap, &mut rng);
            let v = robust::kl_lower_bound_edges(&snap, alpha, &q)?;
            if v > point.e_alpha + 1e-10 {
                kl_violations += 1;
            }
            best = best.max(v);
        }
        let _ = writeln!(
            curve_csv,
            "{},{},{},{},{},{}",
            alpha,
            point.e_alpha,
            point.beta_alpha,
            point.rho_at_beta,
            point.residual,
            if block.random_q > 0 { best.to_string() } else { String::new() }
        );
        curve.push(point);
    }
    mkdir(out)?;
    write(&out.join("risk_curve.csv"), &curve_csv)?;
    let fin = json!({ "average_cost": avg, "max_cost": max, "curve": curve });
    let assertions = json!({
        "monotone_violations": monotone_violations,
        "sandwich_violations": sandwich_violations,
        "kl_bound_violations": kl_violations,
        "max_tilt_residual": max_residual,
    });
    let s = summary("robust", &cfg, fin, assertions, started);
    write_json(&out.join("summary.json"), &s)?;
    Ok(s)
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Exact(a) => cmd_exact(&ExperimentConfig::load(&a.config)?, &a.out).map(|_| ()),
        Command::Robust(a) => cmd_robust(&ExperimentConfig::load(&a.config)?, &a.out).map(|_| ()),
        Command::Eval(a) => run_replicated(&ExperimentConfig::load(&a.common.config)?, RunKind::Eval, &a).map(|_| ()),
        Command::Train(a) => {
            run_replicated(&ExperimentConfig::load(&a.common.config)?, RunKind::Train, &a).map(|_| ())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_a_cfg() -> ExperimentConfig {
        ExperimentConfig::parse(r#"{"model": {"kind": "builtin", "name": "chain-a"}}"#).unwrap()
    }

    #[test]
    fn parses_defaults() {
        let c = chain_a_cfg();
        assert_eq!(c.alpha, 1.0);
        assert!(c.train.is_none());
        let c = ExperimentConfig::parse(
            r#"{"model": {"kind": "builtin", "name": "chain-a-theta"}, "train": {"steps": 10}}"#,
        )
        .unwrap();
        let t = c.train.unwrap();
        assert_eq!(t.eta, 1.0);
        assert_eq!(t.checkpoint_every, 500);
    }

    #[test]
    fn rejects_unknown_keys() {
        let e = ExperimentConfig::parse(r#"{"model": {"kind": "builtin", "name": "chain-a"}, "alhpa": 1}"#).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("alhpa"));
        let e = ExperimentConfig::parse(
            r#"{"model": {"kind": "builtin", "name": "chain-a"}, "train": {"steps": 1, "etaa": 2}}"#,
        )
        .unwrap_err();
        assert!(e.to_string().contains("etaa"));
    }

    #[test]
    fn bad_rows_are_validation_errors() {
        let c = ExperimentConfig::parse(
            r#"{"model": {"kind": "chain", "transition": [[0.5, 0.5], [0.3, 0.6]], "cost": [0, 1]}}"#,
        )
        .unwrap();
        let e = c.model.build().err().unwrap();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("row 1"), "{e}");
    }

    #[test]
    fn exact_on_chain_a() {
        let dir = tempfile::tempdir().unwrap();
        let s = cmd_exact(&chain_a_cfg(), dir.path()).unwrap();
        assert!((s["final"]["Lambda"].as_f64().unwrap() - 0.916291).abs() < 1e-6);
        assert!(dir.path().join("summary.json").exists());
    }

    #[test]
    fn csv_formatting() {
        let m = fixtures::chain_a();
        let mut run = RunConfig::new(3);
        run.truncation = crate::trunc::TruncationSchedule::Fixed { m: 4.0 };
        let tr = optimize::policy_evaluate(&m, &[], 1.0, &run).unwrap();
        let csv = trace_csv(&tr);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(TRACE_HEADER));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 9);
        assert_eq!(first[3], "4");
        assert_eq!(first[0].parse::<usize>().unwrap(), 0);
        assert!(checkpoint_csv(&tr).starts_with(CHECKPOINT_HEADER));
    }
}
