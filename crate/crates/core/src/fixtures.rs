//! Builtin models used by the CLI and the tests.
//!
//! * `chain-a`: two states, both rows `(0.5, 0.5)`, costs `(0, ln 4)`.
//! * `chain-a-theta`: both rows `(sigma(theta), 1 - sigma(theta))`, same costs.
//! * `mixture-3`: three-state, three-component logit mixture with
//!   parameter-dependent costs (two parameters).
//! * `mdp-2x2`: two states, two actions, distinct costs.
//! * `mdp-symmetric`: two states, two identical actions.
//! * `one-state`: a single absorbing state with cost `c`.

use crate::linalg::Matrix;
use crate::model::{LogitMixtureChain, MdpModel, RiskModel};
use rand::Rng;

pub const BUILTIN_NAMES: &[&str] = &[
    "chain-a",
    "chain-a-theta",
    "mixture-3",
    "mdp-2x2",
    "mdp-symmetric",
    "one-state",
];

fn m(rows: &[&[f64]]) -> Matrix {
    Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).expect("rectangular")
}

pub fn one_state(cost: f64) -> LogitMixtureChain {
    LogitMixtureChain::fixed(m(&[&[1.0]]), vec![cost], 0).expect("valid fixture")
}

pub fn chain_a() -> LogitMixtureChain {
    LogitMixtureChain::fixed(m(&[&[0.5, 0.5], &[0.5, 0.5]]), vec![0.0, 4f64.ln()], 0)
        .expect("valid fixture")
}

pub fn chain_a_theta() -> LogitMixtureChain {
    LogitMixtureChain::new(
        vec![m(&[&[1.0, 0.0], &[1.0, 0.0]]), m(&[&[0.0, 1.0], &[0.0, 1.0]])],
        vec![vec![0.0, 4f64.ln()]],
        0,
    )
    .expect("valid fixture")
}

pub fn mixture_3() -> LogitMixtureChain {
    LogitMixtureChain::new(
        vec![
            m(&[&[0.2, 0.5, 0.3], &[0.6, 0.2, 0.2], &[0.3, 0.3, 0.4]]),
            m(&[&[0.7, 0.2, 0.1], &[0.1, 0.5, 0.4], &[0.5, 0.1, 0.4]]),
            m(&[&[0.4, 0.3, 0.3], &[0.3, 0.3, 0.4], &[0.2, 0.6, 0.2]]),
        ],
        vec![vec![0.2, 1.0, 0.5], vec![0.0, 0.6, 1.2], vec![0.4, 0.8, 0.1]],
        0,
    )
    .expect("valid fixture")
}

pub fn mdp_2x2() -> MdpModel {
    MdpModel::new(
        vec![
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            vec![vec![0.7, 0.3], vec![0.4, 0.6]],
        ],
        vec![vec![0.0, 1.0], vec![2.0, 0.5]],
        0,
    )
    .expect("valid fixture")
}

pub fn mdp_symmetric() -> MdpModel {
    MdpModel::new(
        vec![
            vec![vec![0.6, 0.4], vec![0.6, 0.4]],
            vec![vec![0.3, 0.7], vec![0.3, 0.7]],
        ],
        vec![vec![0.2, 0.2], vec![1.0, 1.0]],
        0,
    )
    .expect("valid fixture")
}

/// Looks up a builtin by name.
pub fn builtin(name: &str) -> Option<Box<dyn RiskModel>> {
    Some(match name {
        "chain-a" => Box::new(chain_a()),
        "chain-a-theta" => Box::new(chain_a_theta()),
        "mixture-3" => Box::new(mixture_3()),
        "mdp-2x2" => Box::new(mdp_2x2()),
        "mdp-symmetric" => Box::new(mdp_symmetric()),
        "one-state" => Box::new(one_state(0.5)),
        _ => return None,
    })
}

/// Random dense stochastic matrix with entries bounded away from zero.
pub fn random_stochastic<R: Rng>(rng: &mut R, n: usize) -> Matrix {
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        for (j, v) in w.into_iter().enumerate() {
            p[(i, j)] = v / s;
        }
    }
    p
}

/// Random fixed chain with costs on the lattice `{0, 0.25, .., 1.5}`.
///
/// Lattice costs keep the number of distinct cycle-cost sums polynomial in
/// the cycle length, which the cycle-law enumerator relies on.
pub fn random_chain<R: Rng>(rng: &mut R, n: usize) -> LogitMixtureChain {
    let p = random_stochastic(rng, n);
    let c = (0..n).map(|_| 0.25 * rng.gen_range(0..=6) as f64).collect();
    LogitMixtureChain::fixed(p, c, 0).expect("valid random chain")
}

/// Random logit mixture with `k` components and real-valued costs.
pub fn random_mixture<R: Rng>(rng: &mut R, n: usize, k: usize) -> LogitMixtureChain {
    let comps = (0..k).map(|_| random_stochastic(rng, n)).collect();
    let costs = (0..k)
        .map(|_| (0..n).map(|_| rng.gen_range(-0.5..1.5)).collect())
        .collect();
    LogitMixtureChain::new(comps, costs, 0).expect("valid random mixture")
}
