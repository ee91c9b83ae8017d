//! Exact-layer identities checked against independent computations.

use rand::Rng;
use riskpg::fixtures;
use riskpg::linalg::Matrix;
use riskpg::model::RiskModel;
use riskpg::regen;
use riskpg::spectral;

/// Dense first-passage solve written out by hand: for `x != x*`,
/// `h(x) = sum_y P_hat(x, y) / lambda * (y == x* ? 1 : h(y))`, iterated.
fn h_by_iteration(ph: &Matrix, x_star: usize, lambda: f64) -> Vec<f64> {
    let n = ph.rows();
    let mut h = vec![1.0; n];
    for _ in 0..200_000 {
        let mut next = vec![1.0; n];
        for x in 0..n {
            if x == x_star {
                continue;
            }
            next[x] = (0..n)
                .map(|y| ph[(x, y)] / lambda * if y == x_star { 1.0 } else { h[y] })
                .sum();
        }
        h = next;
    }
    h
}

#[test]
fn random_chains_satisfy_poisson_and_regeneration() {
    let mut rng = riskpg::rng::stream(31, 0);
    for n in 2..=6 {
        let chain = fixtures::random_chain(&mut rng, n);
        let alpha = rng.gen_range(0.2..3.0);
        let snap = chain.snapshot(&[]).unwrap();
        let sol = spectral::solve_snapshot(&snap, alpha, Default::default()).unwrap();
        let ph = snap.hat_kernel(alpha);
        let h = h_by_iteration(&ph, snap.recurrent_state(), sol.lambda);
        for x in 0..n {
            assert!((h[x] - sol.h[x]).abs() < 1e-8 * h[x].max(1.0), "n={n} x={x}");
        }
        let g = regen::g_exact(&snap, alpha, sol.log_lambda).unwrap().value();
        assert!((g - 1.0).abs() < 1e-8);
    }
}

#[test]
fn g_is_decreasing_in_lambda() {
    let chain = fixtures::mixture_3();
    let snap = chain.snapshot(&[0.3, -0.4]).unwrap();
    let root = spectral::solve_snapshot(&snap, 1.0, Default::default()).unwrap().log_lambda;
    let mut prev = f64::INFINITY;
    for k in 0..20 {
        let l = root - 0.05 + 0.02 * k as f64;
        let g = regen::g_exact(&snap, 1.0, l).unwrap().value();
        assert!(g < prev);
        prev = g;
    }
}

#[test]
fn g_diverges_past_the_summability_edge() {
    let snap = fixtures::chain_a().snapshot(&[]).unwrap();
    // the excursion through state 1 stays summable down to ln 2
    let g = regen::g_exact(&snap, 1.0, 2.5f64.ln() - 0.2).unwrap();
    assert!(g.is_finite() && g.value() > 1.0);
    let g = regen::g_exact(&snap, 1.0, 2f64.ln() - 0.1).unwrap();
    assert!(!g.is_finite());
}

#[test]
fn monte_carlo_cycle_weight_matches_g() {
    let snap = fixtures::chain_a().snapshot(&[]).unwrap();
    let lambda = 2.5f64.ln() + 0.3;
    let g = regen::g_exact(&snap, 1.0, lambda).unwrap().value();
    let mut rng = riskpg::rng::stream(8, 0);
    let n = 100_000;
    let (mut s, mut s2, mut tau) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let c = regen::sample_cycle(&snap, &mut rng, regen::DEFAULT_CYCLE_CAP).unwrap();
        let w = (c.cost_sum() - c.tau() as f64 * lambda).exp();
        s += w;
        s2 += w * w;
        tau += c.tau() as f64;
    }
    let mean = s / n as f64;
    let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((mean - g).abs() < 4.0 * se, "{mean} vs {g}");
    // the untwisted chain spends half its time at x*
    assert!((tau / n as f64 - 2.0).abs() < 0.03);
}

#[test]
fn mdp_gradient_matches_finite_differences() {
    let mdp = fixtures::mdp_2x2();
    let theta = [0.2, -0.1, 0.4, 0.0];
    let g = spectral::grad_risk_cost(&mdp, &theta, 0.5).unwrap();
    let fd = spectral::fd_gradient(&mdp, &theta, 0.5, spectral::FD_STEP).unwrap();
    for (a, b) in g.iter().zip(&fd) {
        assert!((a - b).abs() < 1e-7, "{a} vs {b}");
    }
}
