use causalrank::linalg::{Matrix, Vector};
use causalrank::rca::{
    build_broken_network, fault_propagate, multiplicative_step, normalize_adjacency,
    propagation_operator, reconstruction_objective, solve_window_scores, RcaParams,
};
use causalrank::seed;
use proptest::prelude::*;
use rand::Rng;

/// Symmetric reference with a connected ring plus random chords, and an
/// observation where a random subset of edges is weakened.
fn instance(rng: &mut impl Rng, n: usize) -> (Matrix, Matrix) {
    let mut gt = Matrix::identity(n, n) * 2.0;
    let set = |m: &mut Matrix, i: usize, j: usize, v: f64| {
        m[(i, j)] = v;
        m[(j, i)] = v;
    };
    for i in 0..n {
        let w = rng.random_range(0.3..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        set(&mut gt, i, (i + 1) % n, w);
    }
    for i in 0..n {
        for j in i + 2..n {
            if rng.random_bool(0.2) {
                let w = rng.random_range(0.3..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                set(&mut gt, i, j, w);
            }
        }
    }
    let mut obs = gt.clone();
    for i in 0..n {
        for j in i + 1..n {
            if gt[(i, j)] != 0.0 && rng.random_bool(0.3) {
                let v = gt[(i, j)] * rng.random_range(0.0..0.45);
                set(&mut obs, i, j, v);
            }
        }
    }
    (gt, obs)
}

#[test]
fn every_update_is_non_increasing() {
    let mut rng = seed::rng(2024);
    let params = RcaParams::default();
    let mut worst_ascent = f64::NEG_INFINITY;
    for case in 0..100 {
        let n = rng.random_range(2..=30);
        let (gt, obs) = instance(&mut rng, n);
        let xi = [0.0, 1e-3, 0.1][case % 3];
        let c = rng.random_range(0.05..0.95);
        let pair = build_broken_network(&gt, &obs, params.theta, params.epsilon).unwrap();
        let (adj, _) = normalize_adjacency(&gt);
        let op = propagation_operator(&adj, c).unwrap();
        let mut s = Vector::from_fn(n, |_, _| rng.random_range(0.05..1.0));
        let mut prev = reconstruction_objective(&op, &pair, &s, xi);
        for _ in 0..200 {
            s = multiplicative_step(&op, &pair, &s, xi);
            let cur = reconstruction_objective(&op, &pair, &s, xi);
            worst_ascent = worst_ascent.max(cur - prev);
            assert!(cur <= prev + 1e-9, "case {case}: {prev} -> {cur}");
            assert!(s.iter().all(|v| *v >= 0.0 && v.is_finite()));
            prev = cur;
        }
    }
    assert!(worst_ascent <= 1e-9);
}

/// Independent minimizer of the propagation quadratic
/// `c·Σ_{i<j} |A_ij| (b_i/√D_i − b_j/√D_j)² + (1−c)‖b − s‖²` over b ≥ 0.
fn projected_gradient(a: &Matrix, s: &Vector, c: f64) -> Vector {
    let n = s.len();
    let d: Vec<f64> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum())
        .collect();
    let grad = |b: &Vector| {
        let mut g = Vector::zeros(n);
        for i in 0..n {
            for j in i + 1..n {
                let w = a[(i, j)].abs();
                if w == 0.0 {
                    continue;
                }
                let diff = b[i] / d[i].sqrt() - b[j] / d[j].sqrt();
                g[i] += 2.0 * c * w * diff / d[i].sqrt();
                g[j] -= 2.0 * c * w * diff / d[j].sqrt();
            }
            g[i] += 2.0 * (1.0 - c) * (b[i] - s[i]);
        }
        g
    };
    // Step below 1/L with L ≤ 2c·2 + 2(1−c).
    let step = 1.0 / (4.0 * c + 2.0 * (1.0 - c));
    let mut b = s.clone();
    for _ in 0..200_000 {
        let g = grad(&b);
        let next = (&b - g * step).map(|v| v.max(0.0));
        let moved = (&next - &b).amax();
        b = next;
        if moved < 1e-14 {
            break;
        }
    }
    b
}

#[test]
fn closed_form_propagation_matches_iterative_minimizer() {
    let mut rng = seed::rng(77);
    for _ in 0..50 {
        let n = rng.random_range(2..=20);
        let (gt, _) = instance(&mut rng, n);
        let c = rng.random_range(0.1..0.9);
        let s = Vector::from_fn(n, |_, _| if rng.random_bool(0.4) { rng.random_range(0.0..1.0) } else { 0.0 });
        let (adj, _) = normalize_adjacency(&gt);
        let op = propagation_operator(&adj, c).unwrap();
        let closed = fault_propagate(&op, &s);
        let oracle = projected_gradient(&gt, &s, c);
        let err = (&closed - &oracle).amax();
        assert!(err < 1e-6, "n={n} c={c}: max error {err}");
    }
}

#[test]
fn solver_finds_planted_root() {
    // A star whose hub lost every edge: the hub must come first.
    let n = 6;
    let mut gt = Matrix::identity(n, n);
    for j in 1..n {
        gt[(0, j)] = 0.5;
        gt[(j, 0)] = 0.5;
    }
    let mut obs = gt.clone();
    for j in 1..n {
        obs[(0, j)] = 0.0;
        obs[(j, 0)] = 0.0;
    }
    let params = RcaParams::default();
    let pair = build_broken_network(&gt, &obs, params.theta, params.epsilon).unwrap();
    let (adj, _) = normalize_adjacency(&gt);
    let op = propagation_operator(&adj, 0.5).unwrap();
    let sol = solve_window_scores(&op, &pair, params.xi, &params);
    let top = sol.s.iamax();
    assert_eq!(top, 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Scores stay non-negative and the objective trace never rises.
    #[test]
    fn solver_trace_monotone(seed_value in any::<u64>(), n in 2usize..16, xi in 0.0f64..0.5) {
        let mut rng = seed::rng(seed_value);
        let (gt, obs) = instance(&mut rng, n);
        let params = RcaParams::default();
        let pair = build_broken_network(&gt, &obs, params.theta, params.epsilon).unwrap();
        let (adj, _) = normalize_adjacency(&gt);
        let op = propagation_operator(&adj, params.c).unwrap();
        let sol = solve_window_scores(&op, &pair, xi, &params);
        prop_assert!(sol.s.iter().all(|v| *v >= 0.0));
        for w in sol.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9);
        }
    }

    /// Without broken edges every score collapses to zero.
    #[test]
    fn intact_network_scores_zero(seed_value in any::<u64>(), n in 2usize..12) {
        let mut rng = seed::rng(seed_value);
        let (gt, _) = instance(&mut rng, n);
        let params = RcaParams::default();
        let pair = build_broken_network(&gt, &gt, params.theta, params.epsilon).unwrap();
        let (adj, _) = normalize_adjacency(&gt);
        let op = propagation_operator(&adj, params.c).unwrap();
        let sol = solve_window_scores(&op, &pair, params.xi, &params);
        prop_assert!(sol.s.iter().all(|v| *v == 0.0));
    }
}
