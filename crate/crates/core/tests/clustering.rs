use causalrank::dataset::{stack_windows, standardize, RunDataset, StackedWindow};
use causalrank::linalg::{asymmetry, block_toeplitz_deviation, min_eigenvalue, Matrix};
use causalrank::synth::{synthesize, Segment, SynthConfig};
use causalrank::ticc::{fit, fit_observed, ClusterModel, FitFlags, TiccGtcParams};

fn clean_config(seed: u64, n: usize, t: usize, runs: usize, t_w: usize) -> SynthConfig {
    SynthConfig {
        n_sensors: n,
        n_timestamps: t,
        n_runs: runs,
        k: 2,
        t_w,
        max_lag: t_w - 1,
        edge_prob: 0.3,
        anomaly_count: 0,
        seed,
        ..SynthConfig::default()
    }
}

fn windows_of(data: &RunDataset, t_w: usize) -> Vec<StackedWindow> {
    let (z, _) = standardize(data, None).unwrap();
    stack_windows(&z, t_w).unwrap()
}

/// Best agreement over the two label permutations.
fn agreement(labels: &[usize], truth: &[usize]) -> f64 {
    let same = labels.iter().zip(truth).filter(|(a, b)| a == b).count();
    let n = labels.len();
    same.max(n - same) as f64 / n as f64
}

#[test]
fn every_iterate_is_block_toeplitz_and_positive_definite() {
    for seed in 0..10 {
        let (n, t_w) = (4, 3);
        let cfg = clean_config(seed, n, 90, 2, t_w);
        let (data, _) = synthesize(&cfg).unwrap();
        let windows = windows_of(&data, t_w);
        let params = TiccGtcParams {
            k: 2,
            lambda: [0.0, 0.5, 5.0][seed as usize % 3],
            t_w,
            r_w: 2,
            ..TiccGtcParams::default()
        };
        let mut seen = 0;
        let mut check = |_: usize, models: &[ClusterModel]| {
            for m in models {
                assert!(block_toeplitz_deviation(&m.precision, n, t_w) <= 1e-8);
                assert!(asymmetry(&m.precision) <= 1e-12);
                assert!(min_eigenvalue(&m.precision) > 0.0);
                seen += 1;
            }
        };
        fit_observed(&windows, n, &params, FitFlags::default(), Some(&mut check)).unwrap();
        assert!(seen >= 2);
    }
}

#[test]
fn recovers_planted_states() {
    let mut worst: f64 = 1.0;
    for seed in 0..3 {
        let cfg = SynthConfig {
            segments: Some(vec![
                Segment { cluster: 1, length: 350 },
                Segment { cluster: 2, length: 250 },
            ]),
            ..clean_config(100 + seed, 6, 600, 2, 2)
        };
        let (data, truth) = synthesize(&cfg).unwrap();
        let windows = windows_of(&data, 2);
        let params = TiccGtcParams {
            k: 2,
            lambda: 0.1,
            beta: 20.0,
            alpha: 20.0,
            t_w: 2,
            r_w: 2,
            ..TiccGtcParams::default()
        };
        let res = fit(&windows, 6, &params, FitFlags::default()).unwrap();
        for run in &res.labels {
            // Window i ends at timestamp i + 2 (1-based).
            let planted: Vec<usize> = (0..run.len()).map(|i| truth.schedule[i + 1]).collect();
            worst = worst.min(agreement(run, &planted));
        }
    }
    assert!(worst >= 0.95, "agreement {worst}");
}

fn permute_sensors(data: &RunDataset, perm: &[usize]) -> RunDataset {
    let runs = data
        .runs
        .iter()
        .map(|r| Matrix::from_fn(r.nrows(), r.ncols(), |i, t| r[(perm[i], t)]))
        .collect();
    let names = perm.iter().map(|&i| data.sensor_names[i].clone()).collect();
    RunDataset::new(runs, names, data.run_ids.clone()).unwrap()
}

#[test]
fn sensor_permutation_is_equivariant() {
    let (n, t_w) = (5, 2);
    let cfg = clean_config(9, n, 160, 2, t_w);
    let (data, _) = synthesize(&cfg).unwrap();
    let perm = [3usize, 0, 4, 1, 2];
    let params = TiccGtcParams {
        k: 2,
        lambda: 0.5,
        t_w,
        r_w: 2,
        ..TiccGtcParams::default()
    };
    let a = fit(&windows_of(&data, t_w), n, &params, FitFlags::default()).unwrap();
    let b = fit(
        &windows_of(&permute_sensors(&data, &perm), t_w),
        n,
        &params,
        FitFlags::default(),
    )
    .unwrap();
    assert_eq!(a.labels, b.labels);
    let idx = |s: usize| (s / n) * n + perm[s % n];
    for (ma, mb) in a.models.iter().zip(&b.models) {
        let d = n * t_w;
        for i in 0..d {
            for j in 0..d {
                let diff = (mb.precision[(i, j)] - ma.precision[(idx(i), idx(j))]).abs();
                assert!(diff < 1e-5, "({i},{j}) differs by {diff}");
            }
        }
    }
}

#[test]
fn strong_cross_run_penalty_aligns_runs() {
    let (n, t_w) = (4, 2);
    let cfg = clean_config(21, n, 120, 2, t_w);
    let (data, _) = synthesize(&cfg).unwrap();
    let windows = windows_of(&data, t_w);
    let base = TiccGtcParams {
        k: 2,
        lambda: 0.5,
        beta: 0.0,
        t_w,
        r_w: 2,
        ..TiccGtcParams::default()
    };
    let tied = fit(&windows, n, &TiccGtcParams { alpha: 1e6, ..base.clone() }, FitFlags::default()).unwrap();
    assert_eq!(tied.labels[0], tied.labels[1]);

    // Disabling the cross-run term equals α = 0.
    let off = fit(&windows, n, &TiccGtcParams { alpha: 1e6, ..base.clone() }, FitFlags { disable_ltc: false, disable_gtc: true }).unwrap();
    let zero = fit(&windows, n, &TiccGtcParams { alpha: 0.0, ..base }, FitFlags::default()).unwrap();
    assert_eq!(off.labels, zero.labels);
}

#[test]
fn objective_trace_is_finite_and_settles() {
    let (n, t_w) = (4, 2);
    let cfg = clean_config(33, n, 150, 2, t_w);
    let (data, _) = synthesize(&cfg).unwrap();
    let params = TiccGtcParams { k: 2, lambda: 0.5, t_w, ..TiccGtcParams::default() };
    let res = fit(&windows_of(&data, t_w), n, &params, FitFlags::default()).unwrap();
    assert!(res.converged);
    assert!(res.objective_trace.iter().all(|v| v.is_finite()));
    let first = res.objective_trace[0];
    let last = *res.objective_trace.last().unwrap();
    assert!(last <= first + 1e-6 * first.abs());
}
