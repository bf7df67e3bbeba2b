use causalrank::linalg::{Matrix, Vector};
use causalrank::pipeline::{score_ranking, OfflineRank};
use causalrank::rca::RcaParams;
use causalrank::synth::{synthesize, SynthConfig};
use causalrank::ticc::TiccGtcParams;

/// Single-layer causal anomaly ranking written out elementwise: propagation
/// matrix by LU solve, broken network by the vanish-ratio rule, and the
/// quarter-power multiplicative updates from s = 0.5.
fn reference_rca(gt: &Matrix, obs: &Matrix, p: &RcaParams) -> Vector {
    let n = gt.nrows();
    let deg: Vec<f64> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i).map(|j| gt[(i, j)].abs()).sum())
        .collect();
    let norm = Matrix::from_fn(n, n, |i, j| {
        let d = (deg[i] * deg[j]).sqrt();
        if i == j || d == 0.0 {
            0.0
        } else {
            gt[(i, j)].abs() / d
        }
    });
    let system = Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - p.c * norm[(i, j)]);
    let lu = system.lu();
    let mut e = Matrix::zeros(n, n);
    for col in 0..n {
        let mut unit = Vector::zeros(n);
        unit[col] = 1.0 - p.c;
        e.set_column(col, &lu.solve(&unit).unwrap());
    }
    let mask = Matrix::from_fn(n, n, |i, j| if i != j && gt[(i, j)].abs() > p.epsilon { 1.0 } else { 0.0 });
    let broken = Matrix::from_fn(n, n, |i, j| {
        if mask[(i, j)] > 0.0 && obs[(i, j)].abs() < p.theta * gt[(i, j)].abs() {
            norm[(i, j)]
        } else {
            0.0
        }
    });
    let objective = |s: &Vector| {
        let u: Vec<f64> = (0..n).map(|i| (0..n).map(|k| e[(i, k)] * s[k]).sum()).collect();
        let mut f = 0.0;
        for i in 0..n {
            for j in 0..n {
                f += (u[i] * u[j] * mask[(i, j)] - broken[(i, j)]).powi(2);
            }
        }
        f + p.xi * s.iter().map(|v| v.abs()).sum::<f64>()
    };
    let mut s = Vector::from_element(n, 0.5);
    let mut prev = objective(&s);
    for _ in 0..p.max_iters {
        let u: Vec<f64> = (0..n).map(|i| (0..n).map(|k| e[(i, k)] * s[k]).sum()).collect();
        let bu: Vec<f64> = (0..n).map(|i| (0..n).map(|j| broken[(i, j)] * u[j]).sum()).collect();
        let mu: Vec<f64> = (0..n)
            .map(|i| u[i] * (0..n).map(|j| mask[(i, j)] * u[j] * u[j]).sum::<f64>())
            .collect();
        s = Vector::from_fn(n, |k, _| {
            let num = 4.0 * (0..n).map(|i| e[(i, k)] * bu[i]).sum::<f64>();
            let den = 4.0 * (0..n).map(|i| e[(i, k)] * mu[i]).sum::<f64>() + p.xi;
            s[k] * (num / den.max(1e-12)).max(0.0).powf(0.25)
        });
        let cur = objective(&s);
        if cur == 0.0 || (prev - cur).abs() <= p.tolerance * prev.abs() {
            break;
        }
        prev = cur;
    }
    s
}

#[test]
fn degenerate_pipeline_equals_single_layer_reference() {
    let ticc = TiccGtcParams {
        k: 1,
        t_w: 1,
        r_w: 1,
        lambda: 0.1,
        ..TiccGtcParams::default()
    };
    let rca = RcaParams::default();
    for seed in 0..20 {
        let cfg = SynthConfig {
            n_sensors: 8,
            n_timestamps: 120,
            n_runs: 3,
            k: 1,
            t_w: 1,
            max_lag: 0,
            edge_prob: 0.3,
            seed,
            ..SynthConfig::default()
        };
        let (data, _) = synthesize(&cfg).unwrap();
        let out = OfflineRank { data: &data, anomalous: 2, ticc: &ticc, rca: &rca }.run().unwrap();
        let gt = &out.averaged.mrfs[0];
        let obs = &out.outcome.refit.models[0].precision;
        let expected = reference_rca(gt, obs, &rca);
        let scores = &out.outcome.scores.point_scores;
        for t in 0..scores.ncols() {
            let diff = (scores.column(t) - &expected).amax();
            assert!(diff < 1e-8, "seed {seed}, t {t}: {diff}");
        }
    }
}

#[test]
fn ranking_finds_planted_roots_on_easy_instance() {
    let cfg = SynthConfig {
        n_sensors: 10,
        n_timestamps: 300,
        n_runs: 3,
        k: 1,
        edge_prob: 0.15,
        anomaly_count: 2,
        amplitude: 5.0,
        c: 0.5,
        seed: 4,
        ..SynthConfig::default()
    };
    let (data, truth) = synthesize(&cfg).unwrap();
    let ticc = TiccGtcParams { k: 1, lambda: 0.1, ..TiccGtcParams::default() };
    let out = OfflineRank { data: &data, anomalous: 2, ticc: &ticc, rca: &RcaParams::default() }
        .run()
        .unwrap();
    assert_eq!(out.outcome.ranking.len(), cfg.n_sensors);
    let report = score_ranking(&out.outcome.ranking, &truth.root_cause_names());
    assert!(report.recall_at_k >= 0.5, "{report:?}");
}
