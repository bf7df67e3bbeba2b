use causalrank::linalg::Matrix;
use causalrank::synth::{
    generate_mrfs, generate_series, inject_anomalies, propagated_amplitude, synthesize, SynthConfig,
};
use proptest::prelude::*;

fn stddev(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    (xs.map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[test]
fn noise_inflates_stddev_by_expected_factor() {
    let base = SynthConfig {
        n_sensors: 6,
        n_timestamps: 2000,
        n_runs: 4,
        anomaly_count: 0,
        seed: 3,
        ..SynthConfig::default()
    };
    let (clean, _) = synthesize(&base).unwrap();
    let (noisy, _) = synthesize(&SynthConfig { noise_ratio: 0.1, ..base.clone() }).unwrap();
    let target = 1.01f64.sqrt();
    for i in 0..base.n_sensors {
        let pooled = |d: &causalrank::dataset::RunDataset| {
            stddev(d.runs.iter().flat_map(|r| r.row(i).iter().copied().collect::<Vec<_>>()))
        };
        let ratio = pooled(&noisy) / pooled(&clean);
        assert!((ratio - target).abs() < 0.003, "sensor {i}: ratio {ratio}");
    }
}

#[test]
fn pooled_precision_converges_to_planted() {
    let cfg = SynthConfig {
        n_sensors: 4,
        n_timestamps: 20_000,
        n_runs: 5,
        k: 1,
        t_w: 1,
        max_lag: 0,
        edge_prob: 0.5,
        anomaly_count: 0,
        seed: 8,
        ..SynthConfig::default()
    };
    let (data, truth) = synthesize(&cfg).unwrap();
    let n = cfg.n_sensors;
    let count = (cfg.n_runs * cfg.n_timestamps) as f64;
    let mut cov = Matrix::zeros(n, n);
    for run in &data.runs {
        for col in run.column_iter() {
            cov += &col * col.transpose();
        }
    }
    cov /= count;
    let est = cov.try_inverse().unwrap();
    let planted = &truth.models[0].precision;
    let err = (&est - planted).amax() / planted.amax();
    assert!(err < 0.05, "relative error {err}");
}

#[test]
fn every_reachable_sensor_is_affected() {
    for seed in 0..5 {
        let cfg = SynthConfig {
            n_sensors: 8,
            k: 1,
            t_w: 1,
            max_lag: 0,
            edge_prob: 0.6,
            anomaly_count: 1,
            seed,
            ..SynthConfig::default()
        };
        let models = generate_mrfs(&cfg).unwrap();
        let p = &models[0].precision;
        let n = cfg.n_sensors;
        for root in 0..n {
            // Breadth-first reachability on the planted support.
            let mut seen = vec![false; n];
            let mut stack = vec![root];
            seen[root] = true;
            while let Some(i) = stack.pop() {
                for j in 0..n {
                    if !seen[j] && p[(i, j)] != 0.0 {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            let b = propagated_amplitude(&models[0], &[root], n, 1, cfg.c).unwrap();
            for j in 0..n {
                assert_eq!(b[j] > 0.0, seen[j], "seed {seed} root {root} sensor {j}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Sensors whose propagated amplitude is zero, and every timestamp outside
    /// the anomalous interval, are left bit-identical.
    #[test]
    fn injection_is_local(
        seed in any::<u64>(),
        edge_prob in 0.0f64..0.3,
        m in 1usize..4,
        start in 1usize..30,
        len in 1usize..30,
    ) {
        let cfg = SynthConfig {
            n_sensors: 8,
            n_timestamps: 60,
            n_runs: 2,
            edge_prob,
            anomaly_count: m,
            amplitude: 3.0,
            anomaly_interval: Some((start, start + len)),
            seed,
            ..SynthConfig::default()
        };
        let models = generate_mrfs(&cfg).unwrap();
        let schedule = cfg.schedule().unwrap();
        let clean = generate_series(&models, &schedule, &cfg).unwrap();
        let (hit, truth) = inject_anomalies(&clean, &models, &schedule, &cfg).unwrap();
        prop_assert_eq!(truth.root_causes.len(), m);
        prop_assert_eq!(&hit.runs[0], &clean.runs[0]);
        let run = 1;
        for t in 0..cfg.n_timestamps {
            let inside = t + 1 >= start && t + 1 <= start + len;
            for i in 0..cfg.n_sensors {
                let b = truth.planted_b[schedule[t]][i];
                if !inside || b == 0.0 {
                    prop_assert_eq!(hit.runs[run][(i, t)].to_bits(), clean.runs[run][(i, t)].to_bits());
                }
            }
        }
        for &r in &truth.root_causes {
            prop_assert!(truth.planted_b.iter().all(|b| b[r] > 0.0));
        }
    }
}
