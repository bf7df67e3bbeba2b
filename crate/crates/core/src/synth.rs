//! Planted multi-state profiles, autoregressive series generation and
//! amplitude-based causal anomaly injection with known ground truth.

use rand::seq::index;
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::dataset::RunDataset;
use crate::linalg::{self, Matrix, Vector};
use crate::rca;
use crate::ticc::{ClusterModel, ModelJson};
use crate::{seed, Error, Result};

pub const EDGE_WEIGHT_RANGE: (f64, f64) = (0.3, 1.0);
pub const PD_MARGIN: f64 = 0.1;

/// A contiguous stretch of timestamps spent in one cluster (1-based id).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub cluster: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_sensors: usize,
    pub n_timestamps: usize,
    pub n_runs: usize,
    pub k: usize,
    /// Window of the planted MRFs.
    pub t_w: usize,
    /// Largest time lag carrying planted edges (< t_w).
    pub max_lag: usize,
    pub edge_prob: f64,
    /// Defaults to K equal contiguous segments in cluster order.
    pub segments: Option<Vec<Segment>>,
    pub anomaly_count: usize,
    pub amplitude: f64,
    pub noise_ratio: f64,
    /// Propagation strength used to spread the injected anomaly.
    pub c: f64,
    /// Runs (0-based) receiving the anomaly; defaults to the last run.
    pub anomalous_runs: Option<Vec<usize>>,
    /// Inclusive 1-based timestamp range of the anomaly; defaults to the whole run.
    pub anomaly_interval: Option<(usize, usize)>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_sensors: 20,
            n_timestamps: 400,
            n_runs: 6,
            k: 2,
            t_w: 2,
            max_lag: 1,
            edge_prob: 0.1,
            segments: None,
            anomaly_count: 3,
            amplitude: 5.0,
            noise_ratio: 0.0,
            c: 0.8,
            anomalous_runs: None,
            anomaly_interval: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sensors == 0 {
            return Err(Error::config("n_sensors", "must be at least 1"));
        }
        if self.k == 0 {
            return Err(Error::config("k", "must be at least 1"));
        }
        if self.n_runs == 0 {
            return Err(Error::config("n_runs", "must be at least 1"));
        }
        if self.t_w == 0 || self.t_w > self.n_timestamps {
            return Err(Error::config("t_w", "must lie in 1..=n_timestamps"));
        }
        if self.max_lag >= self.t_w {
            return Err(Error::config("max_lag", "must be smaller than t_w"));
        }
        if !(0.0..1.0).contains(&self.edge_prob) {
            return Err(Error::config("edge_prob", "must lie in [0, 1)"));
        }
        if self.anomaly_count > self.n_sensors {
            return Err(Error::config(
                "anomaly_count",
                format!("{} exceeds the {} sensors", self.anomaly_count, self.n_sensors),
            ));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::config("amplitude", "must be non-negative"));
        }
        if !(self.noise_ratio >= 0.0 && self.noise_ratio.is_finite()) {
            return Err(Error::config("noise_ratio", "must be non-negative"));
        }
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(Error::config("c", "must lie strictly between 0 and 1"));
        }
        if let Some(runs) = &self.anomalous_runs {
            if runs.iter().any(|&r| r >= self.n_runs) {
                return Err(Error::config("anomalous_runs", "run index out of range"));
            }
        }
        if let Some((a, b)) = self.anomaly_interval {
            if a == 0 || a > b || b > self.n_timestamps {
                return Err(Error::config("anomaly_interval", "must satisfy 1 <= start <= end <= T"));
            }
        }
        self.schedule().map(|_| ())
    }

    /// 0-based cluster index of every timestamp.
    pub fn schedule(&self) -> Result<Vec<usize>> {
        let segments = match &self.segments {
            Some(s) => s.clone(),
            None => (0..self.k)
                .map(|c| Segment {
                    cluster: c + 1,
                    length: (c + 1) * self.n_timestamps / self.k - c * self.n_timestamps / self.k,
                })
                .collect(),
        };
        let mut out = Vec::with_capacity(self.n_timestamps);
        for s in &segments {
            if s.cluster == 0 || s.cluster > self.k {
                return Err(Error::config("segments", format!("cluster {} is not in 1..=K", s.cluster)));
            }
            out.extend(std::iter::repeat_n(s.cluster - 1, s.length));
        }
        if out.len() != self.n_timestamps {
            return Err(Error::config(
                "segments",
                format!("segments cover {} timestamps, expected {}", out.len(), self.n_timestamps),
            ));
        }
        Ok(out)
    }

    pub fn anomalous_run_indices(&self) -> Vec<usize> {
        self.anomalous_runs
            .clone()
            .unwrap_or_else(|| vec![self.n_runs - 1])
    }

    pub fn sensor_names(&self) -> Vec<String> {
        (1..=self.n_sensors).map(|i| format!("s{i:02}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub models: Vec<ClusterModel>,
    /// 0-based cluster of every timestamp (identical across runs).
    pub schedule: Vec<usize>,
    /// Sorted sensor indices of the root causes.
    pub root_causes: Vec<usize>,
    /// Per cluster, the per-sensor maximum over offsets of `b = E s`.
    pub planted_b: Vec<Vec<f64>>,
    pub config: SynthConfig,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GroundTruthJson {
    pub root_cause_sensors: Vec<String>,
    /// 1-based cluster id per timestamp.
    pub planted_assignments: Vec<usize>,
    pub config: SynthConfig,
}

impl GroundTruth {
    pub fn root_cause_names(&self) -> Vec<String> {
        let names = self.config.sensor_names();
        self.root_causes.iter().map(|&i| names[i].clone()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&GroundTruthJson {
            root_cause_sensors: self.root_cause_names(),
            planted_assignments: self.schedule.iter().map(|c| c + 1).collect(),
            config: self.config.clone(),
        })?)
    }

    pub fn models_json(&self) -> Result<String> {
        let models: Vec<ModelJson> = self.models.iter().map(ModelJson::from).collect();
        Ok(serde_json::to_string(&models)?)
    }
}

fn random_weight(rng: &mut impl Rng) -> f64 {
    let w = rng.sample(Uniform::new_inclusive(EDGE_WEIGHT_RANGE.0, EDGE_WEIGHT_RANGE.1).unwrap());
    if rng.random_bool(0.5) {
        w
    } else {
        -w
    }
}

/// Samples K block-Toeplitz precision matrices from directed Erdős–Rényi
/// graphs on the stacked index set, restricted to lags ≤ `max_lag`.
pub fn generate_mrfs(cfg: &SynthConfig) -> Result<Vec<ClusterModel>> {
    cfg.validate()?;
    let n = cfg.n_sensors;
    let mut rng = seed::rng(seed::sub_seed(cfg.seed, "mrf"));
    let mut models = Vec::with_capacity(cfg.k);
    for k in 0..cfg.k {
        let mut blocks = vec![Matrix::zeros(n, n); cfg.t_w];
        // lag 0: a directed edge either way becomes one undirected edge
        for a in 0..n {
            for b in a + 1..n {
                let ab = rng.random_bool(cfg.edge_prob);
                let ba = rng.random_bool(cfg.edge_prob);
                if ab || ba {
                    let w = random_weight(&mut rng);
                    blocks[0][(a, b)] = w;
                    blocks[0][(b, a)] = w;
                }
            }
        }
        for block in blocks.iter_mut().take(cfg.max_lag + 1).skip(1) {
            for a in 0..n {
                for b in 0..n {
                    if rng.random_bool(cfg.edge_prob) {
                        block[(a, b)] = random_weight(&mut rng);
                    }
                }
            }
        }
        let mut precision = linalg::assemble_block_toeplitz(&blocks);
        let lo = linalg::min_eigenvalue(&precision);
        let shift = PD_MARGIN - lo;
        for i in 0..precision.nrows() {
            precision[(i, i)] += shift;
        }
        models.push(ClusterModel {
            cluster_id: k + 1,
            precision,
            mean: Vector::zeros(n * cfg.t_w),
        });
    }
    Ok(models)
}

/// Per-cluster sampler for the newest block given the previous t_w − 1 blocks.
struct ConditionalSampler {
    /// Lower Cholesky factor of the full precision (for the joint first window).
    joint_chol: Matrix,
    /// Lower Cholesky factor of the newest-block precision.
    last_chol: Matrix,
    /// `−A_LL⁻¹ A_LP`
    gain: Matrix,
}

impl ConditionalSampler {
    fn new(model: &ClusterModel, n: usize, t_w: usize) -> Result<Self> {
        let a = &model.precision;
        let joint_chol = a.clone().cholesky().ok_or(Error::NotPositiveDefinite)?.l();
        let last = (t_w - 1) * n;
        let a_ll = a.view((last, last), (n, n)).into_owned();
        let chol = a_ll.cholesky().ok_or(Error::NotPositiveDefinite)?;
        let a_lp = a.view((last, 0), (n, last)).into_owned();
        let gain = -chol.solve(&a_lp);
        Ok(Self {
            joint_chol,
            last_chol: chol.l(),
            gain,
        })
    }

    /// Draws from N(0, (L Lᵀ)⁻¹) via `L⁻ᵀ z`.
    fn draw(l: &Matrix, rng: &mut impl Rng) -> Vector {
        let z = Vector::from_fn(l.nrows(), |_, _| rng.sample(StandardNormal));
        l.transpose().solve_upper_triangular(&z).expect("cholesky factor is invertible")
    }
}

/// Generates every run from the planted profile; returns the noisy dataset.
pub fn generate_series(
    models: &[ClusterModel],
    schedule: &[usize],
    cfg: &SynthConfig,
) -> Result<RunDataset> {
    cfg.validate()?;
    let (n, t_w, len) = (cfg.n_sensors, cfg.t_w, cfg.n_timestamps);
    if schedule.len() != len {
        return Err(Error::config("segments", "schedule length differs from n_timestamps"));
    }
    let samplers: Vec<ConditionalSampler> = models
        .iter()
        .map(|m| ConditionalSampler::new(m, n, t_w))
        .collect::<Result<_>>()?;

    let mut runs = Vec::with_capacity(cfg.n_runs);
    for r in 0..cfg.n_runs {
        let mut rng = seed::rng(seed::indexed_seed(cfg.seed, "series", r as u64));
        let mut x = Matrix::zeros(n, len);
        let first = ConditionalSampler::draw(&samplers[schedule[0]].joint_chol, &mut rng);
        for j in 0..t_w {
            x.column_mut(j).copy_from(&first.rows(j * n, n));
        }
        let mut prev = Vector::zeros((t_w - 1) * n);
        for t in t_w..len {
            let s = &samplers[schedule[t]];
            for j in 0..t_w - 1 {
                prev.rows_mut(j * n, n).copy_from(&x.column(t - (t_w - 1) + j));
            }
            let mean = &s.gain * &prev;
            let draw = ConditionalSampler::draw(&s.last_chol, &mut rng) + mean;
            x.column_mut(t).copy_from(&draw);
        }
        runs.push(x);
    }

    if cfg.noise_ratio > 0.0 {
        let count = (cfg.n_runs * len) as f64;
        let sigma: Vec<f64> = (0..n)
            .map(|i| {
                let mean = runs.iter().map(|m| m.row(i).sum()).sum::<f64>() / count;
                let var = runs
                    .iter()
                    .map(|m| m.row(i).iter().map(|v| (v - mean).powi(2)).sum::<f64>())
                    .sum::<f64>()
                    / count;
                var.sqrt()
            })
            .collect();
        for (r, run) in runs.iter_mut().enumerate() {
            let mut rng = seed::rng(seed::indexed_seed(cfg.seed, "noise", r as u64));
            for t in 0..len {
                for i in 0..n {
                    let z: f64 = rng.sample(StandardNormal);
                    run[(i, t)] += cfg.noise_ratio * sigma[i] * z;
                }
            }
        }
    }

    let run_ids = (1..=cfg.n_runs).map(|r| r.to_string()).collect();
    RunDataset::new(runs, cfg.sensor_names(), run_ids)
}

/// Per-sensor max over offsets of `b = E s` for the given root set.
pub fn propagated_amplitude(model: &ClusterModel, roots: &[usize], n: usize, t_w: usize, c: f64) -> Result<Vec<f64>> {
    let mut s = Vector::zeros(n * t_w);
    for &root in roots {
        for j in 0..t_w {
            s[j * n + root] = 1.0;
        }
    }
    let (adj, _) = rca::normalize_adjacency(&model.precision);
    let op = rca::propagation_operator(&adj, c)?;
    let b = rca::fault_propagate(&op, &s);
    Ok((0..n)
        .map(|i| (0..t_w).map(|j| b[j * n + i]).fold(0.0, f64::max))
        .collect())
}

/// Picks the root causes and rescales the anomalous runs:
/// `x_n ← x_n · (1 + γ·b̄_n)` under the cluster active at each timestamp.
pub fn inject_anomalies(
    data: &RunDataset,
    models: &[ClusterModel],
    schedule: &[usize],
    cfg: &SynthConfig,
) -> Result<(RunDataset, GroundTruth)> {
    cfg.validate()?;
    let runs_hit = cfg.anomalous_run_indices();
    if cfg.anomaly_count == 0 && !runs_hit.is_empty() {
        return Err(Error::config("anomaly_count", "must be at least 1 when injecting"));
    }
    let n = cfg.n_sensors;
    let mut rng = seed::rng(seed::sub_seed(cfg.seed, "roots"));
    let mut roots: Vec<usize> = index::sample(&mut rng, n, cfg.anomaly_count).into_vec();
    roots.sort_unstable();
    let planted_b: Vec<Vec<f64>> = models
        .iter()
        .map(|m| propagated_amplitude(m, &roots, n, cfg.t_w, cfg.c))
        .collect::<Result<_>>()?;

    let (start, end) = cfg.anomaly_interval.unwrap_or((1, cfg.n_timestamps));
    let mut out = data.clone();
    for &r in &runs_hit {
        let run = &mut out.runs[r];
        for t in start - 1..end {
            let b = &planted_b[schedule[t]];
            for (i, &bi) in b.iter().enumerate() {
                if bi != 0.0 {
                    run[(i, t)] *= 1.0 + cfg.amplitude * bi;
                }
            }
        }
    }
    Ok((
        out,
        GroundTruth {
            models: models.to_vec(),
            schedule: schedule.to_vec(),
            root_causes: roots,
            planted_b,
            config: cfg.clone(),
        },
    ))
}

/// Models, series and injection in one call.
pub fn synthesize(cfg: &SynthConfig) -> Result<(RunDataset, GroundTruth)> {
    let models = generate_mrfs(cfg)?;
    let schedule = cfg.schedule()?;
    let clean = generate_series(&models, &schedule, cfg)?;
    if cfg.anomaly_count == 0 {
        let gt = GroundTruth {
            models,
            schedule,
            root_causes: Vec::new(),
            planted_b: Vec::new(),
            config: cfg.clone(),
        };
        return Ok((clean, gt));
    }
    inject_anomalies(&clean, &models, &schedule, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::block_toeplitz_deviation;

    fn small() -> SynthConfig {
        SynthConfig {
            n_sensors: 5,
            n_timestamps: 60,
            n_runs: 2,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_edge_probability_gives_diagonal() {
        let cfg = SynthConfig { edge_prob: 0.0, ..small() };
        for m in generate_mrfs(&cfg).unwrap() {
            let off: f64 = (0..m.dim())
                .flat_map(|i| (0..m.dim()).map(move |j| (i, j)))
                .filter(|(i, j)| i != j)
                .map(|(i, j)| m.precision[(i, j)].abs())
                .sum();
            assert_eq!(off, 0.0);
        }
    }

    #[test]
    fn planted_models_satisfy_invariants() {
        for seed_value in 0..5 {
            let cfg = SynthConfig { seed: seed_value, edge_prob: 0.3, t_w: 3, max_lag: 2, ..small() };
            for m in generate_mrfs(&cfg).unwrap() {
                assert!(block_toeplitz_deviation(&m.precision, 5, 3) < 1e-12);
                assert!(linalg::asymmetry(&m.precision) < 1e-12);
                assert!((linalg::min_eigenvalue(&m.precision) - PD_MARGIN).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_max_lag_has_no_cross_time_blocks() {
        let cfg = SynthConfig { max_lag: 0, edge_prob: 0.5, ..small() };
        for m in generate_mrfs(&cfg).unwrap() {
            assert_eq!(m.precision.view((0, 5), (5, 5)).abs().max(), 0.0);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let (a, ga) = synthesize(&small()).unwrap();
        let (b, gb) = synthesize(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
        let (c, _) = synthesize(&SynthConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_amplitude_leaves_data_unchanged() {
        let cfg = SynthConfig { amplitude: 0.0, ..small() };
        let models = generate_mrfs(&cfg).unwrap();
        let schedule = cfg.schedule().unwrap();
        let clean = generate_series(&models, &schedule, &cfg).unwrap();
        let (out, gt) = inject_anomalies(&clean, &models, &schedule, &cfg).unwrap();
        assert_eq!(out, clean);
        assert_eq!(gt.root_causes.len(), 3);
    }

    #[test]
    fn no_edges_touches_only_roots() {
        let cfg = SynthConfig { edge_prob: 0.0, ..small() };
        let models = generate_mrfs(&cfg).unwrap();
        let schedule = cfg.schedule().unwrap();
        let clean = generate_series(&models, &schedule, &cfg).unwrap();
        let (out, gt) = inject_anomalies(&clean, &models, &schedule, &cfg).unwrap();
        for i in 0..5 {
            let changed = out.runs[1].row(i) != clean.runs[1].row(i);
            assert_eq!(changed, gt.root_causes.contains(&i), "sensor {i}");
        }
        assert_eq!(out.runs[0], clean.runs[0]);
    }

    #[test]
    fn too_many_roots_rejected() {
        let cfg = SynthConfig { anomaly_count: 6, ..small() };
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "anomaly_count"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schedule_default_and_custom() {
        let cfg = SynthConfig { k: 3, n_timestamps: 10, ..small() };
        assert_eq!(cfg.schedule().unwrap(), vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 2]);
        let cfg = SynthConfig {
            segments: Some(vec![Segment { cluster: 2, length: 4 }, Segment { cluster: 1, length: 5 }]),
            n_timestamps: 10,
            ..small()
        };
        assert!(cfg.schedule().is_err());
    }

    #[test]
    fn ground_truth_json_keys() {
        let (_, gt) = synthesize(&small()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&gt.to_json().unwrap()).unwrap();
        assert_eq!(v["root_cause_sensors"].as_array().unwrap().len(), 3);
        assert_eq!(v["planted_assignments"].as_array().unwrap().len(), 60);
        assert_eq!(v["config"]["n_sensors"], 5);
    }
}
