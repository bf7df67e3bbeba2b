//! Synthetic experiment sweeps: each trial generates data, runs the pipeline
//! (or one of its ablations) and evaluates the ranking.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eval::MetricReport;
use crate::pipeline::{score_ranking, OfflineRank};
use crate::rca::RcaParams;
use crate::synth::{self, SynthConfig};
use crate::ticc::TiccGtcParams;
use crate::{seed, Error, Result};

/// Propagation strength standing in for c → 0.
pub const NO_PROPAGATION_C: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    States,
    CrossTimeLag,
    NoiseRatio,
    Convergence,
}

impl Experiment {
    pub fn param(self) -> &'static str {
        match self {
            Experiment::States => "k",
            Experiment::CrossTimeLag => "max_lag",
            Experiment::NoiseRatio => "noise_ratio",
            Experiment::Convergence => "seed_offset",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Experiment::States => "states",
            Experiment::CrossTimeLag => "cross_time_lag",
            Experiment::NoiseRatio => "noise_ratio",
            Experiment::Convergence => "convergence",
        };
        f.write_str(s)
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::config("sweep.experiment", format!("unknown experiment `{s}`")))
    }
}

/// The full pipeline and its ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Full,
    /// K forced to 1.
    SingleState,
    /// t_w forced to 1.
    SingleLag,
    /// c forced towards 0.
    NoPropagation,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Full,
        Method::SingleState,
        Method::SingleLag,
        Method::NoPropagation,
    ];

    pub fn apply(self, ticc: &mut TiccGtcParams, rca: &mut RcaParams) {
        match self {
            Method::Full => {}
            Method::SingleState => ticc.k = 1,
            Method::SingleLag => ticc.t_w = 1,
            Method::NoPropagation => rca.c = NO_PROPAGATION_C,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).unwrap();
        f.write_str(v.as_str().unwrap())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub experiment: Experiment,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::States,
            grid: vec![1.0, 2.0, 3.0, 4.0],
            seeds: (0..10).collect(),
            methods: Method::ALL.to_vec(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::config("sweep.grid", "must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("sweep.seeds", "must not be empty"));
        }
        if self.experiment != Experiment::Convergence
            && (!self.methods.contains(&Method::Full) || self.methods.len() < 2)
        {
            return Err(Error::config(
                "sweep.methods",
                "must include `full` and at least one ablation",
            ));
        }
        for &v in &self.grid {
            let integral = matches!(self.experiment, Experiment::States | Experiment::CrossTimeLag);
            if !v.is_finite() || v < 0.0 || (integral && v.fract() != 0.0) {
                return Err(Error::config("sweep.grid", format!("invalid grid value {v}")));
            }
            if self.experiment == Experiment::States && v < 1.0 {
                return Err(Error::config("sweep.grid", "K must be at least 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub value: f64,
    pub method: Method,
    pub seed: u64,
    pub metrics: Option<MetricReport>,
    /// Summed reconstruction objective over all windows, per update.
    pub objective_trace: Option<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub value: f64,
    pub method: Method,
    pub trials: usize,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub ndcg: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub experiment: Experiment,
    pub param: String,
    pub values: Vec<f64>,
    pub records: Vec<TrialRecord>,
    pub aggregates: Vec<Aggregate>,
    pub failures: usize,
}

impl SweepResult {
    pub fn aggregate(&self, value: f64, method: Method) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.value == value && a.method == method)
    }

    pub fn mean_ndcg(&self, value: f64, method: Method) -> f64 {
        self.aggregate(value, method).map_or(f64::NAN, |a| a.ndcg.mean)
    }

    /// `param,value,method,seed,precision,recall,ndcg`; failed trials leave metrics empty.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["param", "value", "method", "seed", "precision", "recall", "ndcg"])?;
        for r in &self.records {
            let (p, rc, n) = match &r.metrics {
                Some(m) => (
                    m.precision_at_k.to_string(),
                    m.recall_at_k.to_string(),
                    m.ndcg_at_p.to_string(),
                ),
                None => Default::default(),
            };
            w.write_record([
                self.param.clone(),
                r.value.to_string(),
                r.method.to_string(),
                r.seed.to_string(),
                p,
                rc,
                n,
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| Error::io("csv buffer", e.into_error()))?).unwrap())
    }

    /// Per-(value, method) means and deviations, one row each.
    pub fn plot_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "value", "method", "trials", "precision_mean", "precision_std", "recall_mean",
            "recall_std", "ndcg_mean", "ndcg_std",
        ])?;
        for a in &self.aggregates {
            w.write_record([
                a.value.to_string(),
                a.method.to_string(),
                a.trials.to_string(),
                a.precision.mean.to_string(),
                a.precision.std.to_string(),
                a.recall.mean.to_string(),
                a.recall.std.to_string(),
                a.ndcg.mean.to_string(),
                a.ndcg.std.to_string(),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| Error::io("csv buffer", e.into_error()))?).unwrap())
    }
}

/// Base parameters a sweep perturbs.
#[derive(Debug, Clone)]
pub struct SweepBase {
    pub synth: SynthConfig,
    pub ticc: TiccGtcParams,
    pub rca: RcaParams,
    pub root_seed: u64,
}

fn trial_setup(
    base: &SweepBase,
    experiment: Experiment,
    grid: &[f64],
    value: f64,
    seed_value: u64,
) -> (SynthConfig, TiccGtcParams, RcaParams) {
    let mut synth = base.synth.clone();
    let mut ticc = base.ticc.clone();
    let rca = base.rca.clone();
    synth.seed = seed::indexed_seed(base.root_seed, "sweep-data", seed_value);
    ticc.seed = seed::indexed_seed(base.root_seed, "sweep-ticc", seed_value);
    match experiment {
        Experiment::States => {
            synth.k = value as usize;
            ticc.k = value as usize;
        }
        Experiment::CrossTimeLag => {
            let widest = grid.iter().fold(0.0f64, |a, &b| a.max(b)) as usize + 1;
            synth.t_w = synth.t_w.max(widest);
            synth.max_lag = value as usize;
            ticc.t_w = synth.t_w;
        }
        Experiment::NoiseRatio => synth.noise_ratio = value,
        Experiment::Convergence => {
            synth.seed = seed::indexed_seed(synth.seed, "convergence", value as u64);
        }
    }
    synth.segments = None;
    (synth, ticc, rca)
}

/// Runs one trial; the anomalous run is the last configured anomalous run.
pub fn run_trial(
    synth_cfg: &SynthConfig,
    ticc: &TiccGtcParams,
    rca: &RcaParams,
    method: Method,
) -> Result<(MetricReport, Vec<f64>)> {
    let (data, truth) = synth::synthesize(synth_cfg)?;
    let anomalous = *synth_cfg
        .anomalous_run_indices()
        .last()
        .ok_or_else(|| Error::config("synth.anomalous_runs", "a sweep needs an anomalous run"))?;
    let (mut ticc, mut rca) = (ticc.clone(), rca.clone());
    method.apply(&mut ticc, &mut rca);
    let out = OfflineRank {
        data: &data,
        anomalous,
        ticc: &ticc,
        rca: &rca,
    }
    .run()?;
    let metrics = score_ranking(&out.outcome.ranking, &truth.root_cause_names());
    Ok((metrics, summed_trace(&out.outcome.scores.objective_traces)))
}

/// Sums per-window traces, holding each window at its final value once it stops.
pub fn summed_trace(traces: &[Vec<f64>]) -> Vec<f64> {
    let len = traces.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|i| {
            traces
                .iter()
                .map(|t| t.get(i).or(t.last()).copied().unwrap_or(0.0))
                .sum()
        })
        .collect()
}

pub fn run_sweep(cfg: &SweepConfig, base: &SweepBase) -> Result<SweepResult> {
    cfg.validate()?;
    let methods: Vec<Method> = if cfg.experiment == Experiment::Convergence {
        vec![Method::Full]
    } else {
        cfg.methods.clone()
    };
    let jobs: Vec<(f64, Method, u64)> = cfg
        .grid
        .iter()
        .flat_map(|&v| {
            methods
                .iter()
                .flat_map(move |&m| cfg.seeds.iter().map(move |&s| (v, m, s)))
        })
        .collect();
    let records: Vec<TrialRecord> = jobs
        .par_iter()
        .map(|&(value, method, seed_value)| {
            let (synth_cfg, ticc, rca) =
                trial_setup(base, cfg.experiment, &cfg.grid, value, seed_value);
            match run_trial(&synth_cfg, &ticc, &rca, method) {
                Ok((metrics, trace)) => TrialRecord {
                    value,
                    method,
                    seed: seed_value,
                    metrics: (cfg.experiment != Experiment::Convergence).then_some(metrics),
                    objective_trace: (cfg.experiment == Experiment::Convergence).then_some(trace),
                    error: None,
                },
                Err(e) => {
                    log::warn!("trial {value}/{method}/{seed_value} failed: {e}");
                    TrialRecord {
                        value,
                        method,
                        seed: seed_value,
                        metrics: None,
                        objective_trace: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();

    let mut aggregates = Vec::new();
    for &value in &cfg.grid {
        for &method in &methods {
            let ms: Vec<&MetricReport> = records
                .iter()
                .filter(|r| r.value == value && r.method == method)
                .filter_map(|r| r.metrics.as_ref())
                .collect();
            let col = |f: fn(&MetricReport) -> f64| ms.iter().map(|m| f(m)).collect::<Vec<_>>();
            aggregates.push(Aggregate {
                value,
                method,
                trials: ms.len(),
                precision: MeanStd::of(&col(|m| m.precision_at_k)),
                recall: MeanStd::of(&col(|m| m.recall_at_k)),
                ndcg: MeanStd::of(&col(|m| m.ndcg_at_p)),
            });
        }
    }
    let failures = records.iter().filter(|r| r.error.is_some()).count();
    Ok(SweepResult {
        experiment: cfg.experiment,
        param: cfg.experiment.param().to_string(),
        values: cfg.grid.clone(),
        records,
        aggregates,
        failures,
    })
}
