//! Rolling new/old profiles over run windows and their comparison.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dataset::{stack_run, StackedWindow};
use crate::linalg::{self, Matrix};
use crate::ticc::{self, ClusterModel, ClusteringJson, ClusteringResult, FitFlags, TiccGtcParams};
use crate::{Error, Result};

/// The clustering of one window of r_w runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    /// Dataset index of the latest run in the window.
    pub run_window_end: usize,
    pub params: TiccGtcParams,
    pub clustering: ClusteringResult,
}

impl Profile {
    pub fn models(&self) -> &[ClusterModel] {
        &self.clustering.models
    }

    /// MRF assigned to the window ending at `t` of run position `r`.
    pub fn mrf_at(&self, t: usize, r: usize) -> &ClusterModel {
        self.clustering.model_at(t, r)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ProfileJson {
            run_window_end: self.run_window_end,
            params: self.params.clone(),
            clustering: (&self.clustering).into(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: ProfileJson = serde_json::from_str(s)?;
        Ok(Self {
            run_window_end: j.run_window_end,
            params: j.params,
            clustering: j.clustering.try_into()?,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileJson {
    run_window_end: usize,
    params: TiccGtcParams,
    clustering: ClusteringJson,
}

/// Fits a profile over the given runs (dataset index, standardized N×T matrix).
pub fn fit_profile(runs: &[(usize, &Matrix)], params: &TiccGtcParams) -> Result<Profile> {
    let n_sensors = runs
        .first()
        .map(|(_, m)| m.nrows())
        .ok_or(Error::EmptyInput)?;
    let mut windows: Vec<StackedWindow> = Vec::new();
    for (idx, run) in runs {
        windows.extend(stack_run(run, *idx, params.t_w)?);
    }
    let clustering = ticc::fit(&windows, n_sensors, params, FitFlags::default())?;
    Ok(Profile {
        run_window_end: runs.last().unwrap().0,
        params: params.clone(),
        clustering,
    })
}

/// Per end-timestamp mean of the r_w assigned cluster precisions.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedProfile {
    /// End timestamp (1-based) of `mrfs[0]`.
    pub first_t: usize,
    pub mrfs: Vec<Matrix>,
}

impl AveragedProfile {
    pub fn at(&self, t: usize) -> &Matrix {
        &self.mrfs[t - self.first_t]
    }
}

pub fn build_averaged_profile(p: &Profile) -> AveragedProfile {
    let c = &p.clustering;
    let r_w = c.runs.len();
    let mrfs = (0..c.n_windows())
        .map(|i| {
            let t = c.first_t + i;
            let mut acc = c.model_at(t, 0).precision.clone();
            for r in 1..r_w {
                acc += &c.model_at(t, r).precision;
            }
            acc / r_w as f64
        })
        .collect();
    AveragedProfile {
        first_t: c.first_t,
        mrfs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Normal,
    Anomalous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdConfig {
    pub absolute_floor: f64,
    pub mad_multiplier: f64,
    /// Below this many past scores only the floor applies.
    pub min_history: usize,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            absolute_floor: 0.05,
            mad_multiplier: 3.0,
            min_history: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileDiffReport {
    pub score: f64,
    pub per_timestamp: Vec<f64>,
    pub threshold: f64,
    pub verdict: Verdict,
}

/// Per-timestamp cosine distance between absolute-valued MRFs and its mean.
pub fn profile_difference(a: &AveragedProfile, b: &AveragedProfile) -> Result<(f64, Vec<f64>)> {
    if a.mrfs.len() != b.mrfs.len() {
        return Err(Error::Dimension(format!(
            "profiles have {} and {} timestamps",
            a.mrfs.len(),
            b.mrfs.len()
        )));
    }
    if a.mrfs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut per = Vec::with_capacity(a.mrfs.len());
    for (x, y) in a.mrfs.iter().zip(&b.mrfs) {
        if x.shape() != y.shape() {
            return Err(Error::Dimension(format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        per.push(linalg::abs_cosine_distance(x, y));
    }
    let score = per.iter().sum::<f64>() / per.len() as f64;
    Ok((score, per))
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Threshold = max(floor, median + 3·MAD) over history; floor only with short history.
pub fn anomaly_threshold(history: &[f64], cfg: &ThresholdConfig) -> f64 {
    if history.len() < cfg.min_history || history.is_empty() {
        return cfg.absolute_floor;
    }
    let mut h = history.to_vec();
    h.sort_by(f64::total_cmp);
    let med = median(&h);
    let mut dev: Vec<f64> = h.iter().map(|x| (x - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let mad = median(&dev);
    cfg.absolute_floor.max(med + cfg.mad_multiplier * mad)
}

pub fn detect_anomalous_run(history: &[f64], current: f64, cfg: &ThresholdConfig) -> Verdict {
    if current > anomaly_threshold(history, cfg) {
        Verdict::Anomalous
    } else {
        Verdict::Normal
    }
}

/// Streaming state: the latest r_w runs plus the new and old profiles.
#[derive(Debug, Clone)]
pub struct MonitorState {
    pub params: TiccGtcParams,
    pub threshold: ThresholdConfig,
    buffer: VecDeque<(usize, Matrix)>,
    pub new_profile: Option<Profile>,
    pub old_profile: Option<Profile>,
    pub history: Vec<f64>,
    pub comparisons: usize,
}

impl MonitorState {
    pub fn new(params: TiccGtcParams, threshold: ThresholdConfig) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            threshold,
            buffer: VecDeque::new(),
            new_profile: None,
            old_profile: None,
            history: Vec::new(),
            comparisons: 0,
        })
    }

    /// Accepts the next (standardized) run. The previous new profile becomes the
    /// old one, a fresh profile is fitted on the latest r_w runs, and once both
    /// slots are filled the two are compared.
    pub fn advance_run_window(
        &mut self,
        run_index: usize,
        run: Matrix,
    ) -> Result<Option<ProfileDiffReport>> {
        self.buffer.push_back((run_index, run));
        if self.buffer.len() > self.params.r_w {
            self.buffer.pop_front();
        }
        if self.buffer.len() < self.params.r_w {
            return Ok(None);
        }
        let runs: Vec<(usize, &Matrix)> = self.buffer.iter().map(|(i, m)| (*i, m)).collect();
        let fresh = fit_profile(&runs, &self.params)?;
        self.old_profile = self.new_profile.replace(fresh);
        let (Some(old), Some(new)) = (&self.old_profile, &self.new_profile) else {
            return Ok(None);
        };
        let (score, per_timestamp) =
            profile_difference(&build_averaged_profile(old), &build_averaged_profile(new))?;
        let threshold = anomaly_threshold(&self.history, &self.threshold);
        let verdict = detect_anomalous_run(&self.history, score, &self.threshold);
        self.history.push(score);
        self.comparisons += 1;
        Ok(Some(ProfileDiffReport {
            score,
            per_timestamp,
            threshold,
            verdict,
        }))
    }
}
