//! End-to-end scoring of one anomalous run against the old profile.

use std::collections::HashSet;

use crate::dataset::{stack_run, standardize, RunDataset, StandardizationStats};
use crate::eval::{self, MetricReport};
use crate::linalg::Matrix;
use crate::profile::{build_averaged_profile, fit_profile, AveragedProfile, Profile};
use crate::rca::{self, RankedSensor, RcaParams, ScoreSeries};
use crate::ticc::{self, ClusteringResult, FitFlags, TiccGtcParams};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct RankOutcome {
    /// Per-window MRFs of the anomalous run (no temporal consistency).
    pub refit: ClusteringResult,
    pub scores: ScoreSeries,
    pub ranking: Vec<RankedSensor>,
}

/// Refits the anomalous run window by window, builds broken networks
/// against `reference` and scores every (sensor, timestamp).
pub fn rank_anomalous_run(
    reference: &AveragedProfile,
    run: &Matrix,
    run_index: usize,
    sensor_names: &[String],
    ticc_params: &TiccGtcParams,
    rca_params: &RcaParams,
) -> Result<RankOutcome> {
    let n = run.nrows();
    let t_w = ticc_params.t_w;
    let windows = stack_run(run, run_index, t_w)?;
    if reference.mrfs.len() != windows.len() || reference.first_t != t_w {
        return Err(Error::Dimension(format!(
            "reference profile covers {} windows from t = {}, run has {} from t = {}",
            reference.mrfs.len(),
            reference.first_t,
            windows.len(),
            t_w
        )));
    }
    if reference.mrfs.iter().any(|m| m.nrows() != n * t_w) {
        return Err(Error::Dimension("reference MRFs do not match N·t_w".into()));
    }
    // One run carries 1/r_w of the reference's windows per state; dividing λ
    // by r_w keeps the per-window ℓ₁ weight 2λ/m equal on both sides.
    let refit_params = TiccGtcParams {
        r_w: 1,
        lambda: ticc_params.lambda / ticc_params.r_w as f64,
        ..ticc_params.clone()
    };
    let refit = ticc::fit(
        &windows,
        n,
        &refit_params,
        FitFlags {
            disable_ltc: true,
            disable_gtc: true,
        },
    )?;
    let refs: Vec<&Matrix> = reference.mrfs.iter().collect();
    let observed: Vec<&Matrix> = (0..windows.len())
        .map(|i| &refit.model_at(t_w + i, 0).precision)
        .collect();
    let scores = rca::score_windows(&refs, &observed, t_w, t_w, n, rca_params)?;
    let ranking = rca::rank_sensors(&scores.point_scores, sensor_names);
    Ok(RankOutcome {
        refit,
        scores,
        ranking,
    })
}

/// Inputs of one offline ranking: the preceding runs form the old profile,
/// `anomalous` is scored against it.
pub struct OfflineRank<'a> {
    pub data: &'a RunDataset,
    pub anomalous: usize,
    pub ticc: &'a TiccGtcParams,
    pub rca: &'a RcaParams,
}

#[derive(Debug, Clone)]
pub struct OfflineOutcome {
    pub stats: StandardizationStats,
    pub old_profile: Profile,
    pub averaged: AveragedProfile,
    pub outcome: RankOutcome,
}

impl OfflineRank<'_> {
    /// Standardizes with statistics pooled over every run before the anomalous
    /// one, fits the old profile on the r_w runs just before it, and ranks.
    pub fn run(&self) -> Result<OfflineOutcome> {
        let r_w = self.ticc.r_w;
        if self.anomalous < r_w || self.anomalous >= self.data.n_runs() {
            return Err(Error::State(format!(
                "run {} has fewer than r_w = {r_w} preceding runs",
                self.anomalous
            )));
        }
        let training: Vec<usize> = (0..self.anomalous).collect();
        let (_, stats) = standardize(&self.data.select(&training), None)?;
        let (z, _) = standardize(self.data, Some(&stats))?;
        let reference_runs: Vec<(usize, &Matrix)> = (self.anomalous - r_w..self.anomalous)
            .map(|i| (i, &z.runs[i]))
            .collect();
        let old_profile = fit_profile(&reference_runs, self.ticc)?;
        let averaged = build_averaged_profile(&old_profile);
        let outcome = rank_anomalous_run(
            &averaged,
            &z.runs[self.anomalous],
            self.anomalous,
            &z.sensor_names,
            self.ticc,
            self.rca,
        )?;
        Ok(OfflineOutcome {
            stats,
            old_profile,
            averaged,
            outcome,
        })
    }
}

/// Metrics of a ranking against root-cause sensor names with default k and p.
pub fn score_ranking(ranking: &[RankedSensor], roots: &[String]) -> MetricReport {
    let ranked: Vec<&str> = ranking.iter().map(|r| r.sensor.as_str()).collect();
    let truth: HashSet<&str> = roots.iter().map(String::as_str).collect();
    let m = truth.len();
    eval::evaluate(&ranked, &truth, eval::default_k(m), eval::default_p(m))
}
