//! Toeplitz inverse-covariance clustering with local and global temporal
//! consistency.
//!
//! Windows of r_w aligned runs are clustered by hard EM: the E-step is the
//! joint dynamic program in [`assign`], the M-step fits one block-Toeplitz
//! sparse precision matrix per cluster ([`mrf`]).

pub mod assign;
pub mod mrf;

use std::collections::BTreeSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::StackedWindow;
use crate::linalg::{self, Matrix, Vector};
use crate::{seed, Error, Result};

pub use assign::{assign_clusters, assignment_cost, Labels, NegLogLikTable, SwitchPenalty};
pub use mrf::{fit_toeplitz_mrf, AdmmOptions};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One cluster's Gaussian MRF over stacked windows.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    /// 1-based cluster identifier.
    pub cluster_id: usize,
    pub precision: Matrix,
    pub mean: Vector,
}

impl ClusterModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Log-likelihood of one window under a model:
/// `−½(x−μ)ᵀA(x−μ) + ½ log det A − (n/2) log 2π`.
pub fn log_likelihood(x: &Vector, model: &ClusterModel) -> Result<f64> {
    if x.len() != model.dim() || model.precision.nrows() != model.dim() {
        return Err(Error::Dimension(format!(
            "window length {} vs model dimension {}",
            x.len(),
            model.dim()
        )));
    }
    let log_det = linalg::log_det_spd(&model.precision)?;
    let d = x - &model.mean;
    Ok(-0.5 * linalg::quad_form(&model.precision, &d) + 0.5 * log_det
        - 0.5 * x.len() as f64 * LN_2PI)
}

/// Precomputed log-determinant for scoring many windows against one model.
struct Scorer<'a> {
    model: &'a ClusterModel,
    constant: f64,
}

impl<'a> Scorer<'a> {
    fn new(model: &'a ClusterModel) -> Result<Self> {
        let log_det = linalg::log_det_spd(&model.precision)?;
        Ok(Self {
            model,
            constant: 0.5 * log_det - 0.5 * model.dim() as f64 * LN_2PI,
        })
    }

    fn neg_ll(&self, x: &Vector) -> f64 {
        let d = x - &self.model.mean;
        0.5 * linalg::quad_form(&self.model.precision, &d) - self.constant
    }
}

fn default_max_em_iters() -> usize {
    100
}

fn default_tolerance() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TiccGtcParams {
    pub k: usize,
    pub lambda: f64,
    pub beta: f64,
    pub alpha: f64,
    pub t_w: usize,
    pub r_w: usize,
    pub max_em_iters: usize,
    pub tolerance: f64,
    pub seed: u64,
    /// Extra seeded random initializations tried after the contiguous one.
    pub restarts: usize,
}

impl Default for TiccGtcParams {
    fn default() -> Self {
        Self {
            k: 2,
            lambda: 0.1,
            beta: 50.0,
            alpha: 50.0,
            t_w: 2,
            r_w: 2,
            max_em_iters: default_max_em_iters(),
            tolerance: default_tolerance(),
            seed: 0,
            restarts: 0,
        }
    }
}

impl TiccGtcParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k", "must be at least 1"));
        }
        if self.t_w == 0 {
            return Err(Error::config("t_w", "must be at least 1"));
        }
        if self.r_w == 0 {
            return Err(Error::config("r_w", "must be at least 1"));
        }
        for (name, v) in [("lambda", self.lambda), ("beta", self.beta), ("alpha", self.alpha)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be a finite non-negative number"));
            }
        }
        if self.max_em_iters == 0 {
            return Err(Error::config("max_em_iters", "must be at least 1"));
        }
        assign::joint_state_count(self.k, self.r_w)?;
        Ok(())
    }
}

/// One (run, end-timestamp) → cluster record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub run: usize,
    pub t: usize,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    pub models: Vec<ClusterModel>,
    /// Dataset run index of each fitted run, in fit order.
    pub runs: Vec<usize>,
    /// End timestamp (1-based) of the first window of every run.
    pub first_t: usize,
    /// 0-based cluster index per `[run position][window]`.
    pub labels: Labels,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

impl ClusteringResult {
    pub fn n_windows(&self) -> usize {
        self.labels.first().map_or(0, Vec::len)
    }

    /// Model assigned to the window ending at `t` (1-based) of run position `r`.
    pub fn model_at(&self, t: usize, r: usize) -> &ClusterModel {
        &self.models[self.labels[r][t - self.first_t]]
    }

    pub fn records(&self) -> Vec<AssignmentRecord> {
        let mut out = Vec::new();
        for (pos, &run) in self.runs.iter().enumerate() {
            for (i, &k) in self.labels[pos].iter().enumerate() {
                out.push(AssignmentRecord {
                    run,
                    t: self.first_t + i,
                    cluster: self.models[k].cluster_id,
                });
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ClusteringJson::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<ClusteringJson>(s)?.try_into()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct ModelJson {
    pub cluster_id: usize,
    pub mean: Vec<f64>,
    /// Dense row-major rows.
    pub precision: Vec<Vec<f64>>,
}

impl From<&ClusterModel> for ModelJson {
    fn from(m: &ClusterModel) -> Self {
        Self {
            cluster_id: m.cluster_id,
            mean: m.mean.iter().copied().collect(),
            precision: m
                .precision
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        }
    }
}

impl TryFrom<ModelJson> for ClusterModel {
    type Error = Error;

    fn try_from(j: ModelJson) -> Result<Self> {
        let dim = j.mean.len();
        if j.precision.len() != dim || j.precision.iter().any(|r| r.len() != dim) {
            return Err(Error::Dimension(format!(
                "cluster {} precision is not {dim}x{dim}",
                j.cluster_id
            )));
        }
        Ok(ClusterModel {
            cluster_id: j.cluster_id,
            mean: Vector::from_vec(j.mean),
            precision: Matrix::from_fn(dim, dim, |i, k| j.precision[i][k]),
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct ClusteringJson {
    models: Vec<ModelJson>,
    assignments: Vec<AssignmentRecord>,
    objective_trace: Vec<f64>,
    converged: bool,
}

impl From<&ClusteringResult> for ClusteringJson {
    fn from(c: &ClusteringResult) -> Self {
        Self {
            models: c.models.iter().map(ModelJson::from).collect(),
            assignments: c.records(),
            objective_trace: c.objective_trace.clone(),
            converged: c.converged,
        }
    }
}

impl TryFrom<ClusteringJson> for ClusteringResult {
    type Error = Error;

    fn try_from(j: ClusteringJson) -> Result<Self> {
        let models: Vec<ClusterModel> = j
            .models
            .into_iter()
            .map(ClusterModel::try_from)
            .collect::<Result<_>>()?;
        let runs: Vec<usize> = j
            .assignments
            .iter()
            .map(|a| a.run)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let first_t = j.assignments.iter().map(|a| a.t).min().unwrap_or(1);
        let last_t = j.assignments.iter().map(|a| a.t).max().unwrap_or(0);
        let n = last_t + 1 - first_t;
        let mut labels = vec![vec![usize::MAX; n]; runs.len()];
        for a in &j.assignments {
            let pos = runs.binary_search(&a.run).unwrap();
            let k = models
                .iter()
                .position(|m| m.cluster_id == a.cluster)
                .ok_or_else(|| Error::Dimension(format!("unknown cluster {}", a.cluster)))?;
            labels[pos][a.t - first_t] = k;
        }
        if labels.iter().flatten().any(|&l| l == usize::MAX) {
            return Err(Error::Dimension("assignments do not cover every window".into()));
        }
        Ok(ClusteringResult {
            models,
            runs,
            first_t,
            labels,
            objective_trace: j.objective_trace,
            converged: j.converged,
        })
    }
}

/// Switches for the anomalous-run refit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FitFlags {
    pub disable_ltc: bool,
    pub disable_gtc: bool,
}

/// Windows of r_w runs arranged `[run position][window]`.
struct WindowGrid<'a> {
    runs: Vec<usize>,
    first_t: usize,
    grid: Vec<Vec<&'a StackedWindow>>,
}

impl<'a> WindowGrid<'a> {
    fn new(windows: &'a [StackedWindow]) -> Result<Self> {
        let runs: Vec<usize> = windows
            .iter()
            .map(|w| w.r)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let first_t = windows.iter().map(|w| w.t).min().unwrap_or(1);
        let mut grid: Vec<Vec<&StackedWindow>> = vec![Vec::new(); runs.len()];
        for w in windows {
            grid[runs.binary_search(&w.r).unwrap()].push(w);
        }
        for g in &mut grid {
            g.sort_by_key(|w| w.t);
        }
        let n = grid.first().map_or(0, Vec::len);
        for (g, r) in grid.iter().zip(&runs) {
            if g.len() != n || g.iter().enumerate().any(|(i, w)| w.t != first_t + i) {
                return Err(Error::Alignment {
                    run: r.to_string(),
                    expected: n,
                    found: g.len(),
                });
            }
        }
        Ok(Self {
            runs,
            first_t,
            grid,
        })
    }

    fn n_windows(&self) -> usize {
        self.grid[0].len()
    }

    fn total(&self) -> usize {
        self.grid.len() * self.n_windows()
    }
}

/// Observer hook called with the models fitted in every M-step.
pub type ModelObserver<'a> = &'a mut dyn FnMut(usize, &[ClusterModel]);

fn m_step(
    grid: &WindowGrid,
    labels: &Labels,
    k: usize,
    n_sensors: usize,
    params: &TiccGtcParams,
) -> Result<Vec<ClusterModel>> {
    (0..k)
        .into_par_iter()
        .map(|c| {
            let members: Vec<&Vector> = grid
                .grid
                .iter()
                .zip(labels)
                .flat_map(|(g, l)| g.iter().zip(l).filter(|(_, &x)| x == c).map(|(w, _)| &w.values))
                .collect();
            let fit = mrf::fit_toeplitz_mrf(
                &members,
                n_sensors,
                params.t_w,
                params.lambda,
                &AdmmOptions::default(),
            )?;
            if !fit.converged {
                log::debug!("cluster {} M-step stopped after {} iterations", c + 1, fit.iterations);
            }
            Ok(ClusterModel {
                cluster_id: c + 1,
                precision: fit.precision,
                mean: fit.mean,
            })
        })
        .collect()
}

fn neg_ll_table(grid: &WindowGrid, models: &[ClusterModel]) -> Result<NegLogLikTable> {
    let scorers: Vec<Scorer> = models.iter().map(Scorer::new).collect::<Result<_>>()?;
    let n = grid.n_windows();
    let r_w = grid.runs.len();
    let k = models.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|t| {
            let mut row = Vec::with_capacity(r_w * k);
            for r in 0..r_w {
                for s in &scorers {
                    row.push(s.neg_ll(&grid.grid[r][t].values));
                }
            }
            row
        })
        .collect();
    Ok(NegLogLikTable::from_fn(n, r_w, k, |t, r, c| rows[t][r * k + c]))
}

fn sparsity(models: &[ClusterModel], lambda: f64) -> f64 {
    models
        .iter()
        .map(|m| {
            let mut s = 0.0;
            for i in 0..m.dim() {
                for j in 0..m.dim() {
                    if i != j {
                        s += m.precision[(i, j)].abs();
                    }
                }
            }
            lambda * s
        })
        .sum()
}

/// Full objective: sparsity + Σ(−ℓℓ) + temporal-consistency penalties.
pub fn objective(
    models: &[ClusterModel],
    table: &NegLogLikTable,
    labels: &Labels,
    lambda: f64,
    pen: SwitchPenalty,
) -> f64 {
    sparsity(models, lambda) + assignment_cost(table, labels, pen)
}

fn contiguous_labels(r_w: usize, n: usize, k: usize) -> Labels {
    let row: Vec<usize> = (0..n).map(|i| (i * k / n).min(k - 1)).collect();
    vec![row; r_w]
}

/// Moves the ⌈M/K⌉ worst-fitting windows into each empty cluster.
fn reseed_empty(labels: &mut Labels, table: &NegLogLikTable, k: usize) -> bool {
    let total = table.n_windows() * table.n_runs();
    let quota = total.div_ceil(k);
    let mut changed = false;
    let mut taken = vec![false; total];
    for c in 0..k {
        if labels.iter().flatten().any(|&l| l == c) {
            continue;
        }
        let mut order: Vec<(usize, usize, f64)> = (0..table.n_runs())
            .flat_map(|r| (0..table.n_windows()).map(move |t| (r, t)))
            .filter(|&(r, t)| !taken[r * table.n_windows() + t])
            .map(|(r, t)| (r, t, table.get(t, r, labels[r][t])))
            .collect();
        order.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        for &(r, t, _) in order.iter().take(quota) {
            labels[r][t] = c;
            taken[r * table.n_windows() + t] = true;
        }
        changed = true;
    }
    changed
}

fn em(
    grid: &WindowGrid,
    n_sensors: usize,
    params: &TiccGtcParams,
    pen: SwitchPenalty,
    init: Labels,
    observer: &mut Option<ModelObserver>,
) -> Result<ClusteringResult> {
    let k = params.k;
    let mut labels = init;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut models = Vec::new();

    for iter in 0..params.max_em_iters {
        models = m_step(grid, &labels, k, n_sensors, params)?;
        if let Some(obs) = observer.as_mut() {
            obs(iter, &models);
        }
        let table = neg_ll_table(grid, &models)?;
        let (_, mut next) = assign::assign_clusters(&table, pen)?;
        reseed_empty(&mut next, &table, k);
        let obj = objective(&models, &table, &next, params.lambda, pen);
        let stable = next == labels;
        let small_change = trace
            .last()
            .is_some_and(|&prev: &f64| (prev - obj).abs() <= params.tolerance * prev.abs().max(1e-300));
        trace.push(obj);
        labels = next;
        if stable || small_change {
            converged = true;
            break;
        }
    }
    Ok(ClusteringResult {
        models,
        runs: grid.runs.clone(),
        first_t: grid.first_t,
        labels,
        objective_trace: trace,
        converged,
    })
}

/// Fits the clustering. `windows` must hold every window of the same r_w
/// aligned runs.
pub fn fit(
    windows: &[StackedWindow],
    n_sensors: usize,
    params: &TiccGtcParams,
    flags: FitFlags,
) -> Result<ClusteringResult> {
    fit_observed(windows, n_sensors, params, flags, None)
}

/// [`fit`] with a hook that sees the models of every M-step.
pub fn fit_observed(
    windows: &[StackedWindow],
    n_sensors: usize,
    params: &TiccGtcParams,
    flags: FitFlags,
    observer: Option<ModelObserver>,
) -> Result<ClusteringResult> {
    params.validate()?;
    if windows.is_empty() {
        return Err(Error::EmptyInput);
    }
    if windows.iter().any(|w| w.values.len() != n_sensors * params.t_w) {
        return Err(Error::Dimension(format!(
            "windows must have length N·t_w = {}",
            n_sensors * params.t_w
        )));
    }
    let grid = WindowGrid::new(windows)?;
    if params.k > grid.total() {
        return Err(Error::config(
            "k",
            format!("K = {} exceeds the {} available windows", params.k, grid.total()),
        ));
    }
    assign::joint_state_count(params.k, grid.runs.len())?;
    let pen = SwitchPenalty {
        beta: if flags.disable_ltc { 0.0 } else { params.beta },
        alpha: if flags.disable_gtc { 0.0 } else { params.alpha },
    };
    let n = grid.n_windows();
    let mut observer = observer;
    let mut best = em(
        &grid,
        n_sensors,
        params,
        pen,
        contiguous_labels(grid.runs.len(), n, params.k),
        &mut observer,
    )?;
    for restart in 0..params.restarts {
        let mut rng = seed::rng(seed::indexed_seed(params.seed, "ticc-restart", restart as u64));
        let init: Labels = (0..grid.runs.len())
            .map(|_| (0..n).map(|_| rng.random_range(0..params.k)).collect())
            .collect();
        let cand = em(&grid, n_sensors, params, pen, init, &mut observer)?;
        if cand.objective_trace.last() < best.objective_trace.last() {
            best = cand;
        }
    }
    Ok(best)
}
