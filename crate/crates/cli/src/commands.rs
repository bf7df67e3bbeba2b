//! Subcommand implementations. Every command writes into the configured
//! output directory; file names are fixed so later commands can find them.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use causalrank::config::PipelineConfig;
use causalrank::dataset::{load_runs, standardize, RunDataset, StandardizationStats};
use causalrank::eval::{self, MetricReport};
use causalrank::linalg::Matrix;
use causalrank::pipeline::rank_anomalous_run;
use causalrank::profile::{build_averaged_profile, fit_profile, MonitorState, Profile, Verdict};
use causalrank::rca::RankedSensor;
use causalrank::sweep::{self, Experiment, SweepBase};
use causalrank::synth::{self, GroundTruthJson};
use causalrank::{Error, Result};

use crate::Command;

pub const DATA_FILE: &str = "data.csv";
pub const TRUTH_FILE: &str = "ground_truth.json";
pub const STATS_FILE: &str = "stats.json";
pub const PROFILE_DIR: &str = "profiles";
pub const VERDICTS_FILE: &str = "verdicts.json";

pub fn profile_path(out: &Path, run_id: &str) -> PathBuf {
    out.join(PROFILE_DIR).join(format!("profile_{run_id}.json"))
}

pub fn scores_path(out: &Path, run_id: &str) -> PathBuf {
    out.join(format!("scores_run{run_id}.csv"))
}

pub fn ranking_path(out: &Path, run_id: &str) -> PathBuf {
    out.join(format!("ranking_run{run_id}.json"))
}

pub fn dispatch(cmd: &Command, cfg: &PipelineConfig) -> Result<()> {
    match cmd {
        Command::Synth => cmd_synth(cfg),
        Command::Fit { input, runs } => cmd_fit(cfg, input.as_deref(), runs),
        Command::Monitor { input, no_rank } => cmd_monitor(cfg, input.as_deref(), *no_rank),
        Command::Rank { input, run } => cmd_rank(cfg, input.as_deref(), run),
        Command::Sweep => cmd_sweep(cfg),
        Command::Eval {
            ranking,
            truth,
            at_k,
            at_p,
        } => cmd_eval(cfg, ranking, truth, *at_k, *at_p),
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn load_input(cfg: &PipelineConfig, input: Option<&Path>) -> Result<RunDataset> {
    let path = input
        .map(Path::to_path_buf)
        .or_else(|| cfg.data.input.clone())
        .ok_or_else(|| Error::config("data.input", "no input given; pass --input or set data.input"))?;
    load_runs(&path, &cfg.data.schema)
}

fn run_position(data: &RunDataset, id: &str) -> Result<usize> {
    data.run_ids
        .iter()
        .position(|r| r == id)
        .ok_or_else(|| Error::config("run", format!("no run with id `{id}`")))
}

pub fn cmd_synth(cfg: &PipelineConfig) -> Result<()> {
    let synth_cfg = cfg.synth_resolved();
    let (data, truth) = synth::synthesize(&synth_cfg)?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    data.write_csv(&out.join(DATA_FILE))?;
    write(&out.join(TRUTH_FILE), &truth.to_json()?)?;
    println!(
        "wrote {} runs x {} timestamps x {} sensors to {}",
        data.n_runs(),
        data.n_timestamps(),
        data.n_sensors(),
        out.display()
    );
    Ok(())
}

pub fn cmd_fit(cfg: &PipelineConfig, input: Option<&Path>, runs: &[String]) -> Result<()> {
    let data = load_input(cfg, input)?;
    let params = cfg.ticc_resolved();
    let idx: Vec<usize> = if runs.is_empty() {
        if data.n_runs() < params.r_w {
            return Err(Error::State(format!(
                "{} runs available, r_w = {} needed",
                data.n_runs(),
                params.r_w
            )));
        }
        (0..params.r_w).collect()
    } else {
        runs.iter().map(|r| run_position(&data, r)).collect::<Result<_>>()?
    };
    if idx.len() != params.r_w {
        return Err(Error::config("runs", format!("expected r_w = {} runs", params.r_w)));
    }
    let (_, stats) = standardize(&data.select(&idx), None)?;
    let (z, _) = standardize(&data, Some(&stats))?;
    let members: Vec<(usize, &Matrix)> = idx.iter().map(|&i| (i, &z.runs[i])).collect();
    let profile = fit_profile(&members, &params)?;
    let out = &cfg.output_dir;
    write(&out.join(STATS_FILE), &stats.to_json()?)?;
    let path = profile_path(out, &data.run_ids[profile.run_window_end]);
    write(&path, &profile.to_json()?)?;
    println!("profile over runs {:?} written to {}", runs_label(&data, &idx), path.display());
    Ok(())
}

fn runs_label(data: &RunDataset, idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| data.run_ids[i].clone()).collect()
}

#[derive(Serialize)]
struct VerdictLine {
    run: String,
    score: f64,
    threshold: f64,
    verdict: Verdict,
}

pub fn cmd_monitor(cfg: &PipelineConfig, input: Option<&Path>, no_rank: bool) -> Result<()> {
    let data = load_input(cfg, input)?;
    let params = cfg.ticc_resolved();
    if data.n_runs() < params.r_w {
        return Err(Error::State(format!(
            "warm-up needs r_w = {} runs, only {} available",
            params.r_w,
            data.n_runs()
        )));
    }
    let out = &cfg.output_dir;
    let warm_up: Vec<usize> = (0..params.r_w).collect();
    let (_, stats) = standardize(&data.select(&warm_up), None)?;
    let (z, _) = standardize(&data, Some(&stats))?;
    write(&out.join(STATS_FILE), &stats.to_json()?)?;

    let mut state = MonitorState::new(params.clone(), cfg.threshold.clone())?;
    let mut lines = Vec::new();
    for (i, run) in z.runs.iter().enumerate() {
        let report = state.advance_run_window(i, run.clone())?;
        if let Some(p) = &state.new_profile {
            if p.run_window_end == i {
                write(&profile_path(out, &data.run_ids[i]), &p.to_json()?)?;
            }
        }
        let Some(report) = report else { continue };
        let id = &data.run_ids[i];
        println!(
            "run {id}: {} (score {:.6}, threshold {:.6})",
            match report.verdict {
                Verdict::Normal => "normal",
                Verdict::Anomalous => "anomalous",
            },
            report.score,
            report.threshold
        );
        lines.push(VerdictLine {
            run: id.clone(),
            score: report.score,
            threshold: report.threshold,
            verdict: report.verdict,
        });
        if report.verdict == Verdict::Anomalous && !no_rank {
            rank_from_disk(cfg, &data, i)?;
        }
    }
    write(&out.join(VERDICTS_FILE), &serde_json::to_string_pretty(&lines)?)?;
    Ok(())
}

pub fn cmd_rank(cfg: &PipelineConfig, input: Option<&Path>, run: &str) -> Result<()> {
    let data = load_input(cfg, input)?;
    let idx = run_position(&data, run)?;
    rank_from_disk(cfg, &data, idx)
}

/// Ranks run `idx` using the persisted statistics and the profile that ends
/// with the run just before it.
fn rank_from_disk(cfg: &PipelineConfig, data: &RunDataset, idx: usize) -> Result<()> {
    let out = &cfg.output_dir;
    let id = &data.run_ids[idx];
    if idx == 0 {
        return Err(Error::State(format!("run {id} has no preceding profile")));
    }
    let prev = &data.run_ids[idx - 1];
    let ppath = profile_path(out, prev);
    if !ppath.exists() {
        return Err(Error::State(format!(
            "no old profile for run {id}: {} is missing; run `fit` or `monitor` first",
            ppath.display()
        )));
    }
    let spath = out.join(STATS_FILE);
    if !spath.exists() {
        return Err(Error::State(format!("{} is missing", spath.display())));
    }
    let profile = Profile::from_json(&read(&ppath)?)?;
    let stats = StandardizationStats::from_json(&read(&spath)?, &data.sensor_names)?;
    let params = cfg.ticc_resolved();
    if profile.params.t_w != params.t_w {
        return Err(Error::config(
            "ticc.t_w",
            format!("profile was fitted with t_w = {}", profile.params.t_w),
        ));
    }
    let single = data.select(&[idx]);
    let (z, _) = standardize(&single, Some(&stats))?;
    let averaged = build_averaged_profile(&profile);
    let outcome = rank_anomalous_run(
        &averaged,
        &z.runs[0],
        idx,
        &data.sensor_names,
        &params,
        &cfg.rca,
    )?;
    write_scores(&scores_path(out, id), &outcome.scores.point_scores, &data.sensor_names)?;
    write(
        &ranking_path(out, id),
        &serde_json::to_string_pretty(&outcome.ranking)?,
    )?;
    let top: Vec<&str> = outcome.ranking.iter().take(5).map(|r| r.sensor.as_str()).collect();
    println!("run {id}: top sensors {}", top.join(", "));
    Ok(())
}

fn write_scores(path: &Path, scores: &Matrix, sensors: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["timestamp".to_string()];
    header.extend(sensors.iter().cloned());
    w.write_record(&header)?;
    for t in 0..scores.ncols() {
        let mut row = vec![(t + 1).to_string()];
        row.extend(scores.column(t).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write(path, &String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn cmd_sweep(cfg: &PipelineConfig) -> Result<()> {
    let base = SweepBase {
        synth: cfg.synth.clone(),
        ticc: cfg.ticc.clone(),
        rca: cfg.rca.clone(),
        root_seed: cfg.seed,
    };
    let result = sweep::run_sweep(&cfg.sweep, &base)?;
    let out = &cfg.output_dir;
    let name = result.experiment.to_string();
    write(&out.join(format!("sweep_{name}.csv")), &result.to_csv()?)?;
    write(&out.join(format!("plot_{name}.csv")), &result.plot_csv()?)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        experiment: String,
        param: &'a str,
        values: &'a [f64],
        trials: usize,
        failures: usize,
        aggregates: &'a [sweep::Aggregate],
        errors: Vec<String>,
    }
    let summary = Summary {
        experiment: name.clone(),
        param: &result.param,
        values: &result.values,
        trials: result.records.len(),
        failures: result.failures,
        aggregates: &result.aggregates,
        errors: result.records.iter().filter_map(|r| r.error.clone()).collect(),
    };
    write(
        &out.join(format!("sweep_{name}_summary.json")),
        &serde_json::to_string_pretty(&summary)?,
    )?;
    if result.experiment == Experiment::Convergence {
        for r in &result.records {
            let Some(trace) = &r.objective_trace else { continue };
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["iteration", "objective"])?;
            for (i, v) in trace.iter().enumerate() {
                w.write_record([(i + 1).to_string(), v.to_string()])?;
            }
            let path = out.join(format!("convergence_v{}_seed{}.csv", r.value, r.seed));
            let bytes = w.into_inner().map_err(|e| Error::io(&path, e.into_error()))?;
            write(&path, &String::from_utf8(bytes).expect("csv output is utf-8"))?;
        }
    }
    for a in &result.aggregates {
        println!(
            "{}={} {:<15} ndcg {:.3} ± {:.3}  precision {:.3}  recall {:.3}  ({} trials)",
            result.param,
            a.value,
            a.method.to_string(),
            a.ndcg.mean,
            a.ndcg.std,
            a.precision.mean,
            a.recall.mean,
            a.trials
        );
    }
    println!("{} trials, {} failed", result.records.len(), result.failures);
    Ok(())
}

pub fn cmd_eval(
    cfg: &PipelineConfig,
    ranking: &Path,
    truth: &Path,
    at_k: Option<usize>,
    at_p: Option<usize>,
) -> Result<()> {
    let ranked: Vec<RankedSensor> = serde_json::from_str(&read(ranking)?)?;
    let gt: GroundTruthJson = serde_json::from_str(&read(truth)?)?;
    let report = evaluate_files(&ranked, &gt.root_cause_sensors, at_k, at_p);
    let json = serde_json::to_string_pretty(&report)?;
    write(&cfg.output_dir.join("metrics.json"), &json)?;
    println!("{json}");
    Ok(())
}

pub fn evaluate_files(
    ranked: &[RankedSensor],
    roots: &[String],
    at_k: Option<usize>,
    at_p: Option<usize>,
) -> MetricReport {
    let names: Vec<&str> = ranked.iter().map(|r| r.sensor.as_str()).collect();
    let truth: HashSet<&str> = roots.iter().map(String::as_str).collect();
    let m = truth.len();
    eval::evaluate(
        &names,
        &truth,
        at_k.unwrap_or(eval::default_k(m)),
        at_p.unwrap_or(eval::default_p(m)),
    )
}
