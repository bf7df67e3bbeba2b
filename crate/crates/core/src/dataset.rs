//! Ingestion, standardization and windowing of multi-run sensor data.
//!
//! Input is long-format CSV with header `run,timestamp,<sensor_1>,...,<sensor_N>`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::linalg::{Matrix, Vector};
use crate::{Error, Result};

/// Stddev floor for constant channels.
pub const STDDEV_FLOOR: f64 = 1e-8;

/// R aligned runs, each an N×T matrix (rows are sensors).
#[derive(Debug, Clone, PartialEq)]
pub struct RunDataset {
    pub runs: Vec<Matrix>,
    pub sensor_names: Vec<String>,
    pub run_ids: Vec<String>,
}

impl RunDataset {
    pub fn new(runs: Vec<Matrix>, sensor_names: Vec<String>, run_ids: Vec<String>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::EmptyInput);
        }
        if runs.len() != run_ids.len() {
            return Err(Error::Dimension(format!(
                "{} runs but {} run ids",
                runs.len(),
                run_ids.len()
            )));
        }
        let (n, t) = runs[0].shape();
        if n != sensor_names.len() {
            return Err(Error::Dimension(format!(
                "{} sensor rows but {} sensor names",
                n,
                sensor_names.len()
            )));
        }
        for (run, id) in runs.iter().zip(&run_ids) {
            if run.nrows() != n {
                return Err(Error::Dimension(format!("run `{id}` has {} sensors", run.nrows())));
            }
            if run.ncols() != t {
                return Err(Error::Alignment {
                    run: id.clone(),
                    expected: t,
                    found: run.ncols(),
                });
            }
            if run.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    row: 0,
                    column: id.clone(),
                    message: "non-finite value".into(),
                });
            }
        }
        Ok(Self {
            runs,
            sensor_names,
            run_ids,
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.sensor_names.len()
    }

    pub fn n_timestamps(&self) -> usize {
        self.runs[0].ncols()
    }

    pub fn n_runs(&self) -> usize {
        self.runs.len()
    }

    /// Dataset restricted to the given run indices, in that order.
    pub fn select(&self, indices: &[usize]) -> RunDataset {
        RunDataset {
            runs: indices.iter().map(|&i| self.runs[i].clone()).collect(),
            sensor_names: self.sensor_names.clone(),
            run_ids: indices.iter().map(|&i| self.run_ids[i].clone()).collect(),
        }
    }

    /// Writes long-format CSV. Timestamps are written 1-based.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["run".to_string(), "timestamp".to_string()];
        header.extend(self.sensor_names.iter().cloned());
        w.write_record(&header)?;
        for (run, id) in self.runs.iter().zip(&self.run_ids) {
            for t in 0..run.ncols() {
                let mut rec = vec![id.clone(), (t + 1).to_string()];
                rec.extend(run.column(t).iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Column names of the long-format input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsvSchema {
    pub run_column: String,
    pub timestamp_column: String,
    /// Sensor columns to keep; `None` takes every other column in header order.
    pub sensors: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            run_column: "run".into(),
            timestamp_column: "timestamp".into(),
            sensors: None,
        }
    }
}

fn csv_files(source: &Path) -> Result<Vec<PathBuf>> {
    let meta = fs::metadata(source).map_err(|e| Error::io(source, e))?;
    if meta.is_file() {
        return Ok(vec![source.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(source)
        .map_err(|e| Error::io(source, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

fn run_order(ids: &mut [String]) {
    if ids.iter().all(|id| id.parse::<i64>().is_ok()) {
        ids.sort_by_key(|id| id.parse::<i64>().unwrap());
    } else {
        ids.sort();
    }
}

/// Loads a CSV file, or every `*.csv` in a directory, into a [`RunDataset`]
/// ordered by run identifier (numerically when all identifiers are integers).
pub fn load_runs(source: &Path, schema: &CsvSchema) -> Result<RunDataset> {
    let mut sensor_names: Option<Vec<String>> = None;
    let mut rows: HashMap<String, BTreeMap<i64, Vec<f64>>> = HashMap::new();
    let mut row_no = 0usize;

    for file in csv_files(source)? {
        let mut rdr = csv::Reader::from_path(&file)?;
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let run_col = find(&schema.run_column)?;
        let ts_col = find(&schema.timestamp_column)?;
        let names: Vec<String> = match &schema.sensors {
            Some(s) => s.clone(),
            None => header
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != run_col && *i != ts_col)
                .map(|(_, h)| h.clone())
                .collect(),
        };
        let cols = names.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
        match &sensor_names {
            None => sensor_names = Some(names.clone()),
            Some(prev) if *prev != names => {
                return Err(Error::Dimension(format!(
                    "{} has a different sensor set",
                    file.display()
                )))
            }
            Some(_) => {}
        }

        for rec in rdr.records() {
            let rec = rec?;
            row_no += 1;
            let run = rec.get(run_col).unwrap_or("").trim().to_string();
            let ts_raw = rec.get(ts_col).unwrap_or("").trim();
            let ts: i64 = ts_raw.parse().map_err(|_| Error::Parse {
                row: row_no,
                column: schema.timestamp_column.clone(),
                message: format!("`{ts_raw}` is not an integer timestamp"),
            })?;
            let mut values = Vec::with_capacity(cols.len());
            for (&c, name) in cols.iter().zip(&names) {
                let raw = rec.get(c).unwrap_or("").trim();
                let v: f64 = raw.parse().map_err(|_| Error::Parse {
                    row: row_no,
                    column: name.clone(),
                    message: format!("`{raw}` is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row: row_no,
                        column: name.clone(),
                        message: format!("`{raw}` is not finite"),
                    });
                }
                values.push(v);
            }
            if rows.entry(run.clone()).or_default().insert(ts, values).is_some() {
                return Err(Error::DuplicateRow { run, timestamp: ts });
            }
        }
    }

    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sensor_names = sensor_names.unwrap_or_default();
    let mut run_ids: Vec<String> = rows.keys().cloned().collect();
    run_order(&mut run_ids);

    let expected = rows[&run_ids[0]].len();
    let mut runs = Vec::with_capacity(run_ids.len());
    for id in &run_ids {
        let series = &rows[id];
        if series.len() != expected {
            return Err(Error::Alignment {
                run: id.clone(),
                expected,
                found: series.len(),
            });
        }
        let mut m = Matrix::zeros(sensor_names.len(), expected);
        for (t, values) in series.values().enumerate() {
            for (n, v) in values.iter().enumerate() {
                m[(n, t)] = *v;
            }
        }
        runs.push(m);
    }
    RunDataset::new(runs, sensor_names, run_ids)
}

/// Per-sensor z-score parameters pooled over all training runs and timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationStats {
    pub sensor_names: Vec<String>,
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SensorStats {
    mean: f64,
    stddev: f64,
}

impl StandardizationStats {
    pub fn identity(sensor_names: &[String]) -> Self {
        Self {
            sensor_names: sensor_names.to_vec(),
            mean: vec![0.0; sensor_names.len()],
            stddev: vec![1.0; sensor_names.len()],
        }
    }

    pub fn from_data(data: &RunDataset) -> Self {
        let n = data.n_sensors();
        let count = (data.n_runs() * data.n_timestamps()) as f64;
        let mut mean = vec![0.0; n];
        for run in &data.runs {
            for (s, m) in mean.iter_mut().enumerate() {
                *m += run.row(s).sum();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; n];
        for run in &data.runs {
            for (s, v) in var.iter_mut().enumerate() {
                *v += run.row(s).iter().map(|x| (x - mean[s]).powi(2)).sum::<f64>();
            }
        }
        let stddev = var
            .iter()
            .map(|v| (v / count).sqrt().max(STDDEV_FLOOR))
            .collect();
        Self {
            sensor_names: data.sensor_names.clone(),
            mean,
            stddev,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let map: BTreeMap<&str, SensorStats> = self
            .sensor_names
            .iter()
            .zip(self.mean.iter().zip(&self.stddev))
            .map(|(name, (&mean, &stddev))| (name.as_str(), SensorStats { mean, stddev }))
            .collect();
        Ok(serde_json::to_string_pretty(&map)?)
    }

    /// Parses the JSON object and orders the entries by `sensor_names`.
    pub fn from_json(json: &str, sensor_names: &[String]) -> Result<Self> {
        let map: BTreeMap<String, SensorStats> = serde_json::from_str(json)?;
        let mut mean = Vec::with_capacity(sensor_names.len());
        let mut stddev = Vec::with_capacity(sensor_names.len());
        for name in sensor_names {
            let s = map.get(name).ok_or_else(|| Error::MissingColumn(name.clone()))?;
            mean.push(s.mean);
            stddev.push(s.stddev.max(STDDEV_FLOOR));
        }
        Ok(Self {
            sensor_names: sensor_names.to_vec(),
            mean,
            stddev,
        })
    }
}

/// Z-scores every sensor. Without `stats` the statistics are computed from
/// `data` (pooled over runs); with `stats` they are applied unchanged.
pub fn standardize(
    data: &RunDataset,
    stats: Option<&StandardizationStats>,
) -> Result<(RunDataset, StandardizationStats)> {
    let stats = match stats {
        Some(s) => {
            if s.mean.len() != data.n_sensors() {
                return Err(Error::Dimension(format!(
                    "stats cover {} sensors, data has {}",
                    s.mean.len(),
                    data.n_sensors()
                )));
            }
            s.clone()
        }
        None => StandardizationStats::from_data(data),
    };
    let runs = data
        .runs
        .iter()
        .map(|run| {
            let mut out = run.clone();
            for s in 0..out.nrows() {
                let (m, sd) = (stats.mean[s], stats.stddev[s]);
                out.row_mut(s).apply(|x| *x = (*x - m) / sd);
            }
            out
        })
        .collect();
    Ok((
        RunDataset {
            runs,
            sensor_names: data.sensor_names.clone(),
            run_ids: data.run_ids.clone(),
        },
        stats,
    ))
}

/// One stacked subsequence: `t_w` blocks of N values, oldest timestamp first.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedWindow {
    pub values: Vector,
    /// End timestamp, 1-based.
    pub t: usize,
    /// Run index within the dataset the window was cut from.
    pub r: usize,
}

/// Stacks a single N×T run into its `T − t_w + 1` windows.
pub fn stack_run(run: &Matrix, r: usize, t_w: usize) -> Result<Vec<StackedWindow>> {
    let (n, len) = run.shape();
    if t_w == 0 || t_w > len {
        return Err(Error::WindowSize { t_w, len });
    }
    Ok((t_w..=len)
        .map(|t| {
            let start = t - t_w;
            let mut values = Vector::zeros(n * t_w);
            for j in 0..t_w {
                values.rows_mut(j * n, n).copy_from(&run.column(start + j));
            }
            StackedWindow { values, t, r }
        })
        .collect())
}

/// All windows of all runs, run-major then by end timestamp.
pub fn stack_windows(data: &RunDataset, t_w: usize) -> Result<Vec<StackedWindow>> {
    let mut out = Vec::new();
    for (r, run) in data.runs.iter().enumerate() {
        out.extend(stack_run(run, r, t_w)?);
    }
    Ok(out)
}

/// Rebuilds an N×T run from its ordered windows.
pub fn unstack_run(windows: &[StackedWindow], n: usize, t_w: usize) -> Matrix {
    let len = windows.len() + t_w - 1;
    let mut out = Matrix::zeros(n, len);
    for w in windows {
        let start = w.t - t_w;
        for j in 0..t_w {
            out.column_mut(start + j).copy_from(&w.values.rows(j * n, n));
        }
    }
    out
}
