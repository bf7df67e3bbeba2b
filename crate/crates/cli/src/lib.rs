//! `causalrank` command line: synthetic data, profile fitting, run monitoring,
//! root-cause ranking, experiment sweeps and ranking evaluation.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use causalrank::config::PipelineConfig;
use causalrank::Error;

pub mod commands;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Options shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set ticc.lambda=5`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Root seed (overrides `seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of states (overrides `ticc.k`).
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Window length (overrides `ticc.t_w`).
    #[arg(long = "t-w", global = true)]
    pub t_w: Option<usize>,
}

impl Common {
    pub fn load(&self) -> causalrank::Result<PipelineConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(out) = &self.out {
            overrides.push(format!("output_dir={}", serde_json::to_string(out).unwrap()));
        }
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(k) = self.k {
            overrides.push(format!("ticc.k={k}"));
        }
        if let Some(t) = self.t_w {
            overrides.push(format!("ticc.t_w={t}"));
        }
        PipelineConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic runs with planted profiles and root causes.
    Synth,
    /// Fit a profile on a window of runs.
    Fit {
        /// Input CSV file or directory (overrides `data.input`).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Comma-separated run ids; defaults to the first r_w runs.
        #[arg(long, value_delimiter = ',')]
        runs: Vec<String>,
    },
    /// Replay runs in order, print one verdict per compared run, and rank
    /// anomalous runs.
    Monitor {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Do not rank runs judged anomalous.
        #[arg(long)]
        no_rank: bool,
    },
    /// Rank the sensors of one run against the profile of the runs before it.
    Rank {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Run id of the anomalous run.
        #[arg(long)]
        run: String,
    },
    /// Run a synthetic experiment sweep.
    Sweep,
    /// Score a ranking file against a ground-truth file.
    Eval {
        #[arg(long)]
        ranking: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Cut-off for precision and recall (default 2·m).
        #[arg(long = "at-k")]
        at_k: Option<usize>,
        /// Cut-off for nDCG (default max(1, m−1)).
        #[arg(long = "at-p")]
        at_p: Option<usize>,
    },
}

#[derive(Debug, Parser)]
#[command(name = "causalrank", version, about = "State-aware causal anomaly ranking")]
struct Root {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let root = match Root::try_parse_from(args) {
        Ok(r) => r,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = root
        .common
        .load()
        .and_then(|cfg| commands::dispatch(&root.command, &cfg));
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
