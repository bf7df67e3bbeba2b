//! JSON run configuration with dotted-path `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::CsvSchema;
use crate::profile::ThresholdConfig;
use crate::rca::RcaParams;
use crate::seed;
use crate::sweep::SweepConfig;
use crate::synth::SynthConfig;
use crate::ticc::TiccGtcParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// CSV file or directory of CSV files.
    pub input: Option<PathBuf>,
    pub schema: CsvSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub ticc: TiccGtcParams,
    pub rca: RcaParams,
    pub threshold: ThresholdConfig,
    pub sweep: SweepConfig,
    pub output_dir: PathBuf,
    /// Root of every random stream; stage seeds are derived from it.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            ticc: TiccGtcParams::default(),
            rca: RcaParams::default(),
            threshold: ThresholdConfig::default(),
            sweep: SweepConfig::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

fn prefixed(section: &str, e: Error) -> Error {
    match e {
        Error::Config { field, message } => Error::Config {
            field: format!("{section}.{field}"),
            message,
        },
        other => other,
    }
}

impl PipelineConfig {
    /// Reads an optional JSON file, applies overrides, and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::config("config", format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg = Self::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        serde_json::from_value(value).map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.starts_with("unknown field"))
                .unwrap_or("config")
                .to_string();
            Error::config(field, msg)
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate().map_err(|e| prefixed("synth", e))?;
        self.ticc.validate().map_err(|e| prefixed("ticc", e))?;
        self.rca.validate().map_err(|e| prefixed("rca", e))?;
        self.sweep.validate()?;
        let t = &self.threshold;
        if !(t.absolute_floor >= 0.0 && t.mad_multiplier >= 0.0) {
            return Err(Error::config("threshold", "floor and multiplier must be non-negative"));
        }
        Ok(())
    }

    /// Synthetic config with its seed derived from the root seed.
    pub fn synth_resolved(&self) -> SynthConfig {
        SynthConfig {
            seed: seed::sub_seed(self.seed, "synth"),
            ..self.synth.clone()
        }
    }

    /// Clustering parameters with their seed derived from the root seed.
    pub fn ticc_resolved(&self) -> TiccGtcParams {
        TiccGtcParams {
            seed: seed::sub_seed(self.seed, "ticc"),
            ..self.ticc.clone()
        }
    }
}

/// Applies `a.b.c=value`; the value is parsed as JSON, falling back to a string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
    let path = path.trim();
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(Error::config(assignment, "empty key in override"));
    }
    let parsed = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        if !cur.is_object() {
            if cur.is_null() {
                *cur = Value::Object(Default::default());
            } else {
                return Err(Error::config(path, format!("`{}` is not an object", keys[..i].join("."))));
            }
        }
        let map = cur.as_object_mut().unwrap();
        if i + 1 == keys.len() {
            map.insert(key.to_string(), parsed);
            return Ok(());
        }
        cur = map.entry(key.to_string()).or_insert(Value::Null);
    }
    unreachable!()
}
