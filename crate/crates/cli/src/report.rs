use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// What a command read, wrote and measured.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub inputs: BTreeMap<String, usize>,
    pub outputs: BTreeMap<String, usize>,
    pub metrics: BTreeMap<String, f64>,
    pub emitted: Vec<PathBuf>,
}

impl Outcome {
    pub fn input(&mut self, key: &str, n: usize) -> &mut Self {
        self.inputs.insert(key.to_string(), n);
        self
    }

    pub fn output(&mut self, key: &str, n: usize) -> &mut Self {
        self.outputs.insert(key.to_string(), n);
        self
    }

    pub fn metric(&mut self, key: &str, v: f64) -> &mut Self {
        self.metrics.insert(key.to_string(), v);
        self
    }

    pub fn emit(&mut self, path: &Path) -> &mut Self {
        self.emitted.push(path.to_path_buf());
        self
    }
}

/// One per run, success or failure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandReport {
    pub command: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub seed: u64,
    pub config_hash: String,
    pub wall_time_secs: f64,
    #[serde(flatten)]
    pub outcome: Outcome,
}

impl CommandReport {
    pub fn file_name(command: &str) -> String {
        format!("{command}.report.json")
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(Self::file_name(&self.command));
        let mut json = serde_json::to_string_pretty(self).expect("report serializes");
        json.push('\n');
        fs::write(&path, json).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let status = if self.ok { "ok" } else { "FAILED" };
        let _ = writeln!(s, "{} {status} in {:.2}s (config {})", self.command, self.wall_time_secs, self.config_hash.get(..12).unwrap_or(&self.config_hash));
        if let Some(e) = &self.error {
            let _ = writeln!(s, "  error: {e}");
        }
        for (label, map) in [("in", &self.outcome.inputs), ("out", &self.outcome.outputs)] {
            for (k, v) in map {
                let _ = writeln!(s, "  {label:<4}{k}: {v}");
            }
        }
        for (k, v) in &self.outcome.metrics {
            let _ = writeln!(s, "  {k}: {v:.4}");
        }
        for p in &self.outcome.emitted {
            let _ = writeln!(s, "  wrote {}", p.display());
        }
        s
    }
}
