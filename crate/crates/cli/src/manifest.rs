use std::path::{Path, PathBuf};

use pnlrank::sim::CellSummary;
use serde::Serialize;
use serde_json::Value;
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

use crate::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct CellStatus {
    pub method: String,
    pub n: usize,
    pub count: usize,
    pub failures: usize,
    pub flagged: bool,
}

impl From<&CellSummary> for CellStatus {
    fn from(c: &CellSummary) -> Self {
        Self {
            method: c.method.to_string(),
            n: c.n,
            count: c.count,
            failures: c.failures,
            flagged: c.flagged,
        }
    }
}

/// Provenance record written next to every run's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub cli_version: &'static str,
    pub library_version: &'static str,
    pub command: String,
    pub command_line: Vec<String>,
    pub config: Value,
    pub seed: Option<u64>,
    pub threads: usize,
    pub started: String,
    pub finished: String,
    pub status: &'static str,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub artifacts: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub cells: Vec<CellStatus>,
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
}

pub fn now() -> String {
    OffsetDateTime::now_utc().format(&Rfc3339).unwrap_or_default()
}

impl RunManifest {
    pub fn new(command: &str, threads: usize) -> Self {
        Self {
            tool: "pnlrank",
            cli_version: env!("CARGO_PKG_VERSION"),
            library_version: pnlrank::VERSION,
            command: command.to_string(),
            command_line: std::env::args().collect(),
            config: Value::Null,
            seed: None,
            threads,
            started: now(),
            finished: String::new(),
            status: "running",
            exit_code: 0,
            message: None,
            artifacts: Vec::new(),
            cells: Vec::new(),
            out_dir: None,
        }
    }

    pub fn set_config(&mut self, cfg: &impl Serialize) {
        self.config = serde_json::to_value(cfg).unwrap_or(Value::Null);
    }

    /// Creates the output directory and remembers it for the manifest.
    pub fn use_dir(&mut self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        self.out_dir = Some(dir.to_path_buf());
        Ok(())
    }

    /// Writes `contents` as `name` in the output directory and lists it.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let dir = self.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        self.artifacts.push(name.to_string());
        Ok(path)
    }

    pub fn finish(&mut self, outcome: &Result<(), CliError>) {
        self.finished = now();
        match outcome {
            Ok(()) => {
                self.status = "ok";
                self.exit_code = 0;
            }
            Err(e) => {
                self.status = e.status();
                self.exit_code = e.exit_code();
                self.message = Some(e.to_string());
            }
        }
    }

    /// Best effort: the manifest is written even when the run failed.
    pub fn save(&self) -> std::io::Result<()> {
        let dir = self.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir)?;
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(dir.join(MANIFEST_NAME), text + "\n")
    }
}
