use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::CliResult;

/// Provenance record written atomically next to every command's outputs.
/// Re-running the same command with the same seed reproduces the outputs
/// bit-exactly; only `wall_clock_unix` varies between runs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub wall_clock_unix: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_unix: SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default().as_secs_f64(),
        }
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.display().to_string());
        self
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.display().to_string());
        self
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        fpm_core::io::write_json(path, self)?;
        Ok(())
    }
}

/// Run-manifest path for a command writing a single primary output file.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}.run.json"))
}
