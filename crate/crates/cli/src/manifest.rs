use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use chrono::{DateTime, SecondsFormat};
use serde::Serialize;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn now_rfc3339() -> String {
    let d = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap_or_default();
    DateTime::from_timestamp(d.as_secs() as i64, d.subsec_nanos())
        .map(|t| t.to_rfc3339_opts(SecondsFormat::Millis, true))
        .unwrap_or_default()
}

/// Provenance record written beside every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    /// Fully resolved configuration, defaults included.
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config: impl Serialize) -> Self {
        RunManifest {
            tool: "eif".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            inputs: vec![],
            outputs: vec![],
            started_at: now_rfc3339(),
            finished_at: String::new(),
        }
    }

    pub fn input(mut self, p: impl AsRef<Path>) -> Self {
        self.inputs.push(p.as_ref().display().to_string());
        self
    }

    pub fn write(mut self, dir: &Path, outputs: &[&str]) -> eiformer::Result<()> {
        self.outputs = outputs
            .iter()
            .map(|o| dir.join(o).display().to_string())
            .collect();
        self.finished_at = now_rfc3339();
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&self)? + "\n",
        )?;
        Ok(())
    }
}
