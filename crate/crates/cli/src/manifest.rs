use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use dart_core::LossBreakdown;
use serde::Serialize;

/// Record of one successful invocation, written next to its primary output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<String>,
    pub final_loss: Option<LossBreakdown>,
    pub version: String,
}

pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut name = primary.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

pub(crate) fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn new(command: Vec<String>, seed: u64, started: DateTime<Utc>) -> Self {
        Self {
            command,
            config: serde_json::Value::Null,
            seed,
            started_at: timestamp(started),
            finished_at: String::new(),
            outputs: Vec::new(),
            final_loss: None,
            version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
        }
    }

    /// Stamps the finish time and writes `<primary>.manifest.json`.
    pub fn finish(mut self, primary: &Path) -> dart_core::Result<PathBuf> {
        self.finished_at = timestamp(Utc::now());
        let path = manifest_path(primary);
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }
}
