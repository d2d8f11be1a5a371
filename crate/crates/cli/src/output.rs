//! CSV formatting and artifact writing.

use std::path::Path;

use serde_json::json;

use crate::{CliError, ExperimentConfig, RunOutcome};

/// Seventeen significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// A CSV table with a fixed header.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Table { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

pub enum Artifact {
    Csv(Table),
    Json(serde_json::Value),
    Text(String),
}

/// Named artifacts plus a summary for the manifest.
pub struct Artifacts {
    pub files: Vec<(String, Artifact)>,
    pub summary: serde_json::Value,
    /// Values derived while resolving the config.
    pub resolved: serde_json::Value,
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<std::path::PathBuf, CliError> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|source| CliError::Io { path: path.clone(), source })?;
    Ok(path)
}

pub fn write_all(cfg: &ExperimentConfig, dir: &Path, artifacts: Artifacts) -> Result<RunOutcome, CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    let mut files = Vec::new();
    for (name, a) in &artifacts.files {
        let bytes = match a {
            Artifact::Csv(t) => t.to_bytes(),
            Artifact::Json(v) => serde_json::to_vec_pretty(v).expect("json values serialize"),
            Artifact::Text(s) => s.clone().into_bytes(),
        };
        files.push(write(dir, name, &bytes)?);
    }
    let manifest = json!({
        "command": cfg.command.name(),
        "timestamp": chrono::Utc::now().to_rfc3339(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "resolved": artifacts.resolved,
        "outputs": artifacts.files.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(),
        "summary": artifacts.summary,
    });
    let bytes = serde_json::to_vec_pretty(&manifest).expect("json values serialize");
    files.push(write(dir, "manifest.json", &bytes)?);
    Ok(RunOutcome { output_dir: dir.to_path_buf(), files, summary: artifacts.summary })
}
