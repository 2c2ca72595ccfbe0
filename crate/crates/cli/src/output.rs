//! Output directory, CSV files and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub timestamp: u64,
    pub config_hash: String,
    pub threads: usize,
    pub config: RunConfig,
    pub outputs: Vec<OutputFile>,
    pub notes: Vec<String>,
    pub summary: serde_json::Value,
}

/// Collects artifacts of one run and writes the manifest last.
pub struct Run {
    dir: PathBuf,
    manifest: Manifest,
}

fn sha_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Run {
    pub fn new(dir: &Path, command: &str, config: &RunConfig) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                tool: "openrabi".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                timestamp,
                config_hash: config.hash(),
                threads: rayon::current_num_threads(),
                config: config.clone(),
                outputs: Vec::new(),
                notes: Vec::new(),
                summary: serde_json::Value::Null,
            },
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.manifest.notes.push(text.into());
    }

    pub fn summary(&self) -> &serde_json::Value {
        &self.manifest.summary
    }

    pub fn set_summary(&mut self, v: serde_json::Value) {
        self.manifest.summary = v;
    }

    fn record(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.outputs.push(OutputFile {
            file: name.into(),
            sha256: sha_hex(bytes),
        });
        Ok(())
    }

    /// CSV whose first line is a `#` comment carrying the config hash.
    pub fn csv<R: AsRef<[String]>>(&mut self, name: &str, header: &[&str], rows: &[R]) -> Result<()> {
        let mut buf = format!("# openrabi {} config {}\n", self.manifest.version, self.manifest.config_hash).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header)?;
            for r in rows {
                w.write_record(r.as_ref())?;
            }
            w.flush()?;
        }
        self.record(name, &buf)
    }

    pub fn svg(&mut self, name: &str, body: &str) -> Result<()> {
        let tagged = body.replacen(
            "<svg ",
            &format!("<!-- openrabi {} config {} -->\n<svg ", self.manifest.version, self.manifest.config_hash),
            1,
        );
        self.record(name, tagged.as_bytes())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut v = serde_json::to_value(value)?;
        if let serde_json::Value::Object(m) = &mut v {
            m.insert("config_hash".into(), self.manifest.config_hash.clone().into());
        }
        let text = serde_json::to_string_pretty(&v)?;
        self.record(name, text.as_bytes())
    }

    pub fn raw(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        self.record(name, bytes)
    }

    pub fn finish(self) -> Result<Manifest> {
        let path = self.dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&self.manifest)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(self.manifest)
    }
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Read a CSV written by [`Run::csv`] into header and string rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}
