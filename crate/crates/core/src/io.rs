//! CSV and JSON persistence, checksums and run manifests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};

/// Lossless decimal form of an `f64` (17 significant digits).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Renders a header and rows of numbers as CSV text.
pub fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        for (i, x) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{x:.16e}");
        }
        out.push('\n');
    }
    out
}

/// Parses CSV text written by [`csv_text`] back into numbers.
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Io("empty csv".into()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .map(|l| {
            l.split(',')
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|e| Error::Io(format!("bad number `{c}`: {e}")))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Writes files into one output directory and keeps their checksums.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<OutputRecord>,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::Io(format!("{}: {e}", root.display())))?;
        Ok(OutputDir {
            root,
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(name);
        fs::write(&path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        self.written.retain(|r| r.file != name);
        self.written.push(OutputRecord {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }

    pub fn write_csv(
        &mut self,
        name: &str,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<f64>>,
    ) -> Result<()> {
        self.write(name, csv_text(header, rows).as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn outputs(&self) -> &[OutputRecord] {
        &self.written
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathSeed {
    pub path: usize,
    pub seed: u64,
    pub stream_id: u64,
}

/// Everything needed to reproduce and audit a run. Not itself checksummed.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub seeds: Vec<PathSeed>,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<OutputRecord>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        let path = dir.join("manifest.json");
        fs::write(&path, text + "\n").map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}

/// Machine-readable failure description written as `error.json`.
#[derive(Clone, Debug, Serialize)]
pub struct ErrorReport {
    pub kind: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
    pub exit_code: i32,
}

/// Exit status for a failed run: 2 config, 3 blow-up, 1 anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => 2,
        Error::BlowUp { .. } => 3,
        _ => 1,
    }
}

/// Exit status when every computation succeeded but an invariant check failed.
pub const EXIT_INVARIANT_FAILURE: i32 = 4;

impl ErrorReport {
    pub fn from_error(e: &Error) -> Self {
        let (key, step, time) = match e {
            Error::Config { key, .. } => (Some(key.clone()), None, None),
            Error::BlowUp { step, time } => (None, Some(*step), Some(*time)),
            _ => (None, None, None),
        };
        ErrorReport {
            kind: e.kind().to_string(),
            message: e.to_string(),
            key,
            step,
            time,
            exit_code: exit_code(e),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(dir.join("error.json"), text + "\n")?;
        Ok(())
    }
}
