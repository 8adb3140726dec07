//! Run records and output files. Every file written here starts with the
//! config hash, the tool version and the effective configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::Error;

use super::config::{hex, ExperimentConfig};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Git-style content hash: SHA-256 over `"blob <len>\0"` followed by the bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(content_hash(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub tool_version: String,
    pub command: String,
    pub config_hash: String,
    pub checkpoint_hash: Option<String>,
    pub seed: u64,
    pub wall_time_s: f64,
    pub config: BTreeMap<String, String>,
    pub results: serde_json::Value,
}

/// Writes into one output directory, stamping each file.
pub struct OutputDir {
    dir: PathBuf,
    config_hash: String,
    config_text: String,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(config: &ExperimentConfig) -> Result<Self> {
        let dir = config.out_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir, config_hash: config.hash(), config_text: config.to_text(), written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn comment_header(&self) -> String {
        let mut s = format!("# config_hash={}\n# tool_version={TOOL_VERSION}\n", self.config_hash);
        for line in self.config_text.lines() {
            let _ = writeln!(s, "# {line}");
        }
        s
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// Mark a file written by another routine (a checkpoint) as output.
    pub fn note(&mut self, path: PathBuf) {
        self.written.push(path);
    }

    pub fn write_csv(&mut self, name: &str, table: &Table) -> Result<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&table.columns)?;
        for row in &table.rows {
            w.write_record(row)?;
        }
        let body = w.into_inner().map_err(|e| Error::format(self.path(name), e.to_string()))?;
        let mut bytes = self.comment_header().into_bytes();
        bytes.extend_from_slice(&body);
        self.write_bytes(name, &bytes)
    }

    pub fn write_text(&mut self, name: &str, table: &Table) -> Result<PathBuf> {
        let text = format!("{}{}", self.comment_header(), table.render());
        self.write_bytes(name, text.as_bytes())
    }

    /// CSV and aligned text side by side: `<stem>.csv` and `<stem>.txt`.
    pub fn write_table(&mut self, stem: &str, table: &Table) -> Result<()> {
        self.write_csv(&format!("{stem}.csv"), table)?;
        self.write_text(&format!("{stem}.txt"), table)?;
        Ok(())
    }

    pub fn write_json<S: Serialize>(&mut self, name: &str, value: &S) -> Result<PathBuf> {
        #[derive(Serialize)]
        struct Stamped<'a, S> {
            config_hash: &'a str,
            tool_version: &'a str,
            data: &'a S,
        }
        let json = serde_json::to_string_pretty(&Stamped { config_hash: &self.config_hash, tool_version: TOOL_VERSION, data: value })?;
        self.write_bytes(name, format!("{json}\n").as_bytes())
    }

    pub fn write_record(&mut self, record: &RunRecord) -> Result<PathBuf> {
        let json = serde_json::to_string_pretty(record)?;
        self.write_bytes("run.json", format!("{json}\n").as_bytes())
    }
}

/// A small string table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(title: &str, columns: &[&str]) -> Self {
        Self { title: title.to_string(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Left-aligned first column, right-aligned numbers.
    pub fn render(&self) -> String {
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|c| self.rows.iter().map(|r| r[c].len()).chain([self.columns[c].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: &[String]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            format!("{}\n", parts.join("  ").trim_end())
        };
        let mut out = String::new();
        if !self.title.is_empty() {
            out.push_str(&self.title);
            out.push('\n');
        }
        out.push_str(&line(&self.columns));
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        out.push_str(&line(&rule));
        for r in &self.rows {
            out.push_str(&line(r));
        }
        out
    }
}

/// Fixed four-decimal formatting used in every table.
pub fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), fmt4)
}
