//! CSV and manifest files written into a run directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// Version stamped into the first column of every CSV file.
pub const CSV_SCHEMA: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub command: String,
    pub csv_schema: u32,
    pub config: ExperimentConfig,
    /// Seed of every repeat, in repeat order.
    pub seeds: Vec<u64>,
    /// Files written, relative to the run directory.
    pub artifacts: Vec<String>,
    pub started: String,
    pub finished: String,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

/// Shortest round-trip decimal form, so reruns produce identical bytes.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// `hidden 0` → `hidden_0`.
pub fn column_name(layer: &str) -> String {
    layer.replace(' ', "_")
}

/// Collects rows for one CSV file and writes it in one go.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        let mut header = vec!["schema".to_string()];
        header.extend(columns.into_iter().map(Into::into));
        Self { header, rows: Vec::new() }
    }

    pub fn push(&mut self, values: Vec<String>) {
        debug_assert_eq!(values.len() + 1, self.header.len());
        let mut row = vec![CSV_SCHEMA.to_string()];
        row.extend(values);
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A CSV file read back with its schema checked.
pub struct CsvFile {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvFile {
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.first().map(String::as_str) != Some("schema") {
            bail!("{} has no schema column", path.display());
        }
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.with_context(|| format!("{} row {}", path.display(), i + 1))?;
            let version = &rec[0];
            if version != CSV_SCHEMA.to_string() {
                bail!("{} row {} has schema {version}, expected {CSV_SCHEMA}", path.display(), i + 1);
            }
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).with_context(|| format!("missing column {name:?}"))
    }

    pub fn f64_at(&self, row: usize, col: usize) -> Result<f64> {
        let text = &self.rows[row][col];
        text.parse().with_context(|| format!("row {}: {text:?} is not a number", row + 1))
    }
}

/// Tracks the files a command writes into its run directory.
pub struct RunDir {
    pub root: PathBuf,
    artifacts: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root: root.to_path_buf(), artifacts: Vec::new() })
    }

    pub fn path(&mut self, relative: &str) -> Result<PathBuf> {
        let path = self.root.join(relative);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        self.artifacts.push(relative.to_string());
        Ok(path)
    }

    pub fn table(&mut self, relative: &str, table: &Table) -> Result<()> {
        let path = self.path(relative)?;
        table.write(&path)
    }

    pub fn json<T: Serialize>(&mut self, relative: &str, value: &T) -> Result<()> {
        let path = self.path(relative)?;
        let text = serde_json::to_string(value)?;
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn finish(self, command: &str, config: &ExperimentConfig, seeds: Vec<u64>, started: String) -> Result<PathBuf> {
        let manifest = RunManifest {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            csv_schema: CSV_SCHEMA,
            config: config.clone(),
            seeds,
            artifacts: self.artifacts,
            started,
            finished: now(),
        };
        let path = self.root.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(self.root)
    }
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
