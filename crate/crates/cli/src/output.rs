//! CSV tables and JSON summaries. Every CSV starts with one `#` line carrying
//! the schema version, command, config hash and seed, then the column names.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::SCHEMA_VERSION;
use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub schema_version: u32,
    pub command: String,
    pub mode: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Meta {
    fn comment(&self) -> String {
        format!(
            "# weyl-ring schema_version={} command={} mode={} config_sha256={} seed={}\n",
            self.schema_version, self.command, self.mode, self.config_sha256, self.seed
        )
    }
}

pub fn meta(command: &str, mode: &str, hash: &str, seed: u64) -> Meta {
    Meta {
        schema_version: SCHEMA_VERSION,
        command: command.to_string(),
        mode: mode.to_string(),
        config_sha256: hash.to_string(),
        seed,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    F(f64),
    I(i64),
    S(String),
    /// Empty cell.
    Missing,
}

impl Field {
    fn render(&self) -> String {
        match self {
            Field::F(v) if v.is_finite() => format!("{v:.16e}"),
            Field::F(_) | Field::Missing => String::new(),
            Field::I(v) => v.to_string(),
            Field::S(s) => s.clone(),
        }
    }
}

impl From<f64> for Field {
    fn from(v: f64) -> Self {
        Field::F(v)
    }
}

impl From<usize> for Field {
    fn from(v: usize) -> Self {
        Field::I(v as i64)
    }
}

impl From<Option<f64>> for Field {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Field::Missing, Field::F)
    }
}

impl From<Option<String>> for Field {
    fn from(v: Option<String>) -> Self {
        v.map_or(Field::Missing, Field::S)
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Field>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Table {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Field>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn to_csv(&self, meta: &Meta) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r.iter().map(Field::render)).expect("in-memory write");
        }
        let body = String::from_utf8(w.into_inner().expect("flush")).expect("utf-8");
        meta.comment() + &body
    }
}

pub struct OutDir(PathBuf);

impl OutDir {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(path).map_err(|e| CliError::io(path, e))?;
        Ok(OutDir(path.to_path_buf()))
    }

    pub fn write_csv(&self, name: &str, meta: &Meta, table: &Table) -> Result<PathBuf, CliError> {
        self.write(name, table.to_csv(meta).as_bytes())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, meta: &Meta, results: &T) -> Result<PathBuf, CliError> {
        #[derive(Serialize)]
        struct Doc<'a, T> {
            #[serde(flatten)]
            meta: &'a Meta,
            results: &'a T,
        }
        let mut text = serde_json::to_string_pretty(&Doc { meta, results }).expect("summary serializes");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.0.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
