//! Reproducibility record written next to every primary output as
//! `<output>.run.toml`: resolved parameters, seed, thread count, file format
//! versions and the SHA-256 of each output file.

use std::path::{Path, PathBuf};

use psfsim::dataset::DATASET_FORMAT_VERSION;
use psfsim::fsutil::{sha256_hex, with_suffix, write_atomic_group, FileGroup};
use psfsim::regressor::MODEL_FORMAT_VERSION;
use serde::Serialize;
use toml::{Table, Value};

use crate::Context;

pub fn record_path(primary: &Path) -> PathBuf {
    with_suffix(primary, "run.toml")
}

pub struct Record {
    table: Table,
    results: Table,
}

impl Record {
    pub fn new(ctx: &Context, command: &str) -> Self {
        let mut table = Table::new();
        table.insert("tool".into(), "psfsim".into());
        table.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        table.insert("command".into(), command.into());
        table.insert("seed".into(), Value::Integer(ctx.seed as i64));
        table.insert("threads".into(), Value::Integer(ctx.threads as i64));
        let mut formats = Table::new();
        formats.insert("dataset".into(), Value::Integer(DATASET_FORMAT_VERSION.into()));
        formats.insert("model".into(), Value::Integer(MODEL_FORMAT_VERSION.into()));
        table.insert("formats".into(), Value::Table(formats));
        Self {
            table,
            results: Table::new(),
        }
    }

    /// Adds a table of resolved parameters under `name`.
    pub fn params(&mut self, name: &str, params: &impl Serialize) -> anyhow::Result<()> {
        self.table.insert(name.into(), Value::try_from(params)?);
        Ok(())
    }

    pub fn result(&mut self, key: &str, value: impl Into<Value>) {
        self.results.insert(key.into(), value.into());
    }

    /// Writes the outputs and the record as one atomic group.
    pub fn write(mut self, primary: &Path, mut files: FileGroup) -> anyhow::Result<()> {
        let mut outputs = Table::new();
        for (path, bytes) in &files {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            outputs.insert(name, sha256_hex(bytes).into());
        }
        self.table.insert("results".into(), Value::Table(self.results));
        self.table.insert("outputs".into(), Value::Table(outputs));
        let text = toml::to_string(&self.table)?;
        files.push((record_path(primary), text.into_bytes()));
        write_atomic_group(&files)?;
        Ok(())
    }
}
