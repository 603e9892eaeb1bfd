//! Output directory layout: JSON documents, CSV series and binary particle snapshots.

use crate::error::{HarnessError, Result};
use serde::Serialize;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use vortexlab_core::ParticleField;

/// Magic bytes opening every snapshot file.
pub const SNAPSHOT_MAGIC: &[u8; 8] = b"VXLSNAP1";

#[derive(Clone, Debug)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| HarnessError::io(root, e))?;
        Ok(OutputDir { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn subdir(&self, name: &str) -> Result<OutputDir> {
        OutputDir::create(&self.root.join(name))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable output");
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| HarnessError::io(path, e))
    }
}

/// CSV table with a fixed header; numbers use the shortest round-trip representation.
#[derive(Clone, Debug)]
pub struct CsvTable {
    text: String,
    columns: usize,
}

impl CsvTable {
    pub fn new(header: &[String]) -> Self {
        CsvTable { text: header.join(",") + "\n", columns: header.len() }
    }

    /// Appends a row; `None` cells are left empty.
    pub fn push(&mut self, row: &[Option<f64>]) {
        assert_eq!(row.len(), self.columns, "row width differs from header");
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                self.text.push(',');
            }
            if let Some(v) = v {
                write!(self.text, "{v}").unwrap();
            }
        }
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

/// Little-endian snapshot: magic, `u64 N`, `u64 n_patches`, `f64 t`, `f64 δ`, then `N` records
/// of four `f64` values `[x, y, Γ, label]`.
pub fn encode_snapshot(field: &ParticleField, t: f64) -> Vec<u8> {
    let mut out = Vec::with_capacity(40 + 32 * field.len());
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.write_all(&(field.len() as u64).to_le_bytes()).unwrap();
    out.write_all(&(field.n_labels() as u64).to_le_bytes()).unwrap();
    out.write_all(&t.to_le_bytes()).unwrap();
    out.write_all(&field.blob_radius.to_le_bytes()).unwrap();
    for p in 0..field.len() {
        for v in [field.positions[p].x, field.positions[p].y, field.circulations[p], field.labels[p] as f64] {
            out.write_all(&v.to_le_bytes()).unwrap();
        }
    }
    out
}
