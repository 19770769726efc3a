//! Field snapshots on disk: raw little-endian `f64` values in row-major order
//! plus a TOML sidecar with the grid geometry and time stamp.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

/// Sidecar record of a snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotMeta {
    pub dim: usize,
    pub cells: Vec<usize>,
    pub spacing: Vec<f64>,
    pub origin: Vec<f64>,
    pub time: f64,
    pub run_id: String,
    pub step: usize,
    /// Length of the step that produced this state (0 for initial data).
    #[serde(default)]
    pub dt: f64,
}

impl SnapshotMeta {
    pub fn new(grid: &Grid, time: f64, run_id: &str, step: usize, dt: f64) -> Self {
        SnapshotMeta {
            dim: grid.dim(),
            cells: grid.cells().to_vec(),
            spacing: grid.spacings().to_vec(),
            origin: grid.origins().to_vec(),
            time,
            run_id: run_id.to_string(),
            step,
            dt,
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        if self.cells.len() != self.dim {
            return Err(Error::InvalidGrid(format!(
                "sidecar dim {} but {} cell counts",
                self.dim,
                self.cells.len()
            )));
        }
        Grid::new(&self.cells, &self.spacing, &self.origin)
    }
}

fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("toml")
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), reason: reason.into() }
}

/// Writes `<path>` (binary) and `<path>.toml` with extension replaced.
pub fn write_snapshot(path: &Path, field: &Field, meta: &SnapshotMeta) -> Result<()> {
    if meta.grid()? != *field.grid() {
        return Err(Error::InvalidGrid("sidecar geometry does not match the field".into()));
    }
    let mut bytes = Vec::with_capacity(8 * field.values().len());
    for v in field.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    let text = toml::to_string(meta).map_err(|e| format_err(path, e.to_string()))?;
    fs::write(sidecar_path(path), text)?;
    Ok(())
}

pub fn read_meta(path: &Path) -> Result<SnapshotMeta> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side)?;
    toml::from_str(&text).map_err(|e| format_err(&side, e.to_string()))
}

pub fn read_snapshot(path: &Path) -> Result<(Field, SnapshotMeta)> {
    let meta = read_meta(path)?;
    let grid = meta.grid()?;
    let bytes = fs::read(path)?;
    if bytes.len() != 8 * grid.len() {
        return Err(format_err(
            path,
            format!("expected {} bytes for {} cells, found {}", 8 * grid.len(), grid.len(), bytes.len()),
        ));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let field = Field::new(grid, values).map_err(|e| format_err(path, e.to_string()))?;
    Ok((field, meta))
}
