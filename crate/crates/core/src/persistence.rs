//! Snapshots, calibration cache and JSON-lines logs.
//!
//! Matrix payloads are base64 of little-endian IEEE-754 doubles, so a loaded
//! snapshot reproduces every weight bit for bit.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{calibrate_with, CalibrationConfig, ChaoticSystem, SystemKind};
use crate::error::{Error, Result};
use crate::topology::{HyperParams, Reservoir, SparseMatrix, Topology};
use crate::training::Readout;

pub const FORMAT_VERSION: u32 = 1;

/// Matrices sparser than this are stored as triplets.
pub const SPARSE_DENSITY: f64 = 0.25;

pub fn encode_f64s(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

pub fn decode_f64s(text: &str) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(text)
        .map_err(|e| Error::Validation(vec![format!("bad base64 payload: {e}")]))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Validation(vec![format!(
            "payload of {} bytes is not a whole number of doubles",
            bytes.len()
        )]));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "kebab-case")]
pub enum MatrixData {
    Sparse {
        rows: usize,
        cols: usize,
        row_index: Vec<usize>,
        col_index: Vec<usize>,
        values: String,
    },
    /// Row-major values.
    Dense { rows: usize, cols: usize, values: String },
}

impl MatrixData {
    pub fn from_sparse(m: &SparseMatrix) -> Self {
        if m.density() < SPARSE_DENSITY {
            let t = m.triplets();
            MatrixData::Sparse {
                rows: m.nrows(),
                cols: m.ncols(),
                row_index: t.iter().map(|x| x.0).collect(),
                col_index: t.iter().map(|x| x.1).collect(),
                values: encode_f64s(&t.iter().map(|x| x.2).collect::<Vec<_>>()),
            }
        } else {
            Self::dense(&m.to_dense())
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let nnz = m.iter().filter(|v| **v != 0.0).count();
        if m.is_empty() || (nnz as f64) / (m.len() as f64) >= SPARSE_DENSITY {
            Self::dense(m)
        } else {
            Self::from_sparse(&SparseMatrix::from_dense(m))
        }
    }

    fn dense(m: &DMatrix<f64>) -> Self {
        let row_major: Vec<f64> = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)]))
            .collect();
        MatrixData::Dense {
            rows: m.nrows(),
            cols: m.ncols(),
            values: encode_f64s(&row_major),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            MatrixData::Sparse { rows, cols, .. } | MatrixData::Dense { rows, cols, .. } => (*rows, *cols),
        }
    }

    pub fn to_sparse(&self) -> Result<SparseMatrix> {
        match self {
            MatrixData::Sparse {
                rows,
                cols,
                row_index,
                col_index,
                values,
            } => {
                let vals = decode_f64s(values)?;
                if row_index.len() != vals.len() || col_index.len() != vals.len() {
                    return Err(Error::Validation(vec![format!(
                        "triplet arrays disagree: {} rows, {} cols, {} values",
                        row_index.len(),
                        col_index.len(),
                        vals.len()
                    )]));
                }
                let mut t = Vec::with_capacity(vals.len());
                for ((&i, &j), v) in row_index.iter().zip(col_index).zip(vals) {
                    if i >= *rows || j >= *cols {
                        return Err(Error::Validation(vec![format!(
                            "entry ({i}, {j}) outside a {rows}x{cols} matrix"
                        )]));
                    }
                    t.push((i, j, v));
                }
                Ok(SparseMatrix::from_triplets(*rows, *cols, &t))
            }
            MatrixData::Dense { .. } => Ok(SparseMatrix::from_dense(&self.to_dense()?)),
        }
    }

    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        match self {
            MatrixData::Dense { rows, cols, values } => {
                let vals = decode_f64s(values)?;
                if vals.len() != rows * cols {
                    return Err(Error::Validation(vec![format!(
                        "dense payload has {} values, expected {rows}x{cols}",
                        vals.len()
                    )]));
                }
                Ok(DMatrix::from_row_slice(*rows, *cols, &vals))
            }
            MatrixData::Sparse { .. } => Ok(self.to_sparse()?.to_dense()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutData {
    pub w_out: MatrixData,
    pub alpha: f64,
    pub fout_split: usize,
    pub degenerate: bool,
}

impl ReadoutData {
    pub fn from_readout(r: &Readout) -> Self {
        ReadoutData {
            w_out: MatrixData::dense(&r.w_out),
            alpha: r.alpha,
            fout_split: r.fout_split,
            degenerate: r.degenerate,
        }
    }

    pub fn to_readout(&self) -> Result<Readout> {
        Ok(Readout {
            w_out: self.w_out.to_dense()?,
            alpha: self.alpha,
            fout_split: self.fout_split,
            loo_errors: Vec::new(),
            degenerate: self.degenerate,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Seconds since the Unix epoch.
    pub created_unix: u64,
    pub config_hash: String,
    pub library_version: String,
}

impl Provenance {
    pub fn now(config_hash: impl Into<String>) -> Self {
        Provenance {
            created_unix: unix_now(),
            config_hash: config_hash.into(),
            library_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// SHA-256 (hex) of the canonical JSON form of `config`.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let text = serde_json::to_string(config).expect("configuration serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub format_version: u32,
    pub system: Option<ChaoticSystem>,
    pub hyperparams: HyperParams,
    pub topology: Topology,
    pub seed: u64,
    pub w_r: MatrixData,
    pub w_in: MatrixData,
    pub readout: Option<ReadoutData>,
    pub provenance: Provenance,
}

impl Snapshot {
    pub fn new(
        reservoir: &Reservoir,
        system: Option<&ChaoticSystem>,
        readout: Option<&Readout>,
        config_hash: impl Into<String>,
    ) -> Self {
        Snapshot {
            format_version: FORMAT_VERSION,
            system: system.cloned(),
            hyperparams: reservoir.hyperparams,
            topology: reservoir.topology(),
            seed: reservoir.seed,
            w_r: MatrixData::from_sparse(&reservoir.w_r),
            w_in: MatrixData::from_dense(&reservoir.w_in_matrix()),
            readout: readout.map(ReadoutData::from_readout),
            provenance: Provenance::now(config_hash),
        }
    }

    pub fn reservoir(&self) -> Result<Reservoir> {
        Reservoir::from_parts(self.hyperparams, self.w_r.to_sparse()?, &self.w_in.to_dense()?, self.seed)
    }

    pub fn readout(&self) -> Result<Option<Readout>> {
        self.readout.as_ref().map(|r| r.to_readout()).transpose()
    }

    /// Every broken invariant: shapes, topology structure and radius law.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.topology != self.hyperparams.topology {
            v.push(format!(
                "topology {} disagrees with hyperparameters ({})",
                self.topology, self.hyperparams.topology
            ));
        }
        if let Some(sys) = &self.system {
            if let Err(e) = sys.validate() {
                v.push(e.to_string());
            }
        }
        let (n, nc) = self.w_r.shape();
        if n != nc {
            v.push(format!("W_r is {n}x{nc}, not square"));
        }
        if self.w_in.shape() != (n, 3) {
            v.push(format!("W_in is {:?}, expected ({n}, 3)", self.w_in.shape()));
        }
        if let Some(r) = &self.readout {
            if r.w_out.shape() != (3, n) {
                v.push(format!("W_out is {:?}, expected (3, {n})", r.w_out.shape()));
            }
            if r.fout_split > n {
                v.push(format!("fout_split {} exceeds {n}", r.fout_split));
            }
            if let Err(e) = r.w_out.to_dense() {
                v.push(e.to_string());
            }
        }
        if !v.is_empty() {
            return v;
        }
        match self.reservoir() {
            Ok(res) => v.extend(res.structure_violations()),
            Err(Error::Validation(list)) => v.extend(list),
            Err(e) => v.push(e.to_string()),
        }
        v
    }
}

pub fn save_snapshot(snapshot: &Snapshot, path: &Path) -> Result<()> {
    write_json(path, snapshot)
}

/// Parse, check the format version, then re-run every structural check.
pub fn load_snapshot(path: &Path) -> Result<Snapshot> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Validation(vec!["missing format_version".into()]))?;
    if found != FORMAT_VERSION as u64 {
        return Err(Error::FormatVersion {
            found: found.min(u32::MAX as u64) as u32,
            expected: FORMAT_VERSION,
        });
    }
    let snap: Snapshot = serde_json::from_value(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    let violations = snap.violations();
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Ok(snap)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

/// Append one compact JSON line and flush.
pub fn append_jsonl<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut line = serde_json::to_string(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    line.push('\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}

/// Read every line of a JSON-lines file. A final line without its newline
/// (an interrupted append) is dropped and removed from the file.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    if complete.len() != text.len() {
        log::warn!("{}: dropping incomplete final line", path.display());
        fs::write(path, complete).map_err(|e| Error::io(path, e))?;
    }
    let mut out = Vec::new();
    for (i, line) in BufReader::new(complete.as_bytes()).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::json(format!("{} line {}", path.display(), i + 1), e))?,
        );
    }
    Ok(out)
}

/// Cache file for a calibration keyed by system, seed and sample horizon.
pub fn calibration_path(dir: &Path, kind: SystemKind, seed: u64, horizon: f64) -> PathBuf {
    dir.join(format!("calibration_{kind}_{seed}_{horizon}.json"))
}

/// Load a cached calibration or compute and store it.
pub fn load_or_calibrate(dir: &Path, kind: SystemKind, cfg: &CalibrationConfig, seed: u64) -> Result<ChaoticSystem> {
    let path = calibration_path(dir, kind, seed, cfg.sample_horizon);
    #[derive(Serialize, Deserialize)]
    struct Entry {
        config: CalibrationConfig,
        system: ChaoticSystem,
    }
    if path.exists() {
        let entry: Entry = read_json(&path)?;
        if entry.config == *cfg && entry.system.kind() == kind {
            entry.system.validate()?;
            return Ok(entry.system);
        }
        log::info!("{}: cached calibration used other settings, recomputing", path.display());
    }
    let system = calibrate_with(kind, cfg, seed)?;
    write_json(&path, &Entry { config: *cfg, system: system.clone() })?;
    Ok(system)
}

/// Check that a file can be created at `path`.
pub fn ensure_writable(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(|_| ()).map_err(|e| Error::io(path, e))
}
