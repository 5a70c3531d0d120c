//! Durable catalog: arrays, operations, lineage edges, stored tables and
//! the reuse signature registry.
//!
//! Layout on disk: a human-readable `manifest.json` plus content-addressed
//! table files under `tables/<sha256-prefix>.prc1`. All writes go through
//! a temp-file-then-rename commit, so readers never observe a partial
//! file and an interrupted write leaves the previous state intact.

pub mod prc1;

pub use prc1::{Codec, Prc1Error};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lineage::{ArrayMeta, LineageRelation};
use crate::provrc::{CompressedTable, Direction};
use crate::query::{LineageStore, QueryError};
use crate::reuse::Registry;

/// Environment variable naming the catalog root directory.
pub const ROOT_ENV: &str = "LINDEX_CATALOG";

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("i/o at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error(transparent)]
    Table(#[from] Prc1Error),
    #[error("array {0} already registered with a different shape")]
    ArrayConflict(String),
    #[error("unknown array {0}")]
    UnknownArray(String),
    #[error("edge {in_array} -> {out_array} already registered; pass overwrite to replace")]
    DuplicateEdge { in_array: String, out_array: String },
    #[error("no edge between {0} and {1}")]
    MissingEdge(String, String),
    #[error("stored file checksum mismatch for {0}")]
    ChecksumMismatch(String),
    #[error("catalog is locked by another process ({0})")]
    Locked(PathBuf),
}

fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CatalogError {
    let path = path.into();
    move |source| CatalogError::Io { path, source }
}

/// Reference to one stored table file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredTableHandle {
    /// Path relative to the catalog root.
    pub file: String,
    pub codec: Codec,
    pub direction: Direction,
    /// Compressed row count.
    pub rows: u64,
    /// On-disk size in bytes.
    pub bytes: u64,
    /// Hex sha-256 of the file contents.
    pub checksum: String,
}

/// One registered operation application.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpRecord {
    pub op_name: String,
    pub args_digest: String,
    pub in_arrays: Vec<String>,
    pub out_arrays: Vec<String>,
    pub seq: u64,
    pub unix_time: u64,
}

/// One lineage edge (operation input array to output array) with both
/// stored directions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub op_id: String,
    pub in_array: String,
    pub out_array: String,
    /// Raw relation cardinality (exact denotation size).
    pub raw_rows: u64,
    /// Size of the relation rendered as CSV with a header line.
    pub csv_bytes: u64,
    pub backward: StoredTableHandle,
    pub forward: StoredTableHandle,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub arrays: BTreeMap<String, ArrayMeta>,
    pub ops: BTreeMap<String, OpRecord>,
    pub edges: Vec<EdgeRecord>,
    pub signatures: Registry,
    pub next_seq: u64,
}

#[derive(Debug)]
pub struct Catalog {
    root: PathBuf,
    pub manifest: Manifest,
}

impl Catalog {
    pub fn create(root: &Path) -> Result<Self, CatalogError> {
        fs::create_dir_all(root.join("tables")).map_err(io_err(root))?;
        let catalog = Self {
            root: root.to_path_buf(),
            manifest: Manifest::default(),
        };
        catalog.save()?;
        Ok(catalog)
    }

    pub fn open(root: &Path) -> Result<Self, CatalogError> {
        let path = root.join("manifest.json");
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let manifest = serde_json::from_slice(&bytes)?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn open_or_create(root: &Path) -> Result<Self, CatalogError> {
        if root.join("manifest.json").exists() {
            Self::open(root)
        } else {
            Self::create(root)
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Commit the manifest atomically.
    pub fn save(&self) -> Result<(), CatalogError> {
        let body = serde_json::to_vec_pretty(&self.manifest)?;
        let tmp = self.root.join("manifest.json.tmp");
        let path = self.root.join("manifest.json");
        fs::write(&tmp, body).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        Ok(())
    }

    pub fn add_array(&mut self, meta: ArrayMeta) -> Result<(), CatalogError> {
        match self.manifest.arrays.get(&meta.id) {
            Some(existing) if *existing != meta => {
                Err(CatalogError::ArrayConflict(meta.id.clone()))
            }
            Some(_) => Ok(()),
            None => {
                self.manifest.arrays.insert(meta.id.clone(), meta);
                Ok(())
            }
        }
    }

    pub fn array(&self, id: &str) -> Option<&ArrayMeta> {
        self.manifest.arrays.get(id)
    }

    pub fn next_op_id(&mut self, op_name: &str) -> String {
        let seq = self.manifest.next_seq;
        self.manifest.next_seq += 1;
        format!("{op_name}#{seq}")
    }

    /// Write a table to a content-addressed file. Duplicate content maps
    /// to the same file, which is left untouched.
    pub fn put_table(
        &self,
        table: &CompressedTable,
        codec: Codec,
    ) -> Result<StoredTableHandle, CatalogError> {
        let bytes = prc1::encode(table, codec);
        let digest = hex(&Sha256::digest(&bytes));
        let file = format!("tables/{}.prc1", &digest[..32]);
        let path = self.root.join(&file);
        if !path.exists() {
            let tmp = self.root.join(format!("tables/.tmp-{digest}"));
            let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(&bytes).map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
            fs::rename(&tmp, &path).map_err(io_err(&path))?;
        }
        Ok(StoredTableHandle {
            file,
            codec,
            direction: table.direction,
            rows: table.rows.len() as u64,
            bytes: bytes.len() as u64,
            checksum: digest,
        })
    }

    /// Load and verify a stored table.
    pub fn get_table(&self, handle: &StoredTableHandle) -> Result<CompressedTable, CatalogError> {
        let path = self.root.join(&handle.file);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if hex(&Sha256::digest(&bytes)) != handle.checksum {
            return Err(CatalogError::ChecksumMismatch(handle.file.clone()));
        }
        Ok(prc1::decode(&bytes)?)
    }

    pub fn add_edge(&mut self, record: EdgeRecord, overwrite: bool) -> Result<(), CatalogError> {
        if !self.manifest.arrays.contains_key(&record.in_array) {
            return Err(CatalogError::UnknownArray(record.in_array));
        }
        if !self.manifest.arrays.contains_key(&record.out_array) {
            return Err(CatalogError::UnknownArray(record.out_array));
        }
        let existing = self
            .manifest
            .edges
            .iter()
            .position(|e| e.in_array == record.in_array && e.out_array == record.out_array);
        match existing {
            Some(_) if !overwrite => Err(CatalogError::DuplicateEdge {
                in_array: record.in_array,
                out_array: record.out_array,
            }),
            Some(idx) => {
                self.manifest.edges[idx] = record;
                Ok(())
            }
            None => {
                self.manifest.edges.push(record);
                Ok(())
            }
        }
    }

    pub fn find_edge(&self, in_array: &str, out_array: &str) -> Option<&EdgeRecord> {
        self.manifest
            .edges
            .iter()
            .find(|e| e.in_array == in_array && e.out_array == out_array)
    }

    /// Table for one edge in the given direction.
    pub fn edge_table(
        &self,
        in_array: &str,
        out_array: &str,
        direction: Direction,
    ) -> Result<CompressedTable, CatalogError> {
        let edge = self
            .find_edge(in_array, out_array)
            .ok_or_else(|| CatalogError::MissingEdge(in_array.into(), out_array.into()))?;
        let handle = match direction {
            Direction::Backward => &edge.backward,
            Direction::Forward => &edge.forward,
        };
        self.get_table(handle)
    }

    /// Size report per edge plus totals.
    pub fn stats(&self) -> StatsReport {
        let mut edges = Vec::new();
        for e in &self.manifest.edges {
            let meta_in = &self.manifest.arrays[&e.in_array];
            let meta_out = &self.manifest.arrays[&e.out_array];
            let record_width = (meta_in.dim() + meta_out.dim()) as u64 * 8;
            let raw_bytes = e.raw_rows * record_width;
            let ratio = |stored: u64| {
                if raw_bytes == 0 {
                    0.0
                } else {
                    stored as f64 / raw_bytes as f64 * 100.0
                }
            };
            edges.push(EdgeStats {
                op_id: e.op_id.clone(),
                in_array: e.in_array.clone(),
                out_array: e.out_array.clone(),
                raw_rows: e.raw_rows,
                raw_bytes,
                csv_bytes: e.csv_bytes,
                backward_rows: e.backward.rows,
                backward_bytes: e.backward.bytes,
                backward_ratio_pct: ratio(e.backward.bytes),
                forward_rows: e.forward.rows,
                forward_bytes: e.forward.bytes,
                forward_ratio_pct: ratio(e.forward.bytes),
            });
        }
        StatsReport { edges }
    }

    /// Check every stored file: existence, checksum, decode, and that the
    /// decoded denotation size matches the recorded raw row count. With
    /// `prune`, unreferenced and abandoned temp files are removed.
    pub fn verify(&self, prune: bool) -> Result<VerifyReport, CatalogError> {
        let mut report = VerifyReport::default();
        let mut referenced: Vec<&str> = Vec::new();
        for e in &self.manifest.edges {
            for handle in [&e.backward, &e.forward] {
                referenced.push(&handle.file);
                report.checked += 1;
                let path = self.root.join(&handle.file);
                let check = (|| -> Result<(), String> {
                    let bytes = fs::read(&path).map_err(|err| err.to_string())?;
                    if hex(&Sha256::digest(&bytes)) != handle.checksum {
                        return Err("checksum mismatch".into());
                    }
                    let table = prc1::decode(&bytes).map_err(|err| err.to_string())?;
                    if table.denotation_size() != e.raw_rows {
                        return Err(format!(
                            "denotes {} rows, catalog records {}",
                            table.denotation_size(),
                            e.raw_rows
                        ));
                    }
                    Ok(())
                })();
                if let Err(problem) = check {
                    report.problems.push(format!("{}: {problem}", handle.file));
                }
            }
        }
        for payload in self.manifest.signatures.payload_files() {
            referenced.push(payload);
        }
        let tables_dir = self.root.join("tables");
        let entries = fs::read_dir(&tables_dir).map_err(io_err(&tables_dir))?;
        for entry in entries {
            let entry = entry.map_err(io_err(&tables_dir))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let rel = format!("tables/{name}");
            let orphan = !referenced.iter().any(|f| *f == rel);
            if orphan {
                if prune {
                    fs::remove_file(entry.path()).map_err(io_err(entry.path()))?;
                    report.pruned.push(rel);
                } else {
                    report.orphans.push(rel);
                }
            }
        }
        Ok(report)
    }

    /// Acquire the single-writer lock.
    pub fn lock(root: &Path) -> Result<LockGuard, CatalogError> {
        let path = root.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(LockGuard { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CatalogError::Locked(path))
            }
            Err(source) => Err(CatalogError::Io { path, source }),
        }
    }
}

pub struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

impl LineageStore for Catalog {
    fn array(&self, id: &str) -> Option<ArrayMeta> {
        self.manifest.arrays.get(id).cloned()
    }

    fn hop(&self, from: &str, to: &str) -> Result<CompressedTable, QueryError> {
        // Backward hop: `from` is the producing op's output.
        let backward = self.find_edge(to, from);
        let forward = self.find_edge(from, to);
        let (edge, direction) = match (backward, forward) {
            (Some(e), None) => (e, Direction::Backward),
            (None, Some(e)) => (e, Direction::Forward),
            (Some(_), Some(_)) => {
                return Err(QueryError::AmbiguousEdge {
                    from: from.into(),
                    to: to.into(),
                })
            }
            (None, None) => {
                return Err(QueryError::MissingEdge {
                    from: from.into(),
                    to: to.into(),
                })
            }
        };
        let handle = match direction {
            Direction::Backward => &edge.backward,
            Direction::Forward => &edge.forward,
        };
        self.get_table(handle)
            .map_err(|e| QueryError::Storage(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeStats {
    pub op_id: String,
    pub in_array: String,
    pub out_array: String,
    pub raw_rows: u64,
    pub raw_bytes: u64,
    pub csv_bytes: u64,
    pub backward_rows: u64,
    pub backward_bytes: u64,
    pub backward_ratio_pct: f64,
    pub forward_rows: u64,
    pub forward_bytes: u64,
    pub forward_ratio_pct: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct StatsReport {
    pub edges: Vec<EdgeStats>,
}

impl StatsReport {
    pub fn render_text(&self, csv_baseline: bool) -> String {
        let mut out = String::new();
        let base = if csv_baseline { "csv" } else { "raw" };
        out.push_str(&format!(
            "{:<24} {:>12} {:>12} {:>12} {:>9} {:>12} {:>9}\n",
            "edge", "raw rows", &format!("{base} bytes"), "bwd bytes", "bwd %", "fwd bytes", "fwd %"
        ));
        for e in &self.edges {
            let denom = if csv_baseline { e.csv_bytes } else { e.raw_bytes };
            let pct = |stored: u64| {
                if denom == 0 {
                    0.0
                } else {
                    stored as f64 / denom as f64 * 100.0
                }
            };
            out.push_str(&format!(
                "{:<24} {:>12} {:>12} {:>12} {:>9.4} {:>12} {:>9.4}\n",
                format!("{}->{} ({})", e.in_array, e.out_array, e.op_id),
                e.raw_rows,
                denom,
                e.backward_bytes,
                pct(e.backward_bytes),
                e.forward_bytes,
                pct(e.forward_bytes),
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VerifyReport {
    pub checked: usize,
    pub problems: Vec<String>,
    pub orphans: Vec<String>,
    pub pruned: Vec<String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Exact byte size of the relation rendered as CSV with header.
pub fn csv_size_of_relation(rel: &LineageRelation) -> u64 {
    let header: u64 = (1..=rel.out_dim()).map(|j| format!("b_{j},").len() as u64).sum::<u64>()
        + (1..=rel.in_dim()).map(|i| format!("a_{i},").len() as u64).sum::<u64>();
    // Last column has a newline instead of a comma: same byte count.
    let mut total = header;
    for row in &rel.rows {
        for &v in row.out_idx.iter().chain(&row.in_idx) {
            total += digits(v) + 1;
        }
    }
    total
}

/// The same measure computed from a compressed table by walking its
/// denotation without materializing it.
pub fn csv_size_of_table(table: &CompressedTable) -> u64 {
    let l = table.out_dim();
    let m = table.in_dim();
    let header: u64 = (1..=l).map(|j| format!("b_{j},").len() as u64).sum::<u64>()
        + (1..=m).map(|i| format!("a_{i},").len() as u64).sum::<u64>();
    let mut total = header;
    table.visit_denotation(|out_idx, in_idx| {
        for &v in out_idx.iter().chain(in_idx) {
            total += digits(v) + 1;
        }
    });
    total
}

fn digits(v: i64) -> u64 {
    let mut n = if v < 0 { 1 } else { 0 };
    let mut x = v.unsigned_abs().max(1);
    while x > 0 {
        n += 1;
        x /= 10;
    }
    n
}

#[cfg(test)]
mod catalog_tests;
