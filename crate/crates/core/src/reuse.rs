//! Lineage reuse across repeated operation calls.
//!
//! Every registration is keyed at three granularities: `base` (exact
//! input arrays), `dim` (input shapes only) and `gen` (shape-free, via
//! index reshaping). Base entries are servable immediately — identical
//! inputs and arguments produce identical lineage, up to pseudo-random
//! behavior the caller must fold into `op_args`. Dim and gen entries
//! start `temporary` and are confirmed by later capture-bearing calls
//! whose lineage matches the stored prediction (`m` matches required;
//! gen additionally wants the confirming calls to cover distinct
//! shapes). A mismatch permanently rejects the key. Only confirmed
//! entries are served to capture-free calls.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{self, Catalog, CatalogError, Codec, EdgeRecord, StoredTableHandle};
use crate::lineage::{canonical_sort, validate, LineageRelation};
use crate::provrc::{self, CompressedTable, Direction, ProvrcError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigLevel {
    Base,
    Dim,
    Gen,
}

impl std::fmt::Display for SigLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SigLevel::Base => write!(f, "base"),
            SigLevel::Dim => write!(f, "dim"),
            SigLevel::Gen => write!(f, "gen"),
        }
    }
}

/// Deterministic digest of scalar operation arguments. Arrays are never
/// part of `op_args`; callers must fold RNG seeds in, otherwise reuse of
/// pseudo-random operations is unsound on their side.
pub fn args_digest(args: &serde_json::Value) -> String {
    // serde_json maps iterate in sorted key order, so this rendering is
    // canonical for a given argument set.
    let canonical = args.to_string();
    let hash = Sha256::digest(canonical.as_bytes());
    hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Reuse key at one granularity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpSignature {
    pub level: SigLevel,
    pub op_name: String,
    pub key: String,
}

impl OpSignature {
    pub fn base(op_name: &str, in_ids: &[String], digest: &str) -> Self {
        Self {
            level: SigLevel::Base,
            op_name: op_name.into(),
            key: format!("base:{op_name}|in={}|args={digest}", in_ids.join(",")),
        }
    }

    pub fn dim(op_name: &str, in_shapes: &[Vec<u64>], digest: &str) -> Self {
        let shapes: Vec<String> = in_shapes
            .iter()
            .map(|s| s.iter().map(u64::to_string).collect::<Vec<_>>().join("x"))
            .collect();
        Self {
            level: SigLevel::Dim,
            op_name: op_name.into(),
            key: format!("dim:{op_name}|shapes={}|args={digest}", shapes.join(",")),
        }
    }

    pub fn gen(op_name: &str, digest: &str) -> Self {
        Self {
            level: SigLevel::Gen,
            op_name: op_name.into(),
            key: format!("gen:{op_name}|args={digest}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryStatus {
    Temporary,
    Confirmed,
    Rejected,
}

/// Stored tables for one (input position, output position) pair of the
/// originating call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadTable {
    pub in_pos: usize,
    pub out_pos: usize,
    pub backward: StoredTableHandle,
    pub forward: StoredTableHandle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReuseEntry {
    pub signature: OpSignature,
    pub status: EntryStatus,
    pub confirmations: u32,
    /// Input shape lists of the original registration and every
    /// confirming call (gen diversity tracking).
    pub seen_shapes: BTreeSet<Vec<Vec<u64>>>,
    pub tables: Vec<PayloadTable>,
}

/// The persistent signature registry, embedded in the catalog manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub base: std::collections::BTreeMap<String, ReuseEntry>,
    pub dim: std::collections::BTreeMap<String, ReuseEntry>,
    pub gen: std::collections::BTreeMap<String, ReuseEntry>,
}

impl Registry {
    /// Most specific confirmed entry for the call key, if any.
    pub fn lookup(
        &self,
        op_name: &str,
        in_ids: &[String],
        in_shapes: &[Vec<u64>],
        digest: &str,
    ) -> Option<(SigLevel, &ReuseEntry)> {
        let levels = [
            (
                SigLevel::Base,
                self.base.get(&OpSignature::base(op_name, in_ids, digest).key),
            ),
            (
                SigLevel::Dim,
                self.dim.get(&OpSignature::dim(op_name, in_shapes, digest).key),
            ),
            (SigLevel::Gen, self.gen.get(&OpSignature::gen(op_name, digest).key)),
        ];
        levels.into_iter().find_map(|(level, e)| match e {
            Some(e) if e.status == EntryStatus::Confirmed => Some((level, e)),
            _ => None,
        })
    }

    /// All table files referenced by signature payloads.
    pub fn payload_files(&self) -> impl Iterator<Item = &str> {
        self.base
            .values()
            .chain(self.dim.values())
            .chain(self.gen.values())
            .flat_map(|e| e.tables.iter())
            .flat_map(|t| [t.backward.file.as_str(), t.forward.file.as_str()])
    }
}

#[derive(Debug, Error)]
pub enum ReuseError {
    #[error("unknown array {0}; register arrays before operations")]
    UnknownArray(String),
    #[error("no capture supplied and reuse not enabled")]
    MissingCapture,
    #[error("no servable signature for {0}")]
    NoServableSignature(String),
    #[error("captured relation for arrays {in_array} -> {out_array} does not match the call")]
    PairMismatch { in_array: String, out_array: String },
    #[error("invalid capture: {0}")]
    InvalidCapture(String),
    #[error("served lineage shape {served:?} conflicts with array {array} of shape {actual:?}")]
    ShapeMismatch {
        array: String,
        served: Vec<u64>,
        actual: Vec<u64>,
    },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Table(#[from] ProvrcError),
}

/// Where a registration's lineage came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LineageSource {
    Captured,
    Base,
    Dim,
    Gen,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegisterReport {
    pub op_id: String,
    pub source: LineageSource,
    pub edges: Vec<EdgeSummary>,
    /// Signature state transitions caused by this call.
    pub events: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeSummary {
    pub in_array: String,
    pub out_array: String,
    pub raw_rows: u64,
    pub backward_rows: u64,
    pub forward_rows: u64,
}

#[derive(Debug, Clone)]
pub struct RegisterRequest {
    pub op_name: String,
    pub in_arrays: Vec<String>,
    pub out_arrays: Vec<String>,
    pub op_args: serde_json::Value,
    /// Captured relations, one per related (input, output) array pair.
    pub captured: Option<Vec<LineageRelation>>,
    /// Allow serving stored lineage when no capture is supplied.
    pub reuse: bool,
    pub codec: Codec,
    pub overwrite: bool,
}

/// One captured relation located within the call's array lists.
struct CapturedPair<'a> {
    in_pos: usize,
    out_pos: usize,
    rel: &'a LineageRelation,
}

/// Register an operation application: compress and store its lineage
/// (captured or served from a reuse entry) and update the signature
/// registry. `m` is the confirmation threshold.
pub fn register_operation(
    catalog: &mut Catalog,
    req: RegisterRequest,
    m: u32,
) -> Result<RegisterReport, ReuseError> {
    for id in req.in_arrays.iter().chain(&req.out_arrays) {
        if catalog.array(id).is_none() {
            return Err(ReuseError::UnknownArray(id.clone()));
        }
    }
    let digest = args_digest(&req.op_args);
    let in_shapes: Vec<Vec<u64>> = req
        .in_arrays
        .iter()
        .map(|id| catalog.array(id).expect("checked").shape.clone())
        .collect();

    match req.captured.clone() {
        Some(rels) => register_with_capture(catalog, &req, &rels, &digest, &in_shapes, m),
        None => {
            if !req.reuse {
                return Err(ReuseError::MissingCapture);
            }
            register_from_reuse(catalog, &req, &digest, &in_shapes)
        }
    }
}

fn locate_pairs<'a>(
    in_arrays: &[String],
    out_arrays: &[String],
    rels: &'a [LineageRelation],
) -> Result<Vec<CapturedPair<'a>>, ReuseError> {
    rels.iter()
        .map(|rel| {
            let mismatch = || ReuseError::PairMismatch {
                in_array: rel.in_array.id.clone(),
                out_array: rel.out_array.id.clone(),
            };
            let in_pos = in_arrays
                .iter()
                .position(|id| *id == rel.in_array.id)
                .ok_or_else(mismatch)?;
            let out_pos = out_arrays
                .iter()
                .position(|id| *id == rel.out_array.id)
                .ok_or_else(mismatch)?;
            Ok(CapturedPair { in_pos, out_pos, rel })
        })
        .collect()
}

fn register_with_capture(
    catalog: &mut Catalog,
    req: &RegisterRequest,
    rels: &[LineageRelation],
    digest: &str,
    in_shapes: &[Vec<u64>],
    m: u32,
) -> Result<RegisterReport, ReuseError> {
    let canonical: Vec<LineageRelation> = rels.iter().map(|r| canonical_sort(r.clone())).collect();
    for rel in &canonical {
        validate(rel).map_err(|v| ReuseError::InvalidCapture(v.to_string()))?;
        for (meta, side) in [(&rel.in_array, "input"), (&rel.out_array, "output")] {
            let registered = catalog
                .array(&meta.id)
                .ok_or_else(|| ReuseError::UnknownArray(meta.id.clone()))?;
            if registered.shape != meta.shape {
                return Err(ReuseError::InvalidCapture(format!(
                    "{side} array {} captured with shape {:?}, registered as {:?}",
                    meta.id, meta.shape, registered.shape
                )));
            }
        }
    }
    let pairs = locate_pairs(&req.in_arrays, &req.out_arrays, &canonical)?;
    let op_id = catalog.next_op_id(&req.op_name);

    let mut payloads = Vec::new();
    let mut summaries = Vec::new();
    for pair in &pairs {
        let mut backward = provrc::compress(pair.rel, Direction::Backward);
        let mut forward = provrc::compress(pair.rel, Direction::Forward);
        backward.op = op_id.clone();
        forward.op = op_id.clone();
        let backward_handle = catalog.put_table(&backward, req.codec)?;
        let forward_handle = catalog.put_table(&forward, req.codec)?;
        summaries.push(EdgeSummary {
            in_array: pair.rel.in_array.id.clone(),
            out_array: pair.rel.out_array.id.clone(),
            raw_rows: pair.rel.len() as u64,
            backward_rows: backward_handle.rows,
            forward_rows: forward_handle.rows,
        });
        catalog.add_edge(
            EdgeRecord {
                op_id: op_id.clone(),
                in_array: pair.rel.in_array.id.clone(),
                out_array: pair.rel.out_array.id.clone(),
                raw_rows: pair.rel.len() as u64,
                csv_bytes: catalog::csv_size_of_relation(pair.rel),
                backward: backward_handle.clone(),
                forward: forward_handle.clone(),
            },
            req.overwrite,
        )?;
        payloads.push(PayloadTable {
            in_pos: pair.in_pos,
            out_pos: pair.out_pos,
            backward: backward_handle,
            forward: forward_handle,
        });
    }
    record_op(catalog, &op_id, req, digest);

    let mut events = Vec::new();

    // Base entries memoize the exact call and are final immediately; a
    // repeated capture refreshes the payload.
    let base_sig = OpSignature::base(&req.op_name, &req.in_arrays, digest);
    let base_entry = ReuseEntry {
        signature: base_sig.clone(),
        status: EntryStatus::Confirmed,
        confirmations: 0,
        seen_shapes: BTreeSet::from([in_shapes.to_vec()]),
        tables: payloads.clone(),
    };
    if catalog
        .manifest
        .signatures
        .base
        .insert(base_sig.key.clone(), base_entry)
        .is_none()
    {
        events.push(format!("{}: stored", base_sig.key));
    }

    for level in [SigLevel::Dim, SigLevel::Gen] {
        let sig = match level {
            SigLevel::Dim => OpSignature::dim(&req.op_name, in_shapes, digest),
            SigLevel::Gen => OpSignature::gen(&req.op_name, digest),
            SigLevel::Base => unreachable!(),
        };
        let map = match level {
            SigLevel::Dim => &mut catalog.manifest.signatures.dim,
            SigLevel::Gen => &mut catalog.manifest.signatures.gen,
            SigLevel::Base => unreachable!(),
        };
        match map.remove(&sig.key) {
            None => {
                map.insert(
                    sig.key.clone(),
                    ReuseEntry {
                        signature: sig.clone(),
                        status: EntryStatus::Temporary,
                        confirmations: 0,
                        seen_shapes: BTreeSet::from([in_shapes.to_vec()]),
                        tables: payloads.clone(),
                    },
                );
                events.push(format!("{}: temporary", sig.key));
            }
            Some(mut entry) => {
                let before = entry.status;
                let status = predict_and_confirm_inner(catalog, &mut entry, &pairs, in_shapes, m)?;
                if status != before {
                    events.push(format!("{}: {before:?} -> {status:?}", sig.key));
                }
                let map = match level {
                    SigLevel::Dim => &mut catalog.manifest.signatures.dim,
                    SigLevel::Gen => &mut catalog.manifest.signatures.gen,
                    SigLevel::Base => unreachable!(),
                };
                map.insert(sig.key.clone(), entry);
            }
        }
    }

    Ok(RegisterReport {
        op_id,
        source: LineageSource::Captured,
        edges: summaries,
        events,
    })
}

/// Check a capture-bearing call against an entry with a matching key and
/// update its status: a denotation match counts toward confirmation, a
/// mismatch rejects the key permanently.
pub fn predict_and_confirm(
    catalog: &Catalog,
    entry: &mut ReuseEntry,
    new_capture: &[LineageRelation],
    in_arrays: &[String],
    out_arrays: &[String],
    in_shapes: &[Vec<u64>],
    m: u32,
) -> Result<EntryStatus, ReuseError> {
    let canonical: Vec<LineageRelation> =
        new_capture.iter().map(|r| canonical_sort(r.clone())).collect();
    let pairs = locate_pairs(in_arrays, out_arrays, &canonical)?;
    predict_and_confirm_inner(catalog, entry, &pairs, in_shapes, m)
}

fn predict_and_confirm_inner(
    catalog: &Catalog,
    entry: &mut ReuseEntry,
    pairs: &[CapturedPair<'_>],
    in_shapes: &[Vec<u64>],
    m: u32,
) -> Result<EntryStatus, ReuseError> {
    if entry.status == EntryStatus::Rejected {
        return Ok(EntryStatus::Rejected);
    }
    let mut matched = entry.tables.len() == pairs.len();
    if matched {
        for payload in &entry.tables {
            let Some(pair) = pairs
                .iter()
                .find(|p| p.in_pos == payload.in_pos && p.out_pos == payload.out_pos)
            else {
                matched = false;
                break;
            };
            let stored = catalog.get_table(&payload.backward)?;
            let predicted = match entry.signature.level {
                SigLevel::Gen => {
                    let gen = provrc::generalize(&stored);
                    match provrc::instantiate(&gen, &pair.rel.in_array.shape) {
                        Ok(t) => t,
                        Err(_) => {
                            matched = false;
                            break;
                        }
                    }
                }
                _ => stored,
            };
            if predicted.out_shape != pair.rel.out_array.shape
                || predicted.in_shape != pair.rel.in_array.shape
                || provrc::decompress(&predicted)?.row_set() != pair.rel.row_set()
            {
                matched = false;
                break;
            }
        }
    }

    if !matched {
        entry.status = EntryStatus::Rejected;
        return Ok(EntryStatus::Rejected);
    }

    let counts = match entry.signature.level {
        // Gen confirmations must come from calls with new shapes.
        SigLevel::Gen => !entry.seen_shapes.contains(&in_shapes.to_vec()),
        _ => true,
    };
    entry.seen_shapes.insert(in_shapes.to_vec());
    if counts {
        entry.confirmations += 1;
    }
    if entry.status == EntryStatus::Temporary && entry.confirmations >= m {
        entry.status = EntryStatus::Confirmed;
    }
    Ok(entry.status)
}

fn register_from_reuse(
    catalog: &mut Catalog,
    req: &RegisterRequest,
    digest: &str,
    in_shapes: &[Vec<u64>],
) -> Result<RegisterReport, ReuseError> {
    let Some((level, entry)) =
        catalog
            .manifest
            .signatures
            .lookup(&req.op_name, &req.in_arrays, in_shapes, digest)
    else {
        return Err(ReuseError::NoServableSignature(req.op_name.clone()));
    };
    let source = match level {
        SigLevel::Base => LineageSource::Base,
        SigLevel::Dim => LineageSource::Dim,
        SigLevel::Gen => LineageSource::Gen,
    };
    let served_from = entry.signature.key.clone();
    let payloads = entry.tables.clone();

    let op_id = catalog.next_op_id(&req.op_name);
    let mut summaries = Vec::new();
    for payload in &payloads {
        let in_id = &req.in_arrays[payload.in_pos];
        let out_id = &req.out_arrays[payload.out_pos];
        let rewrite = |mut table: CompressedTable| -> Result<CompressedTable, ReuseError> {
            if level == SigLevel::Gen {
                let gen = provrc::generalize(&table);
                table = provrc::instantiate(&gen, &in_shapes[payload.in_pos])?;
            }
            let out_meta = catalog.array(out_id).expect("checked");
            if table.out_shape != out_meta.shape {
                return Err(ReuseError::ShapeMismatch {
                    array: out_id.clone(),
                    served: table.out_shape,
                    actual: out_meta.shape.clone(),
                });
            }
            if table.in_shape != in_shapes[payload.in_pos] {
                return Err(ReuseError::ShapeMismatch {
                    array: in_id.clone(),
                    served: table.in_shape,
                    actual: in_shapes[payload.in_pos].clone(),
                });
            }
            table.op = op_id.clone();
            table.in_array = in_id.clone();
            table.out_array = out_id.clone();
            Ok(table)
        };
        let backward = rewrite(catalog.get_table(&payload.backward)?)?;
        let forward = rewrite(catalog.get_table(&payload.forward)?)?;
        let raw_rows = backward.denotation_size();
        let csv_bytes = catalog::csv_size_of_table(&backward);
        let backward_handle = catalog.put_table(&backward, req.codec)?;
        let forward_handle = catalog.put_table(&forward, req.codec)?;
        summaries.push(EdgeSummary {
            in_array: in_id.clone(),
            out_array: out_id.clone(),
            raw_rows,
            backward_rows: backward_handle.rows,
            forward_rows: forward_handle.rows,
        });
        catalog.add_edge(
            EdgeRecord {
                op_id: op_id.clone(),
                in_array: in_id.clone(),
                out_array: out_id.clone(),
                raw_rows,
                csv_bytes,
                backward: backward_handle,
                forward: forward_handle,
            },
            req.overwrite,
        )?;
    }
    record_op(catalog, &op_id, req, digest);

    Ok(RegisterReport {
        op_id,
        source,
        edges: summaries,
        events: vec![format!("served from {served_from}")],
    })
}

fn record_op(catalog: &mut Catalog, op_id: &str, req: &RegisterRequest, digest: &str) {
    let seq = catalog.manifest.next_seq;
    let unix_time = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    catalog.manifest.ops.insert(
        op_id.to_string(),
        catalog::OpRecord {
            op_name: req.op_name.clone(),
            args_digest: digest.to_string(),
            in_arrays: req.in_arrays.clone(),
            out_arrays: req.out_arrays.clone(),
            seq,
            unix_time,
        },
    );
}

#[cfg(test)]
mod reuse_tests;
