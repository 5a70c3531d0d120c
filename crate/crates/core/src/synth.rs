//! Synthetic lineage generators and the brute-force reference engine.
//!
//! The generators produce ground-truth relations for a workload of array
//! operations (element-wise, aggregation, tiling, linear algebra,
//! permutation, windowing, filtering, grouping, joining, and a op whose
//! pattern switches with its trailing extent). `brute_force_query` is an
//! independent reference for query answers: it joins raw relations with
//! hash lookups and shares no code with the in-situ query path.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::prc1;
use crate::lineage::{ArrayMeta, IndexRange, LineageRelation, LineageRow};
use crate::provrc::{compress, Direction};
use crate::query::{self, InMemoryStore, QueryCells, QueryConfig, QuerySpec};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator parameters: {0}")]
    InvalidParam(String),
    #[error("pipeline must contain at least one operation")]
    EmptyPipeline,
    #[error("arrays do not chain at step {0}")]
    BrokenChain(usize),
    #[error("benchmark exceeded the {0:?} budget")]
    Timeout(Duration),
    #[error("query: {0}")]
    Query(#[from] query::QueryError),
}

/// Workload operation kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OpKind {
    /// Element-wise unary map (identity lineage).
    Negation { shape: Vec<u64> },
    /// Element-wise binary map over two equally shaped inputs.
    Addition { shape: Vec<u64> },
    /// Sum over one axis.
    Aggregate { shape: Vec<u64>, axis: usize },
    /// Repeat the array along every axis.
    Tile { shape: Vec<u64>, reps: Vec<u64> },
    /// Matrix (n x n) times vector (n).
    MatVec { n: u64 },
    /// Matrix (n x n) times matrix (n x n).
    MatMul { n: u64 },
    /// Vector dot product.
    Dot { n: u64 },
    /// Value sort: a seeded permutation with no adjacent fixed-offset
    /// pair, the structureless worst case.
    Sort { n: u64, seed: u64 },
    /// Neighborhood filter over a 2-d array, clipped at the borders.
    Window { shape: Vec<u64>, radius: u64 },
    /// Keep cells above the mean of seeded random values.
    ValueFilter { n: u64, seed: u64 },
    /// Group cells by a seeded key column.
    GroupBy {
        n: u64,
        seed: u64,
        key_domain: u64,
    },
    /// Inner join of two seeded key columns.
    KeyJoin {
        left: u64,
        right: u64,
        seed: u64,
        key_domain: u64,
    },
    /// Shape-dependent lineage: one pattern when the trailing extent is
    /// 2, a different one when it is 3. Reproduces the known reuse
    /// misprediction of shape-sensitive operations.
    CrossLike { rows: u64, trailing: u64 },
}

#[derive(Debug, Clone)]
pub struct OpGenerator {
    pub kind: OpKind,
}

/// A generated operation: arrays plus one relation per input array.
#[derive(Debug, Clone)]
pub struct GeneratedOp {
    pub op_name: &'static str,
    pub op_args: serde_json::Value,
    pub in_arrays: Vec<ArrayMeta>,
    pub out_array: ArrayMeta,
    pub relations: Vec<LineageRelation>,
}

fn each_index(shape: &[u64], mut f: impl FnMut(&[i64])) {
    let mut idx: Vec<i64> = vec![1; shape.len()];
    loop {
        f(&idx);
        let mut done = true;
        for (v, &d) in idx.iter_mut().zip(shape).rev() {
            if *v < d as i64 {
                *v += 1;
                done = false;
                break;
            }
            *v = 1;
        }
        if done {
            break;
        }
    }
}

/// A permutation of 1..=n with no adjacent fixed-offset pair
/// (`p[i+1] != p[i] + 1`), so its lineage admits no interval merging in
/// either direction. Resamples until the condition holds.
pub fn screened_permutation(n: u64, seed: u64) -> Vec<i64> {
    let mut attempt = 0u64;
    loop {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let mut perm: Vec<i64> = (1..=n as i64).collect();
        perm.shuffle(&mut rng);
        let clean = perm.windows(2).all(|w| w[1] != w[0] + 1);
        if clean || n < 2 {
            return perm;
        }
        attempt += 1;
    }
}

impl OpGenerator {
    pub fn new(kind: OpKind) -> Self {
        Self { kind }
    }

    pub fn in_arity(&self) -> usize {
        match self.kind {
            OpKind::Addition { .. }
            | OpKind::MatVec { .. }
            | OpKind::MatMul { .. }
            | OpKind::Dot { .. }
            | OpKind::KeyJoin { .. } => 2,
            _ => 1,
        }
    }

    /// True when the lineage depends only on shapes, never on values.
    pub fn data_independent(&self) -> bool {
        !matches!(
            self.kind,
            OpKind::Sort { .. }
                | OpKind::ValueFilter { .. }
                | OpKind::GroupBy { .. }
                | OpKind::KeyJoin { .. }
        )
    }

    pub fn op_name(&self) -> &'static str {
        match self.kind {
            OpKind::Negation { .. } => "negation",
            OpKind::Addition { .. } => "addition",
            OpKind::Aggregate { .. } => "aggregate",
            OpKind::Tile { .. } => "tile",
            OpKind::MatVec { .. } => "matvec",
            OpKind::MatMul { .. } => "matmul",
            OpKind::Dot { .. } => "dot",
            OpKind::Sort { .. } => "sort",
            OpKind::Window { .. } => "window",
            OpKind::ValueFilter { .. } => "value_filter",
            OpKind::GroupBy { .. } => "group_by",
            OpKind::KeyJoin { .. } => "key_join",
            OpKind::CrossLike { .. } => "cross_like",
        }
    }

    /// Scalar arguments as they would be passed to the operation. Seeds
    /// of value-dependent kinds are deliberately not included: the
    /// registry must catch the resulting reuse mismatches.
    pub fn op_args(&self) -> serde_json::Value {
        match &self.kind {
            OpKind::Aggregate { axis, .. } => serde_json::json!({ "axis": axis }),
            OpKind::Tile { reps, .. } => serde_json::json!({ "reps": reps }),
            OpKind::Window { radius, .. } => serde_json::json!({ "radius": radius }),
            OpKind::GroupBy { key_domain, .. } | OpKind::KeyJoin { key_domain, .. } => {
                serde_json::json!({ "key_domain": key_domain })
            }
            _ => serde_json::json!({}),
        }
    }

    /// Ground-truth lineage for this operation, one relation per input.
    pub fn generate(&self, in_ids: &[&str], out_id: &str) -> Result<GeneratedOp, SynthError> {
        if in_ids.len() != self.in_arity() {
            return Err(SynthError::InvalidParam(format!(
                "{} takes {} input arrays, got {}",
                self.op_name(),
                self.in_arity(),
                in_ids.len()
            )));
        }
        let meta = |id: &str, shape: &[u64]| ArrayMeta {
            id: id.to_string(),
            shape: shape.to_vec(),
        };
        let op = match &self.kind {
            OpKind::Negation { shape } => {
                let x = meta(in_ids[0], shape);
                let z = meta(out_id, shape);
                let mut rows = Vec::new();
                each_index(shape, |idx| {
                    rows.push(LineageRow::new(idx.to_vec(), idx.to_vec()));
                });
                GeneratedOp {
                    op_name: self.op_name(),
                    op_args: self.op_args(),
                    relations: vec![LineageRelation::with_rows(z.clone(), x.clone(), rows)],
                    in_arrays: vec![x],
                    out_array: z,
                }
            }
            OpKind::Addition { shape } => {
                let x = meta(in_ids[0], shape);
                let y = meta(in_ids[1], shape);
                let z = meta(out_id, shape);
                let mut rows = Vec::new();
                each_index(shape, |idx| {
                    rows.push(LineageRow::new(idx.to_vec(), idx.to_vec()));
                });
                GeneratedOp {
                    op_name: self.op_name(),
                    op_args: self.op_args(),
                    relations: vec![
                        LineageRelation::with_rows(z.clone(), x.clone(), rows.clone()),
                        LineageRelation::with_rows(z.clone(), y.clone(), rows),
                    ],
                    in_arrays: vec![x, y],
                    out_array: z,
                }
            }
            OpKind::Aggregate { shape, axis } => {
                if *axis >= shape.len() {
                    return Err(SynthError::InvalidParam(format!(
                        "axis {axis} out of range for shape {shape:?}"
                    )));
                }
                let mut out_shape: Vec<u64> = shape.clone();
                out_shape.remove(*axis);
                if out_shape.is_empty() {
                    out_shape.push(1);
                }
                let x = meta(in_ids[0], shape);
                let z = meta(out_id, &out_shape);
                let mut rows = Vec::new();
                each_index(shape, |idx| {
                    let mut out: Vec<i64> = idx.to_vec();
                    out.remove(*axis);
                    if out.is_empty() {
                        out.push(1);
                    }
                    rows.push(LineageRow::new(out, idx.to_vec()));
                });
                GeneratedOp {
                    op_name: self.op_name(),
                    op_args: self.op_args(),
                    relations: vec![LineageRelation::with_rows(z.clone(), x.clone(), rows)],
                    in_arrays: vec![x],
                    out_array: z,
                }
            }
            OpKind::Tile { shape, reps } => {
                if reps.len() != shape.len() || reps.iter().any(|&r| r == 0) {
                    return Err(SynthError::InvalidParam(format!(
                        "reps {reps:?} incompatible with shape {shape:?}"
                    )));
                }
                let out_shape: Vec<u64> = shape.iter().zip(reps).map(|(&d, &r)| d * r).collect();
                let x = meta(in_ids[0], shape);
                let z = meta(out_id, &out_shape);
                let mut rows = Vec::new();
                each_index(&out_shape, |idx| {
                    let src: Vec<i64> = idx
                        .iter()
                        .zip(shape)
                        .map(|(&o, &d)| (o - 1) % d as i64 + 1)
                        .collect();
                    rows.push(LineageRow::new(idx.to_vec(), src));
                });
                GeneratedOp {
                    op_name: self.op_name(),
                    op_args: self.op_args(),
                    relations: vec![LineageRelation::with_rows(z.clone(), x.clone(), rows)],
                    in_arrays: vec![x],
                    out_array: z,
                }
            }
            OpKind::MatVec { n } => {
                let n = *n;
                let x = meta(in_ids[0], &[n, n]);
                let y = meta(in_ids[1], &[n]);
                let z = meta(out_id, &[n]);
                let mut mat_rows = Vec::new();
                let mut vec_rows = Vec::new();
                for i in 1..=n as i64 {
                    for k in 1..=n as i64 {
                        mat_rows.push(LineageRow::new(vec![i], vec![i, k]));
                        vec_rows.push(LineageRow::new(vec![i], vec![k]));
                    }
                }
                GeneratedOp {
                    op_name: self.op_name(),
                    op_args: self.op_args(),
                    relations: vec![
                        LineageRelation::with_rows(z.clone(), x.clone(), mat_rows),
                        LineageRelation::with_rows(z.clone(), y.clone(), vec_rows),
                    ],
                    in_arrays: vec![x, y],
                    out_array: z,
                }
            }
            OpKind::MatMul { n } => {
                let n = *n;
                let x = meta(in_ids[0], &[n, n]);
                let y = meta(in_ids[1], &[n, n]);
                let z = meta(out_id, &[n, n]);
                let mut left = Vec::new();
                let mut right = Vec::new();
                for i in 1..=n as i64 {
                    for j in 1..=n as i64 {
                        for k in 1..=n as i64 {
                            left.push(LineageRow::new(vec![i, j], vec![i, k]));
                            right.push(LineageRow::new(vec![i, j], vec![k, j]));
                        }
                    }
                }
                GeneratedOp {
                    op_name: self.op_name(),
                    op_args: self.op_args(),
                    relations: vec![
                        LineageRelation::with_rows(z.clone(), x.clone(), left),
                        LineageRelation::with_rows(z.clone(), y.clone(), right),
                    ],
                    in_arrays: vec![x, y],
                    out_array: z,
                }
            }
            OpKind::Dot { n } => {
                let n = *n;
                let x = meta(in_ids[0], &[n]);
                let y = meta(in_ids[1], &[n]);
                let z = meta(out_id, &[1]);
                let rows: Vec<LineageRow> = (1..=n as i64)
                    .map(|k| LineageRow::new(vec![1], vec![k]))
                    .collect();
                GeneratedOp {
                    op_name: self.op_name(),
                    op_args: self.op_args(),
                    relations: vec![
                        LineageRelation::with_rows(z.clone(), x.clone(), rows.clone()),
                        LineageRelation::with_rows(z.clone(), y.clone(), rows),
                    ],
                    in_arrays: vec![x, y],
                    out_array: z,
                }
            }
            OpKind::Sort { n, seed } => {
                let perm = screened_permutation(*n, *seed);
                let x = meta(in_ids[0], &[*n]);
                let z = meta(out_id, &[*n]);
                let rows = perm
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| LineageRow::new(vec![i as i64 + 1], vec![p]));
                GeneratedOp {
                    op_name: self.op_name(),
                    op_args: self.op_args(),
                    relations: vec![LineageRelation::with_rows(z.clone(), x.clone(), rows)],
                    in_arrays: vec![x],
                    out_array: z,
                }
            }
            OpKind::Window { shape, radius } => {
                if shape.len() != 2 {
                    return Err(SynthError::InvalidParam(
                        "window filter requires a 2-d shape".into(),
                    ));
                }
                let w = *radius as i64;
                let x = meta(in_ids[0], shape);
                let z = meta(out_id, shape);
                let (rows_n, cols_n) = (shape[0] as i64, shape[1] as i64);
                let mut rows = Vec::new();
                each_index(shape, |idx| {
                    let (i, j) = (idx[0], idx[1]);
                    for a in (i - w).max(1)..=(i + w).min(rows_n) {
                        for b in (j - w).max(1)..=(j + w).min(cols_n) {
                            rows.push(LineageRow::new(vec![i, j], vec![a, b]));
                        }
                    }
                });
                GeneratedOp {
                    op_name: self.op_name(),
                    op_args: self.op_args(),
                    relations: vec![LineageRelation::with_rows(z.clone(), x.clone(), rows)],
                    in_arrays: vec![x],
                    out_array: z,
                }
            }
            OpKind::ValueFilter { n, seed } => {
                let mut attempt = 0u64;
                let kept: Vec<i64> = loop {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
                    let values: Vec<f64> = (0..*n).map(|_| rng.gen::<f64>()).collect();
                    let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
                    let kept: Vec<i64> = values
                        .iter()
                        .enumerate()
                        .filter(|(_, &v)| v > mean)
                        .map(|(i, _)| i as i64 + 1)
                        .collect();
                    if !kept.is_empty() {
                        break kept;
                    }
                    attempt += 1;
                };
                let x = meta(in_ids[0], &[*n]);
                let z = meta(out_id, &[kept.len() as u64]);
                let rows = kept
                    .iter()
                    .enumerate()
                    .map(|(k, &src)| LineageRow::new(vec![k as i64 + 1], vec![src]));
                GeneratedOp {
                    op_name: self.op_name(),
                    op_args: self.op_args(),
                    relations: vec![LineageRelation::with_rows(z.clone(), x.clone(), rows)],
                    in_arrays: vec![x],
                    out_array: z,
                }
            }
            OpKind::GroupBy { n, seed, key_domain } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let keys: Vec<u64> = (0..*n).map(|_| rng.gen_range(1..=*key_domain)).collect();
                let mut groups: BTreeMap<u64, Vec<i64>> = BTreeMap::new();
                for (i, &k) in keys.iter().enumerate() {
                    groups.entry(k).or_default().push(i as i64 + 1);
                }
                let x = meta(in_ids[0], &[*n]);
                let z = meta(out_id, &[groups.len() as u64]);
                let mut rows = Vec::new();
                for (g, members) in groups.values().enumerate() {
                    for &i in members {
                        rows.push(LineageRow::new(vec![g as i64 + 1], vec![i]));
                    }
                }
                GeneratedOp {
                    op_name: self.op_name(),
                    op_args: self.op_args(),
                    relations: vec![LineageRelation::with_rows(z.clone(), x.clone(), rows)],
                    in_arrays: vec![x],
                    out_array: z,
                }
            }
            OpKind::KeyJoin { left, right, seed, key_domain } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let lk: Vec<u64> = (0..*left).map(|_| rng.gen_range(1..=*key_domain)).collect();
                let rk: Vec<u64> = (0..*right).map(|_| rng.gen_range(1..=*key_domain)).collect();
                let mut pairs: Vec<(i64, i64)> = Vec::new();
                for (i, &a) in lk.iter().enumerate() {
                    for (j, &b) in rk.iter().enumerate() {
                        if a == b {
                            pairs.push((i as i64 + 1, j as i64 + 1));
                        }
                    }
                }
                if pairs.is_empty() {
                    return Err(SynthError::InvalidParam(
                        "join produced no matches; enlarge inputs or key domain".into(),
                    ));
                }
                let x = meta(in_ids[0], &[*left]);
                let y = meta(in_ids[1], &[*right]);
                let z = meta(out_id, &[pairs.len() as u64]);
                let left_rows = pairs
                    .iter()
                    .enumerate()
                    .map(|(k, &(i, _))| LineageRow::new(vec![k as i64 + 1], vec![i]));
                let right_rows = pairs
                    .iter()
                    .enumerate()
                    .map(|(k, &(_, j))| LineageRow::new(vec![k as i64 + 1], vec![j]));
                GeneratedOp {
                    op_name: self.op_name(),
                    op_args: self.op_args(),
                    relations: vec![
                        LineageRelation::with_rows(z.clone(), x.clone(), left_rows),
                        LineageRelation::with_rows(z.clone(), y.clone(), right_rows),
                    ],
                    in_arrays: vec![x, y],
                    out_array: z,
                }
            }
            OpKind::CrossLike { rows: n, trailing } => {
                let x = meta(in_ids[0], &[*n, *trailing]);
                let z = meta(out_id, &[*n]);
                let mut rows = Vec::new();
                match trailing {
                    2 => {
                        for i in 1..=*n as i64 {
                            rows.push(LineageRow::new(vec![i], vec![i, 1]));
                            rows.push(LineageRow::new(vec![i], vec![i, 2]));
                        }
                    }
                    3 => {
                        for i in 1..=*n as i64 {
                            rows.push(LineageRow::new(vec![i], vec![i, 1]));
                            rows.push(LineageRow::new(vec![i], vec![i, 3]));
                        }
                    }
                    t => {
                        return Err(SynthError::InvalidParam(format!(
                            "cross_like trailing extent must be 2 or 3, got {t}"
                        )))
                    }
                }
                GeneratedOp {
                    op_name: self.op_name(),
                    op_args: self.op_args(),
                    relations: vec![LineageRelation::with_rows(z.clone(), x.clone(), rows)],
                    in_arrays: vec![x],
                    out_array: z,
                }
            }
        };
        Ok(op)
    }
}

/// Reference query answer over raw relations: per hop, scan every row
/// and follow the matching side with hash lookups. Kept deliberately
/// separate from the in-situ query machinery.
pub fn brute_force_query(
    chain: &[(&LineageRelation, Direction)],
    cells: &[Vec<i64>],
) -> Result<BTreeSet<Vec<i64>>, SynthError> {
    let mut frontier: BTreeSet<Vec<i64>> = cells.iter().cloned().collect();
    for (step, (rel, direction)) in chain.iter().enumerate() {
        if step > 0 && frontier.is_empty() {
            return Ok(frontier);
        }
        let mut next = BTreeSet::new();
        for row in &rel.rows {
            match direction {
                Direction::Backward => {
                    if frontier.contains(&row.out_idx) {
                        next.insert(row.in_idx.clone());
                    }
                }
                Direction::Forward => {
                    if frontier.contains(&row.in_idx) {
                        next.insert(row.out_idx.clone());
                    }
                }
            }
        }
        frontier = next;
    }
    Ok(frontier)
}

/// A chained sequence of single-spine operations `A0 -> A1 -> ... -> An`.
/// Side inputs of binary operations are excluded from the spine.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub arrays: Vec<ArrayMeta>,
    pub kinds: Vec<OpKind>,
    pub relations: Vec<LineageRelation>,
}

impl Pipeline {
    /// Compressed tables for every spine edge, both directions.
    pub fn store(&self) -> InMemoryStore {
        let mut store = InMemoryStore::new();
        for meta in &self.arrays {
            store.add_array(meta.clone());
        }
        for rel in &self.relations {
            store.add_table(compress(rel, Direction::Backward));
            store.add_table(compress(rel, Direction::Forward));
        }
        store
    }

    /// Hop list for the brute-force reference, forward or backward.
    pub fn chain(&self, forward: bool) -> Vec<(&LineageRelation, Direction)> {
        if forward {
            self.relations
                .iter()
                .map(|r| (r, Direction::Forward))
                .collect()
        } else {
            self.relations
                .iter()
                .rev()
                .map(|r| (r, Direction::Backward))
                .collect()
        }
    }

    /// Array id path for queries, forward or backward.
    pub fn path(&self, forward: bool) -> Vec<String> {
        let ids: Vec<String> = self.arrays.iter().map(|a| a.id.clone()).collect();
        if forward {
            ids
        } else {
            ids.into_iter().rev().collect()
        }
    }

    pub fn raw_bytes(&self) -> u64 {
        self.relations
            .iter()
            .map(|r| r.len() as u64 * (r.out_dim() + r.in_dim()) as u64 * 8)
            .sum()
    }
}

/// Random single-input pipeline whose array sizes stay under `max_cells`.
pub fn random_pipeline(
    prefix: &str,
    len: usize,
    start_shape: Vec<u64>,
    seed: u64,
    max_cells: u64,
) -> Result<Pipeline, SynthError> {
    if len == 0 {
        return Err(SynthError::EmptyPipeline);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arrays = vec![ArrayMeta {
        id: format!("{prefix}0"),
        shape: start_shape,
    }];
    let mut kinds = Vec::new();
    let mut relations = Vec::new();
    for step in 0..len {
        let shape = arrays[step].shape.clone();
        let cells: u64 = shape.iter().product();
        let mut candidates: Vec<OpKind> = vec![OpKind::Negation { shape: shape.clone() }];
        if shape.len() >= 2 {
            candidates.push(OpKind::Aggregate {
                shape: shape.clone(),
                axis: rng.gen_range(0..shape.len()),
            });
        }
        if shape.len() == 2 && shape.iter().all(|&d| d >= 3) {
            candidates.push(OpKind::Window {
                shape: shape.clone(),
                radius: 1,
            });
        }
        if cells * 2 <= max_cells {
            let mut reps = vec![1u64; shape.len()];
            reps[rng.gen_range(0..shape.len())] = 2;
            candidates.push(OpKind::Tile {
                shape: shape.clone(),
                reps,
            });
        }
        if shape.len() == 1 {
            let n = shape[0];
            candidates.push(OpKind::Sort { n, seed: rng.gen() });
            if n >= 8 {
                candidates.push(OpKind::ValueFilter { n, seed: rng.gen() });
                candidates.push(OpKind::GroupBy {
                    n,
                    seed: rng.gen(),
                    key_domain: 16,
                });
            }
        }
        if shape.len() == 2 && (shape[1] == 2 || shape[1] == 3) {
            candidates.push(OpKind::CrossLike {
                rows: shape[0],
                trailing: shape[1],
            });
        }
        let kind = candidates[rng.gen_range(0..candidates.len())].clone();
        let gen = OpGenerator::new(kind.clone());
        let in_id = arrays[step].id.clone();
        let out_id = format!("{prefix}{}", step + 1);
        let op = gen.generate(&[in_id.as_str()], &out_id)?;
        debug_assert_eq!(op.in_arrays[0].shape, arrays[step].shape);
        arrays.push(op.out_array.clone());
        kinds.push(kind);
        relations.push(op.relations.into_iter().next().expect("single input"));
    }
    Ok(Pipeline {
        arrays,
        kinds,
        relations,
    })
}

/// Shape-preserving pipeline of alternating element-wise and window
/// operations, the structured case used for latency comparisons.
pub fn structured_pipeline(
    prefix: &str,
    len: usize,
    shape: Vec<u64>,
    radius: u64,
) -> Result<Pipeline, SynthError> {
    if len == 0 {
        return Err(SynthError::EmptyPipeline);
    }
    if shape.len() != 2 {
        return Err(SynthError::InvalidParam(
            "structured pipeline requires a 2-d shape".into(),
        ));
    }
    let mut arrays = vec![ArrayMeta {
        id: format!("{prefix}0"),
        shape: shape.clone(),
    }];
    let mut kinds = Vec::new();
    let mut relations = Vec::new();
    for step in 0..len {
        let kind = if step % 2 == 0 {
            OpKind::Negation { shape: shape.clone() }
        } else {
            OpKind::Window {
                shape: shape.clone(),
                radius,
            }
        };
        let gen = OpGenerator::new(kind.clone());
        let in_id = arrays[step].id.clone();
        let out_id = format!("{prefix}{}", step + 1);
        let op = gen.generate(&[in_id.as_str()], &out_id)?;
        arrays.push(op.out_array.clone());
        kinds.push(kind);
        relations.push(op.relations.into_iter().next().expect("single input"));
    }
    Ok(Pipeline {
        arrays,
        kinds,
        relations,
    })
}

/// A contiguous block query covering roughly `frac` of the array's cells
/// (restricting the first axis, spanning the rest).
pub fn block_query(shape: &[u64], frac: f64, rng: &mut impl Rng) -> Vec<Vec<IndexRange>> {
    let d0 = shape[0];
    let len = ((d0 as f64 * frac).round() as u64).clamp(1, d0);
    let start = rng.gen_range(1..=(d0 - len + 1)) as i64;
    let mut row = vec![IndexRange::new(start, start + len as i64 - 1)];
    for &d in &shape[1..] {
        row.push(IndexRange::new(1, d as i64));
    }
    vec![row]
}

/// Benchmark specification, loadable from JSON or TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchSpec {
    pub start_shape: Vec<u64>,
    /// Pipeline length (chained operations).
    pub length: usize,
    #[serde(default)]
    pub seed: u64,
    /// Structured (element-wise/window) or random pipeline.
    #[serde(default)]
    pub structured: bool,
    /// Query size as a percentage of the initial array's cells.
    #[serde(default = "default_selectivity")]
    pub selectivity_pct: f64,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Disable intermediate merging (the no-merge baseline).
    #[serde(default)]
    pub no_merge: bool,
    /// Query direction along the pipeline.
    #[serde(default = "default_forward")]
    pub forward: bool,
    /// Cell budget for random pipeline growth.
    #[serde(default = "default_max_cells")]
    pub max_cells: u64,
}

fn default_selectivity() -> f64 {
    5.0
}
fn default_repetitions() -> usize {
    5
}
fn default_timeout() -> u64 {
    600
}
fn default_forward() -> bool {
    true
}
fn default_max_cells() -> u64 {
    200_000
}

#[derive(Debug, Clone, Serialize)]
pub struct LatencySummary {
    pub median_us: u64,
    pub min_us: u64,
    pub max_us: u64,
}

fn summarize(mut samples: Vec<Duration>) -> LatencySummary {
    samples.sort_unstable();
    let us = |d: Duration| d.as_micros() as u64;
    LatencySummary {
        median_us: us(samples[samples.len() / 2]),
        min_us: us(samples[0]),
        max_us: us(*samples.last().expect("non-empty")),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub pipeline: Vec<String>,
    pub hops: usize,
    pub query_cells: usize,
    pub result_cells: usize,
    pub results_match: bool,
    pub in_situ: LatencySummary,
    pub brute_force: LatencySummary,
    pub speedup_median: f64,
    pub per_hop_frontier_rows: Vec<usize>,
    pub raw_bytes: u64,
    pub stored_bytes: u64,
    pub storage_ratio_pct: f64,
}

impl BenchReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("pipeline: {}\n", self.pipeline.join(" -> ")));
        out.push_str(&format!(
            "query cells: {}   result cells: {}   answers match: {}\n",
            self.query_cells, self.result_cells, self.results_match
        ));
        out.push_str(&format!(
            "{:<14} {:>12} {:>12} {:>12}\n",
            "system", "median us", "min us", "max us"
        ));
        out.push_str(&format!(
            "{:<14} {:>12} {:>12} {:>12}\n",
            "in-situ", self.in_situ.median_us, self.in_situ.min_us, self.in_situ.max_us
        ));
        out.push_str(&format!(
            "{:<14} {:>12} {:>12} {:>12}\n",
            "brute-force",
            self.brute_force.median_us,
            self.brute_force.min_us,
            self.brute_force.max_us
        ));
        out.push_str(&format!("speedup (median): {:.1}x\n", self.speedup_median));
        out.push_str(&format!(
            "frontier rows per hop: {:?}\n",
            self.per_hop_frontier_rows
        ));
        out.push_str(&format!(
            "storage: raw {} B, stored {} B, ratio {:.4}%\n",
            self.raw_bytes, self.stored_bytes, self.storage_ratio_pct
        ));
        out
    }
}

/// Run one pipeline/query comparison between the in-situ engine and the
/// brute-force reference.
pub fn bench(spec: &BenchSpec) -> Result<BenchReport, SynthError> {
    let budget = Duration::from_secs(spec.timeout_secs);
    let started = Instant::now();
    let pipeline = if spec.structured {
        structured_pipeline("bench_a", spec.length, spec.start_shape.clone(), 1)?
    } else {
        random_pipeline(
            "bench_a",
            spec.length,
            spec.start_shape.clone(),
            spec.seed,
            spec.max_cells,
        )?
    };
    let store = pipeline.store();
    let stored_bytes: u64 = pipeline
        .relations
        .iter()
        .map(|r| prc1::encode(&compress(r, Direction::Backward), prc1::Codec::Plain).len() as u64)
        .sum();
    let raw_bytes = pipeline.raw_bytes();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x51ab);
    let query_shape = if spec.forward {
        &pipeline.arrays[0].shape
    } else {
        &pipeline.arrays[pipeline.arrays.len() - 1].shape
    };
    let ranges = block_query(query_shape, spec.selectivity_pct / 100.0, &mut rng);
    let cells: Vec<Vec<i64>> = query::cell_set_of_rows(&ranges).into_iter().collect();

    let spec_query = QuerySpec {
        path: pipeline.path(spec.forward),
        cells: QueryCells::Ranges(ranges),
    };
    let config = QueryConfig {
        merge: !spec.no_merge,
        ..QueryConfig::default()
    };

    let mut in_situ_samples = Vec::new();
    let mut brute_samples = Vec::new();
    let mut result_cells = 0;
    let mut per_hop = Vec::new();
    let mut results_match = true;
    for _ in 0..spec.repetitions.max(1) {
        if started.elapsed() > budget {
            return Err(SynthError::Timeout(budget));
        }
        let t = Instant::now();
        let (result, stats) = query::prov_query(&store, &spec_query, &config)?;
        in_situ_samples.push(t.elapsed());
        let in_situ_cells = result.cell_set();

        let t = Instant::now();
        let brute = brute_force_query(&pipeline.chain(spec.forward), &cells)?;
        brute_samples.push(t.elapsed());

        results_match &= in_situ_cells == brute;
        result_cells = brute.len();
        per_hop = stats.hops.iter().map(|h| h.frontier_rows).collect();
    }

    let in_situ = summarize(in_situ_samples);
    let brute_force = summarize(brute_samples);
    let speedup = brute_force.median_us as f64 / in_situ.median_us.max(1) as f64;
    Ok(BenchReport {
        pipeline: pipeline
            .kinds
            .iter()
            .map(|k| OpGenerator::new(k.clone()).op_name().to_string())
            .collect(),
        hops: pipeline.relations.len(),
        query_cells: cells.len(),
        result_cells,
        results_match,
        in_situ,
        brute_force,
        speedup_median: speedup,
        per_hop_frontier_rows: per_hop,
        raw_bytes,
        stored_bytes,
        storage_ratio_pct: if raw_bytes == 0 {
            0.0
        } else {
            stored_bytes as f64 / raw_bytes as f64 * 100.0
        },
    })
}

#[cfg(test)]
mod synth_tests;
