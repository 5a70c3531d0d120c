//! Interval compression of lineage relations.
//!
//! The algorithm runs in two steps. Step 1 range-encodes the free-side
//! attributes: maximal runs of rows that agree on every other attribute
//! and are contiguous on the target attribute collapse into one row whose
//! target cell is an interval. Step 2 rewrites each free attribute as an
//! offset against each anchor attribute (`free - anchor`) and then
//! range-encodes the anchor attributes, keeping per free attribute only
//! the columns that stayed constant across each merged run.
//!
//! In the backward representation the anchor side is the output array
//! (absolute columns), and input attributes may be stored relative to
//! outputs. The forward representation mirrors the roles. Both are
//! lossless: the union of each row's Cartesian denotation reproduces the
//! original relation exactly.

mod encode;
mod generalize;

pub use encode::{merge_range_rows, range_encode_tuples};
pub use generalize::{generalize, instantiate, GeneralizedTable, OutExtent, SymBound, SymRange};

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lineage::{ArrayMeta, IndexRange, LineageRelation, LineageRow};

/// Which side of the relation carries absolute anchor columns.
///
/// Backward tables anchor on output attributes (queries proceed output to
/// input); forward tables anchor on input attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Backward,
    Forward,
}

impl Direction {
    pub fn flip(self) -> Direction {
        match self {
            Direction::Backward => Direction::Forward,
            Direction::Forward => Direction::Backward,
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Direction::Backward => write!(f, "backward"),
            Direction::Forward => write!(f, "forward"),
        }
    }
}

/// One compressed row.
///
/// `anchor[j]` is always a populated absolute interval. Each free
/// attribute `i` carries an optional absolute interval `free_abs[i]` and
/// optional offset intervals `free_rel[i][j]` against anchor attribute
/// `j`, storing `free - anchor`. A finalized row populates exactly one
/// column per free attribute; every populated column of a free attribute
/// denotes the same cell set, so any may be read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressedRow {
    pub anchor: Vec<IndexRange>,
    pub free_abs: Vec<Option<IndexRange>>,
    pub free_rel: Vec<Vec<Option<IndexRange>>>,
}

impl CompressedRow {
    fn all_absolute(anchor: Vec<IndexRange>, free_abs: Vec<IndexRange>, anchors: usize) -> Self {
        let free_rel = vec![vec![None; anchors]; free_abs.len()];
        Self {
            anchor,
            free_abs: free_abs.into_iter().map(Some).collect(),
            free_rel,
        }
    }

    /// Cells denoted by this row alone.
    pub fn denotation_size(&self) -> u64 {
        let a: u64 = self.anchor.iter().map(IndexRange::width).product();
        let f: u64 = self
            .free_abs
            .iter()
            .zip(&self.free_rel)
            .map(|(abs, rels)| {
                abs.map(|r| r.width())
                    .or_else(|| rels.iter().flatten().next().map(|r| r.width()))
                    .unwrap_or(0)
            })
            .product();
        a * f
    }
}

/// A compressed lineage table for one operation edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressedTable {
    pub direction: Direction,
    pub op: String,
    pub out_array: String,
    pub in_array: String,
    pub out_shape: Vec<u64>,
    pub in_shape: Vec<u64>,
    pub rows: Vec<CompressedRow>,
}

impl CompressedTable {
    /// Output attribute count (`l`).
    pub fn out_dim(&self) -> usize {
        self.out_shape.len()
    }

    /// Input attribute count (`m`).
    pub fn in_dim(&self) -> usize {
        self.in_shape.len()
    }

    pub fn anchor_dim(&self) -> usize {
        match self.direction {
            Direction::Backward => self.out_dim(),
            Direction::Forward => self.in_dim(),
        }
    }

    pub fn free_dim(&self) -> usize {
        match self.direction {
            Direction::Backward => self.in_dim(),
            Direction::Forward => self.out_dim(),
        }
    }

    /// Shape of the anchor-side array.
    pub fn anchor_shape(&self) -> &[u64] {
        match self.direction {
            Direction::Backward => &self.out_shape,
            Direction::Forward => &self.in_shape,
        }
    }

    /// Shape of the free-side array.
    pub fn free_shape(&self) -> &[u64] {
        match self.direction {
            Direction::Backward => &self.in_shape,
            Direction::Forward => &self.out_shape,
        }
    }

    /// Array id on the anchor (queried) side.
    pub fn anchor_array(&self) -> &str {
        match self.direction {
            Direction::Backward => &self.out_array,
            Direction::Forward => &self.in_array,
        }
    }

    /// Array id on the free (result) side.
    pub fn free_array(&self) -> &str {
        match self.direction {
            Direction::Backward => &self.in_array,
            Direction::Forward => &self.out_array,
        }
    }

    /// Exact number of raw lineage rows this table denotes.
    ///
    /// Rows denote pairwise disjoint cell sets, so the sum is exact and
    /// no expansion is needed.
    pub fn denotation_size(&self) -> u64 {
        self.rows.iter().map(CompressedRow::denotation_size).sum()
    }

    /// Column name for a free attribute's offset column against anchor
    /// attribute `j`, matching the stored-schema naming.
    pub fn rel_col_name(&self, free_i: usize, anchor_j: usize) -> String {
        match self.direction {
            Direction::Backward => format!("a{}b{}", free_i + 1, anchor_j + 1),
            Direction::Forward => format!("b{}a{}", free_i + 1, anchor_j + 1),
        }
    }

    /// Walk every denoted (output cell, input cell) pair in place. Used
    /// for offline size accounting; query execution never calls this.
    pub fn visit_denotation(&self, mut f: impl FnMut(&[i64], &[i64])) {
        for row in &self.rows {
            if row
                .free_abs
                .iter()
                .zip(&row.free_rel)
                .any(|(abs, rels)| abs.is_none() && rels.iter().all(Option::is_none))
            {
                continue;
            }
            let mut anchor_tuple: Vec<i64> = row.anchor.iter().map(|r| r.lo).collect();
            loop {
                let free_ranges: Vec<IndexRange> = row
                    .free_abs
                    .iter()
                    .zip(&row.free_rel)
                    .map(|(abs, rels)| {
                        abs.or_else(|| {
                            rels.iter().enumerate().find_map(|(j, rel)| {
                                rel.map(|d| {
                                    IndexRange::new(anchor_tuple[j] + d.lo, anchor_tuple[j] + d.hi)
                                })
                            })
                        })
                        .expect("checked above")
                    })
                    .collect();
                let mut free_tuple: Vec<i64> = free_ranges.iter().map(|r| r.lo).collect();
                loop {
                    match self.direction {
                        Direction::Backward => f(&anchor_tuple, &free_tuple),
                        Direction::Forward => f(&free_tuple, &anchor_tuple),
                    }
                    if !advance(&mut free_tuple, &free_ranges) {
                        break;
                    }
                }
                if !advance(&mut anchor_tuple, &row.anchor) {
                    break;
                }
            }
        }
    }

    /// Canonical JSON rendering: one object per row, keys in lexicographic
    /// order, `null` for empty cells, `[lo, hi]` for intervals.
    pub fn to_canonical_json(&self) -> String {
        let (anchor_prefix, free_prefix) = match self.direction {
            Direction::Backward => ("b", "a"),
            Direction::Forward => ("a", "b"),
        };
        let mut rows = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            let mut obj = serde_json::Map::new();
            for (j, r) in row.anchor.iter().enumerate() {
                obj.insert(
                    format!("{anchor_prefix}{}", j + 1),
                    serde_json::json!([r.lo, r.hi]),
                );
            }
            for (i, abs) in row.free_abs.iter().enumerate() {
                let key = format!("{free_prefix}{}", i + 1);
                obj.insert(key, abs.map_or(serde_json::Value::Null, |r| serde_json::json!([r.lo, r.hi])));
                for (j, rel) in row.free_rel[i].iter().enumerate() {
                    obj.insert(
                        self.rel_col_name(i, j),
                        rel.map_or(serde_json::Value::Null, |r| serde_json::json!([r.lo, r.hi])),
                    );
                }
            }
            rows.push(serde_json::Value::Object(obj));
        }
        let doc = serde_json::json!({
            "direction": self.direction,
            "op": self.op,
            "out_array": self.out_array,
            "in_array": self.in_array,
            "out_shape": self.out_shape,
            "in_shape": self.in_shape,
            "rows": rows,
        });
        serde_json::to_string_pretty(&doc).expect("table is always serializable")
    }
}

#[derive(Debug, Error)]
pub enum ProvrcError {
    #[error("input values not sorted ascending at position {pos}")]
    Unsorted { pos: usize },
    #[error("row {row}: free attribute {attr} has no populated column")]
    MalformedRow { row: usize, attr: usize },
    #[error("shape has {got} axes, table was generalized over {expected}")]
    ShapeDimMismatch { got: usize, expected: usize },
}

static DECOMPRESS_CALLS: AtomicU64 = AtomicU64::new(0);

/// Number of `decompress` invocations since process start. Query
/// execution must leave this unchanged.
pub fn decompress_calls() -> u64 {
    DECOMPRESS_CALLS.load(Ordering::Relaxed)
}

/// Encode a sorted integer set as the minimal list of maximal disjoint
/// inclusive ranges. Repeated values are collapsed; descending input is
/// rejected.
pub fn range_encode_column(values: &[i64]) -> Result<Vec<IndexRange>, ProvrcError> {
    let mut out: Vec<IndexRange> = Vec::new();
    for (pos, &v) in values.iter().enumerate() {
        match out.last_mut() {
            Some(last) if v < last.hi => return Err(ProvrcError::Unsorted { pos }),
            Some(last) if v == last.hi => {}
            Some(last) if v == last.hi + 1 => last.hi = v,
            _ => out.push(IndexRange::point(v)),
        }
    }
    Ok(out)
}

/// Step 1 of compression for the backward representation: sort the
/// relation and range-encode the input attributes (last axis first). All
/// cells in the result are absolute intervals.
pub fn encode_input_ranges(rel: &LineageRelation) -> CompressedTable {
    encode::step1(rel, Direction::Backward)
}

/// Step 2 of compression for the backward representation: add offset
/// columns for every (input, output) attribute pair, range-encode the
/// output attributes (last axis first), and keep one column per input
/// attribute in each row.
pub fn relativize_and_encode_outputs(table: CompressedTable) -> CompressedTable {
    encode::step2(table)
}

/// Full compression of a lineage relation in the given direction.
pub fn compress(rel: &LineageRelation, direction: Direction) -> CompressedTable {
    let table = encode::step1(rel, direction);
    let out = encode::step2(table);
    debug_assert!(out.rows.len() <= rel.len().max(1));
    out
}

/// Expand a compressed table back into the exact raw relation it denotes.
pub fn decompress(table: &CompressedTable) -> Result<LineageRelation, ProvrcError> {
    DECOMPRESS_CALLS.fetch_add(1, Ordering::Relaxed);
    let mut set: BTreeSet<LineageRow> = BTreeSet::new();
    for (row_idx, row) in table.rows.iter().enumerate() {
        expand_row(table, row_idx, row, &mut set)?;
    }
    let out_array = ArrayMeta {
        id: table.out_array.clone(),
        shape: table.out_shape.clone(),
    };
    let in_array = ArrayMeta {
        id: table.in_array.clone(),
        shape: table.in_shape.clone(),
    };
    Ok(LineageRelation::with_rows(out_array, in_array, set))
}

fn expand_row(
    table: &CompressedTable,
    row_idx: usize,
    row: &CompressedRow,
    set: &mut BTreeSet<LineageRow>,
) -> Result<(), ProvrcError> {
    // Resolve each free attribute to a concrete interval for one anchor
    // tuple: absolute columns are independent of the anchor, offset
    // columns shift with their paired anchor attribute.
    for attr in 0..row.free_abs.len() {
        if row.free_abs[attr].is_none() && row.free_rel[attr].iter().all(Option::is_none) {
            return Err(ProvrcError::MalformedRow { row: row_idx, attr });
        }
    }
    let mut anchor_tuple: Vec<i64> = row.anchor.iter().map(|r| r.lo).collect();
    loop {
        let free_ranges: Vec<IndexRange> = row
            .free_abs
            .iter()
            .zip(&row.free_rel)
            .map(|(abs, rels)| {
                let resolved = abs.or_else(|| {
                    rels.iter()
                        .enumerate()
                        .find_map(|(j, rel)| rel.map(|d| IndexRange::new(anchor_tuple[j] + d.lo, anchor_tuple[j] + d.hi)))
                });
                let r = resolved.expect("checked above");
                #[cfg(debug_assertions)]
                {
                    // Populated columns of one attribute are redundant:
                    // they must agree for every anchor tuple.
                    if let Some(a) = abs {
                        for (j, rel) in rels.iter().enumerate() {
                            if let Some(d) = rel {
                                debug_assert_eq!(
                                    (a.lo, a.hi),
                                    (anchor_tuple[j] + d.lo, anchor_tuple[j] + d.hi)
                                );
                            }
                        }
                    }
                }
                r
            })
            .collect();
        let mut free_tuple: Vec<i64> = free_ranges.iter().map(|r| r.lo).collect();
        loop {
            let lineage_row = match table.direction {
                Direction::Backward => LineageRow::new(anchor_tuple.clone(), free_tuple.clone()),
                Direction::Forward => LineageRow::new(free_tuple.clone(), anchor_tuple.clone()),
            };
            set.insert(lineage_row);
            if !advance(&mut free_tuple, &free_ranges) {
                break;
            }
        }
        if !advance_anchor(&mut anchor_tuple, &row.anchor) {
            break;
        }
    }
    Ok(())
}

fn advance(tuple: &mut [i64], ranges: &[IndexRange]) -> bool {
    for (v, r) in tuple.iter_mut().zip(ranges).rev() {
        if *v < r.hi {
            *v += 1;
            return true;
        }
        *v = r.lo;
    }
    false
}

fn advance_anchor(tuple: &mut [i64], ranges: &[IndexRange]) -> bool {
    advance(tuple, ranges)
}

#[cfg(test)]
mod tests;
