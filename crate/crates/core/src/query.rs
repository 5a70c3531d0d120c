//! In-situ lineage queries over compressed tables.
//!
//! A query walks a path of arrays. Each hop is a θ-join against the
//! stored table whose anchor side matches the current frontier: a range
//! join intersects the frontier intervals with the table's anchor
//! intervals, then surviving offset columns are converted back to
//! absolute intervals. The frontier is projected onto the next array and
//! merged before the following hop. Tables are never decompressed.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lineage::{ArrayMeta, IndexRange};
use crate::provrc::{self, CompressedTable, Direction};

/// Source of hop tables for query execution.
///
/// `hop` returns a table whose anchor (absolute) side is the `from`
/// array and whose free side is the `to` array, i.e. a backward table
/// when traversing from an operation's output to its input, and a
/// forward table otherwise.
pub trait LineageStore {
    fn array(&self, id: &str) -> Option<ArrayMeta>;
    fn hop(&self, from: &str, to: &str) -> Result<CompressedTable, QueryError>;
}

/// How the caller constrains hop directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DirectionMode {
    #[default]
    Auto,
    Forward,
    Backward,
}

/// A lineage query: cells of the first array on `path`, resolved to the
/// related cells of the last array.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub path: Vec<String>,
    pub cells: QueryCells,
}

/// Query cells in user form (explicit tuples) or already range-encoded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryCells {
    Tuples(Vec<Vec<i64>>),
    Ranges(Vec<Vec<IndexRange>>),
}

/// Execution knobs.
#[derive(Debug, Clone)]
pub struct QueryConfig {
    pub direction: DirectionMode,
    /// Merge intermediate rows between hops. Disabling this reproduces
    /// the no-merge baseline used in benchmarks.
    pub merge: bool,
    /// Abort when an intermediate frontier exceeds this many rows.
    pub row_cap: usize,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            direction: DirectionMode::Auto,
            merge: true,
            row_cap: 1_000_000,
        }
    }
}

/// Canonical result: interval rows over the terminal array, disjoint,
/// sorted and maximal per shared prefix. Single-hop queries also retain
/// the queried intervals alongside the resolved ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultTable {
    pub array: String,
    pub rows: Vec<Vec<IndexRange>>,
    pub paired: Option<Vec<PairedRow>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedRow {
    pub query: Vec<IndexRange>,
    pub target: Vec<IndexRange>,
}

impl ResultTable {
    /// Expand the result rows into the exact cell set they denote.
    pub fn cell_set(&self) -> BTreeSet<Vec<i64>> {
        cell_set_of_rows(&self.rows)
    }
}

/// Expand interval rows into the cell tuples they denote.
pub fn cell_set_of_rows(rows: &[Vec<IndexRange>]) -> BTreeSet<Vec<i64>> {
    let mut out = BTreeSet::new();
    for row in rows {
        let mut tuple: Vec<i64> = row.iter().map(|r| r.lo).collect();
        loop {
            out.insert(tuple.clone());
            let mut done = true;
            for (v, r) in tuple.iter_mut().zip(row).rev() {
                if *v < r.hi {
                    *v += 1;
                    done = false;
                    break;
                }
                *v = r.lo;
            }
            if done {
                break;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct QueryStats {
    pub hops: Vec<HopStats>,
    pub decompress_delta: u64,
    pub wall: Duration,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct HopStats {
    pub from: String,
    pub to: String,
    pub table_rows: usize,
    pub rows_scanned: usize,
    pub rows_joined: usize,
    pub frontier_rows: usize,
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("path must name at least two arrays")]
    PathTooShort,
    #[error("query cell set is empty")]
    EmptyQuery,
    #[error("unknown array {0}")]
    UnknownArray(String),
    #[error("cell {cell:?} outside shape {shape:?}")]
    OutOfBounds { cell: Vec<i64>, shape: Vec<u64> },
    #[error("missing edge between {from} and {to}")]
    MissingEdge { from: String, to: String },
    #[error("multiple edges connect {from} and {to}; disambiguate by path")]
    AmbiguousEdge { from: String, to: String },
    #[error("no {want} table stored for hop {from} -> {to}")]
    DirectionUnavailable {
        from: String,
        to: String,
        want: Direction,
    },
    #[error("query schema has {got} attributes, expected {expected}")]
    AttrMismatch { got: usize, expected: usize },
    #[error("intermediate result exceeded row cap {cap}")]
    RowCapExceeded { cap: usize },
    #[error("storage: {0}")]
    Storage(String),
}

/// Range-encode a set of query cells over the given shape.
pub fn encode_query(
    cells: &[Vec<i64>],
    shape: &[u64],
) -> Result<Vec<Vec<IndexRange>>, QueryError> {
    for cell in cells {
        let ok = cell.len() == shape.len()
            && cell.iter().zip(shape).all(|(&v, &d)| v >= 1 && v <= d as i64);
        if !ok {
            return Err(QueryError::OutOfBounds {
                cell: cell.clone(),
                shape: shape.to_vec(),
            });
        }
    }
    Ok(provrc::range_encode_tuples(cells.to_vec(), shape.len()))
}

/// One output row of the range join: the intersected anchor intervals,
/// the table row's free columns, and a handle to that row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinedRow {
    pub anchor: Vec<IndexRange>,
    pub free_abs: Vec<Option<IndexRange>>,
    pub free_rel: Vec<Vec<Option<IndexRange>>>,
    pub src_row: usize,
}

/// Join query rows against a table on its anchor attributes: every pair
/// overlapping on all attributes yields the joint intersection, with the
/// table row's remaining columns carried through. Returns the joined
/// rows and the number of table rows examined.
pub fn range_join(
    query: &[Vec<IndexRange>],
    table: &CompressedTable,
) -> Result<(Vec<JoinedRow>, usize), QueryError> {
    let anchors = table.anchor_dim();
    if let Some(bad) = query.iter().find(|q| q.len() != anchors) {
        return Err(QueryError::AttrMismatch {
            got: bad.len(),
            expected: anchors,
        });
    }
    let mut q_sorted: Vec<&Vec<IndexRange>> = query.iter().collect();
    q_sorted.sort_unstable_by_key(|q| q[0].lo);
    let mut r_sorted: Vec<(usize, &crate::provrc::CompressedRow)> =
        table.rows.iter().enumerate().collect();
    r_sorted.sort_unstable_by_key(|(_, r)| r.anchor[0].lo);

    let mut out = Vec::new();
    let mut scanned = 0usize;
    for q in q_sorted {
        for &(idx, row) in &r_sorted {
            if row.anchor[0].lo > q[0].hi {
                break;
            }
            scanned += 1;
            let inter: Option<Vec<IndexRange>> = q
                .iter()
                .zip(&row.anchor)
                .map(|(a, b)| a.intersect(b))
                .collect();
            if let Some(anchor) = inter {
                out.push(JoinedRow {
                    anchor,
                    free_abs: row.free_abs.clone(),
                    free_rel: row.free_rel.clone(),
                    src_row: idx,
                });
            }
        }
    }
    Ok((out, scanned))
}

/// Absolute interval of the free attribute tied to an intersected anchor
/// interval in a backward table: shift both bounds by the stored offsets.
pub fn rel_back(t_x: IndexRange, t_xy: IndexRange) -> IndexRange {
    t_x.shift(&t_xy)
}

/// The forward-table counterpart. `r_x` is the anchor interval of the
/// source table row; the intersected interval `t_x` always lies inside
/// it, and the offset arithmetic matches the backward case because
/// offsets are stored as free-side minus anchor-side in both directions.
pub fn rel_for(t_x: IndexRange, r_x: IndexRange, t_xy: IndexRange) -> IndexRange {
    debug_assert!(r_x.contains_range(&t_x));
    t_x.shift(&t_xy)
}

/// Convert every surviving offset column into an absolute interval,
/// leaving rows with only absolute attributes on both sides.
pub fn derelativize(
    rows: Vec<JoinedRow>,
    table: &CompressedTable,
) -> Result<Vec<(Vec<IndexRange>, Vec<IndexRange>)>, QueryError> {
    let free_shape = table.free_shape();
    rows.into_iter()
        .map(|row| {
            let mut free = Vec::with_capacity(row.free_abs.len());
            for (i, abs) in row.free_abs.iter().enumerate() {
                let resolved = match abs {
                    Some(r) => *r,
                    None => {
                        let (j, rel) = row.free_rel[i]
                            .iter()
                            .enumerate()
                            .find_map(|(j, rel)| rel.map(|r| (j, r)))
                            .ok_or_else(|| {
                                QueryError::Storage(format!(
                                    "row {} attribute {} has no populated column",
                                    row.src_row, i
                                ))
                            })?;
                        match table.direction {
                            Direction::Backward => rel_back(row.anchor[j], rel),
                            Direction::Forward => {
                                rel_for(row.anchor[j], table.rows[row.src_row].anchor[j], rel)
                            }
                        }
                    }
                };
                // Safety net only: valid tables never need the clip.
                let extent = IndexRange::new(1, free_shape[i] as i64);
                let clipped = resolved.intersect(&extent).ok_or_else(|| {
                    QueryError::Storage(format!(
                        "row {} attribute {} resolved outside its axis",
                        row.src_row, i
                    ))
                })?;
                debug_assert_eq!(clipped, resolved, "clip must be a no-op on valid tables");
                free.push(clipped);
            }
            Ok((row.anchor, free))
        })
        .collect()
}

/// Keep only `keep_attrs`, merge rows identical on all but one attribute
/// with adjacent or overlapping intervals on it, and drop rows contained
/// in another row. The denoted cell set is unchanged.
pub fn project_and_merge(rows: Vec<Vec<IndexRange>>, keep_attrs: &[usize]) -> Vec<Vec<IndexRange>> {
    let projected: Vec<Vec<IndexRange>> = rows
        .into_iter()
        .map(|row| keep_attrs.iter().map(|&a| row[a]).collect())
        .collect();
    let merged = provrc::merge_range_rows(projected, keep_attrs.len());
    drop_contained(merged)
}

fn drop_contained(rows: Vec<Vec<IndexRange>>) -> Vec<Vec<IndexRange>> {
    let mut keep = vec![true; rows.len()];
    for i in 0..rows.len() {
        if !keep[i] {
            continue;
        }
        for j in 0..rows.len() {
            if i == j || !keep[j] || rows[i] == rows[j] {
                continue;
            }
            if rows[i]
                .iter()
                .zip(&rows[j])
                .all(|(a, b)| b.contains_range(a))
            {
                keep[i] = false;
                break;
            }
        }
    }
    rows.into_iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then_some(r))
        .collect()
}

/// Exact canonical form: per shared prefix, intervals are disjoint,
/// sorted and maximal. Attribute 0 is fragmented at every interval
/// boundary, suffixes are canonicalized recursively, and adjacent
/// fragments with identical suffix sets are re-joined.
pub fn canonicalize(rows: Vec<Vec<IndexRange>>) -> Vec<Vec<IndexRange>> {
    if rows.is_empty() {
        return rows;
    }
    let dims = rows[0].len();
    if dims == 1 {
        let mut intervals: Vec<IndexRange> = rows.into_iter().map(|r| r[0]).collect();
        intervals.sort_unstable_by_key(|r| (r.lo, r.hi));
        let mut out: Vec<IndexRange> = Vec::new();
        for r in intervals {
            match out.last_mut() {
                Some(last) if r.lo <= last.hi + 1 => last.hi = last.hi.max(r.hi),
                _ => out.push(r),
            }
        }
        return out.into_iter().map(|r| vec![r]).collect();
    }

    let mut bounds = BTreeSet::new();
    for row in &rows {
        bounds.insert(row[0].lo);
        bounds.insert(row[0].hi + 1);
    }
    let cuts: Vec<i64> = bounds.into_iter().collect();
    let mut fragments: std::collections::BTreeMap<IndexRange, Vec<Vec<IndexRange>>> =
        std::collections::BTreeMap::new();
    for row in rows {
        let (head, tail) = row.split_first().expect("dims >= 2");
        let start = cuts.partition_point(|&c| c <= head.lo) - 1;
        for w in cuts[start..].windows(2) {
            let frag = IndexRange::new(w[0], w[1] - 1);
            if frag.lo > head.hi {
                break;
            }
            if frag.intersect(head).is_some() {
                fragments.entry(frag).or_default().push(tail.to_vec());
            }
        }
    }
    let mut parts: Vec<(IndexRange, Vec<Vec<IndexRange>>)> = fragments
        .into_iter()
        .map(|(frag, suffixes)| (frag, canonicalize(suffixes)))
        .collect();
    let mut joined: Vec<(IndexRange, Vec<Vec<IndexRange>>)> = Vec::new();
    for (frag, suffix) in parts.drain(..) {
        match joined.last_mut() {
            Some((last, s)) if last.hi + 1 == frag.lo && *s == suffix => last.hi = frag.hi,
            _ => joined.push((frag, suffix)),
        }
    }
    joined
        .into_iter()
        .flat_map(|(frag, suffixes)| {
            suffixes.into_iter().map(move |mut s| {
                s.insert(0, frag);
                s
            })
        })
        .collect()
}

/// A process-local table store, used by tests and the benchmark harness.
#[derive(Debug, Default, Clone)]
pub struct InMemoryStore {
    arrays: std::collections::BTreeMap<String, ArrayMeta>,
    tables: Vec<CompressedTable>,
}

impl InMemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_array(&mut self, meta: ArrayMeta) {
        self.arrays.insert(meta.id.clone(), meta);
    }

    pub fn add_table(&mut self, table: CompressedTable) {
        self.tables.push(table);
    }
}

impl LineageStore for InMemoryStore {
    fn array(&self, id: &str) -> Option<ArrayMeta> {
        self.arrays.get(id).cloned()
    }

    fn hop(&self, from: &str, to: &str) -> Result<CompressedTable, QueryError> {
        let mut matches = self
            .tables
            .iter()
            .filter(|t| t.anchor_array() == from && t.free_array() == to);
        match (matches.next(), matches.next()) {
            (Some(t), None) => Ok(t.clone()),
            (Some(_), Some(_)) => Err(QueryError::AmbiguousEdge {
                from: from.into(),
                to: to.into(),
            }),
            (None, _) => Err(QueryError::MissingEdge {
                from: from.into(),
                to: to.into(),
            }),
        }
    }
}

/// Execute a lineage query along `spec.path` entirely over compressed
/// tables.
pub fn prov_query(
    store: &impl LineageStore,
    spec: &QuerySpec,
    config: &QueryConfig,
) -> Result<(ResultTable, QueryStats), QueryError> {
    let start = Instant::now();
    let decompress_before = provrc::decompress_calls();
    if spec.path.len() < 2 {
        return Err(QueryError::PathTooShort);
    }
    let first = store
        .array(&spec.path[0])
        .ok_or_else(|| QueryError::UnknownArray(spec.path[0].clone()))?;

    let mut frontier: Vec<Vec<IndexRange>> = match &spec.cells {
        QueryCells::Tuples(cells) => {
            if cells.is_empty() {
                return Err(QueryError::EmptyQuery);
            }
            encode_query(cells, &first.shape)?
        }
        QueryCells::Ranges(rows) => {
            if rows.is_empty() {
                return Err(QueryError::EmptyQuery);
            }
            for row in rows {
                if row.len() != first.shape.len() {
                    return Err(QueryError::AttrMismatch {
                        got: row.len(),
                        expected: first.shape.len(),
                    });
                }
                for (r, &d) in row.iter().zip(&first.shape) {
                    if r.lo < 1 || r.hi > d as i64 {
                        return Err(QueryError::OutOfBounds {
                            cell: vec![r.lo, r.hi],
                            shape: first.shape.clone(),
                        });
                    }
                }
            }
            rows.clone()
        }
    };

    let mut stats = QueryStats::default();
    let mut paired: Option<Vec<PairedRow>> = None;
    for hop in spec.path.windows(2) {
        let (from, to) = (&hop[0], &hop[1]);
        let table = store.hop(from, to)?;
        match (config.direction, table.direction) {
            (DirectionMode::Forward, Direction::Backward)
            | (DirectionMode::Backward, Direction::Forward) => {
                return Err(QueryError::DirectionUnavailable {
                    from: from.clone(),
                    to: to.clone(),
                    want: match config.direction {
                        DirectionMode::Forward => Direction::Forward,
                        _ => Direction::Backward,
                    },
                });
            }
            _ => {}
        }
        let (joined, scanned) = range_join(&frontier, &table)?;
        let rows_joined = joined.len();
        let absolute = derelativize(joined, &table)?;
        if spec.path.len() == 2 {
            paired = Some(
                absolute
                    .iter()
                    .map(|(q, t)| PairedRow {
                        query: q.clone(),
                        target: t.clone(),
                    })
                    .collect(),
            );
        }
        let free_dim = table.free_dim();
        let keep: Vec<usize> = (table.anchor_dim()..table.anchor_dim() + free_dim).collect();
        let full: Vec<Vec<IndexRange>> = absolute
            .into_iter()
            .map(|(mut anchor, free)| {
                anchor.extend(free);
                anchor
            })
            .collect();
        frontier = if config.merge {
            project_and_merge(full, &keep)
        } else {
            full.into_iter()
                .map(|row| keep.iter().map(|&a| row[a]).collect())
                .collect()
        };
        if frontier.len() > config.row_cap {
            return Err(QueryError::RowCapExceeded { cap: config.row_cap });
        }
        stats.hops.push(HopStats {
            from: from.clone(),
            to: to.clone(),
            table_rows: table.rows.len(),
            rows_scanned: scanned,
            rows_joined,
            frontier_rows: frontier.len(),
        });
    }

    let rows = canonicalize(frontier);
    stats.decompress_delta = provrc::decompress_calls() - decompress_before;
    debug_assert_eq!(stats.decompress_delta, 0, "queries must not decompress");
    stats.wall = start.elapsed();
    Ok((
        ResultTable {
            array: spec.path.last().expect("non-empty path").clone(),
            rows,
            paired,
        },
        stats,
    ))
}

#[cfg(test)]
mod query_tests;
