//! Relational model for raw cell-to-cell lineage.
//!
//! One operation edge `A -> B` is a relation over the axes of both arrays:
//! each row pairs one output cell index tuple with one input cell index
//! tuple that contributed to it. Indices are 1-based everywhere inside the
//! engine; zero-based sources are converted at ingest.

use std::collections::BTreeSet;
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Metadata for a tracked array: a unique id and its shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayMeta {
    pub id: String,
    /// Axis extents, cells counted from 1. Never empty.
    pub shape: Vec<u64>,
}

impl ArrayMeta {
    pub fn new(id: impl Into<String>, shape: Vec<u64>) -> Result<Self, LineageError> {
        let id = id.into();
        if shape.is_empty() {
            return Err(LineageError::EmptyShape { id });
        }
        if let Some(&bad) = shape.iter().find(|&&e| e == 0) {
            return Err(LineageError::ZeroExtent { id, extent: bad });
        }
        Ok(Self { id, shape })
    }

    /// Number of axes.
    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    /// Total cell count.
    pub fn cells(&self) -> u64 {
        self.shape.iter().product()
    }

    /// True when `idx` is a valid 1-based cell index of this array.
    pub fn contains(&self, idx: &[i64]) -> bool {
        idx.len() == self.shape.len()
            && idx
                .iter()
                .zip(&self.shape)
                .all(|(&i, &d)| i >= 1 && i <= d as i64)
    }
}

/// A closed integer interval `[lo, hi]`.
///
/// Absolute ranges index an axis (1-based); relative ranges hold offsets
/// and may be negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IndexRange {
    pub lo: i64,
    pub hi: i64,
}

impl IndexRange {
    pub fn new(lo: i64, hi: i64) -> Self {
        debug_assert!(lo <= hi, "inverted range [{lo}, {hi}]");
        Self { lo, hi }
    }

    pub fn point(v: i64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn width(&self) -> u64 {
        (self.hi - self.lo + 1) as u64
    }

    pub fn contains(&self, v: i64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn contains_range(&self, other: &IndexRange) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn intersect(&self, other: &IndexRange) -> Option<IndexRange> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(IndexRange { lo, hi })
    }

    /// Shift both bounds by the bounds of `delta` (interval sum).
    pub fn shift(&self, delta: &IndexRange) -> IndexRange {
        IndexRange {
            lo: self.lo + delta.lo,
            hi: self.hi + delta.hi,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = i64> {
        self.lo..=self.hi
    }
}

impl fmt::Display for IndexRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.lo == self.hi {
            write!(f, "[{}]", self.lo)
        } else {
            write!(f, "[{}, {}]", self.lo, self.hi)
        }
    }
}

/// One lineage fact: output cell `out_idx` received a contribution from
/// input cell `in_idx`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LineageRow {
    pub out_idx: Vec<i64>,
    pub in_idx: Vec<i64>,
}

impl LineageRow {
    pub fn new(out_idx: Vec<i64>, in_idx: Vec<i64>) -> Self {
        Self { out_idx, in_idx }
    }
}

/// The lineage relation for one operation edge `in_array -> out_array`,
/// with set semantics over its rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageRelation {
    pub out_array: ArrayMeta,
    pub in_array: ArrayMeta,
    pub rows: Vec<LineageRow>,
}

impl LineageRelation {
    pub fn new(out_array: ArrayMeta, in_array: ArrayMeta) -> Self {
        Self {
            out_array,
            in_array,
            rows: Vec::new(),
        }
    }

    pub fn with_rows(
        out_array: ArrayMeta,
        in_array: ArrayMeta,
        rows: impl IntoIterator<Item = LineageRow>,
    ) -> Self {
        let mut rel = Self::new(out_array, in_array);
        rel.rows = rows.into_iter().collect();
        rel
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Output attribute count (`l`).
    pub fn out_dim(&self) -> usize {
        self.out_array.dim()
    }

    /// Input attribute count (`m`).
    pub fn in_dim(&self) -> usize {
        self.in_array.dim()
    }

    pub fn row_set(&self) -> BTreeSet<LineageRow> {
        self.rows.iter().cloned().collect()
    }
}

/// First row that fails validation, with the reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub row_index: usize,
    pub row: LineageRow,
    pub reason: ViolationKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    OutOfBounds { side: Side, axis: usize, value: i64, extent: u64 },
    DimMismatch { side: Side, got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Output,
    Input,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = |s: &Side| match s {
            Side::Output => "output",
            Side::Input => "input",
        };
        match &self.reason {
            ViolationKind::OutOfBounds { side: s, axis, value, extent } => write!(
                f,
                "row {}: {} index {} on axis {} outside [1, {}]",
                self.row_index,
                side(s),
                value,
                axis + 1,
                extent
            ),
            ViolationKind::DimMismatch { side: s, got, expected } => write!(
                f,
                "row {}: {} tuple has {} components, array has {} axes",
                self.row_index,
                side(s),
                got,
                expected
            ),
        }
    }
}

#[derive(Debug, Error)]
pub enum LineageError {
    #[error("array {id}: shape must be non-empty")]
    EmptyShape { id: String },
    #[error("array {id}: axis extent must be >= 1, got {extent}")]
    ZeroExtent { id: String, extent: u64 },
    #[error("invalid lineage: {0}")]
    Invalid(Violation),
    #[error("ingest line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("ingest i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Sort rows lexicographically (output attributes first, then input
/// attributes) and drop duplicates. Idempotent.
pub fn canonical_sort(mut rel: LineageRelation) -> LineageRelation {
    rel.rows
        .sort_by(|x, y| x.out_idx.cmp(&y.out_idx).then_with(|| x.in_idx.cmp(&y.in_idx)));
    rel.rows
        .dedup_by(|x, y| x.out_idx == y.out_idx && x.in_idx == y.in_idx);
    rel
}

/// Check every row against both array shapes; report the first offender.
pub fn validate(rel: &LineageRelation) -> Result<(), Violation> {
    let check = |idx: &[i64], meta: &ArrayMeta, side: Side, row_index: usize, row: &LineageRow| {
        if idx.len() != meta.dim() {
            return Err(Violation {
                row_index,
                row: row.clone(),
                reason: ViolationKind::DimMismatch {
                    side,
                    got: idx.len(),
                    expected: meta.dim(),
                },
            });
        }
        for (axis, (&v, &d)) in idx.iter().zip(&meta.shape).enumerate() {
            if v < 1 || v > d as i64 {
                return Err(Violation {
                    row_index,
                    row: row.clone(),
                    reason: ViolationKind::OutOfBounds { side, axis, value: v, extent: d },
                });
            }
        }
        Ok(())
    };
    for (i, row) in rel.rows.iter().enumerate() {
        check(&row.out_idx, &rel.out_array, Side::Output, i, row)?;
        check(&row.in_idx, &rel.in_array, Side::Input, i, row)?;
    }
    Ok(())
}

/// Counters reported by ingest.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub rows_read: usize,
    pub duplicates_removed: usize,
}

/// Raw lineage ingest format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestFormat {
    /// One JSON array of two integer arrays per line: `[[out...],[in...]]`.
    JsonLines,
    /// CSV with header `b_1..b_l,a_1..a_m`.
    Csv,
}

/// Read raw lineage records into a canonical relation.
///
/// `zero_based` converts source indices from 0-based to the engine's
/// 1-based convention. Duplicate rows are dropped and counted.
pub fn ingest(
    reader: impl BufRead,
    out_array: ArrayMeta,
    in_array: ArrayMeta,
    format: IngestFormat,
    zero_based: bool,
) -> Result<(LineageRelation, IngestStats), LineageError> {
    let mut rows = Vec::new();
    match format {
        IngestFormat::JsonLines => {
            for (lineno, line) in reader.lines().enumerate() {
                let line = line?;
                let trimmed = line.trim();
                if trimmed.is_empty() {
                    continue;
                }
                let pair: (Vec<i64>, Vec<i64>) =
                    serde_json::from_str(trimmed).map_err(|e| LineageError::Parse {
                        line: lineno + 1,
                        msg: e.to_string(),
                    })?;
                rows.push(LineageRow::new(pair.0, pair.1));
            }
        }
        IngestFormat::Csv => {
            let l = out_array.dim();
            let m = in_array.dim();
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(true)
                .trim(csv::Trim::All)
                .from_reader(reader);
            for (recno, record) in rdr.records().enumerate() {
                let record = record.map_err(|e| LineageError::Parse {
                    line: recno + 2,
                    msg: e.to_string(),
                })?;
                if record.len() != l + m {
                    return Err(LineageError::Parse {
                        line: recno + 2,
                        msg: format!("expected {} columns, got {}", l + m, record.len()),
                    });
                }
                let mut vals = Vec::with_capacity(l + m);
                for field in record.iter() {
                    vals.push(field.parse::<i64>().map_err(|e| LineageError::Parse {
                        line: recno + 2,
                        msg: format!("bad integer {field:?}: {e}"),
                    })?);
                }
                let in_idx = vals.split_off(l);
                rows.push(LineageRow::new(vals, in_idx));
            }
        }
    }
    if zero_based {
        for row in &mut rows {
            for v in row.out_idx.iter_mut().chain(row.in_idx.iter_mut()) {
                *v += 1;
            }
        }
    }
    let rows_read = rows.len();
    let rel = canonical_sort(LineageRelation::with_rows(out_array, in_array, rows));
    let stats = IngestStats {
        rows_read,
        duplicates_removed: rows_read - rel.len(),
    };
    if let Err(v) = validate(&rel) {
        return Err(LineageError::Invalid(v));
    }
    Ok((rel, stats))
}

/// Write a relation in the JSON-lines ingest format.
pub fn emit_json_lines(rel: &LineageRelation, mut w: impl std::io::Write) -> std::io::Result<()> {
    for row in &rel.rows {
        let rec = serde_json::json!([row.out_idx, row.in_idx]);
        writeln!(w, "{rec}")?;
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// The running 3x2 axis-sum example: B[i] = sum(A[i, :]).
    pub fn running_example() -> LineageRelation {
        let a = ArrayMeta::new("A", vec![3, 2]).unwrap();
        let b = ArrayMeta::new("B", vec![3]).unwrap();
        let rows = [
            ((1,), (1, 1)),
            ((1,), (1, 2)),
            ((2,), (2, 1)),
            ((2,), (2, 2)),
            ((3,), (3, 1)),
            ((3,), (3, 2)),
        ]
        .into_iter()
        .map(|((o,), (i, j))| LineageRow::new(vec![o], vec![i, j]));
        LineageRelation::with_rows(b, a, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::running_example;
    use super::*;

    #[test]
    fn canonical_sort_orders_running_example() {
        let mut rel = running_example();
        rel.rows.reverse();
        rel.rows.swap(1, 4);
        let sorted = canonical_sort(rel);
        let got: Vec<(Vec<i64>, Vec<i64>)> = sorted
            .rows
            .iter()
            .map(|r| (r.out_idx.clone(), r.in_idx.clone()))
            .collect();
        assert_eq!(
            got,
            vec![
                (vec![1], vec![1, 1]),
                (vec![1], vec![1, 2]),
                (vec![2], vec![2, 1]),
                (vec![2], vec![2, 2]),
                (vec![3], vec![3, 1]),
                (vec![3], vec![3, 2]),
            ]
        );
    }

    #[test]
    fn canonical_sort_empty_and_duplicates() {
        let a = ArrayMeta::new("A", vec![2]).unwrap();
        let b = ArrayMeta::new("B", vec![2]).unwrap();
        let empty = canonical_sort(LineageRelation::new(b.clone(), a.clone()));
        assert!(empty.is_empty());

        let rows = vec![
            LineageRow::new(vec![1], vec![1]),
            LineageRow::new(vec![1], vec![1]),
            LineageRow::new(vec![2], vec![2]),
        ];
        let rel = canonical_sort(LineageRelation::with_rows(b, a, rows));
        assert_eq!(rel.len(), 2);
    }

    #[test]
    fn canonical_sort_idempotent() {
        let rel = running_example();
        let once = canonical_sort(rel);
        let twice = canonical_sort(once.clone());
        assert_eq!(once, twice);
    }

    #[test]
    fn validate_running_example_ok() {
        assert!(validate(&running_example()).is_ok());
    }

    #[test]
    fn validate_rejects_out_of_bounds_output() {
        let mut rel = running_example();
        rel.rows.push(LineageRow::new(vec![4], vec![1, 1]));
        let v = validate(&rel).unwrap_err();
        assert_eq!(v.row_index, 6);
        assert!(matches!(
            v.reason,
            ViolationKind::OutOfBounds { side: Side::Output, axis: 0, value: 4, extent: 3 }
        ));
    }

    #[test]
    fn validate_rejects_zero_index() {
        let mut rel = running_example();
        rel.rows[0].in_idx = vec![0, 1];
        let v = validate(&rel).unwrap_err();
        assert!(matches!(
            v.reason,
            ViolationKind::OutOfBounds { side: Side::Input, value: 0, .. }
        ));
    }

    #[test]
    fn validate_rejects_dim_mismatch() {
        let mut rel = running_example();
        rel.rows[2].in_idx = vec![1];
        let v = validate(&rel).unwrap_err();
        assert!(matches!(
            v.reason,
            ViolationKind::DimMismatch { side: Side::Input, got: 1, expected: 2 }
        ));
    }

    #[test]
    fn ingest_json_lines_round_trip() {
        let rel = running_example();
        let mut buf = Vec::new();
        emit_json_lines(&rel, &mut buf).unwrap();
        let (back, stats) = ingest(
            buf.as_slice(),
            rel.out_array.clone(),
            rel.in_array.clone(),
            IngestFormat::JsonLines,
            false,
        )
        .unwrap();
        assert_eq!(back, canonical_sort(rel));
        assert_eq!(stats.rows_read, 6);
        assert_eq!(stats.duplicates_removed, 0);
    }

    #[test]
    fn ingest_counts_duplicates() {
        let data = "[[1],[1,1]]\n[[1],[1,1]]\n[[2],[2,1]]\n";
        let a = ArrayMeta::new("A", vec![3, 2]).unwrap();
        let b = ArrayMeta::new("B", vec![3]).unwrap();
        let (rel, stats) = ingest(data.as_bytes(), b, a, IngestFormat::JsonLines, false).unwrap();
        assert_eq!(rel.len(), 2);
        assert_eq!(stats.duplicates_removed, 1);
    }

    #[test]
    fn ingest_zero_based_offsets() {
        let data = "[[0],[0,0]]\n";
        let a = ArrayMeta::new("A", vec![3, 2]).unwrap();
        let b = ArrayMeta::new("B", vec![3]).unwrap();
        let (rel, _) = ingest(data.as_bytes(), b, a, IngestFormat::JsonLines, true).unwrap();
        assert_eq!(rel.rows[0], LineageRow::new(vec![1], vec![1, 1]));
    }

    #[test]
    fn ingest_csv() {
        let data = "b_1,a_1,a_2\n1,1,1\n1,1,2\n";
        let a = ArrayMeta::new("A", vec![3, 2]).unwrap();
        let b = ArrayMeta::new("B", vec![3]).unwrap();
        let (rel, stats) = ingest(data.as_bytes(), b, a, IngestFormat::Csv, false).unwrap();
        assert_eq!(rel.len(), 2);
        assert_eq!(stats.rows_read, 2);
    }

    #[test]
    fn ingest_rejects_invalid() {
        let data = "[[9],[1,1]]\n";
        let a = ArrayMeta::new("A", vec![3, 2]).unwrap();
        let b = ArrayMeta::new("B", vec![3]).unwrap();
        let err = ingest(data.as_bytes(), b, a, IngestFormat::JsonLines, false).unwrap_err();
        assert!(matches!(err, LineageError::Invalid(_)));
    }
}
