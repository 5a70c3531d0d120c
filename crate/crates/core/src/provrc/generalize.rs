//! Index reshaping: rewriting a compressed table so it can be
//! instantiated for differently shaped inputs.
//!
//! Every absolute interval exactly equal to `[1, d_i]`, where `d_i` is an
//! input-axis extent, is replaced by the symbolic interval `[1, D_i]`.
//! Output-axis extents equal to an input-axis extent are recorded so the
//! output shape can be re-derived when instantiating.

use serde::{Deserialize, Serialize};

use crate::lineage::IndexRange;
use crate::provrc::{CompressedRow, CompressedTable, Direction, ProvrcError};

/// Upper bound of a symbolic interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SymBound {
    Lit(i64),
    /// The extent of the given input axis (0-based).
    Extent(usize),
}

/// An interval whose upper bound may be an input-axis extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymRange {
    pub lo: i64,
    pub hi: SymBound,
}

impl SymRange {
    fn lit(r: IndexRange) -> Self {
        SymRange {
            lo: r.lo,
            hi: SymBound::Lit(r.hi),
        }
    }

    fn resolve(&self, in_shape: &[u64]) -> IndexRange {
        let hi = match self.hi {
            SymBound::Lit(v) => v,
            SymBound::Extent(axis) => in_shape[axis] as i64,
        };
        IndexRange::new(self.lo, hi)
    }
}

/// How one output-axis extent derives from the input shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutExtent {
    Const(u64),
    InAxis(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymRow {
    pub anchor: Vec<SymRange>,
    pub free_abs: Vec<Option<SymRange>>,
    pub free_rel: Vec<Vec<Option<IndexRange>>>,
}

/// A compressed table with shape-parametric interval bounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneralizedTable {
    pub direction: Direction,
    pub op: String,
    pub out_array: String,
    pub in_array: String,
    /// Shape the table was generalized from.
    pub in_shape: Vec<u64>,
    pub out_shape: Vec<u64>,
    pub out_axis_map: Vec<OutExtent>,
    pub rows: Vec<SymRow>,
    /// Substitutions where several input axes shared the matched extent;
    /// the lowest-numbered axis was chosen.
    pub ambiguities: Vec<String>,
    /// Number of intervals replaced by a symbolic bound.
    pub substitutions: usize,
}

/// Replace full-extent intervals with symbolic bounds.
pub fn generalize(table: &CompressedTable) -> GeneralizedTable {
    let in_shape = &table.in_shape;
    let mut ambiguities = Vec::new();
    let mut substitutions = 0usize;

    let sub = |r: IndexRange, col: String, ambiguities: &mut Vec<String>, substitutions: &mut usize| {
        if r.lo != 1 {
            return SymRange::lit(r);
        }
        let matches: Vec<usize> = in_shape
            .iter()
            .enumerate()
            .filter(|&(_, &d)| d as i64 == r.hi)
            .map(|(axis, _)| axis)
            .collect();
        match matches.split_first() {
            None => SymRange::lit(r),
            Some((&axis, rest)) => {
                if !rest.is_empty() {
                    ambiguities.push(format!(
                        "{col}: extent {} matches input axes {:?}, chose axis {}",
                        r.hi,
                        matches,
                        axis + 1
                    ));
                }
                *substitutions += 1;
                SymRange {
                    lo: 1,
                    hi: SymBound::Extent(axis),
                }
            }
        }
    };

    let (anchor_name, free_name) = match table.direction {
        Direction::Backward => ("b", "a"),
        Direction::Forward => ("a", "b"),
    };
    let rows = table
        .rows
        .iter()
        .map(|row| SymRow {
            anchor: row
                .anchor
                .iter()
                .enumerate()
                .map(|(j, &r)| {
                    sub(r, format!("{anchor_name}{}", j + 1), &mut ambiguities, &mut substitutions)
                })
                .collect(),
            free_abs: row
                .free_abs
                .iter()
                .enumerate()
                .map(|(i, abs)| {
                    abs.map(|r| {
                        sub(r, format!("{free_name}{}", i + 1), &mut ambiguities, &mut substitutions)
                    })
                })
                .collect(),
            free_rel: row.free_rel.clone(),
        })
        .collect();

    let out_axis_map = table
        .out_shape
        .iter()
        .map(|&e| {
            let matches: Vec<usize> = in_shape
                .iter()
                .enumerate()
                .filter(|&(_, &d)| d == e)
                .map(|(axis, _)| axis)
                .collect();
            match matches.split_first() {
                None => OutExtent::Const(e),
                Some((&axis, rest)) => {
                    if !rest.is_empty() {
                        ambiguities.push(format!(
                            "output extent {e} matches input axes {matches:?}, chose axis {}",
                            axis + 1
                        ));
                    }
                    OutExtent::InAxis(axis)
                }
            }
        })
        .collect();

    GeneralizedTable {
        direction: table.direction,
        op: table.op.clone(),
        out_array: table.out_array.clone(),
        in_array: table.in_array.clone(),
        in_shape: table.in_shape.clone(),
        out_shape: table.out_shape.clone(),
        out_axis_map,
        rows,
        ambiguities,
        substitutions,
    }
}

/// Bind the symbolic bounds to a concrete input shape.
pub fn instantiate(
    gen: &GeneralizedTable,
    in_shape: &[u64],
) -> Result<CompressedTable, ProvrcError> {
    if in_shape.len() != gen.in_shape.len() {
        return Err(ProvrcError::ShapeDimMismatch {
            got: in_shape.len(),
            expected: gen.in_shape.len(),
        });
    }
    let out_shape: Vec<u64> = gen
        .out_axis_map
        .iter()
        .map(|m| match *m {
            OutExtent::Const(e) => e,
            OutExtent::InAxis(axis) => in_shape[axis],
        })
        .collect();
    let rows = gen
        .rows
        .iter()
        .map(|row| CompressedRow {
            anchor: row.anchor.iter().map(|r| r.resolve(in_shape)).collect(),
            free_abs: row
                .free_abs
                .iter()
                .map(|abs| abs.map(|r| r.resolve(in_shape)))
                .collect(),
            free_rel: row.free_rel.clone(),
        })
        .collect();
    Ok(CompressedTable {
        direction: gen.direction,
        op: gen.op.clone(),
        out_array: gen.out_array.clone(),
        in_array: gen.in_array.clone(),
        out_shape,
        in_shape: in_shape.to_vec(),
        rows,
    })
}
