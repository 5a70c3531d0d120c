//! Range-encoding passes shared by both compression steps.
//!
//! A working row is a flat cell vector: anchor columns first, then per
//! free attribute its absolute column followed by its offset columns
//! against each anchor attribute. Every pass sorts rows so candidate
//! runs become adjacent, then merges greedily left to right.

use crate::lineage::{IndexRange, LineageRelation};
use crate::provrc::{CompressedRow, CompressedTable, Direction};

pub(crate) type Cell = Option<IndexRange>;

/// Column layout bookkeeping for working rows.
#[derive(Debug, Clone, Copy)]
struct Layout {
    anchors: usize,
    free: usize,
}

impl Layout {
    fn anchor(&self, j: usize) -> usize {
        debug_assert!(j < self.anchors);
        j
    }

    fn free_abs(&self, i: usize) -> usize {
        self.anchors + i * (1 + self.anchors)
    }

    fn free_rel(&self, i: usize, j: usize) -> usize {
        self.free_abs(i) + 1 + j
    }

    fn width(&self) -> usize {
        self.anchors + self.free * (1 + self.anchors)
    }
}

/// Step 1: sort the relation anchor-side-major and range-encode the free
/// attributes, last axis first.
pub(crate) fn step1(rel: &LineageRelation, direction: Direction) -> CompressedTable {
    let (anchors, free) = match direction {
        Direction::Backward => (rel.out_dim(), rel.in_dim()),
        Direction::Forward => (rel.in_dim(), rel.out_dim()),
    };
    let layout = Layout { anchors, free };

    let mut tuples: Vec<Vec<i64>> = rel
        .rows
        .iter()
        .map(|r| {
            let (a, f) = match direction {
                Direction::Backward => (&r.out_idx, &r.in_idx),
                Direction::Forward => (&r.in_idx, &r.out_idx),
            };
            let mut t = Vec::with_capacity(anchors + free);
            t.extend_from_slice(a);
            t.extend_from_slice(f);
            t
        })
        .collect();
    tuples.sort_unstable();
    tuples.dedup();

    // The sorted tuple order already groups runs for the last free
    // attribute; fold that first pass into row construction so wide
    // relations collapse before cells materialize.
    let mut rows: Vec<Vec<Cell>> = Vec::new();
    let mut prev: Option<Vec<i64>> = None;
    for t in tuples {
        let extend = prev.as_ref().is_some_and(|p| {
            let n = p.len();
            p[..n - 1] == t[..n - 1]
                && rows
                    .last()
                    .and_then(|r| r[layout.free_abs(free - 1)])
                    .is_some_and(|r| t[n - 1] == r.hi + 1)
        });
        if extend {
            let last = rows.last_mut().unwrap();
            last[layout.free_abs(free - 1)].as_mut().unwrap().hi = t[t.len() - 1];
        } else {
            let mut row = vec![None; layout.width()];
            for (j, &v) in t[..anchors].iter().enumerate() {
                row[layout.anchor(j)] = Some(IndexRange::point(v));
            }
            for (i, &v) in t[anchors..].iter().enumerate() {
                row[layout.free_abs(i)] = Some(IndexRange::point(v));
            }
            rows.push(row);
        }
        prev = Some(t);
    }

    for i in (0..free.saturating_sub(1)).rev() {
        equal_merge_pass(&mut rows, layout.free_abs(i), false);
    }

    finish(rel, direction, layout, rows)
}

/// Step 2: relativize free attributes against anchor attributes, then
/// range-encode the anchor attributes (last axis first) keeping only the
/// columns that stay constant across each merged run. Finally reduce each
/// free attribute to a single populated column.
pub(crate) fn step2(table: CompressedTable) -> CompressedTable {
    let layout = Layout {
        anchors: table.anchor_dim(),
        free: table.free_dim(),
    };
    let mut rows: Vec<Vec<Cell>> = table
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![None; layout.width()];
            for (j, rng) in r.anchor.iter().enumerate() {
                row[layout.anchor(j)] = Some(*rng);
            }
            for (i, abs) in r.free_abs.iter().enumerate() {
                row[layout.free_abs(i)] = *abs;
                for (j, rel) in r.free_rel[i].iter().enumerate() {
                    row[layout.free_rel(i, j)] = *rel;
                }
            }
            row
        })
        .collect();

    // Offset columns are computed while anchor attributes are still
    // single points; an interval-valued free attribute shifts as a whole.
    for row in &mut rows {
        for i in 0..layout.free {
            let abs = row[layout.free_abs(i)];
            for j in 0..layout.anchors {
                let anchor = row[layout.anchor(j)].expect("anchor always populated");
                debug_assert_eq!(anchor.lo, anchor.hi, "step2 requires point anchors");
                if row[layout.free_rel(i, j)].is_none() {
                    row[layout.free_rel(i, j)] =
                        abs.map(|a| IndexRange::new(a.lo - anchor.lo, a.hi - anchor.lo));
                }
            }
        }
    }

    for j in (0..layout.anchors).rev() {
        subset_merge_pass(&mut rows, layout, j);
    }

    for row in &mut rows {
        finalize_row(row, layout);
    }

    let mut out = table;
    out.rows = to_compressed_rows(layout, rows);
    out
}

/// Merge maximal runs equal on every column except `target` and
/// contiguous (or, with `allow_overlap`, overlapping) on `target`.
/// Rows where `target` is null are passed through untouched.
pub(crate) fn equal_merge_pass(rows: &mut Vec<Vec<Cell>>, target: usize, allow_overlap: bool) {
    if rows.len() < 2 {
        return;
    }
    sort_for_pass(rows, target);
    let mut out: Vec<Vec<Cell>> = Vec::with_capacity(rows.len());
    for row in rows.drain(..) {
        if let Some(prev) = out.last_mut() {
            let joinable = match (&prev[target], &row[target]) {
                (Some(p), Some(r)) => {
                    let adjacent = r.lo == p.hi + 1;
                    let touching = allow_overlap && r.lo <= p.hi + 1;
                    (adjacent || touching) && eq_except(prev, &row, target)
                }
                _ => false,
            };
            if joinable {
                let hi = prev[target].unwrap().hi.max(row[target].unwrap().hi);
                prev[target].as_mut().unwrap().hi = hi;
                continue;
            }
        }
        out.push(row);
    }
    *rows = std::mem::take(&mut out);
}

/// The step-2 merge over anchor attribute `j`.
///
/// A run extends while the other anchor columns match, the target stays
/// contiguous, and every free attribute keeps at least one column
/// (absolute or offset) populated with the same value in every row of the
/// run. Merging keeps exactly those constant columns.
fn subset_merge_pass(rows: &mut Vec<Vec<Cell>>, layout: Layout, j: usize) {
    if rows.len() < 2 {
        return;
    }
    let target = layout.anchor(j);
    sort_for_subset_pass(rows, layout, target);

    let mut out: Vec<Vec<Cell>> = Vec::new();
    // Per free attribute, bitmask of columns still constant across the
    // current run: bit 0 = absolute, bit 1+k = offset against anchor k.
    let mut constant: Vec<u64> = Vec::new();
    let mut run_len = 0usize;

    let flush = |out: &mut Vec<Vec<Cell>>, constant: &[u64], run_len: usize, layout: Layout| {
        if run_len < 2 {
            return;
        }
        let last = out.last_mut().expect("run rows were emitted");
        for (i, mask) in constant.iter().enumerate() {
            if mask & 1 == 0 {
                last[layout.free_abs(i)] = None;
            }
            for k in 0..layout.anchors {
                if mask & (1 << (1 + k)) == 0 {
                    last[layout.free_rel(i, k)] = None;
                }
            }
        }
    };

    for row in rows.drain(..) {
        let mut extend = false;
        let mut next_constant: Vec<u64> = Vec::new();
        if run_len > 0 {
            let prev = out.last().expect("non-empty run");
            let prev_t = prev[target].expect("anchor always populated");
            let row_t = row[target].expect("anchor always populated");
            if row_t.lo == prev_t.hi + 1 && anchors_eq_except(prev, &row, layout, target) {
                next_constant = constant.clone();
                let mut ok = true;
                for (i, mask) in next_constant.iter_mut().enumerate() {
                    let mut m = *mask;
                    if m & 1 != 0 && prev[layout.free_abs(i)] != row[layout.free_abs(i)] {
                        m &= !1;
                    }
                    for k in 0..layout.anchors {
                        let bit = 1 << (1 + k);
                        if m & bit != 0 && prev[layout.free_rel(i, k)] != row[layout.free_rel(i, k)] {
                            m &= !bit;
                        }
                    }
                    if m == 0 {
                        ok = false;
                        break;
                    }
                    *mask = m;
                }
                extend = ok;
            }
        }

        if extend {
            // Reuse the run head as the accumulator; only the target
            // interval widens. Columns knocked out of the constant set
            // are cleared when the run flushes.
            let hi = row[target].unwrap().hi;
            let prev = out.last_mut().unwrap();
            prev[target].as_mut().unwrap().hi = hi;
            constant = next_constant;
            run_len += 1;
        } else {
            flush(&mut out, &constant, run_len, layout);
            constant = (0..layout.free)
                .map(|i| {
                    let mut mask = 0u64;
                    if row[layout.free_abs(i)].is_some() {
                        mask |= 1;
                    }
                    for k in 0..layout.anchors {
                        if row[layout.free_rel(i, k)].is_some() {
                            mask |= 1 << (1 + k);
                        }
                    }
                    mask
                })
                .collect();
            run_len = 1;
            out.push(row);
        }
    }
    flush(&mut out, &constant, run_len, layout);
    *rows = out;
}

/// Keep one column per free attribute: the absolute column when present,
/// otherwise the offset against the same-position anchor attribute,
/// otherwise the lowest-numbered populated offset.
fn finalize_row(row: &mut [Cell], layout: Layout) {
    for i in 0..layout.free {
        if row[layout.free_abs(i)].is_some() {
            for k in 0..layout.anchors {
                row[layout.free_rel(i, k)] = None;
            }
            continue;
        }
        let preferred = if i < layout.anchors && row[layout.free_rel(i, i)].is_some() {
            Some(i)
        } else {
            (0..layout.anchors).find(|&k| row[layout.free_rel(i, k)].is_some())
        };
        if let Some(keep) = preferred {
            for k in 0..layout.anchors {
                if k != keep {
                    row[layout.free_rel(i, k)] = None;
                }
            }
        }
    }
}

/// Sort order for step-2 passes: other anchor columns, then free
/// absolute columns, then the target, then offset columns as tiebreak.
///
/// Offset columns must come after the target: a run mergeable through a
/// constant offset against the target has its absolute column ascending
/// in step with the target, so sorting on absolutes keeps it adjacent,
/// while sorting on the offsets themselves would reverse it.
fn sort_for_subset_pass(rows: &mut [Vec<Cell>], layout: Layout, target: usize) {
    let mut order: Vec<usize> = Vec::with_capacity(layout.width());
    order.extend((0..layout.anchors).filter(|&j| layout.anchor(j) != target));
    order.extend((0..layout.free).map(|i| layout.free_abs(i)));
    order.push(target);
    for i in 0..layout.free {
        order.extend((0..layout.anchors).map(|j| layout.free_rel(i, j)));
    }
    rows.sort_unstable_by(|x, y| {
        for &c in &order {
            let ord = cell_ord(&x[c], &y[c]);
            if ord != std::cmp::Ordering::Equal {
                return ord;
            }
        }
        std::cmp::Ordering::Equal
    });
}

/// Sort rows by every column except `target` (validity, then bounds),
/// with the target's lower bound as the final key component.
fn sort_for_pass(rows: &mut [Vec<Cell>], target: usize) {
    rows.sort_unstable_by(|x, y| {
        for (c, (xc, yc)) in x.iter().zip(y.iter()).enumerate() {
            if c == target {
                continue;
            }
            let ord = cell_ord(xc, yc);
            if ord != std::cmp::Ordering::Equal {
                return ord;
            }
        }
        cell_ord(&x[target], &y[target])
    });
}

fn cell_ord(x: &Cell, y: &Cell) -> std::cmp::Ordering {
    match (x, y) {
        (None, None) => std::cmp::Ordering::Equal,
        (None, Some(_)) => std::cmp::Ordering::Less,
        (Some(_), None) => std::cmp::Ordering::Greater,
        (Some(a), Some(b)) => a.lo.cmp(&b.lo).then(a.hi.cmp(&b.hi)),
    }
}

fn eq_except(x: &[Cell], y: &[Cell], target: usize) -> bool {
    x.iter()
        .zip(y.iter())
        .enumerate()
        .all(|(c, (xc, yc))| c == target || xc == yc)
}

fn anchors_eq_except(x: &[Cell], y: &[Cell], layout: Layout, target: usize) -> bool {
    (0..layout.anchors).all(|j| {
        let c = layout.anchor(j);
        c == target || x[c] == y[c]
    })
}

fn to_compressed_rows(layout: Layout, rows: Vec<Vec<Cell>>) -> Vec<CompressedRow> {
    rows.into_iter()
        .map(|row| {
            let anchor = (0..layout.anchors)
                .map(|j| row[layout.anchor(j)].expect("anchor always populated"))
                .collect();
            let free_abs = (0..layout.free).map(|i| row[layout.free_abs(i)]).collect();
            let free_rel = (0..layout.free)
                .map(|i| {
                    (0..layout.anchors)
                        .map(|j| row[layout.free_rel(i, j)])
                        .collect()
                })
                .collect();
            CompressedRow {
                anchor,
                free_abs,
                free_rel,
            }
        })
        .collect()
}

fn finish(
    rel: &LineageRelation,
    direction: Direction,
    layout: Layout,
    rows: Vec<Vec<Cell>>,
) -> CompressedTable {
    CompressedTable {
        direction,
        op: String::new(),
        out_array: rel.out_array.id.clone(),
        in_array: rel.in_array.id.clone(),
        out_shape: rel.out_array.shape.clone(),
        in_shape: rel.in_array.shape.clone(),
        rows: to_compressed_rows(layout, rows),
    }
}

/// Multi-attribute range encoding of plain index tuples (no free side).
/// Used for query encoding; the result rows denote exactly the input set.
pub fn range_encode_tuples(mut tuples: Vec<Vec<i64>>, dims: usize) -> Vec<Vec<IndexRange>> {
    tuples.sort_unstable();
    tuples.dedup();
    let mut rows: Vec<Vec<Cell>> = tuples
        .into_iter()
        .map(|t| t.into_iter().map(|v| Some(IndexRange::point(v))).collect())
        .collect();
    for axis in (0..dims).rev() {
        equal_merge_pass(&mut rows, axis, false);
    }
    rows.into_iter()
        .map(|row| row.into_iter().map(|c| c.expect("all populated")).collect())
        .collect()
}

/// Merge rows identical on all but one attribute with adjacent or
/// overlapping intervals on it, iterating attributes until fixpoint.
pub fn merge_range_rows(mut rows: Vec<Vec<IndexRange>>, dims: usize) -> Vec<Vec<IndexRange>> {
    rows.sort_unstable();
    rows.dedup();
    let mut work: Vec<Vec<Cell>> = rows
        .into_iter()
        .map(|r| r.into_iter().map(Some).collect())
        .collect();
    loop {
        let before = work.len();
        for axis in (0..dims).rev() {
            equal_merge_pass(&mut work, axis, true);
        }
        if work.len() == before {
            break;
        }
    }
    work.into_iter()
        .map(|row| row.into_iter().map(|c| c.expect("all populated")).collect())
        .collect()
}
