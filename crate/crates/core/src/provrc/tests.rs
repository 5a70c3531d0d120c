use super::*;
use crate::lineage::testutil::running_example;
use crate::lineage::{canonical_sort, ArrayMeta, IndexRange, LineageRelation, LineageRow};

fn r(lo: i64, hi: i64) -> IndexRange {
    IndexRange::new(lo, hi)
}

/// Independent oracle for range encoding: walk the set and extend or open
/// ranges by hand.
fn naive_ranges(values: &[i64]) -> Vec<IndexRange> {
    let mut sorted: Vec<i64> = values.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut out: Vec<IndexRange> = Vec::new();
    for v in sorted {
        match out.last_mut() {
            Some(last) if v == last.hi + 1 => last.hi = v,
            _ => out.push(IndexRange::point(v)),
        }
    }
    out
}

/// The backward table printed for the running example: one row with
/// b1=[1,3], a1 relative zero, a2=[1,2].
fn running_example_backward() -> CompressedTable {
    CompressedTable {
        direction: Direction::Backward,
        op: String::new(),
        out_array: "B".into(),
        in_array: "A".into(),
        out_shape: vec![3],
        in_shape: vec![3, 2],
        rows: vec![CompressedRow {
            anchor: vec![r(1, 3)],
            free_abs: vec![None, Some(r(1, 2))],
            free_rel: vec![vec![Some(r(0, 0))], vec![None]],
        }],
    }
}

#[test]
fn range_encode_column_paper_example() {
    let got = range_encode_column(&[1, 2, 3, 4, 9, 12, 13, 14, 15]).unwrap();
    assert_eq!(got, vec![r(1, 4), r(9, 9), r(12, 15)]);
}

#[test]
fn range_encode_column_singleton() {
    assert_eq!(range_encode_column(&[5]).unwrap(), vec![r(5, 5)]);
}

#[test]
fn range_encode_column_negative_values() {
    let input = [-2, -1, 0, 7];
    let got = range_encode_column(&input).unwrap();
    assert_eq!(got, naive_ranges(&input));
    assert_eq!(got, vec![r(-2, 0), r(7, 7)]);
}

#[test]
fn range_encode_column_rejects_unsorted() {
    assert!(matches!(
        range_encode_column(&[3, 1, 2]),
        Err(ProvrcError::Unsorted { pos: 1 })
    ));
}

#[test]
fn encode_input_ranges_running_example() {
    let table = encode_input_ranges(&canonical_sort(running_example()));
    let rows: Vec<_> = table
        .rows
        .iter()
        .map(|row| {
            (
                row.anchor[0],
                row.free_abs[0].unwrap(),
                row.free_abs[1].unwrap(),
            )
        })
        .collect();
    assert_eq!(
        rows,
        vec![
            (r(1, 1), r(1, 1), r(1, 2)),
            (r(2, 2), r(2, 2), r(1, 2)),
            (r(3, 3), r(3, 3), r(1, 2)),
        ]
    );
}

#[test]
fn encode_input_ranges_single_row() {
    let a = ArrayMeta::new("A", vec![4, 4]).unwrap();
    let b = ArrayMeta::new("B", vec![2]).unwrap();
    let rel = LineageRelation::with_rows(b, a, [LineageRow::new(vec![2], vec![3, 4])]);
    let table = encode_input_ranges(&rel);
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].anchor, vec![r(2, 2)]);
    assert_eq!(table.rows[0].free_abs, vec![Some(r(3, 3)), Some(r(4, 4))]);
}

#[test]
fn encode_input_ranges_all_to_all_aggregate() {
    let a = ArrayMeta::new("A", vec![4, 4]).unwrap();
    let b = ArrayMeta::new("B", vec![1]).unwrap();
    let rows = (1..=4).flat_map(|i| (1..=4).map(move |j| LineageRow::new(vec![1], vec![i, j])));
    let rel = canonical_sort(LineageRelation::with_rows(b, a, rows));
    let table = encode_input_ranges(&rel);
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].anchor, vec![r(1, 1)]);
    assert_eq!(table.rows[0].free_abs, vec![Some(r(1, 4)), Some(r(1, 4))]);
}

#[test]
fn relativize_running_example_matches_printed_table() {
    let step1 = encode_input_ranges(&canonical_sort(running_example()));
    let table = relativize_and_encode_outputs(step1);
    assert_eq!(table, running_example_backward());
}

#[test]
fn relativize_keeps_minimal_single_row() {
    let a = ArrayMeta::new("A", vec![4, 4]).unwrap();
    let b = ArrayMeta::new("B", vec![1]).unwrap();
    let rows = (1..=4).flat_map(|i| (1..=4).map(move |j| LineageRow::new(vec![1], vec![i, j])));
    let rel = canonical_sort(LineageRelation::with_rows(b, a, rows));
    let table = relativize_and_encode_outputs(encode_input_ranges(&rel));
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].anchor, vec![r(1, 1)]);
    // Absolute columns survive finalization untouched.
    assert_eq!(table.rows[0].free_abs, vec![Some(r(1, 4)), Some(r(1, 4))]);
    assert_eq!(table.rows[0].free_rel, vec![vec![None], vec![None]]);
}

#[test]
fn relativize_one_to_one_collapses_to_single_row() {
    let a = ArrayMeta::new("A", vec![2]).unwrap();
    let b = ArrayMeta::new("B", vec![2]).unwrap();
    let rel = LineageRelation::with_rows(
        b,
        a,
        [
            LineageRow::new(vec![1], vec![1]),
            LineageRow::new(vec![2], vec![2]),
        ],
    );
    let table = relativize_and_encode_outputs(encode_input_ranges(&rel));
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].anchor, vec![r(1, 2)]);
    assert_eq!(table.rows[0].free_abs, vec![None]);
    assert_eq!(table.rows[0].free_rel, vec![vec![Some(r(0, 0))]]);
}

#[test]
fn compress_backward_running_example() {
    let table = compress(&running_example(), Direction::Backward);
    assert_eq!(table, running_example_backward());
}

#[test]
fn compress_forward_running_example() {
    let table = compress(&running_example(), Direction::Forward);
    assert_eq!(table.direction, Direction::Forward);
    assert_eq!(table.rows.len(), 1);
    let row = &table.rows[0];
    // Anchor side is the input: a1=[1,3], a2=[1,2].
    assert_eq!(row.anchor, vec![r(1, 3), r(1, 2)]);
    // Output b1 is relative to a1 with zero offset.
    assert_eq!(row.free_abs, vec![None]);
    assert_eq!(row.free_rel, vec![vec![Some(r(0, 0)), None]]);
}

#[test]
fn compress_permutation_does_not_shrink() {
    // Screened permutation: no adjacent fixed-offset pair.
    let perm = [2i64, 4, 1, 5, 3];
    for w in perm.windows(2) {
        assert_ne!(w[1], w[0] + 1, "seed screening premise");
    }
    let a = ArrayMeta::new("A", vec![5]).unwrap();
    let b = ArrayMeta::new("B", vec![5]).unwrap();
    let rows = perm
        .iter()
        .enumerate()
        .map(|(i, &p)| LineageRow::new(vec![i as i64 + 1], vec![p]));
    let rel = LineageRelation::with_rows(b, a, rows);
    for direction in [Direction::Backward, Direction::Forward] {
        let table = compress(&rel, direction);
        assert_eq!(table.rows.len(), rel.len());
        assert_eq!(decompress(&table).unwrap().row_set(), rel.row_set());
    }
}

#[test]
fn decompress_running_example() {
    let rel = decompress(&running_example_backward()).unwrap();
    assert_eq!(rel.row_set(), canonical_sort(running_example()).row_set());
}

#[test]
fn decompress_empty_table() {
    let table = CompressedTable {
        direction: Direction::Backward,
        op: String::new(),
        out_array: "B".into(),
        in_array: "A".into(),
        out_shape: vec![3],
        in_shape: vec![3],
        rows: vec![],
    };
    assert!(decompress(&table).unwrap().is_empty());
}

#[test]
fn decompress_relative_window_row() {
    // One row: b1=[1,3] with offsets [-1,1]; enumerating by hand gives
    // the nine (b, b+delta) pairs.
    let table = CompressedTable {
        direction: Direction::Backward,
        op: String::new(),
        out_array: "B".into(),
        in_array: "A".into(),
        out_shape: vec![3],
        in_shape: vec![5],
        rows: vec![CompressedRow {
            anchor: vec![r(1, 3)],
            free_abs: vec![None],
            free_rel: vec![vec![Some(r(-1, 1))]],
        }],
    };
    let mut expected = std::collections::BTreeSet::new();
    for b in 1..=3i64 {
        for d in -1..=1i64 {
            expected.insert(LineageRow::new(vec![b], vec![b + d]));
        }
    }
    assert_eq!(decompress(&table).unwrap().row_set(), expected);
    assert_eq!(expected.len(), 9);
}

#[test]
fn decompress_rejects_row_without_columns() {
    let table = CompressedTable {
        direction: Direction::Backward,
        op: String::new(),
        out_array: "B".into(),
        in_array: "A".into(),
        out_shape: vec![1],
        in_shape: vec![1],
        rows: vec![CompressedRow {
            anchor: vec![r(1, 1)],
            free_abs: vec![None],
            free_rel: vec![vec![None]],
        }],
    };
    assert!(matches!(
        decompress(&table),
        Err(ProvrcError::MalformedRow { row: 0, attr: 0 })
    ));
}

fn aggregate_1d(extent: u64) -> LineageRelation {
    let a = ArrayMeta::new("A", vec![extent]).unwrap();
    let b = ArrayMeta::new("B", vec![1]).unwrap();
    let rows = (1..=extent as i64).map(|i| LineageRow::new(vec![1], vec![i]));
    LineageRelation::with_rows(b, a, rows)
}

fn negation_1d(extent: u64) -> LineageRelation {
    let a = ArrayMeta::new("A", vec![extent]).unwrap();
    let b = ArrayMeta::new("B", vec![extent]).unwrap();
    let rows = (1..=extent as i64).map(|i| LineageRow::new(vec![i], vec![i]));
    LineageRelation::with_rows(b, a, rows)
}

#[test]
fn generalize_aggregate_full_extent() {
    let table = compress(&aggregate_1d(2), Direction::Backward);
    assert_eq!(table.rows[0].free_abs, vec![Some(r(1, 2))]);
    let gen = generalize(&table);
    assert_eq!(gen.substitutions, 1);
    assert_eq!(
        gen.rows[0].free_abs,
        vec![Some(SymRange { lo: 1, hi: SymBound::Extent(0) })]
    );
    // Output extent 1 is not an input extent: stays constant.
    assert_eq!(gen.out_axis_map, vec![OutExtent::Const(1)]);
}

#[test]
fn generalize_without_full_extent_ranges_is_identity() {
    let a = ArrayMeta::new("A", vec![9]).unwrap();
    let b = ArrayMeta::new("B", vec![2]).unwrap();
    let rel = LineageRelation::with_rows(
        b,
        a,
        [
            LineageRow::new(vec![1], vec![3]),
            LineageRow::new(vec![2], vec![7]),
        ],
    );
    let table = compress(&rel, Direction::Backward);
    let gen = generalize(&table);
    assert_eq!(gen.substitutions, 0);
    assert_eq!(instantiate(&gen, &table.in_shape).unwrap(), table);
}

#[test]
fn generalize_negation_substitutes_output_column() {
    let table = compress(&negation_1d(2), Direction::Backward);
    assert_eq!(table.rows[0].anchor, vec![r(1, 2)]);
    let gen = generalize(&table);
    assert_eq!(
        gen.rows[0].anchor,
        vec![SymRange { lo: 1, hi: SymBound::Extent(0) }]
    );
    assert_eq!(gen.out_axis_map, vec![OutExtent::InAxis(0)]);

    // Instantiating at extent 5 reproduces the brute-force lineage.
    let inst = instantiate(&gen, &[5]).unwrap();
    assert_eq!(inst.out_shape, vec![5]);
    assert_eq!(
        decompress(&inst).unwrap().row_set(),
        negation_1d(5).row_set()
    );
}

#[test]
fn instantiate_reshaped_aggregate() {
    let gen = generalize(&compress(&aggregate_1d(2), Direction::Backward));
    let inst = instantiate(&gen, &[4]).unwrap();
    assert_eq!(inst.rows[0].anchor, vec![r(1, 1)]);
    assert_eq!(inst.rows[0].free_abs, vec![Some(r(1, 4))]);
    assert_eq!(
        decompress(&inst).unwrap().row_set(),
        aggregate_1d(4).row_set()
    );
}

#[test]
fn instantiate_at_original_shape_is_identity() {
    for rel in [aggregate_1d(3), negation_1d(4), running_example()] {
        let table = compress(&rel, Direction::Backward);
        let gen = generalize(&table);
        assert_eq!(instantiate(&gen, &table.in_shape).unwrap(), table);
    }
}

#[test]
fn instantiate_negation_at_extent_seven() {
    let gen = generalize(&compress(&negation_1d(2), Direction::Backward));
    let inst = instantiate(&gen, &[7]).unwrap();
    let expected: std::collections::BTreeSet<_> =
        (1..=7i64).map(|k| LineageRow::new(vec![k], vec![k])).collect();
    assert_eq!(decompress(&inst).unwrap().row_set(), expected);
}

#[test]
fn instantiate_rejects_dim_mismatch() {
    let gen = generalize(&compress(&negation_1d(2), Direction::Backward));
    assert!(matches!(
        instantiate(&gen, &[2, 2]),
        Err(ProvrcError::ShapeDimMismatch { got: 2, expected: 1 })
    ));
}

#[test]
fn generalize_records_equal_extent_ambiguity() {
    let a = ArrayMeta::new("A", vec![3, 3]).unwrap();
    let b = ArrayMeta::new("B", vec![3]).unwrap();
    // Full second-axis aggregate: a2 spans [1,3] which matches both axes.
    let rows =
        (1..=3i64).flat_map(|i| (1..=3i64).map(move |j| LineageRow::new(vec![i], vec![i, j])));
    let rel = LineageRelation::with_rows(b, a, rows);
    let gen = generalize(&compress(&rel, Direction::Backward));
    assert!(gen.substitutions > 0);
    assert!(!gen.ambiguities.is_empty());
}

#[test]
fn compression_steps_preserve_denotation() {
    let rel = canonical_sort(running_example());
    let step1 = encode_input_ranges(&rel);
    assert_eq!(decompress(&step1).unwrap().row_set(), rel.row_set());
    let step2 = relativize_and_encode_outputs(step1);
    assert_eq!(decompress(&step2).unwrap().row_set(), rel.row_set());
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    prop_compose! {
        fn arb_relation()(
            out_shape in proptest::collection::vec(1u64..=5, 1..=2),
            in_shape in proptest::collection::vec(1u64..=5, 1..=3),
        )(
            rows in proptest::collection::btree_set(
                (proptest::collection::vec(1i64..=5, out_shape.len()),
                 proptest::collection::vec(1i64..=5, in_shape.len())),
                0..=60,
            ),
            out_shape in Just(out_shape),
            in_shape in Just(in_shape),
        ) -> LineageRelation {
            let clip = |idx: Vec<i64>, shape: &[u64]| -> Vec<i64> {
                idx.into_iter()
                    .zip(shape)
                    .map(|(v, &d)| v.min(d as i64))
                    .collect()
            };
            let out_array = ArrayMeta::new("B", out_shape.clone()).unwrap();
            let in_array = ArrayMeta::new("A", in_shape.clone()).unwrap();
            let rows = rows
                .into_iter()
                .map(|(o, i)| LineageRow::new(clip(o, &out_shape), clip(i, &in_shape)));
            canonical_sort(LineageRelation::with_rows(out_array, in_array, rows))
        }
    }

    proptest! {
        #[test]
        fn lossless_round_trip_both_directions(rel in arb_relation()) {
            for direction in [Direction::Backward, Direction::Forward] {
                let table = compress(&rel, direction);
                prop_assert_eq!(decompress(&table).unwrap().row_set(), rel.row_set());
            }
        }

        #[test]
        fn each_step_preserves_denotation(rel in arb_relation()) {
            let step1 = encode_input_ranges(&rel);
            prop_assert_eq!(decompress(&step1).unwrap().row_set(), rel.row_set());
            let step2 = relativize_and_encode_outputs(step1);
            prop_assert_eq!(decompress(&step2).unwrap().row_set(), rel.row_set());
        }

        #[test]
        fn row_count_never_grows(rel in arb_relation()) {
            for direction in [Direction::Backward, Direction::Forward] {
                let table = compress(&rel, direction);
                prop_assert!(table.rows.len() <= rel.len());
                prop_assert_eq!(table.denotation_size() as usize, rel.len());
            }
        }

        #[test]
        fn directions_agree(rel in arb_relation()) {
            let b = decompress(&compress(&rel, Direction::Backward)).unwrap();
            let f = decompress(&compress(&rel, Direction::Forward)).unwrap();
            prop_assert_eq!(b.row_set(), f.row_set());
        }

        #[test]
        fn range_encoding_is_minimal(mut values in proptest::collection::btree_set(-50i64..=50, 0..=40)) {
            let sorted: Vec<i64> = std::mem::take(&mut values).into_iter().collect();
            let ranges = range_encode_column(&sorted).unwrap();
            // Disjoint, sorted, maximal.
            for w in ranges.windows(2) {
                prop_assert!(w[0].hi + 1 < w[1].lo);
            }
            let covered: Vec<i64> = ranges.iter().flat_map(|r| r.lo..=r.hi).collect();
            prop_assert_eq!(covered, sorted);
        }

        #[test]
        fn generalize_round_trips_at_original_shape(rel in arb_relation()) {
            let table = compress(&rel, Direction::Backward);
            let gen = generalize(&table);
            prop_assert_eq!(instantiate(&gen, &table.in_shape).unwrap(), table);
        }
    }
}
