use super::*;
use crate::lineage::testutil::running_example;
use crate::lineage::{ArrayMeta, LineageRelation, LineageRow};
use crate::provrc::{compress, decompress, CompressedRow};

fn r(lo: i64, hi: i64) -> IndexRange {
    IndexRange::new(lo, hi)
}

fn running_store() -> InMemoryStore {
    let rel = running_example();
    let mut store = InMemoryStore::new();
    store.add_array(rel.in_array.clone());
    store.add_array(rel.out_array.clone());
    store.add_table(compress(&rel, Direction::Backward));
    store.add_table(compress(&rel, Direction::Forward));
    store
}

fn conv_table() -> CompressedTable {
    CompressedTable {
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
    }
}

#[test]
fn encode_query_merges_adjacent_cells() {
    let got = encode_query(&[vec![1], vec![2]], &[3]).unwrap();
    assert_eq!(got, vec![vec![r(1, 2)]]);
}

#[test]
fn encode_query_single_cell() {
    let got = encode_query(&[vec![3, 7]], &[5, 9]).unwrap();
    assert_eq!(got, vec![vec![r(3, 3), r(7, 7)]]);
}

#[test]
fn encode_query_matches_column_oracle() {
    let cells: Vec<Vec<i64>> = [1, 2, 5, 6, 7].iter().map(|&v| vec![v]).collect();
    let got = encode_query(&cells, &[9]).unwrap();
    let oracle = crate::provrc::range_encode_column(&[1, 2, 5, 6, 7]).unwrap();
    assert_eq!(got, oracle.into_iter().map(|x| vec![x]).collect::<Vec<_>>());
}

#[test]
fn encode_query_rejects_out_of_bounds() {
    assert!(matches!(
        encode_query(&[vec![4]], &[3]),
        Err(QueryError::OutOfBounds { .. })
    ));
}

#[test]
fn range_join_running_example_preserves_lineage() {
    let table = compress(&running_example(), Direction::Backward);
    let (joined, _) = range_join(&[vec![r(1, 2)]], &table).unwrap();
    assert_eq!(joined.len(), 1);
    assert_eq!(joined[0].anchor, vec![r(1, 2)]);
    assert_eq!(joined[0].free_abs, vec![None, Some(r(1, 2))]);
    assert_eq!(joined[0].free_rel, vec![vec![Some(r(0, 0))], vec![None]]);
}

#[test]
fn range_join_disjoint_produces_nothing() {
    let table = CompressedTable {
        direction: Direction::Backward,
        op: String::new(),
        out_array: "B".into(),
        in_array: "A".into(),
        out_shape: vec![9],
        in_shape: vec![9],
        rows: vec![CompressedRow {
            anchor: vec![r(5, 9)],
            free_abs: vec![Some(r(1, 1))],
            free_rel: vec![vec![None]],
        }],
    };
    let (joined, _) = range_join(&[vec![r(1, 2)]], &table).unwrap();
    assert!(joined.is_empty());
}

#[test]
fn range_join_window_row() {
    let (joined, _) = range_join(&[vec![r(2, 2)]], &conv_table()).unwrap();
    assert_eq!(joined.len(), 1);
    assert_eq!(joined[0].anchor, vec![r(2, 2)]);
    assert_eq!(joined[0].free_rel, vec![vec![Some(r(-1, 1))]]);

    // Brute-force pair enumeration over the row denotation agrees.
    let rel = decompress(&conv_table()).unwrap();
    let expected: std::collections::BTreeSet<i64> = rel
        .rows
        .iter()
        .filter(|row| row.out_idx[0] == 2)
        .map(|row| row.in_idx[0])
        .collect();
    let derel = derelativize(joined, &conv_table()).unwrap();
    let got: std::collections::BTreeSet<i64> =
        derel.iter().flat_map(|(_, f)| f[0].lo..=f[0].hi).collect();
    assert_eq!(got, expected);
}

#[test]
fn range_join_rejects_schema_mismatch() {
    let table = compress(&running_example(), Direction::Backward);
    assert!(matches!(
        range_join(&[vec![r(1, 1), r(1, 1)]], &table),
        Err(QueryError::AttrMismatch { got: 2, expected: 1 })
    ));
}

#[test]
fn rel_back_shifts_bounds() {
    assert_eq!(rel_back(r(1, 2), r(0, 0)), r(1, 2));
    assert_eq!(rel_back(r(7, 7), r(0, 0)), r(7, 7));
    assert_eq!(rel_back(r(2, 2), r(-1, 1)), r(1, 3));
}

#[test]
fn rel_for_matches_enumeration() {
    // Forward one-to-one row: query a1=[1,2] resolves b1=[1,2].
    assert_eq!(rel_for(r(1, 2), r(1, 3), r(0, 0)), r(1, 2));
    // Unrestricted query returns the row's full opposite interval.
    assert_eq!(rel_for(r(1, 3), r(1, 3), r(0, 0)), r(1, 3));
    // Enumeration oracle: a=3 with offsets -1..=1 reaches {2,3,4}.
    assert_eq!(rel_for(r(3, 3), r(1, 3), r(-1, 1)), r(2, 4));
}

#[test]
fn derelativize_produces_final_table() {
    let table = compress(&running_example(), Direction::Backward);
    let (joined, _) = range_join(&[vec![r(1, 2)]], &table).unwrap();
    let rows = derelativize(joined, &table).unwrap();
    assert_eq!(rows, vec![(vec![r(1, 2)], vec![r(1, 2), r(1, 2)])]);
}

#[test]
fn derelativize_keeps_absolute_rows() {
    let table = CompressedTable {
        direction: Direction::Backward,
        op: String::new(),
        out_array: "B".into(),
        in_array: "A".into(),
        out_shape: vec![4],
        in_shape: vec![4],
        rows: vec![CompressedRow {
            anchor: vec![r(1, 4)],
            free_abs: vec![Some(r(2, 3))],
            free_rel: vec![vec![None]],
        }],
    };
    let (joined, _) = range_join(&[vec![r(2, 4)]], &table).unwrap();
    let rows = derelativize(joined, &table).unwrap();
    assert_eq!(rows, vec![(vec![r(2, 4)], vec![r(2, 3)])]);
}

#[test]
fn project_and_merge_joins_adjacent_rows() {
    let rows = vec![vec![r(1, 2)], vec![r(3, 4)]];
    assert_eq!(project_and_merge(rows, &[0]), vec![vec![r(1, 4)]]);
}

#[test]
fn project_and_merge_joins_overlapping_rows() {
    let rows = vec![vec![r(1, 3)], vec![r(2, 5)]];
    let merged = project_and_merge(rows.clone(), &[0]);
    assert_eq!(merged, vec![vec![r(1, 5)]]);
    assert_eq!(cell_set_of_rows(&merged), cell_set_of_rows(&rows));
}

#[test]
fn project_and_merge_projects_final_table() {
    let rows = vec![vec![r(1, 2), r(1, 2), r(1, 2)]];
    assert_eq!(
        project_and_merge(rows, &[1, 2]),
        vec![vec![r(1, 2), r(1, 2)]]
    );
}

#[test]
fn project_and_merge_drops_contained_rows() {
    let rows = vec![vec![r(1, 5), r(1, 5)], vec![r(2, 3), r(2, 4)]];
    let merged = project_and_merge(rows, &[0, 1]);
    assert_eq!(merged, vec![vec![r(1, 5), r(1, 5)]]);
}

#[test]
fn prov_query_running_example_backward() {
    let store = running_store();
    let spec = QuerySpec {
        path: vec!["B".into(), "A".into()],
        cells: QueryCells::Tuples(vec![vec![1], vec![2]]),
    };
    let (result, stats) = prov_query(&store, &spec, &QueryConfig::default()).unwrap();
    assert_eq!(result.rows, vec![vec![r(1, 2), r(1, 2)]]);
    assert_eq!(
        result.paired,
        Some(vec![PairedRow {
            query: vec![r(1, 2)],
            target: vec![r(1, 2), r(1, 2)],
        }])
    );
    assert_eq!(stats.decompress_delta, 0);
}

#[test]
fn prov_query_identity_round_trip() {
    let a = ArrayMeta::new("A", vec![6]).unwrap();
    let b = ArrayMeta::new("B", vec![6]).unwrap();
    let rel = LineageRelation::with_rows(
        b.clone(),
        a.clone(),
        (1..=6i64).map(|k| LineageRow::new(vec![k], vec![k])),
    );
    let mut store = InMemoryStore::new();
    store.add_array(a);
    store.add_array(b);
    store.add_table(compress(&rel, Direction::Backward));
    let spec = QuerySpec {
        path: vec!["B".into(), "A".into()],
        cells: QueryCells::Tuples(vec![vec![2], vec![3], vec![5]]),
    };
    let (result, _) = prov_query(&store, &spec, &QueryConfig::default()).unwrap();
    assert_eq!(result.rows, vec![vec![r(2, 3)], vec![r(5, 5)]]);
}

#[test]
fn prov_query_forward_direction() {
    let store = running_store();
    let spec = QuerySpec {
        path: vec!["A".into(), "B".into()],
        cells: QueryCells::Tuples(vec![vec![2, 1]]),
    };
    let (result, _) = prov_query(&store, &spec, &QueryConfig::default()).unwrap();
    assert_eq!(result.rows, vec![vec![r(2, 2)]]);
}

#[test]
fn prov_query_errors() {
    let store = running_store();
    let config = QueryConfig::default();
    let missing = QuerySpec {
        path: vec!["B".into(), "Z".into()],
        cells: QueryCells::Tuples(vec![vec![1]]),
    };
    assert!(matches!(
        prov_query(&store, &missing, &config),
        Err(QueryError::MissingEdge { .. })
    ));
    let empty = QuerySpec {
        path: vec!["B".into(), "A".into()],
        cells: QueryCells::Tuples(vec![]),
    };
    assert!(matches!(
        prov_query(&store, &empty, &config),
        Err(QueryError::EmptyQuery)
    ));
    let short = QuerySpec {
        path: vec!["B".into()],
        cells: QueryCells::Tuples(vec![vec![1]]),
    };
    assert!(matches!(
        prov_query(&store, &short, &config),
        Err(QueryError::PathTooShort)
    ));
    let wrong_direction = QuerySpec {
        path: vec!["B".into(), "A".into()],
        cells: QueryCells::Tuples(vec![vec![1]]),
    };
    let forced = QueryConfig {
        direction: DirectionMode::Forward,
        ..QueryConfig::default()
    };
    assert!(matches!(
        prov_query(&store, &wrong_direction, &forced),
        Err(QueryError::DirectionUnavailable { .. })
    ));
}

#[test]
fn prov_query_row_cap() {
    let store = running_store();
    let spec = QuerySpec {
        path: vec!["B".into(), "A".into()],
        cells: QueryCells::Tuples(vec![vec![1], vec![3]]),
    };
    let config = QueryConfig {
        row_cap: 1,
        ..QueryConfig::default()
    };
    assert!(matches!(
        prov_query(&store, &spec, &config),
        Err(QueryError::RowCapExceeded { cap: 1 })
    ));
}

#[test]
fn canonicalize_fragments_and_rejoins() {
    // Overlapping 2-d rows with different suffixes split exactly.
    let rows = vec![
        vec![r(1, 4), r(1, 1)],
        vec![r(3, 6), r(1, 2)],
    ];
    let canon = canonicalize(rows.clone());
    assert_eq!(cell_set_of_rows(&canon), cell_set_of_rows(&rows));
    // Disjoint per prefix.
    for (i, a) in canon.iter().enumerate() {
        for b in canon.iter().skip(i + 1) {
            let overlap = a
                .iter()
                .zip(b)
                .all(|(x, y)| x.intersect(y).is_some());
            assert!(!overlap, "rows {a:?} and {b:?} overlap");
        }
    }
    // Idempotent.
    assert_eq!(canonicalize(canon.clone()), canon);
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    prop_compose! {
        fn arb_edge()(
            out_extent in 1u64..=8,
            in_shape in proptest::collection::vec(1u64..=5, 1..=2),
        )(
            rows in proptest::collection::btree_set(
                (1i64..=8, proptest::collection::vec(1i64..=5, in_shape.len())),
                1..=40,
            ),
            out_extent in Just(out_extent),
            in_shape in Just(in_shape),
        ) -> LineageRelation {
            let out_array = ArrayMeta::new("B", vec![out_extent]).unwrap();
            let in_array = ArrayMeta::new("A", in_shape.clone()).unwrap();
            let rows = rows.into_iter().map(|(o, i)| {
                let o = o.min(out_extent as i64);
                let i = i.into_iter().zip(&in_shape).map(|(v, &d)| v.min(d as i64)).collect();
                LineageRow::new(vec![o], i)
            });
            crate::lineage::canonical_sort(LineageRelation::with_rows(out_array, in_array, rows))
        }
    }

    proptest! {
        /// Per-row soundness and completeness: joining one query interval
        /// against a compressed table and de-relativizing returns exactly
        /// the opposite-side cells related to the queried cells.
        #[test]
        fn single_hop_matches_enumeration(
            rel in arb_edge(),
            direction in prop_oneof![Just(Direction::Backward), Just(Direction::Forward)],
            q_lo in 1i64..=8,
            q_width in 0i64..=4,
        ) {
            let table = compress(&rel, direction);
            let anchor_extent = table.anchor_shape()[0] as i64;
            let q_lo = q_lo.min(anchor_extent);
            let q_hi = (q_lo + q_width).min(anchor_extent);
            let anchors = table.anchor_dim();
            let query: Vec<Vec<IndexRange>> = vec![
                std::iter::once(IndexRange::new(q_lo, q_hi))
                    .chain((1..anchors).map(|j| {
                        IndexRange::new(1, table.anchor_shape()[j] as i64)
                    }))
                    .collect(),
            ];
            let (joined, _) = range_join(&query, &table).unwrap();
            let derel = derelativize(joined, &table).unwrap();
            let free_rows: Vec<Vec<IndexRange>> = derel.into_iter().map(|(_, f)| f).collect();
            let got = cell_set_of_rows(&free_rows);

            let expected: std::collections::BTreeSet<Vec<i64>> = rel
                .rows
                .iter()
                .filter_map(|row| {
                    let (anchor_idx, free_idx) = match direction {
                        Direction::Backward => (&row.out_idx, &row.in_idx),
                        Direction::Forward => (&row.in_idx, &row.out_idx),
                    };
                    query[0]
                        .iter()
                        .zip(anchor_idx)
                        .all(|(r, &v)| r.contains(v))
                        .then(|| free_idx.clone())
                })
                .collect();
            prop_assert_eq!(got, expected);
        }

        /// Growing the query cell set never shrinks the result.
        #[test]
        fn query_monotonicity(
            rel in arb_edge(),
            cells in proptest::collection::btree_set(1i64..=8, 1..=6),
            extra in proptest::collection::btree_set(1i64..=8, 0..=4),
        ) {
            let out_extent = rel.out_array.shape[0] as i64;
            let small: Vec<Vec<i64>> = cells.iter().map(|&c| vec![c.min(out_extent)]).collect();
            let mut big = small.clone();
            big.extend(extra.iter().map(|&c| vec![c.min(out_extent)]));

            let mut store = InMemoryStore::new();
            store.add_array(rel.in_array.clone());
            store.add_array(rel.out_array.clone());
            store.add_table(compress(&rel, Direction::Backward));
            let config = QueryConfig::default();
            let query = |cells: Vec<Vec<i64>>| {
                let spec = QuerySpec {
                    path: vec!["B".into(), "A".into()],
                    cells: QueryCells::Tuples(cells),
                };
                prov_query(&store, &spec, &config).unwrap().0.cell_set()
            };
            let small_set = query(small);
            let big_set = query(big);
            prop_assert!(small_set.is_subset(&big_set));
        }

        /// Canonicalization never changes the denoted cell set and yields
        /// prefix-disjoint rows.
        #[test]
        fn canonicalize_preserves_cells(
            rows in proptest::collection::vec(
                proptest::collection::vec((1i64..=9, 0i64..=3), 2..=2),
                1..=8,
            )
        ) {
            let rows: Vec<Vec<IndexRange>> = rows
                .into_iter()
                .map(|row| row.into_iter().map(|(lo, w)| IndexRange::new(lo, lo + w)).collect())
                .collect();
            let canon = canonicalize(rows.clone());
            prop_assert_eq!(cell_set_of_rows(&canon), cell_set_of_rows(&rows));
            let total: u64 = canon
                .iter()
                .map(|row| row.iter().map(IndexRange::width).product::<u64>())
                .sum();
            prop_assert_eq!(total as usize, cell_set_of_rows(&canon).len());
        }
    }
}
