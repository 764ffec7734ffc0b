use proptest::prelude::*;
use robustlr::prefilter::{knn_filter, squared_distance, FilterConfig, NeighborTable};
use robustlr::{SparseDataset, SparseRow};

fn arb_dataset() -> impl Strategy<Value = SparseDataset> {
    (1usize..4, 3usize..25).prop_flat_map(|(m, n)| {
        (
            proptest::collection::vec(proptest::collection::vec(-3i32..4, m), n),
            proptest::collection::vec(0u8..2, n),
        )
            .prop_map(move |(rows, labels)| {
                // small integer grid so distance ties actually happen
                let rows: Vec<Vec<f64>> = rows
                    .into_iter()
                    .map(|r| r.into_iter().map(f64::from).collect())
                    .collect();
                SparseDataset::from_dense(&rows, labels).unwrap()
            })
    })
}

/// Brute force: sort every other row by (distance, index).
fn oracle_discarded(d: &SparseDataset, k: usize) -> Vec<usize> {
    (0..d.n_rows())
        .filter(|&i| {
            let mut others: Vec<(f64, usize)> = (0..d.n_rows())
                .filter(|&j| j != i)
                .map(|j| (squared_distance(d.row(i), d.row(j)), j))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others[..k - 1].iter().any(|&(_, j)| d.labels()[j] != d.labels()[i])
        })
        .collect()
}

proptest! {
    #[test]
    fn filter_matches_brute_force(d in arb_dataset(), k in 1usize..6) {
        prop_assume!(k < d.n_rows());
        let (kept, discarded) = knn_filter(&d, FilterConfig::new(k).unwrap()).unwrap();
        prop_assert_eq!(&discarded, &oracle_discarded(&d, k));
        prop_assert_eq!(kept.n_rows() + discarded.len(), d.n_rows());
    }

    #[test]
    fn one_table_serves_every_k(d in arb_dataset()) {
        let max_k = 5.min(d.n_rows() - 1);
        let table = NeighborTable::build(&d, max_k).unwrap();
        for k in 1..=max_k {
            let (_, direct) = knn_filter(&d, FilterConfig::new(k).unwrap()).unwrap();
            prop_assert_eq!(table.discarded(d.labels(), k).unwrap(), direct);
        }
    }

    #[test]
    fn larger_k_discards_a_superset(d in arb_dataset()) {
        let max_k = 5.min(d.n_rows() - 1);
        let table = NeighborTable::build(&d, max_k).unwrap();
        for k in 2..=max_k {
            let small = table.discarded(d.labels(), k - 1).unwrap();
            let large = table.discarded(d.labels(), k).unwrap();
            prop_assert!(small.iter().all(|i| large.contains(i)));
        }
    }
}

#[test]
fn distance_ignores_storage_of_explicit_zeros() {
    let a = SparseRow::from_dense(&[1.0, 0.0, 2.0]);
    let b = SparseRow::new(vec![2], vec![2.0]).unwrap();
    assert_eq!(squared_distance(&a, &b), 1.0);
}
