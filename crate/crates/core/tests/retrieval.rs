mod common;

use matchforge::io::{write_tensors, Tensor};
use matchforge::retrieval::{
    load_global_descriptors, pairwise_distances, shortlist_pairs, GlobalDescriptor, Metric, DEFAULT_NEIGHBORS,
};
use matchforge::Error;
use proptest::prelude::*;

fn collection() -> impl Strategy<Value = Vec<Vec<f32>>> {
    (2usize..24, 1usize..12).prop_flat_map(|(m, d)| {
        prop::collection::vec(prop::collection::vec(-4i8..=4, d), m)
            .prop_map(|rows| rows.into_iter().map(|r| r.into_iter().map(|v| v as f32 * 0.25).collect()).collect())
    })
}

fn descriptors(rows: &[Vec<f32>]) -> Vec<GlobalDescriptor> {
    rows.iter()
        .enumerate()
        .map(|(i, v)| GlobalDescriptor::new(format!("img{i:03}"), v.clone()))
        .collect()
}

fn shortlist_of(
    ds: &[GlobalDescriptor],
    n: usize,
    threshold: Option<f64>,
) -> Vec<(String, String, f64)> {
    let matrix = pairwise_distances(ds, Metric::Euclidean).unwrap();
    let ids: Vec<String> = ds.iter().map(|d| d.image_id.clone()).collect();
    shortlist_pairs(&matrix, &ids, n, threshold)
        .unwrap()
        .pairs
        .into_iter()
        .map(|p| (p.id_a, p.id_b, p.distance))
        .collect()
}

#[test]
fn worked_example_with_tie_break() {
    let ds = vec![
        GlobalDescriptor::new("1", vec![1.0, 0.0]),
        GlobalDescriptor::new("2", vec![1.0, 0.0]),
        GlobalDescriptor::new("3", vec![0.0, 1.0]),
    ];
    let got = shortlist_of(&ds, 1, None);
    assert_eq!(got.len(), 2);
    assert_eq!((got[0].0.as_str(), got[0].1.as_str(), got[0].2), ("1", "2", 0.0));
    assert_eq!((got[1].0.as_str(), got[1].1.as_str()), ("1", "3"));
    assert!((got[1].2 - 2f64.sqrt()).abs() < 1e-6);
    let got = shortlist_of(&ds, 1, Some(0.5));
    assert_eq!(got.len(), 1);
    let got = shortlist_of(&ds, DEFAULT_NEIGHBORS, None);
    assert_eq!(got.len(), 3);
}

#[test]
fn loads_named_and_unnamed_collections() {
    let dir = tempfile::tempdir().unwrap();
    let named = dir.path().join("named.mft");
    let t = Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
        .unwrap()
        .with_names(vec!["b.jpg".into(), "a.jpg".into()])
        .unwrap();
    write_tensors(&named, &[t]).unwrap();
    let ds = load_global_descriptors(&named).unwrap();
    assert_eq!(ds[0].image_id, "b.jpg");
    assert_eq!(ds[1].vector(), &[0.0, 1.0, 0.0]);

    let mixed = dir.path().join("mixed.mft");
    let a = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
    let b = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
    write_tensors(&mixed, &[a, b]).unwrap();
    assert!(matches!(
        load_global_descriptors(&mixed),
        Err(Error::InconsistentDimension { .. })
    ));
}

#[test]
fn distances_match_brute_force_on_random_collections() {
    let mut rng = common::rng(7);
    for trial in 0..100 {
        let m = 2 + trial % 31;
        let d = 1 + (trial * 7) % 64;
        let rows: Vec<Vec<f32>> = (0..m)
            .map(|_| common::random_unit_rows(&mut rng, 1, d))
            .collect();
        let ds = descriptors(&rows);
        for (metric, cosine) in [(Metric::Euclidean, false), (Metric::Cosine, true)] {
            let got = pairwise_distances(&ds, metric).unwrap();
            let want = common::oracle_matrix(&rows, cosine);
            for i in 0..m {
                for j in 0..m {
                    let w = if cosine { want[i][j].max(0.0) } else { want[i][j] };
                    assert!((got.get(i, j) - w).abs() <= 1e-6, "trial {trial} ({i},{j})");
                }
            }
            assert!(got.is_symmetric());
        }
    }
}

proptest! {
    #[test]
    fn shortlist_matches_oracle(rows in collection(), n in 1usize..30, thr in prop::option::of(0.0f64..3.0)) {
        let ds = descriptors(&rows);
        let ids: Vec<String> = ds.iter().map(|d| d.image_id.clone()).collect();
        let got = shortlist_of(&ds, n, thr);
        let (want, exhaustive) = common::oracle_shortlist(&common::oracle_matrix(&rows, false), &ids, n, thr);
        prop_assert_eq!(exhaustive, rows.len() <= n);
        prop_assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            prop_assert_eq!((&g.0, &g.1), (&w.0, &w.1));
            prop_assert!((g.2 - w.2).abs() <= 1e-6);
        }
    }

    #[test]
    fn shortlist_is_permutation_invariant(rows in collection(), n in 1usize..6, shift in 0usize..100) {
        let ds = descriptors(&rows);
        let mut shuffled = ds.clone();
        let k = shift % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        prop_assert_eq!(shortlist_of(&ds, n, None), shortlist_of(&shuffled, n, None));
    }

    #[test]
    fn n_of_m_minus_one_is_exhaustive(rows in collection()) {
        let ds = descriptors(&rows);
        let m = ds.len();
        let full = shortlist_of(&ds, m - 1, None);
        prop_assert_eq!(full.len(), m * (m - 1) / 2);
        prop_assert_eq!(full, shortlist_of(&ds, DEFAULT_NEIGHBORS.max(m), None));
    }

    #[test]
    fn shortlist_output_invariants(rows in collection(), n in 1usize..6, thr in prop::option::of(0.0f64..2.0)) {
        let got = shortlist_of(&descriptors(&rows), n, thr);
        for w in got.windows(2) {
            prop_assert!((w[0].2, &w[0].0, &w[0].1) < (w[1].2, &w[1].0, &w[1].1));
        }
        for p in &got {
            prop_assert!(p.0 < p.1);
            if let Some(t) = thr {
                prop_assert!(p.2 <= t);
            }
        }
    }
}
