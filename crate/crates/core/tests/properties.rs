use proptest::prelude::*;

use fedssp_core::graph::{normalized_laplacian, parse_tudataset, split_dataset, write_tudataset, Graph, GraphDataset};
use fedssp_core::matrix::Matrix;
use fedssp_core::spectral::{graph_spectrum, histogram, js_divergence};

fn arb_graph(max_n: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1..=max_n).prop_flat_map(|n| {
        let pairs = proptest::collection::vec((0..n, 0..n), 0..(n * 2 + 1));
        (Just(n), pairs)
    })
}

fn dataset(graphs: Vec<(usize, Vec<(usize, usize)>)>) -> GraphDataset {
    let graphs: Vec<Graph> = graphs
        .into_iter()
        .enumerate()
        .map(|(i, (n, e))| Graph::from_edges(i, n, &e, i % 2).unwrap())
        .collect();
    GraphDataset {
        name: "P".into(),
        domain: "test".into(),
        graphs,
        num_classes: 2,
        f_in: 1,
        label_values: vec![-1, 1],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn write_then_parse_preserves_structure(graphs in proptest::collection::vec(arb_graph(9), 2..8)) {
        let ds = dataset(graphs);
        let tmp = tempfile::tempdir().unwrap();
        write_tudataset(&ds, tmp.path()).unwrap();
        let back = parse_tudataset(tmp.path(), "P").unwrap();
        prop_assert_eq!(back.graphs.len(), ds.graphs.len());
        prop_assert_eq!(&back.label_values, &ds.label_values);
        for (a, b) in ds.graphs.iter().zip(&back.graphs) {
            prop_assert_eq!(a.n, b.n);
            prop_assert_eq!(&a.edges, &b.edges);
            prop_assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn split_is_a_partition(n in 3usize..80, seed in 0u64..1000) {
        let ds = dataset((0..n).map(|_| (3, vec![(0, 1)])).collect());
        let s = split_dataset(&ds, (0.8, 0.1, 0.1), seed);
        let Ok(s) = s else {
            // Only tiny datasets may fail, and only because a split is empty.
            prop_assert!(((n as f64) * 0.1 + 1e-9).floor() < 1.0);
            return Ok(());
        };
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(s.val.len(), ((n as f64) * 0.1 + 1e-9).floor() as usize);
        prop_assert_eq!(s.clone(), split_dataset(&ds, (0.8, 0.1, 0.1), seed).unwrap());
    }

    #[test]
    fn spectrum_properties((n, edges) in arb_graph(14)) {
        let g = Graph::from_edges(0, n, &edges, 0).unwrap();
        let l = normalized_laplacian(&g);
        let d = graph_spectrum(&g).unwrap();
        prop_assert!(d.reconstruct().max_abs_diff(&l) < 1e-8);
        let u = &d.eigenvectors;
        prop_assert!(u.transpose().matmul(u).max_abs_diff(&Matrix::identity(n)) < 1e-8);
        for w in d.eigenvalues.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        prop_assert!(d.eigenvalues.iter().all(|&x| (-1e-8..=2.0 + 1e-8).contains(&x)));
        // Isolated vertices have L = 1 on the diagonal, so only components
        // with at least one edge contribute a zero eigenvalue.
        let isolated = g.degrees().iter().filter(|&&k| k == 0).count();
        let zeros = d.eigenvalues.iter().filter(|x| x.abs() < 1e-8).count();
        prop_assert_eq!(zeros, g.num_components() - isolated);
    }

    #[test]
    fn spectrum_ignores_node_order((n, edges) in arb_graph(10), seed in 0u64..100) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let g = Graph::from_edges(0, n, &edges, 0).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = graph_spectrum(&g).unwrap().eigenvalues;
        let b = graph_spectrum(&g.permuted(&perm)).unwrap().eigenvalues;
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn jsd_bounds_and_symmetry(
        a in proptest::collection::vec(0.0f64..2.0, 1..40),
        b in proptest::collection::vec(0.0f64..2.0, 1..40),
    ) {
        let p = histogram(a, 10).unwrap();
        let q = histogram(b, 10).unwrap();
        let pq = js_divergence(&p, &q).unwrap();
        let qp = js_divergence(&q, &p).unwrap();
        prop_assert!((0.0..=1.0).contains(&pq));
        prop_assert!((pq - qp).abs() < 1e-12);
        prop_assert!(js_divergence(&p, &p).unwrap().abs() < 1e-12);
    }
}
