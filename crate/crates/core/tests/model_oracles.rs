mod common;

use common::*;
use lightgcn_core::model::propagate;
use lightgcn_core::{
    DenseMatrix, EmbeddingState, GraphOperator, InteractionDataset, LayerWeights, NormScheme,
    SparseAdjacency,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn binomial_weights_on_raw_adjacency_equal_dense_square() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let ds = random_dataset(&mut rng, 6, 6, 0.4);
        let adj = SparseAdjacency::from_dataset(&ds);
        let e0 = random_matrix(&mut rng, ds.num_nodes(), 3, 1.0);
        let w = LayerWeights::custom(vec![1.0, 2.0, 1.0]).unwrap();
        let (_, combined) = propagate(&e0, &GraphOperator::unnormalized(&adj), &w).unwrap();
        let a_plus_i = identity_plus(&dense_adjacency(&ds));
        let oracle = dense_matmul(&dense_square(&a_plus_i), &e0);
        assert!(combined.max_abs_diff(&oracle).unwrap() <= 1e-12);
    }
}

#[test]
fn forward_matches_dense_combination_for_every_scheme() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..30 {
        let ds = random_dataset(&mut rng, 7, 7, 0.35);
        let adj = SparseAdjacency::from_dataset(&ds);
        let e0 = random_matrix(&mut rng, ds.num_nodes(), 4, 1.0);
        for scheme in NormScheme::ALL {
            let op = GraphOperator::normalized(&adj, scheme);
            let alphas: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
            let w = LayerWeights::custom(alphas.clone()).unwrap();
            let mut state =
                EmbeddingState::from_e0(ds.num_users(), ds.num_items(), e0.clone()).unwrap();
            state.forward(&op, &w).unwrap();
            let oracle = dense_combination(&dense_normalized(&ds, scheme.name()), &e0, &alphas);
            assert!(state.combined().unwrap().max_abs_diff(&oracle).unwrap() <= 1e-12);
            assert_eq!(state.num_cached_layers(), 3);
            assert!(state.combined().unwrap().is_finite());
        }
    }
}

#[test]
fn xavier_entries_have_zero_mean() {
    // 100_000 draws from U(-b, b): sigma = b / sqrt(3)
    let state = EmbeddingState::init(1000, 563, 64, 99).unwrap();
    let values = state.e0().as_slice();
    assert!(values.len() >= 100_000);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let bound = (6.0f64 / 128.0).sqrt();
    let sigma = bound / 3f64.sqrt();
    assert!(mean.abs() <= 3.0 * sigma / n.sqrt(), "mean {mean}");
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert!((var - sigma * sigma).abs() < 0.02 * sigma * sigma);
}

#[test]
fn score_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ds = random_dataset(&mut rng, 6, 8, 0.5);
    let op = GraphOperator::normalized(&SparseAdjacency::from_dataset(&ds), NormScheme::SymSqrt);
    let mut state = EmbeddingState::init(ds.num_users(), ds.num_items(), 5, 4).unwrap();
    state.forward(&op, &LayerWeights::uniform(2)).unwrap();
    let e = state.combined().unwrap().clone();
    let m = ds.num_users();
    for u in 0..m {
        for i in 0..ds.num_items() {
            let mut acc = 0.0;
            for c in 0..5 {
                acc += e.get(u, c) * e.get(m + i, c);
            }
            assert!((state.score(u, i).unwrap() - acc).abs() <= 1e-15);
        }
    }
}

#[test]
fn score_all_items_top20_matches_per_item_oracle() {
    let ds =
        InteractionDataset::from_lists(3, 100, vec![vec![0, 5], vec![7], vec![99]], vec![], vec![])
            .unwrap();
    let op = GraphOperator::normalized(&SparseAdjacency::from_dataset(&ds), NormScheme::SymSqrt);
    let mut state = EmbeddingState::init(3, 100, 8, 123).unwrap();
    state.forward(&op, &LayerWeights::uniform(1)).unwrap();
    for u in 0..3 {
        let scores = state.score_all_items(u, &[]).unwrap();
        let mut oracle: Vec<(f64, usize)> =
            (0..100).map(|i| (state.score(u, i).unwrap(), i)).collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let expected: Vec<usize> = oracle.iter().take(20).map(|x| x.1).collect();
        assert_eq!(lightgcn_core::evaluation::top_k(&scores, 20), expected);
    }
    let all: Vec<usize> = (0..100).collect();
    assert!(state
        .score_all_items(0, &all)
        .unwrap()
        .iter()
        .all(|&s| s == f64::NEG_INFINITY));
}

#[test]
fn swapping_sides_preserves_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..20 {
        let ds = random_dataset(&mut rng, 6, 7, 0.4);
        let (m, n) = (ds.num_users(), ds.num_items());
        let mut item_lists = vec![Vec::new(); n];
        for u in 0..m {
            for &i in ds.train(u) {
                item_lists[i].push(u);
            }
        }
        let Ok(flipped) = InteractionDataset::from_lists(n, m, item_lists, vec![], vec![]) else {
            continue;
        };
        let e0 = random_matrix(&mut rng, m + n, 3, 1.0);
        let e0_flipped = DenseMatrix::from_fn(m + n, 3, |r, c| {
            if r < n {
                e0.get(m + r, c)
            } else {
                e0.get(r - n, c)
            }
        });
        let w = LayerWeights::uniform(3);
        let mut a = EmbeddingState::from_e0(m, n, e0).unwrap();
        a.forward(
            &GraphOperator::normalized(&SparseAdjacency::from_dataset(&ds), NormScheme::SymSqrt),
            &w,
        )
        .unwrap();
        let mut b = EmbeddingState::from_e0(n, m, e0_flipped).unwrap();
        b.forward(
            &GraphOperator::normalized(
                &SparseAdjacency::from_dataset(&flipped),
                NormScheme::SymSqrt,
            ),
            &w,
        )
        .unwrap();
        for u in 0..m {
            for i in 0..n {
                assert!((a.score(u, i).unwrap() - b.score(i, u).unwrap()).abs() <= 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn forward_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0, k in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = random_dataset(&mut rng, 8, 8, 0.35);
        let op = GraphOperator::normalized(&SparseAdjacency::from_dataset(&ds), NormScheme::SymSqrt);
        let w = LayerWeights::uniform(k);
        let e = random_matrix(&mut rng, ds.num_nodes(), 3, 1.0);
        let f = random_matrix(&mut rng, ds.num_nodes(), 3, 1.0);
        let mut mix = e.clone();
        mix.scale(a);
        mix.axpy(b, &f).unwrap();
        let (_, pe) = propagate(&e, &op, &w).unwrap();
        let (_, pf) = propagate(&f, &op, &w).unwrap();
        let (_, pmix) = propagate(&mix, &op, &w).unwrap();
        let mut expected = pe;
        expected.scale(a);
        expected.axpy(b, &pf).unwrap();
        prop_assert!(pmix.max_abs_diff(&expected).unwrap() <= 1e-10);
    }
}
