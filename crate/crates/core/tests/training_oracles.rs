mod common;

use common::*;
use lightgcn_core::dataset::build_dataset;
use lightgcn_core::evaluation::evaluate_all_ranking;
use lightgcn_core::synthetic::PlantedClusters;
use lightgcn_core::training::{
    backward, bpr_loss, fit, sample_triplets, AdamConfig, L2Mode, LaplacianMode,
};
use lightgcn_core::{
    AdamState, BprTriplet, DenseMatrix, EmbeddingState, EvalSplit, GraphOperator,
    InteractionDataset, LayerWeights, NormScheme, Objective, SparseAdjacency, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn triplets_for(ds: &InteractionDataset, rng: &mut ChaCha8Rng, n: usize) -> Vec<BprTriplet> {
    sample_triplets(ds, n, rng)
}

fn loss_at(
    e0: &DenseMatrix,
    ds: &InteractionDataset,
    op: &GraphOperator,
    w: &LayerWeights,
    obj: &Objective,
    batch: &[BprTriplet],
) -> f64 {
    let mut state = EmbeddingState::from_e0(ds.num_users(), ds.num_items(), e0.clone()).unwrap();
    state.forward(op, w).unwrap();
    bpr_loss(batch, &state, obj, op.matrix().degrees())
        .unwrap()
        .total
}

#[test]
fn gradient_matches_finite_differences_everywhere() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cases = 0;
    let mut worst: f64 = 0.0;
    while cases < 40 {
        let ds = random_dataset(&mut rng, 6, 6, 0.45);
        if ds.num_nodes() > 12 || ds.train_lists().iter().all(|l| l.len() == ds.num_items()) {
            continue;
        }
        let batch = triplets_for(&ds, &mut rng, 6);
        if batch.is_empty() {
            continue;
        }
        cases += 1;
        let adj = SparseAdjacency::from_dataset(&ds);
        let t = rng.gen_range(1..=5);
        let e0 = random_matrix(&mut rng, ds.num_nodes(), t, 1.0);
        for scheme in NormScheme::ALL {
            let op = GraphOperator::normalized(&adj, scheme);
            for k in 0..=3 {
                let alphas: Vec<f64> = (0..=k).map(|_| rng.gen_range(0.1..1.0)).collect();
                let w = LayerWeights::custom(alphas).unwrap();
                let obj = Objective {
                    lambda: 0.05,
                    lambda_g: if k == 0 { 0.1 } else { 0.0 },
                    l2_mode: if cases % 2 == 0 {
                        L2Mode::PerBatch
                    } else {
                        L2Mode::Global
                    },
                    laplacian: if cases % 3 == 0 {
                        LaplacianMode::DegreeNormalized
                    } else {
                        LaplacianMode::Plain
                    },
                };
                let mut state =
                    EmbeddingState::from_e0(ds.num_users(), ds.num_items(), e0.clone()).unwrap();
                state.forward(&op, &w).unwrap();
                let analytic = backward(&batch, &state, &op, &w, &obj, adj.degrees()).unwrap();
                let numeric = finite_difference_gradient(&e0, 1e-6, |x| {
                    loss_at(x, &ds, &op, &w, &obj, &batch)
                });
                let err = max_relative_error(&analytic, &numeric, 1e-4);
                worst = worst.max(err);
                assert!(err < 1e-5, "scheme {scheme} K={k}: relative error {err}");
            }
        }
    }
    assert!(worst < 1e-5);
}

#[test]
fn laplacian_terms_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let ds = random_dataset(&mut rng, 5, 6, 0.5);
    let adj = SparseAdjacency::from_dataset(&ds);
    let op = GraphOperator::normalized(&adj, NormScheme::SymSqrt);
    let e0 = random_matrix(&mut rng, ds.num_nodes(), 3, 1.0);
    let batch = triplets_for(&ds, &mut rng, 8);
    for laplacian in [LaplacianMode::Plain, LaplacianMode::DegreeNormalized] {
        for k in [0, 2] {
            let w = LayerWeights::uniform(k);
            let obj = Objective {
                lambda: 0.0,
                lambda_g: 0.3,
                l2_mode: L2Mode::PerBatch,
                laplacian,
            };
            let mut state =
                EmbeddingState::from_e0(ds.num_users(), ds.num_items(), e0.clone()).unwrap();
            state.forward(&op, &w).unwrap();
            let analytic = backward(&batch, &state, &op, &w, &obj, adj.degrees()).unwrap();
            let numeric =
                finite_difference_gradient(&e0, 1e-6, |x| loss_at(x, &ds, &op, &w, &obj, &batch));
            assert!(max_relative_error(&analytic, &numeric, 1e-3) < 1e-5);
        }
    }
}

#[test]
fn loss_matches_per_triplet_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..20 {
        let ds = random_dataset(&mut rng, 6, 7, 0.4);
        let adj = SparseAdjacency::from_dataset(&ds);
        let op = GraphOperator::normalized(&adj, NormScheme::SymSqrt);
        let e0 = random_matrix(&mut rng, ds.num_nodes(), 4, 1.0);
        let alphas = vec![0.25; 4];
        let w = LayerWeights::custom(alphas.clone()).unwrap();
        let batch = triplets_for(&ds, &mut rng, 10);
        if batch.is_empty() {
            continue;
        }
        let (lambda, lambda_g) = (0.01, 0.02);
        let obj = Objective {
            lambda,
            lambda_g,
            ..Objective::default()
        };
        let mut state =
            EmbeddingState::from_e0(ds.num_users(), ds.num_items(), e0.clone()).unwrap();
        state.forward(&op, &w).unwrap();
        let got = bpr_loss(&batch, &state, &obj, adj.degrees()).unwrap().total;

        let e = dense_combination(&dense_normalized(&ds, "sym-sqrt"), &e0, &alphas);
        let m = ds.num_users();
        let dot = |a: usize, b: usize, mat: &DenseMatrix| -> f64 {
            (0..mat.cols()).map(|c| mat.get(a, c) * mat.get(b, c)).sum()
        };
        let mut expected = 0.0;
        for t in &batch {
            let x = dot(t.user, m + t.pos, &e) - dot(t.user, m + t.neg, &e);
            let sig = 1.0 / (1.0 + (-x).exp());
            expected += -sig.ln();
            expected += lambda
                * (dot(t.user, t.user, &e0)
                    + dot(m + t.pos, m + t.pos, &e0)
                    + dot(m + t.neg, m + t.neg, &e0));
            let diff: f64 = (0..4)
                .map(|c| (e0.get(t.user, c) - e0.get(m + t.pos, c)).powi(2))
                .sum();
            expected += lambda_g * diff;
        }
        expected /= batch.len() as f64;
        assert!((got - expected).abs() <= 1e-12, "{got} vs {expected}");
    }
}

#[test]
fn loss_decreases_with_margin() {
    let ds = InteractionDataset::from_lists(1, 2, vec![vec![0]], vec![], vec![]).unwrap();
    let op = GraphOperator::normalized(&SparseAdjacency::from_dataset(&ds), NormScheme::SymSqrt);
    let obj = Objective {
        lambda: 0.0,
        ..Objective::default()
    };
    let batch = [BprTriplet {
        user: 0,
        pos: 0,
        neg: 1,
    }];
    let mut prev = f64::INFINITY;
    for step in -40..=40 {
        let margin = step as f64 * 0.5;
        // K = 0, e_u = [1], e_i = [margin], e_j = [0]
        let e0 = DenseMatrix::from_vec(3, 1, vec![1.0, margin, 0.0]).unwrap();
        let loss = loss_at(&e0, &ds, &op, &LayerWeights::uniform(0), &obj, &batch);
        assert!(loss < prev, "margin {margin}");
        prev = loss;
    }
    let e0 = DenseMatrix::from_vec(3, 1, vec![1.0, 800.0, 0.0]).unwrap();
    assert!(loss_at(&e0, &ds, &op, &LayerWeights::uniform(0), &obj, &batch) < 1e-300);
}

#[test]
fn negative_sampling_is_uniform_over_non_interacted_items() {
    let ds = InteractionDataset::from_lists(1, 3, vec![vec![0]], vec![], vec![]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2718);
    let n = 100_000;
    let batch = sample_triplets(&ds, n, &mut rng);
    let ones = batch.iter().filter(|t| t.neg == 1).count() as f64;
    assert!(batch.iter().all(|t| t.neg != 0));
    let sigma = (n as f64 * 0.25).sqrt();
    assert!((ones - n as f64 / 2.0).abs() <= 3.0 * sigma, "count {ones}");
}

#[test]
fn positive_pairs_are_uniform_over_interactions() {
    // user 0 has 3 items, user 1 has 1: user 0 should be drawn 3x as often
    let ds =
        InteractionDataset::from_lists(2, 5, vec![vec![0, 1, 2], vec![3]], vec![], vec![]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = sample_triplets(&ds, 40_000, &mut rng);
    let zeros = batch.iter().filter(|t| t.user == 0).count() as f64;
    let sigma = (40_000.0f64 * 0.75 * 0.25).sqrt();
    assert!((zeros - 30_000.0).abs() <= 3.0 * sigma);
}

#[test]
fn adam_on_a_parabola_matches_scalar_recursion() {
    // independent scalar Adam on f(x) = x^2
    let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.1f64);
    let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    let mut oracle = Vec::new();
    for t in 1..=100 {
        let g = 2.0 * x;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        x -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        oracle.push(x);
    }

    let mut adam = AdamState::new(1, 1, AdamConfig::default());
    let mut p = DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap();
    let mut trace = Vec::new();
    for _ in 0..100 {
        let g = DenseMatrix::from_vec(1, 1, vec![2.0 * p.get(0, 0)]).unwrap();
        adam.step(&g, &mut p, lr).unwrap();
        trace.push(p.get(0, 0));
    }
    for (a, b) in trace.iter().zip(&oracle) {
        assert!((a - b).abs() <= 1e-12);
    }
    // the approach to the minimum is monotone until the first overshoot
    let first_cross = trace.iter().position(|x| x.abs() < 0.1).unwrap();
    for w in trace[..first_cross].windows(2) {
        assert!(w[1].abs() < w[0].abs());
    }
    assert!(trace.last().unwrap().abs() < 0.2);
}

fn synthetic(
    seed: u64,
    users: usize,
    items: usize,
    clusters: usize,
    per_user: usize,
) -> InteractionDataset {
    let gen = PlantedClusters {
        num_users: users,
        num_items: items,
        num_clusters: clusters,
        interactions_per_user: per_user,
        in_cluster_prob: 0.9,
        test_fraction: 0.2,
    };
    let (train, test) = gen.generate(seed).unwrap();
    build_dataset(&train, &test, 0.25, seed).unwrap().dataset
}

#[test]
fn training_improves_validation_recall_on_planted_blocks() {
    let ds = synthetic(3, 20, 30, 2, 10);
    let op = GraphOperator::normalized(&SparseAdjacency::from_dataset(&ds), NormScheme::SymSqrt);
    let w = LayerWeights::uniform(2);
    let mut state = EmbeddingState::init(ds.num_users(), ds.num_items(), 16, 3).unwrap();
    state.forward(&op, &w).unwrap();
    let before = evaluate_all_ranking(&state, &ds, EvalSplit::Validation, 20)
        .unwrap()
        .recall;
    let config = TrainConfig {
        learning_rate: 0.01,
        batch_size: 64,
        epochs: 100,
        eval_every: 10,
        seed: 3,
        ..TrainConfig::default()
    };
    let result = fit(&ds, &config, &mut state, &op, &w).unwrap();
    assert!(result.best_val_recall.unwrap() > before);
    assert_eq!(
        evaluate_all_ranking(&state, &ds, EvalSplit::Validation, 20)
            .unwrap()
            .recall,
        result.best_val_recall.unwrap()
    );
}

#[test]
fn heavy_regularization_hurts() {
    let ds = synthetic(5, 60, 90, 6, 15);
    let op = GraphOperator::normalized(&SparseAdjacency::from_dataset(&ds), NormScheme::SymSqrt);
    let w = LayerWeights::uniform(2);
    let recall = |lambda: f64| {
        let mut state = EmbeddingState::init(ds.num_users(), ds.num_items(), 16, 5).unwrap();
        let config = TrainConfig {
            learning_rate: 0.01,
            batch_size: 128,
            epochs: 60,
            eval_every: 10,
            seed: 5,
            objective: Objective {
                lambda,
                ..Objective::default()
            },
            ..TrainConfig::default()
        };
        fit(&ds, &config, &mut state, &op, &w).unwrap();
        evaluate_all_ranking(&state, &ds, EvalSplit::Test, 20)
            .unwrap()
            .recall
    };
    let (none, mild, strong) = (recall(0.0), recall(1e-4), recall(1e-1));
    assert!(
        strong < mild,
        "lambda sweep: 0 -> {none}, 1e-4 -> {mild}, 1e-1 -> {strong}"
    );
}

#[test]
fn training_is_reproducible() {
    let ds = synthetic(8, 20, 30, 2, 10);
    let op = GraphOperator::normalized(&SparseAdjacency::from_dataset(&ds), NormScheme::SymSqrt);
    let run = || {
        let mut state = EmbeddingState::init(ds.num_users(), ds.num_items(), 8, 8).unwrap();
        let config = TrainConfig {
            epochs: 15,
            eval_every: 5,
            batch_size: 32,
            seed: 8,
            ..TrainConfig::default()
        };
        let r = fit(&ds, &config, &mut state, &op, &LayerWeights::uniform(2)).unwrap();
        (r, state.e0().clone())
    };
    let (a, ea) = run();
    let (b, eb) = run();
    assert_eq!(a, b);
    assert_eq!(ea, eb);
    assert_eq!(a.curve.len(), 15);
    assert!(a
        .curve
        .iter()
        .all(|r| r.val_recall.is_some() == (r.epoch % 5 == 0)));
}

#[test]
fn early_stopping_respects_patience() {
    let ds = synthetic(9, 20, 30, 2, 10);
    let op = GraphOperator::normalized(&SparseAdjacency::from_dataset(&ds), NormScheme::SymSqrt);
    let mut state = EmbeddingState::init(ds.num_users(), ds.num_items(), 8, 9).unwrap();
    // a vanishing learning rate never improves validation after the first round
    let config = TrainConfig {
        learning_rate: 1e-12,
        epochs: 500,
        eval_every: 1,
        patience: 3,
        batch_size: 64,
        seed: 9,
        ..TrainConfig::default()
    };
    let r = fit(&ds, &config, &mut state, &op, &LayerWeights::uniform(1)).unwrap();
    assert!(r.stopped_early);
    assert_eq!(r.epochs_run, 4);
    assert_eq!(r.best_epoch, Some(1));
}

#[test]
fn trainable_parameter_count_is_mf_sized() {
    let ds = synthetic(1, 20, 30, 2, 10);
    let state = EmbeddingState::init(ds.num_users(), ds.num_items(), 64, 0).unwrap();
    assert_eq!(state.num_parameters(), (20 + 30) * 64);
}
