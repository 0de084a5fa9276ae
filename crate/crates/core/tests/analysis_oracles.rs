#![allow(clippy::needless_range_loop)]
mod common;

use common::*;
use lightgcn_core::analysis::{
    appnp_equivalent_alphas, check_appnp_identity, check_sgcn_identity, embedding_smoothness,
    second_order_coefficient, sgcn_equivalent_alphas, teleport_propagation, CoInteraction, Side,
    SmoothnessNorm,
};
use lightgcn_core::model::propagate;
use lightgcn_core::{
    DenseMatrix, GraphOperator, InteractionDataset, LayerWeights, NormScheme, SparseAdjacency,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn coefficient_equals_user_block_of_squared_operator() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..100 {
        let ds = random_dataset(&mut rng, 10, 10, 0.3);
        let sq = dense_square(&dense_normalized(&ds, "sym-sqrt"));
        for u in 0..ds.num_users() {
            for v in 0..ds.num_users() {
                let c = second_order_coefficient(&ds, u, v);
                assert!(
                    (c - sq[u][v]).abs() <= 1e-12,
                    "({u},{v}) {c} vs {}",
                    sq[u][v]
                );
            }
        }
        let co = CoInteraction::new(&ds);
        let m = ds.num_users();
        for i in 0..ds.num_items() {
            for j in 0..ds.num_items() {
                assert!((co.coefficient(Side::Item, i, j) - sq[m + i][m + j]).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn scaled_coefficient_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..50 {
        let ds = random_dataset(&mut rng, 10, 10, 0.3);
        for u in 0..ds.num_users() {
            for v in 0..ds.num_users() {
                let (du, dv) = (ds.train(u).len() as f64, ds.train(v).len() as f64);
                let lhs = (du * dv).sqrt() * second_order_coefficient(&ds, u, v);
                let rhs = (du * dv).sqrt() * second_order_coefficient(&ds, v, u);
                assert!((lhs - rhs).abs() <= 1e-15);
            }
        }
    }
}

fn smoothness_oracle(e: &DenseMatrix, ds: &InteractionDataset, norm: SmoothnessNorm) -> f64 {
    let m = ds.num_users();
    let item_deg = ds.item_degrees();
    let scaled = |u: usize| -> Option<Vec<f64>> {
        let row = e.row(u);
        let sq: f64 = row.iter().map(|x| x * x).sum();
        if sq == 0.0 {
            return None;
        }
        let d = if norm == SmoothnessNorm::Unit {
            sq.sqrt()
        } else {
            sq
        };
        Some(row.iter().map(|x| x / d).collect())
    };
    let mut total = 0.0;
    for u in 0..m {
        for v in 0..m {
            let shared: Vec<usize> = ds
                .train(u)
                .iter()
                .copied()
                .filter(|i| ds.train(v).contains(i))
                .collect();
            if shared.is_empty() {
                continue;
            }
            let c = shared
                .iter()
                .map(|&i| 1.0 / item_deg[i] as f64)
                .sum::<f64>()
                / ((ds.train(u).len() * ds.train(v).len()) as f64).sqrt();
            if let (Some(a), Some(b)) = (scaled(u), scaled(v)) {
                total += c * a
                    .iter()
                    .zip(&b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>();
            }
        }
    }
    total
}

#[test]
fn smoothness_matches_double_loop_on_six_users() {
    let ds = InteractionDataset::from_lists(
        6,
        5,
        vec![
            vec![0, 1],
            vec![1, 2],
            vec![0, 2, 3],
            vec![3],
            vec![3, 4],
            vec![0, 4],
        ],
        vec![],
        vec![],
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10 {
        let e = random_matrix(&mut rng, 11, 4, 2.0);
        for norm in [SmoothnessNorm::Unit, SmoothnessNorm::SquaredNorm] {
            let got = embedding_smoothness(&e, &ds, Side::User, norm).unwrap();
            let want = smoothness_oracle(&e, &ds, norm);
            assert!((got - want).abs() <= 1e-10, "{norm}: {got} vs {want}");
            assert!(got >= 0.0);
        }
    }
}

fn dense_power_times(a: &[Vec<f64>], k: usize, x: &DenseMatrix) -> DenseMatrix {
    let mut out = x.clone();
    for _ in 0..k {
        out = dense_matmul(a, &out);
    }
    out
}

#[test]
fn binomial_layer_weights_reproduce_self_loop_propagation() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..40 {
        let ds = random_dataset(&mut rng, 7, 8, 0.3);
        assert!(ds.num_nodes() <= 15);
        let adj = SparseAdjacency::from_dataset(&ds);
        let e0 = random_matrix(&mut rng, ds.num_nodes(), 3, 1.0);
        let a_plus_i = identity_plus(&dense_adjacency(&ds));
        for k in 0..=5 {
            let w = LayerWeights::custom(sgcn_equivalent_alphas(k)).unwrap();
            let (_, combined) = propagate(&e0, &GraphOperator::unnormalized(&adj), &w).unwrap();
            let oracle = dense_power_times(&a_plus_i, k, &e0);
            let err = combined.max_abs_diff(&oracle).unwrap();
            assert!(
                err <= 1e-12 * oracle.as_slice().iter().fold(1.0f64, |a, x| a.max(x.abs())),
                "K={k}: {err}"
            );
            assert!(check_sgcn_identity(&adj, &e0, k, 1e-12).unwrap().passed);
        }
    }
}

#[test]
fn teleport_weights_reproduce_the_teleport_recursion() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..40 {
        let ds = random_dataset(&mut rng, 8, 8, 0.3);
        let op =
            GraphOperator::normalized(&SparseAdjacency::from_dataset(&ds), NormScheme::SymSqrt);
        let e0 = random_matrix(&mut rng, ds.num_nodes(), 3, 1.0);
        for beta in [0.1, 0.5, 0.9] {
            for k in 1..=6 {
                let alphas = appnp_equivalent_alphas(beta, k).unwrap();
                let (_, combined) =
                    propagate(&e0, &op, &LayerWeights::custom(alphas).unwrap()).unwrap();
                let oracle = teleport_propagation(&op, &e0, beta, k).unwrap();
                assert!(combined.max_abs_diff(&oracle).unwrap() <= 1e-12);
                assert!(
                    check_appnp_identity(&op, &e0, beta, k, 1e-12)
                        .unwrap()
                        .passed
                );
            }
        }
    }
}
