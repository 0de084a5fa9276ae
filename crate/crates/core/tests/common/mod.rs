//! Test-only oracles: dense linear algebra written independently of the
//! sparse kernels under test.
#![allow(dead_code, clippy::needless_range_loop)]

use lightgcn_core::{DenseMatrix, InteractionDataset};
use rand::Rng;

/// Random bipartite training graph with at least one edge.
pub fn random_dataset<R: Rng>(
    rng: &mut R,
    max_users: usize,
    max_items: usize,
    p: f64,
) -> InteractionDataset {
    loop {
        let m = rng.gen_range(1..=max_users);
        let n = rng.gen_range(1..=max_items);
        let train: Vec<Vec<usize>> = (0..m)
            .map(|_| (0..n).filter(|_| rng.gen_bool(p)).collect())
            .collect();
        if let Ok(ds) = InteractionDataset::from_lists(m, n, train, vec![], vec![]) {
            return ds;
        }
    }
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

/// Dense `(M+N)x(M+N)` 0/1 adjacency, built straight from the train lists.
pub fn dense_adjacency(ds: &InteractionDataset) -> Vec<Vec<f64>> {
    let m = ds.num_users();
    let size = ds.num_nodes();
    let mut a = vec![vec![0.0; size]; size];
    for u in 0..m {
        for &i in ds.train(u) {
            a[u][m + i] = 1.0;
            a[m + i][u] = 1.0;
        }
    }
    a
}

/// Dense normalized adjacency; `scheme` named as in the CLI.
pub fn dense_normalized(ds: &InteractionDataset, scheme: &str) -> Vec<Vec<f64>> {
    let a = dense_adjacency(ds);
    let deg: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    let f = |d: f64, pow: f64| if d == 0.0 { 0.0 } else { d.powf(-pow) };
    let size = a.len();
    let mut out = vec![vec![0.0; size]; size];
    for p in 0..size {
        for q in 0..size {
            if a[p][q] == 0.0 {
                continue;
            }
            out[p][q] = match scheme {
                "sym-sqrt" => f(deg[p], 0.5) * f(deg[q], 0.5),
                "sqrt-left" => f(deg[p], 0.5),
                "sqrt-right" => f(deg[q], 0.5),
                "l1-both" => f(deg[p], 1.0) * f(deg[q], 1.0),
                "l1-left" => f(deg[p], 1.0),
                "l1-right" => f(deg[q], 1.0),
                "none" => 1.0,
                _ => panic!("unknown scheme {scheme}"),
            };
        }
    }
    out
}

pub fn dense_matmul(a: &[Vec<f64>], x: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(a.len(), x.cols());
    for r in 0..a.len() {
        for c in 0..x.cols() {
            let mut acc = 0.0;
            for k in 0..a[r].len() {
                acc += a[r][k] * x.get(k, c);
            }
            out.set(r, c, acc);
        }
    }
    out
}

pub fn dense_square(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                out[i][j] += a[i][k] * a[k][j];
            }
        }
    }
    out
}

pub fn identity_plus(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = a.to_vec();
    for (i, row) in out.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    out
}

/// `sum_k alphas[k] A^k X` by repeated dense products.
pub fn dense_combination(a: &[Vec<f64>], x: &DenseMatrix, alphas: &[f64]) -> DenseMatrix {
    let mut layer = x.clone();
    let mut out = DenseMatrix::zeros(x.rows(), x.cols());
    for (k, &alpha) in alphas.iter().enumerate() {
        if k > 0 {
            layer = dense_matmul(a, &layer);
        }
        for (o, v) in out.as_mut_slice().iter_mut().zip(layer.as_slice()) {
            *o += alpha * v;
        }
    }
    out
}

/// Central finite differences of `f` at `x` for every entry.
pub fn finite_difference_gradient(
    x: &DenseMatrix,
    step: f64,
    mut f: impl FnMut(&DenseMatrix) -> f64,
) -> DenseMatrix {
    let mut grad = DenseMatrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            let orig = x.get(r, c);
            probe.set(r, c, orig + step);
            let up = f(&probe);
            probe.set(r, c, orig - step);
            let down = f(&probe);
            probe.set(r, c, orig);
            grad.set(r, c, (up - down) / (2.0 * step));
        }
    }
    grad
}

/// Largest entrywise `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &DenseMatrix, b: &DenseMatrix, floor: f64) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
