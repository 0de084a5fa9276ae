//! Symmetric bipartite adjacency in CSR form, its normalized variants and the
//! sparse-dense product that drives propagation.
//!
//! Node layout: users occupy rows `0..M`, items rows `M..M+N`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::dense::DenseMatrix;
use crate::math::sqrt;
use crate::{Error, InteractionDataset, Result};

/// Edge weighting applied to the adjacency. `p` is the target (row) node,
/// `q` the neighbor (column) node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormScheme {
    /// `1 / (sqrt(d_p) sqrt(d_q))`
    SymSqrt,
    /// `1 / sqrt(d_p)`
    SqrtLeft,
    /// `1 / sqrt(d_q)`
    SqrtRight,
    /// `1 / (d_p d_q)`
    L1Both,
    /// `1 / d_p`, a row-stochastic matrix
    L1Left,
    /// `1 / d_q`
    L1Right,
}

impl NormScheme {
    pub const ALL: [NormScheme; 6] = [
        NormScheme::SymSqrt,
        NormScheme::SqrtLeft,
        NormScheme::SqrtRight,
        NormScheme::L1Both,
        NormScheme::L1Left,
        NormScheme::L1Right,
    ];

    /// Scheme whose matrix is the transpose of this one's on a structurally
    /// symmetric adjacency.
    pub fn transpose(self) -> Self {
        match self {
            NormScheme::SqrtLeft => NormScheme::SqrtRight,
            NormScheme::SqrtRight => NormScheme::SqrtLeft,
            NormScheme::L1Left => NormScheme::L1Right,
            NormScheme::L1Right => NormScheme::L1Left,
            s => s,
        }
    }

    pub fn is_symmetric(self) -> bool {
        self.transpose() == self
    }

    pub fn name(self) -> &'static str {
        match self {
            NormScheme::SymSqrt => "sym-sqrt",
            NormScheme::SqrtLeft => "sqrt-left",
            NormScheme::SqrtRight => "sqrt-right",
            NormScheme::L1Both => "l1-both",
            NormScheme::L1Left => "l1-left",
            NormScheme::L1Right => "l1-right",
        }
    }

    fn weight(self, inv_sqrt: &[f64], inv: &[f64], p: usize, q: usize) -> f64 {
        match self {
            NormScheme::SymSqrt => inv_sqrt[p] * inv_sqrt[q],
            NormScheme::SqrtLeft => inv_sqrt[p],
            NormScheme::SqrtRight => inv_sqrt[q],
            NormScheme::L1Both => inv[p] * inv[q],
            NormScheme::L1Left => inv[p],
            NormScheme::L1Right => inv[q],
        }
    }
}

impl fmt::Display for NormScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NormScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NormScheme::ALL
            .into_iter()
            .find(|scheme| scheme.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown normalization scheme `{s}`")))
    }
}

/// CSR matrix over the `M + N` graph nodes plus the node degrees of the
/// underlying unweighted graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAdjacency {
    num_users: usize,
    num_items: usize,
    row_offsets: Vec<usize>,
    column_indices: Vec<usize>,
    values: Vec<f64>,
    degrees: Vec<usize>,
}

impl SparseAdjacency {
    /// Unnormalized user-item adjacency built from training interactions.
    pub fn from_dataset(ds: &InteractionDataset) -> Self {
        let m = ds.num_users();
        let n = ds.num_nodes();
        let nnz = 2 * ds.num_train_interactions();
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut column_indices = Vec::with_capacity(nnz);
        row_offsets.push(0);
        for items in ds.train_lists() {
            column_indices.extend(items.iter().map(|&i| m + i));
            row_offsets.push(column_indices.len());
        }
        for users in ds.item_users() {
            column_indices.extend_from_slice(&users);
            row_offsets.push(column_indices.len());
        }
        let degrees = row_offsets.windows(2).map(|w| w[1] - w[0]).collect();
        Self {
            num_users: m,
            num_items: ds.num_items(),
            row_offsets,
            column_indices,
            values: vec![1.0; nnz],
            degrees,
        }
    }

    pub fn size(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn nnz(&self) -> usize {
        self.column_indices.len()
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn column_indices(&self) -> &[usize] {
        &self.column_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(column, weight)` pairs of row `p`, ascending by column.
    pub fn row(&self, p: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_offsets[p]..self.row_offsets[p + 1];
        self.column_indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// Weight of entry `(p, q)`, zero if absent.
    pub fn get(&self, p: usize, q: usize) -> f64 {
        let range = self.row_offsets[p]..self.row_offsets[p + 1];
        match self.column_indices[range.clone()].binary_search(&q) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => 0.0,
        }
    }

    /// Reweights every edge by `scheme`. Degrees come from the unweighted
    /// graph; degree-zero nodes get coefficient zero (they have no edges).
    pub fn normalize(&self, scheme: NormScheme) -> SparseAdjacency {
        let inv: Vec<f64> = self
            .degrees
            .iter()
            .map(|&d| if d == 0 { 0.0 } else { 1.0 / d as f64 })
            .collect();
        let inv_sqrt: Vec<f64> = self
            .degrees
            .iter()
            .map(|&d| if d == 0 { 0.0 } else { 1.0 / sqrt(d as f64) })
            .collect();
        let mut values = Vec::with_capacity(self.nnz());
        for p in 0..self.size() {
            for &q in &self.column_indices[self.row_offsets[p]..self.row_offsets[p + 1]] {
                values.push(scheme.weight(&inv_sqrt, &inv, p, q));
            }
        }
        SparseAdjacency {
            values,
            ..self.clone()
        }
    }

    /// `self * x`, accumulating each row sequentially in column order.
    pub fn spmm(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut out = DenseMatrix::zeros(self.size(), x.cols());
        self.spmm_into(x, &mut out)?;
        Ok(out)
    }

    pub fn spmm_into(&self, x: &DenseMatrix, out: &mut DenseMatrix) -> Result<()> {
        let n = self.size();
        if x.rows() != n || out.rows() != n || out.cols() != x.cols() {
            return Err(Error::DimensionMismatch {
                expected: format!("{n} rows in input and output"),
                actual: format!(
                    "input {}x{}, output {}x{}",
                    x.rows(),
                    x.cols(),
                    out.rows(),
                    out.cols()
                ),
            });
        }
        let t = x.cols();
        if t == 0 {
            return Ok(());
        }
        let row_kernel = |p: usize, dst: &mut [f64]| {
            dst.iter_mut().for_each(|v| *v = 0.0);
            for idx in self.row_offsets[p]..self.row_offsets[p + 1] {
                let w = self.values[idx];
                let src = x.row(self.column_indices[idx]);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            out.as_mut_slice()
                .par_chunks_mut(t)
                .enumerate()
                .for_each(|(p, dst)| row_kernel(p, dst));
        }
        #[cfg(not(feature = "parallel"))]
        {
            out.as_mut_slice()
                .chunks_mut(t)
                .enumerate()
                .for_each(|(p, dst)| row_kernel(p, dst));
        }
        Ok(())
    }

    fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for (p, o) in out.iter_mut().enumerate() {
            *o = self.row(p).map(|(q, w)| w * x[q]).sum();
        }
    }

    fn matvec_transpose(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (p, &yp) in y.iter().enumerate() {
            for (q, w) in self.row(p) {
                out[q] += w * yp;
            }
        }
    }

    /// Power iteration on `A^T A`, started from the all-ones vector; returns
    /// `||A x||` for the final unit iterate. Never decreases with more
    /// iterations.
    pub fn spectral_norm_estimate(&self, iterations: usize) -> f64 {
        let n = self.size();
        if n == 0 {
            return 0.0;
        }
        let mut x = vec![1.0 / sqrt(n as f64); n];
        let mut ax = vec![0.0; n];
        let mut y = vec![0.0; n];
        for _ in 0..iterations.max(1) {
            self.matvec(&x, &mut ax);
            self.matvec_transpose(&ax, &mut y);
            let norm = sqrt(crate::math::squared_norm(&y));
            if norm == 0.0 {
                return 0.0;
            }
            x.iter_mut().zip(&y).for_each(|(xi, yi)| *xi = yi / norm);
        }
        self.matvec(&x, &mut ax);
        sqrt(crate::math::squared_norm(&ax))
    }

    /// Dense copy, for small-graph checks.
    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.size();
        let mut dense = DenseMatrix::zeros(n, n);
        for p in 0..n {
            for (q, w) in self.row(p) {
                dense.set(p, q, w);
            }
        }
        dense
    }
}

/// The matrix used by propagation together with the transpose needed to
/// back-propagate through it.
#[derive(Debug, Clone)]
pub struct GraphOperator {
    matrix: SparseAdjacency,
    transpose: Option<SparseAdjacency>,
    symmetric: bool,
    scheme: Option<NormScheme>,
}

impl GraphOperator {
    pub fn normalized(adjacency: &SparseAdjacency, scheme: NormScheme) -> Self {
        let matrix = adjacency.normalize(scheme);
        let transpose = (!scheme.is_symmetric()).then(|| adjacency.normalize(scheme.transpose()));
        Self {
            matrix,
            transpose,
            symmetric: scheme.is_symmetric(),
            scheme: Some(scheme),
        }
    }

    /// Plain 0/1 adjacency. Training on it is numerically unstable; it is
    /// mostly useful for checking propagation identities.
    pub fn unnormalized(adjacency: &SparseAdjacency) -> Self {
        Self {
            matrix: adjacency.clone(),
            transpose: None,
            symmetric: true,
            scheme: None,
        }
    }

    /// Wraps an arbitrary matrix with no known transpose. Forward products
    /// work; back-propagation reports [`Error::MissingTranspose`].
    pub fn without_transpose(matrix: SparseAdjacency) -> Self {
        Self {
            matrix,
            transpose: None,
            symmetric: false,
            scheme: None,
        }
    }

    pub fn matrix(&self) -> &SparseAdjacency {
        &self.matrix
    }

    pub fn scheme(&self) -> Option<NormScheme> {
        self.scheme
    }

    pub fn size(&self) -> usize {
        self.matrix.size()
    }

    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.matrix.spmm(x)
    }

    pub fn apply_transpose(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        match (&self.transpose, self.symmetric) {
            (Some(t), _) => t.spmm(x),
            (None, true) => self.matrix.spmm(x),
            (None, false) => Err(Error::MissingTranspose),
        }
    }
}
