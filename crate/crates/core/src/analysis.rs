//! Closed-form relations between layer combination and other propagation
//! schemes, second-order smoothing coefficients, and the embedding smoothness
//! diagnostic.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::dense::DenseMatrix;
use crate::graph::{GraphOperator, SparseAdjacency};
use crate::math::sqrt;
use crate::model::{propagate, LayerWeights};
use crate::{Error, InteractionDataset, Result};

/// Binomial coefficients `C(K, 0..=K)`. Using them as layer weights on the
/// unnormalized adjacency reproduces `(A + I)^K E^(0)`.
pub fn sgcn_equivalent_alphas(layers: usize) -> Vec<f64> {
    let mut row = vec![1.0f64];
    for _ in 0..layers {
        let mut next = vec![1.0; row.len() + 1];
        for k in 1..row.len() {
            next[k] = row[k - 1] + row[k];
        }
        row = next;
    }
    row
}

/// `alpha_k = beta (1 - beta)^k` for `k < K` and `alpha_K = (1 - beta)^K`,
/// the weights under which layer combination equals `K` steps of
/// personalized-PageRank propagation with teleport probability `beta`.
pub fn appnp_equivalent_alphas(beta: f64, layers: usize) -> Result<Vec<f64>> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidTeleport(beta));
    }
    let mut alphas = Vec::with_capacity(layers + 1);
    let mut keep = 1.0;
    for _ in 0..layers {
        alphas.push(beta * keep);
        keep *= 1.0 - beta;
    }
    alphas.push(keep);
    Ok(alphas)
}

/// `E <- (A + I) E`, `K` times, on whatever weights `adjacency` carries.
pub fn self_loop_propagation(
    adjacency: &SparseAdjacency,
    e0: &DenseMatrix,
    layers: usize,
) -> Result<DenseMatrix> {
    let mut e = e0.clone();
    for _ in 0..layers {
        let mut next = adjacency.spmm(&e)?;
        next.axpy(1.0, &e)?;
        e = next;
    }
    Ok(e)
}

/// `E^(k+1) = beta E^(0) + (1 - beta) A E^(k)` unrolled `K` steps.
pub fn teleport_propagation(
    op: &GraphOperator,
    e0: &DenseMatrix,
    beta: f64,
    layers: usize,
) -> Result<DenseMatrix> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidTeleport(beta));
    }
    let mut e = e0.clone();
    for _ in 0..layers {
        let mut next = op.apply(&e)?;
        next.scale(1.0 - beta);
        next.axpy(beta, e0)?;
        e = next;
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCheck {
    pub name: String,
    pub max_abs_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl IdentityCheck {
    fn new(name: String, max_abs_error: f64, tolerance: f64) -> Self {
        Self {
            name,
            max_abs_error,
            tolerance,
            passed: max_abs_error <= tolerance,
        }
    }
}

/// Compares layer combination with binomial weights on the raw adjacency
/// against repeated self-loop propagation. The tolerance is relative to the
/// largest entry of the reference.
pub fn check_sgcn_identity(
    adjacency: &SparseAdjacency,
    e0: &DenseMatrix,
    layers: usize,
    tolerance: f64,
) -> Result<IdentityCheck> {
    let weights = LayerWeights::custom(sgcn_equivalent_alphas(layers))?;
    let (_, combined) = propagate(e0, &GraphOperator::unnormalized(adjacency), &weights)?;
    let reference = self_loop_propagation(adjacency, e0, layers)?;
    let scale = reference
        .as_slice()
        .iter()
        .fold(1.0f64, |acc, x| acc.max(x.abs()));
    Ok(IdentityCheck::new(
        format!("sgcn(K={layers})"),
        combined.max_abs_diff(&reference)? / scale,
        tolerance,
    ))
}

/// Compares layer combination with teleport weights against the unrolled
/// teleport recursion on the same operator.
pub fn check_appnp_identity(
    op: &GraphOperator,
    e0: &DenseMatrix,
    beta: f64,
    layers: usize,
    tolerance: f64,
) -> Result<IdentityCheck> {
    let weights = LayerWeights::custom(appnp_equivalent_alphas(beta, layers)?)?;
    let (_, combined) = propagate(e0, op, &weights)?;
    let reference = teleport_propagation(op, e0, beta, layers)?;
    Ok(IdentityCheck::new(
        format!("appnp(beta={beta}, K={layers})"),
        combined.max_abs_diff(&reference)?,
        tolerance,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    User,
    Item,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::User => "user",
            Side::Item => "item",
        }
    }
}

/// Precomputed neighbor lists for second-order coefficients on either side
/// of the bipartite graph.
#[derive(Debug, Clone)]
pub struct CoInteraction {
    user_items: Vec<Vec<usize>>,
    item_users: Vec<Vec<usize>>,
}

impl CoInteraction {
    pub fn new(ds: &InteractionDataset) -> Self {
        Self {
            user_items: ds.train_lists().to_vec(),
            item_users: ds.item_users(),
        }
    }

    fn lists(&self, side: Side) -> (&[Vec<usize>], &[Vec<usize>]) {
        match side {
            Side::User => (&self.user_items, &self.item_users),
            Side::Item => (&self.item_users, &self.user_items),
        }
    }

    /// Smoothing strength of node `v` on node `u` after two layers:
    /// `sum over shared neighbors x of 1/|N_x|`, scaled by
    /// `1 / sqrt(|N_u| |N_v|)`. Zero for degree-zero nodes or no overlap.
    pub fn coefficient(&self, side: Side, u: usize, v: usize) -> f64 {
        let (own, other) = self.lists(side);
        let (a, b) = (&own[u], &own[v]);
        if a.is_empty() || b.is_empty() {
            return 0.0;
        }
        let (mut i, mut j, mut sum) = (0, 0, 0.0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                core::cmp::Ordering::Less => i += 1,
                core::cmp::Ordering::Greater => j += 1,
                core::cmp::Ordering::Equal => {
                    sum += 1.0 / other[a[i]].len() as f64;
                    i += 1;
                    j += 1;
                }
            }
        }
        sum / sqrt(a.len() as f64 * b.len() as f64)
    }

    /// All nonzero coefficients `c_{v -> u}` for a fixed `u`, as
    /// `(v, c)` pairs ascending by `v`.
    pub fn coefficients_of(&self, side: Side, u: usize) -> Vec<(usize, f64)> {
        let (own, other) = self.lists(side);
        if own[u].is_empty() {
            return Vec::new();
        }
        let mut acc: alloc::collections::BTreeMap<usize, f64> = Default::default();
        for &x in &own[u] {
            let w = 1.0 / other[x].len() as f64;
            for &v in &other[x] {
                *acc.entry(v).or_insert(0.0) += w;
            }
        }
        let du = own[u].len() as f64;
        acc.into_iter()
            .map(|(v, s)| (v, s / sqrt(du * own[v].len() as f64)))
            .collect()
    }
}

/// `c_{v -> u}` on the user side of `ds`'s training graph.
pub fn second_order_coefficient(ds: &InteractionDataset, u: usize, v: usize) -> f64 {
    CoInteraction::new(ds).coefficient(Side::User, u, v)
}

/// How embeddings are rescaled before differencing in the smoothness loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SmoothnessNorm {
    /// `e / ||e||`: removes the embedding's scale.
    #[default]
    Unit,
    /// `e / ||e||^2`, the literal divisor.
    SquaredNorm,
}

impl SmoothnessNorm {
    pub fn name(self) -> &'static str {
        match self {
            SmoothnessNorm::Unit => "unit",
            SmoothnessNorm::SquaredNorm => "squared-norm",
        }
    }
}

impl fmt::Display for SmoothnessNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SmoothnessNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(SmoothnessNorm::Unit),
            "squared-norm" => Ok(SmoothnessNorm::SquaredNorm),
            _ => Err(Error::InvalidConfig(format!(
                "unknown smoothness norm `{s}`"
            ))),
        }
    }
}

fn rescaled_rows(
    embeddings: &DenseMatrix,
    range: core::ops::Range<usize>,
    norm: SmoothnessNorm,
) -> Vec<Option<Vec<f64>>> {
    range
        .map(|r| {
            let row = embeddings.row(r);
            let sq = crate::math::squared_norm(row);
            if sq == 0.0 {
                return None;
            }
            let denom = match norm {
                SmoothnessNorm::Unit => sqrt(sq),
                SmoothnessNorm::SquaredNorm => sq,
            };
            Some(row.iter().map(|x| x / denom).collect())
        })
        .collect()
}

/// `sum_u sum_v c_{v -> u} ||n(e_u) - n(e_v)||^2` over one side of the graph,
/// with `embeddings` laid out users first. Rows with zero norm contribute
/// nothing.
pub fn embedding_smoothness(
    embeddings: &DenseMatrix,
    ds: &InteractionDataset,
    side: Side,
    norm: SmoothnessNorm,
) -> Result<f64> {
    if embeddings.rows() != ds.num_nodes() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} rows", ds.num_nodes()),
            actual: format!("{}", embeddings.rows()),
        });
    }
    let m = ds.num_users();
    let range = match side {
        Side::User => 0..m,
        Side::Item => m..ds.num_nodes(),
    };
    let count = range.len();
    let rows = rescaled_rows(embeddings, range, norm);
    let co = CoInteraction::new(ds);
    let term = |u: usize| -> f64 {
        let Some(nu) = &rows[u] else { return 0.0 };
        co.coefficients_of(side, u)
            .into_iter()
            .filter(|&(v, _)| v != u)
            .filter_map(|(v, c)| {
                rows[v].as_ref().map(|nv| {
                    c * nu
                        .iter()
                        .zip(nv)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
            })
            .sum()
    };
    #[cfg(feature = "parallel")]
    let per_node: Vec<f64> = {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(term).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_node: Vec<f64> = (0..count).map(term).collect();
    Ok(per_node.iter().sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessReport {
    pub s_user: f64,
    pub s_item: f64,
    pub model_tag: String,
}

pub fn smoothness_report(
    embeddings: &DenseMatrix,
    ds: &InteractionDataset,
    norm: SmoothnessNorm,
    model_tag: impl Into<String>,
) -> Result<SmoothnessReport> {
    Ok(SmoothnessReport {
        s_user: embedding_smoothness(embeddings, ds, Side::User, norm)?,
        s_item: embedding_smoothness(embeddings, ds, Side::Item, norm)?,
        model_tag: model_tag.into(),
    })
}
