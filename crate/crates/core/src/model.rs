//! Embedding table, K-layer propagation and layer combination.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dense::DenseMatrix;
use crate::graph::GraphOperator;
use crate::math::{dot, sqrt};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AlphaMode {
    /// `alpha_k = 1 / (K + 1)`
    Uniform,
    /// Only the last layer: `alpha_K = 1`.
    SingleLast,
    Custom,
}

impl AlphaMode {
    pub fn name(self) -> &'static str {
        match self {
            AlphaMode::Uniform => "uniform",
            AlphaMode::SingleLast => "single-last",
            AlphaMode::Custom => "custom",
        }
    }
}

impl fmt::Display for AlphaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlphaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(AlphaMode::Uniform),
            "single-last" | "single" => Ok(AlphaMode::SingleLast),
            "custom" => Ok(AlphaMode::Custom),
            _ => Err(Error::InvalidConfig(format!("unknown alpha mode `{s}`"))),
        }
    }
}

/// Layer-combination coefficients `alpha_0..=alpha_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    alphas: Vec<f64>,
    mode: AlphaMode,
}

impl LayerWeights {
    pub fn uniform(layers: usize) -> Self {
        let a = 1.0 / (layers + 1) as f64;
        Self {
            alphas: vec![a; layers + 1],
            mode: AlphaMode::Uniform,
        }
    }

    pub fn single_last(layers: usize) -> Self {
        let mut alphas = vec![0.0; layers + 1];
        alphas[layers] = 1.0;
        Self {
            alphas,
            mode: AlphaMode::SingleLast,
        }
    }

    /// Arbitrary nonnegative finite coefficients; the number of layers is
    /// `alphas.len() - 1`.
    pub fn custom(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::InvalidLayerWeights("need at least alpha_0".into()));
        }
        if let Some((k, a)) = alphas
            .iter()
            .enumerate()
            .find(|(_, a)| !a.is_finite() || **a < 0.0)
        {
            return Err(Error::InvalidLayerWeights(format!(
                "alpha_{k} = {a} is not a finite nonnegative number"
            )));
        }
        Ok(Self {
            alphas,
            mode: AlphaMode::Custom,
        })
    }

    pub fn for_mode(mode: AlphaMode, layers: usize, custom: Option<Vec<f64>>) -> Result<Self> {
        match mode {
            AlphaMode::Uniform => Ok(Self::uniform(layers)),
            AlphaMode::SingleLast => Ok(Self::single_last(layers)),
            AlphaMode::Custom => {
                let alphas = custom.ok_or_else(|| {
                    Error::InvalidLayerWeights("custom mode needs explicit alphas".into())
                })?;
                if alphas.len() != layers + 1 {
                    return Err(Error::InvalidLayerWeights(format!(
                        "{} alphas given for {layers} layers",
                        alphas.len()
                    )));
                }
                Self::custom(alphas)
            }
        }
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn mode(&self) -> AlphaMode {
        self.mode
    }

    /// `K`
    pub fn num_layers(&self) -> usize {
        self.alphas.len() - 1
    }
}

/// Runs `K` propagation layers from `e0` and combines them.
/// Returns `(E^(1..=K), E)`.
pub fn propagate(
    e0: &DenseMatrix,
    op: &GraphOperator,
    weights: &LayerWeights,
) -> Result<(Vec<DenseMatrix>, DenseMatrix)> {
    if op.size() != e0.rows() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} embedding rows", op.size()),
            actual: format!("{}", e0.rows()),
        });
    }
    let alphas = weights.alphas();
    let mut combined = e0.clone();
    combined.scale(alphas[0]);
    let mut layers: Vec<DenseMatrix> = Vec::with_capacity(weights.num_layers());
    for &alpha in &alphas[1..] {
        let next = op.apply(layers.last().unwrap_or(e0))?;
        combined.axpy(alpha, &next)?;
        layers.push(next);
    }
    Ok((layers, combined))
}

/// The trainable layer-0 table plus cached propagation results.
///
/// Every mutable access to `e0` bumps a version counter; reads of the
/// propagated matrices fail with [`Error::StaleEmbeddings`] until
/// [`EmbeddingState::forward`] runs again.
#[derive(Debug, Clone)]
pub struct EmbeddingState {
    num_users: usize,
    num_items: usize,
    e0: DenseMatrix,
    layers: Vec<DenseMatrix>,
    combined: DenseMatrix,
    version: u64,
    propagated: Option<u64>,
}

impl EmbeddingState {
    /// Xavier-uniform initialization with `fan_in = fan_out = dim`.
    pub fn init(num_users: usize, num_items: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig(
                "embedding dimension must be >= 1".into(),
            ));
        }
        let bound = xavier_bound(dim);
        let dist = Uniform::new_inclusive(-bound, bound);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = num_users + num_items;
        let e0 = DenseMatrix::from_fn(rows, dim, |_, _| dist.sample(&mut rng));
        Self::from_e0(num_users, num_items, e0)
    }

    pub fn from_e0(num_users: usize, num_items: usize, e0: DenseMatrix) -> Result<Self> {
        if e0.rows() != num_users + num_items {
            return Err(Error::DimensionMismatch {
                expected: format!("{} rows", num_users + num_items),
                actual: format!("{}", e0.rows()),
            });
        }
        let combined = DenseMatrix::zeros(e0.rows(), e0.cols());
        Ok(Self {
            num_users,
            num_items,
            e0,
            layers: Vec::new(),
            combined,
            version: 0,
            propagated: None,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn dim(&self) -> usize {
        self.e0.cols()
    }

    /// Trainable parameter count, `(M + N) * T`.
    pub fn num_parameters(&self) -> usize {
        self.e0.rows() * self.e0.cols()
    }

    pub fn e0(&self) -> &DenseMatrix {
        &self.e0
    }

    pub fn e0_mut(&mut self) -> &mut DenseMatrix {
        self.version += 1;
        &mut self.e0
    }

    pub fn set_e0(&mut self, e0: DenseMatrix) -> Result<()> {
        self.e0.check_same_shape(&e0)?;
        self.version += 1;
        self.e0 = e0;
        Ok(())
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn is_fresh(&self) -> bool {
        self.propagated == Some(self.version)
    }

    pub fn forward(&mut self, op: &GraphOperator, weights: &LayerWeights) -> Result<()> {
        let (layers, combined) = propagate(&self.e0, op, weights)?;
        self.layers = layers;
        self.combined = combined;
        self.propagated = Some(self.version);
        Ok(())
    }

    fn check_fresh(&self) -> Result<()> {
        if self.is_fresh() {
            Ok(())
        } else {
            Err(Error::StaleEmbeddings {
                e0: self.version,
                propagated: self.propagated,
            })
        }
    }

    /// Final embeddings `E`.
    pub fn combined(&self) -> Result<&DenseMatrix> {
        self.check_fresh()?;
        Ok(&self.combined)
    }

    /// `E^(k)`; `k = 0` is the trainable table itself.
    pub fn layer(&self, k: usize) -> Result<&DenseMatrix> {
        if k == 0 {
            return Ok(&self.e0);
        }
        self.check_fresh()?;
        self.layers.get(k - 1).ok_or(Error::OutOfRange {
            what: "layer",
            id: k,
            limit: self.layers.len() + 1,
        })
    }

    pub fn num_cached_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn user_embedding(&self, user: usize) -> Result<&[f64]> {
        self.check_fresh()?;
        check_range("user", user, self.num_users)?;
        Ok(self.combined.row(user))
    }

    pub fn item_embedding(&self, item: usize) -> Result<&[f64]> {
        self.check_fresh()?;
        check_range("item", item, self.num_items)?;
        Ok(self.combined.row(self.num_users + item))
    }

    /// `e_u . e_i` on the final embeddings.
    pub fn score(&self, user: usize, item: usize) -> Result<f64> {
        Ok(dot(self.user_embedding(user)?, self.item_embedding(item)?))
    }

    /// Scores of every item for `user`; items in `exclude` get `-inf`.
    pub fn score_all_items(&self, user: usize, exclude: &[usize]) -> Result<Vec<f64>> {
        let eu = self.user_embedding(user)?;
        let mut scores: Vec<f64> = (0..self.num_items)
            .map(|i| dot(eu, self.combined.row(self.num_users + i)))
            .collect();
        for &i in exclude {
            check_range("item", i, self.num_items)?;
            scores[i] = f64::NEG_INFINITY;
        }
        Ok(scores)
    }
}

pub fn xavier_bound(dim: usize) -> f64 {
    sqrt(6.0 / (2 * dim) as f64)
}

fn check_range(what: &'static str, id: usize, limit: usize) -> Result<()> {
    if id < limit {
        Ok(())
    } else {
        Err(Error::OutOfRange { what, id, limit })
    }
}
