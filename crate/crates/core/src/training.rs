//! BPR training: negative sampling, the pairwise loss with L2 and optional
//! graph-Laplacian terms, hand-derived gradients through propagation, and Adam.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dense::DenseMatrix;
use crate::evaluation::{evaluate_all_ranking, EvalSplit};
use crate::graph::GraphOperator;
use crate::math::{dot, sigmoid, softplus, sqrt, squared_norm};
use crate::model::{EmbeddingState, LayerWeights};
use crate::{Error, InteractionDataset, Result};

/// User, observed item, unobserved item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BprTriplet {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// How the L2 penalty on the layer-0 table is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum L2Mode {
    /// `lambda / B * sum(||e0_u||^2 + ||e0_i||^2 + ||e0_j||^2)` over the batch.
    #[default]
    PerBatch,
    /// `lambda * ||E^(0)||^2` added to every mini-batch objective.
    Global,
}

impl L2Mode {
    pub fn name(self) -> &'static str {
        match self {
            L2Mode::PerBatch => "per-batch",
            L2Mode::Global => "global",
        }
    }
}

impl fmt::Display for L2Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for L2Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-batch" => Ok(L2Mode::PerBatch),
            "global" => Ok(L2Mode::Global),
            _ => Err(Error::InvalidConfig(format!("unknown l2 mode `{s}`"))),
        }
    }
}

/// Form of the graph-Laplacian smoothing term on positive pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LaplacianMode {
    /// `||e_u - e_i||^2`
    #[default]
    Plain,
    /// `||e_u / sqrt(|N_u|) - e_i / sqrt(|N_i|)||^2`
    DegreeNormalized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub lambda: f64,
    /// Laplacian coefficient; zero disables the term.
    pub lambda_g: f64,
    pub l2_mode: L2Mode,
    pub laplacian: LaplacianMode,
}

impl Default for Objective {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            lambda_g: 0.0,
            l2_mode: L2Mode::PerBatch,
            laplacian: LaplacianMode::Plain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub objective: Objective,
    pub adam: AdamConfig,
    pub epochs: usize,
    /// Validation cadence in epochs.
    pub eval_every: usize,
    /// Non-improving validation rounds tolerated before stopping.
    pub patience: usize,
    /// Cutoff for the validation metric driving early stopping.
    pub topk: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 1024,
            objective: Objective::default(),
            adam: AdamConfig::default(),
            epochs: 1000,
            eval_every: 20,
            patience: 10,
            topk: 20,
            seed: 2020,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.objective.lambda >= 0.0 && self.objective.lambda.is_finite()) {
            return bad("lambda must be nonnegative");
        }
        if !(self.objective.lambda_g >= 0.0 && self.objective.lambda_g.is_finite()) {
            return bad("lambda_g must be nonnegative");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive");
        }
        if self.topk == 0 {
            return bad("topk must be positive");
        }
        Ok(())
    }
}

/// Draws `(u, i)` uniformly over training interactions and a negative `j`
/// uniformly over items outside the user's training list.
#[derive(Debug, Clone)]
pub struct TripletSampler<'a> {
    ds: &'a InteractionDataset,
    pairs: Vec<(usize, usize)>,
}

impl<'a> TripletSampler<'a> {
    pub fn new(ds: &'a InteractionDataset) -> Self {
        let pairs = ds
            .train_lists()
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
            .collect();
        Self { ds, pairs }
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Samples up to `batch_size` triplets. Draws for users who interacted
    /// with every item are skipped (no negative exists), so the batch can
    /// come back short.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<BprTriplet> {
        let n = self.ds.num_items();
        let mut out = Vec::with_capacity(batch_size);
        let mut skipped = 0usize;
        for _ in 0..batch_size {
            let (user, pos) = self.pairs[rng.gen_range(0..self.pairs.len())];
            if self.ds.train(user).len() >= n {
                skipped += 1;
                continue;
            }
            let neg = loop {
                let j = rng.gen_range(0..n);
                if !self.ds.is_train_interaction(user, j) {
                    break j;
                }
            };
            out.push(BprTriplet { user, pos, neg });
        }
        if skipped > 0 {
            log::warn!("skipped {skipped} draws for users who interacted with every item");
        }
        out
    }
}

/// One-shot form of [`TripletSampler::sample`].
pub fn sample_triplets<R: Rng + ?Sized>(
    ds: &InteractionDataset,
    batch_size: usize,
    rng: &mut R,
) -> Vec<BprTriplet> {
    TripletSampler::new(ds).sample(batch_size, rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// Mean of `-ln sigmoid(y_ui - y_uj)` over the batch.
    pub bpr: f64,
    pub l2: f64,
    pub laplacian: f64,
    pub total: f64,
}

fn laplacian_scales(
    mode: LaplacianMode,
    degrees: &[usize],
    num_users: usize,
    t: &BprTriplet,
) -> (f64, f64) {
    match mode {
        LaplacianMode::Plain => (1.0, 1.0),
        LaplacianMode::DegreeNormalized => {
            let inv = |d: usize| if d == 0 { 0.0 } else { 1.0 / sqrt(d as f64) };
            (inv(degrees[t.user]), inv(degrees[num_users + t.pos]))
        }
    }
}

/// Batch objective on the current (fresh) propagation of `state`.
/// `degrees` are node degrees of the training graph, users first.
pub fn bpr_loss(
    triplets: &[BprTriplet],
    state: &EmbeddingState,
    objective: &Objective,
    degrees: &[usize],
) -> Result<LossBreakdown> {
    if triplets.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let b = triplets.len() as f64;
    let m = state.num_users();
    let e = state.combined()?;
    let e0 = state.e0();

    let mut bpr = 0.0;
    let mut l2 = 0.0;
    let mut lap = 0.0;
    for t in triplets {
        let eu = e.row(t.user);
        let margin = dot(eu, e.row(m + t.pos)) - dot(eu, e.row(m + t.neg));
        bpr += softplus(-margin);
        if objective.l2_mode == L2Mode::PerBatch {
            l2 += squared_norm(e0.row(t.user))
                + squared_norm(e0.row(m + t.pos))
                + squared_norm(e0.row(m + t.neg));
        }
        if objective.lambda_g != 0.0 {
            let (a, c) = laplacian_scales(objective.laplacian, degrees, m, t);
            lap += e0
                .row(t.user)
                .iter()
                .zip(e0.row(m + t.pos))
                .map(|(x, y)| (a * x - c * y) * (a * x - c * y))
                .sum::<f64>();
        }
    }
    let bpr = bpr / b;
    let l2 = match objective.l2_mode {
        L2Mode::PerBatch => objective.lambda * l2 / b,
        L2Mode::Global => objective.lambda * squared_norm(e0.as_slice()),
    };
    let laplacian = objective.lambda_g * lap / b;
    Ok(LossBreakdown {
        bpr,
        l2,
        laplacian,
        total: bpr + l2 + laplacian,
    })
}

/// Gradient of [`bpr_loss`] with respect to `E^(0)`.
///
/// The BPR term's gradient `g` lands on the final embeddings of batch rows;
/// it is pulled back through the combination with the Horner form
/// `G = a_0 g + A^T (a_1 g + A^T (a_2 g + ...))`, costing `K` transposed
/// products. Regularizers act on `E^(0)` directly.
pub fn backward(
    triplets: &[BprTriplet],
    state: &EmbeddingState,
    op: &GraphOperator,
    weights: &LayerWeights,
    objective: &Objective,
    degrees: &[usize],
) -> Result<DenseMatrix> {
    if triplets.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let b = triplets.len() as f64;
    let m = state.num_users();
    let e = state.combined()?;
    let e0 = state.e0();
    let dim = state.dim();

    let mut g = DenseMatrix::zeros(e.rows(), dim);
    for t in triplets {
        let (u, i, j) = (t.user, m + t.pos, m + t.neg);
        let eu = e.row(u);
        let (ei, ej) = (e.row(i), e.row(j));
        let margin = dot(eu, ei) - dot(eu, ej);
        let coef = -sigmoid(-margin) / b;
        for c in 0..dim {
            let (xu, xi, xj) = (eu[c], ei[c], ej[c]);
            g.as_mut_slice()[u * dim + c] += coef * (xi - xj);
            g.as_mut_slice()[i * dim + c] += coef * xu;
            g.as_mut_slice()[j * dim + c] -= coef * xu;
        }
    }

    let alphas = weights.alphas();
    let last = alphas.len() - 1;
    let mut grad = g.clone();
    grad.scale(alphas[last]);
    for k in (0..last).rev() {
        grad = op.apply_transpose(&grad)?;
        grad.axpy(alphas[k], &g)?;
    }

    if objective.lambda != 0.0 {
        match objective.l2_mode {
            L2Mode::PerBatch => {
                let s = 2.0 * objective.lambda / b;
                for t in triplets {
                    for row in [t.user, m + t.pos, m + t.neg] {
                        add_scaled_row(&mut grad, row, s, e0.row(row));
                    }
                }
            }
            L2Mode::Global => grad.axpy(2.0 * objective.lambda, e0)?,
        }
    }
    if objective.lambda_g != 0.0 {
        let s = 2.0 * objective.lambda_g / b;
        let mut diff = alloc::vec![0.0; dim];
        for t in triplets {
            let (a, c) = laplacian_scales(objective.laplacian, degrees, m, t);
            for ((d, x), y) in diff.iter_mut().zip(e0.row(t.user)).zip(e0.row(m + t.pos)) {
                *d = a * x - c * y;
            }
            add_scaled_row(&mut grad, t.user, s * a, &diff);
            add_scaled_row(&mut grad, m + t.pos, -s * c, &diff);
        }
    }
    Ok(grad)
}

fn add_scaled_row(target: &mut DenseMatrix, row: usize, scale: f64, values: &[f64]) {
    for (dst, v) in target.row_mut(row).iter_mut().zip(values) {
        *dst += scale * v;
    }
}

/// Bias-corrected Adam with lazily updated rows: a row's moments and
/// parameters only change on steps where its gradient is nonzero.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: DenseMatrix,
    v: DenseMatrix,
    t: u64,
    config: AdamConfig,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize, config: AdamConfig) -> Self {
        Self {
            m: DenseMatrix::zeros(rows, cols),
            v: DenseMatrix::zeros(rows, cols),
            t: 0,
            config,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &DenseMatrix {
        &self.m
    }

    pub fn second_moment(&self) -> &DenseMatrix {
        &self.v
    }

    /// Applies one update to `params`; returns the number of rows touched.
    pub fn step(&mut self, grad: &DenseMatrix, params: &mut DenseMatrix, lr: f64) -> Result<usize> {
        grad.check_same_shape(params)?;
        self.m.check_same_shape(params)?;
        let cols = grad.cols();
        if let Some(pos) = grad.as_slice().iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
                value: grad.as_slice()[pos],
            });
        }
        self.t += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - libm::pow(beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(beta2, self.t as f64);
        let mut touched = 0;
        for r in 0..grad.rows() {
            let g = grad.row(r);
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            touched += 1;
            let m = self.m.row_mut(r);
            let v = self.v.row_mut(r);
            let p = params.row_mut(r);
            for c in 0..cols {
                m[c] = beta1 * m[c] + (1.0 - beta1) * g[c];
                v[c] = beta2 * v[c] + (1.0 - beta2) * g[c] * g[c];
                let m_hat = m[c] / bc1;
                let v_hat = v[c] / bc2;
                p[c] -= lr * m_hat / (sqrt(v_hat) + epsilon);
            }
        }
        Ok(touched)
    }
}

/// One row of the training curve. Validation columns are filled on
/// evaluation epochs only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    /// Mean batch objective over the epoch.
    pub loss: f64,
    pub val_recall: Option<f64>,
    pub val_ndcg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub curve: Vec<CurveRow>,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_val_recall: Option<f64>,
    pub stopped_early: bool,
}

/// Trains `state` in place. On return `state` holds the best-validation
/// checkpoint (or the last epoch when there is no validation data) with a
/// fresh forward pass.
pub fn fit(
    ds: &InteractionDataset,
    config: &TrainConfig,
    state: &mut EmbeddingState,
    op: &GraphOperator,
    weights: &LayerWeights,
) -> Result<FitResult> {
    fit_with_observer(ds, config, state, op, weights, |_| {})
}

/// [`fit`] that hands every curve row to `observer` as soon as the epoch
/// ends, so callers keep a partial curve when training fails.
pub fn fit_with_observer(
    ds: &InteractionDataset,
    config: &TrainConfig,
    state: &mut EmbeddingState,
    op: &GraphOperator,
    weights: &LayerWeights,
    mut observer: impl FnMut(&CurveRow),
) -> Result<FitResult> {
    config.validate()?;
    if state.num_users() != ds.num_users() || state.num_items() != ds.num_items() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} users, {} items", ds.num_users(), ds.num_items()),
            actual: format!("{} users, {} items", state.num_users(), state.num_items()),
        });
    }
    state.forward(op, weights)?;
    let mut result = FitResult {
        curve: Vec::new(),
        epochs_run: 0,
        best_epoch: None,
        best_val_recall: None,
        stopped_early: false,
    };
    if config.epochs == 0 {
        return Ok(result);
    }

    let degrees = op.matrix().degrees().to_vec();
    let sampler = TripletSampler::new(ds);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(state.e0().rows(), state.dim(), config.adam);
    let batches = sampler.num_pairs().div_ceil(config.batch_size);
    let has_validation = ds.num_validation_interactions() > 0;
    let mut best: Option<DenseMatrix> = None;
    let mut bad_rounds = 0usize;

    for epoch in 1..=config.epochs {
        let mut loss_sum = 0.0;
        let mut counted = 0usize;
        for _ in 0..batches {
            let batch = sampler.sample(config.batch_size, &mut rng);
            if batch.is_empty() {
                continue;
            }
            state.forward(op, weights)?;
            let loss = bpr_loss(&batch, state, &config.objective, &degrees)?;
            if !loss.total.is_finite() {
                return Err(restore_after_failure(
                    state,
                    op,
                    weights,
                    best.take(),
                    &result,
                    Error::Diverged {
                        epoch,
                        loss: loss.total,
                        best_epoch: result.best_epoch,
                    },
                ));
            }
            let grad = backward(&batch, state, op, weights, &config.objective, &degrees)?;
            if let Err(err) = adam.step(&grad, state.e0_mut(), config.learning_rate) {
                return Err(restore_after_failure(
                    state,
                    op,
                    weights,
                    best.take(),
                    &result,
                    err,
                ));
            }
            loss_sum += loss.total;
            counted += 1;
        }
        let loss = if counted == 0 {
            0.0
        } else {
            loss_sum / counted as f64
        };
        result.epochs_run = epoch;

        let mut row = CurveRow {
            epoch,
            loss,
            val_recall: None,
            val_ndcg: None,
        };
        let eval_now = epoch % config.eval_every == 0 || epoch == config.epochs;
        if eval_now && has_validation {
            state.forward(op, weights)?;
            let report = evaluate_all_ranking(state, ds, EvalSplit::Validation, config.topk)?;
            row.val_recall = Some(report.recall);
            row.val_ndcg = Some(report.ndcg);
            if result.best_val_recall.is_none_or(|b| report.recall > b) {
                result.best_val_recall = Some(report.recall);
                result.best_epoch = Some(epoch);
                best = Some(state.e0().clone());
                bad_rounds = 0;
            } else {
                bad_rounds += 1;
            }
        }
        observer(&row);
        result.curve.push(row);
        if eval_now && has_validation && bad_rounds >= config.patience {
            result.stopped_early = epoch < config.epochs;
            break;
        }
    }

    if let Some(best) = best {
        state.set_e0(best)?;
    }
    state.forward(op, weights)?;
    Ok(result)
}

fn restore_after_failure(
    state: &mut EmbeddingState,
    op: &GraphOperator,
    weights: &LayerWeights,
    best: Option<DenseMatrix>,
    result: &FitResult,
    err: Error,
) -> Error {
    if let Some(best) = best {
        log::error!(
            "training failed; restoring checkpoint from epoch {:?}",
            result.best_epoch
        );
        if state
            .set_e0(best)
            .and_then(|_| state.forward(op, weights))
            .is_err()
        {
            log::error!("could not restore the best checkpoint");
        }
    }
    err
}
