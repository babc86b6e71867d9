//! BPR and IPS-weighted BPR training of the layer-0 embeddings with Adam.

use std::fmt;
use std::str::FromStr;
use std::ops::ControlFlow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregationOperator, Normalization, Strategy};
use crate::error::{Error, Result};
use crate::graph::InteractionGraph;
use crate::matrix::{axpy, dot, Matrix};
use crate::model::{EmbeddingModel, FinalEmbeddings, DEFAULT_DEPTH, DEFAULT_DIM, DEFAULT_INIT_STD};
use crate::propensity::PropensityTable;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Bpr,
    IpsBpr,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Bpr => "bpr",
            LossKind::IpsBpr => "ips-bpr",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bpr" => Ok(LossKind::Bpr),
            "ips-bpr" | "ips_bpr" | "ipsbpr" => Ok(LossKind::IpsBpr),
            other => Err(Error::Config(format!("unknown loss '{other}' (expected bpr or ips-bpr)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_weight: f64,
    pub loss: LossKind,
    pub seed: u64,
    pub strategy: Strategy,
    pub normalization: Normalization,
    pub dim: usize,
    pub depth: usize,
    pub init_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 256,
            learning_rate: 0.003,
            l2_weight: 1e-4,
            loss: LossKind::Bpr,
            seed: 0,
            strategy: Strategy::Mean,
            normalization: Strategy::Mean.default_normalization(),
            dim: DEFAULT_DIM,
            depth: DEFAULT_DEPTH,
            init_std: DEFAULT_INIT_STD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.l2_weight >= 0.0 && self.l2_weight.is_finite()) {
            return Err(Error::Config(format!("l2 weight {} must be nonnegative", self.l2_weight)));
        }
        if self.dim == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        Ok(())
    }
}

/// One BPR training example: `user` prefers `pos` over `neg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Samples `batch_size` triples: a uniform user, a uniform neighbor of that
/// user and a uniform non-neighbor found by rejection.
pub fn sample_batch<R: Rng + ?Sized>(graph: &InteractionGraph, rng: &mut R, batch_size: usize) -> Result<Vec<Triple>> {
    let n = graph.num_items();
    (0..batch_size)
        .map(|_| {
            let user = rng.random_range(0..graph.num_users());
            let items = graph.user_items(user);
            if items.len() >= n {
                return Err(Error::NoNegative(user));
            }
            let pos = items[rng.random_range(0..items.len())];
            let neg = loop {
                let cand = rng.random_range(0..n);
                if items.binary_search(&cand).is_err() {
                    break cand;
                }
            };
            Ok(Triple { user, pos, neg })
        })
        .collect()
}

/// Mean BPR loss over `batch` plus the L2 term, and its gradient w.r.t. the
/// layer-0 embeddings (back-propagated through `op`).
pub fn bpr_loss<T: Scalar>(
    model: &EmbeddingModel<T>,
    op: &AggregationOperator<T>,
    final_emb: &FinalEmbeddings<T>,
    batch: &[Triple],
    l2_weight: T,
) -> Result<(T, Matrix<T>)> {
    weighted_bpr(model, op, final_emb, batch, l2_weight, |_| T::one())
}

/// Like [`bpr_loss`] with each triple's data term scaled by `1 / p_pos`.
pub fn ips_bpr_loss<T: Scalar>(
    model: &EmbeddingModel<T>,
    op: &AggregationOperator<T>,
    final_emb: &FinalEmbeddings<T>,
    batch: &[Triple],
    table: &PropensityTable<T>,
    l2_weight: T,
) -> Result<(T, Matrix<T>)> {
    weighted_bpr(model, op, final_emb, batch, l2_weight, |item| table.inverse_weight(item))
}

fn weighted_bpr<T: Scalar>(
    model: &EmbeddingModel<T>,
    op: &AggregationOperator<T>,
    final_emb: &FinalEmbeddings<T>,
    batch: &[Triple],
    l2_weight: T,
    weight: impl Fn(usize) -> T,
) -> Result<(T, Matrix<T>)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let m = model.num_users();
    let d = model.dim();
    let inv_b = T::one() / T::from_count(batch.len());

    let mut grad_final = Matrix::zeros(final_emb.matrix().rows(), d);
    let mut diff = vec![T::zero(); d];
    let mut data_term = T::zero();
    for t in batch {
        let fu = final_emb.user(t.user);
        let fp = final_emb.item(t.pos);
        let fn_ = final_emb.item(t.neg);
        for c in 0..d {
            diff[c] = fp[c] - fn_[c];
        }
        let x = dot(fu, &diff);
        let w = weight(t.pos);
        data_term += w * softplus_neg(x);
        // d/dx softplus(-x) = -sigmoid(-x)
        let coef = -(w * sigmoid(-x)) * inv_b;
        axpy(coef, &diff, grad_final.row_mut(t.user));
        let fu = fu.to_vec();
        axpy(coef, &fu, grad_final.row_mut(m + t.pos));
        axpy(-coef, &fu, grad_final.row_mut(m + t.neg));
    }
    let mut loss = data_term * inv_b;
    let mut grad = model.backward(op, &grad_final)?;

    if l2_weight > T::zero() {
        let e = model.embeddings();
        let scale = l2_weight * inv_b / T::from_count(3);
        let mut sq = T::zero();
        for t in batch {
            for row in [t.user, m + t.pos, m + t.neg] {
                let er = e.row(row);
                sq += dot(er, er);
                axpy(scale + scale, er, grad.row_mut(row));
            }
        }
        loss += scale * sq;
    }
    Ok((loss, grad))
}

/// `ln(1 + exp(-x))` without overflow.
#[inline]
fn softplus_neg<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Adam optimizer state for a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    first: Vec<T>,
    second: Vec<T>,
    step: u64,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            first: vec![T::zero(); len],
            second: vec![T::zero(); len],
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[T] {
        &self.first
    }

    pub fn second_moment(&self) -> &[T] {
        &self.second
    }

    /// One bias-corrected update of `params` in place.
    pub fn update(&mut self, params: &mut [T], grad: &[T]) {
        debug_assert_eq!(params.len(), self.first.len());
        debug_assert_eq!(grad.len(), self.first.len());
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let one = T::one();
        let correction1 = T::lit(1.0 - self.beta1.powi(t));
        let correction2 = T::lit(1.0 - self.beta2.powi(t));
        let step_size = T::lit(self.learning_rate) / correction1;
        let eps = T::lit(self.eps);
        let c2_sqrt = correction2.sqrt();
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *p -= step_size * *m / (v.sqrt() / c2_sqrt + eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: EmbeddingModel<T>,
    /// Mean batch loss per epoch.
    pub loss_trace: Vec<f64>,
}

/// Trains from a seeded initialization; see [`train_with`] for progress hooks.
pub fn train<T: Scalar>(
    graph: &InteractionGraph,
    table: &PropensityTable<T>,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_with(graph, table, config, |_, _| {})
}

/// Runs `epochs * ceil(E / batch_size)` Adam steps. `on_epoch` receives the
/// epoch index and its mean loss.
pub fn train_with<T: Scalar>(
    graph: &InteractionGraph,
    table: &PropensityTable<T>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome<T>> {
    train_monitored(graph, table, config, |epoch, loss, _| {
        on_epoch(epoch, loss);
        ControlFlow::Continue(())
    })
}

/// Like [`train_with`], but the monitor also sees the model after each
/// epoch and may stop training early by returning `Break`.
pub fn train_monitored<T: Scalar>(
    graph: &InteractionGraph,
    table: &PropensityTable<T>,
    config: &TrainConfig,
    mut monitor: impl FnMut(usize, f64, &EmbeddingModel<T>) -> ControlFlow<()>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if let Some(u) = (0..graph.num_users()).find(|&u| graph.user_degree()[u] >= graph.num_items()) {
        return Err(Error::NoNegative(u));
    }
    let op = AggregationOperator::build(graph, Some(table), config.strategy, config.normalization)?;
    let mut model = EmbeddingModel::<T>::init_with_std(
        graph.num_users(),
        graph.num_items(),
        config.dim,
        config.init_std,
        config.seed,
    )?
    .with_depth(config.depth);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = AdamState::<T>::new(model.embeddings().as_slice().len(), config.learning_rate);
    let steps_per_epoch = graph.num_edges().div_ceil(config.batch_size);
    let l2 = T::lit(config.l2_weight);
    let mut loss_trace = Vec::with_capacity(config.epochs);
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for _ in 0..steps_per_epoch {
            let batch = sample_batch(graph, &mut rng, config.batch_size)?;
            let final_emb = model.forward(&op)?;
            let (loss, grad) = match config.loss {
                LossKind::Bpr => bpr_loss(&model, &op, &final_emb, &batch, l2)?,
                LossKind::IpsBpr => ips_bpr_loss(&model, &op, &final_emb, &batch, table, l2)?,
            };
            if !loss.is_finite() {
                let mut rows: Vec<usize> = batch
                    .iter()
                    .flat_map(|t| [t.user, graph.num_users() + t.pos, graph.num_users() + t.neg])
                    .filter(|&r| final_emb.matrix().row(r).iter().any(|x| !x.is_finite()))
                    .collect();
                rows.sort_unstable();
                rows.dedup();
                return Err(Error::NonFinite { step, rows });
            }
            adam.update(model.embeddings_mut().as_mut_slice(), grad.as_slice());
            total += loss.as_f64();
            step += 1;
        }
        if !model.embeddings().is_finite() {
            return Err(Error::NonFinite {
                step,
                rows: model.embeddings().non_finite_rows(),
            });
        }
        let mean = total / steps_per_epoch as f64;
        loss_trace.push(mean);
        if monitor(epoch, mean, &model).is_break() {
            break;
        }
    }
    Ok(TrainOutcome { model, loss_trace })
}

/// Writes `epoch,mean_loss` rows (epochs numbered from 1).
pub fn write_loss_csv<W: std::io::Write>(trace: &[f64], mut out: W) -> Result<()> {
    writeln!(out, "epoch,mean_loss")?;
    for (e, l) in trace.iter().enumerate() {
        writeln!(out, "{},{}", e + 1, l)?;
    }
    Ok(())
}
