//! Maximum-likelihood training: exact reverse-mode gradients of the negative
//! log-likelihood, RMSProp updates, step-decay schedule and checkpoints.

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::likelihood::{bpd, bpd_with_offset, dequantize, dequantize_fixed, log_likelihood, Prior};
use crate::tensor::{RngState, Tensor};

pub const RMS_DECAY: f64 = 0.9;
pub const RMS_EPS: f64 = 1e-8;

// Examples used for the training-set BPD column of the metrics log.
const TRAIN_EVAL_SUBSET: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Coefficient of the `λ‖φ‖²` penalty.
    pub l2: f64,
    pub seed: u64,
    pub eval_every: usize,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Halve the learning rate at 80% and again at 90% of `steps`.
    pub lr_decay: bool,
    /// Training data holds raw 0–255 pixels to be dequantized per batch.
    pub dequantize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            steps: 1000,
            batch_size: 32,
            l2: 0.0,
            seed: 0,
            eval_every: 250,
            clip_norm: Some(100.0),
            lr_decay: true,
            dequantize: false,
        }
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "lr",
    "steps",
    "batch_size",
    "l2",
    "seed",
    "eval_every",
    "clip_norm",
    "lr_decay",
    "dequantize",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::InvalidConfig(format!("l2 must be nonnegative, got {}", self.l2)));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be at least 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::InvalidConfig(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if !self.lr_decay {
            return self.lr;
        }
        let (s, n) = (step as u128 * 10, self.steps as u128);
        if s >= n * 9 {
            self.lr * 0.25
        } else if s >= n * 8 {
            self.lr * 0.5
        } else {
            self.lr
        }
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("lr", self.lr);
        kv.set("steps", self.steps);
        kv.set("batch_size", self.batch_size);
        kv.set("l2", self.l2);
        kv.set("seed", self.seed);
        kv.set("eval_every", self.eval_every);
        kv.set("clip_norm", self.clip_norm.unwrap_or(0.0));
        kv.set("lr_decay", self.lr_decay);
        kv.set("dequantize", self.dequantize);
        kv
    }

    /// Missing keys take their defaults from `base`; `clip_norm = 0` disables clipping.
    pub fn from_kv(kv: &KeyValues, base: &TrainConfig) -> Result<Self> {
        let clip: f64 = kv.get_or("clip_norm", base.clip_norm.unwrap_or(0.0))?;
        let cfg = Self {
            lr: kv.get_or("lr", base.lr)?,
            steps: kv.get_or("steps", base.steps)?,
            batch_size: kv.get_or("batch_size", base.batch_size)?,
            l2: kv.get_or("l2", base.l2)?,
            seed: kv.get_or("seed", base.seed)?,
            eval_every: kv.get_or("eval_every", base.eval_every)?,
            clip_norm: (clip > 0.0).then_some(clip),
            lr_decay: kv.get_or("lr_decay", base.lr_decay)?,
            dequantize: kv.get_or("dequantize", base.dequantize)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// RMSProp second-moment accumulators, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub accumulators: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(model: &FlowModel) -> Self {
        Self {
            accumulators: model.zero_grads(),
            step: 0,
        }
    }

    /// `v ← 0.9v + 0.1g²; p ← p − lr·g/√(v + ε)`.
    pub fn rmsprop_step(&mut self, params: Vec<&mut [f64]>, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if params.len() != self.accumulators.len() || grads.len() != self.accumulators.len() {
            return Err(crate::error::shape_mismatch(
                self.accumulators.len(),
                (params.len(), grads.len()),
            ));
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.accumulators) {
            if p.len() != g.len() || g.len() != v.len() {
                return Err(crate::error::shape_mismatch(v.len(), (p.len(), g.len())));
            }
            for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = RMS_DECAY * *vi + (1.0 - RMS_DECAY) * gi * gi;
                *pi -= lr * gi / (*vi + RMS_EPS).sqrt();
            }
        }
        self.step += 1;
        Ok(())
    }
}

fn non_finite(detail: String) -> Error {
    Error::NonFiniteLoss { step: 0, detail }
}

/// `loss = −mean log p(x) + λ‖φ‖²` and its exact gradient. Per-example
/// passes run in parallel; their gradients are summed in example order so
/// the result does not depend on scheduling.
pub fn loss_and_grad(model: &FlowModel, prior: &Prior, batch: &Tensor, l2: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = batch.n_examples();
    if n == 0 {
        return Err(Error::TooFewExamples { needed: 1, got: 0 });
    }
    let scale = 1.0 / n as f64;
    let per_example: Vec<(f64, Vec<Vec<f64>>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let trace = model.trace_example(batch.example(i))?;
            let ll = prior.log_prob(&trace.z) + trace.logdet;
            let grad_z: Vec<f64> = trace.z.iter().map(|&z| -scale * prior.score(z)).collect();
            let mut grads = model.zero_grads();
            model.backward_example(&trace, &grad_z, -scale, &mut grads)?;
            Ok((ll, grads))
        })
        .collect::<Result<_>>()?;
    let mut iter = per_example.into_iter();
    let (first_ll, mut grads) = iter.next().expect("nonempty batch");
    let mut sum_ll = first_ll;
    for (ll, g) in iter {
        sum_ll += ll;
        for (acc, gi) in grads.iter_mut().zip(g) {
            for (a, b) in acc.iter_mut().zip(gi) {
                *a += b;
            }
        }
    }
    let mut loss = -sum_ll * scale;
    if l2 > 0.0 {
        for (g, p) in grads.iter_mut().zip(model.params()) {
            for (gi, pi) in g.iter_mut().zip(p) {
                loss += l2 * pi * pi;
                *gi += 2.0 * l2 * pi;
            }
        }
    }
    if !loss.is_finite() {
        return Err(non_finite(format!(
            "loss = {loss}, mean log-likelihood = {}",
            sum_ll * scale
        )));
    }
    if let Some((t, _)) = grads.iter().enumerate().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
        return Err(non_finite(format!("gradient of parameter tensor {t} is not finite")));
    }
    Ok((loss, grads))
}

/// Rescale `grads` in place so the global norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRow {
    pub step: usize,
    pub loss: f64,
    pub train_bpd: f64,
    pub eval_bpd: f64,
    pub logdet_mean: f64,
}

pub fn write_metrics_csv_to<W: Write>(w: W, rows: &[MetricsRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    write_metrics_csv_to(std::fs::File::create(path)?, rows)
}

/// Training inputs. With `TrainConfig::dequantize` the tensors hold raw pixels.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a Tensor,
    pub eval: Option<&'a Tensor>,
}

struct EvalSets {
    train: Tensor,
    eval: Option<Tensor>,
}

impl EvalSets {
    fn new(data: &TrainData<'_>, config: &TrainConfig) -> Result<Self> {
        let n = data.train.n_examples().min(TRAIN_EVAL_SUBSET);
        let subset = data.train.select(&(0..n).collect::<Vec<_>>());
        let prep = |t: Tensor| -> Result<Tensor> {
            if config.dequantize {
                dequantize_fixed(&t, config.seed ^ 0x5EED)
            } else {
                Ok(t)
            }
        };
        Ok(Self {
            train: prep(subset)?,
            eval: data.eval.map(|e| prep(e.clone())).transpose()?,
        })
    }
}

fn mean_bpd_and_logdet(model: &FlowModel, prior: &Prior, x: &Tensor, offset: f64) -> Result<(f64, f64)> {
    let rows = log_likelihood(model, prior, x)?;
    let n = rows.len().max(1) as f64;
    let dim = model.dim();
    let bpd = rows.iter().map(|r| bpd_with_offset(r.total, dim, offset)).sum::<f64>() / n;
    let ld = rows.iter().map(|r| r.volume_term).sum::<f64>() / n;
    Ok((bpd, ld))
}

fn draw_batch(data: &Tensor, config: &TrainConfig, step: usize) -> Result<Tensor> {
    let mut rng = RngState::new(config.seed).child(step as u64);
    let idx: Vec<usize> = (0..config.batch_size).map(|_| rng.index(data.n_examples())).collect();
    let batch = data.select(&idx);
    if config.dequantize {
        dequantize(&batch, &mut rng)
    } else {
        Ok(batch)
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub optimizer: OptimizerState,
    pub metrics: Vec<MetricsRow>,
}

/// Train from a fresh optimizer state for `config.steps` steps.
pub fn train(model: &mut FlowModel, prior: &Prior, data: TrainData<'_>, config: &TrainConfig) -> Result<TrainOutcome> {
    let mut optimizer = OptimizerState::new(model);
    let metrics = train_until(model, prior, data, config, &mut optimizer, config.steps)?;
    Ok(TrainOutcome { optimizer, metrics })
}

/// Continue from `optimizer.step` up to `until` (at most `config.steps`).
/// Each step draws its batch from the child stream `(seed, step)`, so a run
/// resumed from a checkpoint follows the uninterrupted trajectory exactly.
pub fn train_until(
    model: &mut FlowModel,
    prior: &Prior,
    data: TrainData<'_>,
    config: &TrainConfig,
    optimizer: &mut OptimizerState,
    until: usize,
) -> Result<Vec<MetricsRow>> {
    config.validate()?;
    if data.train.n_examples() == 0 {
        return Err(Error::TooFewExamples { needed: 1, got: 0 });
    }
    let until = until.min(config.steps);
    let offset = if config.dequantize { bpd(0.0, 1) } else { 0.0 };
    let sets = EvalSets::new(&data, config)?;
    let mut metrics = Vec::new();
    let mut step = optimizer.step as usize;
    loop {
        let log_now = step % config.eval_every == 0 || step == config.steps;
        if step >= until && !(log_now && step == config.steps) {
            break;
        }
        let batch = draw_batch(data.train, config, step)?;
        let (loss, mut grads) = loss_and_grad(model, prior, &batch, config.l2).map_err(|e| match e {
            Error::NonFiniteLoss { detail, .. } => Error::NonFiniteLoss { step, detail },
            other => other,
        })?;
        if log_now {
            let (train_bpd, train_ld) = mean_bpd_and_logdet(model, prior, &sets.train, offset)?;
            let (eval_bpd, logdet_mean) = match &sets.eval {
                Some(e) => mean_bpd_and_logdet(model, prior, e, offset)?,
                None => (f64::NAN, train_ld),
            };
            metrics.push(MetricsRow {
                step,
                loss,
                train_bpd,
                eval_bpd,
                logdet_mean,
            });
        }
        if step >= until {
            break;
        }
        if let Some(c) = config.clip_norm {
            clip_grad_norm(&mut grads, c);
        }
        optimizer.rmsprop_step(model.params_mut(), &grads, config.lr_at(step))?;
        step += 1;
    }
    Ok(metrics)
}
