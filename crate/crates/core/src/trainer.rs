//! Mini-batch SGD with momentum on the joint weighted loss.
//!
//! The trainer owns nothing clever: shuffle, batch, forward/backward,
//! momentum update, repeat, with a divergence guard and a per-epoch log.
//! Heads whose loss weight is zero are skipped during the update as well,
//! momentum buffers included, so their parameters stay bitwise untouched
//! for the whole run.
//!
//! Everything downstream of the seed is deterministic: identical config
//! and seed reproduce the log byte for byte.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::budget::WeightScheme;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{EarlyExitNet, ParamGroup};
use crate::tensor::argmax;
use crate::Scalar;

/// Training aborts when the loss exceeds this multiple of its initial
/// value (or stops being finite).
pub const DIVERGENCE_FACTOR: f64 = 1e3;

/// Learning rate that trains the desk architecture stably when batch
/// norm is present.
pub const DEFAULT_LR_BATCHNORM: f64 = 0.01;
/// Without batch norm the stable rate is two orders of magnitude lower.
pub const DEFAULT_LR_PLAIN: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Per-head loss weighting; evaluated once for the net's head count.
    pub scheme: WeightScheme,
}

impl TrainConfig {
    /// Sensible desk-scale defaults; the learning rate is chosen by
    /// whether the architecture carries batch norm.
    pub fn desk(scheme: WeightScheme, batchnorm: bool, seed: u64) -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            learning_rate: if batchnorm { DEFAULT_LR_BATCHNORM } else { DEFAULT_LR_PLAIN },
            momentum: 0.9,
            weight_decay: 5e-4,
            seed,
            scheme,
        }
    }

    pub fn validate(&self, batchnorm: bool) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("TrainConfig", "epochs must be > 0"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::invalid(
                "TrainConfig",
                format!("learning rate must be > 0, got {}", self.learning_rate),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(
                "TrainConfig",
                format!("momentum must be in [0, 1), got {}", self.momentum),
            ));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::invalid(
                "TrainConfig",
                format!("weight decay must be >= 0, got {}", self.weight_decay),
            ));
        }
        let min_batch = if batchnorm { 2 } else { 1 };
        if self.batch_size < min_batch {
            return Err(Error::invalid(
                "TrainConfig",
                format!(
                    "batch size must be >= {min_batch} (batch norm {}), got {}",
                    if batchnorm { "on" } else { "off" },
                    self.batch_size
                ),
            ));
        }
        Ok(())
    }
}

/// One epoch's worth of bookkeeping.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean joint loss (weighted sum + regularisation) over batches.
    pub total_loss: f64,
    /// Mean unweighted cross-entropy per head.
    pub per_head_loss: Vec<f64>,
    /// Validation accuracy per head; empty when no validation set given.
    pub val_acc: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainLog {
    pub head_count: usize,
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    /// Render as CSV, full-precision floats so equal logs are equal
    /// byte-wise: `epoch,total_loss,loss_head_k...,val_acc_head_k...`.
    pub fn to_csv(&self) -> String {
        let k = self.head_count;
        let with_val = self.records.iter().any(|r| !r.val_acc.is_empty());
        let mut out = String::from("epoch,total_loss");
        for i in 1..=k {
            out.push_str(&format!(",loss_head_{i}"));
        }
        if with_val {
            for i in 1..=k {
                out.push_str(&format!(",val_acc_head_{i}"));
            }
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{},{}", r.epoch, r.total_loss));
            for l in &r.per_head_loss {
                out.push_str(&format!(",{l}"));
            }
            if with_val {
                for a in &r.val_acc {
                    out.push_str(&format!(",{a}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Per-head accuracy on `ds` in eval mode. Batch size only affects
/// memory, not results.
pub fn validate<S: Scalar>(net: &EarlyExitNet<S>, ds: &Dataset<S>) -> Result<Vec<f64>> {
    if ds.is_empty() {
        return Err(Error::invalid("validate", "empty dataset"));
    }
    let k = net.head_count();
    let mut correct = vec![0usize; k];
    let idxs: Vec<usize> = (0..ds.len()).collect();
    for chunk in idxs.chunks(256) {
        let (x, labels) = ds.gather(chunk)?;
        let logits = net.infer_all_heads(&x)?;
        for (h, lg) in logits.iter().enumerate() {
            for (i, &label) in labels.iter().enumerate() {
                if argmax(lg.row(i)) == label {
                    correct[h] += 1;
                }
            }
        }
    }
    Ok(correct.iter().map(|c| *c as f64 / ds.len() as f64).collect())
}

/// Run SGD with momentum over `train_ds`, logging per-epoch losses and,
/// when `val_ds` is given, per-head validation accuracy.
pub fn train<S: Scalar>(
    net: &mut EarlyExitNet<S>,
    train_ds: &Dataset<S>,
    val_ds: Option<&Dataset<S>>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate(net.has_batchnorm())?;
    if train_ds.is_empty() {
        return Err(Error::invalid("train", "empty training set"));
    }
    if train_ds.num_classes() != net.num_classes() {
        return Err(Error::invalid(
            "train",
            format!("dataset has {} classes, net {}", train_ds.num_classes(), net.num_classes()),
        ));
    }
    if train_ds.image_shape() != net.input_shape() {
        return Err(Error::shape(
            "train",
            format!(
                "dataset examples {:?} vs net input {:?}",
                train_ds.image_shape(),
                net.input_shape()
            ),
        ));
    }

    let k = net.head_count();
    let weights = cfg.scheme.weights(k)?;
    let lr = S::from_f64(cfg.learning_rate);
    let mu = S::from_f64(cfg.momentum);
    let mut velocities: Vec<Vec<S>> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut indices: Vec<usize> = (0..train_ds.len()).collect();
    let mut baseline: Option<f64> = None;
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        let mut batch_losses = Vec::new();
        let mut head_losses = vec![0.0f64; k];
        for (batch_no, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 && net.has_batchnorm() {
                // a trailing singleton has no batch statistics; skip it
                continue;
            }
            let (x, labels) = train_ds.gather(chunk)?;
            net.zero_grads();
            let jl = net
                .joint_loss_backward(&x, &labels, &weights, cfg.weight_decay)
                .map_err(|e| match e {
                    Error::NonFinite { .. } => {
                        Error::Diverged { epoch, batch: batch_no, loss: f64::NAN }
                    }
                    other => other,
                })?;
            let base = *baseline.get_or_insert(jl.total.max(1e-12));
            if !jl.total.is_finite() || jl.total > DIVERGENCE_FACTOR * base {
                return Err(Error::Diverged { epoch, batch: batch_no, loss: jl.total });
            }

            if velocities.is_empty() {
                velocities = net
                    .params_mut()
                    .iter()
                    .map(|p| vec![S::zero(); p.value.numel()])
                    .collect();
            }
            for (vel, p) in velocities.iter_mut().zip(net.params_mut()) {
                if let ParamGroup::Head(h) = p.group {
                    if weights[h] == 0.0 {
                        continue;
                    }
                }
                for ((v, g), theta) in
                    vel.iter_mut().zip(p.grad.data()).zip(p.value.data_mut())
                {
                    *v = mu * *v + *g;
                    *theta -= lr * *v;
                }
            }

            batch_losses.push(jl.total);
            for (acc, l) in head_losses.iter_mut().zip(&jl.per_head) {
                *acc += l;
            }
        }
        if batch_losses.is_empty() {
            return Err(Error::invalid(
                "train",
                "no trainable batches (dataset smaller than the batch-norm minimum?)",
            ));
        }
        let n_batches = batch_losses.len() as f64;
        let val_acc = match val_ds {
            Some(v) => validate(net, v)?,
            None => Vec::new(),
        };
        records.push(EpochRecord {
            epoch,
            total_loss: batch_losses.iter().sum::<f64>() / n_batches,
            per_head_loss: head_losses.iter().map(|l| l / n_batches).collect(),
            val_acc,
        });
    }

    Ok(TrainLog { head_count: k, records })
}
