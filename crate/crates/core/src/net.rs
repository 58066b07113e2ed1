//! The early-exit network: one backbone, several classifier heads.
//!
//! Heads hang off the backbone at strictly increasing layer indices; the
//! last head sits at the very end and plays the role of the original
//! network's output layer. A forward pass computes the backbone prefix
//! once and branches into each head, so asking for all K opinions costs
//! one backbone traversal plus K small head evaluations.
//!
//! Training minimises `sum_k w_k * L_k + reg`, the per-head
//! cross-entropies combined with caller-supplied weights plus optional L2
//! regularisation. The backward pass walks the backbone once from deep to
//! shallow, merging each head's gradient where it attaches, so shared
//! layers accumulate contributions from every weighted head. Heads with
//! weight exactly zero are skipped entirely: no loss gradient, no weight
//! decay, so their parameters (and any momentum on them) stay untouched.

use crate::error::{Error, Result};
use crate::layers::{
    softmax_cross_entropy, softmax_rows, BatchNorm, Conv2d, Dense, GlobalAvgPool, GridAvgPool,
    Layer, MaxPool2d, Relu,
};
use crate::tensor::Tensor;
use crate::Scalar;
use rand::Rng;

/// How a head turns a feature map into class logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Flatten the feature map and apply one fully-connected layer.
    FcOnly,
    /// Global average pooling per channel, then fully-connected.
    Avg,
    /// Average pooling onto a 4x4 grid (keeps coarse position), then
    /// fully-connected. Needs spatial extent >= 4 at the attach point.
    Avg4x4,
}

impl HeadKind {
    pub fn name(&self) -> &'static str {
        match self {
            HeadKind::FcOnly => "fc",
            HeadKind::Avg => "avg",
            HeadKind::Avg4x4 => "avg4x4",
        }
    }
}

/// Where and how to attach one head.
#[derive(Debug, Clone)]
pub struct HeadSpec {
    /// Backbone layer index whose output the head consumes.
    pub attach_after: usize,
    pub kind: HeadKind,
    /// Width of an optional extra fully-connected + ReLU stage before the
    /// classifier. Off by default; single-layer heads train much more
    /// reliably at this scale.
    pub hidden: Option<usize>,
}

impl HeadSpec {
    pub fn new(attach_after: usize, kind: HeadKind) -> Self {
        HeadSpec { attach_after, kind, hidden: None }
    }
}

#[derive(Debug, Clone)]
struct Head<S> {
    attach_after: usize,
    kind: HeadKind,
    layers: Vec<Layer<S>>,
}

/// Identifies which part of the network a parameter belongs to, for
/// per-group treatment (zero-weight heads are left alone entirely).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Backbone,
    Head(usize),
}

pub struct ParamRef<'a, S> {
    pub name: String,
    pub group: ParamGroup,
    pub value: &'a Tensor<S>,
}

pub struct ParamRefMut<'a, S> {
    pub name: String,
    pub group: ParamGroup,
    pub value: &'a mut Tensor<S>,
    pub grad: &'a mut Tensor<S>,
}

/// Joint weighted loss over all heads for one batch.
#[derive(Debug, Clone)]
pub struct JointLoss {
    /// Raw per-head cross-entropies (unweighted).
    pub per_head: Vec<f64>,
    /// The weights that were applied.
    pub weights: Vec<f64>,
    /// `sum_k weights[k] * per_head[k]`.
    pub weighted_sum: f64,
    /// L2 regularisation value, `0.5 * lambda * ||theta_active||^2`.
    pub reg: f64,
    /// `weighted_sum + reg`; what the trainer reports and monitors.
    pub total: f64,
}

/// Per-head cost accounting in multiply-accumulates per example.
#[derive(Debug, Clone)]
pub struct CostBreakdown {
    /// Cumulative backbone MACs from the input through the attach point
    /// of each head.
    pub backbone_prefix: Vec<u64>,
    /// MACs of each head itself (pooling + classifier).
    pub head_macs: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct EarlyExitNet<S> {
    input_shape: Vec<usize>,
    num_classes: usize,
    backbone: Vec<Layer<S>>,
    heads: Vec<Head<S>>,
    has_batchnorm: bool,
}

impl<S: Scalar> EarlyExitNet<S> {
    /// Assemble a network from an explicit backbone and head specs.
    ///
    /// `input_shape` is per example (`[C, H, W]`). Attach indices must be
    /// strictly increasing and the last head must sit on the final
    /// backbone layer. Head parameters are drawn from `rng` after the
    /// backbone has been built, in head order.
    pub fn new<R: Rng>(
        input_shape: &[usize],
        num_classes: usize,
        backbone: Vec<Layer<S>>,
        head_specs: &[HeadSpec],
        rng: &mut R,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Architecture(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if backbone.is_empty() {
            return Err(Error::Architecture("backbone must have at least one layer".into()));
        }
        if head_specs.is_empty() {
            return Err(Error::Architecture("need at least one head".into()));
        }
        for pair in head_specs.windows(2) {
            if pair[1].attach_after <= pair[0].attach_after {
                return Err(Error::Architecture(format!(
                    "head attach points must be strictly increasing, got {} then {}",
                    pair[0].attach_after, pair[1].attach_after
                )));
            }
        }
        let last = head_specs.last().unwrap();
        if last.attach_after != backbone.len() - 1 {
            return Err(Error::Architecture(format!(
                "the last head must attach to the final backbone layer {} (got {}); it is the \
                 network's ordinary output",
                backbone.len() - 1,
                last.attach_after
            )));
        }

        // shape per backbone layer output, per example
        let mut shapes = Vec::with_capacity(backbone.len());
        let mut cur = input_shape.to_vec();
        for layer in &backbone {
            cur = layer.out_shape(&cur)?;
            shapes.push(cur.clone());
        }

        let mut heads = Vec::with_capacity(head_specs.len());
        for spec in head_specs {
            let feat_shape = shapes
                .get(spec.attach_after)
                .ok_or_else(|| {
                    Error::Architecture(format!(
                        "attach index {} beyond backbone of {} layers",
                        spec.attach_after,
                        backbone.len()
                    ))
                })?
                .clone();
            let layers = build_head_layers(&feat_shape, spec, num_classes, rng)?;
            heads.push(Head { attach_after: spec.attach_after, kind: spec.kind, layers });
        }

        let has_batchnorm = backbone.iter().any(|l| matches!(l, Layer::BatchNorm(_)));
        Ok(EarlyExitNet { input_shape: input_shape.to_vec(), num_classes, backbone, heads, has_batchnorm })
    }

    /// The standard desk-scale architecture: one block per entry of
    /// `channels`, each `conv3x3 (pad 1) -> [batchnorm] -> relu ->
    /// maxpool2x2`, with one head attached after every block's pool and
    /// the last head serving as the network output.
    pub fn conv_blocks<R: Rng>(
        input_shape: &[usize],
        channels: &[usize],
        batchnorm: bool,
        head_kind: HeadKind,
        hidden: Option<usize>,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let kinds = vec![head_kind; channels.len()];
        Self::conv_blocks_with_kinds(input_shape, channels, batchnorm, &kinds, hidden, num_classes, rng)
    }

    /// Like [`conv_blocks`](Self::conv_blocks) but with one head kind per
    /// block, so shallow heads can pool on a coarser grid than deep ones.
    pub fn conv_blocks_with_kinds<R: Rng>(
        input_shape: &[usize],
        channels: &[usize],
        batchnorm: bool,
        kinds: &[HeadKind],
        hidden: Option<usize>,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let [c, _, _] = input_shape else {
            return Err(Error::Architecture(format!(
                "conv backbone wants a [C, H, W] input, got {input_shape:?}"
            )));
        };
        if channels.is_empty() {
            return Err(Error::Architecture("need at least one conv block".into()));
        }
        if kinds.len() != channels.len() {
            return Err(Error::Architecture(format!(
                "got {} head kinds for {} conv blocks",
                kinds.len(),
                channels.len()
            )));
        }
        let mut backbone = Vec::new();
        let mut specs = Vec::new();
        let mut in_c = *c;
        for (&out_c, &kind) in channels.iter().zip(kinds) {
            backbone.push(Layer::Conv2d(Conv2d::new(in_c, out_c, 3, 1, 1, rng)?));
            if batchnorm {
                backbone.push(Layer::BatchNorm(BatchNorm::new(out_c)?));
            }
            backbone.push(Layer::Relu(Relu::new()));
            backbone.push(Layer::MaxPool2d(MaxPool2d::new(2, 2)?));
            specs.push(HeadSpec { attach_after: backbone.len() - 1, kind, hidden });
            in_c = out_c;
        }
        EarlyExitNet::new(input_shape, num_classes, backbone, &specs, rng)
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn has_batchnorm(&self) -> bool {
        self.has_batchnorm
    }

    pub fn head_kinds(&self) -> Vec<HeadKind> {
        self.heads.iter().map(|h| h.kind).collect()
    }

    fn check_input(&self, x: &Tensor<S>, op: &'static str) -> Result<()> {
        if x.shape().len() != self.input_shape.len() + 1
            || x.shape()[1..] != self.input_shape[..]
            || x.batch() == 0
        {
            return Err(Error::shape(
                op,
                format!(
                    "expected [n{}] with n >= 1, got {:?}",
                    self.input_shape.iter().map(|d| format!(", {d}")).collect::<String>(),
                    x.shape()
                ),
            ));
        }
        Ok(())
    }

    /// Train-mode forward through the whole network. Returns the logits
    /// of every head and leaves caches behind for the backward pass.
    pub fn forward_train(&mut self, x: &Tensor<S>) -> Result<Vec<Tensor<S>>> {
        self.check_input(x, "forward_train")?;
        let mut logits = Vec::with_capacity(self.heads.len());
        let mut cur = x.clone();
        let mut next_head = 0;
        for (i, layer) in self.backbone.iter_mut().enumerate() {
            cur = layer.forward(&cur)?;
            cur.check_finite("forward_train")?;
            while next_head < self.heads.len() && self.heads[next_head].attach_after == i {
                let mut h = cur.clone();
                for l in self.heads[next_head].layers.iter_mut() {
                    h = l.forward(&h)?;
                }
                h.check_finite("forward_train head")?;
                logits.push(h);
                next_head += 1;
            }
        }
        Ok(logits)
    }

    /// Eval-mode logits for heads `0..=upto`, sharing one backbone
    /// prefix traversal and stopping after the last requested attach
    /// point. Immutable, so inferences can run concurrently.
    pub fn infer_heads_upto(&self, x: &Tensor<S>, upto: usize) -> Result<Vec<Tensor<S>>> {
        self.check_input(x, "infer_heads_upto")?;
        if upto >= self.heads.len() {
            return Err(Error::invalid(
                "infer_heads_upto",
                format!("head {} of {}", upto, self.heads.len()),
            ));
        }
        let mut logits = Vec::with_capacity(upto + 1);
        let mut cur = x.clone();
        let mut next_head = 0;
        for (i, layer) in self.backbone.iter().enumerate() {
            cur = layer.infer(&cur)?;
            cur.check_finite("infer_heads_upto")?;
            while next_head < self.heads.len() && self.heads[next_head].attach_after == i {
                let mut h = cur.clone();
                for l in &self.heads[next_head].layers {
                    h = l.infer(&h)?;
                }
                logits.push(h);
                if next_head == upto {
                    return Ok(logits);
                }
                next_head += 1;
            }
        }
        Ok(logits)
    }

    /// Eval-mode logits of every head.
    pub fn infer_all_heads(&self, x: &Tensor<S>) -> Result<Vec<Tensor<S>>> {
        self.infer_heads_upto(x, self.heads.len() - 1)
    }

    /// Eval-mode class probabilities of every head: the per-head softmax
    /// outputs, deepest-shared-prefix computed once.
    pub fn forward_all(&self, x: &Tensor<S>) -> Result<Vec<Tensor<S>>> {
        self.infer_all_heads(x)?.iter().map(softmax_rows).collect()
    }

    /// Eval-mode logits of exactly one head, skipping the head-specific
    /// work of every other head (the backbone prefix is still needed).
    pub fn infer_single_head(&self, x: &Tensor<S>, head: usize) -> Result<Tensor<S>> {
        self.check_input(x, "infer_single_head")?;
        let h = self
            .heads
            .get(head)
            .ok_or_else(|| Error::invalid("infer_single_head", format!("head {head}")))?;
        let mut cur = x.clone();
        for layer in &self.backbone[..=h.attach_after] {
            cur = layer.infer(&cur)?;
        }
        for l in &h.layers {
            cur = l.infer(&cur)?;
        }
        cur.check_finite("infer_single_head")?;
        Ok(cur)
    }

    /// The sub-network consisting of the first `heads` heads and the
    /// backbone up to the corresponding attach point, sharing this
    /// network's parameters (cloned).
    pub fn truncated(&self, heads: usize) -> Result<EarlyExitNet<S>> {
        if heads == 0 || heads > self.heads.len() {
            return Err(Error::invalid(
                "truncated",
                format!("{} heads of {}", heads, self.heads.len()),
            ));
        }
        let cut = self.heads[heads - 1].attach_after;
        Ok(EarlyExitNet {
            input_shape: self.input_shape.clone(),
            num_classes: self.num_classes,
            backbone: self.backbone[..=cut].to_vec(),
            heads: self.heads[..heads].to_vec(),
            has_batchnorm: self.backbone[..=cut].iter().any(|l| matches!(l, Layer::BatchNorm(_))),
        })
    }

    /// One train-mode forward plus the full backward pass of the joint
    /// weighted loss, with L2 regularisation folded into the gradients.
    ///
    /// `weights` must have one entry per head, each finite and >= 0; they
    /// are applied as given (training passes a normalised vector, but the
    /// linearity of the loss in the weights is not tied to that).
    /// Gradients accumulate on top of whatever is already in the buffers;
    /// call [`EarlyExitNet::zero_grads`] first for a fresh step.
    pub fn joint_loss_backward(
        &mut self,
        x: &Tensor<S>,
        labels: &[usize],
        weights: &[f64],
        weight_decay: f64,
    ) -> Result<JointLoss> {
        let k = self.heads.len();
        if weights.len() != k {
            return Err(Error::invalid(
                "joint_loss_backward",
                format!("{} weights for {} heads", weights.len(), k),
            ));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid(
                "joint_loss_backward",
                format!("weights must be finite and >= 0, got {weights:?}"),
            ));
        }
        if !weight_decay.is_finite() || weight_decay < 0.0 {
            return Err(Error::invalid(
                "joint_loss_backward",
                format!("weight decay must be finite and >= 0, got {weight_decay}"),
            ));
        }

        let logits = self.forward_train(x)?;

        let mut per_head = Vec::with_capacity(k);
        let mut head_grads: Vec<Option<Tensor<S>>> = Vec::with_capacity(k);
        for (idx, lg) in logits.iter().enumerate() {
            let out = softmax_cross_entropy(lg, labels)?;
            per_head.push(out.loss.to_f64());
            if weights[idx] > 0.0 {
                let mut g = out.grad;
                g.scale(S::from_f64(weights[idx]));
                let mut cur = g;
                for l in self.heads[idx].layers.iter_mut().rev() {
                    cur = l.backward(&cur)?;
                }
                head_grads.push(Some(cur));
            } else {
                head_grads.push(None);
            }
        }

        // single deep-to-shallow sweep over the backbone, merging each
        // head's contribution at its attach point
        let mut acc: Option<Tensor<S>> = None;
        for i in (0..self.backbone.len()).rev() {
            for (h, grad) in self.heads.iter().enumerate().rev() {
                if grad.attach_after == i {
                    if let Some(g) = head_grads[h].take() {
                        match &mut acc {
                            Some(a) => a.add_assign(&g)?,
                            None => acc = Some(g),
                        }
                    }
                }
            }
            if let Some(a) = &acc {
                acc = Some(self.backbone[i].backward(a)?);
            }
        }

        let weighted_sum: f64 =
            per_head.iter().zip(weights).map(|(l, w)| l * w).sum();

        let mut reg = 0.0;
        if weight_decay > 0.0 {
            let lambda = S::from_f64(weight_decay);
            let active: Vec<bool> = weights.iter().map(|w| *w > 0.0).collect();
            let mut reg_acc = S::zero();
            for p in self.params_mut() {
                let skip = matches!(p.group, ParamGroup::Head(h) if !active[h]);
                if skip {
                    continue;
                }
                for (v, g) in p.value.data().iter().zip(p.grad.data_mut()) {
                    reg_acc += *v * *v;
                    *g += lambda * *v;
                }
            }
            reg = 0.5 * weight_decay * reg_acc.to_f64();
        }

        let total = weighted_sum + reg;
        if !total.is_finite() {
            return Err(Error::NonFinite {
                op: "joint_loss_backward",
                detail: format!("loss {total}"),
            });
        }
        Ok(JointLoss { per_head, weights: weights.to_vec(), weighted_sum, reg, total })
    }

    pub fn zero_grads(&mut self) {
        for l in &mut self.backbone {
            l.zero_grad();
        }
        for h in &mut self.heads {
            for l in &mut h.layers {
                l.zero_grad();
            }
        }
    }

    /// All learnable parameters in a stable order: backbone first, then
    /// heads, each layer contributing its `(name, value)` pairs.
    pub fn params(&self) -> Vec<ParamRef<'_, S>> {
        let mut out = Vec::new();
        for (i, l) in self.backbone.iter().enumerate() {
            for (pname, value) in l.params() {
                out.push(ParamRef {
                    name: format!("backbone.{i}.{}.{pname}", l.kind_name()),
                    group: ParamGroup::Backbone,
                    value,
                });
            }
        }
        for (h, head) in self.heads.iter().enumerate() {
            for (i, l) in head.layers.iter().enumerate() {
                for (pname, value) in l.params() {
                    out.push(ParamRef {
                        name: format!("head.{h}.{i}.{}.{pname}", l.kind_name()),
                        group: ParamGroup::Head(h),
                        value,
                    });
                }
            }
        }
        out
    }

    /// Mutable view of all parameters and their gradient buffers, same
    /// order and names as [`EarlyExitNet::params`].
    pub fn params_mut(&mut self) -> Vec<ParamRefMut<'_, S>> {
        let mut out = Vec::new();
        for (i, l) in self.backbone.iter_mut().enumerate() {
            let kind = l.kind_name();
            for (pname, value, grad) in l.params_mut() {
                out.push(ParamRefMut {
                    name: format!("backbone.{i}.{kind}.{pname}"),
                    group: ParamGroup::Backbone,
                    value,
                    grad,
                });
            }
        }
        for (h, head) in self.heads.iter_mut().enumerate() {
            for (i, l) in head.layers.iter_mut().enumerate() {
                let kind = l.kind_name();
                for (pname, value, grad) in l.params_mut() {
                    out.push(ParamRefMut {
                        name: format!("head.{h}.{i}.{kind}.{pname}"),
                        group: ParamGroup::Head(h),
                        value,
                        grad,
                    });
                }
            }
        }
        out
    }

    /// Persistent non-learnable state (batch-norm running statistics),
    /// stable order and names.
    pub fn state(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        for (i, l) in self.backbone.iter().enumerate() {
            for (sname, value) in l.state() {
                out.push((format!("backbone.{i}.{}.{sname}", l.kind_name()), value));
            }
        }
        for (h, head) in self.heads.iter().enumerate() {
            for (i, l) in head.layers.iter().enumerate() {
                for (sname, value) in l.state() {
                    out.push((format!("head.{h}.{i}.{}.{sname}", l.kind_name()), value));
                }
            }
        }
        out
    }

    pub fn state_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out = Vec::new();
        for (i, l) in self.backbone.iter_mut().enumerate() {
            let kind = l.kind_name();
            for (sname, value) in l.state_mut() {
                out.push((format!("backbone.{i}.{kind}.{sname}"), value));
            }
        }
        for (h, head) in self.heads.iter_mut().enumerate() {
            for (i, l) in head.layers.iter_mut().enumerate() {
                let kind = l.kind_name();
                for (sname, value) in l.state_mut() {
                    out.push((format!("head.{h}.{i}.{kind}.{sname}"), value));
                }
            }
        }
        out
    }

    /// Analytic per-example cost accounting for the budget machinery.
    pub fn cost_breakdown(&self) -> Result<CostBreakdown> {
        let mut backbone_prefix = Vec::with_capacity(self.heads.len());
        let mut head_macs = Vec::with_capacity(self.heads.len());
        let mut shape = self.input_shape.clone();
        let mut cum: u64 = 0;
        let mut next_head = 0;
        for (i, layer) in self.backbone.iter().enumerate() {
            cum += layer.macs_per_example(&shape)?;
            shape = layer.out_shape(&shape)?;
            while next_head < self.heads.len() && self.heads[next_head].attach_after == i {
                let mut hshape = shape.clone();
                let mut hmacs: u64 = 0;
                for l in &self.heads[next_head].layers {
                    hmacs += l.macs_per_example(&hshape)?;
                    hshape = l.out_shape(&hshape)?;
                }
                backbone_prefix.push(cum);
                head_macs.push(hmacs);
                next_head += 1;
            }
        }
        Ok(CostBreakdown { backbone_prefix, head_macs })
    }
}

fn build_head_layers<S: Scalar, R: Rng>(
    feat_shape: &[usize],
    spec: &HeadSpec,
    num_classes: usize,
    rng: &mut R,
) -> Result<Vec<Layer<S>>> {
    let spatial = matches!(feat_shape, [_, _, _]);
    let mut layers: Vec<Layer<S>> = Vec::new();
    let mut shape = feat_shape.to_vec();
    match spec.kind {
        HeadKind::FcOnly => {}
        HeadKind::Avg => {
            if !spatial {
                return Err(Error::Architecture(format!(
                    "avg head needs a spatial [C, H, W] attach point, got {shape:?}"
                )));
            }
            let pool = GlobalAvgPool::new();
            shape = pool.out_shape(&shape)?;
            layers.push(Layer::GlobalAvgPool(pool));
        }
        HeadKind::Avg4x4 => {
            if !spatial {
                return Err(Error::Architecture(format!(
                    "avg4x4 head needs a spatial [C, H, W] attach point, got {shape:?}"
                )));
            }
            let pool = GridAvgPool::new(4)?;
            shape = pool.out_shape(&shape).map_err(|_| {
                Error::Architecture(format!(
                    "avg4x4 head needs spatial extent >= 4, attach point has {shape:?}"
                ))
            })?;
            layers.push(Layer::GridAvgPool(pool));
        }
    }
    let mut features: usize = shape.iter().product();
    if let Some(hidden) = spec.hidden {
        if hidden == 0 {
            return Err(Error::Architecture("hidden head width must be > 0".into()));
        }
        layers.push(Layer::Dense(Dense::new(features, hidden, rng)?));
        layers.push(Layer::Relu(Relu::new()));
        features = hidden;
    }
    layers.push(Layer::Dense(Dense::new(features, num_classes, rng)?));
    Ok(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_net(seed: u64) -> EarlyExitNet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EarlyExitNet::conv_blocks(&[1, 8, 8], &[2, 3], true, HeadKind::Avg, None, 3, &mut rng)
            .unwrap()
    }

    fn tiny_batch(seed: u64) -> (Tensor<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::randn(&[4, 1, 8, 8], 1.0, &mut rng);
        (x, vec![0, 1, 2, 0])
    }

    #[test]
    fn desk_build_attaches_one_head_per_block() {
        let net = tiny_net(1);
        assert_eq!(net.head_count(), 2);
        assert!(net.has_batchnorm());
        let no_bn = {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            EarlyExitNet::<f32>::conv_blocks(
                &[1, 8, 8],
                &[2, 3],
                false,
                HeadKind::Avg,
                None,
                3,
                &mut rng,
            )
            .unwrap()
        };
        assert!(!no_bn.has_batchnorm());
    }

    #[test]
    fn attach_points_must_strictly_increase_and_cover_the_end() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let backbone: Vec<Layer<f32>> = vec![
            Layer::Conv2d(Conv2d::new(1, 2, 3, 1, 1, &mut rng).unwrap()),
            Layer::Relu(Relu::new()),
        ];
        // last head not at the end
        let specs = [HeadSpec::new(0, HeadKind::Avg)];
        assert!(EarlyExitNet::new(&[1, 6, 6], 2, backbone.clone(), &specs, &mut rng).is_err());
        // non-increasing attach points
        let specs = [HeadSpec::new(1, HeadKind::Avg), HeadSpec::new(1, HeadKind::Avg)];
        assert!(EarlyExitNet::new(&[1, 6, 6], 2, backbone.clone(), &specs, &mut rng).is_err());
        // well-formed
        let specs = [HeadSpec::new(0, HeadKind::Avg), HeadSpec::new(1, HeadKind::Avg)];
        assert!(EarlyExitNet::new(&[1, 6, 6], 2, backbone, &specs, &mut rng).is_ok());
    }

    #[test]
    fn per_block_head_kinds_apply_in_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // 16x16 input: block outputs are 8x8 then 4x4, both fine for Avg4x4
        let net = EarlyExitNet::<f32>::conv_blocks_with_kinds(
            &[1, 16, 16],
            &[2, 3],
            false,
            &[HeadKind::Avg4x4, HeadKind::Avg],
            None,
            3,
            &mut rng,
        )
        .unwrap();
        assert_eq!(net.head_kinds(), vec![HeadKind::Avg4x4, HeadKind::Avg]);
        // one kind per block, no more, no fewer
        let r = EarlyExitNet::<f32>::conv_blocks_with_kinds(
            &[1, 16, 16],
            &[2, 3],
            false,
            &[HeadKind::Avg],
            None,
            3,
            &mut rng,
        );
        assert!(r.is_err());
    }

    #[test]
    fn avg4x4_heads_reject_small_attach_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // 8x8 input, two pools: block outputs are 4x4 then 2x2
        let r = EarlyExitNet::<f32>::conv_blocks(
            &[1, 8, 8],
            &[2, 3],
            false,
            HeadKind::Avg4x4,
            None,
            3,
            &mut rng,
        );
        assert!(r.is_err());
        // a single block leaves 4x4, which is enough
        let r = EarlyExitNet::<f32>::conv_blocks(
            &[1, 8, 8],
            &[2],
            false,
            HeadKind::Avg4x4,
            None,
            3,
            &mut rng,
        );
        assert!(r.is_ok());
    }

    #[test]
    fn softmax_outputs_per_head_sum_to_one() {
        let net = tiny_net(4);
        let (x, _) = tiny_batch(5);
        let probs = net.forward_all(&x).unwrap();
        assert_eq!(probs.len(), 2);
        for p in probs {
            for i in 0..p.batch() {
                let s: f64 = p.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn truncated_net_reproduces_the_shared_prefix_outputs() {
        let net = tiny_net(6);
        let (x, _) = tiny_batch(7);
        let full = net.infer_all_heads(&x).unwrap();
        let cut = net.truncated(1).unwrap();
        assert_eq!(cut.head_count(), 1);
        let head0 = cut.infer_all_heads(&x).unwrap();
        assert_eq!(full[0].data(), head0[0].data());
    }

    #[test]
    fn single_head_inference_matches_the_full_pass() {
        let net = tiny_net(8);
        let (x, _) = tiny_batch(9);
        let all = net.infer_all_heads(&x).unwrap();
        for k in 0..net.head_count() {
            let one = net.infer_single_head(&x, k).unwrap();
            assert_eq!(one.data(), all[k].data());
        }
    }

    #[test]
    fn last_head_weighting_leaves_early_head_parameters_untouched() {
        let mut net = tiny_net(10);
        let (x, y) = tiny_batch(11);
        net.zero_grads();
        net.joint_loss_backward(&x, &y, &[0.0, 1.0], 5e-4).unwrap();
        for p in net.params_mut() {
            let zero = p.grad.data().iter().all(|g| *g == 0.0);
            match p.group {
                ParamGroup::Head(0) => assert!(zero, "{} should have zero grad", p.name),
                ParamGroup::Head(_) | ParamGroup::Backbone => {
                    // the backbone and last head must receive gradient
                }
            }
        }
        let touched = net
            .params_mut()
            .into_iter()
            .filter(|p| p.group == ParamGroup::Backbone)
            .any(|p| p.grad.data().iter().any(|g| *g != 0.0));
        assert!(touched);
    }

    #[test]
    fn doubling_the_weights_doubles_loss_and_gradients() {
        let (x, y) = tiny_batch(12);
        let w1 = [0.3, 0.7];
        let w2 = [0.6, 1.4];

        let mut net_a = tiny_net(13);
        net_a.zero_grads();
        let l1 = net_a.joint_loss_backward(&x, &y, &w1, 0.0).unwrap();
        let g1: Vec<f64> =
            net_a.params_mut().iter().flat_map(|p| p.grad.data().to_vec()).collect();

        let mut net_b = tiny_net(13);
        net_b.zero_grads();
        let l2 = net_b.joint_loss_backward(&x, &y, &w2, 0.0).unwrap();
        let g2: Vec<f64> =
            net_b.params_mut().iter().flat_map(|p| p.grad.data().to_vec()).collect();

        assert!((l2.weighted_sum - 2.0 * l1.weighted_sum).abs() < 1e-9);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((b - 2.0 * a).abs() < 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn total_is_weighted_sum_plus_reg() {
        let mut net = tiny_net(14);
        let (x, y) = tiny_batch(15);
        net.zero_grads();
        let jl = net.joint_loss_backward(&x, &y, &[0.5, 0.5], 1e-3).unwrap();
        let manual: f64 =
            jl.per_head.iter().zip(&jl.weights).map(|(l, w)| l * w).sum();
        assert!((jl.weighted_sum - manual).abs() < 1e-6);
        assert!(jl.reg > 0.0);
        assert!((jl.total - (jl.weighted_sum + jl.reg)).abs() < 1e-12);
    }

    #[test]
    fn gradients_accumulate_over_repeated_backward() {
        let (x, y) = tiny_batch(16);
        let mut net = tiny_net(17);
        net.zero_grads();
        net.joint_loss_backward(&x, &y, &[0.5, 0.5], 0.0).unwrap();
        let once: Vec<f64> =
            net.params_mut().iter().flat_map(|p| p.grad.data().to_vec()).collect();
        net.joint_loss_backward(&x, &y, &[0.5, 0.5], 0.0).unwrap();
        let twice: Vec<f64> =
            net.params_mut().iter().flat_map(|p| p.grad.data().to_vec()).collect();
        for (a, b) in once.iter().zip(&twice) {
            assert!((b - 2.0 * a).abs() < 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn rejects_weight_count_mismatch_and_negative_weights() {
        let mut net = tiny_net(18);
        let (x, y) = tiny_batch(19);
        assert!(net.joint_loss_backward(&x, &y, &[1.0], 0.0).is_err());
        assert!(net.joint_loss_backward(&x, &y, &[0.5, -0.5], 0.0).is_err());
        assert!(net.joint_loss_backward(&x, &y, &[0.5, 0.5], -1.0).is_err());
    }

    #[test]
    fn cost_breakdown_is_monotone_along_the_backbone() {
        let net = tiny_net(20);
        let costs = net.cost_breakdown().unwrap();
        assert_eq!(costs.backbone_prefix.len(), 2);
        assert!(costs.backbone_prefix[0] < costs.backbone_prefix[1]);
        assert!(costs.head_macs.iter().all(|m| *m > 0));
    }

    #[test]
    fn param_names_are_stable_and_unique() {
        let mut net = tiny_net(21);
        let names: Vec<String> = net.params().iter().map(|p| p.name.clone()).collect();
        let names_mut: Vec<String> = net.params_mut().iter().map(|p| p.name.clone()).collect();
        assert_eq!(names, names_mut);
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
    }
}
