//! The three budgeted ways of asking the network for an answer.
//!
//! * Budget known up front: pick the deepest head whose skip-cost fits
//!   and run only that one; earlier heads' classifier work is skipped.
//! * Anytime interruption: heads are computed in order, the answer is the
//!   latest head that completed before the interrupt. Here every earlier
//!   head has been paid for, so cumulative costs are higher.
//! * Confidence cascade: heads are computed in order and the first one
//!   that is sure enough (top-1/top-2 probability ratio, or normalised
//!   entropy) answers; an unsure network falls through to the last head.
//!
//! Costs are modelled, not preempted: the primary unit is the analytic
//! per-example multiply-accumulate count, which is hardware-independent
//! and exact. Wall-clock measurement exists as an opt-in, informational
//! alternative.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::layers::softmax_rows;
use crate::net::EarlyExitNet;
use crate::tensor::{argmax, Tensor};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostUnit {
    /// Analytic multiply-accumulate counts; deterministic.
    Macs,
    /// Measured median wall-clock milliseconds; informational only.
    Millis,
}

/// Cumulative per-head inference costs under the two execution styles.
#[derive(Debug, Clone)]
pub struct CostModel {
    pub unit: CostUnit,
    /// Cost to reach head k when earlier heads' classifier work is
    /// skipped (budget known before starting).
    pub skip: Vec<f64>,
    /// Cost to reach head k when every earlier head is computed along
    /// the way (interruptible execution).
    pub anytime: Vec<f64>,
}

impl CostModel {
    /// Exact per-example costs from the network's layer shapes.
    pub fn analytic<S: Scalar>(net: &EarlyExitNet<S>) -> Result<CostModel> {
        let cb = net.cost_breakdown()?;
        let mut skip = Vec::with_capacity(cb.head_macs.len());
        let mut anytime = Vec::with_capacity(cb.head_macs.len());
        let mut heads_so_far = 0u64;
        for (prefix, head) in cb.backbone_prefix.iter().zip(&cb.head_macs) {
            heads_so_far += head;
            skip.push((prefix + head) as f64);
            anytime.push((prefix + heads_so_far) as f64);
        }
        let model = CostModel { unit: CostUnit::Macs, skip, anytime };
        model.validate()?;
        Ok(model)
    }

    /// Median wall-clock per-head costs over `reps` runs of
    /// `calibration`. Subject to scheduler noise; never used for
    /// correctness, so the monotonicity invariants are not enforced here.
    pub fn measured<S: Scalar>(
        net: &EarlyExitNet<S>,
        calibration: &Tensor<S>,
        reps: usize,
    ) -> Result<CostModel> {
        if calibration.batch() == 0 {
            return Err(Error::invalid("CostModel::measured", "empty calibration batch"));
        }
        if reps == 0 {
            return Err(Error::invalid("CostModel::measured", "reps must be > 0"));
        }
        let k = net.head_count();
        let n = calibration.batch() as f64;
        let mut skip = Vec::with_capacity(k);
        let mut anytime = Vec::with_capacity(k);
        for head in 0..k {
            let mut single = Vec::with_capacity(reps);
            let mut upto = Vec::with_capacity(reps);
            for _ in 0..reps {
                let t = Instant::now();
                net.infer_single_head(calibration, head)?;
                single.push(t.elapsed().as_secs_f64() * 1e3 / n);
                let t = Instant::now();
                net.infer_heads_upto(calibration, head)?;
                upto.push(t.elapsed().as_secs_f64() * 1e3 / n);
            }
            skip.push(median(&mut single));
            anytime.push(median(&mut upto));
        }
        Ok(CostModel { unit: CostUnit::Millis, skip, anytime })
    }

    /// Check the structural cost invariants: both columns strictly
    /// increasing and anytime never cheaper than skip.
    pub fn validate(&self) -> Result<()> {
        if self.skip.is_empty() || self.skip.len() != self.anytime.len() {
            return Err(Error::invalid("CostModel", "empty or mismatched cost columns"));
        }
        for (name, col) in [("skip", &self.skip), ("anytime", &self.anytime)] {
            if col.iter().any(|c| !c.is_finite() || *c <= 0.0) {
                return Err(Error::invalid(
                    "CostModel",
                    format!("{name} costs must be positive and finite: {col:?}"),
                ));
            }
            if col.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::invalid(
                    "CostModel",
                    format!("{name} costs must be strictly increasing: {col:?}"),
                ));
            }
        }
        if self.skip.iter().zip(&self.anytime).any(|(s, a)| a < s) {
            return Err(Error::invalid(
                "CostModel",
                "anytime cost below skip cost for some head",
            ));
        }
        Ok(())
    }

    pub fn head_count(&self) -> usize {
        self.skip.len()
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Cost-table CSV: one row per head, analytic MAC columns first and
/// measured milliseconds appended when available.
pub fn costs_csv(analytic: &CostModel, measured: Option<&CostModel>) -> String {
    let mut out = String::from("head,budget_macs,anytime_macs");
    if measured.is_some() {
        out.push_str(",budget_ms,anytime_ms");
    }
    out.push('\n');
    for k in 0..analytic.head_count() {
        out.push_str(&format!("{},{},{}", k + 1, analytic.skip[k], analytic.anytime[k]));
        if let Some(m) = measured {
            out.push_str(&format!(",{:.6},{:.6}", m.skip[k], m.anytime[k]));
        }
        out.push('\n');
    }
    out
}

/// What makes a cascade head confident enough to answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopCriterion {
    /// Ratio of the highest to the second-highest class probability.
    Ratio,
    /// Entropy of the class distribution, normalised by ln C so the
    /// scale is [0, 1] regardless of class count.
    Entropy,
}

#[derive(Debug, Clone, Copy)]
pub struct CascadePolicy {
    pub criterion: StopCriterion,
    pub threshold: f64,
}

impl CascadePolicy {
    pub fn ratio(threshold: f64) -> Self {
        CascadePolicy { criterion: StopCriterion::Ratio, threshold }
    }

    pub fn entropy(threshold: f64) -> Self {
        CascadePolicy { criterion: StopCriterion::Entropy, threshold }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.criterion {
            // ratio is always >= 1, so thresholds below that never defer;
            // 1.0 itself is the meaningful always-stop limit
            StopCriterion::Ratio => self.threshold >= 1.0,
            StopCriterion::Entropy => self.threshold >= 0.0,
        };
        if !ok || self.threshold.is_nan() {
            return Err(Error::invalid(
                "CascadePolicy",
                format!("bad threshold {} for {:?}", self.threshold, self.criterion),
            ));
        }
        Ok(())
    }

    /// Decide on one head's class distribution. An infinite ratio
    /// threshold is the canonical never-stop policy (run to the last
    /// head), so it returns false even for a degenerate distribution
    /// whose runner-up probability is exactly zero.
    pub fn should_stop(&self, probs: &[f64]) -> bool {
        match self.criterion {
            StopCriterion::Ratio => {
                if self.threshold.is_infinite() {
                    return false;
                }
                top_ratio(probs) >= self.threshold
            }
            StopCriterion::Entropy => normalized_entropy(probs) <= self.threshold,
        }
    }
}

/// Top-1 over top-2 probability ratio; ties give 1, a zero runner-up
/// gives +infinity (maximal certainty).
pub fn top_ratio(probs: &[f64]) -> f64 {
    let first = argmax(probs);
    let p1 = probs[first];
    let p2 = probs
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != first)
        .map(|(_, p)| *p)
        .fold(f64::NEG_INFINITY, f64::max);
    if p2 <= 0.0 {
        f64::INFINITY
    } else {
        p1 / p2
    }
}

/// Shannon entropy over `probs` divided by ln(len), mapping certainty to
/// 0 and the uniform distribution to 1.
pub fn normalized_entropy(probs: &[f64]) -> f64 {
    let h: f64 = probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    h / (probs.len() as f64).ln()
}

/// The outcome of one budgeted prediction for one example.
#[derive(Debug, Clone)]
pub struct InferenceResult {
    /// Predicted class of the answering head.
    pub class: usize,
    /// Which head answered, 0-based (reports print it 1-based).
    pub head: usize,
    /// Modelled cost of the work performed, in the cost model's unit.
    pub cost: f64,
    /// Class distributions of the heads computed along the way, in head
    /// order ending with the answering head. Budget mode skips earlier
    /// heads, so there it holds just one entry.
    pub probs: Vec<Vec<f64>>,
}

fn check_model<S: Scalar>(net: &EarlyExitNet<S>, model: &CostModel) -> Result<()> {
    if model.head_count() != net.head_count() {
        return Err(Error::invalid(
            "predict",
            format!("cost model has {} heads, net {}", model.head_count(), net.head_count()),
        ));
    }
    Ok(())
}

fn probs_f64<S: Scalar>(logits: &Tensor<S>) -> Result<Vec<Vec<f64>>> {
    let p = softmax_rows(logits)?;
    Ok((0..p.batch())
        .map(|i| p.row(i).iter().map(|v| Scalar::to_f64(*v)).collect())
        .collect())
}

/// Budget-first prediction: run the deepest head whose skip-cost fits in
/// `budget`, skipping the classifier work of every earlier head. The
/// budget must afford at least the first head.
pub fn predict_with_budget<S: Scalar>(
    net: &EarlyExitNet<S>,
    x: &Tensor<S>,
    budget: f64,
    model: &CostModel,
) -> Result<Vec<InferenceResult>> {
    check_model(net, model)?;
    if !(budget >= model.skip[0]) {
        return Err(Error::Budget(format!(
            "budget {budget} below the cheapest head ({}); no answer is available",
            model.skip[0]
        )));
    }
    let head = model
        .skip
        .iter()
        .rposition(|c| *c <= budget)
        .expect("budget >= skip[0] was checked");
    let logits = net.infer_single_head(x, head)?;
    let probs = probs_f64(&logits)?;
    Ok(probs
        .into_iter()
        .map(|p| InferenceResult {
            class: argmax(&p),
            head,
            cost: model.skip[head],
            probs: vec![p],
        })
        .collect())
}

/// Anytime prediction: heads run in order and `interrupt_at` cuts them
/// off; the answer is the latest head whose cumulative anytime cost fits.
/// Interrupting before the first head completes is an error.
pub fn predict_anytime<S: Scalar>(
    net: &EarlyExitNet<S>,
    x: &Tensor<S>,
    interrupt_at: f64,
    model: &CostModel,
) -> Result<Vec<InferenceResult>> {
    check_model(net, model)?;
    if !(interrupt_at >= model.anytime[0]) {
        return Err(Error::Budget(format!(
            "interrupted at {interrupt_at} before the first head completes at {}",
            model.anytime[0]
        )));
    }
    let head = model
        .anytime
        .iter()
        .rposition(|c| *c <= interrupt_at)
        .expect("interrupt_at >= anytime[0] was checked");
    let logits = net.infer_heads_upto(x, head)?;
    let mut per_head: Vec<Vec<Vec<f64>>> = Vec::with_capacity(head + 1);
    for lg in &logits {
        per_head.push(probs_f64(lg)?);
    }
    let n = x.batch();
    Ok((0..n)
        .map(|i| {
            let probs: Vec<Vec<f64>> = per_head.iter().map(|h| h[i].clone()).collect();
            InferenceResult {
                class: argmax(probs.last().unwrap()),
                head,
                cost: model.anytime[head],
                probs,
            }
        })
        .collect())
}

/// Cascaded prediction: run heads in order and let the first one that
/// passes the confidence test answer; fall through to the last head when
/// none does. Cost accounting follows the anytime model since every
/// earlier head was computed.
pub fn predict_cascade<S: Scalar>(
    net: &EarlyExitNet<S>,
    x: &Tensor<S>,
    policy: &CascadePolicy,
    model: &CostModel,
) -> Result<Vec<InferenceResult>> {
    check_model(net, model)?;
    policy.validate()?;
    let logits = net.infer_all_heads(x)?;
    let mut per_head: Vec<Vec<Vec<f64>>> = Vec::with_capacity(logits.len());
    for lg in &logits {
        per_head.push(probs_f64(lg)?);
    }
    let k = net.head_count();
    let n = x.batch();
    Ok((0..n)
        .map(|i| {
            let mut probs: Vec<Vec<f64>> = Vec::new();
            let mut head = k - 1;
            for (h, rows) in per_head.iter().enumerate() {
                probs.push(rows[i].clone());
                if h + 1 == k || policy.should_stop(&rows[i]) {
                    head = h;
                    break;
                }
            }
            InferenceResult {
                class: argmax(probs.last().unwrap()),
                head,
                cost: model.anytime[head],
                probs,
            }
        })
        .collect())
}
