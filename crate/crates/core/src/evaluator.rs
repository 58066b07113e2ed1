//! Budget-weighted evaluation: expected accuracy under a weighting
//! scheme, per-head time-accuracy curves, and cascade threshold sweeps.
//!
//! Everything here is read-only over the network and computed from one
//! pass that gathers every head's class distribution for every test
//! example. Accuracies, cascade decisions and curve points all come from
//! that single basis, so the exact-match identities between the curves
//! (a threshold-1 cascade equals the first head, a never-stop cascade
//! equals the last) hold bit for bit rather than just approximately.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::budget::{weights_from_density, BudgetDensity, ExitSchedule, WeightScheme};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::{CascadePolicy, CostModel, StopCriterion};
use crate::net::EarlyExitNet;
use crate::tensor::argmax;
use crate::Scalar;

/// Class distributions of every head for every example: `[K][N][C]`.
pub fn head_probs<S: Scalar>(
    net: &EarlyExitNet<S>,
    ds: &Dataset<S>,
) -> Result<Vec<Vec<Vec<f64>>>> {
    if ds.is_empty() {
        return Err(Error::invalid("head_probs", "empty dataset"));
    }
    let k = net.head_count();
    let mut out: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(ds.len()); k];
    let idxs: Vec<usize> = (0..ds.len()).collect();
    for chunk in idxs.chunks(256) {
        let (x, _) = ds.gather(chunk)?;
        let probs = net.forward_all(&x)?;
        for (h, p) in probs.iter().enumerate() {
            for i in 0..p.batch() {
                out[h].push(p.row(i).iter().map(|v| Scalar::to_f64(*v)).collect());
            }
        }
    }
    Ok(out)
}

/// Fraction of examples whose argmax matches the label, one entry per
/// head. Ties break toward the lowest class index.
pub fn per_head_accuracy(probs: &[Vec<Vec<f64>>], labels: &[usize]) -> Vec<f64> {
    probs
        .iter()
        .map(|rows| {
            let correct = rows
                .iter()
                .zip(labels)
                .filter(|(p, label)| argmax(p) == **label)
                .count();
            correct as f64 / labels.len() as f64
        })
        .collect()
}

/// Per-head accuracies combined with scheme weights into one number.
#[derive(Debug, Clone)]
pub struct ExpectedAccuracyReport {
    pub scheme: String,
    pub weights: Vec<f64>,
    pub per_head_acc: Vec<f64>,
    pub expected: f64,
}

impl ExpectedAccuracyReport {
    /// Combine accuracies and weights; the expected accuracy is their
    /// dot product, so it is linear in the weight vector.
    pub fn new(scheme: impl Into<String>, weights: Vec<f64>, per_head_acc: Vec<f64>) -> Result<Self> {
        if weights.len() != per_head_acc.len() || weights.is_empty() {
            return Err(Error::invalid(
                "ExpectedAccuracyReport",
                format!("{} weights for {} accuracies", weights.len(), per_head_acc.len()),
            ));
        }
        let expected = weights.iter().zip(&per_head_acc).map(|(w, a)| w * a).sum();
        Ok(ExpectedAccuracyReport { scheme: scheme.into(), weights, per_head_acc, expected })
    }

    /// One CSV row per head; the expected accuracy is repeated on each
    /// row so the file stays rectangular and self-contained.
    pub const CSV_HEADER: &'static str = "scheme,head,weight,head_accuracy,expected_accuracy";

    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for (k, (w, a)) in self.weights.iter().zip(&self.per_head_acc).enumerate() {
            out.push_str(&format!("{},{},{},{},{}\n", self.scheme, k + 1, w, a, self.expected));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}", Self::CSV_HEADER, self.csv_rows())
    }

    /// Compact one-line summary for terminal output.
    pub fn summary(&self) -> String {
        let heads: Vec<String> =
            self.per_head_acc.iter().map(|a| format!("{:.1}", a * 100.0)).collect();
        let ws: Vec<String> = self.weights.iter().map(|w| format!("{w:.3}")).collect();
        format!(
            "{}: expected accuracy {:.2}% | per-head % [{}] | weights [{}]",
            self.scheme,
            self.expected * 100.0,
            heads.join(" "),
            ws.join(" ")
        )
    }
}

/// Expected accuracy of `net` on `ds` under `scheme`'s weights.
pub fn expected_accuracy<S: Scalar>(
    net: &EarlyExitNet<S>,
    ds: &Dataset<S>,
    scheme: &WeightScheme,
) -> Result<ExpectedAccuracyReport> {
    let probs = head_probs(net, ds)?;
    let acc = per_head_accuracy(&probs, ds.labels());
    let weights = scheme.weights(net.head_count())?;
    ExpectedAccuracyReport::new(scheme.name(), weights, acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveSource {
    PerHead,
    CascadeSweep,
}

#[derive(Debug, Clone)]
pub struct CurvePoint {
    /// Expected (mean) cost in the cost model's unit.
    pub cost: f64,
    /// Informational wall-clock cost when a measured model was supplied.
    pub cost_ms: Option<f64>,
    pub accuracy: f64,
    /// Which head (per-head curve) produced this point, 0-based.
    pub head: Option<usize>,
    /// Which threshold (cascade sweep) produced this point.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TimeAccuracyCurve {
    pub source: CurveSource,
    pub points: Vec<CurvePoint>,
}

impl TimeAccuracyCurve {
    /// CSV with the layout `cost_macs,cost_ms,accuracy,threshold_or_head`;
    /// the ms column is left empty when no measured model was supplied.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cost_macs,cost_ms,accuracy,threshold_or_head\n");
        for p in &self.points {
            let ms = p.cost_ms.map(|m| format!("{m:.6}")).unwrap_or_default();
            let tag = match (p.head, p.threshold) {
                (Some(h), _) => format!("head_{}", h + 1),
                (None, Some(t)) => format!("{t}"),
                (None, None) => String::new(),
            };
            out.push_str(&format!("{},{},{},{}\n", p.cost, ms, p.accuracy, tag));
        }
        out
    }
}

/// The K fixed points (anytime cost of head k, accuracy of head k).
pub fn per_head_curve<S: Scalar>(
    net: &EarlyExitNet<S>,
    ds: &Dataset<S>,
    model: &CostModel,
    measured: Option<&CostModel>,
) -> Result<TimeAccuracyCurve> {
    let probs = head_probs(net, ds)?;
    let acc = per_head_accuracy(&probs, ds.labels());
    let points = acc
        .iter()
        .enumerate()
        .map(|(k, a)| CurvePoint {
            cost: model.anytime[k],
            cost_ms: measured.map(|m| m.anytime[k]),
            accuracy: *a,
            head: Some(k),
            threshold: None,
        })
        .collect();
    Ok(TimeAccuracyCurve { source: CurveSource::PerHead, points })
}

/// One curve point per threshold: simulate the cascade on every example
/// and average cost and correctness. Thresholds must be ascending.
pub fn cascade_sweep<S: Scalar>(
    net: &EarlyExitNet<S>,
    ds: &Dataset<S>,
    criterion: StopCriterion,
    thresholds: &[f64],
    model: &CostModel,
    measured: Option<&CostModel>,
) -> Result<TimeAccuracyCurve> {
    if thresholds.is_empty() {
        return Err(Error::invalid("cascade_sweep", "empty threshold list"));
    }
    if thresholds.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid(
            "cascade_sweep",
            format!("thresholds must be ascending, got {thresholds:?}"),
        ));
    }
    let probs = head_probs(net, ds)?;
    let labels = ds.labels();
    let k = net.head_count();
    let n = labels.len();
    let mut points = Vec::with_capacity(thresholds.len());
    for &threshold in thresholds {
        let policy = CascadePolicy { criterion, threshold };
        policy.validate()?;
        let mut cost_sum = 0.0;
        let mut ms_sum = 0.0;
        let mut correct = 0usize;
        for i in 0..n {
            let mut head = k - 1;
            for h in 0..k {
                if h + 1 == k || policy.should_stop(&probs[h][i]) {
                    head = h;
                    break;
                }
            }
            cost_sum += model.anytime[head];
            if let Some(m) = measured {
                ms_sum += m.anytime[head];
            }
            if argmax(&probs[head][i]) == labels[i] {
                correct += 1;
            }
        }
        points.push(CurvePoint {
            cost: cost_sum / n as f64,
            cost_ms: measured.map(|_| ms_sum / n as f64),
            accuracy: correct as f64 / n as f64,
            head: None,
            threshold: Some(threshold),
        });
    }
    Ok(TimeAccuracyCurve { source: CurveSource::CascadeSweep, points })
}

/// Monte-Carlo cross-check of the closed-form expected accuracy: draw
/// interruption times from `density`, map each to the deepest affordable
/// head under the skip-cost schedule, and average that head's exact
/// accuracy. Times landing before the first head are redrawn, matching
/// the weight computation's conditioning.
pub fn sampled_expected_accuracy<S: Scalar>(
    net: &EarlyExitNet<S>,
    ds: &Dataset<S>,
    density: &BudgetDensity,
    model: &CostModel,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::invalid("sampled_expected_accuracy", "samples must be > 0"));
    }
    density.validate()?;
    let schedule = ExitSchedule::new(model.skip.clone())?;
    // fails fast when the density has no mass at or beyond the first head
    weights_from_density(density, &schedule)?;
    let probs = head_probs(net, ds)?;
    let acc = per_head_accuracy(&probs, ds.labels());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut accepted = 0usize;
    let mut draws = 0usize;
    while accepted < samples {
        draws += 1;
        if draws > samples.saturating_mul(1000) {
            return Err(Error::Budget(
                "rejection sampling stalled; almost all density mass lies before the first head"
                    .into(),
            ));
        }
        let t = density.sample(&mut rng);
        if let Some(head) = schedule.head_at(t) {
            total += acc[head];
            accepted += 1;
        }
    }
    Ok(total / samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::HeadKind;
    use rand::Rng;

    fn net3(seed: u64) -> EarlyExitNet<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EarlyExitNet::conv_blocks(
            &[1, 16, 16],
            &[2, 3, 4],
            false,
            HeadKind::Avg,
            None,
            3,
            &mut rng,
        )
        .unwrap()
    }

    fn random_ds(n: usize, seed: u64) -> Dataset<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = crate::tensor::Tensor::randn(&[n, 1, 16, 16], 1.0, &mut rng);
        let labels = (0..n).map(|_| rng.gen_range(0..3)).collect();
        Dataset::new(x, labels, 3).unwrap()
    }

    #[test]
    fn report_combines_weights_and_accuracies() {
        let r =
            ExpectedAccuracyReport::new("eq", vec![1.0 / 3.0; 3], vec![0.5, 0.7, 0.9]).unwrap();
        assert!((r.expected - 0.7).abs() < 1e-12);

        let std = ExpectedAccuracyReport::new("std", vec![0.0, 0.0, 1.0], vec![0.5, 0.7, 0.9])
            .unwrap();
        assert_eq!(std.expected, 0.9);

        // any proper weighting of identical accuracies returns that accuracy
        let flat =
            ExpectedAccuracyReport::new("lin", vec![1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0], vec![0.8; 3])
                .unwrap();
        assert!((flat.expected - 0.8).abs() < 1e-12);

        assert!(ExpectedAccuracyReport::new("x", vec![1.0], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn expected_accuracy_is_linear_in_the_weights() {
        let acc = vec![0.3, 0.6, 0.9];
        let w1 = vec![0.2, 0.3, 0.5];
        let w2 = vec![0.5, 0.4, 0.1];
        let alpha = 0.35;
        let mix: Vec<f64> =
            w1.iter().zip(&w2).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
        let e1 = ExpectedAccuracyReport::new("a", w1, acc.clone()).unwrap().expected;
        let e2 = ExpectedAccuracyReport::new("b", w2, acc.clone()).unwrap().expected;
        let em = ExpectedAccuracyReport::new("m", mix, acc).unwrap().expected;
        assert!((em - (alpha * e1 + (1.0 - alpha) * e2)).abs() < 1e-12);
    }

    #[test]
    fn std_scheme_report_equals_last_head_accuracy() {
        let net = net3(1);
        let ds = random_ds(60, 2);
        let report = expected_accuracy(&net, &ds, &WeightScheme::Std).unwrap();
        let probs = head_probs(&net, &ds).unwrap();
        let acc = per_head_accuracy(&probs, ds.labels());
        assert_eq!(report.expected, acc[2]);
        assert!(report.expected >= acc.iter().cloned().fold(f64::INFINITY, f64::min));
        assert!(report.expected <= acc.iter().cloned().fold(0.0, f64::max));
    }

    #[test]
    fn per_head_curve_has_one_point_per_head_with_increasing_cost() {
        let net = net3(3);
        let ds = random_ds(40, 4);
        let model = CostModel::analytic(&net).unwrap();
        let curve = per_head_curve(&net, &ds, &model, None).unwrap();
        assert_eq!(curve.points.len(), 3);
        assert!(curve.points.windows(2).all(|w| w[0].cost < w[1].cost));
        assert!(curve.points.iter().all(|p| p.cost_ms.is_none()));
        assert_eq!(curve.points[1].head, Some(1));
    }

    #[test]
    fn cascade_sweep_limits_coincide_with_per_head_endpoints() {
        let net = net3(5);
        let ds = random_ds(50, 6);
        let model = CostModel::analytic(&net).unwrap();
        let per_head = per_head_curve(&net, &ds, &model, None).unwrap();
        let sweep = cascade_sweep(
            &net,
            &ds,
            StopCriterion::Ratio,
            &[1.0, 1.2, 2.0, f64::INFINITY],
            &model,
            None,
        )
        .unwrap();

        let first = &sweep.points[0];
        assert_eq!(first.cost, per_head.points[0].cost);
        assert_eq!(first.accuracy, per_head.points[0].accuracy);

        let last = sweep.points.last().unwrap();
        assert_eq!(last.cost, per_head.points[2].cost);
        assert_eq!(last.accuracy, per_head.points[2].accuracy);

        // expected cost grows with the threshold
        assert!(sweep.points.windows(2).all(|w| w[0].cost <= w[1].cost));
    }

    #[test]
    fn cascade_sweep_validates_thresholds() {
        let net = net3(7);
        let ds = random_ds(20, 8);
        let model = CostModel::analytic(&net).unwrap();
        assert!(cascade_sweep(&net, &ds, StopCriterion::Ratio, &[], &model, None).is_err());
        assert!(
            cascade_sweep(&net, &ds, StopCriterion::Ratio, &[2.0, 1.5], &model, None).is_err()
        );
        assert!(
            cascade_sweep(&net, &ds, StopCriterion::Ratio, &[0.2, 0.5], &model, None).is_err()
        );
    }

    #[test]
    fn sampling_reproduces_the_closed_form_expectation() {
        let net = net3(9);
        let ds = random_ds(80, 10);
        let model = CostModel::analytic(&net).unwrap();
        let lo = model.skip[0] * 0.5;
        let hi = model.skip[2] * 1.2;
        let density = BudgetDensity::Uniform { start: lo, end: hi };
        let schedule = ExitSchedule::new(model.skip.clone()).unwrap();
        let weights = weights_from_density(&density, &schedule).unwrap();

        let probs = head_probs(&net, &ds).unwrap();
        let acc = per_head_accuracy(&probs, ds.labels());
        let closed: f64 = weights.iter().zip(&acc).map(|(w, a)| w * a).sum();

        let sampled =
            sampled_expected_accuracy(&net, &ds, &density, &model, 4000, 11).unwrap();
        assert!(
            (closed - sampled).abs() < 0.05,
            "closed {closed} vs sampled {sampled}"
        );
    }

    #[test]
    fn csv_layouts_are_stable() {
        let r = ExpectedAccuracyReport::new("eq", vec![0.5, 0.5], vec![0.4, 0.8]).unwrap();
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), ExpectedAccuracyReport::CSV_HEADER);
        assert_eq!(lines.next().unwrap(), "eq,1,0.5,0.4,0.6000000000000001");

        let curve = TimeAccuracyCurve {
            source: CurveSource::PerHead,
            points: vec![CurvePoint {
                cost: 100.0,
                cost_ms: None,
                accuracy: 0.5,
                head: Some(0),
                threshold: None,
            }],
        };
        let csv = curve.to_csv();
        assert!(csv.starts_with("cost_macs,cost_ms,accuracy,threshold_or_head\n"));
        assert!(csv.contains("100,,0.5,head_1"));
    }

    #[test]
    fn summary_reads_as_one_line() {
        let r = ExpectedAccuracyReport::new("ipoly", vec![0.75, 0.25], vec![0.5, 0.9]).unwrap();
        let s = r.summary();
        assert!(s.contains("ipoly"));
        assert!(s.contains("60.00%"));
        assert_eq!(s.lines().count(), 1);
    }
}
