//! Budget distributions, exit schedules and per-head loss weights.
//!
//! A network with K heads becomes usable at times `t_1 < t_2 < ... < t_K`
//! and answers with head k throughout `[t_k, t_{k+1})` (head K from `t_K`
//! on, nothing before `t_1`). If the interruption time is a random
//! variable with density `p`, the probability that head k is the one that
//! answers is
//!
//! ```text
//! w_k = integral of p over [t_k, t_{k+1})      for k < K
//! w_K = integral of p over [t_K, infinity)
//! ```
//!
//! [`weights_from_density`] computes exactly that with closed-form
//! integration, drops any mass that falls before `t_1` (those
//! interruptions produce no answer at all) and renormalises the rest to
//! sum to one. The named schemes in [`WeightScheme`] are fixed weight
//! shapes that need no density.

use crate::error::{Error, Result};

/// Default curvature for the polynomial schemes.
pub const DEFAULT_GAMMA: f64 = 2.0;
/// Default concentration for the centre-peaked scheme.
pub const DEFAULT_BETA: f64 = 0.34;

/// A distribution over interruption times on `[0, infinity)`.
#[derive(Debug, Clone, PartialEq)]
pub enum BudgetDensity {
    /// Piecewise-constant density: `densities[i]` on
    /// `[breakpoints[i], breakpoints[i+1])`, zero elsewhere.
    Piecewise { breakpoints: Vec<f64>, densities: Vec<f64> },
    /// Constant density on `[start, end)`.
    Uniform { start: f64, end: f64 },
    /// `rate * exp(-rate * t)` on `[0, infinity)`.
    Exponential { rate: f64 },
    /// All interruptions happen at exactly `at`.
    PointMass { at: f64 },
}

impl BudgetDensity {
    pub fn validate(&self) -> Result<()> {
        match self {
            BudgetDensity::Piecewise { breakpoints, densities } => {
                if breakpoints.len() != densities.len() + 1 || densities.is_empty() {
                    return Err(Error::Budget(format!(
                        "piecewise density needs n+1 breakpoints for n segments, got {} and {}",
                        breakpoints.len(),
                        densities.len()
                    )));
                }
                if breakpoints.windows(2).any(|p| p[1] <= p[0]) {
                    return Err(Error::Budget(
                        "piecewise breakpoints must be strictly increasing".into(),
                    ));
                }
                if breakpoints[0] < 0.0 {
                    return Err(Error::Budget("density support must lie in [0, inf)".into()));
                }
                if densities.iter().any(|d| *d < 0.0 || !d.is_finite()) {
                    return Err(Error::Budget("densities must be finite and >= 0".into()));
                }
                let total = self.mass(0.0, f64::INFINITY);
                if (total - 1.0).abs() > 1e-6 {
                    return Err(Error::Budget(format!(
                        "density integrates to {total}, expected 1 (within 1e-6)"
                    )));
                }
                Ok(())
            }
            BudgetDensity::Uniform { start, end } => {
                if !(start.is_finite() && end.is_finite()) || *start < 0.0 || end <= start {
                    Err(Error::Budget(format!("bad uniform support [{start}, {end})")))
                } else {
                    Ok(())
                }
            }
            BudgetDensity::Exponential { rate } => {
                if !rate.is_finite() || *rate <= 0.0 {
                    Err(Error::Budget(format!("bad exponential rate {rate}")))
                } else {
                    Ok(())
                }
            }
            BudgetDensity::PointMass { at } => {
                if !at.is_finite() || *at < 0.0 {
                    Err(Error::Budget(format!("bad point-mass location {at}")))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Exact probability mass on `[a, b)`; `b` may be infinite.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        match self {
            BudgetDensity::Piecewise { breakpoints, densities } => {
                let mut total = 0.0;
                for (i, d) in densities.iter().enumerate() {
                    let lo = breakpoints[i].max(a);
                    let hi = breakpoints[i + 1].min(b);
                    if hi > lo {
                        total += d * (hi - lo);
                    }
                }
                total
            }
            BudgetDensity::Uniform { start, end } => {
                let lo = a.max(*start);
                let hi = b.min(*end);
                if hi > lo {
                    (hi - lo) / (end - start)
                } else {
                    0.0
                }
            }
            BudgetDensity::Exponential { rate } => {
                let upper = if b.is_infinite() { 0.0 } else { (-rate * b).exp() };
                (-rate * a).exp() - upper
            }
            BudgetDensity::PointMass { at } => {
                if *at >= a && *at < b {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Draw one interruption time, by inverse CDF. Used by the
    /// sampling-based cross-check of the closed-form weights.
    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> f64 {
        match self {
            BudgetDensity::Piecewise { breakpoints, densities } => {
                let total = self.mass(0.0, f64::INFINITY);
                let mut u = rng.gen::<f64>() * total;
                for (i, d) in densities.iter().enumerate() {
                    let seg = d * (breakpoints[i + 1] - breakpoints[i]);
                    if u < seg && *d > 0.0 {
                        return breakpoints[i] + u / d;
                    }
                    u -= seg;
                }
                breakpoints[breakpoints.len() - 1]
            }
            BudgetDensity::Uniform { start, end } => start + rng.gen::<f64>() * (end - start),
            BudgetDensity::Exponential { rate } => -(1.0 - rng.gen::<f64>()).ln() / rate,
            BudgetDensity::PointMass { at } => *at,
        }
    }
}

/// Strictly increasing times at which heads become available.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitSchedule {
    times: Vec<f64>,
}

impl ExitSchedule {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Budget("exit schedule must have at least one exit".into()));
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Budget("exit times must be finite and >= 0".into()));
        }
        if times.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::Budget(format!(
                "exit times must be strictly increasing, got {times:?}"
            )));
        }
        Ok(ExitSchedule { times })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Deepest head already available at time `t` (0-based), or `None`
    /// before the first exit.
    pub fn head_at(&self, t: f64) -> Option<usize> {
        if t < self.times[0] {
            return None;
        }
        // closed on the left: at exactly t_k, head k has just become usable
        let mut k = 0;
        for (i, exit) in self.times.iter().enumerate() {
            if t >= *exit {
                k = i;
            } else {
                break;
            }
        }
        Some(k)
    }
}

/// Probability that each head is the answering one under `density`:
/// interval masses, with everything from `t_K` onward credited to the
/// last head. Mass before `t_1` is dropped and the rest renormalised;
/// if no mass lies at or after `t_1` there is nothing to weight and the
/// call fails.
pub fn weights_from_density(density: &BudgetDensity, schedule: &ExitSchedule) -> Result<Vec<f64>> {
    density.validate()?;
    let times = schedule.times();
    let k = times.len();
    let mut weights = Vec::with_capacity(k);
    for i in 0..k {
        let upper = if i + 1 < k { times[i + 1] } else { f64::INFINITY };
        weights.push(density.mass(times[i], upper));
    }
    let reachable: f64 = weights.iter().sum();
    if reachable <= 0.0 {
        return Err(Error::Budget(
            "all probability mass lies before the first exit; no head can answer".into(),
        ));
    }
    for w in &mut weights {
        *w /= reachable;
    }
    Ok(weights)
}

/// Named weight shapes over K heads. All of them normalise to sum one.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightScheme {
    /// All weight on the last head: ordinary single-loss training.
    Std,
    /// Equal weight on every head.
    Eq,
    /// Weight proportional to the head index k.
    Lin,
    /// Weight proportional to `k^gamma`, `gamma > 1`.
    Poly { gamma: f64 },
    /// [`WeightScheme::Lin`] reversed: emphasis on early heads.
    ILin,
    /// [`WeightScheme::Poly`] reversed.
    IPoly { gamma: f64 },
    /// Centre-peaked: proportional to `exp(-beta * (k - (K+1)/2)^2)`.
    Norm { beta: f64 },
    /// Computed from an anticipated budget distribution and the exit
    /// schedule via [`weights_from_density`].
    FromDensity { density: BudgetDensity, schedule: ExitSchedule },
}

impl WeightScheme {
    pub fn poly() -> Self {
        WeightScheme::Poly { gamma: DEFAULT_GAMMA }
    }

    pub fn ipoly() -> Self {
        WeightScheme::IPoly { gamma: DEFAULT_GAMMA }
    }

    pub fn norm() -> Self {
        WeightScheme::Norm { beta: DEFAULT_BETA }
    }

    /// Short lower-case name used in configs, CSV columns and reports.
    pub fn name(&self) -> &'static str {
        match self {
            WeightScheme::Std => "std",
            WeightScheme::Eq => "eq",
            WeightScheme::Lin => "lin",
            WeightScheme::Poly { .. } => "poly",
            WeightScheme::ILin => "ilin",
            WeightScheme::IPoly { .. } => "ipoly",
            WeightScheme::Norm { .. } => "norm",
            WeightScheme::FromDensity { .. } => "density",
        }
    }

    /// The weight vector for a K-head network.
    pub fn weights(&self, k: usize) -> Result<Vec<f64>> {
        if k == 0 {
            return Err(Error::Budget("a network has at least one head".into()));
        }
        let raw: Vec<f64> = match self {
            WeightScheme::Std => {
                let mut w = vec![0.0; k];
                w[k - 1] = 1.0;
                return Ok(w); // already normalised, avoid 0/0 below for K=1
            }
            WeightScheme::Eq => vec![1.0; k],
            WeightScheme::Lin => (1..=k).map(|i| i as f64).collect(),
            WeightScheme::Poly { gamma } => {
                check_gamma(*gamma)?;
                (1..=k).map(|i| (i as f64).powf(*gamma)).collect()
            }
            // the inverted schemes are defined as exact reversals of their
            // base scheme, so reverse after normalisation: summing the raw
            // terms in the opposite order could differ in the last ulp.
            WeightScheme::ILin => {
                let mut w = WeightScheme::Lin.weights(k)?;
                w.reverse();
                return Ok(w);
            }
            WeightScheme::IPoly { gamma } => {
                let mut w = WeightScheme::Poly { gamma: *gamma }.weights(k)?;
                w.reverse();
                return Ok(w);
            }
            WeightScheme::Norm { beta } => {
                if !beta.is_finite() || *beta <= 0.0 {
                    return Err(Error::Budget(format!("norm scheme needs beta > 0, got {beta}")));
                }
                let centre = (k as f64 + 1.0) / 2.0;
                (1..=k)
                    .map(|i| {
                        let d = i as f64 - centre;
                        (-beta * d * d).exp()
                    })
                    .collect()
            }
            WeightScheme::FromDensity { density, schedule } => {
                if schedule.len() != k {
                    return Err(Error::Budget(format!(
                        "exit schedule has {} exits but the network has {} heads",
                        schedule.len(),
                        k
                    )));
                }
                return weights_from_density(density, schedule);
            }
        };
        let total: f64 = raw.iter().sum();
        Ok(raw.into_iter().map(|w| w / total).collect())
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !gamma.is_finite() || gamma <= 1.0 {
        Err(Error::Budget(format!(
            "polynomial schemes need gamma > 1 (gamma = 1 is the linear scheme), got {gamma}"
        )))
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
        assert_eq!(actual.len(), expected.len());
        for (a, e) in actual.iter().zip(expected) {
            assert!((a - e).abs() <= tol, "{actual:?} vs {expected:?}");
        }
    }

    #[test]
    fn std_puts_everything_on_the_last_head() {
        assert_eq!(WeightScheme::Std.weights(4).unwrap(), vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(WeightScheme::Std.weights(1).unwrap(), vec![1.0]);
    }

    #[test]
    fn eq_is_uniform() {
        assert_close(&WeightScheme::Eq.weights(5).unwrap(), &[0.2; 5], 1e-12);
    }

    #[test]
    fn lin_rises_proportionally_to_the_index() {
        assert_close(&WeightScheme::Lin.weights(4).unwrap(), &[0.1, 0.2, 0.3, 0.4], 1e-12);
    }

    #[test]
    fn ilin_is_lin_reversed() {
        assert_close(&WeightScheme::ILin.weights(4).unwrap(), &[0.4, 0.3, 0.2, 0.1], 1e-12);
    }

    #[test]
    fn poly_and_ipoly_are_exact_mirrors() {
        for k in 1..=8 {
            let p = WeightScheme::poly().weights(k).unwrap();
            let mut ip = WeightScheme::ipoly().weights(k).unwrap();
            ip.reverse();
            assert_close(&p, &ip, 0.0);
        }
    }

    #[test]
    fn norm_matches_the_direct_formula_for_k5() {
        // exponents -0.34 * {4, 1, 0, 1, 4}
        let w = WeightScheme::norm().weights(5).unwrap();
        let raw = [
            (-1.36f64).exp(),
            (-0.34f64).exp(),
            1.0,
            (-0.34f64).exp(),
            (-1.36f64).exp(),
        ];
        let z: f64 = raw.iter().sum();
        let expected: Vec<f64> = raw.iter().map(|r| r / z).collect();
        assert_close(&w, &expected, 1e-12);
    }

    #[test]
    fn gamma_at_or_below_one_is_rejected() {
        assert!(WeightScheme::Poly { gamma: 1.0 }.weights(3).is_err());
        assert!(WeightScheme::IPoly { gamma: 0.5 }.weights(3).is_err());
        assert!(WeightScheme::Poly { gamma: 1.5 }.weights(3).is_ok());
    }

    #[test]
    fn single_head_degenerates_to_weight_one_everywhere() {
        for scheme in [
            WeightScheme::Std,
            WeightScheme::Eq,
            WeightScheme::Lin,
            WeightScheme::poly(),
            WeightScheme::ILin,
            WeightScheme::ipoly(),
            WeightScheme::norm(),
        ] {
            assert_close(&scheme.weights(1).unwrap(), &[1.0], 1e-12);
        }
    }

    #[test]
    fn point_mass_after_the_last_exit_weights_only_the_last_head() {
        let density = BudgetDensity::PointMass { at: 9.0 };
        let schedule = ExitSchedule::new(vec![1.0, 2.0, 3.0]).unwrap();
        let w = weights_from_density(&density, &schedule).unwrap();
        assert_eq!(w, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn uniform_mass_splits_over_the_intervals() {
        // uniform on [0, 1) with exits (0, 0.25, 0.5, 0.75): each interval
        // holds a quarter of the mass and the open-ended last interval
        // picks up [0.75, 1).
        let density = BudgetDensity::Uniform { start: 0.0, end: 1.0 };
        let schedule = ExitSchedule::new(vec![0.0, 0.25, 0.5, 0.75]).unwrap();
        let w = weights_from_density(&density, &schedule).unwrap();
        assert_close(&w, &[0.25, 0.25, 0.25, 0.25], 1e-12);

        // stretching the support to [0, 1.25) doubles the tail interval's
        // share: raw masses (0.2, 0.2, 0.2, 0.4).
        let density = BudgetDensity::Uniform { start: 0.0, end: 1.25 };
        let w = weights_from_density(&density, &schedule).unwrap();
        assert_close(&w, &[0.2, 0.2, 0.2, 0.4], 1e-12);
    }

    #[test]
    fn mass_before_the_first_exit_is_dropped_and_renormalised() {
        // uniform on [0, 1), first exit at 0.5: half the interruptions get
        // no answer; the answering half splits (0.5, 0.75) vs [0.75, 1).
        let density = BudgetDensity::Uniform { start: 0.0, end: 1.0 };
        let schedule = ExitSchedule::new(vec![0.5, 0.75]).unwrap();
        let w = weights_from_density(&density, &schedule).unwrap();
        assert_close(&w, &[0.5, 0.5], 1e-12);
    }

    #[test]
    fn all_mass_before_the_first_exit_is_an_error() {
        let density = BudgetDensity::Uniform { start: 0.0, end: 1.0 };
        let schedule = ExitSchedule::new(vec![5.0, 6.0]).unwrap();
        assert!(weights_from_density(&density, &schedule).is_err());
    }

    #[test]
    fn exponential_tail_mass_is_exact() {
        let density = BudgetDensity::Exponential { rate: 2.0 };
        let schedule = ExitSchedule::new(vec![0.0, 1.0]).unwrap();
        let w = weights_from_density(&density, &schedule).unwrap();
        // P(T >= 1) = e^-2
        assert!((w[1] - (-2.0f64).exp()).abs() < 1e-12);
        assert!((w[0] + w[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn piecewise_density_must_integrate_to_one() {
        let bad = BudgetDensity::Piecewise {
            breakpoints: vec![0.0, 1.0],
            densities: vec![0.5],
        };
        assert!(bad.validate().is_err());
        let good = BudgetDensity::Piecewise {
            breakpoints: vec![0.0, 0.5, 1.0],
            densities: vec![0.6, 1.4],
        };
        assert!(good.validate().is_ok());
    }

    #[test]
    fn schedules_must_strictly_increase() {
        assert!(ExitSchedule::new(vec![]).is_err());
        assert!(ExitSchedule::new(vec![1.0, 1.0]).is_err());
        assert!(ExitSchedule::new(vec![2.0, 1.0]).is_err());
        assert!(ExitSchedule::new(vec![0.0, 1.0, 2.5]).is_ok());
    }

    #[test]
    fn head_at_respects_closed_left_intervals() {
        let s = ExitSchedule::new(vec![1.0, 2.0, 4.0]).unwrap();
        assert_eq!(s.head_at(0.5), None);
        assert_eq!(s.head_at(1.0), Some(0)); // boundary belongs to the new head
        assert_eq!(s.head_at(1.99), Some(0));
        assert_eq!(s.head_at(2.0), Some(1));
        assert_eq!(s.head_at(100.0), Some(2));
    }

    #[test]
    fn samples_land_in_support_with_the_right_frequencies() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);

        let uni = BudgetDensity::Uniform { start: 2.0, end: 5.0 };
        for _ in 0..200 {
            let t = uni.sample(&mut rng);
            assert!((2.0..5.0).contains(&t));
        }

        assert_eq!(BudgetDensity::PointMass { at: 3.5 }.sample(&mut rng), 3.5);

        let exp = BudgetDensity::Exponential { rate: 2.0 };
        let mean: f64 = (0..4000).map(|_| exp.sample(&mut rng)).sum::<f64>() / 4000.0;
        assert!((mean - 0.5).abs() < 0.05, "exponential mean {mean}");

        // segment hit frequencies should track segment masses
        let pw = BudgetDensity::Piecewise {
            breakpoints: vec![0.0, 1.0, 3.0],
            densities: vec![0.8, 0.1],
        };
        pw.validate().unwrap();
        let n = 4000;
        let hits = (0..n).filter(|_| pw.sample(&mut rng) < 1.0).count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.8).abs() < 0.05, "first-segment frequency {freq}");
    }
}
