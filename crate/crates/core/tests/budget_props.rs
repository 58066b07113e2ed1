// Property tests for the weight schemes and the density -> weights
// conversion. Closed-form or brute-force oracles stand in for the
// implementation wherever one exists.

use earlynet::budget::{weights_from_density, BudgetDensity, ExitSchedule, WeightScheme};
use proptest::prelude::*;

fn fixed_schemes(gamma: f64, beta: f64) -> Vec<WeightScheme> {
    vec![
        WeightScheme::Std,
        WeightScheme::Eq,
        WeightScheme::Lin,
        WeightScheme::Poly { gamma },
        WeightScheme::ILin,
        WeightScheme::IPoly { gamma },
        WeightScheme::Norm { beta },
    ]
}

proptest! {
    #[test]
    fn every_scheme_yields_a_probability_vector(
        k in 1usize..=16,
        gamma in 1.01f64..6.0,
        beta in 0.01f64..3.0,
    ) {
        for scheme in fixed_schemes(gamma, beta) {
            let w = scheme.weights(k).unwrap();
            prop_assert_eq!(w.len(), k);
            prop_assert!(w.iter().all(|x| x.is_finite() && *x >= 0.0));
            let sum: f64 = w.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12, "{} sums to {}", scheme.name(), sum);
        }
    }

    #[test]
    fn inverted_schemes_are_bitwise_reversals(
        k in 1usize..=16,
        gamma in 1.01f64..6.0,
    ) {
        let mut lin = WeightScheme::Lin.weights(k).unwrap();
        lin.reverse();
        prop_assert_eq!(lin, WeightScheme::ILin.weights(k).unwrap());

        let mut poly = WeightScheme::Poly { gamma }.weights(k).unwrap();
        poly.reverse();
        prop_assert_eq!(poly, WeightScheme::IPoly { gamma }.weights(k).unwrap());
    }

    #[test]
    fn centre_peaked_weights_are_symmetric(
        k in 1usize..=16,
        beta in 0.01f64..3.0,
    ) {
        let w = WeightScheme::Norm { beta }.weights(k).unwrap();
        for i in 0..k {
            prop_assert!((w[i] - w[k - 1 - i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn late_heavy_weights_rise_and_early_heavy_weights_fall(
        k in 2usize..=16,
        gamma in 1.01f64..6.0,
    ) {
        let rising = [WeightScheme::Lin, WeightScheme::Poly { gamma }];
        for scheme in rising {
            let w = scheme.weights(k).unwrap();
            prop_assert!(w.windows(2).all(|p| p[1] > p[0]), "{:?}", w);
        }
        let falling = [WeightScheme::ILin, WeightScheme::IPoly { gamma }];
        for scheme in falling {
            let w = scheme.weights(k).unwrap();
            prop_assert!(w.windows(2).all(|p| p[1] < p[0]), "{:?}", w);
        }
    }

    #[test]
    fn uniform_density_with_equal_spacing_reproduces_equal_weights(
        k in 1usize..=16,
        start in 0.0f64..50.0,
        span in 1.0f64..100.0,
    ) {
        let end = start + span;
        let times: Vec<f64> = (0..k).map(|i| start + span * i as f64 / k as f64).collect();
        let scheme = WeightScheme::FromDensity {
            density: BudgetDensity::Uniform { start, end },
            schedule: ExitSchedule::new(times).unwrap(),
        };
        let w = scheme.weights(k).unwrap();
        let eq = WeightScheme::Eq.weights(k).unwrap();
        for (a, b) in w.iter().zip(&eq) {
            prop_assert!((a - b).abs() <= 1e-9, "{:?} vs {:?}", w, eq);
        }
    }

    // closed-form oracle: for p(t) = r exp(-r t) the mass on [a, b) is
    // exp(-r a) - exp(-r b), so each weight is computable independently
    #[test]
    fn exponential_weights_match_the_closed_form(
        k in 1usize..=8,
        rate in 0.05f64..3.0,
        first in 0.0f64..2.0,
        gaps in proptest::collection::vec(0.1f64..2.0, 7),
    ) {
        let mut times = vec![first];
        for g in gaps.iter().take(k - 1) {
            times.push(times.last().unwrap() + g);
        }
        let schedule = ExitSchedule::new(times.clone()).unwrap();
        let w =
            weights_from_density(&BudgetDensity::Exponential { rate }, &schedule).unwrap();

        let mass = |a: f64, b: f64| (-rate * a).exp() - if b.is_finite() { (-rate * b).exp() } else { 0.0 };
        let mut expect: Vec<f64> = (0..k)
            .map(|i| {
                let hi = if i + 1 < k { times[i + 1] } else { f64::INFINITY };
                mass(times[i], hi)
            })
            .collect();
        let reachable: f64 = expect.iter().sum();
        for e in &mut expect {
            *e /= reachable;
        }
        for (a, e) in w.iter().zip(&expect) {
            prop_assert!((a - e).abs() <= 1e-12, "{:?} vs {:?}", w, expect);
        }
    }

    // a point mass answers with exactly one head: the deepest one whose
    // exit time is not after the interruption
    #[test]
    fn point_mass_weights_are_one_hot_on_the_covering_head(
        k in 1usize..=8,
        at in 0.0f64..10.0,
        first in 0.0f64..2.0,
        gaps in proptest::collection::vec(0.1f64..2.0, 7),
    ) {
        let mut times = vec![first];
        for g in gaps.iter().take(k - 1) {
            times.push(times.last().unwrap() + g);
        }
        let schedule = ExitSchedule::new(times.clone()).unwrap();
        let density = BudgetDensity::PointMass { at };
        match weights_from_density(&density, &schedule) {
            Ok(w) => {
                let hit = schedule.head_at(at).unwrap();
                for (i, x) in w.iter().enumerate() {
                    prop_assert_eq!(*x, if i == hit { 1.0 } else { 0.0 });
                }
            }
            Err(_) => prop_assert!(at < times[0], "failed although mass was reachable"),
        }
    }

    // independent low-tech oracle for the piecewise case: a plain Riemann
    // sum over a fine grid, tolerance set by the grid resolution
    #[test]
    fn piecewise_weights_match_a_riemann_sum(
        k in 1usize..=6,
        heights in proptest::collection::vec(0.0f64..1.0, 4),
        first in 0.0f64..3.0,
        gaps in proptest::collection::vec(0.2f64..2.0, 5),
    ) {
        // segments on [0, 4), then normalised to integrate to one; bump a
        // segment if all heights came out zero
        let mut heights = heights;
        if heights.iter().sum::<f64>() == 0.0 {
            heights[0] = 1.0;
        }
        let total: f64 = heights.iter().sum();
        for h in &mut heights {
            *h /= total;
        }
        let breakpoints: Vec<f64> = (0..=4).map(|i| i as f64).collect();
        let density = BudgetDensity::Piecewise { breakpoints, densities: heights.clone() };

        let mut times = vec![first];
        for g in gaps.iter().take(k - 1) {
            times.push(times.last().unwrap() + g);
        }
        let schedule = ExitSchedule::new(times.clone()).unwrap();

        let grid = 400_000usize;
        let dx = 4.0 / grid as f64;
        let pdf = |t: f64| -> f64 {
            if !(0.0..4.0).contains(&t) {
                0.0
            } else {
                heights[(t.floor() as usize).min(3)]
            }
        };
        let integral = |a: f64, b: f64| -> f64 {
            let mut s = 0.0;
            for i in 0..grid {
                let t = (i as f64 + 0.5) * dx;
                if t >= a && t < b {
                    s += pdf(t) * dx;
                }
            }
            s
        };
        let expect: Vec<f64> = (0..k)
            .map(|i| {
                let hi = if i + 1 < k { times[i + 1] } else { f64::INFINITY };
                integral(times[i], hi)
            })
            .collect();
        let reachable: f64 = expect.iter().sum();

        match weights_from_density(&density, &schedule) {
            Ok(w) => {
                prop_assert!(reachable > 1e-9);
                for (a, e) in w.iter().zip(&expect) {
                    prop_assert!((a - e / reachable).abs() <= 1e-3, "{:?} vs {:?}", w, expect);
                }
            }
            Err(_) => prop_assert!(reachable <= 1e-3, "failed although mass was reachable"),
        }
    }
}
