//! Exact structural identities on simulated paths.

use hawkes_core::goodness::{ks_exponential, rescaled_interarrivals, LEADING_GAPS, LONG_HORIZON};
use hawkes_core::kernels::{MarkDistribution, MarkKernel, OdeKernel, TimeFactor};
use hawkes_core::mc::{compare, derive_seed, estimate, Statistic, Z_MAX};
use hawkes_core::model::GeneralModel;
use hawkes_core::numerics::quad_simpson;
use hawkes_core::pyramid::{
    markov_state_direct, markov_state_propagated, matrix_state_direct, matrix_state_propagated,
    pyramid_at,
};
use hawkes_core::simulate::{simulate_general, simulate_generations, simulate_standard, EventLog};

fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
}

/// `∫₀^t g(a, s) ds` split at the event times; `g` sees the segment start
/// `a` so it can use the events up to `a` only.
fn piecewise_simpson<F: Fn(f64, f64) -> f64>(log: &EventLog, t: f64, g: F) -> f64 {
    let mut cuts: Vec<f64> = log.times().filter(|&s| s < t).collect();
    cuts.push(t);
    let mut a = 0.0;
    let mut total = 0.0;
    for b in cuts {
        if b > a {
            let n = ((b - a) * 400.0).ceil().max(2.0) as usize;
            total += quad_simpson(|s| g(a, s), a, b, n);
        }
        a = b;
    }
    total
}

#[test]
fn count_equals_pyramid_mass() {
    let k = OdeKernel::delayed(1.0, 1.5).unwrap();
    for seed in 0..20 {
        let log = simulate_standard(&k, 1.0, 3.0, seed).unwrap();
        for i in 0..=30 {
            let t = 0.1 * i as f64;
            let z = pyramid_at(&log, t);
            assert_eq!(z.count(), log.count_until(t));
            assert_eq!(z.integrate(|_, _| 1.0), log.count_until(t) as f64);
        }
    }
}

#[test]
fn generations_partition_counts() {
    let k = OdeKernel::exponential(1.5).unwrap();
    for seed in 0..20 {
        let log = simulate_generations(&k, 1.0, 3.0, seed, 50).unwrap();
        for t in [0.5, 1.7, 3.0] {
            let parts: usize = log.generation_counts(t).iter().sum();
            assert_eq!(parts, log.count_until(t));
        }
    }
}

#[test]
fn simulation_is_reproducible() {
    let k = OdeKernel::delayed(0.8, 1.2).unwrap();
    let a = simulate_standard(&k, 1.0, 5.0, 42).unwrap();
    let b = simulate_standard(&k, 1.0, 5.0, 42).unwrap();
    assert_eq!(a, b);
    let bits = |l: &EventLog| l.times().map(f64::to_bits).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn transport_identity_on_short_intervals() {
    let f = |a: f64| (-a).exp() * a.cos();
    let df = |a: f64| -(-a).exp() * (a.cos() + a.sin());
    let k = OdeKernel::exponential(1.0).unwrap();
    let h = 1e-4;
    for seed in 0..10 {
        let log = simulate_standard(&k, 2.0, 2.0, seed).unwrap();
        for i in 1..40 {
            let t = 0.05 * i as f64;
            let lhs = pyramid_at(&log, t + h).integrate(|a, _| f(a))
                - pyramid_at(&log, t).integrate(|a, _| f(a));
            let jumps = (log.count_until(t + h) - log.count_until(t)) as f64;
            let mid = pyramid_at(&log, t + h / 2.0).integrate(|a, _| df(a));
            let rhs = f(0.0) * jumps + h * mid;
            if jumps == 0.0 {
                assert!((lhs - rhs).abs() <= 1e-9, "{lhs} vs {rhs}");
            } else {
                // Midpoint error grows only where an age crosses zero.
                assert!((lhs - rhs).abs() <= 10.0 * h * jumps);
            }
        }
    }
}

#[test]
fn state_components_integrate_their_successors() {
    let k = OdeKernel::from_exponential_modes(&[1.0, 0.5], &[1.0, 3.0]).unwrap();
    let n = k.order();
    let state = |log: &EventLog, s: f64| markov_state_direct(log, &k, s).unwrap().x;
    // Stack sum over events up to `a`, evaluated at `s ≥ a`.
    let frozen = |log: &EventLog, a: f64, s: f64| {
        let mut x = hawkes_core::numerics::Vector::zeros(n + 1);
        for e in &log.events()[..log.count_until(a)] {
            x += k.stack(s - e.time).unwrap();
        }
        x
    };
    for seed in 0..10 {
        let log = simulate_standard(&k, 1.0, 2.0, seed).unwrap();
        let t = 2.0;
        let x_t = state(&log, t);
        for comp in 0..n {
            let next = |a: f64, s: f64| {
                let x = frozen(&log, a, s);
                if comp + 1 < n {
                    x[comp + 2]
                } else {
                    k.top_derivative(&x)
                }
            };
            let integral = piecewise_simpson(&log, t, next);
            let residual = x_t[comp + 1] - k.init()[comp] * log.count_until(t) as f64 - integral;
            assert!(
                residual.abs() <= 1e-8 * x_t[comp + 1].abs().max(1.0),
                "{residual}"
            );
        }
    }
}

#[test]
fn direct_and_propagated_states_agree() {
    let k = OdeKernel::delayed(1.0, 1.3).unwrap();
    for seed in 0..100 {
        let log = simulate_standard(&k, 1.0, 3.0, derive_seed(1, seed)).unwrap();
        for t in [0.7, 3.0] {
            let d = markov_state_direct(&log, &k, t).unwrap();
            let p = markov_state_propagated(&log, &k, t).unwrap();
            assert!(rel_close(d.x.as_slice(), p.x.as_slice(), 1e-8));
        }
    }
    let model = GeneralModel::new(
        hawkes_core::model::RateFunction::Constant(1.0),
        hawkes_core::model::RateFunction::Constant(0.5),
        MarkKernel::dassios_zhao(1.0, MarkDistribution::Exponential { rate: 2.0 })
            .unwrap()
            .with_time_factor(TimeFactor::cos_squared(1.0, 1.0).unwrap()),
        MarkKernel::dassios_zhao(
            2.0,
            MarkDistribution::Uniform {
                low: 0.5,
                high: 1.5,
            },
        )
        .unwrap(),
    );
    for seed in 0..100 {
        let (ext, hawkes) = simulate_general(&model, 2.0, derive_seed(2, seed)).unwrap();
        let d = matrix_state_direct(&ext, &hawkes, &model, 2.0).unwrap();
        let p = matrix_state_propagated(&ext, &hawkes, &model, 2.0, 1e-3).unwrap();
        assert!(rel_close(d.m1.as_slice(), p.m1.as_slice(), 1e-8));
        assert!(rel_close(d.m2.as_slice(), p.m2.as_slice(), 1e-8));
    }
}

#[test]
fn time_rescaled_gaps_are_unit_exponential() {
    for k in [
        OdeKernel::exponential(2.0).unwrap(),
        OdeKernel::delayed(1.0, 1.5).unwrap(),
    ] {
        let mut pooled = Vec::new();
        for seed in 0..100 {
            let log = simulate_standard(&k, 1.0, LONG_HORIZON, derive_seed(3, seed)).unwrap();
            let gaps = rescaled_interarrivals(&log, &k, 1.0).unwrap();
            assert!(gaps.len() >= LEADING_GAPS);
            pooled.extend_from_slice(&gaps[..LEADING_GAPS]);
        }
        let ks = ks_exponential(&pooled).unwrap();
        assert!(ks.p_value > 0.01, "{ks:?}");
    }
}

#[test]
fn coverage_of_true_comparisons() {
    let k = OdeKernel::new(vec![0.0, -1.0], vec![0.0]).unwrap();
    let mut passes = 0;
    for rep in 0..50 {
        let m = estimate(&k, 2.0, 1.0, Statistic::Count, 400, derive_seed(99, rep)).unwrap();
        if compare("N_T", 2.0, &m, Z_MAX).unwrap().pass {
            passes += 1;
        }
    }
    assert!(passes as f64 / 50.0 >= 0.99, "{passes}/50");
}
