use hawkes_core::kernels::OdeKernel;
use hawkes_core::laplace::{joint_laplace_n_lambda, laplace_x};
use hawkes_core::moments::{mean_ode, second_moment_ode};
use hawkes_core::numerics::{expm, fd_derivative};
use proptest::prelude::*;

/// Positive weights on well-separated rates.
fn modes() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..=3).prop_flat_map(|n| {
        (
            prop::collection::vec(0.1f64..2.0, n),
            prop::collection::vec(0.0f64..0.4, n),
        )
            .prop_map(|(w, jitter)| {
                let rates = jitter
                    .iter()
                    .enumerate()
                    .map(|(i, j)| 0.5 + i as f64 + j)
                    .collect();
                (w, rates)
            })
    })
}

fn direct(weights: &[f64], rates: &[f64], k: i32, a: f64) -> f64 {
    weights
        .iter()
        .zip(rates)
        .map(|(w, r)| w * (-r).powi(k) * (-r * a).exp())
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn companion_components_are_derivatives((w, r) in modes(), age in 0.01f64..5.0) {
        let k = OdeKernel::from_exponential_modes(&w, &r).unwrap();
        let n = k.order();
        for comp in 1..n {
            let fd = fd_derivative(|a| k.stack(a).unwrap()[comp], age, 1e-4, 1);
            let next = k.stack(age).unwrap()[comp + 1];
            let scale = direct(&w, &r, comp as i32, age).abs().max(next.abs()).max(1e-3);
            prop_assert!((fd - next).abs() <= 1e-5 * scale, "{fd} vs {next}");
        }
    }

    #[test]
    fn top_derivative_closes_the_ode((w, r) in modes(), age in 0.0f64..5.0) {
        let k = OdeKernel::from_exponential_modes(&w, &r).unwrap();
        let n = k.order();
        let top = k.top_derivative(&k.stack(age).unwrap());
        let exact = direct(&w, &r, n as i32, age);
        prop_assert!((top - exact).abs() <= 1e-8 * exact.abs().max(1.0));
    }

    #[test]
    fn modes_match_closed_form((w, r) in modes(), ages in prop::collection::vec(0.0f64..10.0, 50)) {
        let k = OdeKernel::from_exponential_modes(&w, &r).unwrap();
        for a in ages {
            let got = k.value(a).unwrap();
            prop_assert!((got - direct(&w, &r, 0, a)).abs() <= 1e-10);
        }
    }

    #[test]
    fn power_law_matches_closed_form(
        tau0 in 0.5f64..2.0,
        ratio in 1.5f64..3.0,
        eps in 0.2f64..1.0,
        terms in 1usize..4,
        ages in prop::collection::vec(0.0f64..10.0, 50),
    ) {
        let k = OdeKernel::power_law(tau0, ratio, eps, terms).unwrap();
        let mut w = Vec::new();
        let mut r = Vec::new();
        for i in 0..terms as i32 {
            let s = tau0 * ratio.powi(i);
            w.push(s.powf(-(1.0 + eps)));
            r.push(1.0 / s);
        }
        let cut: f64 = w.iter().sum();
        for a in ages {
            let expected = direct(&w, &r, 0, a) - cut * (-a * ratio / tau0).exp();
            prop_assert!((k.value(a).unwrap() - expected).abs() <= 1e-10);
        }
    }

    #[test]
    fn expm_semigroup((w, r) in modes(), s in 0.0f64..3.0, t in 0.0f64..3.0) {
        let k = OdeKernel::from_exponential_modes(&w, &r).unwrap();
        let c = k.companion();
        let lhs = expm(&(c * s)).unwrap() * expm(&(c * t)).unwrap();
        let rhs = expm(&(c * (s + t))).unwrap();
        prop_assert!((lhs - rhs).amax() <= 1e-10);
    }

    #[test]
    fn laplace_monotone_in_each_component(
        c in 0.5f64..3.0,
        v in prop::array::uniform2(-1.0f64..0.0),
        idx in 0usize..2,
    ) {
        let k = OdeKernel::exponential(c).unwrap();
        let mut prev = 0.0;
        for step in 0..5 {
            let mut w = v;
            w[idx] = -1.0 + 0.25 * step as f64;
            let val = laplace_x(&k, 1.0, &w, 1.0).unwrap();
            prop_assert!(val >= prev - 1e-14);
            prev = val;
        }
    }

    #[test]
    fn log_transform_convex_in_theta1(c in 0.5f64..3.0, theta in -1.0f64..-0.1) {
        let k = OdeKernel::exponential(c).unwrap();
        let h = 0.05;
        let f = |t: f64| laplace_x(&k, 1.0, &[t, -0.2], 1.0).unwrap().ln();
        let second = f(theta + h) - 2.0 * f(theta) + f(theta - h);
        prop_assert!(second >= -1e-8);
    }
}

#[test]
fn formulations_agree_over_grid() {
    for k in [
        OdeKernel::exponential(0.5).unwrap(),
        OdeKernel::exponential(1.0).unwrap(),
        OdeKernel::delayed(1.0, 2.0).unwrap(),
        OdeKernel::delayed(0.5, 0.7).unwrap(),
    ] {
        for t1 in [-1.0, -0.3, 0.0] {
            for t2 in [-0.8, -0.1, 0.0] {
                let mu = 0.8f64;
                let mut v = vec![0.0; k.order() + 1];
                v[0] = t1;
                v[1] = t2;
                let a = (t2 * mu).exp() * laplace_x(&k, mu, &v, 1.5).unwrap();
                let b = joint_laplace_n_lambda(&k, mu, t1, t2, 1.5).unwrap();
                assert!((a - b).abs() < 1e-7, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn derivatives_at_zero_give_moments() {
    let h = 1e-4;
    for k in [
        OdeKernel::exponential(2.0).unwrap(),
        OdeKernel::delayed(1.0, 1.0).unwrap(),
    ] {
        let k = &k;
        let n1 = k.order() + 1;
        let mean = mean_ode(k, 1.0, 1.0).terminal().to_vec();
        let second = second_moment_ode(k, 1.0, 1.0);
        let last = second.path().len() - 1;
        let along = |i: usize| {
            move |t: f64| {
                let mut v = vec![0.0; n1];
                v[i] = t;
                laplace_x(k, 1.0, &v, 1.0).unwrap().ln()
            }
        };
        let d_count = fd_derivative(along(0), 0.0, h, 1);
        assert!((d_count / mean[0] - 1.0).abs() < 1e-4);
        let d_state = fd_derivative(along(1), 0.0, h, 1);
        assert!((d_state / mean[1] - 1.0).abs() < 1e-4);
        let var = fd_derivative(along(0), 0.0, 1e-3, 2);
        assert!((var / second.var_count(last) - 1.0).abs() < 1e-3);
        let g = |t: f64| joint_laplace_n_lambda(k, 1.0, 0.0, t, 1.0).unwrap().ln();
        let d_lambda = fd_derivative(g, 0.0, h, 1);
        assert!((d_lambda / (1.0 + mean[1]) - 1.0).abs() < 1e-4);
    }
}
