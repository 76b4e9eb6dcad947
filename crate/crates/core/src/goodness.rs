//! Time-rescaling goodness of fit: compensator increments between events
//! should be i.i.d. Exp(1).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::OdeKernel;
use crate::numerics::{expm, expm_integral, Vector};
use crate::simulate::EventLog;

/// Gaps pooled per path. Completed gaps inside a fixed window are biased
/// short, so only a fixed number of leading gaps is used.
pub const LEADING_GAPS: usize = 10;
/// Horizon long enough that every test path has `LEADING_GAPS` events.
pub const LONG_HORIZON: f64 = 50.0;

/// `Λ(T_k) - Λ(T_{k-1})` for each event, with `Λ(t) = ∫₀^t λ_s ds`.
pub fn rescaled_interarrivals(log: &EventLog, kernel: &OdeKernel, mu: f64) -> Result<Vec<f64>> {
    let c = kernel.companion();
    let mut x = Vector::zeros(kernel.order() + 1);
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(log.len());
    for t in log.times() {
        let dt = t - prev;
        let integral = expm_integral(c, &x, dt)?;
        out.push(mu * dt + integral[1]);
        x = expm(&(c * dt))? * x + kernel.jump();
        prev = t;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample KS test against Exp(1), asymptotic p-value with the
/// `(√n + 0.12 + 0.11/√n)D` correction.
pub fn ks_exponential(samples: &[f64]) -> Result<KsResult> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("KS test needs samples".into()));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let f = -(-x).exp_m1();
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d),
        n: xs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kolmogorov_values() {
        // Standard table values.
        assert!((kolmogorov_survival(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_survival(1.628) - 0.01).abs() < 1e-3);
        assert_eq!(kolmogorov_survival(0.0), 1.0);
    }

    #[test]
    fn perfect_quantiles_pass() {
        let n = 1000;
        let xs: Vec<f64> = (0..n)
            .map(|i| -(1.0 - (i as f64 + 0.5) / n as f64).ln())
            .collect();
        let r = ks_exponential(&xs).unwrap();
        assert!(r.statistic <= 0.5 / n as f64 + 1e-12);
        assert!(r.p_value > 0.99);
    }

    #[test]
    fn shifted_sample_fails() {
        let xs: Vec<f64> = (0..1000)
            .map(|i| 2.0 * -(1.0 - (i as f64 + 0.5) / 1000.0).ln())
            .collect();
        assert!(ks_exponential(&xs).unwrap().p_value < 1e-6);
    }

    #[test]
    fn poisson_increments_are_gaps() {
        let k = OdeKernel::new(vec![0.0, -1.0], vec![0.0]).unwrap();
        let log = crate::simulate::simulate_standard(&k, 2.0, 5.0, 3).unwrap();
        let gaps = rescaled_interarrivals(&log, &k, 2.0).unwrap();
        let mut prev = 0.0;
        for (g, t) in gaps.iter().zip(log.times()) {
            assert!((g - 2.0 * (t - prev)).abs() < 1e-12);
            prev = t;
        }
    }
}
