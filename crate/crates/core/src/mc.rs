//! Monte Carlo estimation over independent seeded paths and z-score
//! comparison with analytic values.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::OdeKernel;
use crate::laplace::{martingale_general, martingale_standard, MatrixRiccati, VectorRiccati};
use crate::model::GeneralModel;
use crate::numerics::{fmt_f64, Matrix};
use crate::pyramid::{markov_state_direct, matrix_state_direct};
use crate::simulate::{EventLog, SimOptions};

pub const Z_MAX: f64 = 4.0;
pub const MIN_PATHS: usize = 100;

/// splitmix64 of `base + index`; path seeds for one run.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Evaluates `f` on path seeds `0..n_paths` in parallel; results keep
/// path order.
pub fn run_paths<T, F>(seed: u64, n_paths: usize, f: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| f(derive_seed(seed, i)))
        .collect()
}

/// Sample summary of one statistic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McInputs {
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
    pub n_paths: usize,
    pub failures: usize,
}

impl McInputs {
    /// Sample mean with `se = sd/√n`.
    pub fn from_samples(samples: &[f64], failures: usize) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let ss: f64 = samples.iter().map(|x| (x - mean).powi(2)).sum();
        let sd = if n > 1 {
            (ss / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        McInputs {
            mean,
            sd,
            se: sd / (n as f64).sqrt(),
            n_paths: n,
            failures,
        }
    }

    /// Unbiased sample variance; `se = √((m₄ - s⁴)/n)`.
    pub fn variance_of(samples: &[f64], failures: usize) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let m2 = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m4 = samples.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        let var = m2 * n / (n - 1.0);
        let sd = (m4 - m2 * m2).max(0.0).sqrt();
        McInputs {
            mean: var,
            sd,
            se: sd / n.sqrt(),
            n_paths: samples.len(),
            failures,
        }
    }

    fn from_results(results: Vec<Result<f64>>, variance: bool) -> Result<Self> {
        let mut samples = Vec::with_capacity(results.len());
        let mut failures = 0;
        let mut first_err = None;
        for r in results {
            match r {
                Ok(x) if x.is_finite() => samples.push(x),
                Ok(_) => failures += 1,
                Err(e) => {
                    failures += 1;
                    first_err.get_or_insert(e);
                }
            }
        }
        if samples.len() < 2 {
            return Err(first_err.unwrap_or(Error::ZeroVariance { n_paths: 0 }));
        }
        Ok(if variance {
            Self::variance_of(&samples, failures)
        } else {
            Self::from_samples(&samples, failures)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub quantity: String,
    pub analytic: f64,
    pub empirical: f64,
    pub se: f64,
    pub n_paths: usize,
    pub failures: usize,
    pub z: f64,
    pub pass: bool,
}

/// `z = (empirical - analytic)/se`, pass iff `|z| ≤ z_max` and no path
/// failed.
pub fn compare(
    quantity: impl Into<String>,
    analytic: f64,
    inputs: &McInputs,
    z_max: f64,
) -> Result<McReport> {
    if !(inputs.se > 0.0) {
        return Err(Error::ZeroVariance {
            n_paths: inputs.n_paths,
        });
    }
    let z = (inputs.mean - analytic) / inputs.se;
    Ok(McReport {
        quantity: quantity.into(),
        analytic,
        empirical: inputs.mean,
        se: inputs.se,
        n_paths: inputs.n_paths,
        failures: inputs.failures,
        z,
        pass: z.abs() <= z_max && inputs.failures == 0,
    })
}

/// Per-path statistics of the standard model at the horizon.
#[derive(Debug, Clone, Copy)]
pub enum Statistic<'a> {
    Count,
    Intensity,
    CountSquared,
    IntensitySquared,
    /// Sample variance of `N_T`.
    CountVariance,
    /// Sample variance of `λ_T`.
    IntensityVariance,
    /// `exp(v·X_T)`.
    ExpLinear(&'a [f64]),
    /// `exp(θ₁N_T + θ₂λ_T)`.
    ExpJoint {
        theta1: f64,
        theta2: f64,
    },
    /// The exponential martingale along a solved `A`, read at `t`.
    Martingale {
        riccati: &'a VectorRiccati,
        at: f64,
    },
}

fn check_paths(n_paths: usize) -> Result<()> {
    if n_paths < MIN_PATHS {
        return Err(Error::InvalidParameter(format!(
            "need at least {MIN_PATHS} paths, got {n_paths}"
        )));
    }
    Ok(())
}

fn is_variance(statistic: &Statistic<'_>) -> bool {
    matches!(
        statistic,
        Statistic::CountVariance | Statistic::IntensityVariance
    )
}

/// Splits per-path rows into one summary per statistic.
fn summarize(rows: Vec<Result<Vec<f64>>>, variance: &[bool]) -> Result<Vec<McInputs>> {
    variance
        .iter()
        .enumerate()
        .map(|(j, &var)| {
            let column = rows
                .iter()
                .map(|r| match r {
                    Ok(row) => Ok(row[j]),
                    Err(e) => Err(e.clone()),
                })
                .collect();
            McInputs::from_results(column, var)
        })
        .collect()
}

fn standard_statistic(
    kernel: &OdeKernel,
    mu: f64,
    horizon: f64,
    log: &EventLog,
    statistic: &Statistic<'_>,
) -> Result<f64> {
    let state = || markov_state_direct(log, kernel, horizon);
    Ok(match *statistic {
        Statistic::Count | Statistic::CountVariance => log.len() as f64,
        Statistic::CountSquared => (log.len() as f64).powi(2),
        Statistic::Intensity | Statistic::IntensityVariance => state()?.intensity(mu),
        Statistic::IntensitySquared => state()?.intensity(mu).powi(2),
        Statistic::ExpLinear(v) => {
            let x = state()?.x;
            x.iter().zip(v).map(|(a, b)| a * b).sum::<f64>().exp()
        }
        Statistic::ExpJoint { theta1, theta2 } => {
            (theta1 * log.len() as f64 + theta2 * state()?.intensity(mu)).exp()
        }
        Statistic::Martingale { riccati, at } => martingale_standard(kernel, mu, riccati, log, at)?,
    })
}

/// Several statistics from one simulation per path.
pub fn estimate_many(
    kernel: &OdeKernel,
    mu: f64,
    horizon: f64,
    statistics: &[Statistic<'_>],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<McInputs>> {
    check_paths(n_paths)?;
    let opts = SimOptions::default();
    let rows = run_paths(seed, n_paths, |s| {
        let log = opts.simulate_standard(kernel, mu, horizon, s)?;
        statistics
            .iter()
            .map(|st| standard_statistic(kernel, mu, horizon, &log, st))
            .collect()
    });
    let variance: Vec<bool> = statistics.iter().map(is_variance).collect();
    summarize(rows, &variance)
}

pub fn estimate(
    kernel: &OdeKernel,
    mu: f64,
    horizon: f64,
    statistic: Statistic<'_>,
    n_paths: usize,
    seed: u64,
) -> Result<McInputs> {
    let mut out = estimate_many(kernel, mu, horizon, &[statistic], n_paths, seed)?;
    Ok(out.remove(0))
}

/// Per-path statistics of the general model.
#[derive(Debug, Clone, Copy)]
pub enum GeneralStatistic<'a> {
    /// Number of Hawkes-population events on `(0, T]`.
    HawkesCount,
    /// `exp(Tr(ūM¹_T + v̄M²_T))`.
    ExpTrace {
        u: &'a Matrix,
        v: &'a Matrix,
    },
    Martingale {
        riccati: &'a MatrixRiccati,
        at: f64,
    },
}

pub fn estimate_general_many(
    model: &GeneralModel,
    horizon: f64,
    statistics: &[GeneralStatistic<'_>],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<McInputs>> {
    check_paths(n_paths)?;
    let opts = SimOptions::default();
    let rows = run_paths(seed, n_paths, |s| {
        let (ext, hawkes) = opts.simulate_general(model, horizon, s)?;
        statistics
            .iter()
            .map(|st| {
                Ok(match *st {
                    GeneralStatistic::HawkesCount => hawkes.len() as f64,
                    GeneralStatistic::ExpTrace { u, v } => {
                        let m = matrix_state_direct(&ext, &hawkes, model, horizon)?;
                        let tr = |a: &Matrix, b: &Matrix| a.component_mul(b).sum();
                        (tr(u, &m.m1) + tr(v, &m.m2)).exp()
                    }
                    GeneralStatistic::Martingale { riccati, at } => {
                        martingale_general(model, riccati, &ext, &hawkes, at)?
                    }
                })
            })
            .collect()
    });
    summarize(rows, &vec![false; statistics.len()])
}

pub fn estimate_general(
    model: &GeneralModel,
    horizon: f64,
    statistic: GeneralStatistic<'_>,
    n_paths: usize,
    seed: u64,
) -> Result<McInputs> {
    let mut out = estimate_general_many(model, horizon, &[statistic], n_paths, seed)?;
    Ok(out.remove(0))
}

/// CSV summary, one row per report.
pub fn write_reports_csv<W: Write>(reports: &[McReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "quantity",
        "analytic",
        "empirical",
        "se",
        "n_paths",
        "failures",
        "z",
        "pass",
    ])?;
    for r in reports {
        w.write_record([
            r.quantity.clone(),
            fmt_f64(r.analytic),
            fmt_f64(r.empirical),
            fmt_f64(r.se),
            r.n_paths.to_string(),
            r.failures.to_string(),
            fmt_f64(r.z),
            r.pass.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}
