use nalgebra::Complex;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{expm, quad_simpson, Matrix, Vector};

/// Companion matrix of `f^{(n)} = c_{-1} + Σ c_k f^{(k)}`, acting on the
/// stack `(1, f, f', …, f^{(n-1)})`.
///
/// `coeffs` holds `(c_{-1}, c_0, …, c_{n-1})`; the result is square of size
/// `coeffs.len()` with a zero first row, ones on the super-diagonal of the
/// middle rows and `coeffs` as its last row.
pub fn companion(coeffs: &[f64]) -> Matrix {
    let size = coeffs.len();
    let mut c = Matrix::zeros(size, size);
    for i in 1..size.saturating_sub(1) {
        c[(i, i + 1)] = 1.0;
    }
    if size > 1 {
        for (j, &cj) in coeffs.iter().enumerate() {
            c[(size - 1, j)] = cj;
        }
    }
    c
}

pub(crate) const NEG_TOLERANCE: f64 = 1e-12;
pub(crate) const CHECK_STEP: f64 = 1e-3;
const MIN_CHECK_HORIZON: f64 = 10.0;
const MAX_CHECK_HORIZON: f64 = 1000.0;
const REANCHOR_EVERY: usize = 1000;

/// Eigenvalues of the homogeneous block (the companion without its
/// constant-forcing row and column).
fn homogeneous_eigenvalues(companion: &Matrix) -> Vec<Complex<f64>> {
    let n = companion.nrows() - 1;
    let block = companion.view((1, 1), (n, n)).into_owned();
    block.complex_eigenvalues().iter().copied().collect()
}

/// Age window over which non-negativity is checked: long enough to see five
/// e-folds of the slowest mode, capped so unbounded modes stay tractable.
pub(crate) fn check_horizon(companion: &Matrix) -> f64 {
    let slowest = homogeneous_eigenvalues(companion)
        .iter()
        .map(|z| z.re.abs())
        .fold(f64::INFINITY, f64::min);
    if slowest > 0.0 && slowest.is_finite() {
        (5.0 / slowest).clamp(MIN_CHECK_HORIZON, MAX_CHECK_HORIZON)
    } else {
        MAX_CHECK_HORIZON
    }
}

/// Component 1 of `e^{aC} start` on the grid `a = i·step`, `0 ≤ a ≤ horizon`.
pub(crate) fn component_on_grid(
    companion: &Matrix,
    start: &Vector,
    horizon: f64,
    step: f64,
) -> Result<Vec<(f64, Vector)>> {
    let n_steps = (horizon / step).ceil() as usize;
    let propagator = expm(&(companion * step))?;
    let mut out = Vec::with_capacity(n_steps + 1);
    let mut current = start.clone();
    for i in 0..=n_steps {
        let age = step * i as f64;
        if i > 0 {
            current = if i % REANCHOR_EVERY == 0 {
                expm(&(companion * age))? * start
            } else {
                &propagator * &current
            };
        }
        out.push((age, current.clone()));
    }
    Ok(out)
}

pub(crate) fn check_nonnegative(companion: &Matrix, start: &Vector) -> Result<()> {
    if start.len() < 2 {
        return Ok(());
    }
    let horizon = check_horizon(companion);
    for (age, stack) in component_on_grid(companion, start, horizon, CHECK_STEP)? {
        if stack[1] < -NEG_TOLERANCE {
            return Err(Error::NonPositiveKernel {
                age,
                value: stack[1],
            });
        }
    }
    Ok(())
}

/// Fertility function closed under an `n`-th order linear ODE:
/// `φ^{(n)} = c_{-1} + Σ_{k<n} c_k φ^{(k)}` with `φ^{(k)}(0) = m_k`.
///
/// The derivative stack `(1, φ(a), …, φ^{(n-1)}(a))` is `e^{aC} m` with `C`
/// the [`companion`] matrix and `m = (1, m_0, …, m_{n-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeKernel {
    coeffs: Vec<f64>,
    init: Vec<f64>,
    companion: Matrix,
    jump: Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchingRatio {
    /// `∫₀^A φ(a) da`.
    pub integral: f64,
    /// Estimate of `∫_A^∞ |φ|` from the dominant decay rate; infinite when
    /// the kernel is flagged divergent.
    pub tail_estimate: f64,
    pub possibly_divergent: bool,
    /// Largest real part among the homogeneous modes.
    pub dominant_rate: f64,
}

impl OdeKernel {
    /// `coeffs = (c_{-1}, …, c_{n-1})`, `init = (m_0, …, m_{n-1})`.
    pub fn new(coeffs: Vec<f64>, init: Vec<f64>) -> Result<Self> {
        if init.is_empty() || coeffs.len() != init.len() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "order-n kernel needs n+1 coefficients and n initial values, got {} and {}",
                coeffs.len(),
                init.len()
            )));
        }
        if coeffs.iter().chain(&init).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "kernel coefficients must be finite".into(),
            ));
        }
        let companion = companion(&coeffs);
        let mut jump = Vector::zeros(init.len() + 1);
        jump[0] = 1.0;
        for (k, &mk) in init.iter().enumerate() {
            jump[k + 1] = mk;
        }
        check_nonnegative(&companion, &jump)?;
        Ok(OdeKernel {
            coeffs,
            init,
            companion,
            jump,
        })
    }

    /// `φ(a) = e^{-rate·a}`.
    pub fn exponential(rate: f64) -> Result<Self> {
        Self::scaled_exponential(1.0, rate)
    }

    /// `φ(a) = scale·e^{-rate·a}`.
    pub fn scaled_exponential(scale: f64, rate: f64) -> Result<Self> {
        Self::new(vec![0.0, -rate], vec![scale])
    }

    /// `φ(a) = α²·a·e^{-βa}`, which satisfies `φ'' = -β²φ - 2βφ'`.
    pub fn delayed(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(
            vec![0.0, -beta * beta, -2.0 * beta],
            vec![0.0, alpha * alpha],
        )
    }

    /// `φ(a) = Σ_j w_j e^{-r_j a}` for distinct positive rates.
    ///
    /// The coefficients come from the characteristic polynomial
    /// `Π_j (y + r_j) = y^n - Σ c_k y^k`, the initial stack from
    /// `φ^{(k)}(0) = Σ_j w_j (-r_j)^k`.
    pub fn from_exponential_modes(weights: &[f64], rates: &[f64]) -> Result<Self> {
        if weights.is_empty() || weights.len() != rates.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} rates",
                weights.len(),
                rates.len()
            )));
        }
        if rates.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidParameter(
                "decay rates must be positive and finite".into(),
            ));
        }
        for (i, &ri) in rates.iter().enumerate() {
            for &rj in &rates[..i] {
                if (ri - rj).abs() <= 1e-12 * ri.max(rj) {
                    return Err(Error::DuplicateRate(ri));
                }
            }
        }

        let n = rates.len();
        // poly[k] is the coefficient of y^k in Π (y + r_j).
        let mut poly = vec![1.0];
        for &r in rates {
            let mut next = vec![0.0; poly.len() + 1];
            for (k, &p) in poly.iter().enumerate() {
                next[k] += r * p;
                next[k + 1] += p;
            }
            poly = next;
        }
        let mut coeffs = vec![0.0];
        coeffs.extend(poly[..n].iter().map(|p| -p));

        let init = (0..n as i32)
            .map(|k| {
                weights
                    .iter()
                    .zip(rates)
                    .map(|(w, r)| w * (-r).powi(k))
                    .sum()
            })
            .collect();
        Self::new(coeffs, init)
    }

    /// Sum-of-exponentials stand-in for a power-law kernel with cut-off:
    /// `Σ_{i<M} e^{-a/(τ₀mⁱ)}/(τ₀mⁱ)^{1+ε} - S·e^{-a·m/τ₀}`, with `S` such
    /// that `φ(0) = 0`.
    pub fn power_law(tau0: f64, ratio: f64, exponent: f64, terms: usize) -> Result<Self> {
        if !(tau0 > 0.0 && ratio > 1.0 && exponent > 0.0 && terms >= 1) {
            return Err(Error::InvalidParameter(format!(
                "power law needs tau0 > 0, ratio > 1, exponent > 0, terms >= 1 \
                 (got {tau0}, {ratio}, {exponent}, {terms})"
            )));
        }
        let scales: Vec<f64> = (0..terms as i32).map(|i| tau0 * ratio.powi(i)).collect();
        let mut weights: Vec<f64> = scales.iter().map(|s| s.powf(-(1.0 + exponent))).collect();
        let mut rates: Vec<f64> = scales.iter().map(|s| 1.0 / s).collect();
        let cutoff: f64 = weights.iter().sum();
        weights.push(-cutoff);
        rates.push(ratio / tau0);
        Self::from_exponential_modes(&weights, &rates)
    }

    /// Order `n` of the ODE.
    pub fn order(&self) -> usize {
        self.init.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn init(&self) -> &[f64] {
        &self.init
    }

    /// Constant forcing term `c_{-1}`.
    pub fn forcing(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn companion(&self) -> &Matrix {
        &self.companion
    }

    /// `m = (1, m_0, …, m_{n-1})`, the jump of the Markov state at an event.
    pub fn jump(&self) -> &Vector {
        &self.jump
    }

    /// `(1, φ(a), …, φ^{(n-1)}(a)) = e^{aC} m`.
    pub fn stack(&self, age: f64) -> Result<Vector> {
        if age < 0.0 {
            return Err(Error::InvalidParameter(format!("negative age {age}")));
        }
        let mut s = expm(&(&self.companion * age))? * &self.jump;
        s[0] = 1.0;
        Ok(s)
    }

    pub fn value(&self, age: f64) -> Result<f64> {
        Ok(self.stack(age)?[1])
    }

    /// `φ^{(n)}(a)` read off the right-hand side of the ODE.
    pub fn top_derivative(&self, stack: &Vector) -> f64 {
        self.coeffs
            .iter()
            .zip(stack.iter())
            .map(|(c, s)| c * s)
            .sum()
    }

    /// Mean number of children per individual, `∫₀^A φ`, by composite
    /// Simpson on a 1e-3 grid, plus a tail estimate and a divergence flag.
    pub fn branching_ratio(&self, horizon: f64) -> Result<BranchingRatio> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "branching-ratio horizon must be positive, got {horizon}"
            )));
        }
        let n_steps = {
            let n = (horizon / CHECK_STEP).ceil() as usize;
            n + n % 2
        };
        let step = horizon / n_steps as f64;
        let grid = component_on_grid(&self.companion, &self.jump, horizon, step)?;
        let values: Vec<f64> = grid.iter().map(|(_, s)| s[1]).collect();
        let integral = {
            let mut sum = values[0] + values[n_steps];
            for (i, v) in values.iter().enumerate().take(n_steps).skip(1) {
                sum += if i % 2 == 1 { 4.0 } else { 2.0 } * v;
            }
            sum * step / 3.0
        };

        let dominant_rate = homogeneous_eigenvalues(&self.companion)
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
        let possibly_divergent = dominant_rate >= 0.0 || self.forcing() != 0.0;
        let tail_estimate = if possibly_divergent {
            f64::INFINITY
        } else {
            let decay = -dominant_rate;
            let end = &grid[n_steps].1;
            (1..end.len())
                .map(|k| end[k].abs() / decay.powi(k as i32))
                .sum()
        };
        Ok(BranchingRatio {
            integral,
            tail_estimate,
            possibly_divergent,
            dominant_rate,
        })
    }

    /// Independent quadrature of `φ` on `[0, A]` through [`Self::value`];
    /// slower than [`Self::branching_ratio`], used for cross-checks.
    pub fn integral_by_quadrature(&self, horizon: f64, n: usize) -> Result<f64> {
        let err = std::cell::Cell::new(None);
        let v = quad_simpson(
            |a| match self.value(a) {
                Ok(v) => v,
                Err(e) => {
                    err.set(Some(e));
                    0.0
                }
            },
            0.0,
            horizon,
            n,
        );
        match err.into_inner() {
            Some(e) => Err(e),
            None => Ok(v),
        }
    }
}
