use crate::error::{Error, Result};
use crate::kernels::{MarkDistribution, MarkKernel, OdeKernel};

/// Deterministic, non-negative rate `μ(t)` or `ρ(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateFunction {
    Constant(f64),
    /// `intercept + slope·t`.
    Linear {
        intercept: f64,
        slope: f64,
    },
    /// `base + amplitude·cos²(freq·t)`.
    CosSquared {
        base: f64,
        amplitude: f64,
        freq: f64,
    },
}

impl RateFunction {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            RateFunction::Constant(c) => c,
            RateFunction::Linear { intercept, slope } => intercept + slope * t,
            RateFunction::CosSquared {
                base,
                amplitude,
                freq,
            } => {
                let c = (freq * t).cos();
                base + amplitude * c * c
            }
        }
    }

    /// `sup_{[a, b]} r`.
    pub fn sup_on(&self, a: f64, b: f64) -> f64 {
        match *self {
            RateFunction::Constant(c) => c,
            RateFunction::Linear { .. } => self.value(a).max(self.value(b)),
            RateFunction::CosSquared {
                base, amplitude, ..
            } => base + amplitude.max(0.0),
        }
    }

    /// `∫_a^b r(t) dt`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        match *self {
            RateFunction::Constant(c) => c * (b - a),
            RateFunction::Linear { intercept, slope } => {
                intercept * (b - a) + 0.5 * slope * (b * b - a * a)
            }
            RateFunction::CosSquared {
                base,
                amplitude,
                freq,
            } => {
                let prim = |t: f64| {
                    if freq == 0.0 {
                        amplitude * t
                    } else {
                        amplitude * (0.5 * t + (2.0 * freq * t).sin() / (4.0 * freq))
                    }
                };
                base * (b - a) + prim(b) - prim(a)
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            RateFunction::Constant(c) => c == 0.0,
            RateFunction::Linear { intercept, slope } => intercept == 0.0 && slope == 0.0,
            RateFunction::CosSquared {
                base, amplitude, ..
            } => base == 0.0 && amplitude == 0.0,
        }
    }

    /// Non-negativity and finiteness on `[0, horizon]`.
    pub fn validate(&self, horizon: f64) -> Result<()> {
        let ok = match *self {
            RateFunction::Constant(c) => c >= 0.0 && c.is_finite(),
            RateFunction::Linear { intercept, slope } => {
                intercept.is_finite()
                    && slope.is_finite()
                    && intercept >= 0.0
                    && intercept + slope * horizon >= 0.0
            }
            RateFunction::CosSquared {
                base,
                amplitude,
                freq,
            } => base >= 0.0 && amplitude >= 0.0 && (base + amplitude + freq).is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "rate {self:?} is not non-negative on [0, {horizon}]"
            )))
        }
    }
}

/// Hawkes process with general immigrants: baseline `μ(t)`, an independent
/// external stream of rate `ρ(t)` with marks `H`, self-excitation `Φ` with
/// marks `G`, and external excitation `Ψ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralModel {
    pub baseline: RateFunction,
    pub external_rate: RateFunction,
    pub self_kernel: MarkKernel,
    pub external_kernel: MarkKernel,
}

impl GeneralModel {
    pub fn new(
        baseline: RateFunction,
        external_rate: RateFunction,
        self_kernel: MarkKernel,
        external_kernel: MarkKernel,
    ) -> Self {
        GeneralModel {
            baseline,
            external_rate,
            self_kernel,
            external_kernel,
        }
    }

    /// Standard Hawkes process seen as a general model with no external
    /// stream.
    pub fn standard(kernel: &OdeKernel, mu: f64) -> Self {
        Self::new(
            RateFunction::Constant(mu),
            RateFunction::Constant(0.0),
            MarkKernel::from_kernel(kernel),
            MarkKernel::zero(),
        )
    }

    /// `Φ_t(a, x) = Ψ_t(a, x) = x·e^{-δa}` with constant rates.
    pub fn dassios_zhao(
        delta: f64,
        mu: f64,
        rho: f64,
        self_marks: MarkDistribution,
        external_marks: MarkDistribution,
    ) -> Result<Self> {
        Ok(Self::new(
            RateFunction::Constant(mu),
            RateFunction::Constant(rho),
            MarkKernel::dassios_zhao(delta, self_marks)?,
            MarkKernel::dassios_zhao(delta, external_marks)?,
        ))
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        self.baseline.validate(horizon)?;
        self.external_rate.validate(horizon)?;
        for k in [&self.self_kernel, &self.external_kernel] {
            k.time_factor().sup_bounds(horizon)?;
        }
        Ok(())
    }
}
