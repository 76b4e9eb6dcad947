use serde::{Deserialize, Serialize};

use hawkes_core::kernels::{InitStack, MarkDistribution, MarkKernel, OdeKernel, TimeFactor};
use hawkes_core::model::{GeneralModel, RateFunction};
use hawkes_core::numerics::Matrix;

use crate::error::CliError;

pub const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub general: Option<GeneralSection>,
    pub run: RunSection,
    #[serde(default)]
    pub query: QuerySection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub powerlaw: Option<PowerLawSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub mu: f64,
    pub kernel: KernelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    /// `φ(a) = e^{-rate·a}`.
    Exponential {
        rate: f64,
    },
    /// `φ(a) = α² a e^{-βa}`.
    Delayed {
        alpha: f64,
        beta: f64,
    },
    Modes {
        weights: Vec<f64>,
        rates: Vec<f64>,
    },
    PowerLaw {
        tau0: f64,
        ratio: f64,
        exponent: f64,
        terms: usize,
    },
    /// Raw coefficients `(c_{-1}, …, c_{n-1})` and `(m_0, …, m_{n-1})`.
    Ode {
        coeffs: Vec<f64>,
        init: Vec<f64>,
    },
}

impl KernelSpec {
    pub fn build(&self) -> hawkes_core::Result<OdeKernel> {
        match self {
            KernelSpec::Exponential { rate } => OdeKernel::exponential(*rate),
            KernelSpec::Delayed { alpha, beta } => OdeKernel::delayed(*alpha, *beta),
            KernelSpec::Modes { weights, rates } => {
                OdeKernel::from_exponential_modes(weights, rates)
            }
            KernelSpec::PowerLaw {
                tau0,
                ratio,
                exponent,
                terms,
            } => OdeKernel::power_law(*tau0, *ratio, *exponent, *terms),
            KernelSpec::Ode { coeffs, init } => OdeKernel::new(coeffs.clone(), init.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralSection {
    pub baseline: RateSpec,
    pub external_rate: RateSpec,
    pub self_kernel: MarkKernelSpec,
    pub external_kernel: MarkKernelSpec,
    /// Exponential mark moments are required up to this level.
    #[serde(default = "default_lambda_max")]
    pub moment_lambda_max: f64,
}

fn default_lambda_max() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateSpec {
    Constant {
        value: f64,
    },
    Linear {
        intercept: f64,
        slope: f64,
    },
    CosSquared {
        base: f64,
        amplitude: f64,
        freq: f64,
    },
}

impl RateSpec {
    fn build(&self) -> RateFunction {
        match *self {
            RateSpec::Constant { value } => RateFunction::Constant(value),
            RateSpec::Linear { intercept, slope } => RateFunction::Linear { intercept, slope },
            RateSpec::CosSquared {
                base,
                amplitude,
                freq,
            } => RateFunction::CosSquared {
                base,
                amplitude,
                freq,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkKernelSpec {
    pub coeffs: Vec<f64>,
    pub init: InitSpec,
    pub marks: MarkSpec,
    #[serde(default)]
    pub time_factor: TimeFactorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    /// `φ^{(k)}(0, x) = slope_k·x`.
    Linear {
        slope: Vec<f64>,
    },
    Constant {
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarkSpec {
    PointMass { value: f64 },
    Uniform { low: f64, high: f64 },
    Exponential { rate: f64 },
    Discrete { values: Vec<f64>, probs: Vec<f64> },
}

impl MarkSpec {
    fn build(&self) -> MarkDistribution {
        match self {
            MarkSpec::PointMass { value } => MarkDistribution::PointMass(*value),
            MarkSpec::Uniform { low, high } => MarkDistribution::Uniform {
                low: *low,
                high: *high,
            },
            MarkSpec::Exponential { rate } => MarkDistribution::Exponential { rate: *rate },
            MarkSpec::Discrete { values, probs } => MarkDistribution::Discrete {
                values: values.clone(),
                probs: probs.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeFactorSpec {
    Constant {
        level: f64,
    },
    CosSquared {
        scale: f64,
        freq: f64,
    },
    /// `v^{(p)} = d_{-1}(t) + Σ d_l(t) v^{(l)}` with polynomial `d`,
    /// lowest degree first.
    Polynomial {
        coeffs: Vec<Vec<f64>>,
        init: Vec<f64>,
    },
}

impl Default for TimeFactorSpec {
    fn default() -> Self {
        TimeFactorSpec::Constant { level: 1.0 }
    }
}

impl TimeFactorSpec {
    fn build(&self, horizon: f64) -> hawkes_core::Result<TimeFactor> {
        match self {
            TimeFactorSpec::Constant { level } => TimeFactor::constant(*level),
            TimeFactorSpec::CosSquared { scale, freq } => TimeFactor::cos_squared(*scale, *freq),
            TimeFactorSpec::Polynomial { coeffs, init } => {
                TimeFactor::polynomial_coefficient(coeffs.clone(), init.clone(), horizon)
            }
        }
    }
}

impl MarkKernelSpec {
    fn build(&self, horizon: f64) -> hawkes_core::Result<MarkKernel> {
        let init = match &self.init {
            InitSpec::Linear { slope } => InitStack::Linear(slope.clone()),
            InitSpec::Constant { values } => InitStack::Constant(values.clone()),
        };
        MarkKernel::new(
            self.coeffs.clone(),
            init,
            self.time_factor.build(horizon)?,
            self.marks.build(),
        )
    }
}

impl GeneralSection {
    pub fn build(&self, horizon: f64) -> hawkes_core::Result<GeneralModel> {
        let model = GeneralModel::new(
            self.baseline.build(),
            self.external_rate.build(),
            self.self_kernel.build(horizon)?,
            self.external_kernel.build(horizon)?,
        );
        model.validate(horizon)?;
        model
            .self_kernel
            .check_moment_condition(self.moment_lambda_max)?;
        model
            .external_kernel
            .check_moment_condition(self.moment_lambda_max)?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub horizon: f64,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    /// Spacing of exported intensity paths.
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    #[serde(default = "default_martingale_paths")]
    pub martingale_paths: usize,
    #[serde(default = "default_z_max")]
    pub z_max: f64,
    /// Event logs written by `simulate`.
    #[serde(default = "default_write_paths")]
    pub write_paths: usize,
}

fn default_paths() -> usize {
    100_000
}

fn default_grid_step() -> f64 {
    0.01
}

fn default_martingale_paths() -> usize {
    10_000
}

fn default_z_max() -> f64 {
    4.0
}

fn default_write_paths() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySection {
    /// Times for the moments table; empty means the horizon only.
    #[serde(default)]
    pub moment_times: Vec<f64>,
    #[serde(default)]
    pub laplace: Vec<LaplaceQuery>,
    #[serde(default)]
    pub general_laplace: Vec<GeneralQuery>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LaplaceQuery {
    /// `E[exp(v·X_T)]`.
    State { v: Vec<f64> },
    /// `E[exp(θ₁N_T + θ₂λ_T)]`.
    Joint { theta1: f64, theta2: f64 },
}

/// Terminal matrices given row by row, shaped like `M¹` and `M²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralQuery {
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix, CliError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Config(
            "ragged matrix in general_laplace query".into(),
        ));
    }
    Ok(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default = "default_bin_width")]
    pub pyramid_bin_width: f64,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_dir(),
            pyramid_bin_width: default_bin_width(),
        }
    }
}

fn default_dir() -> String {
    "out".into()
}

fn default_bin_width() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLawSection {
    pub tau0: f64,
    pub ratio: f64,
    pub exponent: f64,
    pub terms: usize,
    #[serde(default = "default_report_ages")]
    pub max_age: f64,
}

fn default_report_ages() -> f64 {
    20.0
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn check(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if !(self.model.mu >= 0.0 && self.model.mu.is_finite()) {
            return bad(format!(
                "model.mu must be non-negative, got {}",
                self.model.mu
            ));
        }
        if !(self.run.horizon > 0.0 && self.run.horizon.is_finite()) {
            return bad(format!(
                "run.horizon must be positive, got {}",
                self.run.horizon
            ));
        }
        if !(self.run.grid_step > 0.0) {
            return bad(format!(
                "run.grid_step must be positive, got {}",
                self.run.grid_step
            ));
        }
        if !(self.run.z_max > 0.0) {
            return bad(format!(
                "run.z_max must be positive, got {}",
                self.run.z_max
            ));
        }
        if let Some(t) = self
            .query
            .moment_times
            .iter()
            .find(|t| !(**t >= 0.0 && **t <= self.run.horizon))
        {
            return bad(format!("moment time {t} outside [0, {}]", self.run.horizon));
        }
        Ok(())
    }

    pub fn kernel(&self) -> Result<OdeKernel, CliError> {
        self.model.kernel.build().map_err(CliError::from)
    }

    pub fn general_model(&self) -> Result<Option<GeneralModel>, CliError> {
        self.general
            .as_ref()
            .map(|g| g.build(self.run.horizon))
            .transpose()
            .map_err(CliError::from)
    }
}
