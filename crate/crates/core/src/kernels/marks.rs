use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::kernels::ode::{check_nonnegative, companion, OdeKernel};
use crate::kernels::time_factor::TimeFactor;
use crate::numerics::{expm, Matrix, Vector};

/// Law of the iid marks attached to events.
#[derive(Debug, Clone, PartialEq)]
pub enum MarkDistribution {
    PointMass(f64),
    Uniform { low: f64, high: f64 },
    Exponential { rate: f64 },
    Discrete { values: Vec<f64>, probs: Vec<f64> },
}

impl MarkDistribution {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match self {
            MarkDistribution::PointMass(x) => {
                if !(*x >= 0.0 && x.is_finite()) {
                    return bad(format!("point-mass mark must be non-negative, got {x}"));
                }
            }
            MarkDistribution::Uniform { low, high } => {
                if !(*low >= 0.0 && high > low && high.is_finite()) {
                    return bad(format!(
                        "uniform marks need 0 <= low < high, got [{low}, {high}]"
                    ));
                }
            }
            MarkDistribution::Exponential { rate } => {
                if !(*rate > 0.0 && rate.is_finite()) {
                    return bad(format!(
                        "exponential mark rate must be positive, got {rate}"
                    ));
                }
            }
            MarkDistribution::Discrete { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "{} mark values for {} probabilities",
                        values.len(),
                        probs.len()
                    )));
                }
                if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return bad("discrete mark values must be non-negative".into());
                }
                if probs.iter().any(|p| !(*p >= 0.0)) {
                    return bad("discrete mark probabilities must be non-negative".into());
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return bad(format!("discrete mark probabilities sum to {total}"));
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            MarkDistribution::PointMass(x) => *x,
            MarkDistribution::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            MarkDistribution::Exponential { rate } => rng.sample::<f64, _>(Exp1) / rate,
            MarkDistribution::Discrete { values, probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                *values.last().expect("validated non-empty")
            }
        }
    }

    pub fn in_support(&self, x: f64) -> bool {
        match self {
            MarkDistribution::PointMass(v) => x == *v,
            MarkDistribution::Uniform { low, high } => x >= *low && x <= *high,
            MarkDistribution::Exponential { .. } => x >= 0.0 && x.is_finite(),
            MarkDistribution::Discrete { values, .. } => values.contains(&x),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            MarkDistribution::PointMass(x) => *x,
            MarkDistribution::Uniform { low, high } => 0.5 * (low + high),
            MarkDistribution::Exponential { rate } => 1.0 / rate,
            MarkDistribution::Discrete { values, probs } => {
                values.iter().zip(probs).map(|(v, p)| v * p).sum()
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            MarkDistribution::PointMass(_) => 0.0,
            MarkDistribution::Uniform { low, high } => (high - low).powi(2) / 12.0,
            MarkDistribution::Exponential { rate } => 1.0 / (rate * rate),
            MarkDistribution::Discrete { values, probs } => {
                let m = self.mean();
                values
                    .iter()
                    .zip(probs)
                    .map(|(v, p)| p * (v - m).powi(2))
                    .sum()
            }
        }
    }

    /// `E[e^{γX}]`, or `None` where it diverges.
    pub fn mgf(&self, gamma: f64) -> Option<f64> {
        match self {
            MarkDistribution::PointMass(x) => Some((gamma * x).exp()),
            MarkDistribution::Uniform { low, high } => {
                let z = gamma * (high - low);
                let ratio = if z.abs() < 1e-8 {
                    1.0 + 0.5 * z
                } else {
                    z.exp_m1() / z
                };
                Some((gamma * low).exp() * ratio)
            }
            MarkDistribution::Exponential { rate } => {
                if gamma < *rate {
                    Some(rate / (rate - gamma))
                } else {
                    None
                }
            }
            MarkDistribution::Discrete { values, probs } => Some(
                values
                    .iter()
                    .zip(probs)
                    .map(|(v, p)| p * (gamma * v).exp())
                    .sum(),
            ),
        }
    }
}

/// Mark dependence of the initial derivative stack `φ^{(k)}(0, x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitStack {
    /// `φ^{(k)}(0, x) = s_k·x`.
    Linear(Vec<f64>),
    /// `φ^{(k)}(0, x) = m_k`, mark-free.
    Constant(Vec<f64>),
}

impl InitStack {
    pub fn order(&self) -> usize {
        match self {
            InitStack::Linear(s) | InitStack::Constant(s) => s.len(),
        }
    }

    /// `(slope, intercept)` of the affine map `x ↦ (1, φ^{(0)}(0,x), …)`.
    pub fn affine_parts(&self) -> (Vector, Vector) {
        let n = self.order();
        let mut slope = Vector::zeros(n + 1);
        let mut intercept = Vector::zeros(n + 1);
        intercept[0] = 1.0;
        match self {
            InitStack::Linear(s) => {
                for (k, sk) in s.iter().enumerate() {
                    slope[k + 1] = *sk;
                }
            }
            InitStack::Constant(m) => {
                for (k, mk) in m.iter().enumerate() {
                    intercept[k + 1] = *mk;
                }
            }
        }
        (slope, intercept)
    }
}

/// Separable, mark-dependent birth rate `Φ_t(a, x) = v(t)·φ(a, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkKernel {
    coeffs: Vec<f64>,
    companion: Matrix,
    init: InitStack,
    slope: Vector,
    intercept: Vector,
    time: TimeFactor,
    marks: MarkDistribution,
}

impl MarkKernel {
    pub fn new(
        coeffs: Vec<f64>,
        init: InitStack,
        time: TimeFactor,
        marks: MarkDistribution,
    ) -> Result<Self> {
        let n = init.order();
        if n == 0 || coeffs.len() != n + 1 {
            return Err(Error::DimensionMismatch(format!(
                "order-n mark kernel needs n+1 coefficients and n initial entries, got {} and {}",
                coeffs.len(),
                n
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter(
                "kernel coefficients must be finite".into(),
            ));
        }
        marks.validate()?;
        let companion = companion(&coeffs);
        let (slope, intercept) = init.affine_parts();
        // φ(·, x) = slope-part·x + intercept-part with x ≥ 0, so it suffices
        // that both parts are non-negative in age.
        check_nonnegative(&companion, &intercept)?;
        check_nonnegative(&companion, &slope)?;
        Ok(Self::assemble(coeffs, init, time, marks))
    }

    fn assemble(
        coeffs: Vec<f64>,
        init: InitStack,
        time: TimeFactor,
        marks: MarkDistribution,
    ) -> Self {
        let companion = companion(&coeffs);
        let (slope, intercept) = init.affine_parts();
        MarkKernel {
            coeffs,
            companion,
            init,
            slope,
            intercept,
            time,
            marks,
        }
    }

    /// The zero rate, `φ ≡ 0`.
    pub fn zero() -> Self {
        Self::assemble(
            vec![0.0, -1.0],
            InitStack::Constant(vec![0.0]),
            TimeFactor::constant(1.0).expect("valid"),
            MarkDistribution::PointMass(1.0),
        )
    }

    /// Mark-free, time-homogeneous lift of an [`OdeKernel`].
    pub fn from_kernel(kernel: &OdeKernel) -> Self {
        Self::assemble(
            kernel.coeffs().to_vec(),
            InitStack::Constant(kernel.init().to_vec()),
            TimeFactor::constant(1.0).expect("valid"),
            MarkDistribution::PointMass(1.0),
        )
    }

    /// `Φ_t(a, x) = x·e^{-δa}`.
    pub fn dassios_zhao(delta: f64, marks: MarkDistribution) -> Result<Self> {
        Self::new(
            vec![0.0, -delta],
            InitStack::Linear(vec![1.0]),
            TimeFactor::constant(1.0)?,
            marks,
        )
    }

    pub fn with_time_factor(mut self, time: TimeFactor) -> Self {
        self.time = time;
        self
    }

    /// Age order `n`.
    pub fn order(&self) -> usize {
        self.init.order()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn companion(&self) -> &Matrix {
        &self.companion
    }

    pub fn init(&self) -> &InitStack {
        &self.init
    }

    pub fn time_factor(&self) -> &TimeFactor {
        &self.time
    }

    pub fn marks(&self) -> &MarkDistribution {
        &self.marks
    }

    /// `F(0, x) = (1, φ^{(0)}(0, x), …, φ^{(n-1)}(0, x))`.
    pub fn initial_stack(&self, x: f64) -> Vector {
        &self.intercept + &self.slope * x
    }

    pub fn affine_parts(&self) -> (&Vector, &Vector) {
        (&self.slope, &self.intercept)
    }

    /// `F(a, x) = e^{aC} F(0, x)`.
    pub fn stack(&self, age: f64, x: f64) -> Result<Vector> {
        let mut s = expm(&(&self.companion * age))? * self.initial_stack(x);
        s[0] = 1.0;
        Ok(s)
    }

    /// `Φ_t(a, x)`.
    pub fn rate(&self, t: f64, age: f64, x: f64) -> Result<f64> {
        Ok(self.time.value(t) * self.stack(age, x)?[1])
    }

    /// `W(t, x) = F(0, x)·V(t)ᵀ` with `V = (1, v, …, v^{(p-1)})`.
    pub fn jump_matrix(&self, t: f64, x: f64) -> Matrix {
        let v = Vector::from_vec(self.time.stack(t));
        self.initial_stack(x) * v.transpose()
    }

    /// `E_x[exp(Tr(A·W(t, x)))]` in closed form: the exponent is affine in
    /// the mark, so this is `e^β·E[e^{γX}]`. `None` where the moment diverges.
    pub fn exp_trace_moment(&self, a: &Matrix, t: f64) -> Option<f64> {
        let v = self.time.stack(t);
        let (beta, gamma) = self.trace_parts(a, &v);
        self.marks.mgf(gamma).map(|m| beta.exp() * m)
    }

    /// `(β, γ)` with `Tr(A·W(t, x)) = β + γx`, for a precomputed stack `v`.
    pub fn trace_parts(&self, a: &Matrix, v: &[f64]) -> (f64, f64) {
        let n1 = self.order() + 1;
        let mut beta = 0.0;
        let mut gamma = 0.0;
        for (l, vl) in v.iter().enumerate() {
            for k in 0..n1 {
                let w = a[(l, k)] * vl;
                beta += w * self.intercept[k];
                gamma += w * self.slope[k];
            }
        }
        (beta, gamma)
    }

    /// Checks `∫ exp(λ·max_k φ^{(k)}(0, x)) G(dx) < ∞` for all
    /// `0 < λ ≤ lambda_max`.
    pub fn check_moment_condition(&self, lambda_max: f64) -> Result<()> {
        let InitStack::Linear(s) = &self.init else {
            return Ok(());
        };
        let top = s.iter().copied().fold(0.0f64, f64::max);
        if top == 0.0 {
            return Ok(());
        }
        match self.marks.mgf(lambda_max * top) {
            Some(v) if v.is_finite() => Ok(()),
            _ => Err(Error::MomentCondition(format!(
                "E[exp({lambda_max}·{top}·X)] is infinite for marks {:?}",
                self.marks
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn check_mean(d: &MarkDistribution) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let samples: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        assert!(samples.iter().all(|&x| d.in_support(x)));
        let mean = samples.iter().sum::<f64>() / n as f64;
        let se = (d.variance() / n as f64).sqrt();
        assert!(
            (mean - d.mean()).abs() <= 4.0 * se + 1e-9,
            "{d:?}: {mean} vs {}",
            d.mean()
        );
    }

    #[test]
    fn sample_means() {
        check_mean(&MarkDistribution::PointMass(0.7));
        check_mean(&MarkDistribution::Uniform {
            low: 1.0,
            high: 3.0,
        });
        check_mean(&MarkDistribution::Exponential { rate: 2.0 });
        check_mean(&MarkDistribution::Discrete {
            values: vec![0.0, 1.0, 5.0],
            probs: vec![0.2, 0.5, 0.3],
        });
    }

    #[test]
    fn validation() {
        assert!(MarkDistribution::Uniform {
            low: 2.0,
            high: 1.0
        }
        .validate()
        .is_err());
        assert!(MarkDistribution::Exponential { rate: 0.0 }
            .validate()
            .is_err());
        assert!(MarkDistribution::Discrete {
            values: vec![1.0],
            probs: vec![0.5]
        }
        .validate()
        .is_err());
        assert!(MarkDistribution::PointMass(-1.0).validate().is_err());
    }

    #[test]
    fn mgf_values() {
        let e = MarkDistribution::Exponential { rate: 2.0 };
        assert_eq!(e.mgf(1.0), Some(2.0));
        assert_eq!(e.mgf(2.0), None);
        let u = MarkDistribution::Uniform {
            low: 0.0,
            high: 1.0,
        };
        assert!((u.mgf(1.0).unwrap() - (1.0f64.exp() - 1.0)).abs() < 1e-15);
        assert!((u.mgf(1e-12).unwrap() - 1.0).abs() < 1e-11);
    }

    #[test]
    fn dassios_zhao_rate() {
        let k = MarkKernel::dassios_zhao(1.0, MarkDistribution::Exponential { rate: 2.0 }).unwrap();
        let r = k.rate(3.0, 0.5, 2.0).unwrap();
        assert!((r - 2.0 * (-0.5f64).exp()).abs() < 1e-14);
        assert!(k.check_moment_condition(1.0).is_ok());
        assert!(k.check_moment_condition(2.0).is_err());
    }

    #[test]
    fn zero_kernel_is_zero() {
        let k = MarkKernel::zero();
        assert_eq!(k.rate(1.0, 0.3, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn exp_trace_moment_matches_direct_average() {
        let k = MarkKernel::new(
            vec![0.0, -1.0, -2.0],
            InitStack::Linear(vec![0.0, 1.5]),
            TimeFactor::cos_squared(1.0, 1.0).unwrap(),
            MarkDistribution::Discrete {
                values: vec![0.5, 2.0],
                probs: vec![0.25, 0.75],
            },
        )
        .unwrap();
        let a = Matrix::from_fn(3, 3, |i, j| -0.1 * (i + 2 * j) as f64);
        let t = 0.4;
        let direct: f64 = [(0.5, 0.25), (2.0, 0.75)]
            .iter()
            .map(|(x, p)| p * (&a * k.jump_matrix(t, *x)).trace().exp())
            .sum();
        assert!((k.exp_trace_moment(&a, t).unwrap() - direct).abs() < 1e-14);
    }

    #[test]
    fn negative_linear_slope_rejected() {
        assert!(MarkKernel::new(
            vec![0.0, -1.0],
            InitStack::Linear(vec![-1.0]),
            TimeFactor::constant(1.0).unwrap(),
            MarkDistribution::PointMass(1.0),
        )
        .is_err());
    }
}
