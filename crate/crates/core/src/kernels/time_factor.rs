use crate::error::{Error, Result};
use crate::kernels::ode::companion;
use crate::numerics::{field, Matrix, Rk4};

const TABLE_STEP: f64 = 1e-3;

/// Time modulation `v(t)` of a separable birth rate `v(t)·φ(a, x)`, closed
/// under `v^{(p)} = d_{-1}(t) + Σ_l d_l(t) v^{(l)}`.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeFactorKind {
    /// `v ≡ level`, order 1 with `d = (0, 0)`.
    Constant { level: f64 },
    /// `v(t) = scale·cos²(freq·t)`, order 2 with `v'' = 2·freq²·scale - 4·freq²·v`.
    CosSquared { scale: f64, freq: f64 },
    /// `d_l(t)` given as polynomials in `t` (ascending coefficients), one per
    /// `l = -1, …, p-1`, with `init = (v(0), …, v^{(p-1)}(0))`.
    PolynomialCoefficient {
        coeffs: Vec<Vec<f64>>,
        init: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeFactor {
    kind: TimeFactorKind,
    table: Option<Table>,
}

/// RK4 solution of a polynomial-coefficient factor on a fixed grid.
#[derive(Debug, Clone, PartialEq)]
struct Table {
    step: f64,
    values: Vec<Vec<f64>>,
}

fn poly_eval(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

fn poly_rhs(coeffs: &[Vec<f64>], t: f64, y: &[f64], dy: &mut [f64]) {
    let p = y.len();
    dy[..p - 1].copy_from_slice(&y[1..]);
    let mut top = poly_eval(&coeffs[0], t);
    for (l, yl) in y.iter().enumerate() {
        top += poly_eval(&coeffs[l + 1], t) * yl;
    }
    dy[p - 1] = top;
}

impl TimeFactor {
    pub fn constant(level: f64) -> Result<Self> {
        if !(level >= 0.0 && level.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "constant time factor must be non-negative, got {level}"
            )));
        }
        Ok(TimeFactor {
            kind: TimeFactorKind::Constant { level },
            table: None,
        })
    }

    pub fn cos_squared(scale: f64, freq: f64) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite() && freq.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "cos-squared factor needs scale >= 0 and finite frequency, got {scale}, {freq}"
            )));
        }
        Ok(TimeFactor {
            kind: TimeFactorKind::CosSquared { scale, freq },
            table: None,
        })
    }

    /// Tabulates the solution on `[0, horizon]`; evaluation beyond the
    /// horizon keeps integrating from the last grid point.
    pub fn polynomial_coefficient(
        coeffs: Vec<Vec<f64>>,
        init: Vec<f64>,
        horizon: f64,
    ) -> Result<Self> {
        let p = init.len();
        if p == 0 || coeffs.len() != p + 1 {
            return Err(Error::DimensionMismatch(format!(
                "order-p time factor needs p+1 coefficient polynomials and p initial values, \
                 got {} and {}",
                coeffs.len(),
                p
            )));
        }
        if !(horizon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "time-factor horizon must be positive, got {horizon}"
            )));
        }
        if coeffs.iter().flatten().chain(&init).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "time-factor coefficients must be finite".into(),
            ));
        }
        let n_steps = (horizon / TABLE_STEP).ceil() as usize;
        let step = horizon / n_steps as f64;
        let rhs = field(p, |t, y: &[f64], dy: &mut [f64]| {
            poly_rhs(&coeffs, t, y, dy)
        });
        let path = Rk4::new(step).integrate(&rhs, &init, 0.0, horizon);
        if path.blowup().is_some() || path.len() != n_steps + 1 {
            return Err(Error::BlowUp {
                time: path.blowup().unwrap_or(horizon),
            });
        }
        let values = path.values().to_vec();
        for (i, row) in values.iter().enumerate() {
            if row[0] < -1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "time factor negative ({:e}) at t = {}",
                    row[0],
                    i as f64 * step
                )));
            }
        }
        Ok(TimeFactor {
            kind: TimeFactorKind::PolynomialCoefficient { coeffs, init },
            table: Some(Table { step, values }),
        })
    }

    pub fn kind(&self) -> &TimeFactorKind {
        &self.kind
    }

    /// ODE order `p`.
    pub fn order(&self) -> usize {
        match &self.kind {
            TimeFactorKind::Constant { .. } => 1,
            TimeFactorKind::CosSquared { .. } => 2,
            TimeFactorKind::PolynomialCoefficient { init, .. } => init.len(),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, TimeFactorKind::Constant { .. })
    }

    /// `(1, v(t), v'(t), …, v^{(p-1)}(t))`.
    pub fn stack(&self, t: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.order() + 1);
        out.push(1.0);
        match &self.kind {
            TimeFactorKind::Constant { level } => out.push(*level),
            TimeFactorKind::CosSquared { scale, freq } => {
                let c = (freq * t).cos();
                out.push(scale * c * c);
                out.push(-scale * freq * (2.0 * freq * t).sin());
            }
            TimeFactorKind::PolynomialCoefficient { coeffs, .. } => {
                let table = self.table.as_ref().expect("polynomial factor is tabulated");
                let last = table.values.len() - 1;
                let i = ((t / table.step).floor().max(0.0) as usize).min(last);
                let t0 = i as f64 * table.step;
                let y0 = &table.values[i];
                if t == t0 {
                    out.extend_from_slice(y0);
                } else {
                    let p = y0.len();
                    let rhs = field(p, |s, y: &[f64], dy: &mut [f64]| poly_rhs(coeffs, s, y, dy));
                    let path = Rk4::new(table.step).integrate(&rhs, y0, t0, t);
                    out.extend_from_slice(path.terminal());
                }
            }
        }
        out
    }

    pub fn value(&self, t: f64) -> f64 {
        self.stack(t)[1]
    }

    /// `(d_{-1}(t), d_0(t), …, d_{p-1}(t))`.
    pub fn coefficients(&self, t: f64) -> Vec<f64> {
        match &self.kind {
            TimeFactorKind::Constant { .. } => vec![0.0, 0.0],
            TimeFactorKind::CosSquared { scale, freq } => {
                let w = 2.0 * freq * freq;
                vec![w * scale, -2.0 * w, 0.0]
            }
            TimeFactorKind::PolynomialCoefficient { coeffs, .. } => {
                coeffs.iter().map(|c| poly_eval(c, t)).collect()
            }
        }
    }

    /// `D_t = C(d(t))`, so that the stack satisfies `V' = D_t V`.
    pub fn generator(&self, t: f64) -> Matrix {
        companion(&self.coefficients(t))
    }

    /// Upper bounds on `sup_{[0, horizon]} |v^{(l)}|` for `l = 0, …, p-1`.
    ///
    /// Exact for the analytic families. For tabulated factors the grid
    /// maximum is padded by two steps' worth of the next derivative.
    pub fn sup_bounds(&self, horizon: f64) -> Result<Vec<f64>> {
        match &self.kind {
            TimeFactorKind::Constant { level } => Ok(vec![level.abs()]),
            TimeFactorKind::CosSquared { scale, freq } => {
                Ok(vec![scale.abs(), (scale * freq).abs()])
            }
            TimeFactorKind::PolynomialCoefficient { coeffs, .. } => {
                let table = self.table.as_ref().expect("polynomial factor is tabulated");
                let covered = table.step * (table.values.len() - 1) as f64;
                if horizon > covered * (1.0 + 1e-12) {
                    return Err(Error::InvalidParameter(format!(
                        "time factor tabulated up to {covered}, bound requested up to {horizon}"
                    )));
                }
                let p = table.values[0].len();
                let mut sup = vec![0.0f64; p + 1];
                let mut dy = vec![0.0; p];
                for (i, row) in table.values.iter().enumerate() {
                    for (l, v) in row.iter().enumerate() {
                        sup[l] = sup[l].max(v.abs());
                    }
                    poly_rhs(coeffs, i as f64 * table.step, row, &mut dy);
                    sup[p] = sup[p].max(dy[p - 1].abs());
                }
                Ok((0..p)
                    .map(|l| sup[l] + 2.0 * table.step * sup[l + 1])
                    .collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::fd_derivative;

    #[test]
    fn constant_stack() {
        let f = TimeFactor::constant(2.5).unwrap();
        assert_eq!(f.order(), 1);
        assert_eq!(f.stack(3.0), vec![1.0, 2.5]);
        assert_eq!(f.generator(1.0), Matrix::zeros(2, 2));
        assert!(TimeFactor::constant(-1.0).is_err());
    }

    #[test]
    fn cos_squared_residual() {
        let alpha = 1.3;
        let f = TimeFactor::cos_squared(1.0, alpha).unwrap();
        for i in 0..=1000 {
            let t = i as f64 * 0.01;
            let v = |s: f64| f.value(s);
            let second = fd_derivative(v, t, 1e-4, 2);
            let closed = -2.0 * alpha * alpha * (2.0 * alpha * t).cos();
            assert!((closed - 2.0 * alpha * alpha * (1.0 - 2.0 * v(t))).abs() < 1e-10);
            assert!((second - closed).abs() < 1e-5);
            let s = f.stack(t);
            let top: f64 = f.coefficients(t).iter().zip(&s).map(|(d, y)| d * y).sum();
            assert!((top - closed).abs() < 1e-10);
        }
    }

    #[test]
    fn polynomial_reproduces_cos_squared() {
        let alpha = 0.7;
        let w = 2.0 * alpha * alpha;
        let f = TimeFactor::polynomial_coefficient(
            vec![vec![w], vec![-2.0 * w], vec![0.0]],
            vec![1.0, 0.0],
            5.0,
        )
        .unwrap();
        let g = TimeFactor::cos_squared(1.0, alpha).unwrap();
        for t in [0.0, 0.123_4, 1.0, 2.5, 4.999, 5.0, 6.0] {
            let (a, b) = (f.stack(t), g.stack(t));
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-10, "t = {t}, k = {k}");
            }
        }
        let sup = f.sup_bounds(5.0).unwrap();
        assert!(sup[0] >= 1.0 && sup[0] < 1.01);
        assert!(sup[1] >= alpha && sup[1] < alpha + 0.01);
        assert!(f.sup_bounds(6.0).is_err());
    }

    #[test]
    fn polynomial_with_time_varying_coefficient() {
        // v' = t·v, v(0) = 1  =>  v = e^{t²/2}
        let f = TimeFactor::polynomial_coefficient(vec![vec![0.0], vec![0.0, 1.0]], vec![1.0], 2.0)
            .unwrap();
        for t in [0.5, 1.0, 1.7, 2.0] {
            assert!((f.value(t) - (t * t / 2.0f64).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn negative_polynomial_factor_rejected() {
        // v' = -1, v(0) = 1 crosses zero at t = 1
        assert!(
            TimeFactor::polynomial_coefficient(vec![vec![-1.0], vec![0.0]], vec![1.0], 2.0)
                .is_err()
        );
    }
}
