//! Deterministic numeric kernel shared by every other module: matrix
//! exponential, fixed-step RK4 in either time direction, composite Simpson
//! quadrature and central finite differences.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Operator 1-norm (largest absolute column sum).
pub fn norm1(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|col| col.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

const EXPM_TARGET_NORM: f64 = 0.5;
const EXPM_TAYLOR_TERMS: usize = 24;

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
///
/// The argument is scaled so that its 1-norm is at most 0.5, where 24 Taylor
/// terms are far below double precision, then squared back.
pub fn expm(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expm needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = m.nrows();
    let norm = norm1(m);
    if !norm.is_finite() {
        return Err(Error::Overflow);
    }
    let squarings = if norm > EXPM_TARGET_NORM {
        (norm / EXPM_TARGET_NORM).log2().ceil() as i32
    } else {
        0
    };
    let scaled = m / 2f64.powi(squarings);

    let mut result = Matrix::identity(n, n);
    let mut term = Matrix::identity(n, n);
    for k in 1..=EXPM_TAYLOR_TERMS {
        term = &term * &scaled / k as f64;
        result += &term;
        if norm1(&term) <= f64::EPSILON * 1e-4 * norm1(&result) {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    if result.iter().all(|v| v.is_finite()) {
        Ok(result)
    } else {
        Err(Error::Overflow)
    }
}

/// `∫₀^dt e^{sM} x ds`, read off the exponential of the augmented matrix
/// `[[M, x], [0, 0]]`.
pub fn expm_integral(m: &Matrix, x: &Vector, dt: f64) -> Result<Vector> {
    let n = m.nrows();
    if x.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} against {n}x{n} matrix",
            x.len()
        )));
    }
    let mut aug = Matrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(m * dt));
    for i in 0..n {
        aug[(i, n)] = x[i] * dt;
    }
    let e = expm(&aug)?;
    Ok(e.view((0, n), (n, 1)).column(0).into_owned())
}

/// Right-hand side `dy/dt = f(t, y)` of a first-order system.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

/// A [`VectorField`] backed by a closure.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

pub fn field<F>(dim: usize, f: F) -> FnField<F>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    FnField { dim, f }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        (self.f)(t, y, dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathMeta {
    pub solver: &'static str,
    pub step: f64,
    pub direction: Direction,
}

/// Time grid plus solution values of an integrated ODE system.
///
/// The grid is always stored in increasing order, whichever way the system
/// was integrated. When the solution blew up the path is truncated at the
/// last finite state and `blowup` holds the time integration stopped at.
#[derive(Debug, Clone)]
pub struct OdePath {
    grid: Vec<f64>,
    values: Vec<Vec<f64>>,
    meta: PathMeta,
    blowup: Option<f64>,
}

impl OdePath {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn meta(&self) -> &PathMeta {
        &self.meta
    }

    pub fn blowup(&self) -> Option<f64> {
        self.blowup
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// State at the point integration started from.
    pub fn initial(&self) -> &[f64] {
        match self.meta.direction {
            Direction::Forward => &self.values[0],
            Direction::Backward => &self.values[self.values.len() - 1],
        }
    }

    /// State at the point integration reached (the target time unless the
    /// solution blew up).
    pub fn terminal(&self) -> &[f64] {
        match self.meta.direction {
            Direction::Forward => &self.values[self.values.len() - 1],
            Direction::Backward => &self.values[0],
        }
    }

    /// Index of the grid point nearest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let idx = self.grid.partition_point(|&g| g < t);
        if idx == 0 {
            0
        } else if idx == self.grid.len() {
            idx - 1
        } else if (self.grid[idx] - t).abs() < (t - self.grid[idx - 1]).abs() {
            idx
        } else {
            idx - 1
        }
    }

    /// Cubic Hermite interpolation between grid points, with slopes taken
    /// from the vector field that produced the path. Times outside the grid
    /// are clamped to its ends.
    pub fn interpolate<F: VectorField + ?Sized>(&self, field: &F, t: f64) -> Vec<f64> {
        let last = self.grid.len() - 1;
        if t <= self.grid[0] {
            return self.values[0].clone();
        }
        if t >= self.grid[last] {
            return self.values[last].clone();
        }
        let i = self.grid.partition_point(|&g| g <= t) - 1;
        let (t0, t1) = (self.grid[i], self.grid[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let dim = self.dim();
        let mut f0 = vec![0.0; dim];
        let mut f1 = vec![0.0; dim];
        field.eval(t0, &self.values[i], &mut f0);
        field.eval(t1, &self.values[i + 1], &mut f1);
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        (0..dim)
            .map(|k| {
                h00 * self.values[i][k]
                    + h10 * h * f0[k]
                    + h01 * self.values[i + 1][k]
                    + h11 * h * f1[k]
            })
            .collect()
    }

    /// CSV with a `t` column followed by one column per component.
    pub fn write_csv<W: std::io::Write>(&self, out: W, names: &[String]) -> Result<()> {
        if names.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} column names for {} components",
                names.len(),
                self.dim()
            )));
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        for (t, row) in self.grid.iter().zip(&self.values) {
            let mut rec = vec![fmt_f64(*t)];
            rec.extend(row.iter().map(|v| fmt_f64(*v)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Classical fixed-step fourth-order Runge–Kutta.
#[derive(Debug, Clone, Copy)]
pub struct Rk4 {
    pub step: f64,
    /// States whose max-abs component exceeds this are treated as blow-up.
    pub max_norm: f64,
}

impl Rk4 {
    pub fn new(step: f64) -> Self {
        assert!(step > 0.0, "RK4 step must be positive");
        Rk4 {
            step,
            max_norm: f64::INFINITY,
        }
    }

    pub fn with_max_norm(mut self, max_norm: f64) -> Self {
        self.max_norm = max_norm;
        self
    }

    /// Integrates from `t0` to `t1`; `t1 < t0` integrates backward. The last
    /// step is shortened to land exactly on `t1`.
    pub fn integrate<F: VectorField + ?Sized>(
        &self,
        field: &F,
        y0: &[f64],
        t0: f64,
        t1: f64,
    ) -> OdePath {
        let dim = field.dim();
        assert_eq!(y0.len(), dim, "initial state has the wrong dimension");
        let direction = if t1 >= t0 {
            Direction::Forward
        } else {
            Direction::Backward
        };
        let span = (t1 - t0).abs();
        let sign = if t1 >= t0 { 1.0 } else { -1.0 };
        let n_steps = ((span / self.step) - 1e-9).ceil().max(0.0) as usize;

        let mut grid = Vec::with_capacity(n_steps + 1);
        let mut values = Vec::with_capacity(n_steps + 1);
        grid.push(t0);
        values.push(y0.to_vec());

        let mut k1 = vec![0.0; dim];
        let mut k2 = vec![0.0; dim];
        let mut k3 = vec![0.0; dim];
        let mut k4 = vec![0.0; dim];
        let mut tmp = vec![0.0; dim];
        let mut y = y0.to_vec();
        let mut blowup = None;

        for i in 0..n_steps {
            let t = t0 + sign * self.step * i as f64;
            let t_next = if i + 1 == n_steps {
                t1
            } else {
                t0 + sign * self.step * (i + 1) as f64
            };
            let h = t_next - t;

            field.eval(t, &y, &mut k1);
            for j in 0..dim {
                tmp[j] = y[j] + 0.5 * h * k1[j];
            }
            field.eval(t + 0.5 * h, &tmp, &mut k2);
            for j in 0..dim {
                tmp[j] = y[j] + 0.5 * h * k2[j];
            }
            field.eval(t + 0.5 * h, &tmp, &mut k3);
            for j in 0..dim {
                tmp[j] = y[j] + h * k3[j];
            }
            field.eval(t_next, &tmp, &mut k4);
            for j in 0..dim {
                tmp[j] = y[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }

            let bad = tmp
                .iter()
                .any(|v| !v.is_finite() || v.abs() > self.max_norm);
            if bad {
                blowup = Some(t_next);
                break;
            }
            std::mem::swap(&mut y, &mut tmp);
            grid.push(t_next);
            values.push(y.clone());
        }

        if direction == Direction::Backward {
            grid.reverse();
            values.reverse();
        }
        OdePath {
            grid,
            values,
            meta: PathMeta {
                solver: "rk4",
                step: self.step,
                direction,
            },
            blowup,
        }
    }
}

/// [`Rk4::integrate`] with no blow-up threshold beyond non-finite values.
pub fn rk4<F: VectorField + ?Sized>(field: &F, y0: &[f64], t0: f64, t1: f64, h: f64) -> OdePath {
    Rk4::new(h).integrate(field, y0, t0, t1)
}

/// Composite Simpson rule on `n` subintervals (rounded up to even).
pub fn quad_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = if n < 2 { 2 } else { n + n % 2 };
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + h * i as f64);
    }
    sum * h / 3.0
}

/// Central finite difference of order 1 or 2.
pub fn fd_derivative<F: Fn(f64) -> f64>(f: F, x: f64, h: f64, order: u32) -> f64 {
    match order {
        1 => (f(x + h) - f(x - h)) / (2.0 * h),
        2 => (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h),
        _ => panic!("fd_derivative supports orders 1 and 2, got {order}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn constant_field_stays_put() {
        let f = field(1, |_, _, dy: &mut [f64]| dy[0] = 0.0);
        let path = rk4(&f, &[3.0], 0.0, 2.0, 0.1);
        assert!(path.values().iter().all(|v| v[0] == 3.0));
        assert_eq!(*path.grid().last().unwrap(), 2.0);
    }

    #[test]
    fn exponential_growth_forward() {
        let f = field(1, |_, y: &[f64], dy: &mut [f64]| dy[0] = y[0]);
        let path = rk4(&f, &[1.0], 0.0, 1.0, 1e-3);
        assert!(close(path.terminal()[0], std::f64::consts::E, 1e-10));
    }

    #[test]
    fn exponential_decay_backward() {
        let f = field(1, |_, y: &[f64], dy: &mut [f64]| dy[0] = -y[0]);
        let path = rk4(&f, &[(-1.0f64).exp()], 1.0, 0.0, 1e-3);
        assert_eq!(path.meta().direction, Direction::Backward);
        assert_eq!(path.grid()[0], 0.0);
        assert!(close(path.terminal()[0], 1.0, 1e-10));
        assert!(path.grid().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn final_partial_step_lands_on_target() {
        let f = field(1, |_, _, dy: &mut [f64]| dy[0] = 1.0);
        let path = rk4(&f, &[0.0], 0.0, 0.25, 0.1);
        assert_eq!(path.len(), 4);
        assert_eq!(*path.grid().last().unwrap(), 0.25);
        assert!(close(path.terminal()[0], 0.25, 1e-15));
    }

    #[test]
    fn rk4_observed_order() {
        let f = field(1, |_, y: &[f64], dy: &mut [f64]| dy[0] = y[0]);
        let err = |h: f64| (rk4(&f, &[1.0], 0.0, 1.0, h).terminal()[0] - std::f64::consts::E).abs();
        let order = (err(0.1) / err(0.05)).log2();
        assert!(order >= 3.9, "observed order {order}");
    }

    #[test]
    fn blowup_truncates_path() {
        let f = field(1, |_, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0]);
        let path = Rk4::new(1e-3)
            .with_max_norm(1e8)
            .integrate(&f, &[1.0], 0.0, 2.0);
        let t = path.blowup().expect("y' = y^2 from 1 blows up at t = 1");
        assert!(t > 0.99 && t < 1.01);
        assert!(path.values().iter().all(|v| v[0].abs() <= 1e8));
    }

    #[test]
    fn hermite_interpolation_is_fourth_order_accurate() {
        let f = field(1, |_, y: &[f64], dy: &mut [f64]| dy[0] = -2.0 * y[0]);
        let path = rk4(&f, &[1.0], 0.0, 1.0, 1e-2);
        let v = path.interpolate(&f, 0.4567)[0];
        assert!(close(v, (-2.0f64 * 0.4567).exp(), 1e-8));
    }

    #[test]
    fn expm_basics() {
        let z = Matrix::zeros(3, 3);
        assert_eq!(expm(&z).unwrap(), Matrix::identity(3, 3));
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![-2.0]));
        assert!(close(expm(&d).unwrap()[(0, 0)], (-2.0f64).exp(), 1e-15));
    }

    #[test]
    fn expm_large_norm_matches_diagonal() {
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![-50.0, 10.0, 0.3]));
        let e = expm(&d).unwrap();
        for (i, x) in [-50.0f64, 10.0, 0.3].iter().enumerate() {
            let exact = x.exp();
            assert!(((e[(i, i)] - exact) / exact).abs() < 1e-12);
        }
    }

    #[test]
    fn expm_rotation() {
        let theta = 2.5;
        let m = Matrix::from_row_slice(2, 2, &[0.0, -theta, theta, 0.0]);
        let e = expm(&m).unwrap();
        assert!(close(e[(0, 0)], theta.cos(), 1e-13));
        assert!(close(e[(1, 0)], theta.sin(), 1e-13));
    }

    #[test]
    fn expm_rejects_non_square() {
        assert!(matches!(
            expm(&Matrix::zeros(2, 3)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn expm_integral_of_decay() {
        let m = Matrix::from_element(1, 1, -2.0);
        let x = Vector::from_element(1, 1.0);
        let v = expm_integral(&m, &x, 3.0).unwrap()[0];
        assert!(close(v, (1.0 - (-6.0f64).exp()) / 2.0, 1e-14));
    }

    #[test]
    fn simpson_exponential_integral() {
        let v = quad_simpson(|a| (-2.0 * a).exp(), 0.0, 50.0, 100_000);
        assert!(close(v, 0.5, 1e-10));
    }

    #[test]
    fn simpson_is_exact_on_cubics() {
        let v = quad_simpson(|x| x * x * x - x, 0.0, 2.0, 2);
        assert!(close(v, 2.0, 1e-14));
    }

    #[test]
    fn finite_differences() {
        assert!(close(
            fd_derivative(f64::sin, 0.3, 1e-5, 1),
            0.3f64.cos(),
            1e-9
        ));
        assert!(close(fd_derivative(f64::exp, 0.0, 1e-4, 2), 1.0, 1e-6));
    }
}
