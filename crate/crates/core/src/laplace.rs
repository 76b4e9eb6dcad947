//! Laplace transforms from backward Riccati-type ODEs, and the exponential
//! martingales they come from.

use std::cell::Cell;

use crate::error::{Error, Result};
use crate::kernels::{MarkKernel, OdeKernel};
use crate::model::GeneralModel;
use crate::numerics::{expm, field, quad_simpson, Matrix, OdePath, Rk4, Vector, VectorField};
use crate::simulate::EventLog;

/// Backward RK4 step.
pub const RICCATI_STEP: f64 = 1e-3;
/// States beyond this max-abs value count as blow-up.
pub const BLOWUP_NORM: f64 = 1e8;
/// Simpson sub-intervals per unit time on event-free segments.
const SEGMENT_DENSITY: f64 = 200.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `A' = -C̄A - (e^{A·m} - 1)J`, plus `I' = e^{A·m} - 1` so that
/// `I(0) = ∫₀^T (1 - e^{A_s·m}) ds` when `I(T) = 0`.
fn vector_rhs(c: &Matrix, m: &[f64], y: &[f64], dy: &mut [f64]) {
    let n1 = m.len();
    let a = &y[..n1];
    let e = dot(a, m).exp_m1();
    for i in 0..n1 {
        let mut s = 0.0;
        for k in 0..n1 {
            s += c[(k, i)] * a[k];
        }
        dy[i] = -s;
    }
    dy[1] -= e;
    dy[n1] = e;
}

/// Solution of the vector Riccati equation on `[0, T]`.
#[derive(Debug, Clone)]
pub struct VectorRiccati {
    companion: Matrix,
    jump: Vec<f64>,
    path: OdePath,
    terminal: Vec<f64>,
}

impl VectorRiccati {
    fn field(&self) -> impl VectorField + '_ {
        field(self.jump.len() + 1, move |_, y: &[f64], dy: &mut [f64]| {
            vector_rhs(&self.companion, &self.jump, y, dy)
        })
    }

    /// Columns `A_{-1}, …, A_{n-1}, I`.
    pub fn path(&self) -> &OdePath {
        &self.path
    }

    pub fn terminal(&self) -> &[f64] {
        &self.terminal
    }

    pub fn blowup(&self) -> Option<f64> {
        self.path.blowup()
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.jump.len()).map(|i| format!("A{i}")).collect();
        names.push("I".into());
        names
    }

    /// `A_t` by Hermite interpolation along the path.
    pub fn a_at(&self, t: f64) -> Vector {
        let y = self.path.interpolate(&self.field(), t);
        Vector::from_column_slice(&y[..self.jump.len()])
    }

    /// `A'_t` from the right-hand side at the interpolated state.
    pub fn a_dot_at(&self, t: f64) -> Vector {
        let f = self.field();
        let y = self.path.interpolate(&f, t);
        let mut dy = vec![0.0; y.len()];
        f.eval(t, &y, &mut dy);
        Vector::from_column_slice(&dy[..self.jump.len()])
    }

    /// `∫₀^T (1 - e^{A_s·m}) ds`.
    pub fn integral(&self) -> f64 {
        self.path.values()[0][self.jump.len()]
    }
}

pub fn solve_a_ode(kernel: &OdeKernel, v: &[f64], horizon: f64) -> Result<VectorRiccati> {
    solve_a_ode_with_step(kernel, v, horizon, RICCATI_STEP)
}

pub fn solve_a_ode_with_step(
    kernel: &OdeKernel,
    v: &[f64],
    horizon: f64,
    step: f64,
) -> Result<VectorRiccati> {
    let n1 = kernel.order() + 1;
    if v.len() != n1 {
        return Err(Error::DimensionMismatch(format!(
            "terminal vector has {} entries, state has {n1}",
            v.len()
        )));
    }
    let companion = kernel.companion().clone();
    let jump: Vec<f64> = kernel.jump().iter().copied().collect();
    let mut y0 = v.to_vec();
    y0.push(0.0);
    let rhs = field(n1 + 1, |_, y: &[f64], dy: &mut [f64]| {
        vector_rhs(&companion, &jump, y, dy)
    });
    let path = Rk4::new(step)
        .with_max_norm(BLOWUP_NORM)
        .integrate(&rhs, &y0, horizon, 0.0);
    Ok(VectorRiccati {
        companion,
        jump,
        path,
        terminal: v.to_vec(),
    })
}

/// `E[exp(v·X_T)] = exp(-μ ∫₀^T (1 - e^{A_s·m}) ds)`.
pub fn laplace_x(kernel: &OdeKernel, mu: f64, v: &[f64], horizon: f64) -> Result<f64> {
    let sol = solve_a_ode(kernel, v, horizon)?;
    if let Some(time) = sol.blowup() {
        return Err(Error::BlowUp { time });
    }
    Ok((-mu * sol.integral()).exp())
}

/// Max-abs difference at `t = 0` between the solutions at `h` and `h/2`.
pub fn richardson_gap(kernel: &OdeKernel, v: &[f64], horizon: f64, step: f64) -> Result<f64> {
    let coarse = solve_a_ode_with_step(kernel, v, horizon, step)?;
    let fine = solve_a_ode_with_step(kernel, v, horizon, step / 2.0)?;
    if let Some(time) = coarse.blowup().or(fine.blowup()) {
        return Err(Error::BlowUp { time });
    }
    Ok(coarse.path.values()[0]
        .iter()
        .zip(&fine.path.values()[0])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// `b_k = (-1)^k (m_{n-1-k} - Σ_{l=k+1}^{n-1} m_{n-1-l} c_{n-l+k})`, with
/// `coeffs = (c_{-1}, …, c_{n-1})` and `init = (m_0, …, m_{n-1})`.
pub fn b_coefficients(coeffs: &[f64], init: &[f64]) -> Vec<f64> {
    let n = init.len();
    let c = |j: usize| coeffs[j + 1];
    (0..n)
        .map(|k| {
            let mut s = init[n - 1 - k];
            for l in k + 1..n {
                s -= init[n - 1 - l] * c(n - l + k);
            }
            if k % 2 == 0 {
                s
            } else {
                -s
            }
        })
        .collect()
}

fn sign(k: usize) -> f64 {
    if k % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Backward solution `(G, G', …, G^{(n)})` of the scalar order-`n+1`
/// equation, from `G^{(k)}(T) = 0` for `k < n` and
/// `G^{(n)}(T) = (-1)^{n-1} θ₂`.
pub fn solve_g_ode(kernel: &OdeKernel, theta1: f64, theta2: f64, horizon: f64) -> OdePath {
    let n = kernel.order();
    let coeffs = kernel.coeffs().to_vec();
    let b = b_coefficients(kernel.coeffs(), kernel.init());
    let rhs = field(n + 1, move |_, y: &[f64], dy: &mut [f64]| {
        dy[..n].copy_from_slice(&y[1..]);
        let mut expo = theta1 - coeffs[0] * y[0];
        let mut lin = 0.0;
        for k in 0..n {
            expo += b[k] * y[k + 1];
            lin += sign(k) * coeffs[k + 1] * y[k + 1];
        }
        dy[n] = sign(n - 1) * (1.0 - expo.exp() - lin);
    });
    let mut y_t = vec![0.0; n + 1];
    y_t[n] = sign(n - 1) * theta2;
    Rk4::new(RICCATI_STEP)
        .with_max_norm(BLOWUP_NORM)
        .integrate(&rhs, &y_t, horizon, 0.0)
}

/// `E[exp(θ₁N_T + θ₂λ_T)]` through the scalar `G` equation.
pub fn joint_laplace_n_lambda(
    kernel: &OdeKernel,
    mu: f64,
    theta1: f64,
    theta2: f64,
    horizon: f64,
) -> Result<f64> {
    let path = solve_g_ode(kernel, theta1, theta2, horizon);
    if let Some(time) = path.blowup() {
        return Err(Error::BlowUp { time });
    }
    let n = kernel.order();
    let g0 = &path.values()[0];
    let mut s = sign(n) * g0[n];
    for k in 0..n {
        s += sign(k + 1) * kernel.coeffs()[k + 1] * g0[k];
    }
    Ok((-mu * s).exp())
}

/// Layout of the joint state `(vec A², vec A¹, I)`, column-major blocks.
#[derive(Debug, Clone, Copy)]
struct MatrixLayout {
    a2: (usize, usize),
    a1: (usize, usize),
}

impl MatrixLayout {
    fn new(model: &GeneralModel) -> Self {
        let shape = |k: &MarkKernel| (k.time_factor().order() + 1, k.order() + 1);
        MatrixLayout {
            a2: shape(&model.self_kernel),
            a1: shape(&model.external_kernel),
        }
    }

    fn len2(&self) -> usize {
        self.a2.0 * self.a2.1
    }

    fn len1(&self) -> usize {
        self.a1.0 * self.a1.1
    }

    fn dim(&self) -> usize {
        self.len2() + self.len1() + 1
    }

    fn split(&self, y: &[f64]) -> (Matrix, Matrix) {
        let l2 = self.len2();
        (
            Matrix::from_column_slice(self.a2.0, self.a2.1, &y[..l2]),
            Matrix::from_column_slice(self.a1.0, self.a1.1, &y[l2..l2 + self.len1()]),
        )
    }
}

/// Right-hand side of the coupled matrix equations, or the reason the mark
/// moment diverged.
fn matrix_rhs(
    model: &GeneralModel,
    layout: MatrixLayout,
    t: f64,
    y: &[f64],
    dy: &mut [f64],
) -> std::result::Result<(), String> {
    let (a2, a1) = layout.split(y);
    let g = model
        .self_kernel
        .exp_trace_moment(&a2, t)
        .ok_or_else(|| format!("E_G[exp(Tr(A2 W2))] diverges at t = {t}"))?;
    let h = model
        .external_kernel
        .exp_trace_moment(&a1, t)
        .ok_or_else(|| format!("E_H[exp(Tr(A1 W1))] diverges at t = {t}"))?;

    let drift = |a: &Matrix, k: &MarkKernel| {
        let d = k.time_factor().generator(t);
        let mut out = -(a * k.companion()) - d.transpose() * a;
        out[(1, 1)] += 1.0 - g;
        out
    };
    let l2 = layout.len2();
    let l1 = layout.len1();
    dy[..l2].copy_from_slice(drift(&a2, &model.self_kernel).as_slice());
    dy[l2..l2 + l1].copy_from_slice(drift(&a1, &model.external_kernel).as_slice());
    dy[l2 + l1] = -(model.external_rate.value(t) * (h - 1.0) + model.baseline.value(t) * (g - 1.0));
    Ok(())
}

/// Solution `(A^{(1)}, A^{(2)})` of the matrix Riccati system on `[0, T]`.
#[derive(Debug, Clone)]
pub struct MatrixRiccati {
    model: GeneralModel,
    layout: MatrixLayout,
    path: OdePath,
}

impl MatrixRiccati {
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        if matrix_rhs(&self.model, self.layout, t, y, dy).is_err() {
            dy.fill(f64::NAN);
        }
    }

    fn state_at(&self, t: f64) -> Vec<f64> {
        let f = field(self.layout.dim(), |t, y: &[f64], dy: &mut [f64]| {
            self.eval(t, y, dy)
        });
        self.path.interpolate(&f, t)
    }

    /// Columns `A2[r,c]` (column-major), then `A1[r,c]`, then `I`.
    pub fn path(&self) -> &OdePath {
        &self.path
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.layout.dim());
        for (tag, (rows, cols)) in [("A2", self.layout.a2), ("A1", self.layout.a1)] {
            for c in 0..cols {
                for r in 0..rows {
                    names.push(format!("{tag}_{r}_{c}"));
                }
            }
        }
        names.push("I".into());
        names
    }

    /// `(A^{(2)}_t, A^{(1)}_t)`.
    pub fn a_at(&self, t: f64) -> (Matrix, Matrix) {
        self.layout.split(&self.state_at(t))
    }

    /// `(Ȧ^{(2)}_t, Ȧ^{(1)}_t)`.
    pub fn a_dot_at(&self, t: f64) -> (Matrix, Matrix) {
        let y = self.state_at(t);
        let mut dy = vec![0.0; y.len()];
        self.eval(t, &y, &mut dy);
        self.layout.split(&dy)
    }

    /// `∫₀^T ρ(E_H[e^{Tr(A¹W¹)}] - 1) + μ(E_G[e^{Tr(A²W²)}] - 1) ds`.
    pub fn integral(&self) -> f64 {
        self.path.values()[0][self.layout.dim() - 1]
    }
}

/// Integrates the coupled system backward from `A¹_T = ū`, `A²_T = v̄`,
/// where `u` and `v` have the shapes of `M¹` and `M²`.
pub fn solve_matrix_riccati(
    model: &GeneralModel,
    u: &Matrix,
    v: &Matrix,
    horizon: f64,
) -> Result<MatrixRiccati> {
    model.validate(horizon)?;
    let layout = MatrixLayout::new(model);
    let (p1, n1) = layout.a2;
    let (q1, m1) = layout.a1;
    if v.shape() != (n1, p1) || u.shape() != (m1, q1) {
        return Err(Error::DimensionMismatch(format!(
            "terminal matrices {:?} and {:?}, expected {:?} and {:?}",
            u.shape(),
            v.shape(),
            (m1, q1),
            (n1, p1)
        )));
    }
    let mut y_t: Vec<f64> = v.transpose().as_slice().to_vec();
    y_t.extend_from_slice(u.transpose().as_slice());
    y_t.push(0.0);

    let failure = Cell::new(None);
    let rhs = field(layout.dim(), |t, y: &[f64], dy: &mut [f64]| {
        if let Err(reason) = matrix_rhs(model, layout, t, y, dy) {
            if failure.get().is_none() {
                failure.set(Some(t));
            }
            let _ = reason;
            dy.fill(f64::NAN);
        }
    });
    let path = Rk4::new(RICCATI_STEP)
        .with_max_norm(BLOWUP_NORM)
        .integrate(&rhs, &y_t, horizon, 0.0);
    if let Some(time) = failure.get() {
        return Err(Error::QuadratureFailure {
            time,
            reason: "exponential mark moment diverges".into(),
        });
    }
    Ok(MatrixRiccati {
        model: model.clone(),
        layout,
        path,
    })
}

/// `E[exp(Tr(ūM¹_T + v̄M²_T))]`.
pub fn laplace_general(model: &GeneralModel, u: &Matrix, v: &Matrix, horizon: f64) -> Result<f64> {
    let sol = solve_matrix_riccati(model, u, v, horizon)?;
    if let Some(time) = sol.path.blowup() {
        return Err(Error::BlowUp { time });
    }
    Ok(sol.integral().exp())
}

/// Event-free segments `[a, b]` of `[0, t]` cut at the given times.
fn segments(times: &[f64], t: f64) -> Vec<(f64, f64)> {
    let mut cuts: Vec<f64> = times.iter().copied().filter(|&s| s < t).collect();
    cuts.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(cuts.len() + 1);
    let mut a = 0.0;
    for c in cuts.into_iter().chain(std::iter::once(t)) {
        if c > a {
            out.push((a, c));
        }
        a = c;
    }
    out
}

fn simpson_nodes(a: f64, b: f64) -> usize {
    ((b - a) * SEGMENT_DENSITY).ceil().max(2.0) as usize
}

/// Sum of `e^{(s - T_n)C} F(0, X_n)` over events before `s`.
struct StackWalker<'a> {
    kernel: &'a MarkKernel,
    log: &'a EventLog,
}

impl StackWalker<'_> {
    /// Value at the left end of each segment start, right-continuous.
    fn at(&self, s: f64) -> Result<Vector> {
        let mut out = Vector::zeros(self.kernel.order() + 1);
        for e in &self.log.events()[..self.log.count_until(s)] {
            let age = s - e.time;
            out += if age == 0.0 {
                self.kernel.initial_stack(e.mark)
            } else {
                expm(&(self.kernel.companion() * age))? * self.kernel.initial_stack(e.mark)
            };
        }
        Ok(out)
    }
}

/// The exponential martingale of the standard model evaluated at `t`:
/// `exp{A_t·X_t - ∫₀^t (A_s·CX_s + A'_s·X_s) ds - ∫₀^t (e^{A_s·m} - 1)λ_s ds}`.
pub fn martingale_standard(
    kernel: &OdeKernel,
    mu: f64,
    riccati: &VectorRiccati,
    log: &EventLog,
    t: f64,
) -> Result<f64> {
    let c = kernel.companion();
    let m = kernel.jump();
    let times: Vec<f64> = log.times().collect();
    let mut integral = 0.0;
    for (a, b) in segments(&times, t) {
        let start = markov_right_limit(kernel, log, a)?;
        let err = Cell::new(None);
        let f = |s: f64| {
            let x = match expm(&(c * (s - a))) {
                Ok(e) => e * &start,
                Err(e) => {
                    err.set(Some(e));
                    return 0.0;
                }
            };
            let av = riccati.a_at(s);
            let adot = riccati.a_dot_at(s);
            let lambda = mu + x[1];
            av.dot(&(c * &x)) + adot.dot(&x) + av.dot(m).exp_m1() * lambda
        };
        integral += quad_simpson(f, a, b, simpson_nodes(a, b));
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
    }
    let x_t = markov_right_limit(kernel, log, t)?;
    Ok((riccati.a_at(t).dot(&x_t) - integral).exp())
}

fn markov_right_limit(kernel: &OdeKernel, log: &EventLog, s: f64) -> Result<Vector> {
    let mut x = Vector::zeros(kernel.order() + 1);
    for e in &log.events()[..log.count_until(s)] {
        x += kernel.stack(s - e.time)?;
    }
    Ok(x)
}

/// The exponential martingale of the general model evaluated at `t`, with
/// the trace and compensator terms integrated on event-free segments.
pub fn martingale_general(
    model: &GeneralModel,
    riccati: &MatrixRiccati,
    external: &EventLog,
    hawkes: &EventLog,
    t: f64,
) -> Result<f64> {
    let walkers = [
        StackWalker {
            kernel: &model.self_kernel,
            log: hawkes,
        },
        StackWalker {
            kernel: &model.external_kernel,
            log: external,
        },
    ];
    let times: Vec<f64> = hawkes.times().chain(external.times()).collect();
    let mut integral = 0.0;
    for (a, b) in segments(&times, t) {
        let starts = [walkers[0].at(a)?, walkers[1].at(a)?];
        let err = Cell::new(None);
        let f = |s: f64| -> f64 {
            let (a2, a1) = riccati.a_at(s);
            let (d2, d1) = riccati.a_dot_at(s);
            let mut total = 0.0;
            let mut lambda = model.baseline.value(s);
            for ((w, start), (a_mat, a_dot)) in
                walkers.iter().zip(&starts).zip([(&a2, &d2), (&a1, &d1)])
            {
                let k = w.kernel;
                let stack = match expm(&(k.companion() * (s - a))) {
                    Ok(e) => e * start,
                    Err(e) => {
                        err.set(Some(e));
                        return 0.0;
                    }
                };
                let v = Vector::from_vec(k.time_factor().stack(s));
                let mm = &stack * v.transpose();
                let d = k.time_factor().generator(s);
                let drift = k.companion() * &mm + &mm * d.transpose();
                total += (a_mat * drift).trace() + (a_dot * &mm).trace();
                lambda += mm[(1, 1)];
            }
            let g = model
                .self_kernel
                .exp_trace_moment(&a2, s)
                .unwrap_or(f64::NAN);
            let h = model
                .external_kernel
                .exp_trace_moment(&a1, s)
                .unwrap_or(f64::NAN);
            total + model.external_rate.value(s) * (h - 1.0) + lambda * (g - 1.0)
        };
        integral += quad_simpson(f, a, b, simpson_nodes(a, b));
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
    }
    let (a2, a1) = riccati.a_at(t);
    let mut trace = 0.0;
    for (w, a_mat) in walkers.iter().zip([&a2, &a1]) {
        let v = Vector::from_vec(w.kernel.time_factor().stack(t));
        let mm = w.at(t)? * v.transpose();
        trace += (a_mat * mm).trace();
    }
    Ok((trace - integral).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::MarkDistribution;
    use crate::model::RateFunction;

    #[test]
    fn zero_terminal_is_fixed_point() {
        let k = OdeKernel::delayed(1.0, 1.0).unwrap();
        let sol = solve_a_ode(&k, &[0.0, 0.0, 0.0], 2.0).unwrap();
        assert!(sol.path().values().iter().flatten().all(|v| *v == 0.0));
        assert_eq!(laplace_x(&k, 1.0, &[0.0, 0.0, 0.0], 2.0).unwrap(), 1.0);
        assert_eq!(laplace_x(&k, 0.0, &[-1.0, -0.5, 0.0], 2.0).unwrap(), 1.0);
        assert_eq!(joint_laplace_n_lambda(&k, 1.0, 0.0, 0.0, 2.0).unwrap(), 1.0);
    }

    #[test]
    fn richardson_halving() {
        let k = OdeKernel::exponential(2.0).unwrap();
        let gap = richardson_gap(&k, &[-0.5, -0.2], 1.0, RICCATI_STEP).unwrap();
        assert!(gap <= 1e-9, "{gap}");
    }

    #[test]
    fn poisson_transform() {
        // φ ≡ 0: E[e^{θN_T}] = exp(μT(e^θ - 1)).
        let k = OdeKernel::new(vec![0.0, -1.0], vec![0.0]).unwrap();
        let got = laplace_x(&k, 1.5, &[-0.5, 0.0], 2.0).unwrap();
        let expected = (1.5 * 2.0 * ((-0.5f64).exp() - 1.0)).exp();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn b_coefficients_small_orders() {
        assert_eq!(b_coefficients(&[0.0, -2.0], &[1.0]), vec![1.0]);
        // n = 2: b_0 = m_1 - m_0 c_1, b_1 = -m_0.
        let b = b_coefficients(&[0.0, -1.0, -2.0], &[0.3, 1.0]);
        assert!((b[0] - (1.0 - 0.3 * -2.0)).abs() < 1e-15);
        assert!((b[1] + 0.3).abs() < 1e-15);
    }

    /// Rebuilds `A_k` from `A_{n-1} = G'` by `A_{k-1} = -c_k A_{n-1} - A_k'`
    /// and checks `A·m = A_{-1} + Σ b_k G^{(k+1)}` term by term.
    #[test]
    fn b_coefficients_match_recursion() {
        let kernels = [
            OdeKernel::exponential(2.0).unwrap(),
            OdeKernel::delayed(1.3, 0.8).unwrap(),
            OdeKernel::from_exponential_modes(&[1.0, 0.5, 0.2], &[1.0, 2.0, 4.0]).unwrap(),
            OdeKernel::power_law(1.0, 2.0, 0.5, 3).unwrap(),
        ];
        for k in kernels {
            let n = k.order();
            let c = &k.coeffs()[1..];
            let m = k.init();
            let b = b_coefficients(k.coeffs(), k.init());
            // Each A_k is a linear form in (G', …, G^{(n)}); row j ↔ G^{(j+1)}.
            let mut forms = vec![vec![0.0; n]; n];
            forms[n - 1][0] = 1.0;
            for kk in (1..n).rev() {
                let mut next = vec![0.0; n];
                for (j, coef) in forms[kk].iter().enumerate() {
                    if j + 1 < n {
                        next[j + 1] -= coef;
                    }
                }
                next[0] -= c[kk];
                forms[kk - 1] = next;
            }
            for j in 0..n {
                let via_recursion: f64 = (0..n).map(|kk| m[kk] * forms[kk][j]).sum();
                assert!(
                    (via_recursion - b[j]).abs() < 1e-9 * (1.0 + b[j].abs()),
                    "n = {n}, j = {j}: {via_recursion} vs {}",
                    b[j]
                );
            }
        }
    }

    #[test]
    fn scalar_and_vector_formulations_agree() {
        let kernels = [
            OdeKernel::exponential(2.0).unwrap(),
            OdeKernel::exponential(0.7).unwrap(),
            OdeKernel::delayed(1.0, 1.0).unwrap(),
            OdeKernel::delayed(0.8, 1.5).unwrap(),
        ];
        for k in &kernels {
            for &(t1, t2) in &[(-0.5f64, -0.2f64), (-1.0, 0.0), (0.0, -0.7), (-0.2, -1.0)] {
                let mu: f64 = 1.3;
                let mut v = vec![0.0; k.order() + 1];
                v[0] = t1;
                v[1] = t2;
                let vec_form = (t2 * mu).exp() * laplace_x(k, mu, &v, 1.0).unwrap();
                let g_form = joint_laplace_n_lambda(k, mu, t1, t2, 1.0).unwrap();
                assert!((vec_form - g_form).abs() < 1e-7, "{vec_form} vs {g_form}");
            }
        }
    }

    #[test]
    fn degenerates_to_vector_equation() {
        let k = OdeKernel::delayed(1.1, 0.9).unwrap();
        let model = GeneralModel::standard(&k, 1.0);
        let terminal = [-0.4, -0.3, 0.1];
        let mut v = Matrix::zeros(3, 2);
        for (i, x) in terminal.iter().enumerate() {
            v[(i, 0)] = *x;
        }
        let u = Matrix::zeros(2, 2);
        let mat = solve_matrix_riccati(&model, &u, &v, 2.0).unwrap();
        let vecr = solve_a_ode(&k, &terminal, 2.0).unwrap();
        for &t in &[0.0, 0.5, 1.3, 2.0] {
            let (a2, _) = mat.a_at(t);
            let combined = a2.row(0) + a2.row(1);
            let direct = vecr.a_at(t);
            for i in 0..3 {
                assert!((combined[i] - direct[i]).abs() < 1e-8);
            }
        }
        let lg = laplace_general(&model, &u, &v, 2.0).unwrap();
        let lx = laplace_x(&k, 1.0, &terminal, 2.0).unwrap();
        assert!((lg - lx).abs() < 1e-8);
    }

    #[test]
    fn general_trivial_cases() {
        let model = GeneralModel::dassios_zhao(
            1.0,
            1.0,
            1.0,
            MarkDistribution::Exponential { rate: 2.0 },
            MarkDistribution::Exponential { rate: 2.0 },
        )
        .unwrap();
        let z = Matrix::zeros(2, 2);
        assert_eq!(laplace_general(&model, &z, &z, 1.0).unwrap(), 1.0);
        let mut silent = model.clone();
        silent.baseline = RateFunction::Constant(0.0);
        silent.external_rate = RateFunction::Constant(0.0);
        let mut v = z.clone();
        v[(0, 0)] = -0.3;
        assert_eq!(laplace_general(&silent, &v, &v, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn divergent_mark_moment_reported() {
        let model = GeneralModel::dassios_zhao(
            1.0,
            1.0,
            0.0,
            MarkDistribution::Exponential { rate: 2.0 },
            MarkDistribution::Exponential { rate: 2.0 },
        )
        .unwrap();
        let mut v = Matrix::zeros(2, 2);
        v[(1, 0)] = 3.0;
        let err = laplace_general(&model, &Matrix::zeros(2, 2), &v, 1.0).unwrap_err();
        assert!(matches!(err, Error::QuadratureFailure { .. }), "{err:?}");
    }

    #[test]
    fn segments_split_at_events() {
        assert_eq!(
            segments(&[0.5, 0.2], 1.0),
            vec![(0.0, 0.2), (0.2, 0.5), (0.5, 1.0)]
        );
        assert_eq!(segments(&[], 1.0), vec![(0.0, 1.0)]);
        assert_eq!(segments(&[1.5], 1.0), vec![(0.0, 1.0)]);
    }
}
