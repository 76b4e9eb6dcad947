//! First and second moment ODEs of the Markov state, and closed forms for
//! the exponential and delayed kernels.

use crate::kernels::OdeKernel;
use crate::numerics::{field, Matrix, OdePath, Rk4, Vector};

/// Default forward step for the moment systems.
pub const MOMENT_STEP: f64 = 1e-3;

/// `u' = μm + Au` and `v' = vĀ + Av + μ(mm̄ + um̄ + mū) + (Ju)mm̄` with
/// `A = C + mJ`, `J` selecting component 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSystem {
    a: Matrix,
    m: Vector,
    mu: f64,
}

impl MomentSystem {
    pub fn new(kernel: &OdeKernel, mu: f64) -> Self {
        let size = kernel.order() + 1;
        let mut j = Matrix::zeros(1, size);
        j[(0, 1)] = 1.0;
        let a = kernel.companion() + kernel.jump() * j;
        MomentSystem {
            a,
            m: kernel.jump().clone(),
            mu,
        }
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn size(&self) -> usize {
        self.m.len()
    }

    fn mean_rhs(&self, u: &[f64], du: &mut [f64]) {
        let n1 = self.size();
        for i in 0..n1 {
            let mut s = self.mu * self.m[i];
            for j in 0..n1 {
                s += self.a[(i, j)] * u[j];
            }
            du[i] = s;
        }
    }

    fn joint_rhs(&self, y: &[f64], dy: &mut [f64]) {
        let n1 = self.size();
        let (u, v) = y.split_at(n1);
        let (du, dv) = dy.split_at_mut(n1);
        self.mean_rhs(u, du);
        let ju = u[1];
        for c in 0..n1 {
            for r in 0..n1 {
                let mut s = 0.0;
                for k in 0..n1 {
                    s += v[k * n1 + r] * self.a[(c, k)] + self.a[(r, k)] * v[c * n1 + k];
                }
                let (mr, mc) = (self.m[r], self.m[c]);
                s += self.mu * (mr * mc + u[r] * mc + mr * u[c]) + ju * mr * mc;
                dv[c * n1 + r] = s;
            }
        }
    }
}

/// `u(t) = E[X_t]` on `[0, horizon]` from `u(0) = 0`.
pub fn mean_ode(kernel: &OdeKernel, mu: f64, horizon: f64) -> OdePath {
    mean_ode_with_step(kernel, mu, horizon, MOMENT_STEP)
}

pub fn mean_ode_with_step(kernel: &OdeKernel, mu: f64, horizon: f64, step: f64) -> OdePath {
    let sys = MomentSystem::new(kernel, mu);
    let n1 = sys.size();
    let rhs = field(n1, |_, u: &[f64], du: &mut [f64]| sys.mean_rhs(u, du));
    Rk4::new(step).integrate(&rhs, &vec![0.0; n1], 0.0, horizon)
}

/// Joint solution of the mean and second-moment systems.
#[derive(Debug, Clone)]
pub struct SecondMoments {
    path: OdePath,
    size: usize,
}

/// `(u(t), v(t) = E[X_t X̄_t])` on `[0, horizon]` from zero.
pub fn second_moment_ode(kernel: &OdeKernel, mu: f64, horizon: f64) -> SecondMoments {
    second_moment_ode_with_step(kernel, mu, horizon, MOMENT_STEP)
}

pub fn second_moment_ode_with_step(
    kernel: &OdeKernel,
    mu: f64,
    horizon: f64,
    step: f64,
) -> SecondMoments {
    let sys = MomentSystem::new(kernel, mu);
    let n1 = sys.size();
    let dim = n1 + n1 * n1;
    let rhs = field(dim, |_, y: &[f64], dy: &mut [f64]| sys.joint_rhs(y, dy));
    SecondMoments {
        path: Rk4::new(step).integrate(&rhs, &vec![0.0; dim], 0.0, horizon),
        size: n1,
    }
}

impl SecondMoments {
    pub fn path(&self) -> &OdePath {
        &self.path
    }

    pub fn blowup(&self) -> Option<f64> {
        self.path.blowup()
    }

    pub fn index_of(&self, t: f64) -> usize {
        self.path.nearest_index(t)
    }

    pub fn mean(&self, i: usize) -> Vector {
        Vector::from_column_slice(&self.path.values()[i][..self.size])
    }

    pub fn second(&self, i: usize) -> Matrix {
        Matrix::from_column_slice(self.size, self.size, &self.path.values()[i][self.size..])
    }

    /// `v - u ū`.
    pub fn covariance(&self, i: usize) -> Matrix {
        let u = self.mean(i);
        self.second(i) - &u * u.transpose()
    }

    /// `Var(N_t)`.
    pub fn var_count(&self, i: usize) -> f64 {
        self.covariance(i)[(0, 0)]
    }

    /// `Var(λ_t) = Var(X_t[1])`.
    pub fn var_intensity(&self, i: usize) -> f64 {
        self.covariance(i)[(1, 1)]
    }

    /// Column names `u0.., v_r_c..` matching [`OdePath::write_csv`].
    pub fn column_names(&self) -> Vec<String> {
        let n1 = self.size;
        let mut names: Vec<String> = (0..n1).map(|i| format!("u{i}")).collect();
        for c in 0..n1 {
            for r in 0..n1 {
                names.push(format!("v{r}_{c}"));
            }
        }
        names
    }
}

/// `g(x) = (e^x - 1 - x)/x²`, accurate near 0.
fn g(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        0.5 + x * (1.0 / 6.0 + x * (1.0 / 24.0 + x * (1.0 / 120.0 + x / 720.0)))
    } else {
        (x.exp_m1() - x) / (x * x)
    }
}

/// `E[N_t]` for `φ(a) = e^{-ca}`.
pub fn closed_form_mean_exp(c: f64, mu: f64, t: f64) -> f64 {
    if c == 1.0 {
        mu * (t + t * t / 2.0)
    } else {
        mu * t * (1.0 + t * g((1.0 - c) * t))
    }
}

/// `E[N_t]` for `φ(a) = α² a e^{-βa}`.
pub fn closed_form_mean_delayed(alpha: f64, beta: f64, mu: f64, t: f64) -> f64 {
    if alpha == beta {
        mu / (8.0 * beta) * (-(-2.0 * beta * t).exp_m1()) + 0.75 * mu * t + beta * mu / 4.0 * t * t
    } else {
        let s = alpha + beta;
        mu * t * (alpha + 2.0 * beta) / (2.0 * s)
            + alpha * mu / 2.0 * (t * t * g((alpha - beta) * t) - (-s * t).exp_m1() / (s * s))
    }
}

/// `Var(N_t)` for `φ(a) = e^{-ca}`.
pub fn closed_form_var_exp(c: f64, mu: f64, t: f64) -> f64 {
    if c == 1.0 {
        return mu * t * (1.0 + 1.5 * t + 2.0 / 3.0 * t * t + t * t * t / 12.0);
    }
    let e = 1.0 - c;
    if (e * t).abs() >= 1e-2 {
        let x = (e * t).exp();
        return mu / e.powi(3)
            * ((1.0 - c / 2.0) / e * x * x + ((3.0 * c * c - 1.0) / e - 2.0 * c * t) * x
                - c.powi(3) * t
                + c * (0.5 - 3.0 * c) / e);
    }
    // Expansion in ε = 1 - c; the printed form cancels to order ε³ here.
    let t2 = t * t;
    let a0 = t * (t + 2.0) * (t2 + 6.0 * t + 6.0) / 12.0;
    let a1 = t.powi(3) * (4.0 * t2 + 25.0 * t + 30.0) / 60.0;
    let a2 = t.powi(4) * (11.0 * t2 + 60.0 * t + 45.0) / 360.0;
    let a3 = t.powi(5) * (26.0 * t2 + 133.0 * t + 63.0) / 2520.0;
    let a4 = t.powi(6) * (19.0 * t2 + 96.0 * t + 28.0) / 6720.0;
    mu * (a0 + e * (a1 + e * (a2 + e * (a3 + e * a4))))
}

/// `Var(λ_t)` for the critical delayed kernel `φ(a) = β² a e^{-βa}`.
pub fn closed_form_var_intensity_critical(beta: f64, mu: f64, t: f64) -> f64 {
    let bt = beta * t;
    beta * mu
        * (-7.0 / 128.0 + 3.0 / 32.0 * bt + bt * bt / 16.0 + (1.0 - bt) / 8.0 * (-2.0 * bt).exp()
            - 9.0 / 128.0 * (-4.0 * bt).exp())
}
