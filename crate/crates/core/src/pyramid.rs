//! The age pyramid `Z_t` and the finite-dimensional states built on it.

use std::io::Write;

use crate::error::{Error, Result};
use crate::kernels::{MarkKernel, OdeKernel};
use crate::model::GeneralModel;
use crate::numerics::{expm, field, fmt_f64, Matrix, Rk4, Vector};
use crate::simulate::{EventLog, Population};

/// Default age-bin width for histogram export.
pub const DEFAULT_BIN_WIDTH: f64 = 0.1;
/// Relative tolerance between direct and propagated states.
pub const STATE_TOLERANCE: f64 = 1e-8;
/// RK4 step for propagating matrix states with time-dependent factors.
pub const MATRIX_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub age: f64,
    pub mark: f64,
}

/// `Z_t = Σ_{T_n ≤ t} δ_{(t - T_n, X_n)}`, stored as its atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct AgePyramid {
    atoms: Vec<Atom>,
    time: f64,
    pop: Option<Population>,
}

pub fn pyramid_at(log: &EventLog, t: f64) -> AgePyramid {
    let events = &log.events()[..log.count_until(t)];
    AgePyramid {
        atoms: events
            .iter()
            .map(|e| Atom {
                age: t - e.time,
                mark: e.mark,
            })
            .collect(),
        time: t,
        pop: events.first().map(|e| e.pop),
    }
}

impl AgePyramid {
    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn population(&self) -> Option<Population> {
        self.pop
    }

    /// `⟨Z_t, 1⟩`.
    pub fn count(&self) -> usize {
        self.atoms.len()
    }

    /// `⟨Z_t, f⟩ = Σ f(a, x)` over atoms.
    pub fn integrate<F: Fn(f64, f64) -> f64>(&self, f: F) -> f64 {
        self.atoms.iter().map(|a| f(a.age, a.mark)).sum()
    }

    /// `(bin_left, count)` for age bins of the given width covering `[0, t]`.
    pub fn histogram(&self, bin_width: f64) -> Vec<(f64, usize)> {
        let n_bins = ((self.time / bin_width).floor() as usize) + 1;
        let mut counts = vec![0usize; n_bins];
        for a in &self.atoms {
            let i = ((a.age / bin_width).floor() as usize).min(n_bins - 1);
            counts[i] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(i, c)| (i as f64 * bin_width, c))
            .collect()
    }

    /// `(age_bin_left, mark_bin_left, count)` over occupied cells, sorted.
    pub fn histogram_marked(&self, age_width: f64, mark_width: f64) -> Vec<(f64, f64, usize)> {
        let mut cells = std::collections::BTreeMap::new();
        for a in &self.atoms {
            let key = (
                (a.age / age_width).floor() as i64,
                (a.mark / mark_width).floor() as i64,
            );
            *cells.entry(key).or_insert(0usize) += 1;
        }
        cells
            .into_iter()
            .map(|((i, j), c)| (i as f64 * age_width, j as f64 * mark_width, c))
            .collect()
    }

    /// Binned export; marked layout when `mark_width` is given.
    pub fn write_csv<W: Write>(
        &self,
        out: W,
        age_width: f64,
        mark_width: Option<f64>,
    ) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        match mark_width {
            None => {
                w.write_record(["age_bin_left", "count"])?;
                for (left, c) in self.histogram(age_width) {
                    w.write_record([fmt_f64(left), c.to_string()])?;
                }
            }
            Some(mw) => {
                w.write_record(["age_bin_left", "mark_bin_left", "count"])?;
                for (a, m, c) in self.histogram_marked(age_width, mw) {
                    w.write_record([fmt_f64(a), fmt_f64(m), c.to_string()])?;
                }
            }
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }
}

/// `X_t = (N_t, ⟨Z_t, φ⟩, …, ⟨Z_t, φ^{(n-1)}⟩)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovState {
    pub t: f64,
    pub x: Vector,
}

impl MarkovState {
    pub fn zero(kernel: &OdeKernel, t: f64) -> Self {
        MarkovState {
            t,
            x: Vector::zeros(kernel.order() + 1),
        }
    }

    /// `X_{t+dt} = e^{dt·C} X_t`, valid when no event falls in `(t, t+dt]`.
    pub fn propagate(&self, dt: f64, kernel: &OdeKernel) -> Result<Self> {
        if dt < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "cannot propagate by negative dt {dt}"
            )));
        }
        let x = if dt == 0.0 || self.x.iter().all(|v| *v == 0.0) {
            self.x.clone()
        } else {
            expm(&(kernel.companion() * dt))? * &self.x
        };
        Ok(MarkovState { t: self.t + dt, x })
    }

    /// `X ↦ X + m` at an event.
    pub fn apply_jump(&self, kernel: &OdeKernel) -> Self {
        MarkovState {
            t: self.t,
            x: &self.x + kernel.jump(),
        }
    }

    /// `N_t`.
    pub fn count(&self) -> f64 {
        self.x[0]
    }

    /// `λ_t = μ + X[1]` (right limit when an event sits at `t`).
    pub fn intensity(&self, mu: f64) -> f64 {
        mu + self.x[1]
    }
}

/// `X_t` by summing `e^{(t - T_n)C} m` over events up to `t`.
pub fn markov_state_direct(log: &EventLog, kernel: &OdeKernel, t: f64) -> Result<MarkovState> {
    let mut x = Vector::zeros(kernel.order() + 1);
    for e in &log.events()[..log.count_until(t)] {
        x += kernel.stack(t - e.time)?;
    }
    Ok(MarkovState { t, x })
}

/// `X_t` by propagating between events and jumping at each.
pub fn markov_state_propagated(log: &EventLog, kernel: &OdeKernel, t: f64) -> Result<MarkovState> {
    let mut state = MarkovState::zero(kernel, 0.0);
    for e in &log.events()[..log.count_until(t)] {
        state = state
            .propagate(e.time - state.t, kernel)?
            .apply_jump(kernel);
    }
    state.propagate(t - state.t, kernel)
}

fn check_close(what: &str, direct: &[f64], propagated: &[f64]) -> Result<()> {
    let scale = direct.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for (d, p) in direct.iter().zip(propagated) {
        if (d - p).abs() > STATE_TOLERANCE * scale {
            return Err(Error::StateMismatch {
                what: what.to_string(),
                direct: *d,
                propagated: *p,
            });
        }
    }
    Ok(())
}

/// Direct summation, checked against propagation to 1e-8 relative.
pub fn markov_state_at(log: &EventLog, kernel: &OdeKernel, t: f64) -> Result<MarkovState> {
    let direct = markov_state_direct(log, kernel, t)?;
    let propagated = markov_state_propagated(log, kernel, t)?;
    check_close("markov state", direct.x.as_slice(), propagated.x.as_slice())?;
    Ok(direct)
}

/// `M^{(1)}` (external population) and `M^{(2)}` (Hawkes population), with
/// `M[k, l] = ⟨Z_t, ∂_a^k ∂_t^l (v(t)φ)⟩` for `k, l ≥ -1` stored from index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixState {
    pub t: f64,
    pub m1: Matrix,
    pub m2: Matrix,
}

impl MatrixState {
    /// `λ_t = μ(t) + M^{(2)}[0,0] + M^{(1)}[0,0]`.
    pub fn intensity(&self, model: &GeneralModel) -> f64 {
        model.baseline.value(self.t) + self.m2[(1, 1)] + self.m1[(1, 1)]
    }
}

fn zero_matrix(kernel: &MarkKernel) -> Matrix {
    Matrix::zeros(kernel.order() + 1, kernel.time_factor().order() + 1)
}

fn direct_matrix(log: &EventLog, kernel: &MarkKernel, t: f64) -> Result<Matrix> {
    let mut s = Vector::zeros(kernel.order() + 1);
    for e in &log.events()[..log.count_until(t)] {
        s += kernel.stack(t - e.time, e.mark)?;
    }
    let v = Vector::from_vec(kernel.time_factor().stack(t));
    Ok(s * v.transpose())
}

/// Integrates `M' = C M + M D̄_t` over `[t0, t1]` with RK4.
fn flow_matrix(kernel: &MarkKernel, m: &Matrix, t0: f64, t1: f64, step: f64) -> Result<Matrix> {
    if t1 == t0 || m.iter().all(|v| *v == 0.0) {
        return Ok(m.clone());
    }
    let (rows, cols) = m.shape();
    let c = kernel.companion();
    let rhs = field(rows * cols, |t, y: &[f64], dy: &mut [f64]| {
        let mm = Matrix::from_column_slice(rows, cols, y);
        let d = kernel.time_factor().generator(t);
        let out = c * &mm + &mm * d.transpose();
        dy.copy_from_slice(out.as_slice());
    });
    let path = Rk4::new(step).integrate(&rhs, m.as_slice(), t0, t1);
    if let Some(time) = path.blowup() {
        return Err(Error::BlowUp { time });
    }
    Ok(Matrix::from_column_slice(rows, cols, path.terminal()))
}

fn propagated_matrix(log: &EventLog, kernel: &MarkKernel, t: f64, step: f64) -> Result<Matrix> {
    let mut m = zero_matrix(kernel);
    let mut now = 0.0;
    for e in &log.events()[..log.count_until(t)] {
        m = flow_matrix(kernel, &m, now, e.time, step)?;
        m += kernel.jump_matrix(e.time, e.mark);
        now = e.time;
    }
    flow_matrix(kernel, &m, now, t, step)
}

pub fn matrix_state_direct(
    external: &EventLog,
    hawkes: &EventLog,
    model: &GeneralModel,
    t: f64,
) -> Result<MatrixState> {
    Ok(MatrixState {
        t,
        m1: direct_matrix(external, &model.external_kernel, t)?,
        m2: direct_matrix(hawkes, &model.self_kernel, t)?,
    })
}

/// Incremental `dM = W dN + (C M + M D̄) dt`, RK4 between events.
pub fn matrix_state_propagated(
    external: &EventLog,
    hawkes: &EventLog,
    model: &GeneralModel,
    t: f64,
    step: f64,
) -> Result<MatrixState> {
    Ok(MatrixState {
        t,
        m1: propagated_matrix(external, &model.external_kernel, t, step)?,
        m2: propagated_matrix(hawkes, &model.self_kernel, t, step)?,
    })
}

/// Direct summation, checked against incremental propagation to 1e-8
/// relative.
pub fn matrix_state_at(
    external: &EventLog,
    hawkes: &EventLog,
    model: &GeneralModel,
    t: f64,
) -> Result<MatrixState> {
    let direct = matrix_state_direct(external, hawkes, model, t)?;
    let prop = matrix_state_propagated(external, hawkes, model, t, MATRIX_STEP)?;
    check_close("M1", direct.m1.as_slice(), prop.m1.as_slice())?;
    check_close("M2", direct.m2.as_slice(), prop.m2.as_slice())?;
    Ok(direct)
}
