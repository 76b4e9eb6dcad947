//! Exact simulation by thinning, with the Markov state carried along so the
//! intensity between events is evolved in closed form.

mod log;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

pub use log::{Event, EventLog, Population, ThinningStats};

use crate::error::{Error, Result};
use crate::kernels::{MarkKernel, OdeKernel};
use crate::model::{GeneralModel, RateFunction};
use crate::numerics::{expm, norm1, Matrix, Vector};

const HAWKES_STREAM: u64 = 0;
const ATTRIBUTION_STREAM: u64 = 1;
const EXTERNAL_STREAM: u64 = 2;

const ADAPT_BATCH: u32 = 32;
const MIN_ACCEPTANCE: f64 = 0.05;
const MAX_ACCEPTANCE: f64 = 0.5;
/// Relative slack for rounding when checking intensity against majorant.
const MAJORANT_SLACK: f64 = 1e-9;

/// ChaCha8 generator for one path and one purpose.
pub fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    /// Hard cap on Hawkes events per path.
    pub event_cap: usize,
    /// Initial majorant window; defaults to `1/‖C‖₁`.
    pub initial_window: Option<f64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            event_cap: 10_000_000,
            initial_window: None,
        }
    }
}

/// One excitation source: a population's age-stack sum
/// `S(t) = Σ_n e^{(t - T_n)C} F(0, X_n)`, so that its contribution to the
/// intensity is `v(t)·S(t)[1]`.
struct Source<'a> {
    kernel: &'a MarkKernel,
    state: Vector,
    /// Bound only the age block when there is no constant forcing; the
    /// count row then never feeds back.
    lower: bool,
    norm: f64,
    v_sup: f64,
    empty: bool,
}

impl<'a> Source<'a> {
    fn new(kernel: &'a MarkKernel, horizon: f64) -> Result<Self> {
        let c = kernel.companion();
        let lower = kernel.coeffs()[0] == 0.0;
        let norm = if lower {
            let n = c.nrows() - 1;
            norm1(&c.view((1, 1), (n, n)).into_owned())
        } else {
            norm1(c)
        };
        let v_sup = kernel.time_factor().sup_bounds(horizon)?[0];
        Ok(Source {
            kernel,
            state: Vector::zeros(c.nrows()),
            lower,
            norm,
            v_sup,
            empty: true,
        })
    }

    fn advance(&mut self, dt: f64) -> Result<()> {
        if !self.empty && dt > 0.0 {
            self.state = expm(&(self.kernel.companion() * dt))? * &self.state;
        }
        Ok(())
    }

    fn bound(&self, span: f64) -> f64 {
        if self.empty || self.v_sup == 0.0 {
            return 0.0;
        }
        let mass: f64 = if self.lower {
            self.state.iter().skip(1).map(|v| v.abs()).sum()
        } else {
            self.state.iter().map(|v| v.abs()).sum()
        };
        self.v_sup * (self.state[1].abs() + (self.norm * span).exp_m1() * mass)
    }

    fn contribution(&self, t: f64) -> f64 {
        if self.empty {
            0.0
        } else {
            self.kernel.time_factor().value(t) * self.state[1]
        }
    }

    fn jump(&mut self, mark: f64) {
        self.state += self.kernel.initial_stack(mark);
        self.empty = false;
    }
}

/// `λ̄ = μ + |X[1]| + (e^{‖C‖₁δ} - 1)‖X‖₁` for the standard model: a bound on
/// `μ + (e^{sC}X)[1]` for all `0 ≤ s ≤ δ`.
pub fn dominating_bound(kernel: &OdeKernel, mu: f64, state: &Vector, delta: f64) -> f64 {
    let wrapped = MarkKernel::from_kernel(kernel);
    let mut src = Source::new(&wrapped, delta.max(1.0)).expect("constant factor");
    src.state = state.clone();
    src.empty = state.iter().all(|v| *v == 0.0);
    mu + src.bound(delta)
}

struct HawkesRun {
    events: Vec<Event>,
    stats: ThinningStats,
    max_gen_exceeded: bool,
}

/// Contribution weights of every possible parent at time `t`.
fn pick_parent(
    model: &GeneralModel,
    t: f64,
    hawkes: &[Event],
    external: &[Event],
    rng: &mut ChaCha8Rng,
) -> Result<u32> {
    let mut weights = Vec::with_capacity(1 + hawkes.len() + external.len());
    weights.push((model.baseline.value(t), 0u32));
    let v = model.self_kernel.time_factor().value(t);
    for e in hawkes {
        let phi = model.self_kernel.stack(t - e.time, e.mark)?[1];
        weights.push((v * phi, e.gen.unwrap_or(0) + 1));
    }
    let w = model.external_kernel.time_factor().value(t);
    for e in external {
        let psi = model.external_kernel.stack(t - e.time, e.mark)?[1];
        weights.push((w * psi, 1));
    }
    let total: f64 = weights.iter().map(|(w, _)| w.max(0.0)).sum();
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (w, g) in &weights {
        acc += w.max(0.0);
        if target < acc {
            return Ok(*g);
        }
    }
    Ok(weights
        .iter()
        .rev()
        .find(|(w, _)| *w > 0.0)
        .map_or(0, |(_, g)| *g))
}

fn run_hawkes(
    model: &GeneralModel,
    external: &[Event],
    horizon: f64,
    rng: &mut ChaCha8Rng,
    mut attribution: Option<(&mut ChaCha8Rng, u32)>,
    opts: &SimOptions,
) -> Result<HawkesRun> {
    let mut own = Source::new(&model.self_kernel, horizon)?;
    let mut ext = Source::new(&model.external_kernel, horizon)?;
    let mut events: Vec<Event> = Vec::new();
    let mut stats = ThinningStats::default();
    let mut max_gen_exceeded = false;

    let norm = own.norm.max(ext.norm);
    let mut delta = opts
        .initial_window
        .unwrap_or(if norm > 0.0 { 1.0 / norm } else { horizon })
        .min(horizon);
    let min_delta = horizon * 1e-12;
    let (mut batch_cand, mut batch_acc) = (0u32, 0u32);
    let mut ext_i = 0usize;
    let mut t = 0.0f64;

    while t < horizon {
        let next_ext = external.get(ext_i).map_or(f64::INFINITY, |e| e.time);
        let window_end = (t + delta).min(horizon);
        let hits_ext = next_ext <= window_end;
        let end = if hits_ext { next_ext } else { window_end };
        let span = end - t;
        let bound = model.baseline.sup_on(t, end) + own.bound(span) + ext.bound(span);
        let gap = if bound > 0.0 {
            rng.sample::<f64, _>(Exp1) / bound
        } else {
            f64::INFINITY
        };

        if t + gap >= end {
            own.advance(span)?;
            ext.advance(span)?;
            t = end;
            if hits_ext {
                ext.jump(external[ext_i].mark);
                ext_i += 1;
            }
            stats.empty_windows += 1;
            continue;
        }

        own.advance(gap)?;
        ext.advance(gap)?;
        t += gap;
        stats.candidates += 1;
        batch_cand += 1;

        let lambda = model.baseline.value(t) + own.contribution(t) + ext.contribution(t);
        if lambda > bound * (1.0 + MAJORANT_SLACK) {
            return Err(Error::MajorantViolation {
                time: t,
                intensity: lambda,
                bound,
            });
        }
        if rng.random::<f64>() * bound <= lambda {
            let gen = match attribution.as_mut() {
                Some((attr_rng, max_gen)) => {
                    let g = pick_parent(model, t, &events, &external[..ext_i], attr_rng)?;
                    if g > *max_gen {
                        max_gen_exceeded = true;
                    }
                    Some(g)
                }
                None => None,
            };
            let mark = model.self_kernel.marks().sample(rng);
            own.jump(mark);
            events.push(Event {
                time: t,
                mark,
                gen,
                pop: Population::Hawkes,
            });
            stats.accepted += 1;
            batch_acc += 1;
            if events.len() > opts.event_cap {
                return Err(Error::ExplosionGuard {
                    cap: opts.event_cap,
                    time: t,
                });
            }
        }

        if batch_cand == ADAPT_BATCH {
            let rate = f64::from(batch_acc) / f64::from(batch_cand);
            if rate < MIN_ACCEPTANCE && delta > min_delta {
                delta *= 0.5;
                stats.halvings += 1;
            } else if rate > MAX_ACCEPTANCE {
                delta = (2.0 * delta).min(horizon);
            }
            batch_cand = 0;
            batch_acc = 0;
        }
    }
    Ok(HawkesRun {
        events,
        stats,
        max_gen_exceeded,
    })
}

/// Inhomogeneous Poisson stream of rate `ρ(t)` with iid marks, by thinning
/// against `sup ρ` on `[0, horizon]`.
fn run_external(
    rate: &RateFunction,
    kernel: &MarkKernel,
    horizon: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Event> {
    let sup = rate.sup_on(0.0, horizon);
    let mut out = Vec::new();
    if !(sup > 0.0) {
        return out;
    }
    let mut t = 0.0;
    loop {
        t += rng.sample::<f64, _>(Exp1) / sup;
        if t > horizon {
            break;
        }
        if rng.random::<f64>() * sup <= rate.value(t) {
            out.push(Event {
                time: t,
                mark: kernel.marks().sample(rng),
                gen: Some(0),
                pop: Population::External,
            });
        }
    }
    out
}

fn check_standard(mu: f64, horizon: f64) -> Result<()> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "baseline rate must be non-negative, got {mu}"
        )));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    Ok(())
}

fn standard_id(kernel: &OdeKernel, mu: f64) -> String {
    format!(
        "standard(c={:?},m={:?},mu={mu})",
        kernel.coeffs(),
        kernel.init()
    )
}

impl SimOptions {
    pub fn simulate_standard(
        &self,
        kernel: &OdeKernel,
        mu: f64,
        horizon: f64,
        seed: u64,
    ) -> Result<EventLog> {
        check_standard(mu, horizon)?;
        let model = GeneralModel::standard(kernel, mu);
        let mut rng = path_rng(seed, HAWKES_STREAM);
        let run = run_hawkes(&model, &[], horizon, &mut rng, None, self)?;
        let mut log = EventLog::from_events(run.events, horizon, seed, standard_id(kernel, mu))?;
        log.set_stats(run.stats);
        Ok(log)
    }

    pub fn simulate_generations(
        &self,
        kernel: &OdeKernel,
        mu: f64,
        horizon: f64,
        seed: u64,
        max_gen: u32,
    ) -> Result<EventLog> {
        check_standard(mu, horizon)?;
        if max_gen < 1 {
            return Err(Error::InvalidParameter("max_gen must be at least 1".into()));
        }
        let model = GeneralModel::standard(kernel, mu);
        let mut rng = path_rng(seed, HAWKES_STREAM);
        let mut attr = path_rng(seed, ATTRIBUTION_STREAM);
        let run = run_hawkes(
            &model,
            &[],
            horizon,
            &mut rng,
            Some((&mut attr, max_gen)),
            self,
        )?;
        let mut log = EventLog::from_events(run.events, horizon, seed, standard_id(kernel, mu))?;
        log.set_stats(run.stats);
        log.set_max_gen_exceeded(run.max_gen_exceeded);
        Ok(log)
    }

    /// Returns `(external, hawkes)` logs.
    pub fn simulate_general(
        &self,
        model: &GeneralModel,
        horizon: f64,
        seed: u64,
    ) -> Result<(EventLog, EventLog)> {
        model.validate(horizon)?;
        let mut ext_rng = path_rng(seed, EXTERNAL_STREAM);
        let external = run_external(
            &model.external_rate,
            &model.external_kernel,
            horizon,
            &mut ext_rng,
        );
        let mut rng = path_rng(seed, HAWKES_STREAM);
        let run = run_hawkes(model, &external, horizon, &mut rng, None, self)?;
        let ext_log = EventLog::from_events(external, horizon, seed, "general:external")?;
        let mut log = EventLog::from_events(run.events, horizon, seed, "general:hawkes")?;
        log.set_stats(run.stats);
        Ok((ext_log, log))
    }
}

/// [`SimOptions::simulate_standard`] with default options.
pub fn simulate_standard(kernel: &OdeKernel, mu: f64, horizon: f64, seed: u64) -> Result<EventLog> {
    SimOptions::default().simulate_standard(kernel, mu, horizon, seed)
}

/// [`SimOptions::simulate_generations`] with default options.
pub fn simulate_generations(
    kernel: &OdeKernel,
    mu: f64,
    horizon: f64,
    seed: u64,
    max_gen: u32,
) -> Result<EventLog> {
    SimOptions::default().simulate_generations(kernel, mu, horizon, seed, max_gen)
}

/// [`SimOptions::simulate_general`] with default options.
pub fn simulate_general(
    model: &GeneralModel,
    horizon: f64,
    seed: u64,
) -> Result<(EventLog, EventLog)> {
    SimOptions::default().simulate_general(model, horizon, seed)
}

fn check_agreement(what: &str, direct: f64, propagated: f64) -> Result<()> {
    if (direct - propagated).abs() > 1e-9 * direct.abs().max(1.0) {
        return Err(Error::StateMismatch {
            what: what.to_string(),
            direct,
            propagated,
        });
    }
    Ok(())
}

/// Left-limit intensity `λ(t-) = μ + Σ_{T_n < t} φ(t - T_n)` on a grid,
/// computed by direct summation and by propagating the Markov state; the
/// two must agree to 1e-9.
pub fn intensity_path(
    log: &EventLog,
    kernel: &OdeKernel,
    mu: f64,
    grid: &[f64],
) -> Result<Vec<f64>> {
    let model = GeneralModel::standard(kernel, mu);
    let empty = EventLog::new(log.horizon(), log.seed(), "none");
    intensity_path_general(&empty, log, &model, grid)
}

/// Left-limit intensity `μ(t) + ⟨Z^{(2)}_{t-}, Φ_t⟩ + ⟨Z^{(1)}_{t-}, Ψ_t⟩`.
pub fn intensity_path_general(
    external: &EventLog,
    hawkes: &EventLog,
    model: &GeneralModel,
    grid: &[f64],
) -> Result<Vec<f64>> {
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[a].total_cmp(&grid[b]));

    let sources = [
        (&model.self_kernel, hawkes.events()),
        (&model.external_kernel, external.events()),
    ];
    let mut out = vec![0.0; grid.len()];
    let mut states: Vec<(Vector, usize)> = sources
        .iter()
        .map(|(k, _)| (Vector::zeros(k.order() + 1), 0usize))
        .collect();
    let mut clock = 0.0;
    for &gi in &order {
        let t = grid[gi];
        let mut propagated = model.baseline.value(t);
        let mut direct = model.baseline.value(t);
        for ((kernel, events), (state, next)) in sources.iter().zip(states.iter_mut()) {
            let mut now = clock;
            while *next < events.len() && events[*next].time < t {
                let e = events[*next];
                *state = propagate(kernel.companion(), state, e.time - now)?;
                *state += kernel.initial_stack(e.mark);
                now = e.time;
                *next += 1;
            }
            *state = propagate(kernel.companion(), state, t - now)?;
            let v = kernel.time_factor().value(t);
            propagated += v * state[1];
            for e in events.iter().take_while(|e| e.time < t) {
                direct += v * kernel.stack(t - e.time, e.mark)?[1];
            }
        }
        clock = t;
        check_agreement("intensity", direct, propagated)?;
        out[gi] = direct;
    }
    Ok(out)
}

fn propagate(c: &Matrix, x: &Vector, dt: f64) -> Result<Vector> {
    if dt == 0.0 || x.iter().all(|v| *v == 0.0) {
        return Ok(x.clone());
    }
    Ok(expm(&(c * dt))? * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{MarkDistribution, TimeFactor};

    #[test]
    fn zero_kernel_is_poisson() {
        let k = OdeKernel::new(vec![0.0, -1.0], vec![0.0]).unwrap();
        let log = simulate_standard(&k, 1.0, 1000.0, 7).unwrap();
        let n = log.len() as f64;
        assert!((n - 1000.0).abs() <= 4.0 * 1000f64.sqrt(), "{n}");
    }

    #[test]
    fn reproducible() {
        let k = OdeKernel::delayed(1.0, 1.0).unwrap();
        let a = simulate_standard(&k, 1.0, 5.0, 3).unwrap();
        let b = simulate_standard(&k, 1.0, 5.0, 3).unwrap();
        assert_eq!(a, b);
        let c = simulate_standard(&k, 1.0, 5.0, 4).unwrap();
        assert_ne!(a.events(), c.events());
    }

    #[test]
    fn generations_share_event_times() {
        let k = OdeKernel::exponential(1.5).unwrap();
        for seed in 0..20 {
            let plain = simulate_standard(&k, 1.0, 3.0, seed).unwrap();
            let tagged = simulate_generations(&k, 1.0, 3.0, seed, 10).unwrap();
            assert_eq!(plain.events(), tagged.without_generations().events());
            let total: usize = tagged.generation_counts(3.0).iter().sum();
            assert_eq!(total, tagged.len());
        }
    }

    #[test]
    fn dominating_bound_empty() {
        let k = OdeKernel::delayed(1.0, 1.0).unwrap();
        for delta in [0.1, 1.0, 10.0] {
            assert_eq!(dominating_bound(&k, 1.0, &Vector::zeros(3), delta), 1.0);
        }
    }

    #[test]
    fn dominating_bound_covers_rising_intensity() {
        let k = OdeKernel::delayed(2.0, 1.0).unwrap();
        let x = k.jump().clone();
        let delta = 0.5;
        let bound = dominating_bound(&k, 1.0, &x, delta);
        for i in 0..=100 {
            let s = delta * i as f64 / 100.0;
            let lam = 1.0 + (expm(&(k.companion() * s)).unwrap() * &x)[1];
            assert!(lam <= bound, "{lam} > {bound}");
        }
    }

    #[test]
    fn intensity_after_one_event() {
        let k = OdeKernel::exponential(2.0).unwrap();
        let log = EventLog::from_events(
            vec![Event {
                time: 0.5,
                mark: 1.0,
                gen: None,
                pop: Population::Hawkes,
            }],
            1.0,
            0,
            "x",
        )
        .unwrap();
        let lam = intensity_path(&log, &k, 1.0, &[0.25, 0.5, 1.0]).unwrap();
        assert_eq!(lam[0], 1.0);
        assert_eq!(lam[1], 1.0);
        assert!((lam[2] - (1.0 + (-1.0f64).exp())).abs() < 1e-14);
    }

    #[test]
    fn general_without_excitation_is_poisson() {
        let model = GeneralModel::new(
            RateFunction::Linear {
                intercept: 2.0,
                slope: 1.0,
            },
            RateFunction::Constant(0.0),
            MarkKernel::zero(),
            MarkKernel::zero(),
        );
        let mut total = 0usize;
        let paths = 2000;
        for seed in 0..paths {
            let (ext, hawkes) = simulate_general(&model, 2.0, seed).unwrap();
            assert!(ext.is_empty());
            total += hawkes.len();
        }
        // ∫₀² (2 + t) dt = 6
        let mean = total as f64 / paths as f64;
        assert!(
            (mean - 6.0).abs() <= 4.0 * (6.0 / paths as f64).sqrt(),
            "{mean}"
        );
    }

    #[test]
    fn general_intensity_two_ways() {
        let marks = MarkDistribution::Exponential { rate: 2.0 };
        let self_kernel = MarkKernel::dassios_zhao(1.0, marks.clone())
            .unwrap()
            .with_time_factor(TimeFactor::cos_squared(1.0, 1.0).unwrap());
        let model = GeneralModel::new(
            RateFunction::Constant(1.0),
            RateFunction::Constant(1.0),
            self_kernel,
            MarkKernel::dassios_zhao(1.0, marks).unwrap(),
        );
        let grid: Vec<f64> = (0..=40).map(|i| i as f64 * 0.1).collect();
        for seed in 0..10 {
            let (ext, hawkes) = simulate_general(&model, 4.0, seed).unwrap();
            assert!(ext.events().iter().all(|e| e.pop == Population::External));
            intensity_path_general(&ext, &hawkes, &model, &grid).unwrap();
        }
    }
}
