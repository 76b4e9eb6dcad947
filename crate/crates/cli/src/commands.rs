use std::fmt::Write as _;

use serde::Serialize;

use hawkes_core::goodness::{
    ks_exponential, rescaled_interarrivals, KsResult, LEADING_GAPS, LONG_HORIZON,
};
use hawkes_core::kernels::OdeKernel;
use hawkes_core::laplace::{
    joint_laplace_n_lambda, laplace_x, richardson_gap, solve_a_ode, solve_g_ode,
    solve_matrix_riccati, RICCATI_STEP,
};
use hawkes_core::mc::{
    compare, derive_seed, estimate_general_many, estimate_many, write_reports_csv,
    GeneralStatistic, McReport, Statistic,
};
use hawkes_core::model::GeneralModel;
use hawkes_core::moments::{
    closed_form_mean_delayed, closed_form_mean_exp, closed_form_var_exp,
    closed_form_var_intensity_critical, mean_ode, second_moment_ode,
};
use hawkes_core::numerics::{fmt_f64, Matrix, PathMeta};
use hawkes_core::pyramid::pyramid_at;
use hawkes_core::simulate::{
    intensity_path, intensity_path_general, simulate_general, simulate_standard, ThinningStats,
};
use hawkes_core::Error;

use crate::config::{matrix_from_rows, ExperimentConfig, KernelSpec, LaplaceQuery};
use crate::error::CliError;
use crate::manifest::OutputDir;

/// Seed offsets separating the independent Monte Carlo passes of `validate`.
const MARTINGALE_STREAM: u64 = 1 << 40;
const GENERAL_STREAM: u64 = 2 << 40;
const KS_STREAM: u64 = 3 << 40;
const KS_PATHS: usize = 100;
const KS_LEVEL: f64 = 0.01;

/// What a command leaves behind besides its files.
#[derive(Debug, Default)]
pub struct Outcome {
    /// Human-readable summary for stdout.
    pub summary: String,
    /// Deferred failure, reported after all outputs are written.
    pub failure: Option<CliError>,
}

fn csv_bytes<F>(f: F) -> Result<Vec<u8>, CliError>
where
    F: FnOnce(&mut Vec<u8>) -> hawkes_core::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn grid(horizon: f64, step: f64) -> Vec<f64> {
    let n = (horizon / step).round().max(1.0) as usize;
    (0..=n).map(|i| (i as f64 * step).min(horizon)).collect()
}

fn write_series(names: [&str; 2], xs: &[f64], ys: &[f64]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Config(format!("csv: {e}"));
    w.write_record(names).map_err(io)?;
    for (x, y) in xs.iter().zip(ys) {
        w.write_record([fmt_f64(*x), fmt_f64(*y)]).map_err(io)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Config(format!("csv: {e}")))
}

#[derive(Serialize)]
struct SimulatedPath {
    index: usize,
    seed: u64,
    population: &'static str,
    events: usize,
    stats: ThinningStats,
}

pub fn simulate(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let kernel = cfg.kernel()?;
    let general = cfg.general_model()?;
    let (mu, horizon) = (cfg.model.mu, cfg.run.horizon);
    let times = grid(horizon, cfg.run.grid_step);
    let mut records = Vec::new();
    let mut summary = String::new();
    for i in 0..cfg.run.write_paths {
        let seed = derive_seed(cfg.run.seed, i as u64);
        let log = simulate_standard(&kernel, mu, horizon, seed)?;
        out.write(
            &format!("events_{i}.csv"),
            &csv_bytes(|b| log.write_csv(b))?,
        )?;
        let lambda = intensity_path(&log, &kernel, mu, &times)?;
        out.write(
            &format!("intensity_{i}.csv"),
            &write_series(["t", "lambda"], &times, &lambda)?,
        )?;
        let pyramid = pyramid_at(&log, horizon);
        out.write(
            &format!("pyramid_{i}.csv"),
            &csv_bytes(|b| pyramid.write_csv(b, cfg.output.pyramid_bin_width, None))?,
        )?;
        let _ = writeln!(summary, "path {i}: {} events on (0, {horizon}]", log.len());
        records.push(SimulatedPath {
            index: i,
            seed,
            population: "standard",
            events: log.len(),
            stats: log.stats(),
        });

        if let Some(model) = &general {
            let (ext, hawkes) = simulate_general(model, horizon, seed)?;
            out.write(
                &format!("general_external_{i}.csv"),
                &csv_bytes(|b| ext.write_csv(b))?,
            )?;
            out.write(
                &format!("general_hawkes_{i}.csv"),
                &csv_bytes(|b| hawkes.write_csv(b))?,
            )?;
            let lambda = intensity_path_general(&ext, &hawkes, model, &times)?;
            out.write(
                &format!("general_intensity_{i}.csv"),
                &write_series(["t", "lambda"], &times, &lambda)?,
            )?;
            let pyramid = pyramid_at(&hawkes, horizon);
            out.write(
                &format!("general_pyramid_{i}.csv"),
                &csv_bytes(|b| pyramid.write_csv(b, cfg.output.pyramid_bin_width, Some(0.5)))?,
            )?;
            let _ = writeln!(
                summary,
                "path {i} (general): {} external, {} self-excited events",
                ext.len(),
                hawkes.len()
            );
            records.push(SimulatedPath {
                index: i,
                seed,
                population: "general",
                events: hawkes.len(),
                stats: hawkes.stats(),
            });
        }
    }
    out.write_json("simulate.json", &records)?;
    Ok(Outcome {
        summary,
        failure: None,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentRow {
    pub quantity: String,
    pub t: f64,
    pub ode: f64,
    pub closed_form: Option<f64>,
}

fn closed_forms(spec: &KernelSpec, mu: f64, t: f64) -> [Option<f64>; 4] {
    match *spec {
        KernelSpec::Exponential { rate } => [
            Some(closed_form_mean_exp(rate, mu, t)),
            Some(closed_form_var_exp(rate, mu, t)),
            None,
            None,
        ],
        KernelSpec::Delayed { alpha, beta } => [
            Some(closed_form_mean_delayed(alpha, beta, mu, t)),
            None,
            None,
            (alpha == beta).then(|| closed_form_var_intensity_critical(beta, mu, t)),
        ],
        _ => [None; 4],
    }
}

pub fn moment_rows(cfg: &ExperimentConfig, kernel: &OdeKernel) -> Result<Vec<MomentRow>, CliError> {
    let (mu, horizon) = (cfg.model.mu, cfg.run.horizon);
    let second = second_moment_ode(kernel, mu, horizon);
    if let Some(t) = second.blowup() {
        return Err(Error::BlowUp { time: t }.into());
    }
    let times = if cfg.query.moment_times.is_empty() {
        vec![horizon]
    } else {
        cfg.query.moment_times.clone()
    };
    let mut rows = Vec::new();
    for t in times {
        let i = second.index_of(t);
        let mean = second.mean(i);
        let ode = [
            mean[0],
            second.var_count(i),
            mu + mean[1],
            second.var_intensity(i),
        ];
        let names = ["E[N_{t}]", "Var(N_{t})", "E[λ_{t}]", "Var(λ_{t})"];
        let closed = closed_forms(&cfg.model.kernel, mu, t);
        for k in 0..4 {
            rows.push(MomentRow {
                quantity: names[k].replace("{t}", &t.to_string()),
                t,
                ode: ode[k],
                closed_form: closed[k],
            });
        }
    }
    Ok(rows)
}

pub fn render_moment_table(rows: &[MomentRow]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = write!(s, "{:<14} = {:.6}", r.quantity, r.ode);
        if let Some(c) = r.closed_form {
            let _ = write!(
                s,
                "    closed form = {:.6}    |diff| = {:.2e}",
                c,
                (r.ode - c).abs()
            );
        }
        s.push('\n');
    }
    s
}

pub fn moments(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let kernel = cfg.kernel()?;
    let (mu, horizon) = (cfg.model.mu, cfg.run.horizon);
    let mean = mean_ode(&kernel, mu, horizon);
    let mut names = vec!["EN".to_string()];
    names.extend((1..=kernel.order()).map(|k| format!("EX{k}")));
    out.write(
        "moments_mean.csv",
        &csv_bytes(|b| mean.write_csv(b, &names))?,
    )?;
    let second = second_moment_ode(&kernel, mu, horizon);
    out.write(
        "moments_second.csv",
        &csv_bytes(|b| second.path().write_csv(b, &second.column_names()))?,
    )?;

    let rows = moment_rows(cfg, &kernel)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Config(format!("csv: {e}"));
    w.write_record(["quantity", "t", "ode", "closed_form"])
        .map_err(io)?;
    for r in &rows {
        w.write_record([
            r.quantity.clone(),
            fmt_f64(r.t),
            fmt_f64(r.ode),
            r.closed_form.map(fmt_f64).unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    let table = w
        .into_inner()
        .map_err(|e| CliError::Config(format!("csv: {e}")))?;
    out.write("moments_table.csv", &table)?;
    Ok(Outcome {
        summary: render_moment_table(&rows),
        failure: None,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LaplaceRecord {
    pub query: serde_json::Value,
    pub value: Option<f64>,
    pub blowup_flag: bool,
    pub blowup_time: Option<f64>,
    pub error: Option<String>,
    pub path_meta: Option<PathMeta>,
    /// Max-abs change of the backward solution at `t = 0` under step halving.
    pub richardson_gap: Option<f64>,
    /// Same quantity through the other formulation, when there is one.
    pub cross_check: Option<f64>,
}

impl LaplaceRecord {
    fn new(query: serde_json::Value) -> Self {
        LaplaceRecord {
            query,
            value: None,
            blowup_flag: false,
            blowup_time: None,
            error: None,
            path_meta: None,
            richardson_gap: None,
            cross_check: None,
        }
    }

    fn fail(&mut self, e: &Error) {
        if let Error::BlowUp { time } = e {
            self.blowup_flag = true;
            self.blowup_time = Some(*time);
        }
        self.error = Some(e.to_string());
    }
}

fn state_vector(n1: usize, v: &[f64]) -> Result<Vec<f64>, CliError> {
    if v.len() > n1 {
        return Err(CliError::Config(format!(
            "laplace vector has {} entries, state has {n1}",
            v.len()
        )));
    }
    let mut out = v.to_vec();
    out.resize(n1, 0.0);
    Ok(out)
}

pub fn laplace(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let kernel = cfg.kernel()?;
    let general = cfg.general_model()?;
    let (mu, horizon) = (cfg.model.mu, cfg.run.horizon);
    let n1 = kernel.order() + 1;
    let mut records = Vec::new();

    for (i, q) in cfg.query.laplace.iter().enumerate() {
        let mut rec = LaplaceRecord::new(serde_json::to_value(q).expect("query serializes"));
        match q {
            LaplaceQuery::State { v } => {
                let v = state_vector(n1, v)?;
                let sol = solve_a_ode(&kernel, &v, horizon)?;
                out.write(
                    &format!("riccati_{i}.csv"),
                    &csv_bytes(|b| sol.path().write_csv(b, &sol.column_names()))?,
                )?;
                rec.path_meta = Some(sol.path().meta().clone());
                match laplace_x(&kernel, mu, &v, horizon)
                    .and_then(|val| Ok((val, richardson_gap(&kernel, &v, horizon, RICCATI_STEP)?)))
                {
                    Ok((val, gap)) => {
                        rec.value = Some(val);
                        rec.richardson_gap = Some(gap);
                    }
                    Err(e) => rec.fail(&e),
                }
            }
            LaplaceQuery::Joint { theta1, theta2 } => {
                let path = solve_g_ode(&kernel, *theta1, *theta2, horizon);
                let mut names = vec!["G".to_string()];
                names.extend((1..n1).map(|k| format!("G{k}")));
                out.write(
                    &format!("g_{i}.csv"),
                    &csv_bytes(|b| path.write_csv(b, &names))?,
                )?;
                rec.path_meta = Some(path.meta().clone());
                match joint_laplace_n_lambda(&kernel, mu, *theta1, *theta2, horizon) {
                    Ok(val) => rec.value = Some(val),
                    Err(e) => rec.fail(&e),
                }
                let v = state_vector(n1, &[*theta1, *theta2])?;
                if let Ok(x) = laplace_x(&kernel, mu, &v, horizon) {
                    rec.cross_check = Some((theta2 * mu).exp() * x);
                }
                if let Ok(gap) = richardson_gap(&kernel, &v, horizon, RICCATI_STEP) {
                    rec.richardson_gap = Some(gap);
                }
            }
        }
        records.push(rec);
    }

    if !cfg.query.general_laplace.is_empty() {
        let model = general.as_ref().ok_or_else(|| {
            CliError::Config("general_laplace queries need a [general] section".into())
        })?;
        for (i, q) in cfg.query.general_laplace.iter().enumerate() {
            let mut rec = LaplaceRecord::new(serde_json::to_value(q).expect("query serializes"));
            let u = matrix_from_rows(&q.u)?;
            let v = matrix_from_rows(&q.v)?;
            match solve_matrix_riccati(model, &u, &v, horizon) {
                Ok(sol) => {
                    out.write(
                        &format!("general_riccati_{i}.csv"),
                        &csv_bytes(|b| sol.path().write_csv(b, &sol.column_names()))?,
                    )?;
                    rec.path_meta = Some(sol.path().meta().clone());
                    match sol.path().blowup() {
                        Some(time) => rec.fail(&Error::BlowUp { time }),
                        None => rec.value = Some(sol.integral().exp()),
                    }
                }
                Err(e @ Error::DimensionMismatch(_)) => return Err(e.into()),
                Err(e) => rec.fail(&e),
            }
            records.push(rec);
        }
    }

    out.write_json("laplace.json", &records)?;
    let mut summary = String::new();
    let mut failed = Vec::new();
    for (i, r) in records.iter().enumerate() {
        match r.value {
            Some(v) => {
                let _ = writeln!(summary, "query {i}: {v:.10}");
            }
            None => {
                let _ = writeln!(
                    summary,
                    "query {i}: {}",
                    r.error.as_deref().unwrap_or("failed")
                );
                failed.push(i);
            }
        }
    }
    let failure = (!failed.is_empty()).then(|| {
        CliError::Numeric(format!(
            "laplace queries {failed:?} did not produce a value"
        ))
    });
    Ok(Outcome { summary, failure })
}

#[derive(Debug, Clone, Serialize)]
pub struct KsReport {
    #[serde(flatten)]
    pub result: Option<KsResult>,
    pub paths: usize,
    pub pass: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub reports: Vec<McReport>,
    pub time_rescaling: KsReport,
    pub pass: bool,
}

fn time_rescaling(cfg: &ExperimentConfig, kernel: &OdeKernel) -> Result<KsReport, CliError> {
    let mu = cfg.model.mu;
    if mu == 0.0 {
        return Ok(KsReport {
            result: None,
            paths: 0,
            pass: true,
            note: Some("no events without immigration".into()),
        });
    }
    let horizon = LONG_HORIZON.max(4.0 * LEADING_GAPS as f64 / mu);
    let mut pooled = Vec::new();
    let mut short = 0;
    for i in 0..KS_PATHS {
        let log = simulate_standard(
            kernel,
            mu,
            horizon,
            derive_seed(cfg.run.seed, KS_STREAM + i as u64),
        )?;
        let gaps = rescaled_interarrivals(&log, kernel, mu)?;
        if gaps.len() < LEADING_GAPS {
            short += 1;
        }
        pooled.extend(gaps.into_iter().take(LEADING_GAPS));
    }
    let result = ks_exponential(&pooled)?;
    let note = (short > 0).then(|| format!("{short} paths had fewer than {LEADING_GAPS} events"));
    Ok(KsReport {
        pass: result.p_value > KS_LEVEL && short == 0,
        result: Some(result),
        paths: KS_PATHS,
        note,
    })
}

fn martingale_terminal(cfg: &ExperimentConfig, n1: usize) -> Vec<f64> {
    let first = cfg.query.laplace.iter().find_map(|q| match q {
        LaplaceQuery::State { v } if v.len() <= n1 && v.iter().all(|x| *x <= 0.0) => {
            Some(v.clone())
        }
        LaplaceQuery::Joint { theta1, theta2 } if *theta1 <= 0.0 && *theta2 <= 0.0 => {
            Some(vec![*theta1, *theta2])
        }
        _ => None,
    });
    let mut v = first.unwrap_or_else(|| vec![-0.5, -0.2]);
    v.resize(n1, 0.0);
    v
}

fn general_queries(
    cfg: &ExperimentConfig,
    model: &GeneralModel,
) -> Result<Vec<(Matrix, Matrix)>, CliError> {
    if cfg.query.general_laplace.is_empty() {
        let shape =
            |k: &hawkes_core::kernels::MarkKernel| (k.order() + 1, k.time_factor().order() + 1);
        let (m1, q1) = shape(&model.external_kernel);
        let (n1, p1) = shape(&model.self_kernel);
        let mut v = Matrix::zeros(n1, p1);
        v[(0, 0)] = -0.3;
        return Ok(vec![(Matrix::zeros(m1, q1), v)]);
    }
    cfg.query
        .general_laplace
        .iter()
        .map(|q| Ok((matrix_from_rows(&q.u)?, matrix_from_rows(&q.v)?)))
        .collect()
}

pub fn validate(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let kernel = cfg.kernel()?;
    let general = cfg.general_model()?;
    let (mu, horizon, seed) = (cfg.model.mu, cfg.run.horizon, cfg.run.seed);
    let z_max = cfg.run.z_max;
    let n1 = kernel.order() + 1;
    let mut reports = Vec::new();

    let second = second_moment_ode(&kernel, mu, horizon);
    if let Some(time) = second.blowup() {
        return Err(Error::BlowUp { time }.into());
    }
    let last = second.path().len() - 1;
    let mean = second.mean(last);
    let var_n = second.var_count(last);

    let state_vectors: Vec<Vec<f64>> = cfg
        .query
        .laplace
        .iter()
        .filter_map(|q| match q {
            LaplaceQuery::State { v } if v.iter().all(|x| *x <= 0.0) => Some(state_vector(n1, v)),
            _ => None,
        })
        .collect::<Result<_, _>>()?;
    let mut stats = vec![
        Statistic::Count,
        Statistic::Intensity,
        Statistic::CountVariance,
        Statistic::IntensityVariance,
        Statistic::CountSquared,
    ];
    let mut analytic = vec![
        ("E[N_T]".to_string(), mean[0]),
        ("E[λ_T]".to_string(), mu + mean[1]),
        ("Var(N_T)".to_string(), var_n),
        ("Var(λ_T)".to_string(), second.var_intensity(last)),
        ("E[N_T²]".to_string(), var_n + mean[0] * mean[0]),
    ];
    for v in &state_vectors {
        stats.push(Statistic::ExpLinear(v));
        analytic.push((
            format!("E[exp(v·X_T)], v = {v:?}"),
            laplace_x(&kernel, mu, v, horizon)?,
        ));
    }
    for q in &cfg.query.laplace {
        if let LaplaceQuery::Joint { theta1, theta2 } = *q {
            if theta1 <= 0.0 && theta2 <= 0.0 {
                stats.push(Statistic::ExpJoint { theta1, theta2 });
                analytic.push((
                    format!("E[exp(θ1 N_T + θ2 λ_T)], θ = ({theta1}, {theta2})"),
                    joint_laplace_n_lambda(&kernel, mu, theta1, theta2, horizon)?,
                ));
            }
        }
    }
    let inputs = estimate_many(&kernel, mu, horizon, &stats, cfg.run.n_paths, seed)?;
    for ((name, value), input) in analytic.iter().zip(&inputs) {
        reports.push(compare(name.clone(), *value, input, z_max)?);
    }

    let terminal = martingale_terminal(cfg, n1);
    let riccati = solve_a_ode(&kernel, &terminal, horizon)?;
    if let Some(time) = riccati.blowup() {
        return Err(Error::BlowUp { time }.into());
    }
    let at = [horizon / 2.0, horizon];
    let mstats: Vec<Statistic> = at
        .iter()
        .map(|&t| Statistic::Martingale {
            riccati: &riccati,
            at: t,
        })
        .collect();
    let minputs = estimate_many(
        &kernel,
        mu,
        horizon,
        &mstats,
        cfg.run.martingale_paths,
        derive_seed(seed, MARTINGALE_STREAM),
    )?;
    for (t, input) in at.iter().zip(&minputs) {
        reports.push(compare(
            format!("exponential martingale at t = {t}"),
            1.0,
            input,
            z_max,
        )?);
    }

    if let Some(model) = &general {
        let queries = general_queries(cfg, model)?;
        let mut gstats = Vec::new();
        let mut ganalytic = Vec::new();
        let mut first = None;
        for (u, v) in &queries {
            let sol = solve_matrix_riccati(model, u, v, horizon)?;
            if let Some(time) = sol.path().blowup() {
                return Err(Error::BlowUp { time }.into());
            }
            ganalytic.push((
                format!("general E[exp(Tr(ūM¹ + v̄M²))], v = {:?}", v.as_slice()),
                sol.integral().exp(),
            ));
            gstats.push(GeneralStatistic::ExpTrace { u, v });
            first.get_or_insert(sol);
        }
        let ginputs = estimate_general_many(
            model,
            horizon,
            &gstats,
            cfg.run.n_paths,
            derive_seed(seed, GENERAL_STREAM),
        )?;
        for ((name, value), input) in ganalytic.iter().zip(&ginputs) {
            reports.push(compare(name.clone(), *value, input, z_max)?);
        }
        if let Some(sol) = &first {
            let mstats: Vec<GeneralStatistic> = at
                .iter()
                .map(|&t| GeneralStatistic::Martingale {
                    riccati: sol,
                    at: t,
                })
                .collect();
            let minputs = estimate_general_many(
                model,
                horizon,
                &mstats,
                cfg.run.martingale_paths,
                derive_seed(seed, GENERAL_STREAM + MARTINGALE_STREAM),
            )?;
            for (t, input) in at.iter().zip(&minputs) {
                reports.push(compare(
                    format!("general exponential martingale at t = {t}"),
                    1.0,
                    input,
                    z_max,
                )?);
            }
        }
    }

    let ks = time_rescaling(cfg, &kernel)?;
    let pass = reports.iter().all(|r| r.pass) && ks.pass;
    let report = ValidationReport {
        reports,
        time_rescaling: ks,
        pass,
    };
    out.write_json("validate.json", &report)?;
    out.write(
        "validate.csv",
        &csv_bytes(|b| write_reports_csv(&report.reports, b))?,
    )?;

    let mut summary = String::new();
    for r in &report.reports {
        let _ = writeln!(
            summary,
            "{} {:<48} analytic {:.6}  mc {:.6} ± {:.6}  z = {:+.2}",
            if r.pass { "PASS" } else { "FAIL" },
            r.quantity,
            r.analytic,
            r.empirical,
            r.se,
            r.z
        );
    }
    match &report.time_rescaling.result {
        Some(k) => {
            let _ = writeln!(
                summary,
                "{} time-rescaling KS: D = {:.5}, p = {:.4}, n = {}",
                if report.time_rescaling.pass {
                    "PASS"
                } else {
                    "FAIL"
                },
                k.statistic,
                k.p_value,
                k.n
            );
        }
        None => summary.push_str("SKIP time-rescaling KS\n"),
    }
    let failed = report.reports.iter().filter(|r| !r.pass).count()
        + usize::from(!report.time_rescaling.pass);
    let failure = (!pass).then(|| CliError::Validation(format!("{failed} checks failed")));
    Ok(Outcome { summary, failure })
}

#[derive(Debug, Clone, Serialize)]
pub struct PowerLawReport {
    pub tau0: f64,
    pub ratio: f64,
    pub exponent: f64,
    pub terms: usize,
    pub order: usize,
    pub coeffs: Vec<f64>,
    pub init: Vec<f64>,
    pub branching_ratio: hawkes_core::kernels::BranchingRatio,
    /// Largest gap between the ODE kernel and the direct sum on the grid.
    pub max_abs_error: f64,
}

pub fn powerlaw(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let (tau0, ratio, exponent, terms, max_age) = match (&cfg.powerlaw, &cfg.model.kernel) {
        (Some(p), _) => (p.tau0, p.ratio, p.exponent, p.terms, p.max_age),
        (
            None,
            KernelSpec::PowerLaw {
                tau0,
                ratio,
                exponent,
                terms,
            },
        ) => (*tau0, *ratio, *exponent, *terms, 20.0),
        _ => {
            return Err(CliError::Config(
                "powerlaw needs a [powerlaw] section or a power_law kernel".into(),
            ))
        }
    };
    let kernel = OdeKernel::power_law(tau0, ratio, exponent, terms)?;
    let direct = |a: f64| {
        let mut s = 0.0;
        let mut cut = 0.0;
        for i in 0..terms as i32 {
            let scale = tau0 * ratio.powi(i);
            s += (-a / scale).exp() / scale.powf(1.0 + exponent);
            cut += scale.powf(-(1.0 + exponent));
        }
        s - cut * (-a * ratio / tau0).exp()
    };
    let ages = grid(max_age, 0.01);
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Config(format!("csv: {e}"));
    w.write_record(["age", "kernel", "direct_sum"])
        .map_err(io)?;
    let mut max_abs_error: f64 = 0.0;
    for &a in &ages {
        let k = kernel.value(a)?;
        let d = direct(a);
        max_abs_error = max_abs_error.max((k - d).abs());
        w.write_record([fmt_f64(a), fmt_f64(k), fmt_f64(d)])
            .map_err(io)?;
    }
    out.write(
        "powerlaw.csv",
        &w.into_inner()
            .map_err(|e| CliError::Config(format!("csv: {e}")))?,
    )?;
    let report = PowerLawReport {
        tau0,
        ratio,
        exponent,
        terms,
        order: kernel.order(),
        coeffs: kernel.coeffs().to_vec(),
        init: kernel.init().to_vec(),
        branching_ratio: kernel.branching_ratio(max_age)?,
        max_abs_error,
    };
    out.write_json("powerlaw.json", &report)?;
    let summary = format!(
        "order {} kernel, branching ratio ≈ {:.6} on [0, {max_age}] (tail ≈ {:.3e}), max |ode - direct| = {:.2e}\n",
        report.order,
        report.branching_ratio.integral,
        report.branching_ratio.tail_estimate,
        max_abs_error
    );
    Ok(Outcome {
        summary,
        failure: None,
    })
}
