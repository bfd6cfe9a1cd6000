//! Executes a validated plan and renders its artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mnl_core::composite::{
    beta_matrices, composite_csv, composite_rows, gibbs_parameters, integrate_moments, stationary_moments,
    CompositeRow, MOMENT_LABELS,
};
use mnl_core::dsl::gradient;
use mnl_core::hopf::{action_histogram, extremum_ratio, phase_histogram, simulate_action, ActionDensity};
use mnl_core::linear::{
    closed_form_moments, correlation_coefficient, entropy_residuals, frozen_determinant, inverse_eta_squared,
    kinetic_matrix, lyapunov_moments, matrix_form_moments, onsager_residual, zeno_stationary, StationaryMoments2,
};
use mnl_core::sde::{estimate_relaxation_rate, simulate_ensemble, InitialCondition, MomentSnapshot, SdeError};
use serde_json::{json, Value};

use crate::config::{self, LoadedConfig};
use crate::error::{ConfigError, RunError};
use crate::plan::{self, CompositePlan, FreePlan, HopfPlan, LinearPlan, Plan};
use crate::VERSION;

pub const DEFAULT_OUT_DIR: &str = "out";

/// File contents produced by one scenario. Everything here is a pure
/// function of the configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub analysis: String,
    pub timeseries: Option<String>,
    pub histogram: Option<String>,
}

/// Loads, overrides and validates a configuration file.
pub fn prepare(path: &Path, overrides: &[String]) -> Result<(LoadedConfig, Plan), ConfigError> {
    let loaded = config::load(path, overrides)?;
    let plan = plan::build(&loaded.config).map_err(ConfigError::Invalid)?;
    Ok((loaded, plan))
}

/// Runs the scenario in `path` and writes its artifacts. Returns the output directory.
pub fn run(path: &Path, overrides: &[String], out: Option<&Path>) -> Result<PathBuf, RunError> {
    let start = Instant::now();
    let (loaded, plan) = prepare(path, overrides)?;
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| loaded.config.outputs.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let artifacts = execute(&plan)?;
    fs::create_dir_all(&dir).map_err(|source| RunError::Io { path: dir.display().to_string(), source })?;
    let outputs = &loaded.config.outputs;
    let mut written = vec!["analysis.json"];
    write(&dir, "analysis.json", &artifacts.analysis)?;
    if let (true, Some(ts)) = (outputs.timeseries, &artifacts.timeseries) {
        write(&dir, "timeseries.csv", ts)?;
        written.push("timeseries.csv");
    }
    if let (true, Some(h)) = (outputs.histogram, &artifacts.histogram) {
        write(&dir, "histogram.csv", h)?;
        written.push("histogram.csv");
    }
    let manifest = json!({
        "config": loaded.raw,
        "overrides": overrides,
        "scenario": loaded.config.scenario.to_string(),
        "seed": loaded.config.ensemble.seed,
        "version": VERSION,
        "artifacts": written,
        "wall_time_seconds": start.elapsed().as_secs_f64(),
    });
    write(&dir, "manifest.json", &pretty(&manifest))?;
    Ok(dir)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), RunError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| RunError::Io { path: path.display().to_string(), source })
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("JSON values serialize") + "\n"
}

fn numeric(e: impl std::fmt::Display) -> RunError {
    RunError::Numeric(e.to_string())
}

pub fn execute(plan: &Plan) -> Result<Artifacts, RunError> {
    match plan {
        Plan::Linear(p) => linear(p),
        Plan::FreeMeasurement(p) => free(p),
        Plan::Composite(p) => composite(p),
        Plan::Hopf(p) => hopf(p),
    }
}

fn moments_json(m: &StationaryMoments2) -> Value {
    json!({ "m11": m.m11, "m12": m.m12, "m22": m.m22 })
}

fn matrix_json<const R: usize, const C: usize>(m: &nalgebra::SMatrix<f64, R, C>) -> Value {
    Value::from((0..R).map(|i| (0..C).map(|k| m[(i, k)]).collect::<Vec<_>>()).collect::<Vec<_>>())
}

fn z_score(value: f64, want: f64, stderr: f64) -> Value {
    if stderr > 0.0 {
        json!((value - want) / stderr)
    } else {
        Value::Null
    }
}

fn linear(p: &LinearPlan) -> Result<Artifacts, RunError> {
    let (sys, dm) = (&p.sys, &p.dm);
    let moments = lyapunov_moments(sys, dm).map_err(numeric)?;
    let kin = kinetic_matrix(sys, dm).map_err(numeric)?;
    let eta = correlation_coefficient(&moments);
    let entropy = entropy_residuals(sys, dm).map_err(numeric)?;
    let zeno = (sys.b == 0.0 && dm.d1 == 0.0 && dm.d == 0.0 && dm.d2 > 0.0)
        .then(|| zeno_stationary(sys, dm.d2).ok())
        .flatten();
    let report = simulate_ensemble(&p.sde, &p.init, &p.ensemble).map_err(numeric)?;
    let last = report.last();
    let sim_z = json!({
        "m11": z_score(last.covariance[0][0], moments.m11, last.covariance_stderr[0][0]),
        "m12": z_score(last.covariance[0][1], moments.m12, last.covariance_stderr[0][1]),
        "m22": z_score(last.covariance[1][1], moments.m22, last.covariance_stderr[1][1]),
    });
    let analysis = json!({
        "scenario": "linear",
        "drift": { "a": sys.a, "b": sys.b, "c": sys.c, "d": sys.d, "trace": sys.trace(), "det": sys.det() },
        "diffusion": { "d1": dm.d1, "d2": dm.d2, "d": dm.d },
        "moments": moments_json(&moments),
        "m11": moments.m11,
        "m12": moments.m12,
        "m22": moments.m22,
        "closed_form": moments_json(&closed_form_moments(sys, dm)),
        "matrix_form": moments_json(&matrix_form_moments(sys, dm)),
        "beta": moments.beta().map(|b| matrix_json(&b)),
        "kinetic_matrix": matrix_json(&kin.l()),
        "kinetic_discrepancy": kin.discrepancy(),
        "fluctuation_residual": kin.fluctuation_residual(dm),
        "onsager_residual": onsager_residual(sys, dm),
        "frozen_determinant": frozen_determinant(sys, dm),
        "eta": eta.value(),
        "eta_degenerate": eta.value().is_none(),
        "inverse_eta_squared": inverse_eta_squared(sys, dm),
        "entropy_residuals": entropy.map(|(t, q)| json!({ "trace": t, "quadratic": q })),
        "zeno": zeno.map(|z| json!({
            "o_variance": z.o_variance,
            "conjugate_variance": z.conjugate_variance,
            "prefactor": z.prefactor,
        })),
        "simulation": {
            "t": last.t,
            "n_traj": report.n_traj,
            "covariance": last.covariance,
            "covariance_stderr": last.covariance_stderr,
            "z": sim_z,
        },
    });
    Ok(Artifacts { analysis: pretty(&analysis), timeseries: Some(report.to_csv()), histogram: None })
}

/// Variance of the linear function with gradient `g`, errors in quadrature.
fn linear_variance(s: &MomentSnapshot, g: &[f64]) -> (f64, f64) {
    let mut value = 0.0;
    let mut var = 0.0;
    for i in 0..g.len() {
        for k in 0..g.len() {
            let (a, b) = (i.min(k), i.max(k));
            value += g[i] * g[k] * s.covariance[a][b];
            var += (g[i] * g[k] * s.covariance_stderr[a][b]).powi(2);
        }
    }
    (value, var.sqrt())
}

fn constant_gradient(e: &mnl_core::dsl::ObservableExpr) -> Option<Vec<f64>> {
    gradient(e).iter().map(|g| g.root().as_const()).collect()
}

fn free(p: &FreePlan) -> Result<Artifacts, RunError> {
    let report = simulate_ensemble(&p.sde, &p.init, &p.ensemble).map_err(numeric)?;
    let o_grad = constant_gradient(&p.observable);
    let c_grad = p.conjugate.as_ref().and_then(constant_gradient);
    let initial_var = |g: &[f64]| match &p.init {
        InitialCondition::Point(_) => 0.0,
        InitialCondition::Gaussian { cov, .. } => {
            (0..g.len()).flat_map(|i| (0..g.len()).map(move |k| (i, k))).map(|(i, k)| g[i] * g[k] * cov[(i, k)]).sum()
        }
    };
    let records: Vec<Value> = report
        .snapshots
        .iter()
        .map(|s| {
            let o = o_grad.as_ref().map(|g| linear_variance(s, g));
            let c = c_grad.as_ref().map(|g| (linear_variance(s, g), initial_var(g) + 2.0 * p.kappa * s.t));
            json!({
                "t": s.t,
                "observable_variance": o.map(|v| v.0),
                "observable_variance_stderr": o.map(|v| v.1),
                "conjugate_variance": c.map(|v| v.0 .0),
                "conjugate_variance_stderr": c.map(|v| v.0 .1),
                "predicted_conjugate_variance": c.map(|v| v.1),
                "z": c.map(|((v, se), want)| z_score(v, want, se)),
            })
        })
        .collect();
    let analysis = json!({
        "scenario": "free-measurement",
        "observable": p.observable.to_string(),
        "n_dof": p.observable.n_dof(),
        "kappa": p.kappa,
        "conjugate": p.conjugate.as_ref().map(|c| c.to_string()),
        "kernel_variance_rate": 2.0 * p.kappa,
        "n_traj": report.n_traj,
        "records": records,
    });
    Ok(Artifacts { analysis: pretty(&analysis), timeseries: Some(report.to_csv()), histogram: None })
}

/// Fit of `E1 − E2` while it is well above the noise, i.e. the first three e-folds.
fn relaxation(rows: &[CompositeRow], kappa: f64) -> Value {
    if kappa <= 0.0 {
        return json!({ "predicted_rate": 0.0, "fit": null, "reason": "no measurement" });
    }
    let window: Vec<&CompositeRow> = rows.iter().filter(|r| r.t <= 3.0 / (4.0 * kappa)).collect();
    let times: Vec<f64> = window.iter().map(|r| r.t).collect();
    let diffs: Vec<f64> = window.iter().map(|r| r.e1 - r.e2).collect();
    match estimate_relaxation_rate(&times, &diffs, 0.0) {
        Ok(fit) => json!({
            "predicted_rate": 4.0 * kappa,
            "fit": { "rate": fit.rate, "intercept": fit.intercept, "r_squared": fit.r_squared, "flagged": fit.flagged },
            "window_end": 3.0 / (4.0 * kappa),
            "points": times.len(),
        }),
        Err(SdeError::Fit(reason)) => json!({ "predicted_rate": 4.0 * kappa, "fit": null, "reason": reason }),
        Err(e) => json!({ "predicted_rate": 4.0 * kappa, "fit": null, "reason": e.to_string() }),
    }
}

fn composite(p: &CompositePlan) -> Result<Artifacts, RunError> {
    let (pair, e, m) = (&p.pair, p.energy, p.angular_momentum);
    let stationary = stationary_moments(e, m, pair).map_err(numeric)?;
    let gibbs = gibbs_parameters(e, m, pair).map_err(numeric)?;
    let (inv, beta) = beta_matrices(e, m, pair).map_err(numeric)?;
    let report = simulate_ensemble(&pair.sde_system(), &p.init, &p.ensemble).map_err(numeric)?;
    let rows = composite_rows(pair, &report);
    let last = rows.last().expect("at least one record time");
    let predicted = integrate_moments(pair, &p.s0, &[last.t])[0];
    let labeled = |values: &[f64; 10]| {
        Value::Object(MOMENT_LABELS.iter().zip(values).map(|(l, v)| (l.to_string(), json!(v))).collect())
    };
    let analysis = json!({
        "scenario": "composite",
        "m": pair.m,
        "k": pair.k,
        "kappa": pair.kappa,
        "omega0": pair.omega0(),
        "energy": e,
        "angular_momentum": m,
        "admissible_bound": 2.0 * e / pair.omega0(),
        "stationary_moments": labeled(&stationary.values),
        "gibbs": { "beta": gibbs.beta, "omega": gibbs.omega, "kt_eff": gibbs.kt_eff },
        "beta_matrix": matrix_json(&beta),
        "beta_inverse": matrix_json(&inv),
        "relaxation": relaxation(&rows, pair.kappa),
        "final": {
            "t": last.t,
            "n_traj": report.n_traj,
            "e1": last.e1,
            "e1_stderr": last.e1_stderr,
            "e2": last.e2,
            "e2_stderr": last.e2_stderr,
            "m": last.m,
            "m_stderr": last.m_stderr,
            "moment_equations": {
                "e1": pair.e1(&predicted),
                "e2": pair.e2(&predicted),
                "m": predicted.angular_momentum(),
                "moments": labeled(&predicted.values),
            },
        },
    });
    Ok(Artifacts { analysis: pretty(&analysis), timeseries: Some(composite_csv(&rows)), histogram: None })
}

fn hopf(p: &HopfPlan) -> Result<Artifacts, RunError> {
    let params = &p.params;
    let density = ActionDensity::new(*params).map_err(numeric)?;
    let samples = simulate_action(params, &p.run).map_err(numeric)?;
    let hist = action_histogram(&density, &samples.j, p.n_bins, None);
    let phase = phase_histogram(&samples.phi, p.n_bins);
    let ratio = extremum_ratio(params).map_err(numeric)?;
    let bimodality = params.epsilon.powi(3) / (12.0 * params.dj * params.c * params.c);
    let analysis = json!({
        "scenario": "hopf",
        "omega": params.omega,
        "epsilon": params.epsilon,
        "c": params.c,
        "d": params.dj,
        "limit_cycle_action": params.limit_cycle_action(),
        "extremum_ratio": ratio,
        "bimodality_parameter": bimodality,
        "bimodal_observable": bimodality <= 1.0,
        "samples": samples.j.len(),
        "t_final": p.run.t_final,
        "burn_in": p.run.burn_in,
        "histogram_range": [0.0, density.support_end()],
        "n_bins": p.n_bins,
        "action_l1_distance": hist.l1_distance(),
        "phase_l1_distance": phase.l1_distance(),
    });
    Ok(Artifacts { analysis: pretty(&analysis), timeseries: Some(action_series(p, &samples.j)), histogram: Some(hist.to_csv()) })
}

/// Ensemble mean of the action at each sampling time.
fn action_series(p: &HopfPlan, j: &[f64]) -> String {
    let times = p.run.sample_times();
    let (n_traj, per) = (p.run.n_traj, p.run.samples_per_traj);
    let mut out = String::from("t,mean_j,stderr_j\n");
    for (s, t) in times.iter().enumerate() {
        let values: Vec<f64> = (0..n_traj).map(|i| j[i * per + s]).collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        writeln!(out, "{t},{mean},{}", (var / n).sqrt()).unwrap();
    }
    out
}
