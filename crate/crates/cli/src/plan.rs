//! Turns a parsed configuration into validated core objects.

use mnl_core::composite::{angular_momentum, stationary_moments, CompositeError, OscillatorPair, SecondMoments4};
use mnl_core::dsl::{parse_observable, ObservableExpr};
use mnl_core::hopf::{HopfParams, HopfRunConfig};
use mnl_core::linear::{DiffusionMatrix2, LinearError, LinearSystem2};
use mnl_core::phase::{linear_conjugate, MeasurementSpec, PhasePoint};
use mnl_core::sde::{psd_factor, Drift, EnsembleConfig, InitialCondition, SdeSystem};
use nalgebra::{DMatrix, Matrix4};

use crate::config::{DriftConfig, EnsembleSection, InitialConfig, Scenario, ScenarioConfig};
use crate::error::Diagnostic;

pub const DEFAULT_RECORDS: usize = 100;
pub const DEFAULT_BINS: usize = 60;

#[derive(Debug)]
pub struct LinearPlan {
    pub sys: LinearSystem2,
    pub dm: DiffusionMatrix2,
    pub sde: SdeSystem,
    pub init: InitialCondition,
    pub ensemble: EnsembleConfig,
}

#[derive(Debug)]
pub struct FreePlan {
    pub observable: ObservableExpr,
    pub conjugate: Option<ObservableExpr>,
    pub kappa: f64,
    pub sde: SdeSystem,
    pub init: InitialCondition,
    pub ensemble: EnsembleConfig,
}

#[derive(Debug)]
pub struct CompositePlan {
    pub pair: OscillatorPair,
    /// Mean energy per oscillator of the initial state.
    pub energy: f64,
    pub angular_momentum: f64,
    pub s0: SecondMoments4,
    pub init: InitialCondition,
    pub ensemble: EnsembleConfig,
}

#[derive(Debug)]
pub struct HopfPlan {
    pub params: HopfParams,
    pub run: HopfRunConfig,
    pub n_bins: usize,
}

#[derive(Debug)]
pub enum Plan {
    Linear(LinearPlan),
    FreeMeasurement(FreePlan),
    Composite(CompositePlan),
    Hopf(HopfPlan),
}

/// Checks every invariant of `cfg`, reporting all violations at once.
pub fn build(cfg: &ScenarioConfig) -> Result<Plan, Vec<Diagnostic>> {
    let mut d = Diags::default();
    check_scenario_keys(cfg, &mut d);
    let plan = match cfg.scenario {
        Scenario::Linear => linear(cfg, &mut d).map(Plan::Linear),
        Scenario::FreeMeasurement => free(cfg, &mut d).map(Plan::FreeMeasurement),
        Scenario::Composite => composite(cfg, &mut d).map(Plan::Composite),
        Scenario::Hopf => hopf(cfg, &mut d).map(Plan::Hopf),
    };
    match plan {
        Some(p) if d.0.is_empty() => Ok(p),
        _ => {
            if d.0.is_empty() {
                d.push("(root)", "configuration is incomplete");
            }
            Err(d.0)
        }
    }
}

#[derive(Default)]
struct Diags(Vec<Diagnostic>);

impl Diags {
    fn push(&mut self, path: &str, message: impl Into<String>) {
        self.0.push(Diagnostic::new(path, message));
    }
}

fn check_scenario_keys(cfg: &ScenarioConfig, d: &mut Diags) {
    let e = &cfg.ensemble;
    let name = cfg.scenario;
    let mut unused = |present: bool, path: &str| {
        if present {
            d.push(path, format!("not used by the {name} scenario"));
        }
    };
    if cfg.scenario == Scenario::Hopf {
        unused(cfg.observable.is_some(), "observable");
        unused(cfg.kappa.is_some(), "kappa");
        unused(cfg.initial.is_some(), "initial");
        unused(e.record_times.is_some(), "ensemble.record_times");
        unused(e.n_records.is_some(), "ensemble.n_records");
        unused(e.scheme.is_some(), "ensemble.scheme");
    } else {
        unused(e.burn_in.is_some(), "ensemble.burn_in");
        unused(e.samples_per_traj.is_some(), "ensemble.samples_per_traj");
        unused(e.n_bins.is_some(), "ensemble.n_bins");
    }
}

fn kappa(cfg: &ScenarioConfig, d: &mut Diags) -> Option<f64> {
    match cfg.kappa {
        None => {
            d.push("kappa", "required");
            None
        }
        Some(k) if !(k >= 0.0 && k.is_finite()) => {
            d.push("kappa", format!("must be finite and non-negative, got {k}"));
            None
        }
        Some(k) => Some(k),
    }
}

fn observable(cfg: &ScenarioConfig, n_dof: Option<usize>, d: &mut Diags) -> Option<ObservableExpr> {
    let Some(text) = &cfg.observable else {
        d.push("observable", "required");
        return None;
    };
    let n = match n_dof {
        Some(n) => n,
        None => {
            // the highest variable index fixes the number of degrees of freedom
            let probe = parse_observable(text, 1 << 20).map_err(|e| d.push("observable", e.to_string())).ok()?;
            probe.root().max_var_index().max(1)
        }
    };
    parse_observable(text, n).map_err(|e| d.push("observable", e.to_string())).ok()
}

fn measured_system(dim: usize, drift: Drift, o: ObservableExpr, kappa: f64, d: &mut Diags) -> Option<SdeSystem> {
    let spec = MeasurementSpec::new(o, kappa).map_err(|e| d.push("kappa", e.to_string())).ok()?;
    SdeSystem::new(dim, drift, Some(spec)).map_err(|e| d.push("(root)", e.to_string())).ok()
}

fn square(rows: &[Vec<f64>], n: usize, path: &str, d: &mut Diags) -> Option<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        d.push(path, format!("must be a {n}x{n} matrix"));
        return None;
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        d.push(path, "entries must be finite");
        return None;
    }
    Some(DMatrix::from_fn(n, n, |i, k| rows[i][k]))
}

fn initial(cfg: &ScenarioConfig, dim: usize, d: &mut Diags) -> Option<InitialCondition> {
    match &cfg.initial {
        None => Some(InitialCondition::Point(PhasePoint::new(vec![0.0; dim]).expect("even dimension"))),
        Some(InitialConfig::Point(x)) => {
            if x.len() != dim {
                d.push("initial.point", format!("must have {dim} coordinates, got {}", x.len()));
                return None;
            }
            PhasePoint::new(x.clone()).map(InitialCondition::Point).map_err(|e| d.push("initial.point", e.to_string())).ok()
        }
        Some(InitialConfig::Gaussian { mean, cov }) => {
            if mean.len() != dim {
                d.push("initial.gaussian.mean", format!("must have {dim} entries, got {}", mean.len()));
            }
            let cov = square(cov, dim, "initial.gaussian.cov", d)?;
            if let Err(e) = psd_factor(&cov) {
                d.push("initial.gaussian.cov", e.to_string());
                return None;
            }
            (mean.len() == dim).then(|| InitialCondition::Gaussian { mean: mean.clone(), cov })
        }
    }
}

/// Field-level checks shared by every scenario, so each problem is reported at its own key.
fn ensemble_fields(e: &EnsembleSection, d: &mut Diags) -> bool {
    let before = d.0.len();
    if e.n_traj == 0 {
        d.push("ensemble.n_traj", "must be positive");
    }
    if !(e.dt > 0.0 && e.dt.is_finite()) {
        d.push("ensemble.dt", format!("must be positive and finite, got {}", e.dt));
    }
    if let Some(t) = e.t_final {
        if !(t > 0.0 && t.is_finite()) {
            d.push("ensemble.t_final", format!("must be positive and finite, got {t}"));
        }
    }
    if e.threads == Some(0) {
        d.push("ensemble.threads", "must be positive");
    }
    d.0.len() == before
}

fn ensemble(cfg: &ScenarioConfig, d: &mut Diags) -> Option<EnsembleConfig> {
    let e = &cfg.ensemble;
    if !ensemble_fields(e, d) {
        return None;
    }
    let Some(t_final) = e.t_final else {
        d.push("ensemble.t_final", "required");
        return None;
    };
    let times = match (&e.record_times, e.n_records) {
        (Some(_), Some(_)) => {
            d.push("ensemble", "give either record_times or n_records, not both");
            return None;
        }
        (Some(t), None) => t.clone(),
        (None, Some(0)) => {
            d.push("ensemble.n_records", "must be positive");
            return None;
        }
        (None, n) => EnsembleConfig::uniform_times(t_final, n.unwrap_or(DEFAULT_RECORDS)),
    };
    let mut out = EnsembleConfig::new(e.n_traj, e.dt, t_final, e.seed, times);
    out.scheme = e.scheme.unwrap_or_default();
    out.threads = e.threads;
    out.validate().map_err(|err| d.push("ensemble", err.to_string())).ok()?;
    Some(out)
}

fn linear(cfg: &ScenarioConfig, d: &mut Diags) -> Option<LinearPlan> {
    let o = observable(cfg, Some(1), d);
    let k = kappa(cfg, d);
    let ens = ensemble(cfg, d);
    let init = initial(cfg, 2, d);
    let a = match &cfg.drift {
        Some(DriftConfig::Matrix(rows)) => square(rows, 2, "drift.matrix", d),
        _ => {
            d.push("drift", "linear scenario needs {\"matrix\": [[a, b], [c, d]]}");
            None
        }
    };
    let sys = a.as_ref().and_then(|a| match LinearSystem2::new(a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]) {
        Ok(s) => Some(s),
        Err(LinearError::NotHurwitz(_)) => {
            let (t, det) = (a[(0, 0)] + a[(1, 1)], a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)]);
            d.push(
                "drift.matrix",
                format!("violates the Hurwitz restriction: need a + d < 0 and ad - bc > 0, got trace {t} and determinant {det}"),
            );
            None
        }
        Err(e) => {
            d.push("drift.matrix", e.to_string());
            None
        }
    });
    let (o, k, a, sys) = (o?, k?, a?, sys?);
    let dm = DiffusionMatrix2::from_observable(&o, k).map_err(|e| d.push("observable", e.to_string())).ok()?;
    let sde = measured_system(2, Drift::linear(&a), o, k, d)?;
    Some(LinearPlan { sys, dm, sde, init: init?, ensemble: ens? })
}

fn free(cfg: &ScenarioConfig, d: &mut Diags) -> Option<FreePlan> {
    if cfg.drift.is_some() {
        d.push("drift", "free measurement has no drift; remove the key");
    }
    let o = observable(cfg, None, d);
    let k = kappa(cfg, d);
    let ens = ensemble(cfg, d);
    let o = o?;
    let init = initial(cfg, o.dim(), d);
    let k = k?;
    let sde = measured_system(o.dim(), Drift::Zero, o.clone(), k, d)?;
    Some(FreePlan { conjugate: linear_conjugate(&o), observable: o, kappa: k, sde, init: init?, ensemble: ens? })
}

fn composite(cfg: &ScenarioConfig, d: &mut Diags) -> Option<CompositePlan> {
    let k = kappa(cfg, d);
    let ens = ensemble(cfg, d);
    if let Some(text) = &cfg.observable {
        let same = parse_observable(text, 2).ok().is_some_and(|o| is_angular_momentum(&o));
        if !same {
            d.push("observable", "the composite scenario measures x1*p2 - x2*p1; omit the key or use that observable");
        }
    }
    let pair = match (&cfg.drift, k) {
        (Some(DriftConfig::OscillatorPair { m, k: stiffness }), Some(kappa)) => OscillatorPair::new(*m, *stiffness, kappa)
            .map_err(|e| d.push("drift.oscillator_pair", e.to_string()))
            .ok(),
        (Some(DriftConfig::OscillatorPair { .. }), None) => None,
        _ => {
            d.push("drift", "composite scenario needs {\"oscillator_pair\": {\"m\": .., \"k\": ..}}");
            None
        }
    };
    if cfg.initial.is_none() {
        d.push("initial", "required: the initial state fixes the energy and angular momentum");
        return None;
    }
    let init = initial(cfg, 4, d)?;
    let pair = pair?;
    let s0 = raw_moments(&init);
    let energy = 0.5 * (pair.e1(&s0) + pair.e2(&s0));
    let m = s0.angular_momentum();
    match stationary_moments(energy, m, &pair) {
        Ok(_) => {}
        Err(CompositeError::Inadmissible { m_abs, bound }) => {
            d.push(
                "initial",
                format!("violates the PSD bound of the stationary state: |M| = {m_abs} must be strictly below 2E/omega0 = {bound}"),
            );
            return None;
        }
        Err(e) => {
            d.push("initial", e.to_string());
            return None;
        }
    }
    Some(CompositePlan { pair, energy, angular_momentum: m, s0, init, ensemble: ens? })
}

fn is_angular_momentum(o: &ObservableExpr) -> bool {
    let mz = angular_momentum();
    let probes = [[1.0, 0.5, -0.3, 2.0], [-0.7, 1.1, 0.4, -0.2], [0.3, -1.5, 2.2, 0.9]];
    probes.iter().all(|x| (o.eval_raw(x) - mz.eval_raw(x)).abs() <= 1e-12 * (1.0 + mz.eval_raw(x).abs()))
}

fn raw_moments(init: &InitialCondition) -> SecondMoments4 {
    match init {
        InitialCondition::Point(p) => {
            let c = p.coords();
            SecondMoments4::from_point(&[c[0], c[1], c[2], c[3]])
        }
        InitialCondition::Gaussian { mean, cov } => {
            SecondMoments4::from_matrix(&Matrix4::from_fn(|i, k| cov[(i, k)] + mean[i] * mean[k]))
        }
    }
}

fn hopf(cfg: &ScenarioConfig, d: &mut Diags) -> Option<HopfPlan> {
    let params = match &cfg.drift {
        Some(DriftConfig::Hopf { omega, epsilon, c, d: dj }) => {
            let p = HopfParams::new(*omega, *epsilon, *c, *dj).map_err(|e| d.push("drift.hopf", e.to_string())).ok();
            if !(*epsilon > 0.0) {
                d.push("drift.hopf.epsilon", format!("stationary sampling needs epsilon > 0, got {epsilon}"));
                return None;
            }
            p
        }
        _ => {
            d.push("drift", "hopf scenario needs {\"hopf\": {\"omega\", \"epsilon\", \"c\", \"d\"}}");
            None
        }
    };
    let e = &cfg.ensemble;
    let fields_ok = ensemble_fields(e, d);
    let Some(samples) = e.samples_per_traj else {
        d.push("ensemble.samples_per_traj", "required");
        return None;
    };
    let n_bins = e.n_bins.unwrap_or(DEFAULT_BINS);
    if n_bins == 0 {
        d.push("ensemble.n_bins", "must be positive");
    }
    let params = params?;
    if !fields_ok {
        return None;
    }
    let mut run = HopfRunConfig::standard(&params, e.n_traj, e.dt, samples, e.seed);
    run.t_final = e.t_final.unwrap_or(run.t_final);
    run.burn_in = e.burn_in.unwrap_or(run.burn_in);
    run.threads = e.threads;
    run.validate().map_err(|err| d.push("ensemble", err.to_string())).ok()?;
    (n_bins > 0).then_some(HopfPlan { params, run, n_bins })
}
