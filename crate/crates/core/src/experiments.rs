//! Verification harnesses: difference-quotient sweeps, synchronization,
//! the mid-run viscosity switch and the Taylor-Green oracles.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diagnostics::{check_apriori, BoundCheck};
use crate::dynamics::{dq_field, DynamicsError, Forcing, PhysicsParams, SystemKind, SystemSpec, ViscositySwitch};
use crate::interp::admissibility;
use crate::par;
use crate::spectral::{norm, taylor_green, GridSpec, SpectralField};
use crate::stepper::{
    integrate, integrate_observed, step_convergence_order, IntegrateError, OrderReference,
    SolverConfig, Trajectory,
};

/// Tolerance to which the integrator is expected to reproduce smooth
/// reference solutions.
pub const INTEGRATOR_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error("{context}: {source}")]
    Integrate {
        context: String,
        #[source]
        source: IntegrateError,
    },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

impl ExperimentError {
    pub fn is_blow_up(&self) -> bool {
        matches!(
            self,
            ExperimentError::Integrate {
                source: IntegrateError::BlowUp { .. },
                ..
            }
        )
    }
}

fn ctx(context: impl Into<String>) -> impl FnOnce(IntegrateError) -> ExperimentError {
    let context = context.into();
    move |source| ExperimentError::Integrate { context, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryNorm {
    /// `L^2(0,T;H)`
    L2H,
    /// `L^2(0,T;V)`
    L2V,
    /// `L^inf(0,T;H)`
    LinfH,
}

impl TrajectoryNorm {
    /// Trapezoid approximation from sampled `(l2, h1)` norms.
    pub fn evaluate(&self, times: &[f64], l2: &[f64], h1: &[f64]) -> f64 {
        let trap = |y: &[f64]| -> f64 {
            times
                .windows(2)
                .zip(y.windows(2))
                .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] * v[0] + v[1] * v[1]))
                .sum::<f64>()
                .sqrt()
        };
        match self {
            TrajectoryNorm::L2H => trap(l2),
            TrajectoryNorm::L2V => trap(h1),
            TrajectoryNorm::LinfH => l2.iter().fold(0.0, |m, x| m.max(*x)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DQSweepSpec {
    pub nu1: f64,
    /// Offsets `nu2 = nu1 + delta`, strictly decreasing.
    pub deltas: Vec<f64>,
    #[serde(default = "default_norm")]
    pub norm: TrajectoryNorm,
    /// Accepted range of `e_{n+1} / e_n`, when a rate is asserted.
    #[serde(default)]
    pub ratio_window: Option<(f64, f64)>,
}

fn default_norm() -> TrajectoryNorm {
    TrajectoryNorm::L2V
}

impl DQSweepSpec {
    /// `delta_n = nu1 2^-n`, `n = 1..=count`.
    pub fn halving(nu1: f64, count: usize) -> Self {
        Self {
            nu1,
            deltas: (1..=count).map(|n| nu1 * 0.5f64.powi(n as i32)).collect(),
            norm: TrajectoryNorm::L2V,
            ratio_window: None,
        }
    }

    pub fn with_ratio_window(mut self, lo: f64, hi: f64) -> Self {
        self.ratio_window = Some((lo, hi));
        self
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |s: String| Err(ExperimentError::InvalidSpec(s));
        if !(self.nu1 > 0.0) {
            return bad(format!("nu1 = {} must be positive", self.nu1));
        }
        if self.deltas.is_empty() {
            return bad("at least one delta is required".into());
        }
        for w in self.deltas.windows(2) {
            if !(w[1] < w[0]) {
                return bad(format!("deltas must strictly decrease ({} then {})", w[0], w[1]));
            }
        }
        // nu2 must stay within [nu1/2, 3 nu1/2]; the endpoint is allowed.
        let slack = 1e-12 * self.nu1;
        for &d in &self.deltas {
            if d == 0.0 || d.abs() > 0.5 * self.nu1 + slack {
                return bad(format!("delta = {d} leaves nu2 outside [nu1/2, 3 nu1/2]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Fail,
    /// Not assessed, e.g. too few data points or a control run.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    /// Acceptance criterion the verdict belongs to.
    pub criterion: String,
    pub outcome: Outcome,
    pub detail: String,
}

impl Verdict {
    pub fn new(name: &str, criterion: &str, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            criterion: criterion.into(),
            outcome: if pass { Outcome::Pass } else { Outcome::Fail },
            detail: detail.into(),
        }
    }

    pub fn inconclusive(name: &str, criterion: &str, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            criterion: criterion.into(),
            outcome: Outcome::Inconclusive,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub delta: f64,
    pub error: f64,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metadata {
    pub config_hash: String,
    pub runtime_seconds: f64,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub table: Vec<TableRow>,
    pub verdicts: Vec<Verdict>,
    pub checks: Vec<BoundCheck>,
    pub scalars: BTreeMap<String, f64>,
    pub metadata: Metadata,
}

impl ExperimentReport {
    fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            table: Vec::new(),
            verdicts: Vec::new(),
            checks: Vec::new(),
            scalars: BTreeMap::new(),
            metadata: Metadata::default(),
        }
    }

    /// No verdict failed.
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.outcome != Outcome::Fail)
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.scalars.get(name).copied()
    }

    fn push_apriori(&mut self, checks: Vec<BoundCheck>) {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        let detail = if failed.is_empty() {
            format!("{} checks passed", checks.len())
        } else {
            format!("failed: {}", failed.join(", "))
        };
        self.verdicts.push(Verdict::new("apriori", "apriori-bounds", failed.is_empty(), detail));
        self.checks.extend(checks);
    }

    fn finish(mut self, hash: String, start: Instant) -> Self {
        self.metadata.config_hash = hash;
        self.metadata.runtime_seconds = start.elapsed().as_secs_f64();
        self
    }
}

/// SHA-256 over a textual description of the inputs and the raw bytes of
/// the fields involved.
pub fn config_hash(description: &str, fields: &[&SpectralField]) -> String {
    let mut h = Sha256::new();
    h.update(description.as_bytes());
    for f in fields {
        for z in f.coefficients() {
            h.update(z.re.to_le_bytes());
            h.update(z.im.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn forcing_fields(p: &PhysicsParams) -> Vec<&SpectralField> {
    match &p.forcing {
        Forcing::Zero => vec![],
        Forcing::Steady(f) => vec![f],
        Forcing::Tabulated(s) => s.iter().map(|(_, f)| f).collect(),
    }
}

fn hash_run(tag: &str, p: &PhysicsParams, cfg: &SolverConfig, extra: &str, fields: &[&SpectralField]) -> String {
    let text = format!(
        "{tag}|nu1={:e}|nu2={:e}|mu={:e}|interp={:?}|dt={:e}|t_end={:e}|sample_every={}|{extra}",
        p.nu1, p.nu2, p.mu, p.interp, cfg.dt, cfg.t_end, cfg.sample_every
    );
    let mut all: Vec<&SpectralField> = fields.to_vec();
    all.extend(forcing_fields(p));
    config_hash(&text, &all)
}

/// Sampled norms of the quotient error and the two-path residuals of one
/// sweep point.
struct SweepPoint {
    times: Vec<f64>,
    err_l2: Vec<f64>,
    err_h1: Vec<f64>,
    /// `(name, residual h1 series, quotient h1 series)`.
    two_path: Vec<(String, Vec<f64>, Vec<f64>)>,
    traj: Option<Trajectory>,
}

struct SweepPlan<'a> {
    name: &'static str,
    criterion: &'static str,
    base: SystemSpec,
    base_init: Vec<(&'static str, &'a SpectralField)>,
    /// Sensitivity member of the base run compared against the quotient.
    reference: &'static str,
    run: SystemSpec,
    run_init: Vec<(&'static str, &'a SpectralField)>,
    /// Flow pair whose quotient approximates the sensitivity.
    quotient: (&'static str, &'static str),
    /// `(evolved quotient member, first flow, second flow)`.
    two_path: Vec<(&'static str, &'static str, &'static str)>,
}

fn run_sweep(plan: SweepPlan, spec: &DQSweepSpec, p: &PhysicsParams, cfg: &SolverConfig) -> Result<ExperimentReport, ExperimentError> {
    let start = Instant::now();
    spec.validate()?;
    let mut report = ExperimentReport::new(plan.name);
    let p1 = PhysicsParams {
        nu1: spec.nu1,
        nu2: spec.nu1,
        ..p.clone()
    };

    let mut reference: Vec<SpectralField> = Vec::new();
    let base_traj = integrate_observed(&plan.base, &plan.base_init, &p1, cfg, &mut |v| {
        reference.push(v.get(plan.reference).expect("reference member").clone());
    })
    .map_err(ctx("sensitivity run"))?;
    report.push_apriori(check_apriori(&base_traj, &p1));

    let exec = cfg.execution;
    let points = par::map(exec, spec.deltas.clone(), |delta| -> Result<SweepPoint, ExperimentError> {
        let nu2 = spec.nu1 + delta;
        let pn = PhysicsParams { nu2, ..p1.clone() };
        let mut pt = SweepPoint {
            times: Vec::new(),
            err_l2: Vec::new(),
            err_h1: Vec::new(),
            two_path: plan.two_path.iter().map(|t| (t.0.to_string(), Vec::new(), Vec::new())).collect(),
            traj: None,
        };
        let mut failure: Option<DynamicsError> = None;
        let traj = integrate_observed(&plan.run, &plan.run_init, &pn, cfg, &mut |v| {
            let res = (|| -> Result<(), DynamicsError> {
                let q = dq_field(v.get(plan.quotient.0).unwrap(), v.get(plan.quotient.1).unwrap(), spec.nu1, nu2)?;
                let e = norm(&q.try_sub(&reference[v.sample])?);
                pt.times.push(v.t);
                pt.err_l2.push(e.l2);
                pt.err_h1.push(e.h1);
                for (k, &(member, a, b)) in plan.two_path.iter().enumerate() {
                    let alg = dq_field(v.get(a).unwrap(), v.get(b).unwrap(), spec.nu1, nu2)?;
                    let r = norm(&v.get(member).unwrap().try_sub(&alg)?);
                    pt.two_path[k].1.push(r.h1);
                    pt.two_path[k].2.push(norm(&alg).h1);
                }
                Ok(())
            })();
            if let Err(e) = res {
                failure.get_or_insert(e);
            }
        })
        .map_err(ctx(format!("sweep point delta = {delta:e}")))?;
        if let Some(e) = failure {
            return Err(e.into());
        }
        pt.traj = Some(traj);
        Ok(pt)
    });
    let points = points.into_iter().collect::<Result<Vec<_>, _>>()?;

    let errors: Vec<f64> = points
        .iter()
        .map(|pt| spec.norm.evaluate(&pt.times, &pt.err_l2, &pt.err_h1))
        .collect();
    for (i, (&delta, &error)) in spec.deltas.iter().zip(&errors).enumerate() {
        let ratio = (i > 0).then(|| error / errors[i - 1]);
        report.table.push(TableRow { delta, error, ratio });
    }

    if errors.len() < 2 {
        report
            .verdicts
            .push(Verdict::inconclusive("decreasing", plan.criterion, "insufficient for rate"));
    } else {
        let dec = errors.windows(2).all(|w| w[1] < w[0]);
        report.verdicts.push(Verdict::new(
            "decreasing",
            plan.criterion,
            dec,
            format!("errors {errors:.3?}"),
        ));
        if let Some((lo, hi)) = spec.ratio_window {
            let ratios: Vec<f64> = report.table.iter().filter_map(|r| r.ratio).collect();
            let ok = ratios.iter().all(|r| (lo..=hi).contains(r));
            report.verdicts.push(Verdict::new(
                "first-order-ratio",
                plan.criterion,
                ok,
                format!("ratios {ratios:.3?} against [{lo}, {hi}]"),
            ));
        }
    }

    // Quadrature check: halving the sample set must not move the errors by
    // more than a tenth of the smallest error.
    let coarse: Vec<f64> = points
        .iter()
        .map(|pt| {
            let idx: Vec<usize> = (0..pt.times.len())
                .filter(|i| i % 2 == 0 || *i == pt.times.len() - 1)
                .collect();
            let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
            spec.norm.evaluate(&pick(&pt.times), &pick(&pt.err_l2), &pick(&pt.err_h1))
        })
        .collect();
    let quad = errors
        .iter()
        .zip(&coarse)
        .map(|(a, b)| (a - b).abs() / 3.0)
        .fold(0.0, f64::max);
    let emin = errors.iter().fold(f64::INFINITY, |m, x| m.min(*x));
    report.scalars.insert("quadrature_error_estimate".into(), quad);
    report.verdicts.push(Verdict::new(
        "sampling-cadence",
        plan.criterion,
        quad <= 0.1 * emin,
        format!("estimated quadrature error {quad:.3e} vs smallest error {emin:.3e}"),
    ));

    let mut worst: f64 = 0.0;
    for pt in &points {
        for (_, res, q) in &pt.two_path {
            let r = TrajectoryNorm::L2V.evaluate(&pt.times, res, res);
            let s = TrajectoryNorm::L2V.evaluate(&pt.times, q, q);
            worst = worst.max(if s > 0.0 { r / s } else { r });
        }
    }
    report.scalars.insert("two_path_max_relative".into(), worst);
    if !plan.two_path.is_empty() {
        let tol = 10.0 * INTEGRATOR_TOLERANCE;
        report.verdicts.push(Verdict::new(
            "two-path",
            "two-path-consistency",
            worst <= tol,
            format!("max relative L2(0,T;V) difference {worst:.3e} (tolerance {tol:e})"),
        ));
    }

    let mut apriori = Vec::new();
    for (pt, delta) in points.iter().zip(&spec.deltas) {
        let pn = PhysicsParams {
            nu2: spec.nu1 + delta,
            ..p1.clone()
        };
        apriori.extend(check_apriori(pt.traj.as_ref().unwrap(), &pn));
    }
    // merge with the base-run verdict
    let base_checks = std::mem::take(&mut report.checks);
    report.verdicts.retain(|v| v.name != "apriori");
    let mut all = base_checks;
    all.extend(apriori);
    report.push_apriori(all);

    report.metadata.notes.push(
        "trajectory norms use the trapezoid rule on sampled diagnostics; monotone decrease is an empirical check".into(),
    );
    let fields: Vec<&SpectralField> = plan.run_init.iter().map(|(_, f)| *f).collect();
    let hash = hash_run(plan.name, &p1, cfg, &format!("{spec:?}"), &fields);
    Ok(report.finish(hash, start))
}

/// Difference quotients of NSE runs against the NSE sensitivity.
pub fn run_dq_convergence(
    spec: &DQSweepSpec,
    u0: &SpectralField,
    p: &PhysicsParams,
    cfg: &SolverConfig,
) -> Result<ExperimentReport, ExperimentError> {
    let plan = SweepPlan {
        name: "dq-convergence",
        criterion: "dq-convergence",
        base: SystemSpec::new(SystemKind::NseSens),
        base_init: vec![("u", u0)],
        reference: "ut",
        run: SystemSpec::new(SystemKind::DqDirect),
        run_init: vec![("u1", u0), ("u2", u0)],
        quotient: ("u1", "u2"),
        two_path: vec![("D", "u1", "u2")],
    };
    run_sweep(plan, spec, p, cfg)
}

/// Difference quotients of assimilated runs, each nudged toward its own
/// reference flow, against the assimilated sensitivity.
pub fn run_da_dq_convergence(
    spec: &DQSweepSpec,
    u0: &SpectralField,
    v0: &SpectralField,
    p: &PhysicsParams,
    cfg: &SolverConfig,
) -> Result<ExperimentReport, ExperimentError> {
    spec.validate()?;
    let min_nu = spec
        .deltas
        .iter()
        .map(|d| spec.nu1 + d)
        .fold(spec.nu1, f64::min);
    if p.mu > 0.0 && !admissibility(&p.interp, min_nu, p.mu, true) {
        return Err(ExperimentError::Integrate {
            context: "pre-run admissibility".into(),
            source: IntegrateError::Admissibility {
                member: "Dp".into(),
                nu: min_nu,
                nudging_number: p.interp.nudging_number(p.mu),
                strict: true,
            },
        });
    }
    let plan = SweepPlan {
        name: "da-dq-convergence",
        criterion: "da-dq-convergence",
        base: SystemSpec::new(SystemKind::DaSens),
        base_init: vec![("u", u0), ("v", v0)],
        reference: "vt",
        run: SystemSpec::new(SystemKind::DaDqDirect),
        run_init: vec![("u1", u0), ("u2", u0), ("v1", v0), ("v2", v0)],
        quotient: ("v1", "v2"),
        two_path: vec![("D", "u1", "u2"), ("Dp", "v1", "v2")],
    };
    let mut report = run_sweep(plan, spec, p, cfg)?;
    report.verdicts.insert(
        0,
        Verdict::new(
            "strict-admissibility",
            "da-dq-convergence",
            true,
            format!(
                "4 mu c0 h^2 = {:.4e} <= min nu2 = {min_nu:.4e}",
                4.0 * p.interp.nudging_number(p.mu)
            ),
        ),
    );
    Ok(report)
}

/// Acceptance thresholds for [`run_da_sync`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncCriteria {
    /// Maximal accepted `|u - v|(T) / |u - v|(0)`.
    pub max_decay: f64,
}

impl Default for SyncCriteria {
    fn default() -> Self {
        Self { max_decay: 1e-3 }
    }
}

/// Least-squares slope of `log y` against `t` over the points with `y > floor`.
pub fn log_slope(t: &[f64], y: &[f64], floor: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(_, y)| **y > floor)
        .map(|(t, y)| (*t, y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Reference flow `u` (viscosity `nu1`) and assimilated flow `v` (`nu2`).
pub fn run_da_sync(
    p: &PhysicsParams,
    cfg: &SolverConfig,
    u0: &SpectralField,
    v0: &SpectralField,
    criteria: SyncCriteria,
) -> Result<ExperimentReport, ExperimentError> {
    let start = Instant::now();
    let mut report = ExperimentReport::new("synchronization");
    let admissible = admissibility(&p.interp, p.nu2, p.mu, false);
    report.scalars.insert("nudging_number".into(), p.interp.nudging_number(p.mu));
    let spec = SystemSpec::new(SystemKind::Da);
    let mut diff = Vec::new();
    let traj = integrate_observed(&spec, &[("u", u0), ("v", v0)], p, cfg, &mut |v| {
        let d = v.get("u").unwrap() - v.get("v").unwrap();
        diff.push(norm(&d).l2);
    })
    .map_err(ctx("assimilation run"))?;
    let d0 = diff[0];
    let dt_end = *diff.last().unwrap();
    let decay = if d0 > 0.0 { dt_end / d0 } else { 0.0 };
    let slope = log_slope(&traj.times, &diff, 1e-12);
    report.scalars.insert("initial_difference".into(), d0);
    report.scalars.insert("final_difference".into(), dt_end);
    report.scalars.insert("max_difference".into(), diff.iter().fold(0.0, |m, x| m.max(*x)));
    report.scalars.insert("decay_factor".into(), decay);
    report.scalars.insert("fitted_rate".into(), slope.unwrap_or(f64::NAN));

    if !admissible {
        report.metadata.notes.push(format!(
            "mu c0 h^2 = {:.4e} exceeds nu = {:.4e}; the convergence theorem does not cover this run",
            p.interp.nudging_number(p.mu),
            p.nu2
        ));
        report.verdicts.push(Verdict::inconclusive(
            "admissibility",
            "synchronization",
            "nudging configuration outside the admissible range",
        ));
    } else {
        report
            .verdicts
            .push(Verdict::new("admissibility", "synchronization", true, "mu c0 h^2 <= nu"));
    }

    if d0 == 0.0 {
        report.verdicts.push(Verdict::new(
            "synchronized",
            "synchronization",
            dt_end == 0.0 || diff.iter().all(|d| *d < 1e-12),
            format!("identical initial data, max difference {:.3e}", report.scalars["max_difference"]),
        ));
    } else if p.mu == 0.0 {
        report.verdicts.push(Verdict::inconclusive(
            "decay",
            "synchronization",
            format!("control run without nudging: decay factor {decay:.3e}"),
        ));
    } else {
        let neg = slope.is_some_and(|s| s < 0.0);
        report.verdicts.push(Verdict::new(
            "decay",
            "synchronization",
            decay <= criteria.max_decay && neg,
            format!(
                "decay factor {decay:.3e} (limit {:e}), fitted rate {:.4}",
                criteria.max_decay,
                slope.unwrap_or(f64::NAN)
            ),
        ));
    }
    report.push_apriori(check_apriori(&traj, p));
    let hash = hash_run("synchronization", p, cfg, &format!("{criteria:?}"), &[u0, v0]);
    Ok(report.finish(hash, start))
}

/// Assimilation run in which only `v`'s viscosity jumps to `nu_new` at `t_switch`.
pub fn run_reynolds_switch(
    p: &PhysicsParams,
    cfg: &SolverConfig,
    u0: &SpectralField,
    v0: &SpectralField,
    t_switch: f64,
    nu_new: f64,
) -> Result<(ExperimentReport, Trajectory), ExperimentError> {
    let start = Instant::now();
    if !(t_switch > 0.0 && t_switch < cfg.t_end) {
        return Err(ExperimentError::InvalidSpec(format!(
            "t_switch = {t_switch} must lie strictly inside (0, {})",
            cfg.t_end
        )));
    }
    if !(nu_new > 0.0 && nu_new.is_finite()) {
        return Err(ExperimentError::InvalidSpec(format!("nu_new = {nu_new} must be positive")));
    }
    let mut spec = SystemSpec::new(SystemKind::Da);
    spec.set_switch("v", ViscositySwitch { t_switch, nu_new })?;
    let traj = integrate(&spec, &[("u", u0), ("v", v0)], p, cfg).map_err(ctx("switched run"))?;
    let mut report = ExperimentReport::new("reynolds-switch");
    report
        .verdicts
        .push(Verdict::new("no-blow-up", "reynolds-switch", true, "run completed"));
    let checks = check_apriori(&traj, p);
    let v_ok = checks.iter().filter(|c| c.name.starts_with("v[")).all(|c| c.pass);
    report.verdicts.push(Verdict::new(
        "piecewise-bounds",
        "reynolds-switch",
        v_ok,
        "v stays within the a-priori bounds on both viscosity windows",
    ));
    let vn = traj.norms_of("v").unwrap();
    report
        .scalars
        .insert("sup_v_h1".into(), vn.iter().fold(0.0, |m, x| m.max(x.h1)));
    report
        .scalars
        .insert("sup_v_l2".into(), vn.iter().fold(0.0, |m, x| m.max(x.l2)));
    report.scalars.insert("max_cfl".into(), traj.max_cfl);
    report.push_apriori(checks);
    let hash = hash_run(
        "reynolds-switch",
        p,
        cfg,
        &format!("t_switch={t_switch:e}|nu_new={nu_new:e}"),
        &[u0, v0],
    );
    Ok((report.finish(hash, start), traj))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaylorGreenSpec {
    pub n: usize,
    pub nu: f64,
    pub dt: f64,
    pub t_end: f64,
    /// Number of halving offsets in the quotient limit check.
    pub deltas: usize,
    /// Coarsest step of the order measurement.
    pub order_dt: f64,
    #[serde(default)]
    pub execution: crate::par::Execution,
}

impl Default for TaylorGreenSpec {
    fn default() -> Self {
        Self {
            n: 64,
            nu: 0.01,
            dt: 1e-3,
            t_end: 1.0,
            deltas: 5,
            order_dt: 0.05,
            execution: Default::default(),
        }
    }
}

/// Taylor-Green decay rate `8 pi^2`.
const TG_RATE: f64 = 8.0 * PI * PI;

/// Closed-form checks of the solver, the sensitivity and the quotient limit.
pub fn run_taylor_green_suite(tg: &TaylorGreenSpec) -> Result<ExperimentReport, ExperimentError> {
    let start = Instant::now();
    let grid = GridSpec::new(tg.n).map_err(DynamicsError::from)?;
    let u0 = taylor_green(&grid);
    let mut report = ExperimentReport::new("taylor-green");
    let p = PhysicsParams::new(tg.nu, tg.nu, 0.0, crate::interp::InterpolantSpec::spectral_projection(1));
    let cfg = SolverConfig::new(tg.dt, tg.t_end)
        .with_sample_every((0.1 / tg.dt).round().max(1.0) as usize)
        .with_execution(tg.execution);
    let t = tg.t_end;
    let decay = |nu: f64| (-TG_RATE * nu * t).exp();

    let sens = integrate(&SystemSpec::new(SystemKind::NseSens), &[("u", &u0)], &p, &cfg).map_err(ctx("sensitivity run"))?;
    let u_exact = u0.scaled(decay(tg.nu));
    let ut_exact = u_exact.scaled(-TG_RATE * t);
    let u_num = sens.final_state("u").unwrap();
    let ut_num = sens.final_state("ut").unwrap();
    let rel = |a: &SpectralField, b: &SpectralField| norm(&(a - b)).l2 / norm(b).l2;
    let e_u = rel(u_num, &u_exact);
    let e_ut = rel(ut_num, &ut_exact);
    report.scalars.insert("nse_relative_error".into(), e_u);
    report.scalars.insert("sensitivity_relative_error".into(), e_ut);
    report.scalars.insert("u_final_l2".into(), norm(u_num).l2);
    report.scalars.insert("ut_final_l2".into(), norm(ut_num).l2);
    report.verdicts.push(Verdict::new(
        "nse-decay",
        "taylor-green-nse",
        e_u < INTEGRATOR_TOLERANCE,
        format!("relative L2 error {e_u:.3e}"),
    ));
    report.verdicts.push(Verdict::new(
        "sensitivity",
        "taylor-green-sensitivity",
        e_ut < 10.0 * INTEGRATOR_TOLERANCE,
        format!("relative L2 error {e_ut:.3e}"),
    ));
    report.push_apriori(check_apriori(&sens, &p));

    // quotient limit at fixed t
    let deltas: Vec<f64> = (1..=tg.deltas).map(|n| tg.nu * 0.5f64.powi(n as i32)).collect();
    let nse = SystemSpec::new(SystemKind::Nse);
    let finals = par::map(tg.execution, deltas.clone(), |d| {
        let pd = PhysicsParams::new(tg.nu + d, tg.nu + d, 0.0, p.interp);
        let c = SolverConfig { sample_every: usize::MAX, ..cfg.clone() };
        integrate(&nse, &[("u", &u0)], &pd, &c).map(|tr| tr.final_state("u").unwrap().clone())
    });
    let mut prev: Option<f64> = None;
    let mut ratios = Vec::new();
    for (d, u2) in deltas.iter().zip(finals) {
        let u2 = u2.map_err(ctx(format!("quotient run delta = {d:e}")))?;
        let q = dq_field(u_num, &u2, tg.nu, tg.nu + d)?;
        let e = norm(&(&q - ut_num)).l2;
        let ratio = prev.map(|pv| e / pv);
        if let Some(r) = ratio {
            ratios.push(r);
        }
        prev = Some(e);
        report.table.push(TableRow {
            delta: *d,
            error: e,
            ratio,
        });
    }
    let linear = ratios.iter().all(|r| (0.4..=0.6).contains(r)) && !ratios.is_empty();
    report.verdicts.push(Verdict::new(
        "quotient-limit",
        "taylor-green-sensitivity",
        linear,
        format!("|D(t) - ut(t)| ratios {ratios:.3?}"),
    ));

    let closed = |tt: f64| vec![u0.scaled((-TG_RATE * tg.nu * tt).exp())];
    let ocfg = SolverConfig::new(tg.order_dt, t).with_execution(tg.execution);
    let order = step_convergence_order(&nse, &[("u", &u0)], &p, &ocfg, OrderReference::ClosedForm(&closed))
        .map_err(ctx("order measurement"))?;
    report.scalars.insert("measured_order".into(), order.order);
    report.verdicts.push(Verdict::new(
        "order",
        "infrastructure",
        (1.8..=2.2).contains(&order.order),
        format!(
            "order {:.3}, errors [{}] at dt {:?}",
            order.order,
            order.errors.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>().join(", "),
            order.dts
        ),
    ));
    let hash = config_hash(&format!("taylor-green|{tg:?}"), &[]);
    Ok(report.finish(hash, start))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_spec_validation() {
        assert!(DQSweepSpec::halving(0.01, 5).validate().is_ok());
        let mut s = DQSweepSpec::halving(0.01, 3);
        s.deltas.swap(0, 1);
        assert!(s.validate().is_err());
        let mut s = DQSweepSpec::halving(0.01, 1);
        s.deltas[0] = 0.006;
        assert!(s.validate().is_err());
        assert!(DQSweepSpec::halving(0.01, 0).validate().is_err());
    }

    #[test]
    fn trajectory_norms() {
        let t = [0.0, 1.0, 2.0];
        let y = [1.0, 1.0, 1.0];
        let z = [0.0, 0.0, 0.0];
        assert!((TrajectoryNorm::L2H.evaluate(&t, &y, &z) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(TrajectoryNorm::L2V.evaluate(&t, &y, &z), 0.0);
        assert_eq!(TrajectoryNorm::LinfH.evaluate(&t, &[1.0, 3.0, 2.0], &z), 3.0);
    }

    #[test]
    fn slope_fit() {
        let t: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| (-3.0 * t).exp()).collect();
        assert!((log_slope(&t, &y, 1e-12).unwrap() + 3.0).abs() < 1e-12);
        assert!(log_slope(&t, &[0.0; 10], 1e-12).is_none());
    }

    #[test]
    fn hash_depends_on_fields() {
        let g = GridSpec::new(8).unwrap();
        let a = SpectralField::zeros(&g);
        let b = taylor_green(&g);
        assert_ne!(config_hash("x", &[&a]), config_hash("x", &[&b]));
        assert_eq!(config_hash("x", &[&b]), config_hash("x", &[&b]));
        assert_eq!(config_hash("x", &[]).len(), 64);
    }
}
