//! Second-order implicit-explicit time integration of a coupled stack.
//!
//! The stiff term `-nu A x` and the parent source `-A p` are advanced with
//! Crank-Nicolson, the remaining terms with second-order Adams-Bashforth. The
//! first step is a Crank-Nicolson / Heun predictor-corrector. Because every
//! member is updated after its parents, the parent's new value is available
//! for the source, which makes the evolved difference quotient agree with the
//! quotient of the evolved flows to rounding.

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{explicit_part, DynamicsError, Equation, PhysicsParams, SystemKind, SystemSpec, ViscositySwitch};
use crate::interp::admissibility;
use crate::par::{self, Execution};
use crate::spectral::{galerkin_in_place, norm, GridSpec, NormTriple, Physical, SpectralField};

/// Blow-up is declared once a norm exceeds this multiple of its initial size
/// (floored at one).
pub const BLOWUP_FACTOR: f64 = 1e6;
pub const CFL_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdmissibilityPolicy {
    /// Refuse to integrate an inadmissible nudging configuration.
    #[default]
    Enforce,
    /// Integrate anyway and record a note on the trajectory.
    Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "one")]
    pub sample_every: usize,
    /// Store full states every this many samples; the first and last are
    /// always stored.
    #[serde(default)]
    pub snapshot_every: Option<usize>,
    #[serde(default)]
    pub admissibility: AdmissibilityPolicy,
    #[serde(default)]
    pub execution: Execution,
}

fn one() -> usize {
    1
}

impl SolverConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        Self {
            dt,
            t_end,
            sample_every: 1,
            snapshot_every: None,
            admissibility: AdmissibilityPolicy::Enforce,
            execution: Execution::default(),
        }
    }

    pub fn with_sample_every(mut self, k: usize) -> Self {
        self.sample_every = k;
        self
    }

    pub fn with_policy(mut self, policy: AdmissibilityPolicy) -> Self {
        self.admissibility = policy;
        self
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.execution = exec;
        self
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), IntegrateError> {
        let bad = |s: String| Err(IntegrateError::InvalidConfig(s));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt = {} must be positive", self.dt));
        }
        if !(self.t_end.is_finite() && self.dt <= self.t_end) {
            return bad(format!("t_end = {} must be at least dt = {}", self.t_end, self.dt));
        }
        let r = self.t_end / self.dt;
        if (r - r.round()).abs() > 1e-9 * r.round() {
            return bad(format!("t_end / dt = {r} is not an integer"));
        }
        if self.sample_every == 0 {
            return bad("sample_every must be at least 1".into());
        }
        if self.snapshot_every == Some(0) {
            return bad("snapshot_every must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrateError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid initial data for {member}: {reason}")]
    InvalidInitial { member: String, reason: String },
    #[error(
        "nudging is not admissible for {member}: mu c0 h^2 = {nudging_number:.4e}{} exceeds nu = {nu:.4e}",
        if *strict { " (times 4)" } else { "" }
    )]
    Admissibility {
        member: String,
        nu: f64,
        nudging_number: f64,
        strict: bool,
    },
    #[error("dt * mu = {0:.4e} exceeds 1")]
    StepTooLarge(f64),
    #[error("blow-up of {member} at t = {time} (step {step})")]
    BlowUp {
        member: String,
        time: f64,
        step: usize,
        /// Sampled `(t, |x|)` history of the offending member up to the blow-up.
        history: Vec<(f64, f64)>,
    },
    #[error("reference must be finer than dt / 4, got refinement factor {0}")]
    DegenerateRefinement(usize),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberInfo {
    pub name: String,
    pub equation: Equation,
    pub nu: f64,
    pub switch: Option<ViscositySwitch>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub fields: Vec<SpectralField>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub kind: SystemKind,
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    pub mu: f64,
    pub members: Vec<MemberInfo>,
    pub times: Vec<f64>,
    /// `norms[member][sample]`.
    pub norms: Vec<Vec<NormTriple>>,
    /// `|g(t)|` per sample for flow members, where `g` is the body force plus
    /// the observed part of the nudging.
    pub sources: Vec<Option<Vec<f64>>>,
    pub cfl_violations: usize,
    pub max_cfl: f64,
    pub max_projection_drift: f64,
    pub admissibility_notes: Vec<String>,
    #[serde(skip)]
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.members.iter().position(|m| m.name == name)
    }

    pub fn norms_of(&self, name: &str) -> Option<&[NormTriple]> {
        self.index_of(name).map(|i| self.norms[i].as_slice())
    }

    pub fn final_state(&self, name: &str) -> Option<&SpectralField> {
        let i = self.index_of(name)?;
        self.snapshots.last().map(|s| &s.fields[i])
    }

    pub fn initial_state(&self, name: &str) -> Option<&SpectralField> {
        let i = self.index_of(name)?;
        self.snapshots.first().map(|s| &s.fields[i])
    }
}

/// State handed to the observer at every sample.
pub struct SampleView<'a> {
    pub sample: usize,
    pub step: usize,
    pub t: f64,
    pub names: &'a [String],
    pub states: &'a [SpectralField],
}

impl SampleView<'_> {
    pub fn get(&self, name: &str) -> Option<&SpectralField> {
        self.names.iter().position(|n| n == name).map(|i| &self.states[i])
    }
}

pub fn integrate(
    spec: &SystemSpec,
    init: &[(&str, &SpectralField)],
    p: &PhysicsParams,
    cfg: &SolverConfig,
) -> Result<Trajectory, IntegrateError> {
    integrate_observed(spec, init, p, cfg, &mut |_| {})
}

pub fn integrate_observed(
    spec: &SystemSpec,
    init: &[(&str, &SpectralField)],
    p: &PhysicsParams,
    cfg: &SolverConfig,
    observer: &mut dyn FnMut(&SampleView),
) -> Result<Trajectory, IntegrateError> {
    cfg.validate()?;
    p.validate()?;
    spec.validate()?;
    let mut states = initial_states(spec, init)?;
    let grid = states[0].grid().clone();
    p.interp.validate(&grid).map_err(DynamicsError::from)?;
    let notes = check_nudging(spec, p, cfg)?;

    let m = spec.members.len();
    let steps = cfg.steps();
    let dt = cfg.dt;
    let names: Vec<String> = spec.members.iter().map(|x| x.name.clone()).collect();
    let lam = eigenvalues(&grid);
    let switch_steps: Vec<Option<(usize, f64)>> = spec
        .members
        .iter()
        .map(|mb| mb.switch.map(|s| ((s.t_switch / dt).round() as usize, s.nu_new)))
        .collect();
    let nu_at = |i: usize, n: usize| match switch_steps[i] {
        Some((k, nu)) if n >= k => nu,
        _ => spec.members[i].base_nu(p),
    };
    let time_at = |n: usize| if n == steps { cfg.t_end } else { n as f64 * dt };

    let limits: Vec<f64> = states.iter().map(|s| BLOWUP_FACTOR * norm(s).l2.max(1.0)).collect();
    let mut traj = Trajectory {
        kind: spec.kind,
        n: grid.n(),
        dt,
        t_end: cfg.t_end,
        mu: p.mu,
        members: spec
            .members
            .iter()
            .map(|mb| MemberInfo {
                name: mb.name.clone(),
                equation: mb.equation,
                nu: mb.base_nu(p),
                switch: mb.switch,
            })
            .collect(),
        times: Vec::new(),
        norms: vec![Vec::new(); m],
        sources: spec
            .members
            .iter()
            .map(|mb| mb.equation.is_flow().then(Vec::new))
            .collect(),
        cfl_violations: 0,
        max_cfl: 0.0,
        max_projection_drift: 0.0,
        admissibility_notes: notes,
        snapshots: Vec::new(),
    };

    let exec = cfg.execution;
    let mut e_prev: Vec<SpectralField> = Vec::new();
    let mut sample = 0usize;
    for n in 0..=steps {
        let t = time_at(n);
        if n % cfg.sample_every == 0 || n == steps {
            record_sample(&mut traj, spec, p, &states, t, sample, n == steps, cfg.snapshot_every)?;
            observer(&SampleView {
                sample,
                step: n,
                t,
                names: &names,
                states: &states,
            });
            sample += 1;
        }
        if n == steps {
            break;
        }
        let t1 = time_at(n + 1);
        let nus: Vec<f64> = (0..m).map(|i| nu_at(i, n)).collect();
        let (e_n, phys) = explicit_all(spec, p, &states, t, exec)?;
        track_cfl(&mut traj, spec, &phys, dt, grid.n());
        let mut next: Vec<SpectralField> = Vec::with_capacity(m);
        if n == 0 {
            let mut pred: Vec<SpectralField> = Vec::with_capacity(m);
            for i in 0..m {
                let src = parent_pair(spec, i, &states, &pred);
                pred.push(cn_update(&states[i], &lam, nus[i], dt, &e_n[i], src));
            }
            let (e_star, _) = explicit_all(spec, p, &pred, t1, exec)?;
            for i in 0..m {
                let mut e = e_n[i].scaled(0.5);
                e.axpy(0.5, &e_star[i]);
                let src = parent_pair(spec, i, &states, &next);
                next.push(cn_update(&states[i], &lam, nus[i], dt, &e, src));
            }
        } else {
            for i in 0..m {
                let mut e = e_n[i].scaled(1.5);
                e.axpy(-0.5, &e_prev[i]);
                let src = parent_pair(spec, i, &states, &next);
                next.push(cn_update(&states[i], &lam, nus[i], dt, &e, src));
            }
        }
        for x in &mut next {
            let before = x.clone();
            galerkin_in_place(x);
            let scale = before.max_abs();
            if scale > 0.0 {
                traj.max_projection_drift = traj.max_projection_drift.max(before.max_abs_diff(x) / scale);
            }
        }
        for (i, x) in next.iter().enumerate() {
            let l2 = norm(x).l2;
            if x.has_non_finite() || !l2.is_finite() || l2 > limits[i] {
                let mut history: Vec<(f64, f64)> =
                    traj.times.iter().zip(&traj.norms[i]).map(|(t, nt)| (*t, nt.l2)).collect();
                history.push((t1, l2));
                return Err(IntegrateError::BlowUp {
                    member: names[i].clone(),
                    time: t1,
                    step: n + 1,
                    history,
                });
            }
        }
        states = next;
        e_prev = e_n;
    }
    if traj.cfl_violations > 0 {
        warn!(
            "CFL number reached {:.3} (> {CFL_LIMIT}) on {} steps",
            traj.max_cfl, traj.cfl_violations
        );
    }
    Ok(traj)
}

fn initial_states(spec: &SystemSpec, init: &[(&str, &SpectralField)]) -> Result<Vec<SpectralField>, IntegrateError> {
    for (name, _) in init {
        if spec.index_of(name).is_none() {
            return Err(IntegrateError::InvalidInitial {
                member: name.to_string(),
                reason: "no such member in the stack".into(),
            });
        }
    }
    let grid = match init.first() {
        Some((_, f)) => f.grid().clone(),
        None => {
            return Err(IntegrateError::InvalidInitial {
                member: spec.members[0].name.clone(),
                reason: "no initial data given".into(),
            })
        }
    };
    let mut out = Vec::with_capacity(spec.members.len());
    for mb in &spec.members {
        let given = init.iter().find(|(n, _)| *n == mb.name).map(|(_, f)| *f);
        let bad = |reason: String| IntegrateError::InvalidInitial {
            member: mb.name.clone(),
            reason,
        };
        let field = match given {
            Some(f) => {
                grid.check_same(f.grid()).map_err(|e| bad(e.to_string()))?;
                if f.has_non_finite() {
                    return Err(bad("non-finite coefficients".into()));
                }
                let scale = f.max_abs().max(1.0);
                if f.conjugate_symmetry_defect() > 1e-10 * scale {
                    return Err(bad("field is not real-valued".into()));
                }
                if f.divergence_residual() > 1e-10 * scale {
                    return Err(bad("field is not divergence-free".into()));
                }
                let mut g = f.clone();
                galerkin_in_place(&mut g);
                if g.max_abs_diff(f) > 1e-12 * scale {
                    info!("initial data for {} projected onto the dealiased band", mb.name);
                }
                if !mb.equation.is_flow() && !g.is_zero() {
                    warn!("nonzero initial data for {} is outside the analysed regime", mb.name);
                }
                g
            }
            None if mb.equation.is_flow() => return Err(bad("missing initial data".into())),
            None => SpectralField::zeros(&grid),
        };
        out.push(field);
    }
    Ok(out)
}

fn check_nudging(spec: &SystemSpec, p: &PhysicsParams, cfg: &SolverConfig) -> Result<Vec<String>, IntegrateError> {
    let mut notes = Vec::new();
    let nudged = spec.members.iter().any(|mb| mb.equation.is_nudged());
    if !nudged || p.mu == 0.0 {
        return Ok(notes);
    }
    if cfg.dt * p.mu > 1.0 {
        return Err(IntegrateError::StepTooLarge(cfg.dt * p.mu));
    }
    for mb in spec.members.iter().filter(|mb| mb.equation.is_nudged()) {
        let strict = mb.equation.needs_strict_admissibility();
        let mut nus = vec![mb.base_nu(p)];
        if let Some(s) = mb.switch {
            nus.push(s.nu_new);
        }
        for nu in nus {
            if !admissibility(&p.interp, nu, p.mu, strict) {
                let err = IntegrateError::Admissibility {
                    member: mb.name.clone(),
                    nu,
                    nudging_number: p.interp.nudging_number(p.mu),
                    strict,
                };
                match cfg.admissibility {
                    AdmissibilityPolicy::Enforce => return Err(err),
                    AdmissibilityPolicy::Report => {
                        warn!("{err}");
                        notes.push(err.to_string());
                    }
                }
            }
        }
    }
    Ok(notes)
}

fn eigenvalues(grid: &GridSpec) -> Vec<f64> {
    let n = grid.n();
    let mut lam = vec![0.0; n * n];
    for ix in 0..n {
        for iy in 0..n {
            lam[ix * n + iy] = grid.eigenvalue(ix, iy);
        }
    }
    lam
}

fn explicit_all(
    spec: &SystemSpec,
    p: &PhysicsParams,
    states: &[SpectralField],
    t: f64,
    exec: Execution,
) -> Result<(Vec<SpectralField>, Vec<Physical>), IntegrateError> {
    let grid = states[0].grid();
    let phys: Vec<Physical> = if spec.advection {
        par::map(exec, states.iter().collect(), Physical::new)
    } else {
        // only the velocities are needed for the CFL estimate
        states.iter().map(Physical::velocity_only).collect()
    };
    let forcing = p.forcing.at(grid, t);
    let idx: Vec<usize> = (0..states.len()).collect();
    let es = par::map(exec, idx, |i| explicit_part(spec, i, states, &phys, p, &forcing));
    let es = es.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok((es, phys))
}

fn track_cfl(traj: &mut Trajectory, spec: &SystemSpec, phys: &[Physical], dt: f64, n: usize) {
    let speed = spec
        .members
        .iter()
        .zip(phys)
        .filter(|(mb, _)| mb.equation.is_flow())
        .map(|(_, ph)| ph.max_speed())
        .fold(0.0, f64::max);
    let cfl = dt * n as f64 * speed;
    traj.max_cfl = traj.max_cfl.max(cfl);
    if cfl > CFL_LIMIT {
        traj.cfl_violations += 1;
    }
}

fn parent_pair<'a>(
    spec: &SystemSpec,
    i: usize,
    old: &'a [SpectralField],
    new: &'a [SpectralField],
) -> Option<(&'a SpectralField, &'a SpectralField)> {
    spec.members[i].equation.source_parent().map(|j| (&old[j], &new[j]))
}

/// Per-mode Crank-Nicolson update with explicit increment `e` and trapezoidal
/// parent source `-A (p_old + p_new) / 2`.
fn cn_update(
    x: &SpectralField,
    lam: &[f64],
    nu: f64,
    dt: f64,
    e: &SpectralField,
    src: Option<(&SpectralField, &SpectralField)>,
) -> SpectralField {
    let plane = lam.len();
    let mut out = x.clone();
    let xo = x.coefficients();
    let eo = e.coefficients();
    let data = out.coefficients_mut();
    for c in 0..2 {
        for (j, &l) in lam.iter().enumerate() {
            let k = c * plane + j;
            let h = 0.5 * nu * l * dt;
            let mut rhs = xo[k] * (1.0 - h) + eo[k] * dt;
            if let Some((pa, pb)) = src {
                rhs -= (pa.coefficients()[k] + pb.coefficients()[k]) * (0.5 * dt * l);
            }
            data[k] = rhs / (1.0 + h);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn record_sample(
    traj: &mut Trajectory,
    spec: &SystemSpec,
    p: &PhysicsParams,
    states: &[SpectralField],
    t: f64,
    sample: usize,
    last: bool,
    snapshot_every: Option<usize>,
) -> Result<(), IntegrateError> {
    traj.times.push(t);
    let grid = states[0].grid();
    let forcing = p.forcing.at(grid, t);
    for (i, (mb, x)) in spec.members.iter().zip(states).enumerate() {
        traj.norms[i].push(norm(x));
        if let Some(src) = traj.sources[i].as_mut() {
            let g = match mb.equation {
                Equation::Da { reference } => forcing.try_add(&p.observed(&states[reference])?).map_err(DynamicsError::from)?,
                _ => forcing.clone(),
            };
            src.push(norm(&g).l2);
        }
    }
    let wanted = sample == 0 || last || snapshot_every.is_some_and(|k| sample.is_multiple_of(k));
    if wanted {
        traj.snapshots.push(Snapshot {
            time: t,
            fields: states.to_vec(),
        });
    }
    Ok(())
}

/// Reference solution for [`step_convergence_order`].
pub enum OrderReference<'a> {
    /// Exact states of every member at `t_end`, in stack order.
    ClosedForm(&'a dyn Fn(f64) -> Vec<SpectralField>),
    /// Numerical solution with step `dt / factor`.
    Refined { factor: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub dts: Vec<f64>,
    pub errors: Vec<f64>,
    /// Least-squares slope of `log error` against `log dt`.
    pub order: f64,
}

/// Integrates with `dt`, `dt/2` and `dt/4` and measures the relative error of
/// the final states against `reference`.
pub fn step_convergence_order(
    spec: &SystemSpec,
    init: &[(&str, &SpectralField)],
    p: &PhysicsParams,
    cfg: &SolverConfig,
    reference: OrderReference,
) -> Result<ConvergenceReport, IntegrateError> {
    let final_states = |dt: f64| -> Result<Vec<SpectralField>, IntegrateError> {
        let mut c = cfg.clone();
        c.dt = dt;
        c.sample_every = usize::MAX;
        c.snapshot_every = None;
        let mut last = Vec::new();
        integrate_observed(spec, init, p, &c, &mut |v| last = v.states.to_vec())?;
        Ok(last)
    };
    let exact = match reference {
        OrderReference::ClosedForm(f) => f(cfg.t_end),
        OrderReference::Refined { factor } => {
            if factor <= 4 {
                return Err(IntegrateError::DegenerateRefinement(factor));
            }
            final_states(cfg.dt / factor as f64)?
        }
    };
    let ref_norm: f64 = exact.iter().map(|f| norm(f).l2.powi(2)).sum::<f64>().sqrt();
    let mut dts = Vec::new();
    let mut errors = Vec::new();
    for k in 0..3 {
        let dt = cfg.dt / f64::from(1u32 << k);
        let got = final_states(dt)?;
        let err: f64 = got
            .iter()
            .zip(&exact)
            .map(|(a, b)| norm(&(a - b)).l2.powi(2))
            .sum::<f64>()
            .sqrt();
        dts.push(dt);
        errors.push(err / ref_norm.max(f64::MIN_POSITIVE));
    }
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / 3.0;
    let my = ys.iter().sum::<f64>() / 3.0;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(ConvergenceReport {
        dts,
        errors,
        order: sxy / sxx,
    })
}
