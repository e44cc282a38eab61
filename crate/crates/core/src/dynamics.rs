//! Right-hand sides of the six evolution systems.
//!
//! Every equation is written as `dx/dt = -nu A x + E(x, ...) - A(p)`, where
//! `E` collects advection, forcing and nudging and `p` is an optional parent
//! field entering through the linear source `-A p` (sensitivity and
//! difference-quotient systems). The time stepper treats `-nu A x` and the
//! source implicitly and `E` explicitly.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interp::{interpolate, InterpError, InterpolantSpec};
use crate::spectral::{
    advect_sum, galerkin_in_place, stokes_apply, GridSpec, Physical, SpectralError, SpectralField,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("degenerate difference quotient: nu_a == nu_b == {0}")]
    DegenerateQuotient(f64),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Interp(#[from] InterpError),
    #[error("invalid physics parameters: {0}")]
    InvalidParams(String),
    #[error("invalid system stack: {0}")]
    InvalidSystem(String),
}

/// Body force `f(t)`, stored already projected onto the dealiased solenoidal
/// subspace.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum Forcing {
    #[default]
    Zero,
    Steady(SpectralField),
    /// Samples `(t, f)` in increasing time, linearly interpolated and held
    /// constant outside the table.
    Tabulated(Vec<(f64, SpectralField)>),
}

impl Forcing {
    pub fn steady(f: &SpectralField) -> Self {
        let mut f = f.clone();
        galerkin_in_place(&mut f);
        Forcing::Steady(f)
    }

    pub fn tabulated(mut samples: Vec<(f64, SpectralField)>) -> Self {
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (_, f) in &mut samples {
            galerkin_in_place(f);
        }
        Forcing::Tabulated(samples)
    }

    pub fn at(&self, grid: &GridSpec, t: f64) -> SpectralField {
        match self {
            Forcing::Zero => SpectralField::zeros(grid),
            Forcing::Steady(f) => f.clone(),
            Forcing::Tabulated(s) => {
                if s.is_empty() {
                    return SpectralField::zeros(grid);
                }
                if t <= s[0].0 {
                    return s[0].1.clone();
                }
                for w in s.windows(2) {
                    let (t0, f0) = (&w[0].0, &w[0].1);
                    let (t1, f1) = (&w[1].0, &w[1].1);
                    if t <= *t1 {
                        let a = (t - t0) / (t1 - t0);
                        let mut out = f0.scaled(1.0 - a);
                        out.axpy(a, f1);
                        return out;
                    }
                }
                s[s.len() - 1].1.clone()
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Forcing::Zero => true,
            Forcing::Steady(f) => f.is_zero(),
            Forcing::Tabulated(s) => s.iter().all(|(_, f)| f.is_zero()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhysicsParams {
    /// Inverse Reynolds number of the reference flow.
    pub nu1: f64,
    /// Inverse Reynolds number of the assimilating / perturbed flow.
    pub nu2: f64,
    /// Nudging gain.
    pub mu: f64,
    pub forcing: Forcing,
    pub interp: InterpolantSpec,
}

impl PhysicsParams {
    pub fn new(nu1: f64, nu2: f64, mu: f64, interp: InterpolantSpec) -> Self {
        Self {
            nu1,
            nu2,
            mu,
            forcing: Forcing::Zero,
            interp,
        }
    }

    pub fn with_forcing(mut self, forcing: Forcing) -> Self {
        self.forcing = forcing;
        self
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.nu1 > 0.0 && self.nu1.is_finite()) {
            return Err(DynamicsError::InvalidParams(format!("nu1 = {} must be positive", self.nu1)));
        }
        if !(self.nu2 > 0.0 && self.nu2.is_finite()) {
            return Err(DynamicsError::InvalidParams(format!("nu2 = {} must be positive", self.nu2)));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(DynamicsError::InvalidParams(format!("mu = {} must be non-negative", self.mu)));
        }
        Ok(())
    }

    /// `mu G(I_h(a - b))` with `G` the Leray projection onto the dealiased band.
    pub(crate) fn nudge(&self, a: &SpectralField, b: &SpectralField) -> Result<SpectralField, DynamicsError> {
        if self.mu == 0.0 {
            return Ok(SpectralField::zeros(a.grid()));
        }
        let mut d = interpolate(&self.interp, &a.try_sub(b)?)?;
        galerkin_in_place(&mut d);
        Ok(d.scaled(self.mu))
    }

    /// `mu G(I_h(a))`, the data-driven part of the assimilation source.
    pub(crate) fn observed(&self, a: &SpectralField) -> Result<SpectralField, DynamicsError> {
        if self.mu == 0.0 {
            return Ok(SpectralField::zeros(a.grid()));
        }
        let mut d = interpolate(&self.interp, a)?;
        galerkin_in_place(&mut d);
        Ok(d.scaled(self.mu))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    Nse,
    Da,
    NseSens,
    DaSens,
    DqDirect,
    DaDqDirect,
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SystemKind::Nse => "nse",
            SystemKind::Da => "da",
            SystemKind::NseSens => "nse-sens",
            SystemKind::DaSens => "da-sens",
            SystemKind::DqDirect => "dq-direct",
            SystemKind::DaDqDirect => "da-dq-direct",
        };
        f.write_str(s)
    }
}

/// One evolved field and its couplings, expressed as indices of earlier
/// members of the stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "equation", rename_all = "kebab-case")]
pub enum Equation {
    Nse,
    Da { reference: usize },
    /// Sensitivity of the NSE member `base`.
    Sens { base: usize },
    /// Sensitivity of the DA member `base`, nudged toward the sensitivity `reference`.
    DaSens { base: usize, reference: usize },
    /// Difference quotient of the NSE members `first` (nu1) and `second` (nu2).
    Dq { first: usize, second: usize },
    /// Difference quotient of two DA members, nudged toward the quotient `reference`.
    DaDq { first: usize, second: usize, reference: usize },
}

impl Equation {
    /// Member entering through the linear source `-A p`.
    pub fn source_parent(&self) -> Option<usize> {
        match *self {
            Equation::Nse | Equation::Da { .. } => None,
            Equation::Sens { base } | Equation::DaSens { base, .. } => Some(base),
            Equation::Dq { first, .. } | Equation::DaDq { first, .. } => Some(first),
        }
    }

    fn references(&self) -> Vec<usize> {
        match *self {
            Equation::Nse => vec![],
            Equation::Da { reference } => vec![reference],
            Equation::Sens { base } => vec![base],
            Equation::DaSens { base, reference } => vec![base, reference],
            Equation::Dq { first, second } => vec![first, second],
            Equation::DaDq { first, second, reference } => vec![first, second, reference],
        }
    }

    pub fn is_flow(&self) -> bool {
        matches!(self, Equation::Nse | Equation::Da { .. })
    }

    pub fn is_nudged(&self) -> bool {
        matches!(self, Equation::Da { .. } | Equation::DaSens { .. } | Equation::DaDq { .. })
    }

    /// Members whose well-posedness needs `4 mu c0 h^2 <= nu`.
    pub fn needs_strict_admissibility(&self) -> bool {
        matches!(self, Equation::DaSens { .. } | Equation::DaDq { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Equation::Nse => "nse",
            Equation::Da { .. } => "da",
            Equation::Sens { .. } => "sens",
            Equation::DaSens { .. } => "da-sens",
            Equation::Dq { .. } => "dq",
            Equation::DaDq { .. } => "da-dq",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Viscosity {
    Nu1,
    Nu2,
}

/// Discontinuous change of a member's viscosity at `t_switch`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViscositySwitch {
    pub t_switch: f64,
    pub nu_new: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Member {
    pub name: String,
    pub equation: Equation,
    pub viscosity: Viscosity,
    pub switch: Option<ViscositySwitch>,
}

impl Member {
    pub fn new(name: &str, equation: Equation, viscosity: Viscosity) -> Self {
        Self {
            name: name.to_string(),
            equation,
            viscosity,
            switch: None,
        }
    }

    pub fn base_nu(&self, p: &PhysicsParams) -> f64 {
        match self.viscosity {
            Viscosity::Nu1 => p.nu1,
            Viscosity::Nu2 => p.nu2,
        }
    }
}

/// A stack of simultaneously integrated, coupled fields.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemSpec {
    pub kind: SystemKind,
    pub members: Vec<Member>,
    /// Disables every bilinear term (linear Stokes diagnostics).
    pub advection: bool,
}

impl SystemSpec {
    pub fn new(kind: SystemKind) -> Self {
        use Equation::*;
        use Viscosity::*;
        let members = match kind {
            SystemKind::Nse => vec![Member::new("u", Nse, Nu1)],
            SystemKind::Da => vec![
                Member::new("u", Nse, Nu1),
                Member::new("v", Da { reference: 0 }, Nu2),
            ],
            SystemKind::NseSens => vec![
                Member::new("u", Nse, Nu1),
                Member::new("ut", Sens { base: 0 }, Nu1),
            ],
            SystemKind::DaSens => vec![
                Member::new("u", Nse, Nu1),
                Member::new("ut", Sens { base: 0 }, Nu1),
                Member::new("v", Da { reference: 0 }, Nu1),
                Member::new("vt", DaSens { base: 2, reference: 1 }, Nu1),
            ],
            SystemKind::DqDirect => vec![
                Member::new("u1", Nse, Nu1),
                Member::new("u2", Nse, Nu2),
                Member::new("D", Dq { first: 0, second: 1 }, Nu2),
            ],
            SystemKind::DaDqDirect => vec![
                Member::new("u1", Nse, Nu1),
                Member::new("u2", Nse, Nu2),
                Member::new("v1", Da { reference: 0 }, Nu1),
                Member::new("v2", Da { reference: 1 }, Nu2),
                Member::new("D", Dq { first: 0, second: 1 }, Nu2),
                Member::new("Dp", DaDq { first: 2, second: 3, reference: 4 }, Nu2),
            ],
        };
        Self {
            kind,
            members,
            advection: true,
        }
    }

    pub fn custom(kind: SystemKind, members: Vec<Member>) -> Result<Self, DynamicsError> {
        let s = Self {
            kind,
            members,
            advection: true,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn without_advection(mut self) -> Self {
        self.advection = false;
        self
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.members.iter().position(|m| m.name == name)
    }

    pub fn set_switch(&mut self, name: &str, switch: ViscositySwitch) -> Result<(), DynamicsError> {
        let i = self
            .index_of(name)
            .ok_or_else(|| DynamicsError::InvalidSystem(format!("no member named {name}")))?;
        self.members[i].switch = Some(switch);
        Ok(())
    }

    /// Couplings must point at earlier members of the right type, which makes
    /// the per-step evaluation order acyclic.
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.members.is_empty() {
            return Err(DynamicsError::InvalidSystem("empty stack".into()));
        }
        for (i, m) in self.members.iter().enumerate() {
            if self.members[..i].iter().any(|o| o.name == m.name) {
                return Err(DynamicsError::InvalidSystem(format!("duplicate member {}", m.name)));
            }
            for r in m.equation.references() {
                if r >= i {
                    return Err(DynamicsError::InvalidSystem(format!(
                        "member {} references index {r}, which is not an earlier member",
                        m.name
                    )));
                }
            }
            let eq_of = |j: usize| self.members[j].equation;
            let bad = match m.equation {
                Equation::Nse => false,
                Equation::Da { reference } => !eq_of(reference).is_flow(),
                Equation::Sens { base } => eq_of(base) != Equation::Nse,
                Equation::DaSens { base, reference } => {
                    !matches!(eq_of(base), Equation::Da { .. }) || !matches!(eq_of(reference), Equation::Sens { .. })
                }
                Equation::Dq { first, second } => !eq_of(first).is_flow() || !eq_of(second).is_flow(),
                Equation::DaDq { first, second, reference } => {
                    !matches!(eq_of(first), Equation::Da { .. })
                        || !matches!(eq_of(second), Equation::Da { .. })
                        || !matches!(eq_of(reference), Equation::Dq { .. })
                }
            };
            if bad {
                return Err(DynamicsError::InvalidSystem(format!(
                    "member {} couples to a member of the wrong type",
                    m.name
                )));
            }
            if let Some(sw) = m.switch {
                if !(sw.nu_new > 0.0) {
                    return Err(DynamicsError::InvalidSystem(format!(
                        "switch viscosity {} for {} must be positive",
                        sw.nu_new, m.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Explicit part `E` of member `i` given the current states and their grid
/// representations.
pub(crate) fn explicit_part(
    spec: &SystemSpec,
    i: usize,
    states: &[SpectralField],
    phys: &[Physical],
    p: &PhysicsParams,
    forcing: &SpectralField,
) -> Result<SpectralField, DynamicsError> {
    let grid = states[i].grid();
    let m = &spec.members[i];
    let pairs: Vec<(usize, usize)> = match m.equation {
        Equation::Nse | Equation::Da { .. } => vec![(i, i)],
        Equation::Sens { base } | Equation::DaSens { base, .. } => vec![(i, base), (base, i)],
        Equation::Dq { first, second } | Equation::DaDq { first, second, .. } => vec![(second, i), (i, first)],
    };
    let mut e = if spec.advection {
        let refs: Vec<(&Physical, &Physical)> = pairs.iter().map(|&(a, b)| (&phys[a], &phys[b])).collect();
        advect_sum(grid, &refs).scaled(-1.0)
    } else {
        SpectralField::zeros(grid)
    };
    match m.equation {
        Equation::Nse => e.axpy(1.0, forcing),
        Equation::Da { reference } => {
            e.axpy(1.0, forcing);
            e.axpy(1.0, &p.nudge(&states[reference], &states[i])?);
        }
        Equation::DaSens { reference, .. } | Equation::DaDq { reference, .. } => {
            e.axpy(1.0, &p.nudge(&states[reference], &states[i])?);
        }
        Equation::Sens { .. } | Equation::Dq { .. } => {}
    }
    Ok(e)
}

fn assemble(x: &SpectralField, nu: f64, explicit: SpectralField, parent: Option<&SpectralField>) -> SpectralField {
    let mut out = explicit;
    out.axpy(-nu, &stokes_apply(x));
    if let Some(p) = parent {
        out.axpy(-1.0, &stokes_apply(p));
    }
    out
}

fn phys_all(fields: &[&SpectralField]) -> Vec<Physical> {
    fields.iter().map(|f| Physical::new(f)).collect()
}

fn same_grid(fields: &[&SpectralField]) -> Result<(), DynamicsError> {
    for f in &fields[1..] {
        fields[0].grid().check_same(f.grid())?;
    }
    Ok(())
}

fn eval_single(
    spec: &SystemSpec,
    target: usize,
    fields: &[&SpectralField],
    p: &PhysicsParams,
    t: f64,
    nu: f64,
) -> Result<SpectralField, DynamicsError> {
    same_grid(fields)?;
    let states: Vec<SpectralField> = fields.iter().map(|f| (*f).clone()).collect();
    let phys = phys_all(fields);
    let forcing = p.forcing.at(fields[0].grid(), t);
    let e = explicit_part(spec, target, &states, &phys, p, &forcing)?;
    let parent = spec.members[target].equation.source_parent().map(|j| &states[j]);
    Ok(assemble(&states[target], nu, e, parent))
}

/// `-nu A u - B(u, u) + f(t)`.
pub fn rhs_nse(u: &SpectralField, t: f64, p: &PhysicsParams, nu: f64) -> Result<SpectralField, DynamicsError> {
    eval_single(&SystemSpec::new(SystemKind::Nse), 0, &[u], p, t, nu)
}

/// `rhs_nse(v) + mu P_sigma(I_h(u_ref) - I_h(v))`.
pub fn rhs_da(
    v: &SpectralField,
    u_ref: &SpectralField,
    t: f64,
    p: &PhysicsParams,
    nu: f64,
) -> Result<SpectralField, DynamicsError> {
    eval_single(&SystemSpec::new(SystemKind::Da), 1, &[u_ref, v], p, t, nu)
}

/// `-B(ut, u) - B(u, ut) - nu A ut - A u`.
pub fn rhs_sens(ut: &SpectralField, u: &SpectralField, p: &PhysicsParams, nu: f64) -> Result<SpectralField, DynamicsError> {
    eval_single(&SystemSpec::new(SystemKind::NseSens), 1, &[u, ut], p, 0.0, nu)
}

/// `-B(vt, v) - B(v, vt) - nu A vt - A v + mu P_sigma I_h(ut - vt)`.
pub fn rhs_da_sens(
    vt: &SpectralField,
    v: &SpectralField,
    ut: &SpectralField,
    p: &PhysicsParams,
    nu: f64,
) -> Result<SpectralField, DynamicsError> {
    // Only the members coupled to vt matter; u is a placeholder.
    let placeholder = SpectralField::zeros(v.grid());
    eval_single(&SystemSpec::new(SystemKind::DaSens), 3, &[&placeholder, ut, v, vt], p, 0.0, nu)
}

/// `(a - b) / (nu_a - nu_b)`.
pub fn dq_field(a: &SpectralField, b: &SpectralField, nu_a: f64, nu_b: f64) -> Result<SpectralField, DynamicsError> {
    if nu_a == nu_b {
        return Err(DynamicsError::DegenerateQuotient(nu_a));
    }
    Ok(a.try_sub(b)?.scaled(1.0 / (nu_a - nu_b)))
}

/// `-B(u2, D) - B(D, u1) - nu2 A D - A u1`.
pub fn rhs_dq(
    d: &SpectralField,
    u1: &SpectralField,
    u2: &SpectralField,
    p: &PhysicsParams,
    nu2: f64,
) -> Result<SpectralField, DynamicsError> {
    eval_single(&SystemSpec::new(SystemKind::DqDirect), 2, &[u1, u2, d], p, 0.0, nu2)
}

/// `-B(Dp, v1) - B(v2, Dp) - nu2 A Dp - A v1 + mu P_sigma I_h(D - Dp)`.
pub fn rhs_da_dq(
    dp: &SpectralField,
    v1: &SpectralField,
    v2: &SpectralField,
    d: &SpectralField,
    p: &PhysicsParams,
    nu2: f64,
) -> Result<SpectralField, DynamicsError> {
    let z = SpectralField::zeros(v1.grid());
    eval_single(&SystemSpec::new(SystemKind::DaDqDirect), 5, &[&z, &z, v1, v2, d, dp], p, 0.0, nu2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_band_limited, random_smooth, seeded};
    use crate::spectral::{bilinear, inner, leray_project, norm, taylor_green, InnerKind};
    use std::f64::consts::PI;

    fn grid() -> GridSpec {
        GridSpec::new(16).unwrap()
    }

    fn params(mu: f64) -> PhysicsParams {
        PhysicsParams::new(0.01, 0.012, mu, InterpolantSpec::spectral_projection(3))
    }

    fn assert_close(a: &SpectralField, b: &SpectralField, tol: f64) {
        let scale = a.max_abs().max(b.max_abs()).max(1.0);
        let d = a.max_abs_diff(b);
        assert!(d <= tol * scale, "diff {d} scale {scale}");
    }

    #[test]
    fn nse_rhs_cases() {
        let g = grid();
        let p = params(0.0);
        let z = SpectralField::zeros(&g);
        assert!(rhs_nse(&z, 0.0, &p, 0.01).unwrap().is_zero());
        let u0 = taylor_green(&g);
        let r = rhs_nse(&u0, 0.0, &p, 0.01).unwrap();
        assert_close(&r, &u0.scaled(-8.0 * PI * PI * 0.01), 1e-13);
        // definitional assembly with forcing
        let mut rng = seeded(4);
        let u = random_band_limited(&g, &mut rng);
        let f = random_smooth(&g, &mut rng, 2.0);
        let pf = params(0.0).with_forcing(Forcing::steady(&f));
        let r = rhs_nse(&u, 0.3, &pf, 0.02).unwrap();
        let mut expect = stokes_apply(&u).scaled(-0.02);
        expect.axpy(-1.0, &bilinear(&u, &u).unwrap());
        expect.axpy(1.0, &f);
        assert_close(&r, &expect, 1e-12);
        assert!(r.divergence_residual() < 1e-13);
    }

    #[test]
    fn da_rhs_cases() {
        let g = grid();
        let mut rng = seeded(5);
        let u = random_band_limited(&g, &mut rng);
        let v = random_band_limited(&g, &mut rng);
        let p0 = params(0.0);
        assert_eq!(rhs_da(&v, &u, 0.0, &p0, 0.01).unwrap(), rhs_nse(&v, 0.0, &p0, 0.01).unwrap());
        let p = params(3.0);
        assert_eq!(rhs_da(&v, &v, 0.0, &p, 0.01).unwrap(), rhs_nse(&v, 0.0, &p, 0.01).unwrap());
        // difference above the projection cutoff is invisible to the nudging
        let mut hi = SpectralField::zeros(&g);
        hi.set_mode_pair(1, 5, 0, num_complex::Complex64::new(0.3, 0.1));
        let w = &v + &hi;
        let a = rhs_da(&v, &w, 0.0, &p, 0.01).unwrap();
        assert_close(&a, &rhs_nse(&v, 0.0, &p, 0.01).unwrap(), 1e-14);
        let full = rhs_da(&v, &u, 0.0, &p, 0.01).unwrap();
        let mut expect = rhs_nse(&v, 0.0, &p, 0.01).unwrap();
        let obs = &interpolate(&p.interp, &u).unwrap() - &interpolate(&p.interp, &v).unwrap();
        expect.axpy(3.0, &leray_project(&obs));
        assert_close(&full, &expect, 1e-13);
    }

    #[test]
    fn sensitivity_rhs_cases() {
        let g = grid();
        let p = params(0.0);
        let z = SpectralField::zeros(&g);
        assert!(rhs_sens(&z, &z, &p, 0.01).unwrap().is_zero());
        // Taylor-Green closed form: ut = c(t) u with c = -8 pi^2 t.
        let a = 8.0 * PI * PI;
        let nu = 0.01;
        let t = 0.7;
        let u = taylor_green(&g).scaled((-a * nu * t).exp());
        let ut = u.scaled(-a * t);
        let r = rhs_sens(&ut, &u, &p, nu).unwrap();
        // d/dt(-a t u) = -a u - a t (-a nu u)
        let expect = u.scaled(-a + a * a * nu * t);
        assert_close(&r, &expect, 1e-12);
        // energy identity
        let mut rng = seeded(8);
        let u = random_band_limited(&g, &mut rng);
        let ut = random_band_limited(&g, &mut rng);
        let r = rhs_sens(&ut, &u, &p, nu).unwrap();
        let lhs = inner(&r, &ut, InnerKind::L2).unwrap();
        let b = inner(&bilinear(&ut, &u).unwrap(), &ut, InnerKind::L2).unwrap();
        let rhs = -b - nu * norm(&ut).h1.powi(2) - inner(&stokes_apply(&u), &ut, InnerKind::L2).unwrap();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(rhs.abs()));
    }

    #[test]
    fn da_sensitivity_reduces() {
        let g = grid();
        let mut rng = seeded(12);
        let v = random_band_limited(&g, &mut rng);
        let vt = random_band_limited(&g, &mut rng);
        let ut = random_band_limited(&g, &mut rng);
        let p0 = params(0.0);
        assert_eq!(rhs_da_sens(&vt, &v, &ut, &p0, 0.01).unwrap(), rhs_sens(&vt, &v, &p0, 0.01).unwrap());
        let p = params(5.0);
        assert_eq!(rhs_da_sens(&vt, &v, &vt, &p, 0.01).unwrap(), rhs_sens(&vt, &v, &p, 0.01).unwrap());
    }

    #[test]
    fn dq_cases() {
        let g = grid();
        let mut rng = seeded(13);
        let a = random_band_limited(&g, &mut rng);
        assert!(dq_field(&a, &a, 0.01, 0.02).unwrap().is_zero());
        assert_eq!(dq_field(&a, &a, 0.01, 0.01), Err(DynamicsError::DegenerateQuotient(0.01)));
        let p = params(0.0);
        let z = SpectralField::zeros(&g);
        assert!(rhs_dq(&z, &z, &z, &p, 0.01).unwrap().is_zero());
        let u = random_band_limited(&g, &mut rng);
        let d = random_band_limited(&g, &mut rng);
        // u1 = u2, nu2 = nu1: identical to the sensitivity rhs term by term
        let x = rhs_dq(&d, &u, &u, &p, 0.01).unwrap();
        let y = rhs_sens(&d, &u, &p, 0.01).unwrap();
        assert_close(&x, &y, 1e-14);
        // Taylor-Green closed-form quotient
        let tg = taylor_green(&g);
        let (nu1, nu2, t) = (0.01, 0.013, 0.4);
        let k = 8.0 * PI * PI;
        let u1 = tg.scaled((-k * nu1 * t).exp());
        let u2 = tg.scaled((-k * nu2 * t).exp());
        let dq = dq_field(&u1, &u2, nu1, nu2).unwrap();
        let c = ((-k * nu1 * t).exp() - (-k * nu2 * t).exp()) / (nu1 - nu2);
        assert_close(&dq, &tg.scaled(c), 1e-12);
    }

    #[test]
    fn da_dq_cases() {
        let g = grid();
        let mut rng = seeded(14);
        let v1 = random_band_limited(&g, &mut rng);
        let v2 = random_band_limited(&g, &mut rng);
        let d = random_band_limited(&g, &mut rng);
        let dp = random_band_limited(&g, &mut rng);
        let p0 = params(0.0);
        let a = rhs_da_dq(&dp, &v1, &v2, &d, &p0, 0.012).unwrap();
        let b = rhs_dq(&dp, &v1, &v2, &p0, 0.012).unwrap();
        assert_eq!(a, b);
        let p = params(2.0);
        let a = rhs_da_dq(&d, &v1, &v1, &d, &p, 0.012).unwrap();
        let b = rhs_dq(&d, &v1, &v1, &p, 0.012).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_stacks_rejected() {
        let bad = vec![Member::new("ut", Equation::Sens { base: 0 }, Viscosity::Nu1)];
        assert!(SystemSpec::custom(SystemKind::NseSens, bad).is_err());
        let bad = vec![
            Member::new("u", Equation::Nse, Viscosity::Nu1),
            Member::new("ut", Equation::Sens { base: 0 }, Viscosity::Nu1),
            Member::new("x", Equation::Sens { base: 1 }, Viscosity::Nu1),
        ];
        assert!(SystemSpec::custom(SystemKind::NseSens, bad).is_err());
        for k in [
            SystemKind::Nse,
            SystemKind::Da,
            SystemKind::NseSens,
            SystemKind::DaSens,
            SystemKind::DqDirect,
            SystemKind::DaDqDirect,
        ] {
            SystemSpec::new(k).validate().unwrap();
        }
    }

    #[test]
    fn tabulated_forcing_interpolates() {
        let g = grid();
        let mut rng = seeded(15);
        let f0 = random_smooth(&g, &mut rng, 1.0);
        let f1 = random_smooth(&g, &mut rng, 1.0);
        let forcing = Forcing::tabulated(vec![(1.0, f1.clone()), (0.0, f0.clone())]);
        let mid = forcing.at(&g, 0.25);
        let mut expect = f0.scaled(0.75);
        expect.axpy(0.25, &f1);
        assert_close(&mid, &expect, 1e-15);
        assert_close(&forcing.at(&g, 5.0), &f1, 1e-15);
    }
}
