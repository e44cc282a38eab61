//! Grashof numbers, the constant-free a-priori inequalities checked along
//! trajectories and the operator identity suite.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{Equation, PhysicsParams};
use crate::interp::InterpolantKind;
use crate::par::{self, Execution};
use crate::random::{random_band_limited, seeded};
use crate::spectral::{bilinear, inner, norm, stokes_apply, GridSpec, InnerKind, LAMBDA1};
use crate::stepper::Trajectory;

/// Relative slack allowed on a bound before it is declared violated.
pub const BOUND_TOLERANCE: f64 = 1e-8;
pub const IDENTITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("trials must be at least 1")]
    NoTrials,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub lhs_series: Vec<f64>,
    pub rhs_bound: Vec<f64>,
    /// `min(rhs - lhs)`.
    pub margin: f64,
    pub pass: bool,
}

impl BoundCheck {
    pub fn new(name: impl Into<String>, lhs_series: Vec<f64>, rhs_bound: Vec<f64>) -> Self {
        assert_eq!(lhs_series.len(), rhs_bound.len());
        let margin = lhs_series
            .iter()
            .zip(&rhs_bound)
            .map(|(l, r)| r - l)
            .fold(f64::INFINITY, f64::min);
        let scale = rhs_bound.iter().fold(0.0f64, |a, r| a.max(r.abs()));
        let pass = lhs_series.is_empty() || (margin.is_finite() && margin >= -BOUND_TOLERANCE * scale);
        Self {
            name: name.into(),
            lhs_series,
            rhs_bound,
            margin,
            pass,
        }
    }
}

/// `G = f_norm_sup / (4 pi^2 re_inv^2)`.
pub fn grashof(f_norm_sup: f64, re_inv: f64) -> f64 {
    assert!(re_inv > 0.0 && f_norm_sup >= 0.0);
    f_norm_sup / (re_inv * re_inv * LAMBDA1)
}

/// Forcing amplitude `|f|` that gives Grashof number `g` at `re_inv`.
pub fn forcing_for_grashof(g: f64, re_inv: f64) -> f64 {
    g * re_inv * re_inv * LAMBDA1
}

fn cumulative_trapezoid(t: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; t.len()];
    for j in 1..t.len() {
        out[j] = out[j - 1] + 0.5 * (t[j] - t[j - 1]) * (y[j] + y[j - 1]);
    }
    out
}

/// Windows `[start, end]` of sample indices on which the member's viscosity
/// is constant, with that viscosity.
fn windows(traj: &Trajectory, member: usize) -> Vec<(usize, usize, f64)> {
    let info = &traj.members[member];
    let last = traj.times.len() - 1;
    match info.switch {
        Some(sw) if sw.t_switch > 0.0 && sw.t_switch < traj.t_end => {
            let step = (sw.t_switch / traj.dt).round() as usize;
            let ts = step as f64 * traj.dt;
            let end1 = traj.times.iter().rposition(|&t| t <= ts).unwrap_or(0);
            let start2 = traj.times.iter().position(|&t| t >= ts).unwrap_or(last);
            vec![(0, end1, info.nu), (start2, last, sw.nu_new)]
        }
        _ => vec![(0, last, info.nu)],
    }
}

/// Evaluates, for every flow member and every constant-viscosity window,
/// with `g` the body force plus the observed nudging source:
/// `||u(t)||^2 <= ||u0||^2 + (k/nu) int |g|^2`,
/// `|u(t)|^2 <= |u0|^2 + sup |g|^2 / (lambda1 nu)^2` and
/// `nu int |Au|^2 <= ||u0||^2 + (k/nu) int |g|^2`,
/// where `k = 2` for box-averaged nudging and `1` otherwise.
pub fn check_apriori(traj: &Trajectory, p: &PhysicsParams) -> Vec<BoundCheck> {
    let mut out = Vec::new();
    if traj.times.is_empty() {
        return out;
    }
    for (i, info) in traj.members.iter().enumerate() {
        let Some(src) = traj.sources[i].as_ref() else {
            continue;
        };
        let kappa = match (info.equation, p.interp.kind) {
            (Equation::Da { .. }, InterpolantKind::BoxAverage { .. }) if p.mu > 0.0 => 2.0,
            _ => 1.0,
        };
        let ws = windows(traj, i);
        let multi = ws.len() > 1;
        for (w, &(a, b, nu)) in ws.iter().enumerate() {
            let t = &traj.times[a..=b];
            let nt = &traj.norms[i][a..=b];
            let g2: Vec<f64> = src[a..=b].iter().map(|g| g * g).collect();
            let int_g2 = cumulative_trapezoid(t, &g2);
            let au2: Vec<f64> = nt.iter().map(|x| x.h2 * x.h2).collect();
            let int_au2 = cumulative_trapezoid(t, &au2);
            let sup_g2 = g2.iter().fold(0.0f64, |m, x| m.max(*x));
            let (h1_0, l2_0) = (nt[0].h1 * nt[0].h1, nt[0].l2 * nt[0].l2);
            let tag = if multi {
                format!("{}[{}]", info.name, w)
            } else {
                info.name.clone()
            };
            let skip = 1.min(nt.len() - 1);
            let enstrophy_l: Vec<f64> = nt[skip..].iter().map(|x| x.h1 * x.h1).collect();
            let enstrophy_r: Vec<f64> = int_g2[skip..].iter().map(|s| h1_0 + kappa / nu * s).collect();
            out.push(BoundCheck::new(format!("{tag}:enstrophy"), enstrophy_l, enstrophy_r));
            let energy_l: Vec<f64> = nt[skip..].iter().map(|x| x.l2 * x.l2).collect();
            let energy_r = vec![l2_0 + sup_g2 / (LAMBDA1 * LAMBDA1 * nu * nu); energy_l.len()];
            out.push(BoundCheck::new(format!("{tag}:energy"), energy_l, energy_r));
            let diss_l: Vec<f64> = int_au2[skip..].iter().map(|s| nu * s).collect();
            let diss_r: Vec<f64> = int_g2[skip..].iter().map(|s| h1_0 + kappa / nu * s).collect();
            out.push(BoundCheck::new(format!("{tag}:dissipation"), diss_l, diss_r));
        }
    }
    out
}

struct TrialResiduals {
    skew: f64,
    orth: f64,
    enstrophy: f64,
    polar: f64,
    poincare: f64,
}

fn trial(grid: &GridSpec, seed: u64) -> TrialResiduals {
    let mut rng = seeded(seed);
    let u = random_band_limited(grid, &mut rng);
    let v = random_band_limited(grid, &mut rng);
    let w = random_band_limited(grid, &mut rng);
    let ip = |a: &_, b: &_| inner(a, b, InnerKind::L2).unwrap();
    let l2 = |a: &_| norm(a).l2;
    let buv = bilinear(&u, &v).unwrap();
    let buw = bilinear(&u, &w).unwrap();
    let bww = bilinear(&w, &w).unwrap();
    let bwu = bilinear(&w, &u).unwrap();
    let (aw, au) = (stokes_apply(&w), stokes_apply(&u));
    let rel = |r: f64, s: f64| if s == 0.0 { r.abs() } else { r.abs() / s };

    let skew = rel(ip(&buv, &w) + ip(&buw, &v), l2(&buv) * l2(&w) + l2(&buw) * l2(&v));
    let orth = rel(ip(&buw, &w), l2(&buw) * l2(&w));
    let enstrophy = rel(ip(&bww, &aw), l2(&bww) * l2(&aw));
    let polar = rel(
        ip(&buw, &aw) + ip(&bwu, &aw) + ip(&bww, &au),
        l2(&buw) * l2(&aw) + l2(&bwu) * l2(&aw) + l2(&bww) * l2(&au),
    );
    let poincare = [&u, &v, &w]
        .iter()
        .map(|f| {
            let nt = norm(f);
            let a = LAMBDA1 * nt.l2 * nt.l2 / (nt.h1 * nt.h1);
            let b = LAMBDA1 * nt.h1 * nt.h1 / (nt.h2 * nt.h2);
            a.max(b)
        })
        .fold(0.0, f64::max);
    TrialResiduals {
        skew,
        orth,
        enstrophy,
        polar,
        poincare,
    }
}

/// Checks the bilinear identities and the Poincare chain on `trials`
/// seeded band-limited triples.
pub fn identity_suite(grid: &GridSpec, trials: usize, seed: u64, exec: Execution) -> Result<Vec<BoundCheck>, DiagnosticsError> {
    if trials == 0 {
        return Err(DiagnosticsError::NoTrials);
    }
    let seeds: Vec<u64> = (0..trials as u64).map(|i| seed.wrapping_add(i)).collect();
    let rs = par::map(exec, seeds, |s| trial(grid, s));
    let tol = vec![IDENTITY_TOLERANCE; trials];
    let col = |f: fn(&TrialResiduals) -> f64| rs.iter().map(f).collect::<Vec<_>>();
    Ok(vec![
        BoundCheck::new("skew-symmetry", col(|r| r.skew), tol.clone()),
        BoundCheck::new("orthogonality", col(|r| r.orth), tol.clone()),
        BoundCheck::new("enstrophy-neutrality", col(|r| r.enstrophy), tol.clone()),
        BoundCheck::new("polarized-identity", col(|r| r.polar), tol),
        BoundCheck::new("poincare", col(|r| r.poincare), vec![1.0; trials]),
    ])
}

/// Largest `|<B(u,v),w>| / (|u|^1/2 ||u||^1/2 ||v|| |w|^1/2 ||w||^1/2)` over
/// seeded triples. Reported only; the constant is not known.
pub fn trilinear_ratio(grid: &GridSpec, trials: usize, seed: u64, exec: Execution) -> f64 {
    let seeds: Vec<u64> = (0..trials as u64).map(|i| seed.wrapping_add(i)).collect();
    par::map(exec, seeds, |s| {
        let mut rng = seeded(s);
        let u = random_band_limited(grid, &mut rng);
        let v = random_band_limited(grid, &mut rng);
        let w = random_band_limited(grid, &mut rng);
        let b = inner(&bilinear(&u, &v).unwrap(), &w, InnerKind::L2).unwrap().abs();
        let (nu, nv, nw) = (norm(&u), norm(&v), norm(&w));
        b / ((nu.l2 * nu.h1).sqrt() * nv.h1 * (nw.l2 * nw.h1).sqrt())
    })
    .into_iter()
    .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn grashof_arithmetic() {
        assert_eq!(grashof(0.0, 0.01), 0.0);
        assert!((grashof(4.0 * PI * PI, 0.01) - 1e4).abs() < 1e-8);
        assert!((grashof(2.0, 0.005) - 4.0 * grashof(2.0, 0.01)).abs() < 1e-9);
        assert!(grashof(3.0, 0.01) > grashof(2.0, 0.01));
        assert!((grashof(forcing_for_grashof(1000.0, 0.01), 0.01) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn bound_check_margin() {
        let c = BoundCheck::new("x", vec![1.0, 2.0], vec![2.0, 2.0]);
        assert_eq!(c.margin, 0.0);
        assert!(c.pass);
        let c = BoundCheck::new("x", vec![1.0, 2.1], vec![2.0, 2.0]);
        assert!(!c.pass);
        let c = BoundCheck::new("x", vec![f64::NAN], vec![2.0]);
        assert!(!c.pass);
    }

    #[test]
    fn identities_hold_small_grid() {
        let g = GridSpec::new(16).unwrap();
        let checks = identity_suite(&g, 6, 1, Execution::Sequential).unwrap();
        assert_eq!(checks.len(), 5);
        for c in &checks {
            assert!(c.pass, "{} margin {}", c.name, c.margin);
        }
        assert_eq!(identity_suite(&g, 0, 1, Execution::Sequential), Err(DiagnosticsError::NoTrials));
        let r = trilinear_ratio(&g, 6, 1, Execution::Sequential);
        assert!(r.is_finite() && r > 0.0);
    }

    #[test]
    fn trapezoid_cumulative() {
        let t = [0.0, 0.5, 1.0];
        let y = [1.0, 1.0, 1.0];
        assert_eq!(cumulative_trapezoid(&t, &y), vec![0.0, 0.5, 1.0]);
    }
}
