use num_complex::Complex64;
use ns2dsens::diagnostics::{check_apriori, identity_suite};
use ns2dsens::dynamics::{Forcing, PhysicsParams, SystemKind, SystemSpec, ViscositySwitch};
use ns2dsens::experiments::{
    run_da_dq_convergence, run_da_sync, run_dq_convergence, run_reynolds_switch, run_taylor_green_suite, DQSweepSpec,
    ExperimentError, Outcome, SyncCriteria, TaylorGreenSpec,
};
use ns2dsens::interp::InterpolantSpec;
use ns2dsens::par::Execution;
use ns2dsens::random::{random_band_limited, random_smooth, seeded};
use ns2dsens::spectral::{bilinear, leray_project, norm, taylor_green, GridSpec, SpectralField};
use ns2dsens::stepper::{integrate, step_convergence_order, IntegrateError, OrderReference, SolverConfig};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

fn params(mu: f64) -> PhysicsParams {
    PhysicsParams::new(0.01, 0.01, mu, InterpolantSpec::spectral_projection(4))
}

/// Truncated convolution `(u . grad) v` summed mode by mode.
fn direct_advection(u: &SpectralField, v: &SpectralField) -> SpectralField {
    let g = u.grid().clone();
    let kc = g.cutoff();
    let mut out = SpectralField::zeros(&g);
    for kx in -kc..=kc {
        for ky in -kc..=kc {
            let mut acc = [Complex64::new(0.0, 0.0); 2];
            for px in -kc..=kc {
                for py in -kc..=kc {
                    let (qx, qy) = (kx - px, ky - py);
                    if qx.abs() > kc || qy.abs() > kc {
                        continue;
                    }
                    let (ux, uy) = (u.coeff(0, px, py), u.coeff(1, px, py));
                    let dot = (ux * qx as f64 + uy * qy as f64) * Complex64::new(0.0, TWO_PI);
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += dot * v.coeff(c, qx, qy);
                    }
                }
            }
            for (c, a) in acc.iter().enumerate() {
                let ix = g.index_of(kx);
                let iy = g.index_of(ky);
                out.coefficients_mut()[c * g.n() * g.n() + ix * g.n() + iy] = *a;
            }
        }
    }
    let mut out = leray_project(&out);
    out.band_limit();
    out
}

#[test]
fn bilinear_matches_direct_convolution() {
    for n in [8, 12] {
        let g = GridSpec::new(n).unwrap();
        let mut rng = seeded(n as u64);
        let u = random_band_limited(&g, &mut rng);
        let v = random_band_limited(&g, &mut rng);
        let fast = bilinear(&u, &v).unwrap();
        let slow = direct_advection(&u, &v);
        assert!(
            fast.max_abs_diff(&slow) < 1e-12 * slow.max_abs(),
            "n = {n}: {}",
            fast.max_abs_diff(&slow)
        );
    }
}

#[test]
fn identities_at_the_cutoff() {
    // band-limited fields fill the modes at the cutoff by construction
    let g = GridSpec::new(32).unwrap();
    let f = random_band_limited(&g, &mut seeded(3));
    assert!(f.coeff(0, g.cutoff(), 1).norm() > 0.0 || f.coeff(1, g.cutoff(), 1).norm() > 0.0);
    for c in identity_suite(&g, 10, 77, Execution::Sequential).unwrap() {
        assert!(c.pass, "{}", c.name);
    }
}

#[test]
fn zero_data_gives_zero_trajectories() {
    let g = GridSpec::new(16).unwrap();
    let z = SpectralField::zeros(&g);
    let mut p = params(2.0);
    p.nu2 = 0.012;
    let cfg = SolverConfig::new(0.01, 0.1);
    for kind in [
        SystemKind::Nse,
        SystemKind::Da,
        SystemKind::NseSens,
        SystemKind::DaSens,
        SystemKind::DqDirect,
        SystemKind::DaDqDirect,
    ] {
        let spec = SystemSpec::new(kind);
        let init: Vec<(&str, &SpectralField)> = spec
            .members
            .iter()
            .filter(|m| m.equation.is_flow())
            .map(|m| (m.name.as_str(), &z))
            .collect();
        let tr = integrate(&spec, &init, &p, &cfg).unwrap();
        for s in &tr.snapshots {
            assert!(s.fields.iter().all(|f| f.is_zero()), "{kind}");
        }
    }
}

#[test]
fn runs_are_deterministic_across_execution_modes() {
    let g = GridSpec::new(16).unwrap();
    let mut rng = seeded(5);
    let u0 = random_smooth(&g, &mut rng, 1.0);
    let f = random_smooth(&g, &mut rng, 3.0);
    let p = params(1.0).with_forcing(Forcing::steady(&f));
    let spec = SystemSpec::new(SystemKind::DaDqDirect);
    let z = SpectralField::zeros(&g);
    let init = [("u1", &u0), ("u2", &u0), ("v1", &z), ("v2", &z)];
    let mut p2 = p.clone();
    p2.nu2 = 0.013;
    let cfg = SolverConfig::new(0.005, 0.2).with_sample_every(5);
    let a = integrate(&spec, &init, &p2, &cfg.clone().with_execution(Execution::Sequential)).unwrap();
    let b = integrate(&spec, &init, &p2, &cfg.clone().with_execution(Execution::Parallel)).unwrap();
    let c = integrate(&spec, &init, &p2, &cfg.with_execution(Execution::Sequential)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn taylor_green_order_and_stokes_eigenmode() {
    let g = GridSpec::new(16).unwrap();
    let u0 = taylor_green(&g);
    let p = params(0.0);
    let rate = 2.0 * TWO_PI * TWO_PI * 0.01;
    let closed = |t: f64| vec![u0.scaled((-rate * t).exp())];
    let cfg = SolverConfig::new(0.05, 1.0);
    let nse = SystemSpec::new(SystemKind::Nse);
    let r = step_convergence_order(&nse, &[("u", &u0)], &p, &cfg, OrderReference::ClosedForm(&closed)).unwrap();
    assert!((1.8..=2.2).contains(&r.order), "{r:?}");
    let stokes = nse.clone().without_advection();
    let r = step_convergence_order(&stokes, &[("u", &u0)], &p, &cfg, OrderReference::ClosedForm(&closed)).unwrap();
    assert!((1.9..=2.1).contains(&r.order), "{r:?}");
    let d = step_convergence_order(&nse, &[("u", &u0)], &p, &cfg, OrderReference::Refined { factor: 1 });
    assert!(matches!(d, Err(IntegrateError::DegenerateRefinement(1))));
}

#[test]
fn taylor_green_suite_small() {
    let spec = TaylorGreenSpec {
        n: 16,
        dt: 2e-3,
        ..TaylorGreenSpec::default()
    };
    let r = run_taylor_green_suite(&spec).unwrap();
    assert!(r.passed(), "{:?}", r.verdicts);
    assert!(r.scalar("nse_relative_error").unwrap() < 1e-5);
    let l2 = r.scalar("u_final_l2").unwrap();
    assert!((l2 - 0.5f64.sqrt() * (-0.08 * std::f64::consts::PI.powi(2)).exp()).abs() < 1e-6);
}

fn sweep_cfg() -> SolverConfig {
    SolverConfig::new(2e-3, 0.5).with_sample_every(5)
}

#[test]
fn single_delta_is_inconclusive() {
    let g = GridSpec::new(16).unwrap();
    let u0 = taylor_green(&g);
    let r = run_dq_convergence(&DQSweepSpec::halving(0.01, 1), &u0, &params(0.0), &sweep_cfg()).unwrap();
    assert_eq!(r.table.len(), 1);
    assert!(r.table[0].ratio.is_none());
    let v = r.verdict("decreasing").unwrap();
    assert_eq!(v.outcome, Outcome::Inconclusive);
    assert_eq!(v.detail, "insufficient for rate");
}

#[test]
fn nudging_off_reproduces_plain_quotients() {
    let g = GridSpec::new(16).unwrap();
    let mut rng = seeded(8);
    let u0 = random_smooth(&g, &mut rng, 1.0);
    let f = random_smooth(&g, &mut rng, 3.0);
    let p = params(0.0).with_forcing(Forcing::steady(&f));
    let spec = DQSweepSpec::halving(0.01, 3);
    let plain = run_dq_convergence(&spec, &u0, &p, &sweep_cfg()).unwrap();
    let da = run_da_dq_convergence(&spec, &u0, &u0, &p, &sweep_cfg()).unwrap();
    assert_eq!(plain.table, da.table);
}

#[test]
fn synchronized_start_matches_plain_sensitivity() {
    let g = GridSpec::new(16).unwrap();
    let mut rng = seeded(9);
    let u0 = random_smooth(&g, &mut rng, 1.0);
    let f = random_smooth(&g, &mut rng, 3.0);
    let p = params(2.0).with_forcing(Forcing::steady(&f));
    let spec = DQSweepSpec::halving(0.01, 3);
    let plain = run_dq_convergence(&spec, &u0, &p, &sweep_cfg()).unwrap();
    let da = run_da_dq_convergence(&spec, &u0, &u0, &p, &sweep_cfg()).unwrap();
    for (a, b) in plain.table.iter().zip(&da.table) {
        assert!((a.error - b.error).abs() <= 1e-5 * a.error, "{a:?} {b:?}");
    }
    // v = u and vt = ut along the whole run
    let stack = SystemSpec::new(SystemKind::DaSens);
    let tr = integrate(&stack, &[("u", &u0), ("v", &u0)], &p, &sweep_cfg()).unwrap();
    let (ut, vt) = (tr.final_state("ut").unwrap(), tr.final_state("vt").unwrap());
    assert!(norm(&(ut - vt)).l2 <= 1e-5 * norm(ut).l2);
}

#[test]
fn da_quotients_need_strict_admissibility() {
    let g = GridSpec::new(16).unwrap();
    let u0 = taylor_green(&g);
    let mut p = params(0.0);
    p.interp = InterpolantSpec::spectral_projection(2);
    p.mu = 1.0;
    let r = run_da_dq_convergence(&DQSweepSpec::halving(0.01, 2), &u0, &u0, &p, &sweep_cfg());
    assert!(matches!(
        r,
        Err(ExperimentError::Integrate {
            source: IntegrateError::Admissibility { strict: true, .. },
            ..
        })
    ));
}

#[test]
fn sync_identical_start_and_control() {
    let g = GridSpec::new(16).unwrap();
    let mut rng = seeded(10);
    let u0 = random_smooth(&g, &mut rng, 1.0);
    let v0 = random_smooth(&g, &mut rng, 1.0);
    let f = random_smooth(&g, &mut rng, 3.0);
    let p = params(5.0).with_forcing(Forcing::steady(&f));
    let cfg = SolverConfig::new(5e-3, 0.5).with_sample_every(10);
    let same = run_da_sync(&p, &cfg, &u0, &u0, SyncCriteria::default()).unwrap();
    assert_eq!(same.scalar("max_difference").unwrap(), 0.0);
    assert_eq!(same.verdict("synchronized").unwrap().outcome, Outcome::Pass);
    let mut p0 = p.clone();
    p0.mu = 0.0;
    let control = run_da_sync(&p0, &cfg, &u0, &v0, SyncCriteria::default()).unwrap();
    assert_eq!(control.verdict("decay").unwrap().outcome, Outcome::Inconclusive);
}

#[test]
fn switch_preconditions_and_noop() {
    let g = GridSpec::new(16).unwrap();
    let mut rng = seeded(11);
    let u0 = random_smooth(&g, &mut rng, 1.0);
    let p = params(5.0);
    let cfg = SolverConfig::new(5e-3, 0.5);
    let z = SpectralField::zeros(&g);
    for (ts, nu) in [(0.2, 0.0), (0.2, -1.0), (0.0, 0.01), (0.5, 0.01)] {
        assert!(matches!(
            run_reynolds_switch(&p, &cfg, &u0, &z, ts, nu),
            Err(ExperimentError::InvalidSpec(_))
        ));
    }
    let (_, switched) = run_reynolds_switch(&p, &cfg, &u0, &z, 0.25, p.nu2).unwrap();
    let plain = integrate(&SystemSpec::new(SystemKind::Da), &[("u", &u0), ("v", &z)], &p, &cfg).unwrap();
    assert_eq!(switched.snapshots, plain.snapshots);
    assert_eq!(switched.norms, plain.norms);
}

#[test]
fn apriori_checks_on_decaying_flow() {
    let g = GridSpec::new(16).unwrap();
    let u0 = taylor_green(&g);
    let p = params(0.0);
    let tr = integrate(&SystemSpec::new(SystemKind::Nse), &[("u", &u0)], &p, &SolverConfig::new(0.01, 1.0)).unwrap();
    let h1: Vec<f64> = tr.norms[0].iter().map(|n| n.h1).collect();
    assert!(h1.windows(2).all(|w| w[1] < w[0]));
    let checks = check_apriori(&tr, &p);
    assert_eq!(checks.len(), 3);
    assert!(checks.iter().all(|c| c.pass && c.margin > 0.0));
}

#[test]
fn apriori_checks_are_piecewise_for_switches() {
    let g = GridSpec::new(16).unwrap();
    let mut rng = seeded(12);
    let u0 = random_smooth(&g, &mut rng, 1.0);
    let f = random_smooth(&g, &mut rng, 2.0);
    let p = params(5.0).with_forcing(Forcing::steady(&f));
    let mut spec = SystemSpec::new(SystemKind::Da);
    spec.set_switch("v", ViscositySwitch { t_switch: 0.3, nu_new: 0.006 }).unwrap();
    let z = SpectralField::zeros(&g);
    let tr = integrate(&spec, &[("u", &u0), ("v", &z)], &p, &SolverConfig::new(0.01, 0.6)).unwrap();
    let checks = check_apriori(&tr, &p);
    let names: Vec<&str> = checks.iter().map(|c| c.name.as_str()).collect();
    assert!(names.contains(&"v[0]:enstrophy") && names.contains(&"v[1]:enstrophy"));
    assert!(checks.iter().all(|c| c.pass), "{names:?}");
}
