//! Coarse observation operators `I_h` with `|phi - I_h phi|^2 <= c0 h^2 ||phi||^2`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Execution};
use crate::random::{random_band_limited, random_smooth, seeded};
use crate::spectral::{norm, GridSpec, SpectralField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterpError {
    #[error("box count {m} does not divide grid size {n}")]
    BoxMismatch { m: usize, n: usize },
    #[error("observation scale h = {0} outside (0, 1/2]")]
    BadScale(f64),
    #[error("interpolant constant c0 = {0} must be positive")]
    BadConstant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InterpolantKind {
    /// Keeps modes with `|k|_inf <= k`; `h = 1/(k+1)`.
    SpectralProjection { k: i64 },
    /// Averages over `m x m` uniform boxes; `h = 1/m`.
    BoxAverage { m: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolantSpec {
    pub kind: InterpolantKind,
    pub c0: f64,
}

impl InterpolantSpec {
    pub fn spectral_projection(k: i64) -> Self {
        Self {
            kind: InterpolantKind::SpectralProjection { k },
            c0: 1.0 / (4.0 * PI * PI),
        }
    }

    pub fn box_average(m: usize) -> Self {
        Self {
            kind: InterpolantKind::BoxAverage { m },
            c0: 1.0 / (PI * PI),
        }
    }

    pub fn with_c0(mut self, c0: f64) -> Self {
        self.c0 = c0;
        self
    }

    pub fn h(&self) -> f64 {
        match self.kind {
            InterpolantKind::SpectralProjection { k } => 1.0 / (k as f64 + 1.0),
            InterpolantKind::BoxAverage { m } => 1.0 / m as f64,
        }
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<(), InterpError> {
        let h = self.h();
        if !(h > 0.0 && h <= 0.5) {
            return Err(InterpError::BadScale(h));
        }
        if !(self.c0 > 0.0) {
            return Err(InterpError::BadConstant(self.c0));
        }
        if let InterpolantKind::BoxAverage { m } = self.kind {
            if m == 0 || !grid.n().is_multiple_of(m) {
                return Err(InterpError::BoxMismatch { m, n: grid.n() });
            }
        }
        Ok(())
    }

    /// `mu c0 h^2`.
    pub fn nudging_number(&self, mu: f64) -> f64 {
        mu * self.c0 * self.h() * self.h()
    }
}

/// Applies `I_h`. The result is mean-zero but in general not solenoidal.
pub fn interpolate(spec: &InterpolantSpec, phi: &SpectralField) -> Result<SpectralField, InterpError> {
    let grid = phi.grid();
    match spec.kind {
        InterpolantKind::SpectralProjection { k } => {
            let n = grid.n();
            let mut out = phi.clone();
            let data = out.coefficients_mut();
            for ix in 0..n {
                let kx = grid.wavenumber(ix);
                for iy in 0..n {
                    let ky = grid.wavenumber(iy);
                    if kx.abs() > k || ky.abs() > k {
                        data[ix * n + iy] = Default::default();
                        data[n * n + ix * n + iy] = Default::default();
                    }
                }
            }
            Ok(out)
        }
        InterpolantKind::BoxAverage { m } => {
            let n = grid.n();
            if m == 0 || !n.is_multiple_of(m) {
                return Err(InterpError::BoxMismatch { m, n });
            }
            let p = n / m;
            let [mut ux, mut uy] = phi.to_physical();
            for comp in [&mut ux, &mut uy] {
                box_average_in_place(comp, n, p);
            }
            Ok(SpectralField::from_physical(grid, &ux, &uy))
        }
    }
}

fn box_average_in_place(values: &mut [f64], n: usize, p: usize) {
    let inv = 1.0 / (p * p) as f64;
    for bx in (0..n).step_by(p) {
        for by in (0..n).step_by(p) {
            let mut s = 0.0;
            for i in bx..bx + p {
                for j in by..by + p {
                    s += values[i * n + j];
                }
            }
            let avg = s * inv;
            for i in bx..bx + p {
                for j in by..by + p {
                    values[i * n + j] = avg;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub max_ratio: f64,
    pub pass: bool,
}

/// Largest `|phi - I_h phi|^2 / (h^2 ||phi||^2)` over a seeded ensemble that
/// alternates smooth fields and full-band fields.
pub fn verify_bound(
    spec: &InterpolantSpec,
    grid: &GridSpec,
    ensemble_size: usize,
    seed: u64,
    exec: Execution,
) -> Result<BoundReport, InterpError> {
    assert!(ensemble_size >= 1, "ensemble_size must be at least 1");
    let h2 = spec.h() * spec.h();
    let ratios = par::map(exec, (0..ensemble_size).collect(), |i| {
        let mut rng = seeded(seed.wrapping_add(i as u64));
        let phi = if i % 2 == 0 {
            random_smooth(grid, &mut rng, 1.0)
        } else {
            random_band_limited(grid, &mut rng)
        };
        let ip = interpolate(spec, &phi)?;
        let d = norm(&(&phi - &ip)).l2;
        let g = norm(&phi).h1;
        Ok(d * d / (h2 * g * g))
    });
    let mut max_ratio: f64 = 0.0;
    for r in ratios {
        max_ratio = max_ratio.max(r?);
    }
    Ok(BoundReport {
        max_ratio,
        pass: max_ratio <= spec.c0,
    })
}

/// `mu c0 h^2 <= nu`, or `4 mu c0 h^2 <= nu` when `strict`.
pub fn admissibility(spec: &InterpolantSpec, nu: f64, mu: f64, strict: bool) -> bool {
    let lhs = spec.nudging_number(mu);
    if strict {
        4.0 * lhs <= nu
    } else {
        lhs <= nu
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{taylor_green, InnerKind};
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn g(n: usize) -> GridSpec {
        GridSpec::new(n).unwrap()
    }

    #[test]
    fn projection_identity_and_taylor_green() {
        let grid = g(32);
        let u0 = taylor_green(&grid);
        let k0 = InterpolantSpec::spectral_projection(0);
        assert!(interpolate(&k0, &u0).unwrap().is_zero());
        let k1 = InterpolantSpec::spectral_projection(1);
        assert!(interpolate(&k1, &u0).unwrap().max_abs_diff(&u0) < 1e-15);
        let mut rng = seeded(2);
        let phi = random_band_limited(&grid, &mut rng);
        let full = InterpolantSpec::spectral_projection(grid.cutoff());
        assert_eq!(interpolate(&full, &phi).unwrap(), phi);
    }

    #[test]
    fn box_average_fixed_point() {
        let grid = g(16);
        let n = 16;
        let m = 4;
        let p = n / m;
        let mut rng = seeded(9);
        let mut vals: Vec<f64> = (0..m * m).map(|_| rand::Rng::random::<f64>(&mut rng) - 0.5).collect();
        let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter_mut().for_each(|v| *v -= mean);
        let mut ux = vec![0.0; n * n];
        let mut uy = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                ux[i * n + j] = vals[(i / p) * m + j / p];
                uy[i * n + j] = -vals[(j / p) * m + i / p];
            }
        }
        let phi = SpectralField::from_physical(&grid, &ux, &uy);
        let spec = InterpolantSpec::box_average(m);
        let out = interpolate(&spec, &phi).unwrap();
        assert!(out.max_abs_diff(&phi) < 1e-15);
        // idempotent and contractive on a generic field too
        let psi = random_band_limited(&grid, &mut rng);
        let once = interpolate(&spec, &psi).unwrap();
        let twice = interpolate(&spec, &once).unwrap();
        assert!(twice.max_abs_diff(&once) < 1e-14);
        assert!(norm(&once).l2 <= norm(&psi).l2);
    }

    #[test]
    fn box_mismatch_is_error() {
        let grid = g(16);
        let spec = InterpolantSpec::box_average(5);
        let phi = SpectralField::zeros(&grid);
        assert_eq!(interpolate(&spec, &phi), Err(InterpError::BoxMismatch { m: 5, n: 16 }));
        assert!(spec.validate(&grid).is_err());
    }

    #[test]
    fn bound_holds_with_declared_constants() {
        let grid = g(32);
        let sp = InterpolantSpec::spectral_projection(4);
        let r = verify_bound(&sp, &grid, 20, 1, Execution::default()).unwrap();
        assert!(r.pass, "{r:?}");
        let ba = InterpolantSpec::box_average(8);
        let r = verify_bound(&ba, &grid, 20, 1, Execution::default()).unwrap();
        assert!(r.pass, "{r:?}");
        let zero = sp.with_c0(0.0);
        assert!(!verify_bound(&zero, &grid, 3, 1, Execution::Sequential).unwrap().pass);
    }

    #[test]
    fn admissibility_arithmetic() {
        let sp = InterpolantSpec::spectral_projection(8);
        assert!(admissibility(&sp, 1e-9, 0.0, true));
        assert!(admissibility(&sp, 0.01, 10.0, false));
        assert!(!admissibility(&sp, 0.01, 10.0, true));
        let lhs = 10.0 / (4.0 * PI * PI * 81.0);
        assert!((sp.nudging_number(10.0) - lhs).abs() < 1e-15);
        let nu = sp.nudging_number(3.0);
        assert!(admissibility(&sp, nu, 3.0, false));
    }

    #[test]
    fn validate_scale() {
        let grid = g(16);
        assert!(InterpolantSpec::spectral_projection(0).validate(&grid).is_err());
        assert!(InterpolantSpec::spectral_projection(1).validate(&grid).is_ok());
        assert!(InterpolantSpec::box_average(1).validate(&grid).is_err());
        assert!(InterpolantSpec::box_average(4).with_c0(-1.0).validate(&grid).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn interpolants_are_linear_and_contractive(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0, which in 0usize..2) {
            let grid = g(16);
            let spec = if which == 0 { InterpolantSpec::spectral_projection(3) } else { InterpolantSpec::box_average(4) };
            let mut rng = seeded(seed);
            let phi = random_band_limited(&grid, &mut rng);
            let psi = random_band_limited(&grid, &mut rng);
            let combo = &phi.scaled(a) + &psi.scaled(b);
            let lhs = interpolate(&spec, &combo).unwrap();
            let rhs = &interpolate(&spec, &phi).unwrap().scaled(a) + &interpolate(&spec, &psi).unwrap().scaled(b);
            let scale = combo.max_abs().max(1.0);
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-13 * scale);
            prop_assert!(norm(&lhs).l2 <= norm(&combo).l2 * (1.0 + 1e-14));
            // orthogonal projector: (I phi, phi) = |I phi|^2
            let ip = crate::spectral::inner(&lhs, &combo, InnerKind::L2).unwrap();
            prop_assert!((ip - norm(&lhs).l2.powi(2)).abs() < 1e-12 * ip.abs().max(1.0));
        }
    }

    #[test]
    fn nyquist_content_survives_box_average() {
        let grid = g(8);
        let mut phi = SpectralField::zeros(&grid);
        phi.set_mode_pair(1, 1, 0, Complex64::new(0.5, 0.0));
        let out = interpolate(&InterpolantSpec::box_average(2), &phi).unwrap();
        assert!(out.conjugate_symmetry_defect() < 1e-14);
    }
}
