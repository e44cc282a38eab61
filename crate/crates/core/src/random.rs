//! Seeded random fields.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::spectral::{leray_project, norm, GridSpec, SpectralField};

pub type FieldRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> FieldRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(rng: &mut FieldRng) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Independent Gaussian coefficients on every non-Nyquist mode; neither
/// conjugate-symmetric nor solenoidal.
pub fn random_vector_unprojected(grid: &GridSpec, rng: &mut FieldRng) -> SpectralField {
    let n = grid.n();
    let mut f = SpectralField::zeros(grid);
    let data = f.coefficients_mut();
    for c in 0..2 {
        for ix in 0..n {
            for iy in 0..n {
                if grid.is_nyquist(ix) || grid.is_nyquist(iy) {
                    continue;
                }
                data[c * n * n + ix * n + iy] = gaussian(rng);
            }
        }
    }
    f
}

/// Fills modes whose wavenumber satisfies `keep`, symmetrizes and projects.
fn random_masked(grid: &GridSpec, rng: &mut FieldRng, keep: impl Fn(i64, i64) -> bool) -> SpectralField {
    let n = grid.n();
    let mut f = SpectralField::zeros(grid);
    {
        let data = f.coefficients_mut();
        for c in 0..2 {
            for ix in 0..n {
                for iy in 0..n {
                    let (kx, ky) = (grid.wavenumber(ix), grid.wavenumber(iy));
                    let z = gaussian(rng);
                    if grid.is_nyquist(ix) || grid.is_nyquist(iy) || !keep(kx, ky) {
                        continue;
                    }
                    data[c * n * n + ix * n + iy] = z;
                }
            }
        }
    }
    f.symmetrize();
    leray_project(&f)
}

/// Solenoidal field with unit-variance coefficients on the whole dealiased
/// band, including the modes at the cutoff.
pub fn random_band_limited(grid: &GridSpec, rng: &mut FieldRng) -> SpectralField {
    let g = grid.clone();
    random_masked(grid, rng, move |kx, ky| g.in_band(kx, ky))
}

/// Solenoidal field supported on the annulus `kmin <= |k| <= kmax`, scaled to
/// `|u| = l2`.
pub fn random_shell(grid: &GridSpec, rng: &mut FieldRng, kmin: f64, kmax: f64, l2: f64) -> SpectralField {
    let g = grid.clone();
    let f = random_masked(grid, rng, move |kx, ky| {
        let r = ((kx * kx + ky * ky) as f64).sqrt();
        r >= kmin && r <= kmax && g.in_band(kx, ky)
    });
    let nt = norm(&f);
    if nt.l2 == 0.0 {
        f
    } else {
        f.scaled(l2 / nt.l2)
    }
}

/// Default smooth initial data and forcing profile: energy on `2 <= |k| <= 6`.
pub fn random_smooth(grid: &GridSpec, rng: &mut FieldRng, l2: f64) -> SpectralField {
    random_shell(grid, rng, 2.0, 6.0, l2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        let g = GridSpec::new(16).unwrap();
        let a = random_smooth(&g, &mut seeded(5), 1.0);
        let b = random_smooth(&g, &mut seeded(5), 1.0);
        assert_eq!(a, b);
        assert!((norm(&a).l2 - 1.0).abs() < 1e-14);
        assert!(a.divergence_residual() < 1e-14);
        assert!(a.conjugate_symmetry_defect() < 1e-15);
        assert!(a.is_band_limited());
        assert_eq!(a.coeff(0, 0, 0), Complex64::new(0.0, 0.0));
    }
}
