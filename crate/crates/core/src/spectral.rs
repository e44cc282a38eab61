//! Fourier representation of real, mean-zero vector fields on the unit torus
//! `[0,1)^2` and the discrete Leray projector, Stokes operator and
//! Galerkin-truncated advection operator.
//!
//! Coefficients follow the convention `u(x) = sum_k u_k exp(2 pi i k.x)`, so
//! Parseval reads `|u|^2 = sum_k |u_k|^2` and the Stokes eigenvalue of mode `k`
//! is `4 pi^2 |k|^2`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

/// First eigenvalue of the Stokes operator on the unit torus.
pub const LAMBDA1: f64 = 4.0 * PI * PI;

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("grid size must be even and at least 8, got {0}")]
    InvalidGrid(usize),
    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: usize, right: usize },
    #[error("coefficient buffer has length {got}, expected {expected}")]
    BadLength { got: usize, expected: usize },
}

struct GridInner {
    n: usize,
    cutoff: i64,
    wavenumbers: Vec<i64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// An `N x N` collocation grid on the unit torus together with its FFT plans.
///
/// Cloning is cheap; all clones share the plans.
#[derive(Clone)]
pub struct GridSpec(Arc<GridInner>);

impl fmt::Debug for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GridSpec")
            .field("n", &self.0.n)
            .field("cutoff", &self.0.cutoff)
            .finish()
    }
}

impl PartialEq for GridSpec {
    fn eq(&self, other: &Self) -> bool {
        self.0.n == other.0.n
    }
}

impl GridSpec {
    pub fn new(n: usize) -> Result<Self, SpectralError> {
        if n < 8 || !n.is_multiple_of(2) {
            return Err(SpectralError::InvalidGrid(n));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let half = n as i64 / 2;
        let wavenumbers = (0..n as i64)
            .map(|i| if i < half { i } else { i - n as i64 })
            .collect();
        // Largest K with 3K < N: quadratic products of band-limited fields
        // then alias only onto modes outside the band.
        let cutoff = (n as i64 - 1) / 3;
        Ok(Self(Arc::new(GridInner {
            n,
            cutoff,
            wavenumbers,
            forward,
            inverse,
        })))
    }

    pub fn n(&self) -> usize {
        self.0.n
    }

    /// Largest retained `|k_i|` after dealiasing.
    pub fn cutoff(&self) -> i64 {
        self.0.cutoff
    }

    /// Signed wavenumber for FFT index `i`; the Nyquist index maps to `-N/2`.
    #[inline]
    pub fn wavenumber(&self, i: usize) -> i64 {
        self.0.wavenumbers[i]
    }

    #[inline]
    pub fn index_of(&self, k: i64) -> usize {
        k.rem_euclid(self.0.n as i64) as usize
    }

    #[inline]
    pub fn is_nyquist(&self, i: usize) -> bool {
        i == self.0.n / 2
    }

    #[inline]
    pub fn in_band(&self, kx: i64, ky: i64) -> bool {
        kx.abs() <= self.0.cutoff && ky.abs() <= self.0.cutoff
    }

    /// Stokes eigenvalue `4 pi^2 |k|^2` at FFT index `(ix, iy)`.
    #[inline]
    pub fn eigenvalue(&self, ix: usize, iy: usize) -> f64 {
        let kx = self.wavenumber(ix) as f64;
        let ky = self.wavenumber(iy) as f64;
        LAMBDA1 * (kx * kx + ky * ky)
    }

    pub(crate) fn plane_len(&self) -> usize {
        self.0.n * self.0.n
    }

    pub(crate) fn check_same(&self, other: &GridSpec) -> Result<(), SpectralError> {
        if self.0.n != other.0.n {
            Err(SpectralError::GridMismatch {
                left: self.0.n,
                right: other.0.n,
            })
        } else {
            Ok(())
        }
    }

    fn transpose(&self, buf: &mut [Complex64]) {
        let n = self.0.n;
        for i in 0..n {
            for j in (i + 1)..n {
                buf.swap(i * n + j, j * n + i);
            }
        }
    }

    /// Unnormalized 2D FFT in place (`forward` selects the sign).
    pub(crate) fn fft2(&self, buf: &mut [Complex64], forward: bool) {
        let plan = if forward {
            &self.0.forward
        } else {
            &self.0.inverse
        };
        plan.process(buf);
        self.transpose(buf);
        plan.process(buf);
        self.transpose(buf);
    }
}

/// Which inner product to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerKind {
    L2,
    H1,
}

/// `(|phi|, ||phi||, |A phi|)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct NormTriple {
    pub l2: f64,
    pub h1: f64,
    pub h2: f64,
}

impl NormTriple {
    /// Both Poincare inequalities, with a relative rounding allowance.
    pub fn satisfies_poincare(&self, rel_tol: f64) -> bool {
        let a = LAMBDA1 * self.l2 * self.l2;
        let b = self.h1 * self.h1;
        let c = LAMBDA1 * self.h1 * self.h1;
        let d = self.h2 * self.h2;
        a <= b * (1.0 + rel_tol) + f64::MIN_POSITIVE && c <= d * (1.0 + rel_tol) + f64::MIN_POSITIVE
    }
}

/// Complex Fourier coefficients of a real 2D vector field.
///
/// Layout: component-major (`x` block then `y` block), each block row-major
/// over `(ix, iy)` in FFT index order.
#[derive(Clone, PartialEq)]
pub struct SpectralField {
    grid: GridSpec,
    data: Vec<Complex64>,
}

impl fmt::Debug for SpectralField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nt = norm(self);
        f.debug_struct("SpectralField")
            .field("n", &self.grid.n())
            .field("l2", &nt.l2)
            .finish()
    }
}

impl SpectralField {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            grid: grid.clone(),
            data: vec![Complex64::new(0.0, 0.0); 2 * grid.plane_len()],
        }
    }

    pub fn from_coefficients(grid: &GridSpec, data: Vec<Complex64>) -> Result<Self, SpectralError> {
        let expected = 2 * grid.plane_len();
        if data.len() != expected {
            return Err(SpectralError::BadLength {
                got: data.len(),
                expected,
            });
        }
        Ok(Self {
            grid: grid.clone(),
            data,
        })
    }

    /// Transforms grid samples `[u_x, u_y]` (row-major, `x` index first).
    /// The mean mode is zeroed.
    pub fn from_physical(grid: &GridSpec, ux: &[f64], uy: &[f64]) -> Self {
        let len = grid.plane_len();
        assert_eq!(ux.len(), len);
        assert_eq!(uy.len(), len);
        let mut z: Vec<Complex64> = ux
            .iter()
            .zip(uy)
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect();
        grid.fft2(&mut z, true);
        let mut out = Self::zeros(grid);
        unpack_pair(grid, &z, &mut out.data);
        out.data[0] = Complex64::new(0.0, 0.0);
        out.data[len] = Complex64::new(0.0, 0.0);
        out
    }

    /// Samples `f(x, y)` on the grid and transforms.
    pub fn from_fn(grid: &GridSpec, f: impl Fn(f64, f64) -> [f64; 2]) -> Self {
        let n = grid.n();
        let h = 1.0 / n as f64;
        let mut ux = vec![0.0; n * n];
        let mut uy = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let [a, b] = f(i as f64 * h, j as f64 * h);
                ux[i * n + j] = a;
                uy[i * n + j] = b;
            }
        }
        Self::from_physical(grid, &ux, &uy)
    }

    /// Grid values `[u_x, u_y]`.
    pub fn to_physical(&self) -> [Vec<f64>; 2] {
        let len = self.grid.plane_len();
        let mut z: Vec<Complex64> = (0..len)
            .map(|i| self.data[i] + Complex64::i() * self.data[len + i])
            .collect();
        self.grid.fft2(&mut z, false);
        [z.iter().map(|c| c.re).collect(), z.iter().map(|c| c.im).collect()]
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.data
    }

    pub fn coefficients_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline]
    fn offset(&self, component: usize, ix: usize, iy: usize) -> usize {
        let n = self.grid.n();
        component * n * n + ix * n + iy
    }

    /// Coefficient of `component` at signed wavenumber `(kx, ky)`.
    pub fn coeff(&self, component: usize, kx: i64, ky: i64) -> Complex64 {
        let (ix, iy) = (self.grid.index_of(kx), self.grid.index_of(ky));
        self.data[self.offset(component, ix, iy)]
    }

    /// Sets the coefficient at `k` and its conjugate partner at `-k`.
    pub fn set_mode_pair(&mut self, component: usize, kx: i64, ky: i64, value: Complex64) {
        let (ix, iy) = (self.grid.index_of(kx), self.grid.index_of(ky));
        let o = self.offset(component, ix, iy);
        self.data[o] = value;
        let (jx, jy) = (self.grid.index_of(-kx), self.grid.index_of(-ky));
        let o = self.offset(component, jx, jy);
        self.data[o] = value.conj();
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|c| c.re == 0.0 && c.im == 0.0)
    }

    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &SpectralField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `max_k |2 pi k . u_k| / max_k 2 pi |k| |u_k|`, zero for the zero field.
    pub fn divergence_residual(&self) -> f64 {
        let n = self.grid.n();
        let len = n * n;
        let mut num: f64 = 0.0;
        let mut den: f64 = 0.0;
        for ix in 0..n {
            let kx = self.grid.wavenumber(ix) as f64;
            for iy in 0..n {
                let ky = self.grid.wavenumber(iy) as f64;
                let i = ix * n + iy;
                let (a, b) = (self.data[i], self.data[len + i]);
                num = num.max((a * kx + b * ky).norm() * TWO_PI);
                den = den.max(TWO_PI * (kx * kx + ky * ky).sqrt() * a.norm().max(b.norm()));
            }
        }
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }

    /// Largest deviation from `u_{-k} = conj(u_k)`, relative to `max |u_k|`.
    pub fn conjugate_symmetry_defect(&self) -> f64 {
        let n = self.grid.n();
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for c in 0..2 {
            for ix in 0..n {
                for iy in 0..n {
                    let jx = (n - ix) % n;
                    let jy = (n - iy) % n;
                    let a = self.data[self.offset(c, ix, iy)];
                    let b = self.data[self.offset(c, jx, jy)];
                    worst = worst.max((a - b.conj()).norm());
                }
            }
        }
        worst / scale
    }

    /// Replaces `u_k` by `(u_k + conj(u_{-k}))/2` and zeroes the mean mode.
    pub fn symmetrize(&mut self) {
        let n = self.grid.n();
        let src = self.data.clone();
        for c in 0..2 {
            for ix in 0..n {
                for iy in 0..n {
                    let jx = (n - ix) % n;
                    let jy = (n - iy) % n;
                    let a = src[self.offset(c, ix, iy)];
                    let b = src[self.offset(c, jx, jy)];
                    let o = self.offset(c, ix, iy);
                    self.data[o] = 0.5 * (a + b.conj());
                }
            }
        }
        let len = n * n;
        self.data[0] = Complex64::new(0.0, 0.0);
        self.data[len] = Complex64::new(0.0, 0.0);
    }

    /// Zeroes every mode outside the dealiased band, including Nyquist lines.
    pub fn band_limit(&mut self) {
        let n = self.grid.n();
        let len = n * n;
        for ix in 0..n {
            let kx = self.grid.wavenumber(ix);
            for iy in 0..n {
                let ky = self.grid.wavenumber(iy);
                if !self.grid.in_band(kx, ky) {
                    self.data[ix * n + iy] = Complex64::new(0.0, 0.0);
                    self.data[len + ix * n + iy] = Complex64::new(0.0, 0.0);
                }
            }
        }
    }

    pub fn is_band_limited(&self) -> bool {
        let n = self.grid.n();
        let len = n * n;
        (0..n).all(|ix| {
            (0..n).all(|iy| {
                self.grid.in_band(self.grid.wavenumber(ix), self.grid.wavenumber(iy))
                    || (self.data[ix * n + iy].norm() == 0.0 && self.data[len + ix * n + iy].norm() == 0.0)
            })
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            data: self.data.iter().map(|c| c * s).collect(),
        }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &SpectralField) {
        debug_assert_eq!(self.grid, other.grid);
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += y * a;
        }
    }

    pub fn try_sub(&self, other: &SpectralField) -> Result<Self, SpectralError> {
        self.grid.check_same(&other.grid)?;
        Ok(self - other)
    }

    pub fn try_add(&self, other: &SpectralField) -> Result<Self, SpectralError> {
        self.grid.check_same(&other.grid)?;
        Ok(self + other)
    }
}

impl Add for &SpectralField {
    type Output = SpectralField;
    fn add(self, rhs: &SpectralField) -> SpectralField {
        assert_eq!(self.grid, rhs.grid, "grid mismatch");
        SpectralField {
            grid: self.grid.clone(),
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &SpectralField {
    type Output = SpectralField;
    fn sub(self, rhs: &SpectralField) -> SpectralField {
        assert_eq!(self.grid, rhs.grid, "grid mismatch");
        SpectralField {
            grid: self.grid.clone(),
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul<f64> for &SpectralField {
    type Output = SpectralField;
    fn mul(self, rhs: f64) -> SpectralField {
        self.scaled(rhs)
    }
}

// Splits the transform of `a + i b` (a, b real) into the transforms of a and b.
fn unpack_pair(grid: &GridSpec, z: &[Complex64], out: &mut [Complex64]) {
    let n = grid.n();
    let len = n * n;
    let scale = 1.0 / len as f64;
    let half_i = Complex64::new(0.0, -0.5);
    for ix in 0..n {
        let jx = (n - ix) % n;
        for iy in 0..n {
            let jy = (n - iy) % n;
            let zk = z[ix * n + iy];
            let zm = z[jx * n + jy].conj();
            out[ix * n + iy] = 0.5 * (zk + zm) * scale;
            out[len + ix * n + iy] = half_i * (zk - zm) * scale;
        }
    }
}

/// `phi - grad(Delta^{-1} div phi)`, mode by mode. Nyquist lines and the mean
/// mode are zeroed: the projector is not conjugate-consistent there.
pub fn leray_project(phi: &SpectralField) -> SpectralField {
    let mut out = phi.clone();
    leray_in_place(&mut out);
    out
}

pub(crate) fn leray_in_place(phi: &mut SpectralField) {
    let grid = phi.grid.clone();
    let n = grid.n();
    let len = n * n;
    let zero = Complex64::new(0.0, 0.0);
    for ix in 0..n {
        let kx = grid.wavenumber(ix) as f64;
        let nyq_x = grid.is_nyquist(ix);
        for iy in 0..n {
            let i = ix * n + iy;
            if nyq_x || grid.is_nyquist(iy) || (ix == 0 && iy == 0) {
                phi.data[i] = zero;
                phi.data[len + i] = zero;
                continue;
            }
            let ky = grid.wavenumber(iy) as f64;
            let k2 = kx * kx + ky * ky;
            let (a, b) = (phi.data[i], phi.data[len + i]);
            let dot = (a * kx + b * ky) / k2;
            phi.data[i] = a - dot * kx;
            phi.data[len + i] = b - dot * ky;
        }
    }
}

/// Leray projection followed by truncation to the dealiased band.
pub(crate) fn galerkin_in_place(phi: &mut SpectralField) {
    phi.band_limit();
    leray_in_place(phi);
}

/// `A phi`: multiplies mode `k` by `4 pi^2 |k|^2`.
pub fn stokes_apply(phi: &SpectralField) -> SpectralField {
    let grid = &phi.grid;
    let n = grid.n();
    let len = n * n;
    let mut out = phi.clone();
    for ix in 0..n {
        for iy in 0..n {
            let lam = grid.eigenvalue(ix, iy);
            let i = ix * n + iy;
            out.data[i] *= lam;
            out.data[len + i] *= lam;
        }
    }
    out
}

/// Parseval evaluation of `|phi|`, `||phi||` and `|A phi|`.
pub fn norm(phi: &SpectralField) -> NormTriple {
    let grid = &phi.grid;
    let n = grid.n();
    let len = n * n;
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for ix in 0..n {
        for iy in 0..n {
            let i = ix * n + iy;
            let m = phi.data[i].norm_sqr() + phi.data[len + i].norm_sqr();
            let lam = grid.eigenvalue(ix, iy);
            s0 += m;
            s1 += lam * m;
            s2 += lam * lam * m;
        }
    }
    NormTriple {
        l2: s0.sqrt(),
        h1: s1.sqrt(),
        h2: s2.sqrt(),
    }
}

/// `(phi, psi)` or `((phi, psi))`.
pub fn inner(phi: &SpectralField, psi: &SpectralField, kind: InnerKind) -> Result<f64, SpectralError> {
    phi.grid.check_same(&psi.grid)?;
    let grid = &phi.grid;
    let n = grid.n();
    let len = n * n;
    let mut s = 0.0;
    for ix in 0..n {
        for iy in 0..n {
            let i = ix * n + iy;
            let w = match kind {
                InnerKind::L2 => 1.0,
                InnerKind::H1 => grid.eigenvalue(ix, iy),
            };
            let p = phi.data[i].conj() * psi.data[i] + phi.data[len + i].conj() * psi.data[len + i];
            s += w * p.re;
        }
    }
    Ok(s)
}

/// Grid values of a field and of its gradient, the inputs of the quadratic
/// advection product.
pub(crate) struct Physical {
    /// `vel[i]` = u_i on the grid.
    pub vel: [Vec<f64>; 2],
    /// `grad[i][j]` = d_j u_i on the grid.
    pub grad: [[Vec<f64>; 2]; 2],
}

impl Physical {
    pub fn new(phi: &SpectralField) -> Self {
        let grid = &phi.grid;
        let n = grid.n();
        let len = n * n;
        let vel = phi.to_physical();
        let mut grad: [[Vec<f64>; 2]; 2] = Default::default();
        let zero = Complex64::new(0.0, 0.0);
        for (c, gc) in grad.iter_mut().enumerate() {
            // pack d_x u_c + i d_y u_c
            let mut z = vec![zero; len];
            for ix in 0..n {
                if grid.is_nyquist(ix) {
                    continue;
                }
                let kx = grid.wavenumber(ix) as f64;
                for iy in 0..n {
                    if grid.is_nyquist(iy) {
                        continue;
                    }
                    let ky = grid.wavenumber(iy) as f64;
                    let u = phi.data[c * len + ix * n + iy];
                    let iu = Complex64::new(-u.im, u.re) * TWO_PI;
                    let dx = iu * kx;
                    let dy = iu * ky;
                    z[ix * n + iy] = dx + Complex64::i() * dy;
                }
            }
            grid.fft2(&mut z, false);
            gc[0] = z.iter().map(|v| v.re).collect();
            gc[1] = z.iter().map(|v| v.im).collect();
        }
        Self { vel, grad }
    }

    /// Velocities only; the gradient slots are left empty.
    pub fn velocity_only(phi: &SpectralField) -> Self {
        Self {
            vel: phi.to_physical(),
            grad: Default::default(),
        }
    }

    pub fn max_speed(&self) -> f64 {
        self.vel[0]
            .iter()
            .zip(&self.vel[1])
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }
}

/// Accumulates `sum (a . grad) b` on the grid for a list of `(a, b)` pairs
/// and returns its Galerkin projection.
pub(crate) fn advect_sum(grid: &GridSpec, pairs: &[(&Physical, &Physical)]) -> SpectralField {
    let len = grid.plane_len();
    let mut z = vec![Complex64::new(0.0, 0.0); len];
    for (a, b) in pairs {
        for (p, zp) in z.iter_mut().enumerate() {
            let (ax, ay) = (a.vel[0][p], a.vel[1][p]);
            let px = ax * b.grad[0][0][p] + ay * b.grad[0][1][p];
            let py = ax * b.grad[1][0][p] + ay * b.grad[1][1][p];
            *zp += Complex64::new(px, py);
        }
    }
    grid.fft2(&mut z, true);
    let mut out = SpectralField::zeros(grid);
    unpack_pair(grid, &z, &mut out.data);
    galerkin_in_place(&mut out);
    out
}

/// Galerkin-truncated `B(u, v) = P_sigma (u . grad v)`.
pub fn bilinear(u: &SpectralField, v: &SpectralField) -> Result<SpectralField, SpectralError> {
    u.grid.check_same(&v.grid)?;
    let pu = Physical::new(u);
    let pv = Physical::new(v);
    Ok(advect_sum(&u.grid, &[(&pu, &pv)]))
}

/// Taylor-Green vortex `(sin 2pi x cos 2pi y, -cos 2pi x sin 2pi y)`.
pub fn taylor_green(grid: &GridSpec) -> SpectralField {
    SpectralField::from_fn(grid, |x, y| {
        [
            (TWO_PI * x).sin() * (TWO_PI * y).cos(),
            -(TWO_PI * x).cos() * (TWO_PI * y).sin(),
        ]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_band_limited, seeded};

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(n).unwrap()
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(GridSpec::new(6).is_err());
        assert!(GridSpec::new(9).is_err());
        assert!(GridSpec::new(8).is_ok());
        assert_eq!(grid(32).cutoff(), 10);
        assert_eq!(grid(64).cutoff(), 21);
    }

    #[test]
    fn physical_round_trip() {
        let g = grid(16);
        let mut rng = seeded(1);
        let u = random_band_limited(&g, &mut rng);
        let [ux, uy] = u.to_physical();
        let back = SpectralField::from_physical(&g, &ux, &uy);
        assert!(u.max_abs_diff(&back) < 1e-15);
    }

    #[test]
    fn gradient_field_is_annihilated() {
        let g = grid(16);
        let mut phi = SpectralField::zeros(&g);
        for (kx, ky, re, im) in [(1i64, 2i64, 0.3, -0.1), (-3, 1, 0.7, 0.2), (2, -2, -0.4, 0.5)] {
            let s = Complex64::new(re, im);
            let i2pi = Complex64::new(0.0, TWO_PI);
            phi.set_mode_pair(0, kx, ky, i2pi * kx as f64 * s);
            phi.set_mode_pair(1, kx, ky, i2pi * ky as f64 * s);
        }
        let p = leray_project(&phi);
        assert!(p.max_abs() < 1e-15 * phi.max_abs());
    }

    #[test]
    fn taylor_green_is_solenoidal_eigenfunction() {
        let g = grid(32);
        let u0 = taylor_green(&g);
        assert!(leray_project(&u0).max_abs_diff(&u0) < 1e-14);
        let au = stokes_apply(&u0);
        let expected = u0.scaled(8.0 * PI * PI);
        assert!(au.max_abs_diff(&expected) < 1e-12);
        let nt = norm(&u0);
        assert!((nt.l2 - 0.5f64.sqrt()).abs() < 1e-14);
        assert!((nt.h1 - TWO_PI).abs() < 1e-12);
        let ip = inner(&u0, &au, InnerKind::L2).unwrap();
        assert!((ip - LAMBDA1).abs() < 1e-10);
    }

    #[test]
    fn single_mode_scaled_by_lambda1() {
        let g = grid(16);
        let mut phi = SpectralField::zeros(&g);
        // k = (1, 0): a solenoidal mode points along y.
        phi.set_mode_pair(1, 1, 0, Complex64::new(0.25, 0.5));
        assert!(phi.divergence_residual() == 0.0);
        let a = stokes_apply(&phi);
        assert!(a.max_abs_diff(&phi.scaled(LAMBDA1)) < 1e-14);
        let nt = norm(&phi);
        assert!((nt.l2 * nt.l2 - 2.0 * 0.3125).abs() < 1e-15);
    }

    #[test]
    fn random_fields_project_per_mode() {
        let g = grid(16);
        let mut rng = seeded(7);
        let mut phi = crate::random::random_vector_unprojected(&g, &mut rng);
        phi.symmetrize();
        let p = leray_project(&phi);
        assert!(p.divergence_residual() < 1e-14);
        let pp = leray_project(&p);
        assert!(pp.max_abs_diff(&p) < 1e-15);
        assert!(p.conjugate_symmetry_defect() < 1e-15);
        // Independent per-mode formula: u - k (k.u)/|k|^2.
        let n = g.n() as i64;
        for kx in -(n / 2 - 1)..(n / 2) {
            for ky in -(n / 2 - 1)..(n / 2) {
                if kx == 0 && ky == 0 {
                    continue;
                }
                let a = phi.coeff(0, kx, ky);
                let b = phi.coeff(1, kx, ky);
                let k2 = (kx * kx + ky * ky) as f64;
                let d = (a * kx as f64 + b * ky as f64) / k2;
                assert!((p.coeff(0, kx, ky) - (a - d * kx as f64)).norm() < 1e-15);
                assert!((p.coeff(1, kx, ky) - (b - d * ky as f64)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn leray_is_self_adjoint() {
        let g = grid(16);
        let mut rng = seeded(3);
        let mut a = crate::random::random_vector_unprojected(&g, &mut rng);
        let mut b = crate::random::random_vector_unprojected(&g, &mut rng);
        a.symmetrize();
        b.symmetrize();
        let lhs = inner(&leray_project(&a), &b, InnerKind::L2).unwrap();
        let rhs = inner(&a, &leray_project(&b), InnerKind::L2).unwrap();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn bilinear_zero_and_taylor_green() {
        let g = grid(32);
        let u0 = taylor_green(&g);
        let z = SpectralField::zeros(&g);
        assert!(bilinear(&z, &u0).unwrap().is_zero());
        assert!(bilinear(&u0, &z).unwrap().is_zero());
        let b = bilinear(&u0, &u0).unwrap();
        assert!(b.max_abs() < 1e-12);
    }

    #[test]
    fn bilinear_grid_mismatch() {
        let a = SpectralField::zeros(&grid(8));
        let b = SpectralField::zeros(&grid(16));
        assert!(matches!(
            bilinear(&a, &b),
            Err(SpectralError::GridMismatch { left: 8, right: 16 })
        ));
        assert!(inner(&a, &b, InnerKind::L2).is_err());
    }

    #[test]
    fn inner_products_consistent() {
        let g = grid(16);
        let mut rng = seeded(11);
        let a = random_band_limited(&g, &mut rng);
        let nt = norm(&a);
        let l2 = inner(&a, &a, InnerKind::L2).unwrap();
        let h1 = inner(&a, &a, InnerKind::H1).unwrap();
        assert!((l2 - nt.l2 * nt.l2).abs() < 1e-13 * l2);
        assert!((h1 - nt.h1 * nt.h1).abs() < 1e-13 * h1);
        assert!(nt.satisfies_poincare(1e-14));
        let mut p = SpectralField::zeros(&g);
        let mut q = SpectralField::zeros(&g);
        p.set_mode_pair(1, 1, 0, Complex64::new(1.0, 0.0));
        q.set_mode_pair(1, 2, 0, Complex64::new(1.0, 0.0));
        assert_eq!(inner(&p, &q, InnerKind::L2).unwrap(), 0.0);
        assert_eq!(norm(&SpectralField::zeros(&g)), NormTriple::default());
    }
}
