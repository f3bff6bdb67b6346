//! Real spherical harmonics.
//!
//! Coefficients are stored band by band, `l = 0..n-1`, and within a band
//! `m = -l..=l`, so `index(l, m) = l² + l + m`. The basis is orthonormal over
//! the full sphere and carries no Condon-Shortley phase:
//! `Y₁₋₁ ∝ y`, `Y₁₀ ∝ z`, `Y₁₁ ∝ x`.

mod sampler;

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use sampler::{gauss_legendre, Frame, SamplerMode, SphereSampler};

pub const MAX_BANDS: u32 = 10;

/// Number of SH bands `n`; the basis has `n²` functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct ShOrder(u32);

impl ShOrder {
    pub fn new(bands: u32) -> Result<Self> {
        if !(1..=MAX_BANDS).contains(&bands) {
            return Err(Error::input(format!(
                "SH order must be within 1..={MAX_BANDS}, got {bands}"
            )));
        }
        Ok(ShOrder(bands))
    }

    pub fn bands(self) -> u32 {
        self.0
    }

    pub fn basis_len(self) -> usize {
        (self.0 * self.0) as usize
    }
}

impl TryFrom<u32> for ShOrder {
    type Error = Error;

    fn try_from(value: u32) -> Result<Self> {
        ShOrder::new(value)
    }
}

impl From<ShOrder> for u32 {
    fn from(o: ShOrder) -> u32 {
        o.0
    }
}

impl std::fmt::Display for ShOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[inline]
pub fn sh_index(l: u32, m: i32) -> usize {
    ((l * l + l) as i32 + m) as usize
}

/// Unit direction on the sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction(Vector3<f64>);

impl Direction {
    pub const TOLERANCE: f64 = 1e-6;

    /// Accepts `v` only if it is already unit length within [`Self::TOLERANCE`].
    pub fn new(v: Vector3<f64>) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() || (n - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::input(format!(
                "direction ({}, {}, {}) is not unit length (|v| = {n})",
                v.x, v.y, v.z
            )));
        }
        Ok(Direction(v))
    }

    pub fn normalize(v: Vector3<f64>) -> Result<Self> {
        let n = v.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::input("cannot normalize a zero or non-finite vector"));
        }
        Ok(Direction(v / n))
    }

    pub(crate) fn from_unit(v: Vector3<f64>) -> Self {
        Direction(v)
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.0
    }
}

impl std::ops::Neg for Direction {
    type Output = Direction;

    fn neg(self) -> Direction {
        Direction(-self.0)
    }
}

/// SH coefficients of one scalar sphere function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShVector {
    order: ShOrder,
    coeffs: Vec<f64>,
}

impl ShVector {
    pub fn zeros(order: ShOrder) -> Self {
        ShVector { order, coeffs: vec![0.0; order.basis_len()] }
    }

    pub fn from_coeffs(order: ShOrder, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != order.basis_len() {
            return Err(Error::Shape(format!(
                "order {order} needs {} coefficients, got {}",
                order.basis_len(),
                coeffs.len()
            )));
        }
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::input(format!("SH coefficient {i} is not finite")));
        }
        Ok(ShVector { order, coeffs })
    }

    /// Constant function with value `c`.
    pub fn constant(order: ShOrder, c: f64) -> Self {
        let mut v = Self::zeros(order);
        v.coeffs[0] = c * 2.0 * PI.sqrt();
        v
    }

    pub fn order(&self) -> ShOrder {
        self.order
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn dot(&self, other: &ShVector) -> Result<f64> {
        if self.order != other.order {
            return Err(Error::OrderMismatch { bundle: self.order.0, light: other.order.0 });
        }
        Ok(self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum())
    }

    pub fn scaled(&self, s: f64) -> ShVector {
        ShVector { order: self.order, coeffs: self.coeffs.iter().map(|c| c * s).collect() }
    }

    pub fn add(&self, other: &ShVector) -> Result<ShVector> {
        if self.order != other.order {
            return Err(Error::OrderMismatch { bundle: self.order.0, light: other.order.0 });
        }
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect();
        Ok(ShVector { order: self.order, coeffs })
    }

    /// Squared coefficient norm of each band.
    pub fn band_energy(&self) -> Vec<f64> {
        (0..self.order.0)
            .map(|l| {
                let lo = (l * l) as usize;
                let hi = ((l + 1) * (l + 1)) as usize;
                self.coeffs[lo..hi].iter().map(|c| c * c).sum()
            })
            .collect()
    }

    /// Copy truncated (or zero-padded) to another order.
    pub fn with_order(&self, order: ShOrder) -> ShVector {
        let mut out = ShVector::zeros(order);
        let n = out.coeffs.len().min(self.coeffs.len());
        out.coeffs[..n].copy_from_slice(&self.coeffs[..n]);
        out
    }
}

fn norm_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = MAX_BANDS;
        let mut t = vec![0.0; (n * n) as usize];
        for l in 0..n {
            for m in 0..=l {
                // (l-m)!/(l+m)!
                let mut ratio = 1.0;
                for k in (l - m + 1)..=(l + m) {
                    ratio /= k as f64;
                }
                let k = ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt();
                let k = if m == 0 { k } else { k * std::f64::consts::SQRT_2 };
                t[sh_index(l, m as i32)] = k;
            }
        }
        t
    })
}

/// Writes `Y_j(v)` for `j < bands²` into `out`. `v` must be unit length.
pub fn eval_basis_into(v: &Vector3<f64>, bands: u32, out: &mut [f64]) {
    debug_assert!(out.len() >= (bands * bands) as usize);
    let norms = norm_table();
    let (x, y, z) = (v.x, v.y, v.z);
    // Legendre functions with sin^m θ factored out; (x + iy)^m restores it
    // together with cos(mφ) / sin(mφ).
    let mut pmm = 1.0;
    let (mut re, mut im) = (1.0, 0.0);
    for m in 0..bands {
        if m > 0 {
            pmm *= (2 * m - 1) as f64;
            let r = re * x - im * y;
            im = re * y + im * x;
            re = r;
        }
        let mut store = |l: u32, p: f64| {
            if m == 0 {
                out[sh_index(l, 0)] = norms[sh_index(l, 0)] * p;
            } else {
                let k = norms[sh_index(l, m as i32)] * p;
                out[sh_index(l, m as i32)] = k * re;
                out[sh_index(l, -(m as i32))] = k * im;
            }
        };
        store(m, pmm);
        if m + 1 < bands {
            let mut p_prev = pmm;
            let mut p = z * (2 * m + 1) as f64 * pmm;
            store(m + 1, p);
            for l in (m + 2)..bands {
                let next = ((2 * l - 1) as f64 * z * p - (l + m - 1) as f64 * p_prev)
                    / (l - m) as f64;
                p_prev = p;
                p = next;
                store(l, p);
            }
        }
    }
}

pub fn eval_sh_basis(dir: &Direction, order: ShOrder) -> Vec<f64> {
    let mut out = vec![0.0; order.basis_len()];
    eval_basis_into(&dir.0, order.0, &mut out);
    out
}

/// Sum of `coeffs[j]·Y_j(dir)`.
pub fn reconstruct(v: &ShVector, dir: &Direction) -> f64 {
    reconstruct_raw(&v.coeffs, v.order.0, &dir.0)
}

pub(crate) fn reconstruct_raw(coeffs: &[f64], bands: u32, v: &Vector3<f64>) -> f64 {
    let mut basis = [0.0; (MAX_BANDS * MAX_BANDS) as usize];
    eval_basis_into(v, bands, &mut basis);
    coeffs.iter().zip(&basis).map(|(c, y)| c * y).sum()
}

const PROJECT_CHUNK: usize = 4096;

/// Quadrature projection `coeffs[j] = Σ_k w_k f(d_k) Y_j(d_k)`.
///
/// Chunks are reduced pairwise in a fixed order, so the result does not
/// depend on thread scheduling.
pub fn project<F>(f: F, order: ShOrder, sampler: &SphereSampler) -> Result<ShVector>
where
    F: Fn(&Direction) -> f64 + Sync,
{
    let samples = sampler.samples();
    project_samples(&samples, order, |d| f(&Direction::from_unit(*d)))
}

pub(crate) fn project_samples<F>(
    samples: &[(Vector3<f64>, f64)],
    order: ShOrder,
    f: F,
) -> Result<ShVector>
where
    F: Fn(&Vector3<f64>) -> f64 + Sync,
{
    let n2 = order.basis_len();
    let partials: Vec<Vec<f64>> = samples
        .par_chunks(PROJECT_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; n2];
            let mut basis = vec![0.0; n2];
            for (d, w) in chunk {
                let value = f(d);
                if !value.is_finite() {
                    return Err(Error::Projection { direction: [d.x, d.y, d.z] });
                }
                eval_basis_into(d, order.0, &mut basis);
                let s = w * value;
                for (a, y) in acc.iter_mut().zip(&basis) {
                    *a += s * y;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let coeffs = pairwise_sum(partials).unwrap_or_else(|| vec![0.0; n2]);
    Ok(ShVector { order, coeffs })
}

fn pairwise_sum(mut parts: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop()
}

pub fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if !err.is_finite() || err > 1e-5 {
        return Err(Error::input(format!(
            "rotation matrix is not orthonormal (max |RᵀR - I| = {err:e})"
        )));
    }
    Ok(())
}

/// Rotates a band-limited light: the result is the projection of
/// `ω ↦ reconstruct(v, Rᵀω)`.
///
/// Each band is re-projected onto itself, so bands never leak into one
/// another. Band 0 and all-zero bands are copied unchanged.
pub fn rotate_light(v: &ShVector, rotation: &Matrix3<f64>, sampler: &SphereSampler) -> Result<ShVector> {
    check_rotation(rotation)?;
    let bands = v.order.0;
    let n2 = v.order.basis_len();
    let rt = rotation.transpose();
    let samples = sampler.samples();
    let mut acc = vec![0.0; n2];
    let mut ya = vec![0.0; n2];
    let mut yb = vec![0.0; n2];
    for (d, w) in &samples {
        eval_basis_into(d, bands, &mut ya);
        eval_basis_into(&(rt * d), bands, &mut yb);
        for l in 1..bands {
            let lo = (l * l) as usize;
            let hi = ((l + 1) * (l + 1)) as usize;
            let f: f64 = v.coeffs[lo..hi].iter().zip(&yb[lo..hi]).map(|(c, y)| c * y).sum();
            for j in lo..hi {
                acc[j] += w * f * ya[j];
            }
        }
    }
    acc[0] = v.coeffs[0];
    for l in 1..bands {
        let lo = (l * l) as usize;
        let hi = ((l + 1) * (l + 1)) as usize;
        if v.coeffs[lo..hi].iter().all(|c| *c == 0.0) {
            acc[lo..hi].iter_mut().for_each(|c| *c = 0.0);
        }
    }
    ShVector::from_coeffs(v.order, acc)
}

/// Rotation by `angle` radians about `axis` (right-handed).
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Result<Matrix3<f64>> {
    let n = axis.norm();
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::input("rotation axis must be non-zero"));
    }
    let unit = nalgebra::Unit::new_normalize(*axis);
    Ok(*nalgebra::Rotation3::from_axis_angle(&unit, angle).matrix())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn order(n: u32) -> ShOrder {
        ShOrder::new(n).unwrap()
    }

    /// Zonal clamped-cosine coefficients by composite Simpson integration of
    /// `2π ∫₀¹ z · N_l P_l(z) dz` with explicit Legendre polynomials.
    fn clamped_cosine_oracle() -> [f64; 4] {
        let legendre = |l: usize, z: f64| match l {
            0 => 1.0,
            1 => z,
            2 => 0.5 * (3.0 * z * z - 1.0),
            _ => 0.5 * (5.0 * z * z * z - 3.0 * z),
        };
        let n = 20_000;
        let h = 1.0 / n as f64;
        let mut out = [0.0; 4];
        for (l, o) in out.iter_mut().enumerate() {
            let norm = ((2 * l + 1) as f64 / (4.0 * PI)).sqrt();
            let f = |z: f64| z * norm * legendre(l, z);
            let mut s = f(0.0) + f(1.0);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * f(i as f64 * h);
            }
            *o = 2.0 * PI * s * h / 3.0;
        }
        out
    }

    #[test]
    fn oracle_matches_frozen_clamped_cosine_series() {
        let o = clamped_cosine_oracle();
        let frozen = [0.886227, 1.023327, 0.495416, 0.0];
        for (a, b) in o.iter().zip(frozen) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn order_bounds() {
        assert!(ShOrder::new(0).is_err());
        assert!(ShOrder::new(11).is_err());
        assert_eq!(order(3).basis_len(), 9);
        assert_eq!(order(10).basis_len(), 100);
    }

    #[test]
    fn direction_requires_unit_length() {
        assert!(Direction::new(Vector3::new(0.0, 0.0, 1.0 + 5e-7)).is_ok());
        assert!(Direction::new(Vector3::new(0.0, 0.0, 1.1)).is_err());
        assert!(Direction::normalize(Vector3::zeros()).is_err());
    }

    #[test]
    fn dc_basis_is_constant() {
        let d = Direction::normalize(Vector3::new(0.3, -0.7, 0.2)).unwrap();
        let y = eval_sh_basis(&d, order(1));
        assert!((y[0] - 0.2820948).abs() < 1e-7);
    }

    #[test]
    fn first_band_at_pole() {
        let y = eval_sh_basis(&Direction::new(Vector3::z()).unwrap(), order(2));
        assert!((y[sh_index(1, 0)] - 0.4886025).abs() < 1e-7);
        assert!(y[sh_index(1, -1)].abs() < 1e-15);
        assert!(y[sh_index(1, 1)].abs() < 1e-15);
        // no Condon-Shortley phase: Y₁₁ is +x, Y₁₋₁ is +y
        let yx = eval_sh_basis(&Direction::new(Vector3::x()).unwrap(), order(2));
        assert!((yx[sh_index(1, 1)] - 0.4886025).abs() < 1e-7);
        let yy = eval_sh_basis(&Direction::new(Vector3::y()).unwrap(), order(2));
        assert!((yy[sh_index(1, -1)] - 0.4886025).abs() < 1e-7);
    }

    #[test]
    fn known_second_band_values() {
        // Y₂₋₂ = 1.092548 xy, Y₂₀ = 0.315392 (3z² - 1), Y₂₂ = 0.546274 (x² - y²)
        let v = Vector3::new(0.48, 0.6, 0.64);
        let y = eval_sh_basis(&Direction::new(v).unwrap(), order(3));
        assert!((y[sh_index(2, -2)] - 1.0925484 * v.x * v.y).abs() < 1e-6);
        assert!((y[sh_index(2, 0)] - 0.3153916 * (3.0 * v.z * v.z - 1.0)).abs() < 1e-6);
        assert!((y[sh_index(2, 2)] - 0.5462742 * (v.x * v.x - v.y * v.y)).abs() < 1e-6);
        assert!((y[sh_index(2, 1)] - 1.0925484 * v.x * v.z).abs() < 1e-6);
    }

    #[test]
    fn antipodal_parity() {
        let d = Direction::normalize(Vector3::new(0.2, 0.5, -0.8)).unwrap();
        let a = eval_sh_basis(&d, order(6));
        let b = eval_sh_basis(&-d, order(6));
        for l in 0..6u32 {
            let s = if l % 2 == 0 { 1.0 } else { -1.0 };
            for m in -(l as i32)..=l as i32 {
                let j = sh_index(l, m);
                assert!((b[j] - s * a[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gram_matrix_is_identity() {
        let n = order(4);
        let sampler = SphereSampler::uniform_sphere(200_000, 0).unwrap();
        let samples = sampler.samples();
        let mut g = vec![0.0; 256];
        let mut y = vec![0.0; 16];
        for (d, w) in &samples {
            eval_basis_into(d, 4, &mut y);
            for p in 0..16 {
                for q in 0..16 {
                    g[p * 16 + q] += w * y[p] * y[q];
                }
            }
        }
        let mut worst: f64 = 0.0;
        for p in 0..n.basis_len() {
            for q in 0..n.basis_len() {
                let id = if p == q { 1.0 } else { 0.0 };
                worst = worst.max((g[p * 16 + q] - id).abs());
            }
        }
        assert!(worst <= 2e-3, "max |G - I| = {worst}");
    }

    #[test]
    fn project_constant() {
        let s = SphereSampler::uniform_sphere(100_000, 0).unwrap();
        let v = project(|_| 1.0, order(1), &s).unwrap();
        assert!((v.coeffs()[0] - 3.5449077).abs() < 1e-3);
    }

    #[test]
    fn project_clamped_cosine() {
        let oracle = clamped_cosine_oracle();
        let s = SphereSampler::uniform_sphere(100_000, 0).unwrap();
        let v = project(|d| d.vector().z.max(0.0), order(4), &s).unwrap();
        for l in 0..4u32 {
            for m in -(l as i32)..=l as i32 {
                let c = v.coeffs()[sh_index(l, m)];
                let expect = if m == 0 { oracle[l as usize] } else { 0.0 };
                assert!((c - expect).abs() < 1e-3, "l={l} m={m}: {c}");
            }
        }
    }

    #[test]
    fn project_basis_function_gives_unit_vector() {
        let s = SphereSampler::uniform_sphere(100_000, 0).unwrap();
        let o = order(3);
        for j in 0..o.basis_len() {
            let v = project(|d| eval_sh_basis(d, o)[j], o, &s).unwrap();
            for (i, c) in v.coeffs().iter().enumerate() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((c - e).abs() < 2e-3);
            }
        }
    }

    #[test]
    fn project_reports_non_finite() {
        let s = SphereSampler::uniform_sphere(100, 0).unwrap();
        let err = project(|d| if d.vector().z > 0.5 { f64::NAN } else { 0.0 }, order(2), &s);
        assert!(matches!(err, Err(Error::Projection { .. })));
    }

    #[test]
    fn projection_is_deterministic() {
        let s = SphereSampler::uniform_sphere(50_000, 7).unwrap();
        let f = |d: &Direction| (d.vector().x * 3.0).sin() + d.vector().z;
        let a = project(f, order(5), &s).unwrap();
        let b = project(f, order(5), &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reconstruct_band_limited() {
        let o = order(3);
        let s = SphereSampler::uniform_sphere(100_000, 0).unwrap();
        let j = sh_index(2, 1);
        let v = project(|d| eval_sh_basis(d, o)[j], o, &s).unwrap();
        for dir in [Vector3::new(0.1, 0.7, 0.3), Vector3::new(-1.0, 0.2, -0.4)] {
            let d = Direction::normalize(dir).unwrap();
            assert!((reconstruct(&v, &d) - eval_sh_basis(&d, o)[j]).abs() < 2e-3);
        }
        let d = Direction::normalize(Vector3::new(1.0, 1.0, 1.0)).unwrap();
        assert_eq!(reconstruct(&ShVector::zeros(o), &d), 0.0);
        assert!((reconstruct(&ShVector::constant(o, 1.0), &d) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_identity_and_constant() {
        let o = order(4);
        let s = SphereSampler::exact_for_bands(4);
        let v = ShVector::from_coeffs(o, (0..16).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let r = rotate_light(&v, &Matrix3::identity(), &s).unwrap();
        for (a, b) in r.coeffs().iter().zip(v.coeffs()) {
            assert!((a - b).abs() < 1e-6);
        }
        let c = ShVector::constant(o, 2.5);
        let rot = axis_angle(&Vector3::new(1.0, 2.0, 0.5), 1.3).unwrap();
        assert_eq!(rotate_light(&c, &rot, &s).unwrap(), c);
    }

    #[test]
    fn rotation_moves_clamped_cosine_from_z_to_x() {
        let o = order(4);
        let dense = SphereSampler::uniform_sphere(100_000, 0).unwrap();
        let v = project(|d| d.vector().z.max(0.0), o, &dense).unwrap();
        // maps +z onto +x
        let r = axis_angle(&Vector3::y(), std::f64::consts::FRAC_PI_2).unwrap();
        assert!((r * Vector3::z() - Vector3::x()).norm() < 1e-12);
        let rotated = rotate_light(&v, &r, &SphereSampler::exact_for_bands(4)).unwrap();
        let at_x = reconstruct(&rotated, &Direction::new(Vector3::x()).unwrap());
        let at_z = reconstruct(&v, &Direction::new(Vector3::z()).unwrap());
        assert!((at_x - at_z).abs() < 1e-3);
        // direct re-projection oracle
        let direct = project(|d| d.vector().x.max(0.0), o, &dense).unwrap();
        for (a, b) in rotated.coeffs().iter().zip(direct.coeffs()) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn rotation_rejects_non_orthonormal() {
        let v = ShVector::constant(order(2), 1.0);
        let m = Matrix3::identity() * 1.01;
        assert!(rotate_light(&v, &m, &SphereSampler::exact_for_bands(2)).is_err());
    }

    #[test]
    fn order_nesting_is_exact() {
        let d = Vector3::new(0.36, -0.48, 0.8);
        let mut a = vec![0.0; 36];
        let mut b = vec![0.0; 25];
        eval_basis_into(&d, 6, &mut a);
        eval_basis_into(&d, 5, &mut b);
        assert_eq!(&a[..25], &b[..]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn unit() -> impl Strategy<Value = Vector3<f64>> {
            (-1.0f64..1.0, 0.0f64..std::f64::consts::TAU)
                .prop_map(|(z, p)| {
                    let r = (1.0 - z * z).sqrt();
                    Vector3::new(r * p.cos(), r * p.sin(), z)
                })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn band_energy_survives_rotation(
                coeffs in proptest::collection::vec(-1.0f64..1.0, 16),
                axis in unit(),
                angle in 0.0f64..6.3,
            ) {
                let v = ShVector::from_coeffs(order(4), coeffs).unwrap();
                let r = axis_angle(&axis, angle).unwrap();
                let rot = rotate_light(&v, &r, &SphereSampler::exact_for_bands(4)).unwrap();
                for (a, b) in v.band_energy().iter().zip(rot.band_energy()) {
                    prop_assert!((a - b).abs() <= 1e-3 * a.max(1e-9));
                }
            }

            #[test]
            fn parseval_on_shared_band(
                a in proptest::collection::vec(-1.0f64..1.0, 9),
                b in proptest::collection::vec(-1.0f64..1.0, 9),
            ) {
                let o = order(3);
                let va = ShVector::from_coeffs(o, a).unwrap();
                let vb = ShVector::from_coeffs(o, b).unwrap();
                let s = SphereSampler::uniform_sphere(20_000, 1).unwrap();
                let integral: f64 = s.samples().iter().map(|(d, w)| {
                    let d = Direction::from_unit(*d);
                    w * reconstruct(&va, &d) * reconstruct(&vb, &d)
                }).sum();
                let dot = va.dot(&vb).unwrap();
                let scale = va.coeffs().iter().map(|c| c*c).sum::<f64>().sqrt()
                    * vb.coeffs().iter().map(|c| c*c).sum::<f64>().sqrt();
                prop_assert!((dot - integral).abs() <= 1e-3 * scale.max(dot.abs()));
            }
        }
    }
}
