//! Deterministic spherical quadrature rules.
//!
//! Uniform rules are spherical Fibonacci lattices (constant weights); the
//! Gauss product rule pairs Gauss-Legendre nodes in `cos θ` with equispaced
//! azimuths and integrates spherical polynomials up to a known degree exactly.

use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::error::{Error, Result};

const INV_GOLDEN: f64 = 0.618_033_988_749_894_9;
// Fractional part of 1/plastic number, used to decorrelate sequence ids.
const PLASTIC_STEP: f64 = 0.754_877_666_246_692_7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplerMode {
    UniformSphere,
    UniformHemisphere(Vector3<f64>),
    /// Weights integrate `f(ω)·max(ω·n, 0)`, i.e. the cosine is folded in.
    CosineHemisphere(Vector3<f64>),
    /// Gauss-Legendre in `cos θ` times equispaced `φ`; `count = theta × phi`.
    GaussProduct { theta: usize, phi: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereSampler {
    count: usize,
    mode: SamplerMode,
    sequence: u64,
}

impl SphereSampler {
    pub fn uniform_sphere(count: usize, sequence: u64) -> Result<Self> {
        Self::new(count, SamplerMode::UniformSphere, sequence)
    }

    pub fn uniform_hemisphere(count: usize, normal: Vector3<f64>, sequence: u64) -> Result<Self> {
        Self::new(count, SamplerMode::UniformHemisphere(unit_or_err(normal)?), sequence)
    }

    pub fn cosine_hemisphere(count: usize, normal: Vector3<f64>, sequence: u64) -> Result<Self> {
        Self::new(count, SamplerMode::CosineHemisphere(unit_or_err(normal)?), sequence)
    }

    pub fn gauss_product(theta: usize, phi: usize) -> Result<Self> {
        if theta == 0 || phi == 0 {
            return Err(Error::input("Gauss product rule needs at least one node per axis"));
        }
        Ok(SphereSampler {
            count: theta * phi,
            mode: SamplerMode::GaussProduct { theta, phi },
            sequence: 0,
        })
    }

    /// Smallest Gauss product rule that integrates the product of two
    /// band-limited functions of `bands` bands exactly (with one node of slack).
    pub fn exact_for_bands(bands: u32) -> Self {
        let n = bands.max(1) as usize;
        Self::gauss_product(n + 1, 2 * n + 2).expect("non-zero node counts")
    }

    fn new(count: usize, mode: SamplerMode, sequence: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::input("sampler count must be positive"));
        }
        Ok(SphereSampler { count, mode, sequence })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mode(&self) -> SamplerMode {
        self.mode
    }

    pub fn sequence(&self) -> u64 {
        self.sequence
    }

    /// Emits `(direction, weight)` pairs. Directions are unit length.
    pub fn samples(&self) -> Vec<(Vector3<f64>, f64)> {
        let n = self.count;
        let offset = (self.sequence as f64 * PLASTIC_STEP).fract();
        match self.mode {
            SamplerMode::UniformSphere => {
                let w = 4.0 * PI / n as f64;
                (0..n)
                    .map(|k| {
                        let z = 1.0 - (2 * k + 1) as f64 / n as f64;
                        (lattice_dir(z, k, offset), w)
                    })
                    .collect()
            }
            SamplerMode::UniformHemisphere(normal) => {
                let w = 2.0 * PI / n as f64;
                let frame = Frame::new(&normal);
                (0..n)
                    .map(|k| {
                        let z = 1.0 - (k as f64 + 0.5) / n as f64;
                        (frame.to_world(&lattice_dir(z, k, offset)), w)
                    })
                    .collect()
            }
            SamplerMode::CosineHemisphere(normal) => {
                let w = PI / n as f64;
                let frame = Frame::new(&normal);
                (0..n)
                    .map(|k| {
                        let z = (1.0 - (k as f64 + 0.5) / n as f64).sqrt();
                        (frame.to_world(&lattice_dir(z, k, offset)), w)
                    })
                    .collect()
            }
            SamplerMode::GaussProduct { theta, phi } => {
                let (nodes, weights) = gauss_legendre(theta);
                let dphi = 2.0 * PI / phi as f64;
                let mut out = Vec::with_capacity(theta * phi);
                for (z, wz) in nodes.iter().zip(&weights) {
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    for j in 0..phi {
                        let p = (j as f64 + 0.5) * dphi;
                        out.push((Vector3::new(r * p.cos(), r * p.sin(), *z), wz * dphi));
                    }
                }
                out
            }
        }
    }
}

fn unit_or_err(v: Vector3<f64>) -> Result<Vector3<f64>> {
    let n = v.norm();
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::input("hemisphere normal must be a finite non-zero vector"));
    }
    Ok(v / n)
}

fn lattice_dir(z: f64, k: usize, offset: f64) -> Vector3<f64> {
    let r = (1.0 - z * z).max(0.0).sqrt();
    let phi = 2.0 * PI * (k as f64 * INV_GOLDEN + offset).fract();
    Vector3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Orthonormal tangent frame around a unit normal (Duff et al. construction).
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub tangent: Vector3<f64>,
    pub bitangent: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl Frame {
    pub fn new(n: &Vector3<f64>) -> Self {
        let sign = 1.0f64.copysign(n.z);
        let a = -1.0 / (sign + n.z);
        let b = n.x * n.y * a;
        Frame {
            tangent: Vector3::new(1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x),
            bitangent: Vector3::new(b, sign + n.y * n.y * a, -n.y),
            normal: *n,
        }
    }

    pub fn to_world(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.tangent * v.x + self.bitangent * v.y + self.normal * v.z
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1], nodes in descending order.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = x;
        nodes[n - 1 - i] = -x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
