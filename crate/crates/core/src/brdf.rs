//! Diffuse + microfacet specular material model.
//!
//! `f = (1 - m)·ρ/π + k·D·F·G / (4 (ωi·n)(ωo·n))` with GGX `D` (α = r²),
//! height-correlated Smith `G`, Schlick `F` with `F0 = mix(0.04, ρ, m)` and a
//! specular weight `k` (1 by default, 0 for a Lambertian surface).

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rgb = [f64; 3];

pub const MIN_ROUGHNESS: f64 = 0.04;
pub const DEFAULT_ROUGHNESS: f64 = 0.8;
pub const DEFAULT_METALLIC: f64 = 0.0;
pub const DEFAULT_SPECULAR: f64 = 1.0;
const DIELECTRIC_F0: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub albedo: Rgb,
    pub roughness: f64,
    pub metallic: f64,
    #[serde(default = "default_specular")]
    pub specular: f64,
}

fn default_specular() -> f64 {
    DEFAULT_SPECULAR
}

impl Default for Material {
    fn default() -> Self {
        Material {
            albedo: [0.5; 3],
            roughness: DEFAULT_ROUGHNESS,
            metallic: DEFAULT_METALLIC,
            specular: DEFAULT_SPECULAR,
        }
    }
}

impl Material {
    pub fn new(albedo: Rgb, roughness: f64, metallic: f64) -> Result<Self> {
        let m = Material { albedo, roughness, metallic, specular: DEFAULT_SPECULAR };
        m.validate()?;
        Ok(m)
    }

    /// Pure `ρ/π` surface with the specular lobe switched off.
    pub fn lambertian(albedo: Rgb) -> Result<Self> {
        let m = Material { albedo, roughness: 1.0, metallic: 0.0, specular: 0.0 };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !self.albedo.iter().all(|c| unit(*c)) {
            return Err(Error::input(format!("albedo {:?} outside [0, 1]", self.albedo)));
        }
        if !unit(self.roughness) {
            return Err(Error::input(format!("roughness {} outside [0, 1]", self.roughness)));
        }
        if !unit(self.metallic) {
            return Err(Error::input(format!("metallic {} outside [0, 1]", self.metallic)));
        }
        if !unit(self.specular) {
            return Err(Error::input(format!("specular weight {} outside [0, 1]", self.specular)));
        }
        Ok(())
    }

    /// GGX α = r² after the roughness floor.
    pub fn alpha(&self) -> f64 {
        let r = self.roughness.max(MIN_ROUGHNESS);
        r * r
    }

    fn f0(&self) -> Rgb {
        let m = self.metallic;
        self.albedo.map(|a| DIELECTRIC_F0 * (1.0 - m) + a * m)
    }
}

/// `(1 - m)·ρ/π`, constant over directions.
pub fn eval_diffuse(mat: &Material) -> Rgb {
    let k = (1.0 - mat.metallic) / PI;
    mat.albedo.map(|a| a * k)
}

/// Specular lobe for incident `wi` and outgoing `wo` about shading normal `n`.
/// Returns zero when either direction is at or below the horizon.
pub fn eval_specular(mat: &Material, n: &Vector3<f64>, wi: &Vector3<f64>, wo: &Vector3<f64>) -> Rgb {
    let n_i = n.dot(wi);
    let n_o = n.dot(wo);
    if n_i <= 0.0 || n_o <= 0.0 || mat.specular == 0.0 {
        return [0.0; 3];
    }
    let h = wi + wo;
    let h_len = h.norm();
    if h_len == 0.0 {
        return [0.0; 3];
    }
    let h = h / h_len;
    let n_h = n.dot(&h).max(0.0);
    let o_h = wo.dot(&h).clamp(0.0, 1.0);

    let a2 = mat.alpha() * mat.alpha();
    let d_denom = n_h * n_h * (a2 - 1.0) + 1.0;
    let d = a2 / (PI * d_denom * d_denom);

    // height-correlated Smith G2 = 1 / (1 + Λ(wi) + Λ(wo))
    let lambda = |c: f64| {
        let c2 = c * c;
        0.5 * ((1.0 + a2 * (1.0 - c2) / c2).sqrt() - 1.0)
    };
    let g = 1.0 / (1.0 + lambda(n_i) + lambda(n_o));

    let schlick = (1.0 - o_h).powi(5);
    let common = mat.specular * d * g / (4.0 * n_i * n_o);
    mat.f0().map(|f0| (f0 + (1.0 - f0) * schlick) * common)
}

/// Full BRDF `f_d + f_s`.
pub fn eval(mat: &Material, n: &Vector3<f64>, wi: &Vector3<f64>, wo: &Vector3<f64>) -> Rgb {
    let d = eval_diffuse(mat);
    let s = eval_specular(mat, n, wi, wo);
    [d[0] + s[0], d[1] + s[1], d[2] + s[2]]
}
