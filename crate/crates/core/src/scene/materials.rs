//! Material sidecar JSON:
//!
//! ```json
//! { "defaults": { "albedo": [r, g, b], "roughness": 0.8, "metallic": 0.0, "specular": 1.0 },
//!   "per_splat": { "albedo": [[r, g, b], ...], "roughness": [...], "metallic": [...],
//!                  "specular": [...] } }
//! ```
//!
//! Every key is optional. Per-splat arrays must have one entry per splat and
//! take precedence over defaults. Without an albedo entry a splat keeps the
//! color it was loaded with.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Scene;
use crate::brdf::{Rgb, DEFAULT_METALLIC, DEFAULT_ROUGHNESS, DEFAULT_SPECULAR};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MaterialDefaults {
    pub albedo: Option<Rgb>,
    pub roughness: Option<f64>,
    pub metallic: Option<f64>,
    pub specular: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PerSplatMaterials {
    pub albedo: Option<Vec<Rgb>>,
    pub roughness: Option<Vec<f64>>,
    pub metallic: Option<Vec<f64>>,
    pub specular: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MaterialSidecar {
    #[serde(default)]
    pub defaults: MaterialDefaults,
    pub per_splat: Option<PerSplatMaterials>,
}

impl MaterialSidecar {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::Shape(format!(
            "per-splat {what} has {got} entries, expected {expected} (one per splat)"
        )));
    }
    Ok(())
}

pub fn assign_materials(mut scene: Scene, sidecar: &MaterialSidecar) -> Result<Scene> {
    let n = scene.len();
    let empty = PerSplatMaterials::default();
    let per = sidecar.per_splat.as_ref().unwrap_or(&empty);
    if let Some(a) = &per.albedo {
        check_len("albedo", a.len(), n)?;
    }
    if let Some(r) = &per.roughness {
        check_len("roughness", r.len(), n)?;
    }
    if let Some(m) = &per.metallic {
        check_len("metallic", m.len(), n)?;
    }
    if let Some(k) = &per.specular {
        check_len("specular", k.len(), n)?;
    }
    let d = &sidecar.defaults;
    for (i, s) in scene.splats_mut().iter_mut().enumerate() {
        let m = &mut s.material;
        if let Some(a) = per.albedo.as_ref().map(|a| a[i]).or(d.albedo) {
            m.albedo = a;
        }
        m.roughness = per.roughness.as_ref().map(|r| r[i]).or(d.roughness).unwrap_or(DEFAULT_ROUGHNESS);
        m.metallic = per.metallic.as_ref().map(|v| v[i]).or(d.metallic).unwrap_or(DEFAULT_METALLIC);
        m.specular = per.specular.as_ref().map(|v| v[i]).or(d.specular).unwrap_or(DEFAULT_SPECULAR);
        m.validate().map_err(|e| Error::input(format!("material for splat {i}: {e}")))?;
    }
    Ok(scene)
}
