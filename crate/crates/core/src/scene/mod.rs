//! Gaussian splat scenes: representation, PLY ingestion, material
//! assignment, composition and the on-disk relightable bundle.

mod bundle;
mod materials;
mod ply;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::brdf::Material;
use crate::error::{Error, Result};

pub use bundle::{
    BlobInfo, Bundle, BundleManifest, BundleMeta, FieldInfo, IndexBlob, GEOMETRY_FIELDS,
    GEOMETRY_STRIDE, MANIFEST_FILE, ROTATION_TABLE_SIZE,
};
pub use materials::{assign_materials, MaterialDefaults, MaterialSidecar, PerSplatMaterials};
pub use ply::{load_ply, read_ply, write_ply, SH_C0};

/// Extent of a splat's bounding box in standard deviations.
pub const EXTENT_SIGMAS: f64 = 3.0;
/// Condition number of Σ above which a splat is treated as degenerate.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SplatFlags {
    /// Σ is numerically singular; tracing skips the splat.
    pub degenerate: bool,
    /// The normal was not present in the source and is a +z placeholder.
    pub normal_placeholder: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splat {
    pub mean: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub scale: Vector3<f64>,
    pub opacity: f64,
    pub normal: Vector3<f64>,
    pub material: Material,
    pub flags: SplatFlags,
}

impl Splat {
    /// Builds a splat with the given geometry and normal; the normal is
    /// normalized and the degenerate flag computed from the scales.
    pub fn new(
        mean: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
        scale: Vector3<f64>,
        opacity: f64,
        normal: Vector3<f64>,
        material: Material,
    ) -> Result<Self> {
        let n = normal.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::input("splat normal must be non-zero"));
        }
        let mut s = Splat {
            mean,
            rotation,
            scale,
            opacity,
            normal: normal / n,
            material,
            flags: SplatFlags::default(),
        };
        s.validate()?;
        s.flags.degenerate = s.condition_number() > MAX_CONDITION;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean.iter().all(|v| v.is_finite()) {
            return Err(Error::input("splat mean is not finite"));
        }
        if !self.scale.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::input(format!("splat scales must be positive, got {:?}", self.scale)));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::input(format!("opacity {} outside [0, 1]", self.opacity)));
        }
        if (self.normal.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::input("splat normal is not unit length"));
        }
        self.material.validate()
    }

    /// Σ = R S Sᵀ Rᵀ.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let s2 = Matrix3::from_diagonal(&self.scale.component_mul(&self.scale));
        r * s2 * r.transpose()
    }

    /// Σ⁻¹ = R S⁻² Rᵀ, computed from the factors rather than by inversion.
    pub fn inverse_covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let inv = self.scale.map(|s| 1.0 / (s * s));
        r * Matrix3::from_diagonal(&inv) * r.transpose()
    }

    pub fn condition_number(&self) -> f64 {
        let max = self.scale.max();
        let min = self.scale.min();
        (max / min).powi(2)
    }

    /// Half extents of the axis-aligned box enclosing the k-sigma ellipsoid.
    pub fn half_extents(&self, sigmas: f64) -> Vector3<f64> {
        let c = self.covariance();
        Vector3::new(c[(0, 0)].sqrt(), c[(1, 1)].sqrt(), c[(2, 2)].sqrt()) * sigmas
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub name: Option<String>,
    splats: Vec<Splat>,
}

/// Rigid transform with uniform scale applied to a whole scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Default for Placement {
    fn default() -> Self {
        Placement { rotation: UnitQuaternion::identity(), translation: Vector3::zeros(), scale: 1.0 }
    }
}

impl Placement {
    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn then(&self, other: &Placement) -> Placement {
        Placement {
            rotation: self.rotation * other.rotation,
            translation: self.apply_point(&other.translation),
            scale: self.scale * other.scale,
        }
    }
}

impl Scene {
    pub fn new(splats: Vec<Splat>) -> Result<Self> {
        if splats.len() > i32::MAX as usize {
            return Err(Error::input("splat count exceeds 32-bit index range"));
        }
        for (i, s) in splats.iter().enumerate() {
            s.validate().map_err(|e| Error::input(format!("splat {i}: {e}")))?;
        }
        Ok(Scene { name: None, splats })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn splats(&self) -> &[Splat] {
        &self.splats
    }

    pub fn splats_mut(&mut self) -> &mut [Splat] {
        &mut self.splats
    }

    pub fn into_splats(self) -> Vec<Splat> {
        self.splats
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    pub fn require_non_empty(&self) -> Result<()> {
        if self.splats.is_empty() {
            return Err(Error::input("scene has no splats"));
        }
        Ok(())
    }

    /// Union of the splats' 3-sigma boxes, or `None` for an empty scene.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let mut it = self.splats.iter();
        let first = it.next()?;
        let e = first.half_extents(EXTENT_SIGMAS);
        let (mut lo, mut hi) = (first.mean - e, first.mean + e);
        for s in it {
            let e = s.half_extents(EXTENT_SIGMAS);
            lo = lo.inf(&(s.mean - e));
            hi = hi.sup(&(s.mean + e));
        }
        Some((lo, hi))
    }

    pub fn diameter(&self) -> f64 {
        self.bounds().map(|(lo, hi)| (hi - lo).norm()).unwrap_or(0.0)
    }

    /// Replaces placeholder normals with the splat's shortest axis, oriented
    /// away from the scene centroid.
    pub fn estimate_missing_normals(&mut self) {
        if self.splats.is_empty() {
            return;
        }
        let centroid =
            self.splats.iter().map(|s| s.mean).sum::<Vector3<f64>>() / self.splats.len() as f64;
        for s in &mut self.splats {
            if !s.flags.normal_placeholder {
                continue;
            }
            let axis = s.scale.imin();
            let mut n = s.rotation * Vector3::ith(axis, 1.0);
            if n.dot(&(s.mean - centroid)) < 0.0 {
                n = -n;
            }
            s.normal = n.normalize();
            s.flags.normal_placeholder = false;
        }
    }
}

/// Concatenates placed copies of scenes.
pub fn compose(parts: &[(Scene, Placement)]) -> Result<Scene> {
    let mut out = Vec::with_capacity(parts.iter().map(|(s, _)| s.len()).sum());
    for (i, (scene, p)) in parts.iter().enumerate() {
        if !(p.scale.is_finite() && p.scale > 0.0) || !p.translation.iter().all(|t| t.is_finite()) {
            return Err(Error::input(format!("placement {i} is not invertible")));
        }
        for s in scene.splats() {
            let mut t = s.clone();
            t.mean = p.apply_point(&s.mean);
            t.rotation = p.rotation * s.rotation;
            t.scale = s.scale * p.scale;
            t.normal = (p.rotation * s.normal).normalize();
            out.push(t);
        }
    }
    Scene::new(out)
}
