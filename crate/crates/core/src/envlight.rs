//! Environment lights: equirectangular maps, analytic presets, SH projection
//! and rotation trajectories.
//!
//! Equirect convention: row 0 is the +z pole, `θ = (y + ½)·π/h`; column 0
//! starts at `φ = 0` (+x) and `φ` grows toward +y, `φ = (x + ½)·2π/w`.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::brdf::Rgb;
use crate::error::{Error, Result};
use crate::sh::{axis_angle, eval_basis_into, reconstruct_raw, rotate_light, ShOrder, ShVector, SphereSampler};
use crate::transfer::RgbLight;

/// Environment lights stay low-frequency: at most this many SH bands.
pub const MAX_ENV_BANDS: u32 = 6;
/// Gauss product resolution used to project analytic presets.
const PRESET_THETA: usize = 96;
const PRESET_PHI: usize = 192;

fn check_order(order: ShOrder) -> Result<()> {
    if order.bands() > MAX_ENV_BANDS {
        return Err(Error::input(format!(
            "environment lights support at most {MAX_ENV_BANDS} SH bands (got {}); \
             the transfer is a low-frequency representation",
            order.bands()
        )));
    }
    Ok(())
}

/// Linear RGB equirectangular radiance map.
#[derive(Debug, Clone, PartialEq)]
pub struct EquirectImage {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl EquirectImage {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if height == 0 || width != 2 * height {
            return Err(Error::input(format!(
                "equirect map must have width = 2 x height, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::Shape(format!("{} pixels for a {width}x{height} map", pixels.len())));
        }
        if let Some(i) = pixels.iter().position(|p| p.iter().any(|c| !(c.is_finite() && *c >= 0.0))) {
            return Err(Error::input(format!(
                "environment radiance must be finite and non-negative (pixel {}, {})",
                i % width,
                i / width
            )));
        }
        Ok(EquirectImage { width, height, pixels })
    }

    /// Samples `f` at every pixel center.
    pub fn from_fn(height: usize, f: impl Fn(&Vector3<f64>) -> Rgb) -> Result<Self> {
        let width = 2 * height;
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(&pixel_direction(x, y, width, height)));
            }
        }
        EquirectImage::new(width, height, pixels)
    }

    /// Reads a PFM or Radiance RGBE (.hdr) file, detected by magic bytes.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(b"PF") || bytes.starts_with(b"Pf") {
            let img = crate::pfm::decode(&bytes)?;
            let px = img.pixels.iter().map(|p| p.map(f64::from)).collect();
            return EquirectImage::new(img.width, img.height, px);
        }
        if bytes.starts_with(b"#?") {
            let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Hdr)
                .map_err(|e| Error::Image(format!("RGBE: {e}")))?
                .to_rgb32f();
            let (w, h) = (img.width() as usize, img.height() as usize);
            let px = img.pixels().map(|p| p.0.map(f64::from)).collect();
            return EquirectImage::new(w, h, px);
        }
        Err(Error::Image(format!(
            "{}: not a PFM or Radiance RGBE file",
            path.display()
        )))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    /// Nearest-pixel lookup.
    pub fn radiance(&self, d: &Vector3<f64>) -> Rgb {
        let d = d.normalize();
        let theta = d.z.clamp(-1.0, 1.0).acos();
        let phi = d.y.atan2(d.x).rem_euclid(2.0 * PI);
        let y = ((theta / PI * self.height as f64) as usize).min(self.height - 1);
        let x = ((phi / (2.0 * PI) * self.width as f64) as usize).min(self.width - 1);
        self.pixels[y * self.width + x]
    }

    /// Pixel-area weighted projection, `w = sinθ·Δθ·Δφ`.
    pub fn project(&self, order: ShOrder) -> Result<RgbLight> {
        let (w, h) = (self.width, self.height);
        let n2 = order.basis_len();
        let dt = PI / h as f64;
        let dp = 2.0 * PI / w as f64;
        let rows: Vec<[Vec<f64>; 3]> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut acc = [vec![0.0; n2], vec![0.0; n2], vec![0.0; n2]];
                let mut basis = vec![0.0; n2];
                let theta = (y as f64 + 0.5) * dt;
                let weight = theta.sin() * dt * dp;
                for x in 0..w {
                    let d = pixel_direction(x, y, w, h);
                    eval_basis_into(&d, order.bands(), &mut basis);
                    let p = self.pixels[y * w + x];
                    for c in 0..3 {
                        let s = weight * p[c];
                        if s != 0.0 {
                            for (a, b) in acc[c].iter_mut().zip(&basis) {
                                *a += s * b;
                            }
                        }
                    }
                }
                acc
            })
            .collect();
        let mut total = [vec![0.0; n2], vec![0.0; n2], vec![0.0; n2]];
        for row in rows {
            for c in 0..3 {
                for (t, v) in total[c].iter_mut().zip(&row[c]) {
                    *t += v;
                }
            }
        }
        let [r, g, b] = total;
        Ok([ShVector::from_coeffs(order, r)?, ShVector::from_coeffs(order, g)?, ShVector::from_coeffs(order, b)?])
    }
}

/// Direction through the center of pixel `(x, y)`.
pub fn pixel_direction(x: usize, y: usize, width: usize, height: usize) -> Vector3<f64> {
    let theta = (y as f64 + 0.5) * PI / height as f64;
    let phi = (x as f64 + 0.5) * 2.0 * PI / width as f64;
    Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

/// Analytic environment presets.
#[derive(Debug, Clone, PartialEq)]
pub enum Preset {
    Constant(Rgb),
    /// `color · exp(sharpness · (dir·ω − 1))`
    Lobe { dir: Vector3<f64>, sharpness: f64, color: Rgb },
    /// Linear blend from horizon to zenith above the horizon, flat ground below.
    Sky { zenith: Rgb, horizon: Rgb, ground: Rgb },
}

impl Preset {
    pub const NAMES: &'static str = "constant[:v], sun[:x,y,z[:sharpness]], lobe:x,y,z[:sharpness], sky";

    /// Parses `constant`, `constant:0.5`, `sun`, `sun:0,0,1:16`, `lobe:1,0,0` or `sky`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let name = parts.next().unwrap_or_default().trim().to_ascii_lowercase();
        let args: Vec<&str> = parts.collect();
        let bad = || Error::input(format!("unknown environment '{s}' (expected a file or one of {})", Self::NAMES));
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        let vec3 = |t: &str| -> Result<Vector3<f64>> {
            let v: Vec<f64> = t.split(',').map(num).collect::<Result<_>>()?;
            if v.len() != 3 {
                return Err(bad());
            }
            Ok(Vector3::new(v[0], v[1], v[2]))
        };
        let preset = match (name.as_str(), args.as_slice()) {
            ("constant", []) => Preset::Constant([1.0; 3]),
            ("constant", [v]) => Preset::Constant([num(v)?; 3]),
            ("sun", []) => Preset::sun(Vector3::new(0.3, -0.4, 0.866), 24.0),
            ("sun" | "lobe", [d]) => Preset::sun(vec3(d)?, 24.0),
            ("sun" | "lobe", [d, k]) => Preset::sun(vec3(d)?, num(k)?),
            ("sky", []) => Preset::default_sky(),
            _ => return Err(bad()),
        };
        preset.validate()?;
        Ok(preset)
    }

    pub fn sun(dir: Vector3<f64>, sharpness: f64) -> Self {
        Preset::Lobe { dir, sharpness, color: [1.0; 3] }
    }

    pub fn default_sky() -> Self {
        Preset::Sky { zenith: [0.35, 0.55, 1.0], horizon: [1.0, 0.95, 0.85], ground: [0.25, 0.22, 0.2] }
    }

    fn validate(&self) -> Result<()> {
        let nonneg = |c: &Rgb| c.iter().all(|v| v.is_finite() && *v >= 0.0);
        let ok = match self {
            Preset::Constant(c) => nonneg(c),
            Preset::Lobe { dir, sharpness, color } => {
                dir.norm() > 0.0 && dir.iter().all(|v| v.is_finite()) && sharpness.is_finite() && *sharpness >= 0.0 && nonneg(color)
            }
            Preset::Sky { zenith, horizon, ground } => nonneg(zenith) && nonneg(horizon) && nonneg(ground),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::input("environment preset needs a non-zero direction and non-negative radiance"))
        }
    }

    pub fn radiance(&self, d: &Vector3<f64>) -> Rgb {
        match self {
            Preset::Constant(c) => *c,
            Preset::Lobe { dir, sharpness, color } => {
                let k = (sharpness * (dir.normalize().dot(d) - 1.0)).exp();
                color.map(|c| c * k)
            }
            Preset::Sky { zenith, horizon, ground } => {
                if d.z >= 0.0 {
                    std::array::from_fn(|c| horizon[c] + (zenith[c] - horizon[c]) * d.z)
                } else {
                    *ground
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvSource {
    Image(EquirectImage),
    Preset(Preset),
}

/// An environment light with its per-channel SH projection.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvLight {
    source: EnvSource,
    sh: RgbLight,
}

impl EnvLight {
    pub fn from_image(image: EquirectImage, order: ShOrder) -> Result<Self> {
        check_order(order)?;
        let sh = image.project(order)?;
        Ok(EnvLight { source: EnvSource::Image(image), sh })
    }

    pub fn from_preset(preset: Preset, order: ShOrder) -> Result<Self> {
        check_order(order)?;
        preset.validate()?;
        let sh = match &preset {
            // exact: only the DC term is non-zero
            Preset::Constant(c) => c.map(|v| ShVector::constant(order, v)),
            _ => {
                let samples = SphereSampler::gauss_product(PRESET_THETA, PRESET_PHI)?.samples();
                let mut out = [ShVector::zeros(order), ShVector::zeros(order), ShVector::zeros(order)];
                for (c, slot) in out.iter_mut().enumerate() {
                    *slot = crate::sh::project_samples(&samples, order, |d| preset.radiance(d)[c])?;
                }
                out
            }
        };
        Ok(EnvLight { source: EnvSource::Preset(preset), sh })
    }

    /// Loads a map from `spec` if it names an existing file, else parses a preset.
    pub fn from_spec(spec: &str, order: ShOrder) -> Result<Self> {
        if Path::new(spec).is_file() {
            load_envmap(spec, order)
        } else {
            EnvLight::from_preset(Preset::parse(spec)?, order)
        }
    }

    pub fn source(&self) -> &EnvSource {
        &self.source
    }

    pub fn sh(&self) -> &RgbLight {
        &self.sh
    }

    pub fn order(&self) -> ShOrder {
        self.sh[0].order()
    }

    /// Radiance of the source itself (not its SH approximation).
    pub fn radiance(&self, d: &Vector3<f64>) -> Rgb {
        match &self.source {
            EnvSource::Image(img) => img.radiance(d),
            EnvSource::Preset(p) => p.radiance(d),
        }
    }

    /// Radiance of the SH approximation.
    pub fn reconstruct(&self, d: &Vector3<f64>) -> Rgb {
        std::array::from_fn(|c| reconstruct_raw(self.sh[c].coeffs(), self.order().bands(), d))
    }

    /// SH coefficients as plain vectors, e.g. for manifests.
    pub fn coeffs(&self) -> [Vec<f64>; 3] {
        std::array::from_fn(|c| self.sh[c].coeffs().to_vec())
    }
}

pub fn load_envmap(path: impl AsRef<Path>, order: ShOrder) -> Result<EnvLight> {
    check_order(order)?;
    EnvLight::from_image(EquirectImage::load(path)?, order)
}

/// Rotates every channel of an RGB light.
pub fn rotate_rgb(light: &RgbLight, rotation: &Matrix3<f64>) -> Result<RgbLight> {
    let sampler = SphereSampler::exact_for_bands(light[0].order().bands());
    Ok([
        rotate_light(&light[0], rotation, &sampler)?,
        rotate_light(&light[1], rotation, &sampler)?,
        rotate_light(&light[2], rotation, &sampler)?,
    ])
}

/// `frames` lights rotating once about `axis`; frame 0 is `base` itself.
pub fn light_trajectory(base: &RgbLight, axis: &Vector3<f64>, frames: usize) -> Result<Vec<RgbLight>> {
    if frames == 0 {
        return Err(Error::input("a light trajectory needs at least one frame"));
    }
    axis_angle(axis, 0.0)?;
    (0..frames)
        .into_par_iter()
        .map(|k| {
            if k == 0 {
                return Ok(base.clone());
            }
            let r = axis_angle(axis, 2.0 * PI * k as f64 / frames as f64)?;
            rotate_rgb(base, &r)
        })
        .collect()
}
