//! Software splatting: EWA projection, tiled front-to-back compositing and
//! the pseudo-depth / normal diagnostics.

mod camera;

use std::path::Path;

use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::{Scene, Splat};

pub use camera::{Camera, CameraSpec};

/// Splats closer than this (camera-space z) are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Added to the diagonal of every projected covariance, in px².
pub const COVARIANCE_FLOOR: f64 = 0.3;
pub const ALPHA_CLAMP: f64 = 0.99;
/// Per-pixel compositing stops below this transmittance.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
pub const TILE_SIZE: usize = 16;
/// Half-width of the screen-space bounding rectangle, in standard deviations.
pub const EXTENT_SIGMAS: f64 = 3.0;
/// Pixels below this coverage are left out of the normal loss.
pub const LOSS_MIN_ALPHA: f64 = 0.5;

/// A splat projected to screen space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedSplat {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub depth: f64,
}

impl ProjectedSplat {
    /// Standard deviation along the major axis, in pixels.
    pub fn major_sigma(&self) -> f64 {
        let (a, b, c) = (self.cov[(0, 0)], self.cov[(0, 1)], self.cov[(1, 1)]);
        let mid = 0.5 * (a + c);
        let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        (mid + disc).sqrt()
    }
}

/// EWA projection `Σ' = J W Σ Wᵀ Jᵀ + floor·I`. `None` when culled.
pub fn project_splat(splat: &Splat, cam: &Camera) -> Option<ProjectedSplat> {
    let t = cam.to_camera(&splat.mean);
    if !(t.z > NEAR_PLANE) {
        return None;
    }
    let f = cam.focal();
    let (cx, cy) = cam.principal_point();
    let j = Matrix2x3::new(f / t.z, 0.0, -f * t.x / (t.z * t.z), 0.0, f / t.z, -f * t.y / (t.z * t.z));
    let w = cam.world_to_cam();
    let jw = j * w;
    let cov = jw * splat.covariance() * jw.transpose() + Matrix2::identity() * COVARIANCE_FLOOR;
    let cov = 0.5 * (cov + cov.transpose());
    let mean = Vector2::new(f * t.x / t.z + cx, f * t.y / t.z + cy);
    if !mean.iter().all(|v| v.is_finite()) || !cov.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some(ProjectedSplat { mean, cov, depth: t.z })
}

/// Linear RGB radiance plus alpha and alpha-normalized depth, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Framebuffer {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[f64; 3]>,
    pub alpha: Vec<f64>,
    /// `Σ d_i α_i T_i / alpha`, zero where nothing was drawn.
    pub depth: Vec<f64>,
    /// Number of splats culled by the near plane.
    pub culled: usize,
}

impl Framebuffer {
    fn blank(width: usize, height: usize) -> Self {
        let n = width * height;
        Framebuffer { width, height, rgb: vec![[0.0; 3]; n], alpha: vec![0.0; n], depth: vec![0.0; n], culled: 0 }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        self.rgb[y * self.width + x]
    }

    pub fn to_f32(&self) -> Vec<[f32; 3]> {
        self.rgb.iter().map(|p| [p[0] as f32, p[1] as f32, p[2] as f32]).collect()
    }

    pub fn write_pfm(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::pfm::write(path, self.width, self.height, &self.to_f32())
    }

    /// 8-bit sRGB, clamped to [0, 1] before encoding.
    pub fn to_srgb8(&self) -> Vec<u8> {
        self.rgb.iter().flat_map(|p| p.map(|c| (linear_to_srgb(c) * 255.0 + 0.5) as u8)).collect()
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        image::save_buffer(
            path,
            &self.to_srgb8(),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::Image(e.to_string()))
    }

    /// Writes PFM or PNG depending on the extension (PFM when absent).
    pub fn write_image(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
            Some("png") => self.write_png(path),
            Some("pfm") | None => self.write_pfm(path),
            Some(other) => Err(Error::input(format!("unsupported image extension '.{other}' (use .pfm or .png)"))),
        }
    }
}

pub fn linear_to_srgb(c: f64) -> f64 {
    let c = if c.is_finite() { c.clamp(0.0, 1.0) } else { 0.0 };
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        (1.055 * c.powf(1.0 / 2.4) - 0.055).min(1.0)
    }
}

struct Prepared {
    id: u32,
    mean: Vector2<f64>,
    conic: Matrix2<f64>,
    depth: f64,
    opacity: f64,
    rect: [usize; 4],
}

fn prepare(scene: &Scene, cam: &Camera) -> (Vec<Prepared>, usize) {
    let (w, h) = (cam.width() as f64, cam.height() as f64);
    let items: Vec<Option<Prepared>> = scene
        .splats()
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let p = project_splat(s, cam)?;
            let conic = p.cov.try_inverse()?;
            let rx = EXTENT_SIGMAS * p.cov[(0, 0)].sqrt();
            let ry = EXTENT_SIGMAS * p.cov[(1, 1)].sqrt();
            let x0 = (p.mean.x - rx).floor().max(0.0);
            let x1 = (p.mean.x + rx).ceil().min(w);
            let y0 = (p.mean.y - ry).floor().max(0.0);
            let y1 = (p.mean.y + ry).ceil().min(h);
            if x0 >= x1 || y0 >= y1 {
                return None;
            }
            Some(Prepared {
                id: i as u32,
                mean: p.mean,
                conic,
                depth: p.depth,
                opacity: s.opacity,
                rect: [x0 as usize, x1 as usize, y0 as usize, y1 as usize],
            })
        })
        .collect();
    let culled = scene
        .splats()
        .iter()
        .filter(|s| !(cam.to_camera(&s.mean).z > NEAR_PLANE))
        .count();
    let mut list: Vec<Prepared> = items.into_iter().flatten().collect();
    list.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.id.cmp(&b.id)));
    (list, culled)
}

/// Front-to-back compositing of an arbitrary per-splat 3-vector.
fn rasterize(scene: &Scene, cam: &Camera, features: &[[f64; 3]]) -> Framebuffer {
    let (width, height) = (cam.width(), cam.height());
    let (list, culled) = prepare(scene, cam);
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (k, p) in list.iter().enumerate() {
        let [x0, x1, y0, y1] = p.rect;
        for ty in y0 / TILE_SIZE..=(y1 - 1) / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=(x1 - 1) / TILE_SIZE {
                bins[ty * tiles_x + tx].push(k as u32);
            }
        }
    }

    type TileOut = Vec<(usize, [f64; 3], f64, f64)>;
    let tiles: Vec<TileOut> = bins
        .par_iter()
        .enumerate()
        .map(|(t, bin)| {
            let (tx, ty) = (t % tiles_x, t / tiles_x);
            let xs = tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(width);
            let ys = ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(height);
            let mut out = Vec::with_capacity(xs.len() * ys.len());
            for y in ys {
                for x in xs.clone() {
                    let px = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                    let mut c = [0.0; 3];
                    let mut d = 0.0;
                    let mut trans = 1.0;
                    for &k in bin {
                        let p = &list[k as usize];
                        let [x0, x1, y0, y1] = p.rect;
                        if x < x0 || x >= x1 || y < y0 || y >= y1 {
                            continue;
                        }
                        let delta = px - p.mean;
                        let q = (delta.transpose() * p.conic * delta)[(0, 0)];
                        let alpha = (p.opacity * (-0.5 * q).exp()).min(ALPHA_CLAMP);
                        if alpha <= 0.0 {
                            continue;
                        }
                        let wgt = alpha * trans;
                        let f = &features[p.id as usize];
                        for ch in 0..3 {
                            c[ch] += f[ch] * wgt;
                        }
                        d += p.depth * wgt;
                        trans *= 1.0 - alpha;
                        if trans < MIN_TRANSMITTANCE {
                            break;
                        }
                    }
                    let a = 1.0 - trans;
                    let depth = if a > 0.0 { d / a } else { 0.0 };
                    out.push((y * width + x, c, a, depth));
                }
            }
            out
        })
        .collect();

    let mut fb = Framebuffer::blank(width, height);
    fb.culled = culled;
    for (i, c, a, d) in tiles.into_iter().flatten() {
        fb.rgb[i] = c;
        fb.alpha[i] = a;
        fb.depth[i] = d;
    }
    fb
}

/// Composites per-splat RGB radiance into a framebuffer.
pub fn composite(radiance: &[[f64; 3]], scene: &Scene, cam: &Camera) -> Result<Framebuffer> {
    if radiance.len() != scene.len() {
        return Err(Error::Shape(format!(
            "got {} radiance values for {} splats",
            radiance.len(),
            scene.len()
        )));
    }
    if let Some(i) = radiance.iter().position(|c| !c.iter().all(|v| v.is_finite())) {
        return Err(Error::input(format!("splat {i} has a non-finite radiance")));
    }
    Ok(rasterize(scene, cam, radiance))
}

/// Pseudo-depth and normal diagnostics for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthNormalMaps {
    pub width: usize,
    pub height: usize,
    pub alpha: Vec<f64>,
    /// Alpha-normalized composited depth.
    pub depth: Vec<f64>,
    /// Composited camera-space normals, normalized per pixel (zero if uncovered).
    pub normal: Vec<[f64; 3]>,
    /// Normals from finite differences of the back-projected depth map.
    pub pseudo_normal: Vec<Option<[f64; 3]>>,
    /// Mean L1 distance between `normal` and `pseudo_normal` over covered
    /// pixels; `None` when no pixel qualifies.
    pub loss: Option<f64>,
    pub covered_pixels: usize,
}

pub fn depth_normal_maps(scene: &Scene, cam: &Camera) -> DepthNormalMaps {
    let w2c = cam.world_to_cam();
    let normals: Vec<[f64; 3]> = scene
        .splats()
        .iter()
        .map(|s| {
            let n = w2c * s.normal;
            [n.x, n.y, n.z]
        })
        .collect();
    let fb = rasterize(scene, cam, &normals);
    let (width, height) = (fb.width, fb.height);
    let normal: Vec<[f64; 3]> = fb
        .rgb
        .iter()
        .map(|n| {
            let v = Vector3::from(*n);
            let l = v.norm();
            if l > 0.0 {
                (v / l).into()
            } else {
                [0.0; 3]
            }
        })
        .collect();

    let covered = |x: usize, y: usize| fb.alpha[y * width + x] >= LOSS_MIN_ALPHA;
    let point = |x: usize, y: usize| cam.unproject(x as f64 + 0.5, y as f64 + 0.5, fb.depth[y * width + x]);
    let mut pseudo: Vec<Option<[f64; 3]>> = vec![None; width * height];
    for y in 0..height {
        for x in 0..width {
            if !covered(x, y) {
                continue;
            }
            // forward differences, falling back to backward ones at the edge
            let dx = if x + 1 < width && covered(x + 1, y) {
                point(x + 1, y) - point(x, y)
            } else if x > 0 && covered(x - 1, y) {
                point(x, y) - point(x - 1, y)
            } else {
                continue;
            };
            let dy = if y + 1 < height && covered(x, y + 1) {
                point(x, y + 1) - point(x, y)
            } else if y > 0 && covered(x, y - 1) {
                point(x, y) - point(x, y - 1)
            } else {
                continue;
            };
            let n = dx.cross(&dy);
            let l = n.norm();
            if l > 0.0 {
                pseudo[y * width + x] = Some((-n / l).into());
            }
        }
    }

    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, p) in pseudo.iter().enumerate() {
        if let Some(p) = p {
            sum += (0..3).map(|c| (normal[i][c] - p[c]).abs()).sum::<f64>();
            count += 1;
        }
    }
    DepthNormalMaps {
        width,
        height,
        alpha: fb.alpha,
        depth: fb.depth,
        normal,
        pseudo_normal: pseudo,
        loss: (count > 0).then(|| sum / count as f64),
        covered_pixels: count,
    }
}
