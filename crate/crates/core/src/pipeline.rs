//! End-to-end jobs behind the command line: precompute, relight and sweep.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::brdf::Rgb;
use crate::envlight::{light_trajectory, EnvLight};
use crate::error::{Error, Result};
use crate::raster::{composite, Camera, Framebuffer};
use crate::scene::{assign_materials, load_ply, Bundle, BundleManifest, BundleMeta, IndexBlob, MaterialSidecar, Scene};
use crate::sh::{ShOrder, ShVector};
use crate::tracer::{build_index_matrix, Tracer, DEFAULT_GATHER_DIRS, DEFAULT_T_FILTER};
use crate::transfer::{
    combine_total, direct_diffuse_transfer, glossy_transfer_matrix, relight_matrix, relight_vectors, self_transfer,
    view_conditioned_transfer, RgbLight, SelfTransfer, TransferMode, TransferVectors,
};

pub const DEFAULT_ORDER: u32 = 3;
pub const DEFAULT_BOUNCES: u32 = 2;
/// Outgoing directions per splat for glossy transfer matrices.
pub const DEFAULT_OUTGOING: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputeOptions {
    pub order: ShOrder,
    pub gather_dirs: usize,
    pub bounces: u32,
    pub t_filter: f64,
    pub mode: TransferMode,
    pub outgoing: usize,
    pub seed: u64,
    /// Store the index matrix in the bundle.
    pub keep_index: bool,
    /// Light recorded in the manifest as the viewer's starting light.
    pub env: Option<RgbLight>,
}

impl Default for PrecomputeOptions {
    fn default() -> Self {
        PrecomputeOptions {
            order: ShOrder::new(DEFAULT_ORDER).unwrap(),
            gather_dirs: DEFAULT_GATHER_DIRS,
            bounces: DEFAULT_BOUNCES,
            t_filter: DEFAULT_T_FILTER,
            mode: TransferMode::Diffuse,
            outgoing: DEFAULT_OUTGOING,
            seed: 0,
            keep_index: true,
            env: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct Precomputed {
    pub bundle: Bundle,
    /// The scene exactly as stored in (and reloaded from) the bundle.
    pub scene: Scene,
    pub timings: Vec<StageTiming>,
}

struct Stopwatch(Vec<StageTiming>);

impl Stopwatch {
    fn run<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| e.in_stage(stage))?;
        let seconds = start.elapsed().as_secs_f64();
        log::info!("{stage}: {seconds:.3}s");
        self.0.push(StageTiming { stage: stage.into(), seconds });
        Ok(out)
    }
}

/// Loads a PLY file or a `fixture:<name>` scene, fills in missing normals and
/// applies an optional material sidecar.
pub fn load_scene(spec: &str, materials: Option<&Path>, seed: u64) -> Result<Scene> {
    let mut scene = match spec.strip_prefix("fixture:") {
        Some(name) => crate::fixtures::by_name(name, seed)?,
        None => load_ply(spec)?,
    };
    scene.estimate_missing_normals();
    if let Some(path) = materials {
        scene = assign_materials(scene, &MaterialSidecar::load(path)?)?;
    }
    Ok(scene)
}

fn check_options(opts: &PrecomputeOptions) -> Result<()> {
    if let TransferMode::View(v) = opts.mode {
        if !(v.norm() > 0.0) {
            return Err(Error::input("view direction must be non-zero"));
        }
    }
    if matches!(opts.mode, TransferMode::Matrix) && opts.outgoing == 0 {
        return Err(Error::input("matrix mode needs outgoing samples"));
    }
    Ok(())
}

/// Everything the precompute derives from a scene.
#[derive(Debug, Clone)]
pub struct TransferResult {
    pub index: IndexBlob,
    pub direct_diffuse: TransferVectors,
    pub chain: SelfTransfer,
    /// Direct plus all bounces, `[splat][rgb][n²]`.
    pub transfer: Vec<f32>,
    pub matrix: Option<Vec<f32>>,
}

impl PrecomputeOptions {
    /// Options recorded in a bundle manifest.
    pub fn from_manifest(m: &BundleManifest) -> Result<Self> {
        let view = m.meta.view_dir.map(Vector3::from);
        Ok(PrecomputeOptions {
            order: m.sh_order,
            gather_dirs: m.meta.gather_dirs,
            bounces: m.meta.bounces,
            t_filter: m.meta.t_filter,
            mode: TransferMode::parse(&m.meta.mode, view)?,
            seed: m.meta.seed,
            keep_index: m.index.is_some(),
            ..Default::default()
        })
    }

    fn meta(&self) -> BundleMeta {
        BundleMeta {
            bounces: self.bounces,
            gather_dirs: self.gather_dirs,
            t_filter: self.t_filter,
            mode: self.mode.name().into(),
            view_dir: self.mode.view_dir().map(|v| [v.x, v.y, v.z]),
            seed: self.seed,
        }
    }
}

/// Index matrix, direct transfer and bounce chain for a scene, used as is.
pub fn compute_transfer(scene: &Scene, opts: &PrecomputeOptions) -> Result<(TransferResult, Vec<StageTiming>)> {
    check_options(opts)?;
    scene.require_non_empty()?;
    let mut clock = Stopwatch(Vec::new());
    let order = opts.order;
    let index = clock.run("index", || {
        let tracer = Tracer::new(scene, opts.t_filter)?;
        build_index_matrix(&tracer, opts.gather_dirs)
    })?;
    let direct_diffuse = clock.run("direct", || direct_diffuse_transfer(scene, &index, order))?;
    let view = opts.mode.view_dir();
    let chain = clock.run("self-transfer", || {
        self_transfer(scene, &index, &direct_diffuse, opts.bounces, view.as_ref())
    })?;
    let (transfer, matrix) = clock.run("assemble", || {
        let direct = match view {
            Some(v) => view_conditioned_transfer(scene, &index, &v, order)?,
            None => direct_diffuse.clone(),
        };
        let total = if opts.bounces == 0 { direct } else { combine_total(&direct, &chain.total(&direct)?)? };
        let matrix = match opts.mode {
            TransferMode::Matrix => {
                let mut m = glossy_transfer_matrix(scene, &index, order, opts.outgoing)?;
                if opts.bounces > 0 {
                    m.add_diffuse(&chain.total(&direct_diffuse)?)?;
                }
                Some(m.to_f32())
            }
            _ => None,
        };
        Ok((total.to_f32(), matrix))
    })?;
    Ok((TransferResult { index, direct_diffuse, chain, transfer, matrix }, clock.0))
}

/// Runs the transfer precompute in memory.
///
/// The scene is first rounded through the bundle's f32 geometry so that the
/// transfer belongs to exactly the scene a reader of the bundle rebuilds.
pub fn precompute(scene: &Scene, opts: &PrecomputeOptions) -> Result<Precomputed> {
    check_options(opts)?;
    scene.require_non_empty()?;
    let mut clock = Stopwatch(Vec::new());
    let n2 = opts.order.basis_len();
    let stored = clock.run("quantize", || {
        Bundle::new(scene, opts.order, vec![0.0; scene.len() * 3 * n2], opts.meta())?.scene()
    })?;
    let (result, timings) = compute_transfer(&stored, opts)?;
    clock.0.extend(timings);
    let bundle = clock.run("bundle", || {
        let mut b = Bundle::new(scene, opts.order, result.transfer, opts.meta())?;
        if let Some(m) = result.matrix {
            b = b.with_transfer_matrix(m)?;
        }
        if opts.keep_index {
            b = b.with_index(result.index)?;
        }
        if let Some(env) = &opts.env {
            b = b.with_env_sh(std::array::from_fn(|c| env[c].coeffs().to_vec()))?;
        }
        Ok(b)
    })?;
    Ok(Precomputed { bundle, scene: stored, timings: clock.0 })
}

fn partial_dir(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_else(|| "bundle".into());
    name.push(".partial");
    out.with_file_name(name)
}

/// Precomputes and writes a bundle. Output is staged in `<out>.partial` and
/// moved into place only when complete.
pub fn cmd_precompute(scene: &Scene, opts: &PrecomputeOptions, out: &Path) -> Result<Vec<StageTiming>> {
    let result = precompute(scene, opts)?;
    let staging = partial_dir(out);
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    let written = (|| -> Result<()> {
        result.bundle.write(&staging)?;
        if out.exists() {
            fs::remove_dir_all(out)?;
        }
        fs::rename(&staging, out)?;
        Ok(())
    })();
    if let Err(e) = written {
        let _ = fs::remove_dir_all(&staging);
        return Err(e.in_stage("write"));
    }
    Ok(result.timings)
}

/// Light coefficients stored as JSON: `{"sh": [[r...], [g...], [b...]]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LightFile {
    pub sh: [Vec<f64>; 3],
}

pub fn light_from_coeffs(rgb: &[Vec<f64>; 3]) -> Result<RgbLight> {
    let order = |len: usize| -> Result<ShOrder> {
        let n = (len as f64).sqrt().round() as u32;
        if (n * n) as usize != len {
            return Err(Error::input(format!("{len} SH coefficients is not a square number")));
        }
        ShOrder::new(n)
    };
    let o = order(rgb[0].len())?;
    if rgb.iter().any(|c| c.len() != rgb[0].len()) {
        return Err(Error::input("light channels have different lengths"));
    }
    Ok([
        ShVector::from_coeffs(o, rgb[0].clone())?,
        ShVector::from_coeffs(o, rgb[1].clone())?,
        ShVector::from_coeffs(o, rgb[2].clone())?,
    ])
}

/// Resolves `--env`: a `.json` coefficient file (used at its own order), an
/// equirect image, or an analytic preset (both projected at `order`).
pub fn load_light(spec: &str, order: ShOrder) -> Result<RgbLight> {
    if spec.ends_with(".json") {
        let text = fs::read_to_string(spec)?;
        let file: LightFile = serde_json::from_str(&text)?;
        return light_from_coeffs(&file.sh);
    }
    Ok(EnvLight::from_spec(spec, order)?.sh().clone())
}

/// Which stored transfer to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelightPath {
    Vector,
    Matrix,
}

impl RelightPath {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vector" | "diffuse" | "view" => Ok(RelightPath::Vector),
            "matrix" => Ok(RelightPath::Matrix),
            other => Err(Error::input(format!("unknown relight mode '{other}' (expected vector or matrix)"))),
        }
    }
}

/// A bundle loaded for relighting, with its scene rebuilt once.
pub struct Relighter {
    pub bundle: Bundle,
    pub scene: Scene,
}

impl Relighter {
    pub fn new(bundle: Bundle) -> Result<Self> {
        let scene = bundle.scene()?;
        Ok(Relighter { bundle, scene })
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        Relighter::new(Bundle::load(dir)?)
    }

    pub fn order(&self) -> ShOrder {
        self.bundle.order()
    }

    /// Per-splat RGB radiance. The matrix path needs a camera for per-splat
    /// view directions.
    pub fn radiance(&self, light: &RgbLight, path: RelightPath, camera: Option<&Camera>, clamp: bool) -> Result<Vec<Rgb>> {
        match path {
            RelightPath::Vector => relight_vectors(&self.bundle.transfer, self.order(), light, clamp),
            RelightPath::Matrix => {
                let m = self.bundle.transfer_matrix.as_ref().ok_or_else(|| {
                    Error::input("bundle has no transfer matrices; precompute with --mode matrix")
                })?;
                let cam = camera.ok_or_else(|| Error::input("matrix relighting needs a camera"))?;
                let dirs: Vec<Vector3<f64>> = self.scene.splats().iter().map(|s| cam.direction_from(&s.mean)).collect();
                relight_matrix(m, self.order(), light, &dirs, clamp)
            }
        }
    }

    pub fn render(&self, light: &RgbLight, path: RelightPath, camera: &Camera, clamp: bool) -> Result<Framebuffer> {
        let rad = self.radiance(light, path, Some(camera), clamp)?;
        composite(&rad, &self.scene, camera)
    }
}

/// A camera looking at the scene's bounding box from the −y, +z side.
pub fn auto_camera(scene: &Scene, width: usize, height: usize) -> Result<Camera> {
    let (lo, hi) = scene.bounds().ok_or_else(|| Error::input("cannot frame an empty scene"))?;
    let center = 0.5 * (lo + hi);
    let radius = (0.5 * (hi - lo).norm()).max(1e-3);
    let dir = Vector3::new(0.0, -1.0, 0.55).normalize();
    let fov: f64 = 40.0;
    let dist = radius / (0.5 * fov.to_radians()).sin() * 1.05;
    Camera::look_at(center + dir * dist, center, Vector3::z(), fov, width, height)
}

/// Per-splat radiances written next to images for viewer parity checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Golden {
    pub env: String,
    pub sh_order: u32,
    pub env_sh: [Vec<f64>; 3],
    pub clamp: bool,
    pub radiance: Vec<Rgb>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RelightReport {
    pub splats: usize,
    pub relight_ms: f64,
    pub frame_ms: f64,
    pub output: String,
}

pub fn cmd_relight(
    relighter: &Relighter,
    env_spec: &str,
    camera: &Camera,
    path: RelightPath,
    out: &Path,
    golden: Option<&Path>,
) -> Result<RelightReport> {
    let light = load_light(env_spec, relighter.order())?;
    let start = Instant::now();
    let rad = relighter.radiance(&light, path, Some(camera), true)?;
    let relight_ms = start.elapsed().as_secs_f64() * 1e3;
    let fb = composite(&rad, &relighter.scene, camera)?;
    let frame_ms = start.elapsed().as_secs_f64() * 1e3;
    fb.write_image(out)?;
    if let Some(g) = golden {
        let doc = Golden {
            env: env_spec.into(),
            sh_order: relighter.order().bands(),
            env_sh: std::array::from_fn(|c| light[c].coeffs().to_vec()),
            clamp: true,
            radiance: rad,
        };
        fs::write(g, serde_json::to_string_pretty(&doc)? + "\n")?;
    }
    Ok(RelightReport { splats: relighter.scene.len(), relight_ms, frame_ms, output: out.display().to_string() })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub frames: usize,
    pub splats: usize,
    pub sh_order: u32,
    /// Dot products only.
    pub median_relight_ms: f64,
    /// Relight plus compositing.
    pub median_frame_ms: f64,
    pub relight_ms: Vec<f64>,
    pub frame_ms: Vec<f64>,
    pub files: Vec<String>,
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Rotates the light once about `axis` over `frames` frames. Images are
/// written as `frame_NNNN.<ext>` when `out` is given.
#[allow(clippy::too_many_arguments)]
pub fn cmd_sweep(
    relighter: &Relighter,
    env_spec: &str,
    camera: &Camera,
    axis: &Vector3<f64>,
    frames: usize,
    path: RelightPath,
    out: Option<&Path>,
    ext: &str,
) -> Result<SweepReport> {
    let base = load_light(env_spec, relighter.order())?;
    let lights = light_trajectory(&base, axis, frames)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let mut report = SweepReport {
        frames,
        splats: relighter.scene.len(),
        sh_order: relighter.order().bands(),
        median_relight_ms: 0.0,
        median_frame_ms: 0.0,
        relight_ms: Vec::with_capacity(frames),
        frame_ms: Vec::with_capacity(frames),
        files: Vec::new(),
    };
    for (k, light) in lights.iter().enumerate() {
        let start = Instant::now();
        let rad = relighter.radiance(light, path, Some(camera), true)?;
        report.relight_ms.push(start.elapsed().as_secs_f64() * 1e3);
        let fb = composite(&rad, &relighter.scene, camera)?;
        report.frame_ms.push(start.elapsed().as_secs_f64() * 1e3);
        if let Some(dir) = out {
            let file = dir.join(format!("frame_{k:04}.{ext}"));
            fb.write_image(&file)?;
            report.files.push(file.display().to_string());
        }
    }
    report.median_relight_ms = median(&report.relight_ms);
    report.median_frame_ms = median(&report.frame_ms);
    if let Some(dir) = out {
        fs::write(dir.join("sweep.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(report)
}

/// Times only the per-splat evaluation for `frames` rotated lights.
pub fn time_relight(relighter: &Relighter, base: &RgbLight, axis: &Vector3<f64>, frames: usize) -> Result<Vec<f64>> {
    let lights = light_trajectory(base, axis, frames)?;
    let mut times = Vec::with_capacity(frames);
    for light in &lights {
        let start = Instant::now();
        let rad = relighter.radiance(light, RelightPath::Vector, None, true)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(rad);
    }
    Ok(times)
}
