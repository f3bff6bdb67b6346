//! Self-check of a bundle against the oracles: one entry per invariant, with
//! the measured value and the tolerance it was held to.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::brdf::{eval, eval_specular, Material};
use crate::envlight::{rotate_rgb, EnvLight, EquirectImage, Preset, MAX_ENV_BANDS};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::oracle::{dense_hemisphere, ggx_directional_albedo, Oracle, OracleConfig, SPLAT_CAP};
use crate::pipeline::{auto_camera, compute_transfer, precompute, PrecomputeOptions, RelightPath, Relighter};
use crate::raster::{composite, project_splat, Camera, ALPHA_CLAMP, MIN_TRANSMITTANCE};
use crate::scene::{compose, Bundle, Placement, Scene, MANIFEST_FILE};
use crate::sh::{
    axis_angle, eval_basis_into, project, reconstruct_raw, rotate_light, ShOrder, ShVector, SphereSampler,
};
use crate::tracer::{gather_directions, Tracer};
use crate::transfer::{direct_diffuse_transfer, relight_vectors, RgbLight};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub module: String,
    pub status: Status,
    pub measured: Option<f64>,
    pub tolerance: Option<f64>,
    pub detail: String,
}

impl Check {
    fn new(module: &str, name: &str, status: Status, detail: impl Into<String>) -> Self {
        Check {
            name: format!("{module}.{name}"),
            module: module.into(),
            status,
            measured: None,
            tolerance: None,
            detail: detail.into(),
        }
    }

    /// Passes when `measured ≤ tolerance`.
    fn at_most(module: &str, name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        let ok = measured <= tolerance;
        Check { measured: Some(measured), tolerance: Some(tolerance), ..Check::new(module, name, status(ok), detail) }
    }

    fn holds(module: &str, name: &str, ok: bool, detail: impl Into<String>) -> Self {
        Check::new(module, name, status(ok), detail)
    }

    fn skip(module: &str, name: &str, reason: impl Into<String>) -> Self {
        Check::new(module, name, Status::Skip, reason)
    }

    fn failed(module: &str, name: &str, err: &Error) -> Self {
        Check::new(module, name, Status::Fail, format!("error: {err}"))
    }
}

fn status(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub source: String,
    pub splats: usize,
    pub sh_order: Option<u32>,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    fn new(source: &str, splats: usize, sh_order: Option<u32>, checks: Vec<Check>) -> Self {
        let passed = checks.iter().all(|c| c.status != Status::Fail);
        ValidationReport { source: source.into(), splats, sh_order, passed, checks }
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.status == Status::Fail)
    }
}

/// Every check in report order, as `(module, name)`.
pub const CHECKS: &[(&str, &str)] = &[
    ("scene", "bundle_integrity"),
    ("scene", "covariance_spd"),
    ("scene", "compose_associativity"),
    ("scene", "bundle_round_trip"),
    ("sh", "orthonormality"),
    ("sh", "parseval"),
    ("sh", "rotation_band_energy"),
    ("sh", "determinism"),
    ("brdf", "non_negativity"),
    ("brdf", "reciprocity"),
    ("brdf", "energy"),
    ("tracer", "conservation"),
    ("tracer", "bvh_equivalence"),
    ("tracer", "monotonicity"),
    ("tracer", "self_exclusion"),
    ("transfer", "reproducible"),
    ("transfer", "linearity"),
    ("transfer", "band_limited_exactness"),
    ("transfer", "non_negative_energy"),
    ("transfer", "neumann_decay"),
    ("transfer", "order_nesting"),
    ("raster", "alpha_range"),
    ("raster", "energy"),
    ("raster", "adding_splat_monotone"),
    ("raster", "front_to_back_identity"),
    ("envlight", "non_negative_source"),
    ("envlight", "projection_linearity"),
    ("envlight", "rotation_band_energy"),
    ("relight", "linearity"),
    ("relight", "rotation_covariance"),
    ("relight", "determinism"),
    ("oracle", "determinism"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ValidateOptions {
    pub seed: u64,
    /// Splats whose rays are traced in the per-ray checks.
    pub sample_splats: usize,
    /// Run the sphere-fixture rotation check (two extra precomputes).
    pub rotation_fixture: bool,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions { seed: 0, sample_splats: 24, rotation_fixture: true }
    }
}

fn check_size(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::input("empty scene: there is nothing to validate"));
    }
    if n > SPLAT_CAP {
        return Err(Error::input(format!(
            "validation runs brute-force oracles and is limited to {SPLAT_CAP} splats (got {n}); \
             validate a fixture such as fixture:random:500 or a cropped scene instead"
        )));
    }
    Ok(())
}

/// Validates a bundle directory. A bundle that fails to load yields a report
/// with a failed integrity check and every other check skipped.
pub fn validate_dir(dir: &Path, opts: &ValidateOptions) -> Result<ValidationReport> {
    if !dir.join(MANIFEST_FILE).is_file() {
        return Err(Error::input(format!("{} is not a bundle directory (no {MANIFEST_FILE})", dir.display())));
    }
    let source = dir.display().to_string();
    match Bundle::load(dir) {
        Ok(bundle) => validate_bundle(&bundle, &source, opts),
        Err(e) => Ok(integrity_failure(&source, &e)),
    }
}

/// Precomputes `scene` in memory and validates the result.
pub fn validate_scene(scene: &Scene, pre: &PrecomputeOptions, opts: &ValidateOptions) -> Result<ValidationReport> {
    check_size(scene.len())?;
    let out = precompute(scene, pre)?;
    let source = scene.name.clone().unwrap_or_else(|| "scene".into());
    validate_bundle(&out.bundle, &source, opts)
}

fn integrity_failure(source: &str, err: &Error) -> ValidationReport {
    let checks = CHECKS
        .iter()
        .map(|(m, n)| match (*m, *n) {
            ("scene", "bundle_integrity") => Check::failed(m, n, err),
            _ => Check::skip(m, n, "bundle failed to load"),
        })
        .collect();
    ValidationReport::new(source, 0, None, checks)
}

/// Runs every check against an in-memory bundle.
pub fn validate_bundle(bundle: &Bundle, source: &str, opts: &ValidateOptions) -> Result<ValidationReport> {
    check_size(bundle.splat_count())?;
    let scene = match bundle.scene() {
        Ok(s) => s,
        Err(e) => return Ok(integrity_failure(source, &e)),
    };
    let ctx = Ctx::new(bundle, scene, opts)?;
    let mut checks = vec![Check::holds(
        "scene",
        "bundle_integrity",
        true,
        format!("{} splats, order {}, blobs consistent", bundle.splat_count(), bundle.order()),
    )];
    let groups: [fn(&Ctx) -> Vec<Check>; 9] = [
        scene_checks,
        sh_checks,
        brdf_checks,
        tracer_checks,
        transfer_checks,
        raster_checks,
        envlight_checks,
        relight_checks,
        oracle_checks,
    ];
    for group in groups {
        checks.extend(group(&ctx));
    }
    debug_assert_eq!(checks.len(), CHECKS.len());
    Ok(ValidationReport::new(source, bundle.splat_count(), Some(bundle.order().bands()), checks))
}

struct Ctx<'a> {
    bundle: &'a Bundle,
    scene: Scene,
    order: ShOrder,
    pre: PrecomputeOptions,
    samples: Vec<usize>,
    opts: &'a ValidateOptions,
}

impl<'a> Ctx<'a> {
    fn new(bundle: &'a Bundle, scene: Scene, opts: &'a ValidateOptions) -> Result<Self> {
        let pre = PrecomputeOptions::from_manifest(&bundle.manifest)?;
        let n = scene.len();
        let k = opts.sample_splats.clamp(1, n);
        let mut samples: Vec<usize> = (0..k).map(|i| i * n / k).collect();
        samples.dedup();
        Ok(Ctx { bundle, order: bundle.order(), scene, pre, samples, opts })
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.opts.seed);
        r.set_stream(stream);
        r
    }

    /// Order usable for environment lights, or `None` above the env cap.
    fn env_order(&self) -> Option<ShOrder> {
        (self.order.bands() <= MAX_ENV_BANDS).then_some(self.order)
    }

    fn materials(&self) -> Vec<Material> {
        let mut out: Vec<Material> = Vec::new();
        for s in self.scene.splats() {
            if out.len() >= 16 {
                break;
            }
            if !out.contains(&s.material) {
                out.push(s.material);
            }
        }
        out
    }
}

fn unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).sqrt();
    Vector3::new(r * phi.cos(), r * phi.sin(), z)
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    axis_angle(&unit(rng), rng.random_range(0.1..PI)).expect("unit axis")
}

fn random_sh(order: ShOrder, rng: &mut ChaCha8Rng) -> ShVector {
    let c = (0..order.basis_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    ShVector::from_coeffs(order, c).expect("finite coefficients")
}

fn random_light(order: ShOrder, rng: &mut ChaCha8Rng) -> RgbLight {
    std::array::from_fn(|_| random_sh(order, rng))
}

/// Largest relative per-band energy change, ignoring bands with negligible
/// energy.
fn band_energy_drift(a: &ShVector, b: &ShVector) -> f64 {
    let (ea, eb) = (a.band_energy(), b.band_energy());
    let total: f64 = ea.iter().sum();
    ea.iter()
        .zip(&eb)
        .filter(|(x, _)| **x > 1e-9 * total)
        .map(|(x, y)| (x - y).abs() / x)
        .fold(0.0, f64::max)
}

fn guard(module: &str, name: &str, f: impl FnOnce() -> Result<Check>) -> Check {
    f().unwrap_or_else(|e| Check::failed(module, name, &e))
}

fn scene_checks(ctx: &Ctx) -> Vec<Check> {
    let splats = ctx.scene.splats();
    let not_spd = splats.iter().filter(|s| s.covariance().cholesky().is_none()).count();
    let spd = Check::at_most(
        "scene",
        "covariance_spd",
        not_spd as f64,
        0.0,
        format!("Cholesky failed for {not_spd} of {} covariances", splats.len()),
    );

    let assoc = guard("scene", "compose_associativity", || {
        let mut rng = ctx.rng(1);
        let placement = |rng: &mut ChaCha8Rng| Placement {
            rotation: UnitQuaternion::from_matrix(&random_rotation(rng)),
            translation: Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)),
            scale: rng.random_range(0.5..2.0),
        };
        let (a, b) = (placement(&mut rng), placement(&mut rng));
        let part = Scene::new(splats.iter().take(256).cloned().collect())?;
        let stepwise = compose(&[(compose(&[(part.clone(), b)])?, a)])?;
        let direct = compose(&[(part, a.then(&b))])?;
        let worst = stepwise
            .splats()
            .iter()
            .zip(direct.splats())
            .map(|(x, y)| (x.mean - y.mean).amax().max((x.normal - y.normal).amax()))
            .fold(0.0, f64::max);
        Ok(Check::at_most("scene", "compose_associativity", worst, 1e-6, "max |Δ| of means and normals"))
    });

    let round_trip = guard("scene", "bundle_round_trip", || {
        let tmp = ScratchDir::new()?;
        let (a, b) = (tmp.0.join("a"), tmp.0.join("b"));
        ctx.bundle.write(&a)?;
        let loaded = Bundle::load(&a)?;
        loaded.write(&b)?;
        let mut same_bytes = true;
        for entry in fs::read_dir(&a)? {
            let name = entry?.file_name();
            same_bytes &= fs::read(a.join(&name))? == fs::read(b.join(&name))?;
        }
        let ok = &loaded == ctx.bundle && same_bytes;
        Ok(Check::holds("scene", "bundle_round_trip", ok, "write, load and rewrite are bit-identical"))
    });
    vec![spd, assoc, round_trip]
}

/// A uniquely named temporary directory removed on drop.
struct ScratchDir(PathBuf);

impl ScratchDir {
    fn new() -> Result<Self> {
        let nanos = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
        let p = std::env::temp_dir().join(format!("prtsplat-validate-{}-{nanos}", std::process::id()));
        fs::create_dir_all(&p)?;
        Ok(ScratchDir(p))
    }
}

impl Drop for ScratchDir {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.0);
    }
}

fn sh_checks(ctx: &Ctx) -> Vec<Check> {
    let order = ctx.order;
    let gram = guard("sh", "orthonormality", || {
        let o4 = ShOrder::new(4)?;
        let len = o4.basis_len();
        let samples = SphereSampler::uniform_sphere(200_000, 0)?.samples();
        let mut g = vec![0.0; len * len];
        let mut y = vec![0.0; len];
        for (d, w) in &samples {
            eval_basis_into(d, 4, &mut y);
            for p in 0..len {
                for q in 0..len {
                    g[p * len + q] += w * y[p] * y[q];
                }
            }
        }
        let worst = (0..len * len)
            .map(|i| (g[i] - if i / len == i % len { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max);
        Ok(Check::at_most("sh", "orthonormality", worst, 2e-3, "max |G − I|, order 4, 200k Fibonacci samples"))
    });

    let mut rng = ctx.rng(2);
    let (a, b) = (random_sh(order, &mut rng), random_sh(order, &mut rng));
    let parseval = guard("sh", "parseval", || {
        let fib = SphereSampler::uniform_sphere(200_000, 1)?;
        let bands = order.bands();
        let fa = |d: &crate::sh::Direction| reconstruct_raw(a.coeffs(), bands, d.vector());
        let fb = |d: &crate::sh::Direction| reconstruct_raw(b.coeffs(), bands, d.vector());
        let dot = project(fa, order, &fib)?.dot(&project(fb, order, &fib)?)?;
        let exact = SphereSampler::exact_for_bands(2 * bands).samples();
        let integral: f64 = exact
            .iter()
            .map(|(d, w)| w * reconstruct_raw(a.coeffs(), bands, d) * reconstruct_raw(b.coeffs(), bands, d))
            .sum();
        let scale = (a.dot(&a)? * b.dot(&b)?).sqrt();
        Ok(Check::at_most("sh", "parseval", (dot - integral).abs() / scale, 1e-3, "relative to |a|·|b|"))
    });

    let rotation = guard("sh", "rotation_band_energy", || {
        let r = random_rotation(&mut rng);
        let rotated = rotate_light(&a, &r, &SphereSampler::exact_for_bands(order.bands()))?;
        Ok(Check::at_most("sh", "rotation_band_energy", band_energy_drift(&a, &rotated), 1e-3, "max relative per-band change"))
    });

    let determinism = guard("sh", "determinism", || {
        let f = |d: &crate::sh::Direction| (3.0 * d.vector().x).sin() + d.vector().z.max(0.0);
        let s = SphereSampler::uniform_sphere(20_000, 3)?;
        let (p, q) = (project(f, order, &s)?, project(f, order, &s)?);
        let same = p.coeffs().iter().zip(q.coeffs()).all(|(x, y)| x.to_bits() == y.to_bits());
        Ok(Check::holds("sh", "determinism", same, "repeated projection is bit-identical"))
    });
    vec![gram, parseval, rotation, determinism]
}

fn brdf_checks(ctx: &Ctx) -> Vec<Check> {
    let mats = ctx.materials();
    let mut rng = ctx.rng(3);
    let n = Vector3::z();
    let mut lowest = f64::INFINITY;
    let mut finite = true;
    for m in &mats {
        for _ in 0..500 {
            let (wi, wo) = (unit(&mut rng), unit(&mut rng));
            for v in eval(m, &n, &wi, &wo) {
                finite &= v.is_finite();
                lowest = lowest.min(v);
            }
        }
    }
    let nonneg = Check::holds(
        "brdf",
        "non_negativity",
        finite && lowest >= 0.0,
        format!("min value {lowest:.3e} over {} materials × 500 direction pairs", mats.len()),
    );

    let mut worst = 0.0f64;
    for k in 0..1000 {
        let m = &mats[k % mats.len()];
        let mut up = || {
            let v = unit(&mut rng);
            Vector3::new(v.x, v.y, v.z.abs())
        };
        let (wi, wo) = (up(), up());
        let (f, g) = (eval_specular(m, &n, &wi, &wo), eval_specular(m, &n, &wo, &wi));
        for c in 0..3 {
            worst = worst.max((f[c] - g[c]).abs() / f[c].abs().max(1e-300));
        }
    }
    let reciprocity = Check::at_most("brdf", "reciprocity", worst, 1e-12, "max relative |f(wi,wo) − f(wo,wi)|, 1000 pairs");

    // white-furnace form: specular lobe, white albedo, 5×5 (r, m) grid
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut peak = 0.0f64;
    for r in grid {
        for metal in grid {
            let m = Material::new([1.0; 3], r, metal).expect("grid material");
            for k in 0..8 {
                let cos_o = 0.1 + 0.9 * k as f64 / 7.0;
                let sin_o = (1.0 - cos_o * cos_o).sqrt();
                let wo = Vector3::new(sin_o * (0.3 * k as f64).cos(), sin_o * (0.3 * k as f64).sin(), cos_o);
                let a = ggx_directional_albedo(m.alpha(), &wo, |wi| eval_specular(&m, &n, wi, &wo)[0], 400, 160);
                peak = peak.max(a);
            }
        }
    }
    // full BRDF of the scene's own materials, reported for reference
    let mut full = 0.0f64;
    for m in &mats {
        for k in 0..8 {
            let cos_o = 0.1 + 0.9 * k as f64 / 7.0;
            let wo = Vector3::new((1.0 - cos_o * cos_o).sqrt(), 0.0, cos_o);
            for c in 0..3 {
                let spec = ggx_directional_albedo(m.alpha(), &wo, |wi| eval_specular(m, &n, wi, &wo)[c], 200, 96);
                full = full.max((1.0 - m.metallic) * m.albedo[c] + spec);
            }
        }
    }
    let energy = Check::at_most(
        "brdf",
        "energy",
        peak,
        1.02,
        format!("max directional albedo of the specular lobe; full BRDF of scene materials peaks at {full:.4}"),
    );
    vec![nonneg, reciprocity, energy]
}

fn tracer_checks(ctx: &Ctx) -> Vec<Check> {
    let scene = &ctx.scene;
    let k = ctx.pre.gather_dirs;
    let rays: Vec<(usize, Vector3<f64>)> = ctx
        .samples
        .iter()
        .flat_map(|&i| {
            gather_directions(&scene.splats()[i].normal, k).unwrap_or_default().into_iter().map(move |d| (i, d))
        })
        .collect();

    let conservation = guard("tracer", "conservation", || {
        let open = Tracer::new(scene, 1.0)?;
        let mut worst = 0.0f64;
        let mut exact_rays = 0;
        for (i, d) in &rays {
            let tr = open.trace_from(*i, d);
            let mut bound = 0.0;
            let mut absorbed = 0.0;
            for h in &tr.hits {
                let n = scene.splats()[h.id as usize].normal;
                bound += h.weight / (-d.dot(&n)).max(1e-12);
                absorbed += h.alpha * h.t_before;
            }
            worst = worst.max(bound - 1.0);
            if !tr.stats.terminated_early {
                exact_rays += 1;
                worst = worst.max((tr.stats.transmittance + absorbed - 1.0).abs());
            }
        }
        Ok(Check::at_most(
            "tracer",
            "conservation",
            worst.max(0.0),
            1e-6,
            format!("{} rays without filtering ({exact_rays} reached the end)", rays.len()),
        ))
    });

    let tracer = Tracer::new(scene, ctx.pre.t_filter);
    let equivalence = guard("tracer", "bvh_equivalence", || {
        let tracer = tracer.as_ref().map_err(|e| Error::input(e.to_string()))?;
        let cfg = OracleConfig { gather_dirs: k, t_filter: ctx.pre.t_filter, ..Default::default() };
        let oracle = Oracle::new(scene, cfg)?;
        let mut mismatched = 0;
        let mut worst = 0.0f64;
        for (i, d) in &rays {
            match oracle.trace_from(*i, d).max_difference(&tracer.trace_from(*i, d)) {
                Some(x) => worst = worst.max(x),
                None => mismatched += 1,
            }
        }
        let mut c = Check::at_most(
            "tracer",
            "bvh_equivalence",
            worst,
            1e-9,
            format!("{} rays; {mismatched} with differing hit sequences", rays.len()),
        );
        if mismatched > 0 {
            c.status = Status::Fail;
        }
        Ok(c)
    });

    let monotone = guard("tracer", "monotonicity", || {
        let tracer = tracer.as_ref().map_err(|e| Error::input(e.to_string()))?;
        // a ray that stops early reports its transmittance at the stopping
        // point, so only complete rays are held to exact monotonicity
        let (mut exact, mut early) = (0.0f64, 0.0f64);
        let mut trials = 0;
        for (i, d) in rays.iter().step_by(k.max(1) / 4 + 1) {
            let before = tracer.trace_from(*i, d);
            let Some(first) = before.hits.first() else { continue };
            let t = 0.5 * first.t;
            let origin = scene.splats()[*i].mean;
            let extra = fixtures::disk(origin + d * t, -d, 0.2 * t, 0.5, Material::default())?;
            let mut splats = scene.splats().to_vec();
            splats.push(extra);
            let grown = Scene::new(splats)?;
            let after = Tracer::new(&grown, ctx.pre.t_filter)?.trace_from(*i, d);
            let rise = after.stats.transmittance - before.stats.transmittance;
            if before.stats.terminated_early || after.stats.terminated_early {
                early = early.max(rise);
            } else {
                exact = exact.max(rise);
            }
            trials += 1;
            if trials == 16 {
                break;
            }
        }
        if trials == 0 {
            return Ok(Check::skip("tracer", "monotonicity", "no sampled ray hits anything"));
        }
        let mut c = Check::at_most(
            "tracer",
            "monotonicity",
            exact.max(0.0),
            0.0,
            format!("max transmittance increase over {trials} insertions; {early:.2e} on rays that stopped early"),
        );
        if early > crate::tracer::MIN_TRANSMITTANCE {
            c.status = Status::Fail;
        }
        Ok(c)
    });

    let exclusion = guard("tracer", "self_exclusion", || {
        let owned;
        let index = match &ctx.bundle.index {
            Some(ix) => ix,
            None => {
                owned = crate::tracer::build_index_matrix(tracer.as_ref().map_err(|e| Error::input(e.to_string()))?, k)?;
                &owned
            }
        };
        let k = index.gather_dirs;
        let own = index.ids.iter().enumerate().filter(|(j, id)| **id == (j / k) as i32).count();
        Ok(Check::at_most("tracer", "self_exclusion", own as f64, 0.0, format!("{own} index entries point at their own splat")))
    });
    vec![conservation, equivalence, monotone, exclusion]
}

fn transfer_checks(ctx: &Ctx) -> Vec<Check> {
    const NAMES: [&str; 6] =
        ["reproducible", "linearity", "band_limited_exactness", "non_negative_energy", "neumann_decay", "order_nesting"];
    let recomputed = match compute_transfer(&ctx.scene, &ctx.pre) {
        Ok((r, _)) => r,
        Err(e) => return NAMES.iter().map(|n| Check::failed("transfer", n, &e)).collect(),
    };
    let order = ctx.order;
    let bits = |a: &[f32], b: &[f32]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
    let same_index = ctx.bundle.index.as_ref().is_none_or(|ix| *ix == recomputed.index);
    let same_matrix = match (&ctx.bundle.transfer_matrix, &recomputed.matrix) {
        (Some(a), Some(b)) => bits(a, b),
        (None, _) => true,
        _ => false,
    };
    let reproducible = Check::holds(
        "transfer",
        "reproducible",
        bits(&ctx.bundle.transfer, &recomputed.transfer) && same_matrix && same_index,
        "recomputing from the stored scene and settings reproduces every blob bit for bit",
    );

    let mut rng = ctx.rng(4);
    let linearity = guard("transfer", "linearity", || {
        let (l1, l2) = (random_light(order, &mut rng), random_light(order, &mut rng));
        let (a, b) = (0.7, -1.3);
        let mix: RgbLight = std::array::from_fn(|c| l1[c].scaled(a).add(&l2[c].scaled(b)).expect("same order"));
        let r1 = relight_vectors(&ctx.bundle.transfer, order, &l1, false)?;
        let r2 = relight_vectors(&ctx.bundle.transfer, order, &l2, false)?;
        let rm = relight_vectors(&ctx.bundle.transfer, order, &mix, false)?;
        let mut worst = 0.0f64;
        let mut scale = 1e-300f64;
        for i in 0..rm.len() {
            for c in 0..3 {
                let expect = a * r1[i][c] + b * r2[i][c];
                worst = worst.max((rm[i][c] - expect).abs());
                scale = scale.max(r1[i][c].abs()).max(r2[i][c].abs());
            }
        }
        Ok(Check::at_most("transfer", "linearity", worst / scale, 1e-9, "max deviation relative to the largest radiance"))
    });

    let exactness = guard("transfer", "band_limited_exactness", || {
        let Some(env_order) = ctx.env_order() else {
            return Ok(Check::skip("transfer", "band_limited_exactness", "order above the environment cap"));
        };
        if ctx.pre.bounces > crate::oracle::MAX_ORACLE_BOUNCES {
            return Ok(Check::skip("transfer", "band_limited_exactness", "more bounces than the oracle supports"));
        }
        let env = EnvLight::from_preset(Preset::sun(unit(&mut rng), 3.0), env_order)?;
        let cfg = OracleConfig { gather_dirs: ctx.pre.gather_dirs, t_filter: ctx.pre.t_filter, ..Default::default() };
        let oracle = Oracle::new(&ctx.scene, cfg)?;
        let view = ctx.pre.mode.view_dir();
        let reference = oracle.bounce_all(&env, ctx.pre.bounces, view.as_ref(), false, None)?;
        let got = relight_vectors(&ctx.bundle.transfer, order, env.sh(), false)?;
        let mut worst = 0.0f64;
        let mut peak = 1e-300f64;
        for (r, g) in reference.iter().zip(&got) {
            for (want, have) in r.discrete_total.iter().zip(g) {
                worst = worst.max((want - have).abs());
                peak = peak.max(want.abs());
            }
        }
        Ok(Check::at_most(
            "transfer",
            "band_limited_exactness",
            worst / peak,
            1e-3,
            format!("stored transfer · light vs lattice integral of the band-limited light, {} bounces, relative to peak", ctx.pre.bounces),
        ))
    });

    let non_negative = {
        let d = &recomputed.direct_diffuse;
        let mut worst = 0.0f64;
        for &i in &ctx.samples {
            let n = ctx.scene.splats()[i].normal;
            for c in 0..3 {
                let coeffs = d.channel(i, c);
                let values: Vec<f64> =
                    dense_hemisphere(&n, 2000).iter().map(|(w, _)| reconstruct_raw(coeffs, order.bands(), w)).collect();
                let peak = values.iter().cloned().fold(0.0, f64::max);
                let low = values.iter().cloned().fold(f64::INFINITY, f64::min);
                if peak > 0.0 {
                    worst = worst.max(-low / peak);
                }
            }
        }
        Check::at_most("transfer", "non_negative_energy", worst, 0.05, "max over sampled splats of −min/peak on the hemisphere")
    };

    let neumann = if ctx.pre.bounces == 0 {
        Check::skip("transfer", "neumann_decay", "no bounces")
    } else {
        let mut norms = vec![recomputed.direct_diffuse.norm()];
        norms.extend(recomputed.chain.bounces.iter().map(|b| b.norm()));
        let ratio = norms.windows(2).filter(|w| w[0] > 0.0).map(|w| w[1] / w[0]).fold(0.0, f64::max);
        let albedo = ctx
            .scene
            .splats()
            .iter()
            .map(|s| s.material.albedo.iter().cloned().fold(0.0, f64::max) * (1.0 - s.material.metallic))
            .fold(0.0, f64::max);
        Check::at_most(
            "transfer",
            "neumann_decay",
            ratio,
            albedo + 0.05,
            format!("max per-bounce norm ratio; diffuse albedo bound {albedo:.3}"),
        )
    };

    let nesting = guard("transfer", "order_nesting", || {
        if order.bands() < 2 {
            return Ok(Check::skip("transfer", "order_nesting", "order 1 has no lower order"));
        }
        let lower = ShOrder::new(order.bands() - 1)?;
        let low = direct_diffuse_transfer(&ctx.scene, &recomputed.index, lower)?;
        let len = lower.basis_len();
        let mut worst = 0.0f64;
        for i in 0..ctx.scene.len() {
            for c in 0..3 {
                let (a, b) = (low.channel(i, c), &recomputed.direct_diffuse.channel(i, c)[..len]);
                worst = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
            }
        }
        Ok(Check::at_most("transfer", "order_nesting", worst, 0.0, format!("order {} vs leading block of order {order}", lower)))
    });
    vec![reproducible, linearity, exactness, non_negative, neumann, nesting]
}

/// A light usable at any bundle order: a projected sun lobe when the order
/// is within the environment cap, otherwise a positive DC term.
fn test_light(ctx: &Ctx) -> Result<RgbLight> {
    match ctx.env_order() {
        Some(o) => Ok(EnvLight::from_preset(Preset::sun(Vector3::new(0.3, -0.4, 0.87), 2.0), o)?.sh().clone()),
        None => Ok(std::array::from_fn(|_| ShVector::constant(ctx.order, 1.0))),
    }
}

fn raster_checks(ctx: &Ctx) -> Vec<Check> {
    const NAMES: [&str; 3] = ["alpha_range", "energy", "adding_splat_monotone"];
    let setup = || -> Result<(Camera, Vec<[f64; 3]>)> {
        let cam = auto_camera(&ctx.scene, 96, 72)?;
        let rad = relight_vectors(&ctx.bundle.transfer, ctx.order, &test_light(ctx)?, true)?;
        Ok((cam, rad))
    };
    let mut out = match setup().and_then(|(cam, rad)| Ok((composite(&rad, &ctx.scene, &cam)?, cam, rad))) {
        Err(e) => NAMES.iter().map(|n| Check::failed("raster", n, &e)).collect(),
        Ok((fb, cam, rad)) => {
            let in_range = fb.alpha.iter().all(|a| (0.0..=1.0).contains(a));
            let finite = fb.rgb.iter().flatten().all(|v| v.is_finite());
            let alpha = Check::holds("raster", "alpha_range", in_range && finite, "alpha in [0, 1], radiance finite");

            let m = rad.iter().flatten().cloned().fold(0.0, f64::max);
            let brightest = fb.rgb.iter().flatten().cloned().fold(0.0, f64::max);
            let excess = if m > 0.0 { (brightest - m).max(0.0) / m } else { brightest };
            let energy = Check::at_most(
                "raster",
                "energy",
                excess,
                1e-12,
                format!("brightest pixel {brightest:.6} vs brightest splat {m:.6}"),
            );

            let monotone = guard("raster", "adding_splat_monotone", || {
                let (lo, hi) = ctx.scene.bounds().expect("non-empty");
                let c = 0.5 * (lo + hi);
                let extra = fixtures::disk(c, cam.direction_from(&c), 0.05 * ctx.scene.diameter().max(1e-3), 0.8, Material::default())?;
                let mut splats = ctx.scene.splats().to_vec();
                splats.push(extra);
                let mut rad2 = rad.clone();
                rad2.push([0.5; 3]);
                let fb2 = composite(&rad2, &Scene::new(splats)?, &cam)?;
                let drop = fb.alpha.iter().zip(&fb2.alpha).map(|(a, b)| a - b).fold(0.0, f64::max);
                Ok(Check::at_most(
                    "raster",
                    "adding_splat_monotone",
                    drop,
                    MIN_TRANSMITTANCE,
                    "largest alpha decrease; bounded by the early-termination transmittance",
                ))
            });
            vec![alpha, energy, monotone]
        }
    };
    out.push(guard("raster", "front_to_back_identity", || {
        let worst = front_to_back_gap(&mut ctx.rng(5), 16)?;
        Ok(Check::at_most("raster", "front_to_back_identity", worst, 1e-6, "random stacks of up to 32 splats, centre pixel"))
    }));
    out
}

/// Largest difference between the rasterizer's centre pixel and a
/// back-to-front "over" blend of the same stack.
pub fn front_to_back_gap(rng: &mut ChaCha8Rng, stacks: usize) -> Result<f64> {
    let cam = Camera::look_at(Vector3::new(0.0, 0.0, -4.0), Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0), 30.0, 17, 17)?;
    let mut worst = 0.0f64;
    for _ in 0..stacks {
        let count = rng.random_range(1..=32);
        let mut splats = Vec::with_capacity(count);
        let mut colors = Vec::with_capacity(count);
        for _ in 0..count {
            let c = Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-1.0..1.0));
            splats.push(fixtures::disk(c, -Vector3::z(), rng.random_range(0.2..0.6), rng.random_range(0.02..0.2), Material::default())?);
            colors.push([rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]);
        }
        let scene = Scene::new(splats)?;
        let fb = composite(&colors, &scene, &cam)?;

        let px = nalgebra::Vector2::new(8.5, 8.5);
        let mut layers: Vec<(f64, usize, f64)> = Vec::new();
        for (i, s) in scene.splats().iter().enumerate() {
            let Some(p) = project_splat(s, &cam) else { continue };
            let Some(conic) = p.cov.try_inverse() else { continue };
            let dx = px - p.mean;
            let q = (dx.transpose() * conic * dx)[(0, 0)];
            layers.push((p.depth, i, (s.opacity * (-0.5 * q).exp()).min(ALPHA_CLAMP)));
        }
        layers.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut color = [0.0; 3];
        let mut clear = 1.0;
        for &(_, i, a) in layers.iter().rev() {
            for c in 0..3 {
                color[c] = colors[i][c] * a + (1.0 - a) * color[c];
            }
            clear *= 1.0 - a;
        }
        let got = fb.pixel(8, 8);
        for c in 0..3 {
            worst = worst.max((got[c] - color[c]).abs());
        }
        worst = worst.max((fb.alpha[8 * 17 + 8] - (1.0 - clear)).abs());
    }
    Ok(worst)
}

fn envlight_checks(ctx: &Ctx) -> Vec<Check> {
    let negative = EquirectImage::new(4, 2, vec![[0.5; 3], [0.1, -0.1, 0.2], [0.5; 3], [0.5; 3], [0.5; 3], [0.5; 3], [0.5; 3], [0.5; 3]]);
    let nonneg = Check::holds("envlight", "non_negative_source", negative.is_err(), "an image with a negative pixel is rejected");

    let order = ShOrder::new(ctx.order.bands().min(MAX_ENV_BANDS)).expect("valid order");
    let mut rng = ctx.rng(6);
    let image = |rng: &mut ChaCha8Rng| -> Vec<[f64; 3]> {
        (0..32 * 16).map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0))).collect()
    };
    let (pa, pb) = (image(&mut rng), image(&mut rng));
    let linear = guard("envlight", "projection_linearity", || {
        let (a, b) = (0.6, 1.7);
        let mix: Vec<[f64; 3]> = pa.iter().zip(&pb).map(|(x, y)| std::array::from_fn(|c| a * x[c] + b * y[c])).collect();
        let proj = |p: Vec<[f64; 3]>| EquirectImage::new(32, 16, p)?.project(order);
        let (la, lb, lm) = (proj(pa.clone())?, proj(pb.clone())?, proj(mix)?);
        let mut worst = 0.0f64;
        for c in 0..3 {
            for j in 0..order.basis_len() {
                let expect = a * la[c].coeffs()[j] + b * lb[c].coeffs()[j];
                worst = worst.max((lm[c].coeffs()[j] - expect).abs());
            }
        }
        Ok(Check::at_most("envlight", "projection_linearity", worst, 1e-6, "max coefficient deviation"))
    });

    let rotation = guard("envlight", "rotation_band_energy", || {
        let light = EquirectImage::new(32, 16, pa.clone())?.project(order)?;
        let rotated = rotate_rgb(&light, &random_rotation(&mut rng))?;
        let worst = (0..3).map(|c| band_energy_drift(&light[c], &rotated[c])).fold(0.0, f64::max);
        Ok(Check::at_most("envlight", "rotation_band_energy", worst, 1e-3, format!("order {order}, max relative per-band change")))
    });
    vec![nonneg, linear, rotation]
}

fn relight_checks(ctx: &Ctx) -> Vec<Check> {
    let relighter = match Relighter::new(ctx.bundle.clone()) {
        Ok(r) => r,
        Err(e) => return ["linearity", "rotation_covariance", "determinism"].iter().map(|n| Check::failed("relight", n, &e)).collect(),
    };
    let mut paths = vec![RelightPath::Vector];
    if ctx.bundle.transfer_matrix.is_some() {
        paths.push(RelightPath::Matrix);
    }
    let mut rng = ctx.rng(7);
    let linearity = guard("relight", "linearity", || {
        let cam = auto_camera(&ctx.scene, 64, 48)?;
        let (l1, l2) = (test_light(ctx)?, random_light(ctx.order, &mut rng));
        let (a, b) = (0.4, 1.3);
        let mix: RgbLight = std::array::from_fn(|c| l1[c].scaled(a).add(&l2[c].scaled(b)).expect("same order"));
        let mut worst = 0.0f64;
        for &path in &paths {
            let f1 = relighter.render(&l1, path, &cam, false)?;
            let f2 = relighter.render(&l2, path, &cam, false)?;
            let fm = relighter.render(&mix, path, &cam, false)?;
            let peak = f1.rgb.iter().chain(&f2.rgb).flatten().map(|v| v.abs()).fold(1e-300, f64::max);
            for ((x, y), z) in f1.rgb.iter().zip(&f2.rgb).zip(&fm.rgb) {
                for c in 0..3 {
                    worst = worst.max((z[c] - (a * x[c] + b * y[c])).abs() / peak);
                }
            }
        }
        Ok(Check::at_most("relight", "linearity", worst, 1e-5, "per pixel before clamping, relative to the peak pixel"))
    });

    let covariance = if ctx.opts.rotation_fixture {
        guard("relight", "rotation_covariance", || {
            let rms = rotation_covariance_rms(ctx.opts.seed)?;
            Ok(Check::at_most("relight", "rotation_covariance", rms, 0.02, "relative RMS, sphere fixture of 600 splats"))
        })
    } else {
        Check::skip("relight", "rotation_covariance", "disabled")
    };

    let determinism = guard("relight", "determinism", || {
        let cam = auto_camera(&ctx.scene, 64, 48)?;
        let light = test_light(ctx)?;
        let mut same = true;
        for &path in &paths {
            let (a, b) = (relighter.render(&light, path, &cam, true)?, relighter.render(&light, path, &cam, true)?);
            same &= a.to_f32().iter().flatten().zip(b.to_f32().iter().flatten()).all(|(x, y)| x.to_bits() == y.to_bits());
        }
        Ok(Check::holds("relight", "determinism", same, "repeated renders are bit-identical"))
    });
    vec![linearity, covariance, determinism]
}

/// Renders a sphere of splats lit by `R·L`, and the same sphere turned by
/// `Rᵀ` (camera included) lit by `L`, and returns the relative RMS image
/// difference.
pub fn rotation_covariance_rms(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(8);
    let order = ShOrder::new(3)?;
    let sphere = fixtures::splat_sphere(600);
    let opts = PrecomputeOptions { order, bounces: 1, keep_index: false, ..Default::default() };
    let light = EnvLight::from_preset(Preset::sun(Vector3::new(0.2, 0.5, 0.84), 2.0), order)?.sh().clone();
    let r = random_rotation(&mut rng);
    let rt = r.transpose();

    let (pos, target, up) = (Vector3::new(0.0, -4.0, 1.5), Vector3::zeros(), Vector3::z());
    let render = |scene: &Scene, light: &RgbLight, cam: &Camera| -> Result<Vec<[f64; 3]>> {
        let relighter = Relighter::new(precompute(scene, &opts)?.bundle)?;
        Ok(relighter.render(light, RelightPath::Vector, cam, false)?.rgb)
    };
    let cam = Camera::look_at(pos, target, up, 40.0, 96, 96)?;
    let a = render(&sphere, &rotate_rgb(&light, &r)?, &cam)?;

    let turned = Placement { rotation: UnitQuaternion::from_matrix(&rt), ..Default::default() };
    let sphere_t = compose(&[(sphere, turned)])?;
    let cam_t = Camera::look_at(rt * pos, rt * target, rt * up, 40.0, 96, 96)?;
    let b = render(&sphere_t, &light, &cam_t)?;

    let (mut diff, mut norm) = (0.0, 0.0);
    for (x, y) in a.iter().zip(&b) {
        for c in 0..3 {
            diff += (x[c] - y[c]).powi(2);
            norm += x[c] * x[c];
        }
    }
    Ok((diff / norm.max(1e-300)).sqrt())
}

fn oracle_checks(ctx: &Ctx) -> Vec<Check> {
    vec![guard("oracle", "determinism", || {
        let order = ShOrder::new(ctx.order.bands().min(MAX_ENV_BANDS))?;
        let env = EnvLight::from_preset(Preset::default_sky(), order)?;
        let cfg = OracleConfig { gather_dirs: ctx.pre.gather_dirs, t_filter: ctx.pre.t_filter, ..Default::default() };
        let oracle = Oracle::new(&ctx.scene, cfg)?;
        let id = ctx.samples[0];
        let bounces = ctx.pre.bounces.min(crate::oracle::MAX_ORACLE_BOUNCES);
        let a = oracle.bounce_radiance(id, &env, bounces, None, false)?;
        let b = oracle.bounce_radiance(id, &env, bounces, None, false)?;
        let c = oracle.direct_radiance(id, &env, None);
        let d = oracle.direct_radiance(id, &env, None);
        Ok(Check::holds("oracle", "determinism", a == b && c == d, "repeated oracle evaluations are identical"))
    })]
}
