//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! ```text
//! cargo test --release -p prtsplat --test acceptance
//! ```

use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prtsplat::brdf::eval_diffuse;
use prtsplat::envlight::{EnvLight, EquirectImage, Preset};
use prtsplat::fixtures;
use prtsplat::oracle::{dense_hemisphere, Oracle, OracleConfig};
use prtsplat::pipeline::{
    compute_transfer, load_scene, median, precompute, PrecomputeOptions, RelightPath, Relighter,
};
use prtsplat::raster::{Camera, Framebuffer};
use prtsplat::scene::Scene;
use prtsplat::sh::{eval_basis_into, project, reconstruct, Direction, ShOrder, ShVector, SphereSampler};
use prtsplat::tracer::{build_index_matrix, Tracer};
use prtsplat::transfer::{direct_diffuse_transfer, relight_vectors, RgbLight, TransferMode};

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;

struct Criterion {
    name: &'static str,
    budget_s: f64,
    run: fn() -> Outcome,
}

fn order(n: u32) -> ShOrder {
    ShOrder::new(n).unwrap()
}

fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// `2π ∫₀¹ z · N_l P_l(z) dz` by composite Simpson, for l = 0..3.
fn clamped_cosine_zonal() -> [f64; 4] {
    let legendre = |l: usize, z: f64| match l {
        0 => 1.0,
        1 => z,
        2 => 0.5 * (3.0 * z * z - 1.0),
        _ => 0.5 * (5.0 * z * z * z - 3.0 * z),
    };
    let n = 20_000;
    let h = 1.0 / n as f64;
    std::array::from_fn(|l| {
        let norm = ((2 * l + 1) as f64 / (4.0 * PI)).sqrt();
        let f = |z: f64| z * norm * legendre(l, z);
        let inner: f64 = (1..n).map(|i| if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h)).sum();
        2.0 * PI * (f(0.0) + f(1.0) + inner) * h / 3.0
    })
}

fn sh_correctness() -> Outcome {
    let sampler = SphereSampler::uniform_sphere(200_000, 0)?;
    let samples = sampler.samples();
    let len = order(4).basis_len();
    let mut gram = vec![0.0; len * len];
    let mut y = vec![0.0; len];
    for (d, w) in &samples {
        eval_basis_into(d, 4, &mut y);
        for p in 0..len {
            for q in 0..len {
                gram[p * len + q] += w * y[p] * y[q];
            }
        }
    }
    let gram_err = (0..len * len)
        .map(|i| (gram[i] - if i % (len + 1) == 0 { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max);

    let oracle = clamped_cosine_zonal();
    let v = project(|d| d.vector().z.max(0.0), order(4), &sampler)?;
    let c = v.coeffs();
    let zonal = [c[0], c[2], c[6], c[12]];
    let zonal_err = zonal.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let off_axis = c.iter().enumerate().filter(|(i, _)| ![0, 2, 6, 12].contains(i)).map(|(_, x)| x.abs()).fold(0.0, f64::max);
    let frozen = [0.886227, 1.023327, 0.495416, 0.0];
    let frozen_err = oracle.iter().zip(frozen).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let ok = gram_err <= 2e-3 && zonal_err <= 1e-3 && off_axis <= 1e-3 && frozen_err <= 1e-6;
    Ok((
        ok,
        format!(
            "max|G-I| {gram_err:.2e} (<= 2e-3), zonal {zonal:.6?} vs oracle err {zonal_err:.2e} (<= 1e-3), off-axis {off_axis:.1e}"
        ),
    ))
}

fn top_camera() -> Camera {
    Camera::look_at(Vector3::new(0.0, 0.0, 3.0), Vector3::zeros(), Vector3::y(), 30.0, 32, 32).unwrap()
}

fn energy_normalization() -> Outcome {
    let scene = fixtures::single_disk();
    let light = EnvLight::from_preset(Preset::Constant([1.0; 3]), order(3))?;
    let mut measured = Vec::new();
    for (mode, path) in [(TransferMode::Diffuse, RelightPath::Vector), (TransferMode::Matrix, RelightPath::Matrix)] {
        let p = precompute(&scene, &PrecomputeOptions { mode, ..Default::default() })?;
        let r = Relighter::new(p.bundle)?;
        let rad = r.radiance(light.sh(), path, Some(&top_camera()), false)?;
        measured.push(rad[0]);
    }
    let worst = measured.iter().flatten().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    Ok((worst <= 2e-2, format!("vector {:.5?}, matrix {:.5?}; max |L - 1| {worst:.2e} (<= 2e-2)", measured[0], measured[1])))
}

fn random_light(rng: &mut ChaCha8Rng, n: ShOrder) -> ShVector {
    let mut c: Vec<f64> = (0..n.basis_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    // keep the radiance positive so the relative error is meaningful
    c[0] = 4.0 + rng.random_range(0.0..2.0);
    ShVector::from_coeffs(n, c).unwrap()
}

fn band_limited_exactness() -> Outcome {
    let n = order(3);
    let k = 4096;
    let scene = fixtures::random_scene(300, 11);
    let tracer = Tracer::new(&scene, 0.9)?;
    let index = build_index_matrix(&tracer, k)?;
    let transfer = direct_diffuse_transfer(&scene, &index, n)?;
    let oracle = Oracle::new(&scene, OracleConfig { dense_samples: 80_000, gather_dirs: k, t_filter: 0.9 })?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let splats: Vec<usize> = (0..20).map(|_| rng.random_range(0..scene.len())).collect();
    let lights: Vec<ShVector> = (0..100).map(|_| random_light(&mut rng, n)).collect();
    let mut worst = 0.0f64;
    let mut occluded = 0;
    for &id in &splats {
        let s = &scene.splats()[id];
        let fd = eval_diffuse(&s.material)[0];
        // dense quadrature of L·V·cos·ρ/π for every light at once
        let mut dense = vec![0.0; lights.len()];
        let mut unoccluded = true;
        for (d, w) in dense_hemisphere(&s.normal, oracle.config().dense_samples) {
            let v = oracle.trace_from(id, &d).transmittance;
            unoccluded &= v == 1.0;
            let g = w * d.dot(&s.normal) * v * fd;
            let dir = Direction::new(d)?;
            for (acc, l) in dense.iter_mut().zip(&lights) {
                *acc += g * reconstruct(l, &dir);
            }
        }
        occluded += usize::from(!unoccluded);
        let t = ShVector::from_coeffs(n, transfer.channel(id, 0).to_vec())?;
        for (l, reference) in lights.iter().zip(&dense) {
            worst = worst.max(rel(t.dot(l)?, *reference));
        }
    }
    Ok((worst <= 1e-3, format!("{} lights x {} splats ({occluded} occluded), K = {k}: max rel err {worst:.2e} (<= 1e-3)", lights.len(), splats.len())))
}

fn tracer_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    let mut mismatched = 0usize;
    let mut hits = 0usize;
    for seed in 0..20u64 {
        let scene = fixtures::random_scene(500, 1000 + seed);
        let tracer = Tracer::new(&scene, 0.9)?;
        let oracle = Oracle::new(&scene, OracleConfig::default())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..1000 {
            let o = Vector3::from_fn(|_, _| rng.random_range(-1.3..1.3));
            let d = loop {
                let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
                if (1e-3..1.0).contains(&v.norm_squared()) {
                    break v.normalize();
                }
            };
            let a = tracer.trace(&o, &d, None);
            let b = oracle.trace(&o, &d, None);
            hits += a.hits.len();
            match b.max_difference(&a) {
                Some(x) => worst = worst.max(x),
                None => mismatched += 1,
            }
        }
    }
    Ok((
        mismatched == 0 && worst <= 1e-6,
        format!("20 scenes x 1000 rays, {hits} hits: {mismatched} differing id sequences, max weight/T diff {worst:.2e} (<= 1e-6)"),
    ))
}

/// Direct-only radiance of splat 0 under a constant unit light.
fn receiver_radiance(scene: &Scene) -> Result<f64, Box<dyn std::error::Error>> {
    let opts = PrecomputeOptions { bounces: 0, ..Default::default() };
    let p = precompute(scene, &opts)?;
    let light = EnvLight::from_preset(Preset::Constant([1.0; 3]), opts.order)?;
    Ok(relight_vectors(&p.bundle.transfer, opts.order, light.sh(), false)?[0][0])
}

fn shadow() -> Outcome {
    let alone = Scene::new(vec![fixtures::shadow_fixture(0.5)?.splats()[0].clone()])?;
    let open = receiver_radiance(&alone)?;
    let opaque = receiver_radiance(&fixtures::shadow_fixture(0.99)?)? / open;
    let soft: Vec<f64> = [0.2, 0.5, 0.9]
        .into_iter()
        .map(|o| Ok(receiver_radiance(&fixtures::shadow_fixture(o)?)? / open))
        .collect::<Result<_, Box<dyn std::error::Error>>>()?;
    let monotone = soft.windows(2).all(|w| w[1] < w[0]);
    Ok((
        opaque <= 0.05 && monotone,
        format!("opaque plane passes {:.2}% (<= 5%); opacity 0.2/0.5/0.9 -> {:.4?} of unoccluded", 100.0 * opaque, soft),
    ))
}

fn self_transfer_equivalence() -> Outcome {
    let scene = fixtures::two_facing_disks(1.0, 0.3);
    let n = order(3);
    let k = 1024;
    let opts = PrecomputeOptions { order: n, gather_dirs: k, bounces: 2, ..Default::default() };
    let (result, _) = compute_transfer(&scene, &opts)?;
    let env = EnvLight::from_preset(Preset::default_sky(), n)?;
    let relit = |t: &prtsplat::transfer::TransferVectors| -> Result<f64, Box<dyn std::error::Error>> {
        Ok(relight_vectors(t.data(), n, env.sh(), false)?[0][0])
    };
    let b1 = relit(&result.chain.bounces[0])?;
    let b2 = relit(&result.chain.bounces[1])?;

    let oracle = Oracle::new(&scene, OracleConfig { dense_samples: 40_000, gather_dirs: k, t_filter: opts.t_filter })?;
    let r = oracle.bounce_radiance(0, &env, 1, None, true)?;
    let discrete = r.discrete[1][0];
    let free = r.free_total.expect("free tier requested")[0] - oracle.direct_radiance(0, &env, None)[0];
    let exact_err = rel(b1, discrete);
    let free_err = rel(b1, free);
    let albedo = scene.splats().iter().map(|s| s.material.albedo[0]).fold(0.0, f64::max);
    let ok = exact_err <= 1e-6 && free_err <= 0.15 && b2 > 0.0 && b2 <= albedo * b1;
    Ok((
        ok,
        format!(
            "B=1 {b1:.6e} vs discrete oracle rel {exact_err:.1e} (<= 1e-6), vs free estimate {free:.6e} rel {:.1}% (<= 15%); B=2 increment {b2:.3e} in (0, {:.3e}]",
            100.0 * free_err,
            albedo * b1
        ),
    ))
}

fn max_abs(fb: &Framebuffer) -> f64 {
    fb.rgb.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max)
}

fn linearity_and_determinism() -> Outcome {
    let dir = fixtures_dir();
    let scene = load_scene(dir.join("demo.ply").to_str().unwrap(), Some(&dir.join("demo.materials.json")), 0)?;
    let cam = Camera::load(dir.join("demo.camera.json"))?;
    let n = order(3);
    let l1 = EnvLight::from_spec("sun:0.4,-0.3,0.87", n)?;
    let l2 = EnvLight::from_spec("sky", n)?;
    let (a, b) = (0.7, -0.45);
    let mix: RgbLight = std::array::from_fn(|c| l1.sh()[c].scaled(a).add(&l2.sh()[c].scaled(b)).unwrap());

    let mut lin_worst = 0.0f64;
    let small = fixtures::random_scene(200, 3);
    let cases = [
        (scene.clone(), PrecomputeOptions { order: n, ..Default::default() }, RelightPath::Vector, cam.clone()),
        (
            small.clone(),
            PrecomputeOptions { order: n, mode: TransferMode::Matrix, outgoing: 64, ..Default::default() },
            RelightPath::Matrix,
            prtsplat::pipeline::auto_camera(&small, 96, 72)?,
        ),
    ];
    for (s, opts, path, c) in &cases {
        let r = Relighter::new(precompute(s, opts)?.bundle)?;
        let f1 = r.render(l1.sh(), *path, c, false)?;
        let f2 = r.render(l2.sh(), *path, c, false)?;
        let fm = r.render(&mix, *path, c, false)?;
        let peak = max_abs(&fm).max(max_abs(&f1)).max(max_abs(&f2));
        for ((p, q), m) in f1.rgb.iter().zip(&f2.rgb).zip(&fm.rgb) {
            for ch in 0..3 {
                lin_worst = lin_worst.max((a * p[ch] + b * q[ch] - m[ch]).abs() / peak);
            }
        }
    }

    let tmp = tempfile::tempdir()?;
    let opts = PrecomputeOptions { order: n, env: Some(l1.sh().clone()), ..Default::default() };
    let mut bundles = Vec::new();
    let mut frames = Vec::new();
    for run in 0..2 {
        let out = tmp.path().join(format!("run{run}"));
        prtsplat::pipeline::cmd_precompute(&scene, &opts, &out)?;
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out)?
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        bundles.push(files);
        let frame = tmp.path().join(format!("frame{run}.pfm"));
        Relighter::load(&out)?.render(l1.sh(), RelightPath::Vector, &cam, true)?.write_pfm(&frame)?;
        frames.push(std::fs::read(&frame)?);
    }
    let same_bundle = bundles[0] == bundles[1];
    let same_frame = frames[0] == frames[1];
    Ok((
        lin_worst <= 1e-5 && same_bundle && same_frame,
        format!(
            "pre-clamp linearity err {lin_worst:.1e} of peak (<= 1e-5, vector + matrix); bundles identical: {same_bundle} ({} files); PFM frames identical: {same_frame}",
            bundles[0].len()
        ),
    ))
}

fn truncate(transfer: &[f32], from: ShOrder, to: ShOrder) -> Vec<f32> {
    let (a, b) = (from.basis_len(), to.basis_len());
    transfer.chunks(a).flat_map(|c| c[..b].iter().copied()).collect()
}

fn performance() -> Outcome {
    let n3 = order(3);
    let scene = fixtures::surface_scene(100_000, 1);
    let opts = PrecomputeOptions { order: n3, gather_dirs: 64, bounces: 2, ..Default::default() };
    let start = Instant::now();
    let p = precompute(&scene, &opts)?;
    let pre_s = start.elapsed().as_secs_f64();

    // order 6 direct transfer over the same index; order 2 is the leading block of order 3
    let n6 = order(6);
    let index = p.bundle.index.as_ref().expect("index kept");
    let t6 = direct_diffuse_transfer(&p.scene, index, n6)?.to_f32();
    let t3 = p.bundle.transfer.clone();
    let t2 = truncate(&t3, n3, order(2));
    let sets = [(order(2), t2), (n3, t3), (n6, t6)];

    let base = EnvLight::from_spec("sky", n6)?;
    let frames = 40;
    let mut times = vec![Vec::new(); sets.len()];
    for f in 0..frames {
        let angle = 2.0 * PI * f as f64 / frames as f64;
        let r = prtsplat::sh::axis_angle(&Vector3::z(), angle)?;
        let turned = prtsplat::envlight::rotate_rgb(base.sh(), &r)?;
        for ((o, t), acc) in sets.iter().zip(times.iter_mut()) {
            let light: RgbLight = std::array::from_fn(|c| turned[c].with_order(*o));
            let start = Instant::now();
            let rad = relight_vectors(t, *o, &light, true)?;
            acc.push(start.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(rad);
        }
    }
    let med: Vec<f64> = times.iter().map(|t| median(t)).collect();
    let monotone = med.windows(2).all(|w| w[0] <= w[1]);
    Ok((
        med[1] < 33.0 && monotone && pre_s < 600.0,
        format!(
            "{} splats on {} thread(s): precompute (order 3, K=64, B=2) {pre_s:.1} s (< 600 s); median relight ms at orders 2/3/6 = {:.2}/{:.2}/{:.2} (order 3 < 33, nondecreasing: {monotone})",
            scene.len(),
            rayon::current_num_threads(),
            med[0],
            med[1],
            med[2]
        ),
    ))
}

/// Relative RMS difference between demo renders with order 2 and order 3
/// transfer, each lit by `env` projected to its own order.
fn order_rms(scene: &Scene, cam: &Camera, env: impl Fn(ShOrder) -> prtsplat::Result<EnvLight>) -> Result<f64, Box<dyn std::error::Error>> {
    let mut frames = Vec::new();
    for n in [order(2), order(3)] {
        let p = precompute(scene, &PrecomputeOptions { order: n, bounces: 2, ..Default::default() })?;
        frames.push(Relighter::new(p.bundle)?.render(env(n)?.sh(), RelightPath::Vector, cam, false)?);
    }
    let (mut diff, mut norm) = (0.0, 0.0);
    for (a, b) in frames[0].rgb.iter().zip(&frames[1].rgb) {
        for c in 0..3 {
            diff += (a[c] - b[c]).powi(2);
            norm += b[c].powi(2);
        }
    }
    Ok((diff / norm).sqrt())
}

fn order_quality() -> Outcome {
    let dir = fixtures_dir();
    let scene = load_scene(dir.join("demo.ply").to_str().unwrap(), Some(&dir.join("demo.materials.json")), 0)?;
    let cam = Camera::load(dir.join("demo.camera.json"))?;
    // sky brighter overhead and toward +x, linear in direction
    let gradient = EquirectImage::from_fn(128, |d| {
        let v = 1.0 + 0.6 * d.z + 0.25 * d.x;
        [0.9 * v, v, 1.1 * v]
    })?;
    let smooth = order_rms(&scene, &cam, |n| EnvLight::from_image(gradient.clone(), n))?;
    let sky = order_rms(&scene, &cam, |n| EnvLight::from_spec("sky", n))?;
    Ok((
        smooth < 0.01,
        format!(
            "demo fixture, order 2 vs 3 under a linear sky gradient: relative RMS {:.4}% (< 1%); sky preset with band-2 content (informational): {:.2}%",
            100.0 * smooth,
            100.0 * sky
        ),
    ))
}

const CRITERIA: &[Criterion] = &[
    Criterion { name: "sh-correctness", budget_s: 10.0, run: sh_correctness },
    Criterion { name: "energy-normalization", budget_s: 5.0, run: energy_normalization },
    Criterion { name: "band-limited-exactness", budget_s: 30.0, run: band_limited_exactness },
    Criterion { name: "tracer-equivalence", budget_s: 60.0, run: tracer_equivalence },
    Criterion { name: "shadow", budget_s: 30.0, run: shadow },
    Criterion { name: "self-transfer-equivalence", budget_s: 60.0, run: self_transfer_equivalence },
    Criterion { name: "linearity-determinism", budget_s: 60.0, run: linearity_and_determinism },
    Criterion { name: "performance", budget_s: f64::INFINITY, run: performance },
    Criterion { name: "order-quality", budget_s: f64::INFINITY, run: order_quality },
];

fn main() {
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in CRITERIA.iter().filter(|c| only.is_empty() || only.iter().any(|o| c.name.contains(o.as_str()))) {
        let start = Instant::now();
        let outcome = (c.run)();
        let secs = start.elapsed().as_secs_f64();
        let (ok, detail) = match outcome {
            Ok((ok, detail)) => (ok && secs < c.budget_s, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let budget = if c.budget_s.is_finite() { format!(" / {:.0} s", c.budget_s) } else { String::new() };
        println!("{} {}: {detail} [{secs:.1} s{budget}]", if ok { "PASS" } else { "FAIL" }, c.name);
        failed += usize::from(!ok);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
