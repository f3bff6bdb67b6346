//! Procedural test scenes. Random scenes are seeded and reproducible across
//! platforms (ChaCha8).

use std::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::brdf::{Material, Rgb};
use crate::error::{Error, Result};
use crate::scene::{Scene, Splat};

/// Thickness of a disk relative to its radius.
pub const DISK_FLATNESS: f64 = 1e-2;

/// Disk radius on curved fixtures relative to the mean splat spacing. Wider
/// disks poke out of the tangent plane of their neighbours and shadow them.
pub const SPHERE_SPREAD: f64 = 0.35;

/// A flat Gaussian of standard deviation `radius` in its plane, facing `normal`.
pub fn disk(center: Vector3<f64>, normal: Vector3<f64>, radius: f64, opacity: f64, material: Material) -> Result<Splat> {
    let n = normal.try_normalize(0.0).ok_or_else(|| Error::input("disk normal must be non-zero"))?;
    let rot = UnitQuaternion::rotation_between(&Vector3::z(), &n)
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI));
    Splat::new(center, rot, Vector3::new(radius, radius, radius * DISK_FLATNESS), opacity, n, material)
}

fn white() -> Material {
    Material::lambertian([1.0; 3]).expect("valid material")
}

/// One white Lambertian disk facing +z.
pub fn single_disk() -> Scene {
    Scene::new(vec![disk(Vector3::zeros(), Vector3::z(), 0.1, 0.99, white()).unwrap()])
        .unwrap()
        .with_name("single-disk")
}

/// Two parallel disks facing each other across `gap`, albedo 0.8. Splat 0
/// sits at the origin facing +z.
pub fn two_facing_disks(gap: f64, radius: f64) -> Scene {
    let m = Material::lambertian([0.8; 3]).unwrap();
    Scene::new(vec![
        disk(Vector3::zeros(), Vector3::z(), radius, 0.95, m).unwrap(),
        disk(Vector3::new(0.0, 0.0, gap), -Vector3::z(), radius, 0.95, m).unwrap(),
    ])
    .unwrap()
    .with_name("two-facing-disks")
}

/// Small receiver at the origin (splat 0) under a square plane of downward
/// facing disks at height 0.5 with the given opacity.
pub fn shadow_fixture(occluder_opacity: f64) -> Result<Scene> {
    let mut splats = vec![disk(Vector3::zeros(), Vector3::z(), 0.05, 0.99, white())?];
    let grey = Material::lambertian([0.5; 3])?;
    let half = 12;
    let step = 0.25;
    for i in -half..=half {
        for j in -half..=half {
            let p = Vector3::new(i as f64 * step, j as f64 * step, 0.5);
            splats.push(disk(p, -Vector3::z(), 0.2, occluder_opacity, grey)?);
        }
    }
    Ok(Scene::new(splats)?.with_name("shadow-plane"))
}

/// Square grid of `side × side` white Lambertian disks in the z = 0 plane.
pub fn lambertian_plane(side: usize, extent: f64) -> Scene {
    let step = extent / side as f64;
    let mut splats = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            let p = Vector3::new((i as f64 + 0.5) * step - 0.5 * extent, (j as f64 + 0.5) * step - 0.5 * extent, 0.0);
            splats.push(disk(p, Vector3::z(), 0.6 * step, 0.99, white()).unwrap());
        }
    }
    Scene::new(splats).unwrap().with_name("lambertian-plane")
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).sqrt();
    Vector3::new(r * phi.cos(), r * phi.sin(), z)
}

fn random_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(random_unit(rng)), rng.random_range(0.0..2.0 * PI))
}

/// `n` random anisotropic splats in the cube `[-1, 1]³`.
pub fn random_scene(n: usize, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splats = (0..n)
        .map(|_| {
            let mean = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let scale = Vector3::from_fn(|_, _| 0.02 * 8f64.powf(rng.random::<f64>()));
            let albedo: Rgb = std::array::from_fn(|_| rng.random_range(0.05..0.95));
            let mat = Material::new(albedo, rng.random_range(0.1..1.0), rng.random_range(0.0..0.5)).unwrap();
            Splat::new(mean, random_rotation(&mut rng), scale, rng.random_range(0.05..1.0), random_unit(&mut rng), mat)
                .unwrap()
        })
        .collect();
    Scene::new(splats).unwrap().with_name(format!("random-{n}-{seed}"))
}

/// Surface-like scene of about `n` disks: a sphere resting on a ground plane.
pub fn surface_scene(n: usize, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let on_sphere = n / 3;
    let on_ground = n - on_sphere;
    let mut splats = Vec::with_capacity(n);
    let r_sphere = 1.0;
    let center = Vector3::new(0.0, 0.0, 1.0);
    let ds = (4.0 * PI * r_sphere * r_sphere / on_sphere.max(1) as f64).sqrt();
    let sphere_mat = Material::new([0.8, 0.3, 0.25], 0.5, 0.0).unwrap();
    for k in 0..on_sphere {
        // Fibonacci sphere
        let z = 1.0 - (2 * k + 1) as f64 / on_sphere as f64;
        let phi = 2.0 * PI * (k as f64 * 0.618_033_988_749_895).fract();
        let r = (1.0 - z * z).sqrt();
        let nrm = Vector3::new(r * phi.cos(), r * phi.sin(), z);
        splats.push(disk(center + nrm * r_sphere, nrm, SPHERE_SPREAD * ds, 0.9, sphere_mat).unwrap());
    }
    let side = (on_ground as f64).sqrt().ceil() as usize;
    let extent = 6.0;
    let step = extent / side as f64;
    let mut placed = 0;
    'outer: for i in 0..side {
        for j in 0..side {
            if placed == on_ground {
                break 'outer;
            }
            let jitter = Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 0.0) * step;
            let p = Vector3::new((i as f64 + 0.5) * step - 0.5 * extent, (j as f64 + 0.5) * step - 0.5 * extent, 0.0);
            let checker = if (i / 4 + j / 4) % 2 == 0 { 0.75 } else { 0.35 };
            let mat = Material::new([checker; 3], 0.9, 0.0).unwrap();
            splats.push(disk(p + jitter, Vector3::z(), 0.7 * step, 0.9, mat).unwrap());
            placed += 1;
        }
    }
    Scene::new(splats).unwrap().with_name(format!("surface-{n}"))
}

/// About `n` white-ish Lambertian disks covering a unit sphere at the
/// origin, facing outward.
pub fn splat_sphere(n: usize) -> Scene {
    let ds = (4.0 * PI / n.max(1) as f64).sqrt();
    let m = Material::lambertian([0.8; 3]).unwrap();
    let splats = (0..n)
        .map(|k| {
            let z = 1.0 - (2 * k + 1) as f64 / n as f64;
            let phi = 2.0 * PI * (k as f64 * 0.618_033_988_749_895).fract();
            let r = (1.0 - z * z).sqrt();
            let nrm = Vector3::new(r * phi.cos(), r * phi.sin(), z);
            disk(nrm, nrm, SPHERE_SPREAD * ds, 0.9, m).unwrap()
        })
        .collect();
    Scene::new(splats).unwrap().with_name(format!("sphere-{n}"))
}

/// The small demo scene shipped with the repository (about 1500 splats).
pub fn demo_scene() -> Scene {
    surface_scene(1500, 7).with_name("demo")
}

/// Resolves `fixture:<name>[:<n>]` scene specs.
pub fn by_name(spec: &str, seed: u64) -> Result<Scene> {
    let parts: Vec<&str> = spec.split(':').collect();
    let count = |i: usize, default: usize| -> Result<usize> {
        parts.get(i).map_or(Ok(default), |s| s.parse().map_err(|_| Error::input(format!("bad splat count in '{spec}'"))))
    };
    match parts.first().copied() {
        Some("single-disk") => Ok(single_disk()),
        Some("two-disks") => Ok(two_facing_disks(1.0, 0.3)),
        Some("shadow") => shadow_fixture(0.99),
        Some("plane") => Ok(lambertian_plane(count(1, 16)?, 2.0)),
        Some("random") => Ok(random_scene(count(1, 500)?, seed)),
        Some("surface") => Ok(surface_scene(count(1, 100_000)?, seed)),
        Some("sphere") => Ok(splat_sphere(count(1, 600)?)),
        Some("demo") => Ok(demo_scene()),
        _ => Err(Error::input(format!(
            "unknown fixture '{spec}' (single-disk, two-disks, shadow, plane[:side], random[:n], surface[:n], sphere[:n], demo)"
        ))),
    }
}
