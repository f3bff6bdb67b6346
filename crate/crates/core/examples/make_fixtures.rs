//! Regenerates the files under `fixtures/` from the procedural scenes.
//!
//! ```text
//! cargo run --release -p prtsplat --example make_fixtures -- fixtures
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use prtsplat::envlight::rotate_rgb;
use prtsplat::fixtures::{demo_scene, two_facing_disks};
use prtsplat::pipeline::{cmd_precompute, cmd_relight, load_light, load_scene, Golden, PrecomputeOptions, Relighter};
use prtsplat::raster::{Camera, CameraSpec};
use prtsplat::scene::{write_ply, MaterialSidecar, PerSplatMaterials, Scene};
use prtsplat::sh::{axis_angle, ShOrder};
use prtsplat::transfer::relight_vectors;

fn sidecar(scene: &Scene) -> MaterialSidecar {
    let m = |f: fn(&prtsplat::brdf::Material) -> f64| Some(scene.splats().iter().map(|s| f(&s.material)).collect());
    MaterialSidecar {
        defaults: Default::default(),
        per_splat: Some(PerSplatMaterials {
            albedo: Some(scene.splats().iter().map(|s| s.material.albedo).collect()),
            roughness: m(|x| x.roughness),
            metallic: m(|x| x.metallic),
            specular: m(|x| x.specular),
        }),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> prtsplat::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Writes `<name>.ply`, its material sidecar and a bundle built from the
/// files exactly as the CLI would, plus golden radiances for `env`.
fn export(dir: &Path, name: &str, scene: &Scene, opts: &PrecomputeOptions, env: &str, camera: &CameraSpec) -> prtsplat::Result<()> {
    let ply = dir.join(format!("{name}.ply"));
    let mats = dir.join(format!("{name}.materials.json"));
    write_ply(scene, &ply)?;
    write_json(&mats, &sidecar(scene))?;
    let loaded = load_scene(ply.to_str().expect("utf-8 path"), Some(&mats), opts.seed)?;
    let bundle_dir = dir.join(name);
    cmd_precompute(&loaded, opts, &bundle_dir)?;

    let relighter = Relighter::load(&bundle_dir)?;
    let cam = Camera::from_spec(camera)?;
    let golden = dir.join(format!("{name}.golden.json"));
    cmd_relight(&relighter, env, &cam, prtsplat::pipeline::RelightPath::Vector, &dir.join(format!("{name}.png")), Some(&golden))?;

    // same light turned a quarter turn about +z, for viewer rotation checks
    let light = load_light(env, relighter.order())?;
    let turned = rotate_rgb(&light, &axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2)?)?;
    let doc = Golden {
        env: format!("{env} rotated 90 degrees about +z"),
        sh_order: relighter.order().bands(),
        env_sh: std::array::from_fn(|c| turned[c].coeffs().to_vec()),
        clamp: true,
        radiance: relight_vectors(&relighter.bundle.transfer, relighter.order(), &turned, true)?,
    };
    write_json(&dir.join(format!("{name}.golden_rot90z.json")), &doc)?;
    println!("{name}: {} splats", scene.len());
    Ok(())
}

fn main() -> prtsplat::Result<()> {
    let dir: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()).into();
    fs::create_dir_all(&dir)?;
    let order = ShOrder::new(3)?;

    let two = two_facing_disks(1.0, 0.3).with_name("two-splats");
    let cam_two = CameraSpec {
        position: [2.5, -2.5, 0.5],
        look_at: [0.0, 0.0, 0.5],
        up: [0.0, 0.0, 1.0],
        fov_deg: 45.0,
        width: 160,
        height: 120,
    };
    write_json(&dir.join("two_splats.camera.json"), &cam_two)?;
    let opts = PrecomputeOptions { order, bounces: 1, env: Some(load_light("sky", order)?), ..Default::default() };
    export(&dir, "two_splats", &two, &opts, "sky", &cam_two)?;

    let cam_demo = CameraSpec {
        position: [0.0, -6.0, 3.0],
        look_at: [0.0, 0.0, 0.7],
        up: [0.0, 0.0, 1.0],
        fov_deg: 50.0,
        width: 320,
        height: 240,
    };
    write_json(&dir.join("demo.camera.json"), &cam_demo)?;
    let opts = PrecomputeOptions {
        order,
        bounces: 2,
        keep_index: false,
        env: Some(load_light("sun:0.4,-0.3,0.87", order)?),
        ..Default::default()
    };
    export(&dir, "demo", &demo_scene(), &opts, "sun:0.4,-0.3,0.87", &cam_demo)?;
    Ok(())
}
