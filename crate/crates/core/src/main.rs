use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;

use prtsplat::pipeline::{
    auto_camera, cmd_precompute, cmd_relight, cmd_sweep, load_light, load_scene, PrecomputeOptions, RelightPath,
    Relighter, DEFAULT_BOUNCES, DEFAULT_ORDER, DEFAULT_OUTGOING,
};
use prtsplat::raster::Camera;
use prtsplat::scene::{Bundle, MANIFEST_FILE};
use prtsplat::serve::BundleServer;
use prtsplat::sh::ShOrder;
use prtsplat::tracer::{DEFAULT_GATHER_DIRS, DEFAULT_T_FILTER};
use prtsplat::transfer::TransferMode;
use prtsplat::validate::{validate_dir, validate_scene, ValidateOptions};
use prtsplat::{Error, Result};

const EXIT_INPUT: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

#[derive(Parser)]
#[command(name = "prtsplat", version, about = "Precomputed radiance transfer for Gaussian splat scenes")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for procedural fixtures.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute transfer for a scene and write a bundle directory.
    Precompute(PrecomputeArgs),
    /// Relight a bundle under an environment and write one frame.
    Relight(RelightArgs),
    /// Rotate the light about an axis and write a frame sequence.
    Sweep(SweepArgs),
    /// Check a bundle or small scene against the reference oracles.
    Validate(ValidateArgs),
    /// Serve a bundle directory over HTTP for the viewer.
    Serve(ServeArgs),
    /// Print a summary of a bundle, PLY file or fixture.
    Info(InfoArgs),
}

#[derive(Args)]
struct TransferArgs {
    /// Splat PLY file or `fixture:<name>`.
    #[arg(long)]
    scene: String,
    /// Material sidecar JSON.
    #[arg(long)]
    materials: Option<PathBuf>,
    /// SH bands n (n² coefficients per channel).
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    order: u32,
    /// Gather directions per splat.
    #[arg(long, default_value_t = DEFAULT_GATHER_DIRS)]
    dirs: usize,
    #[arg(long, default_value_t = DEFAULT_BOUNCES)]
    bounces: u32,
    /// Same-surface filter threshold.
    #[arg(long = "t-filter", default_value_t = DEFAULT_T_FILTER)]
    t_filter: f64,
    /// diffuse, view or matrix.
    #[arg(long, default_value = "diffuse")]
    mode: String,
    /// View direction `x,y,z` for view mode.
    #[arg(long = "view-dir")]
    view_dir: Option<String>,
    /// Outgoing samples per splat for matrix mode.
    #[arg(long, default_value_t = DEFAULT_OUTGOING)]
    outgoing: usize,
}

impl TransferArgs {
    fn options(&self, seed: u64) -> Result<PrecomputeOptions> {
        let view = self.view_dir.as_deref().map(parse_vec3).transpose()?;
        Ok(PrecomputeOptions {
            order: ShOrder::new(self.order)?,
            gather_dirs: self.dirs,
            bounces: self.bounces,
            t_filter: self.t_filter,
            mode: TransferMode::parse(&self.mode, view)?,
            outgoing: self.outgoing,
            seed,
            ..Default::default()
        })
    }
}

#[derive(Args)]
struct PrecomputeArgs {
    #[command(flatten)]
    transfer: TransferArgs,
    /// Initial light recorded in the manifest (envmap or preset).
    #[arg(long)]
    env: Option<String>,
    /// Output bundle directory.
    #[arg(long)]
    out: PathBuf,
    /// Leave the index matrix out of the bundle.
    #[arg(long = "no-index")]
    no_index: bool,
}

#[derive(Args)]
struct RelightArgs {
    /// Bundle directory.
    #[arg(long)]
    scene: PathBuf,
    /// Envmap (.hdr/.pfm), light JSON, or preset such as `sun:0,0,1` or `sky`.
    #[arg(long)]
    env: String,
    /// Camera JSON; framed automatically when omitted.
    #[arg(long)]
    camera: Option<PathBuf>,
    /// vector or matrix.
    #[arg(long, default_value = "vector")]
    mode: String,
    /// Output image (.pfm or .png).
    #[arg(long)]
    out: PathBuf,
    /// Also write per-splat radiances as golden JSON.
    #[arg(long)]
    golden: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    env: String,
    #[arg(long)]
    camera: Option<PathBuf>,
    #[arg(long, default_value_t = 36)]
    frames: usize,
    /// Rotation axis `x,y,z`.
    #[arg(long, default_value = "0,0,1")]
    axis: String,
    #[arg(long, default_value = "vector")]
    mode: String,
    /// Output directory; frames are timed but not written when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Frame format: pfm or png.
    #[arg(long, default_value = "pfm")]
    format: String,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    transfer: TransferArgs,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip the sphere-fixture rotation check.
    #[arg(long)]
    quick: bool,
}

#[derive(Args)]
struct ServeArgs {
    /// Bundle directory to serve.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
}

#[derive(Args)]
struct InfoArgs {
    #[arg(long)]
    scene: String,
    #[arg(long)]
    materials: Option<PathBuf>,
}

fn parse_vec3(s: &str) -> Result<Vector3<f64>> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Input(format!("expected x,y,z but got '{s}'")))?;
    match parts[..] {
        [x, y, z] if x.is_finite() && y.is_finite() && z.is_finite() => Ok(Vector3::new(x, y, z)),
        _ => Err(Error::Input(format!("expected x,y,z but got '{s}'"))),
    }
}

fn camera_for(relighter: &Relighter, path: Option<&Path>) -> Result<Camera> {
    match path {
        Some(p) => Camera::load(p),
        None => auto_camera(&relighter.scene, 640, 480),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn is_bundle(path: &Path) -> bool {
    path.join(MANIFEST_FILE).is_file()
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Precompute(a) => {
            let mut opts = a.transfer.options(cli.seed)?;
            opts.keep_index = !a.no_index;
            if let Some(env) = &a.env {
                opts.env = Some(load_light(env, opts.order)?);
            }
            let scene = load_scene(&a.transfer.scene, a.transfer.materials.as_deref(), cli.seed)?;
            let timings = cmd_precompute(&scene, &opts, &a.out)?;
            for t in &timings {
                println!("{:<14} {:>9.3} s", t.stage, t.seconds);
            }
            println!("wrote {} ({} splats)", a.out.display(), scene.len());
        }
        Command::Relight(a) => {
            let relighter = Relighter::load(&a.scene)?;
            let camera = camera_for(&relighter, a.camera.as_deref())?;
            let report = cmd_relight(&relighter, &a.env, &camera, RelightPath::parse(&a.mode)?, &a.out, a.golden.as_deref())?;
            print_json(&report)?;
        }
        Command::Sweep(a) => {
            let relighter = Relighter::load(&a.scene)?;
            let camera = camera_for(&relighter, a.camera.as_deref())?;
            let axis = parse_vec3(&a.axis)?;
            let report = cmd_sweep(
                &relighter,
                &a.env,
                &camera,
                &axis,
                a.frames,
                RelightPath::parse(&a.mode)?,
                a.out.as_deref(),
                &a.format,
            )?;
            println!(
                "{} frames, {} splats: median relight {:.3} ms, median frame {:.3} ms",
                report.frames, report.splats, report.median_relight_ms, report.median_frame_ms
            );
        }
        Command::Validate(a) => {
            let opts = ValidateOptions { seed: cli.seed, rotation_fixture: !a.quick, ..Default::default() };
            let path = Path::new(&a.transfer.scene);
            let report = if is_bundle(path) {
                validate_dir(path, &opts)?
            } else {
                let scene = load_scene(&a.transfer.scene, a.transfer.materials.as_deref(), cli.seed)?;
                validate_scene(&scene, &a.transfer.options(cli.seed)?, &opts)?
            };
            let json = serde_json::to_string_pretty(&report)?;
            match &a.out {
                Some(p) => std::fs::write(p, json + "\n")?,
                None => println!("{json}"),
            }
            for c in report.failures() {
                eprintln!("FAIL {}: {}", c.name, c.detail);
            }
            if !report.passed {
                return Ok(EXIT_VALIDATION);
            }
        }
        Command::Serve(a) => {
            Bundle::load(&a.scene)?;
            let server = BundleServer::bind(&a.scene, &a.host, a.port)?;
            eprintln!("serving {} on http://{}:{}/", a.scene.display(), a.host, server.port());
            server.run();
        }
        Command::Info(a) => {
            let path = Path::new(&a.scene);
            if is_bundle(path) {
                let b = Bundle::load(path)?;
                let m = &b.manifest;
                println!("bundle     {}", path.display());
                println!("splats     {}", m.splat_count);
                println!("sh order   {} ({} coefficients per channel)", m.sh_order, m.coeffs_per_channel);
                println!("mode       {}", m.meta.mode);
                println!("bounces    {}", m.meta.bounces);
                println!("gather     {} directions, t_filter {}", m.meta.gather_dirs, m.meta.t_filter);
                println!("matrix     {}", if b.transfer_matrix.is_some() { "yes" } else { "no" });
                println!("index      {}", if b.index.is_some() { "yes" } else { "no" });
            } else {
                let scene = load_scene(&a.scene, a.materials.as_deref(), cli.seed)?;
                println!("scene      {}", scene.name.as_deref().unwrap_or(&a.scene));
                println!("splats     {}", scene.len());
                if let Some((lo, hi)) = scene.bounds() {
                    println!("bounds     [{:.3}, {:.3}, {:.3}] .. [{:.3}, {:.3}, {:.3}]", lo.x, lo.y, lo.z, hi.x, hi.y, hi.z);
                }
                let degenerate = scene.splats().iter().filter(|s| s.flags.degenerate).count();
                println!("degenerate {degenerate}");
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(EXIT_INPUT);
        }
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { EXIT_INPUT } else { 1 })
        }
    }
}
