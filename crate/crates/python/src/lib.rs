//! Python bindings for the `prtsplat` crate.

use std::path::PathBuf;

use nalgebra::Vector3;
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use prtsplat::pipeline::{self, PrecomputeOptions, RelightPath, Relighter};
use prtsplat::raster::Camera;
use prtsplat::sh::{eval_sh_basis, Direction, ShOrder};
use prtsplat::transfer::{RgbLight, TransferMode};
use prtsplat::validate::{validate_dir, validate_scene, ValidateOptions};

create_exception!(prtsplat, InputError, PyValueError);
create_exception!(prtsplat, PrtError, PyRuntimeError);

fn err(e: prtsplat::Error) -> PyErr {
    if e.is_input_error() {
        InputError::new_err(e.to_string())
    } else {
        PrtError::new_err(e.to_string())
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for prtsplat::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

fn json_to_py(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// A light given as a preset/envmap spec or as three coefficient lists.
#[derive(FromPyObject)]
enum LightArg {
    Spec(String),
    Coeffs([Vec<f64>; 3]),
}

impl LightArg {
    fn resolve(&self, order: ShOrder) -> PyResult<RgbLight> {
        match self {
            LightArg::Spec(s) => pipeline::load_light(s, order).py(),
            LightArg::Coeffs(c) => pipeline::light_from_coeffs(c).py(),
        }
    }
}

/// A splat scene loaded from a PLY file or a `fixture:<name>` spec.
#[pyclass(module = "prtsplat", frozen)]
struct Scene {
    inner: prtsplat::scene::Scene,
}

#[pymethods]
impl Scene {
    #[staticmethod]
    #[pyo3(signature = (spec, materials=None, seed=0))]
    fn load(spec: &str, materials: Option<PathBuf>, seed: u64) -> PyResult<Self> {
        Ok(Scene { inner: pipeline::load_scene(spec, materials.as_deref(), seed).py()? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Scene({:?}, {} splats)", self.inner.name.as_deref().unwrap_or(""), self.inner.len())
    }

    #[getter]
    fn name(&self) -> Option<String> {
        self.inner.name.clone()
    }

    /// `((xmin, ymin, zmin), (xmax, ymax, zmax))`, or `None` when empty.
    fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        self.inner.bounds().map(|(lo, hi)| (lo.into(), hi.into()))
    }

    fn means(&self) -> Vec<[f64; 3]> {
        self.inner.splats().iter().map(|s| s.mean.into()).collect()
    }

    fn normals(&self) -> Vec<[f64; 3]> {
        self.inner.splats().iter().map(|s| s.normal.into()).collect()
    }
}

/// A precomputed bundle ready for relighting.
#[pyclass(module = "prtsplat", frozen)]
struct Bundle {
    inner: Relighter,
}

impl Bundle {
    fn camera(&self, camera: Option<PathBuf>) -> PyResult<Camera> {
        match camera {
            Some(p) => Camera::load(p).py(),
            None => pipeline::auto_camera(&self.inner.scene, 640, 480).py(),
        }
    }
}

#[pymethods]
impl Bundle {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Bundle { inner: Relighter::load(dir).py()? })
    }

    fn __len__(&self) -> usize {
        self.inner.scene.len()
    }

    /// SH bands `n` of the stored transfer.
    #[getter]
    fn order(&self) -> u32 {
        self.inner.order().bands()
    }

    #[getter]
    fn has_matrix(&self) -> bool {
        self.inner.bundle.transfer_matrix.is_some()
    }

    /// Per-splat transfer as floats, laid out `[splat][rgb][coeff]`.
    fn transfer(&self) -> Vec<f32> {
        self.inner.bundle.transfer.clone()
    }

    fn scene(&self) -> Scene {
        Scene { inner: self.inner.scene.clone() }
    }

    /// Per-splat RGB radiance under `light`.
    #[pyo3(signature = (light, clamp=true, mode="vector", camera=None))]
    fn radiance(&self, py: Python<'_>, light: LightArg, clamp: bool, mode: &str, camera: Option<PathBuf>) -> PyResult<Vec<[f64; 3]>> {
        let light = light.resolve(self.inner.order())?;
        let path = RelightPath::parse(mode).py()?;
        let cam = match path {
            RelightPath::Matrix => Some(self.camera(camera)?),
            RelightPath::Vector => None,
        };
        py.detach(|| self.inner.radiance(&light, path, cam.as_ref(), clamp)).py()
    }

    /// Renders one frame and writes it to `out` (`.png` or `.pfm`). Returns
    /// the image size.
    #[pyo3(signature = (light, out, camera=None, mode="vector"))]
    fn render(&self, py: Python<'_>, light: LightArg, out: PathBuf, camera: Option<PathBuf>, mode: &str) -> PyResult<(usize, usize)> {
        let light = light.resolve(self.inner.order())?;
        let path = RelightPath::parse(mode).py()?;
        let cam = self.camera(camera)?;
        let fb = py.detach(|| self.inner.render(&light, path, &cam, true)).py()?;
        fb.write_image(&out).py()?;
        Ok((fb.width, fb.height))
    }
}

fn options(order: u32, dirs: usize, bounces: u32, t_filter: f64, mode: &str, view_dir: Option<[f64; 3]>, seed: u64) -> PyResult<PrecomputeOptions> {
    Ok(PrecomputeOptions {
        order: ShOrder::new(order).py()?,
        gather_dirs: dirs,
        bounces,
        t_filter,
        mode: TransferMode::parse(mode, view_dir.map(Vector3::from)).py()?,
        seed,
        ..Default::default()
    })
}

/// Precomputes transfer for `scene` into the bundle directory `out` and
/// returns `(stage, seconds)` timings.
#[pyfunction]
#[pyo3(signature = (scene, out, order=3, dirs=64, bounces=2, t_filter=0.9, mode="diffuse", view_dir=None, env=None, keep_index=true))]
#[allow(clippy::too_many_arguments)]
fn precompute(
    py: Python<'_>,
    scene: &Scene,
    out: PathBuf,
    order: u32,
    dirs: usize,
    bounces: u32,
    t_filter: f64,
    mode: &str,
    view_dir: Option<[f64; 3]>,
    env: Option<LightArg>,
    keep_index: bool,
) -> PyResult<Vec<(String, f64)>> {
    let mut opts = options(order, dirs, bounces, t_filter, mode, view_dir, 0)?;
    opts.keep_index = keep_index;
    if let Some(env) = env {
        opts.env = Some(env.resolve(opts.order)?);
    }
    let timings = py.detach(|| pipeline::cmd_precompute(&scene.inner, &opts, &out)).py()?;
    Ok(timings.into_iter().map(|t| (t.stage, t.seconds)).collect())
}

/// Runs the validation checks on a bundle directory or a small scene and
/// returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (target, quick=true, seed=0, order=3, dirs=64, bounces=2))]
fn validate(py: Python<'_>, target: &Bound<'_, PyAny>, quick: bool, seed: u64, order: u32, dirs: usize, bounces: u32) -> PyResult<Py<PyAny>> {
    let opts = ValidateOptions { seed, rotation_fixture: !quick, ..Default::default() };
    let report = if let Ok(scene) = target.cast::<Scene>() {
        let pre = options(order, dirs, bounces, 0.9, "diffuse", None, seed)?;
        let scene = scene.get().inner.clone();
        py.detach(|| validate_scene(&scene, &pre, &opts)).py()?
    } else {
        let dir: PathBuf = target.extract()?;
        py.detach(|| validate_dir(&dir, &opts)).py()?
    };
    json_to_py(py, &serde_json::to_string(&report).map_err(|e| PrtError::new_err(e.to_string()))?)
}

/// SH projection of an environment spec: three coefficient lists.
#[pyfunction]
fn project_env(light: LightArg, order: u32) -> PyResult<[Vec<f64>; 3]> {
    let l = light.resolve(ShOrder::new(order).py()?)?;
    Ok(l.map(|v| v.coeffs().to_vec()))
}

/// Real SH basis values at a unit direction.
#[pyfunction]
fn sh_basis(direction: [f64; 3], order: u32) -> PyResult<Vec<f64>> {
    let d = Direction::new(Vector3::from(direction)).py()?;
    Ok(eval_sh_basis(&d, ShOrder::new(order).py()?))
}

#[pymodule]
#[pyo3(name = "prtsplat")]
pub fn prtsplat_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scene>()?;
    m.add_class::<Bundle>()?;
    m.add_function(wrap_pyfunction!(precompute, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(project_env, m)?)?;
    m.add_function(wrap_pyfunction!(sh_basis, m)?)?;
    m.add("InputError", m.py().get_type::<InputError>())?;
    m.add("PrtError", m.py().get_type::<PrtError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
