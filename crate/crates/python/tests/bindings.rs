use pyo3::ffi::c_str;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module<R>(f: impl FnOnce(Python<'_>, &Bound<'_, PyDict>) -> R) -> R {
    Python::initialize();
    Python::attach(|py| {
        let m = pyo3::wrap_pymodule!(prtsplat_py::prtsplat_module)(py);
        let globals = PyDict::new(py);
        globals.set_item("prtsplat", m).unwrap();
        f(py, &globals)
    })
}

#[test]
fn relights_a_fixture_from_python() {
    with_module(|py, g| {
        py.run(
            c_str!(
                "import tempfile, os\n\
                 s = prtsplat.Scene.load('fixture:single-disk')\n\
                 d = tempfile.mkdtemp()\n\
                 prtsplat.precompute(s, os.path.join(d, 'b'), bounces=0)\n\
                 b = prtsplat.Bundle.load(os.path.join(d, 'b'))\n\
                 r = b.radiance('constant', clamp=False)[0]\n\
                 assert all(abs(c - 1.0) < 2e-2 for c in r), r\n\
                 assert b.order == 3 and len(b) == 1\n"
            ),
            Some(g),
            None,
        )
        .unwrap();
    });
}

#[test]
fn input_errors_map_to_value_error() {
    with_module(|py, g| {
        py.run(
            c_str!(
                "try:\n    prtsplat.sh_basis([0.0, 0.0, 2.0], 3)\nexcept ValueError as e:\n    msg = str(e)\nelse:\n    raise AssertionError('no error')\n"
            ),
            Some(g),
            None,
        )
        .unwrap();
        let msg: String = g.get_item("msg").unwrap().unwrap().extract().unwrap();
        assert!(msg.contains("unit"), "{msg}");
    });
}
