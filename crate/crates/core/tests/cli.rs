use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use prtsplat::pipeline::Golden;
use prtsplat::scene::{write_ply, Scene};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn prtsplat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prtsplat")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn precompute_two_splats(out: &Path) -> Output {
    let f = fixtures();
    prtsplat(&[
        "precompute",
        "--scene",
        s(&f.join("two_splats.ply")),
        "--materials",
        s(&f.join("two_splats.materials.json")),
        "--order",
        "3",
        "--bounces",
        "1",
        "--env",
        "sky",
        "--out",
        s(out),
    ])
}

fn sorted_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn precompute_reproduces_committed_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("two_splats");
    let run = precompute_two_splats(&out);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(sorted_files(&out), sorted_files(&fixtures().join("two_splats")));
}

#[test]
fn relight_writes_image_and_matching_golden() {
    let tmp = tempfile::tempdir().unwrap();
    let f = fixtures();
    let png = tmp.path().join("frame.png");
    let golden = tmp.path().join("golden.json");
    let run = prtsplat(&[
        "relight",
        "--scene",
        s(&f.join("two_splats")),
        "--env",
        "sky",
        "--camera",
        s(&f.join("two_splats.camera.json")),
        "--out",
        s(&png),
        "--golden",
        s(&golden),
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert!(fs::metadata(&png).unwrap().len() > 0);
    let ours: Golden = serde_json::from_slice(&fs::read(&golden).unwrap()).unwrap();
    let committed: Golden = serde_json::from_slice(&fs::read(f.join("two_splats.golden.json")).unwrap()).unwrap();
    assert_eq!(ours, committed);
}

#[test]
fn sweep_writes_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let run = prtsplat(&[
        "sweep",
        "--scene",
        s(&fixtures().join("two_splats")),
        "--env",
        "sun:0,0.5,1",
        "--frames",
        "3",
        "--axis",
        "0,0,1",
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    for k in 0..3 {
        assert!(tmp.path().join(format!("frame_{k:04}.pfm")).is_file());
    }
    assert!(tmp.path().join("sweep.json").is_file());
}

#[test]
fn validate_passes_on_fixture() {
    let run = prtsplat(&["validate", "--scene", s(&fixtures().join("two_splats")), "--quick"]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let report: serde_json::Value = serde_json::from_slice(&run.stdout).unwrap();
    assert_eq!(report["passed"], true);
}

#[test]
fn corrupted_blob_fails_integrity_and_skips_the_rest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    assert_eq!(code(&precompute_two_splats(&out)), 0);
    let blob = out.join("transfer.bin");
    let mut bytes = fs::read(&blob).unwrap();
    bytes[17] ^= 0x10;
    fs::write(&blob, bytes).unwrap();

    let run = prtsplat(&["validate", "--scene", s(&out)]);
    assert_eq!(code(&run), 3);
    let report: serde_json::Value = serde_json::from_slice(&run.stdout).unwrap();
    assert_eq!(report["passed"], false);
    for c in report["checks"].as_array().unwrap() {
        let expected = if c["name"] == "scene.bundle_integrity" { "fail" } else { "skip" };
        assert_eq!(c["status"], expected, "{}", c["name"]);
    }
}

#[test]
fn empty_scene_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let ply = tmp.path().join("empty.ply");
    write_ply(&Scene::new(Vec::new()).unwrap(), &ply).unwrap();
    let run = prtsplat(&["validate", "--scene", s(&ply)]);
    assert_eq!(code(&run), 2);
    assert!(String::from_utf8_lossy(&run.stderr).contains("empty"));
    let run = prtsplat(&["precompute", "--scene", s(&ply), "--out", s(&tmp.path().join("out"))]);
    assert_eq!(code(&run), 2);
}

#[test]
fn input_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nothing");
    assert_eq!(code(&prtsplat(&["relight", "--scene", s(&missing), "--env", "sky", "--out", "x.png"])), 2);
    let out = tmp.path().join("o");
    assert_eq!(code(&prtsplat(&["precompute", "--scene", "fixture:two-disks", "--order", "11", "--out", s(&out)])), 2);
    assert_eq!(code(&prtsplat(&["precompute", "--scene", "fixture:two-disks", "--mode", "mirror", "--out", s(&out)])), 2);
    let run = prtsplat(&["relight", "--scene", s(&fixtures().join("two_splats")), "--env", "moon", "--out", "x.png"]);
    assert_eq!(code(&run), 2);
    assert!(String::from_utf8_lossy(&run.stderr).contains("moon"));
}

#[test]
fn info_summarizes_bundles_and_fixtures() {
    let run = prtsplat(&["info", "--scene", s(&fixtures().join("demo"))]);
    assert_eq!(code(&run), 0);
    let text = String::from_utf8_lossy(&run.stdout);
    assert!(text.contains("1500"), "{text}");
    let run = prtsplat(&["info", "--scene", "fixture:sphere:100"]);
    assert_eq!(code(&run), 0);
    assert!(String::from_utf8_lossy(&run.stdout).contains("100"));
}
