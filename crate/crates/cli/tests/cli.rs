use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use splatfuse_core::io::dataset::{read_color_png, write_color_png};
use splatfuse_core::io::{export_ply, import_ply, load_scene, EngineConfig};
use splatfuse_core::decode::GaussianPrimitiveSet;
use splatfuse_core::pipeline::Engine;

const W: usize = 64;
const H: usize = 48;

fn splatfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatfuse")).args(args).output().expect("spawn splatfuse")
}

fn ok(args: &[&str]) -> String {
    let out = splatfuse(args);
    assert!(
        out.status.success(),
        "splatfuse {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, preset: &str, views: usize, seed: u64) -> PathBuf {
    let out = dir.join(format!("{preset}-{seed}"));
    ok(&[
        "synth",
        "--preset",
        preset,
        "--views",
        &views.to_string(),
        "--width",
        &W.to_string(),
        "--height",
        &H.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        s(&out),
    ]);
    out
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn read_tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "box-room", 4, 3);
    let b = dir.path().join("again");
    std::fs::create_dir(&b).unwrap();
    let b = synth(&b, "box-room", 4, 3);
    assert_eq!(read_tree(&a), read_tree(&b));
    let scene = load_scene(&a).unwrap();
    assert_eq!(scene.len(), 4);
    assert!(scene.gt_depths.is_some());
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["command"], "synth");
    assert_eq!(m["seed"], 3);

    let other = synth(dir.path(), "box-room", 4, 4);
    assert_ne!(read_tree(&a), read_tree(&other));
}

#[test]
fn reconstruct_cardinality() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), "box-room", 4, 0);
    let ply = |name: &str| dir.path().join(name);
    let n = W * H;

    ok(&["reconstruct", "--scene", s(&scene), "--views", "0", "--out", s(&ply("one.ply"))]);
    assert_eq!(import_ply(&ply("one.ply")).unwrap().len(), n);

    let stdout = ok(&["reconstruct", "--scene", s(&scene), "--views", "0,0", "--out", s(&ply("dup.ply"))]);
    assert_eq!(import_ply(&ply("dup.ply")).unwrap().len(), n);
    assert!(stdout.contains("reduction 50.0%"), "{stdout}");

    ok(&["reconstruct", "--scene", s(&scene), "--views", "0,1,2", "--out", s(&ply("three.ply")), "--timings"]);
    let m = import_ply(&ply("three.ply")).unwrap().len();
    assert!(m >= n && m <= 3 * n, "{m}");

    let manifest = json(&ply("three.ply.manifest.json"));
    assert_eq!(manifest["command"], "reconstruct");
    assert_eq!(manifest["context"], serde_json::json!([0, 1, 2]));
    assert!(manifest["timings_ms"].as_object().unwrap().contains_key("cost_volume"));
}

#[test]
fn config_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), "box-room", 3, 0);
    let cfg = dir.path().join("engine.cfg");
    std::fs::write(&cfg, "# test\nnum_planes = 16\ndelta = 0.1\n").unwrap();
    let out = dir.path().join("g.ply");

    ok(&["reconstruct", "--config", s(&cfg), "--scene", s(&scene), "--views", "0,1", "--num-planes", "24", "--out", s(&out)]);
    let m = json(&dir.path().join("g.ply.manifest.json"));
    assert_eq!(m["config"]["num_planes"], "24");
    assert_eq!(m["config"]["delta"], "0.1");
    assert_eq!(m["config"]["kappa"], EngineConfig::default().kappa.to_string());

    // A manifest replays the same settings.
    let replay = dir.path().join("replay.ply");
    let manifest = dir.path().join("g.ply.manifest.json");
    ok(&["reconstruct", "--config", s(&manifest), "--scene", s(&scene), "--views", "0,1", "--out", s(&replay)]);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&replay).unwrap());
    assert_eq!(json(&dir.path().join("replay.ply.manifest.json"))["config"], m["config"]);

    ok(&["reconstruct", "--scene", s(&scene), "--views", "0", "--set", "num_planes=20", "--out", s(&out)]);
    assert_eq!(json(&dir.path().join("g.ply.manifest.json"))["config"]["num_planes"], "20");
}

#[test]
fn render_matches_in_process() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), "box-room", 3, 1);
    let ply = dir.path().join("g.ply");
    ok(&["reconstruct", "--scene", s(&scene), "--views", "0,1", "--out", s(&ply)]);

    let png = dir.path().join("r.png");
    let depth = dir.path().join("d.png");
    ok(&["render", "--ply", s(&ply), "--scene", s(&scene), "--view", "1", "--out", s(&png), "--depth-out", s(&depth)]);
    assert!(depth.exists());

    let data = load_scene(&scene).unwrap();
    let engine = Engine::new(EngineConfig::default()).unwrap();
    let frame = engine.render_view(&import_ply(&ply).unwrap(), &data.views[1]).unwrap();
    let expected = dir.path().join("expected.png");
    write_color_png(&expected, &frame.color).unwrap();
    assert_eq!(std::fs::read(&png).unwrap(), std::fs::read(&expected).unwrap());

    // Explicit camera files give the same image.
    let png2 = dir.path().join("r2.png");
    let pose = scene.join("poses").join("000001.txt");
    let intr = scene.join("intrinsics.txt");
    ok(&[
        "render",
        "--ply",
        s(&ply),
        "--pose",
        s(&pose),
        "--intrinsics",
        s(&intr),
        "--width",
        &W.to_string(),
        "--height",
        &H.to_string(),
        "--out",
        s(&png2),
    ]);
    assert_eq!(std::fs::read(&png).unwrap(), std::fs::read(&png2).unwrap());

    // White minus black background is the uncovered fraction, 1 - alpha.
    let white = dir.path().join("w.png");
    ok(&["render", "--ply", s(&ply), "--scene", s(&scene), "--view", "1", "--background", "1,1,1", "--out", s(&white)]);
    let (b, w) = (read_color_png(&png).unwrap(), read_color_png(&white).unwrap());
    for i in 0..W * H {
        for c in 0..3 {
            let diff = w.data[i][c] - b.data[i][c];
            assert!((diff - (1.0 - frame.alpha.data[i])).abs() <= 1.0 / 255.0 + 1e-9, "pixel {i}: {diff}");
        }
    }
    assert_ne!(b, w);
}

#[test]
fn render_empty_scene_is_background() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), "plane-wall", 2, 0);
    let ply = dir.path().join("empty.ply");
    export_ply(&GaussianPrimitiveSet::new(0).unwrap(), &ply).unwrap();
    let png = dir.path().join("e.png");
    ok(&["render", "--ply", s(&ply), "--scene", s(&scene), "--view", "0", "--background", "0.2,0.4,0.6", "--out", s(&png)]);
    let img = read_color_png(&png).unwrap();
    let expect = [51.0 / 255.0, 102.0 / 255.0, 153.0 / 255.0];
    assert!(img.data.iter().all(|c| c == &expect), "{:?}", img.data[0]);
}

#[test]
fn evaluate_self_view_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path(), "box-room", 4, 2);
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        ok(&["evaluate", "--scene", s(&scene), "--context", "0", "--targets", "0", "--out", s(out)]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let r = json(&a);
    assert!(r["psnr"].as_f64().unwrap() >= 25.0, "{r}");
    assert!(r["abs_rel"].is_number());
    assert_eq!(r["num_gaussians"], W * H);
    assert_eq!(r["timings_ms"], serde_json::json!({}));

    // Without ground-truth depth the depth fields are null.
    std::fs::remove_dir_all(scene.join("depths")).unwrap();
    let c = dir.path().join("c.json");
    ok(&["evaluate", "--scene", s(&scene), "--context", "0,1", "--targets", "2", "--out", s(&c), "--timings"]);
    let r = json(&c);
    assert!(r["abs_rel"].is_null() && r["delta_1_25"].is_null());
    assert!(r["psnr"].is_number() && r["ssim"].is_number());
    assert!(!r["timings_ms"].as_object().unwrap().is_empty());
    assert!(dir.path().join("c.json.manifest.json").exists());
}

#[test]
fn failures_exit_nonzero_with_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = splatfuse(&["reconstruct", "--scene", s(&dir.path().join("missing")), "--views", "0", "--out", s(&dir.path().join("g.ply"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("[load]"), "{err}");
    assert!(!dir.path().join("g.ply").exists());

    let scene = synth(dir.path(), "plane-wall", 2, 0);
    let out = splatfuse(&["reconstruct", "--scene", s(&scene), "--views", "5", "--out", s(&dir.path().join("g.ply"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[reconstruct]"));

    let out = splatfuse(&["reconstruct", "--scene", s(&scene), "--views", "0", "--set", "bogus=1", "--out", s(&dir.path().join("g.ply"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    let out = splatfuse(&["render", "--ply", s(&dir.path().join("none.ply")), "--scene", s(&scene), "--view", "0", "--out", s(&dir.path().join("x.png"))]);
    assert!(!out.status.success());
}
