#[path = "../../core/tests/support/fixtures.rs"]
#[allow(dead_code)]
mod fixtures;

use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use fixtures::{corner_spec_toml, cube_run, obj_text};
use zerokey::gateway::{MockDetector, MockSpec};
use zerokey::mesh::{load_mesh, normalize_mesh, primitives, MeshFormat, TriangleMesh};
use zerokey::pipeline::PipelineSettings;
use zerokey_server::{spawn, MockService};

fn zerokey(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zerokey"))
        .args(args)
        .current_dir(cwd)
        .env_remove("ZEROKEY_DETECTOR_URL")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn corners_gt(dir: &Path, model_id: &str, offset: f64) -> std::path::PathBuf {
    let kps: Vec<String> = (0..8)
        .map(|n| {
            let s = |b: usize| if n >> b & 1 == 1 { 1.0 } else { -1.0 };
            let r = 1.0 / 3f64.sqrt();
            format!(
                "{{\"id\": {n}, \"xyz\": [{}, {}, {}]}}",
                s(2) * r + offset,
                s(1) * r,
                s(0) * r
            )
        })
        .collect();
    let path = dir.join("gt.json");
    std::fs::write(
        &path,
        format!("{{\"model_id\": \"{model_id}\", \"keypoints\": [{}]}}", kps.join(", ")),
    )
    .unwrap();
    path
}

#[test]
fn detect_writes_predictions_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    cube_run(dir.path(), &corner_spec_toml(0.0, 0.0, 0.0, 0), "");
    let stdout = ok(&zerokey(&["detect", "--config", "run.toml"], dir.path()));
    assert!(stdout.contains("cube: 8 prompts, 48 cells"), "{stdout}");
    assert!(dir.path().join("out/predictions.json").exists());
    assert!(dir.path().join("out/manifest.json").exists());
}

#[test]
fn detect_is_reproducible_and_flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    cube_run(dir.path(), &corner_spec_toml(2.0, 0.2, 0.0, 0), "");
    let args = ["detect", "--config", "run.toml", "--seed", "4", "--views", "10"];
    ok(&zerokey(&[&args[..], &["--output-dir", "a"]].concat(), dir.path()));
    ok(&zerokey(&[&args[..], &["--output-dir", "b"]].concat(), dir.path()));
    let a = std::fs::read(dir.path().join("a/predictions.json")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b/predictions.json")).unwrap());
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["counts"]["cells"], 80);
    assert_eq!(manifest["config"]["seed"], 4);
}

#[test]
fn silent_detector_still_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    cube_run(dir.path(), &corner_spec_toml(0.0, 0.0, 1.0, 0), "");
    let stdout = ok(&zerokey(&["detect", "--config", "run.toml"], dir.path()));
    assert_eq!(stdout.matches("no keypoint").count(), 8);
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["counts"]["miss_rate"], 1.0);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = zerokey(&["detect", "--config", "missing.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    cube_run(dir.path(), &corner_spec_toml(0.0, 0.0, 0.0, 0), "");
    let out = zerokey(&["detect", "--config", "run.toml", "--patch", "4"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("odd"));
    assert_eq!(zerokey(&["detect"], dir.path()).status.code(), Some(2));
}

#[test]
fn unreachable_detector_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cube.obj"), obj_text(&primitives::cube(1))).unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "mesh = \"cube.obj\"\nviews = 2\nimage_size = 32\n\
         [detector]\nkind = \"remote\"\n[detector.remote]\nattempts = 1\nbackoff_ms = 1\n\
         [prompts]\nsource = \"list\"\nprompts = [{ id = \"a\", text = \"Point to the corner in this image.\" }]\n",
    )
    .unwrap();
    // nothing listens on the discard port
    let out = zerokey(
        &["detect", "--config", "run.toml", "--detector-url", "http://127.0.0.1:9"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn eval_scores_predictions_and_reports_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    cube_run(dir.path(), &corner_spec_toml(0.0, 0.0, 0.0, 0), "views = 26\nimage_size = 256");
    ok(&zerokey(&["detect", "--config", "run.toml"], dir.path()));
    corners_gt(dir.path(), "cube", 0.0);
    let args = [
        "eval", "--mesh", "cube.obj", "--predictions", "out/predictions.json", "--gt", "gt.json", "--gt-frame",
        "normalized", "--thresholds", "0.001,0.05,0.1", "--out", "eval.csv", "--json", "eval.json",
    ];
    ok(&zerokey(&args, dir.path()));
    let csv = std::fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    assert_eq!(last, "0.1,1.0,8,8,8", "{csv}");
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["models"][0]["model_id"], "cube");

    // ground truth floating 0.3 off the surface
    corners_gt(dir.path(), "cube", 0.3);
    let out = zerokey(&args, dir.path());
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));

    let out = zerokey(&["eval", "--mesh", "cube.obj", "--mesh", "cube.obj", "--predictions", "out/predictions.json", "--gt", "gt.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablate_writes_one_block_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    cube_run(dir.path(), &corner_spec_toml(0.0, 0.0, 0.0, 0), "");
    corners_gt(dir.path(), "cube", 0.0);
    let stdout = ok(&zerokey(
        &[
            "ablate", "--config", "run.toml", "--axis", "aggregation", "--values", "mean,hdbscan", "--gt", "gt.json",
            "--gt-frame", "normalized", "--thresholds", "0.05,0.1",
        ],
        dir.path(),
    ));
    let rows: Vec<&str> = stdout.lines().collect();
    assert_eq!(rows[0], "variant,threshold,iou,tp,n_pred,n_gt");
    assert_eq!(rows.len(), 5);
    assert!(rows[1].starts_with("aggregation=mean,0.05,"));
    let out = zerokey(&["ablate", "--config", "run.toml", "--axis", "colour", "--values", "1", "--gt", "gt.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cube.obj"), obj_text(&primitives::cube(2))).unwrap();
    std::fs::write(dir.path().join("mock.toml"), corner_spec_toml(0.0, 0.0, 0.0, 0)).unwrap();
    ok(&zerokey(
        &[
            "simulate", "--mesh", "cube.obj", "--mock-spec", "mock.toml", "--sigmas", "0,2", "--outliers", "0",
            "--sweep-views", "6,12", "--image-size", "128", "--out", "sim.csv",
        ],
        dir.path(),
    ));
    let csv = std::fs::read_to_string(dir.path().join("sim.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().nth(1).unwrap().starts_with("0.0,0.0,6,"), "{csv}");
}

#[test]
fn roundtrip_on_mock_keypoints() {
    let dir = tempfile::tempdir().unwrap();
    cube_run(dir.path(), &corner_spec_toml(0.0, 0.0, 0.0, 0), "views = 26\nimage_size = 256");
    ok(&zerokey(&["roundtrip", "--config", "run.toml", "--out", "rt.csv"], dir.path()));
    let csv = std::fs::read_to_string(dir.path().join("rt.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 8);
    for r in rows {
        let error: f64 = r.split(',').nth(5).unwrap().parse().unwrap();
        assert!(error < 0.02, "{r}");
    }
    let out = zerokey(&["roundtrip", "--config", "run.toml", "--xyz", "0,0,0.577"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn render_debug_writes_buffers() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ico.obj"), obj_text(&primitives::icosphere(1))).unwrap();
    ok(&zerokey(&["render-debug", "--mesh", "ico.obj", "--views", "3", "--image-size", "32", "--out", "dbg"], dir.path()));
    for i in 0..3 {
        for ext in ["png", "depth.zkb", "face.zkb"] {
            assert!(dir.path().join(format!("dbg/view_{i:03}.{ext}")).exists());
        }
    }
    let cams: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("dbg/cameras.json")).unwrap()).unwrap();
    assert_eq!(cams.as_array().unwrap().len(), 3);
}

fn lumpy() -> TriangleMesh {
    primitives::icosphere(2).map_vertices(|p| {
        let k = 1.0 + 0.15 * (3.0 * p.x + 5.0 * p.y * p.y + 7.0 * p.z).sin();
        nalgebra::Point3::from(p.coords * k)
    })
}

#[test]
fn recorded_session_replays_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("lumpy.obj"), obj_text(&lumpy())).unwrap();
    let spec = "sigma = 1.5\nmulti = 0.3\nseed = 3\n\
                [[keypoints]]\nid = \"a\"\nname = \"bump\"\nxyz = [0.0, 0.0, 1.0]\n\
                [[keypoints]]\nid = \"b\"\nname = \"dent\"\nxyz = [1.0, 0.0, 0.0]\n";
    std::fs::write(d.join("mock.toml"), spec).unwrap();

    let (mesh, _) = normalize_mesh(&load_mesh(&d.join("lumpy.obj"), MeshFormat::Obj).unwrap()).unwrap();
    let det = MockDetector::new(MockSpec::load(&d.join("mock.toml")).unwrap().resolve(&mesh).unwrap()).unwrap();
    let service = MockService::new(mesh, det, vec![]);
    let settings = PipelineSettings { views: 8, image_size: 96, ..Default::default() };
    service.register_views(&settings).unwrap();
    let server = spawn(Arc::new(service), "127.0.0.1:0".parse().unwrap()).unwrap();

    let common = "mesh = \"lumpy.obj\"\nviews = 8\nimage_size = 96\n\
                  [prompts]\nsource = \"list\"\nprompts = [\
                  { id = \"a\", text = \"Point to the bump in this image.\" },\
                  { id = \"b\", text = \"Point to the dent in this image.\" }]\n";
    std::fs::write(
        d.join("record.toml"),
        format!("output_dir = \"rec\"\n{common}[detector]\nkind = \"record\"\ndir = \"store\"\n"),
    )
    .unwrap();
    std::fs::write(
        d.join("replay.toml"),
        format!("output_dir = \"rep\"\n{common}[detector]\nkind = \"replay\"\ndir = \"store\"\n"),
    )
    .unwrap();
    ok(&zerokey(&["detect", "--config", "record.toml", "--detector-url", &server.url()], d));
    server.stop();
    ok(&zerokey(&["detect", "--config", "replay.toml"], d));
    let rec = std::fs::read(d.join("rec/predictions.json")).unwrap();
    assert_eq!(rec, std::fs::read(d.join("rep/predictions.json")).unwrap());
    let parsed: serde_json::Value = serde_json::from_slice(&rec).unwrap();
    assert!(parsed["prompts"].as_array().unwrap().iter().any(|p| !p["keypoints"].as_array().unwrap().is_empty()));

    // a store missing an entry fails loudly instead of asking the network
    let first = std::fs::read_dir(d.join("store")).unwrap().next().unwrap().unwrap().path();
    std::fs::remove_file(first).unwrap();
    let out = zerokey(&["detect", "--config", "replay.toml"], d);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
