//! Shared fixtures: meshes on disk, cube-corner mocks and configs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use zerokey::gateway::{point_prompt, MockDetectorConfig, MockKeypoint, Prompt};
use zerokey::mesh::{normalize_mesh, primitives, TriangleMesh};

pub fn obj_text(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    for v in mesh.vertices() {
        writeln!(s, "v {} {} {}", v.x, v.y, v.z).unwrap();
    }
    for f in mesh.faces() {
        writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    s
}

pub fn write_obj(dir: &Path, name: &str, mesh: &TriangleMesh) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, obj_text(mesh)).unwrap();
    path
}

pub fn unit_cube(divisions: usize) -> TriangleMesh {
    normalize_mesh(&primitives::cube(divisions)).unwrap().0
}

pub fn corner_keypoints(mesh: &TriangleMesh) -> Vec<MockKeypoint> {
    (0..mesh.vertex_count())
        .filter(|&i| mesh.vertices()[i].coords.norm() > 0.999)
        .enumerate()
        .map(|(n, i)| MockKeypoint {
            id: format!("c{n}"),
            name: format!("corner {n}"),
            anchor: mesh.vertex_surface_point(i).unwrap(),
        })
        .collect()
}

pub fn corner_mock(mesh: &TriangleMesh, seed: u64) -> MockDetectorConfig {
    MockDetectorConfig::noiseless(corner_keypoints(mesh), seed)
}

pub fn prompts_for(mock: &MockDetectorConfig) -> Vec<Prompt> {
    mock.keypoints
        .iter()
        .map(|k| Prompt {
            id: k.id.clone(),
            text: point_prompt(&k.name),
        })
        .collect()
}

/// TOML mock spec with the cube's corners.
pub fn corner_spec_toml(sigma: f64, outlier: f64, miss: f64, seed: u64) -> String {
    let mut s = format!("sigma = {sigma:?}\noutlier = {outlier:?}\nmiss = {miss:?}\nseed = {seed}\n");
    let mut n = 0;
    for x in [-1.0, 1.0] {
        for y in [-1.0, 1.0] {
            for z in [-1.0, 1.0] {
                let r = 1.0 / 3f64.sqrt();
                writeln!(
                    s,
                    "\n[[keypoints]]\nid = \"c{n}\"\nname = \"corner {n}\"\nxyz = [{:?}, {:?}, {:?}]",
                    x * r,
                    y * r,
                    z * r
                )
                .unwrap();
                n += 1;
            }
        }
    }
    s
}

/// Writes a cube mesh, a mock spec and a run config into `dir`. Views and
/// image size default to 6 and 96 unless `extra` sets them.
pub fn cube_run(dir: &Path, spec: &str, extra: &str) -> PathBuf {
    write_obj(dir, "cube.obj", &primitives::cube(2));
    std::fs::write(dir.join("mock.toml"), spec).unwrap();
    let mut defaults = String::new();
    if !extra.contains("views") {
        defaults.push_str("views = 6\n");
    }
    if !extra.contains("image_size") {
        defaults.push_str("image_size = 96\n");
    }
    let cfg = format!(
        "mesh = \"cube.obj\"\noutput_dir = \"out\"\n{defaults}{extra}\n\
         [detector]\nkind = \"mock\"\nspec = \"mock.toml\"\n\n[prompts]\nsource = \"mock\"\n"
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg).unwrap();
    path
}

/// Ground truth at the mock's keypoints, ids in mock order.
pub fn gt_from_mock(mock: &MockDetectorConfig) -> zerokey::eval::GroundTruthSet {
    zerokey::eval::GroundTruthSet {
        model_id: "fixture".into(),
        category: String::new(),
        keypoints: mock
            .keypoints
            .iter()
            .enumerate()
            .map(|(i, k)| zerokey::eval::GtKeypoint {
                id: i as u32,
                anchor: k.anchor,
            })
            .collect(),
        warnings: Vec::new(),
    }
}
