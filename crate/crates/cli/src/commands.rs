use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::args::{AblateArgs, DetectArgs, EvalArgs, FrameArg, RenderDebugArgs, RoundtripArgs, SimulateArgs};
use zerokey::eval::{
    describability_roundtrip, evaluate_models, load_ground_truth, saliency_curve, EvalError, EvalOptions, GtFrame,
    ModelInput, RoundtripConfig, TABLE_THRESHOLDS,
};
use zerokey::gateway::{MockNamer, MockSpec, NamerBackend, RemoteConfig, RemoteNamer};
use zerokey::mesh::{load_mesh, normalize_mesh, MeshFormat, Normalization, TriangleMesh};
use zerokey::pipeline::{
    load_predictions, render_views, run_ablation, run_pipeline, simulate as run_simulation, write_simulation_csv,
    AblationAxis, DetectorSpec, PipelineSettings, RunConfig, SimulationSweep,
};
use zerokey::render::{encode_depth_raw, encode_face_raw, ShadeStyle};

/// Bad command-line input that clap cannot catch; exits with 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load_normalized(path: &Path) -> Result<(TriangleMesh, Normalization)> {
    let format = MeshFormat::from_path(path).ok_or_else(|| usage(format!("{}: mesh must be .obj or .ply", path.display())))?;
    let raw = load_mesh(path, format).with_context(|| format!("loading {}", path.display()))?;
    Ok(normalize_mesh(&raw)?)
}

fn thresholds(given: &[f64]) -> Vec<f64> {
    if given.is_empty() {
        TABLE_THRESHOLDS.to_vec()
    } else {
        given.to_vec()
    }
}

fn frame(arg: FrameArg, norm: Normalization) -> GtFrame {
    match arg {
        FrameArg::Normalized => GtFrame::Normalized,
        FrameArg::Original => GtFrame::Original(norm),
    }
}

/// Writes to `path`, or to stdout when no path is given.
fn emit(path: Option<&PathBuf>, body: &[u8]) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, body).with_context(|| format!("writing {}", p.display()))
        }
        None => Ok(std::io::stdout().write_all(body)?),
    }
}

fn set_detector_url(cfg: &mut RunConfig, url: Option<&str>) {
    let Some(url) = url else { return };
    match &mut cfg.detector {
        DetectorSpec::Remote { remote } | DetectorSpec::Record { remote, .. } => remote.url = url.to_string(),
        _ => log::warn!("--detector-url ignored: the config does not use a remote detector"),
    }
}

fn load_config(path: &Path, settings: &crate::args::SettingsArgs, seed: Option<u64>, url: Option<&str>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    settings.apply(&mut cfg.settings);
    if seed.is_some() {
        cfg.seed = seed;
    }
    set_detector_url(&mut cfg, url);
    Ok(cfg)
}

pub fn detect(a: DetectArgs) -> Result<()> {
    let mut cfg = load_config(&a.config, &a.settings, a.seed, a.detector_url.as_deref())?;
    if let Some(dir) = a.output_dir {
        cfg.output_dir = dir;
    }
    cfg.overlays |= a.overlays;
    let (predictions, manifest) = run_pipeline(&cfg)?;
    let c = &manifest.counts;
    println!(
        "{}: {} prompts, {} cells ({} with detections, {} empty, {} skipped)",
        manifest.model_id,
        predictions.len(),
        c.cells,
        c.detections,
        c.empty,
        c.skipped
    );
    for p in &predictions {
        match p.keypoints.first() {
            Some(k) => {
                let x = k.anchor.position;
                let tag = if p.degraded { " degraded" } else { "" };
                println!(
                    "  {:<24} {:>9.5} {:>9.5} {:>9.5}  support {}{tag}",
                    p.prompt_id, x.x, x.y, x.z, k.support
                );
            }
            None => println!("  {:<24} no keypoint", p.prompt_id),
        }
    }
    println!("wrote {}", cfg.output_dir.join("predictions.json").display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    if a.meshes.len() != a.predictions.len() {
        return Err(usage(format!(
            "{} meshes but {} prediction files; pass them in pairs",
            a.meshes.len(),
            a.predictions.len()
        )));
    }
    let mut loaded = Vec::new();
    for (mesh_path, pred_path) in a.meshes.iter().zip(&a.predictions) {
        let (mesh, norm) = load_normalized(mesh_path)?;
        let (file, preds) = load_predictions(pred_path, &mesh)?;
        let gt = load_ground_truth(&a.gt, &mesh, Some(&file.model_id), frame(a.gt_frame, norm))?;
        for w in &gt.warnings {
            eprintln!("warning: {}: {w}", gt.model_id);
        }
        loaded.push((mesh, preds, gt));
    }
    let inputs: Vec<ModelInput> = loaded
        .iter()
        .map(|(mesh, predictions, gt)| ModelInput { mesh, predictions, gt })
        .collect();
    let opts = EvalOptions {
        exclude_degraded: a.exclude_degraded,
    };
    let report = evaluate_models(&inputs, &thresholds(&a.thresholds), &opts)?;
    println!("models {}  predicted {}  ground truth {}", report.models.len(), report.n_pred, report.n_gt);
    for (i, t) in report.thresholds.iter().enumerate() {
        println!("  tau {t:<6} IoU {:>7.4}  tp {}", report.iou[i], report.tp[i]);
    }
    if let Some(out) = &a.out {
        emit(Some(out), report.to_csv_string().as_bytes())?;
    }
    if let Some(json) = &a.json {
        let mut body = serde_json::to_string_pretty(&report)?;
        body.push('\n');
        emit(Some(json), body.as_bytes())?;
    }
    Ok(())
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let cfg = load_config(&a.config, &a.settings, a.seed, a.detector_url.as_deref())?;
    cfg.validate()?;
    let axis = AblationAxis::parse(&a.axis, &a.values)?;
    let (mesh, norm) = cfg.load_mesh()?;
    let detector = cfg.build_detector(&mesh)?;
    let prompts = cfg.resolve_prompts(&mesh)?;
    let gt = load_ground_truth(&a.gt, &mesh, Some(&cfg.model_id()), frame(a.gt_frame, norm))?;
    let result = run_ablation(&mesh, detector.as_ref(), &prompts, &cfg.settings, &axis, &gt, &thresholds(&a.thresholds))?;
    for v in &result.variants {
        let best = v.report.iou.last().copied().unwrap_or(0.0);
        eprintln!("{:<24} IoU at largest threshold {best:.4}", v.label);
    }
    emit(a.out.as_ref(), result.to_csv_string().as_bytes())
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let (mesh, _) = load_normalized(&a.mesh)?;
    let mut mock = MockSpec::load(&a.mock_spec)?.resolve(&mesh)?;
    if let Some(seed) = a.seed {
        mock.seed = seed;
    }
    let mut settings = PipelineSettings::default();
    a.settings.apply(&mut settings);
    settings.validate()?;
    let sweep = SimulationSweep {
        sigmas: a.sigmas,
        outlier_rates: a.outliers,
        views: if a.sweep_views.is_empty() {
            vec![settings.views]
        } else {
            a.sweep_views
        },
    };
    let cells = run_simulation(&mesh, &mock, &settings, &sweep)?;
    let mut buf = Vec::new();
    write_simulation_csv(&cells, &mut buf)?;
    emit(a.out.as_ref(), &buf)
}

struct Target {
    name: String,
    point: zerokey::mesh::SurfacePoint,
    /// The mock's own name for the point, used when no namer is given.
    oracle: Option<String>,
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

pub fn roundtrip(a: RoundtripArgs) -> Result<()> {
    let cfg = load_config(&a.config, &a.settings, a.seed, a.detector_url.as_deref())?;
    cfg.validate()?;
    let (mesh, _) = cfg.load_mesh()?;
    let detector = cfg.build_detector(&mesh)?;
    let targets: Vec<Target> = if a.points.is_empty() {
        let mock = cfg
            .mock_config(&mesh)?
            .ok_or_else(|| usage("give --xyz points or use the mock detector, whose keypoints are the default"))?;
        mock.keypoints
            .into_iter()
            .map(|k| Target {
                name: k.id,
                point: k.anchor,
                oracle: Some(k.name),
            })
            .collect()
    } else {
        a.points
            .iter()
            .enumerate()
            .map(|(i, xyz)| {
                let point = mesh.nearest_surface_point(&(*xyz).into()).expect("mesh is not empty");
                Target {
                    name: format!("p{i}"),
                    point,
                    oracle: None,
                }
            })
            .collect()
    };
    let remote = match &a.namer_url {
        Some(url) => Some(RemoteNamer::new(&RemoteConfig {
            url: url.clone(),
            path: "/describe".into(),
            ..Default::default()
        })?),
        None => None,
    };
    let config = RoundtripConfig {
        settings: cfg.settings.clone(),
        marker_radius_px: a.marker_radius,
        namer_views: a.namer_views,
        category: a.category.clone(),
    };

    let mut csv = String::from("point,x,y,z,label,error,named_views\n");
    let mut errors = Vec::new();
    for t in &targets {
        let fixed;
        let namer: &dyn NamerBackend = match (&remote, &a.label, &t.oracle) {
            (Some(r), _, _) => r,
            (None, Some(label), _) => {
                fixed = MockNamer::fixed(label);
                &fixed
            }
            (None, None, Some(name)) => {
                fixed = MockNamer::fixed(name);
                &fixed
            }
            (None, None, None) => return Err(usage("--xyz points need --namer-url or --label")),
        };
        let p = t.point.position;
        match describability_roundtrip(&mesh, &t.point, namer, detector.as_ref(), &config) {
            Ok(r) => {
                errors.push(r.error);
                let views: Vec<String> = r.named_in.iter().map(usize::to_string).collect();
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    quote(&t.name),
                    p.x,
                    p.y,
                    p.z,
                    quote(&r.label),
                    r.error,
                    quote(&views.join(" "))
                ));
            }
            Err(e @ (EvalError::MarkerInvisible | EvalError::NoLabel)) => {
                log::warn!("{}: {e}", t.name);
                csv.push_str(&format!("{},{},{},{},,,\n", quote(&t.name), p.x, p.y, p.z));
            }
            Err(e) => return Err(e.into()),
        }
    }
    for (t, frac) in saliency_curve(&errors, &thresholds(&a.thresholds)) {
        eprintln!("  below {t:<6} {:>6.1}%", frac * 100.0);
    }
    emit(a.out.as_ref(), csv.as_bytes())
}

pub fn render_debug(a: RenderDebugArgs) -> Result<()> {
    let (mesh, _) = load_normalized(&a.mesh)?;
    let mut settings = PipelineSettings::default();
    a.settings.apply(&mut settings);
    settings.validate()?;
    let cameras = settings.cameras()?;
    std::fs::create_dir_all(&a.out)?;
    let views = render_views(&mesh, &cameras, &ShadeStyle::default());
    for v in &views {
        let stem = format!("view_{:03}", v.view_id);
        std::fs::write(a.out.join(format!("{stem}.png")), v.png_bytes())?;
        std::fs::write(a.out.join(format!("{stem}.depth.zkb")), encode_depth_raw(v))?;
        std::fs::write(a.out.join(format!("{stem}.face.zkb")), encode_face_raw(v))?;
    }
    let params: Vec<_> = cameras.iter().map(|c| *c.params()).collect();
    let mut body = serde_json::to_string_pretty(&params)?;
    body.push('\n');
    std::fs::write(a.out.join("cameras.json"), body)?;
    println!("wrote {} views to {}", views.len(), a.out.display());
    Ok(())
}
