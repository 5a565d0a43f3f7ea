use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use zerokey::cluster::{Keep, Method};
use zerokey::pipeline::{PipelineSettings, PromptMode};

#[derive(Parser, Debug)]
#[command(name = "zerokey", version, about = "Multi-view 3D keypoint detection from a text-prompted 2D point detector")]
pub struct Cli {
    /// Log filter when RUST_LOG is unset.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the pipeline from a TOML config.
    Detect(DetectArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Run the pipeline once per value of one axis and score each run.
    Ablate(AblateArgs),
    /// Sweep mock detector noise and measure recovery error.
    Simulate(SimulateArgs),
    /// Name marked surface points, then find them again from the name.
    Roundtrip(RoundtripArgs),
    /// Render views and write the color, depth and face buffers.
    RenderDebug(RenderDebugArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MethodArg {
    Mean,
    Hdbscan,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Mean => Method::Mean,
            MethodArg::Hdbscan => Method::Hdbscan,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KeepArg {
    Best,
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PromptModeArg {
    PerPoint,
    Global,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FrameArg {
    /// Coordinates already in the normalized frame.
    Normalized,
    /// Coordinates in the mesh file's own frame.
    Original,
}

/// Overrides for the run settings; unset flags keep the config's values.
#[derive(Args, Debug, Default, Clone)]
pub struct SettingsArgs {
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub image_size: Option<u32>,
    #[arg(long)]
    pub distance: Option<f64>,
    #[arg(long)]
    pub fov_deg: Option<f64>,
    /// Back-projection window (odd).
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub min_cluster_size: Option<usize>,
    #[arg(long, value_enum)]
    pub keep: Option<KeepArg>,
    #[arg(long, value_enum)]
    pub prompt_mode: Option<PromptModeArg>,
}

impl SettingsArgs {
    pub fn apply(&self, s: &mut PipelineSettings) {
        if let Some(v) = self.views {
            s.views = v;
        }
        if let Some(v) = self.image_size {
            s.image_size = v;
        }
        if let Some(v) = self.distance {
            s.distance = v;
        }
        if let Some(v) = self.fov_deg {
            s.fov_deg = v;
        }
        if let Some(v) = self.patch {
            s.patch = v;
        }
        if let Some(v) = self.max_in_flight {
            s.max_in_flight = v;
        }
        if let Some(m) = self.method {
            s.aggregation.method = m.into();
        }
        if let Some(k) = self.k {
            s.aggregation.k = k;
        }
        if let Some(m) = self.min_cluster_size {
            s.aggregation.min_cluster_size = Some(m);
        }
        if let Some(k) = self.keep {
            s.aggregation.keep = match k {
                KeepArg::Best => Keep::Best,
                KeepArg::All => Keep::All,
            };
        }
        if let Some(p) = self.prompt_mode {
            s.prompt_mode = match p {
                PromptModeArg::PerPoint => PromptMode::PerPoint,
                PromptModeArg::Global => PromptMode::Global,
            };
        }
    }
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    /// Run config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub settings: SettingsArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Detector base URL for remote and record backends; ZEROKEY_DETECTOR_URL
    /// is used when neither this nor the config sets one.
    #[arg(long)]
    pub detector_url: Option<String>,
    #[arg(long)]
    pub overlays: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Mesh of each model, paired in order with --predictions.
    #[arg(long = "mesh", required = true)]
    pub meshes: Vec<PathBuf>,
    #[arg(long = "predictions", required = true)]
    pub predictions: Vec<PathBuf>,
    /// Ground truth JSON holding every evaluated model.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum, default_value = "original")]
    pub gt_frame: FrameArg,
    /// Comma-separated geodesic thresholds; defaults to 0.001 and 0.01 to 0.10.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Vec<f64>,
    #[arg(long)]
    pub exclude_degraded: bool,
    /// CSV of IoU per threshold.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Full report as JSON, with per-model counts.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub settings: SettingsArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub detector_url: Option<String>,
    /// views, aggregation, prompt-mode or patch.
    #[arg(long)]
    pub axis: String,
    /// Comma-separated values, e.g. 6,26,46 or mean,hdbscan.
    #[arg(long)]
    pub values: String,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum, default_value = "original")]
    pub gt_frame: FrameArg,
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    /// Mock detector spec (TOML, or JSON by extension).
    #[arg(long)]
    pub mock_spec: PathBuf,
    #[command(flatten)]
    pub settings: SettingsArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated noise levels in pixels.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,4")]
    pub sigmas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.2")]
    pub outliers: Vec<f64>,
    /// Comma-separated view counts; defaults to the settings' count.
    #[arg(long = "sweep-views", value_delimiter = ',')]
    pub sweep_views: Vec<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RoundtripArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub settings: SettingsArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub detector_url: Option<String>,
    /// Surface points to test as x,y,z in the normalized frame; repeatable.
    /// Without it the mock detector's keypoints are used.
    #[arg(long = "xyz", value_parser = parse_xyz)]
    pub points: Vec<[f64; 3]>,
    /// Namer endpoint base URL.
    #[arg(long, conflicts_with = "label")]
    pub namer_url: Option<String>,
    /// Fixed answer for every marker description.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub category: Option<String>,
    #[arg(long, default_value_t = 4)]
    pub namer_views: usize,
    #[arg(long, default_value_t = 4.0)]
    pub marker_radius: f64,
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Vec<f64>,
    /// CSV with one row per point.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RenderDebugArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[command(flatten)]
    pub settings: SettingsArgs,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_xyz(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|p| format!("expected x,y,z, got {} values", p.len()))
}
