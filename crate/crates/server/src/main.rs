use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::Parser;

use zerokey::gateway::{MockDetector, MockSpec};
use zerokey::mesh::{load_mesh, normalize_mesh, MeshFormat};
use zerokey::pipeline::PipelineSettings;
use zerokey_server::{router, MockService};

/// Serves the mock detector over HTTP for the views a pipeline run with the
/// same settings will render.
#[derive(Parser, Debug)]
#[command(name = "zerokey-mock-server", version)]
struct Args {
    #[arg(long)]
    mesh: PathBuf,
    /// Mock spec (TOML, or JSON by extension).
    #[arg(long)]
    mock_spec: PathBuf,
    /// View counts to pre-render; repeat for several.
    #[arg(long = "views", default_values_t = [26usize])]
    views: Vec<usize>,
    #[arg(long, default_value_t = 512)]
    image_size: u32,
    #[arg(long, default_value_t = 2.5)]
    distance: f64,
    #[arg(long, default_value_t = 40.0)]
    fov_deg: f64,
    /// Answer for marker descriptions; repeat to rotate through several.
    #[arg(long = "label")]
    labels: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let format = MeshFormat::from_path(&args.mesh).context("mesh must be .obj or .ply")?;
    let (mesh, _) = normalize_mesh(&load_mesh(&args.mesh, format)?)?;
    let mut cfg = MockSpec::load(&args.mock_spec)?.resolve(&mesh)?;
    cfg.seed = args.seed;
    let service = MockService::new(mesh, MockDetector::new(cfg)?, args.labels);
    for &views in &args.views {
        let settings = PipelineSettings {
            views,
            image_size: args.image_size,
            distance: args.distance,
            fov_deg: args.fov_deg,
            ..Default::default()
        };
        service.register_views(&settings)?;
    }
    log::info!("{} views registered, listening on {}", service.known_views(), args.bind);
    let listener = tokio::net::TcpListener::bind(args.bind).await?;
    axum::serve(listener, router(Arc::new(service)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
