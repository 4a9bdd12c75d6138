use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tableau_core::compositor::{render_live, FeedFrames};
use tableau_core::raster::encode_png_rgba;
use tableau_core::scene::{load_scene_file, FeedId};
use tableau_core::segmentation::MattingMethod;
use tableau_server::backends::Backends;
use tableau_server::config::{Config, ENV_TOKEN};
use tableau_server::frames::{decode_frame, matte_offline};
use tableau_server::server;
use tableau_server::service::SessionManager;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "tableau", version, about = "Blended video-meeting environment server")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the HTTP/WebSocket service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use deterministic in-process backends.
        #[arg(long)]
        mock_backends: bool,
        /// Also serve mock WebUI, LLM, segmentation and matting endpoints under /mock.
        #[arg(long)]
        mock_services: bool,
        /// Autosave sessions here and reopen them on start.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Ask a running server to export a session bundle.
    Export {
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        server: String,
        #[arg(long)]
        session: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = ENV_TOKEN)]
        token: Option<String>,
    },
    /// Ask a running server to import a session bundle.
    Import {
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        server: String,
        #[arg(long)]
        path: PathBuf,
        #[arg(long, env = ENV_TOKEN)]
        token: Option<String>,
    },
    /// Render a scene file to PNG without a server.
    RenderOnce {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Frame for a feed, as FEED_ID=PATH. Alpha marks the person;
        /// frames without alpha are drawn opaque.
        #[arg(long = "frame", value_parser = parse_frame)]
        frames: Vec<(String, PathBuf)>,
    },
}

fn parse_frame(s: &str) -> Result<(String, PathBuf), String> {
    let (id, path) = s.split_once('=').ok_or("expected FEED_ID=PATH")?;
    Ok((id.to_owned(), PathBuf::from(path)))
}

fn post(server: &str, path: &str, token: Option<&str>, body: serde_json::Value) -> Result<serde_json::Value, String> {
    let url = format!("{}/v1{path}", server.trim_end_matches('/'));
    let mut req = ureq::post(&url).config().http_status_as_error(false).build();
    if let Some(t) = token {
        req = req.header("Authorization", &format!("Bearer {t}"));
    }
    let mut resp = req.send_json(body).map_err(|e| format!("{url}: {e}"))?;
    let status = resp.status();
    let value: serde_json::Value = resp.body_mut().read_json().map_err(|e| format!("{url}: {e}"))?;
    if !status.is_success() {
        return Err(format!("{url}: {status}: {value}"));
    }
    Ok(value)
}

fn render_once(scene: &PathBuf, out: &PathBuf, frames: &[(String, PathBuf)]) -> Result<(), String> {
    let mut scene = load_scene_file(scene).map_err(|e| format!("{}: {e}", scene.display()))?;
    let mut matted = FeedFrames::new();
    for (id, path) in frames {
        let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let img = decode_frame(&bytes).map_err(|e| format!("{}: {e}", path.display()))?;
        let frame = matte_offline(&img, &MattingMethod::AlphaChannel).map_err(|e| e.to_string())?;
        matted.insert(FeedId::from(id.as_str()), frame);
    }
    scene.feeds.retain(|f| matted.contains_key(&f.feed_id));
    let img = render_live(&scene, &matted).map_err(|e| e.to_string())?;
    std::fs::write(out, encode_png_rgba(&img)).map_err(|e| format!("{}: {e}", out.display()))
}

async fn serve(mut config: Config, mock_services: bool) -> Result<(), String> {
    config.validate().map_err(|e| e.to_string())?;
    let backends = Backends::from_config(&config);
    let manager = SessionManager::new(config.clone(), backends);
    for (dir, result) in manager.recover() {
        match result {
            Ok(id) => tracing::info!(%id, dir = %dir.display(), "recovered session"),
            Err(err) => tracing::error!(%err, dir = %dir.display(), "could not recover session"),
        }
    }
    let listener = tokio::net::TcpListener::bind(&config.bind).await.map_err(|e| format!("{}: {e}", config.bind))?;
    tracing::info!(addr = %config.bind, mock_backends = config.mock_backends, "listening");
    config.token.take();
    let app = server::app(manager, mock_services);
    server::serve(listener, app, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
    .map_err(|e| e.to_string())
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Cmd::Serve { bind, config, mock_backends, mock_services, data_dir } => {
            let mut cfg = match &config {
                Some(path) => Config::load(path).map_err(|e| e.to_string())?,
                None => Config::default(),
            };
            cfg.apply_env();
            if let Some(b) = bind {
                cfg.bind = b;
            }
            if mock_backends {
                cfg.mock_backends = true;
            }
            if data_dir.is_some() {
                cfg.data_dir = data_dir;
            }
            let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            rt.block_on(serve(cfg, mock_services))
        }
        Cmd::Export { server, session, out, token } => {
            let out = std::path::absolute(&out).map_err(|e| e.to_string())?;
            let v = post(&server, &format!("/sessions/{session}/export"), token.as_deref(), serde_json::json!({ "path": out }))?;
            println!("{}", serde_json::to_string_pretty(&v).expect("json values serialize"));
            Ok(())
        }
        Cmd::Import { server, path, token } => {
            let path = std::path::absolute(&path).map_err(|e| e.to_string())?;
            let v = post(&server, "/sessions/import", token.as_deref(), serde_json::json!({ "path": path }))?;
            println!("{}", v["session_id"].as_str().unwrap_or_default());
            Ok(())
        }
        Cmd::RenderOnce { scene, out, frames } => render_once(&scene, &out, &frames),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_env_filter(EnvFilter::from_default_env()).with_writer(std::io::stderr).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
