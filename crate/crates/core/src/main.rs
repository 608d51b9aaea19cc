use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use scenestyle::geometry::{load_project, save_project, write_atomic, Camera};
use scenestyle::layout::{apply_op_mut, introduced_violations, CloneTarget, LayoutError, ManipulationOp, DEFAULT_PENETRATION_TOL};
use scenestyle::pipeline::{eval_renders, png_bytes, render_scene, run_pipeline, BackendSpec, PipelineConfig};
use scenestyle::service::{serve, SceneService, ServiceOptions};
use scenestyle::texturing::{default_reference_camera, ViewConfig};

#[derive(Parser)]
#[command(name = "scenestyle", version, about = "Stylized indoor scene synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline from a config file.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Project directory; overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reserved: needs an external image-to-mesh service.
        #[arg(long)]
        from_image: Option<PathBuf>,
    },
    /// Render a saved project from one camera.
    Render {
        #[arg(long)]
        scene: PathBuf,
        /// `px,py,pz,lx,ly,lz,fov_degrees`
        #[arg(long, allow_hyphen_values = true)]
        camera: String,
        #[arg(long, default_value_t = 512)]
        width: u32,
        #[arg(long, default_value_t = 512)]
        height: u32,
        /// Defaults to `<scene>/renders/render.png`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply one edit to a saved project.
    Edit {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_enum)]
        op: OpKind,
        #[arg(long)]
        object: String,
        /// move: `x,y,z` in meters; rotate: yaw in degrees.
        #[arg(long, allow_hyphen_values = true)]
        delta: Option<String>,
        /// scale factor.
        #[arg(long)]
        factor: Option<f64>,
        /// clone: box center `x,y,z`.
        #[arg(long, allow_hyphen_values = true)]
        to: Option<String>,
        /// clone: id of the new object.
        #[arg(long)]
        new_id: Option<String>,
        /// Keep edits that leave the room or overlap other boxes.
        #[arg(long)]
        force: bool,
    },
    /// Style-consistency proxy and optional external scores.
    Eval {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        scorer: Option<String>,
        /// Repeatable; defaults to the room overview camera.
        #[arg(long, allow_hyphen_values = true)]
        camera: Vec<String>,
    },
    /// Serve a project over HTTP.
    Serve {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, value_enum, default_value_t = BackendKind::Procedural)]
        backend: BackendKind,
        /// Built UI bundle to serve at `/`.
        #[arg(long)]
        ui: Option<PathBuf>,
        /// View resolution for re-texturing jobs.
        #[arg(long, default_value_t = 512)]
        view_resolution: u32,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OpKind {
    Move,
    Rotate,
    Scale,
    Remove,
    Clone,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Procedural,
    ToyDdpm,
    /// Uses `SYNTH_ENDPOINT` and `SYNTH_TOKEN`.
    Remote,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl std::fmt::Display) -> Self {
        Failure { code: 2, message: message.to_string() }
    }
    fn other(message: impl std::fmt::Display) -> Self {
        Failure { code: 1, message: message.to_string() }
    }
}

fn triple(s: &str, what: &str) -> Result<[f64; 3], Failure> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::config(format!("{what} {s:?}: {e}")))?;
    <[f64; 3]>::try_from(v).map_err(|_| Failure::config(format!("{what} needs three comma-separated numbers")))
}

fn generate(config: &Path, out: Option<PathBuf>, from_image: Option<PathBuf>) -> Result<(), Failure> {
    if from_image.is_some() {
        return Err(Failure::config("--from-image needs an external reconstruction service and is not supported"));
    }
    let mut cfg = PipelineConfig::load(config).map_err(|e| Failure { code: e.exit_code() as u8, message: e.to_string() })?;
    if let Some(out) = out {
        let abs = std::path::absolute(&out).map_err(Failure::config)?;
        cfg.output_dir = abs.to_string_lossy().into_owned();
    }
    let base = config.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let outcome = run_pipeline(&cfg, base).map_err(|e| Failure { code: e.exit_code() as u8, message: e.to_string() })?;
    println!("project: {}", outcome.project_dir.display());
    for r in &outcome.renders {
        println!("render: {}", r.display());
    }
    Ok(())
}

fn render(scene: &Path, camera: &str, width: u32, height: u32, out: Option<PathBuf>) -> Result<(), Failure> {
    let camera = Camera::parse_spec(camera, width, height).map_err(Failure::config)?;
    let project = load_project(scene).map_err(Failure::config)?;
    let img = render_scene(&project, &camera).map_err(Failure::config)?;
    let out = out.unwrap_or_else(|| scene.join("renders").join("render.png"));
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(Failure::other)?;
    }
    write_atomic(&out, &png_bytes(&img)).map_err(Failure::other)?;
    println!("{}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn edit(
    scene_dir: &Path,
    kind: OpKind,
    object: String,
    delta: Option<String>,
    factor: Option<f64>,
    to: Option<String>,
    new_id: Option<String>,
    force: bool,
) -> Result<(), Failure> {
    let need = |v: Option<String>, flag: &str| v.ok_or_else(|| Failure::config(format!("this op needs --{flag}")));
    let op = match kind {
        OpKind::Move => ManipulationOp::Move { delta: triple(&need(delta, "delta")?, "--delta")?, object },
        OpKind::Rotate => {
            let d = need(delta, "delta")?;
            let deg: f64 = d.trim().parse().map_err(|e| Failure::config(format!("--delta {d:?}: {e}")))?;
            ManipulationOp::Rotate { object, delta_yaw: deg.to_radians() }
        }
        OpKind::Scale => ManipulationOp::Scale {
            object,
            factor: factor.ok_or_else(|| Failure::config("this op needs --factor"))?,
        },
        OpKind::Remove => ManipulationOp::Remove { object },
        OpKind::Clone => ManipulationOp::Clone {
            object,
            destination: CloneTarget { center: triple(&need(to, "to")?, "--to")?, half_extents: None, yaw: None },
            new_id,
        },
    };
    let scene = load_project(scene_dir).map_err(Failure::config)?;
    let mut next = scene.clone();
    let target = apply_op_mut(&mut next, &op).map_err(|e| match e {
        LayoutError::UnknownObject(_) | LayoutError::InvalidOp(_) => Failure::config(e),
        other => Failure::other(other),
    })?;
    if !force && !matches!(op, ManipulationOp::Remove { .. }) {
        let fresh = introduced_violations(&scene.project, &next.project, &target, DEFAULT_PENETRATION_TOL);
        if !fresh.is_empty() {
            let list: Vec<String> = fresh.iter().map(|v| v.to_string()).collect();
            return Err(Failure { code: 4, message: format!("edit rejected: {}", list.join("; ")) });
        }
    }
    save_project(&next, scene_dir).map_err(Failure::other)?;
    println!("{target}");
    Ok(())
}

fn eval(scene: &Path, scorer: Option<String>, cameras: &[String]) -> Result<(), Failure> {
    let project = load_project(scene).map_err(Failure::config)?;
    let cams: Vec<Camera> = if cameras.is_empty() {
        vec![default_reference_camera(&project.project.room, 512, 512)]
    } else {
        cameras.iter().map(|c| Camera::parse_spec(c, 512, 512).map_err(Failure::config)).collect::<Result<_, _>>()?
    };
    let report = eval_renders(&project, &cams, scorer.as_deref()).map_err(Failure::config)?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(Failure::other)?);
    Ok(())
}

fn backend(kind: BackendKind) -> Result<Arc<dyn scenestyle::synth::TextureSynthesizer>, Failure> {
    let spec = match kind {
        BackendKind::Procedural => BackendSpec::Procedural,
        BackendKind::ToyDdpm => BackendSpec::ToyDdpm { steps: 50, target: 0.0 },
        BackendKind::Remote => BackendSpec::Remote { endpoint: None, timeout_ms: 120_000, max_in_flight: 2 },
    };
    spec.build().map_err(Failure::config)
}

fn serve_cmd(scene: &Path, host: &str, port: u16, kind: BackendKind, ui: Option<PathBuf>, res: u32) -> Result<(), Failure> {
    let options = ServiceOptions {
        views: ViewConfig { resolution: res, ..Default::default() },
        static_dir: ui,
        ..Default::default()
    };
    let service = SceneService::open(scene, backend(kind)?, options).map_err(Failure::config)?;
    let runtime = tokio::runtime::Runtime::new().map_err(Failure::other)?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port)).await.map_err(Failure::other)?;
        println!("listening on http://{}", listener.local_addr().map_err(Failure::other)?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        serve(service, listener, shutdown).await.map_err(Failure::other)
    })
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { config, out, from_image } => generate(&config, out, from_image),
        Command::Render { scene, camera, width, height, out } => render(&scene, &camera, width, height, out),
        Command::Edit { scene, op, object, delta, factor, to, new_id, force } => {
            edit(&scene, op, object, delta, factor, to, new_id, force)
        }
        Command::Eval { scene, scorer, camera } => eval(&scene, scorer, &camera),
        Command::Serve { scene, port, host, backend, ui, view_resolution } => {
            serve_cmd(&scene, &host, port, backend, ui, view_resolution)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
