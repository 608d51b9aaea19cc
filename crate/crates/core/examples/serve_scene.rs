//! Generates the bedroom fixture, serves it on a local port and walks
//! through the HTTP API: read, edit, render, re-texture.
//!
//! `cargo run --release --example serve_scene -- [--keep-running]`

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use scenestyle::pipeline::{run_pipeline, PipelineConfig};
use scenestyle::service::{serve, SceneService, ServiceOptions};
use scenestyle::synth::ProceduralBackend;
use scenestyle::texturing::ViewConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let keep_running = std::env::args().any(|a| a == "--keep-running");
    let dir = std::env::temp_dir().join("serve_scene");
    let base = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/bedroom");
    let mut config = PipelineConfig::load(base.join("config.json"))?;
    config.output_dir = dir.to_string_lossy().into_owned();
    run_pipeline(&config, &base)?;

    let options = ServiceOptions { views: ViewConfig { resolution: 256, ..Default::default() }, ..Default::default() };
    let service = SceneService::open(&dir, Arc::new(ProceduralBackend::default()), options)?;
    let rt = tokio::runtime::Runtime::new()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
    let url = format!("http://{}", listener.local_addr()?);
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = rt.spawn(serve(service, listener, async {
        let _ = stopped.await;
    }));
    println!("serving {} at {url}", dir.display());
    if keep_running {
        rt.block_on(tokio::signal::ctrl_c())?;
        return Ok(());
    }

    let http = reqwest::blocking::Client::new();
    let scene = http.get(format!("{url}/scene")).send()?;
    println!("GET /scene -> version {:?}", scene.headers().get("x-scene-version"));
    let op = http
        .post(format!("{url}/scene/ops"))
        .json(&serde_json::json!({"op": "move", "object": "pouf_1", "delta": [0.5, 0.0, 0.0]}))
        .send()?;
    println!("POST /scene/ops -> {} {}", op.status(), op.text()?);
    let png = http.get(format!("{url}/render?cam=2,3.2,7.5,2,0.4,2.2,55&w=320&h=240")).send()?.bytes()?;
    println!("GET /render -> {} bytes of PNG", png.len());

    let job: serde_json::Value = http
        .post(format!("{url}/scene/retexture"))
        .json(&serde_json::json!({"prompt": "a bedroom in Chinese style", "objects": ["pouf_1"]}))
        .send()?
        .json()?;
    let id = job["job_id"].as_str().unwrap_or_default().to_string();
    loop {
        let job: serde_json::Value = http.get(format!("{url}/jobs/{id}")).send()?.json()?;
        println!("GET /jobs/{id} -> {} {}/{}", job["state"], job["progress"]["completed"], job["progress"]["total"]);
        if job["state"] == "DONE" || job["state"] == "FAILED" {
            break;
        }
        std::thread::sleep(Duration::from_millis(200));
    }

    let _ = stop.send(());
    rt.block_on(server)??;
    Ok(())
}
