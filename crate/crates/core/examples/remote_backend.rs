//! Talks to a synthesizer over HTTP. A stand-in server on a local port
//! decodes the request, paints it with the procedural backend and answers
//! with the image; pass a URL to use a real server instead.
//!
//! `cargo run --example remote_backend -- [endpoint]`

use axum::routing::post;
use axum::{Json, Router};
use image::{Rgba, RgbaImage};

use scenestyle::diffusion::BlendMask;
use scenestyle::raster::DepthImage;
use scenestyle::synth::wire::{decode_request, png_b64, SynthesizeBody, SynthesizeReply};
use scenestyle::synth::{synthesize, ProceduralBackend, RemoteBackend, RemoteConfig, SynthesisRequest, TextureSynthesizer};

async fn handle(Json(body): Json<SynthesizeBody>) -> Result<Json<SynthesizeReply>, (axum::http::StatusCode, String)> {
    let bad = |e: String| (axum::http::StatusCode::BAD_REQUEST, e);
    let req = decode_request(&body).map_err(|e| bad(e.to_string()))?;
    let img = ProceduralBackend::default().generate(&req).map_err(|e| bad(e.to_string()))?;
    Ok(Json(SynthesizeReply { image_png_b64: png_b64(&img) }))
}

fn local_server() -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().expect("runtime");
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.expect("bind");
            tx.send(listener.local_addr().expect("addr")).expect("send addr");
            axum::serve(listener, Router::new().route("/synthesize", post(handle))).await.expect("serve");
        });
    });
    format!("http://{}", rx.recv().expect("server address"))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let endpoint = std::env::args().nth(1).unwrap_or_else(local_server);
    let backend = RemoteBackend::new(RemoteConfig::new(endpoint.clone()))?;

    let (w, h) = (64u32, 48u32);
    let depth: Vec<f32> = (0..w * h).map(|i| 1.0 + (i % w) as f32 * 0.05).collect();
    let request = SynthesisRequest {
        prompt: "a bedroom in Muji style".into(),
        width: w,
        height: h,
        depth: DepthImage::encode(&depth, w, h, 0.5, 10.0),
        partial_image: RgbaImage::from_pixel(w, h, Rgba([30, 60, 90, 255])),
        // generate the right half, keep the left
        mask: BlendMask::new((0..w * h).map(|i| u8::from(i % w >= w / 2)).collect(), vec![h as usize, w as usize])?,
        reference_images: Vec::new(),
        seed: 5,
    };
    let response = synthesize(&backend, &request)?;
    let kept = response.image.get_pixel(0, 0);
    let made = response.image.get_pixel(w - 1, h - 1);
    println!("{endpoint}: {}x{} in {} ms", w, h, response.elapsed_ms);
    println!("kept pixel {:?}, generated pixel {:?}", kept.0, made.0);
    Ok(())
}
