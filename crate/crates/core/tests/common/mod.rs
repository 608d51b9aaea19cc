#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use image::{Rgba, RgbaImage};
use sha2::{Digest, Sha256};

use scenestyle::geometry::{Camera, Vec3};
use scenestyle::pipeline::PipelineConfig;
use scenestyle::service::{serve, SceneService};
use scenestyle::synth::wire::{decode_request, png_b64, SynthesizeBody, SynthesizeReply};
use scenestyle::synth::{ProceduralBackend, TextureSynthesizer};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Bedroom config writing its project to `out`.
pub fn bedroom_config(out: &Path) -> (PipelineConfig, PathBuf) {
    let base = fixtures().join("bedroom");
    let mut cfg = PipelineConfig::load(base.join("config.json")).expect("fixture config");
    cfg.output_dir = out.to_string_lossy().into_owned();
    (cfg, base)
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
    let mut entries: Vec<_> = std::fs::read_dir(dir).expect("read dir").map(|e| e.expect("entry").path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(root, &p, out);
        } else {
            out.push(p.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
}

/// SHA-256 over every relative path and file content, in sorted order.
pub fn dir_hash(dir: &Path) -> String {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files);
    let mut h = Sha256::new();
    for rel in files {
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(std::fs::read(dir.join(&rel)).expect("read file"));
    }
    hex::encode(h.finalize())
}

/// Ray through the center of pixel (px, py), built from the camera
/// definition alone: x right, y down in the image.
pub fn oracle_ray(cam: &Camera, px: u32, py: u32) -> Vec3 {
    let f = (cam.look_at - cam.position).normalize();
    let r = f.cross(&cam.up).normalize();
    let u = r.cross(&f);
    let half_h = (cam.vertical_fov / 2.0).tan();
    let half_w = half_h * cam.width as f64 / cam.height as f64;
    let sx = ((px as f64 + 0.5) / cam.width as f64) * 2.0 - 1.0;
    let sy = 1.0 - ((py as f64 + 0.5) / cam.height as f64) * 2.0;
    (f + r * (sx * half_w) + u * (sy * half_h)).normalize()
}

/// Moller-Trumbore. Returns the ray parameter and barycentrics (u, v) for
/// a unit `dir`, so the parameter is the Euclidean distance.
pub fn ray_triangle(orig: Vec3, dir: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Option<(f64, f64, f64)> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = orig - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 0.0).then_some((t, u, v))
}

pub fn block_on<F: std::future::Future>(f: F) -> F::Output {
    tokio::runtime::Builder::new_current_thread().enable_all().build().expect("runtime").block_on(f)
}

/// Runs an axum router on a background runtime; returns its base URL.
pub fn spawn_router(router: Router) -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().expect("runtime");
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.expect("bind");
            tx.send(listener.local_addr().expect("addr")).expect("send");
            axum::serve(listener, router).await.expect("serve");
        });
    });
    format!("http://{}", rx.recv().expect("address"))
}

/// Serves `service` on a background runtime until the process exits.
pub fn spawn_service(service: SceneService) -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().expect("runtime");
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.expect("bind");
            tx.send(listener.local_addr().expect("addr")).expect("send");
            serve(service, listener, std::future::pending()).await.expect("serve");
        });
    });
    format!("http://{}", rx.recv().expect("address"))
}

/// Stand-in synthesizer server. The first path segment picks a behavior:
/// `ok`, `slow` (2 s delay), `wrong_size`, `garbage` (invalid JSON),
/// `bad_png`, `error` (HTTP 500) and `scribble` (paints every pixel,
/// ignoring the mask).
#[derive(Clone)]
pub struct MockSynth {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
}

#[derive(Clone)]
struct MockState {
    hits: Arc<AtomicUsize>,
}

async fn mock_handler(State(st): State<MockState>, UrlPath(mode): UrlPath<String>, Json(body): Json<SynthesizeBody>) -> Response {
    st.hits.fetch_add(1, Ordering::SeqCst);
    let req = match decode_request(&body) {
        Ok(r) => r,
        Err(e) => return (StatusCode::BAD_REQUEST, e.to_string()).into_response(),
    };
    let reply = |img: &RgbaImage| Json(SynthesizeReply { image_png_b64: png_b64(img) }).into_response();
    match mode.as_str() {
        "ok" => reply(&ProceduralBackend::default().generate(&req).expect("procedural")),
        "slow" => {
            tokio::time::sleep(Duration::from_secs(2)).await;
            reply(&ProceduralBackend::default().generate(&req).expect("procedural"))
        }
        "wrong_size" => reply(&RgbaImage::new(req.width + 3, req.height)),
        "garbage" => (StatusCode::OK, "{not json").into_response(),
        "bad_png" => Json(serde_json::json!({ "image_png_b64": "bm90IGEgcG5n" })).into_response(),
        "error" => (StatusCode::INTERNAL_SERVER_ERROR, "model crashed").into_response(),
        "scribble" => reply(&RgbaImage::from_pixel(req.width, req.height, Rgba([255, 0, 255, 255]))),
        _ => (StatusCode::NOT_FOUND, "unknown mode").into_response(),
    }
}

impl MockSynth {
    pub fn start() -> Self {
        let hits = Arc::new(AtomicUsize::new(0));
        let router = Router::new()
            .route("/{mode}/synthesize", post(mock_handler))
            .with_state(MockState { hits: hits.clone() });
        MockSynth { url: spawn_router(router), hits }
    }

    pub fn endpoint(&self, mode: &str) -> String {
        format!("{}/{mode}", self.url)
    }
}

/// One triangle mesh, wound to face `eye`.
pub fn facing_triangle(mut v: [Vec3; 3], eye: Vec3) -> scenestyle::geometry::TriangleMesh {
    let n = (v[1] - v[0]).cross(&(v[2] - v[0]));
    if n.dot(&(v[0] - eye)) > 0.0 {
        v.swap(1, 2);
    }
    scenestyle::geometry::TriangleMesh::with_computed_normals(
        "tri",
        v.to_vec(),
        vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
        vec![scenestyle::geometry::Face { v: [0, 1, 2], uv: [0, 1, 2], n: [0, 1, 2] }],
    )
    .expect("valid triangle")
}

#[derive(Debug, Default, Clone, Copy)]
pub struct OracleStats {
    pub compared: usize,
    pub max_error: f64,
    /// Pixels the oracle hits well inside the triangle that the rasterizer left empty.
    pub missed: usize,
}

/// Renders `mesh` (one triangle, identity transform) and compares every
/// covered pixel's depth with a ray cast from the camera definition.
pub fn compare_with_oracle(mesh: &scenestyle::geometry::TriangleMesh, cam: &Camera) -> OracleStats {
    use scenestyle::geometry::Transform;
    let frame = scenestyle::raster::rasterize(mesh, &Transform::identity(), None, cam).expect("rasterize");
    let [a, b, c] = mesh.faces[0].v.map(|k| mesh.positions[k as usize]);
    let mut st = OracleStats::default();
    for py in 0..cam.height {
        for px in 0..cam.width {
            let i = (py * cam.width + px) as usize;
            let hit = ray_triangle(cam.position, oracle_ray(cam, px, py), a, b, c);
            match (frame.is_covered(i), hit) {
                (true, Some((t, _, _))) => {
                    st.compared += 1;
                    st.max_error = st.max_error.max((frame.depth[i] as f64 - t).abs());
                }
                (false, Some((_, u, v))) if u > 1e-3 && v > 1e-3 && u + v < 1.0 - 1e-3 => st.missed += 1,
                _ => {}
            }
        }
    }
    st
}

/// A 6 x 3 x 6 room with four non-overlapping objects on the floor.
pub fn toy_scene() -> scenestyle::geometry::Scene {
    use scenestyle::geometry::primitives::{uv_box, uv_sphere};
    use scenestyle::geometry::{Aabb, OrientedBox, Scene, SceneProject, TextureAtlas};
    let room = Aabb::new(Vec3::zeros(), Vec3::new(6.0, 3.0, 6.0));
    let mut scene = Scene::new(SceneProject::new(room, "a cozy cabin", 5));
    let specs = [
        ("table_1", "table", Vec3::new(1.5, 0.4, 1.5), Vec3::new(0.6, 0.4, 0.4), 0.0),
        ("chair_1", "chair", Vec3::new(4.5, 0.5, 1.5), Vec3::new(0.3, 0.5, 0.3), 0.5),
        ("lamp_1", "lamp", Vec3::new(1.5, 0.3, 4.5), Vec3::new(0.3, 0.3, 0.3), 0.0),
        ("shelf_1", "shelf", Vec3::new(4.5, 0.9, 4.5), Vec3::new(0.5, 0.9, 0.25), -1.2),
    ];
    for (k, (id, cat, c, h, yaw)) in specs.into_iter().enumerate() {
        let mesh = if k == 2 { uv_sphere(id, 0.5, 16, 8) } else { uv_box(id, Vec3::new(1.0, 0.8, 0.6)) };
        let mesh = Arc::new(mesh);
        let b = OrientedBox::new(id, cat, c, h, yaw).expect("box");
        let t = scenestyle::layout::fit_object(&mesh, &b, 0.0).expect("fit");
        let mut atlas = TextureAtlas::new(id, 64, 64).expect("atlas");
        atlas.fill([40 * k as u8, 90, 200 - 30 * k as u8]);
        scene.add_object(id, format!("meshes/{id}.obj"), mesh, atlas, b, t, 0.0).expect("add");
    }
    scene
}

/// Hue in degrees of the mean painted color of an atlas.
pub fn mean_hue(atlas: &scenestyle::geometry::TextureAtlas) -> f64 {
    let mut sum = [0.0f64; 3];
    let mut n = 0.0;
    for p in atlas.painted_pixels() {
        for c in 0..3 {
            sum[c] += p[c] as f64;
        }
        n += 1.0;
    }
    assert!(n > 0.0, "atlas {} has no painted texels", atlas.owner);
    let [r, g, b] = sum.map(|s| s / n / 255.0);
    let (max, min) = (r.max(g).max(b), r.min(g).min(b));
    let d = max - min;
    if d == 0.0 {
        return 0.0;
    }
    let h = if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    h.rem_euclid(360.0)
}

pub fn hue_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Hue distance between the first two objects of the cascade order.
pub fn cascade_hue_gap(scene: &scenestyle::geometry::Scene) -> f64 {
    let order = &scene.project.provenance.cascade_order;
    hue_distance(mean_hue(&scene.atlases[&order[0]]), mean_hue(&scene.atlases[&order[1]]))
}

/// The toy scene saved to a fresh directory and opened as a service with
/// small view renders.
pub fn toy_service(backend: Arc<dyn TextureSynthesizer>) -> (tempfile::TempDir, SceneService) {
    use scenestyle::service::ServiceOptions;
    use scenestyle::texturing::ViewConfig;
    let dir = tempfile::tempdir().expect("tempdir");
    scenestyle::geometry::save_project(&toy_scene(), dir.path()).expect("save");
    let options = ServiceOptions { views: ViewConfig { resolution: 64, ..Default::default() }, ..Default::default() };
    let service = SceneService::open(dir.path(), backend, options).expect("open service");
    (dir, service)
}

pub fn http() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder().timeout(Duration::from_secs(60)).build().expect("client")
}

/// Polls `GET /jobs/{id}` until the job leaves QUEUED/RUNNING.
pub fn wait_job(url: &str, id: &str) -> serde_json::Value {
    let client = http();
    for _ in 0..1200 {
        let job: serde_json::Value = client.get(format!("{url}/jobs/{id}")).send().expect("job").json().expect("json");
        if job["state"] == "DONE" || job["state"] == "FAILED" {
            return job;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    panic!("job {id} did not finish");
}

/// Object id -> atlas hash as listed by `GET /scene`.
pub fn atlas_hashes(scene_json: &serde_json::Value) -> std::collections::BTreeMap<String, String> {
    scene_json["objects"]
        .as_array()
        .expect("objects")
        .iter()
        .map(|o| (o["id"].as_str().unwrap().to_string(), o["atlas_sha256"].as_str().unwrap().to_string()))
        .collect()
}

/// A request whose partial image is a gradient and whose mask generates
/// the pixels where `generate(x, y)` holds.
pub fn synth_request(w: u32, h: u32, prompt: &str, seed: u64, generate: impl Fn(u32, u32) -> bool) -> scenestyle::synth::SynthesisRequest {
    use scenestyle::diffusion::BlendMask;
    use scenestyle::raster::DepthImage;
    let partial = RgbaImage::from_fn(w, h, |x, y| Rgba([(x * 7 % 256) as u8, (y * 11 % 256) as u8, 90, 255]));
    let mask: Vec<u8> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| u8::from(generate(x, y))).collect();
    let depth: Vec<f32> = (0..w * h).map(|i| 1.0 + (i % w) as f32 / w as f32).collect();
    scenestyle::synth::SynthesisRequest {
        prompt: prompt.to_string(),
        width: w,
        height: h,
        depth: DepthImage::encode(&depth, w, h, 0.5, 4.0),
        partial_image: partial,
        mask: BlendMask::new(mask, vec![h as usize, w as usize]).expect("mask"),
        reference_images: vec![RgbaImage::from_pixel(8, 8, Rgba([200, 30, 30, 255]))],
        seed,
    }
}
