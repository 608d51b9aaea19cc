mod common;

use std::sync::{Arc, Barrier};

use serde_json::{json, Value};

use scenestyle::geometry::load_project;
use scenestyle::layout::{apply_op, CloneTarget, ManipulationOp};
use scenestyle::service::{SceneService, ServiceOptions};
use scenestyle::synth::{ProceduralBackend, RemoteBackend, RemoteConfig};

fn get_scene(url: &str) -> (u64, Vec<u8>) {
    let resp = common::http().get(format!("{url}/scene")).send().unwrap();
    assert_eq!(resp.status(), 200);
    let version = resp.headers()["x-scene-version"].to_str().unwrap().parse().unwrap();
    (version, resp.bytes().unwrap().to_vec())
}

fn post_op(url: &str, op: &Value) -> (u16, Value) {
    let resp = common::http().post(format!("{url}/scene/ops")).json(op).send().unwrap();
    (resp.status().as_u16(), resp.json().unwrap())
}

fn render(url: &str, query: &str) -> reqwest::blocking::Response {
    common::http().get(format!("{url}/render?{query}")).send().unwrap()
}

#[test]
fn scene_endpoints_mirror_the_project() {
    let (dir, service) = common::toy_service(Arc::new(ProceduralBackend::default()));
    let url = common::spawn_service(service);
    let client = common::http();
    assert_eq!(client.get(format!("{url}/healthz")).send().unwrap().json::<Value>().unwrap(), json!({ "ok": true }));
    let (version, body) = get_scene(&url);
    assert_eq!(version, 1);
    assert_eq!(body, std::fs::read(dir.path().join("scene.json")).unwrap());

    let atlas = client.get(format!("{url}/objects/lamp_1/atlas")).send().unwrap();
    assert_eq!(atlas.headers()["content-type"], "image/png");
    assert_eq!(atlas.bytes().unwrap().to_vec(), std::fs::read(dir.path().join("atlases/lamp_1.png")).unwrap());
    assert_eq!(client.get(format!("{url}/objects/ghost/atlas")).send().unwrap().status(), 404);
    assert_eq!(client.get(format!("{url}/jobs/job-77")).send().unwrap().status(), 404);

    let img = render(&url, "cam=3,2.5,9,3,0.5,3,60&w=80&h=60");
    assert_eq!(img.status(), 200);
    let img = image::load_from_memory(&img.bytes().unwrap()).unwrap();
    assert_eq!((img.width(), img.height()), (80, 60));
    assert_eq!(render(&url, "w=0").status(), 400);
    assert_eq!(render(&url, "w=5000").status(), 400);
    assert_eq!(render(&url, "cam=1,2,3").status(), 400);
    assert_eq!(render(&url, "").status(), 200);
}

#[test]
fn move_persists_before_answering_and_changes_only_its_object() {
    let (dir, service) = common::toy_service(Arc::new(ProceduralBackend::default()));
    let url = common::spawn_service(service);
    let cam = "cam=3,3,10,3,0.5,3,50&w=128&h=96";
    let before_png = render(&url, cam).bytes().unwrap();
    let before: Value = serde_json::from_slice(&get_scene(&url).1).unwrap();

    let (status, body) = post_op(&url, &json!({ "op": "move", "object": "chair_1", "delta": [-0.5, 0, 0.4] }));
    assert_eq!(status, 200, "{body}");
    assert_eq!(body["ok"], true);
    assert_eq!(body["scene_version"], 2);
    // persisted by the time the response arrived
    let on_disk = std::fs::read(dir.path().join("scene.json")).unwrap();
    let (version, served) = get_scene(&url);
    assert_eq!((version, &served), (2, &on_disk));

    let after: Value = serde_json::from_slice(&served).unwrap();
    assert_eq!(common::atlas_hashes(&after), common::atlas_hashes(&before));
    let moved = |v: &Value| v["objects"].as_array().unwrap().iter().find(|o| o["id"] == "chair_1").unwrap()["box"]["center"].clone();
    assert_ne!(moved(&after), moved(&before));
    for (a, b) in after["objects"].as_array().unwrap().iter().zip(before["objects"].as_array().unwrap()) {
        if a["id"] != "chair_1" {
            assert_eq!(a, b);
        }
    }
    let after_png = render(&url, cam);
    assert_eq!(after_png.headers()["x-scene-version"], "2");
    assert_ne!(after_png.bytes().unwrap(), before_png);
}

#[test]
fn rejected_and_malformed_ops_commit_nothing() {
    let (_dir, service) = common::toy_service(Arc::new(ProceduralBackend::default()));
    let url = common::spawn_service(service);
    let (_, original) = get_scene(&url);

    let (status, body) = post_op(&url, &json!({ "op": "move", "object": "table_1", "delta": [2.9, 0, 0] }));
    assert_eq!(status, 409, "{body}");
    assert_eq!(body["ok"], false);
    assert!(!body["violations"].as_array().unwrap().is_empty());
    let (status, _) = post_op(&url, &json!({ "op": "move", "object": "table_1", "delta": [0, 0, -5] }));
    assert_eq!(status, 409);
    let (status, _) = post_op(&url, &json!({ "op": "move", "object": "ghost", "delta": [0, 0, 1] }));
    assert_eq!(status, 404);
    let (status, _) = post_op(&url, &json!({ "op": "scale", "object": "table_1", "factor": 0 }));
    assert_eq!(status, 400);
    let (status, _) = post_op(&url, &json!({ "op": "teleport", "object": "table_1" }));
    assert_eq!(status, 400);
    assert_eq!(get_scene(&url), (1, original));

    // removal is always allowed
    let (status, body) = post_op(&url, &json!({ "op": "remove", "object": "lamp_1" }));
    assert_eq!((status, body["scene_version"].as_u64()), (200, Some(2)));
    let (status, body) = post_op(&url, &json!({ "op": "clone", "object": "chair_1", "box": { "center": [3, 0.5, 3] } }));
    assert_eq!(status, 200, "{body}");
    assert_eq!(body["object"], "chair_2");
}

#[test]
fn concurrent_conflicting_ops_are_linearizable() {
    let (dir, service) = common::toy_service(Arc::new(ProceduralBackend::default()));
    let url = common::spawn_service(service);
    let spots = [[3.0, 0.4, 3.0], [3.0, 0.4, 0.9], [0.9, 0.4, 3.0], [5.1, 0.4, 3.0], [3.0, 0.4, 5.1]];
    for (round, spot) in spots.iter().enumerate() {
        let (v0, _) = get_scene(&url);
        let start = load_project(dir.path()).unwrap();
        let rotate = ManipulationOp::Rotate { object: "table_1".into(), delta_yaw: 0.4 };
        let clone = ManipulationOp::Clone {
            object: "table_1".into(),
            destination: CloneTarget { center: *spot, half_extents: None, yaw: None },
            new_id: Some(format!("copy_{round}")),
        };
        let serial = |a: &ManipulationOp, b: &ManipulationOp| {
            let mut s = apply_op(&apply_op(&start, a).unwrap(), b).unwrap();
            s.refresh_atlas_hashes();
            s.project.to_json_bytes()
        };
        let orders = [serial(&rotate, &clone), serial(&clone, &rotate)];
        assert_ne!(orders[0], orders[1], "the two ops must not commute");

        let barrier = Arc::new(Barrier::new(2));
        let handles: Vec<_> = [rotate, clone]
            .into_iter()
            .map(|op| {
                let (url, barrier) = (url.clone(), barrier.clone());
                std::thread::spawn(move || {
                    barrier.wait();
                    post_op(&url, &serde_json::to_value(&op).unwrap())
                })
            })
            .collect();
        let mut versions: Vec<u64> = handles
            .into_iter()
            .map(|h| {
                let (status, body) = h.join().unwrap();
                assert_eq!(status, 200, "{body}");
                body["scene_version"].as_u64().unwrap()
            })
            .collect();
        versions.sort();
        assert_eq!(versions, [v0 + 1, v0 + 2]);
        let (v, served) = get_scene(&url);
        assert_eq!(v, v0 + 2);
        assert!(orders.contains(&served), "round {round}: final state matches no serial order");
        assert_eq!(std::fs::read(dir.path().join("scene.json")).unwrap(), served);
    }
}

#[test]
fn retexture_job_runs_through_a_remote_backend() {
    let mock = common::MockSynth::start();
    let backend = RemoteBackend::new(RemoteConfig::new(mock.endpoint("ok"))).unwrap();
    let (dir, service) = common::toy_service(Arc::new(backend));
    let url = common::spawn_service(service);
    let before: Value = serde_json::from_slice(&get_scene(&url).1).unwrap();

    let resp = common::http().post(format!("{url}/scene/retexture")).json(&json!({ "objects": ["lamp_1"], "seed": 4 })).send().unwrap();
    assert_eq!(resp.status(), 202);
    let job: Value = resp.json().unwrap();
    assert_eq!(job["kind"], "RETEXTURE");
    assert_eq!(job["progress"]["total"], 17);
    let done = common::wait_job(&url, job["job_id"].as_str().unwrap());
    assert_eq!(done["state"], "DONE", "{done}");
    assert_eq!(done["progress"]["completed"], 17);
    assert_eq!(done["scene_version"], 2);
    // one reference image plus 17 views
    assert_eq!(mock.hits.load(std::sync::atomic::Ordering::SeqCst), 18);

    let (version, served) = get_scene(&url);
    assert_eq!(version, 2);
    let after: Value = serde_json::from_slice(&served).unwrap();
    let (hb, ha) = (common::atlas_hashes(&before), common::atlas_hashes(&after));
    for (id, h) in &hb {
        assert_eq!(ha[id] == *h, id != "lamp_1", "{id}");
    }
    assert_eq!(after["provenance"]["deterministic"], false);
    assert_eq!(std::fs::read(dir.path().join("scene.json")).unwrap(), served);
    assert!(dir.path().join("reference.png").exists());
}

#[test]
fn reference_only_and_invalid_jobs() {
    let (_dir, service) = common::toy_service(Arc::new(ProceduralBackend::default()));
    let url = common::spawn_service(service);
    let client = common::http();
    let hashes = common::atlas_hashes(&serde_json::from_slice(&get_scene(&url).1).unwrap());

    let job: Value = client.post(format!("{url}/scene/retexture")).json(&json!({ "objects": [] })).send().unwrap().json().unwrap();
    assert_eq!(job["kind"], "REFERENCE");
    let done = common::wait_job(&url, job["job_id"].as_str().unwrap());
    assert_eq!(done["state"], "DONE");
    let after: Value = serde_json::from_slice(&get_scene(&url).1).unwrap();
    assert_eq!(common::atlas_hashes(&after), hashes);
    assert_eq!(after["reference_image"], "reference.png");

    let resp = client.post(format!("{url}/scene/retexture")).json(&json!({ "objects": ["ghost"] })).send().unwrap();
    assert_eq!(resp.status(), 400);
    let resp = client.post(format!("{url}/scene/retexture")).body("{nope").send().unwrap();
    assert_eq!(resp.status(), 400);
}

#[test]
fn failed_job_commits_nothing() {
    let mock = common::MockSynth::start();
    let backend = RemoteBackend::new(RemoteConfig::new(mock.endpoint("error"))).unwrap();
    let (_dir, service) = common::toy_service(Arc::new(backend));
    let url = common::spawn_service(service);
    let (_, before) = get_scene(&url);
    let job: Value = common::http().post(format!("{url}/scene/retexture")).send().unwrap().json().unwrap();
    let done = common::wait_job(&url, job["job_id"].as_str().unwrap());
    assert_eq!(done["state"], "FAILED");
    assert!(done["error"].as_str().unwrap().contains("500"), "{done}");
    assert_eq!(get_scene(&url), (1, before));
}

#[test]
fn ui_bundle_is_served_at_the_root() {
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<!doctype html><title>studio</title>").unwrap();
    let (dir, _) = common::toy_service(Arc::new(ProceduralBackend::default()));
    let options = ServiceOptions { static_dir: Some(ui.path().to_path_buf()), ..Default::default() };
    let service = SceneService::open(dir.path(), Arc::new(ProceduralBackend::default()), options).unwrap();
    let url = common::spawn_service(service);
    let page = common::http().get(format!("{url}/")).send().unwrap();
    assert_eq!(page.status(), 200);
    assert!(page.text().unwrap().contains("studio"));
    assert_eq!(common::http().get(format!("{url}/healthz")).send().unwrap().status(), 200);
}
