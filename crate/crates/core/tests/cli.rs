mod common;

use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scenestyle")).args(args).env("RUST_LOG", "warn").output().expect("run binary")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn generate(out: &Path) {
    let config = common::fixtures().join("bedroom/config.json");
    let o = cli(&["generate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn generate_render_edit_eval() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("proj");
    generate(&scene);
    let s = scene.to_str().unwrap();
    assert!(scene.join("renders/overview.png").exists() && scene.join("renders/corner.png").exists());

    let png = dir.path().join("view.png");
    let o = cli(&["render", "--scene", s, "--camera", "-1,2.5,-1,2,0.5,2.2,60", "--width", "64", "--height", "48", "--out", png.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(image::open(&png).unwrap().to_rgba8().dimensions(), (64, 48));

    let before = std::fs::read(scene.join("scene.json")).unwrap();
    let o = cli(&["edit", "--scene", s, "--op", "move", "--object", "pouf_1", "--delta", "0.2,0,-0.1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "pouf_1");
    assert_ne!(std::fs::read(scene.join("scene.json")).unwrap(), before);

    let o = cli(&["edit", "--scene", s, "--op", "clone", "--object", "pouf_1", "--to", "0.5,0.2,1.0", "--new-id", "pouf_2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for args in [
        ["--op", "rotate", "--object", "pouf_2", "--delta", "-30"].as_slice(),
        &["--op", "scale", "--object", "pouf_2", "--factor", "0.8"],
        &["--op", "remove", "--object", "pouf_2"],
    ] {
        let o = cli(&[&["edit", "--scene", s], args].concat());
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }

    let o = cli(&["eval", "--scene", s]);
    assert_eq!(code(&o), 0);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["style_consistency_proxy"].as_f64().unwrap() >= 0.0);
    assert_eq!(report["scores"]["status"], "not_configured");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("proj");
    generate(&scene);
    let s = scene.to_str().unwrap();
    let before = std::fs::read(scene.join("scene.json")).unwrap();

    // leaving the room is a rejected layout
    let o = cli(&["edit", "--scene", s, "--op", "move", "--object", "pouf_1", "--delta", "10,0,0"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    // walking into the bed too
    let o = cli(&["edit", "--scene", s, "--op", "move", "--object", "pouf_1", "--delta", "1,0,-2"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(scene.join("scene.json")).unwrap(), before);

    let o = cli(&["edit", "--scene", s, "--op", "move", "--object", "ghost", "--delta", "1,0,0"]);
    assert_eq!(code(&o), 2);
    let o = cli(&["edit", "--scene", s, "--op", "move", "--object", "pouf_1"]);
    assert_eq!(code(&o), 2);
    let o = cli(&["render", "--scene", s, "--camera", "1,2,3"]);
    assert_eq!(code(&o), 2);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"objects\": 3}").unwrap();
    assert_eq!(code(&cli(&["generate", "--config", bad.to_str().unwrap()])), 2);

    // a backend that cannot be reached is a backend error
    let mut cfg: serde_json::Value =
        serde_json::from_slice(&std::fs::read(common::fixtures().join("bedroom/config.json")).unwrap()).unwrap();
    cfg["backend"] = serde_json::json!({ "kind": "remote", "endpoint": "http://127.0.0.1:9", "timeout_ms": 2000 });
    let base = common::fixtures().join("bedroom");
    cfg["layout"]["path"] = serde_json::json!(base.join("layout.json"));
    for o in cfg["objects"].as_array_mut().unwrap() {
        o["mesh"] = serde_json::json!(base.join(o["mesh"].as_str().unwrap()));
    }
    let remote = dir.path().join("remote.json");
    std::fs::write(&remote, serde_json::to_vec(&cfg).unwrap()).unwrap();
    let out = dir.path().join("remote_out");
    let o = cli(&["generate", "--config", remote.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cascade_stylize"));
}
