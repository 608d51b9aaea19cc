//! Moves, rotates, clones and removes objects of a small scene and checks
//! that untouched records keep their exact bytes.

use std::sync::Arc;

use scenestyle::geometry::primitives::uv_box;
use scenestyle::geometry::{Aabb, OrientedBox, Scene, SceneProject, TextureAtlas, Vec3};
use scenestyle::layout::{apply_op, fit_object, validate_scene, CloneTarget, ManipulationOp, DEFAULT_PENETRATION_TOL};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let room = Aabb::new(Vec3::zeros(), Vec3::new(5.0, 3.0, 5.0));
    let mut scene = Scene::new(SceneProject::new(room, "muji style", 1));
    for (id, category, center, half) in [
        ("sofa_1", "sofa", Vec3::new(2.5, 0.4, 1.0), Vec3::new(1.0, 0.4, 0.45)),
        ("table_1", "table", Vec3::new(2.5, 0.25, 2.5), Vec3::new(0.6, 0.25, 0.4)),
        ("chair_1", "chair", Vec3::new(1.0, 0.45, 3.5), Vec3::new(0.3, 0.45, 0.3)),
    ] {
        let mesh = Arc::new(uv_box(id, half * 2.0));
        let bbox = OrientedBox::new(id, category, center, half, 0.0)?;
        let transform = fit_object(&mesh, &bbox, 0.0)?;
        scene.add_object(id, format!("meshes/{id}.obj"), mesh, TextureAtlas::new(id, 64, 64)?, bbox, transform, 0.0)?;
    }

    let ops = [
        ManipulationOp::Move { object: "chair_1".into(), delta: [1.5, 0.0, 0.2] },
        ManipulationOp::Rotate { object: "sofa_1".into(), delta_yaw: 0.3 },
        ManipulationOp::Clone {
            object: "chair_1".into(),
            destination: CloneTarget { center: [4.0, 0.45, 4.0], half_extents: None, yaw: Some(1.0) },
            new_id: None,
        },
        ManipulationOp::Remove { object: "table_1".into() },
    ];
    for op in &ops {
        let next = apply_op(&scene, op)?;
        let untouched = scene
            .project
            .objects
            .iter()
            .filter(|o| o.id != op.target())
            .all(|o| next.project.record_bytes(&o.id) == scene.project.record_bytes(&o.id));
        println!("{}: {} objects, others untouched: {untouched}", serde_json::to_string(op)?, next.project.objects.len());
        scene = next;
    }
    println!("violations: {:?}", validate_scene(&scene.project, DEFAULT_PENETRATION_TOL));
    Ok(())
}
