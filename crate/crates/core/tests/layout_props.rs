mod common;

use proptest::prelude::*;

use scenestyle::geometry::{rot_y, Face, OrientedBox, TriangleMesh, Vec3};
use scenestyle::layout::{apply_op, apply_op_mut, box_penetration, fit_object, validate_boxes, CloneTarget, ManipulationOp};

fn vec3(lo: f64, hi: f64) -> impl Strategy<Value = Vec3> {
    (lo..hi, lo..hi, lo..hi).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn cloud() -> impl Strategy<Value = TriangleMesh> {
    prop::collection::vec(vec3(-5.0, 5.0), 3..30).prop_map(|positions| {
        let n = positions.len() as u32;
        let faces = (0..n).map(|i| Face { v: [i, (i + 1) % n, (i + 2) % n], uv: [0, 0, 0], n: [0, 0, 0] }).collect();
        TriangleMesh::new("m", positions, vec![Vec3::y()], vec![[0.5, 0.5]], faces).unwrap()
    })
}

fn bbox() -> impl Strategy<Value = OrientedBox> {
    (vec3(-3.0, 3.0), vec3(0.05, 2.0), -4.0..4.0f64)
        .prop_map(|(c, h, yaw)| OrientedBox::new("b", "thing", c, h, yaw).unwrap())
}

/// Box-local coordinates of `p`, computed without the library's helpers.
fn to_box_frame(b: &OrientedBox, p: Vec3) -> Vec3 {
    let d = p - b.center;
    let (s, c) = b.yaw.sin_cos();
    // inverse of a rotation about +Y by yaw
    Vec3::new(c * d.x - s * d.z, d.y, s * d.x + c * d.z)
}

fn op() -> impl Strategy<Value = (usize, u8, Vec3, f64)> {
    (0usize..16, 0u8..5, vec3(-0.8, 0.8), 0.5..1.6f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn fitted_mesh_stays_inside_its_box(mesh in cloud(), b in bbox(), offset in -3.2..3.2f64) {
        let t = fit_object(&mesh, &b, offset).unwrap();
        let local: Vec<Vec3> = mesh.positions.iter().map(|p| to_box_frame(&b, t.apply(p))).collect();
        let tol = 1e-4;
        for q in &local {
            for i in 0..3 {
                prop_assert!(q[i].abs() <= b.half_extents[i] + tol, "axis {i}: {} vs {}", q[i], b.half_extents[i]);
            }
        }
        let lowest = local.iter().map(|q| q.y).fold(f64::INFINITY, f64::min);
        prop_assert!((lowest + b.half_extents.y).abs() < tol, "rests on the bottom: {lowest}");
        // uniform scale: the binding axis is filled
        let fill = (0..3)
            .map(|i| {
                let lo = local.iter().map(|q| q[i]).fold(f64::INFINITY, f64::min);
                let hi = local.iter().map(|q| q[i]).fold(f64::NEG_INFINITY, f64::max);
                (hi - lo) / (2.0 * b.half_extents[i])
            })
            .fold(0.0, f64::max);
        prop_assert!((fill - 1.0).abs() < tol, "fill {fill}");
        // yaw agrees with the requested orientation
        let want = rot_y(b.yaw + offset);
        prop_assert!((t.rotation() - want).amax() < 1e-5);
    }
}

proptest! {
    #[test]
    fn penetration_and_validation_ignore_order(a in bbox(), b in bbox(), c in bbox()) {
        prop_assert!((box_penetration(&a, &b) - box_penetration(&b, &a)).abs() < 1e-12);
        let room = scenestyle::geometry::Aabb::new(Vec3::new(-3.0, -3.0, -3.0), Vec3::new(3.0, 3.0, 3.0));
        let fwd = validate_boxes(&room, &[("a", &a), ("b", &b), ("c", &c)], 0.02);
        let mut rev = validate_boxes(&room, &[("c", &c), ("b", &b), ("a", &a)], 0.02);
        let key = |v: &scenestyle::layout::Violation| format!("{v:?}");
        let mut fwd_keys: Vec<String> = fwd.iter().map(key).collect();
        fwd_keys.sort();
        rev.sort_by_key(key);
        prop_assert_eq!(fwd_keys, rev.iter().map(key).collect::<Vec<_>>());
    }

    #[test]
    fn ops_leave_other_records_untouched(ops in prop::collection::vec(op(), 50)) {
        let mut scene = common::toy_scene();
        for (pick, kind, v, f) in ops {
            let ids: Vec<String> = scene.project.objects.iter().map(|o| o.id.clone()).collect();
            if ids.is_empty() {
                break;
            }
            let object = ids[pick % ids.len()].clone();
            let op = match kind {
                0 => ManipulationOp::Move { object, delta: v.into() },
                1 => ManipulationOp::Rotate { object, delta_yaw: v.x * 3.0 },
                2 => ManipulationOp::Scale { object, factor: f },
                3 => ManipulationOp::Clone {
                    object,
                    destination: CloneTarget { center: [v.x + 3.0, 1.0, v.z + 3.0], half_extents: None, yaw: None },
                    new_id: None,
                },
                _ => ManipulationOp::Remove { object },
            };
            let before = scene.clone();
            let Ok(target) = apply_op_mut(&mut scene, &op) else {
                prop_assert_eq!(scene.project.to_json_bytes(), before.project.to_json_bytes());
                continue;
            };
            for rec in &before.project.objects {
                if rec.id != target {
                    prop_assert_eq!(scene.project.record_bytes(&rec.id), before.project.record_bytes(&rec.id));
                    prop_assert_eq!(scene.atlases[&rec.id].content_hash(), before.atlases[&rec.id].content_hash());
                }
            }
            let delta = scene.project.objects.len() as i64 - before.project.objects.len() as i64;
            let want = match op {
                ManipulationOp::Clone { .. } => 1,
                ManipulationOp::Remove { .. } => -1,
                _ => 0,
            };
            prop_assert_eq!(delta, want);
        }
    }

    #[test]
    fn move_then_unmove_restores_the_record(pick in 0usize..4, d in vec3(-1.0, 1.0), yaw in -3.0..3.0f64) {
        let scene = common::toy_scene();
        let id = scene.project.objects[pick].id.clone();
        let there = apply_op(&scene, &ManipulationOp::Move { object: id.clone(), delta: d.into() }).unwrap();
        let back = apply_op(&there, &ManipulationOp::Move { object: id.clone(), delta: (-d).into() }).unwrap();
        prop_assert_eq!(back.project.to_json_bytes(), scene.project.to_json_bytes());
        let turned = apply_op(&scene, &ManipulationOp::Rotate { object: id.clone(), delta_yaw: yaw }).unwrap();
        let unturned = apply_op(&turned, &ManipulationOp::Rotate { object: id.clone(), delta_yaw: -yaw }).unwrap();
        let (a, b) = (&unturned.project.object(&id).unwrap().bbox, &scene.project.object(&id).unwrap().bbox);
        prop_assert!((a.yaw - b.yaw).abs() < 2e-6 && a.center == b.center && a.half_extents == b.half_extents);
    }
}

#[test]
fn unknown_target_and_bad_arguments_change_nothing() {
    let scene = common::toy_scene();
    let json = scene.project.to_json_bytes();
    for op in [
        ManipulationOp::Move { object: "ghost".into(), delta: [1.0, 0.0, 0.0] },
        ManipulationOp::Scale { object: "table_1".into(), factor: -1.0 },
        ManipulationOp::Move { object: "table_1".into(), delta: [f64::NAN, 0.0, 0.0] },
        ManipulationOp::Clone {
            object: "table_1".into(),
            destination: CloneTarget { center: [1.0, 1.0, 1.0], half_extents: None, yaw: None },
            new_id: Some("chair_1".into()),
        },
    ] {
        let mut s = scene.clone();
        assert!(apply_op_mut(&mut s, &op).is_err(), "{op:?}");
        assert_eq!(s.project.to_json_bytes(), json);
    }
}

#[test]
fn ops_parse_from_their_json_form() {
    let op: ManipulationOp = serde_json::from_str(r#"{"op":"move","object":"a","delta":[1,0,-2]}"#).unwrap();
    assert_eq!(op, ManipulationOp::Move { object: "a".into(), delta: [1.0, 0.0, -2.0] });
    let op: ManipulationOp =
        serde_json::from_str(r#"{"op":"clone","object":"a","box":{"center":[1,2,3]},"new_id":"b"}"#).unwrap();
    assert!(matches!(op, ManipulationOp::Clone { new_id: Some(ref n), .. } if n == "b"));
}
