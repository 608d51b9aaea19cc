//! Procedural meshes with ready-made UV layouts, used for fixtures and examples.

use super::{Face, TriangleMesh, Vec3};

/// Axis-aligned box centered at the origin with flat normals.
///
/// UV layout: the four side faces (front +Z, right +X, back -Z, left -X)
/// share the top half of the atlas in quarter-width charts; the top face
/// takes the whole bottom half. The floor-facing face is never seen once
/// the object stands on the floor, so it reuses the top face's chart and
/// the layout tiles the atlas completely.
pub fn uv_box(object_id: &str, size: Vec3) -> TriangleMesh {
    let h = size * 0.5;
    // (normal, u axis, v axis, chart origin, chart size)
    let faces: [(Vec3, Vec3, Vec3, [f64; 2], [f64; 2]); 6] = [
        (Vec3::z(), Vec3::x(), Vec3::y(), [0.0, 0.5], [0.25, 0.5]),
        (Vec3::x(), -Vec3::z(), Vec3::y(), [0.25, 0.5], [0.25, 0.5]),
        (-Vec3::z(), -Vec3::x(), Vec3::y(), [0.5, 0.5], [0.25, 0.5]),
        (-Vec3::x(), Vec3::z(), Vec3::y(), [0.75, 0.5], [0.25, 0.5]),
        (Vec3::y(), Vec3::x(), -Vec3::z(), [0.0, 0.0], [1.0, 0.5]),
        (-Vec3::y(), Vec3::x(), Vec3::z(), [0.0, 0.0], [1.0, 0.5]),
    ];
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut uvs = Vec::new();
    let mut tris = Vec::new();
    for (n, u, v, origin, extent) in faces {
        let c = n.component_mul(&h);
        let hu = u.component_mul(&h).norm();
        let hv = v.component_mul(&h).norm();
        let base = positions.len() as u32;
        for (s, t) in [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)] {
            positions.push(c + u * ((2.0 * s - 1.0) * hu) + v * ((2.0 * t - 1.0) * hv));
            uvs.push([origin[0] + s * extent[0], origin[1] + t * extent[1]]);
        }
        normals.push(n);
        let ni = normals.len() as u32 - 1;
        for [a, b, c] in [[0, 1, 2], [0, 2, 3]] {
            let v = [base + a, base + b, base + c];
            tris.push(Face { v, uv: v, n: [ni; 3] });
        }
    }
    TriangleMesh::new(object_id, positions, normals, uvs, tris).expect("box is well formed")
}

/// Unit-UV rectangle in the XY plane facing +Z, centered at the origin.
pub fn uv_quad(object_id: &str, width: f64, height: f64) -> TriangleMesh {
    let (hw, hh) = (width * 0.5, height * 0.5);
    let positions = vec![
        Vec3::new(-hw, -hh, 0.0),
        Vec3::new(hw, -hh, 0.0),
        Vec3::new(hw, hh, 0.0),
        Vec3::new(-hw, hh, 0.0),
    ];
    let uvs = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    let faces = vec![
        Face { v: [0, 1, 2], uv: [0, 1, 2], n: [0; 3] },
        Face { v: [0, 2, 3], uv: [0, 2, 3], n: [0; 3] },
    ];
    TriangleMesh::new(object_id, positions, vec![Vec3::z()], uvs, faces).expect("quad is well formed")
}

/// Latitude/longitude sphere with an equirectangular UV layout.
pub fn uv_sphere(object_id: &str, radius: f64, segments: u32, rings: u32) -> TriangleMesh {
    let segments = segments.max(3);
    let rings = rings.max(2);
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut uvs = Vec::new();
    for r in 0..=rings {
        let theta = std::f64::consts::PI * r as f64 / rings as f64;
        for s in 0..=segments {
            let phi = std::f64::consts::TAU * s as f64 / segments as f64;
            let n = Vec3::new(theta.sin() * phi.sin(), theta.cos(), theta.sin() * phi.cos());
            positions.push(n * radius);
            normals.push(n);
            uvs.push([s as f64 / segments as f64, 1.0 - r as f64 / rings as f64]);
        }
    }
    let row = segments + 1;
    let mut faces = Vec::new();
    for r in 0..rings {
        for s in 0..segments {
            let a = r * row + s;
            let b = a + row;
            // pole rows collapse one corner, so emit a single triangle there
            if r != 0 {
                let v = [a, b, a + 1];
                faces.push(Face { v, uv: v, n: v });
            }
            if r != rings - 1 {
                let v = [a + 1, b, b + 1];
                faces.push(Face { v, uv: v, n: v });
            }
        }
    }
    TriangleMesh::new(object_id, positions, normals, uvs, faces).expect("sphere is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Transform;

    #[test]
    fn box_faces_point_outward() {
        let m = uv_box("b", Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(m.faces.len(), 12);
        for (i, f) in m.faces.iter().enumerate() {
            let [a, b, c] = m.face_positions(i);
            let geo = (b - a).cross(&(c - a)).normalize();
            assert!((geo - m.normals[f.n[0] as usize]).norm() < 1e-12);
            // outward: normal agrees with centroid direction
            assert!(geo.dot(&((a + b + c) / 3.0)) > 0.0);
        }
        let bb = m.aabb(&Transform::identity()).unwrap();
        assert!((bb.extents() - Vec3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn sphere_is_valid_and_round() {
        let m = uv_sphere("s", 1.0, 16, 8);
        let (_, r) = m.bounding_sphere().unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }
}
