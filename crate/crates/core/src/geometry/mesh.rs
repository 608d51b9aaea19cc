use std::fmt::Write as _;
use std::path::Path;

use super::{Aabb, GeometryError, Transform, Vec3};

/// Corner indices of one triangle into the position, uv and normal arrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Face {
    pub v: [u32; 3],
    pub uv: [u32; 3],
    pub n: [u32; 3],
}

/// Triangle mesh with a per-corner UV parameterization.
///
/// Positions are in meters in the object's canonical frame (Y up, front
/// facing +Z). Meshes are values: once built they are shared read-only.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub object_id: String,
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub uvs: Vec<[f64; 2]>,
    pub faces: Vec<Face>,
}

impl TriangleMesh {
    /// Builds a mesh and checks every invariant.
    pub fn new(
        object_id: impl Into<String>,
        positions: Vec<Vec3>,
        normals: Vec<Vec3>,
        uvs: Vec<[f64; 2]>,
        faces: Vec<Face>,
    ) -> Result<Self, GeometryError> {
        let mesh = TriangleMesh {
            object_id: object_id.into(),
            positions,
            normals,
            uvs,
            faces,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Builds a mesh whose normals are computed as area-weighted vertex
    /// normals; normal indices mirror the position indices.
    pub fn with_computed_normals(
        object_id: impl Into<String>,
        positions: Vec<Vec3>,
        uvs: Vec<[f64; 2]>,
        faces: Vec<Face>,
    ) -> Result<Self, GeometryError> {
        let normals = area_weighted_normals(&positions, &faces);
        let faces = faces
            .into_iter()
            .map(|f| Face { n: f.v, ..f })
            .collect();
        Self::new(object_id, positions, normals, uvs, faces)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let malformed = |msg: String| Err(GeometryError::MalformedFile(msg));
        for (i, f) in self.faces.iter().enumerate() {
            if f.v.iter().any(|&k| k as usize >= self.positions.len()) {
                return malformed(format!("face {i}: vertex index out of range"));
            }
            if f.uv.iter().any(|&k| k as usize >= self.uvs.len()) {
                return malformed(format!("face {i}: uv index out of range"));
            }
            if f.n.iter().any(|&k| k as usize >= self.normals.len()) {
                return malformed(format!("face {i}: normal index out of range"));
            }
            if f.v[0] == f.v[1] || f.v[1] == f.v[2] || f.v[0] == f.v[2] {
                return malformed(format!("face {i}: repeated vertex index"));
            }
        }
        for (i, uv) in self.uvs.iter().enumerate() {
            if !(0.0..=1.0).contains(&uv[0]) || !(0.0..=1.0).contains(&uv[1]) {
                return malformed(format!("uv {i} outside [0,1]^2: {uv:?}"));
            }
        }
        for (i, n) in self.normals.iter().enumerate() {
            if (n.norm() - 1.0).abs() > 1e-5 {
                return malformed(format!("normal {i} is not unit length"));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn face_positions(&self, face: usize) -> [Vec3; 3] {
        let f = &self.faces[face];
        f.v.map(|k| self.positions[k as usize])
    }

    /// Axis-aligned bounds of the mesh after applying `transform`.
    pub fn aabb(&self, transform: &Transform) -> Result<Aabb, GeometryError> {
        mesh_aabb(self, transform)
    }

    /// Center of the local AABB and the largest distance from it to a vertex.
    pub fn bounding_sphere(&self) -> Result<(Vec3, f64), GeometryError> {
        let bounds = mesh_aabb(self, &Transform::identity())?;
        let center = bounds.center();
        let radius = self
            .positions
            .iter()
            .map(|p| (p - center).norm())
            .fold(0.0, f64::max);
        Ok((center, radius))
    }
}

/// Minimal axis-aligned box containing every transformed vertex.
pub fn mesh_aabb(mesh: &TriangleMesh, transform: &Transform) -> Result<Aabb, GeometryError> {
    if mesh.positions.is_empty() || mesh.faces.is_empty() {
        return Err(GeometryError::EmptyMesh);
    }
    let m = transform.matrix();
    Aabb::from_points(mesh.positions.iter().map(|p| m.transform_point(&(*p).into()).coords))
        .ok_or(GeometryError::EmptyMesh)
}

fn area_weighted_normals(positions: &[Vec3], faces: &[Face]) -> Vec<Vec3> {
    let mut acc = vec![Vec3::zeros(); positions.len()];
    for f in faces {
        let [a, b, c] = f.v.map(|k| positions.get(k as usize).copied().unwrap_or_default());
        // unnormalized cross product is twice the face area
        let n = (b - a).cross(&(c - a));
        for &k in &f.v {
            if let Some(slot) = acc.get_mut(k as usize) {
                *slot += n;
            }
        }
    }
    acc.into_iter()
        .map(|n| {
            let len = n.norm();
            if len > 0.0 {
                n / len
            } else {
                Vec3::y()
            }
        })
        .collect()
}

/// Reads a Wavefront OBJ file. Polygons are fan-triangulated.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh, GeometryError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| GeometryError::Io(format!("{}: {e}", path.display())))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_obj(&text, &id)
}

pub fn parse_obj(text: &str, object_id: &str) -> Result<TriangleMesh, GeometryError> {
    let mut positions = Vec::new();
    let mut uvs = Vec::new();
    let mut normals = Vec::new();
    // (v, vt, vn) per corner, 0-based; vt/vn may be missing
    let mut corners: Vec<[(u32, Option<u32>, Option<u32>); 3]> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| GeometryError::MalformedFile(format!("line {}: {what}", lineno + 1));
        let mut parts = line.split_whitespace();
        let tag = parts.next().unwrap_or("");
        let nums = |parts: std::str::SplitWhitespace<'_>| -> Result<Vec<f64>, GeometryError> {
            parts
                .map(|p| p.parse::<f64>().map_err(|_| bad("bad number")))
                .collect()
        };
        match tag {
            "v" => {
                let v = nums(parts)?;
                if v.len() < 3 || v.iter().any(|x| !x.is_finite()) {
                    return Err(bad("vertex needs 3 finite coordinates"));
                }
                positions.push(Vec3::new(v[0], v[1], v[2]));
            }
            "vt" => {
                let v = nums(parts)?;
                if v.len() < 2 {
                    return Err(bad("texture coordinate needs 2 values"));
                }
                uvs.push([v[0], v[1]]);
            }
            "vn" => {
                let v = nums(parts)?;
                if v.len() < 3 {
                    return Err(bad("normal needs 3 values"));
                }
                let n = Vec3::new(v[0], v[1], v[2]);
                let len = n.norm();
                if !(len > 0.0) {
                    return Err(bad("zero-length normal"));
                }
                normals.push(n / len);
            }
            "f" => {
                let refs = parts
                    .map(|p| parse_corner(p, positions.len(), uvs.len(), normals.len()))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| bad("bad face corner"))?;
                if refs.len() < 3 {
                    return Err(bad("face needs at least 3 corners"));
                }
                for k in 1..refs.len() - 1 {
                    corners.push([refs[0], refs[k], refs[k + 1]]);
                }
            }
            // groups, materials and smoothing are irrelevant here
            _ => {}
        }
    }

    if uvs.is_empty() {
        return Err(GeometryError::MissingUVs);
    }
    if corners.is_empty() {
        return Err(GeometryError::EmptyMesh);
    }
    if corners.iter().flatten().any(|c| c.1.is_none()) {
        return Err(GeometryError::MissingUVs);
    }

    let has_normals = corners.iter().flatten().all(|c| c.2.is_some());
    let faces: Vec<Face> = corners
        .iter()
        .map(|c| Face {
            v: c.map(|x| x.0),
            uv: c.map(|x| x.1.unwrap_or(0)),
            n: c.map(|x| x.2.unwrap_or(0)),
        })
        .collect();
    if has_normals {
        TriangleMesh::new(object_id, positions, normals, uvs, faces)
    } else {
        TriangleMesh::with_computed_normals(object_id, positions, uvs, faces)
    }
}

fn parse_corner(
    token: &str,
    nv: usize,
    nt: usize,
    nn: usize,
) -> Option<(u32, Option<u32>, Option<u32>)> {
    let mut it = token.split('/');
    let resolve = |s: &str, count: usize| -> Option<u32> {
        let i: i64 = s.parse().ok()?;
        let idx = if i < 0 { count as i64 + i } else { i - 1 };
        (idx >= 0 && (idx as usize) < count).then_some(idx as u32)
    };
    let v = resolve(it.next()?, nv)?;
    let vt = match it.next() {
        Some("") | None => None,
        Some(s) => Some(resolve(s, nt)?),
    };
    let vn = match it.next() {
        Some("") | None => None,
        Some(s) => Some(resolve(s, nn)?),
    };
    Some((v, vt, vn))
}

/// Serializes to OBJ text. Float formatting is shortest round-trip, so
/// `parse_obj(to_obj_string(m))` reproduces coordinates exactly.
pub fn to_obj_string(mesh: &TriangleMesh) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "o {}", mesh.object_id);
    for p in &mesh.positions {
        let _ = writeln!(out, "v {} {} {}", p.x, p.y, p.z);
    }
    for t in &mesh.uvs {
        let _ = writeln!(out, "vt {} {}", t[0], t[1]);
    }
    for n in &mesh.normals {
        let _ = writeln!(out, "vn {} {} {}", n.x, n.y, n.z);
    }
    for f in &mesh.faces {
        let _ = writeln!(
            out,
            "f {}/{}/{} {}/{}/{} {}/{}/{}",
            f.v[0] + 1,
            f.uv[0] + 1,
            f.n[0] + 1,
            f.v[1] + 1,
            f.uv[1] + 1,
            f.n[1] + 1,
            f.v[2] + 1,
            f.uv[2] + 1,
            f.n[2] + 1
        );
    }
    out
}

pub fn save_mesh(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<(), GeometryError> {
    let path = path.as_ref();
    std::fs::write(path, to_obj_string(mesh))
        .map_err(|e| GeometryError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRIANGLE: &str = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n";

    #[test]
    fn single_triangle() {
        let m = parse_obj(TRIANGLE, "tri").unwrap();
        assert_eq!(m.faces.len(), 1);
        assert_eq!(m.uvs.len(), 3);
        // computed normal of a CCW triangle in the XY plane is +Z
        assert!((m.normals[0] - Vec3::z()).norm() < 1e-12);
    }

    #[test]
    fn missing_uvs() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n";
        assert!(matches!(parse_obj(text, "x"), Err(GeometryError::MissingUVs)));
    }

    #[test]
    fn face_without_uv_reference_is_missing_uvs() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1 2 3\n";
        assert!(matches!(parse_obj(text, "x"), Err(GeometryError::MissingUVs)));
    }

    #[test]
    fn malformed_inputs() {
        for text in [
            "v 0 0\nvt 0 0\n",
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1/1 2/1 9/1\n",
            "v 0 0 0\nv 1 0 0\nvt 0 0\nf 1/1 2/1 2/1\n",
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 2\nf 1/1 2/1 3/1\n",
            "v a b c\n",
        ] {
            assert!(
                matches!(parse_obj(text, "x"), Err(GeometryError::MalformedFile(_))),
                "{text:?}"
            );
        }
    }

    #[test]
    fn quads_are_fan_triangulated() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\nf 1/1 2/2 3/3 4/4\n";
        let m = parse_obj(text, "q").unwrap();
        assert_eq!(m.faces.len(), 2);
        assert_eq!(m.faces[1].v, [0, 2, 3]);
    }

    #[test]
    fn negative_indices() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf -3/-3 -2/-2 -1/-1\n";
        let m = parse_obj(text, "n").unwrap();
        assert_eq!(m.faces[0].v, [0, 1, 2]);
    }
}
