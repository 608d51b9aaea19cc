//! Meshes, texture atlases, transforms, cameras, boxes and the on-disk
//! scene project format.
//!
//! World conventions: meters, Y up, right-handed, yaw rotates about +Y.
//! An object's canonical front faces +Z.

mod atlas;
mod mesh;
pub mod primitives;
mod project;

use nalgebra::{Matrix3, Matrix4};
use thiserror::Error;

pub use atlas::{TexelState, TextureAtlas};
pub use mesh::{load_mesh, mesh_aabb, parse_obj, save_mesh, to_obj_string, Face, TriangleMesh};
pub use project::{
    canonical_json, load_project, save_project, write_atomic, ObjectRecord, Provenance, Scene,
    SceneProject, REFERENCE_FILE, SCENE_FILE, SCHEMA_VERSION,
};

pub type Vec3 = nalgebra::Vector3<f64>;

/// Nearest texel index for a UV coordinate in an atlas of the given size.
pub fn texel_index_for(uv: [f64; 2], dims: (u32, u32)) -> usize {
    atlas::texel_index(uv, dims.0, dims.1)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error("mesh has no texture coordinates")]
    MissingUVs,
    #[error("mesh is empty")]
    EmptyMesh,
    #[error("io error: {0}")]
    Io(String),
    #[error("unsupported scene schema version {found:?} (expected {expected})")]
    SchemaVersionMismatch { found: Option<u64>, expected: u64 },
    #[error("invalid value: {0}")]
    Invalid(String),
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    if r <= -std::f64::consts::PI {
        r += two_pi;
    }
    r
}

/// Rounds to the micrometer grid used by the canonical scene format.
pub fn snap_micro(x: f64) -> f64 {
    let r = (x * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

pub fn snap_micro_vec(v: Vec3) -> Vec3 {
    v.map(snap_micro)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Aabb { min, max }
    }

    pub fn from_points(points: impl IntoIterator<Item = Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let (min, max) = it.fold((first, first), |(lo, hi), p| (lo.inf(&p), hi.sup(&p)));
        Some(Aabb { min, max })
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extents(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn contains(&self, other: &Aabb, tol: f64) -> bool {
        (0..3).all(|i| other.min[i] >= self.min[i] - tol && other.max[i] <= self.max[i] + tol)
    }
}

/// Placement of an object: `world = R(yaw, pitch, roll) * (scale * local) + translation`
/// with `R = Ry(yaw) * Rx(pitch) * Rz(roll)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub translation: Vec3,
    pub yaw_pitch_roll: [f64; 3],
    pub uniform_scale: f64,
}

impl Default for Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Transform {
    pub fn identity() -> Self {
        Transform {
            translation: Vec3::zeros(),
            yaw_pitch_roll: [0.0; 3],
            uniform_scale: 1.0,
        }
    }

    pub fn new(translation: Vec3, yaw_pitch_roll: [f64; 3], uniform_scale: f64) -> Result<Self, GeometryError> {
        if !(uniform_scale > 0.0) || !uniform_scale.is_finite() {
            return Err(GeometryError::Invalid(format!("uniform_scale must be > 0, got {uniform_scale}")));
        }
        Ok(Transform {
            translation,
            yaw_pitch_roll: yaw_pitch_roll.map(normalize_angle),
            uniform_scale,
        })
    }

    pub fn from_yaw(translation: Vec3, yaw: f64, uniform_scale: f64) -> Result<Self, GeometryError> {
        Self::new(translation, [yaw, 0.0, 0.0], uniform_scale)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        let [yaw, pitch, roll] = self.yaw_pitch_roll;
        rot_y(yaw) * rot_x(pitch) * rot_z(roll)
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation() * (p * self.uniform_scale) + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation() * v
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        let rs = self.rotation() * self.uniform_scale;
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rs);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Transform) -> Transform {
        let r = self.rotation() * other.rotation();
        Transform {
            translation: self.apply(&other.translation),
            yaw_pitch_roll: yaw_pitch_roll_from_matrix(&r),
            uniform_scale: self.uniform_scale * other.uniform_scale,
        }
    }
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Inverse of `Ry * Rx * Rz` for a proper rotation matrix.
fn yaw_pitch_roll_from_matrix(r: &Matrix3<f64>) -> [f64; 3] {
    let sp = (-r[(1, 2)]).clamp(-1.0, 1.0);
    let pitch = sp.asin();
    if sp.abs() < 1.0 - 1e-12 {
        let yaw = r[(0, 2)].atan2(r[(2, 2)]);
        let roll = r[(1, 0)].atan2(r[(1, 1)]);
        [yaw, pitch, roll].map(normalize_angle)
    } else {
        // gimbal lock: fold roll into yaw
        let yaw = (-r[(2, 0)]).atan2(r[(0, 0)]);
        [normalize_angle(yaw), pitch, 0.0]
    }
}

/// Yaw-rotated box prescribing where an object goes and how big it may be.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedBox {
    pub box_id: String,
    pub category: String,
    pub center: Vec3,
    pub half_extents: Vec3,
    pub yaw: f64,
}

impl OrientedBox {
    pub fn new(
        box_id: impl Into<String>,
        category: impl Into<String>,
        center: Vec3,
        half_extents: Vec3,
        yaw: f64,
    ) -> Result<Self, GeometryError> {
        let b = OrientedBox {
            box_id: box_id.into(),
            category: category.into(),
            center,
            half_extents,
            yaw: normalize_angle(yaw),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.half_extents.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(GeometryError::Invalid(format!(
                "box {}: half extents must be strictly positive",
                self.box_id
            )));
        }
        if self.center.iter().any(|c| !c.is_finite()) || !self.yaw.is_finite() {
            return Err(GeometryError::Invalid(format!("box {}: non-finite pose", self.box_id)));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.x * self.half_extents.y * self.half_extents.z
    }

    pub fn bottom(&self) -> f64 {
        self.center.y - self.half_extents.y
    }

    /// Local x and z axes of the box projected on the floor plane.
    pub fn footprint_axes(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.yaw.sin_cos();
        // columns of Ry(yaw) restricted to (x, z)
        [[c, -s], [s, c]]
    }

    /// Footprint corners as (x, z) pairs.
    pub fn footprint_corners(&self) -> [[f64; 2]; 4] {
        let [ax, az] = self.footprint_axes();
        let (hx, hz) = (self.half_extents.x, self.half_extents.z);
        let (cx, cz) = (self.center.x, self.center.z);
        [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)].map(|(sx, sz)| {
            [
                cx + sx * hx * ax[0] + sz * hz * az[0],
                cz + sx * hx * ax[1] + sz * hz * az[1],
            ]
        })
    }

    pub fn world_aabb(&self) -> Aabb {
        let corners = self.footprint_corners();
        let xs = corners.iter().map(|c| c[0]);
        let zs = corners.iter().map(|c| c[1]);
        let min_x = xs.clone().fold(f64::INFINITY, f64::min);
        let max_x = xs.fold(f64::NEG_INFINITY, f64::max);
        let min_z = zs.clone().fold(f64::INFINITY, f64::min);
        let max_z = zs.fold(f64::NEG_INFINITY, f64::max);
        Aabb::new(
            Vec3::new(min_x, self.center.y - self.half_extents.y, min_z),
            Vec3::new(max_x, self.center.y + self.half_extents.y, max_z),
        )
    }
}

/// Pinhole camera. Pixel (0, 0) is the top-left corner of the image.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    pub vertical_fov: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

/// Orthonormal camera frame: `forward` points into the scene.
#[derive(Debug, Clone, Copy)]
pub struct CameraFrame {
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
}

impl Camera {
    pub fn looking_at(position: Vec3, look_at: Vec3, vertical_fov: f64, width: u32, height: u32) -> Self {
        Camera {
            position,
            look_at,
            up: Vec3::y(),
            vertical_fov,
            width,
            height,
            near: 0.05,
            far: 50.0,
        }
    }

    pub fn validate(&self) -> Result<CameraFrame, String> {
        if self.width == 0 || self.height == 0 {
            return Err("zero resolution".into());
        }
        if !(self.vertical_fov > 0.0 && self.vertical_fov < std::f64::consts::PI) {
            return Err(format!("vertical fov {} outside (0, pi)", self.vertical_fov));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(format!("clip range invalid: near {} far {}", self.near, self.far));
        }
        let dir = self.look_at - self.position;
        let len = dir.norm();
        if !(len > 1e-12) {
            return Err("look_at coincides with position".into());
        }
        let forward = dir / len;
        let right = forward.cross(&self.up);
        let rlen = right.norm();
        if !(rlen > 1e-9) {
            return Err("look direction parallel to up".into());
        }
        let right = right / rlen;
        let up = right.cross(&forward);
        Ok(CameraFrame { right, up, forward })
    }

    pub fn aspect(&self) -> f64 {
        self.width as f64 / self.height as f64
    }

    /// World-space direction (not normalized) through the center of pixel (px, py).
    pub fn pixel_ray(&self, frame: &CameraFrame, px: u32, py: u32) -> Vec3 {
        let t = (self.vertical_fov * 0.5).tan();
        let x = (2.0 * (px as f64 + 0.5) / self.width as f64 - 1.0) * t * self.aspect();
        let y = (1.0 - 2.0 * (py as f64 + 0.5) / self.height as f64) * t;
        frame.forward + frame.right * x + frame.up * y
    }

    /// Parses `px,py,pz,lx,ly,lz,fov_degrees`.
    pub fn parse_spec(spec: &str, width: u32, height: u32) -> Result<Self, GeometryError> {
        let v: Vec<f64> = spec
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| GeometryError::Invalid(format!("bad camera spec {spec:?}")))?;
        if v.len() != 7 {
            return Err(GeometryError::Invalid(format!(
                "camera spec needs 7 numbers (px,py,pz,lx,ly,lz,fov), got {}",
                v.len()
            )));
        }
        let cam = Camera::looking_at(
            Vec3::new(v[0], v[1], v[2]),
            Vec3::new(v[3], v[4], v[5]),
            v[6].to_radians(),
            width,
            height,
        );
        cam.validate().map_err(GeometryError::Invalid)?;
        Ok(cam)
    }
}
