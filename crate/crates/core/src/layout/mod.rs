//! Box-guided placement, layout validation and scene manipulation.
//!
//! Boxes and transforms live on the micrometer grid (see
//! [`snap_micro`]), which is also the precision of `scene.json`. That makes
//! a move followed by the opposite move restore the original state exactly.

mod ops;

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{normalize_angle, rot_y, snap_micro, snap_micro_vec, Aabb, OrientedBox, SceneProject, Transform, TriangleMesh, Vec3};
use crate::synth::{build_layout_prompt, parse_layout_response, LayoutLlm, LayoutPrompt, LayoutRequest, LlmError, ROOM_TOLERANCE};

pub use ops::{apply_op, apply_op_mut, CloneTarget, ManipulationOp};

pub const DEFAULT_PENETRATION_TOL: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayoutError {
    #[error("mesh is empty")]
    EmptyMesh,
    #[error("unknown object {0}")]
    UnknownObject(String),
    #[error("invalid op: {0}")]
    InvalidOp(String),
    #[error("layout rejected: {}", join(.0))]
    LayoutRejected(Vec<Violation>),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    OutOfRoom { object: String },
    Overlap { a: String, b: String, penetration: f64 },
    MissingCategory { category: String, wanted: u32, got: u32 },
    InvalidResponse { reason: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OutOfRoom { object } => write!(f, "{object} is not inside the room"),
            Violation::Overlap { a, b, penetration } => write!(f, "{a} and {b} overlap by {penetration:.3} m"),
            Violation::MissingCategory { category, wanted, got } => {
                write!(f, "expected {wanted} {category}, got {got}")
            }
            Violation::InvalidResponse { reason } => write!(f, "unusable answer: {reason}"),
        }
    }
}

/// Room bounds and the boxes placed in it.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub room: Aabb,
    pub boxes: Vec<OrientedBox>,
}

/// Places a mesh in a box.
///
/// The mesh is turned by `canonical_yaw_offset` into the box frame, scaled
/// uniformly by the tightest of the three box/mesh extent ratios, centered
/// on the box footprint and lowered so its lowest point rests on the box
/// bottom. The world yaw is `box.yaw + canonical_yaw_offset`.
pub fn fit_object(mesh: &TriangleMesh, bbox: &OrientedBox, canonical_yaw_offset: f64) -> Result<Transform, LayoutError> {
    if mesh.is_empty() {
        return Err(LayoutError::EmptyMesh);
    }
    let turn = rot_y(canonical_yaw_offset);
    let local = Aabb::from_points(mesh.positions.iter().map(|p| turn * p)).ok_or(LayoutError::EmptyMesh)?;
    let ext = local.extents();
    let scale = (0..3)
        .filter(|&i| ext[i] > 1e-12)
        .map(|i| 2.0 * bbox.half_extents[i] / ext[i])
        .fold(f64::INFINITY, f64::min);
    if !scale.is_finite() {
        return Err(LayoutError::InvalidOp(format!("mesh {} is a single point", mesh.object_id)));
    }
    // round down so the grid never pushes the mesh out of its box
    let scale = {
        let s = (scale * 1e6).floor() / 1e6;
        if s > 0.0 {
            s
        } else {
            scale
        }
    };
    let c = local.center();
    let offset_in_box = Vec3::new(-scale * c.x, 0.0, -scale * c.z);
    let mut t = Vec3::new(bbox.center.x, 0.0, bbox.center.z) + rot_y(bbox.yaw) * offset_in_box;
    t.y = bbox.bottom() - scale * local.min.y;
    let yaw = snap_micro(normalize_angle(bbox.yaw + canonical_yaw_offset));
    Transform::new(snap_micro_vec(t), [yaw, 0.0, 0.0], scale).map_err(|e| LayoutError::InvalidOp(e.to_string()))
}

fn interval_overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    a.1.min(b.1) - a.0.max(b.0)
}

fn project(corners: &[[f64; 2]; 4], axis: [f64; 2]) -> (f64, f64) {
    corners.iter().map(|c| c[0] * axis[0] + c[1] * axis[1]).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
        (lo.min(d), hi.max(d))
    })
}

/// Depth of overlap between two boxes: the smaller of the footprint
/// separating-axis penetration and the vertical overlap. Non-positive means
/// the boxes are apart.
pub fn box_penetration(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let vertical = interval_overlap((a.bottom(), a.center.y + a.half_extents.y), (b.bottom(), b.center.y + b.half_extents.y));
    let (ca, cb) = (a.footprint_corners(), b.footprint_corners());
    let [a0, a1] = a.footprint_axes();
    let [b0, b1] = b.footprint_axes();
    let footprint = [a0, a1, b0, b1]
        .iter()
        .map(|axis| interval_overlap(project(&ca, *axis), project(&cb, *axis)))
        .fold(f64::INFINITY, f64::min);
    footprint.min(vertical)
}

fn inside_room(room: &Aabb, b: &OrientedBox) -> bool {
    room.contains(&b.world_aabb(), ROOM_TOLERANCE)
}

/// Out-of-room boxes and pairs overlapping by more than `penetration_tol`.
pub fn validate_boxes(room: &Aabb, boxes: &[(&str, &OrientedBox)], penetration_tol: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    for (id, b) in boxes {
        if !inside_room(room, b) {
            out.push(Violation::OutOfRoom { object: id.to_string() });
        }
    }
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            // evaluate in id order so the result does not depend on argument order
            let (p, q) = if boxes[i].0 <= boxes[j].0 { (boxes[i], boxes[j]) } else { (boxes[j], boxes[i]) };
            let pen = box_penetration(p.1, q.1);
            if pen > penetration_tol {
                out.push(Violation::Overlap { a: p.0.to_string(), b: q.0.to_string(), penetration: pen });
            }
        }
    }
    out
}

pub fn validate_scene(project: &SceneProject, penetration_tol: f64) -> Vec<Violation> {
    let boxes: Vec<(&str, &OrientedBox)> = project.objects.iter().map(|o| (o.id.as_str(), &o.bbox)).collect();
    validate_boxes(&project.room, &boxes, penetration_tol)
}

fn violation_key(v: &Violation) -> Option<String> {
    match v {
        Violation::OutOfRoom { object } => Some(format!("room:{object}")),
        Violation::Overlap { a, b, .. } => {
            let (a, b) = if a <= b { (a, b) } else { (b, a) };
            Some(format!("overlap:{a}:{b}"))
        }
        _ => None,
    }
}

/// Violations in `after` that involve `object` and were not already present
/// in `before`. An edit that makes things no worse yields nothing.
pub fn introduced_violations(before: &SceneProject, after: &SceneProject, object: &str, penetration_tol: f64) -> Vec<Violation> {
    let known: std::collections::BTreeSet<String> =
        validate_scene(before, penetration_tol).iter().filter_map(violation_key).collect();
    validate_scene(after, penetration_tol)
        .into_iter()
        .filter(|v| match v {
            Violation::OutOfRoom { object: o } => o == object,
            Violation::Overlap { a, b, .. } => a == object || b == object,
            _ => false,
        })
        .filter(|v| violation_key(v).is_some_and(|k| !known.contains(&k)))
        .collect()
}

impl Layout {
    pub fn validate(&self, penetration_tol: f64) -> Vec<Violation> {
        let boxes: Vec<(&str, &OrientedBox)> = self.boxes.iter().map(|b| (b.box_id.as_str(), b)).collect();
        validate_boxes(&self.room, &boxes, penetration_tol)
    }
}

fn check_layout(request: &LayoutRequest, text: &str, tol: f64) -> Result<Layout, Vec<Violation>> {
    let boxes = parse_layout_response(text, &request.room)
        .map_err(|e| vec![Violation::InvalidResponse { reason: e.to_string() }])?;
    let layout = Layout { room: request.room, boxes };
    let mut violations = layout.validate(tol);
    for (category, wanted) in &request.required {
        let got = layout.boxes.iter().filter(|b| &b.category == category).count() as u32;
        if got < *wanted {
            violations.push(Violation::MissingCategory { category: category.clone(), wanted: *wanted, got });
        }
    }
    if violations.is_empty() {
        Ok(layout)
    } else {
        Err(violations)
    }
}

/// Asks the LLM for a layout, retrying once with the problems of the first
/// answer appended to the prompt.
pub fn request_layout(llm: &dyn LayoutLlm, request: &LayoutRequest, penetration_tol: f64) -> Result<Layout, LayoutError> {
    let prompt = build_layout_prompt(request)?;
    let first = llm.complete(&prompt)?;
    let violations = match check_layout(request, &first, penetration_tol) {
        Ok(layout) => return Ok(layout),
        Err(v) => v,
    };
    let mut user = prompt.user.clone();
    user.push_str("\nYour previous answer had these problems:\n");
    for v in &violations {
        user.push_str(&format!("- {v}\n"));
    }
    user.push_str("Fix them and answer again with only the JSON array.\n");
    let retry = LayoutPrompt { system: prompt.system, user };
    let second = llm.complete(&retry)?;
    check_layout(request, &second, penetration_tol).map_err(LayoutError::LayoutRejected)
}
