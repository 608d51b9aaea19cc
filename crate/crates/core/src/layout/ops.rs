use serde::{Deserialize, Serialize};

use super::{fit_object, LayoutError};
use crate::geometry::{normalize_angle, snap_micro, snap_micro_vec, OrientedBox, Scene, Vec3};

/// Where a clone goes. Missing extents or yaw are copied from the source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloneTarget {
    pub center: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_extents: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw: Option<f64>,
}

/// An edit of one object. JSON form: `{"op": "move", "object": "chair_1",
/// "delta": [1, 0, 0]}`, `{"op": "rotate", ..., "delta_yaw": 0.5}`,
/// `{"op": "scale", ..., "factor": 1.2}`, `{"op": "remove", ...}` and
/// `{"op": "clone", ..., "box": {"center": [..]}, "new_id": "chair_9"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum ManipulationOp {
    #[serde(alias = "MOVE")]
    Move { object: String, delta: [f64; 3] },
    #[serde(alias = "ROTATE")]
    Rotate { object: String, delta_yaw: f64 },
    #[serde(alias = "SCALE")]
    Scale { object: String, factor: f64 },
    #[serde(alias = "REMOVE")]
    Remove { object: String },
    #[serde(alias = "CLONE")]
    Clone {
        object: String,
        #[serde(rename = "box")]
        destination: CloneTarget,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        new_id: Option<String>,
    },
}

impl ManipulationOp {
    pub fn target(&self) -> &str {
        match self {
            ManipulationOp::Move { object, .. }
            | ManipulationOp::Rotate { object, .. }
            | ManipulationOp::Scale { object, .. }
            | ManipulationOp::Remove { object }
            | ManipulationOp::Clone { object, .. } => object,
        }
    }
}

fn invalid(msg: impl Into<String>) -> LayoutError {
    LayoutError::InvalidOp(msg.into())
}

fn finite(v: &[f64], what: &str) -> Result<(), LayoutError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(invalid(format!("{what} must be finite")))
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn free_id(scene: &Scene, category: &str) -> String {
    let stem: String = category.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect();
    (1..)
        .map(|n| format!("{stem}_{n}"))
        .find(|id| scene.project.object(id).is_none())
        .expect("unbounded search")
}

/// Applies `op` in place and returns the id of the object created or
/// changed. Nothing is modified when an error is returned, and records of
/// other objects are never touched.
pub fn apply_op_mut(scene: &mut Scene, op: &ManipulationOp) -> Result<String, LayoutError> {
    let target = op.target();
    let idx = scene
        .project
        .objects
        .iter()
        .position(|o| o.id == target)
        .ok_or_else(|| LayoutError::UnknownObject(target.to_string()))?;
    let rec = &scene.project.objects[idx];
    let mesh = scene
        .meshes
        .get(&rec.mesh)
        .cloned()
        .ok_or_else(|| invalid(format!("object {target} has no mesh loaded")))?;
    let mut bbox = rec.bbox.clone();

    match op {
        ManipulationOp::Remove { .. } => {
            let id = rec.id.clone();
            scene.project.objects.remove(idx);
            let prov = &mut scene.project.provenance;
            prov.cascade_order.retain(|o| o != &id);
            prov.references.remove(&id);
            scene.prune_assets();
            return Ok(id);
        }
        ManipulationOp::Clone { destination, new_id, .. } => {
            finite(&destination.center, "clone center")?;
            let new_id = match new_id {
                Some(id) if !valid_id(id) => return Err(invalid(format!("object id {id:?} must be [A-Za-z0-9_-]+"))),
                Some(id) if scene.project.object(id).is_some() => return Err(invalid(format!("object {id} already exists"))),
                Some(id) => id.clone(),
                None => free_id(scene, &bbox.category),
            };
            let half = destination.half_extents.map(Vec3::from).unwrap_or(bbox.half_extents);
            let yaw = destination.yaw.unwrap_or(bbox.yaw);
            finite(half.as_slice(), "clone half extents")?;
            finite(&[yaw], "clone yaw")?;
            let dest = OrientedBox::new(
                new_id.clone(),
                bbox.category.clone(),
                snap_micro_vec(destination.center.into()),
                snap_micro_vec(half),
                snap_micro(normalize_angle(yaw)),
            )
            .map_err(|e| invalid(e.to_string()))?;
            let offset = rec.canonical_yaw_offset;
            let mesh_path = rec.mesh.clone();
            let transform = fit_object(&mesh, &dest, offset)?;
            let mut atlas = scene
                .atlases
                .get(target)
                .cloned()
                .ok_or_else(|| invalid(format!("object {target} has no atlas loaded")))?;
            atlas.owner = new_id.clone();
            scene
                .add_object(new_id.clone(), mesh_path, mesh, atlas, dest, transform, offset)
                .map_err(|e| invalid(e.to_string()))?;
            return Ok(new_id);
        }
        ManipulationOp::Move { delta, .. } => {
            finite(delta, "delta")?;
            bbox.center = snap_micro_vec(bbox.center + Vec3::from(*delta));
        }
        ManipulationOp::Rotate { delta_yaw, .. } => {
            finite(&[*delta_yaw], "delta_yaw")?;
            bbox.yaw = snap_micro(normalize_angle(bbox.yaw + delta_yaw));
        }
        ManipulationOp::Scale { factor, .. } => {
            if !(factor.is_finite() && *factor > 0.0) {
                return Err(invalid(format!("scale factor {factor} must be positive")));
            }
            let bottom = bbox.bottom();
            bbox.half_extents = snap_micro_vec(bbox.half_extents * *factor);
            bbox.center.y = snap_micro(bottom + bbox.half_extents.y);
        }
    }
    bbox.validate().map_err(|e| invalid(e.to_string()))?;
    let transform = fit_object(&mesh, &bbox, rec.canonical_yaw_offset)?;
    let rec = &mut scene.project.objects[idx];
    rec.bbox = bbox;
    rec.transform = transform;
    Ok(rec.id.clone())
}

/// Pure form of [`apply_op_mut`].
pub fn apply_op(scene: &Scene, op: &ManipulationOp) -> Result<Scene, LayoutError> {
    let mut next = scene.clone();
    apply_op_mut(&mut next, op)?;
    Ok(next)
}
