//! Scene project directory: `scene.json` plus one OBJ per distinct mesh,
//! one PNG atlas per object and an optional reference image.
//!
//! `scene.json` is written canonically (sorted keys, 6-decimal floats,
//! two-space indent) so equal projects produce equal bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use image::RgbaImage;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use super::{load_mesh, to_obj_string, Aabb, GeometryError, OrientedBox, TextureAtlas, Transform, TriangleMesh, Vec3};

pub const SCHEMA_VERSION: u64 = 1;
pub const SCENE_FILE: &str = "scene.json";
pub const REFERENCE_FILE: &str = "reference.png";

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRecord {
    pub id: String,
    /// Mesh path relative to the project directory. Clones share it.
    pub mesh: String,
    /// Atlas path relative to the project directory. Never shared.
    pub atlas: String,
    pub atlas_sha256: String,
    pub bbox: OrientedBox,
    pub transform: Transform,
    pub canonical_yaw_offset: f64,
}

/// Where the textures came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend: String,
    /// False when a non-deterministic (remote) backend produced the textures.
    pub deterministic: bool,
    pub cascade_order: Vec<String>,
    /// Per object, the conditioning images it received: `scene` for the
    /// global reference and `<object>#<view>` for object-level views.
    pub references: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneProject {
    pub version: u64,
    pub pipeline_version: String,
    pub room: Aabb,
    pub style_prompt: String,
    pub seed: u64,
    pub reference_image: Option<String>,
    pub objects: Vec<ObjectRecord>,
    pub provenance: Provenance,
}

impl SceneProject {
    pub fn new(room: Aabb, style_prompt: impl Into<String>, seed: u64) -> Self {
        SceneProject {
            version: SCHEMA_VERSION,
            pipeline_version: concat!("scenestyle ", env!("CARGO_PKG_VERSION")).to_string(),
            room,
            style_prompt: style_prompt.into(),
            seed,
            reference_image: None,
            objects: Vec::new(),
            provenance: Provenance::default(),
        }
    }

    pub fn object(&self, id: &str) -> Option<&ObjectRecord> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        canonical_json(&doc::SceneDoc::from(self))
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self, GeometryError> {
        let value: serde_json::Value = serde_json::from_slice(bytes)
            .map_err(|e| GeometryError::MalformedFile(format!("scene.json: {e}")))?;
        let found = value.get("version").and_then(|v| v.as_u64());
        if found != Some(SCHEMA_VERSION) {
            return Err(GeometryError::SchemaVersionMismatch { found, expected: SCHEMA_VERSION });
        }
        let doc: doc::SceneDoc = serde_json::from_value(value)
            .map_err(|e| GeometryError::MalformedFile(format!("scene.json: {e}")))?;
        doc.try_into()
    }

    /// Canonical bytes of one object record, used to check that edits leave
    /// other objects untouched.
    pub fn record_bytes(&self, id: &str) -> Option<Vec<u8>> {
        self.object(id).map(|o| canonical_json(&doc::ObjectDoc::from(o)))
    }
}

/// A project together with its loaded assets.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub project: SceneProject,
    /// Keyed by the record's mesh path.
    pub meshes: BTreeMap<String, Arc<TriangleMesh>>,
    /// Keyed by object id.
    pub atlases: BTreeMap<String, TextureAtlas>,
    pub reference: Option<RgbaImage>,
}

impl Scene {
    pub fn new(project: SceneProject) -> Self {
        Scene {
            project,
            meshes: BTreeMap::new(),
            atlases: BTreeMap::new(),
            reference: None,
        }
    }

    pub fn mesh_of(&self, id: &str) -> Option<&Arc<TriangleMesh>> {
        self.project.object(id).and_then(|o| self.meshes.get(&o.mesh))
    }

    pub fn add_object(
        &mut self,
        id: impl Into<String>,
        mesh_path: impl Into<String>,
        mesh: Arc<TriangleMesh>,
        atlas: TextureAtlas,
        bbox: OrientedBox,
        transform: Transform,
        canonical_yaw_offset: f64,
    ) -> Result<(), GeometryError> {
        let id = id.into();
        if self.project.object(&id).is_some() {
            return Err(GeometryError::Invalid(format!("duplicate object id {id}")));
        }
        let mesh_path = mesh_path.into();
        if let Some(existing) = self.meshes.get(&mesh_path) {
            if existing.as_ref() != mesh.as_ref() {
                return Err(GeometryError::Invalid(format!("mesh path {mesh_path} already holds a different mesh")));
            }
        } else {
            self.meshes.insert(mesh_path.clone(), mesh);
        }
        self.project.objects.push(ObjectRecord {
            id: id.clone(),
            mesh: mesh_path,
            atlas: format!("atlases/{id}.png"),
            atlas_sha256: atlas.content_hash(),
            bbox,
            transform,
            canonical_yaw_offset,
        });
        self.atlases.insert(id, atlas);
        Ok(())
    }

    /// Recomputes every record's atlas hash from the in-memory atlas.
    pub fn refresh_atlas_hashes(&mut self) {
        for rec in &mut self.project.objects {
            if let Some(a) = self.atlases.get(&rec.id) {
                rec.atlas_sha256 = a.content_hash();
            }
        }
    }

    pub fn set_atlas(&mut self, id: &str, atlas: TextureAtlas) {
        if let Some(rec) = self.project.objects.iter_mut().find(|o| o.id == id) {
            rec.atlas_sha256 = atlas.content_hash();
        }
        self.atlases.insert(id.to_string(), atlas);
    }

    /// Drops meshes and atlases no longer referenced by any record.
    pub fn prune_assets(&mut self) {
        let meshes: BTreeSet<&str> = self.project.objects.iter().map(|o| o.mesh.as_str()).collect();
        let ids: BTreeSet<&str> = self.project.objects.iter().map(|o| o.id.as_str()).collect();
        self.meshes.retain(|k, _| meshes.contains(k.as_str()));
        self.atlases.retain(|k, _| ids.contains(k.as_str()));
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> GeometryError {
    GeometryError::Io(format!("{}: {e}", path.display()))
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), GeometryError> {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(
        ".{name}.tmp.{}.{}",
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let result = (|| -> io::Result<()> {
        use std::io::Write;
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(io_err(path, e));
    }
    Ok(())
}

fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<(), GeometryError> {
    match std::fs::read(path) {
        Ok(existing) if existing == bytes => Ok(()),
        _ => write_atomic(path, bytes),
    }
}

fn check_relative(p: &str) -> Result<(), GeometryError> {
    let path = Path::new(p);
    if path.is_absolute() || path.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
        return Err(GeometryError::Invalid(format!("asset path {p:?} must stay inside the project")));
    }
    Ok(())
}

/// Saves assets first and `scene.json` last, then removes asset files no
/// longer referenced. A crash at any point leaves a loadable project.
pub fn save_project(scene: &Scene, dir: impl AsRef<Path>) -> Result<(), GeometryError> {
    let dir = dir.as_ref();
    let mut project = scene.project.clone();
    for rec in &mut project.objects {
        check_relative(&rec.mesh)?;
        check_relative(&rec.atlas)?;
        let atlas = scene
            .atlases
            .get(&rec.id)
            .ok_or_else(|| GeometryError::Invalid(format!("object {} has no atlas", rec.id)))?;
        rec.atlas_sha256 = atlas.content_hash();
        if !scene.meshes.contains_key(&rec.mesh) {
            return Err(GeometryError::Invalid(format!("object {} has no mesh", rec.id)));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    for (rel, mesh) in &scene.meshes {
        if !project.objects.iter().any(|o| &o.mesh == rel) {
            continue;
        }
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        write_if_changed(&path, to_obj_string(mesh).as_bytes())?;
    }
    for rec in &project.objects {
        let path = dir.join(&rec.atlas);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        write_if_changed(&path, &scene.atlases[&rec.id].to_png_bytes())?;
    }
    match (&scene.reference, &project.reference_image) {
        (Some(img), Some(rel)) => {
            check_relative(rel)?;
            let mut buf = io::Cursor::new(Vec::new());
            img.write_to(&mut buf, image::ImageFormat::Png)
                .map_err(|e| io_err(&dir.join(rel), e))?;
            write_if_changed(&dir.join(rel), buf.get_ref())?;
        }
        (None, Some(_)) => project.reference_image = None,
        _ => {}
    }

    write_atomic(&dir.join(SCENE_FILE), &project.to_json_bytes())?;
    collect_garbage(dir, &project)
}

fn collect_garbage(dir: &Path, project: &SceneProject) -> Result<(), GeometryError> {
    let keep: BTreeSet<PathBuf> = project
        .objects
        .iter()
        .flat_map(|o| [dir.join(&o.mesh), dir.join(&o.atlas)])
        .collect();
    for sub in ["meshes", "atlases"] {
        let d = dir.join(sub);
        let Ok(entries) = std::fs::read_dir(&d) else { continue };
        for entry in entries.flatten() {
            let p = entry.path();
            let name = entry.file_name();
            // leave other writers' temp files alone
            if name.to_string_lossy().starts_with('.') {
                continue;
            }
            if p.is_file() && !keep.contains(&p) {
                std::fs::remove_file(&p).map_err(|e| io_err(&p, e))?;
            }
        }
    }
    Ok(())
}

pub fn load_project(dir: impl AsRef<Path>) -> Result<Scene, GeometryError> {
    let dir = dir.as_ref();
    let path = dir.join(SCENE_FILE);
    let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
    let project = SceneProject::from_json_bytes(&bytes)?;

    let mut scene = Scene::new(project);
    for rec in &scene.project.objects {
        check_relative(&rec.mesh)?;
        check_relative(&rec.atlas)?;
        if !scene.meshes.contains_key(&rec.mesh) {
            let mesh = load_mesh(dir.join(&rec.mesh))?;
            scene.meshes.insert(rec.mesh.clone(), Arc::new(mesh));
        }
        let atlas = TextureAtlas::load_png(rec.id.clone(), dir.join(&rec.atlas))?;
        scene.atlases.insert(rec.id.clone(), atlas);
    }
    if let Some(rel) = &scene.project.reference_image {
        check_relative(rel)?;
        let p = dir.join(rel);
        let img = image::open(&p).map_err(|e| io_err(&p, e))?.to_rgba8();
        scene.reference = Some(img);
    }
    Ok(scene)
}

/// Pretty JSON with sorted keys and every float printed with 6 decimals.
pub fn canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    // round-tripping through Value sorts object keys
    let value = serde_json::to_value(value).expect("serializable document");
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, CanonicalFormatter::default());
    value.serialize(&mut ser).expect("in-memory json write");
    out.push(b'\n');
    out
}

#[derive(Default)]
struct CanonicalFormatter {
    pretty: PrettyFormatter<'static>,
}

impl Formatter for CanonicalFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        let rounded = (value * 1e6).round() / 1e6;
        let rounded = if rounded == 0.0 { 0.0 } else { rounded };
        write!(writer, "{rounded:.6}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.pretty.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.pretty.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_object_value(w)
    }
}

/// Wire/disk shapes of the scene document.
pub(crate) mod doc {
    use super::*;

    fn v3(v: &Vec3) -> [f64; 3] {
        [v.x, v.y, v.z]
    }

    #[derive(Debug, Serialize, Deserialize)]
    pub struct RoomDoc {
        pub min: [f64; 3],
        pub max: [f64; 3],
    }

    #[derive(Debug, Serialize, Deserialize)]
    pub struct BoxDoc {
        pub center: [f64; 3],
        pub half_extents: [f64; 3],
        pub yaw: f64,
        pub category: String,
    }

    impl BoxDoc {
        pub fn from_box(b: &OrientedBox) -> Self {
            BoxDoc {
                center: v3(&b.center),
                half_extents: v3(&b.half_extents),
                yaw: b.yaw,
                category: b.category.clone(),
            }
        }

        pub fn into_box(self, id: &str) -> Result<OrientedBox, GeometryError> {
            OrientedBox::new(id, self.category, self.center.into(), self.half_extents.into(), self.yaw)
        }
    }

    #[derive(Debug, Serialize, Deserialize)]
    pub struct TransformDoc {
        pub t: [f64; 3],
        pub ypr: [f64; 3],
        pub s: f64,
    }

    #[derive(Debug, Serialize, Deserialize)]
    pub struct ObjectDoc {
        pub id: String,
        pub mesh: String,
        pub atlas: String,
        pub atlas_sha256: String,
        #[serde(rename = "box")]
        pub bbox: BoxDoc,
        pub transform: TransformDoc,
        pub canonical_yaw_offset: f64,
    }

    impl From<&ObjectRecord> for ObjectDoc {
        fn from(o: &ObjectRecord) -> Self {
            ObjectDoc {
                id: o.id.clone(),
                mesh: o.mesh.clone(),
                atlas: o.atlas.clone(),
                atlas_sha256: o.atlas_sha256.clone(),
                bbox: BoxDoc::from_box(&o.bbox),
                transform: TransformDoc {
                    t: v3(&o.transform.translation),
                    ypr: o.transform.yaw_pitch_roll,
                    s: o.transform.uniform_scale,
                },
                canonical_yaw_offset: o.canonical_yaw_offset,
            }
        }
    }

    #[derive(Debug, Serialize, Deserialize)]
    pub struct SceneDoc {
        pub version: u64,
        pub pipeline_version: String,
        pub room: RoomDoc,
        pub style_prompt: String,
        pub seed: u64,
        pub reference_image: Option<String>,
        pub objects: Vec<ObjectDoc>,
        #[serde(default)]
        pub provenance: Provenance,
    }

    impl From<&SceneProject> for SceneDoc {
        fn from(p: &SceneProject) -> Self {
            SceneDoc {
                version: p.version,
                pipeline_version: p.pipeline_version.clone(),
                room: RoomDoc { min: v3(&p.room.min), max: v3(&p.room.max) },
                style_prompt: p.style_prompt.clone(),
                seed: p.seed,
                reference_image: p.reference_image.clone(),
                objects: p.objects.iter().map(ObjectDoc::from).collect(),
                provenance: p.provenance.clone(),
            }
        }
    }

    impl TryFrom<SceneDoc> for SceneProject {
        type Error = GeometryError;

        fn try_from(d: SceneDoc) -> Result<Self, GeometryError> {
            let mut seen = BTreeSet::new();
            let mut objects = Vec::with_capacity(d.objects.len());
            for o in d.objects {
                if !seen.insert(o.id.clone()) {
                    return Err(GeometryError::MalformedFile(format!("duplicate object id {}", o.id)));
                }
                let bbox = o.bbox.into_box(&o.id)?;
                let transform = Transform::new(o.transform.t.into(), o.transform.ypr, o.transform.s)?;
                objects.push(ObjectRecord {
                    id: o.id,
                    mesh: o.mesh,
                    atlas: o.atlas,
                    atlas_sha256: o.atlas_sha256,
                    bbox,
                    transform,
                    canonical_yaw_offset: o.canonical_yaw_offset,
                });
            }
            Ok(SceneProject {
                version: d.version,
                pipeline_version: d.pipeline_version,
                room: Aabb::new(d.room.min.into(), d.room.max.into()),
                style_prompt: d.style_prompt,
                seed: d.seed,
                reference_image: d.reference_image,
                objects,
                provenance: d.provenance,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_use_six_decimals_and_keys_are_sorted() {
        #[derive(Serialize)]
        struct T {
            zeta: f64,
            alpha: f64,
            count: u64,
        }
        let s = String::from_utf8(canonical_json(&T { zeta: 1.0 / 3.0, alpha: -0.0000001, count: 7 })).unwrap();
        assert_eq!(s, "{\n  \"alpha\": 0.000000,\n  \"count\": 7,\n  \"zeta\": 0.333333\n}\n");
    }

    #[test]
    fn unknown_version_is_rejected() {
        let room = Aabb::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0));
        let p = SceneProject::new(room, "x", 1);
        let text = String::from_utf8(p.to_json_bytes()).unwrap().replace("\"version\": 1", "\"version\": 99");
        assert!(matches!(
            SceneProject::from_json_bytes(text.as_bytes()),
            Err(GeometryError::SchemaVersionMismatch { found: Some(99), .. })
        ));
    }
}
