use std::collections::BTreeMap;
use std::path::PathBuf;

use image::RgbaImage;
use sha2::{Digest, Sha256};

use super::{dump_view, schedule_views, stylize_object, StyleContext, StylizeOptions, TexturingError, ViewConfig};
use crate::diffusion::BlendMask;
use crate::geometry::{Aabb, Camera, Scene, TextureAtlas, Vec3, REFERENCE_FILE};
use crate::raster::{render_depth, RenderItem};
use crate::synth::{synthesize, SynthesisRequest, TextureSynthesizer};

/// Which conditioning images objects receive. `GlobalOnly` and `None`
/// exist for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReferenceMode {
    #[default]
    Full,
    GlobalOnly,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOptions {
    pub views: ViewConfig,
    pub stylize: StylizeOptions,
    /// Cap on object-level reference images per object.
    pub max_object_refs: usize,
    pub references: ReferenceMode,
    /// Defaults to [`default_reference_camera`] at 512x512.
    pub reference_camera: Option<Camera>,
    /// Restyle only these objects; `None` restyles all.
    pub objects: Option<Vec<String>>,
    /// Per-view images, trimaps and masks go under `<dir>/<object>/`.
    pub debug_dir: Option<PathBuf>,
}

impl Default for CascadeOptions {
    fn default() -> Self {
        CascadeOptions {
            views: ViewConfig::default(),
            stylize: StylizeOptions::default(),
            max_object_refs: 4,
            references: ReferenceMode::Full,
            reference_camera: None,
            objects: None,
            debug_dir: None,
        }
    }
}

/// Hooks for progress reporting and per-object persistence.
pub trait CascadeObserver {
    fn on_view(&mut self, _object: &str, _completed: usize, _total: usize) {}

    /// Called after each object's atlas is committed to the scene.
    fn on_object(&mut self, _scene: &Scene, _object: &str) -> Result<(), String> {
        Ok(())
    }
}

pub struct NoObserver;

impl CascadeObserver for NoObserver {}

#[derive(Debug, Clone)]
pub struct CascadeReport {
    pub order: Vec<String>,
    pub reference: RgbaImage,
    /// Synthesized view images per object, in schedule order.
    pub view_images: BTreeMap<String, Vec<RgbaImage>>,
}

/// Camera behind the +Z wall and above the room, looking down at the floor
/// center, so the whole room is in view.
pub fn default_reference_camera(room: &Aabb, width: u32, height: u32) -> Camera {
    let c = room.center();
    let e = room.extents();
    let eye = Vec3::new(c.x, room.min.y + 1.6 * e.y.max(1.0), room.max.z + 0.9 * e.z.max(e.x));
    let target = Vec3::new(c.x, room.min.y, c.z);
    let mut cam = Camera::looking_at(eye, target, 60f64.to_radians(), width, height);
    cam.far = cam.far.max(4.0 * (eye - target).norm());
    cam
}

/// Full-frame synthesis conditioned on the depth of the placed scene.
pub fn generate_scene_reference(
    scene: &Scene,
    camera: &Camera,
    prompt: &str,
    backend: &dyn TextureSynthesizer,
    seed: u64,
) -> Result<RgbaImage, TexturingError> {
    if scene.project.objects.is_empty() {
        return Err(TexturingError::EmptyScene);
    }
    let mut items = Vec::with_capacity(scene.project.objects.len());
    for rec in &scene.project.objects {
        let mesh = scene
            .meshes
            .get(&rec.mesh)
            .ok_or_else(|| TexturingError::Invalid(format!("object {} has no mesh", rec.id)))?;
        items.push(RenderItem::new(mesh, rec.transform, None));
    }
    let depth = render_depth(&items, camera)?;
    let (w, h) = (camera.width, camera.height);
    let request = SynthesisRequest {
        prompt: prompt.to_string(),
        width: w,
        height: h,
        depth,
        partial_image: RgbaImage::new(w, h),
        mask: BlendMask::filled(true, &[h as usize, w as usize]),
        reference_images: Vec::new(),
        seed,
    };
    Ok(synthesize(backend, &request).map_err(TexturingError::Reference)?.image)
}

/// Seed for one object, derived from the scene seed and the object id so
/// it does not depend on cascade position.
pub fn object_seed(seed: u64, object_id: &str) -> u64 {
    let d = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(object_id.as_bytes()).finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Up to `k` earlier views: view 0 of each previous object from the most
/// recent back, then view 1 of each, and so on.
fn pick_object_refs(done: &[(String, Vec<RgbaImage>)], k: usize) -> Vec<(String, &RgbaImage)> {
    let mut out = Vec::new();
    let depth = done.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    'outer: for v in 0..depth {
        for (id, views) in done.iter().rev() {
            if out.len() >= k {
                break 'outer;
            }
            if let Some(img) = views.get(v) {
                out.push((format!("{id}#{v}"), img));
            }
        }
    }
    out
}

/// Stylizes objects one after another, largest box first. The scene
/// reference image is generated first; each object is conditioned on it
/// and on views of the objects stylized before it.
///
/// Atlases are committed object by object. If an object fails, objects
/// already committed stay painted, the failing object keeps its previous
/// atlas, and the error says how many of its views completed.
pub fn cascade_stylize(
    scene: &mut Scene,
    backend: &dyn TextureSynthesizer,
    prompt: &str,
    seed: u64,
    options: &CascadeOptions,
    observer: &mut dyn CascadeObserver,
) -> Result<CascadeReport, TexturingError> {
    if scene.project.objects.is_empty() {
        return Err(TexturingError::EmptyScene);
    }
    let mut order: Vec<(f64, String)> =
        scene.project.objects.iter().map(|o| (o.bbox.volume(), o.id.clone())).collect();
    if let Some(only) = &options.objects {
        if let Some(missing) = only.iter().find(|id| scene.project.object(id).is_none()) {
            return Err(TexturingError::Invalid(format!("unknown object {missing}")));
        }
        order.retain(|(_, id)| only.contains(id));
    }
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    let order: Vec<String> = order.into_iter().map(|(_, id)| id).collect();

    let camera = options
        .reference_camera
        .clone()
        .unwrap_or_else(|| default_reference_camera(&scene.project.room, 512, 512));
    let reference = generate_scene_reference(scene, &camera, prompt, backend, seed)?;

    scene.project.style_prompt = prompt.to_string();
    scene.project.seed = seed;
    scene.project.reference_image = Some(REFERENCE_FILE.to_string());
    scene.reference = Some(reference.clone());
    let prov = &mut scene.project.provenance;
    prov.backend = backend.backend_id().to_string();
    prov.deterministic = backend.is_deterministic();
    prov.cascade_order = order.clone();
    for id in &order {
        prov.references.remove(id);
    }

    let mut done: Vec<(String, Vec<RgbaImage>)> = Vec::new();
    for id in &order {
        let mesh = scene
            .mesh_of(id)
            .cloned()
            .ok_or_else(|| TexturingError::Invalid(format!("object {id} has no mesh")))?;
        let (w, h) = scene.atlases.get(id).map(|a| (a.width(), a.height())).unwrap_or((512, 512));
        let mut atlas = TextureAtlas::new(id.clone(), w, h)?;
        let schedule = schedule_views(&mesh, &options.views)?;

        let mut labels = Vec::new();
        let mut context = StyleContext { prompt: prompt.to_string(), seed: object_seed(seed, id), ..Default::default() };
        if options.references != ReferenceMode::None {
            context.global_reference = Some(reference.clone());
            labels.push("scene".to_string());
        }
        if options.references == ReferenceMode::Full {
            for (label, img) in pick_object_refs(&done, options.max_object_refs) {
                labels.push(label);
                context.object_references.push(img.clone());
            }
        }

        let total = schedule.len();
        let debug_dir = options.debug_dir.as_ref().map(|d| d.join(id));
        let images = stylize_object(&mesh, &mut atlas, &schedule, &context, backend, &options.stylize, &mut |k, step| {
            if let Some(dir) = &debug_dir {
                dump_view(dir, k, step)?;
            }
            observer.on_view(id, k + 1, total);
            Ok(())
        })?;

        scene.set_atlas(id, atlas);
        scene.project.provenance.references.insert(id.clone(), labels);
        observer
            .on_object(scene, id)
            .map_err(|reason| TexturingError::Persist { object: id.clone(), reason })?;
        done.push((id.clone(), images));
    }

    Ok(CascadeReport { order, reference, view_images: done.into_iter().collect() })
}
