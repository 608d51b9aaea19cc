//! End-to-end orchestration: load meshes, lay out boxes, place objects,
//! stylize them in cascade, save the project and render the configured
//! cameras.

mod config;
mod eval;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbaImage;
use thiserror::Error;

use crate::geometry::{
    load_mesh, save_project, snap_micro, snap_micro_vec, write_atomic, Camera, GeometryError, OrientedBox, Scene,
    SceneProject, TextureAtlas, TriangleMesh,
};
use crate::layout::{fit_object, request_layout, Layout, LayoutError, DEFAULT_PENETRATION_TOL};
use crate::raster::{rasterize_scene, RasterError, RenderItem};
use crate::synth::{exemplars_for, LayoutLlm, LayoutRequest, TextureSynthesizer};
use crate::texturing::{cascade_stylize, CascadeObserver, CascadeOptions, CascadeReport, TexturingError};

pub use config::{BackendSpec, CameraSpec, LayoutBox, LayoutFile, LayoutSource, ObjectSpec, PipelineConfig, RoomSpec, ViewSpec};
pub use eval::{eval_renders, histogram_chi_square, style_consistency_proxy, EvalReport, ScoreSummary, ScorerStatus};

pub const STAGE_LOAD_MESHES: &str = "load_meshes";
pub const STAGE_LAYOUT: &str = "layout";
pub const STAGE_PLACEMENT: &str = "placement";
pub const STAGE_CASCADE: &str = "cascade_stylize";
pub const STAGE_SAVE: &str = "save_project";
pub const STAGE_RENDER: &str = "render";

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Texturing(#[from] TexturingError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {source}")]
    Stage { stage: &'static str, source: StageError },
}

impl PipelineError {
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            PipelineError::Stage { stage, .. } => Some(stage),
            PipelineError::Config(_) => None,
        }
    }

    /// 2 config, 3 backend, 4 layout rejected, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { stage, source } => match source {
                StageError::Layout(LayoutError::LayoutRejected(_)) => 4,
                StageError::Layout(LayoutError::Llm(_)) => 3,
                StageError::Texturing(TexturingError::Synthesis { .. } | TexturingError::Reference(_)) => 3,
                StageError::Geometry(_) if *stage == STAGE_LOAD_MESHES => 2,
                _ => 1,
            },
        }
    }
}

fn stage<E: Into<StageError>>(stage: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage { stage, source: e.into() }
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub scene: Scene,
    pub project_dir: PathBuf,
    pub cascade: CascadeReport,
    pub renders: Vec<PathBuf>,
}

/// Multi-object z-buffered render with each object's atlas. Background
/// pixels are transparent black.
pub fn render_scene(scene: &Scene, camera: &Camera) -> Result<RgbaImage, RasterError> {
    let items: Vec<RenderItem<'_>> = scene
        .project
        .objects
        .iter()
        .filter_map(|o| {
            let mesh = scene.meshes.get(&o.mesh)?;
            Some(RenderItem::new(mesh, o.transform, scene.atlases.get(&o.id)))
        })
        .collect();
    Ok(rasterize_scene(&items, camera)?.color_image())
}

pub fn png_bytes(img: &RgbaImage) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).expect("in-memory png encode");
    buf.into_inner()
}

/// Runs the pipeline with the backend and layout model named in the config.
/// Relative paths resolve against `base_dir`.
pub fn run_pipeline(config: &PipelineConfig, base_dir: &Path) -> Result<PipelineOutcome, PipelineError> {
    config.validate()?;
    let backend = config.backend.build()?;
    let llm = match &config.layout {
        LayoutSource::Llm { endpoint, model, timeout_ms, .. } => Some(config::build_llm(endpoint, model, *timeout_ms)?),
        LayoutSource::File { .. } => None,
    };
    run_pipeline_with(config, base_dir, backend.as_ref(), llm.as_ref().map(|l| l as &dyn LayoutLlm))
}

struct Persist<'a> {
    dir: &'a Path,
}

impl CascadeObserver for Persist<'_> {
    fn on_view(&mut self, object: &str, completed: usize, total: usize) {
        tracing::debug!(object, completed, total, "view done");
    }

    fn on_object(&mut self, scene: &Scene, object: &str) -> Result<(), String> {
        tracing::info!(object, "object stylized");
        save_project(scene, self.dir).map_err(|e| e.to_string())
    }
}

fn mesh_key(path: &Path, taken: &BTreeMap<String, PathBuf>) -> String {
    let stem: String = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "mesh".into())
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    (1..)
        .map(|n| if n == 1 { format!("meshes/{stem}.obj") } else { format!("meshes/{stem}_{n}.obj") })
        .find(|k| taken.get(k).is_none_or(|p| p == path))
        .expect("unbounded search")
}

fn layout_from_file(config: &PipelineConfig, base_dir: &Path, path: &str) -> Result<Layout, PipelineError> {
    let p = config.resolve(base_dir, path);
    let text = std::fs::read_to_string(&p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
    let file: LayoutFile =
        serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
    let room = file.room();
    let mut counts: BTreeMap<String, u32> = BTreeMap::new();
    let mut boxes = Vec::new();
    for b in file.boxes {
        let n = counts.entry(b.category.clone()).or_insert(0);
        *n += 1;
        let id = b.id.clone().unwrap_or_else(|| format!("{}_{n}", b.category));
        let mut center = config::v3(b.center);
        center.y = room.min.y + b.half_extents[1];
        let ob = OrientedBox::new(id, b.category, snap_micro_vec(center), snap_micro_vec(config::v3(b.half_extents)), snap_micro(b.yaw))
            .map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
        boxes.push(ob);
    }
    Ok(Layout { room, boxes })
}

/// Same as [`run_pipeline`] with explicit backend and layout model.
pub fn run_pipeline_with(
    config: &PipelineConfig,
    base_dir: &Path,
    backend: &dyn TextureSynthesizer,
    llm: Option<&dyn LayoutLlm>,
) -> Result<PipelineOutcome, PipelineError> {
    config.validate()?;
    let project_dir = config.resolve(base_dir, &config.output_dir);

    // load_meshes
    let mut sources: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut meshes: Vec<(String, Arc<TriangleMesh>)> = Vec::new();
    let mut loaded: BTreeMap<PathBuf, (String, Arc<TriangleMesh>)> = BTreeMap::new();
    for spec in &config.objects {
        let path = config.resolve(base_dir, &spec.mesh);
        if let Some(hit) = loaded.get(&path) {
            meshes.push(hit.clone());
            continue;
        }
        let mesh = Arc::new(load_mesh(&path).map_err(stage(STAGE_LOAD_MESHES))?);
        let key = mesh_key(&path, &sources);
        sources.insert(key.clone(), path.clone());
        loaded.insert(path, (key.clone(), mesh.clone()));
        meshes.push((key, mesh));
    }

    // layout
    let layout = match &config.layout {
        LayoutSource::File { path } => layout_from_file(config, base_dir, path)?,
        LayoutSource::Llm { room_type, room, .. } => {
            let llm = llm.ok_or_else(|| PipelineError::Config("layout source llm needs a model endpoint".into()))?;
            let mut required = BTreeMap::new();
            for o in &config.objects {
                *required.entry(o.category.clone()).or_insert(0u32) += 1;
            }
            let request = LayoutRequest { room_type: *room_type, room: room.aabb(), required, exemplars: exemplars_for(*room_type) };
            request_layout(llm, &request, DEFAULT_PENETRATION_TOL).map_err(stage(STAGE_LAYOUT))?
        }
    };
    tracing::info!(boxes = layout.boxes.len(), "layout ready");

    // placement: the i-th object of a category takes the i-th box of it
    let mut scene = Scene::new(SceneProject::new(layout.room, config.style_prompt.clone(), config.seed));
    let mut used = vec![false; layout.boxes.len()];
    for (spec, (key, mesh)) in config.objects.iter().zip(&meshes) {
        let slot = layout
            .boxes
            .iter()
            .enumerate()
            .position(|(i, b)| !used[i] && b.category == spec.category)
            .ok_or_else(|| PipelineError::Stage {
                stage: STAGE_PLACEMENT,
                source: StageError::Other(format!("no box left for category {}", spec.category)),
            })?;
        used[slot] = true;
        let mut bbox = layout.boxes[slot].clone();
        if let Some(id) = &spec.id {
            bbox.box_id = id.clone();
        }
        let transform = fit_object(mesh, &bbox, spec.canonical_yaw_offset).map_err(stage(STAGE_PLACEMENT))?;
        let atlas = TextureAtlas::new(bbox.box_id.clone(), config.atlas_size, config.atlas_size).map_err(stage(STAGE_PLACEMENT))?;
        scene
            .add_object(bbox.box_id.clone(), key.clone(), mesh.clone(), atlas, bbox, transform, spec.canonical_yaw_offset)
            .map_err(stage(STAGE_PLACEMENT))?;
    }
    save_project(&scene, &project_dir).map_err(stage(STAGE_PLACEMENT))?;

    // cascade_stylize
    let options = CascadeOptions {
        views: config.views.to_config(),
        reference_camera: config.reference_camera.as_ref().map(|c| c.camera()).transpose()?,
        debug_dir: config.debug_dumps.then(|| project_dir.join("debug")),
        ..Default::default()
    };
    let mut persist = Persist { dir: &project_dir };
    let cascade = cascade_stylize(&mut scene, backend, &config.style_prompt, config.seed, &options, &mut persist)
        .map_err(stage(STAGE_CASCADE))?;

    // save_project
    save_project(&scene, &project_dir).map_err(stage(STAGE_SAVE))?;

    // render
    let mut renders = Vec::new();
    for cam in &config.cameras {
        let camera = cam.camera()?;
        let img = render_scene(&scene, &camera).map_err(stage(STAGE_RENDER))?;
        let out = project_dir.join("renders").join(format!("{}.png", cam.name));
        std::fs::create_dir_all(out.parent().expect("has parent"))
            .map_err(|e| PipelineError::Stage { stage: STAGE_RENDER, source: StageError::Other(e.to_string()) })?;
        write_atomic(&out, &png_bytes(&img)).map_err(stage(STAGE_RENDER))?;
        renders.push(out);
    }
    Ok(PipelineOutcome { scene, project_dir, cascade, renders })
}
