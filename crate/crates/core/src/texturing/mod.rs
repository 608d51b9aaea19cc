//! Multi-view mesh texturing: view scheduling, trimaps, backprojection and
//! the cascaded multi-object stylization loop.
//!
//! Each view is rasterized against the object's current atlas. Pixels whose
//! texel is still unpainted are generated, pixels that see an already
//! painted texel from a clearly better angle are regenerated, and the rest
//! are kept. The synthesized view is then written back into the atlas
//! through the rasterizer's UV correspondence.

mod cascade;
mod debug;

use std::collections::BTreeMap;
use std::path::Path;

use image::RgbaImage;
use thiserror::Error;

use crate::diffusion::BlendMask;
use crate::geometry::{Camera, GeometryError, TextureAtlas, Transform, TriangleMesh, Vec3};
use crate::raster::{rasterize, DepthImage, FrameBuffers, RasterError};
use crate::synth::{synthesize, SynthError, SynthesisRequest, TextureSynthesizer};

pub use cascade::{
    cascade_stylize, default_reference_camera, generate_scene_reference, object_seed, CascadeObserver, CascadeOptions,
    CascadeReport, NoObserver, ReferenceMode,
};
pub use debug::trimap_png;

pub const DEFAULT_UPDATE_MARGIN: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TexturingError {
    #[error("mesh is empty")]
    EmptyMesh,
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("atlas of {0} has painted texels; stylization needs a fresh atlas")]
    AtlasNotUntouched(String),
    #[error("scene has no objects")]
    EmptyScene,
    #[error("object {object}: view {view} failed after {completed_views} completed views: {source}")]
    Synthesis { object: String, view: usize, completed_views: usize, source: SynthError },
    #[error("reference image: {0}")]
    Reference(SynthError),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("persisting {object}: {reason}")]
    Persist { object: String, reason: String },
    #[error("invalid: {0}")]
    Invalid(String),
    #[error("debug dump: {0}")]
    Debug(String),
}

impl From<GeometryError> for TexturingError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::EmptyMesh => TexturingError::EmptyMesh,
            other => TexturingError::Invalid(other.to_string()),
        }
    }
}

/// How the predefined views around an object are laid out.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewConfig {
    pub n_azimuth: usize,
    /// Radians above the horizon, visited in order.
    pub elevations: Vec<f64>,
    pub include_top: bool,
    /// Camera distance in bounding-sphere radii; must exceed 1.
    pub distance_factor: f64,
    pub resolution: u32,
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig {
            n_azimuth: 8,
            elevations: vec![0.0, 30f64.to_radians()],
            include_top: true,
            distance_factor: 2.0,
            resolution: 512,
        }
    }
}

impl ViewConfig {
    /// Number of views [`schedule_views`] produces.
    pub fn view_count(&self) -> usize {
        self.n_azimuth * self.elevations.len() + usize::from(self.include_top)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledView {
    pub camera: Camera,
    /// Radians; 0 looks at the object's front (+Z side).
    pub azimuth: f64,
    pub elevation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSchedule {
    /// `views[0]` is the front view.
    pub views: Vec<ScheduledView>,
    pub center: Vec3,
    pub radius: f64,
}

impl ViewSchedule {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}

/// Azimuths front first, then alternating +step, -step, +2 step, ...
fn azimuth_order(n: usize) -> Vec<f64> {
    let step = std::f64::consts::TAU / n as f64;
    let mut out = vec![0.0];
    let mut j = 1;
    while out.len() < n {
        out.push(j as f64 * step);
        if out.len() < n {
            out.push(-(j as f64) * step);
        }
        j += 1;
    }
    out
}

/// Cameras on a sphere around the mesh's bounding sphere, in the mesh's
/// local frame. The field of view is fitted so the whole bounding sphere is
/// in frame.
pub fn schedule_views(mesh: &TriangleMesh, config: &ViewConfig) -> Result<ViewSchedule, TexturingError> {
    if config.n_azimuth == 0 {
        return Err(TexturingError::Invalid("n_azimuth must be at least 1".into()));
    }
    if !(config.distance_factor > 1.0) {
        return Err(TexturingError::Invalid(format!(
            "distance factor {} puts the camera inside the bounding sphere",
            config.distance_factor
        )));
    }
    if config.resolution == 0 {
        return Err(TexturingError::Invalid("zero resolution".into()));
    }
    let (center, radius) = mesh.bounding_sphere()?;
    let radius = radius.max(1e-6);
    let dist = config.distance_factor * radius;
    let fov = 2.0 * (1.05 / config.distance_factor).min(1.0).asin();
    let near = ((dist - radius) * 0.5).max(1e-4);
    let far = dist + 2.0 * radius;
    let camera_at = |pos: Vec3, up: Vec3| Camera {
        position: pos,
        look_at: center,
        up,
        vertical_fov: fov,
        width: config.resolution,
        height: config.resolution,
        near,
        far,
    };

    let mut views = Vec::new();
    let azimuths = azimuth_order(config.n_azimuth);
    for &elevation in &config.elevations {
        for &azimuth in &azimuths {
            let dir = Vec3::new(elevation.cos() * azimuth.sin(), elevation.sin(), elevation.cos() * azimuth.cos());
            views.push(ScheduledView { camera: camera_at(center + dir * dist, Vec3::y()), azimuth, elevation });
        }
    }
    if config.include_top {
        let top = std::f64::consts::FRAC_PI_2;
        views.push(ScheduledView { camera: camera_at(center + Vec3::y() * dist, -Vec3::z()), azimuth: 0.0, elevation: top });
    }
    if views.is_empty() {
        return Err(TexturingError::Invalid("schedule has no views".into()));
    }
    Ok(ViewSchedule { views, center, radius })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PixelState {
    Generate,
    Update,
    Keep,
    Background,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trimap {
    pub width: u32,
    pub height: u32,
    pub states: Vec<PixelState>,
}

impl Trimap {
    pub fn count(&self, state: PixelState) -> usize {
        self.states.iter().filter(|s| **s == state).count()
    }
}

/// Which texels have been painted and from how good an angle.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageBuffer {
    pub width: u32,
    pub height: u32,
    pub painted: Vec<bool>,
    /// Zero exactly where the texel is unpainted.
    pub best_cosine: Vec<f32>,
}

impl CoverageBuffer {
    pub fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        CoverageBuffer { width, height, painted: vec![false; n], best_cosine: vec![0.0; n] }
    }

    pub fn for_atlas(atlas: &TextureAtlas) -> Self {
        Self::new(atlas.width(), atlas.height())
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn painted_count(&self) -> usize {
        self.painted.iter().filter(|p| **p).count()
    }

    fn texel_of(&self, frame: &FrameBuffers, pixel: usize) -> usize {
        crate::geometry::texel_index_for(frame.uv[pixel], self.dims())
    }
}

pub fn build_trimap(frame: &FrameBuffers, coverage: &CoverageBuffer, cos_update_margin: f64) -> Trimap {
    let states = (0..frame.len())
        .map(|i| {
            if !frame.is_covered(i) {
                return PixelState::Background;
            }
            let t = coverage.texel_of(frame, i);
            if !coverage.painted[t] {
                PixelState::Generate
            } else if frame.view_cosine[i] as f64 > coverage.best_cosine[t] as f64 + cos_update_margin {
                PixelState::Update
            } else {
                PixelState::Keep
            }
        })
        .collect();
    Trimap { width: frame.width, height: frame.height, states }
}

pub fn trimap_to_mask(trimap: &Trimap) -> BlendMask {
    let values = trimap
        .states
        .iter()
        .map(|s| matches!(s, PixelState::Generate | PixelState::Update) as u8)
        .collect();
    BlendMask::new(values, vec![trimap.height as usize, trimap.width as usize]).expect("binary by construction")
}

/// Writes GENERATE and UPDATE pixels into their texels. When several pixels
/// land on one texel the highest view cosine wins, ties going to the lower
/// pixel index. Returns the number of texels written.
pub fn backproject(
    view_image: &RgbaImage,
    frame: &FrameBuffers,
    trimap: &Trimap,
    atlas: &mut TextureAtlas,
    coverage: &mut CoverageBuffer,
) -> Result<usize, TexturingError> {
    if view_image.dimensions() != (frame.width, frame.height) || trimap.states.len() != frame.len() {
        return Err(TexturingError::SizeMismatch(format!(
            "view {:?}, frame {}x{}, trimap {} pixels",
            view_image.dimensions(),
            frame.width,
            frame.height,
            trimap.states.len()
        )));
    }
    if coverage.dims() != (atlas.width(), atlas.height()) {
        return Err(TexturingError::SizeMismatch("coverage buffer does not match the atlas".into()));
    }
    let mut best: BTreeMap<usize, (f32, usize)> = BTreeMap::new();
    for (i, state) in trimap.states.iter().enumerate() {
        if !matches!(state, PixelState::Generate | PixelState::Update) {
            continue;
        }
        let t = coverage.texel_of(frame, i);
        let c = frame.view_cosine[i];
        match best.get(&t) {
            Some((bc, _)) if *bc >= c => {}
            _ => {
                best.insert(t, (c, i));
            }
        }
    }
    let raw = view_image.as_raw();
    for (&t, &(c, i)) in &best {
        let p = &raw[i * 4..i * 4 + 3];
        atlas.paint(t, [p[0], p[1], p[2]]);
        coverage.painted[t] = true;
        coverage.best_cosine[t] = coverage.best_cosine[t].max(c);
    }
    Ok(best.len())
}

/// Conditioning for one object.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StyleContext {
    pub prompt: String,
    pub global_reference: Option<RgbaImage>,
    /// Views of previously stylized objects, most recent object first.
    pub object_references: Vec<RgbaImage>,
    pub seed: u64,
}

impl StyleContext {
    pub fn reference_images(&self) -> Vec<RgbaImage> {
        self.global_reference.iter().chain(&self.object_references).cloned().collect()
    }
}

/// Seed for view `k` of an object.
pub fn view_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Everything produced for one view.
#[derive(Debug, Clone)]
pub struct ViewStep {
    pub frame: FrameBuffers,
    pub trimap: Trimap,
    pub request: SynthesisRequest,
    pub image: RgbaImage,
    pub texels_written: usize,
}

/// Rasterize, partition, synthesize and backproject one view.
#[allow(clippy::too_many_arguments)]
pub fn paint_view(
    mesh: &TriangleMesh,
    camera: &Camera,
    atlas: &mut TextureAtlas,
    coverage: &mut CoverageBuffer,
    references: &[RgbaImage],
    prompt: &str,
    seed: u64,
    backend: &dyn TextureSynthesizer,
    cos_update_margin: f64,
) -> Result<ViewStep, ViewFailure> {
    let frame = rasterize(mesh, &Transform::identity(), Some(atlas), camera).map_err(ViewFailure::Raster)?;
    let trimap = build_trimap(&frame, coverage, cos_update_margin);
    let mask = trimap_to_mask(&trimap);
    let request = SynthesisRequest {
        prompt: prompt.to_string(),
        width: camera.width,
        height: camera.height,
        depth: DepthImage::encode(&frame.depth, camera.width, camera.height, camera.near, camera.far),
        partial_image: frame.color_image(),
        mask,
        reference_images: references.to_vec(),
        seed,
    };
    let image = synthesize(backend, &request).map_err(ViewFailure::Synth)?.image;
    let texels_written = backproject(&image, &frame, &trimap, atlas, coverage).map_err(ViewFailure::Other)?;
    Ok(ViewStep { frame, trimap, request, image, texels_written })
}

#[derive(Debug)]
pub enum ViewFailure {
    Raster(RasterError),
    Synth(SynthError),
    Other(TexturingError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StylizeOptions {
    pub cos_update_margin: f64,
}

impl Default for StylizeOptions {
    fn default() -> Self {
        StylizeOptions { cos_update_margin: DEFAULT_UPDATE_MARGIN }
    }
}

/// Paints a fresh atlas view by view. On a backend failure the atlas keeps
/// every view completed so far and the error reports how many there were.
/// `on_view` sees each finished step with its index.
pub fn stylize_object(
    mesh: &TriangleMesh,
    atlas: &mut TextureAtlas,
    schedule: &ViewSchedule,
    context: &StyleContext,
    backend: &dyn TextureSynthesizer,
    options: &StylizeOptions,
    on_view: &mut dyn FnMut(usize, &ViewStep) -> Result<(), TexturingError>,
) -> Result<Vec<RgbaImage>, TexturingError> {
    if mesh.is_empty() {
        return Err(TexturingError::EmptyMesh);
    }
    if !atlas.is_untouched() {
        return Err(TexturingError::AtlasNotUntouched(atlas.owner.clone()));
    }
    let references = context.reference_images();
    let mut coverage = CoverageBuffer::for_atlas(atlas);
    let mut images = Vec::with_capacity(schedule.len());
    for (k, view) in schedule.views.iter().enumerate() {
        let step = paint_view(
            mesh,
            &view.camera,
            atlas,
            &mut coverage,
            &references,
            &context.prompt,
            view_seed(context.seed, k),
            backend,
            options.cos_update_margin,
        )
        .map_err(|f| match f {
            ViewFailure::Raster(e) => TexturingError::Raster(e),
            ViewFailure::Other(e) => e,
            ViewFailure::Synth(source) => TexturingError::Synthesis {
                object: atlas.owner.clone(),
                view: k,
                completed_views: k,
                source,
            },
        })?;
        on_view(k, &step)?;
        images.push(step.image);
    }
    Ok(images)
}

/// Writes view, trimap and mask images for one step under `dir`.
pub fn dump_view(dir: &Path, k: usize, step: &ViewStep) -> Result<(), TexturingError> {
    debug::dump_view(dir, k, step)
}
