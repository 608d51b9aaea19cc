use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::diffusion::{make_schedule, PointMassPredictor};
use crate::geometry::{Aabb, Camera, Vec3};
use crate::synth::{HttpLlm, ProceduralBackend, RemoteBackend, RemoteConfig, RoomType, TextureSynthesizer, ToyDdpmBackend};
use crate::texturing::ViewConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    /// OBJ path, relative to the config file.
    pub mesh: String,
    pub category: String,
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub canonical_yaw_offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl RoomSpec {
    pub fn aabb(&self) -> Aabb {
        Aabb::new(self.min.into(), self.max.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum LayoutSource {
    /// A layout file in the exemplar schema (`{room, boxes}`).
    File { path: String },
    Llm {
        room_type: RoomType,
        room: RoomSpec,
        /// Falls back to `LLM_ENDPOINT`.
        #[serde(default)]
        endpoint: Option<String>,
        #[serde(default)]
        model: Option<String>,
        #[serde(default = "default_llm_timeout")]
        timeout_ms: u64,
    },
}

fn default_llm_timeout() -> u64 {
    60_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Procedural,
    ToyDdpm {
        #[serde(default = "default_steps")]
        steps: usize,
        /// Gray level in [-1, 1] the point-mass predictor denoises toward.
        #[serde(default)]
        target: f64,
    },
    Remote {
        /// Falls back to `SYNTH_ENDPOINT`.
        #[serde(default)]
        endpoint: Option<String>,
        #[serde(default = "default_remote_timeout")]
        timeout_ms: u64,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
}

fn default_steps() -> usize {
    50
}
fn default_remote_timeout() -> u64 {
    120_000
}
fn default_in_flight() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub name: String,
    /// `px,py,pz,lx,ly,lz,fov_degrees`
    pub spec: String,
    #[serde(default = "default_res")]
    pub width: u32,
    #[serde(default = "default_res")]
    pub height: u32,
}

fn default_res() -> u32 {
    512
}

impl CameraSpec {
    pub fn camera(&self) -> Result<Camera, PipelineError> {
        Camera::parse_spec(&self.spec, self.width, self.height)
            .map_err(|e| PipelineError::Config(format!("camera {}: {e}", self.name)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    #[serde(default = "default_azimuths")]
    pub n_azimuth: usize,
    #[serde(default = "default_elevations")]
    pub elevations_deg: Vec<f64>,
    #[serde(default = "yes")]
    pub include_top: bool,
    #[serde(default = "default_distance")]
    pub distance_factor: f64,
    #[serde(default = "default_res")]
    pub resolution: u32,
}

fn default_azimuths() -> usize {
    8
}
fn default_elevations() -> Vec<f64> {
    vec![0.0, 30.0]
}
fn yes() -> bool {
    true
}
fn default_distance() -> f64 {
    2.0
}

impl Default for ViewSpec {
    fn default() -> Self {
        ViewSpec {
            n_azimuth: default_azimuths(),
            elevations_deg: default_elevations(),
            include_top: true,
            distance_factor: default_distance(),
            resolution: default_res(),
        }
    }
}

impl ViewSpec {
    pub fn to_config(&self) -> ViewConfig {
        ViewConfig {
            n_azimuth: self.n_azimuth,
            elevations: self.elevations_deg.iter().map(|d| d.to_radians()).collect(),
            include_top: self.include_top,
            distance_factor: self.distance_factor,
            resolution: self.resolution,
        }
    }
}

/// Everything one pipeline run needs. There is no implicit entropy: the
/// seed is required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub objects: Vec<ObjectSpec>,
    pub layout: LayoutSource,
    pub style_prompt: String,
    pub backend: BackendSpec,
    pub seed: u64,
    #[serde(default)]
    pub cameras: Vec<CameraSpec>,
    /// Project directory, relative to the config file.
    pub output_dir: String,
    #[serde(default = "default_atlas")]
    pub atlas_size: u32,
    #[serde(default)]
    pub views: ViewSpec,
    #[serde(default)]
    pub reference_camera: Option<CameraSpec>,
    #[serde(default)]
    pub debug_dumps: bool,
    /// Reserved: image-to-mesh reconstruction needs an external service.
    #[serde(default)]
    pub from_image: Option<String>,
}

fn default_atlas() -> u32 {
    512
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.objects.is_empty() {
            return bad("at least one object is required".into());
        }
        if self.from_image.is_some() {
            return bad("from_image needs an external reconstruction service and is not supported".into());
        }
        if !(self.atlas_size.is_power_of_two() && (64..=4096).contains(&self.atlas_size)) {
            return bad(format!("atlas_size {} must be a power of two in [64, 4096]", self.atlas_size));
        }
        for c in &self.cameras {
            c.camera()?;
        }
        if let Some(c) = &self.reference_camera {
            c.camera()?;
        }
        Ok(())
    }

    pub fn resolve(&self, base: &Path, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

fn env_or(explicit: &Option<String>, var: &str) -> Result<String, PipelineError> {
    explicit
        .clone()
        .or_else(|| std::env::var(var).ok())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| PipelineError::Config(format!("no endpoint configured and {var} is unset")))
}

impl BackendSpec {
    pub fn build(&self) -> Result<Arc<dyn TextureSynthesizer>, PipelineError> {
        Ok(match self {
            BackendSpec::Procedural => Arc::new(ProceduralBackend::default()),
            BackendSpec::ToyDdpm { steps, target } => {
                let schedule = make_schedule(*steps, 1e-4, 0.1).map_err(|e| PipelineError::Config(e.to_string()))?;
                let predictor = Arc::new(PointMassPredictor::constant(*target, &schedule));
                Arc::new(ToyDdpmBackend::new(schedule, predictor))
            }
            BackendSpec::Remote { endpoint, timeout_ms, max_in_flight } => {
                let mut cfg = RemoteConfig::new(env_or(endpoint, "SYNTH_ENDPOINT")?)
                    .with_timeout(Duration::from_millis(*timeout_ms));
                cfg.max_in_flight = *max_in_flight;
                cfg.bearer_token = std::env::var("SYNTH_TOKEN").ok();
                Arc::new(RemoteBackend::new(cfg).map_err(|e| PipelineError::Config(e.to_string()))?)
            }
        })
    }
}

pub(super) fn build_llm(endpoint: &Option<String>, model: &Option<String>, timeout_ms: u64) -> Result<HttpLlm, PipelineError> {
    let mut llm = HttpLlm::new(&env_or(endpoint, "LLM_ENDPOINT")?, Duration::from_millis(timeout_ms))
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    if let Some(m) = model {
        llm = llm.with_model(m.clone());
    }
    if let Ok(t) = std::env::var("LLM_TOKEN") {
        llm = llm.with_bearer_token(t);
    }
    Ok(llm)
}

/// Boxes file: `{room: {min, max}, boxes: [{category, center, half_extents, yaw}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutFile {
    #[serde(default)]
    pub room_type: Option<RoomType>,
    pub room: RoomSpec,
    pub boxes: Vec<LayoutBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutBox {
    pub category: String,
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub id: Option<String>,
}

impl LayoutFile {
    pub fn room(&self) -> Aabb {
        self.room.aabb()
    }
}

pub(super) fn v3(a: [f64; 3]) -> Vec3 {
    a.into()
}
