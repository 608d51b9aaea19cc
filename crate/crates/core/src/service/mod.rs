//! HTTP front end for one scene project: read the scene, apply edits,
//! queue re-texturing jobs and render on demand.
//!
//! Readers work on the last committed snapshot and never wait for jobs.
//! Every mutation runs under a single writer lock, is persisted, and only
//! then becomes visible with a higher `scene_version`.

mod jobs;
mod routes;

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use thiserror::Error;

use crate::geometry::{load_project, save_project, GeometryError, Scene};
use crate::layout::{apply_op_mut, introduced_violations, LayoutError, ManipulationOp, Violation, DEFAULT_PENETRATION_TOL};
use crate::synth::TextureSynthesizer;
use crate::texturing::ViewConfig;

pub use jobs::{Job, JobKind, JobProgress, JobState, RetextureRequest};
pub use routes::{router, serve};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Op(#[from] LayoutError),
    #[error("edit rejected: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Rejected(Vec<Violation>),
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("persisting the scene failed: {0}")]
    Persist(String),
}

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    /// View schedule used by re-texturing jobs.
    pub views: ViewConfig,
    /// Reject edits that push the edited object out of the room or into
    /// another box.
    pub reject_violations: bool,
    pub penetration_tol: f64,
    /// Built UI bundle served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        ServiceOptions {
            views: ViewConfig::default(),
            reject_violations: true,
            penetration_tol: DEFAULT_PENETRATION_TOL,
            static_dir: None,
        }
    }
}

/// A committed scene state. Immutable once published.
#[derive(Debug)]
pub struct Snapshot {
    pub version: u64,
    pub scene: Scene,
    /// Exactly the bytes of `scene.json` on disk.
    pub json: Vec<u8>,
}

impl Snapshot {
    fn new(version: u64, mut scene: Scene) -> Self {
        scene.refresh_atlas_hashes();
        let json = scene.project.to_json_bytes();
        Snapshot { version, scene, json }
    }
}

/// Reply to a committed edit.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OpOutcome {
    pub ok: bool,
    pub scene_version: u64,
    /// Id of the object created or changed.
    pub object: String,
}

pub(crate) struct Shared {
    dir: PathBuf,
    current: RwLock<Arc<Snapshot>>,
    writer: Mutex<()>,
    backend: Arc<dyn TextureSynthesizer>,
    options: ServiceOptions,
    jobs: jobs::JobBoard,
}

/// Cheap to clone; all clones share one scene.
#[derive(Clone)]
pub struct SceneService {
    shared: Arc<Shared>,
}

impl SceneService {
    /// Loads the project in `dir` and starts the job worker.
    pub fn open(dir: impl AsRef<Path>, backend: Arc<dyn TextureSynthesizer>, options: ServiceOptions) -> Result<Self, ServiceError> {
        let dir = dir.as_ref().to_path_buf();
        let scene = load_project(&dir)?;
        let shared = Arc::new(Shared {
            dir,
            current: RwLock::new(Arc::new(Snapshot::new(1, scene))),
            writer: Mutex::new(()),
            backend,
            options,
            jobs: jobs::JobBoard::default(),
        });
        jobs::start_worker(&shared);
        Ok(SceneService { shared })
    }

    pub fn project_dir(&self) -> &Path {
        &self.shared.dir
    }

    pub fn options(&self) -> &ServiceOptions {
        &self.shared.options
    }

    /// The last committed state.
    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.shared.snapshot()
    }

    /// Applies one edit, persists it and publishes the new version. Nothing
    /// changes when an error is returned.
    pub fn apply(&self, op: &ManipulationOp) -> Result<OpOutcome, ServiceError> {
        let shared = &self.shared;
        let _guard = shared.writer.lock().unwrap_or_else(|e| e.into_inner());
        let base = shared.snapshot();
        let mut scene = base.scene.clone();
        let object = apply_op_mut(&mut scene, op)?;
        if shared.options.reject_violations && !matches!(op, ManipulationOp::Remove { .. }) {
            let fresh = introduced_violations(&base.scene.project, &scene.project, &object, shared.options.penetration_tol);
            if !fresh.is_empty() {
                return Err(ServiceError::Rejected(fresh));
            }
        }
        let version = shared.commit(base.version, scene)?;
        Ok(OpOutcome { ok: true, scene_version: version, object })
    }

    /// Queues a re-texturing job and returns its id immediately.
    pub fn submit_retexture(&self, request: RetextureRequest) -> Result<Job, ServiceError> {
        jobs::submit(&self.shared, request)
    }

    pub fn job(&self, id: &str) -> Result<Job, ServiceError> {
        self.shared.jobs.get(id).ok_or_else(|| ServiceError::UnknownJob(id.to_string()))
    }
}

impl Shared {
    fn snapshot(&self) -> Arc<Snapshot> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Persists `scene` and publishes it. Caller holds the writer lock.
    fn commit(&self, base_version: u64, scene: Scene) -> Result<u64, ServiceError> {
        save_project(&scene, &self.dir).map_err(|e| ServiceError::Persist(e.to_string()))?;
        let version = base_version + 1;
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(Snapshot::new(version, scene));
        tracing::info!(version, "scene committed");
        Ok(version)
    }
}
