use std::collections::BTreeMap;
use std::sync::mpsc::{channel, Sender};
use std::sync::{Arc, Mutex, Weak};

use serde::{Deserialize, Serialize};

use super::{ServiceError, Shared};
use crate::geometry::{Scene, REFERENCE_FILE};
use crate::texturing::{cascade_stylize, default_reference_camera, generate_scene_reference, CascadeObserver, CascadeOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobKind {
    Retexture,
    /// Regenerates only the scene reference image.
    Reference,
    /// Reserved; renders are answered synchronously.
    Render,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct JobProgress {
    /// Synthesized views so far.
    pub completed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: String,
    pub kind: JobKind,
    pub state: JobState,
    pub progress: JobProgress,
    pub error: Option<String>,
    /// Version the job's result was committed as.
    pub scene_version: Option<u64>,
}

/// Body of `POST /scene/retexture`. Missing fields keep the scene's prompt
/// and seed and restyle every object; an empty object list regenerates
/// only the reference image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetextureRequest {
    #[serde(default)]
    pub prompt: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub objects: Option<Vec<String>>,
}

struct Task {
    job_id: String,
    prompt: String,
    seed: u64,
    objects: Option<Vec<String>>,
}

#[derive(Default)]
pub(super) struct JobBoard {
    jobs: Mutex<BTreeMap<String, Job>>,
    queue: Mutex<Option<Sender<Task>>>,
}

impl JobBoard {
    pub(super) fn get(&self, id: &str) -> Option<Job> {
        self.jobs.lock().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut Job)) {
        if let Some(job) = self.jobs.lock().unwrap_or_else(|e| e.into_inner()).get_mut(id) {
            f(job);
        }
    }
}

/// The worker holds only a weak handle, so it exits once the service is
/// dropped and the queue sender with it.
pub(super) fn start_worker(shared: &Arc<Shared>) {
    let (tx, rx) = channel::<Task>();
    *shared.jobs.queue.lock().unwrap_or_else(|e| e.into_inner()) = Some(tx);
    let weak: Weak<Shared> = Arc::downgrade(shared);
    std::thread::Builder::new()
        .name("scene-jobs".into())
        .spawn(move || {
            while let Ok(task) = rx.recv() {
                let Some(shared) = weak.upgrade() else { break };
                run(&shared, task);
            }
        })
        .expect("spawn job worker");
}

pub(super) fn submit(shared: &Shared, request: RetextureRequest) -> Result<Job, ServiceError> {
    let snap = shared.snapshot();
    let project = &snap.scene.project;
    if project.objects.is_empty() {
        return Err(ServiceError::Invalid("the scene has no objects".into()));
    }
    if let Some(ids) = &request.objects {
        if let Some(missing) = ids.iter().find(|id| project.object(id).is_none()) {
            return Err(ServiceError::Invalid(format!("unknown object {missing}")));
        }
    }
    let (kind, total) = match &request.objects {
        Some(ids) if ids.is_empty() => (JobKind::Reference, 1),
        Some(ids) => (JobKind::Retexture, ids.len() * shared.options.views.view_count()),
        None => (JobKind::Retexture, project.objects.len() * shared.options.views.view_count()),
    };

    let mut jobs = shared.jobs.jobs.lock().unwrap_or_else(|e| e.into_inner());
    let job_id = format!("job-{}", jobs.len() + 1);
    let job = Job {
        job_id: job_id.clone(),
        kind,
        state: JobState::Queued,
        progress: JobProgress { completed: 0, total },
        error: None,
        scene_version: None,
    };
    let task = Task {
        job_id: job_id.clone(),
        prompt: request.prompt.unwrap_or_else(|| project.style_prompt.clone()),
        seed: request.seed.unwrap_or(project.seed),
        objects: request.objects,
    };
    let queue = shared.jobs.queue.lock().unwrap_or_else(|e| e.into_inner());
    queue
        .as_ref()
        .ok_or_else(|| ServiceError::Invalid("job worker is not running".into()))?
        .send(task)
        .map_err(|_| ServiceError::Invalid("job worker stopped".into()))?;
    jobs.insert(job_id, job.clone());
    Ok(job)
}

struct Progress<'a> {
    board: &'a JobBoard,
    job_id: &'a str,
}

impl CascadeObserver for Progress<'_> {
    fn on_view(&mut self, _object: &str, _completed: usize, _total: usize) {
        self.board.update(self.job_id, |j| j.progress.completed += 1);
    }
}

fn run(shared: &Shared, task: Task) {
    let id = task.job_id.as_str();
    shared.jobs.update(id, |j| j.state = JobState::Running);
    tracing::info!(job = id, "job started");
    match execute(shared, &task) {
        Ok(version) => shared.jobs.update(id, |j| {
            j.state = JobState::Done;
            j.progress.completed = j.progress.total;
            j.scene_version = Some(version);
        }),
        Err(e) => {
            tracing::warn!(job = id, error = %e, "job failed");
            shared.jobs.update(id, |j| {
                j.state = JobState::Failed;
                j.error = Some(e);
            });
        }
    }
}

/// Works on the snapshot taken at start, then merges the new atlases into
/// whatever is committed by then. Objects removed meanwhile are skipped.
fn execute(shared: &Shared, task: &Task) -> Result<u64, String> {
    let start = shared.snapshot();
    let mut work = start.scene.clone();
    let backend = shared.backend.as_ref();

    let reference_only = task.objects.as_ref().is_some_and(|o| o.is_empty());
    let (reference, restyled) = if reference_only {
        let camera = default_reference_camera(&work.project.room, 512, 512);
        let img = generate_scene_reference(&work, &camera, &task.prompt, backend, task.seed).map_err(|e| e.to_string())?;
        (img, Vec::new())
    } else {
        let options = CascadeOptions { views: shared.options.views.clone(), objects: task.objects.clone(), ..Default::default() };
        let mut progress = Progress { board: &shared.jobs, job_id: &task.job_id };
        let report = cascade_stylize(&mut work, backend, &task.prompt, task.seed, &options, &mut progress)
            .map_err(|e| e.to_string())?;
        (report.reference, report.order)
    };

    let _guard = shared.writer.lock().unwrap_or_else(|e| e.into_inner());
    let latest = shared.snapshot();
    let mut scene: Scene = latest.scene.clone();
    scene.project.style_prompt = task.prompt.clone();
    scene.project.seed = task.seed;
    scene.project.reference_image = Some(REFERENCE_FILE.to_string());
    scene.reference = Some(reference);
    if !restyled.is_empty() {
        let prov = &mut scene.project.provenance;
        prov.backend = work.project.provenance.backend.clone();
        prov.deterministic = work.project.provenance.deterministic;
    }
    let mut order = Vec::new();
    for oid in restyled {
        if scene.project.object(&oid).is_none() {
            continue;
        }
        if let Some(atlas) = work.atlases.remove(&oid) {
            scene.set_atlas(&oid, atlas);
        }
        if let Some(refs) = work.project.provenance.references.remove(&oid) {
            scene.project.provenance.references.insert(oid.clone(), refs);
        }
        order.push(oid);
    }
    if !order.is_empty() {
        scene.project.provenance.cascade_order = order;
    }
    shared.commit(latest.version, scene).map_err(|e| e.to_string())
}
