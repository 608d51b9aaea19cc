//! Layout LLM client: in-context prompt construction, response parsing and
//! the chat transport.
//!
//! The prompt template is a reconstruction; the original tuning prompts were
//! never published.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::{snap_micro, snap_micro_vec, Aabb, OrientedBox, Vec3};

/// How far a box may poke out of the room before it is rejected.
pub const ROOM_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RoomType {
    #[serde(rename = "living room")]
    LivingRoom,
    #[serde(rename = "bedroom")]
    Bedroom,
}

impl RoomType {
    pub fn as_str(self) -> &'static str {
        match self {
            RoomType::LivingRoom => "living room",
            RoomType::Bedroom => "bedroom",
        }
    }
}

impl std::str::FromStr for RoomType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_lowercase().replace(['_', '-'], " ").as_str() {
            "living room" | "livingroom" => Ok(RoomType::LivingRoom),
            "bedroom" => Ok(RoomType::Bedroom),
            other => Err(format!("unknown room type {other:?}")),
        }
    }
}

/// A known-good furnished room shown to the model as an example.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarLayout {
    pub room_type: RoomType,
    pub room: Aabb,
    pub boxes: Vec<OrientedBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutRequest {
    pub room_type: RoomType,
    pub room: Aabb,
    /// Category -> how many instances are needed.
    pub required: BTreeMap<String, u32>,
    pub exemplars: Vec<ExemplarLayout>,
}

impl LayoutRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.exemplars.is_empty() {
            return Err(LlmError::InvalidRequest("at least one exemplar layout is required".into()));
        }
        if self.required.is_empty() {
            return Err(LlmError::InvalidRequest("no categories requested".into()));
        }
        if let Some((c, _)) = self.required.iter().find(|(_, n)| **n == 0) {
            return Err(LlmError::InvalidRequest(format!("count for {c:?} must be at least 1")));
        }
        let e = self.room.extents();
        if !(e.x > 0.0 && e.y > 0.0 && e.z > 0.0) {
            return Err(LlmError::InvalidRequest("room bounds are empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutPrompt {
    pub system: String,
    pub user: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("invalid layout request: {0}")]
    InvalidRequest(String),
    #[error("llm unavailable: {0}")]
    Unavailable(String),
    #[error("llm timed out")]
    Timeout,
    #[error("llm protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayoutParseError {
    #[error("no JSON array found in response")]
    NoJsonFound,
    #[error("box {index}: {reason}")]
    InvalidBox { index: usize, reason: String },
}

const SYSTEM_PROMPT: &str = "You are an interior designer placing furniture in an empty, axis-aligned room. \
Coordinates are meters, Y is up, the floor is at the room's minimum Y. \
Each piece of furniture is an oriented bounding box: a center, half extents along its local x (width), \
y (height) and z (depth) axes, and a yaw in radians about +Y. A yaw of 0 means the object's front faces +Z. \
Learn typical arrangements from the examples: beds against walls, nightstands beside beds, \
sofas facing tables, free walking space, no overlapping boxes.";

fn fmt3(x: f64) -> String {
    let s = format!("{x:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

fn fmt_vec(v: &Vec3) -> String {
    format!("[{}, {}, {}]", fmt3(v.x), fmt3(v.y), fmt3(v.z))
}

fn box_line(b: &OrientedBox) -> String {
    format!(
        "{{\"category\": \"{}\", \"center\": {}, \"half_extents\": {}, \"yaw\": {}}}",
        b.category,
        fmt_vec(&b.center),
        fmt_vec(&b.half_extents),
        fmt3(b.yaw)
    )
}

/// Deterministic prompt: a system instruction, then one block per exemplar
/// in input order, the room constraints and the output format.
pub fn build_layout_prompt(request: &LayoutRequest) -> Result<LayoutPrompt, LlmError> {
    request.validate()?;
    let mut user = String::new();
    for (k, ex) in request.exemplars.iter().enumerate() {
        let _ = writeln!(user, "<example index=\"{}\" room_type=\"{}\">", k + 1, ex.room_type.as_str());
        let _ = writeln!(user, "room min {} max {}", fmt_vec(&ex.room.min), fmt_vec(&ex.room.max));
        user.push_str("[\n");
        for (i, b) in ex.boxes.iter().enumerate() {
            let sep = if i + 1 == ex.boxes.len() { "" } else { "," };
            let _ = writeln!(user, "  {}{sep}", box_line(b));
        }
        user.push_str("]\n</example>\n\n");
    }
    let _ = writeln!(user, "Now furnish a new {}.", request.room_type.as_str());
    let _ = writeln!(user, "room min {} max {}", fmt_vec(&request.room.min), fmt_vec(&request.room.max));
    user.push_str("Required objects:\n");
    for (category, n) in &request.required {
        let _ = writeln!(user, "- {category}: {n}");
    }
    user.push_str(
        "Every box must lie inside the room and rest on the floor.\n\
         Answer with only a JSON array, one element per object, each of the form \
         {\"category\": string, \"center\": [x, y, z], \"half_extents\": [hx, hy, hz], \"yaw\": radians}.\n",
    );
    Ok(LayoutPrompt { system: SYSTEM_PROMPT.to_string(), user })
}

/// First JSON array embedded anywhere in `text`.
fn first_json_array(text: &str) -> Option<Vec<Value>> {
    text.match_indices('[').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Array(items))) => Some(items),
            _ => None,
        }
    })
}

fn vec3_field(obj: &serde_json::Map<String, Value>, key: &str) -> Result<Vec3, String> {
    let arr = obj
        .get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| format!("missing array field {key:?}"))?;
    if arr.len() != 3 {
        return Err(format!("{key:?} needs 3 numbers, got {}", arr.len()));
    }
    let mut v = [0.0; 3];
    for (slot, x) in v.iter_mut().zip(arr) {
        *slot = x.as_f64().filter(|f| f.is_finite()).ok_or_else(|| format!("{key:?} holds a non-number"))?;
    }
    Ok(v.into())
}

fn parse_box(value: &Value, room: &Aabb) -> Result<(String, Vec3, Vec3, f64), String> {
    let obj = value.as_object().ok_or("not a JSON object")?;
    let category = obj
        .get("category")
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or("missing category")?
        .to_lowercase();
    let mut center = vec3_field(obj, "center")?;
    let half = vec3_field(obj, "half_extents")?;
    if half.iter().any(|h| *h <= 0.0) {
        return Err(format!("half extents {} must be positive", fmt_vec(&half)));
    }
    let yaw = match obj.get("yaw") {
        None | Some(Value::Null) => 0.0,
        Some(v) => v.as_f64().filter(|f| f.is_finite()).ok_or("yaw is not a number")?,
    };
    let room_h = room.max.y - room.min.y;
    if 2.0 * half.y > room_h + ROOM_TOLERANCE {
        return Err(format!("height {} exceeds room height {}", fmt3(2.0 * half.y), fmt3(room_h)));
    }
    // shift small overshoots back inside; larger ones are errors
    let probe = OrientedBox::new("probe", &category, center, half, yaw).map_err(|e| e.to_string())?;
    let bb = probe.world_aabb();
    for (axis, name) in [(0, "x"), (2, "z")] {
        let over_lo = room.min[axis] - bb.min[axis];
        let over_hi = bb.max[axis] - room.max[axis];
        if over_lo > ROOM_TOLERANCE || over_hi > ROOM_TOLERANCE {
            return Err(format!("footprint leaves the room along {name}"));
        }
        if over_lo > 0.0 && over_hi > 0.0 {
            return Err(format!("footprint is wider than the room along {name}"));
        }
        if over_lo > 0.0 {
            center[axis] += over_lo;
        } else if over_hi > 0.0 {
            center[axis] -= over_hi;
        }
    }
    center.y = room.min.y + half.y;
    Ok((category, snap_micro_vec(center), snap_micro_vec(half), snap_micro(yaw)))
}

/// Extracts the first JSON array in `text` and turns it into floor-snapped
/// boxes inside `room`. Box ids are `<category>_<n>`, numbered per category
/// from 1 in array order.
pub fn parse_layout_response(text: &str, room: &Aabb) -> Result<Vec<OrientedBox>, LayoutParseError> {
    let items = first_json_array(text).ok_or(LayoutParseError::NoJsonFound)?;
    let mut counts: BTreeMap<String, u32> = BTreeMap::new();
    let mut boxes = Vec::with_capacity(items.len());
    for (index, item) in items.iter().enumerate() {
        let (category, center, half, yaw) =
            parse_box(item, room).map_err(|reason| LayoutParseError::InvalidBox { index, reason })?;
        let n = counts.entry(category.clone()).or_insert(0);
        *n += 1;
        let id = format!("{category}_{n}").replace(' ', "_");
        let b = OrientedBox::new(id, category, center, half, yaw)
            .map_err(|e| LayoutParseError::InvalidBox { index, reason: e.to_string() })?;
        boxes.push(b);
    }
    Ok(boxes)
}

pub trait LayoutLlm: Send + Sync {
    fn complete(&self, prompt: &LayoutPrompt) -> Result<String, LlmError>;
}

#[derive(Serialize)]
struct ChatBody<'a> {
    system: &'a str,
    user: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
}

#[derive(Deserialize)]
struct ChatReply {
    text: String,
}

/// `POST {endpoint}/chat` with `{system, user[, model]}`, expecting `{text}`.
pub struct HttpLlm {
    url: String,
    model: Option<String>,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpLlm {
    /// Must not be called from inside an async runtime.
    pub fn new(endpoint: &str, timeout: Duration) -> Result<Self, LlmError> {
        let base = reqwest::Url::parse(endpoint).map_err(|e| LlmError::InvalidRequest(format!("endpoint {endpoint:?}: {e}")))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Unavailable(e.to_string()))?;
        Ok(HttpLlm {
            url: format!("{}/chat", base.as_str().trim_end_matches('/')),
            model: None,
            token: None,
            client,
        })
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = Some(model.into());
        self
    }

    pub fn with_bearer_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }
}

impl LayoutLlm for HttpLlm {
    fn complete(&self, prompt: &LayoutPrompt) -> Result<String, LlmError> {
        let body = ChatBody { system: &prompt.system, user: &prompt.user, model: self.model.as_deref() };
        let mut call = self.client.post(&self.url).json(&body);
        if let Some(t) = &self.token {
            call = call.bearer_auth(t);
        }
        let resp = call.send().map_err(|e| {
            if e.is_timeout() {
                LlmError::Timeout
            } else {
                LlmError::Unavailable(e.to_string())
            }
        })?;
        if resp.status() != reqwest::StatusCode::OK {
            return Err(LlmError::Protocol(format!("status {}", resp.status())));
        }
        let reply: ChatReply = resp.json().map_err(|e| LlmError::Protocol(e.to_string()))?;
        Ok(reply.text)
    }
}

/// Replays scripted responses in order, repeating the last one, and keeps
/// every prompt it was sent.
#[derive(Debug, Default)]
pub struct CannedLlm {
    responses: Mutex<VecDeque<String>>,
    prompts: Mutex<Vec<LayoutPrompt>>,
}

impl CannedLlm {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        CannedLlm {
            responses: Mutex::new(responses.into_iter().map(Into::into).collect()),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn prompts(&self) -> Vec<LayoutPrompt> {
        self.prompts.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl LayoutLlm for CannedLlm {
    fn complete(&self, prompt: &LayoutPrompt) -> Result<String, LlmError> {
        self.prompts.lock().unwrap_or_else(|e| e.into_inner()).push(prompt.clone());
        let mut queue = self.responses.lock().unwrap_or_else(|e| e.into_inner());
        match queue.len() {
            0 => Err(LlmError::Unavailable("no canned response left".into())),
            1 => Ok(queue[0].clone()),
            _ => Ok(queue.pop_front().unwrap_or_default()),
        }
    }
}

#[derive(Deserialize)]
struct FixtureBox {
    category: String,
    center: [f64; 3],
    half_extents: [f64; 3],
    #[serde(default)]
    yaw: f64,
}

#[derive(Deserialize)]
struct FixtureRoom {
    min: [f64; 3],
    max: [f64; 3],
}

#[derive(Deserialize)]
struct FixtureLayout {
    room_type: RoomType,
    room: FixtureRoom,
    boxes: Vec<FixtureBox>,
}

const FIXTURES: &[&str] = &[
    include_str!("../../layouts/bedroom_a.json"),
    include_str!("../../layouts/bedroom_b.json"),
    include_str!("../../layouts/living_room_a.json"),
    include_str!("../../layouts/living_room_b.json"),
];

/// Parses a layout fixture (`{room_type, room: {min, max}, boxes: [..]}`).
pub fn parse_exemplar(text: &str) -> Result<ExemplarLayout, String> {
    let f: FixtureLayout = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let mut counts: BTreeMap<String, u32> = BTreeMap::new();
    let boxes = f
        .boxes
        .into_iter()
        .map(|b| {
            let n = counts.entry(b.category.clone()).or_insert(0);
            *n += 1;
            OrientedBox::new(format!("{}_{n}", b.category), b.category, b.center.into(), b.half_extents.into(), b.yaw)
                .map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    Ok(ExemplarLayout { room_type: f.room_type, room: Aabb::new(f.room.min.into(), f.room.max.into()), boxes })
}

/// Shipped exemplar layouts for a room type.
pub fn exemplars_for(room_type: RoomType) -> Vec<ExemplarLayout> {
    FIXTURES
        .iter()
        .map(|t| parse_exemplar(t).expect("bundled layout fixture parses"))
        .filter(|e| e.room_type == room_type)
        .collect()
}
