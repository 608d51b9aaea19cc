//! Builds the layout prompt for a bedroom and parses a model answer. The
//! answer comes from a canned model unless `LLM_ENDPOINT` is set.

use std::collections::BTreeMap;
use std::time::Duration;

use scenestyle::geometry::{Aabb, Vec3};
use scenestyle::layout::{request_layout, DEFAULT_PENETRATION_TOL};
use scenestyle::synth::{build_layout_prompt, exemplars_for, CannedLlm, HttpLlm, LayoutLlm, LayoutRequest, RoomType};

const CANNED: &str = r#"Here is the layout:
[
  {"category": "bed", "center": [1.8, 0.3, 1.2], "half_extents": [0.8, 0.3, 1.0], "yaw": 0.0},
  {"category": "nightstand", "center": [0.6, 0.25, 0.4], "half_extents": [0.25, 0.25, 0.2], "yaw": 0.0},
  {"category": "wardrobe", "center": [3.2, 1.0, 3.4], "half_extents": [0.5, 1.0, 0.3], "yaw": 3.14159}
]"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let request = LayoutRequest {
        room_type: RoomType::Bedroom,
        room: Aabb::new(Vec3::zeros(), Vec3::new(3.8, 2.7, 4.0)),
        required: BTreeMap::from([("bed".to_string(), 1), ("nightstand".to_string(), 1), ("wardrobe".to_string(), 1)]),
        exemplars: exemplars_for(RoomType::Bedroom),
    };
    let prompt = build_layout_prompt(&request)?;
    println!("--- system ---\n{}\n--- user ---\n{}\n", prompt.system, prompt.user);

    let llm: Box<dyn LayoutLlm> = match std::env::var("LLM_ENDPOINT") {
        Ok(url) if !url.is_empty() => Box::new(HttpLlm::new(&url, Duration::from_secs(60))?),
        _ => Box::new(CannedLlm::new([CANNED])),
    };
    let layout = request_layout(llm.as_ref(), &request, DEFAULT_PENETRATION_TOL)?;
    for b in &layout.boxes {
        println!(
            "{:14} center ({:.3}, {:.3}, {:.3}) half ({:.3}, {:.3}, {:.3}) yaw {:.3}",
            b.box_id, b.center.x, b.center.y, b.center.z, b.half_extents.x, b.half_extents.y, b.half_extents.z, b.yaw
        );
    }
    Ok(())
}
