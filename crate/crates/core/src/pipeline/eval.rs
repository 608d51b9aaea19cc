use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{png_bytes, render_scene};
use crate::geometry::{Camera, Scene, TextureAtlas};
use crate::raster::RasterError;

const BINS: usize = 8;

fn histogram(atlas: &TextureAtlas) -> Option<Vec<f64>> {
    let mut h = vec![0.0; BINS * BINS * BINS];
    let mut n = 0usize;
    for p in atlas.painted_pixels() {
        let [r, g, b] = [p[0], p[1], p[2]].map(|c| c as usize * BINS / 256);
        h[(r * BINS + g) * BINS + b] += 1.0;
        n += 1;
    }
    (n > 0).then(|| h.into_iter().map(|c| c / n as f64).collect())
}

/// `0.5 * sum (p - q)^2 / (p + q)` over normalized histograms; in [0, 1].
pub fn histogram_chi_square(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p
        .iter()
        .zip(q)
        .filter(|(a, b)| *a + *b > 0.0)
        .map(|(a, b)| (a - b) * (a - b) / (a + b))
        .sum::<f64>()
}

/// Mean pairwise chi-square distance between the 8x8x8 RGB histograms of
/// the objects' painted texels. Lower means a more uniform style. Objects
/// without painted texels are skipped; fewer than two objects give 0.
pub fn style_consistency_proxy(scene: &Scene) -> f64 {
    let hists: Vec<Vec<f64>> = scene.project.objects.iter().filter_map(|o| scene.atlases.get(&o.id).and_then(histogram)).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..hists.len() {
        for j in i + 1..hists.len() {
            total += histogram_chi_square(&hists[i], &hists[j]);
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub mean_clip_score: f64,
    pub mean_aesthetic_score: f64,
    pub renders_scored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ScorerStatus {
    NotConfigured,
    Ok(ScoreSummary),
    Unavailable { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Internal metric; not a CLIP or aesthetic score.
    pub style_consistency_proxy: f64,
    pub proxy_definition: String,
    pub renders: usize,
    pub scores: ScorerStatus,
}

#[derive(Serialize)]
struct ScoreBody<'a> {
    prompt: &'a str,
    image_png_b64: String,
}

#[derive(Deserialize)]
struct ScoreReply {
    clip_score: f64,
    aesthetic_score: f64,
}

fn score_all(endpoint: &str, prompt: &str, images: &[Vec<u8>]) -> Result<ScoreSummary, String> {
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(60))
        .build()
        .map_err(|e| e.to_string())?;
    let url = format!("{}/score", endpoint.trim_end_matches('/'));
    let (mut clip, mut aesthetic) = (0.0, 0.0);
    for img in images {
        let resp = client
            .post(&url)
            .json(&ScoreBody { prompt, image_png_b64: B64.encode(img) })
            .send()
            .map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("scorer answered {}", resp.status()));
        }
        let r: ScoreReply = resp.json().map_err(|e| e.to_string())?;
        clip += r.clip_score;
        aesthetic += r.aesthetic_score;
    }
    let n = images.len().max(1) as f64;
    Ok(ScoreSummary { mean_clip_score: clip / n, mean_aesthetic_score: aesthetic / n, renders_scored: images.len() })
}

/// Renders every camera and reports the style-consistency proxy, plus mean
/// external scores when a scorer is configured. The scorer is called as
/// `POST {endpoint}/score` with `{prompt, image_png_b64}` and must answer
/// `{clip_score, aesthetic_score}`. Scorer failures never fail the report.
pub fn eval_renders(scene: &Scene, cameras: &[Camera], scorer_endpoint: Option<&str>) -> Result<EvalReport, RasterError> {
    let mut images = Vec::with_capacity(cameras.len());
    for cam in cameras {
        images.push(png_bytes(&render_scene(scene, cam)?));
    }
    let scores = match scorer_endpoint {
        None => ScorerStatus::NotConfigured,
        Some(ep) => match score_all(ep, &scene.project.style_prompt, &images) {
            Ok(s) => ScorerStatus::Ok(s),
            Err(reason) => ScorerStatus::Unavailable { reason },
        },
    };
    Ok(EvalReport {
        style_consistency_proxy: style_consistency_proxy(scene),
        proxy_definition: "mean pairwise chi-square distance between 8x8x8 RGB histograms of painted atlas texels (lower is more consistent)".into(),
        renders: images.len(),
        scores,
    })
}
