//! Texture synthesizer backends and the layout LLM client.
//!
//! Every synthesizer sits behind [`TextureSynthesizer`]; callers go through
//! [`synthesize`], which validates the request, checks the returned image
//! size and copies the request's partial image back over every mask-0
//! pixel. Known pixels are therefore preserved exactly whatever the backend
//! does.

mod llm;
mod procedural;
mod remote;
mod toy;
pub mod wire;

use std::time::Instant;

use image::RgbaImage;
use thiserror::Error;

use crate::diffusion::BlendMask;
use crate::raster::DepthImage;

pub use llm::{
    build_layout_prompt, exemplars_for, parse_exemplar, parse_layout_response, CannedLlm, ExemplarLayout, HttpLlm, LayoutLlm,
    LayoutParseError, LayoutPrompt, LayoutRequest, LlmError, RoomType, ROOM_TOLERANCE,
};
pub use procedural::{Palette, ProceduralBackend, StyleTable};
pub use remote::{RemoteBackend, RemoteConfig};
pub use toy::ToyDdpmBackend;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("backend timed out after {0} ms")]
    Timeout(u64),
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// Everything a synthesizer gets for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisRequest {
    pub prompt: String,
    pub width: u32,
    pub height: u32,
    pub depth: DepthImage,
    /// Meaningful where the mask is 0.
    pub partial_image: RgbaImage,
    /// Shape `[height, width]`; 1 = generate.
    pub mask: BlendMask,
    /// Global scene reference first (when present), then object-level views.
    pub reference_images: Vec<RgbaImage>,
    pub seed: u64,
}

impl SynthesisRequest {
    pub fn validate(&self) -> Result<(), SynthError> {
        let (w, h) = (self.width, self.height);
        if w == 0 || h == 0 {
            return Err(SynthError::InvalidRequest("zero-sized request".into()));
        }
        if self.depth.width != w || self.depth.height != h {
            return Err(SynthError::DimensionMismatch(format!(
                "depth {}x{} vs request {w}x{h}",
                self.depth.width, self.depth.height
            )));
        }
        if self.partial_image.dimensions() != (w, h) {
            return Err(SynthError::DimensionMismatch(format!(
                "partial image {:?} vs request {w}x{h}",
                self.partial_image.dimensions()
            )));
        }
        if self.mask.shape != [h as usize, w as usize] {
            return Err(SynthError::DimensionMismatch(format!("mask shape {:?} vs request {w}x{h}", self.mask.shape)));
        }
        Ok(())
    }

    pub fn masked_count(&self) -> usize {
        self.mask.values().iter().filter(|v| **v == 1).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResponse {
    pub image: RgbaImage,
    pub backend_id: String,
    pub elapsed_ms: u64,
}

pub trait TextureSynthesizer: Send + Sync {
    fn backend_id(&self) -> &str;

    /// Whether equal requests always yield equal images.
    fn is_deterministic(&self) -> bool {
        true
    }

    /// Raw backend output. Use [`synthesize`] instead of calling this directly.
    fn generate(&self, request: &SynthesisRequest) -> Result<RgbaImage, SynthError>;
}

pub fn synthesize(backend: &dyn TextureSynthesizer, request: &SynthesisRequest) -> Result<SynthesisResponse, SynthError> {
    request.validate()?;
    let start = Instant::now();
    let mut image = backend.generate(request)?;
    if image.dimensions() != (request.width, request.height) {
        return Err(SynthError::DimensionMismatch(format!(
            "backend returned {:?}, expected {}x{}",
            image.dimensions(),
            request.width,
            request.height
        )));
    }
    reblend(&mut image, request);
    Ok(SynthesisResponse {
        image,
        backend_id: backend.backend_id().to_string(),
        elapsed_ms: start.elapsed().as_millis() as u64,
    })
}

/// Restores the request's partial image wherever the mask is 0.
pub fn reblend(image: &mut RgbaImage, request: &SynthesisRequest) {
    for (i, (dst, src)) in image.pixels_mut().zip(request.partial_image.pixels()).enumerate() {
        if !request.mask.generates(i) {
            *dst = *src;
        }
    }
}

pub(crate) fn mean_rgb(images: &[RgbaImage]) -> Option<[f64; 3]> {
    let means: Vec<[f64; 3]> = images
        .iter()
        .filter_map(|img| {
            let mut acc = [0.0; 3];
            let mut n = 0usize;
            for p in img.pixels().filter(|p| p.0[3] > 0) {
                for c in 0..3 {
                    acc[c] += p.0[c] as f64;
                }
                n += 1;
            }
            (n > 0).then(|| acc.map(|v| v / n as f64))
        })
        .collect();
    if means.is_empty() {
        return None;
    }
    let k = means.len() as f64;
    Some([0, 1, 2].map(|c| means.iter().map(|m| m[c]).sum::<f64>() / k))
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn request(w: u32, h: u32, mask: Vec<u8>, prompt: &str, seed: u64) -> SynthesisRequest {
        let mut partial = RgbaImage::new(w, h);
        for (i, p) in partial.pixels_mut().enumerate() {
            p.0 = [(i * 7 % 256) as u8, (i * 13 % 256) as u8, 50, 255];
        }
        let ramp: Vec<f32> = (0..w * h).map(|i| 1.0 + (i % w) as f32 * 0.05).collect();
        SynthesisRequest {
            prompt: prompt.into(),
            width: w,
            height: h,
            depth: DepthImage::encode(&ramp, w, h, 0.1, 10.0),
            partial_image: partial,
            mask: BlendMask::new(mask, vec![h as usize, w as usize]).unwrap(),
            reference_images: vec![],
            seed,
        }
    }
}
