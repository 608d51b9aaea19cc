//! JSON bodies of the synthesizer HTTP protocol.
//!
//! `POST {endpoint}/synthesize` carries [`SynthesizeBody`]; a 200 reply
//! carries [`SynthesizeReply`]. Images travel as base64 PNG: RGBA8 for the
//! partial image, mask and references, 16-bit gray for depth. The mask PNG
//! is opaque white where the backend must generate and opaque black where
//! the partial image must be kept.

use std::io::Cursor;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::{ImageFormat, Rgba, RgbaImage};
use serde::{Deserialize, Serialize};

use super::{SynthError, SynthesisRequest};
use crate::diffusion::BlendMask;
use crate::raster::DepthImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesizeBody {
    pub prompt: String,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    pub depth_png_b64: String,
    pub depth_near: f64,
    pub depth_far: f64,
    pub partial_png_b64: String,
    pub mask_png_b64: String,
    pub reference_png_b64: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesizeReply {
    pub image_png_b64: String,
}

fn protocol(msg: impl std::fmt::Display) -> SynthError {
    SynthError::ProtocolError(msg.to_string())
}

pub fn png_b64(img: &RgbaImage) -> String {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).expect("in-memory png encode");
    B64.encode(buf.into_inner())
}

pub fn decode_png_b64(data: &str) -> Result<RgbaImage, SynthError> {
    let bytes = B64.decode(data).map_err(|e| protocol(format!("base64: {e}")))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| protocol(format!("png: {e}")))?;
    Ok(img.to_rgba8())
}

pub fn mask_to_image(mask: &BlendMask, width: u32, height: u32) -> RgbaImage {
    let mut img = RgbaImage::new(width, height);
    for (i, p) in img.pixels_mut().enumerate() {
        *p = if mask.generates(i) { Rgba([255, 255, 255, 255]) } else { Rgba([0, 0, 0, 255]) };
    }
    img
}

pub fn encode_request(req: &SynthesisRequest) -> SynthesizeBody {
    SynthesizeBody {
        prompt: req.prompt.clone(),
        width: req.width,
        height: req.height,
        seed: req.seed,
        depth_png_b64: B64.encode(req.depth.to_png_bytes()),
        depth_near: req.depth.near,
        depth_far: req.depth.far,
        partial_png_b64: png_b64(&req.partial_image),
        mask_png_b64: png_b64(&mask_to_image(&req.mask, req.width, req.height)),
        reference_png_b64: req.reference_images.iter().map(png_b64).collect(),
    }
}

/// Server-side inverse of [`encode_request`].
pub fn decode_request(body: &SynthesizeBody) -> Result<SynthesisRequest, SynthError> {
    let depth_bytes = B64.decode(&body.depth_png_b64).map_err(|e| protocol(format!("depth base64: {e}")))?;
    let depth = DepthImage::from_png_bytes(&depth_bytes, body.depth_near, body.depth_far).map_err(protocol)?;
    let mask_img = decode_png_b64(&body.mask_png_b64)?;
    let values = mask_img
        .pixels()
        .map(|p| match p.0[0] {
            0 => Ok(0u8),
            255 => Ok(1u8),
            v => Err(protocol(format!("mask value {v} is neither 0 nor 255"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mask = BlendMask::new(values, vec![mask_img.height() as usize, mask_img.width() as usize]).map_err(protocol)?;
    let req = SynthesisRequest {
        prompt: body.prompt.clone(),
        width: body.width,
        height: body.height,
        depth,
        partial_image: decode_png_b64(&body.partial_png_b64)?,
        mask,
        reference_images: body.reference_png_b64.iter().map(|s| decode_png_b64(s)).collect::<Result<_, _>>()?,
        seed: body.seed,
    };
    req.validate()?;
    Ok(req)
}
