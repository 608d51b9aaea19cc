use std::sync::Arc;

use image::{Rgba, RgbaImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{SynthError, SynthesisRequest, TextureSynthesizer};
use crate::diffusion::{sample, BlendMask, Latent, NoisePredictor, NoiseSchedule};

/// Maps 8-bit channel values to [-1, 1].
pub(crate) fn to_unit(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

pub(crate) fn from_unit(x: f64) -> u8 {
    ((x + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Pixel-space masked DDPM sampler run independently on R, G and B.
///
/// The prompt, depth and references are ignored; the backend exists to
/// exercise the inpainting sampler end to end.
#[derive(Clone)]
pub struct ToyDdpmBackend {
    schedule: NoiseSchedule,
    predictor: Arc<dyn NoisePredictor>,
}

impl ToyDdpmBackend {
    pub fn new(schedule: NoiseSchedule, predictor: Arc<dyn NoisePredictor>) -> Self {
        ToyDdpmBackend { schedule, predictor }
    }
}

impl TextureSynthesizer for ToyDdpmBackend {
    fn backend_id(&self) -> &str {
        "toy_ddpm"
    }

    fn generate(&self, req: &SynthesisRequest) -> Result<RgbaImage, SynthError> {
        let shape = [req.height as usize, req.width as usize];
        let mask = BlendMask::new(req.mask.values().to_vec(), shape.to_vec())
            .map_err(|e| SynthError::InvalidRequest(e.to_string()))?;
        let mut out = req.partial_image.clone();
        for channel in 0..3 {
            let known = Latent {
                data: req.partial_image.pixels().map(|p| to_unit(p.0[channel])).collect(),
                shape: shape.to_vec(),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(req.seed.wrapping_add(channel as u64));
            let z0 = sample(self.predictor.as_ref(), &self.schedule, &shape, &mut rng, Some((&mask, &known)))
                .map_err(|e| SynthError::ProtocolError(format!("sampler: {e}")))?;
            for (i, px) in out.pixels_mut().enumerate() {
                if mask.generates(i) {
                    px.0[channel] = from_unit(z0.data[i]);
                }
            }
        }
        for (i, px) in out.pixels_mut().enumerate() {
            if mask.generates(i) {
                *px = Rgba([px.0[0], px.0[1], px.0[2], 255]);
            }
        }
        Ok(out)
    }
}
