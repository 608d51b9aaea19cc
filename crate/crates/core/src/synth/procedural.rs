use std::collections::BTreeMap;

use image::{Rgba, RgbaImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{mean_rgb, SynthError, SynthesisRequest, TextureSynthesizer};

/// Base, secondary and accent colors of a style.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Palette(pub [[u8; 3]; 3]);

/// Prompt keyword -> palette. Prompts matching no keyword get a palette
/// derived from the prompt's hash.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleTable {
    entries: BTreeMap<String, Palette>,
}

impl Default for StyleTable {
    fn default() -> Self {
        let mut entries = BTreeMap::new();
        entries.insert("chinese".to_string(), Palette([[150, 32, 28], [92, 52, 30], [212, 170, 64]]));
        entries.insert("muji".to_string(), Palette([[214, 200, 178], [168, 140, 108], [240, 236, 226]]));
        entries.insert("luxury".to_string(), Palette([[40, 40, 46], [196, 168, 110], [232, 228, 220]]));
        entries.insert("galaxy".to_string(), Palette([[24, 18, 64], [92, 48, 148], [220, 210, 255]]));
        entries.insert("starry night".to_string(), Palette([[28, 52, 120], [64, 110, 180], [236, 210, 80]]));
        StyleTable { entries }
    }
}

impl StyleTable {
    pub fn empty() -> Self {
        StyleTable { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, keyword: &str, palette: Palette) {
        self.entries.insert(keyword.to_lowercase(), palette);
    }

    /// Longest matching keyword wins so "starry night" beats "night".
    pub fn palette_for(&self, prompt: &str) -> Palette {
        let lower = prompt.to_lowercase();
        self.entries
            .iter()
            .filter(|(k, _)| lower.contains(k.as_str()))
            .max_by_key(|(k, _)| k.len())
            .map(|(_, p)| *p)
            .unwrap_or_else(|| hashed_palette(prompt))
    }
}

fn prompt_digest(prompt: &str) -> [u8; 32] {
    Sha256::digest(prompt.as_bytes()).into()
}

fn hashed_palette(prompt: &str) -> Palette {
    let d = prompt_digest(prompt);
    Palette([
        [d[0], d[1], d[2]],
        [d[3], d[4], d[5]],
        [d[6], d[7], d[8]],
    ])
}

/// Deterministic stand-in for a depth-conditioned diffusion model.
///
/// Masked pixels get a striped pattern whose palette, period and angle are
/// keyed by the prompt, brightened where the depth map is near and jittered
/// by a seeded RNG. Like a real sampler, each seed also drifts the whole
/// palette a little. When reference images are supplied, the generated
/// pixels are shifted so their mean moves toward the references' mean.
#[derive(Debug, Clone)]
pub struct ProceduralBackend {
    styles: StyleTable,
    reference_weight: f64,
    seed_drift: f64,
}

impl Default for ProceduralBackend {
    fn default() -> Self {
        Self::new(StyleTable::default())
    }
}

impl ProceduralBackend {
    pub fn new(styles: StyleTable) -> Self {
        ProceduralBackend { styles, reference_weight: 0.9, seed_drift: 40.0 }
    }

    /// How strongly reference images pull the output color, in [0, 1].
    pub fn with_reference_weight(mut self, w: f64) -> Self {
        self.reference_weight = w.clamp(0.0, 1.0);
        self
    }

    /// Largest per-channel palette offset a seed can cause.
    pub fn with_seed_drift(mut self, d: f64) -> Self {
        self.seed_drift = d.max(0.0);
        self
    }
}

impl TextureSynthesizer for ProceduralBackend {
    fn backend_id(&self) -> &str {
        "procedural"
    }

    fn generate(&self, req: &SynthesisRequest) -> Result<RgbaImage, SynthError> {
        let palette = self.styles.palette_for(&req.prompt).0.map(|c| c.map(f64::from));
        let digest = prompt_digest(&req.prompt);
        let period = 6.0 + (digest[9] % 17) as f64;
        let angle = digest[10] as f64 / 255.0 * std::f64::consts::PI;
        let (sin, cos) = angle.sin_cos();
        let accent_every = 3 + (digest[11] % 4) as i64;
        let mut salt = [0u8; 8];
        salt.copy_from_slice(&digest[12..20]);
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed ^ u64::from_le_bytes(salt));
        let drift: [f64; 3] = if self.seed_drift > 0.0 {
            let d = self.seed_drift;
            [0, 1, 2].map(|_| rng.random_range(-d..d))
        } else {
            [0.0; 3]
        };

        let mut generated = Vec::new();
        for i in 0..req.width as usize * req.height as usize {
            // one draw per pixel keeps the stream independent of the mask
            let jitter: f64 = rng.random_range(-10.0..10.0);
            if !req.mask.generates(i) {
                continue;
            }
            let x = (i % req.width as usize) as f64;
            let y = (i / req.width as usize) as f64;
            let phase = (x * cos + y * sin) / period;
            let band = phase.floor() as i64;
            let s = 0.5 + 0.5 * (std::f64::consts::TAU * phase).sin();
            let rgb = if band.rem_euclid(accent_every) == 0 {
                palette[2]
            } else {
                [0, 1, 2].map(|c| palette[0][c] * (1.0 - s) + palette[1][c] * s)
            };
            let brightness = 1.25 - 0.5 * req.depth.normalized(i);
            generated.push((i, [0, 1, 2].map(|c| rgb[c] * brightness + drift[c] + jitter)));
        }

        let shift = match mean_rgb(&req.reference_images) {
            Some(r) if !generated.is_empty() => {
                let n = generated.len() as f64;
                let w = self.reference_weight;
                [0, 1, 2].map(|c| w * (r[c] - generated.iter().map(|(_, v)| v[c]).sum::<f64>() / n))
            }
            _ => [0.0; 3],
        };
        let mut out = req.partial_image.clone();
        let width = req.width as usize;
        for (i, rgb) in generated {
            let [r, g, b] = [0, 1, 2].map(|c| (rgb[c] + shift[c]).round().clamp(0.0, 255.0) as u8);
            out.put_pixel((i % width) as u32, (i / width) as u32, Rgba([r, g, b, 255]));
        }
        Ok(out)
    }
}
