use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbaImage};
use sha2::{Digest, Sha256};

use super::GeometryError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TexelState {
    Untouched,
    Painted,
}

/// Per-object editable texture image addressed by UV.
///
/// On disk an atlas is an RGBA8 PNG; painted texels have alpha 255 and
/// untouched texels are fully transparent black, so the painted set
/// survives a save/load round trip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextureAtlas {
    pub owner: String,
    width: u32,
    height: u32,
    pixels: Vec<[u8; 4]>,
    state: Vec<TexelState>,
}

fn valid_dim(d: u32) -> bool {
    d.is_power_of_two() && (64..=4096).contains(&d)
}

impl TextureAtlas {
    pub fn new(owner: impl Into<String>, width: u32, height: u32) -> Result<Self, GeometryError> {
        if !valid_dim(width) || !valid_dim(height) {
            return Err(GeometryError::Invalid(format!(
                "atlas dimensions must be powers of two in [64, 4096], got {width}x{height}"
            )));
        }
        let n = (width * height) as usize;
        Ok(TextureAtlas {
            owner: owner.into(),
            width,
            height,
            pixels: vec![[0, 0, 0, 0]; n],
            state: vec![TexelState::Untouched; n],
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Nearest texel for a UV coordinate; v = 0 is the bottom row.
    pub fn texel_index(&self, uv: [f64; 2]) -> usize {
        texel_index(uv, self.width, self.height)
    }

    pub fn pixel(&self, texel: usize) -> [u8; 4] {
        self.pixels[texel]
    }

    pub fn state(&self, texel: usize) -> TexelState {
        self.state[texel]
    }

    pub fn is_painted(&self, texel: usize) -> bool {
        self.state[texel] == TexelState::Painted
    }

    pub fn painted_count(&self) -> usize {
        self.state.iter().filter(|s| **s == TexelState::Painted).count()
    }

    pub fn is_untouched(&self) -> bool {
        self.state.iter().all(|s| *s == TexelState::Untouched)
    }

    /// Writes an opaque color and marks the texel painted.
    pub fn paint(&mut self, texel: usize, rgb: [u8; 3]) {
        self.pixels[texel] = [rgb[0], rgb[1], rgb[2], 255];
        self.state[texel] = TexelState::Painted;
    }

    pub fn fill(&mut self, rgb: [u8; 3]) {
        for i in 0..self.pixels.len() {
            self.paint(i, rgb);
        }
    }

    pub fn painted_pixels(&self) -> impl Iterator<Item = [u8; 4]> + '_ {
        self.pixels
            .iter()
            .zip(&self.state)
            .filter(|(_, s)| **s == TexelState::Painted)
            .map(|(p, _)| *p)
    }

    pub fn to_image(&self) -> RgbaImage {
        let raw: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        RgbaImage::from_raw(self.width, self.height, raw).expect("atlas buffer size")
    }

    pub fn from_image(owner: impl Into<String>, img: &RgbaImage) -> Result<Self, GeometryError> {
        let mut atlas = TextureAtlas::new(owner, img.width(), img.height())?;
        for (i, p) in img.pixels().enumerate() {
            if p.0[3] > 0 {
                atlas.paint(i, [p.0[0], p.0[1], p.0[2]]);
            }
        }
        Ok(atlas)
    }

    pub fn to_png_bytes(&self) -> Vec<u8> {
        let mut buf = Cursor::new(Vec::new());
        self.to_image()
            .write_to(&mut buf, ImageFormat::Png)
            .expect("in-memory png encode");
        buf.into_inner()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), GeometryError> {
        super::write_atomic(path.as_ref(), &self.to_png_bytes())
    }

    pub fn load_png(owner: impl Into<String>, path: impl AsRef<Path>) -> Result<Self, GeometryError> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| GeometryError::Io(format!("{}: {e}", path.display())))?
            .to_rgba8();
        Self::from_image(owner, &img)
    }

    /// SHA-256 over dimensions and RGBA texels, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.width.to_le_bytes());
        h.update(self.height.to_le_bytes());
        for p in &self.pixels {
            h.update(p);
        }
        hex::encode(h.finalize())
    }
}

pub(crate) fn texel_index(uv: [f64; 2], width: u32, height: u32) -> usize {
    let x = ((uv[0] * width as f64).floor() as i64).clamp(0, width as i64 - 1) as usize;
    let y = (((1.0 - uv[1]) * height as f64).floor() as i64).clamp(0, height as i64 - 1) as usize;
    y * width as usize + x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_rules() {
        assert!(TextureAtlas::new("a", 64, 4096).is_ok());
        assert!(TextureAtlas::new("a", 32, 64).is_err());
        assert!(TextureAtlas::new("a", 100, 128).is_err());
        assert!(TextureAtlas::new("a", 8192, 64).is_err());
    }

    #[test]
    fn painted_set_survives_png() {
        let mut a = TextureAtlas::new("a", 64, 64).unwrap();
        a.paint(5, [1, 2, 3]);
        a.paint(4095, [0, 0, 0]);
        let img = image::load_from_memory(&a.to_png_bytes()).unwrap().to_rgba8();
        let b = TextureAtlas::from_image("a", &img).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.painted_count(), 2);
        assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn uv_corners_map_to_image_corners() {
        assert_eq!(texel_index([0.0, 1.0], 64, 64), 0);
        assert_eq!(texel_index([1.0, 0.0], 64, 64), 64 * 64 - 1);
        assert_eq!(texel_index([0.0, 0.0], 64, 64), 63 * 64);
    }
}
