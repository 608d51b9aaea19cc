use std::io::Cursor;
use std::path::Path;

use image::{ImageBuffer, ImageFormat, Luma};
use serde::{Deserialize, Serialize};

use crate::geometry::GeometryError;

/// 16-bit depth raster with a linear code -> meters mapping over `[near, far]`.
///
/// Code 0 is `near`, 65535 is `far`; empty pixels encode as `far`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub codes: Vec<u16>,
    pub near: f64,
    pub far: f64,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    near: f64,
    far: f64,
}

impl DepthImage {
    pub fn encode(depth: &[f32], width: u32, height: u32, near: f64, far: f64) -> Self {
        let codes = depth.iter().map(|&d| encode_one(d as f64, near, far)).collect();
        DepthImage { width, height, codes, near, far }
    }

    /// Every pixel at the far plane.
    pub fn background(width: u32, height: u32, near: f64, far: f64) -> Self {
        DepthImage { width, height, codes: vec![u16::MAX; (width * height) as usize], near, far }
    }

    pub fn step(&self) -> f64 {
        (self.far - self.near) / 65535.0
    }

    pub fn decode(&self, pixel: usize) -> f64 {
        self.near + self.codes[pixel] as f64 * self.step()
    }

    /// Depth normalized to [0, 1] (0 = near plane).
    pub fn normalized(&self, pixel: usize) -> f64 {
        self.codes[pixel] as f64 / 65535.0
    }

    pub fn to_png_bytes(&self) -> Vec<u8> {
        let img: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width, self.height, self.codes.clone()).expect("depth size");
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, ImageFormat::Png).expect("in-memory png encode");
        buf.into_inner()
    }

    pub fn from_png_bytes(bytes: &[u8], near: f64, far: f64) -> Result<Self, GeometryError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| GeometryError::MalformedFile(format!("depth png: {e}")))?;
        let gray = match img {
            image::DynamicImage::ImageLuma16(g) => g,
            other => {
                return Err(GeometryError::MalformedFile(format!(
                    "depth png must be 16-bit gray, got {:?}",
                    other.color()
                )))
            }
        };
        Ok(DepthImage {
            width: gray.width(),
            height: gray.height(),
            codes: gray.into_raw(),
            near,
            far,
        })
    }

    pub fn sidecar_json(&self) -> String {
        serde_json::to_string(&Sidecar { near: self.near, far: self.far }).expect("sidecar")
    }

    /// Writes `<path>` (PNG) and the `{near, far}` sidecar next to it as `.json`.
    pub fn save(&self, png_path: impl AsRef<Path>) -> Result<(), GeometryError> {
        let png_path = png_path.as_ref();
        crate::geometry::write_atomic(png_path, &self.to_png_bytes())?;
        crate::geometry::write_atomic(&png_path.with_extension("json"), self.sidecar_json().as_bytes())
    }

    pub fn load(png_path: impl AsRef<Path>) -> Result<Self, GeometryError> {
        let png_path = png_path.as_ref();
        let io = |e: std::io::Error| GeometryError::Io(format!("{}: {e}", png_path.display()));
        let meta: Sidecar = serde_json::from_slice(&std::fs::read(png_path.with_extension("json")).map_err(io)?)
            .map_err(|e| GeometryError::MalformedFile(format!("depth sidecar: {e}")))?;
        Self::from_png_bytes(&std::fs::read(png_path).map_err(io)?, meta.near, meta.far)
    }
}

fn encode_one(d: f64, near: f64, far: f64) -> u16 {
    if !d.is_finite() {
        return u16::MAX;
    }
    let t = ((d - near) / (far - near)).clamp(0.0, 1.0);
    (t * 65535.0).round() as u16
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_error_is_bounded() {
        let (near, far) = (0.1, 10.0);
        let depths: Vec<f32> = (0..1000).map(|i| (near + (far - near) * i as f64 / 999.0) as f32).collect();
        let img = DepthImage::encode(&depths, 1000, 1, near, far);
        for (i, d) in depths.iter().enumerate() {
            assert!((img.decode(i) - *d as f64).abs() <= img.step());
        }
    }

    #[test]
    fn infinity_is_far() {
        let img = DepthImage::encode(&[f32::INFINITY], 1, 1, 0.1, 10.0);
        assert_eq!(img.decode(0), 10.0);
    }

    #[test]
    fn png_round_trip() {
        let img = DepthImage::encode(&[1.0, 2.0, 3.0, f32::INFINITY], 2, 2, 0.5, 5.0);
        let back = DepthImage::from_png_bytes(&img.to_png_bytes(), 0.5, 5.0).unwrap();
        assert_eq!(img, back);
    }
}
