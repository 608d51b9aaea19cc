use std::path::Path;

use image::{ImageFormat, Luma};

use super::{PixelState, TexturingError, Trimap, ViewStep};
use crate::geometry::write_atomic;

// generate red, update yellow, keep green, background black
const PALETTE: [u8; 12] = [220, 40, 40, 240, 200, 40, 40, 170, 70, 0, 0, 0];

fn index(s: PixelState) -> u8 {
    match s {
        PixelState::Generate => 0,
        PixelState::Update => 1,
        PixelState::Keep => 2,
        PixelState::Background => 3,
    }
}

/// Paletted PNG of a trimap.
pub fn trimap_png(trimap: &Trimap) -> Result<Vec<u8>, TexturingError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, trimap.width, trimap.height);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(PALETTE.to_vec());
        let data: Vec<u8> = trimap.states.iter().map(|s| index(*s)).collect();
        let mut w = enc.write_header().map_err(|e| TexturingError::Debug(e.to_string()))?;
        w.write_image_data(&data).map_err(|e| TexturingError::Debug(e.to_string()))?;
    }
    Ok(out)
}

pub(super) fn dump_view(dir: &Path, k: usize, step: &ViewStep) -> Result<(), TexturingError> {
    std::fs::create_dir_all(dir).map_err(|e| TexturingError::Debug(format!("{}: {e}", dir.display())))?;
    let encode = |img: &dyn Fn(&mut std::io::Cursor<Vec<u8>>) -> image::ImageResult<()>| {
        let mut buf = std::io::Cursor::new(Vec::new());
        img(&mut buf).map_err(|e| TexturingError::Debug(e.to_string()))?;
        Ok::<_, TexturingError>(buf.into_inner())
    };
    let view = encode(&|b| step.image.write_to(b, ImageFormat::Png))?;
    let mask_img = image::GrayImage::from_fn(step.trimap.width, step.trimap.height, |x, y| {
        let i = (y * step.trimap.width + x) as usize;
        Luma([if step.request.mask.generates(i) { 255 } else { 0 }])
    });
    let mask = encode(&|b| mask_img.write_to(b, ImageFormat::Png))?;
    let io = |e: crate::geometry::GeometryError| TexturingError::Debug(e.to_string());
    write_atomic(&dir.join(format!("view_{k:02}.png")), &view).map_err(io)?;
    write_atomic(&dir.join(format!("mask_{k:02}.png")), &mask).map_err(io)?;
    write_atomic(&dir.join(format!("trimap_{k:02}.png")), &trimap_png(&step.trimap)?).map_err(io)?;
    Ok(())
}
