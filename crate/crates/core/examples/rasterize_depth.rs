//! Renders a box and a sphere, writes the color image and the 16-bit depth
//! map with its near/far sidecar.
//!
//! `cargo run --example rasterize_depth -- [out_dir]`

use std::path::PathBuf;

use scenestyle::geometry::primitives::{uv_box, uv_sphere};
use scenestyle::geometry::{Camera, TextureAtlas, Transform, Vec3};
use scenestyle::raster::{rasterize_scene, render_depth, RenderItem};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("rasterize_depth"));
    std::fs::create_dir_all(&out)?;

    let cube = uv_box("cube", Vec3::new(1.0, 1.0, 1.0));
    let ball = uv_sphere("ball", 0.4, 32, 16);
    let mut atlas = TextureAtlas::new("cube", 64, 64)?;
    atlas.fill([200, 120, 40]);
    let cube_at = Transform::new(Vec3::new(-0.6, 0.5, 0.0), [0.5, 0.0, 0.0], 1.0)?;
    let ball_at = Transform::new(Vec3::new(0.8, 0.4, 0.4), [0.0; 3], 1.0)?;
    let items = [RenderItem::new(&cube, cube_at, Some(&atlas)), RenderItem::new(&ball, ball_at, None)];

    let camera = Camera::looking_at(Vec3::new(0.5, 2.0, 4.0), Vec3::new(0.0, 0.4, 0.0), 45f64.to_radians(), 320, 240);
    let frame = rasterize_scene(&items, &camera)?;
    frame.color_image().save(out.join("color.png"))?;
    let depth = render_depth(&items, &camera)?;
    depth.save(out.join("depth.png"))?;

    let nearest = frame.depth.iter().copied().filter(|d| d.is_finite()).fold(f32::INFINITY, f32::min);
    println!("covered pixels: {} of {}", frame.covered_count(), frame.len());
    println!("nearest surface: {nearest:.4} m");
    println!("wrote {}", out.display());
    Ok(())
}
