//! Deterministic software rasterizer.
//!
//! Produces color, depth, face-id, UV and view-cosine buffers with a
//! z-buffer, back-face culling, near-plane clipping and perspective-correct
//! interpolation. Depth is the Euclidean distance from the camera center
//! along the pixel ray. Rows are rasterized in parallel bands; each pixel
//! visits triangles in submission order, so output does not depend on the
//! thread count.

mod depth;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{Camera, CameraFrame, TextureAtlas, Transform, TriangleMesh, Vec3};

pub use depth::DepthImage;

pub const NO_FACE: u32 = u32::MAX;
const BAND_ROWS: usize = 16;
const UNPAINTED_GRAY: [u8; 4] = [128, 128, 128, 255];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("degenerate camera: {0}")]
    DegenerateCamera(String),
    #[error("mesh is empty")]
    EmptyMesh,
}

/// One object submitted for rendering.
#[derive(Debug, Clone, Copy)]
pub struct RenderItem<'a> {
    pub mesh: &'a TriangleMesh,
    pub transform: Transform,
    pub atlas: Option<&'a TextureAtlas>,
}

impl<'a> RenderItem<'a> {
    pub fn new(mesh: &'a TriangleMesh, transform: Transform, atlas: Option<&'a TextureAtlas>) -> Self {
        RenderItem { mesh, transform, atlas }
    }
}

/// Per-pixel render outputs, row-major from the top-left pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBuffers {
    pub width: u32,
    pub height: u32,
    pub color: Vec<[u8; 4]>,
    /// Meters along the view ray; `+inf` where nothing was hit.
    pub depth: Vec<f32>,
    /// Face index within its object, or [`NO_FACE`].
    pub face_id: Vec<u32>,
    /// Index of the [`RenderItem`] that produced the pixel, or [`NO_FACE`].
    pub object: Vec<u32>,
    pub uv: Vec<[f64; 2]>,
    /// `|n . v|` for the surviving fragment, 0 where empty.
    pub view_cosine: Vec<f32>,
}

impl FrameBuffers {
    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    pub fn is_covered(&self, pixel: usize) -> bool {
        self.face_id[pixel] != NO_FACE
    }

    pub fn covered_count(&self) -> usize {
        self.face_id.iter().filter(|f| **f != NO_FACE).count()
    }

    pub fn color_image(&self) -> image::RgbaImage {
        let raw = self.color.iter().flatten().copied().collect();
        image::RgbaImage::from_raw(self.width, self.height, raw).expect("frame size")
    }
}

/// A pixel whose surviving fragment maps into the atlas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageSample {
    pub texel_id: usize,
    pub pixel: usize,
    pub view_cosine: f32,
    pub depth: f32,
}

#[derive(Clone, Copy)]
struct Fragment {
    depth: f64,
    face: u32,
    object: u32,
    uv: [f64; 2],
    cosine: f64,
    color: [u8; 4],
}

const EMPTY: Fragment = Fragment {
    depth: f64::INFINITY,
    face: NO_FACE,
    object: NO_FACE,
    uv: [0.0, 0.0],
    cosine: 0.0,
    color: [0, 0, 0, 0],
};

#[derive(Clone, Copy)]
struct ClipVertex {
    pos: Vec3,
    uv: [f64; 2],
}

/// Screen-space triangle ready for scan conversion.
struct Prepared {
    screen: [[f64; 2]; 3],
    inv_z: [f64; 3],
    pos: [Vec3; 3],
    uv: [[f64; 2]; 3],
    /// Unit face normal in view coordinates.
    normal: Vec3,
    face: u32,
    object: u32,
    min_x: usize,
    max_x: usize,
    min_y: usize,
    max_y: usize,
    owned: [bool; 3],
}

pub fn rasterize(
    mesh: &TriangleMesh,
    transform: &Transform,
    atlas: Option<&TextureAtlas>,
    camera: &Camera,
) -> Result<FrameBuffers, RasterError> {
    if mesh.is_empty() {
        return Err(RasterError::EmptyMesh);
    }
    rasterize_scene(&[RenderItem::new(mesh, *transform, atlas)], camera)
}

/// Multi-object z-buffered rasterization.
pub fn rasterize_scene(items: &[RenderItem<'_>], camera: &Camera) -> Result<FrameBuffers, RasterError> {
    let frame = camera.validate().map_err(RasterError::DegenerateCamera)?;
    let width = camera.width as usize;
    let height = camera.height as usize;

    let mut tris = Vec::new();
    for (oi, item) in items.iter().enumerate() {
        prepare_item(item, oi as u32, camera, &frame, &mut tris);
    }

    let mut frags = vec![EMPTY; width * height];
    frags
        .par_chunks_mut(width * BAND_ROWS)
        .enumerate()
        .for_each(|(band, chunk)| {
            let y0 = band * BAND_ROWS;
            let y1 = y0 + chunk.len() / width;
            for t in &tris {
                if t.max_y < y0 || t.min_y >= y1 {
                    continue;
                }
                scan_triangle(t, items, camera.far, width, y0, y1.min(t.max_y + 1), chunk);
            }
        });

    let n = frags.len();
    let mut out = FrameBuffers {
        width: camera.width,
        height: camera.height,
        color: Vec::with_capacity(n),
        depth: Vec::with_capacity(n),
        face_id: Vec::with_capacity(n),
        object: Vec::with_capacity(n),
        uv: Vec::with_capacity(n),
        view_cosine: Vec::with_capacity(n),
    };
    for f in frags {
        out.color.push(f.color);
        out.depth.push(f.depth as f32);
        out.face_id.push(f.face);
        out.object.push(f.object);
        out.uv.push(f.uv);
        out.view_cosine.push(f.cosine as f32);
    }
    Ok(out)
}

fn prepare_item(item: &RenderItem<'_>, object: u32, camera: &Camera, frame: &CameraFrame, out: &mut Vec<Prepared>) {
    let to_view = |p: Vec3| {
        let d = p - camera.position;
        Vec3::new(d.dot(&frame.right), d.dot(&frame.up), d.dot(&frame.forward))
    };
    let world: Vec<Vec3> = item.mesh.positions.iter().map(|p| item.transform.apply(p)).collect();
    let tan = (camera.vertical_fov * 0.5).tan();
    let (w, h) = (camera.width as f64, camera.height as f64);
    let aspect = camera.aspect();

    for (fi, face) in item.mesh.faces.iter().enumerate() {
        let wp = face.v.map(|k| world[k as usize]);
        let n = (wp[1] - wp[0]).cross(&(wp[2] - wp[0]));
        let nlen = n.norm();
        if !(nlen > 0.0) {
            continue;
        }
        // back-facing or edge-on
        if n.dot(&(wp[0] - camera.position)) >= 0.0 {
            continue;
        }
        let n = n / nlen;
        let normal = Vec3::new(n.dot(&frame.right), n.dot(&frame.up), n.dot(&frame.forward));
        let verts: Vec<ClipVertex> = (0..3)
            .map(|i| ClipVertex { pos: to_view(wp[i]), uv: item.mesh.uvs[face.uv[i] as usize] })
            .collect();
        let poly = clip_near(&verts, camera.near);
        if poly.len() < 3 {
            continue;
        }
        let project = |v: &ClipVertex| {
            let iz = 1.0 / v.pos.z;
            [
                (v.pos.x * iz / (tan * aspect) + 1.0) * 0.5 * w,
                (1.0 - v.pos.y * iz / tan) * 0.5 * h,
            ]
        };
        for k in 1..poly.len() - 1 {
            let mut tri = [poly[0], poly[k], poly[k + 1]];
            let mut s = tri.map(|v| project(&v));
            let area = edge(s[0], s[1], s[2]);
            if !(area.abs() > 0.0) || !area.is_finite() {
                continue;
            }
            if area < 0.0 {
                tri.swap(1, 2);
                s.swap(1, 2);
            }
            let min_xf = s.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let max_xf = s.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            let min_yf = s.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
            let max_yf = s.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
            if max_xf < 0.0 || max_yf < 0.0 || min_xf > w || min_yf > h {
                continue;
            }
            let clampi = |v: f64, hi: f64| v.floor().clamp(0.0, hi - 1.0) as usize;
            let owned = [(1, 2), (2, 0), (0, 1)].map(|(a, b)| {
                let dx = s[b][0] - s[a][0];
                let dy = s[b][1] - s[a][1];
                dy > 0.0 || (dy == 0.0 && dx < 0.0)
            });
            out.push(Prepared {
                screen: s,
                inv_z: tri.map(|v| 1.0 / v.pos.z),
                pos: tri.map(|v| v.pos),
                uv: tri.map(|v| v.uv),
                normal,
                face: fi as u32,
                object,
                min_x: clampi(min_xf, w),
                max_x: clampi(max_xf, w),
                min_y: clampi(min_yf, h),
                max_y: clampi(max_yf, h),
                owned,
            });
        }
    }
}

/// Sutherland-Hodgman against the plane `z = near` in view coordinates.
fn clip_near(poly: &[ClipVertex], near: f64) -> Vec<ClipVertex> {
    let inside = |v: &ClipVertex| v.pos.z >= near;
    if poly.iter().all(inside) {
        return poly.to_vec();
    }
    let mut out = Vec::with_capacity(4);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        if inside(&a) {
            out.push(a);
        }
        if inside(&a) != inside(&b) {
            let t = (near - a.pos.z) / (b.pos.z - a.pos.z);
            out.push(ClipVertex {
                pos: a.pos + (b.pos - a.pos) * t,
                uv: [a.uv[0] + (b.uv[0] - a.uv[0]) * t, a.uv[1] + (b.uv[1] - a.uv[1]) * t],
            });
        }
    }
    out
}

#[inline]
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

fn scan_triangle(
    t: &Prepared,
    items: &[RenderItem<'_>],
    far: f64,
    width: usize,
    y0: usize,
    y_end: usize,
    chunk: &mut [Fragment],
) {
    let [a, b, c] = t.screen;
    let y_start = t.min_y.max(y0);
    let atlas = items[t.object as usize].atlas;
    for y in y_start..y_end {
        let py = y as f64 + 0.5;
        for x in t.min_x..=t.max_x {
            let p = [x as f64 + 0.5, py];
            let e = [edge(b, c, p), edge(c, a, p), edge(a, b, p)];
            let inside = (0..3).all(|i| e[i] > 0.0 || (e[i] == 0.0 && t.owned[i]));
            if !inside {
                continue;
            }
            let wts = [e[0] * t.inv_z[0], e[1] * t.inv_z[1], e[2] * t.inv_z[2]];
            let sum = wts[0] + wts[1] + wts[2];
            if !(sum > 0.0) {
                continue;
            }
            let l = wts.map(|v| v / sum);
            let pos = t.pos[0] * l[0] + t.pos[1] * l[1] + t.pos[2] * l[2];
            if pos.z > far {
                continue;
            }
            let depth = pos.norm();
            let slot = &mut chunk[(y - y0) * width + x];
            if !(depth < slot.depth) {
                continue;
            }
            let uv = [
                (t.uv[0][0] * l[0] + t.uv[1][0] * l[1] + t.uv[2][0] * l[2]).clamp(0.0, 1.0),
                (t.uv[0][1] * l[0] + t.uv[1][1] * l[1] + t.uv[2][1] * l[2]).clamp(0.0, 1.0),
            ];
            let cosine = (t.normal.dot(&pos).abs() / depth).clamp(0.0, 1.0);
            let color = match atlas {
                Some(atlas) => {
                    let k = atlas.texel_index(uv);
                    if atlas.is_painted(k) {
                        atlas.pixel(k)
                    } else {
                        UNPAINTED_GRAY
                    }
                }
                None => UNPAINTED_GRAY,
            };
            *slot = Fragment { depth, face: t.face, object: t.object, uv, cosine, color };
        }
    }
}

/// Merged z-buffer of all items, quantized to 16 bits over the camera's clip range.
pub fn render_depth(items: &[RenderItem<'_>], camera: &Camera) -> Result<DepthImage, RasterError> {
    let frame = rasterize_scene(items, camera)?;
    Ok(DepthImage::encode(&frame.depth, camera.width, camera.height, camera.near, camera.far))
}

/// Every pixel whose surviving fragment maps into an atlas of `atlas_dims`.
pub fn visible_texels(
    mesh: &TriangleMesh,
    transform: &Transform,
    camera: &Camera,
    atlas_dims: (u32, u32),
) -> Result<Vec<CoverageSample>, RasterError> {
    let frame = rasterize(mesh, transform, None, camera)?;
    Ok(coverage_samples(&frame, atlas_dims))
}

pub fn coverage_samples(frame: &FrameBuffers, atlas_dims: (u32, u32)) -> Vec<CoverageSample> {
    (0..frame.len())
        .filter(|&i| frame.is_covered(i))
        .map(|i| CoverageSample {
            texel_id: crate::geometry::texel_index_for(frame.uv[i], atlas_dims),
            pixel: i,
            view_cosine: frame.view_cosine[i],
            depth: frame.depth[i],
        })
        .collect()
}
