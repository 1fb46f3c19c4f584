//! Software rasterizer for textured meshes under a rotation about a pivot.
//!
//! Screen positions are snapped to 1/256 px and edge functions are evaluated
//! in exact integer arithmetic, so the top-left fill rule is applied without
//! rounding ambiguity and shared edges are never shaded twice. Visibility is
//! resolved with a z-buffer first; attributes are interpolated once per
//! covered pixel afterwards with perspective-correct weights.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::image::{BoundingBox, Image, Mask};
use crate::mesh::TexturedMesh;
use crate::rotations::Rotation;

const SUBPIXEL_BITS: u32 = 8;
const SUBPIXEL: f64 = (1 << SUBPIXEL_BITS) as f64;
/// Triangles reaching further than this from the origin (in pixels) are skipped.
const MAX_SCREEN_COORD: f64 = (1 << 20) as f64;
const NEAR_PLANE: f64 = 1e-6;
const EMPTY: u32 = u32::MAX;

/// Intrinsics of a render target. Unlike a source camera, the principal
/// point may lie outside the frame (crops of off-center objects).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RenderCamera {
    pub intrinsics: CameraIntrinsics,
}

impl RenderCamera {
    pub fn new(intrinsics: CameraIntrinsics) -> Result<Self> {
        intrinsics.validate_focal()?;
        Ok(Self { intrinsics })
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }
}

impl From<CameraIntrinsics> for RenderCamera {
    fn from(intrinsics: CameraIntrinsics) -> Self {
        Self { intrinsics }
    }
}

/// Rasterized images for one pose. Colour and semantic images are zero
/// outside the coverage mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    rgb: Image,
    semantic: Image,
    coverage: Mask,
    depth: Vec<f32>,
    triangle: Vec<u32>,
    bounds: Option<BoundingBox>,
}

impl RenderOutput {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            rgb: Image::zeros(width, height, 3),
            semantic: Image::zeros(width, height, 3),
            coverage: Mask::new(width, height, false),
            depth: vec![f32::INFINITY; width * height],
            triangle: vec![EMPTY; width * height],
            bounds: None,
        }
    }

    /// Wraps externally produced images; a pixel counts as covered when any
    /// channel of either image is non-zero. Depth is left empty.
    pub fn from_images(rgb: Image, semantic: Image) -> Result<Self> {
        if rgb.channels() != 3 || !rgb.same_shape(&semantic) {
            return Err(Error::invalid("render images must be two same-shape 3-channel images"));
        }
        let (w, h) = (rgb.width(), rgb.height());
        let coverage = Mask::from_fn(w, h, |x, y| {
            rgb.pixel(x, y).iter().chain(semantic.pixel(x, y)).any(|v| *v != 0.0)
        });
        let bounds = coverage.bounding_box();
        Ok(Self {
            rgb,
            semantic,
            coverage,
            depth: vec![f32::INFINITY; w * h],
            triangle: vec![EMPTY; w * h],
            bounds,
        })
    }

    pub fn rgb(&self) -> &Image {
        &self.rgb
    }

    pub fn semantic(&self) -> &Image {
        &self.semantic
    }

    pub fn coverage(&self) -> &Mask {
        &self.coverage
    }

    /// Camera-frame depth in meters, `+inf` where nothing was drawn.
    pub fn depth(&self) -> &[f32] {
        &self.depth
    }

    /// Index of the visible triangle per pixel, `u32::MAX` where empty.
    pub fn triangles(&self) -> &[u32] {
        &self.triangle
    }

    /// Smallest box containing every covered pixel.
    pub fn bounds(&self) -> Option<BoundingBox> {
        self.bounds
    }

    pub fn into_images(self) -> (Image, Image, Mask) {
        (self.rgb, self.semantic, self.coverage)
    }

    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    pub fn covered_pixels(&self) -> usize {
        self.coverage.count()
    }

    /// Clears the previous frame; only its covered box can be dirty.
    fn reset(&mut self, width: usize, height: usize) {
        if self.width() != width || self.height() != height {
            *self = Self::new(width, height);
            return;
        }
        let Some(b) = self.bounds.take() else {
            return;
        };
        for y in b.y0..=b.y1 {
            let px = y * width + b.x0..=y * width + b.x1;
            self.rgb.data_mut()[3 * px.start()..3 * px.end() + 3].fill(0.0);
            self.semantic.data_mut()[3 * px.start()..3 * px.end() + 3].fill(0.0);
            self.depth[px.clone()].fill(f32::INFINITY);
            self.triangle[px.clone()].fill(EMPTY);
            for x in b.x0..=b.x1 {
                self.coverage.set(x, y, false);
            }
        }
    }
}

/// Reusable per-worker buffers.
#[derive(Debug, Default)]
pub struct RenderScratch {
    screen: Vec<ScreenVertex>,
    bary: Vec<[f32; 2]>,
}

#[derive(Debug, Clone, Copy, Default)]
struct ScreenVertex {
    x: i64,
    y: i64,
    inv_z: f64,
    ok: bool,
}

/// Renders `mesh` rotated by `pose` about its centroid.
pub fn render(mesh: &TexturedMesh, pose: &Rotation, cam: &RenderCamera, cull: bool) -> Result<RenderOutput> {
    render_about(mesh, pose, &mesh.centroid(), cam, cull)
}

/// Renders `mesh` with vertices mapped by `v' = pose * (v - pivot) + pivot`.
pub fn render_about(
    mesh: &TexturedMesh,
    pose: &Rotation,
    pivot: &Vector3<f64>,
    cam: &RenderCamera,
    cull: bool,
) -> Result<RenderOutput> {
    let mut out = RenderOutput::new(cam.width(), cam.height());
    render_into(mesh, pose, pivot, cam, cull, &mut out, &mut RenderScratch::default())?;
    Ok(out)
}

/// Renders every pose, preserving order; candidates run in parallel.
pub fn render_batch(
    mesh: &TexturedMesh,
    poses: &[Rotation],
    cam: &RenderCamera,
    cull: bool,
) -> Result<Vec<RenderOutput>> {
    let pivot = mesh.centroid();
    poses
        .par_iter()
        .enumerate()
        .map_init(RenderScratch::default, |scratch, (index, pose)| {
            let mut out = RenderOutput::new(cam.width(), cam.height());
            render_into(mesh, pose, &pivot, cam, cull, &mut out, scratch)
                .map(|_| out)
                .map_err(|e| Error::Candidate {
                    index,
                    source: Box::new(e),
                })
        })
        .collect()
}

/// Core rasterization into caller-owned buffers.
pub fn render_into(
    mesh: &TexturedMesh,
    pose: &Rotation,
    pivot: &Vector3<f64>,
    cam: &RenderCamera,
    cull: bool,
    out: &mut RenderOutput,
    scratch: &mut RenderScratch,
) -> Result<()> {
    let rot = pose.matrix();
    if rot.iter().any(|v| !v.is_finite()) || pivot.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("pose and pivot must be finite"));
    }
    cam.intrinsics.validate_focal()?;
    let (w, h) = (cam.width(), cam.height());
    out.reset(w, h);
    // only read where a triangle was written this frame
    scratch.bary.resize(w * h, [0.0; 2]);

    transform_vertices(mesh, &rot, pivot, &cam.intrinsics, &mut scratch.screen);

    let view_row = rot.row(2).transpose();
    let mut dirty: Option<BoundingBox> = None;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        if cull && view_row.dot(&mesh.normals()[t]) >= 0.0 {
            continue;
        }
        let v = [
            scratch.screen[tri[0] as usize],
            scratch.screen[tri[1] as usize],
            scratch.screen[tri[2] as usize],
        ];
        if !(v[0].ok && v[1].ok && v[2].ok) {
            continue;
        }
        if let Some(r) = rasterize(t as u32, v, w, h, &mut out.depth, &mut out.triangle, &mut scratch.bary) {
            dirty = Some(match dirty {
                None => r,
                Some(d) => BoundingBox {
                    x0: d.x0.min(r.x0),
                    y0: d.y0.min(r.y0),
                    x1: d.x1.max(r.x1),
                    y1: d.y1.max(r.y1),
                },
            });
        }
    }

    if let Some(d) = dirty {
        resolve(mesh, &scratch.bary, &d, out);
    }
    Ok(())
}

fn transform_vertices(
    mesh: &TexturedMesh,
    rot: &Matrix3<f64>,
    pivot: &Vector3<f64>,
    k: &CameraIntrinsics,
    screen: &mut Vec<ScreenVertex>,
) {
    screen.clear();
    screen.extend(mesh.vertices().iter().map(|v| {
        let p = rot * (v - pivot) + pivot;
        if p.z <= NEAR_PLANE {
            return ScreenVertex::default();
        }
        let u = k.fx * p.x / p.z + k.cx;
        let vv = k.fy * p.y / p.z + k.cy;
        if !(u.abs() < MAX_SCREEN_COORD && vv.abs() < MAX_SCREEN_COORD) {
            return ScreenVertex::default();
        }
        ScreenVertex {
            x: (u * SUBPIXEL).round() as i64,
            y: (vv * SUBPIXEL).round() as i64,
            inv_z: 1.0 / p.z,
            ok: true,
        }
    }));
}

/// Edge function `A*x + B*y + C = cross(q - p, s - p)` for the directed edge
/// `p -> q`, evaluated exactly in fixed point.
#[derive(Debug, Clone, Copy)]
struct Edge {
    a: i64,
    b: i64,
    c: i64,
}

impl Edge {
    fn new(p: &ScreenVertex, q: &ScreenVertex) -> Self {
        Edge {
            a: p.y - q.y,
            b: q.x - p.x,
            c: p.x * q.y - p.y * q.x,
        }
    }

    #[inline]
    fn eval(&self, x: i64, y: i64) -> i64 {
        self.a * x + self.b * y + self.c
    }

    /// Top-left rule: samples exactly on a left edge (inside lies toward +x)
    /// or a top edge (horizontal, inside toward +y) belong to the triangle.
    fn owns_boundary(&self) -> bool {
        self.a > 0 || (self.a == 0 && self.b > 0)
    }
}

fn rasterize(
    id: u32,
    mut v: [ScreenVertex; 3],
    w: usize,
    h: usize,
    depth: &mut [f32],
    triangle: &mut [u32],
    bary: &mut [[f32; 2]],
) -> Option<BoundingBox> {
    let mut area = Edge::new(&v[0], &v[1]).eval(v[2].x, v[2].y);
    if area == 0 {
        return None;
    }
    // keep the original vertex order for attribute lookup
    let mut order = [0usize, 1, 2];
    if area < 0 {
        v.swap(1, 2);
        order.swap(1, 2);
        area = -area;
    }
    let sub = 1i64 << SUBPIXEL_BITS;
    let min_x = v.iter().map(|p| p.x).min().unwrap();
    let max_x = v.iter().map(|p| p.x).max().unwrap();
    let min_y = v.iter().map(|p| p.y).min().unwrap();
    let max_y = v.iter().map(|p| p.y).max().unwrap();
    // pixel centers are at integer coordinates
    let x0 = div_ceil(min_x, sub).max(0);
    let x1 = max_x.div_euclid(sub).min(w as i64 - 1);
    let y0 = div_ceil(min_y, sub).max(0);
    let y1 = max_y.div_euclid(sub).min(h as i64 - 1);
    if x0 > x1 || y0 > y1 {
        return None;
    }

    // weight of vertex i comes from the edge opposite to it
    let e = [Edge::new(&v[1], &v[2]), Edge::new(&v[2], &v[0]), Edge::new(&v[0], &v[1])];
    let bias = e.map(|e| if e.owns_boundary() { 0 } else { 1 });
    let inv_area = 1.0 / area as f64;
    let iz = [v[0].inv_z, v[1].inv_z, v[2].inv_z];

    let mut row = [
        e[0].eval(x0 * sub, y0 * sub),
        e[1].eval(x0 * sub, y0 * sub),
        e[2].eval(x0 * sub, y0 * sub),
    ];
    let step_x = e.map(|e| e.a * sub);
    let step_y = e.map(|e| e.b * sub);
    for y in y0..=y1 {
        let mut wv = row;
        let base = y as usize * w;
        for x in x0..=x1 {
            if wv[0] >= bias[0] && wv[1] >= bias[1] && wv[2] >= bias[2] {
                let l0 = wv[0] as f64 * inv_area;
                let l1 = wv[1] as f64 * inv_area;
                let l2 = wv[2] as f64 * inv_area;
                let s = l0 * iz[0] + l1 * iz[1] + l2 * iz[2];
                let z = (1.0 / s) as f32;
                let px = base + x as usize;
                if z < depth[px] {
                    depth[px] = z;
                    triangle[px] = id;
                    // perspective-correct weights, stored in original vertex order
                    let mut b = [0.0f64; 3];
                    b[order[0]] = l0 * iz[0] / s;
                    b[order[1]] = l1 * iz[1] / s;
                    b[order[2]] = l2 * iz[2] / s;
                    bary[px] = [b[1] as f32, b[2] as f32];
                }
            }
            wv[0] += step_x[0];
            wv[1] += step_x[1];
            wv[2] += step_x[2];
        }
        row[0] += step_y[0];
        row[1] += step_y[1];
        row[2] += step_y[2];
    }
    Some(BoundingBox {
        x0: x0 as usize,
        y0: y0 as usize,
        x1: x1 as usize,
        y1: y1 as usize,
    })
}

fn div_ceil(a: i64, b: i64) -> i64 {
    -((-a).div_euclid(b))
}

/// Interpolates attributes for every covered pixel inside `dirty` and
/// records the tight covered box.
fn resolve(mesh: &TexturedMesh, bary: &[[f32; 2]], dirty: &BoundingBox, out: &mut RenderOutput) {
    let tris = mesh.triangles();
    let rgb = mesh.rgb();
    let sem = mesh.semantic();
    let w = out.width();
    let mut bounds: Option<BoundingBox> = None;
    for y in dirty.y0..=dirty.y1 {
        for x in dirty.x0..=dirty.x1 {
            let px = y * w + x;
            let t = out.triangle[px];
            if t == EMPTY {
                continue;
            }
            let tri = tris[t as usize];
            let [b1, b2] = bary[px];
            let b0 = 1.0 - b1 - b2;
            let (i0, i1, i2) = (tri[0] as usize, tri[1] as usize, tri[2] as usize);
            let o = out.rgb.pixel_mut(x, y);
            for c in 0..3 {
                o[c] = b0 * rgb[i0][c] + b1 * rgb[i1][c] + b2 * rgb[i2][c];
            }
            let o = out.semantic.pixel_mut(x, y);
            for c in 0..3 {
                o[c] = b0 * sem[i0][c] + b1 * sem[i1][c] + b2 * sem[i2][c];
            }
            out.coverage.set(x, y, true);
            bounds = Some(match bounds {
                None => BoundingBox { x0: x, y0: y, x1: x, y1: y },
                Some(b) => BoundingBox {
                    x0: b.x0.min(x),
                    y0: b.y0,
                    x1: b.x1.max(x),
                    y1: y,
                },
            });
        }
    }
    out.bounds = bounds;
}
