//! Textured 2.5D front-surface mesh lifted from a single depth map.

use std::io::Write;

use nalgebra::Vector3;

use crate::camera::PointCloud;
use crate::error::{Error, Result};
use crate::image::Image;

/// Triangle mesh with per-vertex color and semantic attributes.
///
/// Triangles are wound so that, seen from the source camera, their normals
/// point back toward it (`normal.z < 0`).
#[derive(Debug, Clone)]
pub struct TexturedMesh {
    vertices: Vec<Vector3<f64>>,
    triangles: Vec<[u32; 3]>,
    rgb: Vec<[f32; 3]>,
    semantic: Vec<[f32; 3]>,
    normals: Vec<Vector3<f64>>,
    centroid: Vector3<f64>,
}

impl TexturedMesh {
    /// Validates indices, rejects degenerate triangles and computes normals
    /// and the vertex centroid.
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        triangles: Vec<[u32; 3]>,
        rgb: Vec<[f32; 3]>,
        semantic: Option<Vec<[f32; 3]>>,
    ) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::EmptyMesh(format!("{} vertices", vertices.len())));
        }
        if triangles.is_empty() {
            return Err(Error::EmptyMesh("no triangles".into()));
        }
        if rgb.len() != vertices.len() {
            return Err(Error::invalid("rgb attribute count differs from vertex count"));
        }
        let semantic = semantic.unwrap_or_else(|| vec![[0.0; 3]; vertices.len()]);
        if semantic.len() != vertices.len() {
            return Err(Error::invalid("semantic attribute count differs from vertex count"));
        }
        let mut normals = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&i| i as usize >= vertices.len()) {
                return Err(Error::invalid(format!("triangle {t} has out-of-range index")));
            }
            let n = triangle_cross(&vertices, tri);
            let len = n.norm();
            if !(len > 0.0) || !len.is_finite() {
                return Err(Error::invalid(format!("triangle {t} is degenerate")));
            }
            normals.push(n / len);
        }
        let centroid = vertices.iter().sum::<Vector3<f64>>() / vertices.len() as f64;
        Ok(Self {
            vertices,
            triangles,
            rgb,
            semantic,
            normals,
            centroid,
        })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn rgb(&self) -> &[[f32; 3]] {
        &self.rgb
    }

    pub fn semantic(&self) -> &[[f32; 3]] {
        &self.semantic
    }

    /// Unit face normals, one per triangle.
    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.centroid
    }

    /// Same geometry and colors with replaced semantic attributes.
    pub fn with_semantic(&self, semantic: Vec<[f32; 3]>) -> Result<Self> {
        if semantic.len() != self.vertices.len() {
            return Err(Error::invalid("semantic attribute count differs from vertex count"));
        }
        Ok(Self {
            semantic,
            ..self.clone()
        })
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        triangle_cross(&self.vertices, &self.triangles[t]).norm() / 2.0
    }

    /// ASCII PLY with positions and 8-bit colors.
    pub fn write_ply(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "ply")?;
        writeln!(w, "format ascii 1.0")?;
        writeln!(w, "element vertex {}", self.vertices.len())?;
        writeln!(w, "property float x")?;
        writeln!(w, "property float y")?;
        writeln!(w, "property float z")?;
        writeln!(w, "property uchar red")?;
        writeln!(w, "property uchar green")?;
        writeln!(w, "property uchar blue")?;
        writeln!(w, "element face {}", self.triangles.len())?;
        writeln!(w, "property list uchar int vertex_indices")?;
        writeln!(w, "end_header")?;
        for (p, c) in self.vertices.iter().zip(&self.rgb) {
            let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            writeln!(w, "{} {} {} {} {} {}", p.x, p.y, p.z, q(c[0]), q(c[1]), q(c[2]))?;
        }
        for t in &self.triangles {
            writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}

fn triangle_cross(v: &[Vector3<f64>], t: &[u32; 3]) -> Vector3<f64> {
    let a = v[t[0] as usize];
    (v[t[1] as usize] - a).cross(&(v[t[2] as usize] - a))
}

/// Recomputes unit normals from the vertex positions.
pub fn face_normals(mesh: &TexturedMesh) -> Vec<Vector3<f64>> {
    mesh.triangles
        .iter()
        .map(|t| triangle_cross(&mesh.vertices, t).normalize())
        .collect()
}

/// Silhouette-bridge filter: triangles with any edge longer than
/// `max(min_edge, factor * median quad edge)` are dropped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscontinuityFilter {
    pub min_edge: f64,
    pub factor: f64,
}

impl Default for DiscontinuityFilter {
    fn default() -> Self {
        Self {
            min_edge: 0.02,
            factor: 6.0,
        }
    }
}

/// Triangulates the valid pixel grid: two triangles per fully valid 2×2 quad,
/// split along the shorter 3D diagonal.
pub fn build_mesh(
    cloud: &PointCloud,
    rgb: &Image,
    semantic: Option<&Image>,
    filter: DiscontinuityFilter,
) -> Result<TexturedMesh> {
    let (w, h) = (cloud.width(), cloud.height());
    if rgb.width() != w || rgb.height() != h || rgb.channels() != 3 {
        return Err(Error::invalid(format!(
            "rgb {}x{}x{} does not match grid {}x{}x3",
            rgb.width(),
            rgb.height(),
            rgb.channels(),
            w,
            h
        )));
    }
    if let Some(s) = semantic {
        if s.width() != w || s.height() != h || s.channels() != 3 {
            return Err(Error::invalid("semantic map does not match grid"));
        }
    }

    let mut index = vec![u32::MAX; w * h];
    let mut vertices = Vec::with_capacity(cloud.valid_count());
    let mut colors = Vec::with_capacity(cloud.valid_count());
    let mut sems = Vec::with_capacity(cloud.valid_count());
    for v in 0..h {
        for u in 0..w {
            if let Some(p) = cloud.point(u, v) {
                index[v * w + u] = vertices.len() as u32;
                vertices.push(*p);
                let c = rgb.pixel(u, v);
                colors.push([c[0], c[1], c[2]]);
                sems.push(match semantic {
                    Some(s) => {
                        let c = s.pixel(u, v);
                        [c[0], c[1], c[2]]
                    }
                    None => [0.0; 3],
                });
            }
        }
    }
    if vertices.len() < 3 {
        return Err(Error::EmptyMesh(format!("{} valid points", vertices.len())));
    }

    // candidate triangles plus quad side lengths for the adaptive threshold
    let mut candidates: Vec<[u32; 3]> = Vec::new();
    let mut sides: Vec<f64> = Vec::new();
    for v in 0..h.saturating_sub(1) {
        for u in 0..w.saturating_sub(1) {
            let i00 = index[v * w + u];
            let i10 = index[v * w + u + 1];
            let i01 = index[(v + 1) * w + u];
            let i11 = index[(v + 1) * w + u + 1];
            if [i00, i10, i01, i11].contains(&u32::MAX) {
                continue;
            }
            let p = |i: u32| vertices[i as usize];
            sides.extend([
                (p(i00) - p(i10)).norm(),
                (p(i00) - p(i01)).norm(),
                (p(i11) - p(i10)).norm(),
                (p(i11) - p(i01)).norm(),
            ]);
            if (p(i00) - p(i11)).norm() <= (p(i10) - p(i01)).norm() {
                candidates.push([i00, i01, i11]);
                candidates.push([i00, i11, i10]);
            } else {
                candidates.push([i00, i01, i10]);
                candidates.push([i10, i01, i11]);
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::EmptyMesh("no fully valid pixel quads".into()));
    }
    sides.sort_by(f64::total_cmp);
    let median = sides[sides.len() / 2];
    let tau = filter.min_edge.max(filter.factor * median);

    let triangles: Vec<[u32; 3]> = candidates
        .into_iter()
        .filter(|t| {
            let p = |k: usize| vertices[t[k] as usize];
            let longest = (p(0) - p(1)).norm().max((p(1) - p(2)).norm()).max((p(2) - p(0)).norm());
            longest <= tau && triangle_cross(&vertices, t).norm() > 0.0
        })
        .collect();
    if triangles.is_empty() {
        return Err(Error::EmptyMesh(format!(
            "all triangles exceed the discontinuity threshold {tau:.4} m"
        )));
    }
    TexturedMesh::new(vertices, triangles, colors, Some(sems))
}
