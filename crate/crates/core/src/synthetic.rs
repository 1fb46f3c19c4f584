//! Procedural scenes with exactly known relative rotation.
//!
//! The object is a textured height-field cap in front of the camera: a
//! paraboloid with bumps over an irregular star-shaped outline. The reference
//! frame is ray-cast analytically; the query is this crate's own render of the
//! reference mesh under the ground-truth rotation, so a perfect estimator
//! recovers it exactly. Three smooth scalar fields over the surface stand in
//! for semantic features; patch "tokens" are a fixed random linear mixture of
//! them, pooled over the same object crop an exporter would use.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{backproject, CameraIntrinsics, DepthMap};
use crate::crop::CropTransform;
use crate::error::{Error, Result};
use crate::estimator::{QueryBundle, ReferenceBundle};
use crate::image::{Image, Mask};
use crate::mesh::{build_mesh, DiscontinuityFilter, TexturedMesh};
use crate::render::{render, RenderCamera};
use crate::rotations::Rotation;
use crate::semantics::FeatureMap;

/// Value of pixels outside the object in generated colour images.
pub const BACKGROUND: f32 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    /// Camera-to-rim distance in meters.
    pub distance: f64,
    /// Mean outline radius in meters.
    pub radius: f64,
    pub min_angle_deg: f64,
    pub max_angle_deg: f64,
    /// Crop resolution and patch size the feature grids are pooled on.
    pub feature_crop: usize,
    pub patch_size: usize,
    pub feature_dim: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            focal: 320.0,
            distance: 0.4,
            radius: 0.09,
            min_angle_deg: 5.0,
            max_angle_deg: 60.0,
            feature_crop: 224,
            patch_size: 4,
            feature_dim: 8,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_angle_deg > 0.0 && self.min_angle_deg <= self.max_angle_deg && self.max_angle_deg < 90.0) {
            return Err(Error::Configuration(format!(
                "rotation bounds must satisfy 0 < min <= max < 90 degrees, got ({}, {})",
                self.min_angle_deg, self.max_angle_deg
            )));
        }
        if self.patch_size == 0 || self.feature_crop % self.patch_size != 0 {
            return Err(Error::Configuration(format!(
                "feature crop {} must be a multiple of the patch size {}",
                self.feature_crop, self.patch_size
            )));
        }
        if self.feature_dim < 3 {
            return Err(Error::Configuration("feature dimension must be at least 3".into()));
        }
        if !(self.radius > 0.0 && self.distance > 2.0 * self.radius) {
            return Err(Error::Configuration("object must be small and in front of the camera".into()));
        }
        self.intrinsics().map(|_| ())
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(
            self.focal,
            self.focal,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
            self.width,
            self.height,
        )
    }
}

/// The generating height field, in camera coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    /// Depth of the outline plane.
    pub rim_depth: f64,
    pub radius: f64,
    /// Outline harmonics `(amplitude, frequency, phase)`.
    pub outline: Vec<(f64, f64, f64)>,
    pub dome: f64,
    pub bump: (f64, f64, f64, f64),
    pub checker: (f64, f64),
    pub tint: [(f64, f64, f64); 3],
    pub fields: [(f64, f64, f64); 3],
}

impl Surface {
    fn random(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig) -> Self {
        let outline = vec![
            (rng.gen_range(0.08..0.18), 2.0, rng.gen_range(0.0..TAU)),
            (rng.gen_range(0.05..0.12), 3.0, rng.gen_range(0.0..TAU)),
            (rng.gen_range(0.0..0.05), 5.0, rng.gen_range(0.0..TAU)),
        ];
        let mut triple = |lo: f64, hi: f64| (rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(0.0..TAU));
        let tint = [triple(-40.0, 40.0), triple(-40.0, 40.0), triple(-40.0, 40.0)];
        let fields = [triple(-30.0, 30.0), triple(-30.0, 30.0), triple(-30.0, 30.0)];
        Self {
            rim_depth: cfg.distance,
            radius: cfg.radius,
            outline,
            dome: rng.gen_range(0.4..0.7) * cfg.radius,
            bump: (
                rng.gen_range(0.1..0.25) * cfg.radius,
                rng.gen_range(30.0..60.0),
                rng.gen_range(30.0..60.0),
                rng.gen_range(0.0..TAU),
            ),
            checker: (rng.gen_range(0.012..0.02), rng.gen_range(0.0..PI)),
            tint,
            fields,
        }
    }

    /// Normalized radius: below one inside the outline.
    pub fn rho(&self, x: f64, y: f64) -> f64 {
        let theta = y.atan2(x);
        let scale = 1.0 + self.outline.iter().map(|(a, f, p)| a * (f * theta + p).sin()).sum::<f64>();
        (x * x + y * y).sqrt() / (self.radius * scale)
    }

    /// Height towards the camera above the rim plane; zero outside.
    pub fn height(&self, x: f64, y: f64) -> f64 {
        let rho = self.rho(x, y);
        if rho >= 1.0 {
            return 0.0;
        }
        let (amp, kx, ky, phase) = self.bump;
        (1.0 - rho * rho) * (self.dome + amp * (kx * x + phase).sin() * (ky * y).cos())
    }

    pub fn depth(&self, x: f64, y: f64) -> f64 {
        self.rim_depth - self.height(x, y)
    }

    /// Intersection of the pixel ray with the surface, if it hits the object.
    pub fn cast(&self, k: &CameraIntrinsics, u: f64, v: f64) -> Option<Vector3<f64>> {
        let (rx, ry) = ((u - k.cx) / k.fx, (v - k.cy) / k.fy);
        let mut t = self.rim_depth;
        for _ in 0..500 {
            let next = self.depth(t * rx, t * ry);
            if (next - t).abs() < 1e-14 {
                t = next;
                break;
            }
            t = next;
        }
        let p = Vector3::new(t * rx, t * ry, t);
        (self.rho(p.x, p.y) < 1.0).then_some(p)
    }

    pub fn color(&self, x: f64, y: f64) -> [f32; 3] {
        let (period, angle) = self.checker;
        let (s, c) = angle.sin_cos();
        let (a, b) = ((c * x + s * y) / period, (-s * x + c * y) / period);
        let checker = (a.floor() + b.floor()).rem_euclid(2.0);
        let light = 0.55 + 0.45 * checker;
        self.tint.map(|(fx, fy, p)| (light * (0.3 + 0.35 * (1.0 + (fx * x + fy * y + p).sin()))) as f32)
    }

    pub fn semantic(&self, x: f64, y: f64) -> [f32; 3] {
        self.fields.map(|(fx, fy, p)| (0.5 + 0.5 * (fx * x + fy * y + p).sin()) as f32)
    }
}

/// A generated reference/query pair.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub seed: u64,
    pub surface: Surface,
    pub reference: ReferenceBundle,
    pub query: QueryBundle,
    /// Query rotation relative to the reference, about the mesh centroid.
    pub ground_truth: Rotation,
    /// Reference mesh carrying the raw semantic fields.
    pub mesh: TexturedMesh,
    /// Per-pixel semantic fields of the two views.
    pub reference_fields: Image,
    pub query_fields: Image,
}

/// Axis uniform on the sphere, angle uniform in `[min, max]` degrees.
pub fn random_rotation(rng: &mut impl Rng, min_deg: f64, max_deg: f64) -> Rotation {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..TAU);
    let r = (1.0 - z * z).sqrt();
    let axis = Vector3::new(r * phi.cos(), r * phi.sin(), z);
    let angle = if max_deg > min_deg {
        rng.gen_range(min_deg..max_deg)
    } else {
        min_deg
    };
    Rotation::exp(&(axis * angle.to_radians()))
}

/// Scene for `seed` with a random ground truth inside the configured bounds.
pub fn generate(seed: u64, cfg: &SyntheticConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let surface = Surface::random(&mut rng, cfg);
    let mixing = Mixing::random(&mut rng, cfg.feature_dim);
    let gt = random_rotation(&mut rng, cfg.min_angle_deg, cfg.max_angle_deg);
    build(seed, cfg, surface, mixing, gt)
}

/// Same object and features as [`generate`] for `seed`, with a chosen rotation.
pub fn generate_with_rotation(seed: u64, cfg: &SyntheticConfig, rotation: Rotation) -> Result<SyntheticScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let surface = Surface::random(&mut rng, cfg);
    let mixing = Mixing::random(&mut rng, cfg.feature_dim);
    build(seed, cfg, surface, mixing, rotation)
}

struct Mixing {
    weights: Vec<[f64; 3]>,
    offset: Vec<f64>,
}

impl Mixing {
    fn random(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        Self {
            weights: (0..dim)
                .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect(),
            offset: (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        }
    }

    /// Patch-averaged fields over the object crop, mixed into tokens.
    fn tokens(&self, fields: &Image, mask: &Mask, crop: usize, patch: usize) -> Result<FeatureMap> {
        let bbox = mask.bounding_box().ok_or(Error::EmptyMask)?;
        let t = CropTransform::around(&bbox, crop)?;
        let cropped = t.apply(fields);
        let g = crop / patch;
        let d = self.weights.len();
        let mut data = Vec::with_capacity(g * g * d);
        for ty in 0..g {
            for tx in 0..g {
                let mut f = [0.0f64; 3];
                for y in ty * patch..(ty + 1) * patch {
                    for x in tx * patch..(tx + 1) * patch {
                        for (c, v) in f.iter_mut().enumerate() {
                            *v += cropped.get(x, y, c) as f64;
                        }
                    }
                }
                f.iter_mut().for_each(|v| *v /= (patch * patch) as f64);
                for (w, o) in self.weights.iter().zip(&self.offset) {
                    data.push((o + w[0] * f[0] + w[1] * f[1] + w[2] * f[2]) as f32);
                }
            }
        }
        FeatureMap::new(g, g, d, patch, data)
    }
}

fn build(seed: u64, cfg: &SyntheticConfig, surface: Surface, mixing: Mixing, gt: Rotation) -> Result<SyntheticScene> {
    let k = cfg.intrinsics()?;
    let (w, h) = (cfg.width, cfg.height);
    let hits: Vec<Option<Vector3<f64>>> = (0..w * h)
        .map(|i| surface.cast(&k, (i % w) as f64, (i / w) as f64))
        .collect();
    let mask = Mask::from_fn(w, h, |u, v| hits[v * w + u].is_some());
    if mask.count() < 16 {
        return Err(Error::DegenerateScene("object does not cover the reference view".into()));
    }
    let depth = DepthMap::from_fn(w, h, |u, v| hits[v * w + u].map_or(0.0, |p| p.z))?;
    let attribute = |f: &dyn Fn(f64, f64) -> [f32; 3], fill: f32| {
        Image::from_fn(w, h, 3, |u, v, c| hits[v * w + u].map_or(fill, |p| f(p.x, p.y)[c]))
    };
    let rgb = attribute(&|x, y| surface.color(x, y), BACKGROUND);
    let fields = attribute(&|x, y| surface.semantic(x, y), 0.0);

    let cloud = backproject(&depth, &k, &mask)?;
    let mesh = build_mesh(&cloud, &rgb, Some(&fields), DiscontinuityFilter::default())?;
    let view = render(&mesh, &gt, &RenderCamera::new(k)?, true)?;
    if view.covered_pixels() < 16 {
        return Err(Error::DegenerateScene("query view is empty".into()));
    }
    let (mut query_rgb, query_fields, query_mask) = view.into_images();
    for (i, covered) in query_mask.data().iter().enumerate() {
        if !covered {
            query_rgb.data_mut()[3 * i..3 * i + 3].fill(BACKGROUND);
        }
    }
    let ref_features = mixing.tokens(&fields, &mask, cfg.feature_crop, cfg.patch_size)?;
    let query_features = mixing.tokens(&query_fields, &query_mask, cfg.feature_crop, cfg.patch_size)?;
    Ok(SyntheticScene {
        seed,
        surface,
        reference: ReferenceBundle {
            rgb,
            depth,
            mask,
            intrinsics: k,
            features: Some(ref_features),
        },
        query: QueryBundle {
            rgb: query_rgb,
            mask: query_mask,
            intrinsics: k,
            features: Some(query_features),
        },
        ground_truth: gt,
        mesh,
        reference_fields: fields,
        query_fields,
    })
}
