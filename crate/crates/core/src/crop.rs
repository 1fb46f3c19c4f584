//! Object-centred square crops and the matching render intrinsics.
//!
//! Coordinates follow the pixel-centre convention used everywhere else: the
//! full-frame pixel `u` covers `[u - 0.5, u + 0.5]`. A crop of `side` source
//! pixels with left edge `E` resampled to `R` pixels maps source `u` to crop
//! `x = (u - E) * R / side - 0.5`, so a camera with `fx' = fx * s` and
//! `cx' = (cx - E) * s - 0.5` (with `s = R / side`) projects straight into the
//! crop.

use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::image::{BoundingBox, Image, Mask};
use crate::render::RenderCamera;

/// Relative margin added on each side of the mask bounding box.
pub const CROP_MARGIN: f64 = 0.1;

/// The affine map between a full frame and its square crop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    /// Left and top crop edges in source pixel coordinates.
    pub left: f64,
    pub top: f64,
    /// Side of the square in source pixels.
    pub side: f64,
    pub resolution: usize,
}

impl CropTransform {
    /// Square of `(1 + 2 * margin) * max(bbox w, bbox h)` centred on the box.
    pub fn around(bbox: &BoundingBox, resolution: usize) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::invalid("crop resolution must be positive"));
        }
        let cx = (bbox.x0 + bbox.x1) as f64 / 2.0;
        let cy = (bbox.y0 + bbox.y1) as f64 / 2.0;
        let side = (1.0 + 2.0 * CROP_MARGIN) * bbox.width().max(bbox.height()) as f64;
        Ok(Self {
            left: cx - side / 2.0,
            top: cy - side / 2.0,
            side,
            resolution,
        })
    }

    /// Crop pixels per source pixel.
    pub fn scale(&self) -> f64 {
        self.resolution as f64 / self.side
    }

    pub fn to_crop(&self, u: f64, v: f64) -> (f64, f64) {
        let s = self.scale();
        ((u - self.left) * s - 0.5, (v - self.top) * s - 0.5)
    }

    pub fn to_source(&self, x: f64, y: f64) -> (f64, f64) {
        let s = self.scale();
        (self.left + (x + 0.5) / s, self.top + (y + 0.5) / s)
    }

    pub fn intrinsics(&self, k: &CameraIntrinsics) -> CameraIntrinsics {
        let s = self.scale();
        CameraIntrinsics {
            fx: k.fx * s,
            fy: k.fy * s,
            cx: (k.cx - self.left) * s - 0.5,
            cy: (k.cy - self.top) * s - 0.5,
            width: self.resolution,
            height: self.resolution,
        }
    }

    /// Moves the crop window by a source-pixel offset.
    pub fn shifted(&self, du: f64, dv: f64) -> Self {
        Self {
            left: self.left + du,
            top: self.top + dv,
            ..*self
        }
    }

    /// Samples per crop pixel along each axis when shrinking.
    fn supersampling(&self) -> usize {
        (1.0 / self.scale()).ceil().max(1.0) as usize
    }

    /// Resamples `image` into the crop by averaging bilinear supersamples.
    pub fn apply(&self, image: &Image) -> Image {
        let r = self.resolution;
        let f = self.supersampling();
        let c = image.channels();
        let mut out = Image::zeros(r, r, c);
        let mut acc = vec![0.0f32; c];
        let mut px = vec![0.0f32; c];
        let norm = 1.0 / (f * f) as f32;
        for y in 0..r {
            for x in 0..r {
                acc.fill(0.0);
                for sy in 0..f {
                    for sx in 0..f {
                        let (u, v) = self.sub_sample(x, y, sx, sy, f);
                        image.sample_bilinear(u, v, &mut px);
                        acc.iter_mut().zip(&px).for_each(|(a, p)| *a += p);
                    }
                }
                out.pixel_mut(x, y).iter_mut().zip(&acc).for_each(|(o, a)| *o = a * norm);
            }
        }
        out
    }

    /// Resamples a mask; source pixels outside the frame count as empty and
    /// the averaged coverage is thresholded at one half.
    pub fn apply_mask(&self, mask: &Mask) -> Mask {
        let r = self.resolution;
        let f = self.supersampling();
        let (w, h) = (mask.width() as f64, mask.height() as f64);
        let value = |u: f64, v: f64| -> f64 {
            let (x0, y0) = (u.floor(), v.floor());
            let (tx, ty) = (u - x0, v - y0);
            let at = |x: f64, y: f64| -> f64 {
                if x < 0.0 || y < 0.0 || x >= w || y >= h {
                    0.0
                } else {
                    mask.get(x as usize, y as usize) as u8 as f64
                }
            };
            (1.0 - ty) * ((1.0 - tx) * at(x0, y0) + tx * at(x0 + 1.0, y0))
                + ty * ((1.0 - tx) * at(x0, y0 + 1.0) + tx * at(x0 + 1.0, y0 + 1.0))
        };
        Mask::from_fn(r, r, |x, y| {
            let mut acc = 0.0;
            for sy in 0..f {
                for sx in 0..f {
                    let (u, v) = self.sub_sample(x, y, sx, sy, f);
                    acc += value(u, v);
                }
            }
            acc / (f * f) as f64 >= 0.5
        })
    }

    fn sub_sample(&self, x: usize, y: usize, sx: usize, sy: usize, f: usize) -> (f64, f64) {
        let s = self.scale();
        let off = |i: usize| (i as f64 + 0.5) / f as f64;
        (
            self.left + (x as f64 + off(sx)) / s,
            self.top + (y as f64 + off(sy)) / s,
        )
    }

    /// Nearest crop pixel for each full-frame pixel where `mask` is set;
    /// everything else is zero.
    pub fn uncrop_nearest(&self, crop: &Image, mask: &Mask) -> Image {
        let (w, h) = (mask.width(), mask.height());
        let r = self.resolution as i64;
        let mut out = Image::zeros(w, h, crop.channels());
        for v in 0..h {
            for u in 0..w {
                if !mask.get(u, v) {
                    continue;
                }
                let (x, y) = self.to_crop(u as f64, v as f64);
                let (x, y) = (x.round() as i64, y.round() as i64);
                if (0..r).contains(&x) && (0..r).contains(&y) {
                    out.pixel_mut(u, v).copy_from_slice(crop.pixel(x as usize, y as usize));
                }
            }
        }
        out
    }
}

/// A cropped view of one frame.
#[derive(Debug, Clone)]
pub struct CroppedView {
    pub rgb: Image,
    pub mask: Mask,
    pub camera: RenderCamera,
    pub transform: CropTransform,
}

/// Square crop around the mask with a 10% margin, resampled to
/// `resolution x resolution`, plus intrinsics that render into it.
pub fn normalize_crop(image: &Image, mask: &Mask, k: &CameraIntrinsics, resolution: usize) -> Result<CroppedView> {
    if image.width() != mask.width() || image.height() != mask.height() {
        return Err(Error::invalid(format!(
            "image {}x{} and mask {}x{} differ",
            image.width(),
            image.height(),
            mask.width(),
            mask.height()
        )));
    }
    let bbox = mask.bounding_box().ok_or(Error::EmptyMask)?;
    let transform = CropTransform::around(&bbox, resolution)?;
    crop_with(image, mask, k, transform)
}

/// Like [`normalize_crop`] with an explicit window.
pub fn crop_with(image: &Image, mask: &Mask, k: &CameraIntrinsics, transform: CropTransform) -> Result<CroppedView> {
    let camera = RenderCamera::new(transform.intrinsics(k))?;
    Ok(CroppedView {
        rgb: transform.apply(image),
        mask: transform.apply_mask(mask),
        camera,
        transform,
    })
}
