use std::path::Path;

use image::{ColorType, DynamicImage, GrayImage, ImageBuffer, Luma, RgbImage};
use relpose_core::camera::DepthMap;
use relpose_core::image::{Image, Mask};
use relpose_core::semantics::FeatureMap;

use crate::error::{CliError, Result};

/// Depth PNG units are millimetres times the dataset's depth scale.
const MM_PER_M: f64 = 1000.0;

fn open(path: &Path) -> Result<DynamicImage> {
    if !path.is_file() {
        return Err(CliError::io(path, std::io::ErrorKind::NotFound.into()));
    }
    image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => CliError::io(path, io),
        other => CliError::decode(path, other),
    })
}

fn save(img: &DynamicImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => CliError::io(path, io),
        other => CliError::decode(path, other),
    })
}

/// 8-bit colour image scaled to [0, 1].
pub fn read_rgb(path: &Path) -> Result<Image> {
    let img = open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Ok(Image::from_vec(w as usize, h as usize, 3, data)?)
}

/// Any pixel at or above mid-grey is object.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v >= 128).collect();
    Ok(Mask::from_vec(w as usize, h as usize, data)?)
}

/// 16-bit grayscale depth, `value / 1000 * depth_scale` meters, 0 invalid.
pub fn read_depth(path: &Path, depth_scale: f64) -> Result<DepthMap> {
    let img = open(path)?;
    if img.color() != ColorType::L16 {
        return Err(CliError::decode(
            path,
            format!("depth must be a 16-bit grayscale PNG, found {:?}", img.color()),
        ));
    }
    let img = img.into_luma16();
    let (w, h) = img.dimensions();
    let k = depth_scale / MM_PER_M;
    let data = img.into_raw().into_iter().map(|v| v as f64 * k).collect();
    Ok(DepthMap::from_vec(w as usize, h as usize, data)?)
}

pub fn read_features(path: &Path) -> Result<FeatureMap> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    FeatureMap::from_bytes(&bytes).map_err(|e| CliError::decode(path, e))
}

pub fn write_rgb(path: &Path, img: &Image) -> Result<()> {
    if img.channels() != 3 {
        return Err(CliError::Usage(format!("expected 3 channels, got {}", img.channels())));
    }
    let q = img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let buf = RgbImage::from_raw(img.width() as u32, img.height() as u32, q).expect("buffer matches its shape");
    save(&DynamicImage::ImageRgb8(buf), path)
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let q = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let buf = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, q).expect("buffer matches its shape");
    save(&DynamicImage::ImageLuma8(buf), path)
}

/// Rounds to the nearest depth unit; fails if a depth does not fit 16 bits.
pub fn write_depth(path: &Path, depth: &DepthMap, depth_scale: f64) -> Result<()> {
    let k = MM_PER_M / depth_scale;
    let mut q = Vec::with_capacity(depth.data().len());
    for &z in depth.data() {
        let v = (z * k).round();
        if v > u16::MAX as f64 {
            return Err(CliError::Usage(format!(
                "depth {z} m exceeds the 16-bit range at depth scale {depth_scale}"
            )));
        }
        q.push(v as u16);
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width() as u32, depth.height() as u32, q).expect("buffer matches its shape");
    save(&DynamicImage::ImageLuma16(buf), path)
}

pub fn write_features(path: &Path, features: &FeatureMap) -> Result<()> {
    std::fs::write(path, features.to_bytes()).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}
