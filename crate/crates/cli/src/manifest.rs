use std::collections::HashSet;
use std::path::{Path, PathBuf};

use relpose_core::camera::CameraIntrinsics;
use relpose_core::estimator::{QueryBundle, ReferenceBundle};
use relpose_core::rotations::Rotation;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io;

/// Dataset description: one entry per object, each with its own camera.
///
/// Relative paths are resolved against `root`, which is itself relative to
/// the manifest file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default = "dot")]
    pub root: PathBuf,
    pub objects: Vec<ObjectEntry>,
}

fn dot() -> PathBuf {
    PathBuf::from(".")
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn camera(&self) -> Result<CameraIntrinsics> {
        Ok(CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)?)
    }
}

impl From<CameraIntrinsics> for Intrinsics {
    fn from(k: CameraIntrinsics) -> Self {
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectEntry {
    pub name: String,
    pub intrinsics: Intrinsics,
    /// Depth PNG value / 1000 * depth_scale = meters.
    #[serde(default = "one")]
    pub depth_scale: f64,
    pub frames: Vec<FrameEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub id: String,
    pub rgb: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<PathBuf>,
    pub mask: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    /// Object-to-camera rotation, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<Rotation>,
}

impl FrameEntry {
    fn paths(&self) -> impl Iterator<Item = &PathBuf> {
        [Some(&self.rgb), self.depth.as_ref(), Some(&self.mask), self.features.as_ref()]
            .into_iter()
            .flatten()
    }
}

impl Manifest {
    /// Parses, resolves paths and validates. No image is decoded here, but
    /// every referenced file must exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut m: Manifest =
            serde_json::from_str(&text).map_err(|e| CliError::decode(path, format!("invalid manifest: {e}")))?;
        let base = path.parent().unwrap_or(Path::new("")).join(&m.root);
        m.root = base;
        m.resolve_paths();
        m.validate()?;
        Ok(m)
    }

    fn resolve_paths(&mut self) {
        let root = self.root.clone();
        for o in &mut self.objects {
            for f in &mut o.frames {
                for p in [Some(&mut f.rgb), f.depth.as_mut(), Some(&mut f.mask), f.features.as_mut()]
                    .into_iter()
                    .flatten()
                {
                    *p = root.join(&*p);
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for o in &self.objects {
            if !names.insert(&o.name) {
                return Err(CliError::Usage(format!("duplicate object {:?} in manifest", o.name)));
            }
            o.intrinsics
                .camera()
                .map_err(|e| CliError::Usage(format!("object {}: {e}", o.name)))?;
            if !(o.depth_scale > 0.0 && o.depth_scale.is_finite()) {
                return Err(CliError::Usage(format!(
                    "object {}: depth scale must be positive, got {}",
                    o.name, o.depth_scale
                )));
            }
            let mut ids = HashSet::new();
            for f in &o.frames {
                if !ids.insert(&f.id) {
                    return Err(CliError::Usage(format!("object {}: duplicate frame {:?}", o.name, f.id)));
                }
                for p in f.paths() {
                    if !p.is_file() {
                        return Err(CliError::io(p, std::io::ErrorKind::NotFound.into()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn object(&self, name: &str) -> Result<&ObjectEntry> {
        self.objects
            .iter()
            .find(|o| o.name == name)
            .ok_or_else(|| CliError::Usage(format!("no object {name:?} in manifest")))
    }
}

impl ObjectEntry {
    pub fn frame(&self, id: &str) -> Result<&FrameEntry> {
        self.frames
            .iter()
            .find(|f| f.id == id)
            .ok_or_else(|| CliError::Usage(format!("object {}: no frame {id:?}", self.name)))
    }

    /// Decodes a frame as a reference view; it must have depth.
    pub fn load_reference(&self, frame: &FrameEntry) -> Result<ReferenceBundle> {
        let depth = frame
            .depth
            .as_ref()
            .ok_or_else(|| CliError::Usage(format!("frame {}/{} has no depth", self.name, frame.id)))?;
        load_reference(
            &frame.rgb,
            depth,
            &frame.mask,
            frame.features.as_deref(),
            &self.intrinsics.camera()?,
            self.depth_scale,
        )
    }

    pub fn load_query(&self, frame: &FrameEntry) -> Result<QueryBundle> {
        load_query(
            &frame.rgb,
            &frame.mask,
            frame.features.as_deref(),
            &self.intrinsics.camera()?,
        )
    }
}

fn check_size(path: &Path, w: usize, h: usize, k: &CameraIntrinsics) -> Result<()> {
    if w != k.width || h != k.height {
        return Err(CliError::decode(
            path,
            format!("image is {w}x{h} but the intrinsics are {}x{}", k.width, k.height),
        ));
    }
    Ok(())
}

/// Fails on the first missing path before anything is decoded.
pub fn require_files<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            return Err(CliError::io(p, std::io::ErrorKind::NotFound.into()));
        }
    }
    Ok(())
}

pub fn load_reference(
    rgb: &Path,
    depth: &Path,
    mask: &Path,
    features: Option<&Path>,
    k: &CameraIntrinsics,
    depth_scale: f64,
) -> Result<ReferenceBundle> {
    require_files([rgb, depth, mask].into_iter().chain(features))?;
    let rgb_img = io::read_rgb(rgb)?;
    check_size(rgb, rgb_img.width(), rgb_img.height(), k)?;
    let depth_map = io::read_depth(depth, depth_scale)?;
    check_size(depth, depth_map.width(), depth_map.height(), k)?;
    let mask_img = io::read_mask(mask)?;
    check_size(mask, mask_img.width(), mask_img.height(), k)?;
    Ok(ReferenceBundle {
        rgb: rgb_img,
        depth: depth_map,
        mask: mask_img,
        intrinsics: *k,
        features: features.map(io::read_features).transpose()?,
    })
}

pub fn load_query(rgb: &Path, mask: &Path, features: Option<&Path>, k: &CameraIntrinsics) -> Result<QueryBundle> {
    require_files([rgb, mask].into_iter().chain(features))?;
    let rgb_img = io::read_rgb(rgb)?;
    check_size(rgb, rgb_img.width(), rgb_img.height(), k)?;
    let mask_img = io::read_mask(mask)?;
    check_size(mask, mask_img.width(), mask_img.height(), k)?;
    Ok(QueryBundle {
        rgb: rgb_img,
        mask: mask_img,
        intrinsics: *k,
        features: features.map(io::read_features).transpose()?,
    })
}
