use std::path::{Path, PathBuf};

use clap::Args;
use log::info;
use rayon::prelude::*;
use relpose_core::rotations::Rotation;
use relpose_core::synthetic::{generate, SyntheticConfig, SyntheticScene};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io;
use crate::manifest::{FrameEntry, Intrinsics, Manifest, ObjectEntry};

/// 0.1 mm depth units keep desk-scale objects well inside 16 bits.
pub const SYNTH_DEPTH_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,

    /// Seed of the first scene; scene i uses seed + i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value_t = 1)]
    pub count: usize,

    /// Smallest relative rotation in degrees.
    #[arg(long, default_value_t = 5.0)]
    pub min_angle: f64,

    /// Largest relative rotation in degrees, below 90.
    #[arg(long, default_value_t = 60.0)]
    pub max_angle: f64,
}

/// Written next to each scene's images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneInfo {
    pub seed: u64,
    pub ground_truth: Rotation,
    pub angle_deg: f64,
    pub intrinsics: Intrinsics,
    pub depth_scale: f64,
    pub generator: SyntheticConfig,
}

pub fn scene_name(seed: u64) -> String {
    format!("scene_{seed:03}")
}

/// Writes `count` scenes and a manifest covering all of them. Returns the
/// manifest path.
pub fn synth(args: &SynthArgs) -> Result<PathBuf> {
    if args.count == 0 {
        return Err(CliError::Usage("scene count must be positive".into()));
    }
    let cfg = SyntheticConfig {
        min_angle_deg: args.min_angle,
        max_angle_deg: args.max_angle,
        ..Default::default()
    };
    cfg.validate()?;
    io::create_dir(&args.out)?;
    let seeds: Vec<u64> = (0..args.count as u64).map(|i| args.seed + i).collect();
    let scenes: Vec<SyntheticScene> = seeds
        .par_iter()
        .map(|&s| generate(s, &cfg).map_err(CliError::from))
        .collect::<Result<_>>()?;

    let mut objects = Vec::with_capacity(scenes.len());
    for scene in &scenes {
        objects.push(write_scene(&args.out, scene, &cfg)?);
    }
    let manifest = Manifest {
        root: PathBuf::from("."),
        objects,
    };
    let path = args.out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest always serializes");
    io::write_text(&path, &(text + "\n"))?;
    info!("wrote {} scenes to {}", scenes.len(), args.out.display());
    Ok(path)
}

fn write_scene(out: &Path, scene: &SyntheticScene, cfg: &SyntheticConfig) -> Result<ObjectEntry> {
    let name = scene_name(scene.seed);
    let dir = out.join(&name);
    io::create_dir(&dir)?;
    let rel = |f: &str| PathBuf::from(&name).join(f);
    let r = &scene.reference;
    let q = &scene.query;
    io::write_rgb(&dir.join("reference_rgb.png"), &r.rgb)?;
    io::write_depth(&dir.join("reference_depth.png"), &r.depth, SYNTH_DEPTH_SCALE)?;
    io::write_mask(&dir.join("reference_mask.png"), &r.mask)?;
    io::write_rgb(&dir.join("query_rgb.png"), &q.rgb)?;
    io::write_mask(&dir.join("query_mask.png"), &q.mask)?;
    let mut ref_features = None;
    let mut query_features = None;
    if let (Some(rf), Some(qf)) = (&r.features, &q.features) {
        io::write_features(&dir.join("reference_features.rpf"), rf)?;
        io::write_features(&dir.join("query_features.rpf"), qf)?;
        ref_features = Some(rel("reference_features.rpf"));
        query_features = Some(rel("query_features.rpf"));
    }
    let info = SceneInfo {
        seed: scene.seed,
        ground_truth: scene.ground_truth,
        angle_deg: scene.ground_truth.angle().to_degrees(),
        intrinsics: r.intrinsics.into(),
        depth_scale: SYNTH_DEPTH_SCALE,
        generator: cfg.clone(),
    };
    let text = serde_json::to_string_pretty(&info).expect("scene info always serializes");
    io::write_text(&dir.join("scene.json"), &(text + "\n"))?;

    // the reference camera defines the object frame, so the query's
    // absolute rotation is the relative one
    Ok(ObjectEntry {
        name: name.clone(),
        intrinsics: r.intrinsics.into(),
        depth_scale: SYNTH_DEPTH_SCALE,
        frames: vec![
            FrameEntry {
                id: "reference".into(),
                rgb: rel("reference_rgb.png"),
                depth: Some(rel("reference_depth.png")),
                mask: rel("reference_mask.png"),
                features: ref_features,
                rotation: Some(Rotation::identity()),
            },
            FrameEntry {
                id: "query".into(),
                rgb: rel("query_rgb.png"),
                depth: None,
                mask: rel("query_mask.png"),
                features: query_features,
                rotation: Some(scene.ground_truth),
            },
        ],
    })
}
