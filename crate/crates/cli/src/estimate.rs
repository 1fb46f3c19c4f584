use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use relpose_core::camera::{backproject, CameraIntrinsics};
use relpose_core::estimator::{estimate, Estimate, QueryBundle, ReferenceBundle};
use relpose_core::mesh::{build_mesh, DiscontinuityFilter};
use relpose_core::rotations::{geodesic_distance, Rotation};
use serde::Serialize;

use crate::config::{ConfigArgs, Settings};
use crate::error::{CliError, Result};
use crate::io;
use crate::manifest::{load_query, load_reference, require_files, Manifest};

/// Parses `fx,fy,cx,cy`.
pub fn parse_focal(s: &str) -> std::result::Result<[f64; 4], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad number {t:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected fx,fy,cx,cy, got {} values", v.len()))
}

/// Camera from `fx,fy,cx,cy` with the size taken from an image header.
fn camera_for(image: &Path, k: [f64; 4]) -> Result<CameraIntrinsics> {
    require_files([image])?;
    let (w, h) = image::image_dimensions(image).map_err(|e| CliError::decode(image, e))?;
    CameraIntrinsics::new(k[0], k[1], k[2], k[3], w as usize, h as usize)
        .map_err(|e| CliError::Usage(format!("--intrinsics: {e}")))
}

#[derive(Debug, Clone, Default, Args)]
pub struct PairSource {
    /// Take both views from a manifest instead of explicit paths.
    #[arg(long, requires_all = ["object", "reference", "query"])]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub object: Option<String>,
    /// Frame id of the reference view within the object.
    #[arg(long)]
    pub reference: Option<String>,
    /// Frame id of the query view within the object.
    #[arg(long)]
    pub query: Option<String>,

    #[arg(long, conflicts_with = "manifest")]
    pub ref_rgb: Option<PathBuf>,
    #[arg(long, conflicts_with = "manifest")]
    pub ref_depth: Option<PathBuf>,
    #[arg(long, conflicts_with = "manifest")]
    pub ref_mask: Option<PathBuf>,
    #[arg(long, conflicts_with = "manifest")]
    pub ref_features: Option<PathBuf>,
    #[arg(long, conflicts_with = "manifest")]
    pub query_rgb: Option<PathBuf>,
    #[arg(long, conflicts_with = "manifest")]
    pub query_mask: Option<PathBuf>,
    #[arg(long, conflicts_with = "manifest")]
    pub query_features: Option<PathBuf>,
    /// Pinhole camera as fx,fy,cx,cy; the size comes from the images.
    #[arg(long, value_parser = parse_focal, value_name = "FX,FY,CX,CY", conflicts_with = "manifest")]
    pub intrinsics: Option<[f64; 4]>,
    /// Query camera if it differs from the reference camera.
    #[arg(long, value_parser = parse_focal, value_name = "FX,FY,CX,CY", conflicts_with = "manifest")]
    pub query_intrinsics: Option<[f64; 4]>,
    /// Depth PNG value / 1000 * scale = meters.
    #[arg(long, default_value_t = 1.0, conflicts_with = "manifest")]
    pub depth_scale: f64,
}

/// The decoded pair plus identifiers and, when known, the true rotation.
pub struct LoadedPair {
    pub reference_id: String,
    pub query_id: String,
    pub reference: ReferenceBundle,
    pub query: QueryBundle,
    pub ground_truth: Option<Rotation>,
}

fn need<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| CliError::Usage(format!("missing --{flag} (or use --manifest)")))
}

impl PairSource {
    pub fn load(&self) -> Result<LoadedPair> {
        if let Some(path) = &self.manifest {
            let m = Manifest::load(path)?;
            let o = m.object(need(&self.object, "object")?)?;
            let rf = o.frame(need(&self.reference, "reference")?)?;
            let qf = o.frame(need(&self.query, "query")?)?;
            let ground_truth = match (rf.rotation, qf.rotation) {
                (Some(r), Some(q)) => Some(q.compose(&r.inverse())),
                _ => None,
            };
            return Ok(LoadedPair {
                reference_id: format!("{}/{}", o.name, rf.id),
                query_id: format!("{}/{}", o.name, qf.id),
                reference: o.load_reference(rf)?,
                query: o.load_query(qf)?,
                ground_truth,
            });
        }
        let rgb = need(&self.ref_rgb, "ref-rgb")?;
        let depth = need(&self.ref_depth, "ref-depth")?;
        let mask = need(&self.ref_mask, "ref-mask")?;
        let q_rgb = need(&self.query_rgb, "query-rgb")?;
        let q_mask = need(&self.query_mask, "query-mask")?;
        let k = *need(&self.intrinsics, "intrinsics")?;
        if !(self.depth_scale > 0.0 && self.depth_scale.is_finite()) {
            return Err(CliError::Usage(format!("depth scale must be positive, got {}", self.depth_scale)));
        }
        // every file is checked before the first decode
        let all = [rgb, depth, mask, q_rgb, q_mask]
            .into_iter()
            .chain(self.ref_features.as_ref())
            .chain(self.query_features.as_ref());
        require_files(all.map(PathBuf::as_path))?;
        let ref_cam = camera_for(rgb, k)?;
        let query_cam = camera_for(q_rgb, self.query_intrinsics.unwrap_or(k))?;
        Ok(LoadedPair {
            reference_id: rgb.display().to_string(),
            query_id: q_rgb.display().to_string(),
            reference: load_reference(rgb, depth, mask, self.ref_features.as_deref(), &ref_cam, self.depth_scale)?,
            query: load_query(q_rgb, q_mask, self.query_features.as_deref(), &query_cam)?,
            ground_truth: None,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub source: PairSource,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Write the resolved configuration, result and per-iteration trace here.
    #[arg(long, value_name = "PATH")]
    pub trace: Option<PathBuf>,
}

/// Contents of the trace file.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateOutput {
    pub config: Settings,
    pub reference: String,
    pub query: String,
    pub rotation: Rotation,
    pub quaternion: [f64; 4],
    pub ground_truth: Option<Rotation>,
    pub error_deg: Option<f64>,
    pub estimate: Estimate,
}

pub fn run_estimate(args: &EstimateArgs) -> Result<EstimateOutput> {
    let settings = args.config.resolve()?;
    settings.estimator.validate()?;
    let pair = args.source.load()?;
    let est = estimate(&pair.reference, &pair.query, &settings.estimator)?;
    let out = EstimateOutput {
        config: settings,
        reference: pair.reference_id,
        query: pair.query_id,
        rotation: est.rotation,
        quaternion: est.rotation.quaternion(),
        ground_truth: pair.ground_truth,
        error_deg: pair.ground_truth.map(|g| geodesic_distance(&g, &est.rotation).to_degrees()),
        estimate: est,
    };
    if let Some(path) = &args.trace {
        let text = serde_json::to_string_pretty(&out).expect("estimate output always serializes");
        io::write_text(path, &(text + "\n"))?;
    }
    Ok(out)
}

pub fn print_estimate(out: &EstimateOutput, w: &mut dyn Write) -> std::io::Result<()> {
    let m = out.rotation.row_major();
    writeln!(w, "rotation (row-major):")?;
    for r in 0..3 {
        writeln!(w, "  {:>12.9} {:>12.9} {:>12.9}", m[3 * r], m[3 * r + 1], m[3 * r + 2])?;
    }
    let q = out.quaternion;
    writeln!(w, "quaternion (w, x, y, z): {:.9} {:.9} {:.9} {:.9}", q[0], q[1], q[2], q[3])?;
    writeln!(w, "angle: {:.3} deg", out.rotation.angle().to_degrees())?;
    let e = &out.estimate;
    writeln!(w, "loss: {:.6} (rgb {:.6}, semantic {:.6})", e.loss.total, e.loss.l1, e.loss.l2)?;
    if out.config.estimator.init_only {
        writeln!(w, "candidates evaluated: {}", e.trace.candidates_evaluated)?;
        writeln!(
            w,
            "{:>4} {:>9} {:>10} {:>10} {:>10} {:>9}",
            "rank", "candidate", "loss", "rgb", "semantic", "angle"
        )?;
        for (i, c) in e.trace.initial.iter().enumerate() {
            writeln!(
                w,
                "{:>4} {:>9} {:>10.6} {:>10.6} {:>10.6} {:>9.3}",
                i + 1,
                c.index,
                c.loss.total,
                c.loss.l1,
                c.loss.l2,
                c.rotation.angle().to_degrees()
            )?;
        }
    } else {
        writeln!(
            w,
            "iterations: {} (best at {})",
            e.trace.iterations.len().saturating_sub(1),
            e.trace.best_iteration
        )?;
    }
    if let Some(err) = out.error_deg {
        writeln!(w, "error vs ground truth: {err:.3} deg")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct ExportMeshArgs {
    /// Take the view from a manifest instead of explicit paths.
    #[arg(long, requires_all = ["object", "frame"])]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub object: Option<String>,
    #[arg(long)]
    pub frame: Option<String>,

    #[arg(long, conflicts_with = "manifest")]
    pub rgb: Option<PathBuf>,
    #[arg(long, conflicts_with = "manifest")]
    pub depth: Option<PathBuf>,
    #[arg(long, conflicts_with = "manifest")]
    pub mask: Option<PathBuf>,
    #[arg(long, value_parser = parse_focal, value_name = "FX,FY,CX,CY", conflicts_with = "manifest")]
    pub intrinsics: Option<[f64; 4]>,
    #[arg(long, default_value_t = 1.0, conflicts_with = "manifest")]
    pub depth_scale: f64,

    /// Output PLY path.
    #[arg(long)]
    pub out: PathBuf,
}

/// Writes the reference mesh as ASCII PLY; returns (vertices, triangles).
pub fn export_mesh(args: &ExportMeshArgs) -> Result<(usize, usize)> {
    let bundle = if let Some(path) = &args.manifest {
        let m = Manifest::load(path)?;
        let o = m.object(need(&args.object, "object")?)?;
        o.load_reference(o.frame(need(&args.frame, "frame")?)?)?
    } else {
        let rgb = need(&args.rgb, "rgb")?;
        let depth = need(&args.depth, "depth")?;
        let mask = need(&args.mask, "mask")?;
        require_files([rgb.as_path(), depth, mask])?;
        let k = camera_for(rgb, *need(&args.intrinsics, "intrinsics")?)?;
        load_reference(rgb, depth, mask, None, &k, args.depth_scale)?
    };
    let cloud = backproject(&bundle.depth, &bundle.intrinsics, &bundle.mask)?;
    let mesh = build_mesh(&cloud, &bundle.rgb, None, DiscontinuityFilter::default())?;
    let mut buf = Vec::new();
    mesh.write_ply(&mut buf).expect("writing to memory");
    std::fs::write(&args.out, buf).map_err(|e| CliError::io(&args.out, e))?;
    Ok((mesh.vertices().len(), mesh.triangles().len()))
}
