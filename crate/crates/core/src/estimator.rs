//! Pose search: loss-ranked initialization over the candidate lattice followed
//! by Adam refinement in the tangent space of SO(3).
//!
//! Gradients are central finite differences of the full render-and-compare
//! loss along the three tangent axes, so every gradient costs six renders.

use log::{debug, info};
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{backproject, CameraIntrinsics, DepthMap};
use crate::crop::normalize_crop;
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::losses::{LossBreakdown, LossMode, QueryTarget};
use crate::mesh::{build_mesh, DiscontinuityFilter, TexturedMesh};
use crate::render::{render_into, RenderCamera, RenderOutput, RenderScratch};
use crate::rotations::{candidate_poses, local_retract, LatticeSpec, Rotation};
use crate::semantics::{apply_pca, fit_pca, FeatureMap, PcaTransform};

/// Learning-rate reduction on plateau, relative threshold mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    /// A loss counts as an improvement when below `best * (1 - threshold)`.
    pub threshold: f64,
    pub min_step: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            factor: 0.5,
            patience: 3,
            threshold: 1e-4,
            min_step: 1e-4,
        }
    }
}

/// Every constant of the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementConfig {
    pub viewpoints: usize,
    pub inplane: usize,
    pub iterations: usize,
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub plateau: PlateauConfig,
    pub fd_eps: f64,
    pub mode: LossMode,
    pub cull: bool,
    pub crop: usize,
    pub top_k: usize,
    pub init_only: bool,
    /// Shift the render window so the reference object lands on the query
    /// object's bounding-box centre. Off for same-position captures.
    pub recenter: bool,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            viewpoints: 200,
            inplane: 20,
            iterations: 30,
            step_size: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            plateau: PlateauConfig::default(),
            fd_eps: 0.0087,
            mode: LossMode::RgbSem,
            cull: true,
            crop: 224,
            top_k: 10,
            init_only: false,
            recenter: false,
        }
    }
}

impl RefinementConfig {
    pub fn lattice(&self) -> LatticeSpec {
        LatticeSpec {
            m: self.viewpoints,
            n: self.inplane,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Configuration(msg));
        if self.viewpoints == 0 || self.inplane == 0 {
            return bad(format!("lattice must be positive, got {}x{}", self.viewpoints, self.inplane));
        }
        if self.crop < 11 {
            return bad(format!("crop resolution {} is below one MS-SSIM window", self.crop));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad(format!("step size must be positive, got {}", self.step_size));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("Adam decay rates must lie in [0, 1) and epsilon must be positive".into());
        }
        let p = &self.plateau;
        if !(p.factor > 0.0 && p.factor < 1.0) || p.threshold < 0.0 || p.min_step < 0.0 {
            return bad(format!("invalid plateau scheduler {p:?}"));
        }
        if !(self.fd_eps > 0.0 && self.fd_eps < 0.1) {
            return bad(format!("finite-difference step must lie in (0, 0.1), got {}", self.fd_eps));
        }
        if self.top_k == 0 {
            return bad("top-k must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseCandidate {
    /// Position in the candidate lattice.
    pub index: usize,
    pub rotation: Rotation,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub rotation: Rotation,
    pub loss: LossBreakdown,
    pub step_size: f64,
    /// Absent on the final entry, where no update follows.
    pub gradient_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RefinementTrace {
    pub candidates_evaluated: usize,
    /// Best initialization candidates, ascending loss.
    pub initial: Vec<PoseCandidate>,
    pub iterations: Vec<IterationRecord>,
    /// Index into `iterations` of the returned pose.
    pub best_iteration: usize,
}

impl RefinementTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace is always serializable")
    }
}

/// The loss as a function of rotation for one prepared pair.
pub struct PoseObjective {
    mesh: TexturedMesh,
    target: QueryTarget,
    camera: RenderCamera,
    pivot: Vector3<f64>,
    cull: bool,
}

impl PoseObjective {
    pub fn new(mesh: TexturedMesh, target: QueryTarget, camera: RenderCamera, cull: bool) -> Result<Self> {
        if camera.width() != target.width() || camera.height() != target.height() {
            return Err(Error::invalid(format!(
                "render camera {}x{} does not match query {}x{}",
                camera.width(),
                camera.height(),
                target.width(),
                target.height()
            )));
        }
        let pivot = mesh.centroid();
        Ok(Self {
            mesh,
            target,
            camera,
            pivot,
            cull,
        })
    }

    pub fn mesh(&self) -> &TexturedMesh {
        &self.mesh
    }

    pub fn camera(&self) -> &RenderCamera {
        &self.camera
    }

    pub fn mode(&self) -> LossMode {
        self.target.mode()
    }

    pub fn render(&self, pose: &Rotation) -> Result<RenderOutput> {
        let mut out = RenderOutput::new(self.camera.width(), self.camera.height());
        render_into(&self.mesh, pose, &self.pivot, &self.camera, self.cull, &mut out, &mut RenderScratch::default())?;
        Ok(out)
    }

    pub fn loss(&self, pose: &Rotation) -> Result<LossBreakdown> {
        self.target.evaluate(&self.render(pose)?)
    }

    /// Loss and covered pixel count, reusing caller-owned buffers.
    pub fn loss_with(
        &self,
        pose: &Rotation,
        out: &mut RenderOutput,
        scratch: &mut RenderScratch,
    ) -> Result<(LossBreakdown, usize)> {
        render_into(&self.mesh, pose, &self.pivot, &self.camera, self.cull, out, scratch)?;
        Ok((self.target.evaluate(out)?, out.covered_pixels()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Initialization {
    pub best: PoseCandidate,
    /// Up to `top_k` candidates, ascending `(loss, index)`.
    pub ranked: Vec<PoseCandidate>,
    pub evaluated: usize,
}

/// Scores every lattice candidate and keeps the minimum; ties go to the
/// lowest index.
pub fn initialize(objective: &PoseObjective, cfg: &RefinementConfig) -> Result<Initialization> {
    cfg.validate()?;
    let poses = candidate_poses(&cfg.lattice())?;
    let (w, h) = (objective.camera.width(), objective.camera.height());
    let scored: Vec<(LossBreakdown, usize)> = poses
        .par_iter()
        .enumerate()
        .map_init(
            || (RenderOutput::new(w, h), RenderScratch::default()),
            |(out, scratch), (i, p)| {
                objective.loss_with(p, out, scratch).map_err(|e| Error::Candidate {
                    index: i,
                    source: Box::new(e),
                })
            },
        )
        .collect::<Result<_>>()?;
    if scored.iter().all(|(_, covered)| *covered == 0) {
        return Err(Error::DegenerateScene(format!(
            "all {} candidates render empty",
            poses.len()
        )));
    }
    let mut order: Vec<usize> = (0..poses.len()).collect();
    order.sort_by(|&a, &b| scored[a].0.total.total_cmp(&scored[b].0.total).then(a.cmp(&b)));
    let ranked: Vec<PoseCandidate> = order
        .iter()
        .take(cfg.top_k)
        .map(|&i| PoseCandidate {
            index: i,
            rotation: poses[i],
            loss: scored[i].0,
        })
        .collect();
    let best = ranked[0];
    debug!("initialization: best candidate {} with loss {:.5}", best.index, best.loss.total);
    Ok(Initialization {
        best,
        ranked,
        evaluated: poses.len(),
    })
}

/// Central differences of the total loss along the tangent axes at `pose`.
pub fn fd_gradient(objective: &PoseObjective, pose: &Rotation, eps: f64) -> Result<Vector3<f64>> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut out = RenderOutput::new(objective.camera.width(), objective.camera.height());
    let mut scratch = RenderScratch::default();
    let mut g = Vector3::zeros();
    for axis in 0..3 {
        let mut values = [0.0; 2];
        for (s, sign) in [1.0, -1.0].into_iter().enumerate() {
            let mut d = Vector3::zeros();
            d[axis] = sign * eps;
            let (l, _) = objective.loss_with(&local_retract(pose, &d), &mut out, &mut scratch)?;
            if !l.total.is_finite() {
                return Err(Error::NonFiniteGradient { probe: 2 * axis + s });
            }
            values[s] = l.total;
        }
        g[axis] = (values[0] - values[1]) / (2.0 * eps);
    }
    Ok(g)
}

struct Plateau {
    cfg: PlateauConfig,
    best: f64,
    bad: usize,
}

impl Plateau {
    fn new(cfg: PlateauConfig, initial: f64) -> Self {
        Self { cfg, best: initial, bad: 0 }
    }

    fn step(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best * (1.0 - self.cfg.threshold) {
            self.best = loss;
            self.bad = 0;
            return lr;
        }
        self.bad += 1;
        if self.bad > self.cfg.patience {
            self.bad = 0;
            let reduced = (lr * self.cfg.factor).max(self.cfg.min_step);
            if lr - reduced > 1e-12 {
                debug!("plateau: step size {lr} -> {reduced}");
                return reduced;
            }
        }
        lr
    }
}

/// `cfg.iterations` Adam steps from `start`; returns the lowest-loss iterate.
pub fn refine(objective: &PoseObjective, start: &Rotation, cfg: &RefinementConfig) -> Result<(Rotation, RefinementTrace)> {
    cfg.validate()?;
    let mut out = RenderOutput::new(objective.camera.width(), objective.camera.height());
    let mut scratch = RenderScratch::default();
    let mut pose = *start;
    let (mut loss, _) = objective.loss_with(&pose, &mut out, &mut scratch)?;
    let mut lr = cfg.step_size;
    let mut m = Vector3::zeros();
    let mut v = Vector3::<f64>::zeros();
    let mut plateau = Plateau::new(cfg.plateau, loss.total);
    let mut trace = RefinementTrace::default();
    let mut best = (loss.total, pose, 0usize);
    for k in 0..cfg.iterations {
        let g = fd_gradient(objective, &pose, cfg.fd_eps)?;
        trace.iterations.push(IterationRecord {
            iteration: k,
            rotation: pose,
            loss,
            step_size: lr,
            gradient_norm: Some(g.norm()),
        });
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.component_mul(&g);
        let t = (k + 1) as i32;
        let m_hat = m / (1.0 - cfg.beta1.powi(t));
        let v_hat = v / (1.0 - cfg.beta2.powi(t));
        let delta = -lr * m_hat.zip_map(&v_hat, |a, b| a / (b.sqrt() + cfg.epsilon));
        pose = local_retract(&pose, &delta);
        loss = objective.loss_with(&pose, &mut out, &mut scratch)?.0;
        if loss.total < best.0 {
            best = (loss.total, pose, k + 1);
        }
        lr = plateau.step(loss.total, lr);
    }
    trace.iterations.push(IterationRecord {
        iteration: cfg.iterations,
        rotation: pose,
        loss,
        step_size: lr,
        gradient_norm: None,
    });
    trace.best_iteration = best.2;
    Ok((best.1, trace))
}

/// Reference view: colour, metric depth, object mask, intrinsics and the
/// optional patch features of its object crop.
#[derive(Debug, Clone)]
pub struct ReferenceBundle {
    pub rgb: Image,
    pub depth: DepthMap,
    pub mask: Mask,
    pub intrinsics: CameraIntrinsics,
    pub features: Option<FeatureMap>,
}

#[derive(Debug, Clone)]
pub struct QueryBundle {
    pub rgb: Image,
    pub mask: Mask,
    pub intrinsics: CameraIntrinsics,
    pub features: Option<FeatureMap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub rotation: Rotation,
    /// The initialization winner, before refinement.
    pub initial: PoseCandidate,
    pub loss: LossBreakdown,
    pub trace: RefinementTrace,
}

/// Builds the mesh and query target for a pair.
pub fn prepare(reference: &ReferenceBundle, query: &QueryBundle, cfg: &RefinementConfig) -> Result<PoseObjective> {
    cfg.validate()?;
    let r = cfg.crop;
    let ref_view = normalize_crop(&reference.rgb, &reference.mask, &reference.intrinsics, r).map_err(|e| e.in_stage("crop"))?;
    let query_view = normalize_crop(&query.rgb, &query.mask, &query.intrinsics, r).map_err(|e| e.in_stage("crop"))?;

    let semantics = if cfg.mode.uses_semantics() {
        let (Some(rf), Some(qf)) = (&reference.features, &query.features) else {
            return Err(Error::Configuration(format!(
                "loss mode {} needs features for both reference and query",
                cfg.mode
            )));
        };
        let stage = |e: Error| e.in_stage("semantics");
        let pca: PcaTransform = fit_pca(rf, &ref_view.mask).map_err(stage)?;
        let ref_sem = apply_pca(rf, &pca, &ref_view.mask, r, r).map_err(stage)?;
        let query_sem = apply_pca(qf, &pca, &query_view.mask, r, r).map_err(stage)?;
        let per_pixel = ref_view.transform.uncrop_nearest(&ref_sem.image, &reference.mask);
        Some((per_pixel, query_sem))
    } else {
        None
    };

    let mesh = (|| {
        let cloud = backproject(&reference.depth, &reference.intrinsics, &reference.mask)?;
        build_mesh(
            &cloud,
            &reference.rgb,
            semantics.as_ref().map(|s| &s.0),
            DiscontinuityFilter::default(),
        )
    })()
    .map_err(|e| e.in_stage("mesh"))?;
    info!(
        "mesh: {} vertices, {} triangles",
        mesh.vertices().len(),
        mesh.triangles().len()
    );

    let camera = if cfg.recenter {
        let center = |m: &Mask| {
            let b = m.bounding_box().expect("non-empty masks were cropped above");
            ((b.x0 + b.x1) as f64 / 2.0, (b.y0 + b.y1) as f64 / 2.0)
        };
        let (ru, rv) = center(&reference.mask);
        let (qu, qv) = center(&query.mask);
        RenderCamera::new(query_view.transform.shifted(ru - qu, rv - qv).intrinsics(&query.intrinsics))?
    } else {
        query_view.camera
    };
    let target = QueryTarget::new(
        &query_view.rgb,
        semantics.as_ref().map(|s| &s.1.image),
        Some(&query_view.mask),
        cfg.mode,
    )
    .map_err(|e| e.in_stage("loss"))?;
    PoseObjective::new(mesh, target, camera, cfg.cull)
}

/// The whole pipeline for one reference/query pair.
pub fn estimate(reference: &ReferenceBundle, query: &QueryBundle, cfg: &RefinementConfig) -> Result<Estimate> {
    let objective = prepare(reference, query, cfg)?;
    estimate_prepared(&objective, cfg)
}

pub fn estimate_prepared(objective: &PoseObjective, cfg: &RefinementConfig) -> Result<Estimate> {
    let init = initialize(objective, cfg).map_err(|e| e.in_stage("initialize"))?;
    let mut trace = RefinementTrace {
        candidates_evaluated: init.evaluated,
        initial: init.ranked.clone(),
        ..Default::default()
    };
    if cfg.init_only {
        return Ok(Estimate {
            rotation: init.best.rotation,
            initial: init.best,
            loss: init.best.loss,
            trace,
        });
    }
    let (rotation, refined) = refine(objective, &init.best.rotation, cfg).map_err(|e| e.in_stage("refine"))?;
    trace.iterations = refined.iterations;
    trace.best_iteration = refined.best_iteration;
    let loss = trace.iterations[trace.best_iteration].loss;
    Ok(Estimate {
        rotation,
        initial: init.best,
        loss,
        trace,
    })
}
