use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use relpose_core::camera::CameraIntrinsics;
use relpose_core::error::Error;
use relpose_core::estimator::{
    estimate, estimate_prepared, fd_gradient, initialize, prepare, refine, PoseObjective, RefinementConfig,
};
use relpose_core::image::{Image, Mask};
use relpose_core::losses::{LossMode, QueryTarget};
use relpose_core::mesh::TexturedMesh;
use relpose_core::render::RenderCamera;
use relpose_core::rotations::{candidate_poses, geodesic_distance, Rotation};
use relpose_core::synthetic::{generate, generate_with_rotation, random_rotation, SyntheticConfig};

fn deg(a: &Rotation, b: &Rotation) -> f64 {
    geodesic_distance(a, b).to_degrees()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn refinement_from_ten_degrees_reaches_three() {
    let cfg = RefinementConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut errors = Vec::new();
    for seed in 0..20 {
        let scene = generate(100 + seed, &SyntheticConfig::default()).unwrap();
        let objective = prepare(&scene.reference, &scene.query, &cfg).unwrap();
        let start = random_rotation(&mut rng, 10.0, 10.0 + 1e-9).compose(&scene.ground_truth);
        assert!((deg(&start, &scene.ground_truth) - 10.0).abs() < 1e-6);
        let (best, trace) = refine(&objective, &start, &cfg).unwrap();
        assert_eq!(trace.iterations.len(), cfg.iterations + 1);
        let start_loss = trace.iterations[0].loss.total;
        let best_loss = trace.iterations[trace.best_iteration].loss.total;
        assert!(best_loss <= start_loss);
        assert_eq!(trace.iterations[trace.best_iteration].rotation, best);
        errors.push(deg(&best, &scene.ground_truth));
    }
    let m = median(errors.clone());
    assert!(m <= 3.0, "median {m:.2} deg, errors {errors:.2?}");
}

#[test]
fn step_size_schedule_is_non_increasing() {
    let cfg = RefinementConfig {
        iterations: 30,
        ..Default::default()
    };
    let scene = generate(3, &SyntheticConfig::default()).unwrap();
    let objective = prepare(&scene.reference, &scene.query, &cfg).unwrap();
    let (_, trace) = refine(&objective, &scene.ground_truth, &cfg).unwrap();
    for w in trace.iterations.windows(2) {
        assert!(w[1].step_size <= w[0].step_size);
        assert!(w[1].step_size >= cfg.plateau.min_step);
    }
    // starting at the optimum never makes the answer worse
    let best = &trace.iterations[trace.best_iteration];
    assert!(best.loss.total <= trace.iterations[0].loss.total);
}

#[test]
fn zero_iterations_return_start() {
    let cfg = RefinementConfig {
        iterations: 0,
        ..Default::default()
    };
    let scene = generate(4, &SyntheticConfig::default()).unwrap();
    let objective = prepare(&scene.reference, &scene.query, &cfg).unwrap();
    let start = Rotation::about_x(0.1).compose(&scene.ground_truth);
    let (best, trace) = refine(&objective, &start, &cfg).unwrap();
    assert_eq!(best, start);
    assert_eq!(trace.iterations.len(), 1);
    assert_eq!(trace.iterations[0].rotation, start);
    assert!(trace.iterations[0].gradient_norm.is_none());
}

#[test]
fn traces_are_bit_identical_across_runs() {
    let cfg = RefinementConfig {
        viewpoints: 24,
        inplane: 6,
        iterations: 6,
        ..Default::default()
    };
    let scene = generate(5, &SyntheticConfig::default()).unwrap();
    let a = estimate(&scene.reference, &scene.query, &cfg).unwrap();
    let b = estimate(&scene.reference, &scene.query, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.trace.to_json(), b.trace.to_json());
    assert_eq!(a.trace.candidates_evaluated, 24 * 6);
}

#[test]
fn lattice_pose_query_returns_that_candidate() {
    let cfg = RefinementConfig {
        viewpoints: 40,
        inplane: 8,
        init_only: true,
        ..Default::default()
    };
    let poses = candidate_poses(&cfg.lattice()).unwrap();
    // the candidate closest to identity keeps the surface facing the camera
    let (index, pose) = poses
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.angle().total_cmp(&b.1.angle()))
        .map(|(i, p)| (i, *p))
        .unwrap();
    assert!(pose.angle().to_degrees() < 40.0);
    let scene = generate_with_rotation(6, &SyntheticConfig::default(), pose).unwrap();
    let objective = prepare(&scene.reference, &scene.query, &cfg).unwrap();
    let init = initialize(&objective, &cfg).unwrap();
    assert_eq!(init.evaluated, 40 * 8);
    assert_eq!(init.best.index, index);
    assert_eq!(init.best.rotation, pose);
    let loss = objective.loss(&pose).unwrap().total;
    assert_eq!(init.best.loss.total, loss);
    for w in init.ranked.windows(2) {
        assert!(w[0].loss.total <= w[1].loss.total);
    }
}

#[test]
fn single_candidate_is_returned() {
    let cfg = RefinementConfig {
        viewpoints: 1,
        inplane: 1,
        init_only: true,
        ..Default::default()
    };
    let scene = generate(7, &SyntheticConfig::default()).unwrap();
    let est = estimate(&scene.reference, &scene.query, &cfg).unwrap();
    assert_eq!(est.rotation, candidate_poses(&cfg.lattice()).unwrap()[0]);
    assert_eq!(est.trace.candidates_evaluated, 1);
    assert!(est.trace.iterations.is_empty());
}

#[test]
fn recovers_twenty_five_degrees() {
    let cfg = RefinementConfig::default();
    let axis = Vector3::new(0.3, -0.8, 0.2).normalize();
    let gt = Rotation::exp(&(axis * 25f64.to_radians()));
    let scene = generate_with_rotation(8, &SyntheticConfig::default(), gt).unwrap();
    let est = estimate(&scene.reference, &scene.query, &cfg).unwrap();
    let err = deg(&est.rotation, &gt);
    assert!(err <= 3.0, "error {err:.2} deg");
    assert!(est.loss.total <= est.initial.loss.total);
    // covering radius of the default lattice
    assert!(deg(&est.initial.rotation, &gt) <= 12.0 + 9.0);
}

#[test]
fn self_pair_returns_identity() {
    let cfg = RefinementConfig::default();
    let scene = generate(9, &SyntheticConfig::default()).unwrap();
    let r = &scene.reference;
    let query = relpose_core::estimator::QueryBundle {
        rgb: r.rgb.clone(),
        mask: r.mask.clone(),
        intrinsics: r.intrinsics,
        features: r.features.clone(),
    };
    let est = estimate(r, &query, &cfg).unwrap();
    let err = est.rotation.angle().to_degrees();
    assert!(err <= 2.0, "self-pair error {err:.2} deg");
}

#[test]
fn init_only_skips_refinement() {
    let cfg = RefinementConfig {
        viewpoints: 30,
        inplane: 8,
        ..Default::default()
    };
    let scene = generate(11, &SyntheticConfig::default()).unwrap();
    let objective = prepare(&scene.reference, &scene.query, &cfg).unwrap();
    let only = estimate_prepared(&objective, &RefinementConfig { init_only: true, ..cfg.clone() }).unwrap();
    assert!(only.trace.iterations.is_empty());
    assert_eq!(only.rotation, only.initial.rotation);
    let full = estimate_prepared(&objective, &cfg).unwrap();
    assert_eq!(full.initial, only.initial);
    assert!(full.loss.total <= only.loss.total);
    assert_eq!(full.trace.initial, only.trace.initial);
}

#[test]
fn gradient_is_stable_and_small_at_optimum() {
    let cfg = RefinementConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for seed in 0..3 {
        let scene = generate(200 + seed, &SyntheticConfig::default()).unwrap();
        let objective = prepare(&scene.reference, &scene.query, &cfg).unwrap();
        let off = random_rotation(&mut rng, 5.0, 5.0 + 1e-9).compose(&scene.ground_truth);
        let g = fd_gradient(&objective, &off, cfg.fd_eps).unwrap();
        let g2 = fd_gradient(&objective, &off, 2.0 * cfg.fd_eps).unwrap();
        assert!((g2 - g).norm() < 0.3 * g.norm(), "doubling eps moved g by {:.3}", (g2 - g).norm() / g.norm());
        // the resampled query moves the minimum a fraction of a degree off
        // the ground truth, so the gradient there is small but not zero
        let g0 = fd_gradient(&objective, &scene.ground_truth, cfg.fd_eps).unwrap();
        assert!(g0.norm() <= 0.15 * g.norm(), "|g(gt)| = {:.3}, |g(5deg)| = {:.3}", g0.norm(), g.norm());
        // descending along -g lowers the loss
        let step = -g.normalize() * cfg.fd_eps;
        let l0 = objective.loss(&off).unwrap().total;
        let l1 = objective.loss(&relpose_core::rotations::local_retract(&off, &step)).unwrap().total;
        assert!(l1 < l0);
    }
}

#[test]
fn fd_gradient_rejects_bad_step() {
    let scene = generate(13, &SyntheticConfig::default()).unwrap();
    let objective = prepare(&scene.reference, &scene.query, &RefinementConfig::default()).unwrap();
    assert!(fd_gradient(&objective, &scene.ground_truth, 0.0).is_err());
    assert!(fd_gradient(&objective, &scene.ground_truth, -0.01).is_err());
}

#[test]
fn empty_query_mask_fails_in_crop_stage() {
    let scene = generate(14, &SyntheticConfig::default()).unwrap();
    let mut query = scene.query.clone();
    query.mask = Mask::new(query.mask.width(), query.mask.height(), false);
    match prepare(&scene.reference, &query, &RefinementConfig::default()) {
        Err(e @ Error::Stage { stage: "crop", .. }) => assert!(matches!(e.root(), Error::EmptyMask)),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("empty mask accepted"),
    }
}

#[test]
fn semantic_modes_need_features() {
    let scene = generate(15, &SyntheticConfig::default()).unwrap();
    let mut query = scene.query.clone();
    query.features = None;
    let cfg = RefinementConfig::default();
    assert!(matches!(
        prepare(&scene.reference, &query, &cfg),
        Err(Error::Configuration(_))
    ));
    let rgb_only = RefinementConfig {
        mode: LossMode::RgbOnly,
        ..cfg
    };
    assert!(prepare(&scene.reference, &query, &rgb_only).is_ok());
}

#[test]
fn empty_renders_are_a_degenerate_scene() {
    // geometry behind the camera never renders
    let v = |x: f64, y: f64| Vector3::new(x, y, -1.0);
    let mesh = TexturedMesh::new(vec![v(0.0, 0.0), v(0.1, 0.0), v(0.0, 0.1)], vec![[0, 1, 2]], vec![[1.0; 3]; 3], None)
        .unwrap();
    let k = CameraIntrinsics::new(60.0, 60.0, 32.0, 32.0, 64, 64).unwrap();
    let rgb = Image::from_fn(64, 64, 3, |x, y, _| ((x + y) % 7) as f32 / 7.0);
    let target = QueryTarget::new(&rgb, None, None, LossMode::RgbOnly).unwrap();
    let objective = PoseObjective::new(mesh, target, RenderCamera::new(k).unwrap(), true).unwrap();
    let cfg = RefinementConfig {
        viewpoints: 4,
        inplane: 2,
        crop: 64,
        ..Default::default()
    };
    match estimate_prepared(&objective, &cfg) {
        Err(e) => assert!(matches!(e.root(), Error::DegenerateScene(_)), "{e}"),
        Ok(_) => panic!("degenerate scene accepted"),
    }
}
