use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sparse_iclk::eval::{cli::Config, correspondence_error, pixel_error, pose_error};
use sparse_iclk::iclk::{align, compute_residuals, AlignOptions, Template};
use sparse_iclk::image::{build_pyramid, to_grayscale};
use sparse_iclk::refine::{feature_align, optimize_pose, FeatureAlignOptions, PoseOptimizeOptions};
use sparse_iclk::synth::{generate_scene, perturb_pose, render, sample_features, sample_pose_pair, SceneConfig};

#[test]
fn rendered_pair_aligns_and_refines() {
    let camera = Config::default().camera;
    let scene = generate_scene(&SceneConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (pose0, pose1) = sample_pose_pair(&scene, &camera, &mut rng, &Default::default()).unwrap();
    let (v0, v1) = (
        render(&scene, &pose0, &camera).unwrap(),
        render(&scene, &pose1, &camera).unwrap(),
    );
    let features = sample_features(&v0.depth, 50, &mut rng).unwrap();
    let (i0, i1) = (to_grayscale(&v0.rgb), to_grayscale(&v1.rgb));
    let (p0, p1) = (build_pyramid(&i0).unwrap(), build_pyramid(&i1).unwrap());
    let truth = pose1.inverse() * pose0;

    // the renderer is photometrically consistent at the true pose
    let t = Template::new(&p0, &features, &camera).unwrap();
    let r = compute_residuals(&t.levels[0], p1.image(0), &t.cameras[0], &truth).unwrap();
    let valid: Vec<f64> = r
        .values
        .iter()
        .zip(&r.valid)
        .filter(|(_, ok)| **ok)
        .map(|(v, _)| *v)
        .collect();
    let rms = (valid.iter().map(|v| v * v).sum::<f64>() / valid.len() as f64).sqrt();
    assert!(rms < 0.02, "rms {rms}");

    let depth = v0.depth.mean_valid().unwrap();
    let init = perturb_pose(&mut rng, &truth, 5f64.to_radians(), 0.05 * depth);
    let before = pixel_error(&features, &truth, &init, &camera).unwrap().mean;
    let result = align(&p0, &p1, &features, &camera, &init, &AlignOptions::default()).unwrap();
    let after = pixel_error(&features, &truth, &result.pose, &camera).unwrap().mean;
    let (_, e_rot) = pose_error(&truth, &result.pose).unwrap();
    assert!(after < 1.5 && after < before, "{before} -> {after}");
    assert!(e_rot < 0.01);

    let corr = feature_align(&i0, &i1, &features, &camera, &result.pose, &FeatureAlignOptions::default()).unwrap();
    assert!(correspondence_error(&corr, &truth, &camera).unwrap().mean < 0.5);
    let refined = optimize_pose(&corr, &camera, &result.pose, &PoseOptimizeOptions::default()).unwrap();
    assert!((refined.pose.translation - truth.translation).norm() < 0.1);
    assert!(refined.final_cost <= refined.initial_cost);
}

#[test]
fn exact_start_is_kept_at_every_level() {
    let camera = Config::default().camera;
    let scene = generate_scene(&SceneConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (pose0, _) = sample_pose_pair(&scene, &camera, &mut rng, &Default::default()).unwrap();
    let view = render(&scene, &pose0, &camera).unwrap();
    let features = sample_features(&view.depth, 50, &mut rng).unwrap();
    let pyr = build_pyramid(&to_grayscale(&view.rgb)).unwrap();
    let start = sparse_iclk::Se3Pose::from_translation(Vector3::zeros());
    let result = align(&pyr, &pyr, &features, &camera, &start, &AlignOptions::default()).unwrap();
    assert!(
        result.iterations_per_level.iter().all(|&n| n <= 1),
        "{:?}",
        result.iterations_per_level
    );
    assert!((result.pose.translation).norm() < 1e-12);
}
