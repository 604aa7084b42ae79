//! Cross-module runs through the public API.

use std::path::PathBuf;

use nalgebra::Vector3;
use ttperc_core::calib::{
    bundle_adjust, initialize_extrinsics, random_wand_poses, read_detections_csv, simulate_wand_capture,
    write_detections_csv, BaSettings, CalibrationProblem, CaptureSettings, WandGeometry,
};
use ttperc_core::geometry::{Rig, Rotation};
use ttperc_core::physics::{fit_spin_damping, simulate, BallState, PhysicsParams};
use ttperc_core::snn::{
    read_weights, samples_from_dataset, synthesize_dataset, write_weights, ConvSpec, DatasetSettings, EventDataset,
    Network, NetworkConfig,
};
use ttperc_core::spin::{estimate_spin_from_images, render_ball, spinning_orientation, DotPattern, RenderSettings};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ttperc-core-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn flight_spin_decays_exponentially() {
    let k = 0.091;
    let w0 = 2.0 * std::f64::consts::PI * 60.0;
    let params = PhysicsParams { spin_damping: k, ..Default::default() };
    let start = BallState::new(0.0, Vector3::new(-1.0, 0.0, 0.3), Vector3::new(6.0, 0.0, 1.5), Vector3::new(0.0, w0, 0.0));
    let flight = simulate(&start, &params, 0.5, 1e-4).unwrap();
    let samples: Vec<(f64, f64)> = flight.states.iter().step_by(100).map(|s| (s.t, s.spin_rps())).collect();
    for &(t, r) in &samples {
        assert!((r - 60.0 * (-k * t).exp()).abs() < 1e-6 * 60.0, "t = {t}: {r}");
    }
    let fit = fit_spin_damping(&samples).unwrap();
    assert!((fit.k - k).abs() < 1e-6 && (fit.rate0 - 60.0).abs() < 1e-6);
}

#[test]
fn rendered_spin_is_recovered() {
    let pattern = DotPattern::default_pattern();
    let axis = Vector3::new(1.0, -2.0, 0.5).normalize();
    let settings = RenderSettings::default();
    let initial = spinning_orientation(&Rotation::identity(), &Vector3::x(), 1.0, 0.0, 0.1);
    let images: Vec<_> = (0..48)
        .map(|i| {
            let t = i as f64 / 350.0;
            let mut img = render_ball(&spinning_orientation(&initial, &axis, 42.0, 0.0, t), &pattern, &settings).unwrap();
            img.t = t;
            img
        })
        .collect();
    let est = estimate_spin_from_images(&images, &pattern).unwrap();
    assert!(est.reliable);
    assert!((est.rate0 - 42.0).abs() < 0.02 * 42.0, "{}", est.rate0);
    assert!(est.axis.dot(&axis) > 5f64.to_radians().cos());
}

#[test]
fn calibration_from_saved_detections_matches_direct_run() {
    let rig = Rig::table_tennis_default();
    let wand = WandGeometry::default();
    let settings = CaptureSettings { noise_px: 0.2, seed: 5, ..Default::default() };
    let capture = simulate_wand_capture(&rig, &wand, &random_wand_poses(30, 5), &settings).unwrap();

    let mut csv = Vec::new();
    write_detections_csv(&capture.detections, &mut csv).unwrap();
    let reread = read_detections_csv(csv.as_slice()).unwrap();
    assert_eq!(reread.len(), capture.detections.len());

    let solve = |detections| {
        let problem = CalibrationProblem::new(rig.clone(), wand, detections).unwrap();
        let initial = initialize_extrinsics(&problem).unwrap();
        bundle_adjust(&problem, &initial, &BaSettings::default()).unwrap()
    };
    let direct = solve(capture.detections.clone());
    let saved = solve(reread);
    assert!(direct.converged);
    for (a, b) in direct.rig.cameras.iter().zip(&saved.rig.cameras) {
        assert!((a.pose.center() - b.pose.center()).norm() < 1e-9);
    }

    // Noisy detections still place every camera near the truth.
    for (a, b) in direct.rig.cameras.iter().zip(&rig.gauge_aligned().cameras) {
        assert!((a.pose.center() - b.pose.center()).norm() < 5e-3);
    }
}

#[test]
fn saved_dataset_and_weights_reproduce_outputs() {
    let camera = &Rig::table_tennis_default().cameras[4];
    let dataset = synthesize_dataset(camera, &DatasetSettings { samples: 6, seed: 9, ..Default::default() }).unwrap();
    let dir = scratch("dataset");
    dataset.save(&dir).unwrap();
    let loaded = EventDataset::load(&dir).unwrap();
    std::fs::remove_dir_all(&dir).unwrap();
    assert_eq!(loaded, dataset);

    let config = NetworkConfig {
        steps: 4,
        conv1: ConvSpec { channels: 2, kernel: 5, stride: 2 },
        conv2: ConvSpec { channels: 2, kernel: 5, stride: 2 },
        hidden: 16,
        ..Default::default()
    };
    let net: Network<f32> = Network::new(&config).unwrap();
    let mut bytes = Vec::new();
    write_weights(&net, &config, &mut bytes).unwrap();
    let (back, back_config) = read_weights(bytes.as_slice()).unwrap();
    assert_eq!(back_config, config);
    for s in samples_from_dataset(&loaded, config.steps).unwrap() {
        assert_eq!(net.forward(&s.input).unwrap().rates, back.forward(&s.input).unwrap().rates);
    }
}
