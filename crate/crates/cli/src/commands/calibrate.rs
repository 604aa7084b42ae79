use std::path::PathBuf;

use serde::Serialize;
use ttperc_core::calib::{
    bundle_adjust, initialize_extrinsics, random_wand_poses, read_detections_csv, simulate_wand_capture,
    write_detections_csv, write_mae_csv, CalibrationProblem, CaptureSettings, WandGeometry,
};
use ttperc_core::geometry::{ErrorStats, Rig};

use super::{open, Context};
use crate::error::CliError;

#[derive(Debug, Default, clap::Args)]
pub struct CalibrateArgs {
    /// Detections CSV (`camera,t,u,v,marker,confidence`); simulated when absent.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Wand geometry JSON.
    #[arg(long)]
    pub wand: Option<PathBuf>,
    /// Rig JSON providing intrinsics (and the true poses when simulating).
    #[arg(long)]
    pub rig: Option<PathBuf>,
    /// Camera that fixes the world frame.
    #[arg(long)]
    pub gauge: Option<usize>,
}

#[derive(Serialize)]
struct CameraReport {
    camera: usize,
    name: String,
    mae: Option<ErrorStats>,
    /// Distance of the estimated center from the true one, m (simulated runs).
    center_error_m: Option<f64>,
}

#[derive(Serialize)]
struct Summary {
    samples: usize,
    detections: usize,
    converged: bool,
    iterations: usize,
    cost_history: Vec<f64>,
    unclassified: Option<usize>,
    misclassified: Option<usize>,
    cameras: Vec<CameraReport>,
}

/// Writes `detections.csv` (simulated runs), `rig.json`, `mae.csv` and
/// `calibration.json`.
pub fn run(ctx: &Context, args: &CalibrateArgs) -> Result<(), CliError> {
    let section = ctx.config.calibrate.as_ref();
    let mut rig = match &args.rig {
        Some(p) => Rig::load(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
        None => Rig::table_tennis_default(),
    };
    if let Some(g) = args.gauge.or(section.and_then(|s| s.gauge)) {
        if g >= rig.cameras.len() {
            return Err(CliError::Config(format!("gauge camera {g} outside 0..{}", rig.cameras.len())));
        }
        rig.gauge = g;
    }
    let wand = match &args.wand {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| super::io_error(p, e))?;
            WandGeometry::from_json(&text)?
        }
        None => section.and_then(|s| s.wand).unwrap_or_default(),
    };
    wand.validate()?;

    let (detections, capture) = match &args.detections {
        Some(p) => (read_detections_csv(open(p)?)?, None),
        None => {
            let s = section.ok_or_else(|| {
                CliError::Config("missing section [calibrate] (or pass --detections)".into())
            })?;
            if s.poses == 0 {
                return Err(CliError::Config("calibrate.poses must be at least 1".into()));
            }
            let seed = ctx.config.seed_for(ctx.seed, s.seed);
            let poses = random_wand_poses(s.poses, seed);
            let settings = CaptureSettings { noise_px: s.noise_px.unwrap_or(0.0), seed, ..Default::default() };
            let capture = simulate_wand_capture(&rig, &wand, &poses, &settings)?;
            write_detections_csv(&capture.detections, ctx.create("detections.csv")?)?;
            (capture.detections.clone(), Some(capture))
        }
    };
    let ba = section.and_then(|s| s.ba).unwrap_or_default();
    let n_detections = detections.len();
    let problem = CalibrationProblem::new(rig.clone(), wand, detections)?;
    let initial = initialize_extrinsics(&problem)?;
    let result = bundle_adjust(&problem, &initial, &ba)?;

    std::fs::write(ctx.path("rig.json"), result.rig.to_json()).map_err(|e| super::io_error(&ctx.path("rig.json"), e))?;
    write_mae_csv(&result.rig, &result.per_camera, ctx.create("mae.csv")?)?;
    let truth = capture.as_ref().map(|_| rig.gauge_aligned());
    let cameras = result
        .rig
        .cameras
        .iter()
        .enumerate()
        .map(|(i, cam)| CameraReport {
            camera: i,
            name: cam.name.clone(),
            mae: result.per_camera[i],
            center_error_m: truth.as_ref().map(|t| (cam.pose.center() - t.cameras[i].pose.center()).norm()),
        })
        .collect();
    for (i, s) in result.per_camera.iter().enumerate() {
        if let Some(s) = s {
            ctx.log(format!("camera {i}: {:.4} ± {:.4} px over {}", s.mean, s.std, s.count));
        }
    }
    ctx.write_json(
        "calibration.json",
        &Summary {
            samples: result.sample_times.len(),
            detections: n_detections,
            converged: result.converged,
            iterations: result.iterations,
            cost_history: result.cost_history.clone(),
            unclassified: capture.as_ref().map(|c| c.unclassified),
            misclassified: capture.as_ref().map(|c| c.misclassified),
            cameras,
        },
    )
}
