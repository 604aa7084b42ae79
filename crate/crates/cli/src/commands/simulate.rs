use std::io::Write;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ttperc_core::events::{simulate_ball_events, write_evs, BallScene, EventSimConfig};
use ttperc_core::geometry::Rig;
use ttperc_core::physics::{simulate, BallState, PhysicsParams};
use ttperc_core::spin::{
    render_ball, spinning_orientation, track_from_images, BallImage, DotPattern, RenderSettings, DEFAULT_RESOLUTION,
};
use ttperc_core::spin::benchmark::{random_axis, random_rotation};

use super::{create, Context};
use crate::config::require;
use crate::error::CliError;

/// Binary 8-bit PGM.
fn write_pgm(img: &BallImage, mut w: impl Write) -> std::io::Result<()> {
    write!(w, "P5\n{} {}\n255\n", img.width, img.height)?;
    let bytes: Vec<u8> = img.pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    w.write_all(&bytes)?;
    w.flush()
}

/// Writes per trajectory `trajectory_NNN.csv`, one `events_NNN_camC.evs`
/// per event camera, ball images under `images_NNN/` and the orientation
/// track recovered from them as `orientation_NNN.csv`.
pub fn run(ctx: &Context) -> Result<(), CliError> {
    let s = require(&ctx.config.simulate, "simulate")?;
    if s.trajectories == 0 {
        return Err(CliError::Config("simulate.trajectories must be at least 1".into()));
    }
    let duration = s.duration_s.unwrap_or(1.0);
    let dt = s.dt_s.unwrap_or(1e-4);
    let (vmin, vmax) = (s.speed_min.unwrap_or(4.0), s.speed_max.unwrap_or(10.0));
    if !(vmin > 0.0 && vmax > vmin) {
        return Err(CliError::Config("simulate.speed_min/speed_max must satisfy 0 < min < max".into()));
    }
    let spin_max = s.spin_max_rps.unwrap_or(100.0);
    if !(spin_max > 0.0) {
        return Err(CliError::Config("simulate.spin_max_rps must be positive".into()));
    }
    let images = s.images.unwrap_or(32);
    let fps = s.image_fps.unwrap_or(350.0);
    let render = RenderSettings { resolution: s.image_resolution.unwrap_or(DEFAULT_RESOLUTION), ..Default::default() };
    let window_us = s.event_window_us.unwrap_or(100_000);
    let events = EventSimConfig { threshold: s.event_threshold.unwrap_or(0.2), ..Default::default() };
    let scene = BallScene::default();
    let params = PhysicsParams::default();
    let pattern = DotPattern::default_pattern();
    let rig = Rig::table_tennis_default();
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.config.seed_for(ctx.seed, s.seed));

    for i in 0..s.trajectories {
        let p0 = Vector3::new(-1.6, rng.gen_range(-0.5..0.5), rng.gen_range(0.2..0.4));
        let v0 = Vector3::new(rng.gen_range(vmin..vmax), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.5));
        let axis = random_axis(&mut rng);
        let rate = rng.gen_range(0.0..spin_max);
        let initial = random_rotation(&mut rng);
        let traj = simulate(&BallState::new(0.0, p0, v0, axis * rate * std::f64::consts::TAU), &params, duration, dt)?;
        traj.write_csv(create(&ctx.path(&format!("trajectory_{i:03}.csv")))?)?;

        for (c, cam) in rig.cameras.iter().enumerate().filter(|(_, c)| c.kind.is_event()) {
            let stream = simulate_ball_events(cam, &traj, 0, window_us, &scene, events)?;
            write_evs(&stream, create(&ctx.path(&format!("events_{i:03}_cam{c}.evs")))?)?;
        }

        let mut frames = Vec::with_capacity(images);
        for k in 0..images {
            let t = k as f64 / fps;
            let q = spinning_orientation(&initial, &axis, rate, params.spin_damping, t);
            let mut img = render_ball(&q, &pattern, &render)?;
            img.t = t;
            let path = ctx.path(&format!("images_{i:03}/frame_{k:04}.pgm"));
            write_pgm(&img, create(&path)?).map_err(|e| super::io_error(&path, e))?;
            frames.push(img);
        }
        track_from_images(&frames, &pattern).write_csv(create(&ctx.path(&format!("orientation_{i:03}.csv")))?)?;
        ctx.log(format!("trajectory {i}: {:.1} m/s, {rate:.1} rps", v0.norm()));
    }
    Ok(())
}
