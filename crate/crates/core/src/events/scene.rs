use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::{EventError, EventSimConfig, EventSimulator, EventStream, Region};
use crate::geometry::CameraModel;
use crate::physics::Trajectory;

/// A bright ball over a uniform background, rendered at `render_rate_hz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BallScene {
    pub ball_radius_m: f64,
    pub background: f32,
    pub ball: f32,
    pub render_rate_hz: f64,
    /// Simulated time before the window so that references settle, µs.
    pub warmup_us: u32,
}

impl Default for BallScene {
    fn default() -> Self {
        BallScene { ball_radius_m: 0.02, background: 0.15, ball: 0.9, render_rate_hz: 20_000.0, warmup_us: 400 }
    }
}

/// Projected center and radius of the ball in pixels.
pub fn ball_footprint(camera: &CameraModel, position: &nalgebra::Vector3<f64>, radius_m: f64) -> Option<(Vector2<f64>, f64)> {
    let pc = camera.pose.transform_point(position);
    if pc.z <= radius_m {
        return None;
    }
    let center = crate::geometry::project_camera_frame(&pc, &camera.intrinsics).ok()?;
    Some((center, camera.intrinsics.fx * radius_m / pc.z))
}

/// Anti-aliased disk over `region`; pixel `(x, y)` is centered on integer
/// coordinates.
pub fn render_disk(region: Region, center: Vector2<f64>, radius: f64, background: f32, foreground: f32) -> Vec<f32> {
    let mut out = Vec::with_capacity(region.width * region.height);
    for y in region.y0..region.y0 + region.height {
        for x in region.x0..region.x0 + region.width {
            let d = ((x as f64 - center.x).powi(2) + (y as f64 - center.y).powi(2)).sqrt();
            let cover = (radius - d + 0.5).clamp(0.0, 1.0) as f32;
            out.push(background + cover * (foreground - background));
        }
    }
    out
}

fn bbox(center: Vector2<f64>, radius: f64) -> (f64, f64, f64, f64) {
    (center.x - radius - 2.0, center.y - radius - 2.0, center.x + radius + 2.0, center.y + radius + 2.0)
}

fn clip(b: (f64, f64, f64, f64), width: usize, height: usize) -> Option<Region> {
    let x0 = b.0.floor().max(0.0) as usize;
    let y0 = b.1.floor().max(0.0) as usize;
    let x1 = (b.2.ceil().max(0.0) as usize).min(width);
    let y1 = (b.3.ceil().max(0.0) as usize).min(height);
    (x1 > x0 && y1 > y0).then_some(Region { x0, y0, width: x1 - x0, height: y1 - y0 })
}

/// Events seen by `camera` while the ball follows `trajectory`, from
/// `t0_us - warmup` to `t0_us + window_us`. Only the pixels around the
/// ball are re-rendered each frame.
pub fn simulate_ball_events(
    camera: &CameraModel,
    trajectory: &Trajectory,
    t0_us: u32,
    window_us: u32,
    scene: &BallScene,
    config: EventSimConfig,
) -> Result<EventStream, EventError> {
    let (w, h) = (camera.intrinsics.width as usize, camera.intrinsics.height as usize);
    let start = t0_us.saturating_sub(scene.warmup_us) as f64;
    let end = t0_us as f64 + window_us as f64;
    let footprint = |t_us: f64| {
        trajectory.position_at(t_us * 1e-6).and_then(|p| ball_footprint(camera, &p, scene.ball_radius_m))
    };
    let mut sim = EventSimulator::uniform(w, h, scene.background, start, config)?;
    let mut prev = footprint(start);
    if let Some((c, r)) = prev {
        if let Some(region) = clip(bbox(c, r), w, h) {
            sim.set_region(region, &render_disk(region, c, r, scene.background, scene.ball))?;
        }
    }
    let dt = 1e6 / scene.render_rate_hz;
    let steps = ((end - start) / dt).ceil().max(1.0) as usize;
    let mut events = Vec::new();
    for i in 1..=steps {
        let t = (start + i as f64 * dt).min(end);
        let cur = footprint(t);
        let boxes: Vec<_> = [prev, cur].iter().flatten().map(|&(c, r)| bbox(c, r)).collect();
        if let Some(union) = boxes.into_iter().reduce(|a, b| (a.0.min(b.0), a.1.min(b.1), a.2.max(b.2), a.3.max(b.3))) {
            if let Some(region) = clip(union, w, h) {
                let data = match cur {
                    Some((c, r)) => render_disk(region, c, r, scene.background, scene.ball),
                    None => vec![scene.background; region.width * region.height],
                };
                events.extend(sim.push_region(t, region, &data)?);
            }
        }
        prev = cur;
    }
    Ok(EventStream { width: w as u32, height: h as u32, events })
}
