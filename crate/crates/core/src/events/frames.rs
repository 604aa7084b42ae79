use serde::{Deserialize, Serialize};

use super::{EventError, EventStream};
use crate::geometry::{project, CameraModel};
use crate::physics::Trajectory;

/// Side of the spike-frame grid and of each coordinate's class range.
pub const CLASS_GRID: usize = 128;

/// `steps` binary frames of 2 x `height` x `width` cells; channel 0 holds
/// on events, channel 1 off events. Layout `[step][channel][y][x]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeFrames {
    pub steps: usize,
    pub height: usize,
    pub width: usize,
    pub window_us: u32,
    pub data: Vec<u8>,
    /// True when no event fell in the window.
    pub empty: bool,
}

impl SpikeFrames {
    pub fn zeros(steps: usize, height: usize, width: usize, window_us: u32) -> Self {
        SpikeFrames { steps, height, width, window_us, data: vec![0; steps * 2 * height * width], empty: true }
    }

    pub fn frame_len(&self) -> usize {
        2 * self.height * self.width
    }

    pub fn get(&self, step: usize, channel: usize, y: usize, x: usize) -> u8 {
        self.data[((step * 2 + channel) * self.height + y) * self.width + x]
    }

    /// Flat indices `(channel * height + y) * width + x` of active cells.
    pub fn active(&self, step: usize) -> Vec<u32> {
        let n = self.frame_len();
        self.data[step * n..(step + 1) * n]
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(i, _)| i as u32)
            .collect()
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn count_step(&self, step: usize) -> usize {
        let n = self.frame_len();
        self.data[step * n..(step + 1) * n].iter().filter(|&&v| v != 0).count()
    }
}

/// Bins events of `[t0, t0 + window)` into `steps` equal sub-windows and
/// max-pools the sensor onto `out_w` x `out_h` cells.
pub fn accumulate(
    stream: &EventStream,
    t0: u32,
    window_us: u32,
    steps: usize,
    out_w: usize,
    out_h: usize,
) -> Result<SpikeFrames, EventError> {
    if steps == 0 || window_us == 0 || window_us as usize % steps != 0 {
        return Err(EventError::InvalidWindow { window: window_us, steps });
    }
    if stream.width == 0 || stream.height == 0 {
        return Err(EventError::SizeMismatch);
    }
    let mut frames = SpikeFrames::zeros(steps, out_h, out_w, window_us);
    let t1 = t0.saturating_add(window_us);
    let sub = (window_us as usize / steps) as u64;
    for e in stream.events.iter().filter(|e| e.t >= t0 && e.t < t1) {
        let k = ((e.t - t0) as u64 / sub) as usize;
        let x = e.x as usize * out_w / stream.width as usize;
        let y = e.y as usize * out_h / stream.height as usize;
        if x >= out_w || y >= out_h {
            continue;
        }
        let c = if e.polarity > 0 { 0 } else { 1 };
        frames.data[((k * 2 + c) * out_h + y) * out_w + x] = 1;
        frames.empty = false;
    }
    Ok(frames)
}

/// Class label of the ball center at the window midpoint: the projected
/// pixel scaled to the 128 x 128 grid and rounded to the nearest class.
pub fn ground_truth_label(
    trajectory: &Trajectory,
    camera: &CameraModel,
    t0_us: u32,
    window_us: u32,
) -> Result<(usize, usize), EventError> {
    let t_mid = (t0_us as f64 + window_us as f64 / 2.0) * 1e-6;
    let p = trajectory.position_at(t_mid).ok_or(EventError::BallNotVisible)?;
    let px = project(&p, camera).map_err(|_| EventError::BallNotVisible)?;
    if !camera.intrinsics.contains(&px) {
        return Err(EventError::BallNotVisible);
    }
    Ok(pixel_to_class(px.x, px.y, camera.intrinsics.width as f64, camera.intrinsics.height as f64))
}

pub(crate) fn pixel_to_class(u: f64, v: f64, width: f64, height: f64) -> (usize, usize) {
    let g = CLASS_GRID as f64;
    let cx = (u * g / width).round().clamp(0.0, g - 1.0) as usize;
    let cy = (v * g / height).round().clamp(0.0, g - 1.0) as usize;
    (cx, cy)
}
