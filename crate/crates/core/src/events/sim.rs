use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Event, EventError, EventStream};

/// Offset inside the log so that black pixels stay finite.
pub const LOG_EPS: f32 = 1e-3;
/// Slack on the threshold test so that exact multiples of `C` fire.
const CROSS_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventSimConfig {
    /// Contrast threshold on log intensity.
    pub threshold: f64,
    /// Minimum spacing between two events of the same pixel, µs.
    pub refractory_us: f64,
}

impl Default for EventSimConfig {
    fn default() -> Self {
        EventSimConfig { threshold: 0.2, refractory_us: 0.0 }
    }
}

/// Grayscale frame at time `t_us`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityFrame {
    pub t_us: f64,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl IntensityFrame {
    pub fn uniform(t_us: f64, width: usize, height: usize, value: f32) -> Self {
        IntensityFrame { t_us, width, height, data: vec![value; width * height] }
    }
}

/// Rectangular sensor region `[x0, x0 + width) x [y0, y0 + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

/// Contrast-threshold event generator with per-pixel log-intensity
/// references. Crossing times are linearly interpolated between frames.
/// A crossing inside the refractory window is not emitted but still moves
/// the reference.
#[derive(Debug, Clone)]
pub struct EventSimulator {
    width: usize,
    height: usize,
    config: EventSimConfig,
    reference: Vec<f64>,
    current: Vec<f64>,
    last_event: Vec<f64>,
    t_us: f64,
}

impl EventSimulator {
    /// Starts from a full first frame; references are set to its log intensity.
    pub fn new(first: &IntensityFrame, config: EventSimConfig) -> Result<Self, EventError> {
        if !(config.threshold > 0.0) {
            return Err(EventError::InvalidThreshold(config.threshold));
        }
        if first.data.len() != first.width * first.height {
            return Err(EventError::SizeMismatch);
        }
        let log: Vec<f64> = first.data.iter().map(|&v| log_intensity(v)).collect();
        Ok(EventSimulator {
            width: first.width,
            height: first.height,
            config,
            reference: log.clone(),
            current: log,
            last_event: vec![f64::NEG_INFINITY; first.width * first.height],
            t_us: first.t_us,
        })
    }

    /// A simulator over a uniform sensor.
    pub fn uniform(width: usize, height: usize, value: f32, t_us: f64, config: EventSimConfig) -> Result<Self, EventError> {
        Self::new(&IntensityFrame::uniform(t_us, width, height, value), config)
    }

    pub fn t_us(&self) -> f64 {
        self.t_us
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Overwrites intensities and references of `region` without emitting
    /// events.
    pub fn set_region(&mut self, region: Region, data: &[f32]) -> Result<(), EventError> {
        if region.x0 + region.width > self.width
            || region.y0 + region.height > self.height
            || data.len() != region.width * region.height
        {
            return Err(EventError::SizeMismatch);
        }
        for (row, src) in data.chunks(region.width).enumerate() {
            let base = (region.y0 + row) * self.width + region.x0;
            for (i, &v) in src.iter().enumerate() {
                let l = log_intensity(v);
                self.current[base + i] = l;
                self.reference[base + i] = l;
            }
        }
        Ok(())
    }

    /// Advances to a full frame and returns the events, sorted by time.
    pub fn push(&mut self, frame: &IntensityFrame) -> Result<Vec<Event>, EventError> {
        if frame.width != self.width || frame.height != self.height || frame.data.len() != self.width * self.height {
            return Err(EventError::SizeMismatch);
        }
        let region = Region { x0: 0, y0: 0, width: self.width, height: self.height };
        self.push_region(frame.t_us, region, &frame.data)
    }

    /// Advances to `t_us`, updating only the pixels of `region` with `data`
    /// (row-major, region-sized). Pixels outside keep their intensity.
    pub fn push_region(&mut self, t_us: f64, region: Region, data: &[f32]) -> Result<Vec<Event>, EventError> {
        if region.x0 + region.width > self.width
            || region.y0 + region.height > self.height
            || data.len() != region.width * region.height
        {
            return Err(EventError::SizeMismatch);
        }
        if !(t_us > self.t_us) {
            return Err(EventError::NonIncreasingTime(t_us));
        }
        let (t_prev, width, cfg) = (self.t_us, self.width, self.config);
        let rows: Vec<Vec<Event>> = {
            let reference = &mut self.reference;
            let current = &mut self.current;
            let last_event = &mut self.last_event;
            let mut row_slices: Vec<(usize, &mut [f64], &mut [f64], &mut [f64])> = reference
                .chunks_mut(width)
                .zip(current.chunks_mut(width))
                .zip(last_event.chunks_mut(width))
                .enumerate()
                .skip(region.y0)
                .take(region.height)
                .map(|(y, ((r, c), l))| (y, r, c, l))
                .collect();
            row_slices
                .par_iter_mut()
                .map(|(y, r, c, l)| {
                    let mut out = Vec::new();
                    let src = &data[(*y - region.y0) * region.width..][..region.width];
                    for (i, &v) in src.iter().enumerate() {
                        let x = region.x0 + i;
                        let new = log_intensity(v);
                        pixel_events(
                            x as u16, *y as u16, c[x], new, t_prev, t_us, &mut r[x], &mut l[x], &cfg, &mut out,
                        );
                        c[x] = new;
                    }
                    out
                })
                .collect()
        };
        self.t_us = t_us;
        let mut events: Vec<Event> = rows.into_iter().flatten().collect();
        events.sort_by_key(|e| (e.t, e.y, e.x));
        Ok(events)
    }
}

fn log_intensity(v: f32) -> f64 {
    ((v.max(0.0) + LOG_EPS) as f64).ln()
}

#[allow(clippy::too_many_arguments)]
fn pixel_events(
    x: u16,
    y: u16,
    old: f64,
    new: f64,
    t0: f64,
    t1: f64,
    reference: &mut f64,
    last_event: &mut f64,
    cfg: &EventSimConfig,
    out: &mut Vec<Event>,
) {
    let c = cfg.threshold;
    let delta = new - old;
    loop {
        let polarity: i8 = if new - *reference >= c - CROSS_EPS {
            1
        } else if *reference - new >= c - CROSS_EPS {
            -1
        } else {
            break;
        };
        *reference += polarity as f64 * c;
        let frac = if delta.abs() > 0.0 { ((*reference - old) / delta).clamp(0.0, 1.0) } else { 1.0 };
        let t = t0 + frac * (t1 - t0);
        if t - *last_event >= cfg.refractory_us {
            *last_event = t;
            out.push(Event { t: t.round().max(0.0) as u32, x, y, polarity });
        }
    }
}

/// Runs the simulator over a frame sequence.
pub fn generate_events(frames: &[IntensityFrame], config: EventSimConfig) -> Result<EventStream, EventError> {
    if frames.len() < 2 {
        return Err(EventError::TooFewFrames(frames.len()));
    }
    let mut sim = EventSimulator::new(&frames[0], config)?;
    let mut events = Vec::new();
    for f in &frames[1..] {
        events.extend(sim.push(f)?);
    }
    Ok(EventStream { width: frames[0].width as u32, height: frames[0].height as u32, events })
}

/// Adds spatially and temporally uniform background events at
/// `rate_hz` per pixel over `[t0_us, t1_us)` and re-sorts the stream.
pub fn add_background_noise<R: Rng>(stream: &mut EventStream, rate_hz: f64, t0_us: u32, t1_us: u32, rng: &mut R) {
    let pixels = stream.width as f64 * stream.height as f64;
    let mean = rate_hz * pixels * (t1_us.saturating_sub(t0_us)) as f64 * 1e-6;
    if !(mean > 0.0) || t1_us <= t0_us {
        return;
    }
    let n = Poisson::new(mean).map(|p| p.sample(rng) as usize).unwrap_or(0);
    for _ in 0..n {
        stream.events.push(Event {
            t: rng.gen_range(t0_us..t1_us),
            x: rng.gen_range(0..stream.width) as u16,
            y: rng.gen_range(0..stream.height) as u16,
            polarity: if rng.gen_bool(0.5) { 1 } else { -1 },
        });
    }
    stream.events.sort_by_key(|e| (e.t, e.y, e.x));
}
