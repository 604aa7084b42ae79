//! Event-camera simulation and spike-frame accumulation.
//!
//! Time is in integer microseconds. Polarity is `+1` for brightness
//! increases and `-1` for decreases.

mod frames;
mod io;
mod scene;
mod sim;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use frames::{accumulate, ground_truth_label, SpikeFrames, CLASS_GRID};
pub use io::{read_csv, read_evs, write_csv, write_evs, EVS_MAGIC};
pub use scene::{ball_footprint, render_disk, simulate_ball_events, BallScene};
pub use sim::{add_background_noise, generate_events, EventSimConfig, EventSimulator, IntensityFrame, Region, LOG_EPS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EventError {
    #[error("contrast threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error("at least two frames are required, got {0}")]
    TooFewFrames(usize),
    #[error("frame or region size does not match the sensor")]
    SizeMismatch,
    #[error("frame time {0} µs does not advance")]
    NonIncreasingTime(f64),
    #[error("window of {window} µs is not divisible into {steps} steps")]
    InvalidWindow { window: u32, steps: usize },
    #[error("ball is not visible")]
    BallNotVisible,
    #[error("malformed event file: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for EventError {
    fn from(e: std::io::Error) -> Self {
        EventError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub t: u32,
    pub x: u16,
    pub y: u16,
    pub polarity: i8,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventStream {
    pub width: u32,
    pub height: u32,
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn new(width: u32, height: u32) -> Self {
        EventStream { width, height, events: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn is_sorted(&self) -> bool {
        self.events.windows(2).all(|w| w[0].t <= w[1].t)
    }

    pub fn in_bounds(&self) -> bool {
        self.events.iter().all(|e| (e.x as u32) < self.width && (e.y as u32) < self.height)
    }

    /// Events with `t0 <= t < t1`; the stream must be sorted.
    pub fn window(&self, t0: u32, t1: u32) -> &[Event] {
        let a = self.events.partition_point(|e| e.t < t0);
        let b = self.events.partition_point(|e| e.t < t1);
        &self.events[a..b.max(a)]
    }

    pub fn polarity_counts(&self) -> (usize, usize) {
        let on = self.events.iter().filter(|e| e.polarity > 0).count();
        (on, self.events.len() - on)
    }
}
