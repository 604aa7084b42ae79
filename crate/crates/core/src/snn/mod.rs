//! Spiking ball detector: two convolutional and two linear layers of
//! non-leaky integrate-and-fire neurons, read out as two population-coded
//! 128-way classifiers for the ball's `x` and `y` grid position.

mod data;
mod gradcheck;
mod io;
mod network;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{EventError, CLASS_GRID};

pub use data::{samples_from_dataset, synthesize_dataset, DatasetSettings, EventDataset, EventSample};
pub use gradcheck::{gradient_check, micro_network, GradCheck};
pub use io::{read_weights, write_weights};
pub use network::{ForwardOutput, Gradients, Layer, LayerKind, Network, Real, Shape, SpikeInput, Trace};
pub use train::{
    compare_loss_activity, evaluate, summarize, train, EpochLog, Evaluation, LossActivityReport, LossKind, Sample,
    TrainLog, TrainSettings,
};

/// Output neurons: 128 for `x` followed by 128 for `y`.
pub const OUTPUT_SIZE: usize = 2 * CLASS_GRID;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SnnError {
    #[error("class {0} outside 0..128")]
    OutOfRange(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("loss diverged in epoch {0}")]
    DivergedLoss(usize),
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("weights file: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Event(#[from] EventError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Side of the square two-channel input grid.
    pub input_size: usize,
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    pub hidden: usize,
    /// Simulation steps per forward pass.
    pub steps: usize,
    pub threshold: f64,
    /// Half width of the rectangular surrogate window.
    pub beta: f64,
    /// Initial weights are uniform in `±gain * sqrt(3 / fan_in)`.
    pub init_gain: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_size: CLASS_GRID,
            conv1: ConvSpec { channels: 8, kernel: 5, stride: 2 },
            conv2: ConvSpec { channels: 16, kernel: 5, stride: 2 },
            hidden: 512,
            steps: 32,
            threshold: 1.0,
            beta: 0.5,
            init_gain: 3.0,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), SnnError> {
        let bad = |m: &str| Err(SnnError::InvalidConfig(m.into()));
        for (name, c) in [("conv1", self.conv1), ("conv2", self.conv2)] {
            if c.channels == 0 || c.stride == 0 || c.kernel % 2 == 0 {
                return bad(&format!("{name} needs channels > 0, stride > 0 and an odd kernel"));
            }
        }
        if self.input_size == 0 || self.hidden == 0 || self.steps == 0 {
            return bad("input_size, hidden and steps must be positive");
        }
        if !(self.threshold > 0.0) || !self.beta.is_finite() || !(self.init_gain > 0.0) {
            return bad("threshold and init_gain must be positive");
        }
        Ok(())
    }
}

/// Training target: 1 at each coordinate's class, 0.5 at its existing
/// neighbors, 0 elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetVector(pub [f64; OUTPUT_SIZE]);

pub fn encode_target(x: usize, y: usize) -> Result<TargetVector, SnnError> {
    let mut v = [0.0; OUTPUT_SIZE];
    for (c, offset) in [(x, 0), (y, CLASS_GRID)] {
        if c >= CLASS_GRID {
            return Err(SnnError::OutOfRange(c));
        }
        v[offset + c] = 1.0;
        if c > 0 {
            v[offset + c - 1] = 0.5;
        }
        if c + 1 < CLASS_GRID {
            v[offset + c + 1] = 0.5;
        }
    }
    Ok(TargetVector(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: usize,
    pub y: usize,
    /// Mean rate of the two winning neurons.
    pub confidence: f64,
}

impl Detection {
    pub fn distance(&self, label: (usize, usize)) -> f64 {
        let dx = self.x as f64 - label.0 as f64;
        let dy = self.y as f64 - label.1 as f64;
        dx.hypot(dy)
    }
}

fn argmax<F: Real>(v: &[F]) -> usize {
    // Strict comparison keeps the lowest index among ties.
    let mut best = 0;
    for (i, r) in v.iter().enumerate() {
        if *r > v[best] {
            best = i;
        }
    }
    best
}

/// Argmax decoding of each half; ties go to the lower index.
///
/// Panics unless `rates` has [`OUTPUT_SIZE`] entries.
pub fn decode<F: Real>(rates: &[F]) -> Detection {
    assert_eq!(rates.len(), OUTPUT_SIZE, "decode expects {OUTPUT_SIZE} rates");
    let (xs, ys) = rates.split_at(CLASS_GRID);
    let (x, y) = (argmax(xs), argmax(ys));
    let confidence = (xs[x].to_f64().unwrap() + ys[y].to_f64().unwrap()) / 2.0;
    Detection { x, y, confidence }
}

/// Rate-weighted centroid over the argmax and its two neighbors on each
/// side, rounded to the nearest class.
pub fn decode_centroid<F: Real>(rates: &[F]) -> Detection {
    let d = decode(rates);
    let centroid = |half: &[F], c: usize| {
        let lo = c.saturating_sub(2);
        let hi = (c + 2).min(CLASS_GRID - 1);
        let (mut s, mut w) = (0.0, 0.0);
        for (i, r) in half.iter().enumerate().take(hi + 1).skip(lo) {
            let r = r.to_f64().unwrap();
            s += i as f64 * r;
            w += r;
        }
        if w > 0.0 {
            (s / w).round() as usize
        } else {
            c
        }
    };
    let (xs, ys) = rates.split_at(CLASS_GRID);
    Detection { x: centroid(xs, d.x), y: centroid(ys, d.y), confidence: d.confidence }
}

/// Mean squared error over all entries.
pub fn loss_mse<F: Real>(rates: &[F], target: &[f64]) -> f64 {
    assert_eq!(rates.len(), target.len());
    let n = rates.len() as f64;
    rates.iter().zip(target).map(|(r, t)| (r.to_f64().unwrap() - t).powi(2)).sum::<f64>() / n
}

/// Per-layer synaptic operations of one forward pass: one per spike and
/// outgoing synapse, input spikes included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynOpsReport {
    pub per_layer: Vec<u64>,
    pub total: u64,
}
