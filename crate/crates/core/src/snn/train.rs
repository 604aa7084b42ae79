use std::borrow::Cow;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{ForwardOutput, Gradients, LayerKind, Network, SpikeInput};
use super::{decode, decode_centroid, encode_target, loss_mse, NetworkConfig, SnnError};
use crate::events::CLASS_GRID;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: SpikeInput,
    pub label: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    /// Softmax cross-entropy over each 128-neuron half, with spike counts
    /// as logits.
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub loss: LossKind,
    /// Seed of the per-epoch shuffles.
    pub seed: u64,
    pub centroid_decode: bool,
    /// Largest random translation applied to training samples, grid cells.
    pub augment_shift: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings { epochs: 20, learning_rate: 1e-3, batch_size: 16, loss: LossKind::Mse, seed: 0, centroid_decode: false, augment_shift: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub px_error: f64,
    /// Mean output spikes per sample of each layer.
    pub spikes: Vec<f64>,
    pub synops: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    /// CSV with header `epoch,loss,px_error,spikes_l1..spikes_lN,synops`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SnnError> {
        let err = |e: csv::Error| SnnError::Io(e.to_string());
        let mut wr = csv::Writer::from_writer(w);
        let layers = self.epochs.first().map_or(4, |e| e.spikes.len());
        let mut header = vec!["epoch".to_string(), "loss".into(), "px_error".into()];
        header.extend((1..=layers).map(|l| format!("spikes_l{l}")));
        header.push("synops".into());
        wr.write_record(&header).map_err(err)?;
        for e in &self.epochs {
            let mut row = vec![e.epoch.to_string(), e.loss.to_string(), e.px_error.to_string()];
            row.extend(e.spikes.iter().map(|s| s.to_string()));
            row.push(e.synops.to_string());
            wr.write_record(&row).map_err(err)?;
        }
        wr.flush().map_err(|e| SnnError::Io(e.to_string()))
    }
}

/// Loss value and its gradient with respect to the rates.
fn loss_and_grad(rates: &[f32], label: (usize, usize), kind: LossKind, steps: usize) -> Result<(f64, Vec<f32>), SnnError> {
    match kind {
        LossKind::Mse => {
            let target = encode_target(label.0, label.1)?.0;
            let n = rates.len() as f64;
            let grad = rates.iter().zip(&target).map(|(r, t)| (2.0 * (*r as f64 - t) / n) as f32).collect();
            Ok((loss_mse(rates, &target), grad))
        }
        LossKind::CrossEntropy => {
            let t = steps as f64;
            let mut grad = vec![0f32; rates.len()];
            let mut loss = 0.0;
            for (half, class) in [(0, label.0), (1, label.1)] {
                if class >= CLASS_GRID {
                    return Err(SnnError::OutOfRange(class));
                }
                let z: Vec<f64> = rates[half * CLASS_GRID..(half + 1) * CLASS_GRID].iter().map(|r| *r as f64 * t).collect();
                let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
                loss += m + sum.ln() - z[class];
                for (i, v) in z.iter().enumerate() {
                    let p = (v - m).exp() / sum;
                    let onehot = if i == class { 1.0 } else { 0.0 };
                    grad[half * CLASS_GRID + i] = ((p - onehot) * t) as f32;
                }
            }
            Ok((loss, grad))
        }
    }
}

struct Adam {
    m: Gradients<f32>,
    v: Gradients<f32>,
    t: i32,
}

impl Adam {
    const B1: f32 = 0.9;
    const B2: f32 = 0.999;
    const EPS: f32 = 1e-8;

    fn new(net: &Network<f32>) -> Self {
        Adam { m: Gradients::zeros_like(net), v: Gradients::zeros_like(net), t: 0 }
    }

    /// Convolution biases are not trained: a feature map only fires where
    /// input spikes arrive.
    fn step(&mut self, net: &mut Network<f32>, g: &Gradients<f32>, lr: f32) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let conv = matches!(layer.kind, LayerKind::Conv { .. });
            for (p, (gr, (m, v))) in [
                (&mut layer.weights, (&g.weights[l], (&mut self.m.weights[l], &mut self.v.weights[l]))),
                (&mut layer.bias, (&g.bias[l], (&mut self.m.bias[l], &mut self.v.bias[l]))),
            ]
            .into_iter()
            .take(if conv { 1 } else { 2 })
            {
                for i in 0..p.len() {
                    let gi = gr[i];
                    m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * gi;
                    v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * gi * gi;
                    p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
                }
            }
        }
    }
}

fn decode_with(out: &ForwardOutput<f32>, centroid: bool) -> super::Detection {
    if centroid {
        decode_centroid(&out.rates)
    } else {
        decode(&out.rates)
    }
}

/// Random translation in input pixels, uniform within `±max` class cells per
/// axis and keeping the label on the class grid.
fn random_shift(rng: &mut ChaCha8Rng, label: (usize, usize), max: usize, scale: usize) -> (isize, isize) {
    if max < scale {
        return (0, 0);
    }
    let m = max / scale;
    let mut axis = |c: usize| {
        let lo = m.min(c / scale) as isize;
        let hi = m.min((CLASS_GRID - 1 - c) / scale) as isize;
        rng.gen_range(-lo..=hi)
    };
    (axis(label.0), axis(label.1))
}

/// Backpropagation through time with Adam. Batches are evaluated in
/// parallel; gradients are summed in sample order so training is
/// deterministic for a given seed.
pub fn train(net: &mut Network<f32>, data: &[Sample], settings: &TrainSettings) -> Result<TrainLog, SnnError> {
    if data.is_empty() {
        return Err(SnnError::EmptyDataset);
    }
    let scale = CLASS_GRID / net.input.width.max(1);
    if settings.augment_shift > 0 && (net.input.width != net.input.height || scale * net.input.width != CLASS_GRID) {
        return Err(SnnError::InvalidConfig("shift augmentation needs a square input grid dividing the class grid".into()));
    }
    let batch = settings.batch_size.max(1);
    let lr = settings.learning_rate as f32;
    let mut adam = Adam::new(net);
    let mut grads = Gradients::zeros_like(net);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = TrainLog::default();
    let n_layers = net.layers.len();
    for epoch in 0..settings.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut px_sum, mut synops_sum) = (0.0, 0.0, 0.0);
        let mut spikes = vec![0.0; n_layers];
        for chunk in order.chunks(batch) {
            let shifts: Vec<(isize, isize)> =
                chunk.iter().map(|&i| random_shift(&mut rng, data[i].label, settings.augment_shift, scale)).collect();
            let passes = chunk
                .par_iter()
                .zip(&shifts)
                .map(|(&i, &(dx, dy))| {
                    let s = &data[i];
                    let (input, label) = if (dx, dy) == (0, 0) {
                        (Cow::Borrowed(&s.input), s.label)
                    } else {
                        let k = scale as isize;
                        let label = ((s.label.0 as isize + k * dx) as usize, (s.label.1 as isize + k * dy) as usize);
                        (Cow::Owned(s.input.shifted(dx, dy)), label)
                    };
                    net.forward_traced(&input).map(|(out, trace)| (input, label, out, trace))
                })
                .collect::<Result<Vec<_>, _>>()?;
            grads.fill_zero();
            for (input, label, out, trace) in &passes {
                let (loss, g) = loss_and_grad(&out.rates, *label, settings.loss, net.steps)?;
                loss_sum += loss;
                px_sum += decode_with(out, settings.centroid_decode).distance(*label);
                synops_sum += out.synops.total as f64;
                for (s, o) in spikes.iter_mut().zip(&out.spikes) {
                    *s += *o as f64;
                }
                net.backward(input, trace, &g, &mut grads);
            }
            if !loss_sum.is_finite() {
                return Err(SnnError::DivergedLoss(epoch + 1));
            }
            grads.scale(1.0 / chunk.len() as f32);
            adam.step(net, &grads, lr);
        }
        let n = data.len() as f64;
        let entry = EpochLog {
            epoch: epoch + 1,
            loss: loss_sum / n,
            px_error: px_sum / n,
            spikes: spikes.iter().map(|s| s / n).collect(),
            synops: synops_sum / n,
        };
        if net.layers.iter().any(|l| l.weights.iter().any(|w| !w.is_finite())) {
            return Err(SnnError::DivergedLoss(epoch + 1));
        }
        log.epochs.push(entry);
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub samples: usize,
    /// Mean and standard deviation of the Euclidean grid error.
    pub mean_px: f64,
    pub std_px: f64,
    pub mean_synops: f64,
    pub mean_spikes: Vec<f64>,
    /// Mean loss under MSE.
    pub mse: f64,
}

/// Error of the decoded detections against the labels on the 128 x 128
/// grid, evaluated in parallel.
pub fn evaluate(net: &Network<f32>, data: &[Sample], centroid: bool) -> Result<Evaluation, SnnError> {
    if data.is_empty() {
        return Err(SnnError::EmptyDataset);
    }
    let per: Vec<(f64, u64, Vec<u64>, f64)> = data
        .par_iter()
        .map(|s| {
            let out = net.forward(&s.input)?;
            let d = decode_with(&out, centroid).distance(s.label);
            let mse = loss_mse(&out.rates, &encode_target(s.label.0, s.label.1)?.0);
            Ok((d, out.synops.total, out.spikes, mse))
        })
        .collect::<Result<_, SnnError>>()?;
    let n = per.len() as f64;
    let mean = per.iter().map(|p| p.0).sum::<f64>() / n;
    let var = per.iter().map(|p| (p.0 - mean).powi(2)).sum::<f64>() / n;
    let layers = per[0].2.len();
    Ok(Evaluation {
        samples: per.len(),
        mean_px: mean,
        std_px: var.sqrt(),
        mean_synops: per.iter().map(|p| p.1 as f64).sum::<f64>() / n,
        mean_spikes: (0..layers).map(|l| per.iter().map(|p| p.2[l] as f64).sum::<f64>() / n).collect(),
        mse: per.iter().map(|p| p.3).sum::<f64>() / n,
    })
}

/// Mean and standard deviation of the per-network mean errors, for runs
/// over several network seeds.
pub fn summarize(evals: &[Evaluation]) -> Option<(f64, f64)> {
    if evals.is_empty() {
        return None;
    }
    let n = evals.len() as f64;
    let mean = evals.iter().map(|e| e.mean_px).sum::<f64>() / n;
    let var = evals.iter().map(|e| (e.mean_px - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossActivityReport {
    pub mse: Evaluation,
    pub cross_entropy: Evaluation,
    /// Cross-entropy SynOps over MSE SynOps.
    pub synops_ratio: f64,
    /// Whether cross-entropy produced the larger activity.
    pub reproduced: bool,
}

/// Trains the same initial network once with MSE and once with
/// cross-entropy and compares the resulting activity on `eval`.
pub fn compare_loss_activity(
    config: &NetworkConfig,
    train_data: &[Sample],
    eval: &[Sample],
    settings: &TrainSettings,
) -> Result<LossActivityReport, SnnError> {
    let run = |loss: LossKind| -> Result<Evaluation, SnnError> {
        let mut net = Network::new(config)?;
        train(&mut net, train_data, &TrainSettings { loss, ..*settings })?;
        evaluate(&net, eval, settings.centroid_decode)
    };
    let mse = run(LossKind::Mse)?;
    let cross_entropy = run(LossKind::CrossEntropy)?;
    let synops_ratio = cross_entropy.mean_synops / mse.mean_synops;
    Ok(LossActivityReport { reproduced: synops_ratio > 1.0, synops_ratio, mse, cross_entropy })
}
