use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NetworkConfig, SnnError, SynOpsReport, OUTPUT_SIZE};
use crate::events::SpikeFrames;

/// Scalar type of a network: `f32` for training, `f64` for gradient checks.
pub trait Real: Float + AddAssign + SubAssign + MulAssign + Send + Sync + Debug + 'static {}

impl<T> Real for T where T: Float + AddAssign + SubAssign + MulAssign + Send + Sync + Debug + 'static {}

fn lit<F: Real>(x: f64) -> F {
    F::from(x).expect("representable constant")
}

/// Activation grid; neurons are stored channel-last, `(y * width + x) *
/// channels + c`. Linear layers use `height = width = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn flat(n: usize) -> Shape {
        Shape { channels: n, height: 1, width: 1 }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// Zero-padded convolution with `padding = kernel / 2`. Weights are laid
    /// out `[ky][kx][c_in][c_out]`, one bias per output channel.
    Conv { kernel: usize, stride: usize },
    /// Weights `[in][out]`, one bias per output neuron.
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<F> {
    pub kind: LayerKind,
    pub input: Shape,
    pub output: Shape,
    pub weights: Vec<F>,
    pub bias: Vec<F>,
}

/// Output positions reached from input coordinate `i`, with the kernel tap
/// that connects them.
fn taps(i: usize, k: usize, s: usize, n_out: usize) -> impl Iterator<Item = (usize, usize)> {
    let p = k / 2;
    let lo = (i + p + 1).saturating_sub(k).div_ceil(s);
    let hi = (i + p) / s;
    (lo..=hi).take_while(move |&o| o < n_out).map(move |o| (o, i + p - o * s))
}

impl<F: Real> Layer<F> {
    pub fn conv(input: Shape, channels: usize, kernel: usize, stride: usize) -> Layer<F> {
        let p = kernel / 2;
        let out = |n: usize| (n + 2 * p - kernel) / stride + 1;
        let output = Shape { channels, height: out(input.height), width: out(input.width) };
        Layer {
            kind: LayerKind::Conv { kernel, stride },
            input,
            output,
            weights: vec![F::zero(); kernel * kernel * input.channels * channels],
            bias: vec![F::zero(); channels],
        }
    }

    pub fn dense(inputs: usize, outputs: usize) -> Layer<F> {
        Layer {
            kind: LayerKind::Dense,
            input: Shape::flat(inputs),
            output: Shape::flat(outputs),
            weights: vec![F::zero(); inputs * outputs],
            bias: vec![F::zero(); outputs],
        }
    }

    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv { kernel, .. } => kernel * kernel * self.input.channels,
            LayerKind::Dense => self.input.len(),
        }
    }

    fn block_len(&self) -> usize {
        match self.kind {
            LayerKind::Conv { .. } => self.output.channels,
            LayerKind::Dense => self.output.len(),
        }
    }

    /// Calls `f(weight offset, output offset)` for every contiguous block of
    /// `block_len` synapses leaving input neuron `i`.
    fn for_each_block(&self, i: usize, mut f: impl FnMut(usize, usize)) {
        match self.kind {
            LayerKind::Dense => f(i * self.output.len(), 0),
            LayerKind::Conv { kernel: k, stride: s } => {
                let cin = self.input.channels;
                let cout = self.output.channels;
                let (ci, pix) = (i % cin, i / cin);
                let (iy, ix) = (pix / self.input.width, pix % self.input.width);
                for (oy, ky) in taps(iy, k, s, self.output.height) {
                    for (ox, kx) in taps(ix, k, s, self.output.width) {
                        f(((ky * k + kx) * cin + ci) * cout, (oy * self.output.width + ox) * cout);
                    }
                }
            }
        }
    }

    /// Adds the input current of sparse presynaptic activity; returns the
    /// number of synapses used.
    fn scatter(&self, active: &[(u32, F)], current: &mut [F]) -> u64 {
        let len = self.block_len();
        let mut ops = 0u64;
        for &(i, v) in active {
            self.for_each_block(i as usize, |wb, ob| {
                let w = &self.weights[wb..wb + len];
                for (c, wv) in current[ob..ob + len].iter_mut().zip(w) {
                    *c += v * *wv;
                }
                ops += len as u64;
            });
        }
        ops
    }
}

/// Binary input spikes per step as flat neuron indices of the input shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeInput {
    pub shape: Shape,
    pub active: Vec<Vec<u32>>,
}

impl SpikeInput {
    /// Channel-last view of spike frames (channel 0 on, 1 off).
    pub fn from_frames(frames: &SpikeFrames) -> SpikeInput {
        let (h, w) = (frames.height, frames.width);
        let active = (0..frames.steps)
            .map(|t| {
                let mut v: Vec<u32> = frames
                    .active(t)
                    .into_iter()
                    .map(|i| {
                        let i = i as usize;
                        let (c, pix) = (i / (h * w), i % (h * w));
                        (pix * 2 + c) as u32
                    })
                    .collect();
                v.sort_unstable();
                v
            })
            .collect();
        SpikeInput { shape: Shape { channels: 2, height: h, width: w }, active }
    }

    pub fn steps(&self) -> usize {
        self.active.len()
    }

    /// The same spikes translated by `(dx, dy)` pixels; spikes leaving the
    /// grid are dropped.
    pub fn shifted(&self, dx: isize, dy: isize) -> SpikeInput {
        let Shape { channels: c, height: h, width: w } = self.shape;
        let active = self
            .active
            .iter()
            .map(|a| {
                a.iter()
                    .filter_map(|&i| {
                        let i = i as usize;
                        let (pix, ch) = (i / c, i % c);
                        let x = (pix % w) as isize + dx;
                        let y = (pix / w) as isize + dy;
                        ((0..w as isize).contains(&x) && (0..h as isize).contains(&y))
                            .then(|| ((y as usize * w + x as usize) * c + ch) as u32)
                    })
                    .collect()
            })
            .collect();
        SpikeInput { shape: self.shape, active }
    }

    pub fn count(&self) -> usize {
        self.active.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<F> {
    /// Spike count of each output neuron divided by the step count.
    pub rates: Vec<F>,
    /// Output spikes of each layer over the pass.
    pub spikes: Vec<u64>,
    pub synops: SynOpsReport,
}

/// Quantities recorded by a forward pass for backpropagation through time.
#[derive(Debug, Clone)]
pub struct Trace<F> {
    /// Membrane potential before reset, `[layer][step * n + j]`.
    pre: Vec<Vec<F>>,
    /// Output activity, `[layer][step]`.
    out: Vec<Vec<Vec<(u32, F)>>>,
}

/// Parameter gradients with the layout of the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub weights: Vec<Vec<F>>,
    pub bias: Vec<Vec<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn zeros_like(net: &Network<F>) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| vec![F::zero(); l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![F::zero(); l.bias.len()]).collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            v.fill(F::zero());
        }
    }

    pub fn scale(&mut self, a: F) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= a);
        }
    }

    pub fn max_abs(&self) -> F {
        self.weights.iter().chain(&self.bias).flatten().fold(F::zero(), |m, x| m.max(x.abs()))
    }
}

/// Non-leaky integrate-and-fire network with soft reset. Each step a
/// layer adds its input current to the membrane, spikes where the membrane
/// reaches `threshold` and subtracts `threshold` from spiking neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<F> {
    pub input: Shape,
    pub layers: Vec<Layer<F>>,
    pub steps: usize,
    pub threshold: F,
    pub beta: F,
    /// Replaces the step by its piecewise-linear surrogate integral
    /// `clamp((u - threshold + beta) / (2 beta), 0, 1)`; used to verify
    /// gradients.
    pub relaxed: bool,
}

impl<F: Real> Network<F> {
    /// The detector: conv, conv, dense hidden, dense 256 outputs, with
    /// seeded uniform initialization and zero biases.
    pub fn new(config: &NetworkConfig) -> Result<Network<F>, SnnError> {
        config.validate()?;
        let input = Shape { channels: 2, height: config.input_size, width: config.input_size };
        let c1 = Layer::conv(input, config.conv1.channels, config.conv1.kernel, config.conv1.stride);
        let c2 = Layer::conv(c1.output, config.conv2.channels, config.conv2.kernel, config.conv2.stride);
        let h = Layer::dense(c2.output.len(), config.hidden);
        let o = Layer::dense(config.hidden, OUTPUT_SIZE);
        let mut net = Network {
            input,
            layers: vec![c1, c2, h, o],
            steps: config.steps,
            threshold: lit(config.threshold),
            beta: lit(config.beta),
            relaxed: false,
        };
        net.initialize(config.init_gain, config.seed);
        Ok(net)
    }

    pub fn from_layers(input: Shape, layers: Vec<Layer<F>>, steps: usize, threshold: f64, beta: f64) -> Result<Self, SnnError> {
        let mut prev = input;
        for (i, l) in layers.iter().enumerate() {
            let flattens = l.kind == LayerKind::Dense && l.input.len() == prev.len();
            if l.input != prev && !flattens {
                return Err(SnnError::ShapeMismatch(format!("layer {i} input {:?} after {:?}", l.input, prev)));
            }
            prev = l.output;
        }
        if layers.is_empty() || steps == 0 {
            return Err(SnnError::InvalidConfig("need at least one layer and one step".into()));
        }
        Ok(Network { input, layers, steps, threshold: lit(threshold), beta: lit(beta), relaxed: false })
    }

    /// Uniform weights in `±gain * sqrt(3 / fan_in)`, zero biases.
    pub fn initialize(&mut self, gain: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut self.layers {
            let a = gain * (3.0 / l.fan_in() as f64).sqrt();
            for w in &mut l.weights {
                *w = lit(rng.gen_range(-a..a));
            }
            l.bias.fill(F::zero());
        }
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output.len())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Derivative of the rectangular surrogate; zero everywhere when
    /// `beta <= 0`.
    fn surrogate(&self, u: F) -> F {
        if self.beta > F::zero() && (u - self.threshold).abs() <= self.beta {
            F::one() / (lit::<F>(2.0) * self.beta)
        } else {
            F::zero()
        }
    }

    fn spike(&self, u: F) -> F {
        if self.relaxed {
            let s = (u - self.threshold + self.beta) / (lit::<F>(2.0) * self.beta);
            s.max(F::zero()).min(F::one())
        } else if u >= self.threshold {
            F::one()
        } else {
            F::zero()
        }
    }

    fn check_input(&self, input: &SpikeInput) -> Result<(), SnnError> {
        if input.steps() != self.steps {
            return Err(SnnError::ShapeMismatch(format!("{} input steps, network runs {}", input.steps(), self.steps)));
        }
        if input.shape != self.input {
            return Err(SnnError::ShapeMismatch(format!("input {:?}, network expects {:?}", input.shape, self.input)));
        }
        let n = self.input.len() as u32;
        if input.active.iter().flatten().any(|&i| i >= n) {
            return Err(SnnError::ShapeMismatch("input index out of range".into()));
        }
        Ok(())
    }

    pub fn forward(&self, input: &SpikeInput) -> Result<ForwardOutput<F>, SnnError> {
        self.run(input, false).map(|(o, _)| o)
    }

    /// Forward pass that also records what [`Network::backward`] needs.
    pub fn forward_traced(&self, input: &SpikeInput) -> Result<(ForwardOutput<F>, Trace<F>), SnnError> {
        self.run(input, true).map(|(o, t)| (o, t.expect("trace recorded")))
    }

    fn run(&self, input: &SpikeInput, record: bool) -> Result<(ForwardOutput<F>, Option<Trace<F>>), SnnError> {
        self.check_input(input)?;
        let t_steps = self.steps;
        let n_layers = self.layers.len();
        let mut membrane: Vec<Vec<F>> = self.layers.iter().map(|l| vec![F::zero(); l.output.len()]).collect();
        let mut pre: Vec<Vec<F>> = if record {
            self.layers.iter().map(|l| Vec::with_capacity(t_steps * l.output.len())).collect()
        } else {
            Vec::new()
        };
        let mut out: Vec<Vec<Vec<(u32, F)>>> = vec![Vec::with_capacity(t_steps); n_layers];
        let mut counts = vec![F::zero(); self.outputs()];
        let mut spikes = vec![0u64; n_layers];
        let mut synops = vec![0u64; n_layers];
        let mut current: Vec<F> = Vec::new();
        for t in 0..t_steps {
            let mut active: Vec<(u32, F)> = input.active[t].iter().map(|&i| (i, F::one())).collect();
            for (l, layer) in self.layers.iter().enumerate() {
                current.clear();
                current.extend(layer.bias.iter().cycle().take(layer.output.len()));
                synops[l] += layer.scatter(&active, &mut current);
                let v = &mut membrane[l];
                let mut next = Vec::new();
                for (j, (u, c)) in v.iter_mut().zip(&current).enumerate() {
                    *u += *c;
                    if record {
                        pre[l].push(*u);
                    }
                    let s = self.spike(*u);
                    if s > F::zero() {
                        next.push((j as u32, s));
                        *u -= self.threshold * s;
                    }
                }
                spikes[l] += next.len() as u64;
                if l + 1 == n_layers {
                    for &(j, s) in &next {
                        counts[j as usize] += s;
                    }
                }
                if record {
                    out[l].push(next.clone());
                }
                active = next;
            }
        }
        let inv_t = F::one() / lit(t_steps as f64);
        let rates = counts.into_iter().map(|c| c * inv_t).collect();
        let total = synops.iter().sum();
        let output = ForwardOutput { rates, spikes, synops: SynOpsReport { per_layer: synops, total } };
        Ok((output, record.then_some(Trace { pre, out })))
    }

    /// Backpropagation through time of `dL/d rates`, accumulated into
    /// `grads`. The reset path is differentiated; spikes use the surrogate
    /// derivative.
    pub fn backward(&self, input: &SpikeInput, trace: &Trace<F>, grad_rates: &[F], grads: &mut Gradients<F>) {
        let t_steps = self.steps;
        let n_last = self.outputs();
        assert_eq!(grad_rates.len(), n_last);
        let inv_t = F::one() / lit(t_steps as f64);
        let mut g_out: Vec<F> = (0..t_steps).flat_map(|_| grad_rates.iter().map(|&g| g * inv_t)).collect();
        // Neurons that receive any gradient; the rest are skipped.
        let mut live: Vec<usize> = (0..n_last).collect();
        let ones: Vec<Vec<(u32, F)>> =
            input.active.iter().map(|a| a.iter().map(|&i| (i, F::one())).collect()).collect();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let n = layer.output.len();
            let pre = &trace.pre[l];
            let gb = &mut grads.bias[l];
            let nb = gb.len();
            let mut g_in = vec![F::zero(); t_steps * n];
            for &j in &live {
                let mut carry = F::zero();
                let mut sum = F::zero();
                for t in (0..t_steps).rev() {
                    let sp = self.surrogate(pre[t * n + j]);
                    carry = g_out[t * n + j] * sp + carry * (F::one() - self.threshold * sp);
                    g_in[t * n + j] = carry;
                    sum += carry;
                }
                gb[j % nb] += sum;
            }
            let inputs = if l == 0 { &ones } else { &trace.out[l - 1] };
            let len = layer.block_len();
            let prev = l.checked_sub(1).map(|p| (&self.layers[p], &trace.pre[p]));
            let mut g_prev = prev.map(|(p, _)| vec![F::zero(); t_steps * p.output.len()]);
            let mut live_prev = prev.map(|(p, _)| vec![false; p.output.len()]);
            let gw = &mut grads.weights[l];
            for t in 0..t_steps {
                let g = &g_in[t * n..(t + 1) * n];
                if live.iter().all(|&j| g[j].is_zero()) {
                    continue;
                }
                for &(i, v) in &inputs[t] {
                    layer.for_each_block(i as usize, |wb, ob| {
                        for (w, x) in gw[wb..wb + len].iter_mut().zip(&g[ob..ob + len]) {
                            *w += v * *x;
                        }
                    });
                }
                if let (Some((p, p_pre)), Some(gp), Some(lp)) = (prev, g_prev.as_mut(), live_prev.as_mut()) {
                    let np = p.output.len();
                    let nonzero: Vec<(usize, F)> =
                        live.iter().filter(|&&j| !g[j].is_zero()).map(|&j| (j, g[j])).collect();
                    let sparse = layer.kind == LayerKind::Dense && nonzero.len() * 4 < n;
                    for i in 0..np {
                        if self.surrogate(p_pre[t * np + i]).is_zero() {
                            continue;
                        }
                        let mut acc = F::zero();
                        if sparse {
                            let w = &layer.weights[i * n..(i + 1) * n];
                            for &(j, x) in &nonzero {
                                acc += w[j] * x;
                            }
                        } else {
                            layer.for_each_block(i, |wb, ob| {
                                for (w, x) in layer.weights[wb..wb + len].iter().zip(&g[ob..ob + len]) {
                                    acc += *w * *x;
                                }
                            });
                        }
                        if !acc.is_zero() {
                            gp[t * np + i] = acc;
                            lp[i] = true;
                        }
                    }
                }
            }
            if let (Some(gp), Some(lp)) = (g_prev, live_prev) {
                g_out = gp;
                live = (0..lp.len()).filter(|&i| lp[i]).collect();
            }
        }
    }
}
