use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::{Gradients, Layer, Network, Shape, SpikeInput};
use super::loss_mse;

/// Central-difference step for the check.
const STEP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub draws: usize,
    pub parameters: usize,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
    pub max_rel_error: f64,
}

/// Relaxed two-layer network with 50 parameters: a 3x3 stride-2
/// convolution from one 6x6 channel to one channel, then 9 -> 4 dense.
pub fn micro_network() -> Network<f64> {
    let input = Shape { channels: 1, height: 6, width: 6 };
    let conv = Layer::conv(input, 1, 3, 2);
    let dense = Layer::dense(conv.output.len(), 4);
    let mut net = Network::from_layers(input, vec![conv, dense], 4, 1.0, 0.5).expect("valid micro network");
    net.relaxed = true;
    net
}

fn loss(net: &Network<f64>, input: &SpikeInput, target: &[f64]) -> f64 {
    loss_mse(&net.forward(input).expect("valid input").rates, target)
}

fn parameter(net: &mut Network<f64>, mut k: usize) -> &mut f64 {
    for l in &mut net.layers {
        if k < l.weights.len() {
            return &mut l.weights[k];
        }
        k -= l.weights.len();
        if k < l.bias.len() {
            return &mut l.bias[k];
        }
        k -= l.bias.len();
    }
    panic!("parameter index out of range")
}

/// Compares backpropagated gradients of the relaxed micro network against
/// central finite differences over `draws` random parameter sets, inputs
/// and targets.
pub fn gradient_check(draws: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel: f64 = 0.0;
    let mut net = micro_network();
    let n_params = net.parameter_count();
    for _ in 0..draws {
        for l in &mut net.layers {
            l.weights.iter_mut().for_each(|w| *w = rng.gen_range(-1.5..1.5));
            l.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.3..0.6));
        }
        let active: Vec<Vec<u32>> =
            (0..net.steps).map(|_| (0..net.input.len() as u32).filter(|_| rng.gen_bool(0.5)).collect()).collect();
        let input = SpikeInput { shape: net.input, active };
        let target: Vec<f64> = (0..net.outputs()).map(|_| rng.gen_range(0.0..1.0)).collect();

        let (out, trace) = net.forward_traced(&input).expect("valid input");
        let n = out.rates.len() as f64;
        let grad_rates: Vec<f64> = out.rates.iter().zip(&target).map(|(r, t)| 2.0 * (r - t) / n).collect();
        let mut grads = Gradients::zeros_like(&net);
        net.backward(&input, &trace, &grad_rates, &mut grads);
        let analytic: Vec<f64> = grads
            .weights
            .iter()
            .zip(&grads.bias)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect();

        for (k, a) in analytic.iter().enumerate() {
            let orig = *parameter(&mut net, k);
            *parameter(&mut net, k) = orig + STEP;
            let up = loss(&net, &input, &target);
            *parameter(&mut net, k) = orig - STEP;
            let down = loss(&net, &input, &target);
            *parameter(&mut net, k) = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
    }
    GradCheck { draws, parameters: n_params, max_rel_error: max_rel }
}
