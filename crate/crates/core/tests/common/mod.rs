//! Shared test oracles: central finite differences against the analytic
//! backward pass, and small builders for randomized masked networks.
//!
//! The oracle only touches the public forward/loss API, never the backward
//! path it is checking.

#![allow(dead_code)]

use msgtl_core::engine::{backward, balanced_ce, forward, LossSpec, Mode, StageNetwork};
use msgtl_core::rng;
use msgtl_core::topology::width_schedule;
use msgtl_core::transfer::{init_network, transfer_weights};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Loss of the network on a batch, through the public forward path only.
pub fn loss_of(net: &StageNetwork, x: &Array2<f64>, y: &Array1<f64>, beta: f64) -> f64 {
    let mut r = rng::stream(0, 0);
    let pass = forward(net, x, 0.0, Mode::Infer, &mut r).expect("forward");
    let scores = pass.scores().column(0).to_owned();
    balanced_ce(&scores, y, beta).expect("loss")
}

/// Relative error with a floor so near-zero pairs compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1e-8, f64::max(a.abs(), b.abs()))
}

/// Central finite differences over every live parameter, compared entrywise
/// against the analytic gradients. Returns the maximum relative error.
pub fn max_gradient_error(net: &StageNetwork, x: &Array2<f64>, y: &Array1<f64>, beta: f64) -> f64 {
    let mut r = rng::stream(0, 0);
    let pass = forward(net, x, 0.0, Mode::Infer, &mut r).expect("forward");
    let grads = backward(net, &pass, y, beta, false).expect("backward");

    let mut worst = 0.0_f64;
    let mut probe = net.clone();
    for l in 0..net.layers.len() {
        let (rows, cols) = (net.layers[l].fan_in(), net.layers[l].fan_out());
        for i in 0..rows {
            for j in 0..cols {
                let original = probe.layers[l].live_weights[[i, j]];
                probe.layers[l].live_weights[[i, j]] = original + FD_STEP;
                let plus = loss_of(&probe, x, y, beta);
                probe.layers[l].live_weights[[i, j]] = original - FD_STEP;
                let minus = loss_of(&probe, x, y, beta);
                probe.layers[l].live_weights[[i, j]] = original;
                let numeric = (plus - minus) / (2.0 * FD_STEP);
                worst = worst.max(rel_err(grads.layers[l].weights[[i, j]], numeric));
            }
        }
        for j in 0..cols {
            let original = probe.layers[l].live_bias[j];
            probe.layers[l].live_bias[j] = original + FD_STEP;
            let plus = loss_of(&probe, x, y, beta);
            probe.layers[l].live_bias[j] = original - FD_STEP;
            let minus = loss_of(&probe, x, y, beta);
            probe.layers[l].live_bias[j] = original;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grads.layers[l].bias[j], numeric));
        }
    }
    worst
}

/// Numeric input-gradient of a per-sample-weighted loss on a network, for
/// checking the gradient-reversal contribution.
pub fn fd_input_gradient(
    net: &StageNetwork,
    features: &Array2<f64>,
    spec: &LossSpec,
) -> Array2<f64> {
    let loss_at = |x: &Array2<f64>| -> f64 {
        let mut r = rng::stream(0, 0);
        let pass = forward(net, x, 0.0, Mode::Infer, &mut r).expect("forward");
        spec.loss(pass.scores())
    };
    let mut grad = Array2::zeros(features.raw_dim());
    let mut probe = features.clone();
    for i in 0..features.nrows() {
        for j in 0..features.ncols() {
            let original = probe[[i, j]];
            probe[[i, j]] = original + FD_STEP;
            let plus = loss_at(&probe);
            probe[[i, j]] = original - FD_STEP;
            let minus = loss_at(&probe);
            probe[[i, j]] = original;
            grad[[i, j]] = (plus - minus) / (2.0 * FD_STEP);
        }
    }
    grad
}

/// A masked network in a mid-training state: transferred from a smaller
/// random net with Bernoulli(rho) masks, then live values perturbed so the
/// snapshot and live arrays genuinely differ.
pub fn random_masked_network(seed: u64, n_prev: usize, n_next: usize, rho: f64) -> StageNetwork {
    let prev_topo = width_schedule(n_prev, 2, 6).expect("topology");
    let next_topo = width_schedule(n_next, 2, 6).expect("topology");
    let prev = init_network(&prev_topo, &mut rng::stream(seed, 1)).expect("init");
    let mut next = init_network(&next_topo, &mut rng::stream(seed, 2)).expect("init");
    transfer_weights(
        &prev,
        &mut next,
        rho,
        false,
        1,
        seed,
        &mut rng::stream(seed, 3),
    )
    .expect("transfer");
    let mut noise = rng::stream(seed, 4);
    for layer in &mut next.layers {
        for w in layer.live_weights.iter_mut() {
            *w += 0.3 * (noise.gen::<f64>() - 0.5);
        }
        for b in layer.live_bias.iter_mut() {
            *b += 0.3 * (noise.gen::<f64>() - 0.5);
        }
    }
    next
}

/// Random batch with entries roughly in [-1.5, 1.5].
pub fn random_batch(seed: u64, m: usize, n: usize) -> (Array2<f64>, Array1<f64>) {
    let mut r: ChaCha8Rng = rng::stream(seed, 5);
    let x = Array2::from_shape_fn((m, n), |_| 3.0 * (r.gen::<f64>() - 0.5));
    let mut y = Array1::zeros(m);
    for v in y.iter_mut() {
        *v = if r.gen::<f64>() < 0.5 { 1.0 } else { 0.0 };
    }
    // Guarantee both classes.
    y[0] = 1.0;
    if m > 1 {
        y[1] = 0.0;
    }
    (x, y)
}
