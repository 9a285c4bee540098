//! Parameter updates: Adam (default) or plain SGD, with an inverse-decay
//! learning-rate schedule, gated by the backward masks.

use ndarray::{Array1, Array2};

use super::{Gradients, StageNetwork};
use crate::error::{Error, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone)]
struct LayerMoments {
    m_weights: Array2<f64>,
    v_weights: Array2<f64>,
    m_bias: Array1<f64>,
    v_bias: Array1<f64>,
}

/// Optimizer state for one network: first/second moments and the step
/// counter. `total_steps` fixes the progress denominator for the schedule.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step: usize,
    pub total_steps: usize,
    moments: Vec<LayerMoments>,
}

impl OptimizerState {
    pub fn new(net: &StageNetwork, kind: OptimizerKind, total_steps: usize) -> Self {
        let moments = net
            .layers
            .iter()
            .map(|l| LayerMoments {
                m_weights: Array2::zeros(l.live_weights.raw_dim()),
                v_weights: Array2::zeros(l.live_weights.raw_dim()),
                m_bias: Array1::zeros(l.live_bias.len()),
                v_bias: Array1::zeros(l.live_bias.len()),
            })
            .collect();
        OptimizerState {
            kind,
            step: 0,
            total_steps,
            moments,
        }
    }
}

/// `eta_p = eta0 / (1 + decay_omega * p)^decay_phi` for progress `p` in [0, 1].
pub fn inverse_decay_lr(eta0: f64, decay_omega: f64, decay_phi: f64, progress: f64) -> f64 {
    eta0 / (1.0 + decay_omega * progress.clamp(0.0, 1.0)).powf(decay_phi)
}

/// Training progress for a 0-based step index: 0 at the first step, 1 at the
/// last.
pub fn progress_of(step_index: usize, total_steps: usize) -> f64 {
    if total_steps <= 1 {
        0.0
    } else {
        step_index as f64 / (total_steps - 1) as f64
    }
}

/// Applies one optimizer step to the live parameters.
///
/// Updates land only where `pb = 1`; gated-off entries keep their live value
/// bit-for-bit and their moments stay zero. Non-finite gradients abort with
/// a diagnostic.
pub fn apply_update(
    net: &mut StageNetwork,
    grads: &Gradients,
    state: &mut OptimizerState,
    step_index: usize,
    eta0: f64,
    decay_omega: f64,
    decay_phi: f64,
) -> Result<()> {
    if grads.layers.len() != net.layers.len() {
        return Err(Error::Shape("gradient/network layer count mismatch".into()));
    }
    for (l, g) in grads.layers.iter().enumerate() {
        if g.weights.iter().any(|v| !v.is_finite()) || g.bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "gradient",
                layer: l,
                step: step_index,
            });
        }
    }
    let eta = inverse_decay_lr(
        eta0,
        decay_omega,
        decay_phi,
        progress_of(step_index, state.total_steps),
    );
    let t = state.step + 1;
    match state.kind {
        OptimizerKind::Adam => {
            let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
            for (l, layer) in net.layers.iter_mut().enumerate() {
                let g = &grads.layers[l];
                let mom = &mut state.moments[l];
                let gw = &layer.pb_weights * &g.weights;
                let gb = &layer.pb_bias * &g.bias;
                mom.m_weights = ADAM_BETA1 * &mom.m_weights + (1.0 - ADAM_BETA1) * &gw;
                mom.v_weights = ADAM_BETA2 * &mom.v_weights + (1.0 - ADAM_BETA2) * (&gw * &gw);
                mom.m_bias = ADAM_BETA1 * &mom.m_bias + (1.0 - ADAM_BETA1) * &gb;
                mom.v_bias = ADAM_BETA2 * &mom.v_bias + (1.0 - ADAM_BETA2) * (&gb * &gb);
                let step_w =
                    (&mom.m_weights / bc1) / ((&mom.v_weights / bc2).mapv(f64::sqrt) + ADAM_EPS);
                let step_b = (&mom.m_bias / bc1) / ((&mom.v_bias / bc2).mapv(f64::sqrt) + ADAM_EPS);
                // pb gating again: 0/(sqrt(0)+eps) is already 0, but keep the
                // gated entries exactly untouched rather than subtracting 0.
                ndarray::Zip::from(&mut layer.live_weights)
                    .and(&layer.pb_weights)
                    .and(&step_w)
                    .for_each(|w, &pb, &s| {
                        if pb == 1.0 {
                            *w -= eta * s;
                        }
                    });
                ndarray::Zip::from(&mut layer.live_bias)
                    .and(&layer.pb_bias)
                    .and(&step_b)
                    .for_each(|b, &pb, &s| {
                        if pb == 1.0 {
                            *b -= eta * s;
                        }
                    });
            }
        }
        OptimizerKind::Sgd => {
            for (l, layer) in net.layers.iter_mut().enumerate() {
                let g = &grads.layers[l];
                ndarray::Zip::from(&mut layer.live_weights)
                    .and(&layer.pb_weights)
                    .and(&g.weights)
                    .for_each(|w, &pb, &gv| {
                        if pb == 1.0 {
                            *w -= eta * gv;
                        }
                    });
                ndarray::Zip::from(&mut layer.live_bias)
                    .and(&layer.pb_bias)
                    .and(&g.bias)
                    .for_each(|b, &pb, &gv| {
                        if pb == 1.0 {
                            *b -= eta * gv;
                        }
                    });
            }
        }
    }
    state.step += 1;
    Ok(())
}
