//! Gradient-reversal domain discriminator.
//!
//! A small dense stack reads the activations of the gamma layer and predicts
//! which stage (domain) each row came from. The discriminator itself is
//! trained to minimize a class-weighted binary cross-entropy; the trunk
//! receives the discriminator's input-gradient multiplied by `-lambda`, which
//! pushes the gamma-layer features toward stage invariance.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

use super::{backward_with, forward, Gradients, LossSpec, Mode, StageNetwork};
use crate::error::{Error, Result};
use crate::topology::width_schedule;
use crate::transfer::init_network;

/// Domain discriminator attached at the gamma layer.
#[derive(Debug, Clone)]
pub struct AdversarialHead {
    /// Plain dense stack (all masks 1) from gamma inputs to 1 domain output.
    pub net: StageNetwork,
    /// Reversal strength applied to the trunk contribution.
    pub lambda: f64,
    /// Class weights (source, target) computed from the last processed batch.
    pub class_weights: (f64, f64),
    /// Batches skipped because only one domain was present.
    pub skipped_batches: usize,
}

impl AdversarialHead {
    /// Fresh head for a trunk whose gamma layer has `gamma` nodes.
    pub fn new(gamma: usize, lambda: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(Error::Config(
                "lambda must be a finite non-negative real".into(),
            ));
        }
        // Degenerate schedule [gamma, gamma, 1]: one hidden layer, one output.
        let topo = width_schedule(gamma, gamma, 3)?;
        let net = init_network(&topo, rng)?;
        Ok(AdversarialHead {
            net,
            lambda,
            class_weights: (1.0, 1.0),
            skipped_batches: 0,
        })
    }
}

/// Result of one discriminator step.
#[derive(Debug, Clone)]
pub struct GrlOutput {
    /// Weighted binary cross-entropy of the domain prediction.
    pub disc_loss: f64,
    /// `-lambda` times the discriminator's gradient with respect to its
    /// input features; add this to the trunk's gamma-layer gradient.
    pub trunk_grad: Array2<f64>,
    /// Gradients for the discriminator's own parameters.
    pub disc_grads: Gradients,
}

/// Runs the discriminator on gamma-layer features and domain labels
/// (0 = source / previous stage, 1 = target / current stage).
///
/// Each domain's class weight is `total / (2 * count(domain))`, so balanced
/// batches get weight 1 on both sides. A single-domain batch is a no-op and
/// bumps the head's skip counter.
pub fn grl_step(
    features: &Array2<f64>,
    domain_labels: &Array1<f64>,
    head: &mut AdversarialHead,
    rng: &mut ChaCha8Rng,
) -> Result<GrlOutput> {
    if features.nrows() != domain_labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows vs {} domain labels",
            features.nrows(),
            domain_labels.len()
        )));
    }
    if domain_labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Shape("domain labels must be 0 or 1".into()));
    }
    let total = domain_labels.len();
    let n_target = domain_labels.sum() as usize;
    let n_source = total - n_target;
    if n_source == 0 || n_target == 0 {
        head.skipped_batches += 1;
        return Ok(GrlOutput {
            disc_loss: 0.0,
            trunk_grad: Array2::zeros(features.raw_dim()),
            disc_grads: Gradients::zeros_like(&head.net),
        });
    }
    let w_source = total as f64 / (2.0 * n_source as f64);
    let w_target = total as f64 / (2.0 * n_target as f64);
    head.class_weights = (w_source, w_target);

    let weights = domain_labels.mapv(|y| if y == 1.0 { w_target } else { w_source });
    let spec = LossSpec::per_sample(weights, domain_labels)?;
    let pass = forward(&head.net, features, 0.0, Mode::Infer, rng)?;
    let disc_loss = spec.loss(pass.scores());
    let grads = backward_with(&head.net, &pass, &spec, None, true)?;
    let input_grad = grads
        .input_grad
        .clone()
        .expect("input gradient was requested");
    Ok(GrlOutput {
        disc_loss,
        trunk_grad: input_grad.mapv(|g| -head.lambda * g),
        disc_grads: grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;

    fn head_with_lambda(lambda: f64) -> AdversarialHead {
        let mut r = rng::stream(21, 0);
        AdversarialHead::new(2, lambda, &mut r).unwrap()
    }

    #[test]
    fn lambda_zero_gives_zero_trunk_contribution() {
        let mut head = head_with_lambda(0.0);
        let features = array![[0.4, -0.3], [1.2, 0.8], [0.1, 0.0], [-0.5, 0.9]];
        let labels = array![0.0, 1.0, 0.0, 1.0];
        let out = grl_step(&features, &labels, &mut head, &mut rng::stream(1, 1)).unwrap();
        assert!(out.trunk_grad.iter().all(|&g| g == 0.0));
        assert!(out.disc_loss > 0.0);
    }

    #[test]
    fn balanced_domains_weigh_one() {
        let mut head = head_with_lambda(0.5);
        let features = array![[0.4, -0.3], [1.2, 0.8], [0.1, 0.0], [-0.5, 0.9]];
        let labels = array![0.0, 1.0, 0.0, 1.0];
        grl_step(&features, &labels, &mut head, &mut rng::stream(1, 1)).unwrap();
        assert_eq!(head.class_weights, (1.0, 1.0));
    }

    #[test]
    fn imbalanced_domains_weigh_inverse_to_counts() {
        let mut head = head_with_lambda(0.5);
        let features = array![[0.4, -0.3], [1.2, 0.8], [0.1, 0.0], [-0.5, 0.9]];
        let labels = array![0.0, 1.0, 1.0, 1.0];
        grl_step(&features, &labels, &mut head, &mut rng::stream(1, 1)).unwrap();
        let (ws, wt) = head.class_weights;
        assert!((ws - 2.0).abs() < 1e-15);
        assert!((wt - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn single_domain_batch_is_a_counted_noop() {
        let mut head = head_with_lambda(0.5);
        let features = array![[0.4, -0.3], [1.2, 0.8]];
        let labels = array![1.0, 1.0];
        let out = grl_step(&features, &labels, &mut head, &mut rng::stream(1, 1)).unwrap();
        assert_eq!(head.skipped_batches, 1);
        assert_eq!(out.disc_loss, 0.0);
        assert!(out.trunk_grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn reversal_scales_input_gradient_by_minus_lambda() {
        let features = array![[0.4, -0.3], [1.2, 0.8], [0.1, 0.0], [-0.5, 0.9]];
        let labels = array![0.0, 1.0, 0.0, 1.0];
        let mut head_a = head_with_lambda(1.0);
        let mut head_b = head_with_lambda(0.7);
        // Identical discriminators, different lambda.
        head_b.net = head_a.net.clone();
        let a = grl_step(&features, &labels, &mut head_a, &mut rng::stream(1, 1)).unwrap();
        let b = grl_step(&features, &labels, &mut head_b, &mut rng::stream(1, 1)).unwrap();
        for (ga, gb) in a.trunk_grad.iter().zip(b.trunk_grad.iter()) {
            assert!((gb - 0.7 * ga).abs() < 1e-15);
        }
    }
}
