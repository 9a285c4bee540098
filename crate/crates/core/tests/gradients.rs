//! Finite-difference spot checks of the backward pass (the acceptance suite
//! runs the full 50-configuration sweep; these cover the distinct code
//! paths).

mod common;

use common::{fd_input_gradient, max_gradient_error, random_batch, random_masked_network, rel_err};
use msgtl_core::engine::{grl_step, AdversarialHead, LossSpec};
use msgtl_core::rng;
use msgtl_core::topology::width_schedule;
use msgtl_core::transfer::init_network;
use ndarray::{array, Array1};

#[test]
fn unmasked_network_gradients_match_finite_differences() {
    let topo = width_schedule(6, 2, 6).unwrap();
    let net = init_network(&topo, &mut rng::stream(100, 0)).unwrap();
    let (x, y) = random_batch(100, 7, 6);
    let err = max_gradient_error(&net, &x, &y, 0.5);
    assert!(err <= 1e-4, "max relative error {err}");
}

#[test]
fn masked_network_gradients_match_finite_differences() {
    for (seed, rho, beta) in [(200, 0.0, 0.1), (201, 0.3, 0.5), (202, 1.0, 0.9)] {
        let net = random_masked_network(seed, 4, 9, rho);
        let (x, y) = random_batch(seed, 6, 9);
        let err = max_gradient_error(&net, &x, &y, beta);
        assert!(err <= 1e-4, "seed {seed}: max relative error {err}");
    }
}

#[test]
fn skewed_beta_gradients_match_finite_differences() {
    let topo = width_schedule(5, 2, 6).unwrap();
    let net = init_network(&topo, &mut rng::stream(300, 0)).unwrap();
    let (x, y) = random_batch(300, 8, 5);
    for beta in [0.1, 0.9] {
        let err = max_gradient_error(&net, &x, &y, beta);
        assert!(err <= 1e-4, "beta {beta}: max relative error {err}");
    }
}

#[test]
fn grl_trunk_gradient_is_minus_lambda_times_disc_input_gradient() {
    let lambda = 0.8;
    let mut head = AdversarialHead::new(2, lambda, &mut rng::stream(400, 0)).unwrap();
    let features = array![[0.3, -0.4], [1.1, 0.2], [-0.7, 0.9], [0.05, -1.2]];
    let domain: Array1<f64> = array![1.0, 0.0, 1.0, 0.0];
    let out = grl_step(&features, &domain, &mut head, &mut rng::stream(400, 1)).unwrap();

    let weights = domain.mapv(|_| 1.0);
    let spec = LossSpec::per_sample(weights, &domain).unwrap();
    let fd = fd_input_gradient(&head.net, &features, &spec);
    for (a, n) in out.trunk_grad.iter().zip(fd.iter()) {
        let err = rel_err(*a, -lambda * n);
        assert!(err <= 1e-4, "analytic {a} vs -lambda*fd {}", -lambda * n);
    }
}
