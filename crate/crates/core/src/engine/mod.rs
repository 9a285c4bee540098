//! Dense feed-forward numerics for stage networks.
//!
//! Every weight entry carries four values: the live (trainable) value, a
//! snapshot of the value it had when it was transferred from the previous
//! stage, a forward mask `pf` and a backward mask `pb`. The forward pass
//! sees `pf * live + (1 - pf) * snapshot`; the backward pass applies updates
//! only where `pb = 1`. Fresh (non-transferred) entries always have both
//! masks at 1, so they behave as ordinary trainable weights.

mod grl;
mod loss;
mod optim;

pub use grl::{grl_step, AdversarialHead, GrlOutput};
pub use loss::{balanced_ce, beta_of, LossSpec, SCORE_EPS};
pub use optim::{apply_update, inverse_decay_lr, OptimizerKind, OptimizerState};

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::topology::Topology;

/// Leak slope of the rectified hidden units. A hard-zero rectifier lets the
/// narrow gamma bottleneck die for every input at once, which flattens the
/// whole network into a constant; the leak keeps a gradient path open.
pub const RELU_LEAK: f64 = 0.01;

/// Elementwise activation kinds used by stage networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Rectified linear with a small leak below zero.
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    RELU_LEAK * z
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed in terms of the pre-activation value.
    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    RELU_LEAK
                }
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
        }
    }
}

/// Parameters of one dense layer, with transfer bookkeeping.
///
/// Shapes: weights are `(fan_in, fan_out)`, biases `(fan_out,)`. The
/// transferred region is the top-left `rows x cols` weight block plus the
/// first `cols` bias entries; `(0, 0)` means nothing was transferred.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub live_weights: Array2<f64>,
    pub live_bias: Array1<f64>,
    pub snapshot_weights: Array2<f64>,
    pub snapshot_bias: Array1<f64>,
    pub pf_weights: Array2<f64>,
    pub pf_bias: Array1<f64>,
    pub pb_weights: Array2<f64>,
    pub pb_bias: Array1<f64>,
    pub transferred_region: (usize, usize),
}

impl LayerParams {
    /// Fresh layer: given live values, snapshots zeroed, all masks 1.
    pub fn fresh(weights: Array2<f64>, bias: Array1<f64>) -> Self {
        let wshape = weights.raw_dim();
        let blen = bias.len();
        LayerParams {
            snapshot_weights: Array2::zeros(wshape),
            snapshot_bias: Array1::zeros(blen),
            pf_weights: Array2::ones(wshape),
            pf_bias: Array1::ones(blen),
            pb_weights: Array2::ones(wshape),
            pb_bias: Array1::ones(blen),
            transferred_region: (0, 0),
            live_weights: weights,
            live_bias: bias,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.live_weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.live_weights.ncols()
    }

    /// What the forward pass sees: live where `pf = 1`, frozen snapshot
    /// where `pf = 0`.
    pub fn effective_weights(&self) -> (Array2<f64>, Array1<f64>) {
        let w = &self.pf_weights * &self.live_weights
            + (1.0 - &self.pf_weights) * &self.snapshot_weights;
        let b = &self.pf_bias * &self.live_bias + (1.0 - &self.pf_bias) * &self.snapshot_bias;
        (w, b)
    }

    pub fn validate(&self) -> Result<()> {
        let (rows, cols) = (self.fan_in(), self.fan_out());
        let wdim = self.live_weights.raw_dim();
        if self.snapshot_weights.raw_dim() != wdim
            || self.pf_weights.raw_dim() != wdim
            || self.pb_weights.raw_dim() != wdim
        {
            return Err(Error::Shape("layer weight arrays disagree on shape".into()));
        }
        if self.live_bias.len() != cols
            || self.snapshot_bias.len() != cols
            || self.pf_bias.len() != cols
            || self.pb_bias.len() != cols
        {
            return Err(Error::Shape("layer bias arrays disagree on shape".into()));
        }
        let (t_rows, t_cols) = self.transferred_region;
        if t_rows > rows || t_cols > cols {
            return Err(Error::Shape(format!(
                "transferred region {t_rows}x{t_cols} exceeds layer {rows}x{cols}"
            )));
        }
        let binary = |v: f64| v == 0.0 || v == 1.0;
        for ((r, c), &v) in self.pf_weights.indexed_iter() {
            if !binary(v) || !binary(self.pb_weights[(r, c)]) {
                return Err(Error::Shape(format!("mask entry at ({r}, {c}) is not 0/1")));
            }
            // Fresh entries are unconditionally trainable.
            if (r >= t_rows || c >= t_cols) && (v != 1.0 || self.pb_weights[(r, c)] != 1.0) {
                return Err(Error::Shape(format!(
                    "mask entry at ({r}, {c}) is 0 outside the transferred region"
                )));
            }
        }
        for (c, &v) in self.pf_bias.iter().enumerate() {
            if !binary(v) || !binary(self.pb_bias[c]) {
                return Err(Error::Shape(format!("bias mask entry {c} is not 0/1")));
            }
            if c >= t_cols && (v != 1.0 || self.pb_bias[c] != 1.0) {
                return Err(Error::Shape(format!(
                    "bias mask entry {c} is 0 outside the transferred region"
                )));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.live_weights.len() + self.live_bias.len()
    }
}

/// One stage's classifier network.
#[derive(Debug, Clone, PartialEq)]
pub struct StageNetwork {
    pub topology: Topology,
    pub layers: Vec<LayerParams>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl StageNetwork {
    pub fn input_width(&self) -> usize {
        self.topology.input_width()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerParams::param_count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        if self.layers.len() != self.topology.matrix_count() {
            return Err(Error::Shape(format!(
                "network has {} layers, topology wants {}",
                self.layers.len(),
                self.topology.matrix_count()
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if layer.fan_in() != self.topology.widths[l]
                || layer.fan_out() != self.topology.widths[l + 1]
            {
                return Err(Error::Shape(format!(
                    "layer {l} is {}x{}, topology wants {}x{}",
                    layer.fan_in(),
                    layer.fan_out(),
                    self.topology.widths[l],
                    self.topology.widths[l + 1]
                )));
            }
        }
        Ok(())
    }
}

/// Whether a forward pass is part of training (dropout active) or inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Hyperparameters for training one stage (and, through the pipeline, the
/// whole multi-stage run).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Probability that a transferred mask entry is 1.
    pub rho: f64,
    /// Nodes in the last activation layer before classification.
    pub gamma: usize,
    /// Maximum number of node layers.
    pub omega: usize,
    /// Initial learning rate.
    pub eta0: f64,
    /// Inverse-decay schedule strength.
    pub decay_omega: f64,
    /// Inverse-decay schedule exponent.
    pub decay_phi: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Dropout probability on hidden activations; 0 disables.
    pub dropout_p: f64,
    /// Gradient-reversal strength of the domain-adaptation head; 0 disables.
    pub da_lambda: f64,
    /// Sample one mask per transferred entry and use it for both passes
    /// (`pf = pb`) instead of two independent draws.
    pub shared_mask: bool,
    /// Append the previous stage's score as an extra input feature.
    pub prev_score_feature: bool,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rho: 0.3,
            gamma: 2,
            omega: 6,
            eta0: 0.01,
            decay_omega: 10.0,
            decay_phi: 0.75,
            epochs: 100,
            batch_size: 128,
            dropout_p: 0.0,
            da_lambda: 0.0,
            shared_mask: false,
            prev_score_feature: false,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!(
                "rho must be in [0, 1], got {}",
                self.rho
            )));
        }
        if self.gamma < 1 {
            return Err(Error::Config("gamma must be >= 1".into()));
        }
        if self.omega < 3 {
            return Err(Error::Config("omega must be >= 3".into()));
        }
        if self.eta0.is_nan() || self.eta0 <= 0.0 {
            return Err(Error::Config("eta0 must be positive".into()));
        }
        if self.decay_omega.is_nan()
            || self.decay_omega <= 0.0
            || self.decay_phi.is_nan()
            || self.decay_phi <= 0.0
        {
            return Err(Error::Config("decay parameters must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if self.da_lambda < 0.0 || !self.da_lambda.is_finite() {
            return Err(Error::Config(
                "da_lambda must be a finite non-negative real".into(),
            ));
        }
        Ok(())
    }
}

/// Activation cache produced by [`forward`] and consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `activations[0]` is the input batch; the last entry holds the output
    /// scores in (0, 1).
    pub activations: Vec<Array2<f64>>,
    /// Pre-activation values feeding each activation after the input.
    pub pre_activations: Vec<Array2<f64>>,
    /// Per-hidden-layer node masks, already scaled by `1 / (1 - p)`; `None`
    /// when dropout was inactive for that layer.
    pub dropout_masks: Vec<Option<Array1<f64>>>,
}

impl ForwardPass {
    pub fn scores(&self) -> &Array2<f64> {
        self.activations.last().expect("non-empty pass")
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }
}

/// Runs the network on a batch and returns all intermediate activations.
///
/// In train mode with `dropout_p > 0` a fresh Bernoulli(1 - p) node mask is
/// drawn per hidden layer for the whole batch and applied with inverted
/// scaling; inference applies no dropout.
pub fn forward(
    net: &StageNetwork,
    batch: &Array2<f64>,
    dropout_p: f64,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<ForwardPass> {
    if batch.ncols() != net.input_width() {
        return Err(Error::Shape(format!(
            "batch has {} columns, network expects {}",
            batch.ncols(),
            net.input_width()
        )));
    }
    let matrices = net.layers.len();
    let mut activations = Vec::with_capacity(matrices + 1);
    let mut pre_activations = Vec::with_capacity(matrices);
    let mut dropout_masks = Vec::with_capacity(matrices.saturating_sub(1));
    activations.push(batch.clone());

    for (l, layer) in net.layers.iter().enumerate() {
        let (w, b) = layer.effective_weights();
        let z = activations[l].dot(&w) + &b;
        let is_output = l == matrices - 1;
        let act = if is_output {
            net.output_activation
        } else {
            net.hidden_activation
        };
        let mut a = z.mapv(|v| act.apply(v));
        if !is_output {
            if mode == Mode::Train && dropout_p > 0.0 {
                let keep = 1.0 - dropout_p;
                let mask = Array1::from_shape_fn(a.ncols(), |_| {
                    if rng.gen::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                a *= &mask;
                dropout_masks.push(Some(mask));
            } else {
                dropout_masks.push(None);
            }
        }
        pre_activations.push(z);
        activations.push(a);
    }
    Ok(ForwardPass {
        activations,
        pre_activations,
        dropout_masks,
    })
}

/// Per-layer gradients with respect to the live parameters.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
    /// Gradient of the loss with respect to the input batch; filled only on
    /// request (the domain discriminator needs it).
    pub input_grad: Option<Array2<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &StageNetwork) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: Array2::zeros(l.live_weights.raw_dim()),
                    bias: Array1::zeros(l.live_bias.len()),
                })
                .collect(),
            input_grad: None,
        }
    }
}

/// Exact gradients of the balanced cross-entropy with respect to the live
/// parameters, under the effective-weights forward rule.
///
/// Entries with `pf = 0` come out exactly zero: the loss never sees their
/// live value.
pub fn backward(
    net: &StageNetwork,
    pass: &ForwardPass,
    labels: &Array1<f64>,
    beta: f64,
    want_input_grad: bool,
) -> Result<Gradients> {
    let m = pass.batch_size();
    let spec = LossSpec::balanced(beta, labels)?;
    backward_with(net, pass, &spec, None, want_input_grad).map_err(|e| match e {
        Error::Shape(s) => Error::Shape(format!("{s} (m = {m})")),
        other => other,
    })
}

/// Backward pass with an arbitrary per-sample loss weighting and an optional
/// extra gradient injected at a hidden activation layer (used to route the
/// reversed domain-discriminator gradient into the trunk).
pub fn backward_with(
    net: &StageNetwork,
    pass: &ForwardPass,
    spec: &LossSpec,
    inject: Option<(usize, &Array2<f64>)>,
    want_input_grad: bool,
) -> Result<Gradients> {
    let matrices = net.layers.len();
    if pass.activations.len() != matrices + 1 || pass.pre_activations.len() != matrices {
        return Err(Error::Shape(
            "activation cache does not match network depth".into(),
        ));
    }
    let m = pass.batch_size();
    if spec.len() != m {
        return Err(Error::Shape(format!(
            "loss spec covers {} samples, batch has {m}",
            spec.len()
        )));
    }
    for (l, a) in pass.activations.iter().enumerate() {
        if a.ncols() != net.topology.widths[l] || a.nrows() != m {
            return Err(Error::Shape(format!(
                "stale activation cache at layer {l}: {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
    }

    let scores = pass.scores();
    // d(loss)/d(output pre-activation) for the sigmoid head.
    let mut delta = spec.output_delta(scores);

    let mut layer_grads: Vec<LayerGrads> = (0..matrices)
        .map(|_| LayerGrads {
            weights: Array2::zeros((0, 0)),
            bias: Array1::zeros(0),
        })
        .collect();
    let mut input_grad = None;

    for l in (0..matrices).rev() {
        let layer = &net.layers[l];
        let dw_eff = pass.activations[l].t().dot(&delta);
        let db_eff = delta.sum_axis(Axis(0));
        layer_grads[l] = LayerGrads {
            weights: &layer.pf_weights * &dw_eff,
            bias: &layer.pf_bias * &db_eff,
        };
        if l == 0 && !want_input_grad {
            break;
        }
        let (w_eff, _) = layer.effective_weights();
        let mut grad_a = delta.dot(&w_eff.t());
        if l == 0 {
            input_grad = Some(grad_a);
            break;
        }
        // grad_a is w.r.t. the stored (post-dropout) activation, as is any
        // injected gradient; fold the realized mask back in afterwards, then
        // the activation derivative.
        if let Some((inject_layer, extra)) = inject {
            if inject_layer == l {
                if extra.raw_dim() != grad_a.raw_dim() {
                    return Err(Error::Shape(
                        "injected gradient shape does not match activation".into(),
                    ));
                }
                grad_a += extra;
            }
        }
        if let Some(mask) = &pass.dropout_masks[l - 1] {
            grad_a *= mask;
        }
        let z = &pass.pre_activations[l - 1];
        delta = grad_a * z.mapv(|v| net.hidden_activation.derivative(v));
    }

    Ok(Gradients {
        layers: layer_grads,
        input_grad,
    })
}
