//! Network initialization and masked weight transfer between stages.
//!
//! Transfer copies the previous network's parameters into the input-aligned
//! top-left sub-blocks of the next network — into both the live and the
//! snapshot arrays, so the forward pass has a single code path — and samples
//! the forward/backward masks over exactly that region from Bernoulli(rho).
//! Everything outside the region stays freshly initialized with masks fixed
//! at 1.

use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::engine::{Activation, LayerParams, StageNetwork};
use crate::error::{Error, Result};
use crate::topology::{embedding_plan, Topology};

/// Audit record of one transfer: what moved, what stayed fresh, and how the
/// realized masks came out.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    pub stage_index: usize,
    pub transferred_params: usize,
    pub fresh_params: usize,
    /// Per-layer `(rows, cols)` extents of the transferred weight blocks.
    pub regions: Vec<(usize, usize)>,
    /// Fraction of ones among the sampled forward-mask entries.
    pub pf_ones_fraction: f64,
    /// Fraction of ones among the sampled backward-mask entries.
    pub pb_ones_fraction: f64,
    pub mask_seed: u64,
}

impl TransferReport {
    pub fn total_params(&self) -> usize {
        self.transferred_params + self.fresh_params
    }
}

/// Bias initialization for hidden layers. Slightly positive so rectified
/// units start active; a narrow funnel bottleneck dies for every input
/// otherwise.
const HIDDEN_BIAS_INIT: f64 = 0.1;

/// Fresh network for a topology: weights from N(0, 2 / fan_in), hidden
/// biases at a small positive constant, output bias zero, all masks 1,
/// snapshots zeroed.
pub fn init_network(topology: &Topology, rng: &mut ChaCha8Rng) -> Result<StageNetwork> {
    topology.validate()?;
    let mut layers = Vec::with_capacity(topology.matrix_count());
    for l in 0..topology.matrix_count() {
        let fan_in = topology.widths[l];
        let fan_out = topology.widths[l + 1];
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
            .map_err(|e| Error::Config(e.to_string()))?;
        let weights = Array2::from_shape_fn((fan_in, fan_out), |_| normal.sample(rng));
        let bias_init = if l == topology.matrix_count() - 1 {
            0.0
        } else {
            HIDDEN_BIAS_INIT
        };
        layers.push(LayerParams::fresh(
            weights,
            Array1::from_elem(fan_out, bias_init),
        ));
    }
    let net = StageNetwork {
        topology: topology.clone(),
        layers,
        hidden_activation: Activation::Relu,
        output_activation: Activation::Sigmoid,
    };
    net.validate()?;
    Ok(net)
}

/// Embeds `prev`'s parameters into `next` and samples the transfer masks.
///
/// For every embedding-plan pair the previous live values are copied into
/// both the live and snapshot arrays of the next network's top-left
/// sub-block (weights plus the bias prefix), and `pf`/`pb` are sampled
/// elementwise from Bernoulli(rho) over that sub-block — one shared draw per
/// entry when `shared_mask` is set. `mask_seed` is recorded in the report;
/// the caller derives it from the run seed and stage index.
pub fn transfer_weights(
    prev: &StageNetwork,
    next: &mut StageNetwork,
    rho: f64,
    shared_mask: bool,
    stage_index: usize,
    mask_seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<TransferReport> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Config(format!("rho must be in [0, 1], got {rho}")));
    }
    let plan = embedding_plan(&prev.topology, &next.topology)?;
    let mut regions = Vec::with_capacity(next.layers.len());
    let mut transferred = 0usize;
    let mut pf_ones = 0usize;
    let mut pb_ones = 0usize;
    let mut mask_entries = 0usize;

    for (l, layer) in next.layers.iter_mut().enumerate() {
        let Some(pair) = plan.pairs.get(l) else {
            regions.push((0, 0));
            continue;
        };
        let (rows, cols) = (pair.rows, pair.cols);
        let src = &prev.layers[l];
        layer
            .live_weights
            .slice_mut(s![..rows, ..cols])
            .assign(&src.live_weights);
        layer
            .snapshot_weights
            .slice_mut(s![..rows, ..cols])
            .assign(&src.live_weights);
        layer.live_bias.slice_mut(s![..cols]).assign(&src.live_bias);
        layer
            .snapshot_bias
            .slice_mut(s![..cols])
            .assign(&src.live_bias);

        for i in 0..rows {
            for j in 0..cols {
                let pf = if rng.gen::<f64>() < rho { 1.0 } else { 0.0 };
                let pb = if shared_mask {
                    pf
                } else if rng.gen::<f64>() < rho {
                    1.0
                } else {
                    0.0
                };
                layer.pf_weights[[i, j]] = pf;
                layer.pb_weights[[i, j]] = pb;
                pf_ones += pf as usize;
                pb_ones += pb as usize;
                mask_entries += 1;
            }
        }
        for j in 0..cols {
            let pf = if rng.gen::<f64>() < rho { 1.0 } else { 0.0 };
            let pb = if shared_mask {
                pf
            } else if rng.gen::<f64>() < rho {
                1.0
            } else {
                0.0
            };
            layer.pf_bias[j] = pf;
            layer.pb_bias[j] = pb;
            pf_ones += pf as usize;
            pb_ones += pb as usize;
            mask_entries += 1;
        }
        layer.transferred_region = (rows, cols);
        transferred += rows * cols + cols;
        regions.push((rows, cols));
    }
    next.validate()?;
    let total = next.param_count();
    Ok(TransferReport {
        stage_index,
        transferred_params: transferred,
        fresh_params: total - transferred,
        regions,
        pf_ones_fraction: ratio(pf_ones, mask_entries),
        pb_ones_fraction: ratio(pb_ones, mask_entries),
        mask_seed,
    })
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// True iff every snapshot entry in the transferred region still equals the
/// corresponding previous-stage live value exactly.
pub fn snapshot_equals_transfer(net: &StageNetwork, prev: &StageNetwork) -> bool {
    for (l, src) in prev.layers.iter().enumerate() {
        let Some(layer) = net.layers.get(l) else {
            return false;
        };
        let (rows, cols) = layer.transferred_region;
        if rows != src.fan_in() || cols != src.fan_out() {
            return false;
        }
        if layer.snapshot_weights.slice(s![..rows, ..cols]) != src.live_weights {
            return false;
        }
        if layer.snapshot_bias.slice(s![..cols]) != src.live_bias {
            return false;
        }
    }
    true
}
