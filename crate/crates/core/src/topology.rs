//! Per-stage network shapes.
//!
//! A stage network starts at the stage's feature count and halves its width
//! layer by layer until it reaches `gamma` nodes, then emits a single output
//! node. `omega` caps the total number of node layers; when the cap binds,
//! the schedule keeps halving for the first `omega - 2` layers and then jumps
//! to `gamma`. The embedding plan describes how one stage's weight matrices
//! land inside the next stage's (top-left, input-aligned sub-blocks), which
//! is valid because stage features are prefix-concatenated.

use crate::error::{Error, Result};

/// Layer-width schedule of one stage network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    /// Node counts per layer; input layer first, final entry is the single
    /// output node, second-to-last entry is `gamma`.
    pub widths: Vec<usize>,
    pub gamma: usize,
    pub omega: usize,
}

impl Topology {
    /// Feature count of the stage this topology was built for.
    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    /// Number of node layers (including input and output layers).
    pub fn layer_count(&self) -> usize {
        self.widths.len()
    }

    /// Number of weight matrices connecting consecutive layers.
    pub fn matrix_count(&self) -> usize {
        self.widths.len() - 1
    }

    /// Total parameter count (weights plus biases).
    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Checks the structural invariants of a width schedule.
    pub fn validate(&self) -> Result<()> {
        let w = &self.widths;
        if w.len() < 3 {
            return Err(Error::Topology(format!(
                "schedule must have at least 3 layers, got {}",
                w.len()
            )));
        }
        if *w.last().unwrap() != 1 {
            return Err(Error::Topology("output layer must have 1 node".into()));
        }
        if w[w.len() - 2] != self.gamma {
            return Err(Error::Topology(format!(
                "second-to-last layer must have gamma = {} nodes, got {}",
                self.gamma,
                w[w.len() - 2]
            )));
        }
        // Non-increasing down to the gamma layer; the degenerate n <= gamma
        // case is exempt (the gamma layer can be wider than the input there).
        if w[0] > self.gamma {
            for pair in w[..w.len() - 1].windows(2) {
                if pair[1] > pair[0] {
                    return Err(Error::Topology(format!(
                        "widths must be non-increasing through the gamma layer: {:?}",
                        w
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_params(n: usize, gamma: usize, omega: usize) -> Result<()> {
    if n < 1 {
        return Err(Error::Topology("feature count must be >= 1".into()));
    }
    if gamma < 1 {
        return Err(Error::Topology("gamma must be >= 1".into()));
    }
    if omega < 3 {
        return Err(Error::Topology(format!(
            "omega must be >= 3 (the layer-count floor), got {omega}"
        )));
    }
    Ok(())
}

/// Smallest `k` with `gamma * 2^k >= n`, i.e. the ceiling of `log2(n / gamma)`.
///
/// Exact integer arithmetic; no rounding surprises for non-dyadic ratios.
fn ceil_log2_ratio(n: usize, gamma: usize) -> usize {
    let mut k = 0usize;
    let mut reach = gamma as u128;
    let n = n as u128;
    while reach < n {
        reach *= 2;
        k += 1;
    }
    k
}

/// Number of node layers for a stage with `n` input features.
///
/// Three cases: 3 when `n <= gamma`; `omega` when the halving chain would
/// exceed it; otherwise `ceil(log2(n / gamma)) + 2`. Always in `[3, omega]`.
pub fn layer_count(n: usize, gamma: usize, omega: usize) -> Result<usize> {
    check_params(n, gamma, omega)?;
    if n <= gamma {
        return Ok(3);
    }
    let chain = ceil_log2_ratio(n, gamma) + 2;
    Ok(chain.min(omega))
}

/// Builds the full width schedule for a stage with `n` input features.
///
/// Widths halve (with ceiling) from `n`; the second-to-last layer is forced
/// to `gamma` and the last to 1. When the `omega` cap binds, the halving run
/// is truncated after `omega - 2` layers.
pub fn width_schedule(n: usize, gamma: usize, omega: usize) -> Result<Topology> {
    let levels = layer_count(n, gamma, omega)?;
    let mut widths = Vec::with_capacity(levels);
    widths.push(n);
    for _ in 1..levels.saturating_sub(2) {
        let prev = *widths.last().unwrap();
        widths.push(prev.div_ceil(2));
    }
    widths.push(gamma);
    widths.push(1);
    debug_assert_eq!(widths.len(), levels);
    let topo = Topology {
        widths,
        gamma,
        omega,
    };
    topo.validate()?;
    Ok(topo)
}

/// One sub-block copy in an embedding plan: the top-left `rows x cols` block
/// of the new network's weight matrix `new_layer` receives the old network's
/// matrix `old_layer` (the indices are always equal; both are kept so the
/// alignment is explicit in reports).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingPair {
    pub old_layer: usize,
    pub new_layer: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Input-side alignment between two consecutive stages' networks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingPlan {
    pub pairs: Vec<EmbeddingPair>,
}

/// Computes which sub-block of each new weight matrix receives the previous
/// stage's matrix.
///
/// Alignment is input-side (old matrix `l` lands in new matrix `l`) because
/// stage features are prefix-concatenated: the first `prev.widths[0]` inputs
/// of the new network mean exactly what the old network consumed.
pub fn embedding_plan(prev: &Topology, next: &Topology) -> Result<EmbeddingPlan> {
    prev.validate()?;
    next.validate()?;
    if prev.gamma != next.gamma || prev.omega != next.omega {
        return Err(Error::Transfer(format!(
            "gamma/omega must match across stages: ({}, {}) vs ({}, {})",
            prev.gamma, prev.omega, next.gamma, next.omega
        )));
    }
    if prev.input_width() > next.input_width() {
        return Err(Error::Transfer(format!(
            "next stage is narrower than previous ({} < {} features)",
            next.input_width(),
            prev.input_width()
        )));
    }
    if prev.layer_count() > next.layer_count() {
        return Err(Error::Transfer(format!(
            "next stage is shallower than previous ({} < {} layers)",
            next.layer_count(),
            prev.layer_count()
        )));
    }
    let mut pairs = Vec::with_capacity(prev.matrix_count());
    for l in 0..prev.matrix_count() {
        let rows = prev.widths[l];
        let cols = prev.widths[l + 1];
        if rows > next.widths[l] || cols > next.widths[l + 1] {
            return Err(Error::Transfer(format!(
                "transferred block {}x{} does not fit in target matrix {}x{} at layer {}",
                rows,
                cols,
                next.widths[l],
                next.widths[l + 1],
                l
            )));
        }
        pairs.push(EmbeddingPair {
            old_layer: l,
            new_layer: l,
            rows,
            cols,
        });
    }
    Ok(EmbeddingPlan { pairs })
}
