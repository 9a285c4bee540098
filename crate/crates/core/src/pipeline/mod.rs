//! The sequential multi-stage training loop and the model registry.
//!
//! Training walks the stages in order: the first trained stage starts from a
//! fresh initialization with all-ones masks, every later stage is
//! initialized, receives the previous stage's weights through a masked
//! transfer, and is then trained on its own data. The result is a registry
//! holding one network per stage, which serves per-stage inference and
//! round-trips losslessly through a versioned binary file.

mod io;

pub use io::{
    load_registry, registry_from_bytes, registry_to_bytes, save_registry, FORMAT_VERSION,
};

use std::collections::HashMap;

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;

use crate::engine::{
    apply_update, backward, backward_with, beta_of, forward, grl_step, AdversarialHead, LossSpec,
    Mode, OptimizerState, StageNetwork, TrainConfig,
};
use crate::error::{Error, Result};
use crate::funnelgen::FunnelDataset;
use crate::rng::{derive_seed, stream};
use crate::topology::width_schedule;
use crate::transfer::{init_network, transfer_weights, TransferReport};
use rand_chacha::ChaCha8Rng;

/// One trained stage in the registry.
#[derive(Debug, Clone)]
pub struct RegistryEntry {
    pub network: StageNetwork,
    pub config: TrainConfig,
    /// Transfer audit; `None` for the first trained stage.
    pub report: Option<TransferReport>,
    /// Per-epoch training loss; not persisted.
    pub loss_trace: Vec<f64>,
}

impl PartialEq for RegistryEntry {
    fn eq(&self, other: &Self) -> bool {
        // The loss trace is runtime metadata and deliberately not part of
        // the persisted format.
        self.network == other.network && self.config == other.config && self.report == other.report
    }
}

/// Ordered collection of trained per-stage networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRegistry {
    pub format_version: u32,
    /// Absolute index of the first trained stage.
    pub start_stage: usize,
    pub entries: Vec<RegistryEntry>,
}

impl ModelRegistry {
    pub fn new(start_stage: usize) -> Self {
        ModelRegistry {
            format_version: FORMAT_VERSION,
            start_stage,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry for an absolute stage index.
    pub fn entry(&self, stage: usize) -> Result<&RegistryEntry> {
        if stage < self.start_stage {
            return Err(Error::UnknownStage(stage));
        }
        self.entries
            .get(stage - self.start_stage)
            .ok_or(Error::UnknownStage(stage))
    }

    pub fn network(&self, stage: usize) -> Result<&StageNetwork> {
        Ok(&self.entry(stage)?.network)
    }

    pub fn stage_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (self.start_stage..).take(self.entries.len())
    }
}

/// Per-stage prediction on one applicant.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePrediction {
    pub stage_index: usize,
    pub applicant_id: u64,
    pub score: f64,
    /// `score >= threshold`; ties count positive.
    pub decision: bool,
}

/// Inference scores for a batch (read-only, no dropout).
pub fn predict_scores(net: &StageNetwork, x: &Array2<f64>) -> Result<Array1<f64>> {
    let mut rng = stream(0, 0);
    let pass = forward(net, x, 0.0, Mode::Infer, &mut rng)?;
    Ok(pass.scores().column(0).to_owned())
}

/// Scores and thresholded decisions for one stage of a registry.
///
/// `ids` may be empty, in which case row indices stand in for applicant ids.
pub fn predict(
    registry: &ModelRegistry,
    stage: usize,
    x: &Array2<f64>,
    ids: &[u64],
    threshold: f64,
) -> Result<Vec<StagePrediction>> {
    let net = registry.network(stage)?;
    if !ids.is_empty() && ids.len() != x.nrows() {
        return Err(Error::Shape(format!(
            "{} ids for {} rows",
            ids.len(),
            x.nrows()
        )));
    }
    let scores = predict_scores(net, x)?;
    Ok(scores
        .iter()
        .enumerate()
        .map(|(row, &score)| StagePrediction {
            stage_index: stage,
            applicant_id: ids.get(row).copied().unwrap_or(row as u64),
            score,
            decision: score >= threshold,
        })
        .collect())
}

fn check_training_inputs(x: &Array2<f64>, y: &Array1<f64>, net: &StageNetwork) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::Dataset("cannot train on an empty dataset".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!(
            "{} rows vs {} labels",
            x.nrows(),
            y.len()
        )));
    }
    if x.ncols() != net.input_width() {
        return Err(Error::Shape(format!(
            "{} feature columns, network expects {}",
            x.ncols(),
            net.input_width()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Dataset("non-finite feature value".into()));
    }
    Ok(())
}

/// Trains one stage network for `config.epochs` passes over the data.
///
/// Returns the trained network and the per-epoch mean training loss.
pub fn train_stage(
    x: &Array2<f64>,
    y: &Array1<f64>,
    net: StageNetwork,
    config: &TrainConfig,
) -> Result<(StageNetwork, Vec<f64>)> {
    train_stage_tagged(x, y, net, config, 0, None)
}

/// [`train_stage`] with an explicit RNG stream tag (the pipeline uses the
/// stage index, so every stage is reproducible on its own) and an optional
/// source-domain matrix for the adversarial head.
pub fn train_stage_tagged(
    x: &Array2<f64>,
    y: &Array1<f64>,
    net: StageNetwork,
    config: &TrainConfig,
    rng_tag: u64,
    da_source: Option<&Array2<f64>>,
) -> Result<(StageNetwork, Vec<f64>)> {
    if config.epochs == 0 {
        config.validate()?;
        check_training_inputs(x, y, &net)?;
        return Ok((net, Vec::new()));
    }
    let mut trainer = EpochTrainer::new(x, y, net, config, rng_tag, da_source)?;
    let mut trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        trace.push(trainer.run_epoch()?);
    }
    Ok((trainer.into_network(), trace))
}

struct DaState<'a> {
    source: &'a Array2<f64>,
    head: AdversarialHead,
    head_state: OptimizerState,
    source_rng: ChaCha8Rng,
}

/// Epoch-stepping stage trainer.
///
/// [`train_stage_tagged`] drives it for a fixed epoch count; the evaluation
/// harness drives it with early stopping. The learning-rate schedule always
/// spans `config.epochs` full epochs, so an early-stopped run follows the
/// same trajectory prefix as a full one.
pub struct EpochTrainer<'a> {
    x: &'a Array2<f64>,
    y: &'a Array1<f64>,
    net: StageNetwork,
    config: &'a TrainConfig,
    beta: f64,
    batch: usize,
    state: OptimizerState,
    shuffle_rng: ChaCha8Rng,
    forward_rng: ChaCha8Rng,
    da: Option<DaState<'a>>,
    indices: Vec<usize>,
    step: usize,
}

impl<'a> EpochTrainer<'a> {
    pub fn new(
        x: &'a Array2<f64>,
        y: &'a Array1<f64>,
        net: StageNetwork,
        config: &'a TrainConfig,
        rng_tag: u64,
        da_source: Option<&'a Array2<f64>>,
    ) -> Result<Self> {
        config.validate()?;
        check_training_inputs(x, y, &net)?;
        let beta = beta_of(y)?;
        let m = x.nrows();
        let batch = config.batch_size.min(m);
        let steps_per_epoch = m.div_ceil(batch);
        let total_steps = config.epochs.max(1) * steps_per_epoch;

        let base = derive_seed(config.seed, rng_tag);
        let da = match da_source {
            Some(source) if config.da_lambda > 0.0 => {
                if source.ncols() != net.input_width() {
                    return Err(Error::Shape(format!(
                        "source-domain matrix has {} columns, network expects {}",
                        source.ncols(),
                        net.input_width()
                    )));
                }
                let mut head_rng = stream(base, 3);
                let gamma_width = net.topology.widths[net.topology.layer_count() - 2];
                let head = AdversarialHead::new(gamma_width, config.da_lambda, &mut head_rng)?;
                let head_state = OptimizerState::new(&head.net, config.optimizer, total_steps);
                Some(DaState {
                    source,
                    head,
                    head_state,
                    source_rng: stream(base, 4),
                })
            }
            _ => None,
        };
        let state = OptimizerState::new(&net, config.optimizer, total_steps);
        Ok(EpochTrainer {
            x,
            y,
            net,
            config,
            beta,
            batch,
            state,
            shuffle_rng: stream(base, 1),
            forward_rng: stream(base, 2),
            da,
            indices: (0..m).collect(),
            step: 0,
        })
    }

    pub fn network(&self) -> &StageNetwork {
        &self.net
    }

    pub fn into_network(self) -> StageNetwork {
        self.net
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// One full pass over the data; returns the mean training loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let config = self.config;
        self.indices.shuffle(&mut self.shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in self.indices.chunks(self.batch) {
            let xb = self.x.select(Axis(0), chunk);
            let yb = self.y.select(Axis(0), chunk);
            let loss = match &mut self.da {
                None => {
                    let pass = forward(
                        &self.net,
                        &xb,
                        config.dropout_p,
                        Mode::Train,
                        &mut self.forward_rng,
                    )?;
                    let spec = LossSpec::balanced(self.beta, &yb)?;
                    let loss = spec.loss(pass.scores());
                    let grads = backward(&self.net, &pass, &yb, self.beta, false)?;
                    apply_update(
                        &mut self.net,
                        &grads,
                        &mut self.state,
                        self.step,
                        config.eta0,
                        config.decay_omega,
                        config.decay_phi,
                    )?;
                    loss
                }
                Some(da) => {
                    let b = chunk.len();
                    let src_take = b.min(da.source.nrows());
                    let src_rows =
                        rand::seq::index::sample(&mut da.source_rng, da.source.nrows(), src_take)
                            .into_vec();
                    let xs = da.source.select(Axis(0), &src_rows);
                    let stacked =
                        ndarray::concatenate(Axis(0), &[xb.view(), xs.view()]).expect("same width");
                    let pass = forward(
                        &self.net,
                        &stacked,
                        config.dropout_p,
                        Mode::Train,
                        &mut self.forward_rng,
                    )?;

                    // Main loss on the target rows only; source rows carry
                    // zero weight and only feed the domain discriminator.
                    let total_rows = b + src_take;
                    let mut labels_full = Array1::zeros(total_rows);
                    labels_full.slice_mut(s![..b]).assign(&yb);
                    let mut alpha = Array1::zeros(total_rows);
                    let mut nu = Array1::zeros(total_rows);
                    alpha.slice_mut(s![..b]).fill(self.beta);
                    nu.slice_mut(s![..b]).fill(1.0 - self.beta);
                    let spec = LossSpec {
                        labels: labels_full,
                        alpha,
                        nu,
                        normalizer: b as f64,
                    };
                    let loss = spec.loss(pass.scores());

                    let gamma_layer = self.net.layers.len() - 1;
                    let gamma_feats = &pass.activations[gamma_layer];
                    let mut domain = Array1::zeros(total_rows);
                    domain.slice_mut(s![..b]).fill(1.0);
                    let grl = grl_step(gamma_feats, &domain, &mut da.head, &mut self.forward_rng)?;

                    let grads = backward_with(
                        &self.net,
                        &pass,
                        &spec,
                        Some((gamma_layer, &grl.trunk_grad)),
                        false,
                    )?;
                    apply_update(
                        &mut self.net,
                        &grads,
                        &mut self.state,
                        self.step,
                        config.eta0,
                        config.decay_omega,
                        config.decay_phi,
                    )?;
                    apply_update(
                        &mut da.head.net,
                        &grl.disc_grads,
                        &mut da.head_state,
                        self.step,
                        config.eta0,
                        config.decay_omega,
                        config.decay_phi,
                    )?;
                    loss
                }
            };
            epoch_loss += loss;
            batches += 1;
            self.step += 1;
        }
        Ok(epoch_loss / batches as f64)
    }
}

/// Everything a stage trainer needs; handed to the callback of
/// [`train_msgtl_with`] so harnesses can substitute their own inner loop
/// (early stopping, threshold selection) without re-implementing the
/// stage-walking logic.
pub struct StageTrainContext<'a> {
    pub stage_index: usize,
    pub features: &'a Array2<f64>,
    pub labels: &'a Array1<f64>,
    pub config: &'a TrainConfig,
    pub da_source: Option<&'a Array2<f64>>,
    /// Stream tag for this stage's RNG; equals the absolute stage index.
    pub rng_tag: u64,
}

/// Trains the full multi-stage chain with the default per-stage trainer.
pub fn train_msgtl(
    dataset: &FunnelDataset,
    config: &TrainConfig,
    start: usize,
) -> Result<ModelRegistry> {
    train_msgtl_with(dataset, config, start, |ctx, net| {
        train_stage_tagged(
            ctx.features,
            ctx.labels,
            net,
            ctx.config,
            ctx.rng_tag,
            ctx.da_source,
        )
    })
}

/// Trains the chain with a custom per-stage trainer.
///
/// Stage `start` is trained from fresh initialization with all-ones masks;
/// each later stage is initialized, receives the previous trained network
/// via masked transfer, and is then handed to `trainer`. With
/// `prev_score_feature` set, the previous stage's score is appended as the
/// last input column (scores recursively include earlier score columns, so
/// the prefix alignment between consecutive inputs is preserved). With
/// `da_lambda > 0`, later stages also receive the previous stage's rows,
/// zero-padded to the current width, as the source domain.
pub fn train_msgtl_with<F>(
    dataset: &FunnelDataset,
    config: &TrainConfig,
    start: usize,
    mut trainer: F,
) -> Result<ModelRegistry>
where
    F: FnMut(StageTrainContext<'_>, StageNetwork) -> Result<(StageNetwork, Vec<f64>)>,
{
    config.validate()?;
    if start >= dataset.stage_count() {
        return Err(Error::Eval(format!(
            "start stage {start} out of range ({} stages)",
            dataset.stage_count()
        )));
    }
    let mut registry = ModelRegistry::new(start);
    let mut prev_aug: Option<Array2<f64>> = None;

    for q in start..dataset.stage_count() {
        let raw = dataset.features(q)?;
        let labels = dataset.labels(q)?;
        let positives = labels.iter().filter(|&&y| y == 1.0).count();
        if positives == 0 || positives == labels.len() {
            return Err(Error::Dataset(format!(
                "stage {q} ('{}') has {positives} positives out of {} samples; \
                 the balanced loss is degenerate",
                dataset.stage(q)?.name,
                labels.len()
            )));
        }

        // Build this stage's input matrix, appending the previous stage's
        // score column when configured.
        let aug: Array2<f64> = if q > start && config.prev_score_feature {
            let prev = registry.entries.last().expect("previous stage trained");
            let prev_aug_ref = prev_aug.as_ref().expect("previous features kept");
            let prev_ids = dataset.ids(q - 1)?;
            let index: HashMap<u64, usize> = prev_ids
                .iter()
                .enumerate()
                .map(|(i, &id)| (id, i))
                .collect();
            let rows: Vec<usize> = dataset
                .ids(q)?
                .iter()
                .map(|id| {
                    index.get(id).copied().ok_or_else(|| {
                        Error::Dataset(format!("id {id} missing from stage {}", q - 1))
                    })
                })
                .collect::<Result<_>>()?;
            let prev_rows = prev_aug_ref.select(Axis(0), &rows);
            let scores = predict_scores(&prev.network, &prev_rows)?;
            let new_raw = raw.slice(s![.., dataset.stage(q - 1)?.cols()..]);
            let mut aug = Array2::zeros((raw.nrows(), prev_rows.ncols() + new_raw.ncols() + 1));
            aug.slice_mut(s![.., ..prev_rows.ncols()])
                .assign(&prev_rows);
            aug.slice_mut(s![
                ..,
                prev_rows.ncols()..prev_rows.ncols() + new_raw.ncols()
            ])
            .assign(&new_raw);
            let last = aug.ncols() - 1;
            aug.column_mut(last).assign(&scores);
            aug
        } else {
            raw.clone()
        };

        let topology = width_schedule(aug.ncols(), config.gamma, config.omega)?;
        let mut net = init_network(&topology, &mut stream(config.seed, init_tag(q)))?;

        let report = if q > start {
            let prev = &registry.entries.last().expect("previous stage").network;
            let mask_seed = derive_seed(config.seed, mask_tag(q));
            Some(transfer_weights(
                prev,
                &mut net,
                config.rho,
                config.shared_mask,
                q,
                mask_seed,
                &mut stream(mask_seed, 0),
            )?)
        } else {
            None
        };

        // Source rows for the adversarial head: the previous stage's inputs,
        // zero-padded to this stage's width.
        let da_source: Option<Array2<f64>> = if q > start && config.da_lambda > 0.0 {
            let prev_aug_ref = prev_aug.as_ref().expect("previous features kept");
            let mut padded = Array2::zeros((prev_aug_ref.nrows(), aug.ncols()));
            padded
                .slice_mut(s![.., ..prev_aug_ref.ncols()])
                .assign(prev_aug_ref);
            Some(padded)
        } else {
            None
        };

        let (network, loss_trace) = trainer(
            StageTrainContext {
                stage_index: q,
                features: &aug,
                labels,
                config,
                da_source: da_source.as_ref(),
                rng_tag: q as u64,
            },
            net,
        )?;

        registry.entries.push(RegistryEntry {
            network,
            config: config.clone(),
            report,
            loss_trace,
        });
        prev_aug = Some(aug);
    }
    Ok(registry)
}

/// RNG stream tag for stage initialization; shared with the harness so a
/// no-transfer variant initializes the same networks as the transfer chain.
pub(crate) fn init_tag(stage: usize) -> u64 {
    0x1000 + stage as u64
}

fn mask_tag(stage: usize) -> u64 {
    0x2000 + stage as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::OptimizerKind;
    use crate::funnelgen::{generate, FunnelConfig, Phase, StageSpec};
    use crate::rng;
    use ndarray::array;

    fn toy_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            eta0: 0.05,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_network_unchanged() {
        let topo = width_schedule(4, 2, 6).unwrap();
        let net = init_network(&topo, &mut rng::stream(1, 0)).unwrap();
        let x = Array2::from_shape_fn((10, 4), |(i, j)| (i + j) as f64 * 0.1);
        let y = Array1::from_shape_fn(10, |i| (i % 2) as f64);
        let (trained, trace) = train_stage(&x, &y, net.clone(), &toy_config(0)).unwrap();
        assert_eq!(trained, net);
        assert!(trace.is_empty());
    }

    #[test]
    fn linearly_separable_toy_set_reaches_perfect_training_f1() {
        // Two clusters with a wide margin along both features.
        let m = 40;
        let mut x = Array2::zeros((m, 2));
        let mut y = Array1::zeros(m);
        let mut r = rng::stream(13, 0);
        use rand::Rng;
        for i in 0..m {
            let positive = i % 2 == 0;
            let (cx, cy) = if positive { (2.0, 2.0) } else { (-2.0, -2.0) };
            x[(i, 0)] = cx + r.gen::<f64>() * 0.5 - 0.25;
            x[(i, 1)] = cy + r.gen::<f64>() * 0.5 - 0.25;
            y[i] = if positive { 1.0 } else { 0.0 };
        }
        let topo = width_schedule(2, 2, 6).unwrap();
        let net = init_network(&topo, &mut rng::stream(2, 0)).unwrap();
        let (trained, trace) = train_stage(&x, &y, net, &toy_config(200)).unwrap();
        let scores = predict_scores(&trained, &x).unwrap();
        // Exhaustive threshold scan: some threshold must separate perfectly,
        // and 0.5 should already do it.
        let correct = scores
            .iter()
            .zip(y.iter())
            .all(|(&s, &label)| (s >= 0.5) == (label == 1.0));
        assert!(
            correct,
            "training data not separated; trace end {:?}",
            trace.last()
        );
        assert!(trace.last().unwrap() < &0.1);
    }

    #[test]
    fn rho_zero_stage_keeps_transferred_region_identical() {
        let prev_topo = width_schedule(3, 2, 6).unwrap();
        let prev = init_network(&prev_topo, &mut rng::stream(3, 0)).unwrap();
        let next_topo = width_schedule(6, 2, 6).unwrap();
        let mut next = init_network(&next_topo, &mut rng::stream(3, 1)).unwrap();
        transfer_weights(&prev, &mut next, 0.0, false, 1, 0, &mut rng::stream(3, 2)).unwrap();

        let x = Array2::from_shape_fn((30, 6), |(i, j)| ((i * 5 + j) as f64 * 0.21).sin());
        let y = Array1::from_shape_fn(30, |i| if i % 3 == 0 { 1.0 } else { 0.0 });
        let before = next.clone();
        let (after, _) = train_stage(&x, &y, next, &toy_config(30)).unwrap();
        for (l, src) in prev.layers.iter().enumerate() {
            let (rows, cols) = (src.fan_in(), src.fan_out());
            assert_eq!(
                after.layers[l].live_weights.slice(s![..rows, ..cols]),
                before.layers[l].live_weights.slice(s![..rows, ..cols])
            );
            assert_eq!(
                after.layers[l].live_bias.slice(s![..cols]),
                before.layers[l].live_bias.slice(s![..cols])
            );
        }
        // The fresh region trained.
        assert_ne!(after.layers[0].live_weights, before.layers[0].live_weights);
    }

    fn funnel() -> FunnelConfig {
        FunnelConfig {
            stages: vec![
                StageSpec::new("one", 4, 0.6, 0.6, Phase::Conversion),
                StageSpec::new("two", 5, 0.5, 0.5, Phase::Conversion),
                StageSpec::new("three", 4, 0.5, 0.5, Phase::Evaluation),
            ],
            initial_population: 300,
            drift: 0.0,
            noise: 1.0,
            seed: 40,
        }
    }

    fn quick_train_config() -> TrainConfig {
        TrainConfig {
            epochs: 8,
            batch_size: 64,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn three_stage_chain_trains_and_reports_transfers() {
        let data = generate(&funnel()).unwrap();
        let registry = train_msgtl(&data, &quick_train_config(), 0).unwrap();
        assert_eq!(registry.len(), 3);
        assert!(registry.entries[0].report.is_none());
        for entry in &registry.entries[1..] {
            let report = entry.report.as_ref().unwrap();
            assert!(report.transferred_params > 0);
            assert!(report.fresh_params > 0);
        }
        // Networks match the stage feature counts.
        for (q, entry) in registry.entries.iter().enumerate() {
            assert_eq!(entry.network.input_width(), data.stage(q).unwrap().cols());
        }
    }

    #[test]
    fn single_stage_dataset_reduces_to_plain_training() {
        let data = generate(&funnel()).unwrap();
        let registry = train_msgtl(&data, &quick_train_config(), 2).unwrap();
        assert_eq!(registry.len(), 1);
        assert_eq!(registry.start_stage, 2);
        assert!(registry.entries[0].report.is_none());
        assert!(registry.network(2).is_ok());
        assert!(registry.network(1).is_err());
    }

    #[test]
    fn chain_is_deterministic() {
        let data = generate(&funnel()).unwrap();
        let a = train_msgtl(&data, &quick_train_config(), 0).unwrap();
        let b = train_msgtl(&data, &quick_train_config(), 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_labels_abort_with_diagnostic() {
        let mut cfg = funnel();
        cfg.stages[1].survival_rate = 1.0;
        let data = generate(&cfg).unwrap();
        let err = train_msgtl(&data, &quick_train_config(), 0)
            .unwrap_err()
            .to_string();
        assert!(err.contains("degenerate"), "{err}");
        assert!(err.contains("stage 1"), "{err}");
    }

    #[test]
    fn prev_score_feature_adds_one_column_per_stage() {
        let data = generate(&funnel()).unwrap();
        let config = TrainConfig {
            prev_score_feature: true,
            ..quick_train_config()
        };
        let registry = train_msgtl(&data, &config, 0).unwrap();
        assert_eq!(
            registry.network(0).unwrap().input_width(),
            data.stage(0).unwrap().cols()
        );
        assert_eq!(
            registry.network(1).unwrap().input_width(),
            data.stage(1).unwrap().cols() + 1
        );
        assert_eq!(
            registry.network(2).unwrap().input_width(),
            data.stage(2).unwrap().cols() + 2
        );
    }

    #[test]
    fn da_variant_trains_with_adversarial_head() {
        let data = generate(&funnel()).unwrap();
        let config = TrainConfig {
            da_lambda: 0.2,
            epochs: 4,
            ..quick_train_config()
        };
        let registry = train_msgtl(&data, &config, 0).unwrap();
        assert_eq!(registry.len(), 3);
        // Determinism holds for the DA path too.
        let again = train_msgtl(&data, &config, 0).unwrap();
        assert_eq!(registry, again);
    }

    #[test]
    fn predictions_threshold_with_ties_positive() {
        let topo = width_schedule(3, 2, 6).unwrap();
        let mut net = init_network(&topo, &mut rng::stream(0, 0)).unwrap();
        for layer in &mut net.layers {
            layer.live_weights.fill(0.0);
            layer.live_bias.fill(0.0);
        }
        let mut registry = ModelRegistry::new(0);
        registry.entries.push(RegistryEntry {
            network: net,
            config: TrainConfig::default(),
            report: None,
            loss_trace: vec![],
        });
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64) - (j as f64));
        let preds = predict(&registry, 0, &x, &[], 0.5).unwrap();
        assert!(preds.iter().all(|p| p.score == 0.5 && p.decision));
        let all_pos = predict(&registry, 0, &x, &[], 0.0).unwrap();
        assert!(all_pos.iter().all(|p| p.decision));
        let all_neg = predict(&registry, 0, &x, &[], 1.1).unwrap();
        assert!(all_neg.iter().all(|p| !p.decision));
    }

    #[test]
    fn prediction_scores_are_row_order_equivariant() {
        let data = generate(&funnel()).unwrap();
        let registry = train_msgtl(&data, &quick_train_config(), 0).unwrap();
        let x = data.features(1).unwrap();
        let scores = predict_scores(registry.network(1).unwrap(), x).unwrap();
        let perm: Vec<usize> = (0..x.nrows()).rev().collect();
        let x_perm = x.select(Axis(0), &perm);
        let scores_perm = predict_scores(registry.network(1).unwrap(), &x_perm).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            assert_eq!(scores_perm[i], scores[p]);
        }
    }

    #[test]
    fn sgd_fallback_also_trains() {
        let data = generate(&funnel()).unwrap();
        let config = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            eta0: 0.1,
            ..quick_train_config()
        };
        let registry = train_msgtl(&data, &config, 0).unwrap();
        assert_eq!(registry.len(), 3);
        let trace = &registry.entries[0].loss_trace;
        assert!(trace.last().unwrap() <= trace.first().unwrap());
    }

    #[test]
    fn stage_training_only_reads_its_own_stage() {
        let data = generate(&funnel()).unwrap();
        data.reset_access_counts();
        train_msgtl(&data, &quick_train_config(), 0).unwrap();
        for q in 0..3 {
            assert_eq!(data.access_count(q), 1, "stage {q}");
        }
        // The labels example: restricting to a start stage touches only the
        // trained suffix.
        data.reset_access_counts();
        train_msgtl(&data, &quick_train_config(), 2).unwrap();
        assert_eq!(data.access_count(0), 0);
        assert_eq!(data.access_count(1), 0);
        assert_eq!(data.access_count(2), 1);
    }

    #[test]
    fn training_rejects_bad_inputs() {
        let topo = width_schedule(3, 2, 6).unwrap();
        let net = init_network(&topo, &mut rng::stream(0, 0)).unwrap();
        let empty = Array2::<f64>::zeros((0, 3));
        let err = train_stage(&empty, &Array1::zeros(0), net.clone(), &toy_config(1));
        assert!(err.is_err());
        let x = array![[1.0, f64::NAN, 0.0]];
        let err = train_stage(&x, &array![1.0], net, &toy_config(1));
        assert!(err.is_err());
    }
}
