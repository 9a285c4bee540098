//! Chain fitting and the two validation protocols.
//!
//! Every stage is fitted with the same selection rule in both protocols so
//! their scores are comparable: a stratified 10% inner validation split
//! drives early stopping (patience 20 epochs) and the decision threshold is
//! the one maximizing inner-validation F1. Feature standardization is
//! fitted on the inner-training rows only. Stages too small to split safely
//! fall back to full-epoch training at threshold 0.5.

use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;

use super::{f1_positive, kfold_split, MetricSet, Variant};
use crate::engine::{balanced_ce, StageNetwork, TrainConfig};
use crate::error::{Error, Result};
use crate::funnelgen::{FunnelDataset, Standardizer};
use crate::pipeline::EpochTrainer;
use crate::pipeline::{init_tag, predict_scores, train_msgtl_with, StageTrainContext};
use crate::rng::{derive_seed, stream};
use crate::topology::width_schedule;
use crate::transfer::init_network;

/// Early-stopping patience, in epochs without inner-validation improvement.
const PATIENCE: usize = 20;
/// Inner validation fraction.
const INNER_VAL_FRAC: f64 = 0.1;

/// One fitted stage: the network plus everything needed to score test rows.
#[derive(Debug, Clone)]
pub struct FittedStage {
    pub stage_index: usize,
    pub network: StageNetwork,
    pub scaler: Standardizer,
    /// Score threshold calibrated on training data (for single-row use).
    pub threshold: f64,
    /// Positive rate observed in training labels; evaluation marks the top
    /// fraction of each scored batch positive, the way a capacity-bound
    /// selection stage decides.
    pub positive_rate: f64,
    pub best_epoch: usize,
    pub n_train: usize,
    pub fit_runtime_ms: u64,
}

/// Capacity-cut decisions: the top `rate` fraction of the batch by score is
/// positive. Ties at the cut go positive. Uses no label information.
pub fn rate_cut_decisions(scores: &Array1<f64>, rate: f64) -> Array1<f64> {
    let n = scores.len();
    if n == 0 {
        return Array1::zeros(0);
    }
    let k = ((rate * n as f64).round() as usize).clamp(0, n);
    if k == 0 {
        return Array1::zeros(n);
    }
    let mut sorted: Vec<f64> = scores.iter().copied().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let cut = sorted[k - 1];
    scores.mapv(|s| if s >= cut { 1.0 } else { 0.0 })
}

/// A trained model chain for one variant.
#[derive(Debug, Clone)]
pub struct FittedChain {
    pub variant: Variant,
    pub start: usize,
    pub stages: Vec<FittedStage>,
}

/// Per-stage evaluation result; `metrics` is `None` when the test set for
/// the stage is empty (reported, never silently dropped).
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage_index: usize,
    pub stage_name: String,
    pub n_train: usize,
    pub n_test: usize,
    pub metrics: Option<MetricSet>,
    pub runtime_ms: u64,
}

/// Stratified (train, validation) row split; `None` when either class is too
/// small to spare at least two validation rows.
fn stratified_inner_split(
    labels: &Array1<f64>,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Option<(Vec<usize>, Vec<usize>)> {
    let mut pos: Vec<usize> = Vec::new();
    let mut neg: Vec<usize> = Vec::new();
    for (i, &y) in labels.iter().enumerate() {
        if y == 1.0 {
            pos.push(i);
        } else {
            neg.push(i);
        }
    }
    if pos.len() < 10 || neg.len() < 10 {
        return None;
    }
    pos.shuffle(rng);
    neg.shuffle(rng);
    let take = |n: usize| (((n as f64 * INNER_VAL_FRAC).round() as usize).max(2)).min(n - 1);
    let (vp, vn) = (take(pos.len()), take(neg.len()));
    let mut val: Vec<usize> = pos[..vp].iter().chain(neg[..vn].iter()).copied().collect();
    let mut train: Vec<usize> = pos[vp..].iter().chain(neg[vn..].iter()).copied().collect();
    val.sort_unstable();
    train.sort_unstable();
    Some((train, val))
}

/// Threshold at which the predicted-positive fraction matches the observed
/// positive rate: the midpoint between the k-th and (k+1)-th highest score,
/// with k the number of positive labels. Corrects the systematic score
/// offset of a partially frozen output head without needing held-out data.
fn base_rate_threshold(scores: &Array1<f64>, labels: &Array1<f64>) -> f64 {
    let k = labels.iter().filter(|&&y| y == 1.0).count();
    let mut sorted: Vec<f64> = scores.iter().copied().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if k == 0 {
        return 1.0;
    }
    if k >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    (sorted[k - 1] + sorted[k]) / 2.0
}

/// Per-column standardization statistics, fitted once per column by the
/// stage that introduces it and reused by every later stage. Fitting each
/// stage on its own survivors would silently redefine what a shared column
/// means from one stage to the next, which is exactly the alignment the
/// weight transfer depends on.
#[derive(Debug, Clone, Default)]
struct ColumnStats {
    per_column: Vec<(f64, f64)>,
}

impl ColumnStats {
    /// Fits statistics for any columns beyond the ones already covered.
    fn extend_from(&mut self, features: &Array2<f64>) {
        let n = features.nrows() as f64;
        for c in self.per_column.len()..features.ncols() {
            let col = features.column(c);
            let mean = col.sum() / n;
            let var = col.fold(0.0, |acc, &v| acc + (v - mean) * (v - mean)) / n;
            self.per_column.push((mean, var.sqrt()));
        }
    }

    fn scaler(&self, width: usize) -> Standardizer {
        Standardizer {
            means: self.per_column[..width].iter().map(|&(m, _)| m).collect(),
            sds: self.per_column[..width].iter().map(|&(_, s)| s).collect(),
        }
    }
}

/// Fits one stage with early stopping and threshold selection.
///
/// Consumes the (possibly transfer-initialized) network and returns the
/// fitted stage plus the loss trace of the epochs actually run.
#[allow(clippy::too_many_arguments)]
fn fit_stage(
    stage_index: usize,
    features: &Array2<f64>,
    labels: &Array1<f64>,
    config: &TrainConfig,
    rng_tag: u64,
    da_source: Option<&Array2<f64>>,
    scaler: Standardizer,
    net: StageNetwork,
) -> Result<(FittedStage, StageNetwork, Vec<f64>)> {
    let started = Instant::now();
    let mut split_rng = stream(derive_seed(config.seed, rng_tag), 5);
    let split = stratified_inner_split(labels, &mut split_rng);

    let (fitted, network, trace) = match split {
        Some((train_rows, val_rows)) => {
            let x = scaler.apply(features)?;
            let x_tr = x.select(Axis(0), &train_rows);
            let y_tr = labels.select(Axis(0), &train_rows);
            let x_val = x.select(Axis(0), &val_rows);
            let y_val = labels.select(Axis(0), &val_rows);
            let da_std = match da_source {
                Some(src) => Some(scaler.apply(src)?),
                None => None,
            };

            let mut trainer =
                EpochTrainer::new(&x_tr, &y_tr, net, config, rng_tag, da_std.as_ref())?;
            let beta = trainer.beta();
            let mut trace = Vec::new();
            let mut best_loss = f64::INFINITY;
            let mut best_epoch = 0usize;
            let mut best_net = trainer.network().clone();
            for epoch in 0..config.epochs {
                trace.push(trainer.run_epoch()?);
                let val_scores = predict_scores(trainer.network(), &x_val)?;
                let val_loss = balanced_ce(&val_scores, &y_val, beta)?;
                // Ties go to the later epoch: a warm-started network can sit
                // on a flat validation curve where more fine-tuning is free.
                if val_loss <= best_loss + 1e-9 {
                    if val_loss < best_loss {
                        best_loss = val_loss;
                    }
                    best_epoch = epoch;
                    best_net = trainer.network().clone();
                } else if epoch - best_epoch >= PATIENCE {
                    break;
                }
            }
            let train_scores = predict_scores(&best_net, &x_tr)?;
            let threshold = base_rate_threshold(&train_scores, &y_tr);
            (
                FittedStage {
                    stage_index,
                    network: best_net.clone(),
                    scaler,
                    threshold,
                    positive_rate: labels.sum() / labels.len() as f64,
                    best_epoch,
                    n_train: features.nrows(),
                    fit_runtime_ms: started.elapsed().as_millis() as u64,
                },
                best_net,
                trace,
            )
        }
        None => {
            // Too small to split: train on everything for the full budget.
            let x = scaler.apply(features)?;
            let da_std = match da_source {
                Some(src) => Some(scaler.apply(src)?),
                None => None,
            };
            let mut trainer = EpochTrainer::new(&x, labels, net, config, rng_tag, da_std.as_ref())?;
            let mut trace = Vec::new();
            for _ in 0..config.epochs {
                trace.push(trainer.run_epoch()?);
            }
            let network = trainer.into_network();
            let train_scores = predict_scores(&network, &x)?;
            let threshold = base_rate_threshold(&train_scores, labels);
            (
                FittedStage {
                    stage_index,
                    network: network.clone(),
                    scaler,
                    threshold,
                    positive_rate: labels.sum() / labels.len() as f64,
                    best_epoch: config.epochs.saturating_sub(1),
                    n_train: features.nrows(),
                    fit_runtime_ms: started.elapsed().as_millis() as u64,
                },
                network,
                trace,
            )
        }
    };
    Ok((fitted, network, trace))
}

/// Fits the selected variant on (all stages of) a training dataset.
///
/// Transfer variants walk the masked-transfer chain; the plain variants fit
/// an independent network per stage from the same seed-derived
/// initialization streams, so a transfer variant on a single-stage dataset
/// is bit-identical to its no-transfer sibling.
pub fn fit_chain(
    data: &FunnelDataset,
    variant: Variant,
    base_config: &TrainConfig,
    start: usize,
) -> Result<FittedChain> {
    let config = variant.configure(base_config);
    let mut stages: Vec<FittedStage> = Vec::new();
    let mut stats = ColumnStats::default();
    if variant.transfers() {
        train_msgtl_with(data, &config, start, |ctx: StageTrainContext<'_>, net| {
            stats.extend_from(ctx.features);
            let scaler = stats.scaler(ctx.features.ncols());
            let (fitted, network, trace) = fit_stage(
                ctx.stage_index,
                ctx.features,
                ctx.labels,
                ctx.config,
                ctx.rng_tag,
                ctx.da_source,
                scaler,
                net,
            )?;
            stages.push(fitted);
            Ok((network, trace))
        })?;
    } else {
        if start >= data.stage_count() {
            return Err(Error::Eval(format!(
                "start stage {start} out of range ({} stages)",
                data.stage_count()
            )));
        }
        for q in start..data.stage_count() {
            let features = data.features(q)?;
            let labels = data.labels(q)?;
            let positives = labels.iter().filter(|&&y| y == 1.0).count();
            if positives == 0 || positives == labels.len() {
                return Err(Error::Dataset(format!(
                    "stage {q} ('{}') has {positives} positives out of {} samples; \
                     the balanced loss is degenerate",
                    data.stage(q)?.name,
                    labels.len()
                )));
            }
            stats.extend_from(features);
            let scaler = stats.scaler(features.ncols());
            let topology = width_schedule(features.ncols(), config.gamma, config.omega)?;
            let net = init_network(&topology, &mut stream(config.seed, init_tag(q)))?;
            let (fitted, _, _) =
                fit_stage(q, features, labels, &config, q as u64, None, scaler, net)?;
            stages.push(fitted);
        }
    }
    Ok(FittedChain {
        variant,
        start,
        stages,
    })
}

impl FittedChain {
    /// Scores a dataset stage by stage. Reads each stage's features exactly
    /// once, so access logs can certify single-pass evaluation.
    pub fn evaluate(&self, data: &FunnelDataset) -> Result<Vec<StageOutcome>> {
        let mut outcomes = Vec::with_capacity(self.stages.len());
        for fitted in &self.stages {
            let q = fitted.stage_index;
            let started = Instant::now();
            let stage = data.stage(q)?;
            let name = stage.name.clone();
            let n_test = stage.rows();
            let metrics = if n_test == 0 {
                None
            } else {
                let x_std = fitted.scaler.apply(data.features(q)?)?;
                let scores = predict_scores(&fitted.network, &x_std)?;
                let decisions = rate_cut_decisions(&scores, fitted.positive_rate);
                Some(f1_positive(&decisions, data.labels(q)?)?)
            };
            outcomes.push(StageOutcome {
                stage_index: q,
                stage_name: name,
                n_train: fitted.n_train,
                n_test,
                metrics,
                runtime_ms: fitted.fit_runtime_ms + started.elapsed().as_millis() as u64,
            });
        }
        Ok(outcomes)
    }
}

/// K-fold cross-validation: one fitted chain per fold, evaluated on the
/// fold's held-out applicants. Returns `(fold, outcomes)` pairs.
pub fn crossval_run(
    dataset: &FunnelDataset,
    variant: Variant,
    config: &TrainConfig,
    k: usize,
    seed: u64,
) -> Result<Vec<(usize, Vec<StageOutcome>)>> {
    let folds = kfold_split(dataset, k, seed)?;
    let mut results = Vec::with_capacity(k);
    for split in &folds {
        let train_view = dataset.restrict_to_ids(&split.train_ids);
        let test_view = dataset.restrict_to_ids(&split.test_ids);
        let chain = fit_chain(&train_view, variant, config, 0)?;
        let outcomes = chain.evaluate(&test_view)?;
        results.push((split.fold, outcomes));
    }
    Ok(results)
}

/// Single train/test split: trains on folds `1..k` and evaluates on fold 0.
/// The cheap per-seed protocol used for benchmarks and sweeps over many
/// seeds.
pub fn holdout_run(
    dataset: &FunnelDataset,
    variant: Variant,
    config: &TrainConfig,
    k: usize,
    seed: u64,
) -> Result<Vec<StageOutcome>> {
    let folds = kfold_split(dataset, k, seed)?;
    let split = &folds[0];
    let train_view = dataset.restrict_to_ids(&split.train_ids);
    let test_view = dataset.restrict_to_ids(&split.test_ids);
    let chain = fit_chain(&train_view, variant, config, 0)?;
    chain.evaluate(&test_view)
}

fn check_schema_match(a: &FunnelDataset, b: &FunnelDataset) -> Result<()> {
    if a.stage_count() != b.stage_count() {
        return Err(Error::Eval(format!(
            "cohort schema mismatch: {} vs {} stages",
            a.stage_count(),
            b.stage_count()
        )));
    }
    for q in 0..a.stage_count() {
        let (sa, sb) = (a.stage(q)?, b.stage(q)?);
        if sa.name != sb.name {
            return Err(Error::Eval(format!(
                "cohort schema mismatch at stage {q}: '{}' vs '{}'",
                sa.name, sb.name
            )));
        }
        if sa.column_names != sb.column_names {
            return Err(Error::Eval(format!(
                "cohort schema mismatch at stage {q} ('{}'): column names differ",
                sa.name
            )));
        }
    }
    Ok(())
}

/// Longitudinal protocol: select and train on one cohort, evaluate exactly
/// once on the later cohort.
///
/// The validation cohort's access log is reset first and must show exactly
/// one feature read per stage afterwards; anything else is reported as a
/// leak.
pub fn longitudinal_run(
    train_cohort: &FunnelDataset,
    validate_cohort: &FunnelDataset,
    variant: Variant,
    config: &TrainConfig,
) -> Result<Vec<StageOutcome>> {
    check_schema_match(train_cohort, validate_cohort)?;
    validate_cohort.reset_access_counts();
    let chain = fit_chain(train_cohort, variant, config, 0)?;
    let outcomes = chain.evaluate(validate_cohort)?;
    for q in 0..validate_cohort.stage_count() {
        let count = validate_cohort.access_count(q);
        if count != 1 {
            return Err(Error::Eval(format!(
                "validation cohort stage {q} was read {count} times; expected exactly 1"
            )));
        }
    }
    Ok(outcomes)
}
