//! Metrics, validation protocols, sweeps, and reports.
//!
//! Everything here scores the positive class: funnels are imbalanced by
//! construction and the cost of missing a strong applicant dominates.
//! Splits are applicant-level — an id assigned to a fold at the first stage
//! stays in that fold at every later stage it survives to — because stage
//! datasets share applicants and row-level splitting would leak identities
//! across stages.

mod report;
mod runner;
mod stats;
mod sweep;

pub use report::{read_results, render_summary, report, write_results_csv, RESULTS_COLUMNS};
pub use runner::{
    crossval_run, fit_chain, holdout_run, longitudinal_run, FittedChain, FittedStage, StageOutcome,
};
pub use stats::{kendall_tau_b, wilcoxon_signed_rank_greater};
pub use sweep::{records_from_outcomes, sweep, RunRecord};

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array1;
use rand::seq::SliceRandom;

use crate::engine::TrainConfig;
use crate::error::{Error, Result};
use crate::funnelgen::FunnelDataset;
use crate::rng::stream;

/// Confusion counts and the derived positive-class scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSet {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
}

impl MetricSet {
    /// Zero-denominator conventions: precision is 0 when nothing was
    /// predicted positive, recall is 0 when there are no positive labels,
    /// f1 is 0 when precision + recall is 0.
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let precision = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        MetricSet {
            precision,
            recall,
            f1,
            true_positives: tp,
            false_positives: fp,
            true_negatives: tn,
            false_negatives: fn_,
        }
    }

    pub fn sample_count(&self) -> usize {
        self.true_positives + self.false_positives + self.true_negatives + self.false_negatives
    }
}

/// Positive-class precision/recall/F1 from binary decisions and labels.
pub fn f1_positive(decisions: &Array1<f64>, labels: &Array1<f64>) -> Result<MetricSet> {
    if decisions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} decisions vs {} labels",
            decisions.len(),
            labels.len()
        )));
    }
    if decisions.is_empty() {
        return Err(Error::Shape("empty decision vector".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&d, &y) in decisions.iter().zip(labels.iter()) {
        if d != 0.0 && d != 1.0 || y != 0.0 && y != 1.0 {
            return Err(Error::Shape("decisions and labels must be 0 or 1".into()));
        }
        match (d == 1.0, y == 1.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(MetricSet::from_counts(tp, fp, tn, fn_))
}

/// The trainable model variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Variant {
    /// Independent per-stage network, no regularization.
    Nn,
    /// Independent per-stage network with dropout 0.5.
    NnDo,
    /// Masked weight transfer between stages.
    Msgtl,
    /// Transfer plus dropout 0.5.
    MsgtlR,
    /// Transfer plus the gradient-reversal domain head.
    MsgtlDa,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Nn,
        Variant::NnDo,
        Variant::Msgtl,
        Variant::MsgtlR,
        Variant::MsgtlDa,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Nn => "nn",
            Variant::NnDo => "nn-do",
            Variant::Msgtl => "msgtl",
            Variant::MsgtlR => "msgtl-r",
            Variant::MsgtlDa => "msgtl-da",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "nn" => Ok(Variant::Nn),
            "nn-do" => Ok(Variant::NnDo),
            "msgtl" => Ok(Variant::Msgtl),
            "msgtl-r" => Ok(Variant::MsgtlR),
            "msgtl-da" => Ok(Variant::MsgtlDa),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }

    /// Whether weights flow between stages.
    pub fn transfers(&self) -> bool {
        matches!(self, Variant::Msgtl | Variant::MsgtlR | Variant::MsgtlDa)
    }

    /// Materializes the variant's switches on top of a base configuration.
    pub fn configure(&self, base: &TrainConfig) -> TrainConfig {
        let mut config = base.clone();
        match self {
            Variant::Nn => {
                config.dropout_p = 0.0;
                config.da_lambda = 0.0;
            }
            Variant::NnDo => {
                config.dropout_p = 0.5;
                config.da_lambda = 0.0;
            }
            Variant::Msgtl => {
                config.dropout_p = 0.0;
                config.da_lambda = 0.0;
            }
            Variant::MsgtlR => {
                config.dropout_p = 0.5;
                config.da_lambda = 0.0;
            }
            Variant::MsgtlDa => {
                config.dropout_p = 0.0;
                if config.da_lambda == 0.0 {
                    config.da_lambda = 0.1;
                }
            }
        }
        config
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Validation protocol selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    CrossVal,
    Longitudinal,
}

impl Protocol {
    pub fn as_str(&self) -> &'static str {
        match self {
            Protocol::CrossVal => "crossval",
            Protocol::Longitudinal => "longitudinal",
        }
    }
}

/// One (rho, omega, gamma) grid point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub rho: f64,
    pub omega: usize,
    pub gamma: usize,
}

/// A full experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub protocol: Protocol,
    pub folds: usize,
    pub variant: Variant,
    pub grid: Vec<GridPoint>,
    pub seeds: Vec<u64>,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config("folds must be >= 2".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        Ok(())
    }
}

/// Applicant-level fold assignment, propagated to every stage by id.
#[derive(Debug, Clone)]
pub struct FoldSplit {
    pub fold: usize,
    pub train_ids: BTreeSet<u64>,
    pub test_ids: BTreeSet<u64>,
}

impl FoldSplit {
    /// Per-stage (train, test) row indices induced by the id assignment.
    pub fn stage_indices(
        &self,
        dataset: &FunnelDataset,
        stage: usize,
    ) -> Result<(Vec<usize>, Vec<usize>)> {
        let ids = dataset.ids(stage)?;
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (row, id) in ids.iter().enumerate() {
            if self.test_ids.contains(id) {
                test.push(row);
            } else if self.train_ids.contains(id) {
                train.push(row);
            }
        }
        Ok((train, test))
    }
}

/// Splits applicants into `k` folds, stratified by final-stage outcome where
/// possible (final-stage winners, final-stage rejects, earlier dropouts each
/// spread evenly across folds).
pub fn kfold_split(dataset: &FunnelDataset, k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::Config("k must be >= 2".into()));
    }
    for q in 0..dataset.stage_count() {
        let rows = dataset.stage(q)?.rows();
        if rows < k {
            return Err(Error::Eval(format!(
                "stage {q} ('{}') has {rows} samples, fewer than k = {k}",
                dataset.stage(q)?.name
            )));
        }
    }
    let last = dataset.stage_count() - 1;
    let final_labels: BTreeMap<u64, f64> = dataset
        .ids(last)?
        .iter()
        .zip(dataset.labels(last)?.iter())
        .map(|(&id, &y)| (id, y))
        .collect();

    // Strata: final-stage winners / final-stage rejects / dropped earlier.
    let mut strata: [Vec<u64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for &id in dataset.ids(0)? {
        match final_labels.get(&id) {
            Some(&1.0) => strata[0].push(id),
            Some(_) => strata[1].push(id),
            None => strata[2].push(id),
        }
    }

    let mut rng = stream(seed, 0x5EED);
    let mut fold_of: BTreeMap<u64, usize> = BTreeMap::new();
    for stratum in &mut strata {
        stratum.shuffle(&mut rng);
        for (i, &id) in stratum.iter().enumerate() {
            fold_of.insert(id, i % k);
        }
    }

    let all_ids: BTreeSet<u64> = dataset.ids(0)?.iter().copied().collect();
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let test_ids: BTreeSet<u64> = fold_of
            .iter()
            .filter(|(_, &fold)| fold == f)
            .map(|(&id, _)| id)
            .collect();
        let train_ids: BTreeSet<u64> = all_ids.difference(&test_ids).copied().collect();
        folds.push(FoldSplit {
            fold: f,
            train_ids,
            test_ids,
        });
    }
    Ok(folds)
}
