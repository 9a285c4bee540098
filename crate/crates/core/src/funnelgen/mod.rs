//! Synthetic dual-funnel datasets and ingestion of stage-aligned CSV data.
//!
//! A funnel dataset holds one feature matrix and binary label vector per
//! stage. Rows shrink stage over stage (each stage's applicants are a subset
//! of the previous stage's), columns grow in prefix order (a stage's matrix
//! is the previous stage's columns followed by the features newly collected
//! at that stage), and a label of 1 means the applicant advanced past the
//! stage.

mod generate;
mod ingest;
mod prep;

pub use generate::{generate, generate_cohort};
pub use ingest::{load_stage_csv, write_csv_dir, RawTable};
pub use prep::{prepare_features, ColumnKind, FeaturePrep, Schema, Standardizer};

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Early self-service stages vs later human-evaluated stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Conversion,
    Evaluation,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Conversion => "conversion",
            Phase::Evaluation => "evaluation",
        }
    }

    pub fn parse(s: &str) -> Result<Phase> {
        match s {
            "conversion" => Ok(Phase::Conversion),
            "evaluation" => Ok(Phase::Evaluation),
            other => Err(Error::Config(format!("unknown phase '{other}'"))),
        }
    }
}

/// One stage of a funnel configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSpec {
    pub name: String,
    /// Number of feature columns newly collected at this stage.
    pub new_features: usize,
    /// Fraction of this stage's participants who advance, in (0, 1].
    pub survival_rate: f64,
    /// How strongly the new features reflect the latent quality, in [0, 1].
    pub informativeness: f64,
    pub phase: Phase,
}

impl StageSpec {
    pub fn new(
        name: &str,
        new_features: usize,
        survival_rate: f64,
        informativeness: f64,
        phase: Phase,
    ) -> Self {
        StageSpec {
            name: name.to_string(),
            new_features,
            survival_rate,
            informativeness,
            phase,
        }
    }
}

/// Configuration of the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct FunnelConfig {
    pub stages: Vec<StageSpec>,
    /// Applicants entering the first stage; at least 100.
    pub initial_population: usize,
    /// Cohort-over-cohort shift of feature means (0 disables).
    pub drift: f64,
    /// Scale of the non-informative feature component and of the per-stage
    /// decision noise.
    pub noise: f64,
    pub seed: u64,
}

impl FunnelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages.len() < 2 {
            return Err(Error::Config("funnel needs at least 2 stages".into()));
        }
        if self.initial_population < 100 {
            return Err(Error::Config(format!(
                "initial population must be >= 100, got {}",
                self.initial_population
            )));
        }
        if !(self.drift >= 0.0 && self.drift.is_finite()) {
            return Err(Error::Config(
                "drift must be a finite non-negative real".into(),
            ));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("noise must be a finite positive real".into()));
        }
        let mut names = BTreeSet::new();
        for spec in &self.stages {
            if spec.name.is_empty() {
                return Err(Error::Config("stage names must be non-empty".into()));
            }
            if !names.insert(spec.name.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate stage name '{}'",
                    spec.name
                )));
            }
            if spec.new_features == 0 {
                return Err(Error::Config(format!(
                    "stage '{}' must collect at least one new feature",
                    spec.name
                )));
            }
            if !(spec.survival_rate > 0.0 && spec.survival_rate <= 1.0) {
                return Err(Error::Config(format!(
                    "stage '{}' survival rate must be in (0, 1], got {}",
                    spec.name, spec.survival_rate
                )));
            }
            if !(0.0..=1.0).contains(&spec.informativeness) {
                return Err(Error::Config(format!(
                    "stage '{}' informativeness must be in [0, 1], got {}",
                    spec.name, spec.informativeness
                )));
            }
        }
        Ok(())
    }

    /// The 12-stage selection-process preset: a long self-service conversion
    /// phase with wide text-embedding blocks at the star/video stages,
    /// followed by a harshly filtering evaluation phase that carries roughly
    /// 25 of 10,000 applicants into the final stage.
    pub fn paper_like(seed: u64) -> Self {
        use Phase::{Conversion, Evaluation};
        FunnelConfig {
            stages: vec![
                StageSpec::new("demographics", 6, 0.82, 0.20, Conversion),
                StageSpec::new("payment", 3, 0.70, 0.20, Conversion),
                StageSpec::new("education", 10, 0.82, 0.20, Conversion),
                StageSpec::new("profile_tests", 25, 0.65, 0.20, Conversion),
                StageSpec::new("star", 300, 0.65, 0.15, Conversion),
                StageSpec::new("logic_tests", 15, 0.82, 0.20, Conversion),
                StageSpec::new("video_submission", 300, 0.67, 0.15, Conversion),
                StageSpec::new("video_evaluation", 8, 0.45, 0.20, Evaluation),
                StageSpec::new("interview", 10, 0.40, 0.20, Evaluation),
                StageSpec::new("panel", 6, 0.35, 0.18, Evaluation),
                StageSpec::new("committee", 4, 0.35, 0.18, Evaluation),
                StageSpec::new("final", 4, 0.40, 0.18, Evaluation),
            ],
            initial_population: 10_000,
            drift: 0.3,
            noise: 1.0,
            seed,
        }
    }

    /// A small funnel for fast experiments and tests: three conversion
    /// stages, two evaluation stages.
    pub fn compact(seed: u64) -> Self {
        use Phase::{Conversion, Evaluation};
        FunnelConfig {
            stages: vec![
                StageSpec::new("application", 6, 0.70, 0.55, Conversion),
                StageSpec::new("essay", 12, 0.55, 0.45, Conversion),
                StageSpec::new("assessment", 20, 0.50, 0.40, Conversion),
                StageSpec::new("interview", 6, 0.35, 0.35, Evaluation),
                StageSpec::new("final", 4, 0.40, 0.35, Evaluation),
            ],
            initial_population: 2_000,
            drift: 0.3,
            noise: 1.0,
            seed,
        }
    }

    /// Total feature count after the last stage.
    pub fn total_features(&self) -> usize {
        self.stages.iter().map(|s| s.new_features).sum()
    }
}

/// One stage's data: surviving applicants, cumulative features, and the
/// advance/stop label.
#[derive(Debug, Clone, PartialEq)]
pub struct StageData {
    pub name: String,
    pub phase: Phase,
    pub ids: Vec<u64>,
    /// Rows follow `ids`; columns are cumulative in prefix order.
    pub features: Array2<f64>,
    /// 1 = advanced past this stage.
    pub labels: Array1<f64>,
    pub column_names: Vec<String>,
    /// Marks columns that belong to a one-hot indicator block.
    pub indicator_columns: Vec<bool>,
}

impl StageData {
    pub fn rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn cols(&self) -> usize {
        self.features.ncols()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1.0).count()
    }
}

/// Stage-aligned dataset for one cohort.
///
/// Feature accesses are counted per stage so protocols can prove they
/// touched a cohort exactly as often as claimed.
#[derive(Debug)]
pub struct FunnelDataset {
    stages: Vec<StageData>,
    pub cohort: u32,
    access_counts: Vec<AtomicUsize>,
}

impl Clone for FunnelDataset {
    fn clone(&self) -> Self {
        FunnelDataset::new(self.stages.clone(), self.cohort)
    }
}

impl PartialEq for FunnelDataset {
    fn eq(&self, other: &Self) -> bool {
        self.stages == other.stages && self.cohort == other.cohort
    }
}

impl FunnelDataset {
    pub fn new(stages: Vec<StageData>, cohort: u32) -> Self {
        let access_counts = (0..stages.len()).map(|_| AtomicUsize::new(0)).collect();
        FunnelDataset {
            stages,
            cohort,
            access_counts,
        }
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn stage(&self, q: usize) -> Result<&StageData> {
        self.stages.get(q).ok_or(Error::UnknownStage(q))
    }

    /// Feature matrix of stage `q`; counted in the access log.
    pub fn features(&self, q: usize) -> Result<&Array2<f64>> {
        let stage = self.stage(q)?;
        self.access_counts[q].fetch_add(1, Ordering::Relaxed);
        Ok(&stage.features)
    }

    pub fn labels(&self, q: usize) -> Result<&Array1<f64>> {
        Ok(&self.stage(q)?.labels)
    }

    pub fn ids(&self, q: usize) -> Result<&[u64]> {
        Ok(&self.stage(q)?.ids)
    }

    pub fn access_count(&self, q: usize) -> usize {
        self.access_counts[q].load(Ordering::Relaxed)
    }

    pub fn reset_access_counts(&self) {
        for c in &self.access_counts {
            c.store(0, Ordering::Relaxed);
        }
    }

    pub fn stages(&self) -> &[StageData] {
        &self.stages
    }

    /// Keeps only rows whose applicant id is in `keep`, at every stage.
    pub fn restrict_to_ids(&self, keep: &BTreeSet<u64>) -> FunnelDataset {
        let stages = self
            .stages
            .iter()
            .map(|s| {
                let rows: Vec<usize> = s
                    .ids
                    .iter()
                    .enumerate()
                    .filter(|(_, id)| keep.contains(id))
                    .map(|(i, _)| i)
                    .collect();
                StageData {
                    name: s.name.clone(),
                    phase: s.phase,
                    ids: rows.iter().map(|&i| s.ids[i]).collect(),
                    features: s.features.select(ndarray::Axis(0), &rows),
                    labels: s.labels.select(ndarray::Axis(0), &rows),
                    column_names: s.column_names.clone(),
                    indicator_columns: s.indicator_columns.clone(),
                }
            })
            .collect();
        FunnelDataset::new(stages, self.cohort)
    }

    /// Checks the subset and prefix invariants, reporting the first violation
    /// with its row/column coordinates.
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Dataset("dataset has no stages".into()));
        }
        for (q, stage) in self.stages.iter().enumerate() {
            let m = stage.rows();
            if stage.ids.len() != m || stage.labels.len() != m {
                return Err(Error::Dataset(format!(
                    "stage {q} ('{}'): {} ids / {} labels for {m} rows",
                    stage.name,
                    stage.ids.len(),
                    stage.labels.len()
                )));
            }
            if stage.column_names.len() != stage.cols()
                || stage.indicator_columns.len() != stage.cols()
            {
                return Err(Error::Dataset(format!(
                    "stage {q} ('{}'): column metadata does not match {} columns",
                    stage.name,
                    stage.cols()
                )));
            }
            let mut seen = BTreeSet::new();
            for &id in &stage.ids {
                if !seen.insert(id) {
                    return Err(Error::Dataset(format!(
                        "stage {q} ('{}'): duplicate applicant id {id}",
                        stage.name
                    )));
                }
            }
            if stage.labels.iter().any(|&y| y != 0.0 && y != 1.0) {
                return Err(Error::Dataset(format!(
                    "stage {q} ('{}'): labels must be 0 or 1",
                    stage.name
                )));
            }
            if stage.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!(
                    "stage {q} ('{}'): non-finite feature value",
                    stage.name
                )));
            }
        }
        for q in 1..self.stages.len() {
            let prev = &self.stages[q - 1];
            let cur = &self.stages[q];
            if cur.cols() < prev.cols() {
                return Err(Error::Dataset(format!(
                    "stage {q} ('{}') has fewer columns than stage {} ('{}')",
                    cur.name,
                    q - 1,
                    prev.name
                )));
            }
            if cur.column_names[..prev.cols()] != prev.column_names[..] {
                let col = cur
                    .column_names
                    .iter()
                    .zip(prev.column_names.iter())
                    .position(|(a, b)| a != b)
                    .unwrap_or(0);
                return Err(Error::Dataset(format!(
                    "stage {q} ('{}') column {col} is named '{}', stage {} calls it '{}'",
                    cur.name,
                    cur.column_names[col],
                    q - 1,
                    prev.column_names[col]
                )));
            }
            let prev_index: std::collections::HashMap<u64, usize> = prev
                .ids
                .iter()
                .enumerate()
                .map(|(i, &id)| (id, i))
                .collect();
            for (row, &id) in cur.ids.iter().enumerate() {
                let Some(&prow) = prev_index.get(&id) else {
                    return Err(Error::Dataset(format!(
                        "stage {q} ('{}') row {row}: applicant id {id} is absent from stage {}",
                        cur.name,
                        q - 1
                    )));
                };
                for col in 0..prev.cols() {
                    let a = cur.features[(row, col)];
                    let b = prev.features[(prow, col)];
                    if a != b {
                        return Err(Error::Dataset(format!(
                            "stage {q} ('{}') row {row} col {col} (id {id}): value {a} \
                             differs from stage {} value {b}",
                            cur.name,
                            q - 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}
