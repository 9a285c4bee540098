//! Full-factorial hyperparameter sweeps.

use rayon::prelude::*;

use super::runner::{crossval_run, longitudinal_run, StageOutcome};
use super::{ExperimentPlan, GridPoint, MetricSet, Protocol, Variant};
use crate::engine::TrainConfig;
use crate::error::{Error, Result};
use crate::funnelgen::FunnelDataset;

/// One row of a results table: a single (variant, grid point, seed, fold,
/// stage) cell. `metrics` is `None` for a failed or empty run — the cell is
/// recorded, not dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub protocol: String,
    pub variant: Variant,
    pub stage_name: String,
    pub stage_index: usize,
    pub rho: f64,
    pub omega: usize,
    pub gamma: usize,
    pub seed: u64,
    pub fold: usize,
    pub metrics: Option<MetricSet>,
    pub n_train: usize,
    pub n_test: usize,
    pub runtime_ms: u64,
}

/// Converts per-stage outcomes of one run into records.
pub fn records_from_outcomes(
    protocol: &str,
    variant: Variant,
    point: GridPoint,
    seed: u64,
    fold: usize,
    outcomes: &[StageOutcome],
) -> Vec<RunRecord> {
    outcomes
        .iter()
        .map(|o| RunRecord {
            protocol: protocol.to_string(),
            variant,
            stage_name: o.stage_name.clone(),
            stage_index: o.stage_index,
            rho: point.rho,
            omega: point.omega,
            gamma: point.gamma,
            seed,
            fold,
            metrics: o.metrics,
            n_train: o.n_train,
            n_test: o.n_test,
            runtime_ms: o.runtime_ms,
        })
        .collect()
}

/// Placeholder records for a run that failed outright: one NA cell per
/// stage.
fn missing_records(
    protocol: &str,
    variant: Variant,
    point: GridPoint,
    seed: u64,
    dataset: &FunnelDataset,
) -> Vec<RunRecord> {
    dataset
        .stages()
        .iter()
        .enumerate()
        .map(|(q, stage)| RunRecord {
            protocol: protocol.to_string(),
            variant,
            stage_name: stage.name.clone(),
            stage_index: q,
            rho: point.rho,
            omega: point.omega,
            gamma: point.gamma,
            seed,
            fold: 0,
            metrics: None,
            n_train: 0,
            n_test: 0,
            runtime_ms: 0,
        })
        .collect()
}

/// Runs the full grid x seeds factorial of the plan.
///
/// Independent (grid point, seed) tasks run in parallel over immutable
/// dataset snapshots; records come back in a deterministic order regardless
/// of scheduling. Individual run failures become NA cells. The longitudinal
/// protocol requires `validate` to be the later cohort.
pub fn sweep(
    dataset: &FunnelDataset,
    validate: Option<&FunnelDataset>,
    plan: &ExperimentPlan,
    base_config: &TrainConfig,
) -> Result<Vec<RunRecord>> {
    plan.validate()?;
    if plan.protocol == Protocol::Longitudinal && validate.is_none() {
        return Err(Error::Config(
            "longitudinal sweeps need a validation cohort".into(),
        ));
    }
    let mut tasks: Vec<(GridPoint, u64)> = Vec::new();
    for &point in &plan.grid {
        for &seed in &plan.seeds {
            tasks.push((point, seed));
        }
    }
    let protocol = plan.protocol.as_str();
    let mut records: Vec<RunRecord> = tasks
        .par_iter()
        .flat_map(|&(point, seed)| {
            let config = TrainConfig {
                rho: point.rho,
                omega: point.omega,
                gamma: point.gamma,
                seed,
                ..base_config.clone()
            };
            let run = || -> Result<Vec<RunRecord>> {
                match plan.protocol {
                    Protocol::CrossVal => {
                        let folds = crossval_run(dataset, plan.variant, &config, plan.folds, seed)?;
                        let mut out = Vec::new();
                        for (fold, outcomes) in folds {
                            out.extend(records_from_outcomes(
                                protocol,
                                plan.variant,
                                point,
                                seed,
                                fold,
                                &outcomes,
                            ));
                        }
                        Ok(out)
                    }
                    Protocol::Longitudinal => {
                        let outcomes = longitudinal_run(
                            dataset,
                            validate.expect("checked above"),
                            plan.variant,
                            &config,
                        )?;
                        Ok(records_from_outcomes(
                            protocol,
                            plan.variant,
                            point,
                            seed,
                            0,
                            &outcomes,
                        ))
                    }
                }
            };
            run().unwrap_or_else(|_| missing_records(protocol, plan.variant, point, seed, dataset))
        })
        .collect();
    records.sort_by(|a, b| {
        a.variant
            .cmp(&b.variant)
            .then(a.rho.total_cmp(&b.rho))
            .then(a.omega.cmp(&b.omega))
            .then(a.gamma.cmp(&b.gamma))
            .then(a.seed.cmp(&b.seed))
            .then(a.fold.cmp(&b.fold))
            .then(a.stage_index.cmp(&b.stage_index))
    });
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funnelgen::{generate, FunnelConfig, Phase, StageSpec};

    fn funnel() -> FunnelDataset {
        generate(&FunnelConfig {
            stages: vec![
                StageSpec::new("a", 4, 0.6, 0.6, Phase::Conversion),
                StageSpec::new("b", 5, 0.5, 0.5, Phase::Conversion),
                StageSpec::new("c", 4, 0.5, 0.4, Phase::Evaluation),
            ],
            initial_population: 300,
            drift: 0.0,
            noise: 1.0,
            seed: 61,
        })
        .unwrap()
    }

    fn plan(folds: usize, rhos: &[f64], seeds: usize) -> ExperimentPlan {
        ExperimentPlan {
            protocol: Protocol::CrossVal,
            folds,
            variant: Variant::Msgtl,
            grid: rhos
                .iter()
                .map(|&rho| GridPoint {
                    rho,
                    omega: 6,
                    gamma: 2,
                })
                .collect(),
            seeds: (0..seeds as u64).collect(),
        }
    }

    #[test]
    fn sweep_cardinality_is_full_factorial() {
        let data = funnel();
        let config = TrainConfig {
            epochs: 4,
            batch_size: 64,
            ..TrainConfig::default()
        };
        // 3 rho values x 1 seed x 2 folds x 3 stages = 18 stage rows.
        let records = sweep(&data, None, &plan(2, &[0.0, 0.3, 1.0], 1), &config).unwrap();
        assert_eq!(records.len(), 18);
        // 9 stage rows per (variant x fold) slice of each rho.
        let rho_03: Vec<_> = records.iter().filter(|r| r.rho == 0.3).collect();
        assert_eq!(rho_03.len(), 6);
    }

    #[test]
    fn sweep_is_deterministic_despite_parallelism() {
        let data = funnel();
        let config = TrainConfig {
            epochs: 3,
            batch_size: 64,
            ..TrainConfig::default()
        };
        // Timing is wall-clock and may differ; everything else must not.
        let strip = |mut records: Vec<RunRecord>| {
            for r in &mut records {
                r.runtime_ms = 0;
            }
            records
        };
        let a = strip(sweep(&data, None, &plan(2, &[0.0, 1.0], 2), &config).unwrap());
        let b = strip(sweep(&data, None, &plan(2, &[0.0, 1.0], 2), &config).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn plan_validation() {
        let mut p = plan(2, &[0.3], 1);
        p.folds = 1;
        assert!(p.validate().is_err());
        let mut p = plan(2, &[0.3], 1);
        p.grid.clear();
        assert!(p.validate().is_err());
        let mut p = plan(2, &[0.3], 1);
        p.seeds.clear();
        assert!(p.validate().is_err());
    }
}
