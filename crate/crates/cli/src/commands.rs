//! Command implementations.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use msgtl_core::engine::{OptimizerKind, TrainConfig};
use msgtl_core::evalharness::{
    crossval_run, longitudinal_run, read_results, records_from_outcomes, report as render_report,
    sweep as run_sweep, ExperimentPlan, GridPoint, Protocol, RunRecord, Variant,
};
use msgtl_core::funnelgen::{
    generate_cohort, load_stage_csv, write_csv_dir, FunnelConfig, FunnelDataset, Phase, StageSpec,
};
use msgtl_core::pipeline::{
    predict_scores, save_registry, train_msgtl, train_stage_tagged, ModelRegistry, RegistryEntry,
};
use msgtl_core::rng;
use msgtl_core::topology::width_schedule;
use msgtl_core::transfer::init_network;

use crate::manifest::{manifest_path_for, RunManifest};
use crate::resolve::{parse_list, FileLayer, Resolver};
use crate::{EvalArgs, GenDataArgs, ReportArgs, SweepArgs, TrainArgs};

fn file_layer(
    config: &Option<PathBuf>,
    from_manifest: &Option<PathBuf>,
    command: &str,
) -> Result<(FileLayer, Option<RunManifest>)> {
    match (from_manifest, config) {
        (Some(path), _) => {
            let manifest = RunManifest::load(path)?;
            manifest.expect_command(command)?;
            Ok((FileLayer::from_manifest(&manifest), Some(manifest)))
        }
        (None, Some(path)) => Ok((FileLayer::from_config_file(path)?, None)),
        (None, None) => Ok((FileLayer::default(), None)),
    }
}

fn parse_variant(raw: &str) -> Result<Variant> {
    Variant::parse(raw).map_err(|e| anyhow::anyhow!("{e}"))
}

fn parse_optimizer(raw: &str) -> Result<OptimizerKind> {
    match raw {
        "adam" => Ok(OptimizerKind::Adam),
        "sgd" => Ok(OptimizerKind::Sgd),
        other => bail!("unknown optimizer '{other}' (expected adam or sgd)"),
    }
}

pub fn gen_data(args: GenDataArgs) -> Result<ExitCode> {
    let (layer, _) = file_layer(&args.common.config, &args.common.from_manifest, "gen-data")?;
    let mut r = Resolver::new(layer);
    let seed = r.seed(args.common.seed, 0)?;
    let preset = r.optional::<String>("preset", args.preset)?;
    let out = r.path("out", args.out)?;
    let cohort = r.value("cohort", args.cohort, 0u32)?;

    let mut config = match preset.as_deref() {
        Some("paper-like") => FunnelConfig::paper_like(seed),
        Some("compact") => FunnelConfig::compact(seed),
        Some(other) => bail!("unknown preset '{other}' (expected paper-like or compact)"),
        None => {
            let stages = r.value("stages", args.stages, 3usize)?;
            if stages < 2 {
                bail!("--stages must be at least 2");
            }
            let specs = (0..stages)
                .map(|q| {
                    let phase = if q * 3 >= stages * 2 {
                        Phase::Evaluation
                    } else {
                        Phase::Conversion
                    };
                    let rate = if phase == Phase::Evaluation {
                        0.45
                    } else {
                        0.65
                    };
                    StageSpec::new(&format!("stage_{q:02}"), 5, rate, 0.4, phase)
                })
                .collect();
            FunnelConfig {
                stages: specs,
                initial_population: 1000,
                drift: 0.0,
                noise: 1.0,
                seed,
            }
        }
    };
    config.initial_population = r.value("m0", args.m0, config.initial_population)?;
    config.drift = r.value("drift", args.drift, config.drift)?;
    config.noise = r.value("noise", args.noise, config.noise)?;
    config.seed = seed;

    let manifest_path = args
        .common
        .manifest
        .clone()
        .unwrap_or_else(|| manifest_path_for(&out, true));
    let mut run = RunManifest::start("gen-data", seed, r.resolved.clone());
    run.write(&manifest_path)?;

    let dataset = generate_cohort(&config, cohort)?;
    let written = write_csv_dir(&dataset, &out)?;

    println!("funnel (cohort {cohort}, seed {seed}):");
    println!(
        "{:<4} {:<18} {:>8} {:>6} {:>10}",
        "q", "stage", "m", "n", "phase"
    );
    for (q, stage) in dataset.stages().iter().enumerate() {
        println!(
            "{:<4} {:<18} {:>8} {:>6} {:>10}",
            q,
            stage.name,
            stage.rows(),
            stage.cols(),
            stage.phase.as_str()
        );
    }
    run.finalize(&manifest_path, written)?;
    println!("wrote dataset to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

struct ModelFlags {
    variant: Variant,
    config: TrainConfig,
    start: usize,
}

#[allow(clippy::too_many_arguments)]
fn resolve_model_flags(
    r: &mut Resolver,
    seed: u64,
    variant: Option<String>,
    rho: Option<f64>,
    omega: Option<usize>,
    gamma: Option<usize>,
    eta0: Option<f64>,
    decay_omega: Option<f64>,
    decay_phi: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    dropout_p: Option<f64>,
    da_lambda: Option<f64>,
    shared_mask: Option<bool>,
    prev_score_feature: Option<bool>,
    optimizer: Option<String>,
    start: Option<usize>,
) -> Result<ModelFlags> {
    let defaults = TrainConfig::default();
    let variant = parse_variant(&r.value("variant", variant, "msgtl".to_string())?)?;
    let config = TrainConfig {
        rho: r.value("rho", rho, defaults.rho)?,
        omega: r.value("omega", omega, defaults.omega)?,
        gamma: r.value("gamma", gamma, defaults.gamma)?,
        eta0: r.value("eta0", eta0, defaults.eta0)?,
        decay_omega: r.value("decay_omega", decay_omega, defaults.decay_omega)?,
        decay_phi: r.value("decay_phi", decay_phi, defaults.decay_phi)?,
        epochs: r.value("epochs", epochs, defaults.epochs)?,
        batch_size: r.value("batch_size", batch_size, defaults.batch_size)?,
        dropout_p: r.value("dropout_p", dropout_p, defaults.dropout_p)?,
        da_lambda: r.value("da_lambda", da_lambda, defaults.da_lambda)?,
        shared_mask: r.value("shared_mask", shared_mask, defaults.shared_mask)?,
        prev_score_feature: r.value(
            "prev_score_feature",
            prev_score_feature,
            defaults.prev_score_feature,
        )?,
        seed,
        optimizer: parse_optimizer(&r.value("optimizer", optimizer, "adam".to_string())?)?,
    };
    let start = r.value("start", start, 0usize)?;
    let config = variant.configure(&config);
    Ok(ModelFlags {
        variant,
        config,
        start,
    })
}

/// Independent per-stage training for the no-transfer variants.
fn train_independent(
    dataset: &FunnelDataset,
    config: &TrainConfig,
    start: usize,
) -> Result<ModelRegistry> {
    let mut registry = ModelRegistry::new(start);
    for q in start..dataset.stage_count() {
        let features = dataset.features(q)?;
        let labels = dataset.labels(q)?;
        let topology = width_schedule(features.ncols(), config.gamma, config.omega)?;
        let net = init_network(&topology, &mut rng::stream(config.seed, 0x1000 + q as u64))?;
        let (network, loss_trace) =
            train_stage_tagged(features, labels, net, config, q as u64, None)?;
        registry.entries.push(RegistryEntry {
            network,
            config: config.clone(),
            report: None,
            loss_trace,
        });
    }
    Ok(registry)
}

pub fn train(args: TrainArgs) -> Result<ExitCode> {
    let (layer, _) = file_layer(&args.common.config, &args.common.from_manifest, "train")?;
    let mut r = Resolver::new(layer);
    let seed = r.seed(args.common.seed, 0)?;
    let data_path = r.path("data", args.data)?;
    let out = r.path("out", args.out)?;
    let flags = resolve_model_flags(
        &mut r,
        seed,
        args.variant,
        args.rho,
        args.omega,
        args.gamma,
        args.eta0,
        args.decay_omega,
        args.decay_phi,
        args.epochs,
        args.batch_size,
        args.dropout_p,
        args.da_lambda,
        args.shared_mask,
        args.prev_score_feature,
        args.optimizer,
        args.start,
    )?;

    let manifest_path = args
        .common
        .manifest
        .clone()
        .unwrap_or_else(|| manifest_path_for(&out, false));
    let mut run = RunManifest::start("train", seed, r.resolved.clone());
    run.write(&manifest_path)?;

    let dataset = load_stage_csv(&data_path)?;
    let registry = if flags.variant.transfers() {
        train_msgtl(&dataset, &flags.config, flags.start)?
    } else {
        train_independent(&dataset, &flags.config, flags.start)?
    };

    println!("trained {} ({} stages):", flags.variant, registry.len());
    for (offset, entry) in registry.entries.iter().enumerate() {
        let q = registry.start_stage + offset;
        let stage = dataset.stage(q)?;
        let first_loss = entry.loss_trace.first().copied().unwrap_or(f64::NAN);
        let last_loss = entry.loss_trace.last().copied().unwrap_or(f64::NAN);
        // Training F1 at threshold 0.5 when the network consumes the raw
        // stage features (score-augmented inputs are reported by loss only).
        let f1 = if entry.network.input_width() == stage.cols() {
            let scores = predict_scores(&entry.network, &stage.features)?;
            let decisions = scores.mapv(|s| if s >= 0.5 { 1.0 } else { 0.0 });
            msgtl_core::evalharness::f1_positive(&decisions, &stage.labels)
                .map(|m| format!("{:.3}", m.f1))
                .unwrap_or_else(|_| "n/a".to_string())
        } else {
            "n/a".to_string()
        };
        let transferred = entry
            .report
            .as_ref()
            .map(|rep| rep.transferred_params)
            .unwrap_or(0);
        println!(
            "stage {q:2} {:<18} loss {first_loss:.4} -> {last_loss:.4} ({} epochs)  \
             train-F1 {f1}  transferred {transferred}",
            stage.name,
            entry.loss_trace.len()
        );
    }
    save_registry(&registry, &out)?;
    run.finalize(&manifest_path, vec![out.clone()])?;
    println!("wrote registry to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn parse_protocol(raw: &str) -> Result<Protocol> {
    match raw {
        "crossval" => Ok(Protocol::CrossVal),
        "longitudinal" => Ok(Protocol::Longitudinal),
        other => bail!("unknown protocol '{other}' (expected crossval or longitudinal)"),
    }
}

/// Applies recorded per-row timings when re-running from a manifest.
fn replay_timings(records: &mut [RunRecord], run: &Option<RunManifest>) -> Result<()> {
    if let Some(manifest) = run {
        if !manifest.runtime_ms.is_empty() {
            if manifest.runtime_ms.len() != records.len() {
                bail!(
                    "manifest records {} timings for {} result rows",
                    manifest.runtime_ms.len(),
                    records.len()
                );
            }
            for (record, &ms) in records.iter_mut().zip(manifest.runtime_ms.iter()) {
                record.runtime_ms = ms;
            }
        }
    }
    Ok(())
}

fn check_assert(records: &[RunRecord], expr: &str) -> Result<bool> {
    let (metric, threshold) = expr
        .split_once(">=")
        .with_context(|| format!("bad --assert expression '{expr}' (want metric>=value)"))?;
    let threshold: f64 = threshold
        .trim()
        .parse()
        .with_context(|| format!("bad --assert threshold in '{expr}'"))?;
    let f1s: Vec<f64> = match metric.trim() {
        "mean-f1" => records
            .iter()
            .filter_map(|r| r.metrics.map(|m| m.f1))
            .collect(),
        "final-f1" => {
            let last = records.iter().map(|r| r.stage_index).max().unwrap_or(0);
            records
                .iter()
                .filter(|r| r.stage_index == last)
                .filter_map(|r| r.metrics.map(|m| m.f1))
                .collect()
        }
        other => bail!("unknown --assert metric '{other}' (expected mean-f1 or final-f1)"),
    };
    if f1s.is_empty() {
        bail!("--assert has no scored rows to check");
    }
    let value = f1s.iter().sum::<f64>() / f1s.len() as f64;
    let ok = value >= threshold;
    println!(
        "assert {}>={}: observed {:.4} -> {}",
        metric.trim(),
        threshold,
        value,
        if ok { "pass" } else { "fail" }
    );
    Ok(ok)
}

pub fn eval(args: EvalArgs) -> Result<ExitCode> {
    let (layer, from) = file_layer(&args.common.config, &args.common.from_manifest, "eval")?;
    let mut r = Resolver::new(layer);
    let seed = r.seed(args.common.seed, 0)?;
    let data_path = r.path("data", args.data)?;
    let out = r.path("out", args.out)?;
    let protocol = parse_protocol(&r.value("protocol", args.protocol, "crossval".to_string())?)?;
    let folds = r.value("folds", args.folds, 10usize)?;
    let validate_path = r.optional_path("validate_data", args.validate_data)?;
    let assert_expr = r.optional::<String>("assert", args.assert.clone())?;
    let flags = resolve_model_flags(
        &mut r,
        seed,
        args.variant,
        args.rho,
        args.omega,
        args.gamma,
        args.eta0,
        None,
        None,
        args.epochs,
        args.batch_size,
        None,
        None,
        None,
        None,
        None,
        None,
    )?;

    let manifest_path = args
        .common
        .manifest
        .clone()
        .unwrap_or_else(|| manifest_path_for(&out, false));
    let mut run = RunManifest::start("eval", seed, r.resolved.clone());
    run.write(&manifest_path)?;

    let dataset = load_stage_csv(&data_path)?;
    let point = GridPoint {
        rho: flags.config.rho,
        omega: flags.config.omega,
        gamma: flags.config.gamma,
    };
    let mut records = Vec::new();
    match protocol {
        Protocol::CrossVal => {
            let outcomes = crossval_run(&dataset, flags.variant, &flags.config, folds, seed)?;
            for (fold, stage_outcomes) in outcomes {
                records.extend(records_from_outcomes(
                    "crossval",
                    flags.variant,
                    point,
                    seed,
                    fold,
                    &stage_outcomes,
                ));
            }
        }
        Protocol::Longitudinal => {
            let validate_path =
                validate_path.context("longitudinal protocol needs --validate-data")?;
            let validate = load_stage_csv(&validate_path)?;
            let stage_outcomes =
                longitudinal_run(&dataset, &validate, flags.variant, &flags.config)?;
            records.extend(records_from_outcomes(
                "longitudinal",
                flags.variant,
                point,
                seed,
                0,
                &stage_outcomes,
            ));
        }
    }
    replay_timings(&mut records, &from)?;
    run.runtime_ms = records.iter().map(|rec| rec.runtime_ms).collect();
    msgtl_core::evalharness::write_results_csv(&records, &out)?;
    println!("wrote {} result rows to {}", records.len(), out.display());
    run.finalize(&manifest_path, vec![out.clone()])?;

    if let Some(expr) = assert_expr {
        if !check_assert(&records, &expr)? {
            return Ok(ExitCode::from(2));
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn sweep(args: SweepArgs) -> Result<ExitCode> {
    let (layer, from) = file_layer(&args.common.config, &args.common.from_manifest, "sweep")?;
    let mut r = Resolver::new(layer);
    let seed = r.seed(args.common.seed, 0)?;
    let data_path = r.path("data", args.data)?;
    let out = r.path("out", args.out)?;
    let protocol = parse_protocol(&r.value("protocol", args.protocol, "crossval".to_string())?)?;
    let folds = r.value("folds", args.folds, 10usize)?;
    let validate_path = r.optional_path("validate_data", args.validate_data)?;
    let variant = parse_variant(&r.value("variant", args.variant, "msgtl".to_string())?)?;
    let rhos: Vec<f64> = parse_list(&r.value("rho", args.rho, "0.3".to_string())?, "rho")?;
    let omegas: Vec<usize> = parse_list(&r.value("omega", args.omega, "6".to_string())?, "omega")?;
    let gammas: Vec<usize> = parse_list(&r.value("gamma", args.gamma, "2".to_string())?, "gamma")?;
    let seed_count = r.value("seeds", args.seeds, 1usize)?;
    let defaults = TrainConfig::default();
    let base_config = TrainConfig {
        eta0: r.value("eta0", args.eta0, defaults.eta0)?,
        epochs: r.value("epochs", args.epochs, defaults.epochs)?,
        batch_size: r.value("batch_size", args.batch_size, defaults.batch_size)?,
        seed,
        ..defaults
    };
    let base_config = variant.configure(&base_config);

    let manifest_path = args
        .common
        .manifest
        .clone()
        .unwrap_or_else(|| manifest_path_for(&out, false));
    let mut run = RunManifest::start("sweep", seed, r.resolved.clone());
    run.write(&manifest_path)?;

    let dataset = load_stage_csv(&data_path)?;
    let validate = match &validate_path {
        Some(path) => Some(load_stage_csv(path)?),
        None => None,
    };
    let mut grid = Vec::new();
    for &rho in &rhos {
        for &omega in &omegas {
            for &gamma in &gammas {
                grid.push(GridPoint { rho, omega, gamma });
            }
        }
    }
    let plan = ExperimentPlan {
        protocol,
        folds,
        variant,
        grid,
        seeds: (0..seed_count as u64)
            .map(|i| seed.wrapping_add(i))
            .collect(),
    };
    let mut records = run_sweep(&dataset, validate.as_ref(), &plan, &base_config)?;
    replay_timings(&mut records, &from)?;
    run.runtime_ms = records.iter().map(|rec| rec.runtime_ms).collect();
    msgtl_core::evalharness::write_results_csv(&records, &out)?;
    println!("wrote {} result rows to {}", records.len(), out.display());
    run.finalize(&manifest_path, vec![out.clone()])?;
    Ok(ExitCode::SUCCESS)
}

pub fn report(args: ReportArgs) -> Result<ExitCode> {
    let (layer, _) = file_layer(&args.common.config, &args.common.from_manifest, "report")?;
    let mut r = Resolver::new(layer);
    let seed = r.seed(args.common.seed, 0)?;
    let input = r.path("in", args.input)?;
    let out = r.path("out", args.out)?;
    let data_path = r.optional_path("data", args.data)?;

    let manifest_path = args
        .common
        .manifest
        .clone()
        .unwrap_or_else(|| manifest_path_for(&out, true));
    let mut run = RunManifest::start("report", seed, r.resolved.clone());
    run.write(&manifest_path)?;

    let records = read_results(&input)?;
    let phases: Option<BTreeMap<String, Phase>> = match &data_path {
        Some(path) => {
            let dataset = load_stage_csv(path)?;
            Some(
                dataset
                    .stages()
                    .iter()
                    .map(|s| (s.name.clone(), s.phase))
                    .collect(),
            )
        }
        None => None,
    };
    let written = render_report(&records, phases.as_ref(), &out)?;
    for path in &written {
        println!("wrote {}", path.display());
    }
    run.finalize(&manifest_path, written)?;
    Ok(ExitCode::SUCCESS)
}
