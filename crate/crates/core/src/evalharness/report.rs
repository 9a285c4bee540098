//! Results tables, the per-stage summary, and plot data files.
//!
//! Everything written here is a deterministic, diffable text artifact:
//! `results.csv` holds one row per run-stage, `summary.md` the per-stage
//! mean +/- sd per variant (grouped into conversion and evaluation blocks
//! when phases are known), and `fig_*.csv` the line-plot data (stage curve,
//! rho curve, depth curve). Missing cells appear as explicit `NA`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use super::sweep::RunRecord;
use super::{MetricSet, Variant};
use crate::error::{Error, Result};
use crate::funnelgen::Phase;

pub const RESULTS_COLUMNS: [&str; 15] = [
    "protocol",
    "variant",
    "stage_name",
    "stage_index",
    "rho",
    "omega",
    "gamma",
    "seed",
    "fold",
    "precision",
    "recall",
    "f1",
    "n_train",
    "n_test",
    "runtime_ms",
];

/// Writes `results.csv`: one row per run-stage, NA for missing metrics.
pub fn write_results_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(RESULTS_COLUMNS)?;
    for r in records {
        let (precision, recall, f1) = match &r.metrics {
            Some(m) => (
                format!("{}", m.precision),
                format!("{}", m.recall),
                format!("{}", m.f1),
            ),
            None => ("NA".into(), "NA".into(), "NA".into()),
        };
        writer.write_record([
            r.protocol.clone(),
            r.variant.as_str().to_string(),
            r.stage_name.clone(),
            r.stage_index.to_string(),
            format!("{}", r.rho),
            r.omega.to_string(),
            r.gamma.to_string(),
            r.seed.to_string(),
            r.fold.to_string(),
            precision,
            recall,
            f1,
            r.n_train.to_string(),
            r.n_test.to_string(),
            r.runtime_ms.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a `results.csv` back into records. Confusion counts are not part
/// of the table, so re-ingested metric sets carry the scores only.
pub fn read_results(path: &Path) -> Result<Vec<RunRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    if headers != RESULTS_COLUMNS {
        return Err(Error::Manifest(format!(
            "unexpected results columns: {headers:?}"
        )));
    }
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let cell = |c: usize| row.get(c).unwrap_or("").to_string();
        let parse_f64 = |c: usize, what: &str| -> Result<f64> {
            cell(c)
                .parse()
                .map_err(|_| Error::Manifest(format!("row {i}: bad {what} '{}'", cell(c))))
        };
        let parse_usize = |c: usize, what: &str| -> Result<usize> {
            cell(c)
                .parse()
                .map_err(|_| Error::Manifest(format!("row {i}: bad {what} '{}'", cell(c))))
        };
        let metrics = if cell(9) == "NA" || cell(10) == "NA" || cell(11) == "NA" {
            None
        } else {
            Some(MetricSet {
                precision: parse_f64(9, "precision")?,
                recall: parse_f64(10, "recall")?,
                f1: parse_f64(11, "f1")?,
                true_positives: 0,
                false_positives: 0,
                true_negatives: 0,
                false_negatives: 0,
            })
        };
        records.push(RunRecord {
            protocol: cell(0),
            variant: Variant::parse(&cell(1))?,
            stage_name: cell(2),
            stage_index: parse_usize(3, "stage_index")?,
            rho: parse_f64(4, "rho")?,
            omega: parse_usize(5, "omega")?,
            gamma: parse_usize(6, "gamma")?,
            seed: cell(7)
                .parse()
                .map_err(|_| Error::Manifest(format!("row {i}: bad seed")))?,
            fold: parse_usize(8, "fold")?,
            metrics,
            n_train: parse_usize(12, "n_train")?,
            n_test: parse_usize(13, "n_test")?,
            runtime_ms: cell(14)
                .parse()
                .map_err(|_| Error::Manifest(format!("row {i}: bad runtime_ms")))?,
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct MeanSd {
    mean: f64,
    sd: f64,
    n: usize,
}

fn mean_sd(values: &[f64]) -> Option<MeanSd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some(MeanSd {
        mean,
        sd: var.sqrt(),
        n: values.len(),
    })
}

fn fmt_cell(stat: Option<MeanSd>) -> String {
    match stat {
        Some(s) => format!("{:.3} ± {:.3}", s.mean, s.sd),
        None => "NA".to_string(),
    }
}

type StageKey = (usize, String);
type F1Table = BTreeMap<(StageKey, Variant), Vec<f64>>;

fn f1_by_stage_variant(records: &[RunRecord]) -> (Vec<StageKey>, Vec<Variant>, F1Table) {
    let mut stages: Vec<StageKey> = Vec::new();
    let mut seen_stage = BTreeSet::new();
    let mut variants: Vec<Variant> = Vec::new();
    let mut seen_variant = BTreeSet::new();
    let mut table: F1Table = BTreeMap::new();
    for r in records {
        let key = (r.stage_index, r.stage_name.clone());
        if seen_stage.insert(key.clone()) {
            stages.push(key.clone());
        }
        if seen_variant.insert(r.variant) {
            variants.push(r.variant);
        }
        let entry = table.entry((key, r.variant)).or_default();
        if let Some(m) = &r.metrics {
            entry.push(m.f1);
        }
    }
    stages.sort();
    variants.sort();
    (stages, variants, table)
}

/// Renders `summary.md`: per-stage mean +/- sd of positive-class F1 per
/// variant, one block per phase when a phase map is supplied, with
/// per-variant block means.
pub fn render_summary(records: &[RunRecord], phases: Option<&BTreeMap<String, Phase>>) -> String {
    let (stages, variants, table) = f1_by_stage_variant(records);
    let blocks: Vec<(String, Vec<StageKey>)> = match phases {
        Some(map) => {
            let mut conversion = Vec::new();
            let mut evaluation = Vec::new();
            let mut unknown = Vec::new();
            for key in &stages {
                match map.get(&key.1) {
                    Some(Phase::Conversion) => conversion.push(key.clone()),
                    Some(Phase::Evaluation) => evaluation.push(key.clone()),
                    None => unknown.push(key.clone()),
                }
            }
            let mut blocks = Vec::new();
            if !conversion.is_empty() {
                blocks.push(("Conversion Phase".to_string(), conversion));
            }
            if !evaluation.is_empty() {
                blocks.push(("Evaluation Phase".to_string(), evaluation));
            }
            if !unknown.is_empty() {
                blocks.push(("Other Stages".to_string(), unknown));
            }
            blocks
        }
        None => vec![("All Stages".to_string(), stages.clone())],
    };

    let mut out = String::new();
    out.push_str("# Per-stage results (positive-class F1, mean ± sd)\n");
    for (title, block_stages) in &blocks {
        out.push_str(&format!("\n## {title}\n\n"));
        out.push_str("| stage |");
        for v in &variants {
            out.push_str(&format!(" {v} |"));
        }
        out.push('\n');
        out.push_str("|---|");
        for _ in &variants {
            out.push_str("---|");
        }
        out.push('\n');
        for key in block_stages {
            out.push_str(&format!("| {} {} |", key.0, key.1));
            for v in &variants {
                let stat = table.get(&(key.clone(), *v)).and_then(|vals| mean_sd(vals));
                out.push_str(&format!(" {} |", fmt_cell(stat)));
            }
            out.push('\n');
        }
        // Per-variant mean over the block's stage means.
        out.push_str("| **mean** |");
        for v in &variants {
            let stage_means: Vec<f64> = block_stages
                .iter()
                .filter_map(|key| {
                    table
                        .get(&(key.clone(), *v))
                        .and_then(|vals| mean_sd(vals).map(|s| s.mean))
                })
                .collect();
            match mean_sd(&stage_means) {
                Some(s) => out.push_str(&format!(" **{:.3}** |", s.mean)),
                None => out.push_str(" NA |"),
            }
        }
        out.push('\n');
    }
    out
}

fn write_fig_stage(records: &[RunRecord], path: &Path) -> Result<()> {
    let (stages, variants, table) = f1_by_stage_variant(records);
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "stage_index",
        "stage_name",
        "variant",
        "mean_f1",
        "sd_f1",
        "n_runs",
    ])?;
    for key in &stages {
        for v in &variants {
            let stat = table.get(&(key.clone(), *v)).and_then(|vals| mean_sd(vals));
            let (mean, sd, n) = match stat {
                Some(s) => (format!("{}", s.mean), format!("{}", s.sd), s.n.to_string()),
                None => ("NA".into(), "NA".into(), "0".into()),
            };
            writer.write_record([
                key.0.to_string(),
                key.1.clone(),
                v.as_str().to_string(),
                mean,
                sd,
                n,
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Final-stage F1 against one swept hyperparameter.
fn write_fig_param<K: Ord + Clone>(
    records: &[RunRecord],
    path: &Path,
    header: &[&str],
    key_of: impl Fn(&RunRecord) -> K,
    key_cells: impl Fn(&K) -> Vec<String>,
) -> Result<()> {
    let last_stage = records.iter().map(|r| r.stage_index).max().unwrap_or(0);
    let mut table: BTreeMap<(K, Variant), Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.stage_index == last_stage) {
        if let Some(m) = &r.metrics {
            table.entry((key_of(r), r.variant)).or_default().push(m.f1);
        }
    }
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(header)?;
    for ((key, variant), values) in &table {
        let stat = mean_sd(values).expect("non-empty by construction");
        let mut row = key_cells(key);
        row.push(variant.as_str().to_string());
        row.push(format!("{}", stat.mean));
        row.push(format!("{}", stat.sd));
        row.push(stat.n.to_string());
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes `results.csv`, `summary.md`, and the plot data files into
/// `out_dir`. Returns the paths written.
pub fn report(
    records: &[RunRecord],
    phases: Option<&BTreeMap<String, Phase>>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::Eval("no results to report".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let results_path = out_dir.join("results.csv");
    write_results_csv(records, &results_path)?;
    written.push(results_path);

    let summary_path = out_dir.join("summary.md");
    fs::write(&summary_path, render_summary(records, phases))?;
    written.push(summary_path);

    let fig_stage = out_dir.join("fig_stage_f1.csv");
    write_fig_stage(records, &fig_stage)?;
    written.push(fig_stage);

    let rhos: BTreeSet<u64> = records.iter().map(|r| r.rho.to_bits()).collect();
    if rhos.len() > 1 {
        let path = out_dir.join("fig_rho_f1.csv");
        write_fig_param(
            records,
            &path,
            &["rho", "variant", "mean_f1", "sd_f1", "n_runs"],
            |r| r.rho.to_bits(),
            |bits| vec![format!("{}", f64::from_bits(*bits))],
        )?;
        written.push(path);
    }
    let depths: BTreeSet<(usize, usize)> = records.iter().map(|r| (r.omega, r.gamma)).collect();
    if depths.len() > 1 {
        let path = out_dir.join("fig_depth_f1.csv");
        write_fig_param(
            records,
            &path,
            &["omega", "gamma", "variant", "mean_f1", "sd_f1", "n_runs"],
            |r| (r.omega, r.gamma),
            |(omega, gamma)| vec![omega.to_string(), gamma.to_string()],
        )?;
        written.push(path);
    }
    Ok(written)
}
