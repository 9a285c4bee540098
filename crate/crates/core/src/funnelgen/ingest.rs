//! Stage-aligned CSV ingestion and export.
//!
//! A dataset on disk is a TOML manifest plus one RFC-4180 CSV per stage
//! (UTF-8, header row required). The manifest lists, per stage: name, csv
//! path, id column, label column, and optionally a phase and a schema file
//! tagging columns as numeric or categorical. Categorical columns are
//! one-hot encoded at load time with a vocabulary fixed by the first stage
//! that contains the column; z-scoring is deliberately not applied here (the
//! evaluation harness standardizes per training split).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::Deserialize;

use super::prep::{ColumnKind, Schema};
use super::{FunnelDataset, Phase, StageData};
use crate::error::{Error, Result};

/// A CSV file as strings: header names plus cell rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)?;
        let columns: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            rows.push(record.iter().map(|c| c.to_string()).collect());
        }
        Ok(RawTable { columns, rows })
    }
}

#[derive(Debug, Deserialize)]
struct ManifestFile {
    cohort: Option<u32>,
    stage: Vec<ManifestStage>,
}

#[derive(Debug, Deserialize)]
struct ManifestStage {
    name: String,
    csv: String,
    id_column: String,
    label_column: String,
    phase: Option<String>,
    schema: Option<String>,
    /// Names of columns that are one-hot indicators (metadata; already 0/1
    /// in the CSV).
    indicator_columns: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
struct SchemaFile {
    columns: BTreeMap<String, String>,
}

fn load_schema(path: &Path) -> Result<Schema> {
    let text = fs::read_to_string(path)?;
    let file: SchemaFile =
        toml::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let mut columns = BTreeMap::new();
    for (name, kind) in file.columns {
        let kind = match kind.as_str() {
            "numeric" => ColumnKind::Numeric,
            "categorical" => ColumnKind::Categorical,
            other => {
                return Err(Error::Manifest(format!(
                    "schema {}: column '{name}' has unknown kind '{other}'",
                    path.display()
                )))
            }
        };
        columns.insert(name, kind);
    }
    Ok(Schema { columns })
}

/// Loads a stage-aligned dataset from its manifest and validates the subset
/// and prefix invariants.
pub fn load_stage_csv(manifest_path: &Path) -> Result<FunnelDataset> {
    let text = fs::read_to_string(manifest_path)?;
    let manifest: ManifestFile = toml::from_str(&text)
        .map_err(|e| Error::Manifest(format!("{}: {e}", manifest_path.display())))?;
    if manifest.stage.is_empty() {
        return Err(Error::Manifest("manifest lists no stages".into()));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    // Vocabularies are pinned by the first stage that carries a column, so
    // one-hot blocks stay aligned across stages.
    let mut vocab_by_column: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut stages = Vec::with_capacity(manifest.stage.len());

    for (q, entry) in manifest.stage.iter().enumerate() {
        let csv_path = base.join(&entry.csv);
        let table = RawTable::from_csv_path(&csv_path)?;
        let phase = match &entry.phase {
            Some(p) => Phase::parse(p)?,
            None => Phase::Conversion,
        };
        let schema = match &entry.schema {
            Some(s) => Some(load_schema(&base.join(s))?),
            None => None,
        };

        let id_col = table
            .columns
            .iter()
            .position(|c| c == &entry.id_column)
            .ok_or_else(|| {
                Error::Dataset(format!(
                    "stage {q} ('{}'): id column '{}' not found in {}",
                    entry.name,
                    entry.id_column,
                    csv_path.display()
                ))
            })?;
        let label_col = table
            .columns
            .iter()
            .position(|c| c == &entry.label_column)
            .ok_or_else(|| {
                Error::Dataset(format!(
                    "stage {q} ('{}'): label column '{}' not found in {}",
                    entry.name,
                    entry.label_column,
                    csv_path.display()
                ))
            })?;

        let feature_cols: Vec<usize> = (0..table.columns.len())
            .filter(|&c| c != id_col && c != label_col)
            .collect();

        let mut ids = Vec::with_capacity(table.rows.len());
        let mut labels = Array1::zeros(table.rows.len());
        for (r, row) in table.rows.iter().enumerate() {
            let id: u64 = row[id_col].parse().map_err(|_| {
                Error::Dataset(format!(
                    "stage {q} ('{}') row {r}: id cell '{}' is not an integer",
                    entry.name, row[id_col]
                ))
            })?;
            ids.push(id);
            let y: f64 = row[label_col].parse().map_err(|_| {
                Error::Dataset(format!(
                    "stage {q} ('{}') row {r}: label cell '{}' is not numeric",
                    entry.name, row[label_col]
                ))
            })?;
            if y != 0.0 && y != 1.0 {
                return Err(Error::Dataset(format!(
                    "stage {q} ('{}') row {r}: label must be 0 or 1, got {y}",
                    entry.name
                )));
            }
            labels[r] = y;
        }

        // Encode feature columns.
        let mut out_columns: Vec<Vec<f64>> = Vec::new();
        let mut out_names = Vec::new();
        let mut out_indicator = Vec::new();
        for &c in &feature_cols {
            let name = &table.columns[c];
            let kind = match &schema {
                Some(s) => s.kind_of(name)?,
                None => ColumnKind::Numeric,
            };
            match kind {
                ColumnKind::Numeric => {
                    let mut col = Vec::with_capacity(table.rows.len());
                    for (r, row) in table.rows.iter().enumerate() {
                        let v: f64 = row[c].parse().map_err(|_| {
                            Error::Dataset(format!(
                                "stage {q} ('{}') row {r} column '{name}': \
                                 non-numeric cell '{}'",
                                entry.name, row[c]
                            ))
                        })?;
                        col.push(v);
                    }
                    out_columns.push(col);
                    out_names.push(name.clone());
                    out_indicator.push(false);
                }
                ColumnKind::Categorical => {
                    let vocab = vocab_by_column.entry(name.clone()).or_insert_with(|| {
                        let mut v: Vec<String> =
                            table.rows.iter().map(|row| row[c].clone()).collect();
                        v.sort();
                        v.dedup();
                        v
                    });
                    let mut blocks: Vec<Vec<f64>> = vec![vec![0.0; table.rows.len()]; vocab.len()];
                    for (r, row) in table.rows.iter().enumerate() {
                        if let Ok(pos) = vocab.binary_search(&row[c]) {
                            blocks[pos][r] = 1.0;
                        }
                    }
                    for (v, block) in vocab.iter().zip(blocks) {
                        out_columns.push(block);
                        out_names.push(format!("{name}={v}"));
                        out_indicator.push(true);
                    }
                }
            }
        }

        if let Some(marked) = &entry.indicator_columns {
            for name in marked {
                match out_names.iter().position(|n| n == name) {
                    Some(pos) => out_indicator[pos] = true,
                    None => {
                        return Err(Error::Manifest(format!(
                            "stage {q} ('{}'): indicator column '{name}' not found",
                            entry.name
                        )))
                    }
                }
            }
        }

        let mut features = Array2::zeros((table.rows.len(), out_columns.len()));
        for (c, col) in out_columns.iter().enumerate() {
            for (r, &v) in col.iter().enumerate() {
                features[(r, c)] = v;
            }
        }
        stages.push(StageData {
            name: entry.name.clone(),
            phase,
            ids,
            features,
            labels,
            column_names: out_names,
            indicator_columns: out_indicator,
        });
    }

    let dataset = FunnelDataset::new(stages, manifest.cohort.unwrap_or(0));
    dataset.validate()?;
    Ok(dataset)
}

fn toml_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Writes the dataset as per-stage CSV files plus a manifest readable by
/// [`load_stage_csv`]. Floats use the shortest round-trip representation.
pub fn write_csv_dir(dataset: &FunnelDataset, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut manifest = String::new();
    manifest.push_str(&format!("cohort = {}\n", dataset.cohort));
    for (q, stage) in dataset.stages().iter().enumerate() {
        let file_name = format!("stage_{q:02}_{}.csv", stage.name);
        let path = dir.join(&file_name);
        let mut writer = csv::Writer::from_path(&path)?;
        let mut header = vec!["applicant_id".to_string(), "advanced".to_string()];
        header.extend(stage.column_names.iter().cloned());
        writer.write_record(&header)?;
        for (r, &id) in stage.ids.iter().enumerate() {
            let mut record = Vec::with_capacity(2 + stage.cols());
            record.push(id.to_string());
            record.push(format!("{}", stage.labels[r] as i64));
            for c in 0..stage.cols() {
                record.push(format!("{}", stage.features[(r, c)]));
            }
            writer.write_record(&record)?;
        }
        writer.flush()?;
        manifest.push_str("\n[[stage]]\n");
        manifest.push_str(&format!("name = \"{}\"\n", toml_escape(&stage.name)));
        manifest.push_str(&format!("csv = \"{}\"\n", toml_escape(&file_name)));
        manifest.push_str("id_column = \"applicant_id\"\n");
        manifest.push_str("label_column = \"advanced\"\n");
        manifest.push_str(&format!("phase = \"{}\"\n", stage.phase.as_str()));
        let indicators: Vec<String> = stage
            .column_names
            .iter()
            .zip(stage.indicator_columns.iter())
            .filter(|(_, &flag)| flag)
            .map(|(n, _)| format!("\"{}\"", toml_escape(n)))
            .collect();
        if !indicators.is_empty() {
            manifest.push_str(&format!(
                "indicator_columns = [{}]\n",
                indicators.join(", ")
            ));
        }
        written.push(path);
    }
    let manifest_path = dir.join("manifest.toml");
    fs::write(&manifest_path, manifest)?;
    written.push(manifest_path);
    Ok(written)
}
