//! Feature preparation: one-hot encoding and z-scoring with train-only
//! statistics.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};

use super::ingest::RawTable;
use crate::error::{Error, Result};

/// How a raw column should be encoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

/// Column kind per raw column name.
#[derive(Debug, Clone, Default)]
pub struct Schema {
    pub columns: BTreeMap<String, ColumnKind>,
}

impl Schema {
    pub fn all_numeric(names: &[String]) -> Self {
        Schema {
            columns: names
                .iter()
                .map(|n| (n.clone(), ColumnKind::Numeric))
                .collect(),
        }
    }

    pub fn kind_of(&self, name: &str) -> Result<ColumnKind> {
        self.columns
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("schema does not cover column '{name}'")))
    }
}

#[derive(Debug)]
enum FittedColumn {
    Numeric {
        name: String,
        mean: f64,
        sd: f64,
    },
    Categorical {
        name: String,
        /// Sorted category vocabulary seen in the training rows.
        vocabulary: Vec<String>,
    },
}

/// Encoder fitted on training rows: one-hot vocabularies and z-score
/// statistics come from those rows only.
#[derive(Debug)]
pub struct FeaturePrep {
    columns: Vec<FittedColumn>,
    /// Zero-variance columns and similar oddities observed during fitting.
    pub warnings: Vec<String>,
}

impl FeaturePrep {
    /// Fits the encoder on `train_rows` of `table`.
    pub fn fit(table: &RawTable, schema: &Schema, train_rows: &[usize]) -> Result<Self> {
        if train_rows.is_empty() {
            return Err(Error::Config("cannot fit feature prep on zero rows".into()));
        }
        for &r in train_rows {
            if r >= table.rows.len() {
                return Err(Error::Config(format!("train row {r} out of range")));
            }
        }
        let mut columns = Vec::new();
        let mut warnings = Vec::new();
        for (c, name) in table.columns.iter().enumerate() {
            match schema.kind_of(name)? {
                ColumnKind::Numeric => {
                    let mut values = Vec::with_capacity(train_rows.len());
                    for &r in train_rows {
                        let cell = &table.rows[r][c];
                        let v: f64 = cell.parse().map_err(|_| {
                            Error::Dataset(format!(
                                "row {r} column '{name}': non-numeric cell '{cell}'"
                            ))
                        })?;
                        values.push(v);
                    }
                    let n = values.len() as f64;
                    let mean = values.iter().sum::<f64>() / n;
                    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let sd = var.sqrt();
                    if sd == 0.0 {
                        warnings.push(format!(
                            "numeric column '{name}' has zero variance; scaled to 0"
                        ));
                    }
                    columns.push(FittedColumn::Numeric {
                        name: name.clone(),
                        mean,
                        sd,
                    });
                }
                ColumnKind::Categorical => {
                    let mut vocabulary: Vec<String> = train_rows
                        .iter()
                        .map(|&r| table.rows[r][c].clone())
                        .collect();
                    vocabulary.sort();
                    vocabulary.dedup();
                    columns.push(FittedColumn::Categorical {
                        name: name.clone(),
                        vocabulary,
                    });
                }
            }
        }
        Ok(FeaturePrep { columns, warnings })
    }

    /// Names of the encoded output columns.
    pub fn output_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for col in &self.columns {
            match col {
                FittedColumn::Numeric { name, .. } => names.push(name.clone()),
                FittedColumn::Categorical { name, vocabulary } => {
                    for v in vocabulary {
                        names.push(format!("{name}={v}"));
                    }
                }
            }
        }
        names
    }

    /// Marks which encoded columns are one-hot indicators.
    pub fn indicator_flags(&self) -> Vec<bool> {
        let mut flags = Vec::new();
        for col in &self.columns {
            match col {
                FittedColumn::Numeric { .. } => flags.push(false),
                FittedColumn::Categorical { vocabulary, .. } => {
                    flags.extend(std::iter::repeat_n(true, vocabulary.len()))
                }
            }
        }
        flags
    }

    /// Encodes any rows of the same table layout. Categories unseen during
    /// fitting encode to an all-zeros block.
    pub fn apply(&self, table: &RawTable) -> Result<Array2<f64>> {
        if table.columns.len() != self.columns.len() {
            return Err(Error::Shape(format!(
                "table has {} columns, encoder was fitted on {}",
                table.columns.len(),
                self.columns.len()
            )));
        }
        let out_cols: usize = self
            .columns
            .iter()
            .map(|c| match c {
                FittedColumn::Numeric { .. } => 1,
                FittedColumn::Categorical { vocabulary, .. } => vocabulary.len(),
            })
            .sum();
        let mut out = Array2::zeros((table.rows.len(), out_cols));
        for (r, row) in table.rows.iter().enumerate() {
            let mut o = 0usize;
            for (c, col) in self.columns.iter().enumerate() {
                match col {
                    FittedColumn::Numeric { name, mean, sd } => {
                        let cell = &row[c];
                        let v: f64 = cell.parse().map_err(|_| {
                            Error::Dataset(format!(
                                "row {r} column '{name}': non-numeric cell '{cell}'"
                            ))
                        })?;
                        out[(r, o)] = if *sd == 0.0 { 0.0 } else { (v - mean) / sd };
                        o += 1;
                    }
                    FittedColumn::Categorical { vocabulary, .. } => {
                        if let Ok(pos) = vocabulary.binary_search(&row[c]) {
                            out[(r, o + pos)] = 1.0;
                        }
                        o += vocabulary.len();
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Fits on the given training rows and encodes the whole table.
///
/// Returns the encoded matrix and the output column names.
pub fn prepare_features(
    table: &RawTable,
    schema: &Schema,
    train_rows: &[usize],
) -> Result<(Array2<f64>, Vec<String>)> {
    let prep = FeaturePrep::fit(table, schema, train_rows)?;
    let matrix = prep.apply(table)?;
    Ok((matrix, prep.output_names()))
}

/// Z-scoring for already-numeric matrices, fitted on training rows only.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Array1<f64>,
    pub sds: Array1<f64>,
}

impl Standardizer {
    pub fn fit(matrix: &Array2<f64>, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Config("cannot fit standardizer on zero rows".into()));
        }
        let n = rows.len() as f64;
        let cols = matrix.ncols();
        let mut means = Array1::zeros(cols);
        let mut sds = Array1::zeros(cols);
        for c in 0..cols {
            let mean = rows.iter().map(|&r| matrix[(r, c)]).sum::<f64>() / n;
            let var = rows
                .iter()
                .map(|&r| {
                    let d = matrix[(r, c)] - mean;
                    d * d
                })
                .sum::<f64>()
                / n;
            means[c] = mean;
            sds[c] = var.sqrt();
        }
        Ok(Standardizer { means, sds })
    }

    pub fn apply(&self, matrix: &Array2<f64>) -> Result<Array2<f64>> {
        if matrix.ncols() != self.means.len() {
            return Err(Error::Shape(format!(
                "matrix has {} columns, standardizer was fitted on {}",
                matrix.ncols(),
                self.means.len()
            )));
        }
        let mut out = matrix.clone();
        for c in 0..out.ncols() {
            let (mean, sd) = (self.means[c], self.sds[c]);
            for v in out.column_mut(c) {
                *v = if sd == 0.0 { 0.0 } else { (*v - mean) / sd };
            }
        }
        Ok(out)
    }
}
