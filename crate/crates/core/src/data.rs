//! Observation matrices with per-sample covariate metadata.
//!
//! A dataset is a samples-by-variables matrix plus, for every row, the
//! individual it belongs to, its ordinal position within that individual's
//! series, and the individual's binary disease label. Columns are z-scored at
//! construction time and the transform is recorded so values can be mapped
//! back to the original scale.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Covariates attached to one sample (one row of the observation matrix).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub sample_id: String,
    pub individual_id: String,
    /// Ordinal position within the individual's series, 1-based.
    pub time_index: usize,
    /// Binary disease label, constant within an individual.
    pub disease: u8,
}

/// Per-column standardization record: `z = (x - mean) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnTransform {
    pub mean: f64,
    pub scale: f64,
}

impl ColumnTransform {
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.scale
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.scale + self.mean
    }
}

/// One individual's series: row indices in time order plus the disease label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndividualSeries {
    pub id: String,
    pub diseased: bool,
    /// Rows of the observation matrix, ordered by time index.
    pub rows: Vec<usize>,
}

/// Row-wise covariate design derived from sample metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Design {
    pub individuals: Vec<IndividualSeries>,
    pub diseased_by_row: Vec<bool>,
    pub individual_by_row: Vec<usize>,
    /// 0-based position of each row within its individual's series.
    pub time_by_row: Vec<usize>,
}

impl Design {
    /// Groups rows by individual and validates the series invariants:
    /// time indices consecutive from 1, constant disease label in {0, 1}.
    pub fn from_meta(meta: &[SampleMeta]) -> Result<Self> {
        let n = meta.len();
        for (row, m) in meta.iter().enumerate() {
            if m.disease > 1 {
                return Err(Error::InvalidDisease { row });
            }
        }
        // Preserve first-appearance order of individuals.
        let mut order: Vec<&str> = Vec::new();
        for m in meta {
            if !order.iter().any(|id| *id == m.individual_id) {
                order.push(&m.individual_id);
            }
        }
        let mut individuals = Vec::with_capacity(order.len());
        let mut diseased_by_row = vec![false; n];
        let mut individual_by_row = vec![0usize; n];
        let mut time_by_row = vec![0usize; n];
        for (idx, id) in order.iter().enumerate() {
            let mut rows: Vec<usize> =
                (0..n).filter(|&r| meta[r].individual_id == *id).collect();
            rows.sort_by_key(|&r| meta[r].time_index);
            let diseased = meta[rows[0]].disease == 1;
            for (t, &r) in rows.iter().enumerate() {
                if meta[r].time_index != t + 1 {
                    return Err(Error::NonConsecutiveTime { individual: id.to_string() });
                }
                if (meta[r].disease == 1) != diseased {
                    return Err(Error::InconsistentDisease { individual: id.to_string() });
                }
                diseased_by_row[r] = diseased;
                individual_by_row[r] = idx;
                time_by_row[r] = t;
            }
            individuals.push(IndividualSeries { id: id.to_string(), diseased, rows });
        }
        Ok(Self { individuals, diseased_by_row, individual_by_row, time_by_row })
    }

    pub fn n_rows(&self) -> usize {
        self.diseased_by_row.len()
    }
}

/// Z-score every column; errors on (numerically) constant columns.
///
/// Scale is the n-1 sample standard deviation, so standardized columns have
/// unit sample variance.
pub fn standardize(values: &ArrayView2<f64>) -> Result<(Array2<f64>, Vec<ColumnTransform>)> {
    standardize_named(values, |i| format!("column {i}"))
}

fn standardize_named<F: Fn(usize) -> String>(
    values: &ArrayView2<f64>,
    name_of: F,
) -> Result<(Array2<f64>, Vec<ColumnTransform>)> {
    let n = values.nrows();
    if n < 2 {
        return Err(Error::DimensionMismatch(
            "standardization needs at least two rows".into(),
        ));
    }
    let mut out = values.to_owned();
    let mut transforms = Vec::with_capacity(values.ncols());
    for j in 0..values.ncols() {
        let col = values.column(j);
        let mean = col.sum() / n as f64;
        let ss: f64 = col.iter().map(|&x| (x - mean) * (x - mean)).sum();
        let sd = (ss / (n as f64 - 1.0)).sqrt();
        if !(sd.is_finite() && sd > 1e-12) {
            return Err(Error::ConstantColumn { name: name_of(j) });
        }
        let tr = ColumnTransform { mean, scale: sd };
        for x in out.column_mut(j) {
            *x = tr.apply(*x);
        }
        transforms.push(tr);
    }
    Ok((out, transforms))
}

/// A validated, standardized observation matrix with its covariate design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    values: Array2<f64>,
    meta: Vec<SampleMeta>,
    variable_names: Vec<String>,
    transforms: Vec<ColumnTransform>,
    design: Design,
}

impl Dataset {
    /// Validates raw values and metadata, optionally applies `log1p`, then
    /// standardizes. Rows with missing (non-finite) cells are rejected.
    pub fn from_raw(
        values: Array2<f64>,
        meta: Vec<SampleMeta>,
        variable_names: Vec<String>,
        log1p: bool,
    ) -> Result<Self> {
        if values.nrows() != meta.len() {
            return Err(Error::RowCountMismatch { values: values.nrows(), meta: meta.len() });
        }
        if values.ncols() != variable_names.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} value columns but {} variable names",
                values.ncols(),
                variable_names.len()
            )));
        }
        let mut values = values;
        for ((r, c), v) in values.indexed_iter_mut() {
            if !v.is_finite() {
                return Err(Error::MissingValue { row: r, column: variable_names[c].clone() });
            }
            if log1p {
                *v = v.ln_1p();
                if !v.is_finite() {
                    return Err(Error::MissingValue {
                        row: r,
                        column: variable_names[c].clone(),
                    });
                }
            }
        }
        let design = Design::from_meta(&meta)?;
        let (values, transforms) =
            standardize_named(&values.view(), |j| variable_names[j].clone())?;
        Ok(Self { values, meta, variable_names, transforms, design })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn meta(&self) -> &[SampleMeta] {
        &self.meta
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    pub fn transforms(&self) -> &[ColumnTransform] {
        &self.transforms
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_variables(&self) -> usize {
        self.values.ncols()
    }
}

/// Two unpaired datasets sharing only the experimental design. No sample or
/// variable correspondence is assumed; name sets may differ in content and
/// length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyPair {
    pub x: Dataset,
    pub y: Dataset,
}
