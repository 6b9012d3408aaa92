//! Survival datasets with four covariate blocks, validation, row splitting
//! and standardization of the penalized blocks.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::labeled_rng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("non-positive time {value} in column `{column}` at row {row}")]
    NonPositiveTime { column: String, row: usize, value: f64 },
    #[error("status must be 0 or 1, got {value} in column `{column}` at row {row}")]
    InvalidStatus { column: String, row: usize, value: f64 },
    #[error("non-finite value in column `{column}` at row {row}")]
    NonFinite { column: String, row: usize },
    #[error("row-count mismatch in column `{column}`: expected {expected} rows, found {found}")]
    RowCountMismatch { column: String, expected: usize, found: usize },
    #[error("column roles: {0}")]
    Roles(String),
    #[error("split would leave an empty part (n = {n}, test fraction = {fraction})")]
    EmptySplit { n: usize, fraction: f64 },
    #[error("cannot build {k} folds from {n} rows")]
    InvalidFolds { n: usize, k: usize },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error on `{path}`: {message}")]
    Io { path: String, message: String },
}

/// Right-censored survival data with unpenalized/penalized covariate blocks
/// for the incidence (`z_*`) and latency (`x_*`) parts.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    pub time: Vec<f64>,
    pub status: Vec<bool>,
    pub z_unpen: Array2<f64>,
    pub z_pen: Array2<f64>,
    pub x_unpen: Array2<f64>,
    pub x_pen: Array2<f64>,
    pub names: BlockNames,
    /// `z_pen` and `x_pen` hold the same columns.
    pub shared_penalized: bool,
    /// Latent cure status (`Some(true)` = uncured), known only in simulation.
    pub y_true: Option<Vec<Option<bool>>>,
    pub w_true: Option<Vec<f64>>,
    pub pi_true: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockNames {
    pub z_unpen: Vec<String>,
    pub z_pen: Vec<String>,
    pub x_unpen: Vec<String>,
    pub x_pen: Vec<String>,
}

impl SurvivalDataset {
    /// Builds a dataset from in-memory blocks and checks its invariants.
    pub fn new(
        time: Vec<f64>,
        status: Vec<bool>,
        z_unpen: Array2<f64>,
        z_pen: Array2<f64>,
        x_unpen: Array2<f64>,
        x_pen: Array2<f64>,
    ) -> Result<Self, DataError> {
        let names = BlockNames {
            z_unpen: default_names("zu", z_unpen.ncols()),
            z_pen: default_names("zp", z_pen.ncols()),
            x_unpen: default_names("xu", x_unpen.ncols()),
            x_pen: default_names("xp", x_pen.ncols()),
        };
        let ds = SurvivalDataset {
            time,
            status,
            z_unpen,
            z_pen,
            x_unpen,
            x_pen,
            names,
            shared_penalized: false,
            y_true: None,
            w_true: None,
            pi_true: None,
        };
        ds.check()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.time.len()
    }

    pub fn n_events(&self) -> usize {
        self.status.iter().filter(|&&d| d).count()
    }

    pub fn delta(&self, i: usize) -> f64 {
        if self.status[i] {
            1.0
        } else {
            0.0
        }
    }

    pub fn check(&self) -> Result<(), DataError> {
        let n = self.time.len();
        let mismatch = |column: &str, found: usize| DataError::RowCountMismatch {
            column: column.to_string(),
            expected: n,
            found,
        };
        if self.status.len() != n {
            return Err(mismatch("status", self.status.len()));
        }
        for (label, block) in [
            ("z_unpen", &self.z_unpen),
            ("z_pen", &self.z_pen),
            ("x_unpen", &self.x_unpen),
            ("x_pen", &self.x_pen),
        ] {
            if block.nrows() != n {
                return Err(mismatch(label, block.nrows()));
            }
            for ((row, col), v) in block.indexed_iter() {
                if !v.is_finite() {
                    return Err(DataError::NonFinite {
                        column: format!("{label}[{col}]"),
                        row: row + 1,
                    });
                }
            }
        }
        for (row, &t) in self.time.iter().enumerate() {
            if !t.is_finite() {
                return Err(DataError::NonFinite { column: "time".into(), row: row + 1 });
            }
            if t <= 0.0 {
                return Err(DataError::NonPositiveTime {
                    column: "time".into(),
                    row: row + 1,
                    value: t,
                });
            }
        }
        Ok(())
    }

    /// Rows `indices` in the given order.
    pub fn subset(&self, indices: &[usize]) -> SurvivalDataset {
        let pick = |m: &Array2<f64>| m.select(Axis(0), indices);
        SurvivalDataset {
            time: indices.iter().map(|&i| self.time[i]).collect(),
            status: indices.iter().map(|&i| self.status[i]).collect(),
            z_unpen: pick(&self.z_unpen),
            z_pen: pick(&self.z_pen),
            x_unpen: pick(&self.x_unpen),
            x_pen: pick(&self.x_pen),
            names: self.names.clone(),
            shared_penalized: self.shared_penalized,
            y_true: self.y_true.as_ref().map(|v| indices.iter().map(|&i| v[i]).collect()),
            w_true: self.w_true.as_ref().map(|v| indices.iter().map(|&i| v[i]).collect()),
            pi_true: self.pi_true.as_ref().map(|v| indices.iter().map(|&i| v[i]).collect()),
        }
    }

    /// Keeps only the listed penalized columns of each block.
    pub fn select_penalized(&self, z_cols: &[usize], x_cols: &[usize]) -> SurvivalDataset {
        let mut out = self.clone();
        out.z_pen = self.z_pen.select(Axis(1), z_cols);
        out.x_pen = self.x_pen.select(Axis(1), x_cols);
        out.names.z_pen = z_cols.iter().map(|&j| self.names.z_pen[j].clone()).collect();
        out.names.x_pen = x_cols.iter().map(|&j| self.names.x_pen[j].clone()).collect();
        out.shared_penalized = self.shared_penalized && z_cols == x_cols;
        out
    }
}

fn default_names(prefix: &str, k: usize) -> Vec<String> {
    (1..=k).map(|j| format!("{prefix}_{j}")).collect()
}

/// Role assignment for the columns of a raw table.
///
/// Serialized as the sidecar JSON accompanying an input CSV. Columns not
/// listed are ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnRoles {
    pub time: String,
    pub status: String,
    #[serde(default)]
    pub z_unpen: Vec<String>,
    #[serde(default)]
    pub z_pen: Vec<String>,
    #[serde(default)]
    pub x_unpen: Vec<String>,
    #[serde(default)]
    pub x_pen: Vec<String>,
    #[serde(default)]
    pub shared_penalized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnRole {
    Time,
    Status,
    ZUnpen,
    ZPen,
    XUnpen,
    XPen,
    Ignore,
}

impl ColumnRoles {
    /// Resolves the role of every header column. With `shared_penalized`,
    /// `x_pen` may be omitted (it defaults to `z_pen`) or must equal it.
    pub fn resolve(&self, headers: &[String]) -> Result<Vec<ColumnRole>, DataError> {
        let mut roles = vec![ColumnRole::Ignore; headers.len()];
        let index: BTreeMap<&str, usize> =
            headers.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
        if index.len() != headers.len() {
            return Err(DataError::Roles("duplicate column names in header".into()));
        }
        let x_pen = self.effective_x_pen()?;
        let mut assign = |name: &str, role: ColumnRole| -> Result<(), DataError> {
            let &i = index
                .get(name)
                .ok_or_else(|| DataError::Roles(format!("column `{name}` not found")))?;
            if roles[i] != ColumnRole::Ignore {
                return Err(DataError::Roles(format!("column `{name}` has more than one role")));
            }
            roles[i] = role;
            Ok(())
        };
        assign(&self.time, ColumnRole::Time)?;
        assign(&self.status, ColumnRole::Status)?;
        for c in &self.z_unpen {
            assign(c, ColumnRole::ZUnpen)?;
        }
        for c in &self.z_pen {
            assign(c, ColumnRole::ZPen)?;
        }
        for c in &self.x_unpen {
            assign(c, ColumnRole::XUnpen)?;
        }
        if !self.shared_penalized {
            for c in &x_pen {
                assign(c, ColumnRole::XPen)?;
            }
        }
        Ok(roles)
    }

    fn effective_x_pen(&self) -> Result<Vec<String>, DataError> {
        if !self.shared_penalized {
            return Ok(self.x_pen.clone());
        }
        if self.x_pen.is_empty() || self.x_pen == self.z_pen {
            Ok(self.z_pen.clone())
        } else {
            Err(DataError::Roles("shared_penalized requires x_pen to equal z_pen".into()))
        }
    }
}

/// Parsed numeric table, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl RawTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.headers.iter().position(|h| h == name).map(|i| self.columns[i].as_slice())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    /// Penalized columns with zero variance; they stay in the dataset but can
    /// never enter the model after standardization.
    pub constant_penalized: Vec<String>,
}

pub fn validate_dataset(
    table: &RawTable,
    roles: &ColumnRoles,
) -> Result<(SurvivalDataset, ValidationReport), DataError> {
    let resolved = roles.resolve(&table.headers)?;
    let n = table.columns.first().map_or(0, Vec::len);
    for (h, col) in table.headers.iter().zip(&table.columns) {
        if col.len() != n {
            return Err(DataError::RowCountMismatch { column: h.clone(), expected: n, found: col.len() });
        }
        if let Some(row) = col.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite { column: h.clone(), row: row + 1 });
        }
    }
    let column = |name: &str| table.column(name).expect("resolved column");
    let time = column(&roles.time).to_vec();
    for (row, &t) in time.iter().enumerate() {
        if t <= 0.0 {
            return Err(DataError::NonPositiveTime { column: roles.time.clone(), row: row + 1, value: t });
        }
    }
    let mut status = Vec::with_capacity(n);
    for (row, &d) in column(&roles.status).iter().enumerate() {
        status.push(match d {
            v if v == 0.0 => false,
            v if v == 1.0 => true,
            value => {
                return Err(DataError::InvalidStatus { column: roles.status.clone(), row: row + 1, value })
            }
        });
    }
    let block = |names: &[String]| -> Array2<f64> {
        let mut m = Array2::zeros((n, names.len()));
        for (j, name) in names.iter().enumerate() {
            for (i, &v) in column(name).iter().enumerate() {
                m[[i, j]] = v;
            }
        }
        m
    };
    debug_assert!(resolved.len() == table.headers.len());
    let x_pen_names = roles.effective_x_pen()?;
    let ds = SurvivalDataset {
        time,
        status,
        z_unpen: block(&roles.z_unpen),
        z_pen: block(&roles.z_pen),
        x_unpen: block(&roles.x_unpen),
        x_pen: block(&x_pen_names),
        names: BlockNames {
            z_unpen: roles.z_unpen.clone(),
            z_pen: roles.z_pen.clone(),
            x_unpen: roles.x_unpen.clone(),
            x_pen: x_pen_names.clone(),
        },
        shared_penalized: roles.shared_penalized,
        y_true: None,
        w_true: None,
        pi_true: None,
    };
    let mut constant: Vec<String> = Vec::new();
    for name in roles.z_pen.iter().chain(x_pen_names.iter()) {
        let col = column(name);
        if col.iter().all(|&v| v == col[0]) && !constant.contains(name) {
            constant.push(name.clone());
        }
    }
    for name in &constant {
        log::warn!("penalized column `{name}` is constant and is excluded from the model");
    }
    Ok((ds, ValidationReport { constant_penalized: constant }))
}

/// Random disjoint train/test partition; the test part has
/// `round(n * test_fraction)` rows. Row order within each part is preserved.
pub fn split_train_test(
    ds: &SurvivalDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(SurvivalDataset, SurvivalDataset), DataError> {
    let (train, test) = split_indices(ds.n(), test_fraction, seed)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}

pub fn split_indices(
    n: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    let n_test = (n as f64 * test_fraction).round();
    if !(test_fraction > 0.0 && test_fraction < 1.0) || n_test < 1.0 || n_test > (n as f64 - 1.0) {
        return Err(DataError::EmptySplit { n, fraction: test_fraction });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut labeled_rng(seed, "split", 0));
    let n_test = n_test as usize;
    let mut test = perm[..n_test].to_vec();
    let mut train = perm[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// `k` disjoint folds covering `0..n`, sizes differing by at most one.
pub fn kfold_partition(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, DataError> {
    if k < 2 || k > n {
        return Err(DataError::InvalidFolds { n, k });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut labeled_rng(seed, "kfold", 0));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, idx) in perm.into_iter().enumerate() {
        folds[pos % k].push(idx);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Per-column centering and scaling of one penalized block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub mean: Vec<f64>,
    /// Sample standard deviation; 1 for constant columns.
    pub sd: Vec<f64>,
    pub constant: Vec<bool>,
}

impl ColumnScaling {
    pub fn fit(m: &Array2<f64>) -> Self {
        let n = m.nrows() as f64;
        let mut mean = Vec::with_capacity(m.ncols());
        let mut sd = Vec::with_capacity(m.ncols());
        let mut constant = Vec::with_capacity(m.ncols());
        for col in m.columns() {
            let mu = col.sum() / n;
            let ss: f64 = col.iter().map(|v| (v - mu) * (v - mu)).sum();
            let s = if n > 1.0 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
            let is_const = col.iter().all(|&v| v == col[0]) || !(s > 0.0);
            mean.push(if is_const { col[0] } else { mu });
            sd.push(if is_const { 1.0 } else { s });
            constant.push(is_const);
        }
        ColumnScaling { mean, sd, constant }
    }

    pub fn identity(p: usize) -> Self {
        ColumnScaling { mean: vec![0.0; p], sd: vec![1.0; p], constant: vec![false; p] }
    }

    pub fn apply(&self, m: &Array2<f64>) -> Array2<f64> {
        let mut out = m.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (mu, s) = (self.mean[j], self.sd[j]);
            col.mapv_inplace(|v| (v - mu) / s);
        }
        out
    }

    pub fn invert(&self, m: &Array2<f64>) -> Array2<f64> {
        let mut out = m.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (mu, s) = (self.mean[j], self.sd[j]);
            col.mapv_inplace(|v| v * s + mu);
        }
        out
    }

    /// Coefficients on the standardized scale to the original scale, and the
    /// shift `-Σ β_j μ_j / σ_j` that the intercept absorbs.
    pub fn coefs_to_original(&self, coefs: &[f64]) -> (Vec<f64>, f64) {
        let mut shift = 0.0;
        let out = coefs
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                let orig = c / self.sd[j];
                shift -= orig * self.mean[j];
                orig
            })
            .collect();
        (out, shift)
    }

    /// Inverse of [`coefs_to_original`](Self::coefs_to_original).
    pub fn coefs_to_standardized(&self, coefs: &[f64]) -> (Vec<f64>, f64) {
        let mut shift = 0.0;
        let out = coefs
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                shift += c * self.mean[j];
                c * self.sd[j]
            })
            .collect();
        (out, shift)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingInfo {
    pub z_pen: ColumnScaling,
    pub x_pen: ColumnScaling,
}

impl ScalingInfo {
    pub fn identity(ds: &SurvivalDataset) -> Self {
        ScalingInfo {
            z_pen: ColumnScaling::identity(ds.z_pen.ncols()),
            x_pen: ColumnScaling::identity(ds.x_pen.ncols()),
        }
    }

    pub fn constant_columns(&self, names: &BlockNames) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (scaling, names) in [(&self.z_pen, &names.z_pen), (&self.x_pen, &names.x_pen)] {
            for (j, &c) in scaling.constant.iter().enumerate() {
                if c && !out.contains(&names[j]) {
                    out.push(names[j].clone());
                }
            }
        }
        out
    }
}

/// Centers and scales every penalized column to mean 0 and sample standard
/// deviation 1. Constant columns become identically zero.
pub fn standardize_penalized(ds: &SurvivalDataset) -> (SurvivalDataset, ScalingInfo) {
    let z = ColumnScaling::fit(&ds.z_pen);
    let x = if ds.shared_penalized { z.clone() } else { ColumnScaling::fit(&ds.x_pen) };
    let mut out = ds.clone();
    out.z_pen = z.apply(&ds.z_pen);
    out.x_pen = if ds.shared_penalized { out.z_pen.clone() } else { x.apply(&ds.x_pen) };
    let info = ScalingInfo { z_pen: z, x_pen: x };
    for name in info.constant_columns(&ds.names) {
        log::warn!("penalized column `{name}` is constant; its coefficient is fixed at zero");
    }
    (out, info)
}
