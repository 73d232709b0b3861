//! Datasets, loaders, splitting, scaling and synthetic data.

use crate::ANOMALY_CODE;
use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Column count of the Tennessee Eastman process files.
pub const TE_COLUMNS: usize = 52;
/// Leading rows of each TE test file recorded before the fault starts.
pub const TE_TEST_NORMAL_ROWS: usize = 160;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("parse error at row {row}: {message}")]
    ParseError { row: usize, message: String },
    #[error("label column `{0}` not found")]
    MissingLabelColumn(String),
    #[error("non-numeric cell `{value}` at row {row}, column {column}")]
    NonNumericCell { row: usize, column: usize, value: String },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{path}: row {row} has {found} columns, expected {expected}")]
    ColumnCountMismatch { path: PathBuf, row: usize, expected: usize, found: usize },
    #[error("class {label} has {count} rows, need at least 2")]
    ClassTooSmall { label: i64, count: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("dataset is empty")]
    Empty,
}

/// Dense class index to original label.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelMap {
    original: Vec<i64>,
}

impl LabelMap {
    /// Dense indices follow the sorted order of the distinct labels.
    pub fn from_labels(labels: impl IntoIterator<Item = i64>) -> Self {
        let set: BTreeSet<i64> = labels.into_iter().collect();
        Self { original: set.into_iter().collect() }
    }

    pub fn identity(n: usize) -> Self {
        Self { original: (0..n as i64).collect() }
    }

    pub fn len(&self) -> usize {
        self.original.len()
    }

    pub fn is_empty(&self) -> bool {
        self.original.is_empty()
    }

    pub fn encode(&self, original: i64) -> Option<usize> {
        self.original.binary_search(&original).ok()
    }

    pub fn decode(&self, dense: usize) -> Option<i64> {
        self.original.get(dense).copied()
    }

    /// Decodes a prediction code, passing the anomaly code through.
    pub fn decode_code(&self, code: i64) -> Option<i64> {
        if code == ANOMALY_CODE {
            Some(ANOMALY_CODE)
        } else {
            usize::try_from(code).ok().and_then(|c| self.decode(c))
        }
    }

    pub fn originals(&self) -> &[i64] {
        &self.original
    }
}

/// Feature matrix with dense labels. A label of [`ANOMALY_CODE`] marks a row
/// outside the known classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Vec<i64>,
    pub feature_names: Option<Vec<String>>,
    pub label_map: LabelMap,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Vec<i64>, label_map: LabelMap) -> Result<Self, DataError> {
        if x.nrows() != y.len() {
            return Err(DataError::InvalidParams(format!("{} rows vs {} labels", x.nrows(), y.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DataError::InvalidParams("non-finite feature value".into()));
        }
        if let Some(&bad) = y.iter().find(|&&l| l != ANOMALY_CODE && !(0..label_map.len() as i64).contains(&l)) {
            return Err(DataError::InvalidParams(format!("label {bad} outside the label map")));
        }
        Ok(Self { x, y, feature_names: None, label_map })
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.label_map.len()
    }

    /// Labels as class indices; `None` if any row is anomalous.
    pub fn dense_labels(&self) -> Option<Vec<usize>> {
        self.y.iter().map(|&l| usize::try_from(l).ok()).collect()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), rows),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            feature_names: self.feature_names.clone(),
            label_map: self.label_map.clone(),
        }
    }

    /// FNV-1a digest over shape, features and labels.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        feed(&(self.x.nrows() as u64).to_le_bytes());
        feed(&(self.x.ncols() as u64).to_le_bytes());
        self.x.iter().for_each(|v| feed(&v.to_bits().to_le_bytes()));
        self.y.iter().for_each(|v| feed(&v.to_le_bytes()));
        h
    }

    /// Writes the dataset as CSV with original labels in a `label` column.
    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let io = |e: csv::Error| DataError::Io { path: path.to_path_buf(), message: e.to_string() };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        let names: Vec<String> = match &self.feature_names {
            Some(n) => n.clone(),
            None => (0..self.n_features()).map(|j| format!("x{j}")).collect(),
        };
        w.write_record(names.iter().map(String::as_str).chain(["label"])).map_err(io)?;
        for (row, &label) in self.x.outer_iter().zip(&self.y) {
            let original = self.label_map.decode_code(label).unwrap_or(ANOMALY_CODE);
            let mut record: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            record.push(original.to_string());
            w.write_record(&record).map_err(io)?;
        }
        w.flush().map_err(|e| DataError::Io { path: path.to_path_buf(), message: e.to_string() })
    }
}

fn parse_cell(value: &str, row: usize, column: usize) -> Result<f64, DataError> {
    value
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DataError::NonNumericCell { row, column, value: value.to_string() })
}

/// Reads a headed CSV whose `label_column` holds integer labels and whose
/// other columns are numeric features. Labels are re-indexed densely in
/// sorted order; `-1` is kept as the anomaly code.
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::Io { path: path.to_path_buf(), message: e.to_string() })?;
    parse_csv(&text, label_column)
}

pub fn parse_csv(text: &str, label_column: &str) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| DataError::ParseError { row: 0, message: e.to_string() })?.clone();
    if headers.is_empty() {
        return Err(DataError::ParseError { row: 0, message: "missing header".into() });
    }
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| DataError::MissingLabelColumn(label_column.to_string()))?;
    let feature_names: Vec<String> =
        headers.iter().enumerate().filter(|&(j, _)| j != label_idx).map(|(_, h)| h.to_string()).collect();

    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| DataError::ParseError { row, message: e.to_string() })?;
        for (j, cell) in record.iter().enumerate() {
            if j == label_idx {
                let label = cell.trim().parse::<i64>().map_err(|_| DataError::NonNumericCell {
                    row,
                    column: j,
                    value: cell.to_string(),
                })?;
                raw_labels.push(label);
            } else {
                values.push(parse_cell(cell, row, j)?);
            }
        }
    }
    if raw_labels.is_empty() {
        return Err(DataError::ParseError { row: 1, message: "no data rows".into() });
    }
    let label_map = LabelMap::from_labels(raw_labels.iter().copied().filter(|&l| l != ANOMALY_CODE));
    let y = raw_labels.iter().map(|&l| label_map.encode(l).map_or(ANOMALY_CODE, |c| c as i64)).collect();
    let x = Array2::from_shape_vec((raw_labels.len(), feature_names.len()), values)
        .map_err(|e| DataError::ParseError { row: 0, message: e.to_string() })?;
    let mut ds = Dataset::new(x, y, label_map)?;
    ds.feature_names = Some(feature_names);
    Ok(ds)
}

/// Reads a whitespace-separated TE matrix. Files stored as 52 rows of
/// observations-by-column are transposed.
pub fn read_te_matrix(path: &Path) -> Result<Array2<f64>, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| DataError::Io { path: path.to_path_buf(), message: e.to_string() })?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| l.split_whitespace().enumerate().map(|(j, v)| parse_cell(v, i + 1, j)).collect())
        .collect::<Result<_, _>>()?;
    let width = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(DataError::ColumnCountMismatch { path: path.to_path_buf(), row: i + 1, expected: width, found: r.len() });
    }
    let m = Array2::from_shape_vec((rows.len(), width), rows.concat()).map_err(|e| DataError::ParseError { row: 0, message: e.to_string() })?;
    if m.ncols() == TE_COLUMNS {
        Ok(m)
    } else if m.nrows() == TE_COLUMNS {
        Ok(m.t().to_owned())
    } else {
        Err(DataError::ColumnCountMismatch { path: path.to_path_buf(), row: 1, expected: TE_COLUMNS, found: m.ncols() })
    }
}

/// Training and testing data for a set of TE faults (0 is normal).
#[derive(Debug, Clone, PartialEq)]
pub struct TeSuite {
    pub train: Dataset,
    pub test: Dataset,
    /// Rows read per training file, keyed by fault number.
    pub train_rows: Vec<(usize, usize)>,
}

/// Loads `dNN.dat` and `dNN_te.dat` for each fault in `faults`. Test rows
/// before the fault onset are labelled normal.
pub fn load_te(dir: &Path, faults: &[usize]) -> Result<TeSuite, DataError> {
    if faults.is_empty() {
        return Err(DataError::InvalidParams("no faults requested".into()));
    }
    let mut labels: Vec<i64> = faults.iter().map(|&f| f as i64).collect();
    labels.push(0);
    let label_map = LabelMap::from_labels(labels);
    let code = |fault: usize| label_map.encode(fault as i64).expect("fault in map") as i64;

    let mut train_parts = Vec::new();
    let mut test_parts = Vec::new();
    let (mut y_tr, mut y_te) = (Vec::new(), Vec::new());
    let mut train_rows = Vec::new();
    for &fault in faults {
        let tr = read_te_matrix(&dir.join(format!("d{fault:02}.dat")))?;
        let te = read_te_matrix(&dir.join(format!("d{fault:02}_te.dat")))?;
        train_rows.push((fault, tr.nrows()));
        y_tr.extend(std::iter::repeat_n(code(fault), tr.nrows()));
        y_te.extend((0..te.nrows()).map(|i| if i < TE_TEST_NORMAL_ROWS { code(0) } else { code(fault) }));
        train_parts.push(tr);
        test_parts.push(te);
    }
    let stack = |parts: &[Array2<f64>]| {
        let views: Vec<ArrayView2<'_, f64>> = parts.iter().map(|p| p.view()).collect();
        concatenate(Axis(0), &views).expect("uniform column count")
    };
    Ok(TeSuite {
        train: Dataset::new(stack(&train_parts), y_tr, label_map.clone())?,
        test: Dataset::new(stack(&test_parts), y_te, label_map)?,
        train_rows,
    })
}

/// Stratified seeded split. Each class contributes `round(ratio * count)`
/// rows to the first part, clamped so both parts get at least one row.
/// Row order within each part follows the input.
pub fn split_train_valid(ds: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    if ds.n_rows() == 0 {
        return Err(DataError::Empty);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DataError::InvalidParams(format!("split ratio {ratio} outside (0, 1)")));
    }
    let classes: BTreeSet<i64> = ds.y.iter().copied().collect();
    let mut rng = crate::seeded_rng(seed, 0);
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for class in classes {
        let mut rows: Vec<usize> = (0..ds.n_rows()).filter(|&i| ds.y[i] == class).collect();
        if rows.len() < 2 {
            return Err(DataError::ClassTooSmall { label: ds.label_map.decode_code(class).unwrap_or(class), count: rows.len() });
        }
        rows.shuffle(&mut rng);
        let take = ((ratio * rows.len() as f64).round() as usize).clamp(1, rows.len() - 1);
        first.extend_from_slice(&rows[..take]);
        second.extend_from_slice(&rows[take..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    Ok((ds.select(&first), ds.select(&second)))
}

/// Per-feature standardisation fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    /// Population standard deviations; 1 for constant columns.
    pub stds: Vec<f64>,
    pub constant: Vec<bool>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<'_, f64>) -> Result<Self, DataError> {
        if x.nrows() == 0 {
            return Err(DataError::Empty);
        }
        let n = x.nrows() as f64;
        let mut means = Vec::with_capacity(x.ncols());
        let mut stds = Vec::with_capacity(x.ncols());
        let mut constant = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let is_constant = var.sqrt() <= f64::EPSILON * mean.abs().max(1.0);
            means.push(mean);
            stds.push(if is_constant { 1.0 } else { var.sqrt() });
            constant.push(is_constant);
        }
        Ok(Self { means, stds, constant })
    }

    pub fn has_constant(&self) -> bool {
        self.constant.iter().any(|&c| c)
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, DataError> {
        if x.ncols() != self.means.len() {
            return Err(DataError::InvalidParams(format!("{} features vs {} fitted", x.ncols(), self.means.len())));
        }
        let mut out = x.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.means[j], self.stds[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset, DataError> {
        Ok(Dataset { x: self.transform(ds.x.view())?, ..ds.clone() })
    }
}

/// Class means with adjacent classes `separation` apart: a regular polygon in
/// the first two dimensions, or a line when there is only one feature.
pub fn blob_centers(n_classes: usize, n_features: usize, separation: f64) -> Array2<f64> {
    let mut centers = Array2::zeros((n_classes, n_features));
    if n_classes < 2 {
        return centers;
    }
    if n_features == 1 {
        for c in 0..n_classes {
            centers[[c, 0]] = c as f64 * separation;
        }
        return centers;
    }
    let radius = separation / (2.0 * (std::f64::consts::PI / n_classes as f64).sin());
    for c in 0..n_classes {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / n_classes as f64;
        centers[[c, 0]] = radius * angle.cos();
        centers[[c, 1]] = radius * angle.sin();
    }
    centers
}

/// A point at least `min_distance` from every center, along the direction
/// halfway between the first two centers as seen from their centroid.
pub fn held_out_center(centers: ArrayView2<'_, f64>, min_distance: f64) -> Vec<f64> {
    let d = centers.ncols();
    let centroid = centers.mean_axis(Axis(0)).expect("at least one center");
    let mut dir = vec![0.0; d];
    if centers.nrows() >= 2 {
        for j in 0..d {
            dir[j] = (centers[[0, j]] + centers[[1, j]]) / 2.0 - centroid[j];
        }
    }
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        dir = vec![0.0; d];
        dir[d - 1] = 1.0;
    } else {
        dir.iter_mut().for_each(|v| *v /= norm);
    }
    let point = |t: f64| -> Vec<f64> { (0..d).map(|j| centroid[j] + t * dir[j]).collect() };
    let nearest = |p: &[f64]| {
        centers
            .outer_iter()
            .map(|c| c.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min)
    };
    let mut t = 0.0;
    while nearest(&point(t)) < min_distance {
        t += 0.01 * min_distance.max(1e-3);
    }
    point(t)
}

fn gaussian_rows(center: &[f64], count: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..count).flat_map(|_| center.iter().map(|&m| m + normal.sample(rng)).collect::<Vec<_>>()).collect()
}

/// Unit-variance Gaussian blobs around [`blob_centers`], rows grouped by
/// class.
pub fn make_blobs(n_classes: usize, per_class: usize, n_features: usize, separation: f64, seed: u64) -> Result<Dataset, DataError> {
    if n_classes == 0 || per_class == 0 || n_features == 0 || !(separation > 0.0 && separation.is_finite()) {
        return Err(DataError::InvalidParams(format!(
            "blobs need positive sizes and separation, got ({n_classes}, {per_class}, {n_features}, {separation})"
        )));
    }
    let centers = blob_centers(n_classes, n_features, separation);
    let mut rng = crate::seeded_rng(seed, 0);
    let mut values = Vec::with_capacity(n_classes * per_class * n_features);
    for c in 0..n_classes {
        values.extend(gaussian_rows(&centers.row(c).to_vec(), per_class, &mut rng));
    }
    let x = Array2::from_shape_vec((n_classes * per_class, n_features), values).expect("shape matches");
    let y = (0..n_classes).flat_map(|c| std::iter::repeat_n(c as i64, per_class)).collect();
    Dataset::new(x, y, LabelMap::identity(n_classes))
}

/// Source of injected out-of-distribution rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnomalyGenerator {
    /// Unit-variance Gaussian around `center`.
    Blob { center: Vec<f64> },
    /// Uniform within per-feature bounds.
    Uniform { low: Vec<f64>, high: Vec<f64> },
}

/// Appends `round(fraction * n_rows)` generated rows labelled as anomalies.
pub fn inject_anomaly(ds: &Dataset, generator: &AnomalyGenerator, fraction: f64, seed: u64) -> Result<Dataset, DataError> {
    if !(fraction >= 0.0 && fraction.is_finite()) {
        return Err(DataError::InvalidParams(format!("fraction {fraction} must be non-negative")));
    }
    let count = (fraction * ds.n_rows() as f64).round() as usize;
    if count == 0 {
        return Ok(ds.clone());
    }
    let d = ds.n_features();
    let mut rng = crate::seeded_rng(seed, 1);
    let values = match generator {
        AnomalyGenerator::Blob { center } => {
            if center.len() != d {
                return Err(DataError::InvalidParams(format!("anomaly center has {} features, data {d}", center.len())));
            }
            gaussian_rows(center, count, &mut rng)
        }
        AnomalyGenerator::Uniform { low, high } => {
            if low.len() != d || high.len() != d || low.iter().zip(high).any(|(l, h)| l.partial_cmp(h) != Some(std::cmp::Ordering::Less)) {
                return Err(DataError::InvalidParams("uniform bounds must match features with low < high".into()));
            }
            let dists: Vec<Uniform<f64>> = low.iter().zip(high).map(|(&l, &h)| Uniform::new(l, h).expect("low < high")).collect();
            (0..count).flat_map(|_| dists.iter().map(|u| u.sample(&mut rng)).collect::<Vec<_>>()).collect()
        }
    };
    let extra = Array2::from_shape_vec((count, d), values).expect("shape matches");
    let x = concatenate(Axis(0), &[ds.x.view(), extra.view()]).expect("same width");
    let mut y = ds.y.clone();
    y.extend(std::iter::repeat_n(ANOMALY_CODE, count));
    Ok(Dataset { x, y, ..ds.clone() })
}
