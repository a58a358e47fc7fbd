//! Dataset ingestion, feature scaling and stratified splitting.
//!
//! Labels are stored as `±1.0` so they can be used directly in the dual
//! arithmetic. The raw class names are kept alongside for reporting.

use std::cmp::Ordering;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SklrError};

/// Which CSV column holds the class label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

impl LabelColumn {
    /// Interprets a command-line value: a header name wins, otherwise a
    /// non-negative integer is taken as a zero-based column index.
    pub fn parse(spec: &str) -> Self {
        match spec.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(spec.to_string()),
        }
    }

    fn resolve(&self, headers: &[String]) -> Result<usize> {
        match self {
            LabelColumn::Name(name) => headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| SklrError::UnknownColumn(name.clone())),
            LabelColumn::Index(i) => {
                // a header literally named "3" takes precedence over index 3
                let as_name = i.to_string();
                if let Some(pos) = headers.iter().position(|h| *h == as_name) {
                    return Ok(pos);
                }
                if *i < headers.len() {
                    Ok(*i)
                } else {
                    Err(SklrError::UnknownColumn(as_name))
                }
            }
        }
    }
}

/// Feature matrix with ±1 labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<f64>,
    /// Raw label values mapped to −1 and +1 respectively.
    classes: Option<[String; 2]>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<f64>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(SklrError::InvalidData(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.ncols() == 0 {
            return Err(SklrError::InvalidData("no feature columns".into()));
        }
        if let Some(v) = features.iter().find(|v| !v.is_finite()) {
            return Err(SklrError::InvalidData(format!(
                "non-finite feature value {v}"
            )));
        }
        if let Some(y) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
            return Err(SklrError::InvalidData(format!("label {y} is not ±1")));
        }
        Ok(Self {
            features,
            labels,
            classes: None,
        })
    }

    /// Builds a dataset from row vectors, mainly for tests and generators.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<f64>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(SklrError::Dimension {
                expected: p,
                found: bad.len(),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let features = Array2::from_shape_vec((rows.len(), p), flat)
            .map_err(|e| SklrError::InvalidData(e.to_string()))?;
        Self::new(features, labels)
    }

    pub fn with_classes(mut self, classes: [String; 2]) -> Self {
        self.classes = Some(classes);
        self
    }

    pub fn classes(&self) -> Option<&[String; 2]> {
        self.classes.as_ref()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn n_pos(&self) -> usize {
        self.labels.iter().filter(|&&y| y > 0.0).count()
    }

    pub fn n_neg(&self) -> usize {
        self.len() - self.n_pos()
    }

    /// Checks the extra conditions a training set must meet.
    pub fn validate_for_training(&self) -> Result<()> {
        if self.len() < 2 {
            return Err(SklrError::InvalidData(format!(
                "training needs at least 2 points, got {}",
                self.len()
            )));
        }
        if self.n_pos() == 0 || self.n_neg() == 0 {
            return Err(SklrError::InvalidData(
                "training data must contain both classes".into(),
            ));
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes.clone(),
        }
    }

    fn class_indices(&self) -> (Vec<usize>, Vec<usize>) {
        (0..self.len()).partition(|&i| self.labels[i] > 0.0)
    }
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let file = std::fs::File::open(path).map_err(|source| SklrError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(SklrError::Empty(format!(
            "{} has no header row",
            path.display()
        )));
    }
    let records = reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((headers, records))
}

fn parse_cell(value: &str, row: usize, column: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| SklrError::Parse {
            row,
            column: column.to_string(),
            value: value.to_string(),
        })
}

fn compare_raw_labels(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => a.cmp(b),
    }
}

/// Loads a labelled CSV. The smaller raw label (numeric order when both
/// parse as numbers, lexicographic otherwise) becomes −1. Row numbers in
/// errors are 1-based data rows (the header is row 0).
pub fn load_csv(path: impl AsRef<Path>, label: &LabelColumn) -> Result<Dataset> {
    let path = path.as_ref();
    let (headers, records) = read_table(path)?;
    if records.is_empty() {
        return Err(SklrError::Empty(format!(
            "{} has no data rows",
            path.display()
        )));
    }
    let label_col = label.resolve(&headers)?;

    let mut distinct: Vec<String> = Vec::new();
    for rec in &records {
        let v = rec.get(label_col).unwrap_or("").to_string();
        if !distinct.contains(&v) {
            distinct.push(v);
        }
    }
    if distinct.len() != 2 {
        return Err(SklrError::LabelCount {
            column: headers[label_col].clone(),
            found: distinct.len(),
        });
    }
    distinct.sort_by(|a, b| compare_raw_labels(a, b));

    let p = headers.len() - 1;
    let mut flat = Vec::with_capacity(records.len() * p);
    let mut labels = Vec::with_capacity(records.len());
    for (r, rec) in records.iter().enumerate() {
        if rec.len() != headers.len() {
            return Err(SklrError::Dimension {
                expected: headers.len(),
                found: rec.len(),
            });
        }
        for (c, cell) in rec.iter().enumerate() {
            if c == label_col {
                labels.push(if cell == distinct[0] { -1.0 } else { 1.0 });
            } else {
                flat.push(parse_cell(cell, r + 1, &headers[c])?);
            }
        }
    }
    let features = Array2::from_shape_vec((records.len(), p), flat)
        .map_err(|e| SklrError::InvalidData(e.to_string()))?;
    let [neg, pos]: [String; 2] = distinct.try_into().expect("two classes");
    Ok(Dataset::new(features, labels)?.with_classes([neg, pos]))
}

/// Loads feature rows for prediction. A label column, if named, is dropped
/// and its raw values returned; an empty file body yields zero rows.
pub fn load_features_csv(
    path: impl AsRef<Path>,
    label: Option<&LabelColumn>,
) -> Result<(Array2<f64>, Option<Vec<String>>)> {
    let path = path.as_ref();
    let (headers, records) = read_table(path)?;
    let label_col = label.map(|l| l.resolve(&headers)).transpose()?;
    let p = headers.len() - usize::from(label_col.is_some());
    let mut flat = Vec::with_capacity(records.len() * p);
    let mut raw_labels = Vec::new();
    for (r, rec) in records.iter().enumerate() {
        if rec.len() != headers.len() {
            return Err(SklrError::Dimension {
                expected: headers.len(),
                found: rec.len(),
            });
        }
        for (c, cell) in rec.iter().enumerate() {
            if Some(c) == label_col {
                raw_labels.push(cell.to_string());
            } else {
                flat.push(parse_cell(cell, r + 1, &headers[c])?);
            }
        }
    }
    let features = Array2::from_shape_vec((records.len(), p), flat)
        .map_err(|e| SklrError::InvalidData(e.to_string()))?;
    Ok((features, label_col.map(|_| raw_labels)))
}

/// Per-feature min/max learned on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalingParams {
    pub fn fit(d: &Dataset) -> Self {
        let p = d.n_features();
        let mut min = vec![f64::INFINITY; p];
        let mut max = vec![f64::NEG_INFINITY; p];
        for row in d.features().rows() {
            for (f, &v) in row.iter().enumerate() {
                min[f] = min[f].min(v);
                max[f] = max[f].max(v);
            }
        }
        if d.is_empty() {
            min.fill(0.0);
            max.fill(0.0);
        }
        Self { min, max }
    }

    /// Identity-like parameters (min 0, max 1) for already-scaled data.
    pub fn identity(p: usize) -> Self {
        Self {
            min: vec![0.0; p],
            max: vec![1.0; p],
        }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Scales a single value of feature `f`. No clipping.
    #[inline]
    pub fn scale_value(&self, f: usize, v: f64) -> f64 {
        let range = self.max[f] - self.min[f];
        if range > 0.0 {
            (v - self.min[f]) / range
        } else {
            0.0
        }
    }

    pub fn scale_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.dim() {
            return Err(SklrError::Dimension {
                expected: self.dim(),
                found: row.len(),
            });
        }
        Ok(row
            .iter()
            .enumerate()
            .map(|(f, &v)| self.scale_value(f, v))
            .collect())
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        if d.n_features() != self.dim() {
            return Err(SklrError::Dimension {
                expected: self.dim(),
                found: d.n_features(),
            });
        }
        let mut features = d.features().clone();
        for mut row in features.rows_mut() {
            for (f, v) in row.iter_mut().enumerate() {
                *v = self.scale_value(f, *v);
            }
        }
        Ok(Dataset {
            features,
            labels: d.labels.clone(),
            classes: d.classes.clone(),
        })
    }
}

pub fn fit_scaling(d: &Dataset) -> ScalingParams {
    ScalingParams::fit(d)
}

pub fn apply_scaling(d: &Dataset, s: &ScalingParams) -> Result<Dataset> {
    s.apply(d)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    /// (train indices, test indices) for fold `f`.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.assignments.len()).partition(|&i| self.assignments[i] != f)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Stratified k-fold assignment. Each class is shuffled independently and
/// dealt round-robin; the negative class continues where the positive class
/// stopped so fold sizes stay within one of each other.
pub fn stratified_kfold(d: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(SklrError::InvalidParam(format!("k = {k}, need k >= 2")));
    }
    let (mut pos, mut neg) = d.class_indices();
    if pos.len() < k || neg.len() < k {
        return Err(SklrError::InvalidData(format!(
            "class sizes ({}, {}) smaller than k = {k}",
            neg.len(),
            pos.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut assignments = vec![0; d.len()];
    for (slot, &i) in pos.iter().enumerate() {
        assignments[i] = slot % k;
    }
    let offset = pos.len() % k;
    for (slot, &i) in neg.iter().enumerate() {
        assignments[i] = (slot + offset) % k;
    }
    Ok(FoldPlan {
        k,
        assignments,
        seed,
    })
}

/// Stratified holdout split. The validation size is `round(fraction·N)`,
/// shared between classes by largest remainder. Returns
/// `(train, validation)` index lists in ascending order.
pub fn validation_split_indices(
    d: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(SklrError::InvalidParam(format!(
            "validation fraction {fraction} not in (0, 1)"
        )));
    }
    let (mut pos, mut neg) = d.class_indices();
    let n = d.len();
    let total = (fraction * n as f64).round() as usize;

    let exact_pos = fraction * pos.len() as f64;
    let exact_neg = fraction * neg.len() as f64;
    let mut take_pos = exact_pos.floor() as usize;
    let mut take_neg = exact_neg.floor() as usize;
    while take_pos + take_neg < total {
        let rem_pos = exact_pos - take_pos as f64;
        let rem_neg = exact_neg - take_neg as f64;
        let prefer_pos = rem_pos > rem_neg || (rem_pos == rem_neg && pos.len() >= neg.len());
        if prefer_pos && take_pos < pos.len() {
            take_pos += 1;
        } else if take_neg < neg.len() {
            take_neg += 1;
        } else {
            take_pos += 1;
        }
    }
    // keep both classes in validation when the budget allows it
    if total >= 2 {
        if take_pos == 0 && take_neg > 1 {
            take_pos = 1;
            take_neg -= 1;
        } else if take_neg == 0 && take_pos > 1 {
            take_neg = 1;
            take_pos -= 1;
        }
    }
    if total == 0 {
        return Err(SklrError::InvalidData(format!(
            "validation fraction {fraction} of {n} points leaves an empty validation set"
        )));
    }
    if take_pos >= pos.len() || take_neg >= neg.len() {
        return Err(SklrError::InvalidData(
            "validation split would leave the training part without one class".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut val: Vec<usize> = pos[..take_pos]
        .iter()
        .chain(&neg[..take_neg])
        .copied()
        .collect();
    let mut train: Vec<usize> = pos[take_pos..]
        .iter()
        .chain(&neg[take_neg..])
        .copied()
        .collect();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

pub fn validation_split(d: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, val) = validation_split_indices(d, fraction, seed)?;
    Ok((d.subset(&train), d.subset(&val)))
}
