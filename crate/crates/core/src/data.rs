//! Row-sparse binary-labelled datasets, the sparse text format, and the
//! identity-augmented view used to train shift parameters.
//!
//! The text format is one example per line:
//!
//! ```text
//! #n_features=3
//! 1 1:2.0 3:1.0
//! 0 2:-1.0
//! ```
//!
//! Indices are 1-based on disk and strictly increasing within a line; in
//! memory they are 0-based. The header line is optional; without it the
//! feature count is the largest index seen.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A sparse feature vector with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRow {
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseRow {
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: indices.len(),
                actual: values.len(),
            });
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("row indices must be strictly increasing".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite feature value {v}")));
        }
        Ok(Self { indices, values })
    }

    /// Builds a row from a dense slice, dropping exact zeros.
    pub fn from_dense(dense: &[f64]) -> Self {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, v)| (j, *v))
            .unzip();
        Self { indices, values }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    /// Value at feature `j` (zero when absent).
    pub fn get(&self, j: usize) -> f64 {
        match self.indices.binary_search(&j) {
            Ok(pos) => self.values[pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self, n_features: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_features];
        for (j, v) in self.iter() {
            out[j] = v;
        }
        out
    }

    /// Largest index plus one, or zero for an empty row.
    pub fn width(&self) -> usize {
        self.indices.last().map_or(0, |j| j + 1)
    }
}

/// Read-only access to a design matrix with binary labels and instance
/// weights. The intercept is never a column.
pub trait Design {
    fn n_rows(&self) -> usize;
    fn n_features(&self) -> usize;
    /// Nonzero entries of row `i` in increasing column order.
    fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_;
    fn label(&self, i: usize) -> u8;
    fn weight(&self, i: usize) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseDataset {
    rows: Vec<SparseRow>,
    labels: Vec<u8>,
    weights: Vec<f64>,
    n_features: usize,
}

impl SparseDataset {
    /// Unit-weight dataset.
    pub fn new(rows: Vec<SparseRow>, labels: Vec<u8>, n_features: usize) -> Result<Self> {
        let weights = vec![1.0; rows.len()];
        Self::with_weights(rows, labels, weights, n_features)
    }

    pub fn with_weights(rows: Vec<SparseRow>, labels: Vec<u8>, weights: Vec<f64>, n_features: usize) -> Result<Self> {
        if labels.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                actual: labels.len(),
            });
        }
        if weights.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                actual: weights.len(),
            });
        }
        if let Some(y) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::Validation(format!("label {y} is not in {{0,1}}")));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Validation(format!(
                "instance weight {w} must be finite and >= 0"
            )));
        }
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.width() > n_features) {
            return Err(Error::Validation(format!(
                "row {i} uses feature {} but n_features = {n_features}",
                r.width() - 1
            )));
        }
        Ok(Self {
            rows,
            labels,
            weights,
            n_features,
        })
    }

    /// Dense convenience constructor; zeros are not stored.
    pub fn from_dense(features: &[Vec<f64>], labels: Vec<u8>) -> Result<Self> {
        let n_features = features.first().map_or(0, Vec::len);
        if let Some(r) = features.iter().find(|r| r.len() != n_features) {
            return Err(Error::DimensionMismatch {
                expected: n_features,
                actual: r.len(),
            });
        }
        let rows = features.iter().map(|r| SparseRow::from_dense(r)).collect();
        Self::new(rows, labels, n_features)
    }

    pub fn empty(n_features: usize) -> Self {
        Self {
            rows: Vec::new(),
            labels: Vec::new(),
            weights: Vec::new(),
            n_features,
        }
    }

    pub fn rows(&self) -> &[SparseRow] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &SparseRow {
        &self.rows[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn n_negative(&self) -> usize {
        self.n_rows() - self.n_positive()
    }

    pub fn has_both_classes(&self) -> bool {
        let pos = self.n_positive();
        pos > 0 && pos < self.n_rows()
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            weights: indices.iter().map(|&i| self.weights[i]).collect(),
            n_features: self.n_features,
        }
    }

    /// Copy with the given labels; everything else unchanged.
    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Self> {
        Self::with_weights(self.rows.clone(), labels, self.weights.clone(), self.n_features)
    }

    pub fn with_instance_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::with_weights(self.rows.clone(), self.labels.clone(), weights, self.n_features)
    }

    /// Concatenates rows of `other` after `self`; feature count is the max.
    pub fn concat(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.rows.extend(other.rows.iter().cloned());
        out.labels.extend_from_slice(&other.labels);
        out.weights.extend_from_slice(&other.weights);
        out.n_features = self.n_features.max(other.n_features);
        out
    }

    /// Column `j` as a dense vector over rows.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.get(j)).collect()
    }

    /// Parses the sparse text format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut declared: Option<usize> = None;
        let mut max_width = 0usize;

        for (lineno, raw) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("n_features=") {
                    let m = v.trim().parse::<usize>().map_err(|_| Error::Parse {
                        line: line_no,
                        message: format!("bad n_features header {v:?}"),
                    })?;
                    declared = Some(m);
                }
                continue;
            }
            let mut tokens = line.split_whitespace();
            let label_tok = tokens.next().expect("non-empty line has a token");
            let label = parse_label(label_tok, line_no)?;

            let mut indices = Vec::new();
            let mut values = Vec::new();
            for tok in tokens {
                let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: format!("expected <index>:<value>, got {tok:?}"),
                })?;
                let idx: usize = idx.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("bad feature index {idx:?}"),
                })?;
                if idx == 0 {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "feature indices are 1-based".into(),
                    });
                }
                let val: f64 = val.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("bad feature value {val:?}"),
                })?;
                if !val.is_finite() {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("non-finite feature value {val}"),
                    });
                }
                if indices.last().is_some_and(|&last| idx - 1 <= last) {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "feature indices must be strictly increasing".into(),
                    });
                }
                indices.push(idx - 1);
                values.push(val);
            }
            let row = SparseRow { indices, values };
            max_width = max_width.max(row.width());
            rows.push(row);
            labels.push(label);
        }

        let n_features = match declared {
            Some(m) if m < max_width => {
                return Err(Error::Validation(format!(
                    "header declares {m} features but index {max_width} is used"
                )))
            }
            Some(m) => m,
            None => max_width,
        };
        Self::new(rows, labels, n_features)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Renders the text format with a feature-count header and 17
    /// significant digits per value.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "#n_features={}", self.n_features).unwrap();
        for (row, y) in self.rows.iter().zip(&self.labels) {
            write!(out, "{y}").unwrap();
            for (j, v) in row.iter() {
                write!(out, " {}:{v:.16e}", j + 1).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn parse_label(tok: &str, line: usize) -> Result<u8> {
    let v: f64 = tok.parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad label {tok:?}"),
    })?;
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(Error::Validation(format!("line {line}: label {tok} is not in {{0,1}}")))
    }
}

impl Design for SparseDataset {
    fn n_rows(&self) -> usize {
        self.rows.len()
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.rows[i].iter()
    }

    fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }
}

/// Keeps every positive and a uniform sample of negatives so that
/// `#neg <= ratio * #pos`. Kept rows stay in file order.
pub fn subsample_negatives(d: &SparseDataset, ratio: f64, seed: u64) -> Result<SparseDataset> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::InvalidArgument(format!("ratio must be positive, got {ratio}")));
    }
    let n_pos = d.n_positive();
    if n_pos == 0 {
        return Err(Error::Validation("no positive examples to anchor the ratio".into()));
    }
    let negatives: Vec<usize> = (0..d.n_rows()).filter(|&i| d.labels[i] == 0).collect();
    let target = (ratio * n_pos as f64).floor() as usize;
    if negatives.len() <= target {
        return Ok(d.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; d.n_rows()];
    for i in (0..d.n_rows()).filter(|&i| d.labels[i] == 1) {
        keep[i] = true;
    }
    for pos in sample(&mut rng, negatives.len(), target) {
        keep[negatives[pos]] = true;
    }
    let indices: Vec<usize> = (0..d.n_rows()).filter(|&i| keep[i]).collect();
    Ok(d.subset(&indices))
}

/// `[X | s * I_n]`: the base data plus one scaled indicator column per row.
#[derive(Debug, Clone, Copy)]
pub struct AugmentedProblem<'a> {
    base: &'a SparseDataset,
    shift_scale: f64,
}

impl<'a> AugmentedProblem<'a> {
    pub fn base(&self) -> &'a SparseDataset {
        self.base
    }

    pub fn shift_scale(&self) -> f64 {
        self.shift_scale
    }

    pub fn total_features(&self) -> usize {
        self.base.n_features() + self.base.n_rows()
    }

    /// Column index of the shift belonging to row `i`.
    pub fn shift_column(&self, i: usize) -> usize {
        self.base.n_features() + i
    }

    /// Materializes the augmented rows as a plain dataset.
    pub fn to_dataset(&self) -> SparseDataset {
        let m = self.base.n_features();
        let rows = (0..self.base.n_rows())
            .map(|i| {
                let (mut idx, mut val): (Vec<usize>, Vec<f64>) = self.base.rows[i].iter().unzip();
                idx.push(m + i);
                val.push(self.shift_scale);
                SparseRow {
                    indices: idx,
                    values: val,
                }
            })
            .collect();
        SparseDataset {
            rows,
            labels: self.base.labels.clone(),
            weights: self.base.weights.clone(),
            n_features: self.total_features(),
        }
    }
}

pub fn augment_with_identity(d: &SparseDataset, shift_scale: f64) -> Result<AugmentedProblem<'_>> {
    if !(shift_scale > 0.0 && shift_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "shift_scale must be positive, got {shift_scale}"
        )));
    }
    Ok(AugmentedProblem { base: d, shift_scale })
}

impl Design for AugmentedProblem<'_> {
    fn n_rows(&self) -> usize {
        self.base.n_rows()
    }

    fn n_features(&self) -> usize {
        self.total_features()
    }

    fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.base.rows[i]
            .iter()
            .chain(std::iter::once((self.base.n_features() + i, self.shift_scale)))
    }

    fn label(&self, i: usize) -> u8 {
        self.base.labels[i]
    }

    fn weight(&self, i: usize) -> f64 {
        self.base.weights[i]
    }
}
