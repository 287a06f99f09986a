//! Embedding matrices and labeled datasets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `n` vectors of dimension `d`.
///
/// Every entry is finite; `n >= 1` and `d >= 1`. The matrix is immutable once
/// built and can be shared across threads.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(n: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Shape(format!(
                "embedding matrix must be non-empty, got {n}x{d}"
            )));
        }
        if data.len() != n * d {
            return Err(Error::Shape(format!(
                "expected {} values for a {n}x{d} matrix, got {}",
                n * d,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidRow {
                row: pos / d,
                reason: format!("non-finite value at column {}", pos % d),
            });
        }
        Ok(Self { n, d, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != d {
                return Err(Error::InvalidRow {
                    row: i,
                    reason: format!("length {} differs from {d}", row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), d, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.d)
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * self.d);
        for &r in rows {
            if r >= self.n {
                return Err(Error::InvalidArgument(format!(
                    "row {r} out of range for {} rows",
                    self.n
                )));
            }
            data.extend_from_slice(self.row(r));
        }
        Self::new(rows.len(), self.d, data)
    }

    /// Rows widened to `f64`, row-major.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

/// Role of a row in an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Gallery,
    Query,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Gallery => "gallery",
            Split::Query => "query",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "gallery" => Ok(Split::Gallery),
            "query" => Ok(Split::Query),
            other => Err(format!(
                "unknown split `{other}` (expected train, gallery or query)"
            )),
        }
    }
}

/// Embeddings with a class label and a split tag per row.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    embeddings: EmbeddingMatrix,
    labels: Vec<u32>,
    splits: Vec<Split>,
    num_classes: usize,
}

impl LabeledDataset {
    /// `num_classes` defaults to `max(label) + 1` when `None`.
    pub fn new(
        embeddings: EmbeddingMatrix,
        labels: Vec<u32>,
        splits: Vec<Split>,
        num_classes: Option<usize>,
    ) -> Result<Self> {
        let n = embeddings.n();
        if labels.len() != n {
            return Err(Error::Shape(format!(
                "{} labels for {n} embeddings",
                labels.len()
            )));
        }
        if splits.len() != n {
            return Err(Error::Shape(format!(
                "{} split tags for {n} embeddings",
                splits.len()
            )));
        }
        let observed = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
        let num_classes = num_classes.unwrap_or(observed);
        if let Some(row) = labels.iter().position(|&l| l as usize >= num_classes) {
            return Err(Error::InvalidRow {
                row,
                reason: format!("label {} >= {num_classes} classes", labels[row]),
            });
        }
        Ok(Self {
            embeddings,
            labels,
            splits,
            num_classes,
        })
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Row indices tagged with `split`, ascending.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Same rows and labels with a new split assignment.
    pub fn with_splits(&self, splits: Vec<Split>) -> Result<Self> {
        Self::new(
            self.embeddings.clone(),
            self.labels.clone(),
            splits,
            Some(self.num_classes),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LabeledDataset {
        let emb = EmbeddingMatrix::from_rows(&[[0.0f32, 1.0], [1.0, 0.0], [2.0, 2.0], [3.0, 1.0]])
            .unwrap();
        LabeledDataset::new(
            emb,
            vec![0, 1, 1, 0],
            vec![Split::Train, Split::Gallery, Split::Query, Split::Gallery],
            None,
        )
        .unwrap()
    }

    #[test]
    fn rejects_non_finite() {
        let err = EmbeddingMatrix::new(2, 2, vec![0.0, 1.0, f32::NAN, 0.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidRow { row: 1, .. }));
    }

    #[test]
    fn rejects_empty_and_bad_shape() {
        assert!(EmbeddingMatrix::new(0, 3, vec![]).is_err());
        assert!(EmbeddingMatrix::new(2, 3, vec![0.0; 5]).is_err());
    }

    #[test]
    fn label_out_of_range() {
        let emb = EmbeddingMatrix::new(2, 1, vec![0.0, 1.0]).unwrap();
        let err = LabeledDataset::new(emb, vec![0, 3], vec![Split::Train; 2], Some(2)).unwrap_err();
        assert!(matches!(err, Error::InvalidRow { row: 1, .. }));
    }

    #[test]
    fn splits_partition_rows() {
        let ds = tiny();
        let mut all: Vec<usize> = [Split::Train, Split::Gallery, Split::Query]
            .iter()
            .flat_map(|&s| ds.indices(s))
            .collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert_eq!(ds.indices(Split::Gallery), vec![1, 3]);
        assert_eq!(ds.num_classes(), 2);
    }

    #[test]
    fn select_rows() {
        let ds = tiny();
        let sub = ds.embeddings().select(&[3, 0]).unwrap();
        assert_eq!(sub.row(0), &[3.0, 1.0]);
        assert_eq!(sub.row(1), &[0.0, 1.0]);
    }

    #[test]
    fn split_parse() {
        assert_eq!("gallery".parse::<Split>().unwrap(), Split::Gallery);
        assert!("test".parse::<Split>().is_err());
    }
}
