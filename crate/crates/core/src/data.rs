//! Dataset containers: frozen feature embeddings and class labels.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// N×D row-major matrix of frozen embeddings, one sample per row.
///
/// Entries are validated finite at construction; downstream numeric code
/// relies on that.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (n, d) = data.dim();
        if n == 0 || d == 0 {
            return Err(Error::contract(format!(
                "feature matrix must be non-empty, got {n}x{d}"
            )));
        }
        if let Some(((r, c), _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::contract(format!(
                "non-finite feature at row {r}, column {c}"
            )));
        }
        Ok(Self { data })
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    /// Embedding dimension.
    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    /// Gather the given rows into a new matrix (e.g. one mini-batch).
    pub fn select_rows(&self, indices: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((indices.len(), self.d()));
        for (k, &i) in indices.iter().enumerate() {
            out.row_mut(k).assign(&self.data.row(i));
        }
        out
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }
}

/// Per-sample class indices in `[0, classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
    classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::contract(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::contract(format!(
                "label {l} at index {i} out of range for {classes} classes"
            )));
        }
        Ok(Self { labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }
}
