//! Labeled feature matrices.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("row {row} has {got} features, expected {expected}")]
    RaggedRow { row: usize, got: usize, expected: usize },
    #[error("label {label} at row {row} is outside 0..{n_classes}")]
    LabelOutOfRange { row: usize, label: usize, n_classes: usize },
    #[error("non-finite feature at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
}

/// Feature rows with integer class labels and their display names.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
    pub class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<usize>, class_names: Vec<String>) -> Result<Self, DatasetError> {
        let ds = Self { x, y, class_names };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.x.len() != self.y.len() {
            return Err(DatasetError::LengthMismatch {
                rows: self.x.len(),
                labels: self.y.len(),
            });
        }
        let width = self.n_features();
        for (row, r) in self.x.iter().enumerate() {
            if r.len() != width {
                return Err(DatasetError::RaggedRow {
                    row,
                    got: r.len(),
                    expected: width,
                });
            }
            if let Some(col) = r.iter().position(|v| !v.is_finite()) {
                return Err(DatasetError::NonFinite { row, col });
            }
        }
        let n_classes = self.n_classes();
        for (row, &label) in self.y.iter().enumerate() {
            if label >= n_classes {
                return Err(DatasetError::LabelOutOfRange { row, label, n_classes });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Rows at `indices`, in that order, sharing this dataset's class map.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            x: indices.iter().map(|&i| self.x[i].clone()).collect(),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &label in &self.y {
            counts[label] += 1;
        }
        counts
    }
}
