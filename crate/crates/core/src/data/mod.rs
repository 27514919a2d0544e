//! Tabular data, partitioning, preprocessing operators and metrics.

mod binning;
mod metrics;
mod partition;
mod preprocess;

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use binning::{bin_index, equal_frequency_binning, BinMap};
pub use metrics::{accuracy, auc, binary_report, class_accuracy, ks_statistic, log_loss, MetricsReport};
pub use partition::{dirichlet_partition, vertical_split, PartitionKind, PartitionSpec};
pub use preprocess::{data_split, normalization, standard_scaler, NormAxis, NormKind, NormParams, ScalerParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("column {column} has {got} rows, expected {expected}")]
    RaggedColumn { column: String, expected: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("duplicate feature name {0}")]
    DuplicateFeature(String),
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("unknown feature {0}")]
    UnknownFeature(String),
    #[error("feature {0} assigned to more than one party")]
    OverlappingFeature(String),
    #[error("feature {0} not assigned to any party")]
    MissingFeature(String),
    #[error("table has no labels")]
    MissingLabels,
    #[error("labels must be 0 or 1, found {0}")]
    NonBinaryLabel(f64),
    #[error("both classes must be present")]
    SingleClass,
    #[error("empty input")]
    Empty,
    #[error("invalid partition spec: {0}")]
    InvalidPartitionSpec(&'static str),
    #[error("partition left a party empty after {0} attempts")]
    PartitionFailed(usize),
    #[error("train ratio must lie in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("split leaves an empty side")]
    EmptySplit,
    #[error("max_bins must be at least 2, got {0}")]
    InvalidMaxBins(usize),
}

/// Column-major table with string sample ids and optional labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    ids: Vec<String>,
    feature_names: Vec<String>,
    columns: Vec<Vec<f64>>,
    labels: Option<Vec<f64>>,
}

impl Table {
    pub fn new(
        ids: Vec<String>,
        feature_names: Vec<String>,
        columns: Vec<Vec<f64>>,
        labels: Option<Vec<f64>>,
    ) -> Result<Self, DataError> {
        if feature_names.len() != columns.len() {
            return Err(DataError::LengthMismatch(feature_names.len(), columns.len()));
        }
        let mut names = BTreeSet::new();
        for name in &feature_names {
            if !names.insert(name.as_str()) {
                return Err(DataError::DuplicateFeature(name.clone()));
            }
        }
        let mut seen = BTreeSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(DataError::DuplicateId(id.clone()));
            }
        }
        for (name, col) in feature_names.iter().zip(&columns) {
            if col.len() != ids.len() {
                return Err(DataError::RaggedColumn { column: name.clone(), expected: ids.len(), got: col.len() });
            }
        }
        if let Some(l) = &labels {
            if l.len() != ids.len() {
                return Err(DataError::RaggedColumn { column: "label".into(), expected: ids.len(), got: l.len() });
            }
        }
        Ok(Self { ids, feature_names, columns, labels })
    }

    /// Builds a table from rows; `rows[i][j]` is feature `j` of sample `i`.
    pub fn from_rows(
        ids: Vec<String>,
        feature_names: Vec<String>,
        rows: &[Vec<f64>],
        labels: Option<Vec<f64>>,
    ) -> Result<Self, DataError> {
        let mut columns = alloc::vec![Vec::with_capacity(rows.len()); feature_names.len()];
        for row in rows {
            if row.len() != feature_names.len() {
                return Err(DataError::LengthMismatch(row.len(), feature_names.len()));
            }
            for (col, &v) in columns.iter_mut().zip(row) {
                col.push(v);
            }
        }
        Self::new(ids, feature_names, columns, labels)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.feature_names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Row-major copy of the feature matrix.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_rows()).map(|i| self.row(i)).collect()
    }

    pub fn require_labels(&self) -> Result<&[f64], DataError> {
        self.labels().ok_or(DataError::MissingLabels)
    }

    /// Rows at `indices`, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            columns: self.columns.iter().map(|c| indices.iter().map(|&i| c[i]).collect()).collect(),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    pub fn select_features(&self, names: &[String], keep_labels: bool) -> Result<Self, DataError> {
        let mut columns = Vec::with_capacity(names.len());
        for name in names {
            let col = self.column(name).ok_or_else(|| DataError::UnknownFeature(name.clone()))?;
            columns.push(col.to_vec());
        }
        let labels = if keep_labels { self.labels.clone() } else { None };
        Self::new(self.ids.clone(), names.to_vec(), columns, labels)
    }

    pub fn with_columns(&self, columns: Vec<Vec<f64>>) -> Result<Self, DataError> {
        Self::new(self.ids.clone(), self.feature_names.clone(), columns, self.labels.clone())
    }

    pub fn with_labels(mut self, labels: Option<Vec<f64>>) -> Result<Self, DataError> {
        if let Some(l) = &labels {
            if l.len() != self.ids.len() {
                return Err(DataError::LengthMismatch(l.len(), self.ids.len()));
            }
        }
        self.labels = labels;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    #[test]
    fn validation() {
        let names = vec!["a".to_string(), "a".to_string()];
        assert_eq!(
            Table::new(ids(1), names, vec![vec![1.0], vec![2.0]], None).unwrap_err(),
            DataError::DuplicateFeature("a".into())
        );
        let err = Table::new(vec!["x".into(), "x".into()], vec![], vec![], None).unwrap_err();
        assert_eq!(err, DataError::DuplicateId("x".into()));
        assert!(matches!(
            Table::new(ids(2), vec!["a".into()], vec![vec![1.0]], None),
            Err(DataError::RaggedColumn { .. })
        ));
    }

    #[test]
    fn rows_and_selection() {
        let t = Table::from_rows(
            ids(3),
            vec!["a".into(), "b".into()],
            &[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]],
            Some(vec![0.0, 1.0, 0.0]),
        )
        .unwrap();
        assert_eq!(t.column("b").unwrap(), &[2.0, 4.0, 6.0]);
        assert_eq!(t.row(1), vec![3.0, 4.0]);
        let s = t.select_rows(&[2, 0]);
        assert_eq!(s.ids(), &["2".to_string(), "0".to_string()]);
        assert_eq!(s.labels().unwrap(), &[0.0, 0.0]);
        let f = t.select_features(&["b".into()], false).unwrap();
        assert_eq!(f.n_features(), 1);
        assert!(f.labels().is_none());
        assert!(t.select_features(&["z".into()], false).is_err());
    }
}
