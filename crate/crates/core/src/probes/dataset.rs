use serde::Serialize;

use crate::error::{Error, Result};
use crate::numkernel::Matrix;

/// Where a feature matrix came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum FeatureSpec {
    /// MLP activations of `(layer, neuron)` pairs, one column each.
    Neurons { neurons: Vec<(usize, usize)> },
    /// `[h1, h2, h1⊙h2, |h1−h2|]` from residual snapshot `layer` (−1 is the
    /// embedding).
    WicPair { layer: i64, d_model: usize },
    /// Subset of another spec's columns.
    Columns { columns: Vec<usize> },
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDataset {
    pub features: Matrix<f64>,
    pub labels: Vec<bool>,
    pub feature_spec: FeatureSpec,
    /// Columns with a single value across all rows.
    pub constant_columns: Vec<usize>,
}

impl ProbeDataset {
    pub fn new(features: Matrix<f64>, labels: Vec<bool>, feature_spec: FeatureSpec) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape(
                "ProbeDataset::new",
                format!("{} feature rows, {} labels", features.rows(), labels.len()),
            ));
        }
        let constant_columns = (0..features.cols())
            .filter(|&c| features.rows() > 0 && (0..features.rows()).all(|r| features.get(r, c) == features.get(0, c)))
            .collect();
        Ok(Self {
            features,
            labels,
            feature_spec,
            constant_columns,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn is_balanced(&self) -> bool {
        let pos = self.n_positive();
        pos.abs_diff(self.len() - pos) <= 1
    }

    /// Keeps the given columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.dim()) {
            return Err(Error::InvalidArgument(format!(
                "column {bad} out of range for {} features",
                self.dim()
            )));
        }
        let features = Matrix::from_fn(self.len(), columns.len(), |r, c| self.features.get(r, columns[c]));
        let feature_spec = match &self.feature_spec {
            FeatureSpec::Neurons { neurons } => FeatureSpec::Neurons {
                neurons: columns.iter().map(|&c| neurons[c]).collect(),
            },
            _ => FeatureSpec::Columns {
                columns: columns.to_vec(),
            },
        };
        Self::new(features, self.labels.clone(), feature_spec)
    }
}
