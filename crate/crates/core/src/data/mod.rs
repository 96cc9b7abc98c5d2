//! Datasets: IDX and delimited-text loaders, synthetic tasks, batching.

mod batch;
mod delimited;
mod idx;
mod synth;

pub use batch::{make_batches, BatchPlan};
pub use delimited::{load_delimited, load_matrix, parse_delimited, parse_matrix, write_delimited};
pub use idx::{encode_idx_images, encode_idx_labels, load_idx, parse_idx};
pub use synth::{peaks2d, synth_classification, synth_regression};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub targets: Matrix,
    pub name: String,
}

impl Dataset {
    pub fn new(inputs: Matrix, targets: Matrix, name: impl Into<String>) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::Format(format!(
                "{} input rows but {} target rows",
                inputs.rows(),
                targets.rows()
            )));
        }
        Ok(Dataset {
            inputs,
            targets,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.cols()
    }

    pub fn n_outputs(&self) -> usize {
        self.targets.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Ok(Dataset {
            inputs: self.inputs.select_rows(indices)?,
            targets: self.targets.select_rows(indices)?,
            name: self.name.clone(),
        })
    }

    /// The first `n` rows (or all of them when `n` exceeds the length).
    pub fn head(&self, n: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Class index of every row, taken as the argmax of its target.
    pub fn labels(&self) -> Vec<usize> {
        self.targets.argmax_rows()
    }
}

/// `n×classes` matrix with 1.0 at each label's column and 0.0 elsewhere.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Matrix> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Format(format!("label {bad} outside 0..{classes}")));
    }
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        data[i * classes + l] = 1.0;
    }
    Matrix::from_vec(labels.len(), classes, data)
}
