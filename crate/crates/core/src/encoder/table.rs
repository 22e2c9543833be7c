use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// A learned absolute position table (`L × d`) with a frozen/learnable flag
/// per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionEmbeddingMatrix {
    rows: Matrix,
    frozen: Vec<bool>,
}

impl PositionEmbeddingMatrix {
    /// Wraps `rows` with every row frozen.
    pub fn frozen(rows: Matrix) -> Self {
        let frozen = vec![true; rows.rows()];
        Self { rows, frozen }
    }

    pub fn with_flags(rows: Matrix, frozen: Vec<bool>) -> Result<Self> {
        if frozen.len() != rows.rows() {
            return Err(Error::Dimension(format!(
                "{} frozen flags for {} position rows",
                frozen.len(),
                rows.rows()
            )));
        }
        Ok(Self { rows, frozen })
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.rows.row(i)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.rows
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.rows
    }

    pub fn is_frozen(&self, i: usize) -> bool {
        self.frozen[i]
    }

    pub fn frozen_flags(&self) -> &[bool] {
        &self.frozen
    }

    pub fn frozen_count(&self) -> usize {
        self.frozen.iter().filter(|f| **f).count()
    }

    pub fn learnable_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.frozen
            .iter()
            .enumerate()
            .filter(|(_, f)| !**f)
            .map(|(i, _)| i)
    }
}
