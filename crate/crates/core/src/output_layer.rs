//! One ensemble component: a linear read-out over the broad representation
//! whose weights solve the ridge problem on every chunk it has trained on.

use serde::{Deserialize, Serialize};

use crate::error::{BelsError, Result};
use crate::linalg::{ridge_solve, Matrix, UpperCholesky};

/// Chunks with fewer than `width / INCREMENTAL_RATIO` rows update the
/// factor in place instead of refactoring.
pub const INCREMENTAL_RATIO: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputLayerInstance {
    pub id: u64,
    /// Running `A^T A`.
    pub a_t_acc: Matrix,
    /// Running `A^T Y`.
    pub d_t_acc: Matrix,
    pub w_out: Matrix,
    pub lambda_ridge: f64,
    pub chunks_trained: usize,
    pub last_accuracy: f64,
    /// Factor of `A_t + lambda I` when it is being updated in place.
    pub factor: Option<UpperCholesky>,
}

impl OutputLayerInstance {
    pub fn new(id: u64, width: usize, n_classes: usize, lambda_ridge: f64) -> Self {
        Self {
            id,
            a_t_acc: Matrix::zeros(width, width),
            d_t_acc: Matrix::zeros(width, n_classes),
            w_out: Matrix::zeros(width, n_classes),
            lambda_ridge,
            chunks_trained: 0,
            last_accuracy: 0.0,
            factor: None,
        }
    }

    pub fn width(&self) -> usize {
        self.a_t_acc.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.d_t_acc.cols()
    }

    pub fn is_trained(&self) -> bool {
        self.chunks_trained > 0
    }

    /// Adds the chunk to the accumulators and re-solves the output weights.
    pub fn train(&mut self, a_k: &Matrix, y_k: &Matrix) -> Result<()> {
        if a_k.rows() != y_k.rows() || a_k.cols() != self.width() || y_k.cols() != self.n_classes()
        {
            return Err(BelsError::shape(
                "train_output_layer",
                format!(
                    "A {:?}, Y {:?} for width {} and {} classes",
                    a_k.shape(),
                    y_k.shape(),
                    self.width(),
                    self.n_classes()
                ),
            ));
        }
        check_one_hot(y_k, "train_output_layer")?;
        let mut gram = Matrix::zeros(self.width(), self.width());
        gram.add_gram(a_k)?;
        let cross = a_k.t_matmul(y_k)?;
        self.absorb(a_k, &gram, &cross)
    }

    /// Same as [`train`](Self::train) given the chunk's precomputed `A^T A`
    /// and `A^T Y`, which lets an ensemble share them across instances.
    /// Small chunks update the stored factor by rank-one steps; otherwise
    /// the system is refactored from the accumulators.
    pub fn absorb(&mut self, a_k: &Matrix, gram_k: &Matrix, cross_k: &Matrix) -> Result<()> {
        self.a_t_acc.add_assign(gram_k)?;
        self.d_t_acc.add_assign(cross_k)?;
        let w = self.width();
        let incremental = a_k.rows() * INCREMENTAL_RATIO < w;
        if incremental && self.factor.is_none() && self.chunks_trained == 0 {
            self.factor = UpperCholesky::scaled_identity(w, self.lambda_ridge);
        } else if !incremental || self.factor.is_none() {
            self.factor = None;
        }
        self.w_out = match self.factor.as_mut() {
            Some(f) if incremental => {
                f.rank_update(a_k)?;
                f.solve(&self.d_t_acc)?
            }
            _ => {
                let mut system = self.a_t_acc.clone();
                for i in 0..w {
                    system.set(i, i, system.get(i, i) + self.lambda_ridge);
                }
                match UpperCholesky::factor(&system) {
                    Some(f) => {
                        let sol = f.solve(&self.d_t_acc)?;
                        if incremental {
                            self.factor = Some(f);
                        }
                        sol
                    }
                    None => ridge_solve(&self.a_t_acc, &self.d_t_acc, self.lambda_ridge)?,
                }
            }
        };
        self.chunks_trained += 1;
        Ok(())
    }

    /// Score matrix `A_test W`.
    pub fn predict_scores(&self, a_test: &Matrix) -> Result<Matrix> {
        if a_test.cols() != self.w_out.rows() {
            return Err(BelsError::shape(
                "predict_scores",
                format!(
                    "A_test has {} columns, weights expect {}",
                    a_test.cols(),
                    self.w_out.rows()
                ),
            ));
        }
        a_test.matmul(&self.w_out)
    }
}

/// Every row must be a one-hot vector: entries in {0, 1} summing to 1.
pub fn check_one_hot(y: &Matrix, op: &'static str) -> Result<()> {
    for r in 0..y.rows() {
        let row = y.row(r);
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(BelsError::shape(
                op,
                format!("label row {r} is not one-hot: {row:?}"),
            ));
        }
    }
    Ok(())
}

/// Fraction of rows whose score argmax equals the label argmax.
pub fn score_accuracy(scores: &Matrix, y_true: &Matrix) -> Result<f64> {
    if scores.shape() != y_true.shape() {
        return Err(BelsError::shape(
            "score_accuracy",
            format!("scores {:?} vs labels {:?}", scores.shape(), y_true.shape()),
        ));
    }
    check_one_hot(y_true, "score_accuracy")?;
    if scores.rows() == 0 {
        return Ok(0.0);
    }
    let hits = (0..scores.rows())
        .filter(|&r| scores.row_argmax(r) == y_true.row_argmax(r))
        .count();
    Ok(hits as f64 / scores.rows() as f64)
}
