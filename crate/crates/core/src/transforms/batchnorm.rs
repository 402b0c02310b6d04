use super::Pass;
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    /// Normalise with batch statistics and report them for running averages.
    Training,
    /// Normalise with running statistics only.
    Frozen,
}

/// Per-dimension normalisation `(v - m) / sqrt(σ² + eps)` without learned
/// scale or shift.
///
/// The normalising direction maps data towards the base distribution; its
/// inverse always uses the running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct InvertibleBatchNorm {
    pub dim: usize,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub mode: BatchNormMode,
}

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPS: f64 = 1e-5;

impl InvertibleBatchNorm {
    pub fn new(dim: usize) -> Self {
        InvertibleBatchNorm {
            dim,
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
            mode: BatchNormMode::Training,
        }
    }

    /// A frozen layer with the given running statistics.
    pub fn frozen(running_mean: Vec<f64>, running_var: Vec<f64>, eps: f64) -> Self {
        InvertibleBatchNorm {
            dim: running_mean.len(),
            running_mean,
            running_var,
            momentum: DEFAULT_MOMENTUM,
            eps,
            mode: BatchNormMode::Frozen,
        }
    }

    fn running_inv_std(&self) -> Vec<f64> {
        self.running_var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect()
    }

    pub(crate) fn normalize_taped(&self, tape: &mut Tape, v: Var) -> Result<Pass> {
        let (rows, _) = tape.shape(v);
        match self.mode {
            BatchNormMode::Training => {
                if rows < 2 {
                    return Err(Error::Precondition(format!(
                        "batch norm in training mode needs at least 2 rows, got {rows}"
                    )));
                }
                let mean = tape.mean_rows(v);
                let neg_mean = tape.neg(mean);
                let centered = tape.add_row(v, neg_mean);
                let sq = tape.square(centered);
                let var = tape.mean_rows(sq);
                let shifted = tape.add_scalar(var, self.eps);
                let inv_std = tape.powf(shifted, -0.5);
                let out = tape.mul_row(centered, inv_std);
                let log_inv_std = tape.log(inv_std);
                let total = tape.sum_cols(log_inv_std);
                let logdet = tape.broadcast_rows(total, rows);
                Ok(Pass { out, logdet, stats: Some((mean, var)) })
            }
            BatchNormMode::Frozen => {
                let inv_std = self.running_inv_std();
                let neg_mean = tape.constant(DenseMatrix::from_fn(1, self.dim, |_, c| -self.running_mean[c]));
                let scale = tape.constant(DenseMatrix::row_vector(&inv_std));
                let centered = tape.add_row(v, neg_mean);
                let out = tape.mul_row(centered, scale);
                let ld: f64 = inv_std.iter().map(|s| s.ln()).sum();
                let logdet = tape.constant(DenseMatrix::filled(rows, 1, ld));
                Ok(Pass::new(out, logdet))
            }
        }
    }

    pub(crate) fn denormalize_taped(&self, tape: &mut Tape, x: Var) -> Pass {
        let (rows, _) = tape.shape(x);
        let std: Vec<f64> = self.running_var.iter().map(|v| (v + self.eps).sqrt()).collect();
        let scale = tape.constant(DenseMatrix::row_vector(&std));
        let mean = tape.constant(DenseMatrix::row_vector(&self.running_mean));
        let scaled = tape.mul_row(x, scale);
        let out = tape.add_row(scaled, mean);
        let ld: f64 = std.iter().map(|s| s.ln()).sum();
        let logdet = tape.constant(DenseMatrix::filled(rows, 1, ld));
        Pass::new(out, logdet)
    }

    /// Folds one batch's statistics into the running averages.
    pub fn absorb(&mut self, batch_mean: &DenseMatrix, batch_var: &DenseMatrix) {
        let m = self.momentum;
        for (r, b) in self.running_mean.iter_mut().zip(batch_mean.data()) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in self.running_var.iter_mut().zip(batch_var.data()) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}
