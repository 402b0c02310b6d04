//! Invertible building blocks of a conditional flow.
//!
//! Every transform maps base-side coordinates `u` to data-side coordinates `x`
//! (`forward`) and back (`inverse`), reporting the per-row log absolute
//! Jacobian determinant of the direction that was evaluated.

mod batchnorm;
mod coupling;
mod maf;
pub mod nets;

pub use batchnorm::{BatchNormMode, InvertibleBatchNorm, DEFAULT_EPS, DEFAULT_MOMENTUM};
pub use coupling::{CouplingLayer, Parity};
pub use maf::MafLayer;

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, ParamSet, Tape, Var};

/// Default bound on log-scales, applied as `c · tanh(a / c)`.
pub const DEFAULT_ALPHA_CLAMP: f64 = 5.0;

/// Output of one transform evaluated on a tape.
#[derive(Clone, Copy, Debug)]
pub struct Pass {
    pub out: Var,
    /// `n x 1` log-determinants.
    pub logdet: Var,
    /// Batch `(mean, variance)` when a training-mode batch norm normalised.
    pub stats: Option<(Var, Var)>,
}

impl Pass {
    pub(crate) fn new(out: Var, logdet: Var) -> Self {
        Pass { out, logdet, stats: None }
    }
}

/// Reverses the coordinate order; volume preserving.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReversePermutation {
    pub dim: usize,
}

impl ReversePermutation {
    pub fn new(dim: usize) -> Self {
        ReversePermutation { dim }
    }

    fn apply_taped(&self, tape: &mut Tape, v: Var) -> Pass {
        let (rows, _) = tape.shape(v);
        let order: Vec<usize> = (0..self.dim).rev().collect();
        let out = tape.select_cols(v, &order);
        let logdet = tape.constant(DenseMatrix::zeros(rows, 1));
        Pass::new(out, logdet)
    }

    /// Reversed columns (the permutation is its own inverse).
    pub fn apply(&self, v: &DenseMatrix) -> Result<DenseMatrix> {
        check_cols("reverse permutation", v, self.dim)?;
        let order: Vec<usize> = (0..self.dim).rev().collect();
        Ok(v.select_cols(&order))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Transform {
    Maf(MafLayer),
    Coupling(CouplingLayer),
    Reverse(ReversePermutation),
    BatchNorm(InvertibleBatchNorm),
}

impl Transform {
    pub fn dim(&self) -> usize {
        match self {
            Transform::Maf(l) => l.dim,
            Transform::Coupling(l) => l.dim,
            Transform::Reverse(l) => l.dim,
            Transform::BatchNorm(l) => l.dim,
        }
    }

    /// Context width consumed by this layer, `None` if it ignores the context.
    pub fn context_dim(&self) -> Option<usize> {
        match self {
            Transform::Maf(l) => Some(l.context_dim),
            Transform::Coupling(l) => Some(l.context_dim),
            Transform::Reverse(_) | Transform::BatchNorm(_) => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Transform::Maf(_) => "masked autoregressive layer",
            Transform::Coupling(_) => "affine coupling layer",
            Transform::Reverse(_) => "reverse permutation",
            Transform::BatchNorm(_) => "batch normalization",
        }
    }

    /// Base-to-data direction.
    pub fn forward_taped(&self, params: &ParamSet, tape: &mut Tape, u: Var, ctx: Option<Var>) -> Result<Pass> {
        Ok(match self {
            Transform::Maf(l) => l.forward_taped(params, tape, u, ctx_for(l.context_dim, ctx)),
            Transform::Coupling(l) => l.forward_taped(params, tape, u, ctx_for(l.context_dim, ctx)),
            Transform::Reverse(l) => l.apply_taped(tape, u),
            Transform::BatchNorm(l) => l.denormalize_taped(tape, u),
        })
    }

    /// Data-to-base direction.
    pub fn inverse_taped(&self, params: &ParamSet, tape: &mut Tape, x: Var, ctx: Option<Var>) -> Result<Pass> {
        match self {
            Transform::Maf(l) => Ok(l.inverse_taped(params, tape, x, ctx_for(l.context_dim, ctx))),
            Transform::Coupling(l) => Ok(l.inverse_taped(params, tape, x, ctx_for(l.context_dim, ctx))),
            Transform::Reverse(l) => Ok(l.apply_taped(tape, x)),
            Transform::BatchNorm(l) => l.normalize_taped(tape, x),
        }
    }

    /// Eager base-to-data evaluation: `(x, per-row logdet)`.
    pub fn forward(&self, params: &ParamSet, u: &DenseMatrix, y: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>)> {
        self.eager(params, u, y, true)
    }

    /// Eager data-to-base evaluation: `(u, per-row logdet)`.
    pub fn inverse(&self, params: &ParamSet, x: &DenseMatrix, y: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>)> {
        self.eager(params, x, y, false)
    }

    fn eager(&self, params: &ParamSet, v: &DenseMatrix, y: &DenseMatrix, forward: bool) -> Result<(DenseMatrix, Vec<f64>)> {
        check_cols(self.name(), v, self.dim())?;
        let mut tape = Tape::new();
        let vv = tape.constant(v.clone());
        let ctx = match self.context_dim() {
            Some(c) if c > 0 => {
                check_context(self.name(), y, v.rows(), c)?;
                Some(tape.constant(y.clone()))
            }
            _ => None,
        };
        let pass = if forward {
            self.forward_taped(params, &mut tape, vv, ctx)?
        } else {
            self.inverse_taped(params, &mut tape, vv, ctx)?
        };
        let out = tape.value(pass.out).clone();
        let logdet = tape.value(pass.logdet).data().to_vec();
        ensure_finite(self.name(), &out, &logdet)?;
        Ok((out, logdet))
    }
}

fn ctx_for(context_dim: usize, ctx: Option<Var>) -> Option<Var> {
    if context_dim == 0 {
        None
    } else {
        ctx
    }
}

pub(crate) fn check_cols(what: &str, v: &DenseMatrix, dim: usize) -> Result<()> {
    if v.cols() != dim {
        return Err(Error::shape(format!(
            "{what}: expected {dim} columns, got {}",
            v.cols()
        )));
    }
    Ok(())
}

pub(crate) fn check_context(what: &str, y: &DenseMatrix, rows: usize, context_dim: usize) -> Result<()> {
    if y.cols() != context_dim || y.rows() != rows {
        return Err(Error::shape(format!(
            "{what}: expected a {rows}x{context_dim} context, got {}x{}",
            y.rows(),
            y.cols()
        )));
    }
    Ok(())
}

pub(crate) fn ensure_finite(layer: &str, out: &DenseMatrix, logdet: &[f64]) -> Result<()> {
    if !out.is_finite() {
        return Err(Error::Numeric { layer: layer.to_string(), detail: "output".into() });
    }
    if logdet.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric { layer: layer.to_string(), detail: "log-determinant".into() });
    }
    Ok(())
}
