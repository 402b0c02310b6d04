use std::f64::consts::PI;

use super::DenseMatrix;
use crate::error::{Error, Result};

/// `0.5 * ln(2π)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Per-row log density of the standard normal on ℝ^D:
/// `-D/2 ln(2π) - ½ Σ u_i²`.
pub fn standard_normal_logpdf(u: &DenseMatrix) -> Result<Vec<f64>> {
    if !u.is_finite() {
        return Err(Error::Domain("standard normal log-density of a non-finite input".into()));
    }
    let d = u.cols() as f64;
    Ok(u.iter_rows()
        .map(|r| -d * HALF_LN_2PI - 0.5 * r.iter().map(|v| v * v).sum::<f64>())
        .collect())
}

/// Differential entropy of `N(0, I_D)`: `D/2 ln(2πe)`.
pub fn standard_normal_entropy(dim: usize) -> f64 {
    0.5 * dim as f64 * (2.0 * PI * std::f64::consts::E).ln()
}
