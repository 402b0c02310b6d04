//! Invertibility and log-determinant checks for a trained flow.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::flow::FlowModel;
use crate::numerics::{standard_normal_sample, DenseMatrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowDiagnostics {
    pub rows: usize,
    /// `max |T⁻¹(T(u)) - u|` over all entries.
    pub roundtrip_max_abs: f64,
    /// `max |log|det J_T(u)| + log|det J_T⁻¹(T(u))||`.
    pub logdet_sum_max_abs: f64,
    /// Worst gap between the reported forward log-determinant and a central
    /// finite-difference Jacobian; `None` for dimensions above `fd_max_dim`.
    pub fd_logdet_max_abs: Option<f64>,
}

/// Central-difference Jacobian of `f` at `x` (one row).
pub fn finite_difference_jacobian(
    f: &dyn Fn(&DenseMatrix) -> Result<DenseMatrix>,
    x: &[f64],
    h: f64,
) -> Result<DMatrix<f64>> {
    let d = x.len();
    let mut jac = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut plus = x.to_vec();
        let mut minus = x.to_vec();
        plus[j] += h;
        minus[j] -= h;
        let fp = f(&DenseMatrix::row_vector(&plus))?;
        let fm = f(&DenseMatrix::row_vector(&minus))?;
        for i in 0..d {
            jac[(i, j)] = (fp.get(0, i) - fm.get(0, i)) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// `ln |det J|` of a square Jacobian via LU.
pub fn log_abs_det(jac: DMatrix<f64>) -> f64 {
    jac.lu().determinant().abs().ln()
}

/// Runs every check on `rows` base draws with random contexts
/// `y ~ U[0, 1)`, finite differences with step `h` when `dim <= fd_max_dim`.
pub fn flow_diagnostics(flow: &FlowModel, rows: usize, fd_max_dim: usize, h: f64, rng: &mut Rng) -> Result<FlowDiagnostics> {
    let u = standard_normal_sample(rng, rows, flow.dim());
    let y = DenseMatrix::from_fn(rows, flow.context_dim(), |_, _| rng.uniform());
    let (x, fwd) = flow.forward(&u, &y)?;
    let (back, inv) = flow.inverse(&x, &y)?;
    let roundtrip_max_abs = back.max_abs_diff(&u);
    let logdet_sum_max_abs = fwd.iter().zip(&inv).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
    let fd_logdet_max_abs = if flow.dim() <= fd_max_dim {
        let mut worst = 0.0f64;
        for (r, analytic) in fwd.iter().enumerate() {
            let yr = y.select_rows(&[r]);
            let f = |v: &DenseMatrix| flow.forward(v, &yr).map(|(x, _)| x);
            let jac = finite_difference_jacobian(&f, u.row(r), h)?;
            worst = worst.max((log_abs_det(jac) - analytic).abs());
        }
        Some(worst)
    } else {
        None
    };
    Ok(FlowDiagnostics { rows, roundtrip_max_abs, logdet_sum_max_abs, fd_logdet_max_abs })
}
