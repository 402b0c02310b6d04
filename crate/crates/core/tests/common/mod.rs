//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use fpn_core::flow::{FlowFamily, FlowModel, FlowSpec};
use fpn_core::numerics::{DenseMatrix, Rng};
use nalgebra::DMatrix;

/// Central-difference Jacobian of a row map, `d_out × d_in`.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> DMatrix<f64> {
    let d = x.len();
    let probe = f(x);
    let mut jac = DMatrix::zeros(probe.len(), d);
    for j in 0..d {
        let mut p = x.to_vec();
        let mut m = x.to_vec();
        p[j] += h;
        m[j] -= h;
        let (fp, fm) = (f(&p), f(&m));
        for i in 0..probe.len() {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

pub fn log_abs_det(jac: &DMatrix<f64>) -> f64 {
    jac.clone().lu().determinant().abs().ln()
}

/// A flow with non-trivial parameters: fresh init plus `N(0, noise²)` on every
/// parameter.
pub fn random_flow(family: FlowFamily, dim: usize, ctx: usize, hidden: usize, noise: f64, rng: &mut Rng) -> FlowModel {
    let spec = match family {
        FlowFamily::Maf => FlowSpec::c_maf_5(),
        FlowFamily::RealNvp => FlowSpec::c_rnvp_5(),
    }
    .with_hidden(hidden);
    let mut flow = FlowModel::build(dim, ctx, &spec, rng).unwrap();
    flow.params_mut().perturb(rng, noise);
    flow
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.standard_normal())
}

/// Per-dimension Gaussian naive Bayes with class-frequency priors.
pub struct NaiveBayes {
    log_prior: Vec<f64>,
    means: Vec<Vec<f64>>,
    vars: Vec<Vec<f64>>,
}

impl NaiveBayes {
    pub fn fit(z: &DenseMatrix, labels: &[usize], classes: usize) -> Self {
        let d = z.cols();
        let mut counts = vec![0.0; classes];
        let mut means = vec![vec![0.0; d]; classes];
        let mut vars = vec![vec![0.0; d]; classes];
        for (row, &y) in z.iter_rows().zip(labels) {
            counts[y] += 1.0;
            for (m, v) in means[y].iter_mut().zip(row) {
                *m += v;
            }
        }
        for c in 0..classes {
            means[c].iter_mut().for_each(|m| *m /= counts[c]);
        }
        for (row, &y) in z.iter_rows().zip(labels) {
            for j in 0..d {
                vars[y][j] += (row[j] - means[y][j]).powi(2);
            }
        }
        for c in 0..classes {
            vars[c].iter_mut().for_each(|v| *v = *v / counts[c] + 1e-9);
        }
        let n = labels.len() as f64;
        NaiveBayes { log_prior: counts.iter().map(|c| (c / n).ln()).collect(), means, vars }
    }

    pub fn predict(&self, z: &DenseMatrix) -> Vec<usize> {
        z.iter_rows()
            .map(|row| {
                let score = |c: usize| {
                    self.log_prior[c]
                        + row
                            .iter()
                            .zip(&self.means[c])
                            .zip(&self.vars[c])
                            .map(|((x, m), v)| -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x - m).powi(2) / v))
                            .sum::<f64>()
                };
                let mut best = 0;
                for c in 1..self.log_prior.len() {
                    if score(c) > score(best) {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

pub fn accuracy(a: &[usize], b: &[usize]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

pub fn argmax_rows(m: &DenseMatrix) -> Vec<usize> {
    m.iter_rows()
        .map(|r| r.iter().enumerate().fold(0, |b, (i, v)| if *v > r[b] { i } else { b }))
        .collect()
}
