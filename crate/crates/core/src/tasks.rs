//! Conditional generation, Bayes classification and attribute manipulation.

use crate::autoencoder::Autoencoder;
use crate::error::{Error, Result};
use crate::flow::{one_hot_repeated, FlowModel};
use crate::numerics::{DenseMatrix, Rng};

/// Categorical prior over `K` classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPrior {
    probs: Vec<f64>,
}

impl ClassPrior {
    /// Normalises non-negative weights; at least one must be positive.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Domain("a class prior needs at least one class".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Domain(format!("prior weights must be finite and non-negative: {weights:?}")));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Domain("prior weights sum to zero".into()));
        }
        Ok(ClassPrior { probs: weights.into_iter().map(|w| w / total).collect() })
    }

    /// Takes probabilities as given; they must already sum to 1 within 1e-12.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|p| p.is_nan() || *p < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("not a probability vector: {probs:?}")));
        }
        Ok(ClassPrior { probs })
    }

    pub fn uniform(classes: usize) -> Result<Self> {
        Self::new(vec![1.0; classes])
    }

    /// Class frequencies of integer labels.
    pub fn empirical(labels: &[usize], classes: usize) -> Result<Self> {
        let mut counts = vec![0.0; classes];
        for &l in labels {
            if l >= classes {
                return Err(Error::Domain(format!("label {l} outside 0..{classes}")));
            }
            counts[l] += 1.0;
        }
        Self::new(counts)
    }

    /// Class frequencies of one-hot rows (column sums).
    pub fn from_one_hot(y: &DenseMatrix) -> Result<Self> {
        Self::new(y.col_means().into_data())
    }

    pub fn classes(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> Vec<f64> {
        self.probs.iter().map(|p| p.ln()).collect()
    }
}

fn check_classes(flow: &FlowModel, prior: &ClassPrior) -> Result<()> {
    if flow.context_dim() != prior.classes() {
        return Err(Error::Config(format!(
            "flow has {}-d context but the prior has {} classes",
            flow.context_dim(),
            prior.classes()
        )));
    }
    Ok(())
}

/// Unnormalised `log P(z|y_k) + log P(y_k)`, one column per class.
pub fn class_log_joint(flow: &FlowModel, prior: &ClassPrior, z: &DenseMatrix) -> Result<DenseMatrix> {
    check_classes(flow, prior)?;
    let k = prior.classes();
    let mut out = DenseMatrix::zeros(z.rows(), k);
    for (c, log_p) in prior.log_probs().into_iter().enumerate() {
        let y = one_hot_repeated(c, k, z.rows())?;
        for (r, lp) in flow.log_prob(z, &y)?.into_iter().enumerate() {
            out.set(r, c, if log_p == f64::NEG_INFINITY { log_p } else { lp + log_p });
        }
    }
    Ok(out)
}

/// Log posteriors `log P(y_k | z)`; each row log-sum-exps to zero.
pub fn class_log_posteriors(flow: &FlowModel, prior: &ClassPrior, z: &DenseMatrix) -> Result<DenseMatrix> {
    let mut joint = class_log_joint(flow, prior, z)?;
    log_normalize_rows(&mut joint);
    Ok(joint)
}

/// Subtracts each row's log-sum-exp in place.
pub fn log_normalize_rows(scores: &mut DenseMatrix) {
    for r in 0..scores.rows() {
        let row = scores.row_mut(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
}

/// Row-wise argmax with ties going to the lowest index.
pub fn argmax_rows(scores: &DenseMatrix) -> Vec<usize> {
    scores
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

pub fn classify(flow: &FlowModel, prior: &ClassPrior, z: &DenseMatrix) -> Result<Vec<usize>> {
    Ok(argmax_rows(&class_log_joint(flow, prior, z)?))
}

/// `K × K` counts, rows indexed by the true class.
pub fn confusion_matrix(truth: &[usize], predicted: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; classes]; classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        m[t][p] += 1;
    }
    m
}

pub fn accuracy(truth: &[usize], predicted: &[usize]) -> f64 {
    if truth.is_empty() {
        return f64::NAN;
    }
    truth.iter().zip(predicted).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

fn check_pair(flow: &FlowModel, base: &Autoencoder) -> Result<()> {
    if flow.dim() != base.latent_dim() {
        return Err(Error::Config(format!(
            "flow is {}-d but the base model's latent space is {}-d",
            flow.dim(),
            base.latent_dim()
        )));
    }
    Ok(())
}

/// Samples latents under `y` and decodes them.
pub fn conditional_generate(flow: &FlowModel, base: &Autoencoder, y: &DenseMatrix, rng: &mut Rng) -> Result<DenseMatrix> {
    check_pair(flow, base)?;
    if y.cols() != flow.context_dim() {
        return Err(Error::Config(format!(
            "attributes are {}-d but the flow expects {}-d context",
            y.cols(),
            flow.context_dim()
        )));
    }
    base.decode(&flow.sample(y, rng)?)
}

/// Maps latents to the base space under `y_src` and back under `y_dst`.
pub fn manipulate_latent(flow: &FlowModel, z: &DenseMatrix, y_src: &DenseMatrix, y_dst: &DenseMatrix) -> Result<DenseMatrix> {
    if y_src.shape() != y_dst.shape() || y_src.rows() != z.rows() {
        return Err(Error::shape(format!(
            "latents {:?}, source attributes {:?}, target attributes {:?}",
            z.shape(),
            y_src.shape(),
            y_dst.shape()
        )));
    }
    let (u, _) = flow.inverse(z, y_src)?;
    Ok(flow.forward(&u, y_dst)?.0)
}

pub fn manipulate_attributes(
    flow: &FlowModel,
    base: &Autoencoder,
    x: &DenseMatrix,
    y_src: &DenseMatrix,
    y_dst: &DenseMatrix,
) -> Result<DenseMatrix> {
    check_pair(flow, base)?;
    let z = base.encode(x)?;
    base.decode(&manipulate_latent(flow, &z, y_src, y_dst)?)
}
