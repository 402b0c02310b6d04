//! Latent datasets, the Adam optimiser and the conditional NLL training loop.

use std::path::PathBuf;

use crate::autoencoder::Autoencoder;
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::numerics::{DenseMatrix, ParamSet, Rng, Tape};
use crate::tasks::ClassPrior;

/// Paired latents and attribute vectors with a fixed train/validation split.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDataset {
    z: DenseMatrix,
    y: DenseMatrix,
    train: Vec<usize>,
    validation: Vec<usize>,
}

impl LatentDataset {
    /// Splits rows by a seeded shuffle; the first `round(N · validation_fraction)`
    /// shuffled rows (at least one, at most `N - 1`) become the validation set.
    pub fn new(z: DenseMatrix, y: DenseMatrix, validation_fraction: f64, seed: u64) -> Result<Self> {
        if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction must lie in (0, 1), got {validation_fraction}"
            )));
        }
        let n = z.rows();
        if n < 2 {
            return Err(Error::Precondition("a latent dataset needs at least two rows".into()));
        }
        let order = Rng::seed_from(seed).permutation(n);
        let n_val = ((n as f64 * validation_fraction).round() as usize).clamp(1, n - 1);
        let mut validation = order[..n_val].to_vec();
        let mut train = order[n_val..].to_vec();
        validation.sort_unstable();
        train.sort_unstable();
        Self::from_split(z, y, train, validation)
    }

    /// Uses an explicit split, which must be disjoint and cover every row.
    pub fn from_split(z: DenseMatrix, y: DenseMatrix, train: Vec<usize>, validation: Vec<usize>) -> Result<Self> {
        if z.rows() != y.rows() {
            return Err(Error::shape(format!(
                "{} latents but {} attribute rows",
                z.rows(),
                y.rows()
            )));
        }
        let mut seen = vec![false; z.rows()];
        for &i in train.iter().chain(&validation) {
            if i >= z.rows() || seen[i] {
                return Err(Error::Precondition(format!("split index {i} is out of range or repeated")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Precondition("split does not cover every row".into()));
        }
        Ok(LatentDataset { z, y, train, validation })
    }

    pub fn z(&self) -> &DenseMatrix {
        &self.z
    }

    pub fn y(&self) -> &DenseMatrix {
        &self.y
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn validation_indices(&self) -> &[usize] {
        &self.validation
    }

    pub fn len(&self) -> usize {
        self.z.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.rows() == 0
    }

    pub fn latent_dim(&self) -> usize {
        self.z.cols()
    }

    pub fn context_dim(&self) -> usize {
        self.y.cols()
    }

    pub fn train_z(&self) -> DenseMatrix {
        self.z.select_rows(&self.train)
    }

    pub fn train_y(&self) -> DenseMatrix {
        self.y.select_rows(&self.train)
    }

    pub fn validation_z(&self) -> DenseMatrix {
        self.z.select_rows(&self.validation)
    }

    pub fn validation_y(&self) -> DenseMatrix {
        self.y.select_rows(&self.validation)
    }

    /// Whether every attribute row has exactly one `1.0` and zeros elsewhere.
    pub fn is_one_hot(&self) -> bool {
        is_one_hot(&self.y)
    }
}

pub(crate) fn is_one_hot(y: &DenseMatrix) -> bool {
    y.cols() > 0
        && y.iter_rows().all(|r| {
            r.iter().filter(|&&v| v == 1.0).count() == 1 && r.iter().all(|&v| v == 0.0 || v == 1.0)
        })
}

/// Encodes `x` with a frozen base model and pairs the codes with `y`.
pub fn build_latent_dataset(
    model: &Autoencoder,
    x: &DenseMatrix,
    y: &DenseMatrix,
    validation_fraction: f64,
    seed: u64,
) -> Result<LatentDataset> {
    if !model.is_frozen() {
        return Err(Error::Precondition(
            "latent datasets must be built from a frozen base model".into(),
        ));
    }
    if x.rows() != y.rows() {
        return Err(Error::shape(format!("{} objects but {} attribute rows", x.rows(), y.rows())));
    }
    let z = model.encode(x)?;
    LatentDataset::new(z, y.clone(), validation_fraction, seed)
}

/// Bias-corrected Adam with `β1 = 0.9`, `β2 = 0.999`, `ε = 1e-8`.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<DenseMatrix>,
    second: Vec<DenseMatrix>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter from its gradient.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[DenseMatrix]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| DenseMatrix::zeros(g.rows(), g.cols())).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [DenseMatrix], max_norm: f64) -> f64 {
    let norm = grads.iter().map(DenseMatrix::frobenius_norm_sq).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub validation_fraction: f64,
    pub patience: usize,
    /// Where to write the best-validation model during training.
    pub checkpoint_path: Option<PathBuf>,
    /// Global L2 gradient-norm bound; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 256,
            learning_rate: 1e-3,
            seed: 0,
            validation_fraction: 0.1,
            patience: 10,
            checkpoint_path: None,
            grad_clip: Some(5.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation NLL, in eval mode.
    pub model: FlowModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_nll: f64,
}

/// `epoch,train_nll,val_nll` with shortest round-trip float formatting.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_nll,val_nll\n");
    for r in history {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.train_nll, r.val_nll));
    }
    out
}

/// Fits `model` to `ds` by minibatch conditional NLL with Adam.
///
/// Keeps the best-validation parameters and stops after `patience` epochs
/// without improvement. Batch norms use batch statistics for training steps and
/// running statistics for every validation evaluation. For one-hot datasets the
/// training-split class frequencies are stored on the returned model.
pub fn train_flow(mut model: FlowModel, ds: &LatentDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if model.dim() != ds.latent_dim() || model.context_dim() != ds.context_dim() {
        return Err(Error::shape(format!(
            "flow is {}-d with {}-d context, dataset has {}-d latents and {}-d attributes",
            model.dim(),
            model.context_dim(),
            ds.latent_dim(),
            ds.context_dim()
        )));
    }
    if model.has_batch_norm() && cfg.batch_size < 2 {
        return Err(Error::Config("batch_size must be at least 2 with batch normalization".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if ds.train_indices().is_empty() || ds.validation_indices().is_empty() {
        return Err(Error::Precondition("both splits must be non-empty".into()));
    }

    let train_y = ds.train_y();
    if is_one_hot(&train_y) {
        model.set_class_prior(Some(ClassPrior::from_one_hot(&train_y)?));
    }
    let (val_z, val_y) = (ds.validation_z(), ds.validation_y());

    let mut rng = Rng::seed_from(cfg.seed);
    let mut adam = Adam::new(cfg.learning_rate);
    let mut history = Vec::new();
    let mut best: Option<(FlowModel, usize, f64)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        model.set_training(true);
        let mut order = ds.train_indices().to_vec();
        rng.shuffle(&mut order);
        let (mut loss_sum, mut rows_seen) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if model.has_batch_norm() && chunk.len() < 2 {
                continue;
            }
            let mut tape = Tape::new();
            let z = tape.constant(ds.z().select_rows(chunk));
            let y = tape.constant(ds.y().select_rows(chunk));
            let (loss, trace) = match model.nll_taped(&mut tape, z, y) {
                Ok(v) => v,
                Err(Error::Numeric { .. }) => {
                    return Err(Error::Diverged { epoch, batch: b, loss: f64::NAN });
                }
                Err(e) => return Err(e),
            };
            let value = tape.value(loss).get(0, 0);
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, batch: b, loss: value });
            }
            let mut grads = tape.backward(loss)?.for_params(model.params());
            if let Some(max) = cfg.grad_clip {
                clip_global_norm(&mut grads, max);
            }
            adam.step(model.params_mut(), &grads);
            model.absorb_batch_stats(&tape, &trace);
            loss_sum += value * chunk.len() as f64;
            rows_seen += chunk.len();
        }

        model.set_training(false);
        let val_nll = match model.nll(&val_z, &val_y) {
            Ok(v) if v.is_finite() => v,
            Ok(v) => return Err(Error::Diverged { epoch, batch: usize::MAX, loss: v }),
            Err(Error::Numeric { .. }) => return Err(Error::Diverged { epoch, batch: usize::MAX, loss: f64::NAN }),
            Err(e) => return Err(e),
        };
        history.push(EpochRecord { epoch, train_nll: loss_sum / rows_seen.max(1) as f64, val_nll });

        if best.as_ref().is_none_or(|(_, _, b)| val_nll < *b) {
            if let Some(path) = &cfg.checkpoint_path {
                crate::io::save_flow(path, &model)?;
            }
            best = Some((model.clone(), epoch, val_nll));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let (model, best_epoch, best_val_nll) = match best {
        Some(b) => b,
        None => {
            model.set_training(false);
            (model, 0, f64::NAN)
        }
    };
    Ok(TrainOutcome { model, history, best_epoch, best_val_nll })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{one_hot, FlowSpec};

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut params = ParamSet::new();
        params.add(DenseMatrix::row_vector(&[1.0, -2.0]));
        let before = params.clone();
        let mut adam = Adam::new(0.1);
        for _ in 0..10 {
            adam.step(&mut params, &[DenseMatrix::zeros(1, 2)]);
        }
        assert_eq!(params, before);
    }

    #[test]
    fn adam_constant_gradient_steps_by_lr_sign() {
        let mut params = ParamSet::new();
        params.add(DenseMatrix::row_vector(&[0.0, 0.0]));
        let g = DenseMatrix::row_vector(&[3.0, -0.5]);
        let mut adam = Adam::new(0.01);
        let mut last = params.get(crate::numerics::ParamId(0)).clone();
        let mut step = vec![0.0; 2];
        for _ in 0..200 {
            adam.step(&mut params, std::slice::from_ref(&g));
            let now = params.get(crate::numerics::ParamId(0)).clone();
            step = now.data().iter().zip(last.data()).map(|(a, b)| a - b).collect();
            last = now;
        }
        assert!((step[0] + 0.01).abs() < 1e-6, "{step:?}");
        assert!((step[1] - 0.01).abs() < 1e-6, "{step:?}");
    }

    /// Reference recursion for Adam on `w²`, written out independently.
    fn reference_adam_quadratic(w0: f64, lr: f64, steps: usize) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
        for t in 1..=steps {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        w
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let expected = reference_adam_quadratic(1.0, 0.05, 500);
        assert!(expected.abs() < 1e-3);
        let mut params = ParamSet::new();
        let id = params.add(DenseMatrix::row_vector(&[1.0]));
        let mut adam = Adam::new(0.05);
        for _ in 0..500 {
            let w = params.get(id).get(0, 0);
            adam.step(&mut params, &[DenseMatrix::row_vector(&[2.0 * w])]);
        }
        let w = params.get(id).get(0, 0);
        assert!(w.abs() < 1e-3);
        assert!((w - expected).abs() < 1e-15);
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut g = vec![DenseMatrix::row_vector(&[3.0]), DenseMatrix::row_vector(&[4.0])];
        let norm = clip_global_norm(&mut g, 1.0);
        assert_eq!(norm, 5.0);
        assert!((g[0].get(0, 0) - 0.6).abs() < 1e-15);
        assert!((g[1].get(0, 0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn split_is_disjoint_cover_and_seeded() {
        let z = DenseMatrix::from_fn(50, 2, |r, c| (r * 2 + c) as f64);
        let y = one_hot(&(0..50).map(|i| i % 3).collect::<Vec<_>>(), 3).unwrap();
        let a = LatentDataset::new(z.clone(), y.clone(), 0.1, 5).unwrap();
        let b = LatentDataset::new(z.clone(), y.clone(), 0.1, 5).unwrap();
        assert_eq!(a.validation_indices(), b.validation_indices());
        assert_eq!(a.validation_indices().len(), 5);
        let mut all: Vec<usize> = a.train_indices().iter().chain(a.validation_indices()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert!(a.is_one_hot());
        let c = LatentDataset::new(z, y, 0.1, 6).unwrap();
        assert_ne!(a.validation_indices(), c.validation_indices());
    }

    #[test]
    fn bad_splits_are_rejected() {
        let z = DenseMatrix::zeros(4, 1);
        let y = DenseMatrix::zeros(4, 1);
        assert!(LatentDataset::from_split(z.clone(), y.clone(), vec![0, 1], vec![1, 2, 3]).is_err());
        assert!(LatentDataset::from_split(z.clone(), y.clone(), vec![0], vec![1, 2]).is_err());
        assert!(LatentDataset::new(z.clone(), y.clone(), 1.0, 0).is_err());
        assert!(LatentDataset::from_split(z, DenseMatrix::zeros(3, 1), vec![0], vec![1, 2]).is_err());
    }

    #[test]
    fn unfrozen_base_is_rejected() {
        let ae = Autoencoder::new(crate::autoencoder::AutoencoderVariant::Ae, 3, 2, &[4], &mut Rng::seed_from(0)).unwrap();
        let err = build_latent_dataset(&ae, &DenseMatrix::zeros(4, 3), &DenseMatrix::zeros(4, 1), 0.25, 0).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut rng = Rng::seed_from(1);
        let z = DenseMatrix::from_fn(40, 2, |_, _| rng.standard_normal());
        let y = one_hot(&(0..40).map(|i| i % 2).collect::<Vec<_>>(), 2).unwrap();
        let ds = LatentDataset::new(z, y, 0.25, 0).unwrap();
        let flow = FlowModel::build(2, 2, &FlowSpec::c_maf_5().with_hidden(8), &mut rng).unwrap();
        let before = flow.params().clone();
        let cfg = TrainConfig { epochs: 5, batch_size: 8, learning_rate: 0.0, patience: 100, ..TrainConfig::default() };
        let out = train_flow(flow, &ds, &cfg).unwrap();
        assert_eq!(out.model.params(), &before);
        // Batches are reshuffled each epoch, so only the summation order changes.
        let first = out.history[0];
        assert!(out.history.iter().all(|r| (r.train_nll - first.train_nll).abs() < 1e-12 && r.val_nll == first.val_nll));
    }

    #[test]
    fn history_csv_format() {
        let csv = history_csv(&[EpochRecord { epoch: 1, train_nll: 1.5, val_nll: 0.25 }]);
        assert_eq!(csv, "epoch,train_nll,val_nll\n1,1.5,0.25\n");
    }
}
