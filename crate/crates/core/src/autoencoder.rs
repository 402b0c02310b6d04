//! Dense autoencoder used as the frozen base model.
//!
//! Encoder `n -> h_1 -> … -> q` (VAE: `-> 2q` for `μ ‖ log σ²`), decoder mirrored
//! with a sigmoid output so reconstructions lie in `[0, 1]^n`. Hidden layers
//! use `tanh`.

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, ParamSet, Rng, Tape, Var};
use crate::trainer::{clip_global_norm, Adam};
use crate::transforms::nets::Dense;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoencoderVariant {
    Ae,
    Vae,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderConfig {
    pub variant: AutoencoderVariant,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    /// Weight of the KL term (VAE only).
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: Option<f64>,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            variant: AutoencoderVariant::Ae,
            latent_dim: 8,
            hidden: vec![64, 32],
            beta: 1.0,
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            grad_clip: Some(5.0),
        }
    }
}

/// One epoch of autoencoder training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AeEpoch {
    pub epoch: usize,
    /// Mean squared reconstruction error per entry.
    pub reconstruction_mse: f64,
    /// Mean KL divergence per row (zero for a plain autoencoder).
    pub kl: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    variant: AutoencoderVariant,
    input_dim: usize,
    latent_dim: usize,
    params: ParamSet,
    encoder: Vec<Dense>,
    decoder: Vec<Dense>,
    frozen: bool,
}

impl Autoencoder {
    pub fn new(
        variant: AutoencoderVariant,
        input_dim: usize,
        latent_dim: usize,
        hidden: &[usize],
        rng: &mut Rng,
    ) -> Result<Self> {
        if input_dim == 0 || latent_dim == 0 {
            return Err(Error::Config("autoencoder dimensions must be positive".into()));
        }
        let mut params = ParamSet::new();
        let enc_out = match variant {
            AutoencoderVariant::Ae => latent_dim,
            AutoencoderVariant::Vae => 2 * latent_dim,
        };
        let widths: Vec<usize> = std::iter::once(input_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(enc_out))
            .collect();
        let encoder = widths
            .windows(2)
            .map(|w| Dense::new(&mut params, rng, w[0], w[1], 1.0))
            .collect();
        let widths: Vec<usize> = std::iter::once(latent_dim)
            .chain(hidden.iter().rev().copied())
            .chain(std::iter::once(input_dim))
            .collect();
        let decoder = widths
            .windows(2)
            .map(|w| Dense::new(&mut params, rng, w[0], w[1], 1.0))
            .collect();
        Ok(Autoencoder { variant, input_dim, latent_dim, params, encoder, decoder, frozen: false })
    }

    pub(crate) fn from_parts(
        variant: AutoencoderVariant,
        input_dim: usize,
        latent_dim: usize,
        params: ParamSet,
        encoder: Vec<Dense>,
        decoder: Vec<Dense>,
        frozen: bool,
    ) -> Self {
        Autoencoder { variant, input_dim, latent_dim, params, encoder, decoder, frozen }
    }

    pub fn variant(&self) -> AutoencoderVariant {
        self.variant
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// Hidden layer widths of the encoder.
    pub fn hidden(&self) -> Vec<usize> {
        self.encoder[..self.encoder.len() - 1]
            .iter()
            .map(|d| d.outputs(&self.params))
            .collect()
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub(crate) fn encoder_layers(&self) -> &[Dense] {
        &self.encoder
    }

    pub(crate) fn decoder_layers(&self) -> &[Dense] {
        &self.decoder
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Excludes the parameters from any further training.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn checksum(&self) -> u64 {
        self.params.checksum()
    }

    fn mlp(&self, layers: &[Dense], tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        for (i, layer) in layers.iter().enumerate() {
            h = layer.apply(&self.params, tape, h);
            if i + 1 < layers.len() {
                h = tape.tanh(h);
            }
        }
        h
    }

    /// `(μ, log σ²)`; the second entry is `None` for a plain autoencoder.
    pub fn encode_taped(&self, tape: &mut Tape, x: Var) -> (Var, Option<Var>) {
        let out = self.mlp(&self.encoder, tape, x);
        match self.variant {
            AutoencoderVariant::Ae => (out, None),
            AutoencoderVariant::Vae => {
                let q = self.latent_dim;
                let mean = tape.select_cols(out, &(0..q).collect::<Vec<_>>());
                let logvar = tape.select_cols(out, &(q..2 * q).collect::<Vec<_>>());
                (mean, Some(logvar))
            }
        }
    }

    pub fn decode_taped(&self, tape: &mut Tape, z: Var) -> Var {
        let logits = self.mlp(&self.decoder, tape, z);
        tape.sigmoid(logits)
    }

    /// Deterministic latent code: the encoder output, or the posterior mean for a VAE.
    pub fn encode(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(self.encode_distribution(x)?.0)
    }

    /// `(μ, log σ²)`; for a plain autoencoder the log-variance is `None`.
    pub fn encode_distribution(&self, x: &DenseMatrix) -> Result<(DenseMatrix, Option<DenseMatrix>)> {
        if x.cols() != self.input_dim {
            return Err(Error::shape(format!(
                "encode: expected {} columns, got {}",
                self.input_dim,
                x.cols()
            )));
        }
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (mean, logvar) = self.encode_taped(&mut tape, xv);
        Ok((tape.value(mean).clone(), logvar.map(|v| tape.value(v).clone())))
    }

    pub fn decode(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
        if z.cols() != self.latent_dim {
            return Err(Error::shape(format!(
                "decode: expected {} columns, got {}",
                self.latent_dim,
                z.cols()
            )));
        }
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let out = self.decode_taped(&mut tape, zv);
        Ok(tape.value(out).clone())
    }

    /// `decode(encode(x))`.
    pub fn reconstruct(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.decode(&self.encode(x)?)
    }

    /// Trains in place. Fails if the model is frozen.
    pub fn fit(&mut self, data: &DenseMatrix, cfg: &AutoencoderConfig, rng: &mut Rng) -> Result<Vec<AeEpoch>> {
        if self.frozen {
            return Err(Error::Precondition("cannot train a frozen autoencoder".into()));
        }
        if data.cols() != self.input_dim {
            return Err(Error::shape(format!(
                "training data has {} columns, autoencoder expects {}",
                data.cols(),
                self.input_dim
            )));
        }
        if data.rows() == 0 {
            return Err(Error::Precondition("empty training set".into()));
        }
        if data.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain("autoencoder inputs must lie in [0, 1]".into()));
        }
        let batch_size = cfg.batch_size.max(1);
        let mut adam = Adam::new(cfg.learning_rate);
        let mut history = Vec::with_capacity(cfg.epochs);
        for epoch in 1..=cfg.epochs {
            let order = rng.permutation(data.rows());
            let (mut se, mut kl_sum) = (0.0, 0.0);
            for (b, chunk) in order.chunks(batch_size).enumerate() {
                let batch = data.select_rows(chunk);
                let mut tape = Tape::new();
                let (loss, sq_err, kl) = self.loss_taped(&mut tape, &batch, cfg.beta, rng);
                let value = tape.value(loss).get(0, 0);
                if !value.is_finite() {
                    return Err(Error::Diverged { epoch, batch: b, loss: value });
                }
                se += tape.value(sq_err).sum();
                if let Some(kl) = kl {
                    kl_sum += tape.value(kl).sum();
                }
                let mut grads = tape.backward(loss)?.for_params(&self.params);
                if let Some(max) = cfg.grad_clip {
                    clip_global_norm(&mut grads, max);
                }
                adam.step(&mut self.params, &grads);
            }
            history.push(AeEpoch {
                epoch,
                reconstruction_mse: se / data.len() as f64,
                kl: kl_sum / data.rows() as f64,
            });
        }
        Ok(history)
    }

    /// Mean over rows of `‖x - x̂‖² + β KL`; also returns the squared errors and
    /// the per-row KL terms.
    fn loss_taped(&self, tape: &mut Tape, batch: &DenseMatrix, beta: f64, rng: &mut Rng) -> (Var, Var, Option<Var>) {
        let x = tape.constant(batch.clone());
        let (mean, logvar) = self.encode_taped(tape, x);
        let (z, kl) = match logvar {
            None => (mean, None),
            Some(logvar) => {
                let eps = DenseMatrix::from_fn(batch.rows(), self.latent_dim, |_, _| rng.standard_normal());
                let eps = tape.constant(eps);
                let half = tape.scale(logvar, 0.5);
                let std = tape.exp(half);
                let noise = tape.mul(std, eps);
                let z = tape.add(mean, noise);
                // KL(N(μ, σ²) ‖ N(0, I)) = -½ Σ (1 + log σ² - μ² - σ²)
                let mu_sq = tape.square(mean);
                let var = tape.exp(logvar);
                let t = tape.sub(logvar, mu_sq);
                let t = tape.sub(t, var);
                let t = tape.add_scalar(t, 1.0);
                let per_row = tape.sum_cols(t);
                let kl = tape.scale(per_row, -0.5);
                (z, Some(kl))
            }
        };
        let recon = self.decode_taped(tape, z);
        let diff = tape.sub(recon, x);
        let sq = tape.square(diff);
        let per_row = tape.sum_cols(sq);
        let mut loss = tape.mean(per_row);
        if let Some(kl) = kl {
            let kl_mean = tape.mean(kl);
            let weighted = tape.scale(kl_mean, beta);
            loss = tape.add(loss, weighted);
        }
        (loss, sq, kl)
    }
}

/// Builds and trains an autoencoder on rows of `data` (values in `[0, 1]`).
/// The returned model is not frozen.
pub fn train_autoencoder(data: &DenseMatrix, cfg: &AutoencoderConfig, seed: u64) -> Result<(Autoencoder, Vec<AeEpoch>)> {
    let mut rng = Rng::seed_from(seed);
    let mut model = Autoencoder::new(cfg.variant, data.cols(), cfg.latent_dim, &cfg.hidden, &mut rng)?;
    let history = model.fit(data, cfg, &mut rng)?;
    Ok((model, history))
}
