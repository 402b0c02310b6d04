//! Conditional flows: an ordered stack of transforms over a standard normal base.
//!
//! Layers are stored in base-to-data order `T_1, …, T_K`. Sampling applies the
//! forwards in order; densities run the inverses from `T_K` down to `T_1` and
//! add up their log-determinants:
//!
//! `log p(z | y) = log N(T⁻¹(z | y); 0, I) + Σ_k log |det J_{T_k⁻¹}|`.

use crate::error::{Error, Result};
use crate::numerics::{standard_normal_sample, DenseMatrix, ParamSet, Rng, Tape, Var, HALF_LN_2PI};
use crate::tasks::ClassPrior;
use crate::transforms::nets::Dense;
use crate::transforms::{
    check_cols, check_context, BatchNormMode, CouplingLayer, InvertibleBatchNorm, MafLayer, Parity,
    ReversePermutation, Transform, DEFAULT_ALPHA_CLAMP,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowFamily {
    /// Reverse permutation + masked autoregressive layer per block.
    Maf,
    /// Affine coupling layers with alternating halves.
    #[serde(rename = "realnvp")]
    RealNvp,
}

/// Architecture of a flow, independent of its dimensions.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSpec {
    pub family: FlowFamily,
    pub layers: usize,
    pub blocks: usize,
    pub hidden: usize,
    pub alpha_clamp: f64,
    pub batch_norm: bool,
    /// Width of an optional linear layer applied to the context first.
    pub context_encoder: Option<usize>,
}

impl Default for FlowSpec {
    fn default() -> Self {
        FlowSpec::c_maf_5()
    }
}

impl FlowSpec {
    /// Five blocks of reverse permutation + MADE with two residual blocks.
    pub fn c_maf_5() -> Self {
        FlowSpec {
            family: FlowFamily::Maf,
            layers: 5,
            blocks: 2,
            hidden: 64,
            alpha_clamp: DEFAULT_ALPHA_CLAMP,
            batch_norm: false,
            context_encoder: None,
        }
    }

    /// Five coupling layers with alternating halves and two-block conditioners.
    pub fn c_rnvp_5() -> Self {
        FlowSpec { family: FlowFamily::RealNvp, ..FlowSpec::c_maf_5() }
    }

    /// Ten blocks of reverse permutation + MADE (five residual blocks) + batch norm.
    pub fn c_maf_10_bn() -> Self {
        FlowSpec { layers: 10, blocks: 5, batch_norm: true, ..FlowSpec::c_maf_5() }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }
}

/// Intermediate results of a data-to-base pass on a tape.
#[derive(Clone, Debug)]
pub struct InverseTrace {
    pub base: Var,
    /// Sum of all inverse log-determinants, `n x 1`.
    pub logdet: Var,
    /// Per-layer inverse log-determinants, indexed like [`FlowModel::layers`].
    pub layer_logdets: Vec<Var>,
    /// `(layer index, batch mean, batch variance)` of training-mode batch norms.
    pub batch_stats: Vec<(usize, Var, Var)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowModel {
    dim: usize,
    context_dim: usize,
    params: ParamSet,
    context_encoder: Option<Dense>,
    layers: Vec<Transform>,
    class_prior: Option<ClassPrior>,
}

impl FlowModel {
    /// The base distribution alone.
    pub fn empty(dim: usize, context_dim: usize) -> Self {
        FlowModel {
            dim,
            context_dim,
            params: ParamSet::new(),
            context_encoder: None,
            layers: Vec::new(),
            class_prior: None,
        }
    }

    /// Assembles a model from existing parts, checking that every layer agrees
    /// on the latent and context widths.
    pub fn from_parts(
        dim: usize,
        context_dim: usize,
        params: ParamSet,
        context_encoder: Option<Dense>,
        layers: Vec<Transform>,
    ) -> Result<Self> {
        let layer_context = match &context_encoder {
            Some(enc) => {
                if enc.inputs(&params) != context_dim {
                    return Err(Error::Config(format!(
                        "context encoder takes {} inputs, flow context is {context_dim}",
                        enc.inputs(&params)
                    )));
                }
                enc.outputs(&params)
            }
            None => context_dim,
        };
        for (k, layer) in layers.iter().enumerate() {
            if layer.dim() != dim {
                return Err(Error::Config(format!(
                    "layer {k} ({}) has dimension {}, flow has {dim}",
                    layer.name(),
                    layer.dim()
                )));
            }
            if let Some(c) = layer.context_dim() {
                if c != layer_context {
                    return Err(Error::Config(format!(
                        "layer {k} ({}) expects context width {c}, flow provides {layer_context}",
                        layer.name()
                    )));
                }
            }
        }
        Ok(FlowModel { dim, context_dim, params, context_encoder, layers, class_prior: None })
    }

    /// Builds a freshly initialised flow.
    pub fn build(dim: usize, context_dim: usize, spec: &FlowSpec, rng: &mut Rng) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("flow dimension must be positive".into()));
        }
        if spec.layers == 0 {
            return Err(Error::Config("flow needs at least one layer".into()));
        }
        if spec.family == FlowFamily::RealNvp && dim < 2 {
            return Err(Error::Config("coupling layers need at least two latent dimensions".into()));
        }
        if spec.alpha_clamp.is_nan() || spec.alpha_clamp <= 0.0 {
            return Err(Error::Config("alpha_clamp must be positive".into()));
        }
        let mut params = ParamSet::new();
        let context_encoder = match spec.context_encoder {
            Some(width) if context_dim > 0 => Some(Dense::new(&mut params, rng, context_dim, width, 1.0)),
            _ => None,
        };
        let ctx = context_encoder.as_ref().map_or(context_dim, |e| e.outputs(&params));

        // Built in data-to-base order, stored base-to-data.
        let mut towards_base = Vec::new();
        let mut parity = Parity::Even;
        for _ in 0..spec.layers {
            match spec.family {
                FlowFamily::Maf => {
                    towards_base.push(Transform::Reverse(ReversePermutation::new(dim)));
                    towards_base.push(Transform::Maf(MafLayer::new(
                        &mut params,
                        rng,
                        dim,
                        ctx,
                        spec.hidden,
                        spec.blocks,
                        spec.alpha_clamp,
                    )));
                }
                FlowFamily::RealNvp => {
                    towards_base.push(Transform::Coupling(CouplingLayer::new(
                        &mut params,
                        rng,
                        dim,
                        ctx,
                        parity,
                        spec.hidden,
                        spec.blocks,
                        spec.alpha_clamp,
                    )));
                    parity = parity.flipped();
                }
            }
            if spec.batch_norm {
                towards_base.push(Transform::BatchNorm(InvertibleBatchNorm::new(dim)));
            }
        }
        towards_base.reverse();
        FlowModel::from_parts(dim, context_dim, params, context_encoder, towards_base)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn layers(&self) -> &[Transform] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Transform] {
        &mut self.layers
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn context_encoder(&self) -> Option<&Dense> {
        self.context_encoder.as_ref()
    }

    pub fn class_prior(&self) -> Option<&ClassPrior> {
        self.class_prior.as_ref()
    }

    pub fn set_class_prior(&mut self, prior: Option<ClassPrior>) {
        self.class_prior = prior;
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Transform::BatchNorm(_)))
    }

    /// Switches every batch norm between batch statistics (`true`) and running
    /// statistics (`false`).
    pub fn set_training(&mut self, training: bool) {
        let mode = if training { BatchNormMode::Training } else { BatchNormMode::Frozen };
        for layer in &mut self.layers {
            if let Transform::BatchNorm(bn) = layer {
                bn.mode = mode;
            }
        }
    }

    fn check_inputs(&self, v: &DenseMatrix, y: &DenseMatrix) -> Result<()> {
        check_cols("flow input", v, self.dim)?;
        check_context("flow context", y, v.rows(), self.context_dim)
    }

    fn encode_context(&self, tape: &mut Tape, y: Var) -> Option<Var> {
        if self.context_dim == 0 {
            return None;
        }
        Some(match &self.context_encoder {
            Some(enc) => enc.apply(&self.params, tape, y),
            None => y,
        })
    }

    fn layer_error(&self, k: usize, tape: &Tape, out: Var, logdet: Var) -> Result<()> {
        if tape.value(out).is_finite() && tape.value(logdet).is_finite() {
            return Ok(());
        }
        Err(Error::Numeric {
            layer: format!("layer {k} ({})", self.layers[k].name()),
            detail: "non-finite output or log-determinant".into(),
        })
    }

    /// Data-to-base pass on a tape.
    pub fn to_base_taped(&self, tape: &mut Tape, z: Var, y: Var) -> Result<InverseTrace> {
        let ctx = self.encode_context(tape, y);
        let rows = tape.shape(z).0;
        let mut v = z;
        let mut total = tape.constant(DenseMatrix::zeros(rows, 1));
        let mut layer_logdets = vec![total; self.layers.len()];
        let mut batch_stats = Vec::new();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let pass = layer.inverse_taped(&self.params, tape, v, ctx)?;
            self.layer_error(k, tape, pass.out, pass.logdet)?;
            if let Some((mean, var)) = pass.stats {
                batch_stats.push((k, mean, var));
            }
            layer_logdets[k] = pass.logdet;
            total = tape.add(total, pass.logdet);
            v = pass.out;
        }
        Ok(InverseTrace { base: v, logdet: total, layer_logdets, batch_stats })
    }

    /// Base-to-data pass on a tape: `(x, n x 1 log-determinant)`.
    pub fn from_base_taped(&self, tape: &mut Tape, u: Var, y: Var) -> Result<(Var, Var)> {
        let ctx = self.encode_context(tape, y);
        let rows = tape.shape(u).0;
        let mut v = u;
        let mut total = tape.constant(DenseMatrix::zeros(rows, 1));
        for (k, layer) in self.layers.iter().enumerate() {
            let pass = layer.forward_taped(&self.params, tape, v, ctx)?;
            self.layer_error(k, tape, pass.out, pass.logdet)?;
            total = tape.add(total, pass.logdet);
            v = pass.out;
        }
        Ok((v, total))
    }

    /// Per-row `log p(z | y)` on a tape, `n x 1`.
    pub fn log_prob_taped(&self, tape: &mut Tape, z: Var, y: Var) -> Result<(Var, InverseTrace)> {
        let trace = self.to_base_taped(tape, z, y)?;
        let sq = tape.square(trace.base);
        let ssq = tape.sum_cols(sq);
        let half = tape.scale(ssq, -0.5);
        let base_lp = tape.add_scalar(half, -(self.dim as f64) * HALF_LN_2PI);
        let lp = tape.add(base_lp, trace.logdet);
        Ok((lp, trace))
    }

    /// Mean negative log-likelihood on a tape, `1 x 1`.
    pub fn nll_taped(&self, tape: &mut Tape, z: Var, y: Var) -> Result<(Var, InverseTrace)> {
        if tape.shape(z).0 == 0 {
            return Err(Error::Precondition("negative log-likelihood of an empty batch".into()));
        }
        let (lp, trace) = self.log_prob_taped(tape, z, y)?;
        let mean = tape.mean(lp);
        Ok((tape.neg(mean), trace))
    }

    /// Folds the batch statistics recorded in `trace` into the running averages.
    pub fn absorb_batch_stats(&mut self, tape: &Tape, trace: &InverseTrace) {
        for &(k, mean, var) in &trace.batch_stats {
            if let Transform::BatchNorm(bn) = &mut self.layers[k] {
                bn.absorb(tape.value(mean), tape.value(var));
            }
        }
    }

    /// `log p(z | y)` for each row.
    pub fn log_prob(&self, z: &DenseMatrix, y: &DenseMatrix) -> Result<Vec<f64>> {
        self.check_inputs(z, y)?;
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let yv = tape.constant(y.clone());
        let (lp, _) = self.log_prob_taped(&mut tape, zv, yv)?;
        Ok(tape.value(lp).data().to_vec())
    }

    /// `-mean_i log p(z_i | y_i)`.
    pub fn nll(&self, z: &DenseMatrix, y: &DenseMatrix) -> Result<f64> {
        if z.rows() == 0 {
            return Err(Error::Precondition("negative log-likelihood of an empty batch".into()));
        }
        let lp = self.log_prob(z, y)?;
        Ok(-lp.iter().sum::<f64>() / lp.len() as f64)
    }

    /// `T(u | y)` with its per-row log-determinant.
    pub fn forward(&self, u: &DenseMatrix, y: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>)> {
        self.check_inputs(u, y)?;
        let mut tape = Tape::new();
        let uv = tape.constant(u.clone());
        let yv = tape.constant(y.clone());
        let (x, ld) = self.from_base_taped(&mut tape, uv, yv)?;
        Ok((tape.value(x).clone(), tape.value(ld).data().to_vec()))
    }

    /// `T⁻¹(z | y)` with its per-row log-determinant.
    pub fn inverse(&self, z: &DenseMatrix, y: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>)> {
        self.check_inputs(z, y)?;
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let yv = tape.constant(y.clone());
        let trace = self.to_base_taped(&mut tape, zv, yv)?;
        Ok((tape.value(trace.base).clone(), tape.value(trace.logdet).data().to_vec()))
    }

    /// One draw per context row: `u ~ N(0, I)`, then `T(u | y)`.
    pub fn sample(&self, y: &DenseMatrix, rng: &mut Rng) -> Result<DenseMatrix> {
        Ok(self.sample_with_base(y, rng)?.0)
    }

    /// Like [`FlowModel::sample`], also returning the base draw.
    pub fn sample_with_base(&self, y: &DenseMatrix, rng: &mut Rng) -> Result<(DenseMatrix, DenseMatrix)> {
        if y.cols() != self.context_dim {
            return Err(Error::shape(format!(
                "sample: expected context width {}, got {}",
                self.context_dim,
                y.cols()
            )));
        }
        let u = standard_normal_sample(rng, y.rows(), self.dim);
        let (x, _) = self.forward(&u, y)?;
        Ok((x, u))
    }
}

/// One-hot rows for integer class labels.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<DenseMatrix> {
    let mut m = DenseMatrix::zeros(labels.len(), classes);
    for (r, &k) in labels.iter().enumerate() {
        if k >= classes {
            return Err(Error::Domain(format!("label {k} out of range for {classes} classes")));
        }
        m.set(r, k, 1.0);
    }
    Ok(m)
}

/// `n` copies of the one-hot vector for class `k`.
pub fn one_hot_repeated(k: usize, classes: usize, n: usize) -> Result<DenseMatrix> {
    one_hot(&vec![k; n], classes)
}
