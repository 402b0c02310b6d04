//! Conditioner networks: plain and masked dense residual networks.

use crate::numerics::{DenseMatrix, ParamId, ParamSet, Rng, Tape, Var};

/// Affine layer `x W + b`, optionally with a fixed 0/1 connectivity mask on `W`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub mask: Option<DenseMatrix>,
}

impl Dense {
    /// Uniform `±1/sqrt(fan_in)` initialisation scaled by `gain`.
    pub fn new(params: &mut ParamSet, rng: &mut Rng, inputs: usize, outputs: usize, gain: f64) -> Self {
        let bound = gain / (inputs.max(1) as f64).sqrt();
        let weight = params.add(DenseMatrix::from_fn(inputs, outputs, |_, _| rng.uniform_in(-bound, bound)));
        let bias = params.add(DenseMatrix::from_fn(1, outputs, |_, _| rng.uniform_in(-bound, bound)));
        Dense { weight, bias, mask: None }
    }

    pub fn masked(
        params: &mut ParamSet,
        rng: &mut Rng,
        mask: DenseMatrix,
        gain: f64,
    ) -> Self {
        let mut d = Self::new(params, rng, mask.rows(), mask.cols(), gain);
        // Masked weights start (and stay) exactly zero in value terms.
        let w = params.get_mut(d.weight);
        for (v, m) in w.data_mut().iter_mut().zip(mask.data()) {
            *v *= m;
        }
        d.mask = Some(mask);
        d
    }

    pub fn inputs(&self, params: &ParamSet) -> usize {
        params.get(self.weight).rows()
    }

    pub fn outputs(&self, params: &ParamSet) -> usize {
        params.get(self.weight).cols()
    }

    pub fn apply(&self, params: &ParamSet, tape: &mut Tape, x: Var) -> Var {
        let mut w = tape.param_from(params, self.weight);
        if let Some(mask) = &self.mask {
            w = tape.mul_const(w, mask);
        }
        let b = tape.param_from(params, self.bias);
        let h = tape.matmul(x, w);
        tape.add_row(h, b)
    }
}

/// `input -> [h + L2(tanh(L1(tanh(h))))]* -> output`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualNet {
    pub input: Dense,
    pub blocks: Vec<(Dense, Dense)>,
    pub output: Dense,
}

/// Gain for the second linear map of each residual block; blocks start close to
/// the identity.
const BLOCK_OUT_GAIN: f64 = 1e-2;
/// Gain for the final projection; the owning layer starts close to the identity.
const OUTPUT_GAIN: f64 = 1e-1;

impl ResidualNet {
    pub fn dense(
        params: &mut ParamSet,
        rng: &mut Rng,
        inputs: usize,
        hidden: usize,
        outputs: usize,
        blocks: usize,
    ) -> Self {
        let input = Dense::new(params, rng, inputs, hidden, 1.0);
        let blocks = (0..blocks)
            .map(|_| {
                (
                    Dense::new(params, rng, hidden, hidden, 1.0),
                    Dense::new(params, rng, hidden, hidden, BLOCK_OUT_GAIN),
                )
            })
            .collect();
        let output = Dense::new(params, rng, hidden, outputs, OUTPUT_GAIN);
        ResidualNet { input, blocks, output }
    }

    /// A MADE network over `dim` autoregressive inputs followed by
    /// `context_dim` unrestricted context inputs, producing `out_per_dim * dim`
    /// outputs laid out as contiguous groups of `dim` (e.g. `μ ‖ α`).
    ///
    /// Output `i` of every group is connected only to inputs `j < i` and to the
    /// context.
    pub fn made(
        params: &mut ParamSet,
        rng: &mut Rng,
        dim: usize,
        context_dim: usize,
        hidden: usize,
        blocks: usize,
        out_per_dim: usize,
    ) -> Self {
        let degrees = MadeDegrees::new(dim, context_dim, hidden);
        let input = Dense::masked(params, rng, degrees.input_mask(), 1.0);
        let blocks = (0..blocks)
            .map(|_| {
                (
                    Dense::masked(params, rng, degrees.hidden_mask(), 1.0),
                    Dense::masked(params, rng, degrees.hidden_mask(), BLOCK_OUT_GAIN),
                )
            })
            .collect();
        let output = Dense::masked(params, rng, degrees.output_mask(out_per_dim), OUTPUT_GAIN);
        ResidualNet { input, blocks, output }
    }

    pub fn apply(&self, params: &ParamSet, tape: &mut Tape, x: Var) -> Var {
        let mut h = self.input.apply(params, tape, x);
        for (first, second) in &self.blocks {
            let t = tape.tanh(h);
            let t = first.apply(params, tape, t);
            let t = tape.tanh(t);
            let t = second.apply(params, tape, t);
            h = tape.add(h, t);
        }
        self.output.apply(params, tape, h)
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        std::iter::once(&self.input)
            .chain(self.blocks.iter().flat_map(|(a, b)| [a, b]))
            .chain(std::iter::once(&self.output))
    }
}

/// Connectivity degrees for a MADE network with natural input ordering.
///
/// Inputs carry degrees `1..=dim` and context inputs degree 0. Hidden units
/// cycle through `0..dim` when there is a context, so that degree-0 units carry
/// context-only features to the first output; without a context they cycle
/// through `1..dim` (all 0 when `dim == 1`).
#[derive(Clone, Debug)]
pub(crate) struct MadeDegrees {
    pub input: Vec<usize>,
    pub hidden: Vec<usize>,
    pub dim: usize,
}

impl MadeDegrees {
    pub fn new(dim: usize, context_dim: usize, hidden: usize) -> Self {
        let input = (1..=dim).chain(std::iter::repeat_n(0, context_dim)).collect();
        let hidden = (0..hidden)
            .map(|k| match (context_dim, dim) {
                (0, 1) => 0,
                (0, _) => k % (dim - 1) + 1,
                _ => k % dim,
            })
            .collect();
        MadeDegrees { input, hidden, dim }
    }

    pub fn input_mask(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.input.len(), self.hidden.len(), |i, h| {
            f64::from(u8::from(self.hidden[h] >= self.input[i]))
        })
    }

    pub fn hidden_mask(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.hidden.len(), self.hidden.len(), |i, o| {
            f64::from(u8::from(self.hidden[o] >= self.hidden[i]))
        })
    }

    pub fn output_mask(&self, out_per_dim: usize) -> DenseMatrix {
        DenseMatrix::from_fn(self.hidden.len(), self.dim * out_per_dim, |h, o| {
            let degree = o % self.dim + 1;
            f64::from(u8::from(degree > self.hidden[h]))
        })
    }
}
