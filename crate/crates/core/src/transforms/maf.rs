use super::nets::ResidualNet;
use super::Pass;
use crate::numerics::{DenseMatrix, ParamSet, Rng, Tape, Var};

/// Conditional masked affine autoregressive layer.
///
/// A MADE conditioner maps `(x_{1:i-1}, y)` to `(μ_i, α_i)` for every `i` in one
/// pass. The base-to-data direction is `x_i = u_i exp(α_i) + μ_i`, computed
/// sequentially; the data-to-base direction `u_i = (x_i - μ_i) exp(-α_i)` is a
/// single parallel pass.
#[derive(Clone, Debug, PartialEq)]
pub struct MafLayer {
    pub dim: usize,
    pub context_dim: usize,
    pub hidden: usize,
    pub alpha_clamp: f64,
    pub net: ResidualNet,
}

impl MafLayer {
    pub fn new(
        params: &mut ParamSet,
        rng: &mut Rng,
        dim: usize,
        context_dim: usize,
        hidden: usize,
        blocks: usize,
        alpha_clamp: f64,
    ) -> Self {
        let net = ResidualNet::made(params, rng, dim, context_dim, hidden, blocks, 2);
        MafLayer { dim, context_dim, hidden, alpha_clamp, net }
    }

    pub fn blocks(&self) -> usize {
        self.net.blocks.len()
    }

    /// `(μ, α)` for every coordinate, with `α` soft-clamped to `±alpha_clamp`.
    pub fn conditioner(&self, params: &ParamSet, tape: &mut Tape, x: Var, ctx: Option<Var>) -> (Var, Var) {
        let input = match ctx {
            Some(c) => tape.concat_cols(x, c),
            None => x,
        };
        let out = self.net.apply(params, tape, input);
        let mu_cols: Vec<usize> = (0..self.dim).collect();
        let alpha_cols: Vec<usize> = (self.dim..2 * self.dim).collect();
        let mu = tape.select_cols(out, &mu_cols);
        let raw = tape.select_cols(out, &alpha_cols);
        let alpha = tape.soft_clamp(raw, self.alpha_clamp);
        (mu, alpha)
    }

    pub(crate) fn inverse_taped(&self, params: &ParamSet, tape: &mut Tape, x: Var, ctx: Option<Var>) -> Pass {
        let (mu, alpha) = self.conditioner(params, tape, x, ctx);
        let centered = tape.sub(x, mu);
        let neg_alpha = tape.neg(alpha);
        let inv_scale = tape.exp(neg_alpha);
        let u = tape.mul(centered, inv_scale);
        let total = tape.sum_cols(alpha);
        let logdet = tape.neg(total);
        Pass::new(u, logdet)
    }

    /// Fixed-point sweep: after pass `k` the first `k` coordinates are final,
    /// so `dim` passes reproduce the sequential recursion exactly.
    pub(crate) fn forward_taped(&self, params: &ParamSet, tape: &mut Tape, u: Var, ctx: Option<Var>) -> Pass {
        let (rows, _) = tape.shape(u);
        let mut x = tape.constant(DenseMatrix::zeros(rows, self.dim));
        let mut alpha = x;
        for _ in 0..self.dim {
            let (mu, a) = self.conditioner(params, tape, x, ctx);
            let scale = tape.exp(a);
            let scaled = tape.mul(u, scale);
            x = tape.add(scaled, mu);
            alpha = a;
        }
        let logdet = tape.sum_cols(alpha);
        Pass::new(x, logdet)
    }
}
