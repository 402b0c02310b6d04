use super::nets::ResidualNet;
use super::Pass;
use crate::numerics::{ParamSet, Rng, Tape, Var};

/// Which half of the coordinates a [`CouplingLayer`] passes through unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    /// Pass `[0, split)`, transform `[split, dim)`.
    Even,
    /// Pass `[split, dim)`, transform `[0, split)`.
    Odd,
}

impl Parity {
    pub fn flipped(self) -> Parity {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
        }
    }
}

/// Conditional affine coupling layer:
/// `x_B = u_B ⊙ exp(s(u_A, y)) + t(u_A, y)`, `x_A = u_A`.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingLayer {
    pub dim: usize,
    /// Boundary between the two halves, `ceil(dim / 2)` by default.
    pub split: usize,
    pub context_dim: usize,
    pub parity: Parity,
    pub hidden: usize,
    pub alpha_clamp: f64,
    pub s_net: ResidualNet,
    pub t_net: ResidualNet,
}

impl CouplingLayer {
    /// Panics unless `dim >= 2`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamSet,
        rng: &mut Rng,
        dim: usize,
        context_dim: usize,
        parity: Parity,
        hidden: usize,
        blocks: usize,
        alpha_clamp: f64,
    ) -> Self {
        assert!(dim >= 2, "a coupling layer needs at least two coordinates");
        let split = dim.div_ceil(2);
        let (pass, transformed) = halves(dim, split, parity);
        let inputs = pass.len() + context_dim;
        let s_net = ResidualNet::dense(params, rng, inputs, hidden, transformed.len(), blocks);
        let t_net = ResidualNet::dense(params, rng, inputs, hidden, transformed.len(), blocks);
        CouplingLayer { dim, split, context_dim, parity, hidden, alpha_clamp, s_net, t_net }
    }

    pub fn blocks(&self) -> usize {
        self.s_net.blocks.len()
    }

    /// `(pass-through columns, transformed columns)`.
    pub fn halves(&self) -> (Vec<usize>, Vec<usize>) {
        halves(self.dim, self.split, self.parity)
    }

    fn scale_shift(&self, params: &ParamSet, tape: &mut Tape, pass: Var, ctx: Option<Var>) -> (Var, Var) {
        let input = match ctx {
            Some(c) => tape.concat_cols(pass, c),
            None => pass,
        };
        let raw = self.s_net.apply(params, tape, input);
        let s = tape.soft_clamp(raw, self.alpha_clamp);
        let t = self.t_net.apply(params, tape, input);
        (s, t)
    }

    /// Reassembles `[pass | transformed]` into the original column order.
    fn assemble(&self, tape: &mut Tape, pass: Var, transformed: Var) -> Var {
        let (p, t) = self.halves();
        let order: Vec<usize> = p.into_iter().chain(t).collect();
        let mut position = vec![0; self.dim];
        for (k, &col) in order.iter().enumerate() {
            position[col] = k;
        }
        let joined = tape.concat_cols(pass, transformed);
        tape.select_cols(joined, &position)
    }

    pub(crate) fn forward_taped(&self, params: &ParamSet, tape: &mut Tape, u: Var, ctx: Option<Var>) -> Pass {
        let (p, t) = self.halves();
        let pass = tape.select_cols(u, &p);
        let target = tape.select_cols(u, &t);
        let (s, shift) = self.scale_shift(params, tape, pass, ctx);
        let scale = tape.exp(s);
        let scaled = tape.mul(target, scale);
        let out = tape.add(scaled, shift);
        let x = self.assemble(tape, pass, out);
        let logdet = tape.sum_cols(s);
        Pass::new(x, logdet)
    }

    pub(crate) fn inverse_taped(&self, params: &ParamSet, tape: &mut Tape, x: Var, ctx: Option<Var>) -> Pass {
        let (p, t) = self.halves();
        let pass = tape.select_cols(x, &p);
        let target = tape.select_cols(x, &t);
        let (s, shift) = self.scale_shift(params, tape, pass, ctx);
        let centered = tape.sub(target, shift);
        let neg_s = tape.neg(s);
        let inv_scale = tape.exp(neg_s);
        let out = tape.mul(centered, inv_scale);
        let u = self.assemble(tape, pass, out);
        let total = tape.sum_cols(s);
        let logdet = tape.neg(total);
        Pass::new(u, logdet)
    }
}

fn halves(dim: usize, split: usize, parity: Parity) -> (Vec<usize>, Vec<usize>) {
    let first: Vec<usize> = (0..split).collect();
    let second: Vec<usize> = (split..dim).collect();
    match parity {
        Parity::Even => (first, second),
        Parity::Odd => (second, first),
    }
}
