//! Reverse-mode differentiation over matrix-valued primitives.
//!
//! A [`Tape`] records every primitive together with its output value. Calling
//! [`Tape::backward`] on a `1x1` node walks the record in reverse and returns
//! the gradient of that scalar with respect to every node, and in particular
//! every registered parameter.
//!
//! Shape errors inside the tape are programming errors and panic; callers
//! validate user-facing shapes before building a graph.

use std::collections::HashMap;

use super::matrix::gemm;
use super::{DenseMatrix, ParamId, ParamSet};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, DenseMatrix),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Square(Var),
    Powf(Var, f64),
    ConcatCols(Var, Var),
    SelectCols(Var, Vec<usize>),
    SumCols(Var),
    MeanRows(Var),
    Sum(Var),
    BroadcastRows(Var),
}

#[derive(Debug)]
struct Node {
    value: DenseMatrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: DenseMatrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// A leaf that receives a gradient but is not tied to a parameter.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Registers a parameter. Repeated registration of the same id returns the
    /// same node, so gradients from every use accumulate in one place.
    pub fn param(&mut self, id: ParamId, value: &DenseMatrix) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(value.clone(), Op::Leaf);
        self.params.insert(id, v);
        v
    }

    /// Registers a parameter, reading its value from `params`.
    pub fn param_from(&mut self, params: &ParamSet, id: ParamId) -> Var {
        self.param(id, params.get(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = gemm(self.value(a), false, self.value(b), false);
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.zip(a, b, |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.zip(a, b, |x, y| x - y);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.zip(a, b, |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    /// `a + row`, with the `1 x m` row broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.broadcast_zip(a, row, |x, y| x + y);
        self.push(value, Op::AddRow(a, row))
    }

    /// `a ⊙ row`, with the `1 x m` row broadcast over every row of `a`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.broadcast_zip(a, row, |x, y| x * y);
        self.push(value, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| c * x);
        self.push(value, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.push(value, Op::AddScalar(a))
    }

    /// Elementwise product with a constant matrix (e.g. a connectivity mask).
    pub fn mul_const(&mut self, a: Var, c: &DenseMatrix) -> Var {
        let value = self
            .value(a)
            .zip_map(c, |x, y| x * y)
            .expect("mul_const shape mismatch");
        self.push(value, Op::MulConst(a, c.clone()))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        self.push(value, Op::Log(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        self.push(value, Op::Square(a))
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let value = self.value(a).map(|x| x.powf(p));
        self.push(value, Op::Powf(a, p))
    }

    /// `bound · tanh(a / bound)`: smooth clamp to `(-bound, bound)`.
    pub fn soft_clamp(&mut self, a: Var, bound: f64) -> Var {
        let scaled = self.scale(a, 1.0 / bound);
        let t = self.tanh(scaled);
        self.scale(t, bound)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).hcat(self.value(b)).expect("concat_cols row mismatch");
        self.push(value, Op::ConcatCols(a, b))
    }

    /// Gathers columns: output column `j` is input column `indices[j]`.
    pub fn select_cols(&mut self, a: Var, indices: &[usize]) -> Var {
        let value = self.value(a).select_cols(indices);
        self.push(value, Op::SelectCols(a, indices.to_vec()))
    }

    /// Per-row sums, `n x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = DenseMatrix::from_fn(m.rows(), 1, |r, _| m.row(r).iter().sum());
        self.push(value, Op::SumCols(a))
    }

    /// Per-column means, `1 x m`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).col_means();
        self.push(value, Op::MeanRows(a))
    }

    /// Sum of all entries, `1 x 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = DenseMatrix::filled(1, 1, self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Mean of all entries, `1 x 1`.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Repeats a `1 x m` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Var {
        let row = self.value(a);
        assert_eq!(row.rows(), 1, "broadcast_rows expects a single row");
        let value = DenseMatrix::from_fn(n, row.cols(), |_, c| row.get(0, c));
        self.push(value, Op::BroadcastRows(a))
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> DenseMatrix {
        self.value(a).zip_map(self.value(b), f).expect("elementwise shape mismatch")
    }

    fn broadcast_zip(&self, a: Var, row: Var, f: impl Fn(f64, f64) -> f64) -> DenseMatrix {
        let (m, r) = (self.value(a), self.value(row));
        assert!(
            r.rows() == 1 && r.cols() == m.cols(),
            "row broadcast of {:?} onto {:?}",
            r.shape(),
            m.shape()
        );
        let rv = r.row(0);
        DenseMatrix::from_fn(m.rows(), m.cols(), |i, j| f(m.get(i, j), rv[j]))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::shape(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(DenseMatrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let out = &node.value;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let ga = gemm(&g, false, self.value(*b), true);
                    let gb = gemm(self.value(*a), true, &g, false);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|x| -x));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y).unwrap();
                    let gb = g.zip_map(self.value(*a), |x, y| x * y).unwrap();
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    accumulate(&mut grads, *row, column_sums(&g));
                    accumulate(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let r = self.value(*row).row(0);
                    let av = self.value(*a);
                    let ga = DenseMatrix::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * r[j]);
                    let gr = column_sums(&g.zip_map(av, |x, y| x * y).unwrap());
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *row, gr);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.map(|x| c * x)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::MulConst(a, c) => {
                    accumulate(&mut grads, *a, g.zip_map(c, |x, y| x * y).unwrap())
                }
                Op::Exp(a) => accumulate(&mut grads, *a, g.zip_map(out, |x, y| x * y).unwrap()),
                Op::Log(a) => {
                    let ga = g.zip_map(self.value(*a), |x, y| x / y).unwrap();
                    accumulate(&mut grads, *a, ga)
                }
                Op::Tanh(a) => {
                    accumulate(&mut grads, *a, g.zip_map(out, |x, y| x * (1.0 - y * y)).unwrap())
                }
                Op::Sigmoid(a) => {
                    accumulate(&mut grads, *a, g.zip_map(out, |x, y| x * y * (1.0 - y)).unwrap())
                }
                Op::Square(a) => {
                    let ga = g.zip_map(self.value(*a), |x, y| 2.0 * x * y).unwrap();
                    accumulate(&mut grads, *a, ga)
                }
                Op::Powf(a, p) => {
                    let ga = g.zip_map(self.value(*a), |x, y| x * p * y.powf(p - 1.0)).unwrap();
                    accumulate(&mut grads, *a, ga)
                }
                Op::ConcatCols(a, b) => {
                    let split = self.value(*a).cols();
                    let left: Vec<usize> = (0..split).collect();
                    let right: Vec<usize> = (split..g.cols()).collect();
                    accumulate(&mut grads, *a, g.select_cols(&left));
                    accumulate(&mut grads, *b, g.select_cols(&right));
                }
                Op::SelectCols(a, indices) => {
                    let mut ga = DenseMatrix::zeros(g.rows(), self.value(*a).cols());
                    for r in 0..g.rows() {
                        let (src, dst) = (g.row(r), ga.row_mut(r));
                        for (j, &col) in indices.iter().enumerate() {
                            dst[col] += src[j];
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumCols(a) => {
                    let cols = self.value(*a).cols();
                    let ga = DenseMatrix::from_fn(g.rows(), cols, |r, _| g.get(r, 0));
                    accumulate(&mut grads, *a, ga);
                }
                Op::MeanRows(a) => {
                    let rows = self.value(*a).rows();
                    let n = rows as f64;
                    let ga = DenseMatrix::from_fn(rows, g.cols(), |_, c| g.get(0, c) / n);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let (rows, cols) = self.shape(*a);
                    accumulate(&mut grads, *a, DenseMatrix::filled(rows, cols, g.get(0, 0)));
                }
                Op::BroadcastRows(a) => accumulate(&mut grads, *a, column_sums(&g)),
            }
        }

        let shapes = self.nodes[..=loss.0].iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes, params: self.params.clone() })
    }
}

fn accumulate(grads: &mut [Option<DenseMatrix>], v: Var, g: DenseMatrix) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn column_sums(g: &DenseMatrix) -> DenseMatrix {
    let mut out = vec![0.0; g.cols()];
    for r in g.iter_rows() {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    DenseMatrix::row_vector(&out)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
    shapes: Vec<(usize, usize)>,
    params: HashMap<ParamId, Var>,
}

impl Gradients {
    /// Gradient with respect to the leaf `v` (a constant or parameter); zeros
    /// when the loss does not depend on it. Gradients of intermediate nodes are
    /// released during the sweep.
    pub fn wrt(&self, v: Var) -> DenseMatrix {
        match self.grads.get(v.0) {
            Some(Some(g)) => g.clone(),
            Some(None) => {
                let (r, c) = self.shapes[v.0];
                DenseMatrix::zeros(r, c)
            }
            None => panic!("variable recorded after the loss"),
        }
    }

    /// Gradient for one parameter, if it was registered on the tape.
    pub fn param(&self, id: ParamId) -> Option<DenseMatrix> {
        self.params.get(&id).map(|&v| self.wrt(v))
    }

    /// One gradient per parameter of `params`, zero for untouched ones.
    pub fn for_params(&self, params: &ParamSet) -> Vec<DenseMatrix> {
        params
            .ids()
            .map(|id| {
                self.param(id).unwrap_or_else(|| {
                    let (r, c) = params.get(id).shape();
                    DenseMatrix::zeros(r, c)
                })
            })
            .collect()
    }
}
