//! `FPN1` containers for flows, autoencoders and latent datasets.
//!
//! Layout: magic `FPN1`, a kind byte, then a kind-specific body made of
//! little-endian `u32`/`u64`/`f64` fields and embedded matrices
//! (`u32 rows, u32 cols, f64 data`). Parameters are stored as raw bit patterns,
//! so save/load is bit-exact.

use std::path::Path;

use super::write_atomic;
use crate::autoencoder::{Autoencoder, AutoencoderVariant};
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::numerics::{DenseMatrix, ParamId, ParamSet};
use crate::tasks::ClassPrior;
use crate::trainer::LatentDataset;
use crate::transforms::nets::{Dense, ResidualNet};
use crate::transforms::{
    BatchNormMode, CouplingLayer, InvertibleBatchNorm, MafLayer, Parity, ReversePermutation, Transform,
};

pub const CONTAINER_MAGIC: &[u8; 4] = b"FPN1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum ArtifactKind {
    Flow = 1,
    Autoencoder = 2,
    LatentDataset = 3,
}

impl ArtifactKind {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(ArtifactKind::Flow),
            2 => Some(ArtifactKind::Autoencoder),
            3 => Some(ArtifactKind::LatentDataset),
            _ => None,
        }
    }
}

const LAYER_MAF: u8 = 1;
const LAYER_COUPLING: u8 = 2;
const LAYER_REVERSE: u8 = 3;
const LAYER_BATCH_NORM: u8 = 4;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: usize) {
        self.buf.extend_from_slice(&(v as u32).to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        self.u32(vs.len());
        vs.iter().for_each(|&v| self.f64(v));
    }

    fn indices(&mut self, vs: &[usize]) {
        self.u32(vs.len());
        vs.iter().for_each(|&v| self.u32(v));
    }

    fn matrix(&mut self, m: &DenseMatrix) {
        self.u32(m.rows());
        self.u32(m.cols());
        m.data().iter().for_each(|&v| self.f64(v));
    }

    fn header(&mut self, kind: ArtifactKind) {
        self.buf.extend_from_slice(CONTAINER_MAGIC);
        self.u8(kind as u8);
    }

    fn params(&mut self, p: &ParamSet) {
        self.u32(p.len());
        p.iter().for_each(|m| self.matrix(m));
    }

    fn dense(&mut self, d: &Dense) {
        self.u32(d.weight.index());
        self.u32(d.bias.index());
        match &d.mask {
            Some(m) => {
                self.u8(1);
                self.matrix(m);
            }
            None => self.u8(0),
        }
    }

    fn net(&mut self, n: &ResidualNet) {
        self.dense(&n.input);
        self.u32(n.blocks.len());
        for (a, b) in &n.blocks {
            self.dense(a);
            self.dense(b);
        }
        self.dense(&n.output);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse { offset: self.pos, message: message.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!(
                "truncated {what}: needs {n} bytes, {} remain",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn count(&mut self, what: &str, item_bytes: usize) -> Result<usize> {
        let n = self.u32(what)?;
        if n.saturating_mul(item_bytes) > self.bytes.len() - self.pos {
            return Err(self.err(format!("{what} declares {n} entries, more than the remaining bytes")));
        }
        Ok(n)
    }

    fn f64s(&mut self, what: &str) -> Result<Vec<f64>> {
        let n = self.count(what, 8)?;
        (0..n).map(|_| self.f64(what)).collect()
    }

    fn indices(&mut self, what: &str) -> Result<Vec<usize>> {
        let n = self.count(what, 4)?;
        (0..n).map(|_| self.u32(what)).collect()
    }

    fn matrix(&mut self, what: &str) -> Result<DenseMatrix> {
        let rows = self.u32(what)?;
        let cols = self.u32(what)?;
        let n = rows
            .checked_mul(cols)
            .filter(|n| n.saturating_mul(8) <= self.bytes.len() - self.pos)
            .ok_or_else(|| self.err(format!("{what}: {rows}x{cols} exceeds the remaining bytes")))?;
        let data = (0..n).map(|_| self.f64(what)).collect::<Result<_>>()?;
        DenseMatrix::new(rows, cols, data)
    }

    fn header(&mut self, expected: ArtifactKind) -> Result<()> {
        let magic = self.take(4, "magic")?;
        if magic != CONTAINER_MAGIC {
            self.pos = 0;
            return Err(self.err(format!("bad magic {magic:?}, expected \"FPN1\"")));
        }
        let kind = self.u8("kind")?;
        match ArtifactKind::from_byte(kind) {
            Some(k) if k == expected => Ok(()),
            Some(k) => {
                self.pos -= 1;
                Err(self.err(format!("container holds {k:?}, expected {expected:?}")))
            }
            None => {
                self.pos -= 1;
                Err(self.err(format!("unknown artifact kind {kind}")))
            }
        }
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }

    fn params(&mut self) -> Result<ParamSet> {
        let n = self.count("parameter count", 8)?;
        let mut p = ParamSet::new();
        for _ in 0..n {
            p.add(self.matrix("parameter")?);
        }
        Ok(p)
    }

    fn dense(&mut self, params: &ParamSet) -> Result<Dense> {
        let w = self.u32("weight id")?;
        let b = self.u32("bias id")?;
        if w >= params.len() || b >= params.len() {
            return Err(self.err(format!("parameter id out of range ({w}, {b} of {})", params.len())));
        }
        let (weight, bias) = (ParamId(w), ParamId(b));
        let (wm, bm) = (params.get(weight), params.get(bias));
        if bm.shape() != (1, wm.cols()) {
            return Err(self.err(format!("bias {:?} does not fit weight {:?}", bm.shape(), wm.shape())));
        }
        let mask = match self.u8("mask flag")? {
            0 => None,
            1 => {
                let m = self.matrix("mask")?;
                if m.shape() != wm.shape() {
                    return Err(self.err(format!("mask {:?} does not fit weight {:?}", m.shape(), wm.shape())));
                }
                Some(m)
            }
            f => return Err(self.err(format!("bad mask flag {f}"))),
        };
        Ok(Dense { weight, bias, mask })
    }

    fn net(&mut self, params: &ParamSet) -> Result<ResidualNet> {
        let input = self.dense(params)?;
        let n = self.count("residual block count", 18)?;
        let blocks = (0..n)
            .map(|_| Ok((self.dense(params)?, self.dense(params)?)))
            .collect::<Result<_>>()?;
        let output = self.dense(params)?;
        Ok(ResidualNet { input, blocks, output })
    }
}

fn net_io(net: &ResidualNet, params: &ParamSet) -> (usize, usize) {
    (net.input.inputs(params), net.output.outputs(params))
}

fn write_flow(w: &mut Writer, flow: &FlowModel) {
    w.header(ArtifactKind::Flow);
    w.u32(flow.dim());
    w.u32(flow.context_dim());
    w.params(flow.params());
    match flow.context_encoder() {
        Some(enc) => {
            w.u8(1);
            w.dense(enc);
        }
        None => w.u8(0),
    }
    match flow.class_prior() {
        Some(p) => {
            w.u8(1);
            w.f64s(p.probs());
        }
        None => w.u8(0),
    }
    w.u32(flow.layers().len());
    for layer in flow.layers() {
        match layer {
            Transform::Maf(l) => {
                w.u8(LAYER_MAF);
                w.u32(l.dim);
                w.u32(l.context_dim);
                w.u32(l.hidden);
                w.f64(l.alpha_clamp);
                w.net(&l.net);
            }
            Transform::Coupling(l) => {
                w.u8(LAYER_COUPLING);
                w.u32(l.dim);
                w.u32(l.split);
                w.u32(l.context_dim);
                w.u8(match l.parity {
                    Parity::Even => 0,
                    Parity::Odd => 1,
                });
                w.u32(l.hidden);
                w.f64(l.alpha_clamp);
                w.net(&l.s_net);
                w.net(&l.t_net);
            }
            Transform::Reverse(l) => {
                w.u8(LAYER_REVERSE);
                w.u32(l.dim);
            }
            Transform::BatchNorm(l) => {
                w.u8(LAYER_BATCH_NORM);
                w.u32(l.dim);
                w.f64(l.momentum);
                w.f64(l.eps);
                w.u8(match l.mode {
                    BatchNormMode::Training => 0,
                    BatchNormMode::Frozen => 1,
                });
                w.f64s(&l.running_mean);
                w.f64s(&l.running_var);
            }
        }
    }
}

fn read_layer(r: &mut Reader, params: &ParamSet) -> Result<Transform> {
    let start = r.pos;
    let tag = r.u8("layer tag")?;
    let layer = match tag {
        LAYER_MAF => {
            let dim = r.u32("dim")?;
            let context_dim = r.u32("context dim")?;
            let hidden = r.u32("hidden")?;
            let alpha_clamp = r.f64("alpha clamp")?;
            let net = r.net(params)?;
            if net_io(&net, params) != (dim + context_dim, 2 * dim) {
                return Err(r.err("autoregressive conditioner does not match the layer dimensions"));
            }
            Transform::Maf(MafLayer { dim, context_dim, hidden, alpha_clamp, net })
        }
        LAYER_COUPLING => {
            let dim = r.u32("dim")?;
            let split = r.u32("split")?;
            let context_dim = r.u32("context dim")?;
            let parity = match r.u8("parity")? {
                0 => Parity::Even,
                1 => Parity::Odd,
                p => return Err(r.err(format!("bad parity {p}"))),
            };
            let hidden = r.u32("hidden")?;
            let alpha_clamp = r.f64("alpha clamp")?;
            let s_net = r.net(params)?;
            let t_net = r.net(params)?;
            if split == 0 || split >= dim {
                return Err(r.err(format!("split {split} invalid for dimension {dim}")));
            }
            let layer = CouplingLayer { dim, split, context_dim, parity, hidden, alpha_clamp, s_net, t_net };
            let (pass, transformed) = layer.halves();
            let want = (pass.len() + context_dim, transformed.len());
            if net_io(&layer.s_net, params) != want || net_io(&layer.t_net, params) != want {
                return Err(r.err("coupling conditioners do not match the layer dimensions"));
            }
            Transform::Coupling(layer)
        }
        LAYER_REVERSE => Transform::Reverse(ReversePermutation::new(r.u32("dim")?)),
        LAYER_BATCH_NORM => {
            let dim = r.u32("dim")?;
            let momentum = r.f64("momentum")?;
            let eps = r.f64("eps")?;
            let mode = match r.u8("mode")? {
                0 => BatchNormMode::Training,
                1 => BatchNormMode::Frozen,
                m => return Err(r.err(format!("bad batch norm mode {m}"))),
            };
            let running_mean = r.f64s("running mean")?;
            let running_var = r.f64s("running variance")?;
            if running_mean.len() != dim || running_var.len() != dim {
                return Err(r.err("batch norm statistics do not match its dimension"));
            }
            Transform::BatchNorm(InvertibleBatchNorm { dim, running_mean, running_var, momentum, eps, mode })
        }
        t => {
            r.pos = start;
            return Err(r.err(format!("unknown layer tag {t}")));
        }
    };
    Ok(layer)
}

fn read_flow(r: &mut Reader) -> Result<FlowModel> {
    r.header(ArtifactKind::Flow)?;
    let dim = r.u32("dim")?;
    let context_dim = r.u32("context dim")?;
    let params = r.params()?;
    let encoder = match r.u8("encoder flag")? {
        0 => None,
        1 => Some(r.dense(&params)?),
        f => return Err(r.err(format!("bad encoder flag {f}"))),
    };
    let prior = match r.u8("prior flag")? {
        0 => None,
        1 => {
            let probs = r.f64s("class prior")?;
            Some(ClassPrior::from_probs(probs).map_err(|e| r.err(e.to_string()))?)
        }
        f => return Err(r.err(format!("bad prior flag {f}"))),
    };
    let n = r.count("layer count", 5)?;
    let layers = (0..n).map(|_| read_layer(r, &params)).collect::<Result<Vec<_>>>()?;
    let at = r.pos;
    let mut flow = FlowModel::from_parts(dim, context_dim, params, encoder, layers)
        .map_err(|e| Error::Parse { offset: at, message: e.to_string() })?;
    flow.set_class_prior(prior);
    Ok(flow)
}

pub fn encode_flow(flow: &FlowModel) -> Vec<u8> {
    let mut w = Writer::default();
    write_flow(&mut w, flow);
    w.buf
}

pub fn decode_flow(bytes: &[u8]) -> Result<FlowModel> {
    let mut r = Reader { bytes, pos: 0 };
    let flow = read_flow(&mut r)?;
    r.finish()?;
    Ok(flow)
}

pub fn encode_autoencoder(ae: &Autoencoder) -> Vec<u8> {
    let mut w = Writer::default();
    w.header(ArtifactKind::Autoencoder);
    w.u8(match ae.variant() {
        AutoencoderVariant::Ae => 0,
        AutoencoderVariant::Vae => 1,
    });
    w.u32(ae.input_dim());
    w.u32(ae.latent_dim());
    w.u8(ae.is_frozen() as u8);
    w.params(ae.params());
    for stack in [ae.encoder_layers(), ae.decoder_layers()] {
        w.u32(stack.len());
        stack.iter().for_each(|d| w.dense(d));
    }
    w.buf
}

pub fn decode_autoencoder(bytes: &[u8]) -> Result<Autoencoder> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(ArtifactKind::Autoencoder)?;
    let variant = match r.u8("variant")? {
        0 => AutoencoderVariant::Ae,
        1 => AutoencoderVariant::Vae,
        v => return Err(r.err(format!("bad autoencoder variant {v}"))),
    };
    let input_dim = r.u32("input dim")?;
    let latent_dim = r.u32("latent dim")?;
    let frozen = match r.u8("frozen flag")? {
        0 => false,
        1 => true,
        f => return Err(r.err(format!("bad frozen flag {f}"))),
    };
    let params = r.params()?;
    let mut stacks = Vec::new();
    for what in ["encoder", "decoder"] {
        let n = r.count(what, 9)?;
        let stack = (0..n).map(|_| r.dense(&params)).collect::<Result<Vec<_>>>()?;
        if stack.is_empty() {
            return Err(r.err(format!("{what} has no layers")));
        }
        stacks.push(stack);
    }
    let (decoder, encoder) = (stacks.pop().unwrap(), stacks.pop().unwrap());
    let enc_out = match variant {
        AutoencoderVariant::Ae => latent_dim,
        AutoencoderVariant::Vae => 2 * latent_dim,
    };
    let chained = |s: &[Dense], i: usize, o: usize| {
        s[0].inputs(&params) == i
            && s.last().unwrap().outputs(&params) == o
            && s.windows(2).all(|w| w[0].outputs(&params) == w[1].inputs(&params))
    };
    if !chained(&encoder, input_dim, enc_out) || !chained(&decoder, latent_dim, input_dim) {
        return Err(r.err("layer widths do not chain between the declared dimensions"));
    }
    r.finish()?;
    Ok(Autoencoder::from_parts(variant, input_dim, latent_dim, params, encoder, decoder, frozen))
}

pub fn encode_dataset(ds: &LatentDataset) -> Vec<u8> {
    let mut w = Writer::default();
    w.header(ArtifactKind::LatentDataset);
    w.matrix(ds.z());
    w.matrix(ds.y());
    w.indices(ds.train_indices());
    w.indices(ds.validation_indices());
    w.buf
}

pub fn decode_dataset(bytes: &[u8]) -> Result<LatentDataset> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(ArtifactKind::LatentDataset)?;
    let z = r.matrix("latents")?;
    let y = r.matrix("attributes")?;
    let train = r.indices("train indices")?;
    let validation = r.indices("validation indices")?;
    r.finish()?;
    let at = r.pos;
    LatentDataset::from_split(z, y, train, validation).map_err(|e| Error::Parse { offset: at, message: e.to_string() })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn save_flow(path: impl AsRef<Path>, flow: &FlowModel) -> Result<()> {
    write_atomic(path.as_ref(), &encode_flow(flow))
}

pub fn load_flow(path: impl AsRef<Path>) -> Result<FlowModel> {
    decode_flow(&read(path.as_ref())?)
}

pub fn save_autoencoder(path: impl AsRef<Path>, ae: &Autoencoder) -> Result<()> {
    write_atomic(path.as_ref(), &encode_autoencoder(ae))
}

pub fn load_autoencoder(path: impl AsRef<Path>) -> Result<Autoencoder> {
    decode_autoencoder(&read(path.as_ref())?)
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &LatentDataset) -> Result<()> {
    write_atomic(path.as_ref(), &encode_dataset(ds))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LatentDataset> {
    decode_dataset(&read(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowSpec;
    use crate::numerics::Rng;

    #[test]
    fn wrong_kind_is_rejected() {
        let flow = FlowModel::empty(2, 1);
        let bytes = encode_flow(&flow);
        assert!(matches!(decode_autoencoder(&bytes), Err(Error::Parse { offset: 4, .. })));
        assert_eq!(decode_flow(&bytes).unwrap(), flow);
    }

    #[test]
    fn every_truncation_is_a_parse_error() {
        let mut rng = Rng::seed_from(0);
        let spec = FlowSpec { layers: 1, blocks: 1, hidden: 3, batch_norm: true, ..FlowSpec::c_rnvp_5() };
        let bytes = encode_flow(&FlowModel::build(3, 2, &spec, &mut rng).unwrap());
        for cut in 0..bytes.len() {
            assert!(matches!(decode_flow(&bytes[..cut]), Err(Error::Parse { .. })), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(7);
        assert!(matches!(decode_flow(&extra), Err(Error::Parse { offset, .. }) if offset == bytes.len()));
    }

    #[test]
    fn out_of_range_param_id_is_rejected() {
        let mut rng = Rng::seed_from(0);
        let ae = Autoencoder::new(AutoencoderVariant::Ae, 3, 2, &[], &mut rng).unwrap();
        let mut bytes = encode_autoencoder(&ae);
        let n = bytes.len();
        // Last dense record begins with its weight id; corrupt it.
        let at = n - 9;
        bytes[at..at + 4].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(decode_autoencoder(&bytes), Err(Error::Parse { .. })));
    }
}
