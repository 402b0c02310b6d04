use super::{DenseMatrix, Rng};

/// Handle to one trainable matrix inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Owned storage for every trainable matrix of a model, addressed by [`ParamId`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    values: Vec<DenseMatrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: DenseMatrix) -> ParamId {
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &DenseMatrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut DenseMatrix {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &DenseMatrix> {
        self.values.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut DenseMatrix> {
        self.values.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(DenseMatrix::len).sum()
    }

    /// FNV-1a over the little-endian bytes of every value, in id order.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for m in &self.values {
            for byte in (m.rows() as u64)
                .to_le_bytes()
                .into_iter()
                .chain((m.cols() as u64).to_le_bytes())
                .chain(m.data().iter().flat_map(|v| v.to_le_bytes()))
            {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// Adds `N(0, std^2)` noise to every entry.
    pub fn perturb(&mut self, rng: &mut Rng, std: f64) {
        for m in &mut self.values {
            for v in m.data_mut() {
                *v += std * rng.standard_normal();
            }
        }
    }

    /// Flattened copy of all values, in id order.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|m| m.data().iter().copied()).collect()
    }
}
