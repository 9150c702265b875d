use ndarray::{ArrayD, IxDyn, Zip};
use sha2::{Digest, Sha256};

use crate::imagery::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f64>,
}

/// Ordered, named parameter arrays of one network.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub(crate) fn push(&mut self, name: String, value: ArrayD<f64>) -> ParamId {
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param { name, value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<f64> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.find(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut ArrayD<f64>> {
        self.find(name).map(move |id| self.get_mut(id))
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    /// SHA-256 over names, shapes and values; equal digests mean bit-identical sets.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in p.value.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Sets every parameter whose name starts with `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.value.fill(0.0);
        }
    }

    /// Flat view of scalar `index` across all parameters, in order.
    pub fn scalar_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for p in &mut self.params {
            if index < p.value.len() {
                return p.value.iter_mut().nth(index);
            }
            index -= p.value.len();
        }
        None
    }
}

/// He-style normal initialisation for a convolution kernel `(out, in, k, k)`.
pub(crate) fn he_normal(shape: &[usize], rng: &mut Rng) -> ArrayD<f64> {
    let fan_in: usize = shape[1..].iter().product();
    let std = (2.0 / fan_in as f64).sqrt();
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.normal() * std)
}

/// Gradient arrays aligned with a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    grads: Vec<ArrayD<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(set: &ParamSet) -> Self {
        ParamGrads {
            grads: set.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<f64> {
        &self.grads[id.0]
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ArrayD<f64>> {
        self.grads.iter()
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            Zip::from(a).and(b).for_each(|x, &y| *x += y);
        }
    }

    #[cfg(test)]
    pub(crate) fn fill(&mut self, v: f64) {
        for g in &mut self.grads {
            g.fill(v);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.grads {
            g.mapv_inplace(|v| v * s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }

    pub fn scalar(&self, mut index: usize) -> Option<f64> {
        for g in &self.grads {
            if index < g.len() {
                return g.iter().nth(index).copied();
            }
            index -= g.len();
        }
        None
    }
}
