use std::cell::RefCell;
use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{kaiming_normal, ConvSpec, Element, Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Named store of trainable tensors. Forward passes read parameters only
/// from here.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor<f32>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<f32>) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Parameters in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<f32>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<f32>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Total number of scalars across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Replaces values from `other` where names and shapes match; returns
    /// the names that were imported.
    pub fn import_matching(&mut self, other: &ParamStore) -> Vec<String> {
        let mut imported = Vec::new();
        for (name, value) in other.iter() {
            if let Some(dst) = self.params.get_mut(name) {
                if dst.shape() == value.shape() {
                    *dst = value.clone();
                    imported.push(name.clone());
                }
            }
        }
        imported
    }
}

/// Deterministic per-parameter generator derived from the model seed and
/// the parameter's name, so initial values do not depend on build order.
pub(crate) fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

/// Parameters of one forward pass, loaded lazily onto a tape.
///
/// Each name is bound once, so a parameter used several times accumulates
/// its gradient. Individual names can be pre-bound to caller-owned vars
/// (used by gradient checks).
pub struct Params<'t, 's, T: Element = f32> {
    tape: &'t Tape<T>,
    store: &'s ParamStore,
    trainable: bool,
    bound: RefCell<BTreeMap<String, Var<'t, T>>>,
}

impl<'t, 's, T: Element> Params<'t, 's, T> {
    pub fn new(tape: &'t Tape<T>, store: &'s ParamStore, trainable: bool) -> Self {
        Self {
            tape,
            store,
            trainable,
            bound: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    /// Binds `name` to an existing var instead of the stored value.
    pub fn bind(&self, name: &str, var: Var<'t, T>) {
        self.bound.borrow_mut().insert(name.to_string(), var);
    }

    pub fn get(&self, name: &str) -> Result<Var<'t, T>> {
        if let Some(v) = self.bound.borrow().get(name) {
            return Ok(*v);
        }
        let value = self
            .store
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?;
        let var = self.tape.leaf(value.cast(), self.trainable);
        self.bound.borrow_mut().insert(name.to_string(), var);
        Ok(var)
    }

    /// Gradients of every bound parameter, converted to `f32` (zeros for
    /// parameters no gradient reached).
    pub fn gradients(&self, grads: &Gradients<T>) -> BTreeMap<String, Tensor<f32>> {
        self.bound
            .borrow()
            .iter()
            .map(|(name, v)| (name.clone(), grads.get_or_zeros(*v).cast()))
            .collect()
    }
}

/// A 2-D convolution layer with a named weight and optional bias.
#[derive(Clone, Debug)]
pub struct Conv {
    name: String,
    spec: ConvSpec,
    bias: bool,
    gain: f64,
}

impl Conv {
    pub fn new(name: impl Into<String>, spec: ConvSpec) -> Self {
        Self {
            name: name.into(),
            spec,
            bias: true,
            gain: 1.0,
        }
    }

    /// Scales the Kaiming standard deviation at initialisation.
    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        let w = self.weight_name();
        let fan_in = self.spec.in_channels * self.spec.kernel_size * self.spec.kernel_size;
        let mut rng = param_rng(seed, &w);
        store.insert(
            w,
            kaiming_normal(&self.spec.weight_shape(), fan_in, self.gain, &mut rng),
        );
        if self.bias {
            store.insert(self.bias_name(), Tensor::zeros([self.spec.out_channels]));
        }
    }

    pub fn forward<'t, T: Element>(
        &self,
        p: &Params<'t, '_, T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let w = p.get(&self.weight_name())?;
        let b = if self.bias {
            Some(p.get(&self.bias_name())?)
        } else {
            None
        };
        x.conv2d(w, b, &self.spec)
    }
}

/// Per-channel normalisation over the spatial axes (no affine terms).
pub fn instance_norm<'t, T: Element>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = x.shape();
    let stats = [s[0], s[1], 1, 1];
    let centred = x.sub(x.mean_to(&stats)?)?;
    let var = centred.square().mean_to(&stats)?;
    centred.div(var.add_scalar(1e-5).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seed_and_name_deterministic() {
        let conv = Conv::new("a.conv", ConvSpec::same(2, 4, 3, 1));
        let (mut s1, mut s2, mut s3) = (ParamStore::new(), ParamStore::new(), ParamStore::new());
        conv.init(&mut s1, 5);
        conv.init(&mut s2, 5);
        conv.init(&mut s3, 6);
        assert_eq!(s1, s2);
        assert_ne!(s1, s3);
        assert_eq!(s1.get("a.conv.bias").unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn missing_parameter_is_reported() {
        let store = ParamStore::new();
        let tape = Tape::<f32>::new();
        let p = Params::new(&tape, &store, true);
        assert!(matches!(p.get("nope"), Err(Error::MissingParam(_))));
    }
}
