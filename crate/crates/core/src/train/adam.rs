use std::collections::BTreeMap;

use crate::blocks::ParamStore;
use crate::engine::Tensor;
use crate::error::{Error, Result};

/// Adam with bias correction. Moments live in stores keyed like the
/// parameters so they serialise the same way.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: ParamStore,
    pub v: ParamStore,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: ParamStore::new(),
            v: ParamStore::new(),
        }
    }

    /// One update of every parameter that has a gradient.
    pub fn update(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor<f32>>) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::MissingParam(name.clone()))?;
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !self.m.contains(name) {
                self.m.insert(name.clone(), Tensor::zeros(p.shape()));
                self.v.insert(name.clone(), Tensor::zeros(p.shape()));
            }
            let m = self.m.get_mut(name).expect("inserted").data_mut();
            let v = self.v.get_mut(name).expect("inserted").data_mut();
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                let g = f64::from(g);
                let mn = self.beta1 * f64::from(*m) + (1.0 - self.beta1) * g;
                let vn = self.beta2 * f64::from(*v) + (1.0 - self.beta2) * g * g;
                *m = mn as f32;
                *v = vn as f32;
                let step = self.lr * (mn / c1) / ((vn / c2).sqrt() + self.eps);
                *p = (f64::from(*p) - step) as f32;
            }
        }
        Ok(())
    }
}
