use crate::engine::{concat, ConvSpec, Element, Var};
use crate::error::Result;

use super::params::{Conv, ParamStore, Params};

/// Channel attention followed by spatial attention, both multiplicative.
#[derive(Clone, Debug)]
pub struct Cbam {
    fc1: Conv,
    fc2: Conv,
    spatial: Conv,
}

/// Gated output with the two attention maps, for inspection.
pub struct CbamOutput<'t, T: Element> {
    pub output: Var<'t, T>,
    pub channel: Var<'t, T>,
    pub spatial: Var<'t, T>,
}

impl Cbam {
    pub fn new(prefix: &str, channels: usize, reduction: usize, spatial_kernel: usize) -> Self {
        let hidden = (channels / reduction.max(1)).max(1);
        Self {
            fc1: Conv::new(format!("{prefix}.fc1"), ConvSpec::new(channels, hidden, 1)),
            fc2: Conv::new(format!("{prefix}.fc2"), ConvSpec::new(hidden, channels, 1)),
            spatial: Conv::new(
                format!("{prefix}.spatial"),
                ConvSpec::same(2, 1, spatial_kernel, 1),
            ),
        }
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        self.fc1.init(store, seed);
        self.fc2.init(store, seed);
        self.spatial.init(store, seed);
    }

    pub fn forward<'t, T: Element>(
        &self,
        p: &Params<'t, '_, T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        Ok(self.forward_maps(p, x)?.output)
    }

    pub fn forward_maps<'t, T: Element>(
        &self,
        p: &Params<'t, '_, T>,
        x: Var<'t, T>,
    ) -> Result<CbamOutput<'t, T>> {
        let mlp = |v: Var<'t, T>| -> Result<Var<'t, T>> {
            let h = self.fc1.forward(p, v)?.relu();
            self.fc2.forward(p, h)
        };
        let channel = mlp(x.global_avg_pool()?)?
            .add(mlp(x.global_max_pool()?)?)?
            .sigmoid();
        let x1 = x.mul(channel)?;
        let pooled = concat(&[x1.mean_axis(1)?, x1.max_axis(1)?], 1)?;
        let spatial = self.spatial.forward(p, pooled)?.sigmoid();
        Ok(CbamOutput {
            output: x1.mul(spatial)?,
            channel,
            spatial,
        })
    }
}
