use crate::engine::{concat, ConvSpec, Element, Var};
use crate::error::Result;

use super::params::{Conv, ParamStore, Params};

const RESIDUAL_SCALE: f64 = 0.2;
const INIT_GAIN: f64 = 0.1;

#[derive(Clone, Debug)]
struct DenseBlock {
    convs: Vec<Conv>,
}

impl DenseBlock {
    fn new(prefix: &str, width: usize, growth: usize) -> Self {
        let convs = (0..5)
            .map(|i| {
                let out = if i == 4 { width } else { growth };
                Conv::new(
                    format!("{prefix}.conv{i}"),
                    ConvSpec::same(width + i * growth, out, 3, 1),
                )
                .with_gain(INIT_GAIN)
            })
            .collect();
        Self { convs }
    }

    fn forward<'t, T: Element>(&self, p: &Params<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut feats = vec![x];
        for conv in &self.convs[..4] {
            let h = conv.forward(p, concat(&feats, 1)?)?.relu();
            feats.push(h);
        }
        let last = self.convs[4].forward(p, concat(&feats, 1)?)?;
        x.add(last.scale(RESIDUAL_SCALE))
    }
}

/// A stack of residual-in-residual dense blocks closed by a trunk conv and
/// a long skip: `x + trunk(rrdb_count(...rrdb_1(x)))`.
#[derive(Clone, Debug)]
pub struct RrdbStack {
    blocks: Vec<[DenseBlock; 3]>,
    trunk: Conv,
}

impl RrdbStack {
    pub fn new(prefix: &str, width: usize, growth: usize, count: usize) -> Self {
        let blocks = (0..count)
            .map(|r| {
                [0, 1, 2]
                    .map(|d| DenseBlock::new(&format!("{prefix}.rrdb{r}.dense{d}"), width, growth))
            })
            .collect();
        Self {
            blocks,
            trunk: Conv::new(
                format!("{prefix}.trunk"),
                ConvSpec::same(width, width, 3, 1),
            )
            .with_gain(INIT_GAIN),
        }
    }

    pub fn count(&self) -> usize {
        self.blocks.len()
    }

    pub fn trunk(&self) -> &Conv {
        &self.trunk
    }

    /// Name of the weight of the first conv of the first block.
    pub fn first_weight(&self) -> Option<String> {
        self.blocks.first().map(|b| b[0].convs[0].weight_name())
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        for conv in self.blocks.iter().flatten().flat_map(|d| &d.convs) {
            conv.init(store, seed);
        }
        self.trunk.init(store, seed);
    }

    pub fn forward<'t, T: Element>(
        &self,
        p: &Params<'t, '_, T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let mut h = x;
        for dense in &self.blocks {
            let mut inner = h;
            for d in dense {
                inner = d.forward(p, inner)?;
            }
            h = h.add(inner.scale(RESIDUAL_SCALE))?;
        }
        x.add(self.trunk.forward(p, h)?)
    }
}
