use crate::engine::{ConvSpec, Element, Var};
use crate::error::{Error, Result};

use super::params::{instance_norm, Conv, ParamStore, Params};

pub const SCALES: usize = 3;
const SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorSpec {
    pub scales: usize,
    pub in_channels: usize,
    pub base_channels: usize,
    /// Stride-2 convs per sub-network.
    pub n_layers: usize,
    pub share_weights: bool,
    pub instance_norm: bool,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self {
            scales: SCALES,
            in_channels: 2,
            base_channels: 16,
            n_layers: 2,
            share_weights: false,
            instance_norm: false,
        }
    }
}

impl DiscriminatorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scales != SCALES {
            return Err(Error::InvalidArgument(format!(
                "discriminator uses exactly {SCALES} scales, got {}",
                self.scales
            )));
        }
        if self.in_channels == 0 || self.base_channels == 0 || self.n_layers == 0 {
            return Err(Error::InvalidArgument(format!(
                "invalid discriminator spec {self:?}"
            )));
        }
        Ok(())
    }

    /// Smallest accepted input side.
    pub fn min_size(&self) -> usize {
        1 << (self.scales - 1 + self.n_layers)
    }

    fn width(&self, layer: usize) -> usize {
        self.base_channels << layer.min(3)
    }
}

#[derive(Clone, Debug)]
struct PatchNet {
    convs: Vec<Conv>,
}

impl PatchNet {
    fn new(prefix: &str, spec: &DiscriminatorSpec) -> Self {
        let mut convs = Vec::new();
        let mut cin = spec.in_channels;
        for l in 0..spec.n_layers {
            let c = spec.width(l);
            convs.push(Conv::new(
                format!("{prefix}.down{l}"),
                ConvSpec::new(cin, c, 4).with_stride(2).with_padding(1),
            ));
            cin = c;
        }
        convs.push(Conv::new(
            format!("{prefix}.mid"),
            ConvSpec::same(cin, cin, 3, 1),
        ));
        convs.push(Conv::new(
            format!("{prefix}.score"),
            ConvSpec::same(cin, 1, 3, 1),
        ));
        Self { convs }
    }

    fn forward<'t, T: Element>(
        &self,
        p: &Params<'t, '_, T>,
        norm: bool,
        mut x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            x = conv.forward(p, x)?;
            if i < last {
                if norm && i > 0 {
                    x = instance_norm(x)?;
                }
                x = x.leaky_relu(SLOPE);
            }
        }
        Ok(x)
    }
}

/// Patch discriminators at full, half and quarter resolution. Scores are
/// unbounded.
#[derive(Clone, Debug)]
pub struct Discriminator {
    spec: DiscriminatorSpec,
    nets: Vec<PatchNet>,
}

impl Discriminator {
    pub fn new(spec: DiscriminatorSpec) -> Result<Self> {
        spec.validate()?;
        let nets = if spec.share_weights {
            vec![PatchNet::new("d.shared", &spec)]
        } else {
            (0..spec.scales)
                .map(|s| PatchNet::new(&format!("d.scale{s}"), &spec))
                .collect()
        };
        Ok(Self { spec, nets })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn init(&self, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        for conv in self.nets.iter().flat_map(|n| &n.convs) {
            conv.init(&mut store, seed);
        }
        store
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let m = self.spec.min_size();
        let f = 1 << (self.spec.scales - 1);
        match shape {
            [n, c, h, w]
                if *n > 0
                    && *c == self.spec.in_channels
                    && *h >= m
                    && *w >= m
                    && h % f == 0
                    && w % f == 0 =>
            {
                Ok(())
            }
            _ => Err(Error::shape(
                "discriminator",
                format!(
                    "expected N×{}×H×W with H, W ≥ {m} and divisible by {f}, got {shape:?}",
                    self.spec.in_channels
                ),
            )),
        }
    }

    pub fn forward<'t, T: Element>(
        &self,
        p: &Params<'t, '_, T>,
        x: Var<'t, T>,
    ) -> Result<Vec<Var<'t, T>>> {
        self.check_input(&x.shape())?;
        let mut scores = Vec::with_capacity(self.spec.scales);
        let mut h = x;
        for s in 0..self.spec.scales {
            if s > 0 {
                h = h.avg_pool2d(2, 2)?;
            }
            let net = &self.nets[if self.spec.share_weights { 0 } else { s }];
            scores.push(net.forward(p, self.spec.instance_norm, h)?);
        }
        Ok(scores)
    }
}
