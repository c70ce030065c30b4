use crate::engine::{concat, ConvSpec, Element, Var};
use crate::error::{Error, Result};

use super::params::{instance_norm, Conv, ParamStore, Params};

/// Encoder-decoder layout. Level `l` runs at `1/2^l` of the input size with
/// `channels(l)` feature maps.
#[derive(Clone, Debug, PartialEq)]
pub struct UNetSpec {
    pub depth: usize,
    pub base_channels: usize,
    pub channel_mult: usize,
    pub max_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Adds the input to the output (requires `in_channels == out_channels`).
    pub residual: bool,
    pub instance_norm: bool,
}

impl Default for UNetSpec {
    fn default() -> Self {
        Self {
            depth: 4,
            base_channels: 32,
            channel_mult: 1,
            max_channels: 256,
            in_channels: 2,
            out_channels: 2,
            residual: true,
            instance_norm: false,
        }
    }
}

impl UNetSpec {
    pub fn channels(&self, level: usize) -> usize {
        let mut c = self.base_channels;
        for _ in 0..level {
            c = c.saturating_mul(self.channel_mult);
        }
        c.min(self.max_channels).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0
            || self.channel_mult == 0
            || self.in_channels == 0
            || self.out_channels == 0
        {
            return Err(Error::InvalidArgument(format!(
                "unet channel counts must be positive: {self:?}"
            )));
        }
        if self.residual && self.in_channels != self.out_channels {
            return Err(Error::InvalidArgument(format!(
                "residual unet needs in_channels == out_channels, got {} and {}",
                self.in_channels, self.out_channels
            )));
        }
        Ok(())
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let f = 1usize << self.depth;
        match shape {
            [_, c, h, w]
                if *c == self.in_channels && h % f == 0 && w % f == 0 && *h > 0 && *w > 0 =>
            {
                Ok(())
            }
            _ => Err(Error::shape(
                "unet",
                format!(
                    "expected N×{}×H×W with H, W divisible by {f}, got {shape:?}",
                    self.in_channels
                ),
            )),
        }
    }
}

#[derive(Clone, Debug)]
struct Stage {
    convs: Vec<Conv>,
}

/// U-net with max-pool downsampling, nearest-neighbour upsampling and
/// concatenated skips.
#[derive(Clone, Debug)]
pub struct UNet {
    spec: UNetSpec,
    enc: Vec<Stage>,
    bottom: Stage,
    up: Vec<Conv>,
    dec: Vec<Stage>,
    head: Conv,
}

/// Output of a U-net pass: the image and the decoder map of every level
/// (index `l` at `1/2^l` resolution).
pub struct UNetOutput<'t, T: Element> {
    pub output: Var<'t, T>,
    pub decoder: Vec<Var<'t, T>>,
}

impl UNet {
    pub fn new(prefix: &str, spec: UNetSpec) -> Result<Self> {
        spec.validate()?;
        let stage = |name: String, cin: usize, cout: usize| Stage {
            convs: vec![
                Conv::new(format!("{name}.conv0"), ConvSpec::same(cin, cout, 3, 1)),
                Conv::new(format!("{name}.conv1"), ConvSpec::same(cout, cout, 3, 1)),
            ],
        };
        let mut enc = Vec::new();
        let mut cin = spec.in_channels;
        for l in 0..spec.depth {
            enc.push(stage(format!("{prefix}.enc{l}"), cin, spec.channels(l)));
            cin = spec.channels(l);
        }
        let bottom = stage(format!("{prefix}.bottom"), cin, spec.channels(spec.depth));
        let mut up = Vec::new();
        let mut dec = Vec::new();
        for l in 0..spec.depth {
            let c = spec.channels(l);
            up.push(Conv::new(
                format!("{prefix}.up{l}"),
                ConvSpec::same(spec.channels(l + 1), c, 3, 1),
            ));
            dec.push(stage(format!("{prefix}.dec{l}"), 2 * c, c));
        }
        let head = Conv::new(
            format!("{prefix}.out"),
            ConvSpec::same(spec.channels(0), spec.out_channels, 1, 1),
        );
        Ok(Self {
            spec,
            enc,
            bottom,
            up,
            dec,
            head,
        })
    }

    pub fn spec(&self) -> &UNetSpec {
        &self.spec
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        let stages = self
            .enc
            .iter()
            .chain(std::iter::once(&self.bottom))
            .chain(&self.dec);
        for conv in stages.flat_map(|s| &s.convs).chain(&self.up) {
            conv.init(store, seed);
        }
        self.head.init(store, seed);
    }

    fn stage<'t, T: Element>(
        &self,
        s: &Stage,
        p: &Params<'t, '_, T>,
        mut x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        for conv in &s.convs {
            x = conv.forward(p, x)?;
            if self.spec.instance_norm {
                x = instance_norm(x)?;
            }
            x = x.relu();
        }
        Ok(x)
    }

    pub fn forward<'t, T: Element>(
        &self,
        p: &Params<'t, '_, T>,
        x: Var<'t, T>,
    ) -> Result<UNetOutput<'t, T>> {
        self.spec.check_input(&x.shape())?;
        let mut skips = Vec::with_capacity(self.spec.depth);
        let mut h = x;
        for s in &self.enc {
            h = self.stage(s, p, h)?;
            skips.push(h);
            h = h.max_pool2d(2, 2)?;
        }
        h = self.stage(&self.bottom, p, h)?;
        let mut decoder = vec![h; self.spec.depth];
        for l in (0..self.spec.depth).rev() {
            let u = self.up[l].forward(p, h.upsample_nearest(2)?)?.relu();
            h = self.stage(&self.dec[l], p, concat(&[u, skips[l]], 1)?)?;
            decoder[l] = h;
        }
        let mut output = self.head.forward(p, h)?;
        if self.spec.residual {
            output = output.add(x)?;
        }
        Ok(UNetOutput { output, decoder })
    }
}
