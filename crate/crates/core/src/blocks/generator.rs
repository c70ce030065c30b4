use crate::engine::{concat, ConvSpec, Element, Var};
use crate::error::{Error, Result};

use super::attention::attention_selection;
use super::lcfi::{Lcfi, LcfiSpec};
use super::params::{Conv, ParamStore, Params};
use super::rrdb::RrdbStack;
use super::sci::sci_forward;
use super::unet::{UNet, UNetSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSpec {
    pub backbone: UNetSpec,
    /// Decoder levels whose features feed an LCFI++ module.
    pub tap_levels: Vec<usize>,
    /// Number of attention pairs.
    pub pairs: usize,
    pub rrdb_count: usize,
    pub lcfi: LcfiSpec,
    /// Common width of tapped features after alignment.
    pub fusion_channels: usize,
    pub head_channels: usize,
    pub head_growth: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            backbone: UNetSpec::default(),
            tap_levels: vec![1, 2, 3],
            pairs: 4,
            rrdb_count: 2,
            lcfi: LcfiSpec::default(),
            fusion_channels: 16,
            head_channels: 8,
            head_growth: 4,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.lcfi.validate()?;
        if self.backbone.in_channels != 2 || self.backbone.out_channels != 2 {
            return Err(Error::InvalidArgument(
                "generator backbone must map 2 channels to 2".into(),
            ));
        }
        if self.pairs == 0 {
            return Err(Error::InvalidArgument(
                "generator needs at least one attention pair".into(),
            ));
        }
        if self.tap_levels.is_empty() {
            return Err(Error::InvalidArgument(
                "generator needs at least one tap level".into(),
            ));
        }
        if let Some(l) = self.tap_levels.iter().find(|&&l| l >= self.backbone.depth) {
            return Err(Error::InvalidArgument(format!(
                "tap level {l} is not a decoder level of a depth-{} backbone",
                self.backbone.depth
            )));
        }
        if self.fusion_channels == 0 || self.head_channels == 0 || self.head_growth == 0 {
            return Err(Error::InvalidArgument(
                "generator widths must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Input height and width must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        let deepest = self.tap_levels.iter().copied().max().unwrap_or(0);
        (1usize << self.backbone.depth).max(1 << (deepest + self.lcfi.shallow_depth))
    }
}

#[derive(Clone, Debug)]
struct Tap {
    level: usize,
    lcfi: Lcfi,
    align: Conv,
}

#[derive(Clone, Debug)]
struct Head {
    input: Conv,
    rrdb: RrdbStack,
    output: Conv,
}

/// Everything the loss suite needs from one generator pass.
pub struct GeneratorOutput<'t, T: Element> {
    /// Coarse backbone reconstruction.
    pub coarse: Var<'t, T>,
    /// Attention-fused reconstruction.
    pub fused: Var<'t, T>,
    pub images: Vec<Var<'t, T>>,
    pub maps: Vec<Var<'t, T>>,
}

/// Two-stage generator: a U-net backbone, then attention-selected refinement
/// heads fed by LCFI++/SCI-processed decoder features.
#[derive(Clone, Debug)]
pub struct Generator {
    spec: GeneratorSpec,
    backbone: UNet,
    taps: Vec<Tap>,
    fuse: Conv,
    heads: Vec<Head>,
}

impl Generator {
    pub fn new(spec: GeneratorSpec) -> Result<Self> {
        spec.validate()?;
        let backbone = UNet::new("g.unet", spec.backbone.clone())?;
        let taps = spec
            .tap_levels
            .iter()
            .enumerate()
            .map(|(t, &level)| {
                let c = spec.backbone.channels(level);
                Ok(Tap {
                    level,
                    lcfi: Lcfi::new(&format!("g.tap{t}.lcfi"), c, &spec.lcfi)?,
                    align: Conv::new(
                        format!("g.tap{t}.align"),
                        ConvSpec::new(c, spec.fusion_channels, 1),
                    ),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let fw = spec.fusion_channels;
        let fuse = Conv::new("g.fuse", ConvSpec::new(fw * taps.len() + 2, fw, 1));
        let heads = (0..spec.pairs)
            .map(|i| Head {
                input: Conv::new(
                    format!("g.head{i}.in"),
                    ConvSpec::same(fw, spec.head_channels, 3, 1),
                ),
                rrdb: RrdbStack::new(
                    &format!("g.head{i}"),
                    spec.head_channels,
                    spec.head_growth,
                    spec.rrdb_count,
                ),
                output: Conv::new(
                    format!("g.head{i}.out"),
                    ConvSpec::same(spec.head_channels, 3, 3, 1),
                ),
            })
            .collect();
        Ok(Self {
            spec,
            backbone,
            taps,
            fuse,
            heads,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    /// Fresh parameters drawn from `seed`.
    pub fn init(&self, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        self.backbone.init(&mut store, seed);
        for t in &self.taps {
            t.lcfi.init(&mut store, seed);
            t.align.init(&mut store, seed);
        }
        self.fuse.init(&mut store, seed);
        for h in &self.heads {
            h.input.init(&mut store, seed);
            h.rrdb.init(&mut store, seed);
            h.output.init(&mut store, seed);
        }
        store
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let f = self.spec.size_multiple();
        match shape {
            [n, 2, h, w] if *n > 0 && *h > 0 && *w > 0 && h % f == 0 && w % f == 0 => Ok(()),
            _ => Err(Error::shape(
                "generator",
                format!("expected N×2×H×W with H, W multiples of {f}, got {shape:?}"),
            )),
        }
    }

    pub fn forward<'t, T: Element>(
        &self,
        p: &Params<'t, '_, T>,
        z: Var<'t, T>,
    ) -> Result<GeneratorOutput<'t, T>> {
        self.check_input(&z.shape())?;
        let stage1 = self.backbone.forward(p, z)?;
        let coarse = stage1.output;
        let aligned = self
            .taps
            .iter()
            .map(|t| {
                let f = t.lcfi.forward(p, stage1.decoder[t.level])?;
                let f = t.align.forward(p, f)?.relu();
                if t.level == 0 {
                    Ok(f)
                } else {
                    f.upsample_nearest(1 << t.level)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut coupled = sci_forward(&aligned)?;
        coupled.push(coarse);
        let shared = self.fuse.forward(p, concat(&coupled, 1)?)?.relu();
        let mut images = Vec::with_capacity(self.heads.len());
        let mut logits = Vec::with_capacity(self.heads.len());
        for h in &self.heads {
            let x = h.input.forward(p, shared)?.relu();
            let out = h.output.forward(p, h.rrdb.forward(p, x)?)?;
            images.push(coarse.add(out.slice(1, 0, 2)?)?);
            logits.push(out.slice(1, 2, 1)?);
        }
        let sel = attention_selection(&images, &logits)?;
        Ok(GeneratorOutput {
            coarse,
            fused: sel.fused,
            images,
            maps: sel.maps,
        })
    }
}
