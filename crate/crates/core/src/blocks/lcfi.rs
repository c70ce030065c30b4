use crate::engine::{concat, ConvSpec, Element, Var};
use crate::error::{Error, Result};

use super::cbam::Cbam;
use super::params::{Conv, ParamStore, Params};
use super::unet::{UNet, UNetSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct LcfiSpec {
    pub branch_count: usize,
    /// One rate per branch, strictly increasing.
    pub dilations: Vec<usize>,
    pub shallow_depth: usize,
    /// Width of every branch.
    pub channels: usize,
    pub cbam_reduction: usize,
    pub cbam_kernel: usize,
}

impl Default for LcfiSpec {
    fn default() -> Self {
        Self {
            branch_count: 4,
            dilations: vec![1, 2, 4, 8],
            shallow_depth: 1,
            channels: 8,
            cbam_reduction: 4,
            cbam_kernel: 7,
        }
    }
}

impl LcfiSpec {
    pub fn validate(&self) -> Result<()> {
        if self.branch_count == 0 || self.branch_count != self.dilations.len() {
            return Err(Error::InvalidArgument(format!(
                "lcfi needs one dilation per branch: {} branches, dilations {:?}",
                self.branch_count, self.dilations
            )));
        }
        if self.dilations[0] == 0 || self.dilations.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "lcfi dilations must be positive and strictly increasing: {:?}",
                self.dilations
            )));
        }
        if self.shallow_depth > 2 {
            return Err(Error::InvalidArgument(format!(
                "lcfi shallow u-net depth {} exceeds 2",
                self.shallow_depth
            )));
        }
        if self.channels == 0 {
            return Err(Error::InvalidArgument(
                "lcfi branch width must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Branch {
    unet: UNet,
    dilated: Conv,
}

/// Parallel shallow-U-net and dilated-conv branches fused by CBAM and
/// projected back to the input width.
#[derive(Clone, Debug)]
pub struct Lcfi {
    branches: Vec<Branch>,
    cbam: Cbam,
    project: Conv,
}

impl Lcfi {
    pub fn new(prefix: &str, in_channels: usize, spec: &LcfiSpec) -> Result<Self> {
        spec.validate()?;
        let c = spec.channels;
        let branches = spec
            .dilations
            .iter()
            .enumerate()
            .map(|(b, &d)| {
                let unet = UNet::new(
                    &format!("{prefix}.b{b}.unet"),
                    UNetSpec {
                        depth: spec.shallow_depth,
                        base_channels: c,
                        channel_mult: 1,
                        max_channels: c,
                        in_channels,
                        out_channels: c,
                        residual: false,
                        instance_norm: false,
                    },
                )?;
                Ok(Branch {
                    unet,
                    dilated: Conv::new(
                        format!("{prefix}.b{b}.dilated"),
                        ConvSpec::same(c, c, 3, d),
                    ),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let width = c * spec.branch_count;
        Ok(Self {
            branches,
            cbam: Cbam::new(
                &format!("{prefix}.cbam"),
                width,
                spec.cbam_reduction,
                spec.cbam_kernel,
            ),
            project: Conv::new(
                format!("{prefix}.project"),
                ConvSpec::new(width, in_channels, 1),
            ),
        })
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        for b in &self.branches {
            b.unet.init(store, seed);
            b.dilated.init(store, seed);
        }
        self.cbam.init(store, seed);
        self.project.init(store, seed);
    }

    pub fn cbam(&self) -> &Cbam {
        &self.cbam
    }

    pub fn projection(&self) -> &Conv {
        &self.project
    }

    /// Output of branch `b` before fusion.
    pub fn branch<'t, T: Element>(
        &self,
        p: &Params<'t, '_, T>,
        b: usize,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let br = &self.branches[b];
        let u = br.unet.forward(p, x)?.output.relu();
        Ok(br.dilated.forward(p, u)?.relu())
    }

    pub fn forward<'t, T: Element>(
        &self,
        p: &Params<'t, '_, T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let outs = (0..self.branches.len())
            .map(|b| self.branch(p, b, x))
            .collect::<Result<Vec<_>>>()?;
        let fused = self.cbam.forward(p, concat(&outs, 1)?)?;
        self.project.forward(p, fused)
    }
}
