use crate::engine::{ConvSpec, Element, Tensor, Var};
use crate::error::{Error, Result};

/// Canonical five-scale weights.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Gaussian-window SSIM parameters for images with dynamic range `data_range`.
#[derive(Clone, Debug, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

impl SsimConfig {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.data_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.data_range).powi(2)
    }

    /// Normalised `window × window` Gaussian.
    pub fn kernel(&self) -> Vec<f64> {
        let r = (self.window as f64 - 1.0) / 2.0;
        let g: Vec<f64> = (0..self.window)
            .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = g.iter().sum();
        let g: Vec<f64> = g.iter().map(|v| v / s).collect();
        let mut k = Vec::with_capacity(self.window * self.window);
        for a in &g {
            for b in &g {
                k.push(a * b);
            }
        }
        k
    }

    /// Largest scale count a side of `size` supports.
    pub fn max_scales(&self, size: usize) -> usize {
        let mut scales = 0;
        while self.window << scales <= size {
            scales += 1;
        }
        scales
    }

    /// The first `scales` canonical weights, renormalised to sum to one.
    pub fn weights_for(&self, scales: usize) -> Result<Vec<f64>> {
        if scales == 0 || scales > MS_SSIM_WEIGHTS.len() {
            return Err(Error::InvalidArgument(format!("unsupported ms-ssim scale count {scales}")));
        }
        let w = &MS_SSIM_WEIGHTS[..scales];
        let total: f64 = w.iter().sum();
        Ok(w.iter().map(|v| v / total).collect())
    }
}

struct Stats<'t, T: Element> {
    ssim: Var<'t, T>,
    cs: Var<'t, T>,
}

fn check_pair(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    match a {
        [_, 1, _, _] => Ok(()),
        _ => Err(Error::shape(op, format!("expected N×1×H×W, got {a:?}"))),
    }
}

fn stats<'t, T: Element>(a: Var<'t, T>, b: Var<'t, T>, cfg: &SsimConfig) -> Result<Stats<'t, T>> {
    let [h, w] = [a.shape()[2], a.shape()[3]];
    if h < cfg.window || w < cfg.window {
        return Err(Error::shape(
            "ssim",
            format!("image {h}×{w} is smaller than the {} window", cfg.window),
        ));
    }
    let tape = a.tape();
    let spec = ConvSpec::new(1, 1, cfg.window);
    let kernel = tape.constant(Tensor::from_fn([1, 1, cfg.window, cfg.window], {
        let k = cfg.kernel();
        move |i| T::from_f64(k[i])
    }));
    let blur = |v: Var<'t, T>| v.conv2d(kernel, None, &spec);
    let (mu_a, mu_b) = (blur(a)?, blur(b)?);
    let (mu_aa, mu_bb, mu_ab) = (mu_a.square(), mu_b.square(), mu_a.mul(mu_b)?);
    let var_a = blur(a.square())?.sub(mu_aa)?;
    let var_b = blur(b.square())?.sub(mu_bb)?;
    let cov = blur(a.mul(b)?)?.sub(mu_ab)?;
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let cs_map = cov.scale(2.0).add_scalar(c2).div(var_a.add(var_b)?.add_scalar(c2))?;
    let lum = mu_ab.scale(2.0).add_scalar(c1).div(mu_aa.add(mu_bb)?.add_scalar(c1))?;
    Ok(Stats {
        ssim: lum.mul(cs_map)?.mean(),
        cs: cs_map.mean(),
    })
}

/// Mean SSIM of two `N×1×H×W` images over valid window positions.
pub fn ssim<'t, T: Element>(a: Var<'t, T>, b: Var<'t, T>, cfg: &SsimConfig) -> Result<Var<'t, T>> {
    check_pair("ssim", &a.shape(), &b.shape())?;
    Ok(stats(a, b, cfg)?.ssim)
}

/// Multi-scale SSIM with one weight per dyadic scale.
///
/// Contrast-structure terms of the finer scales and the full SSIM of the
/// coarsest scale are combined as a weighted geometric product; negative
/// terms are clipped to a small positive floor first.
pub fn ms_ssim<'t, T: Element>(a: Var<'t, T>, b: Var<'t, T>, cfg: &SsimConfig, weights: &[f64]) -> Result<Var<'t, T>> {
    check_pair("ms_ssim", &a.shape(), &b.shape())?;
    let scales = weights.len();
    if scales == 0 {
        return Err(Error::InvalidArgument("ms-ssim needs at least one scale".into()));
    }
    let need = cfg.window << (scales - 1);
    let side = a.shape()[2].min(a.shape()[3]);
    if side < need {
        return Err(Error::shape(
            "ms_ssim",
            format!("{scales} scales need a side of at least {need}, got {side}"),
        ));
    }
    const FLOOR: f64 = 1e-6;
    let (mut x, mut y) = (a, b);
    let mut total: Option<Var<'t, T>> = None;
    for (j, &w) in weights.iter().enumerate() {
        if j > 0 {
            x = x.avg_pool2d(2, 2)?;
            y = y.avg_pool2d(2, 2)?;
        }
        let st = stats(x, y, cfg)?;
        let term = if j + 1 == scales { st.ssim } else { st.cs };
        let factor = term.clamp(FLOOR, f64::INFINITY).powf(w);
        total = Some(match total {
            Some(t) => t.mul(factor)?,
            None => factor,
        });
    }
    Ok(total.expect("at least one scale"))
}
