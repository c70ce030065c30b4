//! Training objectives: L1, SSIM and MS-SSIM, the mixed reconstruction
//! loss, the least-squares adversarial pair, perceptual/Gram distance and
//! the generator and discriminator totals.

mod perceptual;
mod ssim;

pub use perceptual::{gram, FeatureExtractor, Features, DEFAULT_SEED as EXTRACTOR_SEED, STAGE_CHANNELS};
pub use ssim::{ms_ssim, ssim, SsimConfig, MS_SSIM_WEIGHTS};

use crate::engine::{sum_all, Element, Var};
use crate::error::{Error, Result};

/// Weights of every loss term.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_rec: f64,
    /// Share of the structural term in the reconstruction loss.
    pub alpha: f64,
    /// Weight of the attention-masked L1 terms.
    pub omega: f64,
    /// Weight of the coarse-output L1 term.
    pub beta: f64,
    pub lambda_cyc: f64,
    pub lambda_vgg: f64,
    /// Weight of the Gram terms inside the perceptual loss.
    pub gamma: f64,
    pub adversarial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_rec: 10.0,
            alpha: 0.84,
            omega: 0.5,
            beta: 1.0,
            lambda_cyc: 5.0,
            lambda_vgg: 0.1,
            gamma: 1.0,
            adversarial: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_rec", self.lambda_rec),
            ("alpha", self.alpha),
            ("omega", self.omega),
            ("beta", self.beta),
            ("lambda_cyc", self.lambda_cyc),
            ("lambda_vgg", self.lambda_vgg),
            ("gamma", self.gamma),
            ("adversarial", self.adversarial),
        ];
        if let Some((name, v)) = all.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("loss weight {name} must be finite and nonnegative, got {v}")));
        }
        if self.alpha > 1.0 {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Mean absolute difference.
pub fn l1_loss<'t, T: Element>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "l1_loss",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(a.sub(b)?.abs().mean())
}

/// Offset keeping the magnitude differentiable at the origin.
pub const MAGNITUDE_EPS: f64 = 1e-8;

/// Differentiable magnitude of an `N×2×H×W` image, clipped to `[0, 1]`.
pub fn magnitude<'t, T: Element>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let s = x.shape();
    if s.len() != 4 || s[1] != 2 {
        return Err(Error::shape("magnitude", format!("expected N×2×H×W, got {s:?}")));
    }
    let sq = x.square().sum_axis(1)?;
    Ok(sq.add_scalar(MAGNITUDE_EPS).sqrt().clamp(0.0, 1.0))
}

/// Generator outputs the reconstruction loss needs.
#[derive(Clone, Copy)]
pub struct ReconInputs<'a, 't, T: Element> {
    pub coarse: Var<'t, T>,
    pub fused: Var<'t, T>,
    pub images: &'a [Var<'t, T>],
    pub maps: &'a [Var<'t, T>],
    pub target: Var<'t, T>,
}

/// Structural-similarity setup shared by the loss and the metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct Structural {
    pub config: SsimConfig,
    pub weights: Vec<f64>,
}

impl Structural {
    /// Canonical five scales when the image is large enough, otherwise
    /// the largest feasible prefix of the canonical weights, renormalised.
    pub fn for_size(size: usize) -> Result<Self> {
        let config = SsimConfig::default();
        let scales = config.max_scales(size).min(MS_SSIM_WEIGHTS.len());
        let weights = config.weights_for(scales)?;
        Ok(Self { config, weights })
    }

    pub fn ms_ssim<'t, T: Element>(&self, a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
        ms_ssim(a, b, &self.config, &self.weights)
    }
}

/// `λ_rec·((1−α)·(L1(G″,s) + ω·Σᵢ L1(Mⁱ⊗Gⁱ, Mⁱ⊗s)) + α·(1−MS-SSIM(|G″|,|s|)) + β·L1(G′,s))`.
pub fn recon_loss<'t, T: Element>(
    r: ReconInputs<'_, 't, T>,
    w: &LossWeights,
    structural: &Structural,
) -> Result<Var<'t, T>> {
    if r.images.len() != r.maps.len() {
        return Err(Error::InvalidArgument(format!(
            "{} images but {} attention maps",
            r.images.len(),
            r.maps.len()
        )));
    }
    let tape = r.target.tape();
    let pixel = l1_loss(r.fused, r.target)?;
    let masked = r
        .images
        .iter()
        .zip(r.maps)
        .map(|(g, m)| l1_loss(g.mul(*m)?, r.target.mul(*m)?))
        .collect::<Result<Vec<_>>>()?;
    let masked = if masked.is_empty() { tape.scalar(0.0) } else { sum_all(&masked)? };
    let l1_part = pixel.add(masked.scale(w.omega))?.scale(1.0 - w.alpha);
    let mut total = l1_part;
    if w.alpha > 0.0 {
        let ms = structural.ms_ssim(magnitude(r.fused)?, magnitude(r.target)?)?;
        total = total.add(ms.neg().add_scalar(1.0).scale(w.alpha))?;
    }
    total = total.add(l1_loss(r.coarse, r.target)?.scale(w.beta))?;
    Ok(total.scale(w.lambda_rec))
}

fn mean_over_scales<'t, T: Element>(terms: Vec<Var<'t, T>>) -> Result<Var<'t, T>> {
    let n = terms.len();
    Ok(sum_all(&terms)?.scale(1.0 / n as f64))
}

/// Mean over scales and patches of `(D(s) − 1)² + D(G″)²`.
pub fn lsgan_d_loss<'t, T: Element>(real: &[Var<'t, T>], fake: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    if real.is_empty() || real.len() != fake.len() {
        return Err(Error::InvalidArgument(format!(
            "lsgan needs matching score lists, got {} and {}",
            real.len(),
            fake.len()
        )));
    }
    let terms = real
        .iter()
        .zip(fake)
        .map(|(r, f)| Ok(r.add_scalar(-1.0).square().mean().add(f.square().mean())?))
        .collect::<Result<Vec<_>>>()?;
    mean_over_scales(terms)
}

/// Mean over scales and patches of `(D(G″) − 1)²`.
pub fn lsgan_g_loss<'t, T: Element>(fake: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    if fake.is_empty() {
        return Err(Error::InvalidArgument("lsgan needs at least one score map".into()));
    }
    mean_over_scales(fake.iter().map(|f| f.add_scalar(-1.0).square().mean()).collect())
}

/// `λ_vgg·Σᵢ(mean((fⁱ(a) − fⁱ(b))²) + γ·mean((Gram fⁱ(a) − Gram fⁱ(b))²))` on
/// one-channel magnitude images.
pub fn perceptual_loss<'t, T: Element>(
    a: Var<'t, T>,
    b: Var<'t, T>,
    fx: &FeatureExtractor,
    w: &LossWeights,
) -> Result<Var<'t, T>> {
    let tape = a.tape();
    let (fa, fb) = (fx.features(tape, a)?, fx.features(tape, b)?);
    let mut terms = Vec::with_capacity(fa.stages.len());
    for (x, y) in fa.stages.iter().zip(&fb.stages) {
        let mut t = x.sub(*y)?.square().mean();
        if w.gamma > 0.0 {
            let g = gram(*x)?.sub(gram(*y)?)?.square().mean();
            t = t.add(g.scale(w.gamma))?;
        }
        terms.push(t);
    }
    Ok(sum_all(&terms)?.scale(w.lambda_vgg))
}

/// Generator objective and its parts.
pub struct GeneratorLoss<'t, T: Element> {
    pub total: Var<'t, T>,
    pub recon: Var<'t, T>,
    pub adversarial: Var<'t, T>,
    pub consistency: Var<'t, T>,
    pub perceptual: Var<'t, T>,
}

/// `recon + adversarial·lsgan_g + λ_cyc·consistency + perceptual`, where
/// `consistency` is the data-consistency residual.
pub fn total_g_loss<'t, T: Element>(
    recon: Var<'t, T>,
    lsgan_g: Var<'t, T>,
    consistency: Var<'t, T>,
    perceptual: Var<'t, T>,
    w: &LossWeights,
) -> Result<GeneratorLoss<'t, T>> {
    let adversarial = lsgan_g.scale(w.adversarial);
    let cyc = consistency.scale(w.lambda_cyc);
    let total = sum_all(&[recon, adversarial, cyc, perceptual])?;
    Ok(GeneratorLoss {
        total,
        recon,
        adversarial,
        consistency: cyc,
        perceptual,
    })
}

/// The discriminator objective.
pub fn total_d_loss<'t, T: Element>(real: &[Var<'t, T>], fake: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    lsgan_d_loss(real, fake)
}
