use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::losses::{self, Structural};

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    Ok(())
}

/// `10·log10(max_val² / MSE)` in dB; `f64::INFINITY` for identical inputs.
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>, max_val: f64) -> Result<f64> {
    same_shape("psnr", a.shape(), b.shape())?;
    if !(max_val > 0.0) {
        return Err(Error::InvalidArgument(format!("psnr max_val must be positive, got {max_val}")));
    }
    if a.numel() == 0 {
        return Err(Error::InvalidArgument("psnr of empty images".into()));
    }
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum();
    let mse = sse / a.numel() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_val * max_val / mse).log10()
    })
}

fn as_image(op: &'static str, t: &Tensor<f32>) -> Result<Tensor<f64>> {
    match *t.shape() {
        [h, w] => Ok(Tensor::new([1, 1, h, w], t.data().iter().map(|&v| f64::from(v)).collect())?),
        [_, 1, _, _] => Ok(t.cast()),
        ref s => Err(Error::shape(op, format!("expected H×W or N×1×H×W, got {s:?}"))),
    }
}

/// Gaussian-window SSIM of two magnitude images on `[0, 1]`, in `f64`.
pub fn ssim_value(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    same_shape("ssim", a.shape(), b.shape())?;
    let tape = Tape::<f64>::new();
    let (x, y) = (tape.constant(as_image("ssim", a)?), tape.constant(as_image("ssim", b)?));
    Ok(losses::ssim(x, y, &losses::SsimConfig::default())?.item())
}

/// MS-SSIM with as many scales as the image size allows.
pub fn ms_ssim_value(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    same_shape("ms_ssim", a.shape(), b.shape())?;
    let (x, y) = (as_image("ms_ssim", a)?, as_image("ms_ssim", b)?);
    let side = x.shape()[2].min(x.shape()[3]);
    let tape = Tape::<f64>::new();
    Ok(Structural::for_size(side)?
        .ms_ssim(tape.constant(x), tape.constant(y))?
        .item())
}

/// `(xᵀy / d + 1)^degree`.
pub fn poly_kernel(x: &[f64], y: &[f64], degree: i32) -> f64 {
    let d = x.len() as f64;
    (x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / d + 1.0).powi(degree)
}

fn rows(t: &Tensor<f64>) -> Result<Vec<&[f64]>> {
    match *t.shape() {
        [n, d] if n > 0 && d > 0 => Ok(t.data().chunks(d).collect()),
        ref s => Err(Error::shape("kid", format!("expected a non-empty N×D feature matrix, got {s:?}"))),
    }
}

/// Unbiased MMD² between equally sized samples:
/// `Σ_{i≠j} [k(xᵢ,xⱼ) + k(yᵢ,yⱼ) − k(xᵢ,yⱼ) − k(xⱼ,yᵢ)] / (m(m−1))`.
pub fn mmd2_unbiased(x: &[&[f64]], y: &[&[f64]], degree: i32) -> Result<f64> {
    let m = x.len();
    if m < 2 || y.len() != m {
        return Err(Error::InvalidArgument(format!(
            "mmd needs two samples of equal size ≥ 2, got {} and {}",
            m,
            y.len()
        )));
    }
    let (mut kxx, mut kyy, mut kxy) = (0.0, 0.0, 0.0);
    for i in 0..m {
        for j in 0..m {
            if i != j {
                kxx += poly_kernel(x[i], x[j], degree);
                kyy += poly_kernel(y[i], y[j], degree);
                kxy += poly_kernel(x[i], y[j], degree);
            }
        }
    }
    Ok((kxx + kyy - 2.0 * kxy) / (m * (m - 1)) as f64)
}

/// Index subsets used by [`kid`]: per subset, sorted draws without
/// replacement from the real and the fake set.
pub fn kid_subsets(
    n_real: usize,
    n_fake: usize,
    subset_size: usize,
    subsets: usize,
    seed: u64,
) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..subsets)
        .map(|_| {
            let mut draw = |n| {
                let mut v = index::sample(&mut rng, n, subset_size).into_vec();
                v.sort_unstable();
                v
            };
            let r = draw(n_real);
            (r, draw(n_fake))
        })
        .collect()
}

/// Kernel inception distance: unbiased polynomial-kernel MMD² averaged over
/// seeded subsets of both feature sets.
pub fn kid(
    real: &Tensor<f64>,
    fake: &Tensor<f64>,
    degree: i32,
    subset_size: usize,
    subsets: usize,
    seed: u64,
) -> Result<f64> {
    let (xr, xf) = (rows(real)?, rows(fake)?);
    if xr[0].len() != xf[0].len() {
        return Err(Error::ShapeMismatch {
            op: "kid",
            lhs: real.shape().to_vec(),
            rhs: fake.shape().to_vec(),
        });
    }
    if subset_size < 2 || subsets == 0 || xr.len() < subset_size || xf.len() < subset_size {
        return Err(Error::InvalidArgument(format!(
            "kid needs sets of at least subset_size = {subset_size} (≥ 2), got {} and {}",
            xr.len(),
            xf.len()
        )));
    }
    let mut total = 0.0;
    for (ir, jf) in kid_subsets(xr.len(), xf.len(), subset_size, subsets, seed) {
        let a: Vec<&[f64]> = ir.iter().map(|&i| xr[i]).collect();
        let b: Vec<&[f64]> = jf.iter().map(|&j| xf[j]).collect();
        total += mmd2_unbiased(&a, &b, degree)?;
    }
    Ok(total / subsets as f64)
}
