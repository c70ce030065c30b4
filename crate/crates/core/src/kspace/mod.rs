//! Fourier-domain forward model: centred FFT, undersampling, zero-filled
//! reconstruction and the k-space consistency residual.

pub mod fft;
mod mask;

pub use mask::{make_mask, make_mask_with, MaskParams, MaskPattern, SamplingMask};

use crate::engine::{Element, Tape, Tensor, Var};
use crate::error::{Error, Result};

fn complex_dims(op: &'static str, t: &Tensor<f32>) -> Result<[usize; 4]> {
    match *t.shape() {
        [n, 2, h, w] => Ok([n, 2, h, w]),
        ref s => Err(Error::shape(op, format!("expected N×2×H×W, got {s:?}"))),
    }
}

/// Image-domain complex field stored as `N×2×H×W` (real, imaginary).
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage(Tensor<f32>);

/// Frequency-domain field with the same layout as [`ComplexImage`], DC-centred.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpace(Tensor<f32>);

macro_rules! complex_field {
    ($ty:ident, $what:literal) => {
        impl $ty {
            pub fn new(t: Tensor<f32>) -> Result<Self> {
                complex_dims($what, &t)?;
                Ok(Self(t))
            }

            pub fn zeros(n: usize, h: usize, w: usize) -> Self {
                Self(Tensor::zeros([n, 2, h, w]))
            }

            pub fn tensor(&self) -> &Tensor<f32> {
                &self.0
            }

            pub fn into_tensor(self) -> Tensor<f32> {
                self.0
            }

            pub fn batch(&self) -> usize {
                self.0.shape()[0]
            }

            pub fn height(&self) -> usize {
                self.0.shape()[2]
            }

            pub fn width(&self) -> usize {
                self.0.shape()[3]
            }

            /// `√(re² + im²)` as an `N×1×H×W` tensor.
            pub fn magnitude(&self) -> Tensor<f32> {
                magnitude(&self.0)
            }
        }
    };
}

complex_field!(ComplexImage, "complex image");
complex_field!(KSpace, "k-space");

impl ComplexImage {
    /// Real-valued image (`N×1×H×W` or `H×W`) with zero imaginary part.
    pub fn from_real(t: &Tensor<f32>) -> Result<Self> {
        let (n, h, w) = match *t.shape() {
            [h, w] => (1, h, w),
            [n, 1, h, w] => (n, h, w),
            ref s => {
                return Err(Error::shape(
                    "from_real",
                    format!("expected H×W or N×1×H×W, got {s:?}"),
                ))
            }
        };
        let plane = h * w;
        let mut data = vec![0.0f32; n * 2 * plane];
        for i in 0..n {
            data[i * 2 * plane..i * 2 * plane + plane]
                .copy_from_slice(&t.data()[i * plane..(i + 1) * plane]);
        }
        Ok(Self(Tensor::new([n, 2, h, w], data)?))
    }

    /// Splits a batch into single-image fields.
    pub fn split(&self) -> Vec<ComplexImage> {
        let [n, _, h, w] = complex_dims("split", &self.0).expect("validated");
        let len = 2 * h * w;
        (0..n)
            .map(|i| {
                let data = self.0.data()[i * len..(i + 1) * len].to_vec();
                ComplexImage(Tensor::new([1, 2, h, w], data).expect("shape"))
            })
            .collect()
    }

    /// Stacks single-image fields of equal size into a batch.
    pub fn stack(items: &[&ComplexImage]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero images".into()))?;
        let (h, w) = (first.height(), first.width());
        let mut data = Vec::new();
        let mut n = 0;
        for it in items {
            if it.height() != h || it.width() != w {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    lhs: first.0.shape().to_vec(),
                    rhs: it.0.shape().to_vec(),
                });
            }
            n += it.batch();
            data.extend_from_slice(it.0.data());
        }
        Ok(Self(Tensor::new([n, 2, h, w], data)?))
    }
}

pub fn magnitude<T: Element>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    let (n, plane) = (s[0], s[2] * s[3]);
    let mut out = Vec::with_capacity(n * plane);
    for i in 0..n {
        let re = &t.data()[i * 2 * plane..i * 2 * plane + plane];
        let im = &t.data()[i * 2 * plane + plane..(i + 1) * 2 * plane];
        out.extend(re.iter().zip(im).map(|(&a, &b)| (a * a + b * b).sqrt()));
    }
    Tensor::new([n, 1, s[2], s[3]], out).expect("shape")
}

fn transform(t: &Tensor<f32>, inverse: bool) -> Result<Tensor<f32>> {
    let [n, _, h, w] = complex_dims("fft2", t)?;
    fft::check_power_of_two("fft2", h, w)?;
    let mut data = t.data().to_vec();
    fft::fft2_batch(&mut data, n, h, w, inverse);
    Tensor::new(t.shape(), data)
}

/// Orthonormal centred 2-D DFT.
pub fn fft2(img: &ComplexImage) -> Result<KSpace> {
    Ok(KSpace(transform(&img.0, false)?))
}

pub fn ifft2(k: &KSpace) -> Result<ComplexImage> {
    Ok(ComplexImage(transform(&k.0, true)?))
}

fn check_mask(op: &'static str, k: &Tensor<f32>, m: &SamplingMask) -> Result<()> {
    let s = k.shape();
    if s.len() != 4 || s[2] != m.height() || s[3] != m.width() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: s.to_vec(),
            rhs: vec![m.height(), m.width()],
        });
    }
    Ok(())
}

/// `H ∘ k`: zeroes unacquired locations on both channels.
pub fn undersample(k: &KSpace, m: &SamplingMask) -> Result<KSpace> {
    check_mask("undersample", &k.0, m)?;
    let plane = m.height() * m.width();
    let mut data = k.0.data().to_vec();
    for chunk in data.chunks_mut(plane) {
        for (v, &keep) in chunk.iter_mut().zip(m.values()) {
            *v *= keep;
        }
    }
    Ok(KSpace(Tensor::new(k.0.shape(), data)?))
}

/// Inverse transform of the measurements; this is the generator input.
pub fn zero_filled(y: &KSpace) -> Result<ComplexImage> {
    ifft2(y)
}

/// Mean absolute k-space residual `|y - H∘F(g)|` over the acquired entries
/// (both channels of every sampled location), differentiable in `g`.
pub fn dc_residual<'t, T: Element>(
    g: Var<'t, T>,
    y: &KSpace,
    m: &SamplingMask,
) -> Result<Var<'t, T>> {
    let gs = g.shape();
    if gs != y.0.shape() {
        return Err(Error::ShapeMismatch {
            op: "dc_residual",
            lhs: gs,
            rhs: y.0.shape().to_vec(),
        });
    }
    check_mask("dc_residual", &y.0, m)?;
    let tape: &'t Tape<T> = g.tape;
    let count = m.count() * 2 * gs[0];
    if count == 0 {
        return Ok(tape.scalar(0.0));
    }
    let mask = tape.constant(m.to_tensor().cast());
    let measured = tape.constant(y.0.cast());
    let predicted = g.fft2()?.mul(mask)?;
    Ok(measured
        .sub(predicted)?
        .abs()
        .sum()
        .scale(1.0 / count as f64))
}
