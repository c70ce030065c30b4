//! Synthetic phantoms, the measurement pipeline and file formats.

mod dataset;
pub mod io;
mod phantom;

pub use dataset::{dataset_split, generate_dataset, ingest_image, Dataset, DatasetSpec, Manifest};
pub use io::{export_image, import_image, load_store, load_tensor, save_store, save_tensor};
pub use phantom::{phantom_generate, render, Ellipse, Phantom};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::kspace::{fft2, undersample, zero_filled, ComplexImage, KSpace, SamplingMask};

/// Phase assigned to a real image when it becomes a complex field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PhaseMode {
    #[default]
    Zero,
    /// Seeded low-order polynomial phase, at most about ±π/2 over the field.
    Smooth(u64),
}

/// Wraps an `H×W` (or `1×1×H×W`) real image as a `1×2×H×W` complex field.
pub fn to_complex(img: &Tensor<f32>, mode: PhaseMode) -> Result<ComplexImage> {
    let base = ComplexImage::from_real(img)?;
    let PhaseMode::Smooth(seed) = mode else {
        return Ok(base);
    };
    let (n, h, w) = (base.batch(), base.height(), base.width());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-0.4..0.4));
    let plane = h * w;
    let mut data = base.into_tensor().into_data();
    for i in 0..n {
        let (re, im) = data[i * 2 * plane..(i + 1) * 2 * plane].split_at_mut(plane);
        for (p, (r, q)) in re.iter_mut().zip(im.iter_mut()).enumerate() {
            let y = 2.0 * (p / w) as f64 / h as f64 - 1.0;
            let x = 2.0 * (p % w) as f64 / w as f64 - 1.0;
            let phi = c[0] * x + c[1] * y + c[2] * x * y + c[3] * (x * x + y * y);
            let (s, co) = phi.sin_cos();
            let m = f64::from(*r);
            *r = (m * co) as f32;
            *q = (m * s) as f32;
        }
    }
    ComplexImage::new(Tensor::new([n, 2, h, w], data)?)
}

/// One training tuple: fully sampled image, measurements, mask and
/// zero-filled input.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub s: ComplexImage,
    pub y: KSpace,
    pub mask: SamplingMask,
    pub z: ComplexImage,
}

pub fn make_sample(s: ComplexImage, mask: &SamplingMask) -> Result<Sample> {
    let y = undersample(&fft2(&s)?, mask)?;
    let z = zero_filled(&y)?;
    Ok(Sample {
        s,
        y,
        mask: mask.clone(),
        z,
    })
}

impl Sample {
    /// Recomputes `y` and `z` from `s` and the mask and checks both within `tol`.
    pub fn verify(&self, tol: f64) -> Result<()> {
        let y = undersample(&fft2(&self.s)?, &self.mask)?;
        let dy = y.tensor().max_abs_diff(self.y.tensor());
        let dz = zero_filled(&self.y)?.tensor().max_abs_diff(self.z.tensor());
        if dy > tol || dz > tol {
            return Err(Error::Dataset(format!(
                "sample invariant violated: |Δy| = {dy:e}, |Δz| = {dz:e}"
            )));
        }
        Ok(())
    }
}
