//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Values are recorded on a [`Tape`] as they are computed; [`Tape::backward`]
//! replays the record in reverse. The tape is generic over the storage type
//! so the same graph can be evaluated in `f32` for training and `f64` for
//! gradient verification.

mod broadcast;
pub mod conv;
mod gradcheck;
mod ops;
mod pool;
mod tape;
mod tensor;

pub use conv::ConvSpec;
pub use gradcheck::{grad_check, GradCheckReport, Precision, ScalarFn, RELATIVE_FLOOR};
pub use ops::{concat, sum_all};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Element, Tensor};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Kaiming-normal draw for a weight with the given fan-in.
pub fn kaiming_normal<R: Rng>(
    shape: &[usize],
    fan_in: usize,
    gain: f64,
    rng: &mut R,
) -> Tensor<f32> {
    let std = gain * (2.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| {
        let z: f64 = StandardNormal.sample(rng);
        (z * std) as f32
    })
}
