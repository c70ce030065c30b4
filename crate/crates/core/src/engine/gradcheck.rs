//! Central finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

/// A scalar-valued function that can be evaluated at either precision.
pub trait ScalarFn {
    fn eval<'t, T: Element>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>>;
}

/// Precision of the analytic gradient under test. The finite-difference
/// side always runs in `f64`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    Single,
    Wide,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Coordinates whose gradient is below this fraction of the largest
/// numeric gradient are compared against that scale instead of their own
/// magnitude.
pub const RELATIVE_FLOOR: f64 = 1e-3;

fn eval_f64<F: ScalarFn>(f: &F, x: &Tensor<f64>) -> Result<f64> {
    let tape = Tape::<f64>::new();
    let v = tape.constant(x.clone());
    let out = f.eval(&tape, v)?;
    out.value()
        .item()
        .ok_or_else(|| Error::NonScalarLoss(out.shape()))
}

fn analytic<F: ScalarFn, T: Element>(f: &F, x: &Tensor<f64>) -> Result<Vec<f64>> {
    let tape = Tape::<T>::new();
    let v = tape.param(x.cast());
    let out = f.eval(&tape, v)?;
    let grads = tape.backward(out)?;
    Ok(grads
        .get_or_zeros(v)
        .data()
        .iter()
        .map(|g| g.as_f64())
        .collect())
}

/// Compares the analytic gradient of `f` at `x` with central differences
/// `(f(x+eps·e) - f(x-eps·e)) / 2eps` on `coords` (all coordinates if `None`).
pub fn grad_check<F: ScalarFn>(
    f: &F,
    x: &Tensor<f64>,
    eps: f64,
    precision: Precision,
    coords: Option<&[usize]>,
) -> Result<GradCheckReport> {
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    let full = match precision {
        Precision::Single => analytic::<F, f32>(f, x)?,
        Precision::Wide => analytic::<F, f64>(f, x)?,
    };
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..x.numel()).collect();
            &all
        }
    };
    let mut probe = x.clone();
    let mut numeric = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval_f64(f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval_f64(f, &probe)?;
        probe.data_mut()[i] = orig;
        numeric.push((plus - minus) / (2.0 * eps));
    }
    let analytic: Vec<f64> = coords.iter().map(|&i| full[i]).collect();
    let scale = numeric
        .iter()
        .chain(&analytic)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (RELATIVE_FLOOR * scale).max(1e-12);
    let (mut worst, mut worst_index) = (0.0, coords.first().copied().unwrap_or(0));
    for (j, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if err > worst {
            worst = err;
            worst_index = coords[j];
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        worst_index,
        analytic,
        numeric,
    })
}
