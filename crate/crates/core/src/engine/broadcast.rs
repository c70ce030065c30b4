//! Numpy-style broadcasting: shapes are right-aligned and each dimension must
//! either match or be 1.

use super::tensor::{strides_of, Element, Tensor};
use crate::error::{Error, Result};

pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = dim_from_right(a, nd, i);
        let db = dim_from_right(b, nd, i);
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

fn dim_from_right(shape: &[usize], nd: usize, i: usize) -> usize {
    let pad = nd - shape.len();
    if i < pad {
        1
    } else {
        shape[i - pad]
    }
}

/// Strides of `shape` viewed inside `out_shape`, with 0 on broadcast axes.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let nd = out_shape.len();
    let pad = nd - shape.len();
    let own = strides_of(shape);
    (0..nd)
        .map(|i| {
            if i < pad || shape[i - pad] == 1 {
                0
            } else {
                own[i - pad]
            }
        })
        .collect()
}

/// Calls `f(out_index, a_index, b_index)` for every element of `out_shape`,
/// in row-major order.
pub(crate) fn for_each_index(
    out_shape: &[usize],
    a_shape: &[usize],
    b_shape: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let numel: usize = out_shape.iter().product();
    if numel == 0 {
        return;
    }
    let nd = out_shape.len();
    if nd == 0 {
        f(0, 0, 0);
        return;
    }
    let sa = broadcast_strides(a_shape, out_shape);
    let sb = broadcast_strides(b_shape, out_shape);
    let inner = out_shape[nd - 1];
    let (ia, ib) = (sa[nd - 1], sb[nd - 1]);
    let mut counter = vec![0usize; nd];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut out = 0usize;
    while out < numel {
        for j in 0..inner {
            f(out + j, oa + j * ia, ob + j * ib);
        }
        out += inner;
        // advance the outer counter (all axes but the last)
        let mut axis = nd - 1;
        while axis > 0 {
            axis -= 1;
            counter[axis] += 1;
            oa += sa[axis];
            ob += sb[axis];
            if counter[axis] < out_shape[axis] {
                break;
            }
            oa -= sa[axis] * counter[axis];
            ob -= sb[axis] * counter[axis];
            counter[axis] = 0;
        }
    }
}

pub(crate) fn binary_map<T: Element>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::new(a.shape(), data);
    }
    let shape = broadcast_shape(op, a.shape(), b.shape())?;
    let numel = shape.iter().product();
    let mut out = vec![T::zero(); numel];
    let (ad, bd) = (a.data(), b.data());
    for_each_index(&shape, a.shape(), b.shape(), |o, i, j| {
        out[o] = f(ad[i], bd[j]);
    });
    Tensor::new(shape, out)
}

/// Sums `g` down to `target` (the adjoint of broadcasting `target` up to
/// `g`'s shape).
pub(crate) fn reduce_to<T: Element>(g: &Tensor<T>, target: &[usize]) -> Tensor<T> {
    if g.shape() == target {
        return g.clone();
    }
    let mut out = Tensor::zeros(target.to_vec());
    let od = out.data_mut();
    let gd = g.data();
    for_each_index(g.shape(), target, &[], |o, t, _| {
        od[t] = od[t] + gd[o];
    });
    out
}

pub(crate) fn expand_to<T: Element>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let numel = shape.iter().product();
    let mut out = vec![T::zero(); numel];
    let gd = g.data();
    for_each_index(shape, g.shape(), &[], |o, i, _| out[o] = gd[i]);
    Tensor::new(shape.to_vec(), out).expect("broadcast shape")
}
