//! Pooling and nearest-neighbour resampling kernels.

use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

pub(crate) fn dims4(op: &'static str, s: &[usize]) -> Result<[usize; 4]> {
    match *s {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::shape(
            op,
            format!("expected a 4-D tensor, got {s:?}"),
        )),
    }
}

fn pooled_size(op: &'static str, input: usize, k: usize, stride: usize) -> Result<usize> {
    if k == 0 || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "{op}: kernel and stride must be positive"
        )));
    }
    if k > input {
        return Err(Error::shape(
            op,
            format!("kernel {k} larger than input extent {input}"),
        ));
    }
    Ok((input - k) / stride + 1)
}

/// Max pooling with floor semantics. Returns the output and, per output
/// element, the flat input index it was taken from (first maximum in
/// row-major window order wins).
pub(crate) fn max_pool2d<T: Element>(
    x: &Tensor<T>,
    k: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = dims4("max_pool2d", x.shape())?;
    let ho = pooled_size("max_pool2d", h, k, stride)?;
    let wo = pooled_size("max_pool2d", w, k, stride)?;
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    let xd = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..k {
                    for kx in 0..k {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                out.push(xd[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new([n, c, ho, wo], out)?, arg))
}

pub(crate) fn avg_pool2d<T: Element>(x: &Tensor<T>, k: usize, stride: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims4("avg_pool2d", x.shape())?;
    let ho = pooled_size("avg_pool2d", h, k, stride)?;
    let wo = pooled_size("avg_pool2d", w, k, stride)?;
    let scale = T::one() / T::from_f64((k * k) as f64);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = T::zero();
                for ky in 0..k {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for kx in 0..k {
                        acc = acc + xd[row + kx];
                    }
                }
                out.push(acc * scale);
            }
        }
    }
    Tensor::new([n, c, ho, wo], out)
}

pub(crate) fn avg_pool2d_backward<T: Element>(
    g: &Tensor<T>,
    input_shape: &[usize],
    k: usize,
    stride: usize,
) -> Tensor<T> {
    let [n, c, h, w] = dims4("avg_pool2d", input_shape).expect("checked in forward");
    let (ho, wo) = (g.shape()[2], g.shape()[3]);
    let scale = T::one() / T::from_f64((k * k) as f64);
    let mut dx = Tensor::zeros(input_shape.to_vec());
    let dd = dx.data_mut();
    let gd = g.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let gv = gd[(plane * ho + oy) * wo + ox] * scale;
                for ky in 0..k {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for kx in 0..k {
                        dd[row + kx] = dd[row + kx] + gv;
                    }
                }
            }
        }
    }
    dx
}

pub(crate) fn global_max_pool<T: Element>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = dims4("global_max_pool", x.shape())?;
    let plane = h * w;
    let mut out = Vec::with_capacity(n * c);
    let mut arg = Vec::with_capacity(n * c);
    for (p, chunk) in x.data().chunks(plane).enumerate() {
        let mut best = 0;
        for (i, &v) in chunk.iter().enumerate() {
            if v > chunk[best] {
                best = i;
            }
        }
        out.push(chunk[best]);
        arg.push(p * plane + best);
    }
    Ok((Tensor::new([n, c, 1, 1], out)?, arg))
}

pub(crate) fn scatter_argmax<T: Element>(
    g: &Tensor<T>,
    arg: &[usize],
    input_shape: &[usize],
) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape.to_vec());
    let dd = dx.data_mut();
    for (&i, &gv) in arg.iter().zip(g.data()) {
        dd[i] = dd[i] + gv;
    }
    dx
}

pub(crate) fn upsample_nearest<T: Element>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims4("upsample_nearest", x.shape())?;
    if factor == 0 {
        return Err(Error::InvalidArgument(
            "upsample factor must be positive".into(),
        ));
    }
    let (ho, wo) = (h * factor, w * factor);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        for oy in 0..ho {
            let row = &xd[(plane * h + oy / factor) * w..(plane * h + oy / factor + 1) * w];
            for ox in 0..wo {
                out.push(row[ox / factor]);
            }
        }
    }
    Tensor::new([n, c, ho, wo], out)
}

pub(crate) fn upsample_nearest_backward<T: Element>(
    g: &Tensor<T>,
    input_shape: &[usize],
    factor: usize,
) -> Tensor<T> {
    let [n, c, h, w] = dims4("upsample_nearest", input_shape).expect("checked in forward");
    let (ho, wo) = (h * factor, w * factor);
    let mut dx = Tensor::zeros(input_shape.to_vec());
    let dd = dx.data_mut();
    let gd = g.data();
    for plane in 0..n * c {
        for oy in 0..ho {
            for ox in 0..wo {
                let d = (plane * h + oy / factor) * w + ox / factor;
                dd[d] = dd[d] + gd[(plane * ho + oy) * wo + ox];
            }
        }
    }
    dx
}
