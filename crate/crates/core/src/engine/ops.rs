//! Differentiable primitives, exposed as methods on [`Var`].

use std::rc::Rc;

use super::broadcast::{binary_map, broadcast_shape, reduce_to};
use super::conv::{conv2d_forward, conv_transpose2d_forward, ConvSpec};
use super::pool::{avg_pool2d, dims4, global_max_pool, max_pool2d, upsample_nearest};
use super::tape::{matmul_dims, op_strides, Op, Tape, Var};
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};
use crate::kspace::fft::{check_power_of_two, fft2_batch};

impl<'t, T: Element> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.value().numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Scalar value of a one-element var.
    pub fn item(&self) -> T {
        self.value().item().expect("item() on a non-scalar var")
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.constant((*self.value()).clone())
    }

    fn unary(&self, op: Op, f: impl Fn(T) -> T) -> Var<'t, T> {
        let out = self.value().map(f);
        self.tape.push(out, op, &[self.id])
    }

    fn binary(
        &self,
        other: Var<'t, T>,
        op: Op,
        name: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var<'t, T>> {
        let out = binary_map(name, &self.value(), &other.value(), f)?;
        Ok(self.tape.push(out, op, &[self.id, other.id]))
    }

    pub fn add(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Op::Add, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Op::Sub, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Op::Mul, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Op::Div, "div", |a, b| a / b)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t, T> {
        let c = T::from_f64(c);
        self.unary(Op::AddScalar, |x| x + c)
    }

    pub fn scale(&self, c: f64) -> Var<'t, T> {
        let ct = T::from_f64(c);
        self.unary(Op::MulScalar(c), |x| x * ct)
    }

    pub fn neg(&self) -> Var<'t, T> {
        self.scale(-1.0)
    }

    /// `x^p`; only differentiable where `x > 0` for non-integer `p`.
    pub fn powf(&self, p: f64) -> Var<'t, T> {
        let pt = T::from_f64(p);
        self.unary(Op::PowScalar(p), |x| x.powf(pt))
    }

    pub fn square(&self) -> Var<'t, T> {
        self.powf(2.0)
    }

    pub fn relu(&self) -> Var<'t, T> {
        self.unary(Op::Relu, |x| x.max(T::zero()))
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'t, T> {
        let s = T::from_f64(slope);
        self.unary(
            Op::LeakyRelu(slope),
            |x| if x > T::zero() { x } else { x * s },
        )
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        self.unary(Op::Sigmoid, |x| {
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        })
    }

    pub fn tanh(&self) -> Var<'t, T> {
        self.unary(Op::Tanh, |x| x.tanh())
    }

    pub fn abs(&self) -> Var<'t, T> {
        self.unary(Op::Abs, |x| x.abs())
    }

    pub fn sqrt(&self) -> Var<'t, T> {
        self.unary(Op::Sqrt, |x| x.sqrt())
    }

    pub fn exp(&self) -> Var<'t, T> {
        self.unary(Op::Exp, |x| x.exp())
    }

    pub fn ln(&self) -> Var<'t, T> {
        self.unary(Op::Log, |x| x.ln())
    }

    /// Clips to `[lo, hi]`; the gradient passes only inside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t, T> {
        let (l, h) = (T::from_f64(lo), T::from_f64(hi));
        self.unary(Op::Clamp(lo, hi), |x| x.max(l).min(h))
    }

    pub fn conv2d(
        &self,
        w: Var<'t, T>,
        b: Option<Var<'t, T>>,
        spec: &ConvSpec,
    ) -> Result<Var<'t, T>> {
        let bv = b.map(|b| b.value());
        let out = conv2d_forward(&self.value(), &w.value(), bv.as_deref(), spec)?;
        let mut inputs = vec![self.id, w.id];
        inputs.extend(b.map(|b| b.id));
        Ok(self.tape.push(out, Op::Conv2d(*spec), &inputs))
    }

    /// Adjoint of [`Var::conv2d`]. `w` has shape `[in, out, k, k]` with
    /// `in`/`out` taken from `spec`.
    pub fn conv2d_transpose(
        &self,
        w: Var<'t, T>,
        b: Option<Var<'t, T>>,
        spec: &ConvSpec,
    ) -> Result<Var<'t, T>> {
        let bv = b.map(|b| b.value());
        let out = conv_transpose2d_forward(&self.value(), &w.value(), bv.as_deref(), spec)?;
        let mut inputs = vec![self.id, w.id];
        inputs.extend(b.map(|b| b.id));
        Ok(self.tape.push(out, Op::ConvTranspose2d(*spec), &inputs))
    }

    pub fn max_pool2d(&self, k: usize, stride: usize) -> Result<Var<'t, T>> {
        let (out, argmax) = max_pool2d(&self.value(), k, stride)?;
        Ok(self
            .tape
            .push(out, Op::Gather { source: argmax }, &[self.id]))
    }

    pub fn avg_pool2d(&self, k: usize, stride: usize) -> Result<Var<'t, T>> {
        let out = avg_pool2d(&self.value(), k, stride)?;
        Ok(self.tape.push(out, Op::AvgPool { k, stride }, &[self.id]))
    }

    /// `N×C×H×W → N×C×1×1` mean.
    pub fn global_avg_pool(&self) -> Result<Var<'t, T>> {
        let [n, c, _, _] = dims4("global_avg_pool", &self.shape())?;
        Ok(self.mean_to(&[n, c, 1, 1])?)
    }

    pub fn global_max_pool(&self) -> Result<Var<'t, T>> {
        let (out, argmax) = global_max_pool(&self.value())?;
        Ok(self
            .tape
            .push(out, Op::Gather { source: argmax }, &[self.id]))
    }

    /// Maximum over one axis, kept with length 1. Ties go to the lowest index.
    pub fn max_axis(&self, axis: usize) -> Result<Var<'t, T>> {
        let v = self.value();
        let shape = v.shape();
        if axis >= shape.len() {
            return Err(Error::shape(
                "max_axis",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let xd = v.data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut source = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * n * inner + i;
                for j in 1..n {
                    let idx = (o * n + j) * inner + i;
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                out.push(xd[best]);
                source.push(best);
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = 1;
        let out = Tensor::new(out_shape, out)?;
        Ok(self.tape.push(out, Op::Gather { source }, &[self.id]))
    }

    pub fn upsample_nearest(&self, factor: usize) -> Result<Var<'t, T>> {
        let out = upsample_nearest(&self.value(), factor)?;
        Ok(self.tape.push(out, Op::UpsampleNearest(factor), &[self.id]))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let out = (*self.value()).clone().reshaped(shape.to_vec())?;
        Ok(self.tape.push(out, Op::Reshape, &[self.id]))
    }

    /// Sums over broadcast axes down to `shape` (each axis either kept or
    /// reduced to 1; leading axes may be dropped).
    pub fn sum_to(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let own = self.shape();
        if broadcast_shape("sum_to", shape, &own)? != own {
            return Err(Error::ShapeMismatch {
                op: "sum_to",
                lhs: own,
                rhs: shape.to_vec(),
            });
        }
        let out = reduce_to(&self.value(), shape);
        Ok(self.tape.push(out, Op::SumTo, &[self.id]))
    }

    pub fn mean_to(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let n = self.numel() / shape.iter().product::<usize>().max(1);
        Ok(self.sum_to(shape)?.scale(1.0 / n as f64))
    }

    /// Sum of all elements as a 0-d scalar.
    pub fn sum(&self) -> Var<'t, T> {
        self.sum_to(&[]).expect("scalar reduction")
    }

    pub fn mean(&self) -> Var<'t, T> {
        self.sum().scale(1.0 / self.numel() as f64)
    }

    /// Sum over one axis, kept with length 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t, T>> {
        let mut shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::shape(
                "sum_axis",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        shape[axis] = 1;
        self.sum_to(&shape)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t, T>> {
        let n = self.shape().get(axis).copied().unwrap_or(1);
        Ok(self.sum_axis(axis)?.scale(1.0 / n as f64))
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let v = self.value();
        let shape = v.shape();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&v.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let out = Tensor::new(out_shape, data)?;
        Ok(self.tape.push(out, Op::Slice { axis, start }, &[self.id]))
    }

    /// `op(self) · op(other)` over 2-D matrices or equal-length batches of
    /// them, where `op` optionally transposes the last two axes.
    pub fn matmul_t(&self, other: Var<'t, T>, ta: bool, tb: bool) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let d = matmul_dims(a.shape(), b.shape(), ta, tb)?;
        let (m, k, n) = (d.m, d.k, d.n);
        let mut out = vec![T::zero(); d.batch * m * n];
        for i in 0..d.batch {
            T::gemm(
                m,
                k,
                n,
                T::one(),
                &a.data()[i * m * k..(i + 1) * m * k],
                op_strides(d.a_cols, ta),
                &b.data()[i * k * n..(i + 1) * k * n],
                op_strides(d.b_cols, tb),
                T::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
                (n as isize, 1),
            );
        }
        let shape = if a.ndim() == 3 {
            vec![d.batch, m, n]
        } else {
            vec![m, n]
        };
        let out = Tensor::new(shape, out)?;
        Ok(self
            .tape
            .push(out, Op::Matmul { ta, tb }, &[self.id, other.id]))
    }

    pub fn matmul(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.matmul_t(other, false, false)
    }

    pub fn softmax(&self, axis: usize) -> Result<Var<'t, T>> {
        let v = self.value();
        let shape = v.shape();
        if axis >= shape.len() {
            return Err(Error::shape(
                "softmax",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let xd = v.data();
        let mut out = vec![T::zero(); v.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| xd[idx(j)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for j in 0..n {
                    let e = (xd[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total = total + e;
                }
                for j in 0..n {
                    out[idx(j)] = out[idx(j)] / total;
                }
            }
        }
        let out = Tensor::new(shape, out)?;
        Ok(self.tape.push(out, Op::Softmax(axis), &[self.id]))
    }

    fn fft(&self, inverse: bool) -> Result<Var<'t, T>> {
        let v = self.value();
        let [n, c, h, w] = dims4("fft2", v.shape())?;
        if c != 2 {
            return Err(Error::shape(
                "fft2",
                format!("expected 2 channels (re, im), got {c}"),
            ));
        }
        check_power_of_two("fft2", h, w)?;
        let mut data = v.data().to_vec();
        fft2_batch(&mut data, n, h, w, inverse);
        let out = Tensor::new(v.shape(), data)?;
        Ok(self.tape.push(out, Op::Fft2 { inverse }, &[self.id]))
    }

    /// Centred orthonormal 2-D DFT of an `N×2×H×W` complex image.
    pub fn fft2(&self) -> Result<Var<'t, T>> {
        self.fft(false)
    }

    pub fn ifft2(&self) -> Result<Var<'t, T>> {
        self.fft(true)
    }
}

/// Concatenates along `axis`; all other dimensions must agree.
pub fn concat<'t, T: Element>(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let base = values[0].shape();
    if axis >= base.len() {
        return Err(Error::shape(
            "concat",
            format!("axis {axis} out of range for {base:?}"),
        ));
    }
    for v in &values[1..] {
        let s = v.shape();
        let compatible = s.len() == base.len()
            && s.iter()
                .zip(base)
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: base.to_vec(),
                rhs: s.to_vec(),
            });
        }
    }
    let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let total: usize = sizes.iter().sum();
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &len) in values.iter().zip(&sizes) {
            data.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
        }
    }
    let mut shape = base.to_vec();
    shape[axis] = total;
    let out = Tensor::new(shape, data)?;
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    Ok(first.tape.push(out, Op::Concat { axis, sizes }, &ids))
}

/// Sum of same-shaped vars.
pub fn sum_all<'t, T: Element>(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let (first, rest) = parts
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("sum of zero tensors".into()))?;
    rest.iter().try_fold(*first, |acc, p| acc.add(*p))
}
