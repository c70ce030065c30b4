use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use super::broadcast::{binary_map, expand_to, reduce_to};
use super::conv::{conv2d_backward, conv_transpose2d_backward, ConvSpec};
use super::pool::{avg_pool2d_backward, scatter_argmax, upsample_nearest_backward};
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};
use crate::kspace::fft::fft2_batch;

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    AddScalar,
    MulScalar(f64),
    PowScalar(f64),
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    Abs,
    Sqrt,
    Exp,
    Log,
    Clamp(f64, f64),
    Conv2d(ConvSpec),
    ConvTranspose2d(ConvSpec),
    /// Output element `i` copies input element `source[i]` (max pooling and
    /// max reductions).
    Gather {
        source: Vec<usize>,
    },
    AvgPool {
        k: usize,
        stride: usize,
    },
    UpsampleNearest(usize),
    Reshape,
    Concat {
        axis: usize,
        sizes: Vec<usize>,
    },
    Slice {
        axis: usize,
        start: usize,
    },
    SumTo,
    Matmul {
        ta: bool,
        tb: bool,
    },
    Softmax(usize),
    Fft2 {
        inverse: bool,
    },
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op,
    inputs: Vec<usize>,
    requires_grad: bool,
}

/// Define-by-run record of every primitive application.
///
/// Nodes are appended in evaluation order, so inputs always precede their
/// outputs; `backward` walks the record in exact reverse.
pub struct Tape<T: Element = f32> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Element = f32> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Element> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} {:?})", self.id, self.shape())
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a trainable leaf.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_, T> {
        self.constant(Tensor::scalar(T::from_f64(value)))
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.record(value, Op::Leaf, Vec::new(), requires_grad)
    }

    fn record(
        &self,
        value: Tensor<T>,
        op: Op,
        inputs: Vec<usize>,
        requires_grad: bool,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            inputs,
            requires_grad,
        });
        Var { tape: self, id }
    }

    /// Appends an op node. Nodes whose inputs carry no gradient are stored
    /// as constants, so no backward work is spent on them.
    pub(crate) fn push(&self, value: Tensor<T>, op: Op, inputs: &[usize]) -> Var<'_, T> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        if requires_grad {
            self.record(value, op, inputs.to_vec(), true)
        } else {
            self.record(value, Op::Leaf, Vec::new(), false)
        }
    }

    pub(crate) fn value(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse-mode sweep from a scalar `loss`. Gradients of all
    /// gradient-carrying leaves are returned; consumers of a value
    /// accumulate additively.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.id).map(|_| None).collect();
        let mut leaves = HashMap::new();
        if !root.requires_grad {
            return Ok(Gradients { grads: leaves });
        }
        grads[loss.id] = Some(Tensor::full(root.value.shape().to_vec(), T::one()));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaves.insert(id, g);
                continue;
            }
            let input_grads = backward_node(&nodes, node, &g);
            for (&input, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(ig.data()) {
                            *a = *a + *b;
                        }
                    }
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T: Element = f32> {
    grads: HashMap<usize, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(&var.id)
    }

    /// Gradient of `var`, or zeros of its shape if nothing flowed into it.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.remove(&var.id)
    }
}

fn unary_grad<T: Element>(g: &Tensor<T>, v: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    let data = g
        .data()
        .iter()
        .zip(v.data())
        .map(|(&g, &v)| g * f(v))
        .collect();
    Tensor::new(g.shape(), data).expect("same shape")
}

fn backward_node<T: Element>(
    nodes: &[Node<T>],
    node: &Node<T>,
    g: &Tensor<T>,
) -> Vec<Option<Tensor<T>>> {
    let input = |i: usize| &*nodes[node.inputs[i]].value;
    let wants = |i: usize| nodes[node.inputs[i]].requires_grad;
    let out = &*node.value;
    let zero = T::zero();
    let one = T::one();
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::Add => {
            let (a, b) = (input(0), input(1));
            vec![
                wants(0).then(|| reduce_to(g, a.shape())),
                wants(1).then(|| reduce_to(g, b.shape())),
            ]
        }
        Op::Sub => {
            let (a, b) = (input(0), input(1));
            vec![
                wants(0).then(|| reduce_to(g, a.shape())),
                wants(1).then(|| reduce_to(&g.map(|v| -v), b.shape())),
            ]
        }
        Op::Mul => {
            let (a, b) = (input(0), input(1));
            vec![
                wants(0).then(|| {
                    reduce_to(
                        &binary_map("mul", g, b, |g, b| g * b).expect("shape"),
                        a.shape(),
                    )
                }),
                wants(1).then(|| {
                    reduce_to(
                        &binary_map("mul", g, a, |g, a| g * a).expect("shape"),
                        b.shape(),
                    )
                }),
            ]
        }
        Op::Div => {
            let (a, b) = (input(0), input(1));
            vec![
                wants(0).then(|| {
                    reduce_to(
                        &binary_map("div", g, b, |g, b| g / b).expect("shape"),
                        a.shape(),
                    )
                }),
                wants(1).then(|| {
                    // d(a/b)/db = -out / b
                    let t = binary_map("div", g, out, |g, o| g * o).expect("shape");
                    let t = binary_map("div", &t, b, |t, b| -t / b).expect("shape");
                    reduce_to(&t, b.shape())
                }),
            ]
        }
        Op::AddScalar => vec![Some(g.clone())],
        Op::MulScalar(s) => {
            let s = T::from_f64(*s);
            vec![Some(g.map(|v| v * s))]
        }
        Op::PowScalar(p) => {
            let pt = T::from_f64(*p);
            let pm1 = T::from_f64(*p - 1.0);
            vec![Some(unary_grad(g, input(0), |x| pt * x.powf(pm1)))]
        }
        Op::Relu => vec![Some(unary_grad(g, input(0), |x| {
            if x > zero {
                one
            } else {
                zero
            }
        }))],
        Op::LeakyRelu(slope) => {
            let s = T::from_f64(*slope);
            vec![Some(unary_grad(g, input(0), |x| {
                if x > zero {
                    one
                } else {
                    s
                }
            }))]
        }
        Op::Sigmoid => vec![Some(unary_grad(g, out, |y| y * (one - y)))],
        Op::Tanh => vec![Some(unary_grad(g, out, |y| one - y * y))],
        Op::Abs => vec![Some(unary_grad(g, input(0), |x| {
            if x > zero {
                one
            } else if x < zero {
                -one
            } else {
                zero
            }
        }))],
        Op::Sqrt => {
            let half = T::from_f64(0.5);
            vec![Some(unary_grad(g, out, |y| half / y))]
        }
        Op::Exp => vec![Some(unary_grad(g, out, |y| y))],
        Op::Log => vec![Some(unary_grad(g, input(0), |x| one / x))],
        Op::Clamp(lo, hi) => {
            let (lo, hi) = (T::from_f64(*lo), T::from_f64(*hi));
            vec![Some(unary_grad(g, input(0), |x| {
                if x >= lo && x <= hi {
                    one
                } else {
                    zero
                }
            }))]
        }
        Op::Conv2d(spec) | Op::ConvTranspose2d(spec) => {
            let has_bias = node.inputs.len() == 3;
            let need = [wants(0), wants(1), has_bias && wants(2)];
            let grads = if matches!(node.op, Op::Conv2d(_)) {
                conv2d_backward(g, input(0), input(1), spec, need)
            } else {
                conv_transpose2d_backward(g, input(0), input(1), spec, need)
            };
            let mut v = vec![grads.x, grads.w];
            if has_bias {
                v.push(grads.b);
            }
            v
        }
        Op::Gather { source } => vec![Some(scatter_argmax(g, source, input(0).shape()))],
        Op::AvgPool { k, stride } => {
            vec![Some(avg_pool2d_backward(g, input(0).shape(), *k, *stride))]
        }
        Op::UpsampleNearest(f) => vec![Some(upsample_nearest_backward(g, input(0).shape(), *f))],
        Op::Reshape => vec![Some(
            g.clone().reshaped(input(0).shape()).expect("same numel"),
        )],
        Op::Concat { axis, sizes } => {
            let shape = out.shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let total = shape[*axis];
            let mut offset = 0;
            sizes
                .iter()
                .enumerate()
                .map(|(i, &len)| {
                    let start = offset;
                    offset += len;
                    wants(i).then(|| {
                        let mut data = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + start) * inner;
                            data.extend_from_slice(&g.data()[base..base + len * inner]);
                        }
                        Tensor::new(input(i).shape(), data).expect("slice shape")
                    })
                })
                .collect()
        }
        Op::Slice { axis, start } => {
            let a = input(0);
            let shape = a.shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let len = out.shape()[*axis];
            let mut dx = Tensor::zeros(shape.to_vec());
            let dd = dx.data_mut();
            for o in 0..outer {
                let src = &g.data()[o * len * inner..(o + 1) * len * inner];
                let base = (o * shape[*axis] + start) * inner;
                dd[base..base + len * inner].copy_from_slice(src);
            }
            vec![Some(dx)]
        }
        Op::SumTo => vec![Some(expand_to(g, input(0).shape()))],
        Op::Matmul { ta, tb } => {
            let (a, b) = (input(0), input(1));
            matmul_backward(g, a, b, *ta, *tb, [wants(0), wants(1)])
        }
        Op::Softmax(axis) => {
            let shape = out.shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let n = shape[*axis];
            let mut dx = vec![zero; out.numel()];
            let (yd, gd) = (out.data(), g.data());
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| (o * n + j) * inner + i;
                    let dot: T = (0..n).map(|j| yd[idx(j)] * gd[idx(j)]).sum();
                    for j in 0..n {
                        dx[idx(j)] = yd[idx(j)] * (gd[idx(j)] - dot);
                    }
                }
            }
            vec![Some(Tensor::new(shape, dx).expect("shape"))]
        }
        Op::Fft2 { inverse } => {
            let s = g.shape();
            let mut d = g.data().to_vec();
            fft2_batch(&mut d, s[0], s[2], s[3], !inverse);
            vec![Some(Tensor::new(s, d).expect("shape"))]
        }
    }
}

/// Row/column strides of `op(X)` for a row-major `rows×cols` matrix.
pub(crate) fn op_strides(cols: usize, transposed: bool) -> (isize, isize) {
    if transposed {
        (1, cols as isize)
    } else {
        (cols as isize, 1)
    }
}

pub(crate) struct MatmulDims {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub a_cols: usize,
    pub b_cols: usize,
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize], ta: bool, tb: bool) -> Result<MatmulDims> {
    let err = || Error::ShapeMismatch {
        op: "matmul",
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() != b.len() || !(a.len() == 2 || a.len() == 3) {
        return Err(err());
    }
    let nd = a.len();
    let batch = if nd == 3 {
        if a[0] != b[0] {
            return Err(err());
        }
        a[0]
    } else {
        1
    };
    let (ar, ac) = (a[nd - 2], a[nd - 1]);
    let (br, bc) = (b[nd - 2], b[nd - 1]);
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(err());
    }
    Ok(MatmulDims {
        batch,
        m,
        k,
        n,
        a_cols: ac,
        b_cols: bc,
    })
}

fn matmul_backward<T: Element>(
    g: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    ta: bool,
    tb: bool,
    need: [bool; 2],
) -> Vec<Option<Tensor<T>>> {
    let d = matmul_dims(a.shape(), b.shape(), ta, tb).expect("checked in forward");
    let (m, k, n) = (d.m, d.k, d.n);
    let (sa, sb) = (op_strides(d.a_cols, ta), op_strides(d.b_cols, tb));
    let gs = (n as isize, 1);
    let mut da = need[0].then(|| Tensor::zeros(a.shape().to_vec()));
    let mut db = need[1].then(|| Tensor::zeros(b.shape().to_vec()));
    for i in 0..d.batch {
        let gi = &g.data()[i * m * n..(i + 1) * m * n];
        let ai = &a.data()[i * m * k..(i + 1) * m * k];
        let bi = &b.data()[i * k * n..(i + 1) * k * n];
        if let Some(da) = da.as_mut() {
            let dst = &mut da.data_mut()[i * m * k..(i + 1) * m * k];
            // d op(A) = G · op(B)ᵀ, written through op(A)'s layout
            T::gemm(
                m,
                n,
                k,
                T::one(),
                gi,
                gs,
                bi,
                (sb.1, sb.0),
                T::zero(),
                dst,
                sa,
            );
        }
        if let Some(db) = db.as_mut() {
            let dst = &mut db.data_mut()[i * k * n..(i + 1) * k * n];
            // d op(B) = op(A)ᵀ · G
            T::gemm(
                k,
                m,
                n,
                T::one(),
                ai,
                (sa.1, sa.0),
                gi,
                gs,
                T::zero(),
                dst,
                sb,
            );
        }
    }
    vec![da, db]
}
