//! Reverse-mode automatic differentiation over an append-only graph.
//!
//! Nodes are created in topological order, so a node's id is always larger
//! than the ids of its inputs. Backward walks ids in descending order, which
//! fixes the accumulation order and makes gradients bit-reproducible.

mod backward;
pub mod gradcheck;
pub mod kernels;

use std::fmt;

pub use backward::Gradients;
pub use gradcheck::grad_check;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{axis_split, broadcast_index_map, broadcast_shape, Tensor};
use kernels::ConvDims;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Operation tag stored on every node.
#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    ScalarMul(T),
    AddScalar(T),
    MatMul,
    BatchMatMul,
    Transpose,
    Conv2d(ConvDims),
    ConvTranspose2d(ConvDims),
    MaxPool2d { argmax: Vec<usize> },
    Upsample2d { factor: usize },
    Relu,
    Gelu,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Softmax { axis: usize },
    LogSumExp { axis: usize },
    L2Normalize { axis: usize, norms: Vec<T> },
    Sum,
    Mean,
    SumAxis,
    MaxAxis { argmax: Vec<usize> },
    MinAxis { argmin: Vec<usize> },
    Reshape,
    Concat { axis: usize },
    Detach,
}

/// Parameterless operation kinds addressable by name through [`Graph::apply`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Relu,
    Gelu,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Sum,
    Mean,
    Detach,
    CosineSimilarity,
}

impl OpKind {
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "add" => OpKind::Add,
            "sub" => OpKind::Sub,
            "mul" => OpKind::Mul,
            "div" => OpKind::Div,
            "matmul" => OpKind::MatMul,
            "relu" => OpKind::Relu,
            "gelu" => OpKind::Gelu,
            "sigmoid" => OpKind::Sigmoid,
            "tanh" => OpKind::Tanh,
            "exp" => OpKind::Exp,
            "log" => OpKind::Log,
            "sum" => OpKind::Sum,
            "mean" => OpKind::Mean,
            "detach" => OpKind::Detach,
            "cosine-similarity" => OpKind::CosineSimilarity,
            other => return Err(Error::UnknownOp(other.to_string())),
        })
    }

    fn arity(self) -> usize {
        match self {
            OpKind::Add
            | OpKind::Sub
            | OpKind::Mul
            | OpKind::Div
            | OpKind::MatMul
            | OpKind::CosineSimilarity => 2,
            _ => 1,
        }
    }
}

struct Node<T> {
    op: Op<T>,
    inputs: Vec<Var>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// A computation graph under construction.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> fmt::Debug for Graph<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.len())
            .finish()
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("lhs {a:?} vs rhs {b:?}")));
    }
    Ok(())
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::shape(
            op,
            format!("axis {axis} out of range for {shape:?}"),
        ));
    }
    Ok(())
}

fn keepdim(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s[axis] = 1;
    s
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, inputs: Vec<Var>, value: Tensor<T>) -> Var {
        let requires_grad = !matches!(op, Op::Detach | Op::Leaf)
            && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf (a parameter or an input under test).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Dispatches a parameterless operation by kind.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        if inputs.len() != kind.arity() {
            return Err(Error::InvalidArgument(format!(
                "{kind:?} takes {} inputs, got {}",
                kind.arity(),
                inputs.len()
            )));
        }
        let a = inputs[0];
        Ok(match kind {
            OpKind::Add => self.add(a, inputs[1])?,
            OpKind::Sub => self.sub(a, inputs[1])?,
            OpKind::Mul => self.mul(a, inputs[1])?,
            OpKind::Div => self.div(a, inputs[1])?,
            OpKind::MatMul => self.matmul(a, inputs[1])?,
            OpKind::CosineSimilarity => {
                let axis = self.shape(a).len() - 1;
                self.cosine_similarity(a, inputs[1], axis)?
            }
            OpKind::Relu => self.relu(a),
            OpKind::Gelu => self.gelu(a),
            OpKind::Sigmoid => self.sigmoid(a),
            OpKind::Tanh => self.tanh(a),
            OpKind::Exp => self.exp(a),
            OpKind::Log => self.log(a)?,
            OpKind::Sum => self.sum(a),
            OpKind::Mean => self.mean(a),
            OpKind::Detach => self.detach(a),
        })
    }

    fn broadcast_binary(
        &mut self,
        name: &'static str,
        op: Op<T>,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb)
            .ok_or_else(|| Error::shape(name, format!("cannot broadcast {sa:?} with {sb:?}")))?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let data = if sa == sb {
            va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ma = broadcast_index_map(&sa, &out_shape);
            let mb = broadcast_index_map(&sb, &out_shape);
            ma.iter().zip(&mb).map(|(&i, &j)| f(va[i], vb[j])).collect()
        };
        Ok(self.push(op, vec![a, b], Tensor::from_raw(out_shape, data)))
    }

    /// Elementwise sum with trailing-axis broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary("add", Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary("sub", Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary("mul", Op::Mul, a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary("div", Op::Div, a, b, |x, y| x / y)
    }

    pub fn scalar_mul(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(Op::ScalarMul(c), vec![a], v)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(c), vec![a], v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scalar_mul(a, -T::one())
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("lhs {sa:?} vs rhs {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_acc(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        Ok(self.push(Op::MatMul, vec![a, b], Tensor::from_raw(vec![m, n], out)))
    }

    /// `[B, m, k] x [B, k, n] -> [B, m, n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::shape(
                "batch_matmul",
                format!("lhs {sa:?} vs rhs {sb:?}"),
            ));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); bs * m * n];
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            kernels::matmul_acc(
                &va[i * m * k..(i + 1) * m * k],
                &vb[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        Ok(self.push(
            Op::BatchMatMul,
            vec![a, b],
            Tensor::from_raw(vec![bs, m, n], out),
        ))
    }

    /// Rank-2 transpose.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::shape(
                "transpose",
                format!("expected rank 2, got {s:?}"),
            ));
        }
        let (m, n) = (s[0], s[1]);
        let v = self.value(a).data();
        let data = (0..m * n).map(|i| v[(i % m) * n + i / m]).collect();
        Ok(self.push(Op::Transpose, vec![a], Tensor::from_raw(vec![n, m], data)))
    }

    fn conv_dims(&self, op: &'static str, x: Var, w: Var, transposed: bool) -> Result<ConvDims> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        let err = || Error::shape(op, format!("input {sx:?} vs kernel {sw:?}"));
        if sx.len() != 4 || sw.len() != 4 || sw[0] != sw[1] || sw[0] % 2 == 0 {
            return Err(err());
        }
        // A transposed convolution consumes the kernel's output channels.
        let (c_in, c_out) = (sw[2], sw[3]);
        let consumed = if transposed { c_out } else { c_in };
        if sx[3] != consumed {
            return Err(err());
        }
        Ok(ConvDims {
            batch: sx[0],
            height: sx[1],
            width: sx[2],
            c_in,
            c_out,
            kernel: sw[0],
        })
    }

    /// NHWC convolution, kernel `[k, k, c_in, c_out]` with odd `k`, stride 1,
    /// zero "same" padding.
    pub fn conv2d(&mut self, x: Var, w: Var) -> Result<Var> {
        let d = self.conv_dims("conv2d", x, w, false)?;
        let mut y = vec![T::zero(); d.batch * d.height * d.width * d.c_out];
        kernels::conv_forward(self.value(x).data(), self.value(w).data(), &mut y, d);
        let shape = vec![d.batch, d.height, d.width, d.c_out];
        Ok(self.push(Op::Conv2d(d), vec![x, w], Tensor::from_raw(shape, y)))
    }

    /// Adjoint of [`Graph::conv2d`] for the same kernel: maps an NHWC input
    /// with `c_out` channels back to `c_in` channels.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var) -> Result<Var> {
        let d = self.conv_dims("conv_transpose2d", x, w, true)?;
        let mut y = vec![T::zero(); d.batch * d.height * d.width * d.c_in];
        kernels::conv_backward_data(self.value(x).data(), self.value(w).data(), &mut y, d);
        let shape = vec![d.batch, d.height, d.width, d.c_in];
        Ok(self.push(
            Op::ConvTranspose2d(d),
            vec![x, w],
            Tensor::from_raw(shape, y),
        ))
    }

    fn nhwc(&self, op: &'static str, x: Var) -> Result<[usize; 4]> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(Error::shape(op, format!("expected NHWC input, got {s:?}")));
        }
        Ok([s[0], s[1], s[2], s[3]])
    }

    /// Non-overlapping max pooling with a square window of `factor`.
    pub fn maxpool2d(&mut self, x: Var, factor: usize) -> Result<Var> {
        let dims = self.nhwc("maxpool2d", x)?;
        if factor == 0 || dims[1] % factor != 0 || dims[2] % factor != 0 {
            return Err(Error::shape(
                "maxpool2d",
                format!("factor {factor} does not tile {dims:?}"),
            ));
        }
        let (vals, argmax) = kernels::maxpool(self.value(x).data(), dims, factor);
        let shape = vec![dims[0], dims[1] / factor, dims[2] / factor, dims[3]];
        Ok(self.push(
            Op::MaxPool2d { argmax },
            vec![x],
            Tensor::from_raw(shape, vals),
        ))
    }

    pub fn upsample2d(&mut self, x: Var, factor: usize) -> Result<Var> {
        let dims = self.nhwc("upsample2d", x)?;
        if factor == 0 {
            return Err(Error::shape("upsample2d", "factor must be positive"));
        }
        let vals = kernels::upsample(self.value(x).data(), dims, factor);
        let shape = vec![dims[0], dims[1] * factor, dims[2] * factor, dims[3]];
        Ok(self.push(
            Op::Upsample2d { factor },
            vec![x],
            Tensor::from_raw(shape, vals),
        ))
    }

    fn unary(&mut self, op: Op<T>, a: Var, f: impl Fn(T) -> T) -> Var {
        let v = self.value(a).map(f);
        self.push(op, vec![a], v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Op::Relu, a, |x| x.max(T::zero()))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(Op::Gelu, a, kernels::gelu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Op::Sigmoid, a, kernels::sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Op::Tanh, a, |x| x.tanh())
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Op::Exp, a, |x| x.exp())
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(v) = self.value(a).data().iter().find(|&&v| v <= T::zero()) {
            return Err(Error::Degenerate(format!("log of non-positive value {v}")));
        }
        Ok(self.unary(Op::Log, a, |x| x.ln()))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        check_axis("softmax", self.shape(a), axis)?;
        let x = self.value(a);
        let (outer, len, inner) = axis_split(x.shape(), axis);
        let mut out = x.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let m = (0..len)
                    .map(|k| out[idx(k)])
                    .fold(T::neg_infinity(), T::max);
                let mut s = T::zero();
                for k in 0..len {
                    let e = (out[idx(k)] - m).exp();
                    out[idx(k)] = e;
                    s = s + e;
                }
                for k in 0..len {
                    out[idx(k)] = out[idx(k)] / s;
                }
            }
        }
        let shape = x.shape().to_vec();
        Ok(self.push(Op::Softmax { axis }, vec![a], Tensor::from_raw(shape, out)))
    }

    /// Shifted, numerically stable `log sum exp` along `axis` (kept as size 1).
    pub fn logsumexp(&mut self, a: Var, axis: usize) -> Result<Var> {
        check_axis("logsumexp", self.shape(a), axis)?;
        let x = self.value(a);
        let (outer, len, inner) = axis_split(x.shape(), axis);
        let d = x.data();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let m = (0..len).map(|k| d[idx(k)]).fold(T::neg_infinity(), T::max);
                let s: T = (0..len).map(|k| (d[idx(k)] - m).exp()).sum();
                out.push(m + s.ln());
            }
        }
        let shape = keepdim(x.shape(), axis);
        Ok(self.push(
            Op::LogSumExp { axis },
            vec![a],
            Tensor::from_raw(shape, out),
        ))
    }

    /// Divides each slice along `axis` by its Euclidean norm. Zero slices map
    /// to zero and pass zero gradient.
    pub fn l2_normalize(&mut self, a: Var, axis: usize) -> Result<Var> {
        check_axis("l2_normalize", self.shape(a), axis)?;
        let x = self.value(a);
        let (outer, len, inner) = axis_split(x.shape(), axis);
        let mut out = x.data().to_vec();
        let mut norms = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let n = (0..len)
                    .map(|k| out[idx(k)] * out[idx(k)])
                    .sum::<T>()
                    .sqrt();
                norms.push(n);
                for k in 0..len {
                    out[idx(k)] = if n > T::zero() {
                        out[idx(k)] / n
                    } else {
                        T::zero()
                    };
                }
            }
        }
        let shape = x.shape().to_vec();
        Ok(self.push(
            Op::L2Normalize { axis, norms },
            vec![a],
            Tensor::from_raw(shape, out),
        ))
    }

    /// Cosine similarity of two same-shaped tensors along `axis` (kept as size 1).
    /// A zero-norm slice on either side yields similarity 0.
    pub fn cosine_similarity(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        same_shape("cosine_similarity", self.shape(a), self.shape(b))?;
        let na = self.l2_normalize(a, axis)?;
        let nb = self.l2_normalize(b, axis)?;
        let prod = self.mul(na, nb)?;
        self.sum_axis(prod, axis)
    }

    /// Sum of every element, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Op::Sum, vec![a], Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = x.sum() / T::from_usize_lossy(x.len());
        self.push(Op::Mean, vec![a], Tensor::scalar(m))
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        check_axis("sum_axis", self.shape(a), axis)?;
        let x = self.value(a);
        let (outer, len, inner) = axis_split(x.shape(), axis);
        let d = x.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..len {
                for i in 0..inner {
                    out[o * inner + i] = out[o * inner + i] + d[(o * len + k) * inner + i];
                }
            }
        }
        let shape = keepdim(x.shape(), axis);
        Ok(self.push(Op::SumAxis, vec![a], Tensor::from_raw(shape, out)))
    }

    fn extreme_axis(&mut self, a: Var, axis: usize, want_max: bool) -> Result<Var> {
        check_axis(
            if want_max { "max_axis" } else { "min_axis" },
            self.shape(a),
            axis,
        )?;
        let x = self.value(a);
        let (outer, len, inner) = axis_split(x.shape(), axis);
        let d = x.data();
        let mut vals = Vec::with_capacity(outer * inner);
        let mut args = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut arg = o * len * inner + i;
                for k in 1..len {
                    let idx = (o * len + k) * inner + i;
                    let better = if want_max {
                        d[idx] > d[arg]
                    } else {
                        d[idx] < d[arg]
                    };
                    if better {
                        arg = idx;
                    }
                }
                vals.push(d[arg]);
                args.push(arg);
            }
        }
        let shape = keepdim(x.shape(), axis);
        let op = if want_max {
            Op::MaxAxis { argmax: args }
        } else {
            Op::MinAxis { argmin: args }
        };
        Ok(self.push(op, vec![a], Tensor::from_raw(shape, vals)))
    }

    /// Maximum along `axis` (kept as size 1); the gradient goes to the first
    /// maximal element in row-major order.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.extreme_axis(a, axis, true)
    }

    pub fn min_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.extreme_axis(a, axis, false)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(Op::Reshape, vec![a], v))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        check_axis("concat", &base, axis)?;
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    format!("{base:?} vs {s:?} on axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let v = self.value(*p);
                let chunk = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(self.push(
            Op::Concat { axis },
            parts.to_vec(),
            Tensor::from_raw(shape, out),
        ))
    }

    /// Forward identity that blocks every gradient flowing through it.
    pub fn detach(&mut self, a: Var) -> Var {
        let v = self.value(a).clone();
        self.push(Op::Detach, vec![a], v)
    }

    /// Reverse-mode sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        backward::run(self, loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul_is_identity() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::eye(2));
        let m = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = g.matmul(i, m).unwrap();
        assert_eq!(g.value(y), g.value(m));
    }

    #[test]
    fn activations_at_forced_points() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::scalar(0.0));
        let m = g.constant(Tensor::scalar(-1.0));
        let gz = g.gelu(z);
        let rm = g.relu(m);
        assert_eq!(g.value(gz).item(), 0.0);
        assert_eq!(g.value(rm).item(), 0.0);
    }

    #[test]
    fn cosine_of_orthogonal_and_colinear() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2], &[1.0, 0.0]));
        let b = g.constant(t(&[2], &[0.0, 1.0]));
        let c = g.constant(t(&[2], &[2.0, 0.0]));
        let d = g.constant(t(&[2], &[3.0, 0.0]));
        let ab = g.apply(OpKind::CosineSimilarity, &[a, b]).unwrap();
        let cd = g.apply(OpKind::CosineSimilarity, &[c, d]).unwrap();
        assert_eq!(g.value(ab).item(), 0.0);
        assert_eq!(g.value(cd).item(), 1.0);
    }

    #[test]
    fn shape_errors_name_operands() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let c = g.constant(Tensor::zeros(&[4]));
        assert!(g.add(a, c).is_err());
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!(matches!(OpKind::from_name("fft"), Err(Error::UnknownOp(_))));
        assert_eq!(OpKind::from_name("gelu").unwrap(), OpKind::Gelu);
    }

    #[test]
    fn softmax_and_normalize_contracts() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 3], &[0.3, -1.0, 2.0, 5.0, 5.0, -7.0]));
        let s = g.softmax(x, 1).unwrap();
        for row in g.value(s).data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let n = g.l2_normalize(x, 1).unwrap();
        for row in g.value(n).data().chunks(3) {
            assert!((row.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let z = g.constant(Tensor::zeros(&[1, 3]));
        let nz = g.l2_normalize(z, 1).unwrap();
        assert!(g.value(nz).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn max_min_pick_first_on_ties() {
        let mut g = Graph::new();
        let x = g.param(t(&[2, 3], &[1.0, 4.0, 4.0, 2.0, 2.0, 9.0]));
        let mx = g.max_axis(x, 1).unwrap();
        let mn = g.min_axis(x, 1).unwrap();
        assert_eq!(g.value(mx).data(), &[4.0, 9.0]);
        assert_eq!(g.value(mn).data(), &[1.0, 2.0]);
        let s = g.sum(mx);
        let grads = g.backward(s).unwrap();
        assert_eq!(
            grads.get(x).unwrap().data(),
            &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
        );
        let s2 = g.sum(mn);
        let grads = g.backward(s2).unwrap();
        assert_eq!(
            grads.get(x).unwrap().data(),
            &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn concat_and_transpose_layouts() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 1], &[1.0, 2.0]));
        let b = g.constant(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let tr = g.transpose(c).unwrap();
        assert_eq!(g.shape(tr), &[3, 2]);
        assert_eq!(g.value(tr).data(), &[1.0, 2.0, 3.0, 5.0, 4.0, 6.0]);
    }

    #[test]
    fn detach_is_forward_transparent() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1.0, -2.0, 0.5]));
        let d = g.detach(x);
        assert_eq!(g.value(d), g.value(x));
        assert!(!g.requires_grad(d));
    }
}
