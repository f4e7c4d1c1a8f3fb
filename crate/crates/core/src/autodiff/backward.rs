use super::kernels::{self, ConvDims};
use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{axis_split, broadcast_index_map, Tensor};

/// Gradients of one backward sweep, indexed by node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient reaching `v`, or `None` if no differentiable path exists.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, zero-filled to `shape` when unreachable.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn accumulate<T: Scalar>(graph: &Graph<T>, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    if !graph.nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

/// Sums `g` (shaped like the broadcast output) back onto `in_shape`.
fn unbroadcast<T: Scalar>(
    g: &Tensor<T>,
    in_shape: &[usize],
    f: impl Fn(usize, T) -> T,
) -> Tensor<T> {
    if g.shape() == in_shape {
        return Tensor::from_raw(
            in_shape.to_vec(),
            g.data().iter().enumerate().map(|(i, &v)| f(i, v)).collect(),
        );
    }
    let map = broadcast_index_map(in_shape, g.shape());
    let mut out = vec![T::zero(); in_shape.iter().product()];
    for (i, (&dst, &v)) in map.iter().zip(g.data()).enumerate() {
        out[dst] = out[dst] + f(i, v);
    }
    Tensor::from_raw(in_shape.to_vec(), out)
}

/// Value of `x` at each flat index of the broadcast output shape.
fn broadcast_values<T: Scalar>(x: &Tensor<T>, out_shape: &[usize]) -> Vec<T> {
    if x.shape() == out_shape {
        return x.data().to_vec();
    }
    broadcast_index_map(x.shape(), out_shape)
        .into_iter()
        .map(|i| x.data()[i])
        .collect()
}

fn pointwise<T: Scalar>(g: &Tensor<T>, x: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    g.zip_map(x, f)
}

pub(super) fn run<T: Scalar>(graph: &Graph<T>, loss: Var) -> Result<Gradients<T>> {
    let lv = graph.value(loss);
    if lv.len() != 1 {
        return Err(Error::NonScalarLoss(lv.shape().to_vec()));
    }
    let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
    if graph.nodes[loss.0].requires_grad {
        grads[loss.0] = Some(Tensor::ones(lv.shape()));
    }
    for id in (0..=loss.0).rev() {
        let node = &graph.nodes[id];
        if !node.requires_grad || matches!(node.op, Op::Leaf | Op::Detach) {
            continue;
        }
        let Some(g) = grads[id].take() else { continue };
        let ins = &node.inputs;
        let input = |k: usize| graph.value(ins[k]);
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Detach => {}
            Op::Add | Op::Sub => {
                let ga = unbroadcast(&g, input(0).shape(), |_, v| v);
                let sign = if matches!(node.op, Op::Sub) {
                    -T::one()
                } else {
                    T::one()
                };
                let gb = unbroadcast(&g, input(1).shape(), |_, v| sign * v);
                accumulate(graph, &mut grads, ins[0], ga);
                accumulate(graph, &mut grads, ins[1], gb);
            }
            Op::Mul => {
                let av = broadcast_values(input(0), g.shape());
                let bv = broadcast_values(input(1), g.shape());
                let ga = unbroadcast(&g, input(0).shape(), |i, v| v * bv[i]);
                let gb = unbroadcast(&g, input(1).shape(), |i, v| v * av[i]);
                accumulate(graph, &mut grads, ins[0], ga);
                accumulate(graph, &mut grads, ins[1], gb);
            }
            Op::Div => {
                let av = broadcast_values(input(0), g.shape());
                let bv = broadcast_values(input(1), g.shape());
                let ga = unbroadcast(&g, input(0).shape(), |i, v| v / bv[i]);
                let gb = unbroadcast(&g, input(1).shape(), |i, v| -v * av[i] / (bv[i] * bv[i]));
                accumulate(graph, &mut grads, ins[0], ga);
                accumulate(graph, &mut grads, ins[1], gb);
            }
            Op::ScalarMul(c) => {
                let c = *c;
                accumulate(graph, &mut grads, ins[0], g.map(|v| v * c));
            }
            Op::AddScalar(_) | Op::Reshape => {
                let shape = input(0).shape().to_vec();
                accumulate(
                    graph,
                    &mut grads,
                    ins[0],
                    Tensor::from_raw(shape, g.data().to_vec()),
                );
            }
            Op::MatMul => {
                let (a, b) = (input(0), input(1));
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                if graph.requires_grad(ins[0]) {
                    let mut ga = vec![T::zero(); m * k];
                    kernels::matmul_a_bt_acc(g.data(), b.data(), &mut ga, m, n, k);
                    accumulate(graph, &mut grads, ins[0], Tensor::from_raw(vec![m, k], ga));
                }
                if graph.requires_grad(ins[1]) {
                    let mut gb = vec![T::zero(); k * n];
                    kernels::matmul_at_b_acc(a.data(), g.data(), &mut gb, m, k, n);
                    accumulate(graph, &mut grads, ins[1], Tensor::from_raw(vec![k, n], gb));
                }
            }
            Op::BatchMatMul => {
                let (a, b) = (input(0), input(1));
                let (bs, m, k, n) = (a.shape()[0], a.shape()[1], a.shape()[2], b.shape()[2]);
                let gd = g.data();
                if graph.requires_grad(ins[0]) {
                    let mut ga = vec![T::zero(); bs * m * k];
                    for i in 0..bs {
                        kernels::matmul_a_bt_acc(
                            &gd[i * m * n..(i + 1) * m * n],
                            &b.data()[i * k * n..(i + 1) * k * n],
                            &mut ga[i * m * k..(i + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    accumulate(
                        graph,
                        &mut grads,
                        ins[0],
                        Tensor::from_raw(vec![bs, m, k], ga),
                    );
                }
                if graph.requires_grad(ins[1]) {
                    let mut gb = vec![T::zero(); bs * k * n];
                    for i in 0..bs {
                        kernels::matmul_at_b_acc(
                            &a.data()[i * m * k..(i + 1) * m * k],
                            &gd[i * m * n..(i + 1) * m * n],
                            &mut gb[i * k * n..(i + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                    accumulate(
                        graph,
                        &mut grads,
                        ins[1],
                        Tensor::from_raw(vec![bs, k, n], gb),
                    );
                }
            }
            Op::Transpose => {
                let (n, m) = (g.shape()[0], g.shape()[1]);
                let gd = g.data();
                let data = (0..m * n).map(|i| gd[(i % n) * m + i / n]).collect();
                accumulate(
                    graph,
                    &mut grads,
                    ins[0],
                    Tensor::from_raw(vec![m, n], data),
                );
            }
            Op::Conv2d(d) => conv_grads(graph, &mut grads, ins, &g, *d, false),
            Op::ConvTranspose2d(d) => conv_grads(graph, &mut grads, ins, &g, *d, true),
            Op::MaxPool2d { argmax, .. } => {
                let mut gx = vec![T::zero(); input(0).len()];
                for (&src, &v) in argmax.iter().zip(g.data()) {
                    gx[src] = gx[src] + v;
                }
                let shape = input(0).shape().to_vec();
                accumulate(graph, &mut grads, ins[0], Tensor::from_raw(shape, gx));
            }
            Op::Upsample2d { factor } => {
                let s = input(0).shape();
                let gx = kernels::upsample_backward(g.data(), [s[0], s[1], s[2], s[3]], *factor);
                accumulate(graph, &mut grads, ins[0], Tensor::from_raw(s.to_vec(), gx));
            }
            Op::Relu => {
                let gx = pointwise(
                    &g,
                    input(0),
                    |gv, x| if x > T::zero() { gv } else { T::zero() },
                );
                accumulate(graph, &mut grads, ins[0], gx);
            }
            Op::Gelu => {
                let gx = pointwise(&g, input(0), |gv, x| gv * kernels::gelu_grad(x));
                accumulate(graph, &mut grads, ins[0], gx);
            }
            Op::Sigmoid => {
                let gx = pointwise(&g, y, |gv, s| gv * s * (T::one() - s));
                accumulate(graph, &mut grads, ins[0], gx);
            }
            Op::Tanh => {
                let gx = pointwise(&g, y, |gv, t| gv * (T::one() - t * t));
                accumulate(graph, &mut grads, ins[0], gx);
            }
            Op::Exp => {
                let gx = pointwise(&g, y, |gv, e| gv * e);
                accumulate(graph, &mut grads, ins[0], gx);
            }
            Op::Log => {
                let gx = pointwise(&g, input(0), |gv, x| gv / x);
                accumulate(graph, &mut grads, ins[0], gx);
            }
            Op::Softmax { axis } => {
                let (outer, len, inner) = axis_split(y.shape(), *axis);
                let (yd, gd) = (y.data(), g.data());
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let dot: T = (0..len).map(|k| gd[idx(k)] * yd[idx(k)]).sum();
                        for k in 0..len {
                            gx[idx(k)] = yd[idx(k)] * (gd[idx(k)] - dot);
                        }
                    }
                }
                accumulate(
                    graph,
                    &mut grads,
                    ins[0],
                    Tensor::from_raw(y.shape().to_vec(), gx),
                );
            }
            Op::LogSumExp { axis } => {
                let x = input(0);
                let (outer, len, inner) = axis_split(x.shape(), *axis);
                let (xd, yd, gd) = (x.data(), y.data(), g.data());
                let mut gx = vec![T::zero(); x.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let r = o * inner + i;
                        for k in 0..len {
                            let idx = (o * len + k) * inner + i;
                            gx[idx] = gd[r] * (xd[idx] - yd[r]).exp();
                        }
                    }
                }
                accumulate(
                    graph,
                    &mut grads,
                    ins[0],
                    Tensor::from_raw(x.shape().to_vec(), gx),
                );
            }
            Op::L2Normalize { axis, norms } => {
                let (outer, len, inner) = axis_split(y.shape(), *axis);
                let (yd, gd) = (y.data(), g.data());
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let n = norms[o * inner + i];
                        if n == T::zero() {
                            continue;
                        }
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let dot: T = (0..len).map(|k| gd[idx(k)] * yd[idx(k)]).sum();
                        for k in 0..len {
                            gx[idx(k)] = (gd[idx(k)] - yd[idx(k)] * dot) / n;
                        }
                    }
                }
                accumulate(
                    graph,
                    &mut grads,
                    ins[0],
                    Tensor::from_raw(y.shape().to_vec(), gx),
                );
            }
            Op::Sum => {
                let shape = input(0).shape();
                accumulate(graph, &mut grads, ins[0], Tensor::full(shape, g.item()));
            }
            Op::Mean => {
                let x = input(0);
                let v = g.item() / T::from_usize_lossy(x.len());
                accumulate(graph, &mut grads, ins[0], Tensor::full(x.shape(), v));
            }
            Op::SumAxis => {
                let gx = Tensor::from_raw(
                    input(0).shape().to_vec(),
                    broadcast_values(&g, input(0).shape()),
                );
                accumulate(graph, &mut grads, ins[0], gx);
            }
            Op::MaxAxis { argmax: args, .. } | Op::MinAxis { argmin: args, .. } => {
                let mut gx = vec![T::zero(); input(0).len()];
                for (&src, &v) in args.iter().zip(g.data()) {
                    gx[src] = gx[src] + v;
                }
                let shape = input(0).shape().to_vec();
                accumulate(graph, &mut grads, ins[0], Tensor::from_raw(shape, gx));
            }
            Op::Concat { axis } => {
                let (outer, _, inner) = axis_split(g.shape(), *axis);
                let total = g.shape()[*axis];
                let mut start = 0;
                for &p in ins {
                    let ps = graph.shape(p).to_vec();
                    let width = ps[*axis];
                    if graph.requires_grad(p) {
                        let mut part = Vec::with_capacity(ps.iter().product());
                        for o in 0..outer {
                            let base = (o * total + start) * inner;
                            part.extend_from_slice(&g.data()[base..base + width * inner]);
                        }
                        accumulate(graph, &mut grads, p, Tensor::from_raw(ps, part));
                    }
                    start += width;
                }
            }
        }
        grads[id] = Some(g);
    }
    Ok(Gradients { grads })
}

fn conv_grads<T: Scalar>(
    graph: &Graph<T>,
    grads: &mut [Option<Tensor<T>>],
    ins: &[Var],
    g: &Tensor<T>,
    d: ConvDims,
    transposed: bool,
) {
    let x = graph.value(ins[0]);
    let w = graph.value(ins[1]);
    if graph.requires_grad(ins[0]) {
        let mut gx = vec![T::zero(); x.len()];
        if transposed {
            kernels::conv_forward(g.data(), w.data(), &mut gx, d);
        } else {
            kernels::conv_backward_data(g.data(), w.data(), &mut gx, d);
        }
        accumulate(
            graph,
            grads,
            ins[0],
            Tensor::from_raw(x.shape().to_vec(), gx),
        );
    }
    if graph.requires_grad(ins[1]) {
        let mut gw = vec![T::zero(); w.len()];
        if transposed {
            // y = conv^T(x): the forward-conv input is y's side, its output is x.
            kernels::conv_backward_weight(g.data(), x.data(), &mut gw, d);
        } else {
            kernels::conv_backward_weight(x.data(), g.data(), &mut gw, d);
        }
        accumulate(
            graph,
            grads,
            ins[1],
            Tensor::from_raw(w.shape().to_vec(), gw),
        );
    }
}
