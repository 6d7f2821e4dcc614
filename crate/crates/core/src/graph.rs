//! Reverse-mode automatic differentiation over a per-pass tape.
//!
//! A [`Graph`] records every operation of one forward pass in topological
//! order (inputs always precede consumers). [`Graph::backward`] walks the
//! tape once in reverse, accumulating gradients additively across fan-out.
//! The tape is meant to be built, differentiated, read out, and dropped;
//! no higher-order gradients are retained.

use crate::error::{CoreError, Result};
use crate::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{broadcast_shape, broadcast_strides, strides_of, Tensor};

/// Handle to a node in a [`Graph`]. Only valid for the graph that minted it.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub(crate) struct BackwardArgs<'a> {
    pub upstream: &'a [f64],
    pub value: &'a Tensor,
    pub parents: &'a [&'a Tensor],
}

type BackwardFn = Box<dyn Fn(BackwardArgs<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    backward: Option<BackwardFn>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Graph {
    pub fn new(grad_enabled: bool) -> Self {
        Graph {
            nodes: Vec::new(),
            grad_enabled,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers an input tensor. Gradients are tracked only when both
    /// `requires_grad` and the graph's grad mode are on.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, vec![], requires_grad && self.grad_enabled, None)
    }

    /// Registers a tensor that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of `v`, if any was produced by `backward`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape(), g.clone()).expect("grad shape"))
    }

    pub(crate) fn push(
        &mut self,
        value: Tensor,
        parents: Vec<Var>,
        requires_grad: bool,
        backward: Option<BackwardFn>,
    ) -> Var {
        debug_assert!(parents.iter().all(|p| p.0 < self.nodes.len()));
        let id = self.nodes.len();
        let tracked = requires_grad && self.grad_enabled;
        self.nodes.push(Node {
            value,
            parents: if tracked { parents } else { vec![] },
            requires_grad: tracked,
            grad: None,
            backward: if tracked { backward } else { None },
        });
        Var(id)
    }

    pub(crate) fn any_requires_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Reverse pass from a scalar loss. Every tracked leaf reachable from
    /// `loss` ends up with its gradient populated; each node is visited
    /// exactly once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.backward_impl(loss, false)
    }

    /// Like [`Graph::backward`], but frees intermediate values and gradients
    /// as soon as they are consumed. Leaf values and gradients survive.
    pub fn backward_and_release(&mut self, loss: Var) -> Result<()> {
        self.backward_impl(loss, true)
    }

    fn backward_impl(&mut self, loss: Var, release: bool) -> Result<()> {
        let loss_shape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(CoreError::NonScalarLoss { shape: loss_shape });
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() || self.nodes[i].backward.is_none() {
                continue;
            }
            let contributions = {
                let node = &self.nodes[i];
                let upstream = node.grad.as_deref().expect("grad checked above");
                let parent_values: Vec<&Tensor> =
                    node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
                let args = BackwardArgs {
                    upstream,
                    value: &node.value,
                    parents: &parent_values,
                };
                (node.backward.as_ref().expect("backward checked above"))(args)
            };
            let parents = self.nodes[i].parents.clone();
            debug_assert_eq!(contributions.len(), parents.len());
            for (slot, contrib) in contributions.into_iter().enumerate() {
                let p = parents[slot];
                let Some(contrib) = contrib else { continue };
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(contrib.shape(), self.nodes[p.0].value.shape());
                match &mut self.nodes[p.0].grad {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(contrib.data()) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib.into_data()),
                }
            }
            if release && !parents.is_empty() {
                // Interior node: consumers (all > i) are already done, and
                // this node's own backward just ran, so its buffers are dead.
                self.nodes[i].grad = None;
                self.nodes[i].value = Tensor::scalar(0.0);
                self.nodes[i].backward = None;
            }
        }
        Ok(())
    }

    // ── elementwise ─────────────────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_broadcast(a, b, "add", |x, y| x + y, BinKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_broadcast(a, b, "sub", |x, y| x - y, BinKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_broadcast(a, b, "mul", |x, y| x * y, BinKind::Mul)
    }

    /// Elementwise max of two same-shape tensors. Gradient routes to the
    /// larger input; ties go to the first argument.
    pub fn binary_max(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb {
            return Err(CoreError::ShapeMismatch {
                op: "binary_max",
                left: sa,
                right: sb,
            });
        }
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| if x >= y { x } else { y })
            .collect();
        let out = Tensor::new(&sa, data)?;
        let track = self.any_requires_grad(&[a, b]);
        let backward: Option<BackwardFn> = track.then(|| {
            Box::new(move |args: BackwardArgs<'_>| {
                let (x, y) = (args.parents[0], args.parents[1]);
                let mut ga = vec![0.0; x.numel()];
                let mut gb = vec![0.0; y.numel()];
                for i in 0..x.numel() {
                    if x.data()[i] >= y.data()[i] {
                        ga[i] = args.upstream[i];
                    } else {
                        gb[i] = args.upstream[i];
                    }
                }
                vec![
                    Some(Tensor::new(x.shape(), ga).expect("shape")),
                    Some(Tensor::new(y.shape(), gb).expect("shape")),
                ]
            }) as BackwardFn
        });
        Ok(self.push(out, vec![a, b], track, backward))
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Var {
        let data: Vec<f64> = self.value(a).data().iter().map(|&x| x * c).collect();
        let out = Tensor::new(self.shape(a), data).expect("shape");
        let track = self.any_requires_grad(&[a]);
        let backward: Option<BackwardFn> = track.then(|| {
            Box::new(move |args: BackwardArgs<'_>| {
                let g: Vec<f64> = args.upstream.iter().map(|&u| u * c).collect();
                vec![Some(Tensor::new(args.parents[0].shape(), g).expect("shape"))]
            }) as BackwardFn
        });
        self.push(out, vec![a], track, backward)
    }

    pub fn scalar_add(&mut self, a: Var, c: f64) -> Var {
        let data: Vec<f64> = self.value(a).data().iter().map(|&x| x + c).collect();
        let out = Tensor::new(self.shape(a), data).expect("shape");
        let track = self.any_requires_grad(&[a]);
        let backward: Option<BackwardFn> = track.then(|| {
            Box::new(|args: BackwardArgs<'_>| {
                vec![Some(
                    Tensor::new(args.parents[0].shape(), args.upstream.to_vec()).expect("shape"),
                )]
            }) as BackwardFn
        });
        self.push(out, vec![a], track, backward)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.value(a).data().iter().map(|&x| x.max(0.0)).collect();
        let out = Tensor::new(self.shape(a), data).expect("shape");
        let track = self.any_requires_grad(&[a]);
        let backward: Option<BackwardFn> = track.then(|| {
            Box::new(|args: BackwardArgs<'_>| {
                let x = args.parents[0];
                let g: Vec<f64> = x
                    .data()
                    .iter()
                    .zip(args.upstream)
                    .map(|(&xv, &u)| if xv > 0.0 { u } else { 0.0 })
                    .collect();
                vec![Some(Tensor::new(x.shape(), g).expect("shape"))]
            }) as BackwardFn
        });
        self.push(out, vec![a], track, backward)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.value(a).data().iter().map(|&x| sigmoid(x)).collect();
        let out = Tensor::new(self.shape(a), data).expect("shape");
        let track = self.any_requires_grad(&[a]);
        let backward: Option<BackwardFn> = track.then(|| {
            Box::new(|args: BackwardArgs<'_>| {
                let y = args.value.data();
                let g: Vec<f64> = y
                    .iter()
                    .zip(args.upstream)
                    .map(|(&yv, &u)| u * yv * (1.0 - yv))
                    .collect();
                vec![Some(Tensor::new(args.value.shape(), g).expect("shape"))]
            }) as BackwardFn
        });
        self.push(out, vec![a], track, backward)
    }

    fn binary_broadcast(
        &mut self,
        a: Var,
        b: Var,
        op: &'static str,
        f: fn(f64, f64) -> f64,
        kind: BinKind,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb, op)?;
        let va = self.value(a);
        let vb = self.value(b);
        let numel: usize = out_shape.iter().product();
        let mut data = vec![0.0; numel];
        if sa == sb {
            for ((o, &x), &y) in data.iter_mut().zip(va.data()).zip(vb.data()) {
                *o = f(x, y);
            }
        } else {
            let stra = broadcast_strides(&sa, &out_shape);
            let strb = broadcast_strides(&sb, &out_shape);
            let ad = va.data();
            let bd = vb.data();
            for_each_broadcast2(&out_shape, &stra, &strb, |i, ia, ib| {
                data[i] = f(ad[ia], bd[ib]);
            });
        }
        let out = Tensor::new(&out_shape, data)?;
        let track = self.any_requires_grad(&[a, b]);
        let backward: Option<BackwardFn> = track.then(|| {
            let out_shape = out_shape.clone();
            Box::new(move |args: BackwardArgs<'_>| {
                let (x, y) = (args.parents[0], args.parents[1]);
                match kind {
                    BinKind::Add => vec![
                        Some(reduce_to_shape(args.upstream, &out_shape, x.shape(), 1.0)),
                        Some(reduce_to_shape(args.upstream, &out_shape, y.shape(), 1.0)),
                    ],
                    BinKind::Sub => vec![
                        Some(reduce_to_shape(args.upstream, &out_shape, x.shape(), 1.0)),
                        Some(reduce_to_shape(args.upstream, &out_shape, y.shape(), -1.0)),
                    ],
                    BinKind::Mul => {
                        let stra = broadcast_strides(x.shape(), &out_shape);
                        let strb = broadcast_strides(y.shape(), &out_shape);
                        let mut ga = vec![0.0; x.numel()];
                        let mut gb = vec![0.0; y.numel()];
                        let xd = x.data();
                        let yd = y.data();
                        for_each_broadcast2(&out_shape, &stra, &strb, |i, ia, ib| {
                            ga[ia] += args.upstream[i] * yd[ib];
                            gb[ib] += args.upstream[i] * xd[ia];
                        });
                        vec![
                            Some(Tensor::new(x.shape(), ga).expect("shape")),
                            Some(Tensor::new(y.shape(), gb).expect("shape")),
                        ]
                    }
                }
            }) as BackwardFn
        });
        Ok(self.push(out, vec![a, b], track, backward))
    }

    // ── reductions ──────────────────────────────────────────────────

    /// Reduces over `dims`. Reduced extents become 1 with `keepdim`, and are
    /// removed otherwise (a full reduction leaves a scalar of shape `[1]`).
    /// Max routes its gradient to the first (lowest flat index) maximum.
    pub fn reduce(&mut self, op: ReduceOp, a: Var, dims: &[usize], keepdim: bool) -> Result<Var> {
        let in_shape = self.shape(a).to_vec();
        let rank = in_shape.len();
        let mut reduce_mask = vec![false; rank];
        for &d in dims {
            if d >= rank {
                return Err(CoreError::InvalidAxis { axis: d, rank });
            }
            reduce_mask[d] = true;
        }

        // Shape with reduced extents collapsed to 1; the broadcast strides of
        // that shape map every input element to its output cell.
        let kept_shape: Vec<usize> = in_shape
            .iter()
            .enumerate()
            .map(|(d, &e)| if reduce_mask[d] { 1 } else { e })
            .collect();
        let out_shape: Vec<usize> = if keepdim {
            kept_shape.clone()
        } else {
            let s: Vec<usize> = in_shape
                .iter()
                .enumerate()
                .filter(|(d, _)| !reduce_mask[*d])
                .map(|(_, &e)| e)
                .collect();
            if s.is_empty() {
                vec![1]
            } else {
                s
            }
        };
        let out_numel: usize = kept_shape.iter().product();
        let group: usize = in_shape
            .iter()
            .enumerate()
            .filter(|(d, _)| reduce_mask[*d])
            .map(|(_, &e)| e)
            .product();

        let out_strides = broadcast_strides(&kept_shape, &in_shape);
        let in_strides = strides_of(&in_shape);
        let src = self.value(a).data();

        let mut data;
        let mut argmax: Vec<u32> = Vec::new();
        match op {
            ReduceOp::Sum | ReduceOp::Mean => {
                data = vec![0.0; out_numel];
                for_each_broadcast2(&in_shape, &in_strides, &out_strides, |_, ii, oi| {
                    data[oi] += src[ii];
                });
                if op == ReduceOp::Mean {
                    // True division keeps means of exactly-summable inputs
                    // exact (multiplying by the reciprocal would not).
                    for v in &mut data {
                        *v /= group as f64;
                    }
                }
            }
            ReduceOp::Max => {
                data = vec![f64::NEG_INFINITY; out_numel];
                argmax = vec![0; out_numel];
                for_each_broadcast2(&in_shape, &in_strides, &out_strides, |_, ii, oi| {
                    if src[ii] > data[oi] {
                        data[oi] = src[ii];
                        argmax[oi] = ii as u32;
                    }
                });
            }
        }

        let out = Tensor::new(&out_shape, data)?;
        let track = self.any_requires_grad(&[a]);
        let backward: Option<BackwardFn> = track.then(|| {
            let in_shape = in_shape.clone();
            let kept_shape = kept_shape.clone();
            Box::new(move |args: BackwardArgs<'_>| {
                let mut g = vec![0.0; args.parents[0].numel()];
                match op {
                    ReduceOp::Sum | ReduceOp::Mean => {
                        let divisor = if op == ReduceOp::Mean {
                            group as f64
                        } else {
                            1.0
                        };
                        let in_strides = strides_of(&in_shape);
                        let out_strides = broadcast_strides(&kept_shape, &in_shape);
                        for_each_broadcast2(&in_shape, &in_strides, &out_strides, |_, ii, oi| {
                            g[ii] += args.upstream[oi] / divisor;
                        });
                    }
                    ReduceOp::Max => {
                        for (oi, &ii) in argmax.iter().enumerate() {
                            g[ii as usize] += args.upstream[oi];
                        }
                    }
                }
                vec![Some(Tensor::new(args.parents[0].shape(), g).expect("shape"))]
            }) as BackwardFn
        });
        Ok(self.push(out, vec![a], track, backward))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let dims: Vec<usize> = (0..self.shape(a).len()).collect();
        self.reduce(ReduceOp::Sum, a, &dims, false)
            .expect("dims are valid by construction")
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let dims: Vec<usize> = (0..self.shape(a).len()).collect();
        self.reduce(ReduceOp::Mean, a, &dims, false)
            .expect("dims are valid by construction")
    }

    // ── shape ───────────────────────────────────────────────────────

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshaped(shape)?;
        let track = self.any_requires_grad(&[a]);
        let backward: Option<BackwardFn> = track.then(|| {
            Box::new(|args: BackwardArgs<'_>| {
                vec![Some(
                    Tensor::new(args.parents[0].shape(), args.upstream.to_vec()).expect("shape"),
                )]
            }) as BackwardFn
        });
        Ok(self.push(out, vec![a], track, backward))
    }

    /// Concatenates two tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != sb.len() || axis >= sa.len() {
            return Err(CoreError::ShapeMismatch {
                op: "concat",
                left: sa,
                right: sb,
            });
        }
        for d in 0..sa.len() {
            if d != axis && sa[d] != sb[d] {
                return Err(CoreError::ShapeMismatch {
                    op: "concat",
                    left: sa,
                    right: sb,
                });
            }
        }
        let mut out_shape = sa.clone();
        out_shape[axis] += sb[axis];
        let outer: usize = sa[..axis].iter().product();
        let inner: usize = sa[axis + 1..].iter().product();
        let block_a = sa[axis] * inner;
        let block_b = sb[axis] * inner;
        let mut data = Vec::with_capacity(outer * (block_a + block_b));
        let da = self.value(a).data();
        let db = self.value(b).data();
        for o in 0..outer {
            data.extend_from_slice(&da[o * block_a..(o + 1) * block_a]);
            data.extend_from_slice(&db[o * block_b..(o + 1) * block_b]);
        }
        let out = Tensor::new(&out_shape, data)?;
        let track = self.any_requires_grad(&[a, b]);
        let backward: Option<BackwardFn> = track.then(|| {
            Box::new(move |args: BackwardArgs<'_>| {
                let mut ga = Vec::with_capacity(outer * block_a);
                let mut gb = Vec::with_capacity(outer * block_b);
                let stride = block_a + block_b;
                for o in 0..outer {
                    ga.extend_from_slice(&args.upstream[o * stride..o * stride + block_a]);
                    gb.extend_from_slice(
                        &args.upstream[o * stride + block_a..(o + 1) * stride],
                    );
                }
                vec![
                    Some(Tensor::new(args.parents[0].shape(), ga).expect("shape")),
                    Some(Tensor::new(args.parents[1].shape(), gb).expect("shape")),
                ]
            }) as BackwardFn
        });
        Ok(self.push(out, vec![a, b], track, backward))
    }

    // ── linear ──────────────────────────────────────────────────────

    /// y[n,k] = sum_f x[n,f] w[f,k] + b[k]
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let sb = self.shape(b).to_vec();
        if sx.len() != 2 {
            return Err(CoreError::RankMismatch {
                op: "linear",
                expected: 2,
                shape: sx,
            });
        }
        if sw.len() != 2 || sw[0] != sx[1] {
            return Err(CoreError::ShapeMismatch {
                op: "linear",
                left: sx,
                right: sw,
            });
        }
        if sb.len() != 1 || sb[0] != sw[1] {
            return Err(CoreError::ShapeMismatch {
                op: "linear",
                left: sw,
                right: sb,
            });
        }
        let (n, f, k) = (sx[0], sx[1], sw[1]);
        let mut data = vec![0.0; n * k];
        for row in data.chunks_mut(k) {
            row.copy_from_slice(self.value(b).data());
        }
        gemm_nn(n, f, k, self.value(x).data(), self.value(w).data(), &mut data);
        let out = Tensor::new(&[n, k], data)?;
        let track = self.any_requires_grad(&[x, w, b]);
        let backward: Option<BackwardFn> = track.then(|| {
            Box::new(move |args: BackwardArgs<'_>| {
                let (xv, wv) = (args.parents[0], args.parents[1]);
                // dx[n,f] = u[n,k] w[f,k]^T
                let mut dx = vec![0.0; n * f];
                gemm_nt(n, k, f, args.upstream, wv.data(), &mut dx);
                // dw[f,k] = x[n,f]^T u[n,k]
                let mut dw = vec![0.0; f * k];
                gemm_tn(f, n, k, xv.data(), args.upstream, &mut dw);
                // db[k] = column sums of u
                let mut db = vec![0.0; k];
                for row in args.upstream.chunks(k) {
                    for (d, &u) in db.iter_mut().zip(row) {
                        *d += u;
                    }
                }
                vec![
                    Some(Tensor::new(&[n, f], dx).expect("shape")),
                    Some(Tensor::new(&[f, k], dw).expect("shape")),
                    Some(Tensor::new(&[k], db).expect("shape")),
                ]
            }) as BackwardFn
        });
        Ok(self.push(out, vec![x, w, b], track, backward))
    }
}

#[derive(Clone, Copy)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Walks every flat index of `shape`, handing the callback the flat offsets
/// of two tensors addressed with (possibly zero) strides `sa` and `sb`.
pub(crate) fn for_each_broadcast2<F: FnMut(usize, usize, usize)>(
    shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: F,
) {
    let numel: usize = shape.iter().product();
    let rank = shape.len();
    let mut coords = vec![0usize; rank];
    let mut ia = 0usize;
    let mut ib = 0usize;
    for i in 0..numel {
        f(i, ia, ib);
        for d in (0..rank).rev() {
            coords[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if coords[d] < shape[d] {
                break;
            }
            coords[d] = 0;
            ia -= sa[d] * shape[d];
            ib -= sb[d] * shape[d];
        }
    }
}

/// Sums `grad` (laid out as `from`) down to `to`, which must be `from` with
/// some extents collapsed to 1. `scale` is folded into the accumulation.
fn reduce_to_shape(grad: &[f64], from: &[usize], to: &[usize], scale: f64) -> Tensor {
    if from == to {
        if scale == 1.0 {
            return Tensor::new(to, grad.to_vec()).expect("shape");
        }
        return Tensor::new(to, grad.iter().map(|&g| g * scale).collect()).expect("shape");
    }
    let mut out = vec![0.0; to.iter().product()];
    let from_strides = strides_of(from);
    let to_strides = broadcast_strides(to, from);
    for_each_broadcast2(from, &from_strides, &to_strides, |_, fi, ti| {
        out[ti] += grad[fi] * scale;
    });
    Tensor::new(to, out).expect("shape")
}
