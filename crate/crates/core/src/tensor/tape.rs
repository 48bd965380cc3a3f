use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::linalg::{gemm, Op as Layout};
use super::params::{ParamId, ParamStore};
use super::{conv, numel, reduce, AxisGroups, Tensor};
use crate::{Error, Real, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(super) u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

pub(super) struct Node<S> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
    pub op: Op<S>,
    pub requires_grad: bool,
}

pub(super) enum Op<S> {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, S),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Transpose(Var),
    AddChannelBias(Var, Var),
    MulBroadcast(Var, Var),
    Matmul(Var, Var),
    Embedding { table: Var, ids: Vec<usize> },
    Tile(Var),
    Conv2d { x: Var, w: Var, stride: usize, pad: usize },
    ConvTranspose2d { x: Var, w: Var, stride: usize, pad: usize },
    Conv2dTiled { a: Var, w: Var, pad: usize },
    MaxPool2d { x: Var, argmax: Vec<u32> },
    MaskedAvgPool2d { x: Var, weight: Vec<S>, k: (usize, usize) },
    UpsampleNearest { x: Var, factor: usize },
    UpsampleBilinear { x: Var, factor: usize },
    ScatterMax { x: Var, argmax: Vec<u32> },
    ScatterPredict { b: Var, g: Var, geom: super::conv::ScatterGeom },
    ChannelMix { x: Var, m: Var },
    Window2d(Var),
    Softmax { x: Var, groups: AxisGroups },
    Normalize { x: Var, groups: AxisGroups },
    Sum(Var),
    Mean(Var),
    MaxAxis0 { x: Var, argmax: Vec<u32> },
    Nll { belief: Var, target: Vec<S> },
    CrossEntropy { logits: Var, target: usize },
}

/// Ordered record of executed operations.
///
/// A tape belongs to one execution context; independent tapes over the same
/// [`ParamStore`] can run side by side and merge their gradients by summation.
pub struct Tape<S> {
    pub(super) nodes: Vec<Node<S>>,
    params: Vec<(ParamId, Var)>,
    grad_enabled: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Real> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.index()).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of every parameter used on `tape` into `store`.
    pub fn accumulate_into(&self, tape: &Tape<S>, store: &mut ParamStore<S>) {
        for &(id, var) in &tape.params {
            if let Some(g) = self.get(var) {
                store.add_grad(id, g);
            }
        }
    }
}

impl<S: Real> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that records values only; nothing on it requires a gradient.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.index()].shape
    }

    pub fn data(&self, v: Var) -> &[S] {
        &self.nodes[v.index()].data
    }

    pub fn value(&self, v: Var) -> Tensor<S> {
        let n = &self.nodes[v.index()];
        Tensor::new(&n.shape, n.data.clone()).expect("tape node is well formed")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index()].requires_grad
    }

    pub(super) fn push(&mut self, shape: Vec<usize>, data: Vec<S>, op: Op<S>, inputs: &[Var]) -> Var {
        debug_assert_eq!(numel(&shape), data.len());
        let requires_grad = match op {
            Op::Leaf | Op::Param => false,
            _ => inputs.iter().any(|v| self.nodes[v.index()].requires_grad),
        };
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            shape,
            data,
            op,
            requires_grad,
        });
        Var((self.nodes.len() - 1) as u32)
    }

    pub fn leaf(&mut self, t: &Tensor<S>) -> Var {
        let rg = t.requires_grad && self.grad_enabled;
        let v = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, &[]);
        self.nodes[v.index()].requires_grad = rg;
        v
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<S>) -> Result<Var> {
        if numel(shape) != data.len() {
            return Err(Error::shape("constant", format!("{shape:?} vs {}", data.len())));
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf, &[]))
    }

    pub fn scalar(&mut self, v: S) -> Var {
        self.push(vec![1], vec![v], Op::Leaf, &[])
    }

    /// Loads a parameter onto the tape (once per tape).
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.params.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let t = store.tensor(id);
        let v = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Param, &[]);
        self.nodes[v.index()].requires_grad = self.grad_enabled;
        if !self.grad_enabled {
            self.nodes[v.index()].op = Op::Leaf;
        }
        self.params.push((id, v));
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(S, S) -> S, node: Op<S>) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(self.shape(a).to_vec(), data, node, &[a, b]))
    }

    fn map(&mut self, a: Var, f: impl Fn(S) -> S, node: Op<S>) -> Var {
        let data = self.data(a).iter().map(|&x| f(x)).collect();
        self.push(self.shape(a).to_vec(), data, node, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: S, shift: S) -> Var {
        self.map(a, |x| scale * x + shift, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, scale: S) -> Var {
        self.affine(a, scale, S::zero())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| if x > S::zero() { x } else { S::zero() }, Op::Relu(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.data(a).len() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape(a))));
        }
        let data = self.data(a).to_vec();
        Ok(self.push(shape.to_vec(), data, Op::Reshape(a), &[a]))
    }

    /// Concatenation along axis 0.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let tail = self.shape(first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != tail.len() + 1 || s[1..] != tail[..] {
                return Err(Error::shape("concat", format!("{s:?} vs [_, {tail:?}]")));
            }
            lead += s[0];
            data.extend_from_slice(self.data(p));
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        Ok(self.push(shape, data, Op::Concat(parts.to_vec()), parts))
    }

    /// Rows `start..start + len` along axis 0.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if len == 0 || start + len > s[0] {
            return Err(Error::shape("slice", format!("{start}..{} of {s:?}", start + len)));
        }
        let row = numel(&s[1..]);
        let data = self.data(a)[start * row..(start + len) * row].to_vec();
        let mut shape = s;
        shape[0] = len;
        Ok(self.push(shape, data, Op::Slice(a, start * row), &[a]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::shape("transpose", format!("{s:?} is not 2-d")));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.data(a);
        let mut data = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        Ok(self.push(vec![c, r], data, Op::Transpose(a), &[a]))
    }

    /// `x[c, ...] + b[c]`.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if self.shape(b) != [s[0]] {
            return Err(Error::shape("add_channel_bias", format!("{s:?} vs {:?}", self.shape(b))));
        }
        let inner = numel(&s[1..]);
        let bias = self.data(b);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bias[i / inner])
            .collect();
        Ok(self.push(s, data, Op::AddChannelBias(x, b), &[x, b]))
    }

    /// `x[c, rest] * m[rest]`, broadcasting `m` over the leading axis.
    pub fn mul_broadcast(&mut self, x: Var, m: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || self.shape(m) != &s[1..] {
            return Err(Error::shape("mul_broadcast", format!("{s:?} vs {:?}", self.shape(m))));
        }
        let inner = numel(&s[1..]);
        let mv = self.data(m);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v * mv[i % inner])
            .collect();
        Ok(self.push(s, data, Op::MulBroadcast(x, m), &[x, m]))
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![S::zero(); m * n];
        gemm(m, k, n, S::one(), self.data(a), Layout(false), self.data(b), Layout(false), S::zero(), &mut data);
        Ok(self.push(vec![m, n], data, Op::Matmul(a, b), &[a, b]))
    }

    /// `w[out,in] · x[in] -> [out]`.
    pub fn linear(&mut self, w: Var, x: Var) -> Result<Var> {
        let n = self.data(x).len();
        let col = self.reshape(x, &[n, 1])?;
        let y = self.matmul(w, col)?;
        let out = self.shape(w)[0];
        self.reshape(y, &[out])
    }

    /// Rows of `table[V,E]` selected by `ids`, giving `[ids.len(), E]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 || ids.is_empty() {
            return Err(Error::shape("embedding", format!("table {s:?}, {} ids", ids.len())));
        }
        let e = s[1];
        let mut data = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            if id >= s[0] {
                return Err(Error::IndexOutOfBounds {
                    index: vec![id],
                    bounds: vec![s[0]],
                });
            }
            data.extend_from_slice(&self.data(table)[id * e..(id + 1) * e]);
        }
        Ok(self.push(
            vec![ids.len(), e],
            data,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Spatially tiles a vector `[a]` into `[a, h, w]`.
    pub fn tile(&mut self, v: Var, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(v);
        if s.len() != 1 {
            return Err(Error::shape("tile", format!("{s:?} is not 1-d")));
        }
        let a = s[0];
        let mut data = Vec::with_capacity(a * h * w);
        for &x in self.data(v) {
            data.extend(core::iter::repeat_n(x, h * w));
        }
        Ok(self.push(vec![a, h, w], data, Op::Tile(v), &[v]))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let ls = self.shape(loss);
        if numel(ls) != 1 {
            return Err(Error::NonScalarLoss(ls.to_vec()));
        }
        let mut grads: Vec<Option<Vec<S>>> = Vec::new();
        grads.resize_with(loss.index() + 1, || None);
        grads[loss.index()] = Some(vec![S::one()]);
        for i in (0..=loss.index()).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf | Op::Param) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [S])| {
            if !nodes[v.index()].requires_grad {
                return;
            }
            let slot = &mut grads[v.index()];
            let buf = slot.get_or_insert_with(|| vec![S::zero(); nodes[v.index()].data.len()]);
            f(buf);
        };
        let val = |v: Var| -> &[S] { &nodes[v.index()].data };
        let y = &node.data;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(d, &s)| *d -= s));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for ((d, &s), &o) in ga.iter_mut().zip(g).zip(bv) {
                        *d += s * o;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((d, &s), &o) in gb.iter_mut().zip(g).zip(av) {
                        *d += s * o;
                    }
                });
            }
            Op::Affine(a, k) => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(d, &s)| *d += s * *k)),
            Op::Sigmoid(a) => acc(*a, &mut |ga| {
                for ((d, &s), &o) in ga.iter_mut().zip(g).zip(y) {
                    *d += s * o * (S::one() - o);
                }
            }),
            Op::Tanh(a) => acc(*a, &mut |ga| {
                for ((d, &s), &o) in ga.iter_mut().zip(g).zip(y) {
                    *d += s * (S::one() - o * o);
                }
            }),
            Op::Relu(a) => {
                let av = val(*a);
                acc(*a, &mut |ga| {
                    for ((d, &s), &x) in ga.iter_mut().zip(g).zip(av) {
                        if x > S::zero() {
                            *d += s;
                        }
                    }
                })
            }
            Op::Reshape(a) => acc(*a, &mut |ga| add_into(ga, g)),
            Op::Tile(a) => {
                let hw = g.len() / val(*a).len();
                acc(*a, &mut |ga| {
                    for (c, d) in ga.iter_mut().enumerate() {
                        *d += sum_f64(&g[c * hw..(c + 1) * hw]);
                    }
                })
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = val(*p).len();
                    acc(*p, &mut |gp| add_into(gp, &g[off..off + n]));
                    off += n;
                }
            }
            Op::Slice(a, off) => acc(*a, &mut |ga| add_into(&mut ga[*off..*off + g.len()], g)),
            Op::Transpose(a) => {
                let (c, r) = (node.shape[0], node.shape[1]);
                acc(*a, &mut |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                })
            }
            Op::AddChannelBias(x, b) => {
                let inner = g.len() / val(*b).len();
                acc(*x, &mut |gx| add_into(gx, g));
                acc(*b, &mut |gb| {
                    for (c, d) in gb.iter_mut().enumerate() {
                        *d += sum_f64(&g[c * inner..(c + 1) * inner]);
                    }
                });
            }
            Op::MulBroadcast(x, m) => {
                let (xv, mv) = (val(*x), val(*m));
                let inner = mv.len();
                acc(*x, &mut |gx| {
                    for (i, d) in gx.iter_mut().enumerate() {
                        *d += g[i] * mv[i % inner];
                    }
                });
                acc(*m, &mut |gm| {
                    for (i, (&s, &xv)) in g.iter().zip(xv).enumerate() {
                        gm[i % inner] += s * xv;
                    }
                });
            }
            Op::Matmul(a, b) => {
                let (m, k) = (nodes[a.index()].shape[0], nodes[a.index()].shape[1]);
                let n = nodes[b.index()].shape[1];
                let (av, bv) = (val(*a), val(*b));
                // dA = dY · Bᵀ, dB = Aᵀ · dY
                acc(*a, &mut |ga| gemm(m, n, k, S::one(), g, Layout(false), bv, Layout(true), S::one(), ga));
                acc(*b, &mut |gb| gemm(k, m, n, S::one(), av, Layout(true), g, Layout(false), S::one(), gb));
            }
            Op::Embedding { table, ids } => {
                let e = nodes[table.index()].shape[1];
                acc(*table, &mut |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * e..(id + 1) * e], &g[r * e..(r + 1) * e]);
                    }
                })
            }
            Op::Conv2d { x, w, stride, pad } => {
                let (xn, wn) = (&nodes[x.index()], &nodes[w.index()]);
                let geo = conv::ConvGeom::new(&xn.shape, &wn.shape, *stride, *pad);
                if xn.requires_grad {
                    acc(*x, &mut |gx| conv::conv2d_backward_input(&geo, &wn.data, g, gx));
                }
                if wn.requires_grad {
                    acc(*w, &mut |gw| conv::conv2d_backward_weight(&geo, &xn.data, g, gw));
                }
            }
            Op::ConvTranspose2d { x, w, stride, pad } => {
                let (xn, wn) = (&nodes[x.index()], &nodes[w.index()]);
                let geo = conv::TransposeGeom::new(&xn.shape, &wn.shape, *stride, *pad);
                if xn.requires_grad {
                    acc(*x, &mut |gx| conv::conv_transpose2d_backward_input(&geo, &wn.data, g, gx));
                }
                if wn.requires_grad {
                    acc(*w, &mut |gw| conv::conv_transpose2d_backward_weight(&geo, &xn.data, g, gw));
                }
            }
            Op::Conv2dTiled { a, w, pad } => {
                let (an, wn) = (&nodes[a.index()], &nodes[w.index()]);
                let tap_grad = conv::conv2d_tiled_tap_grad(&wn.shape, &node.shape, *pad, g);
                acc(*a, &mut |ga| conv::conv2d_tiled_backward_input(&wn.shape, &wn.data, &tap_grad, ga));
                acc(*w, &mut |gw| conv::conv2d_tiled_backward_weight(&wn.shape, &an.data, &tap_grad, gw));
            }
            Op::MaxPool2d { x, argmax } | Op::ScatterMax { x, argmax } | Op::MaxAxis0 { x, argmax } => {
                acc(*x, &mut |gx| {
                    for (&src, &s) in argmax.iter().zip(g) {
                        if src != u32::MAX {
                            gx[src as usize] += s;
                        }
                    }
                })
            }
            Op::MaskedAvgPool2d { x, weight, k } => {
                let xs = &nodes[x.index()].shape;
                acc(*x, &mut |gx| conv::masked_avg_pool_backward(xs, weight, *k, g, gx))
            }
            Op::UpsampleNearest { x, factor } => {
                let xs = &nodes[x.index()].shape;
                acc(*x, &mut |gx| conv::upsample_nearest_backward(xs, *factor, g, gx))
            }
            Op::UpsampleBilinear { x, factor } => {
                let xs = &nodes[x.index()].shape;
                acc(*x, &mut |gx| conv::upsample_bilinear_backward(xs, *factor, g, gx))
            }
            Op::ScatterPredict { b, g: kern, geom } => {
                let (bn, kn) = (&nodes[b.index()], &nodes[kern.index()]);
                if bn.requires_grad {
                    acc(*b, &mut |gb| conv::scatter_predict_backward_belief(&bn.shape, &kn.data, *geom, g, gb));
                }
                if kn.requires_grad {
                    acc(*kern, &mut |gk| conv::scatter_predict_backward_kernel(&bn.shape, &bn.data, *geom, g, gk));
                }
            }
            Op::ChannelMix { x, m } => {
                let (xn, mn) = (&nodes[x.index()], &nodes[m.index()]);
                if xn.requires_grad {
                    acc(*x, &mut |gx| conv::channel_mix_backward_input(&xn.shape, &mn.shape, &mn.data, g, gx));
                }
                if mn.requires_grad {
                    acc(*m, &mut |gm| conv::channel_mix_backward_matrix(&xn.shape, &mn.shape, &xn.data, g, gm));
                }
            }
            Op::Window2d(x) => {
                let xs = &nodes[x.index()].shape;
                acc(*x, &mut |gx| conv::window2d_copy(&node.shape, g, xs, gx))
            }
            Op::Softmax { x, groups } => acc(*x, &mut |gx| reduce::softmax_backward(groups, y, g, gx)),
            Op::Normalize { x, groups } => {
                let xv = val(*x);
                acc(*x, &mut |gx| reduce::normalize_backward(groups, xv, g, gx))
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let n = S::from_f64(val(*a).len() as f64);
                acc(*a, &mut |ga| ga.iter_mut().for_each(|d| *d += g[0] / n))
            }
            Op::Nll { belief, target } => {
                let bv = val(*belief);
                acc(*belief, &mut |gb| reduce::nll_backward(bv, target, g[0], gb))
            }
            Op::CrossEntropy { logits, target } => {
                let lv = val(*logits);
                acc(*logits, &mut |gl| reduce::cross_entropy_backward(lv, *target, g[0], gl))
            }
        }
    }
}

pub(super) fn add_into<S: Real>(dst: &mut [S], src: &[S]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

pub(super) fn sum_f64<S: Real>(v: &[S]) -> S {
    S::from_f64(v.iter().map(|x| x.as_f64()).sum())
}

#[inline]
pub(crate) fn sigmoid<S: Real>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}
