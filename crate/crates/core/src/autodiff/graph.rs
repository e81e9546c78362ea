use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use super::tensor::{gemm, gemm_nt, gemm_tn};
use super::{AutodiffError, ParamId, ParamStore, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatMul { a: usize, b: usize, batched: bool },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Softmax(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize, inv_std: Vec<f64>, xhat: Vec<f64> },
    Relu(usize),
    Gelu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Transpose(usize),
    Reshape(usize),
    Slice { a: usize, axis: usize, start: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    Log(usize),
    Abs(usize),
    Square(usize),
    ClampMax(usize, f64),
    ClampMin(usize, f64),
    Sum(usize),
    Mean(usize),
    AddMask(usize),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// vector is always a valid topological order.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradients indexed by [`ParamId`]; parameters absent from the graph get `None`.
    pub fn param_grads(&self, graph: &Graph, n_params: usize) -> Vec<Option<Tensor>> {
        let mut out = vec![None; n_params];
        for (idx, slot) in graph.param_vars.iter().enumerate() {
            if let (Some(var), true) = (slot, idx < n_params) {
                out[idx] = self.grads[var.0].clone();
            }
        }
        out
    }
}

/// Strip leading unit axes so `[1, d]` broadcasts like `[d]`.
fn squeeze_leading(shape: &[usize]) -> &[usize] {
    let mut s = shape;
    while s.len() > 1 && s[0] == 1 {
        s = &s[1..];
    }
    s
}

fn suffix_broadcastable(a: &[usize], b: &[usize]) -> bool {
    let b = squeeze_leading(b);
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

/// Sum `g` (shaped like the broadcast output) down to `target_len` elements.
fn reduce_broadcast(g: &Tensor, target_shape: &[usize]) -> Tensor {
    let n = target_shape.iter().product::<usize>();
    let mut out = vec![0.0; n];
    for chunk in g.data().chunks(n) {
        for (o, x) in out.iter_mut().zip(chunk) {
            *o += x;
        }
    }
    Tensor::new(target_shape, out).expect("valid reduction shape")
}

fn erf(x: f64) -> f64 {
    libm::erf(x)
}

const INV_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that receives a gradient (used for gradient checks on inputs).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Bind a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(Some(v)) = self.param_vars.get(id.0) {
            return *v;
        }
        let var = self.push(store.get(id).clone(), Op::Param, true);
        if self.param_vars.len() <= id.0 {
            self.param_vars.resize(id.0 + 1, None);
        }
        self.param_vars[id.0] = Some(var);
        var
    }

    /// Copy of a value that is excluded from gradient computation.
    pub fn detach(&mut self, a: Var) -> Var {
        let t = self.value(a).clone();
        self.push(t, Op::Leaf, false)
    }

    /// `a[..., m, k] · b[k, n]` (shared right operand) or `a[..., m, k] · b[..., k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || AutodiffError::ShapeMismatch {
            op: "matmul",
            left: sa.clone(),
            right: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(mismatch());
        }
        let batched = sb.len() > 2;
        let mut out_shape = sa[..sa.len() - 1].to_vec();
        out_shape.push(n);
        let mut out = vec![0.0; out_shape.iter().product()];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        if batched {
            if sa[..sa.len() - 2] != sb[..sb.len() - 2] {
                return Err(mismatch());
            }
            let batch: usize = sa[..sa.len() - 2].iter().product();
            for i in 0..batch {
                gemm(
                    &da[i * m * k..(i + 1) * m * k],
                    &db[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                    m,
                    k,
                    n,
                    false,
                );
            }
        } else {
            let rows = da.len() / k;
            gemm(da, db, &mut out, rows, k, n, false);
        }
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(
            Tensor::new(&out_shape, out)?,
            Op::MatMul {
                a: a.0,
                b: b.0,
                batched,
            },
            rg,
        ))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !suffix_broadcastable(sa, sb) {
            return Err(AutodiffError::ShapeMismatch {
                op: name,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let bd = self.value(b).data();
        let n = bd.len();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(n) {
            for (x, y) in chunk.iter_mut().zip(bd) {
                *x = f(*x, *y);
            }
        }
        Ok(out)
    }

    /// Elementwise `a + b`; `b` may broadcast over leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(t, Op::Add(a.0, b.0), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(t, Op::Sub(a.0, b.0), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(t, Op::Mul(a.0, b.0), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x * s);
        let rg = self.rg(a.0);
        self.push(t, Op::Scale(a.0, s), rg)
    }

    /// Add a constant mask (typically `0` / `-inf`) before a softmax.
    pub fn add_mask(&mut self, a: Var, mask: &Tensor) -> Result<Var, AutodiffError> {
        let (sa, sm) = (self.shape(a), mask.shape());
        if !suffix_broadcastable(sa, sm) {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_mask",
                left: sa.to_vec(),
                right: sm.to_vec(),
            });
        }
        let n = mask.len();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(n) {
            for (x, m) in chunk.iter_mut().zip(mask.data()) {
                *x += m;
            }
        }
        let rg = self.rg(a.0);
        Ok(self.push(out, Op::AddMask(a.0), rg))
    }

    /// Softmax over the last axis with max subtraction; `-inf` logits map to exactly 0.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let d = out.last_dim();
        for row in out.data_mut().chunks_mut(d) {
            softmax_in_place(row);
        }
        let rg = self.rg(a.0);
        self.push(out, Op::Softmax(a.0), rg)
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta` of shape `[d]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, AutodiffError> {
        let d = self.value(x).last_dim();
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(AutodiffError::ShapeMismatch {
                op: "layer_norm",
                left: self.shape(x).to_vec(),
                right: self.shape(gamma).to_vec(),
            });
        }
        let xv = self.value(x);
        let rows = xv.outer_len();
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        for (r, row) in xv.data().chunks(d).enumerate() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for (j, v) in row.iter().enumerate() {
                xhat[r * d + j] = (v - mean) * inv;
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let out: Vec<f64> = xhat
            .iter()
            .enumerate()
            .map(|(i, h)| h * g[i % d] + b[i % d])
            .collect();
        let t = Tensor::new(xv.shape(), out)?;
        let rg = self.rg(x.0) || self.rg(gamma.0) || self.rg(beta.0);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                inv_std,
                xhat,
            },
            rg,
        ))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a).map(f);
        let rg = self.rg(a.0);
        self.push(t, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a.0))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, |x| 0.5 * x * (1.0 + erf(x * INV_SQRT_2)), Op::Gelu(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a.0))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), Op::Log(a.0))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), Op::Abs(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a.0))
    }

    /// `min(x, tau)`. The derivative is 1 below `tau` and 0 at or above it.
    pub fn clamp_max(&mut self, a: Var, tau: f64) -> Var {
        self.unary(a, |x| if x < tau { x } else { tau }, Op::ClampMax(a.0, tau))
    }

    /// `max(x, floor)`. The derivative is 1 above `floor` and 0 at or below it.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        self.unary(a, |x| if x > floor { x } else { floor }, Op::ClampMin(a.0, floor))
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(AutodiffError::InvalidShape(s));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let t = transpose_last2(self.value(a).data(), r, c);
        let mut shape = s;
        let n = shape.len();
        shape.swap(n - 2, n - 1);
        let rg = self.rg(a.0);
        Ok(self.push(Tensor::new(&shape, t)?, Op::Transpose(a.0), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(a.0);
        Ok(self.push(t, Op::Reshape(a.0), rg))
    }

    /// Contiguous sub-range `[start, start + len)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(AutodiffError::InvalidSlice {
                shape: s,
                axis,
                start,
                len,
            });
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * s[axis] * inner;
            out.extend_from_slice(&src[base + start * inner..base + (start + len) * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.rg(a.0);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Slice {
                a: a.0,
                axis,
                start,
            },
            rg,
        ))
    }

    /// Concatenate along `axis`; all other axes must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = self.shape(*inputs.first().ok_or(AutodiffError::EmptyConcat)?).to_vec();
        if axis >= first.len() {
            return Err(AutodiffError::InvalidShape(first));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    left: first.clone(),
                    right: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let len = self.shape(*v)[axis];
                let src = self.value(*v).data();
                out.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = inputs.iter().any(|v| self.rg(v.0));
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Concat {
                inputs: inputs.iter().map(|v| v.0).collect(),
                axis,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a.0);
        self.push(Tensor::scalar(s), Op::Sum(a.0), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(a.0);
        self.push(Tensor::scalar(s), Op::Mean(a.0), rg)
    }

    /// Reverse accumulation from a scalar output seeded with 1.
    pub fn backward(&self, output: Var) -> Result<Gradients, AutodiffError> {
        let out = &self.nodes[output.0].value;
        if out.len() != 1 {
            return Err(AutodiffError::NonScalarOutput(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::full(out.shape(), 1.0));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if self.nodes[idx].requires_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], idx: usize, g: Tensor) {
        if !self.nodes[idx].requires_grad {
            return;
        }
        match &mut grads[idx] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul { a, b, batched } => {
                let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let sa = va.shape();
                let sb = vb.shape();
                let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let n = sb[sb.len() - 1];
                if self.rg(*a) {
                    let mut ga = vec![0.0; va.len()];
                    if *batched {
                        let batch = va.len() / (m * k);
                        for i in 0..batch {
                            gemm_nt(
                                &g.data()[i * m * n..(i + 1) * m * n],
                                &vb.data()[i * k * n..(i + 1) * k * n],
                                &mut ga[i * m * k..(i + 1) * m * k],
                                m,
                                n,
                                k,
                                false,
                            );
                        }
                    } else {
                        let rows = va.len() / k;
                        gemm_nt(g.data(), vb.data(), &mut ga, rows, n, k, false);
                    }
                    self.accumulate(grads, *a, Tensor::new(sa, ga).expect("shape"));
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; vb.len()];
                    if *batched {
                        let batch = va.len() / (m * k);
                        for i in 0..batch {
                            gemm_tn(
                                &va.data()[i * m * k..(i + 1) * m * k],
                                &g.data()[i * m * n..(i + 1) * m * n],
                                &mut gb[i * k * n..(i + 1) * k * n],
                                k,
                                m,
                                n,
                                false,
                            );
                        }
                    } else {
                        let rows = va.len() / k;
                        gemm_tn(va.data(), g.data(), &mut gb, k, rows, n, false);
                    }
                    self.accumulate(grads, *b, Tensor::new(sb, gb).expect("shape"));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*b) {
                    let gb = reduce_broadcast(g, self.nodes[*b].value.shape());
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*b) {
                    let gb = reduce_broadcast(g, self.nodes[*b].value.shape()).map(|x| -x);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let nb = vb.len();
                if self.rg(*a) {
                    let mut ga = g.clone();
                    for (i, x) in ga.data_mut().iter_mut().enumerate() {
                        *x *= vb.data()[i % nb];
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let prod: Vec<f64> = g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect();
                    let prod = Tensor::new(va.shape(), prod).expect("shape");
                    self.accumulate(grads, *b, reduce_broadcast(&prod, vb.shape()));
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|x| x * s)),
            Op::AddMask(a) => self.accumulate(grads, *a, g.clone()),
            Op::Softmax(a) => {
                let d = y.last_dim();
                let mut ga = g.clone();
                for (gr, yr) in ga.data_mut().chunks_mut(d).zip(y.data().chunks(d)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                    for (x, yv) in gr.iter_mut().zip(yr) {
                        *x = yv * (*x - dot);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                inv_std,
                xhat,
            } => {
                let d = y.last_dim();
                let gam = self.nodes[*gamma].value.data();
                if self.rg(*gamma) || self.rg(*beta) {
                    let mut gg = vec![0.0; d];
                    let mut gbt = vec![0.0; d];
                    for (i, gv) in g.data().iter().enumerate() {
                        gg[i % d] += gv * xhat[i];
                        gbt[i % d] += gv;
                    }
                    let shape = self.nodes[*gamma].value.shape();
                    self.accumulate(grads, *gamma, Tensor::new(shape, gg).expect("shape"));
                    let shape = self.nodes[*beta].value.shape();
                    self.accumulate(grads, *beta, Tensor::new(shape, gbt).expect("shape"));
                }
                if self.rg(*x) {
                    let mut gx = vec![0.0; g.len()];
                    let df = d as f64;
                    for (r, inv) in inv_std.iter().enumerate() {
                        let gr = &g.data()[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..d {
                            let dh = gr[j] * gam[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[j];
                        }
                        for j in 0..d {
                            let dh = gr[j] * gam[j];
                            gx[r * d + j] = inv / df * (df * dh - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                    let shape = self.nodes[*x].value.shape();
                    self.accumulate(grads, *x, Tensor::new(shape, gx).expect("shape"));
                }
            }
            Op::Relu(a) => {
                let va = &self.nodes[*a].value;
                let ga = zip_map(g, va, |gv, x| if x > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *a, ga);
            }
            Op::Gelu(a) => {
                let va = &self.nodes[*a].value;
                let ga = zip_map(g, va, |gv, x| {
                    let cdf = 0.5 * (1.0 + erf(x * INV_SQRT_2));
                    let pdf = INV_SQRT_2PI * (-0.5 * x * x).exp();
                    gv * (cdf + x * pdf)
                });
                self.accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = zip_map(g, y, |gv, s| gv * s * (1.0 - s));
                self.accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let ga = zip_map(g, y, |gv, t| gv * (1.0 - t * t));
                self.accumulate(grads, *a, ga);
            }
            Op::Transpose(a) => {
                let s = y.shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                let t = transpose_last2(g.data(), r, c);
                let shape = self.nodes[*a].value.shape();
                self.accumulate(grads, *a, Tensor::new(shape, t).expect("shape"));
            }
            Op::Reshape(a) => {
                let shape = self.nodes[*a].value.shape();
                self.accumulate(grads, *a, g.clone().reshaped(shape).expect("shape"));
            }
            Op::Slice { a, axis, start } => {
                let src = self.nodes[*a].value.shape();
                let outer: usize = src[..*axis].iter().product();
                let inner: usize = src[*axis + 1..].iter().product();
                let len = y.shape()[*axis];
                let mut ga = vec![0.0; self.nodes[*a].value.len()];
                for o in 0..outer {
                    let dst = o * src[*axis] * inner + start * inner;
                    let from = o * len * inner;
                    ga[dst..dst + len * inner].copy_from_slice(&g.data()[from..from + len * inner]);
                }
                self.accumulate(grads, *a, Tensor::new(src, ga).expect("shape"));
            }
            Op::Concat { inputs, axis } => {
                let shape = y.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let mut offset = 0;
                for &inp in inputs {
                    let s = self.nodes[inp].value.shape();
                    let len = s[*axis];
                    if self.rg(inp) {
                        let mut gi = Vec::with_capacity(self.nodes[inp].value.len());
                        for o in 0..outer {
                            let base = o * shape[*axis] * inner + offset * inner;
                            gi.extend_from_slice(&g.data()[base..base + len * inner]);
                        }
                        self.accumulate(grads, inp, Tensor::new(s, gi).expect("shape"));
                    }
                    offset += len;
                }
            }
            Op::Log(a) => {
                let va = &self.nodes[*a].value;
                self.accumulate(grads, *a, zip_map(g, va, |gv, x| gv / x));
            }
            Op::Abs(a) => {
                let va = &self.nodes[*a].value;
                let ga = zip_map(g, va, |gv, x| {
                    if x > 0.0 {
                        gv
                    } else if x < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *a, ga);
            }
            Op::Square(a) => {
                let va = &self.nodes[*a].value;
                self.accumulate(grads, *a, zip_map(g, va, |gv, x| 2.0 * x * gv));
            }
            Op::ClampMax(a, tau) => {
                let va = &self.nodes[*a].value;
                let ga = zip_map(g, va, |gv, x| if x < *tau { gv } else { 0.0 });
                self.accumulate(grads, *a, ga);
            }
            Op::ClampMin(a, floor) => {
                let va = &self.nodes[*a].value;
                let ga = zip_map(g, va, |gv, x| if x > *floor { gv } else { 0.0 });
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let shape = self.nodes[*a].value.shape();
                self.accumulate(grads, *a, Tensor::full(shape, g.item()));
            }
            Op::Mean(a) => {
                let va = &self.nodes[*a].value;
                self.accumulate(grads, *a, Tensor::full(va.shape(), g.item() / va.len() as f64));
            }
        }
    }
}

fn zip_map(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(x.data()).map(|(a, b)| f(*a, *b)).collect();
    Tensor::new(x.shape(), data).expect("shape")
}

fn transpose_last2(src: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for (b, block) in src.chunks(r * c).enumerate() {
        let dst = &mut out[b * r * c..(b + 1) * r * c];
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = block[i * c + j];
            }
        }
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of one row, shared with the plain-arithmetic paths.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}
