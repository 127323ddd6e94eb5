//! Reverse-mode differentiation over a dynamically recorded graph.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the nodes in reverse creation order, which is a valid topological
//! order because inputs always exist before the nodes that consume them.

use std::collections::HashMap;

use rand::Rng;

use super::params::ParamStore;
use super::tensor::{gemm, Tensor};
use super::DiffError;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Layer-norm epsilon.
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    Param { store: usize, id: usize },
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Silu(Var),
    LayerNorm {
        x: Var,
        scale: Var,
        shift: Var,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    SliceRows(Var, usize),
    BlendRows {
        x: Var,
        init: Var,
        flags: Vec<bool>,
    },
    GroupSoftmax(Var, usize),
    GroupLogSoftmax(Var, usize),
    StraightThrough(Var),
    KlCategorical {
        p: Var,
        q: Var,
        classes: usize,
        p_probs: Vec<f64>,
        q_probs: Vec<f64>,
        log_ratio: Vec<f64>,
    },
    ClampMin(Var, f64),
    Square(Var),
    SumAll(Var),
    MeanAll(Var),
    RowSum(Var),
    MulConst(Var, Tensor),
    Gather(Var, Vec<usize>),
    BceWithLogits(Var, Tensor),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A recorded computation. Build one per forward pass.
pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
    /// Leaves already registered per (store address, parameter id).
    param_vars: HashMap<(usize, usize), Var>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    /// `(node, store address, parameter id)`.
    param_nodes: Vec<(usize, usize, usize)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradients for every parameter in `store`, zeros where a parameter
    /// did not take part in the computation. Parameters registered more
    /// than once have their contributions summed.
    pub fn for_params(&self, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        let addr = store_addr(store);
        for &(node, sid, pid) in &self.param_nodes {
            if sid != addr {
                continue;
            }
            if let Some(g) = &self.grads[node] {
                out[pid].add_assign(g);
            }
        }
        out
    }
}

fn store_addr(store: &ParamStore) -> usize {
    store as *const ParamStore as usize
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn group_softmax_into(x: &[f64], classes: usize, out: &mut [f64]) {
    for (src, dst) in x.chunks(classes).zip(out.chunks_mut(classes)) {
        let max = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d /= total;
        }
    }
}

fn group_log_softmax_into(x: &[f64], classes: usize, out: &mut [f64]) {
    for (src, dst) in x.chunks(classes).zip(out.chunks_mut(classes)) {
        let max = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + src.iter().map(|&s| (s - max).exp()).sum::<f64>().ln();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = s - lse;
        }
    }
}

/// Softmax over consecutive groups of `classes` entries.
pub fn softmax_groups(x: &Tensor, classes: usize) -> Tensor {
    let mut out = vec![0.0; x.len()];
    group_softmax_into(x.data(), classes, &mut out);
    Tensor::from_rows(x.rows(), x.cols(), out)
}

pub fn log_softmax_groups(x: &Tensor, classes: usize) -> Tensor {
    let mut out = vec![0.0; x.len()];
    group_log_softmax_into(x.data(), classes, &mut out);
    Tensor::from_rows(x.rows(), x.cols(), out)
}

/// Draws one class per group by inverse-CDF on `probs`.
pub fn sample_groups<R: Rng + ?Sized>(probs: &Tensor, classes: usize, rng: &mut R) -> Tensor {
    let mut out = vec![0.0; probs.len()];
    for (p, o) in probs.data().chunks(classes).zip(out.chunks_mut(classes)) {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = classes - 1;
        for (i, &pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                pick = i;
                break;
            }
        }
        o[pick] = 1.0;
    }
    Tensor::from_rows(probs.rows(), probs.cols(), out)
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            param_vars: HashMap::new(),
        }
    }

    /// A graph that records values only; `backward` yields no gradients.
    pub fn no_grad() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: false,
            param_vars: HashMap::new(),
        }
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

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, DiffError> {
        if !value.is_finite() {
            return Err(DiffError::NonFinite(op_name(&op).to_string()));
        }
        let needs_grad = self.grad_enabled && inputs.iter().any(|&v| self.needs(v));
        let op = if needs_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; receives no gradient contribution downstream.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that collects a gradient but is not a stored parameter.
    pub fn input(&mut self, value: Tensor) -> Var {
        let needs_grad = self.grad_enabled;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers parameter `id` of `store` as a leaf. Repeated calls with
    /// the same store and id return the same node, so a recurrent unroll
    /// copies each weight once. The store must not be moved or mutated
    /// while the graph is alive.
    pub fn param(&mut self, store: &ParamStore, id: usize) -> Var {
        let key = (store_addr(store), id);
        if let Some(&v) = self.param_vars.get(&key) {
            return v;
        }
        let needs_grad = self.grad_enabled;
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: if needs_grad {
                Op::Param { store: key.0, id }
            } else {
                Op::Leaf
            },
            needs_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(key, v);
        v
    }

    /// Stop-gradient copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(DiffError::Shape(format!(
                "matmul {}x{} · {}x{}",
                va.rows(),
                va.cols(),
                vb.rows(),
                vb.cols()
            )));
        }
        let (m, k, n) = (va.rows(), va.cols(), vb.cols());
        let mut out = vec![0.0; m * n];
        gemm(va.data(), vb.data(), &mut out, m, k, n, false, false, false);
        self.push(Tensor::from_rows(m, n, out), Op::MatMul(a, b), &[a, b])
    }

    /// `x + b` with `b` a `[1, cols]` row broadcast over the rows of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, DiffError> {
        let (vx, vb) = (self.value(x), self.value(b));
        if vb.rows() != 1 || vb.cols() != vx.cols() {
            return Err(DiffError::Shape(format!(
                "bias {:?} for input {:?}",
                vb.shape(),
                vx.shape()
            )));
        }
        let c = vx.cols();
        let mut out = vx.data().to_vec();
        for row in out.chunks_mut(c) {
            for (o, &bb) in row.iter_mut().zip(vb.data()) {
                *o += bb;
            }
        }
        self.push(
            Tensor::from_rows(vx.rows(), c, out),
            Op::AddBias(x, b),
            &[x, b],
        )
    }

    /// `x·W + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, DiffError> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    fn check_same(&self, a: Var, b: Var, what: &str) -> Result<(), DiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.same_shape(vb) {
            return Err(DiffError::Shape(format!(
                "{what}: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.check_same(a, b, "add")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.check_same(a, b, "sub")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.check_same(a, b, "mul")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, DiffError> {
        let v = self.value(x).map(|a| a * factor);
        self.push(v, Op::Scale(x, factor), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, offset: f64) -> Result<Var, DiffError> {
        let v = self.value(x).map(|a| a + offset);
        self.push(v, Op::AddScalar(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, DiffError> {
        let v = self.value(x).map(sigmoid);
        self.push(v, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, DiffError> {
        let v = self.value(x).map(f64::tanh);
        self.push(v, Op::Tanh(x), &[x])
    }

    pub fn silu(&mut self, x: Var) -> Result<Var, DiffError> {
        let v = self.value(x).map(|a| a * sigmoid(a));
        self.push(v, Op::Silu(x), &[x])
    }

    /// Row-wise normalization to zero mean and unit variance, then
    /// `scale` and `shift` (both `[1, cols]`).
    pub fn layer_norm(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var, DiffError> {
        let vx = self.value(x);
        let c = vx.cols();
        if c == 0 {
            return Err(DiffError::Shape("layer_norm over zero-length rows".into()));
        }
        let (vs, vh) = (self.value(scale), self.value(shift));
        if vs.len() != c || vh.len() != c {
            return Err(DiffError::Shape(format!(
                "layer_norm scale/shift width {} / {} for {} columns",
                vs.len(),
                vh.len(),
                c
            )));
        }
        let mut normed = vec![0.0; vx.len()];
        let mut inv_std = Vec::with_capacity(vx.rows());
        let mut out = vec![0.0; vx.len()];
        for (r, row) in vx.data().chunks(c).enumerate() {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            for j in 0..c {
                let n = (row[j] - mean) * inv;
                normed[r * c + j] = n;
                out[r * c + j] = n * vs.data()[j] + vh.data()[j];
            }
        }
        let value = Tensor::from_rows(vx.rows(), c, out);
        self.push(
            value,
            Op::LayerNorm {
                x,
                scale,
                shift,
                normed,
                inv_std,
            },
            &[x, scale, shift],
        )
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(DiffError::Shape("concat row counts differ".into()));
        }
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::hstack(&tensors);
        self.push(v, Op::Concat(parts.to_vec()), parts)
    }

    /// Row-wise concatenation.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let cols = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return Err(DiffError::Shape("stack_rows column counts differ".into()));
        }
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::vstack(&tensors);
        self.push(v, Op::StackRows(parts.to_vec()), parts)
    }

    /// Rows `start..start + len` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let t = self.value(x);
        if start + len > t.rows() {
            return Err(DiffError::Shape(format!(
                "slice_rows {start}..{} of {} rows",
                start + len,
                t.rows()
            )));
        }
        let c = t.cols();
        let v = Tensor::from_rows(len, c, t.data()[start * c..(start + len) * c].to_vec());
        self.push(v, Op::SliceRows(x, start), &[x])
    }

    /// Row `i` of the result is `init` (a `[1, cols]` row) where
    /// `flags[i]`, else row `i` of `x`.
    pub fn blend_rows(&mut self, x: Var, init: Var, flags: &[bool]) -> Result<Var, DiffError> {
        let (vx, vi) = (self.value(x), self.value(init));
        if vi.rows() != 1 || vi.cols() != vx.cols() || flags.len() != vx.rows() {
            return Err(DiffError::Shape(format!(
                "blend_rows {:?} with init {:?} and {} flags",
                vx.shape(),
                vi.shape(),
                flags.len()
            )));
        }
        let c = vx.cols();
        let mut out = vx.data().to_vec();
        for (r, &f) in flags.iter().enumerate() {
            if f {
                out[r * c..(r + 1) * c].copy_from_slice(vi.data());
            }
        }
        let v = Tensor::from_rows(vx.rows(), c, out);
        self.push(
            v,
            Op::BlendRows {
                x,
                init,
                flags: flags.to_vec(),
            },
            &[x, init],
        )
    }

    pub fn softmax_groups(&mut self, x: Var, classes: usize) -> Result<Var, DiffError> {
        self.check_groups(x, classes)?;
        let v = softmax_groups(self.value(x), classes);
        self.push(v, Op::GroupSoftmax(x, classes), &[x])
    }

    pub fn log_softmax_groups(&mut self, x: Var, classes: usize) -> Result<Var, DiffError> {
        self.check_groups(x, classes)?;
        let v = log_softmax_groups(self.value(x), classes);
        self.push(v, Op::GroupLogSoftmax(x, classes), &[x])
    }

    fn check_groups(&self, x: Var, classes: usize) -> Result<(), DiffError> {
        if classes == 0 || self.value(x).cols() % classes != 0 {
            return Err(DiffError::Shape(format!(
                "{} columns are not a multiple of {} classes",
                self.value(x).cols(),
                classes
            )));
        }
        Ok(())
    }

    /// Value `sample`, gradient routed to `probs` unchanged.
    pub fn straight_through(&mut self, probs: Var, sample: Tensor) -> Result<Var, DiffError> {
        if !sample.same_shape(self.value(probs)) {
            return Err(DiffError::Shape("straight-through sample shape".into()));
        }
        self.push(sample, Op::StraightThrough(probs), &[probs])
    }

    /// One-hot categorical draw per group of `logits` with straight-through
    /// gradients.
    pub fn categorical_sample_st<R: Rng + ?Sized>(
        &mut self,
        logits: Var,
        classes: usize,
        rng: &mut R,
    ) -> Result<Var, DiffError> {
        let probs = self.softmax_groups(logits, classes)?;
        let sample = sample_groups(self.value(probs), classes, rng);
        self.straight_through(probs, sample)
    }

    /// Per-row sum over groups of KL(softmax(p) ‖ softmax(q)) in nats.
    pub fn kl_categorical(&mut self, p: Var, q: Var, classes: usize) -> Result<Var, DiffError> {
        self.check_same(p, q, "kl_categorical")?;
        self.check_groups(p, classes)?;
        let (vp, vq) = (self.value(p), self.value(q));
        let rows = vp.rows();
        let cols = vp.cols();
        let lp = log_softmax_groups(vp, classes).into_data();
        let lq = log_softmax_groups(vq, classes).into_data();
        let p_probs: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
        let q_probs: Vec<f64> = lq.iter().map(|v| v.exp()).collect();
        let log_ratio: Vec<f64> = lp.iter().zip(&lq).map(|(a, b)| a - b).collect();
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let mut total = 0.0;
            for j in 0..cols {
                let i = r * cols + j;
                total += p_probs[i] * log_ratio[i];
            }
            // Rounding can leave tiny negatives for identical inputs.
            out[r] = total.max(0.0);
        }
        self.push(
            Tensor::column(out),
            Op::KlCategorical {
                p,
                q,
                classes,
                p_probs,
                q_probs,
                log_ratio,
            },
            &[p, q],
        )
    }

    /// `max(x, floor)` elementwise; no gradient where clamped.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Result<Var, DiffError> {
        let v = self.value(x).map(|a| a.max(floor));
        self.push(v, Op::ClampMin(x, floor), &[x])
    }

    pub fn square(&mut self, x: Var) -> Result<Var, DiffError> {
        let v = self.value(x).map(|a| a * a);
        self.push(v, Op::Square(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, DiffError> {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::SumAll(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, DiffError> {
        let t = self.value(x);
        let n = t.len().max(1) as f64;
        let v = Tensor::scalar(t.sum() / n);
        self.push(v, Op::MeanAll(x), &[x])
    }

    /// `[rows, cols] → [rows, 1]`.
    pub fn row_sum(&mut self, x: Var) -> Result<Var, DiffError> {
        let t = self.value(x);
        let c = t.cols();
        let out: Vec<f64> = t.data().chunks(c.max(1)).map(|r| r.iter().sum()).collect();
        self.push(Tensor::column(out), Op::RowSum(x), &[x])
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var, DiffError> {
        if !c.same_shape(self.value(x)) {
            return Err(DiffError::Shape(format!(
                "mul_const {:?} vs {:?}",
                self.value(x).shape(),
                c.shape()
            )));
        }
        let v = self.value(x).zip_map(&c, |a, b| a * b);
        self.push(v, Op::MulConst(x, c), &[x])
    }

    /// Picks column `indices[r]` from each row: `[rows, cols] → [rows, 1]`.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var, DiffError> {
        let t = self.value(x);
        if indices.len() != t.rows() || indices.iter().any(|&i| i >= t.cols()) {
            return Err(DiffError::Shape("gather indices out of range".into()));
        }
        let out: Vec<f64> = indices
            .iter()
            .enumerate()
            .map(|(r, &i)| t.get(r, i))
            .collect();
        self.push(Tensor::column(out), Op::Gather(x, indices.to_vec()), &[x])
    }

    /// Elementwise binary cross-entropy between `sigmoid(logits)` and
    /// `targets` in [0, 1].
    pub fn bce_with_logits(&mut self, logits: Var, targets: Tensor) -> Result<Var, DiffError> {
        if !targets.same_shape(self.value(logits)) {
            return Err(DiffError::Shape("bce targets shape".into()));
        }
        let v = self.value(logits).zip_map(&targets, |x, t| {
            x.max(0.0) - x * t + (-x.abs()).exp().ln_1p()
        });
        self.push(v, Op::BceWithLogits(logits, targets), &[logits])
    }

    /// Entropy of each row's categorical distribution given logits over
    /// groups of `classes`: `[rows, cols] → [rows, 1]`.
    pub fn entropy_groups(&mut self, logits: Var, classes: usize) -> Result<Var, DiffError> {
        let p = self.softmax_groups(logits, classes)?;
        let lp = self.log_softmax_groups(logits, classes)?;
        let plp = self.mul(p, lp)?;
        let s = self.row_sum(plp)?;
        self.scale(s, -1.0)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, root: Var) -> Result<Gradients, DiffError> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(DiffError::Shape(format!(
                "backward needs a scalar root, got {:?}",
                rv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        let mut param_nodes = Vec::new();
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if let Op::Param { store, id } = node.op {
                param_nodes.push((idx, store, id));
            }
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        grads.resize_with(self.nodes.len(), || None);
        Ok(Gradients { grads, param_nodes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param { .. } => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(g.data(), vb.data(), &mut da, m, n, k, false, true, false);
                    self.accumulate(grads, *a, Tensor::from_rows(m, k, da));
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(va.data(), g.data(), &mut db, k, m, n, true, false, false);
                    self.accumulate(grads, *b, Tensor::from_rows(k, n, db));
                }
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, g.clone());
                if self.needs(*b) {
                    let c = g.cols();
                    let mut db = vec![0.0; c];
                    for row in g.data().chunks(c) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *b, Tensor::from_rows(1, c, db));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |d, v| d * v));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |d, v| d * v));
                }
            }
            Op::Scale(x, f) => {
                let f = *f;
                self.accumulate(grads, *x, g.map(|d| d * f));
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, g.clone()),
            Op::Sigmoid(x) => {
                self.accumulate(grads, *x, g.zip_map(y, |d, s| d * s * (1.0 - s)));
            }
            Op::Tanh(x) => {
                self.accumulate(grads, *x, g.zip_map(y, |d, t| d * (1.0 - t * t)));
            }
            Op::Silu(x) => {
                let dx = g.zip_map(self.value(*x), |d, a| {
                    let s = sigmoid(a);
                    d * s * (1.0 + a * (1.0 - s))
                });
                self.accumulate(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                scale,
                shift,
                normed,
                inv_std,
            } => {
                let c = g.cols();
                let rows = g.rows();
                let vs = self.value(*scale).data();
                if self.needs(*scale) {
                    let mut ds = vec![0.0; c];
                    for r in 0..rows {
                        for j in 0..c {
                            ds[j] += g.data()[r * c + j] * normed[r * c + j];
                        }
                    }
                    self.accumulate(grads, *scale, Tensor::from_rows(1, c, ds));
                }
                if self.needs(*shift) {
                    let mut dh = vec![0.0; c];
                    for row in g.data().chunks(c) {
                        for (d, &v) in dh.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *shift, Tensor::from_rows(1, c, dh));
                }
                if self.needs(*x) {
                    let mut dx = vec![0.0; rows * c];
                    let cf = c as f64;
                    for r in 0..rows {
                        let gr = &g.data()[r * c..(r + 1) * c];
                        let nr = &normed[r * c..(r + 1) * c];
                        let mut sum_dn = 0.0;
                        let mut sum_dn_n = 0.0;
                        for j in 0..c {
                            let dn = gr[j] * vs[j];
                            sum_dn += dn;
                            sum_dn_n += dn * nr[j];
                        }
                        let inv = inv_std[r];
                        for j in 0..c {
                            let dn = gr[j] * vs[j];
                            dx[r * c + j] = inv / cf * (cf * dn - sum_dn - nr[j] * sum_dn_n);
                        }
                    }
                    self.accumulate(grads, *x, Tensor::from_rows(rows, c, dx));
                }
            }
            Op::Concat(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.needs(*p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        self.accumulate(grads, *p, Tensor::from_rows(rows, w, d));
                    }
                    offset += w;
                }
            }
            Op::StackRows(parts) => {
                let c = g.cols();
                let mut offset = 0;
                for p in parts {
                    let r = self.value(*p).rows();
                    if self.needs(*p) {
                        let d = g.data()[offset * c..(offset + r) * c].to_vec();
                        self.accumulate(grads, *p, Tensor::from_rows(r, c, d));
                    }
                    offset += r;
                }
            }
            Op::SliceRows(x, start) => {
                let t = self.value(*x);
                let c = t.cols();
                let mut dx = Tensor::zeros(t.rows(), c);
                dx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, *x, dx);
            }
            Op::BlendRows { x, init, flags } => {
                let c = g.cols();
                if self.needs(*x) {
                    let mut dx = g.data().to_vec();
                    for (r, &f) in flags.iter().enumerate() {
                        if f {
                            dx[r * c..(r + 1) * c].iter_mut().for_each(|v| *v = 0.0);
                        }
                    }
                    self.accumulate(grads, *x, Tensor::from_rows(g.rows(), c, dx));
                }
                if self.needs(*init) {
                    let mut di = vec![0.0; c];
                    for (r, &f) in flags.iter().enumerate() {
                        if f {
                            for (d, &v) in di.iter_mut().zip(&g.data()[r * c..(r + 1) * c]) {
                                *d += v;
                            }
                        }
                    }
                    self.accumulate(grads, *init, Tensor::from_rows(1, c, di));
                }
            }
            Op::GroupSoftmax(x, classes) => {
                let mut dx = vec![0.0; g.len()];
                for ((gp, pp), dp) in g
                    .data()
                    .chunks(*classes)
                    .zip(y.data().chunks(*classes))
                    .zip(dx.chunks_mut(*classes))
                {
                    let dot: f64 = gp.iter().zip(pp).map(|(a, b)| a * b).sum();
                    for j in 0..*classes {
                        dp[j] = pp[j] * (gp[j] - dot);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_rows(g.rows(), g.cols(), dx));
            }
            Op::GroupLogSoftmax(x, classes) => {
                let mut dx = vec![0.0; g.len()];
                for ((gp, lp), dp) in g
                    .data()
                    .chunks(*classes)
                    .zip(y.data().chunks(*classes))
                    .zip(dx.chunks_mut(*classes))
                {
                    let total: f64 = gp.iter().sum();
                    for j in 0..*classes {
                        dp[j] = gp[j] - lp[j].exp() * total;
                    }
                }
                self.accumulate(grads, *x, Tensor::from_rows(g.rows(), g.cols(), dx));
            }
            Op::StraightThrough(probs) => self.accumulate(grads, *probs, g.clone()),
            Op::KlCategorical {
                p,
                q,
                classes,
                p_probs,
                q_probs,
                log_ratio,
            } => {
                let rows = g.rows();
                let cols = self.value(*p).cols();
                if self.needs(*p) {
                    let mut dp = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let up = g.data()[r];
                        for grp in (0..cols).step_by(*classes) {
                            let base = r * cols + grp;
                            let kl: f64 = (0..*classes)
                                .map(|j| p_probs[base + j] * log_ratio[base + j])
                                .sum();
                            for j in 0..*classes {
                                dp[base + j] = up * p_probs[base + j] * (log_ratio[base + j] - kl);
                            }
                        }
                    }
                    self.accumulate(grads, *p, Tensor::from_rows(rows, cols, dp));
                }
                if self.needs(*q) {
                    let mut dq = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let up = g.data()[r];
                        for j in 0..cols {
                            let i = r * cols + j;
                            dq[i] = up * (q_probs[i] - p_probs[i]);
                        }
                    }
                    self.accumulate(grads, *q, Tensor::from_rows(rows, cols, dq));
                }
            }
            Op::ClampMin(x, floor) => {
                let floor = *floor;
                let dx = g.zip_map(self.value(*x), |d, a| if a > floor { d } else { 0.0 });
                self.accumulate(grads, *x, dx);
            }
            Op::Square(x) => {
                self.accumulate(grads, *x, g.zip_map(self.value(*x), |d, a| 2.0 * a * d));
            }
            Op::SumAll(x) => {
                let t = self.value(*x);
                self.accumulate(grads, *x, Tensor::full(t.rows(), t.cols(), g.item()));
            }
            Op::MeanAll(x) => {
                let t = self.value(*x);
                let n = t.len().max(1) as f64;
                self.accumulate(grads, *x, Tensor::full(t.rows(), t.cols(), g.item() / n));
            }
            Op::RowSum(x) => {
                let t = self.value(*x);
                let c = t.cols();
                let mut dx = vec![0.0; t.len()];
                for (r, row) in dx.chunks_mut(c.max(1)).enumerate() {
                    row.iter_mut().for_each(|v| *v = g.data()[r]);
                }
                self.accumulate(grads, *x, Tensor::from_rows(t.rows(), c, dx));
            }
            Op::MulConst(x, c) => self.accumulate(grads, *x, g.zip_map(c, |d, v| d * v)),
            Op::Gather(x, indices) => {
                let t = self.value(*x);
                let mut dx = Tensor::zeros(t.rows(), t.cols());
                let c = t.cols();
                for (r, &i) in indices.iter().enumerate() {
                    dx.data_mut()[r * c + i] = g.data()[r];
                }
                self.accumulate(grads, *x, dx);
            }
            Op::BceWithLogits(x, targets) => {
                let t = self.value(*x);
                let mut dx = vec![0.0; t.len()];
                for i in 0..t.len() {
                    dx[i] = g.data()[i] * (sigmoid(t.data()[i]) - targets.data()[i]);
                }
                self.accumulate(grads, *x, Tensor::from_rows(t.rows(), t.cols(), dx));
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Param { .. } => "param",
        Op::MatMul(..) => "matmul",
        Op::AddBias(..) => "add_bias",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::AddScalar(..) => "add_scalar",
        Op::Sigmoid(..) => "sigmoid",
        Op::Tanh(..) => "tanh",
        Op::Silu(..) => "silu",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Concat(..) => "concat",
        Op::StackRows(..) => "stack_rows",
        Op::SliceRows(..) => "slice_rows",
        Op::BlendRows { .. } => "blend_rows",
        Op::GroupSoftmax(..) => "softmax",
        Op::GroupLogSoftmax(..) => "log_softmax",
        Op::StraightThrough(..) => "straight_through",
        Op::KlCategorical { .. } => "kl_categorical",
        Op::ClampMin(..) => "clamp_min",
        Op::Square(..) => "square",
        Op::SumAll(..) => "sum",
        Op::MeanAll(..) => "mean",
        Op::RowSum(..) => "row_sum",
        Op::MulConst(..) => "mul_const",
        Op::Gather(..) => "gather",
        Op::BceWithLogits(..) => "bce_with_logits",
    }
}
