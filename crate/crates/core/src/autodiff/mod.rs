//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of one forward pass (the expression
//! graph). Leaves are bound by name; [`Tape::backward`] walks the recording
//! in reverse insertion order, which is a topological order of the graph, so
//! every node's backward rule runs exactly once.
//!
//! Every forward op checks its result for NaN/Inf and reports the op name.

mod broadcast;
pub mod gradcheck;
mod kernels;

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use crate::error::TensorError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use broadcast::Broadcast;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Relu,
    Exp,
    Log,
    Sqrt,
    Abs,
    Square,
    Sigmoid,
    /// `x ln x` with `0 ln 0 := 0`.
    XLogX,
}

impl UnaryKind {
    fn name(self) -> &'static str {
        match self {
            UnaryKind::Relu => "relu",
            UnaryKind::Exp => "exp",
            UnaryKind::Log => "log",
            UnaryKind::Sqrt => "sqrt",
            UnaryKind::Abs => "abs",
            UnaryKind::Square => "square",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::XLogX => "xlogx",
        }
    }
}

#[derive(Debug, Clone)]
struct MatMulSpec {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
    shared_b: bool,
}

enum Op<T> {
    Leaf,
    Binary { kind: BinaryKind, a: Var, b: Var, plan: Broadcast },
    Unary { kind: UnaryKind, a: Var },
    AddScalar { a: Var },
    MulScalar { a: Var, c: T },
    MatMul { a: Var, b: Var, spec: MatMulSpec },
    Softmax { a: Var },
    LogSoftmax { a: Var },
    SumAll { a: Var },
    SumAxis { a: Var, outer: usize, len: usize, inner: usize },
    Permute { a: Var, axes: Vec<usize> },
    Reshape { a: Var },
    Concat { parts: Vec<(Var, usize)> },
    GatherRows { a: Var, index: Rc<[usize]>, rows: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    BceWithLogits { a: Var, target: Rc<Tensor<T>>, weight: Rc<Tensor<T>> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of one forward evaluation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    names: HashMap<String, Var>,
    leaf_names: HashMap<Var, String>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), names: HashMap::new(), leaf_names: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        value: Tensor<T>,
        op: Op<T>,
        requires_grad: bool,
    ) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        Ok(self.push(value, op, requires_grad))
    }

    /// Binds a named input. Names are unique per tape.
    pub fn leaf(
        &mut self,
        name: &str,
        value: Tensor<T>,
        requires_grad: bool,
    ) -> Result<Var, TensorError> {
        if self.names.contains_key(name) {
            return Err(TensorError::DuplicateLeaf(name.to_string()));
        }
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        let v = self.push(value, Op::Leaf, requires_grad);
        self.names.insert(name.to_string(), v);
        self.leaf_names.insert(v, name.to_string());
        Ok(v)
    }

    /// Anonymous input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn input(&self, name: &str) -> Result<Var, TensorError> {
        self.names.get(name).copied().ok_or_else(|| TensorError::UnboundLeaf(name.to_string()))
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

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---- elementwise -------------------------------------------------------

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var, TensorError> {
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        };
        let plan = Broadcast::new(self.shape(a), self.shape(b))
            .ok_or_else(|| mismatch(name, format!("{:?} vs {:?}", self.shape(a), self.shape(b))))?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); plan.numel()];
        let f: fn(T, T) -> T = match kind {
            BinaryKind::Add => |x, y| x + y,
            BinaryKind::Sub => |x, y| x - y,
            BinaryKind::Mul => |x, y| x * y,
            BinaryKind::Div => |x, y| x / y,
        };
        plan.for_each(|o, ia, ib| out[o] = f(av[ia], bv[ib]));
        let value = Tensor::new(plan.out_shape(), out)?;
        let rg = self.rg(&[a, b]);
        self.push_checked(name, value, Op::Binary { kind, a, b, plan }, rg)
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn unary(&mut self, kind: UnaryKind, a: Var) -> Result<Var, TensorError> {
        let f: fn(T) -> T = match kind {
            UnaryKind::Relu => |x| if x > T::zero() { x } else { T::zero() },
            UnaryKind::Exp => |x| x.exp(),
            UnaryKind::Log => |x| x.ln(),
            UnaryKind::Sqrt => |x| x.sqrt(),
            UnaryKind::Abs => |x| x.abs(),
            UnaryKind::Square => |x| x * x,
            UnaryKind::Sigmoid => kernels::sigmoid,
            UnaryKind::XLogX => |x| if x == T::zero() { T::zero() } else { x * x.ln() },
        };
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push_checked(kind.name(), value, Op::Unary { kind, a }, rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(UnaryKind::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(UnaryKind::Log, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(UnaryKind::Sqrt, a)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(UnaryKind::Abs, a)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var, TensorError> {
        let value = self.value(a).map(|x| x + c);
        let rg = self.rg(&[a]);
        self.push_checked("add_scalar", value, Op::AddScalar { a }, rg)
    }

    pub fn mul_scalar(&mut self, a: Var, c: T) -> Result<Var, TensorError> {
        let value = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push_checked("mul_scalar", value, Op::MulScalar { a, c }, rg)
    }

    pub fn div_scalar(&mut self, a: Var, c: T) -> Result<Var, TensorError> {
        if c == T::zero() {
            return Err(TensorError::InvalidArgument {
                op: "div_scalar",
                detail: "division by zero".into(),
            });
        }
        self.mul_scalar(a, T::one() / c)
    }

    // ---- linear algebra ----------------------------------------------------

    /// Batched matrix product over the trailing two axes.
    ///
    /// `a` is `[..., m, k]` (or `[..., k, m]` when `trans_a`). `b` is either a
    /// shared `[k, n]` matrix or carries the same batch axes as `a`
    /// (`[..., n, k]` when `trans_b`).
    pub fn matmul_t(
        &mut self,
        a: Var,
        b: Var,
        trans_a: bool,
        trans_b: bool,
    ) -> Result<Var, TensorError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch("matmul", format!("{sa:?} x {sb:?}: rank < 2")));
        }
        let (ra, ca) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (m, k) = if trans_a { (ca, ra) } else { (ra, ca) };
        let (rb, cb) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let (kb, n) = if trans_b { (cb, rb) } else { (rb, cb) };
        let batch_dims = &sa[..sa.len() - 2];
        let batch: usize = batch_dims.iter().product();
        let shared_b = sb.len() == 2;
        if k != kb || (!shared_b && &sb[..sb.len() - 2] != batch_dims) {
            return Err(mismatch("matmul", format!("{sa:?} x {sb:?}")));
        }
        let spec = MatMulSpec { batch, m, k, n, trans_a, trans_b, shared_b };
        let mut out_shape = batch_dims.to_vec();
        out_shape.extend([m, n]);
        let mut out = vec![T::zero(); batch * m * n];
        kernels::matmul_forward(&spec, self.value(a).data(), self.value(b).data(), &mut out);
        let value = Tensor::new(&out_shape, out)?;
        let rg = self.rg(&[a, b]);
        self.push_checked("matmul", value, Op::MatMul { a, b, spec }, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_t(a, b, false, false)
    }

    /// `x W + b` for `x: [..., d_in]`, `W: [d_in, d_out]`, `b: [d_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        let rows: usize = sx[..sx.len() - 1].iter().product();
        let flat = self.reshape(x, &[rows, sx[sx.len() - 1]])?;
        let y = self.matmul(flat, w)?;
        let y = self.add(y, b)?;
        let mut out_shape = sx[..sx.len() - 1].to_vec();
        out_shape.push(self.shape(y)[1]);
        self.reshape(y, &out_shape)
    }

    // ---- normalizations ----------------------------------------------------

    /// Softmax over the last axis. Masked slots (`false`) get probability
    /// exactly zero, as if their logits were negative infinity.
    pub fn softmax_masked(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var, TensorError> {
        let x = self.value(a);
        if let Some(m) = mask {
            if m.len() != x.numel() {
                return Err(mismatch("softmax", format!("mask {} vs {}", m.len(), x.numel())));
            }
        }
        let width = *x.shape().last().unwrap_or(&1);
        let mut out = vec![T::zero(); x.numel()];
        kernels::softmax_rows(x.data(), mask, width, &mut out)
            .map_err(|_| TensorError::AllMasked { op: "softmax" })?;
        let value = Tensor::new(x.shape(), out)?;
        let rg = self.rg(&[a]);
        self.push_checked("softmax", value, Op::Softmax { a }, rg)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        self.softmax_masked(a, None)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let x = self.value(a);
        let width = *x.shape().last().unwrap_or(&1);
        let mut out = vec![T::zero(); x.numel()];
        for (row, o) in x.data().chunks(width).zip(out.chunks_mut(width)) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
            for (oi, &v) in o.iter_mut().zip(row) {
                *oi = v - lse;
            }
        }
        let value = Tensor::new(x.shape(), out)?;
        let rg = self.rg(&[a]);
        self.push_checked("log_softmax", value, Op::LogSoftmax { a }, rg)
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let d = *xv.shape().last().unwrap_or(&1);
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(mismatch(
                "layer_norm",
                format!("x {:?}, gamma {:?}, beta {:?}", xv.shape(), self.shape(gamma), self.shape(beta)),
            ));
        }
        let (xhat, rstd) = kernels::normalize_rows(xv.data(), d, eps);
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let out: Vec<T> = xhat
            .chunks(d)
            .flat_map(|row| row.iter().zip(g).zip(bt).map(|((&h, &g), &b)| h * g + b))
            .collect();
        let value = Tensor::new(xv.shape(), out)?;
        let rg = self.rg(&[x, gamma, beta]);
        self.push_checked("layer_norm", value, Op::LayerNorm { x, gamma, beta, xhat, rstd }, rg)
    }

    // ---- reductions --------------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push_checked("sum", value, Op::SumAll { a }, rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let n = self.value(a).numel().max(1);
        let s = self.sum(a)?;
        self.div_scalar(s, T::from_usize_lossy(n))
    }

    /// Sum of `a ⊙ weights` where `weights` is a constant (e.g. a 0/1 mask).
    pub fn sum_weighted(&mut self, a: Var, weights: &Tensor<T>) -> Result<Var, TensorError> {
        let w = self.constant(weights.clone());
        let p = self.mul(a, w)?;
        self.sum(p)
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(mismatch("sum_axis", format!("axis {axis} of {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.value(a).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &x[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let value = Tensor::new(&out_shape, out)?;
        let rg = self.rg(&[a]);
        self.push_checked("sum_axis", value, Op::SumAxis { a, outer, len, inner }, rg)
    }

    // ---- layout ------------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape { a }, rg))
    }

    /// Reorders axes: output axis `d` is input axis `axes[d]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes.iter().any(|&ax| ax >= shape.len() || std::mem::replace(&mut seen[ax], true))
        {
            return Err(mismatch("permute", format!("axes {axes:?} for {shape:?}")));
        }
        let (out_shape, data) = kernels::permute(self.value(a).data(), &shape, axes);
        let value = Tensor::new(&out_shape, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Permute { a, axes: axes.to_vec() }, rg))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(mismatch("transpose", format!("rank {r}")));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(a, &axes)
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or_else(|| mismatch("concat", "no inputs".into()))?;
        let lead = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(mismatch("concat", format!("{s:?} vs leading {lead:?}")));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = vec![T::zero(); rows * total];
        let mut col = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                out[r * total + col..r * total + col + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            col += w;
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(&shape, out)?;
        let rg = self.rg(parts);
        let parts = parts.iter().copied().zip(widths).collect();
        Ok(self.push(value, Op::Concat { parts }, rg))
    }

    /// Selects (and possibly repeats) rows along axis 0.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        let rows = *shape.first().ok_or_else(|| mismatch("gather_rows", "scalar input".into()))?;
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(mismatch("gather_rows", format!("row {bad} of {rows}")));
        }
        let width: usize = shape[1..].iter().product();
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(index.len() * width);
        for &i in index {
            out.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        let mut out_shape = shape.clone();
        out_shape[0] = index.len();
        let value = Tensor::new(&out_shape, out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::GatherRows { a, index: index.into(), rows }, rg))
    }

    // ---- losses ------------------------------------------------------------

    /// Elementwise `weight * BCE(sigmoid(a), target)`, computed stably from logits.
    pub fn bce_with_logits(
        &mut self,
        a: Var,
        target: &Tensor<T>,
        weight: &Tensor<T>,
    ) -> Result<Var, TensorError> {
        let x = self.value(a);
        if x.shape() != target.shape() || x.shape() != weight.shape() {
            return Err(mismatch(
                "bce_with_logits",
                format!("{:?} / {:?} / {:?}", x.shape(), target.shape(), weight.shape()),
            ));
        }
        let out: Vec<T> = x
            .data()
            .iter()
            .zip(target.data())
            .zip(weight.data())
            .map(|((&l, &t), &w)| w * kernels::bce_logit(l, t))
            .collect();
        let value = Tensor::new(x.shape(), out)?;
        let rg = self.rg(&[a]);
        let op = Op::BceWithLogits { a, target: Rc::new(target.clone()), weight: Rc::new(weight.clone()) };
        self.push_checked("bce_with_logits", value, op, rg)
    }

    // ---- backward ----------------------------------------------------------

    /// Gradients of a scalar `output` with respect to every leaf that requires one.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>, TensorError> {
        let out = &self.nodes[output.0].value;
        if out.numel() != 1 {
            return Err(TensorError::NonScalarOutput(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::ones(out.shape()));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
        }
        let mut leaves = BTreeMap::new();
        for (v, name) in &self.leaf_names {
            if self.nodes[v.0].requires_grad {
                let g = grads[v.0].take().unwrap_or_else(|| Tensor::zeros(self.shape(*v)));
                leaves.insert(name.clone(), (*v, g));
            }
        }
        let anon = grads
            .into_iter()
            .enumerate()
            .filter_map(|(i, g)| g.map(|g| (Var(i), g)))
            .collect();
        Ok(Gradients { named: leaves, anon })
    }

    /// Gradients of `output` with respect to the named leaves `wrt`.
    pub fn gradient(
        &self,
        output: Var,
        wrt: &[&str],
    ) -> Result<BTreeMap<String, Tensor<T>>, TensorError> {
        for name in wrt {
            let v = self.input(name)?;
            if !self.requires_grad(v) {
                return Err(TensorError::NoGrad(name.to_string()));
            }
        }
        let mut all = self.backward(output)?;
        Ok(wrt
            .iter()
            .map(|name| {
                let g = all.named.remove(*name).map(|(_, g)| g).expect("checked leaf");
                (name.to_string(), g)
            })
            .collect())
    }

    fn backward_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Binary { kind, a, b, plan } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    let ga = slot(grads, *a, self.shape(*a));
                    match kind {
                        BinaryKind::Add | BinaryKind::Sub => plan.for_each(|o, ia, _| ga[ia] += gd[o]),
                        BinaryKind::Mul => plan.for_each(|o, ia, ib| ga[ia] += gd[o] * bv[ib]),
                        BinaryKind::Div => plan.for_each(|o, ia, ib| ga[ia] += gd[o] / bv[ib]),
                    }
                }
                if self.requires_grad(*b) {
                    let gb = slot(grads, *b, self.shape(*b));
                    match kind {
                        BinaryKind::Add => plan.for_each(|o, _, ib| gb[ib] += gd[o]),
                        BinaryKind::Sub => plan.for_each(|o, _, ib| gb[ib] -= gd[o]),
                        BinaryKind::Mul => plan.for_each(|o, ia, ib| gb[ib] += gd[o] * av[ia]),
                        BinaryKind::Div => {
                            plan.for_each(|o, ia, ib| gb[ib] -= gd[o] * av[ia] / (bv[ib] * bv[ib]))
                        }
                    }
                }
            }
            Op::Unary { kind, a } => {
                let x = self.value(*a).data();
                let y = node.value.data();
                let ga = slot(grads, *a, self.shape(*a));
                let two = T::one() + T::one();
                for idx in 0..gd.len() {
                    let d = match kind {
                        UnaryKind::Relu => {
                            if x[idx] > T::zero() {
                                T::one()
                            } else {
                                T::zero()
                            }
                        }
                        UnaryKind::Exp => y[idx],
                        UnaryKind::Log => T::one() / x[idx],
                        UnaryKind::Sqrt => T::one() / (two * y[idx]),
                        UnaryKind::Abs => {
                            if x[idx] > T::zero() {
                                T::one()
                            } else if x[idx] < T::zero() {
                                -T::one()
                            } else {
                                T::zero()
                            }
                        }
                        UnaryKind::Square => two * x[idx],
                        UnaryKind::Sigmoid => y[idx] * (T::one() - y[idx]),
                        UnaryKind::XLogX => {
                            if x[idx] == T::zero() {
                                T::zero()
                            } else {
                                x[idx].ln() + T::one()
                            }
                        }
                    };
                    ga[idx] += gd[idx] * d;
                }
            }
            Op::AddScalar { a } => {
                let ga = slot(grads, *a, self.shape(*a));
                ga.iter_mut().zip(gd).for_each(|(d, &s)| *d += s);
            }
            Op::MulScalar { a, c } => {
                let ga = slot(grads, *a, self.shape(*a));
                ga.iter_mut().zip(gd).for_each(|(d, &s)| *d += s * *c);
            }
            Op::MatMul { a, b, spec } => {
                if self.requires_grad(*a) {
                    let bv = self.value(*b).data();
                    let ga = slot(grads, *a, self.shape(*a));
                    kernels::matmul_backward_a(spec, gd, bv, ga);
                }
                if self.requires_grad(*b) {
                    let av = self.value(*a).data();
                    let gb = slot(grads, *b, self.shape(*b));
                    kernels::matmul_backward_b(spec, gd, av, gb);
                }
            }
            Op::Softmax { a } => {
                let y = node.value.data();
                let width = *node.value.shape().last().unwrap_or(&1);
                let ga = slot(grads, *a, self.shape(*a));
                for ((yr, gr), dr) in y.chunks(width).zip(gd.chunks(width)).zip(ga.chunks_mut(width)) {
                    let dot: T = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                    for ((d, &y), &g) in dr.iter_mut().zip(yr).zip(gr) {
                        *d += y * (g - dot);
                    }
                }
            }
            Op::LogSoftmax { a } => {
                let y = node.value.data();
                let width = *node.value.shape().last().unwrap_or(&1);
                let ga = slot(grads, *a, self.shape(*a));
                for ((yr, gr), dr) in y.chunks(width).zip(gd.chunks(width)).zip(ga.chunks_mut(width)) {
                    let total: T = gr.iter().copied().sum();
                    for ((d, &y), &g) in dr.iter_mut().zip(yr).zip(gr) {
                        *d += g - y.exp() * total;
                    }
                }
            }
            Op::SumAll { a } => {
                let ga = slot(grads, *a, self.shape(*a));
                let s = gd[0];
                ga.iter_mut().for_each(|d| *d += s);
            }
            Op::SumAxis { a, outer, len, inner } => {
                let ga = slot(grads, *a, self.shape(*a));
                for o in 0..*outer {
                    let src = &gd[o * inner..(o + 1) * inner];
                    for l in 0..*len {
                        let base = (o * len + l) * inner;
                        for (d, &s) in ga[base..base + inner].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Permute { a, axes } => {
                let mut inv = vec![0; axes.len()];
                for (d, &ax) in axes.iter().enumerate() {
                    inv[ax] = d;
                }
                let (_, back) = kernels::permute(gd, g.shape(), &inv);
                let ga = slot(grads, *a, self.shape(*a));
                ga.iter_mut().zip(back).for_each(|(d, s)| *d += s);
            }
            Op::Reshape { a } => {
                let ga = slot(grads, *a, self.shape(*a));
                ga.iter_mut().zip(gd).for_each(|(d, &s)| *d += s);
            }
            Op::Concat { parts } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let rows = gd.len() / total.max(1);
                let mut col = 0;
                for &(p, w) in parts {
                    if self.requires_grad(p) {
                        let gp = slot(grads, p, self.shape(p));
                        for r in 0..rows {
                            for (d, &s) in gp[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(&gd[r * total + col..r * total + col + w])
                            {
                                *d += s;
                            }
                        }
                    }
                    col += w;
                }
            }
            Op::GatherRows { a, index, rows } => {
                let width = self.value(*a).numel() / (*rows).max(1);
                let ga = slot(grads, *a, self.shape(*a));
                for (k, &r) in index.iter().enumerate() {
                    for (d, &s) in ga[r * width..(r + 1) * width].iter_mut().zip(&gd[k * width..(k + 1) * width]) {
                        *d += s;
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = self.value(*gamma).numel();
                let gam = self.value(*gamma).data();
                if self.requires_grad(*gamma) {
                    let gg = slot(grads, *gamma, &[d]);
                    for (gr, hr) in gd.chunks(d).zip(xhat.chunks(d)) {
                        for ((acc, &g), &h) in gg.iter_mut().zip(gr).zip(hr) {
                            *acc += g * h;
                        }
                    }
                }
                if self.requires_grad(*beta) {
                    let gb = slot(grads, *beta, &[d]);
                    for gr in gd.chunks(d) {
                        for (acc, &g) in gb.iter_mut().zip(gr) {
                            *acc += g;
                        }
                    }
                }
                if self.requires_grad(*x) {
                    let gx = slot(grads, *x, self.shape(*x));
                    kernels::layer_norm_backward(gd, xhat, rstd, gam, d, gx);
                }
            }
            Op::BceWithLogits { a, target, weight } => {
                let x = self.value(*a).data();
                let ga = slot(grads, *a, self.shape(*a));
                for idx in 0..gd.len() {
                    let p = kernels::sigmoid(x[idx]);
                    ga[idx] += gd[idx] * weight.data()[idx] * (p - target.data()[idx]);
                }
            }
        }
    }
}

/// Gradient buffer of `v`, allocated on first use.
fn slot<'g, T: Scalar>(
    grads: &'g mut [Option<Tensor<T>>],
    v: Var,
    shape: &[usize],
) -> &'g mut [T] {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape)).data_mut()
}

/// Result of a backward pass.
pub struct Gradients<T> {
    named: BTreeMap<String, (Var, Tensor<T>)>,
    anon: HashMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.named.values().find(|(var, _)| *var == v).map(|(_, g)| g).or_else(|| self.anon.get(&v))
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.named.get(name).map(|(_, g)| g)
    }

    /// Named leaf gradients in name order.
    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.named.iter().map(|(k, (_, g))| (k.as_str(), g))
    }

    pub fn into_named(self) -> BTreeMap<String, Tensor<T>> {
        self.named.into_iter().map(|(k, (_, g))| (k, g)).collect()
    }
}

#[cfg(test)]
mod tests;
