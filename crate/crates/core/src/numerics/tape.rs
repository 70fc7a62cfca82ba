//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every primitive in execution order, so node ids are
//! already a topological order and backward is a single reverse sweep.
//! Operands are referenced by [`Var`] handles into the tape arena.

use rand::Rng;

use super::tensor::{check_finite, numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Primitive operation kinds, used in diagnostics and fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Mul,
    Scale,
    MatMul,
    Permute,
    Reshape,
    Softmax,
    LayerNorm,
    Gelu,
    Dropout,
    Sum,
    CrossEntropy,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::MatMul => "matmul",
            OpKind::Permute => "permute",
            OpKind::Reshape => "reshape",
            OpKind::Softmax => "softmax",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Gelu => "gelu",
            OpKind::Dropout => "dropout",
            OpKind::Sum => "sum",
            OpKind::CrossEntropy => "cross_entropy",
        }
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gelu(Var),
    Dropout(Var, Vec<T>),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Permute(..) => OpKind::Permute,
            Op::Reshape(..) => OpKind::Reshape,
            Op::Softmax(..) => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Gelu(..) => OpKind::Gelu,
            Op::Dropout(..) => OpKind::Dropout,
            Op::Sum(..) => OpKind::Sum,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Computation record for one forward/backward pass.
///
/// Single-threaded. Build a fresh tape per step; dropping it frees every
/// intermediate.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    fault: Option<(OpKind, T)>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For each flat index of `out`, the flat offset obtained by walking with
/// per-axis `strides`.
fn strided_map(out: &[usize], strides: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let n = numel(out);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut pos = 0usize;
    for _ in 0..n {
        map.push(pos);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            pos += strides[ax];
            if idx[ax] < out[ax] {
                break;
            }
            pos -= strides[ax] * out[ax];
            idx[ax] = 0;
        }
    }
    map
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for ax in (0..shape.len().saturating_sub(1)).rev() {
        strides[ax] = strides[ax + 1] * shape[ax + 1];
    }
    strides
}

/// Maps each flat index of `out` to the flat index of the right-aligned,
/// broadcast `input`.
fn broadcast_map(out: &[usize], input: &[usize]) -> Vec<usize> {
    let offset = out.len() - input.len();
    let in_strides = row_major_strides(input);
    let mut strides = vec![0; out.len()];
    for (ax, &d) in input.iter().enumerate() {
        if d != 1 {
            strides[ax + offset] = in_strides[ax];
        }
    }
    strided_map(out, &strides)
}

/// out[m×n] += a[m×k] · b[k×n]
fn gemm<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[m×k] += g[m×n] · b[k×n]ᵀ
fn gemm_bt<T: Scalar>(g: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&x, &y) in grow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * k + p] += acc;
        }
    }
}

/// out[k×n] += a[m×k]ᵀ · g[m×n]
fn gemm_at<T: Scalar>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

struct MatMulDims {
    batch: Vec<usize>,
    a_map: Vec<usize>,
    b_map: Vec<usize>,
    m: usize,
    k: usize,
    n: usize,
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<MatMulDims> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::dim(
            "matmul",
            format!("operands must have rank >= 2, got {a:?} and {b:?}"),
        ));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    let a_batch = &a[..a.len() - 2];
    let b_batch = &b[..b.len() - 2];
    let batch = match broadcast_shape(a_batch, b_batch) {
        Some(batch) if k == k2 => batch,
        _ => {
            return Err(Error::dim(
                "matmul",
                format!("cannot multiply {a:?} by {b:?}"),
            ))
        }
    };
    Ok(MatMulDims {
        a_map: broadcast_map(&batch, a_batch),
        b_map: broadcast_map(&batch, b_batch),
        batch,
        m,
        k,
        n,
    })
}

const GELU_COEFF: f64 = 0.044715;
// sqrt(2 / pi)
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Scales every gradient contribution produced by ops of `kind` by
    /// `factor` during backward. Test hook for checking that gradient
    /// verification actually catches a broken rule.
    pub fn inject_backward_fault(&mut self, kind: OpKind, factor: T) {
        self.fault = Some((kind, factor));
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>) -> Result<Var> {
        check_finite(op.kind().name(), &value)?;
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Add(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => {
                self.needs(*a) || self.needs(*b)
            }
            Op::Scale(a, _)
            | Op::Permute(a, _)
            | Op::Reshape(a)
            | Op::Softmax(a)
            | Op::Gelu(a)
            | Op::Dropout(a, _)
            | Op::Sum(a) => self.needs(*a),
            Op::LayerNorm { x, gain, bias, .. } => {
                self.needs(*x) || self.needs(*gain) || self.needs(*bias)
            }
            Op::CrossEntropy { logits, .. } => self.needs(*logits),
        };
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a tensor as an input. It receives a gradient iff
    /// `requires_grad` is set.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            op: Op::Leaf,
            needs_grad: t.requires_grad(),
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a tensor that never receives a gradient.
    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        let v = self.leaf(t);
        self.nodes[v.0].needs_grad = false;
        v
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn values(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn value(&self, v: Var) -> Tensor<T> {
        let node = &self.nodes[v.0];
        Tensor::new(node.shape.clone(), node.value.clone())
            .expect("tape nodes hold valid tensors")
    }

    /// Gradient of the last backward's loss with respect to `v`, if `v` is a
    /// leaf that required one and was reachable.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out = broadcast_shape(sa, sb).ok_or_else(|| {
            Error::dim("add", format!("cannot broadcast {sa:?} with {sb:?}"))
        })?;
        let value = if sa == sb {
            self.values(a)
                .iter()
                .zip(self.values(b))
                .map(|(&x, &y)| x + y)
                .collect()
        } else {
            let am = broadcast_map(&out, sa);
            let bm = broadcast_map(&out, sb);
            let (va, vb) = (self.values(a), self.values(b));
            am.iter().zip(&bm).map(|(&i, &j)| va[i] + vb[j]).collect()
        };
        self.push(out, value, Op::Add(a, b))
    }

    /// Elementwise product of equally shaped operands.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                "mul",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let value = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(&x, &y)| x * y)
            .collect();
        self.push(self.shape(a).to_vec(), value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let value = self.values(a).iter().map(|&x| x * factor).collect();
        self.push(self.shape(a).to_vec(), value, Op::Scale(a, factor))
    }

    /// Matrix product over the last two axes; leading axes broadcast.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = matmul_dims(self.shape(a), self.shape(b))?;
        let nb = numel(&d.batch);
        let mut value = vec![T::zero(); nb * d.m * d.n];
        let (va, vb) = (self.values(a), self.values(b));
        for bi in 0..nb {
            let ao = d.a_map[bi] * d.m * d.k;
            let bo = d.b_map[bi] * d.k * d.n;
            gemm(
                &va[ao..ao + d.m * d.k],
                &vb[bo..bo + d.k * d.n],
                &mut value[bi * d.m * d.n..(bi + 1) * d.m * d.n],
                d.m,
                d.k,
                d.n,
            );
        }
        let mut shape = d.batch;
        shape.extend([d.m, d.n]);
        self.push(shape, value, Op::MatMul(a, b))
    }

    /// `x · w + b` with `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add(y, b)
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a);
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes.iter().any(|&ax| ax >= shape.len() || std::mem::replace(&mut seen[ax], true))
        {
            return Err(Error::dim(
                "permute",
                format!("axes {axes:?} are not a permutation for {shape:?}"),
            ));
        }
        let in_strides = row_major_strides(shape);
        let out: Vec<usize> = axes.iter().map(|&ax| shape[ax]).collect();
        let strides: Vec<usize> = axes.iter().map(|&ax| in_strides[ax]).collect();
        let map = strided_map(&out, &strides);
        let va = self.values(a);
        let value = map.iter().map(|&i| va[i]).collect();
        self.push(out, value, Op::Permute(a, axes.to_vec()))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.values(a).len() || shape.contains(&0) {
            return Err(Error::dim(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape(a)),
            ));
        }
        let value = self.values(a).to_vec();
        self.push(shape.to_vec(), value, Op::Reshape(a))
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax_last_dim(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let width = *shape.last().ok_or_else(|| Error::dim("softmax", "empty tensor"))?;
        let mut value = self.values(a).to_vec();
        for row in value.chunks_mut(width) {
            softmax_in_place(row);
        }
        self.push(shape, value, Op::Softmax(a))
    }

    /// Normalizes each slice along the last axis to zero mean and unit
    /// variance, then applies `gain` and `bias`. A constant slice maps to
    /// `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::Parameter(format!(
                "layer_norm eps must be positive, got {eps}"
            )));
        }
        let shape = self.shape(x).to_vec();
        let width = *shape.last().ok_or_else(|| Error::dim("layer_norm", "empty tensor"))?;
        if self.shape(gain) != [width] || self.shape(bias) != [width] {
            return Err(Error::dim(
                "layer_norm",
                format!(
                    "gain {:?} and bias {:?} must both be [{width}] for input {shape:?}",
                    self.shape(gain),
                    self.shape(bias)
                ),
            ));
        }
        let eps = T::lit(eps);
        let n = T::from_usize(width).unwrap();
        let (vx, vg, vb) = (self.values(x), self.values(gain), self.values(bias));
        let rows = vx.len() / width;
        let mut xhat = Vec::with_capacity(vx.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut value = Vec::with_capacity(vx.len());
        for row in vx.chunks(width) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (i, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                value.push(h * vg[i] + vb[i]);
            }
        }
        self.push(
            shape,
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let (c, k) = (T::lit(GELU_COEFF), T::lit(SQRT_2_OVER_PI));
        let half = T::lit(0.5);
        let value = self
            .values(a)
            .iter()
            .map(|&x| half * x * (T::one() + (k * (x + c * x * x * x)).tanh()))
            .collect();
        self.push(self.shape(a).to_vec(), value, Op::Gelu(a))
    }

    /// Inverted dropout. Identity (no new node) in eval mode or at rate 0.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.values(a).len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let value = self
            .values(a)
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        self.push(self.shape(a).to_vec(), value, Op::Dropout(a, mask))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.values(a).iter().copied().sum();
        self.push(vec![1], vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = T::from_usize(self.values(a).len()).unwrap();
        let s = self.sum(a)?;
        self.scale(s, T::one() / n)
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, evaluated with
    /// log-sum-exp. `logits: [B, C]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits);
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::dim(
                "cross_entropy",
                format!("logits {shape:?} with {} labels", labels.len()),
            ));
        }
        let classes = shape[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Contract(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let mut probs = self.values(logits).to_vec();
        let mut total = T::zero();
        for (row, &label) in probs.chunks_mut(classes).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
            total += lse - row[label];
            softmax_in_place(row);
        }
        let b = T::from_usize(labels.len()).unwrap();
        self.push(
            vec![1],
            vec![total / b],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Propagates d`loss`/d(·) to every reachable leaf with `requires_grad`.
    /// Gradients of shared operands are summed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].needs_grad {
            self.grads = grads;
            return Ok(());
        }
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            let kind = node.op.kind();
            let factor = match self.fault {
                Some((k, f)) if k == kind => Some(f),
                _ => None,
            };
            for (target, mut contrib) in self.local_backward(id, &g) {
                if let Some(f) = factor {
                    contrib.iter_mut().for_each(|v| *v *= f);
                }
                check_finite(&format!("backward of {}", kind.name()), &contrib)?;
                match &mut grads[target.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, &c)| *a += c),
                    slot => *slot = Some(contrib),
                }
            }
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.needs_grad {
                grads[id] = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Vector-Jacobian products of node `id` for each input needing a gradient.
    fn local_backward(&self, id: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[id];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if !self.needs(v) {
                        continue;
                    }
                    let shape = self.shape(v);
                    if shape == node.shape.as_slice() {
                        out.push((v, g.to_vec()));
                    } else {
                        let map = broadcast_map(&node.shape, shape);
                        let mut acc = vec![T::zero(); numel(shape)];
                        for (&i, &gv) in map.iter().zip(g) {
                            acc[i] += gv;
                        }
                        out.push((v, acc));
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let vb = self.values(*b);
                    out.push((*a, g.iter().zip(vb).map(|(&x, &y)| x * y).collect()));
                }
                if self.needs(*b) {
                    let va = self.values(*a);
                    out.push((*b, g.iter().zip(va).map(|(&x, &y)| x * y).collect()));
                }
            }
            Op::Scale(a, factor) => {
                out.push((*a, g.iter().map(|&x| x * *factor).collect()));
            }
            Op::MatMul(a, b) => {
                let d = matmul_dims(self.shape(*a), self.shape(*b))
                    .expect("shapes validated in forward");
                let nb = numel(&d.batch);
                let (va, vb) = (self.values(*a), self.values(*b));
                let (mk, kn, mn) = (d.m * d.k, d.k * d.n, d.m * d.n);
                if self.needs(*a) {
                    let mut ga = vec![T::zero(); va.len()];
                    for bi in 0..nb {
                        let (ao, bo) = (d.a_map[bi] * mk, d.b_map[bi] * kn);
                        gemm_bt(
                            &g[bi * mn..(bi + 1) * mn],
                            &vb[bo..bo + kn],
                            &mut ga[ao..ao + mk],
                            d.m,
                            d.k,
                            d.n,
                        );
                    }
                    out.push((*a, ga));
                }
                if self.needs(*b) {
                    let mut gb = vec![T::zero(); vb.len()];
                    for bi in 0..nb {
                        let (ao, bo) = (d.a_map[bi] * mk, d.b_map[bi] * kn);
                        gemm_at(
                            &va[ao..ao + mk],
                            &g[bi * mn..(bi + 1) * mn],
                            &mut gb[bo..bo + kn],
                            d.m,
                            d.k,
                            d.n,
                        );
                    }
                    out.push((*b, gb));
                }
            }
            Op::Permute(a, axes) => {
                let shape = self.shape(*a);
                let in_strides = row_major_strides(shape);
                let strides: Vec<usize> = axes.iter().map(|&ax| in_strides[ax]).collect();
                let map = strided_map(&node.shape, &strides);
                let mut ga = vec![T::zero(); g.len()];
                for (&i, &gv) in map.iter().zip(g) {
                    ga[i] = gv;
                }
                out.push((*a, ga));
            }
            Op::Reshape(a) => out.push((*a, g.to_vec())),
            Op::Softmax(a) => {
                let width = *node.shape.last().unwrap();
                let mut ga = Vec::with_capacity(g.len());
                for (grow, yrow) in g.chunks(width).zip(node.value.chunks(width)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&x, &y)| x * y).sum();
                    ga.extend(grow.iter().zip(yrow).map(|(&gv, &y)| y * (gv - dot)));
                }
                out.push((*a, ga));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let width = *node.shape.last().unwrap();
                let vg = self.values(*gain);
                if self.needs(*x) {
                    let n = T::from_usize(width).unwrap();
                    let mut gx = Vec::with_capacity(g.len());
                    for ((grow, hrow), &is) in
                        g.chunks(width).zip(xhat.chunks(width)).zip(inv_std)
                    {
                        let dh: Vec<T> = grow.iter().zip(vg).map(|(&a, &b)| a * b).collect();
                        let sum_dh: T = dh.iter().copied().sum();
                        let sum_dh_h: T = dh.iter().zip(hrow).map(|(&a, &b)| a * b).sum();
                        gx.extend(
                            dh.iter()
                                .zip(hrow)
                                .map(|(&d, &h)| is / n * (n * d - sum_dh - h * sum_dh_h)),
                        );
                    }
                    out.push((*x, gx));
                }
                if self.needs(*gain) {
                    let mut gg = vec![T::zero(); width];
                    for (grow, hrow) in g.chunks(width).zip(xhat.chunks(width)) {
                        for i in 0..width {
                            gg[i] += grow[i] * hrow[i];
                        }
                    }
                    out.push((*gain, gg));
                }
                if self.needs(*bias) {
                    let mut gb = vec![T::zero(); width];
                    for grow in g.chunks(width) {
                        for i in 0..width {
                            gb[i] += grow[i];
                        }
                    }
                    out.push((*bias, gb));
                }
            }
            Op::Gelu(a) => {
                let (c, k) = (T::lit(GELU_COEFF), T::lit(SQRT_2_OVER_PI));
                let (half, three) = (T::lit(0.5), T::lit(3.0));
                let ga = self
                    .values(*a)
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| {
                        let t = (k * (x + c * x * x * x)).tanh();
                        let dt = (T::one() - t * t) * k * (T::one() + three * c * x * x);
                        gv * (half * (T::one() + t) + half * x * dt)
                    })
                    .collect();
                out.push((*a, ga));
            }
            Op::Dropout(a, mask) => {
                out.push((*a, g.iter().zip(mask).map(|(&x, &m)| x * m).collect()));
            }
            Op::Sum(a) => {
                out.push((*a, vec![g[0]; self.values(*a).len()]));
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let classes = self.shape(*logits)[1];
                let scale = g[0] / T::from_usize(labels.len()).unwrap();
                let mut gl: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (b, &label) in labels.iter().enumerate() {
                    gl[b * classes + label] -= scale;
                }
                out.push((*logits, gl));
            }
        }
        out
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
        assert_eq!(broadcast_map(&[2, 2], &[2]), vec![0, 1, 0, 1]);
        assert_eq!(broadcast_map(&[2, 2], &[2, 1]), vec![0, 0, 1, 1]);
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let i = tape.leaf(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = tape.leaf(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = tape.matmul(i, m).unwrap();
        assert_eq!(tape.values(y), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_one_hot_rows() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t(&[3, 2], &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]));
        let b = tape.leaf(&t(&[2, 1], &[2.0, 5.0]));
        let y = tape.matmul(a, b).unwrap();
        assert_eq!(tape.shape(y), &[3, 1]);
        assert_eq!(tape.values(y), &[2.0, 5.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(&Tensor::<f64>::zeros(vec![2, 3]));
        let b = tape.leaf(&Tensor::<f64>::zeros(vec![2, 3]));
        let msg = tape.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn batched_matmul_broadcasts_rank2_rhs() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(&t(&[2, 1], &[1.0, 1.0]));
        let y = tape.matmul(a, b).unwrap();
        assert_eq!(tape.shape(y), &[2, 1, 1]);
        assert_eq!(tape.values(y), &[3.0, 7.0]);
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t(&[3], &[0.0, 0.0, 0.0]));
        let s = tape.softmax_last_dim(a).unwrap();
        for &p in tape.values(s) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let b = tape.leaf(&t(&[2], &[1000.0, 1000.0]));
        let s = tape.softmax_last_dim(b).unwrap();
        assert_eq!(tape.values(s), &[0.5, 0.5]);
        let c = tape.leaf(&t(&[2], &[0.0, 3f64.ln()]));
        let s = tape.softmax_last_dim(c).unwrap();
        assert!((tape.values(s)[0] - 0.25).abs() < 1e-15);
        assert!((tape.values(s)[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::new();
        let g = tape.leaf(&t(&[3], &[1.0; 3]));
        let b = tape.leaf(&t(&[3], &[0.0; 3]));
        let x = tape.leaf(&t(&[3], &[5.0, 5.0, 5.0]));
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        assert_eq!(tape.values(y), &[0.0, 0.0, 0.0]);

        let g = tape.leaf(&t(&[2], &[1.0; 2]));
        let b = tape.leaf(&t(&[2], &[0.0; 2]));
        let x = tape.leaf(&t(&[2], &[1.0, 3.0]));
        let y = tape.layer_norm(x, g, b, 1e-14).unwrap();
        assert!((tape.values(y)[0] + 1.0).abs() < 1e-12);
        assert!((tape.values(y)[1] - 1.0).abs() < 1e-12);

        assert_eq!(tape.layer_norm(x, g, b, 0.0).unwrap_err().kind(), "parameter");
        assert_eq!(tape.layer_norm(x, g, b, -1.0).unwrap_err().kind(), "parameter");
    }

    #[test]
    fn constant_slice_returns_bias() {
        let mut tape = Tape::new();
        let g = tape.leaf(&t(&[2], &[3.0, 4.0]));
        let b = tape.leaf(&t(&[2], &[0.25, -1.0]));
        let x = tape.leaf(&t(&[2], &[7.0, 7.0]));
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        assert_eq!(tape.values(y), &[0.25, -1.0]);
    }

    #[test]
    fn dropout_eval_and_zero_rate_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[4], &[1.0, 2.0, 3.0, 4.0]));
        let y = tape.dropout(x, 0.5, false, &mut rng).unwrap();
        assert_eq!(tape.values(y), tape.values(x));
        let y = tape.dropout(x, 0.0, true, &mut rng).unwrap();
        assert_eq!(tape.values(y), tape.values(x));
        assert!(tape.dropout(x, 1.0, true, &mut rng).is_err());
        assert!(tape.dropout(x, -0.1, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::<f64>::full(vec![10_000], 1.0));
        let y = tape.dropout(x, 0.5, true, &mut rng).unwrap();
        let mean = tape.values(y).iter().sum::<f64>() / 10_000.0;
        assert!((0.95..=1.05).contains(&mean), "mean {mean}");
        assert!(tape.values(y).iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::<f64>::full(vec![2, 3], 0.7).with_requires_grad(true));
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn backward_of_half_square_is_identity() {
        let data = [0.3, -1.2, 2.5, 0.0];
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[4], &data).with_requires_grad(true));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let half = tape.scale(s, 0.5).unwrap();
        tape.backward(half).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &data);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::<f64>::zeros(vec![2]).with_requires_grad(true));
        assert_eq!(tape.backward(x).unwrap_err().kind(), "contract");
    }

    #[test]
    fn backward_reports_non_finite_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[1], &[1.0]).with_requires_grad(true));
        let y = tape.scale(x, 1e300).unwrap();
        let z = tape.mul(y, y).unwrap_err();
        assert_eq!(z.kind(), "numeric");
        let y2 = tape.scale(y, 1.0).unwrap();
        let s = tape.sum(y2).unwrap();
        tape.inject_backward_fault(OpKind::Sum, f64::INFINITY);
        let err = tape.backward(s).unwrap_err();
        assert!(err.to_string().contains("sum"), "{err}");
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::<f64>::full(vec![2], 1.0).with_requires_grad(true));
        let w = tape.leaf(&Tensor::<f64>::full(vec![2], 2.0).with_requires_grad(true));
        let p = tape.mul(x, w).unwrap();
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(x).is_none());
        assert_eq!(tape.grad(w).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let mut tape = Tape::new();
        let z = tape.leaf(&Tensor::<f64>::zeros(vec![1, 4]));
        let l = tape.cross_entropy(z, &[2]).unwrap();
        assert!((tape.values(l)[0] - 4f64.ln()).abs() < 1e-15);
        let z = tape.leaf(&t(&[1, 3], &[1000.0, 0.0, 0.0]));
        let l = tape.cross_entropy(z, &[0]).unwrap();
        assert_eq!(tape.values(l)[0], 0.0);
        assert_eq!(tape.cross_entropy(z, &[3]).unwrap_err().kind(), "contract");
    }

    #[test]
    fn permute_round_trip() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let x = tape.leaf(&t(&[2, 3, 4], &data));
        let p = tape.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(tape.shape(p), &[4, 2, 3]);
        // p[i, j, k] = x[j, k, i]
        assert_eq!(tape.values(p)[1 * 6 + 1 * 3 + 2], data[1 * 12 + 2 * 4 + 1]);
        let back = tape.permute(p, &[1, 2, 0]).unwrap();
        assert_eq!(tape.values(back), data.as_slice());
        assert!(tape.permute(x, &[0, 0, 1]).is_err());
    }
}
