//! Define-by-run tape. Every op evaluates eagerly and records enough to run
//! its vector-Jacobian product; nodes are appended in topological order so
//! the backward sweep is a reverse scan of the tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AutodiffError, Result};
use crate::linalg::{self, MatLayout};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Bcast {
    Same,
    Scalar,
    /// Input matches the trailing axes of the output.
    Tile(usize),
    Map(Vec<usize>),
}

impl Bcast {
    fn new(out: &[usize], input: &[usize]) -> Bcast {
        if out == input {
            return Bcast::Same;
        }
        if input.iter().product::<usize>() == 1 {
            return Bcast::Scalar;
        }
        let core: &[usize] = {
            let lead = input.iter().take_while(|&&d| d == 1).count();
            &input[lead..]
        };
        if core.len() <= out.len() && out[out.len() - core.len()..] == *core {
            return Bcast::Tile(core.iter().product());
        }
        let numel: usize = out.iter().product();
        let rank = out.len();
        let offset = rank - input.len();
        let mut in_strides = vec![0usize; rank];
        let mut acc = 1;
        for d in (0..input.len()).rev() {
            in_strides[d + offset] = if input[d] == 1 { 0 } else { acc };
            acc *= input[d];
        }
        let mut map = Vec::with_capacity(numel);
        let mut idx = vec![0usize; rank];
        let mut pos = 0usize;
        for _ in 0..numel {
            map.push(pos);
            for d in (0..rank).rev() {
                idx[d] += 1;
                pos += in_strides[d];
                if idx[d] < out[d] {
                    break;
                }
                pos -= in_strides[d] * idx[d];
                idx[d] = 0;
            }
        }
        Bcast::Map(map)
    }

    #[inline]
    fn at(&self, i: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Scalar => 0,
            Bcast::Tile(p) => i % p,
            Bcast::Map(m) => m[i],
        }
    }
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(AutodiffError::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        };
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug)]
enum UnaryKind {
    Relu,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Sqrt,
    Square,
    Neg,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(BinaryKind, Var, Var),
    Unary(UnaryKind, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    Slice { src: Var, axis: usize, start: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Conv1d { input: Var, weight: Var, stride: usize, dilation: usize },
    Dropout { src: Var, mask: Vec<f64> },
    LayerNorm { src: Var, inv_std: Vec<f64> },
    Cholesky(Var),
    SolveLower(Var, Var),
    Diag(Var),
    LowerExpDiag(Var),
    PairwiseSqDist(Var, Var),
    Matern52(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when `v` did not influence the loss.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

pub struct Graph {
    nodes: Vec<Node>,
    training: bool,
    rng: ChaCha8Rng,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

impl Graph {
    /// Evaluation-mode graph (dropout disabled).
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Training-mode graph; dropout masks are drawn from `seed`.
    pub fn training(seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    // ---- elementwise -------------------------------------------------------

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        };
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(name, &sa, &sb)?;
        let (ma, mb) = (Bcast::new(&out_shape, &sa), Bcast::new(&out_shape, &sb));
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let n: usize = out_shape.iter().product();
        let data: Vec<f64> = (0..n)
            .map(|i| {
                let (x, y) = (va[ma.at(i)], vb[mb.at(i)]);
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                    BinaryKind::Div => x / y,
                }
            })
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Binary(kind, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    fn unary(&mut self, kind: UnaryKind, a: Var) -> Var {
        let f: fn(f64) -> f64 = match kind {
            UnaryKind::Relu => |x| if x > 0.0 { x } else { 0.0 },
            UnaryKind::Tanh => f64::tanh,
            UnaryKind::Sigmoid => |x| 1.0 / (1.0 + (-x).exp()),
            UnaryKind::Exp => f64::exp,
            UnaryKind::Log => f64::ln,
            UnaryKind::Sqrt => f64::sqrt,
            UnaryKind::Square => |x| x * x,
            UnaryKind::Neg => |x| -x,
        };
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(value, Op::Unary(kind, a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Log, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Sqrt, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Square, a)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Neg, a)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    // ---- linear algebra ----------------------------------------------------

    /// Matrix product. Supports `[m,k] x [k,n]`, batched `[b,m,k] x [b,k,n]`
    /// and a shared right operand `[b,m,k] x [k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || AutodiffError::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        let (batch, m, k, n, shared) = match (sa.len(), sb.len()) {
            (2, 2) if sa[1] == sb[0] => (1, sa[0], sa[1], sb[1], true),
            (3, 2) if sa[2] == sb[0] => (1, sa[0] * sa[1], sa[2], sb[1], true),
            (3, 3) if sa[0] == sb[0] && sa[2] == sb[1] => (sa[0], sa[1], sa[2], sb[2], false),
            _ => return Err(mismatch()),
        };
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let a_off = bi * m * k;
            let b_off = if shared { 0 } else { bi * k * n };
            linalg::gemm(
                1.0,
                &va[a_off..a_off + m * k],
                MatLayout::row_major(m, k),
                &vb[b_off..b_off + k * n],
                MatLayout::row_major(k, n),
                0.0,
                &mut out[bi * m * n..(bi + 1) * m * n],
            );
        }
        let shape = match (sa.len(), sb.len()) {
            (2, 2) => vec![sa[0], sb[1]],
            (3, 2) => vec![sa[0], sa[1], sb[1]],
            _ => vec![sa[0], sa[1], sb[2]],
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(a, b), rg))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(AutodiffError::InvalidShape {
                op: "transpose",
                shape: s,
                reason: "needs rank >= 2".into(),
            });
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let batch = s.iter().take(s.len() - 2).product::<usize>();
        let v = self.value(a).data();
        let mut out = Vec::with_capacity(v.len());
        for bi in 0..batch {
            out.extend(linalg::transpose(&v[bi * r * c..(bi + 1) * r * c], r, c));
        }
        let mut shape = s.clone();
        let len = shape.len();
        shape.swap(len - 2, len - 1);
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshape(shape.to_vec()).map_err(|_| AutodiffError::ShapeMismatch {
            op: "reshape",
            lhs: self.shape(a).to_vec(),
            rhs: shape.to_vec(),
        })?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Lower Cholesky factor of a symmetric positive definite matrix.
    pub fn cholesky(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || s[0] != s[1] {
            return Err(AutodiffError::InvalidShape {
                op: "cholesky",
                shape: s,
                reason: "needs a square matrix".into(),
            });
        }
        let l = linalg::cholesky(self.value(a).data(), s[0])?;
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(s, l)?, Op::Cholesky(a), rg))
    }

    /// `L^{-1} B` for lower-triangular `L`.
    pub fn solve_lower(&mut self, l: Var, b: Var) -> Result<Var> {
        let (sl, sb) = (self.shape(l).to_vec(), self.shape(b).to_vec());
        if sl.len() != 2 || sl[0] != sl[1] || sb.len() != 2 || sb[0] != sl[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "solve_lower",
                lhs: sl,
                rhs: sb,
            });
        }
        let x = linalg::solve_lower(self.value(l).data(), self.value(b).data(), sl[0], sb[1]);
        let rg = self.rg(l) || self.rg(b);
        Ok(self.push(Tensor::new(sb, x)?, Op::SolveLower(l, b), rg))
    }

    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || s[0] != s[1] {
            return Err(AutodiffError::InvalidShape {
                op: "diag",
                shape: s,
                reason: "needs a square matrix".into(),
            });
        }
        let n = s[0];
        let v = self.value(a).data();
        let d = (0..n).map(|i| v[i * n + i]).collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::vector(d), Op::Diag(a), rg))
    }

    /// Maps an unconstrained square matrix to a lower-triangular factor
    /// with `exp` applied on the diagonal (strictly positive diagonal).
    pub fn lower_exp_diag(&mut self, raw: Var) -> Result<Var> {
        let s = self.shape(raw).to_vec();
        if s.len() != 2 || s[0] != s[1] {
            return Err(AutodiffError::InvalidShape {
                op: "lower_exp_diag",
                shape: s,
                reason: "needs a square matrix".into(),
            });
        }
        let n = s[0];
        let v = self.value(raw).data();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..i {
                out[i * n + j] = v[i * n + j];
            }
            out[i * n + i] = v[i * n + i].exp();
        }
        let rg = self.rg(raw);
        Ok(self.push(Tensor::new(s, out)?, Op::LowerExpDiag(raw), rg))
    }

    /// Squared Euclidean distances between the rows of `a` (`n x d`) and `b` (`m x d`).
    pub fn pairwise_sqdist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(AutodiffError::ShapeMismatch {
                op: "pairwise_sqdist",
                lhs: sa,
                rhs: sb,
            });
        }
        let (n, m, d) = (sa[0], sb[0], sa[1]);
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let ra = &va[i * d..(i + 1) * d];
            for j in 0..m {
                let rb = &vb[j * d..(j + 1) * d];
                out[i * m + j] = ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum();
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::PairwiseSqDist(a, b), rg))
    }

    /// Unit-variance Matern-5/2 correlation evaluated from squared scaled
    /// distances: `(1 + sqrt5 r + 5 r^2 / 3) exp(-sqrt5 r)`.
    pub fn matern52(&mut self, sqdist: Var) -> Var {
        let value = self.value(sqdist).map(matern52_from_sq);
        let rg = self.rg(sqdist);
        self.push(value, Op::Matern52(sqdist), rg)
    }

    // ---- reductions and layout ---------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(AutodiffError::InvalidShape {
                op: "sum_axis",
                shape: s,
                reason: format!("axis {axis} out of range"),
            });
        }
        let outer: usize = s[..axis].iter().product();
        let len = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let v = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &v[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (dst, x) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst += x;
                }
            }
        }
        let mut shape = s.clone();
        shape.remove(axis);
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::SumAxis(a, axis), rg))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let len = *self.shape(a).get(axis).unwrap_or(&1);
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / len as f64))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let Some(&len) = s.last() else {
            return Err(AutodiffError::InvalidShape {
                op: "softmax",
                shape: s,
                reason: "needs rank >= 1".into(),
            });
        };
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(len.max(1)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                z += *x;
            }
            for x in row.iter_mut() {
                *x /= z;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(s, out)?, Op::Softmax(a), rg))
    }

    /// Half-open slice `[start, end)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || start >= end || end > s[axis] {
            return Err(AutodiffError::InvalidShape {
                op: "slice",
                shape: s,
                reason: format!("bad range {start}..{end} on axis {axis}"),
            });
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let (len, width) = (s[axis], end - start);
        let v = self.value(a).data();
        let mut out = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            out.extend_from_slice(&v[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut shape = s.clone();
        shape[axis] = width;
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::Slice { src: a, axis, start }, rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .nodes
            .get(parts.first().map(|v| v.0).unwrap_or(usize::MAX))
            .map(|n| n.value.shape().to_vec())
            .ok_or_else(|| AutodiffError::InvalidShape {
                op: "concat",
                shape: vec![],
                reason: "no inputs".into(),
            })?;
        if axis >= first.len() {
            return Err(AutodiffError::InvalidShape {
                op: "concat",
                shape: first,
                reason: format!("axis {axis} out of range"),
            });
        }
        let mut total = 0;
        for &p in parts {
            let sp = self.shape(p);
            let compatible = sp.len() == first.len()
                && sp.iter().zip(&first).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: sp.to_vec(),
                });
            }
            total += sp[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                let v = self.value(p).data();
                out.extend_from_slice(&v[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    // ---- network layers ----------------------------------------------------

    /// 1-D convolution (cross-correlation, no padding). `input` is
    /// `(channels, length)` or `(batch, channels, length)`; `weight` is
    /// `(out_channels, channels, kernel)`.
    pub fn conv1d(&mut self, input: Var, weight: Var, stride: usize, dilation: usize) -> Result<Var> {
        let (si, sw) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        let (batch, c, l) = match si.len() {
            2 => (1, si[0], si[1]),
            3 => (si[0], si[1], si[2]),
            _ => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "conv1d",
                    lhs: si,
                    rhs: sw,
                })
            }
        };
        if sw.len() != 3 || sw[1] != c || stride == 0 || dilation == 0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv1d",
                lhs: si,
                rhs: sw,
            });
        }
        let (o, k) = (sw[0], sw[2]);
        let lout = conv1d_output_len(l, k, stride, dilation).ok_or_else(|| AutodiffError::InvalidShape {
            op: "conv1d",
            shape: si.clone(),
            reason: format!("input length {l} too short for kernel {k} dilation {dilation}"),
        })?;
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let mut out = vec![0.0; batch * o * lout];
        let mut cols = vec![0.0; c * k * lout];
        for b in 0..batch {
            im2col(&x[b * c * l..(b + 1) * c * l], c, l, k, stride, dilation, lout, &mut cols);
            linalg::gemm(
                1.0,
                w,
                MatLayout::row_major(o, c * k),
                &cols,
                MatLayout::row_major(c * k, lout),
                0.0,
                &mut out[b * o * lout..(b + 1) * o * lout],
            );
        }
        let shape = if si.len() == 2 { vec![o, lout] } else { vec![batch, o, lout] };
        let rg = self.rg(input) || self.rg(weight);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Conv1d {
                input,
                weight,
                stride,
                dilation,
            },
            rg,
        ))
    }

    /// Inverted dropout. Identity when the graph is not in training mode.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Var {
        if !self.training || rate <= 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let n = self.value(a).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let v = self.value(a);
        let data = v.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(value, Op::Dropout { src: a, mask }, rg)
    }

    /// Normalisation over the last axis without affine parameters.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let Some(&len) = s.last() else {
            return Err(AutodiffError::InvalidShape {
                op: "layer_norm",
                shape: s,
                reason: "needs rank >= 1".into(),
            });
        };
        let mut out = self.value(a).data().to_vec();
        let mut inv_std = Vec::with_capacity(out.len() / len.max(1));
        for row in out.chunks_mut(len.max(1)) {
            let mean = row.iter().sum::<f64>() / len as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / len as f64;
            let is = 1.0 / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * is;
            }
            inv_std.push(is);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(s, out)?, Op::LayerNorm { src: a, inv_std }, rg))
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let ls = self.shape(loss);
        if ls.iter().product::<usize>() != 1 {
            return Err(AutodiffError::NonScalarLoss(ls.to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(ls.to_vec(), 1.0));
        let mut keep = vec![false; self.nodes.len()];
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                keep[i] = true;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        for (i, g) in grads.iter_mut().enumerate() {
            if !keep[i] {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (ma, mb) = (Bcast::new(out.shape(), va.shape()), Bcast::new(out.shape(), vb.shape()));
                if self.rg(*a) {
                    let mut ga = Tensor::zeros(va.shape().to_vec());
                    let gad = ga.data_mut();
                    for (k, &gk) in gd.iter().enumerate() {
                        let d = match kind {
                            BinaryKind::Add | BinaryKind::Sub => gk,
                            BinaryKind::Mul => gk * vb.data()[mb.at(k)],
                            BinaryKind::Div => gk / vb.data()[mb.at(k)],
                        };
                        gad[ma.at(k)] += d;
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let mut gb = Tensor::zeros(vb.shape().to_vec());
                    let gbd = gb.data_mut();
                    for (k, &gk) in gd.iter().enumerate() {
                        let d = match kind {
                            BinaryKind::Add => gk,
                            BinaryKind::Sub => -gk,
                            BinaryKind::Mul => gk * va.data()[ma.at(k)],
                            BinaryKind::Div => {
                                let y = vb.data()[mb.at(k)];
                                -gk * va.data()[ma.at(k)] / (y * y)
                            }
                        };
                        gbd[mb.at(k)] += d;
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Unary(kind, a) => {
                let x = self.value(*a).data();
                let y = out.data();
                let data = (0..gd.len())
                    .map(|k| {
                        let d = match kind {
                            UnaryKind::Relu => {
                                if x[k] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryKind::Tanh => 1.0 - y[k] * y[k],
                            UnaryKind::Sigmoid => y[k] * (1.0 - y[k]),
                            UnaryKind::Exp => y[k],
                            UnaryKind::Log => 1.0 / x[k],
                            UnaryKind::Sqrt => 0.5 / y[k],
                            UnaryKind::Square => 2.0 * x[k],
                            UnaryKind::Neg => -1.0,
                        };
                        gd[k] * d
                    })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(out.shape().to_vec(), data).unwrap());
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, g.map(|x| x * c));
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                let shape = self.shape(*a).to_vec();
                self.accumulate(grads, *a, Tensor::new(shape, gd.to_vec()).unwrap());
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (sa, sb) = (va.shape(), vb.shape());
                let (batch, m, k, n, shared) = match (sa.len(), sb.len()) {
                    (2, 2) => (1, sa[0], sa[1], sb[1], true),
                    (3, 2) => (1, sa[0] * sa[1], sa[2], sb[1], true),
                    _ => (sa[0], sa[1], sa[2], sb[2], false),
                };
                if self.rg(*a) {
                    let mut ga = vec![0.0; va.numel()];
                    for bi in 0..batch {
                        let b_off = if shared { 0 } else { bi * k * n };
                        // dA = dC B^T
                        linalg::gemm(
                            1.0,
                            &gd[bi * m * n..(bi + 1) * m * n],
                            MatLayout::row_major(m, n),
                            &vb.data()[b_off..b_off + k * n],
                            MatLayout::transposed(k, n),
                            0.0,
                            &mut ga[bi * m * k..(bi + 1) * m * k],
                        );
                    }
                    self.accumulate(grads, *a, Tensor::new(sa.to_vec(), ga).unwrap());
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; vb.numel()];
                    for bi in 0..batch {
                        let b_off = if shared { 0 } else { bi * k * n };
                        // dB = A^T dC
                        linalg::gemm(
                            1.0,
                            &va.data()[bi * m * k..(bi + 1) * m * k],
                            MatLayout::transposed(m, k),
                            &gd[bi * m * n..(bi + 1) * m * n],
                            MatLayout::row_major(m, n),
                            if shared { 1.0 } else { 0.0 },
                            &mut gb[b_off..b_off + k * n],
                        );
                    }
                    self.accumulate(grads, *b, Tensor::new(sb.to_vec(), gb).unwrap());
                }
            }
            Op::Transpose(a) => {
                let s = out.shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                let batch = gd.len() / (r * c).max(1);
                let mut back = Vec::with_capacity(gd.len());
                for bi in 0..batch {
                    back.extend(linalg::transpose(&gd[bi * r * c..(bi + 1) * r * c], r, c));
                }
                let shape = self.shape(*a).to_vec();
                self.accumulate(grads, *a, Tensor::new(shape, back).unwrap());
            }
            Op::Softmax(a) => {
                let len = *out.shape().last().unwrap();
                let y = out.data();
                let mut back = vec![0.0; y.len()];
                for r in 0..y.len() / len.max(1) {
                    let (yr, gr) = (&y[r * len..(r + 1) * len], &gd[r * len..(r + 1) * len]);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..len {
                        back[r * len + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *a, Tensor::new(out.shape().to_vec(), back).unwrap());
            }
            Op::Sum(a) => {
                let shape = self.shape(*a).to_vec();
                self.accumulate(grads, *a, Tensor::full(shape, gd[0]));
            }
            Op::Mean(a) => {
                let shape = self.shape(*a).to_vec();
                let n = shape.iter().product::<usize>() as f64;
                self.accumulate(grads, *a, Tensor::full(shape, gd[0] / n));
            }
            Op::SumAxis(a, axis) => {
                let s = self.shape(*a).to_vec();
                let outer: usize = s[..*axis].iter().product();
                let len = s[*axis];
                let inner: usize = s[*axis + 1..].iter().product();
                let mut back = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    for _ in 0..len {
                        back.extend_from_slice(&gd[o * inner..(o + 1) * inner]);
                    }
                }
                self.accumulate(grads, *a, Tensor::new(s, back).unwrap());
            }
            Op::Slice { src, axis, start } => {
                let s = self.shape(*src).to_vec();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[*axis + 1..].iter().product();
                let (len, width) = (s[*axis], out.shape()[*axis]);
                let mut back = vec![0.0; s.iter().product()];
                for o in 0..outer {
                    back[(o * len + start) * inner..(o * len + start + width) * inner]
                        .copy_from_slice(&gd[o * width * inner..(o + 1) * width * inner]);
                }
                self.accumulate(grads, *src, Tensor::new(s, back).unwrap());
            }
            Op::Concat { parts, axis } => {
                let s = out.shape();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[*axis + 1..].iter().product();
                let total = s[*axis];
                let mut offset = 0;
                for &p in parts {
                    let sp = self.shape(p).to_vec();
                    let len = sp[*axis];
                    if self.rg(p) {
                        let mut back = Vec::with_capacity(sp.iter().product());
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            back.extend_from_slice(&gd[base..base + len * inner]);
                        }
                        self.accumulate(grads, p, Tensor::new(sp, back).unwrap());
                    }
                    offset += len;
                }
            }
            Op::Conv1d {
                input,
                weight,
                stride,
                dilation,
            } => {
                let (vi, vw) = (self.value(*input), self.value(*weight));
                let si = vi.shape();
                let (batch, c, l) = if si.len() == 2 { (1, si[0], si[1]) } else { (si[0], si[1], si[2]) };
                let (o, k) = (vw.shape()[0], vw.shape()[2]);
                let lout = *out.shape().last().unwrap();
                let mut cols = vec![0.0; c * k * lout];
                let mut gw = vec![0.0; vw.numel()];
                let mut gx = vec![0.0; vi.numel()];
                let mut gcols = vec![0.0; c * k * lout];
                for b in 0..batch {
                    let gout = &gd[b * o * lout..(b + 1) * o * lout];
                    if self.rg(*weight) {
                        im2col(&vi.data()[b * c * l..(b + 1) * c * l], c, l, k, *stride, *dilation, lout, &mut cols);
                        linalg::gemm(
                            1.0,
                            gout,
                            MatLayout::row_major(o, lout),
                            &cols,
                            MatLayout::transposed(c * k, lout),
                            1.0,
                            &mut gw,
                        );
                    }
                    if self.rg(*input) {
                        linalg::gemm(
                            1.0,
                            vw.data(),
                            MatLayout::transposed(o, c * k),
                            gout,
                            MatLayout::row_major(o, lout),
                            0.0,
                            &mut gcols,
                        );
                        col2im(&gcols, c, l, k, *stride, *dilation, lout, &mut gx[b * c * l..(b + 1) * c * l]);
                    }
                }
                if self.rg(*weight) {
                    self.accumulate(grads, *weight, Tensor::new(vw.shape().to_vec(), gw).unwrap());
                }
                if self.rg(*input) {
                    self.accumulate(grads, *input, Tensor::new(si.to_vec(), gx).unwrap());
                }
            }
            Op::Dropout { src, mask } => {
                let data = gd.iter().zip(mask).map(|(g, m)| g * m).collect();
                self.accumulate(grads, *src, Tensor::new(out.shape().to_vec(), data).unwrap());
            }
            Op::LayerNorm { src, inv_std } => {
                let len = *out.shape().last().unwrap();
                let y = out.data();
                let mut back = vec![0.0; y.len()];
                for (r, is) in inv_std.iter().enumerate() {
                    let (yr, gr) = (&y[r * len..(r + 1) * len], &gd[r * len..(r + 1) * len]);
                    let mg = gr.iter().sum::<f64>() / len as f64;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / len as f64;
                    for j in 0..len {
                        back[r * len + j] = is * (gr[j] - mg - yr[j] * mgy);
                    }
                }
                self.accumulate(grads, *src, Tensor::new(out.shape().to_vec(), back).unwrap());
            }
            Op::Cholesky(a) => {
                let n = out.shape()[0];
                let l = out.data();
                // P = Phi(L^T Lbar), Phi keeps the lower triangle and halves the diagonal.
                let mut p = vec![0.0; n * n];
                linalg::gemm(
                    1.0,
                    l,
                    MatLayout::transposed(n, n),
                    gd,
                    MatLayout::row_major(n, n),
                    0.0,
                    &mut p,
                );
                for r in 0..n {
                    for c in 0..n {
                        if c > r {
                            p[r * n + c] = 0.0;
                        } else if c == r {
                            p[r * n + c] *= 0.5;
                        }
                    }
                }
                // S = L^{-T} P L^{-1}; dA = (S + S^T) / 2
                let y = linalg::solve_lower_transposed(l, &p, n, n);
                let yt = linalg::transpose(&y, n, n);
                let st = linalg::solve_lower_transposed(l, &yt, n, n);
                let mut back = vec![0.0; n * n];
                for r in 0..n {
                    for c in 0..n {
                        back[r * n + c] = 0.5 * (st[r * n + c] + st[c * n + r]);
                    }
                }
                self.accumulate(grads, *a, Tensor::new(vec![n, n], back).unwrap());
            }
            Op::SolveLower(lv, bv) => {
                let l = self.value(*lv).data();
                let n = self.shape(*lv)[0];
                let m = out.shape()[1];
                // Bbar = L^{-T} Xbar;  Lbar = -tril(Bbar X^T)
                let gb = linalg::solve_lower_transposed(l, gd, n, m);
                if self.rg(*lv) {
                    let mut gl = vec![0.0; n * n];
                    linalg::gemm(
                        -1.0,
                        &gb,
                        MatLayout::row_major(n, m),
                        out.data(),
                        MatLayout::transposed(n, m),
                        0.0,
                        &mut gl,
                    );
                    for r in 0..n {
                        for c in (r + 1)..n {
                            gl[r * n + c] = 0.0;
                        }
                    }
                    self.accumulate(grads, *lv, Tensor::new(vec![n, n], gl).unwrap());
                }
                self.accumulate(grads, *bv, Tensor::new(vec![n, m], gb).unwrap());
            }
            Op::Diag(a) => {
                let n = gd.len();
                let mut back = vec![0.0; n * n];
                for i in 0..n {
                    back[i * n + i] = gd[i];
                }
                self.accumulate(grads, *a, Tensor::new(vec![n, n], back).unwrap());
            }
            Op::LowerExpDiag(raw) => {
                let n = out.shape()[0];
                let mut back = vec![0.0; n * n];
                for r in 0..n {
                    for c in 0..r {
                        back[r * n + c] = gd[r * n + c];
                    }
                    back[r * n + r] = gd[r * n + r] * out.data()[r * n + r];
                }
                self.accumulate(grads, *raw, Tensor::new(vec![n, n], back).unwrap());
            }
            Op::PairwiseSqDist(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, d) = (va.shape()[0], va.shape()[1]);
                let m = vb.shape()[0];
                if self.rg(*a) {
                    // dA_i = 2 (rowsum(G)_i a_i - (G B)_i)
                    let mut ga = vec![0.0; n * d];
                    linalg::gemm(
                        -2.0,
                        gd,
                        MatLayout::row_major(n, m),
                        vb.data(),
                        MatLayout::row_major(m, d),
                        0.0,
                        &mut ga,
                    );
                    for i in 0..n {
                        let rs: f64 = gd[i * m..(i + 1) * m].iter().sum();
                        for k in 0..d {
                            ga[i * d + k] += 2.0 * rs * va.data()[i * d + k];
                        }
                    }
                    self.accumulate(grads, *a, Tensor::new(vec![n, d], ga).unwrap());
                }
                if self.rg(*b) {
                    // dB_j = 2 (colsum(G)_j b_j - (G^T A)_j)
                    let mut gb = vec![0.0; m * d];
                    linalg::gemm(
                        -2.0,
                        gd,
                        MatLayout::transposed(n, m),
                        va.data(),
                        MatLayout::row_major(n, d),
                        0.0,
                        &mut gb,
                    );
                    let mut cs = vec![0.0; m];
                    for i in 0..n {
                        for j in 0..m {
                            cs[j] += gd[i * m + j];
                        }
                    }
                    for j in 0..m {
                        for k in 0..d {
                            gb[j * d + k] += 2.0 * cs[j] * vb.data()[j * d + k];
                        }
                    }
                    self.accumulate(grads, *b, Tensor::new(vec![m, d], gb).unwrap());
                }
            }
            Op::Matern52(a) => {
                let x = self.value(*a).data();
                let data = x.iter().zip(gd).map(|(&d2, g)| g * matern52_dsq(d2)).collect();
                self.accumulate(grads, *a, Tensor::new(out.shape().to_vec(), data).unwrap());
            }
        }
    }
}

const SQRT5: f64 = 2.236_067_977_499_79;

pub fn matern52_from_sq(d2: f64) -> f64 {
    let r = d2.max(0.0).sqrt();
    (1.0 + SQRT5 * r + 5.0 * r * r / 3.0) * (-SQRT5 * r).exp()
}

/// Derivative of [`matern52_from_sq`] with respect to the squared distance.
fn matern52_dsq(d2: f64) -> f64 {
    let r = d2.max(0.0).sqrt();
    -(5.0 / 6.0) * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp()
}

/// `floor((L - dilation (k - 1) - 1) / stride) + 1`, or `None` when the
/// receptive field exceeds the input.
pub fn conv1d_output_len(len: usize, kernel: usize, stride: usize, dilation: usize) -> Option<usize> {
    let span = dilation * (kernel.max(1) - 1) + 1;
    if len < span || stride == 0 {
        None
    } else {
        Some((len - span) / stride + 1)
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f64], c: usize, l: usize, k: usize, stride: usize, dilation: usize, lout: usize, cols: &mut [f64]) {
    for ci in 0..c {
        for ki in 0..k {
            let row = (ci * k + ki) * lout;
            for t in 0..lout {
                cols[row + t] = x[ci * l + t * stride + ki * dilation];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], c: usize, l: usize, k: usize, stride: usize, dilation: usize, lout: usize, x: &mut [f64]) {
    for ci in 0..c {
        for ki in 0..k {
            let row = (ci * k + ki) * lout;
            for t in 0..lout {
                x[ci * l + t * stride + ki * dilation] += cols[row + t];
            }
        }
    }
}
