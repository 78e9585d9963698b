//! Reverse-mode automatic differentiation over a flat operation tape.
//!
//! Every tensor lives on a [`Tape`]: leaves hold inputs and parameters,
//! every operation appends a node whose inputs precede it, so the tape order
//! is already topological. `backward` walks the tape once in reverse and
//! accumulates gradients additively into each `requires_grad` node until
//! `zero_grads` clears them. All iteration orders are fixed, which makes
//! forward values and gradients bit-identical across runs.
//!
//! Broadcasting is trailing-axis only: shapes are aligned from the right and
//! each pair of extents must match or be 1. Anything else needs an explicit
//! `reshape`.

use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Handle to a tensor node on a specific tape.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

fn pad_left(shape: &[usize], rank: usize) -> Vec<usize> {
    let mut p = vec![1usize; rank - shape.len()];
    p.extend_from_slice(shape);
    p
}

fn ensure_finite<T: Scalar>(op: &str, vals: &[T]) -> Result<()> {
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: op.to_string() });
    }
    Ok(())
}

/// Shape of `a ⊕ b` under trailing-axis broadcasting.
pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let (ap, bp) = (pad_left(a, rank), pad_left(b, rank));
    let mut out = vec![0usize; rank];
    for d in 0..rank {
        out[d] = match (ap[d], bp[d]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::Shape {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Elementwise combine with trailing-axis broadcasting.
fn map2<T: Scalar>(
    a: &[T],
    ash: &[usize],
    b: &[T],
    bsh: &[usize],
    out_sh: &[usize],
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    if ash == bsh {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    if b.len() == 1 {
        return a.iter().map(|&x| f(x, b[0])).collect();
    }
    if a.len() == 1 {
        return b.iter().map(|&y| f(a[0], y)).collect();
    }
    let rank = out_sh.len();
    let (ap, bp) = (pad_left(ash, rank), pad_left(bsh, rank));
    let (ast, bst, ost) = (strides(&ap), strides(&bp), strides(out_sh));
    let n = numel(out_sh);
    let mut out = Vec::with_capacity(n);
    for idx in 0..n {
        let (mut ai, mut bi, mut rem) = (0usize, 0usize, idx);
        for d in 0..rank {
            let c = rem / ost[d];
            rem %= ost[d];
            ai += (c % ap[d]) * ast[d];
            bi += (c % bp[d]) * bst[d];
        }
        out.push(f(a[ai], b[bi]));
    }
    out
}

/// Sums `g` (of shape `gsh`) down to `target` shape, undoing a broadcast.
fn reduce_to_shape<T: Scalar>(g: &[T], gsh: &[usize], target: &[usize]) -> Vec<T> {
    if gsh == target {
        return g.to_vec();
    }
    let rank = gsh.len();
    let tp = pad_left(target, rank);
    let (gst, tst) = (strides(gsh), strides(&tp));
    let mut out = vec![T::zero(); numel(target)];
    for (idx, &gv) in g.iter().enumerate() {
        let (mut ti, mut rem) = (0usize, idx);
        for d in 0..rank {
            let c = rem / gst[d];
            rem %= gst[d];
            ti += (c % tp[d]) * tst[d];
        }
        out[ti] = out[ti] + gv;
    }
    out
}

fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
    out
}

fn transpose_raw<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Matmul { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    PowScalar { a: TensorId, exponent: T },
    Ln { a: TensorId },
    Relu { a: TensorId },
    Prelu { a: TensorId, slope: TensorId },
    SoftmaxLast { a: TensorId },
    LogSoftmaxLast { a: TensorId },
    SumAxis { a: TensorId, axis: usize },
    SumAll { a: TensorId },
    MeanAll { a: TensorId },
    Concat { parts: Vec<TensorId>, axis: usize },
    GatherRows { a: TensorId, rows: Vec<usize> },
    ReplaceRows { base: TensorId, rows: Vec<usize>, src: TensorId },
    RepeatRows { a: TensorId, count: usize },
    Reshape { a: TensorId },
    L2NormRows { a: TensorId },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::PowScalar { .. } => "pow_scalar",
            Op::Ln { .. } => "ln",
            Op::Relu { .. } => "relu",
            Op::Prelu { .. } => "prelu",
            Op::SoftmaxLast { .. } => "softmax_last",
            Op::LogSoftmaxLast { .. } => "log_softmax_last",
            Op::SumAxis { .. } => "sum_axis",
            Op::SumAll { .. } => "sum_all",
            Op::MeanAll { .. } => "mean_all",
            Op::Concat { .. } => "concat",
            Op::GatherRows { .. } => "gather_rows",
            Op::ReplaceRows { .. } => "replace_rows",
            Op::RepeatRows { .. } => "repeat_rows",
            Op::Reshape { .. } => "reshape",
            Op::L2NormRows { .. } => "l2_norm_rows",
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Operation record: append-only, topologically ordered.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: TensorId) -> &[T] {
        &self.nodes[id.0].value
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self, id: TensorId) -> T {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value[0]
    }

    pub fn grad(&self, id: TensorId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(
        &mut self,
        label: &'static str,
        shape: Vec<usize>,
        value: Vec<T>,
        requires_grad: bool,
        op: Op<T>,
    ) -> Result<TensorId> {
        debug_assert_eq!(numel(&shape), value.len(), "{label}: shape/data mismatch");
        ensure_finite(label, &value)?;
        self.nodes.push(Node {
            shape,
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(TensorId(self.nodes.len() - 1))
    }

    // ── Leaves ──────────────────────────────────────────────────────────

    pub fn leaf(&mut self, value: Vec<T>, shape: &[usize], requires_grad: bool) -> Result<TensorId> {
        if numel(shape) != value.len() {
            return Err(Error::Shape {
                op: "leaf",
                lhs: shape.to_vec(),
                rhs: vec![value.len()],
            });
        }
        self.push("leaf", shape.to_vec(), value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Vec<T>, shape: &[usize]) -> Result<TensorId> {
        self.leaf(value, shape, false)
    }

    pub fn constant_f64(&mut self, value: &[f64], shape: &[usize]) -> Result<TensorId> {
        let v = value.iter().map(|&x| T::from_f64(x)).collect();
        self.constant(v, shape)
    }

    /// Rank-0 non-differentiable constant.
    pub fn scalar(&mut self, v: T) -> Result<TensorId> {
        self.constant(vec![v], &[])
    }

    /// Copies the value into a fresh non-differentiable leaf, cutting the
    /// gradient path (stop-gradient).
    pub fn detach(&mut self, a: TensorId) -> Result<TensorId> {
        let value = self.nodes[a.0].value.clone();
        let shape = self.nodes[a.0].shape.clone();
        self.push("detach", shape, value, false, Op::Leaf)
    }

    // ── Primitive operations ────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ash, bsh) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: ash,
                rhs: bsh,
            });
        }
        let (m, k, n) = (ash[0], ash[1], bsh[1]);
        let value = matmul_raw(self.value(a), self.value(b), m, k, n);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push("matmul", vec![m, n], value, rg, Op::Matmul { a, b })
    }

    fn elementwise(
        &mut self,
        label: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<TensorId> {
        let out_sh = broadcast_shape(label, self.shape(a), self.shape(b))?;
        let value = map2(
            self.value(a),
            self.shape(a),
            self.value(b),
            self.shape(b),
            &out_sh,
            f,
        );
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(label, out_sh, value, rg, op)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn add_scalar(&mut self, a: TensorId, c: T) -> Result<TensorId> {
        let c = self.scalar(c)?;
        self.add(a, c)
    }

    pub fn scale(&mut self, a: TensorId, c: T) -> Result<TensorId> {
        let c = self.scalar(c)?;
        self.mul(a, c)
    }

    pub fn neg(&mut self, a: TensorId) -> Result<TensorId> {
        self.scale(a, -T::one())
    }

    /// Elementwise `x^p` for a fixed real exponent.
    pub fn pow_scalar(&mut self, a: TensorId, exponent: T) -> Result<TensorId> {
        let value = self.value(a).iter().map(|&x| x.powf(exponent)).collect();
        let (shape, rg) = (self.shape(a).to_vec(), self.requires_grad(a));
        self.push("pow_scalar", shape, value, rg, Op::PowScalar { a, exponent })
    }

    pub fn ln(&mut self, a: TensorId) -> Result<TensorId> {
        let value = self.value(a).iter().map(|&x| x.ln()).collect();
        let (shape, rg) = (self.shape(a).to_vec(), self.requires_grad(a));
        self.push("ln", shape, value, rg, Op::Ln { a })
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        let z = T::zero();
        let value = self
            .value(a)
            .iter()
            .map(|&x| if x > z { x } else { z })
            .collect();
        let (shape, rg) = (self.shape(a).to_vec(), self.requires_grad(a));
        self.push("relu", shape, value, rg, Op::Relu { a })
    }

    /// PReLU with a one-element slope tensor; the slope may be learnable.
    pub fn prelu(&mut self, a: TensorId, slope: TensorId) -> Result<TensorId> {
        if numel(self.shape(slope)) != 1 {
            return Err(Error::Shape {
                op: "prelu",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(slope).to_vec(),
            });
        }
        let al = self.value(slope)[0];
        let z = T::zero();
        let value = self
            .value(a)
            .iter()
            .map(|&x| if x > z { x } else { al * x })
            .collect();
        let rg = self.requires_grad(a) || self.requires_grad(slope);
        let shape = self.shape(a).to_vec();
        self.push("prelu", shape, value, rg, Op::Prelu { a, slope })
    }

    fn rows_last(&self, label: &'static str, a: TensorId) -> Result<(usize, usize)> {
        let sh = self.shape(a);
        if sh.is_empty() || *sh.last().unwrap() == 0 {
            return Err(Error::Shape {
                op: label,
                lhs: sh.to_vec(),
                rhs: vec![],
            });
        }
        let last = *sh.last().unwrap();
        Ok((numel(sh) / last, last))
    }

    pub fn softmax_last(&mut self, a: TensorId) -> Result<TensorId> {
        let (rows, last) = self.rows_last("softmax_last", a)?;
        let x = self.value(a);
        let mut value = Vec::with_capacity(x.len());
        for r in 0..rows {
            let row = &x[r * last..(r + 1) * last];
            let m = row.iter().cloned().fold(row[0], T::max);
            let exps: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
            let s: T = exps.iter().cloned().sum();
            value.extend(exps.iter().map(|&e| e / s));
        }
        let (shape, rg) = (self.shape(a).to_vec(), self.requires_grad(a));
        self.push("softmax_last", shape, value, rg, Op::SoftmaxLast { a })
    }

    pub fn log_softmax_last(&mut self, a: TensorId) -> Result<TensorId> {
        let (rows, last) = self.rows_last("log_softmax_last", a)?;
        let x = self.value(a);
        let mut value = Vec::with_capacity(x.len());
        for r in 0..rows {
            let row = &x[r * last..(r + 1) * last];
            let m = row.iter().cloned().fold(row[0], T::max);
            let lse: T = row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            value.extend(row.iter().map(|&v| v - m - lse));
        }
        let (shape, rg) = (self.shape(a).to_vec(), self.requires_grad(a));
        self.push(
            "log_softmax_last",
            shape,
            value,
            rg,
            Op::LogSoftmaxLast { a },
        )
    }

    pub fn sum_axis(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        let sh = self.shape(a).to_vec();
        if axis >= sh.len() {
            return Err(Error::Shape {
                op: "sum_axis",
                lhs: sh,
                rhs: vec![axis],
            });
        }
        let outer: usize = sh[..axis].iter().product();
        let mid = sh[axis];
        let inner: usize = sh[axis + 1..].iter().product();
        let x = self.value(a);
        let mut value = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for m in 0..mid {
                let base = (o * mid + m) * inner;
                let obase = o * inner;
                for i in 0..inner {
                    value[obase + i] = value[obase + i] + x[base + i];
                }
            }
        }
        let mut out_sh = sh.clone();
        out_sh.remove(axis);
        let rg = self.requires_grad(a);
        self.push("sum_axis", out_sh, value, rg, Op::SumAxis { a, axis })
    }

    pub fn mean_axis(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        let n = self.shape(a).get(axis).copied().unwrap_or(0).max(1);
        let s = self.sum_axis(a, axis)?;
        self.scale(s, T::one() / T::from_f64(n as f64))
    }

    pub fn sum_all(&mut self, a: TensorId) -> Result<TensorId> {
        let value = vec![self.value(a).iter().cloned().sum::<T>()];
        let rg = self.requires_grad(a);
        self.push("sum_all", vec![], value, rg, Op::SumAll { a })
    }

    pub fn mean_all(&mut self, a: TensorId) -> Result<TensorId> {
        let n = T::from_f64(self.value(a).len().max(1) as f64);
        let value = vec![self.value(a).iter().cloned().sum::<T>() / n];
        let rg = self.requires_grad(a);
        self.push("mean_all", vec![], value, rg, Op::MeanAll { a })
    }

    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Numeric("concat of zero tensors".into()));
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::Shape {
                op: "concat",
                lhs: first,
                rhs: vec![axis],
            });
        }
        let mut axis_total = 0usize;
        for &p in parts {
            let sh = self.shape(p);
            let compatible = sh.len() == first.len()
                && sh
                    .iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: first,
                    rhs: sh.to_vec(),
                });
            }
            axis_total += sh[axis];
        }
        let mut out_sh = first.clone();
        out_sh[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut value = vec![T::zero(); numel(&out_sh)];
        let mut offset = 0usize;
        for &p in parts {
            let mid = self.shape(p)[axis];
            let x = self.value(p);
            for o in 0..outer {
                let src = o * mid * inner;
                let dst = (o * axis_total + offset) * inner;
                value[dst..dst + mid * inner].copy_from_slice(&x[src..src + mid * inner]);
            }
            offset += mid;
        }
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        self.push(
            "concat",
            out_sh,
            value,
            rg,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        )
    }

    /// Gathers rows (first-axis slices) in the given order; duplicates allowed.
    pub fn gather_rows(&mut self, a: TensorId, rows: &[usize]) -> Result<TensorId> {
        let sh = self.shape(a).to_vec();
        if sh.is_empty() || rows.is_empty() {
            return Err(Error::Numeric(format!(
                "gather_rows needs rank >= 1 and at least one row (shape {sh:?}, {} rows)",
                rows.len()
            )));
        }
        for &r in rows {
            if r >= sh[0] {
                return Err(Error::Numeric(format!(
                    "gather_rows: row index {r} out of range for {} rows",
                    sh[0]
                )));
            }
        }
        let rs = numel(&sh) / sh[0];
        let x = self.value(a);
        let mut value = Vec::with_capacity(rows.len() * rs);
        for &r in rows {
            value.extend_from_slice(&x[r * rs..(r + 1) * rs]);
        }
        let mut out_sh = sh.clone();
        out_sh[0] = rows.len();
        let rg = self.requires_grad(a);
        self.push(
            "gather_rows",
            out_sh,
            value,
            rg,
            Op::GatherRows {
                a,
                rows: rows.to_vec(),
            },
        )
    }

    /// Returns `base` with row `rows[i]` replaced by row `i` of `src`.
    /// Row indices must be distinct and in range.
    pub fn replace_rows(&mut self, base: TensorId, rows: &[usize], src: TensorId) -> Result<TensorId> {
        let bsh = self.shape(base).to_vec();
        let ssh = self.shape(src).to_vec();
        let mut expect = bsh.clone();
        if expect.is_empty() || rows.is_empty() {
            return Err(Error::Numeric(
                "replace_rows needs rank >= 1 and at least one row".into(),
            ));
        }
        expect[0] = rows.len();
        if ssh != expect {
            return Err(Error::Shape {
                op: "replace_rows",
                lhs: expect,
                rhs: ssh,
            });
        }
        let mut seen = vec![false; bsh[0]];
        for &r in rows {
            if r >= bsh[0] {
                return Err(Error::Numeric(format!(
                    "replace_rows: row index {r} out of range for {} rows",
                    bsh[0]
                )));
            }
            if seen[r] {
                return Err(Error::Numeric(format!(
                    "replace_rows: duplicate row index {r}"
                )));
            }
            seen[r] = true;
        }
        let rs = numel(&bsh) / bsh[0];
        let mut value = self.value(base).to_vec();
        let s = self.value(src);
        for (i, &r) in rows.iter().enumerate() {
            value[r * rs..(r + 1) * rs].copy_from_slice(&s[i * rs..(i + 1) * rs]);
        }
        let rg = self.requires_grad(base) || self.requires_grad(src);
        self.push(
            "replace_rows",
            bsh,
            value,
            rg,
            Op::ReplaceRows {
                base,
                rows: rows.to_vec(),
                src,
            },
        )
    }

    /// Tiles a `[d]` or `[1, d]` tensor into `count` identical rows.
    pub fn repeat_rows(&mut self, a: TensorId, count: usize) -> Result<TensorId> {
        let sh = self.shape(a).to_vec();
        let d = match sh.as_slice() {
            [d] => *d,
            [1, d] => *d,
            _ => {
                return Err(Error::Shape {
                    op: "repeat_rows",
                    lhs: sh,
                    rhs: vec![count],
                })
            }
        };
        if count == 0 {
            return Err(Error::Numeric("repeat_rows: count must be >= 1".into()));
        }
        let x = self.value(a);
        let mut value = Vec::with_capacity(count * d);
        for _ in 0..count {
            value.extend_from_slice(x);
        }
        let rg = self.requires_grad(a);
        self.push(
            "repeat_rows",
            vec![count, d],
            value,
            rg,
            Op::RepeatRows { a, count },
        )
    }

    pub fn reshape(&mut self, a: TensorId, shape: &[usize]) -> Result<TensorId> {
        if numel(shape) != self.value(a).len() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let value = self.value(a).to_vec();
        let rg = self.requires_grad(a);
        self.push("reshape", shape.to_vec(), value, rg, Op::Reshape { a })
    }

    /// L2 norm over the last axis: `[.., d] -> [..]`.
    pub fn l2_norm_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let (rows, last) = self.rows_last("l2_norm_rows", a)?;
        let x = self.value(a);
        let mut value = Vec::with_capacity(rows);
        for r in 0..rows {
            let s: T = x[r * last..(r + 1) * last].iter().map(|&v| v * v).sum();
            value.push(s.sqrt());
        }
        let out_sh = self.shape(a)[..self.shape(a).len() - 1].to_vec();
        let rg = self.requires_grad(a);
        self.push("l2_norm_rows", out_sh, value, rg, Op::L2NormRows { a })
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients of `requires_grad` nodes
    /// accumulate additively; call `zero_grads` between unrelated passes.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        let li = loss.0;
        if numel(&self.nodes[li].shape) != 1 {
            return Err(Error::Numeric(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[li].shape
            )));
        }
        let mut pass: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        pass[li] = Some(vec![T::one()]);
        for idx in (0..=li).rev() {
            let Some(g) = pass[idx].take() else { continue };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    op: format!("backward({})", self.nodes[idx].op.name()),
                });
            }
            let op = self.nodes[idx].op.clone();
            self.propagate(idx, &g, &op, &mut pass);
            if self.nodes[idx].requires_grad {
                let node = &mut self.nodes[idx];
                let len = node.value.len();
                let grad = node.grad.get_or_insert_with(|| vec![T::zero(); len]);
                for (d, s) in grad.iter_mut().zip(&g) {
                    *d = *d + *s;
                }
            }
        }
        Ok(())
    }

    fn want(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: &[T], op: &Op<T>, pass: &mut [Option<Vec<T>>]) {
        fn acc<T: Scalar>(pass: &mut [Option<Vec<T>>], id: TensorId, contrib: Vec<T>) {
            match &mut pass[id.0] {
                Some(buf) => {
                    for (d, s) in buf.iter_mut().zip(&contrib) {
                        *d = *d + *s;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        }
        let out_sh = &self.nodes[idx].shape;
        match op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (ash, bsh) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
                let (m, k, n) = (ash[0], ash[1], bsh[1]);
                if self.want(*a) {
                    let bt = transpose_raw(&self.nodes[b.0].value, k, n);
                    acc(pass, *a, matmul_raw(g, &bt, m, n, k));
                }
                if self.want(*b) {
                    let at = transpose_raw(&self.nodes[a.0].value, m, k);
                    acc(pass, *b, matmul_raw(&at, g, k, m, n));
                }
            }
            Op::Add { a, b } => {
                if self.want(*a) {
                    acc(pass, *a, reduce_to_shape(g, out_sh, &self.nodes[a.0].shape));
                }
                if self.want(*b) {
                    acc(pass, *b, reduce_to_shape(g, out_sh, &self.nodes[b.0].shape));
                }
            }
            Op::Sub { a, b } => {
                if self.want(*a) {
                    acc(pass, *a, reduce_to_shape(g, out_sh, &self.nodes[a.0].shape));
                }
                if self.want(*b) {
                    let mut r = reduce_to_shape(g, out_sh, &self.nodes[b.0].shape);
                    for v in &mut r {
                        *v = -*v;
                    }
                    acc(pass, *b, r);
                }
            }
            Op::Mul { a, b } => {
                if self.want(*a) {
                    let prod = map2(
                        g,
                        out_sh,
                        &self.nodes[b.0].value,
                        &self.nodes[b.0].shape,
                        out_sh,
                        |x, y| x * y,
                    );
                    acc(
                        pass,
                        *a,
                        reduce_to_shape(&prod, out_sh, &self.nodes[a.0].shape),
                    );
                }
                if self.want(*b) {
                    let prod = map2(
                        g,
                        out_sh,
                        &self.nodes[a.0].value,
                        &self.nodes[a.0].shape,
                        out_sh,
                        |x, y| x * y,
                    );
                    acc(
                        pass,
                        *b,
                        reduce_to_shape(&prod, out_sh, &self.nodes[b.0].shape),
                    );
                }
            }
            Op::PowScalar { a, exponent } => {
                if self.want(*a) {
                    let p = *exponent;
                    let x = &self.nodes[a.0].value;
                    let contrib = g
                        .iter()
                        .zip(x)
                        .map(|(&gv, &xv)| gv * p * xv.powf(p - T::one()))
                        .collect();
                    acc(pass, *a, contrib);
                }
            }
            Op::Ln { a } => {
                if self.want(*a) {
                    let x = &self.nodes[a.0].value;
                    acc(pass, *a, g.iter().zip(x).map(|(&gv, &xv)| gv / xv).collect());
                }
            }
            Op::Relu { a } => {
                if self.want(*a) {
                    let z = T::zero();
                    let x = &self.nodes[a.0].value;
                    let contrib = g
                        .iter()
                        .zip(x)
                        .map(|(&gv, &xv)| if xv > z { gv } else { z })
                        .collect();
                    acc(pass, *a, contrib);
                }
            }
            Op::Prelu { a, slope } => {
                let al = self.nodes[slope.0].value[0];
                let z = T::zero();
                let x = &self.nodes[a.0].value;
                if self.want(*a) {
                    let contrib = g
                        .iter()
                        .zip(x)
                        .map(|(&gv, &xv)| if xv > z { gv } else { gv * al })
                        .collect();
                    acc(pass, *a, contrib);
                }
                if self.want(*slope) {
                    let ds: T = g
                        .iter()
                        .zip(x)
                        .filter(|(_, &xv)| xv <= z)
                        .map(|(&gv, &xv)| gv * xv)
                        .sum();
                    acc(pass, *slope, vec![ds]);
                }
            }
            Op::SoftmaxLast { a } => {
                if self.want(*a) {
                    let last = *out_sh.last().unwrap();
                    let s = &self.nodes[idx].value;
                    let mut contrib = Vec::with_capacity(s.len());
                    for r in 0..s.len() / last {
                        let srow = &s[r * last..(r + 1) * last];
                        let grow = &g[r * last..(r + 1) * last];
                        let dot: T = srow.iter().zip(grow).map(|(&sv, &gv)| sv * gv).sum();
                        contrib.extend(srow.iter().zip(grow).map(|(&sv, &gv)| sv * (gv - dot)));
                    }
                    acc(pass, *a, contrib);
                }
            }
            Op::LogSoftmaxLast { a } => {
                if self.want(*a) {
                    let last = *out_sh.last().unwrap();
                    let y = &self.nodes[idx].value;
                    let mut contrib = Vec::with_capacity(y.len());
                    for r in 0..y.len() / last {
                        let yrow = &y[r * last..(r + 1) * last];
                        let grow = &g[r * last..(r + 1) * last];
                        let sg: T = grow.iter().cloned().sum();
                        contrib.extend(
                            yrow.iter()
                                .zip(grow)
                                .map(|(&yv, &gv)| gv - yv.exp() * sg),
                        );
                    }
                    acc(pass, *a, contrib);
                }
            }
            Op::SumAxis { a, axis } => {
                if self.want(*a) {
                    let ash = &self.nodes[a.0].shape;
                    let outer: usize = ash[..*axis].iter().product();
                    let mid = ash[*axis];
                    let inner: usize = ash[*axis + 1..].iter().product();
                    let mut contrib = vec![T::zero(); numel(ash)];
                    for o in 0..outer {
                        for m in 0..mid {
                            let dst = (o * mid + m) * inner;
                            let src = o * inner;
                            for i in 0..inner {
                                contrib[dst + i] = g[src + i];
                            }
                        }
                    }
                    acc(pass, *a, contrib);
                }
            }
            Op::SumAll { a } => {
                if self.want(*a) {
                    acc(pass, *a, vec![g[0]; self.nodes[a.0].value.len()]);
                }
            }
            Op::MeanAll { a } => {
                if self.want(*a) {
                    let n = self.nodes[a.0].value.len();
                    let v = g[0] / T::from_f64(n as f64);
                    acc(pass, *a, vec![v; n]);
                }
            }
            Op::Concat { parts, axis } => {
                let axis_total = out_sh[*axis];
                let outer: usize = out_sh[..*axis].iter().product();
                let inner: usize = out_sh[*axis + 1..].iter().product();
                let mut offset = 0usize;
                for &p in parts {
                    let mid = self.nodes[p.0].shape[*axis];
                    if self.want(p) {
                        let mut contrib = vec![T::zero(); self.nodes[p.0].value.len()];
                        for o in 0..outer {
                            let src = (o * axis_total + offset) * inner;
                            let dst = o * mid * inner;
                            contrib[dst..dst + mid * inner]
                                .copy_from_slice(&g[src..src + mid * inner]);
                        }
                        acc(pass, p, contrib);
                    }
                    offset += mid;
                }
            }
            Op::GatherRows { a, rows } => {
                if self.want(*a) {
                    let ash = &self.nodes[a.0].shape;
                    let rs = numel(ash) / ash[0];
                    let mut contrib = vec![T::zero(); numel(ash)];
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..rs {
                            contrib[r * rs + j] = contrib[r * rs + j] + g[i * rs + j];
                        }
                    }
                    acc(pass, *a, contrib);
                }
            }
            Op::ReplaceRows { base, rows, src } => {
                let bsh = &self.nodes[base.0].shape;
                let rs = numel(bsh) / bsh[0];
                if self.want(*base) {
                    let mut contrib = g.to_vec();
                    for &r in rows {
                        for v in &mut contrib[r * rs..(r + 1) * rs] {
                            *v = T::zero();
                        }
                    }
                    acc(pass, *base, contrib);
                }
                if self.want(*src) {
                    let mut contrib = Vec::with_capacity(rows.len() * rs);
                    for &r in rows {
                        contrib.extend_from_slice(&g[r * rs..(r + 1) * rs]);
                    }
                    acc(pass, *src, contrib);
                }
            }
            Op::RepeatRows { a, count } => {
                if self.want(*a) {
                    let d = self.nodes[a.0].value.len();
                    let mut contrib = vec![T::zero(); d];
                    for r in 0..*count {
                        for j in 0..d {
                            contrib[j] = contrib[j] + g[r * d + j];
                        }
                    }
                    acc(pass, *a, contrib);
                }
            }
            Op::Reshape { a } => {
                if self.want(*a) {
                    acc(pass, *a, g.to_vec());
                }
            }
            Op::L2NormRows { a } => {
                if self.want(*a) {
                    let ash = &self.nodes[a.0].shape;
                    let last = *ash.last().unwrap();
                    let x = &self.nodes[a.0].value;
                    let norms = &self.nodes[idx].value;
                    let mut contrib = vec![T::zero(); x.len()];
                    for (r, &nv) in norms.iter().enumerate() {
                        if nv == T::zero() {
                            continue; // zero row: subgradient 0
                        }
                        for c in 0..last {
                            contrib[r * last + c] = g[r] * x[r * last + c] / nv;
                        }
                    }
                    acc(pass, *a, contrib);
                }
            }
        }
    }
}
