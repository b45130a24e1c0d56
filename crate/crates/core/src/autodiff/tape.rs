//! Tape-based reverse-mode differentiation.
//!
//! Every forward primitive appends a node to the tape; node inputs always
//! precede the node, so a single reverse sweep visits each node once.

use std::collections::HashMap;
use std::rc::Rc;

use super::tensor::{broadcast_offsets, broadcast_shape, gemm, split_axis, strides, Real, Tensor};
use crate::error::{Error, Result};

/// Layer-norm epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Norms at or below this are rejected by [`Tape::l2_normalize`].
pub const NORMALIZE_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var },
    Bmm { a: Var, b: Var, trans_b: bool },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, factor: T },
    AddScalar { a: Var },
    Exp { a: Var },
    Log { a: Var },
    Relu { a: Var },
    Gelu { a: Var },
    Permute { a: Var, perm: Vec<usize> },
    Reshape { a: Var },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { a: Var, axis: usize, start: usize },
    Mean { a: Var, axis: usize },
    SumAll { a: Var },
    Softmax { a: Var, axis: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, mean: Vec<T>, rstd: Vec<T> },
    Embedding { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<T> },
    L2Normalize { a: Var, norms: Vec<T> },
    MaskedFill { a: Var, mask: Rc<[bool]> },
    Clamp { a: Var, lo: T, hi: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of executed primitives.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
    params: HashMap<usize, Var>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shapes(list: &[&[usize]]) -> String {
    list.iter()
        .map(|s| format!("{s:?}"))
        .collect::<Vec<_>>()
        .join(" vs ")
}

#[inline]
fn gelu_parts<T: Real>(x: T) -> (T, T) {
    // gelu(x) = 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    let k = T::c((2.0 / std::f64::consts::PI).sqrt());
    let c = T::c(0.044715);
    let half = T::c(0.5);
    let u = k * (x + c * x * x * x);
    let th = u.tanh();
    let y = half * x * (T::one() + th);
    let du = k * (T::one() + T::c(3.0) * c * x * x);
    let dy = half * (T::one() + th) + half * x * (T::one() - th * th) * du;
    (y, dy)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for parameter `id`, created once per tape.
    pub fn param_leaf(&mut self, id: usize, value: &Tensor<T>, trainable: bool) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = if trainable {
            self.leaf(value.clone())
        } else {
            self.constant(value.clone())
        };
        self.params.insert(id, v);
        v
    }

    pub(crate) fn param_vars(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.params.iter().map(|(&k, &v)| (k, v))
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

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    // ---- forward primitives ----

    /// `a [.., k] · b [k, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::shape("matmul", shapes(&[sa, sb])));
        }
        let k = sb[0];
        let n = sb[1];
        let m = self.value(a).numel() / k.max(1);
        let mut out_shape = sa[..sa.len() - 1].to_vec();
        out_shape.push(n);
        let mut out = vec![T::zero(); m * n];
        gemm(
            false,
            false,
            m,
            k,
            n,
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            false,
        );
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(value, Op::MatMul { a, b }, &[a, b]))
    }

    /// Batched `a [B, m, k] · b [B, k, n]`, or `b [B, n, k]` transposed.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = sa.len() == 3
            && sb.len() == 3
            && sa[0] == sb[0]
            && if trans_b { sa[2] == sb[2] } else { sa[2] == sb[1] };
        if !ok {
            return Err(Error::shape("bmm", shapes(&[sa, sb])));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let mut out = vec![T::zero(); batch * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            gemm(
                false,
                trans_b,
                m,
                k,
                n,
                &da[i * m * k..(i + 1) * m * k],
                &db[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let value = Tensor::new(&[batch, m, n], out)?;
        Ok(self.push(value, Op::Bmm { a, b, trans_b }, &[a, b]))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<(Tensor<T>, [Var; 2])> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out_shape =
            broadcast_shape(sa, sb).ok_or_else(|| Error::shape(name, shapes(&[sa, sb])))?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let data: Vec<T> = if sa == sb {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else if sa == out_shape.as_slice() && out_shape.ends_with(sb) {
            let nb = db.len();
            da.iter()
                .enumerate()
                .map(|(i, &x)| f(x, db[i % nb]))
                .collect()
        } else {
            let oa = broadcast_offsets(sa, &out_shape);
            let ob = broadcast_offsets(sb, &out_shape);
            oa.iter().zip(&ob).map(|(&i, &j)| f(da[i], db[j])).collect()
        };
        Ok((Tensor::new(&out_shape, data)?, [a, b]))
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, ins) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add { a, b }, &ins))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, ins) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub { a, b }, &ins))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, ins) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul { a, b }, &ins))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let f = T::c(factor);
        let x = self.value(a);
        let v = Tensor::new(x.shape(), x.data().iter().map(|&e| e * f).collect()).unwrap();
        self.push(v, Op::Scale { a, factor: f }, &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let c = T::c(c);
        let x = self.value(a);
        let v = Tensor::new(x.shape(), x.data().iter().map(|&e| e + c).collect()).unwrap();
        self.push(v, Op::AddScalar { a }, &[a])
    }

    fn unary(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let x = self.value(a);
        Tensor::new(x.shape(), x.data().iter().map(|&e| f(e)).collect()).unwrap()
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.unary(a, |e| e.exp());
        self.push(v, Op::Exp { a }, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|e| **e <= T::zero()) {
            return Err(Error::domain("log", format!("non-positive input {:?}", bad)));
        }
        let v = self.unary(a, |e| e.ln());
        Ok(self.push(v, Op::Log { a }, &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.unary(a, |e| e.max(T::zero()));
        self.push(v, Op::Relu { a }, &[a])
    }

    /// Tanh-approximated GELU:
    /// `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.unary(a, |e| gelu_parts(e).0);
        self.push(v, Op::Gelu { a }, &[a])
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let mut seen = vec![false; sa.len()];
        if perm.len() != sa.len() || perm.iter().any(|&p| p >= sa.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", format!("{sa:?} by {perm:?}")));
        }
        let v = permute_tensor(self.value(a), perm);
        Ok(self.push(v, Op::Permute { a, perm: perm.to_vec() }, &[a]))
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, a: Var, d0: usize, d1: usize) -> Result<Var> {
        let rank = self.shape(a).len();
        if d0 >= rank || d1 >= rank {
            return Err(Error::shape("transpose", format!("{:?} axes {d0},{d1}", self.shape(a))));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(d0, d1);
        self.permute(a, &perm)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if shape.iter().product::<usize>() != x.numel() {
            return Err(Error::shape("reshape", shapes(&[x.shape(), shape])));
        }
        let v = Tensor::new(shape, x.data().to_vec())?;
        Ok(self.push(v, Op::Reshape { a }, &[a]))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("{base:?} axis {axis}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let ok = s.len() == base.len()
                && s.iter().enumerate().all(|(i, &d)| i == axis || d == base[i]);
            if !ok {
                return Err(Error::shape("concat", shapes(&[&base, s])));
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = split_axis(&out_shape, axis);
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// Elements `start..start+len` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() || start + len > sa[axis] {
            return Err(Error::shape(
                "slice",
                format!("{sa:?} axis {axis} range {start}..{}", start + len),
            ));
        }
        let (outer, l, inner) = split_axis(&sa, axis);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * l * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = sa;
        shape[axis] = len;
        let v = Tensor::new(&shape, out)?;
        Ok(self.push(v, Op::Slice { a, axis, start }, &[a]))
    }

    /// Mean over `axis`, removing it.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() || sa[axis] == 0 {
            return Err(Error::shape("mean", format!("{sa:?} axis {axis}")));
        }
        let (outer, l, inner) = split_axis(&sa, axis);
        let src = self.value(a).data();
        let scale = T::one() / T::c(l as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for j in 0..l {
                let row = &src[(o * l + j) * inner..(o * l + j + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(row) {
                    *d = *d + s;
                }
            }
            dst.iter_mut().for_each(|d| *d = *d * scale);
        }
        let mut shape = sa;
        shape.remove(axis);
        let v = Tensor::new(&shape, out)?;
        Ok(self.push(v, Op::Mean { a, axis }, &[a]))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::SumAll { a }, &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel().max(1);
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() {
            return Err(Error::shape("softmax", format!("{sa:?} axis {axis}")));
        }
        let (outer, l, inner) = split_axis(&sa, axis);
        let src = self.value(a).data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * l + j) * inner + i;
                let mut mx = T::neg_infinity();
                for j in 0..l {
                    mx = mx.max(src[at(j)]);
                }
                let mut sum = T::zero();
                for j in 0..l {
                    let e = (src[at(j)] - mx).exp();
                    out[at(j)] = e;
                    sum = sum + e;
                }
                for j in 0..l {
                    out[at(j)] = out[at(j)] / sum;
                }
            }
        }
        let v = Tensor::new(&sa, out)?;
        Ok(self.push(v, Op::Softmax { a, axis }, &[a]))
    }

    /// Layer normalization over the last axis with gain and bias of that
    /// axis' width.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let w = *sx.last().ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
        if self.shape(gain) != [w] || self.shape(bias) != [w] {
            return Err(Error::shape(
                "layer_norm",
                shapes(&[&sx, self.shape(gain), self.shape(bias)]),
            ));
        }
        let rows = self.value(x).numel() / w.max(1);
        let (src, g, b) = (
            self.value(x).data(),
            self.value(gain).data(),
            self.value(bias).data(),
        );
        let eps = T::c(LAYER_NORM_EPS);
        let inv_w = T::one() / T::c(w as f64);
        let mut out = vec![T::zero(); src.len()];
        let mut means = Vec::with_capacity(rows);
        let mut rstds = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &src[r * w..(r + 1) * w];
            let mean = row.iter().copied().sum::<T>() * inv_w;
            let var = row.iter().map(|&e| (e - mean) * (e - mean)).sum::<T>() * inv_w;
            let rstd = T::one() / (var + eps).sqrt();
            for c in 0..w {
                out[r * w + c] = (row[c] - mean) * rstd * g[c] + b[c];
            }
            means.push(mean);
            rstds.push(rstd);
        }
        let v = Tensor::new(&sx, out)?;
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean: means,
                rstd: rstds,
            },
            &[x, gain, bias],
        ))
    }

    /// Gathers rows of `table [V, w]`; output shape is `ids_shape ++ [w]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], ids_shape: &[usize]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 || ids_shape.iter().product::<usize>() != ids.len() {
            return Err(Error::shape(
                "embedding",
                format!("table {st:?}, {} ids as {ids_shape:?}", ids.len()),
            ));
        }
        let (vocab, w) = (st[0], st[1]);
        if let Some(bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::shape(
                "embedding",
                format!("id {bad} out of range for table {st:?}"),
            ));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * w);
        for &i in ids {
            out.extend_from_slice(&src[i * w..(i + 1) * w]);
        }
        let mut shape = ids_shape.to_vec();
        shape.push(w);
        let v = Tensor::new(&shape, out)?;
        Ok(self.push(
            v,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Per-row negative log-likelihood of `logits [N, C]`; rows whose target
    /// is `None` contribute zero.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let sl = self.shape(logits).to_vec();
        if sl.len() != 2 || sl[0] != targets.len() {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {sl:?} vs {} targets", targets.len()),
            ));
        }
        let (n, c) = (sl[0], sl[1]);
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= c) {
            return Err(Error::shape(
                "cross_entropy",
                format!("target {bad} out of range for {c} classes"),
            ));
        }
        let src = self.value(logits).data();
        let mut probs = vec![T::zero(); n * c];
        let mut out = vec![T::zero(); n];
        for r in 0..n {
            let row = &src[r * c..(r + 1) * c];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for j in 0..c {
                let e = (row[j] - mx).exp();
                probs[r * c + j] = e;
                sum = sum + e;
            }
            for j in 0..c {
                probs[r * c + j] = probs[r * c + j] / sum;
            }
            if let Some(t) = targets[r] {
                out[r] = sum.ln() + mx - row[t];
            }
        }
        let v = Tensor::new(&[n], out)?;
        Ok(self.push(
            v,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Scales every vector along the last axis to unit Euclidean norm.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let w = *sa.last().ok_or_else(|| Error::shape("l2_normalize", "scalar input"))?;
        let src = self.value(a).data();
        let rows = src.len() / w.max(1);
        let mut norms = Vec::with_capacity(rows);
        let mut out = vec![T::zero(); src.len()];
        for r in 0..rows {
            let row = &src[r * w..(r + 1) * w];
            let norm = row.iter().map(|&e| e * e).sum::<T>().sqrt();
            if !(norm > T::c(NORMALIZE_EPS)) {
                return Err(Error::domain("l2_normalize", format!("row {r} has zero norm")));
            }
            for c in 0..w {
                out[r * w + c] = row[c] / norm;
            }
            norms.push(norm);
        }
        let v = Tensor::new(&sa, out)?;
        Ok(self.push(v, Op::L2Normalize { a, norms }, &[a]))
    }

    /// Replaces entries where `mask` is true by `value`.
    pub fn masked_fill(&mut self, a: Var, mask: Rc<[bool]>, value: f64) -> Result<Var> {
        let x = self.value(a);
        if mask.len() != x.numel() {
            return Err(Error::shape(
                "masked_fill",
                format!("{:?} vs mask of {}", x.shape(), mask.len()),
            ));
        }
        let fill = T::c(value);
        let data = x
            .data()
            .iter()
            .zip(mask.iter())
            .map(|(&e, &m)| if m { fill } else { e })
            .collect();
        let v = Tensor::new(x.shape(), data)?;
        Ok(self.push(v, Op::MaskedFill { a, mask }, &[a]))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::c(lo), T::c(hi));
        let v = self.unary(a, |e| e.max(lo).min(hi));
        self.push(v, Op::Clamp { a, lo, hi }, &[a])
    }

    // ---- reverse sweep ----

    /// Backpropagates from a scalar `loss`. A tape supports one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract(
                "backward already ran on this tape; build a fresh tape per step".into(),
            ));
        }
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backward_node(i, &g, &mut grads);
        }
        self.grads = grads;
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let k = self.shape(*b)[0];
                let n = self.shape(*b)[1];
                let m = self.value(*a).numel() / k.max(1);
                if let Some(ga) = self.slot(*a, grads) {
                    gemm(false, true, m, n, k, g, self.value(*b).data(), ga, true);
                }
                if let Some(gb) = self.slot(*b, grads) {
                    gemm(true, false, k, m, n, self.value(*a).data(), g, gb, true);
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let sa = self.shape(*a);
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = out.shape()[2];
                let da = self.value(*a).data();
                let db = self.value(*b).data();
                if let Some(ga) = self.slot(*a, grads) {
                    for t in 0..batch {
                        gemm(
                            false,
                            !trans_b,
                            m,
                            n,
                            k,
                            &g[t * m * n..(t + 1) * m * n],
                            &db[t * k * n..(t + 1) * k * n],
                            &mut ga[t * m * k..(t + 1) * m * k],
                            true,
                        );
                    }
                }
                if let Some(gb) = self.slot(*b, grads) {
                    for t in 0..batch {
                        let gt = &g[t * m * n..(t + 1) * m * n];
                        let at = &da[t * m * k..(t + 1) * m * k];
                        let dst = &mut gb[t * k * n..(t + 1) * k * n];
                        if *trans_b {
                            gemm(true, false, n, m, k, gt, at, dst, true);
                        } else {
                            gemm(true, false, k, m, n, at, gt, dst, true);
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                self.reduce_into(*a, out.shape(), grads, |j| g[j]);
                self.reduce_into(*b, out.shape(), grads, |j| g[j]);
            }
            Op::Sub { a, b } => {
                self.reduce_into(*a, out.shape(), grads, |j| g[j]);
                self.reduce_into(*b, out.shape(), grads, |j| -g[j]);
            }
            Op::Mul { a, b } => {
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                let oa = (sa != out.shape()).then(|| broadcast_offsets(sa, out.shape()));
                let ob = (sb != out.shape()).then(|| broadcast_offsets(sb, out.shape()));
                let at_a = |j: usize| match &oa {
                    Some(o) => da[o[j]],
                    None => da[j],
                };
                let at_b = |j: usize| match &ob {
                    Some(o) => db[o[j]],
                    None => db[j],
                };
                self.reduce_into(*a, out.shape(), grads, |j| g[j] * at_b(j));
                self.reduce_into(*b, out.shape(), grads, |j| g[j] * at_a(j));
            }
            Op::Scale { a, factor } => {
                if let Some(ga) = self.slot(*a, grads) {
                    for (d, &e) in ga.iter_mut().zip(g) {
                        *d = *d + e * *factor;
                    }
                }
            }
            Op::AddScalar { a } | Op::Reshape { a } => {
                if let Some(ga) = self.slot(*a, grads) {
                    for (d, &e) in ga.iter_mut().zip(g) {
                        *d = *d + e;
                    }
                }
            }
            Op::Exp { a } => {
                if let Some(ga) = self.slot(*a, grads) {
                    for ((d, &e), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                        *d = *d + e * y;
                    }
                }
            }
            Op::Log { a } => {
                let x = self.value(*a).data();
                if let Some(ga) = self.slot(*a, grads) {
                    for ((d, &e), &xv) in ga.iter_mut().zip(g).zip(x) {
                        *d = *d + e / xv;
                    }
                }
            }
            Op::Relu { a } => {
                let x = self.value(*a).data();
                if let Some(ga) = self.slot(*a, grads) {
                    for ((d, &e), &xv) in ga.iter_mut().zip(g).zip(x) {
                        if xv > T::zero() {
                            *d = *d + e;
                        }
                    }
                }
            }
            Op::Gelu { a } => {
                let x = self.value(*a).data();
                if let Some(ga) = self.slot(*a, grads) {
                    for ((d, &e), &xv) in ga.iter_mut().zip(g).zip(x) {
                        *d = *d + e * gelu_parts(xv).1;
                    }
                }
            }
            Op::Permute { a, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let gt = Tensor::new(out.shape(), g.to_vec()).unwrap();
                let back = permute_tensor(&gt, &inv);
                if let Some(ga) = self.slot(*a, grads) {
                    for (d, &e) in ga.iter_mut().zip(back.data()) {
                        *d = *d + e;
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let len = self.shape(v)[*axis];
                    if let Some(gv) = self.slot(v, grads) {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            let dst = &mut gv[o * len * inner..(o + 1) * len * inner];
                            for (d, &e) in dst.iter_mut().zip(src) {
                                *d = *d + e;
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice { a, axis, start } => {
                let (outer, l, inner) = split_axis(self.shape(*a), *axis);
                let len = out.shape()[*axis];
                if let Some(ga) = self.slot(*a, grads) {
                    for o in 0..outer {
                        let base = o * l * inner + start * inner;
                        let dst = &mut ga[base..base + len * inner];
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        for (d, &e) in dst.iter_mut().zip(src) {
                            *d = *d + e;
                        }
                    }
                }
            }
            Op::Mean { a, axis } => {
                let (outer, l, inner) = split_axis(self.shape(*a), *axis);
                let scale = T::one() / T::c(l as f64);
                if let Some(ga) = self.slot(*a, grads) {
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for j in 0..l {
                            let dst = &mut ga[(o * l + j) * inner..(o * l + j + 1) * inner];
                            for (d, &e) in dst.iter_mut().zip(src) {
                                *d = *d + e * scale;
                            }
                        }
                    }
                }
            }
            Op::SumAll { a } => {
                if let Some(ga) = self.slot(*a, grads) {
                    ga.iter_mut().for_each(|d| *d = *d + g[0]);
                }
            }
            Op::Softmax { a, axis } => {
                let (outer, l, inner) = split_axis(out.shape(), *axis);
                let y = out.data();
                if let Some(ga) = self.slot(*a, grads) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * l + j) * inner + i;
                            let dot: T = (0..l).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..l {
                                let p = at(j);
                                ga[p] = ga[p] + y[p] * (g[p] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
            } => {
                let w = *out.shape().last().unwrap();
                let rows = mean.len();
                let xs = self.value(*x).data();
                let gs = self.value(*gain).data();
                let inv_w = T::one() / T::c(w as f64);
                if self.requires_grad(*x) {
                    let mut dx = vec![T::zero(); xs.len()];
                    for r in 0..rows {
                        let (mu, rs) = (mean[r], rstd[r]);
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for c in 0..w {
                            let xh = (xs[r * w + c] - mu) * rs;
                            let dyh = g[r * w + c] * gs[c];
                            s1 = s1 + dyh;
                            s2 = s2 + dyh * xh;
                        }
                        let (m1, m2) = (s1 * inv_w, s2 * inv_w);
                        for c in 0..w {
                            let xh = (xs[r * w + c] - mu) * rs;
                            let dyh = g[r * w + c] * gs[c];
                            dx[r * w + c] = rs * (dyh - m1 - xh * m2);
                        }
                    }
                    let gx = self.slot(*x, grads).unwrap();
                    for (d, e) in gx.iter_mut().zip(dx) {
                        *d = *d + e;
                    }
                }
                if let Some(gg) = self.slot(*gain, grads) {
                    for r in 0..rows {
                        for c in 0..w {
                            let xh = (xs[r * w + c] - mean[r]) * rstd[r];
                            gg[c] = gg[c] + g[r * w + c] * xh;
                        }
                    }
                }
                if let Some(gb) = self.slot(*bias, grads) {
                    for r in 0..rows {
                        for c in 0..w {
                            gb[c] = gb[c] + g[r * w + c];
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let w = self.shape(*table)[1];
                if let Some(gt) = self.slot(*table, grads) {
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut gt[id * w..(id + 1) * w];
                        for (d, &e) in dst.iter_mut().zip(&g[r * w..(r + 1) * w]) {
                            *d = *d + e;
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let c = self.shape(*logits)[1];
                if let Some(gl) = self.slot(*logits, grads) {
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        for j in 0..c {
                            let p = probs[r * c + j];
                            let y = if j == t { p - T::one() } else { p };
                            gl[r * c + j] = gl[r * c + j] + g[r] * y;
                        }
                    }
                }
            }
            Op::L2Normalize { a, norms } => {
                let w = *out.shape().last().unwrap();
                let y = out.data();
                if let Some(ga) = self.slot(*a, grads) {
                    for (r, &n) in norms.iter().enumerate() {
                        let yr = &y[r * w..(r + 1) * w];
                        let gr = &g[r * w..(r + 1) * w];
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for c in 0..w {
                            ga[r * w + c] = ga[r * w + c] + (gr[c] - yr[c] * dot) / n;
                        }
                    }
                }
            }
            Op::MaskedFill { a, mask } => {
                if let Some(ga) = self.slot(*a, grads) {
                    for ((d, &e), &m) in ga.iter_mut().zip(g).zip(mask.iter()) {
                        if !m {
                            *d = *d + e;
                        }
                    }
                }
            }
            Op::Clamp { a, lo, hi } => {
                let x = self.value(*a).data();
                if let Some(ga) = self.slot(*a, grads) {
                    for ((d, &e), &xv) in ga.iter_mut().zip(g).zip(x) {
                        if xv >= *lo && xv <= *hi {
                            *d = *d + e;
                        }
                    }
                }
            }
        }
    }

    /// Gradient buffer of `v`, allocated on first use; `None` when `v`
    /// does not require a gradient.
    fn slot<'g>(&self, v: Var, grads: &'g mut [Option<Vec<T>>]) -> Option<&'g mut [T]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    /// Accumulates `f(j)` for each output element `j` into the broadcast
    /// source `v`.
    fn reduce_into(
        &self,
        v: Var,
        out_shape: &[usize],
        grads: &mut [Option<Vec<T>>],
        f: impl Fn(usize) -> T,
    ) {
        let sv = self.shape(v).to_vec();
        let Some(gv) = self.slot(v, grads) else { return };
        let numel: usize = out_shape.iter().product();
        if sv == out_shape {
            for (j, d) in gv.iter_mut().enumerate() {
                *d = *d + f(j);
            }
        } else if out_shape.ends_with(&sv) {
            let nv = gv.len();
            for j in 0..numel {
                gv[j % nv] = gv[j % nv] + f(j);
            }
        } else {
            let offs = broadcast_offsets(&sv, out_shape);
            for (j, &o) in offs.iter().enumerate() {
                gv[o] = gv[o] + f(j);
            }
        }
    }
}

pub(crate) fn permute_tensor<T: Real>(x: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let sx = x.shape();
    let rank = sx.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| sx[p]).collect();
    let in_strides = strides(sx);
    let eff: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let src = x.data();
    let numel = src.len();
    let mut out = Vec::with_capacity(numel);
    if rank == 0 || numel == 0 {
        return Tensor::new(&out_shape, src.to_vec()).unwrap();
    }
    // Innermost output axis is copied in a tight loop.
    let last = rank - 1;
    let (inner_len, inner_stride) = (out_shape[last], eff[last]);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    let rows = numel / inner_len.max(1);
    for _ in 0..rows {
        let mut p = off;
        for _ in 0..inner_len {
            out.push(src[p]);
            p += inner_stride;
        }
        for d in (0..last).rev() {
            idx[d] += 1;
            off += eff[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= eff[d] * idx[d];
            idx[d] = 0;
        }
    }
    Tensor::new(&out_shape, out).unwrap()
}
