use std::collections::BTreeMap;

use super::{Tensor, TensorError};
use crate::quantum::{self, VqcParams};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    BatchMatMul(Var, Var),
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    Reshape(Var),
    Relu(Var),
    Softmax(Var),
    LogSoftmax {
        x: Var,
        mask: Vec<bool>,
    },
    Entropy {
        x: Var,
        mask: Vec<bool>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Expand(Var),
    Sum(Var),
    SumAxis {
        x: Var,
        axis: usize,
    },
    Index {
        x: Var,
        flat: usize,
    },
    Vqc {
        input: Var,
        angles: Var,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of tensor operations. Nodes only reference earlier nodes, so the
/// insertion order is a topological order.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<String, Var>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every named parameter registered on `graph`.
    pub fn named(&self, graph: &Graph<T>) -> BTreeMap<String, Tensor<T>> {
        graph
            .params
            .iter()
            .map(|(name, &v)| {
                let g = self
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(graph.value(v).shape()));
                (name.clone(), g)
            })
            .collect()
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Source index in the unpermuted buffer for each output position.
fn permute_map(in_shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let in_strides = strides(in_shape);
    let n: usize = in_shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..n {
        let src = idx.iter().zip(axes).map(|(&i, &a)| i * in_strides[a]).sum();
        map.push(src);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    (out_shape, map)
}

/// Source index for each broadcast output position.
fn expand_map(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let in_strides = strides(in_shape);
    let n: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..n {
        let src = idx
            .iter()
            .enumerate()
            .map(|(d, &i)| {
                if in_shape[d] == 1 {
                    0
                } else {
                    i * in_strides[d]
                }
            })
            .sum();
        map.push(src);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}

fn check_mask(mask: &[bool], n: usize, row: usize) -> Result<(), TensorError> {
    if mask.len() != n {
        return Err(shape_err("mask", &[mask.len()], &[n]));
    }
    if mask.chunks(row).any(|r| !r.iter().any(|&m| m)) {
        return Err(TensorError::Infeasible);
    }
    Ok(())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
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

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Detached input; never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Registers a named parameter once per graph; later calls reuse the node.
    pub fn param(&mut self, name: &str, t: &Tensor<T>) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.leaf(t.clone());
        self.params.insert(name.to_owned(), v);
        v
    }

    pub fn params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    /// Copy of `v` cut from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Vec<T>, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta.shape(), tb.shape()));
        }
        Ok(ta
            .values()
            .iter()
            .zip(tb.values())
            .map(|(&x, &y)| f(x, y))
            .collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        let t = Tensor::new(self.shape(a).to_vec(), v)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        let t = Tensor::new(self.shape(a).to_vec(), v)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        let t = Tensor::new(self.shape(a).to_vec(), v)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn square(&mut self, a: Var) -> Result<Var, TensorError> {
        self.mul(a, a)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let src = self.value(a);
        let t = Tensor {
            shape: src.shape().to_vec(),
            values: src.values().iter().map(|&x| x * c).collect(),
        };
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, c), rg)
    }

    /// `x[..., in] @ w[in, out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tw.shape().len() != 2 || tx.shape().is_empty() || tx.last_dim() != tw.shape()[0] {
            return Err(shape_err("linear", tx.shape(), tw.shape()));
        }
        let (din, dout) = (tw.shape()[0], tw.shape()[1]);
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(shape_err("linear bias", self.shape(b), &[dout]));
            }
        }
        let rows = tx.len() / din;
        let mut out = vec![T::zero(); rows * dout];
        if let Some(b) = b {
            let bv = self.value(b).values();
            for r in 0..rows {
                out[r * dout..(r + 1) * dout].copy_from_slice(bv);
            }
        }
        let (xv, wv) = (tx.values(), tw.values());
        for r in 0..rows {
            let orow = &mut out[r * dout..(r + 1) * dout];
            for i in 0..din {
                let xi = xv[r * din + i];
                if xi == T::zero() {
                    continue;
                }
                let wrow = &wv[i * dout..(i + 1) * dout];
                for (o, &wij) in orow.iter_mut().zip(wrow) {
                    *o += xi * wij;
                }
            }
        }
        let mut shape = tx.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::new(shape, out)?, Op::Linear { x, w, b }, rg))
    }

    /// `[B, M, K] x [B, K, N] -> [B, M, N]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(shape_err("bmm", sa, sb));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); bs * m * n];
        let (av, bv) = (ta.values(), tb.values());
        for bi in 0..bs {
            for i in 0..m {
                for p in 0..k {
                    let aip = av[(bi * m + i) * k + p];
                    let brow = &bv[(bi * k + p) * n..(bi * k + p + 1) * n];
                    let orow = &mut out[(bi * m + i) * n..(bi * m + i + 1) * n];
                    for (o, &bpj) in orow.iter_mut().zip(brow) {
                        *o += aip * bpj;
                    }
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![bs, m, n], out)?, Op::BatchMatMul(a, b), rg))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes
                .iter()
                .any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true))
        {
            return Err(shape_err("permute", &shape, axes));
        }
        let (out_shape, map) = permute_map(&shape, axes);
        let src = self.value(x).values();
        let values = map.iter().map(|&i| src[i]).collect();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(out_shape, values)?,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(shape_err("transpose", self.shape(x), &[]));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(x, &axes)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.len() {
            return Err(shape_err("reshape", t.shape(), shape));
        }
        let t = t.clone().reshaped(shape.to_vec());
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let t = Tensor {
            shape: src.shape().to_vec(),
            values: src.values().iter().map(|&v| v.max(T::zero())).collect(),
        };
        let rg = self.rg(x);
        self.push(t, Op::Relu(x), rg)
    }

    fn softmax_impl(&mut self, x: Var, mask: Option<Vec<bool>>) -> Result<Var, TensorError> {
        let src = self.value(x);
        let row = src.last_dim();
        if let Some(m) = &mask {
            check_mask(m, src.len(), row)?;
        }
        let mut out = vec![T::zero(); src.len()];
        for (r, chunk) in src.values().chunks(row).enumerate() {
            let valid = |j: usize| mask.as_ref().is_none_or(|m| m[r * row + j]);
            let mx = (0..row)
                .filter(|&j| valid(j))
                .map(|j| chunk[j])
                .fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for j in 0..row {
                if valid(j) {
                    let e = (chunk[j] - mx).exp();
                    out[r * row + j] = e;
                    total += e;
                }
            }
            for o in &mut out[r * row..(r + 1) * row] {
                *o /= total;
            }
        }
        let t = Tensor::new(src.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Softmax(x), rg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        self.softmax_impl(x, None)
    }

    /// Softmax over the last axis restricted to `mask`; masked entries are exactly 0.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var, TensorError> {
        self.softmax_impl(x, Some(mask.to_vec()))
    }

    /// Log-softmax over the last axis; masked entries are `-inf` and carry no gradient.
    pub fn masked_log_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var, TensorError> {
        let src = self.value(x);
        let row = src.last_dim();
        check_mask(mask, src.len(), row)?;
        let mut out = vec![T::neg_infinity(); src.len()];
        for (r, chunk) in src.values().chunks(row).enumerate() {
            let m = &mask[r * row..(r + 1) * row];
            let mx = (0..row)
                .filter(|&j| m[j])
                .map(|j| chunk[j])
                .fold(T::neg_infinity(), T::max);
            let lse = mx
                + (0..row)
                    .filter(|&j| m[j])
                    .fold(T::zero(), |acc, j| acc + (chunk[j] - mx).exp())
                    .ln();
            for j in (0..row).filter(|&j| m[j]) {
                out[r * row + j] = chunk[j] - lse;
            }
        }
        let t = Tensor::new(src.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(
            t,
            Op::LogSoftmax {
                x,
                mask: mask.to_vec(),
            },
            rg,
        ))
    }

    /// Entropy of the masked softmax of every last-axis slice; drops the last axis.
    pub fn masked_entropy(&mut self, x: Var, mask: &[bool]) -> Result<Var, TensorError> {
        let src = self.value(x);
        let row = src.last_dim();
        check_mask(mask, src.len(), row)?;
        let mut out = Vec::with_capacity(src.len() / row);
        for (r, chunk) in src.values().chunks(row).enumerate() {
            let m = &mask[r * row..(r + 1) * row];
            let (p, logp) = masked_probs(chunk, m);
            let h = (0..row)
                .filter(|&j| m[j])
                .fold(T::zero(), |acc, j| acc - p[j] * logp[j]);
            out.push(h);
        }
        let shape = src.shape()[..src.shape().len().saturating_sub(1)].to_vec();
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(
            t,
            Op::Entropy {
                x,
                mask: mask.to_vec(),
            },
            rg,
        ))
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, TensorError> {
        let src = self.value(x);
        let d = src.last_dim();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err("layer_norm", src.shape(), self.shape(gamma)));
        }
        let (gv, bv) = (self.value(gamma).values(), self.value(beta).values());
        let dt = T::of(d as f64);
        let mut out = vec![T::zero(); src.len()];
        let mut xhat = vec![T::zero(); src.len()];
        let mut inv_std = Vec::with_capacity(src.len() / d);
        for (r, chunk) in src.values().chunks(d).enumerate() {
            let mean = chunk.iter().fold(T::zero(), |a, &v| a + v) / dt;
            let var = chunk
                .iter()
                .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
                / dt;
            let is = T::one() / (var + T::of(LN_EPS)).sqrt();
            inv_std.push(is);
            for j in 0..d {
                let xh = (chunk[j] - mean) * is;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * gv[j] + bv[j];
            }
        }
        let t = Tensor::new(src.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        let lead = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        for p in parts {
            let s = self.shape(*p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(shape_err("concat", self.shape(*first), s));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).last_dim()).collect();
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p).values()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat(parts.to_vec()), rg))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("stack of zero tensors".into()))?;
        let inner = self.shape(*first).to_vec();
        let mut out = Vec::new();
        for p in parts {
            if *self.shape(*p) != inner[..] {
                return Err(shape_err("stack", &inner, self.shape(*p)));
            }
            out.extend_from_slice(self.value(*p).values());
        }
        let mut shape = vec![parts.len()];
        shape.extend(inner);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(shape, out)?, Op::Stack(parts.to_vec()), rg))
    }

    /// Broadcasts unit axes of `x` to `shape` (same rank).
    pub fn expand(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if s.len() != shape.len() || s.iter().zip(shape).any(|(&a, &b)| a != b && a != 1) {
            return Err(shape_err("expand", &s, shape));
        }
        let map = expand_map(&s, shape);
        let src = self.value(x).values();
        let values = map.iter().map(|&i| src[i]).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape.to_vec(), values)?, Op::Expand(x), rg))
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).values().iter().fold(T::zero(), |a, &v| a + v);
        let rg = self.rg(x);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::of(self.value(x).len() as f64);
        let s = self.sum(x);
        self.scale(s, T::one() / n)
    }

    /// Sums out one axis.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(shape_err("sum_axis", &s, &[axis]));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let n = s[axis];
        let src = self.value(x).values();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += src[(o * n + k) * inner + i];
                }
            }
        }
        let mut shape = s.clone();
        shape.remove(axis);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::SumAxis { x, axis }, rg))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let n = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| shape_err("mean_axis", self.shape(x), &[axis]))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, T::one() / T::of(n as f64)))
    }

    /// Scalar at row-major position `flat`.
    pub fn index(&mut self, x: Var, flat: usize) -> Result<Var, TensorError> {
        let t = self.value(x);
        if flat >= t.len() {
            return Err(shape_err("index", t.shape(), &[flat]));
        }
        let v = t.values()[flat];
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(v), Op::Index { x, flat }, rg))
    }

    /// Variational head: amplitude-embeds `input` (`[d]`), applies the layered
    /// circuit with `angles` (`[L, n, 3]`), returns the first `d_out` basis probabilities.
    pub fn vqc(&mut self, input: Var, angles: Var, d_out: usize) -> Result<Var, TensorError> {
        let sa = self.shape(angles);
        if sa.len() != 3 || sa[2] != 3 || self.shape(input).len() != 1 {
            return Err(shape_err("vqc", self.shape(input), sa));
        }
        let params = VqcParams::new(sa[0], sa[1], self.value(angles).values().to_vec())?;
        let out = quantum::run_vqc(self.value(input).values(), &params, d_out)?;
        let rg = self.rg(input) || self.rg(angles);
        Ok(self.push(Tensor::vector(out.probs), Op::Vqc { input, angles }, rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), T::one()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[id].take() else { continue };
            self.propagate(node, &dy, &mut grads)?;
            grads[id] = Some(dy);
        }
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, delta: Vec<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, d) in g.values.iter_mut().zip(delta) {
                    *a += d;
                }
            }
            slot @ None => {
                *slot = Some(Tensor {
                    shape: self.shape(v).to_vec(),
                    values: delta,
                });
            }
        }
    }

    fn propagate(
        &self,
        node: &Node<T>,
        dy: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<(), TensorError> {
        let g = dy.values();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).values(), self.value(*b).values());
                self.accumulate(grads, *a, g.iter().zip(vb).map(|(&d, &y)| d * y).collect());
                self.accumulate(grads, *b, g.iter().zip(va).map(|(&d, &x)| d * x).collect());
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, g.iter().map(|&v| v * *c).collect());
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (din, dout) = (tw.shape()[0], tw.shape()[1]);
                let rows = tx.len() / din;
                let (xv, wv) = (tx.values(), tw.values());
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); xv.len()];
                    for r in 0..rows {
                        let grow = &g[r * dout..(r + 1) * dout];
                        for i in 0..din {
                            let wrow = &wv[i * dout..(i + 1) * dout];
                            dx[r * din + i] = grow
                                .iter()
                                .zip(wrow)
                                .fold(T::zero(), |a, (&p, &q)| a + p * q);
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
                if self.rg(*w) {
                    let mut dw = vec![T::zero(); wv.len()];
                    for r in 0..rows {
                        let grow = &g[r * dout..(r + 1) * dout];
                        for i in 0..din {
                            let xi = xv[r * din + i];
                            if xi == T::zero() {
                                continue;
                            }
                            for (d, &gj) in dw[i * dout..(i + 1) * dout].iter_mut().zip(grow) {
                                *d += xi * gj;
                            }
                        }
                    }
                    self.accumulate(grads, *w, dw);
                }
                if let Some(b) = b {
                    let mut db = vec![T::zero(); dout];
                    for r in 0..rows {
                        for (d, &gj) in db.iter_mut().zip(&g[r * dout..(r + 1) * dout]) {
                            *d += gj;
                        }
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (bs, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                let n = tb.shape()[2];
                let (av, bv) = (ta.values(), tb.values());
                if self.rg(*a) {
                    let mut da = vec![T::zero(); av.len()];
                    for bi in 0..bs {
                        for i in 0..m {
                            let grow = &g[(bi * m + i) * n..(bi * m + i + 1) * n];
                            for p in 0..k {
                                let brow = &bv[(bi * k + p) * n..(bi * k + p + 1) * n];
                                da[(bi * m + i) * k + p] = grow
                                    .iter()
                                    .zip(brow)
                                    .fold(T::zero(), |s, (&x, &y)| s + x * y);
                            }
                        }
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); bv.len()];
                    for bi in 0..bs {
                        for i in 0..m {
                            let grow = &g[(bi * m + i) * n..(bi * m + i + 1) * n];
                            for p in 0..k {
                                let aip = av[(bi * m + i) * k + p];
                                for (d, &gj) in db[(bi * k + p) * n..(bi * k + p + 1) * n]
                                    .iter_mut()
                                    .zip(grow)
                                {
                                    *d += aip * gj;
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Permute { x, axes } => {
                let (_, map) = permute_map(self.shape(*x), axes);
                let mut dx = vec![T::zero(); g.len()];
                for (o, &src) in map.iter().enumerate() {
                    dx[src] = g[o];
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::Relu(x) => {
                let xv = self.value(*x).values();
                self.accumulate(
                    grads,
                    *x,
                    g.iter()
                        .zip(xv)
                        .map(|(&d, &v)| if v > T::zero() { d } else { T::zero() })
                        .collect(),
                );
            }
            Op::Softmax(x) => {
                let y = node.value.values();
                let row = node.value.last_dim();
                let mut dx = vec![T::zero(); y.len()];
                for r in 0..y.len() / row {
                    let s = r * row..(r + 1) * row;
                    let dot = g[s.clone()]
                        .iter()
                        .zip(&y[s.clone()])
                        .fold(T::zero(), |a, (&p, &q)| a + p * q);
                    for j in s {
                        dx[j] = y[j] * (g[j] - dot);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LogSoftmax { x, mask } => {
                let y = node.value.values();
                let row = node.value.last_dim();
                let mut dx = vec![T::zero(); y.len()];
                for r in 0..y.len() / row {
                    let s = r * row..(r + 1) * row;
                    let gsum = s
                        .clone()
                        .filter(|&j| mask[j])
                        .fold(T::zero(), |a, j| a + g[j]);
                    for j in s.filter(|&j| mask[j]) {
                        dx[j] = g[j] - y[j].exp() * gsum;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Entropy { x, mask } => {
                let xv = self.value(*x).values();
                let row = self.value(*x).last_dim();
                let mut dx = vec![T::zero(); xv.len()];
                for (r, &h) in node.value.values().iter().enumerate() {
                    let m = &mask[r * row..(r + 1) * row];
                    let (p, logp) = masked_probs(&xv[r * row..(r + 1) * row], m);
                    for j in (0..row).filter(|&j| m[j]) {
                        dx[r * row + j] = -g[r] * p[j] * (logp[j] + h);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = node.value.last_dim();
                let gv = self.value(*gamma).values();
                let dt = T::of(d as f64);
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); g.len()];
                    for (r, &is) in inv_std.iter().enumerate() {
                        let s = r * d..(r + 1) * d;
                        let dxh: Vec<T> = s.clone().map(|j| g[j] * gv[j - r * d]).collect();
                        let m1 = dxh.iter().fold(T::zero(), |a, &v| a + v) / dt;
                        let m2 = dxh
                            .iter()
                            .zip(&xhat[s.clone()])
                            .fold(T::zero(), |a, (&p, &q)| a + p * q)
                            / dt;
                        for (k, j) in s.enumerate() {
                            dx[j] = is * (dxh[k] - m1 - xhat[j] * m2);
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                for (j, (&gj, &xh)) in g.iter().zip(xhat).enumerate() {
                    dgamma[j % d] += gj * xh;
                    dbeta[j % d] += gj;
                }
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::Concat(parts) => {
                let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).last_dim()).collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut offset = 0;
                for (p, &w) in parts.iter().zip(&widths) {
                    let mut dp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    self.accumulate(grads, *p, dp);
                    offset += w;
                }
            }
            Op::Stack(parts) => {
                let w = g.len() / parts.len();
                for (i, p) in parts.iter().enumerate() {
                    self.accumulate(grads, *p, g[i * w..(i + 1) * w].to_vec());
                }
            }
            Op::Expand(x) => {
                let map = expand_map(self.shape(*x), node.value.shape());
                let mut dx = vec![T::zero(); self.value(*x).len()];
                for (o, &src) in map.iter().enumerate() {
                    dx[src] += g[o];
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::SumAxis { x, axis } => {
                let s = self.shape(*x);
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let n = s[*axis];
                let mut dx = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    for k in 0..n {
                        for i in 0..inner {
                            dx[(o * n + k) * inner + i] = g[o * inner + i];
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Index { x, flat } => {
                let mut dx = vec![T::zero(); self.value(*x).len()];
                dx[*flat] = g[0];
                self.accumulate(grads, *x, dx);
            }
            Op::Vqc { input, angles } => {
                let sa = self.shape(*angles);
                let params = VqcParams::new(sa[0], sa[1], self.value(*angles).values().to_vec())?;
                let vg = quantum::vqc_gradients_backprop(self.value(*input).values(), &params, g)?;
                self.accumulate(grads, *angles, vg.angles);
                self.accumulate(grads, *input, vg.input);
            }
        }
        Ok(())
    }
}

/// Masked softmax probabilities and log-probabilities of one row
/// (masked entries: probability 0, log-probability 0).
fn masked_probs<T: Scalar>(row: &[T], mask: &[bool]) -> (Vec<T>, Vec<T>) {
    let mx = row
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .fold(T::neg_infinity(), T::max);
    let lse = mx
        + row
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .fold(T::zero(), |a, (&v, _)| a + (v - mx).exp())
            .ln();
    let logp: Vec<T> = row
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if m { v - lse } else { T::zero() })
        .collect();
    let p = logp
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { l.exp() } else { T::zero() })
        .collect();
    (p, logp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn linear_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[1.0, 2.0]));
        let w = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(t(&[2], &[0.0, 0.0]));
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).values(), &[1.0, 2.0]);

        let x = g.constant(t(&[2], &[1.0, 1.0]));
        let w = g.constant(t(&[2, 1], &[2.0, 3.0]));
        let b = g.constant(t(&[1], &[1.0]));
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).values(), &[6.0]);

        let x = g.constant(Tensor::zeros(&[4]));
        let w = g.constant(Tensor::zeros(&[3, 2]));
        match g.linear(x, w, None) {
            Err(TensorError::Shape { left, right, .. }) => {
                assert_eq!(left, vec![4]);
                assert_eq!(right, vec![3, 2]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn masked_softmax_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[0.0, 0.0, 0.0]));
        let y = g.masked_softmax(x, &[true, true, true]).unwrap();
        for &p in g.value(y).values() {
            assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
        }
        let x = g.constant(t(&[2], &[5.0, 5.0]));
        let y = g.masked_softmax(x, &[true, false]).unwrap();
        assert_eq!(g.value(y).values(), &[1.0, 0.0]);

        let x = g.constant(t(&[2], &[2f64.ln(), 0.0]));
        let y = g.masked_softmax(x, &[true, true]).unwrap();
        assert_abs_diff_eq!(g.value(y).values()[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.value(y).values()[1], 1.0 / 3.0, epsilon = 1e-15);

        let x = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(
            g.masked_softmax(x, &[true, true, false, false])
                .unwrap_err(),
            TensorError::Infeasible
        );
    }

    #[test]
    fn log_softmax_and_entropy() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[4], &[1.0, 1.0, 1.0, 9.0]));
        let mask = [true, true, true, false];
        let lp = g.masked_log_softmax(x, &mask).unwrap();
        assert_abs_diff_eq!(g.value(lp).values()[0], -(3f64.ln()), epsilon = 1e-15);
        assert_eq!(g.value(lp).values()[3], f64::NEG_INFINITY);
        let h = g.masked_entropy(x, &mask).unwrap();
        assert_eq!(g.shape(h), &[] as &[usize]);
        assert_abs_diff_eq!(g.value(h).item(), 3f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn backward_examples() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[3], &[1.0, -2.0, 0.5]));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().values(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.square(x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);

        let err = g.backward(g.params().get("none").copied().unwrap_or(x));
        assert!(err.is_ok());
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(TensorError::Contract(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[2], &[1.0, 2.0]));
        let c = g.constant(t(&[2], &[3.0, 4.0]));
        let d = g.detach(a);
        let p = g.mul(a, c).unwrap();
        let q = g.mul(p, d).unwrap();
        let s = g.sum(q);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(c).is_none());
        assert!(grads.get(d).is_none());
        // d/da (a * c * a_detached) = c * a
        assert_eq!(grads.get(a).unwrap().values(), &[3.0, 8.0]);
    }

    #[test]
    fn permute_expand_round_trip_shapes() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]));
        let y = g.transpose(x).unwrap();
        assert_eq!(g.shape(y), &[3, 2]);
        assert_eq!(g.value(y).values(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        let r = g.reshape(x, &[2, 1, 3]).unwrap();
        let e = g.expand(r, &[2, 4, 3]).unwrap();
        assert_eq!(g.shape(e), &[2, 4, 3]);
        let s = g.sum(e);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().values(), &[4.0; 6]);
    }
}
