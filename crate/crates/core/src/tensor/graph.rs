use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{numel, strides, ParameterStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul { a: Var, b: Var },
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Slice { x: Var, axis: usize, start: usize },
    Relu(Var),
    Softmax(Var),
    Abs(Var),
    LnClamped(Var, f64),
    Sum(Var),
    Mean(Var),
    Dropout(Var, Vec<f64>),
    CausalShift { x: Var, axis: usize, shift: usize },
    Gather { table: Var, indices: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A tape of tensor operations supporting one reverse pass.
///
/// Parameters are bound by name from a [`ParameterStore`]; after
/// [`Graph::backward`] their gradients can be written back with
/// [`Graph::write_grads`]. In evaluation mode dropout is the identity.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    grads: Vec<Option<Vec<f64>>>,
    training: bool,
    rng: ChaCha8Rng,
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r {
            a[i + a.len() - r]
        } else {
            1
        };
        let db = if i + b.len() >= r {
            b[i + b.len() - r]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat index of `out`, the flat index of the broadcast source.
fn broadcast_map(out: &[usize], src: &[usize]) -> Vec<usize> {
    let r = out.len();
    let off = r - src.len();
    let src_strides = strides(src);
    let mut eff = vec![0; r];
    for i in 0..src.len() {
        eff[off + i] = if src[i] == 1 { 0 } else { src_strides[i] };
    }
    let total = numel(out);
    let mut map = Vec::with_capacity(total);
    let mut coord = vec![0; r];
    let mut cur = 0usize;
    for _ in 0..total {
        map.push(cur);
        for d in (0..r).rev() {
            coord[d] += 1;
            cur += eff[d];
            if coord[d] < out[d] {
                break;
            }
            cur -= eff[d] * coord[d];
            coord[d] = 0;
        }
    }
    map
}

/// For every flat index of the permuted output, the flat index in the input.
fn permute_map(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let eff: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let r = out_shape.len();
    let total = numel(shape);
    let mut map = Vec::with_capacity(total);
    let mut coord = vec![0; r];
    let mut cur = 0usize;
    for _ in 0..total {
        map.push(cur);
        for d in (0..r).rev() {
            coord[d] += 1;
            cur += eff[d];
            if coord[d] < out_shape[d] {
                break;
            }
            cur -= eff[d] * coord[d];
            coord[d] = 0;
        }
    }
    map
}

/// Sum whose result does not depend on the order of the terms.
fn sorted_sum(buf: &mut [i64]) -> f64 {
    buf.sort_unstable();
    buf.iter().map(|&k| from_order_key(k)).sum()
}

/// Integer key whose ordering matches `f64::total_cmp`.
fn order_key(x: f64) -> i64 {
    let bits = x.to_bits() as i64;
    bits ^ (((bits >> 63) as u64) >> 1) as i64
}

fn from_order_key(k: i64) -> f64 {
    f64::from_bits((k ^ (((k >> 63) as u64) >> 1) as i64) as u64)
}

/// `c[m×n] += a[m×k] · b[k×n]`
fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×n] = a[m×k] · b[k×n]` with order-independent reduction over `k`.
fn gemm_sorted(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    let mut buf = vec![0i64; k];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                buf[p] = order_key(a[i * k + p] * b[p * n + j]);
            }
            c[i * n + j] = sorted_sum(&mut buf);
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
fn gemm_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`
fn gemm_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src.to_vec()),
    }
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (numel(&shape[..axis]), numel(&shape[axis + 1..]))
}

impl Graph {
    pub fn new(training: bool, seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
            grads: Vec::new(),
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that records gradients but is not bound to a parameter name.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a named parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        if let Some(v) = self.params.get(name) {
            return Ok(*v);
        }
        let p = store
            .get(name)
            .ok_or_else(|| Error::arg(format!("unknown parameter {name:?}")))?;
        let v = self.push(p.value.clone(), Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, bool)> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| Error::shape(name, &sa, &sb))?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let data: Vec<f64> = if sa == out_shape && sb == out_shape {
            da.iter().zip(db).map(|(x, y)| f(*x, *y)).collect()
        } else {
            let ma = broadcast_map(&out_shape, &sa);
            let mb = broadcast_map(&out_shape, &sb);
            ma.iter().zip(&mb).map(|(&i, &j)| f(da[i], db[j])).collect()
        };
        Ok((Tensor::new(out_shape, data)?, self.ng(a) || self.ng(b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ng) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ng) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, ng) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|x| x * c).collect())
            .expect("same shape");
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, c), ng)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, sorted: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let batch_a = &sa[..sa.len() - 2];
        let shared = sb.len() == 2;
        if k != k2 || (!shared && batch_a != &sb[..sb.len() - 2]) {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let batches = numel(batch_a);
        let mut out_shape = batch_a.to_vec();
        out_shape.extend([m, n]);
        let mut out = vec![0.0; batches * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        if shared && !sorted {
            gemm_acc(da, db, &mut out, batches * m, k, n);
        } else {
            for bi in 0..batches {
                let asl = &da[bi * m * k..(bi + 1) * m * k];
                let bsl = if shared {
                    db
                } else {
                    &db[bi * k * n..(bi + 1) * k * n]
                };
                let csl = &mut out[bi * m * n..(bi + 1) * m * n];
                if sorted {
                    gemm_sorted(asl, bsl, csl, m, k, n);
                } else {
                    gemm_acc(asl, bsl, csl, m, k, n);
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::MatMul { a, b }, ng))
    }

    /// Batched matrix product over the last two axes. `b` is either 2-D
    /// (shared across the batch) or has exactly `a`'s batch dimensions.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// As [`Graph::matmul`], but every output entry is reduced with an
    /// order-independent sum, so permuting the contracted axis of both inputs
    /// leaves the result bit-identical.
    pub fn matmul_sorted(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes
                .iter()
                .any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::shape("permute", &shape, axes));
        }
        let map = permute_map(&shape, axes);
        let src = self.value(x).data();
        let data = map.iter().map(|&i| src[i]).collect();
        let out_shape = axes.iter().map(|&a| shape[a]).collect();
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::new(out_shape, data)?,
            Op::Permute(x, axes.to_vec()),
            ng,
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(Error::shape("transpose", self.shape(x), &[]));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(x, &axes)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*xs.first().ok_or_else(|| Error::arg("concat of nothing"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", &first, &[axis]));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != first.len()
                || s.iter()
                    .enumerate()
                    .any(|(i, d)| i != axis && *d != first[i])
            {
                return Err(Error::shape("concat", &first, s));
            }
            total += s[axis];
        }
        let (outer, inner) = outer_inner(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let len = self.shape(x)[axis] * inner;
                data.extend_from_slice(&self.value(x).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let ng = xs.iter().any(|&x| self.ng(x));
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(xs.to_vec(), axis), ng))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape("slice", &shape, &[axis, start, len]));
        }
        let (outer, inner) = outer_inner(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::new(out_shape, data)?,
            Op::Slice { x, axis, start },
            ng,
        ))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| f(*a)).collect())
            .expect("same shape");
        let ng = self.ng(x);
        self.push(t, op, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |a| if a > 0.0 { a } else { 0.0 })
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), f64::abs)
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn ln_clamped(&mut self, x: Var, floor: f64) -> Var {
        self.unary(x, Op::LnClamped(x, floor), |a| a.max(floor).ln())
    }

    /// Softmax over the last axis. Row sums are order-independent.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let w = *shape
            .last()
            .ok_or_else(|| Error::shape("softmax", &shape, &[]))?;
        if w == 0 {
            return Err(Error::shape("softmax", &shape, &[]));
        }
        let src = self.value(x).data();
        let mut data = vec![0.0; src.len()];
        let mut buf = vec![0i64; w];
        for (row, out) in src.chunks(w).zip(data.chunks_mut(w)) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (o, v) in out.iter_mut().zip(row) {
                *o = (v - mx).exp();
            }
            buf.iter_mut()
                .zip(out.iter())
                .for_each(|(k, &o)| *k = order_key(o));
            let s = sorted_sum(&mut buf);
            out.iter_mut().for_each(|o| *o /= s);
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::Softmax(x), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x).data();
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Mean(x), ng)
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - rate)` in training
    /// mode. In evaluation mode (or with `rate == 0`) returns `x` itself.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::arg(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !self.training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if self.rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let v = self.value(x);
        let t = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().zip(&mask).map(|(a, m)| a * m).collect(),
        )?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Dropout(x, mask), ng))
    }

    /// Delays `x` by `shift` steps along `axis`, filling the head with zeros.
    pub fn causal_shift(&mut self, x: Var, axis: usize, shift: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("causal_shift", &shape, &[axis]));
        }
        if shift == 0 {
            return Ok(x);
        }
        let (outer, inner) = outer_inner(&shape, axis);
        let len = shape[axis];
        let src = self.value(x).data();
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for t in shift..len {
                let dst = (o * len + t) * inner;
                let s = (o * len + t - shift) * inner;
                data[dst..dst + inner].copy_from_slice(&src[s..s + inner]);
            }
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::CausalShift { x, axis, shift },
            ng,
        ))
    }

    /// Row lookup: `table` is `[rows, d]`, output is `[indices.len(), d]`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 || indices.iter().any(|&i| i >= shape[0]) {
            return Err(Error::shape("gather_rows", &shape, indices));
        }
        let d = shape[1];
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let ng = self.ng(table);
        Ok(self.push(
            Tensor::new(vec![indices.len(), d], data)?,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            ng,
        ))
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::arg(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out_shape = node.value.shape();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                for (v, s) in [(*a, 1.0), (*b, sign)] {
                    if !self.ng(v) {
                        continue;
                    }
                    let vs = self.shape(v);
                    let mut acc = vec![0.0; numel(vs)];
                    if vs == out_shape {
                        acc.iter_mut().zip(g).for_each(|(x, y)| *x = s * y);
                    } else {
                        for (k, &j) in broadcast_map(out_shape, vs).iter().enumerate() {
                            acc[j] += s * g[k];
                        }
                    }
                    add_into(&mut grads[v.0], &acc);
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if !self.ng(v) {
                        continue;
                    }
                    let vs = self.shape(v);
                    let os = self.shape(other);
                    let od = self.value(other).data();
                    let mut acc = vec![0.0; numel(vs)];
                    let mv = broadcast_map(out_shape, vs);
                    let mo = broadcast_map(out_shape, os);
                    for k in 0..g.len() {
                        acc[mv[k]] += g[k] * od[mo[k]];
                    }
                    add_into(&mut grads[v.0], &acc);
                }
            }
            Op::Scale(a, c) => {
                let acc: Vec<f64> = g.iter().map(|x| x * c).collect();
                add_into(&mut grads[a.0], &acc);
            }
            Op::MatMul { a, b, .. } => {
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let n = sb[sb.len() - 1];
                let batches = numel(&sa[..sa.len() - 2]);
                let shared = sb.len() == 2;
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                if self.ng(*a) {
                    let mut acc = vec![0.0; da.len()];
                    if shared {
                        gemm_nt_acc(g, db, &mut acc, batches * m, n, k);
                    } else {
                        for bi in 0..batches {
                            gemm_nt_acc(
                                &g[bi * m * n..(bi + 1) * m * n],
                                &db[bi * k * n..(bi + 1) * k * n],
                                &mut acc[bi * m * k..(bi + 1) * m * k],
                                m,
                                n,
                                k,
                            );
                        }
                    }
                    add_into(&mut grads[a.0], &acc);
                }
                if self.ng(*b) {
                    let mut acc = vec![0.0; db.len()];
                    if shared {
                        gemm_tn_acc(da, g, &mut acc, batches * m, k, n);
                    } else {
                        for bi in 0..batches {
                            gemm_tn_acc(
                                &da[bi * m * k..(bi + 1) * m * k],
                                &g[bi * m * n..(bi + 1) * m * n],
                                &mut acc[bi * k * n..(bi + 1) * k * n],
                                m,
                                k,
                                n,
                            );
                        }
                    }
                    add_into(&mut grads[b.0], &acc);
                }
            }
            Op::Permute(x, axes) => {
                let map = permute_map(self.shape(*x), axes);
                let mut acc = vec![0.0; g.len()];
                for (k, &j) in map.iter().enumerate() {
                    acc[j] = g[k];
                }
                add_into(&mut grads[x.0], &acc);
            }
            Op::Reshape(x) => add_into(&mut grads[x.0], g),
            Op::Concat(xs, axis) => {
                let (outer, inner) = outer_inner(out_shape, *axis);
                let total = out_shape[*axis];
                let mut offset = 0;
                for &x in xs {
                    let len = self.shape(x)[*axis];
                    if self.ng(x) {
                        let mut acc = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            acc.extend_from_slice(&g[base..base + len * inner]);
                        }
                        add_into(&mut grads[x.0], &acc);
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let xs = self.shape(*x);
                let (outer, inner) = outer_inner(xs, *axis);
                let len = out_shape[*axis];
                let mut acc = vec![0.0; numel(xs)];
                for o in 0..outer {
                    let dst = (o * xs[*axis] + start) * inner;
                    acc[dst..dst + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                add_into(&mut grads[x.0], &acc);
            }
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                let acc: Vec<f64> = g
                    .iter()
                    .zip(xd)
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                add_into(&mut grads[x.0], &acc);
            }
            Op::Abs(x) => {
                let xd = self.value(*x).data();
                let acc: Vec<f64> = g
                    .iter()
                    .zip(xd)
                    .map(|(gv, xv)| {
                        if *xv > 0.0 {
                            *gv
                        } else if *xv < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    })
                    .collect();
                add_into(&mut grads[x.0], &acc);
            }
            Op::LnClamped(x, floor) => {
                let xd = self.value(*x).data();
                let acc: Vec<f64> = g
                    .iter()
                    .zip(xd)
                    .map(|(gv, xv)| if *xv > *floor { gv / xv } else { 0.0 })
                    .collect();
                add_into(&mut grads[x.0], &acc);
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let w = *out_shape.last().expect("rank >= 1");
                let mut acc = vec![0.0; y.len()];
                for ((yr, gr), ar) in y.chunks(w).zip(g.chunks(w)).zip(acc.chunks_mut(w)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..w {
                        ar[j] = yr[j] * (gr[j] - dot);
                    }
                }
                add_into(&mut grads[x.0], &acc);
            }
            Op::Sum(x) => {
                let acc = vec![g[0]; self.value(*x).numel()];
                add_into(&mut grads[x.0], &acc);
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                let acc = vec![g[0] / n as f64; n];
                add_into(&mut grads[x.0], &acc);
            }
            Op::Dropout(x, mask) => {
                let acc: Vec<f64> = g.iter().zip(mask).map(|(a, m)| a * m).collect();
                add_into(&mut grads[x.0], &acc);
            }
            Op::CausalShift { x, axis, shift } => {
                let (outer, inner) = outer_inner(out_shape, *axis);
                let len = out_shape[*axis];
                let mut acc = vec![0.0; g.len()];
                for o in 0..outer {
                    for t in *shift..len {
                        let src = (o * len + t) * inner;
                        let dst = (o * len + t - shift) * inner;
                        acc[dst..dst + inner].copy_from_slice(&g[src..src + inner]);
                    }
                }
                add_into(&mut grads[x.0], &acc);
            }
            Op::Gather { table, indices } => {
                let d = out_shape[1];
                let mut acc = vec![0.0; self.value(*table).numel()];
                for (r, &i) in indices.iter().enumerate() {
                    for c in 0..d {
                        acc[i * d + c] += g[r * d + c];
                    }
                }
                add_into(&mut grads[table.0], &acc);
            }
        }
    }

    /// Gradient of the last backward pass with respect to `v`, if reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Overwrites every gradient in `store`: bound, reached parameters get
    /// their gradient and all others get zeros.
    pub fn write_grads(&self, store: &mut ParameterStore) {
        store.zero_grads();
        for (name, v) in &self.params {
            if let (Some(g), Some(p)) = (self.grad(*v), store.get_mut(name)) {
                p.grad.data_mut().copy_from_slice(g);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn order_keys_follow_total_order(a in proptest::num::f64::ANY, b in proptest::num::f64::ANY) {
            prop_assert_eq!(order_key(a).cmp(&order_key(b)), a.total_cmp(&b));
            prop_assert_eq!(from_order_key(order_key(a)).to_bits(), a.to_bits());
        }
    }

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new(false, 0);
        let x = g.constant(t(&[2], &[0.0, 0.0]));
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut g = Graph::new(false, 0);
        let x = g.constant(t(&[2], &[-1.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn matmul_by_identity() {
        let mut g = Graph::new(false, 0);
        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let i = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let c = g.matmul(a, i).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut g = Graph::new(false, 0);
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let msg = g.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        let c = g.constant(Tensor::zeros(&[4]));
        assert!(g.add(a, c).is_err());
    }

    #[test]
    fn broadcast_add_of_bias() {
        let mut g = Graph::new(false, 0);
        let a = g.constant(t(&[2, 3], &[0.0; 6]));
        let b = g.constant(t(&[3], &[1.0, 2.0, 3.0]));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn concat_then_slice_round_trips() {
        let mut g = Graph::new(false, 0);
        let a = g.constant(t(&[2, 1], &[1.0, 2.0]));
        let b = g.constant(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let s = g.slice(c, 1, 1, 2).unwrap();
        assert_eq!(g.value(s).data(), g.value(b).data());
    }

    #[test]
    fn dropout_eval_is_identity_and_train_scales() {
        let mut g = Graph::new(false, 3);
        let x = g.constant(Tensor::full(&[1000], 1.0));
        assert_eq!(g.dropout(x, 0.2).unwrap(), x);

        let mut g = Graph::new(true, 3);
        let x = g.constant(Tensor::full(&[1000], 1.0));
        let y = g.dropout(x, 0.2).unwrap();
        let vals = g.value(y).data();
        assert!(vals.iter().all(|v| *v == 0.0 || (*v - 1.25).abs() < 1e-15));
        let kept = vals.iter().filter(|v| **v > 0.0).count();
        assert!((700..900).contains(&kept), "{kept}");
        assert!(g.dropout(x, 1.0).is_err());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new(false, 0);
        let x = g.variable(Tensor::zeros(&[2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn sum_and_quadratic_gradients() {
        let w = t(&[2, 2], &[0.5, -1.0, 2.0, 3.0]);
        let mut store = ParameterStore::new();
        store.insert("w", w.clone()).unwrap();
        store.insert("unused", Tensor::full(&[3], 7.0)).unwrap();

        let mut g = Graph::new(true, 0);
        let wv = g.param(&store, "w").unwrap();
        let s = g.sum(wv);
        g.backward(s).unwrap();
        g.write_grads(&mut store);
        assert_eq!(store.get("w").unwrap().grad.data(), &[1.0; 4]);
        assert_eq!(store.get("unused").unwrap().grad.data(), &[0.0; 3]);

        let mut g = Graph::new(true, 0);
        let wv = g.param(&store, "w").unwrap();
        let sq = g.mul(wv, wv).unwrap();
        let s = g.sum(sq);
        let half = g.scale(s, 0.5);
        g.backward(half).unwrap();
        g.write_grads(&mut store);
        assert_eq!(store.get("w").unwrap().grad.data(), w.data());
    }

    #[test]
    fn sorted_matmul_is_permutation_invariant() {
        let a: Vec<f64> = (0..7)
            .map(|i| 0.1 * i as f64 + 1e-9 * (i * i) as f64)
            .collect();
        let b: Vec<f64> = (0..7).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let perm = [3, 0, 6, 1, 5, 2, 4];
        let ap: Vec<f64> = perm.iter().map(|&i| a[i]).collect();
        let bp: Vec<f64> = perm.iter().map(|&i| b[i]).collect();
        let mut g = Graph::new(false, 0);
        let (x, y) = (g.constant(t(&[1, 7], &a)), g.constant(t(&[7, 1], &b)));
        let (xp, yp) = (g.constant(t(&[1, 7], &ap)), g.constant(t(&[7, 1], &bp)));
        let c1 = g.matmul_sorted(x, y).unwrap();
        let c2 = g.matmul_sorted(xp, yp).unwrap();
        assert_eq!(
            g.value(c1).data()[0].to_bits(),
            g.value(c2).data()[0].to_bits()
        );
    }
}
