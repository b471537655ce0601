//! Reverse-mode differentiation over a linear tape.
//!
//! Every op appends a node holding its forward value plus whatever it needs
//! for the backward sweep. `Tape::backward` walks the nodes in reverse and
//! accumulates gradients into parents that require them. Parameters enter the
//! tape through [`Tape::param`], which caches one node per parameter so a
//! parameter used in several places receives the sum of all contributions.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, numel, strides, Tensor};
use crate::error::{BatError, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Mean,
    Max,
}

enum Op {
    Leaf,
    Param,
    MatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize, shared_b: bool },
    Linear { x: Var, w: Var, b: Option<Var>, rows: usize, k: usize, n: usize },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, s: f64 },
    Relu { a: Var },
    Dropout { a: Var, keep: Vec<f64> },
    Softmax { a: Var, outer: usize, len: usize, inner: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, n: usize, xhat: Vec<f64>, rstd: Vec<f64> },
    MaskedPool { x: Var, route: Vec<usize>, weight: Vec<f64>, mode: PoolMode, argmax: Vec<usize> },
    Concat { parts: Vec<Var>, widths: Vec<usize>, rows: usize },
    Permute { a: Var, perm: Vec<usize> },
    Reshape { a: Var },
    ExpandLeading { a: Var, reps: usize },
    GatherRows { table: Var, idx: Vec<usize>, width: usize },
    Attention(Box<AttentionSaved>),
    Sum { a: Var },
    Mean { a: Var },
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64>, active: Vec<bool> },
}

struct AttentionSaved {
    q: Var,
    k: Var,
    v: Var,
    lanes: usize,
    seq: usize,
    width: usize,
    heads: usize,
    /// Post-softmax weights, `[lanes, heads, seq, seq]`.
    probs: Vec<f64>,
    /// Inverted-dropout multipliers applied to `probs`, when training.
    keep: Option<Vec<f64>>,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::MatMul { .. } => "matmul",
            Op::Linear { .. } => "linear",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Relu { .. } => "relu",
            Op::Dropout { .. } => "dropout",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::MaskedPool { .. } => "masked_pool",
            Op::Concat { .. } => "concat",
            Op::Permute { .. } => "permute",
            Op::Reshape { .. } => "reshape",
            Op::ExpandLeading { .. } => "expand_leading",
            Op::GatherRows { .. } => "gather_rows",
            Op::Attention(_) => "attention",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::SoftmaxCrossEntropy { .. } => "cross_entropy",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<ParamId, Var>,
    rng: Option<ChaCha8Rng>,
    score_entries: u64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// Evaluation tape: dropout is the identity.
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new(), params: HashMap::new(), rng: None, score_entries: 0 }
    }

    /// Training tape: dropout draws from a generator seeded with `seed`.
    pub fn training(seed: u64) -> Self {
        Tape { rng: Some(ChaCha8Rng::seed_from_u64(seed)), ..Self::new() }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
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

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Attention score entries computed so far (`lanes · heads · seq²` per call).
    pub fn score_entries(&self) -> u64 {
        self.score_entries
    }

    /// Attention weights `[lanes, heads, seq, seq]` saved by an attention node.
    pub fn attention_weights(&self, v: Var) -> Option<(&[f64], [usize; 3])> {
        match &self.nodes[v.0].op {
            Op::Attention(s) => Some((&s.probs, [s.lanes, s.heads, s.seq])),
            _ => None,
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).tensor.clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    /// Batched matrix product. `a` is `[..., m, k]`; `b` is either `[k, n]`
    /// (shared across the batch) or `[..., k, n]` with the same leading axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || BatError::dim(format!("matmul of {:?} and {:?}", sa, sb));
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(mismatch());
        }
        let lead = &sa[..sa.len() - 2];
        let shared_b = sb.len() == 2;
        if !shared_b && &sb[..sb.len() - 2] != lead {
            return Err(mismatch());
        }
        let batch = numel(lead);
        let mut out = vec![0.0; batch * m * n];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            for i in 0..batch {
                let bo = if shared_b { 0 } else { i * k * n };
                gemm(
                    m,
                    k,
                    n,
                    &av[i * m * k..],
                    (k as isize, 1),
                    &bv[bo..],
                    (n as isize, 1),
                    0.0,
                    &mut out[i * m * n..],
                    (n as isize, 1),
                );
            }
        }
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b, batch, m, k, n, shared_b }, ng))
    }

    /// `x·w + b` over the last axis of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.is_empty() || sw.len() != 2 || sw[0] != *sx.last().unwrap() {
            return Err(BatError::dim(format!("linear of {:?} by {:?}", sx, sw)));
        }
        let (k, n) = (sw[0], sw[1]);
        if let Some(b) = b {
            if self.shape(b) != [n] {
                return Err(BatError::dim(format!("bias {:?} for width {n}", self.shape(b))));
            }
        }
        let rows = numel(&sx) / k.max(1);
        let mut out = vec![0.0; rows * n];
        if let Some(b) = b {
            let bv = self.value(b).data();
            for r in out.chunks_mut(n) {
                r.copy_from_slice(bv);
            }
        }
        gemm(
            rows,
            k,
            n,
            self.value(x).data(),
            (k as isize, 1),
            self.value(w).data(),
            (n as isize, 1),
            if b.is_some() { 1.0 } else { 0.0 },
            &mut out,
            (n as isize, 1),
        );
        let mut shape = sx[..sx.len() - 1].to_vec();
        shape.push(n);
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(Tensor::new(shape, out)?, Op::Linear { x, w, b, rows, k, n }, ng))
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(BatError::dim(format!("{op} of {:?} and {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add { a, b }, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul { a, b }, ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x * s).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        let ng = self.needs(a);
        self.push(t, Op::Scale { a, s }, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|&x| x.max(0.0)).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        let ng = self.needs(a);
        self.push(t, Op::Relu { a }, ng)
    }

    /// Inverted dropout; the identity on evaluation tapes or when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(BatError::Argument(format!("dropout rate {p} outside [0, 1)")));
        }
        let Some(rng) = self.rng.as_mut() else { return Ok(a) };
        if p == 0.0 {
            return Ok(a);
        }
        let scale = 1.0 / (1.0 - p);
        let n = self.nodes[a.0].value.len();
        let keep: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { scale }).collect();
        let data = self.value(a).data().iter().zip(&keep).map(|(x, k)| x * k).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let ng = self.needs(a);
        Ok(self.push(t, Op::Dropout { a, keep }, ng))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(BatError::dim(format!("softmax axis {axis} for shape {:?}", shape)));
        }
        let outer = numel(&shape[..axis]);
        let len = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let mut out = self.value(a).data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let idx = |j: usize| base + j * inner;
                let max = (0..len).map(|j| out[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (out[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[idx(j)] /= sum;
                }
            }
        }
        let ng = self.needs(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { a, outer, len, inner }, ng))
    }

    /// Normalizes each last-axis slice to zero mean and unit variance, then
    /// applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = shape.last().copied().unwrap_or(0);
        if n == 0 || self.shape(gain) != [n] || self.shape(bias) != [n] {
            return Err(BatError::dim(format!(
                "layer_norm of {:?} with gain {:?} and bias {:?}",
                shape,
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = xv.len() / n;
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let s = &xv[r * n..(r + 1) * n];
            let mean = s.iter().sum::<f64>() / n as f64;
            let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (s[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(Tensor::new(shape, out)?, Op::LayerNorm { x, gain, bias, n, xhat, rstd }, ng))
    }

    /// Reduces `axes` of `x`, counting only positions where `mask` is nonzero.
    /// `mask` covers a leading prefix of `x`'s axes and is broadcast over the
    /// rest. Values stored at masked positions are never read.
    pub fn masked_pool(&mut self, x: Var, mask: &Tensor, axes: &[usize], mode: PoolMode) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let ms = mask.shape();
        if ms.len() > shape.len() || ms != &shape[..ms.len()] {
            return Err(BatError::dim(format!("mask {:?} does not cover {:?}", ms, shape)));
        }
        let mut reduce = vec![false; shape.len()];
        for &ax in axes {
            if ax >= shape.len() || reduce[ax] {
                return Err(BatError::dim(format!("pool axes {:?} for shape {:?}", axes, shape)));
            }
            reduce[ax] = true;
        }
        let out_shape: Vec<usize> = shape.iter().zip(&reduce).filter(|(_, r)| !**r).map(|(s, _)| *s).collect();
        let out_strides = strides(&out_shape);
        let mut kept_stride = vec![0usize; shape.len()];
        let mut o = 0;
        for ax in 0..shape.len() {
            if !reduce[ax] {
                kept_stride[ax] = out_strides[o];
                o += 1;
            }
        }
        let mask_inner = numel(&shape[ms.len()..]);
        let out_len = numel(&out_shape);
        let xv = self.value(x).data();
        let total = xv.len();

        // odometer over x, tracking the flat output index
        let mut route = vec![0usize; total];
        let mut idx = vec![0usize; shape.len()];
        let mut out_i = 0usize;
        for (flat, r) in route.iter_mut().enumerate() {
            *r = out_i;
            if flat + 1 == total {
                break;
            }
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                out_i += kept_stride[ax];
                if idx[ax] < shape[ax] {
                    break;
                }
                out_i -= kept_stride[ax] * shape[ax];
                idx[ax] = 0;
            }
        }

        let on = |flat: usize| mask.data()[flat / mask_inner] != 0.0;
        let mut out = vec![0.0; out_len];
        let mut weight = Vec::new();
        let mut argmax = Vec::new();
        match mode {
            PoolMode::Mean => {
                let mut count = vec![0.0; out_len];
                for flat in 0..total {
                    if on(flat) {
                        count[route[flat]] += 1.0;
                        out[route[flat]] += xv[flat];
                    }
                }
                if count.iter().any(|&c| c == 0.0) {
                    return Err(BatError::DegenerateSlice("fully masked pooling slice".into()));
                }
                out.iter_mut().zip(&count).for_each(|(o, c)| *o /= c);
                weight = (0..total).map(|f| if on(f) { 1.0 / count[route[f]] } else { 0.0 }).collect();
            }
            PoolMode::Max => {
                argmax = vec![usize::MAX; out_len];
                for flat in 0..total {
                    if on(flat) {
                        let r = route[flat];
                        if argmax[r] == usize::MAX || xv[flat] > out[r] {
                            argmax[r] = flat;
                            out[r] = xv[flat];
                        }
                    }
                }
                if argmax.iter().any(|&a| a == usize::MAX) {
                    return Err(BatError::DegenerateSlice("fully masked pooling slice".into()));
                }
            }
        }
        let ng = self.needs(x);
        let t = Tensor::new(out_shape, out)?;
        Ok(self.push(t, Op::MaskedPool { x, route, weight, mode, argmax }, ng))
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| BatError::dim("concat of nothing"))?;
        let lead = self.shape(*first)[..self.shape(*first).len().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(BatError::dim(format!("concat of {:?} onto leading {:?}", s, lead)));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows = numel(&lead);
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                out[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let mut shape = lead;
        shape.push(total);
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { parts: parts.to_vec(), widths, rows }, ng))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(BatError::dim(format!("permutation {:?} for shape {:?}", perm, shape)));
        }
        let (out, out_shape) = permute_data(self.value(a).data(), &shape, perm);
        let ng = self.needs(a);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Permute { a, perm: perm.to_vec() }, ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let ng = self.needs(a);
        Ok(self.push(t, Op::Reshape { a }, ng))
    }

    /// Repeats `a` over new leading axes `lead`.
    pub fn expand_leading(&mut self, a: Var, lead: &[usize]) -> Result<Var> {
        let reps = numel(lead);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(src.len() * reps);
        for _ in 0..reps {
            out.extend_from_slice(src);
        }
        let mut shape = lead.to_vec();
        shape.extend_from_slice(self.shape(a));
        let ng = self.needs(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::ExpandLeading { a, reps }, ng))
    }

    /// Selects rows of a 2-D `table`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(BatError::dim(format!("gather_rows from {:?}", s)));
        }
        let (rows, width) = (s[0], s[1]);
        if let Some(bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(BatError::dim(format!("row {bad} outside table of {rows} rows")));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            out.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        let ng = self.needs(table);
        let t = Tensor::new(vec![idx.len(), width], out)?;
        Ok(self.push(t, Op::GatherRows { table, idx: idx.to_vec(), width }, ng))
    }

    /// Multi-head scaled dot-product self-attention over `[lanes, seq, width]`
    /// operands, with heads taken as contiguous slices of the width.
    /// `key_valid` (`[lanes, seq]`) marks keys that may be attended to;
    /// invalid keys get exactly zero weight.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        key_valid: Option<&[bool]>,
        dropout: f64,
    ) -> Result<Var> {
        let shape = self.shape(q).to_vec();
        if shape.len() != 3 || self.shape(k) != shape.as_slice() || self.shape(v) != shape.as_slice() {
            return Err(BatError::dim(format!(
                "attention over q {:?}, k {:?}, v {:?}",
                shape,
                self.shape(k),
                self.shape(v)
            )));
        }
        let (lanes, seq, width) = (shape[0], shape[1], shape[2]);
        if heads == 0 || width % heads != 0 {
            return Err(BatError::dim(format!("width {width} not divisible into {heads} heads")));
        }
        if let Some(kv) = key_valid {
            if kv.len() != lanes * seq {
                return Err(BatError::dim(format!("key mask of {} for {lanes}x{seq}", kv.len())));
            }
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(BatError::Argument(format!("dropout rate {dropout} outside [0, 1)")));
        }
        let dk = width / heads;
        let inv = 1.0 / (dk as f64).sqrt();
        let n_scores = lanes * heads * seq * seq;
        self.score_entries += n_scores as u64;
        let keep = match self.rng.as_mut() {
            Some(rng) if dropout > 0.0 => {
                let scale = 1.0 / (1.0 - dropout);
                Some((0..n_scores).map(|_| if rng.gen::<f64>() < dropout { 0.0 } else { scale }).collect::<Vec<_>>())
            }
            _ => None,
        };
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; n_scores];
        let mut out = vec![0.0; lanes * seq * width];
        let w = width as isize;
        for l in 0..lanes {
            let valid = key_valid.map(|m| &m[l * seq..(l + 1) * seq]);
            if valid.is_some_and(|m| !m.iter().any(|&b| b)) {
                return Err(BatError::DegenerateAttention(format!("lane {l} has no valid key")));
            }
            for h in 0..heads {
                let off = l * seq * width + h * dk;
                let p = &mut probs[(l * heads + h) * seq * seq..(l * heads + h + 1) * seq * seq];
                gemm(seq, dk, seq, &qv[off..], (w, 1), &kv[off..], (1, w), 0.0, p, (seq as isize, 1));
                for row in p.chunks_mut(seq) {
                    let mut max = f64::NEG_INFINITY;
                    for (j, s) in row.iter_mut().enumerate() {
                        *s *= inv;
                        if valid.map_or(true, |m| m[j]) {
                            max = max.max(*s);
                        }
                    }
                    let mut sum = 0.0;
                    for (j, s) in row.iter_mut().enumerate() {
                        if valid.map_or(true, |m| m[j]) {
                            *s = (*s - max).exp();
                            sum += *s;
                        } else {
                            *s = 0.0;
                        }
                    }
                    row.iter_mut().for_each(|s| *s /= sum);
                }
            }
        }
        let used: std::borrow::Cow<[f64]> = match &keep {
            Some(keep) => probs.iter().zip(keep).map(|(p, k)| p * k).collect::<Vec<_>>().into(),
            None => (&probs[..]).into(),
        };
        for l in 0..lanes {
            for h in 0..heads {
                let off = l * seq * width + h * dk;
                let p = &used[(l * heads + h) * seq * seq..];
                gemm(seq, seq, dk, p, (seq as isize, 1), &vv[off..], (w, 1), 0.0, &mut out[off..], (w, 1));
            }
        }
        drop(used);
        let ng = self.needs(q) || self.needs(k) || self.needs(v);
        let saved = AttentionSaved { q, k, v, lanes, seq, width, heads, probs, keep };
        Ok(self.push(Tensor::new(shape, out)?, Op::Attention(Box::new(saved)), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum { a }, ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a).data();
        let s = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Mean { a }, ng)
    }

    /// Mean softmax cross-entropy of `[batch, classes]` logits. The
    /// probability of the true class is clamped to `[1e-12, 1 - 1e-12]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(BatError::dim(format!("logits {:?} for {} labels", s, labels.len())));
        }
        let c = s[1];
        if let Some(bad) = labels.iter().find(|&&y| y >= c) {
            return Err(BatError::dim(format!("label {bad} for {c} classes")));
        }
        let lv = self.value(logits).data();
        let mut probs = vec![0.0; lv.len()];
        let mut active = vec![true; labels.len()];
        let mut loss = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = &lv[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
            for j in 0..c {
                probs[r * c + j] = (row[j] - max).exp() / sum;
            }
            let py = probs[r * c + y];
            let clamped = py.clamp(1e-12, 1.0 - 1e-12);
            active[r] = clamped == py;
            loss -= clamped.ln();
        }
        loss /= labels.len().max(1) as f64;
        let ng = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec(), probs, active },
            ng,
        ))
    }

    /// Fingerprint of every piecewise branch taken in the forward pass: ReLU
    /// input signs, max-pool winners and loss clamps. Two evaluations with
    /// equal signatures lie on the same smooth piece of the function.
    pub fn branch_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |x: u64| {
            h ^= x;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for node in &self.nodes {
            match &node.op {
                &Op::Relu { a } => self.nodes[a.0].value.data().iter().for_each(|&v| mix(u64::from(v > 0.0))),
                Op::MaskedPool { mode: PoolMode::Max, argmax, .. } => argmax.iter().for_each(|&i| mix(i as u64)),
                Op::SoftmaxCrossEntropy { active, .. } => active.iter().for_each(|&b| mix(u64::from(b))),
                _ => {}
            }
        }
        h
    }

    /// Names the first op whose output holds a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self.nodes.iter().find(|n| !n.value.all_finite()) {
            Some(n) => Err(BatError::Numeric { op: n.op.name().into(), detail: "non-finite output".into() }),
            None => Ok(()),
        }
    }

    /// Back-propagates from scalar `root`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(BatError::dim(format!("backward from non-scalar {:?}", self.shape(root))));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        self.grads[root.0] = Some(vec![1.0]);
        let Tape { nodes, grads, .. } = self;
        for i in (0..=root.0).rev() {
            if !nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backward_node(nodes, grads, i, &g);
            grads[i] = Some(g);
        }
        Ok(())
    }

    /// Adds the gradients of every parameter node into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (&id, &v) in &self.params {
            if let Some(g) = self.grad(v) {
                store.get_mut(id).grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
    }
}

fn permute_data(src: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let step: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = src.len();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return (out, out_shape);
    }
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut src_i = 0usize;
    loop {
        out.push(src[src_i]);
        if out.len() == total {
            break;
        }
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src_i += step[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src_i -= step[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out, out_shape)
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
    if !nodes[v.0].needs_grad {
        return;
    }
    let g = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
    f(g);
}

fn backward_node(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    let val = |v: Var| nodes[v.0].value.data();
    match &nodes[i].op {
        Op::Leaf | Op::Param => {}
        &Op::MatMul { a, b, batch, m, k, n, shared_b } => {
            let (av, bv) = (val(a), val(b));
            accumulate(nodes, grads, a, |ga| {
                for t in 0..batch {
                    let bo = if shared_b { 0 } else { t * k * n };
                    // dA = dC·Bᵀ
                    gemm(m, n, k, &g[t * m * n..], (n as isize, 1), &bv[bo..], (1, n as isize), 1.0, &mut ga[t * m * k..], (k as isize, 1));
                }
            });
            accumulate(nodes, grads, b, |gb| {
                for t in 0..batch {
                    let bo = if shared_b { 0 } else { t * k * n };
                    // dB = Aᵀ·dC
                    gemm(k, m, n, &av[t * m * k..], (1, k as isize), &g[t * m * n..], (n as isize, 1), 1.0, &mut gb[bo..], (n as isize, 1));
                }
            });
        }
        &Op::Linear { x, w, b, rows, k, n } => {
            let (xv, wv) = (val(x), val(w));
            accumulate(nodes, grads, x, |gx| {
                gemm(rows, n, k, g, (n as isize, 1), wv, (1, n as isize), 1.0, gx, (k as isize, 1));
            });
            accumulate(nodes, grads, w, |gw| {
                gemm(k, rows, n, xv, (1, k as isize), g, (n as isize, 1), 1.0, gw, (n as isize, 1));
            });
            if let Some(b) = b {
                accumulate(nodes, grads, b, |gb| {
                    for r in g.chunks(n) {
                        gb.iter_mut().zip(r).for_each(|(a, d)| *a += d);
                    }
                });
            }
        }
        &Op::Add { a, b } => {
            accumulate(nodes, grads, a, |ga| ga.iter_mut().zip(g).for_each(|(x, d)| *x += d));
            accumulate(nodes, grads, b, |gb| gb.iter_mut().zip(g).for_each(|(x, d)| *x += d));
        }
        &Op::Mul { a, b } => {
            let (av, bv) = (val(a), val(b));
            accumulate(nodes, grads, a, |ga| {
                for j in 0..ga.len() {
                    ga[j] += g[j] * bv[j];
                }
            });
            accumulate(nodes, grads, b, |gb| {
                for j in 0..gb.len() {
                    gb[j] += g[j] * av[j];
                }
            });
        }
        &Op::Scale { a, s } => {
            accumulate(nodes, grads, a, |ga| ga.iter_mut().zip(g).for_each(|(x, d)| *x += d * s));
        }
        &Op::Relu { a } => {
            let av = val(a);
            accumulate(nodes, grads, a, |ga| {
                for j in 0..ga.len() {
                    if av[j] > 0.0 {
                        ga[j] += g[j];
                    }
                }
            });
        }
        Op::Dropout { a, keep } => {
            accumulate(nodes, grads, *a, |ga| {
                for j in 0..ga.len() {
                    ga[j] += g[j] * keep[j];
                }
            });
        }
        &Op::Softmax { a, outer, len, inner } => {
            let y = nodes[i].value.data();
            accumulate(nodes, grads, a, |ga| {
                for o in 0..outer {
                    for t in 0..inner {
                        let base = o * len * inner + t;
                        let dot: f64 = (0..len).map(|j| g[base + j * inner] * y[base + j * inner]).sum();
                        for j in 0..len {
                            let p = base + j * inner;
                            ga[p] += y[p] * (g[p] - dot);
                        }
                    }
                }
            });
        }
        Op::LayerNorm { x, gain, bias, n, xhat, rstd } => {
            let n = *n;
            let gv = val(*gain);
            accumulate(nodes, grads, *x, |gx| {
                let mut dxhat = vec![0.0; n];
                for (r, rs) in rstd.iter().enumerate() {
                    let off = r * n;
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for j in 0..n {
                        dxhat[j] = g[off + j] * gv[j];
                        mean_d += dxhat[j];
                        mean_dx += dxhat[j] * xhat[off + j];
                    }
                    mean_d /= n as f64;
                    mean_dx /= n as f64;
                    for j in 0..n {
                        gx[off + j] += rs * (dxhat[j] - mean_d - xhat[off + j] * mean_dx);
                    }
                }
            });
            accumulate(nodes, grads, *gain, |gg| {
                for (r, gr) in g.chunks(n).enumerate() {
                    for j in 0..n {
                        gg[j] += gr[j] * xhat[r * n + j];
                    }
                }
            });
            accumulate(nodes, grads, *bias, |gb| {
                for gr in g.chunks(n) {
                    gb.iter_mut().zip(gr).for_each(|(a, d)| *a += d);
                }
            });
        }
        Op::MaskedPool { x, route, weight, mode, argmax } => {
            accumulate(nodes, grads, *x, |gx| match mode {
                PoolMode::Mean => {
                    for f in 0..gx.len() {
                        gx[f] += g[route[f]] * weight[f];
                    }
                }
                PoolMode::Max => {
                    for (o, &src) in argmax.iter().enumerate() {
                        gx[src] += g[o];
                    }
                }
            });
        }
        Op::Concat { parts, widths, rows } => {
            let total: usize = widths.iter().sum();
            let mut off = 0;
            for (&p, &w) in parts.iter().zip(widths) {
                accumulate(nodes, grads, p, |gp| {
                    for r in 0..*rows {
                        let dst = &mut gp[r * w..(r + 1) * w];
                        dst.iter_mut().zip(&g[r * total + off..r * total + off + w]).for_each(|(a, d)| *a += d);
                    }
                });
                off += w;
            }
        }
        Op::Permute { a, perm } => {
            let out_shape = nodes[i].value.shape();
            let mut inverse = vec![0; perm.len()];
            for (o, &p) in perm.iter().enumerate() {
                inverse[p] = o;
            }
            let (back, _) = permute_data(g, out_shape, &inverse);
            accumulate(nodes, grads, *a, |ga| ga.iter_mut().zip(&back).for_each(|(x, d)| *x += d));
        }
        &Op::Reshape { a } => {
            accumulate(nodes, grads, a, |ga| ga.iter_mut().zip(g).for_each(|(x, d)| *x += d));
        }
        &Op::ExpandLeading { a, reps } => {
            accumulate(nodes, grads, a, |ga| {
                let n = ga.len();
                for r in 0..reps {
                    ga.iter_mut().zip(&g[r * n..(r + 1) * n]).for_each(|(x, d)| *x += d);
                }
            });
        }
        Op::GatherRows { table, idx, width } => {
            let w = *width;
            accumulate(nodes, grads, *table, |gt| {
                for (r, &row) in idx.iter().enumerate() {
                    gt[row * w..(row + 1) * w].iter_mut().zip(&g[r * w..(r + 1) * w]).for_each(|(x, d)| *x += d);
                }
            });
        }
        Op::Attention(s) => attention_backward(nodes, grads, s, g),
        &Op::Sum { a } => {
            accumulate(nodes, grads, a, |ga| ga.iter_mut().for_each(|x| *x += g[0]));
        }
        &Op::Mean { a } => {
            accumulate(nodes, grads, a, |ga| {
                let d = g[0] / ga.len() as f64;
                ga.iter_mut().for_each(|x| *x += d)
            });
        }
        Op::SoftmaxCrossEntropy { logits, labels, probs, active } => {
            let c = probs.len() / labels.len().max(1);
            let scale = g[0] / labels.len() as f64;
            accumulate(nodes, grads, *logits, |gl| {
                for (r, &y) in labels.iter().enumerate() {
                    if !active[r] {
                        continue;
                    }
                    for j in 0..c {
                        let onehot = if j == y { 1.0 } else { 0.0 };
                        gl[r * c + j] += scale * (probs[r * c + j] - onehot);
                    }
                }
            });
        }
    }
}

fn attention_backward(nodes: &[Node], grads: &mut [Option<Vec<f64>>], s: &AttentionSaved, g: &[f64]) {
    let AttentionSaved { q, k, v, lanes, seq, width, heads, ref probs, ref keep } = *s;
    let dk = width / heads;
    let inv = 1.0 / (dk as f64).sqrt();
    let w = width as isize;
    let sq = seq as isize;
    let (qv, kv, vv) = (nodes[q.0].value.data(), nodes[k.0].value.data(), nodes[v.0].value.data());
    let block = seq * seq;
    let mut dp = vec![0.0; block];
    let mut used = vec![0.0; block];
    let mut dq = vec![0.0; qv.len()];
    let mut dkk = vec![0.0; kv.len()];
    let mut dv = vec![0.0; vv.len()];
    for l in 0..lanes {
        for h in 0..heads {
            let off = l * seq * width + h * dk;
            let pb = (l * heads + h) * block;
            let p = &probs[pb..pb + block];
            match keep {
                Some(kp) => used.iter_mut().zip(p.iter().zip(&kp[pb..pb + block])).for_each(|(u, (a, b))| *u = a * b),
                None => used.copy_from_slice(p),
            }
            // d(used weights) = dOut·Vᵀ
            gemm(seq, dk, seq, &g[off..], (w, 1), &vv[off..], (1, w), 0.0, &mut dp, (sq, 1));
            // dV += usedᵀ·dOut
            gemm(seq, seq, dk, &used, (1, sq), &g[off..], (w, 1), 1.0, &mut dv[off..], (w, 1));
            if let Some(kp) = keep {
                dp.iter_mut().zip(&kp[pb..pb + block]).for_each(|(d, m)| *d *= m);
            }
            for r in 0..seq {
                let row = &mut dp[r * seq..(r + 1) * seq];
                let prow = &p[r * seq..(r + 1) * seq];
                let dot: f64 = row.iter().zip(prow).map(|(a, b)| a * b).sum();
                for j in 0..seq {
                    row[j] = prow[j] * (row[j] - dot) * inv;
                }
            }
            gemm(seq, seq, dk, &dp, (sq, 1), &kv[off..], (w, 1), 1.0, &mut dq[off..], (w, 1));
            gemm(seq, seq, dk, &dp, (1, sq), &qv[off..], (w, 1), 1.0, &mut dkk[off..], (w, 1));
        }
    }
    for (var, d) in [(q, dq), (k, dkk), (v, dv)] {
        accumulate(nodes, grads, var, |gx| gx.iter_mut().zip(&d).for_each(|(a, b)| *a += b));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.constant(t(&[2, 2], &[2.0, 3.0, 4.0, 5.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[2.0, 3.0, 4.0, 5.0]);

        let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2, 1], &[3.0, 4.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[11.0]);
        assert_eq!(tape.shape(c), &[1, 1]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_vec(vec![0.0, 0.0]));
        let s = tape.softmax(a, 0).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);

        let a = tape.constant(Tensor::from_vec(vec![1000.0; 3]));
        let s = tape.softmax(a, 0).unwrap();
        for &p in tape.value(s).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }

        let a = tape.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let s = tape.softmax(a, 0).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        let expect = [1f64.exp() / z, 2f64.exp() / z, 3f64.exp() / z];
        for (p, e) in tape.value(s).data().iter().zip(expect) {
            assert!((p - e).abs() < 1e-15);
        }
        assert!((expect[0] - 0.09003).abs() < 1e-5);
        assert!((expect[1] - 0.24473).abs() < 1e-5);
        assert!((expect[2] - 0.66524).abs() < 1e-5);

        assert!(matches!(tape.softmax(a, 1), Err(BatError::Dimension(_))));
    }

    #[test]
    fn softmax_along_inner_axis() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[0.0, 5.0, 0.0, 5.0]));
        let s = tape.softmax(a, 0).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::new();
        let gain = tape.constant(Tensor::full(&[4], 1.0));
        let bias = tape.constant(Tensor::zeros(&[4]));
        let x = tape.constant(Tensor::from_vec(vec![5.0; 4]));
        let y = tape.layer_norm(x, gain, bias).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0; 4]);

        let gain = tape.constant(Tensor::full(&[2], 1.0));
        let bias = tape.constant(Tensor::zeros(&[2]));
        let x = tape.constant(Tensor::from_vec(vec![1.0, 3.0]));
        let y = tape.layer_norm(x, gain, bias).unwrap();
        let v = tape.value(y).data();
        assert!((v[0] + 1.0).abs() < 1e-4 && (v[1] - 1.0).abs() < 1e-4);

        let x = tape.constant(Tensor::from_vec(vec![1.0, 3.0, 4.0]));
        assert!(matches!(tape.layer_norm(x, gain, bias), Err(BatError::Dimension(_))));
    }

    #[test]
    fn masked_pool_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let y = tape.masked_pool(x, &Tensor::from_vec(vec![1.0; 3]), &[0], PoolMode::Mean).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0]);

        let x = tape.constant(Tensor::from_vec(vec![1.0, 9.0, 3.0]));
        let y = tape.masked_pool(x, &Tensor::from_vec(vec![1.0, 0.0, 1.0]), &[0], PoolMode::Max).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0]);

        let x = tape.constant(Tensor::from_vec(vec![2.0, 4.0, 100.0]));
        let y = tape.masked_pool(x, &Tensor::from_vec(vec![1.0, 1.0, 0.0]), &[0], PoolMode::Mean).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0]);
    }

    #[test]
    fn masked_pool_rejects_fully_masked_slice() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let mask = t(&[2, 2], &[1.0, 1.0, 0.0, 0.0]);
        for mode in [PoolMode::Mean, PoolMode::Max] {
            assert!(matches!(tape.masked_pool(x, &mask, &[1], mode), Err(BatError::DegenerateSlice(_))));
        }
    }

    #[test]
    fn masked_pool_broadcasts_mask_over_trailing_axes() {
        let mut tape = Tape::new();
        // [2 rows, 2 features]; mask over rows only
        let x = tape.constant(t(&[2, 2], &[1.0, 10.0, 3.0, 30.0]));
        let y = tape.masked_pool(x, &Tensor::from_vec(vec![1.0, 0.0]), &[0], PoolMode::Mean).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 10.0]);
    }

    #[test]
    fn permute_round_trip() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let x = tape.constant(t(&[2, 3, 4], &data));
        let y = tape.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(tape.shape(y), &[4, 2, 3]);
        // y[i][j][k] = x[j][k][i]
        assert_eq!(tape.value(y).data()[1 * 6 + 1 * 3 + 2], data[1 * 12 + 2 * 4 + 1]);
        let z = tape.permute(y, &[1, 2, 0]).unwrap();
        assert_eq!(tape.value(z).data(), &data[..]);
    }

    #[test]
    fn attention_single_key_and_uniform() {
        let mut tape = Tape::new();
        let q = tape.constant(t(&[1, 1, 2], &[0.3, -1.0]));
        let v = tape.constant(t(&[1, 1, 2], &[4.0, 5.0]));
        let o = tape.attention(q, q, v, 1, None, 0.0).unwrap();
        assert_eq!(tape.value(o).data(), &[4.0, 5.0]);
        let (w, _) = tape.attention_weights(o).unwrap();
        assert_eq!(w, &[1.0]);

        let k = tape.constant(t(&[1, 3, 1], &[2.0, 2.0, 2.0]));
        let v = tape.constant(t(&[1, 3, 1], &[1.0, 2.0, 3.0]));
        let o = tape.attention(k, k, v, 1, None, 0.0).unwrap();
        let (w, _) = tape.attention_weights(o).unwrap();
        for &x in w {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn attention_padded_keys_get_zero_weight() {
        let mut tape = Tape::new();
        let q = tape.constant(t(&[1, 3, 1], &[1.0, 2.0, 3.0]));
        let o = tape.attention(q, q, q, 1, Some(&[true, true, false]), 0.0).unwrap();
        let (w, _) = tape.attention_weights(o).unwrap();
        for r in 0..3 {
            assert_eq!(w[r * 3 + 2], 0.0);
            assert!((w[r * 3] + w[r * 3 + 1] - 1.0).abs() < 1e-12);
        }
        let err = tape.attention(q, q, q, 1, Some(&[false, false, false]), 0.0);
        assert!(matches!(err, Err(BatError::DegenerateAttention(_))));
    }

    #[test]
    fn dropout_is_identity_when_evaluating() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![1.0, 2.0]));
        let y = tape.dropout(x, 0.5).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_scales_kept_entries() {
        let mut tape = Tape::training(3);
        let x = tape.constant(Tensor::full(&[1000], 1.0));
        let y = tape.dropout(x, 0.25).unwrap();
        let v = tape.value(y).data();
        assert!(v.iter().all(|&e| e == 0.0 || (e - 1.0 / 0.75).abs() < 1e-15));
        let kept = v.iter().filter(|&&e| e > 0.0).count();
        assert!((650..850).contains(&kept), "{kept}");
    }

    #[test]
    fn cross_entropy_clamps() {
        let mut tape = Tape::new();
        let z = tape.input(t(&[1, 2], &[-100.0, 100.0]));
        let l = tape.softmax_cross_entropy(z, &[0]).unwrap();
        assert!((tape.value(l).item() + (1e-12f64).ln()).abs() < 1e-9);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(z).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn shared_param_collects_both_uses() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::from_vec(vec![3.0])).unwrap();
        let mut tape = Tape::new();
        let a = tape.param(&store, id);
        let b = tape.param(&store, id);
        assert_eq!(a, b);
        let y = tape.mul(a, b).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        tape.accumulate_param_grads(&mut store);
        assert_eq!(store.get(id).grad, vec![6.0]);
    }
}
