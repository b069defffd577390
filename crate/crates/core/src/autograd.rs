//! Reverse-mode differentiation over a fixed operation set.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters enter
//! the tape by value from a [`ParamStore`]; [`Tape::backward`] walks the tape
//! in reverse and returns per-parameter [`Gradients`], which the caller folds
//! into the store with [`ParamStore::accumulate`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use crate::tensor::{self, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    value: Tensor,
    grad: Tensor,
    has_grad: bool,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor {
        &mut self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    /// True once a gradient has been accumulated since the last zeroing.
    pub fn has_grad(&self) -> bool {
        self.has_grad
    }
}

/// Named parameters, addressed by [`ParamId`] in insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            grad,
            has_grad: false,
        });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
            p.has_grad = false;
        }
    }

    pub fn clear_grad(&mut self, id: ParamId) {
        let p = &mut self.params[id.0];
        p.grad.data_mut().fill(0.0);
        p.has_grad = false;
    }

    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in &grads.by_param {
            let p = &mut self.params[id.0];
            for (dst, src) in p.grad.data_mut().iter_mut().zip(g.data()) {
                *dst += src;
            }
            p.has_grad = true;
        }
    }

    /// Overwrites one parameter's gradient. Used by the optimizer tests and
    /// the self-test perturbation hook.
    pub fn set_grad(&mut self, id: ParamId, grad: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if grad.shape() != p.value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_grad",
                left: p.value.shape().to_vec(),
                right: grad.shape().to_vec(),
            });
        }
        p.grad = grad;
        p.has_grad = true;
        Ok(())
    }

    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, values: &[Tensor]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!(
                "snapshot holds {} tensors, store has {}",
                values.len(),
                self.params.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::ShapeMismatch {
                    op: "restore",
                    left: p.value.shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
            p.value = v.clone();
        }
        Ok(())
    }
}

/// Gradients produced by one backward pass, keyed by parameter.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.by_param.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u32,
    idx: usize,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(usize, usize),
    MatMulNT(usize, usize),
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Add(usize, usize),
    AddScalar(usize),
    Scale(usize, f64),
    MulConst(usize, Tensor),
    Gelu(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRows {
        src: usize,
        rows: Vec<usize>,
    },
    ConcatRows(Vec<usize>),
    Attention {
        qkv: usize,
        seqs: Vec<(usize, usize)>,
        heads: usize,
        probs: Vec<f64>,
    },
    NormalizeRows {
        x: usize,
        norms: Vec<f64>,
    },
    Contrast {
        logits: usize,
        positive: Vec<bool>,
        denominator: Vec<bool>,
    },
    Sum(usize),
    Mean(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

static NEXT_TAPE: AtomicU32 = AtomicU32::new(1);

/// Operation recorder for one forward pass.
#[derive(Debug)]
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        v.idx
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let requires_grad = match op {
            Op::Param(_) => true,
            _ => inputs.iter().any(|&i| self.nodes[i].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[self.idx(v)].value
    }

    /// The single element of a one-element value.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, &[])
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id), &[])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let value = tensor::matmul(&self.nodes[ia].value, &self.nodes[ib].value)?;
        Ok(self.push(value, Op::MatMul(ia, ib), &[ia, ib]))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let (av, bv) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let (m, k) = av.dims2()?;
        let (n, k2) = bv.dims2()?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        tensor::gemm_nt(m, k, n, av.data(), bv.data(), &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMulNT(ia, ib), &[ia, ib]))
    }

    /// `x · w + b` with `x: T×i`, `w: i×o`, `b: o`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (ix, iw) = (self.idx(x), self.idx(w));
        let ib = b.map(|b| self.idx(b));
        let (xv, wv) = (&self.nodes[ix].value, &self.nodes[iw].value);
        let (t, i) = xv.dims2()?;
        let (i2, o) = wv.dims2()?;
        if i != i2 {
            return Err(Error::ShapeMismatch {
                op: "linear",
                left: xv.shape().to_vec(),
                right: wv.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; t * o];
        if let Some(ib) = ib {
            let bv = &self.nodes[ib].value;
            if bv.len() != o {
                return Err(Error::ShapeMismatch {
                    op: "linear bias",
                    left: wv.shape().to_vec(),
                    right: bv.shape().to_vec(),
                });
            }
            for row in out.chunks_mut(o) {
                row.copy_from_slice(bv.data());
            }
        }
        tensor::gemm_nn(t, i, o, xv.data(), wv.data(), &mut out);
        let value = Tensor::new(vec![t, o], out)?;
        let mut inputs = vec![ix, iw];
        inputs.extend(ib);
        Ok(self.push(value, Op::Linear { x: ix, w: iw, b: ib }, &inputs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let (av, bv) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if av.shape() != bv.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(ia, ib), &[ia, ib]))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let ia = self.idx(a);
        let av = &self.nodes[ia].value;
        let data = av.data().iter().map(|x| x + c).collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::AddScalar(ia), &[ia])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ia = self.idx(a);
        let av = &self.nodes[ia].value;
        let data = av.data().iter().map(|x| x * c).collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Scale(ia, c), &[ia])
    }

    /// Elementwise product with a fixed tensor (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        let ia = self.idx(a);
        let av = &self.nodes[ia].value;
        if av.shape() != c.shape() {
            return Err(Error::ShapeMismatch {
                op: "mul_const",
                left: av.shape().to_vec(),
                right: c.shape().to_vec(),
            });
        }
        let data = av.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, Op::MulConst(ia, c), &[ia]))
    }

    /// Exact (erf) GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let av = &self.nodes[ia].value;
        let data = av.data().iter().map(|&x| gelu(x)).collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Gelu(ia), &[ia])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (ix, ig, ib) = (self.idx(x), self.idx(gain), self.idx(bias));
        let (xv, gv, bv) = (
            &self.nodes[ix].value,
            &self.nodes[ig].value,
            &self.nodes[ib].value,
        );
        let (t, h) = xv.dims2()?;
        if h < 2 {
            return Err(Error::InvalidShape("layer_norm needs h >= 2".into()));
        }
        if gv.len() != h || bv.len() != h {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                left: xv.shape().to_vec(),
                right: gv.shape().to_vec(),
            });
        }
        let mut xhat = vec![0.0; t * h];
        let mut inv_std = vec![0.0; t];
        let mut out = vec![0.0; t * h];
        for r in 0..t {
            let row = &xv.data()[r * h..(r + 1) * h];
            let (mean, is) = tensor::row_moments(row, eps);
            inv_std[r] = is;
            for j in 0..h {
                let n = (row[j] - mean) * is;
                xhat[r * h + j] = n;
                out[r * h + j] = n * gv.data()[j] + bv.data()[j];
            }
        }
        let value = Tensor::new(vec![t, h], out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x: ix,
                gain: ig,
                bias: ib,
                xhat,
                inv_std,
            },
            &[ix, ig, ib],
        ))
    }

    /// Selects rows of a matrix, with repetition allowed (embedding lookup,
    /// CLS extraction).
    pub fn gather_rows(&mut self, src: Var, rows: &[usize]) -> Result<Var> {
        let is = self.idx(src);
        let sv = &self.nodes[is].value;
        let (n, c) = sv.dims2()?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::InvalidArgument(format!(
                "row {bad} out of range for {n} rows"
            )));
        }
        if rows.is_empty() {
            return Err(Error::InvalidArgument("gather of zero rows".into()));
        }
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            out.extend_from_slice(sv.row(r));
        }
        let value = Tensor::new(vec![rows.len(), c], out)?;
        Ok(self.push(
            value,
            Op::GatherRows {
                src: is,
                rows: rows.to_vec(),
            },
            &[is],
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let idx: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect();
        let first = idx
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let (_, c) = self.nodes[*first].value.dims2()?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &i in &idx {
            let v = &self.nodes[i].value;
            let (r, c2) = v.dims2()?;
            if c2 != c {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    left: self.nodes[*first].value.shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
            rows += r;
            out.extend_from_slice(v.data());
        }
        let value = Tensor::new(vec![rows, c], out)?;
        Ok(self.push(value, Op::ConcatRows(idx.clone()), &idx))
    }

    /// Multi-head self-attention over packed sequences.
    ///
    /// `qkv` is `T×3h` with the query, key and value blocks side by side;
    /// `seqs` lists `(start_row, len)` for each sequence. Attention never
    /// crosses sequence boundaries. Returns the `T×h` head outputs before
    /// the output projection.
    pub fn attention(&mut self, qkv: Var, seqs: &[(usize, usize)], heads: usize) -> Result<Var> {
        let iq = self.idx(qkv);
        let qv = &self.nodes[iq].value;
        let (t, w) = qv.dims2()?;
        if heads == 0 || w % (3 * heads) != 0 {
            return Err(Error::InvalidShape(format!(
                "qkv width {w} is not 3 × a multiple of {heads} heads"
            )));
        }
        let h = w / 3;
        let dh = h / heads;
        let covered: usize = seqs.iter().map(|s| s.1).sum();
        if covered != t || seqs.iter().any(|&(s, l)| l == 0 || s + l > t) {
            return Err(Error::InvalidShape("sequence layout does not tile the rows".into()));
        }
        let scale = 1.0 / libm::sqrt(dh as f64);
        let data = qv.data();
        let mut out = vec![0.0; t * h];
        let mut probs = Vec::with_capacity(seqs.iter().map(|s| s.1 * s.1).sum::<usize>() * heads);
        for &(start, len) in seqs {
            for hd in 0..heads {
                let q_off = hd * dh;
                let k_off = h + hd * dh;
                let v_off = 2 * h + hd * dh;
                let base = probs.len();
                for i in 0..len {
                    let qrow = &data[(start + i) * w + q_off..(start + i) * w + q_off + dh];
                    let mut row: Vec<f64> = (0..len)
                        .map(|j| {
                            let krow =
                                &data[(start + j) * w + k_off..(start + j) * w + k_off + dh];
                            tensor::dot(qrow, krow) * scale
                        })
                        .collect();
                    tensor::softmax_in_place(&mut row);
                    probs.extend_from_slice(&row);
                }
                for i in 0..len {
                    let o = &mut out[(start + i) * h + hd * dh..(start + i) * h + hd * dh + dh];
                    for j in 0..len {
                        let p = probs[base + i * len + j];
                        let vrow = &data[(start + j) * w + v_off..(start + j) * w + v_off + dh];
                        for (ov, vv) in o.iter_mut().zip(vrow) {
                            *ov += p * vv;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![t, h], out)?;
        Ok(self.push(
            value,
            Op::Attention {
                qkv: iq,
                seqs: seqs.to_vec(),
                heads,
                probs,
            },
            &[iq],
        ))
    }

    /// Scales every row to unit Euclidean norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x);
        let xv = &self.nodes[ix].value;
        let (n, c) = xv.dims2()?;
        let mut norms = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n * c);
        for r in 0..n {
            let row = xv.row(r);
            let nr = tensor::norm(row);
            if nr == 0.0 || !nr.is_finite() {
                return Err(Error::DegenerateInput(format!("row {r} has norm {nr}")));
            }
            norms.push(nr);
            out.extend(row.iter().map(|v| v / nr));
        }
        let value = Tensor::new(vec![n, c], out)?;
        Ok(self.push(value, Op::NormalizeRows { x: ix, norms }, &[ix]))
    }

    /// Per-anchor contrastive term over an `N×M` logit matrix:
    /// `out_i = LSE_{j ∈ den_i} l_ij − LSE_{j ∈ pos_i} l_ij`, i.e.
    /// `−log(Σ_pos e^l / Σ_den e^l)`. Both masks are row-major `N×M` and every
    /// row of each mask must select at least one entry.
    pub fn contrast(&mut self, logits: Var, positive: Vec<bool>, denominator: Vec<bool>) -> Result<Var> {
        let il = self.idx(logits);
        let lv = &self.nodes[il].value;
        let (n, m) = lv.dims2()?;
        if positive.len() != n * m || denominator.len() != n * m {
            return Err(Error::InvalidShape(format!(
                "masks must have {} entries for {n}×{m} logits",
                n * m
            )));
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let row = lv.row(i);
            let pos = tensor::masked_logsumexp(row, &positive[i * m..(i + 1) * m]);
            let den = tensor::masked_logsumexp(row, &denominator[i * m..(i + 1) * m]);
            if pos == f64::NEG_INFINITY || den == f64::NEG_INFINITY {
                return Err(Error::InvalidArgument(format!(
                    "contrast row {i} has an empty mask"
                )));
            }
            out.push(den - pos);
        }
        let value = Tensor::new(vec![n], out)?;
        Ok(self.push(
            value,
            Op::Contrast {
                logits: il,
                positive,
                denominator,
            },
            &[il],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let s = self.nodes[ia].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(ia), &[ia])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let v = &self.nodes[ia].value;
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(ia), &[ia])
    }

    /// Gradients of a one-element value with respect to every parameter that
    /// reaches it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.tape != self.id {
            return Err(Error::NoGraph);
        }
        let root = loss.idx;
        if !self.nodes[root].requires_grad {
            return Err(Error::NoGraph);
        }
        if self.nodes[root].value.len() != 1 {
            return Err(Error::InvalidShape(format!(
                "backward needs a scalar, got shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(root + 1, || None);
        grads[root] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for idx in (0..=root).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => match out.by_param.get_mut(id) {
                    Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => {
                        out.by_param
                            .insert(*id, Tensor::new(node.value.shape().to_vec(), g)?);
                    }
                },
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (m, k) = av.dims2()?;
                    let (_, n) = bv.dims2()?;
                    if self.nodes[*a].requires_grad {
                        let da = self.grad_slot(&mut grads, *a);
                        tensor::gemm_nt(m, n, k, &g, bv.data(), da);
                    }
                    if self.nodes[*b].requires_grad {
                        let db = self.grad_slot(&mut grads, *b);
                        tensor::gemm_tn(k, m, n, av.data(), &g, db);
                    }
                }
                Op::MatMulNT(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (m, k) = av.dims2()?;
                    let (n, _) = bv.dims2()?;
                    if self.nodes[*a].requires_grad {
                        let da = self.grad_slot(&mut grads, *a);
                        tensor::gemm_nn(m, n, k, &g, bv.data(), da);
                    }
                    if self.nodes[*b].requires_grad {
                        let db = self.grad_slot(&mut grads, *b);
                        tensor::gemm_tn(n, m, k, &g, av.data(), db);
                    }
                }
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (&self.nodes[*x].value, &self.nodes[*w].value);
                    let (t, i) = xv.dims2()?;
                    let (_, o) = wv.dims2()?;
                    if self.nodes[*x].requires_grad {
                        let dx = self.grad_slot(&mut grads, *x);
                        tensor::gemm_nt(t, o, i, &g, wv.data(), dx);
                    }
                    if self.nodes[*w].requires_grad {
                        let dw = self.grad_slot(&mut grads, *w);
                        tensor::gemm_tn(i, t, o, xv.data(), &g, dw);
                    }
                    if let Some(b) = b {
                        if self.nodes[*b].requires_grad {
                            let db = self.grad_slot(&mut grads, *b);
                            for row in g.chunks(o) {
                                db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for &src in [a, b] {
                        if self.nodes[src].requires_grad {
                            let d = self.grad_slot(&mut grads, src);
                            d.iter_mut().zip(&g).for_each(|(d, v)| *d += v);
                        }
                    }
                }
                Op::AddScalar(a) => {
                    let d = self.grad_slot(&mut grads, *a);
                    d.iter_mut().zip(&g).for_each(|(d, v)| *d += v);
                }
                Op::Scale(a, c) => {
                    let d = self.grad_slot(&mut grads, *a);
                    d.iter_mut().zip(&g).for_each(|(d, v)| *d += c * v);
                }
                Op::MulConst(a, c) => {
                    let d = self.grad_slot(&mut grads, *a);
                    d.iter_mut()
                        .zip(g.iter().zip(c.data()))
                        .for_each(|(d, (v, m))| *d += v * m);
                }
                Op::Gelu(a) => {
                    let xs = self.nodes[*a].value.data();
                    let d = self.grad_slot(&mut grads, *a);
                    for ((d, v), &x) in d.iter_mut().zip(&g).zip(xs) {
                        *d += v * gelu_grad(x);
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.nodes[*gain].value.data();
                    let h = gv.len();
                    if self.nodes[*gain].requires_grad {
                        let dg = self.grad_slot(&mut grads, *gain);
                        for (grow, xrow) in g.chunks(h).zip(xhat.chunks(h)) {
                            for j in 0..h {
                                dg[j] += grow[j] * xrow[j];
                            }
                        }
                    }
                    if self.nodes[*bias].requires_grad {
                        let db = self.grad_slot(&mut grads, *bias);
                        for grow in g.chunks(h) {
                            db.iter_mut().zip(grow).for_each(|(d, v)| *d += v);
                        }
                    }
                    if self.nodes[*x].requires_grad {
                        let dx = self.grad_slot(&mut grads, *x);
                        let mut dxhat = vec![0.0; h];
                        for (r, grow) in g.chunks(h).enumerate() {
                            let xrow = &xhat[r * h..(r + 1) * h];
                            for j in 0..h {
                                dxhat[j] = grow[j] * gv[j];
                            }
                            let mean_d = dxhat.iter().sum::<f64>() / h as f64;
                            let mean_dx = tensor::dot(&dxhat, xrow) / h as f64;
                            for j in 0..h {
                                dx[r * h + j] +=
                                    inv_std[r] * (dxhat[j] - mean_d - xrow[j] * mean_dx);
                            }
                        }
                    }
                }
                Op::GatherRows { src, rows } => {
                    let c = self.nodes[*src].value.dims2()?.1;
                    let d = self.grad_slot(&mut grads, *src);
                    for (k, &r) in rows.iter().enumerate() {
                        let gr = &g[k * c..(k + 1) * c];
                        d[r * c..(r + 1) * c]
                            .iter_mut()
                            .zip(gr)
                            .for_each(|(d, v)| *d += v);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.nodes[p].value.len();
                        if self.nodes[p].requires_grad {
                            let d = self.grad_slot(&mut grads, p);
                            d.iter_mut()
                                .zip(&g[offset..offset + n])
                                .for_each(|(d, v)| *d += v);
                        }
                        offset += n;
                    }
                }
                Op::Attention {
                    qkv,
                    seqs,
                    heads,
                    probs,
                } => {
                    let qv = &self.nodes[*qkv].value;
                    let w = qv.dims2()?.1;
                    let h = w / 3;
                    let dh = h / heads;
                    let scale = 1.0 / libm::sqrt(dh as f64);
                    let data = qv.data();
                    let d = self.grad_slot(&mut grads, *qkv);
                    let mut base = 0;
                    for &(start, len) in seqs {
                        for hd in 0..*heads {
                            let (q_off, k_off, v_off) = (hd * dh, h + hd * dh, 2 * h + hd * dh);
                            let p = &probs[base..base + len * len];
                            base += len * len;
                            let mut ds = vec![0.0; len * len];
                            for i in 0..len {
                                let go = &g[(start + i) * h + q_off..(start + i) * h + q_off + dh];
                                let mut dp_dot = 0.0;
                                for j in 0..len {
                                    let vrow = &data
                                        [(start + j) * w + v_off..(start + j) * w + v_off + dh];
                                    let dp = tensor::dot(go, vrow);
                                    ds[i * len + j] = dp;
                                    dp_dot += dp * p[i * len + j];
                                    // dV_j += p_ij · dO_i
                                    let pij = p[i * len + j];
                                    let dv = &mut d
                                        [(start + j) * w + v_off..(start + j) * w + v_off + dh];
                                    dv.iter_mut().zip(go).for_each(|(a, b)| *a += pij * b);
                                }
                                for j in 0..len {
                                    ds[i * len + j] = p[i * len + j] * (ds[i * len + j] - dp_dot);
                                }
                            }
                            for i in 0..len {
                                for j in 0..len {
                                    let s = ds[i * len + j] * scale;
                                    if s == 0.0 {
                                        continue;
                                    }
                                    for c in 0..dh {
                                        let kq = data[(start + j) * w + k_off + c];
                                        let qk = data[(start + i) * w + q_off + c];
                                        d[(start + i) * w + q_off + c] += s * kq;
                                        d[(start + j) * w + k_off + c] += s * qk;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::NormalizeRows { x, norms } => {
                    let y = &node.value;
                    let c = y.dims2()?.1;
                    let d = self.grad_slot(&mut grads, *x);
                    for (r, &nr) in norms.iter().enumerate() {
                        let yr = y.row(r);
                        let gr = &g[r * c..(r + 1) * c];
                        let proj = tensor::dot(yr, gr);
                        for j in 0..c {
                            d[r * c + j] += (gr[j] - yr[j] * proj) / nr;
                        }
                    }
                }
                Op::Contrast {
                    logits,
                    positive,
                    denominator,
                } => {
                    let lv = &self.nodes[*logits].value;
                    let (_, m) = lv.dims2()?;
                    let d = self.grad_slot(&mut grads, *logits);
                    for (i, &gi) in g.iter().enumerate() {
                        let row = lv.row(i);
                        let pm = &positive[i * m..(i + 1) * m];
                        let dm = &denominator[i * m..(i + 1) * m];
                        let lse_p = tensor::masked_logsumexp(row, pm);
                        let lse_d = tensor::masked_logsumexp(row, dm);
                        for j in 0..m {
                            let mut v = 0.0;
                            if dm[j] {
                                v += libm::exp(row[j] - lse_d);
                            }
                            if pm[j] {
                                v -= libm::exp(row[j] - lse_p);
                            }
                            d[i * m + j] += gi * v;
                        }
                    }
                }
                Op::Sum(a) => {
                    let d = self.grad_slot(&mut grads, *a);
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
                Op::Mean(a) => {
                    let d = self.grad_slot(&mut grads, *a);
                    let n = d.len() as f64;
                    d.iter_mut().for_each(|d| *d += g[0] / n);
                }
            }
        }
        Ok(out)
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], idx: usize) -> &'g mut [f64] {
        let n = self.nodes[idx].value.len();
        grads[idx].get_or_insert_with(|| vec![0.0; n])
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2));
    let pdf = libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI);
    cdf + x * pdf
}
