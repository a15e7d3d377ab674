//! Reverse-mode differentiation over rank-3 tensors.
//!
//! Every tensor has shape `[batch, rows, cols]` stored row-major. Binary
//! elementwise ops broadcast any dimension of size 1; `matmul` broadcasts
//! the batch dimension.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub type Shape = [usize; 3];

#[inline]
pub fn numel(s: Shape) -> usize {
    s[0] * s[1] * s[2]
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Constant,
    Param(ParamId),
    Detach(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Clamp(Var, T, T),
    Softmax(Var, Vec<bool>),
    LayerNorm(Var, T),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    Reshape(Var),
    GatherBatch(Var, Vec<usize>),
    ScatterBatch(Var, Vec<usize>, Vec<T>),
    MeanRows(Var),
    Sum(Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::Detach(_) => "detach",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Gelu(_) => "gelu",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Ln(_) => "ln",
            Op::Clamp(..) => "clamp",
            Op::Softmax(..) => "softmax",
            Op::LayerNorm(..) => "layer_norm",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::Reshape(_) => "reshape",
            Op::GatherBatch(..) => "gather_batch",
            Op::ScatterBatch(..) => "scatter_batch",
            Op::MeanRows(_) => "mean_rows",
            Op::Sum(_) => "sum",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Constant | Op::Param(_) => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::ConcatCols(a, b) => vec![*a, *b],
            Op::Detach(a)
            | Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Gelu(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Clamp(a, ..)
            | Op::Softmax(a, _)
            | Op::LayerNorm(a, _)
            | Op::SliceCols(a, _)
            | Op::Reshape(a)
            | Op::GatherBatch(a, _)
            | Op::ScatterBatch(a, ..)
            | Op::MeanRows(a)
            | Op::Sum(a) => vec![*a],
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Vec<T>,
    shape: Shape,
    op: Op<T>,
    needs_grad: bool,
}

/// Parameter gradients from one backward pass, indexed like the store.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Gradient or zeros of length `len` when the parameter was unused.
    pub fn get_or_zero(&self, id: ParamId, len: usize) -> Vec<T> {
        self.get(id).map_or_else(|| vec![T::zero(); len], <[T]>::to_vec)
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().flatten().all(|v| v.is_finite())
    }

    /// Adds another pass's gradients into this one.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => m.iter_mut().zip(t).for_each(|(a, b)| *a = *a + *b),
                (None, Some(t)) => *mine = Some(t.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        self.grads.iter_mut().flatten().flatten().for_each(|v| *v = *v * s);
    }
}

impl<T> Default for Gradients<T> {
    fn default() -> Self {
        Self { grads: Vec::new() }
    }
}

/// Records a forward computation and replays it backwards once.
#[derive(Clone, Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    bound: HashMap<ParamId, Var>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[inline]
fn bidx(s: Shape, b: usize, r: usize, c: usize) -> usize {
    let b = if s[0] == 1 { 0 } else { b };
    let r = if s[1] == 1 { 0 } else { r };
    let c = if s[2] == 1 { 0 } else { c };
    (b * s[1] + r) * s[2] + c
}

fn broadcast(op: &'static str, a: Shape, b: Shape) -> Result<Shape> {
    let mut out = [0; 3];
    for d in 0..3 {
        out[d] = match (a[d], b[d]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::Shape { op, detail: format!("cannot broadcast {a:?} with {b:?}") }),
        };
    }
    Ok(out)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), bound: HashMap::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<T>, shape: Shape, op: Op<T>) -> Var {
        debug_assert_eq!(value.len(), numel(shape), "{}", op.name());
        let needs_grad = match &op {
            Op::Param(_) => true,
            Op::Constant | Op::Detach(_) => false,
            other => other.inputs().iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { value, shape, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].shape
    }

    /// Value of a single-element tensor.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn constant(&mut self, shape: Shape, data: Vec<T>) -> Result<Var> {
        if data.len() != numel(shape) {
            return Err(Error::Shape {
                op: "constant",
                detail: format!("{} values for shape {shape:?}", data.len()),
            });
        }
        Ok(self.push(data, shape, Op::Constant))
    }

    pub fn zeros(&mut self, shape: Shape) -> Var {
        self.push(vec![T::zero(); numel(shape)], shape, Op::Constant)
    }

    /// Binds a stored parameter as a differentiable leaf; repeated calls for
    /// the same id return the same handle.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let p = store.tensor(id);
        let v = self.push(p.data.clone(), p.shape, Op::Param(id));
        self.bound.insert(id, v);
        v
    }

    /// Same value, no gradient flows back through it.
    pub fn detach(&mut self, a: Var) -> Var {
        let n = &self.nodes[a.0];
        let (v, s) = (n.value.clone(), n.shape);
        self.push(v, s, Op::Detach(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[2] != sb[1] || !(sa[0] == sb[0] || sa[0] == 1 || sb[0] == 1) {
            return Err(Error::Shape { op: "matmul", detail: format!("{sa:?} x {sb:?}") });
        }
        let (bs, m, k, n) = (sa[0].max(sb[0]), sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); bs * m * n];
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        for bi in 0..bs {
            let oa = if sa[0] == 1 { 0 } else { bi * m * k };
            let ob = if sb[0] == 1 { 0 } else { bi * k * n };
            let oo = bi * m * n;
            for i in 0..m {
                for p in 0..k {
                    let x = va[oa + i * k + p];
                    if x == T::zero() {
                        continue;
                    }
                    let row = &vb[ob + p * n..ob + (p + 1) * n];
                    let dst = &mut out[oo + i * n..oo + (i + 1) * n];
                    for (d, &y) in dst.iter_mut().zip(row) {
                        *d = *d + x * y;
                    }
                }
            }
        }
        Ok(self.push(out, [bs, m, n], Op::MatMul(a, b)))
    }

    /// Swaps rows and columns.
    pub fn transpose(&mut self, a: Var) -> Var {
        let s = self.shape(a);
        let v = &self.nodes[a.0].value;
        let mut out = vec![T::zero(); v.len()];
        for b in 0..s[0] {
            for r in 0..s[1] {
                for c in 0..s[2] {
                    out[(b * s[2] + c) * s[1] + r] = v[(b * s[1] + r) * s[2] + c];
                }
            }
        }
        self.push(out, [s[0], s[2], s[1]], Op::Transpose(a))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, mk: Op<T>) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let s = broadcast(op, sa, sb)?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut out = Vec::with_capacity(numel(s));
        for bi in 0..s[0] {
            for r in 0..s[1] {
                for c in 0..s[2] {
                    out.push(f(va[bidx(sa, bi, r, c)], vb[bidx(sb, bi, r, c)]));
                }
            }
        }
        Ok(self.push(out, s, mk))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let s = self.shape(a);
        let out = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        self.push(out, s, op)
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        self.unary(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: T) -> Var {
        self.unary(a, |x| x + k, Op::AddScalar(a))
    }

    /// Tanh approximation of the Gaussian error linear unit.
    pub fn gelu(&mut self, a: Var) -> Var {
        let (c, k) = (T::lit(GELU_C), T::lit(GELU_A));
        let half = T::lit(0.5);
        self.unary(a, |x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()), Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), Op::Ln(a))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping bites.
    /// NaN passes through.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        self.unary(a, |x| if x.is_nan() { x } else { x.max(lo).min(hi) }, Op::Clamp(a, lo, hi))
    }

    /// Softmax over the last dimension restricted to `mask` (same length as
    /// the input, `true` = kept). Masked entries are exactly 0, and a fully
    /// masked row is all zeros.
    pub fn softmax_masked(&mut self, a: Var, mask: Vec<bool>) -> Result<Var> {
        let s = self.shape(a);
        if mask.len() != numel(s) {
            return Err(Error::Shape { op: "softmax", detail: format!("mask of {} for {s:?}", mask.len()) });
        }
        let v = &self.nodes[a.0].value;
        let mut out = vec![T::zero(); v.len()];
        for (row, (x, m)) in out.chunks_mut(s[2]).zip(v.chunks(s[2]).zip(mask.chunks(s[2]))) {
            let mx = x.iter().zip(m).filter(|p| *p.1).map(|p| *p.0).fold(T::neg_infinity(), T::max);
            if mx == T::neg_infinity() {
                continue;
            }
            let mut z = T::zero();
            for ((o, &xi), &keep) in row.iter_mut().zip(x).zip(m) {
                if keep {
                    *o = (xi - mx).exp();
                    z = z + *o;
                }
            }
            row.iter_mut().for_each(|o| *o = *o / z);
        }
        Ok(self.push(out, s, Op::Softmax(a, mask)))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let n = numel(self.shape(a));
        self.softmax_masked(a, vec![true; n]).expect("mask sized to input")
    }

    /// Normalizes each row of the last dimension to zero mean, unit variance.
    pub fn layer_norm(&mut self, a: Var, eps: T) -> Var {
        let s = self.shape(a);
        let n = T::from_usize(s[2]).expect("width");
        let v = &self.nodes[a.0].value;
        let mut out = vec![T::zero(); v.len()];
        for (o, x) in out.chunks_mut(s[2]).zip(v.chunks(s[2])) {
            let mean = x.iter().copied().sum::<T>() / n;
            let var = x.iter().map(|&xi| (xi - mean) * (xi - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            for (oi, &xi) in o.iter_mut().zip(x) {
                *oi = (xi - mean) * inv;
            }
        }
        self.push(out, s, Op::LayerNorm(a, eps))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[0] != sb[0] || sa[1] != sb[1] {
            return Err(Error::Shape { op: "concat_cols", detail: format!("{sa:?} with {sb:?}") });
        }
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut out = Vec::with_capacity(va.len() + vb.len());
        for (ra, rb) in va.chunks(sa[2]).zip(vb.chunks(sb[2])) {
            out.extend_from_slice(ra);
            out.extend_from_slice(rb);
        }
        Ok(self.push(out, [sa[0], sa[1], sa[2] + sb[2]], Op::ConcatCols(a, b)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if start + len > s[2] || len == 0 {
            return Err(Error::Shape { op: "slice_cols", detail: format!("{start}..{} of {s:?}", start + len) });
        }
        let v = &self.nodes[a.0].value;
        let out = v.chunks(s[2]).flat_map(|r| r[start..start + len].iter().copied()).collect();
        Ok(self.push(out, [s[0], s[1], len], Op::SliceCols(a, start)))
    }

    pub fn reshape(&mut self, a: Var, shape: Shape) -> Result<Var> {
        let s = self.shape(a);
        if numel(s) != numel(shape) {
            return Err(Error::Shape { op: "reshape", detail: format!("{s:?} to {shape:?}") });
        }
        let v = self.nodes[a.0].value.clone();
        Ok(self.push(v, shape, Op::Reshape(a)))
    }

    /// Picks batch entries: `out[i] = a[idx[i]]`.
    pub fn gather_batch(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let s = self.shape(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= s[0]) {
            return Err(Error::Shape { op: "gather_batch", detail: format!("index {bad} of {s:?}") });
        }
        let m = s[1] * s[2];
        let v = &self.nodes[a.0].value;
        let out = idx.iter().flat_map(|&i| v[i * m..(i + 1) * m].iter().copied()).collect();
        Ok(self.push(out, [idx.len(), s[1], s[2]], Op::GatherBatch(a, idx)))
    }

    /// Weighted scatter-add of batch entries: `out[idx[i]] += w[i] · a[i]`,
    /// with `out` holding `size` entries.
    pub fn scatter_batch(&mut self, a: Var, idx: Vec<usize>, weights: Vec<T>, size: usize) -> Result<Var> {
        let s = self.shape(a);
        if idx.len() != s[0] || weights.len() != s[0] || idx.iter().any(|&i| i >= size) {
            return Err(Error::Shape { op: "scatter_batch", detail: format!("{} targets for {s:?} into {size}", idx.len()) });
        }
        let m = s[1] * s[2];
        let v = &self.nodes[a.0].value;
        let mut out = vec![T::zero(); size * m];
        for (i, (&t, &w)) in idx.iter().zip(&weights).enumerate() {
            for (o, &x) in out[t * m..(t + 1) * m].iter_mut().zip(&v[i * m..(i + 1) * m]) {
                *o = *o + w * x;
            }
        }
        Ok(self.push(out, [size, s[1], s[2]], Op::ScatterBatch(a, idx, weights)))
    }

    /// Mean over rows: `[b, r, c] -> [b, 1, c]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let s = self.shape(a);
        let n = T::from_usize(s[1]).expect("rows");
        let v = &self.nodes[a.0].value;
        let mut out = vec![T::zero(); s[0] * s[2]];
        for b in 0..s[0] {
            for r in 0..s[1] {
                for c in 0..s[2] {
                    out[b * s[2] + c] = out[b * s[2] + c] + v[(b * s[1] + r) * s[2] + c];
                }
            }
        }
        out.iter_mut().for_each(|x| *x = *x / n);
        self.push(out, [s[0], 1, s[2]], Op::MeanRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.nodes[a.0].value.iter().copied().sum();
        self.push(vec![total], [1, 1, 1], Op::Sum(a))
    }

    /// Reverse pass from a scalar. A tape supports one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let n = numel(self.shape(loss));
        if n != 1 {
            return Err(Error::NonScalarLoss(n));
        }
        if !self.nodes[loss.0].needs_grad {
            let (op, node) = self.blocking_op(loss);
            return Err(Error::DetachedPath { op, node });
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients { grads: Vec::new() };
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if let Op::Param(id) = self.nodes[i].op {
                if out.grads.len() <= id.0 {
                    out.grads.resize(id.0 + 1, None);
                }
                out.grads[id.0] = Some(g);
                continue;
            }
            self.backprop(i, &g, &mut grads);
        }
        Ok(out)
    }

    fn blocking_op(&self, from: Var) -> (&'static str, usize) {
        let mut stack = vec![from.0];
        let mut seen = vec![false; self.nodes.len()];
        while let Some(i) = stack.pop() {
            if std::mem::replace(&mut seen[i], true) {
                continue;
            }
            if let Op::Detach(_) = self.nodes[i].op {
                return ("detach", i);
            }
            stack.extend(self.nodes[i].op.inputs().iter().map(|v| v.0));
        }
        (self.nodes[from.0].op.name(), from.0)
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let g = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.len()]);
        f(g);
    }

    fn acc_broadcast(&self, grads: &mut [Option<Vec<T>>], v: Var, out: Shape, g: &[T], coef: impl Fn(usize, usize) -> T) {
        let s = self.shape(v);
        self.acc(grads, v, |dst| {
            let mut o = 0;
            for b in 0..out[0] {
                for r in 0..out[1] {
                    for c in 0..out[2] {
                        let j = bidx(s, b, r, c);
                        dst[j] = dst[j] + g[o] * coef(o, j);
                        o += 1;
                    }
                }
            }
        });
    }

    fn backprop(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let s = node.shape;
        let y = &node.value;
        match &node.op {
            Op::Constant | Op::Param(_) | Op::Detach(_) => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[1], sa[2], sb[2]);
                let (va, vb) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |ga| {
                    for bi in 0..s[0] {
                        let oa = if sa[0] == 1 { 0 } else { bi * m * k };
                        let ob = if sb[0] == 1 { 0 } else { bi * k * n };
                        for r in 0..m {
                            let gr = &g[(bi * m + r) * n..(bi * m + r + 1) * n];
                            for p in 0..k {
                                let brow = &vb[ob + p * n..ob + (p + 1) * n];
                                let d = gr.iter().zip(brow).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
                                ga[oa + r * k + p] = ga[oa + r * k + p] + d;
                            }
                        }
                    }
                });
                self.acc(grads, *b, |gb| {
                    for bi in 0..s[0] {
                        let oa = if sa[0] == 1 { 0 } else { bi * m * k };
                        let ob = if sb[0] == 1 { 0 } else { bi * k * n };
                        for r in 0..m {
                            let gr = &g[(bi * m + r) * n..(bi * m + r + 1) * n];
                            for p in 0..k {
                                let x = va[oa + r * k + p];
                                if x == T::zero() {
                                    continue;
                                }
                                for (d, &gv) in gb[ob + p * n..ob + (p + 1) * n].iter_mut().zip(gr) {
                                    *d = *d + x * gv;
                                }
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => self.acc(grads, *a, |ga| {
                for b in 0..s[0] {
                    for r in 0..s[1] {
                        for c in 0..s[2] {
                            let src = (b * s[2] + c) * s[1] + r;
                            ga[src] = ga[src] + g[(b * s[1] + r) * s[2] + c];
                        }
                    }
                }
            }),
            Op::Add(a, b) => {
                self.acc_broadcast(grads, *a, s, g, |_, _| T::one());
                self.acc_broadcast(grads, *b, s, g, |_, _| T::one());
            }
            Op::Sub(a, b) => {
                self.acc_broadcast(grads, *a, s, g, |_, _| T::one());
                self.acc_broadcast(grads, *b, s, g, |_, _| -T::one());
            }
            Op::Mul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (va, vb) = (self.value(*a), self.value(*b));
                let idx = |sh: Shape, o: usize| {
                    let c = o % s[2];
                    let r = (o / s[2]) % s[1];
                    let bb = o / (s[1] * s[2]);
                    bidx(sh, bb, r, c)
                };
                self.acc_broadcast(grads, *a, s, g, |o, _| vb[idx(sb, o)]);
                self.acc_broadcast(grads, *b, s, g, |o, _| va[idx(sa, o)]);
            }
            Op::Scale(a, k) => self.acc(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(d, &gv)| *d = *d + gv * *k)),
            Op::AddScalar(a) => self.acc(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(d, &gv)| *d = *d + gv)),
            Op::Gelu(a) => {
                let x = self.value(*a);
                let (c, k, half) = (T::lit(GELU_C), T::lit(GELU_A), T::lit(0.5));
                let three = T::lit(3.0);
                self.acc(grads, *a, |ga| {
                    for ((d, &gv), &xi) in ga.iter_mut().zip(g).zip(x) {
                        let t = (c * (xi + k * xi * xi * xi)).tanh();
                        let dt = (T::one() - t * t) * c * (T::one() + three * k * xi * xi);
                        *d = *d + gv * (half * (T::one() + t) + half * xi * dt);
                    }
                });
            }
            Op::Tanh(a) => self.acc(grads, *a, |ga| {
                for ((d, &gv), &yi) in ga.iter_mut().zip(g).zip(y) {
                    *d = *d + gv * (T::one() - yi * yi);
                }
            }),
            Op::Sigmoid(a) => self.acc(grads, *a, |ga| {
                for ((d, &gv), &yi) in ga.iter_mut().zip(g).zip(y) {
                    *d = *d + gv * yi * (T::one() - yi);
                }
            }),
            Op::Exp(a) => self.acc(grads, *a, |ga| {
                for ((d, &gv), &yi) in ga.iter_mut().zip(g).zip(y) {
                    *d = *d + gv * yi;
                }
            }),
            Op::Ln(a) => {
                let x = self.value(*a);
                self.acc(grads, *a, |ga| {
                    for ((d, &gv), &xi) in ga.iter_mut().zip(g).zip(x) {
                        *d = *d + gv / xi;
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a);
                self.acc(grads, *a, |ga| {
                    for ((d, &gv), &xi) in ga.iter_mut().zip(g).zip(x) {
                        if xi >= *lo && xi <= *hi {
                            *d = *d + gv;
                        }
                    }
                });
            }
            Op::Softmax(a, mask) => self.acc(grads, *a, |ga| {
                let w = s[2];
                for ((dr, gr), (yr, mr)) in ga.chunks_mut(w).zip(g.chunks(w)).zip(y.chunks(w).zip(mask.chunks(w))) {
                    let dot = gr.iter().zip(yr).fold(T::zero(), |acc, (&gv, &yv)| acc + gv * yv);
                    for j in 0..w {
                        if mr[j] {
                            dr[j] = dr[j] + yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }),
            Op::LayerNorm(a, eps) => {
                let x = self.value(*a);
                let w = s[2];
                let n = T::from_usize(w).expect("width");
                self.acc(grads, *a, |ga| {
                    for ((dr, gr), (yr, xr)) in ga.chunks_mut(w).zip(g.chunks(w)).zip(y.chunks(w).zip(x.chunks(w))) {
                        let mean = xr.iter().copied().sum::<T>() / n;
                        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
                        let inv = T::one() / (var + *eps).sqrt();
                        let gm = gr.iter().copied().sum::<T>() / n;
                        let gy = gr.iter().zip(yr).fold(T::zero(), |acc, (&gv, &yv)| acc + gv * yv) / n;
                        for j in 0..w {
                            dr[j] = dr[j] + inv * (gr[j] - gm - yr[j] * gy);
                        }
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let (wa, wb) = (self.shape(*a)[2], self.shape(*b)[2]);
                self.acc(grads, *a, |ga| {
                    for (dr, gr) in ga.chunks_mut(wa).zip(g.chunks(wa + wb)) {
                        dr.iter_mut().zip(&gr[..wa]).for_each(|(d, &gv)| *d = *d + gv);
                    }
                });
                self.acc(grads, *b, |gb| {
                    for (dr, gr) in gb.chunks_mut(wb).zip(g.chunks(wa + wb)) {
                        dr.iter_mut().zip(&gr[wa..]).for_each(|(d, &gv)| *d = *d + gv);
                    }
                });
            }
            Op::SliceCols(a, start) => {
                let wa = self.shape(*a)[2];
                self.acc(grads, *a, |ga| {
                    for (dr, gr) in ga.chunks_mut(wa).zip(g.chunks(s[2])) {
                        dr[*start..*start + s[2]].iter_mut().zip(gr).for_each(|(d, &gv)| *d = *d + gv);
                    }
                });
            }
            Op::Reshape(a) => self.acc(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(d, &gv)| *d = *d + gv)),
            Op::GatherBatch(a, idx) => {
                let m = s[1] * s[2];
                self.acc(grads, *a, |ga| {
                    for (o, &src) in idx.iter().enumerate() {
                        for (d, &gv) in ga[src * m..(src + 1) * m].iter_mut().zip(&g[o * m..(o + 1) * m]) {
                            *d = *d + gv;
                        }
                    }
                });
            }
            Op::ScatterBatch(a, idx, w) => {
                let m = s[1] * s[2];
                self.acc(grads, *a, |ga| {
                    for (i, (&t, &wi)) in idx.iter().zip(w).enumerate() {
                        for (d, &gv) in ga[i * m..(i + 1) * m].iter_mut().zip(&g[t * m..(t + 1) * m]) {
                            *d = *d + wi * gv;
                        }
                    }
                });
            }
            Op::MeanRows(a) => {
                let sa = self.shape(*a);
                let n = T::from_usize(sa[1]).expect("rows");
                self.acc(grads, *a, |ga| {
                    for b in 0..sa[0] {
                        for r in 0..sa[1] {
                            for c in 0..sa[2] {
                                let j = (b * sa[1] + r) * sa[2] + c;
                                ga[j] = ga[j] + g[b * sa[2] + c] / n;
                            }
                        }
                    }
                });
            }
            Op::Sum(a) => self.acc(grads, *a, |ga| ga.iter_mut().for_each(|d| *d = *d + g[0])),
        }
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamStore;

    fn store_with(data: Vec<f64>, shape: Shape) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert("w", shape, data).unwrap();
        (s, id)
    }

    /// Central differences of `f` with respect to every entry of the single parameter.
    fn numeric(store: &ParamStore<f64>, id: ParamId, f: &dyn Fn(&mut Tape<f64>, Var) -> Var) -> Vec<f64> {
        let h = 1e-6;
        let len = store.tensor(id).data.len();
        (0..len)
            .map(|j| {
                let eval = |d: f64| {
                    let mut s = store.clone();
                    s.data_mut(id)[j] += d;
                    let mut t = Tape::new();
                    let w = t.param(&s, id);
                    let out = f(&mut t, w);
                    t.scalar(out)
                };
                (eval(h) - eval(-h)) / (2.0 * h)
            })
            .collect()
    }

    fn analytic(store: &ParamStore<f64>, id: ParamId, f: &dyn Fn(&mut Tape<f64>, Var) -> Var) -> Vec<f64> {
        let mut t = Tape::new();
        let w = t.param(store, id);
        let out = f(&mut t, w);
        t.backward(out).unwrap().get_or_zero(id, store.tensor(id).data.len())
    }

    fn check(data: Vec<f64>, shape: Shape, f: &dyn Fn(&mut Tape<f64>, Var) -> Var) {
        let (store, id) = store_with(data, shape);
        let a = analytic(&store, id, f);
        let n = numeric(&store, id, f);
        for (x, y) in a.iter().zip(&n) {
            assert!((x - y).abs() <= 1e-6 * (1.0 + x.abs().max(y.abs())), "analytic {a:?}\nnumeric {n:?}");
        }
    }

    #[test]
    fn sum_of_squares_gradient() {
        let data = vec![0.5, -1.5, 2.0, 3.0];
        let (store, id) = store_with(data.clone(), [1, 2, 2]);
        let mut t = Tape::new();
        let w = t.param(&store, id);
        let sq = t.mul(w, w).unwrap();
        let loss = t.sum(sq);
        let g = t.backward(loss).unwrap();
        let want: Vec<f64> = data.iter().map(|x| 2.0 * x).collect();
        assert_eq!(g.get(id).unwrap(), want.as_slice());
    }

    #[test]
    fn second_backward_is_an_error() {
        let (store, id) = store_with(vec![1.0], [1, 1, 1]);
        let mut t = Tape::new();
        let w = t.param(&store, id);
        let l = t.sum(w);
        t.backward(l).unwrap();
        assert!(matches!(t.backward(l), Err(Error::TapeConsumed)));
    }

    #[test]
    fn non_scalar_and_detached_losses() {
        let (store, id) = store_with(vec![1.0, 2.0], [1, 1, 2]);
        let mut t = Tape::new();
        let w = t.param(&store, id);
        assert!(matches!(t.backward(w), Err(Error::NonScalarLoss(2))));
        let d = t.detach(w);
        let l = t.sum(d);
        match t.backward(l) {
            Err(Error::DetachedPath { op, .. }) => assert_eq!(op, "detach"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn masked_softmax_entries_get_zero_gradient() {
        let (store, id) = store_with(vec![0.3, -0.2, 1.1], [1, 1, 3]);
        let mut t = Tape::new();
        let w = t.param(&store, id);
        let p = t.softmax_masked(w, vec![true, false, true]).unwrap();
        assert_eq!(t.value(p)[1], 0.0);
        let c = t.constant([1, 1, 3], vec![1.0, 5.0, -2.0]).unwrap();
        let m = t.mul(p, c).unwrap();
        let l = t.sum(m);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(id).unwrap()[1], 0.0);
        assert!((t.value(p).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn elementwise_gradients() {
        let data = vec![0.3, -0.7, 1.2, -0.1, 0.9, 0.4];
        let ops: Vec<Box<dyn Fn(&mut Tape<f64>, Var) -> Var>> = vec![
            Box::new(|t, w| {
                let y = t.gelu(w);
                t.sum(y)
            }),
            Box::new(|t, w| {
                let y = t.tanh(w);
                let y = t.mul(y, w).unwrap();
                t.sum(y)
            }),
            Box::new(|t, w| {
                let y = t.sigmoid(w);
                let y = t.exp(y);
                t.sum(y)
            }),
            Box::new(|t, w| {
                let y = t.mul(w, w).unwrap();
                let y = t.add_scalar(y, 1.0);
                let y = t.ln(y);
                t.sum(y)
            }),
            Box::new(|t, w| {
                let y = t.layer_norm(w, 1e-5);
                let c = t.constant([1, 2, 3], vec![1.0, -2.0, 0.5, 3.0, 0.2, -1.0]).unwrap();
                let y = t.mul(y, c).unwrap();
                t.sum(y)
            }),
            Box::new(|t, w| {
                let y = t.softmax(w);
                let c = t.constant([1, 1, 3], vec![1.0, -2.0, 0.5]).unwrap();
                let y = t.mul(y, c).unwrap();
                t.sum(y)
            }),
        ];
        for f in &ops {
            check(data.clone(), [1, 2, 3], f.as_ref());
        }
    }

    #[test]
    fn structural_gradients() {
        let data: Vec<f64> = (0..12).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
        let ops: Vec<Box<dyn Fn(&mut Tape<f64>, Var) -> Var>> = vec![
            Box::new(|t, w| {
                // [2,2,3] x [1,3,2] with batch broadcast, then transpose
                let b = t.constant([1, 3, 2], vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]).unwrap();
                let y = t.matmul(w, b).unwrap();
                let y = t.transpose(y);
                let y = t.mul(y, y).unwrap();
                t.sum(y)
            }),
            Box::new(|t, w| {
                let wt = t.transpose(w);
                let y = t.matmul(w, wt).unwrap();
                let y = t.tanh(y);
                t.sum(y)
            }),
            Box::new(|t, w| {
                let a = t.slice_cols(w, 1, 2).unwrap();
                let b = t.slice_cols(w, 0, 1).unwrap();
                let y = t.concat_cols(a, b).unwrap();
                let y = t.reshape(y, [1, 4, 3]).unwrap();
                let y = t.mean_rows(y);
                let y = t.mul(y, y).unwrap();
                t.sum(y)
            }),
            Box::new(|t, w| {
                let y = t.gather_batch(w, vec![1, 0, 1]).unwrap();
                let y = t.scatter_batch(y, vec![0, 0, 1], vec![0.5, 2.0, -1.0], 2).unwrap();
                let y = t.sigmoid(y);
                t.sum(y)
            }),
            Box::new(|t, w| {
                let row = t.slice_cols(w, 0, 1).unwrap();
                let y = t.sub(w, row).unwrap();
                let y = t.mul(y, w).unwrap();
                let y = t.scale(y, 0.7);
                t.sum(y)
            }),
        ];
        for f in &ops {
            check(data.clone(), [2, 2, 3], f.as_ref());
        }
    }

    #[test]
    fn clamp_blocks_gradient_outside() {
        let (store, id) = store_with(vec![-2.0, 0.5, 3.0], [1, 1, 3]);
        let mut t = Tape::new();
        let w = t.param(&store, id);
        let c = t.clamp(w, 0.0, 1.0);
        let l = t.sum(c);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(id).unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut t = Tape::<f64>::new();
        let a = t.zeros([1, 2, 3]);
        let b = t.zeros([1, 2, 3]);
        assert!(matches!(t.matmul(a, b), Err(Error::Shape { op: "matmul", .. })));
        let c = t.zeros([1, 3, 2]);
        assert!(matches!(t.add(a, c), Err(Error::Shape { op: "add", .. })));
    }

    #[test]
    fn works_in_single_precision() {
        let mut store = ParamStore::<f32>::new();
        let id = store.insert("w", [1, 1, 2], vec![1.0, -1.0]).unwrap();
        let mut t = Tape::new();
        let w = t.param(&store, id);
        let y = t.sigmoid(w);
        let l = t.sum(y);
        let g = t.backward(l).unwrap();
        assert!((g.get(id).unwrap()[0] - 0.196_611_94).abs() < 1e-6);
    }
}
