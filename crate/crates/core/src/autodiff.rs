//! Dense row-major matrices with a reverse-mode tape, the activation and
//! aggregation primitives used by the networks, and Adam.
//!
//! Every op works on whole matrices. Summation orders are fixed, and the two
//! reductions over variable-size row sets (`segment_lse`, `segment_sum`) sort
//! their inputs per component first, so their results do not depend on the
//! order in which rows were listed.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> DiffError {
    DiffError::ShapeMismatch {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, DiffError> {
        if data.len() != rows * cols {
            return Err(DiffError::ShapeMismatch {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn scalar(x: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![x],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Uniform in `±sqrt(6 / (rows + cols))`.
    pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self { rows, cols, data }
    }
}

/// `out = a · b`; each output element is accumulated in increasing inner index.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, DiffError> {
    if a.cols != b.rows {
        return Err(mismatch("matmul", a, b));
    }
    let mut out = Tensor::zeros(a.rows, b.cols);
    gemm(
        (a.rows, a.cols, b.cols),
        (&a.data, a.cols as isize, 1),
        (&b.data, b.cols as isize, 1),
        &mut out.data,
    );
    Ok(out)
}

/// `c = a b` for an `m × k` matrix `a` and `k × n` matrix `b` given by
/// (data, row stride, column stride); `c` is row-major `m × n`.
fn gemm(
    (m, k, n): (usize, usize, usize),
    (a, rsa, csa): (&[f64], isize, isize),
    (b, rsb, csb): (&[f64], isize, isize),
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.fill(0.0);
        return;
    }
    // SAFETY: the strides describe matrices lying inside the given slices,
    // and `c` holds exactly `m * n` values.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `tanh(softplus(x))` from a single exponential: with `w = e^x`,
/// `tanh(ln(1 + w)) = w(w + 2) / (w(w + 2) + 2)`.
fn tanh_softplus(x: f64) -> (f64, f64) {
    if x > 20.0 {
        // w(w + 2) overflows long after this point stops mattering.
        let e = (-x).exp();
        return (1.0 - 2.0 * e * e, 1.0 / (1.0 + e));
    }
    let w = x.exp();
    let n = w * (w + 2.0);
    (n / (n + 2.0), w / (1.0 + w))
}

pub fn mish(x: f64) -> f64 {
    x * tanh_softplus(x).0
}

pub fn mish_grad(x: f64) -> f64 {
    let (t, sigmoid) = tanh_softplus(x);
    t + x * (1.0 - t * t) * sigmoid
}

/// Exact, order-independent sum of values in `[0, 1]`: each term is taken in
/// fixed point with 100 fractional bits and accumulated as an integer.
/// Supports fewer than 2^27 terms.
pub fn fixed_point_sum(values: impl Iterator<Item = f64>) -> f64 {
    const SCALE: f64 = (1u128 << 100) as f64;
    let total: u128 = values.map(|v| (v * SCALE) as u128).sum();
    total as f64 / SCALE
}

/// Log-sum-exp of the values. The result does not depend on their order.
/// Empty input gives 0.
pub fn smoothmax_of(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::INFINITY {
        return max;
    }
    max + fixed_point_sum(values.iter().map(|v| (v - max).exp())).ln()
}

/// Componentwise smooth maximum of a set of rows; `k` columns. Zero rows give
/// the zero vector.
pub fn smoothmax(rows: &[Vec<f64>], k: usize) -> Vec<f64> {
    (0..k)
        .map(|c| {
            let col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            smoothmax_of(&col)
        })
        .collect()
}

/// Variable-size groups of row indices (CSR layout).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
    rows: Vec<u32>,
}

impl Segments {
    pub fn from_lists(lists: &[Vec<u32>]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut rows = Vec::new();
        for l in lists {
            rows.extend_from_slice(l);
            offsets.push(rows.len());
        }
        Self { offsets, rows }
    }

    /// Row `r` goes to segment `dest[r]`.
    pub fn from_assignment(num_segments: usize, dest: &[u32]) -> Self {
        let mut counts = vec![0usize; num_segments + 1];
        for &d in dest {
            counts[d as usize + 1] += 1;
        }
        for i in 0..num_segments {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut rows = vec![0u32; dest.len()];
        for (r, &d) in dest.iter().enumerate() {
            rows[fill[d as usize]] = r as u32;
            fill[d as usize] += 1;
        }
        Self {
            offsets: counts,
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segment(&self, i: usize) -> &[u32] {
        &self.rows[self.offsets[i]..self.offsets[i + 1]]
    }

    fn max_row(&self) -> Option<u32> {
        self.rows.iter().copied().max()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
struct ParamEntry {
    name: String,
    value: Tensor,
    m: Tensor,
    v: Tensor,
}

/// Named trainable tensors with Adam moment buffers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, usize>,
    step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId, DiffError> {
        if self.index.contains_key(name) {
            return Err(DiffError::DuplicateParameter(name.to_string()));
        }
        let id = self.entries.len();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            m: Tensor::zeros(value.rows, value.cols),
            v: Tensor::zeros(value.rows, value.cols),
            value,
        });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Result<ParamId, DiffError> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| DiffError::UnknownParameter(name.to_string()))
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients(
            self.entries
                .iter()
                .map(|e| Tensor::zeros(e.value.rows, e.value.cols))
                .collect(),
        )
    }

    /// Bias-corrected Adam update.
    pub fn adam_step(&mut self, grads: &Gradients, cfg: AdamConfig) -> Result<(), DiffError> {
        if grads.0.len() != self.entries.len() {
            return Err(DiffError::ShapeMismatch {
                op: "adam_step",
                left: (self.entries.len(), 0),
                right: (grads.0.len(), 0),
            });
        }
        for (e, g) in self.entries.iter().zip(&grads.0) {
            if e.value.shape() != g.shape() {
                return Err(mismatch("adam_step", &e.value, g));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        for (e, g) in self.entries.iter_mut().zip(&grads.0) {
            for i in 0..g.data.len() {
                let gi = g.data[i];
                e.m.data[i] = cfg.beta1 * e.m.data[i] + (1.0 - cfg.beta1) * gi;
                e.v.data[i] = cfg.beta2 * e.v.data[i] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = e.m.data[i] / bc1;
                let vhat = e.v.data[i] / bc2;
                e.value.data[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    /// Drops optimizer state, keeping values.
    pub fn reset_optimizer(&mut self) {
        self.step = 0;
        for e in &mut self.entries {
            e.m.data.iter_mut().for_each(|x| *x = 0.0);
            e.v.data.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

/// Gradients aligned with the entries of a [`ParameterSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Mish(Var),
    Gather(Var, Vec<u32>),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Var, Var),
    SegmentLse(Var, Segments, Vec<f64>),
    SegmentSum(Var, Segments),
    MeanAbsError(Var, Vec<f64>),
}

struct Node {
    op: Op,
    value: Option<Tensor>,
}

/// Records a computation over read-only parameters for one backward pass.
pub struct Tape<'p> {
    params: &'p ParameterSet,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParameterSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0] {
            Node {
                op: Op::Param(id), ..
            } => self.params.value(*id),
            Node { value, .. } => value.as_ref().expect("non-parameter nodes hold values"),
        }
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let out = matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    /// Adds the `1 × n` row `b` to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var, DiffError> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows != 1 || bv.cols != xv.cols {
            return Err(mismatch("add_row_bias", xv, bv));
        }
        let mut out = xv.clone();
        for r in 0..out.rows {
            for (o, &bb) in out.row_mut(r).iter_mut().zip(&bv.data) {
                *o += bb;
            }
        }
        Ok(self.push(Op::AddRowBias(x, b), out))
    }

    /// `x W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, DiffError> {
        let xw = self.matmul(x, w)?;
        self.add_row_bias(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("add", av, bv));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn mish(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Tensor {
            rows: xv.rows,
            cols: xv.cols,
            data: xv.data.iter().map(|&v| mish(v)).collect(),
        };
        self.push(Op::Mish(x), out)
    }

    /// Row `i` of the result is row `idx[i]` of `src`.
    pub fn gather(&mut self, src: Var, idx: Vec<u32>) -> Result<Var, DiffError> {
        let sv = self.value(src);
        if let Some(&bad) = idx.iter().find(|&&i| i as usize >= sv.rows) {
            return Err(DiffError::ShapeMismatch {
                op: "gather",
                left: sv.shape(),
                right: (bad as usize, 0),
            });
        }
        let mut data = Vec::with_capacity(idx.len() * sv.cols);
        for &i in &idx {
            data.extend_from_slice(sv.row(i as usize));
        }
        let out = Tensor {
            rows: idx.len(),
            cols: sv.cols,
            data,
        };
        Ok(self.push(Op::Gather(src, idx), out))
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var, DiffError> {
        let xv = self.value(x);
        if xv.len() != rows * cols {
            return Err(DiffError::ShapeMismatch {
                op: "reshape",
                left: xv.shape(),
                right: (rows, cols),
            });
        }
        let out = Tensor {
            rows,
            cols,
            data: xv.data.clone(),
        };
        Ok(self.push(Op::Reshape(x), out))
    }

    pub fn concat_rows(&mut self, parts: Vec<Var>, cols: usize) -> Result<Var, DiffError> {
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in &parts {
            let pv = self.value(p);
            if pv.cols != cols {
                return Err(DiffError::ShapeMismatch {
                    op: "concat_rows",
                    left: pv.shape(),
                    right: (0, cols),
                });
            }
            data.extend_from_slice(&pv.data);
            rows += pv.rows;
        }
        Ok(self.push(Op::ConcatRows(parts), Tensor { rows, cols, data }))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows != bv.rows {
            return Err(mismatch("concat_cols", av, bv));
        }
        let cols = av.cols + bv.cols;
        let mut data = Vec::with_capacity(av.rows * cols);
        for r in 0..av.rows {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let out = Tensor {
            rows: av.rows,
            cols,
            data,
        };
        Ok(self.push(Op::ConcatCols(a, b), out))
    }

    fn check_segments(&self, src: Var, seg: &Segments, op: &'static str) -> Result<(), DiffError> {
        let sv = self.value(src);
        match seg.max_row() {
            Some(m) if m as usize >= sv.rows => Err(DiffError::ShapeMismatch {
                op,
                left: sv.shape(),
                right: (m as usize, 0),
            }),
            _ => Ok(()),
        }
    }

    /// Componentwise log-sum-exp over each segment's rows; empty segments
    /// give zero rows.
    pub fn segment_lse(&mut self, src: Var, seg: Segments) -> Result<Var, DiffError> {
        self.check_segments(src, &seg, "segment_lse")?;
        let sv = self.value(src);
        let k = sv.cols;
        let mut out = Tensor::zeros(seg.len(), k);
        // Softmax weight of every (segment member, column), kept for backward.
        let mut weights = vec![0.0; seg.rows.len() * k];
        const SCALE: f64 = (1u128 << 100) as f64;
        let mut max = vec![0.0; k];
        let mut acc = vec![0u128; k];
        let mut inv = vec![0.0; k];
        for s in 0..seg.len() {
            let (lo, hi) = (seg.offsets[s], seg.offsets[s + 1]);
            let rows = &seg.rows[lo..hi];
            match rows {
                [] => continue,
                [r] => {
                    out.row_mut(s).copy_from_slice(sv.row(*r as usize));
                    weights[lo * k..hi * k].fill(1.0);
                    continue;
                }
                _ => {}
            }
            max.fill(f64::NEG_INFINITY);
            for &r in rows {
                for (m, &v) in max.iter_mut().zip(sv.row(r as usize)) {
                    *m = m.max(v);
                }
            }
            // Exact fixed-point sums, as in `fixed_point_sum`.
            acc.fill(0);
            for (j, &r) in rows.iter().enumerate() {
                let w = &mut weights[(lo + j) * k..(lo + j + 1) * k];
                for (((w, &v), &m), a) in w.iter_mut().zip(sv.row(r as usize)).zip(&max).zip(&mut acc) {
                    *w = if m == f64::INFINITY {
                        if v == m { 1.0 } else { 0.0 }
                    } else {
                        (v - m).exp()
                    };
                    *a += (*w * SCALE) as u128;
                }
            }
            for ((o, &m), (a, inv)) in out.row_mut(s).iter_mut().zip(&max).zip(acc.iter().zip(&mut inv)) {
                let total = *a as f64 / SCALE;
                *o = if m == f64::INFINITY { m } else { m + total.ln() };
                *inv = if m == f64::INFINITY { 1.0 } else { 1.0 / total };
            }
            for w in weights[lo * k..hi * k].chunks_exact_mut(k) {
                for (w, &i) in w.iter_mut().zip(&inv) {
                    *w *= i;
                }
            }
        }
        Ok(self.push(Op::SegmentLse(src, seg, weights), out))
    }

    /// Componentwise sum over each segment's rows, in ascending value order.
    pub fn segment_sum(&mut self, src: Var, seg: Segments) -> Result<Var, DiffError> {
        self.check_segments(src, &seg, "segment_sum")?;
        let sv = self.value(src);
        let k = sv.cols;
        let mut out = Tensor::zeros(seg.len(), k);
        let mut buf = Vec::new();
        for s in 0..seg.len() {
            let rows = seg.segment(s);
            for c in 0..k {
                buf.clear();
                buf.extend(rows.iter().map(|&r| sv.data[r as usize * k + c]));
                buf.sort_unstable_by(f64::total_cmp);
                out.data[s * k + c] = buf.iter().sum();
            }
        }
        Ok(self.push(Op::SegmentSum(src, seg), out))
    }

    /// `mean_i |pred_i − target_i|` over an `n × 1` prediction; `1 × 1` result.
    pub fn mean_abs_error(&mut self, pred: Var, targets: Vec<f64>) -> Result<Var, DiffError> {
        let pv = self.value(pred);
        if pv.cols != 1 || pv.rows != targets.len() || targets.is_empty() {
            return Err(DiffError::ShapeMismatch {
                op: "mean_abs_error",
                left: pv.shape(),
                right: (targets.len(), 1),
            });
        }
        let s: f64 = pv.data.iter().zip(&targets).map(|(p, t)| (p - t).abs()).sum();
        let out = Tensor::scalar(s / targets.len() as f64);
        Ok(self.push(Op::MeanAbsError(pred, targets), out))
    }

    /// Reverse pass from a `1 × 1` root. Returns parameter gradients.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).shape(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        let mut out = self.params.zero_grads();

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Param(id) => out.0[id.0].add_assign(&g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    // ga = g bᵀ, gb = aᵀ g
                    let mut ga = Tensor::zeros(av.rows, av.cols);
                    gemm(
                        (g.rows, g.cols, bv.rows),
                        (&g.data, g.cols as isize, 1),
                        (&bv.data, 1, bv.cols as isize),
                        &mut ga.data,
                    );
                    let mut gb = Tensor::zeros(bv.rows, bv.cols);
                    gemm(
                        (av.cols, av.rows, g.cols),
                        (&av.data, 1, av.cols as isize),
                        (&g.data, g.cols as isize, 1),
                        &mut gb.data,
                    );
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRowBias(x, b) => {
                    let mut gb = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, &gg) in gb.data.iter_mut().zip(g.row(r)) {
                            *o += gg;
                        }
                    }
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Mish(x) => {
                    let xv = self.value(*x);
                    let mut gx = g;
                    for (o, &v) in gx.data.iter_mut().zip(&xv.data) {
                        *o *= mish_grad(v);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Gather(src, idx) => {
                    let sv = self.value(*src);
                    let mut gs = Tensor::zeros(sv.rows, sv.cols);
                    for (r, &i) in idx.iter().enumerate() {
                        for (o, &gg) in gs.row_mut(i as usize).iter_mut().zip(g.row(r)) {
                            *o += gg;
                        }
                    }
                    accumulate(&mut grads, *src, gs);
                }
                Op::Reshape(x) => {
                    let xv = self.value(*x);
                    let gx = Tensor {
                        rows: xv.rows,
                        cols: xv.cols,
                        data: g.data,
                    };
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let n = pv.len();
                        let gp = Tensor {
                            rows: pv.rows,
                            cols: pv.cols,
                            data: g.data[offset..offset + n].to_vec(),
                        };
                        offset += n;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (ac, bc) = (self.value(*a).cols, self.value(*b).cols);
                    let mut ga = Tensor::zeros(g.rows, ac);
                    let mut gb = Tensor::zeros(g.rows, bc);
                    for r in 0..g.rows {
                        let grow = g.row(r);
                        ga.row_mut(r).copy_from_slice(&grow[..ac]);
                        gb.row_mut(r).copy_from_slice(&grow[ac..]);
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::SegmentLse(src, seg, weights) => {
                    let sv = self.value(*src);
                    let k = sv.cols;
                    let mut gs = Tensor::zeros(sv.rows, k);
                    for s in 0..seg.len() {
                        let lo = seg.offsets[s];
                        let grow = g.row(s);
                        for (j, &r) in seg.segment(s).iter().enumerate() {
                            let w = &weights[(lo + j) * k..(lo + j + 1) * k];
                            for ((o, &gg), &w) in gs.row_mut(r as usize).iter_mut().zip(grow).zip(w) {
                                *o += gg * w;
                            }
                        }
                    }
                    accumulate(&mut grads, *src, gs);
                }
                Op::SegmentSum(src, seg) => {
                    let sv = self.value(*src);
                    let k = sv.cols;
                    let mut gs = Tensor::zeros(sv.rows, k);
                    for s in 0..seg.len() {
                        for &r in seg.segment(s) {
                            for (o, &gg) in gs.row_mut(r as usize).iter_mut().zip(g.row(s)) {
                                *o += gg;
                            }
                        }
                    }
                    accumulate(&mut grads, *src, gs);
                }
                Op::MeanAbsError(pred, targets) => {
                    let pv = self.value(*pred);
                    let n = targets.len() as f64;
                    let data = pv
                        .data
                        .iter()
                        .zip(targets)
                        .map(|(p, t)| g.data[0] * sign(p - t) / n)
                        .collect();
                    accumulate(
                        &mut grads,
                        *pred,
                        Tensor {
                            rows: pv.rows,
                            cols: 1,
                            data,
                        },
                    );
                }
            }
        }
        out
    }
}

/// Subgradient of `|x|` with value 0 at 0.
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Linear → Mish → Linear, parameters `{prefix}.w1`, `.b1`, `.w2`, `.b2`.
pub fn add_mlp(
    params: &mut ParameterSet,
    prefix: &str,
    input: usize,
    hidden: usize,
    output: usize,
    rng: &mut impl Rng,
) -> Result<(), DiffError> {
    params.add(&format!("{prefix}.w1"), Tensor::glorot(input, hidden, rng))?;
    params.add(&format!("{prefix}.b1"), Tensor::zeros(1, hidden))?;
    params.add(&format!("{prefix}.w2"), Tensor::glorot(hidden, output, rng))?;
    params.add(&format!("{prefix}.b2"), Tensor::zeros(1, output))?;
    Ok(())
}

/// Resolved parameter ids of one two-layer MLP.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp {
    pub fn lookup(params: &ParameterSet, prefix: &str) -> Result<Self, DiffError> {
        Ok(Self {
            w1: params.id(&format!("{prefix}.w1"))?,
            b1: params.id(&format!("{prefix}.b1"))?,
            w2: params.id(&format!("{prefix}.w2"))?,
            b2: params.id(&format!("{prefix}.b2"))?,
        })
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var, DiffError> {
        let (w1, b1, w2, b2) = (
            tape.param(self.w1),
            tape.param(self.b1),
            tape.param(self.w2),
            tape.param(self.b2),
        );
        let h = tape.linear(x, w1, b1)?;
        let h = tape.mish(h);
        tape.linear(h, w2, b2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Denominator floor for relative errors, so that coordinates whose true
/// derivative is zero are judged by their absolute error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

/// Default base step for [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-3;

/// Compares reverse-mode gradients with central differences at `samples`
/// coordinates drawn without replacement under `seed`.
///
/// With `D(h) = (f(θ+h) − f(θ−h)) / 2h` the numeric derivative is the
/// Richardson extrapolation `(4 D(h/2) − D(h)) / 3`, whose truncation error
/// is O(h⁴). This keeps the step large enough that rounding in `f` stays
/// small even when the loss is in the hundreds. The relative error of one
/// coordinate is `|a − n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`.
pub fn grad_check<F>(
    f: F,
    params: &ParameterSet,
    step: f64,
    samples: usize,
    seed: u64,
) -> GradCheckReport
where
    F: Fn(&ParameterSet) -> (f64, Gradients),
{
    let (_, analytic) = f(params);
    let coords: Vec<(ParamId, usize)> = params
        .ids()
        .flat_map(|id| (0..params.value(id).len()).map(move |j| (id, j)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = samples.min(coords.len());
    let mut picked: Vec<usize> = sample(&mut rng, coords.len(), n).into_vec();
    picked.sort_unstable();
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for ci in picked {
        let (id, j) = coords[ci];
        let orig = params.value(id).data[j];
        let mut central = |h: f64| {
            probe.value_mut(id).data[j] = orig + h;
            let (fp, _) = f(&probe);
            probe.value_mut(id).data[j] = orig - h;
            let (fm, _) = f(&probe);
            probe.value_mut(id).data[j] = orig;
            (fp - fm) / (2.0 * h)
        };
        let numeric = (4.0 * central(step / 2.0) - central(step)) / 3.0;
        let a = analytic.get(id).data[j];
        let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        let rel = (a - numeric).abs() / denom;
        report.checked += 1;
        if rel > report.max_rel_error || rel.is_nan() {
            report.max_rel_error = rel;
            report.worst = Some((params.name(id).to_string(), j));
        }
    }
    report
}
