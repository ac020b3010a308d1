//! Tape-based reverse-mode differentiation over rank-2 tensors.
//!
//! A [`Graph`] records every operation applied to its variables. Calling
//! [`Graph::backward`] on a scalar output walks the tape in reverse and
//! returns the gradient of every parameter that took part. Reductions run in
//! index order, so results are bit-for-bit reproducible.

use std::collections::BTreeMap;
use std::rc::Rc;

use super::params::{Grads, ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};
use crate::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Row-major `rows × cols` attention mask; `true` means "may attend".
pub type AttentionMask = Rc<Vec<bool>>;

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Param(ParamId),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Silu(Var),
    Tanh(Var),
    Square(Var),
    Transpose(Var),
    SliceCols { a: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceRows { a: Var, start: usize },
    ConcatRows(Vec<Var>),
    GatherRows { a: Var, rows: Rc<Vec<usize>> },
    Softmax { a: Var },
    RmsNorm { x: Var, w: Var, inv_rms: Vec<T> },
    Im2Col { a: Var, kernel: usize, stride: usize, pad: usize },
    Upsample { a: Var, factor: usize },
    AvgPoolRows { a: Var, window: usize },
    NormalizeRows { a: Var, norms: Vec<T> },
    StraightThrough(Var),
    Sum(Var),
    Mse { a: Var, target: Rc<Tensor<T>> },
    CrossEntropy { logits: Var, targets: Rc<Vec<u32>>, rows: Rc<Vec<bool>>, denom: T },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Silu(_) => "silu",
            Op::Tanh(_) => "tanh",
            Op::Square(_) => "square",
            Op::Transpose(_) => "transpose",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::ConcatRows(_) => "concat_rows",
            Op::GatherRows { .. } => "gather_rows",
            Op::Softmax { .. } => "softmax",
            Op::RmsNorm { .. } => "rms_norm",
            Op::Im2Col { .. } => "im2col",
            Op::Upsample { .. } => "upsample",
            Op::AvgPoolRows { .. } => "avg_pool_rows",
            Op::NormalizeRows { .. } => "normalize_rows",
            Op::StraightThrough(_) => "straight_through",
            Op::Sum(_) => "sum",
            Op::Mse { .. } => "mse",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

struct Node<T> {
    /// `None` for parameter nodes, whose value lives in the store.
    value: Option<Tensor<T>>,
    op: Op<T>,
}

pub struct Graph<'s, T> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: BTreeMap<ParamId, Var>,
}

/// Strided 2-D view used to express transposed gemm operands.
#[derive(Clone, Copy)]
struct View<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: isize,
    cs: isize,
}

impl<'a, T> View<'a, T> {
    fn dense(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn maybe_t(self, t: bool) -> Self {
        if t {
            self.t()
        } else {
            self
        }
    }
}

/// `out (+)= a · b` into a dense row-major buffer.
fn gemm_into<T: Scalar>(a: View<'_, T>, b: View<'_, T>, out: &mut [T], accumulate: bool) {
    debug_assert_eq!(a.cols, b.rows);
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(a.rows, a.cols, b.cols, a.data, (a.rs, a.cs), b.data, (b.rs, b.cs), beta, out);
}

#[inline]
fn silu<T: Scalar>(x: T) -> T {
    x * crate::rfsq::sigmoid(x)
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: BTreeMap::new(),
        }
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape_err(&self, op: &'static str, msg: String) -> Error {
        Error::Shape {
            node: self.nodes.len(),
            op,
            msg,
        }
    }

    fn mat(rows: usize, cols: usize, data: Vec<T>) -> Tensor<T> {
        Tensor::matrix(rows, cols, data).expect("op output shape")
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input)
    }

    /// Node reading a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes.get(&id) {
            return *v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    /// `op(a) · op(b)` where `op` optionally transposes.
    pub fn matmul_ex(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        let va = View::dense(self.value(a).data(), ar, ac).maybe_t(ta);
        let vb = View::dense(self.value(b).data(), br, bc).maybe_t(tb);
        if va.cols != vb.rows {
            return Err(self.shape_err(
                "matmul",
                format!("{}x{} · {}x{}", va.rows, va.cols, vb.rows, vb.cols),
            ));
        }
        let (m, n) = (va.rows, vb.cols);
        let mut out = vec![T::zero(); m * n];
        gemm_into(va, vb, &mut out, false);
        Ok(self.push(Self::mat(m, n, out), Op::MatMul { a, b, ta, tb }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, false, false)
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, false, true)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(self.shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(sa)
    }

    fn zip(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        let (r, c) = self.same_shape(op.name(), a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(Self::mat(r, c, data), op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let (rr, rc) = self.shape(row);
        if rr != 1 || rc != c {
            return Err(self.shape_err("add_row", format!("{r}x{c} + {rr}x{rc}")));
        }
        let b = self.value(row).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_exact_mut(c) {
            for (x, &y) in chunk.iter_mut().zip(&b) {
                *x += y;
            }
        }
        Ok(self.push(Self::mat(r, c, data), Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let t = self.value(a).map(|x| x * s);
        self.push(t, Op::Scale(a, s))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(silu);
        self.push(t, Op::Silu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.tanh());
        self.push(t, Op::Tanh(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x * x);
        self.push(t, Op::Square(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a).transpose();
        self.push(t, Op::Transpose(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > c || len == 0 {
            return Err(self.shape_err("slice_cols", format!("{start}+{len} of {c} columns")));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        Ok(self.push(Self::mat(r, len, data), Op::SliceCols { a, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(self.shape_err("concat_cols", "no inputs".into()));
        }
        let r = self.shape(parts[0]).0;
        if let Some(p) = parts.iter().find(|p| self.shape(**p).0 != r) {
            return Err(self.shape_err("concat_cols", format!("row mismatch {} vs {r}", self.shape(*p).0)));
        }
        let total: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(i));
            }
        }
        Ok(self.push(Self::mat(r, total, data), Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > r || len == 0 {
            return Err(self.shape_err("slice_rows", format!("{start}+{len} of {r} rows")));
        }
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        Ok(self.push(Self::mat(len, c, data), Op::SliceRows { a, start }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(self.shape_err("concat_rows", "no inputs".into()));
        }
        let c = self.shape(parts[0]).1;
        if let Some(p) = parts.iter().find(|p| self.shape(**p).1 != c) {
            return Err(self.shape_err("concat_rows", format!("column mismatch {} vs {c}", self.shape(*p).1)));
        }
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
            rows += self.shape(*p).0;
        }
        Ok(self.push(Self::mat(rows, c, data), Op::ConcatRows(parts.to_vec())))
    }

    /// Selects rows by index (repeats allowed); used for embedding lookups.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(a);
        if let Some(bad) = rows.iter().find(|&&i| i >= r) {
            return Err(self.shape_err("gather_rows", format!("row {bad} of {r}")));
        }
        if rows.is_empty() {
            return Err(self.shape_err("gather_rows", "no rows selected".into()));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            data.extend_from_slice(src.row(i));
        }
        Ok(self.push(
            Self::mat(rows.len(), c, data),
            Op::GatherRows {
                a,
                rows: Rc::new(rows.to_vec()),
            },
        ))
    }

    /// Row-wise softmax. Entries where `mask` is false get probability 0;
    /// fully masked rows become all zeros.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&AttentionMask>) -> Result<Var> {
        let (r, c) = self.shape(a);
        if let Some(m) = mask {
            if m.len() != r * c {
                return Err(self.shape_err("softmax", format!("mask of {} for {r}x{c}", m.len())));
            }
        }
        let src = self.value(a).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let allowed = |j: usize| mask.is_none_or(|m| m[i * c + j]);
            let row = &src[i * c..(i + 1) * c];
            let mut max = T::neg_infinity();
            for (j, &x) in row.iter().enumerate() {
                if allowed(j) && x > max {
                    max = x;
                }
            }
            if max == T::neg_infinity() {
                continue;
            }
            let mut sum = T::zero();
            for (j, &x) in row.iter().enumerate() {
                if allowed(j) {
                    let e = (x - max).exp();
                    out[i * c + j] = e;
                    sum += e;
                }
            }
            for v in &mut out[i * c..(i + 1) * c] {
                *v /= sum;
            }
        }
        Ok(self.push(Self::mat(r, c, out), Op::Softmax { a }))
    }

    /// `x / sqrt(mean(x²) + eps) * w` per row, `w` of shape `1 × c`.
    pub fn rms_norm(&mut self, x: Var, w: Var, eps: T) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(w) != (1, c) {
            return Err(self.shape_err("rms_norm", format!("weight {:?} for width {c}", self.shape(w))));
        }
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let mut out = Vec::with_capacity(r * c);
        let mut inv = Vec::with_capacity(r);
        let n = T::from_usize_lossy(c);
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let ms = row.iter().map(|&v| v * v).sum::<T>() / n;
            let k = T::one() / (ms + eps).sqrt();
            inv.push(k);
            out.extend(row.iter().zip(ws).map(|(&v, &g)| v * k * g));
        }
        Ok(self.push(Self::mat(r, c, out), Op::RmsNorm { x, w, inv_rms: inv }))
    }

    /// Unfolds `T × C` into `T_out × (K·C)` patches with zero padding, so a
    /// temporal convolution becomes one matrix product.
    pub fn im2col(&mut self, a: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let (t, c) = self.shape(a);
        if kernel == 0 || stride == 0 || t + 2 * pad < kernel {
            return Err(self.shape_err(
                "im2col",
                format!("kernel {kernel}, stride {stride}, pad {pad} over {t} steps"),
            ));
        }
        let t_out = (t + 2 * pad - kernel) / stride + 1;
        let src = self.value(a).data();
        let mut out = vec![T::zero(); t_out * kernel * c];
        for o in 0..t_out {
            for k in 0..kernel {
                let i = (o * stride + k) as isize - pad as isize;
                if i >= 0 && (i as usize) < t {
                    let i = i as usize;
                    out[o * kernel * c + k * c..o * kernel * c + (k + 1) * c]
                        .copy_from_slice(&src[i * c..(i + 1) * c]);
                }
            }
        }
        Ok(self.push(
            Self::mat(t_out, kernel * c, out),
            Op::Im2Col {
                a,
                kernel,
                stride,
                pad,
            },
        ))
    }

    /// Nearest-neighbour upsampling along rows.
    pub fn upsample_rows(&mut self, a: Var, factor: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if factor == 0 {
            return Err(self.shape_err("upsample", "factor 0".into()));
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(r * factor * c);
        for i in 0..r * factor {
            out.extend_from_slice(src.row(i / factor));
        }
        Ok(self.push(Self::mat(r * factor, c, out), Op::Upsample { a, factor }))
    }

    /// Mean over consecutive non-overlapping windows of rows; trailing rows
    /// that do not fill a window are dropped.
    pub fn avg_pool_rows(&mut self, a: Var, window: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if window == 0 || r < window {
            return Err(self.shape_err("avg_pool_rows", format!("window {window} over {r} rows")));
        }
        let out_rows = r / window;
        let src = self.value(a).data();
        let inv = T::one() / T::from_usize_lossy(window);
        let mut out = vec![T::zero(); out_rows * c];
        for o in 0..out_rows {
            for k in 0..window {
                let row = &src[(o * window + k) * c..(o * window + k + 1) * c];
                for (x, &y) in out[o * c..(o + 1) * c].iter_mut().zip(row) {
                    *x += y;
                }
            }
            for x in &mut out[o * c..(o + 1) * c] {
                *x *= inv;
            }
        }
        Ok(self.push(Self::mat(out_rows, c, out), Op::AvgPoolRows { a, window }))
    }

    /// Scales each row to unit L2 norm (`eps` guards zero rows).
    pub fn normalize_rows(&mut self, a: Var, eps: T) -> Var {
        let (r, c) = self.shape(a);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(r * c);
        let mut norms = Vec::with_capacity(r);
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let n = (row.iter().map(|&v| v * v).sum::<T>() + eps).sqrt();
            norms.push(n);
            out.extend(row.iter().map(|&v| v / n));
        }
        self.push(Self::mat(r, c, out), Op::NormalizeRows { a, norms })
    }

    /// Forward value `value`, backward identity with respect to `a`.
    pub fn straight_through(&mut self, a: Var, value: Tensor<T>) -> Result<Var> {
        let (r, c) = self.shape(a);
        if value.rows() != r || value.cols() != c {
            return Err(self.shape_err(
                "straight_through",
                format!("value {}x{} for input {r}x{c}", value.rows(), value.cols()),
            ));
        }
        Ok(self.push(value, Op::StraightThrough(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, T::one() / T::from_usize_lossy(n.max(1)))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, a: Var, target: Tensor<T>) -> Result<Var> {
        let (r, c) = self.shape(a);
        if target.rows() != r || target.cols() != c {
            return Err(self.shape_err(
                "mse",
                format!("target {}x{} for {r}x{c}", target.rows(), target.cols()),
            ));
        }
        let n = T::from_usize_lossy(r * c);
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<T>()
            / n;
        Ok(self.push(
            Tensor::scalar(s),
            Op::Mse {
                a,
                target: Rc::new(target),
            },
        ))
    }

    /// `Σ_{selected rows} (logsumexp(z_r) - z_r[target_r]) / denom`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[u32],
        rows: Option<&[bool]>,
        denom: T,
    ) -> Result<Var> {
        let (r, c) = self.shape(logits);
        if targets.len() != r {
            return Err(self.shape_err("cross_entropy", format!("{} targets for {r} rows", targets.len())));
        }
        if let Some(bad) = targets.iter().find(|&&t| t as usize >= c) {
            return Err(self.shape_err("cross_entropy", format!("target {bad} outside {c} classes")));
        }
        let selected: Vec<bool> = match rows {
            Some(m) if m.len() != r => {
                return Err(self.shape_err("cross_entropy", format!("row mask of {} for {r} rows", m.len())))
            }
            Some(m) => m.to_vec(),
            None => vec![true; r],
        };
        let z = self.value(logits).data();
        let mut total = T::zero();
        for i in 0..r {
            if !selected[i] {
                continue;
            }
            let row = &z[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            total += lse - row[targets[i] as usize];
        }
        Ok(self.push(
            Tensor::scalar(total / denom),
            Op::CrossEntropy {
                logits,
                targets: Rc::new(targets.to_vec()),
                rows: Rc::new(selected),
                denom,
            },
        ))
    }

    /// Reverse pass from a `1 × 1` output. Frozen parameters get no gradient.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape {
                node: loss.0,
                op: "backward",
                msg: format!("output has {} values; expected a scalar", self.value(loss).len()),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Grads::empty(self.store.len());

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let this = self.value(Var(idx));
            let (r, c) = (this.rows(), this.cols());
            macro_rules! acc {
                ($v:expr, $f:expr) => {{
                    let v: Var = $v;
                    let n = self.value(v).len();
                    let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
                    #[allow(clippy::redundant_closure_call)]
                    ($f)(slot.as_mut_slice());
                }};
            }
            match &node.op {
                Op::Input => {}
                Op::Param(id) if self.store.get(*id).trainable => {
                    out.accumulate(*id, self.store.value(*id).shape(), &g)
                }
                Op::Param(_) => {}
                Op::MatMul { a, b, ta, tb } => {
                    let (ar, ac) = self.shape(*a);
                    let (br, bc) = self.shape(*b);
                    let va = View::dense(self.value(*a).data(), ar, ac);
                    let vb = View::dense(self.value(*b).data(), br, bc);
                    let dc = View::dense(&g, r, c);
                    let opb = vb.maybe_t(*tb);
                    let opa = va.maybe_t(*ta);
                    acc!(*a, |s: &mut [T]| {
                        if *ta {
                            gemm_into(opb, dc.t(), s, true);
                        } else {
                            gemm_into(dc, opb.t(), s, true);
                        }
                    });
                    acc!(*b, |s: &mut [T]| {
                        if *tb {
                            gemm_into(dc.t(), opa, s, true);
                        } else {
                            gemm_into(opa.t(), dc, s, true);
                        }
                    });
                }
                Op::Add(a, b) => {
                    acc!(*a, |s: &mut [T]| s.iter_mut().zip(&g).for_each(|(x, &y)| *x += y));
                    acc!(*b, |s: &mut [T]| s.iter_mut().zip(&g).for_each(|(x, &y)| *x += y));
                }
                Op::Sub(a, b) => {
                    acc!(*a, |s: &mut [T]| s.iter_mut().zip(&g).for_each(|(x, &y)| *x += y));
                    acc!(*b, |s: &mut [T]| s.iter_mut().zip(&g).for_each(|(x, &y)| *x -= y));
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    acc!(*a, |s: &mut [T]| {
                        for i in 0..s.len() {
                            s[i] += g[i] * bv[i];
                        }
                    });
                    acc!(*b, |s: &mut [T]| {
                        for i in 0..s.len() {
                            s[i] += g[i] * av[i];
                        }
                    });
                }
                Op::AddRow(a, row) => {
                    acc!(*a, |s: &mut [T]| s.iter_mut().zip(&g).for_each(|(x, &y)| *x += y));
                    acc!(*row, |s: &mut [T]| {
                        for chunk in g.chunks_exact(c) {
                            for (x, &y) in s.iter_mut().zip(chunk) {
                                *x += y;
                            }
                        }
                    });
                }
                Op::Scale(a, k) => {
                    acc!(*a, |s: &mut [T]| s.iter_mut().zip(&g).for_each(|(x, &y)| *x += y * *k));
                }
                Op::Silu(a) => {
                    let av = self.value(*a).data();
                    acc!(*a, |s: &mut [T]| {
                        for i in 0..s.len() {
                            let sg = crate::rfsq::sigmoid(av[i]);
                            s[i] += g[i] * sg * (T::one() + av[i] * (T::one() - sg));
                        }
                    });
                }
                Op::Tanh(a) => {
                    let y = this.data();
                    acc!(*a, |s: &mut [T]| {
                        for i in 0..s.len() {
                            s[i] += g[i] * (T::one() - y[i] * y[i]);
                        }
                    });
                }
                Op::Square(a) => {
                    let av = self.value(*a).data();
                    let two = T::lit(2.0);
                    acc!(*a, |s: &mut [T]| {
                        for i in 0..s.len() {
                            s[i] += two * av[i] * g[i];
                        }
                    });
                }
                Op::Transpose(a) => {
                    // this is r×c, input is c×r
                    acc!(*a, |s: &mut [T]| {
                        for i in 0..r {
                            for j in 0..c {
                                s[j * r + i] += g[i * c + j];
                            }
                        }
                    });
                }
                Op::SliceCols { a, start } => {
                    let ac = self.shape(*a).1;
                    acc!(*a, |s: &mut [T]| {
                        for i in 0..r {
                            for j in 0..c {
                                s[i * ac + start + j] += g[i * c + j];
                            }
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let pc = self.shape(*p).1;
                        acc!(*p, |s: &mut [T]| {
                            for i in 0..r {
                                for j in 0..pc {
                                    s[i * pc + j] += g[i * c + off + j];
                                }
                            }
                        });
                        off += pc;
                    }
                }
                Op::SliceRows { a, start } => {
                    acc!(*a, |s: &mut [T]| {
                        for (x, &y) in s[start * c..(start + r) * c].iter_mut().zip(&g) {
                            *x += y;
                        }
                    });
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        acc!(*p, |s: &mut [T]| {
                            for (x, &y) in s.iter_mut().zip(&g[off..off + n]) {
                                *x += y;
                            }
                        });
                        off += n;
                    }
                }
                Op::GatherRows { a, rows } => {
                    acc!(*a, |s: &mut [T]| {
                        for (o, &i) in rows.iter().enumerate() {
                            for j in 0..c {
                                s[i * c + j] += g[o * c + j];
                            }
                        }
                    });
                }
                Op::Softmax { a } => {
                    let y = this.data();
                    acc!(*a, |s: &mut [T]| {
                        for i in 0..r {
                            let yr = &y[i * c..(i + 1) * c];
                            let gr = &g[i * c..(i + 1) * c];
                            let dot: T = yr.iter().zip(gr).map(|(&p, &d)| p * d).sum();
                            for j in 0..c {
                                s[i * c + j] += yr[j] * (gr[j] - dot);
                            }
                        }
                    });
                }
                Op::RmsNorm { x, w, inv_rms } => {
                    let xv = self.value(*x).data();
                    let wv = self.value(*w).data();
                    let n = T::from_usize_lossy(c);
                    acc!(*x, |s: &mut [T]| {
                        for i in 0..r {
                            let k = inv_rms[i];
                            let xr = &xv[i * c..(i + 1) * c];
                            let gr = &g[i * c..(i + 1) * c];
                            let dot: T = (0..c).map(|j| wv[j] * gr[j] * xr[j]).sum();
                            for j in 0..c {
                                s[i * c + j] += k * wv[j] * gr[j] - k * k * k / n * xr[j] * dot;
                            }
                        }
                    });
                    acc!(*w, |s: &mut [T]| {
                        for i in 0..r {
                            for j in 0..c {
                                s[j] += g[i * c + j] * xv[i * c + j] * inv_rms[i];
                            }
                        }
                    });
                }
                Op::Im2Col {
                    a,
                    kernel,
                    stride,
                    pad,
                } => {
                    let (t, ch) = self.shape(*a);
                    acc!(*a, |s: &mut [T]| {
                        for o in 0..r {
                            for k in 0..*kernel {
                                let i = (o * stride + k) as isize - *pad as isize;
                                if i >= 0 && (i as usize) < t {
                                    let i = i as usize;
                                    let src = &g[o * c + k * ch..o * c + (k + 1) * ch];
                                    for (x, &y) in s[i * ch..(i + 1) * ch].iter_mut().zip(src) {
                                        *x += y;
                                    }
                                }
                            }
                        }
                    });
                }
                Op::Upsample { a, factor } => {
                    acc!(*a, |s: &mut [T]| {
                        for i in 0..r {
                            let src = i / factor;
                            for j in 0..c {
                                s[src * c + j] += g[i * c + j];
                            }
                        }
                    });
                }
                Op::AvgPoolRows { a, window } => {
                    let inv = T::one() / T::from_usize_lossy(*window);
                    acc!(*a, |s: &mut [T]| {
                        for o in 0..r {
                            for k in 0..*window {
                                let i = o * window + k;
                                for j in 0..c {
                                    s[i * c + j] += g[o * c + j] * inv;
                                }
                            }
                        }
                    });
                }
                Op::NormalizeRows { a, norms } => {
                    let y = this.data();
                    acc!(*a, |s: &mut [T]| {
                        for i in 0..r {
                            let yr = &y[i * c..(i + 1) * c];
                            let gr = &g[i * c..(i + 1) * c];
                            let dot: T = yr.iter().zip(gr).map(|(&p, &d)| p * d).sum();
                            for j in 0..c {
                                s[i * c + j] += (gr[j] - yr[j] * dot) / norms[i];
                            }
                        }
                    });
                }
                Op::StraightThrough(a) => {
                    acc!(*a, |s: &mut [T]| s.iter_mut().zip(&g).for_each(|(x, &y)| *x += y));
                }
                Op::Sum(a) => {
                    let g0 = g[0];
                    acc!(*a, |s: &mut [T]| s.iter_mut().for_each(|x| *x += g0));
                }
                Op::Mse { a, target } => {
                    let av = self.value(*a).data();
                    let k = T::lit(2.0) * g[0] / T::from_usize_lossy(av.len());
                    acc!(*a, |s: &mut [T]| {
                        for i in 0..s.len() {
                            s[i] += k * (av[i] - target.data()[i]);
                        }
                    });
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    rows,
                    denom,
                } => {
                    let (lr, lc) = self.shape(*logits);
                    let z = self.value(*logits).data();
                    let k = g[0] / *denom;
                    acc!(*logits, |s: &mut [T]| {
                        for i in 0..lr {
                            if !rows[i] {
                                continue;
                            }
                            let row = &z[i * lc..(i + 1) * lc];
                            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                            let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
                            for j in 0..lc {
                                let p = (row[j] - max).exp() / sum;
                                let y = if j == targets[i] as usize { T::one() } else { T::zero() };
                                s[i * lc + j] += k * (p - y);
                            }
                        }
                    });
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient_is_twice_input() {
        let mut store = ParamStore::<f64>::new();
        let x = store
            .add("x", Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap(), true)
            .unwrap();
        let mut g = Graph::new(&store);
        let xv = g.param(x);
        let sq = g.square(xv);
        let y = g.sum(sq);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let a = g.input(Tensor::zeros(vec![2, 3]));
        let b = g.input(Tensor::zeros(vec![2, 3]));
        match g.matmul(a, b) {
            Err(Error::Shape { op, node, .. }) => {
                assert_eq!(op, "matmul");
                assert_eq!(node, 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fully_masked_softmax_row_is_zero() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let a = g.input(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let mask = Rc::new(vec![true, false, false, false]);
        let s = g.softmax_rows(a, Some(&mask)).unwrap();
        assert_eq!(g.value(s).data(), &[1.0, 0.0, 0.0, 0.0]);
    }
}
