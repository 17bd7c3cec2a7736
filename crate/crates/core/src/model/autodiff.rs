//! A small reverse-mode tape over dense matrices.
//!
//! Every forward pass records its operations on a fresh [`Tape`]; calling
//! [`Tape::backward`] walks the records in reverse and accumulates parameter
//! gradients into a [`Grads`] buffer. Only the operations the velocity network
//! needs are provided.

use std::sync::Arc;

use crate::tensor::{gemm_into, Mat, Real};

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Handle to a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named parameter matrices in a fixed registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T: Real = f32> {
    names: Vec<String>,
    mats: Vec<Mat<T>>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            mats: Vec::new(),
        }
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Mat<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.mats.push(value);
        ParamId(self.mats.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat<T> {
        &self.mats[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat<T> {
        &mut self.mats[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat<T>)> {
        self.names.iter().map(String::as_str).zip(&self.mats)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Mat<T>> {
        self.mats.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.mats.iter().map(|m| m.rows() * m.cols()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            mats: self.mats.iter().map(Mat::cast).collect(),
        }
    }

    /// Zeroed buffer with one slot per parameter.
    pub fn zeros_like(&self) -> Grads<T> {
        Grads {
            mats: self
                .mats
                .iter()
                .map(|m| Mat::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }
}

/// Gradient buffers aligned with a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T: Real = f32> {
    mats: Vec<Mat<T>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, id: ParamId) -> &Mat<T> {
        &self.mats[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Mat<T>> {
        self.mats.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Mat<T>> {
        self.mats.iter_mut()
    }

    pub fn add_assign(&mut self, other: &Grads<T>) {
        for (a, b) in self.mats.iter_mut().zip(&other.mats) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: T) {
        for m in &mut self.mats {
            m.scale_assign(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.mats.iter().map(Mat::sum_sq).sum::<f64>().sqrt()
    }
}

enum Op<T: Real> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Gelu(Var),
    Silu(Var),
    LayerNorm { x: Var, rstd: Vec<T> },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<Mat<T>>,
    },
    MseRows {
        pred: Var,
        target: Mat<T>,
        start: usize,
        end: usize,
    },
}

struct Node<T: Real> {
    value: Option<Mat<T>>,
    op: Op<T>,
}

/// Boolean attention mask, row-major `[queries × keys]`; `true` means the key is visible.
#[derive(Clone, Debug)]
pub struct AttnMask {
    rows: usize,
    cols: usize,
    allowed: Arc<Vec<bool>>,
}

impl AttnMask {
    pub fn new(rows: usize, cols: usize, allowed: impl Fn(usize, usize) -> bool) -> Self {
        let mut v = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let mut any = false;
            for j in 0..cols {
                let a = allowed(i, j);
                any |= a;
                v.push(a);
            }
            assert!(any, "attention mask row {i} has no visible keys");
        }
        Self {
            rows,
            cols,
            allowed: Arc::new(v),
        }
    }

    #[inline]
    fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }
}

pub struct Tape<'p, T: Real = f32> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, value: Mat<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Mat<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Broadcast-add a `[1 × n]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "add_row expects a single row");
        let mut out = self.value(a).clone();
        assert_eq!(out.cols(), r.cols(), "add_row: width mismatch");
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    /// Broadcast-multiply every row of `a` by a `[1 × n]` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "mul_row expects a single row");
        let mut out = self.value(a).clone();
        assert_eq!(out.cols(), r.cols(), "mul_row: width mismatch");
        for i in 0..out.rows() {
            for (o, &g) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o *= g;
            }
        }
        self.push(out, Op::MulRow(a, row))
    }

    /// `x · w + b`.
    pub fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let w = self.param(w);
        let b = self.param(b);
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * sigmoid(x));
        self.push(out, Op::Silu(a))
    }

    /// Row-wise normalization to zero mean and unit variance (no affine terms).
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let eps = T::from_f64(1e-5);
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let n = T::from_f64(cols as f64);
        let mut out = Mat::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for i in 0..rows {
            let row = xv.row(i);
            let mut mean = T::ZERO;
            for &v in row {
                mean += v;
            }
            mean = mean / n;
            let mut var = T::ZERO;
            for &v in row {
                let d = v - mean;
                var += d * d;
            }
            let r = T::ONE / (var / n + eps).sqrt();
            for (o, &v) in out.row_mut(i).iter_mut().zip(row) {
                *o = (v - mean) * r;
            }
            rstd.push(r);
        }
        self.push(out, Op::LayerNorm { x, rstd })
    }

    /// Multi-head scaled dot-product attention over already-projected `q`, `k`, `v`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: Option<&AttnMask>,
    ) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (tq, width) = qv.shape();
        let tk = kv.rows();
        assert_eq!(kv.cols(), width, "attention: key width mismatch");
        assert_eq!(vv.shape(), (tk, width), "attention: value shape mismatch");
        assert!(heads > 0 && width % heads == 0, "attention: width not divisible by heads");
        if let Some(m) = mask {
            assert_eq!((m.rows, m.cols), (tq, tk), "attention: mask shape mismatch");
        }
        let dh = width / heads;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let mut out = Mat::<T>::zeros(tq, width);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let off = h * dh;
            let mut s = Mat::zeros(tq, tk);
            // S = Q_h · K_hᵀ
            unsafe {
                T::gemm(
                    tq,
                    dh,
                    tk,
                    scale,
                    qv.data().as_ptr().add(off),
                    width as isize,
                    1,
                    kv.data().as_ptr().add(off),
                    1,
                    width as isize,
                    T::ZERO,
                    s.data_mut().as_mut_ptr(),
                    tk as isize,
                    1,
                );
            }
            for i in 0..tq {
                let row = s.row_mut(i);
                let mut max = None::<T>;
                for (j, &x) in row.iter().enumerate() {
                    if mask.is_none_or(|m| m.allows(i, j)) && max.is_none_or(|mx| x > mx) {
                        max = Some(x);
                    }
                }
                let max = max.expect("mask row has visible key");
                let mut sum = T::ZERO;
                for (j, x) in row.iter_mut().enumerate() {
                    if mask.is_none_or(|m| m.allows(i, j)) {
                        *x = (*x - max).exp();
                        sum += *x;
                    } else {
                        *x = T::ZERO;
                    }
                }
                let inv = T::ONE / sum;
                for x in row.iter_mut() {
                    *x *= inv;
                }
            }
            // O_h = P · V_h
            unsafe {
                T::gemm(
                    tq,
                    tk,
                    dh,
                    T::ONE,
                    s.data().as_ptr(),
                    tk as isize,
                    1,
                    vv.data().as_ptr().add(off),
                    width as isize,
                    1,
                    T::ZERO,
                    out.data_mut().as_mut_ptr().add(off),
                    width as isize,
                    1,
                );
            }
            probs.push(s);
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
        )
    }

    /// Mean squared error between rows `[start, end)` of `pred` and `target`.
    pub fn mse_rows(&mut self, pred: Var, target: Mat<T>, start: usize, end: usize) -> Var {
        let p = self.value(pred);
        assert!(start < end && end <= p.rows(), "mse_rows: bad row range");
        assert_eq!(target.shape(), (end - start, p.cols()), "mse_rows: target shape");
        let mut acc = T::ZERO;
        for i in start..end {
            for (&a, &b) in p.row(i).iter().zip(target.row(i - start)) {
                let d = a - b;
                acc += d * d;
            }
        }
        let n = T::from_f64(((end - start) * p.cols()) as f64);
        let out = Mat::from_vec(1, 1, vec![acc / n]);
        self.push(
            out,
            Op::MseRows {
                pred,
                target,
                start,
                end,
            },
        )
    }

    /// Reverse pass from a scalar node, accumulating into `grads`.
    pub fn backward(&self, root: Var, grads: &mut Grads<T>) {
        assert_eq!(self.value(root).shape(), (1, 1), "backward from non-scalar");
        let mut g: Vec<Option<Mat<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[root.0] = Some(Mat::filled(1, 1, T::ONE));

        for idx in (0..=root.0).rev() {
            let Some(dy) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => grads.mats[id.0].add_assign(&dy),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.needs_grad(*a) {
                        let mut da = Mat::zeros(av.rows(), av.cols());
                        gemm_into(&dy, false, bv, true, T::ONE, T::ZERO, &mut da);
                        accumulate(&mut g, *a, da);
                    }
                    if self.needs_grad(*b) {
                        let mut db = Mat::zeros(bv.rows(), bv.cols());
                        gemm_into(av, true, &dy, false, T::ONE, T::ZERO, &mut db);
                        accumulate(&mut g, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut g, *b, dy.clone());
                    accumulate(&mut g, *a, dy);
                }
                Op::AddRow(a, row) => {
                    let mut dr = Mat::zeros(1, dy.cols());
                    for i in 0..dy.rows() {
                        for (o, &d) in dr.data_mut().iter_mut().zip(dy.row(i)) {
                            *o += d;
                        }
                    }
                    accumulate(&mut g, *row, dr);
                    accumulate(&mut g, *a, dy);
                }
                Op::MulRow(a, row) => {
                    let av = self.value(*a);
                    let rv = self.value(*row);
                    let mut dr = Mat::zeros(1, dy.cols());
                    let mut da = dy.clone();
                    for i in 0..dy.rows() {
                        for (j, (&d, &x)) in dy.row(i).iter().zip(av.row(i)).enumerate() {
                            dr.data_mut()[j] += d * x;
                        }
                        for (o, &gm) in da.row_mut(i).iter_mut().zip(rv.data()) {
                            *o *= gm;
                        }
                    }
                    accumulate(&mut g, *row, dr);
                    accumulate(&mut g, *a, da);
                }
                Op::Gelu(a) => {
                    let av = self.value(*a);
                    let mut da = dy;
                    for (d, &x) in da.data_mut().iter_mut().zip(av.data()) {
                        *d *= gelu_grad(x);
                    }
                    accumulate(&mut g, *a, da);
                }
                Op::Silu(a) => {
                    let av = self.value(*a);
                    let mut da = dy;
                    for (d, &x) in da.data_mut().iter_mut().zip(av.data()) {
                        let s = sigmoid(x);
                        *d *= s * (T::ONE + x * (T::ONE - s));
                    }
                    accumulate(&mut g, *a, da);
                }
                Op::LayerNorm { x, rstd } => {
                    let y = node.value.as_ref().expect("layer norm value");
                    let n = T::from_f64(y.cols() as f64);
                    let mut dx = Mat::zeros(y.rows(), y.cols());
                    for (i, &r) in rstd.iter().enumerate() {
                        let (dyr, yr) = (dy.row(i), y.row(i));
                        let mut mean_dy = T::ZERO;
                        let mut mean_dyy = T::ZERO;
                        for (&d, &yy) in dyr.iter().zip(yr) {
                            mean_dy += d;
                            mean_dyy += d * yy;
                        }
                        mean_dy = mean_dy / n;
                        mean_dyy = mean_dyy / n;
                        for ((o, &d), &yy) in dx.row_mut(i).iter_mut().zip(dyr).zip(yr) {
                            *o = r * (d - mean_dy - yy * mean_dyy);
                        }
                    }
                    accumulate(&mut g, *x, dx);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => {
                    let (dq, dk, dv) =
                        self.attention_backward(*q, *k, *v, *heads, probs, &dy);
                    accumulate(&mut g, *q, dq);
                    accumulate(&mut g, *k, dk);
                    accumulate(&mut g, *v, dv);
                }
                Op::MseRows {
                    pred,
                    target,
                    start,
                    end,
                } => {
                    let p = self.value(*pred);
                    let n = T::from_f64(((end - start) * p.cols()) as f64);
                    let coef = dy.get(0, 0) * T::from_f64(2.0) / n;
                    let mut dp = Mat::zeros(p.rows(), p.cols());
                    for i in *start..*end {
                        let t = target.row(i - start);
                        let pr = p.row(i);
                        for (j, o) in dp.row_mut(i).iter_mut().enumerate() {
                            *o = coef * (pr[j] - t[j]);
                        }
                    }
                    accumulate(&mut g, *pred, dp);
                }
            }
        }
    }

    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Leaf)
    }

    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &[Mat<T>],
        dy: &Mat<T>,
    ) -> (Mat<T>, Mat<T>, Mat<T>) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (tq, width) = qv.shape();
        let tk = kv.rows();
        let dh = width / heads;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let mut dq = Mat::<T>::zeros(tq, width);
        let mut dk = Mat::<T>::zeros(tk, width);
        let mut dv = Mat::<T>::zeros(tk, width);
        for (h, p) in probs.iter().enumerate() {
            let off = h * dh;
            unsafe {
                // dV_h = Pᵀ · dO_h
                T::gemm(
                    tk,
                    tq,
                    dh,
                    T::ONE,
                    p.data().as_ptr(),
                    1,
                    tk as isize,
                    dy.data().as_ptr().add(off),
                    width as isize,
                    1,
                    T::ZERO,
                    dv.data_mut().as_mut_ptr().add(off),
                    width as isize,
                    1,
                );
            }
            // dP = dO_h · V_hᵀ
            let mut dp = Mat::zeros(tq, tk);
            unsafe {
                T::gemm(
                    tq,
                    dh,
                    tk,
                    T::ONE,
                    dy.data().as_ptr().add(off),
                    width as isize,
                    1,
                    vv.data().as_ptr().add(off),
                    1,
                    width as isize,
                    T::ZERO,
                    dp.data_mut().as_mut_ptr(),
                    tk as isize,
                    1,
                );
            }
            // dS = P ⊙ (dP − rowsum(dP ⊙ P)), folded with the score scale.
            for i in 0..tq {
                let pr = p.row(i);
                let mut dot = T::ZERO;
                for (&a, &b) in dp.row(i).iter().zip(pr) {
                    dot += a * b;
                }
                for (d, &pp) in dp.row_mut(i).iter_mut().zip(pr) {
                    *d = pp * (*d - dot) * scale;
                }
            }
            unsafe {
                // dQ_h = dS · K_h
                T::gemm(
                    tq,
                    tk,
                    dh,
                    T::ONE,
                    dp.data().as_ptr(),
                    tk as isize,
                    1,
                    kv.data().as_ptr().add(off),
                    width as isize,
                    1,
                    T::ZERO,
                    dq.data_mut().as_mut_ptr().add(off),
                    width as isize,
                    1,
                );
                // dK_h = dSᵀ · Q_h
                T::gemm(
                    tk,
                    tq,
                    dh,
                    T::ONE,
                    dp.data().as_ptr(),
                    1,
                    tk as isize,
                    qv.data().as_ptr().add(off),
                    width as isize,
                    1,
                    T::ZERO,
                    dk.data_mut().as_mut_ptr().add(off),
                    width as isize,
                    1,
                );
            }
        }
        (dq, dk, dv)
    }
}

fn accumulate<T: Real>(g: &mut [Option<Mat<T>>], v: Var, d: Mat<T>) {
    match &mut g[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    T::ONE / (T::ONE + (-x).exp())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[inline]
fn gelu<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let u = c * (x + T::from_f64(0.044715) * x * x * x);
    T::from_f64(0.5) * x * (T::ONE + u.tanh())
}

#[inline]
fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(0.044715);
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    let du = c * (T::ONE + T::from_f64(3.0) * a * x * x);
    T::from_f64(0.5) * (T::ONE + th) + T::from_f64(0.5) * x * (T::ONE - th * th) * du
}
