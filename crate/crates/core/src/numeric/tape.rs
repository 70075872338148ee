//! Reverse-mode automatic differentiation over a Wengert list.
//!
//! Every operator appends one node holding its value and a record of how it
//! was produced. [`Tape::backward`] walks the list once in reverse, so the
//! cost of a gradient is a small constant multiple of the forward pass.

use std::sync::Arc;

use crate::error::{dim_err, CdnError, Result};

use super::scalar::gemm;
use super::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    /// Operands have identical shapes.
    Same,
    /// The right operand is one row repeated over every row of the left.
    Rows,
}

enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, F),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Reshape(Var),
    MaskedSoftmax(Var),
    ConcatLast(Vec<Var>),
    SliceLast { src: Var, start: usize },
    ConcatRows(Vec<Var>),
    SliceRows { src: Var, start: usize },
    GatherRows { table: Var, rows: Vec<usize> },
    SegmentMax { src: Var, argmax: Vec<Option<usize>> },
    SegmentMean { src: Var, segment: Vec<Option<usize>>, counts: Vec<usize> },
    LayerNorm { src: Var, gamma: Var, beta: Var, xhat: Vec<F>, rstd: Vec<F> },
    Sum(Var),
    Mean(Var),
    Bce { p: Var, target: F, clamped: bool },
    SoftmaxXent { logits: Var, gold: Vec<usize>, probs: Vec<F> },
}

struct Node<F> {
    shape: Vec<usize>,
    value: Vec<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// A single-threaded computation graph.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn cols_of(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

fn rows_of(shape: &[usize], len: usize) -> usize {
    let c = cols_of(shape);
    if c == 0 {
        0
    } else {
        len / c
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<F>, op: Op<F>, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<F> {
        &self.nodes[v.0]
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn variable(&mut self, t: Tensor<F>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<F> {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    pub fn item(&self, v: Var) -> F {
        self.node(v).value[0]
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn rows_cols(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (rows_of(&n.shape, n.value.len()), cols_of(&n.shape))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err!("matmul {:?} × {:?}", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, false);
        let ng = self.needs(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(dim_err!("transpose needs a matrix, got {:?}", s));
        }
        let (m, n) = (s[0], s[1]);
        let src = self.value(a);
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let ng = self.needs(&[a]);
        Ok(self.push(vec![n, m], out, Op::Transpose(a), ng))
    }

    fn broadcast_kind(&self, a: Var, b: Var, what: &str) -> Result<Broadcast> {
        let (na, nb) = (self.node(a), self.node(b));
        if na.shape == nb.shape {
            Ok(Broadcast::Same)
        } else if nb.value.len() == cols_of(&na.shape) && rows_of(&nb.shape, nb.value.len()) <= 1
        {
            Ok(Broadcast::Rows)
        } else {
            Err(dim_err!("{what}: cannot broadcast {:?} onto {:?}", nb.shape, na.shape))
        }
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(F, F) -> F,
        make: impl FnOnce(Var, Var, Broadcast) -> Op<F>,
    ) -> Result<Var> {
        let kind = self.broadcast_kind(a, b, what)?;
        let (va, vb) = (self.value(a), self.value(b));
        let out: Vec<F> = match kind {
            Broadcast::Same => va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Rows => {
                let c = vb.len();
                va.iter().enumerate().map(|(i, &x)| f(x, vb[i % c])).collect()
            }
        };
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a, b]);
        Ok(self.push(shape, out, make(a, b, kind), ng))
    }

    /// Elementwise sum; `b` may also be a single row broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let out = self.value(a).iter().map(|&x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a]);
        self.push(shape, out, Op::Scale(a, c), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: F) -> Var {
        let out = self.value(a).iter().map(|&x| x + c).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a]);
        self.push(shape, out, Op::AddScalar(a), ng)
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -F::one());
        self.add_scalar(neg, F::one())
    }

    fn unary(&mut self, a: Var, f: impl Fn(F) -> F, op: Op<F>) -> Var {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a]);
        self.push(shape, out, op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > F::zero() { x } else { F::zero() }, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(a).len() {
            return Err(dim_err!("reshape {:?} to {:?}", self.shape(a), shape));
        }
        let out = self.value(a).to_vec();
        let ng = self.needs(&[a]);
        Ok(self.push(shape.to_vec(), out, Op::Reshape(a), ng))
    }

    /// Row-wise softmax restricted to `allowed` entries.
    ///
    /// Disallowed entries get weight exactly zero; a row with no allowed entry
    /// yields all zeros.
    pub fn masked_softmax(&mut self, logits: Var, allowed: &Arc<[bool]>) -> Result<Var> {
        let (rows, cols) = self.rows_cols(logits);
        if allowed.len() != rows * cols {
            return Err(dim_err!(
                "mask of {} entries for logits {:?}",
                allowed.len(),
                self.shape(logits)
            ));
        }
        let x = self.value(logits);
        let mut out = vec![F::zero(); rows * cols];
        for r in 0..rows {
            let xr = &x[r * cols..(r + 1) * cols];
            let mr = &allowed[r * cols..(r + 1) * cols];
            let orow = &mut out[r * cols..(r + 1) * cols];
            masked_softmax_row(xr, mr, orow);
        }
        let shape = self.shape(logits).to_vec();
        let ng = self.needs(&[logits]);
        Ok(self.push(shape, out, Op::MaskedSoftmax(logits), ng))
    }

    /// Concatenate along the last dimension.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| dim_err!("concat of zero tensors"))?;
        let lead = self.shape(first)[..self.shape(first).len().saturating_sub(1)].to_vec();
        let rows = self.rows_cols(first).0;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len().saturating_sub(1)] != lead[..] {
                return Err(dim_err!("concat leading dims {:?} vs {:?}", s, lead));
            }
            total += cols_of(s);
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let c = cols_of(self.shape(p));
                out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let ng = self.needs(parts);
        Ok(self.push(shape, out, Op::ConcatLast(parts.to_vec()), ng))
    }

    /// Columns `start..start + len` of the last dimension.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.rows_cols(a);
        if start + len > cols {
            return Err(dim_err!("slice {}..{} of {} columns", start, start + len, cols));
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let mut shape = self.shape(a).to_vec();
        *shape.last_mut().expect("non-scalar") = len;
        let ng = self.needs(&[a]);
        Ok(self.push(shape, out, Op::SliceLast { src: a, start }, ng))
    }

    /// Stack matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| dim_err!("concat of zero tensors"))?;
        let cols = self.rows_cols(first).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.rows_cols(p);
            if c != cols {
                return Err(dim_err!("concat_rows: {} columns vs {}", c, cols));
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        let ng = self.needs(parts);
        Ok(self.push(vec![rows, cols], out, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Rows `start..start + len`, as a `[len, cols]` matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.rows_cols(a);
        if start + len > rows {
            return Err(dim_err!("rows {}..{} of {}", start, start + len, rows));
        }
        let out = self.value(a)[start * cols..(start + len) * cols].to_vec();
        let ng = self.needs(&[a]);
        Ok(self.push(vec![len, cols], out, Op::SliceRows { src: a, start }, ng))
    }

    /// Embedding-style lookup: output row `i` is `table[rows[i]]`.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let (n, cols) = self.rows_cols(table);
        let src = self.value(table);
        let mut out = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= n {
                return Err(dim_err!("row index {} out of {}", r, n));
            }
            out.extend_from_slice(&src[r * cols..(r + 1) * cols]);
        }
        let ng = self.needs(&[table]);
        Ok(self.push(
            vec![rows.len(), cols],
            out,
            Op::GatherRows {
                table,
                rows: rows.to_vec(),
            },
            ng,
        ))
    }

    fn check_segments(
        &self,
        x: Var,
        segment: &[usize],
        valid: &[bool],
        n_segments: usize,
    ) -> Result<(usize, usize)> {
        let (rows, cols) = self.rows_cols(x);
        if segment.len() != rows || valid.len() != rows {
            return Err(dim_err!(
                "segment ids {} / valid flags {} for {} rows",
                segment.len(),
                valid.len(),
                rows
            ));
        }
        for (i, (&s, &ok)) in segment.iter().zip(valid).enumerate() {
            if ok && s >= n_segments {
                return Err(dim_err!(
                    "segment id {} at row {} out of range {}",
                    s,
                    i,
                    n_segments
                ));
            }
        }
        Ok((rows, cols))
    }

    /// Per-segment, per-column maximum over valid rows. Ties go to the lowest
    /// row; a segment without valid rows pools to zeros.
    pub fn segment_max_pool(
        &mut self,
        x: Var,
        segment: &[usize],
        valid: &[bool],
        n_segments: usize,
    ) -> Result<Var> {
        let (rows, cols) = self.check_segments(x, segment, valid, n_segments)?;
        let src = self.value(x);
        let mut argmax: Vec<Option<usize>> = vec![None; n_segments * cols];
        for r in 0..rows {
            if !valid[r] {
                continue;
            }
            let s = segment[r];
            for c in 0..cols {
                let slot = &mut argmax[s * cols + c];
                match *slot {
                    Some(best) if src[best * cols + c] >= src[r * cols + c] => {}
                    _ => *slot = Some(r),
                }
            }
        }
        let out = argmax
            .iter()
            .enumerate()
            .map(|(i, a)| a.map_or(F::zero(), |r| src[r * cols + i % cols]))
            .collect();
        let ng = self.needs(&[x]);
        Ok(self.push(
            vec![n_segments, cols],
            out,
            Op::SegmentMax { src: x, argmax },
            ng,
        ))
    }

    /// Per-segment mean over valid rows; empty segments pool to zeros.
    pub fn segment_mean_pool(
        &mut self,
        x: Var,
        segment: &[usize],
        valid: &[bool],
        n_segments: usize,
    ) -> Result<Var> {
        let (rows, cols) = self.check_segments(x, segment, valid, n_segments)?;
        let src = self.value(x);
        let mut counts = vec![0usize; n_segments];
        let mut out = vec![F::zero(); n_segments * cols];
        let mut seg_of = vec![None; rows];
        for r in 0..rows {
            if !valid[r] {
                continue;
            }
            let s = segment[r];
            seg_of[r] = Some(s);
            counts[s] += 1;
            for c in 0..cols {
                out[s * cols + c] = out[s * cols + c] + src[r * cols + c];
            }
        }
        for s in 0..n_segments {
            if counts[s] > 0 {
                let inv = F::one() / F::from_usize(counts[s]).expect("count");
                for c in 0..cols {
                    out[s * cols + c] = out[s * cols + c] * inv;
                }
            }
        }
        let ng = self.needs(&[x]);
        Ok(self.push(
            vec![n_segments, cols],
            out,
            Op::SegmentMean {
                src: x,
                segment: seg_of,
                counts,
            },
            ng,
        ))
    }

    /// Normalise each row to zero mean / unit variance, then apply the
    /// per-column affine map `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: F) -> Result<Var> {
        let (rows, cols) = self.rows_cols(x);
        if self.value(gamma).len() != cols || self.value(beta).len() != cols {
            return Err(dim_err!("layer_norm affine params must have {} entries", cols));
        }
        let src = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let n = F::from_usize(cols).expect("cols");
        let mut xhat = vec![F::zero(); rows * cols];
        let mut rstd = vec![F::zero(); rows];
        let mut out = vec![F::zero(); rows * cols];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let rs = F::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let shape = self.shape(x).to_vec();
        let ng = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            shape,
            out,
            Op::LayerNorm {
                src: x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        let ng = self.needs(&[a]);
        self.push(vec![], vec![s], Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = F::from_usize(v.len().max(1)).expect("len");
        let s = v.iter().copied().sum::<F>() / n;
        let ng = self.needs(&[a]);
        self.push(vec![], vec![s], Op::Mean(a), ng)
    }

    /// Binary cross-entropy of a single probability against a 0/1 target,
    /// with `p` clamped to `[eps, 1 - eps]`.
    pub fn binary_cross_entropy(&mut self, p: Var, target: F, eps: F) -> Result<Var> {
        if self.value(p).len() != 1 {
            return Err(dim_err!("bce expects a single probability, got {:?}", self.shape(p)));
        }
        let raw = self.value(p)[0];
        let hi = F::one() - eps;
        let pc = raw.max(eps).min(hi);
        let clamped = raw < eps || raw > hi;
        let loss = -(target * pc.ln() + (F::one() - target) * (F::one() - pc).ln());
        let ng = self.needs(&[p]);
        Ok(self.push(vec![], vec![loss], Op::Bce { p, target, clamped }, ng))
    }

    /// Mean over rows of `-log softmax(logits[r])[gold[r]]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, gold: &[usize]) -> Result<Var> {
        let (rows, cols) = self.rows_cols(logits);
        if gold.len() != rows {
            return Err(dim_err!("{} gold labels for {} rows", gold.len(), rows));
        }
        if let Some(&g) = gold.iter().find(|&&g| g >= cols) {
            return Err(dim_err!("gold index {} out of {} classes", g, cols));
        }
        let x = self.value(logits);
        let mut probs = vec![F::zero(); rows * cols];
        let mut total = F::zero();
        let allow: Vec<bool> = vec![true; cols];
        for r in 0..rows {
            let xr = &x[r * cols..(r + 1) * cols];
            masked_softmax_row(xr, &allow, &mut probs[r * cols..(r + 1) * cols]);
            let m = xr.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = m + xr.iter().map(|&v| (v - m).exp()).sum::<F>().ln();
            total = total + (lse - xr[gold[r]]);
        }
        let loss = if rows == 0 {
            F::zero()
        } else {
            total / F::from_usize(rows).expect("rows")
        };
        let ng = self.needs(&[logits]);
        Ok(self.push(
            vec![],
            vec![loss],
            Op::SoftmaxXent {
                logits,
                gold: gold.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Populate gradients of `loss` with respect to every node that needs one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(CdnError::Contract(format!(
                "backward from non-scalar {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let nodes = &self.nodes;
        macro_rules! acc {
            ($v:expr, |$d:ident| $body:block) => {
                if let Some($d) = grad_slot(grads, nodes, $v) $body
            };
        }
        let node = &nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (&nodes[a.0].shape, &nodes[b.0].shape);
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                acc!(*a, |da| {
                    gemm(m, n, k, g, false, &nodes[b.0].value, true, da, true);
                });
                acc!(*b, |db| {
                    gemm(k, m, n, &nodes[a.0].value, true, g, false, db, true);
                });
            }
            Op::Transpose(a) => {
                let (m, n) = (node.shape[1], node.shape[0]);
                acc!(*a, |da| {
                    for r in 0..m {
                        for c in 0..n {
                            da[r * n + c] = da[r * n + c] + g[c * m + r];
                        }
                    }
                });
            }
            Op::Add(a, b, kind) | Op::Sub(a, b, kind) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -F::one()
                } else {
                    F::one()
                };
                acc!(*a, |da| {
                    da.iter_mut().zip(g).for_each(|(d, &x)| *d = *d + x);
                });
                acc!(*b, |db| {
                    let c = db.len();
                    match kind {
                        Broadcast::Same => {
                            db.iter_mut().zip(g).for_each(|(d, &x)| *d = *d + sign * x)
                        }
                        Broadcast::Rows => {
                            for (idx, &x) in g.iter().enumerate() {
                                db[idx % c] = db[idx % c] + sign * x;
                            }
                        }
                    }
                });
            }
            Op::Mul(a, b, kind) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let c = vb.len();
                acc!(*a, |da| {
                    for (idx, d) in da.iter_mut().enumerate() {
                        let bv = match kind {
                            Broadcast::Same => vb[idx],
                            Broadcast::Rows => vb[idx % c],
                        };
                        *d = *d + g[idx] * bv;
                    }
                });
                acc!(*b, |db| {
                    for (idx, &x) in g.iter().enumerate() {
                        let j = match kind {
                            Broadcast::Same => idx,
                            Broadcast::Rows => idx % c,
                        };
                        db[j] = db[j] + x * va[idx];
                    }
                });
            }
            Op::Scale(a, c) => acc!(*a, |da| {
                da.iter_mut().zip(g).for_each(|(d, &x)| *d = *d + x * *c);
            }),
            Op::AddScalar(a) | Op::Reshape(a) => acc!(*a, |da| {
                da.iter_mut().zip(g).for_each(|(d, &x)| *d = *d + x);
            }),
            Op::Relu(a) => {
                let x = &nodes[a.0].value;
                acc!(*a, |da| {
                    for (idx, d) in da.iter_mut().enumerate() {
                        if x[idx] > F::zero() {
                            *d = *d + g[idx];
                        }
                    }
                });
            }
            Op::Sigmoid(a) => acc!(*a, |da| {
                for (idx, d) in da.iter_mut().enumerate() {
                    let y = node.value[idx];
                    *d = *d + g[idx] * y * (F::one() - y);
                }
            }),
            Op::Tanh(a) => acc!(*a, |da| {
                for (idx, d) in da.iter_mut().enumerate() {
                    let y = node.value[idx];
                    *d = *d + g[idx] * (F::one() - y * y);
                }
            }),
            Op::MaskedSoftmax(a) => {
                let cols = cols_of(&node.shape);
                let rows = rows_of(&node.shape, node.value.len());
                acc!(*a, |da| {
                    for r in 0..rows {
                        let y = &node.value[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: F = y.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for c in 0..cols {
                            let idx = r * cols + c;
                            da[idx] = da[idx] + y[c] * (gr[c] - dot);
                        }
                    }
                });
            }
            Op::ConcatLast(parts) => {
                let total = cols_of(&node.shape);
                let rows = rows_of(&node.shape, node.value.len());
                let mut offset = 0;
                for &p in parts {
                    let c = cols_of(&nodes[p.0].shape);
                    acc!(p, |dp| {
                        for r in 0..rows {
                            for j in 0..c {
                                dp[r * c + j] = dp[r * c + j] + g[r * total + offset + j];
                            }
                        }
                    });
                    offset += c;
                }
            }
            Op::SliceLast { src, start } => {
                let len = cols_of(&node.shape);
                let cols = cols_of(&nodes[src.0].shape);
                let rows = rows_of(&node.shape, node.value.len());
                acc!(*src, |ds| {
                    for r in 0..rows {
                        for j in 0..len {
                            let idx = r * cols + start + j;
                            ds[idx] = ds[idx] + g[r * len + j];
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = nodes[p.0].value.len();
                    acc!(p, |dp| {
                        dp.iter_mut()
                            .zip(&g[offset..offset + n])
                            .for_each(|(d, &x)| *d = *d + x);
                    });
                    offset += n;
                }
            }
            Op::SliceRows { src, start } => {
                let cols = cols_of(&node.shape);
                acc!(*src, |ds| {
                    let base = start * cols;
                    for (j, &x) in g.iter().enumerate() {
                        ds[base + j] = ds[base + j] + x;
                    }
                });
            }
            Op::GatherRows { table, rows } => {
                let cols = cols_of(&node.shape);
                acc!(*table, |dt| {
                    for (i, &r) in rows.iter().enumerate() {
                        for c in 0..cols {
                            dt[r * cols + c] = dt[r * cols + c] + g[i * cols + c];
                        }
                    }
                });
            }
            Op::SegmentMax { src, argmax } => {
                let cols = cols_of(&node.shape);
                acc!(*src, |ds| {
                    for (i, a) in argmax.iter().enumerate() {
                        if let Some(r) = a {
                            let idx = r * cols + i % cols;
                            ds[idx] = ds[idx] + g[i];
                        }
                    }
                });
            }
            Op::SegmentMean {
                src,
                segment,
                counts,
            } => {
                let cols = cols_of(&node.shape);
                acc!(*src, |ds| {
                    for (r, s) in segment.iter().enumerate() {
                        if let Some(s) = *s {
                            let inv = F::one() / F::from_usize(counts[s]).expect("count");
                            for c in 0..cols {
                                ds[r * cols + c] = ds[r * cols + c] + g[s * cols + c] * inv;
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                src,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let cols = cols_of(&node.shape);
                let rows = rstd.len();
                let gam = &nodes[gamma.0].value;
                acc!(*gamma, |dg| {
                    for (idx, &x) in g.iter().enumerate() {
                        dg[idx % cols] = dg[idx % cols] + x * xhat[idx];
                    }
                });
                acc!(*beta, |db| {
                    for (idx, &x) in g.iter().enumerate() {
                        db[idx % cols] = db[idx % cols] + x;
                    }
                });
                acc!(*src, |dx| {
                    let n = F::from_usize(cols).expect("cols");
                    for r in 0..rows {
                        let base = r * cols;
                        let mut s1 = F::zero();
                        let mut s2 = F::zero();
                        for c in 0..cols {
                            let dh = g[base + c] * gam[c];
                            s1 = s1 + dh;
                            s2 = s2 + dh * xhat[base + c];
                        }
                        for c in 0..cols {
                            let dh = g[base + c] * gam[c];
                            let v = rstd[r] / n * (n * dh - s1 - xhat[base + c] * s2);
                            dx[base + c] = dx[base + c] + v;
                        }
                    }
                });
            }
            Op::Sum(a) => acc!(*a, |da| {
                da.iter_mut().for_each(|d| *d = *d + g[0]);
            }),
            Op::Mean(a) => acc!(*a, |da| {
                let n = F::from_usize(da.len().max(1)).expect("len");
                da.iter_mut().for_each(|d| *d = *d + g[0] / n);
            }),
            Op::Bce { p, target, clamped } => {
                let pv = nodes[p.0].value[0];
                let clamped = *clamped;
                acc!(*p, |dp| {
                    if !clamped {
                        let t = *target;
                        let d = -t / pv + (F::one() - t) / (F::one() - pv);
                        dp[0] = dp[0] + g[0] * d;
                    }
                });
            }
            Op::SoftmaxXent {
                logits,
                gold,
                probs,
            } => {
                let cols = cols_of(&nodes[logits.0].shape);
                let rows = gold.len();
                acc!(*logits, |dl| {
                    let inv = F::one() / F::from_usize(rows.max(1)).expect("rows");
                    for r in 0..rows {
                        for c in 0..cols {
                            let idx = r * cols + c;
                            let onehot = if c == gold[r] { F::one() } else { F::zero() };
                            dl[idx] = dl[idx] + g[0] * inv * (probs[idx] - onehot);
                        }
                    }
                });
            }
        }
    }
}

fn grad_slot<'a, F: Scalar>(
    grads: &'a mut [Option<Vec<F>>],
    nodes: &[Node<F>],
    v: Var,
) -> Option<&'a mut Vec<F>> {
    let node = &nodes[v.0];
    if !node.needs_grad {
        return None;
    }
    let n = node.value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); n]))
}

pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn masked_softmax_row<F: Scalar>(x: &[F], allowed: &[bool], out: &mut [F]) {
    let mut max = F::neg_infinity();
    for (&v, &ok) in x.iter().zip(allowed) {
        if ok && v > max {
            max = v;
        }
    }
    if max == F::neg_infinity() {
        out.iter_mut().for_each(|o| *o = F::zero());
        return;
    }
    let mut total = F::zero();
    for ((o, &v), &ok) in out.iter_mut().zip(x).zip(allowed) {
        *o = if ok { (v - max).exp() } else { F::zero() };
        total = total + *o;
    }
    out.iter_mut().for_each(|o| *o = *o / total);
}
