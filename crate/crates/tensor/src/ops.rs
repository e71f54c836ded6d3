//! Differentiable primitives recorded on a [`Tape`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, mismatch, Result};
use crate::scalar::{gemm, Float};
use crate::tape::{accumulate, grad_buf, Node, Op, Tape, Var};
use crate::tensor::numel;

/// Splits `shape` around `axis` into (outer, len, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` right-aligned against `out`, zero on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - shape.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Calls `f(out_index, a_offset, b_offset)` for every element of `out`.
fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total = numel(out);
    if total == 0 {
        return;
    }
    if out.is_empty() {
        f(0, 0, 0);
        return;
    }
    let rank = out.len();
    let last = out[rank - 1];
    let (la, lb) = (sa[rank - 1], sb[rank - 1]);
    let mut counter = vec![0usize; rank - 1];
    let mut oi = 0;
    loop {
        let mut ia = 0;
        let mut ib = 0;
        for d in 0..rank - 1 {
            ia += counter[d] * sa[d];
            ib += counter[d] * sb[d];
        }
        for t in 0..last {
            f(oi + t, ia + t * la, ib + t * lb);
        }
        oi += last;
        if oi >= total {
            break;
        }
        let mut d = rank - 1;
        loop {
            d -= 1;
            counter[d] += 1;
            if counter[d] < out[d] {
                break;
            }
            counter[d] = 0;
        }
    }
}

impl<'t, T: Float> Var<'t, T> {
    fn same_tape(&self, other: &Var<'t, T>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes"
        );
    }

    /// Matrix product. `self` is `[..., m, k]`; `rhs` is either a shared
    /// `[k, n]` matrix or `[..., k, n]` with identical leading dimensions.
    pub fn matmul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&rhs);
        let sa = self.shape();
        let sb = rhs.shape();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let a = self.data();
        let b = rhs.data();
        let batched = sb.len() > 2;
        let mut out_shape = sa.clone();
        *out_shape.last_mut().unwrap() = n;
        let mut out = vec![T::zero(); numel(&out_shape)];
        if batched {
            if sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
                return Err(mismatch("matmul", &sa, &sb));
            }
            let batch = numel(&sa[..sa.len() - 2]);
            for g in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &a[g * m * k..],
                    false,
                    &b[g * k * n..],
                    false,
                    &mut out[g * m * n..],
                    false,
                );
            }
        } else {
            let rows = numel(&sa[..sa.len() - 1]);
            gemm(rows, k, n, &a, false, &b, false, &mut out, false);
        }
        let ng = self.requires_grad() || rhs.requires_grad();
        self.tape.push(
            "matmul",
            out_shape,
            out,
            Op::MatMul {
                a: self.id,
                b: rhs.id,
                batched,
            },
            ng,
        )
    }

    fn broadcast_binary(
        self,
        rhs: Var<'t, T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var<'t, T>> {
        self.same_tape(&rhs);
        let sa = self.shape();
        let sb = rhs.shape();
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| mismatch(name, &sa, &sb))?;
        let a = self.data();
        let b = rhs.data();
        let mut out = vec![T::zero(); numel(&out_shape)];
        if sa == sb {
            for ((o, &x), &y) in out.iter_mut().zip(a.iter()).zip(b.iter()) {
                *o = f(x, y);
            }
        } else {
            let stra = broadcast_strides(&sa, &out_shape);
            let strb = broadcast_strides(&sb, &out_shape);
            for_each_broadcast(&out_shape, &stra, &strb, |o, ia, ib| {
                out[o] = f(a[ia], b[ib]);
            });
        }
        let ng = self.requires_grad() || rhs.requires_grad();
        self.tape.push(name, out_shape, out, op, ng)
    }

    /// Elementwise sum with right-aligned broadcasting.
    pub fn add(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let op = Op::Add {
            a: self.id,
            b: rhs.id,
        };
        self.broadcast_binary(rhs, "add", |x, y| x + y, op)
    }

    /// Elementwise product with right-aligned broadcasting.
    pub fn mul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        let op = Op::Mul {
            a: self.id,
            b: rhs.id,
        };
        self.broadcast_binary(rhs, "mul", |x, y| x * y, op)
    }

    pub fn scale(self, factor: T) -> Result<Var<'t, T>> {
        let out = self.data().iter().map(|&v| v * factor).collect();
        self.tape.push(
            "scale",
            self.shape(),
            out,
            Op::Scale {
                a: self.id,
                factor,
            },
            self.requires_grad(),
        )
    }

    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("concat", "no inputs"))?;
        let base = first.shape();
        if axis >= base.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            first.same_tape(p);
            let s = p.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(mismatch("concat", &base, &s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let mut out = Vec::with_capacity(numel(&out_shape));
        let datas: Vec<_> = parts.iter().map(|p| (p.data(), p.shape()[axis])).collect();
        for o in 0..outer {
            for (d, len) in &datas {
                let chunk = len * inner;
                out.extend_from_slice(&d[o * chunk..(o + 1) * chunk]);
            }
        }
        let ng = parts.iter().any(|p| p.requires_grad());
        first.tape.push(
            "concat",
            out_shape,
            out,
            Op::Concat {
                inputs: parts.iter().map(|p| p.id).collect(),
                axis,
            },
            ng,
        )
    }

    fn reduce_axis(self, axis: usize, mean: bool) -> Result<Var<'t, T>> {
        let name = if mean { "mean" } else { "sum" };
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(invalid(name, format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let a = self.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &a[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        if mean && len > 0 {
            let inv = T::one() / T::of(len as f64);
            out.iter_mut().for_each(|v| *v *= inv);
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let op = if mean {
            Op::Mean { a: self.id, axis }
        } else {
            Op::Sum { a: self.id, axis }
        };
        self.tape
            .push(name, out_shape, out, op, self.requires_grad())
    }

    /// Sum over `axis`, removing it.
    pub fn sum(self, axis: usize) -> Result<Var<'t, T>> {
        self.reduce_axis(axis, false)
    }

    /// Mean over `axis`, removing it.
    pub fn mean(self, axis: usize) -> Result<Var<'t, T>> {
        self.reduce_axis(axis, true)
    }

    /// Sum of every element as a scalar.
    pub fn sum_all(self) -> Result<Var<'t, T>> {
        let total = self.data().iter().copied().sum();
        self.tape.push(
            "sum_all",
            vec![],
            vec![total],
            Op::SumAll { a: self.id },
            self.requires_grad(),
        )
    }

    pub fn leaky_relu(self, slope: T) -> Result<Var<'t, T>> {
        let out = self
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { v * slope })
            .collect();
        self.tape.push(
            "leaky_relu",
            self.shape(),
            out,
            Op::LeakyRelu { a: self.id, slope },
            self.requires_grad(),
        )
    }

    pub fn relu(self) -> Result<Var<'t, T>> {
        self.leaky_relu(T::zero())
    }

    /// 1-D convolution of `self` (`[N, C_in, L]`) with `weight`
    /// (`[C_out, C_in / groups, K]`). No bias.
    pub fn conv1d(
        self,
        weight: Var<'t, T>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var<'t, T>> {
        self.same_tape(&weight);
        let sx = self.shape();
        let sw = weight.shape();
        if sx.len() != 3 || sw.len() != 3 || stride == 0 || groups == 0 {
            return Err(mismatch("conv1d", &sx, &sw));
        }
        let (n, cin, len) = (sx[0], sx[1], sx[2]);
        let (cout, cpg, k) = (sw[0], sw[1], sw[2]);
        if cin % groups != 0 || cout % groups != 0 || cpg * groups != cin {
            return Err(mismatch("conv1d", &sx, &sw));
        }
        if len + 2 * padding < k {
            return Err(invalid(
                "conv1d",
                format!("input length {len} with padding {padding} shorter than kernel {k}"),
            ));
        }
        let lout = (len + 2 * padding - k) / stride + 1;
        let geo = ConvGeometry {
            n,
            cin,
            len,
            cout,
            k,
            lout,
            stride,
            padding,
            groups,
        };
        let x = self.data();
        let w = weight.data();
        let out = geo.forward(&x, &w);
        let ng = self.requires_grad() || weight.requires_grad();
        self.tape.push(
            "conv1d",
            vec![n, cout, lout],
            out,
            Op::Conv1d {
                x: self.id,
                w: weight.id,
                stride,
                padding,
                groups,
            },
            ng,
        )
    }

    /// Average pooling along the last axis.
    pub fn avg_pool1d(self, kernel: usize, stride: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let len = *shape.last().ok_or_else(|| invalid("avg_pool1d", "scalar input"))?;
        if kernel == 0 || stride == 0 || len < kernel {
            return Err(invalid(
                "avg_pool1d",
                format!("kernel {kernel}, stride {stride} invalid for length {len}"),
            ));
        }
        let lout = (len - kernel) / stride + 1;
        let rows = numel(&shape) / len;
        let a = self.data();
        let inv = T::one() / T::of(kernel as f64);
        let mut out = Vec::with_capacity(rows * lout);
        for r in 0..rows {
            let row = &a[r * len..(r + 1) * len];
            for t in 0..lout {
                let s: T = row[t * stride..t * stride + kernel].iter().copied().sum();
                out.push(s * inv);
            }
        }
        let mut out_shape = shape.clone();
        *out_shape.last_mut().unwrap() = lout;
        self.tape.push(
            "avg_pool1d",
            out_shape,
            out,
            Op::AvgPool1d {
                a: self.id,
                kernel,
                stride,
            },
            self.requires_grad(),
        )
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 - rate)`.
    pub fn dropout(self, rate: f64, seed: u64) -> Result<Var<'t, T>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(invalid("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(self);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = self.data();
        let mask: Vec<T> = (0..a.len())
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let out = a.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        self.tape.push(
            "dropout",
            self.shape(),
            out,
            Op::Dropout { a: self.id, mask },
            self.requires_grad(),
        )
    }

    /// Selects rows (slices along axis 0); indices may repeat.
    pub fn gather_rows(self, indices: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let rows = *shape.first().ok_or_else(|| invalid("gather_rows", "scalar input"))?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(invalid(
                "gather_rows",
                format!("index {bad} out of range for {rows} rows"),
            ));
        }
        let width = if rows == 0 { 0 } else { numel(&shape) / rows };
        let a = self.data();
        let mut out = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            out.extend_from_slice(&a[i * width..(i + 1) * width]);
        }
        let mut out_shape = shape.clone();
        out_shape[0] = indices.len();
        self.tape.push(
            "gather_rows",
            out_shape,
            out,
            Op::GatherRows {
                a: self.id,
                indices: indices.to_vec(),
            },
            self.requires_grad(),
        )
    }

    /// Softmax along `axis` restricted to entries where `mask` is set.
    /// Masked entries get probability 0; a fully masked slice is all zeros.
    pub fn masked_softmax(self, mask: &[bool], axis: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if mask.len() != numel(&shape) {
            return Err(mismatch("masked_softmax", &shape, &[mask.len()]));
        }
        if axis >= shape.len() {
            return Err(invalid(
                "masked_softmax",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let a = self.data();
        let mut out = vec![T::zero(); a.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let mut max = T::neg_infinity();
                for l in 0..len {
                    if mask[idx(l)] && a[idx(l)] > max {
                        max = a[idx(l)];
                    }
                }
                if max == T::neg_infinity() {
                    continue;
                }
                let mut total = T::zero();
                for l in 0..len {
                    if mask[idx(l)] {
                        let e = (a[idx(l)] - max).exp();
                        out[idx(l)] = e;
                        total += e;
                    }
                }
                for l in 0..len {
                    out[idx(l)] = out[idx(l)] / total;
                }
            }
        }
        self.tape.push(
            "masked_softmax",
            shape,
            out,
            Op::MaskedSoftmax {
                a: self.id,
                mask: mask.to_vec(),
                axis,
            },
            self.requires_grad(),
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let old = self.shape();
        if numel(&old) != numel(shape) {
            return Err(mismatch("reshape", &old, shape));
        }
        let data = self.data();
        let needs_grad = self.requires_grad();
        let mut nodes = self.tape.nodes.borrow_mut();
        nodes.push(Node {
            shape: shape.to_vec(),
            data,
            op: Op::Reshape { a: self.id },
            needs_grad,
        });
        Ok(Var {
            tape: self.tape,
            id: nodes.len() - 1,
        })
    }

    /// Per-row focal loss `-(1 - p_t)^gamma * log p_t` over `[m, C]` logits.
    ///
    /// Rows with `mask == false` produce exactly 0 and receive exactly zero
    /// gradient; their targets are never read. `gamma = 0` is cross-entropy.
    pub fn focal_loss(self, targets: &[usize], mask: &[bool], gamma: T) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if shape.len() != 2 || targets.len() != shape[0] || mask.len() != shape[0] {
            return Err(mismatch("focal_loss", &shape, &[targets.len(), mask.len()]));
        }
        if gamma < T::zero() {
            return Err(invalid("focal_loss", "gamma must be non-negative"));
        }
        let (m, c) = (shape[0], shape[1]);
        let z = self.data();
        let mut out = vec![T::zero(); m];
        for r in 0..m {
            if !mask[r] {
                continue;
            }
            let t = targets[r];
            if t >= c {
                return Err(invalid(
                    "focal_loss",
                    format!("target {t} out of range for {c} classes"),
                ));
            }
            let row = &z[r * c..(r + 1) * c];
            let stats = FocalRow::new(row, t, gamma);
            out[r] = stats.loss;
        }
        self.tape.push(
            "focal_loss",
            vec![m],
            out,
            Op::Focal {
                logits: self.id,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                gamma,
            },
            self.requires_grad(),
        )
    }
}

struct FocalRow<T> {
    lse: T,
    p: T,
    loss: T,
    /// dL/dz_c = coef * (delta_ct - p_c)
    coef: T,
}

impl<T: Float> FocalRow<T> {
    fn new(row: &[T], target: usize, gamma: T) -> Self {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let lp = row[target] - lse;
        let p = lp.exp();
        let one_minus = -lp.exp_m1();
        let (weight, first) = if gamma == T::zero() {
            (T::one(), T::zero())
        } else if one_minus <= T::zero() {
            (T::zero(), T::zero())
        } else {
            (
                one_minus.powf(gamma),
                gamma * one_minus.powf(gamma - T::one()) * p * lp,
            )
        };
        Self {
            lse,
            p,
            loss: -weight * lp,
            coef: first - weight,
        }
    }
}

struct ConvGeometry {
    n: usize,
    cin: usize,
    len: usize,
    cout: usize,
    k: usize,
    lout: usize,
    stride: usize,
    padding: usize,
    groups: usize,
}

impl ConvGeometry {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.padding == 0
    }

    /// Source position for output step `t` and tap `kk`, if inside the input.
    fn src(&self, t: usize, kk: usize) -> Option<usize> {
        let pos = (t * self.stride + kk) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < self.len).then_some(pos as usize)
    }

    fn im2col<T: Float>(&self, x: &[T], col: &mut [T]) {
        for c in 0..self.cin {
            for kk in 0..self.k {
                let row = &mut col[(c * self.k + kk) * self.lout..(c * self.k + kk + 1) * self.lout];
                for (t, v) in row.iter_mut().enumerate() {
                    *v = self.src(t, kk).map_or(T::zero(), |p| x[c * self.len + p]);
                }
            }
        }
    }

    fn col2im<T: Float>(&self, col: &[T], dx: &mut [T]) {
        for c in 0..self.cin {
            for kk in 0..self.k {
                let row = &col[(c * self.k + kk) * self.lout..(c * self.k + kk + 1) * self.lout];
                for (t, &v) in row.iter().enumerate() {
                    if let Some(p) = self.src(t, kk) {
                        dx[c * self.len + p] += v;
                    }
                }
            }
        }
    }

    fn forward<T: Float>(&self, x: &[T], w: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n * self.cout * self.lout];
        let xs = self.cin * self.len;
        let os = self.cout * self.lout;
        if self.groups == 1 {
            let ck = self.cin * self.k;
            let mut col = vec![T::zero(); if self.is_pointwise() { 0 } else { ck * self.lout }];
            for b in 0..self.n {
                let xb = &x[b * xs..(b + 1) * xs];
                let src: &[T] = if self.is_pointwise() {
                    xb
                } else {
                    self.im2col(xb, &mut col);
                    &col
                };
                gemm(
                    self.cout,
                    ck,
                    self.lout,
                    w,
                    false,
                    src,
                    false,
                    &mut out[b * os..(b + 1) * os],
                    false,
                );
            }
            return out;
        }
        let cpg_in = self.cin / self.groups;
        let cpg_out = self.cout / self.groups;
        for b in 0..self.n {
            for co in 0..self.cout {
                let g = co / cpg_out;
                let orow = &mut out[b * os + co * self.lout..b * os + (co + 1) * self.lout];
                for ci in 0..cpg_in {
                    let xrow = &x[b * xs + (g * cpg_in + ci) * self.len..][..self.len];
                    let wrow = &w[(co * cpg_in + ci) * self.k..][..self.k];
                    for (kk, &wv) in wrow.iter().enumerate() {
                        for (t, o) in orow.iter_mut().enumerate() {
                            if let Some(p) = self.src(t, kk) {
                                *o += wv * xrow[p];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn backward<T: Float>(
        &self,
        x: &[T],
        w: &[T],
        dy: &[T],
        mut dx: Option<&mut Vec<T>>,
        mut dw: Option<&mut Vec<T>>,
    ) {
        let xs = self.cin * self.len;
        let os = self.cout * self.lout;
        if self.groups == 1 {
            let ck = self.cin * self.k;
            let mut col = vec![T::zero(); ck * self.lout];
            for b in 0..self.n {
                let xb = &x[b * xs..(b + 1) * xs];
                let dyb = &dy[b * os..(b + 1) * os];
                if let Some(dw) = dw.as_deref_mut() {
                    let src: &[T] = if self.is_pointwise() {
                        xb
                    } else {
                        self.im2col(xb, &mut col);
                        &col
                    };
                    gemm(self.cout, self.lout, ck, dyb, false, src, true, dw, true);
                }
                if let Some(dx) = dx.as_deref_mut() {
                    let dxb = &mut dx[b * xs..(b + 1) * xs];
                    if self.is_pointwise() {
                        gemm(ck, self.cout, self.lout, w, true, dyb, false, dxb, true);
                    } else {
                        gemm(ck, self.cout, self.lout, w, true, dyb, false, &mut col, false);
                        self.col2im(&col, dxb);
                    }
                }
            }
            return;
        }
        let cpg_in = self.cin / self.groups;
        let cpg_out = self.cout / self.groups;
        for b in 0..self.n {
            for co in 0..self.cout {
                let g = co / cpg_out;
                let dyrow = &dy[b * os + co * self.lout..][..self.lout];
                for ci in 0..cpg_in {
                    let xoff = b * xs + (g * cpg_in + ci) * self.len;
                    let woff = (co * cpg_in + ci) * self.k;
                    for kk in 0..self.k {
                        let mut acc = T::zero();
                        for (t, &d) in dyrow.iter().enumerate() {
                            if let Some(p) = self.src(t, kk) {
                                acc += d * x[xoff + p];
                                if let Some(dx) = dx.as_deref_mut() {
                                    dx[xoff + p] += d * w[woff + kk];
                                }
                            }
                        }
                        if let Some(dw) = dw.as_deref_mut() {
                            dw[woff + kk] += acc;
                        }
                    }
                }
            }
        }
    }
}

/// Reduces `grad` (shaped like the broadcast output) onto an input of `shape`.
fn unbroadcast<T: Float>(
    grad: &[T],
    out_shape: &[usize],
    shape: &[usize],
    scale_by: Option<(&[T], &[usize])>,
    dst: &mut [T],
) {
    let s_in = broadcast_strides(shape, out_shape);
    match scale_by {
        None => {
            if shape == out_shape {
                for (d, &g) in dst.iter_mut().zip(grad) {
                    *d += g;
                }
            } else {
                let zeros = vec![0; out_shape.len()];
                for_each_broadcast(out_shape, &s_in, &zeros, |o, i, _| dst[i] += grad[o]);
            }
        }
        Some((other, other_shape)) => {
            if shape == out_shape && other_shape == out_shape {
                for ((d, &g), &v) in dst.iter_mut().zip(grad).zip(other) {
                    *d += g * v;
                }
            } else {
                let s_other = broadcast_strides(other_shape, out_shape);
                for_each_broadcast(out_shape, &s_in, &s_other, |o, i, j| {
                    dst[i] += grad[o] * other[j]
                });
            }
        }
    }
}

pub(crate) fn backward_node<T: Float>(
    nodes: &[Node<T>],
    id: usize,
    grad: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let node = &nodes[id];
    let ng = |i: usize| nodes[i].needs_grad;
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul { a, b, batched } => {
            let sa = &nodes[a].shape;
            let sb = &nodes[b].shape;
            let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
            let n = sb[sb.len() - 1];
            let ad = &nodes[a].data;
            let bd = &nodes[b].data;
            if batched {
                let batch = numel(&sa[..sa.len() - 2]);
                if ng(a) {
                    let da = grad_buf(grads, a, ad.len());
                    for g in 0..batch {
                        gemm(m, n, k, &grad[g * m * n..], false, &bd[g * k * n..], true, &mut da[g * m * k..], true);
                    }
                }
                if ng(b) {
                    let db = grad_buf(grads, b, bd.len());
                    for g in 0..batch {
                        gemm(k, m, n, &ad[g * m * k..], true, &grad[g * m * n..], false, &mut db[g * k * n..], true);
                    }
                }
            } else {
                let rows = numel(&sa[..sa.len() - 1]);
                if ng(a) {
                    let da = grad_buf(grads, a, ad.len());
                    gemm(rows, n, k, grad, false, bd, true, da, true);
                }
                if ng(b) {
                    let db = grad_buf(grads, b, bd.len());
                    gemm(k, rows, n, ad, true, grad, false, db, true);
                }
            }
        }
        &Op::Add { a, b } => {
            for x in [a, b] {
                if ng(x) {
                    let len = nodes[x].data.len();
                    let dst = grad_buf(grads, x, len);
                    unbroadcast(grad, &node.shape, &nodes[x].shape, None, dst);
                }
            }
        }
        &Op::Mul { a, b } => {
            for (x, other) in [(a, b), (b, a)] {
                if ng(x) {
                    let len = nodes[x].data.len();
                    let dst = grad_buf(grads, x, len);
                    unbroadcast(
                        grad,
                        &node.shape,
                        &nodes[x].shape,
                        Some((&nodes[other].data, &nodes[other].shape)),
                        dst,
                    );
                }
            }
        }
        &Op::Scale { a, factor } => {
            if ng(a) {
                let scaled: Vec<T> = grad.iter().map(|&g| g * factor).collect();
                accumulate(grads, a, &scaled);
            }
        }
        Op::Concat { inputs, axis } => {
            let (outer, _, inner) = split_axis(&node.shape, *axis);
            let mut offset = 0;
            let total = node.shape[*axis] * inner;
            for &x in inputs {
                let len = nodes[x].shape[*axis] * inner;
                if ng(x) {
                    let dst = grad_buf(grads, x, nodes[x].data.len());
                    for o in 0..outer {
                        let src = &grad[o * total + offset..o * total + offset + len];
                        for (d, &s) in dst[o * len..(o + 1) * len].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                offset += len;
            }
        }
        &Op::Sum { a, axis } | &Op::Mean { a, axis } => {
            if ng(a) {
                let (outer, len, inner) = split_axis(&nodes[a].shape, axis);
                let factor = if matches!(node.op, Op::Mean { .. }) && len > 0 {
                    T::one() / T::of(len as f64)
                } else {
                    T::one()
                };
                let dst = grad_buf(grads, a, nodes[a].data.len());
                for o in 0..outer {
                    let src = &grad[o * inner..(o + 1) * inner];
                    for l in 0..len {
                        let row = &mut dst[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (d, &s) in row.iter_mut().zip(src) {
                            *d += s * factor;
                        }
                    }
                }
            }
        }
        &Op::SumAll { a } => {
            if ng(a) {
                let dst = grad_buf(grads, a, nodes[a].data.len());
                dst.iter_mut().for_each(|d| *d += grad[0]);
            }
        }
        &Op::LeakyRelu { a, slope } => {
            if ng(a) {
                let x = &nodes[a].data;
                let dst = grad_buf(grads, a, x.len());
                for ((d, &g), &v) in dst.iter_mut().zip(grad).zip(x.iter()) {
                    *d += if v > T::zero() { g } else { g * slope };
                }
            }
        }
        &Op::Conv1d {
            x,
            w,
            stride,
            padding,
            groups,
        } => {
            let sx = &nodes[x].shape;
            let sw = &nodes[w].shape;
            let geo = ConvGeometry {
                n: sx[0],
                cin: sx[1],
                len: sx[2],
                cout: sw[0],
                k: sw[2],
                lout: node.shape[2],
                stride,
                padding,
                groups,
            };
            let xd = nodes[x].data.clone();
            let wd = nodes[w].data.clone();
            let mut dx = ng(x).then(|| grads[x].take().unwrap_or_else(|| vec![T::zero(); xd.len()]));
            let mut dw = ng(w).then(|| grads[w].take().unwrap_or_else(|| vec![T::zero(); wd.len()]));
            geo.backward(&xd, &wd, grad, dx.as_mut(), dw.as_mut());
            if let Some(dx) = dx {
                grads[x] = Some(dx);
            }
            if let Some(dw) = dw {
                grads[w] = Some(dw);
            }
        }
        &Op::AvgPool1d { a, kernel, stride } => {
            if ng(a) {
                let len = *nodes[a].shape.last().unwrap();
                let lout = *node.shape.last().unwrap();
                let rows = nodes[a].data.len() / len;
                let inv = T::one() / T::of(kernel as f64);
                let dst = grad_buf(grads, a, rows * len);
                for r in 0..rows {
                    for t in 0..lout {
                        let g = grad[r * lout + t] * inv;
                        for d in &mut dst[r * len + t * stride..r * len + t * stride + kernel] {
                            *d += g;
                        }
                    }
                }
            }
        }
        Op::Dropout { a, mask } => {
            if ng(*a) {
                let scaled: Vec<T> = grad.iter().zip(mask).map(|(&g, &m)| g * m).collect();
                accumulate(grads, *a, &scaled);
            }
        }
        Op::GatherRows { a, indices } => {
            if ng(*a) {
                let rows = nodes[*a].shape[0];
                let total = nodes[*a].data.len();
                let width = if rows == 0 { 0 } else { total / rows };
                let dst = grad_buf(grads, *a, total);
                for (r, &i) in indices.iter().enumerate() {
                    let src = &grad[r * width..(r + 1) * width];
                    for (d, &s) in dst[i * width..(i + 1) * width].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
        Op::MaskedSoftmax { a, mask, axis } => {
            if ng(*a) {
                let y = &node.data;
                let (outer, len, inner) = split_axis(&node.shape, *axis);
                let dst = grad_buf(grads, *a, y.len());
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let dot: T = (0..len).map(|l| grad[idx(l)] * y[idx(l)]).sum();
                        for l in 0..len {
                            if mask[idx(l)] {
                                dst[idx(l)] += y[idx(l)] * (grad[idx(l)] - dot);
                            }
                        }
                    }
                }
            }
        }
        &Op::Reshape { a } => {
            if ng(a) {
                accumulate(grads, a, grad);
            }
        }
        Op::Focal {
            logits,
            targets,
            mask,
            gamma,
        } => {
            if ng(*logits) {
                let z = &nodes[*logits].data;
                let c = nodes[*logits].shape[1];
                let dst = grad_buf(grads, *logits, z.len());
                for (r, (&t, &keep)) in targets.iter().zip(mask).enumerate() {
                    if !keep {
                        continue;
                    }
                    let row = &z[r * c..(r + 1) * c];
                    let stats = FocalRow::new(row, t, *gamma);
                    let g = grad[r] * stats.coef;
                    for (cls, (&zc, d)) in row.iter().zip(&mut dst[r * c..(r + 1) * c]).enumerate() {
                        let pc = if cls == t { stats.p } else { (zc - stats.lse).exp() };
                        let delta = if cls == t { T::one() } else { T::zero() };
                        *d += g * (delta - pc);
                    }
                }
            }
        }
    }
}

impl<T: Float> Tape<T> {
    /// Convenience: leaf from raw values.
    pub fn values(&self, shape: &[usize], values: Vec<T>, requires_grad: bool) -> Result<Var<'_, T>> {
        let t = crate::Tensor::new(shape.to_vec(), values)?;
        Ok(self.leaf(t, requires_grad))
    }
}
