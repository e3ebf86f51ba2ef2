//! Forward implementations and pullbacks for the tensor op suite.
//!
//! Conventions: matrices are rank-2 row-major; elementwise ops require
//! identical shapes; rank/shape adaptation is always explicit (`reshape`,
//! `repeat_row`). Axis reductions and softmax use compensated summation so
//! results are stable against reordering of the reduced lane.

use super::{stable_sum, Tape, Tensor, TensorError};

/// Variance regularizer inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-major GEMM with explicit strides; `beta = 1` accumulates into `c`.
#[allow(clippy::too_many_arguments)]
fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
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
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn shape_err(op: &'static str, details: String) -> TensorError {
    TensorError::ShapeMismatch { op, details }
}

/// (product of extents before `axis`, extent of `axis`, product after).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

impl Tensor {
    fn check_same_shape(&self, rhs: &Tensor, op: &'static str) -> Result<(), TensorError> {
        if self.shape() != rhs.shape() {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(), rhs.shape()),
            ));
        }
        Ok(())
    }

    fn check_axis(&self, axis: usize, op: &'static str) -> Result<(), TensorError> {
        if axis >= self.rank() {
            return Err(TensorError::AxisOutOfRange {
                op,
                axis,
                rank: self.rank(),
            });
        }
        if self.shape()[axis] == 0 {
            return Err(TensorError::EmptyAxis { op });
        }
        Ok(())
    }

    fn unary_elementwise(
        &self,
        values: Vec<f64>,
        // (input value, output value, upstream grad) -> input grad contribution
        dfn: impl Fn(f64, f64, f64) -> f64 + 'static,
    ) -> Result<Tensor, TensorError> {
        let tape = Tensor::joint_tape(&[self])?;
        let out = Tensor::from_op(tape.clone(), self.shape().to_vec(), values);
        if let Some(tape) = tape {
            let x = self.clone();
            let o = out.clone();
            tape.record(&out, move |g| {
                if x.has_graph() {
                    let gx: Vec<f64> = x
                        .values()
                        .iter()
                        .zip(o.values())
                        .zip(g)
                        .map(|((&xv, &ov), &gv)| dfn(xv, ov, gv))
                        .collect();
                    x.accumulate_grad(&gx);
                }
            });
        }
        Ok(out)
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        self.check_same_shape(rhs, "add")?;
        let values = self
            .values()
            .iter()
            .zip(rhs.values())
            .map(|(a, b)| a + b)
            .collect();
        let tape = Tensor::joint_tape(&[self, rhs])?;
        let out = Tensor::from_op(tape.clone(), self.shape().to_vec(), values);
        if let Some(tape) = tape {
            let (a, b) = (self.clone(), rhs.clone());
            tape.record(&out, move |g| {
                if a.has_graph() {
                    a.accumulate_grad(g);
                }
                if b.has_graph() {
                    b.accumulate_grad(g);
                }
            });
        }
        Ok(out)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        self.check_same_shape(rhs, "sub")?;
        let values = self
            .values()
            .iter()
            .zip(rhs.values())
            .map(|(a, b)| a - b)
            .collect();
        let tape = Tensor::joint_tape(&[self, rhs])?;
        let out = Tensor::from_op(tape.clone(), self.shape().to_vec(), values);
        if let Some(tape) = tape {
            let (a, b) = (self.clone(), rhs.clone());
            tape.record(&out, move |g| {
                if a.has_graph() {
                    a.accumulate_grad(g);
                }
                if b.has_graph() {
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    b.accumulate_grad(&neg);
                }
            });
        }
        Ok(out)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        self.check_same_shape(rhs, "mul")?;
        let values = self
            .values()
            .iter()
            .zip(rhs.values())
            .map(|(a, b)| a * b)
            .collect();
        let tape = Tensor::joint_tape(&[self, rhs])?;
        let out = Tensor::from_op(tape.clone(), self.shape().to_vec(), values);
        if let Some(tape) = tape {
            let (a, b) = (self.clone(), rhs.clone());
            tape.record(&out, move |g| {
                if a.has_graph() {
                    let ga: Vec<f64> = g.iter().zip(b.values()).map(|(g, b)| g * b).collect();
                    a.accumulate_grad(&ga);
                }
                if b.has_graph() {
                    let gb: Vec<f64> = g.iter().zip(a.values()).map(|(g, a)| g * a).collect();
                    b.accumulate_grad(&gb);
                }
            });
        }
        Ok(out)
    }

    /// Multiplication by a compile-time constant factor.
    pub fn scale(&self, factor: f64) -> Result<Tensor, TensorError> {
        self.unary_elementwise(
            self.values().iter().map(|v| v * factor).collect(),
            move |_, _, g| g * factor,
        )
    }

    pub fn neg(&self) -> Result<Tensor, TensorError> {
        self.scale(-1.0)
    }

    pub fn relu(&self) -> Result<Tensor, TensorError> {
        self.unary_elementwise(
            self.values().iter().map(|v| v.max(0.0)).collect(),
            |x, _, g| if x > 0.0 { g } else { 0.0 },
        )
    }

    pub fn sigmoid(&self) -> Result<Tensor, TensorError> {
        self.unary_elementwise(
            self.values().iter().map(|&v| stable_sigmoid(v)).collect(),
            |_, o, g| g * o * (1.0 - o),
        )
    }

    pub fn exp(&self) -> Result<Tensor, TensorError> {
        self.unary_elementwise(
            self.values().iter().map(|v| v.exp()).collect(),
            |_, o, g| g * o,
        )
    }

    pub fn log(&self) -> Result<Tensor, TensorError> {
        self.unary_elementwise(
            self.values().iter().map(|v| v.ln()).collect(),
            |x, _, g| g / x,
        )
    }

    pub fn sqrt(&self) -> Result<Tensor, TensorError> {
        self.unary_elementwise(
            self.values().iter().map(|v| v.sqrt()).collect(),
            |_, o, g| g * 0.5 / o,
        )
    }

    /// Clamps values to [lo, hi]; gradient passes only for values already
    /// inside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor, TensorError> {
        self.unary_elementwise(
            self.values().iter().map(|v| v.clamp(lo, hi)).collect(),
            move |x, _, g| if (lo..=hi).contains(&x) { g } else { 0.0 },
        )
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        self.matmul_impl(rhs, false)
    }

    /// Matrix product with compensated accumulation over the inner axis.
    /// Slower than [`Tensor::matmul`]; used where results must be stable
    /// against permutations of the inner axis (attention value mixing).
    pub fn matmul_stable(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        self.matmul_impl(rhs, true)
    }

    fn matmul_impl(&self, rhs: &Tensor, stable: bool) -> Result<Tensor, TensorError> {
        if self.rank() != 2 || rhs.rank() != 2 || self.shape()[1] != rhs.shape()[0] {
            return Err(shape_err(
                "matmul",
                format!("{:?} · {:?}", self.shape(), rhs.shape()),
            ));
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let n = rhs.shape()[1];
        let mut values = vec![0.0; m * n];
        if stable {
            let a = self.values();
            let b = rhs.values();
            for i in 0..m {
                for j in 0..n {
                    values[i * n + j] =
                        stable_sum((0..k).map(|t| a[i * k + t] * b[t * n + j]));
                }
            }
        } else {
            gemm_strided(
                m,
                k,
                n,
                self.values(),
                k as isize,
                1,
                rhs.values(),
                n as isize,
                1,
                0.0,
                &mut values,
            );
        }
        let tape = Tensor::joint_tape(&[self, rhs])?;
        let out = Tensor::from_op(tape.clone(), vec![m, n], values);
        if let Some(tape) = tape {
            let (a, b) = (self.clone(), rhs.clone());
            tape.record(&out, move |g| {
                if a.has_graph() {
                    // dA = G · B^T
                    a.accumulate_grad_with(|ga| {
                        gemm_strided(m, n, k, g, n as isize, 1, b.values(), 1, n as isize, 1.0, ga);
                    });
                }
                if b.has_graph() {
                    // dB = A^T · G
                    b.accumulate_grad_with(|gb| {
                        gemm_strided(k, m, n, a.values(), 1, k as isize, g, n as isize, 1, 1.0, gb);
                    });
                }
            });
        }
        Ok(out)
    }

    /// Rank-2 transpose (materialized).
    pub fn transpose(&self) -> Result<Tensor, TensorError> {
        if self.rank() != 2 {
            return Err(shape_err("transpose", format!("{:?}", self.shape())));
        }
        let (m, n) = (self.shape()[0], self.shape()[1]);
        let src = self.values();
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                values[j * m + i] = src[i * n + j];
            }
        }
        let tape = Tensor::joint_tape(&[self])?;
        let out = Tensor::from_op(tape.clone(), vec![n, m], values);
        if let Some(tape) = tape {
            let a = self.clone();
            tape.record(&out, move |g| {
                if a.has_graph() {
                    let mut ga = vec![0.0; m * n];
                    for i in 0..n {
                        for j in 0..m {
                            ga[j * n + i] = g[i * m + j];
                        }
                    }
                    a.accumulate_grad(&ga);
                }
            });
        }
        Ok(out)
    }

    /// Concatenation along the last axis; all leading extents must agree.
    pub fn concat(parts: &[&Tensor]) -> Result<Tensor, TensorError> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no inputs".into()));
        }
        let rank = parts[0].rank();
        if rank == 0 {
            return Err(shape_err("concat", "rank-0 inputs".into()));
        }
        let lead = &parts[0].shape()[..rank - 1];
        for p in parts {
            if p.rank() != rank || &p.shape()[..rank - 1] != lead {
                return Err(shape_err(
                    "concat",
                    format!("{:?} vs {:?}", parts[0].shape(), p.shape()),
                ));
            }
        }
        let lanes: usize = lead.iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[rank - 1]).collect();
        let total: usize = widths.iter().sum();
        let mut shape = lead.to_vec();
        shape.push(total);
        let mut values = vec![0.0; lanes * total];
        let mut offset = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let src = p.values();
            for lane in 0..lanes {
                values[lane * total + offset..lane * total + offset + w]
                    .copy_from_slice(&src[lane * w..(lane + 1) * w]);
            }
            offset += w;
        }
        let tape = Tensor::joint_tape(parts)?;
        let out = Tensor::from_op(tape.clone(), shape, values);
        if let Some(tape) = tape {
            let owned: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
            tape.record(&out, move |g| {
                let mut offset = 0;
                for (p, &w) in owned.iter().zip(&widths) {
                    if p.has_graph() {
                        let mut gp = vec![0.0; lanes * w];
                        for lane in 0..lanes {
                            gp[lane * w..(lane + 1) * w].copy_from_slice(
                                &g[lane * total + offset..lane * total + offset + w],
                            );
                        }
                        p.accumulate_grad(&gp);
                    }
                    offset += w;
                }
            });
        }
        Ok(out)
    }

    /// Inverse of [`Tensor::concat`]: splits the last axis into pieces of the
    /// given widths.
    pub fn split_last(&self, widths: &[usize]) -> Result<Vec<Tensor>, TensorError> {
        if self.rank() == 0 {
            return Err(shape_err("split_last", "rank-0 input".into()));
        }
        let rank = self.rank();
        let total = self.shape()[rank - 1];
        if widths.iter().sum::<usize>() != total {
            return Err(shape_err(
                "split_last",
                format!("widths {widths:?} do not sum to {total}"),
            ));
        }
        let lanes: usize = self.shape()[..rank - 1].iter().product();
        let tape = Tensor::joint_tape(&[self])?;
        let mut outs = Vec::with_capacity(widths.len());
        let mut offset = 0;
        for &w in widths {
            let mut values = vec![0.0; lanes * w];
            for lane in 0..lanes {
                values[lane * w..(lane + 1) * w]
                    .copy_from_slice(&self.values()[lane * total + offset..lane * total + offset + w]);
            }
            let mut shape = self.shape()[..rank - 1].to_vec();
            shape.push(w);
            let out = Tensor::from_op(tape.clone(), shape, values);
            if let Some(tape) = &tape {
                let x = self.clone();
                let off = offset;
                tape.record(&out, move |g| {
                    if x.has_graph() {
                        let mut gx = vec![0.0; x.len()];
                        for lane in 0..lanes {
                            gx[lane * total + off..lane * total + off + w]
                                .copy_from_slice(&g[lane * w..(lane + 1) * w]);
                        }
                        x.accumulate_grad(&gx);
                    }
                });
            }
            outs.push(out);
            offset += w;
        }
        Ok(outs)
    }

    /// Mean along `axis` (the axis is removed from the shape).
    pub fn mean(&self, axis: usize) -> Result<Tensor, TensorError> {
        self.check_axis(axis, "mean")?;
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let mut values = vec![0.0; outer * inner];
        let src = self.values();
        for o in 0..outer {
            for i in 0..inner {
                values[o * inner + i] = stable_sum(
                    (0..len).map(|j| src[o * len * inner + j * inner + i]),
                ) / len as f64;
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        let tape = Tensor::joint_tape(&[self])?;
        let out = Tensor::from_op(tape.clone(), shape, values);
        if let Some(tape) = tape {
            let x = self.clone();
            tape.record(&out, move |g| {
                if x.has_graph() {
                    let mut gx = vec![0.0; x.len()];
                    let inv = 1.0 / len as f64;
                    for o in 0..outer {
                        for i in 0..inner {
                            let gv = g[o * inner + i] * inv;
                            for j in 0..len {
                                gx[o * len * inner + j * inner + i] = gv;
                            }
                        }
                    }
                    x.accumulate_grad(&gx);
                }
            });
        }
        Ok(out)
    }

    /// Max along `axis` (the axis is removed); ties route the gradient to the
    /// lowest index.
    pub fn max(&self, axis: usize) -> Result<Tensor, TensorError> {
        self.check_axis(axis, "max")?;
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let src = self.values();
        let mut values = vec![0.0; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = f64::NEG_INFINITY;
                let mut best_j = 0;
                for j in 0..len {
                    let v = src[o * len * inner + j * inner + i];
                    if v > best {
                        best = v;
                        best_j = j;
                    }
                }
                values[o * inner + i] = best;
                arg[o * inner + i] = best_j;
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        let tape = Tensor::joint_tape(&[self])?;
        let out = Tensor::from_op(tape.clone(), shape, values);
        if let Some(tape) = tape {
            let x = self.clone();
            tape.record(&out, move |g| {
                if x.has_graph() {
                    let mut gx = vec![0.0; x.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let j = arg[o * inner + i];
                            gx[o * len * inner + j * inner + i] = g[o * inner + i];
                        }
                    }
                    x.accumulate_grad(&gx);
                }
            });
        }
        Ok(out)
    }

    /// Full reduction to a rank-0 scalar.
    pub fn sum(&self) -> Result<Tensor, TensorError> {
        let total = stable_sum(self.values().iter().copied());
        let tape = Tensor::joint_tape(&[self])?;
        let out = Tensor::from_op(tape.clone(), vec![], vec![total]);
        if let Some(tape) = tape {
            let x = self.clone();
            tape.record(&out, move |g| {
                if x.has_graph() {
                    x.accumulate_grad(&vec![g[0]; x.len()]);
                }
            });
        }
        Ok(out)
    }

    /// Numerically stable softmax along `axis` (max subtraction plus
    /// compensated denominator).
    pub fn softmax(&self, axis: usize) -> Result<Tensor, TensorError> {
        self.check_axis(axis, "softmax")?;
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let src = self.values();
        let mut values = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let m = (0..len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let denom = stable_sum((0..len).map(|j| (src[at(j)] - m).exp()));
                for j in 0..len {
                    values[at(j)] = (src[at(j)] - m).exp() / denom;
                }
            }
        }
        let tape = Tensor::joint_tape(&[self])?;
        let out = Tensor::from_op(tape.clone(), self.shape().to_vec(), values);
        if let Some(tape) = tape {
            let x = self.clone();
            let o_t = out.clone();
            tape.record(&out, move |g| {
                if x.has_graph() {
                    let s = o_t.values();
                    let mut gx = vec![0.0; x.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * len * inner + j * inner + i;
                            let dot = stable_sum((0..len).map(|j| g[at(j)] * s[at(j)]));
                            for j in 0..len {
                                gx[at(j)] = s[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                    x.accumulate_grad(&gx);
                }
            });
        }
        Ok(out)
    }

    /// Layer normalization over the last axis with learnable scale and shift
    /// (both rank-1 of the last-axis width). Variance is regularized by
    /// [`LAYER_NORM_EPS`].
    pub fn layer_norm(&self, scale: &Tensor, shift: &Tensor) -> Result<Tensor, TensorError> {
        if self.rank() == 0 {
            return Err(shape_err("layer_norm", "rank-0 input".into()));
        }
        let d = self.shape()[self.rank() - 1];
        if d == 0 {
            return Err(TensorError::EmptyAxis { op: "layer_norm" });
        }
        if scale.shape() != [d] || shift.shape() != [d] {
            return Err(shape_err(
                "layer_norm",
                format!(
                    "scale {:?} / shift {:?} for width {d}",
                    scale.shape(),
                    shift.shape()
                ),
            ));
        }
        let lanes = self.len() / d;
        let src = self.values();
        let sc = scale.values();
        let sh = shift.values();
        let mut values = vec![0.0; src.len()];
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; lanes];
        for lane in 0..lanes {
            let row = &src[lane * d..(lane + 1) * d];
            let mean = stable_sum(row.iter().copied()) / d as f64;
            let var = stable_sum(row.iter().map(|v| (v - mean) * (v - mean))) / d as f64;
            let istd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[lane] = istd;
            for j in 0..d {
                let xh = (row[j] - mean) * istd;
                xhat[lane * d + j] = xh;
                values[lane * d + j] = sc[j] * xh + sh[j];
            }
        }
        let tape = Tensor::joint_tape(&[self, scale, shift])?;
        let out = Tensor::from_op(tape.clone(), self.shape().to_vec(), values);
        if let Some(tape) = tape {
            let x = self.clone();
            let scale_t = scale.clone();
            let shift_t = shift.clone();
            tape.record(&out, move |g| {
                let sc = scale_t.values();
                if x.has_graph() {
                    let mut gx = vec![0.0; x.len()];
                    for lane in 0..lanes {
                        let istd = inv_std[lane];
                        let xh = &xhat[lane * d..(lane + 1) * d];
                        let gl = &g[lane * d..(lane + 1) * d];
                        // dxhat = g ∘ scale; project out mean and xhat components
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xh = 0.0;
                        for j in 0..d {
                            let dxh = gl[j] * sc[j];
                            sum_dxhat += dxh;
                            sum_dxhat_xh += dxh * xh[j];
                        }
                        let inv_d = 1.0 / d as f64;
                        for j in 0..d {
                            let dxh = gl[j] * sc[j];
                            gx[lane * d + j] = istd
                                * (dxh - inv_d * sum_dxhat - xh[j] * inv_d * sum_dxhat_xh);
                        }
                    }
                    x.accumulate_grad(&gx);
                }
                if scale_t.has_graph() {
                    let mut gs = vec![0.0; d];
                    for lane in 0..lanes {
                        for j in 0..d {
                            gs[j] += g[lane * d + j] * xhat[lane * d + j];
                        }
                    }
                    scale_t.accumulate_grad(&gs);
                }
                if shift_t.has_graph() {
                    let mut gb = vec![0.0; d];
                    for lane in 0..lanes {
                        for j in 0..d {
                            gb[j] += g[lane * d + j];
                        }
                    }
                    shift_t.accumulate_grad(&gb);
                }
            });
        }
        Ok(out)
    }

    /// Gathers whole rows of a rank-2 tensor: `out[r] = self[idx[r]]`.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor, TensorError> {
        if self.rank() != 2 {
            return Err(shape_err("gather_rows", format!("{:?}", self.shape())));
        }
        let (n, d) = (self.shape()[0], self.shape()[1]);
        for &i in idx {
            if i >= n {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    bound: n,
                });
            }
        }
        let src = self.values();
        let mut values = vec![0.0; idx.len() * d];
        for (r, &i) in idx.iter().enumerate() {
            values[r * d..(r + 1) * d].copy_from_slice(&src[i * d..(i + 1) * d]);
        }
        let tape = Tensor::joint_tape(&[self])?;
        let out = Tensor::from_op(tape.clone(), vec![idx.len(), d], values);
        if let Some(tape) = tape {
            let x = self.clone();
            let idx = idx.to_vec();
            tape.record(&out, move |g| {
                if x.has_graph() {
                    let mut gx = vec![0.0; x.len()];
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..d {
                            gx[i * d + j] += g[r * d + j];
                        }
                    }
                    x.accumulate_grad(&gx);
                }
            });
        }
        Ok(out)
    }

    /// Picks one column per row of a rank-2 tensor: `out[i] = self[i, cols[i]]`.
    pub fn row_select(&self, cols: &[usize]) -> Result<Tensor, TensorError> {
        if self.rank() != 2 {
            return Err(shape_err("row_select", format!("{:?}", self.shape())));
        }
        let (n, m) = (self.shape()[0], self.shape()[1]);
        if cols.len() != n {
            return Err(shape_err(
                "row_select",
                format!("{} selectors for {n} rows", cols.len()),
            ));
        }
        for &c in cols {
            if c >= m {
                return Err(TensorError::IndexOutOfRange {
                    op: "row_select",
                    index: c,
                    bound: m,
                });
            }
        }
        let src = self.values();
        let values: Vec<f64> = cols.iter().enumerate().map(|(i, &c)| src[i * m + c]).collect();
        let tape = Tensor::joint_tape(&[self])?;
        let out = Tensor::from_op(tape.clone(), vec![n], values);
        if let Some(tape) = tape {
            let x = self.clone();
            let cols = cols.to_vec();
            tape.record(&out, move |g| {
                if x.has_graph() {
                    let mut gx = vec![0.0; x.len()];
                    for (i, &c) in cols.iter().enumerate() {
                        gx[i * m + c] = g[i];
                    }
                    x.accumulate_grad(&gx);
                }
            });
        }
        Ok(out)
    }

    /// Explicitly tiles a rank-1 tensor into `n` identical rows.
    pub fn repeat_row(&self, n: usize) -> Result<Tensor, TensorError> {
        if self.rank() != 1 {
            return Err(shape_err("repeat_row", format!("{:?}", self.shape())));
        }
        let d = self.shape()[0];
        let mut values = Vec::with_capacity(n * d);
        for _ in 0..n {
            values.extend_from_slice(self.values());
        }
        let tape = Tensor::joint_tape(&[self])?;
        let out = Tensor::from_op(tape.clone(), vec![n, d], values);
        if let Some(tape) = tape {
            let x = self.clone();
            tape.record(&out, move |g| {
                if x.has_graph() {
                    let mut gx = vec![0.0; d];
                    for r in 0..n {
                        for j in 0..d {
                            gx[j] += g[r * d + j];
                        }
                    }
                    x.accumulate_grad(&gx);
                }
            });
        }
        Ok(out)
    }

    /// Reinterprets the value buffer under a new shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor, TensorError> {
        let count: usize = shape.iter().product();
        if count != self.len() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {:?}", self.shape(), shape),
            ));
        }
        let tape = Tensor::joint_tape(&[self])?;
        let out = Tensor::from_op(tape.clone(), shape.to_vec(), self.values().to_vec());
        if let Some(tape) = tape {
            let x = self.clone();
            tape.record(&out, move |g| {
                if x.has_graph() {
                    x.accumulate_grad(g);
                }
            });
        }
        Ok(out)
    }

    fn accumulate_grad_with(&self, f: impl FnOnce(&mut [f64])) {
        let mut slot = self.data.grad.borrow_mut();
        let buf = slot.get_or_insert_with(|| vec![0.0; self.len()]);
        f(buf);
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Records an operation with a custom forward value and pullback. Used by
/// composite ops (weighted Procrustes) whose Jacobian is supplied manually.
/// The pullback maps (upstream grad, inputs) to one optional gradient per
/// input; `None` skips that input.
pub(crate) fn custom_op(
    inputs: &[&Tensor],
    shape: Vec<usize>,
    values: Vec<f64>,
    pull: impl Fn(&[f64], &[Tensor]) -> Vec<Option<Vec<f64>>> + 'static,
) -> Result<Tensor, TensorError> {
    let tape = Tensor::joint_tape(inputs)?;
    let out = Tensor::from_op(tape.clone(), shape, values);
    if let Some(tape) = tape {
        let owned: Vec<Tensor> = inputs.iter().map(|t| (*t).clone()).collect();
        tape.record(&out, move |g| {
            let grads = pull(g, &owned);
            debug_assert_eq!(grads.len(), owned.len());
            for (input, grad) in owned.iter().zip(grads) {
                if let Some(grad) = grad {
                    if input.has_graph() {
                        input.accumulate_grad(&grad);
                    }
                }
            }
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randvec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let t = Tensor::constant(&[2], vec![0.0, 0.0]);
        let s = t.softmax(0).unwrap();
        assert_eq!(s.values(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_are_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = Tensor::constant(&[6, 9], randvec(54, &mut rng).iter().map(|v| v * 50.0).collect());
        let s = t.softmax(1).unwrap();
        for row in 0..6 {
            let vals = &s.values()[row * 9..(row + 1) * 9];
            let sum: f64 = vals.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(vals.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let x = Tensor::constant(&[3], vec![1.0, 1.0, 1.0]);
        let scale = Tensor::constant(&[3], vec![1.0; 3]);
        let shift = Tensor::constant(&[3], vec![0.0; 3]);
        let out = x.layer_norm(&scale, &shift).unwrap();
        assert_eq!(out.values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Tensor::constant(&[2, 3], randvec(6, &mut rng));
        let b = Tensor::constant(&[3, 2], randvec(6, &mut rng));
        let c = a.matmul(&b).unwrap();
        let cs = a.matmul_stable(&b).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0;
                for t in 0..3 {
                    acc += a.values()[i * 3 + t] * b.values()[t * 2 + j];
                }
                assert!((c.values()[i * 2 + j] - acc).abs() < 1e-12);
                assert!((cs.values()[i * 2 + j] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn concat_then_split_is_bitwise_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::constant(&[4, 2], randvec(8, &mut rng));
        let b = Tensor::constant(&[4, 5], randvec(20, &mut rng));
        let c = Tensor::constant(&[4, 1], randvec(4, &mut rng));
        let cat = Tensor::concat(&[&a, &b, &c]).unwrap();
        assert_eq!(cat.shape(), &[4, 8]);
        let parts = cat.split_last(&[2, 5, 1]).unwrap();
        assert_eq!(parts[0].values(), a.values());
        assert_eq!(parts[1].values(), b.values());
        assert_eq!(parts[2].values(), c.values());
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let a = Tensor::constant(&[2, 2], vec![0.0; 4]);
        let b = Tensor::constant(&[2, 3], vec![0.0; 6]);
        assert!(a.add(&b).is_err());
        assert!(a.mul(&b).is_err());
        assert!(b.matmul(&b).is_err());
        assert!(a.reshape(&[5]).is_err());
        assert!(a.softmax(2).is_err());
    }

    #[test]
    fn gather_and_select_bounds_are_checked() {
        let a = Tensor::constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(
            a.gather_rows(&[2]),
            Err(TensorError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            a.row_select(&[0, 2]),
            Err(TensorError::IndexOutOfRange { .. })
        ));
        assert_eq!(a.row_select(&[1, 0]).unwrap().values(), &[2.0, 3.0]);
    }

    #[test]
    fn max_routes_gradient_to_first_argmax() {
        let tape = Tape::new();
        let x = Tensor::leaf(&tape, &[4], vec![1.0, 3.0, 3.0, 2.0]);
        let y = x.max(0).unwrap();
        assert_eq!(y.item(), 3.0);
        let z = y.sum().unwrap();
        tape.backward(&z).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
    }

    /// Central-difference check of every op's vector-Jacobian product on
    /// random shapes up to 8×8×8.
    #[test]
    fn op_suite_vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        type Builder = fn(&Tensor, &Tensor) -> Tensor;
        // Each case maps two tensors (second sometimes ignored) to a scalar.
        let cases: Vec<(&str, Vec<usize>, Vec<usize>, Builder)> = vec![
            ("add-mul", vec![5, 7], vec![5, 7], |a, b| {
                a.add(b).unwrap().mul(a).unwrap().sum().unwrap()
            }),
            ("sub-scale", vec![8, 8, 8], vec![8, 8, 8], |a, b| {
                a.sub(b).unwrap().scale(1.7).unwrap().sum().unwrap()
            }),
            ("matmul", vec![4, 6], vec![6, 3], |a, b| {
                a.matmul(b).unwrap().sum().unwrap()
            }),
            ("matmul-stable", vec![3, 5], vec![5, 4], |a, b| {
                a.matmul_stable(b).unwrap().mul(&a.matmul(b).unwrap()).unwrap().sum().unwrap()
            }),
            ("relu", vec![6, 6], vec![6, 6], |a, b| {
                a.relu().unwrap().mul(b).unwrap().sum().unwrap()
            }),
            ("sigmoid-exp", vec![4, 4, 4], vec![4, 4, 4], |a, b| {
                a.sigmoid().unwrap().mul(&b.exp().unwrap()).unwrap().sum().unwrap()
            }),
            ("log-sqrt", vec![5], vec![5], |a, b| {
                // keep inputs strictly positive via sigmoid first
                let pa = a.sigmoid().unwrap();
                let pb = b.sigmoid().unwrap();
                pa.log().unwrap().mul(&pb.sqrt().unwrap()).unwrap().sum().unwrap()
            }),
            ("softmax0", vec![7, 3], vec![7, 3], |a, b| {
                a.softmax(0).unwrap().mul(b).unwrap().sum().unwrap()
            }),
            ("softmax-mid", vec![4, 5, 3], vec![4, 5, 3], |a, b| {
                a.softmax(1).unwrap().mul(b).unwrap().sum().unwrap()
            }),
            ("mean-max", vec![6, 4], vec![4], |a, b| {
                a.mean(0)
                    .unwrap()
                    .mul(b)
                    .unwrap()
                    .add(&a.max(0).unwrap())
                    .unwrap()
                    .sum()
                    .unwrap()
            }),
            ("transpose", vec![3, 5], vec![5, 3], |a, b| {
                a.transpose().unwrap().mul(b).unwrap().sum().unwrap()
            }),
            ("concat", vec![4, 3], vec![4, 2], |a, b| {
                Tensor::concat(&[&a.clone(), &b.clone()]).unwrap().softmax(1).unwrap().sum().unwrap()
            }),
            ("gather", vec![5, 4], vec![3, 4], |a, b| {
                a.gather_rows(&[4, 0, 2]).unwrap().mul(b).unwrap().sum().unwrap()
            }),
            ("row-select", vec![4, 3], vec![4, 3], |a, b| {
                a.row_select(&[2, 0, 1, 1])
                    .unwrap()
                    .mul(&b.row_select(&[0, 1, 2, 0]).unwrap())
                    .unwrap()
                    .sum()
                    .unwrap()
            }),
            ("repeat-row", vec![6], vec![3, 6], |a, b| {
                a.repeat_row(3).unwrap().mul(b).unwrap().sum().unwrap()
            }),
            ("reshape-clamp", vec![2, 6], vec![12], |a, b| {
                a.reshape(&[12])
                    .unwrap()
                    .clamp(-0.75, 0.75)
                    .unwrap()
                    .mul(b)
                    .unwrap()
                    .sum()
                    .unwrap()
            }),
            ("layer-norm", vec![5, 6], vec![5, 6], |a, b| {
                let sc = Tensor::constant(&[6], vec![1.3, 0.7, 1.0, -0.4, 0.9, 1.1]);
                let sh = Tensor::constant(&[6], vec![0.1, -0.2, 0.0, 0.3, -0.1, 0.2]);
                a.layer_norm(&sc, &sh).unwrap().mul(b).unwrap().sum().unwrap()
            }),
        ];

        for (name, sa, sb, f) in cases {
            let na: usize = sa.iter().product();
            let nb: usize = sb.iter().product();
            let va = randvec(na, &mut rng);
            let vb = randvec(nb, &mut rng);

            let tape = Tape::new();
            let a = Tensor::leaf(&tape, &sa, va.clone());
            let b = Tensor::leaf(&tape, &sb, vb.clone());
            let loss = f(&a, &b);
            tape.backward(&loss).unwrap();
            let ga = a.grad().unwrap_or_else(|| vec![0.0; na]);
            let gb = b.grad().unwrap_or_else(|| vec![0.0; nb]);

            let eval = |va: &[f64], vb: &[f64]| -> f64 {
                let a = Tensor::constant(&sa, va.to_vec());
                let b = Tensor::constant(&sb, vb.to_vec());
                f(&a, &b).item()
            };
            let step = 1e-6;
            let mut worst: f64 = 0.0;
            for i in 0..na {
                let mut plus = va.clone();
                let mut minus = va.clone();
                plus[i] += step;
                minus[i] -= step;
                let fd = (eval(&plus, &vb) - eval(&minus, &vb)) / (2.0 * step);
                let rel = (ga[i] - fd).abs() / (ga[i].abs() + fd.abs() + 1e-12);
                worst = worst.max(rel);
            }
            for i in 0..nb {
                let mut plus = vb.clone();
                let mut minus = vb.clone();
                plus[i] += step;
                minus[i] -= step;
                let fd = (eval(&va, &plus) - eval(&va, &minus)) / (2.0 * step);
                let rel = (gb[i] - fd).abs() / (gb[i].abs() + fd.abs() + 1e-12);
                worst = worst.max(rel);
            }
            assert!(worst < 1e-4, "{name}: max relative error {worst}");
        }
    }
}
