//! Forward definitions and vector-Jacobian products for every primitive.

use alloc::vec;
use alloc::vec::Vec;

use super::tape::{Op, Tape, Var};
use super::tensor::{matmul_nt_raw, matmul_raw, matmul_tn_raw, Tensor};
use crate::error::{dim_err, Error, Result};

/// Added under the square root of every L2 norm so zero vectors stay finite.
pub const NORM_EPS: f64 = 1e-12;

/// Batch statistics measured by a train-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (1/B) variance, the one used for standardization.
    pub var: Vec<f64>,
    pub batch: usize,
}

/// Splits `shape` around `axis` into `(outer, len, inner)`.
fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(dim_err!("axis {} out of range for shape {:?}", axis, shape));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err!(
            "{}: shapes {:?} and {:?} differ",
            op,
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + libm::exp(-v))
    } else {
        let e = libm::exp(v);
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(dim_err!("matmul: inner dims {} and {} differ", k, k2));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "add")?;
        let va = self.value(a);
        let data = va.data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push(t, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "sub")?;
        let va = self.value(a);
        let data = va.data().iter().zip(self.value(b).data()).map(|(x, y)| x - y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push(t, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "mul")?;
        let va = self.value(a);
        let data = va.data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        self.push(t, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let vx = self.value(x);
        let data = vx.data().iter().map(|v| v * factor).collect();
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        self.push(t, Op::Scale(x, factor), "scale")
    }

    /// Adds a length-`cols` bias to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let vx = self.value(x);
        let cols = vx.cols();
        let vb = self.value(bias);
        if vb.numel() != cols {
            return Err(dim_err!("add_bias: {} columns, bias of {}", cols, vb.numel()));
        }
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(cols.max(1)) {
            row.iter_mut().zip(vb.data()).for_each(|(v, b)| *v += b);
        }
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        self.push(t, Op::AddBias(x, bias), "add_bias")
    }

    /// Multiplies row `r` of `x` by `scales[r]`.
    pub fn scale_rows(&mut self, x: Var, scales: Var) -> Result<Var> {
        let vx = self.value(x);
        let (rows, cols) = (vx.rows(), vx.cols());
        let vs = self.value(scales);
        if vs.numel() != rows {
            return Err(dim_err!("scale_rows: {} rows, {} scales", rows, vs.numel()));
        }
        let mut data = vx.data().to_vec();
        for (row, s) in data.chunks_mut(cols.max(1)).zip(vs.data()) {
            row.iter_mut().for_each(|v| *v *= s);
        }
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        self.push(t, Op::ScaleRows(x, scales), "scale_rows")
    }

    /// Sums over `axis`, dropping it from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let vx = self.value(x);
        let (outer, len, inner) = axis_split(vx.shape(), axis)?;
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += vx.data()[base + i];
                }
            }
        }
        let mut shape = vx.shape().to_vec();
        shape.remove(axis);
        let t = Tensor::new(shape, out)?;
        self.push(t, Op::SumAxis { x, axis }, "sum_axis")
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let len = *self
            .value(x)
            .shape()
            .get(axis)
            .ok_or_else(|| dim_err!("mean_axis: axis {} out of range", axis))?;
        if len == 0 {
            return Err(dim_err!("mean_axis: empty axis {}", axis));
        }
        let s = self.sum_axis(x, axis)?;
        self.scale(s, 1.0 / len as f64)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x), "sum_all")
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(Error::EmptyInput("mean_all"));
        }
        let s = self.sum_all(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).transpose()?;
        self.push(t, Op::Transpose(x), "transpose")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        self.push(t, Op::Reshape(x), "reshape")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&v| sigmoid(v)).collect();
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        self.push(t, Op::Sigmoid(x), "sigmoid")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&v| v.max(0.0)).collect();
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        self.push(t, Op::Relu(x), "relu")
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let vx = self.value(x);
        let (outer, len, inner) = axis_split(vx.shape(), axis)?;
        if len == 0 {
            return Err(dim_err!("softmax over empty axis {}", axis));
        }
        let src = vx.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| src[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for l in 0..len {
                    let e = libm::exp(src[at(l)] - max);
                    out[at(l)] = e;
                    total += e;
                }
                for l in 0..len {
                    out[at(l)] /= total;
                }
            }
        }
        let t = Tensor::new(vx.shape().to_vec(), out)?;
        self.push(t, Op::Softmax { x, axis }, "softmax")
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of `logits` (B×C).
    pub fn cross_entropy_with_logits(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = self.value(logits).dims2()?;
        if labels.len() != b {
            return Err(dim_err!("cross_entropy: {} rows, {} labels", b, labels.len()));
        }
        if b == 0 || c == 0 {
            return Err(Error::EmptyInput("cross_entropy"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(dim_err!("cross_entropy: label {} out of {} classes", bad, c));
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for r in 0..b {
            let row = &src[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
            for (p, v) in probs[r * c..(r + 1) * c].iter_mut().zip(row) {
                *p = libm::exp(v - lse);
            }
            loss += lse - row[labels[r]];
        }
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        self.push(Tensor::scalar(loss / b as f64), op, "cross_entropy")
    }

    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let (rows, cols) = vx.dims2()?;
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(dim_err!("gather_rows: index {} out of {} rows", i, rows));
            }
            data.extend_from_slice(vx.row(i));
        }
        let t = Tensor::matrix(indices.len(), cols, data)?;
        let op = Op::GatherRows {
            x,
            indices: indices.to_vec(),
        };
        self.push(t, op, "gather_rows")
    }

    /// Stacks matrices (or vectors as single rows) with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::EmptyInput("concat_rows"))?;
        let cols = self.value(*first).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols || v.rank() > 2 {
                return Err(dim_err!("concat_rows: part of shape {:?} vs {} columns", v.shape(), cols));
            }
            rows += if v.rank() == 2 { v.rows() } else { 1 };
            data.extend_from_slice(v.data());
        }
        let t = Tensor::matrix(rows, cols, data)?;
        self.push(t, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    /// Train-mode batch norm over the rows of `x` (B×F). Also returns the batch
    /// statistics so the caller can update running estimates.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let (b, f) = self.value(x).dims2()?;
        if b < 2 {
            return Err(Error::BatchSize(b));
        }
        self.check_affine(gamma, beta, f)?;
        let src = self.value(x).data();
        let mut mean = vec![0.0; f];
        for row in src.chunks(f) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= b as f64);
        let mut var = vec![0.0; f];
        for row in src.chunks(f) {
            for j in 0..f {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= b as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
        let y = self.normalize_affine(x, gamma, beta, &mean, inv_std, true)?;
        Ok((y, BatchStats { mean, var, batch: b }))
    }

    /// Eval-mode batch norm using fixed statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (_, f) = self.value(x).dims2()?;
        self.check_affine(gamma, beta, f)?;
        if running_mean.len() != f || running_var.len() != f {
            return Err(dim_err!("batchnorm: running statistics do not match {} features", f));
        }
        let inv_std = running_var.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
        self.normalize_affine(x, gamma, beta, running_mean, inv_std, false)
    }

    fn check_affine(&self, gamma: Var, beta: Var, f: usize) -> Result<()> {
        if self.value(gamma).numel() != f || self.value(beta).numel() != f {
            return Err(dim_err!("batchnorm: scale/shift do not match {} features", f));
        }
        Ok(())
    }

    fn normalize_affine(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: Vec<f64>,
        train: bool,
    ) -> Result<Var> {
        let vx = self.value(x);
        let f = vx.cols();
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        let mut xhat = vx.data().to_vec();
        let mut out = vec![0.0; xhat.len()];
        for (xr, or) in xhat.chunks_mut(f).zip(out.chunks_mut(f)) {
            for j in 0..f {
                xr[j] = (xr[j] - mean[j]) * inv_std[j];
                or[j] = g[j] * xr[j] + be[j];
            }
        }
        let t = Tensor::new(vx.shape().to_vec(), out)?;
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        };
        self.push(t, op, "batchnorm")
    }

    /// Scales each row of `x` to unit L2 norm.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let cols = vx.cols().max(1);
        let mut data = vx.data().to_vec();
        let mut norms = Vec::with_capacity(vx.rows());
        for row in data.chunks_mut(cols) {
            let n = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>() + NORM_EPS);
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        self.push(t, Op::L2NormalizeRows { x, norms }, "l2_normalize_rows")
    }

    /// Scales the whole tensor to unit L2 norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let norm = libm::sqrt(vx.data().iter().map(|v| v * v).sum::<f64>() + NORM_EPS);
        let data = vx.data().iter().map(|v| v / norm).collect();
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        self.push(t, Op::L2Normalize { x, norm }, "l2_normalize")
    }

    /// Pushes the output gradient `g` of node `idx` into its inputs.
    pub(crate) fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.rows(), va.cols());
                let n = vb.cols();
                // dA = dC·Bᵀ, dB = Aᵀ·dC
                self.accumulate(grads, *a, || matmul_nt_raw(g, vb.data(), m, n, k));
                self.accumulate(grads, *b, || matmul_tn_raw(va.data(), g, m, k, n));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, || g.to_vec());
                self.accumulate(grads, *b, || g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, || g.to_vec());
                self.accumulate(grads, *b, || g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, || g.iter().zip(vb).map(|(x, y)| x * y).collect());
                self.accumulate(grads, *b, || g.iter().zip(va).map(|(x, y)| x * y).collect());
            }
            Op::Scale(x, f) => self.accumulate(grads, *x, || g.iter().map(|v| v * f).collect()),
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, || g.to_vec());
                let cols = self.value(*bias).numel();
                self.accumulate(grads, *bias, || {
                    let mut db = vec![0.0; cols];
                    for row in g.chunks(cols.max(1)) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    db
                });
            }
            Op::ScaleRows(x, scales) => {
                let vx = self.value(*x);
                let cols = vx.cols().max(1);
                let s = self.value(*scales).data();
                self.accumulate(grads, *x, || {
                    let mut dx = g.to_vec();
                    for (row, sv) in dx.chunks_mut(cols).zip(s) {
                        row.iter_mut().for_each(|v| *v *= sv);
                    }
                    dx
                });
                self.accumulate(grads, *scales, || {
                    g.chunks(cols)
                        .zip(vx.data().chunks(cols))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum())
                        .collect()
                });
            }
            Op::SumAxis { x, axis } => {
                let (outer, len, inner) =
                    axis_split(self.value(*x).shape(), *axis).expect("validated in forward");
                self.accumulate(grads, *x, || {
                    let mut dx = vec![0.0; outer * len * inner];
                    for o in 0..outer {
                        for l in 0..len {
                            let base = (o * len + l) * inner;
                            dx[base..base + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                        }
                    }
                    dx
                });
            }
            Op::SumAll(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, || vec![g[0]; n]);
            }
            Op::Transpose(x) => {
                let (r, c) = self.value(*x).dims2().expect("validated in forward");
                self.accumulate(grads, *x, || {
                    Tensor::matrix(c, r, g.to_vec())
                        .and_then(|t| t.transpose())
                        .expect("transpose grad")
                        .into_data()
                });
            }
            Op::Reshape(x) => self.accumulate(grads, *x, || g.to_vec()),
            Op::Sigmoid(x) => self.accumulate(grads, *x, || {
                g.iter().zip(out.data()).map(|(d, y)| d * y * (1.0 - y)).collect()
            }),
            Op::Relu(x) => {
                let vx = self.value(*x).data();
                self.accumulate(grads, *x, || {
                    g.iter().zip(vx).map(|(d, v)| if *v > 0.0 { *d } else { 0.0 }).collect()
                });
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) =
                    axis_split(out.shape(), *axis).expect("validated in forward");
                let y = out.data();
                self.accumulate(grads, *x, || {
                    let mut dx = vec![0.0; y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |l: usize| (o * len + l) * inner + i;
                            let dot: f64 = (0..len).map(|l| g[at(l)] * y[at(l)]).sum();
                            for l in 0..len {
                                dx[at(l)] = y[at(l)] * (g[at(l)] - dot);
                            }
                        }
                    }
                    dx
                });
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let b = labels.len();
                let c = probs.len() / b;
                let scale = g[0] / b as f64;
                self.accumulate(grads, *logits, || {
                    let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (r, &l) in labels.iter().enumerate() {
                        d[r * c + l] -= scale;
                    }
                    d
                });
            }
            Op::GatherRows { x, indices } => {
                let vx = self.value(*x);
                let cols = vx.cols();
                self.accumulate(grads, *x, || {
                    let mut dx = vec![0.0; vx.numel()];
                    for (r, &i) in indices.iter().enumerate() {
                        let src = &g[r * cols..(r + 1) * cols];
                        dx[i * cols..(i + 1) * cols]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, v)| *d += v);
                    }
                    dx
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    self.accumulate(grads, p, || g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let f = inv_std.len();
                let b = xhat.len() / f;
                let gm = self.value(*gamma).data();
                let mut dgamma = vec![0.0; f];
                let mut dbeta = vec![0.0; f];
                for (gr, xr) in g.chunks(f).zip(xhat.chunks(f)) {
                    for j in 0..f {
                        dgamma[j] += gr[j] * xr[j];
                        dbeta[j] += gr[j];
                    }
                }
                self.accumulate(grads, *x, || {
                    let mut dx = vec![0.0; xhat.len()];
                    if *train {
                        // dx = inv_std/B · (B·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂)), with dx̂ = dy·γ
                        for (r, (gr, xr)) in g.chunks(f).zip(xhat.chunks(f)).enumerate() {
                            for j in 0..f {
                                let dxhat = gr[j] * gm[j];
                                dx[r * f + j] = inv_std[j] / b as f64
                                    * (b as f64 * dxhat
                                        - dbeta[j] * gm[j]
                                        - xr[j] * dgamma[j] * gm[j]);
                            }
                        }
                    } else {
                        for (r, gr) in g.chunks(f).enumerate() {
                            for j in 0..f {
                                dx[r * f + j] = gr[j] * gm[j] * inv_std[j];
                            }
                        }
                    }
                    dx
                });
                self.accumulate(grads, *gamma, || dgamma.clone());
                self.accumulate(grads, *beta, || dbeta.clone());
            }
            Op::L2NormalizeRows { x, norms } => {
                let cols = out.cols().max(1);
                let y = out.data();
                self.accumulate(grads, *x, || {
                    let mut dx = vec![0.0; y.len()];
                    for (r, n) in norms.iter().enumerate() {
                        let span = r * cols..(r + 1) * cols;
                        let (yr, gr) = (&y[span.clone()], &g[span.clone()]);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (d, (yv, gv)) in dx[span].iter_mut().zip(yr.iter().zip(gr)) {
                            *d = (gv - yv * dot) / n;
                        }
                    }
                    dx
                });
            }
            Op::L2Normalize { x, norm } => {
                let y = out.data();
                let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                self.accumulate(grads, *x, || {
                    y.iter().zip(g).map(|(yv, gv)| (gv - yv * dot) / norm).collect()
                });
            }
        }
    }
}
