//! Forward constructors. Each checks shapes, computes the value eagerly and
//! records the node.

use super::{Graph, Mode, NodeId, Op};
use crate::error::{Result, TecoError};
use crate::rng::SplitRng;
use crate::tensor::{axis_extents, Real, Tensor};

/// `a[m,k] · b[k,n]`, row-major, i-k-j loop order.
pub(crate) fn mm<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose2<T: Real>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

impl<T: Real> Graph<T> {
    fn derived(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[NodeId]) -> NodeId {
        let rg = inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        self.push(value, op, rg)
    }

    fn unary(&mut self, x: NodeId, f: impl Fn(T) -> T, op: Op<T>) -> NodeId {
        let v = self.value(x).map(f);
        self.derived(v, op, &[x])
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TecoError::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn check_axis(&self, op: &'static str, x: NodeId, axis: usize) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(TecoError::arg(
                op,
                format!("axis {axis} out of range for shape {:?}", self.shape(x)),
            ));
        }
        Ok(())
    }

    fn zip_with(&self, a: NodeId, b: NodeId, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(va.shape().to_vec(), data).expect("same shape")
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TecoError::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = mm(self.value(a).data(), self.value(b).data(), m, k, n);
        let v = Tensor::new(vec![m, n], data)?;
        Ok(self.derived(v, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        Ok(self.derived(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        Ok(self.derived(v, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        Ok(self.derived(v, Op::Mul(a, b), &[a, b]))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("div", a, b)?;
        let v = self.zip_with(a, b, |x, y| x / y);
        Ok(self.derived(v, Op::Div(a, b), &[a, b]))
    }

    /// `a[.., n] + row[n]`, broadcasting the row over all leading positions.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        let n = *sa.last().unwrap_or(&1);
        if sa.is_empty() || self.value(row).numel() != n {
            return Err(TecoError::shape("add_row", sa, sr));
        }
        let r = self.value(row).data().to_vec();
        let mut v = self.value(a).clone();
        for chunk in v.data_mut().chunks_mut(n) {
            chunk.iter_mut().zip(&r).for_each(|(x, &b)| *x = *x + b);
        }
        Ok(self.derived(v, Op::AddRow(a, row), &[a, row]))
    }

    /// `x * s` with a one-element `s` broadcast over `x`.
    pub fn mul_scalar(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        if self.value(s).numel() != 1 {
            return Err(TecoError::shape("mul_scalar", self.shape(x), self.shape(s)));
        }
        let k = self.value(s).item();
        let v = self.value(x).map(|e| e * k);
        Ok(self.derived(v, Op::MulScalar(x, s), &[x, s]))
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: NodeId, scale: T, shift: T) -> NodeId {
        self.unary(x, |e| scale * e + shift, Op::Affine(x, scale))
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = *inputs
            .first()
            .ok_or_else(|| TecoError::arg("concat", "no inputs"))?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &i in inputs {
            let s = self.shape(i);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(ax, (a, b))| ax == axis || a == b);
            if !compatible {
                return Err(TecoError::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_extents(&base, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &i in inputs {
                let chunk = self.shape(i)[axis] * inner;
                data.extend_from_slice(&self.value(i).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let v = Tensor::new(shape, data)?;
        Ok(self.derived(v, Op::Concat(inputs.to_vec(), axis), inputs))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        self.check_axis("narrow", x, axis)?;
        let shape = self.shape(x).to_vec();
        if len == 0 || start + len > shape[axis] {
            return Err(TecoError::arg(
                "narrow",
                format!(
                    "range {start}..{} outside axis of length {}",
                    start + len,
                    shape[axis]
                ),
            ));
        }
        let (outer, n, inner) = axis_extents(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let v = Tensor::new(out_shape, data)?;
        Ok(self.derived(v, Op::Narrow { x, axis, start }, &[x]))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(TecoError::arg(
                "transpose",
                format!("needs rank 2, got {s:?}"),
            ));
        }
        let (r, c) = (s[0], s[1]);
        let v = Tensor::new(vec![c, r], transpose2(self.value(x).data(), r, c))?;
        Ok(self.derived(v, Op::Transpose(x), &[x]))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.derived(v, Op::Reshape(x), &[x]))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |e| e.max(T::zero()), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(x, T::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |e| T::one() / (T::one() + (-e).exp()), Op::Sigmoid(x))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.check_axis("softmax", x, axis)?;
        let mut v = self.value(x).clone();
        let (outer, n, inner) = axis_extents(v.shape(), axis);
        let data = v.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| o * n * inner + j * inner + i;
                let max = (0..n).map(|j| data[idx(j)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for j in 0..n {
                    let e = (data[idx(j)] - max).exp();
                    data[idx(j)] = e;
                    total = total + e;
                }
                for j in 0..n {
                    data[idx(j)] = data[idx(j)] / total;
                }
            }
        }
        Ok(self.derived(v, Op::Softmax(x, axis), &[x]))
    }

    /// Mean along `axis`, keeping that axis with extent 1.
    pub fn mean_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.check_axis("mean_axis", x, axis)?;
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = axis_extents(&shape, axis);
        let src = self.value(x).data();
        let scale = T::one() / T::lit(n as f64);
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    data[o * inner + i] = data[o * inner + i] + src[o * n * inner + j * inner + i];
                }
            }
        }
        data.iter_mut().for_each(|e| *e = *e * scale);
        let mut out_shape = shape;
        out_shape[axis] = 1;
        let v = Tensor::new(out_shape, data)?;
        Ok(self.derived(v, Op::MeanAxis(x, axis), &[x]))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: T = self.value(x).data().iter().copied().sum();
        self.derived(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Euclidean norm over all elements.
    pub fn l2_norm(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).l2_norm();
        self.derived(Tensor::scalar(n), Op::L2Norm(x), &[x])
    }

    /// `min(x, cap)` elementwise; gradient is zero where the cap is active.
    pub fn clamp_max(&mut self, x: NodeId, cap: T) -> NodeId {
        self.unary(x, |e| e.min(cap), Op::ClampMax(x, cap))
    }

    /// Per-row standardization over the last axis, then `gain * x_hat + bias`.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: T) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| TecoError::arg("layer_norm", "scalar input"))?;
        for p in [gain, bias] {
            if self.value(p).numel() != d {
                return Err(TecoError::shape("layer_norm", &shape, self.shape(p)));
            }
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = src.len() / d;
        let dn = T::lit(d as f64);
        let mut x_hat = vec![T::zero(); src.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&e| (e - mean) * (e - mean)).sum::<T>() / dn;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let xh = (row[j] - mean) * inv;
                x_hat[r * d + j] = xh;
                out[r * d + j] = g[j] * xh + b[j];
            }
        }
        let v = Tensor::new(shape, out)?;
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            x_hat,
            inv_std,
        };
        Ok(self.derived(v, op, &[x, gain, bias]))
    }

    /// Inverted dropout. Eval mode and `rate == 0` return `x` itself.
    pub fn dropout(
        &mut self,
        x: NodeId,
        rate: f64,
        mode: Mode,
        rng: &mut SplitRng,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TecoError::Config(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| {
                if rng.uniform() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let src = self.value(x);
        let data = src.data().iter().zip(&mask).map(|(&e, &m)| e * m).collect();
        let v = Tensor::new(src.shape().to_vec(), data)?;
        Ok(self.derived(v, Op::Dropout(x, mask), &[x]))
    }

    /// Mean categorical cross-entropy of `logits[B, N]` against gold labels,
    /// via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() || labels.is_empty() {
            return Err(TecoError::shape("cross_entropy", &s, &[labels.len()]));
        }
        let n = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(TecoError::arg(
                "cross_entropy",
                format!("label {bad} out of range for {n} classes"),
            ));
        }
        let z = self.value(logits).data();
        let mut probs = vec![T::zero(); z.len()];
        let mut total = T::zero();
        for (b, &label) in labels.iter().enumerate() {
            let row = &z[b * n..(b + 1) * n];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let se: T = row.iter().map(|&e| (e - max).exp()).sum();
            let lse = max + se.ln();
            total = total + lse - row[label];
            for j in 0..n {
                probs[b * n + j] = (row[j] - lse).exp();
            }
        }
        let loss = total / T::lit(labels.len() as f64);
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.derived(Tensor::scalar(loss), op, &[logits]))
    }
}
