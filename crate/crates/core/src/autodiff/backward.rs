use super::ops::{mm, transpose2};
use super::{Graph, NodeId, Op};
use crate::tensor::{axis_extents, Real};

impl<T: Real> Graph<T> {
    fn data(&self, id: NodeId) -> &[T] {
        self.nodes[id.0].value.data()
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Vector-Jacobian product of node `i` given its upstream gradient.
    pub(super) fn vjp(&self, i: usize, gy: &[T]) -> Vec<(NodeId, Vec<T>)> {
        let node = &self.nodes[i];
        let y = node.value.data();
        let mut out = Vec::new();
        let mut emit = |id: NodeId, f: &dyn Fn() -> Vec<T>| {
            if self.wants(id) {
                out.push((id, f()));
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                emit(*a, &|| mm(gy, &transpose2(self.data(*b), k, n), m, n, k));
                emit(*b, &|| mm(&transpose2(self.data(*a), m, k), gy, k, m, n));
            }
            Op::Add(a, b) => {
                emit(*a, &|| gy.to_vec());
                emit(*b, &|| gy.to_vec());
            }
            Op::Sub(a, b) => {
                emit(*a, &|| gy.to_vec());
                emit(*b, &|| gy.iter().map(|&g| -g).collect());
            }
            Op::Mul(a, b) => {
                emit(*a, &|| zip(gy, self.data(*b), |g, v| g * v));
                emit(*b, &|| zip(gy, self.data(*a), |g, v| g * v));
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.data(*a), self.data(*b));
                emit(*a, &|| zip(gy, vb, |g, d| g / d));
                emit(*b, &|| {
                    gy.iter()
                        .zip(va.iter().zip(vb))
                        .map(|(&g, (&n, &d))| -g * n / (d * d))
                        .collect()
                });
            }
            Op::AddRow(a, row) => {
                emit(*a, &|| gy.to_vec());
                emit(*row, &|| {
                    let n = self.data(*row).len();
                    let mut acc = vec![T::zero(); n];
                    for chunk in gy.chunks(n) {
                        acc.iter_mut().zip(chunk).for_each(|(s, &g)| *s = *s + g);
                    }
                    acc
                });
            }
            Op::MulScalar(x, s) => {
                let k = self.data(*s)[0];
                emit(*x, &|| gy.iter().map(|&g| g * k).collect());
                emit(*s, &|| {
                    vec![zip(gy, self.data(*x), |g, v| g * v).into_iter().sum()]
                });
            }
            Op::Affine(x, scale) => emit(*x, &|| gy.iter().map(|&g| g * *scale).collect()),
            Op::Concat(inputs, axis) => {
                let (outer, total, inner) = axis_extents(node.value.shape(), *axis);
                let mut offset = 0;
                for &input in inputs {
                    let len = self.shape(input)[*axis];
                    emit(input, &|| {
                        let mut g = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = o * total * inner + offset * inner;
                            g.extend_from_slice(&gy[base..base + len * inner]);
                        }
                        g
                    });
                    offset += len;
                }
            }
            Op::Narrow { x, axis, start } => emit(*x, &|| {
                let (outer, n, inner) = axis_extents(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                let mut g = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    let dst = o * n * inner + start * inner;
                    let src = o * len * inner;
                    g[dst..dst + len * inner].copy_from_slice(&gy[src..src + len * inner]);
                }
                g
            }),
            Op::Transpose(x) => emit(*x, &|| {
                let s = node.value.shape();
                transpose2(gy, s[0], s[1])
            }),
            Op::Reshape(x) => emit(*x, &|| gy.to_vec()),
            Op::Relu(x) => emit(*x, &|| {
                zip(gy, y, |g, v| if v > T::zero() { g } else { T::zero() })
            }),
            Op::Tanh(x) => emit(*x, &|| zip(gy, y, |g, v| g * (T::one() - v * v))),
            Op::Sigmoid(x) => emit(*x, &|| zip(gy, y, |g, v| g * v * (T::one() - v))),
            Op::Softmax(x, axis) => emit(*x, &|| {
                let (outer, n, inner) = axis_extents(node.value.shape(), *axis);
                let mut g = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| o * n * inner + j * inner + i;
                        let dot: T = (0..n).map(|j| gy[idx(j)] * y[idx(j)]).sum();
                        for j in 0..n {
                            g[idx(j)] = y[idx(j)] * (gy[idx(j)] - dot);
                        }
                    }
                }
                g
            }),
            Op::MeanAxis(x, axis) => emit(*x, &|| {
                let (outer, n, inner) = axis_extents(self.shape(*x), *axis);
                let scale = T::one() / T::lit(n as f64);
                let mut g = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    for j in 0..n {
                        for i in 0..inner {
                            g[o * n * inner + j * inner + i] = gy[o * inner + i] * scale;
                        }
                    }
                }
                g
            }),
            Op::Sum(x) => emit(*x, &|| vec![gy[0]; self.data(*x).len()]),
            Op::L2Norm(x) => emit(*x, &|| {
                let norm = y[0];
                if norm == T::zero() {
                    vec![T::zero(); self.data(*x).len()]
                } else {
                    self.data(*x).iter().map(|&v| gy[0] * v / norm).collect()
                }
            }),
            Op::ClampMax(x, cap) => emit(*x, &|| {
                zip(
                    gy,
                    self.data(*x),
                    |g, v| if v < *cap { g } else { T::zero() },
                )
            }),
            Op::LayerNorm {
                x,
                gain,
                bias,
                x_hat,
                inv_std,
            } => {
                let g = self.data(*gain);
                let d = g.len();
                emit(*x, &|| {
                    let dn = T::lit(d as f64);
                    let mut gx = vec![T::zero(); gy.len()];
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let span = r * d..(r + 1) * d;
                        let dxh: Vec<T> = gy[span.clone()]
                            .iter()
                            .zip(g)
                            .map(|(&a, &b)| a * b)
                            .collect();
                        let xh = &x_hat[span.clone()];
                        let sum_dxh: T = dxh.iter().copied().sum();
                        let sum_dxh_xh: T = dxh.iter().zip(xh).map(|(&a, &b)| a * b).sum();
                        for j in 0..d {
                            gx[r * d + j] = inv / dn * (dn * dxh[j] - sum_dxh - xh[j] * sum_dxh_xh);
                        }
                    }
                    gx
                });
                emit(*gain, &|| {
                    let mut acc = vec![T::zero(); d];
                    for (chunk, xh) in gy.chunks(d).zip(x_hat.chunks(d)) {
                        for j in 0..d {
                            acc[j] = acc[j] + chunk[j] * xh[j];
                        }
                    }
                    acc
                });
                emit(*bias, &|| {
                    let mut acc = vec![T::zero(); d];
                    for chunk in gy.chunks(d) {
                        acc.iter_mut().zip(chunk).for_each(|(s, &v)| *s = *s + v);
                    }
                    acc
                });
            }
            Op::Dropout(x, mask) => emit(*x, &|| zip(gy, mask, |g, m| g * m)),
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => emit(*logits, &|| {
                let n = probs.len() / labels.len();
                let scale = gy[0] / T::lit(labels.len() as f64);
                let mut g: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (b, &label) in labels.iter().enumerate() {
                    g[b * n + label] = g[b * n + label] - scale;
                }
                g
            }),
        }
        out
    }
}

fn zip<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}
