//! Layers built from graph primitives: affine maps and the LSTM cell.

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore};
use crate::error::{Result, TecoError};
use crate::rng::SplitRng;
use crate::tensor::{Real, Tensor};

/// Glorot-uniform matrix of shape `[fan_in, fan_out]`.
pub fn xavier<T: Real>(fan_in: usize, fan_out: usize, rng: &mut SplitRng) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| T::lit(rng.uniform_range(-a, a)))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("xavier shape")
}

/// `y = x W + b` with `W: [in, out]`, applied to every row of `x`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut SplitRng,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), xavier(in_dim, out_dim, rng))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Self {
            weight,
            bias: Some(bias),
            in_dim,
            out_dim,
        })
    }

    pub fn without_bias<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut SplitRng,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), xavier(in_dim, out_dim, rng))?;
        Ok(Self {
            weight,
            bias: None,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: NodeId,
    ) -> Result<NodeId> {
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// LSTM parameters with gate blocks packed as `[input | forget | candidate | output]`.
#[derive(Clone, Copy, Debug)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl Lstm {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut SplitRng,
    ) -> Result<Self> {
        let w_ih = store.add(
            format!("{name}.w_ih"),
            xavier(input_dim, 4 * hidden_dim, rng),
        )?;
        let w_hh = store.add(
            format!("{name}.w_hh"),
            xavier(hidden_dim, 4 * hidden_dim, rng),
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[4 * hidden_dim]))?;
        Ok(Self {
            w_ih,
            w_hh,
            bias,
            input_dim,
            hidden_dim,
        })
    }

    /// One cell step from precomputed input contribution `x W_ih + b` of
    /// shape `[1, 4h]`.
    fn step_from_gates<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x_gates: NodeId,
        h: NodeId,
        c: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let hd = self.hidden_dim;
        let w_hh = g.param(store, self.w_hh);
        let rec = g.matmul(h, w_hh)?;
        let gates = g.add(x_gates, rec)?;
        let i_pre = g.narrow(gates, 1, 0, hd)?;
        let f_pre = g.narrow(gates, 1, hd, hd)?;
        let c_pre = g.narrow(gates, 1, 2 * hd, hd)?;
        let o_pre = g.narrow(gates, 1, 3 * hd, hd)?;
        let i = g.sigmoid(i_pre);
        let f = g.sigmoid(f_pre);
        let cand = g.tanh(c_pre);
        let o = g.sigmoid(o_pre);
        let kept = g.mul(f, c)?;
        let written = g.mul(i, cand)?;
        let c_next = g.add(kept, written)?;
        let squashed = g.tanh(c_next);
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }

    fn check_state<T: Real>(&self, g: &Graph<T>, x: NodeId, h: NodeId, c: NodeId) -> Result<()> {
        if g.shape(x) != [1, self.input_dim] {
            return Err(TecoError::shape(
                "lstm_step",
                g.shape(x),
                &[1, self.input_dim],
            ));
        }
        for s in [h, c] {
            if g.shape(s) != [1, self.hidden_dim] {
                return Err(TecoError::shape(
                    "lstm_step",
                    g.shape(s),
                    &[1, self.hidden_dim],
                ));
            }
        }
        Ok(())
    }

    /// Standard LSTM cell on `x: [1, in]` with state `(h, c): [1, hidden]`.
    pub fn step<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: NodeId,
        state: (NodeId, NodeId),
    ) -> Result<(NodeId, NodeId)> {
        let (h, c) = state;
        self.check_state(g, x, h, c)?;
        let w_ih = g.param(store, self.w_ih);
        let b = g.param(store, self.bias);
        let xg = g.matmul(x, w_ih)?;
        let xg = g.add_row(xg, b)?;
        self.step_from_gates(g, store, xg, h, c)
    }

    /// Run over `xs: [len, in]` from a zero state; returns stacked hidden
    /// states `[len, hidden]`.
    pub fn sequence<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        xs: NodeId,
    ) -> Result<NodeId> {
        let shape = g.shape(xs).to_vec();
        if shape.len() != 2 || shape[1] != self.input_dim {
            return Err(TecoError::shape(
                "lstm_sequence",
                &shape,
                &[shape[0], self.input_dim],
            ));
        }
        let w_ih = g.param(store, self.w_ih);
        let b = g.param(store, self.bias);
        let xg_all = g.matmul(xs, w_ih)?;
        let xg_all = g.add_row(xg_all, b)?;
        let mut h = g.constant(Tensor::zeros(&[1, self.hidden_dim]));
        let mut c = g.constant(Tensor::zeros(&[1, self.hidden_dim]));
        let mut states = Vec::with_capacity(shape[0]);
        for t in 0..shape[0] {
            let xg = g.narrow(xg_all, 0, t, 1)?;
            (h, c) = self.step_from_gates(g, store, xg, h, c)?;
            states.push(h);
        }
        g.concat(&states, 0)
    }
}

/// Mean over the first `valid` rows of `x: [l, d]`, giving `[1, d]`. With
/// `None` (or `valid == l`) every row counts, padding included.
pub fn mean_pool<T: Real>(g: &mut Graph<T>, x: NodeId, valid: Option<usize>) -> Result<NodeId> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 2 {
        return Err(TecoError::arg(
            "mean_pool",
            format!("needs [l, d], got {shape:?}"),
        ));
    }
    let len = shape[0];
    match valid {
        Some(v) if v < len => {
            if v == 0 {
                return Err(TecoError::arg("mean_pool", "no valid rows"));
            }
            let w = T::lit(1.0 / v as f64);
            let weights = (0..len)
                .map(|i| if i < v { w } else { T::zero() })
                .collect();
            let weights = g.constant(Tensor::new(vec![1, len], weights)?);
            g.matmul(weights, x)
        }
        _ => g.mean_axis(x, 0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::check_params;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Scalar-loop LSTM cell, independent of the graph ops.
    fn reference_step(
        x: &[f64],
        h: &[f64],
        c: &[f64],
        w_ih: &Tensor<f64>,
        w_hh: &Tensor<f64>,
        b: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let hd = h.len();
        let mut pre = b.to_vec();
        for (j, p) in pre.iter_mut().enumerate() {
            for (k, xk) in x.iter().enumerate() {
                *p += xk * w_ih.at(k, j);
            }
            for (k, hk) in h.iter().enumerate() {
                *p += hk * w_hh.at(k, j);
            }
        }
        let mut h2 = vec![0.0; hd];
        let mut c2 = vec![0.0; hd];
        for j in 0..hd {
            let i = sigmoid(pre[j]);
            let f = sigmoid(pre[hd + j]);
            let g = pre[2 * hd + j].tanh();
            let o = sigmoid(pre[3 * hd + j]);
            c2[j] = f * c[j] + i * g;
            h2[j] = o * c2[j].tanh();
        }
        (h2, c2)
    }

    fn setup(din: usize, dh: usize, seed: u64) -> (ParamStore<f64>, Lstm) {
        let mut store = ParamStore::new();
        let mut rng = SplitRng::new(seed);
        let lstm = Lstm::new(&mut store, "lstm", din, dh, &mut rng).unwrap();
        let b = Tensor::randn(&[4 * dh], 0.5, &mut rng);
        store.get_mut(lstm.bias).value = b;
        (store, lstm)
    }

    #[test]
    fn zero_everything_gives_zero_state() {
        let (mut store, lstm) = setup(3, 4, 0);
        for p in store.iter_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 3]));
        let h = g.constant(Tensor::zeros(&[1, 4]));
        let c = g.constant(Tensor::zeros(&[1, 4]));
        let (h2, c2) = lstm.step(&mut g, &store, x, (h, c)).unwrap();
        assert!(g.value(h2).data().iter().all(|&v| v == 0.0));
        assert!(g.value(c2).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_matches_scalar_loop() {
        let (store, lstm) = setup(3, 4, 1);
        let mut rng = SplitRng::new(2);
        let x = Tensor::<f64>::randn(&[1, 3], 1.0, &mut rng);
        let h = Tensor::<f64>::randn(&[1, 4], 1.0, &mut rng);
        let c = Tensor::<f64>::randn(&[1, 4], 1.0, &mut rng);
        let (eh, ec) = reference_step(
            x.data(),
            h.data(),
            c.data(),
            &store.get(lstm.w_ih).value,
            &store.get(lstm.w_hh).value,
            store.get(lstm.bias).value.data(),
        );
        let mut g = Graph::new();
        let (xi, hi, ci) = (g.constant(x), g.constant(h), g.constant(c));
        let (h2, c2) = lstm.step(&mut g, &store, xi, (hi, ci)).unwrap();
        for (a, b) in g.value(h2).data().iter().zip(&eh) {
            assert!((a - b).abs() < 1e-6);
        }
        for (a, b) in g.value(c2).data().iter().zip(&ec) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn step_rejects_wrong_dims() {
        let (store, lstm) = setup(3, 4, 1);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 5]));
        let h = g.constant(Tensor::zeros(&[1, 4]));
        let c = g.constant(Tensor::zeros(&[1, 4]));
        assert!(lstm.step(&mut g, &store, x, (h, c)).is_err());
    }

    #[test]
    fn step_gradients_match_finite_differences() {
        let (store, lstm) = setup(3, 4, 3);
        let mut rng = SplitRng::new(4);
        let x = Tensor::<f64>::randn(&[1, 3], 1.0, &mut rng);
        let h = Tensor::<f64>::randn(&[1, 4], 1.0, &mut rng);
        let c = Tensor::<f64>::randn(&[1, 4], 1.0, &mut rng);
        let report = check_params(&store, |g, s| {
            let (xi, hi, ci) = (
                g.constant(x.clone()),
                g.constant(h.clone()),
                g.constant(c.clone()),
            );
            let (h2, _) = lstm.step(g, s, xi, (hi, ci))?;
            Ok(g.sum(h2))
        })
        .unwrap();
        for (name, err) in report {
            assert!(err < 1e-4, "{name}: {err}");
        }
    }

    #[test]
    fn sequence_matches_repeated_steps() {
        let (store, lstm) = setup(2, 3, 5);
        let mut rng = SplitRng::new(6);
        let xs = Tensor::<f64>::randn(&[4, 2], 1.0, &mut rng);
        let mut h = vec![0.0; 3];
        let mut c = vec![0.0; 3];
        let mut expected = Vec::new();
        for t in 0..4 {
            (h, c) = reference_step(
                xs.row(t),
                &h,
                &c,
                &store.get(lstm.w_ih).value,
                &store.get(lstm.w_hh).value,
                store.get(lstm.bias).value.data(),
            );
            expected.extend_from_slice(&h);
        }
        let mut g = Graph::new();
        let xi = g.constant(xs);
        let states = lstm.sequence(&mut g, &store, xi).unwrap();
        assert_eq!(g.shape(states), &[4, 3]);
        for (a, b) in g.value(states).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_applies_affine_map() {
        let mut store = ParamStore::<f64>::new();
        let lin = Linear::new(&mut store, "fc", 2, 2, &mut SplitRng::new(0)).unwrap();
        store.get_mut(lin.weight).value = Tensor::identity(2);
        store.get_mut(lin.bias.unwrap()).value = Tensor::from_f64(&[2], &[1.0, -1.0]).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_f64(&[1, 2], &[3.0, 4.0]).unwrap());
        let y = lin.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(y).data(), &[4.0, 3.0]);
    }

    #[test]
    fn mean_pool_ignores_padding_when_masked() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 0.0, 0.0]).unwrap());
        let all = mean_pool(&mut g, x, None).unwrap();
        let masked = mean_pool(&mut g, x, Some(2)).unwrap();
        assert_eq!(g.value(all).data(), &[4.0 / 3.0, 2.0]);
        assert_eq!(g.value(masked).data(), &[2.0, 3.0]);
        assert_eq!(g.shape(masked), &[1, 2]);
    }
}
