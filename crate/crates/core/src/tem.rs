//! Textual enhancement: learned mixing of generated and retrieved relation
//! features, then injection of both relation types into the text sequence.

use crate::autodiff::{Graph, NodeId, ParamStore};
use crate::error::{Result, TecoError};
use crate::nn::{mean_pool, Linear};
use crate::rng::SplitRng;
use crate::tensor::{Real, Tensor};

/// A sequence node plus its valid length when masking is enabled.
#[derive(Clone, Copy, Debug)]
pub struct Seq {
    pub node: NodeId,
    pub valid: Option<usize>,
}

impl Seq {
    pub fn new(node: NodeId) -> Self {
        Self { node, valid: None }
    }

    pub fn masked(node: NodeId, valid: usize) -> Self {
        Self {
            node,
            valid: Some(valid),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DualFuse {
    pub h_rel: NodeId,
    /// `[1, 1]` weight on the generated branch.
    pub alpha: NodeId,
}

/// Mix generated `c` and retrieved `s` with a weight predicted from the
/// pooled text and both relations. `alpha_override` pins the weight.
pub fn dual_fuse<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    fuse: &Linear,
    h_t: Seq,
    c: Seq,
    s: Seq,
    alpha_override: Option<f64>,
) -> Result<DualFuse> {
    if g.shape(c.node) != g.shape(s.node) {
        return Err(TecoError::shape(
            "dual_fuse",
            g.shape(c.node),
            g.shape(s.node),
        ));
    }
    let alpha = match alpha_override {
        Some(a) => {
            if !(0.0..=1.0).contains(&a) {
                return Err(TecoError::arg(
                    "dual_fuse",
                    format!("alpha {a} outside [0, 1]"),
                ));
            }
            g.constant(Tensor::full(&[1, 1], T::lit(a)))
        }
        None => {
            let pooled = [h_t, c, s]
                .iter()
                .map(|x| mean_pool(g, x.node, x.valid))
                .collect::<Result<Vec<_>>>()?;
            let joined = g.concat(&pooled, 1)?;
            let logits = fuse.forward(g, store, joined)?;
            let probs = g.softmax(logits, 1)?;
            g.narrow(probs, 1, 0, 1)?
        }
    };
    let from_c = g.mul_scalar(c.node, alpha)?;
    let rest = g.affine(alpha, -T::one(), T::one());
    let from_s = g.mul_scalar(s.node, rest)?;
    let h_rel = g.add(from_c, from_s)?;
    Ok(DualFuse { h_rel, alpha })
}

/// `z_T = γ (h_T + h_xR W_xR) + (1 − γ) (h_T + h_xW W_xW)`.
pub fn textual_enhance<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    [w_xr, w_xw]: [&Linear; 2],
    h_t: NodeId,
    h_xr: NodeId,
    h_xw: NodeId,
    gamma: f64,
) -> Result<NodeId> {
    check_gamma(gamma)?;
    let lifted_r = w_xr.forward(g, store, h_xr)?;
    let z_r = g.add(h_t, lifted_r)?;
    let lifted_w = w_xw.forward(g, store, h_xw)?;
    let z_w = g.add(h_t, lifted_w)?;
    let a = g.affine(z_r, T::lit(gamma), T::zero());
    let b = g.affine(z_w, T::lit(1.0 - gamma), T::zero());
    g.add(a, b)
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(TecoError::Config(format!(
            "tem.gamma must lie in [0, 1], got {gamma}"
        )))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemSettings {
    pub gamma: f64,
    pub share_enhance_weight: bool,
    /// Use both generated and retrieved relations; otherwise generated only.
    pub dual: bool,
}

/// Relation inputs in canonical order: generated xR, generated xW,
/// retrieved xR, retrieved xW.
pub type RelationSeqs = [Seq; 4];

#[derive(Clone, Copy, Debug)]
pub struct TemOutput {
    pub z_t: NodeId,
    pub alpha_xr: Option<NodeId>,
    pub alpha_xw: Option<NodeId>,
}

#[derive(Clone, Debug)]
pub struct Tem {
    pub fuse_xr: Option<Linear>,
    pub fuse_xw: Option<Linear>,
    pub enhance_xr: Linear,
    pub enhance_xw: Linear,
    pub settings: TemSettings,
}

impl Tem {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        d: usize,
        settings: TemSettings,
        rng: &mut SplitRng,
    ) -> Result<Self> {
        check_gamma(settings.gamma)?;
        let (fuse_xr, fuse_xw) = if settings.dual {
            (
                Some(Linear::new(store, "tem.xR.fuse_linear", 3 * d, 2, rng)?),
                Some(Linear::new(store, "tem.xW.fuse_linear", 3 * d, 2, rng)?),
            )
        } else {
            (None, None)
        };
        let (enhance_xr, enhance_xw) = if settings.share_enhance_weight {
            let w = Linear::without_bias(store, "tem.enhance", d, d, rng)?;
            (w, w)
        } else {
            (
                Linear::without_bias(store, "tem.xR.enhance", d, d, rng)?,
                Linear::without_bias(store, "tem.xW.enhance", d, d, rng)?,
            )
        };
        Ok(Self {
            fuse_xr,
            fuse_xw,
            enhance_xr,
            enhance_xw,
            settings,
        })
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        h_t: Seq,
        rel: RelationSeqs,
        alpha_override: Option<f64>,
    ) -> Result<TemOutput> {
        let [c_xr, c_xw, s_xr, s_xw] = rel;
        let (h_xr, alpha_xr) = match &self.fuse_xr {
            Some(f) => {
                let o = dual_fuse(g, store, f, h_t, c_xr, s_xr, alpha_override)?;
                (o.h_rel, Some(o.alpha))
            }
            None => (c_xr.node, None),
        };
        let (h_xw, alpha_xw) = match &self.fuse_xw {
            Some(f) => {
                let o = dual_fuse(g, store, f, h_t, c_xw, s_xw, alpha_override)?;
                (o.h_rel, Some(o.alpha))
            }
            None => (c_xw.node, None),
        };
        let z_t = textual_enhance(
            g,
            store,
            [&self.enhance_xr, &self.enhance_xw],
            h_t.node,
            h_xr,
            h_xw,
            self.settings.gamma,
        )?;
        Ok(TemOutput {
            z_t,
            alpha_xr,
            alpha_xw,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{check_inputs, check_params};
    use proptest::prelude::*;

    fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
        Tensor::randn(shape, 1.0, &mut SplitRng::new(seed))
    }

    fn fuse_setup(d: usize, seed: u64) -> (ParamStore<f64>, Linear) {
        let mut store = ParamStore::new();
        let mut rng = SplitRng::new(seed);
        let fuse = Linear::new(&mut store, "fuse", 3 * d, 2, &mut rng).unwrap();
        store.get_mut(fuse.bias.unwrap()).value = rand(&[2], seed + 1);
        (store, fuse)
    }

    fn mean_rows(x: &Tensor<f64>) -> Vec<f64> {
        let (l, d) = (x.shape()[0], x.shape()[1]);
        (0..d)
            .map(|j| (0..l).map(|i| x.at(i, j)).sum::<f64>() / l as f64)
            .collect()
    }

    /// Straight-line re-implementation with explicit loops.
    fn dual_oracle(
        h: &Tensor<f64>,
        c: &Tensor<f64>,
        s: &Tensor<f64>,
        w: &Tensor<f64>,
        b: &[f64],
    ) -> (Vec<f64>, f64) {
        let pooled: Vec<f64> = [h, c, s].iter().flat_map(|x| mean_rows(x)).collect();
        let logit = |k: usize| {
            b[k] + (0..pooled.len())
                .map(|i| pooled[i] * w.at(i, k))
                .sum::<f64>()
        };
        let (l0, l1) = (logit(0), logit(1));
        let alpha = l0.exp() / (l0.exp() + l1.exp());
        let mix = c
            .data()
            .iter()
            .zip(s.data())
            .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
            .collect();
        (mix, alpha)
    }

    fn run_dual(
        store: &ParamStore<f64>,
        fuse: &Linear,
        ins: [&Tensor<f64>; 3],
        a: Option<f64>,
    ) -> (Tensor<f64>, f64) {
        let mut g = Graph::new();
        let [h, c, s] = ins.map(|t| Seq::new(g.constant(t.clone())));
        let o = dual_fuse(&mut g, store, fuse, h, c, s, a).unwrap();
        (g.value(o.h_rel).clone(), g.value(o.alpha).item())
    }

    #[test]
    fn equal_relations_pass_through() {
        let (store, fuse) = fuse_setup(4, 0);
        let h = rand(&[3, 4], 1);
        let c = rand(&[3, 4], 2);
        let (out, _) = run_dual(&store, &fuse, [&h, &c, &c], None);
        assert!(out.max_abs_diff(&c) < 1e-12);
    }

    #[test]
    fn alpha_endpoints_select_one_branch() {
        let (store, fuse) = fuse_setup(4, 3);
        let (h, c, s) = (rand(&[3, 4], 4), rand(&[3, 4], 5), rand(&[3, 4], 6));
        assert_eq!(run_dual(&store, &fuse, [&h, &c, &s], Some(1.0)).0, c);
        assert_eq!(run_dual(&store, &fuse, [&h, &c, &s], Some(0.0)).0, s);
    }

    #[test]
    fn dual_fuse_matches_straight_line_oracle() {
        let d = 8;
        let (store, fuse) = fuse_setup(d, 7);
        let (h, c, s) = (rand(&[4, d], 8), rand(&[4, d], 9), rand(&[4, d], 10));
        let (out, alpha) = run_dual(&store, &fuse, [&h, &c, &s], None);
        let w = &store.get(fuse.weight).value;
        let b = store.get(fuse.bias.unwrap()).value.data().to_vec();
        let (want, want_alpha) = dual_oracle(&h, &c, &s, w, &b);
        assert!((alpha - want_alpha).abs() < 1e-6);
        for (x, y) in out.data().iter().zip(&want) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn dual_fuse_gradients_match_finite_differences() {
        let d = 8;
        let (store, fuse) = fuse_setup(d, 11);
        let ins = [rand(&[4, d], 12), rand(&[4, d], 13), rand(&[4, d], 14)];
        let probe = rand(&[4, d], 15);
        let report = check_params(&store, |g, st| {
            let [h, c, s] = ins.clone().map(|t| Seq::new(g.constant(t)));
            let o = dual_fuse(g, st, &fuse, h, c, s, None)?;
            let p = g.constant(probe.clone());
            let y = g.mul(o.h_rel, p)?;
            Ok(g.sum(y))
        })
        .unwrap();
        for (name, err) in report {
            assert!(err < 1e-4, "{name}: {err}");
        }
        let errs = check_inputs(&ins, |g, x| {
            let o = dual_fuse(
                g,
                &store,
                &fuse,
                Seq::new(x[0]),
                Seq::new(x[1]),
                Seq::new(x[2]),
                None,
            )?;
            let p = g.constant(probe.clone());
            let y = g.mul(o.h_rel, p)?;
            Ok(g.sum(y))
        })
        .unwrap();
        assert!(errs.iter().all(|&e| e < 1e-4), "{errs:?}");
    }

    #[test]
    fn mismatched_relation_shapes_rejected() {
        let (store, fuse) = fuse_setup(4, 0);
        let mut g = Graph::new();
        let h = Seq::new(g.constant(rand(&[3, 4], 1)));
        let c = Seq::new(g.constant(rand(&[3, 4], 2)));
        let s = Seq::new(g.constant(rand(&[2, 4], 3)));
        assert!(matches!(
            dual_fuse(&mut g, &store, &fuse, h, c, s, None),
            Err(TecoError::Shape { .. })
        ));
    }

    fn enhance_setup(d: usize, seed: u64) -> (ParamStore<f64>, Linear) {
        let mut store = ParamStore::new();
        let w = Linear::without_bias(&mut store, "w", d, d, &mut SplitRng::new(seed)).unwrap();
        (store, w)
    }

    fn run_enhance(
        store: &ParamStore<f64>,
        w: &Linear,
        ins: [&Tensor<f64>; 3],
        gamma: f64,
    ) -> Result<Tensor<f64>> {
        let mut g = Graph::new();
        let [h, r, x] = ins.map(|t| g.constant(t.clone()));
        let z = textual_enhance(&mut g, store, [w, w], h, r, x, gamma)?;
        Ok(g.value(z).clone())
    }

    #[test]
    fn gamma_one_keeps_only_reaction_branch() {
        let (store, w) = enhance_setup(4, 0);
        let (h, r, x) = (rand(&[3, 4], 1), rand(&[3, 4], 2), rand(&[3, 4], 3));
        let z = run_enhance(&store, &w, [&h, &r, &x], 1.0).unwrap();
        let mut g = Graph::new();
        let (hn, rn) = (g.constant(h.clone()), g.constant(r.clone()));
        let lifted = w.forward(&mut g, &store, rn).unwrap();
        let want = g.add(hn, lifted).unwrap();
        assert_eq!(&z, g.value(want));
    }

    #[test]
    fn zero_enhance_weight_returns_text() {
        let (mut store, w) = enhance_setup(4, 0);
        store.get_mut(w.weight).value = Tensor::zeros(&[4, 4]);
        let (h, r, x) = (rand(&[3, 4], 1), rand(&[3, 4], 2), rand(&[3, 4], 3));
        for gamma in [0.0, 0.3, 0.9, 1.0] {
            let z = run_enhance(&store, &w, [&h, &r, &x], gamma).unwrap();
            assert!(z.max_abs_diff(&h) < 1e-15);
        }
    }

    #[test]
    fn gamma_outside_unit_interval_is_config_error() {
        let (store, w) = enhance_setup(2, 0);
        let t = rand(&[2, 2], 1);
        for gamma in [-0.1, 1.5, f64::NAN] {
            let err = run_enhance(&store, &w, [&t, &t, &t], gamma).unwrap_err();
            assert_eq!(err.exit_code(), 2);
        }
    }

    #[test]
    fn relation_length_must_match_text_length() {
        let (store, w) = enhance_setup(2, 0);
        let err = run_enhance(
            &store,
            &w,
            [&rand(&[3, 2], 1), &rand(&[4, 2], 2), &rand(&[4, 2], 3)],
            0.5,
        )
        .unwrap_err();
        assert!(matches!(err, TecoError::Shape { .. }));
    }

    fn tem_inputs(g: &mut Graph<f64>, l: usize, d: usize, seed: u64) -> (Seq, RelationSeqs) {
        let h = Seq::new(g.constant(rand(&[l, d], seed)));
        let rel = [1, 2, 3, 4].map(|k| Seq::new(g.constant(rand(&[l, d], seed + k))));
        (h, rel)
    }

    #[test]
    fn alphas_are_proper_probabilities() {
        let mut store = ParamStore::new();
        let settings = TemSettings {
            gamma: 0.9,
            share_enhance_weight: true,
            dual: true,
        };
        let tem = Tem::new(&mut store, 6, settings, &mut SplitRng::new(3)).unwrap();
        for p in store.iter_mut() {
            p.value = p.value.map(|v| v * 5.0);
        }
        let mut g = Graph::new();
        let (h, rel) = tem_inputs(&mut g, 3, 6, 20);
        let o = tem.forward(&mut g, &store, h, rel, None).unwrap();
        for a in [o.alpha_xr.unwrap(), o.alpha_xw.unwrap()] {
            let v = g.value(a).item();
            assert!(v > 0.0 && v < 1.0);
        }
        assert!(g.value(o.z_t).is_finite());
    }

    #[test]
    fn shared_weight_registers_once() {
        let settings = |share| TemSettings {
            gamma: 0.5,
            share_enhance_weight: share,
            dual: true,
        };
        let mut shared = ParamStore::<f64>::new();
        Tem::new(&mut shared, 4, settings(true), &mut SplitRng::new(0)).unwrap();
        let mut split = ParamStore::<f64>::new();
        Tem::new(&mut split, 4, settings(false), &mut SplitRng::new(0)).unwrap();
        assert_eq!(split.numel() - shared.numel(), 16);
        assert!(shared.by_name("tem.xR.fuse_linear.weight").is_some());
    }

    #[test]
    fn without_dual_retrieved_relations_are_ignored() {
        let settings = TemSettings {
            gamma: 0.7,
            share_enhance_weight: true,
            dual: false,
        };
        let mut store = ParamStore::new();
        let tem = Tem::new(&mut store, 4, settings, &mut SplitRng::new(1)).unwrap();
        assert!(store.iter().all(|p| !p.name.contains("fuse")));
        let run = |seed: u64| {
            let mut g = Graph::new();
            let (h, mut rel) = tem_inputs(&mut g, 3, 4, 30);
            rel[2] = Seq::new(g.constant(rand(&[3, 4], seed)));
            rel[3] = Seq::new(g.constant(rand(&[3, 4], seed + 1)));
            let o = tem.forward(&mut g, &store, h, rel, None).unwrap();
            assert!(o.alpha_xr.is_none());
            g.value(o.z_t).clone()
        };
        assert_eq!(run(100), run(200));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn mixture_lies_between_branches(seed in 0u64..10_000, l in 1usize..5, d in 1usize..5) {
            let (store, fuse) = fuse_setup(d, seed);
            let (h, c, s) = (rand(&[l, d], seed + 1), rand(&[l, d], seed + 2), rand(&[l, d], seed + 3));
            let (out, alpha) = run_dual(&store, &fuse, [&h, &c, &s], None);
            prop_assert!(alpha > 0.0 && alpha < 1.0);
            for ((&o, &a), &b) in out.data().iter().zip(c.data()).zip(s.data()) {
                prop_assert!(o >= a.min(b) - 1e-12 && o <= a.max(b) + 1e-12);
            }
        }

        #[test]
        fn enhancement_is_affine_in_gamma(seed in 0u64..10_000, gamma in 0.0f64..=1.0) {
            let d = 3;
            let (store, w) = enhance_setup(d, seed);
            let ins = [rand(&[2, d], seed + 1), rand(&[2, d], seed + 2), rand(&[2, d], seed + 3)];
            let refs = [&ins[0], &ins[1], &ins[2]];
            let z = run_enhance(&store, &w, refs, gamma).unwrap();
            let z1 = run_enhance(&store, &w, refs, 1.0).unwrap();
            let z0 = run_enhance(&store, &w, refs, 0.0).unwrap();
            for ((&v, &a), &b) in z.data().iter().zip(z1.data()).zip(z0.data()) {
                prop_assert!((v - (gamma * a + (1.0 - gamma) * b)).abs() < 1e-6);
            }
        }
    }
}
