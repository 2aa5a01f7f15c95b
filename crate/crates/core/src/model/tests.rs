use super::*;
use crate::autodiff::gradcheck::check_params;

pub(crate) fn toy_config() -> ModelConfig {
    ModelConfig {
        dims: Dims {
            text: 8,
            vision: 5,
            audio: 6,
        },
        lengths: Lengths {
            text: 4,
            vision: 6,
            audio: 6,
            relation: 4,
        },
        num_classes: 3,
        ..ModelConfig::default()
    }
}

fn toy_input<T: Real>(cfg: &ModelConfig, seed: u64, label: usize) -> ModelInput<T> {
    let mut rng = SplitRng::new(seed);
    let (d, l) = (cfg.dims, cfg.lengths);
    let mut r = |rows: usize, cols: usize| Tensor::randn(&[rows, cols], 1.0, &mut rng);
    ModelInput {
        text: r(l.text, d.text),
        vision: r(l.vision, d.vision),
        audio: r(l.audio, d.audio),
        relations: [
            r(l.relation, d.text),
            r(l.relation, d.text),
            r(l.relation, d.text),
            r(l.relation, d.text),
        ],
        valid: ValidLengths {
            text: l.text - 1,
            vision: l.vision - 2,
            audio: l.audio,
            relation: [l.relation; 4],
        },
        label,
    }
}

fn with(ablation: Ablation) -> ModelConfig {
    ModelConfig {
        ablation,
        ..toy_config()
    }
}

fn variant(v: Variant) -> ModelConfig {
    with(v.apply(Ablation::default()))
}

fn logits(model: &TecoModel<f64>, input: &ModelInput<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let t = model
        .trace(&mut g, input, Mode::Eval, &mut SplitRng::new(0))
        .unwrap();
    g.value(t.logits).clone()
}

fn gradcheck(cfg: ModelConfig) {
    let model = TecoModel::<f64>::new(cfg.clone(), &mut SplitRng::new(5)).unwrap();
    let inputs = [toy_input::<f64>(&cfg, 10, 0), toy_input::<f64>(&cfg, 11, 2)];
    let refs: Vec<_> = inputs.iter().collect();
    let labels: Vec<_> = inputs.iter().map(|x| x.label).collect();
    let report = check_params(&model.params, |g, store| {
        let l = model.forward_batch_with(g, store, &refs, Mode::Train, &mut SplitRng::new(77))?;
        g.cross_entropy(l, &labels)
    })
    .unwrap();
    assert_eq!(report.len(), model.params.len());
    for (name, err) in report {
        assert!(err < 1e-4, "{name}: relative error {err}");
    }
}

#[test]
fn full_graph_gradients_match_finite_differences() {
    gradcheck(toy_config());
}

#[test]
fn masked_full_graph_gradients_match_finite_differences() {
    gradcheck(ModelConfig {
        use_mask: true,
        pooling: Pooling::Mean,
        share_enhance_weight: false,
        ..toy_config()
    });
}

#[test]
fn every_variant_builds_and_runs() {
    for v in Variant::ALL {
        let cfg = variant(v);
        let model = TecoModel::<f64>::new(cfg.clone(), &mut SplitRng::new(0)).unwrap();
        let l = logits(&model, &toy_input(&cfg, 1, 0));
        assert_eq!(l.shape(), &[1, 3], "{v}");
        assert!(l.is_finite(), "{v}");
    }
}

#[test]
fn removed_components_shrink_the_parameter_set() {
    let count = |v| {
        TecoModel::<f64>::new(variant(v), &mut SplitRng::new(0))
            .unwrap()
            .num_parameters()
    };
    let full = count(Variant::Full);
    for v in [
        Variant::NoTem,
        Variant::NoDual,
        Variant::NoMaf,
        Variant::WTv,
        Variant::WTa,
        Variant::WVa,
    ] {
        assert!(count(v) < full, "{v}");
    }
}

#[test]
fn no_maf_is_normalized_text_enhancement_without_maf_parameters() {
    let cfg = variant(Variant::NoMaf);
    let model = TecoModel::<f64>::new(cfg.clone(), &mut SplitRng::new(3)).unwrap();
    assert!(model.params.iter().all(|p| !p.name.starts_with("maf.")));
    let input = toy_input(&cfg, 4, 0);
    let mut g = Graph::new();
    let t = model
        .trace(&mut g, &input, Mode::Eval, &mut SplitRng::new(0))
        .unwrap();
    assert!(t.beta.is_none() && t.gates.is_empty());
    let z_t = t.z_t.unwrap();
    let gain = g.param(&model.params, model.params.id("fusion.norm.gain").unwrap());
    let bias = g.param(&model.params, model.params.id("fusion.norm.bias").unwrap());
    let want = g.layer_norm(z_t, gain, bias, 1e-5).unwrap();
    assert_eq!(g.value(t.z_bar), g.value(want));
}

#[test]
fn no_dual_ignores_retrieved_relations() {
    let cfg = variant(Variant::NoDual);
    let model = TecoModel::<f64>::new(cfg.clone(), &mut SplitRng::new(3)).unwrap();
    assert!(model.params.iter().all(|p| !p.name.contains("fuse_linear")));
    let a = toy_input::<f64>(&cfg, 5, 0);
    let mut b = a.clone();
    b.relations[2] = b.relations[2].map(|v| v * 3.0 + 1.0);
    b.relations[3] = b.relations[3].map(|v| -v);
    assert_eq!(logits(&model, &a), logits(&model, &b));
}

#[test]
fn dropped_modality_does_not_affect_logits() {
    for (v, which) in [(Variant::WTv, 2), (Variant::WTa, 1), (Variant::WVa, 0)] {
        let cfg = variant(v);
        let model = TecoModel::<f64>::new(cfg.clone(), &mut SplitRng::new(6)).unwrap();
        let a = toy_input::<f64>(&cfg, 7, 1);
        let mut b = a.clone();
        match which {
            0 => b.text = b.text.map(|x| x + 5.0),
            1 => b.vision = b.vision.map(|x| x + 5.0),
            _ => b.audio = b.audio.map(|x| x + 5.0),
        }
        assert_eq!(logits(&model, &a), logits(&model, &b), "{v}");
    }
    let cfg = toy_config();
    let model = TecoModel::<f64>::new(cfg.clone(), &mut SplitRng::new(6)).unwrap();
    let a = toy_input::<f64>(&cfg, 7, 1);
    let mut b = a.clone();
    b.audio = b.audio.map(|x| x + 5.0);
    assert_ne!(logits(&model, &a), logits(&model, &b));
}

#[test]
fn text_free_variant_gates_each_stream_on_the_other() {
    let cfg = variant(Variant::WVa);
    let model = TecoModel::<f64>::new(cfg.clone(), &mut SplitRng::new(2)).unwrap();
    assert!(model.params.iter().all(|p| !p.name.starts_with("tem.")));
    let mut g = Graph::new();
    let t = model
        .trace(
            &mut g,
            &toy_input(&cfg, 3, 0),
            Mode::Eval,
            &mut SplitRng::new(0),
        )
        .unwrap();
    assert!(t.z_t.is_none());
    assert_eq!(t.gates.len(), 2);
}

#[test]
fn config_validation() {
    let bad = |cfg: ModelConfig| {
        TecoModel::<f64>::new(cfg, &mut SplitRng::new(0))
            .unwrap_err()
            .exit_code()
    };
    let mut c = toy_config();
    c.lengths.relation = 5;
    assert_eq!(bad(c.clone()), 2);
    c.ablation.no_tem = true;
    assert!(TecoModel::<f64>::new(c, &mut SplitRng::new(0)).is_ok());
    assert_eq!(
        bad(with(Ablation {
            modalities: Modalities::Va,
            ..Ablation::default()
        })),
        2
    );
    assert_eq!(
        bad(with(Ablation {
            modalities: Modalities::Tv,
            no_maf: true,
            ..Ablation::default()
        })),
        2
    );
    assert_eq!(
        bad(ModelConfig {
            gamma: 1.2,
            ..toy_config()
        }),
        2
    );
    assert_eq!(
        bad(ModelConfig {
            epsilon: -1.0,
            ..toy_config()
        }),
        2
    );
    assert_eq!(
        bad(ModelConfig {
            fusion_dropout: 1.0,
            ..toy_config()
        }),
        2
    );
}

#[test]
fn wrong_input_shape_is_data_error() {
    let cfg = toy_config();
    let model = TecoModel::<f64>::new(cfg.clone(), &mut SplitRng::new(0)).unwrap();
    let mut input = toy_input(&cfg, 1, 0);
    input.vision = Tensor::zeros(&[7, 5]);
    let mut g = Graph::new();
    let err = model
        .trace(&mut g, &input, Mode::Eval, &mut SplitRng::new(0))
        .unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn alpha_override_reaches_both_branches() {
    let cfg = toy_config();
    let model = TecoModel::<f64>::new(cfg.clone(), &mut SplitRng::new(1)).unwrap();
    let input = toy_input::<f64>(&cfg, 2, 0);
    let mut g = Graph::new();
    let t = model
        .trace_with(
            &mut g,
            &model.params,
            &input,
            Mode::Eval,
            &mut SplitRng::new(0),
            Some(1.0),
        )
        .unwrap();
    assert_eq!(g.value(t.alpha_xr.unwrap()).item(), 1.0);
    assert_eq!(g.value(t.alpha_xw.unwrap()).item(), 1.0);
    let mut b = input.clone();
    b.relations[2] = b.relations[2].map(|v| v + 1.0);
    let mut g2 = Graph::new();
    let t2 = model
        .trace_with(
            &mut g2,
            &model.params,
            &b,
            Mode::Eval,
            &mut SplitRng::new(0),
            Some(1.0),
        )
        .unwrap();
    assert_eq!(g.value(t.logits), g2.value(t2.logits));
}

#[test]
fn same_seed_builds_identical_models() {
    let a = TecoModel::<f32>::new(toy_config(), &mut SplitRng::new(9)).unwrap();
    let b = TecoModel::<f32>::new(toy_config(), &mut SplitRng::new(9)).unwrap();
    for (p, q) in a.params.iter().zip(b.params.iter()) {
        assert_eq!(p.name, q.name);
        assert_eq!(p.value, q.value);
    }
}

#[test]
fn variant_names_round_trip() {
    for v in Variant::ALL {
        assert_eq!(Variant::parse(v.name()).unwrap(), v);
    }
    assert_eq!(Variant::parse("w/o_TEM").unwrap_err().exit_code(), 2);
    for m in [
        Modalities::Tva,
        Modalities::Tv,
        Modalities::Ta,
        Modalities::Va,
    ] {
        assert_eq!(Modalities::parse(m.name()).unwrap(), m);
    }
}
