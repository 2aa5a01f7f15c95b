//! Shared fixtures for the criterion benches.

use teco_core::bundle::ValidLengths;
use teco_core::coke::KnowledgeEntry;
use teco_core::{
    Dims, KnowledgeStore, Lengths, ModelConfig, ModelInput, SplitRng, TecoModel, Tensor,
};

/// A mid-sized configuration: wide enough to exercise the kernels, small
/// enough for criterion to sample quickly.
pub fn bench_config() -> ModelConfig {
    ModelConfig {
        dims: Dims {
            text: 64,
            vision: 32,
            audio: 48,
        },
        lengths: Lengths {
            text: 16,
            vision: 24,
            audio: 24,
            relation: 16,
        },
        num_classes: 20,
        ..ModelConfig::default()
    }
}

pub fn model(cfg: &ModelConfig) -> TecoModel<f32> {
    TecoModel::new(cfg.clone(), &mut SplitRng::new(0)).expect("valid bench config")
}

pub fn input(cfg: &ModelConfig, seed: u64) -> ModelInput<f32> {
    let mut rng = SplitRng::new(seed);
    let (d, l) = (cfg.dims, cfg.lengths);
    let mut r = |rows: usize, cols: usize| Tensor::randn(&[rows, cols], 1.0, &mut rng);
    ModelInput {
        text: r(l.text, d.text),
        vision: r(l.vision, d.vision),
        audio: r(l.audio, d.audio),
        relations: std::array::from_fn(|_| r(l.relation, d.text)),
        valid: ValidLengths {
            text: l.text,
            vision: l.vision,
            audio: l.audio,
            relation: [l.relation; 4],
        },
        label: (seed as usize) % cfg.num_classes,
    }
}

pub fn knowledge(entries: usize, dim: usize) -> KnowledgeStore {
    let mut rng = SplitRng::new(1);
    let entries = (0..entries)
        .map(|i| KnowledgeEntry {
            embedding: (0..dim).map(|_| rng.normal() as f32).collect(),
            xreact: format!("react {i}"),
            xwant: format!("want {i}"),
        })
        .collect();
    KnowledgeStore::new(entries).expect("non-empty store")
}
