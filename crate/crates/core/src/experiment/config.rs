//! Flat `key=value` experiment configuration with dotted keys.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::bundle::DatasetManifest;
use crate::error::{Result, TecoError};
use crate::head::Pooling;
use crate::model::{Ablation, Modalities, ModelConfig};
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Task {
    #[default]
    TwentyClass,
    Binary,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::TwentyClass => "twenty_class",
            Task::Binary => "binary",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "twenty_class" => Ok(Task::TwentyClass),
            "binary" => Ok(Task::Binary),
            _ => Err(TecoError::Config(format!(
                "unknown task {s:?} (expected twenty_class or binary)"
            ))),
        }
    }

    pub fn default_gamma(self) -> f64 {
        match self {
            Task::TwentyClass => 0.9,
            Task::Binary => 0.6,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Paths {
    pub bundle: Option<PathBuf>,
    pub knowledge: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Checkpoint directory read by `evaluate`; defaults to `<out>/checkpoint`.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub seed: u64,
    /// `None` picks the task default.
    pub gamma: Option<f64>,
    pub share_enhance_weight: bool,
    pub epsilon: f64,
    pub fusion_dropout: f64,
    pub head_dropout: f64,
    pub pooling: Pooling,
    pub use_mask: bool,
    pub layer_norm_eps: f64,
    pub ablation: Ablation,
    /// `train.seed` is not a key; runs derive it from `seed`.
    pub train: TrainConfig,
    pub paths: Paths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            task: Task::default(),
            seed: 0,
            gamma: None,
            share_enhance_weight: m.share_enhance_weight,
            epsilon: m.epsilon,
            fusion_dropout: m.fusion_dropout,
            head_dropout: m.head_dropout,
            pooling: m.pooling,
            use_mask: m.use_mask,
            layer_norm_eps: m.layer_norm_eps,
            ablation: m.ablation,
            train: TrainConfig::default(),
            paths: Paths::default(),
        }
    }
}

fn value<V: FromStr>(key: &str, raw: &str) -> Result<V> {
    raw.parse()
        .map_err(|_| TecoError::Config(format!("bad value {raw:?} for {key}")))
}

fn path(raw: &str) -> Option<PathBuf> {
    (!raw.is_empty()).then(|| PathBuf::from(raw))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

impl ExperimentConfig {
    pub const KEYS: [&'static str; 27] = [
        "task",
        "seed",
        "tem.gamma",
        "tem.share_enhance_weight",
        "maf.epsilon",
        "maf.dropout",
        "head.dropout",
        "head.pooling",
        "fusion.use_mask",
        "fusion.layer_norm_eps",
        "ablation.modalities",
        "ablation.no_tem",
        "ablation.no_maf",
        "ablation.no_dual",
        "train.batch_size",
        "train.eval_batch_size",
        "train.max_epochs",
        "train.patience",
        "train.lr",
        "train.weight_decay",
        "train.warmup_fraction",
        "train.beta1",
        "train.beta2",
        "train.adam_eps",
        "paths.bundle",
        "paths.knowledge",
        "paths.out",
    ];

    /// Set one key. `paths.checkpoint` is accepted in addition to [`Self::KEYS`].
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let raw = raw.trim();
        let t = &mut self.train;
        match key {
            "task" => self.task = Task::parse(raw)?,
            "seed" => self.seed = value(key, raw)?,
            "tem.gamma" => {
                self.gamma = if raw == "auto" {
                    None
                } else {
                    Some(value(key, raw)?)
                }
            }
            "tem.share_enhance_weight" => self.share_enhance_weight = value(key, raw)?,
            "maf.epsilon" => self.epsilon = value(key, raw)?,
            "maf.dropout" => self.fusion_dropout = value(key, raw)?,
            "head.dropout" => self.head_dropout = value(key, raw)?,
            "head.pooling" => self.pooling = Pooling::parse(raw)?,
            "fusion.use_mask" => self.use_mask = value(key, raw)?,
            "fusion.layer_norm_eps" => self.layer_norm_eps = value(key, raw)?,
            "ablation.modalities" => self.ablation.modalities = Modalities::parse(raw)?,
            "ablation.no_tem" => self.ablation.no_tem = value(key, raw)?,
            "ablation.no_maf" => self.ablation.no_maf = value(key, raw)?,
            "ablation.no_dual" => self.ablation.no_dual = value(key, raw)?,
            "train.batch_size" => t.batch_size = value(key, raw)?,
            "train.eval_batch_size" => t.eval_batch_size = value(key, raw)?,
            "train.max_epochs" => t.max_epochs = value(key, raw)?,
            "train.patience" => t.patience = value(key, raw)?,
            "train.lr" => t.lr = value(key, raw)?,
            "train.weight_decay" => t.weight_decay = value(key, raw)?,
            "train.warmup_fraction" => t.warmup_fraction = value(key, raw)?,
            "train.beta1" => t.beta1 = value(key, raw)?,
            "train.beta2" => t.beta2 = value(key, raw)?,
            "train.adam_eps" => t.adam_eps = value(key, raw)?,
            "paths.bundle" => self.paths.bundle = path(raw),
            "paths.knowledge" => self.paths.knowledge = path(raw),
            "paths.out" => self.paths.out = path(raw),
            "paths.checkpoint" => self.paths.checkpoint = path(raw),
            _ => return Err(TecoError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Apply `key=value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                TecoError::Config(format!("line {}: expected key=value, got {line:?}", n + 1))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| TecoError::io(path, e))?;
        Self::parse(&text)
    }

    /// Every key with its current value; parses back to an equal config.
    pub fn snapshot(&self) -> String {
        let t = &self.train;
        let a = &self.ablation;
        let gamma = self.gamma.map_or("auto".to_string(), |g| g.to_string());
        let values: [String; 27] = [
            self.task.name().into(),
            self.seed.to_string(),
            gamma,
            self.share_enhance_weight.to_string(),
            self.epsilon.to_string(),
            self.fusion_dropout.to_string(),
            self.head_dropout.to_string(),
            self.pooling.name().into(),
            self.use_mask.to_string(),
            self.layer_norm_eps.to_string(),
            a.modalities.name().into(),
            a.no_tem.to_string(),
            a.no_maf.to_string(),
            a.no_dual.to_string(),
            t.batch_size.to_string(),
            t.eval_batch_size.to_string(),
            t.max_epochs.to_string(),
            t.patience.to_string(),
            t.lr.to_string(),
            t.weight_decay.to_string(),
            t.warmup_fraction.to_string(),
            t.beta1.to_string(),
            t.beta2.to_string(),
            t.adam_eps.to_string(),
            show_path(&self.paths.bundle),
            show_path(&self.paths.knowledge),
            show_path(&self.paths.out),
        ];
        let mut out = String::new();
        for (k, v) in Self::KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k}={v}");
        }
        if self.paths.checkpoint.is_some() {
            let _ = writeln!(
                out,
                "paths.checkpoint={}",
                show_path(&self.paths.checkpoint)
            );
        }
        out
    }

    pub fn effective_gamma(&self) -> f64 {
        self.gamma.unwrap_or(self.task.default_gamma())
    }

    /// Training settings with the seed-derived shuffle and dropout seed.
    pub fn train_config(&self, train_seed: u64) -> TrainConfig {
        TrainConfig {
            seed: train_seed,
            ..self.train.clone()
        }
    }

    /// Model configuration for `manifest` under this experiment's task.
    pub fn model_config(&self, manifest: &DatasetManifest) -> Result<ModelConfig> {
        let num_classes = match self.task {
            Task::TwentyClass => manifest.num_classes(),
            Task::Binary => {
                if manifest.binary_map.is_none() {
                    return Err(TecoError::Config(
                        "task=binary needs a manifest with a binary_map".into(),
                    ));
                }
                2
            }
        };
        let cfg = ModelConfig {
            dims: manifest.dims,
            lengths: manifest.lengths,
            num_classes,
            gamma: self.effective_gamma(),
            share_enhance_weight: self.share_enhance_weight,
            epsilon: self.epsilon,
            fusion_dropout: self.fusion_dropout,
            head_dropout: self.head_dropout,
            pooling: self.pooling,
            use_mask: self.use_mask,
            layer_norm_eps: self.layer_norm_eps,
            ablation: self.ablation,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that need no data: model switches and training settings.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let Some(g) = self.gamma {
            crate::tem::check_gamma(g)?;
        }
        ModelConfig {
            num_classes: 2,
            gamma: self.effective_gamma(),
            epsilon: self.epsilon,
            fusion_dropout: self.fusion_dropout,
            head_dropout: self.head_dropout,
            layer_norm_eps: self.layer_norm_eps,
            ablation: self.ablation,
            ..ModelConfig::default()
        }
        .validate()
    }
}
