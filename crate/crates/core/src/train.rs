//! AdamW with linear warmup and decay, early stopping on validation macro-F1.

use rayon::prelude::*;

use crate::autodiff::{Graph, Mode, ParamStore};
use crate::error::{Result, TecoError};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::model::{ModelInput, TecoModel};
use crate::rng::SplitRng;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without strict validation improvement before stopping.
    pub patience: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Share of all scheduled steps spent warming up.
    pub warmup_fraction: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            eval_batch_size: 8,
            max_epochs: 100,
            patience: 8,
            lr: 2e-5,
            weight_decay: 1e-2,
            warmup_fraction: 0.1,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(TecoError::Config(m));
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return cfg("batch sizes must be positive".into());
        }
        if self.patience == 0 {
            return cfg("train.patience must be positive".into());
        }
        if self.max_epochs > 0 && self.patience > self.max_epochs {
            return cfg(format!(
                "train.patience ({}) exceeds train.max_epochs ({})",
                self.patience, self.max_epochs
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return cfg(format!("train.lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return cfg(format!(
                "train.weight_decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return cfg(format!(
                "train.warmup_fraction must lie in [0, 1], got {}",
                self.warmup_fraction
            ));
        }
        if !((0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0)
        {
            return cfg("Adam betas must lie in [0, 1) and eps must be positive".into());
        }
        Ok(())
    }
}

/// Linear ramp from 0 to `peak` over `warmup` steps, then linear decay to 0
/// at `total` steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup: usize,
    pub total: usize,
}

impl LrSchedule {
    pub fn new(peak: f64, warmup_fraction: f64, total: usize) -> Self {
        let warmup = ((warmup_fraction * total as f64).round() as usize).min(total);
        Self {
            peak,
            warmup,
            total,
        }
    }

    pub fn at(&self, step: usize) -> f64 {
        if step < self.warmup {
            self.peak * step as f64 / self.warmup as f64
        } else if self.total <= self.warmup {
            self.peak
        } else {
            let left = self.total.saturating_sub(step) as f64;
            self.peak * left / (self.total - self.warmup) as f64
        }
    }
}

/// Adam with decoupled weight decay, applied to every parameter.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: i32,
}

impl<T: Real> AdamW<T> {
    pub fn new(store: &ParamStore<T>, cfg: &TrainConfig) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|p| vec![T::zero(); p.value.numel()])
                .collect()
        };
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// One update from the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let one = T::one();
        let c1 = T::lit(1.0 - self.beta1.powi(self.t));
        let c2 = T::lit(1.0 - self.beta2.powi(self.t));
        let shrink = T::lit(1.0 - lr * self.weight_decay);
        let (lr, eps) = (T::lit(lr), T::lit(self.eps));
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grads = p.grad.data().to_vec();
            for (((w, g), m), v) in p.value.data_mut().iter_mut().zip(grads).zip(m).zip(v) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + eps);
                *w = *w * shrink - lr * update;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_f1: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitReport {
    pub history: Vec<EpochRecord>,
    pub step_losses: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub best_val_f1: Option<f64>,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_acc,val_f1,lr\n");
    for r in history {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6e}\n",
            r.epoch, r.train_loss, r.val_acc, r.val_f1, r.lr
        ));
    }
    out
}

/// Eval-mode predictions in input order. Chunks of `batch` run in parallel.
pub fn predict<T: Real>(
    model: &TecoModel<T>,
    inputs: &[ModelInput<T>],
    batch: usize,
) -> Result<Vec<usize>> {
    let chunks: Vec<Result<Vec<usize>>> = inputs
        .par_chunks(batch.max(1))
        .map(|c| c.iter().map(|x| model.predict_one(x)).collect())
        .collect();
    Ok(chunks.into_iter().collect::<Result<Vec<_>>>()?.concat())
}

pub fn evaluate<T: Real>(
    model: &TecoModel<T>,
    inputs: &[ModelInput<T>],
    batch: usize,
) -> Result<MetricsReport> {
    let preds = predict(model, inputs, batch)?;
    let labels: Vec<usize> = inputs.iter().map(|x| x.label).collect();
    compute_metrics(&preds, &labels, model.config.num_classes)
}

fn first_non_finite<T: Real>(store: &ParamStore<T>) -> Option<String> {
    let bad = |t: &Tensor<T>| !t.is_finite();
    store
        .iter()
        .find(|p| bad(&p.value))
        .map(|p| format!("parameter {} has a non-finite value", p.name))
        .or_else(|| {
            store
                .iter()
                .find(|p| bad(&p.grad))
                .map(|p| format!("parameter {} has a non-finite gradient", p.name))
        })
}

/// Train `model` in place and leave it holding the best-validation
/// parameters. With `max_epochs == 0` the model is untouched.
pub fn fit<T: Real>(
    model: &mut TecoModel<T>,
    train: &[ModelInput<T>],
    valid: &[ModelInput<T>],
    cfg: &TrainConfig,
) -> Result<FitReport> {
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(TecoError::Data(
            "training needs non-empty train and valid splits".into(),
        ));
    }
    let n = model.config.num_classes;
    if let Some(x) = train.iter().chain(valid).find(|x| x.label >= n) {
        return Err(TecoError::Data(format!(
            "label {} out of range for {n} classes",
            x.label
        )));
    }
    let mut report = FitReport::default();
    if cfg.max_epochs == 0 {
        return Ok(report);
    }

    let mut rng = SplitRng::new(cfg.seed);
    let mut order_rng = rng.split();
    let mut dropout_rng = rng.split();
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let schedule = LrSchedule::new(
        cfg.lr,
        cfg.warmup_fraction,
        cfg.max_epochs * steps_per_epoch,
    );
    let mut opt = AdamW::new(&model.params, cfg);
    let mut best: Option<(f64, ParamStore<T>)> = None;
    let mut stale = 0;
    let mut step = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let inputs: Vec<&ModelInput<T>> = batch.iter().map(|&i| &train[i]).collect();
            let labels: Vec<usize> = inputs.iter().map(|x| x.label).collect();
            let mut g = Graph::new();
            let logits = model.forward_batch(&mut g, &inputs, Mode::Train, &mut dropout_rng)?;
            let loss = g.cross_entropy(logits, &labels)?;
            let value = g.value(loss).item().as_f64();
            model.params.zero_grads();
            g.backward(loss)?;
            g.accumulate_param_grads(&mut model.params);
            if !value.is_finite() {
                let culprit = first_non_finite(&model.params)
                    .unwrap_or_else(|| "no parameter is non-finite".into());
                return Err(TecoError::Divergence(format!(
                    "loss became {value} at epoch {epoch}, step {step}; {culprit}"
                )));
            }
            lr = schedule.at(step);
            opt.step(&mut model.params, lr);
            if let Some(culprit) = first_non_finite(&model.params) {
                return Err(TecoError::Divergence(format!(
                    "update at epoch {epoch}, step {step} diverged; {culprit}"
                )));
            }
            report.step_losses.push(value);
            loss_sum += value * batch.len() as f64;
            step += 1;
        }

        let m = evaluate(model, valid, cfg.eval_batch_size)?;
        report.history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_acc: m.acc,
            val_f1: m.macro_f1,
            lr,
        });
        if best.as_ref().is_none_or(|(f1, _)| m.macro_f1 > *f1) {
            best = Some((m.macro_f1, model.params.clone()));
            report.best_epoch = Some(epoch);
            report.best_val_f1 = Some(m.macro_f1);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok(report)
}
