//! Classifier head: pooler, dropout, and the final linear map to class logits.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mode, NodeId, ParamStore};
use crate::error::{Result, TecoError};
use crate::nn::{mean_pool, Linear};
use crate::rng::SplitRng;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// First sequence position, CLS-style.
    #[default]
    First,
    Mean,
}

impl Pooling {
    pub fn name(self) -> &'static str {
        match self {
            Pooling::First => "first",
            Pooling::Mean => "mean",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(Pooling::First),
            "mean" => Ok(Pooling::Mean),
            _ => Err(TecoError::Config(format!(
                "unknown pooling {s:?} (expected first or mean)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Head {
    pub pooler: Linear,
    pub classifier: Linear,
    pub pooling: Pooling,
    pub dropout: f64,
}

impl Head {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        d: usize,
        num_classes: usize,
        pooling: Pooling,
        dropout: f64,
        rng: &mut SplitRng,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(TecoError::Config(format!(
                "head.dropout must lie in [0, 1), got {dropout}"
            )));
        }
        Ok(Self {
            pooler: Linear::new(store, "head.pooler", d, d, rng)?,
            classifier: Linear::new(store, "head.classifier", d, num_classes, rng)?,
            pooling,
            dropout,
        })
    }

    /// Logits `[1, N]` for one fused sequence `z_bar: [l, d]`. `valid`
    /// restricts mean pooling to the unpadded prefix.
    pub fn classify<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        z_bar: NodeId,
        valid: Option<usize>,
        mode: Mode,
        rng: &mut SplitRng,
    ) -> Result<NodeId> {
        let pooled = match self.pooling {
            Pooling::First => g.narrow(z_bar, 0, 0, 1)?,
            Pooling::Mean => mean_pool(g, z_bar, valid)?,
        };
        let hidden = self.pooler.forward(g, store, pooled)?;
        let hidden = g.tanh(hidden);
        let hidden = g.dropout(hidden, self.dropout, mode, rng)?;
        self.classifier.forward(g, store, hidden)
    }
}
