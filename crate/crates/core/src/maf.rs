//! Multimodal alignment fusion: align vision and audio to the text length,
//! gate each non-verbal stream on the text, and add the result to the text
//! feature under a norm-ratio cap.

use crate::autodiff::{Graph, Mode, NodeId, ParamId, ParamStore};
use crate::error::{Result, TecoError};
use crate::nn::{Linear, Lstm};
use crate::rng::SplitRng;
use crate::tem::Seq;
use crate::tensor::{Real, Tensor};

/// Additive logit for padded timesteps when masking is enabled.
const MASKED_LOGIT: f64 = -1e9;

/// Projection, LSTM and per-timestep alignment head for one non-verbal
/// modality.
#[derive(Clone, Debug)]
pub struct Aligner {
    pub proj: Linear,
    pub lstm: Lstm,
    pub head: Linear,
    pub steps: usize,
    pub text_len: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct Alignment {
    /// `[l^S, d]` aligned features.
    pub z: NodeId,
    /// `[l^S, steps]`, rows sum to one.
    pub matrix: NodeId,
}

impl Aligner {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        input_dim: usize,
        d: usize,
        steps: usize,
        text_len: usize,
        rng: &mut SplitRng,
    ) -> Result<Self> {
        Ok(Self {
            proj: Linear::new(store, &format!("{name}.proj"), input_dim, d, rng)?,
            lstm: Lstm::new(store, &format!("{name}.lstm"), d, d, rng)?,
            head: Linear::new(store, &format!("{name}.align"), d, text_len, rng)?,
            steps,
            text_len,
        })
    }

    pub fn align<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Seq,
    ) -> Result<Alignment> {
        let shape = g.shape(x.node).to_vec();
        if shape != [self.steps, self.proj.in_dim] {
            return Err(TecoError::shape(
                "ctc_align",
                &shape,
                &[self.steps, self.proj.in_dim],
            ));
        }
        let projected = self.proj.forward(g, store, x.node)?;
        let states = self.lstm.sequence(g, store, projected)?;
        let mut logits = self.head.forward(g, store, states)?;
        if let Some(v) = x.valid.filter(|&v| v < self.steps) {
            let mut mask = vec![T::zero(); self.steps * self.text_len];
            mask[v * self.text_len..].fill(T::lit(MASKED_LOGIT));
            let mask = g.constant(Tensor::new(vec![self.steps, self.text_len], mask)?);
            logits = g.add(logits, mask)?;
        }
        let per_step = g.softmax(logits, 0)?;
        let matrix = g.transpose(per_step)?;
        let z = g.matmul(matrix, states)?;
        Ok(Alignment { z, matrix })
    }
}

/// Align vision and audio to the text length. Text passes through unchanged.
pub fn ctc_align<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    vision: &Aligner,
    audio: &Aligner,
    h_v: Seq,
    h_a: Seq,
) -> Result<(Alignment, Alignment)> {
    Ok((vision.align(g, store, h_v)?, audio.align(g, store, h_a)?))
}

/// Text-conditioned gate `f_MT` (2d → d) and value map `f_M` (d → d).
#[derive(Clone, Copy, Debug)]
pub struct GateBranch {
    pub gate: Linear,
    pub value: Linear,
}

impl GateBranch {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        rng: &mut SplitRng,
    ) -> Result<Self> {
        Ok(Self {
            gate: Linear::new(store, &format!("{name}.gate"), 2 * d, d, rng)?,
            value: Linear::new(store, &format!("{name}.value"), d, d, rng)?,
        })
    }

    /// Returns `(gate, gate ∘ value(z))` where the gate is
    /// `ReLU(f_MT([z ∥ cond]))`.
    pub fn apply<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        z: NodeId,
        cond: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let joined = g.concat(&[z, cond], 1)?;
        let pre = self.gate.forward(g, store, joined)?;
        let gate = g.relu(pre);
        let value = self.value.forward(g, store, z)?;
        let out = g.mul(gate, value)?;
        Ok((gate, out))
    }
}

#[derive(Clone, Debug)]
pub struct GatedOutput {
    pub h_nv: NodeId,
    /// One gate per branch, in input order.
    pub gates: Vec<NodeId>,
}

/// Sum of gated branches. Each entry is `(branch, z_m, conditioning)`.
pub fn gated_fuse<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    branches: &[(&GateBranch, NodeId, NodeId)],
) -> Result<GatedOutput> {
    let mut gates = Vec::with_capacity(branches.len());
    let mut total: Option<NodeId> = None;
    for &(b, z, cond) in branches {
        let (gate, out) = b.apply(g, store, z, cond)?;
        gates.push(gate);
        total = Some(match total {
            Some(t) => g.add(t, out)?,
            None => out,
        });
    }
    let h_nv = total.ok_or_else(|| TecoError::arg("gated_fuse", "no branches"))?;
    Ok(GatedOutput { h_nv, gates })
}

/// The normalized block `f`: dropout then layer norm.
#[derive(Clone, Copy, Debug)]
pub struct FinalNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
    pub dropout: f64,
}

impl FinalNorm {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        eps: f64,
        dropout: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(TecoError::Config(format!(
                "dropout rate must lie in [0, 1), got {dropout}"
            )));
        }
        Ok(Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[d], T::one()))?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[d]))?,
            eps,
            dropout,
        })
    }

    pub fn apply<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: NodeId,
        mode: Mode,
        rng: &mut SplitRng,
    ) -> Result<NodeId> {
        let dropped = g.dropout(x, self.dropout, mode, rng)?;
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(dropped, gain, bias, T::lit(self.eps))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FusedRepresentation {
    pub z_bar: NodeId,
    /// Scalar node; a constant zero when the non-verbal feature vanishes.
    pub beta: NodeId,
}

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon >= 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(TecoError::Config(format!(
            "maf.epsilon must be finite and >= 0, got {epsilon}"
        )))
    }
}

/// `β = min(ε ‖z_T‖ / ‖h_nv‖, 1)` over whole tensors, `z̄ = f(z_T + β h_nv)`.
/// A zero `h_nv` gives `β = 0`.
#[allow(clippy::too_many_arguments)]
pub fn beta_combine<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    norm: &FinalNorm,
    z_t: NodeId,
    h_nv: NodeId,
    epsilon: f64,
    mode: Mode,
    rng: &mut SplitRng,
) -> Result<FusedRepresentation> {
    check_epsilon(epsilon)?;
    if g.shape(z_t) != g.shape(h_nv) {
        return Err(TecoError::shape(
            "beta_combine",
            g.shape(z_t),
            g.shape(h_nv),
        ));
    }
    let nh = g.l2_norm(h_nv);
    let (beta, combined) = if g.value(nh).item() == T::zero() {
        (g.constant(Tensor::scalar(T::zero())), z_t)
    } else {
        let nt = g.l2_norm(z_t);
        let ratio = g.div(nt, nh)?;
        let scaled = g.affine(ratio, T::lit(epsilon), T::zero());
        let beta = g.clamp_max(scaled, T::one());
        let weighted = g.mul_scalar(h_nv, beta)?;
        (beta, g.add(z_t, weighted)?)
    };
    let z_bar = norm.apply(g, store, combined, mode, rng)?;
    Ok(FusedRepresentation { z_bar, beta })
}
