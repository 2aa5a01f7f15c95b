//! The full fusion network and its ablation switches.
//!
//! Ablations are structural: a removed component registers no parameters and
//! contributes no graph nodes.

use std::fmt;

use crate::autodiff::{Graph, Mode, NodeId, ParamStore};
use crate::bundle::{DatasetManifest, Dims, Lengths, UtteranceRecord, ValidLengths};
use crate::error::{Result, TecoError};
use crate::head::{Head, Pooling};
use crate::maf::{beta_combine, check_epsilon, gated_fuse, Aligner, FinalNorm, GateBranch};
use crate::rng::SplitRng;
use crate::tem::{check_gamma, Seq, Tem, TemSettings};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Modalities {
    #[default]
    Tva,
    Tv,
    Ta,
    Va,
}

impl Modalities {
    pub fn name(self) -> &'static str {
        match self {
            Modalities::Tva => "TVA",
            Modalities::Tv => "TV",
            Modalities::Ta => "TA",
            Modalities::Va => "VA",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "TVA" => Ok(Modalities::Tva),
            "TV" => Ok(Modalities::Tv),
            "TA" => Ok(Modalities::Ta),
            "VA" => Ok(Modalities::Va),
            _ => Err(TecoError::Config(format!(
                "unknown modalities {s:?} (expected TVA, TV, TA or VA)"
            ))),
        }
    }

    pub fn text(self) -> bool {
        self != Modalities::Va
    }

    pub fn vision(self) -> bool {
        self != Modalities::Ta
    }

    pub fn audio(self) -> bool {
        self != Modalities::Tv
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Ablation {
    pub modalities: Modalities,
    pub no_tem: bool,
    pub no_maf: bool,
    pub no_dual: bool,
}

/// Named single-switch ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    WTv,
    WTa,
    WVa,
    NoTem,
    NoMaf,
    NoDual,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::WTv,
        Variant::WTa,
        Variant::WVa,
        Variant::NoTem,
        Variant::NoMaf,
        Variant::NoDual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WTv => "w_TV",
            Variant::WTa => "w_TA",
            Variant::WVa => "w_VA",
            Variant::NoTem => "no_TEM",
            Variant::NoMaf => "no_MAF",
            Variant::NoDual => "no_dual",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                TecoError::Config(format!(
                    "unknown variant {s:?} (expected one of {})",
                    known.join(", ")
                ))
            })
    }

    /// `base` with this variant's switch applied. Removing text also removes
    /// the text enhancement, which has nothing to enhance.
    pub fn apply(self, base: Ablation) -> Ablation {
        match self {
            Variant::Full => base,
            Variant::WTv => Ablation {
                modalities: Modalities::Tv,
                ..base
            },
            Variant::WTa => Ablation {
                modalities: Modalities::Ta,
                ..base
            },
            Variant::WVa => Ablation {
                modalities: Modalities::Va,
                no_tem: true,
                ..base
            },
            Variant::NoTem => Ablation {
                no_tem: true,
                ..base
            },
            Variant::NoMaf => Ablation {
                no_maf: true,
                ..base
            },
            Variant::NoDual => Ablation {
                no_dual: true,
                ..base
            },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub dims: Dims,
    pub lengths: Lengths,
    pub num_classes: usize,
    pub gamma: f64,
    pub share_enhance_weight: bool,
    pub epsilon: f64,
    pub fusion_dropout: f64,
    pub head_dropout: f64,
    pub pooling: Pooling,
    /// Exclude padded rows from pooling and alignment.
    pub use_mask: bool,
    pub layer_norm_eps: f64,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dims: Dims::default(),
            lengths: Lengths::default(),
            num_classes: 20,
            gamma: 0.9,
            share_enhance_weight: true,
            epsilon: 0.5,
            fusion_dropout: 0.1,
            head_dropout: 0.1,
            pooling: Pooling::First,
            use_mask: false,
            layer_norm_eps: 1e-5,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    pub fn from_manifest(manifest: &DatasetManifest) -> Self {
        Self {
            dims: manifest.dims,
            lengths: manifest.lengths,
            num_classes: manifest.num_classes(),
            ..Self::default()
        }
    }

    fn uses_tem(&self) -> bool {
        self.ablation.modalities.text() && !self.ablation.no_tem
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(TecoError::Config(m));
        if self.num_classes < 2 {
            return cfg(format!("need at least 2 classes, got {}", self.num_classes));
        }
        let (d, l) = (self.dims, self.lengths);
        if [
            d.text, d.vision, d.audio, l.text, l.vision, l.audio, l.relation,
        ]
        .contains(&0)
        {
            return cfg("dims and lengths must be positive".into());
        }
        check_gamma(self.gamma)?;
        check_epsilon(self.epsilon)?;
        for (key, rate) in [
            ("maf.dropout", self.fusion_dropout),
            ("head.dropout", self.head_dropout),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return cfg(format!("{key} must lie in [0, 1), got {rate}"));
            }
        }
        if self.layer_norm_eps.is_nan() || self.layer_norm_eps <= 0.0 {
            return cfg(format!(
                "layer norm eps must be positive, got {}",
                self.layer_norm_eps
            ));
        }
        let a = self.ablation;
        if a.modalities == Modalities::Va && !a.no_tem {
            return cfg(
                "ablation.modalities=VA removes text and requires ablation.no_tem=true".into(),
            );
        }
        if a.no_maf && a.modalities != Modalities::Tva {
            return cfg(format!(
                "ablation.no_maf removes all non-verbal fusion; ablation.modalities must be TVA, got {}",
                a.modalities.name()
            ));
        }
        if self.uses_tem() && l.relation != l.text {
            return cfg(format!(
                "relation length {} must equal text length {} when the enhancement module is on",
                l.relation, l.text
            ));
        }
        Ok(())
    }
}

/// One sample's features converted to the model's precision.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput<T> {
    pub text: Tensor<T>,
    pub vision: Tensor<T>,
    pub audio: Tensor<T>,
    /// Generated xR, generated xW, retrieved xR, retrieved xW.
    pub relations: [Tensor<T>; 4],
    pub valid: ValidLengths,
    pub label: usize,
}

impl<T: Real> ModelInput<T> {
    pub fn from_record(r: &UtteranceRecord) -> Self {
        let q = &r.relations;
        Self {
            text: r.text.cast(),
            vision: r.vision.cast(),
            audio: r.audio.cast(),
            relations: [
                q.gen_xreact.cast(),
                q.gen_xwant.cast(),
                q.ret_xreact.cast(),
                q.ret_xwant.cast(),
            ],
            valid: r.valid_lengths(),
            label: r.label,
        }
    }
}

#[derive(Clone, Debug)]
struct Layout {
    tem: Option<Tem>,
    vision: Option<(Aligner, GateBranch)>,
    audio: Option<(Aligner, GateBranch)>,
    norm: FinalNorm,
    head: Head,
}

/// Intermediate nodes of one forward pass, for inspection.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `[1, N]`.
    pub logits: NodeId,
    pub z_t: Option<NodeId>,
    pub z_bar: NodeId,
    pub beta: Option<NodeId>,
    pub alpha_xr: Option<NodeId>,
    pub alpha_xw: Option<NodeId>,
    pub align_vision: Option<NodeId>,
    pub align_audio: Option<NodeId>,
    pub gates: Vec<NodeId>,
}

#[derive(Clone, Debug)]
pub struct TecoModel<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    layout: Layout,
}

impl<T: Real> TecoModel<T> {
    pub fn new(config: ModelConfig, rng: &mut SplitRng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let (d, l) = (config.dims, config.lengths);
        let m = config.ablation.modalities;
        let tem = if config.uses_tem() {
            let settings = TemSettings {
                gamma: config.gamma,
                share_enhance_weight: config.share_enhance_weight,
                dual: !config.ablation.no_dual,
            };
            Some(Tem::new(&mut params, d.text, settings, rng)?)
        } else {
            None
        };
        let mut nonverbal = |on: bool, name: &str, dim: usize, steps: usize| -> Result<_> {
            if !on || config.ablation.no_maf {
                return Ok(None);
            }
            let aligner = Aligner::new(&mut params, name, dim, d.text, steps, l.text, rng)?;
            let gate = GateBranch::new(&mut params, name, d.text, rng)?;
            Ok(Some((aligner, gate)))
        };
        let vision = nonverbal(m.vision(), "maf.vision", d.vision, l.vision)?;
        let audio = nonverbal(m.audio(), "maf.audio", d.audio, l.audio)?;
        let norm = FinalNorm::new(
            &mut params,
            "fusion.norm",
            d.text,
            config.layer_norm_eps,
            config.fusion_dropout,
        )?;
        let head = Head::new(
            &mut params,
            d.text,
            config.num_classes,
            config.pooling,
            config.head_dropout,
            rng,
        )?;
        Ok(Self {
            config,
            params,
            layout: Layout {
                tem,
                vision,
                audio,
                norm,
                head,
            },
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.numel()
    }

    fn seq(&self, node: NodeId, valid: usize) -> Seq {
        if self.config.use_mask {
            Seq::masked(node, valid)
        } else {
            Seq::new(node)
        }
    }

    /// Forward pass for one sample against an explicit parameter store with
    /// this model's layout. `alpha_override` pins both dual-perspective
    /// weights.
    pub fn trace_with(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        input: &ModelInput<T>,
        mode: Mode,
        rng: &mut SplitRng,
        alpha_override: Option<f64>,
    ) -> Result<ForwardTrace> {
        let (d, l) = (self.config.dims, self.config.lengths);
        let v = input.valid;
        let lay = &self.layout;
        let (mut alpha_xr, mut alpha_xw, mut beta) = (None, None, None);
        let mut gates = Vec::new();

        let z_t = if self.config.ablation.modalities.text() {
            if input.text.shape() != [l.text, d.text] {
                return Err(TecoError::shape(
                    "text input",
                    input.text.shape(),
                    &[l.text, d.text],
                ));
            }
            let h_t = g.constant(input.text.clone());
            let h_t = self.seq(h_t, v.text);
            Some(match &lay.tem {
                Some(tem) => {
                    let mut rel = [Seq::new(h_t.node); 4];
                    for (k, t) in input.relations.iter().enumerate() {
                        if t.shape() != [l.relation, d.text] {
                            return Err(TecoError::shape(
                                "relation input",
                                t.shape(),
                                &[l.relation, d.text],
                            ));
                        }
                        let n = g.constant(t.clone());
                        rel[k] = self.seq(n, v.relation[k]);
                    }
                    let out = tem.forward(g, store, h_t, rel, alpha_override)?;
                    (alpha_xr, alpha_xw) = (out.alpha_xr, out.alpha_xw);
                    out.z_t
                }
                None => h_t.node,
            })
        } else {
            None
        };

        let mut aligned =
            |branch: &Option<(Aligner, GateBranch)>, x: &Tensor<T>, valid: usize| -> Result<_> {
                match branch {
                    Some((aligner, gate)) => {
                        let n = g.constant(x.clone());
                        let a = aligner.align(g, store, self.seq(n, valid))?;
                        Ok(Some((a, *gate)))
                    }
                    None => Ok(None),
                }
            };
        let vis = aligned(&lay.vision, &input.vision, v.vision)?;
        let aud = aligned(&lay.audio, &input.audio, v.audio)?;

        let z_bar = match (z_t, vis, aud) {
            (Some(z_t), None, None) => lay.norm.apply(g, store, z_t, mode, rng)?,
            (Some(z_t), vis, aud) => {
                let present: Vec<_> = [vis, aud].into_iter().flatten().collect();
                let branches: Vec<_> = present.iter().map(|(a, gate)| (gate, a.z, z_t)).collect();
                let fused = gated_fuse(g, store, &branches)?;
                gates = fused.gates;
                let out = beta_combine(
                    g,
                    store,
                    &lay.norm,
                    z_t,
                    fused.h_nv,
                    self.config.epsilon,
                    mode,
                    rng,
                )?;
                beta = Some(out.beta);
                out.z_bar
            }
            (None, Some((zv, gv)), Some((za, ga))) => {
                let fused = gated_fuse(g, store, &[(&gv, zv.z, za.z), (&ga, za.z, zv.z)])?;
                gates = fused.gates;
                lay.norm.apply(g, store, fused.h_nv, mode, rng)?
            }
            _ => return Err(TecoError::Config("model has no input path".into())),
        };
        let pool_valid = (self.config.use_mask && z_t.is_some()).then_some(v.text);
        let logits = lay.head.classify(g, store, z_bar, pool_valid, mode, rng)?;
        Ok(ForwardTrace {
            logits,
            z_t,
            z_bar,
            beta,
            alpha_xr,
            alpha_xw,
            align_vision: vis.map(|(a, _)| a.matrix),
            align_audio: aud.map(|(a, _)| a.matrix),
            gates,
        })
    }

    pub fn trace(
        &self,
        g: &mut Graph<T>,
        input: &ModelInput<T>,
        mode: Mode,
        rng: &mut SplitRng,
    ) -> Result<ForwardTrace> {
        self.trace_with(g, &self.params, input, mode, rng, None)
    }

    /// Stacked logits `[B, N]` for a batch.
    pub fn forward_batch_with(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        inputs: &[&ModelInput<T>],
        mode: Mode,
        rng: &mut SplitRng,
    ) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(TecoError::arg("forward_batch", "empty batch"));
        }
        let logits = inputs
            .iter()
            .map(|x| Ok(self.trace_with(g, store, x, mode, rng, None)?.logits))
            .collect::<Result<Vec<_>>>()?;
        g.concat(&logits, 0)
    }

    pub fn forward_batch(
        &self,
        g: &mut Graph<T>,
        inputs: &[&ModelInput<T>],
        mode: Mode,
        rng: &mut SplitRng,
    ) -> Result<NodeId> {
        self.forward_batch_with(g, &self.params, inputs, mode, rng)
    }

    /// Eval-mode argmax for one sample. Ties go to the lowest class index.
    pub fn predict_one(&self, input: &ModelInput<T>) -> Result<usize> {
        let mut g = Graph::new();
        let t = self.trace(&mut g, input, Mode::Eval, &mut SplitRng::new(0))?;
        let row = g.value(t.logits).data();
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        Ok(best)
    }
}

#[cfg(test)]
pub(crate) mod tests;
