//! Deterministic synthetic bundles with controllable class signal per channel.
//!
//! Each channel (text, vision, audio, xReact relations, xWant relations) gets
//! one unit-norm direction per class, drawn once. A valid row of a sample is
//! `margin * signal * direction[class] + noise * noise_scale * N(0, I)`;
//! rows past the sample's valid length are zero padding. Setting a channel's
//! `signal` to 0 makes it pure noise.

use crate::coke::{retrieve, KnowledgeEntry, KnowledgeStore};
use crate::error::{Result, TecoError};
use crate::rng::SplitRng;
use crate::tensor::Tensor;

use super::{
    pad_or_truncate, Bundle, DatasetManifest, Dims, Lengths, RelationPhrases, RelationQuad, Split,
    UtteranceRecord,
};

const XREACT: [&str; 10] = [
    "happy",
    "sad",
    "frustrated",
    "grateful",
    "annoyed",
    "surprised",
    "embarrassed",
    "relieved",
    "nervous",
    "proud",
];

const XWANT: [&str; 10] = [
    "to have a good time",
    "to be left alone",
    "to scold someone",
    "to say thanks",
    "to complain",
    "to know more",
    "to apologize",
    "to relax",
    "to get help",
    "to show off",
];

/// Per-channel multipliers on the global margin and noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelSignal {
    pub signal: f64,
    pub noise: f64,
}

impl Default for ChannelSignal {
    fn default() -> Self {
        Self {
            signal: 1.0,
            noise: 1.0,
        }
    }
}

impl ChannelSignal {
    pub fn noise_only() -> Self {
        Self {
            signal: 0.0,
            noise: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub train_per_class: usize,
    pub valid_per_class: usize,
    pub test_per_class: usize,
    pub margin: f64,
    pub noise: f64,
    pub seed: u64,
    pub dims: Dims,
    pub lengths: Lengths,
    pub text: ChannelSignal,
    pub vision: ChannelSignal,
    pub audio: ChannelSignal,
    pub xreact: ChannelSignal,
    pub xwant: ChannelSignal,
    /// Draw valid lengths in `[ceil(l/2), l]` instead of always `l`.
    pub variable_lengths: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 20,
            train_per_class: 20,
            valid_per_class: 5,
            test_per_class: 5,
            margin: 5.0,
            noise: 1.0,
            seed: 0,
            dims: Dims {
                text: 16,
                vision: 16,
                audio: 16,
            },
            lengths: Lengths {
                text: 8,
                vision: 12,
                audio: 12,
                relation: 8,
            },
            text: ChannelSignal::default(),
            vision: ChannelSignal::default(),
            audio: ChannelSignal::default(),
            xreact: ChannelSignal::default(),
            xwant: ChannelSignal::default(),
            variable_lengths: true,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(TecoError::Config(format!(
                "margin must be >= 0, got {}",
                self.margin
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(TecoError::Config(format!(
                "noise must be >= 0, got {}",
                self.noise
            )));
        }
        if self.classes < 2 {
            return Err(TecoError::Config("need at least two classes".into()));
        }
        if self.train_per_class == 0 || self.valid_per_class == 0 || self.test_per_class == 0 {
            return Err(TecoError::Config(
                "every split needs at least one sample per class".into(),
            ));
        }
        let (d, l) = (self.dims, self.lengths);
        if [
            d.text, d.vision, d.audio, l.text, l.vision, l.audio, l.relation,
        ]
        .contains(&0)
        {
            return Err(TecoError::Config(
                "synthetic dims and lengths must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn unit_directions(classes: usize, dim: usize, rng: &mut SplitRng) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-9 {
                break v.into_iter().map(|x| x / n).collect();
            }
        })
        .collect()
}

struct Channel {
    directions: Vec<Vec<f64>>,
    profile: ChannelSignal,
}

struct Sampler<'a> {
    cfg: &'a SyntheticConfig,
    rng: SplitRng,
}

impl Sampler<'_> {
    fn valid_len(&mut self, len: usize) -> usize {
        if self.cfg.variable_lengths {
            self.rng.int_inclusive(len.div_ceil(2), len)
        } else {
            len
        }
    }

    fn sequence(&mut self, ch: &Channel, class: usize, len: usize) -> Result<(Tensor<f32>, usize)> {
        let valid = self.valid_len(len);
        let dir = &ch.directions[class];
        let dim = dir.len();
        let scale = self.cfg.margin * ch.profile.signal;
        let sd = self.cfg.noise * ch.profile.noise;
        let mut data = Vec::with_capacity(valid * dim);
        for _ in 0..valid {
            for &u in dir {
                data.push((scale * u + sd * self.rng.normal()) as f32);
            }
        }
        let raw = Tensor::new(vec![valid, dim], data)?;
        let p = pad_or_truncate(&raw, len)?;
        Ok((p.data, p.valid_len))
    }

    fn query(&mut self, dirs: &[Vec<f64>], class: usize) -> Vec<f32> {
        dirs[class]
            .iter()
            .map(|&u| (u + 0.25 * self.cfg.noise * self.rng.normal()) as f32)
            .collect()
    }
}

/// Generate a bundle and the matching knowledge store (one entry per class).
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<(Bundle, KnowledgeStore)> {
    cfg.validate()?;
    let mut root = SplitRng::new(cfg.seed);
    let n = cfg.classes;
    let d = cfg.dims;
    let mk = |rng: &mut SplitRng, dim: usize, profile: ChannelSignal| Channel {
        directions: unit_directions(n, dim, rng),
        profile,
    };
    let text = mk(&mut root, d.text, cfg.text);
    let vision = mk(&mut root, d.vision, cfg.vision);
    let audio = mk(&mut root, d.audio, cfg.audio);
    let xreact = mk(&mut root, d.text, cfg.xreact);
    let xwant = mk(&mut root, d.text, cfg.xwant);
    let query_dirs = unit_directions(n, d.text, &mut root);

    let store = KnowledgeStore::new(
        (0..n)
            .map(|c| KnowledgeEntry {
                embedding: query_dirs[c].iter().map(|&v| v as f32).collect(),
                xreact: XREACT[c % XREACT.len()].into(),
                xwant: XWANT[c % XWANT.len()].into(),
            })
            .collect(),
    )?;

    let mut s = Sampler {
        cfg,
        rng: root.split(),
    };
    let l = cfg.lengths;
    let mut records = Vec::new();
    for split in Split::ALL {
        let per_class = match split {
            Split::Train => cfg.train_per_class,
            Split::Valid => cfg.valid_per_class,
            Split::Test => cfg.test_per_class,
        };
        let mut index = 0;
        for class in 0..n {
            for _ in 0..per_class {
                let (t, tv) = s.sequence(&text, class, l.text)?;
                let (v, vv) = s.sequence(&vision, class, l.vision)?;
                let (a, av) = s.sequence(&audio, class, l.audio)?;
                let (gr, grv) = s.sequence(&xreact, class, l.relation)?;
                let (gw, gwv) = s.sequence(&xwant, class, l.relation)?;
                let (rr, rrv) = s.sequence(&xreact, class, l.relation)?;
                let (rw, rwv) = s.sequence(&xwant, class, l.relation)?;
                let query = s.query(&query_dirs, class);
                let retrieved = retrieve(&query, &store)?;
                let g = (class + 3) % XREACT.len();
                records.push(UtteranceRecord {
                    id: format!("{}-{index:05}", split.name()),
                    text: t,
                    vision: v,
                    audio: a,
                    relations: RelationQuad {
                        gen_xreact: gr,
                        gen_xwant: gw,
                        ret_xreact: rr,
                        ret_xwant: rw,
                        phrases: RelationPhrases {
                            gen_xreact: XREACT[g].into(),
                            gen_xwant: XWANT[g].into(),
                            ret_xreact: retrieved.xreact,
                            ret_xwant: retrieved.xwant,
                        },
                        valid_lens: [grv, gwv, rrv, rwv],
                    },
                    label: class,
                    split,
                    text_valid: tv,
                    vision_valid: vv,
                    audio_valid: av,
                    query_embedding: Some(query),
                });
                index += 1;
            }
        }
    }

    let manifest = DatasetManifest {
        class_names: (0..n).map(|c| format!("intent_{c:02}")).collect(),
        binary_map: Some((0..n).map(|c| (c % 2) as u8).collect()),
        dims: cfg.dims,
        lengths: cfg.lengths,
    };
    Ok((Bundle { manifest, records }, store))
}
