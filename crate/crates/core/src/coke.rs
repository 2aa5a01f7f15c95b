//! Commonsense knowledge extraction: xReact/xWant retrieval by cosine
//! similarity, sentence templates, and relation-feature assembly.
//!
//! Phrase *generation* happens upstream; generated pairs arrive through the
//! feature bundle. Retrieval here is an exhaustive linear scan, so results are
//! exactly reproducible and ties resolve to the lowest entry index.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::bundle::{Padded, RelationPhrases, RelationQuad};
use crate::error::{Result, TecoError};
use crate::rng::SplitRng;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeEntry {
    pub embedding: Vec<f32>,
    pub xreact: String,
    pub xwant: String,
}

/// Immutable store of (sentence embedding, xReact phrase, xWant phrase).
#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeStore {
    entries: Vec<KnowledgeEntry>,
    dim: usize,
}

fn check_phrase(p: &str) -> Result<()> {
    if p.trim().is_empty() {
        return Err(TecoError::Data("empty relation phrase".into()));
    }
    if p.contains(['\t', '\n', '\r']) {
        return Err(TecoError::Data(format!(
            "phrase {p:?} contains a tab or newline"
        )));
    }
    Ok(())
}

impl KnowledgeStore {
    pub fn new(entries: Vec<KnowledgeEntry>) -> Result<Self> {
        let dim = entries
            .first()
            .map(|e| e.embedding.len())
            .ok_or_else(|| TecoError::Data("empty knowledge store".into()))?;
        if dim == 0 {
            return Err(TecoError::Data(
                "zero-dimensional knowledge embeddings".into(),
            ));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.embedding.len() != dim {
                return Err(TecoError::Data(format!(
                    "knowledge entry {i} has dim {} (expected {dim})",
                    e.embedding.len()
                )));
            }
            if e.embedding.iter().any(|v| !v.is_finite()) {
                return Err(TecoError::Data(format!(
                    "knowledge entry {i} has a non-finite embedding"
                )));
            }
            if e.embedding.iter().all(|&v| v == 0.0) {
                return Err(TecoError::Data(format!(
                    "knowledge entry {i} has a zero embedding"
                )));
            }
            check_phrase(&e.xreact)?;
            check_phrase(&e.xwant)?;
        }
        Ok(Self { entries, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[KnowledgeEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parse the tab-separated store format:
    /// `v1,v2,...,vn<TAB>xreact<TAB>xwant`. Blank lines and `#` comments are
    /// skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(TecoError::Data(format!(
                    "knowledge line {}: expected 3 tab-separated fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let embedding = fields[0]
                .split(',')
                .map(|v| v.trim().parse::<f32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| TecoError::Data(format!("knowledge line {}: {e}", lineno + 1)))?;
            entries.push(KnowledgeEntry {
                embedding,
                xreact: fields[1].to_string(),
                xwant: fields[2].to_string(),
            });
        }
        Self::new(entries)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let emb: Vec<String> = e.embedding.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}\t{}\t{}", emb.join(","), e.xreact, e.xwant);
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| TecoError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| TecoError::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhraseSource {
    Generated,
    Retrieved,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationPhrasePair {
    pub xreact: String,
    pub xwant: String,
    pub source: PhraseSource,
    /// Cosine similarity of the winning entry; retrieved pairs only.
    pub score: Option<f64>,
}

impl RelationPhrasePair {
    pub fn generated(xreact: impl Into<String>, xwant: impl Into<String>) -> Self {
        Self {
            xreact: xreact.into(),
            xwant: xwant.into(),
            source: PhraseSource::Generated,
            score: None,
        }
    }
}

/// `dot(a, b) / (|a| |b|)`, accumulated in `f64`.
pub fn cosine_similarity<T: Real>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(TecoError::shape(
            "cosine_similarity",
            &[a.len()],
            &[b.len()],
        ));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.as_f64(), y.as_f64());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(TecoError::Degenerate(
            "cosine similarity of a zero vector".into(),
        ));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Phrases of the store entry most similar to `query`.
pub fn retrieve(query: &[f32], store: &KnowledgeStore) -> Result<RelationPhrasePair> {
    if query.len() != store.dim {
        return Err(TecoError::shape("retrieve", &[query.len()], &[store.dim]));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in store.entries.iter().enumerate() {
        let s = cosine_similarity(query, &e.embedding)?;
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    let (i, score) = best.ok_or_else(|| TecoError::Data("empty knowledge store".into()))?;
    let e = &store.entries[i];
    Ok(RelationPhrasePair {
        xreact: e.xreact.clone(),
        xwant: e.xwant.clone(),
        source: PhraseSource::Retrieved,
        score: Some(score),
    })
}

/// The two relation sentences for a phrase pair.
pub fn render_template(pair: &RelationPhrasePair) -> Result<(String, String)> {
    if pair.xreact.is_empty() || pair.xwant.is_empty() {
        return Err(TecoError::Data(
            "cannot render an empty relation phrase".into(),
        ));
    }
    Ok((
        format!("The speaker feels {}.", pair.xreact),
        format!("The speaker wants {}.", pair.xwant),
    ))
}

/// Maps a sentence to a fixed-shape `[len, dim]` token feature sequence.
pub trait SentenceEncoder {
    fn shape(&self) -> (usize, usize);
    fn encode(&self, sentence: &str) -> Result<Padded<f32>>;
}

/// Encoder that maps every sentence to zeros.
#[derive(Clone, Copy, Debug)]
pub struct ZeroEncoder {
    pub len: usize,
    pub dim: usize,
}

impl SentenceEncoder for ZeroEncoder {
    fn shape(&self) -> (usize, usize) {
        (self.len, self.dim)
    }

    fn encode(&self, _sentence: &str) -> Result<Padded<f32>> {
        Ok(Padded {
            data: Tensor::zeros(&[self.len, self.dim]),
            valid_len: self.len,
        })
    }
}

/// Deterministic hermetic encoder: each token maps to a Gaussian vector seeded
/// by a hash of `(seed, token)`; rows past the sentence are zero padding.
#[derive(Clone, Copy, Debug)]
pub struct ToyHashEncoder {
    pub seed: u64,
    pub len: usize,
    pub dim: usize,
}

pub(crate) fn tokenize(sentence: &str) -> Vec<String> {
    sentence
        .split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| c.is_ascii_punctuation())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

impl ToyHashEncoder {
    pub fn token_vector(&self, token: &str) -> Vec<f32> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 8];
        seed.copy_from_slice(&digest[..8]);
        let mut rng = SplitRng::new(u64::from_le_bytes(seed));
        (0..self.dim).map(|_| rng.normal() as f32).collect()
    }

    /// Mean of token vectors: a single sentence embedding.
    pub fn embed_sentence(&self, sentence: &str) -> Result<Vec<f32>> {
        let tokens = tokenize(sentence);
        if tokens.is_empty() {
            return Err(TecoError::Degenerate(format!("no tokens in {sentence:?}")));
        }
        let mut acc = vec![0.0f32; self.dim];
        for t in &tokens {
            acc.iter_mut()
                .zip(self.token_vector(t))
                .for_each(|(a, v)| *a += v);
        }
        let n = tokens.len() as f32;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }
}

impl SentenceEncoder for ToyHashEncoder {
    fn shape(&self) -> (usize, usize) {
        (self.len, self.dim)
    }

    fn encode(&self, sentence: &str) -> Result<Padded<f32>> {
        let tokens = tokenize(sentence);
        let mut data = Tensor::zeros(&[self.len, self.dim]);
        let used = tokens.len().min(self.len);
        for (i, t) in tokens.iter().take(used).enumerate() {
            data.data_mut()[i * self.dim..(i + 1) * self.dim]
                .copy_from_slice(&self.token_vector(t));
        }
        Ok(Padded {
            data,
            valid_len: used.max(1),
        })
    }
}

/// Encode the templated sentences of a generated and a retrieved pair into
/// the four relation feature sequences.
pub fn assemble_quad(
    generated: &RelationPhrasePair,
    retrieved: &RelationPhrasePair,
    encoder: &dyn SentenceEncoder,
) -> Result<RelationQuad> {
    let (len, dim) = encoder.shape();
    let (gen_r, gen_w) = render_template(generated)?;
    let (ret_r, ret_w) = render_template(retrieved)?;
    let mut encoded = Vec::with_capacity(4);
    for sentence in [&gen_r, &gen_w, &ret_r, &ret_w] {
        let p = encoder.encode(sentence)?;
        if p.data.shape() != [len, dim] {
            return Err(TecoError::shape(
                "assemble_quad",
                p.data.shape(),
                &[len, dim],
            ));
        }
        encoded.push(p);
    }
    let mut it = encoded.into_iter();
    let mut next = || it.next().expect("four encodings");
    let (a, b, c, d) = (next(), next(), next(), next());
    Ok(RelationQuad {
        valid_lens: [a.valid_len, b.valid_len, c.valid_len, d.valid_len],
        gen_xreact: a.data,
        gen_xwant: b.data,
        ret_xreact: c.data,
        ret_xwant: d.data,
        phrases: RelationPhrases {
            gen_xreact: generated.xreact.clone(),
            gen_xwant: generated.xwant.clone(),
            ret_xreact: retrieved.xreact.clone(),
            ret_xwant: retrieved.xwant.clone(),
        },
    })
}
