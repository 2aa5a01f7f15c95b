//! Feature bundles: a JSON manifest plus one binary blob per modality and
//! relation slot, all records padded to the manifest's fixed lengths.
//!
//! Layout of a bundle directory:
//!
//! ```text
//! manifest.json
//! text.bin  vision.bin  audio.bin
//! gen_xreact.bin  gen_xwant.bin  ret_xreact.bin  ret_xwant.bin
//! ```
//!
//! Record `k` of the manifest lives at slot `slot` of every blob. The
//! manifest schema is documented in `docs/bundle-format.md`.

pub mod blob;
mod pad;
pub mod synthetic;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TecoError};
use crate::tensor::Tensor;

pub use pad::{pad_or_truncate, Padded};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_NAME: &str = "teco-bundle";
pub const FORMAT_VERSION: u32 = 1;

/// Blob names in canonical order.
pub const BLOB_NAMES: [&str; 7] = [
    "text",
    "vision",
    "audio",
    "gen_xreact",
    "gen_xwant",
    "ret_xreact",
    "ret_xwant",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// Feature dimensions `d`, `d^V`, `d^A`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub text: usize,
    pub vision: usize,
    pub audio: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            text: 768,
            vision: 256,
            audio: 768,
        }
    }
}

/// Fixed sequence lengths `l^S`, `l^V`, `l^A`, `l^R`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lengths {
    pub text: usize,
    pub vision: usize,
    pub audio: usize,
    pub relation: usize,
}

impl Default for Lengths {
    fn default() -> Self {
        Self {
            text: 30,
            vision: 230,
            audio: 480,
            relation: 30,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationPhrases {
    pub gen_xreact: String,
    pub gen_xwant: String,
    pub ret_xreact: String,
    pub ret_xwant: String,
}

/// Generated (`gen_*`) and retrieved (`ret_*`) relation feature sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationQuad {
    pub gen_xreact: Tensor<f32>,
    pub gen_xwant: Tensor<f32>,
    pub ret_xreact: Tensor<f32>,
    pub ret_xwant: Tensor<f32>,
    pub phrases: RelationPhrases,
    /// Valid lengths in canonical order.
    pub valid_lens: [usize; 4],
}

impl RelationQuad {
    pub fn tensors(&self) -> [&Tensor<f32>; 4] {
        [
            &self.gen_xreact,
            &self.gen_xwant,
            &self.ret_xreact,
            &self.ret_xwant,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidLengths {
    pub text: usize,
    pub vision: usize,
    pub audio: usize,
    pub relation: [usize; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub text: Tensor<f32>,
    pub vision: Tensor<f32>,
    pub audio: Tensor<f32>,
    pub relations: RelationQuad,
    pub label: usize,
    pub split: Split,
    pub text_valid: usize,
    pub vision_valid: usize,
    pub audio_valid: usize,
    /// Sentence embedding used for knowledge retrieval, when exported.
    pub query_embedding: Option<Vec<f32>>,
}

impl UtteranceRecord {
    fn blob_tensors(&self) -> [&Tensor<f32>; 7] {
        let r = &self.relations;
        [
            &self.text,
            &self.vision,
            &self.audio,
            &r.gen_xreact,
            &r.gen_xwant,
            &r.ret_xreact,
            &r.ret_xwant,
        ]
    }

    pub fn valid_lengths(&self) -> ValidLengths {
        ValidLengths {
            text: self.text_valid,
            vision: self.vision_valid,
            audio: self.audio_valid,
            relation: self.relations.valid_lens,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    /// Class index to coarse binary label; absent when the dataset has none.
    pub binary_map: Option<Vec<u8>>,
    pub dims: Dims,
    pub lengths: Lengths,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    fn blob_shape(&self, blob: usize) -> [usize; 2] {
        let (l, d) = (self.lengths, self.dims);
        match blob {
            0 => [l.text, d.text],
            1 => [l.vision, d.vision],
            2 => [l.audio, d.audio],
            _ => [l.relation, d.text],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(TecoError::Data("manifest has no classes".into()));
        }
        let d = self.dims;
        let l = self.lengths;
        if [
            d.text, d.vision, d.audio, l.text, l.vision, l.audio, l.relation,
        ]
        .contains(&0)
        {
            return Err(TecoError::Data(
                "manifest dims and lengths must be positive".into(),
            ));
        }
        if let Some(map) = &self.binary_map {
            if map.len() != self.class_names.len() {
                return Err(TecoError::Data(format!(
                    "binary_map covers {} of {} classes",
                    map.len(),
                    self.class_names.len()
                )));
            }
            if map.iter().any(|&b| b > 1) {
                return Err(TecoError::Data("binary_map values must be 0 or 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub manifest: DatasetManifest,
    /// All records in manifest order.
    pub records: Vec<UtteranceRecord>,
}

impl Bundle {
    pub fn split(&self, split: Split) -> Vec<&UtteranceRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn split_sizes(&self) -> [usize; 3] {
        Split::ALL.map(|s| self.records.iter().filter(|r| r.split == s).count())
    }
}

#[derive(Serialize, Deserialize)]
struct BlobEntry {
    file: String,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
struct RecordEntry {
    id: String,
    label: usize,
    split: Split,
    slot: usize,
    valid_lengths: ValidLengths,
    phrases: RelationPhrases,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    query_embedding: Option<Vec<f32>>,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    format: String,
    version: u32,
    class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    binary_map: Option<Vec<u8>>,
    dims: Dims,
    lengths: Lengths,
    blobs: BTreeMap<String, BlobEntry>,
    records: Vec<RecordEntry>,
}

fn check_record(manifest: &DatasetManifest, r: &UtteranceRecord) -> Result<()> {
    let n = manifest.num_classes();
    if r.label >= n {
        return Err(TecoError::Data(format!(
            "record {}: label {} >= {n} classes",
            r.id, r.label
        )));
    }
    for (k, t) in r.blob_tensors().iter().enumerate() {
        let want = manifest.blob_shape(k);
        if t.shape() != want {
            return Err(TecoError::Data(format!(
                "record {}: {} has shape {:?}, manifest expects {want:?}",
                r.id,
                BLOB_NAMES[k],
                t.shape()
            )));
        }
    }
    let v = r.valid_lengths();
    let l = manifest.lengths;
    let checks = [
        (v.text, l.text),
        (v.vision, l.vision),
        (v.audio, l.audio),
        (v.relation[0], l.relation),
        (v.relation[1], l.relation),
        (v.relation[2], l.relation),
        (v.relation[3], l.relation),
    ];
    if checks.iter().any(|&(valid, max)| valid == 0 || valid > max) {
        return Err(TecoError::Data(format!(
            "record {}: valid lengths {v:?} out of range",
            r.id
        )));
    }
    Ok(())
}

fn check_splits(records: &[UtteranceRecord]) -> Result<()> {
    for s in Split::ALL {
        if !records.iter().any(|r| r.split == s) {
            return Err(TecoError::Data(format!("empty split: {}", s.name())));
        }
    }
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(TecoError::Data(format!("duplicate record id {}", r.id)));
        }
    }
    Ok(())
}

/// Write `bundle` into `dir`, creating it if needed.
pub fn write_bundle(dir: impl AsRef<Path>, bundle: &Bundle) -> Result<()> {
    let dir = dir.as_ref();
    bundle.manifest.validate()?;
    check_splits(&bundle.records)?;
    for r in &bundle.records {
        check_record(&bundle.manifest, r)?;
    }
    std::fs::create_dir_all(dir).map_err(|e| TecoError::io(dir, e))?;

    let mut blobs = BTreeMap::new();
    for (k, name) in BLOB_NAMES.iter().enumerate() {
        let bytes = blob::encode(
            &bundle.manifest.blob_shape(k),
            bundle.records.iter().map(|r| r.blob_tensors()[k].data()),
        )?;
        let file = format!("{name}.bin");
        blob::write_file(&dir.join(&file), &bytes)?;
        blobs.insert(
            name.to_string(),
            BlobEntry {
                file,
                sha256: blob::sha256_hex(&bytes),
            },
        );
    }

    let m = &bundle.manifest;
    let manifest = ManifestFile {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        class_names: m.class_names.clone(),
        binary_map: m.binary_map.clone(),
        dims: m.dims,
        lengths: m.lengths,
        blobs,
        records: bundle
            .records
            .iter()
            .enumerate()
            .map(|(slot, r)| RecordEntry {
                id: r.id.clone(),
                label: r.label,
                split: r.split,
                slot,
                valid_lengths: r.valid_lengths(),
                phrases: r.relations.phrases.clone(),
                query_embedding: r.query_embedding.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| TecoError::Data(format!("manifest serialization: {e}")))?;
    blob::write_file(&dir.join(MANIFEST_FILE), json.as_bytes())
}

/// Accepts either the bundle directory or the manifest file itself.
fn resolve(path: &Path) -> (PathBuf, PathBuf) {
    if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_FILE))
    } else {
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        (dir, path.to_path_buf())
    }
}

/// Load and fully validate a bundle.
pub fn load_bundle(path: impl AsRef<Path>) -> Result<Bundle> {
    let (dir, manifest_path) = resolve(path.as_ref());
    let text = String::from_utf8(blob::read_file(&manifest_path)?)
        .map_err(|_| TecoError::Data("manifest is not UTF-8".into()))?;
    let mf: ManifestFile =
        serde_json::from_str(&text).map_err(|e| TecoError::Data(format!("manifest parse: {e}")))?;
    if mf.format != FORMAT_NAME {
        return Err(TecoError::Data(format!(
            "unknown bundle format {:?}",
            mf.format
        )));
    }
    if mf.version != FORMAT_VERSION {
        return Err(TecoError::Data(format!(
            "unknown bundle version {}",
            mf.version
        )));
    }
    let manifest = DatasetManifest {
        class_names: mf.class_names,
        binary_map: mf.binary_map,
        dims: mf.dims,
        lengths: mf.lengths,
    };
    manifest.validate()?;

    let mut blobs = Vec::with_capacity(BLOB_NAMES.len());
    for (k, name) in BLOB_NAMES.iter().enumerate() {
        let entry = mf
            .blobs
            .get(*name)
            .ok_or_else(|| TecoError::Data(format!("manifest lists no {name} blob")))?;
        let bytes = blob::read_file(&dir.join(&entry.file))?;
        if blob::sha256_hex(&bytes) != entry.sha256 {
            return Err(TecoError::Data(format!(
                "checksum mismatch in {}",
                entry.file
            )));
        }
        let b = blob::decode(&bytes, &entry.file)?;
        let want = manifest.blob_shape(k);
        if b.dims != want {
            return Err(TecoError::Data(format!(
                "{}: record dims {:?} do not match manifest {want:?}",
                entry.file, b.dims
            )));
        }
        blobs.push(b);
    }

    let mut slots = HashSet::new();
    let mut records = Vec::with_capacity(mf.records.len());
    for e in mf.records {
        if !slots.insert(e.slot) {
            return Err(TecoError::Data(format!(
                "record {}: slot {} reused",
                e.id, e.slot
            )));
        }
        let mut tensors = Vec::with_capacity(7);
        for (k, b) in blobs.iter().enumerate() {
            let data = b.record(e.slot).ok_or_else(|| {
                TecoError::Data(format!(
                    "record {}: slot {} missing from {}.bin",
                    e.id, e.slot, BLOB_NAMES[k]
                ))
            })?;
            tensors.push(Tensor::new(b.dims.clone(), data.to_vec())?);
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("seven blobs");
        let v = e.valid_lengths;
        let record = UtteranceRecord {
            text: next(),
            vision: next(),
            audio: next(),
            relations: RelationQuad {
                gen_xreact: next(),
                gen_xwant: next(),
                ret_xreact: next(),
                ret_xwant: next(),
                phrases: e.phrases,
                valid_lens: v.relation,
            },
            id: e.id,
            label: e.label,
            split: e.split,
            text_valid: v.text,
            vision_valid: v.vision,
            audio_valid: v.audio,
            query_embedding: e.query_embedding,
        };
        check_record(&manifest, &record)?;
        records.push(record);
    }
    check_splits(&records)?;
    Ok(Bundle { manifest, records })
}
