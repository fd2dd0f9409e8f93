//! Binary dataset and checkpoint files.
//!
//! Both formats are little-endian: an 8-byte magic whose last two bytes are
//! the format version, a `u32` length, a UTF-8 JSON header of that length,
//! then raw `f64` payload.

use std::fs;
use std::path::{Path, PathBuf};

use psno_core::datagen::{Dataset, NormalizationStats, SamplingConfig, Split, TrajectoryRecord};
use psno_core::numcore::{ParamSet, Tensor};
use psno_core::operators::{Model, ModelConfig, ModelKind};
use psno_core::smib::{SmibParams, StabilityLabel, Trajectory};
use psno_core::training::{TrainConfig, TrainReport};
use serde::{Deserialize, Serialize};

pub const DATASET_MAGIC: &[u8; 8] = b"NOPSDS01";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NOPSCK01";

/// Loss definition recorded with every trained checkpoint.
pub const LOSS_NAME: &str = "relative-h1 (channel mean, sample mean)";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error("bad magic bytes (expected {expected})")]
    Magic { expected: &'static str },
    #[error("unsupported format version {found:?}")]
    Version { found: String },
    #[error("file is truncated")]
    Truncated,
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
    #[error("invalid header: {0}")]
    Header(String),
}

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Decode { path: PathBuf, source: DecodeError },
}

fn header(e: impl std::fmt::Display) -> DecodeError {
    DecodeError::Header(e.to_string())
}

fn encode(magic: &[u8; 8], head: &[u8], payload: impl Iterator<Item = f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + head.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(head.len() as u32).to_le_bytes());
    out.extend_from_slice(head);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(bytes: &'a [u8], magic: &'static [u8; 8]) -> Result<(Self, &'a [u8]), DecodeError> {
        let name = std::str::from_utf8(magic).unwrap_or("?");
        let found = bytes.get(..8).ok_or(if bytes.len() >= 6 && bytes[..6] == magic[..6] {
            DecodeError::Truncated
        } else {
            DecodeError::Magic { expected: name }
        })?;
        if found[..6] != magic[..6] {
            return Err(DecodeError::Magic { expected: name });
        }
        if found[6..] != magic[6..] {
            return Err(DecodeError::Version { found: String::from_utf8_lossy(&found[6..]).into_owned() });
        }
        let mut r = Reader { bytes, pos: 8 };
        let len = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
        let head = r.take(len)?;
        Ok((r, head))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or(DecodeError::Truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>, DecodeError> {
        let raw = self.take(n.checked_mul(8).ok_or(DecodeError::Truncated)?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn finish(self) -> Result<(), DecodeError> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            n => Err(DecodeError::Trailing(n)),
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, FormatError> {
    fs::read(path).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| FormatError::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, bytes).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordMeta {
    #[serde(rename = "E")]
    e: f64,
    #[serde(rename = "V")]
    v: f64,
    #[serde(rename = "X")]
    x: f64,
    #[serde(rename = "H")]
    h: f64,
    #[serde(rename = "D")]
    d: f64,
    f0: f64,
    #[serde(rename = "Pm")]
    pm: f64,
    #[serde(rename = "Pm1")]
    pm1: f64,
    label: StabilityLabel,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetManifest {
    split: Split,
    config: SamplingConfig,
    stats: Option<NormalizationStats>,
    input_len: usize,
    target_len: usize,
    records: Vec<RecordMeta>,
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let manifest = DatasetManifest {
        split: ds.split,
        config: ds.config.clone(),
        stats: ds.stats,
        input_len: ds.config.input_grid().len,
        target_len: ds.config.target_grid().len,
        records: ds
            .records
            .iter()
            .map(|r| {
                let p = &r.params;
                RecordMeta { e: p.e(), v: p.v(), x: p.x(), h: p.h(), d: p.d(), f0: p.f0(), pm: p.pm(), pm1: p.pm1(), label: r.label }
            })
            .collect(),
    };
    let head = serde_json::to_vec(&manifest).expect("manifest serializes");
    let payload = ds.records.iter().flat_map(|r| {
        r.input.delta.iter().chain(&r.input.omega).chain(&r.target.delta).chain(&r.target.omega).copied()
    });
    encode(DATASET_MAGIC, &head, payload)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset, DecodeError> {
    let (mut r, head) = Reader::open(bytes, DATASET_MAGIC)?;
    let m: DatasetManifest = serde_json::from_slice(head).map_err(header)?;
    m.config.validate().map_err(header)?;
    let (ig, tg) = (m.config.input_grid(), m.config.target_grid());
    if (ig.len, tg.len) != (m.input_len, m.target_len) {
        return Err(DecodeError::Header("window lengths disagree with the sampling config".into()));
    }
    if let Some(s) = &m.stats {
        s.check().map_err(header)?;
    }
    let mut records = Vec::with_capacity(m.records.len());
    for meta in &m.records {
        let params = SmibParams::new(meta.e, meta.v, meta.x, meta.h, meta.d, meta.f0, meta.pm, meta.pm1).map_err(header)?;
        let mut traj = |grid: psno_core::smib::SampleGrid| -> Result<Trajectory, DecodeError> {
            Ok(Trajectory { t0: grid.t0, dt: grid.dt, delta: r.floats(grid.len)?, omega: r.floats(grid.len)? })
        };
        let input = traj(ig)?;
        let target = traj(tg)?;
        records.push(TrajectoryRecord { params, label: meta.label, input, target });
    }
    r.finish()?;
    let ds = Dataset { config: m.config, split: m.split, stats: m.stats, records };
    ds.validate().map_err(header)?;
    Ok(ds)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<(), FormatError> {
    write(path, &encode_dataset(ds))
}

pub fn load_dataset(path: &Path) -> Result<Dataset, FormatError> {
    decode_dataset(&read(path)?).map_err(|source| FormatError::Decode { path: path.to_path_buf(), source })
}

/// Training provenance stored with a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub loss: String,
    pub config: TrainConfig,
    /// Wall-clock time lives in the checkpoint metadata, not here.
    pub report: TrainReport,
}

/// Values that legitimately differ between identical runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMetadata {
    pub wall_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub seed: u64,
    pub training: Option<TrainingMeta>,
    pub metadata: RunMetadata,
}

impl Checkpoint {
    pub fn untrained(model: Model, seed: u64) -> Self {
        Self { model, seed, training: None, metadata: RunMetadata::default() }
    }

    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    kind: ModelKind,
    config: ModelConfig,
    params: Vec<ParamEntry>,
    seed: u64,
    stats: NormalizationStats,
    training: Option<TrainingMeta>,
    metadata: RunMetadata,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let m = &ck.model;
    let head = CheckpointHeader {
        kind: m.kind(),
        config: m.config.clone(),
        params: m.params.iter().map(|(n, t)| ParamEntry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
        seed: ck.seed,
        stats: m.norm_stats,
        training: ck.training.clone(),
        metadata: ck.metadata.clone(),
    };
    let head = serde_json::to_vec(&head).expect("header serializes");
    encode(CHECKPOINT_MAGIC, &head, m.params.iter().flat_map(|(_, t)| t.data().iter().copied()))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, DecodeError> {
    let (mut r, head) = Reader::open(bytes, CHECKPOINT_MAGIC)?;
    let h: CheckpointHeader = serde_json::from_slice(head).map_err(header)?;
    if h.config.kind() != h.kind {
        return Err(DecodeError::Header(format!("kind {} does not match config {}", h.kind, h.config.kind())));
    }
    h.stats.check().map_err(header)?;
    let mut params = ParamSet::new();
    for p in &h.params {
        let n = p.shape.iter().try_fold(1usize, |a, d| a.checked_mul(*d)).ok_or(DecodeError::Truncated)?;
        params.insert(&p.name, Tensor::new(p.shape.clone(), r.floats(n)?).map_err(header)?);
    }
    r.finish()?;
    let model = Model::from_parts(h.config, params, h.stats).map_err(header)?;
    Ok(Checkpoint { model, seed: h.seed, training: h.training, metadata: h.metadata })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), FormatError> {
    write(path, &encode_checkpoint(ck))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, FormatError> {
    decode_checkpoint(&read(path)?).map_err(|source| FormatError::Decode { path: path.to_path_buf(), source })
}

/// Writes a text artifact, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<(), FormatError> {
    write(path, text.as_bytes())
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    let bytes = read(path)?;
    String::from_utf8(bytes).map_err(|e| FormatError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}
