//! On-disk formats: feature files, label sidecars, split lists, dataset
//! manifests and model checkpoints.
//!
//! Binary files are little-endian. A feature file is
//!
//! ```text
//! "TCSL" | version: u16 | id_len: u32 | video_id: UTF-8 | T: u32 | n_in: u32 | fps: f32 | T·n_in × f32
//! ```
//!
//! and a checkpoint is
//!
//! ```text
//! "TCSM" | version: u16 | count: u32 | count × (name_len: u32 | name | rank: u32 | rank × u32 | f32 data)
//!        | meta_len: u32 | JSON metadata
//! ```
//!
//! Every writer goes through a temporary file in the destination directory
//! followed by a rename, and produces identical bytes for identical content.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{EncoderArch, EncoderModel, Parameterized, PhaseArch, PhaseModel};
use crate::sequence::{FrameSequence, Split};

pub const FEATURE_MAGIC: &[u8; 4] = b"TCSL";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TCSM";
pub const FORMAT_VERSION: u16 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPLITS_FILE: &str = "splits.txt";

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.pos as u64,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return self.fail(format!("truncated {what}: need {n} bytes, {available} left"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let start = self.pos;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format {
            offset: start as u64,
            message: format!("{what} is not valid UTF-8"),
        })
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let found = self.take(4, "magic")?;
        if found != expected {
            self.pos -= 4;
            return self.fail(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(found),
                String::from_utf8_lossy(expected)
            ));
        }
        let version = self.u16("format version")?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(())
    }

    /// `n` finite floats.
    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let start = self.pos;
        let raw = self.take(n.saturating_mul(4), what)?;
        let mut out = Vec::with_capacity(n);
        for (i, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Format {
                    offset: (start + 4 * i) as u64,
                    message: format!("non-finite value {v} in {what}"),
                });
            }
            out.push(v);
        }
        Ok(out)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return self.fail(format!("{} trailing bytes", self.bytes.len() - self.pos));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidConfig(format!("{what} {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str, what: &str) -> Result<()> {
    put_u32(out, s.len(), what)?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Feature-file bytes for `seq`; labels are not part of this file.
pub fn encode_video(seq: &FrameSequence) -> Result<Vec<u8>> {
    seq.validate()?;
    if let Some(i) = seq.features.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "video {} has a non-finite feature at position {i}",
            seq.video_id
        )));
    }
    let mut out = Vec::with_capacity(30 + seq.video_id.len() + 4 * seq.features.len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_str(&mut out, &seq.video_id, "video id length")?;
    put_u32(&mut out, seq.len(), "frame count")?;
    put_u32(&mut out, seq.feature_dim, "feature dimension")?;
    out.extend_from_slice(&seq.fps.to_le_bytes());
    for v in &seq.features {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses a feature file; the result carries no labels.
pub fn decode_video(bytes: &[u8]) -> Result<FrameSequence> {
    let mut c = Cursor::new(bytes);
    c.magic(FEATURE_MAGIC)?;
    let video_id = c.string("video id")?;
    let frames = c.u32("frame count")? as usize;
    let dim_offset = c.pos;
    let feature_dim = c.u32("feature dimension")? as usize;
    if feature_dim == 0 {
        return Err(Error::Format {
            offset: dim_offset as u64,
            message: "feature dimension is zero".into(),
        });
    }
    let fps = c.f32("fps")?;
    if !(fps.is_finite() && fps > 0.0) {
        return c.fail(format!("invalid fps {fps}"));
    }
    let features = c.floats(frames.saturating_mul(feature_dim), "features")?;
    c.finish()?;
    FrameSequence::new(video_id, fps, feature_dim, features, None)
}

/// `frame_index,phase_id` CSV with a header line.
pub fn encode_labels(labels: &[usize]) -> String {
    let mut s = String::from("frame_index,phase_id\n");
    for (i, l) in labels.iter().enumerate() {
        s.push_str(&format!("{i},{l}\n"));
    }
    s
}

/// Parses a label sidecar for a video of `frames` frames. A file holding only
/// the header yields `None`; otherwise every frame must be labeled exactly once.
pub fn decode_labels(text: &str, frames: usize) -> Result<Option<Vec<usize>>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == "frame_index,phase_id" => {}
        _ => return Err(Error::MissingLabels("label file lacks the frame_index,phase_id header".into())),
    }
    let mut labels: Vec<Option<usize>> = vec![None; frames];
    let mut any = false;
    for (n, line) in lines {
        any = true;
        let bad = || Error::MissingLabels(format!("label file line {}: cannot parse {line:?}", n + 1));
        let (i, p) = line.trim().split_once(',').ok_or_else(bad)?;
        let i: usize = i.trim().parse().map_err(|_| bad())?;
        let p: usize = p.trim().parse().map_err(|_| bad())?;
        if i >= frames {
            return Err(Error::LengthMismatch {
                what: "label frame index vs. frames",
                left: i,
                right: frames,
            });
        }
        if labels[i].replace(p).is_some() {
            return Err(Error::MissingLabels(format!("frame {i} is labeled twice")));
        }
    }
    if !any {
        return Ok(None);
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::MissingLabels(format!("frame {i} has no label"))))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Writes the feature file and, when labels exist, the label sidecar.
pub fn write_video(features_path: &Path, labels_path: Option<&Path>, seq: &FrameSequence) -> Result<()> {
    write_atomic(features_path, &encode_video(seq)?)?;
    if let (Some(path), Some(labels)) = (labels_path, &seq.labels) {
        write_atomic(path, encode_labels(labels).as_bytes())?;
    }
    Ok(())
}

pub fn read_video(features_path: &Path, labels_path: Option<&Path>) -> Result<FrameSequence> {
    let mut seq = decode_video(&fs::read(features_path)?)?;
    if let Some(path) = labels_path {
        seq.labels = decode_labels(&fs::read_to_string(path)?, seq.len())
            .map_err(|e| e.in_video(&seq.video_id))?;
    }
    Ok(seq)
}

pub fn encode_splits(entries: &[(String, Split)]) -> String {
    entries.iter().map(|(id, s)| format!("{id},{s}\n")).collect()
}

pub fn decode_splits(text: &str) -> Result<Vec<(String, Split)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let parsed = line.trim().rsplit_once(',').and_then(|(id, set)| {
                let mut chars = set.trim().chars();
                match (chars.next().and_then(Split::from_char), chars.next()) {
                    (Some(s), None) => Some((id.trim().to_string(), s)),
                    _ => None,
                }
            });
            parsed.ok_or_else(|| Error::InvalidConfig(format!("splits line {}: expected video_id,A|B|C|D", n + 1)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestVideo {
    pub video_id: String,
    pub frames: usize,
    pub fps: f32,
    pub feature_dim: usize,
    /// Relative to the dataset directory.
    pub features_file: String,
    pub labels_file: Option<String>,
    pub split: Option<Split>,
}

/// `manifest.json` of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u16,
    pub num_phases: Option<usize>,
    pub videos: Vec<ManifestVideo>,
    /// Free-form description of how the data was produced.
    pub provenance: serde_json::Value,
}

/// A dataset loaded from a directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub videos: Vec<FrameSequence>,
    pub splits: Vec<Option<Split>>,
}

impl Dataset {
    /// Videos assigned to any of `sets`, in manifest order.
    pub fn select(&self, sets: &[Split]) -> Vec<FrameSequence> {
        self.videos
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| s.is_some_and(|s| sets.contains(&s)))
            .map(|(v, _)| v.clone())
            .collect()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.videos.first().map(|v| v.feature_dim)
    }
}

fn file_stem(video_id: &str) -> String {
    video_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes videos, label sidecars, `splits.txt` and `manifest.json` into `dir`.
pub fn write_dataset(
    dir: &Path,
    videos: &[FrameSequence],
    splits: &[Option<Split>],
    num_phases: Option<usize>,
    provenance: serde_json::Value,
) -> Result<DatasetManifest> {
    if splits.len() != videos.len() {
        return Err(Error::LengthMismatch {
            what: "split assignments vs. videos",
            left: splits.len(),
            right: videos.len(),
        });
    }
    let mut seen = std::collections::BTreeSet::new();
    for v in videos {
        if !seen.insert(file_stem(&v.video_id)) {
            return Err(Error::InvalidConfig(format!("duplicate video id {}", v.video_id)));
        }
    }
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(videos.len());
    for (v, split) in videos.iter().zip(splits) {
        let stem = file_stem(&v.video_id);
        let features_file = format!("{stem}.tcsl");
        let labels_file = v.labels.as_ref().map(|_| format!("{stem}.labels.csv"));
        write_video(
            &dir.join(&features_file),
            labels_file.as_ref().map(|f| dir.join(f)).as_deref(),
            v,
        )?;
        entries.push(ManifestVideo {
            video_id: v.video_id.clone(),
            frames: v.len(),
            fps: v.fps,
            feature_dim: v.feature_dim,
            features_file,
            labels_file,
            split: *split,
        });
    }
    let assigned: Vec<(String, Split)> = entries
        .iter()
        .filter_map(|e| e.split.map(|s| (e.video_id.clone(), s)))
        .collect();
    write_atomic(&dir.join(SPLITS_FILE), encode_splits(&assigned).as_bytes())?;
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        num_phases,
        videos: entries,
        provenance,
    };
    write_atomic(&dir.join(MANIFEST_FILE), &to_json_bytes(&manifest)?)?;
    Ok(manifest)
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Loads a dataset directory. `splits.txt`, when present, overrides the
/// manifest's split column; every file header must agree with the manifest.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::InvalidConfig(format!(
            "{} is not a dataset directory (no {MANIFEST_FILE})",
            dir.display()
        )));
    }
    let manifest: DatasetManifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: manifest.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let mut videos = Vec::with_capacity(manifest.videos.len());
    for entry in &manifest.videos {
        let seq = read_video(
            &dir.join(&entry.features_file),
            entry.labels_file.as_ref().map(|f| dir.join(f)).as_deref(),
        )
        .map_err(|e| e.in_video(&entry.video_id))?;
        let header = (seq.video_id.as_str(), seq.len(), seq.feature_dim, seq.fps.to_bits());
        let expected = (entry.video_id.as_str(), entry.frames, entry.feature_dim, entry.fps.to_bits());
        if header != expected {
            return Err(Error::InvalidConfig(format!(
                "video {}: file header {header:?} disagrees with manifest {expected:?}",
                entry.video_id
            )));
        }
        if let (Some(k), Some(labels)) = (manifest.num_phases, &seq.labels) {
            if let Some(&label) = labels.iter().find(|&&l| l >= k) {
                return Err(Error::LabelOutOfRange { label, num_phases: k }.in_video(&seq.video_id));
            }
        }
        videos.push(seq);
    }
    let mut splits: Vec<Option<Split>> = manifest.videos.iter().map(|v| v.split).collect();
    let splits_path = dir.join(SPLITS_FILE);
    if splits_path.is_file() {
        let index: BTreeMap<&str, usize> = manifest
            .videos
            .iter()
            .enumerate()
            .map(|(i, v)| (v.video_id.as_str(), i))
            .collect();
        splits = vec![None; videos.len()];
        for (id, split) in decode_splits(&fs::read_to_string(&splits_path)?)? {
            let &i = index
                .get(id.as_str())
                .ok_or_else(|| Error::InvalidConfig(format!("{SPLITS_FILE} names unknown video {id}")))?;
            splits[i] = Some(split);
        }
    }
    Ok(Dataset {
        root: dir.to_path_buf(),
        manifest,
        videos,
        splits,
    })
}

/// Architecture recorded in a checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CheckpointArch {
    Encoder(EncoderArch),
    Phase(PhaseArch),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointMeta {
    architecture: CheckpointArch,
    trainable: BTreeMap<String, bool>,
    metadata: serde_json::Value,
}

/// A model restored from disk, with the caller's free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Encoder(EncoderModel),
    Phase(PhaseModel),
}

impl Checkpoint {
    pub fn arch(&self) -> CheckpointArch {
        match self {
            Checkpoint::Encoder(m) => CheckpointArch::Encoder(m.arch()),
            Checkpoint::Phase(m) => CheckpointArch::Phase(m.arch()),
        }
    }

    /// The encoder alone; a phase model's head is dropped.
    pub fn into_encoder(self) -> EncoderModel {
        match self {
            Checkpoint::Encoder(m) => m,
            Checkpoint::Phase(m) => m.encoder,
        }
    }

    pub fn into_phase_model(self) -> Result<PhaseModel> {
        match self {
            Checkpoint::Phase(m) => Ok(m),
            Checkpoint::Encoder(_) => Err(Error::InvalidConfig(
                "checkpoint holds an encoder, not a phase model".into(),
            )),
        }
    }
}

fn encode_model<M: Parameterized>(model: &M, arch: CheckpointArch, metadata: serde_json::Value) -> Result<Vec<u8>> {
    let tensors = model.tensors();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u32(&mut out, tensors.len(), "tensor count")?;
    for t in &tensors {
        put_str(&mut out, &t.name, "tensor name length")?;
        put_u32(&mut out, t.shape.len(), "tensor rank")?;
        for &d in &t.shape {
            put_u32(&mut out, d, "tensor dimension")?;
        }
        for &v in t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let trainable = model
        .layer_names()
        .into_iter()
        .map(|l| {
            let flag = model.is_layer_trainable(&l)?;
            Ok((l, flag))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    let meta = serde_json::to_vec(&CheckpointMeta {
        architecture: arch,
        trainable,
        metadata,
    })?;
    put_u32(&mut out, meta.len(), "metadata length")?;
    out.extend_from_slice(&meta);
    Ok(out)
}

pub fn encode_checkpoint(ckpt: &Checkpoint, metadata: serde_json::Value) -> Result<Vec<u8>> {
    match ckpt {
        Checkpoint::Encoder(m) => encode_model(m, ckpt.arch(), metadata),
        Checkpoint::Phase(m) => encode_model(m, ckpt.arch(), metadata),
    }
}

struct RawTensor {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    data: Vec<f32>,
}

fn fill_model<M: Parameterized>(model: &mut M, raw: Vec<RawTensor>, trainable: &BTreeMap<String, bool>) -> Result<()> {
    let expected: Vec<(String, Vec<usize>)> = model.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
    if expected.len() != raw.len() {
        return Err(Error::Format {
            offset: raw.first().map_or(0, |t| t.offset) as u64,
            message: format!("checkpoint has {} tensors, architecture needs {}", raw.len(), expected.len()),
        });
    }
    for ((name, shape), t) in expected.iter().zip(&raw) {
        if *name != t.name || *shape != t.shape {
            return Err(Error::ShapeMismatch {
                name: name.clone(),
                expected: shape.clone(),
                got: t.shape.clone(),
            });
        }
    }
    for (view, t) in model.tensors_mut().into_iter().zip(raw) {
        for (dst, src) in view.data.iter_mut().zip(t.data) {
            *dst = f64::from(src);
        }
    }
    for layer in model.layer_names() {
        let flag = trainable.get(&layer).copied().unwrap_or(true);
        model.set_layer_trainable(&layer, flag)?;
    }
    Ok(())
}

/// Parses a checkpoint. With `expected`, the stored architecture must match
/// it and any difference is reported as a tensor shape mismatch.
pub fn decode_checkpoint(bytes: &[u8], expected: Option<&CheckpointArch>) -> Result<(Checkpoint, serde_json::Value)> {
    let mut c = Cursor::new(bytes);
    c.magic(CHECKPOINT_MAGIC)?;
    let count = c.u32("tensor count")? as usize;
    let mut raw = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let offset = c.pos;
        let name = c.string("tensor name")?;
        let rank = c.u32("tensor rank")? as usize;
        let shape = (0..rank)
            .map(|_| c.u32("tensor dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let Some(n) = n else {
            return c.fail(format!("tensor {name} shape {shape:?} overflows"));
        };
        let data = c.floats(n, &format!("tensor {name}"))?;
        raw.push(RawTensor { name, shape, offset, data });
    }
    let meta_len = c.u32("metadata length")? as usize;
    let meta_offset = c.pos;
    let meta: CheckpointMeta = serde_json::from_slice(c.take(meta_len, "metadata")?).map_err(|e| Error::Format {
        offset: meta_offset as u64,
        message: format!("metadata: {e}"),
    })?;
    c.finish()?;

    let arch = match expected {
        Some(exp) if std::mem::discriminant(exp) != std::mem::discriminant(&meta.architecture) => {
            return Err(Error::InvalidConfig(format!(
                "checkpoint holds {:?}, expected {:?}",
                meta.architecture, exp
            )));
        }
        Some(exp) => exp.clone(),
        None => meta.architecture.clone(),
    };
    let ckpt = match arch {
        CheckpointArch::Encoder(a) => {
            let mut m = EncoderModel::zeros(&a)?;
            fill_model(&mut m, raw, &meta.trainable)?;
            Checkpoint::Encoder(m)
        }
        CheckpointArch::Phase(a) => {
            let mut m = PhaseModel::zeros(&a)?;
            fill_model(&mut m, raw, &meta.trainable)?;
            Checkpoint::Phase(m)
        }
    };
    Ok((ckpt, meta.metadata))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint, metadata: serde_json::Value) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ckpt, metadata)?)
}

pub fn load_checkpoint(path: &Path, expected: Option<&CheckpointArch>) -> Result<(Checkpoint, serde_json::Value)> {
    let bytes = fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    decode_checkpoint(&bytes, expected)
}
