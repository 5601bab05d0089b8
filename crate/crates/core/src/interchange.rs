//! Tensor files and run manifests shared with external model exporters.
//!
//! A tensor file holds exactly one dense tensor, little-endian throughout:
//!
//! ```text
//! offset  size        field
//! 0       5           magic, ASCII "TSPN1"
//! 5       1           dtype code: 1 = float32, 2 = float64
//! 6       4           rank r (u32)
//! 10      4 * r       dims (u32 each), row-major order
//! 10+4r   n * size    payload, n = product(dims) (1 for rank 0)
//! ```
//!
//! Files are written to a temporary sibling and renamed into place so a
//! reader never observes a partial tensor.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"TSPN1";
const HEADER_FIXED: usize = 5 + 1 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Float32,
    Float64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::Float32 => 1,
            DType::Float64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::Float32),
            2 => Some(DType::Float64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::Float32 => 4,
            DType::Float64 => 8,
        }
    }
}

/// Decoded tensor. Data is always widened to `f64`; `dtype` records what
/// was on disk so float32 payloads round-trip exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Serialize a tensor to bytes without touching the filesystem.
pub fn encode_tensor(dtype: DType, dims: &[usize], data: &[f64]) -> Result<Vec<u8>> {
    let numel: usize = dims.iter().product();
    if numel != data.len() {
        return Err(Error::DimensionMismatch {
            expected: numel,
            got: data.len(),
        });
    }
    let mut buf = Vec::with_capacity(HEADER_FIXED + 4 * dims.len() + numel * dtype.size());
    buf.extend_from_slice(MAGIC);
    buf.push(dtype.code());
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        let d = u32::try_from(d)
            .map_err(|_| Error::InvalidArgument(format!("dimension {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    match dtype {
        DType::Float32 => data
            .iter()
            .for_each(|v| buf.extend_from_slice(&(*v as f32).to_le_bytes())),
        DType::Float64 => data.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(buf)
}

/// Parse bytes produced by [`encode_tensor`]. `origin` is only used in
/// error messages.
pub fn decode_tensor(bytes: &[u8], origin: &Path) -> Result<Tensor> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::NotTensorFile(origin.to_path_buf()));
    }
    let corrupt = |why: String| Error::CorruptTensor(format!("{}: {why}", origin.display()));
    if bytes.len() < HEADER_FIXED {
        return Err(corrupt("truncated header".into()));
    }
    let dtype = DType::from_code(bytes[5])
        .ok_or_else(|| corrupt(format!("unknown dtype code {}", bytes[5])))?;
    let rank = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let dims_end = rank
        .checked_mul(4)
        .and_then(|n| n.checked_add(HEADER_FIXED))
        .ok_or_else(|| corrupt("rank overflow".into()))?;
    if bytes.len() < dims_end {
        return Err(corrupt("truncated dims".into()));
    }
    let dims: Vec<usize> = bytes[HEADER_FIXED..dims_end]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let numel = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| corrupt("element count overflow".into()))?;
    let payload = &bytes[dims_end..];
    let expected = numel
        .checked_mul(dtype.size())
        .ok_or_else(|| corrupt("payload size overflow".into()))?;
    if payload.len() != expected {
        return Err(corrupt(format!(
            "payload is {} bytes, header declares {expected}",
            payload.len()
        )));
    }
    let data = match dtype {
        DType::Float32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::Float64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok(Tensor { dtype, dims, data })
}

pub fn write_tensor(path: impl AsRef<Path>, dtype: DType, dims: &[usize], data: &[f64]) -> Result<()> {
    let bytes = encode_tensor(dtype, dims, data)?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_tensor(&bytes, path)
}

/// Write-then-rename so concurrent readers only ever see complete files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Hex SHA-256 of a canonical JSON rendering of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    // serde_json::Value sorts object keys, which makes the rendering canonical.
    let canonical = serde_json::to_vec(&serde_json::to_value(value)?)?;
    Ok(hex::encode(Sha256::digest(&canonical)))
}

/// Gradient tensor reference: one input gradient for one tone segment at
/// one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientRef {
    /// Index into the utterance's segment list in the corpus manifest.
    pub segment: usize,
    pub layer: usize,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceFiles {
    pub id: String,
    /// Layer index → `[frames × dim]` activation tensor.
    #[serde(default)]
    pub activations: BTreeMap<usize, PathBuf>,
    #[serde(default)]
    pub gradients: Vec<GradientRef>,
}

/// Description of a set of per-utterance activation and gradient tensors.
/// Paths are relative to the manifest's directory unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub model_tag: String,
    pub language_tag: String,
    pub layers: Vec<usize>,
    pub frame_hop_s: f64,
    pub sample_rate: u32,
    pub utterances: Vec<UtteranceFiles>,
    pub config_hash: String,
    pub seed: u64,
    /// Corpus manifest supplying tone segments for the utterance ids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_manifest: Option<PathBuf>,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let manifest: RunManifest = serde_json::from_str(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((manifest, base))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        write_atomic(path.as_ref(), text.as_bytes())
    }

    /// Check that every referenced tensor exists and parses, and that
    /// activation shapes agree across layers. `expected_hash` is compared
    /// with the recorded config hash when given.
    pub fn validate(&self, base: &Path, expected_hash: Option<&str>) -> Result<()> {
        if let Some(h) = expected_hash {
            if h != self.config_hash {
                return Err(Error::InvalidArgument(format!(
                    "config hash mismatch: manifest {}, expected {h}",
                    self.config_hash
                )));
            }
        }
        if !(self.frame_hop_s > 0.0) || self.sample_rate == 0 {
            return Err(Error::InvalidArgument(
                "frame_hop_s and sample_rate must be positive".into(),
            ));
        }
        for utt in &self.utterances {
            let mut frames = None;
            for (layer, rel) in &utt.activations {
                if !self.layers.contains(layer) {
                    return Err(Error::InvalidArgument(format!(
                        "utterance {}: layer {layer} not in layer list",
                        utt.id
                    )));
                }
                let t = read_tensor(resolve(base, rel))?;
                if t.dims.len() != 2 {
                    return Err(Error::CorruptTensor(format!(
                        "{}: activations must be rank 2, got {:?}",
                        rel.display(),
                        t.dims
                    )));
                }
                match frames {
                    None => frames = Some(t.dims[0]),
                    Some(f) if f != t.dims[0] => {
                        return Err(Error::DimensionMismatch {
                            expected: f,
                            got: t.dims[0],
                        })
                    }
                    _ => {}
                }
            }
            for g in &utt.gradients {
                let t = read_tensor(resolve(base, &g.path))?;
                if t.dims.len() != 1 {
                    return Err(Error::CorruptTensor(format!(
                        "{}: gradients must be rank 1, got {:?}",
                        g.path.display(),
                        t.dims
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn resolve(base: &Path, rel: &Path) -> PathBuf {
    if rel.is_absolute() {
        rel.to_path_buf()
    } else {
        base.join(rel)
    }
}
