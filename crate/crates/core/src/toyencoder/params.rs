use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::interchange::{read_tensor, write_atomic, write_tensor, DType};
use crate::rng::SplitMix64;

/// Head class for frames outside every tone segment.
pub const NULL_LABEL: &str = "<null>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub num_layers: usize,
    pub sample_rate: u32,
    pub kernel: usize,
    pub stride: usize,
    pub sub_kernel: usize,
    pub sub_stride: usize,
    pub energy_floor: f64,
    /// Frontend filters start as Hann-windowed cosines with centers evenly
    /// spaced over this band (Hz) and random phases; Gaussian when absent.
    pub bandpass_init: Option<(f64, f64)>,
    /// Relative offsets beyond ±max_rel frames share the edge bias.
    pub max_rel: usize,
    /// Std multiplier for query/key init; larger gives peakier attention.
    pub qk_gain: f64,
    /// When set, frame i attends only to frames within this many frames.
    pub attention_radius: Option<usize>,
    pub ln_eps: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            d_ff: 64,
            num_layers: 4,
            sample_rate: 16_000,
            kernel: 400,
            stride: 320,
            sub_kernel: 320,
            sub_stride: 8,
            energy_floor: 1e-4,
            bandpass_init: Some((60.0, 1000.0)),
            max_rel: 25,
            qk_gain: 1.0,
            attention_radius: None,
            ln_eps: 1e-5,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 2 {
            return invalid("encoder needs at least 2 layers");
        }
        if self.d_model == 0 || self.d_ff == 0 || self.stride == 0 || self.sub_stride == 0 {
            return invalid("encoder widths and strides must be positive");
        }
        if self.sub_kernel == 0 || self.sub_kernel > self.kernel || (self.kernel - self.sub_kernel) % self.sub_stride != 0 {
            return invalid("sub_kernel must fit the kernel in whole sub_stride steps");
        }
        if !(self.energy_floor > 0.0 && self.ln_eps > 0.0 && self.qk_gain > 0.0) {
            return invalid("energy_floor, ln_eps and qk_gain must be positive");
        }
        if let Some((lo, hi)) = self.bandpass_init {
            if !(lo > 0.0 && lo < hi && hi < self.sample_rate as f64 / 2.0) {
                return invalid("bandpass_init needs 0 < lo < hi < sample_rate / 2");
            }
        }
        Ok(())
    }

    /// Filter positions per frame.
    pub fn positions(&self) -> usize {
        (self.kernel - self.sub_kernel) / self.sub_stride + 1
    }

    pub fn frame_hop_s(&self) -> f64 {
        self.stride as f64 / self.sample_rate as f64
    }

    pub fn frame_kernel_s(&self) -> f64 {
        self.kernel as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    /// Indexed by `clamp(j − i, −R, R) + R`.
    pub rel_bias: Array1<f64>,
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    /// Head classes; index 0 is [`NULL_LABEL`].
    pub labels: Vec<String>,
    /// `[channels × sub_kernel]`; channels equal `d_model`.
    pub conv_w: Array2<f64>,
    pub conv_b: Array1<f64>,
    pub ln0_g: Array1<f64>,
    pub ln0_b: Array1<f64>,
    pub blocks: Vec<BlockParams>,
    /// `[d_model × num_classes]`.
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

/// Unit-norm windowed cosines, one per channel.
fn bandpass_bank(rng: &mut SplitMix64, channels: usize, taps: usize, fs: f64, lo: f64, hi: f64) -> Array2<f64> {
    let mut w = Array2::zeros((channels, taps));
    for (c, mut row) in w.rows_mut().into_iter().enumerate() {
        let f = if channels == 1 { lo } else { lo + (hi - lo) * c as f64 / (channels - 1) as f64 };
        let phase = rng.uniform(0.0, 2.0 * PI);
        for (n, v) in row.iter_mut().enumerate() {
            let hann = 0.5 - 0.5 * (2.0 * PI * (n as f64 + 0.5) / taps as f64).cos();
            *v = hann * (2.0 * PI * f * n as f64 / fs + phase).cos();
        }
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    w
}

fn gauss2(rng: &mut SplitMix64, r: usize, c: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || std * rng.gaussian())
}

/// Scaled-Gaussian initialization; deterministic in `seed`.
pub fn random_params(config: &EncoderConfig, tone_labels: &[String], seed: u64) -> Result<EncoderParams> {
    config.validate()?;
    if tone_labels.iter().any(|l| l == NULL_LABEL) {
        return invalid(format!("{NULL_LABEL} is reserved"));
    }
    let mut rng = SplitMix64::new(seed);
    let (d, f) = (config.d_model, config.d_ff);
    let sd = 1.0 / (d as f64).sqrt();
    let conv_w = match config.bandpass_init {
        Some((lo, hi)) => bandpass_bank(&mut rng, d, config.sub_kernel, config.sample_rate as f64, lo, hi),
        None => gauss2(&mut rng, d, config.sub_kernel, 1.0 / (config.sub_kernel as f64).sqrt()),
    };
    let blocks = (0..config.num_layers)
        .map(|_| BlockParams {
            wq: gauss2(&mut rng, d, d, config.qk_gain * sd),
            wk: gauss2(&mut rng, d, d, config.qk_gain * sd),
            wv: gauss2(&mut rng, d, d, sd),
            wo: gauss2(&mut rng, d, d, sd),
            rel_bias: Array1::zeros(2 * config.max_rel + 1),
            ln1_g: Array1::ones(d),
            ln1_b: Array1::zeros(d),
            w1: gauss2(&mut rng, d, f, sd),
            b1: Array1::zeros(f),
            w2: gauss2(&mut rng, f, d, 1.0 / (f as f64).sqrt()),
            b2: Array1::zeros(d),
            ln2_g: Array1::ones(d),
            ln2_b: Array1::zeros(d),
        })
        .collect();
    let mut labels = vec![NULL_LABEL.to_string()];
    labels.extend(tone_labels.iter().cloned());
    let k = labels.len();
    Ok(EncoderParams {
        config: config.clone(),
        labels,
        conv_w,
        conv_b: Array1::zeros(d),
        ln0_g: Array1::ones(d),
        ln0_b: Array1::zeros(d),
        blocks,
        head_w: gauss2(&mut rng, d, k, sd),
        head_b: Array1::zeros(k),
    })
}

macro_rules! visit_fields {
    ($p:expr, $out:ident, $as:ident, $blocks:ident) => {{
        $out.push(("conv_w".to_string(), $p.conv_w.$as()));
        $out.push(("conv_b".to_string(), $p.conv_b.$as()));
        $out.push(("ln0_g".to_string(), $p.ln0_g.$as()));
        $out.push(("ln0_b".to_string(), $p.ln0_b.$as()));
        for (i, b) in $p.blocks.$blocks().enumerate() {
            $out.push((format!("block{i}.wq"), b.wq.$as()));
            $out.push((format!("block{i}.wk"), b.wk.$as()));
            $out.push((format!("block{i}.wv"), b.wv.$as()));
            $out.push((format!("block{i}.wo"), b.wo.$as()));
            $out.push((format!("block{i}.rel_bias"), b.rel_bias.$as()));
            $out.push((format!("block{i}.ln1_g"), b.ln1_g.$as()));
            $out.push((format!("block{i}.ln1_b"), b.ln1_b.$as()));
            $out.push((format!("block{i}.w1"), b.w1.$as()));
            $out.push((format!("block{i}.b1"), b.b1.$as()));
            $out.push((format!("block{i}.w2"), b.w2.$as()));
            $out.push((format!("block{i}.b2"), b.b2.$as()));
            $out.push((format!("block{i}.ln2_g"), b.ln2_g.$as()));
            $out.push((format!("block{i}.ln2_b"), b.ln2_b.$as()));
        }
        $out.push(("head_w".to_string(), $p.head_w.$as()));
        $out.push(("head_b".to_string(), $p.head_b.$as()));
    }};
}

trait Flat {
    fn flat(&self) -> &[f64];
    fn flat_mut(&mut self) -> &mut [f64];
    fn shape_vec(&self) -> Vec<usize>;
}

impl<D: ndarray::Dimension> Flat for ndarray::Array<f64, D> {
    fn flat(&self) -> &[f64] {
        self.as_slice().expect("standard layout")
    }
    fn flat_mut(&mut self) -> &mut [f64] {
        self.as_slice_mut().expect("standard layout")
    }
    fn shape_vec(&self) -> Vec<usize> {
        self.shape().to_vec()
    }
}

impl EncoderParams {
    /// Every parameter tensor as `(name, data)` in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        visit_fields!(self, out, flat, iter);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        visit_fields!(self, out, flat_mut, iter_mut);
        out
    }

    fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        visit_fields!(self, out, shape_vec, iter);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, s)| s.len()).sum()
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, s) in z.tensors_mut() {
            s.fill(0.0);
        }
        z
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, s)| s.iter().all(|v| v.is_finite()))
    }

    /// Stable digest of all parameter values.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (name, s) in self.tensors() {
            h.update(name.as_bytes());
            for v in s {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsHeader {
    format: String,
    config: EncoderConfig,
    labels: Vec<String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    dims: Vec<usize>,
    file: String,
}

pub const PARAMS_HEADER: &str = "encoder.json";

/// `dir/encoder.json` plus one float64 tensor file per parameter.
pub fn save_params(p: &EncoderParams, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let shapes = p.shapes();
    let mut entries = Vec::new();
    for ((name, data), (_, dims)) in p.tensors().into_iter().zip(shapes) {
        let file = format!("{name}.tspn");
        write_tensor(dir.join(&file), DType::Float64, &dims, data)?;
        entries.push(TensorEntry { name, dims, file });
    }
    let header = ParamsHeader {
        format: "toyencoder-v1".into(),
        config: p.config.clone(),
        labels: p.labels.clone(),
        tensors: entries,
    };
    write_atomic(&dir.join(PARAMS_HEADER), serde_json::to_string_pretty(&header)?.as_bytes())
}

pub fn load_params(dir: impl AsRef<Path>) -> Result<EncoderParams> {
    let dir = dir.as_ref();
    let header: ParamsHeader = serde_json::from_slice(&fs::read(dir.join(PARAMS_HEADER))?)?;
    if header.labels.first().map(String::as_str) != Some(NULL_LABEL) {
        return invalid("encoder labels must start with the null label");
    }
    let mut p = random_params(&header.config, &header.labels[1..], 0)?;
    let shapes = p.shapes();
    if shapes.len() != header.tensors.len() {
        return Err(Error::CorruptTensor(format!(
            "expected {} parameter tensors, header lists {}",
            shapes.len(),
            header.tensors.len()
        )));
    }
    for ((name, slot), ((_, dims), entry)) in p.tensors_mut().into_iter().zip(shapes.iter().zip(&header.tensors)) {
        if entry.name != name || &entry.dims != dims {
            return Err(Error::CorruptTensor(format!("{}: expected {name} {dims:?}", entry.name)));
        }
        let t = read_tensor(dir.join(&entry.file))?;
        if &t.dims != dims {
            return Err(Error::CorruptTensor(format!("{name}: file shape {:?}", t.dims)));
        }
        slot.copy_from_slice(&t.data);
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> Vec<String> {
        ["T1", "T2", "T3"].map(String::from).to_vec()
    }

    #[test]
    fn seeds_control_init() {
        let c = EncoderConfig::default();
        let a = random_params(&c, &labels(), 1).unwrap();
        assert_eq!(a, random_params(&c, &labels(), 1).unwrap());
        assert_ne!(a, random_params(&c, &labels(), 2).unwrap());
        assert_eq!(a.labels[0], NULL_LABEL);
        assert_eq!(a.num_classes(), 4);
    }

    #[test]
    fn config_checks() {
        let mut c = EncoderConfig::default();
        c.num_layers = 1;
        assert!(c.validate().is_err());
        let mut c = EncoderConfig::default();
        c.sub_kernel = 150;
        assert!(c.validate().is_err());
        assert_eq!(EncoderConfig::default().positions(), 11);
        assert!(random_params(&EncoderConfig::default(), &[NULL_LABEL.to_string()], 0).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let p = random_params(&EncoderConfig::default(), &labels(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_params(&p, dir.path()).unwrap();
        let q = load_params(dir.path()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.checksum(), q.checksum());
    }

    #[test]
    fn tensor_listing_covers_everything() {
        let p = random_params(&EncoderConfig::default(), &labels(), 5).unwrap();
        let names: Vec<String> = p.tensors().into_iter().map(|t| t.0).collect();
        assert_eq!(names.len(), 4 + 13 * 4 + 2);
        assert!(names.contains(&"block3.rel_bias".to_string()));
        let z = p.zeros_like();
        assert!(z.tensors().iter().all(|(_, s)| s.iter().all(|&v| v == 0.0)));
        assert_eq!(z.num_params(), p.num_params());
    }
}
