//! Waveforms, log-Mel analysis and fixed-length windows around tone centers.

mod mel;
mod window;

pub use mel::{hz_to_mel, log_mel, mel_filterbank, mel_to_hz, MelConfig, MelSpectrogram};
pub use window::{extract_window, window_frame_range, FeatureVector, Provenance};

use std::path::Path;

use crate::error::{invalid, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono waveform with amplitudes nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return invalid("waveform has no samples");
        }
        if sample_rate == 0 {
            return invalid("sample rate must be positive");
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return invalid("waveform contains non-finite samples");
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Read a single-channel 16-bit PCM WAV file.
    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = hound::WavReader::open(path.as_ref())?;
        let spec = reader.spec();
        if spec.channels != 1 {
            return invalid(format!("{}: expected mono, got {} channels", path.as_ref().display(), spec.channels));
        }
        if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
            return invalid(format!("{}: expected 16-bit integer PCM", path.as_ref().display()));
        }
        let samples = reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(samples, spec.sample_rate)
    }

    /// Write as single-channel 16-bit PCM. Samples are clipped to [-1, 1)
    /// and rounded to the nearest code.
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut cursor = std::io::Cursor::new(Vec::new());
        {
            let mut writer = hound::WavWriter::new(&mut cursor, spec)?;
            for &s in &self.samples {
                writer.write_sample(quantize(s))?;
            }
            writer.finalize()?;
        }
        crate::interchange::write_atomic(path.as_ref(), cursor.get_ref())
    }
}

fn quantize(s: f64) -> i16 {
    (s * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}
