use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::Waveform;
use crate::error::{invalid, Error, Result};

/// Frontend settings. Defaults: 25 ms Hann window, 10 ms hop, 40 HTK mel
/// bands spanning 0 Hz to Nyquist, log floor 1e-10.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelConfig {
    pub frame_len_s: f64,
    pub frame_hop_s: f64,
    pub num_mels: usize,
    pub log_floor: f64,
    pub f_min_hz: f64,
    /// Upper band edge; `None` means Nyquist.
    pub f_max_hz: Option<f64>,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            frame_len_s: 0.025,
            frame_hop_s: 0.010,
            num_mels: 40,
            log_floor: 1e-10,
            f_min_hz: 0.0,
            f_max_hz: None,
        }
    }
}

impl MelConfig {
    pub fn frame_len_samples(&self, sample_rate: u32) -> usize {
        (self.frame_len_s * sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.frame_hop_s * sample_rate as f64).round() as usize
    }

    pub fn fft_len(&self, sample_rate: u32) -> usize {
        self.frame_len_samples(sample_rate).next_power_of_two()
    }

    fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.num_mels == 0 {
            return invalid("num_mels must be positive");
        }
        if self.frame_len_samples(sample_rate) < 2 || self.hop_samples(sample_rate) == 0 {
            return invalid("frame length and hop must cover at least one sample");
        }
        if !(self.log_floor > 0.0) {
            return invalid("log floor must be positive");
        }
        let nyquist = sample_rate as f64 / 2.0;
        let f_max = self.f_max_hz.unwrap_or(nyquist);
        if !(self.f_min_hz >= 0.0 && f_max > self.f_min_hz && f_max <= nyquist) {
            return invalid("mel band edges must satisfy 0 <= f_min < f_max <= Nyquist");
        }
        Ok(())
    }
}

/// Log-energy matrix `[num_frames × num_mels]`. Frame `i` covers
/// `[i·hop, i·hop + frame_len)` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Array2<f64>,
    pub frame_hop_s: f64,
    pub frame_len_s: f64,
    pub num_mels: usize,
    pub log_floor: f64,
    pub duration_s: f64,
}

impl MelSpectrogram {
    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    /// Value used wherever a window runs past the utterance edge.
    pub fn floor_value(&self) -> f64 {
        self.log_floor.ln()
    }
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters `[num_mels × (fft_len/2 + 1)]` with peaks at
/// mel-equispaced centers. Also returns the center frequencies in Hz.
pub fn mel_filterbank(cfg: &MelConfig, sample_rate: u32) -> (Array2<f64>, Vec<f64>) {
    let n_fft = cfg.fft_len(sample_rate);
    let n_bins = n_fft / 2 + 1;
    let f_max = cfg.f_max_hz.unwrap_or(sample_rate as f64 / 2.0);
    let (m_lo, m_hi) = (hz_to_mel(cfg.f_min_hz), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..cfg.num_mels + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (cfg.num_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let mut fb = Array2::zeros((cfg.num_mels, n_bins));
    for m in 0..cfg.num_mels {
        let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f > lo && f <= c {
                (f - lo) / (c - lo)
            } else if f > c && f < hi {
                (hi - f) / (hi - c)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    (fb, edges[1..=cfg.num_mels].to_vec())
}

fn hann(n: usize) -> Vec<f64> {
    // Periodic Hann.
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// `frames[i][m] = ln(max(Σ_k fb[m][k]·|X_i(k)|², ε))` where `X_i` is the
/// FFT of the Hann-windowed, zero-padded frame `i`.
pub fn log_mel(w: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram> {
    cfg.validate(w.sample_rate)?;
    let frame_len = cfg.frame_len_samples(w.sample_rate);
    let hop = cfg.hop_samples(w.sample_rate);
    if w.len() < frame_len {
        return Err(Error::UtteranceTooShort {
            samples: w.len(),
            needed: frame_len,
        });
    }
    let n_frames = (w.len() - frame_len) / hop + 1;
    let n_fft = cfg.fft_len(w.sample_rate);
    let n_bins = n_fft / 2 + 1;
    let (fb, _) = mel_filterbank(cfg, w.sample_rate);
    let window = hann(frame_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);

    let mut power = Array2::<f64>::zeros((n_frames, n_bins));
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for i in 0..n_frames {
        let start = i * hop;
        for (j, slot) in buf.iter_mut().enumerate() {
            *slot = if j < frame_len {
                Complex::new(w.samples[start + j] * window[j], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for k in 0..n_bins {
            power[[i, k]] = buf[k].norm_sqr();
        }
    }
    let floor = cfg.log_floor;
    let frames = power.dot(&fb.t()).mapv(|e| e.max(floor).ln());
    Ok(MelSpectrogram {
        frames,
        frame_hop_s: hop as f64 / w.sample_rate as f64,
        frame_len_s: frame_len as f64 / w.sample_rate as f64,
        num_mels: cfg.num_mels,
        log_floor: floor,
        duration_s: w.duration_s(),
    })
}
