use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::inventory::{ToneInventory, ToneTemplate};
use super::{ToneSegment, Utterance};
use crate::error::{invalid, Result};
use crate::rng::SplitMix64;
use crate::signal::Waveform;

/// F0 track resolution.
pub const SYNTH_STEP_S: f64 = 0.005;
const GRID_TOL: f64 = 1e-9;

/// Pitch track sampled every [`SYNTH_STEP_S`] seconds from the syllable
/// onset. `hz[k]` is the F0 at `k·step_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Track {
    pub step_s: f64,
    pub hz: Vec<f64>,
    pub carrier_hz: f64,
    /// Cue window `[start, end]` in seconds from the syllable onset.
    pub cue_window_s: (f64, f64),
}

impl F0Track {
    pub fn time_at(&self, k: usize) -> f64 {
        k as f64 * self.step_s
    }

    /// Deviation from the carrier at grid point `k`.
    pub fn deviation(&self, k: usize) -> f64 {
        self.hz[k] - self.carrier_hz
    }

    /// Last grid index inside the cue window.
    fn last_cue_index(&self) -> usize {
        ((self.cue_window_s.1 + GRID_TOL) / self.step_s).floor() as usize
    }
}

/// Flat carrier with a pitch range mapping normalized targets to Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Carrier {
    pub base_hz: f64,
    pub range_hz: f64,
}

impl Default for Carrier {
    fn default() -> Self {
        Self {
            base_hz: 120.0,
            range_hz: 20.0,
        }
    }
}

/// F0 track for `template` over a syllable of `dur_s` seconds on the
/// default carrier.
pub fn synth_contour(template: &ToneTemplate, dur_s: f64) -> Result<F0Track> {
    synth_contour_on(template, dur_s, Carrier::default())
}

/// The track equals `carrier.base_hz` at every grid point outside the
/// centered cue window and follows the template's shape inside it.
pub fn synth_contour_on(template: &ToneTemplate, dur_s: f64, carrier: Carrier) -> Result<F0Track> {
    let cue_s = template.cue_span_ms / 1000.0;
    if !(dur_s + GRID_TOL >= cue_s) {
        return invalid(format!(
            "duration {dur_s} s shorter than cue span {} ms",
            template.cue_span_ms
        ));
    }
    let w0 = dur_s / 2.0 - cue_s / 2.0;
    let w1 = dur_s / 2.0 + cue_s / 2.0;
    let n = (dur_s / SYNTH_STEP_S - GRID_TOL).ceil() as usize + 1;
    let hz = (0..n)
        .map(|k| {
            let t = k as f64 * SYNTH_STEP_S;
            if t >= w0 - GRID_TOL && t <= w1 + GRID_TOL {
                let u = ((t - w0) / (w1 - w0)).clamp(0.0, 1.0);
                carrier.base_hz + carrier.range_hz * template.shape_at(u)
            } else {
                carrier.base_hz
            }
        })
        .collect();
    Ok(F0Track {
        step_s: SYNTH_STEP_S,
        hz,
        carrier_hz: carrier.base_hz,
        cue_window_s: (w0, w1),
    })
}

/// Synthesis knobs. All ranges are inclusive-exclusive uniform draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub sample_rate: u32,
    /// Per-utterance carrier F0 range.
    pub base_f0_hz: (f64, f64),
    /// Hz deviation for a normalized target of ±1.
    pub pitch_range_hz: f64,
    /// Per-syllable multiplier on the pitch range.
    pub depth: (f64, f64),
    /// Syllable duration is the tone's cue span plus this much.
    pub syllable_extra_ms: (f64, f64),
    pub gap_ms: (f64, f64),
    pub edge_silence_ms: f64,
    pub harmonics: usize,
    /// RMS of the voiced carrier before noise.
    pub level: f64,
    /// Noise power relative to the nominal voiced level.
    pub snr_db: f64,
    /// Onset/offset ramp of each syllable.
    pub ramp_ms: f64,
    /// Relative tone frequencies; uniform when absent.
    pub tone_weights: Option<Vec<f64>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            base_f0_hz: (100.0, 160.0),
            pitch_range_hz: 20.0,
            depth: (0.7, 1.3),
            syllable_extra_ms: (20.0, 60.0),
            gap_ms: (20.0, 80.0),
            edge_silence_ms: 100.0,
            harmonics: 10,
            level: 0.1,
            snr_db: 20.0,
            ramp_ms: 15.0,
            tone_weights: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self, inv: &ToneInventory) -> Result<()> {
        let ordered = |(a, b): (f64, f64)| a <= b && a.is_finite() && b.is_finite();
        if self.sample_rate == 0 || self.harmonics == 0 {
            return invalid("sample rate and harmonic count must be positive");
        }
        if !ordered(self.base_f0_hz) || self.base_f0_hz.0 <= 0.0 {
            return invalid("base_f0_hz must be an increasing positive range");
        }
        if !ordered(self.depth) || !ordered(self.syllable_extra_ms) || !ordered(self.gap_ms) {
            return invalid("ranges must be finite and ordered");
        }
        if self.syllable_extra_ms.0 < 0.0 || self.gap_ms.0 < 0.0 || self.edge_silence_ms < 0.0 {
            return invalid("durations must be non-negative");
        }
        if self.base_f0_hz.0 - self.pitch_range_hz * self.depth.1 <= 0.0 {
            return invalid("pitch range would push F0 below zero");
        }
        if let Some(w) = &self.tone_weights {
            if w.len() != inv.tones.len() || w.iter().any(|x| !(*x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return invalid("tone_weights must be non-negative, one per tone, not all zero");
            }
        }
        Ok(())
    }

    fn noise_sigma(&self) -> f64 {
        self.level * 10f64.powf(-self.snr_db / 20.0)
    }
}

/// Everything random about one syllable.
#[derive(Debug, Clone, PartialEq)]
pub struct SyllablePlan {
    pub tone: usize,
    pub dur_samples: usize,
    pub gap_samples: usize,
    pub depth: f64,
    /// Three (center Hz, bandwidth Hz) resonances.
    pub formants: [(f64, f64); 3],
}

/// Everything random about one utterance; rendering is a pure function of it.
#[derive(Debug, Clone, PartialEq)]
pub struct UtterancePlan {
    pub base_hz: f64,
    pub lead_samples: usize,
    pub trail_samples: usize,
    pub syllables: Vec<SyllablePlan>,
    pub noise_seed: u64,
}

const FORMANT_RANGES: [((f64, f64), (f64, f64)); 3] = [
    ((300.0, 850.0), (60.0, 110.0)),
    ((850.0, 2300.0), (80.0, 140.0)),
    ((2300.0, 3200.0), (110.0, 200.0)),
];
const FORMANT_GAINS: [f64; 3] = [1.0, 0.6, 0.35];

pub fn draw_plan(
    inv: &ToneInventory,
    n_syllables: usize,
    rng: &mut SplitMix64,
    cfg: &SynthConfig,
) -> Result<UtterancePlan> {
    if n_syllables == 0 {
        return invalid("n_syllables must be at least 1");
    }
    inv.validate()?;
    cfg.validate(inv)?;
    let fs = cfg.sample_rate as f64;
    let to_samples = |ms: f64| (ms / 1000.0 * fs).round() as usize;
    let noise_seed = rng.next_u64();
    let base_hz = rng.uniform(cfg.base_f0_hz.0, cfg.base_f0_hz.1);
    let uniform = vec![1.0; inv.tones.len()];
    let weights = cfg.tone_weights.as_deref().unwrap_or(&uniform);
    let syllables = (0..n_syllables)
        .map(|i| {
            let tone = rng.weighted(weights);
            let cue = inv.tones[tone].cue_span_ms;
            let dur_samples = to_samples(cue + rng.uniform(cfg.syllable_extra_ms.0, cfg.syllable_extra_ms.1));
            let gap = rng.uniform(cfg.gap_ms.0, cfg.gap_ms.1);
            let depth = rng.uniform(cfg.depth.0, cfg.depth.1);
            let mut formants = [(0.0, 0.0); 3];
            for (f, ((flo, fhi), (blo, bhi))) in formants.iter_mut().zip(FORMANT_RANGES) {
                *f = (rng.uniform(flo, fhi), rng.uniform(blo, bhi));
            }
            SyllablePlan {
                tone,
                dur_samples,
                gap_samples: if i + 1 < n_syllables { to_samples(gap) } else { 0 },
                depth,
                formants,
            }
        })
        .collect();
    Ok(UtterancePlan {
        base_hz,
        lead_samples: to_samples(cfg.edge_silence_ms),
        trail_samples: to_samples(cfg.edge_silence_ms),
        syllables,
        noise_seed,
    })
}

fn formant_gain(formants: &[(f64, f64); 3], f: f64) -> f64 {
    formants
        .iter()
        .zip(FORMANT_GAINS)
        .map(|(&(c, bw), g)| g / (1.0 + ((f - c) / bw).powi(2)))
        .sum()
}

fn harmonic_sum(formants: &[(f64, f64); 3], f0: f64, phase: f64, cfg: &SynthConfig) -> f64 {
    let nyquist = cfg.sample_rate as f64 / 2.0;
    (1..=cfg.harmonics)
        .take_while(|&h| h as f64 * f0 < nyquist)
        .map(|h| formant_gain(formants, h as f64 * f0) * (h as f64 * phase).sin())
        .sum()
}

/// Render one syllable into `out`. Outside `[cue_start − step, cue_end + step]`
/// the samples depend only on the carrier, never on the tone.
fn render_syllable(out: &mut [f64], track: &F0Track, plan: &SyllablePlan, cfg: &SynthConfig) {
    let fs = cfg.sample_rate as f64;
    let base = track.carrier_hz;
    let nyquist = fs / 2.0;
    let carrier_power: f64 = (1..=cfg.harmonics)
        .take_while(|&h| h as f64 * base < nyquist)
        .map(|h| formant_gain(&plan.formants, h as f64 * base).powi(2) / 2.0)
        .sum();
    let gain = cfg.level / carrier_power.sqrt();
    let ramp = ((cfg.ramp_ms / 1000.0 * fs).round() as usize).min(out.len() / 4).max(1);
    let k_end = track.last_cue_index();
    let fade_start = track.time_at(k_end);
    let fade_end = track.time_at(k_end + 1);
    let len = out.len();

    // Accumulated deviation phase, in cycles.
    let mut dev_cycles = 0.0;
    for (n, slot) in out.iter_mut().enumerate() {
        let tau = n as f64 / fs;
        let pos = tau / track.step_s;
        let k = (pos.floor() as usize).min(track.hz.len() - 1);
        let dev = if k + 1 < track.hz.len() {
            let frac = pos - k as f64;
            track.deviation(k) * (1.0 - frac) + track.deviation(k + 1) * frac
        } else {
            track.deviation(k)
        };
        dev_cycles += dev / fs;
        let carrier_phase = TAU * base * tau;
        let alpha = if tau <= fade_start {
            0.0
        } else if tau >= fade_end {
            1.0
        } else {
            (tau - fade_start) / (fade_end - fade_start)
        };
        let toned = if alpha < 1.0 {
            harmonic_sum(&plan.formants, base + dev, carrier_phase + TAU * dev_cycles, cfg)
        } else {
            0.0
        };
        let plain = if alpha > 0.0 {
            harmonic_sum(&plan.formants, base, carrier_phase, cfg)
        } else {
            0.0
        };
        let env = if n < ramp {
            0.5 - 0.5 * (std::f64::consts::PI * n as f64 / ramp as f64).cos()
        } else if len - n <= ramp {
            0.5 - 0.5 * (std::f64::consts::PI * (len - n) as f64 / ramp as f64).cos()
        } else {
            1.0
        };
        *slot = gain * env * ((1.0 - alpha) * toned + alpha * plain);
    }
}

/// Render a plan into an utterance.
pub fn render(plan: &UtterancePlan, inv: &ToneInventory, cfg: &SynthConfig, id: &str) -> Result<Utterance> {
    cfg.validate(inv)?;
    let fs = cfg.sample_rate as f64;
    let total = plan.lead_samples
        + plan
            .syllables
            .iter()
            .map(|s| s.dur_samples + s.gap_samples)
            .sum::<usize>()
        + plan.trail_samples;
    let mut samples = vec![0.0; total];
    let mut segments = Vec::with_capacity(plan.syllables.len());
    let mut cursor = plan.lead_samples;
    for syl in &plan.syllables {
        let template = inv
            .tones
            .get(syl.tone)
            .ok_or_else(|| crate::Error::InvalidArgument(format!("tone index {} out of range", syl.tone)))?;
        let dur_s = syl.dur_samples as f64 / fs;
        let carrier = Carrier {
            base_hz: plan.base_hz,
            range_hz: cfg.pitch_range_hz * syl.depth,
        };
        let track = synth_contour_on(template, dur_s, carrier)?;
        render_syllable(&mut samples[cursor..cursor + syl.dur_samples], &track, syl, cfg);
        segments.push(ToneSegment::new(
            &template.label,
            cursor as f64 / fs,
            (cursor + syl.dur_samples) as f64 / fs,
        )?);
        cursor += syl.dur_samples + syl.gap_samples;
    }
    let mut noise = SplitMix64::new(plan.noise_seed);
    let sigma = cfg.noise_sigma();
    for s in samples.iter_mut() {
        *s += sigma * noise.gaussian();
    }
    Ok(Utterance {
        id: id.to_string(),
        waveform: Waveform::new(samples, cfg.sample_rate)?,
        segments,
        language_tag: inv.language_tag.clone(),
    })
}

/// Draw and render an utterance of `n_syllables` syllables.
pub fn synth_utterance(
    inv: &ToneInventory,
    n_syllables: usize,
    rng: &mut SplitMix64,
    cfg: &SynthConfig,
    id: &str,
) -> Result<Utterance> {
    let plan = draw_plan(inv, n_syllables, rng, cfg)?;
    render(&plan, inv, cfg, id)
}
