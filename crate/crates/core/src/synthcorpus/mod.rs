//! Synthetic tonal corpora with exact tone boundaries and known cue spans.
//!
//! Each syllable is an additive harmonic source (first ten harmonics of F0)
//! shaped by a per-syllable three-formant envelope. Tone identity lives only
//! in the F0 trajectory inside a window of `cue_span_ms` centered on the
//! syllable; everywhere else the pitch follows a flat per-utterance carrier.

mod inventory;
mod manifest;
mod synth;

pub use inventory::{ToneInventory, ToneTemplate, BUILTIN_LANGUAGES};
pub use manifest::{load_manifest, read_manifest, write_corpus, ManifestEntry, ManifestSegment};
pub use synth::{
    draw_plan, render, synth_contour, synth_contour_on, synth_utterance, Carrier, F0Track,
    SyllablePlan, SynthConfig, UtterancePlan, SYNTH_STEP_S,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::SplitMix64;
use crate::signal::Waveform;

/// Time-aligned tone-bearing unit. `t_c` is always the exact midpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ToneSegment {
    pub label: String,
    pub start_s: f64,
    pub end_s: f64,
    pub t_c: f64,
}

impl ToneSegment {
    pub fn new(label: &str, start_s: f64, end_s: f64) -> Result<Self> {
        if !(start_s >= 0.0 && start_s < end_s && end_s.is_finite()) {
            return invalid(format!("segment [{start_s}, {end_s}) is empty or negative"));
        }
        Ok(Self {
            label: label.to_string(),
            start_s,
            end_s,
            t_c: (start_s + end_s) / 2.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub waveform: Waveform,
    pub segments: Vec<ToneSegment>,
    pub language_tag: String,
}

impl Utterance {
    /// Segments sorted, non-overlapping and inside the waveform.
    pub fn validate(&self) -> Result<()> {
        let dur = self.waveform.duration_s();
        for pair in self.segments.windows(2) {
            if pair[1].start_s < pair[0].end_s {
                return invalid(format!("utterance {}: segments overlap or are unsorted", self.id));
            }
        }
        if self.segments.iter().any(|s| s.end_s > dur + 1e-9) {
            return invalid(format!("utterance {}: segment past end of audio", self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub inventory: ToneInventory,
    pub num_utterances: usize,
    pub min_syllables: usize,
    pub max_syllables: usize,
    pub seed: u64,
    #[serde(default)]
    pub synth: SynthConfig,
}

impl CorpusConfig {
    /// Built-in language with default synthesis settings and 3–6 syllables
    /// per utterance.
    pub fn builtin(language: &str, num_utterances: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            inventory: ToneInventory::builtin(language)?,
            num_utterances,
            min_syllables: 3,
            max_syllables: 6,
            seed,
            synth: SynthConfig::default(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
    pub inventory: ToneInventory,
    pub seed: u64,
}

impl Corpus {
    pub fn num_segments(&self) -> usize {
        self.utterances.iter().map(|u| u.segments.len()).sum()
    }
}

/// Generate a corpus. Utterance `i` draws from its own stream
/// `SplitMix64::stream(seed, i)`, so the result does not depend on
/// scheduling.
pub fn make_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    if cfg.inventory.tones.is_empty() {
        return invalid("empty tone inventory");
    }
    cfg.inventory.validate()?;
    cfg.synth.validate(&cfg.inventory)?;
    if cfg.min_syllables == 0 || cfg.min_syllables > cfg.max_syllables {
        return invalid("syllable range must satisfy 1 <= min <= max");
    }
    let span = (cfg.max_syllables - cfg.min_syllables + 1) as u64;
    let utterances = (0..cfg.num_utterances)
        .into_par_iter()
        .map(|i| {
            let mut rng = SplitMix64::stream(cfg.seed, i as u64);
            let n = cfg.min_syllables + rng.below(span) as usize;
            let id = format!("{}-{}-{:05}", cfg.inventory.language_tag, cfg.seed, i);
            synth_utterance(&cfg.inventory, n, &mut rng, &cfg.synth, &id)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        utterances,
        inventory: cfg.inventory.clone(),
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_corpus_is_fine() {
        let c = make_corpus(&CorpusConfig::builtin("tha", 0, 1).unwrap()).unwrap();
        assert!(c.utterances.is_empty());
    }

    #[test]
    fn seed_sensitivity() {
        let a = make_corpus(&CorpusConfig::builtin("tha", 2, 10).unwrap()).unwrap();
        let b = make_corpus(&CorpusConfig::builtin("tha", 2, 11).unwrap()).unwrap();
        assert_ne!(a.utterances[0].waveform.samples, b.utterances[0].waveform.samples);
    }

    #[test]
    fn bookkeeping_and_invariants() {
        let c = make_corpus(&CorpusConfig::builtin("vie", 200, 3).unwrap()).unwrap();
        assert_eq!(c.utterances.len(), 200);
        let per_utt: usize = c.utterances.iter().map(|u| u.segments.len()).sum();
        assert_eq!(c.num_segments(), per_utt);
        let labels = c.inventory.labels();
        for u in &c.utterances {
            u.validate().unwrap();
            assert!((3..=6).contains(&u.segments.len()));
            for s in &u.segments {
                assert_eq!(s.t_c, (s.start_s + s.end_s) / 2.0);
                assert!(labels.contains(&s.label));
            }
        }
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let cfg = CorpusConfig::builtin("lao", 5, 99).unwrap();
        let a = make_corpus(&cfg).unwrap();
        let b = make_corpus(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_inventory_is_rejected() {
        let mut cfg = CorpusConfig::builtin("tha", 1, 1).unwrap();
        cfg.inventory.tones.clear();
        assert!(make_corpus(&cfg).is_err());
    }
}
