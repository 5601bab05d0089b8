//! TOML run configuration. Every table and key is optional; unknown keys are
//! rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tonespan::gradsens::LayerGroup;
use tonespan::linmodel::FitConfig;
use tonespan::signal::MelConfig;
use tonespan::spansweep::default_spans;
use tonespan::synthcorpus::{CorpusConfig, SynthConfig, ToneInventory};
use tonespan::toyencoder::{EncoderConfig, TrainConfig};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusSection,
    pub spansweep: SweepSection,
    pub encoder: EncoderConfig,
    pub train: TrainSection,
    pub probe: ProbeSection,
    pub gradsens: GradsensSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub language: String,
    /// Replaces every tone's cue span when set.
    pub cue_span_ms: Option<f64>,
    pub min_syllables: usize,
    pub max_syllables: usize,
    pub synth: SynthConfig,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            language: "tha".into(),
            cue_span_ms: None,
            min_syllables: 3,
            max_syllables: 6,
            synth: SynthConfig::default(),
        }
    }
}

/// Corpus splits; each draws from its own seed derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    Dev,
}

impl Split {
    pub fn seed(self, run_seed: u64) -> u64 {
        let k = match self {
            Split::Train => 1,
            Split::Test => 2,
            Split::Dev => 3,
        };
        run_seed.wrapping_mul(1000).wrapping_add(k)
    }
}

impl CorpusSection {
    pub fn corpus_config(&self, n: usize, split: Split, run_seed: u64) -> Result<CorpusConfig, CliError> {
        let mut inventory = ToneInventory::builtin(&self.language)?;
        if let Some(c) = self.cue_span_ms {
            inventory = inventory.with_cue_span(c)?;
        }
        Ok(CorpusConfig {
            inventory,
            num_utterances: n,
            min_syllables: self.min_syllables,
            max_syllables: self.max_syllables,
            seed: split.seed(run_seed),
            synth: self.synth.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub n_train: usize,
    pub n_test: usize,
    pub spans_ms: Vec<f64>,
    pub mel: MelConfig,
    pub fit: FitConfig,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            n_train: 300,
            n_test: 150,
            spans_ms: default_spans(),
            mel: MelConfig::default(),
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub n_train: usize,
    /// Optimizer settings; its `seed` is replaced by the run seed.
    pub optimizer: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            n_train: 800,
            optimizer: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    /// Probes are fit on the dev split and scored on the test split.
    pub n_dev: usize,
    pub n_test: usize,
    pub fit: FitConfig,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            n_dev: 200,
            n_test: 150,
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradsensSection {
    /// Test-split utterances whose segments enter the histograms.
    pub n_utterances: usize,
    /// Plot-only truncation radius; CSVs always hold full histograms.
    pub display_radius_ms: Option<f64>,
    /// Layer groups for summary statistics; lower/upper halves when empty.
    pub groups: Vec<LayerGroup>,
}

impl Default for GradsensSection {
    fn default() -> Self {
        Self {
            n_utterances: 60,
            display_radius_ms: None,
            groups: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| CliError::new("config", format!("{}: {}", path.display(), e.message())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[corpus]\nlanguag = \"tha\"\n").is_err());
        assert!(toml::from_str::<RunConfig>("[nonsense]\n").is_err());
        assert!(toml::from_str::<RunConfig>("[train.optimizer]\nepoch = 3\n").is_err());
    }

    #[test]
    fn nested_overrides() {
        let c: RunConfig = toml::from_str(
            "[corpus]\nlanguage = \"vie\"\n[corpus.synth]\nsnr_db = 10.0\n[train.optimizer]\nepochs = 3\n[encoder]\nattention_radius = 1\n",
        )
        .unwrap();
        assert_eq!(c.corpus.language, "vie");
        assert_eq!(c.corpus.synth.snr_db, 10.0);
        assert_eq!(c.train.optimizer.epochs, 3);
        assert_eq!(c.encoder.attention_radius, Some(1));
        assert_eq!(c.train.n_train, 800);
    }

    #[test]
    fn split_seeds_are_distinct() {
        assert_eq!(Split::Train.seed(2), 2001);
        assert_eq!(Split::Test.seed(2), 2002);
        assert_eq!(Split::Dev.seed(2), 2003);
    }
}
