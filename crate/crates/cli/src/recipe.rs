//! The end-to-end experiment: corpus splits, baseline sweep, encoder
//! training, probes and gradient-sensitivity summaries.

use rayon::prelude::*;
use tonespan::gradsens::{encoder_histograms, span_summary, LayerGroup, SensitivityHistogram, SpanSummary};
use tonespan::probes::{evaluate_probes, train_probes, LayerCurve, ProbeInput, ProbeSet};
use tonespan::spansweep::{span_sweep, SpanCurve, SweepConfig};
use tonespan::synthcorpus::{make_corpus, Corpus, Utterance};
use tonespan::toyencoder::{forward, random_params, train_encoder, EncoderParams, LayerActivations, TrainReport};

use crate::config::{RunConfig, Split};
use crate::CliError;

pub type Result<T> = std::result::Result<T, CliError>;

pub fn corpus(cfg: &RunConfig, n: usize, split: Split, seed: u64) -> Result<Corpus> {
    if n == 0 {
        return Err(CliError::new("invalid_argument", format!("{split:?} split needs at least one utterance")));
    }
    Ok(make_corpus(&cfg.corpus.corpus_config(n, split, seed)?)?)
}

pub fn sweep(cfg: &RunConfig, seed: u64) -> Result<SpanCurve> {
    let train = corpus(cfg, cfg.spansweep.n_train, Split::Train, seed)?;
    let test = corpus(cfg, cfg.spansweep.n_test, Split::Test, seed)?;
    let sc = SweepConfig {
        mel: cfg.spansweep.mel.clone(),
        fit: cfg.spansweep.fit.clone(),
    };
    Ok(span_sweep(&train, &test, &cfg.spansweep.spans_ms, &sc)?)
}

/// Trained encoder; initialization equals `vanilla(cfg, labels, seed)`.
pub fn train(cfg: &RunConfig, seed: u64) -> Result<TrainReport> {
    let train = corpus(cfg, cfg.train.n_train, Split::Train, seed)?;
    let mut opt = cfg.train.optimizer.clone();
    opt.seed = seed;
    Ok(train_encoder(&train.utterances, &train.inventory.labels(), &cfg.encoder, &opt)?)
}

pub fn vanilla(cfg: &RunConfig, seed: u64) -> Result<EncoderParams> {
    let inv = cfg.corpus.corpus_config(1, Split::Train, seed)?.inventory;
    Ok(random_params(&cfg.encoder, &inv.labels(), seed)?)
}

pub fn activations(p: &EncoderParams, utts: &[Utterance]) -> Result<Vec<LayerActivations>> {
    Ok(utts
        .par_iter()
        .map(|u| forward(p, &u.waveform.samples))
        .collect::<tonespan::Result<Vec<_>>>()?)
}

pub struct ProbeRun {
    pub probes: ProbeSet,
    pub curve: LayerCurve,
}

/// Fit probes on `dev`, score them on `test`.
pub fn probe(p: &EncoderParams, cfg: &RunConfig, dev: &[Utterance], test: &[Utterance], model_tag: &str) -> Result<ProbeRun> {
    let da = activations(p, dev)?;
    let ta = activations(p, test)?;
    let di: Vec<_> = da.iter().zip(dev).map(|(acts, u)| ProbeInput { acts, segments: &u.segments }).collect();
    let ti: Vec<_> = ta.iter().zip(test).map(|(acts, u)| ProbeInput { acts, segments: &u.segments }).collect();
    let probes = train_probes(&di, &cfg.probe.fit)?;
    let lang = test.first().map(|u| u.language_tag.as_str()).unwrap_or("");
    let curve = evaluate_probes(&probes, &ti, model_tag, lang)?;
    Ok(ProbeRun { probes, curve })
}

pub fn groups(cfg: &RunConfig, num_layers: usize) -> Vec<LayerGroup> {
    if cfg.gradsens.groups.is_empty() {
        LayerGroup::halves(num_layers)
    } else {
        cfg.gradsens.groups.clone()
    }
}

pub struct GradsensRun {
    pub histograms: Vec<SensitivityHistogram>,
    pub summary: SpanSummary,
}

pub fn gradsens(
    p: &EncoderParams,
    probes: &ProbeSet,
    cfg: &RunConfig,
    test: &[Utterance],
    baseline_ms: Option<f64>,
) -> Result<GradsensRun> {
    let n = cfg.gradsens.n_utterances.min(test.len());
    let histograms = encoder_histograms(p, probes, &test[..n])?;
    let summary = span_summary(&histograms, &groups(cfg, p.blocks.len()), baseline_ms)?;
    Ok(GradsensRun { histograms, summary })
}

/// Dev and test splits shared by probing and gradient analysis.
pub fn probe_splits(cfg: &RunConfig, seed: u64) -> Result<(Corpus, Corpus)> {
    Ok((
        corpus(cfg, cfg.probe.n_dev, Split::Dev, seed)?,
        corpus(cfg, cfg.probe.n_test, Split::Test, seed)?,
    ))
}
