//! Baseline tone classification from fixed log-Mel windows centered on each
//! tone center, swept over window length.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linmodel::{fit_with_classes, macro_f1, FitConfig};
use crate::signal::{extract_window, log_mel, MelConfig, MelSpectrogram};
use crate::synthcorpus::{Corpus, Utterance};

/// 20, 40, …, 300 ms.
pub fn default_spans() -> Vec<f64> {
    (1..=15).map(|i| 20.0 * i as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanCurve {
    /// `(span_ms, macro_f1)`, strictly increasing in span.
    pub points: Vec<(f64, f64)>,
    pub language_tag: String,
    pub n_train: usize,
    pub n_test: usize,
}

impl SpanCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("span_ms,macro_f1\n");
        for (span, f1) in &self.points {
            s.push_str(&format!("{span},{f1:.6}\n"));
        }
        s
    }

    pub fn f1_at(&self, span_ms: f64) -> Option<f64> {
        self.points.iter().find(|p| p.0 == span_ms).map(|p| p.1)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub mel: MelConfig,
    pub fit: FitConfig,
}

struct Prepared {
    mels: Vec<MelSpectrogram>,
    n_segments: usize,
}

fn prepare(utts: &[Utterance], mel: &MelConfig) -> Result<Prepared> {
    let mels = utts
        .par_iter()
        .map(|u| log_mel(&u.waveform, mel))
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        mels,
        n_segments: utts.iter().map(|u| u.segments.len()).sum(),
    })
}

fn features(utts: &[Utterance], prep: &Prepared, span_ms: f64) -> Result<(Array2<f64>, Vec<String>)> {
    let mut rows = Vec::new();
    let mut labels = Vec::with_capacity(prep.n_segments);
    let mut dim = 0;
    for (u, mel) in utts.iter().zip(&prep.mels) {
        for seg in &u.segments {
            let fv = extract_window(mel, seg.t_c, span_ms)?;
            dim = fv.values.len();
            rows.extend_from_slice(&fv.values);
            labels.push(seg.label.clone());
        }
    }
    let x = Array2::from_shape_vec((labels.len(), dim), rows).expect("uniform window length");
    Ok((x, labels))
}

/// Macro-F1 on `test` of a classifier trained on `train`, for each span.
pub fn span_sweep(train: &Corpus, test: &Corpus, spans: &[f64], cfg: &SweepConfig) -> Result<SpanCurve> {
    if spans.is_empty() {
        return invalid("no spans to sweep");
    }
    if spans.iter().any(|&s| !(s >= 20.0)) {
        return invalid("every span must be at least 20 ms");
    }
    if spans.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("spans must be strictly increasing");
    }
    if train.inventory.labels() != test.inventory.labels() {
        return invalid("train and test corpora use different tone inventories");
    }
    let prep_train = prepare(&train.utterances, &cfg.mel)?;
    let prep_test = prepare(&test.utterances, &cfg.mel)?;
    if prep_train.n_segments == 0 || prep_test.n_segments == 0 {
        return invalid("train and test corpora must both contain tone segments");
    }
    let classes = {
        let mut c = train.inventory.labels();
        c.sort();
        c
    };
    let points = spans
        .par_iter()
        .map(|&span| {
            let (xtr, ytr) = features(&train.utterances, &prep_train, span)?;
            let model = fit_with_classes(xtr.view(), &ytr, &classes, &cfg.fit)?;
            let (xte, yte) = features(&test.utterances, &prep_test, span)?;
            let pred = model.predict_all(xte.view())?;
            Ok((span, macro_f1(&pred, &yte)?.macro_f1))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpanCurve {
        points,
        language_tag: train.inventory.language_tag.clone(),
        n_train: prep_train.n_segments,
        n_test: prep_test.n_segments,
    })
}

/// Span with the highest macro-F1; ties go to the shortest span.
pub fn optimal_span(c: &SpanCurve) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &(span, f1) in &c.points {
        if best.map_or(true, |(_, b)| f1 > b) {
            best = Some((span, f1));
        }
    }
    best.map(|b| b.0)
}
