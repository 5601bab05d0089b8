use super::MelSpectrogram;
use crate::error::{invalid, Result};

/// Where a feature vector came from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub utterance_id: String,
    pub t_c: f64,
    pub span_ms: f64,
}

/// Flattened `[frames × num_mels]` window around a tone center.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl FeatureVector {
    pub fn for_utterance(mut self, id: impl Into<String>) -> Self {
        self.provenance.utterance_id = id.into();
        self
    }
}

const INDEX_TOL: f64 = 1e-9;

/// Frame indices `[start, start + n)` (possibly outside the spectrogram)
/// whose centers `i·hop + frame_len/2` fall in `[t_c − span/2, t_c + span/2)`.
/// `n = ⌊span / hop⌋` regardless of `t_c`.
pub fn window_frame_range(mel: &MelSpectrogram, t_c: f64, span_ms: f64) -> (i64, usize) {
    let hop = mel.frame_hop_s;
    let n = (span_ms / 1000.0 / hop + INDEX_TOL).floor() as usize;
    // Tone center measured in hops from the first frame center.
    let q = (t_c - mel.frame_len_s / 2.0) / hop;
    let start = if n % 2 == 0 {
        (q - INDEX_TOL).ceil() as i64 - (n / 2) as i64
    } else {
        (q - 0.5 - INDEX_TOL).ceil() as i64 - (n / 2) as i64
    };
    (start, n)
}

/// Flatten the frames centered on `t_c` spanning `span_ms`. Frames past the
/// utterance edges are filled with the log floor.
pub fn extract_window(mel: &MelSpectrogram, t_c: f64, span_ms: f64) -> Result<FeatureVector> {
    if !(20.0..=1000.0).contains(&span_ms) {
        return invalid(format!("window span {span_ms} ms outside [20, 1000]"));
    }
    if span_ms / 1000.0 < mel.frame_hop_s - INDEX_TOL {
        return invalid(format!(
            "window span {span_ms} ms shorter than one frame hop ({} ms)",
            mel.frame_hop_s * 1000.0
        ));
    }
    if !(t_c >= 0.0 && t_c <= mel.duration_s) {
        return invalid(format!(
            "tone center {t_c} s outside utterance [0, {}]",
            mel.duration_s
        ));
    }
    let (start, n) = window_frame_range(mel, t_c, span_ms);
    let floor = mel.floor_value();
    let mut values = Vec::with_capacity(n * mel.num_mels);
    for i in start..start + n as i64 {
        if i >= 0 && (i as usize) < mel.num_frames() {
            values.extend(mel.frames.row(i as usize).iter());
        } else {
            values.extend(std::iter::repeat(floor).take(mel.num_mels));
        }
    }
    Ok(FeatureVector {
        values,
        provenance: Provenance {
            utterance_id: String::new(),
            t_c,
            span_ms,
        },
    })
}
