//! Linear probes on the center-frame hidden state of every encoder layer.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linmodel::{fit, macro_f1, FitConfig, LogRegModel};
use crate::synthcorpus::ToneSegment;
use crate::toyencoder::LayerActivations;

/// Activations of one utterance paired with its tone segments.
#[derive(Debug, Clone, Copy)]
pub struct ProbeInput<'a> {
    pub acts: &'a LayerActivations,
    pub segments: &'a [ToneSegment],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCurve {
    /// `(layer, macro_f1)` for layers 0, 1, 2, …
    pub points: Vec<(usize, f64)>,
    pub model_tag: String,
    pub language_tag: String,
}

impl LayerCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,macro_f1\n");
        for (l, f1) in &self.points {
            s.push_str(&format!("{l},{f1:.6}\n"));
        }
        s
    }

    /// First layer attaining the maximum.
    pub fn argmax_layer(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for &(l, f) in &self.points {
            if best.is_none_or(|b| f > b.1) {
                best = Some((l, f));
            }
        }
        best.map(|b| b.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    /// Indexed by layer.
    pub probes: Vec<LogRegModel>,
}

impl ProbeSet {
    pub fn num_layers(&self) -> usize {
        self.probes.len()
    }

    pub fn class_labels(&self) -> &[String] {
        &self.probes[0].class_labels
    }
}

/// `round(t_c / hop)`, halves away from zero, clamped to `[0, num_frames)`.
pub fn center_frame(t_c: f64, hop_s: f64, num_frames: usize) -> usize {
    let r = (t_c / hop_s).round();
    if r <= 0.0 {
        0
    } else {
        (r as usize).min(num_frames.saturating_sub(1))
    }
}

pub fn center_features(acts: &LayerActivations, segs: &[ToneSegment], layer: usize) -> Result<(Array2<f64>, Vec<String>)> {
    if segs.is_empty() {
        return invalid("no tone segments");
    }
    let h = acts
        .layers
        .get(layer)
        .ok_or_else(|| Error::InvalidArgument(format!("layer {layer} out of range 0..{}", acts.layers.len())))?;
    let t = acts.num_frames();
    let mut x = Array2::zeros((segs.len(), h.ncols()));
    for (mut row, s) in x.rows_mut().into_iter().zip(segs) {
        row.assign(&h.row(center_frame(s.t_c, acts.frame_hop_s, t)));
    }
    Ok((x, segs.iter().map(|s| s.label.clone()).collect()))
}

fn stack(data: &[ProbeInput], layer: usize) -> Result<(Array2<f64>, Vec<String>)> {
    let parts = data
        .iter()
        .filter(|d| !d.segments.is_empty())
        .map(|d| center_features(d.acts, d.segments, layer))
        .collect::<Result<Vec<_>>>()?;
    if parts.is_empty() {
        return invalid("no tone segments");
    }
    let views: Vec<_> = parts.iter().map(|p| p.0.view()).collect();
    let x = ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((x, parts.into_iter().flat_map(|p| p.1).collect()))
}

fn layer_count(data: &[ProbeInput]) -> Result<usize> {
    let n = data.first().map(|d| d.acts.layers.len()).unwrap_or(0);
    if n == 0 {
        return invalid("no activations");
    }
    if data.iter().any(|d| d.acts.layers.len() != n) {
        return invalid("utterances disagree on layer count");
    }
    Ok(n)
}

pub fn train_probes(data: &[ProbeInput], cfg: &FitConfig) -> Result<ProbeSet> {
    let n = layer_count(data)?;
    let probes = (0..n)
        .into_par_iter()
        .map(|l| {
            let (x, y) = stack(data, l)?;
            fit(x.view(), &y, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeSet { probes })
}

pub fn evaluate_probes(ps: &ProbeSet, data: &[ProbeInput], model_tag: &str, language_tag: &str) -> Result<LayerCurve> {
    let n = layer_count(data)?;
    if n != ps.num_layers() {
        return Err(Error::DimensionMismatch {
            expected: ps.num_layers(),
            got: n,
        });
    }
    let points = (0..n)
        .map(|l| {
            let (x, gold) = stack(data, l)?;
            let pred = ps.probes[l].predict_all(x.view())?;
            Ok((l, macro_f1(&pred, &gold)?.macro_f1))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerCurve {
        points,
        model_tag: model_tag.to_string(),
        language_tag: language_tag.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn seg(label: &str, t_c: f64) -> ToneSegment {
        ToneSegment::new(label, t_c - 0.05, t_c + 0.05).unwrap()
    }

    fn acts(layers: Vec<Array2<f64>>) -> LayerActivations {
        LayerActivations {
            layers,
            frame_hop_s: 0.02,
        }
    }

    #[test]
    fn center_frame_rounding() {
        assert_eq!(center_frame(0.205, 0.02, 50), 10);
        assert_eq!(center_frame(0.210, 0.02, 50), 11);
        assert_eq!(center_frame(5.0, 0.02, 50), 49);
        assert_eq!(center_frame(0.0, 0.02, 50), 0);
    }

    #[test]
    fn features_ignore_segment_duration() {
        let h = Array2::from_shape_fn((30, 2), |(i, j)| (i * 2 + j) as f64);
        let a = acts(vec![h]);
        let short = ToneSegment::new("1", 0.19, 0.21).unwrap();
        let long = ToneSegment::new("1", 0.0, 0.4).unwrap();
        let (x1, _) = center_features(&a, &[short], 0).unwrap();
        let (x2, _) = center_features(&a, &[long], 0).unwrap();
        assert_eq!(x1, x2);
        assert_eq!(x1.row(0).to_vec(), vec![20.0, 21.0]);
        assert!(center_features(&a, &[], 0).is_err());
        assert!(center_features(&a, &[seg("1", 0.2)], 1).is_err());
    }

    /// Layer 1 carries the label in one coordinate; layer 0 is pure noise.
    fn injected(n_utts: usize, seed: u64) -> (Vec<LayerActivations>, Vec<Vec<ToneSegment>>) {
        let mut rng = SplitMix64::new(seed);
        let labels = ["1", "2", "3"];
        let mut all_acts = Vec::new();
        let mut all_segs = Vec::new();
        for _ in 0..n_utts {
            let l0 = Array2::from_shape_simple_fn((40, 4), || rng.gaussian());
            let mut l1 = Array2::from_shape_simple_fn((40, 4), || rng.gaussian());
            let mut segs = Vec::new();
            for k in 0..4 {
                let c = 5 + 9 * k;
                let y = rng.below(3) as usize;
                l1[[c, 0]] = 10.0 * y as f64 + 0.3 * rng.gaussian();
                segs.push(seg(labels[y], c as f64 * 0.02));
            }
            all_acts.push(acts(vec![l0, l1]));
            all_segs.push(segs);
        }
        (all_acts, all_segs)
    }

    fn inputs<'a>(a: &'a [LayerActivations], s: &'a [Vec<ToneSegment>]) -> Vec<ProbeInput<'a>> {
        a.iter().zip(s).map(|(acts, segments)| ProbeInput { acts, segments }).collect()
    }

    #[test]
    fn injected_features_are_found_at_their_layer() {
        let (a, s) = injected(60, 1);
        let (ta, ts) = injected(60, 2);
        let ps = train_probes(&inputs(&a, &s), &FitConfig::default()).unwrap();
        let curve = evaluate_probes(&ps, &inputs(&ta, &ts), "toy", "syn").unwrap();
        assert!(curve.points[1].1 >= 0.95, "{curve:?}");
        assert!((curve.points[0].1 - 1.0 / 3.0).abs() < 0.15, "{curve:?}");
        assert_eq!(curve.argmax_layer(), Some(1));
        let again = evaluate_probes(&ps, &inputs(&ta, &ts), "toy", "syn").unwrap();
        assert_eq!(curve, again);
    }

    #[test]
    fn identical_layers_give_identical_probes() {
        let (a, s) = injected(20, 3);
        let dup: Vec<_> = a.iter().map(|x| acts(vec![x.layers[1].clone(), x.layers[1].clone()])).collect();
        let ps = train_probes(&inputs(&dup, &s), &FitConfig::default()).unwrap();
        assert_eq!(ps.probes[0], ps.probes[1]);
        let curve = evaluate_probes(&ps, &inputs(&dup, &s), "toy", "syn").unwrap();
        assert!(curve.points.iter().all(|p| p.1 == 1.0));
    }

    #[test]
    fn single_class_is_rejected() {
        let a = vec![acts(vec![Array2::zeros((20, 2))])];
        let s = vec![vec![seg("1", 0.1), seg("1", 0.2)]];
        assert!(train_probes(&inputs(&a, &s), &FitConfig::default()).is_err());
    }

    #[test]
    fn layer_mismatch_is_rejected() {
        let (a, s) = injected(10, 4);
        let ps = train_probes(&inputs(&a, &s), &FitConfig::default()).unwrap();
        let one: Vec<_> = a.iter().map(|x| acts(vec![x.layers[0].clone()])).collect();
        assert!(evaluate_probes(&ps, &inputs(&one, &s), "toy", "syn").is_err());
    }

    #[test]
    fn curve_csv() {
        let c = LayerCurve {
            points: vec![(0, 0.5), (1, 0.75)],
            model_tag: "m".into(),
            language_tag: "tha".into(),
        };
        assert_eq!(c.to_csv(), "layer,macro_f1\n0,0.500000\n1,0.750000\n");
    }
}
