//! Activation and gradient runs stored as tensor files plus a
//! [`RunManifest`], whether written by an external exporter or by
//! [`write_run`] from the toy encoder.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{invalid, Error, Result};
use crate::gradsens::{average_bins, energy_profile, profile_bins, SensitivityHistogram};
use crate::interchange::{read_tensor, resolve, write_tensor, DType, GradientRef, RunManifest, UtteranceFiles};
use crate::probes::{center_frame, ProbeSet};
use crate::synthcorpus::{read_manifest, ToneSegment, Utterance};
use crate::toyencoder::{backward_input_cached, forward_cached, EncoderParams, LayerActivations};

/// One utterance of a run: activations for the manifest's layers, in
/// manifest order, and its tone segments.
#[derive(Debug, Clone)]
pub struct RunUtterance {
    pub id: String,
    pub acts: LayerActivations,
    pub segments: Vec<ToneSegment>,
}

fn segments_by_id(manifest: &RunManifest, base: &Path) -> Result<BTreeMap<String, Vec<ToneSegment>>> {
    let rel = manifest
        .corpus_manifest
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("run manifest names no corpus_manifest".into()))?;
    let mut out = BTreeMap::new();
    for e in read_manifest(resolve(base, rel))? {
        let segs = e
            .segments
            .iter()
            .map(|s| ToneSegment::new(&s.label, s.start_s, s.end_s))
            .collect::<Result<Vec<_>>>()?;
        out.insert(e.id, segs);
    }
    Ok(out)
}

/// Activations of every utterance that has them, validated against the
/// manifest's layer list.
pub fn load_activation_run(path: impl AsRef<Path>) -> Result<(RunManifest, Vec<RunUtterance>)> {
    let (m, base) = RunManifest::load(path)?;
    m.validate(&base, None)?;
    let segs = segments_by_id(&m, &base)?;
    let mut out = Vec::new();
    for u in &m.utterances {
        if u.activations.is_empty() {
            continue;
        }
        let mut layers = Vec::with_capacity(m.layers.len());
        for l in &m.layers {
            let rel = u
                .activations
                .get(l)
                .ok_or_else(|| Error::InvalidArgument(format!("utterance {}: no activations for layer {l}", u.id)))?;
            let t = read_tensor(resolve(&base, rel))?;
            layers.push(Array2::from_shape_vec((t.dims[0], t.dims[1]), t.data).expect("rank checked"));
        }
        let segments = segs
            .get(&u.id)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("utterance {} missing from corpus manifest", u.id)))?;
        out.push(RunUtterance {
            id: u.id.clone(),
            acts: LayerActivations {
                layers,
                frame_hop_s: m.frame_hop_s,
            },
            segments,
        });
    }
    if out.is_empty() {
        return invalid("run manifest lists no activations");
    }
    Ok((m, out))
}

/// Histograms for every manifest layer from stored input gradients.
pub fn gradient_run_histograms(path: impl AsRef<Path>) -> Result<(RunManifest, Vec<SensitivityHistogram>)> {
    let (m, base) = RunManifest::load(path)?;
    m.validate(&base, None)?;
    let segs = segments_by_id(&m, &base)?;
    let mut parts: BTreeMap<usize, Vec<_>> = m.layers.iter().map(|&l| (l, Vec::new())).collect();
    for u in &m.utterances {
        let useg = segs
            .get(&u.id)
            .ok_or_else(|| Error::InvalidArgument(format!("utterance {} missing from corpus manifest", u.id)))?;
        for g in &u.gradients {
            let seg = useg
                .get(g.segment)
                .ok_or_else(|| Error::InvalidArgument(format!("utterance {}: segment {} out of range", u.id, g.segment)))?;
            let slot = parts
                .get_mut(&g.layer)
                .ok_or_else(|| Error::InvalidArgument(format!("gradient for layer {} not in layer list", g.layer)))?;
            let t = read_tensor(resolve(&base, &g.path))?;
            let prof = energy_profile(&t.data, m.sample_rate, seg.t_c, g.layer, &u.id)?;
            slot.extend(profile_bins(&prof));
        }
    }
    let hists = parts
        .iter()
        .map(|(&l, p)| average_bins(p, l))
        .collect::<Result<Vec<_>>>()?;
    Ok((m, hists))
}

/// What [`write_run`] stores per utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunContents {
    pub activations: bool,
    /// Requires probes.
    pub gradients: bool,
}

/// Write toy-encoder activations and/or probe-logit input gradients in the
/// exporter layout: `<dir>/acts/<id>.L<l>.tspn`, `<dir>/grads/<id>.S<s>.L<l>.tspn`
/// and `<dir>/run.json`. Returns the manifest path.
#[allow(clippy::too_many_arguments)]
pub fn write_run(
    dir: impl AsRef<Path>,
    p: &EncoderParams,
    probes: Option<&ProbeSet>,
    utts: &[Utterance],
    corpus_manifest: &Path,
    contents: RunContents,
    dtype: DType,
    model_tag: &str,
    config_hash: &str,
    seed: u64,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let n_layers = p.blocks.len() + 1;
    let raw: Vec<_> = match (contents.gradients, probes) {
        (false, _) => Vec::new(),
        (true, None) => return invalid("gradient export needs probes"),
        (true, Some(ps)) if ps.num_layers() != n_layers => {
            return Err(Error::DimensionMismatch {
                expected: n_layers,
                got: ps.num_layers(),
            })
        }
        (true, Some(ps)) => ps.probes.iter().map(|m| m.raw_weights().0).collect(),
    };
    fs::create_dir_all(dir.join("acts"))?;
    fs::create_dir_all(dir.join("grads"))?;
    let mut files = Vec::with_capacity(utts.len());
    for u in utts {
        let cache = forward_cached(p, &u.waveform.samples)?;
        let mut entry = UtteranceFiles {
            id: u.id.clone(),
            activations: BTreeMap::new(),
            gradients: Vec::new(),
        };
        if contents.activations {
            for (l, h) in cache.acts.layers.iter().enumerate() {
                let rel = PathBuf::from(format!("acts/{}.L{l}.tspn", u.id));
                let data: Vec<f64> = h.iter().copied().collect();
                write_tensor(dir.join(&rel), dtype, &[h.nrows(), h.ncols()], &data)?;
                entry.activations.insert(l, rel);
            }
        }
        if let Some(ps) = probes.filter(|_| contents.gradients) {
            let t = cache.acts.num_frames();
            for (si, s) in u.segments.iter().enumerate() {
                let y = ps
                    .class_labels()
                    .iter()
                    .position(|l| *l == s.label)
                    .ok_or_else(|| Error::InvalidArgument(format!("label {:?} unknown to probes", s.label)))?;
                let frame = center_frame(s.t_c, cache.acts.frame_hop_s, t);
                for (l, w) in raw.iter().enumerate() {
                    let g = backward_input_cached(p, &cache, l, frame, w.view(), y)?;
                    let rel = PathBuf::from(format!("grads/{}.S{si}.L{l}.tspn", u.id));
                    write_tensor(dir.join(&rel), dtype, &[g.g.len()], &g.g)?;
                    entry.gradients.push(GradientRef {
                        segment: si,
                        layer: l,
                        path: rel,
                    });
                }
            }
        }
        files.push(entry);
    }
    let manifest = RunManifest {
        model_tag: model_tag.to_string(),
        language_tag: utts.first().map(|u| u.language_tag.clone()).unwrap_or_default(),
        layers: (0..n_layers).collect(),
        frame_hop_s: p.config.frame_hop_s(),
        sample_rate: p.config.sample_rate,
        utterances: files,
        config_hash: config_hash.to_string(),
        seed,
        corpus_manifest: Some(std::path::absolute(corpus_manifest)?),
    };
    let path = dir.join("run.json");
    manifest.save(&path)?;
    Ok(path)
}
