//! JSON-lines corpus manifests: one utterance per line,
//! `{id, wav_path, language_tag, segments: [{label, start_s, end_s}]}`.
//! `wav_path` is relative to the manifest's directory unless absolute.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Corpus, ToneSegment, Utterance};
use crate::error::{Error, Result};
use crate::interchange::{resolve, write_atomic};
use crate::signal::Waveform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSegment {
    pub label: String,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub wav_path: PathBuf,
    pub language_tag: String,
    pub segments: Vec<ManifestSegment>,
}

/// Write `<dir>/<id>.wav` for every utterance plus `<dir>/manifest.jsonl`.
/// Returns the manifest path.
pub fn write_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut lines = String::new();
    for u in &corpus.utterances {
        let wav = PathBuf::from(format!("{}.wav", u.id));
        u.waveform.write_wav(dir.join(&wav))?;
        let entry = ManifestEntry {
            id: u.id.clone(),
            wav_path: wav,
            language_tag: u.language_tag.clone(),
            segments: u
                .segments
                .iter()
                .map(|s| ManifestSegment {
                    label: s.label.clone(),
                    start_s: s.start_s,
                    end_s: s.end_s,
                })
                .collect(),
        };
        lines.push_str(&serde_json::to_string(&entry)?);
        lines.push('\n');
    }
    let path = dir.join("manifest.jsonl");
    write_atomic(&path, lines.as_bytes())?;
    Ok(path)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path.as_ref())?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                Error::InvalidArgument(format!("{} line {}: {e}", path.as_ref().display(), i + 1))
            })
        })
        .collect()
}

/// Read a manifest and every WAV it references.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let path = path.as_ref();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    read_manifest(path)?
        .into_iter()
        .map(|e| {
            let waveform = Waveform::read_wav(resolve(&base, &e.wav_path))?;
            let segments = e
                .segments
                .iter()
                .map(|s| ToneSegment::new(&s.label, s.start_s, s.end_s))
                .collect::<Result<Vec<_>>>()?;
            let u = Utterance {
                id: e.id,
                waveform,
                segments,
                language_tag: e.language_tag,
            };
            u.validate()?;
            Ok(u)
        })
        .collect()
}
