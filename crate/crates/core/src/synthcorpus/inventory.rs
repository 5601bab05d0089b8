use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// One lexical tone: a pitch shape over its cue window.
///
/// `contour` holds normalized pitch targets (carrier = 0, ±1 = full pitch
/// range) at evenly spaced knots spanning the cue window, first knot at the
/// window start, last at its end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToneTemplate {
    pub label: String,
    pub contour: Vec<f64>,
    pub cue_span_ms: f64,
}

impl ToneTemplate {
    pub fn new(label: &str, contour: &[f64], cue_span_ms: f64) -> Self {
        Self {
            label: label.to_string(),
            contour: contour.to_vec(),
            cue_span_ms,
        }
    }

    /// Normalized pitch at relative position `u ∈ [0, 1]` of the cue window.
    pub fn shape_at(&self, u: f64) -> f64 {
        let n = self.contour.len();
        if n == 1 {
            return self.contour[0];
        }
        let x = u.clamp(0.0, 1.0) * (n - 1) as f64;
        let i = (x.floor() as usize).min(n - 2);
        let frac = x - i as f64;
        self.contour[i] * (1.0 - frac) + self.contour[i + 1] * frac
    }

    pub fn is_level(&self) -> bool {
        self.contour.windows(2).all(|w| w[0] == w[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToneInventory {
    pub language_tag: String,
    pub tones: Vec<ToneTemplate>,
}

pub const BUILTIN_LANGUAGES: [&str; 4] = ["bur", "tha", "lao", "vie"];

// Shapes are anchored to the carrier at the cue center, so the center
// instant alone never identifies a tone; each pair of shapes differs on at
// least one half of the cue window.
const LEVEL: [f64; 5] = [0.0, 0.0, 0.0, 0.0, 0.0];
const RISE: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];
const FALL: [f64; 5] = [1.0, 0.5, 0.0, -0.5, -1.0];
const DIP: [f64; 5] = [1.0, 0.5, 0.0, 0.5, 1.0];
const PEAK: [f64; 5] = [-1.0, -0.5, 0.0, -0.5, -1.0];
const LATE_RISE: [f64; 5] = [0.0, 0.0, 0.0, 0.5, 1.0];
const LATE_FALL: [f64; 5] = [0.0, 0.0, 0.0, -0.5, -1.0];

impl ToneInventory {
    /// Built-in inventories: "bur" (4 tones) and "tha" (5) with 100 ms cues,
    /// "lao" (6) and "vie" (6) with 180 ms cues.
    pub fn builtin(tag: &str) -> Result<Self> {
        let (cue, shapes): (f64, Vec<(&str, &[f64])>) = match tag {
            "bur" => (
                100.0,
                vec![("T1", &RISE), ("T2", &FALL), ("T3", &DIP), ("T4", &PEAK)],
            ),
            "tha" => (
                100.0,
                vec![
                    ("T1", &LEVEL),
                    ("T2", &RISE),
                    ("T3", &FALL),
                    ("T4", &DIP),
                    ("T5", &PEAK),
                ],
            ),
            "lao" => (
                180.0,
                vec![
                    ("T1", &LEVEL),
                    ("T2", &LATE_FALL),
                    ("T3", &RISE),
                    ("T4", &DIP),
                    ("T5", &LATE_RISE),
                    ("T6", &FALL),
                ],
            ),
            "vie" => (
                180.0,
                vec![
                    ("ngang", &LEVEL),
                    ("huyền", &LATE_FALL),
                    ("sắc", &RISE),
                    ("hỏi", &DIP),
                    ("ngã", &LATE_RISE),
                    ("nặng", &FALL),
                ],
            ),
            _ => {
                return Err(Error::UnknownLanguage {
                    tag: tag.to_string(),
                    builtins: format!("{{{}}}", BUILTIN_LANGUAGES.join(", ")),
                })
            }
        };
        let inv = Self {
            language_tag: tag.to_string(),
            tones: shapes
                .into_iter()
                .map(|(l, s)| ToneTemplate::new(l, s, cue))
                .collect(),
        };
        inv.validate()?;
        Ok(inv)
    }

    /// Same shapes with every cue span replaced.
    pub fn with_cue_span(mut self, cue_span_ms: f64) -> Result<Self> {
        for t in &mut self.tones {
            t.cue_span_ms = cue_span_ms;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tones.len() < 2 {
            return invalid(format!(
                "inventory {:?} needs at least 2 tones, has {}",
                self.language_tag,
                self.tones.len()
            ));
        }
        let mut labels: Vec<&str> = self.tones.iter().map(|t| t.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return invalid(format!("inventory {:?} has duplicate labels", self.language_tag));
        }
        for t in &self.tones {
            if !(40.0..=400.0).contains(&t.cue_span_ms) {
                return invalid(format!(
                    "tone {:?}: cue span {} ms outside [40, 400]",
                    t.label, t.cue_span_ms
                ));
            }
            if t.contour.is_empty() || t.contour.iter().any(|v| !v.is_finite()) {
                return invalid(format!("tone {:?}: contour must be finite and non-empty", t.label));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<String> {
        self.tones.iter().map(|t| t.label.clone()).collect()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.tones.iter().position(|t| t.label == label)
    }

    pub fn max_cue_span_ms(&self) -> f64 {
        self.tones.iter().map(|t| t.cue_span_ms).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_have_documented_sizes_and_spans() {
        let expect = [("bur", 4, 100.0), ("tha", 5, 100.0), ("lao", 6, 180.0), ("vie", 6, 180.0)];
        for (tag, n, cue) in expect {
            let inv = ToneInventory::builtin(tag).unwrap();
            assert_eq!(inv.tones.len(), n);
            assert!(inv.tones.iter().all(|t| t.cue_span_ms == cue));
            // Every shape passes through the carrier at the cue center.
            assert!(inv.tones.iter().all(|t| t.shape_at(0.5) == 0.0));
        }
        let vie = ToneInventory::builtin("vie").unwrap().labels();
        assert_eq!(vie, ["ngang", "huyền", "sắc", "hỏi", "ngã", "nặng"]);
    }

    #[test]
    fn unknown_language_lists_builtins() {
        let err = ToneInventory::builtin("xx").unwrap_err().to_string();
        assert!(err.contains("bur, tha, lao, vie"), "{err}");
    }

    #[test]
    fn validation() {
        let mut inv = ToneInventory::builtin("tha").unwrap();
        inv.tones.truncate(1);
        assert!(inv.validate().is_err());
        let mut inv = ToneInventory::builtin("tha").unwrap();
        inv.tones[1].label = inv.tones[0].label.clone();
        assert!(inv.validate().is_err());
        assert!(ToneInventory::builtin("tha").unwrap().with_cue_span(30.0).is_err());
        assert!(ToneInventory::builtin("tha").unwrap().with_cue_span(400.0).is_ok());
    }

    #[test]
    fn shape_interpolates_between_knots() {
        let t = ToneTemplate::new("r", &RISE, 100.0);
        assert_eq!(t.shape_at(0.0), -1.0);
        assert_eq!(t.shape_at(1.0), 1.0);
        assert!((t.shape_at(0.125) + 0.75).abs() < 1e-15);
        assert!(ToneTemplate::new("l", &LEVEL, 100.0).is_level());
    }
}
