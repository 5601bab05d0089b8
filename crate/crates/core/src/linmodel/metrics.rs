use std::collections::{BTreeMap, BTreeSet};

use crate::error::{invalid, Result};

/// Macro-F1 over the classes present in the reference labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub macro_f1: f64,
    pub per_class_f1: BTreeMap<String, f64>,
}

/// Per-class `F1 = 2PR/(P+R)` (0 when `P+R = 0`), averaged without weights
/// over the classes that occur in `gold`. Classes only predicted, never
/// present in `gold`, are ignored.
pub fn macro_f1<S: AsRef<str>>(pred: &[S], gold: &[S]) -> Result<Score> {
    if pred.is_empty() || gold.is_empty() {
        return invalid("macro_f1 needs at least one prediction");
    }
    if pred.len() != gold.len() {
        return invalid(format!(
            "prediction/reference length mismatch: {} vs {}",
            pred.len(),
            gold.len()
        ));
    }
    let classes: BTreeSet<&str> = gold.iter().map(AsRef::as_ref).collect();
    let mut per_class_f1 = BTreeMap::new();
    for &c in &classes {
        let mut tp = 0usize;
        let mut n_pred = 0usize;
        let mut n_gold = 0usize;
        for (p, g) in pred.iter().zip(gold) {
            let (p, g) = (p.as_ref() == c, g.as_ref() == c);
            tp += (p && g) as usize;
            n_pred += p as usize;
            n_gold += g as usize;
        }
        let precision = if n_pred > 0 { tp as f64 / n_pred as f64 } else { 0.0 };
        let recall = tp as f64 / n_gold as f64;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class_f1.insert(c.to_string(), f1);
    }
    let macro_f1 = per_class_f1.values().sum::<f64>() / per_class_f1.len() as f64;
    Ok(Score {
        macro_f1,
        per_class_f1,
    })
}
