//! Multinomial logistic regression probes and macro-F1 scoring.

mod io;
mod logreg;
mod metrics;

pub use io::{load_model, save_model, ModelHeader};
pub use logreg::{fit, fit_with_classes, objective, FitConfig, LogRegModel, Standardizer};
pub use metrics::{macro_f1, Score};
