//! On-disk model layout: a directory holding `model.json` plus one
//! float64 tensor file each for weights, bias, standardizer mean and std.
//! `raw_weights`/`raw_bias` fold the standardizer in, so consumers can
//! compute logits as `raw_weights · h + raw_bias` on unstandardized `h`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::logreg::{LogRegModel, Standardizer};
use crate::error::{Error, Result};
use crate::interchange::{read_tensor, write_atomic, write_tensor, DType, Tensor};

pub const HEADER_FILE: &str = "model.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub format: String,
    pub class_labels: Vec<String>,
    pub dim: usize,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    pub weights: String,
    pub bias: String,
    pub mean: String,
    pub std: String,
    pub raw_weights: String,
    pub raw_bias: String,
}

pub fn save_model(model: &LogRegModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let (k, d) = model.weights.dim();
    let header = ModelHeader {
        format: "logreg-v1".into(),
        class_labels: model.class_labels.clone(),
        dim: d,
        lambda: model.lambda,
        iterations: model.iterations,
        converged: model.converged,
        weights: "weights.tspn".into(),
        bias: "bias.tspn".into(),
        mean: "mean.tspn".into(),
        std: "std.tspn".into(),
        raw_weights: "raw_weights.tspn".into(),
        raw_bias: "raw_bias.tspn".into(),
    };
    let (rw, rb) = model.raw_weights();
    write_tensor(dir.join(&header.raw_weights), DType::Float64, &[k, d], &rw.iter().copied().collect::<Vec<_>>())?;
    write_tensor(dir.join(&header.raw_bias), DType::Float64, &[k], &rb.to_vec())?;
    let w: Vec<f64> = model.weights.iter().copied().collect();
    write_tensor(dir.join(&header.weights), DType::Float64, &[k, d], &w)?;
    write_tensor(dir.join(&header.bias), DType::Float64, &[k], model.bias.as_slice().unwrap_or(&model.bias.to_vec()))?;
    write_tensor(dir.join(&header.mean), DType::Float64, &[d], &model.standardizer.mean.to_vec())?;
    write_tensor(dir.join(&header.std), DType::Float64, &[d], &model.standardizer.std.to_vec())?;
    let json = serde_json::to_string_pretty(&header)?;
    write_atomic(&dir.join(HEADER_FILE), json.as_bytes())
}

fn expect_dims(t: &Tensor, dims: &[usize], what: &str) -> Result<()> {
    if t.dims != dims {
        return Err(Error::CorruptTensor(format!(
            "{what}: shape {:?}, expected {dims:?}",
            t.dims
        )));
    }
    Ok(())
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<LogRegModel> {
    let dir = dir.as_ref();
    let header: ModelHeader = serde_json::from_slice(&fs::read(dir.join(HEADER_FILE))?)?;
    let k = header.class_labels.len();
    let d = header.dim;
    let w = read_tensor(dir.join(&header.weights))?;
    expect_dims(&w, &[k, d], "weights")?;
    let b = read_tensor(dir.join(&header.bias))?;
    expect_dims(&b, &[k], "bias")?;
    let mean = read_tensor(dir.join(&header.mean))?;
    expect_dims(&mean, &[d], "mean")?;
    let std = read_tensor(dir.join(&header.std))?;
    expect_dims(&std, &[d], "std")?;
    if std.data.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::CorruptTensor("std entries must be positive".into()));
    }
    Ok(LogRegModel {
        weights: Array2::from_shape_vec((k, d), w.data).expect("checked shape"),
        bias: Array1::from(b.data),
        class_labels: header.class_labels,
        standardizer: Standardizer {
            mean: Array1::from(mean.data),
            std: Array1::from(std.data),
        },
        lambda: header.lambda,
        iterations: header.iterations,
        converged: header.converged,
    })
}
