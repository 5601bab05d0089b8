use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{backward, forward, forward_cached, frame_count};
use super::params::{random_params, EncoderConfig, EncoderParams};
use crate::error::{invalid, Error, Result};
use crate::rng::SplitMix64;
use crate::synthcorpus::Utterance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak Adam step size, reached after `warmup_steps`, then cosine decay
    /// to `lr * final_lr_frac`.
    pub lr: f64,
    pub warmup_steps: usize,
    pub final_lr_frac: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Step-size multiplier for the relative-position biases, which need
    /// to move by several units to localize attention.
    pub rel_bias_lr_mult: f64,
    /// Decoupled weight decay on weight matrices (not biases, gains or
    /// position biases).
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            lr: 3e-3,
            warmup_steps: 20,
            final_lr_frac: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            rel_bias_lr_mult: 20.0,
            weight_decay: 0.1,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn lr_at(&self, step: usize, total: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = total.saturating_sub(self.warmup_steps).max(1);
        let u = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        let floor = self.lr * self.final_lr_frac;
        floor + (self.lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * u).cos())
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: EncoderParams,
    /// Mean frame cross-entropy of every optimizer step.
    pub loss_trace: Vec<f64>,
}

/// Head class per frame: the segment containing the frame's center, or 0.
pub fn frame_labels(p: &EncoderParams, u: &Utterance) -> Result<Vec<usize>> {
    let cfg = &p.config;
    let fs = cfg.sample_rate as f64;
    let t = frame_count(u.waveform.len(), cfg.kernel, cfg.stride);
    (0..t)
        .map(|i| {
            let c = (i * cfg.stride) as f64 / fs + cfg.frame_kernel_s() / 2.0;
            match u.segments.iter().find(|s| s.start_s <= c && c < s.end_s) {
                None => Ok(0),
                Some(s) => p
                    .labels
                    .iter()
                    .position(|l| *l == s.label)
                    .ok_or_else(|| Error::InvalidArgument(format!("label {:?} unknown to encoder", s.label))),
            }
        })
        .collect()
}

/// Summed frame cross-entropy, frame count and gradients for one utterance.
fn utterance_grad(p: &EncoderParams, u: &Utterance) -> Result<(f64, usize, EncoderParams)> {
    let labels = frame_labels(p, u)?;
    let cache = forward_cached(p, &u.waveform.samples)?;
    let top = cache.acts.layers.last().unwrap();
    let logits = top.dot(&p.head_w) + &p.head_b;
    let mut dlogits = Array2::zeros(logits.dim());
    let mut loss = 0.0;
    for ((row, mut drow), &y) in logits.rows().into_iter().zip(dlogits.rows_mut()).zip(&labels) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
        loss += sum.ln() + m - row[y];
        for (d, v) in drow.iter_mut().zip(row.iter()) {
            *d = (v - m).exp() / sum;
        }
        drow[y] -= 1.0;
    }
    let dtop = dlogits.dot(&p.head_w.t());
    let mut seeds = vec![None; p.blocks.len() + 1];
    *seeds.last_mut().unwrap() = Some(dtop);
    let (grads, _) = backward(p, &cache, &seeds, true)?;
    let mut grads = grads.expect("requested");
    grads.head_w += &top.t().dot(&dlogits);
    grads.head_b += &dlogits.sum_axis(Axis(0));
    Ok((loss, labels.len(), grads))
}

fn is_matrix(name: &str) -> bool {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    matches!(leaf, "conv_w" | "wq" | "wk" | "wv" | "wo" | "w1" | "w2" | "head_w")
}

struct Adam {
    m: EncoderParams,
    v: EncoderParams,
    t: i32,
}

impl Adam {
    fn step(&mut self, p: &mut EncoderParams, g: &EncoderParams, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let params = p.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for ((((name, w), (_, m)), (_, v)), (_, gr)) in params.into_iter().zip(ms).zip(vs).zip(g.tensors()) {
            let lr = if name.ends_with("rel_bias") { lr * cfg.rel_bias_lr_mult } else { lr };
            let decay = if is_matrix(&name) { 1.0 - lr * cfg.weight_decay } else { 1.0 };
            for i in 0..w.len() {
                w[i] *= decay;
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gr[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gr[i] * gr[i];
                w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.adam_eps);
            }
        }
    }
}

/// Frame-wise tone classification with an auxiliary linear head on the last
/// layer. Initialization is `random_params(enc, labels, cfg.seed)`.
pub fn train_encoder(
    train: &[Utterance],
    tone_labels: &[String],
    enc: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if train.is_empty() {
        return invalid("training corpus is empty");
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return invalid("batch_size and epochs must be positive");
    }
    let mut p = random_params(enc, tone_labels, cfg.seed)?;
    let mut adam = Adam {
        m: p.zeros_like(),
        v: p.zeros_like(),
        t: 0,
    };
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut trace = Vec::with_capacity(total);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = SplitMix64::stream(cfg.seed, 1 + epoch as u64);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.below(i as u64 + 1) as usize);
        }
        for batch in order.chunks(cfg.batch_size) {
            let parts = batch
                .par_iter()
                .map(|&i| utterance_grad(&p, &train[i]))
                .collect::<Result<Vec<_>>>()?;
            let frames: usize = parts.iter().map(|x| x.1).sum();
            let loss: f64 = parts.iter().map(|x| x.0).sum::<f64>() / frames as f64;
            trace.push(loss);
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    step: trace.len() - 1,
                    trace,
                });
            }
            let mut iter = parts.into_iter();
            let mut grad = iter.next().expect("non-empty batch").2;
            for (_, _, g) in iter {
                for ((_, a), (_, b)) in grad.tensors_mut().into_iter().zip(g.tensors()) {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                }
            }
            let inv = 1.0 / frames as f64;
            let mut norm_sq = 0.0;
            for (_, s) in grad.tensors_mut() {
                s.iter_mut().for_each(|v| {
                    *v *= inv;
                    norm_sq += *v * *v;
                });
            }
            let norm = norm_sq.sqrt();
            if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
                let k = cfg.grad_clip / norm;
                for (_, s) in grad.tensors_mut() {
                    s.iter_mut().for_each(|v| *v *= k);
                }
            }
            let lr = cfg.lr_at(trace.len() - 1, total);
            adam.step(&mut p, &grad, lr, cfg);
        }
    }
    if !p.is_finite() {
        return Err(Error::Divergence {
            step: trace.len(),
            trace,
        });
    }
    Ok(TrainReport { params: p, loss_trace: trace })
}

/// Fraction of frames whose head argmax equals the frame label.
pub fn frame_accuracy(p: &EncoderParams, utts: &[Utterance]) -> Result<f64> {
    let counts = utts
        .par_iter()
        .map(|u| {
            let labels = frame_labels(p, u)?;
            let acts = forward(p, &u.waveform.samples)?;
            let logits = acts.layers.last().unwrap().dot(&p.head_w) + &p.head_b;
            let hits = logits
                .rows()
                .into_iter()
                .zip(&labels)
                .filter(|(row, &y)| {
                    let best = row
                        .iter()
                        .enumerate()
                        .fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
                    best == y
                })
                .count();
            Ok((hits, labels.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (h, n) = counts.iter().fold((0, 0), |a, c| (a.0 + c.0, a.1 + c.1));
    if n == 0 {
        return invalid("no frames to score");
    }
    Ok(h as f64 / n as f64)
}
