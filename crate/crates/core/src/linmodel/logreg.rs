use std::cmp::Ordering;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// L2 strength on the weights (bias is not penalized).
    pub lambda: f64,
    pub max_iter: usize,
    /// Stop once the gradient max-norm falls below this.
    pub grad_tol: f64,
    /// Fit a per-dimension standardizer on the training features.
    pub standardize: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            max_iter: 2000,
            grad_tol: 1e-6,
            standardize: true,
        }
    }
}

/// Per-dimension affine map `(x - mean) / std`. Zero-variance dimensions
/// keep `std = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: Array1::zeros(dim),
            std: Array1::ones(dim),
        }
    }

    pub fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows() as f64;
        let mean = x.sum_axis(Axis(0)) / n;
        let std = x
            .axis_iter(Axis(1))
            .zip(mean.iter())
            .map(|(col, &m)| {
                let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.mean) / &self.std
    }

    pub fn apply_row(&self, x: ArrayView1<f64>) -> Array1<f64> {
        (&x - &self.mean) / &self.std
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    /// `[num_classes × dim]`, acting on standardized features.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub class_labels: Vec<String>,
    pub standardizer: Standardizer,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LogRegModel {
    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn logits(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.weights.dot(&self.standardizer.apply_row(x)) + &self.bias)
    }

    /// Class index with the largest logit; ties go to the lowest index.
    pub fn predict_index(&self, x: ArrayView1<f64>) -> Result<usize> {
        Ok(argmax_first(self.logits(x)?.view()))
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> Result<&str> {
        Ok(&self.class_labels[self.predict_index(x)?])
    }

    pub fn predict_all(&self, x: ArrayView2<f64>) -> Result<Vec<String>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.ncols(),
            });
        }
        let z = self.standardizer.apply(x).dot(&self.weights.t()) + &self.bias;
        Ok(z.rows()
            .into_iter()
            .map(|r| self.class_labels[argmax_first(r)].clone())
            .collect())
    }

    /// Weights and bias acting on raw (unstandardized) features, so that
    /// `logits(x) = W_raw · x + b_raw`.
    pub fn raw_weights(&self) -> (Array2<f64>, Array1<f64>) {
        let w = &self.weights / &self.standardizer.std;
        let b = &self.bias - &w.dot(&self.standardizer.mean);
        (w, b)
    }
}

fn argmax_first(z: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}

/// Training objective over flattened parameters `θ = [W (row-major), b]`:
/// mean softmax cross-entropy plus `(λ/2)‖W‖²`. Returns value and gradient.
pub fn objective(theta: &[f64], x: ArrayView2<f64>, y: &[usize], k: usize, lambda: f64) -> (f64, Vec<f64>) {
    let d = x.ncols();
    let w = ArrayView2::from_shape((k, d), &theta[..k * d]).expect("theta layout");
    let b = ArrayView1::from(&theta[k * d..k * d + k]);
    let z = x.dot(&w.t()) + &b;
    let (loss, resid) = softmax_loss(&z, y);
    let mut value = loss + 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
    let n = x.nrows() as f64;
    let gw = resid.t().dot(&x) / n + &(&w * lambda);
    let gb = resid.sum_axis(Axis(0)) / n;
    if !value.is_finite() {
        value = f64::INFINITY;
    }
    (value, gw.iter().chain(gb.iter()).copied().collect())
}

/// Mean cross-entropy of logits `z` and the residual `softmax(z) − onehot(y)`.
fn softmax_loss(z: &Array2<f64>, y: &[usize]) -> (f64, Array2<f64>) {
    let mut resid = z.clone();
    let mut total = 0.0;
    for (i, (mut row, &yi)) in resid.rows_mut().into_iter().zip(y).enumerate() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let sum = row.sum();
        total += sum.ln() + m - z[[i, yi]];
        row /= sum;
        row[yi] -= 1.0;
    }
    (total / z.nrows() as f64, resid)
}

/// Fit on the labels present in `y` (sorted lexicographically).
pub fn fit<S: AsRef<str>>(x: ArrayView2<f64>, y: &[S], cfg: &FitConfig) -> Result<LogRegModel> {
    let mut classes: Vec<String> = y.iter().map(|s| s.as_ref().to_string()).collect();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::DegenerateTrainingSet(format!(
            "need at least 2 classes, found {}",
            classes.len()
        )));
    }
    fit_with_classes(x, y, &classes, cfg)
}

/// Fit with an explicit class list; every class must have a training example.
pub fn fit_with_classes<S: AsRef<str>>(
    x: ArrayView2<f64>,
    y: &[S],
    classes: &[String],
    cfg: &FitConfig,
) -> Result<LogRegModel> {
    let (n, d) = x.dim();
    let k = classes.len();
    if n != y.len() {
        return invalid(format!("{n} feature rows but {} labels", y.len()));
    }
    if d == 0 {
        return invalid("feature dimension must be positive");
    }
    if !(cfg.lambda >= 0.0) {
        return invalid("lambda must be non-negative");
    }
    if k < 2 {
        return Err(Error::DegenerateTrainingSet("need at least 2 classes".into()));
    }
    if n < k {
        return Err(Error::DegenerateTrainingSet(format!("{n} examples for {k} classes")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training features"));
    }
    let y_idx: Vec<usize> = y
        .iter()
        .map(|l| {
            classes.iter().position(|c| c == l.as_ref()).ok_or_else(|| {
                Error::InvalidArgument(format!("label {:?} not in class list", l.as_ref()))
            })
        })
        .collect::<Result<_>>()?;
    let mut counts = vec![0usize; k];
    y_idx.iter().for_each(|&i| counts[i] += 1);
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::DegenerateTrainingSet(format!(
            "class {:?} has no training examples",
            classes[empty]
        )));
    }

    // Canonical row order makes the fit independent of input order, bit for bit.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        y_idx[a].cmp(&y_idx[b]).then_with(|| {
            x.row(a)
                .iter()
                .zip(x.row(b).iter())
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
    });
    let x_sorted = x.select(Axis(0), &order);
    let y_sorted: Vec<usize> = order.iter().map(|&i| y_idx[i]).collect();

    let standardizer = if cfg.standardize {
        Standardizer::fit(x_sorted.view())
    } else {
        Standardizer::identity(d)
    };
    let xs = standardizer.apply(x_sorted.view());

    let (theta, iterations, converged) = gradient_descent(xs.view(), &y_sorted, k, cfg);
    let weights = Array2::from_shape_vec((k, d), theta[..k * d].to_vec()).expect("shape");
    let bias = Array1::from(theta[k * d..].to_vec());
    Ok(LogRegModel {
        weights,
        bias,
        class_labels: classes.to_vec(),
        standardizer,
        lambda: cfg.lambda,
        iterations,
        converged,
    })
}

/// Full-batch gradient descent from zero with Armijo backtracking. Trial
/// steps reuse `X·Gᵀ` since logits are linear in the parameters.
fn gradient_descent(x: ArrayView2<f64>, y: &[usize], k: usize, cfg: &FitConfig) -> (Vec<f64>, usize, bool) {
    const ARMIJO: f64 = 1e-4;
    const SHRINK: f64 = 0.5;
    let (n, d) = x.dim();
    let nf = n as f64;
    let mut w = Array2::<f64>::zeros((k, d));
    let mut b = Array1::<f64>::zeros(k);
    let mut z = Array2::<f64>::zeros((n, k));
    let mut step = 1.0;

    let value_of = |z: &Array2<f64>, w: &Array2<f64>| -> (f64, Array2<f64>) {
        let (loss, resid) = softmax_loss(z, y);
        (loss + 0.5 * cfg.lambda * w.iter().map(|v| v * v).sum::<f64>(), resid)
    };
    let (mut f, mut resid) = value_of(&z, &w);

    for iter in 0..cfg.max_iter {
        let gw = rows_t_dot(x, &resid) / nf + &(&w * cfg.lambda);
        let gb = resid.sum_axis(Axis(0)) / nf;
        let gmax = gw.iter().chain(gb.iter()).fold(0.0f64, |a, v| a.max(v.abs()));
        if gmax < cfg.grad_tol {
            return (flatten(&w, &b), iter, true);
        }
        let g_sq = gw.iter().chain(gb.iter()).map(|v| v * v).sum::<f64>();
        let zg = rows_dot(x, &gw) + &gb;
        let mut accepted = None;
        for _ in 0..60 {
            let w_try = &w - &(&gw * step);
            let z_try = &z - &(&zg * step);
            let (f_try, resid_try) = value_of(&z_try, &w_try);
            if f_try <= f - ARMIJO * step * g_sq {
                accepted = Some((w_try, z_try, f_try, resid_try));
                break;
            }
            step *= SHRINK;
        }
        let Some((w_new, z_new, f_new, resid_new)) = accepted else {
            // No decrease representable at this precision.
            return (flatten(&w, &b), iter, false);
        };
        b = &b - &(&gb * step);
        w = w_new;
        z = z_new;
        f = f_new;
        resid = resid_new;
        step *= 2.0;
    }
    (flatten(&w, &b), cfg.max_iter, false)
}

// The two products below take most of the fit time. With few classes,
// streaming over rows of X beats a general matmul, which would pack X on
// every call.

/// `Xᵀ R` as `[k × d]` for `X` `[n × d]` and `R` `[n × k]`.
fn rows_t_dot(x: ArrayView2<f64>, r: &Array2<f64>) -> Array2<f64> {
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let (n, d, k) = (x.nrows(), x.ncols(), r.ncols());
    let mut out = Array2::<f64>::zeros((k, d));
    let acc = out.as_slice_mut().expect("fresh array");
    let row = |i: usize| &xs[i * d..(i + 1) * d];
    // Four rows per sweep over the accumulator keeps it from thrashing L1.
    let mut i = 0;
    while i + 4 <= n {
        let (x0, x1, x2, x3) = (row(i), row(i + 1), row(i + 2), row(i + 3));
        for c in 0..k {
            let (r0, r1, r2, r3) = (r[[i, c]], r[[i + 1, c]], r[[i + 2, c]], r[[i + 3, c]]);
            let a = &mut acc[c * d..(c + 1) * d];
            for j in 0..d {
                a[j] += (r0 * x0[j] + r1 * x1[j]) + (r2 * x2[j] + r3 * x3[j]);
            }
        }
        i += 4;
    }
    for i in i..n {
        let xi = row(i);
        for c in 0..k {
            let rc = r[[i, c]];
            for (a, v) in acc[c * d..(c + 1) * d].iter_mut().zip(xi) {
                *a += rc * v;
            }
        }
    }
    out
}

/// `X Gᵀ` as `[n × k]` for `X` `[n × d]` and `G` `[k × d]`.
fn rows_dot(x: ArrayView2<f64>, g: &Array2<f64>) -> Array2<f64> {
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let g = g.as_standard_layout();
    let gs = g.as_slice().expect("standard layout");
    let (n, d, k) = (x.nrows(), x.ncols(), g.nrows());
    let mut out = Array2::<f64>::zeros((n, k));
    let row = |i: usize| &xs[i * d..(i + 1) * d];
    let mut i = 0;
    while i + 2 <= n {
        for c in 0..k {
            let (u, v) = dot4x2(row(i), row(i + 1), &gs[c * d..(c + 1) * d]);
            out[[i, c]] = u;
            out[[i + 1, c]] = v;
        }
        i += 2;
    }
    if i < n {
        for c in 0..k {
            out[[i, c]] = dot4x2(row(i), row(i), &gs[c * d..(c + 1) * d]).0;
        }
    }
    out
}

/// Dot products of `a` and `b` with `g`, four lanes each.
fn dot4x2(a: &[f64], b: &[f64], g: &[f64]) -> (f64, f64) {
    let mut s = [0.0f64; 4];
    let mut t = [0.0f64; 4];
    let (ca, cb, cg) = (a.chunks_exact(4), b.chunks_exact(4), g.chunks_exact(4));
    let (ra, rb, rg) = (ca.remainder(), cb.remainder(), cg.remainder());
    for ((p, q), w) in ca.zip(cb).zip(cg) {
        for l in 0..4 {
            s[l] += p[l] * w[l];
            t[l] += q[l] * w[l];
        }
    }
    let tail = |r: &[f64]| r.iter().zip(rg).map(|(p, w)| p * w).sum::<f64>();
    ((s[0] + s[1]) + (s[2] + s[3]) + tail(ra), (t[0] + t[1]) + (t[2] + t[3]) + tail(rb))
}

fn flatten(w: &Array2<f64>, b: &Array1<f64>) -> Vec<f64> {
    w.iter().chain(b.iter()).copied().collect()
}
