use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::params::{BlockParams, EncoderParams};
use crate::error::{invalid, Error, Result};

/// Hidden states for layers `0..=num_layers`, each `[frames × d_model]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivations {
    pub layers: Vec<Array2<f64>>,
    pub frame_hop_s: f64,
}

impl LayerActivations {
    pub fn num_frames(&self) -> usize {
        self.layers[0].nrows()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len() - 1
    }
}

/// `∂z/∂x` for one probe logit, over every input sample.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGradient {
    pub g: Vec<f64>,
    pub layer: usize,
    pub class: usize,
    pub frame: usize,
}

pub fn frame_count(num_samples: usize, kernel: usize, stride: usize) -> usize {
    if num_samples < kernel {
        0
    } else {
        (num_samples - kernel) / stride + 1
    }
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>, eps: f64) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mu = row.sum() / d;
        row.mapv_inplace(|v| v - mu);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + eps).sqrt();
        row *= *r;
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, inv_std })
}

/// Returns `dx` and accumulates `dgamma`, `dbeta` when given.
fn layer_norm_back(
    dy: &Array2<f64>,
    c: &LnCache,
    g: &Array1<f64>,
    grads: Option<(&mut Array1<f64>, &mut Array1<f64>)>,
) -> Array2<f64> {
    if let Some((dg, db)) = grads {
        *dg += &(dy * &c.xhat).sum_axis(Axis(0));
        *db += &dy.sum_axis(Axis(0));
    }
    let d = dy.ncols() as f64;
    let mut dx = dy * g;
    for ((mut row, xh), &r) in dx.rows_mut().into_iter().zip(c.xhat.rows()).zip(c.inv_std.iter()) {
        let mean = row.sum() / d;
        let mean_x = row.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        row.zip_mut_with(&xh, |v, &x| *v = r * (*v - mean - x * mean_x));
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + (GELU_C * (z + GELU_A * z * z * z)).tanh())
}

fn gelu_grad(z: f64) -> f64 {
    let t = (GELU_C * (z + GELU_A * z * z * z)).tanh();
    0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * z * z)
}

struct BlockCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    a: Array2<f64>,
    c: Array2<f64>,
    ln1: LnCache,
    h1: Array2<f64>,
    z: Array2<f64>,
    gz: Array2<f64>,
    ln2: LnCache,
}

/// Everything the backward pass needs from one forward pass.
pub struct Cache {
    num_samples: usize,
    patches: Array2<f64>,
    u: Array2<f64>,
    energy: Array2<f64>,
    ln0: LnCache,
    blocks: Vec<BlockCache>,
    pub acts: LayerActivations,
}

fn rel_index(i: usize, j: usize, max_rel: usize) -> usize {
    let r = max_rel as i64;
    ((j as i64 - i as i64).clamp(-r, r) + r) as usize
}

fn allowed(i: usize, j: usize, radius: Option<usize>) -> bool {
    radius.map_or(true, |r| i.abs_diff(j) <= r)
}

fn block_forward(b: &BlockParams, h: &Array2<f64>, p: &EncoderParams) -> (Array2<f64>, BlockCache) {
    let cfg = &p.config;
    let t = h.nrows();
    let scale = 1.0 / (cfg.d_model as f64).sqrt();
    let q = h.dot(&b.wq);
    let k = h.dot(&b.wk);
    let v = h.dot(&b.wv);
    let mut a = q.dot(&k.t()) * scale;
    for i in 0..t {
        let mut row = a.row_mut(i);
        let mut m = f64::NEG_INFINITY;
        for j in 0..t {
            if allowed(i, j, cfg.attention_radius) {
                row[j] += b.rel_bias[rel_index(i, j, cfg.max_rel)];
                m = m.max(row[j]);
            }
        }
        let mut sum = 0.0;
        for j in 0..t {
            row[j] = if allowed(i, j, cfg.attention_radius) {
                (row[j] - m).exp()
            } else {
                0.0
            };
            sum += row[j];
        }
        row /= sum;
    }
    let c = a.dot(&v);
    let x1 = h + &c.dot(&b.wo);
    let (h1, ln1) = layer_norm(&x1, &b.ln1_g, &b.ln1_b, cfg.ln_eps);
    let z = h1.dot(&b.w1) + &b.b1;
    let gz = z.mapv(gelu);
    let x2 = &h1 + &(gz.dot(&b.w2) + &b.b2);
    let (out, ln2) = layer_norm(&x2, &b.ln2_g, &b.ln2_b, cfg.ln_eps);
    (
        out,
        BlockCache {
            q,
            k,
            v,
            a,
            c,
            ln1,
            h1,
            z,
            gz,
            ln2,
        },
    )
}

/// Gradient w.r.t. the block input; parameter gradients go into `gb`.
fn block_backward(
    b: &BlockParams,
    c: &BlockCache,
    h: &Array2<f64>,
    dout: &Array2<f64>,
    p: &EncoderParams,
    mut gb: Option<&mut BlockParams>,
) -> Array2<f64> {
    let cfg = &p.config;
    let scale = 1.0 / (cfg.d_model as f64).sqrt();
    let dx2 = layer_norm_back(dout, &c.ln2, &b.ln2_g, gb.as_deref_mut().map(|g| (&mut g.ln2_g, &mut g.ln2_b)));
    let dgz = dx2.dot(&b.w2.t());
    let mut dz = dgz;
    dz.zip_mut_with(&c.z, |d, &z| *d *= gelu_grad(z));
    let dh1 = &dx2 + &dz.dot(&b.w1.t());
    if let Some(g) = gb.as_deref_mut() {
        g.w2 += &c.gz.t().dot(&dx2);
        g.b2 += &dx2.sum_axis(Axis(0));
        g.w1 += &c.h1.t().dot(&dz);
        g.b1 += &dz.sum_axis(Axis(0));
    }
    let dx1 = layer_norm_back(&dh1, &c.ln1, &b.ln1_g, gb.as_deref_mut().map(|g| (&mut g.ln1_g, &mut g.ln1_b)));
    let dc = dx1.dot(&b.wo.t());
    let da = dc.dot(&c.v.t());
    let dv = c.a.t().dot(&dc);
    let mut ds = da;
    for (mut drow, arow) in ds.rows_mut().into_iter().zip(c.a.rows()) {
        let dot: f64 = drow.iter().zip(arow.iter()).map(|(x, y)| x * y).sum();
        drow.zip_mut_with(&arow, |d, &a| *d = a * (*d - dot));
    }
    let dq = ds.dot(&c.k) * scale;
    let dk = ds.t().dot(&c.q) * scale;
    if let Some(g) = gb.as_deref_mut() {
        g.wo += &c.c.t().dot(&dx1);
        g.wq += &h.t().dot(&dq);
        g.wk += &h.t().dot(&dk);
        g.wv += &h.t().dot(&dv);
        let t = ds.nrows();
        for i in 0..t {
            for j in 0..t {
                if allowed(i, j, cfg.attention_radius) {
                    g.rel_bias[rel_index(i, j, cfg.max_rel)] += ds[[i, j]];
                }
            }
        }
    }
    dx1 + dq.dot(&b.wq.t()) + dk.dot(&b.wk.t()) + dv.dot(&b.wv.t())
}

fn check_input(p: &EncoderParams, samples: &[f64]) -> Result<usize> {
    let cfg = &p.config;
    if samples.len() < cfg.kernel {
        return Err(Error::UtteranceTooShort {
            samples: samples.len(),
            needed: cfg.kernel,
        });
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("waveform"));
    }
    Ok(frame_count(samples.len(), cfg.kernel, cfg.stride))
}

pub fn forward_cached(p: &EncoderParams, samples: &[f64]) -> Result<Cache> {
    let t = check_input(p, samples)?;
    let cfg = &p.config;
    let np = cfg.positions();
    let kk = cfg.sub_kernel;
    let mut patches = Array2::zeros((t * np, kk));
    for f in 0..t {
        for q in 0..np {
            let start = f * cfg.stride + q * cfg.sub_stride;
            patches
                .row_mut(f * np + q)
                .assign(&ArrayView1::from(&samples[start..start + kk]));
        }
    }
    let u = patches.dot(&p.conv_w.t()) + &p.conv_b;
    let mut energy = Array2::zeros((t, cfg.d_model));
    for f in 0..t {
        let block = u.slice(s![f * np..(f + 1) * np, ..]);
        let mut row = energy.row_mut(f);
        for urow in block.rows() {
            row.zip_mut_with(&urow, |e, &x| *e += x * x);
        }
        row /= np as f64;
    }
    let pre = energy.mapv(|e| (e / cfg.energy_floor).ln_1p());
    let (h0, ln0) = layer_norm(&pre, &p.ln0_g, &p.ln0_b, cfg.ln_eps);
    let mut layers = vec![h0];
    let mut blocks = Vec::with_capacity(p.blocks.len());
    for b in &p.blocks {
        let (h, c) = block_forward(b, layers.last().unwrap(), p);
        layers.push(h);
        blocks.push(c);
    }
    Ok(Cache {
        num_samples: samples.len(),
        patches,
        u,
        energy,
        ln0,
        blocks,
        acts: LayerActivations {
            layers,
            frame_hop_s: cfg.frame_hop_s(),
        },
    })
}

pub fn forward(p: &EncoderParams, samples: &[f64]) -> Result<LayerActivations> {
    Ok(forward_cached(p, samples)?.acts)
}

/// Reverse pass from per-layer output gradients `seeds[ℓ]` (`[frames × d]`,
/// `None` for zero). Returns parameter gradients when `want_params` (head
/// gradients stay zero) and the gradient over input samples.
pub fn backward(
    p: &EncoderParams,
    cache: &Cache,
    seeds: &[Option<Array2<f64>>],
    want_params: bool,
) -> Result<(Option<EncoderParams>, Vec<f64>)> {
    let num_layers = p.blocks.len();
    if seeds.len() != num_layers + 1 {
        return Err(Error::DimensionMismatch {
            expected: num_layers + 1,
            got: seeds.len(),
        });
    }
    let t = cache.acts.num_frames();
    let d = p.config.d_model;
    for s in seeds.iter().flatten() {
        if s.dim() != (t, d) {
            return invalid(format!("seed gradient shape {:?}, expected ({t}, {d})", s.dim()));
        }
    }
    let mut grads = want_params.then(|| p.zeros_like());
    let Some(top) = seeds.iter().rposition(Option::is_some) else {
        return Ok((grads, vec![0.0; cache.num_samples]));
    };
    let mut dh = seeds[top].clone().unwrap();
    for l in (0..top).rev() {
        let gb = grads.as_mut().map(|g| &mut g.blocks[l]);
        dh = block_backward(&p.blocks[l], &cache.blocks[l], &cache.acts.layers[l], &dh, p, gb);
        if let Some(s) = &seeds[l] {
            dh += s;
        }
    }
    let cfg = &p.config;
    let dpre = layer_norm_back(&dh, &cache.ln0, &p.ln0_g, grads.as_mut().map(|g| (&mut g.ln0_g, &mut g.ln0_b)));
    let np = cfg.positions();
    let mut du = Array2::zeros(cache.u.dim());
    for f in 0..t {
        for c in 0..d {
            let de = dpre[[f, c]] / (cfg.energy_floor + cache.energy[[f, c]]);
            let k = 2.0 * de / np as f64;
            for q in 0..np {
                du[[f * np + q, c]] = k * cache.u[[f * np + q, c]];
            }
        }
    }
    if let Some(g) = grads.as_mut() {
        g.conv_w += &du.t().dot(&cache.patches);
        g.conv_b += &du.sum_axis(Axis(0));
    }
    let dpatch = du.dot(&p.conv_w);
    let mut dx = vec![0.0; cache.num_samples];
    for f in 0..t {
        for q in 0..np {
            let start = f * cfg.stride + q * cfg.sub_stride;
            for (slot, v) in dx[start..start + cfg.sub_kernel].iter_mut().zip(dpatch.row(f * np + q)) {
                *slot += v;
            }
        }
    }
    Ok((grads, dx))
}

/// Input gradient of `probe_w[y] · h^(layer)[frame] + probe_b[y]` from an
/// existing forward pass.
pub fn backward_input_cached(
    p: &EncoderParams,
    cache: &Cache,
    layer: usize,
    frame: usize,
    probe_w: ArrayView2<f64>,
    y: usize,
) -> Result<InputGradient> {
    let d = p.config.d_model;
    if layer > p.blocks.len() {
        return invalid(format!("layer {layer} out of range 0..={}", p.blocks.len()));
    }
    if probe_w.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: probe_w.ncols(),
        });
    }
    if y >= probe_w.nrows() {
        return invalid(format!("class {y} out of range for {} probe rows", probe_w.nrows()));
    }
    let t = cache.acts.num_frames();
    if frame >= t {
        return invalid(format!("frame {frame} out of range for {t} frames"));
    }
    let mut seed = Array2::zeros((t, d));
    seed.row_mut(frame).assign(&probe_w.row(y));
    let mut seeds = vec![None; p.blocks.len() + 1];
    seeds[layer] = Some(seed);
    let (_, g) = backward(p, cache, &seeds, false)?;
    Ok(InputGradient { g, layer, class: y, frame })
}

pub fn backward_input(
    p: &EncoderParams,
    samples: &[f64],
    layer: usize,
    frame: usize,
    probe_w: ArrayView2<f64>,
    probe_b: ArrayView1<f64>,
    y: usize,
) -> Result<InputGradient> {
    if probe_b.len() != probe_w.nrows() {
        return Err(Error::DimensionMismatch {
            expected: probe_w.nrows(),
            got: probe_b.len(),
        });
    }
    let cache = forward_cached(p, samples)?;
    backward_input_cached(p, &cache, layer, frame, probe_w, y)
}
