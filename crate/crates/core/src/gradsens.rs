//! Squared input-gradient energy around tone centers, binned by offset
//! `Δt = |t − t_c|` into 20 ms bins up to one second.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::probes::{center_frame, ProbeSet};
use crate::synthcorpus::Utterance;
use crate::toyencoder::{backward_input_cached, forward_cached, EncoderParams};

pub const BIN_MS: f64 = 20.0;
pub const NUM_BINS: usize = 50;
pub const MAX_OFFSET_MS: f64 = BIN_MS * NUM_BINS as f64;

/// Lower edge of bin `i` in ms.
pub fn bin_lo(i: usize) -> f64 {
    BIN_MS * i as f64
}

pub fn bin_center(i: usize) -> f64 {
    BIN_MS * i as f64 + BIN_MS / 2.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyProfile {
    pub energy: Vec<f64>,
    pub sample_rate: u32,
    pub t_c: f64,
    pub layer: usize,
    pub segment: String,
}

pub fn energy_profile(
    grad: &[f64],
    sample_rate: u32,
    t_c: f64,
    layer: usize,
    segment: &str,
) -> Result<EnergyProfile> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("input gradient"));
    }
    if sample_rate == 0 {
        return invalid("sample rate must be positive");
    }
    Ok(EnergyProfile {
        energy: grad.iter().map(|g| g * g).collect(),
        sample_rate,
        t_c,
        layer,
        segment: segment.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityHistogram {
    /// `NUM_BINS` masses over `[0, 20), [20, 40), …, [980, 1000)` ms.
    pub mass: Vec<f64>,
    pub layer: usize,
    pub n_segments: usize,
    /// Set when bins at or beyond this radius were dropped for display.
    pub truncated_at_ms: Option<f64>,
}

/// Pairwise sum in the order given.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

/// Unit-mass bins for one profile, or `None` if it has no energy in range.
pub fn profile_bins(p: &EnergyProfile) -> Option<[f64; NUM_BINS]> {
    // Offsets in samples keep bin edges exact at integer rates.
    let fs = p.sample_rate as f64;
    let center = p.t_c * fs;
    let width = fs * BIN_MS / 1000.0;
    let mut per_bin: Vec<Vec<f64>> = vec![Vec::new(); NUM_BINS];
    for (n, &e) in p.energy.iter().enumerate() {
        let b = ((n as f64 - center).abs() / width).floor();
        if b < NUM_BINS as f64 {
            per_bin[b as usize].push(e);
        }
    }
    let mut bins = [0.0; NUM_BINS];
    for (slot, vals) in bins.iter_mut().zip(&per_bin) {
        *slot = pairwise_sum(vals);
    }
    let total = pairwise_sum(&bins);
    if !(total > 0.0) {
        return None;
    }
    bins.iter_mut().for_each(|b| *b /= total);
    Some(bins)
}

/// Per-profile normalized histograms averaged uniformly over profiles.
/// Profiles with no in-range energy are skipped.
pub fn bin_histogram(profiles: &[EnergyProfile], layer: usize) -> Result<SensitivityHistogram> {
    if let Some(p) = profiles.iter().find(|p| p.layer != layer) {
        return invalid(format!("profile for layer {} in layer {layer} histogram", p.layer));
    }
    if let Some(p) = profiles.first() {
        if profiles.iter().any(|q| q.sample_rate != p.sample_rate) {
            return invalid("profiles disagree on sample rate");
        }
    }
    let parts: Vec<[f64; NUM_BINS]> = profiles.iter().filter_map(profile_bins).collect();
    average_bins(&parts, layer)
}

/// Uniform average of unit-mass per-profile bins.
pub fn average_bins(parts: &[[f64; NUM_BINS]], layer: usize) -> Result<SensitivityHistogram> {
    if parts.is_empty() {
        return Err(Error::NoGradientSignal);
    }
    // Sorting each bin's contributions makes the sum independent of profile order.
    let mut mass: Vec<f64> = (0..NUM_BINS)
        .map(|b| {
            let mut col: Vec<f64> = parts.iter().map(|p| p[b]).collect();
            col.sort_by(f64::total_cmp);
            pairwise_sum(&col)
        })
        .collect();
    let total = pairwise_sum(&mass);
    mass.iter_mut().for_each(|m| *m /= total);
    Ok(SensitivityHistogram {
        mass,
        layer,
        n_segments: parts.len(),
        truncated_at_ms: None,
    })
}

/// Mass-weighted mean bin center in ms.
pub fn r_com(h: &SensitivityHistogram) -> f64 {
    let weighted: Vec<f64> = h.mass.iter().enumerate().map(|(i, m)| m * bin_center(i)).collect();
    pairwise_sum(&weighted) / pairwise_sum(&h.mass)
}

pub fn effective_span(h: &SensitivityHistogram) -> f64 {
    2.0 * r_com(h)
}

/// Drop bins at or beyond `radius_ms` and renormalize. Analysis values
/// should always come from the untruncated histogram.
pub fn truncate_for_display(h: &SensitivityHistogram, radius_ms: f64) -> Result<SensitivityHistogram> {
    let k = radius_ms / BIN_MS;
    if !(k.fract() == 0.0 && k >= 1.0 && k <= NUM_BINS as f64) {
        return invalid(format!("display radius {radius_ms} ms must be a positive multiple of 20 up to 1000"));
    }
    let k = k as usize;
    if k == NUM_BINS {
        return Ok(h.clone());
    }
    let kept = pairwise_sum(&h.mass[..k]);
    if !(kept > 0.0) {
        return invalid(format!("no mass within {radius_ms} ms"));
    }
    let mass = (0..NUM_BINS)
        .map(|i| if i < k { h.mass[i] / kept } else { 0.0 })
        .collect();
    Ok(SensitivityHistogram {
        mass,
        truncated_at_ms: Some(radius_ms),
        ..h.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGroup {
    pub name: String,
    /// Inclusive layer range.
    pub first: usize,
    pub last: usize,
}

impl LayerGroup {
    pub fn new(name: &str, first: usize, last: usize) -> Self {
        Self {
            name: name.to_string(),
            first,
            last,
        }
    }

    /// Lower and upper halves of layers `0..=num_layers`; upper starts at
    /// `ceil(num_layers / 2)`.
    pub fn halves(num_layers: usize) -> Vec<Self> {
        let mid = num_layers.div_ceil(2);
        vec![
            Self::new("lower", 0, mid.saturating_sub(1)),
            Self::new("upper", mid, num_layers),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpan {
    pub layer: usize,
    pub r_com_ms: f64,
    pub effective_span_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub name: String,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanSummary {
    pub layers: Vec<LayerSpan>,
    pub groups: Vec<GroupStats>,
    pub baseline_span_ms: Option<f64>,
}

impl SpanSummary {
    pub fn group(&self, name: &str) -> Option<&GroupStats> {
        self.groups.iter().find(|g| g.name == name)
    }
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Effective span per layer plus min/median/max per group.
pub fn span_summary(
    hists: &[SensitivityHistogram],
    groups: &[LayerGroup],
    baseline_span_ms: Option<f64>,
) -> Result<SpanSummary> {
    let mut layers: Vec<LayerSpan> = hists
        .iter()
        .map(|h| {
            let r = r_com(h);
            LayerSpan {
                layer: h.layer,
                r_com_ms: r,
                effective_span_ms: 2.0 * r,
            }
        })
        .collect();
    layers.sort_by_key(|l| l.layer);
    if layers.windows(2).any(|w| w[0].layer == w[1].layer) {
        return invalid("more than one histogram for a layer");
    }
    let groups = groups
        .iter()
        .map(|g| {
            let spans: Vec<f64> = layers
                .iter()
                .filter(|l| (g.first..=g.last).contains(&l.layer))
                .map(|l| l.effective_span_ms)
                .collect();
            if spans.is_empty() {
                return invalid(format!("layer group {:?} is empty", g.name));
            }
            Ok(GroupStats {
                name: g.name.clone(),
                min: spans.iter().copied().fold(f64::INFINITY, f64::min),
                median: median(&spans).expect("non-empty"),
                max: spans.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpanSummary {
        layers,
        groups,
        baseline_span_ms,
    })
}

/// `layer,bin_lo_ms,mass` rows.
pub fn histograms_csv(hists: &[SensitivityHistogram]) -> String {
    let mut s = String::from("layer,bin_lo_ms,mass\n");
    for h in hists {
        for (i, m) in h.mass.iter().enumerate() {
            s.push_str(&format!("{},{},{:.9e}\n", h.layer, bin_lo(i), m));
        }
    }
    s
}

/// `layer,r_com_ms,effective_span_ms` rows.
pub fn summary_csv(summary: &SpanSummary) -> String {
    let mut s = String::from("layer,r_com_ms,effective_span_ms\n");
    for l in &summary.layers {
        s.push_str(&format!("{},{:.6},{:.6}\n", l.layer, l.r_com_ms, l.effective_span_ms));
    }
    s
}

/// Layer × offset grid, one row per layer, one column per bin center.
pub fn surface_csv(hists: &[SensitivityHistogram]) -> String {
    let mut s = String::from("layer");
    for i in 0..NUM_BINS {
        s.push_str(&format!(",{}", bin_center(i)));
    }
    s.push('\n');
    for h in hists {
        s.push_str(&h.layer.to_string());
        for m in &h.mass {
            s.push_str(&format!(",{m:.9e}"));
        }
        s.push('\n');
    }
    s
}

/// Per-layer histograms for an encoder and its probes: for every segment and
/// layer, the input gradient of the gold-class probe logit at the center frame.
pub fn encoder_histograms(p: &EncoderParams, probes: &ProbeSet, utts: &[Utterance]) -> Result<Vec<SensitivityHistogram>> {
    let n_layers = p.blocks.len() + 1;
    if probes.num_layers() != n_layers {
        return Err(Error::DimensionMismatch {
            expected: n_layers,
            got: probes.num_layers(),
        });
    }
    let raw: Vec<_> = probes.probes.iter().map(|m| m.raw_weights().0).collect();
    let labels = probes.class_labels();
    let fs = p.config.sample_rate;
    let per_utt = utts
        .par_iter()
        .map(|u| {
            let cache = forward_cached(p, &u.waveform.samples)?;
            let t = cache.acts.num_frames();
            let mut out = vec![Vec::new(); n_layers];
            for s in &u.segments {
                let y = labels
                    .iter()
                    .position(|l| *l == s.label)
                    .ok_or_else(|| Error::InvalidArgument(format!("label {:?} unknown to probes", s.label)))?;
                let frame = center_frame(s.t_c, cache.acts.frame_hop_s, t);
                for (layer, w) in raw.iter().enumerate() {
                    let g = backward_input_cached(p, &cache, layer, frame, w.view(), y)?;
                    let prof = energy_profile(&g.g, fs, s.t_c, layer, &u.id)?;
                    out[layer].extend(profile_bins(&prof));
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    (0..n_layers)
        .map(|l| {
            let parts: Vec<_> = per_utt.iter().flat_map(|u| u[l].iter().copied()).collect();
            average_bins(&parts, l)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    const FS: u32 = 16_000;

    fn spike(len: usize, at: usize, v: f64, t_c: f64) -> EnergyProfile {
        let mut g = vec![0.0; len];
        g[at] = v;
        energy_profile(&g, FS, t_c, 0, "s").unwrap()
    }

    fn hist(mass: Vec<f64>, layer: usize) -> SensitivityHistogram {
        SensitivityHistogram {
            mass,
            layer,
            n_segments: 1,
            truncated_at_ms: None,
        }
    }

    #[test]
    fn energy_is_squared_gradient() {
        let g = [0.0, -2.0, 3.0];
        let p = energy_profile(&g, FS, 0.0, 1, "a").unwrap();
        assert_eq!(p.energy, vec![0.0, 4.0, 9.0]);
        let q = energy_profile(&g.map(|x| -x), FS, 0.0, 1, "a").unwrap();
        assert_eq!(p.energy, q.energy);
        assert!(energy_profile(&[f64::NAN], FS, 0.0, 0, "a").is_err());
    }

    #[test]
    fn single_offset_fills_one_bin() {
        // t_c = 0.5 s, spike 30 ms later.
        let h = bin_histogram(&[spike(16000, 8480, 1.5, 0.5)], 0).unwrap();
        assert_eq!(h.mass[1], 1.0);
        assert_eq!(h.mass.iter().sum::<f64>(), 1.0);
        assert!((r_com(&h) - 30.0).abs() < 1e-12);
    }

    #[test]
    fn profiles_are_normalized_before_averaging() {
        let a = spike(16000, 8160, 1.0, 0.5);
        let b = spike(16000, 8800, 1000.0, 0.5);
        let h = bin_histogram(&[a, b], 0).unwrap();
        assert_eq!(h.mass[0], 0.5);
        assert_eq!(h.mass[2], 0.5);
        assert_eq!(h.n_segments, 2);
    }

    #[test]
    fn uniform_energy_over_one_second() {
        let p = energy_profile(&vec![1.0; 16000], FS, 0.5, 0, "u").unwrap();
        let h = bin_histogram(&[p], 0).unwrap();
        // Integer occupancy: sample n sits |n − 8000| / 16 ms from the center.
        let mut counts = [0usize; NUM_BINS];
        for n in 0..16000i64 {
            let b = ((n - 8000).unsigned_abs() / 320) as usize;
            counts[b] += 1;
        }
        assert_eq!(&counts[..3], &[639, 640, 640]);
        assert_eq!(counts[25], 1);
        for (i, m) in h.mass.iter().enumerate() {
            assert!((m - counts[i] as f64 / 16000.0).abs() < 1e-12, "bin {i}: {m}");
        }
        assert!((h.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn energy_past_one_second_is_discarded() {
        let mut g = vec![0.0; 48000];
        g[100] = 1.0;
        g[16000 + 100] = 5.0;
        let p = energy_profile(&g, FS, 0.0, 0, "x").unwrap();
        let h = bin_histogram(&[p], 0).unwrap();
        assert_eq!(h.mass[0], 1.0);
        let far = spike(48000, 40000, 1.0, 0.0);
        assert!(matches!(bin_histogram(&[far], 0), Err(Error::NoGradientSignal)));
    }

    #[test]
    fn zero_energy_is_no_signal() {
        let p = energy_profile(&[0.0; 100], FS, 0.0, 0, "z").unwrap();
        let err = bin_histogram(&[p], 0).unwrap_err();
        assert_eq!(err.to_string(), "no gradient signal");
        assert!(bin_histogram(&[], 0).is_err());
    }

    #[test]
    fn layer_and_rate_must_agree() {
        let a = spike(100, 1, 1.0, 0.0);
        let mut b = a.clone();
        b.layer = 3;
        assert!(bin_histogram(&[a.clone(), b], 0).is_err());
        let mut c = a.clone();
        c.sample_rate = 8000;
        assert!(bin_histogram(&[a, c], 0).is_err());
    }

    #[test]
    fn r_com_hand_checks() {
        let mut m = vec![0.0; NUM_BINS];
        m[1] = 1.0;
        assert_eq!(r_com(&hist(m, 0)), 30.0);
        let mut m = vec![0.0; NUM_BINS];
        m[0] = 0.5;
        m[2] = 0.5;
        assert_eq!(r_com(&hist(m, 0)), 30.0);
        let h = hist(vec![1.0 / NUM_BINS as f64; NUM_BINS], 0);
        assert!((r_com(&h) - 500.0).abs() < 1e-12);
        assert_eq!(effective_span(&h), 2.0 * r_com(&h));
    }

    #[test]
    fn truncation_rules() {
        let mut m = vec![0.0; NUM_BINS];
        m[2] = 0.5;
        m[20] = 0.5;
        let h = hist(m, 0);
        assert_eq!(truncate_for_display(&h, 1000.0).unwrap(), h);
        let t = truncate_for_display(&h, 200.0).unwrap();
        assert_eq!(t.mass[2], 1.0);
        assert_eq!(t.mass[20], 0.0);
        assert_eq!(t.truncated_at_ms, Some(200.0));
        let mut inner = vec![0.0; NUM_BINS];
        inner[1] = 0.25;
        inner[3] = 0.75;
        let t = truncate_for_display(&hist(inner.clone(), 0), 200.0).unwrap();
        assert_eq!(t.mass, inner);
        for bad in [0.0, 30.0, 1020.0, -20.0] {
            assert!(truncate_for_display(&h, bad).is_err());
        }
    }

    #[test]
    fn summary_groups() {
        let at = |bin: usize, layer: usize| {
            let mut m = vec![0.0; NUM_BINS];
            m[bin] = 1.0;
            hist(m, layer)
        };
        // r_com 50 everywhere → effective span 100.
        let hs: Vec<_> = (0..4).map(|l| at(2, l)).collect();
        let s = span_summary(&hs, &LayerGroup::halves(3), Some(100.0)).unwrap();
        for l in &s.layers {
            assert_eq!(l.effective_span_ms, 100.0);
        }
        for g in &s.groups {
            assert_eq!((g.min, g.median, g.max), (100.0, 100.0, 100.0));
        }
        // r_com 40, 50, 60 via two-bin mixtures.
        let mix = |layer: usize, r: f64| {
            let mut m = vec![0.0; NUM_BINS];
            let w = (r - 30.0) / 40.0;
            m[1] = 1.0 - w;
            m[3] = w;
            hist(m, layer)
        };
        let hs = vec![mix(0, 40.0), mix(1, 50.0), mix(2, 60.0)];
        let s = span_summary(&hs, &[LayerGroup::new("all", 0, 2)], None).unwrap();
        assert!((s.group("all").unwrap().median - 100.0).abs() < 1e-12);
        assert!(span_summary(&hs, &[LayerGroup::new("none", 5, 9)], None).is_err());
    }

    #[test]
    fn halves_split() {
        let h = LayerGroup::halves(4);
        assert_eq!((h[0].first, h[0].last, h[1].first, h[1].last), (0, 1, 2, 4));
    }

    #[test]
    fn csv_shapes() {
        let h = vec![hist(vec![0.02; NUM_BINS], 0), hist(vec![0.02; NUM_BINS], 1)];
        assert_eq!(histograms_csv(&h).lines().count(), 1 + 2 * NUM_BINS);
        assert_eq!(surface_csv(&h).lines().count(), 3);
        let s = span_summary(&h, &[], None).unwrap();
        assert_eq!(summary_csv(&s).lines().count(), 3);
    }

    fn random_profiles(seed: u64, n: usize, len: usize) -> Vec<EnergyProfile> {
        let mut rng = SplitMix64::new(seed);
        (0..n)
            .map(|i| {
                let g: Vec<f64> = (0..len).map(|_| rng.gaussian() * rng.uniform(0.0, 3.0)).collect();
                let t_c = rng.uniform(0.0, len as f64 / FS as f64);
                energy_profile(&g, FS, t_c, 2, &i.to_string()).unwrap()
            })
            .collect()
    }

    #[test]
    fn profile_order_does_not_matter() {
        let mut ps = random_profiles(3, 9, 4000);
        let a = bin_histogram(&ps, 2).unwrap();
        ps.reverse();
        ps.swap(0, 4);
        assert_eq!(bin_histogram(&ps, 2).unwrap(), a);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn mass_sums_to_one(seed in any::<u64>(), n in 1usize..6, len in 50usize..6000) {
            let h = bin_histogram(&random_profiles(seed, n, len), 2).unwrap();
            prop_assert!((h.mass.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(h.mass.iter().all(|&m| m >= 0.0));
            let r = r_com(&h);
            prop_assert!((10.0..=990.0).contains(&r));
        }

        #[test]
        fn gradient_scale_invariance(seed in any::<u64>(), n in 1usize..5, ci in 0usize..3) {
            let c = [1e-3, 1.0, 1e3][ci];
            let mut rng = SplitMix64::new(seed);
            let grads: Vec<(Vec<f64>, f64)> = (0..n)
                .map(|_| ((0..3000).map(|_| rng.gaussian()).collect(), rng.uniform(0.0, 0.18)))
                .collect();
            let build = |scale: f64| {
                let ps: Vec<_> = grads
                    .iter()
                    .map(|(g, t)| {
                        let gs: Vec<f64> = g.iter().map(|v| v * scale).collect();
                        energy_profile(&gs, FS, *t, 0, "p").unwrap()
                    })
                    .collect();
                bin_histogram(&ps, 0).unwrap()
            };
            let a = build(1.0);
            let b = build(c);
            for (x, y) in a.mass.iter().zip(&b.mass) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
            }
            prop_assert!((r_com(&a) - r_com(&b)).abs() <= 1e-12 * r_com(&a));
        }
    }
}
