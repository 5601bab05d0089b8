//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Runs the full default recipe, so it takes a while.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use ndarray::{Array1, Array2};
use tonespan::ctcalign::{align, brute_force_align, PosteriorGrid};
use tonespan::gradsens::{
    bin_center, bin_histogram, effective_span, energy_profile, r_com, SensitivityHistogram, BIN_MS, MAX_OFFSET_MS,
    NUM_BINS,
};
use tonespan::rng::SplitMix64;
use tonespan::spansweep::optimal_span;
use tonespan::toyencoder::{backward_input, forward, random_params, EncoderConfig};
use tonespan_cli::config::{RunConfig, Split};
use tonespan_cli::recipe;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(name: &'static str, pass: bool, detail: String) -> Outcome {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { name, pass, detail }
}

const SEEDS: [u64; 3] = [1, 2, 3];

fn lang_cfg(lang: &str) -> RunConfig {
    let mut c = RunConfig::default();
    c.corpus.language = lang.into();
    c
}

fn sweep_optimum(cfg: &RunConfig, seed: u64) -> f64 {
    optimal_span(&recipe::sweep(cfg, seed).expect("sweep")).expect("non-empty")
}

/// Optima per seed and wall time for one language.
fn cue_recovery(lang: &str, lo: f64, hi: f64) -> (bool, Vec<f64>, f64) {
    let t = Instant::now();
    let cfg = lang_cfg(lang);
    let opts: Vec<f64> = SEEDS.iter().map(|&s| sweep_optimum(&cfg, s)).collect();
    let secs = t.elapsed().as_secs_f64();
    let ok = opts.iter().all(|o| (lo..=hi).contains(o)) && secs < 300.0;
    (ok, opts, secs)
}

fn r_com_arithmetic() -> Outcome {
    let mut worst = 0.0f64;
    let mut exact_double = true;
    let hist = |mass: Vec<f64>| SensitivityHistogram {
        mass,
        layer: 0,
        n_segments: 1,
        truncated_at_ms: None,
    };
    for b in 0..NUM_BINS {
        let mut m = vec![0.0; NUM_BINS];
        m[b] = 1.0;
        let h = hist(m);
        worst = worst.max((r_com(&h) - bin_center(b)).abs());
        exact_double &= effective_span(&h) == 2.0 * r_com(&h);
    }
    let u = hist(vec![1.0 / NUM_BINS as f64; NUM_BINS]);
    worst = worst.max((r_com(&u) - 500.0).abs());
    exact_double &= effective_span(&u) == 2.0 * r_com(&u);
    report(
        "r_com hand checks",
        worst <= 1e-12 && exact_double,
        format!("max error {worst:.2e} ms, effective span = 2 r_com exactly: {exact_double}"),
    )
}

fn histogram_contract() -> Outcome {
    let fs = 16_000u32;
    let mut rng = SplitMix64::new(11);
    let mut worst_sum = 0.0f64;
    let mut worst_scale = 0.0f64;
    let mut discard_ok = true;
    for _ in 0..20 {
        let n = 8_000 + rng.below(40_000) as usize;
        let g: Vec<f64> = (0..n).map(|_| rng.gaussian() * rng.uniform(0.0, 2.0)).collect();
        let t_c = rng.uniform(0.1, n as f64 / fs as f64 - 0.1);
        let base = bin_histogram(&[energy_profile(&g, fs, t_c, 0, "u").unwrap()], 0).unwrap();
        worst_sum = worst_sum.max((base.mass.iter().sum::<f64>() - 1.0).abs());
        for c in [1e-3, 1.0, 1e3] {
            let scaled: Vec<f64> = g.iter().map(|v| v * c).collect();
            let h = bin_histogram(&[energy_profile(&scaled, fs, t_c, 0, "u").unwrap()], 0).unwrap();
            for (a, b) in h.mass.iter().zip(&base.mass) {
                worst_scale = worst_scale.max((a - b).abs());
            }
        }
        // Zeroing everything at or beyond 1000 ms must not change the histogram.
        let center = t_c * fs as f64;
        let limit = fs as f64 * MAX_OFFSET_MS / 1000.0;
        let inside: Vec<f64> = g
            .iter()
            .enumerate()
            .map(|(i, &v)| if (i as f64 - center).abs() < limit { v } else { 0.0 })
            .collect();
        let h = bin_histogram(&[energy_profile(&inside, fs, t_c, 0, "u").unwrap()], 0).unwrap();
        discard_ok &= h.mass == base.mass;
    }
    report(
        "histogram contract",
        worst_sum <= 1e-9 && worst_scale <= 1e-12 && discard_ok,
        format!("max |sum-1| {worst_sum:.1e}, max scale drift {worst_scale:.1e}, energy beyond 1000 ms ignored: {discard_ok}"),
    )
}

fn ctc_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = SplitMix64::new(21);
    let (mut mismatches, mut worst, mut n) = (0, 0.0f64, 0);
    while n < 500 {
        let t = 1 + rng.below(8) as usize;
        let v = 2 + rng.below(3) as usize;
        let len = rng.below(4) as usize;
        let tokens: Vec<usize> = (0..len).map(|_| 1 + rng.below(v as u64 - 1) as usize).collect();
        let logits = Array2::from_shape_simple_fn((t, v), || 2.0 * rng.gaussian());
        let mut logp = logits.clone();
        for mut row in logp.rows_mut() {
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        let g = PosteriorGrid::new(logp, 0.02).unwrap();
        match (align(&g, &tokens), brute_force_align(&g, &tokens)) {
            (Ok(a), Ok(b)) => {
                let same = a.spans.iter().zip(&b.spans).all(|(x, y)| x.start_frame == y.start_frame && x.end_frame == y.end_frame)
                    && a.spans.len() == b.spans.len();
                worst = worst.max((a.path_logp - b.path_logp).abs());
                if !same || (a.path_logp - b.path_logp).abs() > 1e-9 {
                    mismatches += 1;
                }
            }
            (Err(_), Err(_)) => {}
            _ => mismatches += 1,
        }
        n += 1;
    }
    let secs = t0.elapsed().as_secs_f64();
    report(
        "CTC alignment oracle",
        mismatches == 0 && secs < 60.0,
        format!("{n} instances, {mismatches} mismatches, max |dlogp| {worst:.1e}, {secs:.2} s"),
    )
}

fn gradient_exactness() -> Outcome {
    let labels: Vec<String> = ["T1", "T2", "T3", "T4", "T5"].iter().map(|s| s.to_string()).collect();
    let p = random_params(&EncoderConfig::default(), &labels, 5).unwrap();
    let cfg = lang_cfg("tha").corpus.corpus_config(1, Split::Test, 5).unwrap();
    let u = tonespan::synthcorpus::make_corpus(&cfg).unwrap().utterances.remove(0);
    let x = &u.waveform.samples;
    let mut rng = SplitMix64::new(6);
    let probe = Array2::from_shape_simple_fn((5, 32), || rng.gaussian());
    let bias = Array1::zeros(5);
    let n_frames = forward(&p, x).unwrap().num_frames();
    let (layer, frame, y) = (4, n_frames / 2, 2);
    let g = backward_input(&p, x, layer, frame, probe.view(), bias.view(), y).unwrap();
    let z = |x: &[f64]| forward(&p, x).unwrap().layers[layer].row(frame).dot(&probe.row(y));
    let gmax = g.g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let covered = (n_frames - 1) * 320 + 400;
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.below(covered as u64) as usize;
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[n] += h;
        xm[n] -= h;
        let fd = (z(&xp) - z(&xm)) / (2.0 * h);
        let e = (g.g[n] - fd).abs() / g.g[n].abs().max(fd.abs()).max(1e-6 * gmax);
        worst = worst.max(e);
    }
    report("toy-encoder input gradient vs finite differences", worst < 1e-4, format!("50 positions, max relative error {worst:.2e}"))
}

fn locality_control() -> Outcome {
    let labels: Vec<String> = ["T1", "T2", "T3"].iter().map(|s| s.to_string()).collect();
    let fs = 16_000.0;
    let mut ok = true;
    let mut checked = 0;
    for radius in [1usize, 2] {
        let cfg = EncoderConfig {
            attention_radius: Some(radius),
            ..EncoderConfig::default()
        };
        let p = random_params(&cfg, &labels, 7).unwrap();
        let mut rng = SplitMix64::new(8 + radius as u64);
        let x: Vec<f64> = (0..40_000).map(|_| 0.1 * rng.gaussian()).collect();
        let probe = Array2::from_shape_simple_fn((3, 32), || rng.gaussian());
        let b = Array1::zeros(3);
        let frame = 60;
        for layer in 0..=4 {
            let g = backward_input(&p, &x, layer, frame, probe.view(), b.view(), 1).unwrap();
            // Receptive field of frame i after `layer` masked blocks.
            let reach = layer * radius;
            let lo = (frame - reach) * cfg.stride;
            let hi = (frame + reach) * cfg.stride + cfg.kernel;
            let t_c = (frame * cfg.stride) as f64 / fs + cfg.kernel as f64 / 2.0 / fs;
            let bound = (t_c * fs - lo as f64).max((hi - 1) as f64 - t_c * fs);
            let prof = energy_profile(&g.g, 16_000, t_c, layer, "x").unwrap();
            let outside: f64 = prof
                .energy
                .iter()
                .enumerate()
                .filter(|(n, _)| (*n as f64 - t_c * fs).abs() > bound)
                .map(|(_, e)| e)
                .sum();
            let h = bin_histogram(&[prof], layer).unwrap();
            let last_bin = (bound / (fs * BIN_MS / 1000.0)).floor() as usize;
            let tail: f64 = h.mass[(last_bin + 1).min(NUM_BINS)..].iter().sum();
            ok &= outside == 0.0 && tail == 0.0;
            checked += 1;
        }
    }
    report("locality negative control", ok, format!("{checked} masked (radius, layer) cases, energy outside the bound exactly zero: {ok}"))
}

struct EncoderRun {
    seed: u64,
    trained_curve: Vec<(usize, f64)>,
    vanilla_curve: Vec<(usize, f64)>,
    chance: f64,
    trained_upper: f64,
    vanilla_upper: f64,
    trained_argmax: usize,
}

fn encoder_run(lang: &str, seed: u64) -> EncoderRun {
    let cfg = lang_cfg(lang);
    let trained = recipe::train(&cfg, seed).expect("train").params;
    let vanilla = recipe::vanilla(&cfg, seed).expect("vanilla");
    let (dev, test) = recipe::probe_splits(&cfg, seed).expect("splits");
    let mut out = Vec::new();
    for (p, tag) in [(&trained, "trained"), (&vanilla, "vanilla")] {
        let pr = recipe::probe(p, &cfg, &dev.utterances, &test.utterances, tag).expect("probe");
        let gs = recipe::gradsens(p, &pr.probes, &cfg, &test.utterances, None).expect("gradsens");
        let upper = gs.summary.group("upper").expect("upper group").median;
        println!(
            "  {lang} seed {seed} {tag}: probe F1 {:?}, effective spans {:?}",
            pr.curve.points.iter().map(|p| (p.1 * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            gs.summary.layers.iter().map(|l| l.effective_span_ms.round()).collect::<Vec<_>>()
        );
        out.push((pr.curve, upper, pr.probes.class_labels().len()));
    }
    let (vc, vu, k) = out.pop().unwrap();
    let (tc, tu, _) = out.pop().unwrap();
    EncoderRun {
        seed,
        trained_argmax: tc.argmax_layer().unwrap(),
        trained_curve: tc.points,
        vanilla_curve: vc.points,
        chance: 1.0 / k as f64,
        trained_upper: tu,
        vanilla_upper: vu,
    }
}

fn files_under(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn fs_read(p: &Path) -> Option<Vec<u8>> {
    std::fs::read(p).ok()
}

fn cli_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_tonespan");
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.toml");
    std::fs::write(
        &cfg,
        "[spansweep]\nn_train = 40\nn_test = 20\n[train]\nn_train = 16\n[train.optimizer]\nepochs = 1\n\
         [probe]\nn_dev = 16\nn_test = 8\n[gradsens]\nn_utterances = 3\n",
    )
    .unwrap();
    let jobs = tmp.path().join("jobs.jsonl");
    std::fs::write(
        &jobs,
        "{\"id\":\"a\",\"frame_hop_s\":0.02,\"logp\":[\
         [-0.10536051565782628,-2.995732273553991,-2.995732273553991],\
         [-2.3025850929940455,-0.2231435513142097,-2.3025850929940455],\
         [-2.3025850929940455,-2.3025850929940455,-0.2231435513142097],\
         [-0.10536051565782628,-2.995732273553991,-2.995732273553991]],\
         \"tokens\":[{\"sym\":1,\"tone\":\"T1\"},{\"sym\":2,\"tone\":null}]}\n",
    )
    .unwrap();
    let steps: Vec<Vec<String>> = vec![
        vec!["synth", "--n", "4"],
        vec!["spansweep"],
        vec!["train"],
        vec!["train", "--vanilla"],
        vec!["probe"],
        vec!["gradsens", "--display-radius", "200", "--baseline-from", "{out}/spansweep.csv"],
        vec!["align", "--input", jobs.to_str().unwrap()],
        vec!["report", "--runs", "{out}"],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    let mut failures = Vec::new();
    // Same directory name in both reruns, since reports label runs by it.
    for run in ["a", "b"] {
        let out = tmp.path().join(run).join("run");
        for step in &steps {
            let args: Vec<String> = step.iter().map(|a| a.replace("{out}", out.to_str().unwrap())).collect();
            let st = Command::new(bin)
                .args(["--seed", "3", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
                .args(&args)
                .env_remove("TONESPAN_OUT")
                .output()
                .unwrap();
            if !st.status.success() {
                failures.push(format!("{run}: {} failed: {}", args[0], String::from_utf8_lossy(&st.stderr).trim()));
            }
        }
    }
    let (da, db) = (tmp.path().join("a/run"), tmp.path().join("b/run"));
    let a = files_under(&da);
    let b = files_under(&db);
    let csvs = a.iter().filter(|p| p.extension().is_some_and(|e| e == "csv")).count();
    if a != b {
        failures.push("different file sets".into());
    }
    for f in &a {
        if fs_read(&da.join(f)) != fs_read(&db.join(f)) {
            failures.push(format!("{} differs", f.display()));
        }
    }
    report(
        "CLI determinism",
        failures.is_empty() && csvs >= 8,
        if failures.is_empty() {
            format!("{} commands, {} files ({csvs} CSVs) byte-identical across reruns", steps.len(), a.len())
        } else {
            failures.join("; ")
        },
    )
}

fn main() -> ExitCode {
    let mut results = Vec::new();

    results.push(r_com_arithmetic());
    results.push(histogram_contract());
    results.push(ctc_oracle());
    results.push(gradient_exactness());
    results.push(locality_control());
    results.push(cli_determinism());

    let (tha_ok, tha_opts, tha_s) = cue_recovery("tha", 80.0, 140.0);
    let (vie_ok, vie_opts, vie_s) = cue_recovery("vie", 160.0, 220.0);
    results.push(report(
        "span sweep recovers cue spans",
        tha_ok && vie_ok,
        format!("tha optima {tha_opts:?} ms in {tha_s:.0} s; vie optima {vie_opts:?} ms in {vie_s:.0} s"),
    ));

    let mut cues = Vec::new();
    for cue in [60.0, 100.0, 140.0, 180.0] {
        let opt = if cue == 100.0 {
            tha_opts[0]
        } else {
            let mut c = lang_cfg("tha");
            c.corpus.cue_span_ms = Some(cue);
            sweep_optimum(&c, SEEDS[0])
        };
        cues.push((cue, opt));
    }
    let mono = cues.windows(2).all(|w| w[1].1 >= w[0].1);
    results.push(report("optimal span monotone in cue span", mono, format!("(cue, optimum) {cues:?}")));

    let tha: Vec<EncoderRun> = SEEDS.iter().map(|&s| encoder_run("tha", s)).collect();
    let vie: Vec<EncoderRun> = SEEDS.iter().map(|&s| encoder_run("vie", s)).collect();

    let mut ok = true;
    let mut parts = Vec::new();
    for r in &tha {
        let vanilla_dev = r.vanilla_curve.iter().map(|p| (p.1 - r.chance).abs()).fold(0.0, f64::max);
        let upper = r.trained_argmax >= 2;
        ok &= upper && vanilla_dev <= 0.10;
        let peak = r.trained_curve.iter().map(|p| p.1).fold(0.0, f64::max);
        parts.push(format!(
            "seed {}: trained peak layer {} (F1 {peak:.3}), vanilla max |F1-chance| {vanilla_dev:.3}",
            r.seed, r.trained_argmax
        ));
    }
    results.push(report("probe curves peak in upper layers, vanilla near chance", ok, parts.join("; ")));

    let mut ok = true;
    let mut parts = Vec::new();
    for r in &tha {
        ok &= (60.0..=160.0).contains(&r.trained_upper) && r.trained_upper < r.vanilla_upper;
        parts.push(format!("tha seed {}: {:.1} vs vanilla {:.1}", r.seed, r.trained_upper, r.vanilla_upper));
    }
    for r in &vie {
        ok &= r.trained_upper < r.vanilla_upper;
        parts.push(format!("vie seed {}: {:.1} vs vanilla {:.1}", r.seed, r.trained_upper, r.vanilla_upper));
    }
    results.push(report("upper-layer effective span", ok, format!("medians (ms) {}", parts.join("; "))));

    let failed: Vec<&Outcome> = results.iter().filter(|r| !r.pass).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        for f in failed {
            eprintln!("failed: {}: {}", f.name, f.detail);
        }
        ExitCode::FAILURE
    }
}
