//! Subcommands. Each writes its outputs under the output directory plus a
//! `<command>.run.json` provenance record.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use tonespan::ctcalign::{align, tones_from_tokens, AlignmentRecord, PosteriorGrid, TonedToken};
use tonespan::external::{gradient_run_histograms, load_activation_run};
use tonespan::gradsens::{
    bin_center, histograms_csv, span_summary, summary_csv, surface_csv, truncate_for_display, LayerGroup,
    SensitivityHistogram, SpanSummary, NUM_BINS,
};
use tonespan::interchange::{config_hash, write_atomic};
use tonespan::linmodel::{load_model, save_model};
use tonespan::probes::{evaluate_probes, train_probes, LayerCurve, ProbeInput, ProbeSet};
use tonespan::spansweep::optimal_span;
use tonespan::synthcorpus::write_corpus;
use tonespan::toyencoder::{frame_accuracy, load_params, save_params, EncoderParams};

use crate::config::{RunConfig, Split};
use crate::recipe::{self, Result};
use crate::svg::{heatmap, LinePlot, Series};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "tonespan", version, about = "Tone-span analysis on synthetic speech and toy encoders")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; TONESPAN_OUT takes precedence when set.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Worker threads.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus (WAVs and manifest).
    Synth(SynthArgs),
    /// Fixed-window logistic-regression sweep over analysis spans.
    Spansweep(CorpusArgs),
    /// Train the toy encoder, or write its random initialization.
    Train(TrainArgs),
    /// Layer-wise linear probes.
    Probe(ProbeArgs),
    /// Gradient-energy histograms and effective spans.
    Gradsens(GradsensArgs),
    /// CTC forced alignment of posterior grids.
    Align(AlignArgs),
    /// Collect layer curves and spans from several output directories.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    Dev,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
            SplitArg::Dev => Split::Dev,
        }
    }
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub lang: Option<String>,
    #[arg(long, value_name = "MS")]
    pub cue_span_ms: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Write the untrained initialization instead.
    #[arg(long)]
    pub vanilla: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EncoderSource {
    /// Parameter directory; defaults to `<out>/encoder`.
    #[arg(long, value_name = "DIR", conflicts_with = "vanilla")]
    pub encoder: Option<PathBuf>,
    /// Use the random initialization for the run seed.
    #[arg(long)]
    pub vanilla: bool,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub source: EncoderSource,
    /// Run manifest with activations to fit probes on.
    #[arg(long, value_name = "RUN.json", requires = "test_acts", conflicts_with_all = ["encoder", "vanilla"])]
    pub acts: Option<PathBuf>,
    /// Run manifest with activations to score probes on.
    #[arg(long, value_name = "RUN.json", requires = "acts")]
    pub test_acts: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradsensArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub source: EncoderSource,
    /// Probe directory; defaults to `<out>/probes`.
    #[arg(long, value_name = "DIR")]
    pub probes: Option<PathBuf>,
    /// Run manifest with stored input gradients, used instead of an encoder.
    #[arg(long, value_name = "RUN.json", conflicts_with_all = ["encoder", "vanilla", "probes"])]
    pub grads: Option<PathBuf>,
    /// Truncate plotted histograms to this radius (ms).
    #[arg(long, value_name = "MS")]
    pub display_radius: Option<f64>,
    #[arg(long, value_name = "MS", conflicts_with = "baseline_from")]
    pub baseline_ms: Option<f64>,
    /// spansweep.csv whose optimal span becomes the baseline.
    #[arg(long, value_name = "CSV")]
    pub baseline_from: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// JSON lines: {"id", "frame_hop_s", "logp": [[..]], "tokens": [{"sym", "tone"}]}.
    #[arg(long, value_name = "JOBS.jsonl")]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, value_name = "DIR", num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
}

/// Shared state of one invocation.
pub struct Ctx {
    pub cfg: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
    outputs: Vec<PathBuf>,
}

fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(std::path::absolute(p)?)
}

impl Ctx {
    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn write(&mut self, rel: &str, text: &str) -> Result<()> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        write_atomic(&path, text.as_bytes())?;
        self.outputs.push(PathBuf::from(rel));
        Ok(())
    }

    fn record(&mut self, rel: &str) {
        self.outputs.push(PathBuf::from(rel));
    }

    fn finish(mut self, command: &str, extra: serde_json::Value) -> Result<()> {
        #[derive(Serialize)]
        struct Meta<'a> {
            command: &'a str,
            version: &'a str,
            seed: u64,
            config_hash: String,
            config: &'a RunConfig,
            details: serde_json::Value,
            outputs: Vec<PathBuf>,
        }
        self.outputs.sort();
        self.outputs.dedup();
        let meta = Meta {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            config_hash: config_hash(&self.cfg)?,
            config: &self.cfg,
            details: extra,
            outputs: std::mem::take(&mut self.outputs),
        };
        let text = serde_json::to_string_pretty(&meta)? + "\n";
        let rel = format!("{command}.run.json");
        fs::create_dir_all(&self.out)?;
        write_atomic(&self.path(&rel), text.as_bytes())?;
        Ok(())
    }
}

impl CorpusArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(l) = &self.lang {
            cfg.corpus.language = l.clone();
        }
        if self.cue_span_ms.is_some() {
            cfg.corpus.cue_span_ms = self.cue_span_ms;
        }
    }
}

/// Parse-free entry point shared by the binary and tests.
pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::new("invalid_argument", "--jobs must be at least 1"));
        }
        // Fails only if a pool already exists, in which case it is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(&absolute(p)?)?,
        None => RunConfig::default(),
    };
    let out = match std::env::var_os("TONESPAN_OUT").filter(|v| !v.is_empty()) {
        Some(v) => PathBuf::from(v),
        None => cli.out.clone(),
    };
    let ctx = |cfg: RunConfig| -> Result<Ctx> {
        Ok(Ctx {
            cfg,
            seed: cli.seed,
            out: absolute(&out)?,
            outputs: Vec::new(),
        })
    };
    match &cli.command {
        Command::Synth(a) => {
            a.corpus.apply(&mut cfg);
            synth(ctx(cfg)?, a)
        }
        Command::Spansweep(a) => {
            a.apply(&mut cfg);
            spansweep(ctx(cfg)?)
        }
        Command::Train(a) => {
            a.corpus.apply(&mut cfg);
            if let Some(e) = a.epochs {
                cfg.train.optimizer.epochs = e;
            }
            train(ctx(cfg)?, a.vanilla)
        }
        Command::Probe(a) => {
            a.corpus.apply(&mut cfg);
            probe(ctx(cfg)?, a)
        }
        Command::Gradsens(a) => {
            a.corpus.apply(&mut cfg);
            if a.display_radius.is_some() {
                cfg.gradsens.display_radius_ms = a.display_radius;
            }
            gradsens(ctx(cfg)?, a)
        }
        Command::Align(a) => align_cmd(ctx(cfg)?, a),
        Command::Report(a) => report(ctx(cfg)?, a),
    }
}

fn synth(mut ctx: Ctx, a: &SynthArgs) -> Result<()> {
    let split: Split = a.split.into();
    let corpus = recipe::corpus(&ctx.cfg, a.n, split, ctx.seed)?;
    let rel = format!("corpus/{}", split_name(split));
    write_corpus(&corpus, ctx.path(&rel))?;
    for u in &corpus.utterances {
        ctx.record(&format!("{rel}/{}.wav", u.id));
    }
    ctx.record(&format!("{rel}/manifest.jsonl"));
    println!("wrote {} utterances to {}", corpus.utterances.len(), ctx.path(&rel).display());
    let details = serde_json::json!({ "split": split_name(split), "n": a.n, "corpus_seed": split.seed(ctx.seed) });
    ctx.finish("synth", details)
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Test => "test",
        Split::Dev => "dev",
    }
}

fn spansweep(mut ctx: Ctx) -> Result<()> {
    let curve = recipe::sweep(&ctx.cfg, ctx.seed)?;
    let best = optimal_span(&curve).ok_or_else(|| CliError::new("invalid_argument", "empty span list"))?;
    ctx.write("spansweep.csv", &curve.to_csv())?;
    let plot = LinePlot {
        title: &format!("Fixed-window tone classification ({})", curve.language_tag),
        x_label: "analysis span (ms)",
        y_label: "macro-F1",
        series: vec![Series {
            name: &curve.language_tag,
            points: &curve.points,
        }],
        vlines: vec![(best, format!("optimum {best} ms"))],
        hlines: Vec::new(),
        y_range: Some((0.0, 1.0)),
        note: None,
    };
    ctx.write("spansweep.svg", &plot.render())?;
    println!("optimal span: {best} ms");
    let details = serde_json::json!({ "optimal_span_ms": best, "n_train_segments": curve.n_train, "n_test_segments": curve.n_test });
    ctx.finish("spansweep", details)
}

fn train(mut ctx: Ctx, vanilla: bool) -> Result<()> {
    let (params, trace) = if vanilla {
        (recipe::vanilla(&ctx.cfg, ctx.seed)?, None)
    } else {
        let r = recipe::train(&ctx.cfg, ctx.seed)?;
        (r.params, Some(r.loss_trace))
    };
    let dir = if vanilla { "vanilla_encoder" } else { "encoder" };
    save_params(&params, ctx.path(dir))?;
    ctx.record(dir);
    let mut details = serde_json::json!({ "checksum": params.checksum(), "num_params": params.num_params() });
    if let Some(trace) = trace {
        let mut csv = String::from("step,loss\n");
        for (i, l) in trace.iter().enumerate() {
            csv.push_str(&format!("{i},{l:.9}\n"));
        }
        ctx.write("loss_trace.csv", &csv)?;
        let test = recipe::corpus(&ctx.cfg, ctx.cfg.probe.n_test, Split::Test, ctx.seed)?;
        let acc = frame_accuracy(&params, &test.utterances)?;
        println!("held-out frame accuracy: {acc:.4}");
        details["test_frame_accuracy"] = serde_json::json!(acc);
        details["final_loss"] = serde_json::json!(trace.last());
    }
    println!("wrote {}", ctx.path(dir).display());
    ctx.finish("train", details)
}

fn resolve_encoder(ctx: &Ctx, src: &EncoderSource) -> Result<(EncoderParams, &'static str)> {
    if src.vanilla {
        return Ok((recipe::vanilla(&ctx.cfg, ctx.seed)?, "vanilla"));
    }
    let dir = match &src.encoder {
        Some(d) => absolute(d)?,
        None => ctx.path("encoder"),
    };
    if !dir.exists() {
        return Err(CliError::new(
            "missing_input",
            format!("no encoder at {}; run `train` first or pass --encoder/--vanilla", dir.display()),
        ));
    }
    Ok((load_params(&dir)?, "trained"))
}

fn save_probes(ctx: &mut Ctx, ps: &ProbeSet) -> Result<()> {
    for (l, m) in ps.probes.iter().enumerate() {
        let rel = format!("probes/layer{l}");
        save_model(m, ctx.path(&rel))?;
        ctx.record(&rel);
    }
    Ok(())
}

fn load_probes(dir: &Path) -> Result<ProbeSet> {
    let mut probes = Vec::new();
    while dir.join(format!("layer{}", probes.len())).exists() {
        probes.push(load_model(dir.join(format!("layer{}", probes.len())))?);
    }
    if probes.is_empty() {
        return Err(CliError::new(
            "missing_input",
            format!("no probes under {}; run `probe` first or pass --probes", dir.display()),
        ));
    }
    Ok(ProbeSet { probes })
}

fn layer_curve_svg(curves: &[(String, &LayerCurve)], chance: Option<f64>, title: &str) -> String {
    let pts: Vec<(String, Vec<(f64, f64)>)> = curves
        .iter()
        .map(|(n, c)| (n.clone(), c.points.iter().map(|&(l, f)| (l as f64, f)).collect()))
        .collect();
    LinePlot {
        title,
        x_label: "layer",
        y_label: "probe macro-F1",
        series: pts.iter().map(|(n, p)| Series { name: n, points: p }).collect(),
        vlines: Vec::new(),
        hlines: chance.map(|c| vec![(c, "chance".to_string())]).unwrap_or_default(),
        y_range: Some((0.0, 1.0)),
        note: None,
    }
    .render()
}

fn probe(mut ctx: Ctx, a: &ProbeArgs) -> Result<()> {
    let run = if let (Some(fit_on), Some(score_on)) = (&a.acts, &a.test_acts) {
        let (m, dev) = load_activation_run(absolute(fit_on)?)?;
        let (tm, test) = load_activation_run(absolute(score_on)?)?;
        if m.layers != tm.layers {
            return Err(CliError::new("invalid_argument", "fit and test runs list different layers"));
        }
        let di: Vec<_> = dev.iter().map(|u| ProbeInput { acts: &u.acts, segments: &u.segments }).collect();
        let ti: Vec<_> = test.iter().map(|u| ProbeInput { acts: &u.acts, segments: &u.segments }).collect();
        let probes = train_probes(&di, &ctx.cfg.probe.fit)?;
        let mut curve = evaluate_probes(&probes, &ti, &tm.model_tag, &tm.language_tag)?;
        // Positions map back to the manifest's layer numbers.
        for p in &mut curve.points {
            p.0 = m.layers[p.0];
        }
        recipe::ProbeRun { probes, curve }
    } else {
        let (params, tag) = resolve_encoder(&ctx, &a.source)?;
        let (dev, test) = recipe::probe_splits(&ctx.cfg, ctx.seed)?;
        recipe::probe(&params, &ctx.cfg, &dev.utterances, &test.utterances, tag)?
    };
    save_probes(&mut ctx, &run.probes)?;
    ctx.write("layer_curve.csv", &run.curve.to_csv())?;
    let chance = 1.0 / run.probes.class_labels().len().max(1) as f64;
    let title = format!("Layer-wise probes ({}, {})", run.curve.model_tag, run.curve.language_tag);
    ctx.write("layer_curve.svg", &layer_curve_svg(&[(run.curve.model_tag.clone(), &run.curve)], Some(chance), &title))?;
    let best = run.curve.argmax_layer();
    if let Some(b) = best {
        println!("best layer: {b}");
    }
    let details = serde_json::json!({ "model_tag": run.curve.model_tag, "argmax_layer": best });
    ctx.finish("probe", details)
}

/// Optimal span from a spansweep CSV; ties go to the shortest span.
pub fn baseline_from_csv(path: &Path) -> Result<f64> {
    let text = fs::read_to_string(path)?;
    let bad = || CliError::new("invalid_argument", format!("{}: not a span_ms,macro_f1 CSV", path.display()));
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("span_ms,macro_f1") {
        return Err(bad());
    }
    let mut best: Option<(f64, f64)> = None;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let (s, f) = line.split_once(',').ok_or_else(bad)?;
        let s: f64 = s.trim().parse().map_err(|_| bad())?;
        let f: f64 = f.trim().parse().map_err(|_| bad())?;
        if best.is_none_or(|b| f > b.1) {
            best = Some((s, f));
        }
    }
    best.map(|b| b.0).ok_or_else(bad)
}

fn gradsens(mut ctx: Ctx, a: &GradsensArgs) -> Result<()> {
    let baseline = match (&a.baseline_ms, &a.baseline_from) {
        (Some(b), _) => Some(*b),
        (None, Some(p)) => Some(baseline_from_csv(&absolute(p)?)?),
        (None, None) => None,
    };
    let (hists, summary, tag): (Vec<SensitivityHistogram>, SpanSummary, String) = if let Some(g) = &a.grads {
        let (m, hists) = gradient_run_histograms(absolute(g)?)?;
        let top = m.layers.iter().copied().max().unwrap_or(0);
        let groups = if ctx.cfg.gradsens.groups.is_empty() {
            LayerGroup::halves(top)
        } else {
            ctx.cfg.gradsens.groups.clone()
        };
        let s = span_summary(&hists, &groups, baseline)?;
        (hists, s, m.model_tag)
    } else {
        let (params, tag) = resolve_encoder(&ctx, &a.source)?;
        let pdir = match &a.probes {
            Some(d) => absolute(d)?,
            None => ctx.path("probes"),
        };
        let probes = load_probes(&pdir)?;
        let test = recipe::corpus(&ctx.cfg, ctx.cfg.probe.n_test, Split::Test, ctx.seed)?;
        let r = recipe::gradsens(&params, &probes, &ctx.cfg, &test.utterances, baseline)?;
        (r.histograms, r.summary, tag.to_string())
    };
    ctx.write("histograms.csv", &histograms_csv(&hists))?;
    ctx.write("summary.csv", &summary_csv(&summary))?;
    ctx.write("surface.csv", &surface_csv(&hists))?;
    let mut groups_csv = String::from("group,min_ms,median_ms,max_ms\n");
    for g in &summary.groups {
        groups_csv.push_str(&format!("{},{:.6},{:.6},{:.6}\n", g.name, g.min, g.median, g.max));
    }
    ctx.write("groups.csv", &groups_csv)?;

    let radius = ctx.cfg.gradsens.display_radius_ms;
    let shown = match radius {
        Some(r) => hists.iter().map(|h| truncate_for_display(h, r)).collect::<tonespan::Result<Vec<_>>>()?,
        None => hists.clone(),
    };
    let cols = radius.map_or(NUM_BINS, |r| (r / 20.0).round() as usize);
    let centers: Vec<f64> = (0..cols).map(bin_center).collect();
    let note = radius.map(|r| format!("renormalized within {r} ms"));
    let series: Vec<(String, Vec<(f64, f64)>)> = shown
        .iter()
        .map(|h| (format!("L{}", h.layer), centers.iter().copied().zip(h.mass.iter().copied()).collect()))
        .collect();
    let plot = LinePlot {
        title: &format!("Gradient energy around tone centers ({tag})"),
        x_label: "|offset| from tone center (ms)",
        y_label: "normalized energy",
        series: series.iter().map(|(n, p)| Series { name: n, points: p }).collect(),
        vlines: Vec::new(),
        hlines: Vec::new(),
        y_range: None,
        note: note.clone(),
    };
    ctx.write("histograms.svg", &plot.render())?;
    let rows: Vec<(String, Vec<f64>)> = shown.iter().map(|h| (format!("L{}", h.layer), h.mass[..cols].to_vec())).collect();
    ctx.write(
        "surface.svg",
        &heatmap(
            &format!("Layer by offset gradient energy ({tag})"),
            "|offset| from tone center (ms)",
            "layer",
            &centers,
            &rows,
            note.as_deref(),
        ),
    )?;
    let span_pts: Vec<(f64, f64)> = summary.layers.iter().map(|l| (l.layer as f64, l.effective_span_ms)).collect();
    let plot = LinePlot {
        title: &format!("Layer-wise effective span ({tag})"),
        x_label: "layer",
        y_label: "effective span (ms)",
        series: vec![Series {
            name: &tag,
            points: &span_pts,
        }],
        vlines: Vec::new(),
        hlines: baseline.map(|b| vec![(b, format!("baseline {b} ms"))]).unwrap_or_default(),
        y_range: None,
        note: None,
    };
    ctx.write("spans.svg", &plot.render())?;
    for g in &summary.groups {
        println!("{} layers: median effective span {:.1} ms", g.name, g.median);
    }
    let details = serde_json::json!({ "model_tag": tag, "groups": summary.groups, "baseline_span_ms": baseline });
    ctx.finish("gradsens", details)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlignJob {
    id: String,
    frame_hop_s: f64,
    logp: Vec<Vec<f64>>,
    tokens: Vec<TonedToken>,
}

#[derive(Debug, Serialize)]
struct AlignOut {
    #[serde(flatten)]
    record: AlignmentRecord,
    tone_segments: Vec<ToneOut>,
}

#[derive(Debug, Serialize)]
struct ToneOut {
    label: String,
    start_s: f64,
    end_s: f64,
    t_c: f64,
}

fn align_one(line_no: usize, line: &str) -> Result<AlignOut> {
    let at = |e: String| CliError::new("invalid_argument", format!("line {line_no}: {e}"));
    let job: AlignJob = serde_json::from_str(line).map_err(|e| at(e.to_string()))?;
    let v = job.logp.first().map_or(0, Vec::len);
    if job.logp.iter().any(|r| r.len() != v) {
        return Err(at("ragged logp rows".into()));
    }
    let flat: Vec<f64> = job.logp.iter().flatten().copied().collect();
    let grid = ndarray::Array2::from_shape_vec((job.logp.len(), v), flat).expect("rectangular");
    let grid = PosteriorGrid::new(grid, job.frame_hop_s).map_err(|e| at(e.to_string()))?;
    let syms: Vec<usize> = job.tokens.iter().map(|t| t.sym).collect();
    let res = align(&grid, &syms).map_err(|e| at(e.to_string()))?;
    let tones = tones_from_tokens(&job.tokens, &res).map_err(|e| at(e.to_string()))?;
    Ok(AlignOut {
        record: AlignmentRecord::new(&job.id, &res),
        tone_segments: tones
            .into_iter()
            .map(|s| ToneOut {
                label: s.label,
                start_s: s.start_s,
                end_s: s.end_s,
                t_c: s.t_c,
            })
            .collect(),
    })
}

fn align_cmd(mut ctx: Ctx, a: &AlignArgs) -> Result<()> {
    let text = fs::read_to_string(absolute(&a.input)?)?;
    let mut out = String::new();
    let mut n = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push_str(&serde_json::to_string(&align_one(i + 1, line)?)?);
        out.push('\n');
        n += 1;
    }
    ctx.write("alignments.jsonl", &out)?;
    println!("aligned {n} utterances");
    ctx.finish("align", serde_json::json!({ "utterances": n }))
}

fn read_pairs(path: &Path, header: &str) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path)?;
    let bad = || CliError::new("invalid_argument", format!("{}: expected header {header}", path.display()));
    let mut lines = text.lines();
    if !lines.next().is_some_and(|h| h.starts_with(header)) {
        return Err(bad());
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut it = l.split(',');
            let x = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            // Column 2 for layer curves; the summary's effective span is column 3.
            let y = if header.starts_with("layer,r_com_ms") { it.nth(1) } else { it.next() };
            let y = y.and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            Ok((x, y))
        })
        .collect()
}

fn report(mut ctx: Ctx, a: &ReportArgs) -> Result<()> {
    let mut curves: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut spans: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut sweeps: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for dir in &a.runs {
        let dir = absolute(dir)?;
        let name = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        if curves.contains_key(&name) || spans.contains_key(&name) || sweeps.contains_key(&name) {
            return Err(CliError::new("invalid_argument", format!("two runs named {name}")));
        }
        let mut found = false;
        if dir.join("layer_curve.csv").exists() {
            curves.insert(name.clone(), read_pairs(&dir.join("layer_curve.csv"), "layer,macro_f1")?);
            found = true;
        }
        if dir.join("summary.csv").exists() {
            spans.insert(name.clone(), read_pairs(&dir.join("summary.csv"), "layer,r_com_ms,effective_span_ms")?);
            found = true;
        }
        if dir.join("spansweep.csv").exists() {
            sweeps.insert(name.clone(), read_pairs(&dir.join("spansweep.csv"), "span_ms,macro_f1")?);
            found = true;
        }
        if !found {
            return Err(CliError::new("missing_input", format!("{}: no layer_curve, summary or spansweep CSV", dir.display())));
        }
    }
    let mut csv = String::from("run,kind,x,y\n");
    for (kind, table) in [("layer_f1", &curves), ("effective_span_ms", &spans), ("sweep_f1", &sweeps)] {
        for (run, pts) in table {
            for (x, y) in pts {
                csv.push_str(&format!("{run},{kind},{x},{y}\n"));
            }
        }
    }
    ctx.write("report.csv", &csv)?;
    let plots = [
        ("report_layer_curves.svg", "Layer-wise probes", "layer", "probe macro-F1", &curves),
        ("report_spans.svg", "Layer-wise effective span", "layer", "effective span (ms)", &spans),
        ("report_spansweep.svg", "Fixed-window sweeps", "analysis span (ms)", "macro-F1", &sweeps),
    ];
    for (file, title, x, y, table) in plots {
        if table.is_empty() {
            continue;
        }
        let plot = LinePlot {
            title,
            x_label: x,
            y_label: y,
            series: table.iter().map(|(n, p)| Series { name: n, points: p }).collect(),
            vlines: Vec::new(),
            hlines: Vec::new(),
            y_range: None,
            note: None,
        };
        ctx.write(file, &plot.render())?;
    }
    println!("collected {} runs", a.runs.len());
    ctx.finish("report", serde_json::json!({ "runs": a.runs.len() }))
}
