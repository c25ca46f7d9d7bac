mod artifacts;
mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use cascadecay::corpus::{
    compute_latencies, extract_examples, ingest_follow_graph, ingest_message_events, load_examples, save_examples,
    write_follow_graph, write_message_events, ExtractConfig,
};
use cascadecay::estimators::{fit_model, FitConfig, Priors};
use cascadecay::evaluation::next_one_split;
use cascadecay::experiment::{evaluate_models, viral_marketing, ImConfig};
use cascadecay::scaling::{fit_curve, latency_histogram, propagation_ratio_curve, FitRange, LabelFilter};
use cascadecay::synthgen::{draw_ground_truth, generate_event_log, generate_examples, generate_graph};
use cascadecay::{Diagnostics, ExampleSet, ModelKind};
use clap::{Parser, Subcommand, ValueEnum};

use artifacts::{read_csv, Artifacts};
use config::{AlphaSetting, Knobs, Settings};

/// Bad flags or settings; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "cascadecay", version, about = "Time-decaying propagation probabilities on follow graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Run {
    /// TOML file with default knob values; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    knobs: Knobs,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthFormat {
    /// A labelled example file plus ground truth.
    Examples,
    /// A follow graph and a simulated event log plus ground truth.
    Events,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and normalize a follow graph and a message event log.
    Ingest {
        /// Follow graph, `followee<TAB>follower` per line.
        #[arg(long)]
        input: PathBuf,
        /// Events, `user<TAB>message<TAB>timestamp<TAB>post|retweet[<TAB>source]` per line.
        #[arg(long)]
        events: PathBuf,
        #[command(flatten)]
        run: Run,
    },
    /// Turn `graph.tsv` and `events.tsv` in a directory into labelled examples.
    Extract {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        run: Run,
    },
    /// Latency histograms, the propagation-ratio curve and its power-law fit.
    Analyze {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        run: Run,
    },
    /// Fit models on an example file and dump their parameters.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        run: Run,
    },
    /// Perplexity, ROC and AUC of every model at every training ratio.
    Evaluate {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        run: Run,
    },
    /// Seed selection per model, scored by pseudo-actual spread.
    Im {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        run: Run,
    },
    /// Generate a synthetic corpus with known parameters.
    Synth {
        #[arg(long, value_enum, default_value = "examples")]
        format: SynthFormat,
        #[command(flatten)]
        run: Run,
    },
    /// Summarize `metrics.csv` and `spread.csv` from an artifact directory.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        run: Run,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|_| dispatch(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("CASCADECAY_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| UsageError(format!("CASCADECAY_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("cannot configure the worker pool")
}

fn dispatch(command: Command) -> Result<()> {
    let mut diag = Diagnostics::new();
    let result = match command {
        Command::Ingest { input, events, run } => {
            ingest(&input, &events, &prepare("ingest", &run, &[&input, &events])?, &mut diag)
        }
        Command::Extract { input, run } => {
            let graph = input.join("graph.tsv");
            let events = input.join("events.tsv");
            extract(&graph, &events, &prepare("extract", &run, &[&graph, &events])?, &mut diag)
        }
        Command::Analyze { input, run } => analyze(&input, &prepare("analyze", &run, &[&input])?, &mut diag),
        Command::Fit { input, run } => fit(&input, &prepare("fit", &run, &[&input])?, &mut diag),
        Command::Evaluate { input, run } => evaluate(&input, &prepare("evaluate", &run, &[&input])?, &mut diag),
        Command::Im { input, run } => im(&input, &prepare("im", &run, &[&input])?, &mut diag),
        Command::Synth { format, run } => synth(format, &prepare("synth", &run, &[])?, &mut diag),
        Command::Report { input, run } => report(&input, &prepare("report", &run, &[&input])?),
    };
    for d in diag.records() {
        eprintln!("{}", serde_json::to_string(d).expect("diagnostic serializes"));
    }
    result
}

struct Prepared {
    settings: Settings,
    out: Artifacts,
}

/// Resolves settings and checks every input path before any work starts.
fn prepare(command: &'static str, run: &Run, inputs: &[&Path]) -> Result<Prepared> {
    let settings = Settings::resolve(command, run.knobs.clone(), run.config.as_deref())?;
    for path in inputs {
        if !path.exists() {
            anyhow::bail!("input {} does not exist", path.display());
        }
    }
    let out = Artifacts::create(&run.out, &settings.hash())?;
    Ok(Prepared { settings, out })
}

fn load(path: &Path, settings: &Settings) -> Result<ExampleSet> {
    let set = load_examples(artifacts::open(path)?).with_context(|| format!("cannot load {}", path.display()))?;
    match settings.time_unit {
        Some(unit) if unit != set.time_unit() => Ok(compute_latencies(&set, unit)?),
        _ => Ok(set),
    }
}

fn ingest(graph_path: &Path, events_path: &Path, ctx: &Prepared, diag: &mut Diagnostics) -> Result<()> {
    let graph = ingest_follow_graph(artifacts::open(graph_path)?, diag)
        .with_context(|| format!("cannot ingest {}", graph_path.display()))?;
    let log = ingest_message_events(artifacts::open(events_path)?, diag)
        .with_context(|| format!("cannot ingest {}", events_path.display()))?;
    ctx.out.write("graph.tsv", |w| write_follow_graph(graph.edges(), w))?;
    ctx.out.write("events.tsv", |w| write_message_events(log.events(), w))?;
    ctx.out.write("ingest_summary.csv", |w| {
        writeln!(w, "key,value")?;
        writeln!(w, "edges,{}", graph.len())?;
        writeln!(w, "events,{}", log.len())?;
        writeln!(w, "warnings,{}", diag.records().len())
    })
}

fn extract(graph_path: &Path, events_path: &Path, ctx: &Prepared, diag: &mut Diagnostics) -> Result<()> {
    let graph = ingest_follow_graph(artifacts::open(graph_path)?, diag)
        .with_context(|| format!("cannot ingest {}", graph_path.display()))?;
    let log = ingest_message_events(artifacts::open(events_path)?, diag)
        .with_context(|| format!("cannot ingest {}", events_path.display()))?;
    let raw = extract_examples(&graph, &log, &ExtractConfig::default(), diag);
    let unit = ctx.settings.time_unit.unwrap_or(cascadecay::corpus::DEFAULT_TIME_UNIT);
    let set = compute_latencies(&raw, unit)?;
    ctx.out
        .write("examples.tsv", |w| save_examples(&set, w).map_err(std::io::Error::other))?;
    ctx.out.write("extract_summary.csv", |w| {
        writeln!(w, "key,value")?;
        writeln!(w, "edges,{}", set.num_edges())?;
        writeln!(w, "examples,{}", set.len())?;
        writeln!(w, "positives,{}", set.positives())
    })
}

fn analyze(input: &Path, ctx: &Prepared, diag: &mut Diagnostics) -> Result<()> {
    let set = load(input, &ctx.settings)?;
    let bins = ctx.settings.bins;
    for (name, filter) in [("latency_positive.csv", LabelFilter::PositivesOnly), ("latency_all.csv", LabelFilter::All)] {
        let hist = latency_histogram(&set, bins, filter)?;
        ctx.out.write(name, |w| {
            writeln!(w, "latency,density,count")?;
            for p in &hist {
                writeln!(w, "{},{},{}", p.center, p.value, p.n)?;
            }
            Ok(())
        })?;
    }
    let curve = propagation_ratio_curve(&set, bins)?;
    ctx.out.write("propagation_ratio.csv", |w| {
        writeln!(w, "latency,ratio,count")?;
        for p in &curve {
            writeln!(w, "{},{},{}", p.center, p.value, p.n)?;
        }
        Ok(())
    })?;
    let fit = fit_curve(&curve, FitRange::default(), diag)?;
    ctx.out.write("scaling_fit.csv", |w| {
        writeln!(w, "slope,intercept,r_squared,n_points")?;
        writeln!(w, "{},{},{},{}", fit.slope, fit.intercept, fit.r_squared, fit.n_points)
    })
}

/// Priors for fitting on `train`; an `auto` alpha prior is centered on the
/// negated slope of the training data's propagation-ratio curve.
fn priors_for(settings: &Settings, train: &ExampleSet, diag: &mut Diagnostics) -> Priors {
    let base = settings.base_priors();
    if settings.prior_alpha != AlphaSetting::Auto {
        return base;
    }
    let mut local = Diagnostics::new();
    let slope = propagation_ratio_curve(train, settings.bins)
        .ok()
        .and_then(|c| fit_curve(&c, FitRange::default(), &mut local).ok())
        .map(|f| -f.slope);
    match slope {
        Some(a) if a > 0.0 && a.is_finite() => base.centered_on(a),
        _ => {
            diag.warn("cli", "auto_prior_unavailable", "no usable scaling slope; keeping the default alpha prior");
            base
        }
    }
}

fn fit_config(settings: &Settings, train: &ExampleSet, diag: &mut Diagnostics) -> FitConfig {
    FitConfig {
        priors: priors_for(settings, train, diag),
        ..FitConfig::default()
    }
}

fn fit(input: &Path, ctx: &Prepared, diag: &mut Diagnostics) -> Result<()> {
    let set = load(input, &ctx.settings)?;
    let config = fit_config(&ctx.settings, &set, diag);
    let mut summary = Vec::new();
    for &kind in &ctx.settings.models {
        let model = fit_model(kind, &set, &config, diag)?;
        ctx.out.write(&format!("model_{kind}.csv"), |w| model.write_table(w))?;
        summary.push(model);
    }
    ctx.out.write("fit_summary.csv", |w| {
        writeln!(w, "model,edges,iterations,objective,nonconverged,fallback_q,fallback_alpha,tau_fallback")?;
        for m in &summary {
            let d = &m.diagnostics;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                m.kind,
                m.edges.len(),
                d.iterations,
                d.objective,
                d.nonconverged,
                m.fallback.q,
                m.fallback.alpha,
                m.tau_fallback
            )?;
        }
        Ok(())
    })
}

fn evaluate(input: &Path, ctx: &Prepared, diag: &mut Diagnostics) -> Result<()> {
    let set = load(input, &ctx.settings)?;
    let mut rows = Vec::new();
    for &ratio in &ctx.settings.ratios {
        let (train, _) = next_one_split(&set, ratio)?;
        let config = fit_config(&ctx.settings, &train, diag);
        rows.extend(evaluate_models(&set, &[ratio], &ctx.settings.models, &config, diag)?);
    }
    for r in &rows {
        ctx.out
            .write(&format!("roc_{}_{}.csv", r.model, r.ratio), |w| r.roc.write_csv(w))?;
    }
    ctx.out.write("metrics.csv", |w| {
        writeln!(w, "model,metric,value")?;
        for r in &rows {
            writeln!(w, "{},auc@{},{}", r.model, r.ratio, r.auc)?;
            writeln!(w, "{},perplexity@{},{}", r.model, r.ratio, r.perplexity)?;
            writeln!(w, "{},n_test@{},{}", r.model, r.ratio, r.n_test)?;
        }
        Ok(())
    })
}

fn im(input: &Path, ctx: &Prepared, diag: &mut Diagnostics) -> Result<()> {
    let s = &ctx.settings;
    let im = ImConfig {
        k: s.require_k()?,
        mc_runs: s.mc_runs,
        seed: s.require_seed()?,
        phases: s.phases,
        group: s.group,
    };
    let set = load(input, s)?;
    let config = fit_config(s, &set, diag);
    let outcomes = viral_marketing(&set, &s.models, &im, &config, diag)?;
    for o in &outcomes {
        ctx.out.write(&format!("seeds_{}.csv", o.model), |w| o.seeds.write_csv(w))?;
    }
    ctx.out.write("spread.csv", |w| {
        writeln!(w, "model,seed_size,pseudo_actual_spread")?;
        for o in &outcomes {
            for (i, spread) in o.spreads.iter().enumerate() {
                writeln!(w, "{},{},{spread}", o.model, i + 1)?;
            }
        }
        Ok(())
    })
}

fn synth(format: SynthFormat, ctx: &Prepared, _diag: &mut Diagnostics) -> Result<()> {
    let mut config = ctx.settings.synth.clone();
    config.seed = ctx.settings.require_seed()?;
    let graph = generate_graph(&config)?;
    let truth = draw_ground_truth(&graph, &config);
    match format {
        SynthFormat::Examples => {
            let (set, truth) = generate_examples(&graph, &truth, &config)?;
            ctx.out
                .write("examples.tsv", |w| save_examples(&set, w).map_err(std::io::Error::other))?;
            ctx.out.write("truth.csv", |w| truth.write_csv(w))
        }
        SynthFormat::Events => {
            let sim = generate_event_log(&graph, &truth, &config)?;
            ctx.out.write("graph.tsv", |w| write_follow_graph(graph.edges(), w))?;
            ctx.out.write("events.tsv", |w| write_message_events(&sim.events, w))?;
            ctx.out.write("truth.csv", |w| truth.write_csv(w))
        }
    }
}

#[derive(Default)]
struct SummaryRow {
    auc: Option<String>,
    perplexity: Option<String>,
    spread: Option<(usize, String)>,
}

/// One row per model: AUC and perplexity at the largest training ratio, and
/// the spread of the largest seed set.
fn report(input: &Path, ctx: &Prepared) -> Result<()> {
    let metrics_path = input.join("metrics.csv");
    let spread_path = input.join("spread.csv");
    let missing: Vec<String> = [&metrics_path, &spread_path]
        .iter()
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        anyhow::bail!("missing artifacts: {}", missing.join(", "));
    }

    let mut rows: BTreeMap<ModelKind, SummaryRow> = BTreeMap::new();
    let (_, metrics) = read_csv(&metrics_path)?;
    let ratio_of = |metric: &str| metric.split_once('@').and_then(|(_, r)| r.parse::<f64>().ok());
    let top_ratio = metrics
        .iter()
        .filter_map(|r| r.get(1).and_then(|m| ratio_of(m)))
        .fold(f64::NEG_INFINITY, f64::max);
    for r in &metrics {
        let [model, metric, value] = r.as_slice() else {
            anyhow::bail!("malformed row in {}: {}", metrics_path.display(), r.join(","));
        };
        let kind: ModelKind = model.parse()?;
        if ratio_of(metric) != Some(top_ratio) {
            continue;
        }
        let row = rows.entry(kind).or_default();
        match metric.split_once('@').map(|(m, _)| m) {
            Some("auc") => row.auc = Some(value.clone()),
            Some("perplexity") => row.perplexity = Some(value.clone()),
            _ => {}
        }
    }
    let (_, spreads) = read_csv(&spread_path)?;
    for r in &spreads {
        let [model, size, value] = r.as_slice() else {
            anyhow::bail!("malformed row in {}: {}", spread_path.display(), r.join(","));
        };
        let kind: ModelKind = model.parse()?;
        let size: usize = size.parse().with_context(|| format!("bad seed size in {}", spread_path.display()))?;
        let row = rows.entry(kind).or_default();
        if row.spread.as_ref().is_none_or(|(s, _)| size > *s) {
            row.spread = Some((size, value.clone()));
        }
    }

    let cell = |v: &Option<String>| v.clone().unwrap_or_default();
    let table: Vec<[String; 4]> = rows
        .iter()
        .map(|(kind, r)| {
            [
                kind.to_string(),
                cell(&r.auc),
                cell(&r.perplexity),
                cell(&r.spread.as_ref().map(|s| s.1.clone())),
            ]
        })
        .collect();
    let columns = ["model", "auc", "perplexity", "spread"];
    ctx.out.write("summary.csv", |w| {
        writeln!(w, "{}", columns.join(","))?;
        for row in &table {
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    })?;
    ctx.out.write("summary.txt", |w| {
        let widths: Vec<usize> = (0..4)
            .map(|c| table.iter().map(|r| r[c].len()).chain([columns[c].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: &[&str]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        writeln!(w, "training ratio {top_ratio}")?;
        writeln!(w, "{}", line(&columns).trim_end())?;
        for row in &table {
            let cells: Vec<&str> = row.iter().map(String::as_str).collect();
            writeln!(w, "{}", line(&cells).trim_end())?;
        }
        Ok(())
    })
}
