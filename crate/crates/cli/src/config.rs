//! Run settings: flags override the TOML config file, which overrides the
//! built-in defaults. The resolved settings are hashed into every artifact
//! header.

use std::path::Path;

use anyhow::{bail, Context, Result};
use cascadecay::estimators::{AlphaPrior, Priors};
use cascadecay::evaluation::PhaseSpec;
use cascadecay::experiment::default_ratios;
use cascadecay::scaling::LogBinning;
use cascadecay::synthgen::{ExposureProcess, SynthConfig};
use cascadecay::ModelKind;
use clap::Args;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::UsageError;

/// Tunable knobs, shared by the command line and the config file.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Knobs {
    /// RNG seed; required by `synth` and `im`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seconds per latency unit.
    #[arg(long)]
    pub time_unit: Option<f64>,
    /// Comma-separated training ratios in (0, 1).
    #[arg(long)]
    pub ratio: Option<String>,
    /// Comma-separated models: decay, mle, em, static-bernoulli, static-pc-bernoulli.
    #[arg(long)]
    pub models: Option<String>,
    /// Seed set size; required by `im`.
    #[arg(long)]
    pub k: Option<usize>,
    /// Monte Carlo replicas per spread estimate.
    #[arg(long)]
    pub mc_runs: Option<u64>,
    /// Ratio between consecutive log-bin edges.
    #[arg(long)]
    pub bins_base: Option<f64>,
    /// Bins with fewer examples are left out of ratio curves.
    #[arg(long)]
    pub min_count: Option<usize>,
    /// Beta prior on q as `A,B`.
    #[arg(long)]
    pub prior_q: Option<String>,
    /// Prior on alpha: `MEDIAN,SIGMA` (log-normal), `auto`, or `flat`.
    #[arg(long)]
    pub prior_alpha: Option<String>,
    /// Chronological phases as `TRAIN_DAYS,EVAL_DAYS`.
    #[arg(long)]
    pub window: Option<String>,
    /// Chronological group used by `im`, counted from 0.
    #[arg(long)]
    pub group: Option<usize>,
    /// Synthetic users.
    #[arg(long)]
    pub n_users: Option<usize>,
    /// Synthetic follow edges.
    #[arg(long)]
    pub n_edges: Option<usize>,
    /// Cap on synthetic exposures per edge.
    #[arg(long)]
    pub exposures: Option<usize>,
    /// Synthetic exposure process: `heavy-tailed:EXPONENT` or `poisson:RATE_PER_HOUR`.
    #[arg(long)]
    pub process: Option<String>,
    /// Synthetic horizon in weeks.
    #[arg(long)]
    pub horizon_weeks: Option<u32>,
}

impl Knobs {
    /// Fills every unset field from `fallback`.
    fn or(self, fallback: Knobs) -> Knobs {
        macro_rules! pick {
            ($($f:ident),*) => { Knobs { $($f: self.$f.or(fallback.$f)),* } };
        }
        pick!(
            seed,
            time_unit,
            ratio,
            models,
            k,
            mc_runs,
            bins_base,
            min_count,
            prior_q,
            prior_alpha,
            window,
            group,
            n_users,
            n_edges,
            exposures,
            process,
            horizon_weeks
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlphaSetting {
    /// Centered on the global scaling slope of the training data.
    Auto,
    Flat,
    LogNormal { median: f64, sigma: f64 },
}

/// Fully resolved settings of one run.
#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub command: &'static str,
    pub seed: Option<u64>,
    /// `None` keeps the time unit stored with the examples.
    pub time_unit: Option<f64>,
    pub ratios: Vec<f64>,
    pub models: Vec<ModelKind>,
    pub k: Option<usize>,
    pub mc_runs: u64,
    pub bins: LogBinning,
    pub prior_q: (f64, f64),
    pub prior_alpha: AlphaSetting,
    pub phases: PhaseSpec,
    pub group: usize,
    pub synth: SynthConfig,
}

impl Settings {
    pub fn resolve(command: &'static str, flags: Knobs, config: Option<&Path>) -> Result<Self> {
        let file = match config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read config file {}", path.display()))?;
                toml::from_str::<Knobs>(&text)
                    .map_err(|e| UsageError(format!("invalid config file {}: {e}", path.display())))?
            }
            None => Knobs::default(),
        };
        let k = flags.or(file);

        let time_unit = k.time_unit;
        if let Some(u) = time_unit {
            if !(u > 0.0 && u.is_finite()) {
                return Err(usage(format!("--time-unit must be positive, got {u}")));
            }
        }
        let ratios = match &k.ratio {
            Some(s) => parse_list::<f64>(s, "--ratio")?,
            None => default_ratios(),
        };
        if let Some(r) = ratios.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return Err(usage(format!("training ratio {r} is outside (0, 1)")));
        }
        let models = match &k.models {
            Some(s) => {
                let mut v = Vec::new();
                for name in s.split(',') {
                    let m: ModelKind = name.parse().map_err(|e| usage(format!("--models: {e}")))?;
                    if !v.contains(&m) {
                        v.push(m);
                    }
                }
                v
            }
            None => ModelKind::ALL.to_vec(),
        };
        let defaults = LogBinning::default();
        let bins = LogBinning::new(
            k.bins_base.unwrap_or(defaults.base),
            k.min_count.unwrap_or(defaults.min_count),
        )
        .map_err(|e| usage(e.to_string()))?;
        let prior_q = match &k.prior_q {
            Some(s) => pair(s, "--prior-q")?,
            None => {
                let p = Priors::default();
                (p.q_a, p.q_b)
            }
        };
        let prior_alpha = match k.prior_alpha.as_deref().map(str::trim) {
            None => AlphaSetting::LogNormal {
                median: 0.71,
                sigma: 0.7,
            },
            Some("auto") => AlphaSetting::Auto,
            Some("flat") => AlphaSetting::Flat,
            Some(s) => {
                let (median, sigma) = pair(s, "--prior-alpha")?;
                AlphaSetting::LogNormal { median, sigma }
            }
        };
        let phases = match &k.window {
            Some(s) => {
                let (train_days, eval_days) = pair::<u32>(s, "--window")?;
                PhaseSpec {
                    train_days,
                    eval_days,
                    ..PhaseSpec::default()
                }
            }
            None => PhaseSpec::default(),
        };
        phases.validate().map_err(|e| usage(e.to_string()))?;
        if k.k == Some(0) {
            return Err(usage("--k must be at least 1".into()));
        }
        if k.mc_runs == Some(0) {
            return Err(usage("--mc-runs must be at least 1".into()));
        }

        let mut synth = SynthConfig {
            seed: k.seed.unwrap_or(0),
            ..SynthConfig::default()
        };
        if let Some(n) = k.n_users {
            synth.n_users = n;
        }
        if let Some(n) = k.n_edges {
            synth.n_edges = n;
        }
        if k.exposures.is_some() {
            synth.max_exposures = k.exposures;
        }
        if let Some(w) = k.horizon_weeks {
            synth.horizon = i64::from(w) * 7 * 86_400;
        }
        if let Some(u) = time_unit {
            synth.time_unit = u;
        }
        if let Some(p) = &k.process {
            synth.process = parse_process(p)?;
        }
        synth.validate().map_err(|e| usage(e.to_string()))?;

        let settings = Self {
            command,
            seed: k.seed,
            time_unit,
            ratios,
            models,
            k: k.k,
            mc_runs: k.mc_runs.unwrap_or(10_000),
            bins,
            prior_q,
            prior_alpha,
            phases,
            group: k.group.unwrap_or(0),
            synth,
        };
        settings.base_priors().validate().map_err(|e| usage(e.to_string()))?;
        Ok(settings)
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| usage(format!("`{}` needs --seed (or `seed` in the config file)", self.command)))
    }

    pub fn require_k(&self) -> Result<usize> {
        self.k
            .ok_or_else(|| usage(format!("`{}` needs --k (or `k` in the config file)", self.command)))
    }

    /// Priors with an `auto` alpha prior left at its default center.
    pub fn base_priors(&self) -> Priors {
        let mut p = Priors {
            q_a: self.prior_q.0,
            q_b: self.prior_q.1,
            ..Priors::default()
        };
        match self.prior_alpha {
            AlphaSetting::Auto => {}
            AlphaSetting::Flat => p.alpha = AlphaPrior::Flat,
            AlphaSetting::LogNormal { median, sigma } => {
                p.alpha = AlphaPrior::LogNormal {
                    mu: median.ln(),
                    sigma,
                }
            }
        }
        p
    }

    /// Hex SHA-256 of the resolved settings.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("settings serialize");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn usage(msg: String) -> anyhow::Error {
    UsageError(msg).into()
}

fn parse_list<T: std::str::FromStr>(s: &str, flag: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| usage(format!("{flag}: cannot parse `{p}`"))))
        .collect()
}

fn pair<T: std::str::FromStr + Copy>(s: &str, flag: &str) -> Result<(T, T)> {
    match parse_list::<T>(s, flag)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(usage(format!("{flag} expects two comma-separated values, got `{s}`"))),
    }
}

fn parse_process(s: &str) -> Result<ExposureProcess> {
    let (kind, value) = s.split_once(':').unwrap_or((s, ""));
    let value: Option<f64> = if value.is_empty() {
        None
    } else {
        Some(value.parse().map_err(|_| usage(format!("--process: cannot parse `{value}`")))?)
    };
    match kind {
        "heavy-tailed" => Ok(ExposureProcess::HeavyTailed {
            exponent: value.unwrap_or(1.5),
            min_gap: 60.0,
        }),
        "poisson" => Ok(ExposureProcess::Poisson {
            rate: value.unwrap_or(1.0) / 3600.0,
        }),
        other => bail!(UsageError(format!("--process: unknown process `{other}`"))),
    }
}
