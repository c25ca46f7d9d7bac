//! Per-edge propagation-probability models.
//!
//! The decay model gives every edge a base probability `q` and a decay
//! exponent `alpha`; an exposure arriving `tau >= 1` units after the edge's
//! latest activation succeeds with probability `q * tau^(-alpha)`. The static
//! baselines are the `alpha = 0` special case, estimated four different ways.

mod baselines;
mod decay;
mod em;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{EdgeKey, ExampleSet};
use crate::diag::Diagnostics;

pub use baselines::{fit_mle, fit_static_bernoulli, fit_static_pc_bernoulli};
pub use decay::{fit_decay_map, median_latency, optimize_edge, EdgeObjective, EdgeOptimum, OptimizerConfig};
pub use em::{fit_em, run_em, EmConfig, EmRun};

/// Lower and upper clamps applied to `q` during optimization.
pub const Q_MIN: f64 = 1e-6;
pub const Q_MAX: f64 = 1.0 - 1e-6;
/// Upper clamp applied to `alpha` during optimization.
pub const ALPHA_MAX: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum EstimateError {
    #[error("latency {0} is below 1")]
    LatencyOutOfDomain(f64),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown model `{0}` (expected decay, mle, em, static-bernoulli or static-pc-bernoulli)")]
    UnknownModel(String),
}

/// Fitted parameters of one edge. Static models store their probability in
/// `q` with `alpha = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EdgeParams {
    pub q: f64,
    pub alpha: f64,
}

impl EdgeParams {
    pub fn new(q: f64, alpha: f64) -> Self {
        Self { q, alpha }
    }

    pub fn constant(p: f64) -> Self {
        Self { q: p, alpha: 0.0 }
    }

    /// `q * tau^(-alpha)`, assuming `tau >= 1`.
    pub fn probability_at(&self, tau: f64) -> f64 {
        if self.alpha == 0.0 {
            self.q
        } else {
            self.q * tau.powf(-self.alpha)
        }
    }
}

/// Probability that an exposure with latency `tau` is retweeted.
pub fn decay_probability(params: EdgeParams, tau: f64) -> Result<f64, EstimateError> {
    if !(tau >= 1.0) {
        return Err(EstimateError::LatencyOutOfDomain(tau));
    }
    Ok(params.probability_at(tau))
}

/// Prior on the decay exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum AlphaPrior {
    LogNormal { mu: f64, sigma: f64 },
    Flat,
}

/// Beta prior on `q` and a prior on `alpha`. Log densities are kept up to
/// additive constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Priors {
    pub q_a: f64,
    pub q_b: f64,
    pub alpha: AlphaPrior,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            q_a: 1.1,
            q_b: 10.0,
            alpha: AlphaPrior::LogNormal {
                mu: 0.71f64.ln(),
                sigma: 0.7,
            },
        }
    }
}

impl Priors {
    /// Uniform on `q`, flat on `alpha`.
    pub fn flat() -> Self {
        Self {
            q_a: 1.0,
            q_b: 1.0,
            alpha: AlphaPrior::Flat,
        }
    }

    /// Recenters a log-normal alpha prior so its median is `alpha`.
    pub fn centered_on(mut self, alpha: f64) -> Self {
        if let AlphaPrior::LogNormal { sigma, .. } = self.alpha {
            self.alpha = AlphaPrior::LogNormal { mu: alpha.ln(), sigma };
        }
        self
    }

    pub fn validate(&self) -> Result<(), EstimateError> {
        if !(self.q_a > 0.0 && self.q_b > 0.0) {
            return Err(EstimateError::InvalidPrior(format!(
                "beta parameters must be positive, got ({}, {})",
                self.q_a, self.q_b
            )));
        }
        if let AlphaPrior::LogNormal { mu, sigma } = self.alpha {
            if !(sigma > 0.0 && mu.is_finite()) {
                return Err(EstimateError::InvalidPrior(format!("log-normal needs sigma > 0, got {sigma}")));
            }
        }
        Ok(())
    }

    pub fn ln_q(&self, q: f64) -> f64 {
        (self.q_a - 1.0) * q.ln() + (self.q_b - 1.0) * (1.0 - q).ln()
    }

    pub fn d_ln_q(&self, q: f64) -> (f64, f64) {
        let (a1, b1) = (self.q_a - 1.0, self.q_b - 1.0);
        (a1 / q - b1 / (1.0 - q), -a1 / (q * q) - b1 / ((1.0 - q) * (1.0 - q)))
    }

    pub fn ln_alpha(&self, alpha: f64) -> f64 {
        match self.alpha {
            AlphaPrior::Flat => 0.0,
            AlphaPrior::LogNormal { mu, sigma } => {
                if alpha <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    let z = (alpha.ln() - mu) / sigma;
                    -alpha.ln() - 0.5 * z * z
                }
            }
        }
    }

    pub fn d_ln_alpha(&self, alpha: f64) -> (f64, f64) {
        match self.alpha {
            AlphaPrior::Flat => (0.0, 0.0),
            AlphaPrior::LogNormal { mu, sigma } => {
                let s2 = sigma * sigma;
                let l = alpha.ln() - mu;
                let grad = -1.0 / alpha - l / (s2 * alpha);
                let hess = 1.0 / (alpha * alpha) - (1.0 - l) / (s2 * alpha * alpha);
                (grad, hess)
            }
        }
    }

    /// The joint prior mode, clamped into the optimization box.
    pub fn mode(&self) -> EdgeParams {
        let (a, b) = (self.q_a, self.q_b);
        let q = if a > 1.0 && b > 1.0 {
            (a - 1.0) / (a + b - 2.0)
        } else if a == b {
            0.5
        } else if a < b {
            Q_MIN
        } else {
            Q_MAX
        };
        let alpha = match self.alpha {
            AlphaPrior::Flat => 0.0,
            AlphaPrior::LogNormal { mu, sigma } => (mu - sigma * sigma).exp(),
        };
        EdgeParams::new(q.clamp(Q_MIN, Q_MAX), alpha.min(ALPHA_MAX))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Decay,
    Mle,
    Em,
    StaticBernoulli,
    StaticPcBernoulli,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Decay,
        ModelKind::Mle,
        ModelKind::Em,
        ModelKind::StaticBernoulli,
        ModelKind::StaticPcBernoulli,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Decay => "decay",
            ModelKind::Mle => "mle",
            ModelKind::Em => "em",
            ModelKind::StaticBernoulli => "static-bernoulli",
            ModelKind::StaticPcBernoulli => "static-pc-bernoulli",
        }
    }

    pub fn is_static(self) -> bool {
        self != ModelKind::Decay
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = EstimateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| EstimateError::UnknownModel(s.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub objective: f64,
    /// Edges whose optimizer (or the EM loop) stopped at its iteration cap.
    pub nonconverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FittedModel {
    pub kind: ModelKind,
    pub edges: BTreeMap<EdgeKey, EdgeParams>,
    /// Parameters for edges not seen in training.
    pub fallback: EdgeParams,
    /// Latency used when an example's latency is undefined.
    pub tau_fallback: f64,
    pub diagnostics: FitDiagnostics,
}

impl FittedModel {
    pub fn params(&self, edge: &EdgeKey) -> EdgeParams {
        self.edges.get(edge).copied().unwrap_or(self.fallback)
    }

    /// Predicted retweet probability. Static models ignore `tau`; undefined
    /// latency falls back to `tau_fallback`.
    pub fn predict(&self, edge: &EdgeKey, tau: Option<f64>) -> f64 {
        let tau = tau.unwrap_or(self.tau_fallback).max(1.0);
        self.params(edge).probability_at(tau).clamp(0.0, 1.0)
    }

    /// Writes the `edge_id,q,alpha` table.
    pub fn write_table<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "edge_id,q,alpha")?;
        for (edge, p) in &self.edges {
            writeln!(w, "{edge},{},{}", p.q, p.alpha)?;
        }
        Ok(())
    }
}

/// Everything the fitting routines can be tuned with.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FitConfig {
    pub priors: Priors,
    pub optimizer: OptimizerConfig,
    pub em: EmConfig,
    /// Overrides the median-latency fallback for undefined latencies.
    pub tau_fallback: Option<f64>,
}

/// Fits one model kind on a training set.
pub fn fit_model(
    kind: ModelKind,
    train: &ExampleSet,
    config: &FitConfig,
    diag: &mut Diagnostics,
) -> Result<FittedModel, EstimateError> {
    let mut model = match kind {
        ModelKind::Decay => fit_decay_map(train, &config.priors, &config.optimizer, config.tau_fallback, diag)?,
        ModelKind::Mle => fit_mle(train),
        ModelKind::Em => fit_em(train, &config.em, diag)?,
        ModelKind::StaticBernoulli => fit_static_bernoulli(train),
        ModelKind::StaticPcBernoulli => fit_static_pc_bernoulli(train),
    };
    if kind.is_static() {
        model.tau_fallback = config.tau_fallback.unwrap_or_else(|| median_latency(train));
    }
    Ok(model)
}
