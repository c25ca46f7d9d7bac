//! MAP fitting of the per-edge decay model.
//!
//! Each edge's log posterior
//!
//! ```text
//! sum_k [ d_k ln(q tau_k^-alpha) + (1 - d_k) ln(1 - q tau_k^-alpha) ] + ln p(q) + ln p(alpha)
//! ```
//!
//! is maximized over the box `[Q_MIN, Q_MAX] x [0, ALPHA_MAX]`: a coarse grid
//! picks the start, then damped Newton steps with backtracking climb to the
//! optimum. Edges are independent and fitted in parallel.

use rayon::prelude::*;
use serde::Serialize;

use super::{EdgeParams, EstimateError, FitDiagnostics, FittedModel, ModelKind, Priors, ALPHA_MAX, Q_MAX, Q_MIN};
use crate::corpus::{EdgeKey, Example, ExampleSet};
use crate::diag::Diagnostics;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizerConfig {
    /// Stop once an accepted step improves the objective by less than this.
    pub tolerance: f64,
    pub max_iter: usize,
    /// Pins alpha and optimizes `q` alone.
    pub fixed_alpha: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iter: 200,
            fixed_alpha: None,
        }
    }
}

/// Sufficient statistics of one edge's likelihood plus the priors.
///
/// Positives only enter through their count and summed `ln tau`; negatives
/// are kept as run-length encoded `ln tau` values.
#[derive(Debug, Clone)]
pub struct EdgeObjective {
    n_pos: f64,
    sum_ln_tau_pos: f64,
    negatives: Vec<(f64, f64)>,
    priors: Priors,
}

impl EdgeObjective {
    /// Builds the objective from `(tau, label)` pairs; each `tau` must be `>= 1`.
    pub fn new<I: IntoIterator<Item = (f64, bool)>>(samples: I, priors: Priors) -> Self {
        let mut n_pos = 0.0;
        let mut sum_ln_tau_pos = 0.0;
        let mut neg: Vec<f64> = Vec::new();
        for (tau, label) in samples {
            let l = tau.max(1.0).ln();
            if label {
                n_pos += 1.0;
                sum_ln_tau_pos += l;
            } else {
                neg.push(l);
            }
        }
        neg.sort_by(f64::total_cmp);
        let mut negatives: Vec<(f64, f64)> = Vec::new();
        for l in neg {
            match negatives.last_mut() {
                Some((v, c)) if *v == l => *c += 1.0,
                _ => negatives.push((l, 1.0)),
            }
        }
        Self {
            n_pos,
            sum_ln_tau_pos,
            negatives,
            priors,
        }
    }

    fn from_examples<'a>(examples: impl IntoIterator<Item = &'a Example>, tau_fallback: f64, priors: Priors) -> Self {
        Self::new(
            examples.into_iter().map(|e| (e.latency.unwrap_or(tau_fallback), e.label)),
            priors,
        )
    }

    pub fn n_examples(&self) -> usize {
        (self.n_pos + self.negatives.iter().map(|n| n.1).sum::<f64>()) as usize
    }

    /// Log posterior up to an additive constant.
    pub fn value(&self, q: f64, alpha: f64) -> f64 {
        let mut v = self.n_pos * q.ln() - alpha * self.sum_ln_tau_pos;
        for &(l, c) in &self.negatives {
            v += c * (-q * (-alpha * l).exp()).ln_1p();
        }
        v + self.priors.ln_q(q) + self.priors.ln_alpha(alpha)
    }

    /// Gradient `(d/dq, d/dalpha)`.
    pub fn gradient(&self, q: f64, alpha: f64) -> [f64; 2] {
        let (pq, _) = self.priors.d_ln_q(q);
        let (pa, _) = self.priors.d_ln_alpha(alpha);
        let mut gq = self.n_pos / q + pq;
        let mut ga = -self.sum_ln_tau_pos + pa;
        for &(l, c) in &self.negatives {
            let g = (-alpha * l).exp();
            let p = q * g;
            gq -= c * g / (1.0 - p);
            ga += c * p * l / (1.0 - p);
        }
        [gq, ga]
    }

    /// Hessian `[[qq, qa], [qa, aa]]`.
    pub fn hessian(&self, q: f64, alpha: f64) -> [[f64; 2]; 2] {
        let (_, pq) = self.priors.d_ln_q(q);
        let (_, pa) = self.priors.d_ln_alpha(alpha);
        let mut hqq = -self.n_pos / (q * q) + pq;
        let mut haa = pa;
        let mut hqa = 0.0;
        for &(l, c) in &self.negatives {
            let g = (-alpha * l).exp();
            let p = q * g;
            let d2 = (1.0 - p) * (1.0 - p);
            hqq -= c * g * g / d2;
            haa -= c * p * l * l / d2;
            hqa += c * g * l / d2;
        }
        [[hqq, hqa], [hqa, haa]]
    }
}

/// Result of optimizing one edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeOptimum {
    pub params: EdgeParams,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after the grid start and after every accepted step.
    pub trajectory: Vec<f64>,
}

fn grid_q() -> impl Iterator<Item = f64> {
    (0..=14).map(|i| 0.01 + 0.07 * i as f64)
}

fn grid_alpha() -> impl Iterator<Item = f64> {
    (0..=12).map(|j| 0.25 * j as f64)
}

fn project(q: f64, alpha: f64, fixed_alpha: Option<f64>) -> (f64, f64) {
    (
        q.clamp(Q_MIN, Q_MAX),
        fixed_alpha.unwrap_or_else(|| alpha.clamp(0.0, ALPHA_MAX)),
    )
}

/// Maximizes one edge's objective. The returned point is never worse than
/// the prior mode.
pub fn optimize_edge(obj: &EdgeObjective, config: &OptimizerConfig) -> EdgeOptimum {
    let fixed = config.fixed_alpha;
    let mode = obj.priors.mode();
    let mode = project(mode.q, mode.alpha, fixed);

    let alphas: Vec<f64> = match fixed {
        Some(a) => vec![a],
        None => grid_alpha().collect(),
    };
    let mut best = (mode.0, mode.1, obj.value(mode.0, mode.1));
    for q in grid_q() {
        for &a in &alphas {
            let v = obj.value(q, a);
            if v > best.2 {
                best = (q, a, v);
            }
        }
    }

    let (mut q, mut a, mut f) = best;
    let mut trajectory = vec![f];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let g = obj.gradient(q, a);
        let h = obj.hessian(q, a);
        let g = [g[0], if fixed.is_some() { 0.0 } else { g[1] }];

        let mut directions = Vec::with_capacity(2);
        if fixed.is_some() {
            if h[0][0] < 0.0 {
                directions.push([-g[0] / h[0][0], 0.0]);
            }
        } else {
            let det = h[0][0] * h[1][1] - h[0][1] * h[0][1];
            if h[0][0] < 0.0 && det > 0.0 {
                let dq = -(h[1][1] * g[0] - h[0][1] * g[1]) / det;
                let da = -(-h[0][1] * g[0] + h[0][0] * g[1]) / det;
                directions.push([dq, da]);
            }
        }
        directions.push([g[0] / h[0][0].abs().max(1e-8), g[1] / h[1][1].abs().max(1e-8)]);

        let mut accepted = None;
        'search: for d in directions {
            if d[0] * g[0] + d[1] * g[1] <= 0.0 {
                continue;
            }
            let mut t = 1.0;
            for _ in 0..60 {
                let (nq, na) = project(q + t * d[0], a + t * d[1], fixed);
                let nf = obj.value(nq, na);
                if nf > f {
                    accepted = Some((nq, na, nf));
                    break 'search;
                }
                t *= 0.5;
            }
        }
        let Some((nq, na, nf)) = accepted else {
            converged = true;
            break;
        };
        let gain = nf - f;
        q = nq;
        a = na;
        f = nf;
        trajectory.push(f);
        if gain < config.tolerance {
            converged = true;
            break;
        }
    }

    EdgeOptimum {
        params: EdgeParams::new(q, a),
        objective: f,
        iterations,
        converged,
        trajectory,
    }
}

/// Median of the defined latencies, floored at 1; 1 when none are defined.
pub fn median_latency(set: &ExampleSet) -> f64 {
    let mut taus: Vec<f64> = set.iter().filter_map(|e| e.latency).collect();
    if taus.is_empty() {
        return 1.0;
    }
    taus.sort_by(f64::total_cmp);
    let n = taus.len();
    let m = if n % 2 == 1 {
        taus[n / 2]
    } else {
        0.5 * (taus[n / 2 - 1] + taus[n / 2])
    };
    m.max(1.0)
}

/// Fits the decay model on every edge of `train`.
///
/// Undefined latencies are replaced by `tau_fallback` (default: the median
/// defined latency). Edges without examples get the prior mode; unseen edges
/// get a fit of all training examples pooled together. An edge whose
/// optimizer hits the iteration cap warns `decay_nonconverged` and falls back
/// to the prior mode.
pub fn fit_decay_map(
    train: &ExampleSet,
    priors: &Priors,
    config: &OptimizerConfig,
    tau_fallback: Option<f64>,
    diag: &mut Diagnostics,
) -> Result<FittedModel, EstimateError> {
    priors.validate()?;
    if !(config.tolerance > 0.0) || config.max_iter == 0 {
        return Err(EstimateError::InvalidConfig("optimizer needs tolerance > 0 and max_iter > 0".into()));
    }
    let tau_fallback = tau_fallback.unwrap_or_else(|| median_latency(train)).max(1.0);
    let mode = priors.mode();

    let groups: Vec<(EdgeKey, &[Example])> = train.groups().collect();
    let fits: Vec<Option<EdgeOptimum>> = groups
        .par_iter()
        .map(|(_, examples)| {
            (!examples.is_empty()).then(|| {
                let obj = EdgeObjective::from_examples(examples.iter(), tau_fallback, *priors);
                optimize_edge(&obj, config)
            })
        })
        .collect();

    let mut diagnostics = FitDiagnostics::default();
    let mut edges = std::collections::BTreeMap::new();
    for ((edge, _), fit) in groups.iter().zip(fits) {
        let params = match fit {
            None => mode,
            Some(opt) => {
                diagnostics.iterations += opt.iterations;
                if opt.converged {
                    diagnostics.objective += opt.objective;
                    opt.params
                } else {
                    diagnostics.nonconverged += 1;
                    diag.warn(
                        "estimators",
                        "decay_nonconverged",
                        format!("edge {edge}: no convergence after {} iterations; using prior mode", opt.iterations),
                    );
                    mode
                }
            }
        };
        edges.insert(*edge, params);
    }

    let pooled = EdgeObjective::from_examples(train.iter(), tau_fallback, *priors);
    let fallback = if pooled.n_examples() == 0 {
        mode
    } else {
        optimize_edge(&pooled, config).params
    };

    Ok(FittedModel {
        kind: ModelKind::Decay,
        edges,
        fallback,
        tau_fallback,
        diagnostics,
    })
}
