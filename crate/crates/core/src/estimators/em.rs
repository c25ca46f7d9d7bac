//! Expectation-maximization for static edge probabilities when a retweet may
//! have been caused by any of several exposing followees.
//!
//! A retweet of message `k` by follower `j` is explained by the set `P` of
//! followees whose exposures of `k` preceded it; it happens with probability
//! `1 - prod_{i in P} (1 - p_i)`. Every negative example on edge `i` is a
//! failed trial with probability `1 - p_i`. The E-step gives each parent the
//! responsibility `p_i / (1 - prod (1 - p))`; the M-step divides an edge's
//! summed responsibilities by its trial count.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::Serialize;

use super::{EdgeParams, EstimateError, FitDiagnostics, FittedModel, ModelKind};
use crate::corpus::{EdgeKey, ExampleSet, MessageId, UserId};
use crate::diag::Diagnostics;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmConfig {
    /// Stop once no edge probability moves by this much.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmRun {
    pub model: FittedModel,
    /// Incomplete-data log-likelihood before the first and after every
    /// iteration.
    pub log_likelihood: Vec<f64>,
    pub final_delta: f64,
    pub converged: bool,
}

struct Problem {
    edges: Vec<EdgeKey>,
    trials: Vec<f64>,
    negatives: Vec<f64>,
    positives: Vec<f64>,
    /// Edge indices of the parents of each retweet.
    groups: Vec<Vec<usize>>,
    /// For each edge, the retweet groups it belongs to, ascending.
    memberships: Vec<Vec<usize>>,
}

impl Problem {
    fn new(train: &ExampleSet) -> Self {
        let edges: Vec<EdgeKey> = train.edges().collect();
        let index: HashMap<EdgeKey, usize> = edges.iter().enumerate().map(|(i, e)| (*e, i)).collect();
        let mut trials = vec![0.0; edges.len()];
        let mut negatives = vec![0.0; edges.len()];
        let mut positives = vec![0.0; edges.len()];
        let mut by_retweet: BTreeMap<(UserId, MessageId), Vec<usize>> = BTreeMap::new();
        for ex in train.iter() {
            let i = index[&ex.edge];
            trials[i] += 1.0;
            if ex.label {
                positives[i] += 1.0;
                by_retweet.entry((ex.edge.follower, ex.message)).or_default().push(i);
            } else {
                negatives[i] += 1.0;
            }
        }
        let groups: Vec<Vec<usize>> = by_retweet.into_values().collect();
        let mut memberships = vec![Vec::new(); edges.len()];
        for (g, parents) in groups.iter().enumerate() {
            for &i in parents {
                memberships[i].push(g);
            }
        }
        Self {
            edges,
            trials,
            negatives,
            positives,
            groups,
            memberships,
        }
    }

    fn success_probabilities(&self, p: &[f64]) -> Vec<f64> {
        self.groups
            .par_iter()
            .map(|parents| 1.0 - parents.iter().map(|&i| 1.0 - p[i]).product::<f64>())
            .collect()
    }

    fn log_likelihood(&self, p: &[f64], success: &[f64]) -> f64 {
        let pos: f64 = success.iter().map(|s| s.ln()).sum();
        let neg: f64 = self
            .negatives
            .iter()
            .zip(p)
            .filter(|(n, _)| **n > 0.0)
            .map(|(n, pi)| n * (-pi).ln_1p())
            .sum();
        pos + neg
    }

    fn step(&self, p: &[f64], success: &[f64]) -> Vec<f64> {
        (0..p.len())
            .into_par_iter()
            .map(|i| {
                if self.trials[i] == 0.0 {
                    return p[i];
                }
                let resp: f64 = self.memberships[i]
                    .iter()
                    .map(|&g| if success[g] > 0.0 { p[i] / success[g] } else { 1.0 / self.groups[g].len() as f64 })
                    .sum();
                (resp / self.trials[i]).clamp(0.0, 1.0)
            })
            .collect()
    }
}

/// Runs EM from Laplace-smoothed per-edge ratios and records the
/// log-likelihood after every iteration. Reaching `max_iter` warns
/// `em_nonconverged` with the final change.
pub fn run_em(train: &ExampleSet, config: &EmConfig, diag: &mut Diagnostics) -> Result<EmRun, EstimateError> {
    if !(config.tol > 0.0) || config.max_iter == 0 {
        return Err(EstimateError::InvalidConfig("EM needs tol > 0 and max_iter > 0".into()));
    }
    let problem = Problem::new(train);
    let mut p: Vec<f64> = problem
        .positives
        .iter()
        .zip(&problem.trials)
        .map(|(pos, n)| (pos + 1.0) / (n + 2.0))
        .collect();

    let mut success = problem.success_probabilities(&p);
    let mut trace = vec![problem.log_likelihood(&p, &success)];
    let mut delta = f64::INFINITY;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let next = problem.step(&p, &success);
        delta = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        p = next;
        success = problem.success_probabilities(&p);
        trace.push(problem.log_likelihood(&p, &success));
        if delta < config.tol {
            break;
        }
    }
    let converged = delta < config.tol;
    if !converged {
        diag.warn(
            "estimators",
            "em_nonconverged",
            format!("EM stopped after {iterations} iterations with max change {delta:e}"),
        );
    }

    let num: f64 = problem
        .trials
        .iter()
        .zip(&p)
        .map(|(n, pi)| n * pi)
        .sum();
    let den: f64 = problem.trials.iter().sum();
    let fallback = EdgeParams::constant(if den > 0.0 { num / den } else { 0.0 });
    let edges = problem
        .edges
        .iter()
        .zip(&p)
        .zip(&problem.trials)
        .map(|((e, pi), n)| (*e, if *n > 0.0 { EdgeParams::constant(*pi) } else { fallback }))
        .collect();
    let model = FittedModel {
        kind: ModelKind::Em,
        edges,
        fallback,
        tau_fallback: 1.0,
        diagnostics: FitDiagnostics {
            iterations,
            objective: *trace.last().expect("initial likelihood"),
            nonconverged: usize::from(!converged),
        },
    };
    Ok(EmRun {
        model,
        log_likelihood: trace,
        final_delta: delta,
        converged,
    })
}

pub fn fit_em(train: &ExampleSet, config: &EmConfig, diag: &mut Diagnostics) -> Result<FittedModel, EstimateError> {
    run_em(train, config, diag).map(|run| run.model)
}
