//! End-to-end pipelines: model scoring over training ratios, and seed
//! selection scored by pseudo-actual spread on a held-out window.

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{EdgeKey, ExampleSet, Timestamp};
use crate::diag::Diagnostics;
use crate::estimators::{fit_model, EstimateError, FitConfig, FittedModel, ModelKind};
use crate::evaluation::{
    chronological_phase_split, next_one_split, perplexity, predict_records, roc_auc, EvalError, PhaseGroup,
    PhaseSpec, RocCurve,
};
use crate::viral::{
    build_propagation_network, celfpp_select, pseudo_actual_spread, MonteCarloSpread, SeedSet, ViralError,
    WeightedDiGraph,
};

#[derive(Debug, Error, PartialEq)]
pub enum ExperimentError {
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Viral(#[from] ViralError),
    #[error("group {requested} does not exist; the corpus has {available}")]
    MissingGroup { requested: usize, available: usize },
}

/// Training ratios swept by default: 0.1 to 0.9 in steps of 0.1.
pub fn default_ratios() -> Vec<f64> {
    (1..=9).map(|i| f64::from(i) / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelEvaluation {
    pub model: ModelKind,
    pub ratio: f64,
    pub n_test: usize,
    pub auc: f64,
    pub perplexity: f64,
    pub roc: RocCurve,
}

/// Fits every model on the next-one training split at every ratio and scores
/// it on the matching test examples.
pub fn evaluate_models(
    set: &ExampleSet,
    ratios: &[f64],
    models: &[ModelKind],
    config: &FitConfig,
    diag: &mut Diagnostics,
) -> Result<Vec<ModelEvaluation>, ExperimentError> {
    let mut out = Vec::with_capacity(ratios.len() * models.len());
    for &ratio in ratios {
        let (train, test) = next_one_split(set, ratio)?;
        for &kind in models {
            let model = fit_model(kind, &train, config, diag)?;
            let records = predict_records(&model, &test);
            let roc = roc_auc(&records)?;
            out.push(ModelEvaluation {
                model: kind,
                ratio,
                n_test: records.len(),
                auc: roc.auc,
                perplexity: perplexity(&records)?,
                roc,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImConfig {
    /// Seeds to select.
    pub k: usize,
    /// Monte Carlo replicas per spread estimate.
    pub mc_runs: u64,
    pub seed: u64,
    pub phases: PhaseSpec,
    /// Index of the chronological group to run on.
    pub group: usize,
}

impl Default for ImConfig {
    fn default() -> Self {
        Self {
            k: 10,
            mc_runs: 10_000,
            seed: 0,
            phases: PhaseSpec::default(),
            group: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImOutcome {
    pub model: ModelKind,
    pub seeds: SeedSet,
    /// Pseudo-actual spread of the first `i + 1` seeds at index `i`.
    pub spreads: Vec<usize>,
}

/// Latency of every edge at `at`: time since the latest retweet on the edge
/// strictly before `at`, or `None` without one.
pub fn latency_at(set: &ExampleSet, edge: &EdgeKey, at: Timestamp) -> Option<f64> {
    let last = set
        .examples(edge)?
        .iter()
        .filter_map(|e| e.response_time)
        .filter(|&rt| rt < at)
        .max()?;
    Some(((at - last) as f64 / set.time_unit()).max(1.0))
}

/// Probability graph over all edges of `set`, each evaluated at its latency
/// at `at`.
pub fn probability_graph(model: &FittedModel, set: &ExampleSet, at: Timestamp) -> Result<WeightedDiGraph, ViralError> {
    WeightedDiGraph::new(
        [],
        set.edges().map(|e| (e, model.predict(&e, latency_at(set, &e, at)))),
    )
}

/// Fits each model on the group's training phase, selects seeds on its
/// predicted probabilities, and scores every seed prefix by pseudo-actual
/// spread on the evaluation phase's propagation network.
pub fn viral_marketing_on_group(
    set: &ExampleSet,
    group: &PhaseGroup,
    models: &[ModelKind],
    im: &ImConfig,
    fit: &FitConfig,
    diag: &mut Diagnostics,
) -> Result<Vec<ImOutcome>, ExperimentError> {
    let network = build_propagation_network(&group.eval, group.eval_window)?;
    let eval_start = group.eval_window.0;
    let history = set.filter(|e| e.exposure_time < eval_start);
    let mut out = Vec::with_capacity(models.len());
    for &kind in models {
        let model = fit_model(kind, &group.train, fit, diag)?;
        let graph = probability_graph(&model, &history, eval_start)?;
        let estimator = MonteCarloSpread::new(&graph, im.mc_runs, im.seed)?;
        let seeds = celfpp_select(&estimator, im.k, diag)?;
        let spreads = (1..=seeds.len())
            .map(|i| pseudo_actual_spread(&network, &seeds.nodes[..i]))
            .collect();
        out.push(ImOutcome {
            model: kind,
            seeds,
            spreads,
        });
    }
    Ok(out)
}

/// Splits `set` chronologically and runs [`viral_marketing_on_group`] on
/// group `im.group`.
pub fn viral_marketing(
    set: &ExampleSet,
    models: &[ModelKind],
    im: &ImConfig,
    fit: &FitConfig,
    diag: &mut Diagnostics,
) -> Result<Vec<ImOutcome>, ExperimentError> {
    let groups = chronological_phase_split(set, &im.phases)?;
    let group = groups.get(im.group).ok_or(ExperimentError::MissingGroup {
        requested: im.group,
        available: groups.len(),
    })?;
    viral_marketing_on_group(set, group, models, im, fit, diag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Example, MessageId};
    use std::collections::BTreeMap;

    #[test]
    fn latency_uses_only_earlier_retweets() {
        let e = EdgeKey::new(1, 2);
        let mk = |msg, t, rt: Option<i64>| Example {
            edge: e,
            message: MessageId(msg),
            exposure_time: t,
            label: rt.is_some(),
            latency: None,
            response_time: rt,
        };
        let set = ExampleSet::new(
            3600.0,
            BTreeMap::from([(e, vec![mk(1, 0, Some(3600)), mk(2, 7200, Some(10_800)), mk(3, 9000, None)])]),
        )
        .unwrap();
        assert_eq!(latency_at(&set, &e, 3600), None);
        assert_eq!(latency_at(&set, &e, 7200 + 3600), Some(2.0));
        assert_eq!(latency_at(&set, &e, 10_801), Some(1.0));
        assert_eq!(latency_at(&set, &EdgeKey::new(5, 6), 10), None);
    }

    #[test]
    fn default_ratio_sweep() {
        let r = default_ratios();
        assert_eq!(r.len(), 9);
        assert_eq!(r[0], 0.1);
        assert_eq!(r[8], 0.9);
    }
}
