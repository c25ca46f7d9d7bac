//! Train/test splits and the scoring of fitted models: perplexity, ROC/AUC,
//! and chronological multi-example prediction on a single edge.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{EdgeKey, Example, ExampleSet, Timestamp};
use crate::estimators::FittedModel;

/// Floor on the probability assigned to an observed label before taking its logarithm.
pub const EPSILON: f64 = 1e-12;

const DAY: i64 = 86_400;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("the example set is empty")]
    EmptySet,
    #[error("training ratio {0} is outside (0, 1)")]
    InvalidRatio(f64),
    #[error("invalid phase layout: {0}")]
    InvalidPhases(String),
    #[error("the corpus is too short for a single group")]
    NoGroups,
    #[error("no prediction records")]
    EmptyRecords,
    #[error("AUC is undefined without both positive and negative records")]
    SingleClass,
    #[error("probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("exposure times are not in chronological order")]
    Unsorted,
}

/// Day layout of the chronological protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PhaseSpec {
    pub train_days: u32,
    pub eval_days: u32,
    pub n_groups: usize,
}

impl Default for PhaseSpec {
    fn default() -> Self {
        Self {
            train_days: 205,
            eval_days: 5,
            n_groups: 4,
        }
    }
}

impl PhaseSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.train_days == 0 || self.eval_days == 0 || self.n_groups == 0 {
            return Err(EvalError::InvalidPhases(format!(
                "train_days={}, eval_days={}, n_groups={} must all be positive",
                self.train_days, self.eval_days, self.n_groups
            )));
        }
        Ok(())
    }

    /// Length of one group in seconds.
    pub fn group_seconds(&self) -> i64 {
        i64::from(self.train_days + self.eval_days) * DAY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SplitSpec {
    NextOne { ratio: f64 },
    Chronological(PhaseSpec),
}

/// Number of training examples taken from an edge with `n >= 2` examples.
fn train_count(n: usize, ratio: f64) -> usize {
    let k = (ratio * n as f64 - 1e-9).ceil() as usize;
    k.clamp(1, n - 1)
}

/// Splits every edge's chronological examples: the earliest `ceil(ratio * n)`
/// go to training (capped so one remains), the single next one is the test
/// example. Edges with one example train only; edges with none keep an empty
/// training group.
pub fn next_one_split(set: &ExampleSet, ratio: f64) -> Result<(ExampleSet, ExampleSet), EvalError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(EvalError::InvalidRatio(ratio));
    }
    if set.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let mut train = BTreeMap::new();
    let mut test = BTreeMap::new();
    for (edge, examples) in set.groups() {
        if examples.len() < 2 {
            train.insert(edge, examples.to_vec());
            continue;
        }
        let k = train_count(examples.len(), ratio);
        train.insert(edge, examples[..k].to_vec());
        test.insert(edge, vec![examples[k].clone()]);
    }
    Ok((
        ExampleSet::from_parts_unchecked(set.time_unit(), train),
        ExampleSet::from_parts_unchecked(set.time_unit(), test),
    ))
}

/// One group of the chronological protocol. Windows are half-open
/// `[start, end)` in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGroup {
    pub index: usize,
    pub train_window: (Timestamp, Timestamp),
    pub eval_window: (Timestamp, Timestamp),
    pub train: ExampleSet,
    pub eval: ExampleSet,
}

/// Cuts the corpus into consecutive groups anchored at its earliest exposure.
/// A group is kept when the corpus reaches its evaluation phase; at most
/// `spec.n_groups` are returned. Both halves keep every edge key.
pub fn chronological_phase_split(set: &ExampleSet, spec: &PhaseSpec) -> Result<Vec<PhaseGroup>, EvalError> {
    spec.validate()?;
    let (t0, t_max) = set.time_range().ok_or(EvalError::EmptySet)?;
    let len = spec.group_seconds();
    let train_len = i64::from(spec.train_days) * DAY;
    let mut out = Vec::new();
    for index in 0..spec.n_groups {
        let start = t0 + index as i64 * len;
        let eval_start = start + train_len;
        let end = start + len;
        if t_max < eval_start {
            break;
        }
        out.push(PhaseGroup {
            index,
            train_window: (start, eval_start),
            eval_window: (eval_start, end),
            train: set.filter(|e| (start..eval_start).contains(&e.exposure_time)),
            eval: set.filter(|e| (eval_start..end).contains(&e.exposure_time)),
        });
    }
    if out.is_empty() {
        return Err(EvalError::NoGroups);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictionRecord {
    pub edge: EdgeKey,
    pub label: bool,
    pub probability: f64,
    /// Latency the prediction was made at, after the fallback.
    pub latency: f64,
}

/// Scores every example of `test` with `model`.
pub fn predict_records(model: &FittedModel, test: &ExampleSet) -> Vec<PredictionRecord> {
    test.iter().map(|ex| record(model, ex)).collect()
}

fn record(model: &FittedModel, ex: &Example) -> PredictionRecord {
    let latency = ex.latency.unwrap_or(model.tau_fallback).max(1.0);
    PredictionRecord {
        edge: ex.edge,
        label: ex.label,
        probability: model.predict(&ex.edge, Some(latency)),
        latency,
    }
}

fn check_probability(p: f64) -> Result<(), EvalError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(EvalError::InvalidProbability(p))
    }
}

/// `exp(-mean log-likelihood)` of the labels under the predicted
/// probabilities.
pub fn perplexity(records: &[PredictionRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    let mut sum = 0.0;
    for r in records {
        check_probability(r.probability)?;
        // only the probability of the observed label is floored
        sum += if r.label {
            r.probability.max(EPSILON).ln()
        } else {
            (-r.probability.min(1.0 - EPSILON)).ln_1p()
        };
    }
    Ok((-sum / records.len() as f64).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one point per distinct score.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "fpr,tpr")?;
        for (fpr, tpr) in &self.points {
            writeln!(w, "{fpr},{tpr}")?;
        }
        Ok(())
    }
}

/// Threshold sweep over distinct scores, highest first, with tied scores
/// entering together. The area is accumulated from integer counts, so it
/// equals the tie-aware Mann-Whitney statistic up to one final division.
pub fn roc_auc(records: &[PredictionRecord]) -> Result<RocCurve, EvalError> {
    for r in records {
        check_probability(r.probability)?;
    }
    let n_pos = records.iter().filter(|r| r.label).count() as u128;
    let n_neg = records.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<&PredictionRecord> = records.iter().collect();
    order.sort_by(|a, b| b.probability.total_cmp(&a.probability));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u128, 0u128);
    let mut area2 = 0u128;
    let mut i = 0;
    while i < order.len() {
        let score = order[i].probability;
        let (mut tp_g, mut fp_g) = (0u128, 0u128);
        while i < order.len() && order[i].probability == score {
            if order[i].label {
                tp_g += 1;
            } else {
                fp_g += 1;
            }
            i += 1;
        }
        area2 += fp_g * (2 * tp + tp_g);
        tp += tp_g;
        fp += fp_g;
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(RocCurve {
        points,
        auc: area2 as f64 / (2 * n_pos * n_neg) as f64,
    })
}

/// Predicts a run of future exposures on one edge in order. Each earlier
/// exposure is treated as an independent Bernoulli trial with its own
/// predicted probability; a success resets the activation clock at that
/// exposure. Example `m` is scored at the expected latency over those
/// outcomes. `last_activation` is the latest known activation before the
/// first exposure; without one the model's fallback latency is used until a
/// predicted reset.
pub fn sequential_predict(
    model: &FittedModel,
    edge: &EdgeKey,
    exposures: &[Timestamp],
    last_activation: Option<Timestamp>,
    time_unit: f64,
) -> Result<Vec<f64>, EvalError> {
    if exposures.windows(2).any(|w| w[0] > w[1]) {
        return Err(EvalError::Unsorted);
    }
    let tau = |from: Timestamp, to: Timestamp| ((to - from) as f64 / time_unit).max(1.0);
    let mut probs: Vec<f64> = Vec::with_capacity(exposures.len());
    for (m, &t) in exposures.iter().enumerate() {
        let mut expected = 0.0;
        let mut survive = 1.0;
        for j in (0..m).rev() {
            expected += probs[j] * survive * tau(exposures[j], t);
            survive *= 1.0 - probs[j];
        }
        expected += survive * last_activation.map_or(model.tau_fallback, |a| tau(a, t));
        probs.push(model.predict(edge, Some(expected)));
    }
    Ok(probs)
}
