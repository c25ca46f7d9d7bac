//! Static per-edge estimators: positive ratio (MLE), activation-per-exposure
//! Bernoulli, and the partial-credit Bernoulli that splits a retweet's credit
//! among every followee that exposed the message before it.

use std::collections::{BTreeMap, HashMap};

use super::{EdgeParams, FitDiagnostics, FittedModel, ModelKind};
use crate::corpus::{ExampleSet, MessageId, UserId};

fn static_model(kind: ModelKind, train: &ExampleSet, per_edge: impl Fn(&[crate::corpus::Example]) -> (f64, f64)) -> FittedModel {
    let mut num_total = 0.0;
    let mut den_total = 0.0;
    let mut raw = Vec::with_capacity(train.num_edges());
    for (edge, examples) in train.groups() {
        let (num, den) = per_edge(examples);
        num_total += num;
        den_total += den;
        raw.push((edge, num, den));
    }
    let fallback = EdgeParams::constant(if den_total > 0.0 { num_total / den_total } else { 0.0 });
    let edges: BTreeMap<_, _> = raw
        .into_iter()
        .map(|(edge, num, den)| {
            let p = if den > 0.0 { EdgeParams::constant(num / den) } else { fallback };
            (edge, p)
        })
        .collect();
    FittedModel {
        kind,
        edges,
        fallback,
        tau_fallback: 1.0,
        diagnostics: FitDiagnostics::default(),
    }
}

/// Positives over examples on each edge; unseen and empty edges get the
/// corpus-wide positive ratio.
pub fn fit_mle(train: &ExampleSet) -> FittedModel {
    static_model(ModelKind::Mle, train, |ex| {
        (ex.iter().filter(|e| e.label).count() as f64, ex.len() as f64)
    })
}

/// Successful activations over the followee's exposing actions toward the
/// follower. Under exposure-based examples every exposing action is an
/// example and every activation a positive one, so this agrees with
/// [`fit_mle`] edge by edge.
pub fn fit_static_bernoulli(train: &ExampleSet) -> FittedModel {
    static_model(ModelKind::StaticBernoulli, train, |ex| {
        let actions = ex.iter().map(|e| e.message).collect::<std::collections::HashSet<_>>().len();
        let activations = ex.iter().filter(|e| e.response_time.is_some()).count();
        (activations as f64, actions as f64)
    })
}

/// Counts, for each (follower, message), the positive examples in `set`;
/// that is the number of followees whose exposure preceded the retweet.
pub(crate) fn parent_counts(set: &ExampleSet) -> HashMap<(UserId, MessageId), usize> {
    let mut counts = HashMap::new();
    for ex in set.iter().filter(|e| e.label) {
        *counts.entry((ex.edge.follower, ex.message)).or_insert(0) += 1;
    }
    counts
}

/// Each positive contributes `1/m`, `m` being the number of followees that
/// exposed the message to the follower before the retweet.
pub fn fit_static_pc_bernoulli(train: &ExampleSet) -> FittedModel {
    let parents = parent_counts(train);
    static_model(ModelKind::StaticPcBernoulli, train, |ex| {
        let credit: f64 = ex
            .iter()
            .filter(|e| e.label)
            .map(|e| 1.0 / parents[&(e.edge.follower, e.message)] as f64)
            .sum();
        (credit, ex.len() as f64)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EdgeKey, Example};

    fn ex(edge: EdgeKey, msg: u64, t: i64, label: bool) -> Example {
        Example {
            edge,
            message: MessageId(msg),
            exposure_time: t,
            label,
            latency: None,
            response_time: label.then_some(t + 1),
        }
    }

    fn edge_with(edge: EdgeKey, pos: usize, neg: usize, first_msg: u64) -> Vec<Example> {
        (0..pos + neg)
            .map(|i| ex(edge, first_msg + i as u64, i as i64, i < pos))
            .collect()
    }

    #[test]
    fn mle_ratios_and_fallback() {
        let a = EdgeKey::new(1, 2);
        let b = EdgeKey::new(3, 4);
        let set = ExampleSet::new(3600.0, BTreeMap::from([(a, edge_with(a, 3, 7, 0)), (b, edge_with(b, 0, 10, 100))])).unwrap();
        let m = fit_mle(&set);
        assert!((m.params(&a).q - 0.3).abs() < 1e-15);
        assert_eq!(m.params(&b).q, 0.0);
        assert!((m.params(&EdgeKey::new(9, 9)).q - 0.15).abs() < 1e-15);
        assert_eq!(m.predict(&a, Some(1.0)), m.predict(&a, Some(1e6)));
    }

    #[test]
    fn bernoulli_two_of_eight_and_empty_edge() {
        let a = EdgeKey::new(1, 2);
        let empty = EdgeKey::new(5, 6);
        let set = ExampleSet::new(3600.0, BTreeMap::from([(a, edge_with(a, 2, 6, 0)), (empty, vec![])])).unwrap();
        let m = fit_static_bernoulli(&set);
        assert_eq!(m.params(&a).q, 0.25);
        assert_eq!(m.params(&empty), m.fallback);
    }

    #[test]
    fn partial_credit_splits_shared_retweets() {
        // message 7 reaches follower 3 through followees 1 and 2 before the retweet
        let a = EdgeKey::new(1, 3);
        let b = EdgeKey::new(2, 3);
        let c = EdgeKey::new(4, 5);
        let set = ExampleSet::new(
            3600.0,
            BTreeMap::from([
                (a, vec![ex(a, 7, 1, true), ex(a, 8, 2, false)]),
                (b, vec![ex(b, 7, 2, true)]),
                (c, vec![ex(c, 9, 1, true), ex(c, 10, 2, false)]),
            ]),
        )
        .unwrap();
        let m = fit_static_pc_bernoulli(&set);
        assert_eq!(m.params(&a).q, 0.25);
        assert_eq!(m.params(&b).q, 0.5);
        // single parent: identical to MLE
        assert_eq!(m.params(&c).q, fit_mle(&set).params(&c).q);
    }
}
