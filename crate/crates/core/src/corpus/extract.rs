use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap, HashSet};

use super::{
    CorpusError, EdgeKey, EventKind, EventLog, Example, ExampleSet, FollowGraph, MessageId, Timestamp, UserId,
    DEFAULT_TIME_UNIT,
};
use crate::diag::Diagnostics;

/// Optional filters applied during extraction. The defaults filter nothing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExtractConfig {
    /// A retweet later than this many seconds after the exposure does not
    /// make that exposure positive.
    pub max_response_delay: Option<i64>,
    /// Edges with fewer examples are dropped from the set.
    pub min_examples_per_edge: usize,
}

/// Turns a follow graph and an event log into labelled exposure examples.
///
/// Every event by a followee exposes the carried message to each follower
/// that has neither authored it nor retweeted it at or before the event time.
/// The exposure is positive iff the follower's first retweet of the message
/// comes strictly later. When several followees expose the same message
/// before the retweet, each of those edges gets a positive example.
///
/// The returned set has no latencies yet; see [`compute_latencies`].
pub fn extract_examples(
    graph: &FollowGraph,
    log: &EventLog,
    config: &ExtractConfig,
    diag: &mut Diagnostics,
) -> ExampleSet {
    let content = |m: MessageId| log.content_of(m).unwrap_or(m);

    let mut author: HashMap<MessageId, UserId> = HashMap::new();
    let mut first_retweet: HashMap<(UserId, MessageId), Timestamp> = HashMap::new();
    let mut counted = vec![true; log.len()];
    for (i, ev) in log.events().iter().enumerate() {
        match ev.kind {
            EventKind::Post => {
                author.insert(ev.message, ev.user);
            }
            EventKind::Retweet => {
                let k = content(ev.message);
                if let Entry::Vacant(slot) = first_retweet.entry((ev.user, k)) {
                    slot.insert(ev.timestamp);
                } else {
                    counted[i] = false;
                    diag.warn(
                        "corpus",
                        "duplicate_retweet",
                        format!("user {} retweeted message {k} again", ev.user),
                    );
                }
            }
        }
    }

    let mut groups: BTreeMap<EdgeKey, Vec<Example>> = graph.edges().iter().map(|e| (*e, Vec::new())).collect();
    let mut emitted: HashSet<(EdgeKey, MessageId)> = HashSet::new();
    for (ev, _) in log.events().iter().zip(&counted).filter(|(_, c)| **c) {
        let k = content(ev.message);
        let t = ev.timestamp;
        for &follower in graph.followers(ev.user) {
            if author.get(&k) == Some(&follower) {
                continue;
            }
            let retweet = first_retweet.get(&(follower, k)).copied();
            if matches!(retweet, Some(rt) if rt <= t) {
                continue;
            }
            let edge = EdgeKey {
                followee: ev.user,
                follower,
            };
            if !emitted.insert((edge, k)) {
                continue;
            }
            let response_time =
                retweet.filter(|rt| config.max_response_delay.is_none_or(|cap| rt - t <= cap));
            groups.get_mut(&edge).expect("edge from graph").push(Example {
                edge,
                message: k,
                exposure_time: t,
                label: response_time.is_some(),
                latency: None,
                response_time,
            });
        }
    }

    if config.min_examples_per_edge > 0 {
        groups.retain(|_, v| v.len() >= config.min_examples_per_edge);
    }
    ExampleSet::from_parts_unchecked(DEFAULT_TIME_UNIT, groups)
}

/// Sets each example's latency to the time since the follower's latest
/// retweet, strictly before the exposure, of a message exposed on the same
/// edge. Measured in `unit` seconds and floored at 1; `None` when no such
/// retweet exists.
pub fn compute_latencies(set: &ExampleSet, unit: f64) -> Result<ExampleSet, CorpusError> {
    if !(unit > 0.0 && unit.is_finite()) {
        return Err(CorpusError::InvalidTimeUnit(unit));
    }
    let groups = set
        .groups()
        .map(|(edge, examples)| {
            let mut activations: Vec<Timestamp> = examples.iter().filter_map(|e| e.response_time).collect();
            activations.sort_unstable();
            let out = examples
                .iter()
                .map(|ex| {
                    let prior = activations.partition_point(|&a| a < ex.exposure_time);
                    let latency = prior
                        .checked_sub(1)
                        .map(|i| ((ex.exposure_time - activations[i]) as f64 / unit).max(1.0));
                    Example { latency, ..ex.clone() }
                })
                .collect();
            (edge, out)
        })
        .collect();
    Ok(ExampleSet::from_parts_unchecked(unit, groups))
}
