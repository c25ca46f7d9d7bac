//! Follow graphs, message events, and the labelled exposure examples derived
//! from them.
//!
//! An *example* is one exposure: a followee posts or retweets a message that
//! one of its followers has not retweeted yet. It is positive when the follower
//! retweets that message strictly after the exposure. Its *latency* is the time
//! since the follower last retweeted something from that followee, in
//! configured units and floored at 1.

mod extract;
mod ingest;
mod store;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use extract::{compute_latencies, extract_examples, ExtractConfig};
pub use ingest::{ingest_follow_graph, ingest_message_events};
pub use store::{load_examples, save_examples, write_follow_graph, write_message_events, EXAMPLES_HEADER};

/// Seconds since the Unix epoch.
pub type Timestamp = i64;

/// Default latency unit: one hour.
pub const DEFAULT_TIME_UNIT: f64 = 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UserId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MessageId(pub u64);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A directed follow relation: `follower` sees what `followee` posts or
/// retweets. Ordered by followee, then follower.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeKey {
    pub followee: UserId,
    pub follower: UserId,
}

pub type FollowEdge = EdgeKey;

impl EdgeKey {
    pub fn new(followee: u64, follower: u64) -> Self {
        Self {
            followee: UserId(followee),
            follower: UserId(follower),
        }
    }
}

impl fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.followee, self.follower)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("time unit must be a positive number of seconds, got {0}")]
    InvalidTimeUnit(f64),
    #[error("incompatible example file: expected `{expected}`, found `{found}`")]
    IncompatibleVersion { expected: String, found: String },
    #[error("corrupted example file header: {0}")]
    CorruptHeader(String),
    #[error("invalid example set: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Deduplicated follow relations with a followee → followers index.
#[derive(Debug, Clone, Default)]
pub struct FollowGraph {
    edges: Vec<EdgeKey>,
    followers: HashMap<UserId, Vec<UserId>>,
    seen: HashSet<EdgeKey>,
}

impl FollowGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an edge. Returns `false` for self-loops and duplicates.
    pub fn insert(&mut self, edge: EdgeKey) -> bool {
        if edge.followee == edge.follower || !self.seen.insert(edge) {
            return false;
        }
        self.edges.push(edge);
        self.followers.entry(edge.followee).or_default().push(edge.follower);
        true
    }

    /// Edges in first-seen order.
    pub fn edges(&self) -> &[EdgeKey] {
        &self.edges
    }

    pub fn followers(&self, followee: UserId) -> &[UserId] {
        self.followers.get(&followee).map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, edge: &EdgeKey) -> bool {
        self.seen.contains(edge)
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

impl FromIterator<EdgeKey> for FollowGraph {
    fn from_iter<I: IntoIterator<Item = EdgeKey>>(iter: I) -> Self {
        let mut graph = FollowGraph::new();
        for edge in iter {
            graph.insert(edge);
        }
        graph
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Post,
    Retweet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageEvent {
    pub user: UserId,
    pub message: MessageId,
    pub timestamp: Timestamp,
    pub kind: EventKind,
    /// The message being retweeted; set iff `kind` is `Retweet`.
    pub source_message: Option<MessageId>,
}

/// Validated events in timestamp order, with every message resolved to the
/// original post it carries.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    events: Vec<MessageEvent>,
    content: HashMap<MessageId, MessageId>,
}

impl EventLog {
    pub fn events(&self) -> &[MessageEvent] {
        &self.events
    }

    /// The original post a message carries (itself, for posts).
    pub fn content_of(&self, message: MessageId) -> Option<MessageId> {
        self.content.get(&message).copied()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// One exposure of `message` from `edge.followee` to `edge.follower`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub edge: EdgeKey,
    /// The original post carried by the exposing event.
    pub message: MessageId,
    pub exposure_time: Timestamp,
    pub label: bool,
    /// Time since the edge's latest activation, `>= 1`; `None` when the
    /// follower had not yet retweeted anything from this followee.
    pub latency: Option<f64>,
    /// When the follower retweeted the message; set iff `label`.
    pub response_time: Option<Timestamp>,
}

impl Example {
    /// The label as 0.0 / 1.0.
    pub fn delta(&self) -> f64 {
        if self.label {
            1.0
        } else {
            0.0
        }
    }
}

/// Examples grouped by edge, each group in chronological order.
///
/// Edges of the follow graph that never saw an exposure are kept as empty
/// groups so downstream consumers still know the edge exists.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleSet {
    time_unit: f64,
    groups: BTreeMap<EdgeKey, Vec<Example>>,
}

impl ExampleSet {
    /// Builds a set, checking every structural invariant.
    pub fn new(time_unit: f64, groups: BTreeMap<EdgeKey, Vec<Example>>) -> Result<Self, CorpusError> {
        if !(time_unit > 0.0 && time_unit.is_finite()) {
            return Err(CorpusError::InvalidTimeUnit(time_unit));
        }
        for (edge, examples) in &groups {
            let mut messages = HashSet::with_capacity(examples.len());
            for (i, ex) in examples.iter().enumerate() {
                if ex.edge != *edge {
                    return Err(CorpusError::Invalid(format!("example on {} filed under {edge}", ex.edge)));
                }
                if i > 0 && examples[i - 1].exposure_time > ex.exposure_time {
                    return Err(CorpusError::Invalid(format!("edge {edge} is not chronological")));
                }
                if !messages.insert(ex.message) {
                    return Err(CorpusError::Invalid(format!(
                        "message {} appears twice on edge {edge}",
                        ex.message
                    )));
                }
                if let Some(tau) = ex.latency {
                    if !(tau >= 1.0 && tau.is_finite()) {
                        return Err(CorpusError::Invalid(format!("latency {tau} on edge {edge} is below 1")));
                    }
                }
                if ex.label != ex.response_time.is_some() {
                    return Err(CorpusError::Invalid(format!(
                        "response time must be present exactly on positives (edge {edge}, message {})",
                        ex.message
                    )));
                }
            }
        }
        Ok(Self { time_unit, groups })
    }

    pub fn empty(time_unit: f64) -> Self {
        Self {
            time_unit,
            groups: BTreeMap::new(),
        }
    }

    pub(crate) fn from_parts_unchecked(time_unit: f64, groups: BTreeMap<EdgeKey, Vec<Example>>) -> Self {
        Self { time_unit, groups }
    }

    /// Seconds per latency unit.
    pub fn time_unit(&self) -> f64 {
        self.time_unit
    }

    /// Number of examples.
    pub fn len(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.values().all(Vec::is_empty)
    }

    pub fn num_edges(&self) -> usize {
        self.groups.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = EdgeKey> + '_ {
        self.groups.keys().copied()
    }

    pub fn groups(&self) -> impl Iterator<Item = (EdgeKey, &[Example])> + '_ {
        self.groups.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn examples(&self, edge: &EdgeKey) -> Option<&[Example]> {
        self.groups.get(edge).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Example> + '_ {
        self.groups.values().flatten()
    }

    pub fn positives(&self) -> usize {
        self.iter().filter(|e| e.label).count()
    }

    /// Earliest and latest exposure times.
    pub fn time_range(&self) -> Option<(Timestamp, Timestamp)> {
        let mut times = self.iter().map(|e| e.exposure_time);
        let first = times.next()?;
        Some(times.fold((first, first), |(lo, hi), t| (lo.min(t), hi.max(t))))
    }

    /// Keeps the examples matching `keep`; every edge key survives.
    pub fn filter<F: Fn(&Example) -> bool>(&self, keep: F) -> ExampleSet {
        let groups = self
            .groups
            .iter()
            .map(|(k, v)| (*k, v.iter().filter(|e| keep(e)).cloned().collect()))
            .collect();
        Self::from_parts_unchecked(self.time_unit, groups)
    }

    pub fn into_groups(self) -> BTreeMap<EdgeKey, Vec<Example>> {
        self.groups
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(edge: EdgeKey, message: u64, t: Timestamp) -> Example {
        Example {
            edge,
            message: MessageId(message),
            exposure_time: t,
            label: false,
            latency: None,
            response_time: None,
        }
    }

    #[test]
    fn follow_graph_drops_loops_and_duplicates() {
        let graph: FollowGraph = [EdgeKey::new(1, 2), EdgeKey::new(1, 2), EdgeKey::new(3, 3), EdgeKey::new(2, 1)]
            .into_iter()
            .collect();
        assert_eq!(graph.edges(), &[EdgeKey::new(1, 2), EdgeKey::new(2, 1)]);
        assert_eq!(graph.followers(UserId(1)), &[UserId(2)]);
        assert!(graph.followers(UserId(9)).is_empty());
    }

    #[test]
    fn set_rejects_out_of_order_and_duplicates() {
        let e = EdgeKey::new(1, 2);
        let unsorted = BTreeMap::from([(e, vec![ex(e, 1, 10), ex(e, 2, 5)])]);
        assert!(matches!(ExampleSet::new(3600.0, unsorted), Err(CorpusError::Invalid(_))));
        let dup = BTreeMap::from([(e, vec![ex(e, 1, 10), ex(e, 1, 11)])]);
        assert!(ExampleSet::new(3600.0, dup).is_err());
        let mut low = ex(e, 1, 10);
        low.latency = Some(0.5);
        assert!(ExampleSet::new(3600.0, BTreeMap::from([(e, vec![low])])).is_err());
        assert!(matches!(
            ExampleSet::new(0.0, BTreeMap::new()),
            Err(CorpusError::InvalidTimeUnit(_))
        ));
    }

    #[test]
    fn filter_keeps_empty_edges() {
        let e = EdgeKey::new(1, 2);
        let set = ExampleSet::new(3600.0, BTreeMap::from([(e, vec![ex(e, 1, 10)])])).unwrap();
        let none = set.filter(|_| false);
        assert_eq!(none.num_edges(), 1);
        assert!(none.is_empty());
        assert_eq!(set.time_range(), Some((10, 10)));
    }
}
