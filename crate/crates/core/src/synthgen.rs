//! Synthetic corpora with known decay parameters.
//!
//! [`generate_examples`] runs the decay model forward on every edge
//! independently: the followee's exposures arrive by the configured process
//! and each is retweeted with probability `q * tau^(-alpha)`, `tau` being the
//! time since the edge's previous retweet. Until an edge's first retweet the
//! start of the horizon stands in for the previous retweet when drawing
//! labels; the emitted examples still carry undefined latency there, as the
//! corpus rule prescribes.
//!
//! [`generate_event_log`] instead simulates a whole timeline of posts and
//! retweets on the follow graph, so the result goes through ingestion and
//! extraction like real data. It records the examples it generated so the
//! extraction path can be checked against them.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::io::Write;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Pareto};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{
    compute_latencies, EdgeKey, EventKind, Example, ExampleSet, FollowGraph, MessageEvent, MessageId, Timestamp,
    UserId, DEFAULT_TIME_UNIT,
};
use crate::estimators::EdgeParams;
use crate::rng::stream;

// Stream tags keep the RNG streams of different generator stages apart.
const TAG_GRAPH: u64 = 1;
const TAG_TRUTH: u64 = 2;
const TAG_EXPOSURE: u64 = 3;
const TAG_LABEL: u64 = 4;
const TAG_POSTS: u64 = 5;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("{edges} edges do not fit a simple directed graph on {users} users")]
    InfeasibleEdges { users: usize, edges: usize },
    #[error("invalid synthetic configuration: {0}")]
    InvalidConfig(String),
    #[error("ground truth does not cover edge {0}")]
    MissingTruth(EdgeKey),
}

/// How a followee's exposures are spaced in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExposureProcess {
    /// Exponential gaps with `rate` events per second.
    Poisson { rate: f64 },
    /// Pareto gaps with density proportional to `gap^(-exponent)` above `min_gap` seconds.
    HeavyTailed { exponent: f64, min_gap: f64 },
}

impl ExposureProcess {
    fn gap(&self, rng: &mut ChaCha8Rng) -> i64 {
        let g = match *self {
            ExposureProcess::Poisson { rate } => Exp::new(rate).expect("validated rate").sample(rng),
            ExposureProcess::HeavyTailed { exponent, min_gap } => {
                Pareto::new(min_gap, exponent - 1.0).expect("validated shape").sample(rng)
            }
        };
        // integer seconds, at least one apart
        g.round().clamp(1.0, 1e15) as i64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_edges: usize,
    /// `q` drawn uniformly from this range (equal ends fix it).
    pub q_range: (f64, f64),
    pub alpha_range: (f64, f64),
    pub process: ExposureProcess,
    /// Length of the simulated period in seconds.
    pub horizon: i64,
    /// Caps the exposures generated per edge (per user for event logs).
    pub max_exposures: Option<usize>,
    pub start_time: Timestamp,
    /// Seconds between an exposure and the retweet it triggers.
    pub response_delay: i64,
    /// Seconds per latency unit.
    pub time_unit: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 200,
            n_edges: 800,
            q_range: (0.2, 0.8),
            alpha_range: (0.3, 1.2),
            process: ExposureProcess::HeavyTailed {
                exponent: 1.5,
                min_gap: 60.0,
            },
            horizon: 120 * 7 * 86_400,
            max_exposures: Some(500),
            start_time: 1_325_376_000,
            response_delay: 60,
            time_unit: DEFAULT_TIME_UNIT,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.into()));
        let (qa, qb) = self.q_range;
        let (aa, ab) = self.alpha_range;
        if !(0.0..=1.0).contains(&qa) || !(0.0..=1.0).contains(&qb) || qa > qb {
            return bad("q range must lie in [0, 1] with lo <= hi");
        }
        if !(aa >= 0.0 && aa <= ab && ab.is_finite()) {
            return bad("alpha range must be non-negative with lo <= hi");
        }
        if self.horizon <= 0 {
            return bad("horizon must be positive");
        }
        if self.start_time <= 0 {
            return bad("start time must be positive");
        }
        if self.response_delay < 1 {
            return bad("response delay must be at least one second");
        }
        if !(self.time_unit > 0.0) {
            return bad("time unit must be positive");
        }
        match self.process {
            ExposureProcess::Poisson { rate } if !(rate > 0.0 && rate.is_finite()) => bad("poisson rate must be positive"),
            ExposureProcess::HeavyTailed { exponent, min_gap } if !(exponent > 1.0 && min_gap > 0.0) => {
                bad("heavy-tailed process needs exponent > 1 and min_gap > 0")
            }
            _ => Ok(()),
        }
    }

    fn end_time(&self) -> Timestamp {
        self.start_time + self.horizon
    }
}

/// Generator-side parameters of every edge.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub params: BTreeMap<EdgeKey, EdgeParams>,
}

impl GroundTruth {
    /// Writes the `edge_id,q,alpha` table.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "edge_id,q,alpha")?;
        for (edge, p) in &self.params {
            writeln!(w, "{edge},{},{}", p.q, p.alpha)?;
        }
        w.flush()
    }
}

/// A uniformly random simple directed graph on users `1..=n_users`.
pub fn generate_graph(config: &SynthConfig) -> Result<FollowGraph, SynthError> {
    let n = config.n_users;
    let max = n.saturating_mul(n.saturating_sub(1));
    if config.n_edges > max {
        return Err(SynthError::InfeasibleEdges {
            users: n,
            edges: config.n_edges,
        });
    }
    let mut rng = stream(config.seed, &[TAG_GRAPH]);
    let pair = |i: usize| {
        let followee = i / (n - 1);
        let mut follower = i % (n - 1);
        if follower >= followee {
            follower += 1;
        }
        EdgeKey::new(followee as u64 + 1, follower as u64 + 1)
    };
    let mut graph = FollowGraph::new();
    if config.n_edges.saturating_mul(2) > max {
        for i in index::sample(&mut rng, max, config.n_edges) {
            graph.insert(pair(i));
        }
    } else {
        while graph.len() < config.n_edges {
            graph.insert(pair(rng.random_range(0..max)));
        }
    }
    Ok(graph)
}

/// Draws `q` and `alpha` for every edge, uniformly within the configured ranges.
pub fn draw_ground_truth(graph: &FollowGraph, config: &SynthConfig) -> GroundTruth {
    let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if lo == hi { lo } else { rng.random_range(lo..hi) };
    let params = graph
        .edges()
        .iter()
        .map(|e| {
            let mut rng = stream(config.seed, &[TAG_TRUTH, e.followee.0, e.follower.0]);
            let q = uniform(&mut rng, config.q_range);
            let alpha = uniform(&mut rng, config.alpha_range);
            (*e, EdgeParams::new(q, alpha))
        })
        .collect();
    GroundTruth { params }
}

/// Tracks an edge's retweets so labels can be drawn with the right latency.
struct ActivationClock {
    origin: Timestamp,
    activations: Vec<Timestamp>,
    unit: f64,
}

impl ActivationClock {
    fn new(origin: Timestamp, unit: f64) -> Self {
        Self {
            origin,
            activations: Vec::new(),
            unit,
        }
    }

    fn latency(&self, t: Timestamp) -> f64 {
        let last = self.activations.iter().copied().filter(|&a| a < t).max().unwrap_or(self.origin);
        ((t - last) as f64 / self.unit).max(1.0)
    }

    fn record(&mut self, at: Timestamp) {
        self.activations.push(at);
    }
}

/// Runs the decay model forward on every edge of `graph` independently.
pub fn generate_examples(
    graph: &FollowGraph,
    truth: &GroundTruth,
    config: &SynthConfig,
) -> Result<(ExampleSet, GroundTruth), SynthError> {
    config.validate()?;
    let mut edges: Vec<EdgeKey> = graph.edges().to_vec();
    edges.sort();
    for e in &edges {
        if !truth.params.contains_key(e) {
            return Err(SynthError::MissingTruth(*e));
        }
    }
    let groups: BTreeMap<EdgeKey, Vec<Example>> = edges
        .par_iter()
        .enumerate()
        .map(|(idx, edge)| {
            let params = truth.params[edge];
            let mut rng = stream(config.seed, &[TAG_EXPOSURE, edge.followee.0, edge.follower.0]);
            let mut clock = ActivationClock::new(config.start_time, config.time_unit);
            let mut examples = Vec::new();
            let mut t = config.start_time;
            loop {
                if config.max_exposures.is_some_and(|cap| examples.len() >= cap) {
                    break;
                }
                t += config.process.gap(&mut rng);
                if t > config.end_time() {
                    break;
                }
                let p = params.probability_at(clock.latency(t));
                let label = rng.random::<f64>() < p;
                let response_time = label.then_some(t + config.response_delay);
                if let Some(rt) = response_time {
                    clock.record(rt);
                }
                examples.push(Example {
                    edge: *edge,
                    message: MessageId(((idx as u64) << 32) | examples.len() as u64),
                    exposure_time: t,
                    label,
                    latency: None,
                    response_time,
                });
            }
            (*edge, examples)
        })
        .collect();
    let raw = ExampleSet::new(config.time_unit, groups).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let set = compute_latencies(&raw, config.time_unit).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let truth = GroundTruth {
        params: edges.iter().map(|e| (*e, truth.params[e])).collect(),
    };
    Ok((set, truth))
}

/// A simulated timeline and the examples the simulation generated along it.
#[derive(Debug, Clone)]
pub struct SynthEvents {
    pub events: Vec<MessageEvent>,
    pub examples: ExampleSet,
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Pending {
    time: Timestamp,
    seq: u64,
    user: UserId,
    message: MessageId,
    source: Option<MessageId>,
    content: MessageId,
}

/// Simulates posts and retweets on the follow graph.
///
/// Every user posts by the exposure process. Each post or retweet exposes the
/// carried message to every follower that neither wrote it nor retweeted it
/// yet; the follower retweets it `response_delay` seconds later with the
/// edge's decay probability, which exposes the follower's own followers in
/// turn. A follower already waiting to retweet the message is not redrawn.
/// When a retweet fires, every earlier exposure of the follower to that
/// message becomes positive, whichever edge drew it.
pub fn generate_event_log(graph: &FollowGraph, truth: &GroundTruth, config: &SynthConfig) -> Result<SynthEvents, SynthError> {
    config.validate()?;
    for e in graph.edges() {
        if !truth.params.contains_key(e) {
            return Err(SynthError::MissingTruth(*e));
        }
    }
    let mut users: Vec<UserId> = graph.edges().iter().flat_map(|e| [e.followee, e.follower]).collect();
    users.sort();
    users.dedup();

    let mut queue = BinaryHeap::new();
    let mut seq = 0u64;
    let mut next_id = 1u64;
    let mut author: HashMap<MessageId, UserId> = HashMap::new();
    for &user in &users {
        let mut rng = stream(config.seed, &[TAG_POSTS, user.0]);
        let mut t = config.start_time;
        let mut count = 0;
        loop {
            t += config.process.gap(&mut rng);
            if t > config.end_time() || config.max_exposures.is_some_and(|cap| count >= cap) {
                break;
            }
            let message = MessageId(next_id);
            next_id += 1;
            count += 1;
            author.insert(message, user);
            queue.push(Reverse(Pending {
                time: t,
                seq,
                user,
                message,
                source: None,
                content: message,
            }));
            seq += 1;
        }
    }

    let mut retweet_at: HashMap<(UserId, MessageId), Timestamp> = HashMap::new();
    let mut clocks: HashMap<EdgeKey, ActivationClock> = HashMap::new();
    let mut label_rngs: HashMap<EdgeKey, ChaCha8Rng> = HashMap::new();
    let mut exposed: HashSet<(EdgeKey, MessageId)> = HashSet::new();
    let mut open: HashMap<(UserId, MessageId), Vec<(EdgeKey, usize)>> = HashMap::new();
    let mut groups: BTreeMap<EdgeKey, Vec<Example>> = graph.edges().iter().map(|e| (*e, Vec::new())).collect();
    let mut events = Vec::new();

    while let Some(Reverse(ev)) = queue.pop() {
        let t = ev.time;
        if ev.source.is_some() {
            for (edge, idx) in open.remove(&(ev.user, ev.content)).unwrap_or_default() {
                let ex = &mut groups.get_mut(&edge).expect("graph edge")[idx];
                ex.label = true;
                ex.response_time = Some(t);
                clocks
                    .entry(edge)
                    .or_insert_with(|| ActivationClock::new(config.start_time, config.time_unit))
                    .record(t);
            }
        }
        for &follower in graph.followers(ev.user) {
            if author.get(&ev.content) == Some(&follower) {
                continue;
            }
            let edge = EdgeKey {
                followee: ev.user,
                follower,
            };
            let pending = retweet_at.get(&(follower, ev.content)).copied();
            if matches!(pending, Some(rt) if rt <= t) || !exposed.insert((edge, ev.content)) {
                continue;
            }
            if pending.is_none() {
                let clock = clocks
                    .entry(edge)
                    .or_insert_with(|| ActivationClock::new(config.start_time, config.time_unit));
                let rng = label_rngs
                    .entry(edge)
                    .or_insert_with(|| stream(config.seed, &[TAG_LABEL, edge.followee.0, edge.follower.0]));
                let p = truth.params[&edge].probability_at(clock.latency(t));
                if rng.random::<f64>() < p {
                    let rt = t + config.response_delay;
                    retweet_at.insert((follower, ev.content), rt);
                    queue.push(Reverse(Pending {
                        time: rt,
                        seq,
                        user: follower,
                        message: MessageId(next_id),
                        source: Some(ev.message),
                        content: ev.content,
                    }));
                    seq += 1;
                    next_id += 1;
                }
            }
            let examples = groups.get_mut(&edge).expect("graph edge");
            open.entry((follower, ev.content)).or_default().push((edge, examples.len()));
            examples.push(Example {
                edge,
                message: ev.content,
                exposure_time: t,
                label: false,
                latency: None,
                response_time: None,
            });
        }
        events.push(MessageEvent {
            user: ev.user,
            message: ev.message,
            timestamp: t,
            kind: if ev.source.is_some() { EventKind::Retweet } else { EventKind::Post },
            source_message: ev.source,
        });
    }

    let raw = ExampleSet::new(config.time_unit, groups).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let examples = compute_latencies(&raw, config.time_unit).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    Ok(SynthEvents { events, examples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_users: 30,
            n_edges: 90,
            max_exposures: Some(100),
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn two_users_one_edge() {
        let g = generate_graph(&SynthConfig {
            n_users: 2,
            n_edges: 1,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn infeasible_edge_count() {
        let err = generate_graph(&SynthConfig {
            n_users: 3,
            n_edges: 7,
            ..Default::default()
        })
        .unwrap_err();
        assert_eq!(err, SynthError::InfeasibleEdges { users: 3, edges: 7 });
    }

    #[test]
    fn dense_graph_via_index_sampling() {
        let g = generate_graph(&SynthConfig {
            n_users: 5,
            n_edges: 20,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(g.len(), 20);
    }

    #[test]
    fn same_seed_same_graph() {
        let a = generate_graph(&small(4)).unwrap();
        let b = generate_graph(&small(4)).unwrap();
        let c = generate_graph(&small(5)).unwrap();
        assert_eq!(a.edges(), b.edges());
        assert_ne!(a.edges(), c.edges());
    }

    #[test]
    fn zero_q_gives_no_positives() {
        let config = SynthConfig {
            q_range: (0.0, 0.0),
            ..small(1)
        };
        let g = generate_graph(&config).unwrap();
        let truth = draw_ground_truth(&g, &config);
        let (set, _) = generate_examples(&g, &truth, &config).unwrap();
        assert!(!set.is_empty());
        assert_eq!(set.positives(), 0);
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig::default().validate().is_ok());
        for bad in [
            SynthConfig {
                q_range: (0.5, 1.5),
                ..Default::default()
            },
            SynthConfig {
                horizon: 0,
                ..Default::default()
            },
            SynthConfig {
                process: ExposureProcess::HeavyTailed {
                    exponent: 1.0,
                    min_gap: 1.0,
                },
                ..Default::default()
            },
            SynthConfig {
                process: ExposureProcess::Poisson { rate: 0.0 },
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn missing_truth_rejected() {
        let config = small(2);
        let g = generate_graph(&config).unwrap();
        let empty = GroundTruth { params: BTreeMap::new() };
        assert!(matches!(generate_examples(&g, &empty, &config), Err(SynthError::MissingTruth(_))));
    }

    #[test]
    fn generated_latencies_are_corpus_latencies() {
        let config = small(3);
        let g = generate_graph(&config).unwrap();
        let truth = draw_ground_truth(&g, &config);
        let (set, _) = generate_examples(&g, &truth, &config).unwrap();
        let recomputed = compute_latencies(&set, config.time_unit).unwrap();
        assert_eq!(set, recomputed);
        for (edge, ex) in set.groups() {
            let first_pos = ex.iter().position(|e| e.label);
            for (i, e) in ex.iter().enumerate() {
                assert_eq!(e.latency.is_none(), first_pos.is_none_or(|f| i <= f), "edge {edge} example {i}");
            }
        }
    }
}
