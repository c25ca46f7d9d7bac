//! Influence maximization under the independent cascade model.
//!
//! Spread is estimated on live-edge samples: every edge is live with its
//! probability and the spread of a seed set is the number of nodes reachable
//! from it. Monte Carlo coins are counter based, one uniform per
//! `(replica, edge)`, so every candidate in every greedy round sees the same
//! random worlds.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{EdgeKey, ExampleSet, Timestamp, UserId};
use crate::diag::Diagnostics;
use crate::rng::{stream_key, unit_at};

/// Largest edge count [`ExactSpread`] will enumerate.
pub const MAX_EXACT_EDGES: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum ViralError {
    #[error("edge {edge} has probability {p}, outside [0, 1]")]
    InvalidProbability { edge: EdgeKey, p: f64 },
    #[error("edge {0} appears more than once")]
    ParallelEdge(EdgeKey),
    #[error("seed {0} is not a node of the graph")]
    UnknownSeed(UserId),
    #[error("exact enumeration supports at most {MAX_EXACT_EDGES} edges, the graph has {0}")]
    TooManyEdges(usize),
    #[error("at least one simulation is required")]
    NoRuns,
    #[error("seed set size must be at least 1")]
    ZeroK,
    #[error("window [{0}, {1}) is reversed")]
    InvalidWindow(Timestamp, Timestamp),
}

/// Directed graph with a propagation probability per edge, stored as
/// compressed adjacency over nodes sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDiGraph {
    nodes: Vec<UserId>,
    index: HashMap<UserId, usize>,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    probs: Vec<f64>,
}

impl WeightedDiGraph {
    /// Builds the graph from extra isolated `nodes` plus the endpoints of
    /// `edges`.
    pub fn new(
        nodes: impl IntoIterator<Item = UserId>,
        edges: impl IntoIterator<Item = (EdgeKey, f64)>,
    ) -> Result<Self, ViralError> {
        let mut weighted: BTreeMap<EdgeKey, f64> = BTreeMap::new();
        let mut node_set: BTreeSet<UserId> = nodes.into_iter().collect();
        for (edge, p) in edges {
            if !(0.0..=1.0).contains(&p) {
                return Err(ViralError::InvalidProbability { edge, p });
            }
            if weighted.insert(edge, p).is_some() {
                return Err(ViralError::ParallelEdge(edge));
            }
            node_set.insert(edge.followee);
            node_set.insert(edge.follower);
        }
        let nodes: Vec<UserId> = node_set.into_iter().collect();
        let index: HashMap<UserId, usize> = nodes.iter().enumerate().map(|(i, u)| (*u, i)).collect();
        let mut offsets = vec![0; nodes.len() + 1];
        let mut targets = Vec::with_capacity(weighted.len());
        let mut probs = Vec::with_capacity(weighted.len());
        // BTreeMap order is by followee, then follower: already CSR order.
        for (edge, p) in &weighted {
            offsets[index[&edge.followee] + 1] += 1;
            targets.push(index[&edge.follower]);
            probs.push(*p);
        }
        for i in 0..nodes.len() {
            offsets[i + 1] += offsets[i];
        }
        Ok(Self {
            nodes,
            index,
            offsets,
            targets,
            probs,
        })
    }

    pub fn nodes(&self) -> &[UserId] {
        &self.nodes
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }

    pub fn index_of(&self, user: UserId) -> Option<usize> {
        self.index.get(&user).copied()
    }

    /// Edges in `(followee, follower)` order with their probabilities.
    pub fn edges(&self) -> impl Iterator<Item = (EdgeKey, f64)> + '_ {
        (0..self.nodes.len()).flat_map(move |u| {
            (self.offsets[u]..self.offsets[u + 1]).map(move |e| {
                (
                    EdgeKey {
                        followee: self.nodes[u],
                        follower: self.nodes[self.targets[e]],
                    },
                    self.probs[e],
                )
            })
        })
    }

    fn resolve(&self, seeds: &[UserId]) -> Result<Vec<usize>, ViralError> {
        seeds
            .iter()
            .map(|s| self.index_of(*s).ok_or(ViralError::UnknownSeed(*s)))
            .collect()
    }

    /// Counts nodes newly reached from `sources`, continuing from the marks
    /// already in `visited`. `live(e)` decides whether edge `e` transmits.
    fn extend_reach(&self, sources: &[usize], visited: &mut Scratch, live: impl Fn(usize) -> bool) -> u64 {
        let mut count = 0;
        let queue = &mut visited.queue;
        queue.clear();
        for &s in sources {
            if visited.stamp[s] != visited.epoch {
                visited.stamp[s] = visited.epoch;
                queue.push(s);
                count += 1;
            }
        }
        while let Some(u) = queue.pop() {
            for e in self.offsets[u]..self.offsets[u + 1] {
                let v = self.targets[e];
                if visited.stamp[v] != visited.epoch && live(e) {
                    visited.stamp[v] = visited.epoch;
                    queue.push(v);
                    count += 1;
                }
            }
        }
        count
    }
}

/// Reusable traversal state: a node is visited iff its stamp equals the
/// current epoch.
struct Scratch {
    stamp: Vec<u32>,
    epoch: u32,
    queue: Vec<usize>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            stamp: vec![0; n],
            epoch: 0,
            queue: Vec::new(),
        }
    }

    fn reset(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.fill(0);
            self.epoch = 1;
        }
    }
}

/// Expected-spread oracle over node indices of one graph.
pub trait SpreadEstimator: Sync {
    fn graph(&self) -> &WeightedDiGraph;

    fn spread(&self, seeds: &[usize]) -> f64;

    /// `spread(seeds + candidate) - spread(seeds)`.
    fn gain(&self, seeds: &[usize], candidate: usize) -> f64 {
        let mut with = seeds.to_vec();
        with.push(candidate);
        self.spread(&with) - self.spread(seeds)
    }
}

/// Live-edge Monte Carlo estimate over `runs` replicas.
#[derive(Debug, Clone)]
pub struct MonteCarloSpread<'a> {
    graph: &'a WeightedDiGraph,
    runs: u64,
    seed: u64,
}

impl<'a> MonteCarloSpread<'a> {
    pub fn new(graph: &'a WeightedDiGraph, runs: u64, seed: u64) -> Result<Self, ViralError> {
        if runs == 0 {
            return Err(ViralError::NoRuns);
        }
        Ok(Self { graph, runs, seed })
    }

    /// Sums a per-replica integer count. Integer addition keeps the result
    /// independent of how replicas are spread over threads.
    fn total(&self, per_replica: impl Fn(&mut Scratch, &dyn Fn(usize) -> bool) -> u64 + Sync) -> u64 {
        let g = self.graph;
        (0..self.runs)
            .into_par_iter()
            .map_init(
                || Scratch::new(g.num_nodes()),
                |scratch, r| {
                    let key = stream_key(self.seed, &[r]);
                    let live = |e: usize| unit_at(key, e as u64) < g.probs[e];
                    scratch.reset();
                    per_replica(scratch, &live)
                },
            )
            .sum()
    }
}

impl SpreadEstimator for MonteCarloSpread<'_> {
    fn graph(&self) -> &WeightedDiGraph {
        self.graph
    }

    fn spread(&self, seeds: &[usize]) -> f64 {
        let total = self.total(|s, live| self.graph.extend_reach(seeds, s, live));
        total as f64 / self.runs as f64
    }

    fn gain(&self, seeds: &[usize], candidate: usize) -> f64 {
        let total = self.total(|s, live| {
            self.graph.extend_reach(seeds, s, live);
            self.graph.extend_reach(&[candidate], s, live)
        });
        total as f64 / self.runs as f64
    }
}

/// Exact expectation by enumerating all `2^|E|` live-edge configurations.
#[derive(Debug, Clone)]
pub struct ExactSpread<'a> {
    graph: &'a WeightedDiGraph,
}

impl<'a> ExactSpread<'a> {
    pub fn new(graph: &'a WeightedDiGraph) -> Result<Self, ViralError> {
        if graph.num_edges() > MAX_EXACT_EDGES {
            return Err(ViralError::TooManyEdges(graph.num_edges()));
        }
        Ok(Self { graph })
    }
}

/// Probability of the live-edge configuration whose live edges are the set
/// bits of `mask`.
fn configuration_weight(probs: &[f64], mask: u32) -> f64 {
    probs
        .iter()
        .enumerate()
        .map(|(e, p)| if mask >> e & 1 == 1 { *p } else { 1.0 - p })
        .product()
}

impl SpreadEstimator for ExactSpread<'_> {
    fn graph(&self) -> &WeightedDiGraph {
        self.graph
    }

    fn spread(&self, seeds: &[usize]) -> f64 {
        let g = self.graph;
        let mut scratch = Scratch::new(g.num_nodes());
        let mut total = 0.0;
        for mask in 0u32..(1 << g.num_edges()) {
            let w = configuration_weight(&g.probs, mask);
            if w == 0.0 {
                continue;
            }
            scratch.reset();
            total += w * g.extend_reach(seeds, &mut scratch, |e| mask >> e & 1 == 1) as f64;
        }
        total
    }
}

/// Monte Carlo expected spread of `seeds` with `runs` replicas.
pub fn expected_spread_mc(graph: &WeightedDiGraph, seeds: &[UserId], runs: u64, seed: u64) -> Result<f64, ViralError> {
    let idx = graph.resolve(seeds)?;
    Ok(MonteCarloSpread::new(graph, runs, seed)?.spread(&idx))
}

/// Exact expected spread; refuses graphs with more than
/// [`MAX_EXACT_EDGES`] edges.
pub fn exact_spread_enum(graph: &WeightedDiGraph, seeds: &[UserId]) -> Result<f64, ViralError> {
    let idx = graph.resolve(seeds)?;
    Ok(ExactSpread::new(graph)?.spread(&idx))
}

/// Selected seeds in pick order with the marginal gain of each pick.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSet {
    pub nodes: Vec<UserId>,
    pub gains: Vec<f64>,
}

impl SeedSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Sum of the marginal gains, i.e. the estimated spread of the set.
    pub fn estimated_spread(&self) -> f64 {
        self.gains.iter().sum()
    }

    /// Writes `rank,node_id,marginal_gain` rows, ranks from 1.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "rank,node_id,marginal_gain")?;
        for (i, (u, g)) in self.nodes.iter().zip(&self.gains).enumerate() {
            writeln!(w, "{},{u},{g}", i + 1)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    gain: f64,
    node: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // Max-heap: larger gain first, then lower node index (lower id).
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain.total_cmp(&other.gain).then(other.node.cmp(&self.node))
    }
}

#[derive(Debug, Clone, Copy)]
struct NodeState {
    mg1: f64,
    mg2: f64,
    prev_best: Option<usize>,
    flag: usize,
}

/// CELF++ lazy-greedy selection of `k` seeds. Ties go to the lowest node id.
/// Asking for more seeds than nodes returns every node and warns
/// `k_exceeds_nodes`.
pub fn celfpp_select<E: SpreadEstimator + ?Sized>(
    estimator: &E,
    k: usize,
    diag: &mut Diagnostics,
) -> Result<SeedSet, ViralError> {
    if k == 0 {
        return Err(ViralError::ZeroK);
    }
    let graph = estimator.graph();
    let n = graph.num_nodes();
    let k = if k > n {
        diag.warn("viral", "k_exceeds_nodes", format!("k={k} exceeds the {n} nodes; selecting all"));
        n
    } else {
        k
    };

    let mut state = Vec::with_capacity(n);
    let mut heap = BinaryHeap::with_capacity(n);
    let mut cur_best: Option<usize> = None;
    for u in 0..n {
        let mg1 = estimator.gain(&[], u);
        let mg2 = match cur_best {
            Some(b) => estimator.gain(&[b], u),
            None => mg1,
        };
        state.push(NodeState {
            mg1,
            mg2,
            prev_best: cur_best,
            flag: 0,
        });
        heap.push(Entry { gain: mg1, node: u });
        if cur_best.is_none_or(|b| better(mg1, u, state[b].mg1, b)) {
            cur_best = Some(u);
        }
    }

    let mut seeds: Vec<usize> = Vec::with_capacity(k);
    let mut gains = Vec::with_capacity(k);
    let mut last_seed: Option<usize> = None;
    let mut cur_best: Option<usize> = None;
    while seeds.len() < k {
        let Entry { node: u, .. } = heap.pop().expect("heap holds every unselected node");
        let s = &mut state[u];
        if s.flag == seeds.len() {
            seeds.push(u);
            gains.push(s.mg1);
            last_seed = Some(u);
            cur_best = None;
            continue;
        }
        if s.flag + 1 == seeds.len() && s.prev_best.is_some() && s.prev_best == last_seed {
            s.mg1 = s.mg2;
        } else {
            s.mg1 = estimator.gain(&seeds, u);
            s.prev_best = cur_best;
            s.mg2 = match cur_best {
                Some(b) => {
                    let mut with = seeds.clone();
                    with.push(b);
                    estimator.gain(&with, u)
                }
                None => s.mg1,
            };
        }
        s.flag = seeds.len();
        let mg1 = s.mg1;
        if cur_best.is_none_or(|b| better(mg1, u, state[b].mg1, b)) {
            cur_best = Some(u);
        }
        heap.push(Entry { gain: mg1, node: u });
    }
    Ok(SeedSet {
        nodes: seeds.iter().map(|&i| graph.nodes[i]).collect(),
        gains,
    })
}

fn better(gain: f64, node: usize, best_gain: f64, best: usize) -> bool {
    Entry { gain, node } > Entry { gain: best_gain, node: best }
}

/// Edges that carried at least one positive exposure inside a window, over
/// every user of the example set.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationNetwork {
    pub window: (Timestamp, Timestamp),
    nodes: BTreeSet<UserId>,
    adjacency: BTreeMap<UserId, Vec<UserId>>,
}

impl PropagationNetwork {
    pub fn nodes(&self) -> &BTreeSet<UserId> {
        &self.nodes
    }

    pub fn edges(&self) -> impl Iterator<Item = EdgeKey> + '_ {
        self.adjacency
            .iter()
            .flat_map(|(u, vs)| vs.iter().map(move |v| EdgeKey { followee: *u, follower: *v }))
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.values().map(Vec::len).sum()
    }
}

/// Keeps edge `a -> b` iff some positive example on it was exposed in
/// `[start, end)`.
pub fn build_propagation_network(
    set: &ExampleSet,
    window: (Timestamp, Timestamp),
) -> Result<PropagationNetwork, ViralError> {
    let (start, end) = window;
    if start > end {
        return Err(ViralError::InvalidWindow(start, end));
    }
    let mut nodes = BTreeSet::new();
    let mut adjacency: BTreeMap<UserId, Vec<UserId>> = BTreeMap::new();
    for (edge, examples) in set.groups() {
        nodes.insert(edge.followee);
        nodes.insert(edge.follower);
        if examples.iter().any(|e| e.label && (start..end).contains(&e.exposure_time)) {
            adjacency.entry(edge.followee).or_default().push(edge.follower);
        }
    }
    Ok(PropagationNetwork {
        window,
        nodes,
        adjacency,
    })
}

/// Number of network nodes reachable from the seeds, seeds included.
/// Seeds outside the network's node set are ignored.
pub fn pseudo_actual_spread(net: &PropagationNetwork, seeds: &[UserId]) -> usize {
    let mut visited: BTreeSet<UserId> = BTreeSet::new();
    let mut frontier: Vec<UserId> = seeds
        .iter()
        .copied()
        .filter(|s| net.nodes.contains(s) && visited.insert(*s))
        .collect();
    while let Some(u) = frontier.pop() {
        for v in net.adjacency.get(&u).into_iter().flatten() {
            if visited.insert(*v) {
                frontier.push(*v);
            }
        }
    }
    visited.len()
}
