//! Acceptance suite. Prints one line per criterion and exits non-zero if any
//! criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use cascadecay::estimators::{decay_probability, fit_decay_map, fit_mle, run_em, EmConfig, FitConfig, OptimizerConfig};
use cascadecay::evaluation::{perplexity, roc_auc, PhaseSpec, PredictionRecord};
use cascadecay::experiment::{evaluate_models, viral_marketing, ImConfig};
use cascadecay::rng::stream;
use cascadecay::scaling::{fit_curve, propagation_ratio_curve, FitRange, LogBinning};
use cascadecay::synthgen::{
    draw_ground_truth, generate_event_log, generate_examples, generate_graph, ExposureProcess, GroundTruth, SynthConfig,
};
use cascadecay::viral::{
    build_propagation_network, celfpp_select, expected_spread_mc, exact_spread_enum, pseudo_actual_spread, ExactSpread,
    SpreadEstimator, WeightedDiGraph,
};
use cascadecay::{Diagnostics, EdgeKey, Example, ExampleSet, MessageId, ModelKind, Priors, UserId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, started: Instant) -> (bool, String) {
    let took = started.elapsed();
    (took < limit, format!("{:.2}s of {}s allowed", took.as_secs_f64(), limit.as_secs()))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn synth_set(config: &SynthConfig) -> (ExampleSet, GroundTruth) {
    let graph = generate_graph(config).unwrap();
    let truth = draw_ground_truth(&graph, config);
    generate_examples(&graph, &truth, config).unwrap()
}

fn decay_arithmetic() -> Outcome {
    let started = Instant::now();
    let exact = decay_probability(cascadecay::EdgeParams::new(0.64, 1.0), 4.0).unwrap();
    let mut rng = stream(101, &[]);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let q: f64 = rng.random();
        let alpha = 10.0 * rng.random::<f64>();
        if decay_probability(cascadecay::EdgeParams::new(q, alpha), 1.0).unwrap() != q {
            mismatches += 1;
        }
    }
    let (fast, time) = within(Duration::from_secs(1), started);
    check(
        exact == 0.16 && mismatches == 0 && fast,
        format!("P(0.64, 1, 4) = {exact}; {mismatches}/1000 tau=1 mismatches; {time}"),
    )
}

fn parameter_recovery() -> Outcome {
    let started = Instant::now();
    let config = SynthConfig {
        n_users: 100,
        n_edges: 200,
        process: ExposureProcess::HeavyTailed {
            exponent: 2.0,
            min_gap: 600.0,
        },
        horizon: 1_000_000_000_000,
        max_exposures: Some(2_000),
        seed: 2,
        ..SynthConfig::default()
    };
    let (set, truth) = synth_set(&config);
    let min_len = set.groups().map(|(_, ex)| ex.len()).min().unwrap_or(0);
    let model = fit_decay_map(&set, &Priors::default(), &OptimizerConfig::default(), None, &mut Diagnostics::new()).unwrap();
    let dq = median(truth.params.iter().map(|(e, p)| (model.params(e).q - p.q).abs()).collect());
    let da = median(truth.params.iter().map(|(e, p)| (model.params(e).alpha - p.alpha).abs()).collect());
    let (fast, time) = within(Duration::from_secs(120), started);
    check(
        set.num_edges() == 200 && min_len >= 2000 && dq <= 0.05 && da <= 0.10 && fast,
        format!("{} edges, >= {min_len} examples each; median |dq| = {dq:.4}, median |da| = {da:.4}; {time}", set.num_edges()),
    )
}

fn global_scaling() -> Outcome {
    let started = Instant::now();
    let config = SynthConfig {
        n_users: 100,
        n_edges: 200,
        alpha_range: (0.71, 0.71),
        process: ExposureProcess::HeavyTailed {
            exponent: 2.0,
            min_gap: 600.0,
        },
        horizon: 1_000_000_000_000,
        max_exposures: Some(2_000),
        seed: 3,
        ..SynthConfig::default()
    };
    let (set, _) = synth_set(&config);
    let curve = propagation_ratio_curve(&set, LogBinning::new(10f64.powf(0.1), 200).unwrap()).unwrap();
    let fit = fit_curve(&curve, FitRange::default(), &mut Diagnostics::new()).unwrap();
    let (fast, time) = within(Duration::from_secs(60), started);
    check(
        (fit.slope + 0.71).abs() <= 0.07 && fast,
        format!("slope {:.4} over {} bins; {time}", fit.slope, fit.n_points),
    )
}

fn model_ranking() -> Outcome {
    let mut wins = 0;
    let mut gaps = Vec::new();
    for seed in 0..10 {
        let (set, _) = synth_set(&SynthConfig {
            seed,
            ..SynthConfig::default()
        });
        let rows = evaluate_models(&set, &[0.9], &ModelKind::ALL, &FitConfig::default(), &mut Diagnostics::new()).unwrap();
        let decay = rows.iter().find(|r| r.model == ModelKind::Decay).unwrap().auc;
        let best_static = rows.iter().filter(|r| r.model.is_static()).map(|r| r.auc).fold(f64::MIN, f64::max);
        gaps.push(decay - best_static);
        wins += usize::from(decay - best_static >= 0.02);
    }
    let smallest = gaps.iter().copied().fold(f64::MAX, f64::min);
    check(wins >= 9, format!("{wins}/10 corpora with a gap >= 0.02; smallest gap {smallest:.4}"))
}

fn record(label: bool, probability: f64) -> PredictionRecord {
    PredictionRecord {
        edge: EdgeKey::new(0, 1),
        label,
        probability,
        latency: 1.0,
    }
}

fn metric_exactness() -> Outcome {
    let mut rng = stream(105, &[]);
    let labels: Vec<bool> = (0..500).map(|_| rng.random::<f64>() < 0.3).collect();
    let perfect: Vec<PredictionRecord> = labels.iter().map(|&l| record(l, if l { 1.0 } else { 0.0 })).collect();
    let coin: Vec<PredictionRecord> = labels.iter().map(|&l| record(l, 0.5)).collect();
    let p1 = perplexity(&perfect).unwrap();
    let p2 = perplexity(&coin).unwrap();

    // scores on a coarse grid so ties are common
    let records: Vec<PredictionRecord> = (0..2000)
        .map(|_| {
            let label = rng.random::<f64>() < 0.4;
            let score = (rng.random::<f64>() * 50.0).floor() / 50.0;
            record(label, if label { (score + 0.1).min(1.0) } else { score })
        })
        .collect();
    let auc = roc_auc(&records).unwrap().auc;
    let (mut wins, mut pairs) = (0.0, 0.0);
    for p in records.iter().filter(|r| r.label) {
        for n in records.iter().filter(|r| !r.label) {
            pairs += 1.0;
            wins += if p.probability > n.probability {
                1.0
            } else if p.probability == n.probability {
                0.5
            } else {
                0.0
            };
        }
    }
    let brute = wins / pairs;
    check(
        p1 == 1.0 && (p2 - 2.0).abs() <= 1e-9 && (auc - brute).abs() <= 1e-12,
        format!("perplexity {p1} and {p2}; AUC {auc} vs pair count {brute}"),
    )
}

fn random_small_graph(rng: &mut ChaCha8Rng) -> WeightedDiGraph {
    let n = rng.random_range(2..=6u64);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a != b && rng.random::<f64>() < 0.4 && edges.len() < 16 {
                edges.push((EdgeKey::new(a, b), rng.random::<f64>()));
            }
        }
    }
    WeightedDiGraph::new((0..n).map(UserId), edges).unwrap()
}

/// Greedy that evaluates every remaining candidate at every step.
fn exhaustive_greedy(est: &ExactSpread, k: usize) -> Vec<usize> {
    let n = est.graph().num_nodes();
    let mut seeds = Vec::new();
    while seeds.len() < k {
        let mut best: Option<(f64, usize)> = None;
        for v in (0..n).filter(|v| !seeds.contains(v)) {
            let mut with = seeds.clone();
            with.push(v);
            let s = est.spread(&with);
            if best.is_none_or(|(b, _)| s > b) {
                best = Some((s, v));
            }
        }
        seeds.push(best.unwrap().1);
    }
    seeds
}

fn im_correctness() -> Outcome {
    let started = Instant::now();
    let mut rng = stream(106, &[]);
    let mut mismatched = 0;
    for _ in 0..100 {
        let g = random_small_graph(&mut rng);
        let k = rng.random_range(1..=3usize).min(g.num_nodes());
        let est = ExactSpread::new(&g).unwrap();
        let lazy = celfpp_select(&est, k, &mut Diagnostics::new()).unwrap();
        let lazy_idx: Vec<usize> = lazy.nodes.iter().map(|u| g.index_of(*u).unwrap()).collect();
        let greedy = exhaustive_greedy(&est, k);
        if (est.spread(&lazy_idx) - est.spread(&greedy)).abs() > 1e-9 {
            mismatched += 1;
        }
    }
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let g = random_small_graph(&mut rng);
        let seeds = [g.nodes()[0]];
        let exact = exact_spread_enum(&g, &seeds).unwrap();
        let mc = expected_spread_mc(&g, &seeds, 200_000, i).unwrap();
        worst = worst.max((mc - exact).abs() / exact);
    }
    let (fast, time) = within(Duration::from_secs(300), started);
    check(
        mismatched == 0 && worst <= 0.005 && fast,
        format!("{mismatched}/100 lazy vs exhaustive mismatches; worst MC relative error {:.4}%; {time}", 100.0 * worst),
    )
}

/// Positive exposures in `[start, end)` define the live edges; a queue
/// traversal counts what the seeds reach.
fn traversal_oracle(examples: &[Example], users: &BTreeSet<UserId>, window: (i64, i64), seeds: &[UserId]) -> usize {
    let mut out: HashMap<UserId, BTreeSet<UserId>> = HashMap::new();
    for e in examples {
        if e.label && e.exposure_time >= window.0 && e.exposure_time < window.1 {
            out.entry(e.edge.followee).or_default().insert(e.edge.follower);
        }
    }
    let mut seen: BTreeSet<UserId> = seeds.iter().copied().filter(|s| users.contains(s)).collect();
    let mut queue: VecDeque<UserId> = seen.iter().copied().collect();
    while let Some(u) = queue.pop_front() {
        for v in out.get(&u).into_iter().flatten() {
            if seen.insert(*v) {
                queue.push_back(*v);
            }
        }
    }
    seen.len()
}

fn pseudo_actual() -> Outcome {
    let mut rng = stream(107, &[]);
    let mut disagreements = 0;
    let mut unstable = 0;
    for _ in 0..100 {
        let n = rng.random_range(3..30u64);
        let mut groups: BTreeMap<EdgeKey, Vec<Example>> = BTreeMap::new();
        let mut users = BTreeSet::new();
        let mut msg = 0;
        for _ in 0..rng.random_range(1..(3 * n)) {
            let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
            if a == b {
                continue;
            }
            let edge = EdgeKey::new(a, b);
            users.insert(UserId(a));
            users.insert(UserId(b));
            let list = groups.entry(edge).or_default();
            let t = list.last().map_or(0, |e| e.exposure_time) + rng.random_range(0..100);
            msg += 1;
            let label = rng.random::<f64>() < 0.5;
            list.push(Example {
                edge,
                message: MessageId(msg),
                exposure_time: t,
                label,
                latency: None,
                response_time: label.then_some(t + 1),
            });
        }
        let set = ExampleSet::new(3600.0, groups).unwrap();
        let flat: Vec<Example> = set.iter().cloned().collect();
        let window = (rng.random_range(0..50), rng.random_range(50..300));
        let net = build_propagation_network(&set, window).unwrap();
        let seeds: Vec<UserId> = (0..rng.random_range(1..4)).map(|_| UserId(rng.random_range(0..n + 2))).collect();
        let got = pseudo_actual_spread(&net, &seeds);
        disagreements += usize::from(got != traversal_oracle(&flat, &users, window, &seeds));
        let again = build_propagation_network(&set, window).unwrap();
        unstable += usize::from(pseudo_actual_spread(&again, &seeds) != got);
    }
    check(
        disagreements == 0 && unstable == 0,
        format!("{disagreements}/100 oracle disagreements; {unstable}/100 runs differed on repeat"),
    )
}

fn end_to_end() -> Outcome {
    let mut wins = 0;
    let mut margins = Vec::new();
    for seed in 0..20 {
        let (set, _) = synth_set(&SynthConfig {
            seed,
            ..SynthConfig::default()
        });
        let im = ImConfig {
            k: 10,
            mc_runs: 1_000,
            seed,
            phases: PhaseSpec::default(),
            group: 0,
        };
        let outcomes = viral_marketing(&set, &ModelKind::ALL, &im, &FitConfig::default(), &mut Diagnostics::new()).unwrap();
        let spread_of = |o: &cascadecay::experiment::ImOutcome| o.spreads.last().copied().unwrap_or(0) as i64;
        let decay = outcomes.iter().find(|o| o.model == ModelKind::Decay).map(spread_of).unwrap();
        let best_static = outcomes.iter().filter(|o| o.model.is_static()).map(spread_of).max().unwrap();
        margins.push(decay - best_static);
        wins += usize::from(decay >= best_static);
    }
    check(wins >= 16, format!("{wins}/20 corpora where decay seeds reach at least the best static spread; margins {margins:?}"))
}

fn em_sanity() -> Outcome {
    let mut decreases = 0;
    let mut multi_parent = 0;
    for seed in 0..20 {
        let config = SynthConfig {
            n_users: 25,
            n_edges: 150,
            q_range: (0.05, 0.4),
            max_exposures: Some(40),
            seed,
            ..SynthConfig::default()
        };
        let graph = generate_graph(&config).unwrap();
        let truth = draw_ground_truth(&graph, &config);
        let set = generate_event_log(&graph, &truth, &config).unwrap().examples;
        let mut parents: HashMap<(UserId, MessageId), usize> = HashMap::new();
        for e in set.iter().filter(|e| e.label) {
            *parents.entry((e.edge.follower, e.message)).or_default() += 1;
        }
        multi_parent += usize::from(parents.values().any(|&c| c > 1));
        let run = run_em(&set, &EmConfig::default(), &mut Diagnostics::new()).unwrap();
        decreases += run
            .log_likelihood
            .windows(2)
            .filter(|w| w[1] < w[0] - 1e-12 * w[0].abs())
            .count();
    }
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let (set, _) = synth_set(&SynthConfig {
            n_users: 40,
            n_edges: 120,
            max_exposures: Some(100),
            seed,
            ..SynthConfig::default()
        });
        let em = run_em(&set, &EmConfig::default(), &mut Diagnostics::new()).unwrap().model;
        let mle = fit_mle(&set);
        for e in set.edges() {
            worst = worst.max((em.params(&e).q - mle.params(&e).q).abs());
        }
    }
    check(
        decreases == 0 && multi_parent == 20 && worst <= 1e-6,
        format!(
            "{decreases} likelihood decreases over 20 cascade corpora ({multi_parent} with shared retweets); single-parent max |EM - MLE| = {worst:e}"
        ),
    )
}

fn run_cli(args: &[&str], threads: Option<&str>) -> Result<(), String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cascadecay"));
    cmd.args(args).env_remove("CASCADECAY_THREADS");
    if let Some(t) = threads {
        cmd.env("CASCADECAY_THREADS", t);
    }
    let out = cmd.output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline(root: &Path, threads: Option<&str>) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let p = |name: &str| root.join(name).to_str().unwrap().to_string();
    let examples = root.join("synth").join("examples.tsv");
    let ex = examples.to_str().unwrap();
    run_cli(&["synth", "--seed", "10", "--out", &p("synth"), "--n-users", "80", "--n-edges", "300", "--exposures", "200"], threads)?;
    run_cli(&["fit", "--input", ex, "--out", &p("fit")], threads)?;
    run_cli(&["evaluate", "--input", ex, "--out", &p("evaluate"), "--ratio", "0.5,0.9"], threads)?;
    run_cli(&["im", "--input", ex, "--out", &p("im"), "--seed", "10", "--k", "5", "--mc-runs", "500"], threads)?;
    let mut files = BTreeMap::new();
    for stage in ["synth", "fit", "evaluate", "im"] {
        for entry in fs::read_dir(root.join(stage)).map_err(|e| e.to_string())? {
            let entry = entry.map_err(|e| e.to_string())?;
            let bytes = fs::read(entry.path()).map_err(|e| e.to_string())?;
            files.insert(format!("{stage}/{}", entry.file_name().to_string_lossy()), bytes);
        }
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs = [("default-a", None), ("default-b", None), ("threads-1", Some("1")), ("threads-4", Some("4"))];
    let mut outputs = Vec::new();
    for (name, threads) in runs {
        outputs.push((name, pipeline(&dir.path().join(name), threads)?));
    }
    let reference = &outputs[0].1;
    let differing: Vec<&str> = outputs.iter().filter(|(_, o)| o != reference).map(|(n, _)| *n).collect();
    check(
        differing.is_empty(),
        format!("{} artifacts compared over {} runs; differing runs: {differing:?}", reference.len(), outputs.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("decay arithmetic", decay_arithmetic),
        ("parameter recovery", parameter_recovery),
        ("global scaling", global_scaling),
        ("model ranking", model_ranking),
        ("metric exactness", metric_exactness),
        ("IM correctness", im_correctness),
        ("pseudo-actual spread", pseudo_actual),
        ("end-to-end pipeline", end_to_end),
        ("EM sanity", em_sanity),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let (status, detail) = match run() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {status} {name}: {detail}", i + 1);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
