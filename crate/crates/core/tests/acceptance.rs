//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the lines always reach the console;
//! the process exits non-zero if any criterion fails.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use clap::Parser;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use critsel::cli::{run_with, Cli};
use critsel::env::maze::{expert_trajectory, make_split, Maze, MazeSpec, NoisyShortestPath};
use critsel::env::Environment;
use critsel::error::Result as CResult;
use critsel::ingest::write_dataset;
use critsel::mask::{masked_sample, EmitOptions, MaskedSample};
use critsel::seed;
use critsel::select::llm::{ChatRequest, ChatTransport};
use critsel::select::{
    enforce_cap, parse_response, perplexity, select_noncritical, select_random, select_top_perplexity, select_with_llm,
    EndpointConfig, PerplexityScope, SelectorPromptConfig, StepLogprobs,
};
use critsel::trainer::{
    gradient, masked_log_likelihood, regularized_objective, run_ablation, AblationConfig, AblationStrategy,
    LogLinearPolicy, FEATURE_DIM, REFERENCE_ROWS,
};
use critsel::trajectory::{CriticalSelection, Dataset, Step, StepCategory, Strategy, Trajectory};
use critsel::value::{
    build_value_selection, discounted_values, exact_success, flag_by_value_gap, value_gaps, value_profile, ValueConfig,
    ValueProfile,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: &str, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let took = start.elapsed();
    let in_time = limit.is_none_or(|l| took <= l);
    let pass = out.pass && in_time;
    let budget = limit.map(|l| format!(" < {}s", l.as_secs())).unwrap_or_default();
    println!(
        "{} [{id}] {name}: {} ({:.2}s{budget}{})",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        took.as_secs_f64(),
        if in_time { "" } else { ", over budget" }
    );
    pass
}

fn synthetic(id: &str, len: usize) -> Trajectory {
    Trajectory {
        id: id.to_string(),
        environment: "synthetic".into(),
        instruction: format!("task {id}"),
        steps: (0..len)
            .map(|i| Step {
                index: i,
                thought: format!("think {i}"),
                action: format!("act {i}"),
                observation: format!("obs {i}"),
            })
            .collect(),
        final_reward: Some(1.0),
    }
}

/// `max(1, floor(p * T / 100))` in integer arithmetic.
fn oracle_cap(percent: usize, len: usize) -> usize {
    (percent * len / 100).max(1)
}

struct FixedReply(String);

impl ChatTransport for FixedReply {
    fn complete(&self, _: &EndpointConfig, _: &ChatRequest) -> CResult<String> {
        Ok(self.0.clone())
    }
}

struct CountingReply {
    reply: String,
    calls: AtomicUsize,
}

impl ChatTransport for CountingReply {
    fn complete(&self, _: &EndpointConfig, _: &ChatRequest) -> CResult<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.reply.clone())
    }
}

// ---------------------------------------------------------------- 1

fn criterion_cap() -> Outcome {
    let mut rng = seed::rng(0xC0FFEE);
    let cases = 10_000;
    let mut violations = Vec::new();
    let mut checked = 0usize;
    let endpoint = EndpointConfig { max_retries: 0, retry_backoff_ms: 0, ..EndpointConfig::default() };
    for case in 0..cases {
        let len = rng.gen_range(1..=40);
        let percent = rng.gen_range(1..=100);
        let ratio = percent as f64 / 100.0;
        let t = synthetic(&format!("c{case}"), len);
        let bound = oracle_cap(percent, len);
        let check = |label: &str, s: &CriticalSelection, bound: usize, checked: &mut usize, v: &mut Vec<String>| {
            *checked += 1;
            let n = s.indices.len();
            let sorted = s.indices.windows(2).all(|w| w[0] < w[1]);
            if n < 1 || n > bound || bound > len || !sorted || s.indices.iter().any(|&i| i >= len) {
                v.push(format!("{label} T={len} ratio={ratio} got {:?}", s.indices));
            }
        };

        let random = select_random(&t, ratio, case as u64).unwrap();
        check("random", &random, bound, &mut checked, &mut violations);

        let lp = StepLogprobs {
            trajectory_id: t.id.clone(),
            steps: (0..len).map(|_| (0..rng.gen_range(1..6)).map(|_| -rng.gen_range(0.0..6.0)).collect()).collect(),
            thought_tokens: None,
        };
        check(
            "perplexity",
            &select_top_perplexity(&t, &lp, ratio, PerplexityScope::Joint).unwrap(),
            bound,
            &mut checked,
            &mut violations,
        );

        match select_noncritical(&t, &random, case as u64) {
            Ok(s) => check("noncritical", &s, bound, &mut checked, &mut violations),
            Err(e) => {
                checked += 1;
                if !(len == random.indices.len() && e.class() == "no-complement") {
                    violations.push(format!("noncritical T={len}: {e}"));
                }
            }
        }

        let listed: Vec<String> = (0..rng.gen_range(1..12))
            .map(|k| if k == 0 { rng.gen_range(1..=len) } else { rng.gen_range(1..=len + 3) })
            .map(|k| format!("conversation[{k}]"))
            .collect();
        let reply = FixedReply(format!(
            "The high-level plan is: go.\nThe critical steps are: {}\nReason: pivotal action.",
            listed.join(", ")
        ));
        let prompt = SelectorPromptConfig { ratio, observation_limit: 2000 };
        check(
            "llm",
            &select_with_llm(&t, &prompt, &endpoint, &reply, None).unwrap(),
            bound,
            &mut checked,
            &mut violations,
        );

        let r_hat: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let gamma = rng.gen_range(0.5..=1.0);
        let threshold = rng.gen_range(0.01..0.6);
        let values = discounted_values(&r_hat, gamma);
        let profile = ValueProfile {
            trajectory_id: t.id.clone(),
            gaps: value_gaps(&values),
            flagged: flag_by_value_gap(&values, threshold),
            r_hat,
            values,
            n: 5,
            gamma,
            threshold,
        };
        let v = build_value_selection(&t, &profile).unwrap();
        checked += 1;
        let ok = if profile.flagged.is_empty() {
            v.indices.len() == 1 && v.indices[0] < len
        } else {
            v.indices == profile.flagged && v.indices.iter().all(|&i| (1..len).contains(&i))
        };
        if !ok {
            violations.push(format!("value T={len}: {:?} flagged {:?}", v.indices, profile.flagged));
        }
    }
    Outcome {
        pass: violations.is_empty() && cases >= 10_000,
        detail: format!(
            "{cases} cases, {checked} selections over 5 strategies, {} violations{}",
            violations.len(),
            violations.first().map(|v| format!(" (first: {v})")).unwrap_or_default()
        ),
    }
}

// ---------------------------------------------------------------- 2

fn oracle_perplexity(lp: &[f64]) -> f64 {
    let mut mean = 0.0;
    for (k, x) in lp.iter().enumerate() {
        mean += (x - mean) / (k + 1) as f64;
    }
    (-mean).exp()
}

/// Best subset of size `k` by total perplexity; equal totals go to the
/// lexicographically smallest index list.
fn exhaustive_top(ppl: &[f64], k: usize) -> Vec<usize> {
    let n = ppl.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let total: f64 = idx.iter().map(|&i| ppl[i]).sum();
        best = match best {
            None => Some((total, idx)),
            Some((bt, bi)) => {
                let tol = 1e-12 * bt.abs().max(total.abs());
                if total > bt + tol || ((total - bt).abs() <= tol && idx < bi) {
                    Some((total, idx))
                } else {
                    Some((bt, bi))
                }
            }
        };
    }
    best.unwrap().1
}

fn criterion_perplexity() -> Outcome {
    let mut rng = seed::rng(0x9E37);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let v: Vec<f64> = (0..rng.gen_range(1..200)).map(|_| -rng.gen_range(0.0..8.0)).collect();
        let got = perplexity(&v).unwrap();
        let want = oracle_perplexity(&v);
        worst = worst.max((got - want).abs() / want);
    }
    let mut mismatches = 0;
    let mut trajectories = 0;
    for trial in 0..3000 {
        let len = rng.gen_range(1..=8);
        let percent = rng.gen_range(1..=100);
        // A small shared pool makes exact perplexity ties common.
        let pool: Vec<Vec<f64>> =
            (0..3).map(|_| (0..rng.gen_range(1..5)).map(|_| -rng.gen_range(0.0..4.0)).collect()).collect();
        let steps: Vec<Vec<f64>> = (0..len)
            .map(|_| {
                if rng.gen_bool(0.4) {
                    pool.choose(&mut rng).unwrap().clone()
                } else {
                    (0..rng.gen_range(1..5)).map(|_| -rng.gen_range(0.0..4.0)).collect()
                }
            })
            .collect();
        let t = synthetic(&format!("p{trial}"), len);
        let ppl: Vec<f64> = steps.iter().map(|s| oracle_perplexity(s)).collect();
        let lp = StepLogprobs { trajectory_id: t.id.clone(), steps, thought_tokens: None };
        let got = select_top_perplexity(&t, &lp, percent as f64 / 100.0, PerplexityScope::Joint).unwrap();
        trajectories += 1;
        if got.indices != exhaustive_top(&ppl, oracle_cap(percent, len)) {
            mismatches += 1;
        }
    }
    Outcome {
        pass: worst < 1e-12 && mismatches == 0,
        detail: format!(
            "max rel. error {worst:.1e} (< 1e-12) on 1000 vectors; {mismatches}/{trajectories} exhaustive-ranking mismatches for T <= 8"
        ),
    }
}

// ---------------------------------------------------------------- 3

/// Independent maze model: walls, moves and the noisy shortest-path policy
/// rebuilt from the spec alone.
struct OracleMaze {
    spec: MazeSpec,
    dist: HashMap<(usize, usize), usize>,
}

const MOVES: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

impl OracleMaze {
    fn new(spec: MazeSpec) -> Self {
        let mut m = OracleMaze { spec, dist: HashMap::new() };
        let goal = (m.spec.goal[0], m.spec.goal[1]);
        let mut queue = VecDeque::from([goal]);
        m.dist.insert(goal, 0);
        while let Some(c) = queue.pop_front() {
            let d = m.dist[&c];
            for mv in MOVES {
                if let Some(n) = m.next(c, mv) {
                    if let std::collections::hash_map::Entry::Vacant(e) = m.dist.entry(n) {
                        e.insert(d + 1);
                        queue.push_back(n);
                    }
                }
            }
        }
        m
    }

    fn next(&self, c: (usize, usize), (dr, dc): (isize, isize)) -> Option<(usize, usize)> {
        let r = c.0 as isize + dr;
        let col = c.1 as isize + dc;
        if r < 0 || col < 0 || r >= self.spec.height as isize || col >= self.spec.width as isize {
            return None;
        }
        let n = (r as usize, col as usize);
        let walled = self.spec.walls.iter().any(|&[a, b]| {
            let (a, b) = ((a[0], a[1]), (b[0], b[1]));
            (a == c && b == n) || (a == n && b == c)
        });
        (!walled).then_some(n)
    }

    fn policy(&self, c: (usize, usize), epsilon: f64) -> [f64; 4] {
        let here = self.dist[&c];
        let best = (0..4).find(|&a| self.next(c, MOVES[a]).is_some_and(|n| self.dist.get(&n) == Some(&(here - 1))));
        let mut p = [epsilon / 4.0; 4];
        p[best.unwrap()] += 1.0 - epsilon;
        p
    }

    /// Probability of reaching the goal from `c` with `rounds` moves used.
    fn success(
        &self,
        c: (usize, usize),
        rounds: usize,
        epsilon: f64,
        memo: &mut HashMap<((usize, usize), usize), f64>,
    ) -> f64 {
        if c == (self.spec.goal[0], self.spec.goal[1]) {
            return 1.0;
        }
        if rounds >= self.spec.max_rounds {
            return 0.0;
        }
        if let Some(&v) = memo.get(&(c, rounds)) {
            return v;
        }
        let p = self.policy(c, epsilon);
        let v = (0..4)
            .filter(|&a| p[a] > 0.0)
            .map(|a| p[a] * self.success(self.next(c, MOVES[a]).unwrap_or(c), rounds + 1, epsilon, memo))
            .sum();
        memo.insert((c, rounds), v);
        v
    }
}

/// A trajectory of uniformly random moves, recorded from the environment.
fn random_walk(maze: &Maze, id: &str, rng: &mut ChaCha8Rng) -> Trajectory {
    let (mut state, _) = maze.reset();
    let mut steps = Vec::new();
    let len = rng.gen_range(1..=8);
    while steps.len() < len && !maze.is_terminal(&state) {
        let a = *maze.actions().choose(rng).unwrap();
        let out = maze.step(&state, a);
        steps.push(Step {
            index: steps.len(),
            thought: String::new(),
            action: a.as_str().into(),
            observation: out.observation,
        });
        state = out.state;
    }
    Trajectory {
        id: id.into(),
        environment: "maze".into(),
        instruction: maze.instruction(),
        steps,
        final_reward: Some(maze.success(&state)),
    }
}

/// Per-step oracle success along `t`, replaying moves on the oracle model.
fn oracle_along(o: &OracleMaze, t: &Trajectory, epsilon: f64) -> Vec<f64> {
    let mut memo = HashMap::new();
    let mut c = (o.spec.start[0], o.spec.start[1]);
    let mut out = Vec::new();
    for (k, s) in t.steps.iter().enumerate() {
        let a = ["up", "down", "left", "right"].iter().position(|d| *d == s.action).unwrap();
        c = o.next(c, MOVES[a]).unwrap_or(c);
        let v = if k + 1 == t.len() { t.final_reward.unwrap() } else { o.success(c, k + 1, epsilon, &mut memo) };
        out.push(v);
    }
    out
}

fn criterion_value() -> Outcome {
    let (specs, _) = make_split(2024, 20, 1).unwrap();
    let mut rng = seed::rng(77);
    let det = NoisyShortestPath { epsilon: 0.0 };
    let noisy = NoisyShortestPath { epsilon: 0.3 };

    // (a) deterministic policy, expert and random-walk trajectories.
    let mut a_bad = 0;
    let mut a_steps = 0;
    let mut a_zero = 0;
    // (b) stochastic policy, N = 1000.
    let mut b_worst = 0.0f64;
    let mut b_steps = 0;
    let mut lib_worst = 0.0f64;
    for (i, spec) in specs.iter().enumerate() {
        let maze = Maze::new(spec.clone()).unwrap();
        let oracle = OracleMaze::new(spec.clone());
        let expert = expert_trajectory(spec, &format!("e{i}")).unwrap();
        let walk = random_walk(&maze, &format!("w{i}"), &mut rng);
        for t in [&expert, &walk] {
            let cfg = ValueConfig { n: 3, seed: i as u64, ..ValueConfig::default() };
            let got = value_profile(&maze, t, &det, &cfg).unwrap().r_hat;
            let want = oracle_along(&oracle, t, 0.0);
            a_steps += got.len();
            a_zero += want.iter().filter(|&&v| v == 0.0).count();
            a_bad += got.iter().zip(&want).filter(|(g, w)| g != w).count();
        }

        let cfg = ValueConfig { n: 1000, seed: 1000 + i as u64, ..ValueConfig::default() };
        let got = value_profile(&maze, &expert, &noisy, &cfg).unwrap().r_hat;
        let want = oracle_along(&oracle, &expert, 0.3);
        b_steps += got.len();
        b_worst = got.iter().zip(&want).fold(b_worst, |m, (g, w)| m.max((g - w).abs()));

        // Library value iteration against the recursion, at the start state.
        let (v, index) = exact_success(&maze, &noisy).unwrap();
        let (s0, _) = maze.reset();
        let lib = v[index[&s0]];
        let rec = oracle.success((spec.start[0], spec.start[1]), 0, 0.3, &mut HashMap::new());
        lib_worst = lib_worst.max((lib - rec).abs());
    }

    // (c) backward pass against the direct double sum.
    let mut c_worst = 0.0f64;
    for _ in 0..2000 {
        let len = rng.gen_range(1..40);
        let r: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let gamma = rng.gen_range(0.0..=1.0);
        let got = discounted_values(&r, gamma);
        for t in 0..len {
            let direct: f64 = (t..len).map(|k| gamma.powi((k - t) as i32) * r[k]).sum();
            c_worst = c_worst.max((got[t] - direct).abs());
        }
    }

    Outcome {
        pass: a_bad == 0 && b_worst < 0.05 && c_worst <= 1e-12 && lib_worst < 1e-9,
        detail: format!(
            "(a) {a_bad}/{a_steps} deterministic mismatches ({a_zero} zero-value steps); \
(b) max |MC - exact| {b_worst:.4} (< 0.05) over {b_steps} steps of 20 trajectories; \
(c) max double-sum error {c_worst:.1e} (<= 1e-12); value iteration vs recursion {lib_worst:.1e}"
        ),
    }
}

// ---------------------------------------------------------------- 4, 5

fn sample_pool() -> Vec<Trajectory> {
    let (specs, _) = make_split(31, 30, 1).unwrap();
    specs.iter().enumerate().map(|(i, s)| expert_trajectory(s, &format!("g{i}")).unwrap()).collect()
}

fn masked(t: &Trajectory, indices: Vec<usize>) -> MaskedSample {
    let mut s = CriticalSelection::new(t.id.clone(), Strategy::Random, 1.0, t.len());
    s.indices = indices;
    masked_sample(t, &s, &EmitOptions::default()).unwrap()
}

fn random_theta(rng: &mut ChaCha8Rng) -> LogLinearPolicy {
    LogLinearPolicy { theta: (0..FEATURE_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect() }
}

fn criterion_gradient() -> Outcome {
    let pool = sample_pool();
    let mut rng = seed::rng(404);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut coords = 0;
    for _ in 0..50 {
        let k = rng.gen_range(1..=4);
        let samples: Vec<MaskedSample> = pool
            .choose_multiple(&mut rng, k)
            .map(|t| {
                let keep: Vec<usize> = (0..t.len()).filter(|_| rng.gen_bool(0.5)).collect();
                masked(t, keep)
            })
            .collect();
        let policy = random_theta(&mut rng);
        let l2 = rng.gen_range(0.0..0.1);
        let g = gradient(&policy, &samples, l2).unwrap();
        let mut dims: Vec<usize> = (0..FEATURE_DIM).collect();
        dims.shuffle(&mut rng);
        for &j in dims.iter().take(20) {
            let mut plus = policy.clone();
            plus.theta[j] += h;
            let mut minus = policy.clone();
            minus.theta[j] -= h;
            let fd = (regularized_objective(&plus, &samples, l2).unwrap()
                - regularized_objective(&minus, &samples, l2).unwrap())
                / (2.0 * h);
            let scale = g[j].abs().max(fd.abs());
            let err = if scale == 0.0 { 0.0 } else { (g[j] - fd).abs() / scale.max(1e-6) };
            worst = worst.max(err);
            coords += 1;
        }
    }
    Outcome {
        pass: worst < 1e-4,
        detail: format!("max relative error {worst:.2e} (< 1e-4) over 50 draws, {coords} coordinates, h = 1e-5"),
    }
}

fn criterion_decomposition() -> Outcome {
    let pool = sample_pool();
    let mut rng = seed::rng(505);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let chosen: Vec<&Trajectory> = pool.choose_multiple(&mut rng, 6).collect();
        let mut sel = Vec::new();
        let mut comp = Vec::new();
        let mut full = Vec::new();
        for t in chosen {
            let (a, b): (Vec<usize>, Vec<usize>) = (0..t.len()).partition(|_| rng.gen_bool(0.3));
            sel.push(masked(t, a));
            comp.push(masked(t, b));
            full.push(masked(t, (0..t.len()).collect()));
        }
        let policy = random_theta(&mut rng);
        let j = |s: &[MaskedSample]| masked_log_likelihood(&policy, s).unwrap();
        worst = worst.max((j(&sel) + j(&comp) - j(&full)).abs());
    }
    Outcome {
        pass: worst <= 1e-9,
        detail: format!("max |J(sel) + J(complement) - J(full)| = {worst:.1e} (<= 1e-9) at 100 random theta"),
    }
}

// ---------------------------------------------------------------- 6

fn criterion_ablation() -> Outcome {
    let cfg = AblationConfig::default();
    let res = run_ablation(&cfg).unwrap();
    let out = |s| res.summary_for(s, 0.3).unwrap().held_out_mean;
    let (c, n, r, f) = (
        out(AblationStrategy::Critical),
        out(AblationStrategy::Noncritical),
        out(AblationStrategy::Random),
        out(AblationStrategy::Full),
    );
    for line in res.render_table().lines() {
        println!("      {line}");
    }
    let refs: Vec<String> = REFERENCE_ROWS.iter().map(|(l, _, hi, _)| format!("{l} {hi}")).collect();
    Outcome {
        pass: c >= n && c >= r - 0.02 && (f - c).abs() <= 0.05,
        detail: format!(
            "{} seeds, {}/{} mazes, held-out critical {c:.3} vs noncritical {n:.3}, random {r:.3} (>= -0.02), \
full {f:.3} (|diff| <= 0.05); reference held-in {}",
            cfg.seeds.len(),
            cfg.held_in,
            cfg.held_out,
            refs.join(" / ")
        ),
    }
}

// ---------------------------------------------------------------- 7

#[derive(serde::Deserialize)]
struct Golden {
    file: String,
    steps: usize,
    cap: usize,
    indices: Vec<usize>,
    #[serde(default)]
    categories: Option<BTreeMap<usize, StepCategory>>,
}

#[derive(serde::Deserialize)]
struct Malformed {
    file: String,
    steps: usize,
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/selector")
}

fn criterion_llm() -> Outcome {
    let dir = fixtures();
    let golden: Vec<Golden> = serde_json::from_str(&std::fs::read_to_string(dir.join("golden.json")).unwrap()).unwrap();
    let malformed: Vec<Malformed> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("malformed.json")).unwrap()).unwrap();
    let mut golden_ok = 0;
    let mut failures = Vec::new();
    for g in &golden {
        let raw = std::fs::read_to_string(dir.join("golden").join(&g.file)).unwrap();
        match parse_response(&raw, g.steps).map(|r| enforce_cap(r, g.cap)) {
            Ok(r) if r.indices == g.indices && g.categories.as_ref().is_none_or(|c| *c == r.categories) => {
                golden_ok += 1
            }
            Ok(r) => failures.push(format!("{}: {:?} {:?}", g.file, r.indices, r.categories)),
            Err(e) => failures.push(format!("{}: {e}", g.file)),
        }
    }
    let mut malformed_ok = 0;
    for m in &malformed {
        let raw = std::fs::read_to_string(dir.join("malformed").join(&m.file)).unwrap();
        match parse_response(&raw, m.steps) {
            Err(e) if e.class() == "unparseable-response" => malformed_ok += 1,
            other => failures.push(format!("{}: {:?}", m.file, other.map(|r| r.indices))),
        }
    }

    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in.jsonl");
    let data = Dataset::new((0..6).map(|i| synthetic(&format!("t{i}"), 4 + i)).collect());
    write_dataset(&data, &input).unwrap();
    let reply = "The high-level plan is: finish.\nThe critical steps are: conversation[1], conversation[3]\nReason: conversation[1] is planning.";
    let run = |out: &Path| {
        let mock = CountingReply { reply: reply.into(), calls: AtomicUsize::new(0) };
        let cli = Cli::try_parse_from([
            "critsel",
            "select",
            "--strategy",
            "llm",
            "--cache-dir",
            tmp.path().join("cache").to_str().unwrap(),
            "--in",
            input.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .unwrap();
        run_with(cli, &mock).unwrap();
        (mock.calls.load(Ordering::SeqCst), std::fs::read(out).unwrap())
    };
    let (cold_calls, cold) = run(&tmp.path().join("cold.jsonl"));
    let (warm_calls, warm) = run(&tmp.path().join("warm.jsonl"));
    Outcome {
        pass: golden_ok == 10 && malformed_ok == 5 && golden.len() == 10 && malformed.len() == 5 && warm_calls == 0 && cold == warm,
        detail: format!(
            "{golden_ok}/10 golden, {malformed_ok}/5 malformed -> unparseable-response; cache: {cold_calls} cold calls, \
{warm_calls} warm calls, outputs {}{}",
            if cold == warm { "identical" } else { "differ" },
            failures.first().map(|f| format!("; first failure {f}")).unwrap_or_default()
        ),
    }
}

// ---------------------------------------------------------------- 8

fn critsel(dir: &Path, jobs: usize, args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_critsel"))
        .current_dir(dir)
        .arg("--jobs")
        .arg(jobs.to_string())
        .args(args)
        .output()
        .unwrap();
    assert!(status.status.success(), "{args:?}: {}", String::from_utf8_lossy(&status.stderr));
}

fn pipeline(root: &Path, jobs: usize) {
    std::fs::create_dir_all(root).unwrap();
    let held_in = "toy/held_in/trajectories.jsonl";
    std::fs::write(
        root.join("small.json"),
        r#"{"toy": {"held_in": 8, "held_out": 4}, "ablation": {"seeds": [0, 1]}, "train": {"epochs": 50, "eval_episodes": 4}}"#,
    )
    .unwrap();
    critsel(root, jobs, &["gen-toy", "--family-seed", "11", "--held-in", "12", "--held-out", "6", "--out", "toy"]);
    let toy = make_split(11, 12, 6).unwrap().0;
    let lp: Vec<StepLogprobs> = toy
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let t = expert_trajectory(s, &format!("maze-in-{i:04}")).unwrap();
            let mut rng = seed::rng(i as u64);
            StepLogprobs {
                trajectory_id: t.id.clone(),
                steps: (0..t.len()).map(|_| (0..5).map(|_| -rng.gen_range(0.0..3.0)).collect()).collect(),
                thought_tokens: None,
            }
        })
        .collect();
    critsel::jsonl::write(&root.join("logprobs.jsonl"), &lp).unwrap();
    let steps: Vec<Vec<&str>> = vec![
        vec!["ingest", "--in", held_in, "--out", "ingested.jsonl"],
        vec!["value-profile", "--N", "20", "--in", held_in, "--out", "profiles.jsonl"],
        vec![
            "select",
            "--strategy",
            "value",
            "--profiles",
            "profiles.jsonl",
            "--in",
            held_in,
            "--out",
            "sel_value.jsonl",
        ],
        vec![
            "select",
            "--strategy",
            "random",
            "--ratio",
            "0.3",
            "--seed",
            "7",
            "--in",
            held_in,
            "--out",
            "sel_random.jsonl",
        ],
        vec![
            "select",
            "--strategy",
            "noncritical",
            "--critical",
            "sel_value.jsonl",
            "--in",
            held_in,
            "--out",
            "sel_non.jsonl",
        ],
        vec![
            "select",
            "--strategy",
            "perplexity",
            "--logprobs",
            "logprobs.jsonl",
            "--in",
            held_in,
            "--out",
            "sel_ppl.jsonl",
        ],
        vec!["emit", "--in", held_in, "--selections", "sel_value.jsonl", "--out", "masked.jsonl"],
        vec!["train-toy", "--masked", "masked.jsonl", "--out", "train"],
        vec!["eval-toy", "--policy", "train/policy.json", "--toy-dir", "toy", "--out", "eval"],
        vec!["report", "--selections", "sel_value.jsonl", "--dataset", held_in, "--out", "report.json"],
        vec!["--config", "small.json", "ablate", "--out", "ablate"],
    ];
    for s in steps {
        critsel(root, jobs, &s);
    }
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<(String, BTreeMap<String, Vec<u8>>)> = [(1, 0), (1, 1), (8, 0), (8, 1)]
        .iter()
        .map(|&(jobs, rep)| {
            let root = tmp.path().join(format!("jobs{jobs}-{rep}"));
            pipeline(&root, jobs);
            (format!("jobs={jobs}#{rep}"), tree(&root))
        })
        .collect();
    let base = &runs[0].1;
    let mut differing = Vec::new();
    for (label, t) in &runs[1..] {
        if t.keys().ne(base.keys()) {
            differing.push(format!("{label}: file sets differ"));
        }
        for (k, v) in t {
            if base.get(k) != Some(v) {
                differing.push(format!("{label}: {k}"));
            }
        }
    }
    Outcome {
        pass: differing.is_empty(),
        detail: format!(
            "{} files from 11 stages compared across --jobs 1 and 8, twice each; {} differ{}",
            base.len(),
            differing.len(),
            differing.first().map(|d| format!(" (first: {d})")).unwrap_or_default()
        ),
    }
}

fn main() {
    let secs = |s| Some(Duration::from_secs(s));
    let results = [
        report("1", "selection cap invariant", secs(10), criterion_cap),
        report("2", "perplexity oracle", secs(10), criterion_perplexity),
        report("3", "value estimation oracle", secs(60), criterion_value),
        report("4", "gradient check", secs(30), criterion_gradient),
        report("5", "objective decomposition", None, criterion_decomposition),
        report("6", "desk-scale ablation", secs(300), criterion_ablation),
        report("7", "LLM selector conformance", None, criterion_llm),
        report("8", "pipeline determinism", None, criterion_determinism),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
