//! Log-linear maze policy trained on the masked behavior-cloning objective.
//!
//! `pi(a | s) = softmax_a(theta . phi(s, a))` over the four moves, with
//! `phi(s, a) = e_a (x) psi(s)`. The context features `psi` see only the sign
//! of the goal offset, which moves are blocked, and the previous action, so
//! the policy cannot memorize individual mazes.
//!
//! The masked objective sums `log pi(a_t | s_t)` over turns flagged `train`;
//! unflagged turns still shape the context of later turns through the
//! previous-action feature but add nothing to the sum.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::OnceLock;

use rand::Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::env::maze::{Direction, Maze, MazeSpec};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::mask::{masked_sample, EmitOptions, MaskedSample};
use crate::seed;
use crate::select::{select_noncritical, select_random};
use crate::trajectory::{CriticalSelection, Trajectory};
use crate::value::{build_value_selection, value_profile, ValueConfig};

pub const NUM_ACTIONS: usize = 4;
pub const CONTEXT_DIM: usize = 16;
pub const FEATURE_DIM: usize = NUM_ACTIONS * CONTEXT_DIM;

/// What the policy can see of a maze state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MazeView {
    pub pos: (usize, usize),
    pub goal: (usize, usize),
    /// Indexed like [`Direction::ALL`].
    pub blocked: [bool; 4],
}

fn observation_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"You are at \((\d+), (\d+)\)\. The goal is at \((\d+), (\d+)\)\. Blocked directions: ([a-z, ]+)\.")
            .unwrap()
    })
}

impl MazeView {
    /// Parse the observation sentence found anywhere in `text`.
    pub fn parse(text: &str) -> Result<MazeView> {
        let c = observation_regex()
            .captures(text)
            .ok_or_else(|| Error::Vocabulary(format!("no maze observation in {text:?}")))?;
        let n = |i: usize| c[i].parse::<usize>().map_err(|e| Error::Vocabulary(e.to_string()));
        let mut blocked = [false; 4];
        for word in c[5].split(',').map(str::trim).filter(|w| *w != "none") {
            let d = Direction::parse(word).ok_or_else(|| Error::Vocabulary(word.to_string()))?;
            blocked[d.index()] = true;
        }
        Ok(MazeView { pos: (n(1)?, n(2)?), goal: (n(3)?, n(4)?), blocked })
    }

    pub fn of(maze: &Maze, pos: (usize, usize)) -> MazeView {
        let mut blocked = [false; 4];
        for d in maze.blocked(pos) {
            blocked[d.index()] = true;
        }
        MazeView { pos, goal: maze.goal(), blocked }
    }
}

/// Active entries of `psi` (all with value 1).
///
/// Layout: 0 bias; 1-3 goal row offset sign (-,0,+); 4-6 goal column offset
/// sign; 7-10 blocked up/down/left/right; 11-14 previous action; 15 no
/// previous action.
pub fn context_features(view: &MazeView, last: Option<Direction>) -> Vec<usize> {
    let sign = |a: usize, b: usize| match b.cmp(&a) {
        std::cmp::Ordering::Less => 0,
        std::cmp::Ordering::Equal => 1,
        std::cmp::Ordering::Greater => 2,
    };
    let mut f = vec![0, 1 + sign(view.pos.0, view.goal.0), 4 + sign(view.pos.1, view.goal.1)];
    f.extend((0..4).filter(|&d| view.blocked[d]).map(|d| 7 + d));
    f.push(match last {
        Some(d) => 11 + d.index(),
        None => 15,
    });
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLinearPolicy {
    pub theta: Vec<f64>,
}

impl Default for LogLinearPolicy {
    fn default() -> Self {
        LogLinearPolicy { theta: vec![0.0; FEATURE_DIM] }
    }
}

impl LogLinearPolicy {
    pub fn logits(&self, context: &[usize]) -> [f64; NUM_ACTIONS] {
        let mut z = [0.0; NUM_ACTIONS];
        for (a, za) in z.iter_mut().enumerate() {
            *za = context.iter().map(|&j| self.theta[a * CONTEXT_DIM + j]).sum();
        }
        z
    }

    pub fn probabilities(&self, context: &[usize]) -> [f64; NUM_ACTIONS] {
        let z = self.logits(context);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut p = z.map(|v| (v - m).exp());
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        p
    }

    pub fn log_prob(&self, context: &[usize], action: usize) -> f64 {
        let z = self.logits(context);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        z[action] - lse
    }
}

/// One turn reduced to what the objective needs.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTurn {
    pub context: Vec<usize>,
    pub action: usize,
    pub train: bool,
}

/// Feature-encode every turn. Turn `t` is conditioned on the observation
/// before it (the instruction for `t = 0`) and on action `t - 1`.
pub fn encode_samples(samples: &[MaskedSample]) -> Result<Vec<EncodedTurn>> {
    let mut out = Vec::new();
    for s in samples {
        let mut prev_obs: &str = &s.instruction;
        let mut last: Option<Direction> = None;
        for turn in &s.turns {
            let action = Direction::parse(&turn.action).ok_or_else(|| Error::Vocabulary(turn.action.clone()))?;
            let view = MazeView::parse(prev_obs)?;
            out.push(EncodedTurn { context: context_features(&view, last), action: action.index(), train: turn.train });
            prev_obs = &turn.observation;
            last = Some(action);
        }
    }
    Ok(out)
}

pub fn encoded_log_likelihood(policy: &LogLinearPolicy, turns: &[EncodedTurn]) -> f64 {
    turns.iter().filter(|t| t.train).map(|t| policy.log_prob(&t.context, t.action)).sum()
}

/// Gradient of [`encoded_log_likelihood`] (no regularization).
pub fn encoded_gradient(policy: &LogLinearPolicy, turns: &[EncodedTurn]) -> Vec<f64> {
    let mut g = vec![0.0; FEATURE_DIM];
    for t in turns.iter().filter(|t| t.train) {
        let p = policy.probabilities(&t.context);
        for (a, pa) in p.iter().enumerate() {
            let coef = if a == t.action { 1.0 - pa } else { -pa };
            for &j in &t.context {
                g[a * CONTEXT_DIM + j] += coef;
            }
        }
    }
    g
}

/// Sum over trained turns of `log pi(action | context)`.
pub fn masked_log_likelihood(policy: &LogLinearPolicy, samples: &[MaskedSample]) -> Result<f64> {
    let turns = encode_samples(samples)?;
    if !turns.iter().any(|t| t.train) {
        log::warn!("no trained turn in {} samples; objective is 0", samples.len());
    }
    Ok(encoded_log_likelihood(policy, &turns))
}

/// `masked_log_likelihood - l2/2 * |theta|^2`, whose gradient is [`gradient`].
pub fn regularized_objective(policy: &LogLinearPolicy, samples: &[MaskedSample], l2: f64) -> Result<f64> {
    let norm: f64 = policy.theta.iter().map(|v| v * v).sum();
    Ok(masked_log_likelihood(policy, samples)? - 0.5 * l2 * norm)
}

/// Exact gradient of the masked log-likelihood minus `l2 * theta`.
pub fn gradient(policy: &LogLinearPolicy, samples: &[MaskedSample], l2: f64) -> Result<Vec<f64>> {
    let turns = encode_samples(samples)?;
    let mut g = encoded_gradient(policy, &turns);
    for (gi, th) in g.iter_mut().zip(&policy.theta) {
        *gi -= l2 * th;
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    pub eval_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 0.05, epochs: 200, l2: 1e-4, seed: 0, eval_episodes: 200 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.l2 < 0.0 || self.eval_episodes == 0 {
            return Err(Error::Configuration(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

/// Full-batch gradient ascent from `theta = 0`.
///
/// Each epoch steps along the gradient of the per-turn mean log-likelihood
/// minus `l2/2 * |theta|^2`, so the step size does not depend on how many
/// turns a strategy trains on.
pub fn train(samples: &[MaskedSample], cfg: &TrainConfig) -> Result<LogLinearPolicy> {
    let turns = encode_samples(samples)?;
    Ok(train_encoded(&turns, cfg))
}

pub fn train_encoded(turns: &[EncodedTurn], cfg: &TrainConfig) -> LogLinearPolicy {
    let mut policy = LogLinearPolicy::default();
    let n = turns.iter().filter(|t| t.train).count().max(1) as f64;
    for _ in 0..cfg.epochs {
        let g = encoded_gradient(&policy, turns);
        for (th, gi) in policy.theta.iter_mut().zip(&g) {
            *th += cfg.learning_rate * (gi / n - cfg.l2 * *th);
        }
    }
    policy
}

/// Training-curve values of the per-turn mean objective, one per epoch
/// (before each update).
pub fn training_curve(turns: &[EncodedTurn], cfg: &TrainConfig) -> Vec<f64> {
    let mut policy = LogLinearPolicy::default();
    let n = turns.iter().filter(|t| t.train).count().max(1) as f64;
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let norm: f64 = policy.theta.iter().map(|v| v * v).sum();
        curve.push(encoded_log_likelihood(&policy, turns) / n - 0.5 * cfg.l2 * norm);
        let g = encoded_gradient(&policy, turns);
        for (th, gi) in policy.theta.iter_mut().zip(&g) {
            *th += cfg.learning_rate * (gi / n - cfg.l2 * *th);
        }
    }
    curve
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub success_rate: f64,
    pub mean_return: f64,
}

fn greedy<R: Rng>(policy: &LogLinearPolicy, context: &[usize], rng: &mut R) -> Direction {
    let z = policy.logits(context);
    let best = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = (0..NUM_ACTIONS).filter(|&a| best - z[a] <= 1e-12).collect();
    let pick = if ties.len() == 1 { ties[0] } else { ties[rng.gen_range(0..ties.len())] };
    Direction::ALL[pick]
}

/// `(success, undiscounted return)` of one greedy episode.
pub fn run_episode(policy: &LogLinearPolicy, maze: &Maze, rng_seed: u64) -> (f64, f64) {
    let mut rng = seed::rng(rng_seed);
    let (mut state, _) = maze.reset();
    let mut last = None;
    let mut ret = 0.0;
    while !maze.is_terminal(&state) {
        let ctx = context_features(&MazeView::of(maze, state.pos), last);
        let a = greedy(policy, &ctx, &mut rng);
        let out = maze.step(&state, a);
        ret += out.reward;
        state = out.state;
        last = Some(a);
    }
    (maze.success(&state), ret)
}

/// Greedy rollouts, `episodes` per maze; exact logit ties are broken at
/// random from per-episode seeds.
pub fn evaluate(policy: &LogLinearPolicy, specs: &[MazeSpec], episodes: usize, seed: u64) -> Result<EvalResult> {
    let mazes = specs.iter().cloned().map(Maze::new).collect::<Result<Vec<_>>>()?;
    if mazes.is_empty() || episodes == 0 {
        return Ok(EvalResult { success_rate: 0.0, mean_return: 0.0 });
    }
    let per_maze: Vec<(f64, f64)> = mazes
        .par_iter()
        .enumerate()
        .map(|(i, maze)| {
            (0..episodes).fold((0.0, 0.0), |(s, r), e| {
                let (ok, ret) = run_episode(policy, maze, seed::mix_u64(seed::mix_u64(seed, i as u64), e as u64));
                (s + ok, r + ret)
            })
        })
        .collect();
    let total = (mazes.len() * episodes) as f64;
    let (s, r) = per_maze.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    Ok(EvalResult { success_rate: s / total, mean_return: r / total })
}

/// Training-data variants compared by the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationStrategy {
    /// Value-gap critical steps.
    Critical,
    /// Same number of steps drawn from the non-critical complement.
    Noncritical,
    /// Uniform random steps at the configured ratio.
    Random,
    /// Every step.
    Full,
}

impl AblationStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationStrategy::Critical => "critical",
            AblationStrategy::Noncritical => "noncritical",
            AblationStrategy::Random => "random",
            AblationStrategy::Full => "full",
        }
    }

    fn depends_on_ratio(self) -> bool {
        self == AblationStrategy::Random
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub family_seed: u64,
    pub held_in: usize,
    pub held_out: usize,
    pub strategies: Vec<AblationStrategy>,
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    pub value: ValueConfig,
    /// Deviation probability of the rollout policy.
    pub rollout_epsilon: f64,
    pub train: TrainConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            family_seed: 0,
            held_in: 40,
            held_out: 20,
            strategies: vec![
                AblationStrategy::Critical,
                AblationStrategy::Noncritical,
                AblationStrategy::Random,
                AblationStrategy::Full,
            ],
            ratios: vec![0.3],
            seeds: vec![0, 1, 2, 3, 4],
            value: ValueConfig::default(),
            rollout_epsilon: DEFAULT_ROLLOUT_EPSILON,
            train: TrainConfig::default(),
        }
    }
}

pub const DEFAULT_ROLLOUT_EPSILON: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub strategy: AblationStrategy,
    pub ratio: f64,
    pub seed: u64,
    pub held_in_success: f64,
    pub held_out_success: f64,
    pub mean_return_in: f64,
    pub mean_return_out: f64,
    /// Trained steps over all steps.
    pub realized_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: AblationStrategy,
    pub ratio: f64,
    pub seeds: usize,
    pub held_in_mean: f64,
    pub held_in_std: f64,
    pub held_out_mean: f64,
    pub held_out_std: f64,
    pub realized_ratio_mean: f64,
}

/// Published results for context: (label, ratio, held-in avg, held-out avg).
pub const REFERENCE_ROWS: [(&str, &str, f64, f64); 4] = [
    ("critical", "30%", 65.91, 38.36),
    ("full", "100%", 60.52, 36.18),
    ("noncritical", "30%", 56.17, 29.88),
    ("random", "30%", 59.90, 38.04),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResults {
    pub rows: Vec<AblationRow>,
    pub summary: Vec<SummaryRow>,
}

/// Held-in/held-out mazes and expert trajectories for one run seed.
pub struct ToyData {
    pub held_in: Vec<MazeSpec>,
    pub held_out: Vec<MazeSpec>,
    pub experts: Vec<Trajectory>,
}

pub fn toy_data(family_seed: u64, held_in: usize, held_out: usize) -> Result<ToyData> {
    let (held_in, held_out) = crate::env::maze::make_split(family_seed, held_in, held_out)?;
    let experts = held_in
        .iter()
        .enumerate()
        .map(|(i, s)| crate::env::maze::expert_trajectory(s, &format!("maze-in-{i:04}")))
        .collect::<Result<Vec<_>>>()?;
    Ok(ToyData { held_in, held_out, experts })
}

/// Value-gap critical selections for expert maze trajectories.
pub fn value_selections(
    experts: &[Trajectory],
    specs: &[MazeSpec],
    cfg: &ValueConfig,
    epsilon: f64,
) -> Result<Vec<CriticalSelection>> {
    let policy = crate::env::maze::NoisyShortestPath { epsilon };
    experts
        .par_iter()
        .zip(specs)
        .map(|(t, spec)| {
            let maze = Maze::new(spec.clone())?;
            let profile = value_profile(&maze, t, &policy, cfg)?;
            build_value_selection(t, &profile)
        })
        .collect()
}

fn selections_for(
    strategy: AblationStrategy,
    ratio: f64,
    seed: u64,
    experts: &[Trajectory],
    critical: &[CriticalSelection],
) -> Result<Vec<CriticalSelection>> {
    experts
        .iter()
        .zip(critical)
        .map(|(t, c)| match strategy {
            AblationStrategy::Critical => Ok(c.clone()),
            AblationStrategy::Noncritical => select_noncritical(t, c, seed),
            AblationStrategy::Random => select_random(t, ratio, seed),
            AblationStrategy::Full => select_random(t, 1.0, seed),
        })
        .collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64 } else { 0.0 };
    (m, var.sqrt())
}

/// Train and evaluate one policy per (strategy, ratio, seed).
///
/// Each seed draws its own maze family, expert set, value profiles and
/// baseline selections; ratio-independent strategies are trained once per
/// seed and reported under every ratio.
pub fn run_ablation(cfg: &AblationConfig) -> Result<AblationResults> {
    if cfg.strategies.is_empty() || cfg.ratios.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::Configuration("ablation needs at least one strategy, ratio and seed".into()));
    }
    for &r in &cfg.ratios {
        crate::trajectory::selection_cap(r, 1)?;
    }
    cfg.train.validate()?;
    let mut rows = Vec::new();
    for &run_seed in &cfg.seeds {
        let data = toy_data(seed::mix_u64(cfg.family_seed, run_seed), cfg.held_in, cfg.held_out)?;
        let value_cfg = ValueConfig { seed: run_seed, ..cfg.value };
        let critical = value_selections(&data.experts, &data.held_in, &value_cfg, cfg.rollout_epsilon)?;
        let mut cache: BTreeMap<AblationStrategy, AblationRow> = BTreeMap::new();
        for &ratio in &cfg.ratios {
            for &strategy in &cfg.strategies {
                if let Some(row) = cache.get(&strategy).filter(|_| !strategy.depends_on_ratio()) {
                    rows.push(AblationRow { ratio, ..row.clone() });
                    continue;
                }
                let selections = selections_for(strategy, ratio, run_seed, &data.experts, &critical)?;
                let samples = data
                    .experts
                    .iter()
                    .zip(&selections)
                    .map(|(t, s)| masked_sample(t, s, &EmitOptions::default()))
                    .collect::<Result<Vec<_>>>()?;
                let trained: usize = samples.iter().map(MaskedSample::trained_turns).sum();
                let total: usize = samples.iter().map(|s| s.turns.len()).sum();
                let policy = train(&samples, &TrainConfig { seed: run_seed, ..cfg.train })?;
                let eval_in = evaluate(&policy, &data.held_in, cfg.train.eval_episodes, run_seed)?;
                let eval_out = evaluate(&policy, &data.held_out, cfg.train.eval_episodes, run_seed)?;
                let row = AblationRow {
                    strategy,
                    ratio,
                    seed: run_seed,
                    realized_ratio: trained as f64 / total.max(1) as f64,
                    held_in_success: eval_in.success_rate,
                    held_out_success: eval_out.success_rate,
                    mean_return_in: eval_in.mean_return,
                    mean_return_out: eval_out.mean_return,
                };
                cache.insert(strategy, row.clone());
                rows.push(row);
            }
        }
    }
    let summary = summarize(&rows, cfg);
    Ok(AblationResults { rows, summary })
}

fn summarize(rows: &[AblationRow], cfg: &AblationConfig) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &ratio in &cfg.ratios {
        for &strategy in &cfg.strategies {
            let sel: Vec<&AblationRow> = rows.iter().filter(|r| r.strategy == strategy && r.ratio == ratio).collect();
            let pick = |f: fn(&AblationRow) -> f64| sel.iter().map(|r| f(r)).collect::<Vec<_>>();
            let (hi_m, hi_s) = mean_std(&pick(|r| r.held_in_success));
            let (ho_m, ho_s) = mean_std(&pick(|r| r.held_out_success));
            let (rr, _) = mean_std(&pick(|r| r.realized_ratio));
            out.push(SummaryRow {
                strategy,
                ratio,
                seeds: sel.len(),
                held_in_mean: hi_m,
                held_in_std: hi_s,
                held_out_mean: ho_m,
                held_out_std: ho_s,
                realized_ratio_mean: rr,
            });
        }
    }
    out
}

impl AblationResults {
    pub fn summary_for(&self, strategy: AblationStrategy, ratio: f64) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.strategy == strategy && s.ratio == ratio)
    }

    /// One row per run; the header follows [`AblationRow`]'s field order.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Configuration(format!("csv: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Configuration(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Table of mean ± std success (percent) per strategy and ratio, followed
    /// by the published reference rows.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>6} {:>9} {:>18} {:>18}",
            "strategy", "ratio", "trained", "held-in avg", "held-out avg"
        );
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{:<12} {:>5.0}% {:>8.1}% {:>10.2} ± {:<5.2} {:>10.2} ± {:<5.2}",
                s.strategy.as_str(),
                s.ratio * 100.0,
                s.realized_ratio_mean * 100.0,
                s.held_in_mean * 100.0,
                s.held_in_std * 100.0,
                s.held_out_mean * 100.0,
                s.held_out_std * 100.0
            );
        }
        let _ = writeln!(out, "\nreference (LLM agents, for context only):");
        for (label, ratio, held_in, held_out) in REFERENCE_ROWS {
            let _ = writeln!(out, "{label:<12} {ratio:>6} {:>9} {held_in:>10.2} {:>7} {held_out:>10.2}", "", "");
        }
        out
    }
}
