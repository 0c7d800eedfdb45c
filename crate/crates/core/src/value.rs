//! Monte Carlo step-reward estimation, discounted values, value-gap
//! flagging, and an exact tabular oracle for checking the estimator.
//!
//! For step `t` of an expert trajectory the environment is replayed through
//! expert actions `0..=t`; `N` rollouts of the rollout policy then continue
//! from that state and the mean final outcome reward is the step's estimate
//! `r_hat[t]`. The last step uses the trajectory's own final reward.
//! Values are `values[t] = sum_{k>=t} gamma^(k-t) * r_hat[k]` and a step is
//! critical when its value differs from the previous step's by more than the
//! threshold.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, RolloutPolicy};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::seed;
use crate::trajectory::{CriticalSelection, Strategy, Trajectory};

/// How consecutive values are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapMode {
    /// `|values[t] - values[t-1]| > threshold`
    #[default]
    Absolute,
    /// `values[t] - values[t-1] > threshold`
    SignedIncrease,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValueConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub gamma: f64,
    pub threshold: f64,
    pub gap_mode: GapMode,
    pub seed: u64,
}

impl Default for ValueConfig {
    fn default() -> Self {
        ValueConfig { n: 5, gamma: 0.99, threshold: 0.1, gap_mode: GapMode::Absolute, seed: 0 }
    }
}

impl ValueConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidN(0));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Configuration(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::Configuration(format!("threshold {} must be positive", self.threshold)));
        }
        Ok(())
    }
}

/// Per-step estimates for one trajectory; one line of the profile file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueProfile {
    pub trajectory_id: String,
    pub r_hat: Vec<f64>,
    pub values: Vec<f64>,
    pub gaps: Vec<f64>,
    pub flagged: Vec<usize>,
    #[serde(rename = "N")]
    pub n: usize,
    pub gamma: f64,
    pub threshold: f64,
}

fn same_text(a: &str, b: &str) -> bool {
    a.split_whitespace().eq(b.split_whitespace())
}

/// Re-execute the expert's actions from reset; returns the state after each
/// step. Recorded observations must match up to whitespace.
pub fn replay<E: Environment>(env: &E, t: &Trajectory) -> Result<Vec<E::State>> {
    replay_prefix(env, t, t.len())
}

/// [`replay`] limited to the first `upto` steps.
pub fn replay_prefix<E: Environment>(env: &E, t: &Trajectory, upto: usize) -> Result<Vec<E::State>> {
    let (mut state, _) = env.reset();
    let mut states = Vec::with_capacity(upto);
    for (k, step) in t.steps.iter().take(upto).enumerate() {
        if env.is_terminal(&state) {
            return Err(Error::Replay {
                trajectory_id: t.id.clone(),
                step: k,
                expected: step.observation.clone(),
                actual: "<episode already ended>".into(),
            });
        }
        let action = env.parse_action(&step.action)?;
        let out = env.step(&state, action);
        let terminal_blank = k + 1 == t.len() && step.observation.is_empty();
        if !terminal_blank && !same_text(&out.observation, &step.observation) {
            return Err(Error::Replay {
                trajectory_id: t.id.clone(),
                step: k,
                expected: step.observation.clone(),
                actual: out.observation,
            });
        }
        state = out.state;
        states.push(state.clone());
    }
    Ok(states)
}

/// Run the policy from `state` until the episode ends; returns the outcome
/// reward.
pub fn rollout<E, P>(env: &E, state: &E::State, policy: &P, rng_seed: u64) -> f64
where
    E: Environment,
    P: RolloutPolicy<E>,
{
    let mut rng = seed::rng(rng_seed);
    let mut s = state.clone();
    while !env.is_terminal(&s) {
        let a = policy.act(env, &s, &mut rng);
        s = env.step(&s, a).state;
    }
    env.success(&s)
}

fn step_reward_from<E, P>(
    env: &E,
    t: &Trajectory,
    step: usize,
    after: &E::State,
    policy: &P,
    n: usize,
    seed: u64,
) -> f64
where
    E: Environment,
    P: RolloutPolicy<E>,
{
    if step + 1 == t.len() {
        return t.final_reward.unwrap_or_else(|| env.success(after));
    }
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| rollout(env, after, policy, seed::mix_rollout(seed, &t.id, step, i)))
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    total / n as f64
}

/// Monte Carlo estimate of the outcome reward after expert step `step`.
pub fn estimate_step_reward<E, P>(env: &E, t: &Trajectory, step: usize, policy: &P, n: usize, seed: u64) -> Result<f64>
where
    E: Environment,
    P: RolloutPolicy<E>,
{
    if n == 0 {
        return Err(Error::InvalidN(n));
    }
    if step >= t.len() {
        return Err(Error::OutOfRange { upto: step + 1, len: t.len() });
    }
    let states = replay_prefix(env, t, step + 1)?;
    Ok(step_reward_from(env, t, step, &states[step], policy, n, seed))
}

/// Backward pass `values[t] = r_hat[t] + gamma * values[t+1]`.
pub fn discounted_values(r_hat: &[f64], gamma: f64) -> Vec<f64> {
    let mut values = vec![0.0; r_hat.len()];
    let mut next = 0.0;
    for (v, r) in values.iter_mut().zip(r_hat).rev() {
        next = r + gamma * next;
        *v = next;
    }
    values
}

/// `gaps[0] = 0`, `gaps[t] = |values[t] - values[t-1]|`.
pub fn value_gaps(values: &[f64]) -> Vec<f64> {
    let mut gaps = vec![0.0; values.len()];
    for t in 1..values.len() {
        gaps[t] = (values[t] - values[t - 1]).abs();
    }
    gaps
}

pub fn flag_by_value_gap(values: &[f64], threshold: f64) -> Vec<usize> {
    flag_by_value_gap_with(values, threshold, GapMode::Absolute)
}

/// Steps `t >= 1` whose value differs from step `t-1` by more than
/// `threshold`. The flagged index is the later step of the pair.
pub fn flag_by_value_gap_with(values: &[f64], threshold: f64, mode: GapMode) -> Vec<usize> {
    (1..values.len())
        .filter(|&t| {
            let d = values[t] - values[t - 1];
            match mode {
                GapMode::Absolute => d.abs() > threshold,
                GapMode::SignedIncrease => d > threshold,
            }
        })
        .collect()
}

/// Estimate every step of `t` and flag the value gaps.
pub fn value_profile<E, P>(env: &E, t: &Trajectory, policy: &P, cfg: &ValueConfig) -> Result<ValueProfile>
where
    E: Environment,
    P: RolloutPolicy<E>,
{
    cfg.validate()?;
    let states = replay(env, t)?;
    let r_hat: Vec<f64> = states
        .par_iter()
        .enumerate()
        .map(|(step, after)| step_reward_from(env, t, step, after, policy, cfg.n, cfg.seed))
        .collect();
    let values = discounted_values(&r_hat, cfg.gamma);
    let gaps = value_gaps(&values);
    let flagged = flag_by_value_gap_with(&values, cfg.threshold, cfg.gap_mode);
    Ok(ValueProfile {
        trajectory_id: t.id.clone(),
        r_hat,
        values,
        gaps,
        flagged,
        n: cfg.n,
        gamma: cfg.gamma,
        threshold: cfg.threshold,
    })
}

/// Selection from a profile. No cap applies; with nothing flagged, the step
/// with the largest gap (lowest index on ties) is used instead.
pub fn build_value_selection(t: &Trajectory, profile: &ValueProfile) -> Result<CriticalSelection> {
    if profile.trajectory_id != t.id || profile.gaps.len() != t.len() {
        return Err(Error::SelectionMismatch {
            trajectory_id: profile.trajectory_id.clone(),
            reason: format!("profile of {} steps applied to {} ({} steps)", profile.gaps.len(), t.id, t.len()),
        });
    }
    let mut s = CriticalSelection::new(t.id.clone(), Strategy::Value, 1.0, t.len());
    if profile.flagged.is_empty() {
        let best = (1..t.len()).fold(None::<usize>, |best, i| match best {
            Some(b) if profile.gaps[b] >= profile.gaps[i] => Some(b),
            _ => Some(i),
        });
        let idx = best.unwrap_or(0);
        s.indices = vec![idx];
        s.note = Some(format!("no gap above threshold {}; fell back to largest gap at step {idx}", profile.threshold));
    } else {
        s.indices = profile.flagged.clone();
    }
    Ok(s)
}

pub fn write_profiles(profiles: &[ValueProfile], path: &Path) -> Result<()> {
    jsonl::write(path, profiles)
}

pub fn load_profiles(path: &Path) -> Result<Vec<ValueProfile>> {
    Ok(jsonl::read::<ValueProfile>(path)?.into_iter().map(|(_, p)| p).collect())
}

/// A finite MDP with state rewards.
///
/// `V(s) = R(s)` for terminal `s`, otherwise
/// `V(s) = R(s) + gamma * agg_a sum_s' P(s'|s,a) V(s')`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub rewards: Vec<f64>,
    pub terminal: Vec<bool>,
    /// `transitions[s][a]` is a distribution over next states.
    pub transitions: Vec<Vec<Vec<(usize, f64)>>>,
}

/// How actions are aggregated during value iteration.
#[derive(Debug, Clone, Copy)]
pub enum Evaluation<'a> {
    /// `policy[s][a]` action probabilities.
    Policy(&'a [Vec<f64>]),
    Optimal,
}

const RESIDUAL_TOLERANCE: f64 = 1e-10;
const MAX_SWEEPS: usize = 10_000;

/// Value iteration to a sup-norm residual below 1e-10.
pub fn exact_state_values(mdp: &TabularMdp, gamma: f64, eval: Evaluation<'_>) -> Result<Vec<f64>> {
    let n = mdp.rewards.len();
    let mut v: Vec<f64> = (0..n).map(|s| if mdp.terminal[s] { mdp.rewards[s] } else { 0.0 }).collect();
    for sweep in 0..MAX_SWEEPS {
        let mut residual: f64 = 0.0;
        for s in 0..n {
            if mdp.terminal[s] {
                continue;
            }
            let q = |a: usize| mdp.transitions[s][a].iter().map(|&(s2, p)| p * v[s2]).sum::<f64>();
            let backup = match eval {
                Evaluation::Policy(pi) => {
                    pi[s].iter().enumerate().filter(|(_, p)| **p > 0.0).map(|(a, p)| p * q(a)).sum()
                }
                Evaluation::Optimal => (0..mdp.transitions[s].len()).map(q).fold(f64::NEG_INFINITY, f64::max),
            };
            let new = mdp.rewards[s] + gamma * backup;
            residual = residual.max((new - v[s]).abs());
            v[s] = new;
        }
        if residual < RESIDUAL_TOLERANCE {
            log::debug!("value iteration converged after {} sweeps", sweep + 1);
            return Ok(v);
        }
        if sweep + 1 == MAX_SWEEPS {
            return Err(Error::NotConverged { iterations: MAX_SWEEPS, residual });
        }
    }
    unreachable!()
}

/// Tabular view of an enumerable environment: terminal states carry their
/// outcome reward, all other states reward 0. With `gamma = 1` the state
/// values are success probabilities.
pub fn tabulate<E: Environment>(env: &E) -> Result<(TabularMdp, HashMap<E::State, usize>)> {
    let states = env.enumerate_states()?;
    let index: HashMap<E::State, usize> = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let mut mdp = TabularMdp {
        rewards: Vec::with_capacity(states.len()),
        terminal: Vec::with_capacity(states.len()),
        transitions: Vec::with_capacity(states.len()),
    };
    for s in &states {
        let terminal = env.is_terminal(s);
        mdp.terminal.push(terminal);
        mdp.rewards.push(if terminal { env.success(s) } else { 0.0 });
        let mut per_action = Vec::with_capacity(env.actions().len());
        for &a in env.actions() {
            let next = env.step(s, a).state;
            let j = *index.get(&next).ok_or_else(|| Error::UnsupportedEnvironment(env.name().to_string()))?;
            per_action.push(vec![(j, 1.0)]);
        }
        mdp.transitions.push(per_action);
    }
    Ok((mdp, index))
}

/// Exact success probability of `policy` from every state.
pub fn exact_success<E, P>(env: &E, policy: &P) -> Result<(Vec<f64>, HashMap<E::State, usize>)>
where
    E: Environment,
    P: RolloutPolicy<E>,
{
    let (mdp, index) = tabulate(env)?;
    let states = env.enumerate_states()?;
    let pi: Vec<Vec<f64>> = states.iter().map(|s| policy.distribution(env, s)).collect();
    let v = exact_state_values(&mdp, 1.0, Evaluation::Policy(&pi))?;
    Ok((v, index))
}
