//! Deterministic text environments used to generate expert data, replay
//! trajectories and run value rollouts.

pub mod maze;

use std::fmt::Debug;
use std::hash::Hash;

use rand::Rng;

use crate::error::{Error, Result};

pub use maze::{Direction, Maze, MazeSpec, MazeState, NoisyShortestPath};

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<S> {
    pub state: S,
    pub observation: String,
    /// Shaping reward of this transition.
    pub reward: f64,
    pub done: bool,
}

/// The small surface selectors and rollouts need from an environment.
///
/// Environments hold no mutable episode state; the state is passed in and
/// returned, so one instance can serve any number of concurrent rollouts.
pub trait Environment: Sync {
    type State: Clone + Eq + Hash + Debug + Send + Sync;
    type Action: Copy + Eq + Debug + Send + Sync;

    fn name(&self) -> &str;
    fn max_rounds(&self) -> usize;
    fn actions(&self) -> &[Self::Action];
    fn parse_action(&self, text: &str) -> Result<Self::Action>;
    fn reset(&self) -> (Self::State, String);
    fn step(&self, state: &Self::State, action: Self::Action) -> StepOutcome<Self::State>;
    fn render(&self, state: &Self::State) -> String;
    fn is_terminal(&self, state: &Self::State) -> bool;
    /// Normalized outcome reward of an episode ending in `state`, in [0, 1].
    fn success(&self, state: &Self::State) -> f64;

    /// Every reachable state, for exact evaluation.
    fn enumerate_states(&self) -> Result<Vec<Self::State>> {
        Err(Error::UnsupportedEnvironment(self.name().to_string()))
    }
}

/// A Markov action chooser used for rollouts.
///
/// Policies expose their full action distribution so that the same policy can
/// be sampled by Monte Carlo rollouts and evaluated exactly by the tabular
/// oracle.
pub trait RolloutPolicy<E: Environment>: Sync {
    /// Probabilities over `env.actions()`, in that order, summing to 1.
    fn distribution(&self, env: &E, state: &E::State) -> Vec<f64>;

    fn act<R: Rng + ?Sized>(&self, env: &E, state: &E::State, rng: &mut R) -> E::Action {
        let probs = self.distribution(env, state);
        let actions = env.actions();
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (a, p) in actions.iter().zip(&probs) {
            acc += p;
            if u < acc {
                return *a;
            }
        }
        // Rounding left u above the cumulative total; take the last action
        // with positive mass.
        actions.iter().zip(&probs).rev().find(|(_, p)| **p > 0.0).map(|(a, _)| *a).unwrap_or(actions[0])
    }
}
