//! Critical-step selection for agent trajectories.
//!
//! Load ReAct-style trajectories, pick the steps worth training on (LLM
//! selector, perplexity, random, complement, or Monte Carlo value gaps), and
//! emit loss-masked fine-tuning data. A maze toy environment and a log-linear
//! trainer make the whole loop runnable on a laptop.

pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod ingest;
pub mod jsonl;
pub mod mask;
pub mod seed;
pub mod select;
pub mod trainer;
pub mod trajectory;
pub mod value;

pub use error::{Error, Result};
pub use trajectory::{
    apply_selection, history_prefix, selection_cap, validate_trajectory, CriticalSelection, Dataset, Step,
    StepCategory, Strategy, Trajectory,
};
