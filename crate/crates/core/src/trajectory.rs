//! Canonical trajectory model, step indexing and selection-cap arithmetic.
//!
//! Steps are indexed from 0 everywhere in the toolkit; only the selector
//! prompt uses 1-based `conversation[k]` labels.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One thought/action/observation turn of an episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub thought: String,
    pub action: String,
    /// Environment output after `action`; empty only for a terminal step.
    pub observation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub environment: String,
    pub instruction: String,
    pub steps: Vec<Step>,
    pub final_reward: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// The four kinds of critical step a selector may report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StepCategory {
    PlanCreation,
    CriticalObservation,
    CriticalAction,
    SelfCorrection,
}

impl StepCategory {
    pub const ALL: [StepCategory; 4] = [
        StepCategory::PlanCreation,
        StepCategory::CriticalObservation,
        StepCategory::CriticalAction,
        StepCategory::SelfCorrection,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StepCategory::PlanCreation => "PlanCreation",
            StepCategory::CriticalObservation => "CriticalObservation",
            StepCategory::CriticalAction => "CriticalAction",
            StepCategory::SelfCorrection => "SelfCorrection",
        }
    }

    /// Human-readable name as used in the selector prompt.
    pub fn display_name(self) -> &'static str {
        match self {
            StepCategory::PlanCreation => "Plan Creation",
            StepCategory::CriticalObservation => "Critical Observation",
            StepCategory::CriticalAction => "Critical Action",
            StepCategory::SelfCorrection => "Self Correction",
        }
    }
}

impl fmt::Display for StepCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Llm,
    Perplexity,
    Random,
    Value,
    Noncritical,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Llm => "llm",
            Strategy::Perplexity => "perplexity",
            Strategy::Random => "random",
            Strategy::Value => "value",
            Strategy::Noncritical => "noncritical",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "llm" => Ok(Strategy::Llm),
            "perplexity" => Ok(Strategy::Perplexity),
            "random" => Ok(Strategy::Random),
            "value" => Ok(Strategy::Value),
            "noncritical" => Ok(Strategy::Noncritical),
            other => Err(Error::Usage(format!("unknown strategy {other:?}"))),
        }
    }
}

/// The steps of one trajectory chosen for training, with provenance.
///
/// Serializes to one line of the selection file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalSelection {
    pub trajectory_id: String,
    pub strategy: Strategy,
    pub ratio: f64,
    pub cap: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub categories: BTreeMap<usize, StepCategory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_summary: Option<String>,
    /// Free-form provenance remark, e.g. that a fallback rule fired.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CriticalSelection {
    pub fn new(trajectory_id: impl Into<String>, strategy: Strategy, ratio: f64, cap: usize) -> Self {
        CriticalSelection {
            trajectory_id: trajectory_id.into(),
            strategy,
            ratio,
            cap,
            seed: None,
            indices: Vec::new(),
            categories: BTreeMap::new(),
            plan_summary: None,
            note: None,
        }
    }

    /// Check the selection against a trajectory of `len` steps.
    pub fn check(&self, len: usize) -> Result<()> {
        let fail = |reason: String| Err(Error::SelectionMismatch { trajectory_id: self.trajectory_id.clone(), reason });
        if let Some(&i) = self.indices.iter().find(|&&i| i >= len) {
            return fail(format!("index {i} >= length {len}"));
        }
        if self.indices.windows(2).any(|w| w[0] >= w[1]) {
            return fail("indices not strictly ascending".into());
        }
        if self.indices.len() > self.cap {
            return fail(format!("{} indices exceed cap {}", self.indices.len(), self.cap));
        }
        if let Some(k) = self.categories.keys().find(|k| self.indices.binary_search(k).is_err()) {
            return fail(format!("category for unselected index {k}"));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return fail(format!("ratio {} outside (0, 1]", self.ratio));
        }
        Ok(())
    }
}

/// Trajectories plus, once selection has run, one selection per trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub selections: BTreeMap<String, CriticalSelection>,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Self {
        Dataset { trajectories, selections: BTreeMap::new() }
    }

    pub fn get(&self, id: &str) -> Option<&Trajectory> {
        self.trajectories.iter().find(|t| t.id == id)
    }

    /// Attach selections; every key must name a trajectory in the dataset.
    pub fn attach(&mut self, selections: impl IntoIterator<Item = CriticalSelection>) -> Result<()> {
        for s in selections {
            let t = self.get(&s.trajectory_id).ok_or_else(|| Error::SelectionMismatch {
                trajectory_id: s.trajectory_id.clone(),
                reason: "no such trajectory in dataset".into(),
            })?;
            s.check(t.len())?;
            self.selections.insert(s.trajectory_id.clone(), s);
        }
        Ok(())
    }
}

/// Check every Trajectory/Step invariant; an empty report means valid.
pub fn validate_trajectory(t: &Trajectory) -> Vec<String> {
    let mut report = Vec::new();
    if t.id.is_empty() {
        report.push("id is empty".to_string());
    }
    if t.steps.is_empty() {
        report.push("steps is empty".to_string());
    }
    for (pos, step) in t.steps.iter().enumerate() {
        if step.index != pos {
            report.push(format!("index gap at position {pos}"));
        }
        if step.action.trim().is_empty() {
            report.push(format!("empty action at position {pos}"));
        }
    }
    if let Some(r) = t.final_reward {
        if !(0.0..=1.0).contains(&r) {
            report.push("final_reward out of [0,1]".to_string());
        }
    }
    report
}

/// `max(1, floor(ratio * length))`, the most steps a selection may hold.
pub fn selection_cap(ratio: f64, length: usize) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidRatio(ratio));
    }
    if length == 0 {
        return Err(Error::EmptyTrajectory);
    }
    // 1e-9 absorbs products such as 0.29 * 100 = 28.999999999999996.
    let raw = (ratio * length as f64 + 1e-9).floor() as usize;
    Ok(raw.clamp(1, length))
}

/// The first `upto` steps of `t`.
pub fn history_prefix(t: &Trajectory, upto: usize) -> Result<&[Step]> {
    t.steps.get(..upto).ok_or(Error::OutOfRange { upto, len: t.len() })
}

/// Per-step train flags. Flags govern thought and action only; observations
/// are never trainable.
pub fn apply_selection(t: &Trajectory, s: &CriticalSelection) -> Result<Vec<bool>> {
    if s.trajectory_id != t.id {
        return Err(Error::SelectionMismatch {
            trajectory_id: s.trajectory_id.clone(),
            reason: format!("applied to trajectory {}", t.id),
        });
    }
    let mut flags = vec![false; t.len()];
    for &i in &s.indices {
        match flags.get_mut(i) {
            Some(f) => *f = true,
            None => {
                return Err(Error::SelectionMismatch {
                    trajectory_id: s.trajectory_id.clone(),
                    reason: format!("index {i} >= length {}", t.len()),
                })
            }
        }
    }
    if s.indices.is_empty() {
        log::warn!("empty selection for {}; no step is trainable", t.id);
    }
    Ok(flags)
}
