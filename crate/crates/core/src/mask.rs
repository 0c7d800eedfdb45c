//! Loss-masked training datasets.
//!
//! Every trajectory is written in full so the trainer sees all of it as
//! context; each turn carries a `train` flag and only flagged turns (their
//! thought and action together) contribute to the loss.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::trajectory::{apply_selection, CriticalSelection, Dataset, StepCategory, Strategy, Trajectory};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub thought: String,
    pub action: String,
    pub observation: String,
    pub train: bool,
}

/// Fine-tuning settings recorded for reference; nothing here trains an LLM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingDefaults {
    pub optimizer: String,
    pub learning_rate: f64,
    pub lr_scheduler: String,
    pub warmup_ratio: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_length: usize,
}

impl Default for TrainingDefaults {
    fn default() -> Self {
        TrainingDefaults {
            optimizer: "adam".into(),
            learning_rate: 2e-5,
            lr_scheduler: "cosine".into(),
            warmup_ratio: 0.03,
            epochs: 3,
            batch_size: 128,
            max_length: 8192,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetadata {
    pub strategy: Strategy,
    pub ratio: f64,
    pub cap: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selector_model: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
    pub informational_training_defaults: TrainingDefaults,
}

/// One line of the masked dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedSample {
    pub trajectory_id: String,
    pub system_context: String,
    pub instruction: String,
    pub turns: Vec<Turn>,
    pub metadata: SampleMetadata,
}

impl MaskedSample {
    pub fn trained_turns(&self) -> usize {
        self.turns.iter().filter(|t| t.train).count()
    }

    /// The trajectory this sample was emitted from (minus id-level fields the
    /// sample does not carry).
    pub fn to_trajectory(&self, environment: &str, final_reward: Option<f64>) -> Trajectory {
        Trajectory {
            id: self.trajectory_id.clone(),
            environment: environment.to_string(),
            instruction: self.instruction.clone(),
            steps: self
                .turns
                .iter()
                .enumerate()
                .map(|(i, t)| crate::trajectory::Step {
                    index: i,
                    thought: t.thought.clone(),
                    action: t.action.clone(),
                    observation: t.observation.clone(),
                })
                .collect(),
            final_reward,
        }
    }
}

/// Task preamble with the thought/action answer templates.
pub fn system_context(environment: &str) -> String {
    let task = match environment {
        "maze" => "You are an agent navigating a grid maze. Reach the goal cell before you run out of moves.",
        "" => "You are an agent interacting with an environment to complete a task.",
        other => {
            return format!(
                "You are an agent interacting with the {other} environment to complete a task.\n{}",
                REACT_FORMAT
            )
        }
    };
    format!("{task}\n{REACT_FORMAT}")
}

const REACT_FORMAT: &str = "At each turn, first think about the situation, then act. Reply in the form:\nThought:\n<your reasoning>\nAction:\n<your action>";

#[derive(Debug, Clone, Default)]
pub struct EmitOptions {
    /// Recorded in sample metadata for `llm` selections.
    pub selector_model: Option<String>,
}

pub fn masked_sample(t: &Trajectory, s: &CriticalSelection, opts: &EmitOptions) -> Result<MaskedSample> {
    let flags = apply_selection(t, s)?;
    let degenerate = !flags.iter().any(|&f| f);
    Ok(MaskedSample {
        trajectory_id: t.id.clone(),
        system_context: system_context(&t.environment),
        instruction: t.instruction.clone(),
        turns: t
            .steps
            .iter()
            .zip(flags)
            .map(|(step, train)| Turn {
                thought: step.thought.clone(),
                action: step.action.clone(),
                observation: step.observation.clone(),
                train,
            })
            .collect(),
        metadata: SampleMetadata {
            strategy: s.strategy,
            ratio: s.ratio,
            cap: s.cap,
            seed: s.seed,
            selector_model: if s.strategy == Strategy::Llm { opts.selector_model.clone() } else { None },
            degenerate,
            informational_training_defaults: TrainingDefaults::default(),
        },
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmissionReport {
    pub samples: usize,
    pub total_steps: usize,
    pub trained_steps: usize,
    pub realized_ratio: f64,
    pub degenerate_samples: usize,
    pub categories: BTreeMap<StepCategory, usize>,
}

/// Masked samples for every trajectory of `d`, in dataset order.
pub fn build_masked_dataset(
    d: &Dataset,
    selections: &BTreeMap<String, CriticalSelection>,
    opts: &EmitOptions,
) -> Result<(Vec<MaskedSample>, EmissionReport)> {
    let mut samples = Vec::with_capacity(d.trajectories.len());
    let mut report = EmissionReport::default();
    for t in &d.trajectories {
        let s = selections.get(&t.id).ok_or_else(|| Error::MissingSelection(t.id.clone()))?;
        let sample = masked_sample(t, s, opts)?;
        if sample.metadata.degenerate {
            log::warn!("{} has no trainable turn", t.id);
            report.degenerate_samples += 1;
        }
        report.samples += 1;
        report.total_steps += t.len();
        report.trained_steps += sample.trained_turns();
        for c in s.categories.values() {
            *report.categories.entry(*c).or_default() += 1;
        }
        samples.push(sample);
    }
    report.realized_ratio =
        if report.total_steps == 0 { 0.0 } else { report.trained_steps as f64 / report.total_steps as f64 };
    Ok((samples, report))
}

pub fn emit_masked_dataset(
    d: &Dataset,
    selections: &BTreeMap<String, CriticalSelection>,
    out_path: &Path,
    opts: &EmitOptions,
) -> Result<EmissionReport> {
    let (samples, report) = build_masked_dataset(d, selections, opts)?;
    jsonl::write(out_path, &samples)?;
    Ok(report)
}

pub fn load_masked(path: &Path) -> Result<Vec<MaskedSample>> {
    Ok(jsonl::read::<MaskedSample>(path)?.into_iter().map(|(_, s)| s).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRatio {
    pub trajectory_id: String,
    pub selected: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub selections: usize,
    pub selected_steps: usize,
    /// Known only when the dataset is supplied.
    pub total_steps: usize,
    pub realized_ratio: f64,
    pub mean_trajectory_ratio: f64,
    pub per_trajectory: Vec<TrajectoryRatio>,
    pub categories: BTreeMap<StepCategory, usize>,
    pub categorized_indices: usize,
    pub strategies: BTreeMap<Strategy, usize>,
    pub truncated_or_fallback: usize,
}

/// Selection statistics; per-trajectory ratios need the dataset.
pub fn dataset_stats(selections: &[CriticalSelection], dataset: Option<&Dataset>) -> StatsReport {
    let mut r = StatsReport { selections: selections.len(), ..StatsReport::default() };
    let mut ratio_sum = 0.0;
    let mut ratio_count = 0usize;
    for s in selections {
        r.selected_steps += s.indices.len();
        *r.strategies.entry(s.strategy).or_default() += 1;
        for c in s.categories.values() {
            *r.categories.entry(*c).or_default() += 1;
        }
        r.categorized_indices += s.categories.len();
        if s.note.is_some() {
            r.truncated_or_fallback += 1;
        }
        let steps = dataset.and_then(|d| d.get(&s.trajectory_id)).map(Trajectory::len);
        let ratio = steps.filter(|&n| n > 0).map(|n| s.indices.len() as f64 / n as f64);
        if let (Some(n), Some(q)) = (steps, ratio) {
            r.total_steps += n;
            ratio_sum += q;
            ratio_count += 1;
        }
        r.per_trajectory.push(TrajectoryRatio {
            trajectory_id: s.trajectory_id.clone(),
            selected: s.indices.len(),
            steps,
            ratio,
        });
    }
    if r.total_steps > 0 {
        r.realized_ratio = r.selected_steps as f64 / r.total_steps as f64;
    }
    if ratio_count > 0 {
        r.mean_trajectory_ratio = ratio_sum / ratio_count as f64;
    }
    r
}

impl StatsReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "selections:            {}", self.selections);
        let _ = writeln!(out, "selected steps:        {}", self.selected_steps);
        let _ = writeln!(out, "total steps:           {}", self.total_steps);
        let _ = writeln!(out, "realized ratio:        {:.4}", self.realized_ratio);
        let _ = writeln!(out, "mean trajectory ratio: {:.4}", self.mean_trajectory_ratio);
        let _ = writeln!(out, "truncated/fallback:    {}", self.truncated_or_fallback);
        let _ = writeln!(out, "strategies:");
        for (s, n) in &self.strategies {
            let _ = writeln!(out, "  {s:<12} {n}");
        }
        let _ = writeln!(out, "categories ({} categorized indices):", self.categorized_indices);
        for c in StepCategory::ALL {
            let _ = writeln!(out, "  {:<20} {}", c.as_str(), self.categories.get(&c).copied().unwrap_or(0));
        }
        out
    }
}
