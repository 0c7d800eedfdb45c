//! Perplexity-ranked, random, and non-critical-complement selection.

use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::seed;
use crate::trajectory::{selection_cap, CriticalSelection, Strategy, Trajectory};

/// Token log-probabilities of each step's thought and action tokens.
///
/// One line of the logprob sidecar file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLogprobs {
    pub trajectory_id: String,
    pub steps: Vec<Vec<f64>>,
    /// Number of leading tokens of each step that belong to the thought.
    /// Only needed for [`PerplexityScope::ThoughtOnly`] and
    /// [`PerplexityScope::ActionOnly`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought_tokens: Option<Vec<usize>>,
}

/// Which tokens of a step are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerplexityScope {
    #[default]
    Joint,
    ThoughtOnly,
    ActionOnly,
}

pub fn load_logprobs(path: &Path) -> Result<Vec<StepLogprobs>> {
    Ok(jsonl::read::<StepLogprobs>(path)?.into_iter().map(|(_, v)| v).collect())
}

/// `exp(-mean(logprobs))`.
pub fn perplexity(logprobs: &[f64]) -> Result<f64> {
    if logprobs.is_empty() {
        return Err(Error::EmptyStep(0));
    }
    if let Some(&bad) = logprobs.iter().find(|&&x| x.is_nan() || x > 0.0) {
        return Err(Error::InvalidLogprob(bad));
    }
    let mean = logprobs.iter().sum::<f64>() / logprobs.len() as f64;
    Ok((-mean).exp())
}

fn scoped(lp: &StepLogprobs, step: usize, scope: PerplexityScope) -> Result<&[f64]> {
    let tokens = &lp.steps[step];
    if scope == PerplexityScope::Joint {
        return Ok(tokens);
    }
    let split = lp.thought_tokens.as_ref().and_then(|v| v.get(step).copied()).ok_or_else(|| Error::Alignment {
        trajectory_id: lp.trajectory_id.clone(),
        reason: format!("step {step} has no thought_tokens entry, needed for {scope:?}"),
    })?;
    if split > tokens.len() {
        return Err(Error::Alignment {
            trajectory_id: lp.trajectory_id.clone(),
            reason: format!("step {step}: thought_tokens {split} > {} tokens", tokens.len()),
        });
    }
    let part = match scope {
        PerplexityScope::ThoughtOnly => &tokens[..split],
        _ => &tokens[split..],
    };
    // A step with no thought (or no action) tokens is scored on all of them.
    Ok(if part.is_empty() { tokens } else { part })
}

pub fn step_perplexities(t: &Trajectory, lp: &StepLogprobs, scope: PerplexityScope) -> Result<Vec<f64>> {
    if lp.trajectory_id != t.id || lp.steps.len() != t.len() {
        return Err(Error::Alignment {
            trajectory_id: t.id.clone(),
            reason: format!(
                "logprobs for {:?} cover {} steps, trajectory has {}",
                lp.trajectory_id,
                lp.steps.len(),
                t.len()
            ),
        });
    }
    (0..t.len())
        .map(|i| {
            perplexity(scoped(lp, i, scope)?).map_err(|e| match e {
                Error::EmptyStep(_) => Error::EmptyStep(i),
                other => other,
            })
        })
        .collect()
}

/// The `cap` highest-perplexity steps; ties go to the lower index.
pub fn top_by_perplexity(ppl: &[f64], cap: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ppl.len()).collect();
    order.sort_by(|&a, &b| ppl[b].total_cmp(&ppl[a]).then(a.cmp(&b)));
    order.truncate(cap);
    order.sort_unstable();
    order
}

pub fn select_top_perplexity(
    t: &Trajectory,
    lp: &StepLogprobs,
    ratio: f64,
    scope: PerplexityScope,
) -> Result<CriticalSelection> {
    let cap = selection_cap(ratio, t.len())?;
    let ppl = step_perplexities(t, lp, scope)?;
    let mut s = CriticalSelection::new(t.id.clone(), Strategy::Perplexity, ratio, cap);
    s.indices = top_by_perplexity(&ppl, cap);
    Ok(s)
}

/// Uniform sample of exactly `selection_cap(ratio, T)` steps.
pub fn select_random(t: &Trajectory, ratio: f64, seed: u64) -> Result<CriticalSelection> {
    let cap = selection_cap(ratio, t.len())?;
    let mut rng = seed::rng(seed::mix(seed, &t.id));
    let mut indices = index::sample(&mut rng, t.len(), cap).into_vec();
    indices.sort_unstable();
    let mut s = CriticalSelection::new(t.id.clone(), Strategy::Random, ratio, cap);
    s.indices = indices;
    s.seed = Some(seed);
    Ok(s)
}

/// As many steps as `critical` holds (or the whole complement, if smaller),
/// drawn uniformly from the steps `critical` did not pick.
pub fn select_noncritical(t: &Trajectory, critical: &CriticalSelection, seed: u64) -> Result<CriticalSelection> {
    if critical.trajectory_id != t.id {
        return Err(Error::SelectionMismatch {
            trajectory_id: critical.trajectory_id.clone(),
            reason: format!("applied to trajectory {}", t.id),
        });
    }
    if let Some(&i) = critical.indices.iter().find(|&&i| i >= t.len()) {
        return Err(Error::SelectionMismatch {
            trajectory_id: t.id.clone(),
            reason: format!("index {i} >= length {}", t.len()),
        });
    }
    let complement: Vec<usize> = (0..t.len()).filter(|i| !critical.indices.contains(i)).collect();
    if complement.is_empty() {
        return Err(Error::NoComplement(t.id.clone()));
    }
    let count = critical.indices.len().min(complement.len()).max(1);
    let mut rng = seed::rng(seed::mix(seed, &t.id));
    let mut indices: Vec<usize> =
        index::sample(&mut rng, complement.len(), count).into_iter().map(|k| complement[k]).collect();
    indices.sort_unstable();
    let mut s = CriticalSelection::new(t.id.clone(), Strategy::Noncritical, critical.ratio, count);
    s.indices = indices;
    s.seed = Some(seed);
    Ok(s)
}
