//! `critsel` command-line front end.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::env::maze::{expert_trajectory, make_split, Maze, MazeSpec, NoisyShortestPath};
use crate::error::{Error, Result};
use crate::ingest::{load_dataset, load_selections, write_dataset, write_selections};
use crate::jsonl;
use crate::mask::{dataset_stats, emit_masked_dataset, load_masked, EmitOptions};
use crate::select::{
    load_logprobs, select_noncritical, select_random, select_top_perplexity, select_with_llm, ChatTransport,
    HttpTransport, PerplexityScope, ResponseCache, SelectorPromptConfig,
};
use crate::trainer::{evaluate, run_ablation, train, EvalResult, LogLinearPolicy};
use crate::trajectory::{validate_trajectory, CriticalSelection, Dataset, Strategy};
use crate::value::{build_value_selection, load_profiles, value_profile, write_profiles, GapMode};

#[derive(Debug, Parser)]
#[command(name = "critsel", version, about = "Critical-step selection and loss-masked dataset emission")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for trajectory-parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize a chat-format trajectory file.
    Ingest(IngestArgs),
    /// Pick steps to train on.
    Select(SelectArgs),
    /// Monte Carlo value estimates per step.
    ValueProfile(ValueProfileArgs),
    /// Write loss-masked samples.
    Emit(EmitArgs),
    /// Generate maze specs and expert trajectories.
    GenToy(GenToyArgs),
    /// Train the log-linear maze policy on masked samples.
    TrainToy(TrainToyArgs),
    /// Evaluate a trained maze policy on held-in and held-out specs.
    EvalToy(EvalToyArgs),
    /// Strategy x ratio x seed ablation on generated mazes.
    Ablate(AblateArgs),
    /// Selection statistics.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// llm | perplexity | random | value | noncritical
    #[arg(long)]
    pub strategy: String,
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-token logprob sidecar (perplexity).
    #[arg(long)]
    pub logprobs: Option<PathBuf>,
    /// joint | thought-only | action-only (perplexity).
    #[arg(long)]
    pub scope: Option<String>,
    /// Chat-completions base URL (llm).
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Model name (llm).
    #[arg(long)]
    pub model: Option<String>,
    /// Response cache directory (llm).
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Value profiles from `value-profile` (value).
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    /// Critical selections whose complement is sampled (noncritical).
    #[arg(long)]
    pub critical: Option<PathBuf>,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValueProfileArgs {
    #[arg(long, default_value = "maze")]
    pub env: String,
    #[arg(long = "N")]
    pub n: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// absolute | signed-increase
    #[arg(long)]
    pub gap_mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rollout policy deviation probability.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Directory of `<trajectory id>.json` maze specs (default: `specs/` next to --in).
    #[arg(long)]
    pub specs: Option<PathBuf>,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmitArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub selections: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenToyArgs {
    #[arg(long)]
    pub family_seed: Option<u64>,
    #[arg(long)]
    pub held_in: Option<usize>,
    #[arg(long)]
    pub held_out: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    /// Masked samples from `emit`.
    #[arg(long)]
    pub masked: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalToyArgs {
    /// Policy written by `train-toy`.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Output directory of `gen-toy`.
    #[arg(long)]
    pub toy_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub selections: PathBuf,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Snapshot<'a> {
    command: &'a str,
    config: &'a RunConfig,
}

fn snapshot_path_for_file(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".config.json");
    out.with_file_name(name)
}

fn write_snapshot(path: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    jsonl::write_json(path, &Snapshot { command, config: cfg })
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

fn parse_scope(s: &str) -> Result<PerplexityScope> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| usage(format!("unknown --scope {s:?}; expected joint, thought-only or action-only")))
}

fn parse_gap_mode(s: &str) -> Result<GapMode> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| usage(format!("unknown --gap-mode {s:?}; expected absolute or signed-increase")))
}

/// Parse arguments and run; the binary's entry point.
pub fn run(cli: Cli) -> Result<()> {
    run_with(cli, &HttpTransport)
}

/// As [`run`], with the chat transport injected.
pub fn run_with(cli: Cli, transport: &dyn ChatTransport) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(cli.config.as_deref())?;
    let jobs = cli.jobs.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Configuration(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli.command, &mut cfg, transport))
}

fn dispatch(command: Command, cfg: &mut RunConfig, transport: &dyn ChatTransport) -> Result<()> {
    match command {
        Command::Ingest(a) => cmd_ingest(a, cfg),
        Command::Select(a) => cmd_select(a, cfg, transport),
        Command::ValueProfile(a) => cmd_value_profile(a, cfg),
        Command::Emit(a) => cmd_emit(a, cfg),
        Command::GenToy(a) => cmd_gen_toy(a, cfg),
        Command::TrainToy(a) => cmd_train_toy(a, cfg),
        Command::EvalToy(a) => cmd_eval_toy(a, cfg),
        Command::Ablate(a) => cmd_ablate(a, cfg),
        Command::Report(a) => cmd_report(a, cfg),
    }
}

fn cmd_ingest(a: IngestArgs, cfg: &RunConfig) -> Result<()> {
    let d = load_dataset(&a.input)?;
    for t in &d.trajectories {
        for problem in validate_trajectory(t) {
            log::warn!("{}: {problem}", t.id);
        }
    }
    write_dataset(&d, &a.out)?;
    write_snapshot(&snapshot_path_for_file(&a.out), "ingest", cfg)?;
    eprintln!("ingested {} trajectories", d.trajectories.len());
    Ok(())
}

fn by_id<T, F: Fn(&T) -> &str>(items: Vec<T>, key: F) -> BTreeMap<String, T> {
    items.into_iter().map(|x| (key(&x).to_string(), x)).collect()
}

fn cmd_select(a: SelectArgs, cfg: &mut RunConfig, transport: &dyn ChatTransport) -> Result<()> {
    let strategy: Strategy = a.strategy.parse()?;
    if let Some(r) = a.ratio {
        cfg.selection.ratio = r;
    }
    if let Some(s) = a.seed {
        cfg.selection.seed = s;
    }
    if let Some(s) = &a.scope {
        cfg.selection.perplexity_scope = parse_scope(s)?;
    }
    if let Some(u) = a.endpoint {
        cfg.endpoint.base_url = u;
    }
    if let Some(m) = a.model {
        cfg.endpoint.model_name = m;
    }
    if a.cache_dir.is_some() {
        cfg.paths.cache_dir = a.cache_dir;
    }
    cfg.validate()?;
    let d = load_dataset(&a.input)?;
    let ratio = cfg.selection.ratio;
    let seed = cfg.selection.seed;

    let selections: Vec<CriticalSelection> = match strategy {
        Strategy::Random => d.trajectories.par_iter().map(|t| select_random(t, ratio, seed)).collect::<Result<_>>()?,
        Strategy::Perplexity => {
            let path = a.logprobs.ok_or_else(|| usage("--strategy perplexity requires --logprobs"))?;
            let lp = by_id(load_logprobs(&path)?, |l| &l.trajectory_id);
            let scope = cfg.selection.perplexity_scope;
            d.trajectories
                .par_iter()
                .map(|t| {
                    let l = lp.get(&t.id).ok_or_else(|| Error::Alignment {
                        trajectory_id: t.id.clone(),
                        reason: format!("no logprobs in {}", path.display()),
                    })?;
                    select_top_perplexity(t, l, ratio, scope)
                })
                .collect::<Result<_>>()?
        }
        Strategy::Value => {
            let path = a.profiles.ok_or_else(|| usage("--strategy value requires --profiles"))?;
            let profiles = by_id(load_profiles(&path)?, |p| &p.trajectory_id);
            d.trajectories
                .par_iter()
                .map(|t| {
                    let p = profiles.get(&t.id).ok_or_else(|| Error::MissingSelection(t.id.clone()))?;
                    build_value_selection(t, p)
                })
                .collect::<Result<_>>()?
        }
        Strategy::Noncritical => {
            let path = a.critical.ok_or_else(|| usage("--strategy noncritical requires --critical"))?;
            let critical = by_id(load_selections(&path)?, |s| &s.trajectory_id);
            d.trajectories
                .par_iter()
                .map(|t| {
                    let c = critical.get(&t.id).ok_or_else(|| Error::MissingSelection(t.id.clone()))?;
                    select_noncritical(t, c, seed)
                })
                .collect::<Result<_>>()?
        }
        Strategy::Llm => {
            let prompt_cfg = SelectorPromptConfig { ratio, observation_limit: cfg.selection.observation_limit };
            let cache = cfg.paths.cache_dir.as_ref().map(ResponseCache::new);
            let endpoint = cfg.endpoint.clone();
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.selection.max_in_flight)
                .build()
                .map_err(|e| Error::Configuration(format!("thread pool: {e}")))?;
            pool.install(|| {
                d.trajectories
                    .par_iter()
                    .map(|t| select_with_llm(t, &prompt_cfg, &endpoint, transport, cache.as_ref()))
                    .collect::<Result<_>>()
            })?
        }
    };
    for s in &selections {
        if s.indices.is_empty() {
            log::warn!("{}: empty selection", s.trajectory_id);
        }
    }
    write_selections(&selections, &a.out)?;
    write_snapshot(&snapshot_path_for_file(&a.out), &format!("select --strategy {}", strategy.as_str()), cfg)?;
    eprintln!("wrote {} selections", selections.len());
    Ok(())
}

fn load_spec_dir(dir: &Path) -> Result<BTreeMap<String, MazeSpec>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            out.insert(id, jsonl::read_json::<MazeSpec>(&path)?);
        }
    }
    Ok(out)
}

fn cmd_value_profile(a: ValueProfileArgs, cfg: &mut RunConfig) -> Result<()> {
    if a.env != "maze" {
        return Err(Error::UnsupportedEnvironment(a.env));
    }
    if let Some(n) = a.n {
        cfg.value.n = n;
    }
    if let Some(g) = a.gamma {
        cfg.value.gamma = g;
    }
    if let Some(t) = a.threshold {
        cfg.value.threshold = t;
    }
    if let Some(m) = &a.gap_mode {
        cfg.value.gap_mode = parse_gap_mode(m)?;
    }
    if let Some(s) = a.seed {
        cfg.value.seed = s;
    }
    if let Some(e) = a.epsilon {
        cfg.toy.rollout_epsilon = e;
    }
    cfg.validate()?;
    let specs_dir = a.specs.clone().unwrap_or_else(|| a.input.parent().unwrap_or(Path::new(".")).join("specs"));
    let specs = load_spec_dir(&specs_dir)?;
    let d = load_dataset(&a.input)?;
    let policy = NoisyShortestPath { epsilon: cfg.toy.rollout_epsilon };
    let value_cfg = cfg.value;
    let profiles = d
        .trajectories
        .par_iter()
        .map(|t| {
            let spec = specs
                .get(&t.id)
                .ok_or_else(|| Error::Configuration(format!("no maze spec {}/{}.json", specs_dir.display(), t.id)))?;
            let maze = Maze::new(spec.clone())?;
            value_profile(&maze, t, &policy, &value_cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    write_profiles(&profiles, &a.out)?;
    write_snapshot(&snapshot_path_for_file(&a.out), "value-profile", cfg)?;
    eprintln!("profiled {} trajectories", profiles.len());
    Ok(())
}

fn cmd_emit(a: EmitArgs, cfg: &RunConfig) -> Result<()> {
    let d = load_dataset(&a.input)?;
    let selections = by_id(load_selections(&a.selections)?, |s| &s.trajectory_id);
    let llm = selections.values().any(|s| s.strategy == Strategy::Llm);
    let opts = EmitOptions { selector_model: llm.then(|| cfg.endpoint.model_name.clone()) };
    let report = emit_masked_dataset(&d, &selections, &a.out, &opts)?;
    write_snapshot(&snapshot_path_for_file(&a.out), "emit", cfg)?;
    eprintln!(
        "emitted {} samples; {} of {} steps trained ({:.1}%)",
        report.samples,
        report.trained_steps,
        report.total_steps,
        report.realized_ratio * 100.0
    );
    Ok(())
}

fn write_split(dir: &Path, prefix: &str, specs: &[MazeSpec]) -> Result<()> {
    let mut trajectories = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let id = format!("{prefix}-{i:04}");
        jsonl::write_json(&dir.join("specs").join(format!("{id}.json")), spec)?;
        trajectories.push(expert_trajectory(spec, &id)?);
    }
    write_dataset(&Dataset::new(trajectories), &dir.join("trajectories.jsonl"))
}

fn cmd_gen_toy(a: GenToyArgs, cfg: &mut RunConfig) -> Result<()> {
    if let Some(s) = a.family_seed {
        cfg.toy.family_seed = s;
    }
    if let Some(n) = a.held_in {
        cfg.toy.held_in = n;
    }
    if let Some(n) = a.held_out {
        cfg.toy.held_out = n;
    }
    cfg.validate()?;
    let (held_in, held_out) = make_split(cfg.toy.family_seed, cfg.toy.held_in, cfg.toy.held_out)?;
    write_split(&a.out.join("held_in"), "maze-in", &held_in)?;
    write_split(&a.out.join("held_out"), "maze-out", &held_out)?;
    write_snapshot(&a.out.join("config.json"), "gen-toy", cfg)?;
    eprintln!("generated {} held-in and {} held-out mazes", held_in.len(), held_out.len());
    Ok(())
}

fn cmd_train_toy(a: TrainToyArgs, cfg: &mut RunConfig) -> Result<()> {
    if a.masked.is_some() {
        cfg.paths.masked = a.masked;
    }
    cfg.validate()?;
    let path = cfg.paths.masked.clone().ok_or_else(|| usage("train-toy requires --masked"))?;
    let samples = load_masked(&path)?;
    let policy = train(&samples, &cfg.train)?;
    jsonl::write_json(&a.out.join("policy.json"), &policy)?;
    write_snapshot(&a.out.join("config.json"), "train-toy", cfg)?;
    eprintln!("trained on {} samples", samples.len());
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    held_in: EvalResult,
    held_out: EvalResult,
    episodes: usize,
    seed: u64,
}

fn cmd_eval_toy(a: EvalToyArgs, cfg: &mut RunConfig) -> Result<()> {
    if a.policy.is_some() {
        cfg.paths.policy = a.policy;
    }
    if a.toy_dir.is_some() {
        cfg.paths.toy_dir = a.toy_dir;
    }
    cfg.validate()?;
    let policy_path = cfg.paths.policy.clone().ok_or_else(|| usage("eval-toy requires --policy"))?;
    let toy_dir = cfg.paths.toy_dir.clone().ok_or_else(|| usage("eval-toy requires --toy-dir"))?;
    let policy: LogLinearPolicy = jsonl::read_json(&policy_path)?;
    let held_in: Vec<MazeSpec> = load_spec_dir(&toy_dir.join("held_in").join("specs"))?.into_values().collect();
    let held_out: Vec<MazeSpec> = load_spec_dir(&toy_dir.join("held_out").join("specs"))?.into_values().collect();
    let episodes = cfg.train.eval_episodes;
    let report = EvalReport {
        held_in: evaluate(&policy, &held_in, episodes, cfg.train.seed)?,
        held_out: evaluate(&policy, &held_out, episodes, cfg.train.seed)?,
        episodes,
        seed: cfg.train.seed,
    };
    jsonl::write_json(&a.out.join("eval.json"), &report)?;
    write_snapshot(&a.out.join("config.json"), "eval-toy", cfg)?;
    eprintln!(
        "held-in success {:.3}, held-out success {:.3}",
        report.held_in.success_rate, report.held_out.success_rate
    );
    Ok(())
}

fn cmd_ablate(a: AblateArgs, cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let results = run_ablation(&cfg.ablation_config())?;
    jsonl::write_atomic(&a.out.join("ablation.csv"), results.to_csv()?.as_bytes())?;
    jsonl::write_json(&a.out.join("ablation.json"), &results)?;
    let table = results.render_table();
    jsonl::write_atomic(&a.out.join("summary.txt"), table.as_bytes())?;
    write_snapshot(&a.out.join("config.json"), "ablate", cfg)?;
    print!("{table}");
    Ok(())
}

fn cmd_report(a: ReportArgs, cfg: &RunConfig) -> Result<()> {
    let selections = load_selections(&a.selections)?;
    let dataset = a.dataset.as_deref().map(load_dataset).transpose()?;
    let stats = dataset_stats(&selections, dataset.as_ref());
    jsonl::write_json(&a.out, &stats)?;
    write_snapshot(&snapshot_path_for_file(&a.out), "report", cfg)?;
    print!("{}", stats.render_text());
    Ok(())
}

/// One-line `error[<class>]: <message>` rendering.
pub fn render_error(e: &Error) -> String {
    let msg = e.to_string().replace('\n', " ");
    format!("error[{}]: {msg}", e.class())
}
