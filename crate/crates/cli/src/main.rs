//! Batch workflows over the rollout/reward/advantage stack: generate
//! trajectories against a pluggable policy, score them, shape rewards into
//! group advantages, curate datasets, and evaluate predictions.
//!
//! Every command is deterministic given its inputs, the seed, and a
//! scripted or mock policy; outputs are canonicalized by sample id so reruns
//! are byte-identical. Exit codes are stable: 0 success, 1 schema or
//! validation failure, 2 transport or IO failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use vidrl::dgrpo::{
    compute_group, AlphaBetaRow, AlphaBetaTable, WeightFunction, DEFAULT_ADVANTAGE_EPS,
};
use vidrl::jsonl::{self, DataError};
use vidrl::metrics;
use vidrl::pipeline::{
    run_curation, CurationConfig, Sample, DEFAULT_DELTA_THRESHOLD,
};
use vidrl::policy::{
    EndpointProvider, MockParams, MockProvider, PolicyError, PolicyProvider, ScriptedProvider,
};
use vidrl::protocol::{run_episode, EpisodeConfig, Toolbox, Trajectory};
use vidrl::rewards::{extract_prediction, score_trajectory, Prediction, RewardRecord};
use vidrl::seed;

#[derive(Parser)]
#[command(name = "vidrl", version, about = "Rollout, reward, and curation workflows")]
struct Cli {
    /// Print machine-readable schema metadata and exit.
    #[arg(long)]
    schema: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate G rollout trajectories per sample against a policy.
    Rollout(RolloutArgs),
    /// Score trajectories into per-rollout reward components.
    Reward(RewardArgs),
    /// Shape reward reports into difficulty-weighted group advantages.
    Dgrpo(DgrpoArgs),
    /// Curate a dataset by k-rollout reward-range filtering.
    Filter(FilterArgs),
    /// Aggregate evaluation metrics from trajectories.
    Eval(EvalArgs),
}

#[derive(Args)]
struct PolicyArgs {
    /// Policy to query: `script:PATH` (JSON array of emissions),
    /// `mock:k=v,...` (keys: p_tool, sigma, p_correct, max_tool_calls), or
    /// `endpoint:ADDR` (newline-delimited JSON over TCP).
    #[arg(long, env = "VIDRL_POLICY")]
    policy: String,
}

#[derive(Args)]
struct EpisodeArgs {
    /// Maximum number of tool rounds per episode.
    #[arg(long, default_value_t = 2, env = "VIDRL_MAX_TURNS")]
    max_turns: usize,
    /// Maximum emission length in characters.
    #[arg(long, default_value_t = 1024)]
    max_response_length: usize,
    /// Offer the toolbox to the policy (negate with --no-tools).
    #[arg(long, default_value_t = true, overrides_with = "no_tools")]
    tools: bool,
    #[arg(long = "no-tools", hide = true)]
    no_tools: bool,
}

impl EpisodeArgs {
    fn config(&self) -> EpisodeConfig {
        EpisodeConfig {
            max_num_turns: self.max_turns,
            max_response_length: self.max_response_length,
            thinking_mode: true,
            tools_enabled: self.tools && !self.no_tools,
        }
    }
}

#[derive(Args)]
struct RolloutArgs {
    /// Input samples (JSONL).
    #[arg(long)]
    samples: PathBuf,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Rollouts per sample.
    #[arg(long, default_value_t = 8, env = "VIDRL_GROUP_SIZE")]
    group_size: usize,
    #[command(flatten)]
    episode: EpisodeArgs,
    #[arg(long, default_value_t = 0, env = "VIDRL_SEED")]
    seed: u64,
    /// Output trajectories (JSONL).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RewardArgs {
    /// Input trajectories (JSONL).
    #[arg(long)]
    trajectories: PathBuf,
    /// Samples the trajectories refer to (JSONL).
    #[arg(long)]
    samples: PathBuf,
    /// Score with the tool-enabled reward scheme (negate with --no-tools).
    #[arg(long, default_value_t = true, overrides_with = "no_tools")]
    tools: bool,
    #[arg(long = "no-tools", hide = true)]
    no_tools: bool,
    /// Output reward report (JSONL).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DgrpoArgs {
    /// Input reward report (JSONL), grouped by sample id.
    #[arg(long)]
    rewards: PathBuf,
    /// Rollouts per sample; every group must have exactly this many.
    #[arg(long, default_value_t = 8, env = "VIDRL_GROUP_SIZE")]
    group_size: usize,
    /// Difficulty-parameter table (JSONL of {task, source, alpha, beta});
    /// defaults to the built-in per-dataset values.
    #[arg(long)]
    alpha_beta: Option<PathBuf>,
    /// Sample-difficulty weight function.
    #[arg(long, default_value = "omega1")]
    weight_fn: WeightFunction,
    /// Output group report (JSONL).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    /// Input samples (JSONL).
    #[arg(long)]
    samples: PathBuf,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Rollouts per sample (k).
    #[arg(long, default_value_t = 8, env = "VIDRL_GROUP_SIZE")]
    group_size: usize,
    /// Inclusive reward-range discard threshold.
    #[arg(long, default_value_t = DEFAULT_DELTA_THRESHOLD)]
    threshold: f64,
    /// Filter on total reward instead of the accuracy component.
    #[arg(long)]
    delta_on_total: bool,
    /// Suggestion noise scale for kept grounding samples.
    #[arg(long, default_value_t = 0.2)]
    lambda: f64,
    #[command(flatten)]
    episode: EpisodeArgs,
    #[arg(long, default_value_t = 0, env = "VIDRL_SEED")]
    seed: u64,
    /// Output kept samples (JSONL).
    #[arg(long)]
    out: PathBuf,
    /// Output curation report (JSON).
    #[arg(long)]
    report: PathBuf,
    /// Optional output of annotation candidates with suggestions (JSONL).
    #[arg(long)]
    cot_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Input trajectories (JSONL).
    #[arg(long)]
    trajectories: PathBuf,
    /// Samples the trajectories refer to (JSONL).
    #[arg(long)]
    samples: PathBuf,
    /// Recall IoU thresholds.
    #[arg(long, value_delimiter = ',', default_values_t = [0.3, 0.5, 0.7])]
    thresholds: Vec<f64>,
    /// Output metrics (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV export in the benchmark-table column layout.
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// CLI failure with its exit-code class.
enum CliError {
    /// Schema, validation, or configuration problem (exit 1).
    Validation(String),
    /// Transport or IO problem (exit 2).
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Validation(_) => ExitCode::from(1),
            CliError::Io(_) => ExitCode::from(2),
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Io(m) => m,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Schema { .. } => CliError::Validation(e.to_string()),
            DataError::Io(_) => CliError::Io(e.to_string()),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        CliError::Io(e.to_string())
    }
}

fn read_samples_indexed(path: &Path) -> Result<(Vec<Sample>, BTreeMap<String, Sample>), CliError> {
    let samples: Vec<Sample> = jsonl::read_file(path).map_err(CliError::from)?;
    let mut by_id = BTreeMap::new();
    for sample in &samples {
        if by_id.insert(sample.sample_id.clone(), sample.clone()).is_some() {
            return Err(CliError::Validation(format!(
                "duplicate sample_id `{}` in {}",
                sample.sample_id,
                path.display()
            )));
        }
    }
    Ok((samples, by_id))
}

fn build_provider(spec: &str) -> Result<Box<dyn PolicyProvider>, CliError> {
    if let Some(path) = spec.strip_prefix("script:") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("read script {path}: {e}")))?;
        let emissions: Vec<String> = serde_json::from_str(&text).map_err(|e| {
            CliError::Validation(format!("script {path} must be a JSON array of strings: {e}"))
        })?;
        return Ok(Box::new(ScriptedProvider { emissions }));
    }
    if let Some(spec) = spec.strip_prefix("mock:") {
        let mut params = MockParams::default();
        for pair in spec.split(',').filter(|p| !p.is_empty()) {
            let (key, value) = pair.split_once('=').ok_or_else(|| {
                CliError::Validation(format!("mock parameter `{pair}` is not key=value"))
            })?;
            let parse_f64 = || {
                value.parse::<f64>().map_err(|_| {
                    CliError::Validation(format!("mock parameter `{key}` must be a number"))
                })
            };
            match key {
                "p_tool" => params.p_tool = parse_f64()?,
                "sigma" => params.sigma = parse_f64()?,
                "p_correct" => params.p_correct = parse_f64()?,
                "max_tool_calls" => {
                    params.max_tool_calls = value.parse().map_err(|_| {
                        CliError::Validation("mock parameter `max_tool_calls` must be an integer".into())
                    })?
                }
                other => {
                    return Err(CliError::Validation(format!("unknown mock parameter `{other}`")))
                }
            }
        }
        return Ok(Box::new(MockProvider { params }));
    }
    if spec == "mock" {
        return Ok(Box::new(MockProvider { params: MockParams::default() }));
    }
    if let Some(addr) = spec.strip_prefix("endpoint:") {
        // Preflight so an unreachable endpoint fails fast with exit 2.
        vidrl::policy::connect_endpoint(addr)?;
        return Ok(Box::new(EndpointProvider { addr: addr.to_string() }));
    }
    Err(CliError::Validation(format!(
        "policy must be script:PATH, mock[:k=v,...] or endpoint:ADDR, got `{spec}`"
    )))
}

fn cmd_rollout(args: &RolloutArgs) -> Result<(), CliError> {
    if args.group_size < 1 {
        return Err(CliError::Validation("--group-size must be at least 1".into()));
    }
    let (mut samples, _) = read_samples_indexed(&args.samples)?;
    samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let provider = build_provider(&args.policy.policy)?;
    let toolbox = Toolbox::default();
    let cfg = args.episode.config();

    let mut trajectories: Vec<Trajectory> = Vec::with_capacity(samples.len() * args.group_size);
    for sample in &samples {
        for rollout in 0..args.group_size {
            let sub_seed = seed::rollout_seed(args.seed, &sample.sample_id, rollout);
            let traj = provider
                .make(sample, rollout, sub_seed)
                .and_then(|mut policy| run_episode(policy.as_mut(), sample, &toolbox, &cfg));
            match traj {
                Ok(t) => trajectories.push(t),
                Err(e) => {
                    eprintln!("sample {}: rollout {rollout} failed: {e}", sample.sample_id);
                }
            }
        }
    }
    jsonl::write_file(&args.out, &trajectories).map_err(CliError::from)
}

fn cmd_reward(args: &RewardArgs) -> Result<(), CliError> {
    let trajectories: Vec<Trajectory> =
        jsonl::read_file(&args.trajectories).map_err(CliError::from)?;
    let (_, by_id) = read_samples_indexed(&args.samples)?;
    let tools_enabled = args.tools && !args.no_tools;
    let mut records = Vec::with_capacity(trajectories.len());
    for traj in &trajectories {
        let sample = by_id.get(&traj.sample_id).ok_or_else(|| {
            CliError::Validation(format!(
                "trajectory references unknown sample_id `{}`",
                traj.sample_id
            ))
        })?;
        let components = score_trajectory(traj, sample, tools_enabled);
        records.push(RewardRecord::new(sample, &components));
    }
    jsonl::write_file(&args.out, &records).map_err(CliError::from)
}

fn cmd_dgrpo(args: &DgrpoArgs) -> Result<(), CliError> {
    if args.group_size < 2 {
        return Err(CliError::Validation("--group-size must be at least 2".into()));
    }
    let records: Vec<RewardRecord> = jsonl::read_file(&args.rewards).map_err(CliError::from)?;
    let table = match &args.alpha_beta {
        Some(path) => {
            let rows: Vec<AlphaBetaRow> = jsonl::read_file(path).map_err(CliError::from)?;
            AlphaBetaTable::from_rows(rows).map_err(|e| CliError::Validation(e.to_string()))?
        }
        None => AlphaBetaTable::default(),
    };

    let mut groups = Vec::new();
    let mut seen: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();
    let mut idx = 0;
    while idx < records.len() {
        let sample_id = records[idx].sample_id.clone();
        if !seen.insert(sample_id.clone()) {
            return Err(CliError::Validation(format!(
                "sample `{sample_id}` appears in more than one run; reward reports must be grouped"
            )));
        }
        let run_end = records[idx..]
            .iter()
            .position(|r| r.sample_id != sample_id)
            .map(|off| idx + off)
            .unwrap_or(records.len());
        let run = &records[idx..run_end];
        if run.len() != args.group_size {
            return Err(CliError::Validation(format!(
                "sample `{sample_id}` has {} rollouts, expected {}",
                run.len(),
                args.group_size
            )));
        }
        let task = run[0].task;
        let source = &run[0].source;
        if run.iter().any(|r| r.task != task || &r.source != source) {
            return Err(CliError::Validation(format!(
                "sample `{sample_id}` mixes tasks or sources within its group"
            )));
        }
        let params = table
            .lookup(task, source)
            .map_err(|e| CliError::Validation(e.to_string()))?;
        let components: Vec<_> = run.iter().map(|r| r.components()).collect();
        let group = compute_group(
            &sample_id,
            task,
            &components,
            params.as_ref(),
            args.weight_fn,
            DEFAULT_ADVANTAGE_EPS,
        )
        .map_err(|e| CliError::Validation(e.to_string()))?;
        groups.push(group);
        idx = run_end;
    }
    jsonl::write_file(&args.out, &groups).map_err(CliError::from)
}

fn cmd_filter(args: &FilterArgs) -> Result<(), CliError> {
    if args.group_size < 2 {
        return Err(CliError::Validation("--group-size must be at least 2".into()));
    }
    let (mut samples, _) = read_samples_indexed(&args.samples)?;
    samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let provider = build_provider(&args.policy.policy)?;
    let cfg = CurationConfig {
        k: args.group_size,
        delta_threshold: args.threshold,
        delta_on_total: args.delta_on_total,
        episode: args.episode.config(),
        lambda: args.lambda,
        seed: args.seed,
    };
    let out = run_curation(&samples, provider.as_ref(), &Toolbox::default(), &cfg);
    jsonl::write_file(&args.out, &out.rl_split).map_err(CliError::from)?;
    let report = serde_json::to_string_pretty(&out.report)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    std::fs::write(&args.report, report + "\n").map_err(|e| CliError::Io(e.to_string()))?;
    if let Some(path) = &args.cot_out {
        jsonl::write_file(path, &out.cot_candidates).map_err(CliError::from)?;
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    for t in &args.thresholds {
        if !(*t > 0.0 && *t <= 1.0) {
            return Err(CliError::Validation(format!(
                "--thresholds entries must lie in (0, 1], got {t}"
            )));
        }
    }
    let trajectories: Vec<Trajectory> =
        jsonl::read_file(&args.trajectories).map_err(CliError::from)?;
    let (_, by_id) = read_samples_indexed(&args.samples)?;
    let mut pairs = Vec::with_capacity(trajectories.len());
    for traj in &trajectories {
        let sample = by_id.get(&traj.sample_id).ok_or_else(|| {
            CliError::Validation(format!(
                "trajectory references unknown sample_id `{}`",
                traj.sample_id
            ))
        })?;
        let pred = traj
            .final_answer
            .as_deref()
            .map(|a| extract_prediction(a, sample.task))
            .unwrap_or_else(Prediction::default);
        pairs.push((pred, sample.ground_truth.clone(), sample.task));
    }
    let result = metrics::evaluate(&pairs, &args.thresholds);
    let json = serde_json::to_string_pretty(&result)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    std::fs::write(&args.out, json + "\n").map_err(|e| CliError::Io(e.to_string()))?;
    if let Some(path) = &args.csv {
        std::fs::write(path, result.to_csv()).map_err(|e| CliError::Io(e.to_string()))?;
    }
    Ok(())
}

fn schema_json() -> String {
    let table = AlphaBetaTable::default();
    let value = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "exit_codes": {"success": 0, "schema_or_validation": 1, "transport_or_io": 2},
        "defaults": {
            "seed": 0,
            "group_size": 8,
            "max_turns": 2,
            "max_response_length": 1024,
            "delta_threshold": DEFAULT_DELTA_THRESHOLD,
            "lambda": 0.2,
            "weight_fn": "omega1",
            "advantage_eps": DEFAULT_ADVANTAGE_EPS,
            "eval_thresholds": [0.3, 0.5, 0.7],
            "alpha_beta_table": table.rows(),
        },
        "files": {
            "samples": "JSONL of {sample_id, task, source, video{video_id, duration, native_fps}, question, ground_truth{time_range?, answer_text?, answer_number?}}",
            "trajectories": "JSONL of {sample_id, rounds, final_answer, terminal_reason, raw_texts, logprob_sums}",
            "reward_report": "JSONL of {sample_id, task, source, accuracy, format, tool, iou, text_score}",
            "dgrpo_report": "JSONL of {sample_id, task, components, scaled_rewards, difficulty, weights, final_rewards, advantages}",
            "alpha_beta": "JSONL of {task, source, alpha, beta}",
            "eval": "JSON {miou, recall_at[{threshold, recall}], accuracy, n}",
            "curation_report": "JSON {totals, per_source, reward_histogram, failures}"
        },
        "tool_error_wire_format": {"error": "<kind>", "detail": "<text>"},
        "policy_wire_protocol": {
            "request": {"context": "[Message...]", "max_length": "N"},
            "response": {"text": "...", "logprob_sum": "float|null"}
        }
    });
    let mut out = serde_json::to_string_pretty(&value).expect("schema serializes");
    out.push('\n');
    out
}

fn run() -> Result<(), CliError> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(CliError::Validation(e.to_string()));
        }
    };
    if cli.schema {
        print!("{}", schema_json());
        return Ok(());
    }
    match &cli.command {
        None => Err(CliError::Validation(
            "missing subcommand; run with --help for usage".into(),
        )),
        Some(Command::Rollout(args)) => cmd_rollout(args),
        Some(Command::Reward(args)) => cmd_reward(args),
        Some(Command::Dgrpo(args)) => cmd_dgrpo(args),
        Some(Command::Filter(args)) => cmd_filter(args),
        Some(Command::Eval(args)) => cmd_eval(args),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
