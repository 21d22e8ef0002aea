//! Command-line front end. Every subcommand writes its artifacts under
//! `--out-dir`; all randomness derives from `--seed`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde::Serialize;

use crate::env::{EnvConfig, SelectionEnv};
use crate::error::{Error, Result};
use crate::graph::{
    corrupt_features, generate_planted_partition, inject_edge_noise, load_graph, save_edge_list, save_json, Graph,
    GraphSource, NoiseSpec, PlantedPartition, Split,
};
use crate::repr::FcMode;
use crate::seed;
use crate::submodular::{monotone_trial, order_report, submodular_trial, CheckReport, GdpRewardFunction, OrderReport};
use crate::tensor::Checkpoint;
use crate::trainer::{
    denoise_graph, evaluate, selection_report, train, train_select_all, Model, Selector, TrainConfig,
};

#[derive(Parser, Debug)]
#[command(name = "gdpnet", version, about = "Noise-robust node representations via learned neighbor selection")]
pub struct Cli {
    /// Root seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving all outputs.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads for per-node rollouts and decoding.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// JSON file of training-configuration overrides.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a planted-partition graph.
    Synth(SynthArgs),
    /// Inject cross-class edges and/or corrupt features.
    Noise(NoiseArgs),
    /// Train the selection policy and representation jointly.
    Train(TrainArgs),
    /// Micro-F1 of a checkpoint on a split.
    Eval(EvalArgs),
    /// Export the graph with unselected edges removed.
    Denoise(ModelArgs),
    /// Distribution of selected-neighbor fractions.
    Report(ModelArgs),
    /// Randomized monotonicity and diminishing-returns checks of the reward.
    CheckSubmodular(CheckArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    EdgeList,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum FcArg {
    Soft,
    Hard,
}

impl From<FcArg> for FcMode {
    fn from(a: FcArg) -> Self {
        match a {
            FcArg::Soft => FcMode::Soft,
            FcArg::Hard => FcMode::Hard,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Val,
    Test,
}

#[derive(Args, Debug, Clone)]
pub struct GraphArgs {
    /// Graph file: JSON, or the edge list when --format edge-list.
    #[arg(long)]
    pub graph: PathBuf,
    /// Tab-separated feature rows (edge-list format; one-hot when absent).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// One label per line (edge-list format).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    pub format: FormatArg,
}

impl GraphArgs {
    fn load(&self, split_seed: u64) -> Result<Graph> {
        let source = match self.format {
            FormatArg::Json => GraphSource::Json(self.graph.clone()),
            FormatArg::EdgeList => GraphSource::EdgeList {
                edges: self.graph.clone(),
                features: self.features.clone(),
                labels: self
                    .labels
                    .clone()
                    .ok_or_else(|| Error::InvalidArgument("--labels is required with --format edge-list".into()))?,
            },
        };
        load_graph(&source, split_seed)
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 0.1)]
    pub p_in: f64,
    #[arg(long, default_value_t = 0.0)]
    pub p_out: f64,
    /// Feature dimension.
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Mean shift on the label coordinate.
    #[arg(long, default_value_t = 1.0)]
    pub signal: f64,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    pub format: FormatArg,
}

#[derive(Args, Debug)]
pub struct NoiseArgs {
    #[command(flatten)]
    pub input: GraphArgs,
    /// Added cross-class edges as a fraction of existing edges.
    #[arg(long, default_value_t = 0.0)]
    pub edge_noise: f64,
    /// Fraction of feature entries zeroed.
    #[arg(long, default_value_t = 0.0)]
    pub feature_noise: f64,
}

#[derive(Args, Debug, Default)]
pub struct TrainFlags {
    /// Outer iterations [default: 10]
    #[arg(long)]
    pub iters: Option<usize>,
    /// Representation epochs per iteration [default: 100]
    #[arg(long)]
    pub rep_epochs: Option<usize>,
    /// Discount factor [default: 0.95]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// KL trust-region threshold [default: 0.01]
    #[arg(long)]
    pub delta: Option<f64>,
    /// Mini-batch size [default: 256]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Embedding dimension [default: 128]
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Task score used by rewards [default: soft]
    #[arg(long, value_enum)]
    pub fc_mode: Option<FcArg>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: GraphArgs,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Keep every neighbor and skip policy learning (baseline).
    #[arg(long)]
    pub select_all: bool,
    /// Also write the final batch of trajectories as JSON lines.
    #[arg(long)]
    pub dump_trajectories: bool,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    #[command(flatten)]
    pub input: GraphArgs,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Ignore the policy and keep every neighbor.
    #[arg(long)]
    pub select_all: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    /// Graph to draw targets from; a 50-node planted partition when absent.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Independent random parameter snapshots.
    #[arg(long, default_value_t = 5)]
    pub snapshots: usize,
    /// Embedding dimension of the snapshots [default: 128]
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long, value_enum)]
    pub fc_mode: Option<FcArg>,
}

/// Parses `args`, runs the subcommand and returns the process exit code:
/// 0 on success, 1 for invalid input, 2 for runtime failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::InvalidArgument("--threads must be at least 1".into()));
    }
    fs::create_dir_all(&cli.out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Noise(a) => noise(cli, a),
        Command::Train(a) => train_cmd(cli, a),
        Command::Eval(a) => eval_cmd(cli, a),
        Command::Denoise(a) => denoise_cmd(cli, a),
        Command::Report(a) => report_cmd(cli, a),
        Command::CheckSubmodular(a) => check_cmd(cli, a),
    })
}

/// Defaults, then the `--config` file, then explicit flags.
pub fn resolve_config(config: Option<&Path>, flags: &TrainFlags, seed: u64) -> Result<TrainConfig> {
    let mut cfg = match config {
        Some(path) => serde_json::from_str::<TrainConfig>(&fs::read_to_string(path)?)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?,
        None => TrainConfig::default(),
    };
    cfg.seed = seed;
    if let Some(v) = flags.iters {
        cfg.iters = v;
    }
    if let Some(v) = flags.rep_epochs {
        cfg.rep_epochs = v;
    }
    if let Some(v) = flags.gamma {
        cfg.ppo.gamma = v;
    }
    if let Some(v) = flags.delta {
        cfg.ppo.delta = v;
    }
    if let Some(v) = flags.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.embed_dim {
        cfg.embed_dim = v;
    }
    if let Some(v) = flags.fc_mode {
        cfg.fc_mode = v.into();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_graph(cli: &Cli, g: &Graph, stem: &str, format: FormatArg) -> Result<()> {
    match format {
        FormatArg::Json => save_json(g, &cli.out_dir.join(format!("{stem}.json"))),
        FormatArg::EdgeList => save_edge_list(
            g,
            &cli.out_dir.join(format!("{stem}.edges")),
            &cli.out_dir.join(format!("{stem}.features")),
            &cli.out_dir.join(format!("{stem}.labels")),
        ),
    }
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let g = generate_planted_partition(&PlantedPartition {
        n: a.n,
        classes: a.classes,
        p_in: a.p_in,
        p_out: a.p_out,
        dim: a.dim,
        signal_strength: a.signal,
        seed: cli.seed,
    })?;
    write_graph(cli, &g, "graph", a.format)
}

fn noise(cli: &Cli, a: &NoiseArgs) -> Result<()> {
    let g = a.input.load(cli.seed)?;
    let spec = NoiseSpec {
        edge_noise_rate: a.edge_noise,
        feature_corrupt_rate: a.feature_noise,
        seed: cli.seed,
        ..NoiseSpec::edges(0.0, cli.seed)
    };
    let g = inject_edge_noise(&g, &spec)?;
    let g = corrupt_features(&g, &spec)?;
    write_graph(cli, &g, "noisy", a.input.format)
}

#[derive(Serialize)]
struct TrainSummary {
    best_iter: Option<usize>,
    val_f1: Option<f64>,
    /// Test score of the best-validation checkpoint.
    test_f1: Option<f64>,
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let g = a.input.load(cli.seed)?;
    let cfg = resolve_config(cli.config.as_deref(), &a.flags, cli.seed)?;
    let out = if a.select_all { train_select_all(&g, &cfg)? } else { train(&g, &cfg)? };
    out.best.to_checkpoint(&cfg)?.save(cli.out_dir.join("checkpoint.json"))?;

    let mut metrics = String::new();
    for m in &out.history {
        metrics.push_str(&serde_json::to_string(m)?);
        metrics.push('\n');
    }
    fs::write(cli.out_dir.join("metrics.jsonl"), metrics)?;

    if a.dump_trajectories {
        let mut text = String::new();
        for t in &out.last_trajectories {
            text.push_str(&t.to_json_line()?);
            text.push('\n');
        }
        fs::write(cli.out_dir.join("trajectories.jsonl"), text)?;
    }

    let env_cfg = env_config(&cfg);
    let selector = if a.select_all { Selector::All } else { Selector::Policy(&out.best.policy) };
    let score = |split| -> Result<Option<f64>> {
        if g.nodes_in(split).is_empty() {
            return Ok(None);
        }
        evaluate(&out.best.representation, selector, &g, split, &env_cfg).map(Some)
    };
    let summary = TrainSummary {
        best_iter: out.best_iter,
        val_f1: score(Split::Val)?,
        test_f1: score(Split::Test)?,
    };
    write_json(&cli.out_dir.join("summary.json"), &summary)
}

fn load_model(a: &ModelArgs, seed: u64) -> Result<(Graph, Model, TrainConfig)> {
    let g = a.input.load(seed)?;
    let (model, cfg) = Model::from_checkpoint(&Checkpoint::load(&a.checkpoint)?)?;
    Ok((g, model, cfg))
}

fn env_config(cfg: &TrainConfig) -> EnvConfig {
    EnvConfig {
        fc_mode: cfg.fc_mode,
        use_end: cfg.use_end,
        max_steps: None,
    }
}

fn selector<'a>(a: &ModelArgs, model: &'a Model) -> Selector<'a> {
    if a.select_all {
        Selector::All
    } else {
        Selector::Policy(&model.policy)
    }
}

#[derive(Serialize)]
struct EvalOutput {
    split: String,
    micro_f1: f64,
}

fn eval_cmd(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let (g, model, cfg) = load_model(&a.model, cli.seed)?;
    let split = match a.split {
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    };
    let f1 = evaluate(&model.representation, selector(&a.model, &model), &g, split, &env_config(&cfg))?;
    println!("{split} micro-F1: {f1:.4}");
    write_json(&cli.out_dir.join("eval.json"), &EvalOutput { split: split.to_string(), micro_f1: f1 })
}

fn denoise_cmd(cli: &Cli, a: &ModelArgs) -> Result<()> {
    let (g, model, cfg) = load_model(a, cli.seed)?;
    let denoised = denoise_graph(&model.representation, selector(a, &model), &g, &env_config(&cfg))?;
    println!("kept {} of {} edges", denoised.num_edges(), g.num_edges());
    write_graph(cli, &denoised, "denoised", a.input.format)
}

fn report_cmd(cli: &Cli, a: &ModelArgs) -> Result<()> {
    let (g, model, cfg) = load_model(a, cli.seed)?;
    let report = selection_report(&model.representation, selector(a, &model), &g, &env_config(&cfg))?;
    write_json(&cli.out_dir.join("selection_report.json"), &report)
}

#[derive(Serialize)]
pub struct SubmodularSuite {
    pub monotone: CheckReport,
    pub submodular: CheckReport,
    /// Insertion-order sensitivity of each snapshot's reward on one node.
    pub order: Vec<OrderReport>,
}

/// Trials spread round-robin over `snapshots` random parameter draws; each
/// trial picks a random node with at least one neighbor.
pub fn submodular_suite(
    g: &Graph,
    snapshots: usize,
    trials: usize,
    embed_dim: usize,
    fc_mode: FcMode,
    seed_root: u64,
) -> Result<SubmodularSuite> {
    if snapshots == 0 || trials == 0 {
        return Err(Error::InvalidArgument("snapshots and trials must be positive".into()));
    }
    let candidates: Vec<usize> = (0..g.num_nodes()).filter(|&v| g.degree(v) > 0).collect();
    if candidates.is_empty() {
        return Err(Error::Empty("nodes with neighbors"));
    }
    let models: Vec<Model> = (0..snapshots)
        .map(|k| {
            let cfg = TrainConfig {
                embed_dim,
                seed: seed::derive(seed_root, 1000 + k as u64),
                ..TrainConfig::default()
            };
            Model::init(g, &cfg)
        })
        .collect();
    let env_cfg = EnvConfig { fc_mode, ..EnvConfig::default() };
    let envs: Vec<SelectionEnv<'_>> = models
        .iter()
        .map(|m| SelectionEnv::new(g, &m.representation, env_cfg.clone()))
        .collect::<Result<_>>()?;

    let mut rng = seed::rng(seed_root);
    let name = format!("gdp_reward({snapshots} snapshots)");
    let mut mono = CheckReport::new(name.clone(), "monotone");
    let mut sub = CheckReport::new(name, "submodular");
    for t in 0..trials {
        let env = &envs[t % snapshots];
        let v = candidates[rng.gen_range(0..candidates.len())];
        let f = GdpRewardFunction::new(env, v)?;
        mono.record(monotone_trial(&f, &mut rng));
        sub.record(submodular_trial(&f, &mut rng)?);
    }
    let order = envs
        .iter()
        .map(|env| {
            let v = *candidates.iter().max_by_key(|&&v| (g.degree(v), std::cmp::Reverse(v))).expect("nonempty");
            order_report(&GdpRewardFunction::new(env, v)?, 100, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(SubmodularSuite { monotone: mono, submodular: sub, order })
}

fn check_cmd(cli: &Cli, a: &CheckArgs) -> Result<()> {
    let g = match &a.graph {
        Some(path) => load_graph(&GraphSource::Json(path.clone()), cli.seed)?,
        None => generate_planted_partition(&PlantedPartition {
            n: 50,
            classes: 2,
            p_in: 0.2,
            p_out: 0.05,
            dim: 8,
            signal_strength: 1.0,
            seed: cli.seed,
        })?,
    };
    let base = cli
        .config
        .as_deref()
        .map(|p| resolve_config(Some(p), &TrainFlags::default(), cli.seed))
        .transpose()?
        .unwrap_or_default();
    let embed_dim = a.embed_dim.unwrap_or(base.embed_dim);
    let fc_mode = a.fc_mode.map(FcMode::from).unwrap_or(base.fc_mode);
    let suite = submodular_suite(&g, a.snapshots, a.trials, embed_dim, fc_mode, cli.seed)?;
    println!(
        "monotone {}/{}  submodular {}/{}",
        suite.monotone.passes, suite.monotone.trials, suite.submodular.passes, suite.submodular.trials
    );
    write_json(&cli.out_dir.join("submodular_report.json"), &suite)
}
