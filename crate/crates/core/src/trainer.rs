//! Iteration-wise optimization: with the policy frozen, materialize selected
//! neighbor sets and fit the representation; with the representation frozen,
//! collect trajectories and update the policy. Evaluation, the select-all
//! baseline, denoised-graph export and selection statistics live here too.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Decision, EnvConfig, SelectionEnv, Trajectory};
use crate::error::{Error, Result};
use crate::graph::{edge_list_text, Graph, Split};
use crate::policy::{PolicyParams, PpoConfig, PpoDiagnostics, PpoLearner, DEFAULT_HIDDEN};
use crate::repr::{
    micro_f1, Activation, AggregatorParams, ClassifierParams, FcMode, RepTrainConfig, RepresentationLearner,
    RepresentationModel,
};
use crate::seed::{self, streams};
use crate::tensor::{AdamConfig, Checkpoint, Matrix, Mlp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Outer iterations.
    pub iters: usize,
    /// Representation epochs per outer iteration.
    pub rep_epochs: usize,
    pub batch_size: usize,
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    pub rep_lr: f64,
    pub activation: Activation,
    pub fc_mode: FcMode,
    /// Offer the ending neighbor during episodes.
    pub use_end: bool,
    /// Trajectories collected per training node per policy update.
    pub rollouts_per_node: usize,
    pub ppo: PpoConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iters: 10,
            rep_epochs: 100,
            batch_size: 256,
            embed_dim: 128,
            hidden: DEFAULT_HIDDEN.to_vec(),
            rep_lr: 1e-3,
            activation: Activation::Relu,
            fc_mode: FcMode::Soft,
            use_end: true,
            rollouts_per_node: 1,
            ppo: PpoConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("rep_epochs", self.rep_epochs),
            ("batch_size", self.batch_size),
            ("embed_dim", self.embed_dim),
            ("rollouts_per_node", self.rollouts_per_node),
        ] {
            if value == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden layer sizes must be positive".into()));
        }
        if !(self.rep_lr >= 0.0) {
            return Err(Error::InvalidArgument("rep_lr must be non-negative".into()));
        }
        self.ppo.validate()
    }

    fn env_config(&self) -> EnvConfig {
        EnvConfig {
            fc_mode: self.fc_mode,
            use_end: self.use_end,
            max_steps: None,
        }
    }

    fn rep_config(&self) -> RepTrainConfig {
        RepTrainConfig {
            epochs: self.rep_epochs,
            batch_size: self.batch_size,
        }
    }

    fn ppo_config(&self) -> PpoConfig {
        PpoConfig {
            minibatch_size: self.batch_size,
            ..self.ppo.clone()
        }
    }
}

/// How neighbor sets are chosen.
#[derive(Clone, Copy, Debug)]
pub enum Selector<'a> {
    Policy(&'a PolicyParams),
    All,
    None,
}

/// Parameters of a trained (or freshly initialized) model.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub representation: RepresentationModel,
    pub policy: PolicyParams,
}

impl Model {
    pub fn init(graph: &Graph, cfg: &TrainConfig) -> Self {
        let mut aggregator = AggregatorParams::glorot(
            cfg.embed_dim,
            graph.feature_dim(),
            &mut seed::child_rng(cfg.seed, streams::INIT_AGGREGATOR),
        );
        aggregator.activation = cfg.activation;
        let classifier = ClassifierParams::glorot(
            graph.num_classes(),
            cfg.embed_dim,
            &mut seed::child_rng(cfg.seed, streams::INIT_CLASSIFIER),
        );
        let representation = RepresentationModel { aggregator, classifier };
        let policy = PolicyParams::glorot(
            cfg.embed_dim,
            &cfg.hidden,
            &mut seed::child_rng(cfg.seed, streams::INIT_POLICY),
        );
        Model { representation, policy }
    }

    pub fn to_checkpoint(&self, cfg: &TrainConfig) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new();
        ckpt.insert("aggregator.weight", self.representation.aggregator.weight.clone());
        ckpt.insert("classifier.weight", self.representation.classifier.weight.clone());
        for (i, layer) in self.policy.net().layers().iter().enumerate() {
            ckpt.insert(format!("policy.layer{i}"), layer.clone());
        }
        ckpt.config = serde_json::to_value(cfg)?;
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, TrainConfig)> {
        let cfg: TrainConfig = serde_json::from_value(ckpt.config.clone())?;
        let representation = RepresentationModel {
            aggregator: AggregatorParams {
                weight: ckpt.get("aggregator.weight")?.clone(),
                activation: cfg.activation,
            },
            classifier: ClassifierParams {
                weight: ckpt.get("classifier.weight")?.clone(),
            },
        };
        if representation.classifier.weight.cols() != representation.aggregator.weight.rows() {
            return Err(Error::shape(
                "classifier input",
                representation.aggregator.weight.rows(),
                representation.classifier.weight.cols(),
            ));
        }
        let layers: Vec<Matrix> = (0..=cfg.hidden.len())
            .map(|i| ckpt.get(&format!("policy.layer{i}")).cloned())
            .collect::<Result<_>>()?;
        let policy = PolicyParams::from_mlp(Mlp::from_layers(layers)?)?;
        Ok((Model { representation, policy }, cfg))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iter: usize,
    /// Final-epoch mean cross-entropy of the representation phase.
    pub train_loss: f64,
    pub val_f1: Option<f64>,
    /// Mean total reward per collected trajectory.
    pub mean_reward: f64,
    pub mean_kl: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the best validation score (the last iteration without a
    /// validation mask, the initialization when no iteration ran).
    pub best: Model,
    pub best_iter: Option<usize>,
    pub last: Model,
    pub history: Vec<IterationMetrics>,
    /// Trajectories of the final policy-collection phase.
    pub last_trajectories: Vec<Trajectory>,
}

/// Neighbor set of `v` under `selector`.
pub fn select(env: &SelectionEnv<'_>, v: usize, selector: Selector<'_>) -> Result<Vec<usize>> {
    match selector {
        Selector::Policy(p) => env.decode(v, p),
        Selector::All => Ok(env.graph().neighbors(v).to_vec()),
        Selector::None => Ok(Vec::new()),
    }
}

fn sampled_sets(env: &SelectionEnv<'_>, policy: &PolicyParams, nodes: &[usize], root: u64) -> Result<Vec<Vec<usize>>> {
    let picks: Vec<(usize, Vec<usize>)> = nodes
        .par_iter()
        .map(|&v| {
            let mut rng = seed::child_rng(root, v as u64);
            Ok((v, env.rollout(v, policy, Decision::Sample, &mut rng)?.selected()))
        })
        .collect::<Result<_>>()?;
    let mut sets = vec![Vec::new(); env.graph().num_nodes()];
    for (v, s) in picks {
        sets[v] = s;
    }
    Ok(sets)
}

fn collect_trajectories(
    env: &SelectionEnv<'_>,
    policy: &PolicyParams,
    nodes: &[usize],
    rollouts: usize,
    root: u64,
) -> Result<Vec<Trajectory>> {
    let jobs: Vec<(usize, usize)> = nodes.iter().flat_map(|&v| (0..rollouts).map(move |k| (v, k))).collect();
    jobs.par_iter()
        .map(|&(v, k)| {
            let mut rng = seed::child_rng(root, (v * rollouts + k) as u64);
            env.rollout(v, policy, Decision::Sample, &mut rng)
        })
        .collect()
}

/// Joint training of the selection policy and the representation. Only
/// training-node labels are read, plus validation labels for model selection.
pub fn train(graph: &Graph, cfg: &TrainConfig) -> Result<TrainOutcome> {
    run(graph, cfg, false)
}

/// The same pipeline with every neighbor kept and no policy learning.
pub fn train_select_all(graph: &Graph, cfg: &TrainConfig) -> Result<TrainOutcome> {
    run(graph, cfg, true)
}

fn run(graph: &Graph, cfg: &TrainConfig, select_all: bool) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_nodes = graph.nodes_in(Split::Train);
    if train_nodes.is_empty() {
        return Err(Error::Empty("training mask"));
    }
    let has_val = !graph.nodes_in(Split::Val).is_empty();
    let init = Model::init(graph, cfg);
    let adam = AdamConfig {
        lr: cfg.rep_lr,
        ..AdamConfig::default()
    };
    let mut rep = RepresentationLearner::new(init.representation.clone(), adam);
    let ppo_cfg = cfg.ppo_config();
    let mut ppo = PpoLearner::new(init.policy.clone(), &ppo_cfg);
    let env_cfg = cfg.env_config();

    let mut history = Vec::with_capacity(cfg.iters);
    let mut best = init.clone();
    let mut best_iter = None;
    let mut best_f1 = f64::NEG_INFINITY;
    let mut last_trajectories = Vec::new();

    for it in 0..cfg.iters {
        let it_seed = seed::derive(cfg.seed, it as u64 + 1);

        let sets = if select_all {
            let mut sets = vec![Vec::new(); graph.num_nodes()];
            for &v in &train_nodes {
                sets[v] = graph.neighbors(v).to_vec();
            }
            sets
        } else {
            let env = SelectionEnv::new(graph, &rep.model, env_cfg.clone())?;
            sampled_sets(&env, &ppo.params, &train_nodes, seed::derive(it_seed, streams::SELECTION))?
        };
        let report = rep.train(
            graph,
            &sets,
            &cfg.rep_config(),
            &mut seed::child_rng(it_seed, streams::REPRESENTATION),
        )?;
        let train_loss = report.final_loss().unwrap_or(f64::NAN);

        let mut diag = PpoDiagnostics::default();
        let mut mean_reward = 0.0;
        if !select_all {
            let env = SelectionEnv::new(graph, &rep.model, env_cfg.clone())?;
            let old = ppo.params.clone();
            let batch = collect_trajectories(
                &env,
                &old,
                &train_nodes,
                cfg.rollouts_per_node,
                seed::derive(it_seed, streams::COLLECTION),
            )?;
            mean_reward = batch.iter().map(Trajectory::total_reward).sum::<f64>() / batch.len() as f64;
            if batch.iter().any(|t| !t.transitions.is_empty()) {
                diag = ppo.update(&old, &batch, &ppo_cfg, &mut seed::child_rng(it_seed, streams::PPO))?;
            }
            last_trajectories = batch;
        }

        let current = Model {
            representation: rep.model.clone(),
            policy: ppo.params.clone(),
        };
        let selector = if select_all { Selector::All } else { Selector::Policy(&current.policy) };
        let val_f1 = if has_val {
            Some(evaluate(&current.representation, selector, graph, Split::Val, &env_cfg)?)
        } else {
            None
        };
        let score = val_f1.unwrap_or(f64::INFINITY);
        if score > best_f1 || !has_val {
            best_f1 = score;
            best = current;
            best_iter = Some(it);
        }
        history.push(IterationMetrics {
            iter: it,
            train_loss,
            val_f1,
            mean_reward,
            mean_kl: diag.mean_kl,
        });
    }

    Ok(TrainOutcome {
        best,
        best_iter,
        last: Model {
            representation: rep.model,
            policy: ppo.params,
        },
        history,
        last_trajectories,
    })
}

/// Micro-F1 over the nodes of `split`, each embedded with its decoded neighbor set.
pub fn evaluate(
    model: &RepresentationModel,
    selector: Selector<'_>,
    graph: &Graph,
    split: Split,
    env_cfg: &EnvConfig,
) -> Result<f64> {
    let nodes = graph.nodes_in(split);
    if nodes.is_empty() {
        return Err(Error::Empty("evaluation mask"));
    }
    let env = SelectionEnv::new(graph, model, env_cfg.clone())?;
    let preds: Vec<usize> = nodes
        .par_iter()
        .map(|&v| model.predict(graph, v, &select(&env, v, selector)?))
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = nodes.iter().map(|&v| graph.label(v)).collect();
    micro_f1(&preds, &labels)
}

fn decoded_sets(env: &SelectionEnv<'_>, selector: Selector<'_>) -> Result<Vec<Vec<usize>>> {
    (0..env.graph().num_nodes())
        .into_par_iter()
        .map(|v| select(env, v, selector))
        .collect()
}

/// Keeps edge `{v, u}` iff either endpoint selects the other.
pub fn denoise_graph(model: &RepresentationModel, selector: Selector<'_>, graph: &Graph, env_cfg: &EnvConfig) -> Result<Graph> {
    let env = SelectionEnv::new(graph, model, env_cfg.clone())?;
    let sets = decoded_sets(&env, selector)?;
    let kept: Vec<(usize, usize)> = graph
        .edges()
        .into_iter()
        .filter(|&(u, v)| sets[u].binary_search(&v).is_ok() || sets[v].binary_search(&u).is_ok())
        .collect();
    graph.with_edges(&kept)
}

/// Writes the denoised edge list (`u v` per line) and returns the graph.
pub fn export_denoised_graph(
    model: &RepresentationModel,
    selector: Selector<'_>,
    graph: &Graph,
    env_cfg: &EnvConfig,
    path: &Path,
) -> Result<Graph> {
    let denoised = denoise_graph(model, selector, graph, env_cfg)?;
    fs::write(path, edge_list_text(&denoised.edges()))?;
    Ok(denoised)
}

pub const REPORT_BINS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    /// `(node, |N̂(v)| / |N(v)|)` for every non-isolated node.
    pub fractions: Vec<(usize, f64)>,
    /// Bin `i` counts fractions in `[i/10, (i+1)/10)`; 1.0 falls in the last bin.
    pub histogram: Vec<usize>,
}

pub fn selection_report(
    model: &RepresentationModel,
    selector: Selector<'_>,
    graph: &Graph,
    env_cfg: &EnvConfig,
) -> Result<SelectionReport> {
    let env = SelectionEnv::new(graph, model, env_cfg.clone())?;
    let sets = decoded_sets(&env, selector)?;
    let mut histogram = vec![0; REPORT_BINS];
    let mut fractions = Vec::new();
    for (v, set) in sets.iter().enumerate() {
        let degree = graph.degree(v);
        if degree == 0 {
            continue;
        }
        let f = set.len() as f64 / degree as f64;
        histogram[((f * REPORT_BINS as f64) as usize).min(REPORT_BINS - 1)] += 1;
        fractions.push((v, f));
    }
    Ok(SelectionReport { fractions, histogram })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_planted_partition, inject_edge_noise, NoiseSpec, PlantedPartition};

    fn graph(seed: u64) -> Graph {
        generate_planted_partition(&PlantedPartition {
            n: 60,
            classes: 2,
            p_in: 0.15,
            p_out: 0.0,
            dim: 4,
            signal_strength: 1.0,
            seed,
        })
        .unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            iters: 2,
            rep_epochs: 5,
            embed_dim: 8,
            hidden: vec![6, 4],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_iterations_return_the_initialization() {
        let g = graph(1);
        let cfg = TrainConfig { iters: 0, ..quick() };
        let out = train(&g, &cfg).unwrap();
        assert_eq!(out.best, Model::init(&g, &cfg));
        assert!(out.history.is_empty());
        assert_eq!(out.best_iter, None);
    }

    #[test]
    fn history_is_complete_and_finite() {
        let g = graph(2);
        let out = train(&g, &quick()).unwrap();
        assert_eq!(out.history.len(), 2);
        for m in &out.history {
            assert!(m.train_loss.is_finite() && m.mean_reward.is_finite() && m.mean_kl.is_finite());
            assert!(m.val_f1.unwrap().is_finite());
        }
    }

    #[test]
    fn training_is_reproducible() {
        let g = graph(3);
        let a = train(&g, &quick()).unwrap();
        let b = train(&g, &quick()).unwrap();
        assert_eq!(a.best, b.best);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let g = graph(3);
        let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        let a = pool(1).install(|| train(&g, &quick()).unwrap());
        let b = pool(4).install(|| train(&g, &quick()).unwrap());
        assert_eq!(a.best, b.best);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn test_labels_are_never_read() {
        let g = graph(4);
        let test = g.nodes_in(Split::Test);
        let mut labels = g.labels().to_vec();
        for &v in &test {
            labels[v] = 1 - labels[v];
        }
        let edges = g.edges();
        let flipped = Graph::with_classes(&edges, g.features().clone(), labels, 2, g.masks().clone()).unwrap();
        let a = train(&g, &quick()).unwrap();
        let b = train(&flipped, &quick()).unwrap();
        assert_eq!(a.best, b.best);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn empty_masks_are_errors() {
        let g = graph(5).with_masks(crate::graph::Masks::empty(60)).unwrap();
        assert!(train(&g, &quick()).is_err());
        let model = Model::init(&g, &quick());
        assert!(evaluate(&model.representation, Selector::All, &g, Split::Test, &EnvConfig::default()).is_err());
    }

    #[test]
    fn evaluation_is_deterministic() {
        let g = graph(6);
        let model = Model::init(&g, &quick());
        let sel = Selector::Policy(&model.policy);
        let a = evaluate(&model.representation, sel, &g, Split::Test, &EnvConfig::default()).unwrap();
        let b = evaluate(&model.representation, sel, &g, Split::Test, &EnvConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn select_all_evaluation_matches_plain_mean_aggregation() {
        let g = graph(7);
        let model = Model::init(&g, &quick()).representation;
        let nodes = g.nodes_in(Split::Test);
        let preds: Vec<usize> = nodes.iter().map(|&v| model.predict(&g, v, g.neighbors(v)).unwrap()).collect();
        let labels: Vec<usize> = nodes.iter().map(|&v| g.label(v)).collect();
        let plain = micro_f1(&preds, &labels).unwrap();
        let ours = evaluate(&model, Selector::All, &g, Split::Test, &EnvConfig::default()).unwrap();
        assert_eq!(plain, ours);
    }

    #[test]
    fn forced_selectors_bracket_the_edge_set() {
        let g = inject_edge_noise(&graph(8), &NoiseSpec::edges(0.3, 1)).unwrap();
        let cfg = EnvConfig::default();
        let model = Model::init(&g, &quick());
        let all = denoise_graph(&model.representation, Selector::All, &g, &cfg).unwrap();
        assert_eq!(all, g);
        assert_eq!(denoise_graph(&model.representation, Selector::All, &all, &cfg).unwrap(), all);
        let none = denoise_graph(&model.representation, Selector::None, &g, &cfg).unwrap();
        assert_eq!(none.num_edges(), 0);
        let learned = denoise_graph(&model.representation, Selector::Policy(&model.policy), &g, &cfg).unwrap();
        learned.check_invariants().unwrap();
        assert!(learned.edges().iter().all(|&(u, v)| g.has_edge(u, v)));
    }

    #[test]
    fn export_writes_edges() {
        let g = graph(9);
        let model = Model::init(&g, &quick());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edges.tsv");
        let out = export_denoised_graph(&model.representation, Selector::All, &g, &EnvConfig::default(), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), out.num_edges());
    }

    #[test]
    fn selection_report_extremes() {
        let g = graph(10);
        let cfg = EnvConfig::default();
        let model = Model::init(&g, &quick()).representation;
        let non_isolated = (0..g.num_nodes()).filter(|&v| g.degree(v) > 0).count();
        let all = selection_report(&model, Selector::All, &g, &cfg).unwrap();
        assert!(all.fractions.iter().all(|&(_, f)| f == 1.0));
        assert_eq!(all.histogram[REPORT_BINS - 1], non_isolated);
        let none = selection_report(&model, Selector::None, &g, &cfg).unwrap();
        assert!(none.fractions.iter().all(|&(_, f)| f == 0.0));
        assert_eq!(none.histogram.iter().sum::<usize>(), non_isolated);
    }

    #[test]
    fn checkpoint_round_trip() {
        let g = graph(11);
        let cfg = quick();
        let model = Model::init(&g, &cfg);
        let ckpt = Checkpoint::from_json(&model.to_checkpoint(&cfg).unwrap().to_json().unwrap()).unwrap();
        let (back, back_cfg) = Model::from_checkpoint(&ckpt).unwrap();
        assert_eq!(back, model);
        assert_eq!(back_cfg, cfg);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let g = graph(12);
        assert!(train(&g, &TrainConfig { rep_epochs: 0, ..quick() }).is_err());
        assert!(train(&g, &TrainConfig { embed_dim: 0, ..quick() }).is_err());
    }
}
