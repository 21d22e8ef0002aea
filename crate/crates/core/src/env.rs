//! Markov decision process for signal-neighbor selection.
//!
//! An episode for target node `v` repeatedly scores the remaining neighbors
//! (plus an ending neighbor) with the shared regret scorer, samples the next
//! candidate from their softmax, and lets the policy keep or drop it. Keeping
//! `u_t` pays the marginal-value reward
//!
//! ```text
//! r_t = f_c(Agg(x_v, {x_{u_t}})) / Σ_{ũ ∈ N̂(v)_t} f_c(Agg(x_v, {x_ũ}))
//! ```
//!
//! where `N̂(v)_t` already contains `u_t`, and moves the target embedding to
//! `Agg(x_v, N̂(v)_t)`. Dropping pays nothing and leaves the embedding alone.

use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::policy::{action_log_prob, sample_action, PolicyParams};
use crate::repr::{f_c_score, FcMode, RepresentationModel};
use crate::tensor::softmax;

/// Denominators below this produce a zero reward.
pub const REWARD_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Candidate {
    Node(usize),
    End,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    EndingNeighbor,
    ExhaustedCandidates,
    StepLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: bool,
    pub reward: f64,
    /// Log-probability of `action` under the behavior policy.
    pub log_prob: f64,
    pub candidate: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub target: usize,
    pub transitions: Vec<Transition>,
    pub terminated_by: Termination,
}

impl Trajectory {
    pub fn selected(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .transitions
            .iter()
            .filter(|t| t.action)
            .map(|t| t.candidate)
            .collect();
        out.sort_unstable();
        out
    }

    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }

    /// Debug record: node id, candidate order, actions and rewards.
    pub fn to_json_line(&self) -> Result<String> {
        let record = serde_json::json!({
            "node": self.target,
            "order": self.transitions.iter().map(|t| t.candidate).collect::<Vec<_>>(),
            "actions": self.transitions.iter().map(|t| t.action as u8).collect::<Vec<_>>(),
            "rewards": self.transitions.iter().map(|t| t.reward).collect::<Vec<_>>(),
            "terminated_by": self.terminated_by,
        });
        Ok(serde_json::to_string(&record)?)
    }
}

/// How candidates are ordered and actions chosen during an episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    /// Softmax-sampled order, Bernoulli actions (training).
    Sample,
    /// Arg-max order, select iff `π ≥ 0.5` (evaluation).
    Greedy,
    /// Sampled order, every candidate kept.
    SelectAll,
    /// Sampled order, every candidate dropped.
    SelectNone,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub fc_mode: FcMode,
    /// Offer the ending neighbor as a candidate.
    pub use_end: bool,
    /// Cap on decisions per episode; `None` means `|N(v)| + 1`.
    pub max_steps: Option<usize>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            fc_mode: FcMode::Soft,
            use_end: true,
            max_steps: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeState {
    pub target: usize,
    /// `N̂(v)_t` in selection order.
    pub selected: Vec<usize>,
    pub rejected: Vec<usize>,
    /// Unprocessed neighbors, excluding the current candidate.
    pub candidates: Vec<usize>,
    pub end_available: bool,
    /// `h_v^t`
    pub h_v: Vec<f64>,
    pub current: Option<Candidate>,
    /// `s_t = [h_v^t, h_{u_t}]`; the second half is the ending-neighbor
    /// embedding while no candidate is current.
    pub state: Vec<f64>,
    pub step: usize,
    pub finished: bool,
    selected_scores: Vec<f64>,
}

impl EpisodeState {
    /// Candidates still in play, with the ending neighbor last when offered.
    pub fn open_candidates(&self) -> Vec<Candidate> {
        let mut out: Vec<Candidate> = self.candidates.iter().map(|&u| Candidate::Node(u)).collect();
        if self.end_available {
            out.push(Candidate::End);
        }
        out
    }

    pub fn selected_sorted(&self) -> Vec<usize> {
        let mut s = self.selected.clone();
        s.sort_unstable();
        s
    }
}

/// Environment bound to a graph and a frozen representation snapshot.
pub struct SelectionEnv<'a> {
    graph: &'a Graph,
    model: &'a RepresentationModel,
    cfg: EnvConfig,
    self_embeddings: Vec<OnceLock<Vec<f64>>>,
    end_embedding: Vec<f64>,
}

impl<'a> SelectionEnv<'a> {
    pub fn new(graph: &'a Graph, model: &'a RepresentationModel, cfg: EnvConfig) -> Result<Self> {
        if model.aggregator.feature_dim() != graph.feature_dim() {
            return Err(Error::shape(
                "aggregator input",
                graph.feature_dim(),
                model.aggregator.feature_dim(),
            ));
        }
        if model.classifier.num_classes() < graph.num_classes() {
            return Err(Error::shape(
                "classifier classes",
                graph.num_classes(),
                model.classifier.num_classes(),
            ));
        }
        let zeros = vec![0.0; graph.feature_dim()];
        let end_embedding = model.aggregator.embed_mean(&zeros)?;
        Ok(SelectionEnv {
            graph,
            model,
            cfg,
            self_embeddings: (0..graph.num_nodes()).map(|_| OnceLock::new()).collect(),
            end_embedding,
        })
    }

    pub fn graph(&self) -> &Graph {
        self.graph
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    /// `h_u = Agg(x_u, ∅)`
    pub fn self_embedding(&self, u: usize) -> &[f64] {
        self.self_embeddings[u].get_or_init(|| {
            self.model
                .aggregator
                .aggregate(self.graph.feature(u), &[])
                .expect("feature width checked at construction")
        })
    }

    pub fn candidate_embedding(&self, c: Candidate) -> &[f64] {
        match c {
            Candidate::Node(u) => self.self_embedding(u),
            Candidate::End => &self.end_embedding,
        }
    }

    fn concat(h_v: &[f64], h_u: &[f64]) -> Vec<f64> {
        let mut s = Vec::with_capacity(h_v.len() + h_u.len());
        s.extend_from_slice(h_v);
        s.extend_from_slice(h_u);
        s
    }

    pub fn init_episode(&self, v: usize) -> Result<EpisodeState> {
        self.graph.check_node(v)?;
        let h_v = self.model.aggregator.aggregate(self.graph.feature(v), &[])?;
        let state = Self::concat(&h_v, &self.end_embedding);
        Ok(EpisodeState {
            target: v,
            selected: Vec::new(),
            rejected: Vec::new(),
            candidates: self.graph.neighbors(v).to_vec(),
            end_available: self.cfg.use_end,
            h_v,
            current: None,
            state,
            step: 0,
            finished: false,
            selected_scores: Vec::new(),
        })
    }

    /// Regret score `l_k` of every open candidate, the ending neighbor last.
    pub fn regret_scores(&self, state: &EpisodeState, policy: &PolicyParams) -> Result<Vec<(Candidate, f64)>> {
        let open = state.open_candidates();
        if open.is_empty() {
            return Err(Error::Empty("candidate set"));
        }
        open.into_iter()
            .map(|c| {
                let s = Self::concat(&state.h_v, self.candidate_embedding(c));
                Ok((c, policy.logit(&s)?))
            })
            .collect()
    }

    /// Makes `c` the current candidate and removes it from the open set.
    pub fn take_candidate(&self, state: &mut EpisodeState, c: Candidate) -> Result<()> {
        if state.finished {
            return Err(Error::EpisodeFinished(state.target));
        }
        match c {
            Candidate::End => {
                if !state.end_available {
                    return Err(Error::InvalidArgument("ending neighbor not offered".into()));
                }
                state.end_available = false;
                state.finished = true;
            }
            Candidate::Node(u) => {
                let pos = state
                    .candidates
                    .iter()
                    .position(|&x| x == u)
                    .ok_or(Error::NotSubset { node: state.target, neighbor: u })?;
                state.candidates.remove(pos);
            }
        }
        state.current = Some(c);
        state.state = Self::concat(&state.h_v, self.candidate_embedding(c));
        Ok(())
    }

    /// Draws the next candidate from `softmax(scores)` and makes it current.
    pub fn sample_next_candidate<R: Rng + ?Sized>(
        &self,
        state: &mut EpisodeState,
        scores: &[(Candidate, f64)],
        rng: &mut R,
    ) -> Result<Candidate> {
        let values: Vec<f64> = scores.iter().map(|&(_, l)| l).collect();
        let c = scores[sample_index(&values, rng)?].0;
        self.take_candidate(state, c)?;
        Ok(c)
    }

    /// `f_c(Agg(x_v, {x_u}))`
    pub fn pair_score(&self, v: usize, u: usize) -> Result<f64> {
        f_c_score(
            &self.model.classifier,
            &self.model.aggregator,
            self.graph.feature(v),
            &[self.graph.feature(u)],
            self.graph.label(v),
            self.cfg.fc_mode,
        )
    }

    /// Applies `action` to the current candidate and returns the reward.
    pub fn step(&self, state: &mut EpisodeState, action: bool) -> Result<f64> {
        self.advance(state, action, true)
    }

    /// Like `step`, but when `score` is false no task score (and so no label)
    /// is consulted and the reward is reported as zero.
    fn advance(&self, state: &mut EpisodeState, action: bool, score: bool) -> Result<f64> {
        let u = match state.current {
            Some(Candidate::Node(u)) => u,
            Some(Candidate::End) => return Err(Error::EpisodeFinished(state.target)),
            None if state.finished => return Err(Error::EpisodeFinished(state.target)),
            None => return Err(Error::NoCandidate(state.target)),
        };
        state.current = None;
        state.step += 1;
        if !action {
            state.rejected.push(u);
            return Ok(0.0);
        }
        state.selected.push(u);
        let feats: Vec<&[f64]> = state.selected.iter().map(|&w| self.graph.feature(w)).collect();
        state.h_v = self.model.aggregator.aggregate(self.graph.feature(state.target), &feats)?;
        if !score {
            return Ok(0.0);
        }
        let s = self.pair_score(state.target, u)?;
        state.selected_scores.push(s);
        let denom: f64 = state.selected_scores.iter().sum();
        Ok(if denom < REWARD_EPS { 0.0 } else { s / denom })
    }

    pub fn rollout<R: Rng + ?Sized>(
        &self,
        v: usize,
        policy: &PolicyParams,
        decision: Decision,
        rng: &mut R,
    ) -> Result<Trajectory> {
        let mut state = self.init_episode(v)?;
        let max_steps = self.cfg.max_steps.unwrap_or(self.graph.degree(v) + 1);
        if max_steps == 0 {
            return Err(Error::InvalidArgument("max_steps must be at least 1".into()));
        }
        let mut transitions = Vec::new();
        let terminated_by = loop {
            if state.candidates.is_empty() {
                break Termination::ExhaustedCandidates;
            }
            if transitions.len() >= max_steps {
                break Termination::StepLimit;
            }
            let scores = self.regret_scores(&state, policy)?;
            let c = match decision {
                Decision::Greedy => {
                    let best = argmax_score(&scores);
                    self.take_candidate(&mut state, best)?;
                    best
                }
                _ => self.sample_next_candidate(&mut state, &scores, rng)?,
            };
            let u = match c {
                Candidate::End => break Termination::EndingNeighbor,
                Candidate::Node(u) => u,
            };
            let s = state.state.clone();
            let (action, log_prob) = match decision {
                Decision::Sample => sample_action(policy.prob(&s)?, rng)?,
                Decision::Greedy => {
                    let p = policy.prob(&s)?;
                    (p >= 0.5, action_log_prob(p, p >= 0.5))
                }
                Decision::SelectAll => (true, 0.0),
                Decision::SelectNone => (false, 0.0),
            };
            let reward = self.step(&mut state, action)?;
            transitions.push(Transition {
                state: s,
                action,
                reward,
                log_prob,
                candidate: u,
            });
        };
        Ok(Trajectory {
            target: v,
            transitions,
            terminated_by,
        })
    }

    /// Deterministic selection used at evaluation and for denoising: arg-max
    /// candidate order, keep iff `π ≥ 0.5`, stop at the ending neighbor. Never
    /// reads the target's label.
    pub fn decode(&self, v: usize, policy: &PolicyParams) -> Result<Vec<usize>> {
        let mut state = self.init_episode(v)?;
        let max_steps = self.cfg.max_steps.unwrap_or(self.graph.degree(v) + 1);
        while !state.candidates.is_empty() && state.step < max_steps {
            let scores = self.regret_scores(&state, policy)?;
            let c = argmax_score(&scores);
            self.take_candidate(&mut state, c)?;
            if c == Candidate::End {
                break;
            }
            let keep = policy.prob(&state.state)? >= 0.5;
            self.advance(&mut state, keep, false)?;
        }
        Ok(state.selected_sorted())
    }
}

/// Highest score; ties go to the earliest entry.
fn argmax_score(scores: &[(Candidate, f64)]) -> Candidate {
    let mut best = 0;
    for (i, &(_, l)) in scores.iter().enumerate() {
        if l > scores[best].1 {
            best = i;
        }
    }
    scores[best].0
}

/// Index drawn from `softmax(scores)`.
pub fn sample_index<R: Rng + ?Sized>(scores: &[f64], rng: &mut R) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::Empty("scores"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("regret scores"));
    }
    let probs = softmax(scores);
    let mut draw: f64 = rng.gen();
    for (i, p) in probs.iter().enumerate() {
        if draw < *p {
            return Ok(i);
        }
        draw -= p;
    }
    Ok(probs.len() - 1)
}
