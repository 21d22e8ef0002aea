//! Bernoulli neighbor-selection policy, discounted returns and the
//! KL-penalized proximal policy update.
//!
//! The policy network and the regret scorer share one weight stack
//! `2d → 64 → 36 → 1` with ReLU between layers: the regret score of a
//! candidate is the pre-sigmoid output and the selection probability is its
//! sigmoid.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Trajectory;
use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Adam, AdamConfig, Direction, Head, Matrix, Mlp};

pub const DEFAULT_HIDDEN: [usize; 2] = [64, 36];

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    net: Mlp,
}

impl PolicyParams {
    pub fn glorot<R: Rng + ?Sized>(embed_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut sizes = hidden.to_vec();
        sizes.push(1);
        PolicyParams {
            net: Mlp::glorot(2 * embed_dim, &sizes, rng),
        }
    }

    pub fn from_mlp(net: Mlp) -> Result<Self> {
        if net.output_dim() != 1 {
            return Err(Error::shape("policy output", 1, net.output_dim()));
        }
        if net.input_dim() % 2 != 0 {
            return Err(Error::shape("policy input (2d)", "an even width", net.input_dim()));
        }
        Ok(PolicyParams { net })
    }

    /// All-zero weights: every regret score is 0 and every probability 0.5.
    pub fn zeros(embed_dim: usize, hidden: &[usize]) -> Self {
        let mut p = PolicyParams::glorot(embed_dim, hidden, &mut crate::seed::rng(0));
        p.net.layers_mut().iter_mut().for_each(|m| m.fill(0.0));
        p
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.state_dim() / 2
    }

    /// Pre-sigmoid output; doubles as the regret score of a candidate.
    pub fn logit(&self, state: &[f64]) -> Result<f64> {
        Ok(self.net.eval(state, Head::Linear)?[0])
    }

    /// Probability of selecting the current candidate.
    pub fn prob(&self, state: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(state)?))
    }
}

pub fn policy_forward(params: &PolicyParams, state: &[f64]) -> Result<f64> {
    params.prob(state)
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Bernoulli draw from `prob`; returns the action and its clamped log-probability.
pub fn sample_action<R: Rng + ?Sized>(prob: f64, rng: &mut R) -> Result<(bool, f64)> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::InvalidProbability { name: "policy", value: prob });
    }
    let action = rng.gen::<f64>() < prob;
    Ok((action, action_log_prob(prob, action)))
}

pub fn action_log_prob(prob: f64, action: bool) -> f64 {
    let p = clamp_prob(prob);
    if action {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

/// `Q_t = Σ_{i≥t} γ^{i−t} r_i`, computed by the backward recursion `Q_t = r_t + γ Q_{t+1}`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (q, &r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *q = acc;
    }
    out
}

/// `KL(Bern(p_old) ∥ Bern(p_new))`.
pub fn kl_bernoulli(p_old: f64, p_new: f64) -> Result<f64> {
    for (name, p) in [("p_old", p_old), ("p_new", p_new)] {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidProbability { name, value: p });
        }
    }
    let kl = p_old * (p_old / p_new).ln() + (1.0 - p_old) * ((1.0 - p_old) / (1.0 - p_new)).ln();
    Ok(kl.max(0.0))
}

fn kl_clamped(p_old: f64, p_new: f64) -> f64 {
    kl_bernoulli(clamp_prob(p_old), clamp_prob(p_new)).unwrap_or(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    /// KL trust-region threshold.
    pub delta: f64,
    /// Initial KL penalty coefficient; adapted during training.
    pub kl_coef: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub lr: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.95,
            delta: 0.01,
            kl_coef: 1.0,
            epochs: 4,
            minibatch_size: 256,
            lr: 1e-3,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!("gamma {} not in [0, 1]", self.gamma)));
        }
        if !(self.delta > 0.0) {
            return Err(Error::InvalidArgument(format!("delta {} must be positive", self.delta)));
        }
        if self.minibatch_size == 0 {
            return Err(Error::InvalidArgument("minibatch size must be positive".into()));
        }
        if !(self.lr >= 0.0) || !(self.kl_coef >= 0.0) {
            return Err(Error::InvalidArgument("learning rate and KL coefficient must be non-negative".into()));
        }
        Ok(())
    }
}

/// One decision prepared for the surrogate objective.
#[derive(Clone, Debug, PartialEq)]
pub struct PpoSample {
    pub state: Vec<f64>,
    pub action: bool,
    /// Behavior probability `q(a|s)` of the action actually taken.
    pub behavior_prob: f64,
    pub advantage: f64,
}

/// Flattens trajectories into samples with mean/std-normalized discounted returns.
/// Also returns the raw mean return.
pub fn samples_from_trajectories(batch: &[Trajectory], gamma: f64) -> (Vec<PpoSample>, f64) {
    let mut samples = Vec::new();
    let mut returns = Vec::new();
    for traj in batch {
        let rewards: Vec<f64> = traj.transitions.iter().map(|t| t.reward).collect();
        let q = discounted_returns(&rewards, gamma);
        for (t, q) in traj.transitions.iter().zip(q) {
            samples.push(PpoSample {
                state: t.state.clone(),
                action: t.action,
                behavior_prob: t.log_prob.exp(),
                advantage: 0.0,
            });
            returns.push(q);
        }
    }
    if returns.is_empty() {
        return (samples, 0.0);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let std = (returns.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / n).sqrt();
    for (s, q) in samples.iter_mut().zip(&returns) {
        s.advantage = if std > 1e-12 { (q - mean) / std } else { q - mean };
    }
    (samples, mean)
}

/// Value of the KL-penalized surrogate
/// `mean[π(a|s)/q(a|s) · Â] − β · mean[KL(π_old(·|s) ∥ π(·|s))]`
/// together with its gradient with respect to the policy weights.
pub struct Surrogate {
    pub objective: f64,
    pub ratio_term: f64,
    pub mean_kl: f64,
    pub grads: Mlp,
}

pub fn surrogate(
    params: &PolicyParams,
    samples: &[PpoSample],
    old_probs: &[f64],
    kl_coef: f64,
) -> Result<Surrogate> {
    if samples.is_empty() {
        return Err(Error::Empty("policy update batch"));
    }
    let n = samples.len() as f64;
    let mut grads = params.net.zeros_like();
    let (mut ratio_term, mut kl_term) = (0.0, 0.0);
    for (s, &p_old) in samples.iter().zip(old_probs) {
        let (out, cache) = params.net.forward(&s.state, Head::Linear)?;
        let p = sigmoid(out[0]);
        let q = clamp_prob(s.behavior_prob);
        let pi_a = if s.action { p } else { 1.0 - p };
        ratio_term += pi_a / q * s.advantage / n;
        kl_term += kl_clamped(p_old, p) / n;
        let dpi_dz = if s.action { p * (1.0 - p) } else { -p * (1.0 - p) };
        let dz = (s.advantage / q * dpi_dz - kl_coef * (p - p_old)) / n;
        if dz != 0.0 {
            grads.add_scaled(1.0, &params.net.backward(&cache, &[dz])?)?;
        }
    }
    let objective = ratio_term - kl_coef * kl_term;
    if !objective.is_finite() {
        return Err(Error::NonFinite("policy surrogate objective"));
    }
    Ok(Surrogate {
        objective,
        ratio_term,
        mean_kl: kl_term,
        grads,
    })
}

pub fn mean_kl(old: &PolicyParams, new: &PolicyParams, samples: &[PpoSample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in samples {
        total += kl_clamped(old.prob(&s.state)?, new.prob(&s.state)?);
    }
    Ok(total / samples.len() as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoDiagnostics {
    pub mean_kl: f64,
    pub objective: f64,
    pub mean_return: f64,
    pub kl_coef: f64,
    pub epochs_run: usize,
    pub retries: usize,
    /// True when an epoch exceeded the trust region even after its retry and was discarded.
    pub rejected_epoch: bool,
}

/// Policy weights plus the optimizer and penalty state that persist across updates.
#[derive(Clone, Debug)]
pub struct PpoLearner {
    pub params: PolicyParams,
    optimizer: Adam,
    kl_coef: f64,
}

impl PpoLearner {
    pub fn new(params: PolicyParams, cfg: &PpoConfig) -> Self {
        let adam = AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        };
        let optimizer = Adam::new(adam, &params.net.shapes());
        PpoLearner {
            params,
            optimizer,
            kl_coef: cfg.kl_coef,
        }
    }

    pub fn kl_coef(&self) -> f64 {
        self.kl_coef
    }

    /// Update from trajectories collected with the frozen `old` snapshot.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        old: &PolicyParams,
        batch: &[Trajectory],
        cfg: &PpoConfig,
        rng: &mut R,
    ) -> Result<PpoDiagnostics> {
        let (samples, mean_return) = samples_from_trajectories(batch, cfg.gamma);
        let mut diag = self.update_samples(old, &samples, cfg, rng)?;
        diag.mean_return = mean_return;
        Ok(diag)
    }

    /// Adaptive-KL update over prepared samples. After every epoch the mean
    /// KL to `old` is measured; above `1.5·δ` the penalty doubles and the
    /// epoch is retried once from its starting point, and an epoch that still
    /// violates the bound is discarded. Below `δ/1.5` the penalty halves.
    pub fn update_samples<R: Rng + ?Sized>(
        &mut self,
        old: &PolicyParams,
        samples: &[PpoSample],
        cfg: &PpoConfig,
        rng: &mut R,
    ) -> Result<PpoDiagnostics> {
        cfg.validate()?;
        if samples.is_empty() {
            return Err(Error::Empty("policy update batch"));
        }
        self.optimizer.set_lr(cfg.lr);
        let old_probs: Vec<f64> = samples
            .iter()
            .map(|s| old.prob(&s.state))
            .collect::<Result<_>>()?;
        let mut diag = PpoDiagnostics::default();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            let start = (self.params.clone(), self.optimizer.clone());
            self.run_epoch(samples, &old_probs, &order, cfg.minibatch_size)?;
            let mut kl = mean_kl(old, &self.params, samples)?;
            if kl > 1.5 * cfg.delta {
                self.kl_coef *= 2.0;
                diag.retries += 1;
                (self.params, self.optimizer) = start.clone();
                self.run_epoch(samples, &old_probs, &order, cfg.minibatch_size)?;
                kl = mean_kl(old, &self.params, samples)?;
                if kl > 1.5 * cfg.delta {
                    (self.params, self.optimizer) = start;
                    diag.rejected_epoch = true;
                    break;
                }
            } else if kl < cfg.delta / 1.5 {
                self.kl_coef = (self.kl_coef / 2.0).max(1e-4);
            }
            diag.epochs_run += 1;
        }
        let last = surrogate(&self.params, samples, &old_probs, self.kl_coef)?;
        diag.mean_kl = mean_kl(old, &self.params, samples)?;
        diag.objective = last.ratio_term;
        diag.kl_coef = self.kl_coef;
        Ok(diag)
    }

    fn run_epoch(
        &mut self,
        samples: &[PpoSample],
        old_probs: &[f64],
        order: &[usize],
        minibatch: usize,
    ) -> Result<()> {
        for chunk in order.chunks(minibatch) {
            let batch: Vec<PpoSample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let olds: Vec<f64> = chunk.iter().map(|&i| old_probs[i]).collect();
            let s = surrogate(&self.params, &batch, &olds, self.kl_coef)?;
            let grads: Vec<&Matrix> = s.grads.layers().iter().collect();
            let mut params: Vec<&mut Matrix> = self.params.net.layers_mut().iter_mut().collect();
            self.optimizer.step(&mut params, &grads, Direction::Maximize)?;
        }
        if !self.params.net.is_finite() {
            return Err(Error::NonFinite("policy parameters"));
        }
        Ok(())
    }
}

/// One-shot update with a fresh optimizer.
pub fn ppo_update<R: Rng + ?Sized>(
    params: &PolicyParams,
    old: &PolicyParams,
    batch: &[Trajectory],
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<(PolicyParams, PpoDiagnostics)> {
    if batch.iter().all(|t| t.transitions.is_empty()) {
        return Err(Error::Empty("policy update batch"));
    }
    let mut learner = PpoLearner::new(params.clone(), cfg);
    let diag = learner.update(old, batch, cfg, rng)?;
    Ok((learner.params, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn random_state(rng: &mut seed::Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_weights_give_half() {
        let p = PolicyParams::zeros(3, &DEFAULT_HIDDEN);
        assert_eq!(policy_forward(&p, &[0.3; 6]).unwrap(), 0.5);
        assert_eq!(p.logit(&[1.0; 6]).unwrap(), 0.0);
    }

    #[test]
    fn forward_is_pure_and_matches_straight_line() {
        let mut rng = seed::rng(1);
        let p = PolicyParams::glorot(4, &DEFAULT_HIDDEN, &mut rng);
        let s = random_state(&mut rng, 8);
        assert_eq!(p.prob(&s).unwrap(), p.prob(&s).unwrap());

        let mut h = s.clone();
        let layers = p.net().layers();
        for (i, w) in layers.iter().enumerate() {
            let mut next = vec![0.0; w.rows()];
            for (r, o) in next.iter_mut().enumerate() {
                let mut acc = 0.0;
                for c in 0..w.cols() {
                    acc += w.get(r, c) * h[c];
                }
                *o = if i + 1 < layers.len() { acc.max(0.0) } else { acc };
            }
            h = next;
        }
        let oracle = 1.0 / (1.0 + (-h[0]).exp());
        assert!((p.prob(&s).unwrap() - oracle).abs() < 1e-12);
        assert!(p.prob(&s[..7]).is_err());
    }

    #[test]
    fn sampling_frequency_and_log_probs() {
        let mut rng = seed::rng(2);
        let draws = 10_000;
        let ones = (0..draws)
            .filter(|_| sample_action(0.5, &mut rng).unwrap().0)
            .count();
        assert!((ones as f64 / draws as f64 - 0.5).abs() < 0.02);

        let (a, lp) = sample_action(0.3, &mut seed::rng(0)).unwrap();
        let expected = if a { 0.3f64.ln() } else { 0.7f64.ln() };
        assert_eq!(lp, expected);
        assert_eq!(action_log_prob(0.3, true), 0.3f64.ln());
        assert!(action_log_prob(0.0, true).is_finite());
        assert!(action_log_prob(1.0, false).is_finite());
        assert!(sample_action(1.5, &mut rng).is_err());
        assert!(sample_action(f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn discounted_return_examples() {
        assert_eq!(discounted_returns(&[1.0, 1.0, 1.0], 1.0), vec![3.0, 2.0, 1.0]);
        assert_eq!(discounted_returns(&[0.3, 2.0, 0.7], 0.0), vec![0.3, 2.0, 0.7]);
        assert_eq!(discounted_returns(&[1.0, 1.0], 0.5), vec![1.5, 1.0]);
        assert!(discounted_returns(&[], 0.9).is_empty());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_bernoulli(0.3, 0.3).unwrap(), 0.0);
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kl_bernoulli(0.5, 0.25).unwrap() - expected).abs() < 1e-15);
        assert!((kl_bernoulli(0.5, 0.25).unwrap() - 0.143841).abs() < 1e-6);
        assert!(kl_bernoulli(0.0, 0.5).is_err());
        assert!(kl_bernoulli(0.5, 1.0).is_err());
    }

    #[test]
    fn kl_asymmetry() {
        let a = kl_bernoulli(0.9, 0.5).unwrap();
        let b = kl_bernoulli(0.5, 0.9).unwrap();
        assert!((a - b).abs() > 1e-3, "{a} vs {b}");
    }

    #[test]
    fn kl_nonnegative_and_zero_iff_equal() {
        let mut rng = seed::rng(3);
        for _ in 0..1000 {
            let p: f64 = rng.gen_range(0.001..0.999);
            let q: f64 = rng.gen_range(0.001..0.999);
            let kl = kl_bernoulli(p, q).unwrap();
            assert!(kl >= 0.0);
            if (p - q).abs() > 1e-3 {
                assert!(kl > 0.0);
            }
            assert_eq!(kl_bernoulli(p, p).unwrap(), 0.0);
        }
    }

    #[test]
    fn returns_satisfy_recursion() {
        let mut rng = seed::rng(4);
        for _ in 0..100 {
            let n = rng.gen_range(1..20);
            let gamma = rng.gen_range(0.0..=1.0);
            let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let q = discounted_returns(&rewards, gamma);
            for t in 0..n - 1 {
                assert_eq!(q[t], rewards[t] + gamma * q[t + 1]);
            }
            assert_eq!(q[n - 1], rewards[n - 1]);
        }
    }

    fn synthetic_batch(rng: &mut seed::Rng, params: &PolicyParams, n: usize) -> Vec<PpoSample> {
        (0..n)
            .map(|_| {
                let state = random_state(rng, params.state_dim());
                let p = params.prob(&state).unwrap();
                let (action, lp) = sample_action(p, rng).unwrap();
                PpoSample {
                    state,
                    action,
                    behavior_prob: lp.exp(),
                    advantage: if action { 1.0 } else { -1.0 },
                }
            })
            .collect()
    }

    #[test]
    fn zero_epochs_is_identity() {
        let mut rng = seed::rng(5);
        let p = PolicyParams::glorot(3, &DEFAULT_HIDDEN, &mut rng);
        let samples = synthetic_batch(&mut rng, &p, 32);
        let cfg = PpoConfig {
            epochs: 0,
            ..PpoConfig::default()
        };
        let mut learner = PpoLearner::new(p.clone(), &cfg);
        let diag = learner.update_samples(&p, &samples, &cfg, &mut rng).unwrap();
        assert_eq!(learner.params, p);
        assert_eq!(diag.mean_kl, 0.0);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut rng = seed::rng(6);
        let p = PolicyParams::glorot(3, &DEFAULT_HIDDEN, &mut rng);
        let samples = synthetic_batch(&mut rng, &p, 64);
        let cfg = PpoConfig {
            lr: 0.0,
            epochs: 3,
            minibatch_size: 16,
            ..PpoConfig::default()
        };
        let mut learner = PpoLearner::new(p.clone(), &cfg);
        learner.update_samples(&p, &samples, &cfg, &mut rng).unwrap();
        assert_eq!(learner.params, p);
    }

    #[test]
    fn positive_advantage_for_selection_raises_selection_probability() {
        let mut rng = seed::rng(7);
        let p = PolicyParams::glorot(3, &DEFAULT_HIDDEN, &mut rng);
        let samples = synthetic_batch(&mut rng, &p, 128);
        let mean_prob = |params: &PolicyParams| {
            samples.iter().map(|s| params.prob(&s.state).unwrap()).sum::<f64>() / samples.len() as f64
        };
        let cfg = PpoConfig {
            epochs: 4,
            minibatch_size: 32,
            ..PpoConfig::default()
        };
        let mut learner = PpoLearner::new(p.clone(), &cfg);
        learner.update_samples(&p, &samples, &cfg, &mut rng).unwrap();
        assert!(mean_prob(&learner.params) > mean_prob(&p));
    }

    #[test]
    fn tiny_trust_region_keeps_policy_in_place() {
        let mut rng = seed::rng(8);
        let p = PolicyParams::glorot(3, &DEFAULT_HIDDEN, &mut rng);
        let samples = synthetic_batch(&mut rng, &p, 128);
        let cfg = PpoConfig {
            delta: 1e-9,
            epochs: 4,
            minibatch_size: 32,
            ..PpoConfig::default()
        };
        let mut learner = PpoLearner::new(p.clone(), &cfg);
        let diag = learner.update_samples(&p, &samples, &cfg, &mut rng).unwrap();
        assert!(diag.mean_kl <= 1e-6, "kl = {}", diag.mean_kl);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let p = PolicyParams::zeros(2, &DEFAULT_HIDDEN);
        let mut learner = PpoLearner::new(p.clone(), &PpoConfig::default());
        assert!(learner
            .update_samples(&p, &[], &PpoConfig::default(), &mut seed::rng(0))
            .is_err());
    }
}
