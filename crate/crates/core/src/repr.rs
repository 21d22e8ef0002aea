//! Mean-aggregator node embeddings, the softmax classifier over them, the
//! per-node task score used by rewards, and micro-averaged F1.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Split};
use crate::tensor::{softmax, Adam, AdamConfig, Direction, Matrix};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation and its output.
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
        }
    }
}

/// `Agg(x, Y) = σ(W · mean({x} ∪ Y))` with `W` of shape `d × D`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatorParams {
    pub weight: Matrix,
    pub activation: Activation,
}

/// Linear softmax head `softmax(V · h)` with `V` of shape `C × d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub weight: Matrix,
}

/// How the task score of a single target node is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FcMode {
    /// Probability assigned to the true class.
    #[default]
    Soft,
    /// 1 if the arg-max class is correct, else 0.
    Hard,
}

impl std::str::FromStr for FcMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(FcMode::Soft),
            "hard" => Ok(FcMode::Hard),
            other => Err(Error::InvalidArgument(format!("unknown f_c mode `{other}`"))),
        }
    }
}

/// Element-wise mean of `{x} ∪ others`.
pub fn mean_with(x: &[f64], others: &[&[f64]]) -> Result<Vec<f64>> {
    let mut acc = x.to_vec();
    for (i, y) in others.iter().enumerate() {
        if y.len() != x.len() {
            return Err(Error::FeatureDimension {
                row: i,
                expected: x.len(),
                found: y.len(),
            });
        }
        for (a, b) in acc.iter_mut().zip(y.iter()) {
            *a += b;
        }
    }
    let count = (others.len() + 1) as f64;
    acc.iter_mut().for_each(|a| *a /= count);
    Ok(acc)
}

impl AggregatorParams {
    pub fn glorot<R: rand::Rng + ?Sized>(embed_dim: usize, feature_dim: usize, rng: &mut R) -> Self {
        AggregatorParams {
            weight: Matrix::glorot(embed_dim, feature_dim, rng),
            activation: Activation::Relu,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.cols()
    }

    /// `σ(W · m)` for an already averaged feature vector.
    pub fn embed_mean(&self, mean: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .weight
            .matvec(mean)?
            .into_iter()
            .map(|z| self.activation.apply(z))
            .collect())
    }

    /// Embedding of a node from its own features and a neighbor feature set.
    /// An empty set embeds the node from its own features alone.
    pub fn aggregate(&self, x_v: &[f64], neighbor_features: &[&[f64]]) -> Result<Vec<f64>> {
        if x_v.len() != self.feature_dim() {
            return Err(Error::shape("aggregate input", self.feature_dim(), x_v.len()));
        }
        self.embed_mean(&mean_with(x_v, neighbor_features)?)
    }
}

impl ClassifierParams {
    pub fn glorot<R: rand::Rng + ?Sized>(num_classes: usize, embed_dim: usize, rng: &mut R) -> Self {
        ClassifierParams {
            weight: Matrix::glorot(num_classes, embed_dim, rng),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn classify(&self, h: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.weight.matvec(h)?))
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Task score of node `v` embedded with the given neighbor features.
pub fn f_c_score(
    clf: &ClassifierParams,
    agg: &AggregatorParams,
    x_v: &[f64],
    neighbor_features: &[&[f64]],
    true_label: usize,
    mode: FcMode,
) -> Result<f64> {
    if true_label >= clf.num_classes() {
        return Err(Error::InvalidLabel {
            label: true_label,
            num_classes: clf.num_classes(),
        });
    }
    let probs = clf.classify(&agg.aggregate(x_v, neighbor_features)?)?;
    Ok(match mode {
        FcMode::Soft => probs[true_label],
        FcMode::Hard => (argmax(&probs) == true_label) as u8 as f64,
    })
}

/// Micro-averaged F1 from pooled per-class true/false positives and negatives.
pub fn micro_f1(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty("micro-F1 predictions"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::shape("micro-F1 inputs", labels.len(), predictions.len()));
    }
    let classes = predictions
        .iter()
        .chain(labels)
        .max()
        .map_or(0, |&m| m + 1);
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for c in 0..classes {
        for (&p, &y) in predictions.iter().zip(labels) {
            match (p == c, y == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                (false, false) => {}
            }
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fneg) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Aggregator and classifier trained together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentationModel {
    pub aggregator: AggregatorParams,
    pub classifier: ClassifierParams,
}

/// Gradients of the mean cross-entropy with respect to both weight matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationGrads {
    pub aggregator: Matrix,
    pub classifier: Matrix,
}

impl RepresentationModel {
    pub fn glorot<R: rand::Rng + ?Sized>(
        feature_dim: usize,
        embed_dim: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Self {
        let aggregator = AggregatorParams::glorot(embed_dim, feature_dim, rng);
        let classifier = ClassifierParams::glorot(num_classes, embed_dim, rng);
        RepresentationModel {
            aggregator,
            classifier,
        }
    }

    pub fn shapes(&self) -> [(usize, usize); 2] {
        [self.aggregator.weight.shape(), self.classifier.weight.shape()]
    }

    /// Embedding of `v` using `selected` (a subset of its neighbors).
    pub fn embed(&self, graph: &Graph, v: usize, selected: &[usize]) -> Result<Vec<f64>> {
        let feats: Vec<&[f64]> = selected.iter().map(|&u| graph.feature(u)).collect();
        self.aggregator.aggregate(graph.feature(v), &feats)
    }

    pub fn predict(&self, graph: &Graph, v: usize, selected: &[usize]) -> Result<usize> {
        Ok(argmax(&self.classifier.classify(&self.embed(graph, v, selected)?)?))
    }

    /// Mean cross-entropy over `(mean feature vector, label)` samples and its gradient.
    pub fn loss_and_grad(&self, samples: &[(&[f64], usize)]) -> Result<(f64, RepresentationGrads)> {
        if samples.is_empty() {
            return Err(Error::Empty("representation batch"));
        }
        let agg = &self.aggregator;
        let clf = &self.classifier;
        let mut g_agg = Matrix::zeros(agg.weight.rows(), agg.weight.cols());
        let mut g_clf = Matrix::zeros(clf.weight.rows(), clf.weight.cols());
        let mut loss = 0.0;
        let scale = 1.0 / samples.len() as f64;
        for &(mean, label) in samples {
            if label >= clf.num_classes() {
                return Err(Error::InvalidLabel {
                    label,
                    num_classes: clf.num_classes(),
                });
            }
            let pre = agg.weight.matvec(mean)?;
            let h: Vec<f64> = pre.iter().map(|&z| agg.activation.apply(z)).collect();
            let probs = softmax(&clf.weight.matvec(&h)?);
            loss -= probs[label].max(f64::MIN_POSITIVE).ln() * scale;
            let mut dz = probs;
            dz[label] -= 1.0;
            g_clf.add_outer(scale, &dz, &h);
            let dh = clf.weight.tr_matvec(&dz)?;
            let dpre: Vec<f64> = dh
                .iter()
                .zip(pre.iter().zip(&h))
                .map(|(&g, (&z, &o))| g * agg.activation.derivative(z, o))
                .collect();
            g_agg.add_outer(scale, &dpre, mean);
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("representation loss"));
        }
        Ok((
            loss,
            RepresentationGrads {
                aggregator: g_agg,
                classifier: g_clf,
            },
        ))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for RepTrainConfig {
    fn default() -> Self {
        RepTrainConfig {
            epochs: 100,
            batch_size: 256,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RepTrainReport {
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl RepTrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Model plus the optimizer state that persists across training rounds.
#[derive(Clone, Debug)]
pub struct RepresentationLearner {
    pub model: RepresentationModel,
    optimizer: Adam,
}

impl RepresentationLearner {
    pub fn new(model: RepresentationModel, adam: AdamConfig) -> Self {
        let optimizer = Adam::new(adam, &model.shapes());
        RepresentationLearner { model, optimizer }
    }

    /// Minimizes cross-entropy over training-mask nodes embedded with their
    /// `selected_sets`. Labels of validation and test nodes are never read.
    pub fn train<R: rand::Rng + ?Sized>(
        &mut self,
        graph: &Graph,
        selected_sets: &[Vec<usize>],
        cfg: &RepTrainConfig,
        rng: &mut R,
    ) -> Result<RepTrainReport> {
        if selected_sets.len() != graph.num_nodes() {
            return Err(Error::shape(
                "selected neighbor sets",
                graph.num_nodes(),
                selected_sets.len(),
            ));
        }
        for (v, set) in selected_sets.iter().enumerate() {
            if let Some(&u) = set.iter().find(|&&u| !graph.has_edge(v, u)) {
                return Err(Error::NotSubset { node: v, neighbor: u });
            }
        }
        let train = graph.nodes_in(Split::Train);
        if train.is_empty() {
            return Err(Error::Empty("training mask"));
        }
        if cfg.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        let means: Vec<Vec<f64>> = train
            .iter()
            .map(|&v| {
                let feats: Vec<&[f64]> = selected_sets[v].iter().map(|&u| graph.feature(u)).collect();
                mean_with(graph.feature(v), &feats)
            })
            .collect::<Result<_>>()?;
        let labels: Vec<usize> = train.iter().map(|&v| graph.label(v)).collect();

        let mut report = RepTrainReport::default();
        let mut order: Vec<usize> = (0..train.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<(&[f64], usize)> =
                    chunk.iter().map(|&i| (means[i].as_slice(), labels[i])).collect();
                let (loss, grads) = self.model.loss_and_grad(&batch)?;
                epoch_loss += loss * chunk.len() as f64;
                let RepresentationModel {
                    aggregator,
                    classifier,
                } = &mut self.model;
                self.optimizer.step(
                    &mut [&mut aggregator.weight, &mut classifier.weight],
                    &[&grads.aggregator, &grads.classifier],
                    Direction::Minimize,
                )?;
            }
            report.epoch_losses.push(epoch_loss / train.len() as f64);
        }
        Ok(report)
    }
}

/// One-shot training with a fresh optimizer.
pub fn train_representation<R: rand::Rng + ?Sized>(
    model: RepresentationModel,
    graph: &Graph,
    selected_sets: &[Vec<usize>],
    cfg: &RepTrainConfig,
    adam: AdamConfig,
    rng: &mut R,
) -> Result<(RepresentationModel, RepTrainReport)> {
    let mut learner = RepresentationLearner::new(model, adam);
    let report = learner.train(graph, selected_sets, cfg, rng)?;
    Ok((learner.model, report))
}

/// Tab-separated embedding export: node id followed by the vector entries.
pub fn write_embeddings(path: &Path, rows: &[(usize, Vec<f64>)]) -> Result<()> {
    let mut text = String::new();
    for (v, h) in rows {
        let _ = write!(text, "{v}");
        for x in h {
            let _ = write!(text, "\t{x}");
        }
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut seed::Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn empty_set_embeds_self_only() {
        let mut rng = seed::rng(1);
        let agg = AggregatorParams::glorot(4, 3, &mut rng);
        let x = [0.5, -1.0, 2.0];
        let direct: Vec<f64> = agg.weight.matvec(&x).unwrap().into_iter().map(|z| z.max(0.0)).collect();
        assert_eq!(agg.aggregate(&x, &[]).unwrap(), direct);
        assert_eq!(agg.aggregate(&x, &[&x, &x]).unwrap(), direct);
    }

    #[test]
    fn zero_weight_gives_zero_embedding() {
        let agg = AggregatorParams {
            weight: Matrix::zeros(3, 2),
            activation: Activation::Relu,
        };
        assert_eq!(agg.aggregate(&[4.0, -2.0], &[&[1.0, 1.0]]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn aggregate_rejects_dimension_mismatch() {
        let agg = AggregatorParams::glorot(2, 3, &mut seed::rng(0));
        assert!(agg.aggregate(&[1.0, 2.0, 3.0], &[&[1.0]]).is_err());
        assert!(agg.aggregate(&[1.0], &[]).is_err());
    }

    #[test]
    fn classify_uniform_saturated_and_oracle() {
        let clf = ClassifierParams {
            weight: Matrix::zeros(3, 2),
        };
        for p in clf.classify(&[1.0, -4.0]).unwrap() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let clf = ClassifierParams {
            weight: Matrix::from_rows(&[vec![1e3, 0.0], vec![0.0, 0.0]]).unwrap(),
        };
        assert!(clf.classify(&[1.0, 0.0]).unwrap()[0] > 0.999);

        let mut rng = seed::rng(2);
        for _ in 0..20 {
            let w = random_matrix(4, 3, &mut rng);
            let h: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let probs = ClassifierParams { weight: w.clone() }.classify(&h).unwrap();
            let logits: Vec<f64> = (0..4).map(|r| (0..3).map(|c| w.get(r, c) * h[c]).sum()).collect();
            let denom: f64 = logits.iter().map(|z| z.exp()).sum();
            for (p, z) in probs.iter().zip(&logits) {
                assert!((p - z.exp() / denom).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn f_c_modes() {
        let agg = AggregatorParams {
            weight: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            activation: Activation::Relu,
        };
        let confident = ClassifierParams {
            weight: Matrix::from_rows(&[vec![1e3, 0.0], vec![0.0, 1e3]]).unwrap(),
        };
        let x = [1.0, 0.0];
        assert_eq!(f_c_score(&confident, &agg, &x, &[], 0, FcMode::Soft).unwrap(), 1.0);
        assert_eq!(f_c_score(&confident, &agg, &x, &[], 0, FcMode::Hard).unwrap(), 1.0);
        assert_eq!(f_c_score(&confident, &agg, &x, &[], 1, FcMode::Hard).unwrap(), 0.0);

        let uniform = ClassifierParams {
            weight: Matrix::zeros(3, 2),
        };
        let soft = f_c_score(&uniform, &agg, &x, &[], 2, FcMode::Soft).unwrap();
        assert!((soft - 1.0 / 3.0).abs() < 1e-15);
        assert!(f_c_score(&uniform, &agg, &x, &[], 3, FcMode::Soft).is_err());
    }

    #[test]
    fn hard_score_is_single_sample_micro_f1() {
        let mut rng = seed::rng(9);
        for _ in 0..50 {
            let agg = AggregatorParams {
                weight: random_matrix(3, 2, &mut rng),
                activation: Activation::Relu,
            };
            let clf = ClassifierParams {
                weight: random_matrix(3, 3, &mut rng),
            };
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let label = rng.gen_range(0..3);
            let hard = f_c_score(&clf, &agg, &x, &[], label, FcMode::Hard).unwrap();
            let pred = argmax(&clf.classify(&agg.aggregate(&x, &[]).unwrap()).unwrap());
            assert_eq!(hard, micro_f1(&[pred], &[label]).unwrap());
        }
    }

    #[test]
    fn micro_f1_examples() {
        assert_eq!(micro_f1(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(micro_f1(&[1, 2, 0], &[0, 1, 2]).unwrap(), 0.0);
        // Confusion matrix by hand: TP = 3, FP = 1, FN = 1 → P = R = 3/4.
        assert!((micro_f1(&[0, 1, 1, 2], &[0, 1, 2, 2]).unwrap() - 0.75).abs() < 1e-15);
        assert!(micro_f1(&[], &[]).is_err());
        assert!(micro_f1(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn micro_f1_equals_accuracy_on_random_predictions() {
        let mut rng = seed::rng(4);
        for _ in 0..1000 {
            let n = rng.gen_range(1..40);
            let c = rng.gen_range(1..6);
            let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
            let acc = preds.iter().zip(&labels).filter(|(a, b)| a == b).count() as f64 / n as f64;
            assert!((micro_f1(&preds, &labels).unwrap() - acc).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn aggregate_is_permutation_invariant(
            rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 1..6),
            seed in 0u64..1000,
        ) {
            let agg = AggregatorParams::glorot(4, 3, &mut seed::rng(seed));
            let x = [0.1, 0.2, 0.3];
            let forward: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            let reversed: Vec<&[f64]> = rows.iter().rev().map(Vec::as_slice).collect();
            let a = agg.aggregate(&x, &forward).unwrap();
            let b = agg.aggregate(&x, &reversed).unwrap();
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn f_c_stays_in_unit_interval(seed in 0u64..500, label in 0usize..3) {
            let mut rng = seed::rng(seed);
            let agg = AggregatorParams { weight: random_matrix(4, 2, &mut rng), activation: Activation::Relu };
            let clf = ClassifierParams { weight: random_matrix(3, 4, &mut rng) };
            let x = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let y = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let soft = f_c_score(&clf, &agg, &x, &[&y], label, FcMode::Soft).unwrap();
            let hard = f_c_score(&clf, &agg, &x, &[&y], label, FcMode::Hard).unwrap();
            prop_assert!((0.0..=1.0).contains(&soft));
            prop_assert!(hard == 0.0 || hard == 1.0);
        }
    }
}
