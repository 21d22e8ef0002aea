use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Graph, Masks};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Matrix;

/// Planted-partition (two-level stochastic block model) generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedPartition {
    pub n: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub dim: usize,
    pub signal_strength: f64,
    pub seed: u64,
}

/// Equal-size classes, Bernoulli edges, and features equal to an orthogonal
/// class mean (`signal_strength · e_class`) plus unit Gaussian noise. Masks
/// are a class-stratified 60/20/20 split.
pub fn generate_planted_partition(cfg: &PlantedPartition) -> Result<Graph> {
    for (name, p) in [("p_in", cfg.p_in), ("p_out", cfg.p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidProbability { name, value: p });
        }
    }
    if cfg.p_out > cfg.p_in {
        return Err(Error::InvalidArgument(format!(
            "p_out ({}) must not exceed p_in ({})",
            cfg.p_out, cfg.p_in
        )));
    }
    if cfg.classes == 0 || cfg.n % cfg.classes != 0 {
        return Err(Error::InvalidArgument(format!(
            "{} nodes cannot be split into {} equal classes",
            cfg.n, cfg.classes
        )));
    }
    if cfg.dim < cfg.classes {
        return Err(Error::InvalidArgument(format!(
            "feature dimension {} cannot hold {} orthogonal class means",
            cfg.dim, cfg.classes
        )));
    }
    if !cfg.signal_strength.is_finite() {
        return Err(Error::NonFinite("signal strength"));
    }

    let per_class = cfg.n / cfg.classes;
    let labels: Vec<usize> = (0..cfg.n).map(|v| v / per_class).collect();

    let mut edge_rng = seed::child_rng(cfg.seed, 0);
    let mut edges = Vec::new();
    for u in 0..cfg.n {
        for v in u + 1..cfg.n {
            let p = if labels[u] == labels[v] { cfg.p_in } else { cfg.p_out };
            // Draw for every pair so the stream does not depend on p.
            let draw: f64 = edge_rng.gen();
            if draw < p {
                edges.push((u, v));
            }
        }
    }

    let mut feature_rng = seed::child_rng(cfg.seed, 1);
    let mut features = Matrix::zeros(cfg.n, cfg.dim);
    for v in 0..cfg.n {
        let row = features.row_mut(v);
        for x in row.iter_mut() {
            *x = feature_rng.sample(StandardNormal);
        }
        row[labels[v]] += cfg.signal_strength;
    }

    let mut split_rng = seed::child_rng(cfg.seed, seed::streams::SPLIT);
    let masks = Masks::stratified(&labels, cfg.classes, (0.6, 0.2), &mut split_rng);
    Graph::with_classes(&edges, features, labels, cfg.classes, masks)
}
