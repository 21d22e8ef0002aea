use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionMode {
    /// Replace entries with zero (missing values).
    #[default]
    Zero,
    /// Replace entries with a standard normal draw (incorrect values).
    Randomize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Added cross-class edges as a fraction of the original edge count.
    pub edge_noise_rate: f64,
    /// Fraction of feature entries corrupted.
    pub feature_corrupt_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub corruption: CorruptionMode,
}

impl NoiseSpec {
    pub fn edges(rate: f64, seed: u64) -> Self {
        NoiseSpec {
            edge_noise_rate: rate,
            feature_corrupt_rate: 0.0,
            seed,
            corruption: CorruptionMode::Zero,
        }
    }

    pub fn features(rate: f64, seed: u64) -> Self {
        NoiseSpec {
            edge_noise_rate: 0.0,
            feature_corrupt_rate: rate,
            seed,
            corruption: CorruptionMode::Zero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("edge_noise_rate", self.edge_noise_rate),
            ("feature_corrupt_rate", self.feature_corrupt_rate),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidProbability { name, value });
            }
        }
        Ok(())
    }
}

// Below this many nodes the absent cross-class pairs are enumerated outright.
const ENUMERATION_LIMIT: usize = 4096;

/// Adds `round(rate·|E|)` edges between label-distinct, previously
/// non-adjacent nodes. Original edges and labels are untouched.
pub fn inject_edge_noise(g: &Graph, spec: &NoiseSpec) -> Result<Graph> {
    spec.validate()?;
    let needed = (spec.edge_noise_rate * g.num_edges() as f64).round() as usize;
    if needed == 0 {
        return Ok(g.clone());
    }
    let available = absent_cross_class_pairs(g);
    if needed > available {
        return Err(Error::InsufficientPairs { needed, available });
    }
    let mut rng = seed::child_rng(spec.seed, seed::streams::NOISE);
    let n = g.num_nodes();
    let added: Vec<(usize, usize)> = if n <= ENUMERATION_LIMIT || needed * 2 > available {
        let mut candidates = Vec::with_capacity(available);
        for u in 0..n {
            for v in u + 1..n {
                if g.label(u) != g.label(v) && !g.has_edge(u, v) {
                    candidates.push((u, v));
                }
            }
        }
        let mut picks: Vec<usize> = index::sample(&mut rng, candidates.len(), needed).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|i| candidates[i]).collect()
    } else {
        let mut chosen = HashSet::with_capacity(needed);
        let mut out = Vec::with_capacity(needed);
        while out.len() < needed {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            let (u, v) = (a.min(b), a.max(b));
            if u == v || g.label(u) == g.label(v) || g.has_edge(u, v) {
                continue;
            }
            if chosen.insert((u, v)) {
                out.push((u, v));
            }
        }
        out
    };
    let mut edges = g.edges();
    edges.extend(added);
    g.with_edges(&edges)
}

fn absent_cross_class_pairs(g: &Graph) -> usize {
    let mut class_sizes = vec![0usize; g.num_classes()];
    for &l in g.labels() {
        class_sizes[l] += 1;
    }
    let total: usize = class_sizes.iter().sum();
    let same: usize = class_sizes.iter().map(|&c| c * c.saturating_sub(1) / 2).sum();
    let cross_pairs = total * total.saturating_sub(1) / 2 - same;
    let cross_edges = g
        .edges()
        .into_iter()
        .filter(|&(u, v)| g.label(u) != g.label(v))
        .count();
    cross_pairs - cross_edges
}

/// Replaces `round(rate·n·D)` uniformly chosen feature entries.
pub fn corrupt_features(g: &Graph, spec: &NoiseSpec) -> Result<Graph> {
    spec.validate()?;
    let total = g.num_nodes() * g.feature_dim();
    let count = ((spec.feature_corrupt_rate * total as f64).round() as usize).min(total);
    if count == 0 {
        return Ok(g.clone());
    }
    let mut rng = seed::child_rng(spec.seed, seed::streams::NOISE + 100);
    let mut picks = index::sample(&mut rng, total, count).into_vec();
    picks.sort_unstable();
    let mut features = g.features().clone();
    let data = features.data_mut();
    for i in picks {
        data[i] = match spec.corruption {
            CorruptionMode::Zero => 0.0,
            CorruptionMode::Randomize => rng.sample(StandardNormal),
        };
    }
    g.with_features(features)
}
