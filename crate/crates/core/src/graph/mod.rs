//! Attributed undirected graphs: construction, invariants, splits, synthetic
//! generation, noise injection and file formats.

mod generate;
mod io;
mod noise;

use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub use generate::{generate_planted_partition, PlantedPartition};
pub use io::{
    load_edge_list, load_graph, load_json, save_edge_list, save_json, to_json, GraphFormat, GraphJson,
    GraphSource, MasksJson,
};
pub(crate) use io::edge_list_text;
pub use noise::{corrupt_features, inject_edge_noise, CorruptionMode, NoiseSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Three disjoint node masks. Their union need not cover every node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Masks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl Masks {
    pub fn empty(num_nodes: usize) -> Self {
        Masks {
            train: vec![false; num_nodes],
            val: vec![false; num_nodes],
            test: vec![false; num_nodes],
        }
    }

    pub fn from_ids(num_nodes: usize, train: &[usize], val: &[usize], test: &[usize]) -> Result<Self> {
        let mut masks = Masks::empty(num_nodes);
        for (ids, mask) in [
            (train, &mut masks.train),
            (val, &mut masks.val),
            (test, &mut masks.test),
        ] {
            for &v in ids {
                if v >= num_nodes {
                    return Err(Error::InvalidNode { node: v, num_nodes });
                }
                mask[v] = true;
            }
        }
        masks.check(num_nodes)?;
        Ok(masks)
    }

    /// Per-class shuffle, then the leading `fractions[0]` of each class go to
    /// train and the next `fractions[1]` to validation; the rest is test.
    pub fn stratified<R: rand::Rng + ?Sized>(
        labels: &[usize],
        num_classes: usize,
        fractions: (f64, f64),
        rng: &mut R,
    ) -> Self {
        let mut masks = Masks::empty(labels.len());
        for class in 0..num_classes {
            let mut members: Vec<usize> = (0..labels.len()).filter(|&v| labels[v] == class).collect();
            members.shuffle(rng);
            let m = members.len() as f64;
            let n_train = (fractions.0 * m).round() as usize;
            let n_val = ((fractions.1 * m).round() as usize).min(members.len() - n_train);
            for (i, &v) in members.iter().enumerate() {
                if i < n_train {
                    masks.train[v] = true;
                } else if i < n_train + n_val {
                    masks.val[v] = true;
                } else {
                    masks.test[v] = true;
                }
            }
        }
        masks
    }

    /// Fixed-size random split, e.g. 1,208/500/1,000 for Cora.
    pub fn by_counts<R: rand::Rng + ?Sized>(
        num_nodes: usize,
        counts: (usize, usize, usize),
        rng: &mut R,
    ) -> Result<Self> {
        let (train, val, test) = counts;
        if train + val + test > num_nodes {
            return Err(Error::InvalidArgument(format!(
                "split {train}/{val}/{test} exceeds {num_nodes} nodes"
            )));
        }
        let mut order: Vec<usize> = (0..num_nodes).collect();
        order.shuffle(rng);
        Masks::from_ids(
            num_nodes,
            &order[..train],
            &order[train..train + val],
            &order[train + val..train + val + test],
        )
    }

    pub fn get(&self, split: Split) -> &[bool] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn ids(&self, split: Split) -> Vec<usize> {
        self.get(split)
            .iter()
            .enumerate()
            .filter_map(|(v, &m)| m.then_some(v))
            .collect()
    }

    fn check(&self, num_nodes: usize) -> Result<()> {
        if self.train.len() != num_nodes || self.val.len() != num_nodes || self.test.len() != num_nodes {
            return Err(Error::shape("split masks", num_nodes, self.train.len()));
        }
        for v in 0..num_nodes {
            let hits = self.train[v] as u8 + self.val[v] as u8 + self.test[v] as u8;
            if hits > 1 {
                return Err(Error::InvalidArgument(format!(
                    "node {v} appears in more than one split"
                )));
            }
        }
        Ok(())
    }
}

/// Immutable attributed graph with dense 0-based node ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    adjacency: Vec<Vec<usize>>,
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    masks: Masks,
}

impl Graph {
    /// Builds a graph from possibly directed, duplicated edges. Edges are
    /// symmetrized, self-loops dropped and neighbor lists sorted.
    pub fn new(
        edges: &[(usize, usize)],
        features: Matrix,
        labels: Vec<usize>,
        masks: Masks,
    ) -> Result<Self> {
        let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
        Graph::with_classes(edges, features, labels, num_classes, masks)
    }

    pub fn with_classes(
        edges: &[(usize, usize)],
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        masks: Masks,
    ) -> Result<Self> {
        let num_nodes = labels.len();
        if features.rows() != num_nodes {
            return Err(Error::shape("feature rows", num_nodes, features.rows()));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidLabel { label, num_classes });
        }
        masks.check(num_nodes)?;
        let mut adjacency = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            for id in [u, v] {
                if id >= num_nodes {
                    return Err(Error::DanglingNode { id, num_nodes });
                }
            }
            if u != v {
                adjacency[u].push(v);
                adjacency[v].push(u);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Graph {
            adjacency,
            features,
            labels,
            num_classes,
            masks,
        })
    }

    /// Graph with one-hot identity features, for inputs without attributes.
    pub fn featureless(edges: &[(usize, usize)], labels: Vec<usize>, masks: Masks) -> Result<Self> {
        let n = labels.len();
        let mut features = Matrix::zeros(n, n);
        for v in 0..n {
            features.set(v, v, 1.0);
        }
        Graph::new(edges, features, labels, masks)
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].binary_search(&v).is_ok()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature(&self, v: usize) -> &[f64] {
        self.features.row(v)
    }

    pub fn label(&self, v: usize) -> usize {
        self.labels[v]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn masks(&self) -> &Masks {
        &self.masks
    }

    pub fn nodes_in(&self, split: Split) -> Vec<usize> {
        self.masks.ids(split)
    }

    pub fn check_node(&self, v: usize) -> Result<()> {
        if v >= self.num_nodes() {
            return Err(Error::InvalidNode {
                node: v,
                num_nodes: self.num_nodes(),
            });
        }
        Ok(())
    }

    /// Undirected edges as `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for (u, list) in self.adjacency.iter().enumerate() {
            out.extend(list.iter().filter(|&&v| v > u).map(|&v| (u, v)));
        }
        out
    }

    /// Same nodes, features, labels and masks over a different edge set.
    pub fn with_edges(&self, edges: &[(usize, usize)]) -> Result<Self> {
        Graph::with_classes(
            edges,
            self.features.clone(),
            self.labels.clone(),
            self.num_classes,
            self.masks.clone(),
        )
    }

    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        if features.shape() != self.features.shape() {
            return Err(Error::shape(
                "replacement features",
                format!("{:?}", self.features.shape()),
                format!("{:?}", features.shape()),
            ));
        }
        let mut g = self.clone();
        g.features = features;
        Ok(g)
    }

    pub fn with_masks(&self, masks: Masks) -> Result<Self> {
        masks.check(self.num_nodes())?;
        let mut g = self.clone();
        g.masks = masks;
        Ok(g)
    }

    /// Verifies symmetry, absence of self-loops and sorted duplicate-free lists.
    pub fn check_invariants(&self) -> Result<()> {
        for (u, list) in self.adjacency.iter().enumerate() {
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "neighbor list of {u} is not strictly sorted"
                )));
            }
            for &v in list {
                if v == u {
                    return Err(Error::InvalidArgument(format!("self-loop at {u}")));
                }
                if !self.has_edge(v, u) {
                    return Err(Error::InvalidArgument(format!(
                        "edge {u}->{v} has no reverse"
                    )));
                }
            }
        }
        self.masks.check(self.num_nodes())
    }
}
