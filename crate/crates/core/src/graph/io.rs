use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Graph, Masks, Split};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphFormat {
    /// `src dst` edge list plus tab-separated feature rows and one label per line.
    EdgeList,
    Json,
}

impl FromStr for GraphFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edge-list" | "edgelist" | "edges" => Ok(GraphFormat::EdgeList),
            "json" => Ok(GraphFormat::Json),
            other => Err(Error::InvalidArgument(format!("unknown graph format `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub enum GraphSource {
    EdgeList {
        edges: PathBuf,
        /// Missing features mean one-hot identity features.
        features: Option<PathBuf>,
        labels: PathBuf,
    },
    Json(PathBuf),
}

/// On-disk JSON layout of a graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphJson {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<MasksJson>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MasksJson {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Loads a graph. Inputs without split information receive a stratified
/// 60/20/20 split drawn from `split_seed`.
pub fn load_graph(source: &GraphSource, split_seed: u64) -> Result<Graph> {
    match source {
        GraphSource::EdgeList {
            edges,
            features,
            labels,
        } => load_edge_list(edges, features.as_deref(), labels, split_seed),
        GraphSource::Json(path) => load_json(path, split_seed),
    }
}

pub fn load_edge_list(
    edges_path: &Path,
    features_path: Option<&Path>,
    labels_path: &Path,
    split_seed: u64,
) -> Result<Graph> {
    let labels = parse_labels(labels_path)?;
    let edges = parse_edges(edges_path)?;
    let masks = default_masks(&labels, split_seed);
    match features_path {
        Some(path) => {
            let features = parse_features(path)?;
            if features.rows() != labels.len() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: features.rows(),
                    message: format!(
                        "{} feature rows but {} labels",
                        features.rows(),
                        labels.len()
                    ),
                });
            }
            Graph::new(&edges, features, labels, masks)
        }
        None => Graph::featureless(&edges, labels, masks),
    }
}

pub fn load_json(path: &Path, split_seed: u64) -> Result<Graph> {
    let text = fs::read_to_string(path)?;
    let raw: GraphJson = serde_json::from_str(&text)?;
    graph_from_json(raw, split_seed)
}

fn graph_from_json(raw: GraphJson, split_seed: u64) -> Result<Graph> {
    if raw.labels.len() != raw.n {
        return Err(Error::shape("json labels", raw.n, raw.labels.len()));
    }
    let edges: Vec<(usize, usize)> = raw.edges.iter().map(|e| (e[0], e[1])).collect();
    let num_classes = raw
        .num_classes
        .unwrap_or_else(|| raw.labels.iter().max().map_or(0, |&m| m + 1));
    let masks = match &raw.masks {
        Some(m) => Masks::from_ids(raw.n, &m.train, &m.val, &m.test)?,
        None => default_masks(&raw.labels, split_seed),
    };
    let features = if raw.features.is_empty() && raw.n > 0 {
        let mut one_hot = Matrix::zeros(raw.n, raw.n);
        (0..raw.n).for_each(|v| one_hot.set(v, v, 1.0));
        one_hot
    } else if raw.features.len() != raw.n {
        return Err(Error::shape("json feature rows", raw.n, raw.features.len()));
    } else {
        Matrix::from_rows(&raw.features)?
    };
    Graph::with_classes(&edges, features, raw.labels, num_classes, masks)
}

pub fn to_json(g: &Graph) -> GraphJson {
    GraphJson {
        n: g.num_nodes(),
        edges: g.edges().into_iter().map(|(u, v)| [u, v]).collect(),
        features: (0..g.num_nodes()).map(|v| g.feature(v).to_vec()).collect(),
        labels: g.labels().to_vec(),
        num_classes: Some(g.num_classes()),
        masks: Some(MasksJson {
            train: g.nodes_in(Split::Train),
            val: g.nodes_in(Split::Val),
            test: g.nodes_in(Split::Test),
        }),
    }
}

pub fn save_json(g: &Graph, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string(&to_json(g))?)?;
    Ok(())
}

/// Writes the three text files of the edge-list format.
pub fn save_edge_list(g: &Graph, edges: &Path, features: &Path, labels: &Path) -> Result<()> {
    fs::write(edges, edge_list_text(&g.edges()))?;
    let mut text = String::new();
    for v in 0..g.num_nodes() {
        let row: Vec<String> = g.feature(v).iter().map(|x| x.to_string()).collect();
        text.push_str(&row.join("\t"));
        text.push('\n');
    }
    fs::write(features, text)?;
    let mut text = String::new();
    for &l in g.labels() {
        let _ = writeln!(text, "{l}");
    }
    fs::write(labels, text)?;
    Ok(())
}

pub(crate) fn edge_list_text(edges: &[(usize, usize)]) -> String {
    let mut text = String::new();
    for (u, v) in edges {
        let _ = writeln!(text, "{u} {v}");
    }
    text
}

fn default_masks(labels: &[usize], split_seed: u64) -> Masks {
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut rng = seed::child_rng(split_seed, seed::streams::SPLIT);
    Masks::stratified(labels, num_classes, (0.6, 0.2), &mut rng)
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = fs::read_to_string(path)?;
    let mut edges = Vec::new();
    for (line, content) in content_lines(&text) {
        let mut parts = content.split_whitespace();
        let mut id = || -> Result<usize> {
            let tok = parts
                .next()
                .ok_or_else(|| parse_err(path, line, "expected `src dst`"))?;
            tok.parse()
                .map_err(|_| parse_err(path, line, format!("bad node id `{tok}`")))
        };
        let (u, v) = (id()?, id()?);
        if parts.next().is_some() {
            return Err(parse_err(path, line, "trailing tokens after `src dst`"));
        }
        edges.push((u, v));
    }
    Ok(edges)
}

fn parse_features(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, content) in content_lines(&text) {
        let row = content
            .split('\t')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_err(path, line, format!("bad feature value `{tok}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::FeatureDimension {
                    row: rows.len(),
                    expected: first.len(),
                    found: row.len(),
                });
            }
        }
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}

fn parse_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    content_lines(&text)
        .map(|(line, tok)| {
            tok.parse()
                .map_err(|_| parse_err(path, line, format!("bad label `{tok}`")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_planted_partition, PlantedPartition};

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn edge_list_smallest_case() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "e.txt", "0 1\n");
        let f = write(dir.path(), "f.tsv", "1.0\n2.0\n");
        let l = write(dir.path(), "l.txt", "0\n1\n");
        let g = load_edge_list(&e, Some(&f), &l, 0).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
        assert_eq!(g.feature(1), &[2.0]);
    }

    #[test]
    fn dangling_parse_and_dimension_errors() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(dir.path(), "f.tsv", "1\t0\n0\t1\n1\t1\n");
        let l = write(dir.path(), "l.txt", "0\n1\n0\n");
        let dangling = write(dir.path(), "d.txt", "0 5\n");
        assert!(matches!(
            load_edge_list(&dangling, Some(&f), &l, 0),
            Err(Error::DanglingNode { id: 5, num_nodes: 3 })
        ));
        let garbage = write(dir.path(), "g.txt", "0 x\n");
        assert!(matches!(
            load_edge_list(&garbage, Some(&f), &l, 0),
            Err(Error::Parse { line: 1, .. })
        ));
        let ragged = write(dir.path(), "r.tsv", "1\t0\n0\n1\t1\n");
        let ok_edges = write(dir.path(), "ok.txt", "0 1\n");
        assert!(matches!(
            load_edge_list(&ok_edges, Some(&ragged), &l, 0),
            Err(Error::FeatureDimension { row: 1, expected: 2, found: 1 })
        ));
    }

    #[test]
    fn missing_features_fall_back_to_one_hot() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "e.txt", "# comment\n0 2\n");
        let l = write(dir.path(), "l.txt", "0\n0\n1\n");
        let g = load_edge_list(&e, None, &l, 0).unwrap();
        assert_eq!(g.feature_dim(), 3);
        assert_eq!(g.feature(2), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn json_and_edge_list_round_trips() {
        let g = generate_planted_partition(&PlantedPartition {
            n: 30,
            classes: 3,
            p_in: 0.4,
            p_out: 0.05,
            dim: 4,
            signal_strength: 2.0,
            seed: 1,
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let j = dir.path().join("g.json");
        save_json(&g, &j).unwrap();
        assert_eq!(load_json(&j, 99).unwrap(), g);

        let (e, f, l) = (
            dir.path().join("e"),
            dir.path().join("f"),
            dir.path().join("l"),
        );
        save_edge_list(&g, &e, &f, &l).unwrap();
        let back = load_edge_list(&e, Some(&f), &l, 0).unwrap();
        assert_eq!(back.edges(), g.edges());
        assert_eq!(back.features(), g.features());
        assert_eq!(back.labels(), g.labels());
    }

    #[test]
    fn json_without_masks_gets_default_split() {
        let text = r#"{"n":4,"edges":[[0,1],[2,3]],"features":[[1],[2],[3],[4]],"labels":[0,0,1,1]}"#;
        let raw: GraphJson = serde_json::from_str(text).unwrap();
        let g = graph_from_json(raw, 5).unwrap();
        assert_eq!(g.num_edges(), 2);
        let covered = (0..4)
            .filter(|&v| g.masks().train[v] || g.masks().val[v] || g.masks().test[v])
            .count();
        assert_eq!(covered, 4);
    }
}
