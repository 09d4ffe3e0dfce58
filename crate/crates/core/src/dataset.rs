//! Dataset directories: `graph.tsv`, `features.tsv`, `labels.tsv`, `split.tsv`.
//!
//! All files are UTF-8, whitespace separated, with `#` comments and blank
//! lines ignored. Line `i` of the per-node files describes node `i`; the node
//! count is the number of feature rows.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::graph::Graph;
use crate::matrix::Matrix;

pub const GRAPH_FILE: &str = "graph.tsv";
pub const FEATURES_FILE: &str = "features.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const SPLIT_FILE: &str = "split.tsv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unlabeled,
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unlabeled" => Ok(Split::Unlabeled),
            other => Err(format!("unknown split tag {other:?}")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unlabeled => "unlabeled",
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LoadOptions {
    /// Scale each feature row to unit L1 norm.
    pub normalize_features: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            normalize_features: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DatasetBundle {
    pub graph: Graph,
    pub features: Matrix,
    /// Class id per node, `None` when unlabeled.
    pub labels: Vec<Option<usize>>,
    pub split: Vec<Split>,
    pub num_classes: usize,
    /// Edge lines read from `graph.tsv`, before symmetrization and dedup.
    pub raw_edge_lines: usize,
}

impl DatasetBundle {
    pub fn new(
        graph: Graph,
        features: Matrix,
        labels: Vec<Option<usize>>,
        split: Vec<Split>,
    ) -> Result<Self> {
        let n = graph.num_nodes();
        if features.rows() != n || labels.len() != n || split.len() != n {
            return Err(FlowError::shape(format!(
                "graph has {n} nodes but features/labels/split have {}/{}/{} rows",
                features.rows(),
                labels.len(),
                split.len()
            )));
        }
        for (v, (l, s)) in labels.iter().zip(&split).enumerate() {
            if l.is_none() && *s != Split::Unlabeled {
                return Err(FlowError::arg(format!(
                    "node {v} is in the {s} split but has no label"
                )));
            }
        }
        let num_classes = labels.iter().flatten().max().map_or(0, |m| m + 1);
        let raw_edge_lines = graph.num_edges();
        Ok(DatasetBundle {
            graph,
            features,
            labels,
            split,
            num_classes,
            raw_edge_lines,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn nodes_in(&self, split: Split) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&v| self.split[v] == split)
            .collect()
    }

    pub fn split_count(&self, split: Split) -> usize {
        self.split.iter().filter(|&&s| s == split).count()
    }
}

fn read(dir: &Path, name: &str) -> Result<(PathBuf, String)> {
    let path = dir.join(name);
    match fs::read_to_string(&path) {
        Ok(text) => Ok((path, text)),
        Err(e) => Err(FlowError::Format {
            path,
            message: e.to_string(),
        }),
    }
}

/// Non-comment, non-blank lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then_some((i + 1, line))
    })
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> FlowError {
    FlowError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn load_dataset(dir: &Path, opts: &LoadOptions) -> Result<DatasetBundle> {
    let (fpath, ftext) = read(dir, FEATURES_FILE)?;
    let mut rows = Vec::new();
    for (line_no, line) in data_lines(&ftext) {
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| parse_err(&fpath, line_no, format!("non-numeric feature {tok:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            let first: &Vec<f64> = first;
            if first.len() != row.len() {
                return Err(parse_err(
                    &fpath,
                    line_no,
                    format!("expected {} features, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    let mut features = Matrix::from_rows(&rows)?;
    drop(rows);
    if opts.normalize_features {
        features.normalize_rows_l1();
    }

    let (gpath, gtext) = read(dir, GRAPH_FILE)?;
    let mut edges = Vec::new();
    for (line_no, line) in data_lines(&gtext) {
        let mut toks = line.split_whitespace();
        let (Some(a), Some(b), None) = (toks.next(), toks.next(), toks.next()) else {
            return Err(parse_err(&gpath, line_no, "expected two node ids"));
        };
        let parse = |t: &str| {
            t.parse::<usize>()
                .map_err(|_| parse_err(&gpath, line_no, format!("bad node id {t:?}")))
        };
        edges.push((parse(a)?, parse(b)?));
    }
    let raw_edge_lines = edges.len();
    let graph = Graph::from_edges(n, edges)?;

    let (lpath, ltext) = read(dir, LABELS_FILE)?;
    let mut labels = Vec::with_capacity(n);
    for (line_no, line) in data_lines(&ltext) {
        let label: i64 = line
            .parse()
            .map_err(|_| parse_err(&lpath, line_no, format!("bad label {line:?}")))?;
        labels.push(match label {
            -1 => None,
            l if l >= 0 => Some(l as usize),
            l => return Err(parse_err(&lpath, line_no, format!("negative label {l}"))),
        });
    }
    if labels.len() != n {
        return Err(FlowError::Format {
            path: lpath,
            message: format!("{} labels for {n} nodes", labels.len()),
        });
    }

    let (spath, stext) = read(dir, SPLIT_FILE)?;
    let mut split = Vec::with_capacity(n);
    for (line_no, line) in data_lines(&stext) {
        split.push(line.parse::<Split>().map_err(|m| parse_err(&spath, line_no, m))?);
    }
    if split.len() != n {
        return Err(FlowError::Format {
            path: spath,
            message: format!("{} split tags for {n} nodes", split.len()),
        });
    }

    let mut bundle = DatasetBundle::new(graph, features, labels, split).map_err(|e| match e {
        FlowError::Argument(message) => FlowError::Format {
            path: dir.to_path_buf(),
            message,
        },
        other => other,
    })?;
    bundle.raw_edge_lines = raw_edge_lines;
    Ok(bundle)
}

/// Writes `bundle` in the directory format read by [`load_dataset`].
pub fn write_dataset(dir: &Path, bundle: &DatasetBundle) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut g = std::io::BufWriter::new(fs::File::create(dir.join(GRAPH_FILE))?);
    for (u, v) in bundle.graph.edges() {
        writeln!(g, "{u}\t{v}")?;
    }
    g.flush()?;

    let mut f = std::io::BufWriter::new(fs::File::create(dir.join(FEATURES_FILE))?);
    for i in 0..bundle.num_nodes() {
        let row: Vec<String> = bundle.features.row(i).iter().map(|x| format!("{x}")).collect();
        writeln!(f, "{}", row.join("\t"))?;
    }
    f.flush()?;

    let labels: String = bundle
        .labels
        .iter()
        .map(|l| l.map_or("-1".to_string(), |c| c.to_string()) + "\n")
        .collect();
    fs::write(dir.join(LABELS_FILE), labels)?;
    let split: String = bundle.split.iter().map(|s| format!("{s}\n")).collect();
    fs::write(dir.join(SPLIT_FILE), split)?;
    Ok(())
}

/// Parameters of the planted-partition generator used for demos and tests.
#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Expected same-class neighbors per node.
    pub intra_degree: f64,
    /// Expected other-class neighbors per node.
    pub inter_degree: f64,
    /// Active feature words per node.
    pub words_per_node: usize,
    /// Probability that a word is drawn from the node's class vocabulary
    /// rather than uniformly.
    pub topic_purity: f64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_nodes: 300,
            num_classes: 3,
            feature_dim: 60,
            intra_degree: 3.0,
            inter_degree: 0.6,
            words_per_node: 6,
            topic_purity: 0.5,
            train: 120,
            val: 60,
            test: 100,
            seed: 0,
        }
    }
}

/// Citation-style planted partition: class-biased edges and sparse binary
/// features drawn partly from per-class vocabularies. Nodes are assigned to
/// classes round-robin and to splits in id order.
pub fn synthetic_citation(cfg: &SyntheticConfig) -> Result<DatasetBundle> {
    let n = cfg.num_nodes;
    let c = cfg.num_classes.max(1);
    if cfg.train + cfg.val + cfg.test > n {
        return Err(FlowError::arg("split sizes exceed node count"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let class_of = |v: usize| v % c;
    let members = |k: usize| (k..n).step_by(c).collect::<Vec<_>>();
    let by_class: Vec<Vec<usize>> = (0..c).map(members).collect();

    let mut edges = Vec::new();
    for v in 0..n {
        let own = &by_class[class_of(v)];
        let intra = poissonish(&mut rng, cfg.intra_degree / 2.0);
        for _ in 0..intra {
            edges.push((v, own[rng.gen_range(0..own.len())]));
        }
        let inter = poissonish(&mut rng, cfg.inter_degree / 2.0);
        for _ in 0..inter {
            edges.push((v, rng.gen_range(0..n)));
        }
    }
    let graph = Graph::from_edges(n, edges)?;

    let vocab = (cfg.feature_dim / c).max(1);
    let mut features = Matrix::zeros(n, cfg.feature_dim);
    for v in 0..n {
        for _ in 0..cfg.words_per_node {
            let w = if rng.gen_bool(cfg.topic_purity) {
                (class_of(v) * vocab + rng.gen_range(0..vocab)) % cfg.feature_dim
            } else {
                rng.gen_range(0..cfg.feature_dim)
            };
            features[(v, w)] = 1.0;
        }
    }
    features.normalize_rows_l1();

    let labels = (0..n).map(|v| Some(class_of(v))).collect();
    let split = (0..n)
        .map(|v| {
            if v < cfg.train {
                Split::Train
            } else if v < cfg.train + cfg.val {
                Split::Val
            } else if v < cfg.train + cfg.val + cfg.test {
                Split::Test
            } else {
                Split::Unlabeled
            }
        })
        .collect();
    DatasetBundle::new(graph, features, labels, split)
}

/// Small-mean count sampler: sum of Bernoulli trials with the given mean.
fn poissonish<R: Rng>(rng: &mut R, mean: f64) -> usize {
    let trials = (mean.ceil() as usize).max(1) * 4;
    let p = (mean / trials as f64).clamp(0.0, 1.0);
    (0..trials).filter(|_| rng.gen_bool(p)).count()
}
