//! Modeled graph construction: adjacency, node and edge features, the
//! master node, and training-time splitting into padded sub-expressions.

mod frpt;
pub mod los;

pub use frpt::{downsample_indices, frpt_features, DIRECTIONS};
pub use los::{convex_hull, line_of_sight, Hull};

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ink_io::{preprocess, InkExpression, ResampledStroke};
use crate::label_graph::{Eslg, STAR_CLASS};

/// Dense square boolean matrix, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjacency {
    n: usize,
    data: Vec<bool>,
}

impl Adjacency {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            data: vec![false; n * n],
        }
    }

    /// All off-diagonal entries set.
    pub fn full(n: usize) -> Self {
        let mut a = Self::new(n);
        for i in 0..n {
            for j in 0..n {
                a.data[i * n + j] = i != j;
            }
        }
        a
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Graph("adjacency rows must form a square matrix".into()));
        }
        Ok(Self {
            n,
            data: rows.concat(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.data[i * self.n + j] = v;
    }

    pub fn set_sym(&mut self, i: usize, j: usize, v: bool) {
        self.set(i, j, v);
        self.set(j, i, v);
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn edge_count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Whether every node reaches every other one.
    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..self.n {
                if self.get(i, j) && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Links consecutive writing-order strokes in both directions.
pub fn add_temporal_edges(adj: &Adjacency) -> Adjacency {
    let mut out = adj.clone();
    for i in 1..adj.n() {
        out.set_sym(i - 1, i, true);
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    /// Line of sight only.
    Los,
    /// Line of sight plus temporal neighbours.
    #[default]
    LosTemporal,
    /// Every pair connected (ablation).
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub d_n: usize,
    pub d_e: usize,
    pub n_max: usize,
    /// Add a master node (global modeling).
    pub global: bool,
    pub connectivity: Connectivity,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            d_n: 150,
            d_e: 10,
            n_max: 16,
            global: true,
            connectivity: Connectivity::LosTemporal,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_n < 2 || self.d_e < 1 || self.n_max < 2 {
            return Err(Error::Config(format!(
                "need d_n >= 2, d_e >= 1, n_max >= 2 (got {}, {}, {})",
                self.d_n, self.d_e, self.n_max
            )));
        }
        if self.d_e > self.d_n {
            return Err(Error::Config(format!("d_e {} exceeds d_n {}", self.d_e, self.d_n)));
        }
        Ok(())
    }

    pub fn edge_dim(&self) -> usize {
        5 * self.d_e
    }
}

/// G = (V, A, H, B) plus loss masks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeledGraph {
    pub n: usize,
    pub d_n: usize,
    pub d_e: usize,
    pub adjacency: Adjacency,
    /// n × 2 × d_n, row-major.
    pub node_features: Vec<f32>,
    /// n × n × 5·d_e, row-major.
    pub edge_features: Vec<f32>,
    pub has_master: bool,
    pub node_mask: Vec<bool>,
    /// n × n, row-major.
    pub edge_mask: Vec<bool>,
}

impl ModeledGraph {
    pub fn node_dim(&self) -> usize {
        2 * self.d_n
    }

    pub fn edge_dim(&self) -> usize {
        5 * self.d_e
    }

    /// Number of stroke nodes (excluding the master).
    pub fn strokes(&self) -> usize {
        self.n - usize::from(self.has_master)
    }

    /// Offset of stroke 0 within node indices.
    pub fn offset(&self) -> usize {
        usize::from(self.has_master)
    }

    pub fn node_feature(&self, i: usize) -> &[f32] {
        let w = self.node_dim();
        &self.node_features[i * w..(i + 1) * w]
    }

    pub fn edge_feature(&self, i: usize, j: usize) -> &[f32] {
        let w = self.edge_dim();
        let k = i * self.n + j;
        &self.edge_features[k * w..(k + 1) * w]
    }

    /// Element-wise sum of all node feature rows.
    pub fn feature_sum(&self) -> Vec<f32> {
        let w = self.node_dim();
        let mut sum = vec![0f32; w];
        for i in 0..self.n {
            for (s, v) in sum.iter_mut().zip(self.node_feature(i)) {
                *s += v;
            }
        }
        sum
    }

    /// Applies the same relabeling to nodes, adjacency, features and masks:
    /// new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n;
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..n).collect::<Vec<_>>() {
            return Err(Error::Graph("not a permutation".into()));
        }
        let (wn, we) = (self.node_dim(), self.edge_dim());
        let mut g = self.clone();
        for (k, &p) in perm.iter().enumerate() {
            g.node_features[k * wn..(k + 1) * wn].copy_from_slice(self.node_feature(p));
            g.node_mask[k] = self.node_mask[p];
            for (l, &q) in perm.iter().enumerate() {
                g.adjacency.set(k, l, self.adjacency.get(p, q));
                g.edge_mask[k * n + l] = self.edge_mask[p * n + q];
                let dst = (k * n + l) * we;
                g.edge_features[dst..dst + we].copy_from_slice(self.edge_feature(p, q));
            }
        }
        Ok(g)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let blob = |v: &[f32]| {
            let mut bytes = Vec::with_capacity(4 * v.len());
            for x in v {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
            base64::engine::general_purpose::STANDARD.encode(bytes)
        };
        let bits = |v: &[bool]| v.iter().map(|&b| u8::from(b)).collect::<Vec<_>>();
        serde_json::json!({
            "n": self.n,
            "has_master": self.has_master,
            "adjacency": bits(self.adjacency.as_slice()),
            "node_shape": [self.n, 2, self.d_n],
            "edge_shape": [self.n, self.n, self.edge_dim()],
            "node_features": blob(&self.node_features),
            "edge_features": blob(&self.edge_features),
            "node_mask": bits(&self.node_mask),
            "edge_mask": bits(&self.edge_mask),
        })
    }
}

/// Adjacency for already preprocessed strokes under the given connectivity.
pub fn build_adjacency(strokes: &[ResampledStroke], connectivity: Connectivity) -> Adjacency {
    match connectivity {
        Connectivity::Los => line_of_sight(strokes),
        Connectivity::LosTemporal => add_temporal_edges(&line_of_sight(strokes)),
        Connectivity::Full => Adjacency::full(strokes.len()),
    }
}

/// Assembles the local graph from preprocessed strokes.
pub fn graph_from_strokes(strokes: &[ResampledStroke], cfg: &GraphConfig) -> Result<ModeledGraph> {
    cfg.validate()?;
    let n = strokes.len();
    if n == 0 {
        return Err(Error::Graph("expression has no strokes".into()));
    }
    if let Some(s) = strokes.iter().find(|s| s.len() != cfg.d_n) {
        return Err(Error::Graph(format!("stroke has {} samples, expected {}", s.len(), cfg.d_n)));
    }
    let adjacency = build_adjacency(strokes, cfg.connectivity);
    let mut node_features = Vec::with_capacity(n * 2 * cfg.d_n);
    for s in strokes {
        node_features.extend(s.xs.iter().map(|&v| v as f32));
        node_features.extend(s.ys.iter().map(|&v| v as f32));
    }
    let we = cfg.edge_dim();
    let mut edge_features = vec![0f32; n * n * we];
    for i in 0..n {
        for j in 0..n {
            if adjacency.get(i, j) {
                let f = frpt_features(&strokes[i], &strokes[j], cfg.d_e);
                let dst = (i * n + j) * we;
                for (d, v) in edge_features[dst..dst + we].iter_mut().zip(f) {
                    *d = v as f32;
                }
            }
        }
    }
    Ok(ModeledGraph {
        n,
        d_n: cfg.d_n,
        d_e: cfg.d_e,
        adjacency,
        node_features,
        edge_features,
        has_master: false,
        node_mask: vec![true; n],
        edge_mask: vec![true; n * n],
    })
}

/// Preprocesses the expression and builds its local graph.
pub fn build_local_graph(expr: &InkExpression, cfg: &GraphConfig) -> Result<ModeledGraph> {
    cfg.validate()?;
    graph_from_strokes(&preprocess(expr, cfg.d_n)?, cfg)
}

/// Local graph, plus the master node when `cfg.global` is set.
pub fn build_graph(expr: &InkExpression, cfg: &GraphConfig) -> Result<ModeledGraph> {
    let local = build_local_graph(expr, cfg)?;
    if cfg.global {
        augment_global(&local)
    } else {
        Ok(local)
    }
}

/// Prepends a master node whose feature is the sum of all node features.
pub fn augment_global(graph: &ModeledGraph) -> Result<ModeledGraph> {
    augment_global_with(graph, &graph.feature_sum())
}

/// Prepends a master node with the given feature, connected to every node
/// through zero edge features. The master is excluded from the loss.
pub fn augment_global_with(graph: &ModeledGraph, master: &[f32]) -> Result<ModeledGraph> {
    if graph.has_master {
        return Err(Error::Graph("graph already has a master node".into()));
    }
    if master.len() != graph.node_dim() {
        return Err(Error::Graph(format!(
            "master feature has {} values, expected {}",
            master.len(),
            graph.node_dim()
        )));
    }
    let (n, m) = (graph.n, graph.n + 1);
    let we = graph.edge_dim();
    let mut adjacency = Adjacency::new(m);
    let mut edge_mask = vec![false; m * m];
    let mut edge_features = vec![0f32; m * m * we];
    for i in 0..m {
        for j in 0..m {
            if i == 0 || j == 0 {
                adjacency.set(i, j, i != j);
                continue;
            }
            let (a, b) = (i - 1, j - 1);
            adjacency.set(i, j, graph.adjacency.get(a, b));
            edge_mask[i * m + j] = graph.edge_mask[a * n + b];
            let dst = (i * m + j) * we;
            edge_features[dst..dst + we].copy_from_slice(graph.edge_feature(a, b));
        }
    }
    let mut node_features = master.to_vec();
    node_features.extend_from_slice(&graph.node_features);
    let mut node_mask = vec![false];
    node_mask.extend_from_slice(&graph.node_mask);
    Ok(ModeledGraph {
        n: m,
        d_n: graph.d_n,
        d_e: graph.d_e,
        adjacency,
        node_features,
        edge_features,
        has_master: true,
        node_mask,
        edge_mask,
    })
}

/// Cuts a local graph into consecutive writing-order chunks of at most
/// `n_max` strokes, each padded to exactly `n_max` with blank strokes.
///
/// Padding, and any stroke whose '*' partner lies in another chunk, is masked
/// out along with its incident edges. With `global`, each chunk gets its own
/// master node summing the chunk's features.
pub fn split_subexpressions(
    graph: &ModeledGraph,
    eslg: &Eslg,
    n_max: usize,
    global: bool,
) -> Result<Vec<(ModeledGraph, Eslg)>> {
    if graph.has_master {
        return Err(Error::Graph("split expects a local graph".into()));
    }
    if n_max < 2 {
        return Err(Error::Graph(format!("n_max must be at least 2, got {n_max}")));
    }
    if eslg.n != graph.n {
        return Err(Error::Graph(format!(
            "labels cover {} strokes, graph has {}",
            eslg.n, graph.n
        )));
    }
    let n = graph.n;
    let (wn, we) = (graph.node_dim(), graph.edge_dim());
    let chunk_of = |i: usize| i / n_max;
    // strokes whose symbol continues in another chunk
    let mut broken = vec![false; n];
    for (i, j) in eslg.support() {
        if eslg.edge_label(i, j) == STAR_CLASS && chunk_of(i) != chunk_of(j) {
            broken[i] = true;
            broken[j] = true;
        }
    }
    let mut out = Vec::new();
    for start in (0..n).step_by(n_max) {
        let len = n_max.min(n - start);
        let mut adjacency = Adjacency::new(n_max);
        let mut node_features = vec![0f32; n_max * wn];
        let mut edge_features = vec![0f32; n_max * n_max * we];
        let mut node_mask = vec![false; n_max];
        let mut edge_mask = vec![false; n_max * n_max];
        let mut node_labels = vec![0; n_max];
        let mut directed = vec![false; n_max * n_max];
        let mut edge_labels = vec![crate::label_graph::NOE_CLASS; n_max * n_max];
        for a in 0..len {
            let i = start + a;
            node_features[a * wn..(a + 1) * wn].copy_from_slice(graph.node_feature(i));
            node_mask[a] = graph.node_mask[i] && !broken[i];
            node_labels[a] = eslg.node_labels[i];
            for b in 0..len {
                let j = start + b;
                adjacency.set(a, b, graph.adjacency.get(i, j));
                let dst = (a * n_max + b) * we;
                edge_features[dst..dst + we].copy_from_slice(graph.edge_feature(i, j));
                edge_mask[a * n_max + b] =
                    graph.edge_mask[i * n + j] && !broken[i] && !broken[j];
                directed[a * n_max + b] = eslg.is_directed(i, j);
                edge_labels[a * n_max + b] = eslg.edge_label(i, j);
            }
        }
        let chunk = ModeledGraph {
            n: n_max,
            d_n: graph.d_n,
            d_e: graph.d_e,
            adjacency,
            node_features,
            edge_features,
            has_master: false,
            node_mask,
            edge_mask,
        };
        let chunk = if global {
            augment_global(&chunk)?
        } else {
            chunk
        };
        let labels = Eslg {
            n: n_max,
            node_labels,
            directed,
            edge_labels,
        };
        out.push((chunk, labels));
    }
    Ok(out)
}
