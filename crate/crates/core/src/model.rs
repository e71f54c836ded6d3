//! Edge-weighted graph attention network: stroke embedder, edge MLP, stacked
//! attention layers and per-stage readouts.

use std::collections::HashMap;

use egat_tensor::{Float, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_build::ModeledGraph;
use crate::label_graph::EDGE_CLASSES;

/// Value written into dense edge-logit exports outside the supervised support.
pub const IGNORE: f64 = f64::NAN;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub q_layers: usize,
    pub hidden: usize,
    pub node_classes: usize,
    pub edge_classes: usize,
    pub dropout: f64,
    pub aux: bool,
    pub concat: bool,
    pub residual: bool,
    /// Leaky-relu on attention logits before the softmax.
    pub leaky_attention: bool,
    pub attention_slope: f64,
    pub embed_channels: Vec<usize>,
    pub embed_kernel: usize,
    pub edge_hidden: usize,
    pub readout_hidden: usize,
    pub d_n: usize,
    pub d_e: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            q_layers: 5,
            hidden: 512,
            node_classes: 101,
            edge_classes: EDGE_CLASSES,
            dropout: 0.1,
            aux: true,
            concat: true,
            residual: true,
            leaky_attention: true,
            attention_slope: 0.2,
            embed_channels: vec![64, 128, 256],
            embed_kernel: 9,
            edge_hidden: 384,
            readout_hidden: 384,
            d_n: 150,
            d_e: 10,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.q_layers == 0 {
            return bad("q_layers must be positive".into());
        }
        if self.hidden < 2 || !self.hidden.is_multiple_of(2) {
            return bad(format!("hidden must be even and at least 2, got {}", self.hidden));
        }
        if self.node_classes < 1 || self.edge_classes < 1 {
            return bad("class counts must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.embed_channels.is_empty() || self.embed_channels.contains(&0) {
            return bad("embed_channels must be a non-empty list of positive widths".into());
        }
        if self.embed_kernel.is_multiple_of(2) {
            return bad(format!("embed_kernel must be odd, got {}", self.embed_kernel));
        }
        if self.edge_hidden == 0 || self.readout_hidden == 0 || self.d_n < 2 || self.d_e == 0 {
            return bad("edge_hidden, readout_hidden, d_n and d_e must be positive".into());
        }
        Ok(())
    }

    /// Stages that own a readout: 0 is the embedding, q the output of layer q.
    /// With aux, every stage up to Q; otherwise only the last layer.
    pub fn readout_stages(&self) -> Vec<usize> {
        if self.aux {
            (0..=self.q_layers).collect()
        } else {
            vec![self.q_layers]
        }
    }

    fn edge_dim(&self) -> usize {
        5 * self.d_e
    }
}

/// Parameter layout of a model. Parameters live in a separate
/// [`ParamStore`]; the model only knows where each one sits.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    index: HashMap<String, usize>,
}

/// (name, shape, fan_in, fan_out); fans of zero mean a zero-initialized bias.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, usize, usize)> {
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, fi: usize, fo: usize| out.push((name, shape, fi, fo));
    let k = cfg.embed_kernel;
    let mut cin = 2;
    for (b, &c) in cfg.embed_channels.iter().enumerate() {
        push(format!("embed.block{b}.dw"), vec![cin, 1, k], k, k);
        push(format!("embed.block{b}.pw"), vec![c, cin, 1], cin, c);
        push(format!("embed.block{b}.pw_b"), vec![c, 1], 0, 0);
        push(format!("embed.block{b}.proj"), vec![c, cin, 1], cin, c);
        cin = c;
    }
    let h = cfg.hidden;
    push("embed.out.w".into(), vec![cin, h], cin, h);
    push("embed.out.b".into(), vec![h], 0, 0);
    let (de, eh) = (cfg.edge_dim(), cfg.edge_hidden);
    push("edge.w1".into(), vec![de, eh], de, eh);
    push("edge.b1".into(), vec![eh], 0, 0);
    push("edge.w2".into(), vec![eh, h], eh, h);
    push("edge.b2".into(), vec![h], 0, 0);
    for q in 1..=cfg.q_layers {
        push(format!("layer{q}.wh"), vec![h, h], h, h);
        push(format!("layer{q}.wb"), vec![h, h], h, h);
        // one attention vector of length 3h, stored as its three slices
        for part in ["a_src", "a_edge", "a_dst"] {
            push(format!("layer{q}.{part}"), vec![h, 1], 3 * h, 1);
        }
    }
    let r = cfg.readout_hidden;
    for s in cfg.readout_stages() {
        for (kind, c) in [("node", cfg.node_classes), ("edge", cfg.edge_classes)] {
            push(format!("readout{s}.{kind}.w1"), vec![2 * h, r], 2 * h, r);
            push(format!("readout{s}.{kind}.b1"), vec![r], 0, 0);
            push(format!("readout{s}.{kind}.w2"), vec![r, c], r, c);
            push(format!("readout{s}.{kind}.b2"), vec![c], 0, 0);
        }
    }
    out
}

/// How a forward pass treats dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

/// Graphs of one size stacked along a leading batch axis.
#[derive(Clone, Debug)]
pub struct Batch {
    pub g: usize,
    pub n: usize,
    pub offset: usize,
    pub node_features: Vec<f32>,
    pub edge_features: Vec<f32>,
    pub adjacency: Vec<bool>,
    /// (graph, node) for every stroke node, in batch order.
    pub node_rows: Vec<(usize, usize)>,
    /// (graph, i, j) with i < j, A[i][j] = 1, both strokes.
    pub edge_rows: Vec<(usize, usize, usize)>,
}

impl Batch {
    pub fn new(graphs: &[&ModeledGraph]) -> Result<Self> {
        let first = graphs
            .first()
            .ok_or_else(|| Error::Model("empty batch".into()))?;
        let (n, master) = (first.n, first.has_master);
        let mut b = Batch {
            g: graphs.len(),
            n,
            offset: usize::from(master),
            node_features: Vec::new(),
            edge_features: Vec::new(),
            adjacency: Vec::new(),
            node_rows: Vec::new(),
            edge_rows: Vec::new(),
        };
        for (gi, g) in graphs.iter().enumerate() {
            if g.n != n || g.has_master != master || g.d_n != first.d_n || g.d_e != first.d_e {
                return Err(Error::Model("graphs in a batch must share size and layout".into()));
            }
            b.node_features.extend_from_slice(&g.node_features);
            b.edge_features.extend_from_slice(&g.edge_features);
            b.adjacency.extend_from_slice(g.adjacency.as_slice());
            for i in b.offset..n {
                b.node_rows.push((gi, i));
            }
            for i in b.offset..n {
                for j in i + 1..n {
                    if g.adjacency.get(i, j) {
                        b.edge_rows.push((gi, i, j));
                    }
                }
            }
        }
        Ok(b)
    }
}

pub struct StageLogits<'t, T: Float> {
    pub stage: usize,
    /// `[node_rows, C1]`
    pub nodes: Var<'t, T>,
    /// `[edge_rows, C2]`
    pub edges: Var<'t, T>,
}

pub struct Output<'t, T: Float> {
    /// In stage order; the last entry is the final readout.
    pub stages: Vec<StageLogits<'t, T>>,
    /// Final node features `[G, n, hidden]`.
    pub h: Var<'t, T>,
    /// Final edge features `[G, n, n, hidden]`.
    pub b: Var<'t, T>,
    /// Attention `[G, n, n]` of each layer.
    pub attention: Vec<Tensor<T>>,
}

impl<'t, T: Float> Output<'t, T> {
    pub fn last(&self) -> &StageLogits<'t, T> {
        self.stages.last().expect("at least one readout")
    }
}

/// Identical rows collapse to one; returns (unique rows, row -> unique index).
fn unique_rows(data: &[f32], width: usize) -> (Vec<f32>, Vec<usize>) {
    let rows = if width == 0 { 0 } else { data.len() / width };
    let mut seen: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut uniq = Vec::new();
    let mut index = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &data[r * width..(r + 1) * width];
        // +0.0 and -0.0 embed identically, so key them together
        let key: Vec<u32> = row.iter().map(|v| (v + 0.0).to_bits()).collect();
        let next = seen.len();
        let id = *seen.entry(key).or_insert_with(|| {
            uniq.extend_from_slice(row);
            next
        });
        index.push(id);
    }
    (uniq, index)
}

fn mix(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn to_t<T: Float>(v: &[f32]) -> Vec<T> {
    v.iter().map(|&x| T::of(f64::from(x))).collect()
}

impl Model {
    /// Fresh parameters: weights uniform in ±sqrt(6 / (fan_in + fan_out)),
    /// biases zero.
    pub fn init<T: Float>(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape, fi, fo) in layout(&config) {
            let len: usize = shape.iter().product();
            let data: Vec<T> = if fi + fo == 0 {
                vec![T::of(0.0); len]
            } else {
                let a = (6.0 / (fi + fo) as f64).sqrt();
                (0..len).map(|_| T::of(rng.gen_range(-a..a))).collect()
            };
            params.insert(name, Tensor::new(shape, data)?)?;
        }
        Self::for_params(config, &params)
    }

    /// Checks that `params` has exactly the layout `config` implies.
    pub fn for_params<T: Float>(config: ModelConfig, params: &ParamStore<T>) -> Result<(Self, ParamStore<T>)> {
        config.validate()?;
        let want = layout(&config);
        if want.len() != params.len() {
            return Err(Error::Model(format!(
                "config implies {} parameters, store has {}",
                want.len(),
                params.len()
            )));
        }
        let mut index = HashMap::new();
        for (name, shape, _, _) in want {
            let i = params
                .index_of(&name)
                .ok_or_else(|| Error::Model(format!("missing parameter {name}")))?;
            if params.tensors()[i].shape() != shape.as_slice() {
                return Err(Error::Model(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    params.tensors()[i].shape()
                )));
            }
            index.insert(name, i);
        }
        Ok((Self { config, index }, params.clone()))
    }

    fn p<'t, T: Float>(&self, params: &[Var<'t, T>], name: &str) -> Var<'t, T> {
        params[self.index[name]]
    }

    fn linear<'t, T: Float>(&self, params: &[Var<'t, T>], x: Var<'t, T>, prefix: &str, suffix: &str) -> Result<Var<'t, T>> {
        let w = self.p(params, &format!("{prefix}.w{suffix}"));
        let b = self.p(params, &format!("{prefix}.b{suffix}"));
        Ok(x.matmul(w)?.add(b)?)
    }

    /// Two-layer relu MLP under `prefix` (w1, b1, w2, b2) on `[m, in]` rows.
    fn mlp<'t, T: Float>(&self, params: &[Var<'t, T>], x: Var<'t, T>, prefix: &str) -> Result<Var<'t, T>> {
        let h = self.linear(params, x, prefix, "1")?.relu()?;
        self.linear(params, h, prefix, "2")
    }

    /// Stroke embeddings for `[m, 2, d_n]` input, `[m, hidden]` out.
    pub fn embed_nodes<'t, T: Float>(&self, params: &[Var<'t, T>], x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 3 || shape[1] != 2 || shape[2] != self.config.d_n {
            return Err(Error::Model(format!(
                "node features must be [m, 2, {}], got {shape:?}",
                self.config.d_n
            )));
        }
        let pad = self.config.embed_kernel / 2;
        let mut x = x;
        let mut cin = 2;
        for b in 0..self.config.embed_channels.len() {
            let p = |s: &str| self.p(params, &format!("embed.block{b}.{s}"));
            let dw = x.conv1d(p("dw"), 1, pad, cin)?;
            let y = dw.conv1d(p("pw"), 1, 0, 1)?.add(p("pw_b"))?.relu()?;
            x = y.add(x.conv1d(p("proj"), 1, 0, 1)?)?;
            cin = self.config.embed_channels[b];
        }
        self.linear(params, x.mean(2)?, "embed.out", "")
    }

    /// Shared edge MLP on `[m, 5 d_e]` rows, `[m, hidden]` out.
    pub fn embed_edges<'t, T: Float>(&self, params: &[Var<'t, T>], x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.config.edge_dim() {
            return Err(Error::Model(format!(
                "edge features must be [m, {}], got {shape:?}",
                self.config.edge_dim()
            )));
        }
        self.mlp(params, x, "edge")
    }

    /// One attention layer. `h` is `[G, n, H]`, `b` is `[G, n, n, H]`;
    /// returns updated features and the attention values `[G, n, n]`.
    #[allow(clippy::too_many_arguments)]
    pub fn layer<'t, T: Float>(
        &self,
        params: &[Var<'t, T>],
        q: usize,
        h: Var<'t, T>,
        b: Var<'t, T>,
        adjacency: &[bool],
        mode: Mode,
    ) -> Result<(Var<'t, T>, Var<'t, T>, Var<'t, T>)> {
        let tape = h.tape();
        let (g, n) = (h.shape()[0], h.shape()[1]);
        let hid = self.config.hidden;
        if b.shape() != [g, n, n, hid] || h.shape() != [g, n, hid] || adjacency.len() != g * n * n {
            return Err(Error::Model(format!(
                "layer input shapes {:?} / {:?} do not match {g} graphs of {n} nodes",
                h.shape(),
                b.shape()
            )));
        }
        let p = |s: &str| self.p(params, &format!("layer{q}.{s}"));
        let hw = h.matmul(p("wh"))?;
        let bw = b.reshape(&[g * n * n, hid])?.matmul(p("wb"))?;
        let s_edge = bw.matmul(p("a_edge"))?.reshape(&[g, n, n])?;
        let bw = bw.reshape(&[g, n, n, hid])?;
        let s_src = hw.matmul(p("a_src"))?;
        let s_dst = hw.matmul(p("a_dst"))?.reshape(&[g, 1, n])?;
        let mut e = s_edge.add(s_src)?.add(s_dst)?;
        if self.config.leaky_attention {
            e = e.leaky_relu(T::of(self.config.attention_slope))?;
        }
        let alpha = e.masked_softmax(adjacency, 2)?;
        let h_msg = alpha.matmul(hw)?;
        let b_msg = alpha.reshape(&[g, n, n, 1])?.mul(bw)?;
        let (mut node, mut edge) = if self.config.concat {
            let node = Var::concat(&[h_msg, b_msg.sum(2)?], 2)?.avg_pool1d(2, 2)?;
            let zeros = tape.constant(Tensor::zeros(&[g, n, n, hid]));
            let hi = h_msg.reshape(&[g, n, 1, hid])?.add(zeros)?;
            let hj = h_msg.reshape(&[g, 1, n, hid])?.add(zeros)?;
            let edge = Var::concat(&[hi, b_msg, hj], 3)?.avg_pool1d(3, 3)?;
            (node, edge)
        } else {
            (h_msg, b_msg)
        };
        let amask: Vec<T> = adjacency.iter().map(|&a| T::of(if a { 1.0 } else { 0.0 })).collect();
        edge = edge.mul(tape.constant(Tensor::new(vec![g, n, n, 1], amask)?))?;
        if self.config.residual {
            node = node.add(h)?;
            edge = edge.add(b)?;
        }
        if let Mode::Train { seed } = mode {
            let rate = self.config.dropout;
            node = node.dropout(rate, mix(seed, 2 * q as u64))?;
            edge = edge.dropout(rate, mix(seed, 2 * q as u64 + 1))?;
        }
        Ok((node, edge, alpha))
    }

    fn readout<'t, T: Float>(
        &self,
        params: &[Var<'t, T>],
        stage: usize,
        feats: (Var<'t, T>, Var<'t, T>),
        base: (Var<'t, T>, Var<'t, T>),
        rows: &(Vec<usize>, Vec<usize>),
    ) -> Result<StageLogits<'t, T>> {
        let hid = self.config.hidden;
        let flat = |v: Var<'t, T>| {
            let s = v.shape();
            let m = s[..s.len() - 1].iter().product();
            v.reshape(&[m, hid])
        };
        let nodes = Var::concat(&[flat(feats.0)?.gather_rows(&rows.0)?, flat(base.0)?.gather_rows(&rows.0)?], 1)?;
        let nodes = self.mlp(params, nodes, &format!("readout{stage}.node"))?;
        let edges = if rows.1.is_empty() {
            feats.1.tape().constant(Tensor::zeros(&[0, self.config.edge_classes]))
        } else {
            let x = Var::concat(&[flat(feats.1)?.gather_rows(&rows.1)?, flat(base.1)?.gather_rows(&rows.1)?], 1)?;
            self.mlp(params, x, &format!("readout{stage}.edge"))?
        };
        Ok(StageLogits { stage, nodes, edges })
    }

    /// Full forward pass. `params` are the store's tensors bound to `tape`,
    /// in store order.
    pub fn forward<'t, T: Float>(
        &self,
        tape: &'t Tape<T>,
        params: &[Var<'t, T>],
        batch: &Batch,
        mode: Mode,
    ) -> Result<Output<'t, T>> {
        let cfg = &self.config;
        if params.len() != self.index.len() {
            return Err(Error::Model(format!(
                "expected {} parameters, got {}",
                self.index.len(),
                params.len()
            )));
        }
        let (g, n, hid) = (batch.g, batch.n, cfg.hidden);
        let (wn, we) = (2 * cfg.d_n, cfg.edge_dim());
        if batch.node_features.len() != g * n * wn || batch.edge_features.len() != g * n * n * we {
            return Err(Error::Model(format!(
                "batch features do not match d_n {} / d_e {}",
                cfg.d_n, cfg.d_e
            )));
        }

        let (uniq, idx) = unique_rows(&batch.node_features, wn);
        let strokes = tape.constant(Tensor::new(vec![uniq.len() / wn, 2, cfg.d_n], to_t(&uniq))?);
        let h0 = self.embed_nodes(params, strokes)?.gather_rows(&idx)?.reshape(&[g, n, hid])?;
        let (uniq, idx) = unique_rows(&batch.edge_features, we);
        let slots = tape.constant(Tensor::new(vec![uniq.len() / we, we], to_t(&uniq))?);
        let b0 = self.embed_edges(params, slots)?.gather_rows(&idx)?.reshape(&[g, n, n, hid])?;

        let node_rows: Vec<usize> = batch.node_rows.iter().map(|&(gi, i)| gi * n + i).collect();
        let edge_rows: Vec<usize> = batch.edge_rows.iter().map(|&(gi, i, j)| (gi * n + i) * n + j).collect();
        let rows = (node_rows, edge_rows);
        let wants = cfg.readout_stages();

        let mut stages = Vec::new();
        if wants.contains(&0) {
            stages.push(self.readout(params, 0, (h0, b0), (h0, b0), &rows)?);
        }
        let (mut h, mut b) = (h0, b0);
        let mut attention = Vec::new();
        for q in 1..=cfg.q_layers {
            let (h2, b2, alpha) = self.layer(params, q, h, b, &batch.adjacency, mode)?;
            attention.push(alpha.value());
            h = h2;
            b = b2;
            if wants.contains(&q) {
                stages.push(self.readout(params, q, (h, b), (h0, b0), &rows)?);
            }
        }
        Ok(Output { stages, h, b, attention })
    }

    /// Eval-mode forward on one graph; returns dense final logits:
    /// node `[n, C1]` (master row filled with the ignore value) and edge
    /// `[n, n, C2]` filled only on the supervised support.
    pub fn predict<T: Float>(&self, params: &ParamStore<T>, graph: &ModeledGraph) -> Result<Prediction> {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let batch = Batch::new(&[graph])?;
        let out = self.forward(&tape, bound.vars(), &batch, Mode::Eval)?;
        let (c1, c2, n) = (self.config.node_classes, self.config.edge_classes, graph.n);
        let last = out.last();
        let mut nodes = vec![IGNORE; n * c1];
        let nd = last.nodes.data();
        for (r, &(_, i)) in batch.node_rows.iter().enumerate() {
            for c in 0..c1 {
                nodes[i * c1 + c] = nd[r * c1 + c].as_f64();
            }
        }
        let mut edges = vec![IGNORE; n * n * c2];
        let ed = last.edges.data();
        for (r, &(_, i, j)) in batch.edge_rows.iter().enumerate() {
            for c in 0..c2 {
                edges[(i * n + j) * c2 + c] = ed[r * c2 + c].as_f64();
            }
        }
        let attention = out.attention.last().map(|a| a.data().iter().map(|v| v.as_f64()).collect()).unwrap_or_default();
        Ok(Prediction { n, offset: graph.offset(), node_classes: c1, edge_classes: c2, nodes, edges, attention })
    }
}

/// Dense per-graph outputs of [`Model::predict`].
#[derive(Clone, Debug)]
pub struct Prediction {
    pub n: usize,
    pub offset: usize,
    pub node_classes: usize,
    pub edge_classes: usize,
    pub nodes: Vec<f64>,
    pub edges: Vec<f64>,
    /// Last-layer attention, row-major `n × n`.
    pub attention: Vec<f64>,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = c;
        }
    }
    best
}

impl Prediction {
    /// Predicted class of each stroke node (master dropped).
    pub fn node_labels(&self) -> Vec<usize> {
        (self.offset..self.n)
            .map(|i| argmax(&self.nodes[i * self.node_classes..(i + 1) * self.node_classes]))
            .collect()
    }

    /// Stroke-indexed `m × m` predicted edge classes; entries off the
    /// support hold `fill`.
    pub fn edge_labels(&self, fill: usize) -> Vec<usize> {
        let (n, o, c) = (self.n, self.offset, self.edge_classes);
        let m = n - o;
        let mut out = vec![fill; m * m];
        for i in 0..m {
            for j in 0..m {
                let k = ((i + o) * n + j + o) * c;
                let row = &self.edges[k..k + c];
                if !row[0].is_nan() {
                    out[i * m + j] = argmax(row);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            q_layers: 2,
            hidden: 8,
            node_classes: 5,
            edge_classes: 4,
            embed_channels: vec![4, 6],
            edge_hidden: 6,
            readout_hidden: 6,
            d_n: 12,
            d_e: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn defaults_give_six_readout_stages() {
        let c = ModelConfig::default();
        assert_eq!(c.readout_stages().len(), 6);
        assert_eq!((c.hidden, c.node_classes, c.edge_classes), (512, 101, 14));
    }

    #[test]
    fn attention_vector_spans_three_hidden_widths() {
        let (_, p) = Model::init::<f64>(tiny(), 0).unwrap();
        let len: usize = ["a_src", "a_edge", "a_dst"]
            .iter()
            .map(|s| p.get(&format!("layer1.{s}")).unwrap().len())
            .sum();
        assert_eq!(len, 24);
        let shape = |s: &str| p.get(s).unwrap().shape().to_vec();
        assert_eq!(shape("layer1.wh"), shape("layer2.wh"));
        assert_eq!(shape("readout0.node.w1"), vec![16, 6]);
    }

    #[test]
    fn odd_hidden_is_rejected() {
        let c = ModelConfig { hidden: 7, ..tiny() };
        assert!(Model::init::<f32>(c, 0).is_err());
    }

    #[test]
    fn layout_mismatch_is_an_error() {
        let (_, p) = Model::init::<f64>(tiny(), 0).unwrap();
        let c = ModelConfig { aux: false, ..tiny() };
        assert!(Model::for_params(c, &p).is_err());
    }

    #[test]
    fn unique_rows_folds_signed_zero() {
        let (u, idx) = unique_rows(&[0.0, -0.0, 0.0, 0.0, 1.0, 0.0], 2);
        assert_eq!(idx, vec![0, 0, 1]);
        assert_eq!(u.len(), 4);
    }
}
