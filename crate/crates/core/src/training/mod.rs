//! Multi-objective training: masked node/edge losses over every readout
//! stage, sub-expression batching, Adam with plateau decay, and best-epoch
//! checkpoint selection.

mod config;

use std::collections::BTreeMap;
use std::io::Write;

use egat_tensor::{Adam, AdamConfig, Checkpoint, Float, ParamStore, PlateauScheduler, Precision, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{parse_config, RunConfig};

use crate::error::{Error, Result};
use crate::graph_build::{augment_global, build_local_graph, split_subexpressions, GraphConfig, ModeledGraph};
use crate::ink_io::InkExpression;
use crate::label_graph::{directed_support, to_eslg, Eslg, LabelGraph, Vocabulary, NOE_CLASS};
use crate::model::{Batch, Mode, Model, ModelConfig, Output};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma: f64,
    pub max_epochs: usize,
    /// Plateau patience and decay factor for the learning rate.
    pub patience: usize,
    pub decay: f64,
    /// Stop after this many epochs without a validation improvement; 0 never.
    pub early_stop: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.00027,
            batch_size: 32,
            lambda1: 0.5,
            lambda2: 0.3,
            gamma: 1.5,
            max_epochs: 200,
            patience: 20,
            decay: 0.1,
            early_stop: 0,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.lambda1) {
            return bad(format!("lambda1 {} outside [0, 1]", self.lambda1));
        }
        if self.lambda2 < 0.0 || self.gamma < 0.0 {
            return bad("lambda2 and gamma must be non-negative".into());
        }
        if self.lr < 0.0 || !self.lr.is_finite() {
            return bad(format!("invalid learning rate {}", self.lr));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be positive".into());
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad(format!("decay {} outside (0, 1]", self.decay));
        }
        Ok(())
    }
}

/// A labeled expression: its local graph and the aligned ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub graph: ModeledGraph,
    pub eslg: Eslg,
}

impl Sample {
    /// Builds the local graph and aligns the labels with its adjacency.
    pub fn new(expr: &InkExpression, gold: &LabelGraph, graph: &GraphConfig, vocab: &Vocabulary) -> Result<Self> {
        let g = build_local_graph(expr, graph)?;
        let (eslg, _) = to_eslg(gold, &g.adjacency, vocab)?;
        Ok(Self { id: expr.id.clone(), graph: g, eslg })
    }

    /// Graph only, for recognition without ground truth. Labels are zero.
    pub fn unlabeled(expr: &InkExpression, graph: &GraphConfig) -> Result<Self> {
        let g = build_local_graph(expr, graph)?;
        let n = g.n;
        let eslg = Eslg {
            n,
            node_labels: vec![0; n],
            directed: directed_support(&g.adjacency),
            edge_labels: vec![NOE_CLASS; n * n],
        };
        Ok(Self { id: expr.id.clone(), graph: g, eslg })
    }
}

/// Row-aligned targets and masks for one [`Batch`].
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub nodes: Vec<usize>,
    pub node_mask: Vec<bool>,
    pub edges: Vec<usize>,
    pub edge_mask: Vec<bool>,
}

impl Targets {
    pub fn new(batch: &Batch, graphs: &[&ModeledGraph], eslgs: &[&Eslg]) -> Result<Self> {
        if graphs.len() != batch.g || eslgs.len() != batch.g {
            return Err(Error::Data("targets and batch disagree on graph count".into()));
        }
        let o = batch.offset;
        for (g, e) in graphs.iter().zip(eslgs) {
            if e.n + o != g.n {
                return Err(Error::Data(format!("labels cover {} strokes, graph has {}", e.n, g.n - o)));
            }
        }
        let mut t = Targets { nodes: vec![], node_mask: vec![], edges: vec![], edge_mask: vec![] };
        for &(g, i) in &batch.node_rows {
            t.nodes.push(eslgs[g].node_labels[i - o]);
            t.node_mask.push(graphs[g].node_mask[i]);
        }
        for &(g, i, j) in &batch.edge_rows {
            let e = eslgs[g];
            let (a, b) = (i - o, j - o);
            t.edges.push(if e.is_directed(a, b) { e.edge_label(a, b) } else { NOE_CLASS });
            t.edge_mask.push(graphs[g].edge_mask[i * batch.n + j]);
        }
        Ok(t)
    }
}

/// Mean focal loss over unmasked rows of `[m, C]` logits; 0 when none are.
/// `gamma = 0` is cross-entropy.
pub fn masked_focal<'t, T: Float>(logits: Var<'t, T>, targets: &[usize], mask: &[bool], gamma: f64) -> Result<Var<'t, T>> {
    let count = mask.iter().filter(|&&m| m).count();
    if logits.shape()[0] == 0 {
        return Ok(logits.tape().constant(Tensor::scalar(T::of(0.0))));
    }
    let rows = logits.focal_loss(targets, mask, T::of(gamma))?;
    Ok(rows.sum_all()?.scale(T::of(1.0 / count.max(1) as f64))?)
}

/// Mean cross-entropy over unmasked nodes.
pub fn node_loss<'t, T: Float>(logits: Var<'t, T>, targets: &[usize], mask: &[bool]) -> Result<Var<'t, T>> {
    masked_focal(logits, targets, mask, 0.0)
}

/// Mean focal loss over unmasked supervised edges.
pub fn edge_loss<'t, T: Float>(logits: Var<'t, T>, targets: &[usize], mask: &[bool], gamma: f64) -> Result<Var<'t, T>> {
    masked_focal(logits, targets, mask, gamma)
}

/// `λ1·Ln + (1−λ1)·Le` for the final pair plus `λ2` times the same mix for
/// each auxiliary pair.
pub fn total_loss(final_pair: (f64, f64), aux: &[(f64, f64)], lambda1: f64, lambda2: f64) -> f64 {
    let mix = |(n, e): (f64, f64)| lambda1 * n + (1.0 - lambda1) * e;
    mix(final_pair) + aux.iter().map(|&p| lambda2 * mix(p)).sum::<f64>()
}

/// Differentiable [`total_loss`] over the stages of a forward pass.
pub fn stage_loss<'t, T: Float>(out: &Output<'t, T>, targets: &Targets, cfg: &TrainConfig) -> Result<Var<'t, T>> {
    let (l1, l2) = (cfg.lambda1, cfg.lambda2);
    let last = out.stages.len() - 1;
    let mut total: Option<Var<'t, T>> = None;
    for (k, s) in out.stages.iter().enumerate() {
        let ln = node_loss(s.nodes, &targets.nodes, &targets.node_mask)?;
        let le = edge_loss(s.edges, &targets.edges, &targets.edge_mask, cfg.gamma)?;
        let weight = if k == last { 1.0 } else { l2 };
        let mix = ln.scale(T::of(weight * l1))?.add(le.scale(T::of(weight * (1.0 - l1)))?)?;
        total = Some(match total {
            Some(t) => t.add(mix)?,
            None => mix,
        });
    }
    total.ok_or_else(|| Error::Model("forward produced no readout".into()))
}

fn argmax<T: Float>(row: &[T]) -> usize {
    let mut best = 0;
    for (c, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = c;
        }
    }
    best
}

/// Correct and total counts over unmasked rows.
fn hits<T: Float>(logits: &[T], classes: usize, targets: &[usize], mask: &[bool]) -> (usize, usize) {
    let mut ok = 0;
    let mut total = 0;
    for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
        if m {
            total += 1;
            ok += usize::from(argmax(&logits[r * classes..(r + 1) * classes]) == t);
        }
    }
    (ok, total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub node_acc: f64,
    pub edge_acc: f64,
    pub lr: f64,
}

pub fn write_history(records: &[EpochRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Loss and final-stage accuracies of a model on full graphs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Validation {
    pub loss: f64,
    pub node_acc: f64,
    pub edge_acc: f64,
}

/// Graph as the model sees it at evaluation time.
pub fn full_graph(graph: &ModeledGraph, global: bool) -> Result<ModeledGraph> {
    if global && !graph.has_master {
        augment_global(graph)
    } else {
        Ok(graph.clone())
    }
}

fn groups_by_size(items: &[(ModeledGraph, Eslg)], batch: usize) -> Vec<Vec<&(ModeledGraph, Eslg)>> {
    let mut by_n: BTreeMap<usize, Vec<&(ModeledGraph, Eslg)>> = BTreeMap::new();
    for it in items {
        by_n.entry(it.0.n).or_default().push(it);
    }
    by_n.into_values()
        .flat_map(|v| v.chunks(batch).map(|c| c.to_vec()).collect::<Vec<_>>())
        .collect()
}

/// Eval-mode loss (weighted by graphs per batch) and accuracies.
pub fn validate<T: Float>(
    model: &Model,
    params: &ParamStore<T>,
    items: &[(ModeledGraph, Eslg)],
    cfg: &TrainConfig,
) -> Result<Validation> {
    if items.is_empty() {
        return Err(Error::Data("empty validation set".into()));
    }
    let (mut loss, mut node, mut edge) = (0.0, (0, 0), (0, 0));
    for group in groups_by_size(items, cfg.batch_size) {
        let graphs: Vec<&ModeledGraph> = group.iter().map(|p| &p.0).collect();
        let eslgs: Vec<&Eslg> = group.iter().map(|p| &p.1).collect();
        let batch = Batch::new(&graphs)?;
        let targets = Targets::new(&batch, &graphs, &eslgs)?;
        let tape = Tape::new();
        let out = model.forward(&tape, params.bind(&tape).vars(), &batch, Mode::Eval)?;
        loss += stage_loss(&out, &targets, cfg)?.item().as_f64() * group.len() as f64;
        let last = out.last();
        let n = hits(&last.nodes.data(), model.config.node_classes, &targets.nodes, &targets.node_mask);
        let e = hits(&last.edges.data(), model.config.edge_classes, &targets.edges, &targets.edge_mask);
        node = (node.0 + n.0, node.1 + n.1);
        edge = (edge.0 + e.0, edge.1 + e.1);
    }
    let rate = |(ok, total): (usize, usize)| if total == 0 { 1.0 } else { ok as f64 / total as f64 };
    Ok(Validation {
        loss: loss / items.len() as f64,
        node_acc: rate(node),
        edge_acc: rate(edge),
    })
}

pub struct FitResult<T: Float> {
    pub model: Model,
    /// Parameters of the epoch with the lowest validation loss.
    pub params: ParamStore<T>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Training chunks: each local graph split into padded sub-expressions.
pub fn training_chunks(samples: &[Sample], graph: &GraphConfig) -> Result<Vec<(ModeledGraph, Eslg)>> {
    let mut out = Vec::new();
    for s in samples {
        let parts = split_subexpressions(&s.graph, &s.eslg, graph.n_max, graph.global)
            .map_err(|e| Error::Data(format!("{}: {e}", s.id)))?;
        out.extend(parts);
    }
    Ok(out)
}

/// Full validation graphs (master-augmented when global).
pub fn validation_graphs(samples: &[Sample], graph: &GraphConfig) -> Result<Vec<(ModeledGraph, Eslg)>> {
    samples
        .iter()
        .map(|s| Ok((full_graph(&s.graph, graph.global)?, s.eslg.clone())))
        .collect()
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One optimizer step on a batch of equal-size chunks; returns the loss.
pub fn train_step<T: Float>(
    model: &Model,
    params: &mut ParamStore<T>,
    adam: &mut Adam,
    batch_items: &[&(ModeledGraph, Eslg)],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<f64> {
    let graphs: Vec<&ModeledGraph> = batch_items.iter().map(|p| &p.0).collect();
    let eslgs: Vec<&Eslg> = batch_items.iter().map(|p| &p.1).collect();
    let batch = Batch::new(&graphs)?;
    let targets = Targets::new(&batch, &graphs, &eslgs)?;
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let out = model.forward(&tape, bound.vars(), &batch, Mode::Train { seed })?;
    let loss = stage_loss(&out, &targets, cfg)?;
    let value = loss.item().as_f64();
    let grads = tape.backward(loss)?;
    let grads = bound.gradients(&grads);
    adam.step(params, &grads)?;
    Ok(value)
}

/// Trains from a fresh initialization. `val` defaults to `train` when empty.
pub fn fit<T: Float>(
    train: &[Sample],
    val: &[Sample],
    model_cfg: &ModelConfig,
    graph_cfg: &GraphConfig,
    cfg: &TrainConfig,
) -> Result<FitResult<T>> {
    cfg.validate()?;
    graph_cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if model_cfg.d_n != graph_cfg.d_n || model_cfg.d_e != graph_cfg.d_e {
        return Err(Error::Config("model and graph disagree on d_n / d_e".into()));
    }
    let chunks = training_chunks(train, graph_cfg)?;
    let val_items = validation_graphs(if val.is_empty() { train } else { val }, graph_cfg)?;
    let (model, mut params) = Model::init::<T>(model_cfg.clone(), cfg.seed)?;
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, &params);
    let mut sched = PlateauScheduler::new(cfg.decay, cfg.patience);
    let mut history = Vec::new();
    let (mut best, mut best_epoch, mut best_params) = (f64::INFINITY, 0, params.clone());
    let mut order: Vec<usize> = (0..chunks.len()).collect();
    let mut step = 0u64;
    for epoch in 1..=cfg.max_epochs {
        let lr = adam.lr();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64, 0));
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        // chunks share one size, so any consecutive slice stacks
        for slice in order.chunks(cfg.batch_size) {
            let items: Vec<&(ModeledGraph, Eslg)> = slice.iter().map(|&i| &chunks[i]).collect();
            step += 1;
            losses.push(train_step(&model, &mut params, &mut adam, &items, cfg, mix(cfg.seed, step, 1))?);
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let v = validate(&model, &params, &val_items, cfg)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss: v.loss,
            node_acc: v.node_acc,
            edge_acc: v.edge_acc,
            lr,
        });
        if v.loss < best {
            best = v.loss;
            best_epoch = epoch;
            best_params = params.clone();
        }
        adam.set_lr(sched.observe(v.loss, lr));
        if cfg.early_stop > 0 && epoch - best_epoch >= cfg.early_stop {
            break;
        }
    }
    Ok(FitResult { model, params: best_params, history, best_epoch })
}

/// Metadata stored alongside checkpoint tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub graph: GraphConfig,
    pub train: TrainConfig,
    pub best_epoch: usize,
    pub vocabulary: Vec<String>,
}

pub fn to_checkpoint<T: Float>(meta: &CheckpointMeta, params: &ParamStore<T>) -> Result<Checkpoint> {
    Ok(Checkpoint::from_params(serde_json::to_value(meta)?, params))
}

/// Model, parameters (at the requested precision) and metadata.
pub fn from_checkpoint<T: Float>(ckpt: &Checkpoint) -> Result<(Model, ParamStore<T>, CheckpointMeta)> {
    let meta: CheckpointMeta = serde_json::from_value(ckpt.metadata.clone())
        .map_err(|e| Error::Data(format!("checkpoint metadata: {e}")))?;
    let params = ckpt.to_params::<T>()?;
    let (model, params) = Model::for_params(meta.model.clone(), &params)?;
    Ok((model, params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.batch_size, c.lambda1, c.lambda2, c.gamma), (0.00027, 32, 0.5, 0.3, 1.5));
        assert_eq!((c.max_epochs, c.patience, c.decay), (200, 20, 0.1));
    }

    #[test]
    fn plugged_constants_give_two_and_a_half() {
        assert!((total_loss((1.0, 1.0), &[(1.0, 1.0); 5], 0.5, 0.3) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn lambda_boundaries() {
        assert_eq!(total_loss((2.0, 3.0), &[(9.0, 9.0)], 0.5, 0.0), 2.5);
        assert_eq!(total_loss((2.0, 7.0), &[(1.0, 5.0)], 1.0, 1.0), 3.0);
    }

    #[test]
    fn bad_lambda_is_rejected() {
        let c = TrainConfig { lambda1: 1.5, ..TrainConfig::default() };
        assert!(c.validate().is_err());
    }
}
