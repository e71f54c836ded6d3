//! Primitive and expression-level metrics, confusion tables, length
//! breakdowns and attention export.
//!
//! Expression metrics compare segmentations as stroke partitions and
//! relations as triples anchored on stroke sets, so a segmentation error also
//! breaks every relation touching the affected symbols.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use egat_tensor::{Float, ParamStore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_build::{Adjacency, GraphConfig};
use crate::label_graph::{eslg_to_slg, to_eslg, Eslg, LabelGraph, Vocabulary, NOE_CLASS, SAME_SYMBOL};
use crate::model::Model;
use crate::training::{full_graph, Sample};

/// Missing relation in a symbol-pair confusion pattern.
pub const NO_RELATION: &str = "∥";

/// Fraction of matching node labels and of matching edge labels over the
/// shared support.
pub fn primitive_accuracy(pred: &Eslg, gold: &Eslg) -> Result<(f64, f64)> {
    if pred.n != gold.n || pred.directed != gold.directed {
        return Err(Error::Label("prediction and gold have different supports".into()));
    }
    let n = gold.n;
    let nodes = (0..n).filter(|&i| pred.node_labels[i] == gold.node_labels[i]).count();
    let support = gold.support();
    let edges = support
        .iter()
        .filter(|&&(i, j)| pred.edge_label(i, j) == gold.edge_label(i, j))
        .count();
    let rate = |ok: usize, total: usize| if total == 0 { 1.0 } else { ok as f64 / total as f64 };
    Ok((rate(nodes, n), rate(edges, support.len())))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub seg: bool,
    pub sym: bool,
    pub rel: bool,
    pub stru: bool,
    pub exp: bool,
}

type Triple = (Vec<usize>, Vec<usize>, String);

fn relation_triples(g: &LabelGraph, segments: &[Vec<usize>]) -> BTreeSet<Triple> {
    let mut owner = vec![0; g.len()];
    for (k, s) in segments.iter().enumerate() {
        for &x in s {
            owner[x] = k;
        }
    }
    g.edges
        .iter()
        .filter(|(i, j, l)| l != SAME_SYMBOL && owner[*i] != owner[*j])
        .map(|(i, j, l)| (segments[owner[*i]].clone(), segments[owner[*j]].clone(), l.clone()))
        .collect()
}

/// Per-expression correctness. A symbol's label is the label of its first
/// stroke.
pub fn expression_metrics(pred: &LabelGraph, gold: &LabelGraph) -> Result<Verdict> {
    if pred.len() != gold.len() {
        return Err(Error::Label(format!(
            "prediction has {} strokes, gold has {}",
            pred.len(),
            gold.len()
        )));
    }
    let (ps, gs) = (pred.segments(), gold.segments());
    let seg = ps == gs;
    let sym = seg && gs.iter().all(|s| pred.node_labels[s[0]] == gold.node_labels[s[0]]);
    let rel = relation_triples(pred, &ps) == relation_triples(gold, &gs);
    Ok(Verdict { seg, sym, rel, stru: seg && rel, exp: sym && rel })
}

/// One evaluated expression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub id: String,
    pub strokes: usize,
    pub symbols: usize,
    pub verdict: Verdict,
    pub node_acc: f64,
    pub edge_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub node_acc: f64,
    pub edge_acc: f64,
    pub seg_rate: f64,
    pub sym_rate: f64,
    pub rel_rate: f64,
    pub exp_rate: f64,
    pub stru_rate: f64,
    /// Gold relations between strokes the modeled graph never connects.
    pub dropped_relations: usize,
    pub expressions: Vec<Outcome>,
}

impl MetricsReport {
    /// Aggregates outcomes; primitive rates are pooled over primitives via
    /// the per-expression counts in `primitives` (nodes, edges).
    pub fn new(expressions: Vec<Outcome>, primitives: &[(usize, usize)], dropped_relations: usize) -> Self {
        let n = expressions.len().max(1) as f64;
        let rate = |f: fn(&Verdict) -> bool| expressions.iter().filter(|o| f(&o.verdict)).count() as f64 / n;
        let (mut nodes, mut edges, mut node_ok, mut edge_ok) = (0.0, 0.0, 0.0, 0.0);
        for (o, &(pn, pe)) in expressions.iter().zip(primitives) {
            nodes += pn as f64;
            edges += pe as f64;
            node_ok += o.node_acc * pn as f64;
            edge_ok += o.edge_acc * pe as f64;
        }
        let pooled = |ok: f64, total: f64| if total == 0.0 { 1.0 } else { ok / total };
        Self {
            node_acc: pooled(node_ok, nodes),
            edge_acc: pooled(edge_ok, edges),
            seg_rate: rate(|v| v.seg),
            sym_rate: rate(|v| v.sym),
            rel_rate: rate(|v| v.rel),
            exp_rate: rate(|v| v.exp),
            stru_rate: rate(|v| v.stru),
            dropped_relations,
            expressions,
        }
    }

    /// One row per expression (booleans as 0/1) and a closing `ALL` row of
    /// rates.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Data(e.to_string());
        w.write_record(["id", "strokes", "symbols", "node_acc", "edge_acc", "seg", "sym", "rel", "stru", "exp"])
            .map_err(err)?;
        let b = |x: bool| if x { "1".to_string() } else { "0".to_string() };
        for o in &self.expressions {
            let v = o.verdict;
            w.write_record([
                o.id.clone(),
                o.strokes.to_string(),
                o.symbols.to_string(),
                o.node_acc.to_string(),
                o.edge_acc.to_string(),
                b(v.seg),
                b(v.sym),
                b(v.rel),
                b(v.stru),
                b(v.exp),
            ])
            .map_err(err)?;
        }
        let strokes: usize = self.expressions.iter().map(|o| o.strokes).sum();
        let symbols: usize = self.expressions.iter().map(|o| o.symbols).sum();
        w.write_record([
            "ALL".to_string(),
            strokes.to_string(),
            symbols.to_string(),
            self.node_acc.to_string(),
            self.edge_acc.to_string(),
            self.seg_rate.to_string(),
            self.sym_rate.to_string(),
            self.rel_rate.to_string(),
            self.stru_rate.to_string(),
            self.exp_rate.to_string(),
        ])
        .map_err(err)?;
        w.flush()?;
        Ok(())
    }
}

/// A prediction and its ground truth, both as SLG and as graph-aligned
/// classes over the same support.
#[derive(Clone, Debug)]
pub struct EvalItem {
    pub id: String,
    pub pred: LabelGraph,
    pub gold: LabelGraph,
    pub pred_eslg: Eslg,
    pub gold_eslg: Eslg,
    /// Gold relations the modeled graph cannot express.
    pub dropped: usize,
}

impl EvalItem {
    /// Aligns both graphs with `adj`; for predictions that only exist as LG.
    pub fn from_slgs(id: &str, pred: LabelGraph, gold: LabelGraph, adj: &Adjacency, vocab: &Vocabulary) -> Result<Self> {
        let (pred_eslg, _) = to_eslg(&pred, adj, vocab)?;
        let (gold_eslg, dropped) = to_eslg(&gold, adj, vocab)?;
        Ok(Self { id: id.to_string(), pred, gold, pred_eslg, gold_eslg, dropped })
    }
}

pub fn evaluate(items: &[EvalItem]) -> Result<MetricsReport> {
    let mut outcomes = Vec::new();
    let mut prims = Vec::new();
    let mut dropped = 0;
    for it in items {
        dropped += it.dropped;
        let (node_acc, edge_acc) = primitive_accuracy(&it.pred_eslg, &it.gold_eslg)?;
        outcomes.push(Outcome {
            id: it.id.clone(),
            strokes: it.gold.len(),
            symbols: it.gold.segments().len(),
            verdict: expression_metrics(&it.pred, &it.gold)?,
            node_acc,
            edge_acc,
        });
        prims.push((it.gold_eslg.n, it.gold_eslg.support().len()));
    }
    Ok(MetricsReport::new(outcomes, &prims, dropped))
}

/// Error tables keyed by gold symbol and by gold related symbol pair.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    /// gold symbol -> predicted symbol -> count (errors only)
    pub symbols: BTreeMap<String, BTreeMap<String, usize>>,
    /// "a Rel b" -> predicted pattern -> count (errors only)
    pub pairs: BTreeMap<String, BTreeMap<String, usize>>,
}

impl Confusion {
    /// Total symbol errors per gold symbol.
    pub fn symbol_errors(&self) -> BTreeMap<String, usize> {
        self.symbols.iter().map(|(k, v)| (k.clone(), v.values().sum())).collect()
    }
}

/// Symbol-level errors read off each gold symbol's first stroke, and pair
/// errors over every gold relation; a relation the prediction lacks is
/// written as [`NO_RELATION`].
pub fn confusion_histograms(pairs: &[(LabelGraph, LabelGraph)]) -> Result<Confusion> {
    let mut out = Confusion::default();
    for (pred, gold) in pairs {
        if pred.len() != gold.len() {
            return Err(Error::Label("prediction and gold differ in stroke count".into()));
        }
        let segs = gold.segments();
        for s in &segs {
            let (g, p) = (&gold.node_labels[s[0]], &pred.node_labels[s[0]]);
            if g != p {
                *out.symbols.entry(g.clone()).or_default().entry(p.clone()).or_default() += 1;
            }
        }
        let mut pred_rel: BTreeMap<(usize, usize), &str> = BTreeMap::new();
        for (i, j, l) in &pred.edges {
            if l != SAME_SYMBOL {
                pred_rel.insert((*i, *j), l);
            }
        }
        for (a, b, rel) in relation_triples(gold, &segs) {
            let (x, y) = (a[0], b[0]);
            let key = format!("{} {rel} {}", gold.node_labels[x], gold.node_labels[y]);
            let got = format!(
                "{} {} {}",
                pred.node_labels[x],
                pred_rel.get(&(x, y)).copied().unwrap_or(NO_RELATION),
                pred.node_labels[y]
            );
            if got != key {
                *out.pairs.entry(key).or_default().entry(got).or_default() += 1;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LengthKey {
    Strokes,
    Symbols,
}

/// Expression rate per length bucket: length -> (correct, total, rate).
pub fn length_breakdown(outcomes: &[Outcome], key: LengthKey) -> BTreeMap<usize, (usize, usize, f64)> {
    let mut out: BTreeMap<usize, (usize, usize, f64)> = BTreeMap::new();
    for o in outcomes {
        let k = match key {
            LengthKey::Strokes => o.strokes,
            LengthKey::Symbols => o.symbols,
        };
        let e = out.entry(k).or_default();
        e.0 += usize::from(o.verdict.exp);
        e.1 += 1;
    }
    for v in out.values_mut() {
        v.2 = v.0 as f64 / v.1 as f64;
    }
    out
}

/// Decoded prediction for one expression.
#[derive(Clone, Debug)]
pub struct Recognized {
    pub slg: LabelGraph,
    pub eslg: Eslg,
    /// Last-layer attention on the full graph, `n × n` row-major, where `n`
    /// includes the master node when present.
    pub attention: Vec<f64>,
    pub n: usize,
}

/// Runs the model on the full graph and decodes an SLG.
pub fn recognize<T: Float>(
    model: &Model,
    params: &ParamStore<T>,
    sample: &Sample,
    graph: &GraphConfig,
    vocab: &Vocabulary,
) -> Result<Recognized> {
    let full = full_graph(&sample.graph, graph.global)?;
    let pred = model.predict(params, &full)?;
    let node_labels = pred.node_labels();
    if node_labels.iter().any(|&c| c >= vocab.node_classes()) {
        return Err(Error::Model("model predicts classes outside the vocabulary".into()));
    }
    let m = sample.eslg.n;
    let mut edge_labels = pred.edge_labels(NOE_CLASS);
    for k in 0..m * m {
        if !sample.eslg.directed[k] {
            edge_labels[k] = NOE_CLASS;
        }
    }
    let slg = eslg_to_slg(&node_labels, &edge_labels, &sample.eslg.directed, vocab)?;
    let eslg = Eslg { n: m, node_labels, directed: sample.eslg.directed.clone(), edge_labels };
    Ok(Recognized { slg, eslg, attention: pred.attention, n: full.n })
}

/// Attention matrix rows as CSV (row = source, column = target; zero where
/// there is no edge).
pub fn export_attention(attention: &[f64], n: usize, out: impl Write) -> Result<()> {
    if attention.len() != n * n {
        return Err(Error::Data(format!("attention has {} values, expected {}", attention.len(), n * n)));
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for row in attention.chunks(n) {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
