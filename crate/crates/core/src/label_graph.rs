//! Stroke label graphs, the vocabulary, and the writing-order-aligned edited
//! form (ESLG) used as training targets.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_build::Adjacency;

pub use crate::ink_io::serialize_lg;

pub const SAME_SYMBOL: &str = "*";
pub const RELATIONS: [&str; 6] = ["Right", "Sup", "Sub", "Above", "Below", "Inside"];
/// Number of positional relations.
pub const C_E: usize = RELATIONS.len();
pub const STAR_CLASS: usize = 2 * C_E;
pub const NOE_CLASS: usize = 2 * C_E + 1;
pub const EDGE_CLASSES: usize = 2 * C_E + 2;

/// The 101 symbol labels of the competition data sets.
const CROHME_SYMBOLS: [&str; 101] = [
    "!", "(", ")", "+", "COMMA", "-", ".", "/", "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
    "=", "A", "B", "C", "E", "F", "G", "H", "I", "L", "M", "N", "P", "R", "S", "T", "V", "X",
    "Y", "[", "\\Delta", "\\alpha", "\\beta", "\\cos", "\\div", "\\exists", "\\forall",
    "\\gamma", "\\geq", "\\gt", "\\in", "\\infty", "\\int", "\\lambda", "\\ldots", "\\leq",
    "\\lim", "\\log", "\\lt", "\\mu", "\\neq", "\\phi", "\\pi", "\\pm", "\\prime",
    "\\rightarrow", "\\sigma", "\\sin", "\\sqrt", "\\sum", "\\tan", "\\theta", "\\times", "\\{",
    "\\}", "]", "a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l", "m", "n", "o", "p",
    "q", "r", "s", "t", "u", "v", "w", "x", "y", "z", "|",
];

/// Class name for an edge class id; opposites are written with a leading '~'.
pub fn edge_class_name(class: usize) -> String {
    match class {
        c if c < C_E => RELATIONS[c].to_string(),
        c if c < 2 * C_E => format!("~{}", RELATIONS[c - C_E]),
        STAR_CLASS => SAME_SYMBOL.to_string(),
        NOE_CLASS => "NoE".to_string(),
        c => format!("?{c}"),
    }
}

pub fn relation_class(label: &str) -> Option<usize> {
    RELATIONS.iter().position(|&r| r == label)
}

/// Pairs a positional class with its opposite.
pub fn opposite(class: usize) -> Result<usize> {
    match class {
        c if c < C_E => Ok(c + C_E),
        c if c < 2 * C_E => Ok(c - C_E),
        c => Err(Error::Label(format!(
            "class {} has no opposite",
            edge_class_name(c)
        ))),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub symbol_classes: Vec<String>,
    pub relation_classes: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::crohme()
    }
}

impl Vocabulary {
    pub fn crohme() -> Self {
        Self::new(CROHME_SYMBOLS.iter().map(|s| s.to_string()).collect())
            .expect("built-in vocabulary is valid")
    }

    /// Symbol classes are sorted bytewise; relations are fixed.
    pub fn new(mut symbols: Vec<String>) -> Result<Self> {
        symbols.sort();
        if symbols.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Label("duplicate symbol label".into()));
        }
        if symbols.is_empty() {
            return Err(Error::Label("empty vocabulary".into()));
        }
        Ok(Self {
            symbol_classes: symbols,
            relation_classes: RELATIONS.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn node_classes(&self) -> usize {
        self.symbol_classes.len()
    }

    pub fn edge_classes(&self) -> usize {
        EDGE_CLASSES
    }

    pub fn symbol_id(&self, label: &str) -> Result<usize> {
        self.symbol_classes
            .binary_search_by(|s| s.as_str().cmp(label))
            .map_err(|_| Error::Label(format!("unknown symbol label '{label}'")))
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.symbol_classes[id]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelGraph {
    pub node_labels: Vec<String>,
    pub edges: BTreeSet<(usize, usize, String)>,
}

impl LabelGraph {
    pub fn len(&self) -> usize {
        self.node_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_labels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        for (i, j, label) in &self.edges {
            if *i >= n || *j >= n {
                return Err(Error::Label(format!("edge ({i}, {j}) out of range for {n} strokes")));
            }
            if i == j {
                return Err(Error::Label(format!("self edge on stroke {i}")));
            }
            if label == SAME_SYMBOL && self.node_labels[*i] != self.node_labels[*j] {
                return Err(Error::Label(format!(
                    "'*' edge joins '{}' and '{}'",
                    self.node_labels[*i], self.node_labels[*j]
                )));
            }
        }
        Ok(())
    }

    /// Symbols as sets of strokes: connected components over '*' edges,
    /// ordered by their earliest stroke.
    pub fn segments(&self) -> Vec<Vec<usize>> {
        let mut uf = UnionFind::new(self.len());
        for (i, j, label) in &self.edges {
            if label == SAME_SYMBOL {
                uf.union(*i, *j);
            }
        }
        uf.groups()
    }
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        // keep the smaller index as root so roots are earliest strokes
        if ra < rb {
            self.parent[rb] = ra;
        } else if rb < ra {
            self.parent[ra] = rb;
        }
    }

    /// Groups in order of their smallest member, members ascending.
    pub fn groups(&mut self) -> Vec<Vec<usize>> {
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for x in 0..self.parent.len() {
            let r = self.find(x);
            by_root.entry(r).or_default().push(x);
        }
        by_root.into_values().collect()
    }
}

/// Ground truth aligned with a modeled adjacency: one directed edge per
/// adjacent pair, pointing forward in writing order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Eslg {
    pub n: usize,
    pub node_labels: Vec<usize>,
    /// Row-major n×n; true where i < j and the pair is adjacent.
    pub directed: Vec<bool>,
    /// Row-major n×n class ids; only entries under `directed` are meaningful,
    /// the rest hold `NOE_CLASS`.
    pub edge_labels: Vec<usize>,
}

impl Eslg {
    pub fn is_directed(&self, i: usize, j: usize) -> bool {
        self.directed[i * self.n + j]
    }

    pub fn edge_label(&self, i: usize, j: usize) -> usize {
        self.edge_labels[i * self.n + j]
    }

    /// Writing-order support pairs (i, j), i < j, in row-major order.
    pub fn support(&self) -> Vec<(usize, usize)> {
        let n = self.n;
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.is_directed(i, j))
            .collect()
    }

    /// Class histogram over the support.
    pub fn class_histogram(&self) -> [usize; EDGE_CLASSES] {
        let mut h = [0; EDGE_CLASSES];
        for (i, j) in self.support() {
            h[self.edge_label(i, j)] += 1;
        }
        h
    }
}

/// Directed support: keep i -> j for j > i where A[i][j] = 1.
pub fn directed_support(adj: &Adjacency) -> Vec<bool> {
    let n = adj.n();
    let mut d = vec![false; n * n];
    for i in 0..n {
        for j in i + 1..n {
            d[i * n + j] = adj.get(i, j);
        }
    }
    d
}

/// Aligns an SLG with `adj`. Also returns how many SLG edges join strokes the
/// adjacency does not connect (relations the modeled graph cannot express).
pub fn to_eslg(slg: &LabelGraph, adj: &Adjacency, vocab: &Vocabulary) -> Result<(Eslg, usize)> {
    let n = slg.len();
    if adj.n() != n {
        return Err(Error::Label(format!(
            "label graph has {n} strokes but adjacency is {}x{}",
            adj.n(),
            adj.n()
        )));
    }
    let node_labels = slg
        .node_labels
        .iter()
        .map(|l| vocab.symbol_id(l))
        .collect::<Result<Vec<_>>>()?;
    // per ordered pair: star flag and first positional class
    let mut star = vec![false; n * n];
    let mut rel: Vec<Option<usize>> = vec![None; n * n];
    let mut dropped = 0;
    for (i, j, label) in &slg.edges {
        let (i, j) = (*i, *j);
        if label == SAME_SYMBOL {
            star[i * n + j] = true;
        } else {
            let r = relation_class(label)
                .ok_or_else(|| Error::Label(format!("unknown relation label '{label}'")))?;
            rel[i * n + j].get_or_insert(r);
        }
        if !adj.get(i, j) {
            dropped += 1;
        }
    }
    let directed = directed_support(adj);
    let mut edge_labels = vec![NOE_CLASS; n * n];
    for i in 0..n {
        for j in i + 1..n {
            if !directed[i * n + j] {
                continue;
            }
            let (f, b) = (i * n + j, j * n + i);
            edge_labels[f] = if star[f] || star[b] {
                STAR_CLASS
            } else if let Some(r) = rel[f] {
                r
            } else if let Some(r) = rel[b] {
                opposite(r)?
            } else {
                NOE_CLASS
            };
        }
    }
    Ok((
        Eslg {
            n,
            node_labels,
            directed,
            edge_labels,
        },
        dropped,
    ))
}

/// Decodes class predictions into an SLG.
///
/// Symbols are connected components over '*' edges labeled by majority vote
/// (ties go to the earliest stroke's label). Each pair of symbols takes the
/// relation most stroke pairs voted for and is written out between all of
/// their strokes; relations inside one component are discarded.
pub fn eslg_to_slg(
    node_label_ids: &[usize],
    edge_label_ids: &[usize],
    directed: &[bool],
    vocab: &Vocabulary,
) -> Result<LabelGraph> {
    let n = node_label_ids.len();
    if edge_label_ids.len() != n * n || directed.len() != n * n {
        return Err(Error::Label(format!(
            "expected {} edge entries for {n} nodes, got {} labels and {} support flags",
            n * n,
            edge_label_ids.len(),
            directed.len()
        )));
    }
    if let Some(&bad) = node_label_ids.iter().find(|&&c| c >= vocab.node_classes()) {
        return Err(Error::Label(format!("symbol class {bad} out of range")));
    }
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in 0..n {
            if directed[i * n + j] && edge_label_ids[i * n + j] == STAR_CLASS {
                uf.union(i, j);
            }
        }
    }
    let groups = uf.groups();
    let mut node_labels = vec![String::new(); n];
    let mut comp = vec![0; n];
    let mut edges = BTreeSet::new();
    for (g, members) in groups.iter().enumerate() {
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        for &m in members {
            *votes.entry(node_label_ids[m]).or_default() += 1;
        }
        let best = votes.values().copied().max().unwrap_or(0);
        // members ascend, so the first with a top count is the earliest stroke
        let winner = members
            .iter()
            .map(|&m| node_label_ids[m])
            .find(|c| votes[c] == best)
            .expect("non-empty component");
        for &m in members {
            node_labels[m] = vocab.symbol(winner).to_string();
            comp[m] = g;
        }
        for &a in members {
            for &b in members {
                if a != b {
                    edges.insert((a, b, SAME_SYMBOL.to_string()));
                }
            }
        }
    }
    // votes per ordered symbol pair and relation; the first vote breaks ties
    let mut votes: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
    for i in 0..n {
        for j in 0..n {
            if !directed[i * n + j] || comp[i] == comp[j] {
                continue;
            }
            let c = edge_label_ids[i * n + j];
            let (from, to, r) = if c < C_E {
                (comp[i], comp[j], c)
            } else if c < 2 * C_E {
                (comp[j], comp[i], c - C_E)
            } else {
                continue;
            };
            let key = (from.min(to), from.max(to));
            let tally = votes.entry(key).or_default();
            let code = if from < to { r } else { r + C_E };
            match tally.iter_mut().find(|(c, _)| *c == code) {
                Some(t) => t.1 += 1,
                None => tally.push((code, 1)),
            }
        }
    }
    for ((a, b), tally) in votes {
        let best = tally.iter().map(|t| t.1).max().unwrap_or(0);
        let (code, _) = tally.into_iter().find(|t| t.1 == best).expect("non-empty tally");
        let (from, to, r) = if code < C_E { (a, b, code) } else { (b, a, code - C_E) };
        for &x in &groups[from] {
            for &y in &groups[to] {
                edges.insert((x, y, RELATIONS[r].to_string()));
            }
        }
    }
    Ok(LabelGraph { node_labels, edges })
}
