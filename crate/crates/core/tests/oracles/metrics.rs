//! Expression-level correctness by exhaustive segment correspondence.

use egat_core::label_graph::LabelGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub seg: bool,
    pub sym: bool,
    pub rel: bool,
    pub stru: bool,
    pub exp: bool,
}

/// Segments by flood fill over '*' edges (either direction).
fn segments(g: &LabelGraph) -> Vec<Vec<usize>> {
    let n = g.node_labels.len();
    let mut seg = vec![usize::MAX; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seg[s] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut members = vec![s];
        seg[s] = id;
        let mut k = 0;
        while k < members.len() {
            let a = members[k];
            for (i, j, l) in &g.edges {
                if l != "*" {
                    continue;
                }
                for (x, y) in [(*i, *j), (*j, *i)] {
                    if x == a && seg[y] == usize::MAX {
                        seg[y] = id;
                        members.push(y);
                    }
                }
            }
            k += 1;
        }
        members.sort();
        out.push(members);
    }
    out
}

fn triples(g: &LabelGraph, segs: &[Vec<usize>]) -> Vec<(Vec<usize>, Vec<usize>, String)> {
    let owner = |s: usize| segs.iter().find(|m| m.contains(&s)).unwrap().clone();
    let mut out: Vec<(Vec<usize>, Vec<usize>, String)> = Vec::new();
    for (i, j, l) in &g.edges {
        if l == "*" {
            continue;
        }
        let t = (owner(*i), owner(*j), l.clone());
        if t.0 != t.1 && !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

/// Tries every assignment of predicted segments to gold segments.
fn search(
    k: usize,
    used: &mut Vec<bool>,
    pred: &[Vec<usize>],
    gold: &[Vec<usize>],
    ok: &dyn Fn(usize, usize) -> bool,
) -> bool {
    if k == pred.len() {
        return true;
    }
    for g in 0..gold.len() {
        if !used[g] && ok(k, g) {
            used[g] = true;
            if search(k + 1, used, pred, gold, ok) {
                return true;
            }
            used[g] = false;
        }
    }
    false
}

pub fn judge(pred: &LabelGraph, gold: &LabelGraph) -> Verdict {
    let (ps, gs) = (segments(pred), segments(gold));
    let same_count = ps.len() == gs.len();
    let seg = same_count && search(0, &mut vec![false; gs.len()], &ps, &gs, &|p, g| ps[p] == gs[g]);
    let sym = same_count
        && search(0, &mut vec![false; gs.len()], &ps, &gs, &|p, g| {
            ps[p] == gs[g] && pred.node_labels[ps[p][0]] == gold.node_labels[gs[g][0]]
        });
    let (pt, gt) = (triples(pred, &ps), triples(gold, &gs));
    let rel = pt.len() == gt.len() && pt.iter().all(|t| gt.iter().any(|u| u == t));
    Verdict {
        seg,
        sym,
        rel,
        stru: seg && rel,
        exp: sym && rel,
    }
}
