//! Seeded synthetic expressions with matching label graphs.
//!
//! Symbols are drawn from unit-box stroke templates (y grows downward) with
//! per-point jitter, laid out left to right with superscripts, subscripts and
//! fractions. Relations follow the stroke-level convention: a symbol-level
//! relation A -> B yields an edge from every stroke of A to every stroke of
//! B, and strokes of one symbol are joined by '*' edges in both directions.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{InkExpression, Point};
use crate::error::Result;
use crate::label_graph::{LabelGraph, SAME_SYMBOL};

/// Labels the generator can draw.
pub const ALPHABET: [&str; 13] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "+", "-", "x"];

/// Template control points in the unit box, plus the box's horizontal extent.
fn template(label: &str) -> (Vec<Vec<(f64, f64)>>, f64) {
    let arc = |cx: f64, cy: f64, rx: f64, ry: f64, a0: f64, a1: f64, k: usize| {
        (0..=k)
            .map(|i| {
                let a = (a0 + (a1 - a0) * i as f64 / k as f64).to_radians();
                (cx + rx * a.cos(), cy + ry * a.sin())
            })
            .collect::<Vec<_>>()
    };
    let strokes = match label {
        "0" => vec![arc(0.3, 0.5, 0.28, 0.5, -90.0, 270.0, 24)],
        "1" => vec![vec![(0.1, 0.2), (0.3, 0.0), (0.3, 1.0)]],
        "2" => {
            let mut s = arc(0.3, 0.27, 0.27, 0.25, 200.0, 380.0, 10);
            s.extend([(0.02, 1.0), (0.6, 1.0)]);
            vec![s]
        }
        "3" => {
            let mut s = arc(0.28, 0.26, 0.26, 0.24, 200.0, 450.0, 12);
            s.extend(arc(0.28, 0.74, 0.28, 0.26, 270.0, 520.0, 12));
            vec![s]
        }
        "4" => vec![
            vec![(0.45, 0.0), (0.02, 0.65), (0.6, 0.65)],
            vec![(0.45, 0.3), (0.45, 1.0)],
        ],
        "5" => {
            let mut s = vec![(0.55, 0.0), (0.1, 0.0), (0.05, 0.45)];
            s.extend(arc(0.3, 0.7, 0.27, 0.29, 240.0, 500.0, 12));
            vec![s]
        }
        "6" => {
            let mut s = arc(0.35, 0.5, 0.3, 0.5, 280.0, 180.0, 8);
            s.extend(arc(0.3, 0.75, 0.25, 0.24, 180.0, 540.0, 14));
            vec![s]
        }
        "7" => vec![vec![(0.0, 0.0), (0.6, 0.0), (0.2, 1.0)]],
        "8" => {
            let mut s = arc(0.3, 0.25, 0.22, 0.24, 90.0, 450.0, 14);
            s.extend(arc(0.3, 0.74, 0.27, 0.26, 270.0, 630.0, 14));
            vec![s]
        }
        "9" => {
            let mut s = arc(0.3, 0.27, 0.26, 0.26, 0.0, 360.0, 14);
            s.push((0.5, 1.0));
            vec![s]
        }
        "+" => vec![vec![(0.0, 0.5), (0.45, 0.5)], vec![(0.225, 0.3), (0.225, 0.7)]],
        "-" => vec![vec![(0.0, 0.5), (0.5, 0.5)]],
        "x" => vec![vec![(0.0, 0.35), (0.45, 0.95)], vec![(0.45, 0.35), (0.0, 0.95)]],
        other => panic!("no template for '{other}'"),
    };
    let width = strokes
        .iter()
        .flatten()
        .fold(0.0f64, |w, &(x, _)| w.max(x));
    (strokes, width)
}

/// Layout tree: a row is a left-to-right sequence of items.
#[derive(Clone, Debug, PartialEq)]
pub enum Item {
    Sym {
        label: String,
        sup: Option<Vec<Item>>,
        sub: Option<Vec<Item>>,
    },
    Frac {
        num: Vec<Item>,
        den: Vec<Item>,
    },
}

impl Item {
    pub fn sym(label: &str) -> Self {
        Item::Sym {
            label: label.to_string(),
            sup: None,
            sub: None,
        }
    }

    fn symbols(&self) -> usize {
        match self {
            Item::Sym { sup, sub, .. } => {
                1 + sup.as_ref().map_or(0, |r| row_symbols(r)) + sub.as_ref().map_or(0, |r| row_symbols(r))
            }
            Item::Frac { num, den } => 1 + row_symbols(num) + row_symbols(den),
        }
    }
}

fn row_symbols(row: &[Item]) -> usize {
    row.iter().map(Item::symbols).sum()
}

/// Markup for a row, used as the ground-truth annotation.
pub fn to_markup(row: &[Item]) -> String {
    let mut s = String::new();
    for item in row {
        match item {
            Item::Sym { label, sup, sub } => {
                s.push_str(label);
                if let Some(r) = sub {
                    s.push_str(&format!("_{{{}}}", to_markup(r)));
                }
                if let Some(r) = sup {
                    s.push_str(&format!("^{{{}}}", to_markup(r)));
                }
            }
            Item::Frac { num, den } => {
                s.push_str(&format!("\\frac{{{}}}{{{}}}", to_markup(num), to_markup(den)));
            }
        }
    }
    s
}

const SCRIPT_SCALE: f64 = 0.55;
const FRAC_SCALE: f64 = 0.8;
const GAP: f64 = 0.22;

fn row_width(row: &[Item], size: f64) -> f64 {
    let items: f64 = row.iter().map(|i| item_width(i, size)).sum();
    items + GAP * size * row.len().saturating_sub(1) as f64
}

fn item_width(item: &Item, size: f64) -> f64 {
    match item {
        Item::Sym { label, sup, sub } => {
            let base = template(label).1 * size;
            let s = size * SCRIPT_SCALE;
            let script = sup
                .iter()
                .chain(sub.iter())
                .map(|r| row_width(r, s))
                .fold(0.0, f64::max);
            if script > 0.0 {
                base + 0.1 * size + script
            } else {
                base
            }
        }
        Item::Frac { num, den } => {
            let s = size * FRAC_SCALE;
            row_width(num, s).max(row_width(den, s)) + 0.2 * size
        }
    }
}

struct Builder<'r> {
    rng: &'r mut ChaCha8Rng,
    strokes: Vec<Vec<Point>>,
    labels: Vec<String>,
    /// stroke ids per symbol
    symbols: Vec<Vec<usize>>,
    relations: Vec<(usize, usize, &'static str)>,
}

impl Builder<'_> {
    fn draw(&mut self, label: &str, x: f64, top: f64, size: f64) -> usize {
        let (template, _) = template(label);
        let scale = size * self.rng.gen_range(0.92..1.08);
        let slant = self.rng.gen_range(-0.08..0.08);
        let jitter = 0.012 * size;
        let mut ids = Vec::new();
        for t in template {
            // jitter the control points, then densify along straight pieces
            // so traces stay smooth at the resampling scale
            let ctrl: Vec<Point> = t
                .iter()
                .map(|&(u, v)| {
                    let dx = self.rng.gen_range(-jitter..=jitter);
                    let dy = self.rng.gen_range(-jitter..=jitter);
                    Point::new(x + (u + slant * (0.5 - v)) * scale + dx, top + v * scale + dy)
                })
                .collect();
            let mut pts = Vec::with_capacity(4 * ctrl.len());
            for w in ctrl.windows(2) {
                for k in 0..4 {
                    let t = k as f64 / 4.0;
                    pts.push(Point::new(w[0].x + t * (w[1].x - w[0].x), w[0].y + t * (w[1].y - w[0].y)));
                }
            }
            pts.push(ctrl[ctrl.len() - 1]);
            ids.push(self.strokes.len());
            self.strokes.push(pts);
            self.labels.push(label.to_string());
        }
        self.symbols.push(ids);
        self.symbols.len() - 1
    }

    /// Places a row whose unit box starts at `top` with height `size`;
    /// returns the head symbol of each item.
    fn row(&mut self, row: &[Item], mut x: f64, top: f64, size: f64) -> Vec<usize> {
        let mut heads = Vec::new();
        for (k, item) in row.iter().enumerate() {
            let width = item_width(item, size);
            let dy = self.rng.gen_range(-0.04..0.04) * size;
            let head = match item {
                Item::Sym { label, sup, sub } => {
                    let base = self.draw(label, x, top + dy, size);
                    let bx = x + template(label).1 * size + 0.1 * size;
                    let s = size * SCRIPT_SCALE;
                    if let Some(r) = sup {
                        let h = self.row(r, bx, top + dy - 0.35 * s, s);
                        self.relations.push((base, h[0], "Sup"));
                    }
                    if let Some(r) = sub {
                        let h = self.row(r, bx, top + dy + size - 0.6 * s, s);
                        self.relations.push((base, h[0], "Sub"));
                    }
                    base
                }
                Item::Frac { num, den } => {
                    let s = size * FRAC_SCALE;
                    let mid = top + 0.5 * size + dy;
                    let (nw, dw) = (row_width(num, s), row_width(den, s));
                    let n = self.row(num, x + 0.1 * size + (width - 0.2 * size - nw) / 2.0, mid - 0.12 * size - s, s);
                    let bar = self.draw_bar(x, mid, width);
                    let d = self.row(den, x + 0.1 * size + (width - 0.2 * size - dw) / 2.0, mid + 0.12 * size, s);
                    self.relations.push((bar, n[0], "Above"));
                    self.relations.push((bar, d[0], "Below"));
                    bar
                }
            };
            if k > 0 {
                let prev = heads[k - 1];
                self.relations.push((prev, head, "Right"));
            }
            heads.push(head);
            x += width + GAP * size;
        }
        heads
    }

    fn draw_bar(&mut self, x: f64, y: f64, length: f64) -> usize {
        let jitter = 0.01 * length;
        let pts = (0..=8)
            .map(|k| {
                let t = k as f64 / 8.0;
                Point::new(x + t * length, y + self.rng.gen_range(-jitter..=jitter))
            })
            .collect();
        self.strokes.push(pts);
        self.labels.push("-".to_string());
        self.symbols.push(vec![self.strokes.len() - 1]);
        self.symbols.len() - 1
    }
}

/// Draws a layout tree; `seed` drives the jitter.
pub fn render(id: &str, row: &[Item], seed: u64) -> Result<(InkExpression, LabelGraph)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    render_with(id, row, &mut rng)
}

fn render_with(id: &str, row: &[Item], rng: &mut ChaCha8Rng) -> Result<(InkExpression, LabelGraph)> {
    let mut b = Builder {
        rng,
        strokes: Vec::new(),
        labels: Vec::new(),
        symbols: Vec::new(),
        relations: Vec::new(),
    };
    // device-like units: 100 per symbol height
    b.row(row, 0.0, 0.0, 100.0);
    let mut edges = BTreeSet::new();
    for ids in &b.symbols {
        for &a in ids {
            for &c in ids {
                if a != c {
                    edges.insert((a, c, SAME_SYMBOL.to_string()));
                }
            }
        }
    }
    for &(sa, sb, rel) in &b.relations {
        for &a in &b.symbols[sa] {
            for &c in &b.symbols[sb] {
                edges.insert((a, c, rel.to_string()));
            }
        }
    }
    let graph = LabelGraph {
        node_labels: b.labels,
        edges,
    };
    graph.validate()?;
    let expr = InkExpression::new(id, b.strokes, Some(format!("${}$", to_markup(row))))?;
    Ok((expr, graph))
}

const OPERANDS: [&str; 11] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "x"];

fn random_row(rng: &mut ChaCha8Rng, budget: usize, depth: usize) -> Vec<Item> {
    let mut row = Vec::new();
    let mut left = budget;
    let mut prev_operand = false;
    while left > 0 {
        let roll: f64 = rng.gen();
        if prev_operand && left >= 2 && roll < 0.35 {
            let op = ["+", "-"][rng.gen_range(0..2)];
            row.push(Item::sym(op));
            left -= 1;
            prev_operand = false;
            continue;
        }
        let item = if depth < 2 && left >= 3 && roll < 0.55 {
            let inner = left - 1;
            let num = rng.gen_range(1..=(inner - 1).min(3));
            let den = rng.gen_range(1..=(inner - num).min(3));
            left -= 1 + num + den;
            Item::Frac {
                num: random_row(rng, num, depth + 1),
                den: random_row(rng, den, depth + 1),
            }
        } else if depth < 2 && left >= 2 && roll < 0.8 {
            let script = rng.gen_range(1..=(left - 1).min(2));
            left -= 1 + script;
            let inner = Some(random_row(rng, script, depth + 1));
            let label = OPERANDS[rng.gen_range(0..OPERANDS.len())].to_string();
            if rng.gen_bool(0.6) {
                Item::Sym {
                    label,
                    sup: inner,
                    sub: None,
                }
            } else {
                Item::Sym {
                    label,
                    sup: None,
                    sub: inner,
                }
            }
        } else {
            left -= 1;
            Item::sym(OPERANDS[rng.gen_range(0..OPERANDS.len())])
        };
        row.push(item);
        prev_operand = true;
    }
    row
}

/// `count` seeded expressions of 1..=`max_symbols` symbols each.
pub fn generate_synthetic(
    seed: u64,
    count: usize,
    max_symbols: usize,
) -> Result<Vec<(InkExpression, LabelGraph)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_symbols = max_symbols.max(1);
    (0..count)
        .map(|k| {
            let target = rng.gen_range(1..=max_symbols);
            let row = random_row(&mut rng, target, 0);
            debug_assert_eq!(row_symbols(&row), target);
            render_with(&format!("synth_{seed}_{k:04}"), &row, &mut rng)
        })
        .collect()
}
