use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::label_graph::LabelGraph;

fn line_err(line: usize, msg: impl Into<String>) -> Error {
    Error::LgLine {
        line,
        msg: msg.into(),
    }
}

/// Trailing decimal digits of a stroke id ("s12" -> 12, "7" -> 7).
fn numeric_suffix(id: &str) -> Option<u64> {
    let start = id.rfind(|c: char| !c.is_ascii_digit()).map_or(0, |i| i + 1);
    id[start..].parse().ok()
}

/// Parses an LG label graph.
///
/// Stroke ids are mapped to writing order by their numeric suffix when every
/// id has a distinct one, otherwise by declaration order.
pub fn parse_lg(bytes: &[u8]) -> Result<LabelGraph> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Lg(format!("not UTF-8: {e}")))?;
    let mut nodes: Vec<(String, String)> = Vec::new();
    let mut seen = HashMap::new();
    let mut raw_edges: Vec<(usize, String, String, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match fields[0] {
            "N" => {
                if fields.len() < 3 || fields[1].is_empty() || fields[2].is_empty() {
                    return Err(line_err(lineno, "node line needs an id and a label"));
                }
                if seen.insert(fields[1].to_string(), nodes.len()).is_some() {
                    return Err(line_err(lineno, format!("duplicate node id '{}'", fields[1])));
                }
                nodes.push((fields[1].to_string(), fields[2].to_string()));
            }
            "E" => {
                if fields.len() < 4 || fields[3].is_empty() {
                    return Err(line_err(lineno, "edge line needs two ids and a label"));
                }
                raw_edges.push((
                    lineno,
                    fields[1].to_string(),
                    fields[2].to_string(),
                    fields[3].to_string(),
                ));
            }
            tag => return Err(line_err(lineno, format!("unknown line tag '{tag}'"))),
        }
    }

    let suffixes: Option<Vec<u64>> = nodes.iter().map(|(id, _)| numeric_suffix(id)).collect();
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    if let Some(sfx) = suffixes {
        if sfx.iter().collect::<BTreeSet<_>>().len() == sfx.len() {
            order.sort_by_key(|&k| sfx[k]);
        }
    }
    // order[pos] = declaration index; invert to declaration -> position
    let mut position = vec![0; nodes.len()];
    for (pos, &decl) in order.iter().enumerate() {
        position[decl] = pos;
    }
    let node_labels = order.iter().map(|&d| nodes[d].1.clone()).collect();
    let mut edges = BTreeSet::new();
    for (lineno, a, b, label) in raw_edges {
        let resolve = |id: &str| {
            seen.get(id)
                .map(|&d| position[d])
                .ok_or_else(|| line_err(lineno, format!("edge references undeclared node '{id}'")))
        };
        let (src, dst) = (resolve(&a)?, resolve(&b)?);
        if src == dst {
            return Err(line_err(lineno, format!("self edge on '{a}'")));
        }
        edges.insert((src, dst, label));
    }
    let graph = LabelGraph { node_labels, edges };
    graph.validate()?;
    Ok(graph)
}

/// Emits one `N` line per stroke then one `E` line per edge, LF terminated.
pub fn serialize_lg(graph: &LabelGraph) -> String {
    let mut out = String::new();
    for (i, label) in graph.node_labels.iter().enumerate() {
        let _ = writeln!(out, "N, s{i}, {label}, 1.0");
    }
    for (i, j, label) in &graph.edges {
        let _ = writeln!(out, "E, s{i}, s{j}, {label}, 1.0");
    }
    out
}
