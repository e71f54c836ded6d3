use std::fmt::Write as _;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{InkExpression, Point};
use crate::error::{Error, Result};

fn syntax(offset: u64, msg: impl Into<String>) -> Error {
    Error::InkmlSyntax {
        offset,
        msg: msg.into(),
    }
}

fn attr(e: &BytesStart<'_>, name: &[u8]) -> Option<String> {
    e.attributes()
        .flatten()
        .find(|a| a.key.local_name().as_ref() == name)
        .and_then(|a| a.unescape_value().ok().map(|v| v.into_owned()))
}

/// Parses the "x y [t ...], x y [t ...]" body of a trace element.
fn parse_trace(name: &str, body: &str) -> Result<Vec<Point>> {
    let mut points = Vec::new();
    for tuple in body.split(',') {
        let mut fields = tuple.split_whitespace();
        let Some(xs) = fields.next() else {
            continue;
        };
        let ys = fields
            .next()
            .ok_or_else(|| Error::Inkml(format!("{name}: tuple '{}' lacks a y value", tuple.trim())))?;
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Inkml(format!("{name}: bad coordinate '{s}'")))
        };
        points.push(Point::new(num(xs)?, num(ys)?));
    }
    if points.is_empty() {
        return Err(Error::Inkml(format!("{name} is empty")));
    }
    Ok(points)
}

/// Reads the trace elements of an InkML document in document order.
///
/// The ground-truth annotation is the first `annotation type="truth"` that is
/// a direct child of the root; the expression id comes from the root-level
/// `annotation type="UI"` when present.
pub fn parse_inkml(bytes: &[u8]) -> Result<InkExpression> {
    let mut reader = Reader::from_reader(bytes);
    let mut depth = 0usize;
    let mut traces: Vec<Vec<Point>> = Vec::new();
    let mut trace: Option<(String, String)> = None;
    // (kind, depth, text) of the annotation being read
    let mut annotation: Option<(String, usize, String)> = None;
    let mut truth = None;
    let mut ui = None;

    loop {
        let event = reader
            .read_event()
            .map_err(|e| syntax(reader.error_position(), e.to_string()))?;
        match event {
            Event::Start(e) => {
                depth += 1;
                match e.local_name().as_ref() {
                    b"trace" => {
                        let name = match attr(&e, b"id") {
                            Some(id) => format!("trace '{id}'"),
                            None => format!("trace #{}", traces.len()),
                        };
                        trace = Some((name, String::new()));
                    }
                    b"annotation" => {
                        let kind = attr(&e, b"type").unwrap_or_default();
                        annotation = Some((kind, depth, String::new()));
                    }
                    _ => {}
                }
            }
            Event::Empty(e) => {
                if e.local_name().as_ref() == b"trace" {
                    let name = match attr(&e, b"id") {
                        Some(id) => format!("trace '{id}'"),
                        None => format!("trace #{}", traces.len()),
                    };
                    return Err(Error::Inkml(format!("{name} is empty")));
                }
            }
            Event::Text(t) => {
                let text = t
                    .unescape()
                    .map_err(|e| syntax(reader.buffer_position(), e.to_string()))?;
                if let Some((_, body)) = trace.as_mut() {
                    body.push_str(&text);
                } else if let Some((_, _, body)) = annotation.as_mut() {
                    body.push_str(&text);
                }
            }
            Event::CData(t) => {
                if let Some((_, _, body)) = annotation.as_mut() {
                    body.push_str(&String::from_utf8_lossy(&t));
                }
            }
            Event::End(e) => {
                if depth == 0 {
                    return Err(syntax(reader.buffer_position(), "unbalanced end tag"));
                }
                match e.local_name().as_ref() {
                    b"trace" => {
                        if let Some((name, body)) = trace.take() {
                            traces.push(parse_trace(&name, &body)?);
                        }
                    }
                    b"annotation" => {
                        if let Some((kind, at, body)) = annotation.take() {
                            // depth 2 = direct child of the root element
                            if at == 2 {
                                let body = body.trim().to_string();
                                if kind == "truth" && truth.is_none() {
                                    truth = Some(body);
                                } else if kind == "UI" && ui.is_none() {
                                    ui = Some(body);
                                }
                            }
                        }
                    }
                    _ => {}
                }
                depth -= 1;
            }
            Event::Eof => {
                if depth != 0 {
                    return Err(syntax(reader.buffer_position(), "unexpected end of document"));
                }
                break;
            }
            _ => {}
        }
    }
    if traces.is_empty() {
        return Err(Error::Inkml("document contains no traces".into()));
    }
    InkExpression::new(ui.unwrap_or_default(), traces, truth)
}

fn escape(s: &str) -> String {
    quick_xml::escape::escape(s).into_owned()
}

/// Writes the subset read by [`parse_inkml`]; coordinates use the shortest
/// round-tripping decimal form, so parse(write(e)) == e.
pub fn write_inkml(expr: &InkExpression) -> String {
    let mut out = String::from("<ink xmlns=\"http://www.w3.org/2003/InkML\">\n");
    if let Some(a) = &expr.annotation {
        let _ = writeln!(out, "<annotation type=\"truth\">{}</annotation>", escape(a));
    }
    let _ = writeln!(out, "<annotation type=\"UI\">{}</annotation>", escape(&expr.id));
    for s in &expr.strokes {
        let body: Vec<String> = s.points.iter().map(|p| format!("{:?} {:?}", p.x, p.y)).collect();
        let _ = writeln!(out, "<trace id=\"{}\">{}</trace>", s.index, body.join(", "));
    }
    out.push_str("</ink>\n");
    out
}
