//! Stroke data: InkML and LG parsing, resampling, normalization and
//! synthetic fixtures.

mod inkml;
mod lg;
mod pack;
mod preprocess;
pub mod synth;

pub use inkml::{parse_inkml, write_inkml};
pub use lg::{parse_lg, serialize_lg};
pub use pack::{write_pack, Pack, PackEntry, PACK_MAGIC};
pub use preprocess::{normalize_expression, preprocess, resample_stroke};
pub use synth::generate_synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub points: Vec<Point>,
    /// Writing-order position within the expression.
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InkExpression {
    pub id: String,
    pub strokes: Vec<Stroke>,
    pub annotation: Option<String>,
}

impl InkExpression {
    /// Builds an expression from point lists in writing order.
    pub fn new(
        id: impl Into<String>,
        traces: Vec<Vec<Point>>,
        annotation: Option<String>,
    ) -> Result<Self> {
        let id = id.into();
        if traces.is_empty() {
            return Err(Error::Inkml(format!("expression {id} has no strokes")));
        }
        let mut strokes = Vec::with_capacity(traces.len());
        for (index, points) in traces.into_iter().enumerate() {
            if points.is_empty() {
                return Err(Error::Inkml(format!("stroke {index} of {id} is empty")));
            }
            if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
                return Err(Error::Inkml(format!("stroke {index} of {id} has non-finite points")));
            }
            strokes.push(Stroke { points, index });
        }
        Ok(Self {
            id,
            strokes,
            annotation,
        })
    }

    pub fn len(&self) -> usize {
        self.strokes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strokes.is_empty()
    }
}

/// A stroke resampled to `d_n` points, stored as separate coordinate rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResampledStroke {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl ResampledStroke {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn point(&self, k: usize) -> Point {
        Point::new(self.xs[k], self.ys[k])
    }

    pub fn points(&self) -> Vec<Point> {
        self.xs.iter().zip(&self.ys).map(|(&x, &y)| Point::new(x, y)).collect()
    }

    pub fn from_points(points: &[Point]) -> Self {
        Self {
            xs: points.iter().map(|p| p.x).collect(),
            ys: points.iter().map(|p| p.y).collect(),
        }
    }

    pub fn to_stroke(&self, index: usize) -> Stroke {
        Stroke {
            points: self.points(),
            index,
        }
    }
}
