use super::{InkExpression, Point, ResampledStroke, Stroke};
use crate::error::{Error, Result};

/// Polyline with cumulative arc length at each vertex; consecutive
/// duplicate points removed.
struct Polyline {
    pts: Vec<Point>,
    cum: Vec<f64>,
}

impl Polyline {
    fn new(points: &[Point]) -> Self {
        let mut pts: Vec<Point> = Vec::with_capacity(points.len());
        for &p in points {
            if pts.last() != Some(&p) {
                pts.push(p);
            }
        }
        let mut cum = vec![0.0];
        for w in pts.windows(2) {
            cum.push(cum[cum.len() - 1] + w[0].dist(w[1]));
        }
        Self { pts, cum }
    }

    fn length(&self) -> f64 {
        self.cum[self.cum.len() - 1]
    }

    /// Point at arc position `s`, clamped to the polyline.
    fn point(&self, s: f64) -> Point {
        let last = self.pts.len() - 2;
        let seg = self.cum.partition_point(|&c| c <= s).saturating_sub(1).min(last);
        let (a, b) = (self.pts[seg], self.pts[seg + 1]);
        let t = ((s - self.cum[seg]) / (self.cum[seg + 1] - self.cum[seg])).clamp(0.0, 1.0);
        Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
    }
}

/// Resamples a polyline to `d_n` points at equal arc-length spacing, the
/// first and last on the stroke's endpoints.
pub fn resample_points(pts: &[Point], d_n: usize) -> Result<ResampledStroke> {
    if d_n < 2 {
        return Err(Error::InvalidArgument(format!("d_n must be at least 2, got {d_n}")));
    }
    if pts.is_empty() {
        return Err(Error::InvalidArgument("cannot resample an empty stroke".into()));
    }
    let line = Polyline::new(pts);
    if line.pts.len() < 2 {
        return Ok(ResampledStroke::from_points(&vec![pts[0]; d_n]));
    }
    let total = line.length();
    let mut out: Vec<Point> = (0..d_n)
        .map(|k| line.point(total * k as f64 / (d_n - 1) as f64))
        .collect();
    out[0] = pts[0];
    out[d_n - 1] = pts[pts.len() - 1];
    Ok(ResampledStroke::from_points(&out))
}

pub fn resample_stroke(stroke: &Stroke, d_n: usize) -> Result<ResampledStroke> {
    resample_points(&stroke.points, d_n)
}

/// Translates the point centroid of all strokes to the origin and scales so
/// that the mean bounding-box diagonal over strokes is 1.
///
/// Zero-diagonal strokes (dots) add 0 to the mean's numerator but still count
/// in its denominator; if every diagonal is 0 the scale is 1.
pub fn normalize_expression(strokes: &[ResampledStroke]) -> Vec<ResampledStroke> {
    let count: usize = strokes.iter().map(|s| s.len()).sum();
    if count == 0 {
        return strokes.to_vec();
    }
    let cx = strokes.iter().flat_map(|s| s.xs.iter()).sum::<f64>() / count as f64;
    let cy = strokes.iter().flat_map(|s| s.ys.iter()).sum::<f64>() / count as f64;
    let diag = |s: &ResampledStroke| {
        let span = |v: &[f64]| {
            let (lo, hi) = v
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
            hi - lo
        };
        span(&s.xs).hypot(span(&s.ys))
    };
    let mean_diag = strokes.iter().map(diag).sum::<f64>() / strokes.len() as f64;
    let scale = if mean_diag > 0.0 { 1.0 / mean_diag } else { 1.0 };
    strokes
        .iter()
        .map(|s| ResampledStroke {
            xs: s.xs.iter().map(|x| (x - cx) * scale).collect(),
            ys: s.ys.iter().map(|y| (y - cy) * scale).collect(),
        })
        .collect()
}

/// Resamples every stroke to `d_n` points, then normalizes the expression.
pub fn preprocess(expr: &InkExpression, d_n: usize) -> Result<Vec<ResampledStroke>> {
    let resampled = expr
        .strokes
        .iter()
        .map(|s| resample_stroke(s, d_n))
        .collect::<Result<Vec<_>>>()?;
    Ok(normalize_expression(&resampled))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stroke(pts: &[(f64, f64)]) -> Stroke {
        Stroke {
            points: pts.iter().map(|&(x, y)| Point::new(x, y)).collect(),
            index: 0,
        }
    }

    #[test]
    fn irregular_line_becomes_uniform() {
        let s = stroke(&[(0.0, 0.0), (0.0, 0.3), (0.0, 7.0), (0.0, 7.5), (0.0, 10.0)]);
        let r = resample_stroke(&s, 150).unwrap();
        assert_eq!(r.len(), 150);
        for k in 0..150 {
            assert!(r.xs[k].abs() < 1e-12);
            assert!((r.ys[k] - 10.0 * k as f64 / 149.0).abs() < 1e-9, "k={k}");
        }
    }

    #[test]
    fn single_point_is_replicated() {
        let r = resample_stroke(&stroke(&[(2.0, 3.0)]), 150).unwrap();
        assert!(r.points().iter().all(|p| *p == Point::new(2.0, 3.0)));
        let r = resample_stroke(&stroke(&[(1.0, 1.0), (1.0, 1.0)]), 4).unwrap();
        assert_eq!(r.len(), 4);
    }

    #[test]
    fn d_n_below_two_is_rejected() {
        assert!(resample_stroke(&stroke(&[(0.0, 0.0), (1.0, 0.0)]), 1).is_err());
    }

    #[test]
    fn straight_stroke_is_a_fixed_point() {
        let s = stroke(&[(0.0, 0.0), (0.5, 1.0), (0.6, 1.2), (3.0, 6.0)]);
        let r = resample_stroke(&s, 20).unwrap();
        let again = resample_points(&r.points(), 20).unwrap();
        for k in 0..20 {
            assert!(r.point(k).dist(again.point(k)) < 1e-9, "k={k}");
        }
    }

    #[test]
    fn corner_sample_moves_on_second_pass() {
        // middle sample lands on the long leg; the chord back across the
        // corner is shorter than the arc it replaces
        let s = stroke(&[(0.0, 0.0), (3.0, 0.0), (3.0, 1.0)]);
        let r = resample_stroke(&s, 3).unwrap();
        assert_eq!(r.point(1), Point::new(2.0, 0.0));
        let again = resample_points(&r.points(), 3).unwrap();
        assert!(again.point(1).dist(r.point(1)) > 0.1);
    }

    #[test]
    fn diagonals_one_and_three_scale_by_half() {
        let a = ResampledStroke::from_points(&[Point::new(0.0, 0.0), Point::new(0.6, 0.8)]);
        let b = ResampledStroke::from_points(&[Point::new(5.0, 5.0), Point::new(6.8, 7.4)]);
        let n = normalize_expression(&[a, b]);
        // centroid (3.1, 3.3), mean diagonal 2
        assert!((n[0].xs[0] - (0.0 - 3.1) / 2.0).abs() < 1e-12);
        assert!((n[1].ys[1] - (7.4 - 3.3) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn lone_dot_is_only_translated() {
        let d = ResampledStroke::from_points(&[Point::new(4.0, -1.0); 3]);
        let n = normalize_expression(&[d]);
        assert!(n[0].points().iter().all(|p| *p == Point::new(0.0, 0.0)));
    }
}
