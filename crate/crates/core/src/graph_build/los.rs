//! Line-of-sight visibility between stroke convex hulls.

use super::Adjacency;
use crate::ink_io::{Point, ResampledStroke};

/// Convex hull, counter-clockwise (y up) without collinear vertices.
/// Degenerate inputs give one vertex (a dot) or two (a segment).
#[derive(Clone, Debug)]
pub struct Hull {
    pub vertices: Vec<Point>,
    pub centroid: Point,
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Andrew's monotone chain.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    if hull.len() < 3 {
        // all points collinear: keep the two extremes
        hull = vec![pts[0], pts[pts.len() - 1]];
    }
    hull
}

/// Area centroid of a polygon; vertex mean for dots and segments.
pub fn centroid(vertices: &[Point]) -> Point {
    let n = vertices.len();
    if n >= 3 {
        let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
        for k in 0..n {
            let (p, q) = (vertices[k], vertices[(k + 1) % n]);
            let w = p.x * q.y - q.x * p.y;
            a += w;
            cx += (p.x + q.x) * w;
            cy += (p.y + q.y) * w;
        }
        if a.abs() > 1e-300 {
            return Point::new(cx / (3.0 * a), cy / (3.0 * a));
        }
    }
    let k = n.max(1) as f64;
    Point::new(
        vertices.iter().map(|p| p.x).sum::<f64>() / k,
        vertices.iter().map(|p| p.y).sum::<f64>() / k,
    )
}

impl Hull {
    pub fn of(points: &[Point]) -> Self {
        let vertices = convex_hull(points);
        let centroid = centroid(&vertices);
        Self { vertices, centroid }
    }

    fn bbox(&self) -> (f64, f64, f64, f64) {
        self.vertices.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(x0, y0, x1, y1), p| (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y)),
        )
    }

    /// Whether the segment p-q meets the open interior of this hull.
    ///
    /// A segment hull has no interior; it blocks only on a proper crossing.
    /// A dot never blocks.
    pub fn blocks(&self, p: Point, q: Point) -> bool {
        match self.vertices.len() {
            0 | 1 => false,
            2 => proper_crossing(p, q, self.vertices[0], self.vertices[1]),
            n => {
                // Cyrus-Beck clip against the closed polygon, then test the
                // middle of the clipped chord for strict interiority.
                let (mut t0, mut t1) = (0.0f64, 1.0f64);
                let d = Point::new(q.x - p.x, q.y - p.y);
                for k in 0..n {
                    let (a, b) = (self.vertices[k], self.vertices[(k + 1) % n]);
                    let e = Point::new(b.x - a.x, b.y - a.y);
                    let num = e.x * (p.y - a.y) - e.y * (p.x - a.x);
                    let den = e.x * d.y - e.y * d.x;
                    if den == 0.0 {
                        if num < 0.0 {
                            return false;
                        }
                    } else {
                        let t = -num / den;
                        if den > 0.0 {
                            t0 = t0.max(t);
                        } else {
                            t1 = t1.min(t);
                        }
                    }
                    if t0 >= t1 {
                        return false;
                    }
                }
                let tm = 0.5 * (t0 + t1);
                let m = Point::new(p.x + tm * d.x, p.y + tm * d.y);
                self.strictly_inside(m)
            }
        }
    }

    fn strictly_inside(&self, m: Point) -> bool {
        let n = self.vertices.len();
        (0..n).all(|k| {
            let (a, b) = (self.vertices[k], self.vertices[(k + 1) % n]);
            let len = a.dist(b);
            cross(a, b, m) > 1e-12 * len.max(1e-300)
        })
    }
}

fn orient(a: Point, b: Point, c: Point) -> i8 {
    let v = cross(a, b, c);
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Segments cross at a single point interior to both.
pub fn proper_crossing(p: Point, q: Point, a: Point, b: Point) -> bool {
    let (o1, o2) = (orient(p, q, a), orient(p, q, b));
    let (o3, o4) = (orient(a, b, p), orient(a, b, q));
    o1 * o2 < 0 && o3 * o4 < 0
}

/// True if some ray from the centroid of `hulls[i]` to a vertex of
/// `hulls[j]` avoids the interior of every other hull.
pub fn visible(hulls: &[Hull], i: usize, j: usize) -> bool {
    let c = hulls[i].centroid;
    let boxes: Vec<_> = hulls.iter().map(Hull::bbox).collect();
    hulls[j].vertices.iter().any(|&v| {
        let (x0, x1) = (c.x.min(v.x), c.x.max(v.x));
        let (y0, y1) = (c.y.min(v.y), c.y.max(v.y));
        !hulls.iter().enumerate().any(|(k, h)| {
            if k == i || k == j {
                return false;
            }
            let b = boxes[k];
            if b.2 < x0 || b.0 > x1 || b.3 < y0 || b.1 > y1 {
                return false;
            }
            h.blocks(c, v)
        })
    })
}

/// Symmetric LOS adjacency over the strokes (no self loops).
pub fn line_of_sight(strokes: &[ResampledStroke]) -> Adjacency {
    let hulls: Vec<Hull> = strokes.iter().map(|s| Hull::of(&s.points())).collect();
    line_of_sight_hulls(&hulls)
}

pub fn line_of_sight_hulls(hulls: &[Hull]) -> Adjacency {
    let n = hulls.len();
    let mut adj = Adjacency::new(n);
    for i in 0..n {
        for j in 0..n {
            if i != j && !adj.get(i, j) && visible(hulls, i, j) {
                adj.set_sym(i, j, true);
            }
        }
    }
    adj
}
