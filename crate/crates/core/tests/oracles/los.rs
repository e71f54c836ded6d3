//! Brute-force visibility: gift-wrapped hulls and densely sampled rays.

use egat_core::ink_io::Point;

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Jarvis march, counter-clockwise, collinear points dropped. Each step
/// brute-forces the next vertex: the candidate leaving the fewest points to
/// its right (by signed distance), ties going to the farthest.
pub fn gift_wrap(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let start = pts[0];
    let mut hull = vec![start];
    let mut p = start;
    loop {
        let mut best: Option<(f64, f64, Point)> = None;
        for &q in &pts {
            if q == p {
                continue;
            }
            let len = p.dist(q);
            let worst = pts.iter().map(|&r| cross(p, q, r) / len).fold(f64::INFINITY, f64::min);
            let key = (worst.min(0.0), len);
            if best.is_none_or(|(w, l, _)| key.0 > w + 1e-12 || ((key.0 - w).abs() <= 1e-12 && key.1 > l)) {
                best = Some((key.0, key.1, q));
            }
        }
        let q = best.expect("at least two distinct points").2;
        if q == start || hull.len() > pts.len() {
            break;
        }
        hull.push(q);
        p = q;
    }
    let area: f64 = (0..hull.len()).map(|k| cross(hull[0], hull[k], hull[(k + 1) % hull.len()])).sum();
    if hull.len() < 3 || area.abs() < 1e-12 {
        return vec![pts[0], *pts.last().unwrap()];
    }
    hull
}

pub fn center(h: &[Point]) -> Point {
    if h.len() >= 3 {
        let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
        for k in 0..h.len() {
            let (p, q) = (h[k], h[(k + 1) % h.len()]);
            let w = p.x * q.y - q.x * p.y;
            a += w;
            cx += (p.x + q.x) * w;
            cy += (p.y + q.y) * w;
        }
        return Point::new(cx / (3.0 * a), cy / (3.0 * a));
    }
    let n = h.len() as f64;
    Point::new(h.iter().map(|p| p.x).sum::<f64>() / n, h.iter().map(|p| p.y).sum::<f64>() / n)
}

fn proper(p: Point, q: Point, a: Point, b: Point) -> bool {
    let s = |v: f64| if v > 0.0 { 1 } else if v < 0.0 { -1 } else { 0 };
    s(cross(p, q, a)) * s(cross(p, q, b)) < 0 && s(cross(a, b, p)) * s(cross(a, b, q)) < 0
}

fn inside(h: &[Point], m: Point) -> bool {
    (0..h.len()).all(|k| cross(h[k], h[(k + 1) % h.len()], m) > 1e-12)
}

/// Brute force: some of `samples` evenly spaced points on p-q lies strictly
/// inside the hull. Segment hulls have no interior and block only when
/// crossed.
fn occluded(h: &[Point], p: Point, q: Point, samples: usize) -> bool {
    match h.len() {
        0 | 1 => false,
        2 => proper(p, q, h[0], h[1]),
        _ => (1..samples).any(|s| {
            let t = s as f64 / samples as f64;
            inside(h, Point::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)))
        }),
    }
}

/// Visibility from each hull centre to the other hulls' vertices, every
/// ray checked at `samples` points, symmetrized by OR.
pub fn visibility(strokes: &[Vec<Point>], samples: usize) -> Vec<Vec<bool>> {
    let hulls: Vec<Vec<Point>> = strokes.iter().map(|s| gift_wrap(s)).collect();
    let n = hulls.len();
    let mut vis = vec![vec![false; n]; n];
    for i in 0..n {
        let c = center(&hulls[i]);
        for j in 0..n {
            if i == j {
                continue;
            }
            let seen = hulls[j]
                .iter()
                .any(|&v| !(0..n).any(|k| k != i && k != j && occluded(&hulls[k], c, v, samples)));
            if seen {
                vis[i][j] = true;
                vis[j][i] = true;
            }
        }
    }
    vis
}
