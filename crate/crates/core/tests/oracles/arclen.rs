//! Arc-length resampling by dense subdivision and table lookup.

use egat_core::ink_io::Point;

pub fn resample(points: &[Point], d_n: usize, sub: usize) -> Vec<Point> {
    let mut dense = vec![points[0]];
    for w in points.windows(2) {
        for k in 1..=sub {
            let t = k as f64 / sub as f64;
            dense.push(Point::new(w[0].x + t * (w[1].x - w[0].x), w[0].y + t * (w[1].y - w[0].y)));
        }
    }
    let mut table = vec![0.0];
    for w in dense.windows(2) {
        let last = *table.last().unwrap();
        table.push(last + w[0].dist(w[1]));
    }
    let total = *table.last().unwrap();
    (0..d_n)
        .map(|k| {
            let s = total * k as f64 / (d_n - 1) as f64;
            let i = table.iter().position(|&c| c >= s).unwrap_or(table.len() - 1).max(1);
            let (c0, c1) = (table[i - 1], table[i]);
            let t = if c1 > c0 { (s - c0) / (c1 - c0) } else { 0.0 };
            let (a, b) = (dense[i - 1], dense[i]);
            Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
        })
        .collect()
}
