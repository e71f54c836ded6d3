//! Fuzzy relative positioning template edge features.

use std::f64::consts::FRAC_2_PI;

use crate::ink_io::{Point, ResampledStroke};

/// Unit directions right, left, up, down in screen coordinates (y grows
/// downward).
pub const DIRECTIONS: [(f64, f64); 4] = [(1.0, 0.0), (-1.0, 0.0), (0.0, -1.0), (0.0, 1.0)];

/// Indices of `d_e` samples spread evenly over `0..d_n`.
pub fn downsample_indices(d_n: usize, d_e: usize) -> Vec<usize> {
    if d_e == 1 {
        return vec![(d_n - 1) / 2];
    }
    (0..d_e)
        .map(|k| ((k * (d_n - 1)) as f64 / (d_e - 1) as f64).round() as usize)
        .collect()
}

/// Directional memberships of `dst` seen from the centre of `src`, followed by
/// distances: `[right.., left.., up.., down.., dist..]`, each block `d_e` long.
pub fn frpt_features(src: &ResampledStroke, dst: &ResampledStroke, d_e: usize) -> Vec<f64> {
    let n = src.len() as f64;
    let o = Point::new(src.xs.iter().sum::<f64>() / n, src.ys.iter().sum::<f64>() / n);
    let mut out = vec![0.0; 5 * d_e];
    for (k, idx) in downsample_indices(dst.len(), d_e).into_iter().enumerate() {
        let (vx, vy) = (dst.xs[idx] - o.x, dst.ys[idx] - o.y);
        let r = vx.hypot(vy);
        if r == 0.0 {
            continue;
        }
        for (dir, (ex, ey)) in DIRECTIONS.iter().enumerate() {
            let cos = ((vx * ex + vy * ey) / r).clamp(-1.0, 1.0);
            out[dir * d_e + k] = (1.0 - FRAC_2_PI * cos.acos()).max(0.0);
        }
        out[4 * d_e + k] = r;
    }
    out
}
