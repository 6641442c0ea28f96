//! Fixed-bandwidth kernel estimate of the local pair correlation function with
//! translation edge correction.

use std::f64::consts::PI;

use crate::ingest::Rectangle;

/// Epanechnikov kernel with half-width `w`, normalized to integrate to one.
pub fn epanechnikov(t: f64, w: f64) -> f64 {
    if t.abs() > w {
        0.0
    } else {
        let u = t / w;
        0.75 / w * (1.0 - u * u)
    }
}

/// Stoyan's rule of thumb for the kernel half-width.
pub fn stoyan_bandwidth(n_points: usize, area: f64) -> f64 {
    0.15 / (n_points as f64 / area).sqrt()
}

/// Translation edge-correction weight `|W| / |W ∩ (W - v)|` for a rectangle.
/// Infinite when the shifted window no longer overlaps.
pub fn translation_correction(dx: f64, dy: f64, window: &Rectangle) -> f64 {
    let overlap = (window.width() - dx.abs()).max(0.0) * (window.height() - dy.abs()).max(0.0);
    if overlap <= 0.0 {
        f64::INFINITY
    } else {
        window.area() / overlap
    }
}

/// Distances `R/R_d, 2R/R_d, ..., R`.
pub fn r_grid(radius: f64, r_d: usize) -> Vec<f64> {
    (1..=r_d).map(|k| k as f64 * radius / r_d as f64).collect()
}

/// Raw kernel estimate of g(r) over `r_grid` for the points of one region.
/// Returns `None` when fewer than two points are present.
pub fn local_pcf(points: &[(f64, f64)], window: &Rectangle, r_grid: &[f64]) -> Option<Vec<f64>> {
    let m = points.len();
    if m < 2 || r_grid.is_empty() {
        return None;
    }
    let area = window.area();
    let w = stoyan_bandwidth(m, area);
    let mut sums = vec![0.0; r_grid.len()];
    for i in 0..m {
        let (xi, yi) = points[i];
        for &(xj, yj) in &points[i + 1..] {
            let dx = xj - xi;
            let dy = yj - yi;
            let d = (dx * dx + dy * dy).sqrt();
            let lo = r_grid.partition_point(|&r| r < d - w);
            let hi = r_grid.partition_point(|&r| r <= d + w);
            if lo >= hi {
                continue;
            }
            let t = translation_correction(dx, dy, window);
            if !t.is_finite() {
                continue;
            }
            // ordered pairs (i, j) and (j, i) contribute equally
            let weight = 2.0 * t;
            for (s, &r) in sums[lo..hi].iter_mut().zip(&r_grid[lo..hi]) {
                *s += weight * epanechnikov(r - d, w);
            }
        }
    }
    let norm = area / (2.0 * PI * (m * (m - 1)) as f64);
    Some(
        sums.iter()
            .zip(r_grid)
            .map(|(s, &r)| (norm * s / r).max(0.0))
            .collect(),
    )
}
