//! k-means with k-means++ seeding, Lloyd iterations, and Hartigan-style
//! single-point transfers, keeping the best of several restarts.

use rand::Rng;

use crate::error::{PcmError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    /// `k × d`, row-major.
    pub centers: Vec<f64>,
    pub within_ss: f64,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn seed_centers<R: Rng + ?Sized>(data: &[f64], d: usize, k: usize, rng: &mut R) -> Vec<f64> {
    let n = data.len() / d;
    let row = |i: usize| &data[i * d..(i + 1) * d];
    let mut centers = Vec::with_capacity(k * d);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(row(first));
    let mut best: Vec<f64> = (0..n).map(|i| dist2(row(i), row(first))).collect();
    while centers.len() < k * d {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, b) in best.iter().enumerate() {
                acc += b;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.extend_from_slice(row(pick));
        for (i, b) in best.iter_mut().enumerate() {
            *b = b.min(dist2(row(i), row(pick)));
        }
    }
    centers
}

fn nearest(x: &[f64], centers: &[f64], d: usize) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.chunks(d).enumerate() {
        let v = dist2(x, c);
        if v < best.1 {
            best = (j, v);
        }
    }
    best.0
}

fn recompute(data: &[f64], d: usize, k: usize, labels: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let mut centers = vec![0.0; k * d];
    let mut sizes = vec![0usize; k];
    for (i, &c) in labels.iter().enumerate() {
        sizes[c] += 1;
        for j in 0..d {
            centers[c * d + j] += data[i * d + j];
        }
    }
    for c in 0..k {
        if sizes[c] > 0 {
            for j in 0..d {
                centers[c * d + j] /= sizes[c] as f64;
            }
        }
    }
    (centers, sizes)
}

fn single_run<R: Rng + ?Sized>(data: &[f64], d: usize, k: usize, rng: &mut R) -> KMeansFit {
    let n = data.len() / d;
    let row = |i: usize| &data[i * d..(i + 1) * d];
    let mut centers = seed_centers(data, d, k, rng);
    let mut labels: Vec<usize> = (0..n).map(|i| nearest(row(i), &centers, d)).collect();
    for _ in 0..100 {
        let (c, sizes) = recompute(data, d, k, &labels);
        centers = c;
        // refill empty clusters with the point farthest from its center
        for e in (0..k).filter(|&e| sizes[e] == 0) {
            let far = (0..n)
                .max_by(|&a, &b| {
                    let da = dist2(row(a), &centers[labels[a] * d..(labels[a] + 1) * d]);
                    let db = dist2(row(b), &centers[labels[b] * d..(labels[b] + 1) * d]);
                    da.total_cmp(&db)
                })
                .unwrap();
            labels[far] = e;
            centers[e * d..(e + 1) * d].copy_from_slice(row(far));
        }
        let next: Vec<usize> = (0..n).map(|i| nearest(row(i), &centers, d)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    let (mut centers, mut sizes) = recompute(data, d, k, &labels);
    // Hartigan transfers: move a point when the exact change in total
    // within-cluster sum of squares is negative
    for _ in 0..50 {
        let mut moved = false;
        for i in 0..n {
            let a = labels[i];
            if sizes[a] <= 1 {
                continue;
            }
            let x = row(i);
            let na = sizes[a] as f64;
            let remove = na / (na - 1.0) * dist2(x, &centers[a * d..(a + 1) * d]);
            let mut best = (a, 0.0);
            for b in (0..k).filter(|&b| b != a) {
                let nb = sizes[b] as f64;
                let add = nb / (nb + 1.0) * dist2(x, &centers[b * d..(b + 1) * d]);
                let delta = add - remove;
                if delta < best.1 - 1e-12 {
                    best = (b, delta);
                }
            }
            if best.0 != a {
                let b = best.0;
                let (na, nb) = (sizes[a] as f64, sizes[b] as f64);
                for j in 0..d {
                    let ca = centers[a * d + j];
                    centers[a * d + j] = (ca * na - x[j]) / (na - 1.0);
                    let cb = centers[b * d + j];
                    centers[b * d + j] = (cb * nb + x[j]) / (nb + 1.0);
                }
                sizes[a] -= 1;
                sizes[b] += 1;
                labels[i] = b;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    let (centers, _) = recompute(data, d, k, &labels);
    let within_ss = (0..n)
        .map(|i| dist2(row(i), &centers[labels[i] * d..(labels[i] + 1) * d]))
        .sum();
    KMeansFit {
        labels,
        centers,
        within_ss,
    }
}

/// Best of `restarts` runs by within-cluster sum of squares; the first run
/// attaining the minimum wins ties.
pub fn kmeans<R: Rng + ?Sized>(data: &[f64], d: usize, k: usize, restarts: usize, rng: &mut R) -> Result<KMeansFit> {
    if d == 0 || data.len() % d != 0 {
        return Err(PcmError::Parse("k-means data shape".into()));
    }
    let n = data.len() / d;
    if k == 0 || n < k {
        return Err(PcmError::TooFewItems(format!("{n} items for {k} clusters")));
    }
    let mut best: Option<KMeansFit> = None;
    for _ in 0..restarts.max(1) {
        let fit = single_run(data, d, k, rng);
        if best.as_ref().is_none_or(|b| fit.within_ss < b.within_ss) {
            best = Some(fit);
        }
    }
    Ok(best.unwrap())
}

/// k-means on the fully observed rows; partially observed rows join the
/// nearest center over their available columns and rows with nothing
/// observed stay unassigned.
pub fn kmeans_masked<R: Rng + ?Sized>(
    rows: &[(&[f64], &[bool])],
    k: usize,
    restarts: usize,
    rng: &mut R,
) -> Result<(Vec<Option<usize>>, KMeansFit)> {
    let d = rows.first().map_or(0, |r| r.0.len());
    let complete: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].1.iter().all(|&m| m)).collect();
    let data: Vec<f64> = complete.iter().flat_map(|&i| rows[i].0.iter().copied()).collect();
    let fit = kmeans(&data, d, k, restarts, rng)?;
    let mut labels = vec![None; rows.len()];
    for (&i, &c) in complete.iter().zip(&fit.labels) {
        labels[i] = Some(c);
    }
    for (i, (vals, mask)) in rows.iter().enumerate() {
        if labels[i].is_some() || !mask.iter().any(|&m| m) {
            continue;
        }
        let mut best = (0, f64::INFINITY);
        for (c, center) in fit.centers.chunks(d).enumerate() {
            let v: f64 = (0..d)
                .filter(|&j| mask[j])
                .map(|j| (vals[j] - center[j]).powi(2))
                .sum();
            if v < best.1 {
                best = (c, v);
            }
        }
        labels[i] = Some(best.0);
    }
    Ok((labels, fit))
}
