//! Posterior reductions of a chain: pivot relabeling, per-region label
//! probabilities, group occupancy, and cluster-level intensity and PCF
//! summaries in original units.

pub mod io;

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{PcmError, Result};
use crate::features::io::FeatureTransform;
use crate::features::invert_features;
use crate::sampler::{Chain, Draw};
use crate::stats::quantile_sorted;

/// Minimum-cost perfect matching on a square `n × n` cost matrix (row-major);
/// `result[row] = column`. Shortest augmenting paths with potentials.
pub fn assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays with a virtual column 0
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![0; n];
    for j in 1..=n {
        result[p[j] - 1] = j - 1;
    }
    result
}

/// Applies `perm` (old label → new label) to every part of a draw. Offsets
/// are re-pinned so the new first entry is 0; the Potts density is invariant
/// to a common shift of all offsets.
pub fn permute_draw(draw: &mut Draw, perm: &[usize]) {
    let m = perm.len();
    for subject in draw.labels.iter_mut() {
        for c in subject.iter_mut() {
            *c = perm[*c as usize] as u8;
        }
    }
    let q = draw.mu.len() / m;
    let old = draw.mu.clone();
    for j in 0..q {
        for (a, &b) in perm.iter().enumerate() {
            draw.mu[j * m + b] = old[j * m + a];
        }
    }
    let repin = |offsets: &mut Vec<f64>| {
        let old = offsets.clone();
        for (a, &b) in perm.iter().enumerate() {
            offsets[b] = old[a];
        }
        let base = offsets[0];
        offsets.iter_mut().for_each(|o| *o -= base);
    };
    repin(&mut draw.theta.alpha);
    if let Some(b) = draw.theta.beta.as_mut() {
        repin(b);
    }
}

/// Pivot relabeling: the highest log-joint draw is the reference and every
/// draw is permuted to maximize label agreement with it. Returns the
/// permutation applied to each draw.
pub fn relabel_chain(chain: &mut Chain) -> Vec<Vec<usize>> {
    let m = chain.meta.m;
    if chain.draws.is_empty() {
        return Vec::new();
    }
    let identity: Vec<usize> = (0..m).collect();
    if m == 1 {
        return vec![identity; chain.draws.len()];
    }
    let pivot_index = chain
        .draws
        .iter()
        .enumerate()
        .fold(0, |best, (i, d)| {
            if d.log_joint > chain.draws[best].log_joint {
                i
            } else {
                best
            }
        });
    let pivot = chain.draws[pivot_index].labels.clone();
    chain
        .draws
        .par_iter_mut()
        .map(|draw| {
            let mut agree = vec![0.0; m * m];
            for (s, p) in draw.labels.iter().zip(&pivot) {
                for (&a, &b) in s.iter().zip(p) {
                    agree[a as usize * m + b as usize] += 1.0;
                }
            }
            let cost: Vec<f64> = agree.iter().map(|v| -v).collect();
            let perm = assignment(&cost, m);
            if perm.iter().enumerate().any(|(a, &b)| a != b) {
                permute_draw(draw, &perm);
            }
            perm
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSummary {
    pub m: usize,
    /// Per subject, `L × M` row-major frequencies.
    pub probs: Vec<Vec<f64>>,
    /// Per subject, 0-based MAP cluster of each region (ties → lower index).
    pub map: Vec<Vec<u8>>,
    /// Group name → mean fraction of retained regions in each cluster.
    pub occupancy: BTreeMap<String, Vec<f64>>,
}

pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Label frequencies across draws and occupancy over retained regions, per
/// group (`all` plus each group present).
pub fn summarize_labels(chain: &Chain) -> Result<LabelSummary> {
    let meta = &chain.meta;
    let m = meta.m;
    let l = meta.rows * meta.cols;
    let t = chain.draws.len();
    if t == 0 {
        return Err(PcmError::TooFewItems("chain has no retained draws".into()));
    }
    let n = meta.subjects.len();
    let mut probs = vec![vec![0.0; l * m]; n];
    for d in &chain.draws {
        for (p, s) in probs.iter_mut().zip(&d.labels) {
            for (r, &c) in s.iter().enumerate() {
                p[r * m + c as usize] += 1.0;
            }
        }
    }
    for p in probs.iter_mut() {
        p.iter_mut().for_each(|v| *v /= t as f64);
    }
    let map = probs
        .iter()
        .map(|p| p.chunks(m).map(|row| argmax_lowest(row) as u8).collect())
        .collect();
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    groups.insert("all".into(), (0..n).collect());
    for (i, g) in meta.groups.iter().enumerate() {
        if let Some(g) = g {
            groups.entry(g.clone()).or_default().push(i);
        }
    }
    let retained: Vec<Vec<bool>> = (0..n).map(|i| meta.retained_flags(i)).collect();
    let mut occupancy = BTreeMap::new();
    for (name, members) in groups {
        let mut occ = vec![0.0; m];
        let total: usize = members
            .iter()
            .map(|&i| retained[i].iter().filter(|&&r| r).count())
            .sum();
        if total == 0 {
            continue;
        }
        for d in &chain.draws {
            for &i in &members {
                for (r, &c) in d.labels[i].iter().enumerate() {
                    if retained[i][r] {
                        occ[c as usize] += 1.0;
                    }
                }
            }
        }
        occ.iter_mut().for_each(|v| *v /= (total * t) as f64);
        occupancy.insert(name, occ);
    }
    Ok(LabelSummary {
        m,
        probs,
        map,
        occupancy,
    })
}

/// Pointwise posterior mean and equal-tailed band with median.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub median: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Band {
    /// `samples[draw][point]`.
    pub fn from_samples(samples: &[Vec<f64>], level: f64) -> Band {
        let p = samples[0].len();
        let tail = (1.0 - level) / 2.0;
        let mut band = Band {
            mean: vec![0.0; p],
            lower: vec![0.0; p],
            median: vec![0.0; p],
            upper: vec![0.0; p],
        };
        let mut col = vec![0.0; samples.len()];
        for k in 0..p {
            for (c, s) in col.iter_mut().zip(samples) {
                *c = s[k];
            }
            band.mean[k] = col.iter().sum::<f64>() / col.len() as f64;
            col.sort_by(f64::total_cmp);
            band.lower[k] = quantile_sorted(&col, tail);
            band.median[k] = quantile_sorted(&col, 0.5);
            band.upper[k] = quantile_sorted(&col, 1.0 - tail);
        }
        band
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummary {
    pub cluster: usize,
    pub intensity: Band,
    pub pcf: Band,
    /// Requested distance → posterior sample of g(r) across draws.
    pub pcf_at: Vec<(f64, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummaries {
    pub r_grid: Vec<f64>,
    pub level: f64,
    pub clusters: Vec<ClusterSummary>,
}

/// Linear interpolation of a curve on `grid` at `r`, which must lie in range.
pub fn interpolate_at(grid: &[f64], values: &[f64], r: f64) -> f64 {
    let i = grid.partition_point(|&g| g < r);
    if i == 0 {
        return values[0];
    }
    if i >= grid.len() {
        return values[grid.len() - 1];
    }
    let (g0, g1) = (grid[i - 1], grid[i]);
    let w = (r - g0) / (g1 - g0);
    values[i - 1] + w * (values[i] - values[i - 1])
}

/// Per-draw inversion of every cluster mean to intensities and a PCF curve.
pub fn summarize_clusters(
    chain: &Chain,
    transform: &FeatureTransform,
    eval_distances: &[f64],
    level: f64,
) -> Result<ClusterSummaries> {
    let meta = &chain.meta;
    let (m, q) = (meta.m, meta.q());
    if chain.draws.is_empty() {
        return Err(PcmError::TooFewItems("chain has no retained draws".into()));
    }
    if transform.basis.k() + transform.h != q || transform.centers.len() != q || transform.scales.len() != q {
        return Err(PcmError::Config(format!(
            "basis with K = {} and H = {} does not match {q} chain columns",
            transform.basis.k(),
            transform.h
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(PcmError::Config(format!("credible level {level} outside (0, 1)")));
    }
    let grid = &transform.basis.r_grid;
    let (lo, hi) = (grid[0], grid[grid.len() - 1]);
    for &r in eval_distances {
        if !(r >= lo && r <= hi) {
            return Err(PcmError::DistanceOutOfRange { r, lo, hi });
        }
    }
    let clusters = (0..m)
        .into_par_iter()
        .map(|eta| {
            let profiles: Vec<_> = chain
                .draws
                .iter()
                .map(|d| {
                    let mu: Vec<f64> = (0..q).map(|j| d.mu[j * m + eta]).collect();
                    invert_features(&mu, &transform.basis, &transform.centers, &transform.scales)
                })
                .collect();
            let intensities: Vec<Vec<f64>> = profiles.iter().map(|p| p.intensities.clone()).collect();
            let curves: Vec<Vec<f64>> = profiles.iter().map(|p| p.pcf.clone()).collect();
            let pcf_at = eval_distances
                .iter()
                .map(|&r| (r, curves.iter().map(|c| interpolate_at(grid, c, r)).collect()))
                .collect();
            ClusterSummary {
                cluster: eta,
                intensity: Band::from_samples(&intensities, level),
                pcf: Band::from_samples(&curves, level),
                pcf_at,
            }
        })
        .collect();
    Ok(ClusterSummaries {
        r_grid: grid.clone(),
        level,
        clusters,
    })
}

/// Posterior mean and band of each θ coordinate.
pub fn summarize_theta(chain: &Chain, level: f64) -> Vec<(String, f64, f64, f64, f64)> {
    let m = chain.meta.m;
    let mut series: Vec<(String, Vec<f64>)> = vec![("psi".into(), chain.draws.iter().map(|d| d.theta.psi).collect())];
    for e in 1..m {
        series.push((format!("alpha_{}", e + 1), chain.draws.iter().map(|d| d.theta.alpha[e]).collect()));
    }
    if chain.meta.two_groups {
        for e in 1..m {
            series.push((
                format!("beta_{}", e + 1),
                chain
                    .draws
                    .iter()
                    .map(|d| d.theta.beta.as_ref().map_or(d.theta.alpha[e], |b| b[e]))
                    .collect(),
            ));
        }
    }
    series
        .into_iter()
        .filter(|(_, s)| !s.is_empty())
        .map(|(name, s)| {
            let b = Band::from_samples(&s.iter().map(|v| vec![*v]).collect::<Vec<_>>(), level);
            (name, b.mean[0], b.lower[0], b.median[0], b.upper[0])
        })
        .collect()
}
