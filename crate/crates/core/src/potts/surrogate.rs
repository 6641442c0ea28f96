//! Simulation-based surrogate for `log d(θ)`.
//!
//! Expected sufficient quantities are estimated by simulation on a tensor grid
//! over the prior box, then interpolated: tensor-product cubic interpolation
//! across the offset coordinates at every ψ node, followed by a monotone cubic
//! in ψ.
//! Match fractions are interpolated on the logit scale and cluster fractions
//! on the centered log-ratio scale, which keeps them in range and makes the
//! expected counts sum to the node count exactly. Both are stored as
//! residuals from their independent-field values (ψ = 0, known in closed
//! form), so the regression only has to capture the effect of ψ. `log d`
//! integrates the expected match count along ψ from the closed form at ψ = 0.
//!
//! Cache file (plain text, whitespace separated):
//!
//! ```text
//! pcm-surrogate 1
//! key <hex>
//! m <M>
//! nodes <L>
//! edges <E>
//! design <alpha_points> <psi_points> <sims> <burn_in>
//! seed <seed>
//! point <counts_1 .. counts_M> <matches>     (one line per design point)
//! ```
//!
//! Design points are ordered with ψ fastest, then offset coordinate 2, 3, ...

use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::interp::{isotonic_nondecreasing, simpson, tensor_cubic_weights, Pchip};
use super::{gibbs_sweep, independent_log_d, swendsen_wang_step, PottsGraph, OFFSET_BOUND, PSI_MAX};
use crate::error::{PcmError, Result};
use crate::stats::derive_rng;

pub const SURROGATE_VERSION: u32 = 1;
/// Largest design size `build` accepts.
pub const MAX_DESIGN_POINTS: usize = 250_000;
/// Design-size budget used when choosing the offset grid automatically.
const AUTO_DESIGN_BUDGET: usize = 20_000;
const AUTO_MIN_ALPHA_POINTS: usize = 7;
const AUTO_MAX_ALPHA_POINTS: usize = 21;
const QUADRATURE_INTERVALS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateDesign {
    /// Grid points per offset coordinate, spanning `[-5, 5]`. When unset, the
    /// densest odd count in 7..=21 keeping the design within budget (fewer
    /// only when even 7 exceeds the hard size limit).
    pub alpha_points: Option<usize>,
    /// Grid points in ψ, spanning `[0, 2.5]`.
    pub psi_points: usize,
    /// Fields averaged per design point.
    pub sims: usize,
    /// Sweeps discarded before averaging.
    pub burn_in: usize,
    /// Smallest acceptable `sims`.
    pub min_sims: usize,
}

impl Default for SurrogateDesign {
    fn default() -> Self {
        SurrogateDesign {
            alpha_points: None,
            psi_points: 17,
            sims: 200,
            burn_in: 50,
            min_sims: 200,
        }
    }
}

impl SurrogateDesign {
    /// Offset grid size for `m` clusters.
    pub fn alpha_points_for(&self, m: usize) -> usize {
        if let Some(n) = self.alpha_points {
            return n;
        }
        let dims = m.saturating_sub(1) as u32;
        let size = |n: usize| (n as f64).powi(dims as i32) * self.psi_points as f64;
        let mut n = AUTO_MIN_ALPHA_POINTS;
        while n + 2 <= AUTO_MAX_ALPHA_POINTS && size(n + 2) <= AUTO_DESIGN_BUDGET as f64 {
            n += 2;
        }
        // many clusters: coarsen below the usual floor rather than fail
        while n > 3 && size(n) > MAX_DESIGN_POINTS as f64 {
            n -= 2;
        }
        n
    }

    pub fn alpha_grid(&self, m: usize) -> Vec<f64> {
        grid(-OFFSET_BOUND, OFFSET_BOUND, self.alpha_points_for(m))
    }

    pub fn psi_grid(&self) -> Vec<f64> {
        grid(0.0, PSI_MAX, self.psi_points)
    }

    pub fn n_points(&self, m: usize) -> usize {
        self.alpha_points_for(m).pow(m.saturating_sub(1) as u32) * self.psi_points
    }

    fn validate(&self, m: usize) -> Result<()> {
        if self.sims < self.min_sims {
            return Err(PcmError::InsufficientSimulations {
                got: self.sims,
                floor: self.min_sims,
            });
        }
        if self.alpha_points_for(m) < 3 || self.psi_points < 3 {
            return Err(PcmError::Config(
                "surrogate design needs at least 3 points per coordinate".into(),
            ));
        }
        let n = (self.alpha_points_for(m) as f64).powi(m.saturating_sub(1) as i32) * self.psi_points as f64;
        if n > MAX_DESIGN_POINTS as f64 {
            return Err(PcmError::Config(format!(
                "surrogate design for M = {m} has {n} points; reduce alpha_points"
            )));
        }
        Ok(())
    }
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i + 1 == n {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Cache key for one (graph, M, design, seed) combination.
pub fn cache_key(graph: &PottsGraph, m: usize, design: &SurrogateDesign, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(graph.signature().as_bytes());
    h.update(format!(
        "|v{SURROGATE_VERSION}|m{m}|a{}|p{}|s{}|b{}|seed{seed}",
        design.alpha_points_for(m),
        design.psi_points,
        design.sims,
        design.burn_in
    ));
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateTable {
    pub key: String,
    pub m: usize,
    pub n_nodes: usize,
    pub n_edges: usize,
    /// Design with `alpha_points` resolved for `m`.
    pub design: SurrogateDesign,
    pub seed: u64,
    /// Monte Carlo means per design point: `M` counts then matches.
    pub raw: Vec<Vec<f64>>,
    alpha_grid: Vec<f64>,
    psi_grid: Vec<f64>,
    /// Per design point: centered log-ratios of the M cluster fractions,
    /// minus their independent-field values.
    clr: Vec<Vec<f64>>,
    /// Per design point: logit of the matching fraction, isotonic in ψ, minus
    /// its independent-field value.
    logit_match: Vec<f64>,
}

/// Interpolated expected sufficient quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct Expected {
    pub counts: Vec<f64>,
    pub matches: f64,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Centered offsets, which equal the centered log-ratios of `softmax(a)`.
fn independent_clr(offsets: &[f64]) -> Vec<f64> {
    let mean = offsets.iter().sum::<f64>() / offsets.len() as f64;
    offsets.iter().map(|a| a - mean).collect()
}

/// Logit of `Σ softmax(a)²`, the matching probability of independent labels.
fn independent_logit_match(offsets: &[f64]) -> f64 {
    let max = offsets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = offsets.iter().map(|a| (a - max).exp()).collect();
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    // p = s2 / s², 1 - p = (s² - s2) / s²
    let cross = s * s - s2;
    (s2 / cross).ln()
}

fn simulate_point(
    graph: &PottsGraph,
    offsets: &[f64],
    psi: f64,
    design: &SurrogateDesign,
    seed: u64,
    index: usize,
) -> Vec<f64> {
    let m = offsets.len();
    let mut rng = derive_rng(seed, &[0x5u64, index as u64]);
    let mut labels: Vec<u8> = (0..graph.n_nodes())
        .map(|_| rng.random_range(0..m) as u8)
        .collect();
    let step = |labels: &mut [u8], rng: &mut crate::stats::PcmRng| {
        swendsen_wang_step(labels, offsets, psi, graph, rng);
        gibbs_sweep(labels, offsets, psi, graph, rng);
    };
    for _ in 0..design.burn_in {
        step(&mut labels, &mut rng);
    }
    let mut acc = vec![0.0; m + 1];
    for _ in 0..design.sims {
        step(&mut labels, &mut rng);
        for &c in labels.iter() {
            acc[c as usize] += 1.0;
        }
        acc[m] += graph
            .edges()
            .iter()
            .filter(|&&(a, b)| labels[a] == labels[b])
            .count() as f64;
    }
    acc.iter_mut().for_each(|v| *v /= design.sims as f64);
    acc
}

impl SurrogateTable {
    /// Simulates every design point (in parallel) and fits the interpolator.
    pub fn build(graph: &PottsGraph, m: usize, design: &SurrogateDesign, seed: u64) -> Result<SurrogateTable> {
        design.validate(m)?;
        let design = &SurrogateDesign {
            alpha_points: Some(design.alpha_points_for(m)),
            ..design.clone()
        };
        let n_points = design.n_points(m);
        let alpha_grid = design.alpha_grid(m);
        let psi_grid = design.psi_grid();
        let raw: Vec<Vec<f64>> = (0..n_points)
            .into_par_iter()
            .map(|index| {
                let (offsets, psi) = design_point(index, m, &alpha_grid, &psi_grid);
                simulate_point(graph, &offsets, psi, design, seed, index)
            })
            .collect();
        SurrogateTable::from_raw(
            cache_key(graph, m, design, seed),
            m,
            graph.n_nodes(),
            graph.n_edges(),
            design.clone(),
            seed,
            raw,
        )
    }

    fn from_raw(
        key: String,
        m: usize,
        n_nodes: usize,
        n_edges: usize,
        design: SurrogateDesign,
        seed: u64,
        raw: Vec<Vec<f64>>,
    ) -> Result<SurrogateTable> {
        let alpha_grid = design.alpha_grid(m);
        let psi_grid = design.psi_grid();
        let n_points = design.n_points(m);
        if raw.len() != n_points || raw.iter().any(|r| r.len() != m + 1) {
            return Err(PcmError::Parse("surrogate table has wrong shape".into()));
        }
        let sims = design.sims as f64;
        let eps_count = 0.5 / sims;
        let clr = raw
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let logs: Vec<f64> = r[..m]
                    .iter()
                    .map(|c| ((c + eps_count) / (n_nodes as f64 + m as f64 * eps_count)).ln())
                    .collect();
                let mean = logs.iter().sum::<f64>() / m as f64;
                let base = independent_clr(&design_point(i, m, &alpha_grid, &psi_grid).0);
                logs.into_iter().zip(base).map(|(v, b)| v - mean - b).collect()
            })
            .collect();
        let p = design.psi_points;
        let mut logit_match = vec![0.0; n_points];
        if n_edges > 0 && m > 1 {
            let e = n_edges as f64;
            let eps = 0.5 / (sims * e);
            for (a, chunk) in raw.chunks(p).enumerate() {
                let frac: Vec<f64> = chunk.iter().map(|r| r[m] / e).collect();
                let iso = isotonic_nondecreasing(&frac);
                let base = independent_logit_match(&design_point(a * p, m, &alpha_grid, &psi_grid).0);
                for (j, f) in iso.into_iter().enumerate() {
                    logit_match[a * p + j] = logit(f.clamp(eps, 1.0 - eps)) - base;
                }
            }
        }
        Ok(SurrogateTable {
            key,
            m,
            n_nodes,
            n_edges,
            design,
            seed,
            raw,
            alpha_grid,
            psi_grid,
            clr,
            logit_match,
        })
    }

    fn check_box(&self, offsets: &[f64], psi: f64) -> Result<()> {
        let tol = 1e-9;
        if offsets.len() != self.m {
            return Err(PcmError::Config(format!(
                "surrogate built for M = {}, got {} offsets",
                self.m,
                offsets.len()
            )));
        }
        let inside = offsets.iter().all(|a| a.abs() <= OFFSET_BOUND + tol)
            && (-tol..=PSI_MAX + tol).contains(&psi);
        if !inside {
            return Err(PcmError::Extrapolation(format!(
                "offsets {offsets:?}, psi {psi}"
            )));
        }
        Ok(())
    }

    /// Interpolation weights over offset-grid points.
    fn alpha_weights(&self, offsets: &[f64]) -> Vec<(usize, f64)> {
        let rel: Vec<f64> = offsets[1..].iter().map(|a| a - offsets[0]).collect();
        let spacing = self.alpha_grid[1] - self.alpha_grid[0];
        tensor_cubic_weights(self.alpha_grid.len(), self.alpha_grid[0], spacing, &rel)
    }

    /// Logit match fraction at each ψ node for the given offsets, made
    /// nondecreasing in ψ.
    fn match_curve(&self, offsets: &[f64], weights: &[(usize, f64)]) -> Pchip {
        let p = self.design.psi_points;
        let base = independent_logit_match(offsets);
        let nodes: Vec<f64> = (0..p)
            .map(|j| base + weights.iter().map(|&(a, w)| w * self.logit_match[a * p + j]).sum::<f64>())
            .collect();
        Pchip::new(&self.psi_grid, &isotonic_nondecreasing(&nodes))
    }

    /// Interpolated `E[counts]` and `E[matches]` at `(offsets, ψ)`.
    pub fn expected(&self, offsets: &[f64], psi: f64) -> Result<Expected> {
        self.check_box(offsets, psi)?;
        if self.m == 1 {
            return Ok(Expected {
                counts: vec![self.n_nodes as f64],
                matches: self.n_edges as f64,
            });
        }
        let weights = self.alpha_weights(offsets);
        let p = self.design.psi_points;
        let mut clr = independent_clr(offsets);
        for (eta, out) in clr.iter_mut().enumerate() {
            let nodes: Vec<f64> = (0..p)
                .map(|j| weights.iter().map(|&(a, w)| w * self.clr[a * p + j][eta]).sum())
                .collect();
            *out += Pchip::new(&self.psi_grid, &nodes).eval(psi);
        }
        let max = clr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = clr.iter().map(|v| (v - max).exp()).sum();
        let counts = clr
            .iter()
            .map(|v| self.n_nodes as f64 * (v - max).exp() / total)
            .collect();
        let matches = if self.n_edges == 0 {
            0.0
        } else {
            self.n_edges as f64 * expit(self.match_curve(offsets, &weights).eval(psi))
        };
        Ok(Expected { counts, matches })
    }

    /// `L·log Σ exp(a_η) + ∫_0^ψ E[matches](a, s) ds`.
    pub fn log_d(&self, offsets: &[f64], psi: f64) -> Result<f64> {
        self.check_box(offsets, psi)?;
        let base = independent_log_d(offsets, self.n_nodes);
        if psi == 0.0 || self.n_edges == 0 {
            return Ok(base);
        }
        if self.m == 1 {
            return Ok(base + psi * self.n_edges as f64);
        }
        let curve = self.match_curve(offsets, &self.alpha_weights(offsets));
        let e = self.n_edges as f64;
        let integral = simpson(|s| e * expit(curve.eval(s)), 0.0, psi, QUADRATURE_INTERVALS);
        Ok(base + integral)
    }

    /// Same quantity along the other path: ψ first at zero offsets, then the
    /// offsets at fixed ψ using the interpolated expected counts.
    pub fn log_d_offsets_last(&self, offsets: &[f64], psi: f64) -> Result<f64> {
        self.check_box(offsets, psi)?;
        let zero = vec![0.0; self.m];
        let leg1 = self.log_d(&zero, psi)?;
        let mut err = None;
        let leg2 = simpson(
            |t| {
                let a: Vec<f64> = offsets.iter().map(|v| v * t).collect();
                match self.expected(&a, psi) {
                    Ok(ex) => ex.counts.iter().zip(offsets).map(|(c, v)| c * v).sum(),
                    Err(e) => {
                        err = Some(e);
                        0.0
                    }
                }
            },
            0.0,
            1.0,
            QUADRATURE_INTERVALS,
        );
        match err {
            Some(e) => Err(e),
            None => Ok(leg1 + leg2),
        }
    }

    pub fn design_offsets(&self, index: usize) -> (Vec<f64>, f64) {
        design_point(index, self.m, &self.alpha_grid, &self.psi_grid)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| PcmError::io("<surrogate>", e);
        let d = &self.design;
        writeln!(w, "pcm-surrogate {SURROGATE_VERSION}").map_err(io)?;
        writeln!(w, "key {}", self.key).map_err(io)?;
        writeln!(w, "m {}", self.m).map_err(io)?;
        writeln!(w, "nodes {}", self.n_nodes).map_err(io)?;
        writeln!(w, "edges {}", self.n_edges).map_err(io)?;
        writeln!(
            w,
            "design {} {} {} {}",
            d.alpha_points_for(self.m),
            d.psi_points,
            d.sims,
            d.burn_in
        )
        .map_err(io)?;
        writeln!(w, "seed {}", self.seed).map_err(io)?;
        for r in &self.raw {
            let vals: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            writeln!(w, "point {}", vals.join(" ")).map_err(io)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<SurrogateTable> {
        let bad = |m: &str| PcmError::Parse(format!("surrogate cache: {m}"));
        let mut lines = BufReader::new(r).lines();
        let header = lines
            .next()
            .ok_or_else(|| bad("empty"))?
            .map_err(|e| PcmError::io("<surrogate>", e))?;
        if header.trim() != format!("pcm-surrogate {SURROGATE_VERSION}") {
            return Err(bad("unsupported version"));
        }
        let mut key = None;
        let (mut m, mut nodes, mut edges, mut seed) = (None, None, None, None);
        let mut design = None;
        let mut raw = Vec::new();
        for line in lines {
            let line = line.map_err(|e| PcmError::io("<surrogate>", e))?;
            let mut it = line.split_whitespace();
            let Some(tag) = it.next() else { continue };
            let rest: Vec<&str> = it.collect();
            let one = || rest.first().copied().ok_or_else(|| bad("missing value"));
            match tag {
                "key" => key = Some(one()?.to_string()),
                "m" => m = one()?.parse::<usize>().ok(),
                "nodes" => nodes = one()?.parse::<usize>().ok(),
                "edges" => edges = one()?.parse::<usize>().ok(),
                "seed" => seed = one()?.parse::<u64>().ok(),
                "design" => {
                    if rest.len() != 4 {
                        return Err(bad("design line"));
                    }
                    let u = |i: usize| rest[i].parse::<usize>().map_err(|_| bad("design line"));
                    design = Some(SurrogateDesign {
                        alpha_points: Some(u(0)?),
                        psi_points: u(1)?,
                        sims: u(2)?,
                        burn_in: u(3)?,
                        min_sims: 0,
                    });
                }
                "point" => raw.push(
                    rest.iter()
                        .map(|s| s.parse::<f64>().map_err(|_| bad("point value")))
                        .collect::<Result<Vec<f64>>>()?,
                ),
                _ => return Err(bad("unknown line")),
            }
        }
        match (key, m, nodes, edges, seed, design) {
            (Some(key), Some(m), Some(nodes), Some(edges), Some(seed), Some(design)) => {
                SurrogateTable::from_raw(key, m, nodes, edges, design, seed, raw)
            }
            _ => Err(bad("incomplete header")),
        }
    }
}

/// Offsets (entry 0 pinned at 0) and ψ of design point `index`.
fn design_point(index: usize, m: usize, alpha_grid: &[f64], psi_grid: &[f64]) -> (Vec<f64>, f64) {
    let p = psi_grid.len();
    let psi = psi_grid[index % p];
    let mut rest = index / p;
    let mut offsets = vec![0.0; m];
    for o in offsets.iter_mut().skip(1) {
        *o = alpha_grid[rest % alpha_grid.len()];
        rest /= alpha_grid.len();
    }
    (offsets, psi)
}

/// Loads the cached table for this key from `dir`, or builds and stores it.
pub fn load_or_build(
    dir: Option<&Path>,
    graph: &PottsGraph,
    m: usize,
    design: &SurrogateDesign,
    seed: u64,
) -> Result<(SurrogateTable, Option<PathBuf>, bool)> {
    let key = cache_key(graph, m, design, seed);
    let path = dir.map(|d| d.join(format!("surrogate-{}.txt", &key[..16])));
    if let Some(p) = &path {
        if p.exists() {
            let file = std::fs::File::open(p).map_err(|e| PcmError::io(p, e))?;
            if let Ok(t) = SurrogateTable::read(file) {
                if t.key == key {
                    log::info!("reusing surrogate cache {}", p.display());
                    return Ok((t, path, true));
                }
            }
            log::warn!("ignoring stale surrogate cache {}", p.display());
        }
    }
    log::info!(
        "building surrogate: M = {m}, {} design points, {} fields each",
        design.n_points(m),
        design.sims
    );
    let table = SurrogateTable::build(graph, m, design, seed)?;
    if let Some(p) = &path {
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| PcmError::io(parent, e))?;
        }
        let file = std::fs::File::create(p).map_err(|e| PcmError::io(p, e))?;
        let mut w = std::io::BufWriter::new(file);
        table.write(&mut w)?;
        w.flush().map_err(|e| PcmError::io(p, e))?;
    }
    Ok((table, path, false))
}
