//! Potts prior over label fields on lattice graphs: sufficient quantities,
//! exact normalizing constants for tiny graphs, field simulation, and the
//! simulation-based surrogate for the log normalizing constant.

pub mod interp;
pub mod surrogate;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{PcmError, Result};
use crate::ingest::Group;
use crate::stats::{derive_rng, log_sum_exp, sample_logits};

pub use surrogate::{SurrogateDesign, SurrogateTable};

/// Offsets are confined to `[-OFFSET_BOUND, OFFSET_BOUND]`.
pub const OFFSET_BOUND: f64 = 5.0;
pub const PSI_MAX: f64 = 2.5;
/// Largest label-field count `exact_log_d` will enumerate.
pub const MAX_EXACT_STATES: f64 = 16_777_216.0;

/// Undirected graph with adjacency stored in compressed rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PottsGraph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    starts: Vec<usize>,
    adjacency: Vec<usize>,
}

impl PottsGraph {
    /// Horizontal and vertical neighbor pairs of a `rows × cols` lattice with
    /// node `row * cols + col`.
    pub fn lattice(rows: usize, cols: usize) -> PottsGraph {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let l = r * cols + c;
                if c + 1 < cols {
                    edges.push((l, l + 1));
                }
                if r + 1 < rows {
                    edges.push((l, l + cols));
                }
            }
        }
        PottsGraph::from_edges(rows * cols, &edges)
    }

    /// Builds a simple graph; duplicate pairs and self-loops are dropped.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)]) -> PottsGraph {
        let mut e: Vec<(usize, usize)> = edges
            .iter()
            .filter(|(a, b)| a != b && *a < n_nodes && *b < n_nodes)
            .map(|&(a, b)| (a.min(b), a.max(b)))
            .collect();
        e.sort_unstable();
        e.dedup();
        let mut degree = vec![0usize; n_nodes];
        for &(a, b) in &e {
            degree[a] += 1;
            degree[b] += 1;
        }
        let mut starts = vec![0usize; n_nodes + 1];
        for i in 0..n_nodes {
            starts[i + 1] = starts[i] + degree[i];
        }
        let mut fill = starts.clone();
        let mut adjacency = vec![0usize; starts[n_nodes]];
        for &(a, b) in &e {
            adjacency[fill[a]] = b;
            fill[a] += 1;
            adjacency[fill[b]] = a;
            fill[b] += 1;
        }
        PottsGraph {
            n_nodes,
            edges: e,
            starts,
            adjacency,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[self.starts[node]..self.starts[node + 1]]
    }

    /// Hex digest identifying the node count and edge set.
    pub fn signature(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_nodes as u64).to_le_bytes());
        for &(a, b) in &self.edges {
            h.update((a as u64).to_le_bytes());
            h.update((b as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Potts parameters. `alpha` applies to control (or ungrouped) subjects and
/// `beta`, when present, to cancer subjects. Entry 0 of each is pinned to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PottsParams {
    pub alpha: Vec<f64>,
    pub beta: Option<Vec<f64>>,
    pub psi: f64,
}

impl PottsParams {
    pub fn new(m: usize, two_groups: bool, psi: f64) -> PottsParams {
        PottsParams {
            alpha: vec![0.0; m],
            beta: two_groups.then(|| vec![0.0; m]),
            psi,
        }
    }

    pub fn m(&self) -> usize {
        self.alpha.len()
    }

    pub fn offsets(&self, group: Option<Group>) -> &[f64] {
        match (group, &self.beta) {
            (Some(Group::Cancer), Some(b)) => b,
            _ => &self.alpha,
        }
    }

    pub fn in_box(&self) -> bool {
        let ok = |v: &[f64]| v[0] == 0.0 && v.iter().all(|a| a.abs() <= OFFSET_BOUND);
        ok(&self.alpha)
            && self.beta.as_deref().is_none_or(ok)
            && (0.0..=PSI_MAX).contains(&self.psi)
    }
}

/// Per-cluster label counts and the number of matching adjacent pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SufficientQuantities {
    pub counts: Vec<usize>,
    pub matches: usize,
}

/// Labels are 0-based cluster indices.
pub fn sufficient_quantities(labels: &[u8], m: usize, graph: &PottsGraph) -> SufficientQuantities {
    let mut counts = vec![0usize; m];
    for &c in labels {
        counts[c as usize] += 1;
    }
    let matches = graph
        .edges
        .iter()
        .filter(|&&(a, b)| labels[a] == labels[b])
        .count();
    SufficientQuantities { counts, matches }
}

/// `Σ_η a_η counts_η + ψ·matches`.
pub fn log_pmf_unnorm(labels: &[u8], offsets: &[f64], psi: f64, graph: &PottsGraph) -> f64 {
    let sq = sufficient_quantities(labels, offsets.len(), graph);
    sq.counts
        .iter()
        .zip(offsets)
        .map(|(&c, a)| c as f64 * a)
        .sum::<f64>()
        + psi * sq.matches as f64
}

/// Log normalizing constant and the expected sufficient quantities, by
/// enumerating every label field.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactMoments {
    pub log_d: f64,
    pub counts: Vec<f64>,
    pub matches: f64,
}

fn check_enumerable(m: usize, graph: &PottsGraph) -> Result<()> {
    let states = (m as f64).powi(graph.n_nodes as i32);
    if states > MAX_EXACT_STATES {
        return Err(PcmError::GraphTooLarge { states });
    }
    Ok(())
}

/// Visits every label field in odometer order.
fn enumerate_fields(m: usize, n: usize, mut f: impl FnMut(&[u8])) {
    let mut labels = vec![0u8; n];
    loop {
        f(&labels);
        let mut i = 0;
        loop {
            if i == n {
                return;
            }
            labels[i] += 1;
            if (labels[i] as usize) < m {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
    }
}

pub fn exact_log_d(offsets: &[f64], psi: f64, graph: &PottsGraph) -> Result<f64> {
    Ok(exact_moments(offsets, psi, graph)?.log_d)
}

pub fn exact_moments(offsets: &[f64], psi: f64, graph: &PottsGraph) -> Result<ExactMoments> {
    let m = offsets.len();
    check_enumerable(m, graph)?;
    // first pass for the maximum, second for stable weighted sums
    let mut zmax = f64::NEG_INFINITY;
    enumerate_fields(m, graph.n_nodes, |l| {
        zmax = zmax.max(log_pmf_unnorm(l, offsets, psi, graph));
    });
    let mut total = 0.0;
    let mut counts = vec![0.0; m];
    let mut matches = 0.0;
    enumerate_fields(m, graph.n_nodes, |l| {
        let sq = sufficient_quantities(l, m, graph);
        let z = sq
            .counts
            .iter()
            .zip(offsets)
            .map(|(&c, a)| c as f64 * a)
            .sum::<f64>()
            + psi * sq.matches as f64;
        let w = (z - zmax).exp();
        total += w;
        for (acc, &c) in counts.iter_mut().zip(&sq.counts) {
            *acc += w * c as f64;
        }
        matches += w * sq.matches as f64;
    });
    Ok(ExactMoments {
        log_d: zmax + total.ln(),
        counts: counts.into_iter().map(|c| c / total).collect(),
        matches: matches / total,
    })
}

/// `L · log Σ_η exp(a_η)`, the normalizing constant when `ψ = 0`.
pub fn independent_log_d(offsets: &[f64], n_nodes: usize) -> f64 {
    n_nodes as f64 * log_sum_exp(offsets)
}

/// Full-conditional logits of one node given its neighbors.
pub fn conditional_logits(
    labels: &[u8],
    node: usize,
    offsets: &[f64],
    psi: f64,
    graph: &PottsGraph,
    out: &mut [f64],
) {
    out.copy_from_slice(offsets);
    for &j in graph.neighbors(node) {
        out[labels[j] as usize] += psi;
    }
}

/// One systematic-scan Gibbs sweep over all nodes.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    labels: &mut [u8],
    offsets: &[f64],
    psi: f64,
    graph: &PottsGraph,
    rng: &mut R,
) {
    let m = offsets.len();
    if m == 1 {
        labels.iter_mut().for_each(|c| *c = 0);
        return;
    }
    let mut logits = vec![0.0; m];
    let mut scratch = vec![0.0; m];
    for node in 0..graph.n_nodes {
        conditional_logits(labels, node, offsets, psi, graph, &mut logits);
        labels[node] = sample_logits(rng, &logits, &mut scratch) as u8;
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Swendsen–Wang update with node fields: bonds join equal neighbors with
/// probability `1 - exp(-ψ)`, and each bond cluster takes label `η` with
/// probability proportional to `exp(a_η · size)`.
pub fn swendsen_wang_step<R: Rng + ?Sized>(
    labels: &mut [u8],
    offsets: &[f64],
    psi: f64,
    graph: &PottsGraph,
    rng: &mut R,
) {
    let n = graph.n_nodes;
    let m = offsets.len();
    let p_bond = -(-psi).exp_m1();
    let mut parent: Vec<usize> = (0..n).collect();
    for &(a, b) in &graph.edges {
        if labels[a] == labels[b] && rng.random::<f64>() < p_bond {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut size = vec![0usize; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        size[r] += 1;
    }
    let mut color = vec![u8::MAX; n];
    let mut logits = vec![0.0; m];
    let mut scratch = vec![0.0; m];
    for i in 0..n {
        let r = find(&mut parent, i);
        if color[r] == u8::MAX {
            for (lg, a) in logits.iter_mut().zip(offsets) {
                *lg = a * size[r] as f64;
            }
            color[r] = sample_logits(rng, &logits, &mut scratch) as u8;
        }
        labels[i] = color[r];
    }
}

/// Field drawn by systematic-scan Gibbs from a uniform random start.
pub fn gibbs_sample_field(offsets: &[f64], psi: f64, graph: &PottsGraph, sweeps: usize, seed: u64) -> Vec<u8> {
    let mut rng = derive_rng(seed, &[0x6F775]);
    let m = offsets.len();
    let mut labels: Vec<u8> = (0..graph.n_nodes)
        .map(|_| rng.random_range(0..m) as u8)
        .collect();
    for _ in 0..sweeps.max(1) {
        gibbs_sweep(&mut labels, offsets, psi, graph, &mut rng);
    }
    labels
}

/// Source of `log d(θ)` used by the sampler.
#[derive(Debug, Clone)]
pub enum LogPartition {
    /// Enumeration; tiny graphs only.
    Exact(PottsGraph),
    /// Closed form valid only when `ψ = 0`.
    Independent { n_nodes: usize },
    Surrogate(std::sync::Arc<SurrogateTable>),
}

impl LogPartition {
    pub fn log_d(&self, offsets: &[f64], psi: f64) -> Result<f64> {
        match self {
            LogPartition::Exact(g) => exact_log_d(offsets, psi, g),
            LogPartition::Independent { n_nodes } => {
                if psi != 0.0 {
                    return Err(PcmError::Config(
                        "closed-form normalizing constant requires psi = 0".into(),
                    ));
                }
                Ok(independent_log_d(offsets, *n_nodes))
            }
            LogPartition::Surrogate(t) => t.log_d(offsets, psi),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_structure() {
        let g = PottsGraph::lattice(3, 4);
        assert_eq!(g.n_nodes(), 12);
        assert_eq!(g.n_edges(), 3 * 3 + 2 * 4);
        for i in 0..12 {
            assert!(g.neighbors(i).len() <= 4);
            assert!(!g.neighbors(i).contains(&i));
            for &j in g.neighbors(i) {
                assert!(g.neighbors(j).contains(&i));
            }
        }
        assert_ne!(g.signature(), PottsGraph::lattice(4, 3).signature());
        assert_eq!(g.signature(), PottsGraph::lattice(3, 4).signature());
    }

    #[test]
    fn monochrome_and_checkerboard() {
        let g = PottsGraph::lattice(2, 2);
        let sq = sufficient_quantities(&[1, 1, 1, 1], 2, &g);
        assert_eq!(sq.matches, 4);
        assert_eq!(sq.counts, vec![0, 4]);
        // row-major 2×2 checkerboard
        assert_eq!(sufficient_quantities(&[0, 1, 1, 0], 2, &g).matches, 0);
    }

    #[test]
    fn pmf_special_cases() {
        let g = PottsGraph::lattice(3, 3);
        assert_eq!(log_pmf_unnorm(&[0, 1, 2, 0, 1, 2, 0, 1, 2], &[0.0; 3], 0.0, &g), 0.0);
        let single = PottsGraph::lattice(1, 1);
        assert_eq!(log_pmf_unnorm(&[1], &[0.0, 1.0], 0.7, &single), 1.0);
    }

    #[test]
    fn exact_closed_forms() {
        let g = PottsGraph::lattice(2, 2);
        let v = exact_log_d(&[0.0, 0.0], 1.0, &g).unwrap();
        let e = std::f64::consts::E;
        assert!((v - (2.0 * e.powi(4) + 12.0 * e.powi(2) + 2.0).ln()).abs() < 1e-12);
        let a = [0.0, 0.4, -1.3];
        let v = exact_log_d(&a, 0.0, &g).unwrap();
        assert!((v - independent_log_d(&a, 4)).abs() < 1e-12);
        let v = exact_log_d(&[0.0], 0.8, &PottsGraph::lattice(3, 3)).unwrap();
        assert!((v - 0.8 * 12.0).abs() < 1e-12);
        assert!(exact_log_d(&[0.0, 0.0], 0.0, &PottsGraph::lattice(5, 5)).is_err());
    }

    #[test]
    fn single_cluster_fields_are_constant() {
        let g = PottsGraph::lattice(4, 4);
        assert!(gibbs_sample_field(&[0.0], 2.0, &g, 3, 1).iter().all(|&c| c == 0));
        let mut labels = vec![0u8; 16];
        let mut rng = derive_rng(1, &[]);
        swendsen_wang_step(&mut labels, &[0.0], 1.0, &g, &mut rng);
        assert!(labels.iter().all(|&c| c == 0));
    }

    #[test]
    fn params_box() {
        let mut p = PottsParams::new(3, true, 1.0);
        assert!(p.in_box());
        p.psi = 2.6;
        assert!(!p.in_box());
        p.psi = 0.0;
        p.beta.as_mut().unwrap()[2] = 5.1;
        assert!(!p.in_box());
        assert_eq!(p.offsets(Some(Group::Control)), &[0.0; 3]);
        assert_eq!(p.offsets(Some(Group::Cancer))[2], 5.1);
    }
}
