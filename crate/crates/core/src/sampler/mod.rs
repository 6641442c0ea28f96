//! MCMC for the Potts clustering model: Gibbs updates for labels, cluster
//! means, and error variances; random-walk Metropolis for the Potts
//! parameters with a pluggable normalizing constant.

pub mod init;
pub mod io;

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PcmError, Result};
use crate::features::{FeatureMatrix, SubjectMeta};
use crate::ingest::Group;
use crate::potts::{conditional_logits, sufficient_quantities, LogPartition, PottsGraph, PottsParams, OFFSET_BOUND, PSI_MAX};
use crate::stats::{derive_rng, effective_sample_size, sample_logits, PcmRng};

/// Shape and scale of the inverse-gamma prior on each error variance.
pub const NU2_PRIOR_SHAPE: f64 = 1.0;
pub const NU2_PRIOR_SCALE: f64 = 0.01;
/// Largest supported cluster count (labels are written as base-36 digits).
pub const MAX_CLUSTERS: usize = 35;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const GLOBAL_STREAM: u64 = u64::MAX;
const INIT_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Initial random-walk scale for each offset coordinate.
    pub offset_step: f64,
    pub psi_step: f64,
    /// Burn-in iterations between proposal-scale adjustments.
    pub adapt_interval: usize,
    /// Holds ψ at this value instead of sampling it.
    pub fix_psi: Option<f64>,
    pub init_psi: f64,
    pub chains: usize,
    pub kmeans_restarts: usize,
    /// Non-spatial Gibbs sweeps (ψ = 0) run on the warm start before the chain.
    pub pilot_sweeps: usize,
    #[serde(skip)]
    pub m: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 30_000,
            burn_in: 10_000,
            thin: 10,
            offset_step: 0.25,
            psi_step: 0.1,
            adapt_interval: 50,
            fix_psi: None,
            init_psi: 0.5,
            chains: 1,
            kmeans_restarts: 10,
            pilot_sweeps: 500,
            m: 3,
            seed: 1,
        }
    }
}

impl McmcConfig {
    /// Longer run used for the real-data analyses.
    pub fn real_data() -> McmcConfig {
        McmcConfig {
            iterations: 75_000,
            burn_in: 10_000,
            ..McmcConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(PcmError::Config(m));
        if self.burn_in >= self.iterations {
            return fail(format!(
                "burn-in {} must be below iterations {}",
                self.burn_in, self.iterations
            ));
        }
        if self.thin == 0 || self.chains == 0 || self.adapt_interval == 0 {
            return fail("thin, chains and adapt_interval must be positive".into());
        }
        if self.m == 0 || self.m > MAX_CLUSTERS {
            return fail(format!("M = {} outside 1..={MAX_CLUSTERS}", self.m));
        }
        if !(self.offset_step > 0.0 && self.psi_step > 0.0) {
            return fail("proposal scales must be positive".into());
        }
        if let Some(p) = self.fix_psi {
            if !(0.0..=PSI_MAX).contains(&p) {
                return fail(format!("fixed psi {p} outside [0, {PSI_MAX}]"));
            }
        }
        if !(0.0..=PSI_MAX).contains(&self.init_psi) {
            return fail(format!("initial psi {} outside [0, {PSI_MAX}]", self.init_psi));
        }
        Ok(())
    }
}

/// Labels are 0-based; `mu` is `Q × M` row-major (`q * M + η`).
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub labels: Vec<Vec<u8>>,
    pub mu: Vec<f64>,
    pub nu2: Vec<f64>,
    pub theta: PottsParams,
    pub iteration: usize,
}

impl ChainState {
    pub fn m(&self) -> usize {
        self.theta.m()
    }
}

/// Everything the updates need besides the state.
pub struct Model<'a> {
    pub features: &'a FeatureMatrix,
    pub graph: &'a PottsGraph,
    pub log_partition: &'a LogPartition,
    pub two_groups: bool,
}

impl<'a> Model<'a> {
    pub fn new(
        features: &'a FeatureMatrix,
        graph: &'a PottsGraph,
        log_partition: &'a LogPartition,
        two_groups: bool,
    ) -> Result<Model<'a>> {
        if graph.n_nodes() != features.n_regions() {
            return Err(PcmError::Config(format!(
                "graph has {} nodes but subjects have {} regions",
                graph.n_nodes(),
                features.n_regions()
            )));
        }
        if two_groups && !features.has_groups() {
            return Err(PcmError::Config("two-group mode needs a group column".into()));
        }
        Ok(Model {
            features,
            graph,
            log_partition,
            two_groups,
        })
    }

    fn group(&self, n: usize) -> Option<Group> {
        if self.two_groups {
            self.features.subjects[n].group
        } else {
            None
        }
    }

    fn uses_beta(&self, n: usize) -> bool {
        matches!(self.group(n), Some(Group::Cancer))
    }
}

fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean) * (x - mean) / var)
}

/// Per-region feature log-likelihood for every cluster, `L × M`.
fn region_loglik(fm: &FeatureMatrix, n: usize, mu: &[f64], nu2: &[f64], m: usize) -> Vec<f64> {
    let q = fm.q();
    let mut out = vec![0.0; fm.n_regions() * m];
    for l in 0..fm.n_regions() {
        let (vals, mask) = fm.region_values(n, l);
        let row = &mut out[l * m..(l + 1) * m];
        for j in 0..q {
            if !mask[j] {
                continue;
            }
            for (eta, r) in row.iter_mut().enumerate() {
                *r += normal_logpdf(vals[j], mu[j * m + eta], nu2[j]);
            }
        }
    }
    out
}

/// Systematic-scan Gibbs over every region of every subject. Subjects are
/// independent given the other parameters and use their own random streams
/// `derive_rng(seed, [keys.., subject])`.
pub fn update_labels(state: &mut ChainState, model: &Model, seed: u64, keys: &[u64]) {
    let m = state.m();
    let fm = model.features;
    let graph = model.graph;
    let theta = &state.theta;
    let (mu, nu2) = (&state.mu, &state.nu2);
    state
        .labels
        .par_iter_mut()
        .enumerate()
        .for_each(|(n, labels)| {
            if m == 1 {
                labels.iter_mut().for_each(|c| *c = 0);
                return;
            }
            let mut stream: Vec<u64> = keys.to_vec();
            stream.push(n as u64);
            let mut rng = derive_rng(seed, &stream);
            let loglik = region_loglik(fm, n, mu, nu2, m);
            let offsets = theta.offsets(model.group(n));
            let mut logits = vec![0.0; m];
            let mut scratch = vec![0.0; m];
            for l in 0..graph.n_nodes() {
                conditional_logits(labels, l, offsets, theta.psi, graph, &mut logits);
                for (lg, ll) in logits.iter_mut().zip(&loglik[l * m..(l + 1) * m]) {
                    *lg += ll;
                }
                labels[l] = sample_logits(&mut rng, &logits, &mut scratch) as u8;
            }
        });
}

/// Conjugate normal draw of every `μ_qη` under the `N(0, 1)` prior.
pub fn update_means<R: Rng + ?Sized>(state: &mut ChainState, fm: &FeatureMatrix, rng: &mut R) {
    let m = state.m();
    let q = fm.q();
    let mut count = vec![0.0; q * m];
    let mut sum = vec![0.0; q * m];
    for (n, labels) in state.labels.iter().enumerate() {
        for (l, &c) in labels.iter().enumerate() {
            let (vals, mask) = fm.region_values(n, l);
            for j in 0..q {
                if mask[j] {
                    count[j * m + c as usize] += 1.0;
                    sum[j * m + c as usize] += vals[j];
                }
            }
        }
    }
    for j in 0..q {
        for eta in 0..m {
            let i = j * m + eta;
            let precision = count[i] / state.nu2[j] + 1.0;
            let mean = sum[i] / state.nu2[j] / precision;
            let z: f64 = rng.sample(StandardNormal);
            state.mu[i] = mean + z / precision.sqrt();
        }
    }
}

/// Conjugate inverse-gamma draw of every `ν²_q`.
pub fn update_variances<R: Rng + ?Sized>(state: &mut ChainState, fm: &FeatureMatrix, rng: &mut R) {
    let m = state.m();
    let q = fm.q();
    let mut count = vec![0.0; q];
    let mut ss = vec![0.0; q];
    for (n, labels) in state.labels.iter().enumerate() {
        for (l, &c) in labels.iter().enumerate() {
            let (vals, mask) = fm.region_values(n, l);
            for j in 0..q {
                if mask[j] {
                    let r = vals[j] - state.mu[j * m + c as usize];
                    count[j] += 1.0;
                    ss[j] += r * r;
                }
            }
        }
    }
    for j in 0..q {
        let shape = NU2_PRIOR_SHAPE + 0.5 * count[j];
        let rate = NU2_PRIOR_SCALE + 0.5 * ss[j];
        let g: f64 = Gamma::new(shape, 1.0 / rate)
            .expect("gamma parameters are positive")
            .sample(rng);
        state.nu2[j] = 1.0 / g;
    }
}

/// Label sufficient quantities pooled within each offset group.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledQuantities {
    pub counts_alpha: Vec<f64>,
    pub counts_beta: Vec<f64>,
    pub matches: f64,
    pub n_alpha: usize,
    pub n_beta: usize,
}

pub fn pooled_quantities(state: &ChainState, model: &Model) -> PooledQuantities {
    let m = state.m();
    let mut p = PooledQuantities {
        counts_alpha: vec![0.0; m],
        counts_beta: vec![0.0; m],
        matches: 0.0,
        n_alpha: 0,
        n_beta: 0,
    };
    for (n, labels) in state.labels.iter().enumerate() {
        let sq = sufficient_quantities(labels, m, model.graph);
        let (counts, k) = if model.uses_beta(n) {
            (&mut p.counts_beta, &mut p.n_beta)
        } else {
            (&mut p.counts_alpha, &mut p.n_alpha)
        };
        *k += 1;
        for (a, c) in counts.iter_mut().zip(&sq.counts) {
            *a += *c as f64;
        }
        p.matches += sq.matches as f64;
    }
    p
}

/// `Σ_n z_n(θ) - Σ_n log d(θ)` for the pooled quantities.
pub fn potts_log_lik(theta: &PottsParams, pooled: &PooledQuantities, lp: &LogPartition) -> Result<f64> {
    let dot = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
    let mut v = dot(&theta.alpha, &pooled.counts_alpha) + theta.psi * pooled.matches;
    if pooled.n_alpha > 0 {
        v -= pooled.n_alpha as f64 * lp.log_d(&theta.alpha, theta.psi)?;
    }
    if pooled.n_beta > 0 {
        let beta = theta.beta.as_deref().unwrap_or(&theta.alpha);
        v += dot(beta, &pooled.counts_beta);
        v -= pooled.n_beta as f64 * lp.log_d(beta, theta.psi)?;
    }
    Ok(v)
}

/// One coordinate of θ targeted by the Metropolis step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ThetaCoord {
    Alpha(usize),
    Beta(usize),
    Psi,
}

impl ThetaCoord {
    pub fn name(&self) -> String {
        match self {
            ThetaCoord::Alpha(e) => format!("alpha_{}", e + 1),
            ThetaCoord::Beta(e) => format!("beta_{}", e + 1),
            ThetaCoord::Psi => "psi".into(),
        }
    }
}

/// Sampled coordinates: offsets 2..M, then ψ unless fixed.
pub fn theta_coords(m: usize, two_groups: bool, psi_fixed: bool) -> Vec<ThetaCoord> {
    let mut c: Vec<ThetaCoord> = (1..m).map(ThetaCoord::Alpha).collect();
    if two_groups {
        c.extend((1..m).map(ThetaCoord::Beta));
    }
    if !psi_fixed {
        c.push(ThetaCoord::Psi);
    }
    c
}

fn with_coord(theta: &PottsParams, coord: ThetaCoord, value: f64) -> PottsParams {
    let mut t = theta.clone();
    match coord {
        ThetaCoord::Alpha(e) => t.alpha[e] = value,
        ThetaCoord::Beta(e) => {
            if let Some(b) = t.beta.as_mut() {
                b[e] = value
            }
        }
        ThetaCoord::Psi => t.psi = value,
    }
    t
}

fn coord_value(theta: &PottsParams, coord: ThetaCoord) -> f64 {
    match coord {
        ThetaCoord::Alpha(e) => theta.alpha[e],
        ThetaCoord::Beta(e) => theta.beta.as_ref().map_or(0.0, |b| b[e]),
        ThetaCoord::Psi => theta.psi,
    }
}

/// Random-walk Metropolis on one coordinate with the uniform box prior.
/// Returns whether the proposal was accepted; `current` caches the Potts
/// log-likelihood at the current θ and is updated on acceptance.
pub fn metropolis_theta<R: Rng + ?Sized>(
    state: &mut ChainState,
    coord: ThetaCoord,
    step: f64,
    pooled: &PooledQuantities,
    lp: &LogPartition,
    current: &mut f64,
    rng: &mut R,
) -> Result<bool> {
    let z: f64 = rng.sample(StandardNormal);
    let value = coord_value(&state.theta, coord) + step * z;
    let u: f64 = rng.random();
    let in_box = match coord {
        ThetaCoord::Psi => (0.0..=PSI_MAX).contains(&value),
        _ => value.abs() <= OFFSET_BOUND,
    };
    if !in_box {
        return Ok(false);
    }
    let proposal = with_coord(&state.theta, coord, value);
    let proposed = potts_log_lik(&proposal, pooled, lp)?;
    if u.ln() < proposed - *current {
        state.theta = proposal;
        *current = proposed;
        Ok(true)
    } else {
        Ok(false)
    }
}

/// Log of the unnormalized joint density of the state and the features.
pub fn log_joint(state: &ChainState, model: &Model) -> Result<f64> {
    let m = state.m();
    let fm = model.features;
    let mut v = 0.0;
    for (n, labels) in state.labels.iter().enumerate() {
        for (l, &c) in labels.iter().enumerate() {
            let (vals, mask) = fm.region_values(n, l);
            for j in 0..fm.q() {
                if mask[j] {
                    v += normal_logpdf(vals[j], state.mu[j * m + c as usize], state.nu2[j]);
                }
            }
        }
    }
    v += potts_log_lik(&state.theta, &pooled_quantities(state, model), model.log_partition)?;
    v += state.mu.iter().map(|x| normal_logpdf(*x, 0.0, 1.0)).sum::<f64>();
    for s in &state.nu2 {
        // inverse-gamma log density up to a constant
        v += -(NU2_PRIOR_SHAPE + 1.0) * s.ln() - NU2_PRIOR_SCALE / s;
    }
    Ok(v)
}

/// Warm start: labels from the best non-spatial mixture fit (EM from
/// k-means starts), neighbor majority for featureless regions; means and
/// variances from those labels.
pub fn initial_state(model: &Model, config: &McmcConfig, chain: usize) -> Result<ChainState> {
    let fm = model.features;
    let m = config.m;
    let q = fm.q();
    let n_regions = fm.n_regions();
    let mut rng = derive_rng(config.seed, &[chain as u64, INIT_STREAM]);
    let mut labels = vec![vec![u8::MAX; n_regions]; fm.n_subjects()];
    if m == 1 {
        labels.iter_mut().for_each(|s| s.fill(0));
    } else {
        let rows: Vec<(&[f64], &[bool])> = (0..fm.n_subjects())
            .flat_map(|n| (0..n_regions).map(move |l| fm.region_values(n, l)))
            .collect();
        let fit = init::mixture_em(&rows, m, config.kmeans_restarts, true, &mut rng)?;
        for (i, c) in fit.labels.into_iter().enumerate() {
            if let Some(c) = c {
                labels[i / n_regions][i % n_regions] = c as u8;
            }
        }
    }
    for subject in labels.iter_mut() {
        // featureless regions take the majority label of assigned neighbors
        for l in 0..n_regions {
            if subject[l] != u8::MAX {
                continue;
            }
            let mut votes = vec![0usize; m];
            for &j in model.graph.neighbors(l) {
                if subject[j] != u8::MAX {
                    votes[subject[j] as usize] += 1;
                }
            }
            let best = (0..m).fold(0, |b, e| if votes[e] > votes[b] { e } else { b });
            subject[l] = best as u8;
        }
    }
    let mut mu = vec![0.0; q * m];
    let mut count = vec![0.0; q * m];
    for (n, subject) in labels.iter().enumerate() {
        for (l, &c) in subject.iter().enumerate() {
            let (vals, mask) = fm.region_values(n, l);
            for j in 0..q {
                if mask[j] {
                    mu[j * m + c as usize] += vals[j];
                    count[j * m + c as usize] += 1.0;
                }
            }
        }
    }
    for (v, c) in mu.iter_mut().zip(&count) {
        if *c > 0.0 {
            *v /= c;
        }
    }
    let mut ss = vec![0.0; q];
    let mut nq = vec![0.0; q];
    for (n, subject) in labels.iter().enumerate() {
        for (l, &c) in subject.iter().enumerate() {
            let (vals, mask) = fm.region_values(n, l);
            for j in 0..q {
                if mask[j] {
                    ss[j] += (vals[j] - mu[j * m + c as usize]).powi(2);
                    nq[j] += 1.0;
                }
            }
        }
    }
    let nu2 = ss
        .iter()
        .zip(&nq)
        .map(|(s, c)| if *c > 0.0 { (s / c).max(1e-4) } else { 1.0 })
        .collect();
    let mut state = ChainState {
        labels,
        mu,
        nu2,
        theta: PottsParams::new(m, model.two_groups, 0.0),
        iteration: 0,
    };
    if m > 1 && config.pilot_sweeps > 0 {
        let flat = LogPartition::Independent { n_nodes: n_regions };
        let pilot = Model { log_partition: &flat, ..*model };
        for t in 0..config.pilot_sweeps as u64 {
            update_labels(&mut state, &pilot, config.seed, &[chain as u64, INIT_STREAM, t]);
            update_means(&mut state, fm, &mut rng);
            update_variances(&mut state, fm, &mut rng);
        }
    }
    state.theta.psi = config.fix_psi.unwrap_or(config.init_psi);
    Ok(state)
}

/// One retained post-burn-in state.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub iteration: usize,
    pub log_joint: f64,
    pub theta: PottsParams,
    pub nu2: Vec<f64>,
    pub mu: Vec<f64>,
    pub labels: Vec<Vec<u8>>,
}

/// Identifies the data and model a chain was run on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub subjects: Vec<String>,
    pub groups: Vec<Option<String>>,
    pub rows: usize,
    pub cols: usize,
    pub m: usize,
    pub column_names: Vec<String>,
    pub two_groups: bool,
    pub seed: u64,
    pub chain: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Per subject, a 0/1 string over regions.
    pub retained: Vec<String>,
}

impl ChainMeta {
    pub fn q(&self) -> usize {
        self.column_names.len()
    }

    pub fn subject_meta(&self) -> Vec<SubjectMeta> {
        self.subjects
            .iter()
            .zip(&self.groups)
            .map(|(id, g)| SubjectMeta {
                id: id.clone(),
                group: g.as_deref().and_then(Group::parse),
            })
            .collect()
    }

    pub fn retained_flags(&self, subject: usize) -> Vec<bool> {
        self.retained[subject].bytes().map(|b| b == b'1').collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub chain: usize,
    pub draws: usize,
    /// Post-burn-in acceptance rate per sampled θ coordinate.
    pub acceptance: BTreeMap<String, f64>,
    /// Proposal scales after burn-in adaptation.
    pub proposal_scales: BTreeMap<String, f64>,
    pub effective_sample_size: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub meta: ChainMeta,
    pub draws: Vec<Draw>,
    pub diagnostics: Diagnostics,
}

fn chain_meta(model: &Model, config: &McmcConfig, chain: usize) -> ChainMeta {
    let fm = model.features;
    let l = fm.n_regions();
    ChainMeta {
        subjects: fm.subjects.iter().map(|s| s.id.clone()).collect(),
        groups: fm
            .subjects
            .iter()
            .map(|s| s.group.map(|g| g.as_str().to_string()))
            .collect(),
        rows: fm.rows,
        cols: fm.cols,
        m: config.m,
        column_names: fm.column_names.clone(),
        two_groups: model.two_groups,
        seed: config.seed,
        chain,
        iterations: config.iterations,
        burn_in: config.burn_in,
        thin: config.thin,
        retained: (0..fm.n_subjects())
            .map(|n| {
                fm.retained[n * l..(n + 1) * l]
                    .iter()
                    .map(|&r| if r { '1' } else { '0' })
                    .collect()
            })
            .collect(),
    }
}

fn check_finite(state: &ChainState, iteration: usize) -> Result<()> {
    if let Some(i) = state.mu.iter().position(|v| !v.is_finite()) {
        return Err(PcmError::NonFinite {
            iteration,
            what: format!("mu[{i}]"),
        });
    }
    if let Some(i) = state.nu2.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(PcmError::NonFinite {
            iteration,
            what: format!("nu2[{i}]"),
        });
    }
    Ok(())
}

/// Runs one chain from the k-means warm start.
pub fn run_chain(model: &Model, config: &McmcConfig, chain: usize) -> Result<Chain> {
    config.validate()?;
    let state = initial_state(model, config, chain)?;
    run_chain_from(model, config, chain, state)
}

/// Runs one chain from a given initial state. Iteration `t` draws labels
/// from streams keyed by `(chain, t, subject)` and everything else from
/// `(chain, t, GLOBAL)`, so the output is a pure function of the seed.
pub fn run_chain_from(model: &Model, config: &McmcConfig, chain: usize, mut state: ChainState) -> Result<Chain> {
    config.validate()?;
    let m = config.m;
    if state.m() != m {
        return Err(PcmError::Config("initial state has the wrong cluster count".into()));
    }
    let coords = theta_coords(m, model.two_groups, config.fix_psi.is_some());
    let mut steps: Vec<f64> = coords
        .iter()
        .map(|c| match c {
            ThetaCoord::Psi => config.psi_step,
            _ => config.offset_step,
        })
        .collect();
    let mut window = vec![(0usize, 0usize); coords.len()];
    let mut post = vec![(0usize, 0usize); coords.len()];
    let mut draws = Vec::new();
    for t in 1..=config.iterations {
        let c = chain as u64;
        update_labels(&mut state, model, config.seed, &[c, t as u64]);
        let mut rng: PcmRng = derive_rng(config.seed, &[c, t as u64, GLOBAL_STREAM]);
        update_means(&mut state, model.features, &mut rng);
        update_variances(&mut state, model.features, &mut rng);
        check_finite(&state, t)?;
        if !coords.is_empty() {
            let pooled = pooled_quantities(&state, model);
            let mut current = potts_log_lik(&state.theta, &pooled, model.log_partition)?;
            if !current.is_finite() {
                return Err(PcmError::NonFinite {
                    iteration: t,
                    what: "potts log-likelihood".into(),
                });
            }
            for (i, &coord) in coords.iter().enumerate() {
                let accepted = metropolis_theta(
                    &mut state,
                    coord,
                    steps[i],
                    &pooled,
                    model.log_partition,
                    &mut current,
                    &mut rng,
                )?;
                let bucket = if t <= config.burn_in { &mut window[i] } else { &mut post[i] };
                bucket.0 += accepted as usize;
                bucket.1 += 1;
            }
        }
        state.iteration = t;
        if t <= config.burn_in && t % config.adapt_interval == 0 {
            for (i, w) in window.iter_mut().enumerate() {
                let rate = w.0 as f64 / w.1.max(1) as f64;
                if rate < 0.2 {
                    steps[i] *= 0.8;
                } else if rate > 0.5 {
                    steps[i] *= 1.25;
                }
                steps[i] = steps[i].clamp(1e-4, 5.0);
                *w = (0, 0);
            }
        }
        if t > config.burn_in && (t - config.burn_in) % config.thin == 0 {
            let lj = log_joint(&state, model)?;
            if !lj.is_finite() {
                return Err(PcmError::NonFinite {
                    iteration: t,
                    what: "log joint density".into(),
                });
            }
            draws.push(Draw {
                iteration: t,
                log_joint: lj,
                theta: state.theta.clone(),
                nu2: state.nu2.clone(),
                mu: state.mu.clone(),
                labels: state.labels.clone(),
            });
        }
    }
    let meta = chain_meta(model, config, chain);
    let diagnostics = diagnostics(&meta, &draws, &coords, &post, &steps);
    Ok(Chain {
        meta,
        draws,
        diagnostics,
    })
}

fn diagnostics(
    meta: &ChainMeta,
    draws: &[Draw],
    coords: &[ThetaCoord],
    post: &[(usize, usize)],
    steps: &[f64],
) -> Diagnostics {
    let mut acceptance = BTreeMap::new();
    let mut proposal_scales = BTreeMap::new();
    for ((c, p), s) in coords.iter().zip(post).zip(steps) {
        acceptance.insert(c.name(), p.0 as f64 / p.1.max(1) as f64);
        proposal_scales.insert(c.name(), *s);
    }
    let mut ess = BTreeMap::new();
    let series = |f: &dyn Fn(&Draw) -> f64| draws.iter().map(f).collect::<Vec<f64>>();
    ess.insert("log_joint".to_string(), effective_sample_size(&series(&|d| d.log_joint)));
    for c in coords {
        let c = *c;
        ess.insert(c.name(), effective_sample_size(&series(&|d| coord_value(&d.theta, c))));
    }
    let m = meta.m;
    for (j, name) in meta.column_names.iter().enumerate() {
        ess.insert(format!("nu2_{name}"), effective_sample_size(&series(&|d| d.nu2[j])));
        for eta in 0..m {
            ess.insert(
                format!("mu_{name}_{}", eta + 1),
                effective_sample_size(&series(&|d| d.mu[j * m + eta])),
            );
        }
    }
    Diagnostics {
        chain: meta.chain,
        draws: draws.len(),
        acceptance,
        proposal_scales,
        effective_sample_size: ess,
    }
}

/// Independent chains with seeds `(seed, chain)`, run in parallel.
pub fn run_chains(model: &Model, config: &McmcConfig) -> Result<Vec<Chain>> {
    config.validate()?;
    (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(model, config, c))
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn one_feature(values: &[f64]) -> FeatureMatrix {
        FeatureMatrix {
            subjects: vec![SubjectMeta { id: "s".into(), group: None }],
            rows: 1,
            cols: values.len(),
            column_names: vec!["x".into()],
            values: values.to_vec(),
            mask: vec![true; values.len()],
            retained: vec![true; values.len()],
            centers: vec![0.0],
            scales: vec![1.0],
        }
    }

    #[test]
    fn likelihood_dominates_label_choice() {
        let fm = one_feature(&[10.0]);
        let g = PottsGraph::lattice(1, 1);
        let lp = LogPartition::Independent { n_nodes: 1 };
        let model = Model::new(&fm, &g, &lp, false).unwrap();
        let mut state = ChainState {
            labels: vec![vec![0]],
            mu: vec![-10.0, 10.0],
            nu2: vec![1.0],
            theta: PottsParams::new(2, false, 0.0),
            iteration: 0,
        };
        for t in 0..20 {
            update_labels(&mut state, &model, 5, &[t]);
            assert_eq!(state.labels[0][0], 1);
        }
    }

    #[test]
    fn single_cluster_labels_are_constant() {
        let fm = one_feature(&[1.0, -2.0, 0.5]);
        let g = PottsGraph::lattice(1, 3);
        let lp = LogPartition::Independent { n_nodes: 3 };
        let model = Model::new(&fm, &g, &lp, false).unwrap();
        let config = McmcConfig {
            iterations: 30,
            burn_in: 10,
            thin: 1,
            m: 1,
            fix_psi: Some(0.0),
            ..McmcConfig::default()
        };
        let chain = run_chain(&model, &config, 0).unwrap();
        assert_eq!(chain.draws.len(), 20);
        assert!(chain.draws.iter().all(|d| d.labels[0].iter().all(|&c| c == 0)));
    }

    #[test]
    fn identical_proposal_is_always_accepted() {
        let fm = one_feature(&[1.0, -2.0]);
        let g = PottsGraph::lattice(1, 2);
        let lp = LogPartition::Exact(g.clone());
        let model = Model::new(&fm, &g, &lp, false).unwrap();
        let mut state = ChainState {
            labels: vec![vec![0, 1]],
            mu: vec![0.0; 2],
            nu2: vec![1.0],
            theta: PottsParams::new(2, false, 0.7),
            iteration: 0,
        };
        let pooled = pooled_quantities(&state, &model);
        let mut current = potts_log_lik(&state.theta, &pooled, &lp).unwrap();
        let mut rng = derive_rng(1, &[]);
        for _ in 0..50 {
            assert!(metropolis_theta(&mut state, ThetaCoord::Alpha(1), 0.0, &pooled, &lp, &mut current, &mut rng).unwrap());
        }
    }

    #[test]
    fn config_validation() {
        assert!(McmcConfig::default().validate().is_ok());
        let bad = McmcConfig { burn_in: 30_000, ..McmcConfig::default() };
        assert!(bad.validate().is_err());
        assert_eq!(McmcConfig::real_data().iterations, 75_000);
        assert!(McmcConfig { m: 36, ..McmcConfig::default() }.validate().is_err());
    }

    #[test]
    fn replay_is_identical() {
        let fm = one_feature(&[1.0, -2.0, 0.5, 3.0, -1.0, 0.2]);
        let g = PottsGraph::lattice(2, 3);
        let lp = LogPartition::Exact(g.clone());
        let model = Model::new(&fm, &g, &lp, false).unwrap();
        let config = McmcConfig {
            iterations: 60,
            burn_in: 20,
            thin: 2,
            m: 2,
            seed: 9,
            ..McmcConfig::default()
        };
        let a = run_chain(&model, &config, 0).unwrap();
        let b = run_chain(&model, &config, 0).unwrap();
        assert_eq!(a, b);
        let c = run_chain(&model, &config, 1).unwrap();
        assert_ne!(a.draws, c.draws);
    }
}
