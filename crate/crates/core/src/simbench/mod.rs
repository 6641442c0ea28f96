//! Simulation study harness: synthetic datasets with known labels, the
//! spatial and non-spatial mixture fits, k-means baselines, and ARI scoring.

pub mod generate;
pub mod io;

use std::path::PathBuf;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PcmError, Result};
use crate::features::{assemble_named, build_features, FeatureMatrix, PcaBasis};
use crate::gridstats::io::GridStatsTable;
use crate::gridstats::{r_grid, summarize_patterns};
use crate::kmeans::kmeans_masked;
use crate::posterior::{relabel_chain, summarize_labels};
use crate::potts::surrogate::load_or_build;
use crate::potts::{LogPartition, PottsGraph, SurrogateDesign, SurrogateTable};
use crate::sampler::{run_chain, McmcConfig, Model};
use crate::stats::{derive_rng, mean, sample_variance};

pub use generate::{cluster_generators, generate_dataset, ClusterGenerator, Dataset, Process, Regime, ScenarioConfig};

/// Adjusted Rand index between two labelings of the same items.
/// Two single-block partitions score 1.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(PcmError::Config("partitions cover different items".into()));
    }
    let n = a.len();
    if n < 2 {
        return Err(PcmError::TooFewItems(format!("{n} items")));
    }
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().map(|&v| c2(v)).sum();
    let rows: f64 = table.chunks(kb).map(|r| c2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| c2((0..ka).map(|i| table[i * kb + j]).sum())).sum();
    let expected = rows * cols / c2(n as u64);
    let max = 0.5 * (rows + cols);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// ARI over the items labeled in both; missing entries are skipped pairwise.
pub fn adjusted_rand_index_partial(a: &[Option<usize>], b: &[Option<usize>]) -> Result<f64> {
    let (x, y): (Vec<usize>, Vec<usize>) = a
        .iter()
        .zip(b)
        .filter_map(|(p, q)| Some(((*p)?, (*q)?)))
        .unzip();
    adjusted_rand_index(&x, &y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "PCM")]
    Pcm,
    #[serde(rename = "nonspatial-PCM")]
    NonspatialPcm,
    #[serde(rename = "FPCA-G")]
    FpcaG,
    #[serde(rename = "FPCA-S")]
    FpcaS,
    #[serde(rename = "Curve-G")]
    CurveG,
    #[serde(rename = "Curve-S")]
    CurveS,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Pcm,
        Method::NonspatialPcm,
        Method::FpcaG,
        Method::FpcaS,
        Method::CurveG,
        Method::CurveS,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Pcm => "PCM",
            Method::NonspatialPcm => "nonspatial-PCM",
            Method::FpcaG => "FPCA-G",
            Method::FpcaS => "FPCA-S",
            Method::CurveG => "Curve-G",
            Method::CurveS => "Curve-S",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.as_str().eq_ignore_ascii_case(s))
    }

    /// Per-subject methods produce labels that are only comparable within a subject.
    pub fn per_subject(&self) -> bool {
        matches!(self, Method::FpcaS | Method::CurveS)
    }

    pub fn is_mixture(&self) -> bool {
        matches!(self, Method::Pcm | Method::NonspatialPcm)
    }
}

/// Raw curves plus intensities as a standardized matrix, the input of the
/// `Curve-*` baselines. Constant columns are allowed.
pub fn curve_matrix(table: &GridStatsTable) -> Result<FeatureMatrix> {
    let names: Vec<String> = (1..=table.r_grid.len())
        .map(|k| format!("curve_{k}"))
        .chain((1..=table.h).map(|t| format!("lambda_{t}")))
        .collect();
    let curves: Vec<Option<Vec<f64>>> = table
        .summaries
        .iter()
        .flat_map(|s| s.regions.iter().map(|r| r.curve.clone()))
        .collect();
    let intensities: Vec<Option<Vec<f64>>> = table
        .summaries
        .iter()
        .flat_map(|s| s.regions.iter().map(|r| r.intensity.clone()))
        .collect();
    let subjects = crate::features::subjects_of(table);
    assemble_named(
        subjects,
        table.rows,
        table.cols,
        names,
        table.r_grid.len(),
        &curves,
        &intensities,
        false,
    )
}

/// k-means labels over the regions of `fm`, pooled or per subject.
/// Regions without any feature are unlabeled.
pub fn kmeans_labels(fm: &FeatureMatrix, m: usize, per_subject: bool, restarts: usize, seed: u64) -> Result<Vec<Vec<Option<usize>>>> {
    let l = fm.n_regions();
    let rows = |n: usize| -> Vec<(&[f64], &[bool])> { (0..l).map(|r| fm.region_values(n, r)).collect() };
    if per_subject {
        (0..fm.n_subjects())
            .into_par_iter()
            .map(|n| {
                let mut rng = derive_rng(seed, &[n as u64]);
                let subject_rows = rows(n);
                let observed = subject_rows.iter().filter(|r| r.1.iter().all(|&x| x)).count();
                if observed < m {
                    return Err(PcmError::TooFewItems(format!(
                        "subject {} has {observed} complete regions for {m} clusters",
                        fm.subjects[n].id
                    )));
                }
                Ok(kmeans_masked(&subject_rows, m, restarts, &mut rng)?.0)
            })
            .collect()
    } else {
        let all: Vec<(&[f64], &[bool])> = (0..fm.n_subjects()).flat_map(rows).collect();
        let mut rng = derive_rng(seed, &[u64::MAX]);
        let (labels, _) = kmeans_masked(&all, m, restarts, &mut rng)?;
        Ok(labels.chunks(l).map(|c| c.to_vec()).collect())
    }
}

/// Features and curve inputs of one simulated dataset.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub table: GridStatsTable,
    pub features: FeatureMatrix,
    pub basis: PcaBasis,
}

pub fn prepare(dataset: &Dataset, scenario: &ScenarioConfig, r_d: usize, variance_threshold: f64) -> Result<Prepared> {
    let grid = scenario.grid();
    let h = 2;
    let summaries = summarize_patterns(&dataset.patterns, &grid, h, r_d)?;
    let table = GridStatsTable {
        h,
        rows: grid.rows,
        cols: grid.cols,
        r_grid: r_grid(grid.radius(), r_d),
        summaries,
    };
    let (features, basis) = build_features(&table, variance_threshold)?;
    Ok(Prepared { table, features, basis })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub replications: usize,
    pub methods: Vec<Method>,
    pub mcmc: McmcConfig,
    pub surrogate: SurrogateDesign,
    /// Fixed across replications so every fit of the same M shares one table.
    pub surrogate_seed: u64,
    pub kmeans_restarts: usize,
    pub r_d: usize,
    pub variance_threshold: f64,
    pub seed: u64,
    pub cache_dir: Option<PathBuf>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            replications: 20,
            methods: Method::ALL.to_vec(),
            mcmc: McmcConfig {
                iterations: 15_000,
                burn_in: 5_000,
                ..McmcConfig::default()
            },
            surrogate: SurrogateDesign::default(),
            surrogate_seed: 7,
            kmeans_restarts: 25,
            r_d: 512,
            variance_threshold: 0.8,
            seed: 1,
            cache_dir: None,
        }
    }
}

/// Scores of every method on one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub scenario: usize,
    pub replication: usize,
    pub ari: Vec<(Method, f64)>,
}

/// Per subject MAP labels of a mixture fit.
pub fn fit_mixture(
    features: &FeatureMatrix,
    graph: &PottsGraph,
    log_partition: &LogPartition,
    config: &McmcConfig,
) -> Result<Vec<Vec<u8>>> {
    let model = Model::new(features, graph, log_partition, false)?;
    let mut chain = run_chain(&model, config, 0)?;
    relabel_chain(&mut chain);
    Ok(summarize_labels(&chain)?.map)
}

fn score(method: Method, labels: &[Vec<Option<usize>>], truth: &[Vec<u8>], retained: &[Vec<bool>]) -> Result<f64> {
    let keep = |n: usize| -> (Vec<Option<usize>>, Vec<Option<usize>>) {
        labels[n]
            .iter()
            .zip(&truth[n])
            .zip(&retained[n])
            .filter(|(_, &r)| r)
            .map(|((a, &t), _)| (*a, Some(t as usize)))
            .unzip()
    };
    if method.per_subject() {
        let scores = (0..truth.len())
            .map(|n| {
                let (a, b) = keep(n);
                adjusted_rand_index_partial(&a, &b)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(mean(&scores))
    } else {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for n in 0..truth.len() {
            let (x, y) = keep(n);
            a.extend(x);
            b.extend(y);
        }
        adjusted_rand_index_partial(&a, &b)
    }
}

/// Runs every requested method on one generated dataset.
pub fn run_replication(
    scenario: &ScenarioConfig,
    study: &StudyConfig,
    surrogate: Option<&Arc<SurrogateTable>>,
    mcmc_seed: u64,
) -> Result<Vec<(Method, f64)>> {
    let dataset = generate_dataset(scenario)?;
    let prepared = prepare(&dataset, scenario, study.r_d, study.variance_threshold)?;
    let fm = &prepared.features;
    let l = fm.n_regions();
    let retained: Vec<Vec<bool>> = fm.retained.chunks(l).map(|c| c.to_vec()).collect();
    let graph = PottsGraph::lattice(scenario.rows, scenario.cols);
    let mut curves: Option<FeatureMatrix> = None;
    let mut out = Vec::new();
    for &method in &study.methods {
        let labels: Vec<Vec<Option<usize>>> = match method {
            Method::Pcm | Method::NonspatialPcm => {
                let mut config = McmcConfig {
                    m: scenario.m,
                    seed: mcmc_seed,
                    ..study.mcmc.clone()
                };
                let lp = if method == Method::Pcm {
                    let table = surrogate.ok_or_else(|| PcmError::SurrogateMissing(graph.signature()))?;
                    LogPartition::Surrogate(table.clone())
                } else {
                    config.fix_psi = Some(0.0);
                    LogPartition::Independent { n_nodes: l }
                };
                fit_mixture(fm, &graph, &lp, &config)?
                    .into_iter()
                    .map(|s| s.into_iter().map(|c| Some(c as usize)).collect())
                    .collect()
            }
            Method::FpcaG | Method::FpcaS => {
                kmeans_labels(fm, scenario.m, method.per_subject(), study.kmeans_restarts, mcmc_seed)?
            }
            Method::CurveG | Method::CurveS => {
                if curves.is_none() {
                    curves = Some(curve_matrix(&prepared.table)?);
                }
                let cm = curves.as_ref().unwrap();
                kmeans_labels(cm, scenario.m, method.per_subject(), study.kmeans_restarts, mcmc_seed)?
            }
        };
        out.push((method, score(method, &labels, &dataset.truth, &retained)?));
    }
    Ok(out)
}

/// Surrogate for every distinct `M` among the scenarios that need one.
pub fn study_surrogates(
    scenarios: &[ScenarioConfig],
    study: &StudyConfig,
) -> Result<Vec<Option<Arc<SurrogateTable>>>> {
    let needs = study.methods.contains(&Method::Pcm);
    let mut built: Vec<((usize, usize, usize), Arc<SurrogateTable>)> = Vec::new();
    scenarios
        .iter()
        .map(|s| {
            if !needs {
                return Ok(None);
            }
            let key = (s.m, s.rows, s.cols);
            if let Some((_, t)) = built.iter().find(|(k, _)| *k == key) {
                return Ok(Some(t.clone()));
            }
            let graph = PottsGraph::lattice(s.rows, s.cols);
            let (table, _, _) = load_or_build(study.cache_dir.as_deref(), &graph, s.m, &study.surrogate, study.surrogate_seed)?;
            let table = Arc::new(table);
            built.push((key, table.clone()));
            Ok(Some(table))
        })
        .collect()
}

/// Scenario with its replication seed.
pub fn replication_scenario(s: &ScenarioConfig, replication: usize) -> ScenarioConfig {
    let mut rng = derive_rng(s.seed, &[replication as u64, 0x5C3]);
    ScenarioConfig {
        seed: rng.random(),
        ..s.clone()
    }
}

/// All scenario × replication jobs in parallel; results ordered by key.
pub fn run_study(scenarios: &[ScenarioConfig], study: &StudyConfig) -> Result<Vec<ReplicationResult>> {
    let surrogates = study_surrogates(scenarios, study)?;
    let jobs: Vec<(usize, usize)> = (0..scenarios.len())
        .flat_map(|s| (0..study.replications).map(move |r| (s, r)))
        .collect();
    let mut results = jobs
        .into_par_iter()
        .map(|(s, r)| {
            let scenario = replication_scenario(&scenarios[s], r);
            let mcmc_seed = derive_rng(study.seed, &[s as u64, r as u64]).random();
            let ari = run_replication(&scenario, study, surrogates[s].as_ref(), mcmc_seed)?;
            log::info!("scenario {} replication {} done", scenarios[s].label(), r + 1);
            Ok(ReplicationResult {
                scenario: s,
                replication: r,
                ari,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    results.sort_by_key(|r| (r.scenario, r.replication));
    Ok(results)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub scenario: ScenarioConfig,
    pub method: Method,
    pub mean_ari: f64,
    pub sd_ari: f64,
    pub replications: usize,
}

pub fn aggregate(scenarios: &[ScenarioConfig], results: &[ReplicationResult], methods: &[Method]) -> Vec<StudyRow> {
    let mut rows = Vec::new();
    for (s, scenario) in scenarios.iter().enumerate() {
        for &method in methods {
            let v: Vec<f64> = results
                .iter()
                .filter(|r| r.scenario == s)
                .flat_map(|r| r.ari.iter().filter(|(m, _)| *m == method).map(|(_, a)| *a))
                .collect();
            if v.is_empty() {
                continue;
            }
            rows.push(StudyRow {
                scenario: scenario.clone(),
                method,
                mean_ari: mean(&v),
                sd_ari: sample_variance(&v).sqrt(),
                replications: v.len(),
            });
        }
    }
    rows
}

pub fn write_study<W: std::io::Write>(w: W, rows: &[StudyRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["m", "psi", "subjects", "regime", "method", "mean_ari", "sd_ari", "replications"])?;
    for r in rows {
        out.write_record([
            r.scenario.m.to_string(),
            r.scenario.psi.to_string(),
            r.scenario.subjects.to_string(),
            r.scenario.regime.as_str().to_string(),
            r.method.as_str().to_string(),
            r.mean_ari.to_string(),
            r.sd_ari.to_string(),
            r.replications.to_string(),
        ])?;
    }
    out.flush().map_err(|e| PcmError::io("<study>", e))
}

/// One step of the cluster-count search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectStep {
    pub m: usize,
    pub occupancy: Vec<f64>,
    pub min_occupancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub selected: usize,
    pub steps: Vec<SelectStep>,
}

pub fn write_selection<W: std::io::Write>(w: W, selection: &Selection) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["m", "min_occupancy", "selected"])?;
    for s in &selection.steps {
        out.write_record([
            s.m.to_string(),
            s.min_occupancy.to_string(),
            ((s.m == selection.selected) as u8).to_string(),
        ])?;
    }
    out.flush().map_err(|e| PcmError::io("<selection>", e))
}

/// Fits increasing `M` and stops at the first fit in which some cluster
/// holds less than `floor` of the retained regions; the selected `M` is the
/// largest one fitted before that. `fit` returns the pooled occupancy.
pub fn select_m<F>(m_min: usize, m_max: usize, floor: f64, mut fit: F) -> Result<Selection>
where
    F: FnMut(usize) -> Result<Vec<f64>>,
{
    if m_min == 0 || m_min > m_max {
        return Err(PcmError::Config(format!("invalid M range {m_min}..={m_max}")));
    }
    let mut steps = Vec::new();
    let mut selected = m_min;
    for m in m_min..=m_max {
        let occupancy = fit(m)?;
        let min_occupancy = occupancy.iter().copied().fold(f64::INFINITY, f64::min);
        let sparse = min_occupancy < floor;
        steps.push(SelectStep {
            m,
            occupancy,
            min_occupancy,
        });
        if sparse {
            if m == m_min {
                log::warn!("smallest M = {m} already has a cluster below the occupancy floor");
            }
            break;
        }
        selected = m;
    }
    Ok(Selection { selected, steps })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_ari(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let (mut both, mut only_a, mut only_b, mut pairs) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                let sa = a[i] == a[j];
                let sb = b[i] == b[j];
                pairs += 1.0;
                if sa && sb {
                    both += 1.0;
                }
                if sa {
                    only_a += 1.0;
                }
                if sb {
                    only_b += 1.0;
                }
            }
        }
        let expected = only_a * only_b / pairs;
        let max = 0.5 * (only_a + only_b);
        (both - expected) / (max - expected)
    }

    #[test]
    fn ari_against_pair_counting() {
        let a = [0, 0, 1, 1];
        let b = [0, 1, 0, 1];
        let v = adjusted_rand_index(&a, &b).unwrap();
        assert!((v - brute_ari(&a, &b)).abs() < 1e-12);
        assert!((v + 0.5).abs() < 1e-12);
        let a = [0, 0, 1, 1, 2, 2, 2, 0];
        let b = [1, 1, 0, 2, 2, 2, 0, 1];
        assert!((adjusted_rand_index(&a, &b).unwrap() - brute_ari(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn ari_identity_and_permutation() {
        let a = [0, 1, 2, 2, 1, 0, 0];
        let b = [2, 0, 1, 1, 0, 2, 2];
        assert_eq!(adjusted_rand_index(&a, &a).unwrap(), 1.0);
        assert!((adjusted_rand_index(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(adjusted_rand_index(&[0, 0, 0], &[1, 1, 1]).unwrap(), 1.0);
        assert!(adjusted_rand_index(&[0], &[0]).is_err());
    }

    #[test]
    fn partial_ari_skips_missing() {
        let a = [Some(0), None, Some(1), Some(1)];
        let b = [Some(3), Some(3), Some(4), Some(4)];
        assert_eq!(adjusted_rand_index_partial(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.as_str()), Some(m));
        }
        assert_eq!(Method::parse("bogus"), None);
    }

    #[test]
    fn select_m_stops_at_sparse_cluster() {
        let sel = select_m(2, 6, 0.01, |m| {
            Ok(if m < 5 {
                vec![1.0 / m as f64; m]
            } else {
                let mut v = vec![0.995 / (m - 1) as f64; m];
                v[m - 1] = 0.005;
                v
            })
        })
        .unwrap();
        assert_eq!(sel.selected, 4);
        assert_eq!(sel.steps.len(), 4);
    }

    #[test]
    fn per_subject_needs_enough_regions() {
        let fm = crate::sampler::tests::one_feature(&[1.0, 2.0]);
        assert!(matches!(
            kmeans_labels(&fm, 3, true, 1, 0),
            Err(PcmError::TooFewItems(_))
        ));
    }
}
