use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use pcm_core::config::{GroupMode, RunConfig};
use pcm_core::features::io::{read_basis, read_features, write_basis, write_features, FeatureTransform};
use pcm_core::features::{build_features, FeatureMatrix};
use pcm_core::gridstats::io::{read_grid_stats, write_grid_stats, GridStatsTable};
use pcm_core::gridstats::{make_grid, make_grid_explicit, r_grid, summarize_patterns};
use pcm_core::ingest::{load_patterns, write_points, write_windows};
use pcm_core::posterior::io::write_all;
use pcm_core::posterior::{relabel_chain, summarize_clusters, summarize_labels, summarize_theta};
use pcm_core::potts::surrogate::load_or_build;
use pcm_core::potts::{LogPartition, PottsGraph};
use pcm_core::sampler::io::{read_chain, write_chain, write_diagnostics};
use pcm_core::sampler::{run_chain, run_chains, Chain, McmcConfig, Model};
use pcm_core::simbench::io::{read_region_labels, write_region_labels};
use pcm_core::simbench::{
    adjusted_rand_index_partial, aggregate, curve_matrix, fit_mixture, generate_dataset, kmeans_labels, run_study,
    select_m, write_selection, write_study, Method, Regime, ScenarioConfig,
};
use pcm_core::stats::mean;
use pcm_core::PcmError;

use crate::manifest::{io_failure, CacheEntry, Recorder};
use crate::{
    AriArgs, BaselineArgs, Cli, Command, FeaturesArgs, FitArgs, GridStatsArgs, McmcArgs, ScenarioArgs, SelectMArgs,
    SimulateArgs, StudyArgs, SummarizeArgs,
};
use crate::Failure;

type Outcome = Result<(), Failure>;

pub fn dispatch(cli: Cli, argv: &[String]) -> Outcome {
    let mut rec = Recorder::default();
    let mut cfg = match &cli.config {
        Some(p) => {
            rec.input(p);
            RunConfig::load(p)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.simulation.seed = s;
        cfg.study.seed = s;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    let (name, manifest) = match cli.command {
        Command::GridStats(a) => ("grid-stats", grid_stats(a, &mut cfg, &mut rec)?),
        Command::Features(a) => ("features", features(a, &mut cfg, &mut rec)?),
        Command::Fit(a) => ("fit", fit(a, &mut cfg, &mut rec)?),
        Command::SelectM(a) => ("select-m", select(a, &mut cfg, &mut rec)?),
        Command::Summarize(a) => ("summarize", summarize(a, &mut cfg, &mut rec)?),
        Command::Simulate(a) => ("simulate", simulate(a, &mut cfg, &mut rec)?),
        Command::Baseline(a) => ("baseline", baseline(a, &mut cfg, &mut rec)?),
        Command::Ari(a) => match ari(a, &mut cfg, &mut rec)? {
            Some(path) => ("ari", path),
            None => return Ok(()),
        },
        Command::Study(a) => ("study", study(a, &mut cfg, &mut rec)?),
    };
    let m = rec.finish(&manifest, name, argv, &cfg)?;
    log::info!("wrote {} outputs; manifest {}", m.outputs.len(), manifest.display());
    Ok(())
}

fn file_manifest(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn open(path: &Path, rec: &mut Recorder) -> Result<BufReader<File>, Failure> {
    let f = File::open(path).map_err(|e| io_failure(path, e))?;
    rec.input(path);
    Ok(BufReader::new(f))
}

fn create(path: &Path, rec: &mut Recorder) -> Result<BufWriter<File>, Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
    }
    let f = File::create(path).map_err(|e| io_failure(path, e))?;
    rec.output(path);
    Ok(BufWriter::new(f))
}

fn finish_writer(mut w: BufWriter<File>, path: &Path) -> Outcome {
    w.flush().map_err(|e| io_failure(path, e))
}

fn write_with<F>(path: &Path, rec: &mut Recorder, f: F) -> Outcome
where
    F: FnOnce(&mut BufWriter<File>) -> pcm_core::Result<()>,
{
    let mut w = create(path, rec)?;
    f(&mut w)?;
    finish_writer(w, path)
}

fn make_dir(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

fn grid_stats(a: GridStatsArgs, cfg: &mut RunConfig, rec: &mut Recorder) -> Result<PathBuf, Failure> {
    if let Some(p) = a.points {
        cfg.paths.points = Some(p);
    }
    if let Some(w) = a.windows {
        cfg.paths.windows = Some(w);
    }
    if let Some(h) = a.h {
        cfg.h = h;
    }
    if let (Some(r), Some(c)) = (a.rows, a.cols) {
        cfg.grid.rows = Some(r);
        cfg.grid.cols = Some(c);
    }
    if let Some(t) = a.target_mean_count {
        cfg.grid.target_mean_count = t;
        cfg.grid.rows = None;
        cfg.grid.cols = None;
    }
    if let Some(r) = a.r_d {
        cfg.grid.r_d = r;
    }
    if cfg.grid.rows.is_some() != cfg.grid.cols.is_some() {
        return Err(Failure::usage("conflicting grid options: rows and cols must be given together"));
    }
    let points = cfg
        .paths
        .points
        .clone()
        .ok_or_else(|| Failure::usage("missing points file (--points or paths.points)"))?;
    rec.input(&points);
    if let Some(w) = &cfg.paths.windows {
        rec.input(w);
    }
    let patterns = load_patterns(&points, cfg)?;
    if patterns.is_empty() {
        return Err(PcmError::TooFewItems("points file has no points".into()).into());
    }
    let grid = match (cfg.grid.rows, cfg.grid.cols) {
        (Some(r), Some(c)) => make_grid_explicit(&patterns.iter().map(|p| p.window).collect::<Vec<_>>(), r, c)?,
        _ => make_grid(&patterns, cfg.grid.target_mean_count)?,
    };
    log::info!(
        "grid {} x {} with cells {} x {}",
        grid.rows,
        grid.cols,
        grid.cell_width,
        grid.cell_height
    );
    let summaries = summarize_patterns(&patterns, &grid, cfg.h, cfg.grid.r_d)?;
    let rg = r_grid(grid.radius(), cfg.grid.r_d);
    write_with(&a.out, rec, |w| write_grid_stats(w, &summaries, cfg.h, &rg))?;
    Ok(file_manifest(&a.out))
}

fn load_table(path: &Path, rec: &mut Recorder) -> Result<GridStatsTable, Failure> {
    Ok(read_grid_stats(open(path, rec)?)?)
}

fn features(a: FeaturesArgs, cfg: &mut RunConfig, rec: &mut Recorder) -> Result<PathBuf, Failure> {
    if let Some(v) = a.variance_threshold {
        cfg.features.variance_threshold = v;
    }
    let table = load_table(&a.grid_stats, rec)?;
    let (fm, basis) = build_features(&table, cfg.features.variance_threshold)?;
    log::info!("{} principal components explain {:.3} of curve variance", basis.k(), basis.explained_fraction());
    make_dir(&a.out)?;
    write_with(&a.out.join("features.csv"), rec, |w| write_features(w, &fm))?;
    let transform = FeatureTransform {
        basis,
        h: table.h,
        centers: fm.centers.clone(),
        scales: fm.scales.clone(),
    };
    write_with(&a.out.join("basis.txt"), rec, |w| write_basis(w, &transform))?;
    cfg.paths.output_dir = Some(a.out.clone());
    Ok(a.out.join("manifest.json"))
}

fn apply_mcmc(a: &McmcArgs, cfg: &mut RunConfig) -> Outcome {
    if let Some(v) = a.iterations {
        cfg.mcmc.iterations = v;
    }
    if let Some(v) = a.burn_in {
        cfg.mcmc.burn_in = v;
    }
    if let Some(v) = a.thin {
        cfg.mcmc.thin = v;
    }
    if let Some(v) = a.chains {
        cfg.mcmc.chains = v;
    }
    if let Some(g) = &a.group_mode {
        cfg.model.group_mode =
            GroupMode::parse(g).ok_or_else(|| Failure::usage(format!("unknown group mode {g:?}")))?;
    }
    if a.fix_psi.is_some() {
        cfg.mcmc.fix_psi = a.fix_psi;
    }
    if let Some(d) = &a.cache_dir {
        cfg.paths.cache_dir = Some(d.clone());
    }
    Ok(())
}

fn load_features(path: &Path, rec: &mut Recorder) -> Result<FeatureMatrix, Failure> {
    Ok(read_features(open(path, rec)?)?)
}

/// Normalizing constant for a fit: closed form at ψ = 0, enumeration when
/// asked for (or trivial), otherwise the cached surrogate.
fn log_partition(
    cfg: &RunConfig,
    mcmc: &McmcConfig,
    graph: &PottsGraph,
    exact: bool,
    default_cache: &Path,
    rec: &mut Recorder,
) -> Result<LogPartition, Failure> {
    if mcmc.fix_psi == Some(0.0) {
        return Ok(LogPartition::Independent { n_nodes: graph.n_nodes() });
    }
    if exact || mcmc.m == 1 {
        return Ok(LogPartition::Exact(graph.clone()));
    }
    let dir = cfg.paths.cache_dir.clone().unwrap_or_else(|| default_cache.to_path_buf());
    let (table, path, reused) = load_or_build(Some(&dir), graph, mcmc.m, &cfg.surrogate, cfg.model.surrogate_seed)?;
    if let Some(path) = path {
        rec.cache.push(CacheEntry { path, reused });
    }
    Ok(LogPartition::Surrogate(Arc::new(table)))
}

fn fit(a: FitArgs, cfg: &mut RunConfig, rec: &mut Recorder) -> Result<PathBuf, Failure> {
    apply_mcmc(&a.mcmc, cfg)?;
    if let Some(m) = a.m {
        cfg.model.m = m;
    }
    let fm = load_features(&a.features, rec)?;
    if let Some(b) = &a.basis {
        rec.input(b);
    }
    let mcmc = cfg.mcmc_for(cfg.model.m);
    mcmc.validate()?;
    let graph = PottsGraph::lattice(fm.rows, fm.cols);
    let two = cfg.model.group_mode.resolve(&fm);
    let lp = log_partition(cfg, &mcmc, &graph, a.mcmc.exact, &a.out.join("surrogate-cache"), rec)?;
    let model = Model::new(&fm, &graph, &lp, two)?;
    let chains = run_chains(&model, &mcmc)?;
    make_dir(&a.out)?;
    for c in &chains {
        let path = a.out.join(format!("chain_{}.tsv", c.meta.chain + 1));
        write_with(&path, rec, |w| write_chain(w, c))?;
        for (k, v) in &c.diagnostics.acceptance {
            log::info!("chain {} acceptance {k} = {v:.3}", c.meta.chain + 1);
        }
    }
    let diags: Vec<_> = chains.iter().map(|c| c.diagnostics.clone()).collect();
    write_with(&a.out.join("diagnostics.json"), rec, |w| write_diagnostics(w, &diags))?;
    cfg.paths.output_dir = Some(a.out.clone());
    Ok(a.out.join("manifest.json"))
}

fn select(a: SelectMArgs, cfg: &mut RunConfig, rec: &mut Recorder) -> Result<PathBuf, Failure> {
    apply_mcmc(&a.mcmc, cfg)?;
    if let Some(v) = a.m_min {
        cfg.model.select_m_min = v;
    }
    if let Some(v) = a.m_max {
        cfg.model.select_m_max = v;
    }
    if let Some(v) = a.floor {
        cfg.model.occupancy_floor = v;
    }
    let fm = load_features(&a.features, rec)?;
    let graph = PottsGraph::lattice(fm.rows, fm.cols);
    let two = cfg.model.group_mode.resolve(&fm);
    let cache = a.out.join("surrogate-cache");
    let cfg_ref: &RunConfig = cfg;
    let selection = select_m(
        cfg_ref.model.select_m_min,
        cfg_ref.model.select_m_max,
        cfg_ref.model.occupancy_floor,
        |m| {
            let mcmc = cfg_ref.mcmc_for(m);
            mcmc.validate()?;
            let lp = log_partition(cfg_ref, &mcmc, &graph, a.mcmc.exact, &cache, rec)
                .map_err(|f| PcmError::Config(f.message))?;
            let model = Model::new(&fm, &graph, &lp, two)?;
            let mut chain = run_chain(&model, &mcmc, 0)?;
            relabel_chain(&mut chain);
            let summary = summarize_labels(&chain)?;
            let occ = summary.occupancy["all"].clone();
            log::info!("M = {m}: occupancy {occ:?}");
            Ok(occ)
        },
    )?;
    make_dir(&a.out)?;
    write_with(&a.out.join("select_m.json"), rec, |w| {
        serde_json::to_writer_pretty(&mut *w, &selection).map_err(|e| PcmError::Parse(e.to_string()))?;
        writeln!(w).map_err(|e| PcmError::Parse(e.to_string()))
    })?;
    write_with(&a.out.join("select_m.csv"), rec, |w| write_selection(w, &selection))?;
    println!("{}", selection.selected);
    cfg.paths.output_dir = Some(a.out.clone());
    Ok(a.out.join("manifest.json"))
}

/// Concatenates chains of the same model into one draw set.
fn pool_chains(mut chains: Vec<Chain>) -> Result<Chain, Failure> {
    let mut pooled = chains.remove(0);
    for c in chains {
        let same = c.meta.subjects == pooled.meta.subjects
            && c.meta.m == pooled.meta.m
            && c.meta.rows == pooled.meta.rows
            && c.meta.cols == pooled.meta.cols
            && c.meta.column_names == pooled.meta.column_names
            && c.meta.two_groups == pooled.meta.two_groups;
        if !same {
            return Err(PcmError::Config("chains were fitted to different data or models".into()).into());
        }
        pooled.draws.extend(c.draws);
    }
    Ok(pooled)
}

fn summarize(a: SummarizeArgs, cfg: &mut RunConfig, rec: &mut Recorder) -> Result<PathBuf, Failure> {
    if let Some(l) = a.level {
        cfg.summary.credible_level = l;
    }
    if let Some(d) = &a.eval_distances {
        cfg.summary.eval_distances = d.clone();
    }
    let mut chains = Vec::new();
    for p in &a.chain {
        chains.push(read_chain(open(p, rec)?)?);
    }
    let mut chain = pool_chains(chains)?;
    let transform = read_basis(open(&a.basis, rec)?)?;
    relabel_chain(&mut chain);
    let labels = summarize_labels(&chain)?;
    let level = cfg.summary.credible_level;
    let clusters = summarize_clusters(&chain, &transform, &cfg.summary.eval_distances, level)?;
    let theta = summarize_theta(&chain, level);
    let written = write_all(&a.out, &chain.meta, &labels, &clusters, &theta, transform.h)?;
    for p in &written {
        rec.output(p);
    }
    cfg.paths.output_dir = Some(a.out.clone());
    Ok(a.out.join("manifest.json"))
}

fn apply_scenario(a: &ScenarioArgs, s: &mut ScenarioConfig) -> Outcome {
    if let Some(v) = a.m {
        s.m = v;
    }
    if let Some(v) = a.psi {
        s.psi = v;
    }
    if let Some(v) = a.subjects {
        s.subjects = v;
    }
    if let Some(r) = &a.regime {
        s.regime = match r.to_ascii_lowercase().as_str() {
            "low" => Regime::Low,
            "high" => Regime::High,
            _ => return Err(Failure::usage(format!("unknown regime {r:?}"))),
        };
    }
    if let Some(v) = a.rows {
        s.rows = v;
    }
    if let Some(v) = a.cols {
        s.cols = v;
    }
    Ok(())
}

fn simulate(a: SimulateArgs, cfg: &mut RunConfig, rec: &mut Recorder) -> Result<PathBuf, Failure> {
    apply_scenario(&a.scenario, &mut cfg.simulation)?;
    let s = &cfg.simulation;
    let dataset = generate_dataset(s)?;
    make_dir(&a.out)?;
    write_with(&a.out.join("points.csv"), rec, |w| write_points(w, &dataset.patterns))?;
    write_with(&a.out.join("windows.csv"), rec, |w| write_windows(w, &dataset.patterns))?;
    let ids: Vec<String> = dataset.patterns.iter().map(|p| p.subject_id.clone()).collect();
    let truth: Vec<Vec<Option<usize>>> = dataset
        .truth
        .iter()
        .map(|t| t.iter().map(|&c| Some(c as usize)).collect())
        .collect();
    write_with(&a.out.join("truth.csv"), rec, |w| write_region_labels(w, &ids, s.cols, &truth))?;
    cfg.paths.output_dir = Some(a.out.clone());
    Ok(a.out.join("manifest.json"))
}

fn baseline(a: BaselineArgs, cfg: &mut RunConfig, rec: &mut Recorder) -> Result<PathBuf, Failure> {
    apply_mcmc(&a.mcmc, cfg)?;
    let method = Method::parse(&a.method).ok_or_else(|| Failure::usage(format!("unknown method {:?}", a.method)))?;
    if method == Method::Pcm {
        return Err(Failure::usage("use `fit` for the spatial model"));
    }
    if let Some(m) = a.m {
        cfg.model.m = m;
    }
    if let Some(r) = a.restarts {
        cfg.study.kmeans_restarts = r;
    }
    let m = cfg.model.m;
    let need = |p: &Option<PathBuf>, flag: &str| {
        p.clone()
            .ok_or_else(|| Failure::usage(format!("{} needs --{flag}", method.as_str())))
    };
    let (fm, labels) = match method {
        Method::CurveG | Method::CurveS => {
            let table = load_table(&need(&a.grid_stats, "grid-stats")?, rec)?;
            let cm = curve_matrix(&table)?;
            let labels = kmeans_labels(&cm, m, method.per_subject(), cfg.study.kmeans_restarts, cfg.seed)?;
            (cm, labels)
        }
        Method::FpcaG | Method::FpcaS => {
            let fm = load_features(&need(&a.features, "features")?, rec)?;
            let labels = kmeans_labels(&fm, m, method.per_subject(), cfg.study.kmeans_restarts, cfg.seed)?;
            (fm, labels)
        }
        _ => {
            let fm = load_features(&need(&a.features, "features")?, rec)?;
            cfg.mcmc.fix_psi = Some(0.0);
            let mcmc = cfg.mcmc_for(m);
            let lp = LogPartition::Independent { n_nodes: fm.n_regions() };
            let graph = PottsGraph::lattice(fm.rows, fm.cols);
            let map = fit_mixture(&fm, &graph, &lp, &mcmc)?;
            let l = fm.n_regions();
            let labels = map
                .into_iter()
                .enumerate()
                .map(|(n, s)| {
                    s.into_iter()
                        .enumerate()
                        .map(|(r, c)| fm.retained[n * l + r].then_some(c as usize))
                        .collect()
                })
                .collect();
            (fm, labels)
        }
    };
    let ids: Vec<String> = fm.subjects.iter().map(|s| s.id.clone()).collect();
    write_with(&a.out, rec, |w| write_region_labels(w, &ids, fm.cols, &labels))?;
    Ok(file_manifest(&a.out))
}

fn ari(a: AriArgs, _cfg: &mut RunConfig, rec: &mut Recorder) -> Result<Option<PathBuf>, Failure> {
    let x = read_region_labels(open(&a.a, rec)?)?;
    let y = read_region_labels(open(&a.b, rec)?)?;
    let shared: Vec<_> = x.keys().filter(|k| y.contains_key(*k)).collect();
    if shared.is_empty() {
        return Err(PcmError::TooFewItems("label tables share no regions".into()).into());
    }
    let value = if a.per_subject {
        let mut subjects: Vec<&String> = shared.iter().map(|k| &k.0).collect();
        subjects.dedup();
        let scores = subjects
            .iter()
            .map(|s| {
                let (p, q): (Vec<_>, Vec<_>) = shared.iter().filter(|k| &k.0 == *s).map(|k| (x[*k], y[*k])).unzip();
                adjusted_rand_index_partial(&p, &q)
            })
            .collect::<pcm_core::Result<Vec<f64>>>()?;
        mean(&scores)
    } else {
        let (p, q): (Vec<_>, Vec<_>) = shared.iter().map(|k| (x[*k], y[*k])).unzip();
        adjusted_rand_index_partial(&p, &q)?
    };
    println!("{value:?}");
    match a.out {
        Some(out) => {
            let mut w = create(&out, rec)?;
            writeln!(w, "{value:?}").map_err(|e| io_failure(&out, e))?;
            finish_writer(w, &out)?;
            Ok(Some(file_manifest(&out)))
        }
        None => Ok(None),
    }
}

fn study(a: StudyArgs, cfg: &mut RunConfig, rec: &mut Recorder) -> Result<PathBuf, Failure> {
    if cfg.scenarios.is_empty() {
        cfg.scenarios.push(cfg.simulation.clone());
    }
    for s in cfg.scenarios.iter_mut() {
        apply_scenario(&a.scenario, s)?;
    }
    if let Some(r) = a.replications {
        cfg.study.replications = r;
    }
    if let Some(ms) = &a.methods {
        cfg.study.methods = ms
            .iter()
            .map(|m| Method::parse(m).ok_or_else(|| Failure::usage(format!("unknown method {m:?}"))))
            .collect::<Result<_, _>>()?;
    }
    if let Some(v) = a.iterations {
        cfg.study.mcmc.iterations = v;
    }
    if let Some(v) = a.burn_in {
        cfg.study.mcmc.burn_in = v;
    }
    if let Some(d) = a.cache_dir {
        cfg.study.cache_dir = Some(d);
    }
    if cfg.study.cache_dir.is_none() {
        cfg.study.cache_dir = cfg.paths.cache_dir.clone();
    }
    let results = run_study(&cfg.scenarios, &cfg.study)?;
    let rows = aggregate(&cfg.scenarios, &results, &cfg.study.methods);
    for r in &rows {
        log::info!(
            "{} {}: mean ARI {:.3} (sd {:.3})",
            r.scenario.label(),
            r.method.as_str(),
            r.mean_ari,
            r.sd_ari
        );
    }
    write_with(&a.out, rec, |w| write_study(w, &rows))?;
    Ok(file_manifest(&a.out))
}
