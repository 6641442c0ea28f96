//! Run configuration: a TOML document whose sections mirror the pipeline stages.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{PcmError, Result};
use crate::features::{FeatureConfig, FeatureMatrix};
use crate::gridstats::GridConfig;
use crate::ingest::{Group, Rectangle};
use crate::potts::surrogate::SurrogateDesign;
use crate::sampler::McmcConfig;
use crate::simbench::{ScenarioConfig, StudyConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub points: Option<PathBuf>,
    pub windows: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
}

/// Whether cancer subjects get their own offsets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupMode {
    /// Two-group model exactly when both groups are present.
    #[default]
    Auto,
    Single,
    Two,
}

impl GroupMode {
    pub fn parse(s: &str) -> Option<GroupMode> {
        match s.trim().to_ascii_lowercase().as_str() {
            "auto" => Some(GroupMode::Auto),
            "single" => Some(GroupMode::Single),
            "two" => Some(GroupMode::Two),
            _ => None,
        }
    }

    pub fn resolve(&self, fm: &FeatureMatrix) -> bool {
        match self {
            GroupMode::Single => false,
            GroupMode::Two => true,
            GroupMode::Auto => {
                let has = |g| fm.subjects.iter().any(|s| s.group == Some(g));
                has(Group::Control) && has(Group::Cancer)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub m: usize,
    pub select_m_min: usize,
    pub select_m_max: usize,
    /// A fit whose smallest cluster holds less than this share of regions
    /// ends the cluster-count search.
    pub occupancy_floor: f64,
    pub group_mode: GroupMode,
    pub surrogate_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            m: 3,
            select_m_min: 2,
            select_m_max: 10,
            occupancy_floor: 0.01,
            group_mode: GroupMode::Auto,
            surrogate_seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummaryConfig {
    pub credible_level: f64,
    /// Distances at which full posterior samples of each cluster PCF are kept.
    pub eval_distances: Vec<f64>,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        SummaryConfig {
            credible_level: 0.95,
            eval_distances: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    /// Number of point types.
    pub h: usize,
    pub paths: Paths,
    /// Inline windows keyed by subject id.
    pub windows: BTreeMap<String, Rectangle>,
    pub grid: GridConfig,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub mcmc: McmcConfig,
    pub surrogate: SurrogateDesign,
    pub summary: SummaryConfig,
    /// Scenario used by `simulate`.
    pub simulation: ScenarioConfig,
    pub study: StudyConfig,
    /// Scenarios run by `study`; empty means the simulation scenario alone.
    pub scenarios: Vec<ScenarioConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            threads: None,
            h: 2,
            paths: Paths::default(),
            windows: BTreeMap::new(),
            grid: GridConfig::default(),
            features: FeatureConfig::default(),
            model: ModelConfig::default(),
            mcmc: McmcConfig::default(),
            surrogate: SurrogateDesign::default(),
            summary: SummaryConfig::default(),
            simulation: ScenarioConfig::default(),
            study: StudyConfig::default(),
            scenarios: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| PcmError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PcmError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| PcmError::io(path, e))?;
        RunConfig::from_toml(&text)
    }

    /// Sampler settings with the model's `M` and the run seed filled in.
    pub fn mcmc_for(&self, m: usize) -> McmcConfig {
        McmcConfig {
            m,
            seed: self.seed,
            ..self.mcmc.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
        assert_eq!(c.grid.target_mean_count, 20.0);
        assert_eq!(c.grid.r_d, 512);
        assert_eq!(c.features.variance_threshold, 0.8);
        assert_eq!(c.mcmc.iterations, 30_000);
        assert_eq!(c.mcmc.burn_in, 10_000);
        assert_eq!(c.model.occupancy_floor, 0.01);
        assert_eq!(c.summary.credible_level, 0.95);
    }

    #[test]
    fn populated_round_trip() {
        let mut c = RunConfig::default();
        c.seed = 99;
        c.h = 7;
        c.grid.rows = Some(10);
        c.grid.cols = Some(13);
        c.paths.points = Some("pts.csv".into());
        c.windows.insert("s1".into(), Rectangle::new(0.0, 687.0, 0.0, 511.5));
        c.features.variance_threshold = 0.9;
        c.model.group_mode = GroupMode::Two;
        c.mcmc.fix_psi = Some(0.75);
        c.mcmc.thin = 3;
        c.surrogate.alpha_points = Some(9);
        c.summary.eval_distances = vec![0.05, 0.25];
        c.study.methods = vec![crate::simbench::Method::Pcm, crate::simbench::Method::CurveS];
        c.scenarios.push(ScenarioConfig {
            psi: 0.0,
            ..ScenarioConfig::default()
        });
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("sede = 3").is_err());
        let c = RunConfig::from_toml("seed = 3\n[grid]\nrows = 4\ncols = 5\n").unwrap();
        assert_eq!(c.grid.rows, Some(4));
        assert_eq!(c.grid.r_d, 512);
        assert!(RunConfig::from_toml("[mcmc]\nm = 4\n").is_err());
        let c = RunConfig::from_toml("[model]\ngroup_mode = \"single\"\n[study]\nmethods = [\"FPCA-G\"]\n").unwrap();
        assert_eq!(c.model.group_mode, GroupMode::Single);
        assert_eq!(c.study.methods, vec![crate::simbench::Method::FpcaG]);
    }
}
