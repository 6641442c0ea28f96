//! Cluster-specific point processes and synthetic multi-subject datasets
//! with Potts-distributed ground-truth labels.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PcmError, Result};
use crate::gridstats::GridSpec;
use crate::ingest::{MarkedPoint, MarkedPointPattern, Rectangle};
use crate::potts::{gibbs_sample_field, PottsGraph};
use crate::stats::derive_rng;

/// Unmarked process generating the points of one region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Process {
    Poisson,
    /// Thomas process: Poisson parents at rate `parents` (per unit area),
    /// Gaussian offspring displacement with standard deviation `sigma`.
    Thomas { parents: f64, sigma: f64 },
    /// Sequential inhibition with minimum interpoint distance `delta`.
    HardCore { delta: f64 },
}

/// Region-level generator: a process with a total intensity and independent
/// type marks with fixed proportions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterGenerator {
    pub process: Process,
    pub total_intensity: f64,
    pub type_probs: Vec<f64>,
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as usize
}

fn uniform_in<R: Rng + ?Sized>(rect: &Rectangle, rng: &mut R) -> (f64, f64) {
    (
        rect.xmin + rng.random::<f64>() * rect.width(),
        rect.ymin + rng.random::<f64>() * rect.height(),
    )
}

/// Points of one realization inside `rect` (half-open on the upper edges).
pub fn simulate_process<R: Rng + ?Sized>(
    process: Process,
    intensity: f64,
    rect: &Rectangle,
    rng: &mut R,
) -> Vec<(f64, f64)> {
    let area = rect.area();
    match process {
        Process::Poisson => (0..poisson_count(intensity * area, rng))
            .map(|_| uniform_in(rect, rng))
            .collect(),
        Process::Thomas { parents, sigma } => {
            // parents over a dilated window so clusters straddling the edge
            // contribute their inside offspring
            let pad = 4.0 * sigma;
            let outer = Rectangle::new(rect.xmin - pad, rect.xmax + pad, rect.ymin - pad, rect.ymax + pad);
            let per_parent = intensity / parents;
            let noise = Normal::new(0.0, sigma).expect("positive sigma");
            let mut pts = Vec::new();
            for _ in 0..poisson_count(parents * outer.area(), rng) {
                let (px, py) = uniform_in(&outer, rng);
                for _ in 0..poisson_count(per_parent, rng) {
                    let x = px + noise.sample(rng);
                    let y = py + noise.sample(rng);
                    if x >= rect.xmin && x < rect.xmax && y >= rect.ymin && y < rect.ymax {
                        pts.push((x, y));
                    }
                }
            }
            pts
        }
        Process::HardCore { delta } => {
            let target = poisson_count(intensity * area, rng);
            let mut pts: Vec<(f64, f64)> = Vec::with_capacity(target);
            let d2 = delta * delta;
            let mut attempts = 0;
            while pts.len() < target && attempts < 1000 * target.max(1) {
                attempts += 1;
                let (x, y) = uniform_in(rect, rng);
                if pts.iter().all(|&(a, b)| (a - x).powi(2) + (b - y).powi(2) >= d2) {
                    pts.push((x, y));
                }
            }
            pts
        }
    }
}

impl ClusterGenerator {
    pub fn simulate<R: Rng + ?Sized>(&self, rect: &Rectangle, rng: &mut R) -> Vec<MarkedPoint> {
        simulate_process(self.process, self.total_intensity, rect, rng)
            .into_iter()
            .map(|(x, y)| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut mark = self.type_probs.len();
                for (t, p) in self.type_probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        mark = t + 1;
                        break;
                    }
                }
                MarkedPoint { x, y, mark: mark as u32 }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Low,
    High,
}

impl Regime {
    /// Total-intensity range across clusters.
    pub fn range(&self) -> (f64, f64) {
        match self {
            Regime::Low => (20.0, 32.0),
            Regime::High => (45.0, 72.0),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Low => "low",
            Regime::High => "high",
        }
    }

    pub fn parse(s: &str) -> Option<Regime> {
        match s {
            "low" => Some(Regime::Low),
            "high" => Some(Regime::High),
            _ => None,
        }
    }
}

/// Generators for `m` clusters in a regime: cluster 1 is CSR, cluster 2
/// clustered, cluster 3 inhibited; further clusters alternate processes with
/// intermediate intensities and type mixes. Intensities lie inside the regime range.
pub fn cluster_generators(m: usize, regime: Regime) -> Vec<ClusterGenerator> {
    let (lo, hi) = regime.range();
    let scale = (lo + hi) / 2.0;
    let thomas = Process::Thomas {
        parents: 15.0,
        sigma: 0.07,
    };
    let hard_core = Process::HardCore {
        delta: 0.6 / scale.sqrt(),
    };
    let base = [
        (Process::Poisson, 0.35, 0.55),
        (thomas, 0.5, 0.45),
        (hard_core, 0.65, 0.5),
        (Process::Poisson, 0.65, 0.45),
        (thomas, 0.35, 0.55),
    ];
    (0..m)
        .map(|e| {
            let (process, level, p1) = base[e % base.len()];
            ClusterGenerator {
                process,
                total_intensity: lo + level * (hi - lo),
                type_probs: vec![p1, 1.0 - p1],
            }
        })
        .collect()
}

/// One simulated design cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub m: usize,
    pub psi: f64,
    pub subjects: usize,
    pub regime: Regime,
    pub rows: usize,
    pub cols: usize,
    /// Gibbs sweeps used to draw each truth label field.
    pub label_sweeps: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            m: 3,
            psi: 1.29,
            subjects: 50,
            regime: Regime::High,
            rows: 10,
            cols: 12,
            label_sweeps: 100,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=35).contains(&self.m) {
            return Err(PcmError::Config(format!("M = {} outside 1..=35", self.m)));
        }
        if self.subjects == 0 || self.rows == 0 || self.cols == 0 {
            return Err(PcmError::Config("empty scenario".into()));
        }
        if !(self.psi >= 0.0 && self.psi.is_finite()) {
            return Err(PcmError::Config(format!("psi {} must be non-negative", self.psi)));
        }
        Ok(())
    }

    /// Unit-square regions over `[0, cols] × [0, rows]`.
    pub fn window(&self) -> Rectangle {
        Rectangle::new(0.0, self.cols as f64, 0.0, self.rows as f64)
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec::over_window(&self.window(), self.rows, self.cols).expect("valid scenario grid")
    }

    pub fn label(&self) -> String {
        format!(
            "M{}_psi{}_N{}_{}",
            self.m,
            self.psi,
            self.subjects,
            self.regime.as_str()
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub patterns: Vec<MarkedPointPattern>,
    /// Per subject, 0-based true cluster of every region.
    pub truth: Vec<Vec<u8>>,
    pub generators: Vec<ClusterGenerator>,
}

/// Subjects are generated independently from streams keyed by their index.
pub fn generate_dataset(s: &ScenarioConfig) -> Result<Dataset> {
    s.validate()?;
    let graph = PottsGraph::lattice(s.rows, s.cols);
    let grid = s.grid();
    let generators = cluster_generators(s.m, s.regime);
    let offsets = vec![0.0; s.m];
    let subjects: Vec<(MarkedPointPattern, Vec<u8>)> = (0..s.subjects)
        .into_par_iter()
        .map(|n| {
            let mut rng = derive_rng(s.seed, &[n as u64, 0x9E4]);
            let labels = gibbs_sample_field(&offsets, s.psi, &graph, s.label_sweeps, rng.random());
            let mut points = Vec::new();
            for (l, &c) in labels.iter().enumerate() {
                points.extend(generators[c as usize].simulate(&grid.region_rect(l), &mut rng));
            }
            let pattern = MarkedPointPattern {
                subject_id: format!("sim{:03}", n + 1),
                points,
                window: s.window(),
                group: None,
            };
            (pattern, labels)
        })
        .collect();
    let (patterns, truth) = subjects.into_iter().unzip();
    Ok(Dataset {
        patterns,
        truth,
        generators,
    })
}
