//! Principal-component scores of the processed curves, joined with local
//! intensities and standardized into the feature array used by the sampler.

pub mod io;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{PcmError, Result};
use crate::gridstats::io::GridStatsTable;
use crate::ingest::Group;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub variance_threshold: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            variance_threshold: 0.8,
        }
    }
}

/// Leading eigenvectors of the sample covariance of the discretized curves.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub r_grid: Vec<f64>,
    pub mean_curve: Vec<f64>,
    /// `K` orthonormal vectors of length `R_d`.
    pub eigenvectors: Vec<Vec<f64>>,
    /// Nonincreasing, length `K`.
    pub eigenvalues: Vec<f64>,
    /// Sum of all `R_d` eigenvalues.
    pub total_variance: f64,
}

impl PcaBasis {
    pub fn k(&self) -> usize {
        self.eigenvectors.len()
    }

    pub fn explained_fraction(&self) -> f64 {
        self.eigenvalues.iter().sum::<f64>() / self.total_variance
    }

    /// `X̄ + Σ φ_k s_k`, the truncated reconstruction on the square-root scale.
    pub fn reconstruct(&self, scores: &[f64]) -> Vec<f64> {
        let mut out = self.mean_curve.clone();
        for (phi, s) in self.eigenvectors.iter().zip(scores) {
            for (o, p) in out.iter_mut().zip(phi) {
                *o += p * s;
            }
        }
        out
    }
}

/// Eigendecomposition of the sample covariance (divisor n - 1); `K` is the
/// smallest count reaching `variance_threshold` of the total variance.
pub fn fit_pca(curves: &[&[f64]], r_grid: &[f64], variance_threshold: f64) -> Result<PcaBasis> {
    if !(variance_threshold > 0.0 && variance_threshold < 1.0) {
        return Err(PcmError::Config(format!(
            "variance threshold {variance_threshold} outside (0, 1)"
        )));
    }
    let n = curves.len();
    if n < 2 {
        return Err(PcmError::DegenerateCovariance(format!(
            "need at least two curves, got {n}"
        )));
    }
    let p = curves[0].len();
    if curves.iter().any(|c| c.len() != p) {
        return Err(PcmError::Parse("curves differ in length".into()));
    }
    let mut mean = vec![0.0; p];
    for c in curves {
        for (m, v) in mean.iter_mut().zip(c.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, p, |i, j| curves[i][j] - mean[j]);
    let cov = centered.tr_mul(&centered) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = values.iter().sum();
    let magnitude = 1.0 + mean.iter().map(|m| m * m).sum::<f64>();
    if !(total > 1e-24 * magnitude) {
        return Err(PcmError::DegenerateCovariance(
            "curves have no variation".into(),
        ));
    }
    let mut k = 0;
    let mut acc = 0.0;
    while k < p {
        acc += values[k];
        k += 1;
        if acc / total >= variance_threshold - 1e-12 {
            break;
        }
    }
    let eigenvectors = order[..k]
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let lead = v
                .iter()
                .copied()
                .fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    Ok(PcaBasis {
        r_grid: r_grid.to_vec(),
        mean_curve: mean,
        eigenvectors,
        eigenvalues: values[..k].to_vec(),
        total_variance: total,
    })
}

/// `(X̂ - X̄)ᵀ φ_k` for every retained eigenvector.
pub fn project_scores(curve: &[f64], basis: &PcaBasis) -> Vec<f64> {
    basis
        .eigenvectors
        .iter()
        .map(|phi| {
            curve
                .iter()
                .zip(&basis.mean_curve)
                .zip(phi)
                .map(|((x, m), p)| (x - m) * p)
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectMeta {
    pub id: String,
    pub group: Option<Group>,
}

/// Standardized features for every (subject, region, column), with an
/// availability mask. Columns are `K` scores followed by `H` intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub subjects: Vec<SubjectMeta>,
    pub rows: usize,
    pub cols: usize,
    pub column_names: Vec<String>,
    /// Flattened `(subject, region, column)`; masked entries hold 0.
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
    pub retained: Vec<bool>,
    pub centers: Vec<f64>,
    pub scales: Vec<f64>,
}

impl FeatureMatrix {
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_regions(&self) -> usize {
        self.rows * self.cols
    }

    pub fn q(&self) -> usize {
        self.column_names.len()
    }

    pub fn offset(&self, subject: usize, region: usize) -> usize {
        (subject * self.n_regions() + region) * self.q()
    }

    pub fn region_values(&self, subject: usize, region: usize) -> (&[f64], &[bool]) {
        let o = self.offset(subject, region);
        (&self.values[o..o + self.q()], &self.mask[o..o + self.q()])
    }

    pub fn is_complete(&self, subject: usize, region: usize) -> bool {
        self.region_values(subject, region).1.iter().all(|&m| m)
    }

    pub fn any_available(&self, subject: usize, region: usize) -> bool {
        self.region_values(subject, region).1.iter().any(|&m| m)
    }

    /// Whether any subject carries a group label.
    pub fn has_groups(&self) -> bool {
        self.subjects.iter().any(|s| s.group.is_some())
    }
}

/// Column-wise centering and scaling over available entries (sample SD).
/// With `strict`, a constant column is an error; otherwise its scale is 1.
pub(crate) fn standardize(
    values: &mut [f64],
    mask: &[bool],
    q: usize,
    names: &[String],
    strict: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut centers = vec![0.0; q];
    let mut scales = vec![1.0; q];
    for j in 0..q {
        let col: Vec<f64> = values
            .iter()
            .zip(mask)
            .skip(j)
            .step_by(q)
            .filter(|(_, &m)| m)
            .map(|(v, _)| *v)
            .collect();
        let n = col.len();
        let mean = if n > 0 { col.iter().sum::<f64>() / n as f64 } else { 0.0 };
        let var = if n > 1 {
            col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let sd = var.sqrt();
        let tiny = 1e-12 * (1.0 + mean.abs());
        if !(sd > tiny) {
            if strict {
                return Err(PcmError::ZeroVarianceColumn {
                    column: names[j].clone(),
                });
            }
            centers[j] = mean;
            scales[j] = 1.0;
        } else {
            centers[j] = mean;
            scales[j] = sd;
        }
    }
    for (i, (v, &m)) in values.iter_mut().zip(mask).enumerate() {
        let j = i % q;
        *v = if m { (*v - centers[j]) / scales[j] } else { 0.0 };
    }
    Ok((centers, scales))
}

/// Joins per-region scores (`None` where the curve is missing) and intensities
/// (`None` where the region is not retained), indexed by `subject * L + region`,
/// and standardizes the columns.
pub fn assemble_features(
    subjects: Vec<SubjectMeta>,
    rows: usize,
    cols: usize,
    k: usize,
    h: usize,
    scores: &[Option<Vec<f64>>],
    intensities: &[Option<Vec<f64>>],
) -> Result<FeatureMatrix> {
    let names: Vec<String> = (1..=k)
        .map(|i| format!("score_{i}"))
        .chain((1..=h).map(|i| format!("lambda_{i}")))
        .collect();
    assemble_named(subjects, rows, cols, names, k, scores, intensities, true)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble_named(
    subjects: Vec<SubjectMeta>,
    rows: usize,
    cols: usize,
    names: Vec<String>,
    k: usize,
    scores: &[Option<Vec<f64>>],
    intensities: &[Option<Vec<f64>>],
    strict: bool,
) -> Result<FeatureMatrix> {
    let q = names.len();
    let h = q - k;
    let cells = subjects.len() * rows * cols;
    if scores.len() != cells || intensities.len() != cells {
        return Err(PcmError::Parse(format!(
            "expected {cells} regions, got {} scores and {} intensities",
            scores.len(),
            intensities.len()
        )));
    }
    let mut values = vec![0.0; cells * q];
    let mut mask = vec![false; cells * q];
    let mut retained = vec![false; cells];
    for i in 0..cells {
        let o = i * q;
        if let Some(s) = &scores[i] {
            if s.len() != k {
                return Err(PcmError::Parse("score vector length mismatch".into()));
            }
            values[o..o + k].copy_from_slice(s);
            mask[o..o + k].iter_mut().for_each(|m| *m = true);
        }
        if let Some(lam) = &intensities[i] {
            if lam.len() != h {
                return Err(PcmError::Parse("intensity vector length mismatch".into()));
            }
            values[o + k..o + q].copy_from_slice(lam);
            mask[o + k..o + q].iter_mut().for_each(|m| *m = true);
            retained[i] = true;
        }
    }
    let (centers, scales) = standardize(&mut values, &mask, q, &names, strict)?;
    Ok(FeatureMatrix {
        subjects,
        rows,
        cols,
        column_names: names,
        values,
        mask,
        retained,
        centers,
        scales,
    })
}

/// Cluster-level quantities in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterProfile {
    pub intensities: Vec<f64>,
    /// Reconstructed square-root curve before clamping.
    pub sqrt_curve: Vec<f64>,
    /// `max(X, 0)²` on the curve grid.
    pub pcf: Vec<f64>,
}

/// Maps standardized cluster means back to intensities and a PCF curve.
pub fn invert_features(
    mu: &[f64],
    basis: &PcaBasis,
    centers: &[f64],
    scales: &[f64],
) -> ClusterProfile {
    let k = basis.k();
    let raw: Vec<f64> = mu
        .iter()
        .zip(centers.iter().zip(scales))
        .map(|(m, (c, s))| m * s + c)
        .collect();
    let sqrt_curve = basis.reconstruct(&raw[..k]);
    let pcf = sqrt_curve.iter().map(|x| x.max(0.0).powi(2)).collect();
    ClusterProfile {
        intensities: raw[k..].iter().map(|v| v.max(0.0)).collect(),
        sqrt_curve,
        pcf,
    }
}

pub fn subjects_of(table: &GridStatsTable) -> Vec<SubjectMeta> {
    table
        .summaries
        .iter()
        .map(|s| SubjectMeta {
            id: s.subject_id.clone(),
            group: s.group,
        })
        .collect()
}

/// Full feature stage from grid statistics: PCA over available curves,
/// projection, and standardized assembly.
pub fn build_features(table: &GridStatsTable, variance_threshold: f64) -> Result<(FeatureMatrix, PcaBasis)> {
    let curves: Vec<&[f64]> = table
        .summaries
        .iter()
        .flat_map(|s| s.regions.iter().filter_map(|r| r.curve.as_deref()))
        .collect();
    if curves.is_empty() {
        return Err(PcmError::DegenerateCovariance("all curves missing".into()));
    }
    let basis = fit_pca(&curves, &table.r_grid, variance_threshold)?;
    let scores: Vec<Option<Vec<f64>>> = table
        .summaries
        .iter()
        .flat_map(|s| s.regions.iter().map(|r| r.curve.as_ref().map(|c| project_scores(c, &basis))))
        .collect();
    let intensities: Vec<Option<Vec<f64>>> = table
        .summaries
        .iter()
        .flat_map(|s| s.regions.iter().map(|r| r.intensity.clone()))
        .collect();
    let subjects = subjects_of(table);
    let fm = assemble_features(
        subjects,
        table.rows,
        table.cols,
        basis.k(),
        table.h,
        &scores,
        &intensities,
    )?;
    Ok((fm, basis))
}
