//! Gridding of point patterns and per-region first/second-order summaries.

pub mod io;
pub mod pcf;
pub mod spline;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PcmError, Result};
use crate::ingest::{Group, MarkedPoint, MarkedPointPattern, Rectangle};

pub use pcf::{local_pcf, r_grid};
pub use spline::process_curve;

/// Grid options as they appear in the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    pub target_mean_count: f64,
    pub r_d: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            rows: None,
            cols: None,
            target_mean_count: 20.0,
            r_d: 512,
        }
    }
}

/// Equal-cell rectangular grid. Region `l = row * cols + col`, with row 0 at
/// the lower edge (smallest y) and col 0 at the left edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub cell_width: f64,
    pub cell_height: f64,
    pub origin: (f64, f64),
}

impl GridSpec {
    pub fn over_window(frame: &Rectangle, rows: usize, cols: usize) -> Result<GridSpec> {
        if rows == 0 || cols == 0 {
            return Err(PcmError::InvalidGrid("rows and cols must be at least 1".into()));
        }
        if !frame.is_valid() {
            return Err(PcmError::InvalidGrid("degenerate frame window".into()));
        }
        Ok(GridSpec {
            rows,
            cols,
            cell_width: frame.width() / cols as f64,
            cell_height: frame.height() / rows as f64,
            origin: (frame.xmin, frame.ymin),
        })
    }

    pub fn n_regions(&self) -> usize {
        self.rows * self.cols
    }

    /// Half the shortest region dimension; the PCF domain is truncated here.
    pub fn radius(&self) -> f64 {
        0.5 * self.cell_width.min(self.cell_height)
    }

    pub fn region_area(&self) -> f64 {
        self.cell_width * self.cell_height
    }

    pub fn row_col(&self, region: usize) -> (usize, usize) {
        (region / self.cols, region % self.cols)
    }

    pub fn region_index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn region_rect(&self, region: usize) -> Rectangle {
        let (row, col) = self.row_col(region);
        let x0 = self.origin.0 + col as f64 * self.cell_width;
        let y0 = self.origin.1 + row as f64 * self.cell_height;
        Rectangle::new(x0, x0 + self.cell_width, y0, y0 + self.cell_height)
    }

    pub fn center(&self, region: usize) -> (f64, f64) {
        let (row, col) = self.row_col(region);
        (
            self.origin.0 + (col as f64 + 0.5) * self.cell_width,
            self.origin.1 + (row as f64 + 0.5) * self.cell_height,
        )
    }

    /// Nearest axis index along one dimension; ties go to the lower index.
    fn nearest_axis(coord: f64, origin: f64, size: f64, n: usize) -> usize {
        let guess = ((coord - origin) / size).floor();
        let guess = if guess.is_finite() { guess as i64 } else { 0 };
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for c in (guess - 1)..=(guess + 1) {
            if c < 0 || c as usize >= n {
                continue;
            }
            let center = origin + (c as f64 + 0.5) * size;
            let d = (coord - center).abs();
            if d < best_d {
                best_d = d;
                best = c as usize;
            }
        }
        if best_d.is_infinite() {
            // far outside the frame: clamp
            if coord < origin {
                0
            } else {
                n - 1
            }
        } else {
            best
        }
    }

    /// Region whose center is nearest to `(x, y)`, ties broken by lowest index.
    /// On a product grid the nearest center factorizes per axis, and the
    /// lowest row-major index among tied cells is the lowest row then lowest col.
    pub fn nearest_region(&self, x: f64, y: f64) -> usize {
        let col = Self::nearest_axis(x, self.origin.0, self.cell_width, self.cols);
        let row = Self::nearest_axis(y, self.origin.1, self.cell_height, self.rows);
        self.region_index(row, col)
    }

    /// Whether a region lies fully inside `window` (up to rounding).
    pub fn region_within(&self, region: usize, window: &Rectangle) -> bool {
        let tol = 1e-9 * self.cell_width.max(self.cell_height);
        window.contains_rect(&self.region_rect(region), tol)
    }
}

fn largest_window(windows: &[Rectangle]) -> Result<Rectangle> {
    let mut best: Option<Rectangle> = None;
    for w in windows {
        if !w.is_valid() {
            return Err(PcmError::InvalidGrid("degenerate window".into()));
        }
        if best.map_or(true, |b| w.area() > b.area()) {
            best = Some(*w);
        }
    }
    best.ok_or_else(|| PcmError::InvalidGrid("no windows".into()))
}

/// Mean number of points per retained region pooled across subjects.
fn mean_retained_count(patterns: &[MarkedPointPattern], grid: &GridSpec) -> f64 {
    let mut points = 0usize;
    let mut regions = 0usize;
    let mut counts = vec![0usize; grid.n_regions()];
    for p in patterns {
        counts.iter_mut().for_each(|c| *c = 0);
        for pt in &p.points {
            counts[grid.nearest_region(pt.x, pt.y)] += 1;
        }
        for (l, &c) in counts.iter().enumerate() {
            if c > 0 && grid.region_within(l, &p.window) {
                points += c;
                regions += 1;
            }
        }
    }
    if regions == 0 {
        0.0
    } else {
        points as f64 / regions as f64
    }
}

/// Chooses rows × cols over the largest window so that the mean number of
/// points per retained region is closest to `target_mean_count`. Cells are
/// kept within a 2:1 aspect ratio; ties prefer squarer cells, then fewer regions.
pub fn make_grid(patterns: &[MarkedPointPattern], target_mean_count: f64) -> Result<GridSpec> {
    if !(target_mean_count >= 1.0) {
        return Err(PcmError::InvalidGrid("target mean count must be at least 1".into()));
    }
    let windows: Vec<Rectangle> = patterns.iter().map(|p| p.window).collect();
    let frame = largest_window(&windows)?;
    let max_points = patterns.iter().map(|p| p.len()).max().unwrap_or(0) as f64;
    let max_regions = ((4.0 * max_points / target_mean_count).ceil() as usize + 4).max(1);
    let mut best: Option<(f64, f64, usize, GridSpec)> = None;
    let ratio = frame.width() / frame.height();
    for rows in 1..=max_regions {
        // cell aspect (W/cols)/(H/rows) within [1/2, 2]
        let lo = ((ratio * rows as f64 / 2.0).ceil() as usize).max(1);
        let hi = (2.0 * ratio * rows as f64).floor() as usize;
        if lo * rows > max_regions {
            break;
        }
        for cols in lo..=hi.max(lo) {
            if rows * cols > max_regions {
                break;
            }
            let grid = GridSpec::over_window(&frame, rows, cols)?;
            let aspect = (grid.cell_width / grid.cell_height).ln().abs();
            let mean = mean_retained_count(patterns, &grid);
            if mean == 0.0 {
                continue;
            }
            let score = (mean - target_mean_count).abs();
            let key = (score, aspect, rows * cols);
            let better = match &best {
                None => true,
                Some((s, a, n, _)) => {
                    let eps = 1e-12;
                    key.0 < s - eps
                        || ((key.0 - s).abs() <= eps
                            && (key.1 < a - eps || ((key.1 - a).abs() <= eps && key.2 < *n)))
                }
            };
            if better {
                best = Some((key.0, key.1, key.2, grid));
            }
        }
    }
    match best {
        Some((_, _, _, g)) => Ok(g),
        None => GridSpec::over_window(&frame, 1, 1),
    }
}

/// Explicit rows × cols over the largest window.
pub fn make_grid_explicit(windows: &[Rectangle], rows: usize, cols: usize) -> Result<GridSpec> {
    GridSpec::over_window(&largest_window(windows)?, rows, cols)
}

/// Point membership of every region plus the retained flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionAssignment {
    /// Indices into the pattern's points, per region.
    pub members: Vec<Vec<usize>>,
    pub retained: Vec<bool>,
}

pub fn assign_regions(pattern: &MarkedPointPattern, grid: &GridSpec) -> RegionAssignment {
    let mut members = vec![Vec::new(); grid.n_regions()];
    for (i, pt) in pattern.points.iter().enumerate() {
        members[grid.nearest_region(pt.x, pt.y)].push(i);
    }
    let retained = members
        .iter()
        .enumerate()
        .map(|(l, m)| !m.is_empty() && grid.region_within(l, &pattern.window))
        .collect();
    RegionAssignment { members, retained }
}

/// Per-type counts divided by region area.
pub fn local_intensity<'a, I>(marks: I, area: f64, h: usize) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a MarkedPoint>,
{
    if !(area > 0.0) {
        return Err(PcmError::ZeroArea);
    }
    let mut counts = vec![0usize; h];
    for p in marks {
        counts[p.mark as usize - 1] += 1;
    }
    Ok(counts.into_iter().map(|c| c as f64 / area).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionSummary {
    pub row: usize,
    pub col: usize,
    pub retained: bool,
    pub n_points: usize,
    pub intensity: Option<Vec<f64>>,
    pub curve: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSummary {
    pub subject_id: String,
    pub group: Option<Group>,
    pub regions: Vec<RegionSummary>,
}

/// Intensities and processed PCF curves for every region of one pattern.
/// Intensities exist for retained regions; curves additionally need two points.
pub fn summarize_pattern(
    pattern: &MarkedPointPattern,
    grid: &GridSpec,
    h: usize,
    r_grid: &[f64],
) -> Result<GridSummary> {
    let assignment = assign_regions(pattern, grid);
    let mut regions = Vec::with_capacity(grid.n_regions());
    for (l, members) in assignment.members.iter().enumerate() {
        let (row, col) = grid.row_col(l);
        let retained = assignment.retained[l];
        let mut summary = RegionSummary {
            row,
            col,
            retained,
            n_points: members.len(),
            intensity: None,
            curve: None,
        };
        if retained {
            let pts = members.iter().map(|&i| &pattern.points[i]);
            summary.intensity = Some(local_intensity(pts, grid.region_area(), h)?);
            let xy: Vec<(f64, f64)> = members
                .iter()
                .map(|&i| (pattern.points[i].x, pattern.points[i].y))
                .collect();
            summary.curve = local_pcf(&xy, &grid.region_rect(l), r_grid)
                .map(|raw| process_curve(&raw, r_grid));
        }
        regions.push(summary);
    }
    Ok(GridSummary {
        subject_id: pattern.subject_id.clone(),
        group: pattern.group,
        regions,
    })
}

/// Parallel over subjects; output order follows input order.
pub fn summarize_patterns(
    patterns: &[MarkedPointPattern],
    grid: &GridSpec,
    h: usize,
    r_d: usize,
) -> Result<Vec<GridSummary>> {
    let r = r_grid(grid.radius(), r_d);
    patterns
        .par_iter()
        .map(|p| summarize_pattern(p, grid, h, &r))
        .collect()
}
