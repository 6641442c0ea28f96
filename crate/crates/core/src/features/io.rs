//! Features CSV and the plain-text basis file.
//!
//! Basis file: one `key value...` line per entry, whitespace separated, floats
//! in shortest round-trip form.
//!
//! ```text
//! pcm-basis 1
//! k <K>
//! h <H>
//! total_variance <v>
//! r_grid <R_d values>
//! mean <R_d values>
//! eigenvalues <K values>
//! eigenvector <R_d values>      (K lines, in order)
//! centers <Q values>
//! scales <Q values>
//! ```

use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{PcmError, Result};
use crate::features::{FeatureMatrix, PcaBasis, SubjectMeta};
use crate::ingest::Group;

pub const BASIS_VERSION: u32 = 1;

/// PCA basis plus the column standardization, everything needed to map
/// standardized cluster means back to original units.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTransform {
    pub basis: PcaBasis,
    pub h: usize,
    pub centers: Vec<f64>,
    pub scales: Vec<f64>,
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn write_basis<W: Write>(mut w: W, t: &FeatureTransform) -> Result<()> {
    let io = |e| PcmError::io("<basis>", e);
    let b = &t.basis;
    writeln!(w, "pcm-basis {BASIS_VERSION}").map_err(io)?;
    writeln!(w, "k {}", b.k()).map_err(io)?;
    writeln!(w, "h {}", t.h).map_err(io)?;
    writeln!(w, "total_variance {}", b.total_variance).map_err(io)?;
    writeln!(w, "r_grid {}", join(&b.r_grid)).map_err(io)?;
    writeln!(w, "mean {}", join(&b.mean_curve)).map_err(io)?;
    writeln!(w, "eigenvalues {}", join(&b.eigenvalues)).map_err(io)?;
    for v in &b.eigenvectors {
        writeln!(w, "eigenvector {}", join(v)).map_err(io)?;
    }
    writeln!(w, "centers {}", join(&t.centers)).map_err(io)?;
    writeln!(w, "scales {}", join(&t.scales)).map_err(io)?;
    Ok(())
}

fn floats(rest: &str) -> Result<Vec<f64>> {
    rest.split_whitespace()
        .map(|s| s.parse::<f64>().map_err(|e| PcmError::Parse(format!("{s:?}: {e}"))))
        .collect()
}

pub fn read_basis<R: Read>(r: R) -> Result<FeatureTransform> {
    let reader = BufReader::new(r);
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| PcmError::Parse("empty basis file".into()))?
        .map_err(|e| PcmError::io("<basis>", e))?;
    if first.trim() != format!("pcm-basis {BASIS_VERSION}") {
        return Err(PcmError::Parse(format!("unsupported basis header {first:?}")));
    }
    let (mut k, mut h, mut total) = (None, None, None);
    let (mut r_grid, mut mean, mut values, mut centers, mut scales) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut vectors = Vec::new();
    for line in lines {
        let line = line.map_err(|e| PcmError::io("<basis>", e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        match key {
            "k" => k = rest.trim().parse::<usize>().ok(),
            "h" => h = rest.trim().parse::<usize>().ok(),
            "total_variance" => total = rest.trim().parse::<f64>().ok(),
            "r_grid" => r_grid = floats(rest)?,
            "mean" => mean = floats(rest)?,
            "eigenvalues" => values = floats(rest)?,
            "eigenvector" => vectors.push(floats(rest)?),
            "centers" => centers = floats(rest)?,
            "scales" => scales = floats(rest)?,
            other => return Err(PcmError::Parse(format!("unknown basis key {other:?}"))),
        }
    }
    let (k, h, total) = match (k, h, total) {
        (Some(k), Some(h), Some(t)) => (k, h, t),
        _ => return Err(PcmError::Parse("basis file missing k, h or total_variance".into())),
    };
    let p = r_grid.len();
    if vectors.len() != k
        || values.len() != k
        || mean.len() != p
        || vectors.iter().any(|v| v.len() != p)
        || centers.len() != k + h
        || scales.len() != k + h
    {
        return Err(PcmError::Parse("inconsistent basis dimensions".into()));
    }
    Ok(FeatureTransform {
        basis: PcaBasis {
            r_grid,
            mean_curve: mean,
            eigenvectors: vectors,
            eigenvalues: values,
            total_variance: total,
        },
        h,
        centers,
        scales,
    })
}

/// Columns: `subject_id, group, region_row, region_col, retained, mask, <Q columns>`;
/// masked entries are empty and `mask` is a 0/1 string over the Q columns.
pub fn write_features<W: Write>(w: W, fm: &FeatureMatrix) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["subject_id", "group", "region_row", "region_col", "retained", "mask"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(fm.column_names.iter().cloned());
    wtr.write_record(&header)?;
    for (n, s) in fm.subjects.iter().enumerate() {
        for l in 0..fm.n_regions() {
            let (vals, mask) = fm.region_values(n, l);
            let mut rec = vec![
                s.id.clone(),
                s.group.map(|g| g.as_str().to_string()).unwrap_or_default(),
                (l / fm.cols).to_string(),
                (l % fm.cols).to_string(),
                u8::from(fm.retained[n * fm.n_regions() + l]).to_string(),
                mask.iter().map(|&m| if m { '1' } else { '0' }).collect(),
            ];
            rec.extend(
                vals.iter()
                    .zip(mask)
                    .map(|(v, &m)| if m { v.to_string() } else { String::new() }),
            );
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush().map_err(|e| PcmError::io("<features>", e))?;
    Ok(())
}

/// Reads a features CSV. Centers and scales are not stored in the CSV and are
/// left empty; take them from the basis file.
pub fn read_features<R: Read>(r: R) -> Result<FeatureMatrix> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.len() < 6 || headers.get(0) != Some("subject_id") {
        return Err(PcmError::Parse("unexpected features header".into()));
    }
    let names: Vec<String> = headers.iter().skip(6).map(|s| s.to_string()).collect();
    let q = names.len();
    struct Row {
        row: usize,
        col: usize,
        retained: bool,
        values: Vec<f64>,
        mask: Vec<bool>,
    }
    let mut subjects: Vec<(SubjectMeta, Vec<Row>)> = Vec::new();
    let (mut rows, mut cols) = (0, 0);
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row_no = i + 1;
        let bad = |m: String| PcmError::Row { row: row_no, message: m };
        let id = rec[0].to_string();
        let group = match rec[1].trim() {
            "" => None,
            g => Some(Group::parse(g).ok_or_else(|| bad(format!("unknown group {g:?}")))?),
        };
        let parse_u = |s: &str| s.trim().parse::<usize>().map_err(|e| bad(format!("{s:?}: {e}")));
        let r = parse_u(&rec[2])?;
        let c = parse_u(&rec[3])?;
        let retained = parse_u(&rec[4])? == 1;
        let mut values = vec![0.0; q];
        let mut mask = vec![false; q];
        for j in 0..q {
            let f = rec[6 + j].trim();
            if !f.is_empty() {
                values[j] = f.parse::<f64>().map_err(|e| bad(format!("{f:?}: {e}")))?;
                mask[j] = true;
            }
        }
        rows = rows.max(r + 1);
        cols = cols.max(c + 1);
        let row = Row { row: r, col: c, retained, values, mask };
        match subjects.last_mut() {
            Some((meta, list)) if meta.id == id => list.push(row),
            _ => subjects.push((SubjectMeta { id, group }, vec![row])),
        }
    }
    let l = rows * cols;
    let mut fm = FeatureMatrix {
        subjects: Vec::with_capacity(subjects.len()),
        rows,
        cols,
        column_names: names,
        values: vec![0.0; subjects.len() * l * q],
        mask: vec![false; subjects.len() * l * q],
        retained: vec![false; subjects.len() * l],
        centers: Vec::new(),
        scales: Vec::new(),
    };
    for (n, (meta, list)) in subjects.into_iter().enumerate() {
        if list.len() != l {
            return Err(PcmError::Parse(format!(
                "subject {} has {} regions, expected {l}",
                meta.id,
                list.len()
            )));
        }
        for row in list {
            let region = row.row * cols + row.col;
            let o = (n * l + region) * q;
            fm.values[o..o + q].copy_from_slice(&row.values);
            fm.mask[o..o + q].copy_from_slice(&row.mask);
            fm.retained[n * l + region] = row.retained;
        }
        fm.subjects.push(meta);
    }
    Ok(fm)
}
