//! Grid-stats CSV: one row per (subject, region); missing values are empty fields.
//!
//! Columns: `subject_id, group, region_row, region_col, retained, n_points,
//! lambda_1..lambda_H, curve_<r>...` where each curve header carries its distance.

use std::io::{Read, Write};

use crate::error::{PcmError, Result};
use crate::gridstats::{GridSummary, RegionSummary};
use crate::ingest::Group;

/// Grid-stats as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct GridStatsTable {
    pub h: usize,
    pub rows: usize,
    pub cols: usize,
    pub r_grid: Vec<f64>,
    pub summaries: Vec<GridSummary>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_grid_stats<W: Write>(
    writer: W,
    summaries: &[GridSummary],
    h: usize,
    r_grid: &[f64],
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = [
        "subject_id",
        "group",
        "region_row",
        "region_col",
        "retained",
        "n_points",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((1..=h).map(|k| format!("lambda_{k}")));
    header.extend(r_grid.iter().map(|r| format!("curve_{r}")));
    wtr.write_record(&header)?;
    for s in summaries {
        for reg in &s.regions {
            let mut rec = vec![
                s.subject_id.clone(),
                s.group.map(|g| g.as_str().to_string()).unwrap_or_default(),
                reg.row.to_string(),
                reg.col.to_string(),
                u8::from(reg.retained).to_string(),
                reg.n_points.to_string(),
            ];
            for k in 0..h {
                rec.push(opt(reg.intensity.as_ref().map(|v| v[k])));
            }
            for k in 0..r_grid.len() {
                rec.push(opt(reg.curve.as_ref().map(|v| v[k])));
            }
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush().map_err(|e| PcmError::io("<grid-stats>", e))?;
    Ok(())
}

fn parse_f64(s: &str, row: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| PcmError::Row {
        row,
        message: format!("bad number {s:?}: {e}"),
    })
}

fn parse_usize(s: &str, row: usize) -> Result<usize> {
    s.trim().parse::<usize>().map_err(|e| PcmError::Row {
        row,
        message: format!("bad integer {s:?}: {e}"),
    })
}

/// All-or-nothing optional vector: every field empty gives `None`.
fn parse_block(fields: &[&str], row: usize) -> Result<Option<Vec<f64>>> {
    let empty = fields.iter().filter(|f| f.trim().is_empty()).count();
    if empty == fields.len() {
        return Ok(None);
    }
    if empty > 0 {
        return Err(PcmError::Row {
            row,
            message: "partially missing block".into(),
        });
    }
    fields.iter().map(|f| parse_f64(f, row)).collect::<Result<Vec<_>>>().map(Some)
}

pub fn read_grid_stats<R: Read>(reader: R) -> Result<GridStatsTable> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let h = headers.iter().filter(|c| c.starts_with("lambda_")).count();
    let r_grid = headers
        .iter()
        .filter_map(|c| c.strip_prefix("curve_"))
        .map(|r| r.parse::<f64>().map_err(|e| PcmError::Parse(format!("curve header {r}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let lam0 = 6;
    let cur0 = lam0 + h;
    if headers.len() != cur0 + r_grid.len() || headers.get(0) != Some("subject_id") {
        return Err(PcmError::Parse("unexpected grid-stats header".into()));
    }
    let mut summaries: Vec<GridSummary> = Vec::new();
    let (mut rows, mut cols) = (0usize, 0usize);
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row_no = i + 1;
        let fields: Vec<&str> = rec.iter().collect();
        let subject = fields[0].to_string();
        let group = match fields[1].trim() {
            "" => None,
            g => Some(Group::parse(g).ok_or_else(|| PcmError::Row {
                row: row_no,
                message: format!("unknown group {g:?}"),
            })?),
        };
        let region = RegionSummary {
            row: parse_usize(fields[2], row_no)?,
            col: parse_usize(fields[3], row_no)?,
            retained: parse_usize(fields[4], row_no)? == 1,
            n_points: parse_usize(fields[5], row_no)?,
            intensity: parse_block(&fields[lam0..cur0], row_no)?,
            curve: parse_block(&fields[cur0..], row_no)?,
        };
        rows = rows.max(region.row + 1);
        cols = cols.max(region.col + 1);
        match summaries.last_mut() {
            Some(s) if s.subject_id == subject => s.regions.push(region),
            _ => summaries.push(GridSummary {
                subject_id: subject,
                group,
                regions: vec![region],
            }),
        }
    }
    for s in &mut summaries {
        s.regions.sort_by_key(|r| (r.row, r.col));
        if s.regions.len() != rows * cols {
            return Err(PcmError::Parse(format!(
                "subject {} has {} regions, expected {}",
                s.subject_id,
                s.regions.len(),
                rows * cols
            )));
        }
    }
    Ok(GridStatsTable {
        h,
        rows,
        cols,
        r_grid,
        summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_missing_fields() {
        let s = GridSummary {
            subject_id: "a".into(),
            group: Some(Group::Cancer),
            regions: vec![
                RegionSummary {
                    row: 0,
                    col: 0,
                    retained: true,
                    n_points: 3,
                    intensity: Some(vec![1.5, 0.0]),
                    curve: Some(vec![0.1, 0.7]),
                },
                RegionSummary {
                    row: 0,
                    col: 1,
                    retained: false,
                    n_points: 0,
                    intensity: None,
                    curve: None,
                },
            ],
        };
        let mut buf = Vec::new();
        write_grid_stats(&mut buf, &[s.clone()], 2, &[0.25, 0.5]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(2).unwrap().ends_with("0,0,,,,"));
        let t = read_grid_stats(buf.as_slice()).unwrap();
        assert_eq!(t.h, 2);
        assert_eq!((t.rows, t.cols), (1, 2));
        assert_eq!(t.r_grid, vec![0.25, 0.5]);
        assert_eq!(t.summaries, vec![s]);
    }
}
