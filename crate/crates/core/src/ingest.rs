//! Loading and validating marked point patterns.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{PcmError, Result};

/// Axis-aligned observation window. Membership is closed on all four sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Rectangle {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Self {
        Rectangle {
            xmin,
            xmax,
            ymin,
            ymax,
        }
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.xmin && x <= self.xmax && y >= self.ymin && y <= self.ymax
    }

    /// True when `other` lies inside `self`, allowing `tol` of slack on every side.
    pub fn contains_rect(&self, other: &Rectangle, tol: f64) -> bool {
        other.xmin >= self.xmin - tol
            && other.xmax <= self.xmax + tol
            && other.ymin >= self.ymin - tol
            && other.ymax <= self.ymax + tol
    }

    pub fn is_valid(&self) -> bool {
        self.width() > 0.0 && self.height() > 0.0 && self.area().is_finite()
    }
}

/// Two-level subject covariate selecting the Potts offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Control,
    Cancer,
}

impl Group {
    pub fn parse(s: &str) -> Option<Group> {
        match s.trim().to_ascii_lowercase().as_str() {
            "0" | "control" => Some(Group::Control),
            "1" | "cancer" => Some(Group::Cancer),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Group::Control => "control",
            Group::Cancer => "cancer",
        }
    }

    pub fn index(&self) -> usize {
        match self {
            Group::Control => 0,
            Group::Cancer => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkedPoint {
    pub x: f64,
    pub y: f64,
    /// Cell type in `1..=H`.
    pub mark: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkedPointPattern {
    pub subject_id: String,
    pub points: Vec<MarkedPoint>,
    pub window: Rectangle,
    pub group: Option<Group>,
}

impl MarkedPointPattern {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Deserialize)]
struct PointRow {
    subject_id: String,
    x: f64,
    y: f64,
    #[serde(rename = "type")]
    mark: i64,
    #[serde(default)]
    group: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WindowRow {
    subject_id: String,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| PcmError::io(path, e))
}

/// Reads a windows CSV with header `subject_id,xmin,xmax,ymin,ymax`.
pub fn read_windows<R: Read>(reader: R) -> Result<BTreeMap<String, Rectangle>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = BTreeMap::new();
    for rec in rdr.deserialize::<WindowRow>() {
        let row: WindowRow = rec?;
        let rect = Rectangle::new(row.xmin, row.xmax, row.ymin, row.ymax);
        if !rect.is_valid() {
            return Err(PcmError::InvalidWindow {
                subject: row.subject_id,
                message: "width and height must be strictly positive".into(),
            });
        }
        out.insert(row.subject_id, rect);
    }
    Ok(out)
}

pub fn load_windows(path: &Path) -> Result<BTreeMap<String, Rectangle>> {
    read_windows(open(path)?)
}

/// Parses a points CSV (`subject_id,x,y,type[,group]`) and validates every row
/// against its subject's window and the declared number of types `h`.
pub fn read_patterns<R: Read>(
    reader: R,
    windows: &BTreeMap<String, Rectangle>,
    h: usize,
) -> Result<Vec<MarkedPointPattern>> {
    for (subject, w) in windows {
        if !w.is_valid() {
            return Err(PcmError::InvalidWindow {
                subject: subject.clone(),
                message: "width and height must be strictly positive".into(),
            });
        }
    }
    let mut rdr = csv::Reader::from_reader(reader);
    let mut patterns: Vec<MarkedPointPattern> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut records = rdr.deserialize::<PointRow>();
    let mut data_row = 0usize;
    while let Some(rec) = records.next() {
        data_row += 1;
        let row = rec.map_err(|e| PcmError::Row {
            row: data_row,
            message: e.to_string(),
        })?;
        let bad = |message: String| PcmError::Row {
            row: data_row,
            message,
        };
        if row.mark < 1 || row.mark as usize > h {
            return Err(bad(format!("type {} outside 1..={h}", row.mark)));
        }
        if !row.x.is_finite() || !row.y.is_finite() {
            return Err(bad("non-finite coordinate".into()));
        }
        let window = *windows
            .get(&row.subject_id)
            .ok_or_else(|| PcmError::MissingWindow(row.subject_id.clone()))?;
        if !window.contains(row.x, row.y) {
            return Err(bad(format!(
                "point ({}, {}) outside window of subject {}",
                row.x, row.y, row.subject_id
            )));
        }
        let group = match row.group.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(g) => Some(Group::parse(g).ok_or_else(|| bad(format!("unknown group {g:?}")))?),
        };
        let slot = *index.entry(row.subject_id.clone()).or_insert_with(|| {
            patterns.push(MarkedPointPattern {
                subject_id: row.subject_id.clone(),
                points: Vec::new(),
                window,
                group,
            });
            patterns.len() - 1
        });
        let pattern = &mut patterns[slot];
        if pattern.group != group {
            return Err(bad(format!(
                "group for subject {} changes between rows",
                row.subject_id
            )));
        }
        pattern.points.push(MarkedPoint {
            x: row.x,
            y: row.y,
            mark: row.mark as u32,
        });
    }
    Ok(patterns)
}

/// Loads patterns using the windows declared in the run configuration, either
/// inline or through a windows CSV.
pub fn load_patterns(points_file: &Path, config: &RunConfig) -> Result<Vec<MarkedPointPattern>> {
    let mut windows = config.windows.clone();
    if let Some(path) = &config.paths.windows {
        windows.extend(load_windows(path)?);
    }
    read_patterns(open(points_file)?, &windows, config.h)
}

pub fn write_points<W: Write>(writer: W, patterns: &[MarkedPointPattern]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let with_group = patterns.iter().any(|p| p.group.is_some());
    if with_group {
        wtr.write_record(["subject_id", "x", "y", "type", "group"])?;
    } else {
        wtr.write_record(["subject_id", "x", "y", "type"])?;
    }
    for p in patterns {
        let g = p.group.map(|g| g.as_str()).unwrap_or("");
        for pt in &p.points {
            let mut rec = vec![
                p.subject_id.clone(),
                pt.x.to_string(),
                pt.y.to_string(),
                pt.mark.to_string(),
            ];
            if with_group {
                rec.push(g.to_string());
            }
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush().map_err(|e| PcmError::io("<points>", e))?;
    Ok(())
}

pub fn write_windows<W: Write>(writer: W, patterns: &[MarkedPointPattern]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["subject_id", "xmin", "xmax", "ymin", "ymax"])?;
    for p in patterns {
        let w = p.window;
        wtr.write_record([
            p.subject_id.clone(),
            w.xmin.to_string(),
            w.xmax.to_string(),
            w.ymin.to_string(),
            w.ymax.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| PcmError::io("<windows>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_windows(ids: &[&str]) -> BTreeMap<String, Rectangle> {
        ids.iter()
            .map(|id| (id.to_string(), Rectangle::new(0.0, 1.0, 0.0, 1.0)))
            .collect()
    }

    #[test]
    fn two_subjects_three_points_each() {
        let csv = "subject_id,x,y,type\n\
                   a,0.1,0.1,1\nb,0.2,0.2,2\na,0.3,0.3,2\nb,0.4,0.4,1\na,0.5,0.5,1\nb,0.6,0.6,1\n";
        let pats = read_patterns(csv.as_bytes(), &unit_windows(&["a", "b"]), 2).unwrap();
        assert_eq!(pats.len(), 2);
        assert_eq!(pats[0].subject_id, "a");
        assert_eq!(pats[0].len(), 3);
        assert_eq!(pats[1].len(), 3);
        assert_eq!(pats[0].group, None);
    }

    #[test]
    fn corner_point_is_inside_closed_window() {
        let csv = "subject_id,x,y,type\na,1.0,1.0,1\na,0.0,0.0,1\n";
        let pats = read_patterns(csv.as_bytes(), &unit_windows(&["a"]), 2).unwrap();
        assert_eq!(pats[0].len(), 2);
    }

    #[test]
    fn mark_zero_is_rejected_with_row_number() {
        let csv = "subject_id,x,y,type\na,0.5,0.5,1\na,0.5,0.5,0\n";
        let err = read_patterns(csv.as_bytes(), &unit_windows(&["a"]), 2).unwrap_err();
        match err {
            PcmError::Row { row, .. } => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn point_outside_window_and_missing_window() {
        let csv = "subject_id,x,y,type\na,1.5,0.5,1\n";
        let err = read_patterns(csv.as_bytes(), &unit_windows(&["a"]), 2).unwrap_err();
        assert!(matches!(err, PcmError::Row { row: 1, .. }));
        let csv = "subject_id,x,y,type\nz,0.5,0.5,1\n";
        let err = read_patterns(csv.as_bytes(), &unit_windows(&["a"]), 2).unwrap_err();
        assert!(matches!(err, PcmError::MissingWindow(_)));
    }

    #[test]
    fn degenerate_window_is_rejected() {
        let mut w = unit_windows(&["a"]);
        w.insert("a".into(), Rectangle::new(0.0, 0.0, 0.0, 1.0));
        let csv = "subject_id,x,y,type\na,0.0,0.5,1\n";
        assert!(matches!(
            read_patterns(csv.as_bytes(), &w, 2),
            Err(PcmError::InvalidWindow { .. })
        ));
        assert!(read_windows("subject_id,xmin,xmax,ymin,ymax\na,0,1,1,1\n".as_bytes()).is_err());
    }

    #[test]
    fn group_column_parsed() {
        let csv = "subject_id,x,y,type,group\na,0.5,0.5,1,cancer\nb,0.5,0.5,1,0\n";
        let pats = read_patterns(csv.as_bytes(), &unit_windows(&["a", "b"]), 2).unwrap();
        assert_eq!(pats[0].group, Some(Group::Cancer));
        assert_eq!(pats[1].group, Some(Group::Control));
    }

    proptest! {
        #[test]
        fn write_then_read_round_trips(
            pts in prop::collection::vec((0usize..3, 0.0f64..=1.0, 0.0f64..=1.0, 1u32..=3), 1..60)
        ) {
            let ids = ["s0", "s1", "s2"];
            let windows = unit_windows(&ids);
            let mut csv = String::from("subject_id,x,y,type\n");
            for (s, x, y, m) in &pts {
                csv.push_str(&format!("{},{},{},{}\n", ids[*s], x, y, m));
            }
            let loaded = read_patterns(csv.as_bytes(), &windows, 3).unwrap();
            let total: usize = loaded.iter().map(|p| p.len()).sum();
            prop_assert_eq!(total, pts.len());
            let mut buf = Vec::new();
            write_points(&mut buf, &loaded).unwrap();
            let again = read_patterns(buf.as_slice(), &windows, 3).unwrap();
            prop_assert_eq!(loaded, again);
        }
    }
}
