//! Region label tables: `subject_id,row,col,label` with 1-based labels and
//! empty fields for unlabeled regions.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{PcmError, Result};

pub type RegionKey = (String, usize, usize);

pub fn write_region_labels<W: Write>(
    w: W,
    subjects: &[String],
    cols: usize,
    labels: &[Vec<Option<usize>>],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["subject_id", "row", "col", "label"])?;
    for (id, subject) in subjects.iter().zip(labels) {
        for (l, c) in subject.iter().enumerate() {
            out.write_record([
                id.clone(),
                (l / cols).to_string(),
                (l % cols).to_string(),
                c.map(|c| (c + 1).to_string()).unwrap_or_default(),
            ])?;
        }
    }
    out.flush().map_err(|e| PcmError::io("<labels>", e))
}

/// Reads a label table. The label column may be named `label` or
/// `map_label`; when a `retained` column is present, rows with `0` count as
/// unlabeled.
pub fn read_region_labels<R: Read>(r: R) -> Result<BTreeMap<RegionKey, Option<usize>>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    let find = |name: &str| header.iter().position(|h| h == name);
    let missing = |name: &str| PcmError::Parse(format!("label table has no {name} column"));
    let subject = find("subject_id").ok_or_else(|| missing("subject_id"))?;
    let row = find("row").ok_or_else(|| missing("row"))?;
    let col = find("col").ok_or_else(|| missing("col"))?;
    let label = find("label").or_else(|| find("map_label")).ok_or_else(|| missing("label"))?;
    let retained = find("retained");
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |message: String| PcmError::Row { row: i + 1, message };
        let int = |j: usize| -> Result<usize> {
            rec[j].trim().parse().map_err(|_| bad(format!("invalid integer {:?}", &rec[j])))
        };
        let key = (rec[subject].to_string(), int(row)?, int(col)?);
        let kept = retained.is_none_or(|j| rec[j].trim() != "0");
        let value = match rec[label].trim() {
            "" => None,
            _ if !kept => None,
            _ => {
                let c = int(label)?;
                if c == 0 {
                    return Err(bad("labels are 1-based".into()));
                }
                Some(c - 1)
            }
        };
        if out.insert(key, value).is_some() {
            return Err(bad(format!("duplicate region for subject {}", &rec[subject])));
        }
    }
    Ok(out)
}
