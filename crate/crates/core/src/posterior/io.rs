//! CSV outputs of the posterior summaries. Cluster and type indices are 1-based.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{PcmError, Result};
use crate::sampler::ChainMeta;

use super::{ClusterSummaries, LabelSummary};

pub fn write_labels<W: Write>(w: W, meta: &ChainMeta, s: &LabelSummary) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["subject_id".to_string(), "row".into(), "col".into(), "retained".into(), "map_label".into()];
    header.extend((1..=s.m).map(|e| format!("prob_{e}")));
    out.write_record(&header)?;
    for (i, id) in meta.subjects.iter().enumerate() {
        let retained = meta.retained_flags(i);
        for r in 0..meta.rows * meta.cols {
            let mut rec = vec![
                id.clone(),
                (r / meta.cols).to_string(),
                (r % meta.cols).to_string(),
                (retained[r] as u8).to_string(),
                (s.map[i][r] as usize + 1).to_string(),
            ];
            rec.extend(s.probs[i][r * s.m..(r + 1) * s.m].iter().map(|p| p.to_string()));
            out.write_record(&rec)?;
        }
    }
    out.flush().map_err(|e| PcmError::io("<labels>", e))
}

pub fn write_occupancy<W: Write>(w: W, s: &LabelSummary) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["group", "cluster", "proportion"])?;
    for (g, occ) in &s.occupancy {
        for (e, p) in occ.iter().enumerate() {
            out.write_record([g.clone(), (e + 1).to_string(), p.to_string()])?;
        }
    }
    out.flush().map_err(|e| PcmError::io("<occupancy>", e))
}

/// Wide cluster table: one row per cluster with intensity and curve summaries.
pub fn write_clusters<W: Write>(w: W, c: &ClusterSummaries, h: usize) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["cluster".to_string()];
    for t in 1..=h {
        for s in ["mean", "lower", "median", "upper"] {
            header.push(format!("lambda_{t}_{s}"));
        }
    }
    for k in 1..=c.r_grid.len() {
        for s in ["mean", "lower", "median", "upper"] {
            header.push(format!("pcf_{k}_{s}"));
        }
    }
    out.write_record(&header)?;
    for cl in &c.clusters {
        let mut rec = vec![(cl.cluster + 1).to_string()];
        for b in [&cl.intensity, &cl.pcf] {
            for k in 0..b.mean.len() {
                rec.extend([b.mean[k], b.lower[k], b.median[k], b.upper[k]].iter().map(|v| v.to_string()));
            }
        }
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| PcmError::io("<clusters>", e))
}

pub fn write_pcf_long<W: Write>(w: W, c: &ClusterSummaries) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["cluster", "r", "mean", "lower", "median", "upper"])?;
    for cl in &c.clusters {
        for (k, r) in c.r_grid.iter().enumerate() {
            let b = &cl.pcf;
            out.write_record([
                (cl.cluster + 1).to_string(),
                r.to_string(),
                b.mean[k].to_string(),
                b.lower[k].to_string(),
                b.median[k].to_string(),
                b.upper[k].to_string(),
            ])?;
        }
    }
    out.flush().map_err(|e| PcmError::io("<pcf>", e))
}

pub fn write_intensity_long<W: Write>(w: W, c: &ClusterSummaries) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["cluster", "type", "mean", "lower", "median", "upper"])?;
    for cl in &c.clusters {
        let b = &cl.intensity;
        for k in 0..b.mean.len() {
            out.write_record([
                (cl.cluster + 1).to_string(),
                (k + 1).to_string(),
                b.mean[k].to_string(),
                b.lower[k].to_string(),
                b.median[k].to_string(),
                b.upper[k].to_string(),
            ])?;
        }
    }
    out.flush().map_err(|e| PcmError::io("<intensity>", e))
}

/// Posterior samples of g at the requested distances, one row per draw.
pub fn write_pcf_at<W: Write>(w: W, c: &ClusterSummaries) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["cluster", "r", "draw", "pcf"])?;
    for cl in &c.clusters {
        for (r, sample) in &cl.pcf_at {
            for (d, v) in sample.iter().enumerate() {
                out.write_record([(cl.cluster + 1).to_string(), r.to_string(), (d + 1).to_string(), v.to_string()])?;
            }
        }
    }
    out.flush().map_err(|e| PcmError::io("<pcf_at>", e))
}

pub fn write_theta<W: Write>(w: W, rows: &[(String, f64, f64, f64, f64)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["parameter", "mean", "lower", "median", "upper"])?;
    for (name, mean, lo, med, hi) in rows {
        out.write_record([name.clone(), mean.to_string(), lo.to_string(), med.to_string(), hi.to_string()])?;
    }
    out.flush().map_err(|e| PcmError::io("<theta>", e))
}

/// Writes every summary file into `dir` and returns the paths written.
pub fn write_all(
    dir: &Path,
    meta: &ChainMeta,
    labels: &LabelSummary,
    clusters: &ClusterSummaries,
    theta: &[(String, f64, f64, f64, f64)],
    h: usize,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| PcmError::io(dir, e))?;
    let mut written = Vec::new();
    let mut emit = |name: &str, f: &dyn Fn(BufWriter<File>) -> Result<()>| -> Result<()> {
        let path = dir.join(name);
        let file = File::create(&path).map_err(|e| PcmError::io(&path, e))?;
        f(BufWriter::new(file))?;
        written.push(path);
        Ok(())
    };
    emit("labels.csv", &|w| write_labels(w, meta, labels))?;
    emit("occupancy.csv", &|w| write_occupancy(w, labels))?;
    emit("clusters.csv", &|w| write_clusters(w, clusters, h))?;
    emit("pcf_long.csv", &|w| write_pcf_long(w, clusters))?;
    emit("intensity_long.csv", &|w| write_intensity_long(w, clusters))?;
    emit("pcf_at.csv", &|w| write_pcf_at(w, clusters))?;
    emit("theta.csv", &|w| write_theta(w, theta))?;
    Ok(written)
}
