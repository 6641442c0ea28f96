//! Chain file: a `# meta {json}` line, a tab-separated header, then one row per
//! retained draw. Label fields hold one base-36 digit per region (cluster
//! `η` written as digit `η`, so 1..=35), subjects separated by `|`.

use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{PcmError, Result};
use crate::potts::PottsParams;

use super::{Chain, ChainMeta, Diagnostics, Draw};

const META_PREFIX: &str = "# meta ";

fn werr(e: std::io::Error) -> PcmError {
    PcmError::io("<chain>", e)
}

pub fn chain_header(meta: &ChainMeta) -> Vec<String> {
    let m = meta.m;
    let mut h = vec!["iteration".to_string(), "log_joint".into(), "psi".into()];
    h.extend((1..=m).map(|e| format!("alpha_{e}")));
    if meta.two_groups {
        h.extend((1..=m).map(|e| format!("beta_{e}")));
    }
    h.extend(meta.column_names.iter().map(|n| format!("nu2_{n}")));
    for n in &meta.column_names {
        h.extend((1..=m).map(|e| format!("mu_{n}_{e}")));
    }
    h.push("labels".into());
    h
}

fn encode_labels(labels: &[Vec<u8>]) -> String {
    labels
        .iter()
        .map(|s| {
            s.iter()
                .map(|&c| char::from_digit(c as u32 + 1, 36).expect("label below 36"))
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join("|")
}

fn decode_labels(field: &str, meta: &ChainMeta) -> Result<Vec<Vec<u8>>> {
    let l = meta.rows * meta.cols;
    let subjects: Vec<&str> = field.split('|').collect();
    if subjects.len() != meta.subjects.len() {
        return Err(PcmError::Parse(format!(
            "label field has {} subjects, expected {}",
            subjects.len(),
            meta.subjects.len()
        )));
    }
    subjects
        .iter()
        .map(|s| {
            let v: Option<Vec<u8>> = s
                .chars()
                .map(|c| {
                    c.to_digit(36)
                        .filter(|&d| d >= 1 && d as usize <= meta.m)
                        .map(|d| (d - 1) as u8)
                })
                .collect();
            match v {
                Some(v) if v.len() == l => Ok(v),
                _ => Err(PcmError::Parse(format!("bad label string {s:?}"))),
            }
        })
        .collect()
}

pub fn write_chain<W: Write>(mut w: W, chain: &Chain) -> Result<()> {
    let meta = &chain.meta;
    let json = serde_json::to_string(meta).map_err(|e| PcmError::Parse(e.to_string()))?;
    writeln!(w, "{META_PREFIX}{json}").map_err(werr)?;
    writeln!(w, "{}", chain_header(meta).join("\t")).map_err(werr)?;
    for d in &chain.draws {
        let mut f = vec![d.iteration.to_string(), format!("{}", d.log_joint), format!("{}", d.theta.psi)];
        f.extend(d.theta.alpha.iter().map(|v| format!("{v}")));
        if meta.two_groups {
            let beta = d.theta.beta.as_deref().unwrap_or(&d.theta.alpha);
            f.extend(beta.iter().map(|v| format!("{v}")));
        }
        f.extend(d.nu2.iter().map(|v| format!("{v}")));
        f.extend(d.mu.iter().map(|v| format!("{v}")));
        f.push(encode_labels(&d.labels));
        writeln!(w, "{}", f.join("\t")).map_err(werr)?;
    }
    Ok(())
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.parse().map_err(|_| PcmError::Row {
        row: line,
        message: format!("bad number {s:?}"),
    })
}

/// Reads a chain file; diagnostics are not stored in it and come back empty.
pub fn read_chain<R: Read>(r: R) -> Result<Chain> {
    let mut lines = BufReader::new(r).lines();
    let first = lines
        .next()
        .ok_or_else(|| PcmError::Parse("empty chain file".into()))?
        .map_err(werr)?;
    let json = first
        .strip_prefix(META_PREFIX)
        .ok_or_else(|| PcmError::Parse("chain file lacks the meta line".into()))?;
    let meta: ChainMeta = serde_json::from_str(json).map_err(|e| PcmError::Parse(e.to_string()))?;
    let header = lines
        .next()
        .ok_or_else(|| PcmError::Parse("chain file lacks a header".into()))?
        .map_err(werr)?;
    let expected = chain_header(&meta);
    if header.split('\t').collect::<Vec<_>>() != expected {
        return Err(PcmError::Parse("chain header does not match its metadata".into()));
    }
    let (m, q) = (meta.m, meta.q());
    let mut draws = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(werr)?;
        if line.is_empty() {
            continue;
        }
        let row = i + 3;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != expected.len() {
            return Err(PcmError::Row {
                row,
                message: format!("{} fields, expected {}", f.len(), expected.len()),
            });
        }
        let iteration = f[0].parse().map_err(|_| PcmError::Row {
            row,
            message: "bad iteration".into(),
        })?;
        let nums = f[1..f.len() - 1]
            .iter()
            .map(|s| parse_f64(s, row))
            .collect::<Result<Vec<f64>>>()?;
        let mut at = 2;
        let mut take = |n: usize| {
            let v = nums[at..at + n].to_vec();
            at += n;
            v
        };
        let alpha = take(m);
        let beta = meta.two_groups.then(|| take(m));
        let nu2 = take(q);
        let mu = take(q * m);
        draws.push(Draw {
            iteration,
            log_joint: nums[0],
            theta: PottsParams {
                alpha,
                beta,
                psi: nums[1],
            },
            nu2,
            mu,
            labels: decode_labels(f[f.len() - 1], &meta)?,
        });
    }
    let diagnostics = Diagnostics {
        chain: meta.chain,
        draws: draws.len(),
        acceptance: Default::default(),
        proposal_scales: Default::default(),
        effective_sample_size: Default::default(),
    };
    Ok(Chain {
        meta,
        draws,
        diagnostics,
    })
}

pub fn write_diagnostics<W: Write>(w: W, diagnostics: &[Diagnostics]) -> Result<()> {
    serde_json::to_writer_pretty(w, diagnostics).map_err(|e| PcmError::Parse(e.to_string()))
}

pub fn read_diagnostics<R: Read>(r: R) -> Result<Vec<Diagnostics>> {
    serde_json::from_reader(r).map_err(|e| PcmError::Parse(e.to_string()))
}
