//! Warm start for the labels: EM for the non-spatial Gaussian mixture with
//! shared per-column variances, started from several k-means solutions.

use rand::Rng;

use crate::error::Result;
use crate::kmeans::kmeans_masked;
use crate::stats::log_sum_exp;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const MAX_EM_ITERATIONS: usize = 200;
const VARIANCE_FLOOR: f64 = 1e-4;

/// Fitted mixture and its hard assignments (`None` for featureless rows).
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFit {
    pub labels: Vec<Option<usize>>,
    pub log_lik: f64,
    pub weights: Vec<f64>,
    /// `Q × M` row-major.
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

fn em_from(rows: &[(&[f64], &[bool])], m: usize, start: &[Option<usize>], hard: bool) -> MixtureFit {
    let q = rows[0].0.len();
    let n = rows.len();
    let mut resp = vec![0.0; n * m];
    for (i, s) in start.iter().enumerate() {
        if let Some(c) = s {
            resp[i * m + c] = 1.0;
        }
    }
    let mut weights = vec![1.0 / m as f64; m];
    let mut means = vec![0.0; q * m];
    let mut variances = vec![1.0; q];
    let mut log_lik = f64::NEG_INFINITY;
    let mut logp = vec![0.0; m];
    for _ in 0..MAX_EM_ITERATIONS {
        // M step
        let mut mass = vec![0.0; m];
        let mut sum = vec![0.0; q * m];
        let mut wsum = vec![0.0; q * m];
        for (i, (x, mask)) in rows.iter().enumerate() {
            let r = &resp[i * m..(i + 1) * m];
            if !mask.iter().any(|&a| a) {
                continue;
            }
            for e in 0..m {
                mass[e] += r[e];
            }
            for j in (0..q).filter(|&j| mask[j]) {
                for e in 0..m {
                    sum[j * m + e] += r[e] * x[j];
                    wsum[j * m + e] += r[e];
                }
            }
        }
        let total: f64 = mass.iter().sum();
        for e in 0..m {
            weights[e] = ((mass[e] + 1e-9) / (total + m as f64 * 1e-9)).max(1e-12);
        }
        for k in 0..q * m {
            if wsum[k] > 0.0 {
                means[k] = sum[k] / wsum[k];
            }
        }
        let mut ss = vec![0.0; q];
        let mut cnt = vec![0.0; q];
        for (i, (x, mask)) in rows.iter().enumerate() {
            for j in (0..q).filter(|&j| mask[j]) {
                cnt[j] += 1.0;
                for e in 0..m {
                    ss[j] += resp[i * m + e] * (x[j] - means[j * m + e]).powi(2);
                }
            }
        }
        for j in 0..q {
            variances[j] = if cnt[j] > 0.0 { (ss[j] / cnt[j]).max(VARIANCE_FLOOR) } else { 1.0 };
        }
        // E step
        let mut ll = 0.0;
        for (i, (x, mask)) in rows.iter().enumerate() {
            if !mask.iter().any(|&a| a) {
                continue;
            }
            for (e, lp) in logp.iter_mut().enumerate() {
                *lp = weights[e].ln();
                for j in (0..q).filter(|&j| mask[j]) {
                    let d = x[j] - means[j * m + e];
                    *lp -= 0.5 * (LN_2PI + variances[j].ln() + d * d / variances[j]);
                }
            }
            let r = &mut resp[i * m..(i + 1) * m];
            if hard {
                let best = (0..m).fold(0, |b, e| if logp[e] > logp[b] { e } else { b });
                ll += logp[best];
                r.fill(0.0);
                r[best] = 1.0;
            } else {
                let z = log_sum_exp(&logp);
                ll += z;
                for e in 0..m {
                    r[e] = (logp[e] - z).exp();
                }
            }
        }
        let converged = (ll - log_lik).abs() <= 1e-10 * ll.abs().max(1.0);
        log_lik = ll;
        if converged {
            break;
        }
    }
    let labels = rows
        .iter()
        .enumerate()
        .map(|(i, (_, mask))| {
            mask.iter().any(|&a| a).then(|| {
                let r = &resp[i * m..(i + 1) * m];
                (0..m).fold(0, |b, e| if r[e] > r[b] { e } else { b })
            })
        })
        .collect();
    MixtureFit {
        labels,
        log_lik,
        weights,
        means,
        variances,
    }
}

/// Best EM fit over `restarts` k-means starts by mixture log-likelihood.
pub fn mixture_em<R: Rng + ?Sized>(
    rows: &[(&[f64], &[bool])],
    m: usize,
    restarts: usize,
    hard: bool,
    rng: &mut R,
) -> Result<MixtureFit> {
    let mut best: Option<MixtureFit> = None;
    for _ in 0..restarts.max(1) {
        let (start, _) = kmeans_masked(rows, m, 1, rng)?;
        let fit = em_from(rows, m, &start, hard);
        if best.as_ref().is_none_or(|b| fit.log_lik > b.log_lik) {
            best = Some(fit);
        }
    }
    Ok(best.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::derive_rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn recovers_unequal_spread_components() {
        let mut rng = derive_rng(8, &[]);
        // second column is pure noise at a large scale; k-means on raw
        // columns would split along it
        let noise = Normal::new(0.0, 3.0).unwrap();
        let tight = Normal::new(0.0, 0.2).unwrap();
        let mut data = Vec::new();
        let mut truth = Vec::new();
        for i in 0..300 {
            let c = i % 2;
            data.push([c as f64 * 2.0 + tight.sample(&mut rng), noise.sample(&mut rng)]);
            truth.push(c);
        }
        let mask = [true, true];
        let rows: Vec<(&[f64], &[bool])> = data.iter().map(|x| (&x[..], &mask[..])).collect();
        let fit = mixture_em(&rows, 2, 10, false, &mut rng).unwrap();
        let flip = fit.labels[0] != Some(truth[0]);
        let agree = fit
            .labels
            .iter()
            .zip(&truth)
            .filter(|(l, t)| (l.unwrap() == **t) ^ flip)
            .count();
        assert!(agree >= 295, "{agree}");
        assert!((fit.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn featureless_rows_stay_unassigned() {
        let mut rng = derive_rng(9, &[]);
        let x = [[0.0], [0.1], [5.0], [5.1], [9.0]];
        let yes = [true];
        let no = [false];
        let rows: Vec<(&[f64], &[bool])> = x
            .iter()
            .enumerate()
            .map(|(i, v)| (&v[..], if i == 4 { &no[..] } else { &yes[..] }))
            .collect();
        let fit = mixture_em(&rows, 2, 3, true, &mut rng).unwrap();
        assert_eq!(fit.labels[4], None);
        assert_eq!(fit.labels[0], fit.labels[1]);
        assert_ne!(fit.labels[0], fit.labels[2]);
    }
}
