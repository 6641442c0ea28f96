//! Cubic smoothing spline evaluated at its knots, with the penalty chosen by
//! generalized cross-validation.
//!
//! The fit is `f = (I + λK)^{-1} y` where `K = Q R^{-1} Qᵀ` is the natural cubic
//! spline roughness matrix, so `fᵀ K f = ∫ f''²`. `K` is diagonalized once per
//! knot layout; afterwards every λ costs O(n).

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigenbasis of the roughness matrix for one knot layout.
#[derive(Debug)]
pub struct SplineBasis {
    n: usize,
    /// Columns are eigenvectors of `K`.
    vectors: DMatrix<f64>,
    eigenvalues: Vec<f64>,
}

fn roughness_matrix(x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let mut q = DMatrix::<f64>::zeros(n, n - 2);
    let mut r = DMatrix::<f64>::zeros(n - 2, n - 2);
    for j in 0..n - 2 {
        q[(j, j)] = 1.0 / h[j];
        q[(j + 1, j)] = -1.0 / h[j] - 1.0 / h[j + 1];
        q[(j + 2, j)] = 1.0 / h[j + 1];
        r[(j, j)] = (h[j] + h[j + 1]) / 3.0;
        if j + 1 < n - 2 {
            r[(j, j + 1)] = h[j + 1] / 6.0;
            r[(j + 1, j)] = h[j + 1] / 6.0;
        }
    }
    let chol = r.cholesky().expect("spline band matrix is positive definite");
    let rinv_qt = chol.solve(&q.transpose());
    let k = &q * rinv_qt;
    // symmetrize away rounding
    (&k + k.transpose()) * 0.5
}

impl SplineBasis {
    pub fn new(x: &[f64]) -> Self {
        let n = x.len();
        assert!(n >= 3, "smoothing spline needs at least three knots");
        let eig = SymmetricEigen::new(roughness_matrix(x));
        let top = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
        // constants and lines span the exact null space
        let floor = 1e-10 * top;
        SplineBasis {
            n,
            eigenvalues: eig
                .eigenvalues
                .iter()
                .map(|&v| if v > floor { v } else { 0.0 })
                .collect(),
            vectors: eig.eigenvectors,
        }
    }

    /// Shared basis for `n` equally spaced knots. Equal spacing makes the fit
    /// independent of the actual spacing once λ is chosen by GCV.
    pub fn equispaced(n: usize) -> Arc<SplineBasis> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<SplineBasis>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(b) = cache.lock().unwrap().get(&n) {
            return Arc::clone(b);
        }
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let basis = Arc::new(SplineBasis::new(&x));
        cache
            .lock()
            .unwrap()
            .entry(n)
            .or_insert_with(|| Arc::clone(&basis))
            .clone()
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn gcv(&self, coef2: &[f64], log_lambda: f64) -> Option<f64> {
        let lambda = 10f64.powf(log_lambda);
        let mut rss = 0.0;
        let mut trace = 0.0;
        for (c2, d) in coef2.iter().zip(&self.eigenvalues) {
            let s = 1.0 / (1.0 + lambda * d);
            trace += s;
            let resid = 1.0 - s;
            rss += resid * resid * c2;
        }
        let dof_left = self.n as f64 - trace;
        if dof_left < 0.5 {
            return None;
        }
        Some(self.n as f64 * rss / (dof_left * dof_left))
    }

    /// GCV-selected smoothing of `y`; returns `(fitted, log10 λ)`.
    pub fn smooth(&self, y: &[f64]) -> (Vec<f64>, f64) {
        assert_eq!(y.len(), self.n);
        let coef = self.vectors.tr_mul(&DVector::from_column_slice(y));
        let coef2: Vec<f64> = coef.iter().map(|c| c * c).collect();
        let grid: Vec<f64> = (0..=200).map(|i| -6.0 + 0.1 * i as f64).collect();
        let mut best: Option<(usize, f64)> = None;
        for (i, &ll) in grid.iter().enumerate() {
            if let Some(v) = self.gcv(&coef2, ll) {
                if best.map_or(true, |(_, b)| v < b) {
                    best = Some((i, v));
                }
            }
        }
        let log_lambda = match best {
            None => *grid.last().unwrap(),
            Some((i, _)) => {
                // golden-section refinement inside the bracketing cells
                let mut a = grid[i.saturating_sub(1)];
                let mut b = grid[(i + 1).min(grid.len() - 1)];
                let f = |ll: f64| self.gcv(&coef2, ll).unwrap_or(f64::INFINITY);
                let g = 0.5 * (5f64.sqrt() - 1.0);
                let mut c = b - g * (b - a);
                let mut d = a + g * (b - a);
                let (mut fc, mut fd) = (f(c), f(d));
                for _ in 0..40 {
                    if fc < fd {
                        b = d;
                        d = c;
                        fd = fc;
                        c = b - g * (b - a);
                        fc = f(c);
                    } else {
                        a = c;
                        c = d;
                        fc = fd;
                        d = a + g * (b - a);
                        fd = f(d);
                    }
                }
                let mid = 0.5 * (a + b);
                if f(mid) <= f(grid[i]) {
                    mid
                } else {
                    grid[i]
                }
            }
        };
        (self.fit_with(&coef, log_lambda), log_lambda)
    }

    fn fit_with(&self, coef: &DVector<f64>, log_lambda: f64) -> Vec<f64> {
        let lambda = 10f64.powf(log_lambda);
        let shrunk = DVector::from_iterator(
            self.n,
            coef.iter()
                .zip(&self.eigenvalues)
                .map(|(c, d)| c / (1.0 + lambda * d)),
        );
        (&self.vectors * shrunk).iter().copied().collect()
    }

    /// Smoothing with a fixed λ (no GCV).
    pub fn smooth_fixed(&self, y: &[f64], log_lambda: f64) -> Vec<f64> {
        let coef = self.vectors.tr_mul(&DVector::from_column_slice(y));
        self.fit_with(&coef, log_lambda)
    }

    /// Roughness `yᵀ K y` (the integrated squared second derivative of the
    /// natural interpolating spline through `y`).
    pub fn roughness(&self, y: &[f64]) -> f64 {
        let coef = self.vectors.tr_mul(&DVector::from_column_slice(y));
        coef.iter()
            .zip(&self.eigenvalues)
            .map(|(c, d)| c * c * d)
            .sum()
    }
}

fn is_equispaced(x: &[f64]) -> bool {
    if x.len() < 3 {
        return true;
    }
    let h0 = x[1] - x[0];
    x.windows(2)
        .all(|w| ((w[1] - w[0]) - h0).abs() <= 1e-9 * h0.abs().max(f64::MIN_POSITIVE))
}

/// Square root, smoothing spline, and clamping at zero of a raw PCF estimate.
pub fn process_curve(raw: &[f64], r_grid: &[f64]) -> Vec<f64> {
    let sqrt: Vec<f64> = raw.iter().map(|v| v.max(0.0).sqrt()).collect();
    if sqrt.len() < 3 {
        return sqrt;
    }
    let fitted = if is_equispaced(r_grid) {
        SplineBasis::equispaced(sqrt.len()).smooth(&sqrt).0
    } else {
        SplineBasis::new(r_grid).smooth(&sqrt).0
    };
    fitted.into_iter().map(|v| v.max(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    use crate::gridstats::pcf::r_grid;
    use crate::stats::derive_rng;

    #[test]
    fn constants_are_reproduced() {
        let g = r_grid(0.5, 64);
        let out = process_curve(&vec![1.0; 64], &g);
        assert!(out.iter().all(|v| (v - 1.0).abs() < 1e-9));
        let out = process_curve(&vec![4.0; 64], &g);
        assert!(out.iter().all(|v| (v - 2.0).abs() < 1e-9));
    }

    #[test]
    fn lines_are_in_the_null_space() {
        let b = SplineBasis::equispaced(40);
        let y: Vec<f64> = (0..40).map(|i| 0.3 + 0.05 * i as f64).collect();
        assert!(b.roughness(&y).abs() < 1e-9);
        let f = b.smooth_fixed(&y, 8.0);
        for (a, c) in f.iter().zip(&y) {
            assert!((a - c).abs() < 1e-8);
        }
    }

    #[test]
    fn roughness_matches_second_difference_for_parabola() {
        // for y = x², the natural spline's f'' is 2 except near the free ends,
        // so yᵀKy lies below ∫ 4 dx = 4(n-1)
        let n = 50;
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let rough = SplineBasis::new(&x).roughness(&y);
        assert!(rough > 0.0 && rough <= 4.0 * (n - 1) as f64 + 1e-6, "{rough}");
        assert!(rough > 0.8 * 4.0 * (n - 1) as f64);
    }

    #[test]
    fn smoothing_reduces_error_and_roughness() {
        let n = 128;
        let g = r_grid(0.5, n);
        let truth: Vec<f64> = g.iter().map(|r| 1.0 + 0.5 * (8.0 * r).sin()).collect();
        let mut rng = derive_rng(5, &[0]);
        let noisy: Vec<f64> = truth
            .iter()
            .map(|t| t + 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let b = SplineBasis::equispaced(n);
        let (fit, _) = b.smooth(&noisy);
        let err = |a: &[f64]| a.iter().zip(&truth).map(|(x, t)| (x - t).powi(2)).sum::<f64>();
        assert!(err(&fit) < err(&noisy));
        assert!(b.roughness(&fit) < b.roughness(&noisy));
    }

    #[test]
    fn nonuniform_knots_are_supported() {
        let x: Vec<f64> = (1..=30).map(|i| (i as f64).powf(1.3)).collect();
        let y = vec![2.0; 30];
        let raw: Vec<f64> = y.iter().map(|v| v * v).collect();
        let out = process_curve(&raw, &x);
        assert!(out.iter().all(|v| (v - 2.0).abs() < 1e-8));
    }

    #[test]
    fn negative_excursions_are_clamped() {
        let n = 32;
        let g = r_grid(1.0, n);
        let mut rng = derive_rng(9, &[0]);
        let raw: Vec<f64> = (0..n)
            .map(|i| if i < 4 { 0.0 } else { rng.random::<f64>() * 0.01 })
            .collect();
        assert!(process_curve(&raw, &g).iter().all(|v| *v >= 0.0));
    }
}
