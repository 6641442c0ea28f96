//! Monotone and cubic interpolation weights, isotonic regression, and
//! Simpson quadrature.

/// Pool-adjacent-violators fit of a nondecreasing sequence (equal weights).
pub fn isotonic_nondecreasing(y: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a <= b {
                break;
            }
            blocks.pop();
            let n = na + nb;
            *blocks.last_mut().unwrap() = ((a * na as f64 + b * nb as f64) / n as f64, n);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(v, n)| std::iter::repeat_n(v, n))
        .collect()
}

/// Fritsch–Carlson piecewise cubic Hermite interpolant; monotone data give a
/// monotone interpolant.
#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub fn new(x: &[f64], y: &[f64]) -> Pchip {
        let n = x.len();
        assert!(n >= 2 && y.len() == n);
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
        } else {
            for i in 1..n - 1 {
                if delta[i - 1] * delta[i] > 0.0 {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
                }
            }
            d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Pchip {
            x: x.to_vec(),
            y: y.to_vec(),
            d,
        }
    }

    /// Evaluates inside `[x_0, x_last]`; outside it the end value is held.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t <= self.x[0] {
            return self.y[0];
        }
        if t >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let i = self.x.partition_point(|&v| v <= t) - 1;
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }
}

fn end_slope(h0: f64, h1: f64, del0: f64, del1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if d.signum() != del0.signum() {
        0.0
    } else if del0.signum() != del1.signum() && d.abs() > 3.0 * del0.abs() {
        3.0 * del0
    } else {
        d
    }
}

/// Catmull–Rom weights for evaluating a function sampled at `n` equispaced
/// nodes `lo + i·h` at `x`, as `(node, weight)` pairs. Boundary intervals
/// use the ghost value `f_{-1} = 3f_0 - 3f_1 + f_2`, which keeps third-order
/// accuracy. `x` is clamped to the node range.
pub fn cubic_weights(n: usize, lo: f64, h: f64, x: f64) -> Vec<(usize, f64)> {
    assert!(n >= 3, "cubic interpolation needs at least three nodes");
    let u = ((x - lo) / h).clamp(0.0, (n - 1) as f64);
    let i = (u.floor() as usize).min(n - 2);
    let t = u - i as f64;
    let (t2, t3) = (t * t, t * t * t);
    let w = [
        (-t3 + 2.0 * t2 - t) / 2.0,
        (3.0 * t3 - 5.0 * t2 + 2.0) / 2.0,
        (-3.0 * t3 + 4.0 * t2 + t) / 2.0,
        (t3 - t2) / 2.0,
    ];
    let mut acc = vec![0.0; n];
    for (k, wk) in w.iter().enumerate() {
        let j = i as isize - 1 + k as isize;
        if j < 0 {
            acc[0] += 3.0 * wk;
            acc[1] -= 3.0 * wk;
            acc[2] += wk;
        } else if j as usize >= n {
            acc[n - 1] += 3.0 * wk;
            acc[n - 2] -= 3.0 * wk;
            acc[n - 3] += wk;
        } else {
            acc[j as usize] += wk;
        }
    }
    acc.into_iter()
        .enumerate()
        .filter(|(_, w)| *w != 0.0)
        .collect()
}

/// Tensor product of [`cubic_weights`] over the coordinates of `query`, for a
/// grid with `n` nodes per coordinate and the first coordinate varying
/// fastest in the flat index.
pub fn tensor_cubic_weights(n: usize, lo: f64, h: f64, query: &[f64]) -> Vec<(usize, f64)> {
    let mut out = vec![(0usize, 1.0f64)];
    let mut stride = 1;
    for &x in query {
        let axis = cubic_weights(n, lo, h, x);
        out = out
            .iter()
            .flat_map(|&(idx, w)| axis.iter().map(move |&(j, wj)| (idx + j * stride, w * wj)))
            .collect();
        stride *= n;
    }
    out
}

/// Composite Simpson rule with `intervals` (rounded up to even) subintervals.
pub fn simpson(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals.max(2).div_ceil(2) * 2;
    let h = (b - a) / n as f64;
    if h == 0.0 {
        return 0.0;
    }
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pava_pools_violators() {
        assert_eq!(isotonic_nondecreasing(&[1.0, 3.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(isotonic_nondecreasing(&[3.0, 2.0, 1.0]), vec![2.0; 3]);
    }

    #[test]
    fn pchip_reproduces_nodes_and_lines() {
        let x = [0.0, 0.5, 1.5, 2.0];
        let y = [1.0, 2.0, 4.0, 5.0];
        let p = Pchip::new(&x, &y);
        for (a, b) in x.iter().zip(&y) {
            assert!((p.eval(*a) - b).abs() < 1e-14);
        }
        assert!((p.eval(1.0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn cubic_weights_reproduce_quadratics_and_nodes() {
        let f = |x: f64| 0.5 - x + 0.3 * x * x;
        let (n, lo, h) = (7, -5.0, 5.0 / 3.0);
        let nodes: Vec<f64> = (0..n).map(|i| f(lo + i as f64 * h)).collect();
        for x in [-5.0, -4.2, -1.0, 0.0, 2.9, 4.6, 5.0] {
            let v: f64 = cubic_weights(n, lo, h, x).iter().map(|&(i, w)| w * nodes[i]).sum();
            assert!((v - f(x)).abs() < 1e-9, "{x}: {v} vs {}", f(x));
        }
        let w = cubic_weights(n, lo, h, lo + 2.0 * h);
        assert_eq!(w, vec![(2, 1.0)]);
    }

    #[test]
    fn tensor_weights_reproduce_quadratic_terms() {
        let (n, lo, h) = (5, 0.0, 1.0);
        let f = |a: f64, b: f64| 1.0 + a * b - 0.2 * b * b + a * a;
        let mut vals = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                vals[i + n * j] = f(i as f64, j as f64);
            }
        }
        let q = [1.3, 3.7];
        let v: f64 = tensor_cubic_weights(n, lo, h, &q).iter().map(|&(i, w)| w * vals[i]).sum();
        assert!((v - f(q[0], q[1])).abs() < 1e-9);
    }

    #[test]
    fn simpson_is_exact_for_cubics() {
        let v = simpson(|x| x * x * x - 2.0 * x + 1.0, 0.0, 2.0, 2);
        assert!((v - (4.0 - 4.0 + 2.0)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn pchip_preserves_monotonicity(steps in proptest::collection::vec(0.0f64..3.0, 3..12), t in 0.0f64..1.0) {
            let n = steps.len();
            let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let y: Vec<f64> = steps.iter().scan(0.0, |acc, s| { *acc += s; Some(*acc) }).collect();
            let p = Pchip::new(&x, &y);
            let span = (n - 1) as f64;
            let a = t * span;
            let b = (a + 0.01).min(span);
            prop_assert!(p.eval(b) >= p.eval(a) - 1e-12);
        }

        #[test]
        fn pava_output_is_sorted_and_mean_preserving(y in proptest::collection::vec(-5.0f64..5.0, 1..30)) {
            let f = isotonic_nondecreasing(&y);
            prop_assert!(f.windows(2).all(|w| w[0] <= w[1] + 1e-12));
            let s1: f64 = y.iter().sum();
            let s2: f64 = f.iter().sum();
            prop_assert!((s1 - s2).abs() < 1e-9);
        }
    }
}
