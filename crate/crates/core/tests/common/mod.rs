//! Independent reference implementations used only by tests.
#![allow(dead_code)]

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Neumaier-compensated sum.
pub fn compensated_sum(terms: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for x in terms {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

const SERIES_TERMS: usize = 1000;

/// `ψ(x) = −γ + Σ_{k≥0} (1/(k+1) − 1/(k+x))`, first `N` terms summed exactly and the
/// tail by Euler–Maclaurin through the third derivative.
pub fn digamma_series(x: f64) -> f64 {
    let n = SERIES_TERMS as f64;
    let head = compensated_sum((0..SERIES_TERMS).map(|k| {
        let k = k as f64;
        1.0 / (k + 1.0) - 1.0 / (k + x)
    }));
    let (a, b) = (n + 1.0, n + x);
    let integral = (b / a).ln();
    let f = 1.0 / a - 1.0 / b;
    let f1 = -1.0 / (a * a) + 1.0 / (b * b);
    let f3 = -6.0 / a.powi(4) + 6.0 / b.powi(4);
    let tail = integral + f / 2.0 - f1 / 12.0 + f3 / 720.0;
    compensated_sum([-EULER_GAMMA, head, tail])
}

/// `ψ'(x) = Σ_{k≥0} 1/(x+k)²` with an Euler–Maclaurin tail.
pub fn trigamma_series(x: f64) -> f64 {
    let head = compensated_sum((0..SERIES_TERMS).map(|k| 1.0 / (x + k as f64).powi(2)));
    let y = x + SERIES_TERMS as f64;
    let tail = 1.0 / y + 0.5 / (y * y) + 1.0 / (6.0 * y.powi(3)) - 1.0 / (30.0 * y.powi(5));
    head + tail
}

/// Closest point of an axis-aligned box among a uniform grid of `per_axis^m` points.
pub fn brute_force_box(lower: &[f64], upper: &[f64], z: &[f64], per_axis: usize) -> (Vec<f64>, f64) {
    let m = lower.len();
    let mut idx = vec![0usize; m];
    let mut best = (Vec::new(), f64::INFINITY);
    loop {
        let p: Vec<f64> = (0..m)
            .map(|i| lower[i] + (upper[i] - lower[i]) * idx[i] as f64 / (per_axis - 1) as f64)
            .collect();
        let d = p.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if d < best.1 {
            best = (p, d);
        }
        let mut k = 0;
        loop {
            if k == m {
                return best;
            }
            idx[k] += 1;
            if idx[k] < per_axis {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Least-squares AR(1) estimate with a prior pseudo-observation:
/// `(I₀θ₀ + Σ X_{s−1}X_s) / (I₀ + Σ X_{s−1}²)`.
pub fn ar1_least_squares(xs: &[f64], theta0: f64, info0: f64) -> f64 {
    let num = compensated_sum(xs.windows(2).map(|w| w[0] * w[1]));
    let den = compensated_sum(xs.windows(2).map(|w| w[0] * w[0]));
    (info0 * theta0 + num) / (info0 + den)
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

pub fn sample_median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
