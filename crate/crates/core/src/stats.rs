//! Small numeric helpers shared across modules.

use statrs::function::gamma::ln_gamma;

/// Poisson log-probability mass at k. The degenerate mean mu = 0 gets its
/// limit: certain zero, impossible anything else.
pub fn poisson_ln_pmf(k: u64, mu: f64) -> f64 {
    debug_assert!(mu >= 0.0);
    if mu == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * mu.ln() - mu - ln_gamma(k as f64 + 1.0)
}

/// log(sum(exp(x))) without overflow; -inf for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Empirical quantile with linear interpolation between order statistics
/// (the common `h = (n - 1) p` convention). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=1.0).contains(&p));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let w = h - lo as f64;
    sorted[lo] + w * (sorted[hi] - sorted[lo])
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two points.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

pub fn sd(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Gaussian kernel density estimate of `xs` evaluated on a regular grid of
/// `points` values spanning the data range padded by three bandwidths.
/// Bandwidth follows Silverman's rule of thumb, 0.9 min(sd, iqr/1.34) n^(-1/5).
/// Returns (grid, density). Degenerate samples (all values equal) get a
/// narrow fixed bandwidth so the result is still a proper density.
pub fn kde(xs: &[f64], points: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(!xs.is_empty() && points >= 2);
    let n = xs.len() as f64;
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = sd(xs).min(iqr / 1.34);
    let h = if spread > 0.0 {
        0.9 * spread * n.powf(-0.2)
    } else {
        1e-3 * (1.0 + xs[0].abs())
    };
    let lo = sorted[0] - 3.0 * h;
    let hi = sorted[sorted.len() - 1] + 3.0 * h;
    let step = (hi - lo) / (points - 1) as f64;
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    let mut grid = Vec::with_capacity(points);
    let mut dens = Vec::with_capacity(points);
    for i in 0..points {
        let x = lo + step * i as f64;
        let mut s = 0.0;
        for &v in xs {
            let z = (x - v) / h;
            s += (-0.5 * z * z).exp();
        }
        grid.push(x);
        dens.push(norm * s);
    }
    (grid, dens)
}
