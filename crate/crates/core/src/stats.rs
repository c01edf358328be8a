//! Small statistical helpers shared by the estimators and the test suites.

use rayon::prelude::*;

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    assert!(n > 1, "need at least two samples");
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Standard error of a difference of independent estimates.
pub fn combined_stderr(se_a: f64, se_b: f64) -> f64 {
    (se_a * se_a + se_b * se_b).sqrt()
}

/// Kolmogorov-Smirnov distance between the sample and an analytic CDF.
pub fn ks_distance_to(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - f).abs());
    }
    d
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_distance_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let (xa, xb) = (a[i], b[j]);
        if xa <= xb {
            i += 1;
        }
        if xb <= xa {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Two-sample KS threshold at significance `alpha` (asymptotic).
pub fn ks_two_sample_threshold(na: usize, nb: usize, alpha: f64) -> f64 {
    let c = (-0.5 * (alpha / 2.0).ln()).sqrt();
    c * ((na + nb) as f64 / (na as f64 * nb as f64)).sqrt()
}

/// Parallel map with results in index order. The chunking is fixed so the
/// output (and any later sequential reduction over it) does not depend on the
/// number of worker threads.
pub fn par_map_indexed<T: Send, F>(n: usize, chunk: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T + Sync,
{
    let chunk = chunk.max(1);
    let mut out: Vec<T> = Vec::with_capacity(n);
    let chunks: Vec<Vec<T>> = (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let lo = c * chunk;
            let hi = ((c + 1) * chunk).min(n);
            (lo..hi).map(&f).collect()
        })
        .collect();
    for mut c in chunks {
        out.append(&mut c);
    }
    out
}

/// Weighted mean and upper-triangular covariance (row-major packed) of rows.
pub fn weighted_moments(rows: &[f64], dim: usize, weights: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = weights.len();
    assert_eq!(rows.len(), n * dim);
    let mut mean = vec![0.0; dim];
    for (i, w) in weights.iter().enumerate() {
        for k in 0..dim {
            mean[k] += w * rows[i * dim + k];
        }
    }
    let mut cov = vec![0.0; dim * (dim + 1) / 2];
    for (i, w) in weights.iter().enumerate() {
        let mut idx = 0;
        for r in 0..dim {
            let dr = rows[i * dim + r] - mean[r];
            for c in r..dim {
                cov[idx] += w * dr * (rows[i * dim + c] - mean[c]);
                idx += 1;
            }
        }
    }
    (mean, cov)
}
