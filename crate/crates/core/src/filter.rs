//! Particle approximation of the randomized filter: the conditional law of
//! the state given the observation noise and the mark process.
//!
//! Default mode is conditional Monte Carlo: every particle advances with the
//! shared observed increment and its own unobserved increment, with uniform
//! weights. For specs carrying a likelihood coordinate (the
//! reference-probability builders) the weights are instead reset to the
//! normalized likelihood coordinate after every step, which makes the
//! weighted moments track the physical conditional law; optional resampling
//! controls the weight degeneracy. Resampling preserves the reference mass by
//! resetting the likelihood coordinate of the survivors to the pre-resample
//! mean, so equal-weight averages of likelihood-linear functionals stay
//! unbiased.

use crate::error::{Error, Result};
use crate::forward::EulerScratch;
use crate::model::ProblemSpec;
use crate::rng::CounterRng;
use crate::stats::weighted_moments;

/// Resampling strategy for the weighted mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resampling {
    Off,
    /// Multinomial draw when the effective sample size drops below M/2.
    Multinomial,
    /// Systematic (stratified) variant, same trigger.
    Systematic,
}

/// Particle representation of the filter at one knot.
#[derive(Debug, Clone)]
pub struct FilterCloud {
    /// `M x n` particle states, row-major.
    pub particles: Vec<f64>,
    /// Normalized weights, summing to one.
    pub weights: Vec<f64>,
    pub dim: usize,
    pub time_index: usize,
}

impl FilterCloud {
    /// Draw `m` particles from the initial law.
    pub fn init(spec: &ProblemSpec, m: usize, rng: &mut CounterRng) -> Result<Self> {
        if m == 0 {
            return Err(Error::Validation("particle count must be >= 1".into()));
        }
        let n = spec.dim_x;
        let mut particles = vec![0.0; m * n];
        for i in 0..m {
            (spec.init_sampler)(rng, &mut particles[i * n..(i + 1) * n]);
        }
        Ok(FilterCloud {
            particles,
            weights: vec![1.0 / m as f64; m],
            dim: n,
            time_index: 0,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn particle(&self, i: usize) -> &[f64] {
        &self.particles[i * self.dim..(i + 1) * self.dim]
    }

    /// Effective sample size `1 / sum w_i^2`.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn validate(&self) -> Result<()> {
        let s: f64 = self.weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::Numeric(format!("filter weights sum to {s}")));
        }
        if self.weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Numeric("negative filter weight".into()));
        }
        Ok(())
    }
}

/// Advance every particle by one Euler step with the shared observed
/// increment `shared_w` and independent unobserved draws, then apply the
/// weight update of the spec's filtering mode.
#[allow(clippy::too_many_arguments)]
pub fn propagate_filter(
    spec: &ProblemSpec,
    cloud: &mut FilterCloud,
    shared_w: &[f64],
    mark_value: &[f64],
    t: f64,
    dt: f64,
    rng: &mut CounterRng,
    resampling: Resampling,
) -> Result<()> {
    debug_assert_eq!(shared_w.len(), spec.dim_w);
    let m_dim = spec.dim_v;
    let sdt = dt.sqrt();
    let mut scratch = EulerScratch::new(spec);
    let mut dv = vec![0.0; m_dim];
    let n = cloud.dim;
    for i in 0..cloud.len() {
        for c in 0..m_dim {
            dv[c] = sdt * rng.normal();
        }
        let row = &mut cloud.particles[i * n..(i + 1) * n];
        scratch.step(spec, t, row, mark_value, dt, &dv, shared_w);
    }
    cloud.time_index += 1;

    if let Some(zc) = spec.likelihood_coord {
        reweight_by_likelihood(cloud, zc)?;
        let m = cloud.len() as f64;
        if resampling != Resampling::Off && cloud.effective_sample_size() < 0.5 * m {
            resample(cloud, zc, rng, resampling);
        }
    }
    Ok(())
}

fn reweight_by_likelihood(cloud: &mut FilterCloud, zc: usize) -> Result<()> {
    let n = cloud.dim;
    let mut total = 0.0;
    for i in 0..cloud.len() {
        let z = cloud.particles[i * n + zc].max(0.0);
        cloud.weights[i] = z;
        total += z;
    }
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::FilterCollapse {
            knot: cloud.time_index,
        });
    }
    for w in &mut cloud.weights {
        *w /= total;
    }
    Ok(())
}

fn resample(cloud: &mut FilterCloud, zc: usize, rng: &mut CounterRng, kind: Resampling) {
    let m = cloud.len();
    let n = cloud.dim;
    // pre-resample reference mass of the likelihood coordinate
    let zbar = (0..m).map(|i| cloud.particles[i * n + zc]).sum::<f64>() / m as f64;
    let mut cdf = vec![0.0; m];
    let mut acc = 0.0;
    for (i, w) in cloud.weights.iter().enumerate() {
        acc += w;
        cdf[i] = acc;
    }
    let mut picks = Vec::with_capacity(m);
    match kind {
        Resampling::Systematic => {
            let u0 = rng.uniform() / m as f64;
            for i in 0..m {
                let u = u0 + i as f64 / m as f64;
                picks.push(cdf.partition_point(|&c| c < u).min(m - 1));
            }
        }
        _ => {
            for _ in 0..m {
                let u = rng.uniform();
                picks.push(cdf.partition_point(|&c| c < u).min(m - 1));
            }
        }
    }
    let mut new_particles = vec![0.0; m * n];
    for (i, &p) in picks.iter().enumerate() {
        new_particles[i * n..(i + 1) * n].copy_from_slice(&cloud.particles[p * n..(p + 1) * n]);
        new_particles[i * n + zc] = zbar;
    }
    cloud.particles = new_particles;
    cloud.weights.fill(1.0 / m as f64);
}

/// Weighted expectation `sum_i w_i phi(x_i)` under the cloud.
pub fn filter_expectation(cloud: &FilterCloud, phi: impl Fn(&[f64]) -> f64) -> Result<f64> {
    let mut acc = 0.0;
    for i in 0..cloud.len() {
        let v = phi(cloud.particle(i));
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite test function value at particle {i}")));
        }
        acc += cloud.weights[i] * v;
    }
    Ok(acc)
}

/// Equal-weight average over particles: the conditional-Monte-Carlo estimate
/// of reference-measure functionals. For likelihood-linear functionals this
/// stays unbiased across mass-preserving resampling, and it is what the
/// separated gain and the backward schemes consume.
pub fn reference_expectation(cloud: &FilterCloud, phi: impl Fn(&[f64]) -> f64) -> f64 {
    let m = cloud.len() as f64;
    (0..cloud.len()).map(|i| phi(cloud.particle(i))).sum::<f64>() / m
}

/// Regression-state summary of a filter cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterFeatures {
    pub mean: Vec<f64>,
    /// Upper triangle of the weighted covariance, row-major packed.
    pub cov_upper: Vec<f64>,
    /// Extra moments; for likelihood-carrying specs the equal-weight mean of
    /// the likelihood coordinate (the reference mass).
    pub extra: Vec<f64>,
}

impl FilterFeatures {
    pub fn dim(&self) -> usize {
        self.mean.len() + self.cov_upper.len() + self.extra.len()
    }

    pub fn write_to(&self, out: &mut [f64]) {
        let n = self.mean.len();
        let c = self.cov_upper.len();
        out[..n].copy_from_slice(&self.mean);
        out[n..n + c].copy_from_slice(&self.cov_upper);
        out[n + c..n + c + self.extra.len()].copy_from_slice(&self.extra);
    }
}

/// Weighted mean and covariance of the cloud, plus the reference mass of the
/// likelihood coordinate when the spec carries one.
pub fn extract_features(cloud: &FilterCloud, spec: &ProblemSpec) -> FilterFeatures {
    let (mean, cov_upper) = weighted_moments(&cloud.particles, cloud.dim, &cloud.weights);
    let extra = match spec.likelihood_coord {
        Some(zc) => {
            let m = cloud.len() as f64;
            let zbar = (0..cloud.len()).map(|i| cloud.particle(i)[zc]).sum::<f64>() / m;
            vec![zbar]
        }
        None => Vec::new(),
    };
    FilterFeatures {
        mean,
        cov_upper,
        extra,
    }
}

/// Alternative feature map: quantize the cloud to `k` points by a fixed
/// number of Lloyd iterations (seeded), returning interleaved
/// `(centroid, mass)` rows sorted by the first coordinate.
pub fn extract_features_quantized(
    cloud: &FilterCloud,
    k: usize,
    lloyd_iters: usize,
    rng: &mut CounterRng,
) -> Vec<f64> {
    let n = cloud.dim;
    let m = cloud.len();
    let k = k.min(m).max(1);
    // seed centroids from distinct particles
    let mut centroids = vec![0.0; k * n];
    let stride = (m / k).max(1);
    for c in 0..k {
        let i = (c * stride + (rng.next_u64() as usize % stride)).min(m - 1);
        centroids[c * n..(c + 1) * n].copy_from_slice(cloud.particle(i));
    }
    let mut assign = vec![0usize; m];
    for _ in 0..lloyd_iters {
        for i in 0..m {
            let p = cloud.particle(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d: f64 = centroids[c * n..(c + 1) * n]
                    .iter()
                    .zip(p)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assign[i] = best;
        }
        let mut mass = vec![0.0; k];
        let mut acc = vec![0.0; k * n];
        for i in 0..m {
            let c = assign[i];
            mass[c] += cloud.weights[i];
            for r in 0..n {
                acc[c * n + r] += cloud.weights[i] * cloud.particle(i)[r];
            }
        }
        for c in 0..k {
            if mass[c] > 0.0 {
                for r in 0..n {
                    centroids[c * n + r] = acc[c * n + r] / mass[c];
                }
            }
        }
    }
    // final masses
    let mut mass = vec![0.0; k];
    for i in 0..m {
        mass[assign[i]] += cloud.weights[i];
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| centroids[a * n].partial_cmp(&centroids[b * n]).unwrap());
    let mut out = Vec::with_capacity(k * (n + 1));
    for &c in &order {
        out.extend_from_slice(&centroids[c * n..(c + 1) * n]);
        out.push(mass[c]);
    }
    out
}
