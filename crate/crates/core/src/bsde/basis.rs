//! Polynomial regression bases over filter features and the least-squares
//! solver behind the backward schemes.

use nalgebra::{DMatrix, DVector};

/// Relative eigenvalue threshold of the truncated pseudo-inverse applied to
/// rank-deficient normal equations.
pub const PINV_RTOL: f64 = 1e-10;

/// Clamp applied to standardized features: regression surfaces freeze beyond
/// this many standard deviations, which keeps heavy-tailed mass coordinates
/// from blowing up polynomial extrapolation in the backward recursion.
pub const FEATURE_CLIP: f64 = 8.0;

/// Affine per-feature standardization fitted on a batch followed by a
/// winsorizing clamp; degenerate features keep unit scale.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Fit on `rows` (`count x q`, row-major).
    pub fn fit(rows: &[f64], q: usize) -> Self {
        let count = rows.len() / q.max(1);
        let mut mean = vec![0.0; q];
        for r in 0..count {
            for c in 0..q {
                mean[c] += rows[r * q + c];
            }
        }
        for m in &mut mean {
            *m /= count.max(1) as f64;
        }
        let mut var = vec![0.0; q];
        for r in 0..count {
            for c in 0..q {
                let d = rows[r * q + c] - mean[c];
                var[c] += d * d;
            }
        }
        let scale = var
            .iter()
            .map(|v| {
                let sd = (v / count.max(1) as f64).sqrt();
                if sd > 1e-12 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    #[inline]
    pub fn apply(&self, raw: &[f64], out: &mut [f64]) {
        for c in 0..raw.len() {
            out[c] = ((raw[c] - self.mean[c]) * self.scale[c]).clamp(-FEATURE_CLIP, FEATURE_CLIP);
        }
    }
}

/// Polynomial basis of total degree `degree` (1..=3) with intercept.
///
/// With `mass_index` set, the feature at that index multiplies every monomial
/// of the remaining features instead of entering them: the span is then
/// `{1} ∪ {mass * p(shape)}`, the natural class for value functions that are
/// positively homogeneous in an unnormalized-measure mass coordinate.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BasisSpec {
    pub feat_dim: usize,
    pub degree: u32,
    pub mass_index: Option<usize>,
    /// Monomials as index multisets over the shape features.
    monomials: Vec<Vec<usize>>,
}

impl BasisSpec {
    pub fn new(feat_dim: usize, degree: u32, mass_index: Option<usize>) -> Self {
        assert!((1..=3).contains(&degree), "supported degrees are 1..=3");
        let shape: Vec<usize> = (0..feat_dim).filter(|i| Some(*i) != mass_index).collect();
        // the empty monomial is the bare mass feature; without mass scaling
        // it would duplicate the intercept
        let mut monomials: Vec<Vec<usize>> = if mass_index.is_some() {
            vec![vec![]]
        } else {
            Vec::new()
        };
        for &i in &shape {
            monomials.push(vec![i]);
        }
        if degree >= 2 {
            for (ai, &i) in shape.iter().enumerate() {
                for &j in &shape[ai..] {
                    monomials.push(vec![i, j]);
                }
            }
        }
        if degree >= 3 {
            for (ai, &i) in shape.iter().enumerate() {
                for (bj, &j) in shape[ai..].iter().enumerate() {
                    for &k in &shape[ai + bj..] {
                        monomials.push(vec![i, j, k]);
                    }
                }
            }
        }
        BasisSpec {
            feat_dim,
            degree,
            mass_index,
            monomials,
        }
    }

    /// Number of basis functions including the intercept.
    pub fn dim(&self) -> usize {
        1 + self.monomials.len()
    }

    /// Evaluate into `out`: intercept first, then the monomials (scaled by
    /// the raw mass feature when configured). `std_feats` are standardized
    /// features, `raw_feats` the unstandardized ones (for the mass).
    pub fn eval(&self, std_feats: &[f64], raw_feats: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        let mass = self.mass_index.map(|i| raw_feats[i]).unwrap_or(1.0);
        for (k, mono) in self.monomials.iter().enumerate() {
            let mut v = mass;
            for &i in mono {
                v *= std_feats[i];
            }
            out[k + 1] = v;
        }
    }
}

/// Least-squares fit through the normal equations with a truncated
/// eigendecomposition: eigenvalues below `PINV_RTOL * max` are dropped.
/// Returns the coefficients and whether truncation occurred.
pub struct LsqFit {
    pub coeffs: Vec<f64>,
    pub truncated: bool,
}

/// Accumulator for one regression: `G += x x'`, `b += y x`.
pub struct GramAccumulator {
    dim: usize,
    gram: Vec<f64>,
    rhs: Vec<f64>,
    count: usize,
}

impl GramAccumulator {
    pub fn new(dim: usize) -> Self {
        GramAccumulator {
            dim,
            gram: vec![0.0; dim * dim],
            rhs: vec![0.0; dim],
            count: 0,
        }
    }

    #[inline]
    pub fn add(&mut self, x: &[f64], y: f64) {
        let d = self.dim;
        for r in 0..d {
            let xr = x[r];
            if xr == 0.0 {
                continue;
            }
            for c in r..d {
                self.gram[r * d + c] += xr * x[c];
            }
            self.rhs[r] += xr * y;
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn solve(&self) -> LsqFit {
        let d = self.dim;
        // prune basis functions that vanish identically on the batch: their
        // Gram row is exactly zero, which some eigensolvers mishandle
        let active: Vec<usize> = (0..d).filter(|&r| self.gram[r * d + r] > 0.0).collect();
        let ad = active.len();
        let mut truncated = ad < d;
        let mut coeffs = vec![0.0; d];
        if ad == 0 {
            return LsqFit { coeffs, truncated: true };
        }
        let mut g = DMatrix::<f64>::zeros(ad, ad);
        for (ri, &r) in active.iter().enumerate() {
            for (ci, &c) in active.iter().enumerate() {
                let v = if r <= c {
                    self.gram[r * d + c]
                } else {
                    self.gram[c * d + r]
                };
                g[(ri, ci)] = v;
            }
        }
        let b = DVector::<f64>::from_iterator(ad, active.iter().map(|&r| self.rhs[r]));
        // a relative ridge keeps the eigensolver away from exactly repeated
        // zero modes; it sits far below the truncation threshold
        let gmax = g.iter().cloned().fold(0.0f64, |a, v| a.max(v.abs()));
        for i in 0..ad {
            g[(i, i)] += 1e-14 * gmax;
        }
        let eig = g.clone().symmetric_eigen();
        let finite = eig.eigenvalues.iter().all(|v| v.is_finite())
            && eig.eigenvectors.iter().all(|v| v.is_finite());
        let (evals, evecs) = if finite {
            (eig.eigenvalues, eig.eigenvectors)
        } else {
            // fallback: singular value decomposition of the symmetrized Gram
            let svd = g.svd(true, false);
            let u = svd.u.expect("requested");
            (svd.singular_values, u)
        };
        let max_ev = evals.iter().cloned().fold(0.0f64, f64::max);
        let cut = PINV_RTOL * max_ev.max(1e-300);
        let vtb = evecs.transpose() * &b;
        let mut scaled = vtb;
        for (i, ev) in evals.iter().enumerate() {
            if *ev > cut {
                scaled[i] /= *ev;
            } else {
                scaled[i] = 0.0;
                truncated = true;
            }
        }
        let sol = evecs * scaled;
        for (ri, &r) in active.iter().enumerate() {
            coeffs[r] = sol[ri];
        }
        LsqFit { coeffs, truncated }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// FNV-1a 64-bit hash, used for configuration digests in reports.
pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_dims() {
        let b = BasisSpec::new(3, 2, None);
        assert_eq!(b.dim(), 1 + 3 + 6);
        let b = BasisSpec::new(3, 2, Some(2));
        // intercept + mass * (deg<=2 monomials in 2 shape vars incl. empty)
        assert_eq!(b.dim(), 1 + (1 + 2 + 3));
        let b = BasisSpec::new(2, 3, None);
        assert_eq!(b.dim(), 1 + 2 + 3 + 4);
    }

    #[test]
    fn mass_scaling_multiplies_monomials() {
        let b = BasisSpec::new(2, 2, Some(1));
        let std = [2.0, 99.0]; // mass coordinate standardized value unused
        let raw = [7.0, 3.0];
        let mut out = vec![0.0; b.dim()];
        b.eval(&std, &raw, &mut out);
        // intercept, mass, mass*z, mass*z^2
        assert_eq!(out, vec![1.0, 3.0, 3.0 * 2.0, 3.0 * 4.0]);
    }

    #[test]
    fn exact_quadratic_recovery() {
        // y = 2 - x + 3 x^2 recovered exactly
        let basis = BasisSpec::new(1, 2, None);
        let std = Standardizer {
            mean: vec![0.0],
            scale: vec![1.0],
        };
        let mut acc = GramAccumulator::new(basis.dim());
        let mut bx = vec![0.0; basis.dim()];
        for i in 0..50 {
            let x = -1.0 + i as f64 / 25.0;
            let mut s = [0.0];
            std.apply(&[x], &mut s);
            basis.eval(&s, &[x], &mut bx);
            acc.add(&bx, 2.0 - x + 3.0 * x * x);
        }
        let fit = acc.solve();
        assert!(!fit.truncated);
        for (got, want) in fit.coeffs.iter().zip(&[2.0, -1.0, 3.0]) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn rank_deficient_truncates_and_fits_mean() {
        // constant feature: design collinear with intercept
        let basis = BasisSpec::new(1, 2, None);
        let mut acc = GramAccumulator::new(basis.dim());
        let mut bx = vec![0.0; basis.dim()];
        for _ in 0..20 {
            basis.eval(&[0.0], &[5.0], &mut bx);
            acc.add(&bx, 4.0);
        }
        let fit = acc.solve();
        assert!(fit.truncated);
        // fitted value at the feature point equals the target mean
        basis.eval(&[0.0], &[5.0], &mut bx);
        let v = dot(&fit.coeffs, &bx);
        assert!((v - 4.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn standardizer_guards_zero_variance() {
        let s = Standardizer::fit(&[3.0, 3.0, 3.0, 3.0], 1);
        assert_eq!(s.scale, vec![1.0]);
        let mut out = [0.0];
        s.apply(&[3.0], &mut out);
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv64(b""), 0xcbf2_9ce4_8422_2325);
        assert_ne!(fnv64(b"a"), fnv64(b"b"));
    }
}
