//! Reference-probability reformulations of the two benchmark model classes
//! into the standard controlled form.
//!
//! Both builders return a [`ProblemSpec`] over an augmented state that carries
//! a likelihood coordinate `Z` with `Z_0 = 1`, so that under the reference law
//! the observation coordinates are driven by `W` alone and the original gain
//! becomes `E[∫ Z f dt + Z_T g]`.

use super::{ControlGrid, GainFn, GrowthBounds, InitFn, ProblemSpec, TerminalFn, VecFn};
use crate::error::{Error, Result};
use std::sync::Arc;

/// `(t, xbar, o, a, out)` coefficient of the classical model.
pub type ClassicalCoeff = Arc<dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `(t, xbar, o, a) -> f64` running gain of the classical model.
pub type ClassicalGain = Arc<dyn Fn(f64, &[f64], &[f64], &[f64]) -> f64 + Send + Sync>;
/// `(xbar, o) -> f64` terminal gain of the classical model.
pub type ClassicalTerminal = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
/// `(t, o, out)` observation diffusion matrix.
pub type ObsMatrix = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// `(t, xbar, mfac, o, a, out)` coefficient of the latent-factor model.
pub type LatentCoeff = Arc<dyn Fn(f64, &[f64], &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `(t, mfac, out)` latent-factor coefficient.
pub type FactorCoeff = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `(t, mfac, o, out)` observation drift of the latent-factor model.
pub type LatentObsDrift = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `(t, xbar, mfac, o, a) -> f64` running gain of the latent-factor model.
pub type LatentGain = Arc<dyn Fn(f64, &[f64], &[f64], &[f64], &[f64]) -> f64 + Send + Sync>;
/// `(xbar, mfac, o) -> f64` terminal gain of the latent-factor model.
pub type LatentTerminal = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync>;

const MAX_OBS: usize = 8;
const MAX_BLOCK: usize = 16;

/// Classical partially observed model: observation `dO = k(O) dW` under the
/// reference law, controlled state `Xbar` and a density coordinate `Z`.
pub struct RawClassicalSpec {
    pub dim_xbar: usize,
    pub dim_obs: usize,
    pub dim_v: usize,
    pub horizon: f64,
    pub bbar: ClassicalCoeff,
    /// Observation drift under the physical law; length `dim_obs`.
    pub h: ClassicalCoeff,
    pub sigma1: ClassicalCoeff,
    pub sigma2: ClassicalCoeff,
    pub kmat: ObsMatrix,
    pub fbar: ClassicalGain,
    pub gbar: ClassicalTerminal,
    pub init_xbar: InitFn,
    pub obs_init: Vec<f64>,
    /// Declared bound on `|k^{-1} h|`; must be positive and finite.
    pub kinv_h_bound: f64,
    pub growth: GrowthBounds,
}

/// Latent-factor model: unobserved factor `M`, uncontrolled observation.
pub struct RawLatentSpec {
    pub dim_xbar: usize,
    pub dim_factor: usize,
    pub dim_obs: usize,
    pub dim_v: usize,
    pub horizon: f64,
    pub bbar: LatentCoeff,
    pub sigma1: LatentCoeff,
    pub sigma2: LatentCoeff,
    pub beta: FactorCoeff,
    pub gamma1: FactorCoeff,
    pub gamma2: FactorCoeff,
    pub h: LatentObsDrift,
    pub kmat: ObsMatrix,
    pub fbar: LatentGain,
    pub gbar: LatentTerminal,
    pub init_xbar: InitFn,
    pub init_factor: InitFn,
    pub obs_init: Vec<f64>,
    pub kinv_h_bound: f64,
    pub growth: GrowthBounds,
}

/// Solve `A x = b` in place by Gaussian elimination with partial pivoting.
/// `a` is `d x d` row-major and destroyed; the solution overwrites `b`.
fn solve_inplace(a: &mut [f64], b: &mut [f64], d: usize) -> bool {
    for col in 0..d {
        let mut piv = col;
        let mut best = a[col * d + col].abs();
        for r in col + 1..d {
            let v = a[r * d + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best < 1e-300 {
            return false;
        }
        if piv != col {
            for c in 0..d {
                a.swap(col * d + c, piv * d + c);
            }
            b.swap(col, piv);
        }
        let inv = 1.0 / a[col * d + col];
        for r in col + 1..d {
            let factor = a[r * d + col] * inv;
            if factor == 0.0 {
                continue;
            }
            for c in col..d {
                a[r * d + c] -= factor * a[col * d + c];
            }
            b[r] -= factor * b[col];
        }
    }
    for col in (0..d).rev() {
        let mut acc = b[col];
        for c in col + 1..d {
            acc -= a[col * d + c] * b[c];
        }
        b[col] = acc / a[col * d + col];
    }
    true
}

fn check_common(dim_xbar: usize, dim_obs: usize, horizon: f64, kinv_h_bound: f64, obs_init: &[f64]) -> Result<()> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Validation("horizon must be positive".into()));
    }
    if !(kinv_h_bound > 0.0) || !kinv_h_bound.is_finite() {
        return Err(Error::Validation(format!(
            "declared bound on k^-1 h must be positive and finite, got {kinv_h_bound}"
        )));
    }
    if dim_obs == 0 || dim_obs > MAX_OBS {
        return Err(Error::Validation(format!("dim_obs must be in 1..={MAX_OBS}")));
    }
    if dim_xbar == 0 || dim_xbar > MAX_BLOCK {
        return Err(Error::Validation(format!("dim_xbar must be in 1..={MAX_BLOCK}")));
    }
    if obs_init.len() != dim_obs {
        return Err(Error::Validation("obs_init length must equal dim_obs".into()));
    }
    Ok(())
}

/// Reformulate a classical partially observed problem over the augmented
/// state `(Xbar, Z, O)` under the reference probability:
/// `dO = k dW`, `dZ = Z (k^{-1}h)' dW`,
/// `dXbar = [bbar - sigma2 k^{-1}h] dt + sigma1 dV + sigma2 dW`,
/// with gains `Z fbar` and `Z_T gbar` and `Z_0 = 1`.
pub fn build_classical_po_problem(raw: RawClassicalSpec) -> Result<ProblemSpec> {
    check_common(raw.dim_xbar, raw.dim_obs, raw.horizon, raw.kinv_h_bound, &raw.obs_init)?;
    let nb = raw.dim_xbar;
    let d = raw.dim_obs;
    let m = raw.dim_v;
    let n = nb + 1 + d;
    let z_at = nb;
    let o_at = nb + 1;

    // k^{-1} h at (t, xbar, o, a), written into `out[..d]`.
    let kinvh = {
        let h = raw.h.clone();
        let kmat = raw.kmat.clone();
        move |t: f64, xbar: &[f64], o: &[f64], a: &[f64], out: &mut [f64]| {
            if d == 1 {
                let mut kv = [0.0f64];
                kmat(t, o, &mut kv);
                h(t, xbar, o, a, &mut out[..1]);
                out[0] /= kv[0];
                return;
            }
            let mut kbuf = [0.0f64; MAX_OBS * MAX_OBS];
            kmat(t, o, &mut kbuf[..d * d]);
            h(t, xbar, o, a, &mut out[..d]);
            if !solve_inplace(&mut kbuf[..d * d], &mut out[..d], d) {
                for v in out[..d].iter_mut() {
                    *v = f64::NAN;
                }
            }
        }
    };

    let drift: VecFn = {
        let bbar = raw.bbar.clone();
        let sigma2 = raw.sigma2.clone();
        let kinvh = kinvh.clone();
        Arc::new(move |t, x, a, out| {
            let xbar = &x[..nb];
            let o = &x[o_at..o_at + d];
            bbar(t, xbar, o, a, &mut out[..nb]);
            let mut kin = [0.0f64; MAX_OBS];
            kinvh(t, xbar, o, a, &mut kin);
            let mut s2 = [0.0f64; MAX_BLOCK * MAX_OBS];
            sigma2(t, xbar, o, a, &mut s2[..nb * d]);
            for r in 0..nb {
                let mut acc = 0.0;
                for c in 0..d {
                    acc += s2[r * d + c] * kin[c];
                }
                out[r] -= acc;
            }
            for v in out[nb..n].iter_mut() {
                *v = 0.0;
            }
        })
    };

    let diff_v: VecFn = {
        let sigma1 = raw.sigma1.clone();
        Arc::new(move |t, x, a, out| {
            out.fill(0.0);
            if m == 0 {
                return;
            }
            let xbar = &x[..nb];
            let o = &x[o_at..o_at + d];
            let mut s1 = [0.0f64; MAX_BLOCK * MAX_OBS];
            sigma1(t, xbar, o, a, &mut s1[..nb * m]);
            out[..nb * m].copy_from_slice(&s1[..nb * m]);
        })
    };

    let diff_w: VecFn = {
        let sigma2 = raw.sigma2.clone();
        let kmat = raw.kmat.clone();
        let kinvh = kinvh.clone();
        Arc::new(move |t, x, a, out| {
            let xbar = &x[..nb];
            let z = x[z_at];
            let o = &x[o_at..o_at + d];
            sigma2(t, xbar, o, a, &mut out[..nb * d]);
            let mut kin = [0.0f64; MAX_OBS];
            kinvh(t, xbar, o, a, &mut kin);
            for c in 0..d {
                out[z_at * d + c] = z * kin[c];
            }
            kmat(t, o, &mut out[o_at * d..(o_at + d) * d]);
        })
    };

    let running_gain: GainFn = {
        let fbar = raw.fbar.clone();
        Arc::new(move |t, x, a| x[z_at] * fbar(t, &x[..nb], &x[o_at..o_at + d], a))
    };
    let terminal_gain: TerminalFn = {
        let gbar = raw.gbar.clone();
        Arc::new(move |x| x[z_at] * gbar(&x[..nb], &x[o_at..o_at + d]))
    };
    let init_sampler: InitFn = {
        let init_xbar = raw.init_xbar.clone();
        let obs_init = raw.obs_init.clone();
        Arc::new(move |rng, x| {
            init_xbar(rng, &mut x[..nb]);
            x[z_at] = 1.0;
            x[o_at..o_at + d].copy_from_slice(&obs_init);
        })
    };
    Ok(ProblemSpec {
        dim_x: n,
        dim_v: m,
        dim_w: d,
        horizon: raw.horizon,
        drift,
        diff_v,
        diff_w,
        running_gain,
        terminal_gain,
        init_sampler,
        growth_bounds: raw.growth,
        likelihood_coord: Some(z_at),
    })
}

/// Reformulate a latent-factor problem over `(Xbar, M, O, Z)` under the
/// reference probability, with gains weighted by the density coordinate.
pub fn build_latent_factor_problem(raw: RawLatentSpec) -> Result<ProblemSpec> {
    check_common(raw.dim_xbar, raw.dim_obs, raw.horizon, raw.kinv_h_bound, &raw.obs_init)?;
    if raw.dim_factor == 0 || raw.dim_factor > MAX_BLOCK {
        return Err(Error::Validation(format!("dim_factor must be in 1..={MAX_BLOCK}")));
    }
    let nb = raw.dim_xbar;
    let mf = raw.dim_factor;
    let d = raw.dim_obs;
    let m = raw.dim_v;
    let n = nb + mf + d + 1;
    let m_at = nb;
    let o_at = nb + mf;
    let z_at = nb + mf + d;

    let kinvh = {
        let h = raw.h.clone();
        let kmat = raw.kmat.clone();
        move |t: f64, mfac: &[f64], o: &[f64], out: &mut [f64]| {
            if d == 1 {
                let mut kv = [0.0f64];
                kmat(t, o, &mut kv);
                h(t, mfac, o, &mut out[..1]);
                out[0] /= kv[0];
                return;
            }
            let mut kbuf = [0.0f64; MAX_OBS * MAX_OBS];
            kmat(t, o, &mut kbuf[..d * d]);
            h(t, mfac, o, &mut out[..d]);
            if !solve_inplace(&mut kbuf[..d * d], &mut out[..d], d) {
                for v in out[..d].iter_mut() {
                    *v = f64::NAN;
                }
            }
        }
    };

    let drift: VecFn = {
        let bbar = raw.bbar.clone();
        let sigma2 = raw.sigma2.clone();
        let beta = raw.beta.clone();
        let gamma2 = raw.gamma2.clone();
        let kinvh = kinvh.clone();
        Arc::new(move |t, x, a, out| {
            let xbar = &x[..nb];
            let mfac = &x[m_at..m_at + mf];
            let o = &x[o_at..o_at + d];
            let mut kin = [0.0f64; MAX_OBS];
            kinvh(t, mfac, o, &mut kin);

            bbar(t, xbar, mfac, o, a, &mut out[..nb]);
            let mut buf = [0.0f64; MAX_BLOCK * MAX_OBS];
            sigma2(t, xbar, mfac, o, a, &mut buf[..nb * d]);
            for r in 0..nb {
                let mut acc = 0.0;
                for c in 0..d {
                    acc += buf[r * d + c] * kin[c];
                }
                out[r] -= acc;
            }

            beta(t, mfac, &mut out[m_at..m_at + mf]);
            gamma2(t, mfac, &mut buf[..mf * d]);
            for r in 0..mf {
                let mut acc = 0.0;
                for c in 0..d {
                    acc += buf[r * d + c] * kin[c];
                }
                out[m_at + r] -= acc;
            }

            for v in out[o_at..n].iter_mut() {
                *v = 0.0;
            }
        })
    };

    let diff_v: VecFn = {
        let sigma1 = raw.sigma1.clone();
        let gamma1 = raw.gamma1.clone();
        Arc::new(move |t, x, a, out| {
            out.fill(0.0);
            if m == 0 {
                return;
            }
            let xbar = &x[..nb];
            let mfac = &x[m_at..m_at + mf];
            let o = &x[o_at..o_at + d];
            let mut buf = [0.0f64; MAX_BLOCK * MAX_OBS];
            sigma1(t, xbar, mfac, o, a, &mut buf[..nb * m]);
            out[..nb * m].copy_from_slice(&buf[..nb * m]);
            gamma1(t, mfac, &mut buf[..mf * m]);
            out[m_at * m..(m_at + mf) * m].copy_from_slice(&buf[..mf * m]);
        })
    };

    let diff_w: VecFn = {
        let sigma2 = raw.sigma2.clone();
        let gamma2 = raw.gamma2.clone();
        let kmat = raw.kmat.clone();
        let kinvh = kinvh.clone();
        Arc::new(move |t, x, a, out| {
            let xbar = &x[..nb];
            let mfac = &x[m_at..m_at + mf];
            let o = &x[o_at..o_at + d];
            sigma2(t, xbar, mfac, o, a, &mut out[..nb * d]);
            gamma2(t, mfac, &mut out[m_at * d..(m_at + mf) * d]);
            kmat(t, o, &mut out[o_at * d..(o_at + d) * d]);
            let mut kin = [0.0f64; MAX_OBS];
            kinvh(t, mfac, o, &mut kin);
            let z = x[z_at];
            for c in 0..d {
                out[z_at * d + c] = z * kin[c];
            }
        })
    };

    let running_gain: GainFn = {
        let fbar = raw.fbar.clone();
        Arc::new(move |t, x, a| {
            x[z_at] * fbar(t, &x[..nb], &x[m_at..m_at + mf], &x[o_at..o_at + d], a)
        })
    };
    let terminal_gain: TerminalFn = {
        let gbar = raw.gbar.clone();
        Arc::new(move |x| x[z_at] * gbar(&x[..nb], &x[m_at..m_at + mf], &x[o_at..o_at + d]))
    };
    let init_sampler: InitFn = {
        let init_xbar = raw.init_xbar.clone();
        let init_factor = raw.init_factor.clone();
        let obs_init = raw.obs_init.clone();
        Arc::new(move |rng, x| {
            init_xbar(rng, &mut x[..nb]);
            init_factor(rng, &mut x[m_at..m_at + mf]);
            x[o_at..o_at + d].copy_from_slice(&obs_init);
            x[z_at] = 1.0;
        })
    };
    Ok(ProblemSpec {
        dim_x: n,
        dim_v: m,
        dim_w: d,
        horizon: raw.horizon,
        drift,
        diff_v,
        diff_w,
        running_gain,
        terminal_gain,
        init_sampler,
        growth_bounds: raw.growth,
        likelihood_coord: Some(z_at),
    })
}

/// Probe two specs for coefficient equality at `probes` random points.
pub fn specs_agree(a: &ProblemSpec, b: &ProblemSpec, grid: &ControlGrid, probes: usize, seed: u64) -> bool {
    if a.dim_x != b.dim_x || a.dim_v != b.dim_v || a.dim_w != b.dim_w {
        return false;
    }
    let n = a.dim_x;
    let mut rng = crate::rng::CounterRng::from_stream(seed, crate::rng::domains::INIT, 2);
    let mut u1 = vec![0.0; n];
    let mut u2 = vec![0.0; n];
    let mut v1 = vec![0.0; n * a.dim_v.max(1)];
    let mut v2 = vec![0.0; n * a.dim_v.max(1)];
    let mut w1 = vec![0.0; n * a.dim_w.max(1)];
    let mut w2 = vec![0.0; n * a.dim_w.max(1)];
    for _ in 0..probes {
        let t = rng.uniform() * a.horizon;
        let x: Vec<f64> = (0..n).map(|_| 2.0 * rng.uniform() - 1.0).collect();
        for j in 0..grid.len() {
            let ctrl = grid.point(j);
            (a.drift)(t, &x, ctrl, &mut u1);
            (b.drift)(t, &x, ctrl, &mut u2);
            (a.diff_v)(t, &x, ctrl, &mut v1[..n * a.dim_v]);
            (b.diff_v)(t, &x, ctrl, &mut v2[..n * a.dim_v]);
            (a.diff_w)(t, &x, ctrl, &mut w1[..n * a.dim_w]);
            (b.diff_w)(t, &x, ctrl, &mut w2[..n * a.dim_w]);
            let fa = (a.running_gain)(t, &x, ctrl);
            let fb = (b.running_gain)(t, &x, ctrl);
            let ga = (a.terminal_gain)(&x);
            let gb = (b.terminal_gain)(&x);
            let eq = u1 == u2
                && v1[..n * a.dim_v] == v2[..n * a.dim_v]
                && w1[..n * a.dim_w] == w2[..n * a.dim_w]
                && fa == fb
                && ga == gb;
            if !eq {
                return false;
            }
        }
    }
    true
}
