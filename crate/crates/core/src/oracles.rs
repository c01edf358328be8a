//! Independent ground-truth solvers used by the acceptance tests: plain
//! Monte Carlo for control-independent specs, an explicit
//! dynamic-programming lattice for 1-D fully observed problems, and a
//! Kalman/Riccati evaluator for partially observed linear-quadratic
//! benchmarks.
//!
//! These are deliberately separate code paths: they probe `ProblemSpec`
//! coefficients (or take raw parameters) and run their own time stepping, so
//! a bug in the main pipeline cannot cancel against the reference.

use crate::error::{Error, Result};
use crate::model::{ControlGrid, ProblemSpec, TimeGrid};
use crate::rng::{domains, CounterRng};
use crate::stats::{mean_stderr, par_map_indexed};

/// Probe whether every coefficient ignores the control argument: exact
/// equality across all grid controls at 100 random states and times.
pub fn is_control_independent(spec: &ProblemSpec, grid: &ControlGrid, seed: u64) -> bool {
    let n = spec.dim_x;
    let mut rng = CounterRng::from_stream(seed, domains::ORACLE, 0);
    let mut b0 = vec![0.0; n];
    let mut b1 = vec![0.0; n];
    let mut v0 = vec![0.0; n * spec.dim_v];
    let mut v1 = vec![0.0; n * spec.dim_v];
    let mut w0 = vec![0.0; n * spec.dim_w];
    let mut w1 = vec![0.0; n * spec.dim_w];
    let a0 = grid.point(grid.anchor_index());
    for _ in 0..100 {
        let t = rng.uniform() * spec.horizon;
        let x: Vec<f64> = (0..n).map(|_| 3.0 * (2.0 * rng.uniform() - 1.0)).collect();
        (spec.drift)(t, &x, a0, &mut b0);
        (spec.diff_v)(t, &x, a0, &mut v0);
        (spec.diff_w)(t, &x, a0, &mut w0);
        let f0 = (spec.running_gain)(t, &x, a0);
        for j in 0..grid.len() {
            let a = grid.point(j);
            (spec.drift)(t, &x, a, &mut b1);
            (spec.diff_v)(t, &x, a, &mut v1);
            (spec.diff_w)(t, &x, a, &mut w1);
            let f1 = (spec.running_gain)(t, &x, a);
            if b0 != b1 || v0 != v1 || w0 != w1 || f0 != f1 {
                return false;
            }
        }
    }
    true
}

/// Plain Monte Carlo value of a control-independent spec: the Euler gain
/// under the anchor control, with no mark process at all.
pub fn plain_mc_value(
    spec: &ProblemSpec,
    grid: &ControlGrid,
    tgrid: &TimeGrid,
    paths: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if !is_control_independent(spec, grid, seed ^ 0x0bad) {
        return Err(Error::NotApplicable(
            "coefficients depend on the control; the plain MC oracle does not apply".into(),
        ));
    }
    if paths < 2 {
        return Err(Error::Validation("need at least two paths".into()));
    }
    let n = spec.dim_x;
    let (m, d) = (spec.dim_v, spec.dim_w);
    let a0: Vec<f64> = grid.point(grid.anchor_index()).to_vec();
    let n_steps = tgrid.steps();
    let gains: Vec<f64> = par_map_indexed(paths, 256, |i| {
        let mut rng = CounterRng::from_stream(seed, domains::ORACLE, i as u64 + 1);
        let mut x = vec![0.0; n];
        (spec.init_sampler)(&mut rng, &mut x);
        let mut drift = vec![0.0; n];
        let mut sv = vec![0.0; n * m];
        let mut sw = vec![0.0; n * d];
        let mut gain = 0.0;
        for k in 0..n_steps {
            let t = tgrid.knot(k);
            let dt = tgrid.delta(k);
            let sdt = dt.sqrt();
            gain += (spec.running_gain)(t, &x, &a0) * dt;
            (spec.drift)(t, &x, &a0, &mut drift);
            (spec.diff_v)(t, &x, &a0, &mut sv);
            (spec.diff_w)(t, &x, &a0, &mut sw);
            let dv: Vec<f64> = (0..m).map(|_| sdt * rng.normal()).collect();
            let dw: Vec<f64> = (0..d).map(|_| sdt * rng.normal()).collect();
            for r in 0..n {
                let mut dx = drift[r] * dt;
                for c in 0..m {
                    dx += sv[r * m + c] * dv[c];
                }
                for c in 0..d {
                    dx += sw[r * d + c] * dw[c];
                }
                x[r] += dx;
            }
        }
        gain + (spec.terminal_gain)(&x)
    });
    Ok(mean_stderr(&gains))
}

/// Lattice configuration for the 1-D dynamic-programming oracle.
#[derive(Debug, Clone, Copy)]
pub struct LatticeConfig {
    pub x_max: f64,
    pub nodes: usize,
    /// Hard cap on CFL sub-steps per knot interval.
    pub max_substeps: usize,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        LatticeConfig {
            x_max: 6.0,
            nodes: 481,
            max_substeps: 40_000,
        }
    }
}

/// Explicit finite-difference dynamic-programming value of a 1-D fully
/// observed spec (no unobserved diffusion) at the deterministic start point:
/// backward induction with upwind drift, centered diffusion, and a max over
/// the grid controls; the time step is CFL-limited by internal sub-stepping.
pub fn hjb_lattice_value(
    spec: &ProblemSpec,
    grid: &ControlGrid,
    tgrid: &TimeGrid,
    cfg: LatticeConfig,
) -> Result<f64> {
    if spec.dim_x != 1 {
        return Err(Error::NotApplicable("lattice oracle requires a scalar state".into()));
    }
    // fully observed: no unobserved diffusion anywhere on the lattice
    {
        let mut sv = vec![0.0; spec.dim_v];
        for i in 0..cfg.nodes {
            let x = [-cfg.x_max + 2.0 * cfg.x_max * i as f64 / (cfg.nodes - 1) as f64];
            for j in 0..grid.len() {
                (spec.diff_v)(0.0, &x, grid.point(j), &mut sv);
                if sv.iter().any(|v| *v != 0.0) {
                    return Err(Error::NotApplicable(
                        "lattice oracle requires a vanishing unobserved diffusion".into(),
                    ));
                }
            }
        }
    }
    // deterministic start
    let mut x0a = [0.0];
    let mut x0b = [0.0];
    (spec.init_sampler)(&mut CounterRng::from_stream(1, domains::ORACLE, 11), &mut x0a);
    (spec.init_sampler)(&mut CounterRng::from_stream(2, domains::ORACLE, 12), &mut x0b);
    if (x0a[0] - x0b[0]).abs() > 1e-12 {
        return Err(Error::NotApplicable("lattice oracle requires a deterministic start".into()));
    }
    let x0 = x0a[0];
    if x0.abs() >= cfg.x_max {
        return Err(Error::Validation("start point outside the lattice".into()));
    }

    let h = cfg.nodes;
    let dx = 2.0 * cfg.x_max / (h - 1) as f64;
    let xs: Vec<f64> = (0..h).map(|i| -cfg.x_max + dx * i as f64).collect();
    let mut v: Vec<f64> = xs.iter().map(|&x| (spec.terminal_gain)(&[x])).collect();
    let mut vn = v.clone();
    let d = spec.dim_w;
    let mut sw = vec![0.0; d];
    let mut drift = [0.0];

    for k in (0..tgrid.steps()).rev() {
        let t0 = tgrid.knot(k);
        let dt_knot = tgrid.delta(k);
        // CFL bound from a scan of the coefficients at this knot
        let mut rate: f64 = 1e-12;
        for &x in &xs {
            for j in 0..grid.len() {
                let a = grid.point(j);
                (spec.drift)(t0, &[x], a, &mut drift);
                (spec.diff_w)(t0, &[x], a, &mut sw);
                let s2: f64 = sw.iter().map(|s| s * s).sum();
                rate = rate.max(s2 / (dx * dx) + drift[0].abs() / dx);
            }
        }
        let n_sub = ((dt_knot * rate / 0.9).ceil() as usize).max(1);
        if n_sub > cfg.max_substeps {
            return Err(Error::Validation(format!(
                "CFL sub-stepping needs {n_sub} steps per knot, above the cap {}; \
                 coarsen the lattice or shorten the knots",
                cfg.max_substeps
            )));
        }
        let dt = dt_knot / n_sub as f64;
        for s in 0..n_sub {
            let t = t0 + dt_knot - (s + 1) as f64 * dt;
            for i in 1..h - 1 {
                let x = xs[i];
                let mut best = f64::NEG_INFINITY;
                for j in 0..grid.len() {
                    let a = grid.point(j);
                    (spec.drift)(t, &[x], a, &mut drift);
                    (spec.diff_w)(t, &[x], a, &mut sw);
                    let s2: f64 = sw.iter().map(|s| s * s).sum();
                    let b = drift[0];
                    let adv = if b >= 0.0 {
                        b * (v[i + 1] - v[i]) / dx
                    } else {
                        b * (v[i] - v[i - 1]) / dx
                    };
                    let diffu = 0.5 * s2 * (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (dx * dx);
                    let f = (spec.running_gain)(t, &[x], a);
                    let cand = v[i] + dt * (adv + diffu + f);
                    if cand > best {
                        best = cand;
                    }
                }
                vn[i] = best;
            }
            vn[0] = v[0];
            vn[h - 1] = v[h - 1];
            std::mem::swap(&mut v, &mut vn);
        }
    }
    // linear interpolation at the start point
    let pos = (x0 + cfg.x_max) / dx;
    let i = (pos.floor() as usize).min(h - 2);
    let w = pos - i as f64;
    Ok((1.0 - w) * v[i] + w * v[i + 1])
}

/// Lattice value with a grid-doubling consistency check: the refined value is
/// returned only if doubling the space and time resolution moves it by less
/// than `rel_tol`.
pub fn hjb_lattice_value_validated(
    spec: &ProblemSpec,
    grid: &ControlGrid,
    tgrid: &TimeGrid,
    cfg: LatticeConfig,
    rel_tol: f64,
) -> Result<(f64, f64)> {
    let coarse = hjb_lattice_value(spec, grid, tgrid, cfg)?;
    let mut knots = Vec::with_capacity(2 * tgrid.steps() + 1);
    for k in 0..tgrid.steps() {
        knots.push(tgrid.knot(k));
        knots.push(0.5 * (tgrid.knot(k) + tgrid.knot(k + 1)));
    }
    knots.push(tgrid.horizon());
    let fine_grid = TimeGrid::new(knots)?;
    let fine_cfg = LatticeConfig {
        nodes: 2 * cfg.nodes - 1,
        ..cfg
    };
    let fine = hjb_lattice_value(spec, grid, &fine_grid, fine_cfg)?;
    let delta = (fine - coarse).abs();
    if delta > rel_tol * fine.abs().max(1e-8) {
        return Err(Error::Numeric(format!(
            "lattice not converged: coarse {coarse} vs refined {fine}"
        )));
    }
    Ok((fine, delta))
}

/// Scalar linear-quadratic partially observed benchmark parameters:
/// state `dX = (a X + b u) dt + sigma_v dV`, observation
/// `dO = h X dt + k dW` under the physical law, cost
/// `E[int (q X^2 + r u^2) dt + q_t X_T^2]` (reported as a gain, negated).
#[derive(Debug, Clone, Copy)]
pub struct LqgParams {
    pub a: f64,
    pub b: f64,
    pub sigma_v: f64,
    pub h: f64,
    pub k: f64,
    pub q: f64,
    pub r: f64,
    pub q_t: f64,
    pub horizon: f64,
    pub x0_mean: f64,
    pub x0_var: f64,
}

/// Riccati/Kalman oracle output.
#[derive(Debug, Clone)]
pub struct LqgValue {
    /// Value of the continuous-control problem (upper end of the bracket).
    pub continuous: f64,
    /// Monte Carlo value of the grid-projected certainty-equivalent feedback
    /// (lower end), with its standard error.
    pub grid_projected: f64,
    pub grid_projected_stderr: f64,
    /// Control Riccati solution at time 0.
    pub p0: f64,
    /// Filter variance at the horizon.
    pub sigma_t: f64,
    pub warnings: Vec<String>,
}

/// Adaptive RK4 with step doubling to local tolerance.
fn rk4_adaptive(f: impl Fn(f64, f64) -> f64, t0: f64, t1: f64, y0: f64, tol: f64) -> Vec<(f64, f64)> {
    let step = |t: f64, y: f64, h: f64| -> f64 {
        let k1 = f(t, y);
        let k2 = f(t + 0.5 * h, y + 0.5 * h * k1);
        let k3 = f(t + 0.5 * h, y + 0.5 * h * k2);
        let k4 = f(t + h, y + h * k3);
        y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    };
    let mut out = vec![(t0, y0)];
    let mut t = t0;
    let mut y = y0;
    let mut h = (t1 - t0) / 256.0;
    while t < t1 {
        h = h.min(t1 - t);
        let full = step(t, y, h);
        let half = step(t + 0.5 * h, step(t, y, 0.5 * h), 0.5 * h);
        let err = (full - half).abs();
        let scale = tol * half.abs().max(1.0);
        if err < scale || h < 1e-12 * (t1 - t0) {
            t += h;
            y = half;
            out.push((t, y));
            if err < 0.01 * scale {
                h *= 2.0;
            }
        } else {
            h *= 0.5;
        }
    }
    out
}

fn interp(table: &[(f64, f64)], t: f64) -> f64 {
    let i = table.partition_point(|&(s, _)| s <= t);
    if i == 0 {
        return table[0].1;
    }
    if i >= table.len() {
        return table[table.len() - 1].1;
    }
    let (t0, y0) = table[i - 1];
    let (t1, y1) = table[i];
    y0 + (y1 - y0) * (t - t0) / (t1 - t0)
}

/// Value bracket of the scalar partially observed LQG problem: the control
/// Riccati equation and the filter variance equation are integrated by
/// adaptive RK4, giving the continuous value; the certainty-equivalent
/// feedback projected onto the control grid is then evaluated by Monte Carlo
/// on the physical system with an exact Kalman filter.
pub fn lqg_kalman_value(
    params: LqgParams,
    grid: &ControlGrid,
    steps: usize,
    paths: usize,
    seed: u64,
) -> Result<LqgValue> {
    let LqgParams {
        a,
        b,
        sigma_v,
        h,
        k,
        q,
        r,
        q_t,
        horizon,
        x0_mean,
        x0_var,
    } = params;
    if !(r > 0.0) || !(horizon > 0.0) || k == 0.0 {
        return Err(Error::Validation("need r > 0, horizon > 0, k != 0".into()));
    }
    let mut warnings = Vec::new();

    // control Riccati in reversed time: dP/dtau = 2aP - b^2 P^2 / r + q
    let p_rev = rk4_adaptive(
        |_, p| 2.0 * a * p - b * b * p * p / r + q,
        0.0,
        horizon,
        q_t,
        1e-10,
    );
    let p_at = |t: f64| interp(&p_rev, horizon - t);
    let p0 = p_at(0.0);
    if !p0.is_finite() {
        warnings.push("Riccati integration did not stay finite".into());
    }
    // filter variance: dS/dt = 2aS + sigma_v^2 - S^2 h^2 / k^2
    let s_tab = rk4_adaptive(
        |_, s| 2.0 * a * s + sigma_v * sigma_v - s * s * h * h / (k * k),
        0.0,
        horizon,
        x0_var,
        1e-10,
    );
    let s_at = |t: f64| interp(&s_tab, t);
    let sigma_t = s_at(horizon);

    // continuous cost: m0^2 P(0) + int P (S h / k)^2 + q S dt + q_T S(T)
    let quad_steps = 4000;
    let mut integral = 0.0;
    for i in 0..quad_steps {
        let t0 = horizon * i as f64 / quad_steps as f64;
        let t1 = horizon * (i + 1) as f64 / quad_steps as f64;
        let f = |t: f64| {
            let s = s_at(t);
            p_at(t) * (s * h / k) * (s * h / k) + q * s
        };
        integral += 0.5 * (f(t0) + f(t1)) * (t1 - t0);
    }
    let continuous = -(x0_mean * x0_mean * p0 + integral + q_t * sigma_t);

    // Monte Carlo value of the grid-projected certainty-equivalent feedback
    let dt = horizon / steps as f64;
    let gains: Vec<f64> = par_map_indexed(paths, 256, |i| {
        let mut rng = CounterRng::from_stream(seed, domains::ORACLE, i as u64 + 101);
        let mut x = x0_mean + x0_var.sqrt() * rng.normal();
        let mut mhat = x0_mean;
        let mut cost = 0.0;
        for step in 0..steps {
            let t = step as f64 * dt;
            let target = -(b / r) * p_at(t) * mhat;
            let j = grid.project(&[target]);
            let u = grid.point(j)[0];
            cost += (q * x * x + r * u * u) * dt;
            let sdt = dt.sqrt();
            let dv = sdt * rng.normal();
            let dwbar = sdt * rng.normal();
            let d_obs = h * x * dt + k * dwbar;
            let s = s_at(t);
            mhat += (a * mhat + b * u) * dt + (s * h / (k * k)) * (d_obs - h * mhat * dt);
            x += (a * x + b * u) * dt + sigma_v * dv;
        }
        -(cost + q_t * x * x)
    });
    let (grid_projected, grid_projected_stderr) = mean_stderr(&gains);

    Ok(LqgValue {
        continuous,
        grid_projected,
        grid_projected_stderr,
        p0,
        sigma_t,
        warnings,
    })
}
