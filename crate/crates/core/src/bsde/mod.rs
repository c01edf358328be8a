//! Backward regression schemes on scenario batches.
//!
//! The constrained scheme alternates a continuation regression with a sup
//! step over per-control bucket surfaces; the penalized scheme replaces the
//! sup by an explicit penalty on the positive part of the jump integrand.
//! Both regress on polynomial bases of the filter features, with one
//! regression per control bucket so the conditional expectations given the
//! current mark are estimated on comparable surfaces.

pub mod basis;
pub mod scenario;

pub use basis::{BasisSpec, Standardizer};
pub use scenario::{generate_batch, BatchConfig, ScenarioBatch};

use crate::error::{CoverageReport, Error, Result};
use crate::filter::{FilterFeatures, Resampling};
use crate::forward::{simulate_primal_path, Policy, PrimalConfig};
use crate::model::{ControlGrid, ProblemSpec, TimeGrid};
use crate::stats::{mean_stderr, par_map_indexed};
use basis::{dot, fnv64, GramAccumulator};

/// Which backward scheme produced a solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum SolveMode {
    Constrained,
    /// Penalization level `n`.
    Penalized(u32),
}

/// Regression configuration of the backward pass.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Polynomial degree of the feature basis (1..=3).
    pub degree: u32,
    /// Scale regressions by the reference-mass feature when the spec carries
    /// a likelihood coordinate: targets are divided by the mass and
    /// predictions multiplied back, the exact factorization of a value
    /// positively homogeneous in the unnormalized-filter mass.
    pub mass_scaled: bool,
    /// Regress on a subset of the feature vector (indices into the batch
    /// features). Fewer basis functions per bucket mean less fit noise for
    /// the sup step to rectify. `None` keeps every feature.
    pub feature_subset: Option<Vec<usize>>,
    /// Override of the per-bucket coverage requirement
    /// `max(50, 5 * basis_dim)`.
    pub min_bucket: Option<usize>,
    /// Retain the per-scenario value samples at every knot (diagnostics).
    pub keep_value_knots: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            degree: 2,
            mass_scaled: true,
            feature_subset: None,
            min_bucket: None,
            keep_value_knots: false,
        }
    }
}

/// Per-knot regression data: one coefficient vector per grid control.
#[derive(Debug, Clone)]
pub struct RegressionModel {
    pub knot: usize,
    pub standardizer: Standardizer,
    /// Continuation surfaces `E[Y_{k+1} | features, I = a_j]`.
    pub cont_coeffs: Vec<Vec<f64>>,
    /// Sup-step surfaces (constrained mode only).
    pub value_coeffs: Vec<Vec<f64>>,
    pub bucket_sizes: Vec<usize>,
    /// RMS residuals of the two regression passes.
    pub resid_cont: f64,
    pub resid_value: f64,
    /// Whether the pseudo-inverse truncated any direction at this knot.
    pub truncated: bool,
}

/// Output of a backward solve.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub y0: f64,
    pub y0_stderr: f64,
    pub mode: SolveMode,
    pub basis: BasisSpec,
    /// Indices of the batch features the regressions ran on.
    pub feature_subset: Vec<usize>,
    pub per_step_models: Vec<RegressionModel>,
    pub min_bucket: usize,
    pub config_hash: String,
    /// `P x (N+1)` value samples when requested.
    pub value_knots: Option<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl BsdeSolution {
    /// JSON summary: value, scheme, knots, bucket coverage and residuals.
    pub fn summary_json(&self) -> serde_json::Value {
        let (mode, n) = match self.mode {
            SolveMode::Constrained => ("constrained", None),
            SolveMode::Penalized(n) => ("penalized", Some(n)),
        };
        serde_json::json!({
            "y0": self.y0,
            "y0_stderr": self.y0_stderr,
            "mode": mode,
            "n": n,
            "knots": self.per_step_models.len() + 1,
            "min_bucket_required": self.min_bucket,
            "bucket_coverage": self.per_step_models.iter().map(|m| {
                serde_json::json!({
                    "knot": m.knot,
                    "min": m.bucket_sizes.iter().min().copied().unwrap_or(0),
                    "sizes": m.bucket_sizes,
                })
            }).collect::<Vec<_>>(),
            "residuals": self.per_step_models.iter().map(|m| {
                serde_json::json!({
                    "knot": m.knot,
                    "continuation": m.resid_cont,
                    "value": m.resid_value,
                })
            }).collect::<Vec<_>>(),
            "warnings": self.warnings,
            "config_hash": self.config_hash,
        })
    }
}

struct BackwardCtx<'a> {
    batch: &'a ScenarioBatch,
    basis: BasisSpec,
    /// Regressor indices into the batch features.
    subset: Vec<usize>,
    /// Feature index of the reference mass when ratio scaling is active:
    /// regressions run on `target / mass` and predictions are scaled back,
    /// the exact factorization of a value positively homogeneous in the
    /// unnormalized-filter mass.
    mass_feature: Option<usize>,
    min_bucket: usize,
    buckets: Vec<Vec<Vec<u32>>>,
    config_hash: String,
}

impl BackwardCtx<'_> {
    #[inline]
    fn mass(&self, p: usize, k: usize) -> f64 {
        match self.mass_feature {
            Some(i) => self.batch.feature_row(p, k)[i].max(1e-12),
            None => 1.0,
        }
    }
}

fn build_ctx<'a>(
    batch: &'a ScenarioBatch,
    spec: &ProblemSpec,
    cfg: &SolverConfig,
    mode_tag: &str,
) -> Result<BackwardCtx<'a>> {
    let q = batch.feat_dim;
    let mass_index = if cfg.mass_scaled && spec.likelihood_coord.is_some() {
        Some(q - 1)
    } else {
        None
    };
    let subset: Vec<usize> = match &cfg.feature_subset {
        Some(s) => {
            if s.is_empty() || s.iter().any(|&i| i >= q) {
                return Err(Error::Validation(format!(
                    "feature subset must be non-empty with indices below {q}"
                )));
            }
            let mut sorted = s.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != s.len() {
                return Err(Error::Validation("feature subset must not repeat indices".into()));
            }
            s.clone()
        }
        None => (0..q).collect(),
    };
    let basis = BasisSpec::new(subset.len(), cfg.degree, None);
    let min_bucket = cfg.min_bucket.unwrap_or_else(|| 50.max(5 * basis.dim()));
    let n_steps = batch.tgrid.steps();
    let n_ctrl = batch.grid.len();

    // bucket membership and coverage check at the regression knots
    let mut buckets: Vec<Vec<Vec<u32>>> = Vec::with_capacity(n_steps);
    for k in 0..n_steps {
        let mut at_knot: Vec<Vec<u32>> = vec![Vec::new(); n_ctrl];
        for p in 0..batch.scenarios {
            at_knot[batch.mark(p, k)].push(p as u32);
        }
        let sizes: Vec<usize> = at_knot.iter().map(Vec::len).collect();
        if sizes.iter().any(|&s| s < min_bucket) {
            return Err(Error::Coverage(CoverageReport {
                knot: k,
                required: min_bucket,
                bucket_sizes: sizes,
                scenarios: batch.scenarios,
            }));
        }
        buckets.push(at_knot);
    }
    let config_hash = format!(
        "{:016x}",
        fnv64(
            format!(
                "batch={:016x};mode={mode_tag};degree={};mass={:?};subset={subset:?};min_bucket={min_bucket}",
                batch.config_digest, cfg.degree, mass_index
            )
            .as_bytes()
        )
    );
    Ok(BackwardCtx {
        batch,
        basis,
        subset,
        mass_feature: mass_index,
        min_bucket,
        buckets,
        config_hash,
    })
}

/// Evaluate standardized basis rows for one knot into `bx` (`P x bdim`).
fn basis_rows(ctx: &BackwardCtx<'_>, k: usize, bx: &mut [f64]) -> Standardizer {
    let batch = ctx.batch;
    let q = ctx.subset.len();
    let bdim = ctx.basis.dim();
    let mut rows = vec![0.0; batch.scenarios * q];
    for p in 0..batch.scenarios {
        let full = batch.feature_row(p, k);
        for (c, &i) in ctx.subset.iter().enumerate() {
            rows[p * q + c] = full[i];
        }
    }
    let std = Standardizer::fit(&rows, q);
    let mut sf = vec![0.0; q];
    for p in 0..batch.scenarios {
        let raw = &rows[p * q..(p + 1) * q];
        std.apply(raw, &mut sf);
        ctx.basis.eval(&sf, raw, &mut bx[p * bdim..(p + 1) * bdim]);
    }
    std
}

/// Fit per-bucket regressions of `targets` on the basis rows; returns the
/// coefficient vectors, the overall RMS residual, the per-bucket standard
/// error of a fitted mean (`rms_j / sqrt(size_j)`), and the truncation flag.
fn fit_buckets(
    ctx: &BackwardCtx<'_>,
    k: usize,
    bx: &[f64],
    targets: &[f64],
) -> (Vec<Vec<f64>>, f64, Vec<f64>, bool) {
    let bdim = ctx.basis.dim();
    let mut coeffs = Vec::with_capacity(ctx.buckets[k].len());
    let mut truncated = false;
    for members in &ctx.buckets[k] {
        let mut acc = GramAccumulator::new(bdim);
        for &p in members {
            let p = p as usize;
            acc.add(&bx[p * bdim..(p + 1) * bdim], targets[p]);
        }
        let fit = acc.solve();
        truncated |= fit.truncated;
        coeffs.push(fit.coeffs);
    }
    // residuals per bucket against the own-bucket surface
    let mut ss_total = 0.0;
    let mut bucket_se = Vec::with_capacity(ctx.buckets[k].len());
    for (j, members) in ctx.buckets[k].iter().enumerate() {
        let mut ss = 0.0;
        for &p in members {
            let p = p as usize;
            let e = targets[p] - dot(&coeffs[j], &bx[p * bdim..(p + 1) * bdim]);
            ss += e * e;
        }
        ss_total += ss;
        let m = members.len().max(1) as f64;
        bucket_se.push((ss / m).sqrt() / m.sqrt());
    }
    let rms = (ss_total / ctx.batch.scenarios as f64).sqrt();
    (coeffs, rms, bucket_se, truncated)
}

/// Standard error of the reported value: the sample spread of the knot-0
/// value samples combined with the regression-mean uncertainty of the final
/// pass (which is what remains when the knot-0 features are degenerate).
fn value_stderr(y: &[f64], knot0_bucket_se: &[f64]) -> f64 {
    let (_, sample_se) = mean_stderr(y);
    let fit_se = knot0_bucket_se.iter().cloned().fold(0.0f64, f64::max);
    (sample_se * sample_se + fit_se * fit_se).sqrt()
}

/// Range of the regression targets. Fitted values are clamped into it: a
/// conditional expectation of the targets cannot leave their sample range,
/// while an unclamped polynomial can overshoot at leverage points and feed
/// back through the backward recursion.
fn target_range(targets: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &t in targets {
        lo = lo.min(t);
        hi = hi.max(t);
    }
    (lo, hi)
}

/// Constrained backward scheme: terminal value `rho_N(g)`; at each knot the
/// continuation regression `E[Y_{k+1} | features, I = a_j]` plus the running
/// filter functional gives the unconstrained value, and the sup step takes
/// the pointwise maximum of the per-control bucket surfaces (ties to the
/// lowest index). The reported value is the sample mean of the knot-0 values.
pub fn solve_constrained(
    batch: &ScenarioBatch,
    spec: &ProblemSpec,
    cfg: &SolverConfig,
) -> Result<BsdeSolution> {
    let ctx = build_ctx(batch, spec, cfg, "constrained")?;
    let n_steps = batch.tgrid.steps();
    let bdim = ctx.basis.dim();
    let p_total = batch.scenarios;

    let mut y = batch.rho_g.clone();
    let mut value_knots = cfg.keep_value_knots.then(|| {
        let mut v = vec![0.0; p_total * (n_steps + 1)];
        for p in 0..p_total {
            v[p * (n_steps + 1) + n_steps] = y[p];
        }
        v
    });
    let mut models: Vec<RegressionModel> = Vec::with_capacity(n_steps);
    let mut warnings = Vec::new();
    let mut bx = vec![0.0; p_total * bdim];
    let mut ycal = vec![0.0; p_total];
    let mut ratio = vec![0.0; p_total];
    let mut knot0_se: Vec<f64> = Vec::new();

    for k in (0..n_steps).rev() {
        let standardizer = basis_rows(&ctx, k, &mut bx);
        let dt = batch.tgrid.delta(k);

        for (p, r) in ratio.iter_mut().enumerate() {
            *r = y[p] / ctx.mass(p, k);
        }
        log::debug!(
            "knot {k}: max|y| {:.3e}, max|ratio| {:.3e}",
            y.iter().fold(0.0f64, |a, v| a.max(v.abs())),
            ratio.iter().fold(0.0f64, |a, v| a.max(v.abs()))
        );
        let (rlo, rhi) = target_range(&ratio);
        let (cont_coeffs, resid_cont, _, trunc1) = fit_buckets(&ctx, k, &bx, &ratio);
        if cont_coeffs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite continuation fit at knot {k}")));
        }
        for (p, yc) in ycal.iter_mut().enumerate() {
            let j = batch.mark(p, k);
            let fit = dot(&cont_coeffs[j], &bx[p * bdim..(p + 1) * bdim]).clamp(rlo, rhi);
            *yc = ctx.mass(p, k) * fit + dt * batch.rho_f_mark[p * n_steps + k];
        }

        for (p, r) in ratio.iter_mut().enumerate() {
            *r = ycal[p] / ctx.mass(p, k);
        }
        let (vlo, vhi) = target_range(&ratio);
        let (value_coeffs, resid_value, bucket_se, trunc2) = fit_buckets(&ctx, k, &bx, &ratio);
        if k == 0 {
            knot0_se = bucket_se;
        }
        for (p, yp) in y.iter_mut().enumerate() {
            let row = &bx[p * bdim..(p + 1) * bdim];
            let mut best = dot(&value_coeffs[0], row);
            for vc in value_coeffs.iter().skip(1) {
                let v = dot(vc, row);
                if v > best {
                    best = v;
                }
            }
            *yp = ctx.mass(p, k) * best.clamp(vlo, vhi);
        }
        if let Some(v) = value_knots.as_mut() {
            for p in 0..p_total {
                v[p * (n_steps + 1) + k] = y[p];
            }
        }
        let truncated = trunc1 || trunc2;
        if truncated {
            warnings.push(format!(
                "knot {k}: rank-deficient normal equations, pseudo-inverse truncated"
            ));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value samples after the knot-{k} sup step")));
        }
        models.push(RegressionModel {
            knot: k,
            standardizer,
            cont_coeffs,
            value_coeffs,
            bucket_sizes: ctx.buckets[k].iter().map(Vec::len).collect(),
            resid_cont,
            resid_value,
            truncated,
        });
    }
    models.reverse();
    let (y0, _) = mean_stderr(&y);
    let y0_stderr = value_stderr(&y, &knot0_se);
    if !y0.is_finite() {
        return Err(Error::Numeric("non-finite value estimate".into()));
    }
    Ok(BsdeSolution {
        y0,
        y0_stderr,
        mode: SolveMode::Constrained,
        basis: ctx.basis,
        feature_subset: ctx.subset,
        per_step_models: models,
        min_bucket: ctx.min_bucket,
        config_hash: ctx.config_hash,
        value_knots,
        warnings,
    })
}

/// Penalized backward scheme with level `n`: the jump integrand at control
/// `a_j` is estimated as the difference of the bucket continuation surfaces
/// against the scenario's own mark, and its positive part enters through
/// `n * dt * sum_j (U_j)^+ lambda_j`. Level 0 is the unconstrained scheme.
pub fn solve_penalized(
    batch: &ScenarioBatch,
    spec: &ProblemSpec,
    cfg: &SolverConfig,
    n_penalty: u32,
) -> Result<BsdeSolution> {
    let ctx = build_ctx(batch, spec, cfg, &format!("penalized{n_penalty}"))?;
    let n_steps = batch.tgrid.steps();
    let bdim = ctx.basis.dim();
    let p_total = batch.scenarios;
    let lambda: Vec<f64> = batch.grid.weights().to_vec();
    let npen = n_penalty as f64;

    let mut y = batch.rho_g.clone();
    let mut value_knots = cfg.keep_value_knots.then(|| {
        let mut v = vec![0.0; p_total * (n_steps + 1)];
        for p in 0..p_total {
            v[p * (n_steps + 1) + n_steps] = y[p];
        }
        v
    });
    let mut models: Vec<RegressionModel> = Vec::with_capacity(n_steps);
    let mut warnings = Vec::new();
    let mut bx = vec![0.0; p_total * bdim];
    let mut ratio = vec![0.0; p_total];
    let mut knot0_se: Vec<f64> = Vec::new();

    for k in (0..n_steps).rev() {
        let standardizer = basis_rows(&ctx, k, &mut bx);
        let dt = batch.tgrid.delta(k);
        for (p, r) in ratio.iter_mut().enumerate() {
            *r = y[p] / ctx.mass(p, k);
        }
        let (rlo, rhi) = target_range(&ratio);
        let (cont_coeffs, resid_cont, bucket_se, truncated) = fit_buckets(&ctx, k, &bx, &ratio);
        if k == 0 {
            knot0_se = bucket_se;
        }

        for (p, yp) in y.iter_mut().enumerate() {
            let row = &bx[p * bdim..(p + 1) * bdim];
            let mass = ctx.mass(p, k);
            let own_j = batch.mark(p, k);
            let own = mass * dot(&cont_coeffs[own_j], row).clamp(rlo, rhi);
            let mut penalty = 0.0;
            for (j, cc) in cont_coeffs.iter().enumerate() {
                if j == own_j {
                    continue;
                }
                let u = mass * dot(cc, row).clamp(rlo, rhi) - own;
                if u > 0.0 {
                    penalty += u * lambda[j];
                }
            }
            *yp = own + dt * batch.rho_f_mark[p * n_steps + k] + npen * dt * penalty;
        }
        if let Some(v) = value_knots.as_mut() {
            for p in 0..p_total {
                v[p * (n_steps + 1) + k] = y[p];
            }
        }
        if truncated {
            warnings.push(format!(
                "knot {k}: rank-deficient normal equations, pseudo-inverse truncated"
            ));
        }
        models.push(RegressionModel {
            knot: k,
            standardizer,
            cont_coeffs,
            value_coeffs: Vec::new(),
            bucket_sizes: ctx.buckets[k].iter().map(Vec::len).collect(),
            resid_cont,
            resid_value: 0.0,
            truncated,
        });
    }
    models.reverse();
    let (y0, _) = mean_stderr(&y);
    let y0_stderr = value_stderr(&y, &knot0_se);
    if !y0.is_finite() {
        return Err(Error::Numeric("non-finite value estimate".into()));
    }
    Ok(BsdeSolution {
        y0,
        y0_stderr,
        mode: SolveMode::Penalized(n_penalty),
        basis: ctx.basis,
        feature_subset: ctx.subset,
        per_step_models: models,
        min_bucket: ctx.min_bucket,
        config_hash: ctx.config_hash,
        value_knots,
        warnings,
    })
}

/// Greedy feedback policy induced by the sup-step surfaces of a constrained
/// solution.
pub struct GreedyPolicy<'a> {
    pub solution: &'a BsdeSolution,
}

impl Policy for GreedyPolicy<'_> {
    fn control_index(&self, k: usize, _t: f64, feats: &FilterFeatures) -> usize {
        let model = &self.solution.per_step_models[k.min(self.solution.per_step_models.len() - 1)];
        let mut full = vec![0.0; feats.dim()];
        feats.write_to(&mut full);
        let q = self.solution.feature_subset.len();
        let mut raw = vec![0.0; q];
        for (c, &i) in self.solution.feature_subset.iter().enumerate() {
            raw[c] = full[i];
        }
        let mut std = vec![0.0; q];
        model.standardizer.apply(&raw, &mut std);
        let mut row = vec![0.0; self.solution.basis.dim()];
        self.solution.basis.eval(&std, &raw, &mut row);
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (j, vc) in model.value_coeffs.iter().enumerate() {
            let v = dot(vc, &row);
            if v > best_v {
                best_v = v;
                best = j;
            }
        }
        best
    }
}

/// Evaluate the greedy policy of a constrained solution on fresh primal
/// paths; the Monte Carlo gain is a lower-bound certificate for the value.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy_from_solution(
    solution: &BsdeSolution,
    spec: &ProblemSpec,
    grid: &ControlGrid,
    tgrid: &TimeGrid,
    paths: usize,
    particles: usize,
    resampling: Resampling,
    seed: u64,
) -> Result<(f64, f64)> {
    if solution.mode != SolveMode::Constrained {
        return Err(Error::Validation(
            "policy extraction requires a constrained-scheme solution".into(),
        ));
    }
    if paths < 2 {
        return Err(Error::Validation("need at least two evaluation paths".into()));
    }
    let policy = GreedyPolicy { solution };
    let cfg = PrimalConfig {
        particles,
        resampling,
    };
    let results: Vec<Result<(f64, bool)>> = par_map_indexed(paths, 64, |i| {
        simulate_primal_path(spec, grid, &policy, tgrid, cfg, seed, i as u64).map(|p| (p.gain, p.invalid))
    });
    let mut gains = Vec::with_capacity(paths);
    let mut invalid = 0usize;
    for r in results {
        let (g, bad) = r?;
        gains.push(g);
        if bad {
            invalid += 1;
        }
    }
    if invalid as f64 > 1e-3 * paths as f64 {
        return Err(Error::Numeric(format!("{invalid} of {paths} policy paths blew up")));
    }
    Ok(mean_stderr(&gains))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_uniform_grid, GrowthBounds};
    use crate::stats::combined_stderr;
    use std::sync::Arc;

    fn uncontrolled_spec() -> ProblemSpec {
        ProblemSpec {
            dim_x: 1,
            dim_v: 1,
            dim_w: 1,
            horizon: 1.0,
            drift: Arc::new(|_, x, _, out| out[0] = -0.3 * x[0]),
            diff_v: Arc::new(|_, _, _, out| out[0] = 0.5),
            diff_w: Arc::new(|_, _, _, out| out[0] = 0.4),
            running_gain: Arc::new(|_, x, _| 0.5 * x[0]),
            terminal_gain: Arc::new(|x| x[0] * x[0]),
            init_sampler: Arc::new(|rng, out| out[0] = 0.4 + 0.2 * rng.normal()),
            growth_bounds: GrowthBounds::default(),
            likelihood_coord: None,
        }
    }

    fn grid3() -> ControlGrid {
        ControlGrid::scalar_uniform(&[-1.0, 0.0, 1.0], 1, 2.0).unwrap()
    }

    #[test]
    fn constant_terminal_value_is_exact() {
        let mut spec = uncontrolled_spec();
        spec.running_gain = Arc::new(|_, _, _| 0.0);
        spec.terminal_gain = Arc::new(|_| 1.0);
        let grid = grid3();
        let tgrid = make_uniform_grid(1.0, 6).unwrap();
        let batch = generate_batch(&spec, &grid, &tgrid, &BatchConfig::new(2000, 8, 5)).unwrap();
        let cfg = SolverConfig {
            min_bucket: Some(30),
            ..SolverConfig::default()
        };
        let sol = solve_constrained(&batch, &spec, &cfg).unwrap();
        assert!((sol.y0 - 1.0).abs() < 1e-6, "y0 = {}", sol.y0);
        let pen = solve_penalized(&batch, &spec, &cfg, 16).unwrap();
        assert!((pen.y0 - 1.0).abs() < 1e-6, "penalized y0 = {}", pen.y0);
    }

    #[test]
    fn uncontrolled_matches_plain_mc() {
        let spec = uncontrolled_spec();
        let grid = grid3();
        let tgrid = make_uniform_grid(1.0, 8).unwrap();
        let batch = generate_batch(&spec, &grid, &tgrid, &BatchConfig::new(8000, 32, 9)).unwrap();
        let cfg = SolverConfig::default();
        let sol = solve_constrained(&batch, &spec, &cfg).unwrap();
        // plain MC over an independent batch's pathwise gains
        let batch2 = generate_batch(&spec, &grid, &tgrid, &BatchConfig::new(8000, 2, 1009)).unwrap();
        let (mc, mc_se) = mean_stderr(&batch2.pathwise_gain);
        let tol = 4.0 * combined_stderr(sol.y0_stderr, mc_se) + 0.02;
        assert!((sol.y0 - mc).abs() < tol, "y0 {} vs mc {mc} (tol {tol})", sol.y0);

        // penalized behaves the same when nothing depends on marks; the
        // rectified fit-noise bias grows with n, so allow it in the tolerance
        let pen = solve_penalized(&batch, &spec, &cfg, 4).unwrap();
        let noise_bias = 4.0 * 8.0 * 0.125 * grid.total_mass() * sol.per_step_models[4].resid_cont
            / (batch.scenarios as f64 / 3.0).sqrt();
        assert!(
            (pen.y0 - mc).abs() < tol + noise_bias,
            "pen {} vs mc {mc} (tol {})",
            pen.y0,
            tol + noise_bias
        );
        // n = 0 is the unconstrained scheme: reference-measure gain
        let pen0 = solve_penalized(&batch, &spec, &cfg, 0).unwrap();
        assert!((pen0.y0 - mc).abs() < tol, "pen0 {} vs mc {mc}", pen0.y0);
    }

    #[test]
    fn coverage_failure_reports_buckets() {
        let spec = uncontrolled_spec();
        // minuscule intensity: later knots rarely see non-anchor marks
        let grid = ControlGrid::scalar_uniform(&[-1.0, 0.0, 1.0], 1, 0.05).unwrap();
        let tgrid = make_uniform_grid(1.0, 4).unwrap();
        let mut bcfg = BatchConfig::new(300, 4, 2);
        bcfg.randomize_initial_mark = false;
        let batch = generate_batch(&spec, &grid, &tgrid, &bcfg).unwrap();
        match solve_constrained(&batch, &spec, &SolverConfig::default()) {
            Err(Error::Coverage(rep)) => {
                assert_eq!(rep.scenarios, 300);
                assert!(rep.bucket_sizes.iter().any(|&s| s < rep.required));
            }
            other => panic!("expected coverage error, got {other:?}"),
        }
    }

    #[test]
    fn policy_evaluation_on_uncontrolled_matches_value() {
        let spec = uncontrolled_spec();
        let grid = grid3();
        let tgrid = make_uniform_grid(1.0, 8).unwrap();
        let batch = generate_batch(&spec, &grid, &tgrid, &BatchConfig::new(6000, 16, 21)).unwrap();
        let sol = solve_constrained(&batch, &spec, &SolverConfig::default()).unwrap();
        let (gain, se) =
            evaluate_policy_from_solution(&sol, &spec, &grid, &tgrid, 4000, 16, Resampling::Off, 77)
                .unwrap();
        let tol = 4.0 * combined_stderr(se, sol.y0_stderr) + 0.02;
        assert!((gain - sol.y0).abs() < tol, "policy {gain} vs y0 {} (tol {tol})", sol.y0);
        // penalized solutions do not expose a policy
        let pen = solve_penalized(&batch, &spec, &SolverConfig::default(), 4).unwrap();
        assert!(
            evaluate_policy_from_solution(&pen, &spec, &grid, &tgrid, 100, 4, Resampling::Off, 1).is_err()
        );
    }

    #[test]
    fn summary_json_shape() {
        let spec = uncontrolled_spec();
        let grid = grid3();
        let tgrid = make_uniform_grid(1.0, 4).unwrap();
        let batch = generate_batch(&spec, &grid, &tgrid, &BatchConfig::new(1500, 8, 3)).unwrap();
        let cfg = SolverConfig {
            min_bucket: Some(40),
            ..SolverConfig::default()
        };
        let sol = solve_constrained(&batch, &spec, &cfg).unwrap();
        let js = sol.summary_json();
        assert_eq!(js["mode"], "constrained");
        assert!(js["y0"].is_f64());
        assert_eq!(js["bucket_coverage"].as_array().unwrap().len(), 4);
        assert_eq!(js["config_hash"].as_str().unwrap().len(), 16);
    }
}
