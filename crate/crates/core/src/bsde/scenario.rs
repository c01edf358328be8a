//! Scenario generation for the backward schemes: each scenario couples one
//! path of the randomized pair `(X, I)` under the reference law with a
//! particle filter sharing the path's observed increments, reduced on the fly
//! to per-knot regression features and filter functionals.

use crate::error::{Error, Result};
use crate::filter::{self, FilterCloud, Resampling};
use crate::forward::{bridge_split, substeps, w_feature_path, EulerScratch, BLOWUP_THRESHOLD};
use crate::model::{ControlGrid, ProblemSpec, TimeGrid};
use crate::randomizer::{simulate_marks_poisson, FeaturePath, JumpRecord};
use crate::rng::{domains, CounterRng};
use crate::stats::par_map_indexed;

use super::basis::fnv64;

/// Batch generation parameters.
#[derive(Debug, Clone)]
pub struct BatchConfig {
    pub scenarios: usize,
    pub particles: usize,
    pub seed: u64,
    pub resampling: Resampling,
    /// Draw the knot-0 mark from the grid weights instead of pinning it at
    /// the anchor; the value does not depend on the starting mark, and a
    /// randomized start populates every control bucket at the first knot.
    pub randomize_initial_mark: bool,
    /// Coverage device: redraw the mark independently from the grid weights
    /// at every knot (in place of Poisson jump times) for the regression
    /// pass. No Doléans reweighting is applied; the reference law already
    /// makes the marks exogenous.
    pub mark_resampling: bool,
    /// Maximum tolerated fraction of blown-up paths.
    pub max_invalid_fraction: f64,
}

impl BatchConfig {
    pub fn new(scenarios: usize, particles: usize, seed: u64) -> Self {
        BatchConfig {
            scenarios,
            particles,
            seed,
            resampling: Resampling::Multinomial,
            randomize_initial_mark: true,
            mark_resampling: false,
            max_invalid_fraction: 1e-3,
        }
    }

    pub fn digest(&self, grid: &ControlGrid, tgrid: &TimeGrid) -> u64 {
        let s = format!(
            "P={};M={};seed={};resample={:?};rim={};markres={};J={};mass={};N={};T={}",
            self.scenarios,
            self.particles,
            self.seed,
            self.resampling,
            self.randomize_initial_mark,
            self.mark_resampling,
            grid.len(),
            grid.total_mass(),
            tgrid.steps(),
            tgrid.horizon()
        );
        fnv64(s.as_bytes())
    }
}

/// Reduced per-scenario data consumed by the backward schemes.
#[derive(Debug, Clone)]
pub struct ScenarioBatch {
    pub tgrid: TimeGrid,
    pub grid: ControlGrid,
    pub scenarios: usize,
    pub particles: usize,
    pub feat_dim: usize,
    /// `P x (N+1) x q` features at knots.
    pub features: Vec<f64>,
    /// `P x (N+1)` mark index at knots.
    pub marks: Vec<u32>,
    /// `P x N`: filter functional of the running gain at the scenario's own
    /// mark, `rho_k(f(t_k, ., a_{I_k}))`.
    pub rho_f_mark: Vec<f64>,
    /// `P`: terminal filter functional `rho_N(g)`.
    pub rho_g: Vec<f64>,
    /// `P`: knot Riemann gain along the scenario's own path.
    pub pathwise_gain: Vec<f64>,
    /// `P`: separated-form gain `sum_k rho_k(f) dt + rho_N(g)`.
    pub separated_gain: Vec<f64>,
    /// `P x (N+1) x n` path states at knots.
    pub x_knots: Vec<f64>,
    /// `P x (N+1) x d` cumulative observed noise at knots.
    pub w_knots: Vec<f64>,
    pub jumps: Vec<JumpRecord>,
    pub invalid: usize,
    pub config_digest: u64,
}

impl ScenarioBatch {
    #[inline]
    pub fn feature_row(&self, p: usize, k: usize) -> &[f64] {
        let q = self.feat_dim;
        let n1 = self.tgrid.steps() + 1;
        &self.features[(p * n1 + k) * q..(p * n1 + k) * q + q]
    }

    #[inline]
    pub fn mark(&self, p: usize, k: usize) -> usize {
        self.marks[p * (self.tgrid.steps() + 1) + k] as usize
    }

    /// Observed-noise feature path of one scenario (values at knots).
    pub fn w_path(&self, p: usize) -> FeaturePath {
        let n1 = self.tgrid.steps() + 1;
        let d = self.w_knots.len() / (self.scenarios * n1);
        FeaturePath::new(
            self.tgrid.knots().to_vec(),
            d,
            self.w_knots[p * n1 * d..(p + 1) * n1 * d].to_vec(),
        )
        .expect("consistent shape")
    }
}

struct ScenarioOut {
    features: Vec<f64>,
    marks: Vec<u32>,
    rho_f_mark: Vec<f64>,
    rho_g: f64,
    pathwise_gain: f64,
    separated_gain: f64,
    x_knots: Vec<f64>,
    w_knots: Vec<f64>,
    jumps: JumpRecord,
    invalid: bool,
}

/// Generate a batch of reference-law scenarios. Deterministic given the
/// configuration; scenarios are independent across the index.
pub fn generate_batch(
    spec: &ProblemSpec,
    grid: &ControlGrid,
    tgrid: &TimeGrid,
    cfg: &BatchConfig,
) -> Result<ScenarioBatch> {
    if cfg.scenarios < 2 {
        return Err(Error::Validation("need at least two scenarios".into()));
    }
    if cfg.particles == 0 {
        return Err(Error::Validation("need at least one particle".into()));
    }
    spec.validate(grid)?;
    if (tgrid.horizon() - spec.horizon).abs() > 1e-9 * spec.horizon.max(1.0) {
        return Err(Error::Validation("time grid horizon differs from the problem horizon".into()));
    }

    let n_steps = tgrid.steps();
    let results: Vec<Result<ScenarioOut>> = par_map_indexed(cfg.scenarios, 64, |p| {
        simulate_scenario(spec, grid, tgrid, cfg, p as u64)
    });

    let feat_dim = {
        // feature dimension from the spec shape: mean + packed cov + mass
        let n = spec.dim_x;
        n + n * (n + 1) / 2 + usize::from(spec.likelihood_coord.is_some())
    };
    let n1 = n_steps + 1;
    let n = spec.dim_x;
    let d = spec.dim_w;
    let mut batch = ScenarioBatch {
        tgrid: tgrid.clone(),
        grid: grid.clone(),
        scenarios: cfg.scenarios,
        particles: cfg.particles,
        feat_dim,
        features: Vec::with_capacity(cfg.scenarios * n1 * feat_dim),
        marks: Vec::with_capacity(cfg.scenarios * n1),
        rho_f_mark: Vec::with_capacity(cfg.scenarios * n_steps),
        rho_g: Vec::with_capacity(cfg.scenarios),
        pathwise_gain: Vec::with_capacity(cfg.scenarios),
        separated_gain: Vec::with_capacity(cfg.scenarios),
        x_knots: Vec::with_capacity(cfg.scenarios * n1 * n),
        w_knots: Vec::with_capacity(cfg.scenarios * n1 * d),
        jumps: Vec::with_capacity(cfg.scenarios),
        invalid: 0,
        config_digest: cfg.digest(grid, tgrid),
    };
    for r in results {
        let s = r?;
        batch.features.extend_from_slice(&s.features);
        batch.marks.extend_from_slice(&s.marks);
        batch.rho_f_mark.extend_from_slice(&s.rho_f_mark);
        batch.rho_g.push(s.rho_g);
        batch.pathwise_gain.push(s.pathwise_gain);
        batch.separated_gain.push(s.separated_gain);
        batch.x_knots.extend_from_slice(&s.x_knots);
        batch.w_knots.extend_from_slice(&s.w_knots);
        batch.jumps.push(s.jumps);
        if s.invalid {
            batch.invalid += 1;
        }
    }
    let frac = batch.invalid as f64 / cfg.scenarios as f64;
    if frac > cfg.max_invalid_fraction {
        return Err(Error::Numeric(format!(
            "{} of {} scenarios blew up (fraction {frac:.2e} exceeds {:.2e})",
            batch.invalid, cfg.scenarios, cfg.max_invalid_fraction
        )));
    }
    Ok(batch)
}

fn marks_for_scenario(
    grid: &ControlGrid,
    tgrid: &TimeGrid,
    cfg: &BatchConfig,
    p: u64,
) -> Result<JumpRecord> {
    if cfg.mark_resampling {
        let mut rng = CounterRng::from_stream(cfg.seed, domains::INITIAL_MARK, p);
        let initial_mark = rng.categorical(grid.weights());
        let n = tgrid.steps();
        let times: Vec<f64> = (1..n).map(|k| tgrid.knot(k)).collect();
        let marks: Vec<usize> = (1..n).map(|_| rng.categorical(grid.weights())).collect();
        Ok(JumpRecord {
            times,
            marks,
            initial_mark,
            horizon: tgrid.horizon(),
        })
    } else {
        let mut rng = CounterRng::from_stream(cfg.seed, domains::JUMPS, p);
        let mut rec = simulate_marks_poisson(grid, tgrid.horizon(), &mut rng)?;
        if cfg.randomize_initial_mark {
            let mut rng0 = CounterRng::from_stream(cfg.seed, domains::INITIAL_MARK, p);
            rec.initial_mark = rng0.categorical(grid.weights());
        }
        Ok(rec)
    }
}

fn simulate_scenario(
    spec: &ProblemSpec,
    grid: &ControlGrid,
    tgrid: &TimeGrid,
    cfg: &BatchConfig,
    p: u64,
) -> Result<ScenarioOut> {
    let n_steps = tgrid.steps();
    let (n, m, d) = (spec.dim_x, spec.dim_v, spec.dim_w);
    let jumps = marks_for_scenario(grid, tgrid, cfg, p)?;

    let mut rng_init = CounterRng::from_stream(cfg.seed, domains::INIT, p);
    let mut rng_w = CounterRng::from_stream(cfg.seed, domains::PATH_NOISE, p);
    let mut rng_v = CounterRng::from_stream(cfg.seed, domains::PATH_V, p);
    let mut rng_bridge = CounterRng::from_stream(cfg.seed, domains::BRIDGE, p);
    let mut rng_f = CounterRng::from_stream(cfg.seed, domains::FILTER_NOISE, p);

    let mut w_inc = vec![0.0; n_steps * d];
    for k in 0..n_steps {
        let sdt = tgrid.delta(k).sqrt();
        for c in 0..d {
            w_inc[k * d + c] = sdt * rng_w.normal();
        }
    }

    let mut state = vec![0.0; n];
    (spec.init_sampler)(&mut rng_init, &mut state);
    let mut cloud = FilterCloud::init(spec, cfg.particles, &mut rng_f)?;
    let mut scratch = EulerScratch::new(spec);

    let mut out = ScenarioOut {
        features: vec![0.0; (n_steps + 1) * {
            n + n * (n + 1) / 2 + usize::from(spec.likelihood_coord.is_some())
        }],
        marks: vec![0; n_steps + 1],
        rho_f_mark: vec![0.0; n_steps],
        rho_g: 0.0,
        pathwise_gain: 0.0,
        separated_gain: 0.0,
        x_knots: vec![0.0; (n_steps + 1) * n],
        w_knots: vec![0.0; (n_steps + 1) * d],
        jumps: JumpRecord::empty(0, tgrid.horizon()),
        invalid: false,
    };
    let feat_dim = out.features.len() / (n_steps + 1);

    let mut breaks = Vec::new();
    let mut dv = vec![0.0; m];
    let mut dw = vec![0.0; d];
    let mut rem = vec![0.0; d];

    for k in 0..=n_steps {
        let t = tgrid.knot(k);
        let mark = jumps.mark_at(t);
        out.marks[k] = mark as u32;
        out.x_knots[k * n..(k + 1) * n].copy_from_slice(&state);
        let feats = filter::extract_features(&cloud, spec);
        feats.write_to(&mut out.features[k * feat_dim..(k + 1) * feat_dim]);

        if k == n_steps {
            out.rho_g = filter::reference_expectation(&cloud, |x| (spec.terminal_gain)(x));
            out.pathwise_gain += (spec.terminal_gain)(&state);
            out.separated_gain += out.rho_g;
            break;
        }

        let dt = tgrid.delta(k);
        let a = grid.point(mark);
        let rho_f = filter::reference_expectation(&cloud, |x| (spec.running_gain)(t, x, a));
        out.rho_f_mark[k] = rho_f;
        out.separated_gain += rho_f * dt;
        out.pathwise_gain += (spec.running_gain)(t, &state, a) * dt;

        // advance path and cloud over [t_k, t_{k+1}], split at jump times
        let t1 = tgrid.knot(k + 1);
        substeps(&jumps, t, t1, &mut breaks);
        rem.copy_from_slice(&w_inc[k * d..(k + 1) * d]);
        let mut cur = t;
        for bi in 1..breaks.len() {
            let s_next = breaks[bi];
            let ds = s_next - cur;
            if bi + 1 == breaks.len() {
                dw.copy_from_slice(&rem);
            } else {
                bridge_split(&mut rng_bridge, &mut rem, cur, s_next, t1, &mut dw);
            }
            let sds = ds.sqrt();
            for c in 0..m {
                dv[c] = sds * rng_v.normal();
            }
            let a_cur = grid.point(jumps.mark_at(cur));
            scratch.step(spec, cur, &mut state, a_cur, ds, &dv, &dw);
            filter::propagate_filter(spec, &mut cloud, &dw, a_cur, cur, ds, &mut rng_f, cfg.resampling)?;
            cur = s_next;
        }
        for c in 0..d {
            out.w_knots[(k + 1) * d + c] = out.w_knots[k * d + c] + w_inc[k * d + c];
        }
        if state.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP_THRESHOLD) {
            out.invalid = true;
            // freeze the path to keep downstream values finite
            for v in state.iter_mut() {
                if !v.is_finite() {
                    *v = 0.0;
                } else {
                    *v = v.clamp(-BLOWUP_THRESHOLD, BLOWUP_THRESHOLD);
                }
            }
        }
    }
    out.jumps = jumps;
    let _ = w_feature_path; // knot values stored directly
    Ok(out)
}
