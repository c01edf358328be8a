//! Problem specifications, the finite control grid, and the time partition.

pub mod builders;

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use std::sync::Arc;

/// Vector-valued coefficient `(t, x, a) -> out`.
pub type VecFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Scalar gain `(t, x, a) -> f64`.
pub type GainFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;
/// Terminal gain `x -> f64`.
pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Seeded sampler writing a draw of the initial state.
pub type InitFn = Arc<dyn Fn(&mut CounterRng, &mut [f64]) + Send + Sync>;

/// User-declared growth and regularity constants. Sampled-checked, not
/// enforced: exact verification is impossible for black-box coefficients.
#[derive(Debug, Clone, Copy)]
pub struct GrowthBounds {
    /// Lipschitz constant of the drift and diffusions in the state.
    pub lipschitz: f64,
    /// Growth constant of the gains.
    pub gain_growth: f64,
    /// Polynomial growth power of the gains.
    pub power: f64,
}

impl Default for GrowthBounds {
    fn default() -> Self {
        GrowthBounds {
            lipschitz: 1.0,
            gain_growth: 1.0,
            power: 2.0,
        }
    }
}

/// Markovian coefficient bundle for the controlled state equation
/// `dX = b(t,X,a) dt + s1(t,X,a) dV + s2(t,X,a) dW` with gain
/// `E[∫ f(t,X,a) dt + g(X_T)]`, where `V` is the unobserved and `W` the
/// observed Brownian component.
#[derive(Clone)]
pub struct ProblemSpec {
    pub dim_x: usize,
    pub dim_v: usize,
    pub dim_w: usize,
    pub horizon: f64,
    pub drift: VecFn,
    /// `dim_x x dim_v` diffusion against the unobserved noise, row-major.
    pub diff_v: VecFn,
    /// `dim_x x dim_w` diffusion against the observed noise, row-major.
    pub diff_w: VecFn,
    pub running_gain: GainFn,
    pub terminal_gain: TerminalFn,
    pub init_sampler: InitFn,
    pub growth_bounds: GrowthBounds,
    /// Index of a likelihood (density) coordinate when the spec was produced
    /// by a reference-probability reformulation; drives the weighted filter
    /// mode and mass-scaled regression bases.
    ///
    /// Contract: the coordinate has zero drift and zero unobserved diffusion,
    /// and its observed diffusion row is `z * theta(t, x, a)`. Simulation
    /// advances it by the stochastic exponential
    /// `z <- z exp(theta' dW - |theta|^2 ds / 2)`, which preserves positivity
    /// and keeps the density a martingale step by step.
    pub likelihood_coord: Option<usize>,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("dim_x", &self.dim_x)
            .field("dim_v", &self.dim_v)
            .field("dim_w", &self.dim_w)
            .field("horizon", &self.horizon)
            .field("likelihood_coord", &self.likelihood_coord)
            .finish()
    }
}

impl ProblemSpec {
    /// Check dimensions and probe every coefficient at `(0, 0, a_j)` for all
    /// grid controls. Returns a validation error on non-finite output or
    /// inconsistent declared dimensions.
    pub fn validate(&self, grid: &ControlGrid) -> Result<()> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Validation(format!(
                "horizon must be positive and finite, got {}",
                self.horizon
            )));
        }
        if self.dim_x == 0 {
            return Err(Error::Validation("state dimension must be >= 1".into()));
        }
        if let Some(c) = self.likelihood_coord {
            if c >= self.dim_x {
                return Err(Error::Validation(format!(
                    "likelihood coordinate {c} out of range for dim_x {}",
                    self.dim_x
                )));
            }
        }
        let x = vec![0.0; self.dim_x];
        let mut b = vec![0.0; self.dim_x];
        let mut sv = vec![0.0; self.dim_x * self.dim_v];
        let mut sw = vec![0.0; self.dim_x * self.dim_w];
        for j in 0..grid.len() {
            let a = grid.point(j);
            (self.drift)(0.0, &x, a, &mut b);
            (self.diff_v)(0.0, &x, a, &mut sv);
            (self.diff_w)(0.0, &x, a, &mut sw);
            let f = (self.running_gain)(0.0, &x, a);
            let g = (self.terminal_gain)(&x);
            let finite = b.iter().chain(sv.iter()).chain(sw.iter()).all(|v| v.is_finite())
                && f.is_finite()
                && g.is_finite();
            if !finite {
                return Err(Error::Validation(format!(
                    "non-finite coefficient probe at control index {j}"
                )));
            }
        }
        let mut rng = CounterRng::from_stream(0x5eed, crate::rng::domains::INIT, 0);
        let mut x0 = vec![0.0; self.dim_x];
        (self.init_sampler)(&mut rng, &mut x0);
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("initial sampler produced non-finite state".into()));
        }
        Ok(())
    }

    /// Sampled Lipschitz check on the unit ball: 100 probe pairs per control.
    /// Advisory only; returns human-readable warnings for violations beyond
    /// a factor 1.01 of the declared constant.
    pub fn lipschitz_warnings(&self, grid: &ControlGrid, seed: u64) -> Vec<String> {
        let mut rng = CounterRng::from_stream(seed, crate::rng::domains::INIT, 1);
        let n = self.dim_x;
        let l = self.growth_bounds.lipschitz;
        let mut warnings = Vec::new();
        let mut b1 = vec![0.0; n];
        let mut b2 = vec![0.0; n];
        for _ in 0..100 {
            let ball = |rng: &mut CounterRng| -> Vec<f64> {
                let v: Vec<f64> = (0..n).map(|_| 2.0 * rng.uniform() - 1.0).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
                v.into_iter().map(|x| x / norm).collect()
            };
            let x = ball(&mut rng);
            let xp = ball(&mut rng);
            let dx = x
                .iter()
                .zip(&xp)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            if dx == 0.0 {
                continue;
            }
            for j in 0..grid.len() {
                let a = grid.point(j);
                (self.drift)(0.0, &x, a, &mut b1);
                (self.drift)(0.0, &xp, a, &mut b2);
                let db = b1
                    .iter()
                    .zip(&b2)
                    .map(|(u, v)| (u - v).abs())
                    .fold(0.0f64, f64::max);
                if db > 1.01 * l * dx {
                    warnings.push(format!(
                        "drift Lipschitz probe exceeded declared constant {l} \
                         (|db| = {db:.3e} vs L*|dx| = {:.3e}, control {j})",
                        l * dx
                    ));
                }
            }
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        warnings
    }
}

/// Finite control set with intensity weights.
#[derive(Debug, Clone)]
pub struct ControlGrid {
    points: Vec<f64>,
    ctrl_dim: usize,
    weights: Vec<f64>,
    anchor_index: usize,
    total_mass: f64,
}

impl ControlGrid {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>, anchor_index: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Validation("control grid must have J >= 1 points".into()));
        }
        let ctrl_dim = points[0].len();
        if ctrl_dim == 0 || points.iter().any(|p| p.len() != ctrl_dim) {
            return Err(Error::Validation("control points must share a fixed positive width".into()));
        }
        if weights.len() != points.len() {
            return Err(Error::Validation("one weight per control point required".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Validation("intensity weights must be positive and finite".into()));
        }
        if anchor_index >= points.len() {
            return Err(Error::Validation("anchor index out of range".into()));
        }
        let total_mass = weights.iter().sum();
        Ok(ControlGrid {
            points: points.into_iter().flatten().collect(),
            ctrl_dim,
            weights,
            anchor_index,
            total_mass,
        })
    }

    /// Scalar grid with uniform weights summing to `total_mass`.
    pub fn scalar_uniform(values: &[f64], anchor_index: usize, total_mass: f64) -> Result<Self> {
        let j = values.len();
        if j == 0 || !(total_mass > 0.0) {
            return Err(Error::Validation("need J >= 1 and positive total mass".into()));
        }
        ControlGrid::new(
            values.iter().map(|&v| vec![v]).collect(),
            vec![total_mass / j as f64; j],
            anchor_index,
        )
    }

    /// Same points, weights rescaled to a new total mass.
    pub fn with_total_mass(&self, total_mass: f64) -> Self {
        let scale = total_mass / self.total_mass;
        let mut g = self.clone();
        for w in &mut g.weights {
            *w *= scale;
        }
        g.total_mass = total_mass;
        g
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
    pub fn ctrl_dim(&self) -> usize {
        self.ctrl_dim
    }

    #[inline]
    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.ctrl_dim..(j + 1) * self.ctrl_dim]
    }

    #[inline]
    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn anchor_index(&self) -> usize {
        self.anchor_index
    }

    /// Total intensity mass over the grid.
    #[inline]
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Euclidean distance between two grid points capped at 1, the metric
    /// used for control-path distances.
    pub fn rho(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let (a, b) = (self.point(i), self.point(j));
        let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
        d2.sqrt().min(1.0)
    }

    /// Index of the grid point closest to `value` (ties to the lower index).
    pub fn project(&self, value: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for j in 0..self.len() {
            let d: f64 = self
                .point(j)
                .iter()
                .zip(value)
                .map(|(u, v)| (u - v) * (u - v))
                .sum();
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        best
    }
}

/// Strictly increasing partition `0 = t_0 < ... < t_N = horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    knots: Vec<f64>,
}

impl TimeGrid {
    pub fn new(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Validation("time grid needs at least two knots".into()));
        }
        if knots[0] != 0.0 {
            return Err(Error::Validation("time grid must start at 0".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation("time grid knots must be strictly increasing".into()));
        }
        Ok(TimeGrid { knots })
    }

    #[inline]
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    #[inline]
    pub fn knot(&self, k: usize) -> f64 {
        self.knots[k]
    }

    /// Number of steps N (one less than the number of knots).
    #[inline]
    pub fn steps(&self) -> usize {
        self.knots.len() - 1
    }

    #[inline]
    pub fn delta(&self, k: usize) -> f64 {
        self.knots[k + 1] - self.knots[k]
    }

    #[inline]
    pub fn horizon(&self) -> f64 {
        *self.knots.last().unwrap()
    }
}

/// Equally spaced partition of `[0, horizon]` into `steps` intervals.
pub fn make_uniform_grid(horizon: f64, steps: usize) -> Result<TimeGrid> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Validation(format!("horizon must be positive, got {horizon}")));
    }
    if steps < 1 {
        return Err(Error::Validation("steps must be >= 1".into()));
    }
    let mut knots: Vec<f64> = (0..=steps)
        .map(|k| horizon * k as f64 / steps as f64)
        .collect();
    // Pin the endpoint exactly.
    knots[steps] = horizon;
    TimeGrid::new(knots)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_examples() {
        let g = make_uniform_grid(1.0, 4).unwrap();
        assert_eq!(g.knots(), &[0.0, 0.25, 0.5, 0.75, 1.0]);

        let g = make_uniform_grid(1.0, 1).unwrap();
        assert_eq!(g.knots(), &[0.0, 1.0]);

        let g = make_uniform_grid(2.0, 8).unwrap();
        assert_eq!(g.knots().len(), 9);
        assert!((g.delta(3) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn uniform_grid_rejects_bad_input() {
        assert!(make_uniform_grid(0.0, 4).is_err());
        assert!(make_uniform_grid(-1.0, 4).is_err());
        assert!(make_uniform_grid(1.0, 0).is_err());
    }

    #[test]
    fn control_grid_mass_and_projection() {
        let g = ControlGrid::scalar_uniform(&[-1.0, 0.0, 1.0], 1, 2.0).unwrap();
        assert_eq!(g.len(), 3);
        assert!((g.total_mass() - 2.0).abs() < 1e-15);
        assert!((g.total_mass() - g.weights().iter().sum::<f64>()).abs() < 1e-15);
        assert_eq!(g.project(&[0.6]), 2);
        assert_eq!(g.project(&[0.5]), 1); // tie goes to the lower index
        assert_eq!(g.anchor_index(), 1);
        assert!((g.rho(0, 2) - 1.0).abs() < 1e-15); // capped at 1
        assert_eq!(g.rho(1, 1), 0.0);
    }

    #[test]
    fn control_grid_rejects_bad_weights() {
        assert!(ControlGrid::new(vec![vec![0.0]], vec![0.0], 0).is_err());
        assert!(ControlGrid::new(vec![vec![0.0]], vec![-1.0], 0).is_err());
        assert!(ControlGrid::new(vec![], vec![], 0).is_err());
        assert!(ControlGrid::new(vec![vec![0.0]], vec![1.0], 3).is_err());
    }

    #[test]
    fn time_grid_invariants() {
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.1, 0.5, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.0]).is_err());
    }
}
