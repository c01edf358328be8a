//! Mark-process machinery: Poisson simulation of the exogenous control
//! process, intensity-tilted simulation by thinning, the Doléans exponential
//! implementing the change of measure, and two independent constructions used
//! as cross-oracles (a time-change construction and a perturbed marked point
//! process approximating a given step control).

use crate::error::{Error, Result};
use crate::model::{ControlGrid, TimeGrid};
use crate::rng::CounterRng;

/// One realization of the exogenous mark process on `(0, horizon]`.
///
/// `I_t` equals the mark of the last jump at or before `t`, and the initial
/// mark before the first jump.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpRecord {
    pub times: Vec<f64>,
    pub marks: Vec<usize>,
    pub initial_mark: usize,
    pub horizon: f64,
}

/// Borrowed prefix of a jump record, passed to intensity evaluations.
#[derive(Debug, Clone, Copy)]
pub struct JumpView<'a> {
    pub times: &'a [f64],
    pub marks: &'a [usize],
}

impl JumpRecord {
    pub fn empty(initial_mark: usize, horizon: f64) -> Self {
        JumpRecord {
            times: Vec::new(),
            marks: Vec::new(),
            initial_mark,
            horizon,
        }
    }

    pub fn validate(&self, grid: &ControlGrid) -> Result<()> {
        if self.times.len() != self.marks.len() {
            return Err(Error::Validation("times/marks length mismatch".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation("jump times must be strictly increasing".into()));
        }
        if self.times.iter().any(|&t| !(t > 0.0 && t <= self.horizon)) {
            return Err(Error::Validation("jump times must lie in (0, horizon]".into()));
        }
        if self.marks.iter().any(|&j| j >= grid.len()) || self.initial_mark >= grid.len() {
            return Err(Error::Validation("mark index out of grid range".into()));
        }
        Ok(())
    }

    /// Mark index in force at time `t` (càdlàg evaluation).
    #[inline]
    pub fn mark_at(&self, t: f64) -> usize {
        match self.times.partition_point(|&s| s <= t) {
            0 => self.initial_mark,
            k => self.marks[k - 1],
        }
    }

    /// Number of jumps at or before `t`.
    #[inline]
    pub fn count_at(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t)
    }

    /// Prefix of jumps with time `< t` (the predictable history at `t`).
    #[inline]
    pub fn prefix_before(&self, t: f64) -> JumpView<'_> {
        let k = self.times.partition_point(|&s| s < t);
        JumpView {
            times: &self.times[..k],
            marks: &self.marks[..k],
        }
    }

    /// Prefix of jumps with time `<= t`.
    #[inline]
    pub fn prefix_through(&self, t: f64) -> JumpView<'_> {
        let k = self.times.partition_point(|&s| s <= t);
        JumpView {
            times: &self.times[..k],
            marks: &self.marks[..k],
        }
    }
}

/// Feature path available to intensity controls: piecewise-constant values
/// frozen at the last knot, so the value used on `[t_k, t_{k+1})` is known at
/// `t_k` (predictability).
#[derive(Debug, Clone)]
pub struct FeaturePath {
    knots: Vec<f64>,
    dim: usize,
    values: Vec<f64>,
}

impl FeaturePath {
    pub fn new(knots: Vec<f64>, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != knots.len() * dim {
            return Err(Error::Validation("feature path shape mismatch".into()));
        }
        Ok(FeaturePath { knots, dim, values })
    }

    /// A featureless path (dimension zero).
    pub fn none() -> Self {
        FeaturePath {
            knots: vec![0.0],
            dim: 0,
            values: Vec::new(),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn at(&self, t: f64) -> &[f64] {
        if self.dim == 0 {
            return &[];
        }
        let k = self.knots.partition_point(|&s| s <= t).max(1) - 1;
        &self.values[k * self.dim..(k + 1) * self.dim]
    }
}

/// Bounded predictable intensity control `nu_t(a_j)`.
///
/// Evaluations are clamped into `bounds()` which must satisfy
/// `0 < lower <= upper < inf`; a strictly positive lower bound keeps the
/// tilted law equivalent to the reference law.
pub trait IntensityControl: Send + Sync {
    /// `(lower, upper)` clamp bounds.
    fn bounds(&self) -> (f64, f64);

    /// Raw evaluation before clamping. `history` holds the jumps strictly
    /// before `t`; `w_feats` is the observation feature vector at `t`.
    fn eval_raw(&self, t: f64, history: JumpView<'_>, w_feats: &[f64], j: usize) -> f64;

    /// Clamped evaluation.
    #[inline]
    fn eval(&self, t: f64, history: JumpView<'_>, w_feats: &[f64], j: usize) -> f64 {
        let (lo, hi) = self.bounds();
        self.eval_raw(t, history, w_feats, j).clamp(lo, hi)
    }
}

/// Constant intensity, the simplest admissible control.
#[derive(Debug, Clone, Copy)]
pub struct ConstIntensity(pub f64);

impl IntensityControl for ConstIntensity {
    fn bounds(&self) -> (f64, f64) {
        (self.0, self.0)
    }
    fn eval_raw(&self, _: f64, _: JumpView<'_>, _: &[f64], _: usize) -> f64 {
        self.0
    }
}

/// Intensity clamped from below at `eps`, the truncation used to stay in the
/// strictly positive admissible class.
pub struct FloorIntensity<'a> {
    pub inner: &'a dyn IntensityControl,
    pub eps: f64,
}

impl IntensityControl for FloorIntensity<'_> {
    fn bounds(&self) -> (f64, f64) {
        let (lo, hi) = self.inner.bounds();
        (lo.max(self.eps), hi.max(self.eps))
    }
    fn eval_raw(&self, t: f64, h: JumpView<'_>, w: &[f64], j: usize) -> f64 {
        self.inner.eval(t, h, w, j).max(self.eps)
    }
}

/// Simulate the reference mark process: a Poisson process of rate
/// `lambda(A)` on `(0, horizon]` with marks drawn proportionally to the grid
/// weights, starting from the anchor point.
pub fn simulate_marks_poisson(grid: &ControlGrid, horizon: f64, rng: &mut CounterRng) -> Result<JumpRecord> {
    if !(horizon > 0.0) {
        return Err(Error::Validation("horizon must be positive".into()));
    }
    let total = grid.total_mass();
    let mut times = Vec::new();
    let mut marks = Vec::new();
    let mut t = 0.0;
    loop {
        t += rng.exponential(total);
        if t > horizon {
            break;
        }
        times.push(t);
        marks.push(rng.categorical(grid.weights()));
    }
    Ok(JumpRecord {
        times,
        marks,
        initial_mark: grid.anchor_index(),
        horizon,
    })
}

/// Simulate the mark process with stochastic intensity `nu_t(a_j) lambda_j`
/// by thinning against the dominating rate `nu_max * lambda(A)`.
pub fn simulate_marks_controlled(
    grid: &ControlGrid,
    horizon: f64,
    nu: &dyn IntensityControl,
    w_path: &FeaturePath,
    rng: &mut CounterRng,
) -> Result<JumpRecord> {
    if !(horizon > 0.0) {
        return Err(Error::Validation("horizon must be positive".into()));
    }
    let (lo, hi) = nu.bounds();
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::Validation(format!("intensity bounds ({lo}, {hi}) invalid")));
    }
    let dominating = hi * grid.total_mass();
    if !(dominating > 0.0) {
        return Err(Error::Validation("dominating rate must be positive".into()));
    }
    let mut rec = JumpRecord::empty(grid.anchor_index(), horizon);
    let mut t = 0.0;
    loop {
        t += rng.exponential(dominating);
        if t > horizon {
            break;
        }
        let j = rng.categorical(grid.weights());
        let u = rng.uniform();
        let rate = nu.eval(t, rec.prefix_before(t), w_path.at(t), j);
        if u * hi <= rate {
            rec.times.push(t);
            rec.marks.push(j);
        }
    }
    Ok(rec)
}

/// Integrand of the Doléans exponent at time `s`.
#[inline]
fn kappa_integrand(
    grid: &ControlGrid,
    nu: &dyn IntensityControl,
    record: &JumpRecord,
    w_path: &FeaturePath,
    s: f64,
    history_at: f64,
) -> f64 {
    let hist = record.prefix_through(history_at);
    let feats = w_path.at(s);
    let mut acc = 0.0;
    for j in 0..grid.len() {
        acc += (1.0 - nu.eval(s, hist, feats, j)) * grid.weight(j);
    }
    acc
}

/// Doléans exponential `kappa_t` of the intensity control along a record:
/// `exp(int_0^t sum_j (1 - nu_s(a_j)) lambda_j ds) * prod_{S_n <= t} nu_{S_n}(eta_n)`.
///
/// The time integral uses the composite trapezoid rule on `tgrid` refined by
/// the jump times; for intensities piecewise constant between breakpoints the
/// quadrature is exact.
pub fn doleans_kappa(
    record: &JumpRecord,
    grid: &ControlGrid,
    nu: &dyn IntensityControl,
    w_path: &FeaturePath,
    tgrid: &TimeGrid,
    t: f64,
) -> Result<f64> {
    if !(0.0..=record.horizon + 1e-12).contains(&t) {
        return Err(Error::Validation(format!("t = {t} outside [0, horizon]")));
    }
    // Breakpoints: grid knots and jump times up to t.
    let mut pts: Vec<f64> = tgrid.knots().iter().copied().filter(|&s| s < t).collect();
    pts.extend(record.times.iter().copied().filter(|&s| s < t));
    pts.push(0.0);
    pts.push(t);
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();

    let mut exponent = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        // Right node evaluated just inside the interval so piecewise-constant
        // intensities integrate exactly.
        let fa = kappa_integrand(grid, nu, record, w_path, a, a);
        let fb = kappa_integrand(grid, nu, record, w_path, f64_prev(b), a);
        exponent += 0.5 * (fa + fb) * (b - a);
    }

    let mut product = 1.0;
    for (idx, &s) in record.times.iter().enumerate() {
        if s > t {
            break;
        }
        let v = nu.eval(s, record.prefix_before(s), w_path.at(s), record.marks[idx]);
        product *= v;
    }

    let kappa = exponent.exp() * product;
    if !kappa.is_finite() {
        return Err(Error::Numeric(format!("non-finite Doléans exponential: exp({exponent}) * {product}")));
    }
    Ok(kappa)
}

#[inline]
fn f64_prev(x: f64) -> f64 {
    // next representable value toward -inf; keeps trapezoid weights exact.
    f64::from_bits(x.to_bits() - 1)
}

/// Per-jump-count intensity layers, the decomposed form used by the
/// time-change construction: layer `n` is in force between the `n`-th and
/// `(n+1)`-th constructed jump.
pub trait LayeredIntensity: Send + Sync {
    fn bounds(&self) -> (f64, f64);
    fn eval_raw(&self, layer: usize, t: f64, history: JumpView<'_>, w_feats: &[f64], j: usize) -> f64;

    #[inline]
    fn eval(&self, layer: usize, t: f64, history: JumpView<'_>, w_feats: &[f64], j: usize) -> f64 {
        let (lo, hi) = self.bounds();
        self.eval_raw(layer, t, history, w_feats, j).clamp(lo, hi)
    }
}

/// Constant intensity on every layer.
#[derive(Debug, Clone, Copy)]
pub struct ConstLayers(pub f64);

impl LayeredIntensity for ConstLayers {
    fn bounds(&self) -> (f64, f64) {
        (self.0, self.0)
    }
    fn eval_raw(&self, _: usize, _: f64, _: JumpView<'_>, _: &[f64], _: usize) -> f64 {
        self.0
    }
}

/// Layered intensity from a closure.
pub struct FnLayers<F> {
    pub bounds: (f64, f64),
    pub f: F,
}

impl<F> LayeredIntensity for FnLayers<F>
where
    F: Fn(usize, f64, JumpView<'_>, &[f64], usize) -> f64 + Send + Sync,
{
    fn bounds(&self) -> (f64, f64) {
        self.bounds
    }
    fn eval_raw(&self, layer: usize, t: f64, h: JumpView<'_>, w: &[f64], j: usize) -> f64 {
        (self.f)(layer, t, h, w, j)
    }
}

const BISECT_TOL: f64 = 1e-10;

/// Time-change construction of the tilted mark process from a Poisson
/// skeleton: the `n`-th constructed time solves
/// `(1/lambda(A)) int_{prev}^{u} sum_j nu_s^{(n-1)}(a_j) lambda_j ds = S_n - S_{n-1}`
/// by bisection, and the mark is drawn by inverting the discrete conditional
/// CDF with weights `nu lambda` at the constructed time, one uniform variate
/// per mark.
///
/// The skeleton must extend at least to `out_horizon * nu_max` so no jump of
/// the output on `(0, out_horizon]` is missed.
pub fn construct_timechange_process(
    grid: &ControlGrid,
    nu_layers: &dyn LayeredIntensity,
    skeleton: &JumpRecord,
    w_path: &FeaturePath,
    tgrid: &TimeGrid,
    out_horizon: f64,
    rng: &mut CounterRng,
) -> Result<JumpRecord> {
    let (lo, hi) = nu_layers.bounds();
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::Validation(format!("layer bounds ({lo}, {hi}) invalid")));
    }
    if skeleton.horizon + 1e-12 < out_horizon * hi {
        return Err(Error::Validation(format!(
            "skeleton horizon {} too short for output horizon {} at nu_max {}",
            skeleton.horizon, out_horizon, hi
        )));
    }
    let total = grid.total_mass();
    let mut out = JumpRecord::empty(skeleton.initial_mark, out_horizon);
    let mut prev_skel = 0.0;
    let mut prev_new = 0.0;

    for (n, &s_n) in skeleton.times.iter().enumerate() {
        let target = s_n - prev_skel;
        let layer = n;

        // Normalized cumulative intensity from prev_new.
        let theta = |u: f64| -> f64 {
            let mut pts: Vec<f64> = tgrid
                .knots()
                .iter()
                .copied()
                .filter(|&s| s > prev_new && s < u)
                .collect();
            pts.push(prev_new);
            pts.push(u);
            pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            pts.dedup();
            let hist = JumpView {
                times: &out.times,
                marks: &out.marks,
            };
            let mut acc = 0.0;
            for w in pts.windows(2) {
                let (a, b) = (w[0], w[1]);
                let mut fa = 0.0;
                let mut fb = 0.0;
                for j in 0..grid.len() {
                    fa += nu_layers.eval(layer, a, hist, w_path.at(a), j) * grid.weight(j);
                    fb += nu_layers.eval(layer, f64_prev(b), hist, w_path.at(f64_prev(b)), j) * grid.weight(j);
                }
                acc += 0.5 * (fa + fb) * (b - a);
            }
            acc / total
        };

        let mut a = prev_new + target / hi;
        let mut b = prev_new + target / lo;
        if theta(a) > target + 1e-9 || theta(b) < target - 1e-9 {
            return Err(Error::Internal(format!(
                "time-change bracket failure at jump {n}: theta({a}) = {}, theta({b}) = {}, target {target}",
                theta(a),
                theta(b)
            )));
        }
        while b - a > BISECT_TOL {
            let mid = 0.5 * (a + b);
            if theta(mid) < target {
                a = mid;
            } else {
                b = mid;
            }
        }
        let t_new = 0.5 * (a + b);

        // Discrete conditional CDF with weights nu * lambda at the new time.
        let hist = JumpView {
            times: &out.times,
            marks: &out.marks,
        };
        let mut weights = vec![0.0; grid.len()];
        for (j, w) in weights.iter_mut().enumerate() {
            *w = nu_layers.eval(layer, t_new, hist, w_path.at(t_new), j) * grid.weight(j);
        }
        let mark = rng.categorical(&weights);

        if t_new > out_horizon {
            break;
        }
        out.times.push(t_new);
        out.marks.push(mark);
        prev_skel = s_n;
        prev_new = t_new;
    }
    Ok(out)
}

/// Piecewise-constant control path on a finite subdivision, used as the
/// target of the perturbed marked-point-process construction.
#[derive(Debug, Clone)]
pub struct StepControl {
    /// Subdivision `0 = t_0 < t_1 < ...`; value `marks[i]` holds on
    /// `[t_i, t_{i+1})` and `marks.last()` beyond the last knot.
    pub times: Vec<f64>,
    pub marks: Vec<usize>,
}

impl StepControl {
    pub fn validate(&self, grid: &ControlGrid) -> Result<()> {
        if self.times.is_empty() || self.times[0] != 0.0 {
            return Err(Error::Validation("step control must start at time 0".into()));
        }
        if self.times.len() != self.marks.len() {
            return Err(Error::Validation("step control times/marks mismatch".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation("step control times must increase".into()));
        }
        if self.marks.iter().any(|&j| j >= grid.len()) {
            return Err(Error::Validation("step control mark out of range".into()));
        }
        if self.marks[0] != grid.anchor_index() {
            return Err(Error::Validation("step control must start at the anchor point".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn mark_at(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&s| s <= t).max(1) - 1;
        self.marks[k]
    }
}

/// Perturbed marked point process tracking a step control: jump `n` occurs at
/// `R_n = t_n + V_1 + ... + V_n` with `V_i ~ Exp(m * 2^i)` (so the expected
/// total lag is at most `1/m`), its mark is drawn from the grid weights
/// restricted to the radius-`1/m` ball around the target value, and an
/// independent Poisson measure with intensity `lambda / k` is superposed.
pub fn construct_perturbed_process(
    grid: &ControlGrid,
    step_control: &StepControl,
    m: u32,
    k: u32,
    horizon: f64,
    rng: &mut CounterRng,
) -> Result<JumpRecord> {
    if m < 1 || k < 1 {
        return Err(Error::Validation("m and k must be >= 1".into()));
    }
    if !(horizon > 0.0) {
        return Err(Error::Validation("horizon must be positive".into()));
    }
    step_control.validate(grid)?;
    let m_f = m as f64;

    let mut times = Vec::new();
    let mut marks = Vec::new();
    let mut lag = 0.0;
    for n in 1..step_control.times.len() {
        let t_n = step_control.times[n];
        if t_n > horizon {
            break;
        }
        // Exponential rates m * 2^n sum their means to 1/m.
        let rate = m_f * (2.0f64).powi(n as i32);
        lag += rng.exponential(rate);
        let target = step_control.marks[n];
        // lambda-normalized draw from the ball around the target value.
        let radius = 1.0 / m_f;
        let mut weights = vec![0.0; grid.len()];
        let mut mass = 0.0;
        for (j, w) in weights.iter_mut().enumerate() {
            if grid.rho(j, target) < radius {
                *w = grid.weight(j);
                mass += *w;
            }
        }
        if mass <= 0.0 {
            return Err(Error::Validation(format!(
                "empty mark neighborhood around control point {target} at radius {radius}"
            )));
        }
        let mark = rng.categorical(&weights);
        let r_n = t_n + lag;
        if r_n <= horizon {
            times.push(r_n);
            marks.push(mark);
        }
    }

    // Independent Poisson superposition with intensity lambda / k.
    let rate = grid.total_mass() / k as f64;
    let mut t = 0.0;
    loop {
        t += rng.exponential(rate);
        if t > horizon {
            break;
        }
        times.push(t);
        marks.push(rng.categorical(grid.weights()));
    }

    let mut idx: Vec<usize> = (0..times.len()).collect();
    idx.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).unwrap());
    Ok(JumpRecord {
        times: idx.iter().map(|&i| times[i]).collect(),
        marks: idx.iter().map(|&i| marks[i]).collect(),
        initial_mark: grid.anchor_index(),
        horizon,
    })
}

/// Integrated control distance `int_0^T rho(I_t, alpha_t) dt` between a jump
/// record and a step control, computed exactly (both are piecewise constant).
pub fn control_distance(record: &JumpRecord, step_control: &StepControl, grid: &ControlGrid, horizon: f64) -> f64 {
    let mut pts: Vec<f64> = Vec::new();
    pts.push(0.0);
    pts.extend(record.times.iter().copied().filter(|&t| t < horizon));
    pts.extend(step_control.times.iter().copied().filter(|&t| t > 0.0 && t < horizon));
    pts.push(horizon);
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    let mut acc = 0.0;
    for w in pts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        acc += grid.rho(record.mark_at(mid), step_control.mark_at(mid)) * (w[1] - w[0]);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_uniform_grid;
    use crate::rng::domains;
    use crate::stats::{ks_distance_to, ks_distance_two_sample, ks_two_sample_threshold, mean_stderr};

    fn grid3() -> ControlGrid {
        ControlGrid::scalar_uniform(&[-1.0, 0.0, 1.0], 1, 2.0).unwrap()
    }

    #[test]
    fn poisson_law() {
        let grid = grid3();
        let n = 100_000;
        let mut count_sum = 0usize;
        let mut none = 0usize;
        for i in 0..n {
            let mut rng = CounterRng::from_stream(41, domains::JUMPS, i as u64);
            let rec = simulate_marks_poisson(&grid, 1.0, &mut rng).unwrap();
            count_sum += rec.times.len();
            if rec.times.is_empty() {
                none += 1;
            }
        }
        let mean = count_sum as f64 / n as f64;
        assert!((mean - 2.0).abs() < 0.05, "mean count {mean}");
        let p0 = none as f64 / n as f64;
        assert!((p0 - (-2.0f64).exp()).abs() < 0.01, "P(no jump) {p0}");
    }

    #[test]
    fn degenerate_single_point_grid() {
        let grid = ControlGrid::scalar_uniform(&[0.7], 0, 1.5).unwrap();
        let mut rng = CounterRng::from_stream(5, domains::JUMPS, 0);
        let rec = simulate_marks_poisson(&grid, 10.0, &mut rng).unwrap();
        assert!(!rec.times.is_empty());
        assert!(rec.marks.iter().all(|&m| m == 0));
    }

    #[test]
    fn mark_frequencies() {
        let grid = ControlGrid::new(vec![vec![0.0], vec![1.0]], vec![1.0, 3.0], 0).unwrap();
        let mut got = 0usize;
        let mut total = 0usize;
        let mut i = 0u64;
        while total < 100_000 {
            let mut rng = CounterRng::from_stream(17, domains::JUMPS, i);
            let rec = simulate_marks_poisson(&grid, 5.0, &mut rng).unwrap();
            got += rec.marks.iter().filter(|&&m| m == 1).count();
            total += rec.marks.len();
            i += 1;
        }
        let freq = got as f64 / total as f64;
        assert!((freq - 0.75).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn cadlag_evaluation() {
        let grid = grid3();
        let rec = JumpRecord {
            times: vec![0.25, 0.7],
            marks: vec![2, 0],
            initial_mark: grid.anchor_index(),
            horizon: 1.0,
        };
        rec.validate(&grid).unwrap();
        assert_eq!(rec.mark_at(0.0), 1);
        assert_eq!(rec.mark_at(0.25), 2); // right-continuous at the jump
        assert_eq!(rec.mark_at(0.25 - 1e-12), 1);
        assert_eq!(rec.mark_at(0.7), 0);
        assert_eq!(rec.mark_at(0.7 - 1e-12), 2);
        assert_eq!(rec.prefix_before(0.25).times.len(), 0);
        assert_eq!(rec.prefix_through(0.25).times.len(), 1);
    }

    #[test]
    fn thinning_identity_matches_poisson() {
        let grid = grid3();
        let horizon = 4.0;
        let n = 100_000;
        let mut first_a = Vec::with_capacity(n);
        let mut first_b = Vec::with_capacity(n);
        let nu = ConstIntensity(1.0);
        let w = FeaturePath::none();
        for i in 0..n {
            let mut r1 = CounterRng::from_stream(7, domains::JUMPS, i as u64);
            let rec1 = simulate_marks_poisson(&grid, horizon, &mut r1).unwrap();
            first_a.push(*rec1.times.first().unwrap_or(&horizon));
            let mut r2 = CounterRng::from_stream(8, domains::THINNING, i as u64);
            let rec2 = simulate_marks_controlled(&grid, horizon, &nu, &w, &mut r2).unwrap();
            first_b.push(*rec2.times.first().unwrap_or(&horizon));
        }
        let d = ks_distance_two_sample(&mut first_a, &mut first_b);
        let thr = ks_two_sample_threshold(n, n, 0.01);
        assert!(d < thr, "KS {d} vs threshold {thr}");
    }

    #[test]
    fn thinning_constant_rate_law() {
        let grid = grid3();
        let c = 1.7;
        let total = grid.total_mass();
        let horizon = 8.0 / (c * total);
        let nu = ConstIntensity(c);
        let w = FeaturePath::none();
        let n = 100_000;
        let mut first = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = CounterRng::from_stream(9, domains::THINNING, i as u64);
            let rec = simulate_marks_controlled(&grid, horizon, &nu, &w, &mut rng).unwrap();
            first.push(*rec.times.first().unwrap_or(&horizon));
        }
        let d = ks_distance_to(&mut first, |t| 1.0 - (-c * total * t.clamp(0.0, horizon)).exp());
        assert!(d < 0.01, "KS distance {d}");
    }

    /// Time-varying deterministic intensity: mean count matches the
    /// compensator mass, oracle by fine trapezoid quadrature.
    #[test]
    fn thinning_time_varying_mean_count() {
        let grid = grid3();
        let tgrid = make_uniform_grid(1.0, 16).unwrap();
        struct Ramp {
            tgrid: TimeGrid,
        }
        impl IntensityControl for Ramp {
            fn bounds(&self) -> (f64, f64) {
                (0.2, 2.0)
            }
            fn eval_raw(&self, t: f64, _: JumpView<'_>, _: &[f64], j: usize) -> f64 {
                // frozen at the left knot so it is piecewise constant
                let k = self.tgrid.knots().partition_point(|&s| s <= t).max(1) - 1;
                let tk = self.tgrid.knot(k);
                0.3 + 1.5 * tk + 0.1 * j as f64
            }
        }
        let nu = Ramp { tgrid: tgrid.clone() };
        // Quadrature of the compensator on a fine grid.
        let mut expected = 0.0;
        let steps = 40_000;
        for i in 0..steps {
            let a = i as f64 / steps as f64;
            let b = (i + 1) as f64 / steps as f64;
            let f = |s: f64| -> f64 {
                (0..grid.len())
                    .map(|j| {
                        nu.eval(s, JumpView { times: &[], marks: &[] }, &[], j) * grid.weight(j)
                    })
                    .sum()
            };
            expected += 0.5 * (f(a) + f(b + (a - b) * 1e-9)) * (b - a);
        }
        let w = FeaturePath::none();
        let n = 1_000_000usize;
        let mut count = 0usize;
        for i in 0..n {
            let mut rng = CounterRng::from_stream(10, domains::THINNING, i as u64);
            let rec = simulate_marks_controlled(&grid, 1.0, &nu, &w, &mut rng).unwrap();
            count += rec.times.len();
        }
        let mean = count as f64 / n as f64;
        assert!(
            (mean - expected).abs() < 0.01 * expected,
            "mean {mean} vs compensator {expected}"
        );
    }

    #[test]
    fn doleans_closed_forms() {
        let grid = grid3();
        let tgrid = make_uniform_grid(1.0, 7).unwrap();
        let w = FeaturePath::none();
        let rec = JumpRecord {
            times: vec![0.21, 0.4, 0.83],
            marks: vec![0, 2, 1],
            initial_mark: 1,
            horizon: 1.0,
        };
        // identity control
        let one = ConstIntensity(1.0);
        for &t in &[0.0, 0.3, 0.4, 1.0] {
            let k = doleans_kappa(&rec, &grid, &one, &w, &tgrid, t).unwrap();
            assert!((k - 1.0).abs() < 1e-14, "kappa {k} at t {t}");
        }
        // constant c, no jumps before t
        let c = 0.6;
        let nu = ConstIntensity(c);
        let rec0 = JumpRecord::empty(1, 1.0);
        let k = doleans_kappa(&rec0, &grid, &nu, &w, &tgrid, 0.9).unwrap();
        let want = ((1.0 - c) * grid.total_mass() * 0.9).exp();
        assert!((k - want).abs() < 1e-12 * want, "{k} vs {want}");
        // constant c with k jumps
        let k3 = doleans_kappa(&rec, &grid, &nu, &w, &tgrid, 1.0).unwrap();
        let want3 = c.powi(3) * ((1.0 - c) * grid.total_mass()).exp();
        assert!((k3 - want3).abs() < 1e-12 * want3, "{k3} vs {want3}");
    }

    /// Martingale normalization of the Doléans exponential under the
    /// reference law.
    #[test]
    fn kappa_martingale_mean_one() {
        let grid = grid3();
        let tgrid = make_uniform_grid(1.0, 8).unwrap();
        struct Wavy {
            tgrid: TimeGrid,
        }
        impl IntensityControl for Wavy {
            fn bounds(&self) -> (f64, f64) {
                (0.25, 3.0)
            }
            fn eval_raw(&self, t: f64, h: JumpView<'_>, _: &[f64], j: usize) -> f64 {
                let k = self.tgrid.knots().partition_point(|&s| s <= t).max(1) - 1;
                let tk = self.tgrid.knot(k);
                0.8 + 0.6 * (3.0 * tk + j as f64).sin() + 0.15 * (h.times.len() as f64).min(3.0)
            }
        }
        let nu = Wavy { tgrid: tgrid.clone() };
        let w = FeaturePath::none();
        let n = 100_000;
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let mut rng = CounterRng::from_stream(23, domains::JUMPS, i as u64);
                let rec = simulate_marks_poisson(&grid, 1.0, &mut rng).unwrap();
                doleans_kappa(&rec, &grid, &nu, &w, &tgrid, 1.0).unwrap()
            })
            .collect();
        let (mean, se) = mean_stderr(&vals);
        assert!((mean - 1.0).abs() < 4.0 * se, "E[kappa] = {mean} +- {se}");
    }

    /// Girsanov consistency: reweighted functionals under the reference law
    /// agree with plain functionals under the tilted law.
    #[test]
    fn importance_sampling_consistency() {
        let grid = grid3();
        let tgrid = make_uniform_grid(1.0, 8).unwrap();
        let nu = ConstIntensity(1.6);
        let w = FeaturePath::none();
        let phi = |rec: &JumpRecord| -> f64 {
            // bounded path functional of the marks
            (rec.times.len() as f64).min(4.0) + 0.5 * (rec.mark_at(1.0) as f64)
        };
        let n = 60_000;
        let mut lhs = Vec::with_capacity(n);
        let mut rhs = Vec::with_capacity(n);
        for i in 0..n {
            let mut r1 = CounterRng::from_stream(31, domains::JUMPS, i as u64);
            let rec = simulate_marks_poisson(&grid, 1.0, &mut r1).unwrap();
            let kap = doleans_kappa(&rec, &grid, &nu, &w, &tgrid, 1.0).unwrap();
            lhs.push(kap * phi(&rec));
            let mut r2 = CounterRng::from_stream(32, domains::THINNING, i as u64);
            let rec2 = simulate_marks_controlled(&grid, 1.0, &nu, &w, &mut r2).unwrap();
            rhs.push(phi(&rec2));
        }
        let (ma, sa) = mean_stderr(&lhs);
        let (mb, sb) = mean_stderr(&rhs);
        let tol = 4.0 * crate::stats::combined_stderr(sa, sb);
        assert!((ma - mb).abs() < tol, "{ma} vs {mb} (tol {tol})");
    }

    /// Truncating the intensity from below converges: the reweighted gains
    /// of `nu ∨ eps` approach the gain of `nu` monotonically as eps shrinks.
    #[test]
    fn epsilon_floor_converges() {
        let grid = grid3();
        let tgrid = make_uniform_grid(1.0, 8).unwrap();
        struct Tiny;
        impl IntensityControl for Tiny {
            fn bounds(&self) -> (f64, f64) {
                (1e-6, 1.5)
            }
            fn eval_raw(&self, _: f64, _: JumpView<'_>, _: &[f64], j: usize) -> f64 {
                if j == 0 {
                    1e-6
                } else {
                    1.2
                }
            }
        }
        let nu = Tiny;
        let w = FeaturePath::none();
        let phi = |rec: &JumpRecord| ((rec.times.len() as f64) - 1.0).abs().min(3.0);
        let n = 40_000;
        let recs: Vec<JumpRecord> = (0..n)
            .map(|i| {
                let mut rng = CounterRng::from_stream(77, domains::JUMPS, i as u64);
                simulate_marks_poisson(&grid, 1.0, &mut rng).unwrap()
            })
            .collect();
        let gain_for = |eps: f64| -> f64 {
            let floored = FloorIntensity { inner: &nu, eps };
            let vals: Vec<f64> = recs
                .iter()
                .map(|rec| doleans_kappa(rec, &grid, &floored, &w, &tgrid, 1.0).unwrap() * phi(rec))
                .collect();
            mean_stderr(&vals).0
        };
        let base = gain_for(0.0);
        let mut prev_gap = f64::INFINITY;
        for eps in [0.1, 0.01, 0.001] {
            let gap = (gain_for(eps) - base).abs();
            assert!(gap <= prev_gap + 1e-9, "gap {gap} after {prev_gap} at eps {eps}");
            prev_gap = gap;
        }
        assert!(prev_gap < 5e-3, "final gap {prev_gap}");
    }

    #[test]
    fn timechange_identity_equals_skeleton() {
        let grid = grid3();
        let tgrid = make_uniform_grid(1.0, 4).unwrap();
        let w = FeaturePath::none();
        for i in 0..200 {
            let mut rng = CounterRng::from_stream(3, domains::JUMPS, i);
            let skel = simulate_marks_poisson(&grid, 1.0, &mut rng).unwrap();
            let mut mrng = CounterRng::from_stream(3, domains::TIMECHANGE, i);
            let out =
                construct_timechange_process(&grid, &ConstLayers(1.0), &skel, &w, &tgrid, 1.0, &mut mrng)
                    .unwrap();
            assert_eq!(out.times.len(), skel.times.len());
            for (a, b) in out.times.iter().zip(&skel.times) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn timechange_constant_rate_first_jump_law() {
        let grid = grid3();
        let tgrid = make_uniform_grid(8.0, 8).unwrap();
        let w = FeaturePath::none();
        let c = 0.5_f64;
        let total = grid.total_mass();
        // long enough that the no-jump censoring mass exp(-c*mass*T) is negligible
        let horizon = 8.0 / (c * total);
        let n = 100_000;
        let mut first = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = CounterRng::from_stream(13, domains::JUMPS, i as u64);
            let skel = simulate_marks_poisson(&grid, horizon * c.max(1.0) + 4.0, &mut rng).unwrap();
            let mut mrng = CounterRng::from_stream(13, domains::TIMECHANGE, i as u64);
            let out =
                construct_timechange_process(&grid, &ConstLayers(c), &skel, &w, &tgrid, horizon, &mut mrng)
                    .unwrap();
            first.push(*out.times.first().unwrap_or(&horizon));
        }
        // law stated by the construction: P(T_1 > t) = exp(-lambda(A) theta(t))
        let d = ks_distance_to(&mut first, |t| 1.0 - (-total * c * t.clamp(0.0, horizon)).exp());
        assert!(d < 0.01, "KS {d}");
        // cross-oracle: same law as thinning with the same constant intensity
        let mut thinned = Vec::with_capacity(n);
        let nu = ConstIntensity(c);
        for i in 0..n {
            let mut rng = CounterRng::from_stream(14, domains::THINNING, i as u64);
            let rec = simulate_marks_controlled(&grid, horizon, &nu, &w, &mut rng).unwrap();
            thinned.push(*rec.times.first().unwrap_or(&horizon));
        }
        let d2 = ks_distance_two_sample(&mut first, &mut thinned);
        assert!(d2 < ks_two_sample_threshold(n, n, 0.01), "two-sample KS {d2}");
    }

    #[test]
    fn timechange_mark_frequencies_follow_nu_lambda() {
        let grid = grid3();
        let tgrid = make_uniform_grid(2.0, 4).unwrap();
        let w = FeaturePath::none();
        // layer 0 weights nu proportional to 1, 2, 3 across the grid
        let layers = FnLayers {
            bounds: (1.0, 3.0),
            f: |_l: usize, _t: f64, _h: JumpView<'_>, _w: &[f64], j: usize| 1.0 + j as f64,
        };
        let n = 100_000;
        let mut counts = [0usize; 3];
        for i in 0..n {
            let mut rng = CounterRng::from_stream(15, domains::JUMPS, i as u64);
            let skel = simulate_marks_poisson(&grid, 6.0 + 1.0, &mut rng).unwrap();
            let mut mrng = CounterRng::from_stream(15, domains::TIMECHANGE, i as u64);
            let out =
                construct_timechange_process(&grid, &layers, &skel, &w, &tgrid, 2.0, &mut mrng).unwrap();
            if let Some(&m) = out.marks.first() {
                counts[m] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        // categorical oracle: weights nu_j * lambda_j with uniform lambda
        let want = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0];
        for j in 0..3 {
            let freq = counts[j] as f64 / total as f64;
            assert!((freq - want[j]).abs() < 0.01, "mark {j}: {freq} vs {}", want[j]);
        }
    }

    #[test]
    fn perturbed_process_distance_bound() {
        let grid = grid3();
        let horizon = 1.0;
        let m = 20u32;
        let k = 50u32;
        let step = StepControl {
            times: vec![0.0, 0.25, 0.5, 0.75],
            marks: vec![1, 0, 2, 1],
        };
        let n = 10_000;
        let mut dist = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = CounterRng::from_stream(19, domains::PERTURB, i as u64);
            let rec = construct_perturbed_process(&grid, &step, m, k, horizon, &mut rng).unwrap();
            dist.push(control_distance(&rec, &step, &grid, horizon));
        }
        let (mean, _) = mean_stderr(&dist);
        let bound = 1.0 / m as f64 + horizon / m as f64 + horizon * grid.total_mass() / k as f64;
        assert!(mean < 2.0 * bound, "distance {mean} vs bound {bound}");
    }

    #[test]
    fn perturbed_process_contains_poisson_component() {
        let grid = grid3();
        // degenerate step control: stays at the anchor forever
        let step = StepControl {
            times: vec![0.0],
            marks: vec![1],
        };
        let n = 4000;
        let mut count_sum = 0usize;
        for i in 0..n {
            let mut rng = CounterRng::from_stream(21, domains::PERTURB, i as u64);
            let rec = construct_perturbed_process(&grid, &step, 4, 1, 1.0, &mut rng).unwrap();
            // path-by-path the merged record dominates its Poisson component;
            // with no subdivision jumps it consists of exactly that component
            count_sum += rec.times.len();
        }
        let mean = count_sum as f64 / n as f64;
        // Poisson(lambda(A) * T / k) with k = 1
        assert!((mean - grid.total_mass()).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn perturbed_process_large_m_small_lag() {
        let grid = grid3();
        let step = StepControl {
            times: vec![0.0, 0.5],
            marks: vec![1, 2],
        };
        let n = 2000;
        let mut lag = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = CounterRng::from_stream(22, domains::PERTURB, i as u64);
            let rec = construct_perturbed_process(&grid, &step, 1_000_000, 1_000_000, 1.0, &mut rng).unwrap();
            // the first subdivision jump targets time 0.5
            let r1 = rec.times.iter().copied().find(|&t| t >= 0.5).unwrap_or(1.0);
            lag.push(r1 - 0.5);
        }
        let (mean, _) = mean_stderr(&lag);
        assert!(mean < 1e-4, "mean lag {mean}");
    }

    #[test]
    fn controlled_rejects_bad_bounds() {
        let grid = grid3();
        struct Bad;
        impl IntensityControl for Bad {
            fn bounds(&self) -> (f64, f64) {
                (0.0, 0.0)
            }
            fn eval_raw(&self, _: f64, _: JumpView<'_>, _: &[f64], _: usize) -> f64 {
                0.0
            }
        }
        let mut rng = CounterRng::from_seed(1);
        assert!(simulate_marks_controlled(&grid, 1.0, &Bad, &FeaturePath::none(), &mut rng).is_err());
    }
}
