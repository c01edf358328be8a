//! Registry of built-in benchmark problems, selected by name from the CLI.
//! Custom coefficients are compiled in; there is no runtime expression
//! parser.

use crate::error::{Error, Result};
use crate::model::builders::{
    build_classical_po_problem, build_latent_factor_problem, RawClassicalSpec, RawLatentSpec,
};
use crate::model::{ControlGrid, GrowthBounds, ProblemSpec};
use crate::oracles::{LatticeConfig, LqgParams};
use std::sync::Arc;

/// Reference solver attached to a benchmark.
#[derive(Debug, Clone)]
pub enum OracleKind {
    PlainMc,
    Hjb(LatticeConfig),
    Lqg(LqgParams),
    None,
}

/// Per-problem solver defaults, overridable from the CLI.
#[derive(Debug, Clone, Copy)]
pub struct Defaults {
    pub steps: usize,
    pub paths: usize,
    pub particles: usize,
    pub degree: u32,
    pub lambda: f64,
    pub penalty_n: u32,
}

/// A named benchmark: spec, control grid, defaults, and its oracle.
pub struct ProblemBundle {
    pub name: &'static str,
    pub spec: ProblemSpec,
    pub grid: ControlGrid,
    pub defaults: Defaults,
    pub oracle: OracleKind,
}

pub fn names() -> &'static [&'static str] {
    &["bangbang1d", "lqg_po", "latent_portfolio", "uncontrolled2d"]
}

/// Look up a benchmark; `lambda` overrides the total intensity mass.
pub fn by_name(name: &str, lambda: Option<f64>) -> Result<ProblemBundle> {
    let mut bundle = match name {
        "bangbang1d" => bangbang1d(),
        "lqg_po" => lqg_po(),
        "latent_portfolio" => latent_portfolio(),
        "uncontrolled2d" => uncontrolled2d(),
        other => {
            return Err(Error::Validation(format!(
                "unknown problem '{other}'; available: {}",
                names().join(", ")
            )))
        }
    };
    if let Some(mass) = lambda {
        if !(mass > 0.0) {
            return Err(Error::Validation("lambda must be positive".into()));
        }
        bundle.grid = bundle.grid.with_total_mass(mass);
        bundle.defaults.lambda = mass;
    }
    Ok(bundle)
}

/// Fully observed 1-D bang-bang benchmark: `dX = I dt + dW`,
/// `A = {-1, 0, 1}`, terminal gain `-X_T^2`. The dynamic-programming lattice
/// is the reference.
fn bangbang1d() -> ProblemBundle {
    let spec = ProblemSpec {
        dim_x: 1,
        dim_v: 0,
        dim_w: 1,
        horizon: 1.0,
        drift: Arc::new(|_, _, a, out| out[0] = a[0]),
        diff_v: Arc::new(|_, _, _, _| {}),
        diff_w: Arc::new(|_, _, _, out| out[0] = 1.0),
        running_gain: Arc::new(|_, _, _| 0.0),
        terminal_gain: Arc::new(|x| -x[0] * x[0]),
        init_sampler: Arc::new(|_, out| out[0] = 0.0),
        growth_bounds: GrowthBounds {
            lipschitz: 1.0,
            gain_growth: 1.0,
            power: 2.0,
        },
        likelihood_coord: None,
    };
    ProblemBundle {
        name: "bangbang1d",
        spec,
        grid: ControlGrid::scalar_uniform(&[-1.0, 0.0, 1.0], 1, 2.0).unwrap(),
        defaults: Defaults {
            steps: 32,
            paths: 100_000,
            particles: 1,
            degree: 3,
            lambda: 2.0,
            penalty_n: 16,
        },
        oracle: OracleKind::Hjb(LatticeConfig {
            x_max: 4.0,
            nodes: 1601,
            max_substeps: 40_000,
        }),
    }
}

/// Parameters of the scalar partially observed LQG benchmark.
pub fn lqg_po_params() -> LqgParams {
    LqgParams {
        a: 0.0,
        b: 1.0,
        sigma_v: 0.5,
        h: 1.0,
        k: 1.0,
        q: 0.0,
        r: 0.5,
        q_t: 1.0,
        horizon: 1.0,
        x0_mean: 0.3,
        x0_var: 0.04,
    }
}

/// Partially observed LQG through the classical reformulation: augmented
/// state `(Xbar, Z, O)`, running gain `-r u^2`, terminal gain `-Xbar_T^2`,
/// all weighted by the density coordinate. The observation drift is clamped
/// at a large level so its ratio to the observation volatility stays bounded;
/// the clamp is inactive on any state the benchmark visits.
fn lqg_po() -> ProblemBundle {
    let p = lqg_po_params();
    let (a_coef, b_coef, sv, h, kk, r_cost, q_t) = (p.a, p.b, p.sigma_v, p.h, p.k, p.r, p.q_t);
    let (x0m, x0s) = (p.x0_mean, p.x0_var.sqrt());
    let raw = RawClassicalSpec {
        dim_xbar: 1,
        dim_obs: 1,
        dim_v: 1,
        horizon: p.horizon,
        bbar: Arc::new(move |_, x, _, a, out| out[0] = a_coef * x[0] + b_coef * a[0]),
        h: Arc::new(move |_, x, _, _, out| out[0] = h * x[0].clamp(-8.0, 8.0)),
        sigma1: Arc::new(move |_, _, _, _, out| out[0] = sv),
        sigma2: Arc::new(|_, _, _, _, out| out[0] = 0.0),
        kmat: Arc::new(move |_, _, out| out[0] = kk),
        fbar: Arc::new(move |_, _, _, a| -r_cost * a[0] * a[0]),
        gbar: Arc::new(move |x, _| -q_t * x[0] * x[0]),
        init_xbar: Arc::new(move |rng, out| out[0] = x0m + x0s * rng.normal()),
        obs_init: vec![0.0],
        kinv_h_bound: 8.0,
        growth: GrowthBounds {
            lipschitz: 8.0,
            gain_growth: 2.0,
            power: 2.0,
        },
    };
    let spec = build_classical_po_problem(raw).expect("valid benchmark");
    ProblemBundle {
        name: "lqg_po",
        spec,
        grid: ControlGrid::scalar_uniform(&[-2.0, -1.0, 0.0, 1.0, 2.0], 2, 2.0).unwrap(),
        defaults: Defaults {
            steps: 32,
            paths: 50_000,
            particles: 2000,
            degree: 2,
            lambda: 2.0,
            penalty_n: 16,
        },
        oracle: OracleKind::Lqg(p),
    }
}

/// Latent-factor portfolio benchmark: log-price observation with constant
/// volatility, an unobserved mean-reverting return factor, and a wealth
/// tracking gain. Augmented state `(Xbar, M, O, Z)`.
fn latent_portfolio() -> ProblemBundle {
    let (r_free, vol) = (0.05, 0.3);
    let (theta_m, mu_m, sig_m) = (1.0, 0.1, 0.3);
    let rho = move |m: f64| m.clamp(-0.5, 0.5);
    let raw = RawLatentSpec {
        dim_xbar: 1,
        dim_factor: 1,
        dim_obs: 1,
        dim_v: 1,
        horizon: 1.0,
        bbar: Arc::new(move |_, x, m, _, a, out| {
            out[0] = x[0] * (r_free + a[0] * (rho(m[0]) - r_free))
        }),
        sigma1: Arc::new(|_, _, _, _, _, out| out[0] = 0.0),
        sigma2: Arc::new(move |_, x, _, _, a, out| out[0] = x[0] * a[0] * vol),
        beta: Arc::new(move |_, m, out| out[0] = theta_m * (mu_m - m[0])),
        gamma1: Arc::new(move |_, _, out| out[0] = sig_m),
        gamma2: Arc::new(|_, _, out| out[0] = 0.0),
        h: Arc::new(move |_, m, _, out| out[0] = rho(m[0]) - 0.5 * vol * vol),
        kmat: Arc::new(move |_, _, out| out[0] = vol),
        fbar: Arc::new(|_, _, _, _, _| 0.0),
        gbar: Arc::new(|x, _, _| -(x[0] - 1.2) * (x[0] - 1.2)),
        init_xbar: Arc::new(|_, out| out[0] = 1.0),
        init_factor: Arc::new(|rng, out| out[0] = 0.1 + 0.2 * rng.normal()),
        obs_init: vec![0.0],
        kinv_h_bound: (0.5 + 0.5 * 0.3 * 0.3) / 0.3,
        growth: GrowthBounds {
            lipschitz: 2.0,
            gain_growth: 2.0,
            power: 2.0,
        },
    };
    let spec = build_latent_factor_problem(raw).expect("valid benchmark");
    ProblemBundle {
        name: "latent_portfolio",
        spec,
        grid: ControlGrid::scalar_uniform(&[0.0, 0.5, 1.0], 0, 2.0).unwrap(),
        defaults: Defaults {
            steps: 32,
            paths: 2000,
            particles: 2000,
            degree: 2,
            lambda: 2.0,
            penalty_n: 16,
        },
        oracle: OracleKind::None,
    }
}

/// Two-dimensional control-independent benchmark for the plain MC oracle.
fn uncontrolled2d() -> ProblemBundle {
    let spec = ProblemSpec {
        dim_x: 2,
        dim_v: 1,
        dim_w: 1,
        horizon: 1.0,
        drift: Arc::new(|_, x, _, out| {
            out[0] = -0.3 * x[0] + 0.2 * x[1];
            out[1] = -0.4 * x[1];
        }),
        diff_v: Arc::new(|_, _, _, out| {
            out[0] = 0.4;
            out[1] = 0.2;
        }),
        diff_w: Arc::new(|_, _, _, out| {
            out[0] = 0.3;
            out[1] = 0.1;
        }),
        running_gain: Arc::new(|_, x, _| 0.25 * (x[0] * x[0] + x[1])),
        terminal_gain: Arc::new(|x| x[0] * x[1] + x[0] * x[0]),
        init_sampler: Arc::new(|rng, out| {
            out[0] = 0.5 + 0.1 * rng.normal();
            out[1] = -0.2 + 0.1 * rng.normal();
        }),
        growth_bounds: GrowthBounds {
            lipschitz: 0.5,
            gain_growth: 1.0,
            power: 2.0,
        },
        likelihood_coord: None,
    };
    ProblemBundle {
        name: "uncontrolled2d",
        spec,
        grid: ControlGrid::scalar_uniform(&[0.0, 1.0], 0, 2.0).unwrap(),
        defaults: Defaults {
            steps: 16,
            paths: 20_000,
            particles: 200,
            degree: 2,
            lambda: 2.0,
            penalty_n: 16,
        },
        oracle: OracleKind::PlainMc,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_registered_problems_validate() {
        for name in names() {
            let b = by_name(name, None).unwrap();
            b.spec.validate(&b.grid).unwrap();
            assert!(b.spec.lipschitz_warnings(&b.grid, 7).is_empty(), "{name}");
        }
    }

    #[test]
    fn unknown_name_is_a_validation_error() {
        assert!(matches!(by_name("nope", None), Err(Error::Validation(_))));
    }

    #[test]
    fn lambda_override_rescales_the_grid() {
        let b = by_name("bangbang1d", Some(4.0)).unwrap();
        assert!((b.grid.total_mass() - 4.0).abs() < 1e-12);
        assert!(by_name("bangbang1d", Some(0.0)).is_err());
    }
}
