//! Fast invariant battery behind the CLI `check` subcommand: a condensed
//! version of the property suite, each check a pass/fail row.

use crate::bsde::{generate_batch, solve_constrained, BatchConfig, SolverConfig};
use crate::dual::{estimate_randomized_gain, GainMode, IntensityFamily};
use crate::model::make_uniform_grid;
use crate::problems;
use crate::randomizer::{
    construct_timechange_process, doleans_kappa, simulate_marks_poisson, ConstIntensity, ConstLayers,
    FeaturePath, JumpRecord,
};
use crate::rng::{domains, CounterRng};
use crate::stats::{combined_stderr, ks_distance_to, mean_stderr};

#[derive(Debug, Clone, serde::Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn run_check(
    name: &'static str,
    f: impl FnOnce() -> std::result::Result<String, String>,
) -> CheckResult {
    let start = std::time::Instant::now();
    let (passed, detail) = match f() {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    CheckResult {
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Run the invariant suite at desk scale. Deterministic given the seed.
pub fn run_invariant_suite(seed: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();

    out.push(run_check("kappa_martingale", || {
        let b = problems::by_name("bangbang1d", None).map_err(|e| e.to_string())?;
        let tgrid = make_uniform_grid(1.0, 8).map_err(|e| e.to_string())?;
        let mut rng = CounterRng::from_stream(seed, domains::SEARCH, 0);
        let fam = IntensityFamily::random(&tgrid, b.grid.len(), (0.05, 20.0), 0, &mut rng);
        let w = FeaturePath::none();
        let vals: Vec<f64> = (0..20_000u64)
            .map(|i| {
                let mut jr = CounterRng::from_stream(seed, domains::JUMPS, i);
                let rec = simulate_marks_poisson(&b.grid, 1.0, &mut jr).unwrap();
                doleans_kappa(&rec, &b.grid, &fam, &w, &tgrid, 1.0).unwrap()
            })
            .collect();
        let (m, se) = mean_stderr(&vals);
        if (m - 1.0).abs() < 4.0 * se {
            Ok(format!("E[kappa_T] = {m:.4} +- {se:.4}"))
        } else {
            Err(format!("E[kappa_T] = {m:.4} +- {se:.4}, off unity"))
        }
    }));

    out.push(run_check("girsanov_modes_agree", || {
        let b = problems::by_name("bangbang1d", None).map_err(|e| e.to_string())?;
        let tgrid = make_uniform_grid(1.0, 8).map_err(|e| e.to_string())?;
        let nu = ConstIntensity(1.6);
        let (ga, sa) =
            estimate_randomized_gain(&b.spec, &b.grid, &tgrid, &nu, 10_000, GainMode::Reweight, seed)
                .map_err(|e| e.to_string())?;
        let (gb, sb) = estimate_randomized_gain(
            &b.spec,
            &b.grid,
            &tgrid,
            &nu,
            10_000,
            GainMode::Direct,
            seed ^ 1,
        )
        .map_err(|e| e.to_string())?;
        let tol = 4.0 * combined_stderr(sa, sb);
        if (ga - gb).abs() < tol {
            Ok(format!("reweight {ga:.4} vs direct {gb:.4} (tol {tol:.4})"))
        } else {
            Err(format!("reweight {ga:.4} vs direct {gb:.4} exceeds tol {tol:.4}"))
        }
    }));

    out.push(run_check("separated_gain_identity", || {
        let b = problems::by_name("latent_portfolio", None).map_err(|e| e.to_string())?;
        let tgrid = make_uniform_grid(1.0, 16).map_err(|e| e.to_string())?;
        let mut cfg = BatchConfig::new(600, 300, seed);
        cfg.randomize_initial_mark = false;
        let batch =
            generate_batch(&b.spec, &b.grid, &tgrid, &cfg).map_err(|e| e.to_string())?;
        let (sep, s1) = mean_stderr(&batch.separated_gain);
        let (pw, s2) = mean_stderr(&batch.pathwise_gain);
        let tol = 4.0 * combined_stderr(s1, s2);
        if (sep - pw).abs() < tol {
            Ok(format!("separated {sep:.4} vs pathwise {pw:.4} (tol {tol:.4})"))
        } else {
            Err(format!("separated {sep:.4} vs pathwise {pw:.4} exceeds tol {tol:.4}"))
        }
    }));

    out.push(run_check("uncontrolled_equivalence", || {
        let b = problems::by_name("uncontrolled2d", None).map_err(|e| e.to_string())?;
        let tgrid = make_uniform_grid(1.0, 8).map_err(|e| e.to_string())?;
        let batch = generate_batch(&b.spec, &b.grid, &tgrid, &BatchConfig::new(4000, 64, seed))
            .map_err(|e| e.to_string())?;
        let sol = solve_constrained(&batch, &b.spec, &SolverConfig::default())
            .map_err(|e| e.to_string())?;
        let (mc, se) = crate::oracles::plain_mc_value(&b.spec, &b.grid, &tgrid, 20_000, seed ^ 2)
            .map_err(|e| e.to_string())?;
        let tol = 4.0 * combined_stderr(sol.y0_stderr, se) + 0.02;
        if (sol.y0 - mc).abs() < tol {
            Ok(format!("y0 {:.4} vs plain MC {mc:.4} (tol {tol:.4})", sol.y0))
        } else {
            Err(format!("y0 {:.4} vs plain MC {mc:.4} exceeds tol {tol:.4}", sol.y0))
        }
    }));

    out.push(run_check("timechange_first_jump_law", || {
        let b = problems::by_name("bangbang1d", None).map_err(|e| e.to_string())?;
        let c = 1.5;
        let total = b.grid.total_mass();
        let horizon = 8.0 / (c * total);
        let tgrid = make_uniform_grid(horizon, 8).map_err(|e| e.to_string())?;
        let w = FeaturePath::none();
        let n = 20_000u64;
        let mut first = Vec::with_capacity(n as usize);
        for i in 0..n {
            let mut jr = CounterRng::from_stream(seed, domains::JUMPS, i);
            let skel = simulate_marks_poisson(&b.grid, horizon * c + 1.0, &mut jr).unwrap();
            let mut mr = CounterRng::from_stream(seed, domains::TIMECHANGE, i);
            let rec: JumpRecord = construct_timechange_process(
                &b.grid,
                &ConstLayers(c),
                &skel,
                &w,
                &tgrid,
                horizon,
                &mut mr,
            )
            .map_err(|e| e.to_string())?;
            first.push(*rec.times.first().unwrap_or(&horizon));
        }
        let d = ks_distance_to(&mut first, |t| 1.0 - (-total * c * t.clamp(0.0, horizon)).exp());
        if d < 0.02 {
            Ok(format!("KS distance {d:.4}"))
        } else {
            Err(format!("KS distance {d:.4} above 0.02"))
        }
    }));

    out.push(run_check("doleans_closed_form", || {
        let b = problems::by_name("bangbang1d", None).map_err(|e| e.to_string())?;
        let tgrid = make_uniform_grid(1.0, 8).map_err(|e| e.to_string())?;
        let rec = JumpRecord {
            times: vec![0.3, 0.55],
            marks: vec![0, 2],
            initial_mark: 1,
            horizon: 1.0,
        };
        let c = 0.7;
        let k = doleans_kappa(&rec, &b.grid, &ConstIntensity(c), &FeaturePath::none(), &tgrid, 1.0)
            .map_err(|e| e.to_string())?;
        let want = c * c * ((1.0 - c) * b.grid.total_mass()).exp();
        if (k - want).abs() < 1e-12 * want {
            Ok(format!("kappa {k:.12} matches closed form"))
        } else {
            Err(format!("kappa {k} vs closed form {want}"))
        }
    }));

    out.push(run_check("determinism", || {
        let b = problems::by_name("uncontrolled2d", None).map_err(|e| e.to_string())?;
        let tgrid = make_uniform_grid(1.0, 6).map_err(|e| e.to_string())?;
        let run = || -> std::result::Result<f64, String> {
            let batch = generate_batch(&b.spec, &b.grid, &tgrid, &BatchConfig::new(1500, 32, seed))
                .map_err(|e| e.to_string())?;
            let sol = solve_constrained(&batch, &b.spec, &SolverConfig::default())
                .map_err(|e| e.to_string())?;
            Ok(sol.y0)
        };
        let a = run()?;
        let b2 = run()?;
        if a.to_bits() == b2.to_bits() {
            Ok(format!("y0 = {a} bit-identical across runs"))
        } else {
            Err(format!("y0 differs: {a} vs {b2}"))
        }
    }));

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_at_desk_scale() {
        let results = run_invariant_suite(7);
        for r in &results {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
        assert!(results.len() >= 6);
    }
}
