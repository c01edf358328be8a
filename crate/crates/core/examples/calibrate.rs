//! Scratch calibration runs for the benchmark tolerances.

use rbsde_core::bsde::{generate_batch, solve_constrained, solve_penalized, BatchConfig, SolverConfig};
use rbsde_core::model::make_uniform_grid;
use rbsde_core::oracles::{hjb_lattice_value_validated, lqg_kalman_value};
use rbsde_core::problems::{self, OracleKind};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("bangbang");
    env_logger::init();

    if which == "bangbang" {
        let b = problems::by_name("bangbang1d", None).unwrap();
        let tgrid = make_uniform_grid(1.0, 32).unwrap();
        let lat = match &b.oracle {
            OracleKind::Hjb(l) => *l,
            _ => unreachable!(),
        };
        let t0 = std::time::Instant::now();
        let (oracle, delta) = hjb_lattice_value_validated(&b.spec, &b.grid, &tgrid, lat, 0.01).unwrap();
        println!("oracle = {oracle:.6} (refinement delta {delta:.2e}) [{:?}]", t0.elapsed());

        for paths in [30_000usize, 100_000] {
            for degree in [2u32, 3] {
                let t0 = std::time::Instant::now();
                let batch = generate_batch(&b.spec, &b.grid, &tgrid, &BatchConfig::new(paths, 1, 7)).unwrap();
                let cfg = SolverConfig {
                    degree,
                    ..SolverConfig::default()
                };
                let sol = solve_constrained(&batch, &b.spec, &cfg).unwrap();
                let rel = (sol.y0 - oracle).abs() / oracle.abs();
                println!(
                    "P={paths} deg={degree}: y0 = {:.5} +- {:.5}  rel.err = {:.3}%  [{:?}]",
                    sol.y0,
                    sol.y0_stderr,
                    100.0 * rel,
                    t0.elapsed()
                );
                if paths == 100_000 && degree == 3 {
                    for lambda in [1.0, 0.75] {
                        let bl = problems::by_name("bangbang1d", Some(lambda)).unwrap();
                        let batch_l =
                            generate_batch(&bl.spec, &bl.grid, &tgrid, &BatchConfig::new(paths, 1, 7))
                                .unwrap();
                        let sol_l = solve_constrained(&batch_l, &bl.spec, &cfg).unwrap();
                        println!("  lambda={lambda}: constrained y0 = {:.5}", sol_l.y0);
                        for n in [1u32, 4, 16, 64] {
                            let pen = solve_penalized(&batch_l, &bl.spec, &cfg, n).unwrap();
                            println!(
                                "    penalized n={n}: y0 = {:.5} (gap {:+.5})",
                                pen.y0,
                                pen.y0 - sol_l.y0
                            );
                        }
                    }
                }
            }
        }
    }

    if which == "lqg" {
        let b = problems::by_name("lqg_po", None).unwrap();
        let tgrid = make_uniform_grid(1.0, 32).unwrap();
        let params = match &b.oracle {
            OracleKind::Lqg(p) => *p,
            _ => unreachable!(),
        };
        let t0 = std::time::Instant::now();
        let v = lqg_kalman_value(params, &b.grid, 256, 100_000, 13).unwrap();
        println!(
            "oracle: continuous = {:.5}, grid-projected = {:.5} +- {:.5}  [{:?}]",
            v.continuous,
            v.grid_projected,
            v.grid_projected_stderr,
            t0.elapsed()
        );
        let (paths, particles): (usize, usize) = match args.get(2).map(String::as_str) {
            Some("full") => (50_000, 2000),
            _ => (10_000, 400),
        };
        let t0 = std::time::Instant::now();
        let batch = generate_batch(&b.spec, &b.grid, &tgrid, &BatchConfig::new(paths, particles, 7)).unwrap();
        println!("batch generated [{:?}]", t0.elapsed());
        // eigen probe at knot 0
        {
            use nalgebra::DMatrix;
            use rbsde_core::bsde::{BasisSpec, Standardizer};
            let q = batch.feat_dim;
            let mut rows = vec![0.0; batch.scenarios * q];
            for p in 0..batch.scenarios {
                rows[p * q..(p + 1) * q].copy_from_slice(batch.feature_row(p, 0));
            }
            let std = Standardizer::fit(&rows, q);
            let basis = BasisSpec::new(q, 2, Some(q - 1));
            let bdim = basis.dim();
            let mut g = DMatrix::<f64>::zeros(bdim, bdim);
            let mut sf = vec![0.0; q];
            let mut bxrow = vec![0.0; bdim];
            for p in 0..batch.scenarios {
                let raw = &rows[p * q..(p + 1) * q];
                std.apply(raw, &mut sf);
                basis.eval(&sf, raw, &mut bxrow);
                for r in 0..bdim {
                    for c in 0..bdim {
                        g[(r, c)] += bxrow[r] * bxrow[c];
                    }
                }
            }
            let gmax = g.iter().cloned().fold(0.0f64, |a, v| a.max(v.abs()));
            let eig = g.clone().symmetric_eigen();
            let bad_ev = eig.eigenvalues.iter().filter(|v| !v.is_finite()).count();
            let bad_vec = eig.eigenvectors.iter().filter(|v| !v.is_finite()).count();
            println!(
                "knot0 gram max {gmax:.3e}; eig bad values {bad_ev}, bad vectors {bad_vec}; evs: {:?}",
                eig.eigenvalues.iter().take(6).collect::<Vec<_>>()
            );
        }
        let fmax = batch.features.iter().cloned().fold(0.0f64, |a, v| a.max(v.abs()));
        let fbad = batch.features.iter().filter(|v| !v.is_finite()).count();
        let gmax = batch.rho_g.iter().cloned().fold(0.0f64, |a, v| a.max(v.abs()));
        let gbad = batch.rho_g.iter().filter(|v| !v.is_finite()).count();
        let rfbad = batch.rho_f_mark.iter().filter(|v| !v.is_finite()).count();
        println!("feature max {fmax:.3e} bad {fbad}; rho_g max {gmax:.3e} bad {gbad}; rho_f bad {rfbad}");
        // feature indices for the 3-coordinate state (xbar, z, o):
        // 0..2 means, 3..8 packed covariance, 9 reference mass
        let subsets: [(&str, Option<Vec<usize>>); 3] = [
            ("all", None),
            ("mhat+var+mass", Some(vec![0, 3, 9])),
            ("mhat+var+obs+mass", Some(vec![0, 2, 3, 9])),
        ];
        for (name, subset) in subsets {
            let t1 = std::time::Instant::now();
            let cfg = SolverConfig {
                degree: 2,
                mass_scaled: true,
                feature_subset: subset,
                ..SolverConfig::default()
            };
            let sol = solve_constrained(&batch, &b.spec, &cfg).unwrap();
            println!(
                "P={paths} M={particles} subset={name}: y0 = {:.5} +- {:.5} [{:?}]",
                sol.y0,
                sol.y0_stderr,
                t1.elapsed()
            );
            println!(
                "  bracket check: {:.5} <= y0 <= {:.5}?",
                v.grid_projected - 0.05 * v.continuous.abs(),
                v.continuous + 4.0 * sol.y0_stderr
            );
        }
    }
}
