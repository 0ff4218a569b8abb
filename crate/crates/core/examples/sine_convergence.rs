//! ML against single-level regression on the sine payoff, k = 2..7.
//!
//! `cargo run --release --example sine_convergence -- [seeds] [k_max]`

use std::time::Instant;

use mlbsde::evaluation::{convergence_study, global_mse};
use mlbsde::multilevel::{solve_multilevel, solve_single_level, LevelPlan, MultilevelOptions};
use mlbsde::problems::sine_problem;
use mlbsde::regression::{build_bases, BasisSpec};
use mlbsde::schedule::doubling_downward;
use mlbsde::timegrid::GridFamily;

fn main() -> mlbsde::Result<()> {
    env_logger::init();
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let seeds: Vec<u64> = (0..*args.first().unwrap_or(&3) as u64).collect();
    let k_max = *args.get(1).unwrap_or(&7);
    let (problem, oracle) = sine_problem()?;
    let family = GridFamily::uniform(1.0)?;
    let spec = BasisSpec::Hermite { degree: 7 };
    let k_basis = 8;
    let opts = MultilevelOptions::default();
    let mode = problem.model.default_mode();
    let plan = |k: usize, paths: usize, seed: u64| -> mlbsde::Result<LevelPlan> {
        let b = build_bases(&spec, &problem.model, &family.grid(k), seed, mode)?.bases;
        Ok(LevelPlan { paths, bases_y: b.clone(), bases_z: b })
    };
    let levels: Vec<usize> = (2..=k_max).collect();
    let eval_paths = 20_000;

    let t = Instant::now();
    let ml = convergence_study(&levels, &seeds, |k, seed| {
        let paths = doubling_downward(k, (40 * k_basis) << k);
        let plans = (0..=k).map(|j| plan(j, paths[j], seed)).collect::<mlbsde::Result<Vec<_>>>()?;
        let sols = solve_multilevel(&problem, &family, &plans, seed, &opts)?;
        Ok(global_mse(sols.last().unwrap(), &oracle, &problem.model, eval_paths, 1000 + seed, "ml")?.total())
    })?;
    println!("ML   slope {:.3} intercept {:.3} ({:.1?})", ml.slope, ml.intercept, t.elapsed());

    for (name, exp) in [("MDP1", 1usize), ("MDP2", 2)] {
        let t = Instant::now();
        let fit = convergence_study(&levels, &seeds, |k, seed| {
            let p = plan(k, (40 * k_basis) << (exp * k), seed)?;
            let sol = solve_single_level(&problem, &family, k, &p, seed, &opts)?;
            Ok(global_mse(&sol, &oracle, &problem.model, eval_paths, 1000 + seed, name)?.total())
        })?;
        println!("{name} slope {:.3} intercept {:.3} ({:.1?})", fit.slope, fit.intercept, t.elapsed());
        for p in &fit.points {
            println!("  k={} log2 mse {:.3}", p.level, p.log2_mse);
        }
    }
    for p in &ml.points {
        println!("  ML k={} log2 mse {:.3}", p.level, p.log2_mse);
    }
    Ok(())
}
