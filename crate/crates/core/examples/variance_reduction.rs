//! Variance of the raw payoff against the level-controlled response.

use mlbsde::forward::{CloudGenerator, CouplingMode};
use mlbsde::multilevel::{response_moments, solve_multilevel, LevelPlan, MultilevelOptions};
use mlbsde::problems::sine_problem;
use mlbsde::regression::{build_bases, BasisSpec};
use mlbsde::rng::Domain;
use mlbsde::timegrid::GridFamily;

fn main() -> mlbsde::Result<()> {
    let (problem, _) = sine_problem()?;
    let family = GridFamily::uniform(1.0)?;
    let (k, paths, seed) = (6, 100_000, 3);
    let mode: CouplingMode = problem.model.default_mode();
    let plans = (0..k)
        .map(|j| {
            let b = build_bases(&BasisSpec::Hermite { degree: 7 }, &problem.model, &family.grid(j), seed, mode)?.bases;
            Ok(LevelPlan { paths, bases_y: b.clone(), bases_z: b })
        })
        .collect::<mlbsde::Result<Vec<_>>>()?;
    let sols = solve_multilevel(&problem, &family, &plans, seed, &MultilevelOptions::default())?;
    let gen = CloudGenerator::new(
        problem.model.clone(),
        family.grid(k),
        Some(family.grid(k - 1)),
        paths,
        seed,
        Domain::Level(k as u32),
        mode,
    )?;
    for i in [0, 16, 32, 63] {
        let (raw, ctl) = response_moments(&problem, sols.last().unwrap(), &gen, i)?;
        println!("i={i:>2}: var raw {:.4e}, controlled {:.4e}", raw.variance(), ctl.variance());
    }
    Ok(())
}
