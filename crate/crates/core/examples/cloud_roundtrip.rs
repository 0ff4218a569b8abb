//! Stores a coupled level cloud, restores it and checks that both solve to
//! the same coefficients as the streamed generator.

use std::io::Cursor;

use mlbsde::forward::io::{dump_cloud, restore_cloud};
use mlbsde::forward::simulate_cloud;
use mlbsde::multilevel::{build_level, init_level0, LevelPlan};
use mlbsde::problems::sine_problem;
use mlbsde::regression::{build_bases, BasisSpec};
use mlbsde::timegrid::GridFamily;

fn main() -> mlbsde::Result<()> {
    let (problem, _) = sine_problem()?;
    let family = GridFamily::uniform(1.0)?;
    let (k, paths, seed) = (3, 5000, 11);
    let mode = problem.model.default_mode();
    let cloud0 = simulate_cloud(&problem.model, &family.grid(0), None, paths, seed, None)?;
    let level0 = init_level0(&problem, &cloud0, seed, mode)?;
    let mut prev = level0;
    for j in 1..=k {
        let cloud = simulate_cloud(&problem.model, &family.grid(j), Some(&family.grid(j - 1)), paths, seed, None)?;
        let mut bytes = Vec::new();
        dump_cloud(&cloud, &mut bytes)?;
        let restored = restore_cloud(Cursor::new(&bytes))?;
        let b = build_bases(&BasisSpec::Hermite { degree: 5 }, &problem.model, &family.grid(j), seed, mode)?.bases;
        let plan = LevelPlan { paths, bases_y: b.clone(), bases_z: b };
        let a = build_level(&problem, Some(&prev), &cloud, &plan, "ml", seed, mode)?;
        let r = build_level(&problem, Some(&prev), &restored, &plan, "ml", seed, mode)?;
        let same = a.y.iter().zip(&r.y).all(|(u, v)| u.coefficients() == v.coefficients());
        println!("level {j}: {} bytes, identical fit {same}", bytes.len());
        prev = a;
    }
    Ok(())
}
