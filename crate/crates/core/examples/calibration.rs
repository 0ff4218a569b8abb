//! Calibrated path counts and basis sizes for a few precisions.

use mlbsde::schedule::{calibrate_schedule, ScheduleConstants};
use mlbsde::timegrid::GridFamily;

fn main() -> mlbsde::Result<()> {
    let family = GridFamily::uniform(1.0)?;
    for k in 3..=6 {
        let eps = 2f64.powi(-(k as i32));
        let cal = calibrate_schedule(eps, 1, 1.0, &family, k, ScheduleConstants::default())?;
        let paths: Vec<usize> = cal.levels.iter().map(|l| l.paths).collect();
        println!("eps 2^-{k}: M = {paths:?}");
        println!(
            "  K(t_0) = {}, cost {:.3e}, ml/mdp order {:.3}",
            cal.levels[k].basis_sizes[0],
            cal.cost,
            cal.predicted.multilevel / cal.predicted.mdp
        );
    }
    Ok(())
}
