//! Solves the good-deal pricing PDE, cross-checks it against the closed
//! form and stores the table.
//!
//! `cargo run --release --example gooddeal_oracle -- [dir]`

use std::path::PathBuf;

use mlbsde::problems::{marginal_points, GoodDealOracle, GoodDealParams, GoodDealPde, PdeSettings, ReferenceOracle};
use mlbsde::timegrid::GridFamily;

fn main() -> mlbsde::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "gooddeal-table".into()));
    let params = GoodDealParams::default();
    let pde = GoodDealPde::solve(params, PdeSettings::default())?;
    pde.save(&dir)?;
    let restored = GoodDealPde::load(&dir)?;
    let model = params.model()?;
    let points = marginal_points(&model, &GridFamily::uniform(params.horizon)?.grid(5), 200, 7);
    let checked = GoodDealOracle::verify(&restored, &points, 5e-3, 1e-2)?;
    let a = &checked.agreement;
    println!("Y0 = {:.5} (closed form {:.5})", restored.y(0.0, model.x0()), checked.y(0.0, model.x0()));
    println!("max rel. deviation y {:.2e} z {:.2e}, min slope {:.2e}", a.max_rel_y, a.max_rel_z, a.min_slope);
    println!("table in {}", dir.display());
    Ok(())
}
