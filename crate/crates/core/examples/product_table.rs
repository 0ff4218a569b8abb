//! ML against single-level regression on the 3-d product payoff, with
//! affine-by-cell and indicator partitions.
//!
//! `cargo run --release --example product_table -- [paths]`

use mlbsde::config::preset;
use mlbsde::runner::run;

fn main() -> mlbsde::Result<()> {
    env_logger::init();
    let paths = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(200_000);
    let mut cfg = preset("product-3d")?;
    cfg.paths_override = Some(paths);
    let art = run(&cfg)?;
    println!("{:<16} {:>3} {:>11} {:>11}", "scheme", "k", "mse_y", "mse_z");
    for r in &art.rows {
        println!("{:<16} {:>3} {:>11.3e} {:>11.3e}", r.label, r.k, r.mse_y, r.mse_z);
    }
    Ok(())
}
