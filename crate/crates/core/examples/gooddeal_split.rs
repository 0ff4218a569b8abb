//! Good-deal bound on an exchange option: the linear part is solved by ML
//! or by single-level regression, the residual by per-time regression.
//!
//! `cargo run --release --example gooddeal_split -- [paths] [k_max]`

use mlbsde::config::preset;
use mlbsde::runner::{compare, run};

fn main() -> mlbsde::Result<()> {
    env_logger::init();
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut cfg = preset("gooddeal")?;
    cfg.paths_override = Some(*args.first().unwrap_or(&100_000));
    cfg.levels[1] = *args.get(1).unwrap_or(&4);
    let art = run(&cfg)?;
    if let Some(a) = &art.oracle {
        println!("oracle agreement: y {:.2e}, z {:.2e}, agreed {}", a.max_rel_y, a.max_rel_z, a.agreed);
    }
    for r in &art.rows {
        println!("{:<4} k={} mse_y {:.4} mse_z {:.4} ({:.1}s)", r.label, r.k, r.mse_y, r.mse_z, r.seconds);
    }
    for c in compare(&art.rows, &art.rows, Some("ML"), Some("MDP"))? {
        println!("k={} z ratio ML/MDP {:.3}", c.k, c.ratio_z);
    }
    Ok(())
}
