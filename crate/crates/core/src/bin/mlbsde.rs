use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use mlbsde::config::{preset, ExperimentConfig, ProblemSpec, PRESETS};
use mlbsde::problems::GoodDealPde;
use mlbsde::runner::{self, compare, read_summary, write_json};
use mlbsde::schedule::{calibrate_schedule, ScheduleConstants};
use mlbsde::timegrid::GridFamily;
use mlbsde::{Error, Result};

#[derive(Parser)]
#[command(name = "mlbsde", version, about = "Multilevel regression solvers for discrete BSDEs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment TOML file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in experiment (sine, product-3d, gooddeal).
    #[arg(long)]
    preset: Option<String>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Memory budget in bytes for compact clouds.
    #[arg(long)]
    mem_budget: Option<u64>,
    /// Replace every path count by this value.
    #[arg(long)]
    paths: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(p), _) => ExperimentConfig::load(p)?,
            (None, Some(name)) => preset(name)?,
            (None, None) => return Err(Error::Config(format!("need --config or --preset ({})", PRESETS.join(", ")))),
        };
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if self.mem_budget.is_some() {
            cfg.mem_budget = self.mem_budget;
        }
        if self.paths.is_some() {
            cfg.paths_override = self.paths;
        }
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve, evaluate and write artifacts.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Error and cost ratios between two summary.csv files.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        label_a: Option<String>,
        #[arg(long)]
        label_b: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the calibrated path and basis schedule for a precision.
    Calibrate {
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        theta: f64,
        /// Final level; defaults to ceil(log2(1/epsilon)).
        #[arg(long)]
        level: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the good-deal pricing PDE and store the table.
    OracleBuild {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "oracle")]
        out: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = dispatch(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run { common, out } => {
            let cfg = common.load()?;
            let art = runner::run(&cfg)?;
            art.write(&out)?;
            println!("{:<20} {:>3} {:>12} {:>12} {:>9} {:>8}", "label", "k", "mse_y", "mse_z", "log2", "secs");
            for r in &art.rows {
                println!(
                    "{:<20} {:>3} {:>12.4e} {:>12.4e} {:>9.3} {:>8.1}",
                    r.label, r.k, r.mse_y, r.mse_z, r.log2_mse, r.seconds
                );
            }
            for (label, fit) in &art.fits {
                println!("{label}: slope {:.3}, intercept {:.3}", fit.slope, fit.intercept);
            }
            println!("plan {} -> {}", art.plan.hash, out.display());
        }
        Cmd::Compare { a, b, label_a, label_b, out } => {
            let rows = compare(&read_summary(&a)?, &read_summary(&b)?, label_a.as_deref(), label_b.as_deref())?;
            for r in &rows {
                println!(
                    "k={} {} / {}: y {:.3} z {:.3} total {:.3} cost {:.3e} / {:.3e}",
                    r.k, r.label_a, r.label_b, r.ratio_y, r.ratio_z, r.ratio_total, r.cost_a, r.cost_b
                );
            }
            if let Some(p) = out {
                write_json(&p, &rows)?;
            }
        }
        Cmd::Calibrate { epsilon, dim, theta, level, out } => {
            let k = level.unwrap_or_else(|| (1.0 / epsilon).log2().ceil().max(0.0) as usize);
            let family = GridFamily::uniform(1.0)?;
            let cal = calibrate_schedule(epsilon, dim, theta, &family, k, ScheduleConstants::default())?;
            for l in &cal.levels {
                let kmax = l.basis_sizes.iter().max().copied().unwrap_or(1);
                println!("level {:>2}: M = {:>12}, K(t0) = {:>6}, max K = {kmax}", l.level, l.paths, l.basis_sizes[0]);
            }
            let p = cal.predicted;
            println!("cost {:.3e}", cal.cost);
            println!(
                "predicted orders: ml {:.3e} mdp {:.3e} split {:.3e} lsmdp {:.3e}",
                p.multilevel, p.mdp, p.split, p.lsmdp
            );
            if let Some(o) = out {
                write_json(&o, &cal)?;
            }
        }
        Cmd::OracleBuild { common, out } => {
            let cfg = common.load()?;
            let ProblemSpec::Gooddeal { params, pde, .. } = &cfg.problem else {
                return Err(Error::Config("oracle-build needs a good-deal problem".into()));
            };
            let table = GoodDealPde::solve(*params, *pde)?;
            table.save(&out)?;
            let m = &table.meta;
            println!(
                "picard iterations {}, min slope {:.3e}, saved to {}",
                m.picard_iterations,
                m.min_slope,
                out.display()
            );
        }
    }
    Ok(())
}
