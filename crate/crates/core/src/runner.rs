//! Executes a resolved plan: solve, evaluate, fit, write artifacts.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ProblemSpec, ResolvedPlan, ResolvedRun, Scheme, SchemeSpec};
use crate::error::{Error, Result};
use crate::evaluation::{fit_log2_line, global_mse, ConvergenceFit, ConvergencePoint, ErrorReport};
use crate::forward::{simulate_per_timepoint_clouds, CouplingMode};
use crate::lsmdp::{proxy_driver, solve_lsmdp_full, solve_residual, PerTimePlan};
use crate::multilevel::{solve_multilevel, solve_single_level, LevelPlan, MultilevelOptions};
use crate::problem::BsdeProblem;
use crate::problems::{
    marginal_points, GoodDealOracle, GoodDealPde, OracleAgreement, ProductOracle, ReferenceOracle, SineOracle,
};
use crate::regression::{build_bases, BasisSpec};
use crate::solution::{assemble_split, Approximation, LevelSolution, SplitSolution};
use crate::timegrid::GridFamily;

/// Tolerance of the good-deal two-oracle agreement.
pub const ORACLE_TOLERANCE: f64 = 5e-3;

pub enum Solved {
    Level(LevelSolution),
    Split(SplitSolution),
}

impl Approximation for Solved {
    fn grid(&self) -> &crate::timegrid::TimeGrid {
        match self {
            Solved::Level(s) => s.grid(),
            Solved::Split(s) => s.grid(),
        }
    }

    fn y(&self, i: usize, x: &[f64]) -> f64 {
        match self {
            Solved::Level(s) => s.y(i, x),
            Solved::Split(s) => s.y(i, x),
        }
    }

    fn z(&self, i: usize, x: &[f64], out: &mut [f64]) {
        match self {
            Solved::Level(s) => s.z(i, x, out),
            Solved::Split(s) => s.z(i, x, out),
        }
    }
}

/// Reference solution of a configured problem, with the cross-check
/// outcome for problems that need one.
pub struct RunOracle {
    pub oracle: Box<dyn ReferenceOracle>,
    pub agreement: Option<OracleAgreement>,
}

impl RunOracle {
    pub fn verified(&self) -> bool {
        self.agreement.as_ref().is_none_or(|a| a.agreed)
    }
}

pub fn build_oracle(spec: &ProblemSpec, problem: &BsdeProblem, family: &GridFamily, k: usize) -> Result<RunOracle> {
    match spec {
        ProblemSpec::Sine => {
            Ok(RunOracle { oracle: Box::new(SineOracle { horizon: problem.horizon }), agreement: None })
        }
        ProblemSpec::Product { .. } => Ok(RunOracle { oracle: Box::new(ProductOracle), agreement: None }),
        ProblemSpec::Gooddeal { params, pde, table } => {
            let pde = match table {
                Some(dir) => {
                    let loaded = GoodDealPde::load(dir)?;
                    if loaded.meta.params != *params {
                        return Err(Error::Oracle(format!(
                            "table in {} was built for other parameters",
                            dir.display()
                        )));
                    }
                    loaded
                }
                None => GoodDealPde::solve(*params, *pde)?,
            };
            let points = marginal_points(&problem.model, &family.grid(k), 200, 0x0DDE);
            let checked = GoodDealOracle::verify(&pde, &points, ORACLE_TOLERANCE, 1e-2)?;
            let agreement = Some(checked.agreement.clone());
            Ok(RunOracle { oracle: Box::new(checked), agreement })
        }
    }
}

fn per_time_mode(mode: Option<CouplingMode>) -> Option<CouplingMode> {
    match mode {
        Some(CouplingMode::EulerCoupled) => Some(CouplingMode::EulerSubsample),
        m => m,
    }
}

fn level_plan(
    problem: &BsdeProblem,
    basis: &BasisSpec,
    family: &GridFamily,
    j: usize,
    paths: usize,
    seed: u64,
    mode: CouplingMode,
) -> Result<LevelPlan> {
    let b = build_bases(basis, &problem.model, &family.grid(j), seed, mode)?.bases;
    Ok(LevelPlan { paths, bases_y: b.clone(), bases_z: b })
}

fn check_compact_budget(k: usize, m: usize, d: usize, budget: Option<u64>) -> Result<()> {
    let needed = m as u64 * (2 * d as u64 + 1) * 8;
    match budget {
        Some(b) if needed > b => Err(Error::MemoryBudget { level: k, needed, budget: b }),
        _ => Ok(()),
    }
}

/// Solves one `(scheme, level, seed)` run.
pub fn solve_run(
    problem: &BsdeProblem,
    family: &GridFamily,
    spec: &SchemeSpec,
    run: &ResolvedRun,
    seed: u64,
    opts: &MultilevelOptions,
) -> Result<Solved> {
    let k = run.level;
    let mode = opts.mode.unwrap_or_else(|| problem.model.default_mode());
    let linear = problem.linear_part();
    let linear_solution = |p: &BsdeProblem| -> Result<LevelSolution> {
        if spec.scheme.is_multilevel() {
            let plans = (0..=k)
                .map(|j| level_plan(p, &spec.basis, family, j, run.paths[j], seed, mode))
                .collect::<Result<Vec<_>>>()?;
            Ok(solve_multilevel(p, family, &plans, seed, opts)?.pop().expect("k + 1 levels"))
        } else {
            let plan = level_plan(p, &spec.basis, family, k, run.paths[0], seed, mode)?;
            solve_single_level(p, family, k, &plan, seed, opts)
        }
    };
    let grid = family.grid(k);
    let per_time = |basis: &BasisSpec, m: usize| -> Result<(PerTimePlan, _)> {
        check_compact_budget(k, m, problem.dim(), opts.mem_budget)?;
        let b = build_bases(basis, &problem.model, &grid, seed, mode)?.bases;
        let clouds = simulate_per_timepoint_clouds(
            &problem.model,
            &grid,
            &vec![m; grid.steps()],
            seed,
            per_time_mode(opts.mode),
        )?;
        Ok((PerTimePlan { bases_y: b.clone(), bases_z: b }, clouds))
    };
    match spec.scheme {
        Scheme::Ml => Ok(Solved::Level(linear_solution(problem)?)),
        Scheme::Mdp | Scheme::Mdp2 if problem.has_zero_driver() => Ok(Solved::Level(linear_solution(problem)?)),
        Scheme::Mdp | Scheme::Mdp2 => {
            let (plan, clouds) = per_time(&spec.basis, run.residual_paths.unwrap_or(run.paths[0]))?;
            Ok(Solved::Level(solve_lsmdp_full(problem, &clouds, &plan)?))
        }
        Scheme::SplitMl | Scheme::SplitMdp => {
            let lin = Arc::new(linear_solution(&linear)?);
            let basis = spec.residual_basis.as_ref().unwrap_or(&spec.basis);
            let (plan, clouds) = per_time(basis, run.residual_paths.unwrap_or(*run.paths.last().unwrap()))?;
            let proxy = proxy_driver(problem, lin.clone());
            let residual = solve_residual(problem, &proxy, &clouds, &plan)?;
            drop(proxy);
            let lin = Arc::try_unwrap(lin).unwrap_or_else(|a| (*a).clone());
            Ok(Solved::Split(assemble_split(lin, residual)?))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub problem: String,
    pub label: String,
    pub scheme: Scheme,
    pub k: usize,
    /// Seed means.
    pub mse_y: f64,
    pub mse_z: f64,
    pub mse_y_mean: f64,
    pub total: f64,
    pub log2_mse: f64,
    pub cost: f64,
    pub seconds: f64,
    pub seeds: usize,
    pub verified: bool,
    pub plan_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledReport {
    pub label: String,
    pub report: ErrorReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub plan: ResolvedPlan,
    pub oracle: Option<OracleAgreement>,
    pub rows: Vec<SummaryRow>,
    pub fits: BTreeMap<String, ConvergenceFit>,
    pub reports: Vec<LabeledReport>,
}

/// Runs every resolved run for every seed and evaluates it on an
/// evaluation cloud shared by all schemes at the same level.
pub fn run(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let plan = cfg.resolve()?;
    let problem = cfg.problem()?;
    let family = cfg.family(problem.horizon)?;
    let opts = MultilevelOptions { mode: cfg.mode, mem_budget: cfg.mem_budget, ..Default::default() };
    let oracle = build_oracle(&cfg.problem, &problem, &family, cfg.levels[1])?;
    if !oracle.verified() {
        log::warn!("reference solution not verified; results are reported as unverified");
    }
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for run in &plan.runs {
        let spec = cfg.schemes.iter().find(|s| s.label() == run.label).expect("resolved from the config");
        let t = Instant::now();
        let mut acc = [0.0f64; 4];
        for &seed in &run.seeds {
            let solved = solve_run(&problem, &family, spec, run, seed, &opts)?;
            let r = global_mse(&solved, &*oracle.oracle, &problem.model, cfg.eval_paths, cfg.eval_seed, &run.label)?;
            log::info!("{} k={} seed={seed}: mse_y {:.4e} mse_z {:.4e}", run.label, run.level, r.mse_y, r.mse_z);
            for (a, v) in acc.iter_mut().zip([r.mse_y, r.mse_z, r.mse_y_mean, r.total()]) {
                *a += v / run.seeds.len() as f64;
            }
            reports.push(LabeledReport { label: run.label.clone(), report: r });
        }
        rows.push(SummaryRow {
            problem: problem.name.clone(),
            label: run.label.clone(),
            scheme: run.scheme,
            k: run.level,
            mse_y: acc[0],
            mse_z: acc[1],
            mse_y_mean: acc[2],
            total: acc[3],
            log2_mse: acc[3].log2(),
            cost: run.cost(),
            seconds: t.elapsed().as_secs_f64(),
            seeds: run.seeds.len(),
            verified: oracle.verified(),
            plan_hash: plan.hash.clone(),
        });
    }
    let fits = fit_rows(&rows)?;
    Ok(RunArtifacts { plan, oracle: oracle.agreement, rows, fits, reports })
}

/// log2 line per label when a label covers at least 3 levels.
pub fn fit_rows(rows: &[SummaryRow]) -> Result<BTreeMap<String, ConvergenceFit>> {
    let mut by_label: BTreeMap<String, Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        by_label.entry(r.label.clone()).or_default().push(r);
    }
    let mut fits = BTreeMap::new();
    for (label, rs) in by_label {
        if rs.len() < 3 {
            continue;
        }
        let levels: Vec<usize> = rs.iter().map(|r| r.k).collect();
        let mse: Vec<f64> = rs.iter().map(|r| r.total).collect();
        let (slope, intercept) = fit_log2_line(&levels, &mse)?;
        let points = rs
            .iter()
            .map(|r| ConvergencePoint {
                level: r.k,
                mse: r.total,
                log2_mse: r.log2_mse,
                residual: r.log2_mse - (intercept + slope * r.k as f64),
                per_seed: vec![],
            })
            .collect();
        fits.insert(label, ConvergenceFit { slope, intercept, points });
    }
    Ok(fits)
}

impl RunArtifacts {
    /// Writes `plan.json`, `summary.csv`, `errors.csv`, `fits.json` and
    /// `reports.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("plan.json"), &self.plan)?;
        write_json(&dir.join("fits.json"), &(&self.plan.hash, &self.fits, &self.oracle))?;
        write_json(&dir.join("reports.json"), &(&self.plan.hash, &self.reports))?;
        let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("errors.csv"))?;
        w.write_record(["label", "k", "seed", "i", "t", "dt", "mse_y_i", "mse_z_i", "plan_hash"])?;
        for lr in &self.reports {
            for p in &lr.report.per_time {
                w.write_record(&[
                    lr.label.clone(),
                    lr.report.level.to_string(),
                    lr.report.seed.to_string(),
                    p.i.to_string(),
                    p.t.to_string(),
                    p.dt.to_string(),
                    p.mse_y.to_string(),
                    p.mse_z.to_string(),
                    self.plan.hash.clone(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.flush()?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub k: usize,
    pub label_a: String,
    pub label_b: String,
    pub ratio_y: f64,
    pub ratio_z: f64,
    pub ratio_total: f64,
    pub cost_a: f64,
    pub cost_b: f64,
}

fn pick<'a>(rows: &'a [SummaryRow], label: Option<&str>) -> Result<Vec<&'a SummaryRow>> {
    let labels: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.label.as_str()).collect();
    let label = match label {
        Some(l) => l,
        None if labels.len() == 1 => labels.first().copied().unwrap(),
        None => return Err(Error::Config(format!("several labels present, choose one of {labels:?}"))),
    };
    let out: Vec<_> = rows.iter().filter(|r| r.label == label).collect();
    if out.is_empty() {
        return Err(Error::Config(format!("no rows labelled `{label}`")));
    }
    Ok(out)
}

/// Per-level ratios `a / b` over the levels present in both.
pub fn compare(
    a: &[SummaryRow],
    b: &[SummaryRow],
    label_a: Option<&str>,
    label_b: Option<&str>,
) -> Result<Vec<CompareRow>> {
    let (ra, rb) = (pick(a, label_a)?, pick(b, label_b)?);
    if ra[0].problem != rb[0].problem {
        return Err(Error::Config(format!("different problems: {} vs {}", ra[0].problem, rb[0].problem)));
    }
    Ok(ra
        .iter()
        .filter_map(|x| rb.iter().find(|y| y.k == x.k).map(|y| (x, y)))
        .map(|(x, y)| CompareRow {
            k: x.k,
            label_a: x.label.clone(),
            label_b: y.label.clone(),
            ratio_y: x.mse_y / y.mse_y,
            ratio_z: x.mse_z / y.mse_z,
            ratio_total: x.total / y.total,
            cost_a: x.cost,
            cost_b: y.cost,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;

    fn small_sine() -> ExperimentConfig {
        let mut c = preset("sine").unwrap();
        c.levels = [1, 3];
        c.seeds = vec![1];
        c.eval_paths = 2000;
        c.schemes.truncate(2);
        c.paths_override = Some(2000);
        c
    }

    #[test]
    fn small_run_writes_artifacts() {
        let art = run(&small_sine()).unwrap();
        assert_eq!(art.rows.len(), 6);
        assert!(art.fits.contains_key("ML") && art.fits.contains_key("MDP1"));
        let dir = tempfile::tempdir().unwrap();
        art.write(dir.path()).unwrap();
        let back = read_summary(&dir.path().join("summary.csv")).unwrap();
        assert_eq!(back.len(), 6);
        assert!(back.iter().all(|r| r.plan_hash == art.plan.hash));
        let same = compare(&back, &back, Some("ML"), Some("ML")).unwrap();
        assert!(same.iter().all(|c| c.ratio_y == 1.0 && c.ratio_z == 1.0 && c.ratio_total == 1.0));
        assert!(compare(&back, &back, None, Some("ML")).is_err());
        assert_eq!(art.rows[0].cost, 2000.0 * 3.0);
    }

    #[test]
    fn split_equals_ml_for_zero_driver() {
        let cfg = small_sine();
        let problem = cfg.problem().unwrap();
        let family = cfg.family(1.0).unwrap();
        let mut spec = cfg.schemes[0].clone();
        let plan = cfg.resolve().unwrap();
        let run = plan.runs.iter().find(|r| r.level == 2 && r.label == "ML").unwrap().clone();
        let opts = MultilevelOptions::default();
        let Solved::Level(ml) = solve_run(&problem, &family, &spec, &run, 4, &opts).unwrap() else { panic!() };
        spec.scheme = Scheme::SplitMl;
        let run = ResolvedRun { residual_paths: Some(500), scheme: Scheme::SplitMl, ..run };
        let Solved::Split(split) = solve_run(&problem, &family, &spec, &run, 4, &opts).unwrap() else { panic!() };
        assert!(split.residual.is_zero());
        let mut za = [0.0];
        let mut zb = [0.0];
        for i in 0..4 {
            for x in [-1.3, 0.2, 2.0] {
                assert_eq!(split.y(i, &[x]), ml.y(i, &[x]));
                split.z(i, &[x], &mut za);
                ml.z(i, &[x], &mut zb);
                assert_eq!(za, zb);
            }
        }
    }
}
