//! Multilevel regression with martingale control variates for the
//! zero-driver equation, and its single-level (no control) counterpart.
//!
//! Responses of a level only involve the previous level's `z` fits, so all
//! `y_i` can be fitted before any `z_i`. Each level is processed in two
//! streamed passes over its cloud: the first accumulates the `Y` normal
//! equations of every time point, the second regenerates the paths and
//! accumulates the `Z` normal equations using the fitted, truncated `y_i`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forward::{CloudGenerator, CouplingMode, LevelPath, LevelSource};
use crate::par::{ordered_reduce, Moments};
use crate::problem::BsdeProblem;
use crate::regression::{Basis, FittedFunction, NormalEquations};
use crate::rng::Domain;
use crate::solution::{LevelSolution, Provenance};
use crate::timegrid::GridFamily;

/// Bases and path count of one level.
#[derive(Debug, Clone)]
pub struct LevelPlan {
    pub paths: usize,
    pub bases_y: Vec<Arc<Basis>>,
    pub bases_z: Vec<Arc<Basis>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MultilevelOptions {
    /// `None` uses the model default.
    pub mode: Option<CouplingMode>,
    /// Experimental: draw every level from one shared stream family
    /// instead of independent per-level clouds.
    pub experimental_reuse_clouds: bool,
    /// Store each level cloud before fitting instead of streaming it.
    pub materialize: bool,
    /// Refuse stored clouds above this many bytes.
    pub mem_budget: Option<u64>,
}


/// Bytes of a materialized level cloud.
pub fn cloud_bytes(level: usize, paths: usize, d: usize, q: usize, coarse: bool) -> u64 {
    let n = 1u64 << level;
    let mut doubles = (n + 1) * d as u64 + n * q as u64;
    if coarse {
        doubles += (n / 2 + 1) * d as u64 + n / 2 * q as u64;
    }
    doubles * paths as u64 * 8
}

struct Scratch {
    path: LevelPath,
    ctrl_suffix: Vec<f64>,
    oy: Vec<f64>,
    feats: Vec<f64>,
    zbuf: Vec<f64>,
}

fn check_level(
    problem: &BsdeProblem,
    source: &dyn LevelSource,
    plan_y: &[Arc<Basis>],
    plan_z: &[Arc<Basis>],
) -> Result<()> {
    let layout = source.layout();
    let n = layout.steps();
    if layout.d != problem.dim() || layout.q != problem.brownian_dim() {
        return Err(Error::Dimension("cloud and problem dimensions differ".into()));
    }
    if plan_y.len() != n || plan_z.len() != n {
        return Err(Error::Dimension(format!(
            "level with {n} steps got {} Y bases and {} Z bases",
            plan_y.len(),
            plan_z.len()
        )));
    }
    if (layout.fine.horizon() - problem.horizon).abs() > 1e-12 * problem.horizon {
        return Err(Error::InvalidGrid("grid horizon differs from the problem horizon".into()));
    }
    if source.paths() == 0 {
        return Err(Error::Schedule("level needs at least one path".into()));
    }
    Ok(())
}

/// Fills `oy[i]` with the `Y` responses of every time point for one path.
fn path_responses(problem: &BsdeProblem, prev: Option<&LevelSolution>, source: &dyn LevelSource, s: &mut Scratch) {
    let layout = source.layout();
    let (d, q) = (layout.d, layout.q);
    let n = layout.steps();
    let phi = (problem.terminal)(s.path.state(n, d));
    match prev {
        Some(prev) => {
            let nc = layout.coarse_steps();
            s.ctrl_suffix[nc] = 0.0;
            for j in (0..nc).rev() {
                prev.z[j].eval(s.path.coarse_state(j, d), &mut s.zbuf);
                let w = s.path.coarse_increment(j, q);
                let c: f64 = s.zbuf.iter().zip(w).map(|(a, b)| a * b).sum();
                s.ctrl_suffix[j] = s.ctrl_suffix[j + 1] + c;
            }
            for i in 0..n {
                s.oy[i] = phi - s.ctrl_suffix[layout.alpha[i] + 1];
            }
        }
        None => s.oy[..n].fill(phi),
    }
}

fn scratch_for(source: &dyn LevelSource, max_block: usize) -> Scratch {
    let layout = source.layout();
    Scratch {
        path: layout.new_path(),
        ctrl_suffix: vec![0.0; layout.coarse_steps() + 1],
        oy: vec![0.0; layout.steps()],
        feats: vec![0.0; max_block],
        zbuf: vec![0.0; layout.q],
    }
}

fn at_time(i: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { sample, .. } => Error::NonFinite { sample, time_point: Some(i) },
        other => other,
    }
}

/// `Y` responses `O_{Y,i}` of every path at time point `i` (for diagnostics).
pub fn y_responses(
    problem: &BsdeProblem,
    prev: Option<&LevelSolution>,
    source: &dyn LevelSource,
    i: usize,
) -> Result<Vec<f64>> {
    if let Some(p) = prev {
        check_prev(p, source)?;
    }
    let mut s = scratch_for(source, 1);
    let mut out = Vec::with_capacity(source.paths());
    for m in 0..source.paths() {
        source.fill(m, &mut s.path);
        path_responses(problem, prev, source, &mut s);
        out.push(s.oy[i]);
    }
    Ok(out)
}

fn check_prev(prev: &LevelSolution, source: &dyn LevelSource) -> Result<()> {
    match &source.layout().coarse {
        Some(c) if *c == prev.grid => Ok(()),
        Some(_) => Err(Error::InvalidGrid("previous level was built on a different coarse grid".into())),
        None => Err(Error::InvalidGrid("control variates need a cloud with a coarse grid".into())),
    }
}

/// One level of the scheme. With `prev = Some(..)` the responses carry the
/// control variate built from `prev.z`; with `None` they are the plain
/// single-level responses `Phi(X_N)`.
pub fn build_level(
    problem: &BsdeProblem,
    prev: Option<&LevelSolution>,
    source: &dyn LevelSource,
    plan: &LevelPlan,
    scheme: &str,
    seed: u64,
    mode: CouplingMode,
) -> Result<LevelSolution> {
    check_level(problem, source, &plan.bases_y, &plan.bases_z)?;
    if let Some(p) = prev {
        check_prev(p, source)?;
    }
    let layout = source.layout();
    let grid = layout.fine.clone();
    let (d, q, n) = (layout.d, layout.q, layout.steps());
    let m_total = source.paths();
    let max_block = plan.bases_y.iter().chain(&plan.bases_z).map(|b| b.block_size()).max().unwrap_or(1);

    let init_y = || plan.bases_y.iter().map(|b| NormalEquations::new(b, 1)).collect::<Vec<_>>();
    let ne_y = ordered_reduce(
        m_total,
        init_y,
        |range, acc: &mut Vec<NormalEquations>| {
            let mut s = scratch_for(source, max_block);
            for m in range {
                source.fill(m, &mut s.path);
                path_responses(problem, prev, source, &mut s);
                for i in 0..n {
                    let b = plan.bases_y[i].features(s.path.state(i, d), &mut s.feats);
                    acc[i].add(m, b, &s.feats, &s.oy[i..=i]).map_err(at_time(i))?;
                }
            }
            Ok(())
        },
        |a, b| a.iter_mut().zip(&b).for_each(|(x, y)| x.merge(y)),
    )?;
    let y: Vec<FittedFunction> = ne_y
        .iter()
        .enumerate()
        .map(|(i, ne)| FittedFunction::new(plan.bases_y[i].clone(), ne.solve(), 1, problem.y_bound()))
        .collect::<Result<_>>()?;

    let shared: Vec<bool> = plan.bases_y.iter().zip(&plan.bases_z).map(|(a, b)| Arc::ptr_eq(a, b)).collect();
    let init_z = || plan.bases_z.iter().map(|b| NormalEquations::new(b, q)).collect::<Vec<_>>();
    let ne_z = ordered_reduce(
        m_total,
        init_z,
        |range, acc: &mut Vec<NormalEquations>| {
            let mut s = scratch_for(source, max_block);
            let mut resp = vec![0.0; q];
            for m in range {
                source.fill(m, &mut s.path);
                path_responses(problem, prev, source, &mut s);
                for i in 0..n {
                    let x = s.path.state(i, d);
                    let mut yhat = [0.0];
                    let b = plan.bases_z[i].features(x, &mut s.feats);
                    if shared[i] {
                        y[i].eval_features(b, &s.feats, &mut yhat);
                    } else {
                        y[i].eval(x, &mut yhat);
                    }
                    let centered = (s.oy[i] - yhat[0]) / grid.increment(i);
                    for (r, w) in resp.iter_mut().zip(s.path.increment(i, q)) {
                        *r = centered * w;
                    }
                    acc[i].add(m, b, &s.feats, &resp).map_err(at_time(i))?;
                }
            }
            Ok(())
        },
        |a, b| a.iter_mut().zip(&b).for_each(|(x, y)| x.merge(y)),
    )?;
    let z: Vec<FittedFunction> = ne_z
        .iter()
        .enumerate()
        .map(|(i, ne)| FittedFunction::new(plan.bases_z[i].clone(), ne.solve(), q, problem.z_bound(grid.time(i))))
        .collect::<Result<_>>()?;

    Ok(LevelSolution {
        level: grid.level(),
        provenance: Provenance {
            scheme: scheme.to_string(),
            seed,
            paths: vec![m_total; n],
            mode,
            basis_dims: plan.bases_y.iter().map(|b| b.dim()).collect(),
        },
        grid,
        y,
        z,
        terminal: problem.terminal.clone(),
    })
}

/// Level 0: `y_0 = mean Phi(X_1)`, `z_0 = mean Phi(X_1) dW_0 / T`.
pub fn init_level0(
    problem: &BsdeProblem,
    source: &dyn LevelSource,
    seed: u64,
    mode: CouplingMode,
) -> Result<LevelSolution> {
    let layout = source.layout();
    if layout.steps() != 1 || layout.coarse.is_some() {
        return Err(Error::InvalidGrid("level 0 needs the single-step grid without a coarse grid".into()));
    }
    let q = layout.q;
    if source.paths() == 0 {
        return Err(Error::Schedule("level 0 needs at least one path".into()));
    }
    let (ne_y, ne_z) = ordered_reduce(
        source.paths(),
        || (NormalEquations::new(&Basis::Constant, 1), NormalEquations::new(&Basis::Constant, q)),
        |range, (ay, az)| {
            let mut s = scratch_for(source, 1);
            let mut resp = vec![0.0; q];
            for m in range {
                source.fill(m, &mut s.path);
                let phi = (problem.terminal)(s.path.state(1, layout.d));
                ay.add(m, Some(0), &[1.0], &[phi]).map_err(at_time(0))?;
                for (r, w) in resp.iter_mut().zip(s.path.increment(0, q)) {
                    *r = phi * w / layout.fine.increment(0);
                }
                az.add(m, Some(0), &[1.0], &resp).map_err(at_time(0))?;
            }
            Ok(())
        },
        |(ay, az), (by, bz)| {
            ay.merge(&by);
            az.merge(&bz);
        },
    )?;
    let basis = Arc::new(Basis::Constant);
    let grid = layout.fine.clone();
    Ok(LevelSolution {
        level: 0,
        y: vec![FittedFunction::new(basis.clone(), ne_y.solve(), 1, problem.y_bound())?],
        z: vec![FittedFunction::new(basis, ne_z.solve(), q, problem.z_bound(0.0))?],
        grid,
        terminal: problem.terminal.clone(),
        provenance: Provenance { scheme: "ml".into(), seed, paths: vec![source.paths()], mode, basis_dims: vec![1] },
    })
}

fn level_domain(k: usize, opts: &MultilevelOptions) -> Domain {
    if opts.experimental_reuse_clouds {
        Domain::SharedLevels
    } else {
        Domain::Level(k as u32)
    }
}

fn check_budget(k: usize, paths: usize, d: usize, q: usize, opts: &MultilevelOptions) -> Result<()> {
    if let (true, Some(budget)) = (opts.materialize, opts.mem_budget) {
        let needed = cloud_bytes(k, paths, d, q, k > 0);
        if needed > budget {
            return Err(Error::MemoryBudget { level: k, needed, budget });
        }
    }
    Ok(())
}

/// Runs the multilevel recursion for levels `0..=k_final`, one independent
/// cloud per level. `plans[k]` describes level `k`.
pub fn solve_multilevel(
    problem: &BsdeProblem,
    family: &GridFamily,
    plans: &[LevelPlan],
    seed: u64,
    opts: &MultilevelOptions,
) -> Result<Vec<LevelSolution>> {
    if plans.is_empty() {
        return Err(Error::Schedule("schedule must cover at least level 0".into()));
    }
    let mode = opts.mode.unwrap_or_else(|| problem.model.default_mode());
    if !problem.has_zero_driver() {
        return Err(Error::UnsupportedMode("the multilevel scheme solves the zero-driver part only".into()));
    }
    let (d, q) = (problem.dim(), problem.brownian_dim());
    let mut out: Vec<LevelSolution> = Vec::with_capacity(plans.len());
    for (k, plan) in plans.iter().enumerate() {
        check_budget(k, plan.paths, d, q, opts)?;
        let fine = family.grid(k);
        let coarse = (k > 0).then(|| family.grid(k - 1));
        let gen =
            CloudGenerator::new(problem.model.clone(), fine, coarse, plan.paths, seed, level_domain(k, opts), mode)?;
        let sol = if opts.materialize {
            let cloud = gen.materialize();
            level_step(problem, out.last(), &cloud, plan, seed, mode)?
        } else {
            level_step(problem, out.last(), &gen, plan, seed, mode)?
        };
        log::info!("ml level {k}: {} paths", plan.paths);
        out.push(sol);
    }
    Ok(out)
}

fn level_step(
    problem: &BsdeProblem,
    prev: Option<&LevelSolution>,
    source: &dyn LevelSource,
    plan: &LevelPlan,
    seed: u64,
    mode: CouplingMode,
) -> Result<LevelSolution> {
    match prev {
        None => init_level0(problem, source, seed, mode),
        Some(p) => build_level(problem, Some(p), source, plan, "ml", seed, mode),
    }
}

/// Single-level regression on one shared cloud: the recursion above with
/// the control terms removed. Only meaningful for a zero driver.
pub fn solve_single_level(
    problem: &BsdeProblem,
    family: &GridFamily,
    k: usize,
    plan: &LevelPlan,
    seed: u64,
    opts: &MultilevelOptions,
) -> Result<LevelSolution> {
    if !problem.has_zero_driver() {
        return Err(Error::UnsupportedMode("shared-cloud regression needs a zero driver".into()));
    }
    let mode = opts.mode.unwrap_or_else(|| problem.model.default_mode());
    check_budget(k, plan.paths, problem.dim(), problem.brownian_dim(), opts)?;
    let gen = CloudGenerator::new(
        problem.model.clone(),
        family.grid(k),
        None,
        plan.paths,
        seed,
        Domain::Level(k as u32),
        mode,
    )?;
    if opts.materialize {
        build_level(problem, None, &gen.materialize(), plan, "mdp", seed, mode)
    } else {
        build_level(problem, None, &gen, plan, "mdp", seed, mode)
    }
}

/// Sample moments of the raw payoff and of the controlled response at time
/// point `i` of a level cloud.
pub fn response_moments(
    problem: &BsdeProblem,
    prev: &LevelSolution,
    source: &dyn LevelSource,
    i: usize,
) -> Result<(Moments, Moments)> {
    check_prev(prev, source)?;
    let n = source.layout().steps();
    let d = source.layout().d;
    ordered_reduce(
        source.paths(),
        || (Moments::default(), Moments::default()),
        |range, (raw, ctl)| {
            let mut s = scratch_for(source, 1);
            for m in range {
                source.fill(m, &mut s.path);
                path_responses(problem, Some(prev), source, &mut s);
                raw.push((problem.terminal)(s.path.state(n, d)));
                ctl.push(s.oy[i]);
            }
            Ok(())
        },
        |(a, b), (c, e)| {
            a.merge(&c);
            b.merge(&e);
        },
    )
}
