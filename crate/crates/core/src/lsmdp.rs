//! Least-squares multistep dynamic programming on independent per-time-point
//! clouds: the residual equation of the splitting scheme (zero terminal
//! value, proxy driver) and the plain non-split scheme.
//!
//! For time point `i`, every path of cloud `C_{k,i}` is simulated from `X_i`
//! to `X_N` and reduced to the compact state `(x_i, x_{i+1}, S_{i+1})`
//! with `S_{i+1} = terminal + sum_{j>i} f_j(..) Delta_j`. `z_i` is fitted on
//! `S_{i+1} dW_i / Delta_i`, then `y_i` on `S_{i+1} + f_i(.., z_i(x_i)) Delta_i`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{TailSource, TimePointClouds};
use crate::par::ordered_reduce;
use crate::problem::{BsdeProblem, Driver, TerminalFn};
use crate::regression::{Basis, FittedFunction, NormalEquations};
use crate::solution::{LevelSolution, Provenance, ResidualSolution};
use crate::timegrid::TimeGrid;

/// `f^{(M)}_j(x_j, x_{j+1}, y, z) = f_j(x_j, y^{k,M}_{j+1}(x_{j+1}) + y, z^{k,M}_j(x_j) + z)`.
#[derive(Debug, Clone)]
pub struct ProxyDriver {
    driver: Arc<dyn Driver>,
    linear: Arc<LevelSolution>,
}

impl ProxyDriver {
    pub fn new(problem: &BsdeProblem, linear: Arc<LevelSolution>) -> Self {
        Self { driver: problem.driver.clone(), linear }
    }
}

/// Builds the proxy driver of the residual equation from a zero-driver solution.
pub fn proxy_driver(problem: &BsdeProblem, linear: Arc<LevelSolution>) -> ProxyDriver {
    ProxyDriver::new(problem, linear)
}

impl Driver for ProxyDriver {
    fn eval(&self, j: usize, t: f64, x: &[f64], x_next: &[f64], y: f64, z: &[f64]) -> f64 {
        use crate::solution::Approximation;
        let mut buf = [0.0f64; 16];
        let zz = &mut buf[..z.len()];
        self.linear.z(j, x, zz);
        for (a, b) in zz.iter_mut().zip(z) {
            *a += b;
        }
        let yy = self.linear.y(j + 1, x_next) + y;
        self.driver.eval(j, t, x, x_next, yy, zz)
    }

    fn lipschitz(&self) -> f64 {
        self.driver.lipschitz()
    }

    fn is_zero(&self) -> bool {
        self.driver.is_zero()
    }
}

/// Sufficient smallness condition for the residual scheme, reported only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallnessReport {
    pub c_pi: f64,
    pub r_pi: f64,
    pub lipschitz: f64,
    /// `C_pi L_f^2 max(R_pi, 1)`.
    pub value: f64,
    /// `1 / (384 (2q + (1+T) e^{T/2}) (1+T))`.
    pub threshold: f64,
    pub satisfied: bool,
}

pub fn smallness_report(problem: &BsdeProblem, grid: &TimeGrid) -> SmallnessReport {
    let diag = grid.diagnostics(problem.theta_l);
    let t = problem.horizon;
    let q = problem.brownian_dim() as f64;
    let l = problem.driver.lipschitz();
    let value = diag.c_pi * l * l * diag.r_pi.max(1.0);
    let threshold = 1.0 / (384.0 * (2.0 * q + (1.0 + t) * (t / 2.0).exp()) * (1.0 + t));
    SmallnessReport { c_pi: diag.c_pi, r_pi: diag.r_pi, lipschitz: l, value, threshold, satisfied: value <= threshold }
}

/// Per-time-point bases of an LSMDP run.
#[derive(Debug, Clone)]
pub struct PerTimePlan {
    pub bases_y: Vec<Arc<Basis>>,
    pub bases_z: Vec<Arc<Basis>>,
}

struct Fitted {
    y: Vec<FittedFunction>,
    z: Vec<FittedFunction>,
}

/// Evaluates the already fitted `y_j` (with `y_N` the terminal value).
fn y_at(fitted_y: &[Option<FittedFunction>], terminal: Option<&TerminalFn>, j: usize, x: &[f64]) -> f64 {
    if j == fitted_y.len() {
        terminal.map_or(0.0, |t| t(x))
    } else {
        fitted_y[j].as_ref().expect("later time points are fitted first").eval_scalar(x)
    }
}

fn solve_per_time(
    problem: &BsdeProblem,
    driver: &dyn Driver,
    terminal: Option<&TerminalFn>,
    clouds: &TimePointClouds,
    plan: &PerTimePlan,
    bounds: &dyn Fn(usize) -> (f64, f64),
) -> Result<Fitted> {
    let grid = clouds.grid().clone();
    let n = grid.steps();
    let (d, q) = (problem.dim(), problem.brownian_dim());
    if plan.bases_y.len() != n || plan.bases_z.len() != n {
        return Err(Error::Dimension(format!("{n} time points need {n} Y and Z bases")));
    }
    if (grid.horizon() - problem.horizon).abs() > 1e-12 * problem.horizon {
        return Err(Error::InvalidGrid("grid horizon differs from the problem horizon".into()));
    }
    let zero_driver = driver.is_zero();
    let mut ys: Vec<Option<FittedFunction>> = vec![None; n];
    let mut zs: Vec<Option<FittedFunction>> = vec![None; n];
    // compact per-path state: x_i, x_{i+1}, S_{i+1}
    let stride = 2 * d + 1;
    for i in (0..n).rev() {
        let cloud = clouds.cloud(i);
        let dt_i = grid.increment(i);
        let t_i = grid.time(i);
        let (cy, cz) = bounds(i);
        let bz = &plan.bases_z[i];
        let by = &plan.bases_y[i];
        let err_at = |e: Error| match e {
            Error::NonFinite { sample, .. } => Error::NonFinite { sample, time_point: Some(i) },
            other => other,
        };
        let (ne_z, compact) = ordered_reduce(
            cloud.paths(),
            || (NormalEquations::new(bz, q), Vec::new()),
            |range, (ne, store): &mut (NormalEquations, Vec<f64>)| {
                let mut p = cloud.new_path();
                let mut feats = vec![0.0; bz.block_size()];
                let mut zbuf = vec![0.0; q];
                let mut resp = vec![0.0; q];
                store.reserve(range.len() * stride);
                for m in range {
                    cloud.fill(m, &mut p);
                    let x_end = p.state(i, n, d);
                    let mut s = terminal.map_or(0.0, |t| t(x_end));
                    if !zero_driver {
                        for j in i + 1..n {
                            let xj = p.state(i, j, d);
                            let xn = p.state(i, j + 1, d);
                            zs[j].as_ref().expect("fitted").eval(xj, &mut zbuf);
                            let yn = y_at(&ys, terminal, j + 1, xn);
                            s += driver.eval(j, grid.time(j), xj, xn, yn, &zbuf) * grid.increment(j);
                        }
                    }
                    for (r, w) in resp.iter_mut().zip(&p.dw) {
                        *r = s * w / dt_i;
                    }
                    let xi = p.state(i, i, d);
                    let b = bz.features(xi, &mut feats);
                    ne.add(m, b, &feats, &resp).map_err(err_at)?;
                    store.extend_from_slice(xi);
                    store.extend_from_slice(p.state(i, i + 1, d));
                    store.push(s);
                }
                Ok(())
            },
            |(a, sa), (b, sb)| {
                a.merge(&b);
                sa.extend_from_slice(&sb);
            },
        )?;
        let z_i = FittedFunction::new(bz.clone(), ne_z.solve(), q, cz)?;
        let m_i = compact.len() / stride;
        let ne_y = ordered_reduce(
            m_i,
            || NormalEquations::new(by, 1),
            |range, ne| {
                let mut feats = vec![0.0; by.block_size()];
                let mut zbuf = vec![0.0; q];
                for m in range {
                    let rec = &compact[m * stride..(m + 1) * stride];
                    let (xi, xn, s) = (&rec[..d], &rec[d..2 * d], rec[2 * d]);
                    let mut oy = s;
                    if !zero_driver {
                        z_i.eval(xi, &mut zbuf);
                        let yn = y_at(&ys, terminal, i + 1, xn);
                        oy += driver.eval(i, t_i, xi, xn, yn, &zbuf) * dt_i;
                    }
                    let b = by.features(xi, &mut feats);
                    ne.add(m, b, &feats, &[oy]).map_err(err_at)?;
                }
                Ok(())
            },
            |a, b| a.merge(&b),
        )?;
        ys[i] = Some(FittedFunction::new(by.clone(), ne_y.solve(), 1, cy)?);
        zs[i] = Some(z_i);
        log::debug!("lsmdp time point {i}: {m_i} paths");
    }
    Ok(Fitted { y: ys.into_iter().map(Option::unwrap).collect(), z: zs.into_iter().map(Option::unwrap).collect() })
}

fn provenance(scheme: &str, clouds: &TimePointClouds, plan: &PerTimePlan) -> Provenance {
    Provenance {
        scheme: scheme.into(),
        seed: clouds.seed(),
        paths: clouds.counts().to_vec(),
        mode: clouds.mode(),
        basis_dims: plan.bases_y.iter().map(|b| b.dim()).collect(),
    }
}

/// Residual part `(ybar, zbar)` with zero terminal value and the proxy driver.
pub fn solve_residual(
    problem: &BsdeProblem,
    proxy: &ProxyDriver,
    clouds: &TimePointClouds,
    plan: &PerTimePlan,
) -> Result<ResidualSolution> {
    let grid = clouds.grid().clone();
    if proxy.linear.grid != grid {
        return Err(Error::InvalidGrid("proxy driver and residual clouds live on different grids".into()));
    }
    let report = smallness_report(problem, &grid);
    if !report.satisfied {
        log::warn!(
            "smallness condition not met at level {}: {:.3e} > {:.3e}",
            grid.level(),
            report.value,
            report.threshold
        );
    }
    let bounds = |i: usize| problem.residual_bounds(grid.time(i), grid.increment(i));
    let fitted = solve_per_time(problem, proxy, None, clouds, plan, &bounds)?;
    Ok(ResidualSolution {
        level: grid.level(),
        provenance: provenance("residual", clouds, plan),
        grid,
        y: fitted.y,
        z: fitted.z,
    })
}

/// Non-split scheme on the original equation: terminal `Phi`, raw driver,
/// bounds `C_y`, `C_z(k,i)`.
pub fn solve_lsmdp_full(problem: &BsdeProblem, clouds: &TimePointClouds, plan: &PerTimePlan) -> Result<LevelSolution> {
    let grid = clouds.grid().clone();
    let bounds = |i: usize| (problem.y_bound(), problem.z_bound(grid.time(i)));
    let fitted = solve_per_time(problem, &*problem.driver, Some(&problem.terminal), clouds, plan, &bounds)?;
    Ok(LevelSolution {
        level: grid.level(),
        provenance: provenance("lsmdp", clouds, plan),
        grid,
        y: fitted.y,
        z: fitted.z,
        terminal: problem.terminal.clone(),
    })
}
