//! Benchmark problems with reference solutions.

mod gooddeal;
mod quadrature;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use gooddeal::{
    gooddeal_problem, GoodDealOracle, GoodDealParams, GoodDealPde, MargrabeOracle, OracleAgreement, PdeMetadata,
    PdeSettings,
};
pub use quadrature::GaussHermite;

use crate::error::Result;
use crate::forward::{sample_marginal, ForwardModel};
use crate::problem::{BsdeProblem, ZeroDriver};
use crate::rng::{Domain, StreamFactory};
use crate::solution::Approximation;
use crate::timegrid::TimeGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OracleKind {
    ClosedForm,
    BruteForce(String),
}

/// Continuous-time solution `y = u(t, x)`, `z = v(t, x)`.
pub trait ReferenceOracle: Send + Sync {
    fn y(&self, t: f64, x: &[f64]) -> f64;
    fn z(&self, t: f64, x: &[f64], out: &mut [f64]);
    fn kind(&self) -> OracleKind;
}

/// `sin(x) e^{-(T-t)/2}`, `cos(x) e^{-(T-t)/2}`.
#[derive(Debug, Clone, Copy)]
pub struct SineOracle {
    pub horizon: f64,
}

impl ReferenceOracle for SineOracle {
    fn y(&self, t: f64, x: &[f64]) -> f64 {
        x[0].sin() * (-(self.horizon - t) / 2.0).exp()
    }

    fn z(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = x[0].cos() * (-(self.horizon - t) / 2.0).exp();
    }

    fn kind(&self) -> OracleKind {
        OracleKind::ClosedForm
    }
}

/// `E[sin(x + sqrt(T-t) N)]` and its derivative by Gauss–Hermite quadrature.
#[derive(Debug, Clone)]
pub struct SineQuadrature {
    pub horizon: f64,
    rule: GaussHermite,
}

impl SineQuadrature {
    pub fn new(horizon: f64) -> Self {
        Self { horizon, rule: GaussHermite::new(40) }
    }
}

impl ReferenceOracle for SineQuadrature {
    fn y(&self, t: f64, x: &[f64]) -> f64 {
        let s = (self.horizon - t).sqrt();
        self.rule.expect(|n| (x[0] + s * n).sin())
    }

    fn z(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let s = (self.horizon - t).sqrt();
        out[0] = self.rule.expect(|n| (x[0] + s * n).cos());
    }

    fn kind(&self) -> OracleKind {
        OracleKind::BruteForce("gauss-hermite".into())
    }
}

/// `Phi(x) = sin(x)`, `X = W` in one dimension, zero driver, `T = 1`.
/// Both `|y|` and `|z|` are bounded by 1, which sets the truncation levels.
pub fn sine_problem() -> Result<(BsdeProblem, SineOracle)> {
    let model = Arc::new(ForwardModel::brownian(vec![0.0])?);
    let p = BsdeProblem::new("sine", model, Arc::new(|x: &[f64]| x[0].sin()), Arc::new(ZeroDriver), 1.0)?
        .with_bounds(1.0, 1.0)?;
    Ok((p, SineOracle { horizon: 1.0 }))
}

/// `prod x_i` and `z_i = prod_{j != i} x_j`.
#[derive(Debug, Clone, Copy)]
pub struct ProductOracle;

impl ReferenceOracle for ProductOracle {
    fn y(&self, _: f64, x: &[f64]) -> f64 {
        x.iter().product()
    }

    fn z(&self, _: f64, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = x.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).product();
        }
    }

    fn kind(&self) -> OracleKind {
        OracleKind::ClosedForm
    }
}

/// Tensor Gauss–Hermite evaluation of `E[prod (x_i + sqrt(T-t) N_i)]` and
/// of the expectations of its partial derivatives.
#[derive(Debug, Clone)]
pub struct ProductQuadrature {
    pub horizon: f64,
    rule: GaussHermite,
}

impl ProductQuadrature {
    pub fn new(horizon: f64) -> Self {
        Self { horizon, rule: GaussHermite::new(6) }
    }
}

impl ReferenceOracle for ProductQuadrature {
    fn y(&self, t: f64, x: &[f64]) -> f64 {
        let s = (self.horizon - t).sqrt();
        self.rule.expect_nd(x.len(), |n| x.iter().zip(n).map(|(a, b)| a + s * b).product())
    }

    fn z(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let s = (self.horizon - t).sqrt();
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.rule.expect_nd(x.len(), |n| {
                x.iter().zip(n).enumerate().filter(|(j, _)| *j != i).map(|(_, (a, b))| a + s * b).product()
            });
        }
    }

    fn kind(&self) -> OracleKind {
        OracleKind::BruteForce("tensor-gauss-hermite".into())
    }
}

/// `Phi(x) = x_1 x_2 ... x_d`, `X = W` started at 0, zero driver, `T = 1`.
pub fn product_problem(d: usize) -> Result<(BsdeProblem, ProductOracle)> {
    let model = Arc::new(ForwardModel::brownian(vec![0.0; d])?);
    let p = BsdeProblem::new("product", model, Arc::new(|x: &[f64]| x.iter().product()), Arc::new(ZeroDriver), 1.0)?;
    Ok((p, ProductOracle))
}

/// Reads an oracle on the points of a grid.
pub struct OracleOnGrid<'a> {
    pub oracle: &'a dyn ReferenceOracle,
    pub grid: TimeGrid,
}

impl Approximation for OracleOnGrid<'_> {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn y(&self, i: usize, x: &[f64]) -> f64 {
        self.oracle.y(self.grid.time(i), x)
    }

    fn z(&self, i: usize, x: &[f64], out: &mut [f64]) {
        self.oracle.z(self.grid.time(i), x, out)
    }
}

/// `n` points `(t_i, X_{t_i})` with `i < N` drawn uniformly and `X` from the
/// model's own law.
pub fn marginal_points(model: &ForwardModel, grid: &TimeGrid, n: usize, seed: u64) -> Vec<(f64, Vec<f64>)> {
    let mut pick = StreamFactory::new(seed, Domain::Oracle(u32::MAX)).path(0);
    let mode = model.default_mode();
    (0..n)
        .map(|p| {
            let i = ((pick.uniform() * grid.steps() as f64) as usize).min(grid.steps() - 1);
            let x = sample_marginal(model, grid, i, 1, seed, Domain::Oracle(p as u32), mode);
            (grid.time(i), x)
        })
        .collect()
}

/// Largest deviation between two oracles over the given `(t, x)` points,
/// relative to `max(|reference|, floor)`.
pub fn max_relative_deviation(
    candidate: &dyn ReferenceOracle,
    reference: &dyn ReferenceOracle,
    points: &[(f64, Vec<f64>)],
    q: usize,
    floor: f64,
) -> (f64, f64) {
    let mut worst_y: f64 = 0.0;
    let mut worst_z: f64 = 0.0;
    let (mut za, mut zb) = (vec![0.0; q], vec![0.0; q]);
    for (t, x) in points {
        let (a, b) = (candidate.y(*t, x), reference.y(*t, x));
        worst_y = worst_y.max((a - b).abs() / b.abs().max(floor));
        candidate.z(*t, x, &mut za);
        reference.z(*t, x, &mut zb);
        for (u, v) in za.iter().zip(&zb) {
            worst_z = worst_z.max((u - v).abs() / v.abs().max(floor));
        }
    }
    (worst_y, worst_z)
}

/// Largest relative deviation between `z` and `sigma(t, x)^T grad_x y`, with
/// the gradient from central differences of step `h * max(|x_a|, 1)`.
pub fn gradient_consistency(
    oracle: &dyn ReferenceOracle,
    model: &ForwardModel,
    points: &[(f64, Vec<f64>)],
    h: f64,
    floor: f64,
) -> f64 {
    let (d, q) = (model.dim(), model.brownian_dim());
    let mut worst: f64 = 0.0;
    let mut sigma = vec![0.0; d * q];
    let mut z = vec![0.0; q];
    for (t, x) in points {
        let mut grad = vec![0.0; d];
        let mut xp = x.clone();
        for a in 0..d {
            let step = h * x[a].abs().max(1.0);
            xp[a] = x[a] + step;
            let up = oracle.y(*t, &xp);
            xp[a] = x[a] - step;
            let dn = oracle.y(*t, &xp);
            xp[a] = x[a];
            grad[a] = (up - dn) / (2.0 * step);
        }
        model.diffusion_at(*t, x, &mut sigma);
        oracle.z(*t, x, &mut z);
        for l in 0..q {
            let fd: f64 = (0..d).map(|a| sigma[a * q + l] * grad[a]).sum();
            worst = worst.max((fd - z[l]).abs() / z[l].abs().max(floor));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sine_values() {
        let o = SineOracle { horizon: 1.0 };
        assert_eq!(o.y(1.0, &[0.7]), 0.7f64.sin());
        let q = SineQuadrature::new(1.0);
        assert!(q.y(0.0, &[0.0]).abs() < 1e-13);
        let mut z = [0.0];
        q.z(0.0, &[0.0], &mut z);
        assert!((z[0] - (-0.5f64).exp()).abs() < 1e-13);
        o.z(0.3, &[std::f64::consts::FRAC_PI_2], &mut z);
        assert!(z[0].abs() < 1e-16);
    }

    #[test]
    fn product_values() {
        let o = ProductOracle;
        assert_eq!(o.y(0.5, &[1.0, 2.0, 3.0]), 6.0);
        let mut z = [0.0; 3];
        o.z(0.5, &[1.0, 2.0, 3.0], &mut z);
        assert_eq!(z, [6.0, 3.0, 2.0]);
        assert_eq!(o.y(0.0, &[0.0; 3]), 0.0);
        let q = ProductQuadrature::new(1.0);
        assert!((q.y(0.5, &[1.0, 2.0, 3.0]) - 6.0).abs() < 1e-12);
    }
}
