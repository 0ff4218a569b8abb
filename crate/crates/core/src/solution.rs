//! Fitted per-time-point approximations and their evaluators.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::CouplingMode;
use crate::problem::TerminalFn;
use crate::regression::FittedFunction;
use crate::timegrid::TimeGrid;

/// Anything that provides `(y_i(x), z_i(x))` on the time points of a grid.
pub trait Approximation: Sync {
    fn grid(&self) -> &TimeGrid;
    fn y(&self, i: usize, x: &[f64]) -> f64;
    fn z(&self, i: usize, x: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scheme: String,
    pub seed: u64,
    /// Path count per time point (all equal for a shared cloud).
    pub paths: Vec<usize>,
    pub mode: CouplingMode,
    pub basis_dims: Vec<usize>,
}

/// `(y^{k,M}_i, z^{k,M}_i)` for `i < 2^k`; at `i = 2^k`, `y` is the terminal
/// function itself.
#[derive(Clone)]
pub struct LevelSolution {
    pub level: usize,
    pub grid: TimeGrid,
    pub y: Vec<FittedFunction>,
    pub z: Vec<FittedFunction>,
    pub terminal: TerminalFn,
    pub provenance: Provenance,
}

impl fmt::Debug for LevelSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LevelSolution")
            .field("level", &self.level)
            .field("grid", &self.grid)
            .field("y", &self.y)
            .field("z", &self.z)
            .field("provenance", &self.provenance)
            .finish()
    }
}

impl Approximation for LevelSolution {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn y(&self, i: usize, x: &[f64]) -> f64 {
        if i == self.y.len() {
            (self.terminal)(x)
        } else {
            self.y[i].eval_scalar(x)
        }
    }

    fn z(&self, i: usize, x: &[f64], out: &mut [f64]) {
        self.z[i].eval(x, out)
    }
}

/// `(ybar_i, zbar_i)` of the zero-terminal residual equation.
#[derive(Debug, Clone)]
pub struct ResidualSolution {
    pub level: usize,
    pub grid: TimeGrid,
    pub y: Vec<FittedFunction>,
    pub z: Vec<FittedFunction>,
    pub provenance: Provenance,
}

impl ResidualSolution {
    pub fn is_zero(&self) -> bool {
        self.y.iter().chain(&self.z).all(FittedFunction::is_zero)
    }
}

impl Approximation for ResidualSolution {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn y(&self, i: usize, x: &[f64]) -> f64 {
        if i == self.y.len() {
            0.0
        } else {
            self.y[i].eval_scalar(x)
        }
    }

    fn z(&self, i: usize, x: &[f64], out: &mut [f64]) {
        self.z[i].eval(x, out)
    }
}

/// Sum of a zero-driver solution and a residual solution on one grid.
#[derive(Debug, Clone)]
pub struct SplitSolution {
    pub linear: LevelSolution,
    pub residual: ResidualSolution,
}

/// Pairs the two parts; they must live on the same grid.
pub fn assemble_split(linear: LevelSolution, residual: ResidualSolution) -> Result<SplitSolution> {
    if linear.grid != residual.grid {
        return Err(Error::InvalidGrid("split parts live on different grids".into()));
    }
    Ok(SplitSolution { linear, residual })
}

impl Approximation for SplitSolution {
    fn grid(&self) -> &TimeGrid {
        &self.linear.grid
    }

    fn y(&self, i: usize, x: &[f64]) -> f64 {
        self.linear.y(i, x) + self.residual.y(i, x)
    }

    fn z(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let q = out.len();
        let mut buf = [0.0f64; 16];
        let r = &mut buf[..q];
        self.linear.z(i, x, out);
        self.residual.z(i, x, r);
        for (o, v) in out.iter_mut().zip(r.iter()) {
            *o += v;
        }
    }
}
