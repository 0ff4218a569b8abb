//! Forward Markov chains and their simulation.

mod cloud;
pub mod io;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cloud::{
    sample_marginal, simulate_cloud, simulate_per_timepoint_clouds, CloudGenerator, LevelLayout, LevelPath,
    LevelSource, MaterializedTimePointCloud, SimulationCloud, TailPath, TailSource, TimePointCloud, TimePointClouds,
};

/// `(t, x, out)`: writes the drift `b(t, x)` (length `d`) into `out`.
pub type DriftFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `(t, x, out)`: writes the row-major `d x q` diffusion matrix into `out`.
pub type DiffusionFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub enum ModelKind {
    /// `X = x_0 + W`, with `d = q`.
    BrownianMotion,
    /// Componentwise `dX^a = X^a (mu_a dt + sigma_a . dW)` with `sigma` the
    /// row-major `d x q` volatility matrix.
    GeometricBrownian {
        drifts: Vec<f64>,
        vol: Vec<f64>,
    },
    EulerSde {
        drift: DriftFn,
        diffusion: DiffusionFn,
    },
}

impl fmt::Debug for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::BrownianMotion => write!(f, "BrownianMotion"),
            ModelKind::GeometricBrownian { drifts, vol } => {
                f.debug_struct("GeometricBrownian").field("drifts", drifts).field("vol", vol).finish()
            }
            ModelKind::EulerSde { .. } => write!(f, "EulerSde"),
        }
    }
}

/// How fine and coarse paths of a level are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingMode {
    /// Closed-form transitions driven by the fine increments; the coarse
    /// path is the fine path read at coarse times.
    Exact,
    /// Euler on the fine grid; coarse path is the subsample.
    EulerSubsample,
    /// Euler run separately on the coarse grid with summed fine increments.
    EulerCoupled,
}

#[derive(Debug, Clone)]
pub struct ForwardModel {
    d: usize,
    q: usize,
    x0: Vec<f64>,
    kind: ModelKind,
    half_var: Vec<f64>,
}

impl ForwardModel {
    pub fn brownian(x0: Vec<f64>) -> Result<Self> {
        if x0.is_empty() {
            return Err(Error::InvalidModel("dimension must be positive".into()));
        }
        let d = x0.len();
        Ok(Self { d, q: d, x0, kind: ModelKind::BrownianMotion, half_var: vec![] })
    }

    /// Geometric Brownian motions with `vol row a = vols[a] * factor[a]`,
    /// where `factor` is a `d x q` correlation (e.g. Cholesky) factor.
    pub fn geometric(x0: Vec<f64>, drifts: Vec<f64>, vols: Vec<f64>, factor: &[Vec<f64>]) -> Result<Self> {
        let d = x0.len();
        if d == 0 || drifts.len() != d || vols.len() != d || factor.len() != d {
            return Err(Error::InvalidModel("x0, drifts, vols and factor rows must have length d".into()));
        }
        let q = factor[0].len();
        if q == 0 || factor.iter().any(|row| row.len() != q) {
            return Err(Error::InvalidModel("correlation factor rows must all have length q > 0".into()));
        }
        if vols.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidModel("volatilities must be finite and non-negative".into()));
        }
        let mut vol = Vec::with_capacity(d * q);
        for (a, row) in factor.iter().enumerate() {
            vol.extend(row.iter().map(|c| vols[a] * c));
        }
        let half_var = (0..d).map(|a| 0.5 * vol[a * q..(a + 1) * q].iter().map(|s| s * s).sum::<f64>()).collect();
        Ok(Self { d, q, x0, kind: ModelKind::GeometricBrownian { drifts, vol }, half_var })
    }

    pub fn euler(x0: Vec<f64>, q: usize, drift: DriftFn, diffusion: DiffusionFn) -> Result<Self> {
        if x0.is_empty() || q == 0 {
            return Err(Error::InvalidModel("dimensions must be positive".into()));
        }
        Ok(Self { d: x0.len(), q, x0, kind: ModelKind::EulerSde { drift, diffusion }, half_var: vec![] })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn brownian_dim(&self) -> usize {
        self.q
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn has_exact_transitions(&self) -> bool {
        !matches!(self.kind, ModelKind::EulerSde { .. })
    }

    pub fn default_mode(&self) -> CouplingMode {
        if self.has_exact_transitions() {
            CouplingMode::Exact
        } else {
            CouplingMode::EulerSubsample
        }
    }

    pub fn check_mode(&self, mode: CouplingMode) -> Result<()> {
        if mode == CouplingMode::Exact && !self.has_exact_transitions() {
            return Err(Error::UnsupportedMode("exact transitions are not available for a general Euler SDE".into()));
        }
        Ok(())
    }

    pub(crate) fn scratch(&self) -> StepScratch {
        match self.kind {
            ModelKind::EulerSde { .. } => StepScratch { drift: vec![0.0; self.d], diff: vec![0.0; self.d * self.q] },
            _ => StepScratch::default(),
        }
    }

    pub(crate) fn ensure_scratch(&self, s: &mut StepScratch) {
        if matches!(self.kind, ModelKind::EulerSde { .. }) && s.drift.len() != self.d {
            *s = self.scratch();
        }
    }

    /// Advances `x` over `dt` given the Brownian increment `dw`.
    #[inline]
    pub(crate) fn step(&self, exact: bool, t: f64, dt: f64, x: &mut [f64], dw: &[f64], scratch: &mut StepScratch) {
        match &self.kind {
            ModelKind::BrownianMotion => {
                for (xa, w) in x.iter_mut().zip(dw) {
                    *xa += w;
                }
            }
            ModelKind::GeometricBrownian { drifts, vol } => {
                let q = self.q;
                for a in 0..self.d {
                    let row = &vol[a * q..(a + 1) * q];
                    let noise: f64 = row.iter().zip(dw).map(|(s, w)| s * w).sum();
                    if exact {
                        x[a] *= ((drifts[a] - self.half_var[a]) * dt + noise).exp();
                    } else {
                        x[a] += x[a] * (drifts[a] * dt + noise);
                    }
                }
            }
            ModelKind::EulerSde { drift, diffusion } => {
                drift(t, x, &mut scratch.drift);
                diffusion(t, x, &mut scratch.diff);
                let q = self.q;
                for a in 0..self.d {
                    let row = &scratch.diff[a * q..(a + 1) * q];
                    let noise: f64 = row.iter().zip(dw).map(|(s, w)| s * w).sum();
                    x[a] += scratch.drift[a] * dt + noise;
                }
            }
        }
    }

    /// Row-major `d x q` diffusion matrix at `(t, x)`.
    pub fn diffusion_at(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let (d, q) = (self.d, self.q);
        match &self.kind {
            ModelKind::BrownianMotion => {
                out.fill(0.0);
                for a in 0..d {
                    out[a * q + a] = 1.0;
                }
            }
            ModelKind::GeometricBrownian { vol, .. } => {
                for a in 0..d {
                    for l in 0..q {
                        out[a * q + l] = x[a] * vol[a * q + l];
                    }
                }
            }
            ModelKind::EulerSde { diffusion, .. } => diffusion(t, x, out),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct StepScratch {
    drift: Vec<f64>,
    diff: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gbm_exact_transition_scalar() {
        let m = ForwardModel::geometric(vec![1.0], vec![0.0], vec![0.5], &[vec![1.0]]).unwrap();
        let mut x = vec![2.0];
        let mut s = m.scratch();
        m.step(true, 0.0, 0.25, &mut x, &[0.0], &mut s);
        assert!((x[0] / 2.0 - (-0.03125f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(ForwardModel::geometric(vec![1.0], vec![0.0], vec![-0.1], &[vec![1.0]]).is_err());
        assert!(ForwardModel::geometric(vec![1.0, 1.0], vec![0.0], vec![0.1], &[vec![1.0]]).is_err());
        assert!(ForwardModel::geometric(vec![1.0, 1.0], vec![0.0, 0.0], vec![0.1, 0.1], &[vec![1.0, 0.0], vec![1.0]])
            .is_err());
        assert!(ForwardModel::brownian(vec![]).is_err());
    }

    #[test]
    fn exact_mode_rejected_for_euler() {
        let m = ForwardModel::euler(
            vec![0.0],
            1,
            Arc::new(|_, _, o: &mut [f64]| o[0] = 0.0),
            Arc::new(|_, _, o: &mut [f64]| o[0] = 1.0),
        )
        .unwrap();
        assert!(m.check_mode(CouplingMode::Exact).is_err());
        assert_eq!(m.default_mode(), CouplingMode::EulerSubsample);
    }
}
