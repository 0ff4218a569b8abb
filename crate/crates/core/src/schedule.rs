//! Simulation and basis-size schedules, and their cost bookkeeping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timegrid::GridFamily;

/// Proportionality constants of the calibrated schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConstants {
    pub basis: f64,
    pub final_paths: f64,
    pub lower_paths: f64,
}

impl Default for ScheduleConstants {
    fn default() -> Self {
        Self { basis: 1.0, final_paths: 1.0, lower_paths: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSchedule {
    pub level: usize,
    pub paths: usize,
    /// Target basis dimension per time point `i < 2^level`.
    pub basis_sizes: Vec<usize>,
}

/// Leading-order cost predictions, constants dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedCosts {
    /// `ln(1/eps + 1) eps^{-2-d}`.
    pub multilevel: f64,
    /// `eps^{-3-d}`.
    pub mdp: f64,
    /// `eps^{-4-d/2} ln(1/eps + 1)^d`.
    pub split: f64,
    /// `eps^{-4-d} ln(1/eps + 1)^d`.
    pub lsmdp: f64,
}

pub fn predicted_costs(epsilon: f64, d: usize) -> PredictedCosts {
    let d = d as f64;
    let l = (1.0 / epsilon + 1.0).ln();
    PredictedCosts {
        multilevel: l * epsilon.powf(-2.0 - d),
        mdp: epsilon.powf(-3.0 - d),
        split: epsilon.powf(-4.0 - d / 2.0) * l.powf(d),
        lsmdp: epsilon.powf(-4.0 - d) * l.powf(d),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub epsilon: f64,
    pub d: usize,
    pub theta: f64,
    pub constants: ScheduleConstants,
    pub levels: Vec<LevelSchedule>,
    /// `sum_j M_j 2^j`.
    pub cost: f64,
    pub predicted: PredictedCosts,
}

/// Basis dimension `ceil(c eps^{-d/2} (T - t)^{-d (1 - theta/2)})`.
pub fn basis_size(epsilon: f64, d: usize, theta: f64, remaining: f64, c: f64) -> usize {
    let d = d as f64;
    let k = c * epsilon.powf(-d / 2.0) * remaining.powf(-d * (1.0 - theta / 2.0));
    (k.ceil() as usize).max(1)
}

/// Final level: `M_k = c k 2^{kd/2} eps^{-1-d/2}`; lower levels:
/// `M_j = c j 2^{j + jd/2} eps^{-d/2}` (with `j` replaced by 1 at `j = 0`).
pub fn calibrate_schedule(
    epsilon: f64,
    d: usize,
    theta: f64,
    family: &GridFamily,
    k_final: usize,
    constants: ScheduleConstants,
) -> Result<Calibration> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Schedule(format!("precision must be positive, got {epsilon}")));
    }
    if d == 0 || !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::Schedule("need d >= 1 and theta in (0, 1]".into()));
    }
    let df = d as f64;
    let mut levels = Vec::with_capacity(k_final + 1);
    for j in 0..=k_final {
        let grid = family.grid(j);
        let jf = j.max(1) as f64;
        let m = if j == k_final {
            constants.final_paths * jf * 2f64.powf(j as f64 * df / 2.0) * epsilon.powf(-1.0 - df / 2.0)
        } else {
            constants.lower_paths * jf * 2f64.powf(j as f64 * (1.0 + df / 2.0)) * epsilon.powf(-df / 2.0)
        };
        if !(m < usize::MAX as f64 / 4.0) {
            return Err(Error::Schedule(format!("level {j} would need {m:e} paths")));
        }
        let basis_sizes = (0..grid.steps())
            .map(|i| basis_size(epsilon, d, theta, grid.horizon() - grid.time(i), constants.basis))
            .collect();
        levels.push(LevelSchedule { level: j, paths: (m.ceil() as usize).max(1), basis_sizes });
    }
    let cost = path_cost(&levels.iter().map(|l| (l.level, l.paths)).collect::<Vec<_>>());
    Ok(Calibration { epsilon, d, theta, constants, levels, cost, predicted: predicted_costs(epsilon, d) })
}

/// `sum_j M_j 2^j` over `(level, paths)` pairs.
pub fn path_cost(levels: &[(usize, usize)]) -> f64 {
    levels.iter().map(|&(j, m)| m as f64 * 2f64.powi(j as i32)).sum()
}

/// `M_k = m_final` at the final level, doubling at each lower level.
pub fn doubling_downward(k_final: usize, m_final: usize) -> Vec<usize> {
    (0..=k_final).map(|j| m_final << (k_final - j)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponent_arithmetic() {
        let fam = GridFamily::uniform(1.0).unwrap();
        let c = ScheduleConstants::default();
        let a = calibrate_schedule(2f64.powi(-6), 1, 1.0, &fam, 5, c).unwrap();
        let b = calibrate_schedule(2f64.powi(-7), 1, 1.0, &fam, 5, c).unwrap();
        let ratio = b.levels[5].paths as f64 / a.levels[5].paths as f64;
        assert!((ratio - 2f64.powf(1.5)).abs() < 1e-3, "{ratio}");
        // K at t = 0 with T = 1: eps^{-1/2}
        let k = 4;
        let e = 2f64.powi(-k);
        let s = calibrate_schedule(e, 1, 1.0, &fam, k as usize, c).unwrap();
        assert_eq!(s.levels[0].basis_sizes[0], 4);
        assert_eq!(s.levels[2].basis_sizes.len(), 4);
    }

    #[test]
    fn cost_ratio_order() {
        let e = 2f64.powi(-8);
        let p = predicted_costs(e, 1);
        let r = p.multilevel / p.mdp / (e * (1.0 / e + 1.0).ln());
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bookkeeping() {
        assert_eq!(doubling_downward(3, 10), vec![80, 40, 20, 10]);
        assert_eq!(path_cost(&[(0, 80), (1, 40), (2, 20), (3, 10)]), 320.0);
        assert!(calibrate_schedule(0.0, 1, 1.0, &GridFamily::uniform(1.0).unwrap(), 2, Default::default()).is_err());
    }
}
