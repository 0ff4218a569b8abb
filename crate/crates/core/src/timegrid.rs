//! Refining families of dyadic time grids.
//!
//! Level `k` of a family has `2^k` steps on `[0, T]`. Two families are
//! supported: the uniform grid and the graded grid
//! `t_i = T - T (1 - i / 2^k)^{1/beta}`, which concentrates points near the
//! horizon. Both are nested: every point of level `k` is a point of level
//! `k + 1`, bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridKind {
    Uniform,
    Graded { beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridFamily {
    kind: GridKind,
    horizon: f64,
}

impl GridFamily {
    pub fn uniform(horizon: f64) -> Result<Self> {
        Self::new(GridKind::Uniform, horizon)
    }

    pub fn graded(horizon: f64, beta: f64) -> Result<Self> {
        Self::new(GridKind::Graded { beta }, horizon)
    }

    pub fn new(kind: GridKind, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        if let GridKind::Graded { beta } = kind {
            if !(beta > 0.0 && beta <= 1.0) {
                return Err(Error::InvalidGrid(format!("beta must lie in (0, 1], got {beta}")));
            }
        }
        Ok(Self { kind, horizon })
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Builds the `2^k + 1` points of level `k`.
    pub fn grid(&self, level: usize) -> TimeGrid {
        let n = 1usize << level;
        let t = self.horizon;
        let mut points = Vec::with_capacity(n + 1);
        for i in 0..=n {
            // i / 2^k is exact in binary floating point, so the value of a
            // shared time is identical on every level that contains it.
            let frac = i as f64 / n as f64;
            let p = match self.kind {
                GridKind::Uniform => t * frac,
                GridKind::Graded { beta: 1.0 } => t * frac,
                GridKind::Graded { beta } => t - t * (1.0 - frac).powf(1.0 / beta),
            };
            points.push(p);
        }
        points[0] = 0.0;
        points[n] = t;
        for i in 1..=n {
            if points[i] < points[i - 1] {
                points[i] = points[i - 1];
            }
        }
        TimeGrid { level, points }
    }

    /// `C_pi = sup_i Delta_i / (T - t_i)^{1 - theta_L}` and
    /// `R_pi = sup_i Delta_i / Delta_{i+1}` at level `k`.
    pub fn diagnostics(&self, level: usize, theta_l: f64) -> GridDiagnostics {
        self.grid(level).diagnostics(theta_l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridDiagnostics {
    pub c_pi: f64,
    pub r_pi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    level: usize,
    points: Vec<f64>,
}

impl TimeGrid {
    /// Grid from explicit points; requires `2^level + 1` strictly increasing
    /// points starting at 0.
    pub fn from_points(level: usize, points: Vec<f64>) -> Result<Self> {
        if points.len() != (1usize << level) + 1 {
            return Err(Error::InvalidGrid(format!("level {level} needs {} points", (1usize << level) + 1)));
        }
        if points[0] != 0.0 || points.windows(2).any(|w| !(w[1] > w[0])) || !points[points.len() - 1].is_finite() {
            return Err(Error::InvalidGrid("points must start at 0 and increase strictly".into()));
        }
        Ok(Self { level, points })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    /// Number of steps, `2^k`.
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn time(&self, i: usize) -> f64 {
        self.points[i]
    }

    pub fn horizon(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn increment(&self, i: usize) -> f64 {
        self.points[i + 1] - self.points[i]
    }

    pub fn increments(&self) -> Vec<f64> {
        self.points.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn diagnostics(&self, theta_l: f64) -> GridDiagnostics {
        let n = self.steps();
        let t = self.horizon();
        let mut c_pi: f64 = 0.0;
        let mut r_pi: f64 = 0.0;
        for i in 0..n {
            let dt = self.increment(i);
            c_pi = c_pi.max(dt / (t - self.points[i]).powf(1.0 - theta_l));
            if i + 1 < n {
                r_pi = r_pi.max(dt / self.increment(i + 1));
            }
        }
        if n == 1 {
            r_pi = 1.0;
        }
        GridDiagnostics { c_pi, r_pi }
    }

    /// Index of the point equal to `t`, if present.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let pos = self.points.partition_point(|&p| p < t);
        (pos < self.points.len() && self.points[pos] == t).then_some(pos)
    }
}

/// `alpha(i) = max { j : coarse_j <= fine_i }`, found by binary search over
/// the coarse points.
pub fn alpha(fine: &TimeGrid, coarse: &TimeGrid, i: usize) -> usize {
    let t = fine.points[i];
    coarse.points.partition_point(|&p| p <= t) - 1
}

/// The full alpha table of a fine grid against its coarse parent.
pub fn alpha_map(fine: &TimeGrid, coarse: &TimeGrid) -> Vec<usize> {
    (0..=fine.steps()).map(|i| alpha(fine, coarse, i)).collect()
}

/// For each coarse point, its index on the fine grid. Fails if the grids are
/// not nested.
pub fn embedding(fine: &TimeGrid, coarse: &TimeGrid) -> Result<Vec<usize>> {
    coarse
        .points
        .iter()
        .map(|&t| fine.index_of(t).ok_or_else(|| Error::InvalidGrid(format!("coarse time {t} missing from fine grid"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_points() {
        let g = GridFamily::uniform(1.0).unwrap().grid(2);
        assert_eq!(g.points(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn graded_half_level_one() {
        let g = GridFamily::graded(1.0, 0.5).unwrap().grid(1);
        // independent scalar evaluation: 1 - (1 - 1/2)^2
        let mid = 1.0 - 0.5f64 * 0.5;
        assert_eq!(g.points(), &[0.0, mid, 1.0]);
        assert_eq!(mid, 0.75);
    }

    #[test]
    fn graded_beta_one_is_uniform() {
        let u = GridFamily::uniform(1.0).unwrap().grid(3);
        let g = GridFamily::graded(1.0, 1.0).unwrap().grid(3);
        assert_eq!(u.points(), g.points());
    }

    #[test]
    fn invalid_beta_rejected() {
        assert!(GridFamily::graded(1.0, 0.0).is_err());
        assert!(GridFamily::graded(1.0, 1.5).is_err());
        assert!(GridFamily::graded(1.0, -0.2).is_err());
        assert!(GridFamily::uniform(0.0).is_err());
    }

    #[test]
    fn alpha_examples() {
        let fam = GridFamily::uniform(1.0).unwrap();
        assert_eq!(alpha(&fam.grid(3), &fam.grid(2), 5), 2);
        for k in 1..6 {
            let (f, c) = (fam.grid(k), fam.grid(k - 1));
            assert_eq!(alpha(&f, &c, 0), 0);
            assert_eq!(alpha(&f, &c, 1 << k), 1 << (k - 1));
        }
        let graded = GridFamily::graded(1.0, 0.5).unwrap();
        let (f, c) = (graded.grid(2), graded.grid(1));
        // t^(2)_1 = 1 - (3/4)^2 = 0.4375 < t^(1)_1 = 0.75
        assert!((f.time(1) - 0.4375).abs() < 1e-15);
        assert_eq!(alpha(&f, &c, 1), 0);
    }

    #[test]
    fn diagnostics_uniform() {
        let fam = GridFamily::uniform(1.0).unwrap();
        let d = fam.diagnostics(3, 1.0);
        assert_eq!(d.c_pi, 0.125);
        assert_eq!(d.r_pi, 1.0);
        assert_eq!(fam.diagnostics(4, 1.0).c_pi, 0.0625);
    }

    #[test]
    fn diagnostics_graded_brute_force() {
        let fam = GridFamily::graded(1.0, 0.5).unwrap();
        let d = fam.diagnostics(2, 0.5);
        // points: 1 - (1 - i/4)^2
        let pts: Vec<f64> = (0..=4).map(|i| 1.0 - (1.0 - i as f64 / 4.0).powi(2)).collect();
        let mut c: f64 = 0.0;
        let mut r: f64 = 0.0;
        for i in 0..4 {
            let dt = pts[i + 1] - pts[i];
            c = c.max(dt / (1.0 - pts[i]).sqrt());
            if i < 3 {
                r = r.max(dt / (pts[i + 2] - pts[i + 1]));
            }
        }
        assert!((d.c_pi - c).abs() < 1e-14);
        assert!((d.r_pi - r).abs() < 1e-14);
        // increments 7/16, 5/16, 3/16, 1/16
        assert!((c - 7.0 / 16.0).abs() < 1e-14);
        assert!((r - 3.0).abs() < 1e-14);
    }

    #[test]
    fn embedding_detects_non_nested() {
        let a = GridFamily::uniform(1.0).unwrap().grid(2);
        // graded beta = 0.3 puts its midpoint near 0.9008
        let b = GridFamily::graded(1.0, 0.3).unwrap().grid(1);
        assert!(embedding(&a, &b).is_err());
        let c = GridFamily::uniform(1.0).unwrap().grid(1);
        assert_eq!(embedding(&a, &c).unwrap(), vec![0, 2, 4]);
    }
}
