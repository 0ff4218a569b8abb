//! Good-deal valuation bound of the exchange payoff `(H_T - S_T)^+` with
//! driver `h |z_2|`.
//!
//! Two independent reference solutions:
//! * `MargrabeOracle`: if `z_2 >= 0` the driver is linear and the price is an
//!   exchange option with the orthogonal Brownian drift shifted by `h`.
//! * `GoodDealPde`: the full nonlinear equation in the reduced variable
//!   `u = S g(tau, ln(H/S))`,
//!   `g_tau = s^2/2 g'' + (gamma - s^2/2) g' + kappa |g'|`,
//!   solved by Crank–Nicolson with implicit start-up steps and a Picard
//!   iteration on `sign(g')`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{max_relative_deviation, OracleKind, ReferenceOracle};
use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::problem::{AbsZDriver, BsdeProblem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoodDealParams {
    pub sigma_s: f64,
    pub sigma_h: f64,
    pub rho: f64,
    /// Drift of `H`; `S` has zero drift.
    pub gamma: f64,
    pub h: f64,
    pub horizon: f64,
    pub s0: f64,
    pub h0: f64,
}

impl Default for GoodDealParams {
    fn default() -> Self {
        Self { sigma_s: 0.5, sigma_h: 0.5, rho: 0.6, gamma: 0.1, h: 0.2, horizon: 1.0, s0: 1.0, h0: 1.0 }
    }
}

impl GoodDealParams {
    fn orth(&self) -> f64 {
        (1.0 - self.rho * self.rho).sqrt()
    }

    /// Volatility of `ln(H/S)`.
    pub fn spread_vol(&self) -> f64 {
        (self.sigma_s.powi(2) + self.sigma_h.powi(2) - 2.0 * self.rho * self.sigma_s * self.sigma_h).sqrt()
    }

    /// `h sigma_H sqrt(1 - rho^2)`.
    pub fn kappa(&self) -> f64 {
        self.h * self.sigma_h * self.orth()
    }

    /// Drift of `H` under the shifted measure.
    pub fn shifted_drift(&self) -> f64 {
        self.gamma + self.kappa()
    }

    fn validate(&self) -> Result<()> {
        let ok = self.sigma_s > 0.0
            && self.sigma_h > 0.0
            && self.rho.abs() < 1.0
            && self.horizon > 0.0
            && self.s0 > 0.0
            && self.h0 > 0.0
            && self.h >= 0.0
            && self.gamma.is_finite();
        if ok && self.spread_vol() > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!("bad good-deal parameters {self:?}")))
        }
    }

    /// `X = (S, H)` as correlated geometric Brownian motions.
    pub fn model(&self) -> Result<ForwardModel> {
        self.validate()?;
        ForwardModel::geometric(
            vec![self.s0, self.h0],
            vec![0.0, self.gamma],
            vec![self.sigma_s, self.sigma_h],
            &[vec![1.0, 0.0], vec![self.rho, self.orth()]],
        )
    }

    pub fn problem(&self) -> Result<BsdeProblem> {
        let model = Arc::new(self.model()?);
        BsdeProblem::new(
            "gooddeal",
            model,
            Arc::new(|x: &[f64]| (x[1] - x[0]).max(0.0)),
            Arc::new(AbsZDriver { h: self.h, component: 1 }),
            self.horizon,
        )
    }

    /// `z` from the reduced value `g` and slope `g'` at `(S, .)`.
    fn z_from(&self, s: f64, g: f64, gp: f64, out: &mut [f64]) {
        out[0] = self.sigma_s * s * (g - gp) + self.rho * self.sigma_h * s * gp;
        out[1] = self.orth() * self.sigma_h * s * gp;
    }
}

/// Problem with the default parameters and its closed-form candidate.
pub fn gooddeal_problem() -> Result<(BsdeProblem, MargrabeOracle)> {
    let params = GoodDealParams::default();
    Ok((params.problem()?, MargrabeOracle::new(params)))
}

#[derive(Debug, Clone)]
pub struct MargrabeOracle {
    pub params: GoodDealParams,
    normal: Normal,
}

impl MargrabeOracle {
    pub fn new(params: GoodDealParams) -> Self {
        Self { params, normal: Normal::standard() }
    }

    /// `(g, g')` at `tau > 0`.
    fn reduced(&self, tau: f64, xi: f64) -> (f64, f64) {
        let p = &self.params;
        let (mu, sig) = (p.shifted_drift(), p.spread_vol());
        if tau <= 0.0 {
            let e = xi.exp();
            return if xi > 0.0 { (e - 1.0, e) } else { (0.0, 0.0) };
        }
        let sd = sig * tau.sqrt();
        let d1 = (xi + mu * tau + 0.5 * sd * sd) / sd;
        let d2 = d1 - sd;
        let fwd = (xi + mu * tau).exp();
        let n1 = self.normal.cdf(d1);
        (fwd * n1 - self.normal.cdf(d2), fwd * n1)
    }
}

impl ReferenceOracle for MargrabeOracle {
    fn y(&self, t: f64, x: &[f64]) -> f64 {
        let (g, _) = self.reduced(self.params.horizon - t, (x[1] / x[0]).ln());
        x[0] * g
    }

    fn z(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let (g, gp) = self.reduced(self.params.horizon - t, (x[1] / x[0]).ln());
        self.params.z_from(x[0], g, gp, out);
    }

    fn kind(&self) -> OracleKind {
        OracleKind::ClosedForm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeSettings {
    /// Domain `[-L, L]` in `ln(H/S)`.
    pub half_width: f64,
    pub space_steps: usize,
    /// Time levels at `tau_j = T (j/n)^2`.
    pub time_steps: usize,
    /// Fully implicit start-up steps.
    pub implicit_steps: usize,
    pub max_picard: usize,
}

impl Default for PdeSettings {
    fn default() -> Self {
        Self { half_width: 5.0, space_steps: 4000, time_steps: 400, implicit_steps: 4, max_picard: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeMetadata {
    pub params: GoodDealParams,
    pub settings: PdeSettings,
    /// Largest Picard iteration count over all steps.
    pub picard_iterations: usize,
    pub min_slope: f64,
}

/// Reduced value `g` on a `(tau, xi)` table.
#[derive(Debug, Clone)]
pub struct GoodDealPde {
    pub meta: PdeMetadata,
    taus: Vec<f64>,
    xis: Vec<f64>,
    /// `g[j * nx + l]`.
    g: Vec<f64>,
}

fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64], work: &mut [f64]) {
    let n = diag.len();
    work[0] = upper[0] / diag[0];
    rhs[0] /= diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * work[i - 1];
        work[i] = upper[i] / m;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= work[i] * rhs[i + 1];
    }
}

impl GoodDealPde {
    pub fn solve(params: GoodDealParams, settings: PdeSettings) -> Result<Self> {
        params.validate()?;
        let PdeSettings { half_width: lw, space_steps: nx, time_steps: nt, implicit_steps, max_picard } = settings;
        if nx < 4 || nt < 1 || !(lw > 0.0) {
            return Err(Error::Oracle(format!("bad PDE settings {settings:?}")));
        }
        let big_t = params.horizon;
        let dx = 2.0 * lw / nx as f64;
        let xis: Vec<f64> = (0..=nx).map(|l| -lw + l as f64 * dx).collect();
        let taus: Vec<f64> = (0..=nt).map(|j| big_t * (j as f64 / nt as f64).powi(2)).collect();
        let a = 0.5 * params.spread_vol().powi(2);
        let (b0, kappa, mu) = (params.gamma - a, params.kappa(), params.shifted_drift());
        let upper_bc = |tau: f64| (lw + mu * tau).exp() - 1.0;

        let n_in = nx - 1;
        let mut g: Vec<f64> = Vec::with_capacity((nt + 1) * (nx + 1));
        g.extend(xis.iter().map(|x| (x.exp() - 1.0).max(0.0)));
        let (mut lo, mut di, mut up) = (vec![0.0; n_in], vec![0.0; n_in], vec![0.0; n_in]);
        let (mut rhs, mut work) = (vec![0.0; n_in], vec![0.0; n_in]);
        let mut sign = vec![1.0; n_in];
        let mut next = vec![0.0; nx + 1];
        let mut worst_picard = 0;
        // coefficients of L at interior node l for a given drift b:
        // (a/dx^2 - b/2dx) g_{l-1} - 2a/dx^2 g_l + (a/dx^2 + b/2dx) g_{l+1}
        let coef = |b: f64| (a / (dx * dx) - b / (2.0 * dx), -2.0 * a / (dx * dx), a / (dx * dx) + b / (2.0 * dx));
        for j in 1..=nt {
            let dt = taus[j] - taus[j - 1];
            let theta = if j <= implicit_steps { 1.0 } else { 0.5 };
            let prev = g[(j - 1) * (nx + 1)..j * (nx + 1)].to_vec();
            for l in 1..nx {
                sign[l - 1] = if prev[l + 1] >= prev[l - 1] { 1.0 } else { -1.0 };
            }
            let mut iterations = 0;
            loop {
                iterations += 1;
                next[0] = 0.0;
                next[nx] = upper_bc(taus[j]);
                for l in 1..nx {
                    let (cl, cc, cu) = coef(b0 + kappa * sign[l - 1]);
                    let explicit = prev[l] + (1.0 - theta) * dt * (cl * prev[l - 1] + cc * prev[l] + cu * prev[l + 1]);
                    let k = l - 1;
                    lo[k] = -theta * dt * cl;
                    di[k] = 1.0 - theta * dt * cc;
                    up[k] = -theta * dt * cu;
                    rhs[k] = explicit;
                }
                rhs[0] -= lo[0] * next[0];
                rhs[n_in - 1] -= up[n_in - 1] * next[nx];
                thomas(&lo, &di, &up, &mut rhs, &mut work);
                next[1..nx].copy_from_slice(&rhs);
                let mut changed = false;
                for l in 1..nx {
                    let s = if next[l + 1] >= next[l - 1] { 1.0 } else { -1.0 };
                    if s != sign[l - 1] {
                        sign[l - 1] = s;
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
                if iterations >= max_picard {
                    return Err(Error::Oracle(format!("Picard iteration did not settle at step {j}")));
                }
            }
            worst_picard = worst_picard.max(iterations);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Oracle(format!("non-finite PDE value at step {j}")));
            }
            g.extend_from_slice(&next);
        }
        let mut pde = Self {
            meta: PdeMetadata { params, settings, picard_iterations: worst_picard, min_slope: 0.0 },
            taus,
            xis,
            g,
        };
        pde.meta.min_slope = pde.min_slope();
        Ok(pde)
    }

    /// Smallest central-difference slope over `tau > 0`, relative to `g`'s scale.
    fn min_slope(&self) -> f64 {
        let nx = self.xis.len();
        let dx = self.xis[1] - self.xis[0];
        let mut worst = f64::INFINITY;
        for j in 1..self.taus.len() {
            let row = &self.g[j * nx..(j + 1) * nx];
            for l in 1..nx - 1 {
                worst = worst.min((row[l + 1] - row[l - 1]) / (2.0 * dx));
            }
        }
        worst
    }

    fn row_eval(&self, j: usize, xi: f64) -> (f64, f64) {
        let nx = self.xis.len();
        let row = &self.g[j * nx..(j + 1) * nx];
        let (lw, dx) = (-self.xis[0], self.xis[1] - self.xis[0]);
        let mu = self.meta.params.shifted_drift();
        let tau = self.taus[j];
        if xi <= -lw {
            return (0.0, 0.0);
        }
        if xi >= lw {
            let e = (xi + mu * tau).exp();
            return (e - 1.0, e);
        }
        let pos = ((xi + lw) / dx).min((nx - 1) as f64 - 1e-12);
        let l = pos as usize;
        let w = pos - l as f64;
        let val = row[l] * (1.0 - w) + row[l + 1] * w;
        let slope_at = |k: usize| {
            if k == 0 {
                (row[1] - row[0]) / dx
            } else if k == nx - 1 {
                (row[k] - row[k - 1]) / dx
            } else {
                (row[k + 1] - row[k - 1]) / (2.0 * dx)
            }
        };
        (val, slope_at(l) * (1.0 - w) + slope_at(l + 1) * w)
    }

    /// `(g, g')` at `(tau, xi)`, linear in both directions.
    pub fn reduced(&self, tau: f64, xi: f64) -> (f64, f64) {
        let tau = tau.clamp(0.0, *self.taus.last().unwrap());
        let j = self.taus.partition_point(|&s| s < tau).clamp(1, self.taus.len() - 1);
        let (t0, t1) = (self.taus[j - 1], self.taus[j]);
        let w = (tau - t0) / (t1 - t0);
        let (g0, s0) = self.row_eval(j - 1, xi);
        let (g1, s1) = self.row_eval(j, xi);
        (g0 * (1.0 - w) + g1 * w, s0 * (1.0 - w) + s1 * w)
    }

    /// Writes `table.csv` (`tau, xi, g`) and `meta.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("table.csv"))?));
        w.write_record(["tau", "xi", "g"])?;
        let nx = self.xis.len();
        for (j, tau) in self.taus.iter().enumerate() {
            for (l, xi) in self.xis.iter().enumerate() {
                w.write_record(&[format!("{tau:e}"), format!("{xi:e}"), format!("{:e}", self.g[j * nx + l])])?;
            }
        }
        w.flush()?;
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("meta.json"))?), &self.meta)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: PdeMetadata = serde_json::from_reader(BufReader::new(File::open(dir.join("meta.json"))?))?;
        let s = meta.settings;
        let (nx, nt) = (s.space_steps + 1, s.time_steps + 1);
        let mut r = csv::Reader::from_reader(BufReader::new(File::open(dir.join("table.csv"))?));
        let mut taus = Vec::with_capacity(nt);
        let mut xis = Vec::with_capacity(nx);
        let mut g = Vec::with_capacity(nx * nt);
        for (k, rec) in r.deserialize::<(f64, f64, f64)>().enumerate() {
            let (tau, xi, v) = rec?;
            if k % nx == 0 {
                taus.push(tau);
            }
            if k < nx {
                xis.push(xi);
            }
            g.push(v);
        }
        if g.len() != nx * nt || taus.len() != nt {
            return Err(Error::Oracle(format!("table holds {} values, metadata expects {}", g.len(), nx * nt)));
        }
        Ok(Self { meta, taus, xis, g })
    }
}

impl ReferenceOracle for GoodDealPde {
    fn y(&self, t: f64, x: &[f64]) -> f64 {
        x[0] * self.reduced(self.meta.params.horizon - t, (x[1] / x[0]).ln()).0
    }

    fn z(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let (g, gp) = self.reduced(self.meta.params.horizon - t, (x[1] / x[0]).ln());
        self.meta.params.z_from(x[0], g, gp, out);
    }

    fn kind(&self) -> OracleKind {
        OracleKind::BruteForce("crank-nicolson".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleAgreement {
    pub points: usize,
    pub max_rel_y: f64,
    pub max_rel_z: f64,
    pub min_slope: f64,
    pub tolerance: f64,
    pub agreed: bool,
}

/// Closed-form values accepted after cross-checking against the PDE.
#[derive(Debug, Clone)]
pub struct GoodDealOracle {
    pub closed: MargrabeOracle,
    pub agreement: OracleAgreement,
}

impl GoodDealOracle {
    /// Compares both oracles at `points`. The slope of the PDE solution must
    /// stay non-negative (up to `-1e-8`) for the linearization to apply.
    pub fn verify(pde: &GoodDealPde, points: &[(f64, Vec<f64>)], tolerance: f64, floor: f64) -> Result<Self> {
        let closed = MargrabeOracle::new(pde.meta.params);
        let (max_rel_y, max_rel_z) = max_relative_deviation(pde, &closed, points, 2, floor);
        let min_slope = pde.meta.min_slope;
        let agreed = min_slope >= -1e-8 && max_rel_y <= tolerance && max_rel_z <= tolerance;
        let agreement = OracleAgreement { points: points.len(), max_rel_y, max_rel_z, min_slope, tolerance, agreed };
        if !agreed {
            log::warn!("good-deal oracles disagree: {agreement:?}");
        }
        Ok(Self { closed, agreement })
    }
}

impl ReferenceOracle for GoodDealOracle {
    fn y(&self, t: f64, x: &[f64]) -> f64 {
        self.closed.y(t, x)
    }

    fn z(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.closed.z(t, x, out)
    }

    fn kind(&self) -> OracleKind {
        OracleKind::BruteForce("crank-nicolson checked closed form".into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payoff_and_model() {
        let (p, _) = gooddeal_problem().unwrap();
        assert_eq!((p.terminal)(&[1.0, 1.0]), 0.0);
        assert_eq!((p.terminal)(&[1.0, 1.5]), 0.5);
        let mut s = [0.0; 4];
        p.model.diffusion_at(0.0, &[1.0, 1.0], &mut s);
        assert!((s[2] - 0.3).abs() < 1e-15 && (s[3] - 0.4).abs() < 1e-15 && s[1] == 0.0);
        assert!((GoodDealParams::default().kappa() - 0.08).abs() < 1e-15);
    }

    #[test]
    fn closed_form_limits() {
        let o = MargrabeOracle::new(GoodDealParams { h: 0.0, gamma: 0.0, ..Default::default() });
        // at-the-money exchange option: 2 N(s/2) - 1, s^2 = 0.2
        let s = 0.2f64.sqrt();
        let want = 2.0 * Normal::standard().cdf(s / 2.0) - 1.0;
        assert!((o.y(0.0, &[1.0, 1.0]) - want).abs() < 1e-14);
        assert_eq!(o.y(1.0, &[1.0, 1.5]), 0.5);
    }

    #[test]
    fn small_pde_tracks_closed_form() {
        let params = GoodDealParams::default();
        let pde = GoodDealPde::solve(params, PdeSettings { space_steps: 400, time_steps: 100, ..Default::default() })
            .unwrap();
        let closed = MargrabeOracle::new(params);
        let (a, b) = (pde.y(0.0, &[1.0, 1.0]), closed.y(0.0, &[1.0, 1.0]));
        assert!((a - b).abs() < 2e-3 * b, "{a} vs {b}");
        assert!(pde.meta.min_slope > -1e-8);
    }

    #[test]
    fn table_roundtrip() {
        let pde = GoodDealPde::solve(
            GoodDealParams::default(),
            PdeSettings { space_steps: 40, time_steps: 8, ..Default::default() },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        pde.save(dir.path()).unwrap();
        let back = GoodDealPde::load(dir.path()).unwrap();
        assert_eq!(back.meta, pde.meta);
        for (t, x) in [(0.0, [1.0, 1.2]), (0.7, [0.8, 1.1])] {
            assert!((back.y(t, &x) - pde.y(t, &x)).abs() < 1e-14);
        }
    }
}

#[cfg(test)]
mod agreement {
    use super::*;
    use crate::problems::{gradient_consistency, marginal_points};
    use crate::timegrid::GridFamily;

    #[test]
    fn default_oracles_agree() {
        let params = GoodDealParams::default();
        let pde = GoodDealPde::solve(params, PdeSettings::default()).unwrap();
        let model = params.model().unwrap();
        let grid = GridFamily::uniform(1.0).unwrap().grid(5);
        let points = marginal_points(&model, &grid, 200, 7);
        let o = GoodDealOracle::verify(&pde, &points, 5e-3, 1e-2).unwrap();
        eprintln!("{:?}", o.agreement);
        assert!(o.agreement.agreed);
        let y0 = o.y(0.0, &[1.0, 1.0]);
        assert!((y0 - 0.3082).abs() < 5e-4, "{y0}");
        assert!(gradient_consistency(&o.closed, &model, &points, 1e-5, 1e-2) < 1e-4);
    }
}
