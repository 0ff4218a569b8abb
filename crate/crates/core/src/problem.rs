//! BSDE problem data: forward model, terminal function, driver and bounds.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forward::ForwardModel;

/// Generator `f_i(x_i, x_{i+1}, y, z)`. Most drivers ignore `x_next`; the
/// proxy driver of the residual equation does not.
pub trait Driver: Send + Sync + fmt::Debug {
    fn eval(&self, i: usize, t: f64, x: &[f64], x_next: &[f64], y: f64, z: &[f64]) -> f64;

    /// Lipschitz constant in `(y, z)`, used only for diagnostics.
    fn lipschitz(&self) -> f64;

    fn is_zero(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDriver;

impl Driver for ZeroDriver {
    fn eval(&self, _: usize, _: f64, _: &[f64], _: &[f64], _: f64, _: &[f64]) -> f64 {
        0.0
    }

    fn lipschitz(&self) -> f64 {
        0.0
    }

    fn is_zero(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantDriver(pub f64);

impl Driver for ConstantDriver {
    fn eval(&self, _: usize, _: f64, _: &[f64], _: &[f64], _: f64, _: &[f64]) -> f64 {
        self.0
    }

    fn lipschitz(&self) -> f64 {
        0.0
    }

    fn is_zero(&self) -> bool {
        self.0 == 0.0
    }
}

/// `f = h |z_component|`.
#[derive(Debug, Clone, Copy)]
pub struct AbsZDriver {
    pub h: f64,
    pub component: usize,
}

impl Driver for AbsZDriver {
    fn eval(&self, _: usize, _: f64, _: &[f64], _: &[f64], _: f64, z: &[f64]) -> f64 {
        self.h * z[self.component].abs()
    }

    fn lipschitz(&self) -> f64 {
        self.h.abs()
    }

    fn is_zero(&self) -> bool {
        self.h == 0.0
    }
}

pub type DriverFn = Arc<dyn Fn(usize, f64, &[f64], f64, &[f64]) -> f64 + Send + Sync>;

/// Driver from a closure `(i, t, x, y, z)`.
#[derive(Clone)]
pub struct FnDriver {
    f: DriverFn,
    lipschitz: f64,
}

impl FnDriver {
    pub fn new(f: DriverFn, lipschitz: f64) -> Self {
        Self { f, lipschitz }
    }
}

impl fmt::Debug for FnDriver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnDriver").field("lipschitz", &self.lipschitz).finish()
    }
}

impl Driver for FnDriver {
    fn eval(&self, i: usize, t: f64, x: &[f64], _: &[f64], y: f64, z: &[f64]) -> f64 {
        (self.f)(i, t, x, y, z)
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct BsdeProblem {
    pub name: String,
    pub model: Arc<ForwardModel>,
    pub terminal: TerminalFn,
    pub driver: Arc<dyn Driver>,
    pub horizon: f64,
    pub theta: f64,
    pub theta_l: f64,
    /// `sup |Phi|`, or infinity.
    pub c_phi: f64,
    /// Scale of the `z` bounds, or infinity.
    pub c_x: f64,
}

impl fmt::Debug for BsdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BsdeProblem")
            .field("name", &self.name)
            .field("model", &self.model)
            .field("driver", &self.driver)
            .field("horizon", &self.horizon)
            .field("theta", &self.theta)
            .field("theta_l", &self.theta_l)
            .field("c_phi", &self.c_phi)
            .field("c_x", &self.c_x)
            .finish()
    }
}

impl BsdeProblem {
    pub fn new(
        name: impl Into<String>,
        model: Arc<ForwardModel>,
        terminal: TerminalFn,
        driver: Arc<dyn Driver>,
        horizon: f64,
    ) -> Result<Self> {
        let p = Self {
            name: name.into(),
            model,
            terminal,
            driver,
            horizon,
            theta: 1.0,
            theta_l: 1.0,
            c_phi: f64::INFINITY,
            c_x: f64::INFINITY,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_exponents(mut self, theta: f64, theta_l: f64) -> Result<Self> {
        self.theta = theta;
        self.theta_l = theta_l;
        self.validate()?;
        Ok(self)
    }

    pub fn with_bounds(mut self, c_phi: f64, c_x: f64) -> Result<Self> {
        self.c_phi = c_phi;
        self.c_x = c_x;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidModel(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !unit(self.theta) || !unit(self.theta_l) {
            return Err(Error::InvalidModel(format!(
                "theta = {} and theta_L = {} must lie in (0, 1]",
                self.theta, self.theta_l
            )));
        }
        if !(self.c_phi > 0.0) || !(self.c_x > 0.0) {
            return Err(Error::InvalidModel("bounds must be positive (or infinite)".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn brownian_dim(&self) -> usize {
        self.model.brownian_dim()
    }

    /// Same terminal value and model with the driver set to zero.
    pub fn linear_part(&self) -> Self {
        Self { name: format!("{} (zero driver)", self.name), driver: Arc::new(ZeroDriver), ..self.clone() }
    }

    pub fn has_zero_driver(&self) -> bool {
        self.driver.is_zero()
    }

    /// `C_y`.
    pub fn y_bound(&self) -> f64 {
        self.c_phi
    }

    /// `C_z(t) = C_X / (T - t)^{(1 - theta)/2}`.
    pub fn z_bound(&self, t: f64) -> f64 {
        if self.c_x.is_infinite() {
            return f64::INFINITY;
        }
        self.c_x / (self.horizon - t).powf(0.5 * (1.0 - self.theta))
    }

    /// Residual bounds `(C_{y,i}, C_{z,i})` at a time with step `dt`.
    pub fn residual_bounds(&self, t: f64, dt: f64) -> (f64, f64) {
        if self.c_x.is_infinite() {
            return (f64::INFINITY, f64::INFINITY);
        }
        let cy = self.c_x * (self.horizon - t).powf(0.5 * (self.theta_l + self.theta));
        (cy, cy / dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bm() -> Arc<ForwardModel> {
        Arc::new(ForwardModel::brownian(vec![0.0]).unwrap())
    }

    #[test]
    fn exponents_validated() {
        let p = BsdeProblem::new("p", bm(), Arc::new(|x: &[f64]| x[0]), Arc::new(ZeroDriver), 1.0).unwrap();
        assert!(p.clone().with_exponents(0.0, 1.0).is_err());
        assert!(p.clone().with_exponents(1.0, 1.2).is_err());
        assert!(BsdeProblem::new("p", bm(), Arc::new(|_: &[f64]| 0.0), Arc::new(ZeroDriver), 0.0).is_err());
    }

    #[test]
    fn bounds() {
        let p = BsdeProblem::new("p", bm(), Arc::new(|x: &[f64]| x[0]), Arc::new(ZeroDriver), 1.0)
            .unwrap()
            .with_exponents(0.5, 1.0)
            .unwrap();
        assert!(p.z_bound(0.5).is_infinite());
        let p = p.with_bounds(1.0, 2.0).unwrap();
        // (1 - 0.5)/2 = 0.25, so 2 / 0.5^0.25
        assert!((p.z_bound(0.5) - 2.0 / 0.5f64.powf(0.25)).abs() < 1e-15);
        let (cy, cz) = p.residual_bounds(0.75, 0.25);
        assert!((cy - 2.0 * 0.25f64.powf(0.75)).abs() < 1e-15);
        assert!((cz - cy / 0.25).abs() < 1e-15);
    }

    #[test]
    fn good_deal_driver() {
        let f = AbsZDriver { h: 0.2, component: 1 };
        assert_eq!(f.eval(0, 0.0, &[1.0, 1.0], &[1.0, 1.0], 3.0, &[5.0, -0.5]), 0.1);
    }
}
