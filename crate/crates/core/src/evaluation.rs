//! Global mean-squared errors against a reference solution, convergence
//! fits and empirical bias of a basis.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{sample_marginal, CloudGenerator, ForwardModel, LevelSource};
use crate::par::{ordered_reduce, Moments};
use crate::problems::ReferenceOracle;
use crate::regression::{Basis, NormalEquations};
use crate::rng::Domain;
use crate::solution::Approximation;
use crate::timegrid::TimeGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointError {
    pub i: usize,
    pub t: f64,
    pub dt: f64,
    pub mse_y: f64,
    pub mse_z: f64,
    pub se_y: f64,
    pub se_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub scheme: String,
    pub level: usize,
    pub paths: usize,
    pub seed: u64,
    /// `max_i` of the per-time Y errors.
    pub mse_y: f64,
    /// `sum_i` of the per-time Z errors times `Delta_i`.
    pub mse_z: f64,
    pub mse_y_mean: f64,
    pub mse_y0: f64,
    pub mse_z0: f64,
    /// Standard error of the `mse_y` maximiser and of `mse_z`.
    pub se_y: f64,
    pub se_z: f64,
    pub per_time: Vec<PointError>,
}

impl ErrorReport {
    pub fn total(&self) -> f64 {
        self.mse_y + self.mse_z
    }

    /// One row per time point with the aggregates repeated.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "scheme",
            "k",
            "i",
            "t",
            "dt",
            "mse_y_i",
            "mse_z_i",
            "mse_y",
            "mse_z",
            "mse_y_mean",
            "total",
        ])?;
        for p in &self.per_time {
            out.write_record(&[
                self.scheme.clone(),
                self.level.to_string(),
                p.i.to_string(),
                p.t.to_string(),
                p.dt.to_string(),
                p.mse_y.to_string(),
                p.mse_z.to_string(),
                self.mse_y.to_string(),
                self.mse_z.to_string(),
                self.mse_y_mean.to_string(),
                self.total().to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Monte Carlo estimate of the global error on a fresh cloud of `paths`
/// paths from the `Evaluation` stream domain.
pub fn global_mse(
    approx: &dyn Approximation,
    oracle: &dyn ReferenceOracle,
    model: &Arc<ForwardModel>,
    paths: usize,
    seed: u64,
    scheme: &str,
) -> Result<ErrorReport> {
    let grid = approx.grid().clone();
    let (n, d, q) = (grid.steps(), model.dim(), model.brownian_dim());
    let level = grid.level();
    let source = CloudGenerator::new(
        model.clone(),
        grid.clone(),
        None,
        paths,
        seed,
        Domain::Evaluation(level as u32),
        model.default_mode(),
    )?;
    let acc = ordered_reduce(
        paths,
        || vec![(Moments::default(), Moments::default()); n],
        |range, acc| {
            let mut p = source.layout().new_path();
            let (mut za, mut zo) = (vec![0.0; q], vec![0.0; q]);
            for m in range {
                source.fill(m, &mut p);
                for (i, (my, mz)) in acc.iter_mut().enumerate() {
                    let x = p.state(i, d);
                    let t = grid.time(i);
                    let ey = approx.y(i, x) - oracle.y(t, x);
                    approx.z(i, x, &mut za);
                    oracle.z(t, x, &mut zo);
                    let ez: f64 = za.iter().zip(&zo).map(|(a, b)| (a - b).powi(2)).sum();
                    if !ey.is_finite() || !ez.is_finite() {
                        return Err(Error::NonFinite { sample: m, time_point: Some(i) });
                    }
                    my.push(ey * ey);
                    mz.push(ez);
                }
            }
            Ok(())
        },
        |a, b| {
            for (x, y) in a.iter_mut().zip(&b) {
                x.0.merge(&y.0);
                x.1.merge(&y.1);
            }
        },
    )?;
    let per_time: Vec<PointError> = acc
        .iter()
        .enumerate()
        .map(|(i, (my, mz))| PointError {
            i,
            t: grid.time(i),
            dt: grid.increment(i),
            mse_y: my.mean(),
            mse_z: mz.mean(),
            se_y: my.std_error(),
            se_z: mz.std_error(),
        })
        .collect();
    let worst = per_time.iter().max_by(|a, b| a.mse_y.total_cmp(&b.mse_y)).expect("at least one step");
    let mse_z = per_time.iter().map(|p| p.mse_z * p.dt).sum();
    let se_z = per_time.iter().map(|p| (p.se_z * p.dt).powi(2)).sum::<f64>().sqrt();
    Ok(ErrorReport {
        scheme: scheme.into(),
        level,
        paths,
        seed,
        mse_y: worst.mse_y,
        se_y: worst.se_y,
        mse_z,
        se_z,
        mse_y_mean: per_time.iter().map(|p| p.mse_y).sum::<f64>() / n as f64,
        mse_y0: per_time[0].mse_y,
        mse_z0: per_time[0].mse_z,
        per_time,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub level: usize,
    /// Mean over seeds.
    pub mse: f64,
    pub log2_mse: f64,
    pub residual: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceFit {
    pub slope: f64,
    pub intercept: f64,
    pub points: Vec<ConvergencePoint>,
}

/// Least-squares line through `(k, log2 mse)`.
pub fn fit_log2_line(levels: &[usize], mse: &[f64]) -> Result<(f64, f64)> {
    if levels.len() != mse.len() {
        return Err(Error::Dimension("one error per level".into()));
    }
    if levels.len() < 3 {
        return Err(Error::Schedule(format!("a convergence fit needs at least 3 levels, got {}", levels.len())));
    }
    if mse.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Schedule("errors must be positive and finite".into()));
    }
    let n = levels.len() as f64;
    let xs: Vec<f64> = levels.iter().map(|&k| k as f64).collect();
    let ys: Vec<f64> = mse.iter().map(|v| v.log2()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Schedule("levels must not all coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Runs `error(k, seed)` for every level and seed, averages over seeds and
/// fits the log2 line.
pub fn convergence_study(
    levels: &[usize],
    seeds: &[u64],
    mut error: impl FnMut(usize, u64) -> Result<f64>,
) -> Result<ConvergenceFit> {
    if seeds.is_empty() {
        return Err(Error::Schedule("at least one seed".into()));
    }
    let mut per_level = Vec::with_capacity(levels.len());
    for &k in levels {
        let per_seed = seeds.iter().map(|&s| error(k, s)).collect::<Result<Vec<f64>>>()?;
        per_level.push(per_seed);
    }
    let means: Vec<f64> = per_level.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    let (slope, intercept) = fit_log2_line(levels, &means)?;
    let points = levels
        .iter()
        .zip(means)
        .zip(per_level)
        .map(|((&level, mse), per_seed)| ConvergencePoint {
            level,
            mse,
            log2_mse: mse.log2(),
            residual: mse.log2() - (intercept + slope * level as f64),
            per_seed,
        })
        .collect();
    Ok(ConvergenceFit { slope, intercept, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasEstimate {
    pub t1: f64,
    pub std_error: f64,
    pub paths: usize,
}

/// Residual mean square of the projection of `target(X_{t_i})` on `basis`.
pub fn empirical_bias(
    basis: &Basis,
    target: &(dyn Fn(&[f64]) -> f64 + Sync),
    model: &ForwardModel,
    grid: &TimeGrid,
    i: usize,
    paths: usize,
    seed: u64,
) -> Result<BiasEstimate> {
    let d = model.dim();
    let domain = Domain::Custom((0xB1A5u64 << 40) | ((grid.level() as u64) << 20) | i as u64);
    let xs = sample_marginal(model, grid, i, paths, seed, domain, model.default_mode());
    let ne = ordered_reduce(
        paths,
        || NormalEquations::new(basis, 1),
        |range, ne| {
            let mut feats = vec![0.0; basis.block_size()];
            for m in range {
                let x = &xs[m * d..(m + 1) * d];
                let b = basis.features(x, &mut feats);
                ne.add(m, b, &feats, &[target(x)])?;
            }
            Ok(())
        },
        |a, b| a.merge(&b),
    )?;
    let fit = crate::regression::FittedFunction::new(Arc::new(basis.clone()), ne.solve(), 1, f64::INFINITY)?;
    let res = ordered_reduce(
        paths,
        Moments::default,
        |range, acc| {
            for m in range {
                let x = &xs[m * d..(m + 1) * d];
                acc.push((fit.eval_scalar(x) - target(x)).powi(2));
            }
            Ok(())
        },
        |a, b| a.merge(&b),
    )?;
    Ok(BiasEstimate { t1: res.mean(), std_error: res.std_error(), paths })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{sine_problem, OracleOnGrid, SineOracle};
    use crate::regression::Partition;
    use crate::timegrid::GridFamily;

    struct Shifted<'a>(OracleOnGrid<'a>, f64);

    impl Approximation for Shifted<'_> {
        fn grid(&self) -> &TimeGrid {
            self.0.grid()
        }
        fn y(&self, i: usize, x: &[f64]) -> f64 {
            self.0.y(i, x) + self.1
        }
        fn z(&self, i: usize, x: &[f64], out: &mut [f64]) {
            self.0.z(i, x, out)
        }
    }

    #[test]
    fn oracle_against_itself_and_offset() {
        let (p, o) = sine_problem().unwrap();
        let grid = GridFamily::uniform(1.0).unwrap().grid(3);
        let exact = OracleOnGrid { oracle: &o, grid: grid.clone() };
        let r = global_mse(&exact, &o, &p.model, 5000, 1, "oracle").unwrap();
        assert_eq!((r.mse_y, r.mse_z), (0.0, 0.0));
        let off = Shifted(OracleOnGrid { oracle: &o, grid }, 0.1);
        let r2 = global_mse(&off, &o, &p.model, 5000, 1, "oracle").unwrap();
        assert!((r2.mse_y - 0.01).abs() < 1e-15 && r2.mse_z == 0.0);
        assert!(r2.per_time.iter().all(|e| (e.mse_y - 0.01).abs() < 1e-15));
        let mut buf = Vec::new();
        r2.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 9);
    }

    #[test]
    fn reproducible() {
        let (p, _) = sine_problem().unwrap();
        let grid = GridFamily::uniform(1.0).unwrap().grid(2);
        let wrong = SineOracle { horizon: 2.0 };
        let approx = OracleOnGrid { oracle: &wrong, grid };
        let a = global_mse(&approx, &SineOracle { horizon: 1.0 }, &p.model, 9000, 3, "x").unwrap();
        let b = global_mse(&approx, &SineOracle { horizon: 1.0 }, &p.model, 9000, 3, "x").unwrap();
        assert_eq!(a, b);
        assert!(a.mse_y > 0.0 && a.mse_z > 0.0);
    }

    #[test]
    fn exact_power_law_slope() {
        let levels = [2, 3, 4, 5];
        let fit = convergence_study(&levels, &[0], |k, _| Ok(2f64.powi(-(k as i32)))).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12 && fit.intercept.abs() < 1e-12);
        assert!(convergence_study(&[2, 3], &[0], |_, _| Ok(1.0)).is_err());
    }

    #[test]
    fn bias_of_constant_fit() {
        let model = ForwardModel::brownian(vec![0.0]).unwrap();
        let grid = GridFamily::uniform(1.0).unwrap().grid(0);
        // X_1 ~ N(0, 1): constant fit of y = x leaves the variance
        let b = empirical_bias(&Basis::Constant, &|x: &[f64]| x[0], &model, &grid, 1, 100_000, 5).unwrap();
        assert!((b.t1 - 1.0).abs() < 4.0 * 2f64.sqrt() / (1e5f64).sqrt(), "{b:?}");
        let c = empirical_bias(&Basis::Constant, &|_: &[f64]| 2.5, &model, &grid, 1, 10_000, 5).unwrap();
        assert!(c.t1 < 1e-10);
    }

    #[test]
    fn bias_quadratic_in_cell_width() {
        let model = ForwardModel::brownian(vec![0.0]).unwrap();
        let grid = GridFamily::uniform(1.0).unwrap().grid(0);
        let f = |x: &[f64]| x[0].sin();
        let coarse = Basis::Partition(Partition::uniform_box(1, 20, -4.0, 4.0).unwrap());
        let fine = Basis::Partition(Partition::uniform_box(1, 40, -4.0, 4.0).unwrap());
        let a = empirical_bias(&coarse, &f, &model, &grid, 1, 200_000, 2).unwrap().t1;
        let b = empirical_bias(&fine, &f, &model, &grid, 1, 200_000, 2).unwrap().t1;
        assert!((2.5..6.0).contains(&(a / b)), "{a} {b}");
    }
}
