//! Least squares over empirical measures, regression bases and truncation.

mod basis;
mod ols;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use basis::{Basis, Hermite, Partition};
pub use ols::{dense_lstsq, ols_fit, partition_fit, truncate, FittedFunction, NormalEquations};

use crate::error::{Error, Result};
use crate::forward::{sample_marginal, CouplingMode, ForwardModel};
use crate::rng::Domain;
use crate::timegrid::TimeGrid;

/// Equiprobable partition built from a probe sample, with its mass diagnostic.
#[derive(Debug, Clone)]
pub struct EquiprobablePartition {
    pub partition: Partition,
    /// Smallest empirical cell probability on the probe.
    pub min_cell_mass: f64,
    /// `1 / (K * min_cell_mass)`: cells carry at least `1/(delta K)` mass.
    pub delta: f64,
}

/// Per-axis empirical quantile breakpoints of `probe` (flattened, `d` per
/// point). Outer edges are infinite so the cells partition `R^d`.
pub fn equiprobable_partition(probe: &[f64], d: usize, cells: usize) -> Result<EquiprobablePartition> {
    let n = probe.len() / d;
    if cells == 0 || n == 0 || probe.len() != n * d {
        return Err(Error::InvalidBasis("equiprobable partition needs cells > 0 and a non-empty probe".into()));
    }
    let mut edges = Vec::with_capacity(d);
    for a in 0..d {
        let mut v: Vec<f64> = (0..n).map(|m| probe[m * d + a]).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::DegenerateMarginal { axis: a, reason: "non-finite probe value".into() });
        }
        v.sort_by(f64::total_cmp);
        if v[0] == v[n - 1] {
            return Err(Error::DegenerateMarginal { axis: a, reason: format!("all {n} probe values equal {}", v[0]) });
        }
        let mut e = vec![f64::NEG_INFINITY];
        for j in 1..cells {
            let pos = j as f64 * n as f64 / cells as f64;
            let lo = (pos.floor() as usize).min(n - 1);
            let b = if lo == 0 { v[0] } else { 0.5 * (v[lo - 1] + v[lo]) };
            if b <= *e.last().unwrap() {
                return Err(Error::DegenerateMarginal {
                    axis: a,
                    reason: format!("quantile {j}/{cells} coincides with its neighbour"),
                });
            }
            e.push(b);
        }
        e.push(f64::INFINITY);
        edges.push(e);
    }
    let partition = Partition::new(edges)?;
    let k = partition.cells();
    let mut counts = vec![0usize; k];
    for m in 0..n {
        if let Some(c) = partition.locate(&probe[m * d..(m + 1) * d]) {
            counts[c] += 1;
        }
    }
    let min_cell_mass = *counts.iter().min().unwrap() as f64 / n as f64;
    let delta = if min_cell_mass > 0.0 { 1.0 / (k as f64 * min_cell_mass) } else { f64::INFINITY };
    Ok(EquiprobablePartition { partition, min_cell_mass, delta })
}

fn default_probe() -> usize {
    20_000
}

fn default_true() -> bool {
    true
}

/// Configurable description of a regression basis family over the time
/// points of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BasisSpec {
    Constant,
    /// Hermite polynomials orthonormal under `N(x_0, t_i I)`.
    Hermite {
        degree: usize,
    },
    /// Quantile hypercubes of the marginal of `X_i`, `cells` per axis.
    Equiprobable {
        cells: usize,
        #[serde(default)]
        affine: bool,
        #[serde(default = "default_probe")]
        probe: usize,
        /// One partition per time point; otherwise a single partition from
        /// the pooled probes of all time points.
        #[serde(default = "default_true")]
        per_time: bool,
    },
    /// Equal cells on `x_0 + [-radius, radius]^d`, zero outside. With
    /// `time_scaled` the radius at `t_i` is `radius * sqrt(T - t_i)`.
    UniformBox {
        cells: usize,
        radius: f64,
        #[serde(default)]
        affine: bool,
        #[serde(default)]
        time_scaled: bool,
    },
}

impl BasisSpec {
    /// Number of scalar basis functions at a time point with `t_i > 0`.
    pub fn dim(&self, d: usize) -> usize {
        match self {
            BasisSpec::Constant => 1,
            BasisSpec::Hermite { degree } => binomial(degree + d, d),
            BasisSpec::Equiprobable { cells, affine, .. } | BasisSpec::UniformBox { cells, affine, .. } => {
                cells.pow(d as u32) * if *affine { 1 + d } else { 1 }
            }
        }
    }
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, j| acc * (n - j) / (j + 1))
}

/// Bases for time points `0..2^k` of a grid, with the mass diagnostic of
/// every equiprobable partition built along the way.
#[derive(Debug, Clone)]
pub struct TimeBases {
    pub bases: Vec<Arc<Basis>>,
    pub deltas: Vec<Option<f64>>,
}

/// Builds one basis per time point `i < 2^k`. At `t_i = 0` the state is
/// deterministic and the basis is the constant function. Probes for
/// data-driven bases come from the dedicated probe stream of the level.
pub fn build_bases(
    spec: &BasisSpec,
    model: &ForwardModel,
    grid: &TimeGrid,
    seed: u64,
    mode: CouplingMode,
) -> Result<TimeBases> {
    let n = grid.steps();
    let d = model.dim();
    let t_end = grid.horizon();
    let mut bases = Vec::with_capacity(n);
    let mut deltas = vec![None; n];
    let probe_for = |i: usize, size: usize| {
        let domain = Domain::Probe { level: grid.level() as u32, index: i as u32 };
        sample_marginal(model, grid, i, size, seed, domain, mode)
    };
    let pooled = match spec {
        BasisSpec::Equiprobable { cells, probe, per_time: false, .. } => {
            let mut all = Vec::new();
            for i in 1..n {
                all.extend(probe_for(i, *probe));
            }
            if all.is_empty() {
                None
            } else {
                Some(equiprobable_partition(&all, d, *cells)?)
            }
        }
        _ => None,
    };
    for i in 0..n {
        let t = grid.time(i);
        if t == 0.0 {
            bases.push(Arc::new(Basis::Constant));
            continue;
        }
        let basis = match spec {
            BasisSpec::Constant => Basis::Constant,
            BasisSpec::Hermite { degree } => Basis::Hermite(Hermite::new(*degree, model.x0().to_vec(), t.sqrt())?),
            BasisSpec::Equiprobable { cells, affine, probe, per_time } => {
                let ep = if *per_time {
                    equiprobable_partition(&probe_for(i, *probe), d, *cells)?
                } else {
                    pooled.clone().expect("pooled partition exists when n > 1")
                };
                deltas[i] = Some(ep.delta);
                if *affine {
                    Basis::LocalAffine(ep.partition)
                } else {
                    Basis::Partition(ep.partition)
                }
            }
            BasisSpec::UniformBox { cells, radius, affine, time_scaled } => {
                let r = if *time_scaled { radius * (t_end - t).sqrt() } else { *radius };
                let edges = model
                    .x0()
                    .iter()
                    .map(|&c| (0..=*cells).map(|j| c - r + 2.0 * r * j as f64 / *cells as f64).collect())
                    .collect();
                let p = Partition::new(edges)?;
                if *affine {
                    Basis::LocalAffine(p)
                } else {
                    Basis::Partition(p)
                }
            }
        };
        bases.push(Arc::new(basis));
    }
    Ok(TimeBases { bases, deltas })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamFactory;

    fn normals(n: usize) -> Vec<f64> {
        let mut r = StreamFactory::new(1, Domain::Custom(9)).path(0);
        (0..n).map(|_| r.normal()).collect()
    }

    #[test]
    fn median_breakpoint() {
        let ep = equiprobable_partition(&normals(100_000), 1, 2).unwrap();
        assert!(ep.partition.edges()[0][1].abs() < 0.02);
    }

    #[test]
    fn four_cells_balanced() {
        let probe = normals(100_000);
        let ep = equiprobable_partition(&probe, 1, 4).unwrap();
        assert!(ep.min_cell_mass >= 0.20 && ep.min_cell_mass <= 0.30);
        assert!(ep.delta >= 1.0 && ep.delta < 1.01);
    }

    #[test]
    fn uniform_quantiles() {
        let probe: Vec<f64> = (0..100_000).map(|m| (m as f64 + 0.5) / 100_000.0).collect();
        let ep = equiprobable_partition(&probe, 1, 5).unwrap();
        for (j, b) in ep.partition.edges()[0][1..5].iter().enumerate() {
            assert!((b - 0.2 * (j + 1) as f64).abs() < 1e-3);
        }
    }

    #[test]
    fn degenerate_marginal_rejected() {
        let probe = vec![1.0, 0.0, 1.0, 0.5, 1.0, 0.7];
        let e = equiprobable_partition(&probe, 2, 2).unwrap_err();
        assert!(matches!(e, Error::DegenerateMarginal { axis: 0, .. }));
    }

    #[test]
    fn spec_dims() {
        assert_eq!(BasisSpec::Hermite { degree: 7 }.dim(1), 8);
        let ind = BasisSpec::Equiprobable { cells: 8, affine: false, probe: 10, per_time: true };
        assert_eq!(ind.dim(3), 512);
        let lin = BasisSpec::Equiprobable { cells: 5, affine: true, probe: 10, per_time: true };
        assert_eq!(lin.dim(3), 500);
    }

    #[test]
    fn bases_constant_at_origin() {
        let model = ForwardModel::brownian(vec![0.0]).unwrap();
        let grid = crate::timegrid::GridFamily::uniform(1.0).unwrap().grid(2);
        let spec = BasisSpec::Equiprobable { cells: 4, affine: false, probe: 1000, per_time: true };
        let tb = build_bases(&spec, &model, &grid, 3, CouplingMode::Exact).unwrap();
        assert_eq!(*tb.bases[0], Basis::Constant);
        assert_eq!(tb.bases[1].dim(), 4);
        assert!(tb.deltas[0].is_none() && tb.deltas[3].is_some());
    }
}
