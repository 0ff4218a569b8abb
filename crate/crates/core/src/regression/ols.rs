use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::basis::Basis;
use crate::error::{Error, Result};

/// Relative pivot threshold below which a Cholesky factor is treated as
/// singular and the block falls back to the pseudo-inverse.
const PIVOT_TOL: f64 = 1e-11;

/// Componentwise clamp to `[-bound, bound]`; a no-op for infinite bounds.
pub fn truncate(v: &mut [f64], bound: f64) {
    if bound.is_finite() {
        for x in v {
            *x = x.clamp(-bound, bound);
        }
    }
}

/// Block-diagonal normal equations `sum phi phi^T c = sum phi r`, one block
/// per basis block, accumulated sample by sample.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    blocks: usize,
    bs: usize,
    arity: usize,
    gram: Vec<f64>,
    rhs: Vec<f64>,
    count: usize,
}

impl NormalEquations {
    pub fn new(basis: &Basis, arity: usize) -> Self {
        let (blocks, bs) = (basis.blocks(), basis.block_size());
        Self { blocks, bs, arity, gram: vec![0.0; blocks * bs * bs], rhs: vec![0.0; blocks * bs * arity], count: 0 }
    }

    pub fn samples(&self) -> usize {
        self.count
    }

    /// Adds one sample. `block` is the active basis block (or `None` when
    /// all features vanish, in which case only the count moves).
    #[inline]
    pub fn add(&mut self, sample: usize, block: Option<usize>, feats: &[f64], resp: &[f64]) -> Result<()> {
        if resp.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite { sample, time_point: None });
        }
        self.count += 1;
        let Some(b) = block else { return Ok(()) };
        let bs = self.bs;
        let feats = &feats[..bs];
        // a sum is non-finite as soon as one term is
        if !feats.iter().sum::<f64>().is_finite() {
            return Err(Error::NonFinite { sample, time_point: None });
        }
        let g = &mut self.gram[b * bs * bs..(b + 1) * bs * bs];
        for (r, &fr) in feats.iter().enumerate() {
            let row = &mut g[r * bs + r..(r + 1) * bs];
            for (gv, &fc) in row.iter_mut().zip(&feats[r..]) {
                *gv += fr * fc;
            }
        }
        let ar = self.arity;
        let rhs = &mut self.rhs[b * bs * ar..(b + 1) * bs * ar];
        if ar == 1 {
            for (rv, &fr) in rhs.iter_mut().zip(feats) {
                *rv += fr * resp[0];
            }
        } else {
            for (row, &fr) in rhs.chunks_exact_mut(ar).zip(feats) {
                for (rv, &a) in row.iter_mut().zip(resp) {
                    *rv += fr * a;
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &NormalEquations) {
        debug_assert_eq!((self.blocks, self.bs, self.arity), (other.blocks, other.bs, other.arity));
        for (a, b) in self.gram.iter_mut().zip(&other.gram) {
            *a += b;
        }
        for (a, b) in self.rhs.iter_mut().zip(&other.rhs) {
            *a += b;
        }
        self.count += other.count;
    }

    /// Coefficients as a row-major `K x arity` matrix. Blocks without data
    /// get zero coefficients; singular blocks get the minimum-norm solution.
    pub fn solve(&self) -> Vec<f64> {
        let (bs, ar) = (self.bs, self.arity);
        let mut coef = vec![0.0; self.blocks * bs * ar];
        for b in 0..self.blocks {
            let g = &self.gram[b * bs * bs..(b + 1) * bs * bs];
            let rhs = &self.rhs[b * bs * ar..(b + 1) * bs * ar];
            let out = &mut coef[b * bs * ar..(b + 1) * bs * ar];
            if bs == 1 {
                if g[0] > 0.0 {
                    for a in 0..ar {
                        out[a] = rhs[a] / g[0];
                    }
                }
                continue;
            }
            let max_diag = (0..bs).map(|r| g[r * bs + r]).fold(0.0, f64::max);
            if max_diag == 0.0 {
                continue;
            }
            let m = DMatrix::from_fn(bs, bs, |r, c| if r <= c { g[r * bs + c] } else { g[c * bs + r] });
            let y = DMatrix::from_row_slice(bs, ar, rhs);
            let sol = match m.clone().cholesky() {
                Some(ch) if (0..bs).all(|r| ch.l_dirty()[(r, r)].powi(2) > PIVOT_TOL * max_diag) => ch.solve(&y),
                _ => {
                    let svd = m.svd(true, true);
                    let tol = PIVOT_TOL * svd.singular_values.max();
                    svd.solve(&y, tol).expect("SVD computed with both factors")
                }
            };
            for r in 0..bs {
                for a in 0..ar {
                    out[r * ar + a] = sol[(r, a)];
                }
            }
        }
        coef
    }
}

/// Least squares over an empirical measure: `xs` holds `M` points of
/// dimension `d`, `responses` holds `M` rows of length `arity`.
pub fn ols_fit(basis: &Basis, d: usize, xs: &[f64], responses: &[f64], arity: usize) -> Result<Vec<f64>> {
    let m = xs.len() / d;
    if m == 0 || xs.len() != m * d || responses.len() != m * arity {
        return Err(Error::Dimension(format!(
            "{} coordinates and {} responses do not describe M >= 1 samples of d = {d}, arity = {arity}",
            xs.len(),
            responses.len()
        )));
    }
    let mut ne = NormalEquations::new(basis, arity);
    let mut f = vec![0.0; basis.block_size()];
    for s in 0..m {
        let x = &xs[s * d..(s + 1) * d];
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { sample: s, time_point: None });
        }
        let b = basis.features(x, &mut f);
        ne.add(s, b, &f, &responses[s * arity..(s + 1) * arity])?;
    }
    Ok(ne.solve())
}

/// Per-cell response means for an indicator basis; empty cells get 0.
pub fn partition_fit(basis: &Basis, d: usize, xs: &[f64], responses: &[f64], arity: usize) -> Result<Vec<f64>> {
    let Basis::Partition(p) = basis else {
        return Err(Error::InvalidBasis("partition_fit needs an indicator basis".into()));
    };
    let m = xs.len() / d;
    if m == 0 || xs.len() != m * d || responses.len() != m * arity {
        return Err(Error::Dimension("sample and response lengths disagree".into()));
    }
    let mut sums = vec![0.0; p.cells() * arity];
    let mut counts = vec![0usize; p.cells()];
    for s in 0..m {
        let r = &responses[s * arity..(s + 1) * arity];
        let x = &xs[s * d..(s + 1) * d];
        if r.iter().chain(x).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { sample: s, time_point: None });
        }
        if let Some(c) = p.locate(x) {
            counts[c] += 1;
            for a in 0..arity {
                sums[c * arity + a] += r[a];
            }
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            for a in 0..arity {
                sums[c * arity + a] /= n as f64;
            }
        }
    }
    Ok(sums)
}

/// `x -> T_bound(coef^T phi(x))`.
#[derive(Debug, Clone)]
pub struct FittedFunction {
    basis: Arc<Basis>,
    coef: Vec<f64>,
    arity: usize,
    bound: f64,
}

impl FittedFunction {
    pub fn new(basis: Arc<Basis>, coef: Vec<f64>, arity: usize, bound: f64) -> Result<Self> {
        if coef.len() != basis.dim() * arity {
            return Err(Error::Dimension(format!(
                "{} coefficients for K = {} and arity {arity}",
                coef.len(),
                basis.dim()
            )));
        }
        if !(bound > 0.0) {
            return Err(Error::InvalidBasis(format!("truncation bound must be positive, got {bound}")));
        }
        Ok(Self { basis, coef, arity, bound })
    }

    pub fn constant(values: Vec<f64>, bound: f64) -> Self {
        let arity = values.len();
        let mut f = Self { basis: Arc::new(Basis::Constant), coef: values, arity, bound };
        truncate(&mut f.coef, bound);
        f
    }

    pub fn zero(arity: usize) -> Self {
        Self::constant(vec![0.0; arity], f64::INFINITY)
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn is_zero(&self) -> bool {
        self.coef.iter().all(|c| *c == 0.0)
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        let bs = self.basis.block_size();
        let mut stack = [0.0f64; 64];
        let mut heap;
        let f: &mut [f64] = if bs <= 64 {
            &mut stack[..bs]
        } else {
            heap = vec![0.0; bs];
            &mut heap
        };
        let b = self.basis.features(x, f);
        self.eval_features(b, f, out);
    }

    /// Evaluates from features already computed by this function's basis.
    pub fn eval_features(&self, block: Option<usize>, f: &[f64], out: &mut [f64]) {
        let bs = self.basis.block_size();
        let out = &mut out[..self.arity];
        out.fill(0.0);
        if let Some(b) = block {
            let c = &self.coef[b * bs * self.arity..(b + 1) * bs * self.arity];
            for r in 0..bs {
                for a in 0..self.arity {
                    out[a] += f[r] * c[r * self.arity + a];
                }
            }
        }
        truncate(out, self.bound);
    }

    pub fn eval_scalar(&self, x: &[f64]) -> f64 {
        let mut o = [0.0];
        self.eval(x, &mut o);
        o[0]
    }

    /// Writes `block,feature,coef_0,...` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["block".to_string(), "feature".to_string()];
        header.extend((0..self.arity).map(|a| format!("coef_{a}")));
        wr.write_record(&header)?;
        let bs = self.basis.block_size();
        for b in 0..self.basis.blocks() {
            for r in 0..bs {
                let mut row = vec![b.to_string(), r.to_string()];
                let k = b * bs + r;
                row.extend((0..self.arity).map(|a| self.coef[k * self.arity + a].to_string()));
                wr.write_record(&row)?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Least squares fit of dense features, used by tests and small problems.
pub fn dense_lstsq(features: &DMatrix<f64>, responses: &DVector<f64>) -> DVector<f64> {
    let svd = features.clone().svd(true, true);
    let tol = PIVOT_TOL * svd.singular_values.max();
    svd.solve(responses, tol).expect("SVD computed with both factors")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::basis::Partition;

    #[test]
    fn constant_fit_is_mean() {
        let c = ols_fit(&Basis::Constant, 1, &[0.0, 5.0], &[1.0, 3.0], 1).unwrap();
        assert_eq!(c, vec![2.0]);
    }

    #[test]
    fn partition_fit_cell_means() {
        let b = Basis::Partition(Partition::uniform_box(1, 2, 0.0, 1.0).unwrap());
        let c = partition_fit(&b, 1, &[0.1, 0.9, 0.95], &[1.0, 2.0, 4.0], 1).unwrap();
        assert_eq!(c, vec![1.0, 3.0]);
        let c = partition_fit(&b, 1, &[0.9, 0.95], &[2.0, 4.0], 1).unwrap();
        assert_eq!(c, vec![0.0, 3.0]);
    }

    #[test]
    fn nonfinite_response_names_sample() {
        let e = ols_fit(&Basis::Constant, 1, &[0.0, 1.0, 2.0], &[1.0, f64::NAN, 0.0], 1).unwrap_err();
        assert!(matches!(e, Error::NonFinite { sample: 1, .. }));
    }

    #[test]
    fn truncate_clamps() {
        let mut v = [3.0, -5.0];
        truncate(&mut v, 2.0);
        assert_eq!(v, [2.0, -2.0]);
        let mut w = [1e300, -7.0];
        truncate(&mut w, f64::INFINITY);
        assert_eq!(w, [1e300, -7.0]);
        let mut u = [0.5];
        truncate(&mut u, 1.0);
        assert_eq!(u, [0.5]);
    }

    #[test]
    fn fitted_function_truncates() {
        let f = FittedFunction::new(Arc::new(Basis::Constant), vec![5.0, -1.0], 2, 2.0).unwrap();
        let mut o = [0.0; 2];
        f.eval(&[0.0], &mut o);
        assert_eq!(o, [2.0, -1.0]);
    }

    #[test]
    fn csv_export() {
        let b = Basis::Partition(Partition::uniform_box(1, 2, 0.0, 1.0).unwrap());
        let f = FittedFunction::new(Arc::new(b), vec![1.0, 3.0], 1, f64::INFINITY).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "block,feature,coef_0\n0,0,1\n1,0,3\n");
    }
}
