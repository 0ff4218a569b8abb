use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned hypercube partition. Each axis has `cells + 1` increasing
/// edges; outer edges may be infinite, in which case the partition covers
/// all of `R^d` on that axis. Points outside finite outer edges belong to no
/// cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    edges: Vec<Vec<f64>>,
    anchors: Vec<Vec<f64>>,
}

impl Partition {
    pub fn new(edges: Vec<Vec<f64>>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::InvalidBasis("partition needs at least one axis".into()));
        }
        for (a, e) in edges.iter().enumerate() {
            if e.len() < 2 {
                return Err(Error::InvalidBasis(format!("axis {a} needs at least two edges")));
            }
            if e.iter().any(|v| v.is_nan()) || e.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidBasis(format!("edges on axis {a} must increase strictly")));
            }
            if e[1..e.len() - 1].iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidBasis(format!("inner edges on axis {a} must be finite")));
            }
        }
        let anchors = edges
            .iter()
            .map(|e| {
                e.windows(2)
                    .map(|w| match (w[0].is_finite(), w[1].is_finite()) {
                        (true, true) => 0.5 * (w[0] + w[1]),
                        (true, false) => w[0],
                        (false, true) => w[1],
                        (false, false) => 0.0,
                    })
                    .collect()
            })
            .collect();
        Ok(Self { edges, anchors })
    }

    /// `cells` equal cells per axis on `[low, high]^d`.
    pub fn uniform_box(d: usize, cells: usize, low: f64, high: f64) -> Result<Self> {
        if cells == 0 || !(high > low) || !low.is_finite() || !high.is_finite() {
            return Err(Error::InvalidBasis("box needs cells > 0 and finite low < high".into()));
        }
        let axis: Vec<f64> = (0..=cells).map(|j| low + (high - low) * j as f64 / cells as f64).collect();
        Self::new(vec![axis; d])
    }

    pub fn dim(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Vec<f64>] {
        &self.edges
    }

    pub fn cells_per_axis(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.len() - 1).collect()
    }

    pub fn cells(&self) -> usize {
        self.edges.iter().map(|e| e.len() - 1).product()
    }

    /// Row-major cell index, first axis slowest.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for (e, &v) in self.edges.iter().zip(x) {
            let n = e.len() - 1;
            if !(v >= e[0] && v <= e[n]) {
                return None;
            }
            // cells are [e_j, e_{j+1}); the last cell also takes its right edge
            let j = (e[1..n].partition_point(|&b| b <= v)).min(n - 1);
            idx = idx * n + j;
        }
        Some(idx)
    }

    fn anchor(&self, cell: usize, out: &mut [f64]) {
        let mut rem = cell;
        for a in (0..self.edges.len()).rev() {
            let n = self.edges[a].len() - 1;
            out[a] = self.anchors[a][rem % n];
            rem /= n;
        }
    }
}

/// Probabilists' Hermite polynomials in `(x - center) / scale`, normalized
/// by `1 / sqrt(j!)` per axis, over all multi-indices of total degree at
/// most `degree`. Orthonormal under `N(center, scale^2 I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hermite {
    degree: usize,
    center: Vec<f64>,
    scale: f64,
    multi: Vec<[u8; 4]>,
    norms: Vec<f64>,
}

impl Hermite {
    pub fn new(degree: usize, center: Vec<f64>, scale: f64) -> Result<Self> {
        let d = center.len();
        if d == 0 || d > 4 || degree > 15 {
            return Err(Error::InvalidBasis("Hermite basis supports 1 <= d <= 4 and degree <= 15".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidBasis(format!("Hermite scale must be positive, got {scale}")));
        }
        let mut multi = Vec::new();
        let mut cur = vec![0usize; d];
        fn rec(a: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if a == cur.len() {
                out.push(cur.clone());
                return;
            }
            for j in 0..=left {
                cur[a] = j;
                rec(a + 1, left - j, cur, out);
            }
            cur[a] = 0;
        }
        rec(0, degree, &mut cur, &mut multi);
        multi.sort_by_key(|m| m.iter().sum::<usize>());
        let multi = multi
            .into_iter()
            .map(|m| {
                let mut f = [0u8; 4];
                for (a, &j) in m.iter().enumerate() {
                    f[a] = j as u8;
                }
                f
            })
            .collect();
        let mut norms = vec![1.0; degree + 1];
        let mut fact = 1.0;
        for j in 1..=degree {
            fact *= j as f64;
            norms[j] = 1.0 / fact.sqrt();
        }
        Ok(Self { degree, center, scale, multi, norms })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.multi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multi.is_empty()
    }

    fn features(&self, x: &[f64], out: &mut [f64]) {
        let d = self.center.len();
        let p = self.degree + 1;
        let mut table = [0.0f64; 4 * 16];
        for a in 0..d {
            let z = (x[a] - self.center[a]) / self.scale;
            let row = &mut table[a * p..(a + 1) * p];
            row[0] = 1.0;
            if p > 1 {
                row[1] = z;
            }
            for j in 1..p - 1 {
                row[j + 1] = z * row[j] - j as f64 * row[j - 1];
            }
            for (v, c) in row.iter_mut().zip(&self.norms) {
                *v *= c;
            }
        }
        if d == 1 {
            // multi-indices are 0..=degree in order
            out[..p].copy_from_slice(&table[..p]);
            return;
        }
        for (o, m) in out.iter_mut().zip(&self.multi) {
            let mut v = table[m[0] as usize];
            for a in 1..d {
                v *= table[a * p + m[a] as usize];
            }
            *o = v;
        }
    }
}

/// A finite regression space with block-diagonal structure: every point
/// activates at most one block of `block_size` features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Basis {
    Constant,
    /// Cell indicators.
    Partition(Partition),
    /// `(1, x - anchor)` on each cell.
    LocalAffine(Partition),
    Hermite(Hermite),
}

impl Basis {
    /// Total number of scalar basis functions `K`.
    pub fn dim(&self) -> usize {
        self.blocks() * self.block_size()
    }

    pub fn blocks(&self) -> usize {
        match self {
            Basis::Constant | Basis::Hermite(_) => 1,
            Basis::Partition(p) | Basis::LocalAffine(p) => p.cells(),
        }
    }

    pub fn block_size(&self) -> usize {
        match self {
            Basis::Constant | Basis::Partition(_) => 1,
            Basis::LocalAffine(p) => 1 + p.dim(),
            Basis::Hermite(h) => h.len(),
        }
    }

    /// Writes the active block's features into `out[..block_size]` and
    /// returns the block, or `None` when every feature vanishes at `x`.
    pub fn features(&self, x: &[f64], out: &mut [f64]) -> Option<usize> {
        match self {
            Basis::Constant => {
                out[0] = 1.0;
                Some(0)
            }
            Basis::Partition(p) => {
                let cell = p.locate(x)?;
                out[0] = 1.0;
                Some(cell)
            }
            Basis::LocalAffine(p) => {
                let cell = p.locate(x)?;
                let d = p.dim();
                out[0] = 1.0;
                p.anchor(cell, &mut out[1..=d]);
                for a in 0..d {
                    out[1 + a] = x[a] - out[1 + a];
                }
                Some(cell)
            }
            Basis::Hermite(h) => {
                h.features(x, out);
                Some(0)
            }
        }
    }

    /// Full length-`K` feature vector.
    pub fn dense_features(&self, x: &[f64]) -> Vec<f64> {
        let bs = self.block_size();
        let mut block = vec![0.0; bs];
        let mut out = vec![0.0; self.dim()];
        if let Some(b) = self.features(x, &mut block) {
            out[b * bs..(b + 1) * bs].copy_from_slice(&block);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_locate() {
        let p = Partition::uniform_box(1, 2, 0.0, 1.0).unwrap();
        assert_eq!(p.locate(&[0.1]), Some(0));
        assert_eq!(p.locate(&[0.5]), Some(1));
        assert_eq!(p.locate(&[1.0]), Some(1));
        assert_eq!(p.locate(&[1.01]), None);
        assert_eq!(p.locate(&[-0.01]), None);
        let q = Partition::uniform_box(2, 3, -1.0, 2.0).unwrap();
        assert_eq!(q.locate(&[1.5, -0.5]), Some(2 * 3));
        let r = Partition::new(vec![vec![f64::NEG_INFINITY, 0.0, f64::INFINITY]]).unwrap();
        assert_eq!(r.locate(&[-1e300]), Some(0));
        assert_eq!(r.locate(&[0.0]), Some(1));
    }

    #[test]
    fn at_most_one_active_block() {
        let p = Partition::uniform_box(2, 4, 0.0, 1.0).unwrap();
        let b = Basis::LocalAffine(p);
        let f = b.dense_features(&[0.3, 0.9]);
        assert_eq!(f.len(), 16 * 3);
        assert!(f.iter().filter(|v| **v != 0.0).count() <= 3);
        assert!(b.dense_features(&[2.0, 0.0]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hermite_values() {
        let h = Hermite::new(3, vec![0.0], 2.0).unwrap();
        let mut out = [0.0; 4];
        h.features(&[2.0], &mut out);
        // z = 1: He = 1, 1, 0, -2; norms 1, 1, 1/sqrt2, 1/sqrt6
        assert_eq!(out[0], 1.0);
        assert_eq!(out[1], 1.0);
        assert_eq!(out[2], 0.0);
        assert!((out[3] + 2.0 / 6f64.sqrt()).abs() < 1e-15);
        assert_eq!(Hermite::new(2, vec![0.0; 3], 1.0).unwrap().len(), 10);
    }
}
