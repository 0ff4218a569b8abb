use nalgebra::{DMatrix, SymmetricEigen};

/// Gauss–Hermite rule for the standard normal law: `E[f(N)] ~ sum w_j f(x_j)`.
/// Nodes and weights come from the eigen-decomposition of the Jacobi matrix
/// of the probabilists' Hermite recurrence.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "at least one node");
        let jacobi =
            DMatrix::from_fn(n, n, |r, c| if r + 1 == c || c + 1 == r { (r.max(c) as f64).sqrt() } else { 0.0 });
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> =
            (0..n).map(|j| (eig.eigenvalues[j], eig.eigenvectors[(0, j)].powi(2))).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Self { nodes: pairs.iter().map(|p| p.0).collect(), weights: pairs.iter().map(|p| p.1 / total).collect() }
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    /// Tensor rule in `d` dimensions.
    pub fn expect_nd(&self, d: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
        let n = self.nodes.len();
        let mut idx = vec![0usize; d];
        let mut x = vec![0.0; d];
        let mut acc = 0.0;
        loop {
            let mut w = 1.0;
            for a in 0..d {
                x[a] = self.nodes[idx[a]];
                w *= self.weights[idx[a]];
            }
            acc += w * f(&x);
            let mut a = 0;
            loop {
                if a == d {
                    return acc;
                }
                idx[a] += 1;
                if idx[a] < n {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_moments() {
        let gh = GaussHermite::new(20);
        assert!((gh.expect(|_| 1.0) - 1.0).abs() < 1e-14);
        assert!(gh.expect(|x| x).abs() < 1e-13);
        assert!((gh.expect(|x| x * x) - 1.0).abs() < 1e-12);
        assert!((gh.expect(|x| x.powi(4)) - 3.0).abs() < 1e-11);
        // E[cos N] = e^{-1/2}
        assert!((gh.expect(f64::cos) - (-0.5f64).exp()).abs() < 1e-13);
        assert!((gh.expect_nd(2, |x| x[0] * x[0] * x[1] * x[1]) - 1.0).abs() < 1e-11);
    }
}
