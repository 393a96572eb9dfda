//! Graph Laplacian type with its admissibility constraints, the smoothness
//! Gram matrix, and the jittered Cholesky factorization feeding the spatial
//! block of the primal-dual solver.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg::cholesky_lower;
use crate::model::ReproMatrix;
use crate::prox::FactorMatrix;

/// Off-diagonal entry pairs `(c, c')` with `c < c'` in lexicographic order;
/// the canonical edge enumeration shared by the weight-vector reduction.
pub fn edge_pairs(c: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(c * (c - 1) / 2);
    for i in 0..c {
        for j in i + 1..c {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Symmetric Laplacian of a weighted graph on C territories: nonpositive
/// off-diagonals, zero row sums, trace fixed to C.
#[derive(Debug, Clone)]
pub struct GraphLaplacian {
    l: Array2<f64>,
}

impl GraphLaplacian {
    pub fn new(l: Array2<f64>) -> Result<Self> {
        let c = l.nrows();
        if l.ncols() != c || c < 2 {
            return Err(Error::DimensionMismatch(format!(
                "laplacian must be square with at least 2 territories, got {}x{}",
                c,
                l.ncols()
            )));
        }
        for i in 0..c {
            for j in 0..c {
                if l[(i, j)] != l[(j, i)] {
                    return Err(Error::InvalidParameter(format!(
                        "laplacian asymmetric at ({i},{j}): {} vs {}",
                        l[(i, j)],
                        l[(j, i)]
                    )));
                }
                if i != j && l[(i, j)] > 1e-12 {
                    return Err(Error::InvalidParameter(format!(
                        "positive off-diagonal {} at ({i},{j})",
                        l[(i, j)]
                    )));
                }
            }
        }
        for i in 0..c {
            let row_sum: f64 = l.row(i).sum();
            if row_sum.abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "row {i} sums to {row_sum:e}, expected 0"
                )));
            }
        }
        let trace: f64 = (0..c).map(|i| l[(i, i)]).sum();
        if (trace - c as f64).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "trace is {trace}, expected {c}"
            )));
        }
        Ok(Self { l })
    }

    /// Build from edge weights `w <= 0` in [`edge_pairs`] order; diagonals
    /// absorb the negated row sums so the constraints hold by construction.
    /// Weights must satisfy the trace budget `sum w = -C/2` within 1e-9.
    pub fn from_weights(c: usize, w: &[f64]) -> Result<Self> {
        let pairs = edge_pairs(c);
        if w.len() != pairs.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} edges",
                w.len(),
                pairs.len()
            )));
        }
        let mut l = Array2::zeros((c, c));
        for (&(i, j), &we) in pairs.iter().zip(w) {
            l[(i, j)] = we;
            l[(j, i)] = we;
        }
        for i in 0..c {
            let off: f64 = (0..c).filter(|&j| j != i).map(|j| l[(i, j)]).sum();
            l[(i, i)] = -off;
        }
        Self::new(l)
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Edge weights in [`edge_pairs`] order (the negated adjacency).
    pub fn weights(&self) -> Vec<f64> {
        edge_pairs(self.dim())
            .iter()
            .map(|&(i, j)| self.l[(i, j)])
            .collect()
    }

    /// Upper-triangular factor with `b^T b = L + eps*I`,
    /// `eps = 1e-12 * trace(L) / C`. The jitter makes the singular Laplacian
    /// positive definite; it perturbs the spatial penalty by at most
    /// `eps * ||R||^2`.
    pub fn cholesky_factor(&self) -> Result<FactorMatrix> {
        let c = self.dim();
        let trace: f64 = (0..c).map(|i| self.l[(i, i)]).sum();
        let eps = 1e-12 * trace / c as f64;
        let jittered = &self.l + &(Array2::<f64>::eye(c) * eps);
        let g = cholesky_lower(&jittered).map_err(|e| {
            Error::Linalg(format!("laplacian factorization failed after jitter: {e}"))
        })?;
        FactorMatrix::new(g.t().to_owned())
    }

    /// Edges whose weight magnitude exceeds `threshold`.
    pub fn support(&self, threshold: f64) -> Vec<(usize, usize)> {
        edge_pairs(self.dim())
            .into_iter()
            .filter(|&(i, j)| self.l[(i, j)].abs() > threshold)
            .collect()
    }

    /// Connected components of the thresholded adjacency, each sorted, in
    /// order of smallest member.
    pub fn connected_components(&self, threshold: f64) -> Vec<Vec<usize>> {
        let c = self.dim();
        let mut seen = vec![false; c];
        let mut components = Vec::new();
        for start in 0..c {
            if seen[start] {
                continue;
            }
            let mut stack = vec![start];
            let mut comp = Vec::new();
            seen[start] = true;
            while let Some(v) = stack.pop() {
                comp.push(v);
                for u in 0..c {
                    if u != v && !seen[u] && self.l[(v, u)].abs() > threshold {
                        seen[u] = true;
                        stack.push(u);
                    }
                }
            }
            comp.sort_unstable();
            components.push(comp);
        }
        components
    }
}

/// Gram matrix of reproduction-number rows: `g = R R^T`, the coefficients of
/// the linear term in the graph-learning program.
#[derive(Debug, Clone)]
pub struct SmoothnessGram {
    g: Array2<f64>,
}

impl SmoothnessGram {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.g
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }
}

pub fn gram(r: &ReproMatrix) -> SmoothnessGram {
    let m = r.matrix();
    SmoothnessGram { g: m.dot(&m.t()) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn validates_constraints() {
        // asymmetric
        let l = array![[1.0, -1.0], [-0.5, 1.0]];
        assert!(GraphLaplacian::new(l).is_err());
        // positive off-diagonal
        let l = array![[1.0, 0.5], [0.5, 1.0]];
        assert!(GraphLaplacian::new(l).is_err());
        // bad trace
        let l = array![[0.5, -0.5], [-0.5, 0.5]];
        assert!(GraphLaplacian::new(l).is_err());
        // nonzero row sums
        let l = array![[1.5, -0.5], [-0.5, 0.5]];
        assert!(GraphLaplacian::new(l).is_err());
        // valid
        let l = array![[1.0, -1.0], [-1.0, 1.0]];
        assert!(GraphLaplacian::new(l).is_ok());
    }

    #[test]
    fn from_weights_satisfies_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for c in 2..7usize {
            let e = c * (c - 1) / 2;
            // random nonpositive weights scaled onto the trace budget
            let raw: Vec<f64> = (0..e).map(|_| -rng.random_range(0.01..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|x| x * (-(c as f64) / 2.0) / total).collect();
            let lap = GraphLaplacian::from_weights(c, &w).unwrap();
            let l = lap.matrix();
            let trace: f64 = (0..c).map(|i| l[(i, i)]).sum();
            assert!((trace - c as f64).abs() < 1e-9);
            for i in 0..c {
                assert!(l.row(i).sum().abs() < 1e-9);
            }
            assert_eq!(lap.weights().len(), e);
            for (got, want) in lap.weights().iter().zip(&w) {
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn factor_reconstructs_two_territories() {
        let lap = GraphLaplacian::new(array![[1.0, -1.0], [-1.0, 1.0]]).unwrap();
        let b = lap.cholesky_factor().unwrap();
        let back = b.reconstruct();
        let mut err = 0.0f64;
        let mut norm = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                err += (back[(i, j)] - lap.matrix()[(i, j)]).powi(2);
                norm += lap.matrix()[(i, j)].powi(2);
            }
        }
        assert!(err.sqrt() / norm.sqrt() < 1e-8);
    }

    #[test]
    fn factor_reconstructs_complete_graph() {
        let c = 4;
        let w = vec![-0.5 * 4.0 / 6.0; 6];
        let lap = GraphLaplacian::from_weights(c, &w).unwrap();
        let b = lap.cholesky_factor().unwrap();
        let back = b.reconstruct();
        let mut err = 0.0f64;
        let mut norm = 0.0f64;
        for i in 0..c {
            for j in 0..c {
                err += (back[(i, j)] - lap.matrix()[(i, j)]).powi(2);
                norm += lap.matrix()[(i, j)].powi(2);
            }
        }
        assert!(err.sqrt() / norm.sqrt() < 1e-8);
    }

    #[test]
    fn jitter_perturbation_is_bounded() {
        let lap = GraphLaplacian::from_weights(3, &[-0.5, -0.5, -0.5]).unwrap();
        let b = lap.cholesky_factor().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let r = Array2::from_shape_fn((3, 20), |_| rng.random_range(0.0..3.0));
        let br = b.matrix().dot(&r);
        let quad_b: f64 = br.iter().map(|x| x * x).sum();
        let lr = lap.matrix().dot(&r);
        let quad_l: f64 = lr.iter().zip(r.iter()).map(|(a, b)| a * b).sum();
        let r_norm_sq: f64 = r.iter().map(|x| x * x).sum();
        let eps = 1e-12;
        assert!((quad_b - quad_l).abs() <= eps * r_norm_sq + 1e-9 * quad_l.abs());
    }

    #[test]
    fn gram_examples() {
        let zero = ReproMatrix::new(Array2::zeros((3, 5))).unwrap();
        assert!(gram(&zero).matrix().iter().all(|&v| v == 0.0));

        let rows = ReproMatrix::new(Array2::from_elem((3, 5), 2.0)).unwrap();
        let g = gram(&rows);
        for &v in g.matrix().iter() {
            assert!((v - 20.0).abs() < 1e-12);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let m = Array2::from_shape_fn((3, 5), |_| rng.random_range(0.0..2.0));
        let g = gram(&ReproMatrix::new(m.clone()).unwrap());
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..5).map(|t| m[(i, t)] * m[(j, t)]).sum();
                assert!((g.matrix()[(i, j)] - dot).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn components_of_block_graph() {
        // two cliques {0,1,2} and {3,4}, no cross edges
        let c = 5;
        let pairs = edge_pairs(c);
        let mut w = vec![0.0; pairs.len()];
        let in_cluster =
            |i: usize, j: usize| (i <= 2 && j <= 2) || (i >= 3 && j >= 3);
        let n_in = pairs.iter().filter(|&&(i, j)| in_cluster(i, j)).count();
        for (e, &(i, j)) in pairs.iter().enumerate() {
            if in_cluster(i, j) {
                w[e] = -(c as f64) / 2.0 / n_in as f64;
            }
        }
        let lap = GraphLaplacian::from_weights(c, &w).unwrap();
        let comps = lap.connected_components(1e-9);
        assert_eq!(comps, vec![vec![0, 1, 2], vec![3, 4]]);
        assert_eq!(lap.support(1e-9).len(), n_in);
    }
}
