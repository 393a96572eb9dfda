//! Dense symmetric positive-definite helpers sized for graph-scale systems
//! (tens of unknowns): Cholesky factorization and triangular solves.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor `G` with `a = G G^T`.
/// Fails on non-positive pivots, which signals a non-SPD input.
pub fn cholesky_lower(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "cholesky needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let mut g = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[(i, j)];
            for k in 0..j {
                sum -= g[(i, k)] * g[(j, k)];
            }
            if i == j {
                if !(sum > 0.0) {
                    return Err(Error::Linalg(format!(
                        "non-positive pivot {sum:e} at row {i}; matrix is not positive definite"
                    )));
                }
                g[(i, j)] = sum.sqrt();
            } else {
                g[(i, j)] = sum / g[(j, j)];
            }
        }
    }
    Ok(g)
}

/// Solve `G G^T x = b` in place given the lower factor `G`.
pub fn cholesky_solve(g: &Array2<f64>, b: &mut [f64]) {
    let n = g.nrows();
    debug_assert_eq!(b.len(), n);
    // forward: G y = b
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= g[(i, k)] * b[k];
        }
        b[i] = sum / g[(i, i)];
    }
    // backward: G^T x = y
    for i in (0..n).rev() {
        let mut sum = b[i];
        for k in i + 1..n {
            sum -= g[(k, i)] * b[k];
        }
        b[i] = sum / g[(i, i)];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn factor_reconstructs() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let g = cholesky_lower(&a).unwrap();
        let back = g.dot(&g.t());
        for (x, y) in back.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky_lower(&a).is_err());
    }

    #[test]
    fn solve_matches_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..20 {
            let n = 6;
            let m = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
            let a = m.dot(&m.t()) + Array2::<f64>::eye(n) * 0.5;
            let g = cholesky_lower(&a).unwrap();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut x = b.clone();
            cholesky_solve(&g, &mut x);
            for i in 0..n {
                let mut ax = 0.0;
                for j in 0..n {
                    ax += a[(i, j)] * x[j];
                }
                assert!((ax - b[i]).abs() < 1e-9);
            }
        }
    }
}
