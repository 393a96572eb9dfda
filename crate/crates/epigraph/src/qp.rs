//! Graph-learning quadratic program: minimize
//! `lambda_l * ||L||_F^2 + lambda_s * sum g[c,c'] L[c,c']` over admissible
//! Laplacians, reduced to the off-diagonal weight vector and solved by a
//! predictor-corrector interior-point method.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::{edge_pairs, GraphLaplacian, SmoothnessGram};
use crate::linalg::{cholesky_lower, cholesky_solve};

/// Affine change of variables from admissible Laplacians to the edge-weight
/// vector: off-diagonals carry `w_e <= 0`, diagonals absorb negated row sums,
/// and the trace constraint becomes the budget `sum w = -C/2`.
#[derive(Debug, Clone)]
pub struct WeightMap {
    c: usize,
    pairs: Vec<(usize, usize)>,
    /// Quadratic form of `||L(w)||_F^2 = w^T h w`: `h = A^T A + 2 I` with A
    /// the unsigned node-edge incidence matrix.
    h: Array2<f64>,
}

impl WeightMap {
    pub fn new(c: usize) -> Result<Self> {
        if c < 2 {
            return Err(Error::InvalidParameter(format!(
                "graph learning needs at least 2 territories, got {c}"
            )));
        }
        let pairs = edge_pairs(c);
        let e = pairs.len();
        let mut h = Array2::zeros((e, e));
        for (a, &(i, j)) in pairs.iter().enumerate() {
            for (b, &(k, l)) in pairs.iter().enumerate() {
                let shared = [i, j]
                    .iter()
                    .filter(|&&v| v == k || v == l)
                    .count();
                h[(a, b)] = shared as f64;
            }
        }
        for a in 0..e {
            h[(a, a)] += 2.0;
        }
        Ok(Self { c, pairs, h })
    }

    pub fn n_edges(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Trace constraint in weight space: `sum w = -C/2`.
    pub fn budget(&self) -> f64 {
        -(self.c as f64) / 2.0
    }

    pub fn quadratic(&self) -> &Array2<f64> {
        &self.h
    }

    /// Coefficients of the linear term: `sum g L(w) = sum_e b_e w_e` with
    /// `b_e = 2 g[c,c'] - g[c,c] - g[c',c']`, the negated squared row gap.
    pub fn linear_coeffs(&self, g: &SmoothnessGram) -> Vec<f64> {
        let gm = g.matrix();
        self.pairs
            .iter()
            .map(|&(i, j)| 2.0 * gm[(i, j)] - gm[(i, i)] - gm[(j, j)])
            .collect()
    }

    pub fn laplacian(&self, w: &[f64]) -> Result<GraphLaplacian> {
        GraphLaplacian::from_weights(self.c, w)
    }
}

/// Primal weights and dual multipliers carried across alternating rounds.
#[derive(Debug, Clone)]
pub struct QpWarmStart {
    /// Edge weights (nonpositive).
    pub weights: Vec<f64>,
    /// Multiplier of the trace (budget) equality.
    pub eq_multiplier: f64,
    /// Multipliers of the edgewise sign constraints (nonnegative).
    pub ineq_multipliers: Vec<f64>,
}

/// Shift a warm start into the strict interior required by the method.
const INTERIOR_SHIFT: f64 = 1e-8;

/// Relative tolerance on the duality gap and on primal/dual feasibility.
/// Tight enough that solutions are reliably inside 1e-8 per entry; the
/// Newton iteration converges superlinearly, so the extra steps are cheap.
const QP_TOLERANCE: f64 = 1e-12;

const MAX_NEWTON_STEPS: usize = 200;

/// Solve the graph-learning program for the unique admissible minimizer.
///
/// Internally works on `s = -w >= 0` with the objective normalized by
/// `lambda_l`: minimize `s^T h s + q^T s` with `q = -(lambda_s/lambda_l) b`,
/// subject to `sum s = C/2`, `s >= 0`. Tolerances are relative to the
/// problem scale so accuracy is uniform across hyperparameter magnitudes.
pub fn solve_laplacian_qp(
    g: &SmoothnessGram,
    lambda_s: f64,
    lambda_l: f64,
    warm: Option<&QpWarmStart>,
) -> Result<(GraphLaplacian, QpWarmStart)> {
    if !(lambda_l > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda_l must be positive for strict convexity, got {lambda_l}"
        )));
    }
    if !(lambda_s >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda_s must be nonnegative, got {lambda_s}"
        )));
    }
    let c = g.dim();
    let map = WeightMap::new(c)?;
    let e = map.n_edges();
    let h = map.quadratic();
    let b = map.linear_coeffs(g);
    let q: Vec<f64> = b.iter().map(|x| -x * lambda_s / lambda_l).collect();
    let target = -map.budget(); // sum s = C/2

    let grad = |s: &[f64], out: &mut Vec<f64>| {
        for i in 0..e {
            let mut acc = q[i];
            for j in 0..e {
                acc += 2.0 * h[(i, j)] * s[j];
            }
            out[i] = acc;
        }
    };

    // strictly interior start, warm when supplied
    let mut s: Vec<f64> = match warm {
        Some(ws) if ws.weights.len() == e => ws
            .weights
            .iter()
            .map(|&w| (-w).max(INTERIOR_SHIFT))
            .collect(),
        _ => vec![target / e as f64; e],
    };
    let mut z: Vec<f64> = match warm {
        Some(ws) if ws.ineq_multipliers.len() == e => ws
            .ineq_multipliers
            .iter()
            .map(|&v| v.max(INTERIOR_SHIFT))
            .collect(),
        _ => vec![1.0 + q.iter().fold(0.0f64, |m, v| m.max(v.abs())); e],
    };
    let mut y: f64 = warm.map_or(0.0, |ws| ws.eq_multiplier);

    let scale_dual = 1.0 + q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale_primal = 1.0 + target;

    let mut g_buf = vec![0.0; e];
    let mut r_d = vec![0.0; e];
    let mut rhs = vec![0.0; e];
    let mut ones_sol = vec![0.0; e];
    let mut ds_aff = vec![0.0; e];
    let mut dz_aff = vec![0.0; e];
    let mut ds = vec![0.0; e];
    let mut dz = vec![0.0; e];
    let mut m = Array2::<f64>::zeros((e, e));

    let mut gap = f64::INFINITY;
    let mut feas = f64::INFINITY;
    for _step in 0..MAX_NEWTON_STEPS {
        grad(&s, &mut g_buf);
        for i in 0..e {
            r_d[i] = g_buf[i] - y - z[i];
        }
        let r_p: f64 = s.iter().sum::<f64>() - target;
        let mu: f64 = s.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() / e as f64;

        gap = mu * e as f64;
        feas = (r_p.abs() / scale_primal)
            .max(r_d.iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale_dual);
        if gap <= QP_TOLERANCE * scale_dual && feas <= QP_TOLERANCE {
            let weights: Vec<f64> = s.iter().map(|&v| -v).collect();
            let lap = map.laplacian(&weights)?;
            return Ok((
                lap,
                QpWarmStart {
                    weights,
                    eq_multiplier: y,
                    ineq_multipliers: z,
                },
            ));
        }

        // normal matrix 2h + diag(z/s), shared by predictor and corrector
        for i in 0..e {
            for j in 0..e {
                m[(i, j)] = 2.0 * h[(i, j)];
            }
            m[(i, i)] += z[i] / s[i];
        }
        let factor = cholesky_lower(&m).map_err(|_| Error::QpNoConvergence {
            gap,
            feasibility: feas,
            iterations: _step,
            last_weights: s.iter().map(|&v| -v).collect(),
        })?;

        // predictor: pure Newton step toward complementarity zero
        for i in 0..e {
            rhs[i] = -r_d[i] - z[i];
        }
        cholesky_solve(&factor, &mut rhs);
        for i in 0..e {
            ones_sol[i] = 1.0;
        }
        cholesky_solve(&factor, &mut ones_sol);
        let denom: f64 = ones_sol.iter().sum();
        let dy_aff = (-r_p - rhs.iter().sum::<f64>()) / denom;
        for i in 0..e {
            ds_aff[i] = rhs[i] + ones_sol[i] * dy_aff;
            dz_aff[i] = -z[i] - z[i] / s[i] * ds_aff[i];
        }
        let alpha_aff = step_to_boundary(&s, &ds_aff).min(step_to_boundary(&z, &dz_aff));
        let mu_aff: f64 = (0..e)
            .map(|i| (s[i] + alpha_aff * ds_aff[i]) * (z[i] + alpha_aff * dz_aff[i]))
            .sum::<f64>()
            / e as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(1e-8, 1.0);

        // corrector with centering and the second-order complementarity term
        for i in 0..e {
            let r_c = s[i] * z[i] - sigma * mu + ds_aff[i] * dz_aff[i];
            rhs[i] = -r_d[i] - r_c / s[i];
        }
        cholesky_solve(&factor, &mut rhs);
        let dy = (-r_p - rhs.iter().sum::<f64>()) / denom;
        for i in 0..e {
            ds[i] = rhs[i] + ones_sol[i] * dy;
            let r_c = s[i] * z[i] - sigma * mu + ds_aff[i] * dz_aff[i];
            dz[i] = -(r_c + z[i] * ds[i]) / s[i];
        }
        let alpha = 0.9995 * step_to_boundary(&s, &ds).min(step_to_boundary(&z, &dz));
        let alpha = alpha.min(1.0);
        for i in 0..e {
            s[i] += alpha * ds[i];
            z[i] += alpha * dz[i];
        }
        y += alpha * dy;
    }
    Err(Error::QpNoConvergence {
        gap,
        feasibility: feas,
        iterations: MAX_NEWTON_STEPS,
        last_weights: s.iter().map(|&v| -v).collect(),
    })
}

/// Largest step in `[0, 1]` keeping `v + alpha*dv` strictly positive.
fn step_to_boundary(v: &[f64], dv: &[f64]) -> f64 {
    let mut alpha = 1.0f64;
    for (&vi, &di) in v.iter().zip(dv) {
        if di < 0.0 {
            alpha = alpha.min(-vi / di);
        }
    }
    alpha
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::gram;
    use crate::model::ReproMatrix;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_gram(c: usize, t: usize, seed: u64) -> SmoothnessGram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = Array2::from_shape_fn((c, t), |_| rng.random_range(0.0..3.0));
        gram(&ReproMatrix::new(r).unwrap())
    }

    #[test]
    fn weight_map_basics() {
        let map2 = WeightMap::new(2).unwrap();
        assert_eq!(map2.n_edges(), 1);
        assert_eq!(map2.budget(), -1.0);
        let map3 = WeightMap::new(3).unwrap();
        assert_eq!(map3.n_edges(), 3);
        assert_eq!(map3.budget(), -1.5);
        assert!(WeightMap::new(1).is_err());
    }

    #[test]
    fn weight_map_quadratic_matches_frobenius() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for c in 2..6usize {
            let map = WeightMap::new(c).unwrap();
            let e = map.n_edges();
            let raw: Vec<f64> = (0..e).map(|_| -rng.random_range(0.01..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|x| x * map.budget() / total).collect();
            let lap = map.laplacian(&w).unwrap();
            let frob: f64 = lap.matrix().iter().map(|x| x * x).sum();
            let mut quad = 0.0;
            for i in 0..e {
                for j in 0..e {
                    quad += w[i] * map.quadratic()[(i, j)] * w[j];
                }
            }
            assert!((frob - quad).abs() < 1e-10 * frob);
        }
    }

    #[test]
    fn weight_map_linear_matches_entrywise_sum() {
        let g = random_gram(4, 7, 62);
        let map = WeightMap::new(4).unwrap();
        let b = map.linear_coeffs(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let raw: Vec<f64> = (0..map.n_edges())
            .map(|_| -rng.random_range(0.01..1.0))
            .collect();
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x * map.budget() / total).collect();
        let lap = map.laplacian(&w).unwrap();
        let direct: f64 = g
            .matrix()
            .iter()
            .zip(lap.matrix().iter())
            .map(|(a, b)| a * b)
            .sum();
        let reduced: f64 = b.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((direct - reduced).abs() < 1e-9 * direct.abs().max(1.0));
    }

    #[test]
    fn two_territories_forced_solution() {
        let g = random_gram(2, 9, 64);
        let (lap, _) = solve_laplacian_qp(&g, 1.0, 0.1, None).unwrap();
        let l = lap.matrix();
        assert!((l[(0, 0)] - 1.0).abs() < 1e-8);
        assert!((l[(0, 1)] + 1.0).abs() < 1e-8);
        assert!((l[(1, 0)] + 1.0).abs() < 1e-8);
        assert!((l[(1, 1)] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn zero_smoothness_gives_complete_graph() {
        for c in [3usize, 5, 9] {
            let g = random_gram(c, 12, 65 + c as u64);
            let (lap, _) = solve_laplacian_qp(&g, 0.0, 0.5, None).unwrap();
            let expect = -1.0 / (c as f64 - 1.0);
            for (i, j) in edge_pairs(c) {
                assert!(
                    (lap.matrix()[(i, j)] - expect).abs() < 1e-8,
                    "edge ({i},{j}) weight {} vs {expect}",
                    lap.matrix()[(i, j)]
                );
            }
            for i in 0..c {
                assert!((lap.matrix()[(i, i)] - 1.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn kkt_conditions_hold_at_solution() {
        for seed in 70..80 {
            let c = 5;
            let g = random_gram(c, 15, seed);
            let lambda_s = 0.7;
            let lambda_l = 0.05;
            let (lap, ws) = solve_laplacian_qp(&g, lambda_s, lambda_l, None).unwrap();
            let map = WeightMap::new(c).unwrap();
            let b = map.linear_coeffs(&g);
            let w = lap.weights();
            // stationarity of lambda_l w'Hw + lambda_s b'w with multipliers:
            // 2 lambda_l (Hw)_e + lambda_s b_e - y' + z'_e = 0 in w-space,
            // where the solver reports s-space multipliers; map them back.
            let e = map.n_edges();
            for i in 0..e {
                let mut hw = 0.0;
                for j in 0..e {
                    hw += map.quadratic()[(i, j)] * w[j];
                }
                // s-space KKT: 2 h s + q - y - z = 0 with s = -w,
                // q = -(lambda_s/lambda_l) b
                let resid =
                    -2.0 * hw - lambda_s / lambda_l * b[i] - ws.eq_multiplier - ws.ineq_multipliers[i];
                let scale = 1.0 + (lambda_s / lambda_l * b[i]).abs();
                assert!(resid.abs() < 1e-7 * scale, "stationarity residual {resid}");
                // complementarity and signs
                assert!(w[i] <= 1e-12);
                assert!(ws.ineq_multipliers[i] >= -1e-12);
                assert!((w[i] * ws.ineq_multipliers[i]).abs() < 1e-7);
            }
            let budget: f64 = w.iter().sum();
            assert!((budget - map.budget()).abs() < 1e-9);
        }
    }

    #[test]
    fn warm_start_does_not_change_solution() {
        let c = 6;
        let g_a = random_gram(c, 20, 81);
        let g_b = random_gram(c, 20, 82);
        let (_, warm) = solve_laplacian_qp(&g_a, 2.0, 0.2, None).unwrap();
        let (cold_l, _) = solve_laplacian_qp(&g_b, 2.0, 0.2, None).unwrap();
        let (warm_l, _) = solve_laplacian_qp(&g_b, 2.0, 0.2, Some(&warm)).unwrap();
        for (a, b) in cold_l.matrix().iter().zip(warm_l.matrix().iter()) {
            assert!((a - b).abs() < 1e-8, "warm {b} vs cold {a}");
        }
    }

    #[test]
    fn restart_at_solution_converges_quickly() {
        let g = random_gram(4, 15, 83);
        let (first, warm) = solve_laplacian_qp(&g, 1.0, 0.1, None).unwrap();
        let (second, _) = solve_laplacian_qp(&g, 1.0, 0.1, Some(&warm)).unwrap();
        for (a, b) in first.matrix().iter().zip(second.matrix().iter()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn sparsity_monotone_in_lambda_l() {
        // two clusters of identical rows: cross edges cost smoothness
        let mut r = Array2::zeros((6, 10));
        for t in 0..10 {
            for i in 0..3 {
                r[(i, t)] = 1.0 + t as f64 * 0.1;
            }
            for i in 3..6 {
                r[(i, t)] = 3.0 - t as f64 * 0.05;
            }
        }
        let g = gram(&ReproMatrix::new(r).unwrap());
        let mut prev_support = usize::MAX;
        for lambda_l in [100.0, 10.0, 1.0, 0.1, 0.01] {
            let (lap, _) = solve_laplacian_qp(&g, 1.0, lambda_l, None).unwrap();
            let support = lap.support(1e-6).len();
            assert!(
                support <= prev_support,
                "support grew from {prev_support} to {support} at lambda_l={lambda_l}"
            );
            prev_support = support;
        }
    }

    #[test]
    fn clusters_get_no_cross_edges() {
        let mut r = Array2::zeros((6, 10));
        for t in 0..10 {
            for i in 0..3 {
                r[(i, t)] = 1.5;
            }
            for i in 3..6 {
                r[(i, t)] = 4.0;
            }
        }
        let g = gram(&ReproMatrix::new(r).unwrap());
        let (lap, _) = solve_laplacian_qp(&g, 10.0, 0.01, None).unwrap();
        for (i, j) in edge_pairs(6) {
            let cross = (i < 3) != (j < 3);
            if cross {
                assert!(
                    lap.matrix()[(i, j)].abs() <= 1e-8,
                    "cross edge ({i},{j}) has weight {}",
                    lap.matrix()[(i, j)]
                );
            }
        }
        let comps = lap.connected_components(1e-6);
        assert_eq!(comps, vec![vec![0, 1, 2], vec![3, 4, 5]]);
    }
}
