//! Shared oracle implementations for the integration suites. Everything here
//! recomputes reference answers by a route independent of the library code
//! under test: each proximity operator is the minimizer of a strictly convex
//! 1-D objective, found by bisecting its monotone subgradient; the graph
//! program gets projected gradient and KKT enumeration references.

use ndarray::Array2;

/// Bisection on a sign-monotone function: `d < 0` left of the root, `d > 0`
/// right of it. Requires `d(lo) <= 0 <= d(hi)`; 200 halvings put the interval
/// far below any tolerance used in the suites.
pub fn bisect_sign(d: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    assert!(d(lo) <= 0.0 && d(hi) >= 0.0, "root not bracketed");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if d(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Reference prox of `step * omega * KL(z | r*phi)` over `r >= 0` at `x`:
/// stationarity of the strictly convex objective
/// `0.5 (r-x)^2 + step*omega*(r*phi - z*ln(r))` reads
/// `r - x + step*omega*(phi - z/r) = 0`, increasing in `r`.
pub fn oracle_prox_kl(x: f64, step: f64, omega: f64, phi: f64, z: f64) -> f64 {
    let c = step * omega;
    let d = move |r: f64| r - x + c * (phi - if z > 0.0 { z / r } else { 0.0 });
    if z == 0.0 {
        // Pull toward zero can pin the minimizer at the boundary.
        if -x + c * phi >= 0.0 {
            return 0.0;
        }
        return bisect_sign(&d, 0.0, x.abs() + 1.0);
    }
    // z > 0: the subgradient runs to -inf at 0+, so the root is interior.
    let mut hi = x.abs() + c * phi + (c * z).sqrt() + 1.0;
    while d(hi) <= 0.0 {
        hi *= 2.0;
    }
    bisect_sign(&d, f64::MIN_POSITIVE, hi)
}

/// Reference prox of `threshold * |.|` at `x`; the subgradient
/// `u - x + threshold * sign(u)` is sign-monotone with the kink at zero.
pub fn oracle_prox_l1(x: f64, threshold: f64) -> f64 {
    let d = move |u: f64| u - x + threshold * u.signum();
    let w = x.abs() + threshold + 1.0;
    bisect_sign(&d, -w, w)
}

/// Reference prox of `step_lambda * v^2` at `x`.
pub fn oracle_prox_sq_l2(x: f64, step_lambda: f64) -> f64 {
    let d = move |u: f64| u - x + 2.0 * step_lambda * u;
    let w = x.abs() + 1.0;
    bisect_sign(&d, -w, w)
}

/// Euclidean projection onto the scaled simplex `{ s >= 0, sum s = total }`.
pub fn project_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let n = v.len();
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        acc += u;
        let candidate = (acc - total) / (k + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    (0..n).map(|i| (v[i] - theta).max(0.0)).collect()
}

/// Projected-gradient reference for the graph program: minimize
/// `lambda_l * s^T h s - lambda_s * b^T s` over the scaled simplex
/// `{ s >= 0, sum s = total }`, with the prescribed step `1 / (2 lambda_l E)`.
pub fn oracle_qp_projected_gradient(
    h: &Array2<f64>,
    b: &[f64],
    lambda_s: f64,
    lambda_l: f64,
    total: f64,
    iterations: usize,
) -> Vec<f64> {
    let e = b.len();
    let step = 1.0 / (2.0 * lambda_l * e as f64);
    let mut s = vec![total / e as f64; e];
    let mut grad = vec![0.0; e];
    for _ in 0..iterations {
        for i in 0..e {
            let mut acc = -lambda_s * b[i];
            for j in 0..e {
                acc += 2.0 * lambda_l * h[(i, j)] * s[j];
            }
            grad[i] = acc;
        }
        let moved: Vec<f64> = (0..e).map(|i| s[i] - step * grad[i]).collect();
        s = project_simplex(&moved, total);
    }
    s
}

/// Exact reference for `C = 3` (three edges) by KKT enumeration over active
/// sets: minimize `lambda_l s^T h s - lambda_s b^T s` s.t. `sum s = total`,
/// `s >= 0`. Strict convexity makes the satisfying candidate unique.
pub fn oracle_qp_active_set_c3(
    h: &Array2<f64>,
    b: &[f64],
    lambda_s: f64,
    lambda_l: f64,
    total: f64,
) -> Vec<f64> {
    assert_eq!(b.len(), 3);
    let mut best: Option<(f64, Vec<f64>)> = None;
    // Active set = indices pinned to zero; at least one edge stays free.
    for mask in 0..7u8 {
        let free: Vec<usize> = (0..3).filter(|i| mask & (1 << i) == 0).collect();
        let k = free.len();
        // Equality-constrained KKT on the free block:
        // [2*lambda_l*h_ff  -1] [s_f]   [lambda_s * b_f]
        // [1^T               0] [ y ] = [total         ]
        let n = k + 1;
        let mut m = vec![vec![0.0; n + 1]; n];
        for (p, &i) in free.iter().enumerate() {
            for (q, &j) in free.iter().enumerate() {
                m[p][q] = 2.0 * lambda_l * h[(i, j)];
            }
            m[p][k] = -1.0;
            m[p][n] = lambda_s * b[i];
        }
        for q in 0..k {
            m[k][q] = 1.0;
        }
        m[k][n] = total;
        let Some(sol) = gauss_solve(&mut m) else {
            continue;
        };
        let mut s = vec![0.0; 3];
        for (p, &i) in free.iter().enumerate() {
            s[i] = sol[p];
        }
        let y = sol[k];
        // primal feasibility
        if s.iter().any(|&v| v < -1e-12) {
            continue;
        }
        // dual feasibility on the pinned coordinates: z_i >= 0
        let mut ok = true;
        for i in 0..3 {
            if mask & (1 << i) != 0 {
                let mut hs = 0.0;
                for j in 0..3 {
                    hs += h[(i, j)] * s[j];
                }
                let z = 2.0 * lambda_l * hs - lambda_s * b[i] - y;
                if z < -1e-9 {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let mut obj = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                obj += lambda_l * s[i] * h[(i, j)] * s[j];
            }
            obj -= lambda_s * b[i] * s[i];
        }
        if best.as_ref().is_none_or(|(prev, _)| obj < *prev) {
            best = Some((obj, s));
        }
    }
    best.expect("at least one active set satisfies KKT").1
}

/// Gaussian elimination with partial pivoting on an augmented matrix
/// (n rows, n+1 columns). Returns None when singular.
fn gauss_solve(m: &mut [Vec<f64>]) -> Option<Vec<f64>> {
    let n = m.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&a, &b| {
            m[a][col]
                .abs()
                .partial_cmp(&m[b][col].abs())
                .unwrap()
        })?;
        if m[pivot][col].abs() < 1e-14 {
            return None;
        }
        m.swap(col, pivot);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..=n {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = m[row][n];
        for k in row + 1..n {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    Some(x)
}
