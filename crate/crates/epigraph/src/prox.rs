//! Primal-dual solver for reproduction numbers under a fixed graph.
//!
//! Minimizes the weighted KL data fidelity plus a temporal l1 penalty on
//! second differences and a spatial squared-l2 penalty through the graph
//! factor, using the Chambolle-Pock scheme with closed-form proximity
//! operators. The linear operator K stacks per-row second differences and
//! the per-column graph factor product.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{kl_term, CountMatrix, Infectiousness, ReproMatrix, ScaleParams};

/// Square factor of a (jittered) graph Laplacian: `b_tilde^T b_tilde = L + eps*I`.
#[derive(Debug, Clone)]
pub struct FactorMatrix {
    b_tilde: Array2<f64>,
}

impl FactorMatrix {
    pub fn new(b_tilde: Array2<f64>) -> Result<Self> {
        if b_tilde.nrows() != b_tilde.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "graph factor must be square, got {}x{}",
                b_tilde.nrows(),
                b_tilde.ncols()
            )));
        }
        if b_tilde.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(
                "graph factor entries must be finite".into(),
            ));
        }
        Ok(Self { b_tilde })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.b_tilde
    }

    /// Number of territories the factor couples.
    pub fn dim(&self) -> usize {
        self.b_tilde.nrows()
    }

    /// Reconstruct the (jittered) Laplacian `b_tilde^T b_tilde`.
    pub fn reconstruct(&self) -> Array2<f64> {
        self.b_tilde.t().dot(&self.b_tilde)
    }
}

/// Dual iterates: `q_t` holds the temporal block (per-row second differences,
/// C x (T-2)), `q_s` the spatial block (factor times each column, C x T).
#[derive(Debug, Clone)]
pub struct DualVars {
    pub q_t: Array2<f64>,
    pub q_s: Array2<f64>,
}

impl DualVars {
    pub fn new(q_t: Array2<f64>, q_s: Array2<f64>) -> Result<Self> {
        if q_t.nrows() != q_s.nrows() || q_t.ncols() + 2 != q_s.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "dual blocks disagree: q_t is {}x{}, q_s is {}x{}",
                q_t.nrows(),
                q_t.ncols(),
                q_s.nrows(),
                q_s.ncols()
            )));
        }
        Ok(Self { q_t, q_s })
    }

    pub fn zeros(c: usize, t: usize) -> Result<Self> {
        if t < 3 {
            return Err(Error::DimensionMismatch(format!(
                "second differences need at least 3 days, got {t}"
            )));
        }
        Ok(Self {
            q_t: Array2::zeros((c, t - 2)),
            q_s: Array2::zeros((c, t)),
        })
    }
}

/// Solver hyperparameters and stopping controls.
#[derive(Debug, Clone)]
pub struct PdConfig {
    pub lambda_t: f64,
    pub lambda_s: f64,
    /// Joint relative increment below which iterates are declared converged.
    pub epsilon: f64,
    pub k_max: usize,
}

impl PdConfig {
    pub fn new(lambda_t: f64, lambda_s: f64) -> Result<Self> {
        let cfg = Self {
            lambda_t,
            lambda_s,
            epsilon: 1e-7,
            k_max: 50_000,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_k_max(mut self, k_max: usize) -> Self {
        self.k_max = k_max;
        self
    }

    /// `lambda_s = 0` is allowed and disables the spatial block entirely.
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_t > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda_t must be positive, got {}",
                self.lambda_t
            )));
        }
        if !(self.lambda_s >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda_s must be nonnegative, got {}",
                self.lambda_s
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.k_max == 0 {
            return Err(Error::InvalidParameter("k_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything `solve_fix_l` learned: the estimate, the dual state for warm
/// starting, and diagnostics.
#[derive(Debug, Clone)]
pub struct FixLSolution {
    pub repro: ReproMatrix,
    pub duals: DualVars,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    /// Relative increment at the final iteration.
    pub final_residual: f64,
    /// Cells with positive counts but zero infectiousness, dropped from the
    /// data fidelity.
    pub excluded_cells: Vec<(usize, usize)>,
}

/// Second difference of one row: `dst[j] = src[j] - 2 src[j+1] + src[j+2]`.
#[inline]
fn d2_row(src: &[f64], dst: &mut [f64]) {
    for (j, d) in dst.iter_mut().enumerate() {
        *d = src[j] - 2.0 * src[j + 1] + src[j + 2];
    }
}

/// Adjoint of `d2_row`: scatter each dual entry onto its three stencil taps.
#[inline]
fn d2_adjoint_row(q: &[f64], dst: &mut [f64]) {
    let t = dst.len();
    let m = q.len(); // t - 2
    for (i, d) in dst.iter_mut().enumerate() {
        let mut acc = 0.0;
        if i < m {
            acc += q[i];
        }
        if i >= 1 && i - 1 < m {
            acc -= 2.0 * q[i - 1];
        }
        if i >= 2 && i - 2 < m {
            acc += q[i - 2];
        }
        *d = acc;
    }
    debug_assert_eq!(t, m + 2);
}

/// `out = a * x`, skipping zero entries of `a` (row-major friendly).
fn mat_mul_into(a: &Array2<f64>, x: &Array2<f64>, out: &mut Array2<f64>) {
    out.fill(0.0);
    let n = a.nrows();
    for i in 0..n {
        let mut out_row = out.row_mut(i);
        let out_slice = out_row.as_slice_mut().expect("row-major layout");
        for k in 0..a.ncols() {
            let aik = a[(i, k)];
            if aik == 0.0 {
                continue;
            }
            let x_row = x.row(k);
            let x_slice = x_row.as_slice().expect("row-major layout");
            for (o, &v) in out_slice.iter_mut().zip(x_slice) {
                *o += aik * v;
            }
        }
    }
}

/// `out += a^T * x`, skipping zero entries of `a`.
fn mat_tmul_add(a: &Array2<f64>, x: &Array2<f64>, out: &mut Array2<f64>) {
    let n = a.ncols();
    for i in 0..n {
        let mut out_row = out.row_mut(i);
        let out_slice = out_row.as_slice_mut().expect("row-major layout");
        for k in 0..a.nrows() {
            let aki = a[(k, i)];
            if aki == 0.0 {
                continue;
            }
            let x_row = x.row(k);
            let x_slice = x_row.as_slice().expect("row-major layout");
            for (o, &v) in out_slice.iter_mut().zip(x_slice) {
                *o += aki * v;
            }
        }
    }
}

/// Apply the stacked operator K: temporal second differences per row and the
/// graph factor per column. `b_tilde = None` leaves the spatial block zero.
pub fn apply_k(r: &Array2<f64>, b_tilde: Option<&FactorMatrix>) -> Result<DualVars> {
    let (c, t) = r.dim();
    if t < 3 {
        return Err(Error::DimensionMismatch(format!(
            "second differences need at least 3 days, got {t}"
        )));
    }
    if let Some(b) = b_tilde {
        if b.dim() != c {
            return Err(Error::DimensionMismatch(format!(
                "graph factor is {}x{} but data has {} territories",
                b.dim(),
                b.dim(),
                c
            )));
        }
    }
    let mut q_t = Array2::zeros((c, t - 2));
    for i in 0..c {
        let row = r.row(i);
        let mut out = q_t.row_mut(i);
        d2_row(
            row.as_slice().expect("row-major layout"),
            out.as_slice_mut().expect("row-major layout"),
        );
    }
    let mut q_s = Array2::zeros((c, t));
    if let Some(b) = b_tilde {
        mat_mul_into(b.matrix(), r, &mut q_s);
    }
    Ok(DualVars { q_t, q_s })
}

/// Exact adjoint of [`apply_k`]: `<K R, Q> = <R, adjoint_k(Q)>`.
pub fn adjoint_k(q: &DualVars, b_tilde: Option<&FactorMatrix>) -> Array2<f64> {
    let (c, t) = q.q_s.dim();
    debug_assert_eq!(q.q_t.nrows(), c);
    debug_assert_eq!(q.q_t.ncols() + 2, t);
    let mut out = Array2::zeros((c, t));
    for i in 0..c {
        let row = q.q_t.row(i);
        let mut dst = out.row_mut(i);
        d2_adjoint_row(
            row.as_slice().expect("row-major layout"),
            dst.as_slice_mut().expect("row-major layout"),
        );
    }
    if let Some(b) = b_tilde {
        mat_tmul_add(b.matrix(), &q.q_s, &mut out);
    }
    out
}

/// Proximity operator of `r -> step * omega * kl(z | r*phi)` restricted to
/// `r >= 0`, evaluated at `x`. Solves the nonnegative root of
/// `r^2 + (step*omega*phi - x) r - step*omega*z = 0`; the `z = 0` branch
/// collapses to shrink-and-clip `max(x - step*omega*phi, 0)`.
pub fn prox_kl(x: f64, step: f64, omega: f64, phi: f64, z: f64) -> f64 {
    debug_assert!(step > 0.0 && omega >= 0.0 && phi >= 0.0 && z >= 0.0);
    let a = step * omega * phi;
    let b4 = 4.0 * step * omega * z;
    prox_kl_precomputed(x, a, b4)
}

/// Same root formula with `a = step*omega*phi` and `b4 = 4*step*omega*z`
/// precomputed; the solver hot loop reuses these across iterations.
#[inline]
fn prox_kl_precomputed(x: f64, a: f64, b4: f64) -> f64 {
    let d = x - a;
    if d >= 0.0 {
        0.5 * (d + (d * d + b4).sqrt())
    } else {
        // equivalent form that avoids cancellation when x - a < 0
        b4 / (2.0 * ((d * d + b4).sqrt() - d))
    }
}

/// Componentwise soft threshold `sign(x) * max(|x| - threshold, 0)`.
pub fn prox_l1(x: &Array2<f64>, threshold: f64) -> Array2<f64> {
    debug_assert!(threshold > 0.0);
    x.mapv(|v| v.signum() * (v.abs() - threshold).max(0.0))
}

/// Proximity operator of `step_lambda * ||.||^2`: uniform shrinkage
/// `x / (1 + 2 step_lambda)`.
pub fn prox_sq_l2(x: &Array2<f64>, step_lambda: f64) -> Array2<f64> {
    debug_assert!(step_lambda > 0.0);
    x.mapv(|v| v / (1.0 + 2.0 * step_lambda))
}

/// Estimate the operator norm of K by power iteration on K^T K, inflated by
/// a 1.01 safety factor. Falls back to the bound `sqrt(||D2||^2 + ||B||_F^2)`
/// with `||D2|| <= 4` if 1000 iterations do not stabilize the estimate.
pub fn operator_norm_k(b_tilde: Option<&FactorMatrix>, t: usize) -> Result<f64> {
    if t < 3 {
        return Err(Error::DimensionMismatch(format!(
            "operator norm needs at least 3 days, got {t}"
        )));
    }
    let c = b_tilde.map_or(1, FactorMatrix::dim);
    let btb = b_tilde.map(|b| b.matrix().t().dot(b.matrix()));

    let mut rng = ChaCha8Rng::seed_from_u64(0x6b8b_4567);
    let mut v = Array2::from_shape_fn((c, t), |_| rng.random_range(-1.0..1.0));
    let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.mapv_inplace(|x| x / norm0);

    let mut w = Array2::zeros((c, t));
    let mut tmp_t = Array2::zeros((c, t - 2));
    let mut lambda_prev = 0.0;
    let mut diff_prev = f64::INFINITY;
    for _ in 0..1000 {
        // w = (D2^T D2 + B^T B) v
        for i in 0..c {
            let row = v.row(i);
            let mut out = tmp_t.row_mut(i);
            d2_row(
                row.as_slice().expect("row-major layout"),
                out.as_slice_mut().expect("row-major layout"),
            );
        }
        for i in 0..c {
            let row = tmp_t.row(i);
            let mut dst = w.row_mut(i);
            d2_adjoint_row(
                row.as_slice().expect("row-major layout"),
                dst.as_slice_mut().expect("row-major layout"),
            );
        }
        if let Some(btb) = &btb {
            let spatial = btb.dot(&v);
            w += &spatial;
        }
        let lambda = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if lambda == 0.0 {
            return Ok(0.0);
        }
        // Successive estimates converge geometrically from below; project
        // the remaining error from the contraction ratio so the stop really
        // means a 1e-6 relative tolerance on the limit.
        let diff = (lambda - lambda_prev).abs();
        let ratio = (diff / diff_prev).min(0.99);
        let projected = diff * ratio / (1.0 - ratio);
        if diff.max(projected) <= 1e-6 * lambda {
            return Ok(1.01 * lambda.sqrt());
        }
        lambda_prev = lambda;
        diff_prev = diff.max(f64::MIN_POSITIVE);
        std::mem::swap(&mut v, &mut w);
        v.mapv_inplace(|x| x / lambda);
    }
    let b_frob_sq = b_tilde.map_or(0.0, |b| b.matrix().iter().map(|x| x * x).sum());
    Ok((16.0 + b_frob_sq).sqrt())
}

/// Maximum-likelihood-style initialization `Z / Phi` with zero wherever the
/// infectiousness vanishes.
pub fn default_init(z: &CountMatrix, phi_z: &Infectiousness) -> ReproMatrix {
    let mut r = Array2::zeros(z.counts().dim());
    for ((idx, out), (&zv, &pv)) in r
        .indexed_iter_mut()
        .zip(z.counts().iter().zip(phi_z.matrix().iter()))
    {
        let _ = idx;
        *out = if pv > 0.0 { zv / pv } else { 0.0 };
    }
    ReproMatrix::new(r).expect("ratio of nonnegatives is nonnegative")
}

/// Full variational objective at `r`: weighted KL fidelity (cells with
/// positive counts but zero infectiousness are dropped), temporal l1 on
/// second differences, and the spatial quadratic through the factor.
pub fn fix_l_objective(
    z: &CountMatrix,
    phi_z: &Infectiousness,
    scales: &ScaleParams,
    b_tilde: Option<&FactorMatrix>,
    lambda_t: f64,
    lambda_s: f64,
    r: &Array2<f64>,
) -> f64 {
    let zm = z.counts();
    let pm = phi_z.matrix();
    let (c, t) = zm.dim();
    let mut fidelity = 0.0;
    for i in 0..c {
        let w = scales.omega()[i];
        let mut acc = 0.0;
        for j in 0..t {
            let (zv, pv) = (zm[(i, j)], pm[(i, j)]);
            if pv == 0.0 && zv > 0.0 {
                continue; // excluded cell
            }
            acc += kl_term(zv, r[(i, j)] * pv);
        }
        fidelity += w * acc;
    }
    let mut temporal = 0.0;
    for i in 0..c {
        let row = r.row(i);
        let s = row.as_slice().expect("row-major layout");
        for j in 0..t - 2 {
            temporal += (s[j] - 2.0 * s[j + 1] + s[j + 2]).abs();
        }
    }
    let mut spatial = 0.0;
    if lambda_s > 0.0 {
        if let Some(b) = b_tilde {
            let br = b.matrix().dot(r);
            spatial = br.iter().map(|x| x * x).sum();
        }
    }
    fidelity + lambda_t * temporal + lambda_s * spatial
}

/// Interval between objective snapshots used to keep the best-seen iterate.
const SNAPSHOT_EVERY: usize = 250;

/// Minimize the fixed-graph objective by the primal-dual scheme.
///
/// Steps are `tau = sigma = 0.99 / ||K||`. Iterations stop when the joint
/// relative increment `max(||dR||/||R||, ||dQ||/||Q||)` falls below
/// `cfg.epsilon`, or at `cfg.k_max` with `converged = false`. The returned
/// iterate is the best seen by objective value, never worse than the warm
/// start. `warm = None` starts from `Z / Phi` and its image under K.
///
/// The spatial block participates only when `cfg.lambda_s > 0` and a factor
/// is supplied; otherwise iterates match a spatially-unpenalized run exactly.
pub fn solve_fix_l(
    z: &CountMatrix,
    phi_z: &Infectiousness,
    scales: &ScaleParams,
    b_tilde: Option<&FactorMatrix>,
    cfg: &PdConfig,
    warm: Option<(&ReproMatrix, &DualVars)>,
) -> Result<FixLSolution> {
    cfg.validate()?;
    let (c, t) = z.counts().dim();
    if phi_z.matrix().dim() != (c, t) {
        return Err(Error::DimensionMismatch(format!(
            "counts are {}x{} but infectiousness is {}x{}",
            c,
            t,
            phi_z.matrix().nrows(),
            phi_z.matrix().ncols()
        )));
    }
    if scales.len() != c {
        return Err(Error::DimensionMismatch(format!(
            "{} territories but {} scale entries",
            c,
            scales.len()
        )));
    }
    if t < 3 {
        return Err(Error::DimensionMismatch(format!(
            "solver needs at least 3 days, got {t}"
        )));
    }
    let spatial = cfg.lambda_s > 0.0 && b_tilde.is_some();
    let factor = if spatial { b_tilde } else { None };
    if let Some(b) = factor {
        if b.dim() != c {
            return Err(Error::DimensionMismatch(format!(
                "graph factor is {}x{} but data has {} territories",
                b.dim(),
                b.dim(),
                c
            )));
        }
    }

    // Per-cell prox coefficients, fixed across iterations. Excluded cells
    // (zero infectiousness, positive counts) degrade to pure projection.
    let norm_k = operator_norm_k(factor, t)?;
    let step = if norm_k > 0.0 { 0.99 / norm_k } else { 1.0 };
    let (tau, sigma) = (step, step);
    let mut excluded_cells = Vec::new();
    let mut a = Array2::zeros((c, t));
    let mut b4 = Array2::zeros((c, t));
    for i in 0..c {
        let w = scales.omega()[i];
        for j in 0..t {
            let (zv, pv) = (z.counts()[(i, j)], phi_z.matrix()[(i, j)]);
            if pv == 0.0 && zv > 0.0 {
                excluded_cells.push((i, j));
                continue;
            }
            a[(i, j)] = tau * w * pv;
            b4[(i, j)] = 4.0 * tau * w * zv;
        }
    }

    let (mut x, mut q_t, mut q_s) = match warm {
        Some((r0, q0)) => {
            if r0.matrix().dim() != (c, t) || q0.q_s.dim() != (c, t) {
                return Err(Error::DimensionMismatch(
                    "warm-start shapes disagree with the data".into(),
                ));
            }
            (r0.matrix().clone(), q0.q_t.clone(), q0.q_s.clone())
        }
        None => {
            let r0 = default_init(z, phi_z);
            let q0 = apply_k(r0.matrix(), factor)?;
            (r0.into_matrix(), q0.q_t, q0.q_s)
        }
    };
    let mut x_bar = x.clone();
    let mut x_new = Array2::zeros((c, t));
    let mut ky_t = Array2::zeros((c, t - 2));
    let mut ky_s = Array2::zeros((c, t));
    let mut kty = Array2::zeros((c, t));

    let objective_of = |r: &Array2<f64>| {
        fix_l_objective(z, phi_z, scales, factor, cfg.lambda_t, cfg.lambda_s, r)
    };
    let mut best_obj = objective_of(&x);
    let mut best = (x.clone(), q_t.clone(), q_s.clone());

    let sq_factor = if spatial {
        2.0 * cfg.lambda_s / (2.0 * cfg.lambda_s + sigma)
    } else {
        0.0
    };

    let mut iterations = 0;
    let mut converged = false;
    let mut residual = f64::INFINITY;
    for k in 0..cfg.k_max {
        // dual ascent on K x_bar, via Moreau identities
        let mut dq_sq = 0.0;
        let mut qn_sq = 0.0;
        for i in 0..c {
            let row = x_bar.row(i);
            let mut out = ky_t.row_mut(i);
            d2_row(
                row.as_slice().expect("row-major layout"),
                out.as_slice_mut().expect("row-major layout"),
            );
        }
        for (q, &g) in q_t.iter_mut().zip(ky_t.iter()) {
            let v = (*q + sigma * g).clamp(-cfg.lambda_t, cfg.lambda_t);
            let d = v - *q;
            dq_sq += d * d;
            qn_sq += v * v;
            *q = v;
        }
        if spatial {
            mat_mul_into(factor.unwrap().matrix(), &x_bar, &mut ky_s);
            for (q, &g) in q_s.iter_mut().zip(ky_s.iter()) {
                let v = (*q + sigma * g) * sq_factor;
                let d = v - *q;
                dq_sq += d * d;
                qn_sq += v * v;
                *q = v;
            }
        }

        // primal descent along K^T q, then the per-cell KL prox
        for i in 0..c {
            let row = q_t.row(i);
            let mut dst = kty.row_mut(i);
            d2_adjoint_row(
                row.as_slice().expect("row-major layout"),
                dst.as_slice_mut().expect("row-major layout"),
            );
        }
        if spatial {
            mat_tmul_add(factor.unwrap().matrix(), &q_s, &mut kty);
        }
        let mut dx_sq = 0.0;
        let mut xn_sq = 0.0;
        {
            let xs = x.as_slice().expect("row-major layout");
            let ks = kty.as_slice().expect("row-major layout");
            let as_ = a.as_slice().expect("row-major layout");
            let bs = b4.as_slice().expect("row-major layout");
            let xn = x_new.as_slice_mut().expect("row-major layout");
            let xb = x_bar.as_slice_mut().expect("row-major layout");
            for i in 0..xs.len() {
                let u = xs[i] - tau * ks[i];
                let d = u - as_[i];
                let r = if d >= 0.0 {
                    0.5 * (d + (d * d + bs[i]).sqrt())
                } else {
                    bs[i] / (2.0 * ((d * d + bs[i]).sqrt() - d))
                };
                xb[i] = 2.0 * r - xs[i];
                let dd = r - xs[i];
                dx_sq += dd * dd;
                xn_sq += r * r;
                xn[i] = r;
            }
        }
        std::mem::swap(&mut x, &mut x_new);
        iterations = k + 1;

        let rel_primal = dx_sq.sqrt() / xn_sq.sqrt().max(f64::MIN_POSITIVE);
        let rel_dual = dq_sq.sqrt() / qn_sq.sqrt().max(f64::MIN_POSITIVE);
        residual = rel_primal.max(rel_dual);

        if iterations % SNAPSHOT_EVERY == 0 {
            let obj = objective_of(&x);
            if obj < best_obj {
                best_obj = obj;
                best = (x.clone(), q_t.clone(), q_s.clone());
            }
        }
        if residual <= cfg.epsilon {
            converged = true;
            break;
        }
    }

    let final_obj = objective_of(&x);
    if final_obj < best_obj {
        best_obj = final_obj;
        best = (x, q_t, q_s);
    }
    let (bx, bq_t, bq_s) = best;
    Ok(FixLSolution {
        repro: ReproMatrix::new(bx).expect("prox output is nonnegative"),
        duals: DualVars { q_t: bq_t, q_s: bq_s },
        iterations,
        converged,
        objective: best_obj,
        final_residual: residual,
        excluded_cells,
    })
}
