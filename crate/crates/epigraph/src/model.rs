//! Epidemic model primitives shared by every estimator: serial-interval
//! weights, infection-count matrices, global infectiousness, and the scaled
//! Kullback-Leibler data-fidelity term.
//!
//! Everything here is a pure function of its inputs; no randomness and no
//! estimation happens in this module.

use ndarray::Array2;
use statrs::distribution::{ContinuousCDF, Gamma};

use crate::error::{Error, Result};

/// Discretized serial-interval distribution: probability mass per day lag.
#[derive(Debug, Clone)]
pub struct SerialInterval {
    weights: Vec<f64>,
    mean_days: f64,
    std_days: f64,
}

impl SerialInterval {
    /// Discretize a gamma density with the given mean and standard deviation
    /// onto unit day intervals `(s-1, s]` for `s = 1..=truncation`, then
    /// renormalize so the weights sum to one.
    ///
    /// Moment matching gives shape `k = (mean/std)^2` and scale
    /// `theta = std^2/mean`.
    pub fn gamma(mean_days: f64, std_days: f64, truncation: usize) -> Result<Self> {
        if !(mean_days > 0.0) || !(std_days > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "serial interval needs positive mean and std, got mean={mean_days}, std={std_days}"
            )));
        }
        if truncation == 0 {
            return Err(Error::InvalidParameter(
                "serial interval truncation must be at least 1 day".into(),
            ));
        }
        let shape = (mean_days / std_days).powi(2);
        let rate = mean_days / std_days.powi(2); // statrs parameterizes by rate = 1/scale
        let dist = Gamma::new(shape, rate).map_err(|e| {
            Error::InvalidParameter(format!("gamma distribution construction failed: {e}"))
        })?;
        let mut weights: Vec<f64> = Vec::with_capacity(truncation);
        let mut prev = 0.0;
        for s in 1..=truncation {
            let cdf = dist.cdf(s as f64);
            weights.push((cdf - prev).max(0.0));
            prev = cdf;
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter(
                "serial interval has no mass inside the truncation window".into(),
            ));
        }
        for w in &mut weights {
            *w /= total;
        }
        Ok(Self {
            weights,
            mean_days,
            std_days,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Truncation horizon in days; equals the number of weights.
    pub fn truncation(&self) -> usize {
        self.weights.len()
    }

    pub fn mean_days(&self) -> f64 {
        self.mean_days
    }

    pub fn std_days(&self) -> f64 {
        self.std_days
    }

    /// Matched gamma shape parameter `(mean/std)^2`.
    pub fn shape(&self) -> f64 {
        (self.mean_days / self.std_days).powi(2)
    }

    /// Matched gamma scale parameter `std^2/mean`.
    pub fn scale(&self) -> f64 {
        self.std_days.powi(2) / self.mean_days
    }
}

/// Daily infection counts for `C` territories over `T` days.
///
/// Counts are stored as reals: scaled-Poisson samples are non-integer and
/// real-world data may arrive pre-smoothed.
#[derive(Debug, Clone)]
pub struct CountMatrix {
    counts: Array2<f64>,
    territory_ids: Vec<String>,
    dates: Vec<String>,
}

impl CountMatrix {
    pub fn new(counts: Array2<f64>, territory_ids: Vec<String>, dates: Vec<String>) -> Result<Self> {
        let (c, t) = counts.dim();
        if territory_ids.len() != c {
            return Err(Error::DimensionMismatch(format!(
                "{} territory ids for {} count rows",
                territory_ids.len(),
                c
            )));
        }
        if dates.len() != t {
            return Err(Error::DimensionMismatch(format!(
                "{} dates for {} count columns",
                dates.len(),
                t
            )));
        }
        if counts.iter().any(|&z| !(z >= 0.0)) {
            return Err(Error::InvalidParameter(
                "counts must be nonnegative and finite".into(),
            ));
        }
        Ok(Self {
            counts,
            territory_ids,
            dates,
        })
    }

    /// Wrap a raw matrix with generated territory and day labels.
    pub fn from_counts(counts: Array2<f64>) -> Result<Self> {
        let (c, t) = counts.dim();
        let ids = (0..c).map(|i| format!("territory_{}", i + 1)).collect();
        let dates = (0..t).map(|d| d.to_string()).collect();
        Self::new(counts, ids, dates)
    }

    pub fn counts(&self) -> &Array2<f64> {
        &self.counts
    }

    pub fn territory_ids(&self) -> &[String] {
        &self.territory_ids
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn n_territories(&self) -> usize {
        self.counts.nrows()
    }

    pub fn n_days(&self) -> usize {
        self.counts.ncols()
    }
}

/// Global infectiousness: serial-interval-weighted sums of past counts.
/// Entry `(c, t)` depends only on counts strictly before day `t`.
#[derive(Debug, Clone)]
pub struct Infectiousness {
    phi_z: Array2<f64>,
}

impl Infectiousness {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.phi_z
    }

    /// Wrap a precomputed pressure matrix. The caller is responsible for the
    /// causality of its construction.
    pub fn from_matrix(phi_z: Array2<f64>) -> Result<Self> {
        if phi_z.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidParameter(
                "infectiousness must be nonnegative and finite".into(),
            ));
        }
        Ok(Self { phi_z })
    }
}

/// Nonnegative reproduction-number estimates, one per territory and day.
#[derive(Debug, Clone)]
pub struct ReproMatrix {
    r: Array2<f64>,
}

impl ReproMatrix {
    pub fn new(r: Array2<f64>) -> Result<Self> {
        if r.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InvalidParameter(
                "reproduction numbers must be nonnegative and finite".into(),
            ));
        }
        Ok(Self { r })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.r
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.r
    }
}

/// Per-territory variance scales `gamma` and data-fidelity weights `omega`.
/// Ideally `omega = 1/gamma`; a heuristic stands in when scales are unknown.
#[derive(Debug, Clone)]
pub struct ScaleParams {
    gamma: Vec<f64>,
    omega: Vec<f64>,
}

impl ScaleParams {
    pub fn new(gamma: Vec<f64>, omega: Vec<f64>) -> Result<Self> {
        if gamma.len() != omega.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} gamma entries vs {} omega entries",
                gamma.len(),
                omega.len()
            )));
        }
        if gamma.iter().any(|&g| !(g > 0.0)) || omega.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidParameter(
                "scale parameters must be strictly positive".into(),
            ));
        }
        Ok(Self { gamma, omega })
    }

    /// Known variance scales; fidelity weights set to their reciprocals.
    pub fn from_gamma(gamma: Vec<f64>) -> Result<Self> {
        let omega = gamma.iter().map(|g| 1.0 / g).collect();
        Self::new(gamma, omega)
    }

    /// Weight heuristic for unknown scales: `omega_c = 1/std(Z_c)`, with
    /// `omega_c = 1` for zero-variance series.
    pub fn heuristic_from_counts(z: &CountMatrix) -> Self {
        let omega: Vec<f64> = z
            .counts()
            .rows()
            .into_iter()
            .map(|row| {
                let n = row.len() as f64;
                let mean = row.sum() / n;
                let var = if row.len() > 1 {
                    row.iter().map(|&x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                let std = var.sqrt();
                if std > 0.0 {
                    1.0 / std
                } else {
                    1.0
                }
            })
            .collect();
        let gamma = omega.iter().map(|w| 1.0 / w).collect();
        Self {
            gamma,
            omega,
        }
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }
}

/// Global infectiousness of observed counts: lags reaching before the first
/// sample contribute zero.
pub fn infectiousness(z: &CountMatrix, phi: &SerialInterval) -> Infectiousness {
    infectiousness_with_history(z, None, phi)
}

/// Global infectiousness with `history` supplying the counts immediately
/// preceding the observation window (its last column is day `-1`). Lags that
/// reach past the history contribute zero.
pub fn infectiousness_with_history(
    z: &CountMatrix,
    history: Option<&Array2<f64>>,
    phi: &SerialInterval,
) -> Infectiousness {
    let counts = z.counts();
    let (c_n, t_n) = counts.dim();
    let h_n = history.map_or(0, |h| h.ncols());
    if let Some(h) = history {
        assert_eq!(h.nrows(), c_n, "history must cover every territory");
    }
    let w = phi.weights();
    let mut phi_z = Array2::zeros((c_n, t_n));
    for c in 0..c_n {
        for t in 0..t_n {
            let mut acc = 0.0;
            for (s, &ws) in w.iter().enumerate() {
                let lag = (s + 1) as isize;
                let u = t as isize - lag;
                if u >= 0 {
                    acc += ws * counts[(c, u as usize)];
                } else {
                    let back = (-u) as usize; // days before the window start
                    if back <= h_n {
                        acc += ws * history.unwrap()[(c, h_n - back)];
                    }
                }
            }
            phi_z[(c, t)] = acc;
        }
    }
    Infectiousness { phi_z }
}

/// Scaled Poisson Kullback-Leibler term:
/// `z*ln(z/p) + p - z` for `z > 0, p > 0`; `p` for `z = 0, p >= 0`;
/// `+inf` otherwise (the infeasible branch).
pub fn kl_term(z: f64, p: f64) -> f64 {
    if z > 0.0 && p > 0.0 {
        z * (z / p).ln() + p - z
    } else if z == 0.0 && p >= 0.0 {
        p
    } else {
        f64::INFINITY
    }
}

/// Weighted KL data fidelity `sum_c omega_c sum_t kl(Z_ct | R_ct * Phi_ct)`.
/// Infinite whenever any cell hits the infeasible branch.
pub fn data_fidelity(
    z: &CountMatrix,
    r: &ReproMatrix,
    phi_z: &Infectiousness,
    scales: &ScaleParams,
) -> f64 {
    let zm = z.counts();
    let rm = r.matrix();
    let pm = phi_z.matrix();
    assert_eq!(zm.dim(), rm.dim());
    assert_eq!(zm.dim(), pm.dim());
    assert_eq!(zm.nrows(), scales.len());
    let mut total = 0.0;
    for c in 0..zm.nrows() {
        let w = scales.omega()[c];
        let mut row_sum = 0.0;
        for t in 0..zm.ncols() {
            row_sum += kl_term(zm[(c, t)], rm[(c, t)] * pm[(c, t)]);
        }
        total += w * row_sum;
    }
    total
}

/// Data fidelity that drops cells with positive counts but zero
/// infectiousness, the same exclusion rule the solvers apply.
pub fn data_fidelity_excluding(
    z: &CountMatrix,
    r: &ReproMatrix,
    phi_z: &Infectiousness,
    scales: &ScaleParams,
) -> f64 {
    let zm = z.counts();
    let rm = r.matrix();
    let pm = phi_z.matrix();
    let mut total = 0.0;
    for c in 0..zm.nrows() {
        let w = scales.omega()[c];
        let mut row_sum = 0.0;
        for t in 0..zm.ncols() {
            let (zv, pv) = (zm[(c, t)], pm[(c, t)]);
            if pv == 0.0 && zv > 0.0 {
                continue;
            }
            row_sum += kl_term(zv, rm[(c, t)] * pv);
        }
        total += w * row_sum;
    }
    total
}
