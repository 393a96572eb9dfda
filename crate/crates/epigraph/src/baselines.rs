//! Reference estimators: the per-cell maximum-likelihood ratio and the
//! windowed Bayesian posterior-mean estimator with a gamma prior.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{CountMatrix, Infectiousness, ReproMatrix};

/// Window length and gamma-prior parameters of the Bayesian baseline.
#[derive(Debug, Clone)]
pub struct EpiEstimConfig {
    /// Trailing window length in days; odd.
    pub tau: usize,
    /// Prior shape `a`.
    pub prior_shape: f64,
    /// Prior scale `b`.
    pub prior_scale: f64,
}

impl Default for EpiEstimConfig {
    fn default() -> Self {
        Self {
            tau: 7,
            prior_shape: 1.0,
            prior_scale: 5.0,
        }
    }
}

impl EpiEstimConfig {
    pub fn with_window(tau: usize) -> Result<Self> {
        let cfg = Self {
            tau,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 || self.tau % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "window must be a positive odd number of days, got {}",
                self.tau
            )));
        }
        if !(self.prior_shape > 0.0) || !(self.prior_scale > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "prior parameters must be positive, got shape={}, scale={}",
                self.prior_shape, self.prior_scale
            )));
        }
        Ok(())
    }
}

/// Per-cell ratio `Z / Phi`, zero where the infectiousness vanishes.
pub fn ml_estimate(z: &CountMatrix, phi_z: &Infectiousness) -> ReproMatrix {
    let zm = z.counts();
    let pm = phi_z.matrix();
    let r = Array2::from_shape_fn(zm.dim(), |idx| {
        let p = pm[idx];
        if p > 0.0 {
            zm[idx] / p
        } else {
            0.0
        }
    });
    ReproMatrix::new(r).expect("ratio of nonnegatives is nonnegative")
}

/// Gamma-posterior mean over a trailing window, truncated at the series
/// start: `(a + sum Z) / (1/b + sum Phi)`, independently per territory.
pub fn epiestim_estimate(
    z: &CountMatrix,
    phi_z: &Infectiousness,
    cfg: &EpiEstimConfig,
) -> Result<ReproMatrix> {
    cfg.validate()?;
    let zm = z.counts();
    let pm = phi_z.matrix();
    let (c_n, t_n) = zm.dim();
    let mut r = Array2::zeros((c_n, t_n));
    for c in 0..c_n {
        // sliding sums over the trailing window
        let mut z_sum = 0.0;
        let mut p_sum = 0.0;
        for t in 0..t_n {
            z_sum += zm[(c, t)];
            p_sum += pm[(c, t)];
            if t >= cfg.tau {
                z_sum -= zm[(c, t - cfg.tau)];
                p_sum -= pm[(c, t - cfg.tau)];
            }
            r[(c, t)] = (cfg.prior_shape + z_sum) / (1.0 / cfg.prior_scale + p_sum);
        }
    }
    ReproMatrix::new(r)
}
