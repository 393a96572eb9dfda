//! Accuracy metrics for estimated reproduction numbers and connectivity
//! graphs.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::GraphLaplacian;
use crate::model::ReproMatrix;

/// Mean relative squared error `(1/CT) sum ((r_hat - r_star)/r_star)^2`.
/// The ground truth must be strictly positive everywhere.
pub fn mrse(r_hat: &ReproMatrix, r_star: &ReproMatrix) -> Result<f64> {
    let (est, truth) = (r_hat.matrix(), r_star.matrix());
    if est.dim() != truth.dim() {
        return Err(Error::DimensionMismatch(format!(
            "estimate {:?} vs ground truth {:?}",
            est.dim(),
            truth.dim()
        )));
    }
    if truth.iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidParameter(
            "relative error needs a strictly positive ground truth".into(),
        ));
    }
    let (c, t) = truth.dim();
    let total: f64 = est
        .iter()
        .zip(truth.iter())
        .map(|(&e, &s)| ((e - s) / s).powi(2))
        .sum();
    Ok(total / (c * t) as f64)
}

/// Relative squared Frobenius error `|l_hat - l_star|_F^2 / |l_star|_F^2`.
/// Takes raw matrices so degenerate estimates (for instance all zeros) can be
/// scored even though they are not valid Laplacians.
pub fn laplacian_recovery_error(l_hat: &Array2<f64>, l_star: &Array2<f64>) -> Result<f64> {
    if l_hat.dim() != l_star.dim() {
        return Err(Error::DimensionMismatch(format!(
            "estimate {:?} vs ground truth {:?}",
            l_hat.dim(),
            l_star.dim()
        )));
    }
    let denom: f64 = l_star.iter().map(|&v| v * v).sum();
    if denom == 0.0 {
        return Err(Error::InvalidParameter(
            "ground-truth Laplacian must be nonzero".into(),
        ));
    }
    let num: f64 = l_hat
        .iter()
        .zip(l_star.iter())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(num / denom)
}

/// Edge-set comparison after thresholding the estimated graph. The reference
/// edge set is the exact support of the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SupportRecovery {
    pub exact: bool,
    pub false_positives: usize,
    pub false_negatives: usize,
}

pub fn support_recovery(
    l_hat: &GraphLaplacian,
    l_star: &GraphLaplacian,
    threshold: f64,
) -> Result<SupportRecovery> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold must be positive, got {threshold}"
        )));
    }
    if l_hat.dim() != l_star.dim() {
        return Err(Error::DimensionMismatch(format!(
            "estimate dim {} vs ground truth dim {}",
            l_hat.dim(),
            l_star.dim()
        )));
    }
    let mut false_positives = 0;
    let mut false_negatives = 0;
    let est = l_hat.weights();
    let truth = l_star.weights();
    for (&e, &s) in est.iter().zip(&truth) {
        let detected = e.abs() > threshold;
        let present = s != 0.0;
        match (detected, present) {
            (true, false) => false_positives += 1,
            (false, true) => false_negatives += 1,
            _ => {}
        }
    }
    Ok(SupportRecovery {
        exact: false_positives == 0 && false_negatives == 0,
        false_positives,
        false_negatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{blur_laplacian, cluster_laplacian, ClusterSpec};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn three_cluster_graph() -> GraphLaplacian {
        cluster_laplacian(&ClusterSpec::from_sizes(&[3, 3, 3]).unwrap()).unwrap()
    }

    #[test]
    fn mrse_identity_and_doubling() {
        let r = ReproMatrix::new(Array2::from_elem((2, 4), 1.3)).unwrap();
        assert_eq!(mrse(&r, &r).unwrap(), 0.0);
        let double = ReproMatrix::new(r.matrix() * 2.0).unwrap();
        assert!((mrse(&double, &r).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mrse_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let est = Array2::from_shape_fn((3, 7), |_| rng.random_range(0.0..3.0));
        let truth = Array2::from_shape_fn((3, 7), |_| rng.random_range(0.1..3.0));
        let mut acc = 0.0;
        for c in 0..3 {
            for t in 0..7 {
                let d = (est[(c, t)] - truth[(c, t)]) / truth[(c, t)];
                acc += d * d;
            }
        }
        let got = mrse(
            &ReproMatrix::new(est).unwrap(),
            &ReproMatrix::new(truth).unwrap(),
        )
        .unwrap();
        assert!((got - acc / 21.0).abs() < 1e-12);
    }

    #[test]
    fn mrse_rejects_nonpositive_truth() {
        let est = ReproMatrix::new(Array2::from_elem((1, 3), 1.0)).unwrap();
        let truth = ReproMatrix::new(Array2::zeros((1, 3))).unwrap();
        assert!(mrse(&est, &truth).is_err());
        let narrow = ReproMatrix::new(Array2::from_elem((1, 2), 1.0)).unwrap();
        assert!(mrse(&narrow, &est).is_err());
    }

    #[test]
    fn laplacian_error_identity_and_zero() {
        let l = three_cluster_graph();
        assert_eq!(laplacian_recovery_error(l.matrix(), l.matrix()).unwrap(), 0.0);
        let zero = Array2::zeros((9, 9));
        assert!((laplacian_recovery_error(&zero, l.matrix()).unwrap() - 1.0).abs() < 1e-15);
        assert!(laplacian_recovery_error(&zero, &zero).is_err());
    }

    #[test]
    fn laplacian_error_matches_scalar_loop() {
        let truth = three_cluster_graph();
        let est = blur_laplacian(&truth, 0.1).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..9 {
            for j in 0..9 {
                let d = est.matrix()[(i, j)] - truth.matrix()[(i, j)];
                num += d * d;
                den += truth.matrix()[(i, j)].powi(2);
            }
        }
        let got = laplacian_recovery_error(est.matrix(), truth.matrix()).unwrap();
        assert!((got - num / den).abs() < 1e-14);
    }

    #[test]
    fn support_exact_below_min_weight() {
        let l = three_cluster_graph();
        let rec = support_recovery(&l, &l, 1e-6).unwrap();
        assert_eq!(
            rec,
            SupportRecovery {
                exact: true,
                false_positives: 0,
                false_negatives: 0
            }
        );
    }

    #[test]
    fn support_counts_blur_as_false_positives() {
        let truth = three_cluster_graph();
        let blurred = blur_laplacian(&truth, 0.05).unwrap();
        let rec = support_recovery(&blurred, &truth, 1e-6).unwrap();
        assert!(!rec.exact);
        assert_eq!(rec.false_positives, 27);
        assert_eq!(rec.false_negatives, 0);
    }

    #[test]
    fn support_counts_missed_edges() {
        let truth = three_cluster_graph();
        // A threshold above every weight hides all 9 true edges.
        let rec = support_recovery(&truth, &truth, 10.0).unwrap();
        assert!(!rec.exact);
        assert_eq!(rec.false_positives, 0);
        assert_eq!(rec.false_negatives, 9);
    }

    #[test]
    fn support_rejects_bad_threshold() {
        let l = three_cluster_graph();
        assert!(support_recovery(&l, &l, 0.0).is_err());
    }
}
