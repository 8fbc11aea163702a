//! Mode coverage: what fraction of samples lands inside a capture ball
//! around each mixture component, and how many components attract at least
//! a threshold fraction. The blunt but honest diagnostic for mode dropping
//! on teachers whose modes are known exactly.

use crate::MetricsError;
use autodiff_nn::Tensor;
use sde_teacher::GaussianMixtureDensity;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeCoverageReport {
    /// Fraction of samples captured by each component, in component order.
    pub per_mode_fraction: Vec<f64>,
    /// Number of components whose fraction meets the threshold.
    pub covered_count: usize,
    /// Capture radius in units of the component's standard deviation.
    pub capture_radius_sigmas: f64,
}

/// Assign every sample to its nearest component mean; count it as captured
/// when it falls within `radius_sigmas` component standard deviations. A
/// component is covered when its captured fraction reaches `threshold`.
///
/// Requires well-separated modes (pairwise mean distance above twice the
/// capture radius), otherwise capture balls overlap and "coverage" stops
/// meaning anything.
pub fn mode_coverage(
    samples: &Tensor,
    teacher: &GaussianMixtureDensity,
    radius_sigmas: f64,
    threshold: f64,
) -> Result<ModeCoverageReport, MetricsError> {
    let n = samples.nrows();
    if n == 0 {
        return Err(MetricsError::EmptySamples);
    }
    let dim = teacher.dim();
    if samples.ncols() != dim {
        return Err(MetricsError::DimMismatch { expected: dim, got: samples.ncols() });
    }
    if !(radius_sigmas > 0.0) || !(0.0..=1.0).contains(&threshold) {
        return Err(MetricsError::BadParam(format!(
            "need radius_sigmas > 0 and threshold in [0,1], got ({radius_sigmas}, {threshold})"
        )));
    }

    let comps = teacher.components();
    let stds: Vec<f64> = comps
        .iter()
        .map(|c| c.diag_cov.iter().cloned().fold(0.0f64, f64::max).sqrt())
        .collect();
    let max_std = stds.iter().cloned().fold(0.0f64, f64::max);
    for (i, a) in comps.iter().enumerate() {
        for b in comps.iter().skip(i + 1) {
            let d2: f64 =
                a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
            if d2.sqrt() <= 2.0 * radius_sigmas * max_std {
                return Err(MetricsError::BadParam(format!(
                    "modes too close for radius {radius_sigmas}σ: mean distance {:.3} ≤ {:.3}",
                    d2.sqrt(),
                    2.0 * radius_sigmas * max_std
                )));
            }
        }
    }

    let mut captured = vec![0usize; comps.len()];
    for i in 0..n {
        let mut best = 0usize;
        let mut best_d2 = f64::INFINITY;
        for (k, c) in comps.iter().enumerate() {
            let d2: f64 =
                (0..dim).map(|d| (samples[(i, d)] - c.mean[d]).powi(2)).sum();
            if d2 < best_d2 {
                best_d2 = d2;
                best = k;
            }
        }
        if best_d2.sqrt() <= radius_sigmas * stds[best] {
            captured[best] += 1;
        }
    }

    let per_mode_fraction: Vec<f64> =
        captured.iter().map(|&c| c as f64 / n as f64).collect();
    let covered_count = per_mode_fraction.iter().filter(|&&f| f >= threshold).count();
    Ok(ModeCoverageReport { per_mode_fraction, covered_count, capture_radius_sigmas: radius_sigmas })
}

#[cfg(test)]
mod tests {
    use super::*;
    use autodiff_nn::DetRng;

    fn ring8() -> GaussianMixtureDensity {
        GaussianMixtureDensity::ring(8, 4.0, 0.2).unwrap()
    }

    fn tensor_from_rows(rows: &[[f64; 2]]) -> Tensor {
        let mut t = Tensor::zeros((rows.len(), 2));
        for (i, r) in rows.iter().enumerate() {
            t[(i, 0)] = r[0];
            t[(i, 1)] = r[1];
        }
        t
    }

    #[test]
    fn all_samples_at_one_center_covers_one_mode() {
        let teacher = ring8();
        let c0 = teacher.components()[0].mean.clone();
        let rows: Vec<[f64; 2]> = (0..100).map(|_| [c0[0], c0[1]]).collect();
        let rep = mode_coverage(&tensor_from_rows(&rows), &teacher, 3.0, 0.01).unwrap();
        assert_eq!(rep.covered_count, 1);
        assert!((rep.per_mode_fraction[0] - 1.0).abs() < 1e-12);
        assert!(rep.per_mode_fraction[1..].iter().all(|&f| f == 0.0));
    }

    #[test]
    fn exact_teacher_samples_cover_all_modes() {
        let teacher = ring8();
        let mut rng = DetRng::stream(11, "coverage-oracle");
        let samples = teacher.sample(10_000, &mut rng);
        let rep = mode_coverage(&samples, &teacher, 3.0, 0.01).unwrap();
        assert_eq!(rep.covered_count, 8, "{:?}", rep.per_mode_fraction);
        let total: f64 = rep.per_mode_fraction.iter().sum();
        assert!(total <= 1.0 + 1e-12);
        // Equal weights: every mode should attract roughly 1/8 of the mass.
        for &f in &rep.per_mode_fraction {
            assert!((f - 0.125).abs() < 0.02, "{:?}", rep.per_mode_fraction);
        }
    }

    #[test]
    fn samples_outside_every_ball_cover_nothing() {
        let teacher = ring8();
        let rows: Vec<[f64; 2]> = (0..50).map(|i| [100.0 + i as f64, -90.0]).collect();
        let rep = mode_coverage(&tensor_from_rows(&rows), &teacher, 3.0, 0.01).unwrap();
        assert_eq!(rep.covered_count, 0);
        assert!(rep.per_mode_fraction.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn permutation_of_samples_is_irrelevant() {
        let teacher = ring8();
        let mut rng = DetRng::stream(3, "coverage-perm");
        let samples = teacher.sample(512, &mut rng);
        let rep_a = mode_coverage(&samples, &teacher, 3.0, 0.01).unwrap();
        let n = samples.nrows();
        let mut reversed = Tensor::zeros((n, 2));
        for i in 0..n {
            reversed[(i, 0)] = samples[(n - 1 - i, 0)];
            reversed[(i, 1)] = samples[(n - 1 - i, 1)];
        }
        let rep_b = mode_coverage(&reversed, &teacher, 3.0, 0.01).unwrap();
        assert_eq!(rep_a.per_mode_fraction, rep_b.per_mode_fraction);
        assert_eq!(rep_a.covered_count, rep_b.covered_count);
    }

    #[test]
    fn overlapping_modes_are_rejected() {
        let teacher = GaussianMixtureDensity::ring(8, 0.5, 0.2).unwrap();
        let samples = Tensor::zeros((4, 2));
        let err = mode_coverage(&samples, &teacher, 3.0, 0.01).unwrap_err();
        assert!(matches!(err, MetricsError::BadParam(_)), "{err}");
    }

    #[test]
    fn empty_samples_are_rejected() {
        let err = mode_coverage(&Tensor::zeros((0, 2)), &ring8(), 3.0, 0.01).unwrap_err();
        assert!(matches!(err, MetricsError::EmptySamples));
    }
}
