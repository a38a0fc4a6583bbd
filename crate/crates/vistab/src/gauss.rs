//! Divergences between diagonal Gaussians and between finite discrete
//! distributions.
//!
//! These are the metric primitives the bound assembly is built on: exact KL
//! for diagonal Gaussians, a floor-normalized upper bound on that KL that only
//! needs parameter-difference norms, the Pinsker total-variation bound, and
//! the exact 2-Wasserstein distance for diagonal Gaussians.
//!
//! KL is asymmetric; every function here computes the divergence *from its
//! first argument to its second* (`kl_diag_gauss(q, p)` is `KL(q ‖ p)`), so
//! both orders are available by swapping arguments. The bound pipeline
//! measures divergences from the retrained (replaced-example) posterior to the
//! original one.

use crate::error::Error;
use crate::Result;

/// A product of independent one-dimensional Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl DiagGaussian {
    /// Validates that `mean` and `std` have equal lengths, all entries are
    /// finite, and every standard deviation is strictly positive.
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: std.len(),
            });
        }
        if mean.is_empty() {
            return Err(Error::out_of_range("mean", "dimension must be at least 1"));
        }
        for (i, &m) in mean.iter().enumerate() {
            if !m.is_finite() {
                return Err(Error::out_of_range("mean", format!("non-finite entry {m} at index {i}")));
            }
        }
        for (i, &s) in std.iter().enumerate() {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::NonPositive {
                    name: "std",
                    value: s,
                    index: i,
                });
            }
        }
        Ok(DiagGaussian { mean, std })
    }

    /// Isotropic Gaussian `N(mean_value · 1, std_value² · I)` in `dim` dimensions.
    pub fn isotropic(dim: usize, mean_value: f64, std_value: f64) -> Result<Self> {
        DiagGaussian::new(vec![mean_value; dim], vec![std_value; dim])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    fn check_same_dim(&self, other: &DiagGaussian) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }
}

/// A distribution over finitely many outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    probs: Vec<f64>,
}

impl DiscreteDist {
    /// Validates that all probabilities are non-negative and sum to 1 within `1e-9`.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidProbabilities {
                reason: "no outcomes".into(),
            });
        }
        for (i, &p) in probs.iter().enumerate() {
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::InvalidProbabilities {
                    reason: format!("entry {p} at index {i} is not a probability"),
                });
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidProbabilities {
                reason: format!("probabilities sum to {total}, expected 1"),
            });
        }
        Ok(DiscreteDist { probs })
    }

    /// Two-outcome distribution `(1 - p, p)` for success probability `p`.
    pub fn bernoulli(p: f64) -> Result<Self> {
        if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidProbabilities {
                reason: format!("bernoulli parameter {p} outside [0, 1]"),
            });
        }
        Ok(DiscreteDist {
            probs: vec![1.0 - p, p],
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Exact KL divergence `KL(q ‖ p)` between diagonal Gaussians:
/// the sum over coordinates of
/// `ln(σ_p/σ_q) + (σ_q² + (m_q − m_p)²) / (2 σ_p²) − 1/2`.
pub fn kl_diag_gauss(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64> {
    q.check_same_dim(p)?;
    let mut total = 0.0;
    for i in 0..q.dim() {
        let (mq, sq) = (q.mean[i], q.std[i]);
        let (mp, sp) = (p.mean[i], p.std[i]);
        let dm = mq - mp;
        total += (sp / sq).ln() + (sq * sq + dm * dm) / (2.0 * sp * sp) - 0.5;
    }
    Ok(total)
}

/// Upper bound on `KL(q ‖ p)` in terms of parameter-difference norms, valid
/// when every standard deviation of both arguments is at least `sigma0`:
///
/// `2‖σ_q − σ_p‖₁ / σ0  +  ‖σ_q − σ_p‖₂² / (2σ0²)  +  ‖m_q − m_p‖₂² / (2σ0²)`.
///
/// The expression is symmetric in its arguments, unlike the KL it dominates.
pub fn kl_upper_bound(q: &DiagGaussian, p: &DiagGaussian, sigma0: f64) -> Result<f64> {
    q.check_same_dim(p)?;
    if !(sigma0.is_finite() && sigma0 > 0.0) {
        return Err(Error::NonPositive {
            name: "sigma0",
            value: sigma0,
            index: 0,
        });
    }
    for g in [q, p] {
        for (i, &s) in g.std.iter().enumerate() {
            if s < sigma0 {
                return Err(Error::StdBelowFloor {
                    value: s,
                    index: i,
                    floor: sigma0,
                });
            }
        }
    }
    let ds_l1 = crate::numeric::l1_diff(&q.std, &p.std);
    let ds_l2 = crate::numeric::l2_diff(&q.std, &p.std);
    let dm_l2 = crate::numeric::l2_diff(&q.mean, &p.mean);
    Ok(2.0 * ds_l1 / sigma0 + ds_l2 * ds_l2 / (2.0 * sigma0 * sigma0)
        + dm_l2 * dm_l2 / (2.0 * sigma0 * sigma0))
}

/// Pinsker bound on total variation from a KL value: `√(kl / 2)`.
pub fn tv_pinsker(kl: f64) -> Result<f64> {
    if !(kl.is_finite() && kl >= 0.0) {
        return Err(Error::out_of_range("kl", format!("must be finite and ≥ 0, got {kl}")));
    }
    Ok((kl / 2.0).sqrt())
}

/// Exact 2-Wasserstein distance between diagonal Gaussians:
/// `√(‖m_q − m_p‖₂² + ‖σ_q − σ_p‖₂²)`.
pub fn w2_diag_gauss(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64> {
    q.check_same_dim(p)?;
    let dm = crate::numeric::l2_diff(&q.mean, &p.mean);
    let ds = crate::numeric::l2_diff(&q.std, &p.std);
    Ok((dm * dm + ds * ds).sqrt())
}

/// Total variation distance between discrete distributions over the same
/// outcome set: half the L1 distance of the probability vectors.
pub fn tv_discrete(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    if p.probs.len() != q.probs.len() {
        return Err(Error::DimensionMismatch {
            expected: p.probs.len(),
            got: q.probs.len(),
        });
    }
    Ok(0.5 * crate::numeric::l1_diff(&p.probs, &q.probs))
}

/// KL divergence `KL(p ‖ q)` between discrete distributions, with the
/// convention `0 · ln(0 / q_i) = 0`. Errors when `p` puts mass on an outcome
/// where `q` has none.
pub fn kl_discrete(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    if p.probs.len() != q.probs.len() {
        return Err(Error::DimensionMismatch {
            expected: p.probs.len(),
            got: q.probs.len(),
        });
    }
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.probs.iter().zip(&q.probs).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::SupportViolation { index: i, p: pi });
        }
        total += pi * (pi / qi).ln();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn g1(m: f64, s: f64) -> DiagGaussian {
        DiagGaussian::new(vec![m], vec![s]).unwrap()
    }

    #[test]
    fn kl_of_identical_gaussians_is_zero() {
        let q = DiagGaussian::new(vec![0.4, -1.0], vec![0.3, 2.0]).unwrap();
        assert_eq!(kl_diag_gauss(&q, &q).unwrap(), 0.0);
    }

    #[test]
    fn kl_unit_variance_mean_shift_is_half_square() {
        // Equal unit stds, mean shift 1 → KL = 1/2 · 1² = 0.5.
        let q = g1(1.0, 1.0);
        let p = g1(0.0, 1.0);
        assert_relative_eq!(kl_diag_gauss(&q, &p).unwrap(), 0.5, max_relative = 1e-15);
    }

    #[test]
    fn kl_matches_hand_computed_value() {
        // ln(1.3/0.7) + (0.7² + 0.5²)/(2·1.3²) − 1/2, worked by hand.
        let q = g1(0.3, 0.7);
        let p = g1(-0.2, 1.3);
        assert_relative_eq!(kl_diag_gauss(&q, &p).unwrap(), 0.33797412, epsilon = 1e-7);
    }

    #[test]
    fn kl_is_additive_over_coordinates() {
        let q = DiagGaussian::new(vec![0.3, -0.1], vec![0.7, 1.1]).unwrap();
        let p = DiagGaussian::new(vec![-0.2, 0.4], vec![1.3, 0.8]).unwrap();
        let per_dim = kl_diag_gauss(&g1(0.3, 0.7), &g1(-0.2, 1.3)).unwrap()
            + kl_diag_gauss(&g1(-0.1, 1.1), &g1(0.4, 0.8)).unwrap();
        assert_relative_eq!(kl_diag_gauss(&q, &p).unwrap(), per_dim, max_relative = 1e-14);
    }

    #[test]
    fn kl_is_asymmetric_and_both_orders_are_reachable() {
        let q = g1(0.0, 0.5);
        let p = g1(0.0, 1.5);
        let forward = kl_diag_gauss(&q, &p).unwrap();
        let reverse = kl_diag_gauss(&p, &q).unwrap();
        assert!(forward > 0.0 && reverse > 0.0);
        assert!((forward - reverse).abs() > 1e-3);
    }

    #[test]
    fn kl_rejects_dimension_mismatch() {
        let q = g1(0.0, 1.0);
        let p = DiagGaussian::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            kl_diag_gauss(&q, &p),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gaussian_constructor_rejects_bad_std() {
        assert!(DiagGaussian::new(vec![0.0], vec![0.0]).is_err());
        assert!(DiagGaussian::new(vec![0.0], vec![-1.0]).is_err());
        assert!(DiagGaussian::new(vec![0.0], vec![f64::NAN]).is_err());
    }

    #[test]
    fn upper_bound_mean_only_case_matches_arithmetic() {
        // Equal stds at the floor, mean gap 0.2, σ0 = 0.1:
        // bound = 0 + 0 + 0.2²/(2·0.1²) = 2.0.
        let q = g1(0.2, 0.1);
        let p = g1(0.0, 0.1);
        assert_relative_eq!(kl_upper_bound(&q, &p, 0.1).unwrap(), 2.0, max_relative = 1e-15);
    }

    #[test]
    fn upper_bound_dominates_exact_kl_and_is_symmetric() {
        let q = DiagGaussian::new(vec![0.5, -0.3], vec![0.12, 0.4]).unwrap();
        let p = DiagGaussian::new(vec![0.1, 0.2], vec![0.3, 0.11]).unwrap();
        let sigma0 = 0.1;
        let ub = kl_upper_bound(&q, &p, sigma0).unwrap();
        assert!(ub >= kl_diag_gauss(&q, &p).unwrap());
        assert!(ub >= kl_diag_gauss(&p, &q).unwrap());
        assert_eq!(ub, kl_upper_bound(&p, &q, sigma0).unwrap());
    }

    #[test]
    fn upper_bound_rejects_std_below_floor() {
        let q = g1(0.0, 0.05);
        let p = g1(0.0, 0.2);
        assert!(matches!(
            kl_upper_bound(&q, &p, 0.1),
            Err(Error::StdBelowFloor { .. })
        ));
    }

    #[test]
    fn pinsker_example_value() {
        assert_relative_eq!(tv_pinsker(0.02).unwrap(), 0.1, max_relative = 1e-12);
        assert_eq!(tv_pinsker(0.0).unwrap(), 0.0);
        assert!(tv_pinsker(-1e-9).is_err());
    }

    #[test]
    fn w2_example_value() {
        // 1-D: mean gap 0.3, std gap 0.4 → distance 0.5.
        let q = g1(0.3, 0.5);
        let p = g1(0.0, 0.9);
        assert_relative_eq!(w2_diag_gauss(&q, &p).unwrap(), 0.5, max_relative = 1e-15);
    }

    #[test]
    fn w2_is_zero_only_for_identical_arguments() {
        let q = g1(0.3, 0.5);
        assert_eq!(w2_diag_gauss(&q, &q).unwrap(), 0.0);
        let p = g1(0.3, 0.6);
        assert!(w2_diag_gauss(&q, &p).unwrap() > 0.0);
    }

    #[test]
    fn tv_discrete_disjoint_supports_is_one() {
        let p = DiscreteDist::new(vec![1.0, 0.0]).unwrap();
        let q = DiscreteDist::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(tv_discrete(&p, &q).unwrap(), 1.0);
        assert_eq!(tv_discrete(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn kl_discrete_zero_mass_convention_and_support_check() {
        let p = DiscreteDist::new(vec![0.0, 1.0]).unwrap();
        let q = DiscreteDist::new(vec![0.5, 0.5]).unwrap();
        // 0·ln(0/0.5) contributes nothing.
        assert_relative_eq!(kl_discrete(&p, &q).unwrap(), f64::ln(2.0), max_relative = 1e-15);
        // Mass where q has none is an error, not infinity.
        assert!(matches!(
            kl_discrete(&q, &p),
            Err(Error::SupportViolation { index: 0, .. })
        ));
    }

    #[test]
    fn discrete_constructor_validates_total_mass() {
        assert!(DiscreteDist::new(vec![0.5, 0.4]).is_err());
        assert!(DiscreteDist::new(vec![0.5, -0.5, 1.0]).is_err());
        assert!(DiscreteDist::bernoulli(1.2).is_err());
    }

    #[test]
    fn bernoulli_kl_matches_direct_formula() {
        let a = DiscreteDist::bernoulli(0.4).unwrap();
        let b = DiscreteDist::bernoulli(0.6).unwrap();
        let direct = 0.4 * f64::ln(0.4 / 0.6) + 0.6 * f64::ln(0.6 / 0.4);
        assert_relative_eq!(kl_discrete(&a, &b).unwrap(), direct, max_relative = 1e-14);
    }
}
