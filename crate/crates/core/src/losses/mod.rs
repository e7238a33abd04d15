//! Loss kernels: values and analytic gradients with respect to the unit
//! embeddings.
//!
//! Five objectives live here. The plasticity side learns the current task:
//! the supervised contrastive loss (with its asymmetric buffer variant) and
//! the focal prototype-anchored contrastive loss that also repels the
//! current batch from the prototypes of earlier tasks. The stability side
//! distills against a frozen teacher: instance-relation distillation over
//! sample-sample similarity rows, sample-prototype relation distillation
//! over similarity-to-prototype rows, and their epoch-scheduled blend.
//!
//! All kernels are pure functions of their inputs; gradients are taken with
//! respect to the embeddings as given (the chain rule through the encoder's
//! L2 normalization belongs to the encoder). Per-anchor terms are reduced in
//! index order so values are bit-reproducible, and every softmax-style ratio
//! subtracts the max logit before exponentiating.

mod fnc2;
mod hsd;
mod supcon;

pub use fnc2::{fnc2_loss, fnc2_relations};
pub use hsd::{
    alpha_schedule, hsd_loss, ird_loss, ird_relation, sprd_loss, sprd_relation,
};
pub use supcon::{supcon_loss, supcon_loss_opts, supcon_relations};

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::math;

/// Temperature and focusing exponent for the plasticity losses.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlasticityConfig {
    /// Softmax temperature; must be positive.
    pub tau: f64,
    /// Focusing exponent on hard terms; `0` disables focal weighting.
    pub gamma: f64,
    /// Skip anchors with no positive view instead of erroring. The skipped
    /// anchor keeps only its prototype term, still normalized by
    /// `1/(|positives| + 1)`.
    #[cfg_attr(feature = "serde", serde(default))]
    pub skip_degenerate_anchors: bool,
}

impl PlasticityConfig {
    pub fn new(tau: f64, gamma: f64) -> Self {
        Self {
            tau,
            gamma,
            skip_degenerate_anchors: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!(
                "plasticity temperature must be positive, got {}",
                self.tau
            )));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!(
                "focusing exponent must be nonnegative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Temperatures and warm-up schedule for the distillation losses.
///
/// Past relation rows always use the `*_past` temperature and current rows
/// the `*_current` one.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DistillationConfig {
    pub kappa_past: f64,
    pub kappa_current: f64,
    pub zeta_past: f64,
    pub zeta_current: f64,
    /// Warm-up epochs before the prototype-relation term starts blending in.
    pub warmup_epochs: usize,
    /// Total epochs of the current task; the blend weight is
    /// `max(0, (epoch - warmup_epochs)) / total_epochs`.
    pub total_epochs: usize,
}

impl DistillationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("kappa_past", self.kappa_past),
            ("kappa_current", self.kappa_current),
            ("zeta_past", self.zeta_past),
            ("zeta_current", self.zeta_current),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!(
                    "distillation temperature {name} must be positive, got {v}"
                )));
            }
        }
        if self.total_epochs == 0 {
            return Err(Error::Config("total epochs must be positive".into()));
        }
        if self.warmup_epochs > self.total_epochs {
            return Err(Error::Config(format!(
                "warmup epochs ({}) exceed total epochs ({})",
                self.warmup_epochs, self.total_epochs
            )));
        }
        Ok(())
    }
}

/// Scalar loss plus its gradient with respect to every embedding row.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub value: f64,
    /// Same shape as the batch embeddings. For the distillation losses only
    /// the current embeddings receive gradient; the teacher is stop-gradient
    /// by construction.
    pub grad_z: Mat,
    /// Anchors whose prototype ratio exceeded one (possible because the
    /// ratio's own numerator is absent from the shared denominator). Zero
    /// for every loss without a prototype term.
    pub anchors_above_one: usize,
}

impl LossOutput {
    pub(crate) fn zeros(views: usize, dim: usize) -> Self {
        Self {
            value: 0.0,
            grad_z: Mat::zeros(views, dim),
            anchors_above_one: 0,
        }
    }
}

/// Which similarity structure a [`RelationDistribution`] describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelationKind {
    /// Row `i`: softmax over sample-sample similarities to every other view.
    SampleSample,
    /// Row `i`: softmax over similarities to a fixed prototype list.
    SampleProto,
    /// Row `i`: positive-pair ratios of the focal contrastive loss
    /// (sub-stochastic; the shared denominator also covers negatives).
    FocalPositive,
    /// Row `i`: the anchor's own-prototype ratio (may exceed one).
    FocalProto,
}

impl RelationKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RelationKind::SampleSample => "sample-sample",
            RelationKind::SampleProto => "sample-prototype",
            RelationKind::FocalPositive => "focal-positive",
            RelationKind::FocalProto => "focal-prototype",
        }
    }
}

/// Ragged matrix of relation rows, for inspection and debug dumps.
#[derive(Clone, Debug)]
pub struct RelationDistribution {
    pub kind: RelationKind,
    /// One row per view (or per anchor for the focal kinds).
    pub rows: Vec<Vec<f64>>,
}

/// `log(sum(exp(logits)))` with max subtraction; `-inf` for an empty slice.
pub(crate) fn log_sum_exp(logits: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &l in logits {
        if l > max {
            max = l;
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut acc = 0.0;
    for &l in logits {
        acc += math::exp(l - max);
    }
    max + math::ln(acc)
}

/// `(1 - x)^gamma`, defined for negative bases when `gamma` is an integer
/// (signed power). A negative base with fractional `gamma` has no real
/// power; the kernels reject that combination up front.
pub(crate) fn focal_weight(x: f64, gamma: f64) -> f64 {
    let base = 1.0 - x;
    if gamma == 0.0 {
        1.0
    } else if base >= 0.0 {
        math::powf(base, gamma)
    } else {
        debug_assert!(math::is_integer(gamma));
        let magnitude = math::powf(-base, gamma);
        if (gamma as i64) % 2 == 0 {
            magnitude
        } else {
            -magnitude
        }
    }
}

/// d/dx of `(1 - x)^gamma * ln(x)`.
pub(crate) fn focal_term_derivative(x: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        return 1.0 / x;
    }
    // At x == 1 the product rule's first term is 0 * (1-x)^(gamma-1); its
    // limit is 0 for every gamma > 0.
    let first = if x == 1.0 {
        0.0
    } else {
        -gamma * focal_weight_shifted(x, gamma - 1.0) * math::ln(x)
    };
    first + focal_weight(x, gamma) / x
}

fn focal_weight_shifted(x: f64, gamma: f64) -> f64 {
    let base = 1.0 - x;
    if gamma == 0.0 {
        1.0
    } else if base > 0.0 {
        math::powf(base, gamma)
    } else if base == 0.0 {
        // gamma < 0 would be 0^negative; callers guard x == 1 beforehand.
        if gamma > 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        debug_assert!(math::is_integer(gamma));
        let magnitude = math::powf(-base, gamma);
        if (gamma as i64).rem_euclid(2) == 0 {
            magnitude
        } else {
            -magnitude
        }
    }
}

/// Rejects a fractional focusing exponent when a ratio sits above one, where
/// `(1-x)^gamma` would leave the reals.
pub(crate) fn check_focal_domain(x: f64, gamma: f64) -> Result<()> {
    if x > 1.0 && gamma != 0.0 && !math::is_integer(gamma) {
        return Err(Error::Domain(format!(
            "prototype ratio {x} exceeds 1 with fractional focusing exponent {gamma}; \
             no real focal weight exists"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn log_sum_exp_matches_naive_on_moderate_logits() {
        let logits: Vec<f64> = vec![0.3, -1.2, 2.0, 0.0];
        let naive: f64 = logits.iter().map(|&l| l.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&logits) - naive).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_survives_huge_logits() {
        let logits: Vec<f64> = vec![1000.0, 1000.0];
        assert!((log_sum_exp(&logits) - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn focal_weight_handles_signed_bases() {
        assert_eq!(focal_weight(0.5, 0.0), 1.0);
        assert!((focal_weight(0.5, 2.0) - 0.25).abs() < 1e-15);
        // x > 1: base is negative; odd exponent keeps the sign.
        assert!((focal_weight(1.5, 3.0) + 0.125).abs() < 1e-15);
        assert!((focal_weight(1.5, 2.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn focal_derivative_finite_difference() {
        let h = 1e-7;
        for &(x, gamma) in &[(0.3, 1.0), (0.7, 4.0), (0.2, 0.0), (1.4, 2.0), (1.3, 3.0)] {
            let f = |x: f64| focal_weight(x, gamma) * x.ln();
            let numeric = (f(x + h) - f(x - h)) / (2.0 * h);
            let analytic = focal_term_derivative(x, gamma);
            assert!(
                (numeric - analytic).abs() / numeric.abs().max(1.0) < 1e-6,
                "x={x} gamma={gamma}: {numeric} vs {analytic}"
            );
        }
    }

    #[test]
    fn focal_derivative_is_zero_at_perfect_alignment() {
        assert_eq!(focal_term_derivative(1.0, 1.0), 0.0);
        assert_eq!(focal_term_derivative(1.0, 4.0), 0.0);
    }
}
