use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Drift magnitude and slope threshold.
///
/// The simulated process is `B_t = B*_t - mu * t`, i.e. it drifts with
/// velocity `-mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec<T> {
    pub mu: T,
    pub h: T,
}

impl<T: Scalar> ModelSpec<T> {
    pub fn new(mu: T, h: T) -> Result<Self> {
        if !mu.is_finite() {
            return Err(invalid(format!("drift must be finite, got {mu}")));
        }
        if !(h > T::zero()) || !h.is_finite() {
            return Err(invalid(format!(
                "threshold h must be positive and finite, got {h}"
            )));
        }
        Ok(Self { mu, h })
    }

    /// Closed forms are only valid away from the driftless case.
    pub fn require_drift(&self) -> Result<()> {
        if self.mu == T::zero() {
            Err(Error::Unsupported(
                "closed forms require non-zero drift (mu = 0)".into(),
            ))
        } else {
            Ok(())
        }
    }

    /// The same threshold with the drift reversed; the law of `-B`.
    pub fn reflected(&self) -> Self {
        Self {
            mu: -self.mu,
            h: self.h,
        }
    }

    pub fn mu_h(&self) -> T {
        self.mu * self.h
    }
}

/// A Laplace argument together with `alpha + mu^2 / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaHat<T> {
    pub alpha: T,
    pub hat_alpha: T,
}

impl<T: Scalar> AlphaHat<T> {
    pub fn new(alpha: T, mu: T) -> Self {
        Self {
            alpha,
            hat_alpha: alpha + mu * mu * T::half(),
        }
    }

    /// `sqrt(2 * hat_alpha)`, failing when `hat_alpha <= 0`.
    pub fn root(&self) -> Result<T> {
        if self.hat_alpha > T::zero() {
            Ok((T::two() * self.hat_alpha).sqrt())
        } else {
            Err(crate::error::domain(
                "hat_alpha > 0",
                format!("alpha = {}, hat_alpha = {}", self.alpha, self.hat_alpha),
            ))
        }
    }
}
