//! Gradient clipping and Gaussian noise on the uploaded global table.
//!
//! With clipping at `tau`, replacing one client's data moves the aggregated
//! `C` of a single-step round by at most `2 * eta * tau / n_s` in Frobenius
//! norm. Noise is drawn with standard deviation `z` times that bound and
//! added client-side, before upload.
//!
//! Without noise or shrinkage, a server that sees a client's upload for a
//! round can read the client's gradient straight off it:
//! `(C_broadcast - C_upload) / eta`. The sign convention here is "descent
//! direction": the recovered matrix is the gradient that was subtracted.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyConfig {
    pub enabled: bool,
    /// Clipping threshold on the Frobenius norm of the gradient of `C`.
    pub tau: f64,
    /// Noise multiplier.
    pub z: f64,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        PrivacyConfig {
            enabled: false,
            tau: 0.1,
            z: 1.0,
        }
    }
}

impl PrivacyConfig {
    pub fn enabled(tau: f64, z: f64) -> Self {
        PrivacyConfig {
            enabled: true,
            tau,
            z,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::InvalidParam("tau must be > 0".into()));
        }
        if !(self.z >= 0.0) {
            return Err(Error::InvalidParam("z must be >= 0".into()));
        }
        Ok(())
    }

    /// Standard deviation of the per-entry upload noise.
    pub fn noise_sigma(&self, eta: f64, n_s: usize) -> f64 {
        self.z * sensitivity_bound(eta, self.tau, n_s)
    }
}

/// `g * min(1, tau / ||g||_F)`.
pub fn clip_gradient(g: &Matrix, tau: f64) -> Matrix {
    let norm = g.frobenius_norm();
    let mut out = g.clone();
    if norm > tau {
        out.scale(tau / norm);
    }
    out
}

/// Adds i.i.d. `N(0, sigma^2)` to every entry. `sigma = 0` is the identity.
pub fn add_gaussian_noise<R: Rng + ?Sized>(m: &Matrix, sigma: f64, rng: &mut R) -> Result<Matrix> {
    let mut out = m.clone();
    add_gaussian_noise_in_place(&mut out, sigma, rng)?;
    Ok(out)
}

pub fn add_gaussian_noise_in_place<R: Rng + ?Sized>(
    m: &mut Matrix,
    sigma: f64,
    rng: &mut R,
) -> Result<()> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParam(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParam(e.to_string()))?;
    m.as_mut_slice()
        .iter_mut()
        .for_each(|v| *v += normal.sample(rng));
    Ok(())
}

/// `2 * eta * tau / n_s`.
pub fn sensitivity_bound(eta: f64, tau: f64, n_s: usize) -> f64 {
    2.0 * eta * tau / n_s as f64
}

/// `(c_before - c_after) / eta`: the summed gradient a client applied to the
/// global table between two of its observed states.
pub fn recover_gradient(c_before: &Matrix, c_after: &Matrix, eta: f64) -> Result<Matrix> {
    let mut diff = c_before.sub(c_after)?;
    diff.scale(1.0 / eta);
    Ok(diff)
}
