//! Hardware constants, channel loss and the repeaterless benchmark.
//!
//! Distances are always the full Alice-to-Bob fiber length `D`; the dealer
//! Charlie sits at `D / 2`. Each sender's pulses therefore cross `D / 2` km of
//! fiber with attenuation `alpha` dB/km before hitting a detector of
//! efficiency `eta_d`:
//!
//! ```text
//! sqrt(eta) = eta_d * 10^(-alpha * D / 20)      (per arm)
//! eta       = eta_d * 10^(-alpha * D / 10)      (end to end, used by PLOB)
//! ```
//!
//! The detector efficiency enters the per-arm value once, so
//! `arm_transmittance^2 == eta_d * eta`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Detector and fiber constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    /// Detector efficiency.
    pub eta_d: f64,
    /// Dark-count probability per pulse slot.
    pub p_d: f64,
    /// Misalignment error rate.
    pub e_d: f64,
    /// Fiber attenuation in dB/km.
    pub alpha: f64,
    /// Error-correction inefficiency.
    pub f: f64,
}

impl SystemParams {
    /// The ultralow-loss fiber setup used throughout the examples:
    /// 56% detectors, `1e-8` dark counts, 2% misalignment, 0.167 dB/km, `f = 1.1`.
    pub const fn ultralow_loss() -> Self {
        Self {
            eta_d: 0.56,
            p_d: 1e-8,
            e_d: 0.02,
            alpha: 0.167,
            f: 1.1,
        }
    }

    pub fn with_misalignment(self, e_d: f64) -> Self {
        Self { e_d, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            self.eta_d > 0.0 && self.eta_d <= 1.0,
            "eta_d",
            self.eta_d,
            "detector efficiency must lie in (0, 1]",
        )?;
        ensure(
            (0.0..1.0).contains(&self.p_d),
            "p_d",
            self.p_d,
            "dark-count probability must lie in [0, 1)",
        )?;
        ensure(
            (0.0..=0.5).contains(&self.e_d),
            "e_d",
            self.e_d,
            "misalignment must lie in [0, 0.5]",
        )?;
        ensure(self.alpha > 0.0, "alpha", self.alpha, "attenuation must be positive")?;
        ensure(self.f >= 1.0, "f", self.f, "error-correction inefficiency must be >= 1")?;
        Ok(())
    }
}

impl Default for SystemParams {
    fn default() -> Self {
        Self::ultralow_loss()
    }
}

/// Symmetric link geometry: total Alice-to-Bob distance with Charlie in the middle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Total fiber distance in km.
    pub distance_km: f64,
}

impl Geometry {
    pub fn new(distance_km: f64) -> Result<Self> {
        let geom = Self { distance_km };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            self.distance_km >= 0.0 && self.distance_km.is_finite(),
            "D",
            self.distance_km,
            "distance must be a finite nonnegative number of km",
        )
    }

    /// Always true: asymmetric placement is not modeled.
    pub fn is_symmetric(&self) -> bool {
        true
    }
}

/// Efficiency from one sender to Charlie's detectors, `eta_d * 10^(-alpha D / 20)`.
pub fn arm_transmittance(params: &SystemParams, geom: &Geometry) -> f64 {
    params.eta_d * 10f64.powf(-params.alpha * geom.distance_km / 20.0)
}

/// End-to-end transmittance `eta_d * 10^(-alpha D / 10)` entering the PLOB bound.
pub fn total_transmittance(params: &SystemParams, geom: &Geometry) -> f64 {
    params.eta_d * 10f64.powf(-params.alpha * geom.distance_km / 10.0)
}

/// Repeaterless secret-key capacity `-log2(1 - eta)` in bits per pulse.
pub fn plob_bound(params: &SystemParams, geom: &Geometry) -> Result<f64> {
    let eta = total_transmittance(params, geom);
    if eta >= 1.0 {
        return Err(Error::Divergent(eta));
    }
    Ok(-(-eta).ln_1p() / std::f64::consts::LN_2)
}
