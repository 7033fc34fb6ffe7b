//! Analytic gain, error rates and secret-key rates.
//!
//! All rates are in secret bits per transmitted pulse. A train carries `L`
//! pulses of total mean photon number `mu`; with `x = 2 mu sqrt(eta)` the
//! expected number of interfering photons reaching Charlie's detectors,
//!
//! ```text
//! Q   = 1/2 [1 - (1 - L p_d) e^{-x}]
//! e_b = [e_d (1 - e^{-x}) + L p_d e^{-x} / 2] / [1 - (1 - L p_d) e^{-x}]
//! ```
//!
//! Both are evaluated in the `expm1` form `1 - (1 - L p_d) e^{-x} = -expm1(-x) + L p_d e^{-x}`,
//! which keeps full precision when `x` is of order `1e-6` at long distances.
//!
//! Privacy amplification is charged through [`phase_entropy`], the binary
//! entropy saturated at one bit for phase error rates of 1/2 and above.
//! Without the saturation an all-tagged train (`e_p = 1`) would be charged
//! nothing.

mod finite;

pub use finite::{
    binomial_tail, binomial_tail_quantile, finite_size_bounds, finite_size_phase_entropy,
    gaussian_soundness, gaussian_tail_fraction, keyrate_inside_finite, shortcut_phase_entropy,
    FiniteSizeBounds, FiniteSizeParams, GaussianSoundness, TailMethod,
};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::model::{arm_transmittance, Geometry, SystemParams};

/// Tunable protocol knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Total mean photon number of one `L`-pulse train.
    pub mu: f64,
    /// Pulses per train.
    #[serde(rename = "L")]
    pub train_len: u32,
    /// Photon-number tagging threshold.
    pub nu_th: u32,
}

impl ProtocolParams {
    pub fn new(mu: f64, train_len: u32, nu_th: u32) -> Result<Self> {
        let p = Self { mu, train_len, nu_th };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            self.train_len >= 2,
            "L",
            self.train_len as f64,
            "a train needs at least two pulses",
        )?;
        ensure(
            self.mu >= 0.0 && self.mu.is_finite(),
            "mu",
            self.mu,
            "intensity must be finite and nonnegative",
        )
    }

    /// Phase-error bound `nu_th / (L - 1)` for untagged trains, capped at 1.
    pub fn untagged_phase_error(&self) -> f64 {
        (self.nu_th as f64 / (self.train_len - 1) as f64).min(1.0)
    }
}

/// Every intermediate quantity of one key-rate evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBreakdown {
    pub q: f64,
    pub q_a: f64,
    pub q_b: f64,
    pub q_hat: f64,
    pub e_b: f64,
    pub e_src: f64,
    /// Phase error rate against an outside eavesdropper.
    pub e_p: f64,
    /// Phase error rate against a dishonest player.
    pub e_p_hat: f64,
    /// Entropy charged for privacy amplification in the reported rate.
    pub phase_entropy: f64,
    /// Finite-size bounds, present only for finite-size evaluations.
    pub finite: Option<FiniteSizeBounds>,
    /// Rate before clamping; may be negative.
    pub rate_raw: f64,
    /// Reported rate, `max(rate_raw, 0)`.
    pub rate: f64,
}

impl RateBreakdown {
    pub fn is_clamped(&self) -> bool {
        self.rate_raw <= 0.0
    }
}

/// Binary Shannon entropy in bits, with `h(0) = h(1) = 0`.
pub fn binary_entropy(x: f64) -> Result<f64> {
    ensure((0.0..=1.0).contains(&x), "x", x, "entropy argument must be a probability")?;
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-(x * x.log2() + (1.0 - x) * (-x).ln_1p() / std::f64::consts::LN_2))
}

/// Privacy-amplification cost of a phase error rate: `h(e)` below 1/2, one bit at or above.
pub fn phase_entropy(e: f64) -> f64 {
    if e >= 0.5 {
        1.0
    } else {
        binary_entropy(e.max(0.0)).expect("clamped into [0, 1/2)")
    }
}

/// Interfering photon number `x = 2 mu sqrt(eta)` and the two click-probability pieces.
struct Clicks {
    /// `e^{-x}`
    no_signal: f64,
    /// `1 - e^{-x}`
    signal: f64,
    /// `L p_d`
    dark: f64,
}

impl Clicks {
    fn new(sys: &SystemParams, proto: &ProtocolParams, geom: &Geometry) -> Result<Self> {
        proto.validate()?;
        let dark = proto.train_len as f64 * sys.p_d;
        if dark >= 1.0 {
            return Err(Error::Unphysical(dark));
        }
        let x = 2.0 * proto.mu * arm_transmittance(sys, geom);
        Ok(Self {
            no_signal: (-x).exp(),
            signal: -(-x).exp_m1(),
            dark,
        })
    }

    /// `1 - (1 - L p_d) e^{-x}`
    fn any_click(&self) -> f64 {
        self.signal + self.dark * self.no_signal
    }
}

/// Train gain `Q`.
pub fn gain(sys: &SystemParams, proto: &ProtocolParams, geom: &Geometry) -> Result<f64> {
    Ok(0.5 * Clicks::new(sys, proto, geom)?.any_click())
}

/// Bit error rate `e_b` among effective trains.
pub fn bit_error_rate(sys: &SystemParams, proto: &ProtocolParams, geom: &Geometry) -> Result<f64> {
    let c = Clicks::new(sys, proto, geom)?;
    let den = c.any_click();
    if den <= 0.0 {
        return Err(Error::Degenerate("no signal and no dark counts: bit error rate undefined"));
    }
    Ok((sys.e_d * c.signal + 0.5 * c.dark * c.no_signal) / den)
}

/// Probability that a Poisson train of mean `mu` carries more than `nu_th` photons.
///
/// The upper tail is summed directly when `nu_th` sits above the mean so tiny
/// tagging probabilities keep their relative precision.
pub fn source_tag_probability(mu: f64, nu_th: u32) -> Result<f64> {
    ensure(mu >= 0.0 && mu.is_finite(), "mu", mu, "intensity must be finite and nonnegative")?;
    if mu == 0.0 {
        return Ok(0.0);
    }
    let k0 = nu_th as f64 + 1.0;
    if k0 > mu {
        // ln of e^{-mu} mu^k / k! at k = nu_th + 1
        let ln_fact: f64 = (2..=nu_th + 1).map(|i| (i as f64).ln()).sum();
        let mut term = (-mu + k0 * mu.ln() - ln_fact).exp();
        let mut sum = 0.0;
        let mut k = k0;
        while term > sum * 1e-17 {
            sum += term;
            k += 1.0;
            term *= mu / k;
        }
        Ok(sum.min(1.0))
    } else {
        let mut term = (-mu).exp();
        let mut cdf = term;
        for k in 1..=nu_th {
            term *= mu / k as f64;
            cdf += term;
        }
        Ok((1.0 - cdf).max(0.0))
    }
}

fn tagged_phase_error(tagged_fraction: f64, nu_th: u32, train_len: u32) -> f64 {
    if tagged_fraction >= 1.0 {
        return 1.0;
    }
    let base = (nu_th as f64 / (train_len - 1) as f64).min(1.0);
    (tagged_fraction + (1.0 - tagged_fraction) * base).clamp(0.0, 1.0)
}

/// Outside-eavesdropper phase error `2 e_src / Q + (1 - 2 e_src / Q) nu_th / (L - 1)`.
///
/// Returns 1 once both honest sources together are fully tagged (`2 e_src >= Q`).
pub fn phase_error_outside(q: f64, e_src: f64, nu_th: u32, train_len: u32) -> Result<f64> {
    ensure(q > 0.0, "Q", q, "gain must be positive")?;
    ensure(train_len >= 2, "L", train_len as f64, "a train needs at least two pulses")?;
    Ok(tagged_phase_error(2.0 * e_src / q, nu_th, train_len))
}

/// Inside-adversary phase error `e_src / Q_hat + (1 - e_src / Q_hat) nu_th / (L - 1)`.
pub fn phase_error_inside(q_hat: f64, e_src: f64, nu_th: u32, train_len: u32) -> Result<f64> {
    ensure(q_hat > 0.0, "Q_hat", q_hat, "gain must be positive")?;
    ensure(train_len >= 2, "L", train_len as f64, "a train needs at least two pulses")?;
    Ok(tagged_phase_error(e_src / q_hat, nu_th, train_len))
}

/// Inside-adversary privacy-amplification charge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InsidePhaseModel {
    /// `h(e_p_hat)`, the single phase error rate of the inside-adversary formula.
    ErrorRate,
    /// `p1 + (1 - p1) h(p2)`: tagged bits are surrendered outright and only the
    /// untagged remainder pays entropy. This is the infinite-block limit of the
    /// finite-size analysis.
    TaggedSplit,
    Finite(FiniteSizeParams),
}

fn evaluate_channel(sys: &SystemParams, proto: &ProtocolParams, geom: &Geometry) -> Result<RateBreakdown> {
    sys.validate()?;
    geom.validate()?;
    let q = gain(sys, proto, geom)?;
    let e_b = bit_error_rate(sys, proto, geom)?;
    let e_src = source_tag_probability(proto.mu, proto.nu_th)?;
    let (q_a, q_b) = (0.5 * q, 0.5 * q);
    let q_hat = q_a.min(q_b);
    let e_p = phase_error_outside(q, e_src, proto.nu_th, proto.train_len)?;
    let e_p_hat = phase_error_inside(q_hat, e_src, proto.nu_th, proto.train_len)?;
    Ok(RateBreakdown {
        q,
        q_a,
        q_b,
        q_hat,
        e_b,
        e_src,
        e_p,
        e_p_hat,
        phase_entropy: f64::NAN,
        finite: None,
        rate_raw: f64::NAN,
        rate: f64::NAN,
    })
}

fn finish(mut b: RateBreakdown, rate_raw: f64, phase_entropy: f64) -> RateBreakdown {
    b.phase_entropy = phase_entropy;
    b.rate_raw = rate_raw;
    b.rate = rate_raw.max(0.0);
    b
}

/// Key rate against an outside eavesdropper, `(Q / L) [1 - h(e_p) - f h(e_b)]`.
pub fn keyrate_outside(sys: &SystemParams, proto: &ProtocolParams, geom: &Geometry) -> Result<RateBreakdown> {
    let b = evaluate_channel(sys, proto, geom)?;
    let hp = phase_entropy(b.e_p);
    let raw = b.q / proto.train_len as f64 * (1.0 - hp - sys.f * binary_entropy(b.e_b)?);
    Ok(finish(b, raw, hp))
}

/// Key rate against a dishonest player, `(1/L) {Q_hat [1 - h(e_p_hat)] - Q f h(e_b)}`.
pub fn keyrate_inside(sys: &SystemParams, proto: &ProtocolParams, geom: &Geometry) -> Result<RateBreakdown> {
    keyrate_inside_with(sys, proto, geom, InsidePhaseModel::ErrorRate)
}

/// Inside-adversary key rate with an explicit privacy-amplification model.
pub fn keyrate_inside_with(
    sys: &SystemParams,
    proto: &ProtocolParams,
    geom: &Geometry,
    model: InsidePhaseModel,
) -> Result<RateBreakdown> {
    let mut b = evaluate_channel(sys, proto, geom)?;
    let p1 = (b.e_src / b.q_hat).min(1.0);
    let p2 = proto.untagged_phase_error();
    let hp = match model {
        InsidePhaseModel::ErrorRate => phase_entropy(b.e_p_hat),
        InsidePhaseModel::TaggedSplit => finite::asymptotic_phase_entropy(p1, p2),
        InsidePhaseModel::Finite(fin) => {
            let bounds = finite_size_bounds(b.e_src, b.q_hat, p2, &fin)?;
            b.finite = Some(bounds);
            bounds.entropy
        }
    };
    let raw = (b.q_hat * (1.0 - hp) - b.q * sys.f * binary_entropy(b.e_b)?) / proto.train_len as f64;
    Ok(finish(b, raw, hp))
}
