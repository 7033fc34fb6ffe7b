//! Finite-size corrections to the inside-adversary key rate.
//!
//! With security parameter `s` (`eps1 = eps2 = 2^-s`) and `N` sifted bits, a
//! fraction `r1` of the sifted key is set aside as possibly tagged and the
//! remaining `N (1 - r1)` bits carry at most a fraction `r2` of phase errors:
//!
//! ```text
//! h(e_p_hat) = r1 + (1 - r1) h(r2) + s / N
//! r1 ~ p1 + sqrt(2 ln2 p1 s / N)               p1 = e_src / Q_hat
//! r2 ~ p2 + sqrt(2 ln2 p2 (1 - p2) s / N)      p2 = nu_th / (L - 1)
//! ```
//!
//! The square-root forms come from a Gaussian approximation of the binomial
//! tail. [`TailMethod::ExactBinomial`] instead inverts the exact tail
//! `fbar(a; n, p) = sum_{k > a} C(n, k) p^k (1 - p)^(n - k)` computed by
//! [`binomial_tail`]. Binomial probabilities use Loader's saddle-point
//! expansion, which stays accurate for `n` in the billions.

use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI};

use super::{phase_entropy, InsidePhaseModel, RateBreakdown};
use crate::error::{ensure, Result};
use crate::model::{Geometry, SystemParams};
use crate::keyrate::{keyrate_inside_with, ProtocolParams};

/// How `r1` and `r2` are derived from the target failure probability `2^-s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailMethod {
    #[default]
    Gaussian,
    ExactBinomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiniteSizeParams {
    /// Number of sifted key bits `N`.
    #[serde(rename = "N")]
    pub n_sifted: u64,
    /// Security exponent: `eps1 = eps2 = 2^-s`.
    pub s: u32,
    #[serde(default)]
    pub tail: TailMethod,
}

impl FiniteSizeParams {
    pub fn new(n_sifted: u64, s: u32) -> Result<Self> {
        let p = Self {
            n_sifted,
            s,
            tail: TailMethod::Gaussian,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn exact(self) -> Self {
        Self {
            tail: TailMethod::ExactBinomial,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.n_sifted > 0, "N", self.n_sifted as f64, "block size must be positive")?;
        ensure(self.s > 0, "s", self.s as f64, "security exponent must be positive")
    }

    pub fn s_over_n(&self) -> f64 {
        self.s as f64 / self.n_sifted as f64
    }
}

/// Resolved finite-size bounds for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiniteSizeBounds {
    pub r1: f64,
    pub r2: f64,
    /// `r1 + (1 - r1) h(r2) + s / N`
    pub entropy: f64,
}

/// `p1 + (1 - p1) h(p2)`: the block-size-independent part of the penalty.
pub(crate) fn asymptotic_phase_entropy(p1: f64, p2: f64) -> f64 {
    let p1 = p1.clamp(0.0, 1.0);
    p1 + (1.0 - p1) * phase_entropy(p2)
}

/// Gaussian estimate of the tail fraction exceeded with probability `2^-s`,
/// `p + sqrt(2 ln2 p (1 - p) s / n)`.
pub fn gaussian_tail_fraction(p: f64, s_over_n: f64) -> f64 {
    p + (2.0 * LN_2 * p * (1.0 - p) * s_over_n).sqrt()
}

/// Finite-size phase entropy from the Gaussian bounds on `r1` and `r2`.
///
/// The tagged-fraction bound omits the `(1 - p1)` variance factor, as `e_src`
/// is a rare-event rate.
pub fn finite_size_phase_entropy(p1: f64, p2: f64, n_sifted: u64, s: u32) -> Result<f64> {
    ensure((0.0..=1.0).contains(&p1), "p1", p1, "must be a probability")?;
    ensure((0.0..=1.0).contains(&p2), "p2", p2, "must be a probability")?;
    let fin = FiniteSizeParams::new(n_sifted, s)?;
    Ok(gaussian_bounds(p1, p2, fin.s_over_n()).entropy)
}

fn gaussian_bounds(p1: f64, p2: f64, s_over_n: f64) -> FiniteSizeBounds {
    let r1 = (p1 + (2.0 * LN_2 * p1 * s_over_n).sqrt()).clamp(0.0, 1.0);
    let r2 = gaussian_tail_fraction(p2, s_over_n).clamp(0.0, 1.0);
    FiniteSizeBounds {
        r1,
        r2,
        entropy: r1 + (1.0 - r1) * phase_entropy(r2) + s_over_n,
    }
}

/// Closed-form shortcut `h_asy (1 + 1.98 sqrt(s / N))`.
pub fn shortcut_phase_entropy(p1: f64, p2: f64, n_sifted: u64, s: u32) -> f64 {
    asymptotic_phase_entropy(p1, p2) * (1.0 + 1.98 * (s as f64 / n_sifted as f64).sqrt())
}

/// Finite-size bounds for tagging probability `e_src`, gain `q_hat` and
/// untagged phase-error rate `p2`.
///
/// In exact mode the tagged count is binomial over `N_round = N / q_hat`
/// transmitted trains, so that `N_round * e_src = N * p1` as in the Gaussian form.
pub fn finite_size_bounds(e_src: f64, q_hat: f64, p2: f64, fin: &FiniteSizeParams) -> Result<FiniteSizeBounds> {
    fin.validate()?;
    ensure(q_hat > 0.0, "Q_hat", q_hat, "gain must be positive")?;
    let p1 = (e_src / q_hat).clamp(0.0, 1.0);
    let s_over_n = fin.s_over_n();
    match fin.tail {
        TailMethod::Gaussian => Ok(gaussian_bounds(p1, p2, s_over_n)),
        TailMethod::ExactBinomial => {
            let eps = 2f64.powi(-(fin.s as i32));
            let n = fin.n_sifted as f64;
            let rounds = (n / q_hat).round().min(u64::MAX as f64) as u64;
            let a1 = binomial_tail_quantile(rounds, e_src, eps)?;
            let r1 = (a1 as f64 / n).min(1.0);
            let remaining = (n * (1.0 - r1)).round() as u64;
            let r2 = if remaining == 0 {
                0.0
            } else {
                binomial_tail_quantile(remaining, p2, eps)? as f64 / remaining as f64
            };
            Ok(FiniteSizeBounds {
                r1,
                r2,
                entropy: r1 + (1.0 - r1) * phase_entropy(r2) + s_over_n,
            })
        }
    }
}

/// Inside-adversary key rate with the finite-size phase entropy.
pub fn keyrate_inside_finite(
    sys: &SystemParams,
    proto: &ProtocolParams,
    geom: &Geometry,
    fin: &FiniteSizeParams,
) -> Result<RateBreakdown> {
    fin.validate()?;
    keyrate_inside_with(sys, proto, geom, InsidePhaseModel::Finite(*fin))
}

// ---------------------------------------------------------------------------
// Binomial tail

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln(n!) - [(n + 1/2) ln n - n + ln sqrt(2 pi)]`
fn stirling_error(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15.0 {
        let ln_fact: f64 = (2..=n as u64).map(|i| (i as f64).ln()).sum();
        return ln_fact - (n + 0.5) * n.ln() + n - LN_SQRT_2PI;
    }
    let nn = n * n;
    (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
}

/// Deviance term `x ln(x / np) + np - x`, stable when `x` is close to `np`.
fn deviance(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        let v2 = v * v;
        for j in 1..1000 {
            ej *= v2;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / np).ln() + np - x
    }
}

/// Natural log of the binomial pmf.
fn ln_binomial_pmf(k: u64, n: u64, p: f64) -> f64 {
    let q = 1.0 - p;
    if p == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if q == 0.0 {
        return if k == n { 0.0 } else { f64::NEG_INFINITY };
    }
    let (kf, nf) = (k as f64, n as f64);
    if k == 0 {
        return nf * (-p).ln_1p();
    }
    if k == n {
        return nf * p.ln();
    }
    let lc = stirling_error(nf) - stirling_error(kf) - stirling_error(nf - kf) - deviance(kf, nf * p) - deviance(nf - kf, nf * q);
    let lf = (2.0 * PI).ln() + kf.ln() + (-kf / nf).ln_1p();
    lc - 0.5 * lf
}

/// Upper tail `P[X > a]` for `X ~ Binomial(n, p)`.
///
/// Sums whichever side of the distribution lies away from the mean, starting
/// from an accurately evaluated pmf and walking outwards by the ratio recurrence.
pub fn binomial_tail(a: u64, n: u64, p: f64) -> Result<f64> {
    ensure((0.0..=1.0).contains(&p), "p", p, "must be a probability")?;
    ensure(a <= n, "a", a as f64, "threshold must not exceed the number of trials")?;
    if a == n || p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    let odds = p / (1.0 - p);
    let mean = n as f64 * p;
    if (a + 1) as f64 > mean {
        let mut k = a + 1;
        let mut term = ln_binomial_pmf(k, n, p).exp();
        let mut sum = 0.0;
        while term > 0.0 && term > sum * 1e-17 {
            sum += term;
            if k == n {
                break;
            }
            term *= (n - k) as f64 / (k + 1) as f64 * odds;
            k += 1;
        }
        Ok(sum.min(1.0))
    } else {
        let mut k = a;
        let mut term = ln_binomial_pmf(k, n, p).exp();
        let mut lower = 0.0;
        while term > 0.0 && term > lower * 1e-17 {
            lower += term;
            if k == 0 {
                break;
            }
            term *= k as f64 / (n - k + 1) as f64 / odds;
            k -= 1;
        }
        Ok((1.0 - lower).clamp(0.0, 1.0))
    }
}

/// Smallest `a` with `binomial_tail(a, n, p) <= eps`.
pub fn binomial_tail_quantile(n: u64, p: f64, eps: f64) -> Result<u64> {
    ensure(eps > 0.0 && eps < 1.0, "eps", eps, "failure probability must lie in (0, 1)")?;
    ensure((0.0..=1.0).contains(&p), "p", p, "must be a probability")?;
    let (mut lo, mut hi) = (0u64, n);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if binomial_tail(mid, n, p)? <= eps {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(lo)
}

/// Exact versus Gaussian tail fraction at failure probability `2^-s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSoundness {
    pub n: u64,
    pub p: f64,
    pub s: u32,
    /// `a / n` from exact binomial inversion.
    pub exact: f64,
    /// Gaussian estimate of the same fraction.
    pub gaussian: f64,
    /// False when the exact fraction exceeds the Gaussian one by more than the slack.
    pub within_slack: bool,
}

impl GaussianSoundness {
    pub fn ratio(&self) -> f64 {
        self.exact / self.gaussian
    }
}

/// Compare the exact tail inversion with the Gaussian fraction, flagging points
/// where the Gaussian form undershoots by more than `slack` (relative).
pub fn gaussian_soundness(n: u64, p: f64, s: u32, slack: f64) -> Result<GaussianSoundness> {
    ensure(n > 0, "n", n as f64, "need at least one trial")?;
    let a = binomial_tail_quantile(n, p, 2f64.powi(-(s as i32)))?;
    let exact = a as f64 / n as f64;
    let gaussian = gaussian_tail_fraction(p, s as f64 / n as f64);
    Ok(GaussianSoundness {
        n,
        p,
        s,
        exact,
        gaussian,
        within_slack: exact <= gaussian * (1.0 + slack),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyrate::{keyrate_inside_with, binary_entropy};
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    /// Direct summation with exact-ish coefficients; only usable for small n.
    fn tail_oracle(a: u64, n: u64, p: f64) -> f64 {
        let mut total = 0.0;
        for k in (a + 1)..=n {
            let mut c = 1.0f64;
            for i in 0..k {
                c *= (n - i) as f64 / (i + 1) as f64;
            }
            total += c * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32);
        }
        total
    }

    #[test]
    fn tail_trivial_cases() {
        assert_eq!(binomial_tail(20, 20, 0.3).unwrap(), 0.0);
        assert!((binomial_tail(0, 1, 0.3).unwrap() - 0.3).abs() < 1e-15);
        assert!(binomial_tail(5, 4, 0.3).is_err());
        assert!(binomial_tail(1, 4, 1.3).is_err());
    }

    #[test]
    fn tail_golden_values() {
        // mpmath exact rational sums, 40 digits
        let cases = [
            (5, 20, 0.25, 0.382_827_345_612_895_44),
            (10, 1000, 0.01, 0.416_959_196_698_901_8),
            (30, 1000, 0.01, 6.419_928_603_137_664e-8),
            (120, 10_000, 0.01, 2.211_448_783_746_099e-2),
            (5000, 10_000, 0.5, 0.496_010_676_930_308_9),
            (400, 1000, 0.3, 7.030_147_530_266_878e-12),
        ];
        for (a, n, p, want) in cases {
            let got = binomial_tail(a, n, p).unwrap();
            assert!(rel(got, want) < 1e-10, "fbar({a}; {n}, {p}) = {got}, want {want}");
        }
    }

    #[test]
    fn tail_matches_direct_summation() {
        for n in [1u64, 2, 7, 30, 60] {
            for &p in &[0.01, 0.2, 0.5, 0.9] {
                for a in 0..=n {
                    let got = binomial_tail(a, n, p).unwrap();
                    let want = tail_oracle(a, n, p);
                    assert!((got - want).abs() < 1e-13 + 1e-10 * want, "n={n} p={p} a={a}");
                }
            }
        }
    }

    #[test]
    fn tail_handles_huge_n() {
        // symmetric binomial: P[X > n/2] = (1 - P[X = n/2]) / 2
        let n = 2_000_000_000u64;
        let got = binomial_tail(n / 2, n, 0.5).unwrap();
        let center = ln_binomial_pmf(n / 2, n, 0.5).exp();
        assert!(rel(got, 0.5 * (1.0 - center)) < 1e-9);
        assert!(rel(center, (2.0 / (PI * n as f64)).sqrt()) < 1e-8);
    }

    #[test]
    fn quantile_inverts_tail() {
        let eps = 2f64.powi(-30);
        let a = binomial_tail_quantile(5000, 0.05, eps).unwrap();
        assert!(binomial_tail(a, 5000, 0.05).unwrap() <= eps);
        assert!(binomial_tail(a - 1, 5000, 0.05).unwrap() > eps);
        assert_eq!(binomial_tail_quantile(100, 0.0, eps).unwrap(), 0);
    }

    #[test]
    fn entropy_only_security_term_survives_without_errors() {
        let h = finite_size_phase_entropy(0.0, 0.0, 10_000, 100).unwrap();
        assert!((h - 0.01).abs() < 1e-15);
    }

    #[test]
    fn entropy_converges_to_asymptotic() {
        let (p1, p2) = (0.03, 0.05);
        let asy = p1 + (1.0 - p1) * binary_entropy(p2).unwrap();
        let h = finite_size_phase_entropy(p1, p2, 1 << 62, 100).unwrap();
        assert!((h - asy).abs() < 1e-6);
        assert!(finite_size_phase_entropy(1.5, 0.0, 10, 1).is_err());
        assert!(finite_size_phase_entropy(0.1, 0.1, 0, 1).is_err());
    }

    #[test]
    fn exact_mode_agrees_with_gaussian_at_large_blocks() {
        let g = FiniteSizeParams::new(1_000_000_000, 100).unwrap();
        let e = g.exact();
        let a = finite_size_bounds(1e-4, 0.01, 0.06, &g).unwrap();
        let b = finite_size_bounds(1e-4, 0.01, 0.06, &e).unwrap();
        assert!(rel(b.r1, a.r1) < 0.02, "{} vs {}", b.r1, a.r1);
        assert!(rel(b.r2, a.r2) < 0.01, "{} vs {}", b.r2, a.r2);
    }

    #[test]
    fn finite_rate_tends_to_tagged_split() {
        let sys = SystemParams::ultralow_loss();
        let proto = ProtocolParams::new(12.0, 512, 32).unwrap();
        let geom = Geometry::new(500.0).unwrap();
        let asy = keyrate_inside_with(&sys, &proto, &geom, InsidePhaseModel::TaggedSplit).unwrap();
        let fin = keyrate_inside_finite(&sys, &proto, &geom, &FiniteSizeParams::new(1 << 62, 100).unwrap()).unwrap();
        assert!(rel(fin.rate, asy.rate) < 1e-5);
        assert!(fin.finite.is_some());
    }

    proptest! {
        #[test]
        fn finite_penalty_is_nonnegative(p1 in 0.0f64..1.0, p2 in 0.0f64..1.0, n in 1u64..1_000_000_000, s in 1u32..200) {
            let h = finite_size_phase_entropy(p1, p2, n, s).unwrap();
            prop_assert!(h >= asymptotic_phase_entropy(p1, p2));
        }

        #[test]
        fn finite_rate_below_tagged_split(mu in 0.01f64..60.0, lexp in 2u32..12, nu in 0u32..33,
                                          d in 0.0f64..700.0, nexp in 3u32..12, s in 50u32..160) {
            let sys = SystemParams::ultralow_loss();
            let proto = ProtocolParams::new(mu, 1 << lexp, nu).unwrap();
            let geom = Geometry::new(d).unwrap();
            let fin = FiniteSizeParams::new(10u64.pow(nexp), s).unwrap();
            let asy = keyrate_inside_with(&sys, &proto, &geom, InsidePhaseModel::TaggedSplit).unwrap();
            let f = keyrate_inside_finite(&sys, &proto, &geom, &fin).unwrap();
            prop_assert!(f.rate <= asy.rate);
        }
    }
}
