//! Numerical check that Charlie's interference measurement and the virtual
//! location measurement announce index pairs with identical statistics.
//!
//! States live on the single-photon subspace of `2L` modes: Bob's pulses
//! `1..=L` occupy basis indices `0..L`, Alice's pulses `1..=L` occupy `L..2L`.
//!
//! The interference measurement for shift `(r, b)` projects onto
//! `(|k>_B + (-1)^s |k + (-1)^b r>_A) / sqrt(2)` for every `k` whose partner
//! exists, each outcome passing a filter of efficiency 1/2. It announces
//! `{j_A = k + (-1)^b r, i_B = k}`.
//!
//! The location measurement `E'_k = (P(|k>_B) + P(|k>_A)) / 2` reveals which
//! pulse carried the photon. A Bob click at `k` is completed to the pair
//! `{k + (-1)^b r, k}`, an Alice click at `k` to `{k, k - (-1)^b r}`. Clicks
//! whose completed partner falls outside `1..=L` count as no detection.
//!
//! Both give `p({j_A, i_B}) = [p(j_A) + p(i_B)] / 2`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

pub const STATE_TOLERANCE: f64 = 1e-12;
pub const EQUIVALENCE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Bob(u32),
    Alice(u32),
}

impl Mode {
    fn index(self, l: u32) -> usize {
        match self {
            Mode::Bob(k) => (k - 1) as usize,
            Mode::Alice(k) => (l + k - 1) as usize,
        }
    }
}

fn check_shift(l: u32, r: u32, b: u8) -> Result<()> {
    if l < 2 {
        return Err(Error::Domain { name: "L", value: l as f64, reason: "need at least two pulses" });
    }
    if r == 0 || r >= l {
        return Err(Error::Domain { name: "r", value: r as f64, reason: "shift must lie in 1..L" });
    }
    if b > 1 {
        return Err(Error::Domain { name: "b", value: b as f64, reason: "sign must be a bit" });
    }
    Ok(())
}

fn signed(r: u32, b: u8) -> i64 {
    if b == 0 {
        r as i64
    } else {
        -(r as i64)
    }
}

fn in_range(l: u32, k: i64) -> Option<u32> {
    (1..=l as i64).contains(&k).then_some(k as u32)
}

/// Density operator of one photon spread over `L` Bob and `L` Alice modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SinglePhotonState {
    train_len: u32,
    rho: CMatrix,
}

impl SinglePhotonState {
    /// Wraps `rho` after checking Hermiticity, unit trace and positivity.
    pub fn new(train_len: u32, rho: CMatrix) -> Result<Self> {
        let dim = 2 * train_len as usize;
        if train_len < 2 || rho.nrows() != dim || rho.ncols() != dim {
            return Err(Error::Config(format!(
                "state must be {dim}x{dim} for L = {train_len}, got {}x{}",
                rho.nrows(),
                rho.ncols()
            )));
        }
        let herm = (&rho - rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm > STATE_TOLERANCE {
            return Err(Error::Domain { name: "hermiticity", value: herm, reason: "state is not Hermitian" });
        }
        let tr = rho.trace();
        if (tr - Complex64::new(1.0, 0.0)).norm() > STATE_TOLERANCE {
            return Err(Error::Domain { name: "trace", value: tr.re, reason: "state must have unit trace" });
        }
        let min_eig = rho.clone().symmetric_eigenvalues().min();
        if min_eig < -STATE_TOLERANCE {
            return Err(Error::Domain { name: "eigenvalue", value: min_eig, reason: "state is not positive semidefinite" });
        }
        Ok(Self { train_len, rho })
    }

    pub fn basis(train_len: u32, mode: Mode) -> Result<Self> {
        let mut psi = vec![Complex64::new(0.0, 0.0); 2 * train_len as usize];
        let i = mode.index(train_len);
        if i >= psi.len() {
            return Err(Error::Config(format!("mode {mode:?} outside L = {train_len}")));
        }
        psi[i] = Complex64::new(1.0, 0.0);
        Self::pure(train_len, &psi)
    }

    pub fn maximally_mixed(train_len: u32) -> Result<Self> {
        let dim = 2 * train_len as usize;
        Self::new(train_len, CMatrix::identity(dim, dim).unscale(dim as f64))
    }

    /// `|psi><psi|` for a normalized amplitude vector.
    pub fn pure(train_len: u32, psi: &[Complex64]) -> Result<Self> {
        let v = nalgebra::DVector::from_column_slice(psi);
        Self::new(train_len, &v * v.adjoint())
    }

    /// Normalized complex-Gaussian amplitudes.
    pub fn random_pure(train_len: u32, rng: &mut impl Rng) -> Result<Self> {
        let dim = 2 * train_len as usize;
        let v = nalgebra::DVector::from_fn(dim, |_, _| gaussian(rng));
        let v = v.unscale(v.norm());
        Self::pure(train_len, v.as_slice())
    }

    /// `G G^dagger / tr` for a `2L x rank` complex-Gaussian factor `G`.
    pub fn random_mixed(train_len: u32, rank: usize, rng: &mut impl Rng) -> Result<Self> {
        let dim = 2 * train_len as usize;
        let g = CMatrix::from_fn(dim, rank.max(1), |_, _| gaussian(rng));
        let rho = &g * g.adjoint();
        let tr = rho.trace().re;
        let mut rho = rho.unscale(tr);
        // restore exact Hermiticity after rounding
        rho = (&rho + rho.adjoint()).unscale(2.0);
        Self::new(train_len, rho)
    }

    /// `U rho U^dagger` with `U = diag(e^{i phase_m})`.
    pub fn with_mode_phases(&self, phases: &[f64]) -> Result<Self> {
        let dim = self.rho.nrows();
        if phases.len() != dim {
            return Err(Error::Config(format!("need {dim} phases, got {}", phases.len())));
        }
        let rho = CMatrix::from_fn(dim, dim, |i, j| {
            self.rho[(i, j)] * Complex64::from_polar(1.0, phases[i] - phases[j])
        });
        Self::new(self.train_len, rho)
    }

    pub fn train_len(&self) -> u32 {
        self.train_len
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.rho
    }

    /// Photon-location probability `<k|rho|k>`.
    pub fn population(&self, mode: Mode) -> f64 {
        let i = mode.index(self.train_len);
        self.rho[(i, i)].re
    }

    /// `Re tr(rho E)`.
    pub fn expectation(&self, op: &CMatrix) -> f64 {
        // tr(rho E) = sum_ij rho_ij E_ji
        self.rho.iter().zip(op.transpose().iter()).map(|(a, b)| a * b).sum::<Complex64>().re
    }
}

fn gaussian(rng: &mut impl Rng) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// One interference outcome: Bob pulse `k`, partner Alice pulse, detector `s`.
#[derive(Debug, Clone)]
pub struct InterferenceElement {
    pub k: u32,
    pub partner: u32,
    pub s: u8,
    pub op: CMatrix,
}

/// Rank-one projectors of the interference measurement for shift `(r, b)`.
pub fn interference_povm(train_len: u32, r: u32, b: u8) -> Result<Vec<InterferenceElement>> {
    check_shift(train_len, r, b)?;
    let dim = 2 * train_len as usize;
    let half = Complex64::new(0.5, 0.0);
    let mut out = Vec::new();
    for k in 1..=train_len {
        let Some(partner) = in_range(train_len, k as i64 + signed(r, b)) else {
            continue;
        };
        let (i, j) = (Mode::Bob(k).index(train_len), Mode::Alice(partner).index(train_len));
        for s in 0..2u8 {
            // |v><v| with v = (|k>_B + (-1)^s |partner>_A) / sqrt(2), entries exactly +-1/2
            let cross = if s == 0 { half } else { -half };
            let mut op = CMatrix::zeros(dim, dim);
            op[(i, i)] = half;
            op[(j, j)] = half;
            op[(i, j)] = cross;
            op[(j, i)] = cross;
            out.push(InterferenceElement { k, partner, s, op });
        }
    }
    Ok(out)
}

fn mode_projector(train_len: u32, mode: Mode) -> CMatrix {
    let dim = 2 * train_len as usize;
    let mut m = CMatrix::zeros(dim, dim);
    let i = mode.index(train_len);
    m[(i, i)] = Complex64::new(1.0, 0.0);
    m
}

/// Location operators `E'_k = (P(|k>_B) + P(|k>_A)) / 2` for `k = 1..=L`.
pub fn location_povm(train_len: u32) -> Result<Vec<CMatrix>> {
    if train_len < 2 {
        return Err(Error::Domain { name: "L", value: train_len as f64, reason: "need at least two pulses" });
    }
    Ok((1..=train_len)
        .map(|k| (mode_projector(train_len, Mode::Bob(k)) + mode_projector(train_len, Mode::Alice(k))).unscale(2.0))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    Interference,
    Location,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairProbability {
    pub j_a: u32,
    pub i_b: u32,
    pub p: f64,
}

/// Probabilities of every announceable `{j_A, i_B}` plus the residual no-detection outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnouncementDistribution {
    pub r: u32,
    pub b: u8,
    /// Ordered by `i_B`; one entry per valid pair.
    pub entries: Vec<PairProbability>,
    pub no_detection: f64,
}

impl AnnouncementDistribution {
    fn empty(train_len: u32, r: u32, b: u8) -> Self {
        let entries = (1..=train_len)
            .filter_map(|i_b| {
                in_range(train_len, i_b as i64 + signed(r, b)).map(|j_a| PairProbability { j_a, i_b, p: 0.0 })
            })
            .collect();
        Self { r, b, entries, no_detection: 0.0 }
    }

    fn slot(&mut self, i_b: u32) -> &mut PairProbability {
        self.entries
            .iter_mut()
            .find(|e| e.i_b == i_b)
            .expect("pair is announceable")
    }

    pub fn get(&self, j_a: u32, i_b: u32) -> Option<f64> {
        self.entries.iter().find(|e| e.j_a == j_a && e.i_b == i_b).map(|e| e.p)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.p).sum::<f64>() + self.no_detection
    }

    /// Largest entrywise difference, including the no-detection outcome.
    pub fn max_deviation(&self, other: &Self) -> f64 {
        assert_eq!(self.entries.len(), other.entries.len(), "distributions for different shifts");
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| {
                assert_eq!((a.j_a, a.i_b), (b.j_a, b.i_b));
                (a.p - b.p).abs()
            })
            .fold((self.no_detection - other.no_detection).abs(), f64::max)
    }
}

/// Announcement statistics of `state` under the chosen measurement and shift.
pub fn announcement_distribution(
    state: &SinglePhotonState,
    kind: MeasurementKind,
    r: u32,
    b: u8,
) -> Result<AnnouncementDistribution> {
    let l = state.train_len();
    check_shift(l, r, b)?;
    let mut dist = AnnouncementDistribution::empty(l, r, b);
    let shift = signed(r, b);
    match kind {
        MeasurementKind::Interference => {
            for e in interference_povm(l, r, b)? {
                dist.slot(e.k).p += 0.5 * state.expectation(&e.op);
            }
        }
        MeasurementKind::Location => {
            for k in 1..=l {
                let bob = 0.5 * state.expectation(&mode_projector(l, Mode::Bob(k)));
                if in_range(l, k as i64 + shift).is_some() {
                    dist.slot(k).p += bob;
                }
                let alice = 0.5 * state.expectation(&mode_projector(l, Mode::Alice(k)));
                if let Some(i_b) = in_range(l, k as i64 - shift) {
                    dist.slot(i_b).p += alice;
                }
            }
        }
    }
    dist.no_detection = 1.0 - dist.entries.iter().map(|e| e.p).sum::<f64>();
    Ok(dist)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateFamily {
    Basis,
    Pure,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftDeviation {
    pub r: u32,
    pub b: u8,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    #[serde(rename = "L")]
    pub train_len: u32,
    pub family: StateFamily,
    pub trials: usize,
    pub seed: u64,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub per_shift: Vec<ShiftDeviation>,
    pub pass: bool,
}

fn trial_state(train_len: u32, family: StateFamily, trial: usize, rng: &mut ChaCha8Rng) -> Result<SinglePhotonState> {
    match family {
        StateFamily::Basis => {
            let i = (trial % (2 * train_len as usize)) as u32;
            let mode = if i < train_len { Mode::Bob(i + 1) } else { Mode::Alice(i - train_len + 1) };
            SinglePhotonState::basis(train_len, mode)
        }
        StateFamily::Pure => SinglePhotonState::random_pure(train_len, rng),
        StateFamily::Mixed => {
            let rank = rng.random_range(1..=2 * train_len as usize);
            SinglePhotonState::random_mixed(train_len, rank, rng)
        }
    }
}

/// Compare both measurements on `trials` random mixed states for every `(r, b)`.
pub fn equivalence_report(train_len: u32, trials: usize, seed: u64) -> Result<EquivalenceReport> {
    equivalence_report_for(train_len, trials, seed, StateFamily::Mixed)
}

pub fn equivalence_report_for(train_len: u32, trials: usize, seed: u64, family: StateFamily) -> Result<EquivalenceReport> {
    if trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    if !(2..=64).contains(&train_len) {
        return Err(Error::Config(format!("L = {train_len} outside the dense range 2..=64")));
    }
    let shifts: Vec<(u32, u8)> = (1..train_len).flat_map(|r| [(r, 0u8), (r, 1u8)]).collect();
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let state = trial_state(train_len, family, t, &mut rng)?;
            shifts
                .iter()
                .map(|&(r, b)| {
                    let a = announcement_distribution(&state, MeasurementKind::Interference, r, b)?;
                    let c = announcement_distribution(&state, MeasurementKind::Location, r, b)?;
                    Ok(a.max_deviation(&c))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let per_shift: Vec<ShiftDeviation> = shifts
        .iter()
        .enumerate()
        .map(|(i, &(r, b))| ShiftDeviation {
            r,
            b,
            max_deviation: per_trial.iter().map(|d| d[i]).fold(0.0, f64::max),
        })
        .collect();
    let max_deviation = per_shift.iter().map(|s| s.max_deviation).fold(0.0, f64::max);
    Ok(EquivalenceReport {
        train_len,
        family,
        trials,
        seed,
        max_deviation,
        tolerance: EQUIVALENCE_TOLERANCE,
        per_shift,
        pass: max_deviation <= EQUIVALENCE_TOLERANCE,
    })
}
