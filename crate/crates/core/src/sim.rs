//! Monte-Carlo simulation of protocol rounds, one pulse train at a time.
//!
//! Per train:
//!
//! 1. Alice and Bob draw `L` random phase bits each.
//! 2. Charlie draws the shift magnitude `r` in `1..L` and sign bit `b`, pairing
//!    Bob's pulse `i_B` with Alice's pulse `j_A = i_B + (-1)^b r`. Only the
//!    `L - r` slots where both indices exist can interfere.
//! 3. The interfering photons reaching the detectors are Poisson with mean
//!    `2 mu sqrt(eta)` and land in a uniformly chosen overlap slot. The
//!    detector is `s_{j_A} xor s_{i_B}`, flipped with probability `e_d`.
//! 4. Each of the `L` slots dark-clicks with probability `p_d` in a random detector.
//! 5. Charlie's interference setup passes a detection with efficiency 1/2.
//! 6. The train is effective when exactly one `(slot, detector)` click remains
//!    and its slot has a partner pulse. Charlie then announces `(j_A, i_B)`
//!    and keeps the detector index as `X_C`.
//!
//! In the default [`PhotonSlotting::SharedSlot`] model a multi-photon train
//! registers a single threshold click, which is the aggregate click model
//! behind the analytic gain. [`PhotonSlotting::Independent`] spreads photons
//! over slots one by one, so multi-photon trains usually produce several
//! clicks and are discarded; it undershoots the analytic gain at order
//! `2 mu sqrt(eta)`.
//!
//! Batches are split into fixed-size shards, each with its own ChaCha stream
//! derived from the seed, so results do not depend on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::keyrate::{bit_error_rate, gain, ProtocolParams};
use crate::model::{arm_transmittance, Geometry, SystemParams};

const SHARD_TRAINS: u64 = 8192;
const FILTER_EFFICIENCY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhotonSlotting {
    #[default]
    SharedSlot,
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub sys: SystemParams,
    pub proto: ProtocolParams,
    pub geom: Geometry,
    pub trains: u64,
    pub seed: u64,
    #[serde(default)]
    pub slotting: PhotonSlotting,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sys.validate()?;
        self.proto.validate()?;
        self.geom.validate()?;
        if self.trains == 0 {
            return Err(Error::Config("at least one train must be simulated".into()));
        }
        Ok(())
    }

    fn shards(&self) -> u64 {
        self.trains.div_ceil(SHARD_TRAINS)
    }

    fn shard_len(&self, shard: u64) -> u64 {
        (self.trains - shard * SHARD_TRAINS).min(SHARD_TRAINS)
    }

    fn shard_rng(&self, shard: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(shard);
        rng
    }
}

/// Indices and raw key bits announced for an effective train. Indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Announcement {
    pub j_a: u32,
    pub i_b: u32,
    pub x_a: u8,
    pub x_b: u8,
    pub x_c: u8,
    /// `x_a xor x_b != x_c`
    pub error: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub r: u32,
    pub b: u8,
    /// Present exactly when the train is effective.
    pub announcement: Option<Announcement>,
}

impl TrainOutcome {
    pub fn effective(&self) -> bool {
        self.announcement.is_some()
    }

    /// Signed shift `(-1)^b r`.
    pub fn shift(&self) -> i64 {
        if self.b == 0 {
            self.r as i64
        } else {
            -(self.r as i64)
        }
    }
}

struct Sampler {
    photons: Option<Poisson<f64>>,
    dark: Binomial,
    bits: Vec<u64>,
    clicks: Vec<(u32, u8)>,
}

impl Sampler {
    fn new(cfg: &TrainConfig) -> Result<Self> {
        let mean = 2.0 * cfg.proto.mu * arm_transmittance(&cfg.sys, &cfg.geom);
        let photons = if mean > 0.0 {
            Some(Poisson::new(mean).map_err(|e| Error::Config(format!("photon sampler: {e}")))?)
        } else {
            None
        };
        let dark = Binomial::new(cfg.proto.train_len as u64, cfg.sys.p_d)
            .map_err(|e| Error::Config(format!("dark-count sampler: {e}")))?;
        Ok(Self {
            photons,
            dark,
            bits: Vec::new(),
            clicks: Vec::new(),
        })
    }

    fn bit(&self, sender: usize, index: u32, words: usize) -> u8 {
        let i = (index - 1) as usize;
        ((self.bits[sender * words + i / 64] >> (i % 64)) & 1) as u8
    }

    fn push_click(&mut self, slot: u32, detector: u8) {
        if !self.clicks.contains(&(slot, detector)) {
            self.clicks.push((slot, detector));
        }
    }

    fn run(&mut self, cfg: &TrainConfig, rng: &mut impl Rng) -> TrainOutcome {
        let l = cfg.proto.train_len;
        // step (i): Alice's words first, then Bob's
        let words = (l as usize).div_ceil(64);
        self.bits.clear();
        self.bits.extend((0..2 * words).map(|_| rng.random::<u64>()));

        // step (ii)
        let r = rng.random_range(1..l);
        let b = rng.random_range(0..2u8);
        let shift = if b == 0 { r as i64 } else { -(r as i64) };
        let (lo, hi) = if b == 0 { (1, l - r) } else { (r + 1, l) };
        let partner = |i_b: u32| -> Option<u32> {
            let j = i_b as i64 + shift;
            (1..=l as i64).contains(&j).then_some(j as u32)
        };

        // step (iii): clicks
        self.clicks.clear();
        let n = self.photons.as_ref().map_or(0, |p| p.sample(rng) as u64);
        let shared_slot = rng.random_range(lo..=hi);
        for k in 0..n {
            let slot = match cfg.slotting {
                PhotonSlotting::SharedSlot => shared_slot,
                PhotonSlotting::Independent => {
                    if k == 0 {
                        shared_slot
                    } else {
                        rng.random_range(lo..=hi)
                    }
                }
            };
            let j_a = partner(slot).expect("overlap slot has a partner");
            let mut det = self.bit(0, j_a, words) ^ self.bit(1, slot, words);
            if rng.random_bool(cfg.sys.e_d) {
                det ^= 1;
            }
            self.push_click(slot, det);
            if cfg.slotting == PhotonSlotting::SharedSlot {
                break;
            }
        }
        let darks = self.dark.sample(rng);
        for _ in 0..darks {
            let slot = rng.random_range(1..=l);
            let det = rng.random_range(0..2u8);
            self.push_click(slot, det);
        }
        let passed = rng.random_bool(FILTER_EFFICIENCY);

        let announcement = match (passed, self.clicks.as_slice()) {
            (true, &[(i_b, x_c)]) => partner(i_b).map(|j_a| {
                let x_a = self.bit(0, j_a, words);
                let x_b = self.bit(1, i_b, words);
                Announcement {
                    j_a,
                    i_b,
                    x_a,
                    x_b,
                    x_c,
                    error: (x_a ^ x_b) != x_c,
                }
            }),
            _ => None,
        };
        TrainOutcome { r, b, announcement }
    }
}

/// Simulate a single train with caller-supplied randomness.
pub fn run_train(cfg: &TrainConfig, rng: &mut impl Rng) -> Result<TrainOutcome> {
    cfg.validate()?;
    Ok(Sampler::new(cfg)?.run(cfg, rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub trains: u64,
    pub effective_count: u64,
    pub error_count: u64,
    pub q_emp: f64,
    pub q_se: f64,
    pub e_b_emp: Option<f64>,
    pub e_b_se: Option<f64>,
    /// Announced `i_B` counts, index 0 is pulse 1.
    pub i_b_counts: Vec<u64>,
    /// Announced `j_A` counts, index 0 is pulse 1.
    pub j_a_counts: Vec<u64>,
}

#[derive(Clone)]
struct Tally {
    effective: u64,
    errors: u64,
    i_b: Vec<u64>,
    j_a: Vec<u64>,
}

impl Tally {
    fn new(l: u32) -> Self {
        Self {
            effective: 0,
            errors: 0,
            i_b: vec![0; l as usize],
            j_a: vec![0; l as usize],
        }
    }

    fn add(&mut self, o: &TrainOutcome) {
        if let Some(a) = o.announcement {
            self.effective += 1;
            self.errors += a.error as u64;
            self.i_b[(a.i_b - 1) as usize] += 1;
            self.j_a[(a.j_a - 1) as usize] += 1;
        }
    }

    fn merge(mut self, other: Tally) -> Self {
        self.effective += other.effective;
        self.errors += other.errors;
        for (a, b) in self.i_b.iter_mut().zip(other.i_b) {
            *a += b;
        }
        for (a, b) in self.j_a.iter_mut().zip(other.j_a) {
            *a += b;
        }
        self
    }

    fn into_stats(self, trains: u64) -> SimStats {
        let n = trains as f64;
        let q = self.effective as f64 / n;
        let (e_b_emp, e_b_se) = if self.effective > 0 {
            let m = self.effective as f64;
            let e = self.errors as f64 / m;
            (Some(e), Some((e * (1.0 - e) / m).sqrt()))
        } else {
            (None, None)
        };
        SimStats {
            trains,
            effective_count: self.effective,
            error_count: self.errors,
            q_emp: q,
            q_se: (q * (1.0 - q) / n).sqrt(),
            e_b_emp,
            e_b_se,
            i_b_counts: self.i_b,
            j_a_counts: self.j_a,
        }
    }
}

fn run_shard(cfg: &TrainConfig, shard: u64, mut each: impl FnMut(&TrainOutcome)) -> Result<()> {
    let mut sampler = Sampler::new(cfg)?;
    let mut rng = cfg.shard_rng(shard);
    for _ in 0..cfg.shard_len(shard) {
        each(&sampler.run(cfg, &mut rng));
    }
    Ok(())
}

/// Simulate `cfg.trains` trains in parallel shards and aggregate.
pub fn run_batch(cfg: &TrainConfig) -> Result<SimStats> {
    cfg.validate()?;
    let l = cfg.proto.train_len;
    let tallies = (0..cfg.shards())
        .into_par_iter()
        .map(|shard| {
            let mut t = Tally::new(l);
            run_shard(cfg, shard, |o| t.add(o))?;
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    let total = tallies.into_iter().fold(Tally::new(l), Tally::merge);
    Ok(total.into_stats(cfg.trains))
}

/// Sequential batch that also writes one JSON object per train to `trace`.
///
/// Each line is `{"train": n, "r": .., "b": .., "announcement": null | {"j_a", "i_b", "x_a", "x_b", "x_c", "error"}}`.
/// The outcomes are the same as those aggregated by [`run_batch`].
pub fn run_batch_traced(cfg: &TrainConfig, trace: &mut dyn Write) -> Result<SimStats> {
    #[derive(Serialize)]
    struct Line<'a> {
        train: u64,
        #[serde(flatten)]
        outcome: &'a TrainOutcome,
    }

    cfg.validate()?;
    let mut tally = Tally::new(cfg.proto.train_len);
    let mut index = 0u64;
    let mut io_err = None;
    for shard in 0..cfg.shards() {
        run_shard(cfg, shard, |o| {
            tally.add(o);
            if io_err.is_none() {
                let line = Line { train: index, outcome: o };
                if let Err(e) = serde_json::to_writer(&mut *trace, &line).map_err(|e| e.to_string())
                    .and_then(|_| trace.write_all(b"\n").map_err(|e| e.to_string()))
                {
                    io_err = Some(e);
                }
            }
            index += 1;
        })?;
    }
    if let Some(e) = io_err {
        return Err(Error::Config(format!("trace output failed: {e}")));
    }
    Ok(tally.into_stats(cfg.trains))
}

/// Z-test of simulated gain and bit error rate against the closed forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub q_analytic: f64,
    pub q_emp: f64,
    pub q_se: f64,
    pub z_q: f64,
    pub e_b_analytic: f64,
    pub e_b_emp: Option<f64>,
    pub e_b_se: f64,
    pub z_e_b: f64,
    pub pass: bool,
    pub stats: SimStats,
}

pub const MIN_EXPECTED_EFFECTIVE: f64 = 100.0;
pub const Z_THRESHOLD: f64 = 3.0;

fn z_score(observed: f64, expected: f64, se: f64) -> f64 {
    let diff = observed - expected;
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Simulate `cfg` and compare against the closed forms evaluated with `reference`.
///
/// Standard errors use the binomial formula at the analytic values.
pub fn validate_against(cfg: &TrainConfig, reference: &SystemParams) -> Result<ValidationReport> {
    cfg.validate()?;
    let q = gain(reference, &cfg.proto, &cfg.geom)?;
    let expected = q * cfg.trains as f64;
    if expected < MIN_EXPECTED_EFFECTIVE {
        return Err(Error::InsufficientStatistics {
            expected,
            required: MIN_EXPECTED_EFFECTIVE,
        });
    }
    let e_b = bit_error_rate(reference, &cfg.proto, &cfg.geom)?;
    let stats = run_batch(cfg)?;
    let q_se = (q * (1.0 - q) / cfg.trains as f64).sqrt();
    let z_q = z_score(stats.q_emp, q, q_se);
    let (e_b_se, z_e_b) = match stats.e_b_emp {
        Some(e) => {
            let se = (e_b * (1.0 - e_b) / stats.effective_count as f64).sqrt();
            (se, z_score(e, e_b, se))
        }
        None => (f64::NAN, f64::INFINITY),
    };
    Ok(ValidationReport {
        q_analytic: q,
        q_emp: stats.q_emp,
        q_se,
        z_q,
        e_b_analytic: e_b,
        e_b_emp: stats.e_b_emp,
        e_b_se,
        z_e_b,
        pass: z_q.abs() <= Z_THRESHOLD && z_e_b.abs() <= Z_THRESHOLD,
        stats,
    })
}

pub fn validate_against_analytic(cfg: &TrainConfig) -> Result<ValidationReport> {
    validate_against(cfg, &cfg.sys)
}
