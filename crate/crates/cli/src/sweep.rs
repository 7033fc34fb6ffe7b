//! Distance sweeps: one optimized record per (misalignment, distance, objective).

use anyhow::Result;
use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rrqss::model::plob_bound;
use rrqss::{optimize, Geometry, OptimizationResult, SystemParams};

use crate::config::{ObjectiveName, RunConfig};

/// One CSV row. Field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub distance_km: f64,
    pub e_d: f64,
    pub objective: ObjectiveName,
    #[serde(rename = "N")]
    pub n_sifted: Option<u64>,
    pub s: Option<u32>,
    pub mu: Option<f64>,
    #[serde(rename = "L")]
    pub train_len: Option<u32>,
    pub nu_th: Option<u32>,
    pub q: Option<f64>,
    pub q_hat: Option<f64>,
    pub e_b: Option<f64>,
    pub e_src: Option<f64>,
    pub e_p: Option<f64>,
    pub e_p_hat: Option<f64>,
    pub rate_raw: Option<f64>,
    pub rate: f64,
    pub clamped: bool,
    pub plob: f64,
}

pub const COLUMNS: [&str; 18] = [
    "distance_km", "e_d", "objective", "N", "s", "mu", "L", "nu_th", "q", "q_hat", "e_b", "e_src", "e_p",
    "e_p_hat", "rate_raw", "rate", "clamped", "plob",
];

impl SweepRecord {
    fn plob(distance_km: f64, e_d: f64, plob: f64) -> Self {
        Self {
            distance_km,
            e_d,
            objective: ObjectiveName::Plob,
            n_sifted: None,
            s: None,
            mu: None,
            train_len: None,
            nu_th: None,
            q: None,
            q_hat: None,
            e_b: None,
            e_src: None,
            e_p: None,
            e_p_hat: None,
            rate_raw: None,
            rate: plob,
            clamped: false,
            plob,
        }
    }

    /// Without a positive point the record keeps the best coarse candidate and a zero rate.
    fn optimized(distance_km: f64, e_d: f64, objective: ObjectiveName, res: &OptimizationResult, plob: f64) -> Self {
        let cand = res.best.unwrap_or(res.coarse_best);
        let b = cand.breakdown;
        let (n_sifted, s) = match res.objective {
            rrqss::Objective::InsideFinite(f) => (Some(f.n_sifted), Some(f.s)),
            _ => (None, None),
        };
        Self {
            distance_km,
            e_d,
            objective,
            n_sifted,
            s,
            mu: Some(cand.params.mu),
            train_len: Some(cand.params.train_len),
            nu_th: Some(cand.params.nu_th),
            q: Some(b.q),
            q_hat: Some(b.q_hat),
            e_b: Some(b.e_b),
            e_src: Some(b.e_src),
            e_p: Some(b.e_p),
            e_p_hat: Some(b.e_p_hat),
            rate_raw: Some(b.rate_raw),
            rate: if res.is_positive() { b.rate } else { 0.0 },
            clamped: !res.is_positive(),
            plob,
        }
    }
}

fn records_at(cfg: &RunConfig, sys: &SystemParams, distance_km: f64) -> Result<Vec<SweepRecord>> {
    let geom = Geometry::new(distance_km)?;
    let plob = plob_bound(sys, &geom)?;
    let mut out = Vec::new();
    for &name in &cfg.objectives {
        let finite: Vec<_> = if name == ObjectiveName::InsideFinite {
            cfg.block_sizes().into_iter().map(|n| cfg.finite.params(n).map(Some)).collect::<Result<_>>()?
        } else {
            vec![None]
        };
        for fin in finite {
            match name.objective(fin) {
                None => out.push(SweepRecord::plob(distance_km, sys.e_d, plob)),
                Some(obj) => {
                    let res = optimize(sys, &geom, &cfg.search, obj)?;
                    debug!(
                        "D = {distance_km} km, e_d = {}, {}: R = {:e} after {} evaluations",
                        sys.e_d,
                        name.as_str(),
                        res.rate(),
                        res.evaluations
                    );
                    out.push(SweepRecord::optimized(distance_km, sys.e_d, name, &res, plob));
                }
            }
        }
    }
    Ok(out)
}

/// Runs every grid point in parallel and returns records in grid order.
pub fn run_sweep(cfg: &RunConfig) -> Result<Vec<SweepRecord>> {
    cfg.validate()?;
    let distances = cfg.sweep.distances();
    let jobs: Vec<(SystemParams, f64)> = cfg
        .misalignments()
        .into_iter()
        .flat_map(|e| distances.iter().map(move |&d| (cfg.system.with_misalignment(e), d)))
        .collect();
    info!("sweeping {} points for {} objectives", jobs.len(), cfg.objectives.len());
    let chunks = jobs
        .par_iter()
        .map(|(sys, d)| {
            let r = records_at(cfg, sys, *d);
            info!("done D = {d} km, e_d = {}", sys.e_d);
            r
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Asymptotic rates against both adversaries with the PLOB bound, 2% misalignment.
    Fig3,
    /// Dishonest-player rate for 2%, 4%, 6% and 8% misalignment.
    Fig4,
    /// Finite-size rates for block sizes 10^4 to 10^9 with s = 100.
    Fig5,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig3 => "fig3",
            Preset::Fig4 => "fig4",
            Preset::Fig5 => "fig5",
        }
    }

    /// Replaces the sweep and objective choice of `cfg`, keeping system and search settings.
    pub fn apply(self, cfg: &mut RunConfig) {
        use ObjectiveName::*;
        cfg.sweep.start = 0.0;
        cfg.sweep.stop = 700.0;
        cfg.sweep.step = 10.0;
        cfg.sweep.e_d.clear();
        cfg.sweep.n_values.clear();
        match self {
            Preset::Fig3 => {
                cfg.system.e_d = 0.02;
                cfg.objectives = vec![Inside, Outside, Plob];
            }
            Preset::Fig4 => {
                cfg.sweep.e_d = vec![0.02, 0.04, 0.06, 0.08];
                cfg.objectives = vec![Inside, Plob];
            }
            Preset::Fig5 => {
                cfg.system.e_d = 0.02;
                cfg.finite.s = 100;
                cfg.sweep.n_values = vec![10_000, 1_000_000, 100_000_000, 1_000_000_000];
                cfg.objectives = vec![InsideTagged, InsideFinite, Plob];
            }
        }
    }
}
