//! Aggregated validation: closed-form limits, simulator agreement, measurement equivalence.

use anyhow::Result;
use log::info;
use serde::Serialize;
use serde_json::{json, Value};

use rrqss::keyrate::{bit_error_rate, phase_error_outside, source_tag_probability};
use rrqss::security::{equivalence_report, EQUIVALENCE_TOLERANCE};
use rrqss::sim::{validate_against, TrainConfig};
use rrqss::{Geometry, ProtocolParams, SystemParams};

use crate::config::RunConfig;

const LIMIT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Limit,
    Simulation,
    Equivalence,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub kind: CheckKind,
    pub pass: bool,
    pub detail: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub pass: bool,
    pub corrupt: Option<crate::config::Corruption>,
    pub checks: Vec<CheckResult>,
}

impl CheckReport {
    pub fn failed(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

fn limit(name: &str, got: f64, want: f64) -> CheckResult {
    CheckResult {
        name: format!("limit:{name}"),
        kind: CheckKind::Limit,
        pass: (got - want).abs() <= LIMIT_TOLERANCE,
        detail: json!({ "value": got, "expected": want, "tolerance": LIMIT_TOLERANCE }),
    }
}

fn limits(sys: &SystemParams) -> Result<Vec<CheckResult>> {
    let geom = Geometry::new(50.0)?;
    let clean = SystemParams { e_d: 0.0, p_d: 0.0, ..*sys };
    let proto = ProtocolParams::new(0.5, 64, 4)?;
    let dark_only = ProtocolParams::new(0.0, 64, 4)?;
    let mut out = vec![
        limit("e_b_noiseless", bit_error_rate(&clean, &proto, &geom)?, 0.0),
        limit("e_b_dark_only", bit_error_rate(sys, &dark_only, &geom)?, 0.5),
    ];
    for mu in [0.01, 0.5, 3.0] {
        out.push(limit(&format!("e_src_nu0_mu{mu}"), source_tag_probability(mu, 0)?, -(-mu as f64).exp_m1()));
    }
    for (nu, l) in [(0u32, 16u32), (4, 64), (10, 1024)] {
        out.push(limit(
            &format!("e_p_untagged_nu{nu}_L{l}"),
            phase_error_outside(1e-3, 0.0, nu, l)?,
            nu as f64 / (l - 1) as f64,
        ));
    }
    Ok(out)
}

pub fn run_check(cfg: &RunConfig) -> Result<CheckReport> {
    cfg.system.validate()?;
    let mut checks = limits(&cfg.system)?;

    let chk = &cfg.check;
    if chk.trains == 0 {
        info!("trains = 0, skipping Monte-Carlo checks");
    } else {
        let sim_sys = chk.corrupt.map_or(cfg.system, |c| c.apply(cfg.system));
        for (i, p) in chk.points.iter().enumerate() {
            let tc = TrainConfig {
                sys: sim_sys,
                proto: ProtocolParams::new(p.mu, p.train_len, 0)?,
                geom: Geometry::new(p.distance)?,
                trains: chk.trains,
                seed: cfg.seed.wrapping_add(i as u64),
                slotting: cfg.simulate.slotting,
            };
            let rep = validate_against(&tc, &cfg.system)?;
            info!("simulation D = {} mu = {} L = {}: z_Q = {:.2}, z_e_b = {:.2}", p.distance, p.mu, p.train_len, rep.z_q, rep.z_e_b);
            checks.push(CheckResult {
                name: format!("simulation:D={},mu={},L={}", p.distance, p.mu, p.train_len),
                kind: CheckKind::Simulation,
                pass: rep.pass,
                detail: serde_json::to_value(&rep)?,
            });
        }
    }

    for &l in &chk.equivalence_lens {
        let rep = equivalence_report(l, chk.equivalence_trials, cfg.seed)?;
        info!("equivalence L = {l}: max deviation {:e}", rep.max_deviation);
        checks.push(CheckResult {
            name: format!("equivalence:L={l}"),
            kind: CheckKind::Equivalence,
            pass: rep.pass && rep.max_deviation <= EQUIVALENCE_TOLERANCE,
            detail: serde_json::to_value(&rep)?,
        });
    }

    Ok(CheckReport {
        pass: checks.iter().all(|c| c.pass),
        corrupt: chk.corrupt,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Corruption, SimPoint};

    fn quick() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.check.trains = 40_000;
        cfg.check.points = vec![SimPoint { distance: 50.0, mu: 0.5, train_len: 64 }];
        cfg.check.equivalence_lens = vec![4];
        cfg.check.equivalence_trials = 10;
        cfg
    }

    #[test]
    fn default_checks_pass() {
        let rep = run_check(&quick()).unwrap();
        assert!(rep.pass, "{:?}", rep.failed().map(|c| &c.name).collect::<Vec<_>>());
        assert!(rep.checks.iter().any(|c| c.kind == CheckKind::Simulation));
    }

    #[test]
    fn corruption_fails_the_simulation_check() {
        for c in [Corruption::Misalignment, Corruption::Efficiency] {
            let mut cfg = quick();
            cfg.check.corrupt = Some(c);
            let rep = run_check(&cfg).unwrap();
            assert!(!rep.pass);
            let failed: Vec<_> = rep.failed().collect();
            assert!(failed.iter().all(|f| f.kind == CheckKind::Simulation), "{c:?}");
        }
    }

    #[test]
    fn zero_trains_runs_equivalence_only() {
        let mut cfg = quick();
        cfg.check.trains = 0;
        let rep = run_check(&cfg).unwrap();
        assert!(rep.pass);
        assert!(rep.checks.iter().all(|c| c.kind != CheckKind::Simulation));
        assert!(rep.checks.iter().any(|c| c.kind == CheckKind::Equivalence));
    }
}
