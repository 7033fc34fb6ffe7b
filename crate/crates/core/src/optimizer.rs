//! Exhaustive grid search over `(L, nu_th, mu)` with golden-section refinement of `mu`.
//!
//! Every `(L, nu_th)` cell is scanned over a log-spaced `mu` grid. The best
//! cell's intensity is then refined by golden-section search on `ln mu` within
//! the neighbouring grid points. Cells are evaluated in parallel but reduced in
//! a fixed order, so the result does not depend on scheduling.
//!
//! Ties are broken towards smaller `mu`, then smaller `L`, then smaller `nu_th`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::keyrate::{
    keyrate_inside, keyrate_inside_finite, keyrate_inside_with, keyrate_outside, FiniteSizeParams,
    InsidePhaseModel, ProtocolParams, RateBreakdown,
};
use crate::model::{Geometry, SystemParams};

/// Key-rate formula being maximized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Outside,
    Inside,
    /// Inside adversary charged `p1 + (1 - p1) h(p2)`, the large-block limit of [`Objective::InsideFinite`].
    InsideTagged,
    InsideFinite(FiniteSizeParams),
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::Outside => "outside",
            Objective::Inside => "inside",
            Objective::InsideTagged => "inside_tagged",
            Objective::InsideFinite(_) => "inside_finite",
        }
    }

    pub fn evaluate(&self, sys: &SystemParams, proto: &ProtocolParams, geom: &Geometry) -> Result<RateBreakdown> {
        match self {
            Objective::Outside => keyrate_outside(sys, proto, geom),
            Objective::Inside => keyrate_inside(sys, proto, geom),
            Objective::InsideTagged => keyrate_inside_with(sys, proto, geom, InsidePhaseModel::TaggedSplit),
            Objective::InsideFinite(fin) => keyrate_inside_finite(sys, proto, geom, fin),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub mu_min: f64,
    pub mu_max: f64,
    /// Number of log-spaced intensity grid points, endpoints included.
    pub mu_points: usize,
    #[serde(rename = "L_values")]
    pub train_lens: Vec<u32>,
    pub nu_th_values: Vec<u32>,
    /// Golden-section refinement of `mu` in the best cell.
    pub refine: bool,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            mu_min: 1e-3,
            mu_max: 1e2,
            mu_points: 61,
            train_lens: (1..=12).map(|k| 1u32 << k).collect(),
            nu_th_values: (0..=32).collect(),
            refine: true,
        }
    }
}

impl SearchSpace {
    /// A space holding exactly one candidate.
    pub fn single(proto: ProtocolParams) -> Self {
        Self {
            mu_min: proto.mu,
            mu_max: proto.mu,
            mu_points: 1,
            train_lens: vec![proto.train_len],
            nu_th_values: vec![proto.nu_th],
            refine: false,
        }
    }

    pub fn validate(&self, sys: &SystemParams) -> Result<()> {
        if self.mu_points == 0 || self.train_lens.is_empty() || self.nu_th_values.is_empty() {
            return Err(Error::Config("search grids must be nonempty".into()));
        }
        if !(self.mu_min > 0.0 && self.mu_max >= self.mu_min && self.mu_max.is_finite()) {
            return Err(Error::Config(format!(
                "mu range [{}, {}] must be positive and ordered",
                self.mu_min, self.mu_max
            )));
        }
        if self.mu_points == 1 && self.mu_min != self.mu_max {
            return Err(Error::Config("a single mu point needs mu_min == mu_max".into()));
        }
        if let Some(&l) = self.train_lens.iter().find(|&&l| l < 2) {
            return Err(Error::Config(format!("train length {l} is below 2")));
        }
        let l_max = *self.train_lens.iter().max().expect("nonempty") as f64;
        if l_max * sys.p_d >= 1.0 {
            return Err(Error::Unphysical(l_max * sys.p_d));
        }
        Ok(())
    }

    pub fn mu_grid(&self) -> Vec<f64> {
        if self.mu_points == 1 {
            return vec![self.mu_min];
        }
        let (lo, hi) = (self.mu_min.ln(), self.mu_max.ln());
        let step = (hi - lo) / (self.mu_points - 1) as f64;
        (0..self.mu_points)
            .map(|i| {
                if i == 0 {
                    self.mu_min
                } else if i + 1 == self.mu_points {
                    self.mu_max
                } else {
                    (lo + step * i as f64).exp()
                }
            })
            .collect()
    }

    /// Same bounds with the intensity grid resolution doubled.
    pub fn doubled(&self) -> Self {
        Self {
            mu_points: 2 * self.mu_points - 1,
            ..self.clone()
        }
    }

    pub fn size(&self) -> usize {
        self.mu_points * self.train_lens.len() * self.nu_th_values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub params: ProtocolParams,
    pub breakdown: RateBreakdown,
}

impl Candidate {
    /// Preference order: higher rate, then the tie-break on resources.
    fn better_than(&self, other: &Candidate) -> bool {
        let by_rate = self.breakdown.rate.total_cmp(&other.breakdown.rate);
        let by_cost = other
            .params
            .mu
            .total_cmp(&self.params.mu)
            .then(other.params.train_len.cmp(&self.params.train_len))
            .then(other.params.nu_th.cmp(&self.params.nu_th));
        by_rate.then(by_cost) == Ordering::Greater
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub objective: Objective,
    /// `None` when no grid point yields a positive rate.
    pub best: Option<Candidate>,
    /// Best coarse-grid point of every `(L, nu_th)` cell, in grid order.
    pub cells: Vec<Candidate>,
    /// Best coarse-grid point overall, before refinement.
    pub coarse_best: Candidate,
    pub evaluations: usize,
}

impl OptimizationResult {
    /// Optimized rate, zero when nothing is positive.
    pub fn rate(&self) -> f64 {
        self.best.map_or(0.0, |c| c.breakdown.rate)
    }

    pub fn is_positive(&self) -> bool {
        self.best.is_some()
    }
}

fn scan_cell(
    objective: &Objective,
    sys: &SystemParams,
    geom: &Geometry,
    grid: &[f64],
    train_len: u32,
    nu_th: u32,
) -> Result<Candidate> {
    let mut best: Option<Candidate> = None;
    for &mu in grid {
        let params = ProtocolParams::new(mu, train_len, nu_th)?;
        let cand = Candidate {
            params,
            breakdown: objective.evaluate(sys, &params, geom)?,
        };
        if best.as_ref().is_none_or(|b| cand.better_than(b)) {
            best = Some(cand);
        }
    }
    Ok(best.expect("grid is nonempty"))
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section maximization of `f` on `[lo, hi]`; returns the best point seen and the evaluation count.
fn golden_max(mut lo: f64, mut hi: f64, tol: f64, mut f: impl FnMut(f64) -> Result<f64>) -> Result<(f64, f64, usize)> {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    let mut evals = 2;
    while hi - lo > tol {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2)?;
        }
        evals += 1;
    }
    Ok(if f1 >= f2 { (x1, f1, evals) } else { (x2, f2, evals) })
}

/// Maximize `objective` over `space` at one distance.
pub fn optimize(sys: &SystemParams, geom: &Geometry, space: &SearchSpace, objective: Objective) -> Result<OptimizationResult> {
    sys.validate()?;
    geom.validate()?;
    space.validate(sys)?;
    if let Objective::InsideFinite(fin) = &objective {
        fin.validate()?;
    }
    let grid = space.mu_grid();
    let pairs: Vec<(u32, u32)> = space
        .train_lens
        .iter()
        .flat_map(|&l| space.nu_th_values.iter().map(move |&nu| (l, nu)))
        .collect();
    let cells = pairs
        .par_iter()
        .map(|&(l, nu)| scan_cell(&objective, sys, geom, &grid, l, nu))
        .collect::<Result<Vec<_>>>()?;
    let mut evaluations = cells.len() * grid.len();

    let mut coarse = cells[0];
    for c in &cells[1..] {
        if c.better_than(&coarse) {
            coarse = *c;
        }
    }

    let mut best = coarse;
    if space.refine && grid.len() > 1 && coarse.breakdown.rate > 0.0 {
        let i = grid.iter().position(|&m| m == coarse.params.mu).expect("coarse mu is on the grid");
        let lo = grid[i.saturating_sub(1)].ln();
        let hi = grid[(i + 1).min(grid.len() - 1)].ln();
        let (l, nu) = (coarse.params.train_len, coarse.params.nu_th);
        let (ln_mu, _, evals) = golden_max(lo, hi, 1e-9, |ln_mu| {
            let p = ProtocolParams::new(ln_mu.exp(), l, nu)?;
            Ok(objective.evaluate(sys, &p, geom)?.rate)
        })?;
        evaluations += evals + 1;
        let params = ProtocolParams::new(ln_mu.exp(), l, nu)?;
        let refined = Candidate {
            params,
            breakdown: objective.evaluate(sys, &params, geom)?,
        };
        if refined.breakdown.rate > coarse.breakdown.rate {
            best = refined;
        }
    }

    Ok(OptimizationResult {
        objective,
        best: (best.breakdown.rate > 0.0).then_some(best),
        cells,
        coarse_best: coarse,
        evaluations,
    })
}
