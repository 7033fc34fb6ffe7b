//! Run configuration: a TOML file whose every field has a default.
//!
//! ```toml
//! objectives = ["inside", "outside", "plob"]
//!
//! [system]
//! e_d = 0.02
//!
//! [sweep]
//! start = 0.0
//! stop = 700.0
//! step = 10.0
//! ```

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use rrqss::keyrate::TailMethod;
use rrqss::sim::PhotonSlotting;
use rrqss::{FiniteSizeParams, Objective, SearchSpace, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveName {
    Outside,
    Inside,
    InsideTagged,
    InsideFinite,
    Plob,
}

impl ObjectiveName {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveName::Outside => "outside",
            ObjectiveName::Inside => "inside",
            ObjectiveName::InsideTagged => "inside_tagged",
            ObjectiveName::InsideFinite => "inside_finite",
            ObjectiveName::Plob => "plob",
        }
    }

    /// The optimizer objective, `None` for the PLOB reference curve.
    pub fn objective(self, finite: Option<FiniteSizeParams>) -> Option<Objective> {
        match self {
            ObjectiveName::Outside => Some(Objective::Outside),
            ObjectiveName::Inside => Some(Objective::Inside),
            ObjectiveName::InsideTagged => Some(Objective::InsideTagged),
            ObjectiveName::InsideFinite => finite.map(Objective::InsideFinite),
            ObjectiveName::Plob => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
    /// Misalignment values to sweep; empty means `system.e_d` only.
    pub e_d: Vec<f64>,
    /// Block sizes for `inside_finite`; empty means `finite.N` only.
    #[serde(rename = "N")]
    pub n_values: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            start: 0.0,
            stop: 700.0,
            step: 10.0,
            e_d: Vec::new(),
            n_values: Vec::new(),
        }
    }
}

impl SweepSection {
    pub fn distances(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.start + self.step * i as f64).collect()
    }

    fn validate(&self) -> Result<()> {
        ensure!(
            self.start.is_finite() && self.stop.is_finite() && self.start >= 0.0,
            "sweep bounds must be finite and nonnegative"
        );
        ensure!(self.step > 0.0, "sweep step must be positive, got {}", self.step);
        ensure!(self.stop >= self.start, "sweep stop {} is below start {}", self.stop, self.start);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiniteSection {
    #[serde(rename = "N")]
    pub n_sifted: u64,
    pub s: u32,
    pub tail: TailMethod,
}

impl Default for FiniteSection {
    fn default() -> Self {
        Self {
            n_sifted: 10_000,
            s: 100,
            tail: TailMethod::Gaussian,
        }
    }
}

impl FiniteSection {
    pub fn params(&self, n_sifted: u64) -> Result<FiniteSizeParams> {
        let p = FiniteSizeParams::new(n_sifted, self.s)?;
        Ok(match self.tail {
            TailMethod::Gaussian => p,
            TailMethod::ExactBinomial => p.exact(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub distance: f64,
    pub mu: f64,
    #[serde(rename = "L")]
    pub train_len: u32,
    pub trains: u64,
    pub slotting: PhotonSlotting,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            distance: 50.0,
            mu: 0.5,
            train_len: 64,
            trains: 100_000,
            slotting: PhotonSlotting::SharedSlot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimPoint {
    pub distance: f64,
    pub mu: f64,
    #[serde(rename = "L")]
    pub train_len: u32,
}

/// Deliberate model mismatch used as a negative control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    /// Simulate with `e_d` raised by 0.1.
    Misalignment,
    /// Simulate with half the detector efficiency.
    Efficiency,
}

impl Corruption {
    pub fn apply(self, sys: SystemParams) -> SystemParams {
        match self {
            Corruption::Misalignment => SystemParams { e_d: (sys.e_d + 0.1).min(0.5), ..sys },
            Corruption::Efficiency => SystemParams { eta_d: sys.eta_d / 2.0, ..sys },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSection {
    /// Trains per simulator point; 0 skips the Monte-Carlo checks.
    pub trains: u64,
    pub points: Vec<SimPoint>,
    #[serde(rename = "equivalence_L")]
    pub equivalence_lens: Vec<u32>,
    pub equivalence_trials: usize,
    pub corrupt: Option<Corruption>,
}

impl Default for CheckSection {
    fn default() -> Self {
        let p = |distance, mu, train_len| SimPoint { distance, mu, train_len };
        Self {
            trains: 100_000,
            points: vec![
                p(50.0, 0.2, 64),
                p(50.0, 0.5, 128),
                p(100.0, 0.5, 64),
                p(100.0, 0.2, 128),
                p(200.0, 0.5, 128),
            ],
            equivalence_lens: vec![4, 8],
            equivalence_trials: 100,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Output directory; standard output when unset.
    pub dir: Option<PathBuf>,
    pub format: Format,
    pub timestamp: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: None,
            format: Format::Csv,
            timestamp: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub objectives: Vec<ObjectiveName>,
    pub system: SystemParams,
    pub sweep: SweepSection,
    pub finite: FiniteSection,
    pub search: SearchSpace,
    pub simulate: SimulateSection,
    pub check: CheckSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            objectives: vec![ObjectiveName::Inside, ObjectiveName::Outside, ObjectiveName::Plob],
            system: SystemParams::ultralow_loss(),
            sweep: SweepSection::default(),
            finite: FiniteSection::default(),
            search: SearchSpace::default(),
            simulate: SimulateSection::default(),
            check: CheckSection::default(),
            output: OutputSection::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub distance: Option<f64>,
    pub e_d: Option<f64>,
    pub n_sifted: Option<u64>,
    pub s: Option<u32>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub no_timestamp: bool,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(d) = o.distance {
            self.sweep.start = d;
            self.sweep.stop = d;
            self.simulate.distance = d;
        }
        if let Some(e) = o.e_d {
            self.system.e_d = e;
            self.sweep.e_d.clear();
        }
        if let Some(n) = o.n_sifted {
            self.finite.n_sifted = n;
            self.sweep.n_values.clear();
        }
        if let Some(s) = o.s {
            self.finite.s = s;
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(dir) = &o.out {
            self.output.dir = Some(dir.clone());
        }
        if let Some(f) = o.format {
            self.output.format = f;
        }
        if o.no_timestamp {
            self.output.timestamp = false;
        }
    }

    pub fn misalignments(&self) -> Vec<f64> {
        if self.sweep.e_d.is_empty() {
            vec![self.system.e_d]
        } else {
            self.sweep.e_d.clone()
        }
    }

    pub fn block_sizes(&self) -> Vec<u64> {
        if self.sweep.n_values.is_empty() {
            vec![self.finite.n_sifted]
        } else {
            self.sweep.n_values.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.objectives.is_empty() {
            bail!("at least one objective must be selected");
        }
        self.system.validate()?;
        self.sweep.validate()?;
        for &e in &self.sweep.e_d {
            self.system.with_misalignment(e).validate()?;
        }
        if self.objectives.contains(&ObjectiveName::InsideFinite) {
            for n in self.block_sizes() {
                self.finite.params(n)?;
            }
        }
        self.search.validate(&self.system)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_system_keeps_other_defaults() {
        let c = RunConfig::from_toml("[system]\ne_d = 0.06\n").unwrap();
        assert_eq!(c.system.e_d, 0.06);
        assert_eq!(c.system.eta_d, 0.56);
        assert_eq!(c.system.p_d, 1e-8);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[system]\nfoo = 1\n").is_err());
        assert!(RunConfig::from_toml("bogus = true\n").is_err());
    }

    #[test]
    fn empty_objectives_rejected() {
        let c = RunConfig::from_toml("objectives = []\n").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn flags_win() {
        let mut c = RunConfig::from_toml("[system]\ne_d = 0.04\n[sweep]\ne_d = [0.02, 0.06]\n").unwrap();
        c.apply(&Overrides {
            e_d: Some(0.03),
            distance: Some(120.0),
            ..Default::default()
        });
        assert_eq!(c.misalignments(), vec![0.03]);
        assert_eq!(c.sweep.distances(), vec![120.0]);
    }

    #[test]
    fn distance_grid() {
        let s = SweepSection::default();
        let d = s.distances();
        assert_eq!(d.len(), 71);
        assert_eq!(d[0], 0.0);
        assert_eq!(d[70], 700.0);
        assert!(d.windows(2).all(|w| w[1] > w[0]));
        let s = SweepSection { start: 0.0, stop: 1.0, step: 0.1, ..s };
        assert_eq!(s.distances().len(), 11);
    }

    #[test]
    fn bad_grids_rejected() {
        for text in ["[sweep]\nstep = 0.0\n", "[sweep]\nstart = 10.0\nstop = 5.0\n", "[sweep]\nstart = -1.0\n"] {
            assert!(RunConfig::from_toml(text).unwrap().validate().is_err(), "{text}");
        }
    }
}
