//! JSON run configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use openrabi::evolution::{log_grid, InitialState, DEFAULT_MAX_N_CUTOFF};
use openrabi::model::{default_n_cutoff, g_critical, params_at, ModelParams, DEFAULT_MAX_SUPEROPERATOR_DIM};
use openrabi::scaling::Regime;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Spacing {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeUnits {
    /// Values are κt.
    Kappa,
    /// Values are ωt.
    Omega,
}

/// Time grid; `min` is ignored for linear spacing, which starts at 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "GridSpec::default_spacing")]
    pub spacing: Spacing,
    #[serde(default)]
    pub min: f64,
    pub max: f64,
    pub n: usize,
    #[serde(default = "GridSpec::default_units")]
    pub units: TimeUnits,
}

impl GridSpec {
    fn default_spacing() -> Spacing {
        Spacing::Log
    }

    fn default_units() -> TimeUnits {
        TimeUnits::Kappa
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if self.n < 1 {
            bail!("{name}.n: must be at least 1");
        }
        if !(self.max > 0.0) || !self.max.is_finite() {
            bail!("{name}.max: must be positive and finite, got {}", self.max);
        }
        if self.spacing == Spacing::Log && !(self.min > 0.0 && self.min < self.max) {
            bail!("{name}.min: log spacing needs 0 < min < max, got {}", self.min);
        }
        Ok(())
    }

    /// Times in units of 1/ω.
    pub fn times(&self, kappa: f64, omega: f64) -> Result<Vec<f64>> {
        let raw = match self.spacing {
            Spacing::Linear if self.n == 1 => vec![self.max],
            Spacing::Linear => (0..self.n).map(|i| self.max * i as f64 / (self.n - 1) as f64).collect(),
            Spacing::Log => log_grid(self.min, self.max, self.n),
        };
        let scale = match self.units {
            TimeUnits::Kappa if kappa > 0.0 => 1.0 / kappa,
            TimeUnits::Kappa => bail!("times in kappa units need kappa > 0"),
            TimeUnits::Omega => 1.0 / omega,
        };
        Ok(raw.into_iter().map(|t| t * scale).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartKind {
    #[default]
    Vacuum,
    Stationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QfiMethodArg {
    #[default]
    GeneralizedMe,
    Correlator,
}

/// Input of the `collapse` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseSpec {
    /// CSV with at least the columns eta, kappa, t, value.
    pub input: PathBuf,
    #[serde(default = "CollapseSpec::default_quantity")]
    pub quantity: String,
    pub regime: Regime,
}

impl CollapseSpec {
    fn default_quantity() -> String {
        "qfi".into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub omega: f64,
    pub kappa: f64,
    pub etas: Vec<f64>,
    /// Absolute coupling g; overrides `g_over_gcp`.
    pub g: Option<f64>,
    pub g_over_gcp: f64,
    pub efficiency: f64,
    pub n_cutoff: Option<usize>,
    pub max_n_cutoff: usize,
    pub dt: Option<f64>,
    pub times: Option<GridSpec>,
    pub tau: Option<GridSpec>,
    pub s: Option<GridSpec>,
    pub n_traj: usize,
    pub delta_rel: Option<f64>,
    pub seed: u64,
    pub method: QfiMethodArg,
    pub start: StartKind,
    pub refine: bool,
    pub collapse: Option<CollapseSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            omega: 1.0,
            kappa: 0.1,
            etas: vec![10.0],
            g: None,
            g_over_gcp: 1.0,
            efficiency: 1.0,
            n_cutoff: None,
            max_n_cutoff: DEFAULT_MAX_N_CUTOFF,
            dt: None,
            times: None,
            tau: None,
            s: None,
            n_traj: 1000,
            delta_rel: None,
            seed: 0,
            method: QfiMethodArg::default(),
            start: StartKind::default(),
            refine: false,
            collapse: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn coupling(&self) -> Result<f64> {
        match self.g {
            Some(g) => Ok(g),
            None => Ok(self.g_over_gcp * g_critical(self.omega, self.kappa)?),
        }
    }

    /// Parameter point per η, with the starting cutoff.
    pub fn points(&self) -> Result<Vec<ModelParams>> {
        let g = self.coupling()?;
        self.etas
            .iter()
            .map(|&eta| {
                let mut p = params_at(g, eta, self.omega, self.kappa)?.with_efficiency(self.efficiency);
                if let Some(nc) = self.n_cutoff {
                    p = p.with_n_cutoff(nc);
                }
                p.validate()?;
                Ok(p)
            })
            .collect()
    }

    pub fn initial_state(&self) -> InitialState {
        InitialState::VacuumDown
    }

    pub fn grid<'a>(&'a self, which: &'a Option<GridSpec>, name: &str) -> Result<&'a GridSpec> {
        match which {
            Some(g) => Ok(g),
            None => bail!("{name}: required by this subcommand"),
        }
    }

    /// Field-level checks and resource caps, run before any compute.
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0) {
            bail!("omega: must be positive, got {}", self.omega);
        }
        if !(self.kappa >= 0.0) {
            bail!("kappa: must be nonnegative, got {}", self.kappa);
        }
        if self.etas.is_empty() {
            bail!("etas: need at least one value");
        }
        if let Some(e) = self.etas.iter().find(|e| !(**e > 0.0)) {
            bail!("etas: values must be positive, got {e}");
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            bail!("efficiency: must lie in (0, 1], got {}", self.efficiency);
        }
        if self.max_n_cutoff < 2 {
            bail!("max_n_cutoff: must be at least 2");
        }
        let cap = ((DEFAULT_MAX_SUPEROPERATOR_DIM as f64).sqrt() / 2.0) as usize;
        if self.max_n_cutoff > cap {
            bail!("max_n_cutoff: {} exceeds the memory cap of {cap}", self.max_n_cutoff);
        }
        for &eta in &self.etas {
            let nc = self.n_cutoff.unwrap_or_else(|| default_n_cutoff(eta));
            if nc > self.max_n_cutoff {
                bail!("n_cutoff: eta = {eta} needs a starting cutoff {nc} above max_n_cutoff {}", self.max_n_cutoff);
            }
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                bail!("dt: must be positive, got {dt}");
            }
        }
        if let Some(d) = self.delta_rel {
            if !(d > 0.0 && d <= 1e-2) {
                bail!("delta_rel: must lie in (0, 1e-2], got {d}");
            }
        }
        for (g, name) in [(&self.times, "times"), (&self.tau, "tau"), (&self.s, "s")] {
            if let Some(g) = g {
                g.validate(name)?;
            }
        }
        self.coupling()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
