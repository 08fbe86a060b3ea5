//! Run configuration, read from JSON. Every field has a default, so a config
//! file only needs the entries that differ.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::copula::{CopulaSpec, Variant};
use crate::error::{Error, Result};
use crate::estimator::{Design, ParamBox};
use crate::nn::TrainConfig;
use crate::panel::Scale;
use crate::tail::GridConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSource {
    pub stations: PathBuf,
    pub values: PathBuf,
    #[serde(default = "data_scale")]
    pub scale: Scale,
}

fn data_scale() -> Scale {
    Scale::Data
}

/// Margins used when simulating data-scale panels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarginalConfig {
    pub p: f64,
    pub sigma: f64,
    pub xi: f64,
    /// Threshold surface `c0 + c1·x + c2·y`.
    pub threshold_plane: [f64; 3],
}

impl Default for MarginalConfig {
    fn default() -> Self {
        MarginalConfig {
            p: 0.9,
            sigma: 46.34,
            xi: 0.114,
            threshold_plane: [8.0, 0.03, -0.02],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budgets {
    /// Training replicates.
    pub k: usize,
    /// Bootstrap replicates.
    pub b: usize,
    pub bootstrap_level: f64,
    /// Monte Carlo panels per fold in model selection.
    pub select_mc: usize,
    pub select_folds: usize,
    pub verify_replicates: usize,
    /// Year-block resamples for `χ̂` bands.
    pub band_resamples: usize,
    /// Simulated panels for the neighbourhood diagnostic.
    pub chi_star_sims: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            k: 30_000,
            b: 400,
            bootstrap_level: 0.9,
            select_mc: 500,
            select_folds: 50,
            verify_replicates: 1_000_000,
            band_resamples: 200,
            chi_star_sims: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    pub n_years: usize,
    /// Write uniform-scale values instead of data-scale ones.
    pub uniform: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { n_years: 20, uniform: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectConfig {
    pub candidates: Vec<Variant>,
    pub holdout_years: usize,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            candidates: vec![Variant::M1, Variant::M3],
            holdout_years: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StormConfig {
    pub n_days: usize,
    /// Lattice points along each axis of the stations' bounding box.
    pub lattice: usize,
    pub replicates: usize,
    pub memory_budget_mb: f64,
}

impl Default for StormConfig {
    fn default() -> Self {
        StormConfig {
            n_days: 4,
            lattice: 30,
            replicates: 1,
            memory_budget_mb: 512.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Input panel; the bundled synthetic panel when absent.
    pub data: Option<DataSource>,
    /// Model for simulation, storms and class checks; its variant is the one fitted.
    pub copula: CopulaSpec,
    pub marginal: MarginalConfig,
    pub param_box: ParamBox,
    pub grid: GridConfig,
    pub mask_channel: bool,
    pub network: TrainConfig,
    pub budgets: Budgets,
    pub simulate: SimulateConfig,
    pub select: SelectConfig,
    pub storm: StormConfig,
    /// A trained estimator file to use instead of training.
    pub estimator: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            output_dir: PathBuf::from("runs"),
            data: None,
            copula: CopulaSpec::new(Variant::M1, 0.577, 0.874, 9.107, 0.328),
            marginal: MarginalConfig::default(),
            param_box: ParamBox::default(),
            grid: GridConfig::default(),
            mask_channel: false,
            network: TrainConfig::default(),
            budgets: Budgets::default(),
            simulate: SimulateConfig::default(),
            select: SelectConfig::default(),
            storm: StormConfig::default(),
            estimator: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Checks every budget and parameter before any computation starts.
    pub fn validate(&self) -> Result<()> {
        self.copula.validate().map_err(|e| Error::Config(format!("copula: {e}")))?;
        self.param_box.validate()?;
        self.grid.validate()?;
        let b = &self.budgets;
        let minimums = [
            ("k", b.k, 100),
            ("b", b.b, 1),
            ("select_mc", b.select_mc, 1),
            ("select_folds", b.select_folds, 1),
            ("verify_replicates", b.verify_replicates, 50_000),
            ("band_resamples", b.band_resamples, 1),
            ("chi_star_sims", b.chi_star_sims, 1),
        ];
        for (name, v, min) in minimums {
            if v < min {
                return Err(Error::Config(format!("budget {name} = {v} is below the minimum {min}")));
            }
        }
        if !(b.bootstrap_level > 0.0 && b.bootstrap_level < 1.0) {
            return Err(Error::Config("bootstrap level must lie in (0,1)".into()));
        }
        let m = &self.marginal;
        if !(0.0..1.0).contains(&m.p) || !(m.sigma > 0.0) || !m.xi.is_finite() {
            return Err(Error::Config("marginal needs p in [0,1), sigma > 0 and finite xi".into()));
        }
        if self.network.epochs == 0 || self.network.batch == 0 {
            return Err(Error::Config("network epochs and batch must be positive".into()));
        }
        if self.simulate.n_years == 0 || self.storm.n_days == 0 || self.storm.lattice == 0 || self.storm.replicates == 0 {
            return Err(Error::Config("simulation and storm sizes must be positive".into()));
        }
        if self.select.candidates.is_empty() || self.select.holdout_years == 0 {
            return Err(Error::Config("model selection needs candidates and a positive holdout".into()));
        }
        Ok(())
    }

    pub fn design(&self, variant: Variant, n_years: usize) -> Design {
        Design {
            variant,
            n_years,
            p: self.marginal.p,
            grid: self.grid.clone(),
            mask_channel: self.mask_channel,
            nu: self.copula.nu,
        }
    }
}
