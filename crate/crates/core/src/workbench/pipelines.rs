//! Composite pipelines: two-step fit with bootstrap, cross-validated model
//! selection, diagnostics and storm simulation.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::copula::{CopulaSimulator, CopulaSpec, Variant};
use crate::error::{Error, Result};
use crate::estimator::{bootstrap, to_data_scale, BootstrapResult, Design, NeuralEstimator, PARAM_NAMES};
use crate::marginal::{
    data_to_uniform, fit_gpd_mle, fit_threshold_qr, pooled_exceedances, sitewise_gpd, GpdFit, MarginalSpec,
    QuantileRegressionFit, SiteGpdFit,
};
use crate::panel::{Layout, PanelDataset, Scale, Site};
use crate::rng::{Purpose, Stream};
use crate::stats;
use crate::tail::{chi_grid, chi_grid_bands, chi_star_all, rmse_chi_star, ChiGrid, GridConfig};

/// An independent seed for one named sub-task of a run.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    Stream::root(seed).child(tag).rng().next_u64()
}

const TAG_TRAIN: u64 = 1;
const TAG_BOOT: u64 = 2;
const TAG_SELECT: u64 = 3;
const TAG_STORM: u64 = 4;
const TAG_DIAG: u64 = 5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamRow {
    pub name: String,
    pub estimate: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginalStep {
    pub threshold: QuantileRegressionFit,
    pub gpd: GpdFit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub trained: bool,
    pub k: usize,
    pub best_epoch: usize,
    pub train_mae: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub model: Variant,
    pub n_sites: usize,
    pub n_years: usize,
    pub n_days: usize,
    pub p: f64,
    pub ci_level: f64,
    /// `δ, φ, ψ₁, ψ₂, σ, ξ` with percentile intervals.
    pub parameters: Vec<ParamRow>,
    pub marginal: Option<MarginalStep>,
    pub training: TrainingSummary,
    pub bootstrap_requested: usize,
    pub bootstrap_succeeded: usize,
    pub flags: Vec<String>,
}

impl FitReport {
    pub fn theta_d(&self) -> [f64; 4] {
        [
            self.parameters[0].estimate,
            self.parameters[1].estimate,
            self.parameters[2].estimate,
            self.parameters[3].estimate,
        ]
    }

    pub fn marginal_spec(&self, layout: &Layout) -> Option<MarginalSpec> {
        self.marginal.as_ref().map(|m| MarginalSpec {
            p: self.p,
            mu: layout.sites.iter().map(|s| m.threshold.predict(s.x_km, s.y_km)).collect(),
            sigma: m.gpd.sigma,
            xi: m.gpd.xi,
        })
    }
}

pub struct FitOutcome {
    pub report: FitReport,
    pub estimator: NeuralEstimator,
    pub bootstrap: Option<BootstrapResult>,
}

/// Trains an estimator for `variant` on the layout and year count of `data`.
pub fn train_estimator(cfg: &RunConfig, variant: Variant, layout: &Layout, n_years: usize) -> Result<NeuralEstimator> {
    let design = cfg.design(variant, n_years);
    let mut net_cfg = cfg.network.clone();
    net_cfg.seed = derive_seed(cfg.seed, TAG_TRAIN);
    let (est, set) = NeuralEstimator::fit(&design, &cfg.param_box, layout, cfg.budgets.k, &net_cfg)?;
    log::info!(
        "trained on {} replicates ({} redrawn, {} empty cells imputed)",
        set.len(),
        set.failures,
        set.imputed
    );
    Ok(est)
}

/// Step 1: threshold surface and GPD margins. Skipped for uniform data.
pub fn fit_margins(data: &PanelDataset, p: f64) -> Result<Option<(MarginalStep, MarginalSpec)>> {
    if data.scale == Scale::Uniform || p == 0.0 {
        return Ok(None);
    }
    let qr = fit_threshold_qr(data, p).map_err(|e| e.in_stage("threshold regression"))?;
    let exc = pooled_exceedances(data, &qr.mu);
    let gpd = fit_gpd_mle(&exc).map_err(|e| e.in_stage("GPD fit"))?;
    let spec = MarginalSpec {
        p,
        mu: qr.mu.clone(),
        sigma: gpd.sigma,
        xi: gpd.xi,
    };
    Ok(Some((MarginalStep { threshold: qr, gpd }, spec)))
}

/// Two-step fit: margins, then the neural estimate of the dependence
/// parameters, then the parametric bootstrap.
pub fn pipeline_fit(cfg: &RunConfig, data: &PanelDataset, estimator: Option<NeuralEstimator>) -> Result<FitOutcome> {
    let mut flags = Vec::new();
    let p = cfg.marginal.p;
    let margins = fit_margins(data, p)?;
    if margins.is_none() {
        flags.push("marginal step skipped: data on the uniform scale".to_string());
    }
    let (estimator, trained) = match estimator {
        Some(e) => (e, false),
        None => (
            train_estimator(cfg, cfg.copula.variant, &data.layout, data.n_years()).map_err(|e| e.in_stage("training"))?,
            true,
        ),
    };
    if estimator.design.variant != cfg.copula.variant {
        flags.push(format!(
            "estimator trained for {} while the config names {}",
            estimator.design.variant, cfg.copula.variant
        ));
    }
    let theta = estimator.estimate(data).map_err(|e| e.in_stage("neural estimate"))?;
    let marginal_spec = margins.as_ref().map(|m| m.1.clone());
    let boot = bootstrap(
        &estimator,
        theta,
        marginal_spec.as_ref(),
        cfg.budgets.b,
        cfg.budgets.bootstrap_level,
        derive_seed(cfg.seed, TAG_BOOT),
    )
    .map_err(|e| e.in_stage("bootstrap"))?;
    if !boot.failures.is_empty() {
        flags.push(format!("{} bootstrap replicates failed", boot.failures.len()));
    }
    let names = PARAM_NAMES.iter().copied().chain(["sigma", "xi"]);
    let parameters = names
        .enumerate()
        .map(|(k, name)| {
            let (lo, hi) = boot.intervals[k];
            ParamRow {
                name: name.to_string(),
                estimate: boot.point[k],
                ci_lo: lo.is_finite().then_some(lo),
                ci_hi: hi.is_finite().then_some(hi),
            }
        })
        .collect();
    let report = FitReport {
        model: estimator.design.variant,
        n_sites: data.n_sites(),
        n_years: data.n_years(),
        n_days: data.n_days(),
        p,
        ci_level: cfg.budgets.bootstrap_level,
        parameters,
        marginal: margins.map(|m| m.0),
        training: TrainingSummary {
            trained,
            k: if trained { cfg.budgets.k } else { 0 },
            best_epoch: estimator.curve.best_epoch,
            train_mae: estimator.curve.train_mae.last().copied().unwrap_or(f64::NAN),
            val_mae: estimator.curve.val_mae.last().copied().unwrap_or(f64::NAN),
        },
        bootstrap_requested: boot.requested,
        bootstrap_succeeded: boot.draws.len(),
        flags,
    };
    Ok(FitOutcome {
        report,
        estimator,
        bootstrap: Some(boot),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelScore {
    pub model: Variant,
    pub mean_rmse: f64,
    pub fold_rmse: Vec<f64>,
    pub fold_estimates: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectReport {
    pub folds: usize,
    pub mc: usize,
    pub holdout_years: usize,
    pub scores: Vec<ModelScore>,
    pub best: Variant,
}

/// Root mean squared difference over cells defined in both grids.
pub fn grid_rmse(a: &[f64], b: &[f64]) -> f64 {
    let mut ss = 0.0;
    let mut n = 0usize;
    for (x, y) in a.iter().zip(b) {
        if x.is_finite() && y.is_finite() {
            ss += (x - y) * (x - y);
            n += 1;
        }
    }
    if n == 0 {
        f64::NAN
    } else {
        (ss / n as f64).sqrt()
    }
}

/// Cellwise mean of `χ̂` grids from `mc` panels simulated at `theta`.
pub fn mean_model_grid(design: &Design, theta: [f64; 4], layout: &Layout, mc: usize, root: Stream) -> Result<Vec<f64>> {
    let mut sum = vec![0.0; design.grid.len()];
    let mut count = vec![0usize; design.grid.len()];
    for j in 0..mc {
        let panel = design.simulate(theta, layout, root.child(j as u64))?;
        let g = chi_grid(&panel, &design.grid)?;
        for (c, v) in g.values.iter().enumerate() {
            if v.is_finite() {
                sum[c] += v;
                count[c] += 1;
            }
        }
    }
    Ok(sum
        .iter()
        .zip(&count)
        .map(|(s, &n)| if n == 0 { f64::NAN } else { s / n as f64 })
        .collect())
}

/// Repeated random splits into a fitting block and a held-out block of
/// whole years. Each candidate is fitted on the fitting block, its expected
/// grid for the held-out length is estimated by simulation, and the RMSE
/// against the held-out grid is averaged over folds.
///
/// Monte Carlo streams depend on the fold only, so identical candidates
/// score identically.
pub fn pipeline_model_select(
    data: &PanelDataset,
    estimators: &[NeuralEstimator],
    folds: usize,
    mc: usize,
    holdout: usize,
    seed: u64,
) -> Result<SelectReport> {
    let n = data.n_years();
    if n < 4 || holdout == 0 || holdout >= n {
        return Err(Error::Config(format!(
            "cannot split {n} years into a fitting block and a {holdout}-year holdout (need at least 4 years)"
        )));
    }
    if estimators.is_empty() || folds == 0 || mc == 0 {
        return Err(Error::Config("model selection needs candidates, folds and Monte Carlo draws".into()));
    }
    for e in estimators {
        if e.design.n_years != n - holdout {
            return Err(Error::Shape(format!(
                "estimator for {} expects {} years, fitting blocks have {}",
                e.design.variant,
                e.design.n_years,
                n - holdout
            )));
        }
    }
    let root = Stream::root(seed);
    let mut scores: Vec<ModelScore> = estimators
        .iter()
        .map(|e| ModelScore {
            model: e.design.variant,
            mean_rmse: f64::NAN,
            fold_rmse: Vec::with_capacity(folds),
            fold_estimates: Vec::with_capacity(folds),
        })
        .collect();
    for f in 0..folds {
        let fold = root.child(f as u64);
        let mut years: Vec<usize> = (0..n).collect();
        years.shuffle(&mut fold.purpose(Purpose::Folds).rng());
        let mut held: Vec<usize> = years[..holdout].to_vec();
        let mut fit: Vec<usize> = years[holdout..].to_vec();
        held.sort_unstable();
        fit.sort_unstable();
        let fit_block = data.select_years(&fit)?;
        let held_block = data.select_years(&held)?;
        for (e, score) in estimators.iter().zip(scores.iter_mut()) {
            let theta = e.estimate(&fit_block)?;
            let mut design = e.design.clone();
            design.n_years = holdout;
            let held_grid = chi_grid(&held_block, &design.grid)?;
            let model = mean_model_grid(&design, theta, &data.layout, mc, fold.purpose(Purpose::Noise))?;
            score.fold_rmse.push(grid_rmse(&model, &held_grid.values));
            score.fold_estimates.push(theta);
        }
    }
    for s in &mut scores {
        s.mean_rmse = stats::mean(&s.fold_rmse);
    }
    let best = scores
        .iter()
        .min_by(|a, b| a.mean_rmse.total_cmp(&b.mean_rmse))
        .map(|s| s.model)
        .ok_or_else(|| Error::Config("no candidates".into()))?;
    Ok(SelectReport {
        folds,
        mc,
        holdout_years: holdout,
        scores,
        best,
    })
}

/// Trains one estimator per candidate on fitting-block length and runs the
/// selection.
pub fn pipeline_model_select_cfg(cfg: &RunConfig, data: &PanelDataset) -> Result<SelectReport> {
    let holdout = cfg.select.holdout_years;
    let n = data.n_years();
    if n < 4 || holdout >= n {
        return Err(Error::Config(format!("cannot hold out {holdout} of {n} years")));
    }
    let estimators = cfg
        .select
        .candidates
        .iter()
        .map(|&v| train_estimator(cfg, v, &data.layout, n - holdout))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("training"))?;
    pipeline_model_select(
        data,
        &estimators,
        cfg.budgets.select_folds,
        cfg.budgets.select_mc,
        holdout,
        derive_seed(cfg.seed, TAG_SELECT),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StormRow {
    pub replicate: usize,
    pub x_km: f64,
    pub y_km: f64,
    pub day: usize,
    pub value: f64,
    pub threshold: f64,
    pub exceeds: bool,
    pub station: bool,
}

pub struct StormInput<'a> {
    pub spec: CopulaSpec,
    pub sigma: f64,
    pub xi: f64,
    pub p: f64,
    pub threshold_plane: [f64; 3],
    pub sites: &'a [Site],
}

/// Bytes needed for the dense spatial covariance and its factor.
pub fn storm_memory_bytes(n_points: usize) -> f64 {
    2.0 * 8.0 * (n_points as f64).powi(2)
}

/// Simulates consecutive days on a regular lattice over the stations'
/// bounding box plus the stations, transformed to data scale with values at
/// or below the threshold surface censored at it.
pub fn pipeline_storm(
    input: &StormInput,
    lattice: usize,
    n_days: usize,
    replicates: usize,
    memory_budget_mb: f64,
    seed: u64,
) -> Result<Vec<StormRow>> {
    if input.sites.is_empty() {
        return Err(Error::Config("storm simulation needs station coordinates".into()));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for s in input.sites {
        x0 = x0.min(s.x_km);
        x1 = x1.max(s.x_km);
        y0 = y0.min(s.y_km);
        y1 = y1.max(s.y_km);
    }
    let n_points = lattice * lattice + input.sites.len();
    let need = storm_memory_bytes(n_points);
    if need > memory_budget_mb * 1024.0 * 1024.0 {
        return Err(Error::Size(format!(
            "{lattice}×{lattice} lattice plus {} stations needs about {:.0} MB, budget is {memory_budget_mb} MB",
            input.sites.len(),
            need / 1024.0 / 1024.0
        )));
    }
    let step = |a: f64, b: f64, i: usize| if lattice == 1 { (a + b) / 2.0 } else { a + (b - a) * i as f64 / (lattice - 1) as f64 };
    let mut coords: Vec<[f64; 2]> = Vec::with_capacity(n_points);
    for s in input.sites {
        coords.push(s.coords());
    }
    for i in 0..lattice {
        for j in 0..lattice {
            let c = [step(x0, x1, i), step(y0, y1, j)];
            if !coords.contains(&c) {
                coords.push(c);
            }
        }
    }
    let n_sites = input.sites.len();
    let layout = Layout::from_coords(&coords, n_days)?;
    let plane = input.threshold_plane;
    let mu: Vec<f64> = coords.iter().map(|c| plane[0] + plane[1] * c[0] + plane[2] * c[1]).collect();
    let marginal = MarginalSpec {
        p: input.p,
        mu: mu.clone(),
        sigma: input.sigma,
        xi: input.xi,
    };
    let mut sim = CopulaSimulator::new(&input.spec, &layout)?;
    let uniform = sim.panel(&layout, replicates, Stream::root(seed))?;
    let data = to_data_scale(&uniform, &marginal)?;
    let mut rows = Vec::with_capacity(replicates * n_days * coords.len());
    for r in 0..replicates {
        for d in 0..n_days {
            for (s, c) in coords.iter().enumerate() {
                let v = data.get(r, d, s).unwrap_or(f64::NAN);
                rows.push(StormRow {
                    replicate: r + 1,
                    x_km: c[0],
                    y_km: c[1],
                    day: d + 1,
                    value: v,
                    threshold: mu[s],
                    exceeds: v > mu[s],
                    station: s < n_sites,
                });
            }
        }
    }
    Ok(rows)
}

pub fn storm_from_config(cfg: &RunConfig, sites: &[Site]) -> Result<Vec<StormRow>> {
    pipeline_storm(
        &StormInput {
            spec: cfg.copula,
            sigma: cfg.marginal.sigma,
            xi: cfg.marginal.xi,
            p: cfg.marginal.p,
            threshold_plane: cfg.marginal.threshold_plane,
            sites,
        },
        cfg.storm.lattice,
        cfg.storm.n_days,
        cfg.storm.replicates,
        cfg.storm.memory_budget_mb,
        derive_seed(cfg.seed, TAG_STORM),
    )
}

/// Fraction of lattice cells above their threshold, per replicate and day.
pub fn exceedance_fractions(rows: &[StormRow]) -> Vec<Vec<f64>> {
    let reps = rows.iter().map(|r| r.replicate).max().unwrap_or(0);
    let days = rows.iter().map(|r| r.day).max().unwrap_or(0);
    let mut hit = vec![vec![0usize; days]; reps];
    let mut tot = vec![vec![0usize; days]; reps];
    for r in rows.iter().filter(|r| !r.station) {
        tot[r.replicate - 1][r.day - 1] += 1;
        hit[r.replicate - 1][r.day - 1] += r.exceeds as usize;
    }
    hit.iter()
        .zip(&tot)
        .map(|(h, t)| h.iter().zip(t).map(|(&a, &b)| a as f64 / b.max(1) as f64).collect())
        .collect()
}

pub fn write_storm_csv<W: Write>(rows: &[StormRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChiStarRow {
    pub lag: usize,
    pub u: f64,
    pub empirical: Vec<f64>,
    pub site_rmse: Vec<f64>,
    pub mean_rmse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub sitewise_gpd: Vec<SiteGpdFit>,
    pub chi_grid: ChiGrid,
    pub band_lo: Vec<Option<f64>>,
    pub band_hi: Vec<Option<f64>>,
    pub chi_star: Vec<ChiStarRow>,
}

/// `χ*` at lags 0–2 and levels 0.90/0.95, with site-specific RMSE against
/// panels simulated from `spec`.
pub fn chi_star_table(data: &PanelDataset, spec: &CopulaSpec, p: f64, sims: usize, seed: u64) -> Result<Vec<ChiStarRow>> {
    let design = Design {
        variant: spec.variant,
        n_years: data.n_years(),
        p,
        grid: GridConfig::default(),
        mask_channel: false,
        nu: spec.nu,
    };
    let theta = spec.theta();
    let cases: Vec<(usize, f64)> = [0usize, 1, 2].iter().flat_map(|&k| [(k, 0.90), (k, 0.95)]).collect();
    let mut draws: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(sims); cases.len()];
    let root = Stream::root(seed);
    for j in 0..sims {
        let panel = design.simulate(theta, &data.layout, root.child(j as u64))?;
        for (c, &(k, u)) in cases.iter().enumerate() {
            draws[c].push(chi_star_all(&panel, k, u)?);
        }
    }
    cases
        .iter()
        .zip(draws)
        .map(|(&(k, u), d)| {
            let empirical = chi_star_all(data, k, u)?;
            let (site_rmse, mean_rmse) = rmse_chi_star(&empirical, &d)?;
            Ok(ChiStarRow {
                lag: k,
                u,
                empirical,
                site_rmse,
                mean_rmse,
            })
        })
        .collect()
}

pub fn pipeline_diagnose(cfg: &RunConfig, data: &PanelDataset) -> Result<DiagnoseReport> {
    let sitewise = match fit_margins(data, cfg.marginal.p)? {
        Some((step, _)) => sitewise_gpd(data, &step.threshold.mu),
        None => Vec::new(),
    };
    let grid = chi_grid(data, &cfg.grid)?;
    let seed = derive_seed(cfg.seed, TAG_DIAG);
    let (lo, hi) = chi_grid_bands(data, &cfg.grid, cfg.budgets.band_resamples, 0.95, Stream::root(seed))?;
    let to_opt = |v: Vec<f64>| v.into_iter().map(|x| x.is_finite().then_some(x)).collect();
    let chi_star = chi_star_table(data, &cfg.copula, cfg.marginal.p, cfg.budgets.chi_star_sims, seed.wrapping_add(1))?;
    Ok(DiagnoseReport {
        sitewise_gpd: sitewise,
        chi_grid: grid,
        band_lo: to_opt(lo),
        band_hi: to_opt(hi),
        chi_star,
    })
}

/// Uniform-scale panel through fitted margins (for data that must be
/// compared on the copula scale).
pub fn to_uniform_scale(data: &PanelDataset, m: &MarginalSpec) -> Result<PanelDataset> {
    data.map_values(Scale::Uniform, |site, y| data_to_uniform(y, m, site))
}
