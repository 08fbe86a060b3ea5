//! Simulation-based neural estimation of `(δ, φ, ψ₁, ψ₂)`.
//!
//! Parameter vectors are drawn uniformly from a box, a panel is simulated
//! for each on the target layout, and the network learns to map the binned
//! `χ̂` grids back to the parameters. Uncertainty comes from a parametric
//! bootstrap that reuses the trained network.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::{CopulaSimulator, CopulaSpec, Variant};
use crate::error::{Error, Result};
use crate::marginal::{fit_gpd_mle, pooled_exceedances, uniform_to_data, MarginalSpec};
use crate::nn::{self, Architecture, LossCurve, Network, Samples, TrainConfig};
use crate::panel::{Layout, PanelDataset, Scale};
use crate::rng::{Purpose, Stream};
use crate::stats;
use crate::tail::{chi_grid, ChiGrid, GridConfig};

pub const PARAM_NAMES: [&str; 4] = ["delta", "phi", "psi1", "psi2"];

/// Largest uniform value passed to the marginal quantile transform.
const U_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lo: [f64; 4],
    pub hi: [f64; 4],
}

impl Default for ParamBox {
    fn default() -> Self {
        ParamBox {
            lo: [0.0, 0.0, 4.0, 0.0],
            hi: [1.0, 2.5, 16.0, 2.5],
        }
    }
}

impl ParamBox {
    pub fn validate(&self) -> Result<()> {
        for k in 0..4 {
            if !(self.lo[k] < self.hi[k]) || !self.lo[k].is_finite() || !self.hi[k].is_finite() {
                return Err(Error::Config(format!(
                    "box for {} needs finite lo < hi, got ({}, {})",
                    PARAM_NAMES[k], self.lo[k], self.hi[k]
                )));
            }
        }
        if self.lo[0] < 0.0 || self.hi[0] > 1.0 {
            return Err(Error::Config("delta box must lie within [0,1]".into()));
        }
        if self.lo[1] < 0.0 || self.lo[2] < 0.0 || self.lo[3] < 0.0 {
            return Err(Error::Config("range parameters need nonnegative lower bounds".into()));
        }
        Ok(())
    }

    /// Independent uniform draws on the open box.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 4] {
        let mut t = [0.0; 4];
        for k in 0..4 {
            let u = loop {
                let u: f64 = rng.random();
                if u > 0.0 {
                    break u;
                }
            };
            t[k] = self.lo[k] + (self.hi[k] - self.lo[k]) * u;
        }
        t
    }

    pub fn scale(&self, theta: [f64; 4]) -> [f64; 4] {
        let mut s = [0.0; 4];
        for k in 0..4 {
            s[k] = (theta[k] - self.lo[k]) / (self.hi[k] - self.lo[k]);
        }
        s
    }

    pub fn unscale(&self, s: &[f64]) -> [f64; 4] {
        let mut t = [0.0; 4];
        for k in 0..4 {
            t[k] = self.lo[k] + (self.hi[k] - self.lo[k]) * s[k];
        }
        t
    }

    pub fn contains_strictly(&self, theta: [f64; 4]) -> bool {
        (0..4).all(|k| theta[k] > self.lo[k] && theta[k] < self.hi[k])
    }
}

/// What a simulated replicate looks like: model, number of years,
/// censoring level and grid summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub variant: Variant,
    pub n_years: usize,
    /// Uniform values at or below `p` are censored at `p`.
    pub p: f64,
    pub grid: GridConfig,
    /// Adds one indicator channel per level marking empty grid cells.
    #[serde(default)]
    pub mask_channel: bool,
    #[serde(default = "one")]
    pub nu: f64,
}

fn one() -> f64 {
    1.0
}

impl Design {
    pub fn new(variant: Variant, n_years: usize) -> Self {
        Design {
            variant,
            n_years,
            p: 0.9,
            grid: GridConfig::default(),
            mask_channel: false,
            nu: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_years == 0 {
            return Err(Error::Config("design needs at least one year".into()));
        }
        if !(0.0..1.0).contains(&self.p) {
            return Err(Error::Config(format!("censoring level must lie in [0,1), got {}", self.p)));
        }
        self.grid.validate()
    }

    pub fn spec(&self, theta: [f64; 4]) -> CopulaSpec {
        let mut s = CopulaSpec::new(self.variant, theta[0], theta[1], theta[2], theta[3]);
        s.nu = self.nu;
        s
    }

    pub fn architecture(&self) -> Architecture {
        let per = self.grid.levels.len();
        let channels = if self.mask_channel { 2 * per } else { per };
        Architecture::standard(channels, self.grid.n_dist_bins, self.grid.lags.len())
    }

    /// Network input for one grid; empty cells become 0.
    pub fn features(&self, grid: &ChiGrid) -> Vec<f64> {
        let mut x: Vec<f64> = grid.values.iter().map(|v| if v.is_nan() { 0.0 } else { *v }).collect();
        if self.mask_channel {
            x.extend(grid.values.iter().map(|v| if v.is_nan() { 1.0 } else { 0.0 }));
        }
        x
    }

    /// Simulated uniform-scale panel at `theta`, censored at `p`.
    pub fn simulate(&self, theta: [f64; 4], layout: &Layout, stream: Stream) -> Result<PanelDataset> {
        let spec = self.spec(theta);
        let mut sim = CopulaSimulator::new(&spec, layout)?;
        let panel = sim.panel(layout, self.n_years, stream)?;
        if self.p > 0.0 {
            let p = self.p;
            panel.map_values(Scale::Uniform, |_, u| Ok(u.max(p)))
        } else {
            Ok(panel)
        }
    }

    pub fn summarize(&self, panel: &PanelDataset) -> Result<(Vec<f64>, usize)> {
        let g = chi_grid(panel, &self.grid)?;
        Ok((self.features(&g), g.empty_cells()))
    }
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub samples: Samples,
    /// Unscaled parameter draws, one per sample.
    pub thetas: Vec<[f64; 4]>,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    /// Replicates that failed and were redrawn.
    pub failures: usize,
    /// Empty grid cells imputed with 0 over the whole set.
    pub imputed: usize,
}

impl TrainingSet {
    fn subset(&self, idx: &[usize]) -> Samples {
        let mut s = Samples {
            input_len: self.samples.input_len,
            output_len: self.samples.output_len,
            ..Default::default()
        };
        for &i in idx {
            s.push(self.samples.input(i), self.samples.target(i));
        }
        s
    }

    pub fn train_samples(&self) -> Samples {
        self.subset(&self.train_idx)
    }

    pub fn val_samples(&self) -> Samples {
        self.subset(&self.val_idx)
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }
}

const MAX_ATTEMPTS: u64 = 100;

/// `K` parameter draws, one simulated and summarized panel each, split
/// 80/20 into training and validation parts.
pub fn generate_training_set(
    design: &Design,
    pbox: &ParamBox,
    k: usize,
    layout: &Layout,
    seed: u64,
) -> Result<TrainingSet> {
    generate_samples(design, pbox, k, layout, seed, 100)
}

pub(crate) fn generate_samples(
    design: &Design,
    pbox: &ParamBox,
    k: usize,
    layout: &Layout,
    seed: u64,
    min_k: usize,
) -> Result<TrainingSet> {
    design.validate()?;
    pbox.validate()?;
    if k < min_k {
        return Err(Error::Config(format!("need at least {min_k} training replicates, got {k}")));
    }
    let root = Stream::root(seed);
    let results: Vec<Result<([f64; 4], Vec<f64>, usize, usize)>> = (0..k)
        .into_par_iter()
        .map(|i| {
            let rep = root.child(i as u64);
            let mut failures = 0;
            for attempt in 0..MAX_ATTEMPTS {
                let s = rep.child(attempt);
                let theta = pbox.sample(&mut s.purpose(Purpose::Parameters).rng());
                match design.simulate(theta, layout, s).and_then(|p| design.summarize(&p)) {
                    Ok((x, empty)) => return Ok((theta, x, empty, failures)),
                    Err(e) => {
                        log::warn!("replicate {i} attempt {attempt} failed: {e}");
                        failures += 1;
                    }
                }
            }
            Err(Error::Estimation(format!("replicate {i} failed {MAX_ATTEMPTS} times")))
        })
        .collect();
    let arch = design.architecture();
    let mut samples = Samples {
        input_len: arch.input_len(),
        output_len: 4,
        ..Default::default()
    };
    let mut thetas = Vec::with_capacity(k);
    let mut failures = 0;
    let mut imputed = 0;
    for r in results {
        let (theta, x, empty, f) = r?;
        samples.push(&x, &pbox.scale(theta));
        thetas.push(theta);
        failures += f;
        imputed += empty;
    }
    if failures > 0 {
        log::warn!("{failures} simulation failures were redrawn");
    }
    if imputed > 0 {
        log::info!("{imputed} empty grid cells imputed as 0");
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut root.purpose(Purpose::Split).rng());
    let n_val = k / 5;
    let val_idx = order[..n_val].to_vec();
    let train_idx = order[n_val..].to_vec();
    Ok(TrainingSet {
        samples,
        thetas,
        train_idx,
        val_idx,
        failures,
        imputed,
    })
}

pub const ESTIMATOR_FORMAT: &str = "scalemix-estimator";
pub const ESTIMATOR_VERSION: u32 = 1;

/// A trained network together with everything needed to apply it.
#[derive(Debug, Clone)]
pub struct NeuralEstimator {
    pub design: Design,
    pub pbox: ParamBox,
    pub layout: Layout,
    pub network: Network,
    pub curve: LossCurve,
}

#[derive(Serialize, Deserialize)]
struct EstimatorFile {
    format: String,
    version: u32,
    design: Design,
    pbox: ParamBox,
    layout: Layout,
    curve: LossCurve,
    network: serde_json::Value,
}

impl NeuralEstimator {
    /// Trains a fresh network on a prepared training set.
    pub fn train(design: &Design, pbox: &ParamBox, layout: &Layout, set: &TrainingSet, config: &TrainConfig) -> Result<Self> {
        let net = Network::init(design.architecture(), Stream::root(config.seed))?;
        let (network, curve) = nn::train(net, &set.train_samples(), &set.val_samples(), config)?;
        Ok(NeuralEstimator {
            design: design.clone(),
            pbox: *pbox,
            layout: layout.clone(),
            network,
            curve,
        })
    }

    /// Training set generation followed by training.
    pub fn fit(design: &Design, pbox: &ParamBox, layout: &Layout, k: usize, config: &TrainConfig) -> Result<(Self, TrainingSet)> {
        let set = generate_training_set(design, pbox, k, layout, config.seed)?;
        let est = Self::train(design, pbox, layout, &set, config)?;
        Ok((est, set))
    }

    pub fn predict_features(&self, x: &[f64]) -> [f64; 4] {
        self.pbox.unscale(&self.network.forward(x))
    }

    /// `θ̂_D` for an observed panel on the training layout.
    pub fn estimate(&self, data: &PanelDataset) -> Result<[f64; 4]> {
        if !data.layout.same_shape(&self.layout) || data.n_years() != self.design.n_years {
            return Err(Error::Shape(format!(
                "panel is {} sites × {} days × {} years, estimator was trained on {} × {} × {}",
                data.n_sites(),
                data.n_days(),
                data.n_years(),
                self.layout.n_sites(),
                self.layout.days,
                self.design.n_years
            )));
        }
        let (x, _) = self.design.summarize(data)?;
        Ok(self.predict_features(&x))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = EstimatorFile {
            format: ESTIMATOR_FORMAT.into(),
            version: ESTIMATOR_VERSION,
            design: self.design.clone(),
            pbox: self.pbox,
            layout: self.layout.clone(),
            curve: self.curve.clone(),
            network: serde_json::from_str(&self.network.to_json()?)?,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: EstimatorFile = serde_json::from_str(text)?;
        if file.format != ESTIMATOR_FORMAT || file.version != ESTIMATOR_VERSION {
            return Err(Error::Config(format!("unsupported estimator file {} v{}", file.format, file.version)));
        }
        let network = Network::from_json(&file.network.to_string())?;
        if network.arch != file.design.architecture() {
            return Err(Error::Shape("network architecture does not match the design".into()));
        }
        Ok(NeuralEstimator {
            design: file.design,
            pbox: file.pbox,
            layout: file.layout,
            network,
            curve: file.curve,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// `(δ, φ, ψ₁, ψ₂, σ, ξ)` at the point estimate.
    pub point: [f64; 6],
    pub draws: Vec<[f64; 6]>,
    pub level: f64,
    pub intervals: Vec<(f64, f64)>,
    pub failures: Vec<(usize, String)>,
    pub requested: usize,
}

/// Data-scale panel from a uniform one through the censored GPD margins.
pub fn to_data_scale(panel: &PanelDataset, marginal: &MarginalSpec) -> Result<PanelDataset> {
    panel.map_values(Scale::Data, |site, u| uniform_to_data(u.clamp(f64::MIN_POSITIVE, U_MAX), marginal, site))
}

/// Parametric bootstrap: `B` panels simulated at the point estimate,
/// dependence parameters re-estimated by the same network, margins refitted
/// at the fixed thresholds. Without margins the panels stay on the uniform
/// scale and the `σ, ξ` columns are NaN.
pub fn bootstrap(
    est: &NeuralEstimator,
    theta: [f64; 4],
    marginal: Option<&MarginalSpec>,
    b: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapResult> {
    if b == 0 {
        return Err(Error::Config("need at least one bootstrap replicate".into()));
    }
    if let Some(m) = marginal {
        m.validate()?;
    }
    let root = Stream::root(seed).purpose(Purpose::Bootstrap);
    let outcomes: Vec<Result<[f64; 6]>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let s = root.child(i as u64);
            let uniform = est.design.simulate(theta, &est.layout, s)?;
            match marginal {
                Some(m) => {
                    let data = to_data_scale(&uniform, m)?;
                    let d = est.estimate(&data)?;
                    let gpd = fit_gpd_mle(&pooled_exceedances(&data, &m.mu))?;
                    Ok([d[0], d[1], d[2], d[3], gpd.sigma, gpd.xi])
                }
                None => {
                    let d = est.estimate(&uniform)?;
                    Ok([d[0], d[1], d[2], d[3], f64::NAN, f64::NAN])
                }
            }
        })
        .collect();
    let mut draws = Vec::with_capacity(b);
    let mut failures = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(d) => draws.push(d),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    if (draws.len() as f64) < 0.95 * b as f64 {
        return Err(Error::Estimation(format!(
            "only {} of {b} bootstrap replicates succeeded; first failure: {}",
            draws.len(),
            failures.first().map(|f| f.1.as_str()).unwrap_or("")
        )));
    }
    let intervals = (0..6)
        .map(|k| {
            let v: Vec<f64> = draws.iter().map(|d| d[k]).filter(|x| !x.is_nan()).collect();
            if v.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                stats::percentile_interval(&v, level)
            }
        })
        .collect();
    Ok(BootstrapResult {
        point: [
            theta[0],
            theta[1],
            theta[2],
            theta[3],
            marginal.map_or(f64::NAN, |m| m.sigma),
            marginal.map_or(f64::NAN, |m| m.xi),
        ],
        draws,
        level,
        intervals,
        failures,
        requested: b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_layout() -> Layout {
        let coords: Vec<[f64; 2]> = (0..6).map(|i| [(i % 3) as f64 * 6.0, (i / 3) as f64 * 7.0]).collect();
        Layout::from_coords(&coords, 20).unwrap()
    }

    #[test]
    fn box_sampling_is_uniform() {
        let pbox = ParamBox::default();
        let mut rng = Stream::root(1).rng();
        let draws: Vec<[f64; 4]> = (0..5000).map(|_| pbox.sample(&mut rng)).collect();
        for k in 0..4 {
            let v: Vec<f64> = draws.iter().map(|d| d[k]).collect();
            assert!(v.iter().all(|&x| x > pbox.lo[k] && x < pbox.hi[k]));
            let d = stats::ks_distance(&v, |x| ((x - pbox.lo[k]) / (pbox.hi[k] - pbox.lo[k])).clamp(0.0, 1.0));
            assert!(stats::kolmogorov_pvalue(d, v.len()) > 0.01, "{}", PARAM_NAMES[k]);
        }
        let t = [0.3, 1.0, 10.0, 2.0];
        let back = pbox.unscale(&pbox.scale(t));
        assert!((0..4).all(|k| (back[k] - t[k]).abs() < 1e-12));
    }

    #[test]
    fn smoke_training_set() {
        let layout = small_layout();
        let design = Design::new(Variant::M1, 5);
        let set = generate_samples(&design, &ParamBox::default(), 2, &layout, 3, 1).unwrap();
        assert_eq!(set.len(), 2);
        assert_ne!(set.thetas[0], set.thetas[1]);
        assert_ne!(set.samples.input(0), set.samples.input(1));
        assert!(set.samples.inputs.iter().all(|v| v.is_finite()));
        let again = generate_samples(&design, &ParamBox::default(), 2, &layout, 3, 1).unwrap();
        assert_eq!(set.samples, again.samples);
        assert!(matches!(
            generate_training_set(&design, &ParamBox::default(), 50, &layout, 3),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn split_is_disjoint() {
        let layout = small_layout();
        let design = Design::new(Variant::M3, 3);
        let set = generate_training_set(&design, &ParamBox::default(), 100, &layout, 4).unwrap();
        assert_eq!(set.val_idx.len(), 20);
        let mut all: Vec<usize> = set.train_idx.iter().chain(&set.val_idx).copied().collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn estimator_round_trip_and_shape_check() {
        let layout = small_layout();
        let design = Design::new(Variant::M1, 3);
        let pbox = ParamBox::default();
        let cfg = TrainConfig { epochs: 2, batch: 32, ..Default::default() };
        let (est, set) = NeuralEstimator::fit(&design, &pbox, &layout, 100, &cfg).unwrap();
        let back = NeuralEstimator::from_json(&est.to_json().unwrap()).unwrap();
        assert_eq!(back.network, est.network);
        let theta = est.predict_features(set.samples.input(0));
        assert!(pbox.contains_strictly(theta));
        let panel = design.simulate([0.5, 1.0, 8.0, 1.0], &layout, Stream::root(9)).unwrap();
        let t = est.estimate(&panel).unwrap();
        assert!(pbox.contains_strictly(t));
        let other = Layout::from_coords(&[[0.0, 0.0], [5.0, 1.0]], 20).unwrap();
        let wrong = design.simulate([0.5, 1.0, 8.0, 1.0], &other, Stream::root(9)).unwrap();
        assert!(matches!(est.estimate(&wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn single_draw_bootstrap_degenerates() {
        let layout = small_layout();
        let mut design = Design::new(Variant::M1, 20);
        design.grid.levels = vec![0.9, 0.95];
        let pbox = ParamBox::default();
        let cfg = TrainConfig { epochs: 1, batch: 32, ..Default::default() };
        let (est, _) = NeuralEstimator::fit(&design, &pbox, &layout, 100, &cfg).unwrap();
        let marginal = MarginalSpec { p: 0.9, mu: vec![10.0; 6], sigma: 5.0, xi: 0.1 };
        let r = bootstrap(&est, [0.5, 1.0, 8.0, 1.0], Some(&marginal), 1, 0.9, 2).unwrap();
        assert_eq!(r.draws.len(), 1);
        for k in 0..6 {
            assert_eq!(r.intervals[k], (r.draws[0][k], r.draws[0][k]));
        }
    }
}
