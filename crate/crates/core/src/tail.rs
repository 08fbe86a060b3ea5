//! Empirical tail-dependence summaries.
//!
//! Exceedances are taken against per-site empirical quantiles pooled over
//! years. Pairs are only ever formed within a year, so between-year
//! independence is respected by construction.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::copula::{classify_dependence, CopulaSimulator, CopulaSpec, Extremal, PairMode};
use crate::error::{domain, Error, Result};
use crate::panel::{Layout, PanelDataset};
use crate::rng::{Purpose, Stream};
use crate::stats;

/// Exceedance bitsets for one probability level.
#[derive(Debug, Clone)]
pub struct ExceedanceIndex {
    pub u: f64,
    /// Per-site quantile thresholds.
    pub thresholds: Vec<f64>,
    n_sites: usize,
    words: usize,
    /// `(year * n_sites + site) * words`, bit `t` is day `t`.
    exceed: Vec<u64>,
    present: Vec<u64>,
}

fn words_for(days: usize) -> usize {
    days.div_ceil(64).max(1)
}

/// Bits of `src` moved down by `lag`: bit `t` of the result is bit `t+lag`.
#[inline]
fn shift_down(src: &[u64], lag: usize, w: usize) -> u64 {
    let q = lag / 64;
    let r = lag % 64;
    let lo = src.get(w + q).copied().unwrap_or(0);
    if r == 0 {
        return lo;
    }
    let hi = src.get(w + q + 1).copied().unwrap_or(0);
    (lo >> r) | (hi << (64 - r))
}

impl ExceedanceIndex {
    pub fn new(data: &PanelDataset, u: f64) -> Result<Self> {
        Ok(Self::levels(data, &[u])?.remove(0))
    }

    /// One index per level, sorting each site's sample once.
    pub fn levels(data: &PanelDataset, levels: &[f64]) -> Result<Vec<Self>> {
        for &u in levels {
            if !(u > 0.0 && u < 1.0) {
                return Err(domain(format!("level must lie in (0,1), got {u}")));
            }
        }
        let n = data.n_sites();
        let days = data.n_days();
        let years = data.n_years();
        let words = words_for(days);
        let mut thresholds = vec![vec![0.0; n]; levels.len()];
        for s in 0..n {
            let mut v = data.site_values(s);
            if v.len() < 20 {
                return Err(Error::Config(format!(
                    "site {} has {} observations; at least 20 are needed for a quantile",
                    data.layout.sites[s].site_id,
                    v.len()
                )));
            }
            v.sort_by(f64::total_cmp);
            for (l, &u) in levels.iter().enumerate() {
                thresholds[l][s] = stats::quantile_sorted(&v, u);
            }
        }
        let mut present = vec![0u64; years * n * words];
        for y in 0..years {
            for d in 0..days {
                for s in 0..n {
                    if data.get(y, d, s).is_some() {
                        present[(y * n + s) * words + d / 64] |= 1 << (d % 64);
                    }
                }
            }
        }
        Ok(levels
            .iter()
            .zip(thresholds)
            .map(|(&u, thr)| {
                let mut exceed = vec![0u64; years * n * words];
                for y in 0..years {
                    for d in 0..days {
                        for s in 0..n {
                            if let Some(v) = data.get(y, d, s) {
                                if v > thr[s] {
                                    exceed[(y * n + s) * words + d / 64] |= 1 << (d % 64);
                                }
                            }
                        }
                    }
                }
                ExceedanceIndex {
                    u,
                    thresholds: thr,
                    n_sites: n,
                    words,
                    exceed,
                    present: present.clone(),
                }
            })
            .collect())
    }

    fn n_years(&self) -> usize {
        self.exceed.len() / (self.n_sites * self.words)
    }

    #[inline]
    fn series<'a>(&self, bits: &'a [u64], year: usize, site: usize) -> &'a [u64] {
        let k = (year * self.n_sites + site) * self.words;
        &bits[k..k + self.words]
    }

    /// Joint exceedance count of `(a at t, b at t+lag)` and the number of
    /// within-year time pairs where both are observed.
    pub fn joint(&self, a: usize, b: usize, lag: usize) -> (u64, u64) {
        let mut joint = 0u64;
        let mut valid = 0u64;
        for y in 0..self.n_years() {
            let ea = self.series(&self.exceed, y, a);
            let eb = self.series(&self.exceed, y, b);
            let pa = self.series(&self.present, y, a);
            let pb = self.series(&self.present, y, b);
            for w in 0..self.words {
                joint += (ea[w] & shift_down(eb, lag, w)).count_ones() as u64;
                valid += (pa[w] & shift_down(pb, lag, w)).count_ones() as u64;
            }
        }
        (joint, valid)
    }

    /// `χ̂ = joint / (n·(1-u))`; `None` when no time pair is available.
    /// The flag reports clipping at 1.
    pub fn chi(&self, a: usize, b: usize, lag: usize) -> Option<(f64, u64, bool)> {
        let (joint, valid) = self.joint(a, b, lag);
        if valid == 0 {
            return None;
        }
        let raw = joint as f64 / (valid as f64 * (1.0 - self.u));
        Some((raw.min(1.0), valid, raw > 1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairChi {
    pub site_a: usize,
    pub site_b: usize,
    pub lag: usize,
    pub u: f64,
    pub chi_hat: f64,
    pub n_effective: u64,
    pub clipped: bool,
}

/// Empirical `χ̂(u)` between site `a` at day `t` and site `b` at day
/// `t+lag`. `Ok(None)` signals an empty bin (no valid time pairs).
pub fn empirical_chi_pair(data: &PanelDataset, pair: (usize, usize), lag: usize, u: f64) -> Result<Option<PairChi>> {
    let (a, b) = pair;
    if a >= data.n_sites() || b >= data.n_sites() {
        return Err(Error::Shape(format!("site pair ({a},{b}) out of range")));
    }
    let idx = ExceedanceIndex::new(data, u)?;
    Ok(idx.chi(a, b, lag).map(|(chi_hat, n_effective, clipped)| PairChi {
        site_a: a,
        site_b: b,
        lag,
        u,
        chi_hat,
        n_effective,
        clipped,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub levels: Vec<f64>,
    pub n_dist_bins: usize,
    /// Upper edge of the last distance bin; half the site diameter when absent.
    pub max_distance: Option<f64>,
    pub lags: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            levels: vec![0.90, 0.95, 0.99],
            n_dist_bins: 8,
            max_distance: None,
            lags: (0..8).collect(),
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.n_dist_bins == 0 || self.lags.is_empty() {
            return Err(Error::Config("grid needs at least one level, distance bin and lag".into()));
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) || self.lags.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("grid levels and lags must be strictly increasing".into()));
        }
        for &u in &self.levels {
            if !(u > 0.0 && u < 1.0) {
                return Err(Error::Config(format!("grid level {u} outside (0,1)")));
            }
        }
        Ok(())
    }

    pub fn dist_edges(&self, layout: &Layout) -> Result<Vec<f64>> {
        let max_d = self.max_distance.unwrap_or(layout.diameter() / 2.0);
        if !(max_d > 0.0 && max_d.is_finite()) {
            return Err(Error::Config(format!("maximum grid distance must be positive, got {max_d}")));
        }
        let m = self.n_dist_bins;
        Ok((0..=m).map(|b| max_d * b as f64 / m as f64).collect())
    }

    /// Number of cells per level.
    pub fn cells(&self) -> usize {
        self.n_dist_bins * self.lags.len()
    }

    pub fn len(&self) -> usize {
        self.levels.len() * self.cells()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|x| if x.is_nan() { None } else { Some(*x) })
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Option<f64>>::deserialize(d)?
            .into_iter()
            .map(|x| x.unwrap_or(f64::NAN))
            .collect())
    }
}

/// Binned `χ̂` averages, `levels × distance bins × lags`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChiGrid {
    #[serde(with = "nan_as_null")]
    pub values: Vec<f64>,
    pub u_levels: Vec<f64>,
    pub dist_edges: Vec<f64>,
    pub lag_values: Vec<usize>,
    /// Pairs averaged per `(distance bin, lag)` cell.
    pub n_pairs: Vec<usize>,
    /// Pair estimates clipped at 1.
    pub clipped: usize,
}

impl PartialEq for ChiGrid {
    fn eq(&self, other: &Self) -> bool {
        self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a == b || (a.is_nan() && b.is_nan()))
            && self.u_levels == other.u_levels
            && self.dist_edges == other.dist_edges
            && self.lag_values == other.lag_values
            && self.n_pairs == other.n_pairs
    }
}

impl ChiGrid {
    pub fn m1(&self) -> usize {
        self.dist_edges.len() - 1
    }

    pub fn m2(&self) -> usize {
        self.lag_values.len()
    }

    #[inline]
    pub fn get(&self, level: usize, bin: usize, lag: usize) -> f64 {
        self.values[(level * self.m1() + bin) * self.m2() + lag]
    }

    pub fn empty_cells(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }

    /// Flat CSV with one row per cell.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["level", "u", "dist_lo", "dist_hi", "lag", "chi", "n_pairs"])?;
        for (l, u) in self.u_levels.iter().enumerate() {
            for b in 0..self.m1() {
                for (k, lag) in self.lag_values.iter().enumerate() {
                    let chi = self.get(l, b, k);
                    w.write_record([
                        l.to_string(),
                        u.to_string(),
                        self.dist_edges[b].to_string(),
                        self.dist_edges[b + 1].to_string(),
                        lag.to_string(),
                        if chi.is_nan() { "NaN".to_string() } else { chi.to_string() },
                        self.n_pairs[b * self.m2() + k].to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Distinct unordered site pairs grouped by distance bin (left-closed,
/// right-open).
fn pairs_by_bin(layout: &Layout, edges: &[f64]) -> Vec<Vec<(usize, usize)>> {
    let m = edges.len() - 1;
    let mut bins = vec![Vec::new(); m];
    let n = layout.n_sites();
    for i in 0..n {
        for j in i + 1..n {
            let d = layout.distance(i, j);
            if let Some(b) = bin_of(d, edges) {
                bins[b].push((i, j));
            }
        }
    }
    bins
}

fn bin_of(d: f64, edges: &[f64]) -> Option<usize> {
    if d < edges[0] || d >= edges[edges.len() - 1] {
        return None;
    }
    // Last edge not exceeding d.
    let k = edges.partition_point(|&e| e <= d);
    Some(k - 1)
}

/// Averages pairwise `χ̂` over site pairs in each distance bin and lag.
///
/// Lag 0 uses distinct site pairs. Positive lags use both orderings of
/// each pair, plus each site paired with itself in the bin holding
/// distance 0. Cells without any pair are NaN.
pub fn chi_grid(data: &PanelDataset, config: &GridConfig) -> Result<ChiGrid> {
    config.validate()?;
    let edges = config.dist_edges(&data.layout)?;
    let bins = pairs_by_bin(&data.layout, &edges);
    let self_bin = bin_of(0.0, &edges);
    let m1 = config.n_dist_bins;
    let m2 = config.lags.len();
    let indices = ExceedanceIndex::levels(data, &config.levels)?;
    let mut values = vec![f64::NAN; config.len()];
    let mut n_pairs = vec![0usize; m1 * m2];
    let mut clipped = 0;
    let mut cell = Vec::new();
    for (l, idx) in indices.iter().enumerate() {
        for (b, pairs) in bins.iter().enumerate() {
            for (k, &lag) in config.lags.iter().enumerate() {
                cell.clear();
                let mut push = |a: usize, c: usize| {
                    if let Some((chi, _, clip)) = idx.chi(a, c, lag) {
                        cell.push(chi);
                        clipped += clip as usize;
                    }
                };
                for &(i, j) in pairs {
                    push(i, j);
                    if lag > 0 {
                        push(j, i);
                    }
                }
                if lag > 0 && self_bin == Some(b) {
                    for s in 0..data.n_sites() {
                        push(s, s);
                    }
                }
                if l == 0 {
                    n_pairs[b * m2 + k] = cell.len();
                }
                if !cell.is_empty() {
                    let n = cell.len() as f64;
                    values[(l * m1 + b) * m2 + k] = stats::order_independent_sum(&mut cell) / n;
                }
            }
        }
    }
    Ok(ChiGrid {
        values,
        u_levels: config.levels.clone(),
        dist_edges: edges,
        lag_values: config.lags.clone(),
        n_pairs,
        clipped,
    })
}

/// Pointwise percentile bands from resampling whole years with
/// replacement.
pub fn chi_grid_bands(
    data: &PanelDataset,
    config: &GridConfig,
    n_boot: usize,
    level: f64,
    stream: Stream,
) -> Result<(Vec<f64>, Vec<f64>)> {
    use rand::Rng;
    if n_boot == 0 {
        return Err(Error::Config("need at least one bootstrap resample".into()));
    }
    let n_years = data.n_years();
    let mut rng = stream.purpose(Purpose::Bootstrap).rng();
    let mut draws: Vec<Vec<f64>> = vec![Vec::with_capacity(n_boot); config.len()];
    for _ in 0..n_boot {
        let years: Vec<usize> = (0..n_years).map(|_| rng.random_range(0..n_years)).collect();
        let grid = chi_grid(&data.select_years(&years)?, config)?;
        for (c, v) in grid.values.iter().enumerate() {
            if !v.is_nan() {
                draws[c].push(*v);
            }
        }
    }
    let mut lo = Vec::with_capacity(config.len());
    let mut hi = Vec::with_capacity(config.len());
    for d in draws {
        if d.is_empty() {
            lo.push(f64::NAN);
            hi.push(f64::NAN);
        } else {
            let (a, b) = stats::percentile_interval(&d, level);
            lo.push(a);
            hi.push(b);
        }
    }
    Ok((lo, hi))
}

/// The four nearest other sites, ties broken by index.
pub fn nearest_neighbours(layout: &Layout, site: usize, k: usize) -> Vec<usize> {
    let mut others: Vec<(f64, usize)> = (0..layout.n_sites())
        .filter(|&j| j != site)
        .map(|j| (layout.distance(site, j), j))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others.into_iter().take(k).map(|x| x.1).collect()
}

fn chi_star_with(idx: &ExceedanceIndex, layout: &Layout, site: usize, lag: usize) -> f64 {
    let nbrs = nearest_neighbours(layout, site, 4);
    let mut hits = 0u64;
    let mut cond = 0u64;
    for y in 0..idx.n_years() {
        let ec = idx.series(&idx.exceed, y, site);
        for w in 0..idx.words {
            let mut all_exceed = u64::MAX;
            let mut all_present = u64::MAX;
            for &j in &nbrs {
                all_exceed &= shift_down(idx.series(&idx.exceed, y, j), lag, w);
                all_present &= shift_down(idx.series(&idx.present, y, j), lag, w);
            }
            cond += (ec[w] & all_present).count_ones() as u64;
            hits += (ec[w] & all_exceed).count_ones() as u64;
        }
    }
    if cond == 0 {
        f64::NAN
    } else {
        hits as f64 / cond as f64
    }
}

/// Empirical probability that all four nearest neighbours of `site`
/// exceed their level-`u` quantile on day `t`, given `site` exceeds on day
/// `t - lag`.
pub fn chi_star(data: &PanelDataset, site: usize, lag: usize, u: f64) -> Result<f64> {
    if data.n_sites() < 5 {
        return Err(Error::Config(format!(
            "the neighbourhood diagnostic needs at least 5 sites, got {}",
            data.n_sites()
        )));
    }
    if site >= data.n_sites() {
        return Err(Error::Shape(format!("site {site} out of range")));
    }
    let idx = ExceedanceIndex::new(data, u)?;
    Ok(chi_star_with(&idx, &data.layout, site, lag))
}

/// `χ*` for every site at once.
pub fn chi_star_all(data: &PanelDataset, lag: usize, u: f64) -> Result<Vec<f64>> {
    if data.n_sites() < 5 {
        return Err(Error::Config(format!(
            "the neighbourhood diagnostic needs at least 5 sites, got {}",
            data.n_sites()
        )));
    }
    let idx = ExceedanceIndex::new(data, u)?;
    Ok((0..data.n_sites())
        .map(|s| chi_star_with(&idx, &data.layout, s, lag))
        .collect())
}

/// Site-specific root mean squared deviation of simulated draws
/// (`draws[j][site]`) from the empirical values, and its mean over sites.
/// Non-finite draws are skipped.
pub fn rmse_chi_star(empirical: &[f64], draws: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    if draws.is_empty() {
        return Err(Error::Config("need at least one simulated draw".into()));
    }
    let mut per_site = Vec::with_capacity(empirical.len());
    for (i, &e) in empirical.iter().enumerate() {
        let mut ss = 0.0;
        let mut n = 0usize;
        for d in draws {
            let v = *d.get(i).ok_or_else(|| Error::Shape("draw has fewer sites than the empirical vector".into()))?;
            if v.is_finite() {
                ss += (v - e) * (v - e);
                n += 1;
            }
        }
        per_site.push(if n == 0 || !e.is_finite() { f64::NAN } else { (ss / n as f64).sqrt() });
    }
    let finite: Vec<f64> = per_site.iter().copied().filter(|v| v.is_finite()).collect();
    Ok((per_site, stats::mean(&finite)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub n_replicates: usize,
    pub levels: Vec<f64>,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            n_replicates: 1_000_000,
            levels: vec![0.95, 0.99, 0.999],
            seed: 20_240_101,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelChi {
    pub u: f64,
    pub chi: f64,
    pub se: f64,
    pub joint: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassReport {
    pub mode: PairMode,
    pub distance_km: f64,
    pub lag: usize,
    pub n_replicates: usize,
    pub levels: Vec<LevelChi>,
    /// Least-squares slope of `log χ̂` on `log(1-u)`, an estimate of `1/η - 1`.
    pub slope: f64,
    pub eta_hat: f64,
    pub verdict: Extremal,
    pub expected: Extremal,
    pub matches: bool,
}

/// Monte Carlo check of the limiting dependence class for the three pair
/// types, on two sites `ψ₁` apart observed on two consecutive days.
///
/// Values are put on the uniform scale with the exact marginal law, so
/// `χ̂(u)` is the joint exceedance frequency over `1-u`. The verdict is AD
/// when `χ̂` at the highest level is more than two standard errors above
/// zero and at least half its value at the lowest level; AI otherwise.
pub fn verify_dependence_classes(spec: &CopulaSpec, config: &VerifyConfig) -> Result<Vec<ClassReport>> {
    spec.validate()?;
    if config.levels.len() < 2 || config.levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("need at least two increasing levels".into()));
    }
    let u_max = *config.levels.last().unwrap_or(&0.0);
    let expected_count = config.n_replicates as f64 * (1.0 - u_max);
    if expected_count < 50.0 {
        return Err(Error::Precision(format!(
            "{} replicates give an expected {expected_count:.1} exceedances at u={u_max}; need at least 50",
            config.n_replicates
        )));
    }
    let layout = Layout::from_coords(&[[0.0, 0.0], [spec.psi1, 0.0]], 2)?;
    let mut sim = CopulaSimulator::new(spec, &layout)?;
    let root = Stream::root(config.seed);
    let modes = [(PairMode::Space, 1usize), (PairMode::Time, 2), (PairMode::SpaceTime, 3)];
    let mut joint = vec![vec![0u64; config.levels.len()]; modes.len()];
    let mut buf = [0.0; 4];
    for r in 0..config.n_replicates {
        sim.year_uniform(root.child(r as u64), &mut buf);
        for (m, &(_, other)) in modes.iter().enumerate() {
            let lo = buf[0].min(buf[other]);
            for (l, &u) in config.levels.iter().enumerate() {
                if lo > u {
                    joint[m][l] += 1;
                }
            }
        }
    }
    let expected = classify_dependence(spec);
    let n = config.n_replicates as f64;
    Ok(modes
        .iter()
        .zip(joint)
        .map(|(&(mode, _), counts)| {
            let levels: Vec<LevelChi> = config
                .levels
                .iter()
                .zip(&counts)
                .map(|(&u, &c)| {
                    let p = c as f64 / n;
                    LevelChi {
                        u,
                        chi: p / (1.0 - u),
                        se: (p * (1.0 - p) / n).sqrt() / (1.0 - u),
                        joint: c,
                    }
                })
                .collect();
            let slope = tail_slope(&levels);
            let top = levels.last().expect("at least two levels");
            let first = &levels[0];
            let verdict = if top.chi - 2.0 * top.se > 0.0 && top.chi >= 0.5 * first.chi {
                Extremal::AD
            } else {
                Extremal::AI
            };
            let want = expected.get(mode);
            ClassReport {
                mode,
                distance_km: if mode == PairMode::Time { 0.0 } else { spec.psi1 },
                lag: if mode == PairMode::Space { 0 } else { 1 },
                n_replicates: config.n_replicates,
                levels,
                slope,
                eta_hat: 1.0 / (1.0 + slope),
                verdict,
                expected: want,
                matches: verdict == want,
            }
        })
        .collect())
}

/// Single-mode form of [`verify_dependence_classes`].
pub fn verify_dependence_class(spec: &CopulaSpec, mode: PairMode, config: &VerifyConfig) -> Result<ClassReport> {
    verify_dependence_classes(spec, config)?
        .into_iter()
        .find(|r| r.mode == mode)
        .ok_or_else(|| Error::Config("unknown pair mode".into()))
}

/// Slope of `log χ̂` against `log(1-u)` over the levels with `χ̂ > 0`.
pub fn tail_slope(levels: &[LevelChi]) -> f64 {
    let pts: Vec<(f64, f64)> = levels
        .iter()
        .filter(|l| l.chi > 0.0)
        .map(|l| ((1.0 - l.u).ln(), l.chi.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::{simulate_copula, Variant};
    use crate::panel::Scale;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn panel_from(values: Vec<f64>, coords: &[[f64; 2]], years: usize, days: usize) -> PanelDataset {
        let layout = Layout::from_coords(coords, days).unwrap();
        PanelDataset::new(layout, (1..=years as i64).collect(), values, Scale::Data).unwrap()
    }

    /// Two sites, `years × days` bivariate normal pairs with correlation `rho`.
    fn gaussian_pair(rho: f64, years: usize, days: usize, seed: u64) -> PanelDataset {
        let mut rng = Stream::root(seed).rng();
        let s = (1.0 - rho * rho).sqrt();
        let mut v = Vec::with_capacity(years * days * 2);
        for _ in 0..years * days {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            v.push(a);
            v.push(rho * a + s * b);
        }
        panel_from(v, &[[0.0, 0.0], [1.0, 0.0]], years, days)
    }

    #[test]
    fn shift_down_crosses_words() {
        let src = [1u64 << 63, 0b101];
        assert_eq!(shift_down(&src, 0, 0), 1 << 63);
        assert_eq!(shift_down(&src, 63, 0), 0b1011);
        assert_eq!(shift_down(&src, 64, 0), 0b101);
        assert_eq!(shift_down(&src, 2, 1), 0b1);
    }

    #[test]
    fn comonotone_pair_has_chi_one() {
        let mut rng = Stream::root(1).rng();
        let mut v = Vec::new();
        for _ in 0..40 * 50 {
            let x: f64 = rng.random();
            v.push(x);
            v.push(x);
        }
        let p = panel_from(v, &[[0.0, 0.0], [3.0, 0.0]], 40, 50);
        for u in [0.5, 0.9, 0.95, 0.99] {
            let c = empirical_chi_pair(&p, (0, 1), 0, u).unwrap().unwrap();
            // Quantile-count rounding: floor vs exact number above the quantile.
            let n = 2000.0;
            assert!((c.chi_hat - 1.0).abs() <= 1.0 / (n * (1.0 - u)) + 1e-12, "{u} {c:?}");
        }
    }

    #[test]
    fn independent_pair_gives_one_minus_u() {
        let mut rng = Stream::root(2).rng();
        let v: Vec<f64> = (0..2 * 100 * 100).map(|_| rng.random()).collect();
        let p = panel_from(v, &[[0.0, 0.0], [3.0, 0.0]], 100, 100);
        let c = empirical_chi_pair(&p, (0, 1), 0, 0.9).unwrap().unwrap();
        let se = (0.01f64 * 0.99 / 1e4).sqrt() / 0.1;
        assert!((c.chi_hat - 0.1).abs() < 3.0 * se, "{c:?}");
        assert_eq!(c.n_effective, 10_000);
    }

    #[test]
    fn gaussian_pair_matches_quadrature() {
        for (k, rho) in [0.0, 0.5, 0.9].into_iter().enumerate() {
            let p = gaussian_pair(rho, 500, 400, 10 + k as u64);
            let c = empirical_chi_pair(&p, (0, 1), 0, 0.9).unwrap().unwrap();
            let a = stats::normal_quantile(0.9);
            let oracle = stats::bivariate_normal_joint_sf(a, rho) / 0.1;
            let n = 200_000.0;
            let pj = oracle * 0.1;
            let se = (pj * (1.0 - pj) / n).sqrt() / 0.1;
            // Estimated quantiles add a little variance on top of the binomial part.
            assert!((c.chi_hat - oracle).abs() < 4.0 * se, "rho={rho} {} vs {oracle}", c.chi_hat);
        }
    }

    #[test]
    fn gaussian_slope_tracks_eta() {
        let rho = 0.5;
        let p = gaussian_pair(rho, 1000, 1000, 21);
        let levels: Vec<LevelChi> = [0.9, 0.95, 0.99, 0.995, 0.999]
            .iter()
            .map(|&u| LevelChi {
                u,
                chi: empirical_chi_pair(&p, (0, 1), 0, u).unwrap().unwrap().chi_hat,
                se: 0.0,
                joint: 0,
            })
            .collect();
        let eta = (1.0 + rho) / 2.0;
        let slope = tail_slope(&levels);
        assert!((slope - (1.0 / eta - 1.0)).abs() < 0.15, "{slope}");
    }

    #[test]
    fn no_time_pairs_is_an_empty_bin() {
        let v = vec![0.5; 2 * 30 * 3];
        let p = panel_from(v, &[[0.0, 0.0], [3.0, 0.0]], 30, 3);
        assert!(empirical_chi_pair(&p, (0, 1), 3, 0.9).unwrap().is_none());
        assert!(empirical_chi_pair(&p, (0, 1), 2, 0.9).unwrap().is_some());
    }

    #[test]
    fn pairs_never_cross_years() {
        // Exceedances only on the last day at site 0 and the first day at
        // site 1; pairing across years would make lag-1 chi positive.
        let years = 50;
        let days = 4;
        let mut v = vec![0.0; years * days * 2];
        for y in 0..years {
            v[(y * days + days - 1) * 2] = 10.0;
            v[(y * days) * 2 + 1] = 10.0;
        }
        let p = panel_from(v, &[[0.0, 0.0], [3.0, 0.0]], years, days);
        let c = empirical_chi_pair(&p, (0, 1), 1, 0.7).unwrap().unwrap();
        assert_eq!(c.chi_hat, 0.0);
        assert_eq!(c.n_effective, (years * (days - 1)) as u64);
    }

    fn ring(n: usize, r: f64) -> Vec<[f64; 2]> {
        (0..n)
            .map(|i| {
                let a = i as f64 * 2.399_963;
                let rr = r * ((i + 1) as f64 / n as f64).sqrt();
                [rr * a.cos(), rr * a.sin()]
            })
            .collect()
    }

    #[test]
    fn grid_shape_and_bins() {
        let coords = ring(12, 30.0);
        let layout = Layout::from_coords(&coords, 40).unwrap();
        let spec = CopulaSpec::new(Variant::M1, 0.577, 0.874, 9.107, 0.328);
        let data = simulate_copula(&spec, &layout, 30, 5).unwrap();
        let g = chi_grid(&data, &GridConfig::default()).unwrap();
        assert_eq!(g.values.len(), 3 * 8 * 8);
        assert!(g.dist_edges.windows(2).all(|w| w[0] < w[1]));
        assert!((g.dist_edges[8] - layout.diameter() / 2.0).abs() < 1e-12);
        assert!(g.values.iter().all(|v| v.is_nan() || (0.0..=1.0).contains(v)));
        // Lag-0 cells contain distinct-site pairs only.
        let lag0: usize = (0..8).map(|b| g.n_pairs[b * 8]).sum();
        let within: usize = (0..12)
            .flat_map(|i| (i + 1..12).map(move |j| (i, j)))
            .filter(|&(i, j)| layout.distance(i, j) < g.dist_edges[8])
            .count();
        assert_eq!(lag0, within);
        // Positive lags add both orders plus the self pairs.
        assert_eq!(g.n_pairs[1], 2 * g.n_pairs[0] + 12);
    }

    #[test]
    fn bin_edges_are_left_closed() {
        let e = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(bin_of(0.0, &e), Some(0));
        assert_eq!(bin_of(1.0, &e), Some(1));
        assert_eq!(bin_of(2.999, &e), Some(2));
        assert_eq!(bin_of(3.0, &e), None);
    }

    #[test]
    fn common_scale_gives_unit_lag0_row() {
        let coords = ring(10, 20.0);
        let layout = Layout::from_coords(&coords, 30).unwrap();
        let spec = CopulaSpec::new(Variant::M3, 1.0, 0.874, 9.107, 0.328);
        let data = simulate_copula(&spec, &layout, 40, 6).unwrap();
        let g = chi_grid(&data, &GridConfig::default()).unwrap();
        for l in 0..3 {
            for b in 0..8 {
                let v = g.get(l, b, 0);
                if !v.is_nan() {
                    let n = 1200.0;
                    let u = g.u_levels[l];
                    assert!((v - 1.0).abs() <= 1.0 / (n * (1.0 - u)) + 1e-12, "{l} {b} {v}");
                }
            }
        }
    }

    #[test]
    fn lag0_grid_is_permutation_invariant() {
        let coords = ring(9, 25.0);
        let layout = Layout::from_coords(&coords, 20).unwrap();
        let spec = CopulaSpec::new(Variant::M1, 0.6, 1.0, 8.0, 0.5);
        let data = simulate_copula(&spec, &layout, 25, 7).unwrap();
        let a = chi_grid(&data, &GridConfig::default()).unwrap();
        let order = [4, 2, 8, 0, 1, 7, 3, 6, 5];
        let b = chi_grid(&data.permute_sites(&order).unwrap(), &GridConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grid_json_round_trip_keeps_nan() {
        let coords = [[0.0, 0.0], [1.0, 0.0], [50.0, 0.0]];
        let layout = Layout::from_coords(&coords, 10).unwrap();
        let spec = CopulaSpec::new(Variant::M3, 0.4, 1.0, 8.0, 0.5);
        let data = simulate_copula(&spec, &layout, 10, 8).unwrap();
        let g = chi_grid(&data, &GridConfig::default()).unwrap();
        assert!(g.empty_cells() > 0);
        let s = serde_json::to_string(&g).unwrap();
        let back: ChiGrid = serde_json::from_str(&s).unwrap();
        assert_eq!(g, back);
        let mut out = Vec::new();
        g.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 8 * 8);
        assert!(text.starts_with("level,u,dist_lo,dist_hi,lag,chi,n_pairs"));
    }

    #[test]
    fn chi_star_limits() {
        let coords = ring(8, 10.0);
        let mut rng = Stream::root(9).rng();
        let (years, days) = (100, 200);
        let mut como = Vec::new();
        let mut indep = Vec::new();
        for _ in 0..years * days {
            let x: f64 = rng.random();
            for _ in 0..8 {
                como.push(x);
                indep.push(rng.random::<f64>());
            }
        }
        let c = panel_from(como, &coords, years, days);
        assert!((chi_star(&c, 0, 0, 0.9).unwrap() - 1.0).abs() < 1e-12);
        let i = panel_from(indep, &coords, years, days);
        let all = chi_star_all(&i, 0, 0.9).unwrap();
        let m = stats::mean(&all);
        // 8 sites × ~2000 conditioning days each; the mean is over overlapping sets.
        assert!((m - 1e-4).abs() < 3e-4, "{m}");
        assert!(matches!(
            chi_star(&panel_from(vec![0.0; 4 * 30], &coords[..4], 1, 30), 0, 0, 0.9),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn rmse_examples() {
        let emp = vec![0.3, 0.5];
        let same = vec![emp.clone(); 5];
        assert_eq!(rmse_chi_star(&emp, &same).unwrap().1, 0.0);
        let alt: Vec<Vec<f64>> = (0..10)
            .map(|j| {
                let s = if j % 2 == 0 { 0.1 } else { -0.1 };
                emp.iter().map(|e| e + s).collect()
            })
            .collect();
        let (per, m) = rmse_chi_star(&emp, &alt).unwrap();
        assert!((m - 0.1).abs() < 1e-12 && per.iter().all(|p| (p - 0.1).abs() < 1e-12));
        assert!(rmse_chi_star(&emp, &[]).is_err());
    }

    #[test]
    fn verify_precision_guard() {
        let spec = CopulaSpec::new(Variant::M4, 0.3, 1.0, 8.0, 1.0);
        let cfg = VerifyConfig { n_replicates: 10_000, ..Default::default() };
        assert!(matches!(verify_dependence_classes(&spec, &cfg), Err(Error::Precision(_))));
    }

    #[test]
    fn verify_m4_is_dependent_everywhere() {
        let lag_half = 1.0 / std::f64::consts::LN_2;
        let spec = CopulaSpec::new(Variant::M4, 0.3, lag_half, 8.0, lag_half);
        let cfg = VerifyConfig { n_replicates: 200_000, levels: vec![0.95, 0.99, 0.995], seed: 3 };
        for r in verify_dependence_classes(&spec, &cfg).unwrap() {
            assert_eq!(r.verdict, Extremal::AD, "{r:?}");
            assert!(r.matches);
        }
    }
}
