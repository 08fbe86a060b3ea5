//! Scale-mixture copula processes `X(s,t) = R(t)^δ · W(s,t)^{1-δ}` and the
//! alternative `X(s,t) = R(s)^δ · W(s,t)^{1-δ}`.
//!
//! Both factors have standard-Pareto margins, obtained from a latent Gaussian
//! or Student-t field. Mixing is done on the log scale,
//! `log X = δ·log R + (1-δ)·log W`, where both terms are standard exponential.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::fields::{FieldKernel, FieldSampler, FieldSpec, ProcessClass};
use crate::kernels::{SeparableKernel, SpatialFamily, SpatialKernel, TemporalFamily, TemporalKernel};
use crate::panel::{Layout, PanelDataset, Scale};
use crate::rng::{Purpose, Stream};

/// Below this distance from 1/2 the `δ = 1/2` branch of the marginal law is used.
pub const HALF_SWITCH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    M1,
    M2,
    M3,
    M4,
    M5,
    M6,
    M7,
    M8,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::M1,
        Variant::M2,
        Variant::M3,
        Variant::M4,
        Variant::M5,
        Variant::M6,
        Variant::M7,
        Variant::M8,
    ];

    /// Whether the scale factor `R` is the asymptotically dependent (Student-t) one.
    fn r_dependent(self) -> bool {
        matches!(self, Variant::M2 | Variant::M4 | Variant::M6 | Variant::M8)
    }

    fn w_dependent(self) -> bool {
        matches!(self, Variant::M1 | Variant::M4 | Variant::M5 | Variant::M8)
    }

    /// Variants 5–8 index the scale factor by space instead of time.
    pub fn r_over_space(self) -> bool {
        matches!(self, Variant::M5 | Variant::M6 | Variant::M7 | Variant::M8)
    }

    pub fn r_class(self, nu: f64) -> ProcessClass {
        if self.r_dependent() {
            ProcessClass::StudentT { nu }
        } else {
            ProcessClass::Gaussian
        }
    }

    pub fn w_class(self, nu: f64) -> ProcessClass {
        if self.w_dependent() {
            ProcessClass::StudentT { nu }
        } else {
            ProcessClass::Gaussian
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_start_matches(['M', 'm']);
        match t.parse::<usize>() {
            Ok(k @ 1..=8) => Ok(Variant::ALL[k - 1]),
            _ => Err(Error::Config(format!("unknown model variant {s:?} (expected M1..M8)"))),
        }
    }
}

fn default_nu() -> f64 {
    1.0
}

fn default_temporal() -> TemporalFamily {
    TemporalFamily::Exponential
}

fn default_spatial() -> SpatialFamily {
    SpatialFamily::Cauchy
}

/// Dependence parameters of one copula model.
///
/// `phi` is the range of the scale factor: a temporal scale (days) for
/// variants 1–4 and a spatial Cauchy scale (km) for variants 5–8. `psi1` and
/// `psi2` are the spatial and temporal ranges of the base field `W`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopulaSpec {
    pub variant: Variant,
    pub delta: f64,
    pub phi: f64,
    pub psi1: f64,
    pub psi2: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_temporal")]
    pub temporal_family: TemporalFamily,
    #[serde(default = "default_spatial")]
    pub spatial_family: SpatialFamily,
}

impl CopulaSpec {
    pub fn new(variant: Variant, delta: f64, phi: f64, psi1: f64, psi2: f64) -> Self {
        CopulaSpec {
            variant,
            delta,
            phi,
            psi1,
            psi2,
            nu: 1.0,
            temporal_family: TemporalFamily::Exponential,
            spatial_family: SpatialFamily::Cauchy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(domain(format!("delta must lie in [0,1], got {}", self.delta)));
        }
        for (name, v) in [("phi", self.phi), ("psi1", self.psi1), ("psi2", self.psi2), ("nu", self.nu)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(domain(format!("{name} must be finite and positive, got {v}")));
            }
        }
        Ok(())
    }

    /// `(δ, φ, ψ₁, ψ₂)` in that order.
    pub fn theta(&self) -> [f64; 4] {
        [self.delta, self.phi, self.psi1, self.psi2]
    }

    pub fn with_theta(&self, theta: [f64; 4]) -> Self {
        CopulaSpec {
            delta: theta[0],
            phi: theta[1],
            psi1: theta[2],
            psi2: theta[3],
            ..*self
        }
    }

    /// Correlation of the scale factor `R`: temporal for variants 1–4, spatial for 5–8.
    pub fn scale_kernel(&self) -> Result<FieldKernel> {
        Ok(if self.variant.r_over_space() {
            FieldKernel::Space(SpatialKernel::new(self.spatial_family, self.phi)?)
        } else {
            FieldKernel::Time(TemporalKernel::exponential(self.phi)?)
        })
    }

    /// Space-time correlation of the base field `W`.
    pub fn base_kernel(&self) -> Result<SeparableKernel> {
        Ok(SeparableKernel {
            spatial: SpatialKernel::new(self.spatial_family, self.psi1)?,
            temporal: TemporalKernel::new(self.temporal_family, self.psi2)?,
        })
    }
}

/// Survival `1 - G(x)` of the mixture margin, written in terms of `log x`.
pub fn marginal_survival_log(log_x: f64, delta: f64) -> f64 {
    if log_x <= 0.0 {
        return 1.0;
    }
    if delta <= 0.0 || delta >= 1.0 {
        return (-log_x).exp();
    }
    if (delta - 0.5).abs() < HALF_SWITCH {
        return (-2.0 * log_x).exp() * (2.0 * log_x + 1.0);
    }
    let denom = 2.0 * delta - 1.0;
    let s = (delta * (-log_x / delta).exp() - (1.0 - delta) * (-log_x / (1.0 - delta)).exp()) / denom;
    s.clamp(0.0, 1.0)
}

fn check_delta(delta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&delta) {
        Ok(())
    } else {
        Err(domain(format!("delta must lie in [0,1], got {delta}")))
    }
}

/// Marginal distribution function `G` of `X` on `[1, ∞)`.
pub fn marginal_cdf(x: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if x.is_nan() || x < 1.0 {
        return Err(domain(format!("marginal_cdf needs x >= 1, got {x}")));
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    Ok(1.0 - marginal_survival_log(x.ln(), delta))
}

/// Numerical inverse of [`marginal_cdf`], solved for `log x` by safeguarded
/// Newton steps inside a bisection bracket.
pub fn marginal_quantile(u: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if !(0.0..1.0).contains(&u) {
        return Err(domain(format!("marginal_quantile needs u in [0,1), got {u}")));
    }
    if u == 0.0 {
        return Ok(1.0);
    }
    let target = 1.0 - u;
    let f = |t: f64| marginal_survival_log(t, delta) - target;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while f(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Numerical(format!("no bracket for marginal quantile at u={u}")));
        }
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let ft = f(t);
        if ft.abs() < 1e-12 {
            return Ok(t.exp());
        }
        if ft > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        // dS/dt by a central difference; S is smooth in t.
        let h = 1e-7 * t.max(1.0);
        let slope = (marginal_survival_log(t + h, delta) - marginal_survival_log((t - h).max(0.0), delta))
            / (t + h - (t - h).max(0.0));
        let newton = t - ft / slope;
        t = if slope < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 * hi.max(1.0) {
            let x = t.exp();
            if (1.0 - marginal_survival_log(t, delta) - u).abs() < 1e-10 {
                return Ok(x);
            }
        }
    }
    Err(Error::Numerical(format!(
        "marginal quantile did not converge in 200 iterations (u={u}, delta={delta})"
    )))
}

/// Simulator holding the Cholesky factors for one `(spec, layout)` pair.
#[derive(Debug, Clone)]
pub struct CopulaSimulator {
    spec: CopulaSpec,
    n_sites: usize,
    days: usize,
    scale: FieldSampler,
    base: FieldSampler,
    scale_buf: Vec<f64>,
    base_buf: Vec<f64>,
    clamped: usize,
}

impl CopulaSimulator {
    pub fn new(spec: &CopulaSpec, layout: &Layout) -> Result<Self> {
        spec.validate()?;
        layout.validate()?;
        let coords = layout.coords();
        let times = layout.times();
        let scale = FieldSampler::new(&FieldSpec {
            class: spec.variant.r_class(spec.nu),
            kernel: spec.scale_kernel()?,
            sites: coords.clone(),
            times: times.clone(),
        })?;
        let base = FieldSampler::new(&FieldSpec {
            class: spec.variant.w_class(spec.nu),
            kernel: FieldKernel::SpaceTime(spec.base_kernel()?),
            sites: coords,
            times,
        })?;
        Ok(CopulaSimulator {
            spec: *spec,
            n_sites: layout.n_sites(),
            days: layout.days,
            scale_buf: vec![0.0; scale.len()],
            base_buf: vec![0.0; base.len()],
            scale,
            base,
            clamped: 0,
        })
    }

    pub fn spec(&self) -> &CopulaSpec {
        &self.spec
    }

    /// Values clamped by the Pareto transform so far.
    pub fn clamped(&self) -> usize {
        self.clamped
    }

    /// Fills the log-Pareto scale and base fields for one independent year.
    fn draw_year(&mut self, year: Stream) {
        let mut r_rng = year.purpose(Purpose::ScaleField).rng();
        let mut w_rng = year.purpose(Purpose::BaseField).rng();
        self.clamped += self.scale.sample_log_pareto(&mut r_rng, &mut self.scale_buf);
        self.clamped += self.base.sample_log_pareto(&mut w_rng, &mut self.base_buf);
    }

    #[inline]
    fn scale_at(&self, site: usize, day: usize) -> f64 {
        if self.spec.variant.r_over_space() {
            self.scale_buf[site]
        } else {
            self.scale_buf[day]
        }
    }

    /// `log X` for one year, written day-major (`out[day * n + site]`).
    pub fn year_log_x(&mut self, year: Stream, out: &mut [f64]) {
        self.draw_year(year);
        let d = self.spec.delta;
        for day in 0..self.days {
            for site in 0..self.n_sites {
                let r = self.scale_at(site, day);
                let w = self.base_buf[site * self.days + day];
                out[day * self.n_sites + site] = d * r + (1.0 - d) * w;
            }
        }
    }

    /// `X = R^δ W^{1-δ}` computed directly on the Pareto scale (reference path).
    pub fn year_x_direct(&mut self, year: Stream, out: &mut [f64]) {
        self.draw_year(year);
        let d = self.spec.delta;
        for day in 0..self.days {
            for site in 0..self.n_sites {
                let r = self.scale_at(site, day).exp();
                let w = self.base_buf[site * self.days + day].exp();
                out[day * self.n_sites + site] = r.powf(d) * w.powf(1.0 - d);
            }
        }
    }

    /// Uniform-scale values `G(X)` for one year, day-major.
    pub fn year_uniform(&mut self, year: Stream, out: &mut [f64]) {
        self.year_log_x(year, out);
        let d = self.spec.delta;
        for v in out.iter_mut() {
            *v = 1.0 - marginal_survival_log(*v, d);
        }
    }

    /// Uniform-scale panel of `n_years` independent years.
    pub fn panel(&mut self, layout: &Layout, n_years: usize, root: Stream) -> Result<PanelDataset> {
        if n_years == 0 {
            return Err(Error::Config("need at least one year".into()));
        }
        let block = self.n_sites * self.days;
        let mut values = vec![0.0; n_years * block];
        for (y, chunk) in values.chunks_mut(block).enumerate() {
            self.year_uniform(root.child(y as u64), chunk);
        }
        PanelDataset::new(layout.clone(), (1..=n_years as i64).collect(), values, Scale::Uniform)
    }
}

/// Simulates `n_years` independent years on uniform margins.
pub fn simulate_copula(spec: &CopulaSpec, layout: &Layout, n_years: usize, seed: u64) -> Result<PanelDataset> {
    CopulaSimulator::new(spec, layout)?.panel(layout, n_years, Stream::root(seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Extremal {
    AD,
    AI,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DependenceClass {
    pub in_space: Extremal,
    pub in_time: Extremal,
    pub in_space_time: Extremal,
    pub eta_hint: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    Space,
    Time,
    SpaceTime,
}

impl DependenceClass {
    pub fn get(&self, mode: PairMode) -> Extremal {
        match mode {
            PairMode::Space => self.in_space,
            PairMode::Time => self.in_time,
            PairMode::SpaceTime => self.in_space_time,
        }
    }
}

/// Table lookup of the limiting dependence class for space, time and
/// space-time pairs.
pub fn classify_dependence(spec: &CopulaSpec) -> DependenceClass {
    use Extremal::{AD, AI};
    let above = spec.delta > 0.5;
    let at = spec.delta == 0.5;
    let (s, t, st) = match spec.variant {
        Variant::M1 if above || at => (AD, AI, AI),
        Variant::M1 => (AD, AD, AD),
        Variant::M2 | Variant::M6 if above => (AD, AD, AD),
        Variant::M2 | Variant::M6 => (AI, AI, AI),
        Variant::M3 if above => (AD, AI, AI),
        Variant::M3 => (AI, AI, AI),
        Variant::M4 | Variant::M8 => (AD, AD, AD),
        Variant::M5 if above || at => (AI, AD, AI),
        Variant::M5 => (AD, AD, AD),
        Variant::M7 if above => (AI, AD, AI),
        Variant::M7 => (AI, AI, AI),
    };
    DependenceClass {
        in_space: s,
        in_time: t,
        in_space_time: st,
        eta_hint: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    #[test]
    fn marginal_cdf_examples() {
        for d in [0.0, 0.1, 0.3, 0.5, 0.7, 1.0] {
            assert_eq!(marginal_cdf(1.0, d).unwrap(), 0.0);
        }
        let e = std::f64::consts::E;
        assert!((marginal_cdf(e, 0.5).unwrap() - (1.0 - 3.0 * (-2.0f64).exp())).abs() < 1e-14);
        assert!((marginal_cdf(e, 0.5).unwrap() - 0.593_994).abs() < 1e-6);
        assert!((marginal_cdf(2.0, 0.3).unwrap() - 0.4243).abs() < 1e-4);
        assert!(matches!(marginal_cdf(0.99, 0.3), Err(Error::Domain(_))));
        assert!(matches!(marginal_cdf(2.0, 1.2), Err(Error::Domain(_))));
    }

    #[test]
    fn marginal_cdf_limits_and_continuity() {
        for k in 1..10 {
            let d = k as f64 / 10.0;
            assert!(marginal_cdf(1e6, d).unwrap() > 1.0 - 1e-4);
            let mut prev = 0.0;
            for i in 0..400 {
                let x = 1.0 + i as f64 * 0.25;
                let g = marginal_cdf(x, d).unwrap();
                assert!(g >= prev && g < 1.0);
                prev = g;
            }
        }
        for i in 0..=990 {
            let x = 1.0 + i as f64 * 0.1;
            let mid = marginal_cdf(x, 0.5).unwrap();
            for d in [0.5 - 1e-4, 0.5 + 1e-4] {
                assert!((marginal_cdf(x, d).unwrap() - mid).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn brute_force_pareto_product_matches_cdf() {
        use rand::Rng;
        // Independent standard Pareto pairs: R = 1/U.
        let mut rng = Stream::root(77).rng();
        let n = 2_000_000;
        let d = 0.3;
        let mut hits = 0usize;
        for _ in 0..n {
            let r = 1.0 / (1.0 - rng.random::<f64>());
            let w = 1.0 / (1.0 - rng.random::<f64>());
            if r.powf(d) * w.powf(1.0 - d) <= 2.0 {
                hits += 1;
            }
        }
        let p = hits as f64 / n as f64;
        assert!((p - marginal_cdf(2.0, d).unwrap()).abs() < 0.001, "{p}");
    }

    #[test]
    fn quantile_round_trip() {
        assert_eq!(marginal_quantile(0.0, 0.4).unwrap(), 1.0);
        for k in 1..10 {
            let d = k as f64 / 10.0;
            for u in [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 0.999] {
                let x = marginal_quantile(u, d).unwrap();
                assert!((marginal_cdf(x, d).unwrap() - u).abs() < 1e-9, "u={u} d={d}");
            }
        }
        let x = marginal_quantile(0.59399, 0.5).unwrap();
        assert!((x - std::f64::consts::E).abs() < 1e-4, "{x}");
        assert!(marginal_quantile(1.0, 0.5).is_err());
    }

    fn layout(n: usize, days: usize) -> Layout {
        let coords: Vec<[f64; 2]> = (0..n).map(|i| [i as f64 * 3.0, (i % 3) as f64 * 2.0]).collect();
        Layout::from_coords(&coords, days).unwrap()
    }

    #[test]
    fn delta_zero_is_base_field_alone() {
        let l = layout(4, 6);
        let spec = CopulaSpec::new(Variant::M1, 0.0, 0.8, 9.0, 0.5);
        let mut sim = CopulaSimulator::new(&spec, &l).unwrap();
        let year = Stream::root(5).child(0);
        let mut u = vec![0.0; 24];
        sim.year_uniform(year, &mut u);
        // Pure W on uniform margins: 1 - 1/W.
        let mut base = FieldSampler::new(&FieldSpec {
            class: ProcessClass::StudentT { nu: 1.0 },
            kernel: FieldKernel::SpaceTime(spec.base_kernel().unwrap()),
            sites: l.coords(),
            times: l.times(),
        })
        .unwrap();
        let mut w = vec![0.0; 24];
        base.sample_log_pareto(&mut year.purpose(Purpose::BaseField).rng(), &mut w);
        for day in 0..6 {
            for site in 0..4 {
                let expect = 1.0 - (-w[site * 6 + day]).exp();
                assert!((u[day * 4 + site] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn delta_one_is_constant_across_sites() {
        for v in [Variant::M1, Variant::M2, Variant::M3, Variant::M4] {
            let l = layout(5, 7);
            let p = simulate_copula(&CopulaSpec::new(v, 1.0, 0.8, 9.0, 0.5), &l, 3, 1).unwrap();
            for y in 0..3 {
                for d in 0..7 {
                    let first = p.get(y, d, 0).unwrap();
                    for s in 1..5 {
                        assert_eq!(p.get(y, d, s).unwrap(), first);
                    }
                }
            }
        }
    }

    #[test]
    fn log_form_matches_direct_product() {
        let l = layout(10, 20);
        for v in [Variant::M1, Variant::M3, Variant::M6] {
            let spec = CopulaSpec::new(v, 0.577, 0.874, 9.107, 0.328);
            let mut sim = CopulaSimulator::new(&spec, &l).unwrap();
            let mut a = vec![0.0; 200];
            let mut b = vec![0.0; 200];
            for y in 0..5 {
                let year = Stream::root(3).child(y);
                sim.year_log_x(year, &mut a);
                sim.year_x_direct(year, &mut b);
                for k in 0..200 {
                    let x = a[k].exp();
                    assert!((x - b[k]).abs() <= 1e-9 * b[k]);
                }
            }
        }
    }

    #[test]
    fn simulated_margins_are_uniform() {
        let l = layout(6, 30);
        for v in [Variant::M1, Variant::M4, Variant::M7] {
            let p = simulate_copula(&CopulaSpec::new(v, 0.4, 1.0, 8.0, 0.6), &l, 600, 12).unwrap();
            // One value per year keeps the pooled draws independent.
            let pooled: Vec<f64> = (0..600).map(|y| p.get(y, 13, 2).unwrap()).collect();
            let all: Vec<f64> = p.values().to_vec();
            assert_eq!(all.len(), 108_000);
            let d = stats::ks_distance(&pooled, |x| x);
            assert!(stats::kolmogorov_pvalue(d, pooled.len()) > 0.01, "{v:?}: D={d}");
        }
    }

    #[test]
    fn single_point_margin_matches_cdf() {
        let l = layout(1, 1);
        let spec = CopulaSpec::new(Variant::M3, 0.5, 1.0, 5.0, 1.0);
        let mut sim = CopulaSimulator::new(&spec, &l).unwrap();
        let mut xs = Vec::with_capacity(200_000);
        let mut buf = [0.0];
        for y in 0..200_000u64 {
            sim.year_log_x(Stream::root(8).child(y), &mut buf);
            xs.push(buf[0].exp());
        }
        let d = stats::ks_distance(&xs, |x| marginal_cdf(x, 0.5).unwrap());
        assert!(d < 0.005, "{d}");
    }

    #[test]
    fn invalid_delta_is_rejected() {
        let l = layout(2, 2);
        let spec = CopulaSpec::new(Variant::M1, 1.5, 1.0, 5.0, 1.0);
        assert!(matches!(simulate_copula(&spec, &l, 1, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn classification_table_rows() {
        use Extremal::*;
        let c = classify_dependence(&CopulaSpec::new(Variant::M1, 0.7, 1.0, 1.0, 1.0));
        assert_eq!((c.in_space, c.in_time, c.in_space_time), (AD, AI, AI));
        let c = classify_dependence(&CopulaSpec::new(Variant::M3, 0.4, 1.0, 1.0, 1.0));
        assert_eq!((c.in_space, c.in_time, c.in_space_time), (AI, AI, AI));
        let c = classify_dependence(&CopulaSpec::new(Variant::M7, 0.7, 1.0, 1.0, 1.0));
        assert_eq!((c.in_space, c.in_time, c.in_space_time), (AI, AD, AI));
        let c = classify_dependence(&CopulaSpec::new(Variant::M1, 0.5, 1.0, 1.0, 1.0));
        assert_eq!((c.in_space, c.in_time, c.in_space_time), (AD, AI, AI));
        let c = classify_dependence(&CopulaSpec::new(Variant::M2, 0.5, 1.0, 1.0, 1.0));
        assert_eq!((c.in_space, c.in_time, c.in_space_time), (AI, AI, AI));
        let c = classify_dependence(&CopulaSpec::new(Variant::M5, 0.3, 1.0, 1.0, 1.0));
        assert_eq!((c.in_space, c.in_time, c.in_space_time), (AD, AD, AD));
        let c = classify_dependence(&CopulaSpec::new(Variant::M5, 0.5, 1.0, 1.0, 1.0));
        assert_eq!((c.in_space, c.in_time, c.in_space_time), (AI, AD, AI));
        for v in [Variant::M4, Variant::M8] {
            for d in [0.2, 0.5, 0.8] {
                let c = classify_dependence(&CopulaSpec::new(v, d, 1.0, 1.0, 1.0));
                assert_eq!((c.in_space, c.in_time, c.in_space_time), (AD, AD, AD));
            }
        }
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("M3".parse::<Variant>().unwrap(), Variant::M3);
        assert_eq!("7".parse::<Variant>().unwrap(), Variant::M7);
        assert!("M9".parse::<Variant>().is_err());
    }
}
