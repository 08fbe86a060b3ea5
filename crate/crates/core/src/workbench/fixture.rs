//! The bundled synthetic rainfall panel: 30 stations spread over a disc of
//! about 68 km diameter, 20 years of 92 days, simulated from variant 1 with
//! GPD margins above a planar 0.90 threshold surface.

use rand::Rng;

use crate::copula::{CopulaSimulator, CopulaSpec, Variant};
use crate::error::Result;
use crate::marginal::{uniform_to_data, MarginalSpec};
use crate::panel::{ingest, Layout, PanelDataset, Scale, Site};
use crate::rng::{Purpose, Stream};

pub const SEED: u64 = 20;
pub const N_SITES: usize = 30;
pub const N_YEARS: usize = 20;
pub const N_DAYS: usize = 92;
pub const FIRST_YEAR: i64 = 2001;
pub const RADIUS_KM: f64 = 34.0;
pub const MIN_SPACING_KM: f64 = 3.0;
pub const P: f64 = 0.9;
pub const SIGMA: f64 = 46.34;
pub const XI: f64 = 0.114;
/// `μ(x, y) = c0 + c1·x + c2·y`, in mm.
pub const THRESHOLD_PLANE: [f64; 3] = [8.0, 0.03, -0.02];

pub const STATIONS_CSV: &str = include_str!("../../fixtures/synthetic/stations.csv");
pub const VALUES_CSV: &str = include_str!("../../fixtures/synthetic/values.csv");

pub fn copula_spec() -> CopulaSpec {
    CopulaSpec::new(Variant::M1, 0.577, 0.874, 9.107, 0.328)
}

pub fn threshold_at(x_km: f64, y_km: f64) -> f64 {
    THRESHOLD_PLANE[0] + THRESHOLD_PLANE[1] * x_km + THRESHOLD_PLANE[2] * y_km
}

fn round_to(v: f64, digits: i32) -> f64 {
    let f = 10f64.powi(digits);
    (v * f).round() / f
}

/// Station coordinates by rejection sampling on the disc with a minimum
/// spacing, rounded to 10 m.
pub fn layout() -> Result<Layout> {
    let mut rng = Stream::root(SEED).purpose(Purpose::Fixture).rng();
    let mut sites: Vec<Site> = Vec::with_capacity(N_SITES);
    while sites.len() < N_SITES {
        let x = round_to(rng.random_range(-RADIUS_KM..RADIUS_KM), 2);
        let y = round_to(rng.random_range(-RADIUS_KM..RADIUS_KM), 2);
        if x * x + y * y > RADIUS_KM * RADIUS_KM {
            continue;
        }
        if sites.iter().any(|s| (s.x_km - x).hypot(s.y_km - y) < MIN_SPACING_KM) {
            continue;
        }
        sites.push(Site {
            site_id: format!("S{:02}", sites.len() + 1),
            x_km: x,
            y_km: y,
        });
    }
    Layout::new(sites, N_DAYS)
}

pub fn marginal(layout: &Layout) -> MarginalSpec {
    MarginalSpec {
        p: P,
        mu: layout.sites.iter().map(|s| threshold_at(s.x_km, s.y_km)).collect(),
        sigma: SIGMA,
        xi: XI,
    }
}

/// Regenerates the panel. Values above the threshold follow the GPD;
/// values below it are `μ(s)·u/p`, which keeps their ranks. Everything is
/// rounded to 0.001 mm.
pub fn generate() -> Result<PanelDataset> {
    let layout = layout()?;
    let mut sim = CopulaSimulator::new(&copula_spec(), &layout)?;
    let uniform = sim.panel(&layout, N_YEARS, Stream::root(SEED).purpose(Purpose::Fixture).child(1))?;
    let m = marginal(&layout);
    let data = uniform.map_values(Scale::Data, |site, u| {
        let v = if u > P {
            uniform_to_data(u.min(1.0 - f64::EPSILON / 2.0), &m, site)?
        } else {
            m.mu[site] * u / P
        };
        Ok(round_to(v, 3))
    })?;
    let labels = (0..N_YEARS as i64).map(|y| FIRST_YEAR + y).collect();
    PanelDataset::new(data.layout.clone(), labels, data.values().to_vec(), Scale::Data)
}

/// The shipped CSV files, parsed.
pub fn bundled() -> Result<PanelDataset> {
    ingest(STATIONS_CSV.as_bytes(), VALUES_CSV.as_bytes(), Scale::Data)
}
