//! Correlation functions for the latent Gaussian building blocks.
//!
//! Temporal factors are `exp(-k/scale)` or `exp(-(k/scale)^2)`; the spatial
//! factor is the Cauchy form `1 / (1 + (h/scale)^2)`. Space-time kernels are
//! separable products of one of each.
//!
//! Covariance matrices over a layout of `n` sites and `T` times are indexed
//! site-major: entry `(i, j)` (site `i`, time `j`) sits at `i * T + j`, so the
//! full matrix is `spatial ⊗ temporal` in the usual Kronecker convention.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalFamily {
    Exponential,
    SquaredExponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialFamily {
    Cauchy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalKernel {
    pub family: TemporalFamily,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialKernel {
    pub family: SpatialFamily,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparableKernel {
    pub spatial: SpatialKernel,
    pub temporal: TemporalKernel,
}

fn check_scale(scale: f64) -> Result<()> {
    if scale.is_finite() && scale > 0.0 {
        Ok(())
    } else {
        Err(domain(format!("kernel scale must be finite and positive, got {scale}")))
    }
}

impl TemporalKernel {
    pub fn new(family: TemporalFamily, scale: f64) -> Result<Self> {
        check_scale(scale)?;
        Ok(TemporalKernel { family, scale })
    }

    pub fn exponential(scale: f64) -> Result<Self> {
        Self::new(TemporalFamily::Exponential, scale)
    }

    /// Correlation at a nonnegative lag.
    pub fn corr(&self, lag: f64) -> Result<f64> {
        check_scale(self.scale)?;
        if !lag.is_finite() || lag < 0.0 {
            return Err(domain(format!("temporal lag must be finite and nonnegative, got {lag}")));
        }
        Ok(self.eval(lag))
    }

    pub(crate) fn eval(&self, lag: f64) -> f64 {
        let r = lag.abs() / self.scale;
        match self.family {
            TemporalFamily::Exponential => (-r).exp(),
            TemporalFamily::SquaredExponential => (-r * r).exp(),
        }
    }
}

impl SpatialKernel {
    pub fn new(family: SpatialFamily, scale: f64) -> Result<Self> {
        check_scale(scale)?;
        Ok(SpatialKernel { family, scale })
    }

    pub fn cauchy(scale: f64) -> Result<Self> {
        Self::new(SpatialFamily::Cauchy, scale)
    }

    pub fn corr(&self, dist: f64) -> Result<f64> {
        check_scale(self.scale)?;
        if !dist.is_finite() || dist < 0.0 {
            return Err(domain(format!("distance must be finite and nonnegative, got {dist}")));
        }
        Ok(self.eval(dist))
    }

    pub(crate) fn eval(&self, dist: f64) -> f64 {
        match self.family {
            SpatialFamily::Cauchy => {
                let r = dist / self.scale;
                1.0 / (1.0 + r * r)
            }
        }
    }
}

impl SeparableKernel {
    pub fn corr(&self, dist: f64, lag: f64) -> Result<f64> {
        Ok(self.spatial.corr(dist)? * self.temporal.corr(lag)?)
    }
}

/// The two Kronecker factors of a separable covariance over a layout.
#[derive(Debug, Clone)]
pub struct SeparableCovariance {
    pub spatial: DMatrix<f64>,
    pub temporal: DMatrix<f64>,
}

impl SeparableCovariance {
    pub fn n_sites(&self) -> usize {
        self.spatial.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.temporal.nrows()
    }

    /// Dense `(n·T)×(n·T)` matrix with site-major indexing.
    pub fn full(&self) -> DMatrix<f64> {
        self.spatial.kronecker(&self.temporal)
    }
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub(crate) fn check_sites(sites: &[[f64; 2]]) -> Result<()> {
    for (i, s) in sites.iter().enumerate() {
        if !s[0].is_finite() || !s[1].is_finite() {
            return Err(Error::Layout(format!("site {i} has non-finite coordinates")));
        }
        for (j, t) in sites[..i].iter().enumerate() {
            if s == t {
                return Err(Error::Layout(format!(
                    "sites {j} and {i} share coordinates ({}, {})",
                    s[0], s[1]
                )));
            }
        }
    }
    Ok(())
}

pub(crate) fn check_times(times: &[i64]) -> Result<()> {
    if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::Layout(format!(
            "times must be strictly increasing; found {} followed by {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

pub fn spatial_matrix(kernel: &SpatialKernel, sites: &[[f64; 2]]) -> Result<DMatrix<f64>> {
    check_scale(kernel.scale)?;
    check_sites(sites)?;
    let n = sites.len();
    Ok(DMatrix::from_fn(n, n, |i, j| kernel.eval(distance(sites[i], sites[j]))))
}

pub fn temporal_matrix(kernel: &TemporalKernel, times: &[i64]) -> Result<DMatrix<f64>> {
    check_scale(kernel.scale)?;
    check_times(times)?;
    let t = times.len();
    Ok(DMatrix::from_fn(t, t, |i, j| {
        kernel.eval((times[i] - times[j]).abs() as f64)
    }))
}

pub fn build_covariance(
    kernel: &SeparableKernel,
    sites: &[[f64; 2]],
    times: &[i64],
) -> Result<SeparableCovariance> {
    Ok(SeparableCovariance {
        spatial: spatial_matrix(&kernel.spatial, sites)?,
        temporal: temporal_matrix(&kernel.temporal, times)?,
    })
}
