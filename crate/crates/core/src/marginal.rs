//! Peaks-over-threshold margins.
//!
//! Values at or below the site threshold `μ(s)` are censored at probability
//! `p`; exceedances follow a generalized Pareto law with scale `σ` and shape
//! `ξ`, shared by all sites. Thresholds come from a linear quantile
//! regression on the site coordinates.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::panel::PanelDataset;
use crate::stats;

/// Below this `|ξ|` the exponential-tail formulas are used.
const XI_ZERO: f64 = 1e-8;
pub const XI_MIN: f64 = -0.5;
pub const XI_MAX: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalSpec {
    pub p: f64,
    /// Threshold per site, in data units.
    pub mu: Vec<f64>,
    pub sigma: f64,
    pub xi: f64,
}

impl MarginalSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(domain(format!("p must lie in (0,1), got {}", self.p)));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(domain(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !self.xi.is_finite() {
            return Err(domain("xi must be finite"));
        }
        Ok(())
    }

    fn mu_at(&self, site: usize) -> Result<f64> {
        self.mu
            .get(site)
            .copied()
            .ok_or_else(|| Error::Shape(format!("no threshold for site {site}")))
    }

    /// Upper endpoint of the data scale (`+∞` unless `ξ < 0`).
    pub fn upper_endpoint(&self, site: usize) -> Result<f64> {
        let mu = self.mu_at(site)?;
        Ok(if self.xi < -XI_ZERO { mu - self.sigma / self.xi } else { f64::INFINITY })
    }
}

/// Quantile transform from the uniform scale to data units: censored at
/// `μ(s)` for `u ≤ p`, generalized Pareto quantile above.
pub fn uniform_to_data(u: f64, spec: &MarginalSpec, site: usize) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(domain(format!("uniform value must lie in (0,1), got {u}")));
    }
    let mu = spec.mu_at(site)?;
    if u <= spec.p {
        return Ok(mu);
    }
    let log_w = ((1.0 - u) / (1.0 - spec.p)).ln();
    Ok(if spec.xi.abs() < XI_ZERO {
        mu - spec.sigma * log_w
    } else {
        mu + spec.sigma * (-spec.xi * log_w).exp_m1() / spec.xi
    })
}

/// Distribution function of the censored model: `p` at or below the
/// threshold, `p + (1-p)·GPD(y - μ)` above.
pub fn data_to_uniform(y: f64, spec: &MarginalSpec, site: usize) -> Result<f64> {
    if !y.is_finite() {
        return Err(domain(format!("observation must be finite, got {y}")));
    }
    let mu = spec.mu_at(site)?;
    if y <= mu {
        return Ok(spec.p);
    }
    let z = (y - mu) / spec.sigma;
    let tail = if spec.xi.abs() < XI_ZERO {
        (-z).exp()
    } else {
        let t = 1.0 + spec.xi * z;
        if t < 0.0 {
            return Err(domain(format!(
                "observation {y} lies beyond the upper endpoint {}",
                spec.upper_endpoint(site)?
            )));
        }
        if t == 0.0 {
            0.0
        } else {
            (-t.ln() / spec.xi).exp()
        }
    };
    Ok(spec.p + (1.0 - spec.p) * (1.0 - tail))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRegressionFit {
    /// `[intercept, slope in x, slope in y]`.
    pub coefficients: [f64; 3],
    pub tau: f64,
    /// Fitted threshold per site.
    pub mu: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
}

impl QuantileRegressionFit {
    pub fn predict(&self, x_km: f64, y_km: f64) -> f64 {
        let c = self.coefficients;
        c[0] + c[1] * x_km + c[2] * y_km
    }
}

pub fn pinball(e: f64, tau: f64) -> f64 {
    if e < 0.0 {
        e * (tau - 1.0)
    } else {
        e * tau
    }
}

/// Linear quantile regression of `y` on `(1, x, z)` by iteratively
/// reweighted least squares, stopped at relative loss change `< 1e-8`.
pub fn quantile_regression(rows: &[([f64; 2], f64)], tau: f64) -> Result<QuantileRegressionFit> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(domain(format!("tau must lie in (0,1), got {tau}")));
    }
    if rows.is_empty() {
        return Err(Error::Degenerate("no observations for quantile regression".into()));
    }
    let loss_of = |b: &Vector3<f64>| -> f64 {
        rows.iter()
            .map(|(c, y)| pinball(y - (b[0] + b[1] * c[0] + b[2] * c[1]), tau))
            .sum()
    };

    // Design rank check on the distinct covariate points (centered).
    let mx = rows.iter().map(|r| r.0[0]).sum::<f64>() / rows.len() as f64;
    let mz = rows.iter().map(|r| r.0[1]).sum::<f64>() / rows.len() as f64;
    let mut cov = [[0.0; 2]; 2];
    for (c, _) in rows {
        let (dx, dz) = (c[0] - mx, c[1] - mz);
        cov[0][0] += dx * dx;
        cov[0][1] += dx * dz;
        cov[1][1] += dz * dz;
    }
    let trace = cov[0][0] + cov[1][1];
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[0][1];
    if trace == 0.0 {
        // Every observation shares one covariate point: intercept-only model.
        let ys: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let q = stats::quantile(&ys, tau);
        let b = Vector3::new(q, 0.0, 0.0);
        return Ok(QuantileRegressionFit {
            coefficients: [q, 0.0, 0.0],
            tau,
            mu: Vec::new(),
            loss: loss_of(&b),
            iterations: 0,
        });
    }
    if det <= 1e-10 * trace * trace {
        return Err(Error::Rank("site coordinates are collinear; the plane is not identifiable".into()));
    }

    let solve = |weights: &dyn Fn(f64) -> f64, b: &Vector3<f64>| -> Option<Vector3<f64>> {
        let mut a = Matrix3::zeros();
        let mut rhs = Vector3::zeros();
        for (c, y) in rows {
            let x = Vector3::new(1.0, c[0], c[1]);
            let e = y - x.dot(b);
            let w = weights(e);
            a += w * x * x.transpose();
            rhs += w * y * x;
        }
        a.cholesky().map(|ch| ch.solve(&rhs))
    };

    let scale = rows.iter().map(|r| r.1.abs()).sum::<f64>() / rows.len() as f64 + 1.0;
    let floor = 1e-10 * scale;
    let mut b = solve(&|_| 1.0, &Vector3::zeros())
        .ok_or_else(|| Error::Rank("normal equations are singular".into()))?;
    let mut loss = loss_of(&b);
    let mut best = (loss, b);
    let mut iterations = 0;
    for it in 1..=2000 {
        iterations = it;
        let weights = |e: f64| {
            let w = if e < 0.0 { 1.0 - tau } else { tau };
            w / e.abs().max(floor)
        };
        let next = match solve(&weights, &b) {
            Some(n) => n,
            None => break,
        };
        let next_loss = loss_of(&next);
        b = next;
        if next_loss < best.0 {
            best = (next_loss, next);
        }
        let change = (loss - next_loss).abs();
        loss = next_loss;
        if change <= 1e-8 * loss.max(f64::MIN_POSITIVE) || loss == 0.0 {
            break;
        }
    }
    let (loss, b) = best;
    Ok(QuantileRegressionFit {
        coefficients: [b[0], b[1], b[2]],
        tau,
        mu: Vec::new(),
        loss,
        iterations,
    })
}

/// Threshold surface `μ(s)` from all present observations, with the site
/// coordinates as covariates.
pub fn fit_threshold_qr(data: &PanelDataset, tau: f64) -> Result<QuantileRegressionFit> {
    let mut rows = Vec::new();
    for s in 0..data.n_sites() {
        let c = data.layout.sites[s].coords();
        for v in data.site_values(s) {
            rows.push((c, v));
        }
    }
    let mut fit = quantile_regression(&rows, tau)?;
    fit.mu = data
        .layout
        .sites
        .iter()
        .map(|s| fit.predict(s.x_km, s.y_km))
        .collect();
    Ok(fit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpdFit {
    pub sigma: f64,
    pub xi: f64,
    pub se_sigma: f64,
    pub se_xi: f64,
    pub loglik: f64,
    pub iterations: usize,
    pub n: usize,
    /// The optimum sits on the `ξ` search box edge.
    pub boundary: bool,
    /// Scaled gradient norm at the returned point.
    pub gradient_norm: f64,
    pub note: String,
}

pub const INDEPENDENCE_NOTE: &str =
    "standard errors from the independence likelihood; they ignore dependence and understate uncertainty";

/// `(log(1+x)/x)`, `((x/(1+x) - log(1+x))/x²)` with series near zero.
fn log_ratio_terms(x: f64) -> (f64, f64) {
    if x.abs() < 1e-3 {
        // h1 = Σ_{k≥1} (-1)^{k+1} x^{k-1}/k,  h2 = Σ_{k≥2} (-1)^{k+1} (k-1)/k x^{k-2}
        let mut h1 = 0.0;
        let mut h2 = 0.0;
        let mut p1 = 1.0;
        let mut p2 = 1.0;
        for k in 1..=8 {
            let k_f = k as f64;
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            h1 += sign * p1 / k_f;
            p1 *= x;
            if k >= 2 {
                h2 += sign * (k_f - 1.0) / k_f * p2;
                p2 *= x;
            }
        }
        (h1, h2)
    } else {
        let l = x.ln_1p();
        (l / x, (x / (1.0 + x) - l) / (x * x))
    }
}

/// Log-likelihood and gradient `(∂/∂σ, ∂/∂ξ)`; `None` outside the support.
fn gpd_loglik_grad(exc: &[f64], sigma: f64, xi: f64) -> Option<(f64, [f64; 2])> {
    if sigma <= 0.0 {
        return None;
    }
    let n = exc.len() as f64;
    let mut ll = -n * sigma.ln();
    let mut sum_z_over_t = 0.0;
    let mut d_xi = 0.0;
    for &e in exc {
        let z = e / sigma;
        let x = xi * z;
        if x <= -1.0 {
            return None;
        }
        let t = 1.0 + x;
        let (h1, h2) = if x == 0.0 { (1.0, -0.5) } else { log_ratio_terms(x) };
        let log_t = x.ln_1p();
        // -(1 + 1/ξ) log t = -log t - z·h1
        ll -= log_t + z * h1;
        sum_z_over_t += z / t;
        d_xi -= z / t + z * z * h2;
    }
    let d_sigma = (-n + (1.0 + xi) * sum_z_over_t) / sigma;
    Some((ll, [d_sigma, d_xi]))
}

pub fn gpd_loglik(exc: &[f64], sigma: f64, xi: f64) -> f64 {
    gpd_loglik_grad(exc, sigma, xi).map_or(f64::NEG_INFINITY, |r| r.0)
}

fn scaled_gradient(g: [f64; 2], sigma: f64, n: usize) -> f64 {
    let n = n as f64;
    ((sigma * g[0] / n).powi(2) + (g[1] / n).powi(2)).sqrt()
}

/// Hessian in `(σ, ξ)` by central differences of the analytic gradient.
fn gpd_hessian(exc: &[f64], sigma: f64, xi: f64) -> Option<[[f64; 2]; 2]> {
    let hs = 1e-5 * sigma;
    let hx = 1e-5;
    let (_, gsp) = gpd_loglik_grad(exc, sigma + hs, xi)?;
    let (_, gsm) = gpd_loglik_grad(exc, sigma - hs, xi)?;
    let (_, gxp) = gpd_loglik_grad(exc, sigma, xi + hx)?;
    let (_, gxm) = gpd_loglik_grad(exc, sigma, xi - hx)?;
    let hss = (gsp[0] - gsm[0]) / (2.0 * hs);
    let hxx = (gxp[1] - gxm[1]) / (2.0 * hx);
    let hsx = 0.5 * ((gsp[1] - gsm[1]) / (2.0 * hs) + (gxp[0] - gxm[0]) / (2.0 * hx));
    Some([[hss, hsx], [hsx, hxx]])
}

/// Independence-likelihood fit of a generalized Pareto law to threshold
/// excesses, with `ξ` restricted to `(-0.5, 1)`.
pub fn fit_gpd_mle(exceedances: &[f64]) -> Result<GpdFit> {
    if exceedances.len() < 30 {
        return Err(Error::Config(format!(
            "need at least 30 exceedances, got {}",
            exceedances.len()
        )));
    }
    if let Some(bad) = exceedances.iter().find(|&&e| !(e.is_finite() && e > 0.0)) {
        return Err(domain(format!("exceedances must be positive and finite, found {bad}")));
    }
    let n = exceedances.len();
    let m = stats::mean(exceedances);
    let v = stats::variance(exceedances);
    if !(v > 0.0) {
        return Err(Error::Degenerate("all exceedances are equal".into()));
    }
    let lo = XI_MIN + 1e-9;
    let hi = XI_MAX - 1e-9;
    let mut xi = (0.5 * (1.0 - m * m / v)).clamp(-0.45, 0.9);
    let mut sigma = 0.5 * m * (m * m / v + 1.0);
    let max_exc = exceedances.iter().cloned().fold(0.0, f64::max);
    if xi < 0.0 && 1.0 + xi * max_exc / sigma <= 0.0 {
        sigma = -xi * max_exc * 1.01;
    }
    let (mut ll, mut g) = gpd_loglik_grad(exceedances, sigma, xi)
        .ok_or_else(|| Error::Estimation("moment start outside the support".into()))?;

    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=500 {
        iterations = it;
        if scaled_gradient(g, sigma, n) < 1e-9 {
            converged = true;
            break;
        }
        // Newton direction in (log σ, ξ); gradient ascent if the Hessian is not negative definite.
        let dir = gpd_hessian(exceedances, sigma, xi).and_then(|h| {
            let a = h[0][0] * sigma * sigma + g[0] * sigma;
            let b = h[0][1] * sigma;
            let c = h[1][1];
            let gl = [g[0] * sigma, g[1]];
            let det = a * c - b * b;
            (a < 0.0 && det > 0.0).then(|| [-(c * gl[0] - b * gl[1]) / det, -(a * gl[1] - b * gl[0]) / det])
        });
        let dir = dir.unwrap_or_else(|| {
            let s = 1.0 / n as f64;
            [g[0] * sigma * s, g[1] * s]
        });
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let ns = sigma * (step * dir[0]).clamp(-5.0, 5.0).exp();
            let nx = (xi + step * dir[1]).clamp(lo, hi);
            if let Some((nll, ng)) = gpd_loglik_grad(exceedances, ns, nx) {
                if nll >= ll - 1e-12 * ll.abs() && (nll > ll || scaled_gradient(ng, ns, n) < scaled_gradient(g, sigma, n)) {
                    sigma = ns;
                    xi = nx;
                    ll = nll;
                    g = ng;
                    moved = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !moved {
            converged = scaled_gradient(g, sigma, n) < 1e-6 || xi <= lo || xi >= hi;
            break;
        }
    }
    let boundary = xi <= lo + 1e-6 || xi >= hi - 1e-6;
    let gradient_norm = scaled_gradient(g, sigma, n);
    if !converged && !boundary && gradient_norm >= 1e-6 {
        return Err(Error::Estimation(format!(
            "GPD likelihood maximisation did not converge in {iterations} iterations (gradient {gradient_norm:e})"
        )));
    }
    let (se_sigma, se_xi) = match gpd_hessian(exceedances, sigma, xi) {
        Some(h) => {
            let det = h[0][0] * h[1][1] - h[0][1] * h[0][1];
            if det > 0.0 && h[0][0] < 0.0 {
                ((-h[1][1] / det).sqrt(), (-h[0][0] / det).sqrt())
            } else {
                (f64::NAN, f64::NAN)
            }
        }
        None => (f64::NAN, f64::NAN),
    };
    Ok(GpdFit {
        sigma,
        xi,
        se_sigma,
        se_xi,
        loglik: ll,
        iterations,
        n,
        boundary,
        gradient_norm,
        note: INDEPENDENCE_NOTE.to_string(),
    })
}

/// Pooled excesses `y - μ(s) > 0` over all sites, years and days.
pub fn pooled_exceedances(data: &PanelDataset, mu: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for s in 0..data.n_sites() {
        for v in data.site_values(s) {
            if v > mu[s] {
                out.push(v - mu[s]);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteGpdFit {
    pub site_id: String,
    pub n_exceedances: usize,
    pub sigma: f64,
    pub sigma_ci95: (f64, f64),
    pub xi: f64,
    pub xi_ci95: (f64, f64),
}

/// Site-by-site fits with Wald 95% intervals, to check that a common
/// `(σ, ξ)` is plausible. Sites with too few excesses are skipped.
pub fn sitewise_gpd(data: &PanelDataset, mu: &[f64]) -> Vec<SiteGpdFit> {
    let mut out = Vec::new();
    for s in 0..data.n_sites() {
        let exc: Vec<f64> = data
            .site_values(s)
            .into_iter()
            .filter(|&v| v > mu[s])
            .map(|v| v - mu[s])
            .collect();
        if let Ok(f) = fit_gpd_mle(&exc) {
            out.push(SiteGpdFit {
                site_id: data.layout.sites[s].site_id.clone(),
                n_exceedances: exc.len(),
                sigma: f.sigma,
                sigma_ci95: (f.sigma - 1.96 * f.se_sigma, f.sigma + 1.96 * f.se_sigma),
                xi: f.xi,
                xi_ci95: (f.xi - 1.96 * f.se_xi, f.xi + 1.96 * f.se_xi),
            });
        }
    }
    out
}

/// Draws `n` generalized Pareto excesses by inversion.
pub fn sample_gpd<R: rand::Rng + ?Sized>(rng: &mut R, n: usize, sigma: f64, xi: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let log_w = (1.0 - u).ln();
            if xi.abs() < XI_ZERO {
                -sigma * log_w
            } else {
                sigma * (-xi * log_w).exp_m1() / xi
            }
        })
        .collect()
}
