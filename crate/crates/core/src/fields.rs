//! Exact simulation of Gaussian and Student-t random fields.
//!
//! Separable fields are drawn through the Kronecker factorisation
//! `chol(S ⊗ T) = chol(S) ⊗ chol(T)`: with standard normals arranged as an
//! `n×T` matrix `Z`, the field is `L_S · Z · L_Tᵀ`, which costs
//! `O(n³ + T³ + nT(n+T))` instead of `O((nT)³)`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

use crate::error::{domain, Error, Result};
use crate::kernels::{self, SeparableKernel, SpatialKernel, TemporalKernel};
use crate::rng::{Purpose, Stream};

/// Smallest survival probability kept by the Pareto transform (`1 - F >= 2^-53`).
pub const MIN_SURVIVAL: f64 = 1.0 / 9_007_199_254_740_992.0;

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum ProcessClass {
    Gaussian,
    StudentT { nu: f64 },
}

impl ProcessClass {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ProcessClass::Gaussian => Ok(()),
            ProcessClass::StudentT { nu } if nu.is_finite() && nu > 0.0 => Ok(()),
            ProcessClass::StudentT { nu } => {
                Err(domain(format!("degrees of freedom must be positive, got {nu}")))
            }
        }
    }

    /// Marginal upper-tail probability `1 - F(v)`, accurate far into the tail.
    pub fn survival(&self, v: f64) -> f64 {
        match *self {
            ProcessClass::Gaussian => 0.5 * erfc(v * std::f64::consts::FRAC_1_SQRT_2),
            ProcessClass::StudentT { nu } if nu == 1.0 => {
                if v > 0.0 {
                    (1.0 / v).atan() * std::f64::consts::FRAC_1_PI
                } else {
                    0.5 - v.atan() * std::f64::consts::FRAC_1_PI
                }
            }
            ProcessClass::StudentT { nu } => StudentsT::new(0.0, 1.0, nu)
                .expect("validated degrees of freedom")
                .sf(v),
        }
    }

    pub fn cdf(&self, v: f64) -> f64 {
        1.0 - self.survival(v)
    }

    /// `log(1 / (1 - F(v)))`, i.e. the standard-exponential (log-Pareto)
    /// transform. Returns the value and whether the survival was clamped.
    pub fn log_pareto(&self, v: f64) -> (f64, bool) {
        let s = self.survival(v);
        if s < MIN_SURVIVAL {
            (-MIN_SURVIVAL.ln(), true)
        } else {
            (-s.ln(), false)
        }
    }
}

/// Correlation structure of a field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldKernel {
    SpaceTime(SeparableKernel),
    /// Purely temporal: one value per time, sites are ignored.
    Time(TemporalKernel),
    /// Purely spatial: one value per site, times are ignored.
    Space(SpatialKernel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub class: ProcessClass,
    pub kernel: FieldKernel,
    pub sites: Vec<[f64; 2]>,
    pub times: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    /// Row-major `(site, time)` values.
    pub values: Vec<f64>,
    pub n_sites: usize,
    pub n_times: usize,
    pub rng_seed: u64,
    /// Number of values whose survival probability was clamped at `2^-53`.
    #[serde(default)]
    pub clamped: usize,
}

impl FieldSample {
    pub fn get(&self, site: usize, time: usize) -> f64 {
        self.values[site * self.n_times + time]
    }
}

/// Lower Cholesky factor, adding diagonal jitter from 1e-10 up to 1e-6 if the
/// plain factorisation fails.
pub fn cholesky_jittered(m: &DMatrix<f64>, factor: &str) -> Result<DMatrix<f64>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c.l());
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * 1.000_001 {
        let mut a = m.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += jitter;
        }
        if let Some(c) = a.cholesky() {
            log::debug!("{factor} factor needed jitter {jitter:e}");
            return Ok(c.l());
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical(format!(
        "Cholesky factorisation of the {factor} correlation factor failed after jitter {JITTER_MAX:e}"
    )))
}

/// Precomputed Kronecker Cholesky factors for repeated draws of one field.
#[derive(Debug, Clone)]
pub struct FieldSampler {
    class: ProcessClass,
    n_sites: usize,
    n_times: usize,
    spatial_chol: DMatrix<f64>,
    temporal_chol_t: DMatrix<f64>,
    z: DMatrix<f64>,
    tmp: DMatrix<f64>,
    out: DMatrix<f64>,
    gamma: Option<Gamma<f64>>,
}

impl FieldSampler {
    pub fn new(spec: &FieldSpec) -> Result<Self> {
        spec.class.validate()?;
        let (spatial, temporal) = match &spec.kernel {
            FieldKernel::SpaceTime(k) => {
                let cov = kernels::build_covariance(k, &spec.sites, &spec.times)?;
                (cov.spatial, cov.temporal)
            }
            FieldKernel::Time(k) => (
                DMatrix::from_element(1, 1, 1.0),
                kernels::temporal_matrix(k, &spec.times)?,
            ),
            FieldKernel::Space(k) => (
                kernels::spatial_matrix(k, &spec.sites)?,
                DMatrix::from_element(1, 1, 1.0),
            ),
        };
        Self::from_factors(spec.class, &spatial, &temporal)
    }

    pub fn from_factors(
        class: ProcessClass,
        spatial: &DMatrix<f64>,
        temporal: &DMatrix<f64>,
    ) -> Result<Self> {
        class.validate()?;
        let n = spatial.nrows();
        let t = temporal.nrows();
        if n == 0 || t == 0 {
            return Err(Error::Layout("field layout is empty".into()));
        }
        let spatial_chol = cholesky_jittered(spatial, "spatial")?;
        let temporal_chol_t = cholesky_jittered(temporal, "temporal")?.transpose();
        let gamma = match class {
            ProcessClass::Gaussian => None,
            ProcessClass::StudentT { nu } => Some(
                Gamma::new(nu / 2.0, 2.0 / nu)
                    .map_err(|e| domain(format!("invalid gamma mixing law: {e}")))?,
            ),
        };
        Ok(FieldSampler {
            class,
            n_sites: n,
            n_times: t,
            spatial_chol,
            temporal_chol_t,
            z: DMatrix::zeros(n, t),
            tmp: DMatrix::zeros(n, t),
            out: DMatrix::zeros(n, t),
            gamma,
        })
    }

    pub fn class(&self) -> ProcessClass {
        self.class
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn len(&self) -> usize {
        self.n_sites * self.n_times
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Draws one replicate into `out` (row-major `(site, time)`).
    pub fn sample_into<R: Rng + ?Sized>(&mut self, rng: &mut R, out: &mut [f64]) {
        let t = self.n_times;
        for k in 0..self.n_sites * t {
            self.z[(k / t, k % t)] = rng.sample(StandardNormal);
        }
        self.transform_normals(out);
        if let Some(gamma) = &self.gamma {
            let scale = 1.0 / gamma.sample(rng).sqrt();
            out.iter_mut().for_each(|v| *v *= scale);
        }
    }

    /// Applies the factor pair to a given standard-normal vector in
    /// row-major order (the Gaussian part only).
    pub fn correlate(&mut self, normals: &[f64], out: &mut [f64]) {
        let t = self.n_times;
        for (k, &v) in normals.iter().enumerate() {
            self.z[(k / t, k % t)] = v;
        }
        self.transform_normals(out);
    }

    fn transform_normals(&mut self, out: &mut [f64]) {
        let t = self.n_times;
        if self.n_sites == 1 {
            // Row vector times L_Tᵀ.
            self.out.gemm(1.0, &self.z, &self.temporal_chol_t, 0.0);
        } else if t == 1 {
            self.out.gemm(1.0, &self.spatial_chol, &self.z, 0.0);
        } else {
            self.tmp.gemm(1.0, &self.spatial_chol, &self.z, 0.0);
            self.out.gemm(1.0, &self.tmp, &self.temporal_chol_t, 0.0);
        }
        for i in 0..self.n_sites {
            for j in 0..t {
                out[i * t + j] = self.out[(i, j)];
            }
        }
    }

    /// Draws one replicate on the standard-exponential scale
    /// `log(1/(1-F(v)))`. Returns the number of clamped values.
    pub fn sample_log_pareto<R: Rng + ?Sized>(&mut self, rng: &mut R, out: &mut [f64]) -> usize {
        self.sample_into(rng, out);
        let class = self.class;
        let mut clamped = 0;
        for v in out.iter_mut() {
            let (lp, c) = class.log_pareto(*v);
            *v = lp;
            clamped += c as usize;
        }
        clamped
    }
}

fn simulate(spec: &FieldSpec, seed: u64) -> Result<FieldSample> {
    let mut sampler = FieldSampler::new(spec)?;
    let mut rng = Stream::root(seed).purpose(Purpose::BaseField).rng();
    let mut values = vec![0.0; sampler.len()];
    sampler.sample_into(&mut rng, &mut values);
    Ok(FieldSample {
        values,
        n_sites: sampler.n_sites,
        n_times: sampler.n_times,
        rng_seed: seed,
        clamped: 0,
    })
}

/// Zero-mean unit-variance Gaussian field with the given correlation.
pub fn simulate_gaussian(spec: &FieldSpec, seed: u64) -> Result<FieldSample> {
    if spec.class != ProcessClass::Gaussian {
        return Err(domain("simulate_gaussian requires a Gaussian field spec"));
    }
    simulate(spec, seed)
}

/// Student-t field: a Gaussian field divided by `sqrt(g)` with a single
/// `g ~ Gamma(ν/2, rate ν/2)` for the whole replicate.
pub fn simulate_student_t(spec: &FieldSpec, seed: u64) -> Result<FieldSample> {
    if !matches!(spec.class, ProcessClass::StudentT { .. }) {
        return Err(domain("simulate_student_t requires a Student-t field spec"));
    }
    simulate(spec, seed)
}

/// Maps every value to standard-Pareto margins, `v ↦ 1/(1-F(v))`.
pub fn to_standard_pareto(sample: &FieldSample, class: ProcessClass) -> Result<FieldSample> {
    class.validate()?;
    let mut clamped = 0;
    let mut values = Vec::with_capacity(sample.values.len());
    for &v in &sample.values {
        if v.is_nan() {
            return Err(domain("NaN value in field sample"));
        }
        let s = class.survival(v);
        if s < MIN_SURVIVAL {
            clamped += 1;
            values.push(1.0 / MIN_SURVIVAL);
        } else {
            values.push(1.0 / s);
        }
    }
    if clamped > 0 {
        log::warn!("{clamped} values clamped at survival 2^-53 in the Pareto transform");
    }
    Ok(FieldSample {
        values,
        clamped,
        ..sample.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{SpatialKernel, TemporalKernel};
    use crate::stats;

    fn point_spec(class: ProcessClass) -> FieldSpec {
        FieldSpec {
            class,
            kernel: FieldKernel::Time(TemporalKernel::exponential(1.0).unwrap()),
            sites: vec![[0.0, 0.0]],
            times: vec![0],
        }
    }

    fn draws(spec: &FieldSpec, n: usize, seed: u64) -> Vec<f64> {
        let mut sampler = FieldSampler::new(spec).unwrap();
        let root = Stream::root(seed);
        let mut out = vec![0.0; sampler.len()];
        let mut all = Vec::with_capacity(n * sampler.len());
        let mut rng = root.rng();
        for _ in 0..n {
            sampler.sample_into(&mut rng, &mut out);
            all.extend_from_slice(&out);
        }
        all
    }

    #[test]
    fn single_point_gaussian_is_standard_normal() {
        let v = draws(&point_spec(ProcessClass::Gaussian), 1_000_000, 11);
        let m = stats::mean(&v);
        let var = stats::variance(&v);
        assert!(m.abs() < 0.005, "mean {m}");
        assert!((0.99..=1.01).contains(&var), "var {var}");
    }

    #[test]
    fn two_sites_at_scale_distance_have_correlation_half() {
        let spec = FieldSpec {
            class: ProcessClass::Gaussian,
            kernel: FieldKernel::Space(SpatialKernel::cauchy(9.107).unwrap()),
            sites: vec![[0.0, 0.0], [9.107, 0.0]],
            times: vec![0],
        };
        let v = draws(&spec, 100_000, 5);
        let (a, b): (Vec<f64>, Vec<f64>) = v.chunks(2).map(|c| (c[0], c[1])).unzip();
        let (ma, mb) = (stats::mean(&a), stats::mean(&b));
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64;
        let r = cov / (stats::variance(&a) * stats::variance(&b)).sqrt();
        assert!((r - 0.5).abs() < 0.02, "corr {r}");
    }

    #[test]
    fn cauchy_margin_for_one_degree_of_freedom() {
        let v = draws(&point_spec(ProcessClass::StudentT { nu: 1.0 }), 1_000_000, 3);
        let n = v.len() as f64;
        let below0 = v.iter().filter(|&&x| x <= 0.0).count() as f64 / n;
        let below1 = v.iter().filter(|&&x| x <= 1.0).count() as f64 / n;
        assert!((below0 - 0.5).abs() < 0.003, "{below0}");
        assert!((below1 - 0.75).abs() < 0.003, "{below1}");
    }

    #[test]
    fn student_t4_variance() {
        let v = draws(&point_spec(ProcessClass::StudentT { nu: 4.0 }), 1_000_000, 4);
        let var = stats::variance(&v);
        assert!((var - 2.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn pareto_transform_examples() {
        let sample = FieldSample {
            values: vec![0.0, -1.0, 1.0, 40.0],
            n_sites: 1,
            n_times: 4,
            rng_seed: 0,
            clamped: 0,
        };
        let p = to_standard_pareto(&sample, ProcessClass::Gaussian).unwrap();
        assert!((p.values[0] - 2.0).abs() < 1e-15);
        assert!(p.values.iter().all(|&v| v >= 1.0));
        assert!(p.values[1] < p.values[0] && p.values[0] < p.values[2]);
        assert_eq!(p.clamped, 1);
        let c = to_standard_pareto(&sample, ProcessClass::StudentT { nu: 1.0 }).unwrap();
        assert!((c.values[0] - 2.0).abs() < 1e-15);

        let bad = FieldSample { values: vec![f64::NAN], ..sample.clone() };
        assert!(matches!(to_standard_pareto(&bad, ProcessClass::Gaussian), Err(Error::Domain(_))));
    }

    #[test]
    fn pareto_transform_gives_standard_pareto_law() {
        for class in [ProcessClass::Gaussian, ProcessClass::StudentT { nu: 1.0 }] {
            let spec = point_spec(class);
            let raw = draws(&spec, 1_000_000, 21);
            let sample = FieldSample { values: raw, n_sites: 1, n_times: 1_000_000, rng_seed: 21, clamped: 0 };
            let p = to_standard_pareto(&sample, class).unwrap();
            let n = p.values.len() as f64;
            for r in [2.0, 5.0, 10.0] {
                let frac = p.values.iter().filter(|&&v| v <= r).count() as f64 / n;
                assert!((frac - (1.0 - 1.0 / r)).abs() < 0.003, "{class:?} r={r}: {frac}");
            }
        }
    }

    #[test]
    fn kronecker_path_matches_dense_cholesky() {
        let kernel = SeparableKernel {
            spatial: SpatialKernel::cauchy(6.0).unwrap(),
            temporal: TemporalKernel::exponential(1.7).unwrap(),
        };
        let sites = vec![[0.0, 0.0], [4.0, 1.0], [-2.0, 7.0], [5.5, -3.0]];
        let times: Vec<i64> = (0..8).collect();
        let spec = FieldSpec { class: ProcessClass::Gaussian, kernel: FieldKernel::SpaceTime(kernel), sites: sites.clone(), times: times.clone() };
        let mut sampler = FieldSampler::new(&spec).unwrap();
        let full = kernels::build_covariance(&kernel, &sites, &times).unwrap().full();
        let dense = cholesky_jittered(&full, "full").unwrap();
        let mut rng = Stream::root(9).rng();
        for _ in 0..20 {
            let z: Vec<f64> = (0..32).map(|_| rng.sample(StandardNormal)).collect();
            let mut kron = vec![0.0; 32];
            sampler.correlate(&z, &mut kron);
            let direct = &dense * nalgebra::DVector::from_column_slice(&z);
            for k in 0..32 {
                assert!((kron[k] - direct[k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn identical_seed_gives_identical_sample() {
        let spec = FieldSpec {
            class: ProcessClass::StudentT { nu: 1.0 },
            kernel: FieldKernel::SpaceTime(SeparableKernel {
                spatial: SpatialKernel::cauchy(6.0).unwrap(),
                temporal: TemporalKernel::exponential(0.7).unwrap(),
            }),
            sites: vec![[0.0, 0.0], [1.0, 1.0]],
            times: vec![0, 1, 2],
        };
        let a = simulate_student_t(&spec, 42).unwrap();
        let b = simulate_student_t(&spec, 42).unwrap();
        assert_eq!(a, b);
        assert!(simulate_gaussian(&spec, 42).is_err());
    }

    #[test]
    fn near_singular_factor_gets_jitter() {
        // Squared-exponential with a long scale is numerically singular.
        let t = kernels::temporal_matrix(
            &TemporalKernel::new(crate::kernels::TemporalFamily::SquaredExponential, 2.5).unwrap(),
            &(0..92).collect::<Vec<_>>(),
        )
        .unwrap();
        let l = cholesky_jittered(&t, "temporal").unwrap();
        assert_eq!(l.nrows(), 92);
    }

    #[test]
    fn hopeless_factor_is_reported() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = cholesky_jittered(&m, "spatial").unwrap_err();
        assert!(err.to_string().contains("spatial"));
    }

    proptest::proptest! {
        #[test]
        fn pareto_transform_is_strictly_monotone(a in -8.0f64..8.0, b in -8.0f64..8.0) {
            proptest::prop_assume!(a != b);
            for class in [ProcessClass::Gaussian, ProcessClass::StudentT { nu: 1.0 }, ProcessClass::StudentT { nu: 3.0 }] {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                let (x, _) = class.log_pareto(lo);
                let (y, _) = class.log_pareto(hi);
                proptest::prop_assert!(x < y, "{:?}: {} {} -> {} {}", class, lo, hi, x, y);
            }
        }
    }
}
