//! Small statistical helpers shared across modules.

/// Linear interpolation between order statistics (the `type 7` rule):
/// position `q·(n-1)` in the sorted sample.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            if lo == hi || frac == 0.0 {
                sorted[lo]
            } else {
                sorted[lo] + frac * (sorted[hi] - sorted[lo])
            }
        }
    }
}

/// Sorts a copy and returns the linearly interpolated `q` quantile.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

/// Equal-tailed percentile interval at the given level.
pub fn percentile_interval(values: &[f64], level: f64) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    (quantile_sorted(&v, alpha), quantile_sorted(&v, 1.0 - alpha))
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

pub fn iqr(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25)
}

/// Sum with a fixed ordering so the result does not depend on the order the
/// terms were produced in.
pub fn order_independent_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

/// Two-sided Kolmogorov–Smirnov distance between a sample and a CDF.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov distribution survival, `Pr(sqrt(n)·D > t)`.
pub fn kolmogorov_pvalue(d: f64, n: usize) -> f64 {
    let t = d * (n as f64).sqrt();
    if t < 1e-3 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..200 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * t * t).exp();
        p += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

pub fn normal_sf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(z * std::f64::consts::FRAC_1_SQRT_2)
}

pub fn normal_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(p)
}

/// `Pr(Z1 > a, Z2 > a)` for a standard bivariate normal with correlation
/// `rho`, by composite Simpson quadrature of `φ(z)·Φ̄((a-ρz)/√(1-ρ²))` over
/// `z ∈ [a, a+12]`.
pub fn bivariate_normal_joint_sf(a: f64, rho: f64) -> f64 {
    if rho >= 1.0 {
        return normal_sf(a);
    }
    let s = (1.0 - rho * rho).sqrt();
    let f = |z: f64| {
        (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt() * normal_sf((a - rho * z) / s)
    };
    let n = 20_000;
    let h = 12.0 / n as f64;
    let mut acc = f(a) + f(a + 12.0);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type7_quantile_matches_hand_values() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 5.0);
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert!((quantile_sorted(&v, 0.9) - 4.6).abs() < 1e-12);
    }

    #[test]
    fn percentile_interval_is_scale_equivariant() {
        let v: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin() + 2.0).collect();
        let (lo, hi) = percentile_interval(&v, 0.9);
        let scaled: Vec<f64> = v.iter().map(|x| 3.5 * x).collect();
        let (slo, shi) = percentile_interval(&scaled, 0.9);
        assert!((slo - 3.5 * lo).abs() < 1e-12);
        assert!((shi - 3.5 * hi).abs() < 1e-12);
    }

    #[test]
    fn kolmogorov_pvalue_limits() {
        assert!(kolmogorov_pvalue(0.0, 100) > 0.999);
        // Critical value at 5%: 1.358/sqrt(n).
        let p = kolmogorov_pvalue(1.358 / 10.0, 100);
        assert!((p - 0.05).abs() < 0.002, "{p}");
    }

    #[test]
    fn bivariate_quadrature_matches_closed_forms() {
        for rho in [-0.5f64, 0.0, 0.3, 0.5, 0.9] {
            let exact = 0.25 + rho.asin() / (2.0 * std::f64::consts::PI);
            assert!((bivariate_normal_joint_sf(0.0, rho) - exact).abs() < 1e-10, "{rho}");
        }
        let a = 1.2815515655446004;
        assert!((bivariate_normal_joint_sf(a, 0.0) - normal_sf(a).powi(2)).abs() < 1e-12);
        assert!((normal_quantile(0.9) - a).abs() < 1e-9);
    }
}
