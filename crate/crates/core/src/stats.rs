//! Statistical helpers: goodness-of-fit tests, interval estimates and
//! resampling error bars.

use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

#[derive(Clone, Copy, Debug)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
}

/// Kolmogorov survival function `Q(λ) = 2 Σ (-1)^{k-1} exp(-2 k² λ²)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = sign * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> TestOutcome {
    let mut xs: Vec<f64> = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let c = cdf(x);
        d = d.max((i as f64 + 1.0) / n - c).max(c - i as f64 / n);
    }
    let sn = n.sqrt();
    TestOutcome {
        statistic: d,
        p_value: kolmogorov_q((sn + 0.12 + 0.11 / sn) * d),
    }
}

/// Pearson chi-square goodness of fit. Bins with zero expectation are skipped.
pub fn chi_square_gof(observed: &[u64], expected_prob: &[f64]) -> TestOutcome {
    assert_eq!(observed.len(), expected_prob.len());
    let n: u64 = observed.iter().sum();
    let mut stat = 0.0;
    let mut bins = 0usize;
    for (&o, &p) in observed.iter().zip(expected_prob) {
        if p <= 0.0 {
            continue;
        }
        let e = p * n as f64;
        stat += (o as f64 - e).powi(2) / e;
        bins += 1;
    }
    let dof = (bins.max(2) - 1) as f64;
    let dist = ChiSquared::new(dof).expect("positive degrees of freedom");
    TestOutcome {
        statistic: stat,
        p_value: dist.sf(stat),
    }
}

/// Wilson score interval for a binomial proportion at normal quantile `z`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean and its standard error from the sample variance.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let m = mean(xs);
    if n < 2 {
        return (m, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

/// Delete-a-group jackknife standard error of the mean with `groups`
/// contiguous blocks.
pub fn jackknife_mean_se(xs: &[f64], groups: usize) -> f64 {
    let n = xs.len();
    let g = groups.min(n).max(2);
    if n < 2 {
        return f64::INFINITY;
    }
    let total: f64 = xs.iter().sum();
    let mut estimates = Vec::with_capacity(g);
    for k in 0..g {
        let lo = k * n / g;
        let hi = (k + 1) * n / g;
        let block: f64 = xs[lo..hi].iter().sum();
        estimates.push((total - block) / (n - (hi - lo)) as f64);
    }
    let m = mean(&estimates);
    let gf = g as f64;
    ((gf - 1.0) / gf * estimates.iter().map(|e| (e - m).powi(2)).sum::<f64>()).sqrt()
}

/// Linear percentile of an ascending slice.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    percentile(&v, 0.5)
}

#[derive(Clone, Copy, Debug)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    /// Two-sided 95 % confidence interval for the slope.
    pub slope_ci: (f64, f64),
}

/// Ordinary least squares `y = a + b x`.
pub fn linear_regression(x: &[f64], y: &[f64]) -> Regression {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    assert!(n >= 3, "need at least three points");
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|xi| (xi - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(xi, yi)| (xi - mx) * (yi - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (yi - intercept - slope * xi).powi(2))
        .sum();
    let dof = (n - 2) as f64;
    let slope_se = (rss / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .expect("valid t distribution")
        .inverse_cdf(0.975);
    Regression {
        slope,
        intercept,
        slope_se,
        slope_ci: (slope - t * slope_se, slope + t * slope_se),
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_regression(&lx, &ly).slope
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kolmogorov_tail_values() {
        // Q(1.36) ≈ 0.049 is the classical 5 % critical point
        assert!((kolmogorov_q(1.36) - 0.0494).abs() < 1e-3);
        assert_eq!(kolmogorov_q(0.0), 1.0);
    }

    #[test]
    fn wilson_contains_point_estimate() {
        let (lo, hi) = wilson_interval(30, 100, 1.96);
        assert!(lo < 0.3 && 0.3 < hi);
        assert!((lo - 0.2189).abs() < 1e-3 && (hi - 0.3958).abs() < 1e-3);
    }

    #[test]
    fn jackknife_matches_classical_se_for_means() {
        let xs: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64).collect();
        let (_, se) = mean_and_se(&xs);
        let jk = jackknife_mean_se(&xs, 200);
        assert!((se - jk).abs() / se < 1e-9);
    }

    #[test]
    fn regression_recovers_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let r = linear_regression(&x, &y);
        assert!((r.slope - 2.0).abs() < 1e-12 && (r.intercept - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chi_square_perfect_fit_has_p_one() {
        let t = chi_square_gof(&[25, 25, 25, 25], &[0.25; 4]);
        assert_eq!(t.statistic, 0.0);
        assert!((t.p_value - 1.0).abs() < 1e-12);
    }
}
