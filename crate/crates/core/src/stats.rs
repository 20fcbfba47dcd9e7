//! Empirical moments, Monte-Carlo standard errors and 1-D Wasserstein distances.

use serde::Serialize;

use crate::error::{Error, Result};

/// Sample moments.
///
/// `variance` is the unbiased estimate. `skewness` is `m3 / m2^(3/2)` over
/// central moments, `None` when the sample is constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: Option<f64>,
}

pub fn empirical_moments(samples: &[f64]) -> Result<Moments> {
    let n = samples.len();
    if n < 3 {
        return Err(Error::Domain(format!("need at least 3 samples, got {n}")));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let (mut m2, mut m3) = (0.0, 0.0);
    for &x in samples {
        let c = x - mean;
        m2 += c * c;
        m3 += c * c * c;
    }
    let variance = m2 / (nf - 1.0);
    let (m2, m3) = (m2 / nf, m3 / nf);
    let skewness = if m2 > 0.0 { Some(m3 / m2.powf(1.5)) } else { None };
    Ok(Moments { n, mean, variance, skewness })
}

/// Moments together with their Monte-Carlo standard errors.
///
/// Errors come from the empirical influence functions of each estimator,
/// so they stay valid for heavily skewed samples where the Gaussian
/// `sqrt(6/n)` rule for skewness does not.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub se_mean: f64,
    pub se_variance: f64,
    pub se_skewness: f64,
}

pub fn moment_estimate(samples: &[f64]) -> Result<MomentEstimate> {
    let m = empirical_moments(samples)?;
    let skew = m.skewness.ok_or_else(|| Error::Domain("constant sample".into()))?;
    let nf = m.n as f64;
    let (mut m2, mut m3) = (0.0, 0.0);
    for &x in samples {
        let c = x - m.mean;
        m2 += c * c;
        m3 += c * c * c;
    }
    m2 /= nf;
    m3 /= nf;
    let sd = m2.sqrt();
    let (mut if_var, mut if_skew) = (0.0, 0.0);
    for &x in samples {
        let c = x - m.mean;
        let v = c * c - m2;
        if_var += v * v;
        let s = (c * c * c - m3 - 3.0 * m2 * c) / (sd * sd * sd) - 1.5 * skew * v / m2;
        if_skew += s * s;
    }
    Ok(MomentEstimate {
        n: m.n,
        mean: m.mean,
        variance: m.variance,
        skewness: skew,
        se_mean: (m2 / nf).sqrt(),
        se_variance: (if_var / nf / nf).sqrt(),
        se_skewness: (if_skew / nf / nf).sqrt(),
    })
}

/// Two-sample comparison of one moment in units of the combined standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ZScore {
    pub a: f64,
    pub b: f64,
    pub se: f64,
    pub z: f64,
}

impl ZScore {
    pub fn new(a: f64, se_a: f64, b: f64, se_b: f64) -> Self {
        let se = se_a.hypot(se_b);
        let z = if se > 0.0 { (a - b).abs() / se } else if a == b { 0.0 } else { f64::INFINITY };
        Self { a, b, se, z }
    }

    pub fn within(&self, n_se: f64) -> bool {
        self.z <= n_se
    }
}

/// Single sample against a known value.
pub fn z_against(estimate: f64, se: f64, expected: f64) -> ZScore {
    ZScore::new(estimate, se, expected, 0.0)
}

/// W1 between two equally sized empirical samples: mean gap of order statistics.
pub fn wasserstein1_empirical(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Domain("wasserstein1 needs two non-empty samples of equal size".into()));
    }
    let (sa, sb) = (sorted(a), sorted(b));
    Ok(sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// W1 between a sample and a distribution given by its quantile function,
/// `∫ |F_n^{-1}(u) - F^{-1}(u)| du` evaluated at the order-statistic midpoints.
pub fn wasserstein1_to_quantile(samples: &[f64], quantile: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Domain("wasserstein1 needs a non-empty sample".into()));
    }
    let s = sorted(samples);
    let n = s.len() as f64;
    Ok(s.iter()
        .enumerate()
        .map(|(i, x)| (x - quantile((i as f64 + 0.5) / n)).abs())
        .sum::<f64>()
        / n)
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Invert a monotone CDF by bisection on `[lo, hi]`.
pub fn invert_cdf(cdf: impl Fn(f64) -> f64, p: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::sample_gamma;
    use crate::rng::RngStream;

    #[test]
    fn small_sample_moments() {
        let m = empirical_moments(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.variance, 1.0);
        let s = empirical_moments(&[-2.5, 0.0, 2.5]).unwrap();
        assert_eq!(s.skewness, Some(0.0));
    }

    #[test]
    fn degenerate_input() {
        let m = empirical_moments(&[4.0; 10]).unwrap();
        assert_eq!(m.variance, 0.0);
        assert_eq!(m.skewness, None);
        assert!(empirical_moments(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn gamma4_skewness() {
        let x = sample_gamma(&mut RngStream::new(11), 4.0, 1.0, &[1_000_000]).unwrap();
        let s = empirical_moments(x.data()).unwrap().skewness.unwrap();
        assert!((s - 1.0).abs() < 0.03, "skewness {s}");
    }

    #[test]
    fn skewness_standard_error_is_calibrated() {
        // 200 independent batches of Gamma(2,1): spread of the batch skewness
        // should match the average influence-function standard error.
        let mut rng = RngStream::new(12);
        let (mut ests, mut ses) = (Vec::new(), Vec::new());
        for _ in 0..200 {
            let x = sample_gamma(&mut rng, 2.0, 1.0, &[5000]).unwrap();
            let e = moment_estimate(x.data()).unwrap();
            ests.push(e.skewness);
            ses.push(e.se_skewness);
        }
        let spread = empirical_moments(&ests).unwrap().variance.sqrt();
        let se = ses.iter().sum::<f64>() / ses.len() as f64;
        assert!((spread / se - 1.0).abs() < 0.2, "spread {spread} vs se {se}");
    }

    #[test]
    fn wasserstein_shift() {
        let a: Vec<f64> = (0..100).map(f64::from).collect();
        let b: Vec<f64> = a.iter().rev().map(|v| v + 0.5).collect();
        assert!((wasserstein1_empirical(&a, &b).unwrap() - 0.5).abs() < 1e-12);
        let u: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(wasserstein1_to_quantile(&u, |p| p).unwrap() < 1e-12);
    }

    #[test]
    fn cdf_inversion() {
        let q = invert_cdf(normal_cdf, 0.975, -10.0, 10.0);
        assert!((q - 1.959963984540054).abs() < 1e-9);
    }
}
