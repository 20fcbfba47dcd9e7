//! Noise schedules and the per-step Gaussian and Gamma parameters derived from them.
//!
//! Timesteps are 1-based throughout: `beta(1)` is the first step and
//! `alpha_bar(0)` is defined as 1.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::error::{Error, Result};

/// Per-step `beta_t` with `alpha_t = 1 - beta_t` and `alpha_bar_t = prod alpha_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::Domain("schedule needs at least one step".into()));
        }
        for (i, &b) in beta.iter().enumerate() {
            if !(b > 0.0) {
                return Err(Error::Domain(format!("beta at step {} is {b} (must be > 0)", i + 1)));
            }
            if !(b < 1.0) {
                return Err(Error::ScheduleOverflow { step: i + 1, value: b });
            }
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut acc = 1.0;
        for &a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let last = *alpha_bar.last().unwrap();
        if !(last >= f64::MIN_POSITIVE) {
            return Err(Error::Domain(format!("alpha_bar underflows to {last}")));
        }
        let s = Self { beta, alpha, alpha_bar };
        s.check_invariants()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    /// Diffusion length T.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            return Err(Error::Timestep { t, max: self.len() });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    fn check_invariants(&self) -> Result<()> {
        let mut prev = 1.0;
        for (i, &ab) in self.alpha_bar.iter().enumerate() {
            if !(ab > 0.0 && ab < prev) {
                return Err(Error::Invariant(format!(
                    "alpha_bar not strictly decreasing in (0,1) at step {}",
                    i + 1
                )));
            }
            prev = ab;
        }
        Ok(())
    }

    /// Schedule on a subsampled grid `steps` (strictly increasing, in 1..=T).
    ///
    /// Uses `beta'_s = 1 - alpha_bar(t_s) / alpha_bar(t_{s-1})`, which keeps
    /// the cumulative `alpha_bar` at the selected timesteps.
    pub fn restrict(&self, steps: &[usize]) -> Result<NoiseSchedule> {
        validate_steps(steps, self.len())?;
        let mut prev = 1.0;
        let beta = steps
            .iter()
            .map(|&t| {
                let ab = self.alpha_bar(t);
                let b = 1.0 - ab / prev;
                prev = ab;
                b
            })
            .collect();
        NoiseSchedule::from_betas(beta)
    }

    /// SHA-256 over T and the bit patterns of every beta.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        for b in &self.beta {
            h.update(b.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

pub(crate) fn validate_steps(steps: &[usize], t_max: usize) -> Result<()> {
    if steps.is_empty() {
        return Err(Error::Domain("empty timestep grid".into()));
    }
    if steps[0] == 0 || steps.windows(2).any(|w| w[1] <= w[0]) || *steps.last().unwrap() > t_max {
        return Err(Error::Domain(format!("timestep grid must be strictly increasing within 1..={t_max}")));
    }
    Ok(())
}

/// Linear betas from `beta_start` (t = 1) to `beta_end` (t = T).
pub fn linear_schedule(t_len: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if t_len == 0 {
        return Err(Error::Domain("T must be at least 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Domain(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let beta = if t_len == 1 {
        vec![beta_start]
    } else {
        let span = beta_end - beta_start;
        let denom = (t_len - 1) as f64;
        (0..t_len).map(|i| beta_start + span * (i as f64) / denom).collect()
    };
    NoiseSchedule::from_betas(beta)
}

/// `beta_t = beta_{t-1} + beta_{t-2}` seeded with `beta1`, `beta2`.
pub fn fibonacci_schedule(n: usize, beta1: f64, beta2: f64) -> Result<NoiseSchedule> {
    if n < 2 {
        return Err(Error::Domain(format!("fibonacci schedule needs n >= 2, got {n}")));
    }
    if !(beta1 > 0.0 && beta1 <= beta2) {
        return Err(Error::Domain(format!("need 0 < beta1 <= beta2, got {beta1}, {beta2}")));
    }
    let mut beta = vec![beta1, beta2];
    while beta.len() < n {
        let k = beta.len();
        beta.push(beta[k - 1] + beta[k - 2]);
    }
    if let Some(i) = beta.iter().position(|&b| b >= 1.0) {
        return Err(Error::ScheduleOverflow { step: i + 1, value: beta[i] });
    }
    NoiseSchedule::from_betas(beta)
}

/// Default Fibonacci seed for both `beta1` and `beta2`.
pub const FIBONACCI_SEED: f64 = 1e-6;

/// Reference training schedule endpoints at T = 1000.
pub const LINEAR_BETA_START: f64 = 1e-4;
pub const LINEAR_BETA_END: f64 = 0.02;
pub const REFERENCE_T: usize = 1000;

/// The reference linear schedule with its endpoints rescaled by `1000 / T`,
/// so `alpha_bar_T` stays near 4e-5 for any length. Identical to
/// `linear_schedule(1000, 1e-4, 0.02)` at T = 1000.
pub fn scaled_linear_schedule(t_len: usize) -> Result<NoiseSchedule> {
    let s = REFERENCE_T as f64 / t_len as f64;
    let end = (LINEAR_BETA_END * s).min(0.999);
    linear_schedule(t_len, (LINEAR_BETA_START * s).min(end), end)
}

/// How a training or sampling run obtains its schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScheduleSpec {
    Linear { beta_start: f64, beta_end: f64 },
    /// [`scaled_linear_schedule`].
    ScaledLinear,
    Fibonacci { beta1: f64, beta2: f64 },
    /// A [`ScheduleFile`] on disk; its length must equal T.
    File { path: std::path::PathBuf },
}

impl ScheduleSpec {
    pub fn build(&self, t_len: usize) -> Result<NoiseSchedule> {
        let sched = match self {
            ScheduleSpec::Linear { beta_start, beta_end } => linear_schedule(t_len, *beta_start, *beta_end)?,
            ScheduleSpec::ScaledLinear => scaled_linear_schedule(t_len)?,
            ScheduleSpec::Fibonacci { beta1, beta2 } => fibonacci_schedule(t_len, *beta1, *beta2)?,
            ScheduleSpec::File { path } => ScheduleFile::load(path)?.to_schedule()?.0,
        };
        if sched.len() != t_len {
            return Err(Error::Config(format!("schedule has {} steps, expected T = {t_len}", sched.len())));
        }
        Ok(sched)
    }
}

/// Gamma noise parameters: `theta_t = sqrt(alpha_bar_t) * theta0`,
/// `k_t = beta_t / (alpha_bar_t * theta0^2)`, `k_bar_t = sum_{i<=t} k_i`.
///
/// With these, scaling a `Gamma(k_bar_t, theta_t)` draw by `sqrt(alpha_{t+1})`
/// yields scale `theta_{t+1}`, so the stepwise chain sums at a shared scale and
/// `k_t theta_t^2 = beta_t`, `k_bar_t theta_t^2 = 1 - alpha_bar_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaParams {
    theta0: f64,
    theta: Vec<f64>,
    k: Vec<f64>,
    k_bar: Vec<f64>,
}

impl GammaParams {
    pub fn new(sched: &NoiseSchedule, theta0: f64) -> Result<Self> {
        if !(theta0 > 0.0 && theta0.is_finite()) {
            return Err(Error::Domain(format!("theta0 must be positive, got {theta0}")));
        }
        let t2 = theta0 * theta0;
        let theta: Vec<f64> = sched.alpha_bars().iter().map(|ab| ab.sqrt() * theta0).collect();
        let k: Vec<f64> =
            sched.betas().iter().zip(sched.alpha_bars()).map(|(b, ab)| b / (ab * t2)).collect();
        let mut k_bar = Vec::with_capacity(k.len());
        let mut acc = 0.0;
        for &ki in &k {
            acc += ki;
            k_bar.push(acc);
        }
        let p = Self { theta0, theta, k, k_bar };
        if !p.k_bar.iter().chain(&p.theta).all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::Domain(format!("gamma parameters overflow for theta0 = {theta0}")));
        }
        Ok(p)
    }

    pub fn theta0(&self) -> f64 {
        self.theta0
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    pub fn theta(&self, t: usize) -> f64 {
        self.theta[t - 1]
    }

    pub fn k(&self, t: usize) -> f64 {
        self.k[t - 1]
    }

    pub fn k_bar(&self, t: usize) -> f64 {
        self.k_bar[t - 1]
    }

    pub fn thetas(&self) -> &[f64] {
        &self.theta
    }

    pub fn ks(&self) -> &[f64] {
        &self.k
    }

    pub fn k_bars(&self) -> &[f64] {
        &self.k_bar
    }

    /// Mean of the cumulative noise, `k_bar_t * theta_t`.
    pub fn cumulative_mean(&self, t: usize) -> f64 {
        self.k_bar(t) * self.theta(t)
    }

    /// Replace `k_bar` with a perturbed copy. Only for negative controls.
    pub fn with_k_bar_scaled(&self, factor: f64) -> Self {
        let mut p = self.clone();
        p.k_bar.iter_mut().for_each(|v| *v *= factor);
        p
    }

    /// Largest relative errors of `k_t theta_t^2 = beta_t` and
    /// `k_bar_t theta_t^2 = 1 - alpha_bar_t` over all steps.
    pub fn identity_errors(&self, sched: &NoiseSchedule) -> IdentityErrors {
        let mut e = IdentityErrors::default();
        for t in 1..=self.len() {
            let th2 = self.theta(t).powi(2);
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
            e.step_variance = e.step_variance.max(rel(self.k(t) * th2, sched.beta(t)));
            e.cumulative_variance =
                e.cumulative_variance.max(rel(self.k_bar(t) * th2, 1.0 - sched.alpha_bar(t)));
        }
        e
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IdentityErrors {
    pub step_variance: f64,
    pub cumulative_variance: f64,
}

impl IdentityErrors {
    pub fn max(&self) -> f64 {
        self.step_variance.max(self.cumulative_variance)
    }
}

pub fn gamma_params(sched: &NoiseSchedule, theta0: f64) -> Result<GammaParams> {
    GammaParams::new(sched, theta0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsampleStrategy {
    Uniform,
    Quadratic,
}

/// `n` strictly increasing timesteps in `1..=T` ending at `T`.
pub fn subsample_timesteps(t_len: usize, n: usize, strategy: SubsampleStrategy) -> Result<Vec<usize>> {
    if n == 0 || n > t_len {
        return Err(Error::Domain(format!("need 1 <= n <= T, got n = {n}, T = {t_len}")));
    }
    let steps = match strategy {
        SubsampleStrategy::Uniform => (1..=n).map(|i| i * t_len / n).collect(),
        SubsampleStrategy::Quadratic => {
            let mut out: Vec<usize> = Vec::with_capacity(n);
            for i in 1..=n {
                let frac = i as f64 / n as f64;
                let raw = (t_len as f64 * frac * frac).ceil() as usize;
                let raw = raw.clamp(i, t_len - (n - i));
                let s = match out.last() {
                    Some(&p) => raw.max(p + 1),
                    None => raw,
                };
                out.push(s);
            }
            out
        }
    };
    Ok(steps)
}

/// On-disk schedule: `{"T": .., "beta": [..], "theta0": ..}`.
///
/// Optional derived arrays are recomputed on load and must match exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScheduleFile {
    #[serde(rename = "T")]
    pub t: usize,
    pub beta: Vec<f64>,
    #[serde(default)]
    pub theta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_bar: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<GammaDump>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checks: Option<IdentityErrors>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GammaDump {
    pub theta: Vec<f64>,
    pub k: Vec<f64>,
    pub k_bar: Vec<f64>,
}

impl ScheduleFile {
    /// Minimal form: T, beta and theta0 only.
    pub fn minimal(sched: &NoiseSchedule, theta0: Option<f64>) -> Self {
        Self {
            t: sched.len(),
            beta: sched.betas().to_vec(),
            theta0,
            alpha: None,
            alpha_bar: None,
            gamma: None,
            checks: None,
        }
    }

    /// Full dump including every derived array and the identity check.
    pub fn full(sched: &NoiseSchedule, theta0: Option<f64>) -> Result<Self> {
        let mut f = Self::minimal(sched, theta0);
        f.alpha = Some(sched.alphas().to_vec());
        f.alpha_bar = Some(sched.alpha_bars().to_vec());
        if let Some(th0) = theta0 {
            let p = GammaParams::new(sched, th0)?;
            f.checks = Some(p.identity_errors(sched));
            f.gamma = Some(GammaDump {
                theta: p.thetas().to_vec(),
                k: p.ks().to_vec(),
                k_bar: p.k_bars().to_vec(),
            });
        }
        Ok(f)
    }

    pub fn to_schedule(&self) -> Result<(NoiseSchedule, Option<GammaParams>)> {
        if self.t != self.beta.len() {
            return Err(Error::Invariant(format!(
                "T = {} but {} betas were given",
                self.t,
                self.beta.len()
            )));
        }
        let sched = NoiseSchedule::from_betas(self.beta.clone())?;
        let exact = |name: &str, got: &Option<Vec<f64>>, want: &[f64]| -> Result<()> {
            match got {
                Some(v) if v.as_slice() != want => {
                    Err(Error::Invariant(format!("stored {name} disagrees with recomputed values")))
                }
                _ => Ok(()),
            }
        };
        exact("alpha", &self.alpha, sched.alphas())?;
        exact("alpha_bar", &self.alpha_bar, sched.alpha_bars())?;
        let params = match self.theta0 {
            Some(th0) => {
                let p = GammaParams::new(&sched, th0)?;
                if let Some(g) = &self.gamma {
                    exact("theta", &Some(g.theta.clone()), p.thetas())?;
                    exact("k", &Some(g.k.clone()), p.ks())?;
                    exact("k_bar", &Some(g.k_bar.clone()), p.k_bars())?;
                }
                Some(p)
            }
            None => None,
        };
        Ok((sched, params))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_schedule_fixture() -> NoiseSchedule {
        linear_schedule(1000, 1e-4, 0.02).unwrap()
    }

    #[test]
    fn linear_endpoints() {
        let s = reference_schedule_fixture();
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.beta(1000) - 0.02).abs() < 1e-17);
        let one = linear_schedule(1, 0.1, 0.1).unwrap();
        assert_eq!(one.betas(), &[0.1]);
        assert!((one.alpha_bar(1) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn alpha_bar_matches_log_space_product() {
        let s = reference_schedule_fixture();
        let dumped = serde_json::to_string(&ScheduleFile::minimal(&s, None)).unwrap();
        let back: ScheduleFile = serde_json::from_str(&dumped).unwrap();
        let log_sum: f64 = back.beta.iter().map(|b| (-b).ln_1p()).sum();
        assert!((s.alpha_bar(1000) - log_sum.exp()).abs() < 1e-12);
    }

    #[test]
    fn linear_rejects_bad_bounds() {
        assert!(linear_schedule(10, 0.0, 0.1).is_err());
        assert!(linear_schedule(10, 0.2, 0.1).is_err());
        assert!(linear_schedule(10, 0.1, 1.0).is_err());
        assert!(linear_schedule(0, 0.1, 0.2).is_err());
    }

    #[test]
    fn fibonacci_values() {
        let s = fibonacci_schedule(6, 1e-6, 1e-6).unwrap();
        let want = [1.0, 1.0, 2.0, 3.0, 5.0, 8.0];
        for (b, w) in s.betas().iter().zip(want) {
            assert!((b - w * 1e-6).abs() < 1e-20);
        }
        let two = fibonacci_schedule(2, 0.3, 0.3).unwrap();
        assert_eq!(two.betas(), &[0.3, 0.3]);
        let f25 = fibonacci_schedule(25, 1e-6, 1e-6).unwrap();
        assert!((f25.beta(25) - 75025e-6).abs() < 1e-15);
    }

    #[test]
    fn fibonacci_overflow_names_step() {
        match fibonacci_schedule(40, 1e-6, 1e-6) {
            Err(Error::ScheduleOverflow { step, value }) => {
                assert_eq!(step, 31);
                assert!(value >= 1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gamma_params_first_step_and_identities() {
        let s = reference_schedule_fixture();
        let p = gamma_params(&s, 0.001).unwrap();
        assert!((p.k(1) * p.theta(1).powi(2) - s.beta(1)).abs() / s.beta(1) < 1e-12);
        let expected_k1 = 0.0001 / (0.9999 * 1e-6);
        assert!((p.k(1) - expected_k1).abs() / expected_k1 < 1e-12);
        assert!((p.k(1) - 100.01).abs() < 1e-3);
        // Independent summation oracle: k_bar_t theta_t^2 against 1 - alpha_bar_t,
        // summing k_i from scratch in log space.
        for t in [1, 2, 10, 100, 500, 1000] {
            let ab: f64 = s.betas()[..t].iter().map(|b| (-b).ln_1p()).sum::<f64>().exp();
            let mut kb = 0.0;
            let mut log_ab = 0.0;
            for b in &s.betas()[..t] {
                log_ab += (-b).ln_1p();
                kb += b / (log_ab.exp() * 1e-6);
            }
            let lhs = kb * ab * 1e-6;
            assert!((lhs - (1.0 - ab)).abs() / (1.0 - ab) < 1e-9, "t = {t}");
            assert!((p.k_bar(t) - kb).abs() / kb < 1e-9);
        }
        let e = p.identity_errors(&s);
        assert!(e.max() < 1e-9, "{e:?}");
        assert!(p.k_bars().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn subsample_uniform() {
        let s = subsample_timesteps(10, 10, SubsampleStrategy::Uniform).unwrap();
        assert_eq!(s, (1..=10).collect::<Vec<_>>());
        let s = subsample_timesteps(1000, 10, SubsampleStrategy::Uniform).unwrap();
        assert!(s.windows(2).all(|w| w[1] - w[0] == 100));
        assert_eq!(*s.last().unwrap(), 1000);
        assert!(subsample_timesteps(5, 6, SubsampleStrategy::Uniform).is_err());
    }

    #[test]
    fn subsample_quadratic() {
        // Enumerated by formula: ceil(100 * (i/4)^2) for i = 1..4.
        let s = subsample_timesteps(100, 4, SubsampleStrategy::Quadratic).unwrap();
        assert_eq!(s, vec![7, 25, 57, 100]);
        let d: Vec<usize> = s.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(d.windows(2).all(|w| w[1] > w[0]));
        let full = subsample_timesteps(10, 10, SubsampleStrategy::Quadratic).unwrap();
        assert_eq!(full, (1..=10).collect::<Vec<_>>());
    }

    #[test]
    fn restrict_preserves_alpha_bar() {
        let s = reference_schedule_fixture();
        let steps = subsample_timesteps(1000, 10, SubsampleStrategy::Uniform).unwrap();
        let r = s.restrict(&steps).unwrap();
        for (i, &t) in steps.iter().enumerate() {
            assert!((r.alpha_bar(i + 1) - s.alpha_bar(t)).abs() / s.alpha_bar(t) < 1e-12);
        }
    }

    #[test]
    fn file_round_trip_and_tamper_detection() {
        let s = reference_schedule_fixture();
        let f = ScheduleFile::full(&s, Some(0.001)).unwrap();
        let text = serde_json::to_string(&f).unwrap();
        let back: ScheduleFile = serde_json::from_str(&text).unwrap();
        let (s2, p2) = back.to_schedule().unwrap();
        assert_eq!(s2, s);
        assert_eq!(p2.unwrap(), gamma_params(&s, 0.001).unwrap());
        let mut bad = back.clone();
        bad.alpha_bar.as_mut().unwrap()[3] *= 1.0 + 1e-15;
        assert!(matches!(bad.to_schedule(), Err(Error::Invariant(_))));
        let mut bad = back;
        bad.t = 999;
        assert!(bad.to_schedule().is_err());
    }

    #[test]
    fn hash_changes_with_betas() {
        let a = linear_schedule(10, 1e-3, 1e-2).unwrap();
        let b = linear_schedule(10, 1e-3, 1.1e-2).unwrap();
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
