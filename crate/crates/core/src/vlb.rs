//! Reverse-process log-density ratios of the Gamma model and their L1 bounds.
//!
//! Everything here is scalar; tensors are handled by mapping elementwise.
//! With `X_bar_t = x_t - sqrt(alpha_bar_t) x0 + k_bar_t theta_t` and its hatted
//! twin built from `x0_hat`, the log-ratio
//! `log q(x_{t-1} | x0, x_t) - log q(x_{t-1} | x0_hat, x_t)` is evaluated two
//! ways: from full Gamma log-densities ([`reverse_log_ratio_direct`]) and from
//! the four-term difference form ([`reverse_log_ratio_decomposed`]).

use serde::Serialize;

use crate::diffusion::{forward_jump_gamma, predict_x0};
use crate::distributions::Gamma;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::schedule::{GammaParams, NoiseSchedule};
use crate::tensor::Tensor;
use crate::training::gamma_target;

/// `(k - 1) ln x - x / theta - ln Gamma(k) - k ln theta`.
pub fn log_gamma_density(x: f64, k: f64, theta: f64) -> Result<f64> {
    Ok(density_parts(x, k, theta, "x")?.iter().sum())
}

fn density_parts(x: f64, k: f64, theta: f64, term: &'static str) -> Result<[f64; 4]> {
    if !(k > 0.0 && theta > 0.0) {
        return Err(Error::Domain(format!("gamma density needs k > 0 and theta > 0, got {k}, {theta}")));
    }
    if !(x > 0.0) {
        return Err(Error::Support { term, value: x });
    }
    Ok([(k - 1.0) * x.ln(), -x / theta, -libm::lgamma(k), -k * theta.ln()])
}

/// One reverse transition `x_t -> x_{t-1}` with the true and predicted clean sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Transition {
    pub x_tm1: f64,
    pub x_t: f64,
    pub x0: f64,
    pub x0_hat: f64,
    /// At least 2, so that step `t - 1` has Gamma parameters.
    pub t: usize,
}

/// Shifted Gamma arguments of one transition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReverseTerms {
    /// `x_t - sqrt(1 - beta_t) x_{t-1} + k_t theta_t`.
    pub x_t: f64,
    pub x_bar_t: f64,
    pub x_bar_tm1: f64,
    pub x_hat_t: f64,
    pub x_hat_tm1: f64,
}

impl ReverseTerms {
    pub fn new(tr: &Transition, params: &GammaParams, sched: &NoiseSchedule) -> Result<Self> {
        let t = tr.t;
        sched.check_t(t)?;
        if t < 2 {
            return Err(Error::Timestep { t, max: sched.len() });
        }
        let (s_t, s_tm1) = (sched.alpha_bar(t).sqrt(), sched.alpha_bar(t - 1).sqrt());
        let (m_t, m_tm1) = (params.cumulative_mean(t), params.cumulative_mean(t - 1));
        Ok(Self {
            x_t: tr.x_t - sched.alpha(t).sqrt() * tr.x_tm1 + params.k(t) * params.theta(t),
            x_bar_t: tr.x_t - s_t * tr.x0 + m_t,
            x_bar_tm1: tr.x_tm1 - s_tm1 * tr.x0 + m_tm1,
            x_hat_t: tr.x_t - s_t * tr.x0_hat + m_t,
            x_hat_tm1: tr.x_tm1 - s_tm1 * tr.x0_hat + m_tm1,
        })
    }

    /// First non-positive argument, if any.
    pub fn check_support(&self) -> Result<()> {
        let named = [
            ("X_t", self.x_t),
            ("X_bar_t", self.x_bar_t),
            ("X_bar_tm1", self.x_bar_tm1),
            ("X_hat_t", self.x_hat_t),
            ("X_hat_tm1", self.x_hat_tm1),
        ];
        match named.iter().find(|(_, v)| !(*v > 0.0)) {
            Some(&(term, value)) => Err(Error::Support { term, value }),
            None => Ok(()),
        }
    }
}

/// Direct log-ratio and the largest magnitude among the density components
/// it summed, which sets its floating-point resolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DirectRatio {
    pub value: f64,
    pub scale: f64,
}

/// `log q(x_{t-1} | x0, x_t) - log q(x_{t-1} | x0_hat, x_t)` where
/// `log q = log p(X_t; k_t, theta_t) + log p(X_bar_{t-1}; k_bar_{t-1}, theta_{t-1}) - log p(X_bar_t; k_bar_t, theta_t)`
/// with every density evaluated in full.
pub fn reverse_log_ratio_direct_scaled(tr: &Transition, params: &GammaParams, sched: &NoiseSchedule) -> Result<DirectRatio> {
    let r = ReverseTerms::new(tr, params, sched)?;
    let t = tr.t;
    let (k, th) = (params.k(t), params.theta(t));
    let (kb, thb) = (params.k_bar(t), params.theta(t));
    let (kb1, th1) = (params.k_bar(t - 1), params.theta(t - 1));
    let step = density_parts(r.x_t, k, th, "X_t")?;
    let true_tm1 = density_parts(r.x_bar_tm1, kb1, th1, "X_bar_tm1")?;
    let true_t = density_parts(r.x_bar_t, kb, thb, "X_bar_t")?;
    let hat_tm1 = density_parts(r.x_hat_tm1, kb1, th1, "X_hat_tm1")?;
    let hat_t = density_parts(r.x_hat_t, kb, thb, "X_hat_t")?;
    let sum = |p: &[f64; 4]| p.iter().sum::<f64>();
    let lq_true = sum(&step) + sum(&true_tm1) - sum(&true_t);
    let lq_hat = sum(&step) + sum(&hat_tm1) - sum(&hat_t);
    let scale = [step, true_tm1, true_t, hat_tm1, hat_t]
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(DirectRatio { value: lq_true - lq_hat, scale })
}

pub fn reverse_log_ratio_direct(tr: &Transition, params: &GammaParams, sched: &NoiseSchedule) -> Result<f64> {
    Ok(reverse_log_ratio_direct_scaled(tr, params, sched)?.value)
}

/// `(k_bar_{t-1} - 1) log(X_bar_{t-1} / X_hat_{t-1}) - (X_bar_{t-1} - X_hat_{t-1}) / theta_{t-1}
///  - (k_bar_t - 1) log(X_bar_t / X_hat_t) + (X_bar_t - X_hat_t) / theta_t`.
///
/// The differences `X_bar - X_hat = -sqrt(alpha_bar) (x0 - x0_hat)` are formed
/// analytically and the logs through `ln_1p`.
pub fn reverse_log_ratio_decomposed(tr: &Transition, params: &GammaParams, sched: &NoiseSchedule) -> Result<f64> {
    let r = ReverseTerms::new(tr, params, sched)?;
    r.check_support()?;
    let t = tr.t;
    let dx = tr.x0 - tr.x0_hat;
    let d_t = -sched.alpha_bar(t).sqrt() * dx;
    let d_tm1 = -sched.alpha_bar(t - 1).sqrt() * dx;
    Ok((params.k_bar(t - 1) - 1.0) * (d_tm1 / r.x_hat_tm1).ln_1p() - d_tm1 / params.theta(t - 1)
        - (params.k_bar(t) - 1.0) * (d_t / r.x_hat_t).ln_1p()
        + d_t / params.theta(t))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundConstants {
    /// `sqrt(alpha_bar_{t-1}) / theta_{t-1}`.
    pub c1: f64,
    /// `sqrt(alpha_bar_t) / theta_t`.
    pub c2: f64,
    /// `sqrt(alpha_bar_t) g_bar_t / X_hat_t`.
    pub c3: f64,
    /// `sqrt(alpha_bar_{t-1}) g_bar_{t-1} / X_hat_{t-1}`.
    pub c4: f64,
    /// Realized `g_bar_t = X_bar_t`.
    pub g_bar_t: f64,
    /// Realized `g_bar_{t-1} = X_bar_{t-1}`.
    pub g_bar_tm1: f64,
}

impl BoundConstants {
    /// `C1 + C2 + C3 / g_bar_t + C4 / g_bar_{t-1}`.
    pub fn total(&self) -> f64 {
        self.c1 + self.c2 + self.c3 / self.g_bar_t + self.c4 / self.g_bar_tm1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundedTerm {
    pub value: f64,
    pub bound: f64,
    /// Rounding error attainable in `value` given the magnitudes it was formed from.
    pub resolution: f64,
}

impl BoundedTerm {
    // `mag` bounds the magnitudes summed to form `x_bar` and `x_hat`
    fn linear(x_bar: f64, x_hat: f64, mag: f64, theta: f64, bound: f64) -> Self {
        Self { value: ((x_bar - x_hat) / theta).abs(), bound, resolution: 8.0 * f64::EPSILON * mag / theta }
    }

    fn log(x_bar: f64, x_hat: f64, mag: f64, bound: f64) -> Self {
        Self {
            value: (x_bar / x_hat).ln(),
            bound,
            resolution: 8.0 * f64::EPSILON * (1.0 + mag / x_bar + mag / x_hat),
        }
    }

    /// `value <= bound` up to the rounding resolution.
    pub fn holds(&self) -> bool {
        self.value <= self.bound + self.resolution
    }
}

/// The four terms of the decomposed ratio next to their L1 bounds.
///
/// Linear terms are reported as `|Delta X / theta|`, log terms as the signed
/// `log(X_bar / X_hat)`; the `(k_bar - 1)` factor in front of the log terms is
/// not part of the bounded quantity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundTerms {
    pub constants: BoundConstants,
    pub linear_tm1: BoundedTerm,
    pub linear_t: BoundedTerm,
    pub log_t: BoundedTerm,
    pub log_tm1: BoundedTerm,
}

impl BoundTerms {
    pub fn all_hold(&self) -> bool {
        [self.linear_tm1, self.linear_t, self.log_t, self.log_tm1].iter().all(BoundedTerm::holds)
    }
}

pub fn bound_terms(tr: &Transition, params: &GammaParams, sched: &NoiseSchedule) -> Result<BoundTerms> {
    let r = ReverseTerms::new(tr, params, sched)?;
    r.check_support()?;
    let t = tr.t;
    let (s_t, s_tm1) = (sched.alpha_bar(t).sqrt(), sched.alpha_bar(t - 1).sqrt());
    let (th_t, th_tm1) = (params.theta(t), params.theta(t - 1));
    let dx = (tr.x0 - tr.x0_hat).abs();
    let x0_mag = tr.x0.abs().max(tr.x0_hat.abs());
    let mag_t = tr.x_t.abs() + s_t * x0_mag + params.cumulative_mean(t);
    let mag_tm1 = tr.x_tm1.abs() + s_tm1 * x0_mag + params.cumulative_mean(t - 1);
    let constants = BoundConstants {
        c1: s_tm1 / th_tm1,
        c2: s_t / th_t,
        c3: s_t * r.x_bar_t / r.x_hat_t,
        c4: s_tm1 * r.x_bar_tm1 / r.x_hat_tm1,
        g_bar_t: r.x_bar_t,
        g_bar_tm1: r.x_bar_tm1,
    };
    Ok(BoundTerms {
        constants,
        linear_tm1: BoundedTerm::linear(r.x_bar_tm1, r.x_hat_tm1, mag_tm1, th_tm1, constants.c1 * dx),
        linear_t: BoundedTerm::linear(r.x_bar_t, r.x_hat_t, mag_t, th_t, constants.c2 * dx),
        log_t: BoundedTerm::log(r.x_bar_t, r.x_hat_t, mag_t, constants.c3 / constants.g_bar_t * dx),
        log_tm1: BoundedTerm::log(r.x_bar_tm1, r.x_hat_tm1, mag_tm1, constants.c4 / constants.g_bar_tm1 * dx),
    })
}

/// `(C1 + C2 + C3 / g_bar_t + C4 / g_bar_{t-1}) |x0 - x0_hat|`.
pub fn l_upper_bound(x0: f64, x0_hat: f64, constants: &BoundConstants) -> f64 {
    constants.total() * (x0 - x0_hat).abs()
}

/// Max over elements of `| |x0 - x0_hat| - sqrt(1 - alpha_bar_t) / sqrt(alpha_bar_t) |target - eps_hat| |`
/// with `x_t` from the closed-form Gamma jump, `x0_hat` from [`predict_x0`] and
/// `target` the standardized Gamma noise.
pub fn lemma2_identity_residual(
    x0: &Tensor,
    g_bar: &Tensor,
    eps_hat: &Tensor,
    t: usize,
    params: &GammaParams,
    sched: &NoiseSchedule,
) -> Result<f64> {
    x0.ensure_same_shape(g_bar)?;
    x0.ensure_same_shape(eps_hat)?;
    let x_t = forward_jump_gamma(x0, t, params, sched, g_bar)?;
    let x0_hat = predict_x0(&x_t, t, eps_hat, sched)?;
    let target = gamma_target(g_bar, t, params, sched)?;
    let ab = sched.alpha_bar(t);
    let c = (1.0 - ab).sqrt() / ab.sqrt();
    let mut worst = 0.0f64;
    for i in 0..x0.len() {
        let lhs = (x0.data()[i] - x0_hat.data()[i]).abs();
        let rhs = c * (target.data()[i] - eps_hat.data()[i]).abs();
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// Per-t statistics of the bound sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepStats {
    pub t: usize,
    pub theta0: f64,
    pub requested: usize,
    pub evaluated: usize,
    pub excluded: usize,
    pub exclusion_rate: f64,
    /// Largest `|direct - decomposed|`.
    pub max_abs_discrepancy: f64,
    /// Largest `|direct - decomposed| / max(1, scale)`.
    pub max_scaled_discrepancy: f64,
    /// Configurations where the decomposed ratio exceeds the L1 bound.
    pub bound_violations: usize,
    /// Configurations where some single term exceeds its own bound.
    pub term_violations: usize,
    pub max_lemma2_residual: f64,
}

/// Tolerance on the scaled direct/decomposed discrepancy.
pub const DECOMPOSITION_TOL: f64 = 1e-8;
/// Relative rounding allowance when comparing the decomposed ratio with its bound.
pub const BOUND_TOL: f64 = 1e-12;

/// Draws one transition from the Gamma forward process and a perturbed
/// prediction: `x0 ~ N(0, 1)`, `x_{t-1}` from the closed-form jump, `x_t` from
/// one forward step, and `eps_hat = target + u z` with `u ~ U(0, 1)`, `z ~ N(0, 1)`.
pub fn random_transition(t: usize, params: &GammaParams, sched: &NoiseSchedule, rng: &mut RngStream) -> Result<Transition> {
    sched.check_t(t)?;
    if t < 2 {
        return Err(Error::Timestep { t, max: sched.len() });
    }
    let x0 = rng.standard_normal();
    let g_tm1 = Gamma::new(params.k_bar(t - 1), params.theta(t - 1))?.sample(rng);
    let x_tm1 = sched.alpha_bar(t - 1).sqrt() * x0 + g_tm1 - params.cumulative_mean(t - 1);
    let g_t = Gamma::new(params.k(t), params.theta(t))?.sample(rng);
    let x_t = sched.alpha(t).sqrt() * x_tm1 + g_t - params.k(t) * params.theta(t);
    let ab = sched.alpha_bar(t);
    let target = (x_t - ab.sqrt() * x0) / (1.0 - ab).sqrt();
    let eps_hat = target + rng.uniform() * rng.standard_normal();
    let x0_hat = (x_t - (1.0 - ab).sqrt() * eps_hat) / ab.sqrt();
    Ok(Transition { x_tm1, x_t, x0, x0_hat, t })
}

/// Evaluate `n` random transitions at `t`; configurations outside the Gamma
/// support are counted and skipped.
pub fn bound_sweep(t: usize, n: usize, params: &GammaParams, sched: &NoiseSchedule, rng: &mut RngStream) -> Result<SweepStats> {
    let mut s = SweepStats {
        t,
        theta0: params.theta0(),
        requested: n,
        evaluated: 0,
        excluded: 0,
        exclusion_rate: 0.0,
        max_abs_discrepancy: 0.0,
        max_scaled_discrepancy: 0.0,
        bound_violations: 0,
        term_violations: 0,
        max_lemma2_residual: 0.0,
    };
    let ab = sched.alpha_bar(t);
    for _ in 0..n {
        let tr = random_transition(t, params, sched, rng)?;
        let direct = match reverse_log_ratio_direct_scaled(&tr, params, sched) {
            Ok(d) => d,
            Err(Error::Support { .. }) => {
                s.excluded += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let dec = reverse_log_ratio_decomposed(&tr, params, sched)?;
        let terms = bound_terms(&tr, params, sched)?;
        s.evaluated += 1;
        let diff = (direct.value - dec).abs();
        s.max_abs_discrepancy = s.max_abs_discrepancy.max(diff);
        s.max_scaled_discrepancy = s.max_scaled_discrepancy.max(diff / direct.scale.max(1.0));
        let bound = l_upper_bound(tr.x0, tr.x0_hat, &terms.constants);
        if dec > bound + BOUND_TOL * (1.0 + bound) {
            s.bound_violations += 1;
        }
        if !terms.all_hold() {
            s.term_violations += 1;
        }
        let target = (terms.constants.g_bar_t - params.cumulative_mean(t)) / (1.0 - ab).sqrt();
        let eps_hat = (tr.x_t - ab.sqrt() * tr.x0_hat) / (1.0 - ab).sqrt();
        let lemma2 = ((tr.x0 - tr.x0_hat).abs() - (1.0 - ab).sqrt() / ab.sqrt() * (target - eps_hat).abs()).abs();
        s.max_lemma2_residual = s.max_lemma2_residual.max(lemma2);
    }
    s.exclusion_rate = s.excluded as f64 / n.max(1) as f64;
    Ok(s)
}

impl SweepStats {
    pub fn passed(&self) -> bool {
        self.evaluated > 0
            && self.max_scaled_discrepancy <= DECOMPOSITION_TOL
            && self.bound_violations == 0
            && self.term_violations == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{gamma_params, linear_schedule};

    fn setup(theta0: f64) -> (NoiseSchedule, GammaParams) {
        let s = linear_schedule(1000, 1e-4, 0.02).unwrap();
        let p = gamma_params(&s, theta0).unwrap();
        (s, p)
    }

    #[test]
    fn density_of_unit_exponential_at_one() {
        assert!((log_gamma_density(1.0, 1.0, 1.0).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(log_gamma_density(0.0, 2.0, 1.0), Err(Error::Support { .. })));
        assert!(log_gamma_density(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        // composite Simpson on (0, 50]; the k = 3 density vanishes at 0
        let (k, th) = (3.0, 0.7);
        let n = 200_000;
        let h = 50.0 / n as f64;
        let f = |x: f64| if x > 0.0 { log_gamma_density(x, k, th).unwrap().exp() } else { 0.0 };
        let mut acc = f(0.0) + f(50.0);
        for i in 1..n {
            acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        assert!((acc * h / 3.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn density_peaks_at_mode() {
        let (k, th) = (4.5, 0.3);
        let mode = (k - 1.0) * th;
        let at = log_gamma_density(mode, k, th).unwrap();
        for d in [1e-3, 1e-2, 0.1, 0.5] {
            assert!(at >= log_gamma_density(mode + d, k, th).unwrap());
            assert!(at >= log_gamma_density(mode - d, k, th).unwrap());
        }
    }

    #[test]
    fn identical_prediction_gives_zero() {
        let (s, p) = setup(0.001);
        let mut rng = RngStream::new(1);
        for t in [2, 50, 500] {
            let mut tr = random_transition(t, &p, &s, &mut rng).unwrap();
            tr.x0_hat = tr.x0;
            assert_eq!(reverse_log_ratio_direct(&tr, &p, &s).unwrap(), 0.0);
            assert_eq!(reverse_log_ratio_decomposed(&tr, &p, &s).unwrap(), 0.0);
            let b = bound_terms(&tr, &p, &s).unwrap();
            for term in [b.linear_tm1, b.linear_t, b.log_t, b.log_tm1] {
                assert_eq!((term.value, term.bound), (0.0, 0.0));
            }
            assert_eq!(l_upper_bound(tr.x0, tr.x0_hat, &b.constants), 0.0);
        }
    }

    #[test]
    fn direct_matches_decomposed() {
        // At theta0 = 0.1 and t < ~10, k_bar_{t-1} < 1 and X_bar_{t-1} sits far
        // below the resolution of x_{t-1}, so only the larger t are resolvable.
        for (theta0, ts) in [(0.001, &[2, 3, 50, 500, 1000][..]), (0.1, &[50, 500, 1000][..])] {
            let (s, p) = setup(theta0);
            let mut rng = RngStream::new(2);
            for &t in ts {
                let mut seen = 0;
                for _ in 0..500 {
                    let tr = random_transition(t, &p, &s, &mut rng).unwrap();
                    let Ok(d) = reverse_log_ratio_direct_scaled(&tr, &p, &s) else { continue };
                    let dec = reverse_log_ratio_decomposed(&tr, &p, &s).unwrap();
                    assert!((d.value - dec).abs() <= DECOMPOSITION_TOL * d.scale.max(1.0), "t={t} {d:?} {dec}");
                    seen += 1;
                }
                assert!(seen > 100);
            }
        }
    }

    #[test]
    fn linear_terms_meet_their_bounds_with_equality() {
        let (s, p) = setup(0.001);
        let mut rng = RngStream::new(3);
        for _ in 0..200 {
            let tr = random_transition(50, &p, &s, &mut rng).unwrap();
            let Ok(b) = bound_terms(&tr, &p, &s) else { continue };
            for term in [b.linear_tm1, b.linear_t] {
                assert!((term.value - term.bound).abs() <= term.resolution, "{term:?}");
            }
        }
    }

    #[test]
    fn bound_scales_linearly() {
        let c = BoundConstants { c1: 1.5, c2: 2.0, c3: 0.3, c4: 0.2, g_bar_t: 0.5, g_bar_tm1: 0.25 };
        let b1 = l_upper_bound(1.0, 0.9, &c);
        let b2 = l_upper_bound(1.0, 0.8, &c);
        assert!((b2 - 2.0 * b1).abs() < 1e-12);
        assert!((b1 - 0.1 * (1.5 + 2.0 + 0.6 + 0.8)).abs() < 1e-12);
    }

    #[test]
    fn ratio_grows_with_prediction_error() {
        let (s, p) = setup(0.001);
        let mut rng = RngStream::new(4);
        let mut checked = 0;
        while checked < 100 {
            let base = random_transition(50, &p, &s, &mut rng).unwrap();
            let dir = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
            let h = 1e-4;
            let vals: Option<Vec<f64>> = (1..=20)
                .map(|j| {
                    let tr = Transition { x0_hat: base.x0 + dir * h * j as f64, ..base };
                    reverse_log_ratio_decomposed(&tr, &p, &s).ok().map(f64::abs)
                })
                .collect();
            let Some(vals) = vals else { continue };
            assert!(vals.windows(2).all(|w| w[1] > w[0]), "{vals:?}");
            checked += 1;
        }
    }

    #[test]
    fn support_violation_names_term() {
        let (s, p) = setup(0.001);
        let tr = Transition { x_tm1: 0.0, x_t: 0.0, x0: 0.0, x0_hat: 1e6, t: 10 };
        match reverse_log_ratio_direct(&tr, &p, &s) {
            Err(Error::Support { term, .. }) => assert!(term.starts_with("X_hat")),
            other => panic!("{other:?}"),
        }
        let bad_t = Transition { t: 1, ..tr };
        assert!(reverse_log_ratio_decomposed(&bad_t, &p, &s).is_err());
    }

    #[test]
    fn lemma2_identity_holds() {
        let (s, p) = setup(0.001);
        let mut rng = RngStream::new(5);
        for t in [1, 17, 500, 1000] {
            let x0 = crate::distributions::sample_normal(&mut rng, &[256]).unwrap();
            let g = crate::diffusion::sample_g_bar(&[256], t, &p, &mut rng).unwrap();
            let eps = crate::distributions::sample_normal(&mut rng, &[256]).unwrap().scale(3.0);
            assert!(lemma2_identity_residual(&x0, &g, &eps, t, &p, &s).unwrap() < 1e-10);
            let exact = gamma_target(&g, t, &p, &s).unwrap();
            assert!(lemma2_identity_residual(&x0, &g, &exact, t, &p, &s).unwrap() < 1e-12);
        }
    }

    #[test]
    fn sweep_at_small_theta_passes() {
        let (s, p) = setup(0.001);
        let mut rng = RngStream::new(6);
        for t in [2, 50, 500] {
            let st = bound_sweep(t, 2000, &p, &s, &mut rng).unwrap();
            assert!(st.passed(), "{st:?}");
            assert!(st.max_lemma2_residual < 1e-10);
        }
    }
}
