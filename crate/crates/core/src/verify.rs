//! Self-contained numerical verification suite.
//!
//! Each check produces a list of [`Measurement`]s with an optional limit. The
//! suite passes iff every limited measurement is within its limit. Output is
//! a function of the configuration alone.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::denoiser::{gradient_check, MlpConfig, ReferenceMlp};
use crate::diffusion::{forward_jump_gamma, forward_step_gamma, sample_g_bar};
use crate::distributions::{sample_normal, Gamma};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::rng::RngStream;
use crate::schedule::{GammaParams, NoiseSchedule, LINEAR_BETA_END, LINEAR_BETA_START, REFERENCE_T};
use crate::stats::{moment_estimate, MomentEstimate, ZScore};
use crate::tensor::Tensor;
use crate::vlb::{bound_sweep, lemma2_identity_residual, DECOMPOSITION_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Check {
    /// Stepwise Gamma chains against the closed-form jump.
    Lemma1,
    /// `k_t theta_t^2 = beta_t` and `k_bar_t theta_t^2 = 1 - alpha_bar_t`.
    Variance,
    /// Direct against decomposed log-ratios and the L1 bound.
    Vlb,
    /// Loss/bound identity for the standardized Gamma target.
    Lemma2,
    /// Analytic against central-difference gradients.
    Gradcheck,
}

pub const ALL_CHECKS: [Check; 5] = [Check::Lemma1, Check::Variance, Check::Vlb, Check::Lemma2, Check::Gradcheck];

impl Check {
    pub fn parse(s: &str) -> Result<Self> {
        ALL_CHECKS
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown check {s:?}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Check::Lemma1 => "lemma1",
            Check::Variance => "variance",
            Check::Vlb => "vlb",
            Check::Lemma2 => "lemma2",
            Check::Gradcheck => "gradcheck",
        }
    }
}

/// Deliberate faults that a sound suite must catch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Corruption {
    /// The closed-form jump uses `1.05 * k_bar_t`.
    Kbar,
}

impl Corruption {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "kbar" => Ok(Corruption::Kbar),
            other => Err(Error::Config(format!("unknown corruption {other:?}"))),
        }
    }
}

pub const KBAR_CORRUPTION_FACTOR: f64 = 1.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub seed: u64,
    /// Checks to run; empty runs all.
    pub only: Vec<Check>,
    pub corrupt: Option<Corruption>,
    /// Timesteps compared by `lemma1`.
    pub t_grid: Vec<usize>,
    pub lemma1_theta0: Vec<f64>,
    pub lemma1_chains: usize,
    /// Starting value of every chain.
    pub lemma1_x0: f64,
    /// Allowed |z| per moment.
    pub z_limit: f64,
    pub random_schedules: usize,
    pub vlb_t: Vec<usize>,
    pub vlb_theta0: f64,
    pub vlb_configs: usize,
    pub lemma2_instances: usize,
    pub grad_instances: usize,
    pub grad_params: usize,
    pub grad_h: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            only: Vec::new(),
            corrupt: None,
            t_grid: vec![1, 10, 100, 1000],
            lemma1_theta0: vec![0.001, 0.1],
            lemma1_chains: 200_000,
            lemma1_x0: 1.0,
            z_limit: 3.0,
            random_schedules: 100,
            vlb_t: vec![2, 50, 500],
            vlb_theta0: 0.001,
            vlb_configs: 10_000,
            lemma2_instances: 10_000,
            grad_instances: 10,
            grad_params: 64,
            grad_h: 1e-5,
        }
    }
}

impl VerifyConfig {
    pub fn selected(&self) -> Vec<Check> {
        if self.only.is_empty() {
            ALL_CHECKS.to_vec()
        } else {
            ALL_CHECKS.into_iter().filter(|c| self.only.contains(c)).collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Measurement {
    pub case: String,
    pub metric: String,
    pub value: f64,
    /// Upper limit; `None` for values reported without a gate.
    pub limit: Option<f64>,
}

impl Measurement {
    fn gated(case: impl Into<String>, metric: &str, value: f64, limit: f64) -> Self {
        Self { case: case.into(), metric: metric.into(), value, limit: Some(limit) }
    }

    fn info(case: impl Into<String>, metric: &str, value: f64) -> Self {
        Self { case: case.into(), metric: metric.into(), value, limit: None }
    }

    pub fn passed(&self) -> bool {
        self.limit.is_none_or(|l| self.value <= l)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub check: Check,
    pub passed: bool,
    pub measurements: Vec<Measurement>,
}

impl CheckOutcome {
    fn new(check: Check, measurements: Vec<Measurement>) -> Self {
        Self { check, passed: measurements.iter().all(Measurement::passed), measurements }
    }

    pub fn failures(&self) -> impl Iterator<Item = &Measurement> {
        self.measurements.iter().filter(|m| !m.passed())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub config: VerifyConfig,
    pub passed: bool,
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    /// `check,case,metric,value,limit,passed`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,case,metric,value,limit,passed\n");
        for c in &self.checks {
            for m in &c.measurements {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    c.check.name(),
                    m.case,
                    m.metric,
                    fmt_f64(m.value),
                    m.limit.map(fmt_f64).unwrap_or_default(),
                    m.passed()
                );
            }
        }
        out
    }

    pub fn failed_checks(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.check.name()).collect()
    }
}

fn reference_schedule() -> Result<NoiseSchedule> {
    crate::schedule::linear_schedule(REFERENCE_T, LINEAR_BETA_START, LINEAR_BETA_END)
}

pub fn run(config: &VerifyConfig) -> Result<VerifyReport> {
    run_with_progress(config, |_| {})
}

/// As [`run`], calling `progress(check)` before each check starts.
pub fn run_with_progress(config: &VerifyConfig, mut progress: impl FnMut(Check)) -> Result<VerifyReport> {
    let root = RngStream::new(config.seed);
    let mut checks = Vec::new();
    for check in config.selected() {
        progress(check);
        let rng = root.split(check as u64 + 1);
        let m = match check {
            Check::Lemma1 => lemma1(config, &rng)?,
            Check::Variance => variance(config, &rng)?,
            Check::Vlb => vlb(config, &rng)?,
            Check::Lemma2 => lemma2(config, &rng)?,
            Check::Gradcheck => gradcheck(config, &rng)?,
        };
        checks.push(CheckOutcome::new(check, m));
    }
    Ok(VerifyReport { config: config.clone(), passed: checks.iter().all(|c| c.passed), checks })
}

/// Moments of `n` stepwise chains at each grid point and of `n` independent
/// closed-form jumps, compared moment by moment.
pub fn lemma1_compare(
    sched: &NoiseSchedule,
    params: &GammaParams,
    jump_params: &GammaParams,
    x0: f64,
    t_grid: &[usize],
    n: usize,
    rng: &RngStream,
) -> Result<Vec<(usize, MomentEstimate, MomentEstimate)>> {
    let mut grid = t_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let t_max = *grid.last().ok_or_else(|| Error::Config("empty timestep grid".into()))?;
    sched.check_t(t_max)?;
    if grid[0] == 0 {
        return Err(Error::Timestep { t: 0, max: sched.len() });
    }
    let start = Tensor::full(&[n], x0)?;
    let mut step_rng = rng.split(1);
    let mut x = start.clone();
    let mut stepped = Vec::with_capacity(grid.len());
    for t in 1..=t_max {
        x = forward_step_gamma(&x, t, params, sched, &mut step_rng)?;
        if grid.binary_search(&t).is_ok() {
            stepped.push(moment_estimate(x.data())?);
        }
    }
    let mut out = Vec::with_capacity(grid.len());
    for (&t, s) in grid.iter().zip(stepped) {
        let g = sample_g_bar(&[n], t, jump_params, &mut rng.split2(2, t as u64))?;
        let j = forward_jump_gamma(&start, t, jump_params, sched, &g)?;
        out.push((t, s, moment_estimate(j.data())?));
    }
    Ok(out)
}

fn lemma1(config: &VerifyConfig, rng: &RngStream) -> Result<Vec<Measurement>> {
    let sched = reference_schedule()?;
    let mut out = Vec::new();
    for (i, &theta0) in config.lemma1_theta0.iter().enumerate() {
        let params = GammaParams::new(&sched, theta0)?;
        let jump = match config.corrupt {
            Some(Corruption::Kbar) => params.with_k_bar_scaled(KBAR_CORRUPTION_FACTOR),
            None => params.clone(),
        };
        let rows = lemma1_compare(&sched, &params, &jump, config.lemma1_x0, &config.t_grid, config.lemma1_chains, &rng.split(i as u64))?;
        for (t, s, j) in rows {
            let case = format!("theta0={theta0} t={t}");
            let zs = [
                ("z_mean", ZScore::new(s.mean, s.se_mean, j.mean, j.se_mean)),
                ("z_variance", ZScore::new(s.variance, s.se_variance, j.variance, j.se_variance)),
                ("z_skewness", ZScore::new(s.skewness, s.se_skewness, j.skewness, j.se_skewness)),
            ];
            out.push(Measurement::info(&case, "stepwise_variance", s.variance));
            out.push(Measurement::info(&case, "jump_variance", j.variance));
            out.push(Measurement::info(&case, "stepwise_skewness", s.skewness));
            out.push(Measurement::info(&case, "jump_skewness", j.skewness));
            for (name, z) in zs {
                out.push(Measurement::gated(&case, name, z.z, config.z_limit));
            }
        }
    }
    Ok(out)
}

pub const IDENTITY_TOL: f64 = 1e-9;

/// Random schedule: `T` uniform on `2..=1000`, betas uniform on `[1e-5, 0.05]`,
/// `theta0` log-uniform on `[1e-3, 1]`.
pub fn random_schedule(rng: &mut RngStream) -> Result<(NoiseSchedule, f64)> {
    let t = rng.int_inclusive(2, 1000);
    let beta = (0..t).map(|_| 1e-5 + (0.05 - 1e-5) * rng.uniform()).collect();
    let theta0 = 10f64.powf(-3.0 * rng.uniform());
    Ok((NoiseSchedule::from_betas(beta)?, theta0))
}

fn variance(config: &VerifyConfig, rng: &RngStream) -> Result<Vec<Measurement>> {
    let sched = reference_schedule()?;
    let mut out = Vec::new();
    for &theta0 in &config.lemma1_theta0 {
        let e = GammaParams::new(&sched, theta0)?.identity_errors(&sched);
        let case = format!("reference theta0={theta0}");
        out.push(Measurement::gated(&case, "step_rel_error", e.step_variance, IDENTITY_TOL));
        out.push(Measurement::gated(&case, "cumulative_rel_error", e.cumulative_variance, IDENTITY_TOL));
    }
    let (mut worst_step, mut worst_cum) = (0.0f64, 0.0f64);
    for i in 0..config.random_schedules {
        let (s, theta0) = random_schedule(&mut rng.split(i as u64))?;
        let e = GammaParams::new(&s, theta0)?.identity_errors(&s);
        worst_step = worst_step.max(e.step_variance);
        worst_cum = worst_cum.max(e.cumulative_variance);
    }
    let case = format!("{} random schedules", config.random_schedules);
    out.push(Measurement::gated(&case, "max_step_rel_error", worst_step, IDENTITY_TOL));
    out.push(Measurement::gated(&case, "max_cumulative_rel_error", worst_cum, IDENTITY_TOL));
    Ok(out)
}

fn vlb(config: &VerifyConfig, rng: &RngStream) -> Result<Vec<Measurement>> {
    let sched = reference_schedule()?;
    let params = GammaParams::new(&sched, config.vlb_theta0)?;
    let mut out = Vec::new();
    for &t in &config.vlb_t {
        let s = bound_sweep(t, config.vlb_configs, &params, &sched, &mut rng.split(t as u64))?;
        let case = format!("theta0={} t={t}", config.vlb_theta0);
        out.push(Measurement::info(&case, "evaluated", s.evaluated as f64));
        out.push(Measurement::info(&case, "exclusion_rate", s.exclusion_rate));
        out.push(Measurement::info(&case, "max_abs_discrepancy", s.max_abs_discrepancy));
        out.push(Measurement::gated(&case, "max_scaled_discrepancy", s.max_scaled_discrepancy, DECOMPOSITION_TOL));
        out.push(Measurement::gated(&case, "bound_violations", s.bound_violations as f64, 0.0));
        out.push(Measurement::gated(&case, "term_violations", s.term_violations as f64, 0.0));
        out.push(Measurement::gated(&case, "max_lemma2_residual", s.max_lemma2_residual, LEMMA2_TOL));
        // an empty sweep proves nothing
        out.push(Measurement::gated(&case, "empty_sweep", f64::from(u8::from(s.evaluated == 0)), 0.0));
    }
    Ok(out)
}

pub const LEMMA2_TOL: f64 = 1e-10;

fn lemma2(config: &VerifyConfig, rng: &RngStream) -> Result<Vec<Measurement>> {
    let sched = reference_schedule()?;
    let thetas = [0.001, 0.1];
    let params: Vec<GammaParams> = thetas.iter().map(|&th| GammaParams::new(&sched, th)).collect::<Result<_>>()?;
    let mut worst = [0.0f64; 2];
    for i in 0..config.lemma2_instances {
        let mut r = rng.split(i as u64);
        let which = i % 2;
        let p = &params[which];
        let t = r.int_inclusive(1, sched.len());
        let x0 = Tensor::from_vec(vec![r.standard_normal()])?;
        let g = Tensor::from_vec(vec![Gamma::new(p.k_bar(t), p.theta(t))?.sample(&mut r)])?;
        let eps = Tensor::from_vec(vec![3.0 * r.standard_normal()])?;
        worst[which] = worst[which].max(lemma2_identity_residual(&x0, &g, &eps, t, p, &sched)?);
    }
    Ok(thetas
        .iter()
        .zip(worst)
        .map(|(th, w)| Measurement::gated(format!("theta0={th}"), "max_residual", w, LEMMA2_TOL))
        .collect())
}

pub const GRAD_TOL: f64 = 1e-4;

fn gradcheck(config: &VerifyConfig, rng: &RngStream) -> Result<Vec<Measurement>> {
    let mut out = Vec::new();
    let t_max = 1000;
    for i in 0..config.grad_instances {
        let mut r = rng.split(i as u64);
        let dim = 1 + i % 3;
        let model = ReferenceMlp::new(MlpConfig::reference(dim, t_max), &mut r)?;
        let rows = 16;
        let x = sample_normal(&mut r, &[rows, dim])?;
        let target = sample_normal(&mut r, &[rows, dim])?;
        let ts: Vec<usize> = (0..rows).map(|_| r.int_inclusive(1, t_max)).collect();
        let g = gradient_check(&model, &x, &ts, &target, config.grad_params, config.grad_h, &mut r)?;
        let case = format!("instance={i} dim={dim}");
        out.push(Measurement::info(&case, "resampled_probes", g.resampled as f64));
        out.push(Measurement::gated(&case, "max_rel_error", g.max_rel_error, GRAD_TOL));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VerifyConfig {
        VerifyConfig {
            lemma1_chains: 20_000,
            random_schedules: 10,
            vlb_configs: 500,
            lemma2_instances: 500,
            grad_instances: 2,
            grad_params: 16,
            ..VerifyConfig::default()
        }
    }

    #[test]
    fn small_suite_passes_and_is_deterministic() {
        let cfg = small();
        let a = run(&cfg).unwrap();
        assert!(a.passed, "{:?}", a.failed_checks());
        assert_eq!(a.to_csv(), run(&cfg).unwrap().to_csv());
    }

    #[test]
    fn only_filters_checks() {
        let cfg = VerifyConfig { only: vec![Check::Lemma1], lemma1_theta0: vec![0.1], ..small() };
        let r = run(&cfg).unwrap();
        assert_eq!(r.checks.len(), 1);
        let z_rows = r.checks[0].measurements.iter().filter(|m| m.metric == "z_mean").count();
        assert_eq!(z_rows, 4);
    }

    #[test]
    fn corruption_is_detected() {
        let cfg = VerifyConfig { only: vec![Check::Lemma1], corrupt: Some(Corruption::Kbar), ..small() };
        let r = run(&cfg).unwrap();
        assert!(!r.passed);
        assert_eq!(r.failed_checks(), vec!["lemma1"]);
    }

    #[test]
    fn parse_names() {
        for c in ALL_CHECKS {
            assert_eq!(Check::parse(c.name()).unwrap(), c);
        }
        assert!(Check::parse("nope").is_err());
        assert!(Corruption::parse("kbar").is_ok());
        assert!(Corruption::parse("theta").is_err());
    }
}
