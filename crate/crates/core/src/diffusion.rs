//! Forward diffusion (stepwise and closed-form) and the reverse samplers.
//!
//! States are tensors whose entries diffuse independently. Batched chains use
//! shape `[n, dim]`; the denoiser sees the whole batch at one timestep.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::denoiser::Denoiser;
use crate::distributions::{sample_normal, Gamma};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_atomic, write_json};
use crate::rng::RngStream;
use crate::schedule::{validate_steps, GammaParams, NoiseSchedule};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Gamma,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    Ddpm,
    Ddgm,
    Ddim,
}

/// Reverse-step noise scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sigma {
    /// `sigma_t = sqrt(beta_t)`, matching the forward step's injected variance.
    SqrtBeta,
    /// `sigma_t = beta_t`.
    Beta,
    Zero,
}

impl Sigma {
    pub fn value(self, sched: &NoiseSchedule, t: usize) -> f64 {
        match self {
            Sigma::SqrtBeta => sched.beta(t).sqrt(),
            Sigma::Beta => sched.beta(t),
            Sigma::Zero => 0.0,
        }
    }
}

impl Default for Sigma {
    fn default() -> Self {
        Sigma::SqrtBeta
    }
}

fn gaussian_step(x_prev: &Tensor, beta: f64, rng: &mut RngStream) -> Result<Tensor> {
    let eps = sample_normal(rng, x_prev.shape())?;
    x_prev.axpby((1.0 - beta).sqrt(), &eps, beta.sqrt())
}

/// `sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps`, `eps ~ N(0, I)`.
pub fn forward_step_gaussian(
    x_prev: &Tensor,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut RngStream,
) -> Result<Tensor> {
    sched.check_t(t)?;
    gaussian_step(x_prev, sched.beta(t), rng)
}

/// `sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps`.
pub fn forward_jump_gaussian(x0: &Tensor, t: usize, sched: &NoiseSchedule, eps: &Tensor) -> Result<Tensor> {
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    x0.axpby(ab.sqrt(), eps, (1.0 - ab).sqrt())
}

fn gamma_step(x_prev: &Tensor, sqrt_alpha: f64, noise: Option<Gamma>, rng: &mut RngStream) -> Tensor {
    x_prev.map(|v| sqrt_alpha * v + noise.map_or(0.0, |g| g.sample_centered(rng)))
}

/// `sqrt(1 - beta_t) x_{t-1} + (g - k_t theta_t)`, `g ~ Gamma(k_t, theta_t)`.
pub fn forward_step_gamma(
    x_prev: &Tensor,
    t: usize,
    params: &GammaParams,
    sched: &NoiseSchedule,
    rng: &mut RngStream,
) -> Result<Tensor> {
    sched.check_t(t)?;
    let g = Gamma::new(params.k(t), params.theta(t))?;
    Ok(gamma_step(x_prev, sched.alpha(t).sqrt(), Some(g), rng))
}

/// `sqrt(alpha_bar_t) x_0 + (g_bar - k_bar_t theta_t)` for a given `g_bar ~ Gamma(k_bar_t, theta_t)`.
pub fn forward_jump_gamma(x0: &Tensor, t: usize, params: &GammaParams, sched: &NoiseSchedule, g_bar: &Tensor) -> Result<Tensor> {
    sched.check_t(t)?;
    let (s, m) = (sched.alpha_bar(t).sqrt(), params.cumulative_mean(t));
    x0.zip_map(g_bar, |x, g| s * x + (g - m))
}

/// Draw `g_bar ~ Gamma(k_bar_t, theta_t)` with the shape of `like`.
pub fn sample_g_bar(like: &[usize], t: usize, params: &GammaParams, rng: &mut RngStream) -> Result<Tensor> {
    crate::distributions::sample_gamma(rng, params.k_bar(t), params.theta(t), like)
}

/// `(x_t - sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha_bar_t)`.
pub fn predict_x0(x_t: &Tensor, t: usize, eps_hat: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x_t.zip_map(eps_hat, |x, e| (x - b * e) / a)
}

/// Mean of the ancestral update, shared by the Gaussian and Gamma samplers.
fn reverse_mean(x_t: &Tensor, t: usize, eps_hat: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    let c = (1.0 - sched.alpha(t)) / (1.0 - sched.alpha_bar(t)).sqrt();
    let d = sched.alpha(t).sqrt();
    x_t.zip_map(eps_hat, |x, e| (x - c * e) / d)
}

/// Ancestral Gaussian step. No noise is added at `t = 1`.
pub fn reverse_step_ddpm(
    x_t: &Tensor,
    t: usize,
    eps_hat: &Tensor,
    sched: &NoiseSchedule,
    sigma_t: f64,
    rng: &mut RngStream,
) -> Result<Tensor> {
    sched.check_t(t)?;
    let mean = reverse_mean(x_t, t, eps_hat, sched)?;
    if t == 1 || sigma_t == 0.0 {
        return Ok(mean);
    }
    let z = sample_normal(rng, x_t.shape())?;
    mean.axpby(1.0, &z, sigma_t)
}

/// Normalized Gamma reverse noise at `t > 1`:
/// `z = (g - k_bar_{t-1} theta_{t-1}) / sqrt(1 - alpha_bar_t)`, `g ~ Gamma(k_bar_{t-1}, theta_{t-1})`.
pub fn ddgm_reverse_noise(
    shape: &[usize],
    t: usize,
    params: &GammaParams,
    sched: &NoiseSchedule,
    rng: &mut RngStream,
) -> Result<Tensor> {
    if t < 2 {
        return Err(Error::Timestep { t, max: sched.len() });
    }
    let g = Gamma::new(params.k_bar(t - 1), params.theta(t - 1))?;
    let norm = (1.0 - sched.alpha_bar(t)).sqrt();
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| g.sample_centered(rng) / norm).collect())
}

/// Ancestral Gamma step. Deterministic at `t = 1`.
pub fn reverse_step_ddgm(
    x_t: &Tensor,
    t: usize,
    eps_hat: &Tensor,
    params: &GammaParams,
    sched: &NoiseSchedule,
    sigma_t: f64,
    rng: &mut RngStream,
) -> Result<Tensor> {
    sched.check_t(t)?;
    let mean = reverse_mean(x_t, t, eps_hat, sched)?;
    if t == 1 || sigma_t == 0.0 {
        return Ok(mean);
    }
    let z = ddgm_reverse_noise(x_t.shape(), t, params, sched, rng)?;
    mean.axpby(1.0, &z, sigma_t)
}

/// Deterministic implicit step from `t` to `t_prev` (`t_prev = 0` is the final step).
/// `t_prev == t` is the identity.
pub fn reverse_step_ddim(x_t: &Tensor, t: usize, t_prev: usize, eps_hat: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t)?;
    if t_prev > t {
        return Err(Error::Domain(format!("ddim step needs t_prev <= t, got {t_prev} > {t}")));
    }
    let x0_hat = predict_x0(x_t, t, eps_hat, sched)?;
    let ab = sched.alpha_bar(t_prev);
    x0_hat.axpby(ab.sqrt(), eps_hat, (1.0 - ab).sqrt())
}

/// Recorded reverse chain: `(t, x_t)` for each visited timestep, then `x_0`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTrace {
    pub states: Vec<(usize, Tensor)>,
    pub final_state: Tensor,
}

impl SampleTrace {
    pub fn state_at(&self, t: usize) -> Option<&Tensor> {
        self.states.iter().find(|(s, _)| *s == t).map(|(_, x)| x)
    }

    /// Rows `t,v0,v1,...` for every recorded state, ending with `t = 0`.
    pub fn to_csv(&self) -> String {
        let width = self.final_state.len();
        let mut out = String::from("t");
        for i in 0..width {
            out.push_str(&format!(",v{i}"));
        }
        out.push('\n');
        let rows = self.states.iter().map(|(t, x)| (*t, x)).chain(std::iter::once((0, &self.final_state)));
        for (t, x) in rows {
            out.push_str(&t.to_string());
            for v in x.data() {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Samples as a JSON array of rows.
pub fn write_samples_json(samples: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let rows: Vec<&[f64]> = (0..samples.rows()).map(|i| samples.row(i)).collect();
    write_json(path, &rows)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BinarySidecar {
    pub shape: Vec<usize>,
    pub dtype: String,
}

/// Raw little-endian f64 payload at `path` with a `<path>.json` sidecar holding the shape.
pub fn write_samples_binary(samples: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = samples.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_atomic(path, &bytes)?;
    let mut side = path.as_os_str().to_owned();
    side.push(".json");
    write_json(Path::new(&side), &BinarySidecar { shape: samples.shape().to_vec(), dtype: "f64-le".into() })
}

pub fn read_samples_binary(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let mut side = path.as_os_str().to_owned();
    side.push(".json");
    let side = Path::new(&side);
    let meta: BinarySidecar =
        serde_json::from_slice(&std::fs::read(side).map_err(|e| Error::io(side, e))?)?;
    if meta.dtype != "f64-le" {
        return Err(Error::Domain(format!("unsupported dtype {}", meta.dtype)));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Domain("payload length is not a multiple of 8".into()));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Tensor::new(meta.shape, data)
}

/// Everything `sample_chain` needs besides the denoiser and the RNG.
#[derive(Clone, Debug)]
pub struct ChainSpec<'a> {
    pub sched: &'a NoiseSchedule,
    pub params: Option<&'a GammaParams>,
    pub kind: NoiseKind,
    pub sampler: Sampler,
    /// Strictly increasing, last element T.
    pub steps: &'a [usize],
    pub sigma: Sigma,
    pub record_trace: bool,
}

impl ChainSpec<'_> {
    pub fn validate(&self) -> Result<()> {
        validate_steps(self.steps, self.sched.len())?;
        if *self.steps.last().unwrap() != self.sched.len() {
            return Err(Error::Config("timestep grid must end at T".into()));
        }
        match (self.kind, self.sampler) {
            (NoiseKind::Gaussian, Sampler::Ddgm) => {
                return Err(Error::Config("ddgm sampler requires gamma noise".into()))
            }
            (NoiseKind::Gamma, Sampler::Ddpm) => {
                return Err(Error::Config("ddpm sampler requires gaussian noise; use ddgm".into()))
            }
            _ => {}
        }
        if self.kind == NoiseKind::Gamma {
            match self.params {
                None => return Err(Error::Config("gamma noise requires gamma parameters".into())),
                Some(p) if p.len() != self.sched.len() => {
                    return Err(Error::Config("gamma parameters do not match the schedule".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Initial reverse state: `N(0, I)` or centered `Gamma(k_bar_T, theta_T)` scaled to unit variance.
pub fn initial_state(
    shape: &[usize],
    kind: NoiseKind,
    params: Option<&GammaParams>,
    rng: &mut RngStream,
) -> Result<Tensor> {
    match kind {
        NoiseKind::Gaussian => sample_normal(rng, shape),
        NoiseKind::Gamma => {
            let p = params.ok_or_else(|| Error::Config("gamma noise requires gamma parameters".into()))?;
            let t = p.len();
            let g = Gamma::new(p.k_bar(t), p.theta(t))?;
            let sd = g.variance().sqrt();
            let n: usize = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| g.sample_centered(rng) / sd).collect())
        }
    }
}

/// Run one reverse chain over `spec.steps` (visited in reverse) for a batch of shape `shape`.
///
/// Ancestral samplers on a subsampled grid use the restricted schedule from
/// [`NoiseSchedule::restrict`] with Gamma parameters rebuilt on it; the
/// denoiser is always evaluated at the original timestep.
pub fn sample_chain<D: Denoiser + ?Sized>(
    denoiser: &D,
    spec: &ChainSpec<'_>,
    shape: &[usize],
    rng: &mut RngStream,
) -> Result<SampleTrace> {
    spec.validate()?;
    let steps = spec.steps;
    let full_grid = steps.len() == spec.sched.len();
    let restricted;
    let restricted_params;
    let (sched, params) = if full_grid || spec.sampler == Sampler::Ddim {
        (spec.sched, spec.params)
    } else {
        restricted = spec.sched.restrict(steps)?;
        restricted_params = match spec.params {
            Some(p) => Some(GammaParams::new(&restricted, p.theta0())?),
            None => None,
        };
        (&restricted, restricted_params.as_ref())
    };

    let mut x = initial_state(shape, spec.kind, spec.params, rng)?;
    let mut states = Vec::new();
    for s in (0..steps.len()).rev() {
        let t = steps[s];
        if spec.record_trace {
            states.push((t, x.clone()));
        }
        let eps_hat = denoiser.eval(&x, t)?;
        // index into the schedule actually driving the update
        let idx = if full_grid || spec.sampler == Sampler::Ddim { t } else { s + 1 };
        x = match spec.sampler {
            Sampler::Ddpm => reverse_step_ddpm(&x, idx, &eps_hat, sched, spec.sigma.value(sched, idx), rng)?,
            Sampler::Ddgm => {
                let p = params.expect("validated");
                reverse_step_ddgm(&x, idx, &eps_hat, p, sched, spec.sigma.value(sched, idx), rng)?
            }
            Sampler::Ddim => {
                let t_prev = if s == 0 { 0 } else { steps[s - 1] };
                reverse_step_ddim(&x, t, t_prev, &eps_hat, sched)?
            }
        };
        x.ensure_finite("reverse chain state")?;
    }
    Ok(SampleTrace { states, final_state: x })
}
