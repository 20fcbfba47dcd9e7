//! Training loops for the Gaussian and Gamma models, toy datasets and data ingestion.
//!
//! Each optimizer step draws a batch of `(x0, t, noise)` triples. Slot `j` of
//! step `s` uses its own stream `data_rng.split2(s, j)`, so a batch does not
//! depend on the order in which its slots are assembled.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::denoiser::{Adam, AdamConfig, MlpConfig, ReferenceMlp, Trainable};
use crate::diffusion::NoiseKind;
use crate::distributions::Gamma;
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_atomic};
use crate::rng::RngStream;
use crate::schedule::{GammaParams, NoiseSchedule, ScheduleSpec, LINEAR_BETA_END, LINEAR_BETA_START, REFERENCE_T};
use crate::stats::{invert_cdf, normal_cdf, wasserstein1_to_quantile};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyName {
    Mixture1d,
    Rings2d,
    Blobs8x8,
}

impl ToyName {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mixture1d" => Ok(ToyName::Mixture1d),
            "rings2d" => Ok(ToyName::Rings2d),
            "blobs8x8" => Ok(ToyName::Blobs8x8),
            other => Err(Error::Config(format!("unknown dataset {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ToyName::Mixture1d => "mixture1d",
            ToyName::Rings2d => "rings2d",
            ToyName::Blobs8x8 => "blobs8x8",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            ToyName::Mixture1d => 1,
            ToyName::Rings2d => 2,
            ToyName::Blobs8x8 => 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DatasetSpec {
    Toy { name: ToyName, n: usize },
    /// One sample per row, comma separated. A non-numeric first row is a header.
    Csv { path: PathBuf },
}

impl DatasetSpec {
    pub fn load(&self, rng: &mut RngStream) -> Result<Dataset> {
        match self {
            DatasetSpec::Toy { name, n } => make_toy_dataset(*name, *n, rng),
            DatasetSpec::Csv { path } => load_csv_dataset(path),
        }
    }
}

/// Normalized training data.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    /// `[n, dim]`, zero mean and unit variance per dimension.
    samples: Tensor,
    /// Per-dimension `(shift, scale)`: `normalized = (raw - shift) / scale`.
    normalization: Vec<(f64, f64)>,
}

impl Dataset {
    /// Normalizes `raw` (`[n, dim]`) per dimension. Constant dimensions get scale 1.
    pub fn from_raw(name: impl Into<String>, raw: Tensor) -> Result<Self> {
        if raw.is_empty() || raw.shape().len() != 2 {
            return Err(Error::Domain("dataset must be a non-empty [n, dim] array".into()));
        }
        raw.ensure_finite("dataset")?;
        let (n, dim) = (raw.rows(), raw.row_len());
        let mut norm = Vec::with_capacity(dim);
        for d in 0..dim {
            let mean = (0..n).map(|i| raw.row(i)[d]).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (raw.row(i)[d] - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            norm.push((mean, if sd > 0.0 { sd } else { 1.0 }));
        }
        let mut data = raw.into_data();
        for row in data.chunks_exact_mut(dim) {
            for (v, (m, s)) in row.iter_mut().zip(&norm) {
                *v = (*v - m) / s;
            }
        }
        Ok(Self { name: name.into(), samples: Tensor::new(vec![n, dim], data)?, normalization: norm })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.row_len()
    }

    pub fn normalization(&self) -> &[(f64, f64)] {
        &self.normalization
    }
}

/// Maps normalized rows back to data units.
pub fn denormalize(x: &Tensor, normalization: &[(f64, f64)]) -> Result<Tensor> {
    if x.row_len() != normalization.len() {
        return Err(Error::Shape { expected: vec![normalization.len()], got: x.shape().to_vec() });
    }
    let dim = normalization.len();
    let mut data = x.data().to_vec();
    for row in data.chunks_exact_mut(dim) {
        for (v, (m, s)) in row.iter_mut().zip(normalization) {
            *v = *v * s + m;
        }
    }
    Tensor::new(x.shape().to_vec(), data)
}

pub const MIXTURE_MODES: [f64; 2] = [-1.0, 1.0];
pub const MIXTURE_SD: f64 = 0.1;
pub const RINGS_MODES: usize = 8;
pub const RINGS_SD: f64 = 0.05;

/// CDF of the generating distribution of `mixture1d` in data units.
pub fn mixture_cdf(x: f64) -> f64 {
    MIXTURE_MODES.iter().map(|m| normal_cdf((x - m) / MIXTURE_SD)).sum::<f64>() / MIXTURE_MODES.len() as f64
}

pub fn mixture_quantile(p: f64) -> f64 {
    invert_cdf(mixture_cdf, p, -3.0, 3.0)
}

/// W1 between 1-D samples in data units and the `mixture1d` generating distribution.
pub fn mixture_w1(samples: &[f64]) -> Result<f64> {
    wasserstein1_to_quantile(samples, mixture_quantile)
}

/// Raw (unnormalized) toy samples, `[n, dim]`.
pub fn toy_samples(name: ToyName, n: usize, rng: &mut RngStream) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::Domain("dataset needs at least one sample".into()));
    }
    let dim = name.dim();
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        match name {
            ToyName::Mixture1d => {
                let m = MIXTURE_MODES[rng.int_inclusive(0, MIXTURE_MODES.len() - 1)];
                data.push(m + MIXTURE_SD * rng.standard_normal());
            }
            ToyName::Rings2d => {
                let j = rng.int_inclusive(0, RINGS_MODES - 1) as f64;
                let a = 2.0 * std::f64::consts::PI * j / RINGS_MODES as f64;
                data.push(a.cos() + RINGS_SD * rng.standard_normal());
                data.push(a.sin() + RINGS_SD * rng.standard_normal());
            }
            ToyName::Blobs8x8 => {
                let (cx, cy) = (1.0 + 5.0 * rng.uniform(), 1.0 + 5.0 * rng.uniform());
                let width = 0.8 + 0.8 * rng.uniform();
                let amp = 0.5 + 0.5 * rng.uniform();
                for y in 0..8 {
                    for x in 0..8 {
                        let r2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                        data.push(amp * (-0.5 * r2 / (width * width)).exp());
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, dim], data)
}

pub fn make_toy_dataset(name: ToyName, n: usize, rng: &mut RngStream) -> Result<Dataset> {
    Dataset::from_raw(name.as_str(), toy_samples(name, n, rng)?)
}

pub fn parse_csv_dataset(text: &str) -> Result<Tensor> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::Config(format!("dataset line {}: {e}", i + 1))),
        }
    }
    let dim = rows.first().map(Vec::len).ok_or_else(|| Error::Config("dataset has no rows".into()))?;
    if let Some(i) = rows.iter().position(|r| r.len() != dim) {
        return Err(Error::Config(format!("dataset row {} has {} fields, expected {dim}", i + 1, rows[i].len())));
    }
    let n = rows.len();
    Tensor::new(vec![n, dim], rows.concat())
}

pub fn load_csv_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.file_stem().map_or("csv".into(), |s| s.to_string_lossy().into_owned());
    Dataset::from_raw(name, parse_csv_dataset(&text)?)
}

/// Gamma regression target `(g_bar - k_bar_t theta_t) / sqrt(1 - alpha_bar_t)`.
pub fn gamma_target(g_bar: &Tensor, t: usize, params: &GammaParams, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t)?;
    let (m, s) = (params.cumulative_mean(t), (1.0 - sched.alpha_bar(t)).sqrt());
    Ok(g_bar.map(|g| (g - m) / s))
}

/// The schedule a run uses when none is given: the reference linear
/// schedule at T = 1000, its rescaled form otherwise.
pub fn default_schedule_spec(t_len: usize) -> ScheduleSpec {
    if t_len == REFERENCE_T {
        ScheduleSpec::Linear { beta_start: LINEAR_BETA_START, beta_end: LINEAR_BETA_END }
    } else {
        ScheduleSpec::ScaledLinear
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: NoiseKind,
    #[serde(rename = "T")]
    pub t_max: usize,
    pub schedule: ScheduleSpec,
    pub theta0: Option<f64>,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub dataset: DatasetSpec,
    pub hidden: Vec<usize>,
    pub time_dim: usize,
    /// Length of the trailing window averaged into the reported loss.
    pub loss_window: usize,
}

impl TrainConfig {
    /// Reference setup on `mixture1d` at T = 100.
    pub fn toy(kind: NoiseKind) -> Self {
        Self {
            kind,
            t_max: 100,
            schedule: default_schedule_spec(100),
            theta0: (kind == NoiseKind::Gamma).then_some(0.001),
            batch_size: 128,
            steps: 20_000,
            lr: 1e-3,
            seed: 0,
            checkpoint_every: 0,
            dataset: DatasetSpec::Toy { name: ToyName::Mixture1d, n: 100_000 },
            hidden: vec![128; 4],
            time_dim: 32,
            loss_window: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if (self.kind == NoiseKind::Gamma) != self.theta0.is_some() {
            return Err(Error::Config("theta0 is required for gamma noise and not allowed otherwise".into()));
        }
        if let Some(th) = self.theta0 {
            if !(th > 0.0 && th.is_finite()) {
                return Err(Error::Config(format!("theta0 must be positive, got {th}")));
            }
        }
        if self.t_max == 0 || self.batch_size == 0 || self.loss_window == 0 || self.time_dim == 0 {
            return Err(Error::Config("T, batch size, loss window and time dim must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if let DatasetSpec::Toy { n: 0, .. } = self.dataset {
            return Err(Error::Config("toy dataset size must be positive".into()));
        }
        Ok(())
    }

    pub fn mlp_config(&self, data_dim: usize) -> MlpConfig {
        MlpConfig { data_dim, hidden: self.hidden.clone(), time_dim: self.time_dim, t_max: self.t_max }
    }

    /// Streams for data generation, initialization and batch draws.
    pub fn streams(&self) -> (RngStream, RngStream, RngStream) {
        let root = RngStream::new(self.seed);
        (root.split(1), root.split(2), root.split(3))
    }
}

/// One training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x_t: Tensor,
    pub ts: Vec<usize>,
    pub target: Tensor,
}

/// Everything a batch draw needs.
pub struct BatchSampler<'a> {
    pub data: &'a Dataset,
    pub sched: &'a NoiseSchedule,
    pub params: Option<&'a GammaParams>,
    pub kind: NoiseKind,
}

impl BatchSampler<'_> {
    /// Slot `slot` of step `step`: one `(x_t, t, target)` row.
    pub fn slot(&self, rng: &RngStream, step: usize, slot: usize) -> Result<(Vec<f64>, usize, Vec<f64>)> {
        let mut r = rng.split2(step as u64, slot as u64);
        let x0 = self.data.samples.row(r.int_inclusive(0, self.data.len() - 1));
        let t = r.int_inclusive(1, self.sched.len());
        let ab = self.sched.alpha_bar(t);
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (mut x_t, mut target) = (Vec::with_capacity(x0.len()), Vec::with_capacity(x0.len()));
        match self.kind {
            NoiseKind::Gaussian => {
                for &v in x0 {
                    let e = r.standard_normal();
                    x_t.push(sa * v + sn * e);
                    target.push(e);
                }
            }
            NoiseKind::Gamma => {
                let p = self.params.ok_or_else(|| Error::Config("gamma noise requires gamma parameters".into()))?;
                let g = Gamma::new(p.k_bar(t), p.theta(t))?;
                for &v in x0 {
                    let c = g.sample_centered(&mut r);
                    x_t.push(sa * v + c);
                    target.push(c / sn);
                }
            }
        }
        Ok((x_t, t, target))
    }

    pub fn batch(&self, rng: &RngStream, step: usize, size: usize) -> Result<Batch> {
        let dim = self.data.dim();
        let (mut xs, mut ts, mut ys) = (Vec::with_capacity(size * dim), Vec::with_capacity(size), Vec::with_capacity(size * dim));
        for j in 0..size {
            let (x, t, y) = self.slot(rng, step, j)?;
            xs.extend(x);
            ts.push(t);
            ys.extend(y);
        }
        Ok(Batch { x_t: Tensor::new(vec![size, dim], xs)?, ts, target: Tensor::new(vec![size, dim], ys)? })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ReferenceMlp,
    pub sched: NoiseSchedule,
    pub params: Option<GammaParams>,
    /// Loss of every step, in order.
    pub losses: Vec<f64>,
}

impl TrainOutcome {
    fn window_mean(&self, range: std::ops::Range<usize>) -> Option<f64> {
        let w = &self.losses[range];
        (!w.is_empty()).then(|| w.iter().sum::<f64>() / w.len() as f64)
    }

    /// Mean loss over the first `window` steps.
    pub fn initial_loss(&self, window: usize) -> Option<f64> {
        self.window_mean(0..window.min(self.losses.len()))
    }

    /// Mean loss over the last `window` steps.
    pub fn final_loss(&self, window: usize) -> Option<f64> {
        let n = self.losses.len();
        self.window_mean(n - window.min(n)..n)
    }
}

/// `step,loss` with one row per optimizer step, starting at 1.
pub fn loss_csv(losses: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(out, "{},{}", i + 1, fmt_f64(*l));
    }
    out
}

pub fn write_loss_csv(losses: &[f64], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, loss_csv(losses).as_bytes())
}

/// Train a fresh model on `data`. `on_checkpoint(step, model)` runs every
/// `checkpoint_every` steps and once after the last step.
pub fn train(
    config: &TrainConfig,
    data: &Dataset,
    mut on_checkpoint: impl FnMut(usize, &ReferenceMlp) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let sched = config.schedule.build(config.t_max)?;
    let params = config.theta0.map(|th| GammaParams::new(&sched, th)).transpose()?;
    let (_, mut init_rng, batch_rng) = config.streams();
    let mut model = ReferenceMlp::new(config.mlp_config(data.dim()), &mut init_rng)?;
    let mut opt = Adam::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, model.params().len())?;
    let sampler = BatchSampler { data, sched: &sched, params: params.as_ref(), kind: config.kind };
    let mut losses = Vec::with_capacity(config.steps);
    let echo = || serde_json::to_string(config).unwrap_or_default();
    for step in 1..=config.steps {
        let b = sampler.batch(&batch_rng, step, config.batch_size)?;
        let (loss, grad) = model.loss_and_grad(&b.x_t, &b.ts, &b.target).map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("{what} at step {step}; config {}", echo())),
            other => other,
        })?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {step}; config {}", echo())));
        }
        opt.step(model.params_mut(), &grad)?;
        losses.push(loss);
        if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 && step != config.steps {
            on_checkpoint(step, &model)?;
        }
    }
    on_checkpoint(config.steps, &model)?;
    Ok(TrainOutcome { model, sched, params, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{l1_loss, Denoiser};
    use crate::schedule::{gamma_params, linear_schedule};
    use crate::stats::{moment_estimate, z_against};

    #[test]
    fn mixture_is_centered() {
        let raw = toy_samples(ToyName::Mixture1d, 100_000, &mut RngStream::new(1)).unwrap();
        assert!(raw.mean().abs() < 0.02);
    }

    #[test]
    fn rings_points_sit_near_a_mode() {
        // The squared radial offset over sd^2 is chi-square with 2 dof, so
        // P(r > c sd) = exp(-c^2 / 2).
        let n = 100_000;
        let raw = toy_samples(ToyName::Rings2d, n, &mut RngStream::new(2)).unwrap();
        let mut beyond4 = 0;
        for i in 0..raw.rows() {
            let p = raw.row(i);
            let r = (0..RINGS_MODES)
                .map(|j| {
                    let a = 2.0 * std::f64::consts::PI * j as f64 / RINGS_MODES as f64;
                    (p[0] - a.cos()).hypot(p[1] - a.sin())
                })
                .fold(f64::INFINITY, f64::min);
            assert!(r < 6.0 * RINGS_SD, "point {p:?}");
            beyond4 += usize::from(r > 4.0 * RINGS_SD);
        }
        let expected = n as f64 * (-8.0f64).exp();
        assert!((beyond4 as f64 - expected).abs() < 4.0 * expected.sqrt(), "{beyond4} vs {expected}");
    }

    #[test]
    fn blobs_have_a_single_maximum() {
        let raw = toy_samples(ToyName::Blobs8x8, 2000, &mut RngStream::new(3)).unwrap();
        for i in 0..raw.rows() {
            let r = raw.row(i);
            let max = r.iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(r.iter().filter(|&&v| v == max).count(), 1);
        }
    }

    #[test]
    fn normalization_standardizes_and_inverts() {
        let d = make_toy_dataset(ToyName::Rings2d, 20_000, &mut RngStream::new(4)).unwrap();
        for k in 0..2 {
            let col: Vec<f64> = (0..d.len()).map(|i| d.samples().row(i)[k]).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
        let raw = toy_samples(ToyName::Rings2d, 20_000, &mut RngStream::new(4)).unwrap();
        let back = denormalize(d.samples(), d.normalization()).unwrap();
        assert!(back.max_abs_diff(&raw).unwrap() < 1e-12);
    }

    #[test]
    fn unknown_dataset_rejected() {
        assert!(ToyName::parse("spirals").is_err());
        assert!(make_toy_dataset(ToyName::Mixture1d, 0, &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn csv_ingestion() {
        let t = parse_csv_dataset("a,b\n1,2\n3.5,-4\n\n").unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.data(), &[1.0, 2.0, 3.5, -4.0]);
        assert!(parse_csv_dataset("1,2\n3\n").is_err());
        assert!(parse_csv_dataset("1,2\nx,y\n").is_err());
        assert!(parse_csv_dataset("").is_err());
    }

    #[test]
    fn mixture_quantile_inverts_cdf() {
        for p in [0.01, 0.2, 0.5, 0.77, 0.999] {
            assert!((mixture_cdf(mixture_quantile(p)) - p).abs() < 1e-10);
        }
        assert!((mixture_quantile(0.3) + mixture_quantile(0.7)).abs() < 1e-9);
        let raw = toy_samples(ToyName::Mixture1d, 10_000, &mut RngStream::new(5)).unwrap();
        assert!(mixture_w1(raw.data()).unwrap() < 0.02);
        let shifted: Vec<f64> = raw.data().iter().map(|x| x + 0.3).collect();
        assert!(mixture_w1(&shifted).unwrap() > 0.25);
    }

    #[test]
    fn gamma_target_zero_at_mean() {
        let s = linear_schedule(1000, 1e-4, 0.02).unwrap();
        let p = gamma_params(&s, 0.001).unwrap();
        let g = Tensor::full(&[3], p.cumulative_mean(100)).unwrap();
        assert!(gamma_target(&g, 100, &p, &s).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gamma_target_has_unit_variance() {
        let s = linear_schedule(1000, 1e-4, 0.02).unwrap();
        let p = gamma_params(&s, 0.001).unwrap();
        let g = crate::diffusion::sample_g_bar(&[1_000_000], 100, &p, &mut RngStream::new(6)).unwrap();
        let y = gamma_target(&g, 100, &p, &s).unwrap();
        let m = moment_estimate(y.data()).unwrap();
        assert!(z_against(m.mean, m.se_mean, 0.0).within(3.0), "{m:?}");
        assert!(z_against(m.variance, m.se_variance, 1.0).within(3.0), "{m:?}");
    }

    #[test]
    fn gamma_target_skewness_matches_shape() {
        let s = linear_schedule(1000, 1e-4, 0.02).unwrap();
        let p = gamma_params(&s, 0.5).unwrap();
        let g = crate::diffusion::sample_g_bar(&[1_000_000], 1, &p, &mut RngStream::new(7)).unwrap();
        let m = moment_estimate(gamma_target(&g, 1, &p, &s).unwrap().data()).unwrap();
        let want = 2.0 / p.k_bar(1).sqrt();
        assert!(z_against(m.skewness, m.se_skewness, want).within(3.0), "{m:?} vs {want}");
    }

    #[test]
    fn small_theta0_skewness_vanishes_away_from_t1() {
        // skewness 2 / sqrt(k_bar_t) = 2 theta0 sqrt(alpha_bar_t / (1 - alpha_bar_t))
        let s = linear_schedule(1000, 1e-4, 0.02).unwrap();
        let p = gamma_params(&s, 0.001).unwrap();
        let skew: Vec<f64> = (1..=1000).map(|t| 2.0 / p.k_bar(t).sqrt()).collect();
        for t in 1..=1000 {
            let ab = s.alpha_bar(t);
            let closed = 2.0 * 0.001 * (ab / (1.0 - ab)).sqrt();
            assert!((skew[t - 1] - closed).abs() <= 1e-9 * closed);
        }
        assert!(skew.windows(2).all(|w| w[1] < w[0]));
        let first_small = skew.iter().position(|&k| k < 0.01).unwrap() + 1;
        assert!((30..=80).contains(&first_small), "{first_small}");
        assert!(skew[0] > 0.1);
    }

    fn tiny_config(kind: NoiseKind, steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: 32,
            hidden: vec![16, 16],
            time_dim: 8,
            t_max: 20,
            schedule: default_schedule_spec(20),
            dataset: DatasetSpec::Toy { name: ToyName::Mixture1d, n: 500 },
            loss_window: 10,
            ..TrainConfig::toy(kind)
        }
    }

    fn run(cfg: &TrainConfig) -> TrainOutcome {
        let data = cfg.dataset.load(&mut cfg.streams().0).unwrap();
        train(cfg, &data, |_, _| Ok(())).unwrap()
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let cfg = tiny_config(NoiseKind::Gaussian, 0);
        let out = run(&cfg);
        let init = ReferenceMlp::new(cfg.mlp_config(1), &mut cfg.streams().1).unwrap();
        assert_eq!(out.model, init);
        assert!(out.losses.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        for kind in [NoiseKind::Gaussian, NoiseKind::Gamma] {
            let cfg = tiny_config(kind, 300);
            let (a, b) = (run(&cfg), run(&cfg));
            assert_eq!(a.losses, b.losses);
            assert_eq!(a.model, b.model);
            assert!(a.final_loss(50).unwrap() < a.initial_loss(50).unwrap());
            assert_eq!(loss_csv(&a.losses).lines().count(), 301);
        }
    }

    #[test]
    fn checkpoint_cadence() {
        let mut cfg = tiny_config(NoiseKind::Gaussian, 25);
        cfg.checkpoint_every = 10;
        let data = cfg.dataset.load(&mut cfg.streams().0).unwrap();
        let mut seen = Vec::new();
        train(&cfg, &data, |s, _| {
            seen.push(s);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![10, 20, 25]);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::toy(NoiseKind::Gaussian);
        c.theta0 = Some(0.1);
        assert!(c.validate().is_err());
        let mut c = TrainConfig::toy(NoiseKind::Gamma);
        c.theta0 = None;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::toy(NoiseKind::Gamma);
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn batches_do_not_depend_on_assembly_order() {
        let s = linear_schedule(50, 1e-3, 0.2).unwrap();
        let p = gamma_params(&s, 0.1).unwrap();
        let data = make_toy_dataset(ToyName::Rings2d, 100, &mut RngStream::new(8)).unwrap();
        let bs = BatchSampler { data: &data, sched: &s, params: Some(&p), kind: NoiseKind::Gamma };
        let rng = RngStream::new(9);
        let b = bs.batch(&rng, 7, 16).unwrap();
        for j in (0..16).rev() {
            let (x, t, y) = bs.slot(&rng, 7, j).unwrap();
            assert_eq!(x, b.x_t.row(j));
            assert_eq!(t, b.ts[j]);
            assert_eq!(y, b.target.row(j));
        }
    }

    #[test]
    fn loss_is_invariant_under_batch_row_permutation() {
        let s = linear_schedule(50, 1e-3, 0.2).unwrap();
        let data = make_toy_dataset(ToyName::Mixture1d, 100, &mut RngStream::new(10)).unwrap();
        let bs = BatchSampler { data: &data, sched: &s, params: None, kind: NoiseKind::Gaussian };
        let b = bs.batch(&RngStream::new(11), 1, 24).unwrap();
        let cfg = MlpConfig { data_dim: 1, hidden: vec![8], time_dim: 4, t_max: 50 };
        let m = ReferenceMlp::new(cfg, &mut RngStream::new(12)).unwrap();
        let perm: Vec<usize> = (0..24).map(|i| (i * 7) % 24).collect();
        let px = Tensor::new(vec![24, 1], perm.iter().map(|&i| b.x_t.data()[i]).collect()).unwrap();
        let pt: Vec<usize> = perm.iter().map(|&i| b.ts[i]).collect();
        let py = Tensor::new(vec![24, 1], perm.iter().map(|&i| b.target.data()[i]).collect()).unwrap();
        let (la, ga) = m.loss_and_grad(&b.x_t, &b.ts, &b.target).unwrap();
        let (lb, gb) = m.loss_and_grad(&px, &pt, &py).unwrap();
        assert!((la - lb).abs() < 1e-14);
        assert!(ga.iter().zip(&gb).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!((l1_loss(&m, &px, &pt, &py).unwrap() - la).abs() < 1e-14);
        assert_eq!(m.input_dim(), 1);
    }
}
