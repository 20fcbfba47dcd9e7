//! Residual-noise histograms and which noise family fits them better.
//!
//! The fitting-error curve extracts the implied noise
//! `(sqrt(alpha_bar_t) x0 - x_t) / sqrt(1 - alpha_bar_t)` at each timestep of a
//! grid, histograms it, fits a Gaussian and a three-parameter Gamma by moment
//! matching, and records the mean squared gap between each fitted density and
//! the histogram.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::diffusion::SampleTrace;
use crate::distributions::sample_gamma;
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_atomic};
use crate::rng::RngStream;
use crate::schedule::{GammaParams, NoiseSchedule};
use crate::stats::normal_pdf;
use crate::tensor::Tensor;
use crate::vlb::log_gamma_density;

pub const DEFAULT_BINS: usize = 100;
/// Shape used when the sample skewness is too small to pin one down.
pub const NEAR_GAUSSIAN_SHAPE: f64 = 1e6;
const MIN_SKEW: f64 = 1e-3;

/// `(sqrt(alpha_bar_t) x0 - x_t) / sqrt(1 - alpha_bar_t)`.
pub fn residual_noise(x0: &Tensor, x_t: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.zip_map(x_t, |x0, xt| (a * x0 - xt) / b)
}

/// Uniform-bin density histogram over `[min, max]` of the data.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub centers: Vec<f64>,
    pub density: Vec<f64>,
    pub count: usize,
    pub width: f64,
}

pub fn histogram(samples: &[f64], bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::Domain(format!("histogram needs at least 2 bins, got {bins}")));
    }
    if samples.len() < 10 {
        return Err(Error::Domain(format!("histogram needs at least 10 samples, got {}", samples.len())));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("histogram input".into()));
    }
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::Domain("histogram range is degenerate".into()));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in samples {
        let i = (((x - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let n = samples.len() as f64;
    Ok(Histogram {
        centers: (0..bins).map(|i| lo + (i as f64 + 0.5) * width).collect(),
        density: counts.iter().map(|&c| c as f64 / (n * width)).collect(),
        count: samples.len(),
        width,
    })
}

impl Histogram {
    /// Mean, variance and skewness of the binned distribution.
    pub fn moments(&self) -> (f64, f64, f64) {
        let w: Vec<f64> = self.density.iter().map(|d| d * self.width).collect();
        let mean: f64 = self.centers.iter().zip(&w).map(|(c, p)| c * p).sum();
        let (mut m2, mut m3) = (0.0, 0.0);
        for (c, p) in self.centers.iter().zip(&w) {
            let d = c - mean;
            m2 += p * d * d;
            m3 += p * d * d * d;
        }
        let skew = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
        (mean, m2, skew)
    }

    /// Mean squared gap between the density and `pdf` at the bin centers.
    pub fn mse(&self, pdf: impl Fn(f64) -> f64) -> f64 {
        self.centers.iter().zip(&self.density).map(|(&c, &d)| (d - pdf(c)).powi(2)).sum::<f64>()
            / self.centers.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum FitParams {
    Gaussian { mean: f64, sd: f64 },
    /// `X = location + G` with `G ~ Gamma(shape, scale)`, or `location - G` when reflected.
    Gamma { shape: f64, scale: f64, location: f64, reflected: bool, near_gaussian: bool },
}

impl FitParams {
    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            FitParams::Gaussian { mean, sd } => normal_pdf(x, mean, sd),
            FitParams::Gamma { shape, scale, location, reflected, .. } => {
                let y = if reflected { location - x } else { x - location };
                log_gamma_density(y, shape, scale).map_or(0.0, f64::exp)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FitResult {
    pub params: FitParams,
    pub mse: f64,
}

pub fn fit_gaussian(h: &Histogram) -> Result<FitResult> {
    let (mean, var, _) = h.moments();
    if !(var > 0.0) {
        return Err(Error::Domain("gaussian fit needs positive variance".into()));
    }
    let params = FitParams::Gaussian { mean, sd: var.sqrt() };
    Ok(FitResult { params, mse: h.mse(|x| params.pdf(x)) })
}

/// Moment matching: `shape = 4 / skew^2`, `scale = sqrt(var / shape)`,
/// `location = mean - shape * scale`, on the reflected axis when `skew < 0`.
pub fn fit_gamma(h: &Histogram) -> Result<FitResult> {
    let (mean, var, skew) = h.moments();
    if !(var > 0.0) {
        return Err(Error::Domain("gamma fit needs positive variance".into()));
    }
    let reflected = skew < 0.0;
    let near_gaussian = skew.abs() < MIN_SKEW;
    let shape = if near_gaussian { NEAR_GAUSSIAN_SHAPE } else { 4.0 / (skew * skew) };
    let scale = (var / shape).sqrt();
    let location = if reflected { mean + shape * scale } else { mean - shape * scale };
    let params = FitParams::Gamma { shape, scale, location, reflected, near_gaussian };
    Ok(FitResult { params, mse: h.mse(|x| params.pdf(x)) })
}

/// Where residuals at timestep `t` come from.
pub trait ResidualSource {
    fn label(&self) -> &str;

    /// Residuals for one repeat.
    fn residuals(&self, t: usize, repeat: usize, rng: &mut RngStream) -> Result<Vec<f64>>;
}

/// Residuals of the Gamma forward jump: `-(g_bar - k_bar_t theta_t) / sqrt(1 - alpha_bar_t)`.
pub struct SyntheticGamma<'a> {
    pub sched: &'a NoiseSchedule,
    pub params: &'a GammaParams,
    pub n: usize,
}

impl ResidualSource for SyntheticGamma<'_> {
    fn label(&self) -> &str {
        "synthetic-gamma"
    }

    fn residuals(&self, t: usize, _repeat: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
        self.sched.check_t(t)?;
        let g = sample_gamma(rng, self.params.k_bar(t), self.params.theta(t), &[self.n])?;
        let (m, s) = (self.params.cumulative_mean(t), (1.0 - self.sched.alpha_bar(t)).sqrt());
        Ok(g.data().iter().map(|g| -(g - m) / s).collect())
    }
}

/// Residuals of the Gaussian forward jump, i.e. `-eps`.
pub struct SyntheticGaussian {
    pub n: usize,
}

impl ResidualSource for SyntheticGaussian {
    fn label(&self) -> &str {
        "synthetic-gaussian"
    }

    fn residuals(&self, _t: usize, _repeat: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
        Ok((0..self.n).map(|_| -rng.standard_normal()).collect())
    }
}

/// Residuals of recorded reverse chains, one chain per repeat, taking the
/// chain's final state as `x0`.
pub struct TraceSource<'a> {
    pub sched: &'a NoiseSchedule,
    pub traces: &'a [SampleTrace],
}

impl ResidualSource for TraceSource<'_> {
    fn label(&self) -> &str {
        "model"
    }

    fn residuals(&self, t: usize, repeat: usize, _rng: &mut RngStream) -> Result<Vec<f64>> {
        let trace = self
            .traces
            .get(repeat)
            .ok_or_else(|| Error::Domain(format!("no trace for repeat {repeat} ({} recorded)", self.traces.len())))?;
        let x_t = trace
            .state_at(t)
            .ok_or_else(|| Error::Domain(format!("trace has no state at t = {t}")))?;
        Ok(residual_noise(&trace.final_state, x_t, t, self.sched)?.into_data())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveRow {
    pub t: usize,
    pub gaussian_mse_mean: f64,
    pub gaussian_mse_sd: f64,
    pub gamma_mse_mean: f64,
    pub gamma_mse_sd: f64,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (m, sd)
}

/// Per-t mean and sample sd of both fit errors over `repeats` repeats.
/// Repeat `r` at timestep `t` draws from `rng.split2(t, r)`.
pub fn fit_error_curve(
    source: &dyn ResidualSource,
    t_grid: &[usize],
    repeats: usize,
    bins: usize,
    rng: &RngStream,
) -> Result<Vec<CurveRow>> {
    if t_grid.is_empty() || repeats == 0 {
        return Err(Error::Domain("fit curve needs a timestep grid and at least one repeat".into()));
    }
    let mut rows = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let (mut ga, mut gm) = (Vec::with_capacity(repeats), Vec::with_capacity(repeats));
        for r in 0..repeats {
            let res = source.residuals(t, r, &mut rng.split2(t as u64, r as u64))?;
            let h = histogram(&res, bins)?;
            ga.push(fit_gaussian(&h)?.mse);
            gm.push(fit_gamma(&h)?.mse);
        }
        let ((gam, gas), (gmm, gms)) = (mean_sd(&ga), mean_sd(&gm));
        rows.push(CurveRow { t, gaussian_mse_mean: gam, gaussian_mse_sd: gas, gamma_mse_mean: gmm, gamma_mse_sd: gms });
    }
    Ok(rows)
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("t,gaussian_mse_mean,gaussian_mse_sd,gamma_mse_mean,gamma_mse_sd\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.t,
            fmt_f64(r.gaussian_mse_mean),
            fmt_f64(r.gaussian_mse_sd),
            fmt_f64(r.gamma_mse_mean),
            fmt_f64(r.gamma_mse_sd)
        );
    }
    out
}

/// Line plot of both mean curves against t.
pub fn curve_svg(rows: &[CurveRow], title: &str) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let t_max = rows.iter().map(|r| r.t).max().unwrap_or(1) as f64;
    let t_min = rows.iter().map(|r| r.t).min().unwrap_or(0) as f64;
    let y_max = rows
        .iter()
        .flat_map(|r| [r.gaussian_mse_mean, r.gamma_mse_mean])
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let x = |t: usize| pad + (w - 2.0 * pad) * if t_max > t_min { (t as f64 - t_min) / (t_max - t_min) } else { 0.5 };
    let y = |v: f64| h - pad - (h - 2.0 * pad) * v / y_max;
    let line = |f: &dyn Fn(&CurveRow) -> f64| {
        rows.iter().map(|r| format!("{:.2},{:.2}", x(r.t), y(f(r)))).collect::<Vec<_>>().join(" ")
    };
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, w / 2.0, xml_escape(title));
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - pad, w - pad, h - pad);
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#, h - pad);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">t</text>"#, w / 2.0, h - 12.0);
    let _ = writeln!(s, r#"<text x="8" y="{pad}">{:.3e}</text>"#, y_max);
    let _ = writeln!(s, r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#, line(&|r| r.gaussian_mse_mean));
    let _ = writeln!(s, r#"<polyline fill="none" stroke="firebrick" stroke-width="2" points="{}"/>"#, line(&|r| r.gamma_mse_mean));
    let _ = writeln!(s, r#"<text x="{}" y="{}" fill="steelblue">gaussian fit</text>"#, w - 150.0, pad);
    let _ = writeln!(s, r#"<text x="{}" y="{}" fill="firebrick">gamma fit</text>"#, w - 150.0, pad + 16.0);
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn write_curve(rows: &[CurveRow], csv_path: impl AsRef<Path>, svg_path: Option<&Path>, title: &str) -> Result<()> {
    write_atomic(csv_path, curve_csv(rows).as_bytes())?;
    if let Some(p) = svg_path {
        write_atomic(p, curve_svg(rows, title).as_bytes())?;
    }
    Ok(())
}
