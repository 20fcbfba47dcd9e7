//! Exact Normal and Gamma samplers.
//!
//! Gamma variates use the Marsaglia-Tsang squeeze-rejection method for
//! shape >= 1. Shapes below one are boosted: draw at `k + 1` and multiply by
//! `U^(1/k)`. Both branches are exact; the acceptance rate stays above 95%
//! for every shape, including the ~10^9 shapes a small scale produces.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Tensor of i.i.d. standard normal entries.
pub fn sample_normal(rng: &mut RngStream, shape: &[usize]) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.standard_normal()).collect();
    Tensor::new(shape.to_vec(), data)
}

/// Gamma(shape `k`, scale `theta`) distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gamma {
    k: f64,
    theta: f64,
}

impl Gamma {
    pub fn new(k: f64, theta: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::Domain(format!("gamma shape must be positive, got {k}")));
        }
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::Domain(format!("gamma scale must be positive, got {theta}")));
        }
        Ok(Self { k, theta })
    }

    pub fn shape(&self) -> f64 {
        self.k
    }

    pub fn scale(&self) -> f64 {
        self.theta
    }

    pub fn mean(&self) -> f64 {
        self.k * self.theta
    }

    pub fn variance(&self) -> f64 {
        self.k * self.theta * self.theta
    }

    pub fn skewness(&self) -> f64 {
        2.0 / self.k.sqrt()
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        if self.k < 1.0 {
            let boost = rng.uniform_open().ln() / self.k;
            unit_scale_gamma(self.k + 1.0, rng) * boost.exp() * self.theta
        } else {
            unit_scale_gamma(self.k, rng) * self.theta
        }
    }

    /// Draw `g - k*theta`, the centered variate.
    pub fn sample_centered(&self, rng: &mut RngStream) -> f64 {
        self.sample(rng) - self.mean()
    }
}

/// Marsaglia-Tsang for `k >= 1`, unit scale.
fn unit_scale_gamma(k: f64, rng: &mut RngStream) -> f64 {
    debug_assert!(k >= 1.0);
    let d = k - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = rng.standard_normal();
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = rng.uniform_open();
        let x2 = x * x;
        // squeeze
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Tensor of i.i.d. Gamma(k, theta) entries.
pub fn sample_gamma(rng: &mut RngStream, k: f64, theta: f64, shape: &[usize]) -> Result<Tensor> {
    let dist = Gamma::new(k, theta)?;
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data)
}
