use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam without weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, n_params: usize) -> Result<Self> {
        let ok = config.lr > 0.0
            && (0.0..1.0).contains(&config.beta1)
            && (0.0..1.0).contains(&config.beta2)
            && config.eps > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid optimizer settings {config:?}")));
        }
        Ok(Self { config, m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0 })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// One update. Rejects non-finite gradients before touching any state.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape { expected: vec![self.m.len()], got: vec![params.len(), grad.len()] });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient component {i} at optimizer step {}", self.step + 1)));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut opt = Adam::new(AdamConfig::default(), 3).unwrap();
        let mut p = vec![1.0, -2.0, 3.5];
        for _ in 0..5 {
            opt.step(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn first_step_on_quadratic() {
        // f(p) = (p - 3)^2 at p = 1 has gradient -4. After bias correction the
        // first step is lr * g / (|g| + eps), i.e. +lr up to eps.
        let mut opt = Adam::new(AdamConfig::default(), 1).unwrap();
        let mut p = vec![1.0];
        let g = 2.0 * (p[0] - 3.0);
        opt.step(&mut p, &[g]).unwrap();
        let expected = 1.0 + 1e-3 * 4.0 / (4.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] - 3.0).abs() < 2.0);
    }

    #[test]
    fn identical_runs_match() {
        let run = || {
            let mut opt = Adam::new(AdamConfig::default(), 2).unwrap();
            let mut p = vec![0.3, -0.7];
            for i in 0..50 {
                let g = [p[0] - 0.1 * i as f64, 2.0 * p[1]];
                opt.step(&mut p, &g).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut opt = Adam::new(AdamConfig::default(), 2).unwrap();
        let mut p = vec![0.0, 0.0];
        assert!(matches!(opt.step(&mut p, &[1.0, f64::NAN]), Err(Error::NonFinite(_))));
        assert_eq!(opt.steps_taken(), 0);
        assert!(opt.step(&mut p, &[1.0]).is_err());
    }
}
