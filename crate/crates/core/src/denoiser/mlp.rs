use serde::{Deserialize, Serialize};

use super::{Denoiser, Trainable};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Flattened state length.
    pub data_dim: usize,
    pub hidden: Vec<usize>,
    pub time_dim: usize,
    /// Diffusion length; the embedding sees `t / T`.
    pub t_max: usize,
}

impl MlpConfig {
    /// Four SiLU layers of width 128 and a 32-dim sinusoidal time embedding.
    pub fn reference(data_dim: usize, t_max: usize) -> Self {
        Self { data_dim, hidden: vec![128; 4], time_dim: 32, t_max }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.data_dim + self.time_dim];
        w.extend(&self.hidden);
        w.push(self.data_dim);
        w
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.data_dim == 0 || self.t_max == 0 || self.time_dim % 2 != 0 || self.hidden.contains(&0) {
            return Err(Error::Config(format!("invalid mlp config {self:?}")));
        }
        Ok(())
    }
}

/// Sinusoidal embedding of `t / T`: `[sin(w_j s), cos(w_j s)]` with
/// `s = 1000 t / T` and `w_j = 10000^(-j / half)`.
pub fn time_embedding(t: usize, t_max: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let s = 1000.0 * t as f64 / t_max as f64;
    let mut out = vec![0.0; dim];
    for j in 0..half {
        let w = (-(10000f64.ln()) * j as f64 / half as f64).exp();
        out[j] = (w * s).sin();
        out[half + j] = (w * s).cos();
    }
    out
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// `c = a · b^T` where `a` is `m×k` and `b` is `n×k`, both row-major.
fn matmul_abt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), 1, k as isize, 0.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c = a^T · b` where `a` is `k×m` and `b` is `k×n`.
fn matmul_atb(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), 1, m as isize, b.as_ptr(), n as isize, 1, 0.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c = a · b` where `a` is `m×k` and `b` is `k×n`.
fn matmul_ab(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1, 0.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// Fully connected noise predictor. Parameters are stored layer by layer,
/// each as a row-major `out×in` weight block followed by `out` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceMlp {
    config: MlpConfig,
    params: Vec<f64>,
}

struct Forward {
    /// Layer inputs; `acts[0]` is the embedded input.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of every layer.
    pre: Vec<Vec<f64>>,
}

impl ReferenceMlp {
    /// Uniform `±1/sqrt(fan_in)` initialization.
    pub fn new(config: MlpConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::with_capacity(config.param_count());
        for w in config.widths().windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] * w[1] + w[1]) {
                params.push(bound * (2.0 * rng.uniform() - 1.0));
            }
        }
        Ok(Self { config, params })
    }

    /// Same as [`ReferenceMlp::new`] with the output layer zeroed.
    pub fn new_zero_output(config: MlpConfig, rng: &mut RngStream) -> Result<Self> {
        let mut m = Self::new(config, rng)?;
        let widths = m.config.widths();
        let last = widths[widths.len() - 2] * widths[widths.len() - 1] + widths[widths.len() - 1];
        let n = m.params.len();
        m.params[n - last..].iter_mut().for_each(|p| *p = 0.0);
        Ok(m)
    }

    pub fn from_params(config: MlpConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.param_count() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, got {}",
                config.param_count(),
                params.len()
            )));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    fn check_input(&self, x: &Tensor, ts: &[usize]) -> Result<usize> {
        if x.row_len() != self.config.data_dim {
            return Err(Error::Shape { expected: vec![self.config.data_dim], got: x.shape().to_vec() });
        }
        let rows = x.rows();
        if ts.len() != rows && ts.len() != 1 {
            return Err(Error::Domain(format!("{} timesteps for {rows} rows", ts.len())));
        }
        if let Some(&t) = ts.iter().find(|&&t| t == 0 || t > self.config.t_max) {
            return Err(Error::Timestep { t, max: self.config.t_max });
        }
        Ok(rows)
    }

    fn forward(&self, x: &Tensor, ts: &[usize]) -> Result<Forward> {
        let rows = self.check_input(x, ts)?;
        let c = &self.config;
        let in_w = c.data_dim + c.time_dim;
        let mut input = Vec::with_capacity(rows * in_w);
        let mut cached: Option<(usize, Vec<f64>)> = None;
        for r in 0..rows {
            let t = if ts.len() == 1 { ts[0] } else { ts[r] };
            input.extend_from_slice(x.row(r));
            match &cached {
                Some((ct, e)) if *ct == t => input.extend_from_slice(e),
                _ => {
                    let e = time_embedding(t, c.t_max, c.time_dim);
                    input.extend_from_slice(&e);
                    cached = Some((t, e));
                }
            }
        }
        let widths = c.widths();
        let layers = widths.len() - 1;
        let mut acts = vec![input];
        let mut pre = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            off += fan_in * fan_out + fan_out;
            let mut z = vec![0.0; rows * fan_out];
            matmul_abt(rows, fan_in, fan_out, &acts[l], w, &mut z);
            for row in z.chunks_exact_mut(fan_out) {
                row.iter_mut().zip(b).for_each(|(v, bb)| *v += bb);
            }
            if l + 1 < layers {
                acts.push(z.iter().map(|&v| silu(v)).collect());
            }
            pre.push(z);
        }
        Ok(Forward { acts, pre })
    }
}

impl Denoiser for ReferenceMlp {
    fn input_dim(&self) -> usize {
        self.config.data_dim
    }

    fn eval(&self, x_t: &Tensor, t: usize) -> Result<Tensor> {
        self.eval_rows(x_t, &[t])
    }
}

impl Trainable for ReferenceMlp {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn eval_rows(&self, x_t: &Tensor, ts: &[usize]) -> Result<Tensor> {
        let mut f = self.forward(x_t, ts)?;
        let out = f.pre.pop().expect("at least one layer");
        Tensor::new(x_t.shape().to_vec(), out)
    }

    fn loss_and_grad(&self, x_t: &Tensor, ts: &[usize], target: &Tensor) -> Result<(f64, Vec<f64>)> {
        x_t.ensure_same_shape(target)?;
        let f = self.forward(x_t, ts)?;
        let rows = x_t.rows();
        let widths = self.config.widths();
        let layers = widths.len() - 1;
        let y = &f.pre[layers - 1];
        let n = y.len() as f64;
        let mut loss = 0.0;
        let mut delta: Vec<f64> = y
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| {
                let r = a - b;
                loss += r.abs();
                if r > 0.0 {
                    1.0 / n
                } else if r < 0.0 {
                    -1.0 / n
                } else {
                    0.0
                }
            })
            .collect();
        loss /= n;

        let mut grad = vec![0.0; self.params.len()];
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += widths[l] * widths[l + 1] + widths[l + 1];
        }
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let o = offsets[l];
            // delta holds dL/dz for this layer
            let (gw, gb) = grad[o..o + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            matmul_atb(fan_out, rows, fan_in, &delta, &f.acts[l], gw);
            for row in delta.chunks_exact(fan_out) {
                gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
            }
            if l > 0 {
                let w = &self.params[o..o + fan_in * fan_out];
                let mut dh = vec![0.0; rows * fan_in];
                matmul_ab(rows, fan_out, fan_in, &delta, w, &mut dh);
                dh.iter_mut().zip(&f.pre[l - 1]).for_each(|(d, &z)| *d *= silu_grad(z));
                delta = dh;
            }
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("loss or gradient".into()));
        }
        Ok((loss, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{gradient_check, l1_loss};
    use super::*;
    use crate::distributions::sample_normal;

    fn small() -> MlpConfig {
        MlpConfig { data_dim: 3, hidden: vec![16, 16], time_dim: 8, t_max: 100 }
    }

    #[test]
    fn param_count_reference() {
        let c = MlpConfig::reference(1, 100);
        assert_eq!(c.param_count(), 33 * 128 + 128 + 3 * (128 * 128 + 128) + 128 + 1);
    }

    #[test]
    fn zero_output_layer_gives_zero() {
        let m = ReferenceMlp::new_zero_output(small(), &mut RngStream::new(1)).unwrap();
        let x = sample_normal(&mut RngStream::new(2), &[5, 3]).unwrap();
        let y = m.eval(&x, 17).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn eval_is_deterministic_and_time_dependent() {
        let m = ReferenceMlp::new(small(), &mut RngStream::new(3)).unwrap();
        let x = sample_normal(&mut RngStream::new(4), &[4, 3]).unwrap();
        let a = m.eval(&x, 10).unwrap();
        let b = m.eval(&x, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, m.eval(&x, 11).unwrap());
    }

    #[test]
    fn embedding_is_injective_over_timesteps() {
        let t_max = 1000;
        let embs: Vec<Vec<f64>> = (1..=t_max).map(|t| time_embedding(t, t_max, 32)).collect();
        for i in 0..t_max {
            for j in i + 1..t_max {
                let d: f64 = embs[i].iter().zip(&embs[j]).map(|(a, b)| (a - b).abs()).sum();
                assert!(d > 1e-6, "t = {} and {} collide", i + 1, j + 1);
            }
        }
    }

    #[test]
    fn rejects_wrong_dimension() {
        let m = ReferenceMlp::new(small(), &mut RngStream::new(5)).unwrap();
        assert!(m.eval(&Tensor::zeros(&[2, 4]).unwrap(), 1).is_err());
        assert!(m.eval(&Tensor::zeros(&[2, 3]).unwrap(), 0).is_err());
        assert!(m.eval(&Tensor::zeros(&[2, 3]).unwrap(), 101).is_err());
    }

    #[test]
    fn loss_zero_at_exact_prediction() {
        let m = ReferenceMlp::new(small(), &mut RngStream::new(6)).unwrap();
        let x = sample_normal(&mut RngStream::new(7), &[6, 3]).unwrap();
        let ts = [3, 9, 27, 50, 81, 100];
        let y = m.eval_rows(&x, &ts).unwrap();
        let (loss, grad) = m.loss_and_grad(&x, &ts, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn loss_is_homogeneous_in_residual() {
        let m = ReferenceMlp::new(small(), &mut RngStream::new(8)).unwrap();
        let x = sample_normal(&mut RngStream::new(9), &[6, 3]).unwrap();
        let ts = [5];
        let y = m.eval_rows(&x, &ts).unwrap();
        let r = sample_normal(&mut RngStream::new(10), &[6, 3]).unwrap();
        let t1 = y.axpby(1.0, &r, 1.0).unwrap();
        let t2 = y.axpby(1.0, &r, 2.0).unwrap();
        let l1 = l1_loss(&m, &x, &ts, &t1).unwrap();
        let l2 = l1_loss(&m, &x, &ts, &t2).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let m = ReferenceMlp::new(small(), &mut RngStream::new(11)).unwrap();
        let mut rng = RngStream::new(12);
        let x = sample_normal(&mut rng, &[8, 3]).unwrap();
        let target = sample_normal(&mut rng, &[8, 3]).unwrap();
        let ts: Vec<usize> = (0..8).map(|i| 1 + 12 * i).collect();
        let g = gradient_check(&m, &x, &ts, &target, 200, 1e-5, &mut rng).unwrap();
        assert!(g.max_rel_error < 1e-4, "{g:?}");
    }
}
