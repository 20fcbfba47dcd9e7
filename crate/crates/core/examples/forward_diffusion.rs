//! Push one data point through the Gaussian and Gamma forward processes,
//! step by step and in a single jump, and compare the resulting moments.

use gdiff::diffusion::{forward_jump_gamma, forward_jump_gaussian, forward_step_gamma, forward_step_gaussian, sample_g_bar};
use gdiff::distributions::sample_normal;
use gdiff::rng::RngStream;
use gdiff::schedule::{linear_schedule, GammaParams};
use gdiff::stats::empirical_moments;
use gdiff::tensor::Tensor;

const N: usize = 50_000;

fn main() -> gdiff::Result<()> {
    let sched = linear_schedule(1000, 1e-4, 0.02)?;
    let params = GammaParams::new(&sched, 0.001)?;
    let x0 = Tensor::new(vec![N], vec![1.0; N])?;
    let rng = RngStream::new(3);

    let (mut xg, mut xm) = (x0.clone(), x0.clone());
    let mut step_rng = rng.split(1);
    for t in 1..=100 {
        xg = forward_step_gaussian(&xg, t, &sched, &mut step_rng)?;
        xm = forward_step_gamma(&xm, t, &params, &sched, &mut step_rng)?;
    }
    let mut jump_rng = rng.split(2);
    let eps = sample_normal(&mut jump_rng, &[N])?;
    let jg = forward_jump_gaussian(&x0, 100, &sched, &eps)?;
    let g_bar = sample_g_bar(&[N], 100, &params, &mut jump_rng)?;
    let jm = forward_jump_gamma(&x0, 100, &params, &sched, &g_bar)?;

    println!("t = 100, x0 = 1: expected mean {:.5}, variance {:.5}", sched.alpha_bar(100).sqrt(), 1.0 - sched.alpha_bar(100));
    for (name, x) in [("gaussian steps", &xg), ("gaussian jump", &jg), ("gamma steps", &xm), ("gamma jump", &jm)] {
        let m = empirical_moments(x.data())?;
        println!("  {name:15} mean {:.5}  variance {:.5}  skewness {:+.4}", m.mean, m.variance, m.skewness.unwrap_or(0.0));
    }
    println!("  gamma closed-form skewness {:.4}", 2.0 / params.k_bar(100).sqrt());
    Ok(())
}
