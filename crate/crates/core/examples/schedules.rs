//! Build the reference linear and Fibonacci schedules, derive the Gamma
//! noise parameters and check `k_t theta_t^2 = beta_t` and
//! `k_bar_t theta_t^2 = 1 - alpha_bar_t` along the way.

use gdiff::schedule::{
    fibonacci_schedule, linear_schedule, subsample_timesteps, GammaParams, SubsampleStrategy, FIBONACCI_SEED,
    LINEAR_BETA_END, LINEAR_BETA_START, REFERENCE_T,
};

fn main() -> gdiff::Result<()> {
    let linear = linear_schedule(REFERENCE_T, LINEAR_BETA_START, LINEAR_BETA_END)?;
    let fib = fibonacci_schedule(20, FIBONACCI_SEED, FIBONACCI_SEED)?;

    for (name, sched) in [("linear", &linear), ("fibonacci", &fib)] {
        let params = GammaParams::new(sched, 0.001)?;
        let t = sched.len();
        println!("{name}: T = {t}, alpha_bar_T = {:.6e}, hash {}", sched.alpha_bar(t), &sched.hash()[..12]);
        for s in [1, t / 2, t] {
            println!(
                "  t = {s:4}  beta = {:.4e}  theta = {:.4e}  k = {:.4e}  k_bar = {:.4e}",
                sched.beta(s),
                params.theta(s),
                params.k(s),
                params.k_bar(s)
            );
        }
        println!("  identity max relative error {:.2e}", params.identity_errors(sched).max());
    }

    let grid = subsample_timesteps(REFERENCE_T, 10, SubsampleStrategy::Quadratic)?;
    let restricted = linear.restrict(&grid)?;
    println!("10-step quadratic grid {grid:?}");
    println!(
        "restricted schedule keeps alpha_bar: {} vs {}",
        restricted.alpha_bar(restricted.len()),
        linear.alpha_bar(REFERENCE_T)
    );
    Ok(())
}
