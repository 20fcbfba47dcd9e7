//! Fit Gaussian and Gamma densities to histograms of forward-process
//! residuals and write the error curves as CSV and SVG.

use gdiff::analysis::{fit_error_curve, write_curve, SyntheticGamma, SyntheticGaussian};
use gdiff::rng::RngStream;
use gdiff::schedule::{linear_schedule, GammaParams};

fn main() -> gdiff::Result<()> {
    let sched = linear_schedule(1000, 1e-4, 0.02)?;
    let params = GammaParams::new(&sched, 0.1)?;
    let grid: Vec<usize> = (1..=10).map(|i| 100 * i).collect();
    let rng = RngStream::new(1);
    let dir = std::env::temp_dir();

    let gamma = fit_error_curve(&SyntheticGamma { sched: &sched, params: &params, n: 10_000 }, &grid, 20, 100, &rng)?;
    let gauss = fit_error_curve(&SyntheticGaussian { n: 10_000 }, &grid, 20, 100, &rng)?;
    println!("   t   gamma residuals (gauss fit / gamma fit)   gaussian residuals (gauss fit / gamma fit)");
    for (a, b) in gamma.iter().zip(&gauss) {
        println!(
            "{:4}   {:.3e} / {:.3e}                     {:.3e} / {:.3e}",
            a.t, a.gaussian_mse_mean, a.gamma_mse_mean, b.gaussian_mse_mean, b.gamma_mse_mean
        );
    }
    let csv = dir.join("gdiff-fit-noise.csv");
    let svg = dir.join("gdiff-fit-noise.svg");
    write_curve(&gamma, &csv, Some(&svg), "fit error, gamma residuals")?;
    println!("wrote {} and {}", csv.display(), svg.display());
    Ok(())
}
