//! Draw from the Gamma sampler and compare the empirical moments with the
//! closed form `(k theta, k theta^2, 2 / sqrt(k))`, including shapes below 1.

use gdiff::distributions::Gamma;
use gdiff::rng::RngStream;
use gdiff::stats::moment_estimate;

fn main() -> gdiff::Result<()> {
    let mut rng = RngStream::new(7);
    for (k, theta) in [(0.05, 2.0), (0.7, 1.0), (3.0, 0.5), (400.0, 0.01)] {
        let g = Gamma::new(k, theta)?;
        let xs: Vec<f64> = (0..200_000).map(|_| g.sample(&mut rng)).collect();
        let m = moment_estimate(&xs)?;
        println!("Gamma(k = {k}, theta = {theta})");
        println!("  mean     {:.5} +- {:.5}  (exact {:.5})", m.mean, m.se_mean, g.mean());
        println!("  variance {:.5} +- {:.5}  (exact {:.5})", m.variance, m.se_variance, g.variance());
        println!("  skewness {:.4} +- {:.4}  (exact {:.4})", m.skewness, m.se_skewness, g.skewness());
    }
    Ok(())
}
