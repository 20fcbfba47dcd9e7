//! Train a Gamma noise predictor on the 1-d two-mode mixture and save a
//! checkpoint. Pass the step count as the first argument (default 3000).

use gdiff::denoiser::Checkpoint;
use gdiff::diffusion::NoiseKind;
use gdiff::training::{train, TrainConfig};

fn main() -> gdiff::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let mut config = TrainConfig::toy(NoiseKind::Gamma);
    config.steps = steps;
    config.loss_window = 500.min(steps.max(1));
    let data = config.dataset.load(&mut config.streams().0)?;

    let outcome = train(&config, &data, |step, _| {
        if step % 1000 == 0 {
            println!("step {step}");
        }
        Ok(())
    })?;
    println!(
        "L1 loss: first {w} steps {:.4}, last {w} steps {:.4}",
        outcome.initial_loss(config.loss_window).unwrap_or(f64::NAN),
        outcome.final_loss(config.loss_window).unwrap_or(f64::NAN),
        w = config.loss_window
    );

    let mut ck = Checkpoint::new(&outcome.model, &outcome.sched, config.kind, config.theta0, steps)?;
    ck.header.normalization = Some(data.normalization().to_vec());
    let path = std::env::temp_dir().join("gdiff-mixture-gamma.ckpt");
    ck.save(&path)?;
    println!("checkpoint written to {}", path.display());
    Ok(())
}
