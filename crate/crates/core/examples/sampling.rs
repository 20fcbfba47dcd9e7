//! Train Gaussian and Gamma models briefly, then sample with the full
//! ancestral chain and with 10 subsampled steps, reporting the Wasserstein-1
//! distance to the generating mixture.

use gdiff::diffusion::{sample_chain, ChainSpec, NoiseKind, Sampler, Sigma};
use gdiff::rng::RngStream;
use gdiff::schedule::{subsample_timesteps, SubsampleStrategy};
use gdiff::training::{denormalize, mixture_w1, train, TrainConfig};

fn main() -> gdiff::Result<()> {
    let rng = RngStream::new(11);
    for kind in [NoiseKind::Gaussian, NoiseKind::Gamma] {
        let mut config = TrainConfig::toy(kind);
        config.steps = 4000;
        let data = config.dataset.load(&mut config.streams().0)?;
        let out = train(&config, &data, |_, _| Ok(()))?;
        let t_max = out.sched.len();
        let ancestral = match kind {
            NoiseKind::Gaussian => Sampler::Ddpm,
            NoiseKind::Gamma => Sampler::Ddgm,
        };
        let full: Vec<usize> = (1..=t_max).collect();
        let short = subsample_timesteps(t_max, 10, SubsampleStrategy::Uniform)?;
        for (label, sampler, steps) in [
            ("ancestral, all steps", ancestral, &full),
            ("ancestral, 10 steps", ancestral, &short),
            ("ddim, 10 steps", Sampler::Ddim, &short),
        ] {
            let spec = ChainSpec {
                sched: &out.sched,
                params: out.params.as_ref(),
                kind,
                sampler,
                steps,
                sigma: Sigma::SqrtBeta,
                record_trace: false,
            };
            let trace = sample_chain(&out.model, &spec, &[5000, 1], &mut rng.split(steps.len() as u64))?;
            let x = denormalize(&trace.final_state, data.normalization())?;
            println!("{kind:?} {label:22} W1 = {:.4}", mixture_w1(x.data())?);
        }
    }
    Ok(())
}
