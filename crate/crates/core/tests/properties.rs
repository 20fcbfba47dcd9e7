//! Randomized properties of schedules, Gamma parameters and checkpoints.

use gdiff::denoiser::{Checkpoint, Denoiser, MlpConfig, ReferenceMlp};
use gdiff::diffusion::NoiseKind;
use gdiff::rng::RngStream;
use gdiff::schedule::{linear_schedule, GammaParams, NoiseSchedule, ScheduleFile};
use gdiff::tensor::Tensor;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gamma_params_reproduce_step_and_cumulative_variance(
        betas in prop::collection::vec(1e-6f64..0.3, 1..400),
        log_theta0 in -4.0f64..0.0,
    ) {
        let sched = NoiseSchedule::from_betas(betas).unwrap();
        let p = GammaParams::new(&sched, 10f64.powf(log_theta0)).unwrap();
        for t in 1..=sched.len() {
            let th2 = p.theta(t).powi(2);
            prop_assert!((p.k(t) * th2 / sched.beta(t) - 1.0).abs() < 1e-9);
            prop_assert!((p.k_bar(t) * th2 / (1.0 - sched.alpha_bar(t)) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn alpha_bar_is_decreasing_and_in_unit_interval(t in 2usize..2000, lo in 1e-6f64..1e-3, span in 1e-4f64..0.05) {
        let sched = linear_schedule(t, lo, lo + span).unwrap();
        prop_assert_eq!(sched.alpha_bar(0), 1.0);
        for s in 1..=t {
            prop_assert!(sched.alpha_bar(s) < sched.alpha_bar(s - 1));
            prop_assert!(sched.alpha_bar(s) > 0.0);
        }
    }

    #[test]
    fn schedule_file_round_trips(betas in prop::collection::vec(1e-6f64..0.3, 1..100), theta0 in 1e-4f64..1.0) {
        let sched = NoiseSchedule::from_betas(betas).unwrap();
        let file = ScheduleFile::full(&sched, Some(theta0)).unwrap();
        let text = serde_json::to_string(&file).unwrap();
        let back: ScheduleFile = serde_json::from_str(&text).unwrap();
        let (s2, p2) = back.to_schedule().unwrap();
        prop_assert_eq!(s2.hash(), sched.hash());
        prop_assert_eq!(p2.unwrap().theta0(), theta0);
    }

    #[test]
    fn checkpoint_preserves_predictions(seed in any::<u64>(), t in 1usize..=20) {
        let sched = linear_schedule(20, 1e-4, 0.2).unwrap();
        let cfg = MlpConfig { data_dim: 2, hidden: vec![8, 8], time_dim: 4, t_max: 20 };
        let model = ReferenceMlp::new(cfg, &mut RngStream::new(seed)).unwrap();
        let ck = Checkpoint::new(&model, &sched, NoiseKind::Gaussian, None, 0).unwrap();
        let back = Checkpoint::from_reader(ck.to_bytes().unwrap().as_slice()).unwrap().model().unwrap();
        let x = Tensor::new(vec![3, 2], vec![0.1, -0.4, 2.0, 0.0, -1.5, 0.7]).unwrap();
        prop_assert_eq!(model.eval(&x, t).unwrap(), back.eval(&x, t).unwrap());
    }
}
