use mspe::diffusion::{forward_step, make_beta_schedule, p_sample, p_sample_from_eps, q_sample, stochastic_reconstruct, train_step, BetaSchedule, DenoiserTrainer};
use mspe::generator::{Denoiser, DenoiserConfig, Mode};
use mspe::tensor::{AdamConfig, SeededRng, Tensor};
use proptest::prelude::*;

const SAMPLES: usize = 10_000;

fn moments(t: &Tensor) -> (f64, f64) {
    let n = t.len() as f64;
    let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = t.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn iterated_forward_steps_match_the_closed_form_marginal() {
    let s = make_beta_schedule(200, 1e-3, 0.05).unwrap();
    let mut rng = SeededRng::new(2024);
    let shape = [1, 1, 100, SAMPLES / 100];
    for (x0v, t) in [(0.8f32, 1usize), (0.8, 10), (-0.5, 60), (1.0, 200)] {
        let x0 = Tensor::full(shape, x0v);
        let mut x = x0.clone();
        for k in 1..=t {
            x = forward_step(&x, k, &s, &rng.gaussian_tensor(shape)).unwrap();
        }
        let ab = s.alpha_bar(t);
        let (mu, var) = (ab.sqrt() * x0v as f64, 1.0 - ab);
        let (m, v) = moments(&x);
        let n = SAMPLES as f64;
        assert!((m - mu).abs() <= 3.0 * (var / n).sqrt(), "t={t}: mean {m} vs {mu}");
        assert!((v - var).abs() <= 3.0 * var * (2.0 / (n - 1.0)).sqrt(), "t={t}: var {v} vs {var}");

        let direct = q_sample(&x0, t, &s, &rng.gaussian_tensor(shape)).unwrap();
        let (m2, v2) = moments(&direct);
        assert!((m2 - mu).abs() <= 3.0 * (var / n).sqrt());
        assert!((v2 - var).abs() <= 3.0 * var * (2.0 / (n - 1.0)).sqrt());
    }
}

#[test]
fn schedule_invariants_are_exact() {
    for (steps, b1, bt) in [(1000, 1e-4, 0.02), (200, 1e-3, 0.05), (7, 0.1, 0.3)] {
        let s = make_beta_schedule(steps, b1, bt).unwrap();
        assert_eq!(s.betas().len(), steps);
        assert_eq!(s.beta(1), b1);
        assert_eq!(s.beta(steps), bt);
        assert!(s.betas().windows(2).all(|w| w[0] <= w[1]));
        let mut prod = 1.0;
        for t in 1..=steps {
            assert_eq!(s.alpha(t), 1.0 - s.beta(t));
            prod *= s.alpha(t);
            assert_eq!(s.alpha_bar(t), prod);
            assert_eq!(s.sigma(t), s.beta(t).sqrt());
        }
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bars().iter().all(|&a| a > 0.0 && a < 1.0));
    }
}

proptest! {
    #[test]
    fn reverse_step_matches_scalar_formula(x in -3.0f32..3.0, e in -3.0f32..3.0, z in -3.0f32..3.0, t in 1usize..=50) {
        let s = make_beta_schedule(50, 1e-3, 0.05).unwrap();
        let out = p_sample_from_eps(&Tensor::scalar(x), t, &Tensor::scalar(e), &s, &Tensor::scalar(z)).unwrap().item() as f64;
        let (b, a, ab) = (s.beta(t), s.alpha(t), s.alpha_bar(t));
        let sigma = if t > 1 { b.sqrt() } else { 0.0 };
        let want = (x as f64 - b / (1.0 - ab).sqrt() * e as f64) / a.sqrt() + sigma * z as f64;
        prop_assert!((out - want).abs() <= 1e-6);
    }

    #[test]
    fn marginal_at_t_is_affine(x in -2.0f32..2.0, z in -2.0f32..2.0, t in 0usize..=30) {
        let s = make_beta_schedule(30, 1e-3, 0.1).unwrap();
        let out = q_sample(&Tensor::scalar(x), t, &s, &Tensor::scalar(z)).unwrap().item() as f64;
        let want = if t == 0 { x as f64 } else { s.alpha_bar(t).sqrt() * x as f64 + (1.0 - s.alpha_bar(t)).sqrt() * z as f64 };
        prop_assert!((out - want).abs() <= 1e-6);
    }
}

fn tiny(mode: Mode) -> Denoiser {
    Denoiser::new(
        DenoiserConfig {
            mode,
            size: 8,
            channels: [4, 4, 4],
            time_dim: 8,
            time_hidden: 8,
            timesteps: 20,
            ..DenoiserConfig::default()
        },
        1,
    )
    .unwrap()
}

#[test]
fn learned_reverse_step_uses_the_denoiser_prediction() {
    let d = tiny(Mode::MsPe);
    let pyr = d.config.pyramid().unwrap();
    let s = BetaSchedule::from_config(&mspe::diffusion::ScheduleConfig { timesteps: 20, beta_start: 1e-3, beta_end: 0.05 }).unwrap();
    let mut r = SeededRng::new(5);
    let x = r.gaussian_tensor([2, 1, 8, 8]);
    let z = r.gaussian_tensor([2, 1, 8, 8]);
    let eps = d.forward(&x, 7, Some(&pyr)).unwrap();
    let a = p_sample(&x, 7, &d, Some(&pyr), &s, &z).unwrap();
    let b = p_sample_from_eps(&x, 7, &eps, &s, &z).unwrap();
    assert_eq!(a, b);
}

#[test]
fn reconstruction_is_seeded_and_finite() {
    let d = tiny(Mode::Baseline);
    let s = make_beta_schedule(20, 1e-3, 0.05).unwrap();
    let x = SeededRng::new(8).gaussian_tensor([2, 1, 8, 8]);
    let a = stochastic_reconstruct(&x, 10, &d, None, &s, 3).unwrap();
    assert_eq!(a, stochastic_reconstruct(&x, 10, &d, None, &s, 3).unwrap());
    assert_ne!(a, stochastic_reconstruct(&x, 10, &d, None, &s, 4).unwrap());
    a.check_finite("reconstruction").unwrap();
    assert!(stochastic_reconstruct(&x, 21, &d, None, &s, 3).is_err());
}

#[test]
fn short_training_reduces_the_loss() {
    let mut d = tiny(Mode::MsPe);
    let s = make_beta_schedule(20, 1e-3, 0.05).unwrap();
    let mut tr = DenoiserTrainer::new(&d, AdamConfig { lr: 3e-3, ..AdamConfig::default() }, 4).unwrap();
    let data = SeededRng::new(9).gaussian_tensor([8, 1, 8, 8]).map(|v| (v * 0.3).clamp(-1.0, 1.0));
    let losses: Vec<f64> = (0..200).map(|_| train_step(&mut d, &data, &s, &mut tr).unwrap()).collect();
    let head = losses[..20].iter().sum::<f64>() / 20.0;
    let tail = losses[180..].iter().sum::<f64>() / 20.0;
    assert!(tail < 0.8 * head, "loss {head} -> {tail}");
}
