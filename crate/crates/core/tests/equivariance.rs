use mspe::eval::generate_shifted;
use mspe::generator::{padding_free_interval, shifted_generate, synth_forward, Generator, GeneratorConfig, Mode, SynthInputs};
use mspe::params::ParamStore;
use mspe::tensor::{conv2d, upsample2x_blur, ConvParams, Padding, SeededRng, Tensor};
use proptest::prelude::*;

fn config(mode: Mode, padding: Padding, levels: usize, base: usize) -> GeneratorConfig {
    GeneratorConfig {
        mode,
        levels,
        base_h: base,
        base_w: base,
        channels: vec![8; levels],
        latent_dim: 4,
        image_channels: 3,
        padding,
        noise: true,
    }
}

/// Replace every parameter with fresh Gaussian values so that nothing
/// (noise strengths, gains, biases) sits at a special initial value.
fn randomize(params: &mut ParamStore, seed: u64) {
    let mut rng = SeededRng::new(seed);
    for (_, t) in params.iter_mut() {
        let fan = t.len().max(1) as f32;
        *t = rng.gaussian_tensor(t.shape()).map(|v| v * (3.0 / fan.sqrt()).min(0.5));
    }
}

fn random_generator(mode: Mode, padding: Padding, levels: usize, base: usize, seed: u64) -> Generator {
    let mut g = Generator::new(config(mode, padding, levels, base), seed).unwrap();
    randomize(&mut g.params, seed + 1);
    g
}

/// Roll level `l`'s noise by the image shift scaled to that level.
fn rolled_noise(inputs: &SynthInputs, levels: usize, dh: isize, dw: isize) -> SynthInputs {
    let f = 1isize << (levels - 1);
    let noise = inputs.noise.as_ref().map(|maps| {
        maps.iter()
            .enumerate()
            .map(|(l, m)| {
                let s = 1isize << l;
                m.roll(dh * s / f, dw * s / f)
            })
            .collect()
    });
    SynthInputs {
        noise,
        ..inputs.clone()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn circular_conv_commutes_with_roll(h in 3usize..10, w in 3usize..10, cin in 1usize..4, cout in 1usize..4,
                                        k in prop::sample::select(vec![1usize, 3]), sh in -12isize..12, sw in -12isize..12,
                                        seed in 0u64..1000) {
        let mut r = SeededRng::new(seed);
        let x = r.gaussian_tensor([2, cin, h, w]);
        let p = ConvParams::new(r.gaussian_tensor([cout, cin, k, k]), r.gaussian_tensor([1, 1, 1, cout]), Padding::Circular, 1).unwrap();
        let a = conv2d(&x.roll(sh, sw), &p).unwrap();
        let b = conv2d(&x, &p).unwrap().roll(sh, sw);
        prop_assert!(a.max_abs_diff(&b) <= 1e-6);
    }

    #[test]
    fn circular_upsample_commutes_with_roll(h in 2usize..8, w in 2usize..8, sh in -8isize..8, sw in -8isize..8, seed in 0u64..1000) {
        let x = SeededRng::new(seed).gaussian_tensor([1, 2, h, w]);
        let a = upsample2x_blur(&x.roll(sh, sw), Padding::Circular);
        let b = upsample2x_blur(&x, Padding::Circular).roll(2 * sh, 2 * sw);
        prop_assert!(a.max_abs_diff(&b) <= 1e-6);
    }

    #[test]
    fn circular_ms_pe_stack_is_shift_equivariant(k in -3isize..4, j in -3isize..4, seed in 0u64..50) {
        let g = random_generator(Mode::MsPe, Padding::Circular, 3, 4, seed);
        let inputs = g.sample_inputs(2, &mut SeededRng::new(seed + 100)).unwrap();
        let (dh, dw) = (4 * k, 4 * j);
        let base = synth_forward(&g, &inputs).unwrap();
        let moved = rolled_noise(&inputs, 3, dh, dw);
        let shifted = shifted_generate(&g, &moved, dh as f64, dw as f64).unwrap();
        prop_assert!(shifted.max_abs_diff(&base.roll(dh, dw)) <= 1e-6);
    }
}

#[test]
fn circular_equivariance_for_every_mode() {
    for mode in [Mode::Baseline, Mode::SsPe, Mode::MsPe] {
        let g = random_generator(mode, Padding::Circular, 4, 4, 9);
        let inputs = g.sample_inputs(2, &mut SeededRng::new(3)).unwrap();
        let base = synth_forward(&g, &inputs).unwrap();
        for (dh, dw) in [(8, 0), (0, 16), (-8, 24)] {
            let moved = rolled_noise(&inputs, 4, dh, dw);
            let out = generate_shifted(&g, &moved, dh as f64, dw as f64).unwrap();
            let e = out.max_abs_diff(&base.roll(dh, dw));
            assert!(e <= 1e-6, "{mode} shift ({dh},{dw}): {e}");
        }
        // Without noise the shift alone carries the content.
        let quiet = SynthInputs { noise: None, ..inputs.clone() };
        let mut silent = g.clone();
        silent.config.noise = false;
        let base = synth_forward(&silent, &quiet).unwrap();
        let out = generate_shifted(&silent, &quiet, 16.0, 8.0).unwrap();
        assert!(out.max_abs_diff(&base.roll(16, 8)) <= 1e-6, "{mode} without noise");
    }
}

#[test]
fn zero_padding_agrees_inside_and_deviates_at_the_boundary() {
    let (levels, base) = (3, 16);
    let (lo, hi) = padding_free_interval(base, levels);
    assert!(hi > lo + 8, "interior ({lo}, {hi}) too small to test");
    for seed in [1u64, 2, 3] {
        let g = random_generator(Mode::MsPe, Padding::Zero, levels, base, seed);
        let inputs = g.sample_inputs(1, &mut SeededRng::new(seed + 7)).unwrap();
        let out = synth_forward(&g, &inputs).unwrap();
        let size = out.shape()[2];
        let d = 4isize;
        let moved = rolled_noise(&inputs, levels, d, d);
        let shifted = shifted_generate(&g, &moved, d as f64, d as f64).unwrap();
        let expect = out.roll(d, d);
        let inside = |i: usize| (lo..hi).contains(&i) && (lo..hi).contains(&((i as isize - d) as usize));
        let (mut interior, mut boundary) = (0f32, 0f32);
        for c in 0..3 {
            for i in 0..size {
                for j in 0..size {
                    let e = (shifted.at(0, c, i, j) - expect.at(0, c, i, j)).abs();
                    if inside(i) && inside(j) {
                        interior = interior.max(e);
                    } else {
                        boundary = boundary.max(e);
                    }
                }
            }
        }
        assert!(interior <= 1e-5, "seed {seed}: interior deviation {interior}");
        assert!(boundary > 1e-3, "seed {seed}: boundary deviation only {boundary}");
    }
}

#[test]
fn empty_interior_for_the_default_stack() {
    assert_eq!(padding_free_interval(4, 5).0, padding_free_interval(4, 5).1);
    let (lo, hi) = padding_free_interval(16, 3);
    assert!(lo > 0 && hi < 64 && lo < hi);
}

#[test]
fn fractional_baseline_shift_is_not_a_roll() {
    let g = random_generator(Mode::Baseline, Padding::Circular, 3, 4, 5);
    let inputs = g.sample_inputs(1, &mut SeededRng::new(2)).unwrap();
    let quarter = generate_shifted(&g, &inputs, 1.0, 0.0).unwrap();
    let base = synth_forward(&g, &inputs).unwrap();
    assert!(quarter.max_abs_diff(&base.roll(1, 0)) > 1e-4);
    let full: Tensor = generate_shifted(&g, &inputs, 16.0, 0.0).unwrap();
    assert!(full.max_abs_diff(&base) <= 1e-6);
}
