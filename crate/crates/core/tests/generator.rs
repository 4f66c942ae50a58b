use mspe::dataset::{synth_glyphs_with, GlyphConfig};
use mspe::generator::{
    expanded_generate, multiscale_generate, noise_std_probe, synth_forward, train_generator, ExpansionPlan, Generator,
    GeneratorConfig, GeneratorTrainConfig, Mode, SynthInputs,
};
use mspe::tensor::{Padding, SeededRng, Tensor};

fn small(mode: Mode, padding: Padding) -> Generator {
    let cfg = GeneratorConfig {
        mode,
        levels: 3,
        channels: vec![8; 3],
        latent_dim: 4,
        padding,
        ..GeneratorConfig::default()
    };
    Generator::new(cfg, 11).unwrap()
}

/// Concatenate a tensor with itself along the width.
fn twice_wide(t: &Tensor) -> Tensor {
    let [n, c, h, w] = t.shape();
    let mut out = Tensor::zeros([n, c, h, 2 * w]);
    for b in 0..n {
        for ch in 0..c {
            for i in 0..h {
                for j in 0..2 * w {
                    out.set(b, ch, i, j, t.at(b, ch, i, j % w));
                }
            }
        }
    }
    out
}

#[test]
fn native_size_multiscale_is_bit_identical() {
    for padding in [Padding::Zero, Padding::Circular] {
        let g = small(Mode::MsPe, padding);
        let inputs = g.sample_inputs(3, &mut SeededRng::new(4)).unwrap();
        let (h, w) = g.config.output_size();
        let a = multiscale_generate(&g, &inputs, h, w).unwrap();
        let b = synth_forward(&g, &inputs).unwrap();
        assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn multiscale_sizes_follow_the_target() {
    let g = small(Mode::MsPe, Padding::Circular);
    let mut inputs = g.sample_inputs(1, &mut SeededRng::new(2)).unwrap();
    inputs.noise = Some(g.sample_noise(1, 6, 4, &mut SeededRng::new(3)));
    let out = multiscale_generate(&g, &inputs, 24, 16).unwrap();
    assert_eq!(out.shape(), [1, 3, 24, 16]);
    out.check_finite("resized output").unwrap();
    assert!(multiscale_generate(&small(Mode::Baseline, Padding::Zero), &inputs, 24, 16).is_err());
}

#[test]
fn width_doubling_tile_repeats_exactly() {
    let g = small(Mode::MsPe, Padding::Circular);
    let (h, w) = g.config.output_size();
    let mut inputs = g.sample_inputs(2, &mut SeededRng::new(6)).unwrap();
    inputs.noise = inputs.noise.map(|maps| maps.iter().map(twice_wide).collect());
    let plan = ExpansionPlan::Tile {
        h_segments: vec![(0.0, h as f64)],
        w_segments: vec![(0.0, w as f64), (0.0, w as f64)],
    };
    let out = expanded_generate(&g, &inputs, &plan).unwrap();
    assert_eq!(out.shape(), [2, 3, h, 2 * w]);
    let left = out.crop_wrapped(0, 0, h, w);
    let right = out.crop_wrapped(0, w as isize, h, w);
    assert!(left.max_abs_diff(&right) <= 1e-6);
}

#[test]
fn training_lowers_the_reconstruction_loss() {
    let mut g = small(Mode::MsPe, Padding::Circular);
    let data = synth_glyphs_with(40, 5, &GlyphConfig { canvas: 16, patch: 8, glyph: 7, offset: (0, 0), color: true }).unwrap();
    let cfg = GeneratorTrainConfig { steps: 150, batch: 4, lr: 3e-3, seed: 2, candidates: 2, random_resize: vec![] };
    let losses = train_generator(&mut g, &data, &cfg, |_, _| {}).unwrap();
    assert_eq!(losses.len(), 150);
    let head = losses[..15].iter().sum::<f64>() / 15.0;
    let tail = losses[135..].iter().sum::<f64>() / 15.0;
    assert!(tail < 0.7 * head, "loss {head} -> {tail}");

    let bad = GeneratorTrainConfig { random_resize: vec![10], ..cfg.clone() };
    assert!(train_generator(&mut g, &data, &bad, |_, _| {}).is_err());
    let mut base = small(Mode::Baseline, Padding::Circular);
    let resize = GeneratorTrainConfig { random_resize: vec![16], ..cfg };
    assert!(train_generator(&mut base, &data, &resize, |_, _| {}).is_err());
}

#[test]
fn noise_probe_measures_only_noise() {
    let g = small(Mode::SsPe, Padding::Zero);
    let inputs = g.sample_inputs(2, &mut SeededRng::new(1)).unwrap();
    let std = noise_std_probe(&g, &inputs, 20, 9).unwrap();
    assert_eq!(std.shape(), [2, 3, 16, 16]);
    assert!(std.data().iter().all(|&v| v >= 0.0) && std.mean() > 0.0);
    assert_eq!(std, noise_std_probe(&g, &inputs, 20, 9).unwrap());

    let mut quiet = g.clone();
    quiet.config.noise = false;
    let flat = noise_std_probe(&quiet, &SynthInputs { noise: None, ..inputs }, 20, 9).unwrap();
    assert_eq!(flat.mean(), 0.0);
}
