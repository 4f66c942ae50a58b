//! Non-adversarial fitting of the synthesis stack.
//!
//! Each class gets a fixed latent. For every target image the trainer draws
//! `candidates` noise sets, keeps the one whose output is closest, and takes
//! a gradient step on that pair (implicit maximum-likelihood style). With one
//! candidate this is plain latent-conditioned regression.

use serde::{Deserialize, Serialize};

use super::synth::{Generator, SynthInputs};
use crate::dataset::BiasedCanvasSet;
use crate::error::{invalid, Result};
use crate::tensor::{AdamConfig, SeededRng, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f32,
    pub seed: u64,
    /// Noise draws per target; the closest one is trained on.
    pub candidates: usize,
    /// Image sizes to sample from each step (empty = native size only).
    pub random_resize: Vec<usize>,
}

impl Default for GeneratorTrainConfig {
    fn default() -> Self {
        GeneratorTrainConfig {
            steps: 1000,
            batch: 8,
            lr: 2e-3,
            seed: 0,
            candidates: 4,
            random_resize: Vec::new(),
        }
    }
}

/// Fixed per-class latents `[classes, D, 1, 1]` derived from `seed`.
pub fn class_latents(classes: usize, dim: usize, seed: u64) -> Tensor {
    SeededRng::with_stream(seed, 0x1a7e).gaussian_tensor([classes, dim, 1, 1])
}

fn gather_latents(table: &Tensor, labels: &[u8]) -> Result<Tensor> {
    let parts: Vec<Tensor> = labels.iter().map(|&l| table.sample(l as usize)).collect();
    Tensor::stack(&parts)
}

/// Fit `gen` to `data`, calling `on_step(step, loss)` after every update.
/// Returns the per-step losses.
pub fn train_generator(
    gen: &mut Generator,
    data: &BiasedCanvasSet,
    cfg: &GeneratorTrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    let gc = gen.config.clone();
    let (out_h, out_w) = gc.output_size();
    let [_, dc, dh, dw] = data.images.shape();
    if (dc, dh, dw) != (gc.image_channels, out_h, out_w) {
        return invalid(format!(
            "dataset images are {dc}x{dh}x{dw}, generator makes {}x{out_h}x{out_w}",
            gc.image_channels
        ));
    }
    if cfg.batch == 0 || cfg.candidates == 0 {
        return invalid("batch and candidate count must be positive");
    }
    let factor = 1usize << (gc.levels - 1);
    if !cfg.random_resize.is_empty() {
        if !gc.mode.uses_pe() {
            return invalid("random resizing needs an encoding mode");
        }
        if let Some(s) = cfg.random_resize.iter().find(|&&s| s == 0 || s % factor != 0) {
            return invalid(format!("resize target {s} is not a multiple of {factor}"));
        }
    }
    let table = class_latents(10, gc.latent_dim, cfg.seed);
    let base_pyr = if gc.mode.uses_pe() { Some(gc.pyramid()?) } else { None };
    let mut rng = SeededRng::new(cfg.seed);
    let mut state = gen.params.optimizer(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch).map(|_| rng.below(data.len())).collect();
        let target = data.batch(&idx)?;
        let labels: Vec<u8> = idx.iter().map(|&i| data.labels[i]).collect();
        let w = gather_latents(&table, &labels)?;

        let (size_h, size_w) = match cfg.random_resize.as_slice() {
            [] => (out_h, out_w),
            sizes => {
                let s = sizes[rng.below(sizes.len())];
                (s, s)
            }
        };
        let pyramid = match &base_pyr {
            Some(p) if (size_h, size_w) != (out_h, out_w) => Some(p.resize(size_h, size_w)?),
            other => other.clone(),
        };
        let (h0, w0) = (size_h / factor, size_w / factor);

        let noise = if gc.noise {
            Some(pick_noise(gen, &w, &target, pyramid.as_ref(), (h0, w0), cfg.candidates, &mut rng)?)
        } else {
            None
        };
        let inputs = SynthInputs {
            latents: gen.latents_from(&w),
            noise,
            pyramid,
        };

        let mut tape = Tape::new();
        let p = gen.params.bind(&mut tape, true);
        let mut out = gen.forward_graph(&mut tape, &p, &inputs)?;
        if (size_h, size_w) != (out_h, out_w) {
            out = tape.resize_bilinear(out, out_h, out_w)?;
        }
        let t = tape.constant(target);
        let loss = tape.mse(out, t)?;
        let value = tape.scalar_value(loss);
        if !value.is_finite() {
            tape.validate()?;
        }
        tape.backward(loss)?;
        gen.params.apply_adam(&tape, &p, &mut state)?;
        losses.push(value);
        on_step(step, value);
    }
    Ok(losses)
}

/// Per-sample choice among `k` noise draws, by output distance to the target.
fn pick_noise(
    gen: &Generator,
    w: &Tensor,
    target: &Tensor,
    pyramid: Option<&crate::pe::PePyramid>,
    (h0, w0): (usize, usize),
    k: usize,
    rng: &mut SeededRng,
) -> Result<Vec<Tensor>> {
    let n = w.shape()[0];
    let draws: Vec<Vec<Tensor>> = (0..k).map(|_| gen.sample_noise(n, h0, w0, rng)).collect();
    if k == 1 {
        return Ok(draws.into_iter().next().expect("one draw"));
    }
    let (th, tw) = (target.shape()[2], target.shape()[3]);
    let mut best = vec![(f64::INFINITY, 0usize); n];
    for (c, noise) in draws.iter().enumerate() {
        let inputs = SynthInputs {
            latents: gen.latents_from(w),
            noise: Some(noise.clone()),
            pyramid: pyramid.cloned(),
        };
        let mut img = super::synth_forward(gen, &inputs)?;
        if (img.shape()[2], img.shape()[3]) != (th, tw) {
            img = crate::tensor::kernels::resize_bilinear(&img, th, tw);
        }
        for (b, slot) in best.iter_mut().enumerate() {
            let d: f64 = img
                .sample(b)
                .data()
                .iter()
                .zip(target.sample(b).data())
                .map(|(&x, &y)| ((x - y) as f64).powi(2))
                .sum();
            if d < slot.0 {
                *slot = (d, c);
            }
        }
    }
    let levels = draws[0].len();
    (0..levels)
        .map(|l| {
            let parts: Vec<Tensor> = best.iter().enumerate().map(|(b, &(_, c))| draws[c][l].sample(b)).collect();
            Tensor::stack(&parts)
        })
        .collect()
}
