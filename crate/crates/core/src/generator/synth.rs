use serde::{Deserialize, Serialize};

use super::Mode;
use crate::error::{invalid, Result};
use crate::params::{conv_weight, Bound, ParamStore, LEAKY_GAIN, LEAKY_SLOPE};
use crate::pe::{PePyramid, ShiftMode};
use crate::tensor::{add_scaled_pe, Padding, SeededRng, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub mode: Mode,
    /// Number of scales `L`.
    pub levels: usize,
    pub base_h: usize,
    pub base_w: usize,
    /// Feature channels per scale, coarsest first. Each must be a multiple
    /// of 4 so the scale's encoding can be added to it.
    pub channels: Vec<usize>,
    pub latent_dim: usize,
    pub image_channels: usize,
    pub padding: Padding,
    pub noise: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            mode: Mode::MsPe,
            levels: 5,
            base_h: 4,
            base_w: 4,
            channels: vec![32; 5],
            latent_dim: 16,
            image_channels: 3,
            padding: Padding::Zero,
            noise: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return invalid("generator needs at least one scale");
        }
        if self.channels.len() != self.levels {
            return invalid(format!(
                "{} channel entries for {} scales",
                self.channels.len(),
                self.levels
            ));
        }
        if let Some(c) = self.channels.iter().find(|&&c| c == 0 || c % 4 != 0) {
            return invalid(format!("scale channel count {c} is not a positive multiple of 4"));
        }
        if self.base_h == 0 || self.base_w == 0 || self.latent_dim == 0 || self.image_channels == 0 {
            return invalid("base size, latent size and image channels must be positive");
        }
        Ok(())
    }

    pub fn output_size(&self) -> (usize, usize) {
        let f = 1 << (self.levels - 1);
        (self.base_h * f, self.base_w * f)
    }

    /// Default pyramid whose level channels match the feature channels.
    pub fn pyramid(&self) -> Result<PePyramid> {
        PePyramid::build(self.base_h, self.base_w, &self.channels)
    }
}

/// Per-call inputs: one latent `[N, D, 1, 1]` per scale, optional
/// single-channel noise maps `[N, 1, H_l, W_l]`, and the positional pyramid.
#[derive(Debug, Clone)]
pub struct SynthInputs {
    pub latents: Vec<Tensor>,
    pub noise: Option<Vec<Tensor>>,
    pub pyramid: Option<PePyramid>,
}

impl SynthInputs {
    pub fn batch(&self) -> usize {
        self.latents.first().map_or(0, |t| t.shape()[0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub params: ParamStore,
}

fn level_name(l: usize, what: &str) -> String {
    format!("level{l}.{what}")
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(seed);
        let mut params = ParamStore::new();
        let c0 = config.channels[0];
        if config.mode == Mode::Baseline {
            params.insert("const", rng.gaussian_tensor([1, c0, config.base_h, config.base_w]));
        }
        let mut cin = c0;
        for (l, &c) in config.channels.iter().enumerate() {
            params.insert(level_name(l, "conv.weight"), conv_weight(&mut rng, [c, cin, 3, 3], LEAKY_GAIN));
            params.insert(level_name(l, "conv.bias"), Tensor::zeros([1, 1, 1, c]));
            params.insert(
                level_name(l, "latent.weight"),
                conv_weight(&mut rng, [c, config.latent_dim, 1, 1], 1.0),
            );
            params.insert(level_name(l, "latent.bias"), Tensor::zeros([1, 1, 1, c]));
            if config.noise {
                params.insert(level_name(l, "noise_strength"), Tensor::full([1, c, 1, 1], 0.1));
            }
            if config.mode == Mode::MsPe {
                params.insert(level_name(l, "gamma"), Tensor::scalar(1.0));
            }
            cin = c;
        }
        params.insert(
            "to_image.weight",
            conv_weight(&mut rng, [config.image_channels, cin, 1, 1], 1.0),
        );
        params.insert("to_image.bias", Tensor::zeros([1, 1, 1, config.image_channels]));
        Ok(Generator { config, params })
    }

    /// Same latent at every scale.
    pub fn latents_from(&self, w: &Tensor) -> Vec<Tensor> {
        vec![w.clone(); self.config.levels]
    }

    /// Noise maps sized for feature planes whose coarsest scale is `(h0, w0)`.
    pub fn sample_noise(&self, batch: usize, h0: usize, w0: usize, rng: &mut SeededRng) -> Vec<Tensor> {
        (0..self.config.levels)
            .map(|l| rng.gaussian_tensor([batch, 1, h0 << l, w0 << l]))
            .collect()
    }

    /// Random latents and noise with the default pyramid.
    pub fn sample_inputs(&self, batch: usize, rng: &mut SeededRng) -> Result<SynthInputs> {
        let w = rng.gaussian_tensor([batch, self.config.latent_dim, 1, 1]);
        let noise = self
            .config
            .noise
            .then(|| self.sample_noise(batch, self.config.base_h, self.config.base_w, rng));
        let pyramid = if self.config.mode.uses_pe() {
            Some(self.config.pyramid()?)
        } else {
            None
        };
        Ok(SynthInputs {
            latents: self.latents_from(&w),
            noise,
            pyramid,
        })
    }

    fn seed_size(&self, inputs: &SynthInputs) -> Result<(usize, usize)> {
        if !self.config.mode.uses_pe() {
            return Ok((self.config.base_h, self.config.base_w));
        }
        let Some(pyr) = &inputs.pyramid else {
            return invalid(format!("{} generator needs a positional pyramid", self.config.mode));
        };
        let need = if self.config.mode == Mode::MsPe { self.config.levels } else { 1 };
        if pyr.len() < need {
            return invalid(format!("pyramid has {} levels, {} needed", pyr.len(), need));
        }
        let g = pyr.level(0);
        Ok((g.height(), g.width()))
    }

    /// Record the synthesis pass on `tape` with parameters `p`.
    pub fn forward_graph(&self, tape: &mut Tape, p: &Bound, inputs: &SynthInputs) -> Result<Var> {
        let cfg = &self.config;
        let n = inputs.batch();
        if n == 0 || inputs.latents.len() != cfg.levels {
            return invalid(format!(
                "expected {} non-empty latents, got {}",
                cfg.levels,
                inputs.latents.len()
            ));
        }
        let (h0, w0) = self.seed_size(inputs)?;
        let c0 = cfg.channels[0];
        let seed = match cfg.mode {
            Mode::Baseline => p.get("const")?,
            _ => {
                let g = inputs.pyramid.as_ref().expect("checked in seed_size").level(0);
                if g.channels() != c0 {
                    return invalid(format!("seed grid has {} channels, {c0} expected", g.channels()));
                }
                tape.constant(Tensor::from_pe(g))
            }
        };
        let mut h = tape.broadcast_to(seed, [n, c0, h0, w0])?;
        for l in 0..cfg.levels {
            if l > 0 {
                h = tape.upsample2x_blur(h, cfg.padding);
            }
            let w = p.get(&level_name(l, "conv.weight"))?;
            let b = p.get(&level_name(l, "conv.bias"))?;
            h = tape.conv2d(h, w, Some(b), cfg.padding, 1)?;

            let lat = &inputs.latents[l];
            if lat.shape() != [n, cfg.latent_dim, 1, 1] {
                return invalid(format!("latent {l} has shape {:?}", lat.shape()));
            }
            let lat = tape.constant(lat.clone());
            let lw = p.get(&level_name(l, "latent.weight"))?;
            let lb = p.get(&level_name(l, "latent.bias"))?;
            let bias = tape.conv2d(lat, lw, Some(lb), Padding::Zero, 1)?;
            h = tape.add(h, bias)?;

            if let (true, Some(noise)) = (cfg.noise, &inputs.noise) {
                let [_, _, hh, ww] = tape.shape(h);
                let eps = noise.get(l).filter(|e| e.shape() == [n, 1, hh, ww]);
                let Some(eps) = eps else {
                    return invalid(format!("noise map {l} must have shape {:?}", [n, 1, hh, ww]));
                };
                let e = tape.constant(eps.clone());
                let s = p.get(&level_name(l, "noise_strength"))?;
                let scaled = tape.mul(e, s)?;
                h = tape.add(h, scaled)?;
            }
            h = tape.leaky_relu(h, LEAKY_SLOPE);
            if cfg.mode == Mode::MsPe {
                let gamma = p.get(&level_name(l, "gamma"))?;
                let grid = inputs.pyramid.as_ref().expect("checked in seed_size").level(l);
                h = add_scaled_pe(tape, h, gamma, grid)?;
            }
        }
        let w = p.get("to_image.weight")?;
        let b = p.get("to_image.bias")?;
        tape.conv2d(h, w, Some(b), cfg.padding, 1)
    }
}

/// Image produced by the stack for `inputs`.
pub fn synth_forward(gen: &Generator, inputs: &SynthInputs) -> Result<Tensor> {
    let mut tape = Tape::new();
    let p = gen.params.bind(&mut tape, false);
    let out = gen.forward_graph(&mut tape, &p, inputs)?;
    let img = tape.value(out).clone();
    img.check_finite("generated image")?;
    Ok(img)
}

fn require_pe(gen: &Generator, what: &str) -> Result<PePyramid> {
    if !gen.config.mode.uses_pe() {
        return invalid(format!("{what} needs an encoding mode, generator is {}", gen.config.mode));
    }
    gen.config.pyramid()
}

/// Generate with every pyramid level shifted by `(dh, dw)` image pixels,
/// scaled per level. Other inputs are untouched.
pub fn shifted_generate(gen: &Generator, inputs: &SynthInputs, dh: f64, dw: f64) -> Result<Tensor> {
    if gen.config.mode != Mode::MsPe {
        return invalid(format!(
            "shifted generation is defined for ms-pe, generator is {}",
            gen.config.mode
        ));
    }
    let pyr = match &inputs.pyramid {
        Some(p) => p.clone(),
        None => gen.config.pyramid()?,
    };
    let shifted = SynthInputs {
        pyramid: Some(pyr.shift(dh, dw, ShiftMode::Circular)?),
        ..inputs.clone()
    };
    synth_forward(gen, &shifted)
}

/// Generate at image size `H2 x W2` by resizing every level of the pyramid.
/// Noise maps, when given, must already have the new level sizes.
pub fn multiscale_generate(gen: &Generator, inputs: &SynthInputs, height: usize, width: usize) -> Result<Tensor> {
    let default = require_pe(gen, "multi-scale generation")?;
    let pyr = inputs.pyramid.clone().unwrap_or(default);
    let full = pyr.len() == gen.config.levels;
    let native = if full {
        let g = pyr.level(pyr.len() - 1);
        (g.height(), g.width())
    } else {
        (0, 0)
    };
    let resized = if native == (height, width) {
        pyr
    } else if full {
        pyr.resize(height, width)?
    } else {
        // Only the seed level is present: size it directly.
        let f = 1usize << (gen.config.levels - 1);
        if !height.is_multiple_of(f) || !width.is_multiple_of(f) {
            return invalid(format!(
                "target {height}x{width} is not representable by a {}-level stack",
                gen.config.levels
            ));
        }
        pyr.truncate(1).map_levels(|_, g| g.resize(height / f, width / f))?
    };
    synth_forward(
        gen,
        &SynthInputs {
            pyramid: Some(resized),
            ..inputs.clone()
        },
    )
}

/// Spatial layout change applied consistently across scales. Segments and
/// margins are in image pixels; level `l` uses them scaled by `2^(l-L)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ExpansionPlan {
    Identity,
    Tile {
        h_segments: Vec<(f64, f64)>,
        w_segments: Vec<(f64, f64)>,
    },
    Extend {
        margin_h: f64,
        margin_w: f64,
    },
}

fn level_scaled(v: f64, f: f64, what: &str, level: usize) -> Result<f64> {
    let s = v * f;
    if (s - s.round()).abs() > 1e-9 {
        return invalid(format!(
            "{what} {v} becomes {s} at scale {level}, which is not a whole pixel"
        ));
    }
    Ok(s.round())
}

impl ExpansionPlan {
    /// Apply the plan to every level of `pyr`.
    pub fn apply(&self, pyr: &PePyramid) -> Result<PePyramid> {
        let n = pyr.len();
        pyr.map_levels(|idx, g| {
            let f = 2f64.powi(idx as i32 + 1 - n as i32);
            match self {
                ExpansionPlan::Identity => Ok(g.clone()),
                ExpansionPlan::Tile { h_segments, w_segments } => {
                    let scale = |segs: &[(f64, f64)]| -> Result<Vec<(f64, f64)>> {
                        segs.iter()
                            .map(|&(a, b)| {
                                Ok((
                                    level_scaled(a, f, "segment bound", idx + 1)?,
                                    level_scaled(b, f, "segment bound", idx + 1)?,
                                ))
                            })
                            .collect()
                    };
                    g.tile(&scale(h_segments)?, &scale(w_segments)?)
                }
                ExpansionPlan::Extend { margin_h, margin_w } => g.extend(
                    level_scaled(*margin_h, f, "margin", idx + 1)?,
                    level_scaled(*margin_w, f, "margin", idx + 1)?,
                ),
            }
        })
    }
}

/// Generate over a tiled or extended pyramid. Noise maps, when given, must
/// match the expanded level sizes.
pub fn expanded_generate(gen: &Generator, inputs: &SynthInputs, plan: &ExpansionPlan) -> Result<Tensor> {
    if gen.config.mode != Mode::MsPe {
        return invalid(format!("expansion is defined for ms-pe, generator is {}", gen.config.mode));
    }
    let pyr = match &inputs.pyramid {
        Some(p) => p.clone(),
        None => gen.config.pyramid()?,
    };
    synth_forward(
        gen,
        &SynthInputs {
            pyramid: Some(plan.apply(&pyr)?),
            ..inputs.clone()
        },
    )
}

/// Per-element standard deviation of the generated image across noise
/// draws, one draw per seed in `seeds`; latents and pyramid stay fixed.
pub fn noise_std_from_seeds(gen: &Generator, inputs: &SynthInputs, seeds: &[u64]) -> Result<Tensor> {
    if seeds.len() < 2 {
        return invalid("noise probe needs at least two instances");
    }
    let n = inputs.batch();
    let (h0, w0) = gen.seed_size(inputs)?;
    let mut images = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let noise = gen
            .config
            .noise
            .then(|| gen.sample_noise(n, h0, w0, &mut SeededRng::new(s)));
        images.push(synth_forward(
            gen,
            &SynthInputs {
                noise,
                ..inputs.clone()
            },
        )?);
    }
    let k = images.len() as f64;
    let shape = images[0].shape();
    let mut out = Tensor::zeros(shape);
    for (e, o) in out.data_mut().iter_mut().enumerate() {
        let mean = images.iter().map(|im| im.data()[e] as f64).sum::<f64>() / k;
        let var = images
            .iter()
            .map(|im| (im.data()[e] as f64 - mean).powi(2))
            .sum::<f64>()
            / (k - 1.0);
        *o = var.sqrt() as f32;
    }
    Ok(out)
}

/// Standard deviation map over `n_instances` noise draws derived from `seed`.
pub fn noise_std_probe(gen: &Generator, inputs: &SynthInputs, n_instances: usize, seed: u64) -> Result<Tensor> {
    let mut rng = SeededRng::new(seed);
    let seeds: Vec<u64> = (0..n_instances).map(|_| rng.next_u64()).collect();
    noise_std_from_seeds(gen, inputs, &seeds)
}

/// Output index range `[lo, hi)` along one axis whose values never read a
/// zero-padded sample, for a stack whose coarsest scale has `base` pixels.
/// Empty ranges come back as `lo == hi`.
pub fn padding_free_interval(base: usize, levels: usize) -> (usize, usize) {
    let shrink = |(lo, hi): (usize, usize)| {
        if hi >= lo + 2 {
            (lo + 1, hi - 1)
        } else {
            (lo, lo)
        }
    };
    let mut r = shrink((0, base));
    for _ in 1..levels {
        r = (2 * r.0, 2 * r.1);
        r = shrink(shrink(r));
    }
    r
}
