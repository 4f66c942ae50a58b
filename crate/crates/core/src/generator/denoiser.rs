use serde::{Deserialize, Serialize};

use super::Mode;
use crate::error::{invalid, Result};
use crate::params::{conv_weight, Bound, ParamStore, LEAKY_GAIN, LEAKY_SLOPE};
use crate::pe::{encode_axis, PePyramid};
use crate::tensor::{add_scaled_pe, Padding, SeededRng, Tape, Tensor, Var};

/// Three-resolution encoder/decoder predicting the noise in `x_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub mode: Mode,
    /// Square input side; must be divisible by 4.
    pub size: usize,
    pub image_channels: usize,
    /// Channels at full, half and quarter resolution.
    pub channels: [usize; 3],
    /// Width of the sinusoidal time code (a multiple of 2).
    pub time_dim: usize,
    pub time_hidden: usize,
    pub padding: Padding,
    /// Largest accepted time step.
    pub timesteps: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            mode: Mode::MsPe,
            size: 32,
            image_channels: 1,
            channels: [32, 32, 16],
            time_dim: 32,
            time_hidden: 64,
            padding: Padding::Zero,
            timesteps: 200,
        }
    }
}

// (block name, output-channel slot, encoding level)
// Encoding levels index the pyramid coarsest first: 0 = quarter, 2 = full.
const BLOCKS: [(&str, usize, Option<usize>); 6] = [
    ("in", 0, Some(2)),
    ("down1", 1, Some(1)),
    ("down2", 2, Some(0)),
    ("mid", 2, None),
    ("up1", 1, Some(1)),
    ("up2", 0, Some(2)),
];

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || !self.size.is_multiple_of(4) {
            return invalid(format!("denoiser size {} must be a positive multiple of 4", self.size));
        }
        if let Some(c) = self.channels.iter().find(|&&c| c == 0 || c % 4 != 0) {
            return invalid(format!("denoiser channel count {c} is not a positive multiple of 4"));
        }
        if self.time_dim == 0 || !self.time_dim.is_multiple_of(2) || self.time_hidden == 0 {
            return invalid("time code width must be a positive even number");
        }
        if self.image_channels == 0 || self.timesteps == 0 {
            return invalid("image channels and timesteps must be positive");
        }
        Ok(())
    }

    /// Pyramid over quarter, half and full resolution.
    pub fn pyramid(&self) -> Result<PePyramid> {
        let q = self.size / 4;
        let [c0, c1, c2] = self.channels;
        PePyramid::build(q, q, &[c2, c1, c0])
    }

    fn injects(&self, block: &str) -> bool {
        match self.mode {
            Mode::Baseline => false,
            Mode::SsPe => block == "down2",
            Mode::MsPe => block != "mid",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub params: ParamStore,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(seed);
        let mut p = ParamStore::new();
        let ch = config.channels;
        let th = config.time_hidden;
        p.insert("time.weight", conv_weight(&mut rng, [th, config.time_dim, 1, 1], LEAKY_GAIN));
        p.insert("time.bias", Tensor::zeros([1, 1, 1, th]));
        let inputs = [
            config.image_channels,
            ch[0],
            ch[1],
            ch[2],
            ch[2] + ch[1],
            ch[1] + ch[0],
        ];
        for ((name, out, _), cin) in BLOCKS.iter().zip(inputs) {
            let c = ch[*out];
            p.insert(format!("{name}.weight"), conv_weight(&mut rng, [c, cin, 3, 3], LEAKY_GAIN));
            p.insert(format!("{name}.bias"), Tensor::zeros([1, 1, 1, c]));
            p.insert(format!("{name}.time.weight"), conv_weight(&mut rng, [c, th, 1, 1], 1.0));
            p.insert(format!("{name}.time.bias"), Tensor::zeros([1, 1, 1, c]));
            if config.injects(name) {
                p.insert(format!("{name}.gamma"), Tensor::scalar(1.0));
            }
        }
        // Small output init keeps early predictions near zero.
        p.insert(
            "out.weight",
            conv_weight(&mut rng, [config.image_channels, ch[0], 3, 3], 0.1),
        );
        p.insert("out.bias", Tensor::zeros([1, 1, 1, config.image_channels]));
        Ok(Denoiser { config, params: p })
    }

    /// Sinusoidal code of each step, `[N, time_dim, 1, 1]`.
    pub fn time_code(&self, ts: &[usize]) -> Result<Tensor> {
        let d = self.config.time_dim / 2;
        let mut data = Vec::with_capacity(ts.len() * self.config.time_dim);
        for &t in ts {
            if t == 0 || t > self.config.timesteps {
                return invalid(format!("time step {t} outside 1..={}", self.config.timesteps));
            }
            data.extend(encode_axis(t as f64, d)?.into_iter().map(|v| v as f32));
        }
        Tensor::new([ts.len(), self.config.time_dim, 1, 1], data)
    }

    /// Record the forward pass with a per-sample time step.
    pub fn forward_graph(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x: Var,
        ts: &[usize],
        pyramid: Option<&PePyramid>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let [n, c, h, w] = tape.shape(x);
        if [c, h, w] != [cfg.image_channels, cfg.size, cfg.size] || ts.len() != n {
            return invalid(format!(
                "denoiser expects [N, {}, {}, {}] with one step per sample, got {:?} and {} steps",
                cfg.image_channels,
                cfg.size,
                cfg.size,
                [n, c, h, w],
                ts.len()
            ));
        }
        let needs_pe = cfg.mode != Mode::Baseline;
        let pyr = match (needs_pe, pyramid) {
            (false, _) => None,
            (true, Some(pyr)) if pyr.len() == 3 => Some(pyr),
            (true, _) => return invalid("denoiser with encoding needs a three-level pyramid"),
        };

        let tc = tape.constant(self.time_code(ts)?);
        let temb = tape.conv2d(tc, p.get("time.weight")?, Some(p.get("time.bias")?), Padding::Zero, 1)?;
        let temb = tape.leaky_relu(temb, LEAKY_SLOPE);

        let block = |tape: &mut Tape, name: &str, input: Var, level: Option<usize>| -> Result<Var> {
            let wv = p.get(&format!("{name}.weight"))?;
            let bv = p.get(&format!("{name}.bias"))?;
            let mut h = tape.conv2d(input, wv, Some(bv), cfg.padding, 1)?;
            let tw = p.get(&format!("{name}.time.weight"))?;
            let tb = p.get(&format!("{name}.time.bias"))?;
            let tbias = tape.conv2d(temb, tw, Some(tb), Padding::Zero, 1)?;
            h = tape.add(h, tbias)?;
            h = tape.leaky_relu(h, LEAKY_SLOPE);
            if let (Some(level), Some(pyr), true) = (level, pyr, cfg.injects(name)) {
                let gamma = p.get(&format!("{name}.gamma"))?;
                h = add_scaled_pe(tape, h, gamma, pyr.level(level))?;
            }
            Ok(h)
        };

        let levels: Vec<Option<usize>> = BLOCKS.iter().map(|b| b.2).collect();
        let full = block(tape, "in", x, levels[0])?;
        let half_in = tape.avg_pool2x(full)?;
        let half = block(tape, "down1", half_in, levels[1])?;
        let quarter_in = tape.avg_pool2x(half)?;
        let quarter = block(tape, "down2", quarter_in, levels[2])?;
        let mid = block(tape, "mid", quarter, levels[3])?;
        let up = tape.upsample2x_blur(mid, cfg.padding);
        let cat = tape.concat_channels(up, half)?;
        let half_up = block(tape, "up1", cat, levels[4])?;
        let up = tape.upsample2x_blur(half_up, cfg.padding);
        let cat = tape.concat_channels(up, full)?;
        let full_up = block(tape, "up2", cat, levels[5])?;
        tape.conv2d(full_up, p.get("out.weight")?, Some(p.get("out.bias")?), cfg.padding, 1)
    }

    /// Predicted noise for `x_t` at a single step `t`.
    pub fn forward(&self, x_t: &Tensor, t: usize, pyramid: Option<&PePyramid>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let x = tape.constant(x_t.clone());
        let ts = vec![t; x_t.shape()[0]];
        let out = self.forward_graph(&mut tape, &p, x, &ts, pyramid)?;
        let eps = tape.value(out).clone();
        eps.check_finite("predicted noise")?;
        Ok(eps)
    }
}
