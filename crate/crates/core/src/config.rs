//! Resolved run configuration shared by training, generation and reports.

use serde::{Deserialize, Serialize};

use crate::dataset::GlyphConfig;
use crate::diffusion::ScheduleConfig;
use crate::error::{invalid, Result};
use crate::generator::{DenoiserConfig, GeneratorConfig, GeneratorTrainConfig, Mode};
use crate::tensor::Padding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Generator,
    Denoiser,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    pub mode: Mode,
    pub seed: u64,
    pub deterministic: bool,

    pub levels: usize,
    pub base: usize,
    pub channels: Vec<usize>,
    pub latent_dim: usize,
    pub padding: Padding,
    pub noise: bool,
    pub denoiser_size: usize,
    pub denoiser_channels: Vec<usize>,

    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,

    pub lr: f32,
    pub batch: usize,
    pub steps: usize,
    pub candidates: usize,
    pub random_resize: Vec<usize>,

    pub dataset: DatasetSource,
    pub idx_images: Option<String>,
    pub idx_labels: Option<String>,
    pub dataset_size: usize,
    /// Canvas, patch and glyph sides; unset values follow the model kind.
    pub canvas: Option<usize>,
    pub patch: Option<usize>,
    pub glyph: Option<usize>,
    pub placement: (usize, usize),

    pub output: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelKind::Generator,
            mode: Mode::MsPe,
            seed: 0,
            deterministic: true,
            levels: 5,
            base: 4,
            channels: vec![32; 5],
            latent_dim: 16,
            padding: Padding::Zero,
            noise: true,
            denoiser_size: 32,
            denoiser_channels: vec![32, 32, 16],
            timesteps: 200,
            beta_start: 1e-3,
            beta_end: 0.05,
            lr: 2e-3,
            batch: 16,
            steps: 1000,
            candidates: 4,
            random_resize: Vec::new(),
            dataset: DatasetSource::Synthetic,
            idx_images: None,
            idx_labels: None,
            dataset_size: 2000,
            canvas: None,
            patch: None,
            glyph: None,
            placement: (0, 0),
            output: "out".into(),
        }
    }
}

impl RunConfig {
    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            mode: self.mode,
            levels: self.levels,
            base_h: self.base,
            base_w: self.base,
            channels: self.channels.clone(),
            latent_dim: self.latent_dim,
            image_channels: 3,
            padding: self.padding,
            noise: self.noise,
        }
    }

    pub fn denoiser_config(&self) -> Result<DenoiserConfig> {
        let [a, b, c] = self.denoiser_channels[..] else {
            return invalid(format!(
                "denoiser_channels needs 3 entries, got {}",
                self.denoiser_channels.len()
            ));
        };
        Ok(DenoiserConfig {
            mode: self.mode,
            size: self.denoiser_size,
            image_channels: 1,
            channels: [a, b, c],
            padding: self.padding,
            timesteps: self.timesteps,
            ..DenoiserConfig::default()
        })
    }

    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            timesteps: self.timesteps,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
        }
    }

    pub fn glyph_config(&self) -> GlyphConfig {
        let (canvas, color) = match self.model {
            ModelKind::Generator => (self.generator_config().output_size().0, true),
            ModelKind::Denoiser => (self.denoiser_size, false),
        };
        let canvas = self.canvas.unwrap_or(canvas);
        let patch = self.patch.unwrap_or(canvas / 2);
        GlyphConfig {
            canvas,
            patch,
            glyph: self.glyph.unwrap_or(patch * 7 / 8),
            offset: self.placement,
            color,
        }
    }

    pub fn generator_train(&self) -> GeneratorTrainConfig {
        GeneratorTrainConfig {
            steps: self.steps,
            batch: self.batch,
            lr: self.lr,
            seed: self.seed,
            candidates: self.candidates,
            random_resize: self.random_resize.clone(),
        }
    }

    /// Check everything that can be checked without touching files.
    pub fn validate(&self) -> Result<()> {
        match self.model {
            ModelKind::Generator => self.generator_config().validate()?,
            ModelKind::Denoiser => {
                self.denoiser_config()?.validate()?;
                crate::diffusion::BetaSchedule::from_config(&self.schedule())?;
            }
        }
        let g = self.glyph_config();
        if g.glyph == 0 || g.glyph > g.patch || g.patch > g.canvas {
            return invalid(format!(
                "glyph {} / patch {} / canvas {} must satisfy 0 < glyph <= patch <= canvas",
                g.glyph, g.patch, g.canvas
            ));
        }
        if g.offset.0 + g.patch > g.canvas || g.offset.1 + g.patch > g.canvas {
            return invalid(format!("placement {:?} puts the patch off the canvas", g.offset));
        }
        if self.model == ModelKind::Generator && g.canvas != self.generator_config().output_size().0 {
            return invalid("generator canvas must equal the generator output size");
        }
        if self.batch == 0 || self.dataset_size == 0 || self.candidates == 0 {
            return invalid("batch, dataset_size and candidates must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return invalid(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.dataset == DatasetSource::Idx && (self.idx_images.is_none() || self.idx_labels.is_none()) {
            return invalid("idx dataset needs idx_images and idx_labels");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        let d = RunConfig {
            model: ModelKind::Denoiser,
            ..RunConfig::default()
        };
        d.validate().unwrap();
        let g = d.glyph_config();
        assert_eq!((g.canvas, g.patch, g.glyph), (32, 16, 14));
        let g = RunConfig::default().glyph_config();
        assert_eq!((g.canvas, g.patch, g.glyph), (64, 32, 28));
    }

    #[test]
    fn bad_channels_rejected() {
        let c = RunConfig {
            channels: vec![32, 32, 6, 16, 16],
            ..RunConfig::default()
        };
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("multiple of 4"), "{e}");
    }

    #[test]
    fn json_round_trip() {
        let c = RunConfig::default();
        let v = serde_json::to_value(&c).unwrap();
        assert_eq!(serde_json::from_value::<RunConfig>(v).unwrap(), c);
    }
}
