//! Toy synthesis stack and the diffusion denoiser that consume positional
//! pyramids.

mod denoiser;
mod synth;
mod train;

pub use denoiser::{Denoiser, DenoiserConfig};
pub use synth::{
    expanded_generate, multiscale_generate, noise_std_from_seeds, noise_std_probe, padding_free_interval,
    shifted_generate, synth_forward, ExpansionPlan, Generator, GeneratorConfig, SynthInputs,
};
pub use train::{class_latents, train_generator, GeneratorTrainConfig};

use serde::{Deserialize, Serialize};

/// Where positional information comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Learned constant input, no explicit encoding.
    Baseline,
    /// Encoding replaces the constant input only.
    SsPe,
    /// Encoding at the input and added at every scale with a learned scale.
    MsPe,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::SsPe => "ss-pe",
            Mode::MsPe => "ms-pe",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "baseline" => Some(Mode::Baseline),
            "ss-pe" => Some(Mode::SsPe),
            "ms-pe" => Some(Mode::MsPe),
            _ => None,
        }
    }

    pub fn uses_pe(self) -> bool {
        self != Mode::Baseline
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
