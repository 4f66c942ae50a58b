//! Discrete-time Gaussian diffusion with a linear noise schedule and
//! noise-predicting reverse process.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::generator::Denoiser;
use crate::pe::PePyramid;
use crate::tensor::{AdamConfig, OptimizerState, SeededRng, Tape, Tensor};

/// Per-step constants, stored 1-based: index `t` of each array is step `t`,
/// and index 0 holds the `t = 0` convention (`alpha_bar = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct BetaSchedule {
    steps: usize,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

/// Linear betas from `beta1` to `beta_t` inclusive.
pub fn make_beta_schedule(steps: usize, beta1: f64, beta_t: f64) -> Result<BetaSchedule> {
    if steps == 0 {
        return invalid("schedule needs at least one step");
    }
    if !(beta1 > 0.0 && beta1 <= beta_t && beta_t < 1.0) {
        return invalid(format!("need 0 < beta1 <= betaT < 1, got {beta1} and {beta_t}"));
    }
    let mut betas = vec![0.0];
    for k in 0..steps {
        let f = if steps == 1 { 0.0 } else { k as f64 / (steps - 1) as f64 };
        betas.push(beta1 + (beta_t - beta1) * f);
    }
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = vec![1.0];
    for t in 1..=steps {
        alpha_bars.push(alpha_bars[t - 1] * alphas[t]);
    }
    Ok(BetaSchedule {
        steps,
        betas,
        alphas,
        alpha_bars,
    })
}

impl BetaSchedule {
    pub fn from_config(c: &ScheduleConfig) -> Result<Self> {
        make_beta_schedule(c.timesteps, c.beta_start, c.beta_end)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return invalid(format!("time step {t} outside 1..={}", self.steps));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Reverse-step standard deviation; the variance equals `beta_t`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.betas[t].sqrt()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas[1..]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars[1..]
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return invalid(format!("{what}: shapes {:?} and {:?} differ", a.shape(), b.shape()));
    }
    Ok(())
}

fn affine(a: &Tensor, ca: f64, b: &Tensor, cb: f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (ca * x as f64 + cb * y as f64) as f32)
        .collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

/// One forward noising step: `sqrt(1 - beta_t) x_prev + sqrt(beta_t) noise`.
pub fn forward_step(x_prev: &Tensor, t: usize, sched: &BetaSchedule, noise: &Tensor) -> Result<Tensor> {
    sched.check(t)?;
    same_shape(x_prev, noise, "forward_step")?;
    let b = sched.beta(t);
    Ok(affine(x_prev, (1.0 - b).sqrt(), noise, b.sqrt()))
}

/// Closed-form marginal `sqrt(abar_t) x0 + sqrt(1 - abar_t) noise`. `t = 0`
/// returns `x0`.
pub fn q_sample(x0: &Tensor, t: usize, sched: &BetaSchedule, noise: &Tensor) -> Result<Tensor> {
    if t > sched.steps {
        return invalid(format!("time step {t} outside 0..={}", sched.steps));
    }
    same_shape(x0, noise, "q_sample")?;
    if t == 0 {
        return Ok(x0.clone());
    }
    let ab = sched.alpha_bar(t);
    Ok(affine(x0, ab.sqrt(), noise, (1.0 - ab).sqrt()))
}

/// Reverse step from a given noise prediction:
/// `(x_t - beta_t / sqrt(1 - abar_t) eps) / sqrt(alpha_t) + sigma_t noise`,
/// with the noise term dropped at `t = 1`.
pub fn p_sample_from_eps(x_t: &Tensor, t: usize, eps: &Tensor, sched: &BetaSchedule, noise: &Tensor) -> Result<Tensor> {
    sched.check(t)?;
    same_shape(x_t, eps, "p_sample")?;
    same_shape(x_t, noise, "p_sample")?;
    let a = sched.alpha(t);
    let coef = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let sigma = if t > 1 { sched.sigma(t) } else { 0.0 };
    let data = x_t
        .data()
        .iter()
        .zip(eps.data())
        .zip(noise.data())
        .map(|((&x, &e), &z)| ((x as f64 - coef * e as f64) / a.sqrt() + sigma * z as f64) as f32)
        .collect();
    Tensor::new(x_t.shape(), data)
}

/// Reverse step using the denoiser's noise prediction.
pub fn p_sample(
    x_t: &Tensor,
    t: usize,
    denoiser: &Denoiser,
    pyramid: Option<&PePyramid>,
    sched: &BetaSchedule,
    noise: &Tensor,
) -> Result<Tensor> {
    sched.check(t)?;
    let eps = denoiser.forward(x_t, t, pyramid)?;
    p_sample_from_eps(x_t, t, &eps, sched, noise)
}

/// Optimizer plus the stream of random draws for training.
pub struct DenoiserTrainer {
    pub state: OptimizerState,
    pub rng: SeededRng,
    pub pyramid: Option<PePyramid>,
}

impl DenoiserTrainer {
    pub fn new(denoiser: &Denoiser, adam: AdamConfig, seed: u64) -> Result<Self> {
        let pyramid = if denoiser.config.mode.uses_pe() {
            Some(denoiser.config.pyramid()?)
        } else {
            None
        };
        Ok(DenoiserTrainer {
            state: denoiser.params.optimizer(adam),
            rng: SeededRng::new(seed),
            pyramid,
        })
    }
}

/// One Adam step on the noise-prediction MSE at uniformly drawn time steps.
/// Returns the loss before the update.
pub fn train_step(
    denoiser: &mut Denoiser,
    x0: &Tensor,
    sched: &BetaSchedule,
    trainer: &mut DenoiserTrainer,
) -> Result<f64> {
    let n = x0.shape()[0];
    let ts: Vec<usize> = (0..n).map(|_| 1 + trainer.rng.below(sched.steps)).collect();
    let eps = trainer.rng.gaussian_tensor(x0.shape());
    let mut xt = Vec::with_capacity(n);
    for (b, &t) in ts.iter().enumerate() {
        xt.push(q_sample(&x0.sample(b), t, sched, &eps.sample(b))?);
    }
    let xt = Tensor::stack(&xt)?;

    let mut tape = Tape::new();
    let p = denoiser.params.bind(&mut tape, true);
    let x = tape.constant(xt);
    let pred = denoiser.forward_graph(&mut tape, &p, x, &ts, trainer.pyramid.as_ref())?;
    let target = tape.constant(eps);
    let loss = tape.mse(pred, target)?;
    let value = tape.scalar_value(loss);
    if !value.is_finite() {
        tape.validate()?;
    }
    tape.backward(loss)?;
    denoiser.params.apply_adam(&tape, &p, &mut trainer.state)?;
    Ok(value)
}

/// Encode `x0` to step `t_enc` with fresh noise, then run the learned reverse
/// chain back to step 0. The pyramid may be shifted to request content at a
/// translated position.
pub fn stochastic_reconstruct(
    x0: &Tensor,
    t_enc: usize,
    denoiser: &Denoiser,
    pyramid: Option<&PePyramid>,
    sched: &BetaSchedule,
    seed: u64,
) -> Result<Tensor> {
    sched.check(t_enc)?;
    let mut rng = SeededRng::new(seed);
    let noise = rng.gaussian_tensor(x0.shape());
    let mut x = q_sample(x0, t_enc, sched, &noise)?;
    for t in (1..=t_enc).rev() {
        let z = if t > 1 {
            rng.gaussian_tensor(x0.shape())
        } else {
            Tensor::zeros(x0.shape())
        };
        x = p_sample(&x, t, denoiser, pyramid, sched, &z)?;
    }
    Ok(x)
}
