use super::Tensor;
use crate::error::{invalid, Result};

/// Adam hyper-parameters. `beta1 = 0` turns the first moment into the raw
/// gradient.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
            .unzip();
        OptimizerState {
            config,
            step: 0,
            first_moment: m,
            second_moment: v,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[&Tensor], state: &mut OptimizerState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return invalid(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.first_moment.len()
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first_moment[i].shape() {
            return invalid(format!(
                "adam: slot {i} shapes differ: param {:?}, grad {:?}",
                p.shape(),
                g.shape()
            ));
        }
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
            let mhat = *mv / bc1;
            let vhat = *vv / bc2;
            *pv -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::full([1, 1, 2, 2], 0.3);
        let g = Tensor::zeros([1, 1, 2, 2]);
        let mut st = OptimizerState::new(AdamConfig::default(), [&p]);
        for _ in 0..5 {
            adam_step(&mut [&mut p], &[&g], &mut st).unwrap();
        }
        assert_eq!(p, Tensor::full([1, 1, 2, 2], 0.3));
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        for g0 in [0.37f32, -2.5] {
            let mut p = Tensor::scalar(1.0);
            let g = Tensor::scalar(g0);
            let mut st = OptimizerState::new(cfg, [&p]);
            adam_step(&mut [&mut p], &[&g], &mut st).unwrap();
            // m_hat = g, v_hat = g^2 after bias correction
            let expect = 1.0 - 0.01 * g0 / (g0.abs() + 1e-8);
            assert!((p.item() - expect).abs() < 1e-7);
        }
    }

    #[test]
    fn beta1_zero_keeps_raw_gradient() {
        let mut p = Tensor::full([1, 2, 1, 1], 0.0);
        let mut st = OptimizerState::new(AdamConfig::default(), [&p]);
        for k in 1..4 {
            let g = Tensor::new([1, 2, 1, 1], vec![k as f32, -0.5 * k as f32]).unwrap();
            adam_step(&mut [&mut p], &[&g], &mut st).unwrap();
            assert_eq!(st.first_moment[0], g);
        }
    }

    #[test]
    fn mismatched_slots_error() {
        let mut p = Tensor::zeros([1, 1, 1, 2]);
        let g = Tensor::zeros([1, 1, 1, 3]);
        let mut st = OptimizerState::new(AdamConfig::default(), [&p]);
        assert!(adam_step(&mut [&mut p], &[&g], &mut st).is_err());
    }
}
