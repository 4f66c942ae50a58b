//! Named parameter sets and their binding to a tape.

use std::collections::BTreeMap;

use crate::error::{invalid, Result};
use crate::tensor::{adam_step, AdamConfig, OptimizerState, SeededRng, Shape, Tape, Tensor, Var};

/// Parameters keyed by name. Iteration order is the sorted name order, which
/// fixes the layout of optimizer state and checkpoints.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

/// Tape variables for every parameter of a store.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        match self.vars.get(name) {
            Some(&v) => Ok(v),
            None => invalid(format!("missing parameter '{name}'")),
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        match self.tensors.get(name) {
            Some(t) => Ok(t),
            None => invalid(format!("missing parameter '{name}'")),
        }
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.tensors.get_mut(name) {
            Some(t) => Ok(t),
            None => invalid(format!("missing parameter '{name}'")),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Put every parameter on the tape, as leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    pub fn optimizer(&self, config: AdamConfig) -> OptimizerState {
        OptimizerState::new(config, self.tensors.values())
    }

    /// Adam update from the gradients recorded on `tape`. Parameters the loss
    /// did not reach get a zero gradient.
    pub fn apply_adam(&mut self, tape: &Tape, bound: &Bound, state: &mut OptimizerState) -> Result<()> {
        let grads: Vec<Tensor> = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = bound.get(k)?;
                Ok(tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            })
            .collect::<Result<_>>()?;
        for (g, (k, _)) in grads.iter().zip(&self.tensors) {
            g.check_finite(&format!("gradient of '{k}'"))?;
        }
        let grad_refs: Vec<&Tensor> = grads.iter().collect();
        let mut params: Vec<&mut Tensor> = self.tensors.values_mut().collect();
        adam_step(&mut params, &grad_refs, state)
    }
}

/// He-style normal init for a conv weight `[Cout, Cin, k, k]`, scaled by `gain`.
pub(crate) fn conv_weight(rng: &mut SeededRng, shape: Shape, gain: f32) -> Tensor {
    let fan_in = (shape[1] * shape[2] * shape[3]) as f32;
    let std = gain / fan_in.sqrt();
    rng.gaussian_tensor(shape).map(|v| v * std)
}

/// `sqrt(2 / (1 + slope^2))` for leaky ReLU with slope 0.2.
pub(crate) const LEAKY_GAIN: f32 = 1.386_750_5;

pub(crate) const LEAKY_SLOPE: f32 = 0.2;
