//! Central finite-difference check for tape gradients.
//!
//! The numeric side only runs forward passes on fresh tapes; it never touches
//! the backward code it is checking.

use super::{SeededRng, Tape, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Which input tensor this row describes.
    pub input: usize,
    pub max_abs_err: f64,
    /// `|analytic - numeric|_2 / max(|analytic|_2, |numeric|_2)`.
    pub rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.rel_err < tol
    }
}

fn objective(tape: &Tape, out: Var, projection: Option<&Tensor>) -> f64 {
    match projection {
        None => tape.scalar_value(out),
        Some(r) => tape
            .value(out)
            .data()
            .iter()
            .zip(r.data())
            .map(|(&y, &w)| y as f64 * w as f64)
            .sum(),
    }
}

/// Compare backward-mode gradients of `f` against central differences with
/// step `step`, perturbing every element of every input. Non-scalar outputs
/// are reduced through a fixed random projection.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, step: f32) -> Result<Vec<GradCheckReport>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let out_shape = tape.shape(out);
    let projection = (out_shape != [1, 1, 1, 1]).then(|| SeededRng::new(0x5eed).gaussian_tensor(out_shape));
    match &projection {
        None => tape.backward(out)?,
        Some(r) => tape.backward_with(out, r.clone())?,
    }
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.constant(x.clone())).collect();
        let o = f(&mut t, &vs)?;
        Ok(objective(&t, o, projection.as_ref()))
    };

    let mut reports = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let mut num = vec![0f64; input.len()];
        for (e, slot) in num.iter_mut().enumerate() {
            let orig = input.data()[e];
            work[i].data_mut()[e] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[e] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[e] = orig;
            // Divide by the step actually realised in f32.
            let h = ((orig + step) as f64) - ((orig - step) as f64);
            *slot = (plus - minus) / h;
        }
        let a = analytic[i].data();
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        let mut max_abs: f64 = 0.0;
        for (&av, &nv) in a.iter().zip(&num) {
            let d = av as f64 - nv;
            diff2 += d * d;
            a2 += (av as f64).powi(2);
            n2 += nv * nv;
            max_abs = max_abs.max(d.abs());
        }
        let denom = a2.sqrt().max(n2.sqrt());
        let rel = if denom == 0.0 { 0.0 } else { diff2.sqrt() / denom };
        reports.push(GradCheckReport {
            input: i,
            max_abs_err: max_abs,
            rel_err: rel,
        });
    }
    Ok(reports)
}
